//! Concave hulls of 2D point sets and polygon rasterization.

use crate::error::AppError;
use crate::tensor::Mask2D;

pub const DEFAULT_HULL_K: usize = 16;

/// Largest neighborhood tried before falling back to the convex hull.
const MAX_HULL_K: usize = 64;

type P = [f64; 2];

fn sub(a: P, b: P) -> P {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross(a: P, b: P) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn orient(a: P, b: P, c: P) -> f64 {
    cross(sub(b, a), sub(c, a))
}

fn dist2(a: P, b: P) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1]
}

fn on_segment(a: P, b: P, p: P) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Closed-segment intersection test.
pub fn segments_intersect(a: P, b: P, c: P, d: P) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// Sorted, deduplicated copy of `points`.
fn unique(points: &[P]) -> Vec<P> {
    let mut v: Vec<P> = points
        .iter()
        .copied()
        .filter(|p| p[0].is_finite() && p[1].is_finite())
        .collect();
    v.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    v.dedup();
    v
}

/// Convex hull by monotone chain, counter-clockwise in a y-up frame.
pub fn convex_hull(points: &[P]) -> Vec<P> {
    let pts = unique(points);
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<P> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && orient(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<P> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && orient(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Even-odd point-in-polygon test; boundary points count as inside.
pub fn point_in_polygon(poly: &[P], p: P) -> bool {
    let n = poly.len();
    let mut inside = false;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if orient(a, b, p) == 0.0 && on_segment(a, b, p) {
            return true;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Counter-clockwise angle from `from` to `to` in `(0, 2π]`.
fn ccw_angle(from: P, to: P) -> f64 {
    let a = cross(from, to).atan2(from[0] * to[0] + from[1] * to[1]);
    if a <= 0.0 {
        a + std::f64::consts::TAU
    } else {
        a
    }
}

/// One k-nearest-neighbor hull attempt over unique points.
fn knn_hull(pts: &[P], k: usize) -> Option<Vec<P>> {
    let n = pts.len();
    let first = (0..n).min_by(|&a, &b| pts[a][1].total_cmp(&pts[b][1]).then(pts[a][0].total_cmp(&pts[b][0])))?;
    let mut used = vec![false; n];
    used[first] = true;
    let mut hull = vec![first];
    let mut current = first;
    let mut back: P = [-1.0, 0.0];
    loop {
        let closing_allowed = hull.len() >= 3;
        let mut cand: Vec<usize> = (0..n)
            .filter(|&i| !used[i] || (closing_allowed && i == first && i != current))
            .collect();
        if cand.is_empty() {
            break;
        }
        cand.sort_by(|&a, &b| {
            dist2(pts[current], pts[a])
                .total_cmp(&dist2(pts[current], pts[b]))
                .then(a.cmp(&b))
        });
        cand.truncate(k);
        cand.sort_by(|&a, &b| {
            ccw_angle(back, sub(pts[a], pts[current]))
                .total_cmp(&ccw_angle(back, sub(pts[b], pts[current])))
                .then(a.cmp(&b))
        });
        let m = hull.len();
        let next = cand.into_iter().find(|&c| {
            let closes = c == first;
            // edges hull[j]..hull[j+1]; skip the one ending at `current`,
            // and the first edge when closing the ring
            (0..m.saturating_sub(2)).all(|j| {
                if closes && j == 0 {
                    return true;
                }
                !segments_intersect(pts[current], pts[c], pts[hull[j]], pts[hull[j + 1]])
            })
        })?;
        if next == first {
            break;
        }
        used[next] = true;
        back = sub(pts[current], pts[next]);
        hull.push(next);
        current = next;
    }
    if hull.len() < 3 {
        return None;
    }
    let poly: Vec<P> = hull.iter().map(|&i| pts[i]).collect();
    // the closing edge must not cross the rest of the ring
    let m = poly.len();
    for j in 1..m.saturating_sub(2) {
        if segments_intersect(poly[m - 1], poly[0], poly[j], poly[j + 1]) {
            return None;
        }
    }
    if pts.iter().all(|&p| point_in_polygon(&poly, p)) {
        Some(poly)
    } else {
        None
    }
}

/// Simple polygon enclosing `points`: the k-nearest-neighbor concave hull
/// with `k` grown until it succeeds, else the convex hull.
pub fn concave_hull(points: &[P], k: usize) -> Result<Vec<P>, AppError> {
    let pts = unique(points);
    if pts.len() < 3 {
        return Err(AppError::TooFewPoints(pts.len()));
    }
    if pts.len() == 3 {
        return Ok(pts);
    }
    let kmax = MAX_HULL_K.min(pts.len() - 1);
    let mut kk = k.max(3).min(pts.len() - 1);
    while kk <= kmax {
        if let Some(h) = knn_hull(&pts, kk) {
            return Ok(h);
        }
        kk += 1;
    }
    let h = convex_hull(&pts);
    if h.len() < 3 {
        return Err(AppError::TooFewPoints(h.len()));
    }
    Ok(h)
}

/// Pixels whose centers lie inside `poly` (boundary included).
pub fn rasterize_polygon(poly: &[P], height: usize, width: usize) -> Mask2D {
    let mut m = Mask2D::new(height, width);
    if poly.len() < 3 {
        return m;
    }
    let n = poly.len();
    for y in 0..height {
        let py = y as f64;
        let mut xs: Vec<f64> = Vec::new();
        for i in 0..n {
            let a = poly[i];
            let b = poly[(i + 1) % n];
            if (a[1] > py) != (b[1] > py) {
                xs.push(a[0] + (py - a[1]) / (b[1] - a[1]) * (b[0] - a[0]));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let x0 = pair[0].ceil().max(0.0);
            let x1 = pair[1].floor().min(width as f64 - 1.0);
            let mut x = x0;
            while x <= x1 {
                m.set(y, x as usize, true);
                x += 1.0;
            }
        }
        // centers exactly on the boundary
        for x in 0..width {
            if !m.get(y, x) && point_in_polygon(poly, [x as f64, py]) {
                let on_edge = (0..n).any(|i| {
                    let (a, b) = (poly[i], poly[(i + 1) % n]);
                    orient(a, b, [x as f64, py]) == 0.0 && on_segment(a, b, [x as f64, py])
                });
                if on_edge {
                    m.set(y, x, true);
                }
            }
        }
    }
    m
}

/// True when no two non-adjacent edges of the closed ring intersect.
pub fn is_simple(poly: &[P]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}
