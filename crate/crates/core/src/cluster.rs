//! Still/moving separation from the epipolar consistency of optical flow.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index::sample;

use crate::camera::{Camera, Intrinsics};
use crate::error::ClusterError;
use crate::render::{render, RenderSettings};
use crate::rng::rng_stream;
use crate::scene::{Cluster, GaussianPointSet};
use crate::tensor::{Mask2D, Tensor};

const IRLS_ROUNDS: usize = 5;
const LMEDS_TRIALS: usize = 128;
/// Median correspondence flow (px) under which the camera counts as static.
const STATIC_FLOW_PX: f64 = 0.25;

/// Rank-2 matrix with unit Frobenius norm such that `x2ᵀ F x1 = 0` for
/// corresponding homogeneous points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FundamentalMatrix(Matrix3<f64>);

impl FundamentalMatrix {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Rank-2 projection and unit Frobenius norm.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut s = svd.singular_values;
        s[2] = 0.0;
        let n = (s[0] * s[0] + s[1] * s[1]).sqrt();
        let f = u * Matrix3::from_diagonal(&(s / n)) * vt;
        Self(f / f.norm())
    }

    pub fn sampson(&self, x1: [f64; 2], x2: [f64; 2]) -> f64 {
        sampson(&self.0, x1, x2)
    }
}

/// First-order geometric (Sampson) distance of a correspondence.
pub fn sampson(f: &Matrix3<f64>, x1: [f64; 2], x2: [f64; 2]) -> f64 {
    let a = Vector3::new(x1[0], x1[1], 1.0);
    let b = Vector3::new(x2[0], x2[1], 1.0);
    let fa = f * a;
    let ftb = f.transpose() * b;
    let r = b.dot(&fa);
    let denom = fa.x * fa.x + fa.y * fa.y + ftb.x * ftb.x + ftb.y * ftb.y;
    if denom <= 0.0 {
        return if r == 0.0 { 0.0 } else { f64::INFINITY };
    }
    r.abs() / denom.sqrt()
}

/// Similarity moving the centroid to the origin with mean distance √2.
fn hartley(points: &[[f64; 2]]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let mean_dist = points
        .iter()
        .map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let s = if mean_dist > 0.0 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn apply(t: &Matrix3<f64>, p: [f64; 2]) -> [f64; 2] {
    [t[(0, 0)] * p[0] + t[(0, 2)], t[(1, 1)] * p[1] + t[(1, 2)]]
}

/// Weighted linear solve on (already normalized) points; rank 2 enforced.
fn solve_linear(x1: &[[f64; 2]], x2: &[[f64; 2]], weights: &[f64]) -> Result<Matrix3<f64>, ClusterError> {
    let rows = x1.len().max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (p, q)) in x1.iter().zip(x2).enumerate() {
        let w = weights[i];
        let row = [
            q[0] * p[0],
            q[0] * p[1],
            q[0],
            q[1] * p[0],
            q[1] * p[1],
            q[1],
            p[0],
            p[1],
            1.0,
        ];
        for (k, v) in row.iter().enumerate() {
            a[(i, k)] = w * v;
        }
    }
    let svd = a.svd(false, true);
    let vt = svd
        .v_t
        .ok_or_else(|| ClusterError::DegenerateConfiguration("SVD failed".into()))?;
    let s = &svd.singular_values;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    if s[order[7]] <= 1e-10 * s[order[0]] {
        return Err(ClusterError::DegenerateConfiguration(
            "design matrix has a null space of dimension > 1".into(),
        ));
    }
    let v = vt.row(order[8]);
    let f = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
    Ok(*FundamentalMatrix::from_matrix(&f).matrix())
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Normalized 8-point estimate with a least-median-of-squares start and
/// five rounds of Cauchy-weighted IRLS on the Sampson distance.
pub fn estimate_fundamental(pairs: &[([f64; 2], [f64; 2])]) -> Result<FundamentalMatrix, ClusterError> {
    let n = pairs.len();
    if n < 8 {
        return Err(ClusterError::DegenerateConfiguration(format!(
            "{n} correspondences, need at least 8"
        )));
    }
    let p1: Vec<[f64; 2]> = pairs.iter().map(|p| p.0).collect();
    let p2: Vec<[f64; 2]> = pairs.iter().map(|p| p.1).collect();
    let t1 = hartley(&p1);
    let t2 = hartley(&p2);
    let x1: Vec<[f64; 2]> = p1.iter().map(|p| apply(&t1, *p)).collect();
    let x2: Vec<[f64; 2]> = p2.iter().map(|p| apply(&t2, *p)).collect();
    let denorm = |f: &Matrix3<f64>| t2.transpose() * f * t1;
    let residuals = |f: &Matrix3<f64>| -> Vec<f64> {
        let fi = denorm(f);
        pairs.iter().map(|(a, b)| sampson(&fi, *a, *b)).collect()
    };
    let med_of = |f: &Matrix3<f64>| median(&mut residuals(f));

    let mut best = solve_linear(&x1, &x2, &vec![1.0; n])?;
    let mut best_med = med_of(&best);
    if n >= 16 {
        let mut rng = rng_stream(n as u64, "fundamental-lmeds");
        for _ in 0..LMEDS_TRIALS {
            let idx = sample(&mut rng, n, 8).into_vec();
            let s1: Vec<[f64; 2]> = idx.iter().map(|&i| x1[i]).collect();
            let s2: Vec<[f64; 2]> = idx.iter().map(|&i| x2[i]).collect();
            if let Ok(f) = solve_linear(&s1, &s2, &[1.0; 8]) {
                let m = med_of(&f);
                if m < best_med {
                    best = f;
                    best_med = m;
                }
            }
        }
    }

    let mut f = best;
    for _ in 0..IRLS_ROUNDS {
        let d = residuals(&f);
        let sigma = (1.4826 * median(&mut d.clone())).max(1e-12);
        let weights: Vec<f64> = x1
            .iter()
            .zip(&x2)
            .zip(&d)
            .map(|((a, b), di)| {
                let w = 1.0 / (1.0 + (di / sigma).powi(2));
                // dividing by the Sampson denominator turns the algebraic
                // residual into the geometric one
                let fa = f * Vector3::new(a[0], a[1], 1.0);
                let ftb = f.transpose() * Vector3::new(b[0], b[1], 1.0);
                let denom = (fa.x * fa.x + fa.y * fa.y + ftb.x * ftb.x + ftb.y * ftb.y).sqrt();
                w.sqrt() / denom.max(1e-12)
            })
            .collect();
        match solve_linear(&x1, &x2, &weights) {
            Ok(next) => f = next,
            Err(_) => break,
        }
    }
    Ok(FundamentalMatrix::from_matrix(&denorm(&f)))
}

/// Per-pixel Sampson distance of `(p, p + flow(p))` in normalized image
/// coordinates.
pub fn epipolar_error_map(flow: &Tensor, f: &FundamentalMatrix, k: &Intrinsics) -> Tensor {
    Tensor::from_fn(flow.height(), flow.width(), 1, |y, x, _| {
        let (px, py) = (x as f64, y as f64);
        let a = k.normalize(px, py);
        let b = k.normalize(px + flow.at(y, x, 0), py + flow.at(y, x, 1));
        f.sampson(a, b)
    })
}

/// Normalized flow magnitude, the error map used when the camera is static.
pub fn flow_magnitude_map(flow: &Tensor, k: &Intrinsics) -> Tensor {
    Tensor::from_fn(flow.height(), flow.width(), 1, |y, x, _| {
        let a = k.normalize(x as f64, y as f64);
        let b = k.normalize(x as f64 + flow.at(y, x, 0), y as f64 + flow.at(y, x, 1));
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    })
}

/// `err > threshold`, then a 3x3 opening and closing.
pub fn movement_mask(err: &Tensor, threshold: f64) -> Mask2D {
    Mask2D::from_fn(err.height(), err.width(), |y, x| err.at(y, x, 0) > threshold).open_close3()
}

/// Grid correspondences `(p, p + flow(p))`, keeping the half with the best
/// round-trip consistency against `reverse`.
pub fn grid_correspondences(flow: &Tensor, reverse: &Tensor, stride: usize) -> Vec<([f64; 2], [f64; 2], f64)> {
    let mut out = grid_samples(flow, reverse, stride);
    out.truncate(out.len().div_ceil(2));
    out
}

/// Every grid correspondence landing inside the image, sorted by round-trip
/// error.
fn grid_samples(flow: &Tensor, reverse: &Tensor, stride: usize) -> Vec<([f64; 2], [f64; 2], f64)> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    for y in (stride / 2..flow.height()).step_by(stride) {
        for x in (stride / 2..flow.width()).step_by(stride) {
            let (px, py) = (x as f64, y as f64);
            let f = [flow.at(y, x, 0), flow.at(y, x, 1)];
            let q = [px + f[0], py + f[1]];
            if let Some(r) = reverse.bilinear2(q[0], q[1]) {
                let e = ((f[0] + r[0]).powi(2) + (f[1] + r[1]).powi(2)).sqrt();
                out.push(([px, py], q, e));
            }
        }
    }
    out.sort_by(|a, b| a.2.total_cmp(&b.2));
    out
}

#[derive(Clone, Debug)]
pub struct Clustering {
    pub mask: Mask2D,
    pub error: Tensor,
    pub fundamental: Option<FundamentalMatrix>,
    pub static_camera: bool,
}

/// Moving mask of the frame on which `flow` is defined. `reverse` is the
/// flow in the opposite direction, used to pick reliable correspondences.
/// A static camera falls back to flow magnitude; a degenerate fit (pure
/// rotation, planar scene) marks the whole frame still.
pub fn cluster_frame(flow: &Tensor, reverse: &Tensor, k: &Intrinsics, threshold: f64, stride: usize) -> Clustering {
    let corr = grid_correspondences(flow, reverse, stride);
    let mut mags: Vec<f64> = corr
        .iter()
        .map(|(a, b, _)| ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt())
        .collect();
    let (h, w) = (flow.height(), flow.width());
    if mags.is_empty() || median(&mut mags) < STATIC_FLOW_PX {
        let error = flow_magnitude_map(flow, k);
        return Clustering {
            mask: movement_mask(&error, threshold),
            error,
            fundamental: None,
            static_camera: true,
        };
    }
    let normalized = |c: &[([f64; 2], [f64; 2], f64)]| -> Vec<([f64; 2], [f64; 2])> {
        c.iter()
            .map(|(a, b, _)| (k.normalize(a[0], a[1]), k.normalize(b[0], b[1])))
            .collect()
    };
    // a degenerate consistent half (e.g. all on one plane) is retried with
    // the full grid before the frame is declared still
    let fit = estimate_fundamental(&normalized(&corr))
        .or_else(|_| estimate_fundamental(&normalized(&grid_samples(flow, reverse, stride))));
    match fit {
        Ok(f) => {
            let error = epipolar_error_map(flow, &f, k);
            Clustering {
                mask: movement_mask(&error, threshold),
                error,
                fundamental: Some(f),
                static_camera: false,
            }
        }
        Err(_) => Clustering {
            mask: Mask2D::new(h, w),
            error: Tensor::zeros(&[h, w]),
            fundamental: None,
            static_camera: false,
        },
    }
}

/// Footprint of the Moving points rendered under `cam`: every pixel with
/// nonzero accumulated alpha.
pub fn previous_moving_mask(set: &GaussianPointSet, cam: &Camera) -> Mask2D {
    let moving = set.subset_cluster(Cluster::Moving);
    if moving.is_empty() {
        return Mask2D::new(cam.height, cam.width);
    }
    let out = render(&moving, cam, &RenderSettings::default());
    Mask2D::from_fn(cam.height, cam.width, |y, x| out.acc_alpha.at(y, x, 0) > 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn too_few_pairs() {
        let pairs = vec![([0.0, 0.0], [1.0, 1.0]); 7];
        assert!(matches!(
            estimate_fundamental(&pairs),
            Err(ClusterError::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn zero_map_and_infinite_threshold() {
        assert!(movement_mask(&Tensor::zeros(&[8, 8]), 0.01).is_empty());
        let err = Tensor::filled(&[8, 8], 5.0);
        assert!(movement_mask(&err, f64::INFINITY).is_empty());
    }

    #[test]
    fn zero_flow_lies_on_translation_epipolar_lines() {
        let t = Vector3::new(0.3, -0.1, 1.0);
        let f = FundamentalMatrix::from_matrix(&t.cross_matrix());
        let k = Intrinsics::new(100.0, 100.0, 20.0, 15.0);
        let err = epipolar_error_map(&Tensor::zeros(&[30, 40, 2]), &f, &k);
        assert!(err.data().iter().all(|e| *e < 1e-12));
    }
}
