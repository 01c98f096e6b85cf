//! Tile-based differentiable splatting of a [`GaussianPointSet`].
//!
//! Each point is projected with the EWA Jacobian at its center, its screen
//! covariance is dilated by [`COV2D_DILATION`] px², and points are composited
//! front to back in global center-depth order. The footprint kernel is
//! `exp(-d²/2)` minus its first-order expansion at the `d = 3` boundary,
//! renormalized to 1 at the center. That truncates at 3σ while keeping the
//! kernel continuously differentiable, so finite differences agree with the
//! analytic backward pass everywhere.
//!
//! Rendered depth is the alpha-normalized expected camera depth.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::camera::{Camera, EPS_Z};
use crate::scene::{quat_to_matrix, sigmoid, GaussianPointSet};
use crate::tensor::Tensor;

pub const TILE_SIZE: usize = 16;
pub const COV2D_DILATION: f64 = 0.3;
const CUTOFF_D2: f64 = 9.0;
/// Compositing stops once transmittance drops below this.
const MIN_TRANSMITTANCE: f64 = 1e-9;
const DEPTH_EPS: f64 = 1e-3;

/// Normalizer for composited depth: `acc` above `DEPTH_EPS`, a C1 quadratic
/// blend below it so depth fades to zero with coverage. Returns the value and
/// its derivative.
#[inline]
fn depth_norm(acc: f64) -> (f64, f64) {
    if acc >= DEPTH_EPS {
        (acc, 1.0)
    } else {
        ((acc * acc + DEPTH_EPS * DEPTH_EPS) / (2.0 * DEPTH_EPS), acc / DEPTH_EPS)
    }
}

// exp(-4.5)
const TAU: f64 = 0.011_108_996_538_242_306;
const KERNEL_NORM: f64 = 1.0 / (1.0 - 5.5 * TAU);

#[inline]
pub fn kernel(d2: f64) -> f64 {
    if d2 >= CUTOFF_D2 {
        return 0.0;
    }
    ((-0.5 * d2).exp() - TAU * (1.0 + 0.5 * (CUTOFF_D2 - d2))) * KERNEL_NORM
}

#[inline]
fn kernel_grad(d2: f64) -> f64 {
    if d2 >= CUTOFF_D2 {
        return 0.0;
    }
    0.5 * (TAU - (-0.5 * d2).exp()) * KERNEL_NORM
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderSettings {
    pub background: [f64; 3],
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self { background: [0.0; 3] }
    }
}

/// Screen-space state of one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointScreen {
    pub pos: [f64; 2],
    pub depth: f64,
    /// In front of the camera.
    pub projected: bool,
    /// Transmittance reaching the point at the pixel nearest its center; 0
    /// when that pixel is outside the image or compositing stopped earlier.
    pub transmittance: f64,
}

impl PointScreen {
    pub fn in_image(&self, width: usize, height: usize) -> bool {
        self.projected
            && self.pos[0] >= -0.5
            && self.pos[1] >= -0.5
            && self.pos[0] < width as f64 - 0.5
            && self.pos[1] < height as f64 - 0.5
    }
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub color: Tensor,
    pub depth: Tensor,
    pub acc_alpha: Tensor,
    pub points: Vec<PointScreen>,
}

/// Per-point parameter gradients plus the camera tangent gradient `[ω; v]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderGrads {
    pub means: Vec<[f64; 3]>,
    pub log_scales: Vec<[f64; 3]>,
    pub opacity_logits: Vec<f64>,
    pub rotations: Vec<[f64; 4]>,
    pub colors: Vec<[f64; 3]>,
    pub camera: [f64; 6],
}

impl RenderGrads {
    pub fn zeros(n: usize) -> Self {
        Self {
            means: vec![[0.0; 3]; n],
            log_scales: vec![[0.0; 3]; n],
            opacity_logits: vec![0.0; n],
            rotations: vec![[0.0; 4]; n],
            colors: vec![[0.0; 3]; n],
            camera: [0.0; 6],
        }
    }
}

/// Loss-side adjoints: per-pixel color (`H x W x 3`), per-pixel depth
/// (`H x W`) and per-point screen position (`N x 2`).
#[derive(Clone, Copy, Debug, Default)]
pub struct RenderAdjoint<'a> {
    pub color: Option<&'a Tensor>,
    pub depth: Option<&'a Tensor>,
    pub points: Option<&'a [[f64; 2]]>,
}

/// Pixels of one tile as `(x, y, result)` plus `(point, transmittance)` at
/// point centers inside the tile.
type TileOutput = (Vec<(usize, usize, PixelResult)>, Vec<(usize, f64)>);

/// A point after projection.
#[derive(Clone, Copy, Debug)]
struct Splat {
    visible: bool,
    mean: [f64; 2],
    conic: [f64; 3],
    depth: f64,
    opacity: f64,
    color: [f64; 3],
    // inclusive pixel ranges; empty when x0 > x1
    x0: i64,
    x1: i64,
    y0: i64,
    y1: i64,
    center: (i64, i64),
}

impl Splat {
    const HIDDEN: Splat = Splat {
        visible: false,
        mean: [0.0; 2],
        conic: [0.0; 3],
        depth: 0.0,
        opacity: 0.0,
        color: [0.0; 3],
        x0: 0,
        x1: -1,
        y0: 0,
        y1: -1,
        center: (-1, -1),
    };

    #[inline]
    fn d2(&self, px: f64, py: f64) -> (f64, f64, f64) {
        let dx = px - self.mean[0];
        let dy = py - self.mean[1];
        let [a, b, c] = self.conic;
        (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy, dx, dy)
    }
}

/// Projection intermediates reused by the backward pass.
struct Projection {
    pc: Vector3<f64>,
    jac: Matrix2x3<f64>,
    cov_cam: Matrix3<f64>,
    cov2d: Matrix2<f64>,
}

fn project_point(set: &GaussianPointSet, i: usize, cam: &Camera, w: &Matrix3<f64>) -> Option<Projection> {
    let mu = Vector3::from(set.means[i]);
    let pc = w * mu + cam.extrinsics.translation;
    if pc.z <= EPS_Z {
        return None;
    }
    let k = &cam.intrinsics;
    let (x, y, z) = (pc.x, pc.y, pc.z);
    let jac = Matrix2x3::new(k.fx / z, 0.0, -k.fx * x / (z * z), 0.0, k.fy / z, -k.fy * y / (z * z));
    let cov_cam = w * set.covariance(i) * w.transpose();
    let cov2d = jac * cov_cam * jac.transpose() + Matrix2::identity() * COV2D_DILATION;
    Some(Projection {
        pc,
        jac,
        cov_cam,
        cov2d,
    })
}

fn preprocess(set: &GaussianPointSet, cam: &Camera) -> Vec<Splat> {
    let w = cam.extrinsics.rotation_matrix();
    let k = cam.intrinsics;
    let (width, height) = (cam.width as i64, cam.height as i64);
    (0..set.len())
        .into_par_iter()
        .map(|i| {
            let Some(p) = project_point(set, i, cam, &w) else {
                return Splat::HIDDEN;
            };
            let mean = [k.fx * p.pc.x / p.pc.z + k.cx, k.fy * p.pc.y / p.pc.z + k.cy];
            let (a, b, c) = (p.cov2d[(0, 0)], p.cov2d[(0, 1)], p.cov2d[(1, 1)]);
            let det = a * c - b * b;
            if !(det > 0.0) || !mean[0].is_finite() || !mean[1].is_finite() {
                return Splat::HIDDEN;
            }
            let rx = 3.0 * a.sqrt();
            let ry = 3.0 * c.sqrt();
            let clamp_range = |lo: f64, hi: f64, n: i64| -> (i64, i64) {
                let lo = lo.ceil().max(0.0).min(n as f64);
                let hi = hi.floor().min((n - 1) as f64).max(-1.0);
                (lo as i64, hi as i64)
            };
            let (x0, x1) = clamp_range(mean[0] - rx, mean[0] + rx, width);
            let (y0, y1) = clamp_range(mean[1] - ry, mean[1] + ry, height);
            Splat {
                visible: true,
                mean,
                conic: [c / det, -b / det, a / det],
                depth: p.pc.z,
                opacity: sigmoid(set.opacity_logits[i]),
                color: set.colors[i],
                x0,
                x1,
                y0,
                y1,
                center: (mean[0].round() as i64, mean[1].round() as i64),
            }
        })
        .collect()
}

/// Visible splat indices in compositing order: center depth, then index.
fn depth_order(splats: &[Splat]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..splats.len()).filter(|&i| splats[i].visible).collect();
    order.sort_by(|&a, &b| splats[a].depth.total_cmp(&splats[b].depth).then(a.cmp(&b)));
    order
}

struct Tiles {
    nx: usize,
    ny: usize,
    offsets: Vec<usize>,
    entries: Vec<usize>,
}

impl Tiles {
    fn build(splats: &[Splat], order: &[usize], width: usize, height: usize) -> Self {
        let nx = width.div_ceil(TILE_SIZE);
        let ny = height.div_ceil(TILE_SIZE);
        let ts = TILE_SIZE as i64;
        let tile_range = |s: &Splat| {
            if s.x0 > s.x1 || s.y0 > s.y1 {
                return None;
            }
            Some((
                (s.x0 / ts) as usize,
                (s.x1 / ts) as usize,
                (s.y0 / ts) as usize,
                (s.y1 / ts) as usize,
            ))
        };
        let mut counts = vec![0usize; nx * ny + 1];
        for &i in order {
            if let Some((tx0, tx1, ty0, ty1)) = tile_range(&splats[i]) {
                for ty in ty0..=ty1 {
                    for tx in tx0..=tx1 {
                        counts[ty * nx + tx + 1] += 1;
                    }
                }
            }
        }
        for t in 1..counts.len() {
            counts[t] += counts[t - 1];
        }
        let mut cursor = counts.clone();
        let mut entries = vec![0usize; counts[nx * ny]];
        for &i in order {
            if let Some((tx0, tx1, ty0, ty1)) = tile_range(&splats[i]) {
                for ty in ty0..=ty1 {
                    for tx in tx0..=tx1 {
                        let t = ty * nx + tx;
                        entries[cursor[t]] = i;
                        cursor[t] += 1;
                    }
                }
            }
        }
        Tiles {
            nx,
            ny,
            offsets: counts,
            entries,
        }
    }

    fn list(&self, t: usize) -> &[usize] {
        &self.entries[self.offsets[t]..self.offsets[t + 1]]
    }

    fn pixels(&self, t: usize, width: usize, height: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let (tx, ty) = (t % self.nx, t / self.nx);
        (
            tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(width),
            ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(height),
        )
    }

    fn count(&self) -> usize {
        self.nx * self.ny
    }
}

/// Tile-local copy of the fields the pixel loops read.
struct TileSplat {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    depth: f64,
    x0: i32,
    x1: i32,
    y0: i32,
    y1: i32,
    center: (i32, i32),
}

impl TileSplat {
    fn new(s: &Splat) -> Self {
        let clamp = |v: i64| v.clamp(i32::MIN as i64, i32::MAX as i64) as i32;
        TileSplat {
            mean: s.mean,
            conic: s.conic,
            opacity: s.opacity,
            color: s.color,
            depth: s.depth,
            x0: clamp(s.x0),
            x1: clamp(s.x1),
            y0: clamp(s.y0),
            y1: clamp(s.y1),
            center: (clamp(s.center.0), clamp(s.center.1)),
        }
    }

    #[inline]
    fn d2(&self, px: f64, py: f64) -> (f64, f64, f64) {
        let dx = px - self.mean[0];
        let dy = py - self.mean[1];
        let [a, b, c] = self.conic;
        (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy, dx, dy)
    }
}

/// Per-pixel slot lists for one row of a tile, in compositing order.
struct PixelHits {
    lists: Vec<Vec<u32>>,
}

impl PixelHits {
    fn new(width: usize) -> Self {
        PixelHits {
            lists: vec![Vec::new(); width],
        }
    }

    /// Collects the slots whose pixel range covers `(x, y)` for every `x`
    /// of the row starting at column `x_start`.
    fn fill(&mut self, local: &[TileSplat], y: i32, x_start: i32) {
        for l in &mut self.lists {
            l.clear();
        }
        let x_end = x_start + self.lists.len() as i32 - 1;
        for (k, s) in local.iter().enumerate() {
            if s.y0 > y || y > s.y1 {
                continue;
            }
            let lo = s.x0.max(x_start);
            let hi = s.x1.min(x_end);
            for x in lo..=hi {
                self.lists[(x - x_start) as usize].push(k as u32);
            }
        }
    }

    fn at(&self, dx: usize) -> &[u32] {
        &self.lists[dx]
    }
}

struct PixelResult {
    color: [f64; 3],
    depth: f64,
    acc: f64,
}

fn finish_pixel(c: [f64; 3], depth_num: f64, t: f64, bg: &[f64; 3]) -> PixelResult {
    let acc = 1.0 - t;
    PixelResult {
        color: [c[0] + t * bg[0], c[1] + t * bg[1], c[2] + t * bg[2]],
        depth: depth_num / depth_norm(acc).0,
        acc,
    }
}

fn assemble(
    cam: &Camera,
    splats: &[Splat],
    pixels: impl Iterator<Item = (usize, usize, PixelResult)>,
    center_t: Vec<(usize, f64)>,
) -> RenderOutput {
    let (h, w) = (cam.height, cam.width);
    let mut color = Tensor::zeros(&[h, w, 3]);
    let mut depth = Tensor::zeros(&[h, w]);
    let mut acc = Tensor::zeros(&[h, w]);
    for (y, x, p) in pixels {
        for c in 0..3 {
            color.set(y, x, c, p.color[c]);
        }
        depth.set(y, x, 0, p.depth);
        acc.set(y, x, 0, p.acc);
    }
    let mut points: Vec<PointScreen> = splats
        .iter()
        .map(|s| PointScreen {
            pos: s.mean,
            depth: s.depth,
            projected: s.visible,
            transmittance: 0.0,
        })
        .collect();
    for (i, t) in center_t {
        points[i].transmittance = t;
    }
    RenderOutput {
        color,
        depth,
        acc_alpha: acc,
        points,
    }
}

/// Renders color, normalized depth and accumulated alpha.
pub fn render(set: &GaussianPointSet, cam: &Camera, settings: &RenderSettings) -> RenderOutput {
    RenderPass::new(set, cam).forward(settings)
}

/// Projection, compositing order and tile lists of one set under one
/// camera, shared by the forward and backward passes.
pub struct RenderPass<'a> {
    set: &'a GaussianPointSet,
    cam: &'a Camera,
    splats: Vec<Splat>,
    tiles: Tiles,
}

impl<'a> RenderPass<'a> {
    pub fn new(set: &'a GaussianPointSet, cam: &'a Camera) -> Self {
        let splats = preprocess(set, cam);
        let order = depth_order(&splats);
        let tiles = Tiles::build(&splats, &order, cam.width, cam.height);
        Self {
            set,
            cam,
            splats,
            tiles,
        }
    }

    /// Same output as [`render`].
    pub fn forward(&self, settings: &RenderSettings) -> RenderOutput {
        let (cam, splats, tiles) = (self.cam, &self.splats, &self.tiles);
        let bg = settings.background;

        let per_tile: Vec<TileOutput> = (0..tiles.count())
            .into_par_iter()
            .map(|t| {
                let list = tiles.list(t);
                let local: Vec<TileSplat> = list.iter().map(|&i| TileSplat::new(&splats[i])).collect();
                let (xs, ys) = tiles.pixels(t, cam.width, cam.height);
                let mut out = Vec::with_capacity(xs.len() * ys.len());
                let mut centers = Vec::new();
                let mut hits = PixelHits::new(xs.len());
                for y in ys.clone() {
                    hits.fill(&local, y as i32, xs.start as i32);
                    for x in xs.clone() {
                        let (px, py) = (x as f64, y as f64);
                        let xi = x as i32;
                        let mut trans = 1.0;
                        let mut c = [0.0; 3];
                        let mut dn = 0.0;
                        for &slot in hits.at(x - xs.start) {
                            let s = &local[slot as usize];
                            let (d2, _, _) = s.d2(px, py);
                            if d2 >= CUTOFF_D2 {
                                continue;
                            }
                            let a = s.opacity * kernel(d2);
                            if s.center == (xi, y as i32) {
                                centers.push((list[slot as usize], trans));
                            }
                            if a <= 0.0 {
                                continue;
                            }
                            let wgt = a * trans;
                            c[0] += wgt * s.color[0];
                            c[1] += wgt * s.color[1];
                            c[2] += wgt * s.color[2];
                            dn += wgt * s.depth;
                            trans *= 1.0 - a;
                            if trans < MIN_TRANSMITTANCE {
                                break;
                            }
                        }
                        out.push((y, x, finish_pixel(c, dn, trans, &bg)));
                    }
                }
                (out, centers)
            })
            .collect();

        let mut centers = Vec::new();
        let mut pixels = Vec::with_capacity(cam.width * cam.height);
        for (px, cs) in per_tile {
            pixels.extend(px);
            centers.extend(cs);
        }
        assemble(cam, splats, pixels.into_iter(), centers)
    }

    /// Same output as [`render_backward`].
    pub fn backward(&self, settings: &RenderSettings, adjoint: &RenderAdjoint) -> RenderGrads {
        self.backward_impl(settings, adjoint)
    }
}

/// Brute-force renderer: every point is tested at every pixel and each
/// pixel's contributors are sorted independently. Test oracle only.
pub fn render_reference(set: &GaussianPointSet, cam: &Camera, settings: &RenderSettings) -> RenderOutput {
    let splats = preprocess(set, cam);
    let bg = settings.background;
    let mut pixels = Vec::with_capacity(cam.width * cam.height);
    let mut centers = Vec::new();
    for y in 0..cam.height {
        for x in 0..cam.width {
            let (px, py) = (x as f64, y as f64);
            let mut hits: Vec<(f64, usize, f64)> = splats
                .iter()
                .enumerate()
                .filter(|(_, s)| s.visible)
                .filter_map(|(i, s)| {
                    let (d2, _, _) = s.d2(px, py);
                    (d2 < CUTOFF_D2).then(|| (s.depth, i, s.opacity * kernel(d2)))
                })
                .collect();
            hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut trans = 1.0;
            let mut c = [0.0; 3];
            let mut dn = 0.0;
            for (z, i, a) in hits {
                if splats[i].center == (x as i64, y as i64) {
                    centers.push((i, trans));
                }
                let wgt = a * trans;
                for ch in 0..3 {
                    c[ch] += wgt * splats[i].color[ch];
                }
                dn += wgt * z;
                trans *= 1.0 - a;
            }
            pixels.push((y, x, finish_pixel(c, dn, trans, &bg)));
        }
    }
    assemble(cam, &splats, pixels.into_iter(), centers)
}

/// Screen-space gradient of one point, accumulated over pixels.
#[derive(Clone, Copy, Default)]
struct Grad2D {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    depth: f64,
}

impl Grad2D {
    fn add(&mut self, o: &Grad2D) {
        self.mean[0] += o.mean[0];
        self.mean[1] += o.mean[1];
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
        self.depth += o.depth;
    }
}

struct Contribution {
    slot: usize,
    g: f64,
    a: f64,
    trans: f64,
    d2: f64,
    dx: f64,
    dy: f64,
}

/// Analytic gradients of `<adjoint, render(set, cam)>`.
pub fn render_backward(
    set: &GaussianPointSet,
    cam: &Camera,
    settings: &RenderSettings,
    adjoint: &RenderAdjoint,
) -> RenderGrads {
    RenderPass::new(set, cam).backward(settings, adjoint)
}

impl RenderPass<'_> {
    fn backward_impl(&self, settings: &RenderSettings, adjoint: &RenderAdjoint) -> RenderGrads {
        let (set, cam, splats, tiles) = (self.set, self.cam, &self.splats, &self.tiles);
        let n = set.len();
        let bg = settings.background;

        let mut grads2d = vec![Grad2D::default(); n];

        if adjoint.color.is_some() || adjoint.depth.is_some() {
            let per_tile: Vec<Vec<Grad2D>> = (0..tiles.count())
                .into_par_iter()
                .map(|t| {
                    let list = tiles.list(t);
                    let compact: Vec<TileSplat> = list.iter().map(|&i| TileSplat::new(&splats[i])).collect();
                    let mut local = vec![Grad2D::default(); list.len()];
                    let mut contribs: Vec<Contribution> = Vec::with_capacity(64);
                    let (xs, ys) = tiles.pixels(t, cam.width, cam.height);
                    let mut hits = PixelHits::new(xs.len());
                    for y in ys.clone() {
                        hits.fill(&compact, y as i32, xs.start as i32);
                        for x in xs.clone() {
                            let g_color = adjoint
                                .color
                                .map(|a| [a.at(y, x, 0), a.at(y, x, 1), a.at(y, x, 2)])
                                .unwrap_or([0.0; 3]);
                            let g_depth = adjoint.depth.map(|a| a.at(y, x, 0)).unwrap_or(0.0);
                            if g_color == [0.0; 3] && g_depth == 0.0 {
                                continue;
                            }
                            let (px, py) = (x as f64, y as f64);
                            contribs.clear();
                            let mut trans = 1.0;
                            let mut dn = 0.0;
                            for &slot in hits.at(x - xs.start) {
                                let slot = slot as usize;
                                let s = &compact[slot];
                                let (d2, dx, dy) = s.d2(px, py);
                                if d2 >= CUTOFF_D2 {
                                    continue;
                                }
                                let g = kernel(d2);
                                let a = s.opacity * g;
                                if a <= 0.0 {
                                    continue;
                                }
                                contribs.push(Contribution {
                                    slot,
                                    g,
                                    a,
                                    trans,
                                    d2,
                                    dx,
                                    dy,
                                });
                                dn += a * trans * s.depth;
                                trans *= 1.0 - a;
                                if trans < MIN_TRANSMITTANCE {
                                    break;
                                }
                            }
                            let acc = 1.0 - trans;
                            let (norm, dnorm) = depth_norm(acc);
                            let (g_num, g_acc) = (g_depth / norm, -g_depth * dn * dnorm / (norm * norm));
                            // `behind` is the adjoint-weighted value of everything
                            // composited after the current entry, per unit of the
                            // transmittance that reaches it.
                            let mut behind = bg[0] * g_color[0] + bg[1] * g_color[1] + bg[2] * g_color[2];
                            for ct in contribs.iter().rev() {
                                let s = &compact[ct.slot];
                                let value = s.color[0] * g_color[0]
                                    + s.color[1] * g_color[1]
                                    + s.color[2] * g_color[2]
                                    + s.depth * g_num
                                    + g_acc;
                                let d_a = ct.trans * (value - behind);
                                behind = ct.a * value + (1.0 - ct.a) * behind;
                                let wgt = ct.a * ct.trans;
                                let lg = &mut local[ct.slot];
                                lg.color[0] += wgt * g_color[0];
                                lg.color[1] += wgt * g_color[1];
                                lg.color[2] += wgt * g_color[2];
                                lg.depth += wgt * g_num;
                                lg.opacity += d_a * ct.g;
                                let d_d2 = d_a * s.opacity * kernel_grad(ct.d2);
                                let [qa, qb, qc] = s.conic;
                                lg.mean[0] -= 2.0 * d_d2 * (qa * ct.dx + qb * ct.dy);
                                lg.mean[1] -= 2.0 * d_d2 * (qb * ct.dx + qc * ct.dy);
                                lg.conic[0] += d_d2 * ct.dx * ct.dx;
                                lg.conic[1] += d_d2 * 2.0 * ct.dx * ct.dy;
                                lg.conic[2] += d_d2 * ct.dy * ct.dy;
                            }
                        }
                    }
                    local
                })
                .collect();

            // Merge in tile order so the sum is independent of thread count.
            for (t, local) in per_tile.iter().enumerate() {
                for (slot, &i) in tiles.list(t).iter().enumerate() {
                    grads2d[i].add(&local[slot]);
                }
            }
        }

        if let Some(pa) = adjoint.points {
            for (i, g) in pa.iter().enumerate().take(n) {
                if splats[i].visible {
                    grads2d[i].mean[0] += g[0];
                    grads2d[i].mean[1] += g[1];
                }
            }
        }

        let w = cam.extrinsics.rotation_matrix();
        let per_point: Vec<Option<(PointGrad, [f64; 6])>> = (0..n)
            .into_par_iter()
            .map(|i| {
                if !splats[i].visible {
                    return None;
                }
                let p = project_point(set, i, cam, &w)?;
                Some(backprop_point(set, i, cam, &w, &p, &splats[i], &grads2d[i]))
            })
            .collect();

        let mut out = RenderGrads::zeros(n);
        for (i, r) in per_point.into_iter().enumerate() {
            if let Some((pg, cg)) = r {
                out.means[i] = pg.mean;
                out.log_scales[i] = pg.log_scale;
                out.opacity_logits[i] = pg.opacity_logit;
                out.rotations[i] = pg.rotation;
                out.colors[i] = pg.color;
                for k in 0..6 {
                    out.camera[k] += cg[k];
                }
            }
        }
        out
    }
}

struct PointGrad {
    mean: [f64; 3],
    log_scale: [f64; 3],
    opacity_logit: f64,
    rotation: [f64; 4],
    color: [f64; 3],
}

fn backprop_point(
    set: &GaussianPointSet,
    i: usize,
    cam: &Camera,
    w: &Matrix3<f64>,
    p: &Projection,
    splat: &Splat,
    g: &Grad2D,
) -> (PointGrad, [f64; 6]) {
    let k = &cam.intrinsics;
    let (x, y, z) = (p.pc.x, p.pc.y, p.pc.z);

    // conic = cov2d^-1
    let q = Matrix2::new(splat.conic[0], splat.conic[1], splat.conic[1], splat.conic[2]);
    let g_q = Matrix2::new(g.conic[0], 0.5 * g.conic[1], 0.5 * g.conic[1], g.conic[2]);
    let g_cov2d = -(q * g_q * q);
    let g_cov_cam = p.jac.transpose() * g_cov2d * p.jac;
    let g_jac: Matrix2x3<f64> = 2.0 * g_cov2d * p.jac * p.cov_cam;
    let g_cov_world = w.transpose() * g_cov_cam * w;

    // cov_world = M Mᵀ, M = R(q) S
    let rq = quat_to_matrix(&set.rotations[i]);
    let s = set.log_scales[i].map(f64::exp);
    let m = rq * Matrix3::from_diagonal(&Vector3::from(s));
    let g_m = 2.0 * g_cov_world * m;
    let mut log_scale = [0.0; 3];
    for j in 0..3 {
        let gs: f64 = (0..3).map(|r| rq[(r, j)] * g_m[(r, j)]).sum();
        log_scale[j] = gs * s[j];
    }
    let g_r = Matrix3::from_fn(|r, c| g_m[(r, c)] * s[c]);
    let rotation = quat_grad(&set.rotations[i], &g_r);

    // mean: pixel position and depth
    let gm = Vector2::new(g.mean[0], g.mean[1]);
    let mut g_pc = p.jac.transpose() * gm;
    g_pc.z += g.depth;
    let z2 = z * z;
    let z3 = z2 * z;
    g_pc.x += g_jac[(0, 2)] * (-k.fx / z2);
    g_pc.y += g_jac[(1, 2)] * (-k.fy / z2);
    g_pc.z += g_jac[(0, 0)] * (-k.fx / z2)
        + g_jac[(0, 2)] * (2.0 * k.fx * x / z3)
        + g_jac[(1, 1)] * (-k.fy / z2)
        + g_jac[(1, 2)] * (2.0 * k.fy * y / z3);
    let g_mu = w.transpose() * g_pc;

    // camera tangent: d pc = ω x (pc - t) + v, d cov_cam = [ω]x cov_cam - cov_cam [ω]x
    let r = p.pc - cam.extrinsics.translation;
    let mut g_omega = r.cross(&g_pc);
    let b = p.cov_cam * g_cov_cam - g_cov_cam * p.cov_cam;
    g_omega -= 2.0 * Vector3::new(b[(2, 1)], b[(0, 2)], b[(1, 0)]);

    let alpha = splat.opacity;
    (
        PointGrad {
            mean: [g_mu.x, g_mu.y, g_mu.z],
            log_scale,
            opacity_logit: g.opacity * alpha * (1.0 - alpha),
            rotation,
            color: g.color,
        },
        [g_omega.x, g_omega.y, g_omega.z, g_pc.x, g_pc.y, g_pc.z],
    )
}

/// Gradient w.r.t. the raw quaternion `[w, x, y, z]` (normalized inside).
fn quat_grad(q: &[f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let gw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)] + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)] - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let gh = [gw, gx, gy, gz];
    let qh = [w, x, y, z];
    let dot: f64 = gh.iter().zip(&qh).map(|(a, b)| a * b).sum();
    [0, 1, 2, 3].map(|k| (gh[k] - qh[k] * dot) / n)
}
