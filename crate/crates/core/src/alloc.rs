//! Texture-driven initialization and pixel-wise densification.

use nalgebra::Vector2;
use rand::Rng;

use crate::camera::Camera;
use crate::error::AllocError;
use crate::rng::{unit_quaternion, RngStream};
use crate::scene::{logit, Cluster, GaussianPoint, GaussianPointSet};
use crate::tensor::{Mask2D, Tensor};

pub const INIT_OPACITY: f64 = 0.99;
const MIN_FOOTPRINT_PX: f64 = 0.3;

/// Discrete distribution over pixels.
#[derive(Clone, Debug)]
pub struct SamplingMap {
    prob: Tensor,
    support: Mask2D,
}

impl SamplingMap {
    /// Normalizes nonnegative `weights` over their nonzero entries. An
    /// all-zero weight map yields an empty map.
    pub fn from_weights(weights: &Tensor) -> Self {
        let (h, w) = (weights.height(), weights.width());
        let total: f64 = weights.data().iter().filter(|v| **v > 0.0).sum();
        let support = Mask2D::from_fn(h, w, |y, x| weights.at(y, x, 0) > 0.0);
        let prob = if total > 0.0 {
            Tensor::from_fn(h, w, 1, |y, x, _| weights.at(y, x, 0).max(0.0) / total)
        } else {
            Tensor::zeros(&[h, w])
        };
        Self { prob, support }
    }

    /// Uniform over the set pixels of `mask`.
    pub fn uniform(mask: &Mask2D) -> Self {
        Self::from_weights(&Tensor::from_fn(mask.height(), mask.width(), 1, |y, x, _| {
            if mask.get(y, x) {
                1.0
            } else {
                0.0
            }
        }))
    }

    pub fn prob(&self) -> &Tensor {
        &self.prob
    }

    pub fn support(&self) -> &Mask2D {
        &self.support
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn at(&self, x: f64, y: f64) -> f64 {
        let (xi, yi) = (x.round(), y.round());
        if xi < 0.0 || yi < 0.0 || xi >= self.prob.width() as f64 || yi >= self.prob.height() as f64 {
            return 0.0;
        }
        self.prob.at(yi as usize, xi as usize, 0)
    }
}

fn sobel_magnitude(gray: &Tensor) -> Tensor {
    let (h, w) = (gray.height(), gray.width());
    let px = |y: isize, x: isize| {
        let yy = y.clamp(0, h as isize - 1) as usize;
        let xx = x.clamp(0, w as isize - 1) as usize;
        gray.at(yy, xx, 0)
    };
    Tensor::from_fn(h, w, 1, |y, x, _| {
        let (y, x) = (y as isize, x as isize);
        let gx = (px(y - 1, x + 1) + 2.0 * px(y, x + 1) + px(y + 1, x + 1))
            - (px(y - 1, x - 1) + 2.0 * px(y, x - 1) + px(y + 1, x - 1));
        let gy = (px(y + 1, x - 1) + 2.0 * px(y + 1, x) + px(y + 1, x + 1))
            - (px(y - 1, x - 1) + 2.0 * px(y - 1, x) + px(y - 1, x + 1));
        (gx * gx + gy * gy).sqrt()
    })
}

/// Sobel gradient magnitude of the luminance, normalized to a distribution.
/// Textureless images fall back to uniform.
pub fn texture_prob_map(image: &Tensor) -> SamplingMap {
    let map = SamplingMap::from_weights(&sobel_magnitude(&image.grayscale()));
    if map.is_empty() {
        SamplingMap::uniform(&Mask2D::full(image.height(), image.width()))
    } else {
        map
    }
}

/// I.i.d. pixel-center draws proportional to the map.
pub fn sample_points(map: &SamplingMap, n: usize, rng: &mut RngStream) -> Result<Vec<[f64; 2]>, AllocError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if map.is_empty() {
        return Err(AllocError::EmptySupport);
    }
    let w = map.prob.width();
    let mut cdf = Vec::with_capacity(map.prob.data().len());
    let mut acc = 0.0;
    for &p in map.prob.data() {
        acc += p;
        cdf.push(acc);
    }
    Ok((0..n)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            let k = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            [(k % w) as f64, (k / w) as f64]
        })
        .collect())
}

/// Everything needed to turn sampled pixels into points.
#[derive(Clone, Copy)]
pub struct PixelSource<'a> {
    pub image: &'a Tensor,
    pub depth: &'a Tensor,
    pub camera: &'a Camera,
    pub moving: Option<&'a Mask2D>,
    pub frame: u32,
    pub scale_gain: f64,
}

/// Screen footprint (px) of a point drawn from a map with probability `p`
/// at its pixel when `n` points are drawn in total. `n p / (1 + n p)` is the
/// chance the pixel is hit at least about once, so its odds `n p` count
/// expected samples per pixel and `1 / sqrt(n p)` is the local spacing.
pub fn footprint_px(p: f64, n: usize, gain: f64, max_px: f64) -> f64 {
    let odds = (n as f64 * p).max(1e-12);
    (gain / odds.sqrt()).clamp(MIN_FOOTPRINT_PX, max_px.max(MIN_FOOTPRINT_PX))
}

/// Creates points at `pixels`: unprojected with the prior depth, colored by
/// the image, opacity 0.99, random rotation, isotropic scale from the
/// sampling density.
pub fn points_at(
    src: &PixelSource,
    pixels: &[[f64; 2]],
    map: &SamplingMap,
    rng: &mut RngStream,
) -> Result<Vec<GaussianPoint>, AllocError> {
    let cam = src.camera;
    let max_px = 0.1 * cam.width.min(cam.height) as f64;
    let n = pixels.len();
    pixels
        .iter()
        .map(|&[x, y]| {
            let (xi, yi) = (x as usize, y as usize);
            let d = src.depth.at(yi, xi, 0);
            if !(d > 0.0) {
                return Err(AllocError::NonPositiveDepth { x, y, depth: d });
            }
            let mean = cam
                .unproject(&Vector2::new(x, y), d)
                .map_err(|_| AllocError::NonPositiveDepth { x, y, depth: d })?;
            let sigma = footprint_px(map.at(x, y), n, src.scale_gain, max_px) * d / cam.intrinsics.fx;
            let moving = src.moving.is_some_and(|m| m.get(yi, xi));
            Ok(GaussianPoint {
                mean: [mean.x, mean.y, mean.z],
                log_scale: [sigma.ln(); 3],
                opacity_logit: logit(INIT_OPACITY),
                rotation: unit_quaternion(rng),
                color: [
                    src.image.at(yi, xi, 0),
                    src.image.at(yi, xi, 1),
                    src.image.at(yi, xi, 2),
                ],
                id: 0,
                cluster: if moving { Cluster::Moving } else { Cluster::Still },
                birth_frame: src.frame,
            })
        })
        .collect()
}

/// Initial point set of `n` points drawn from the image texture map.
pub fn init_gaussians(src: &PixelSource, n: usize, rng: &mut RngStream) -> Result<GaussianPointSet, AllocError> {
    let map = texture_prob_map(src.image);
    let pixels = sample_points(&map, n, rng)?;
    let mut set = GaussianPointSet::new();
    for p in points_at(src, &pixels, &map, rng)? {
        set.push(p);
    }
    Ok(set)
}

/// `round(|mask| / (H W) * n_ini)`.
pub fn densify_count(mask: &Mask2D, n_ini: usize) -> usize {
    (mask.ratio() * n_ini as f64).round() as usize
}

/// Per-pixel mean absolute color error.
pub fn error_map(rendered: &Tensor, target: &Tensor) -> Tensor {
    let ch = rendered.channels();
    Tensor::from_fn(rendered.height(), rendered.width(), 1, |y, x, _| {
        (0..ch)
            .map(|c| (rendered.at(y, x, c) - target.at(y, x, c)).abs())
            .sum::<f64>()
            / ch as f64
    })
}

/// The support of `map` sets the densification mask; points are drawn
/// from it and appended with fresh ids. Returns the number added.
pub fn densify(
    set: &mut GaussianPointSet,
    map: &SamplingMap,
    n_ini: usize,
    src: &PixelSource,
    rng: &mut RngStream,
) -> Result<usize, AllocError> {
    let n_new = densify_count(map.support(), n_ini);
    if n_new == 0 {
        return Ok(0);
    }
    let pixels = sample_points(map, n_new, rng)?;
    for p in points_at(src, &pixels, map, rng)? {
        set.push(p);
    }
    Ok(n_new)
}

/// Error-driven densification map: `E ⊙ [E > threshold]`, normalized.
pub fn error_sampling_map(err: &Tensor, threshold: f64) -> SamplingMap {
    SamplingMap::from_weights(&err.map(|e| if e > threshold { e } else { 0.0 }))
}

/// Pixels whose flow round trip `first` then `second` misses by more than
/// `threshold` px, or leaves the image.
pub fn new_content_mask(first: &Tensor, second: &Tensor, threshold: f64) -> Mask2D {
    let (h, w) = (first.height(), first.width());
    Mask2D::from_fn(h, w, |y, x| {
        let f = [first.at(y, x, 0), first.at(y, x, 1)];
        match second.bilinear2(x as f64 + f[0], y as f64 + f[1]) {
            Some(b) => ((f[0] + b[0]).powi(2) + (f[1] + b[1]).powi(2)).sqrt() > threshold,
            None => true,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_stream;

    #[test]
    fn constant_image_is_uniform() {
        let img = Tensor::filled(&[5, 7, 3], 0.4);
        let m = texture_prob_map(&img);
        assert!(m.prob().data().iter().all(|p| (p - 1.0 / 35.0).abs() < 1e-15));
    }

    #[test]
    fn vertical_edge_concentrates_mass() {
        let img = Tensor::from_fn(6, 10, 3, |_, x, _| if x < 5 { 0.0 } else { 1.0 });
        let m = texture_prob_map(&img);
        for y in 0..6 {
            for x in 0..10 {
                let edge = x == 4 || x == 5;
                assert_eq!(m.prob().at(y, x, 0) > 0.0, edge);
            }
        }
        let total: f64 = m.prob().data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_support_and_zero_draws() {
        let m = SamplingMap::uniform(&Mask2D::new(3, 3));
        let mut rng = rng_stream(0, "t");
        assert!(sample_points(&m, 0, &mut rng).unwrap().is_empty());
        assert_eq!(sample_points(&m, 1, &mut rng).unwrap_err(), AllocError::EmptySupport);
    }

    #[test]
    fn single_pixel_support() {
        let mut mask = Mask2D::new(4, 4);
        mask.set(2, 1, true);
        let mut rng = rng_stream(0, "t");
        let pts = sample_points(&SamplingMap::uniform(&mask), 50, &mut rng).unwrap();
        assert!(pts.iter().all(|p| *p == [1.0, 2.0]));
    }

    #[test]
    fn densify_count_formula() {
        let mask = Mask2D::from_fn(10, 10, |y, _| y < 2);
        assert_eq!(densify_count(&mask, 50_000), 10_000);
        assert_eq!(densify_count(&Mask2D::new(10, 10), 50_000), 0);
    }

    #[test]
    fn consistent_and_inconsistent_round_trips() {
        let fwd = Tensor::from_fn(6, 8, 2, |_, _, c| if c == 0 { 1.0 } else { 0.0 });
        let bwd = Tensor::from_fn(6, 8, 2, |_, _, c| if c == 0 { -1.0 } else { 0.0 });
        let m = new_content_mask(&fwd, &bwd, 1.0);
        // the last column leaves the image
        assert_eq!(m.count(), 6);
        let fwd5 = Tensor::from_fn(6, 8, 2, |_, _, c| if c == 0 { 5.0 } else { 0.0 });
        let zero = Tensor::zeros(&[6, 8, 2]);
        assert_eq!(new_content_mask(&fwd5, &zero, 1.0).count(), 48);
    }
}
