//! Photometric, relative-depth, flow and isotropy losses with their adjoints.

use rayon::prelude::*;

use crate::error::LossError;
use crate::tensor::{Mask2D, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Values of every loss term for one optimizer iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub pho_mse: f64,
    /// Weighted `1 - SSIM` term.
    pub pho_ssim: f64,
    pub dep: f64,
    pub flo: f64,
    pub iso: f64,
    pub a: f64,
    pub b: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "frame,phase,iter,total,pho_mse,pho_ssim,dep,flo,iso,a,b";

    pub fn csv_row(&self, frame: usize, phase: &str, iter: usize) -> String {
        format!(
            "{frame},{phase},{iter},{},{},{},{},{},{},{},{}",
            self.total, self.pho_mse, self.pho_ssim, self.dep, self.flo, self.iso, self.a, self.b
        )
    }
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - r;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.map(|t| t / s)
}

/// Separable "same" convolution with zero padding. The window is symmetric,
/// so this is also its own adjoint.
fn blur(plane: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = SSIM_WINDOW / 2;
    let mut tmp = vec![0.0; h * w];
    tmp.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let xx = x as isize + k as isize - r as isize;
                if xx >= 0 && (xx as usize) < w {
                    acc += t * plane[y * w + xx as usize];
                }
            }
            *out = acc;
        }
    });
    let mut out = vec![0.0; h * w];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let yy = y as isize + k as isize - r as isize;
                if yy >= 0 && (yy as usize) < h {
                    acc += t * tmp[yy as usize * w + x];
                }
            }
            *o = acc;
        }
    });
    out
}

fn channel_plane(t: &Tensor, c: usize) -> Vec<f64> {
    let ch = t.channels();
    t.data().iter().skip(c).step_by(ch).copied().collect()
}

struct SsimChannel {
    map: Vec<f64>,
    grad: Option<Vec<f64>>,
}

/// SSIM map of one channel, and optionally the gradient of
/// `sum_p weight(p) * S(p)` with respect to `x`.
fn ssim_channel(x: &[f64], y: &[f64], h: usize, w: usize, weight: Option<&[f64]>) -> SsimChannel {
    let taps = gaussian_taps();
    let mx = blur(x, h, w, &taps);
    let my = blur(y, h, w, &taps);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mxx = blur(&xx, h, w, &taps);
    let myy = blur(&yy, h, w, &taps);
    let mxy = blur(&xy, h, w, &taps);
    let n = h * w;
    let mut map = vec![0.0; n];
    let mut d_mx = vec![0.0; n];
    let mut d_mxx = vec![0.0; n];
    let mut d_mxy = vec![0.0; n];
    for p in 0..n {
        let a1 = 2.0 * mx[p] * my[p] + SSIM_C1;
        let a2 = 2.0 * (mxy[p] - mx[p] * my[p]) + SSIM_C2;
        let b1 = mx[p] * mx[p] + my[p] * my[p] + SSIM_C1;
        let b2 = (mxx[p] - mx[p] * mx[p]) + (myy[p] - my[p] * my[p]) + SSIM_C2;
        let s = a1 * a2 / (b1 * b2);
        map[p] = s;
        if let Some(wt) = weight {
            let k = wt[p] * s;
            d_mx[p] = k * (2.0 * my[p] / a1 - 2.0 * my[p] / a2 - 2.0 * mx[p] / b1 + 2.0 * mx[p] / b2);
            d_mxy[p] = k * 2.0 / a2;
            d_mxx[p] = -k / b2;
        }
    }
    let grad = weight.map(|_| {
        let gx = blur(&d_mx, h, w, &taps);
        let gxx = blur(&d_mxx, h, w, &taps);
        let gxy = blur(&d_mxy, h, w, &taps);
        (0..n).map(|p| gx[p] + 2.0 * x[p] * gxx[p] + y[p] * gxy[p]).collect()
    });
    SsimChannel { map, grad }
}

/// Mean SSIM over all pixels and channels.
pub fn ssim(a: &Tensor, b: &Tensor) -> f64 {
    assert!(a.same_dims(b), "ssim: dimension mismatch");
    let (h, w, ch) = (a.height(), a.width(), a.channels());
    let total: f64 = (0..ch)
        .map(|c| {
            ssim_channel(&channel_plane(a, c), &channel_plane(b, c), h, w, None)
                .map
                .iter()
                .sum::<f64>()
        })
        .sum();
    total / (h * w * ch) as f64
}

#[derive(Clone, Debug)]
pub struct PhotometricLoss {
    pub mse: f64,
    /// `1 - SSIM` over the included pixels, before weighting.
    pub dssim: f64,
    /// Gradient of `mse + ssim_weight * dssim` with respect to the rendered image.
    pub adjoint: Tensor,
}

impl PhotometricLoss {
    pub fn value(&self, ssim_weight: f64) -> f64 {
        self.mse + ssim_weight * self.dssim
    }
}

/// MSE plus weighted `1 - SSIM` of `rendered` against `target`, ignoring
/// pixels where `exclude` is set. Excluded pixels of the rendering are
/// replaced by the target before the SSIM windows are evaluated.
pub fn photometric_loss(
    rendered: &Tensor,
    target: &Tensor,
    exclude: Option<&Mask2D>,
    ssim_weight: f64,
) -> Result<PhotometricLoss, LossError> {
    assert!(rendered.same_dims(target), "photometric_loss: dimension mismatch");
    let (h, w, ch) = (rendered.height(), rendered.width(), rendered.channels());
    let included = |p: usize| exclude.is_none_or(|m| !m.data()[p]);
    let n_inc = (0..h * w).filter(|&p| included(p)).count();
    if n_inc == 0 {
        return Err(LossError::AllPixelsExcluded);
    }
    let denom = (n_inc * ch) as f64;
    let weight: Vec<f64> = (0..h * w)
        .map(|p| if included(p) { -ssim_weight / denom } else { 0.0 })
        .collect();

    let mut adjoint = Tensor::zeros(rendered.shape());
    let mut mse = 0.0;
    let mut ssim_sum = 0.0;
    for c in 0..ch {
        let t = channel_plane(target, c);
        let mut r = channel_plane(rendered, c);
        for p in 0..h * w {
            if !included(p) {
                r[p] = t[p];
            }
        }
        for p in 0..h * w {
            let d = r[p] - t[p];
            mse += d * d;
            adjoint.data_mut()[p * ch + c] = 2.0 * d / denom;
        }
        let sc = ssim_channel(&r, &t, h, w, (ssim_weight != 0.0).then_some(&weight[..]));
        ssim_sum += (0..h * w).filter(|&p| included(p)).map(|p| sc.map[p]).sum::<f64>();
        if let Some(g) = sc.grad {
            for p in 0..h * w {
                if included(p) {
                    adjoint.data_mut()[p * ch + c] += g[p];
                }
            }
        }
    }
    Ok(PhotometricLoss {
        mse: mse / denom,
        dssim: 1.0 - ssim_sum / denom,
        adjoint,
    })
}

#[derive(Clone, Debug)]
pub struct DepthLoss {
    pub loss: f64,
    pub a: f64,
    pub b: f64,
    /// Total derivative with respect to the rendered depth, including the
    /// dependence of `(a, b)` on it.
    pub adjoint: Tensor,
}

const DEPTH_VAR_EPS: f64 = 1e-12;

/// Least-squares affine fit `target ≈ a * rendered + b` over `region`.
pub fn fit_affine(rendered: &[f64], target: &[f64]) -> (f64, f64) {
    let n = rendered.len() as f64;
    let mr = rendered.iter().sum::<f64>() / n;
    let mt = target.iter().sum::<f64>() / n;
    let var = rendered.iter().map(|r| (r - mr) * (r - mr)).sum::<f64>() / n;
    if var < DEPTH_VAR_EPS {
        return (1.0, mt - mr);
    }
    let cov = rendered
        .iter()
        .zip(target)
        .map(|(r, t)| (r - mr) * (t - mt))
        .sum::<f64>()
        / n;
    let a = cov / var;
    (a, mt - a * mr)
}

/// Mean `|a D̂ + b - D|` over `region`, with `(a, b)` the least-squares
/// alignment of the rendered depth `D̂` to the prior `D`.
pub fn depth_loss(rendered: &Tensor, target: &Tensor, region: &Mask2D) -> Result<DepthLoss, LossError> {
    assert_eq!(
        (rendered.height(), rendered.width()),
        (target.height(), target.width()),
        "depth_loss: dimension mismatch"
    );
    let idx: Vec<usize> = (0..region.data().len()).filter(|&p| region.data()[p]).collect();
    if idx.is_empty() {
        return Err(LossError::EmptyRegion);
    }
    let r: Vec<f64> = idx.iter().map(|&p| rendered.data()[p]).collect();
    let t: Vec<f64> = idx.iter().map(|&p| target.data()[p]).collect();
    let nf = idx.len() as f64;
    let (a, b) = fit_affine(&r, &t);
    let signs: Vec<f64> = r
        .iter()
        .zip(&t)
        .map(|(rv, tv)| {
            let res = a * rv + b - tv;
            if res > 0.0 {
                1.0
            } else if res < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    let loss = r.iter().zip(&t).map(|(rv, tv)| (a * rv + b - tv).abs()).sum::<f64>() / nf;

    let mr = r.iter().sum::<f64>() / nf;
    let mt = t.iter().sum::<f64>() / nf;
    let var = r.iter().map(|v| (v - mr) * (v - mr)).sum::<f64>() / nf;
    let s0 = signs.iter().sum::<f64>() / nf;
    let s1 = signs.iter().zip(&r).map(|(s, v)| s * v).sum::<f64>() / nf;
    let mut adjoint = Tensor::zeros(&[rendered.height(), rendered.width()]);
    for (k, &p) in idx.iter().enumerate() {
        let mut g = a * signs[k] / nf;
        if var >= DEPTH_VAR_EPS {
            let da = ((t[k] - mt) - 2.0 * a * (r[k] - mr)) / (nf * var);
            let db = -da * mr - a / nf;
            g += s1 * da + s0 * db;
        }
        adjoint.data_mut()[p] = g;
    }
    Ok(DepthLoss { loss, a, b, adjoint })
}

#[derive(Clone, Debug)]
pub struct FlowLoss {
    pub loss: f64,
    /// Gradient with respect to each current screen position; zero for
    /// skipped points.
    pub adjoint: Vec<[f64; 2]>,
    pub used: usize,
}

/// Mean over points of `|r|² / 2`, `r = (curr - prev) - F(prev)`, with the
/// flow bilinearly sampled at the previous position. Points whose previous
/// position lies outside the flow grid are skipped.
pub fn flow_loss(curr: &[[f64; 2]], prev: &[[f64; 2]], flow: &Tensor) -> Result<FlowLoss, LossError> {
    assert_eq!(curr.len(), prev.len(), "flow_loss: length mismatch");
    let residuals: Vec<Option<[f64; 2]>> = curr
        .iter()
        .zip(prev)
        .map(|(c, p)| {
            flow.bilinear2(p[0], p[1])
                .map(|f| [c[0] - p[0] - f[0], c[1] - p[1] - f[1]])
        })
        .collect();
    let used = residuals.iter().flatten().count();
    if used == 0 {
        return Err(LossError::EmptyCluster);
    }
    let n = used as f64;
    let loss = residuals
        .iter()
        .flatten()
        .map(|r| 0.5 * (r[0] * r[0] + r[1] * r[1]))
        .sum::<f64>()
        / n;
    let adjoint = residuals
        .iter()
        .map(|r| r.map_or([0.0; 2], |r| [r[0] / n, r[1] / n]))
        .collect();
    Ok(FlowLoss { loss, adjoint, used })
}

/// Mean population standard deviation of each point's three scales, and
/// its gradient with respect to the log scales.
pub fn isotropic_loss(log_scales: &[[f64; 3]]) -> (f64, Vec<[f64; 3]>) {
    if log_scales.is_empty() {
        return (0.0, Vec::new());
    }
    let n = log_scales.len() as f64;
    let mut total = 0.0;
    let grads = log_scales
        .iter()
        .map(|ls| {
            let s = ls.map(f64::exp);
            let mean = (s[0] + s[1] + s[2]) / 3.0;
            // pairwise form: exactly zero iff the three scales are equal
            let var = ((s[0] - s[1]).powi(2) + (s[1] - s[2]).powi(2) + (s[2] - s[0]).powi(2)) / 9.0;
            let std = var.sqrt();
            total += std;
            if std == 0.0 {
                [0.0; 3]
            } else {
                s.map(|v| (v - mean) / (3.0 * std) * v / n)
            }
        })
        .collect();
    (total / n, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_sum_to_one() {
        let t = gaussian_taps();
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(t[0], t[10]);
    }

    #[test]
    fn identical_images_have_zero_photometric_loss() {
        let img = Tensor::from_fn(12, 15, 3, |y, x, c| ((y * 7 + x * 3 + c) % 11) as f64 / 10.0);
        let l = photometric_loss(&img, &img, None, 1.0).unwrap();
        assert_eq!(l.mse, 0.0);
        assert!(l.dssim.abs() < 1e-12);
    }

    #[test]
    fn all_excluded_is_an_error() {
        let img = Tensor::zeros(&[4, 4, 3]);
        let m = Mask2D::full(4, 4);
        assert_eq!(
            photometric_loss(&img, &img, Some(&m), 1.0).unwrap_err(),
            LossError::AllPixelsExcluded
        );
    }

    #[test]
    fn exact_affine_depth() {
        let r = Tensor::from_fn(6, 6, 1, |y, x, _| 1.0 + y as f64 * 0.3 + x as f64 * 0.1);
        let t = r.map(|v| 2.0 * v + 3.0);
        let l = depth_loss(&r, &t, &Mask2D::full(6, 6)).unwrap();
        assert!((l.a - 2.0).abs() < 1e-12 && (l.b - 3.0).abs() < 1e-12);
        assert!(l.loss < 1e-12);
    }

    #[test]
    fn constant_depth_fallback() {
        let r = Tensor::filled(&[3, 3], 2.0);
        let t = Tensor::filled(&[3, 3], 5.0);
        let l = depth_loss(&r, &t, &Mask2D::full(3, 3)).unwrap();
        assert_eq!((l.a, l.b, l.loss), (1.0, 3.0, 0.0));
    }

    #[test]
    fn single_point_flow_residual() {
        let flow = Tensor::zeros(&[4, 4, 2]);
        let l = flow_loss(&[[2.0, 3.0]], &[[1.0, 1.0]], &flow).unwrap();
        assert_eq!(l.loss, 2.5);
    }

    #[test]
    fn hand_evaluated_isotropy() {
        let (l, _) = isotropic_loss(&[[0.0, 0.0, 4f64.ln()]]);
        assert!((l - 2f64.sqrt()).abs() < 1e-12);
        let (l, g) = isotropic_loss(&[[0.3; 3], [-1.0; 3]]);
        assert_eq!(l, 0.0);
        assert_eq!(g, vec![[0.0; 3]; 2]);
    }
}
