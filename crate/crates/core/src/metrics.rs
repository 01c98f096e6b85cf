//! Image and trajectory metrics.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use crate::camera::{Extrinsics, Trajectory};
use crate::error::AppError;
use crate::tensor::{Mask2D, Tensor};

pub use crate::loss::ssim;

pub const PSNR_CAP: f64 = 99.0;

fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64, AppError> {
    if !a.same_dims(b) {
        return Err(AppError::DimMismatch(a.shape().to_vec(), b.shape().to_vec()));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    Ok(psnr_from_mse(mse))
}

/// PSNR over the pixels set in `mask` (all channels).
pub fn psnr_masked(a: &Tensor, b: &Tensor, mask: &Mask2D) -> f64 {
    let ch = a.channels();
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, &m) in mask.data().iter().enumerate() {
        if m {
            for c in 0..ch {
                let d = a.data()[p * ch + c] - b.data()[p * ch + c];
                sum += d * d;
            }
            n += ch;
        }
    }
    if n == 0 {
        return PSNR_CAP;
    }
    psnr_from_mse(sum / n as f64)
}

/// Similarity `y ≈ s R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sim3 {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Sim3 {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.scale * self.rotation * x + self.translation
    }
}

/// Least-squares similarity aligning `src` onto `dst` (Umeyama).
pub fn umeyama(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Sim3 {
    let n = src.len() as f64;
    if src.is_empty() {
        return Sim3::identity();
    }
    let ms = src.iter().sum::<Vector3<f64>>() / n;
    let md = dst.iter().sum::<Vector3<f64>>() / n;
    let var_s = src.iter().map(|x| (x - ms).norm_squared()).sum::<f64>() / n;
    if var_s < 1e-300 {
        return Sim3 {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: md - ms,
        };
    }
    let cov = src
        .iter()
        .zip(dst)
        .map(|(x, y)| (y - md) * (x - ms).transpose())
        .sum::<Matrix3<f64>>()
        / n;
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Matrix3::identity();
    if (u.determinant() * vt.determinant()) < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * vt;
    let d = svd.singular_values;
    let trace = d[0] * s[(0, 0)] + d[1] * s[(1, 1)] + d[2] * s[(2, 2)];
    let scale = trace / var_s;
    Sim3 {
        scale,
        rotation,
        translation: md - scale * rotation * ms,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseErrorReport {
    /// RMSE of aligned camera centers.
    pub ate: f64,
    /// Per consecutive pair, after alignment.
    pub rpe_t: Vec<f64>,
    /// Per consecutive pair, degrees.
    pub rpe_r: Vec<f64>,
    pub alignment: Sim3,
}

impl PoseErrorReport {
    pub fn mean_rpe_t(&self) -> f64 {
        mean(&self.rpe_t)
    }

    pub fn mean_rpe_r(&self) -> f64 {
        mean(&self.rpe_r)
    }

    pub fn max_rpe_r(&self) -> f64 {
        self.rpe_r.iter().copied().fold(0.0, f64::max)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Camera-to-world pose as (orientation, center).
fn c2w(e: &Extrinsics) -> (UnitQuaternion<f64>, Vector3<f64>) {
    (e.orientation(), e.center())
}

/// Sim(3)-aligned ATE and consecutive-pair RPE.
pub fn pose_errors(est: &Trajectory, gt: &Trajectory) -> Result<PoseErrorReport, AppError> {
    if est.len() != gt.len() {
        return Err(AppError::LengthMismatch(est.len(), gt.len()));
    }
    let e: Vec<_> = est.poses().iter().map(|(_, p)| c2w(p)).collect();
    let g: Vec<_> = gt.poses().iter().map(|(_, p)| c2w(p)).collect();
    let src: Vec<Vector3<f64>> = e.iter().map(|p| p.1).collect();
    let dst: Vec<Vector3<f64>> = g.iter().map(|p| p.1).collect();
    let align = umeyama(&src, &dst);
    let ate = if src.is_empty() {
        0.0
    } else {
        (src.iter()
            .zip(&dst)
            .map(|(x, y)| (align.apply(x) - y).norm_squared())
            .sum::<f64>()
            / src.len() as f64)
            .sqrt()
    };
    let r_align = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(align.rotation));
    let aligned: Vec<(UnitQuaternion<f64>, Vector3<f64>)> =
        e.iter().map(|(q, c)| (r_align * q, align.apply(c))).collect();
    let mut rpe_t = Vec::new();
    let mut rpe_r = Vec::new();
    for i in 1..aligned.len() {
        let rel = |a: &(UnitQuaternion<f64>, Vector3<f64>), b: &(UnitQuaternion<f64>, Vector3<f64>)| {
            (a.0.inverse() * b.0, a.0.inverse() * (b.1 - a.1))
        };
        let (re, te) = rel(&aligned[i - 1], &aligned[i]);
        let (rg, tg) = rel(&g[i - 1], &g[i]);
        let dr = rg.inverse() * re;
        let dt = rg.inverse() * (te - tg);
        rpe_t.push(dt.norm());
        rpe_r.push(dr.angle().to_degrees());
    }
    Ok(PoseErrorReport {
        ate,
        rpe_t,
        rpe_r,
        alignment: align,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_values() {
        let a = Tensor::filled(&[4, 4, 3], 0.5);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &Tensor::zeros(&[4, 5, 3])).is_err());
    }
}
