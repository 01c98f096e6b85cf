//! Pinhole projection and optimizable extrinsics.
//!
//! Conventions: camera looks down +z, x right, y down. Pixel `(u, v)` has its
//! center at integer coordinates. Extrinsics map world to camera,
//! `X_c = R X_w + t`. The world frame is the first camera's frame.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};

use crate::error::{CameraError, DataError};
use crate::io::{read_text, write_text};

/// Minimum camera-frame depth for a point to be projectable.
pub const EPS_Z: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy }
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<(), DataError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && (0.0..width as f64).contains(&self.cx)
            && (0.0..height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(DataError::InvalidConfig(format!(
                "intrinsics {self:?} invalid for {width}x{height}"
            )))
        }
    }

    /// Intrinsics after resizing the image by `factor` (pixel centers kept).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            fx: self.fx * factor,
            fy: self.fy * factor,
            cx: (self.cx + 0.5) * factor - 0.5,
            cy: (self.cy + 0.5) * factor - 0.5,
        }
    }

    /// Pixel to normalized image coordinates (`K^-1 x`).
    pub fn normalize(&self, x: f64, y: f64) -> [f64; 2] {
        [(x - self.cx) / self.fx, (y - self.cy) / self.fy]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extrinsics {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Extrinsics {
    fn default() -> Self {
        Self::identity()
    }
}

impl Extrinsics {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// Builds world-to-camera extrinsics from a camera pose in the world.
    pub fn from_camera_to_world(orientation: UnitQuaternion<f64>, center: Vector3<f64>) -> Self {
        let rotation = orientation.inverse();
        Self {
            rotation,
            translation: -(rotation * center),
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    #[inline]
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    /// Camera-to-world orientation.
    pub fn orientation(&self) -> UnitQuaternion<f64> {
        self.rotation.inverse()
    }

    pub fn inverse(&self) -> Self {
        let r = self.rotation.inverse();
        Self {
            rotation: r,
            translation: -(r * self.translation),
        }
    }

    /// `self ∘ other`: apply `other`, then `self`.
    pub fn compose(&self, other: &Extrinsics) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Applies a tangent increment `[ω; v]`: `R <- exp(ω) R`, `t <- t + v`.
    ///
    /// The rotation increment acts in the camera frame, so the camera-space
    /// point moves by `ω x (R X) + v` to first order.
    pub fn retract(&self, delta: &[f64; 6]) -> Self {
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let q = UnitQuaternion::from_scaled_axis(omega) * self.rotation;
        Self {
            rotation: UnitQuaternion::new_normalize(q.into_inner()),
            translation: self.translation + Vector3::new(delta[3], delta[4], delta[5]),
        }
    }

    /// Rounds rotation and translation to `f32` precision.
    pub fn to_f32_precision(&self) -> Self {
        let q = self.rotation.quaternion();
        let r = |v: f64| v as f32 as f64;
        Self {
            rotation: UnitQuaternion::new_unchecked(Quaternion::new(r(q.w), r(q.i), r(q.j), r(q.k))),
            translation: self.translation.map(r),
        }
    }

    /// Uniform scaling of the scene: `X -> s X` keeps projections fixed.
    pub fn scaled_scene(&self, s: f64) -> Self {
        Self {
            rotation: self.rotation,
            translation: self.translation * s,
        }
    }
}

/// Projects a world point to pixel coordinates and camera depth.
pub fn project(mu: &Vector3<f64>, k: &Intrinsics, e: &Extrinsics) -> Result<(Vector2<f64>, f64), CameraError> {
    let pc = e.transform(mu);
    if pc.z <= EPS_Z {
        return Err(CameraError::BehindCamera(pc.z));
    }
    Ok((Vector2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy), pc.z))
}

/// Lifts a pixel with camera depth `d` to a world point.
pub fn unproject(x: &Vector2<f64>, d: f64, k: &Intrinsics, e: &Extrinsics) -> Result<Vector3<f64>, CameraError> {
    if !(d > 0.0) {
        return Err(CameraError::NonPositiveDepth(d));
    }
    let pc = Vector3::new((x.x - k.cx) / k.fx * d, (x.y - k.cy) / k.fy * d, d);
    Ok(e.rotation.inverse() * (pc - e.translation))
}

/// Intrinsics, pose and image size: everything needed to render a view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, extrinsics: Extrinsics, width: usize, height: usize) -> Self {
        Self {
            intrinsics,
            extrinsics,
            width,
            height,
        }
    }

    pub fn with_extrinsics(&self, extrinsics: Extrinsics) -> Self {
        Self { extrinsics, ..*self }
    }

    pub fn project(&self, mu: &Vector3<f64>) -> Result<(Vector2<f64>, f64), CameraError> {
        project(mu, &self.intrinsics, &self.extrinsics)
    }

    pub fn unproject(&self, x: &Vector2<f64>, d: f64) -> Result<Vector3<f64>, CameraError> {
        unproject(x, d, &self.intrinsics, &self.extrinsics)
    }

    pub fn in_image(&self, x: f64, y: f64) -> bool {
        x >= -0.5 && y >= -0.5 && x < self.width as f64 - 0.5 && y < self.height as f64 - 0.5
    }
}

/// Time-indexed camera poses with contiguous, increasing frame indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    poses: Vec<(usize, Extrinsics)>,
}

const TRAJECTORY_HEADER: &str = "# idx tx ty tz qx qy qz qw\n\
# camera-to-world: (tx,ty,tz) is the camera center and q its orientation in world coordinates\n";

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_poses(poses: Vec<(usize, Extrinsics)>) -> Result<Self, DataError> {
        let mut t = Trajectory::new();
        for (i, e) in poses {
            t.push(i, e)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, frame: usize, e: Extrinsics) -> Result<(), DataError> {
        if let Some(&(last, _)) = self.poses.last() {
            if frame != last + 1 {
                return Err(DataError::InvalidConfig(format!(
                    "trajectory frames must be contiguous: {last} then {frame}"
                )));
            }
        }
        self.poses.push((frame, e));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn poses(&self) -> &[(usize, Extrinsics)] {
        &self.poses
    }

    pub fn get(&self, frame: usize) -> Option<&Extrinsics> {
        let first = self.poses.first()?.0;
        self.poses.get(frame.checked_sub(first)?).map(|(_, e)| e)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from(TRAJECTORY_HEADER);
        for (i, e) in &self.poses {
            let c = e.center();
            let q = e.orientation();
            let q = q.quaternion();
            let _ = writeln!(s, "{i} {} {} {} {} {} {} {}", c.x, c.y, c.z, q.i, q.j, q.k, q.w);
        }
        s
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self, DataError> {
        let mut t = Trajectory::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (idx, e) = parse_pose_line(line).map_err(|msg| DataError::Parse {
                origin: origin.to_string(),
                line: n + 1,
                msg,
            })?;
            t.push(idx, e)?;
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        write_text(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        Self::from_text(&read_text(path)?, &path.display().to_string())
    }
}

/// Parses one `idx tx ty tz qx qy qz qw` camera-to-world line.
pub fn parse_pose_line(line: &str) -> Result<(usize, Extrinsics), String> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 8 {
        return Err(format!("expected 8 fields, found {}", parts.len()));
    }
    let idx = parts[0].parse::<usize>().map_err(|e| e.to_string())?;
    let v: Vec<f64> = parts[1..]
        .iter()
        .map(|p| p.parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let q = Quaternion::new(v[6], v[3], v[4], v[5]);
    if q.norm() < 1e-12 {
        return Err("zero quaternion".into());
    }
    let e = Extrinsics::from_camera_to_world(UnitQuaternion::new_normalize(q), Vector3::new(v[0], v[1], v[2]));
    Ok((idx, e))
}
