//! Engine configuration as a flat `key=value` map.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::DataError;
use crate::io::{parse_key_values, read_text};

/// How the pose of frame `t` is seeded before camera optimization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CameraInit {
    /// `E_t = E_{t-1}`.
    Constant,
    /// `E_t = (E_{t-1} E_{t-2}^-1) E_{t-1}`.
    Velocity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub n_ini: usize,
    pub lambda_p: f64,
    pub lambda_d: f64,
    pub lambda_f: f64,
    pub lambda_i: f64,
    pub lr_gauss: f64,
    pub lr_cam: f64,
    pub iters_first: usize,
    pub iters_cam: usize,
    pub iters_gauss: usize,
    pub densify_steps_first: Vec<usize>,
    pub densify_steps: Vec<usize>,
    pub err_threshold: f64,
    pub epipolar_threshold: f64,
    pub fb_threshold: f64,
    pub seed: u64,
    /// Multiplier on the initial screen-space footprint of new points.
    pub scale_gain: f64,
    /// Weight of the `1 - SSIM` term relative to MSE in the photometric loss.
    pub ssim_weight: f64,
    pub background: [f64; 3],
    pub camera_init: CameraInit,
    /// Opacity below which points are pruned after each frame; 0 disables.
    pub prune_opacity: f64,
    /// Shortest image side after ingest resizing; 0 keeps native size.
    pub short_side: usize,
    /// Minimum transmittance at a point's own center for it to count as visible.
    pub visibility_threshold: f64,
    /// Minimum center transmittance for a point to carry a flow-loss target.
    pub flow_visibility: f64,
    /// Stride of the correspondence grid used for fundamental-matrix fitting.
    pub fmatrix_stride: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            n_ini: 50_000,
            lambda_p: 1.0,
            lambda_d: 0.1,
            lambda_f: 0.01,
            lambda_i: 50.0,
            lr_gauss: 4e-3,
            lr_cam: 1e-3,
            iters_first: 500,
            iters_cam: 150,
            iters_gauss: 300,
            densify_steps_first: vec![150, 300],
            densify_steps: vec![100, 200],
            err_threshold: 0.01,
            epipolar_threshold: 0.01,
            fb_threshold: 1.0,
            seed: 0,
            scale_gain: 0.7,
            ssim_weight: 1.0,
            background: [0.0; 3],
            camera_init: CameraInit::Constant,
            prune_opacity: 0.0,
            short_side: 480,
            visibility_threshold: 0.05,
            flow_visibility: 0.5,
            fmatrix_stride: 8,
        }
    }
}

/// Every configuration key with a one-line description, in file order.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    (
        "n_ini",
        "number of points created by initialization; densification counts scale with it",
    ),
    ("lambda_p", "photometric loss weight"),
    ("lambda_d", "depth loss weight"),
    ("lambda_f", "flow loss weight"),
    ("lambda_i", "isotropic scale loss weight"),
    ("lr_gauss", "Adam step size for point parameters"),
    ("lr_cam", "Adam step size for the camera tangent"),
    ("iters_first", "iterations for the first frame"),
    ("iters_cam", "camera iterations per later frame"),
    ("iters_gauss", "point iterations per later frame"),
    (
        "densify_steps_first",
        "error-driven densification iterations in the first frame",
    ),
    ("densify_steps", "error-driven densification iterations in later frames"),
    ("err_threshold", "photometric error threshold for densification"),
    ("epipolar_threshold", "epipolar error threshold for the moving mask"),
    ("fb_threshold", "forward-backward flow consistency threshold in pixels"),
    ("seed", "random seed"),
    ("scale_gain", "initial footprint multiplier for new points"),
    ("ssim_weight", "weight of the 1-SSIM term next to MSE"),
    ("background", "background color r,g,b"),
    ("camera_init", "pose seed for a new frame: constant | velocity"),
    (
        "prune_opacity",
        "prune points below this opacity after each frame (0 = off)",
    ),
    (
        "short_side",
        "resize frames so the shortest side has this many pixels (0 = native)",
    ),
    (
        "visibility_threshold",
        "center transmittance needed for a point to be visible",
    ),
    (
        "flow_visibility",
        "center transmittance needed for a point to carry a flow target",
    ),
    ("fmatrix_stride", "grid stride for fundamental-matrix correspondences"),
];

fn parse_list(v: &str) -> Result<Vec<usize>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|e| e.to_string()))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self, DataError> {
        let text = read_text(path)?;
        Self::from_text(&text, &path.display().to_string())
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self, DataError> {
        let mut cfg = Config::default();
        for (k, v) in parse_key_values(text, origin)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), DataError> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, DataError>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>()
                .map_err(|e| DataError::InvalidConfig(format!("{key}={v}: {e}")))
        }
        match key {
            "n_ini" => self.n_ini = num(key, value)?,
            "lambda_p" => self.lambda_p = num(key, value)?,
            "lambda_d" => self.lambda_d = num(key, value)?,
            "lambda_f" => self.lambda_f = num(key, value)?,
            "lambda_i" => self.lambda_i = num(key, value)?,
            "lr_gauss" => self.lr_gauss = num(key, value)?,
            "lr_cam" => self.lr_cam = num(key, value)?,
            "iters_first" => self.iters_first = num(key, value)?,
            "iters_cam" => self.iters_cam = num(key, value)?,
            "iters_gauss" => self.iters_gauss = num(key, value)?,
            "densify_steps_first" => {
                self.densify_steps_first =
                    parse_list(value).map_err(|e| DataError::InvalidConfig(format!("{key}: {e}")))?
            }
            "densify_steps" => {
                self.densify_steps = parse_list(value).map_err(|e| DataError::InvalidConfig(format!("{key}: {e}")))?
            }
            "err_threshold" => self.err_threshold = num(key, value)?,
            "epipolar_threshold" => self.epipolar_threshold = num(key, value)?,
            "fb_threshold" => self.fb_threshold = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "scale_gain" => self.scale_gain = num(key, value)?,
            "ssim_weight" => self.ssim_weight = num(key, value)?,
            "background" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|s| num::<f64>(key, s.trim()))
                    .collect::<Result<_, _>>()?;
                if parts.len() != 3 {
                    return Err(DataError::InvalidConfig(format!("{key} needs r,g,b")));
                }
                self.background = [parts[0], parts[1], parts[2]];
            }
            "camera_init" => {
                self.camera_init = match value {
                    "constant" => CameraInit::Constant,
                    "velocity" => CameraInit::Velocity,
                    other => {
                        return Err(DataError::InvalidConfig(format!(
                            "camera_init must be constant or velocity, got {other}"
                        )))
                    }
                }
            }
            "prune_opacity" => self.prune_opacity = num(key, value)?,
            "short_side" => self.short_side = num(key, value)?,
            "visibility_threshold" => self.visibility_threshold = num(key, value)?,
            "flow_visibility" => self.flow_visibility = num(key, value)?,
            "fmatrix_stride" => self.fmatrix_stride = num(key, value)?,
            other => return Err(DataError::InvalidConfig(format!("unknown key {other}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "n_ini" => self.n_ini.to_string(),
            "lambda_p" => self.lambda_p.to_string(),
            "lambda_d" => self.lambda_d.to_string(),
            "lambda_f" => self.lambda_f.to_string(),
            "lambda_i" => self.lambda_i.to_string(),
            "lr_gauss" => self.lr_gauss.to_string(),
            "lr_cam" => self.lr_cam.to_string(),
            "iters_first" => self.iters_first.to_string(),
            "iters_cam" => self.iters_cam.to_string(),
            "iters_gauss" => self.iters_gauss.to_string(),
            "densify_steps_first" => join(&self.densify_steps_first),
            "densify_steps" => join(&self.densify_steps),
            "err_threshold" => self.err_threshold.to_string(),
            "epipolar_threshold" => self.epipolar_threshold.to_string(),
            "fb_threshold" => self.fb_threshold.to_string(),
            "seed" => self.seed.to_string(),
            "scale_gain" => self.scale_gain.to_string(),
            "ssim_weight" => self.ssim_weight.to_string(),
            "background" => join(&self.background),
            "camera_init" => match self.camera_init {
                CameraInit::Constant => "constant".into(),
                CameraInit::Velocity => "velocity".into(),
            },
            "prune_opacity" => self.prune_opacity.to_string(),
            "short_side" => self.short_side.to_string(),
            "visibility_threshold" => self.visibility_threshold.to_string(),
            "flow_visibility" => self.flow_visibility.to_string(),
            "fmatrix_stride" => self.fmatrix_stride.to_string(),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidConfig(m.to_string()));
        if self.n_ini == 0
            || self.iters_first == 0
            || self.iters_cam == 0
            || self.iters_gauss == 0
            || self.fmatrix_stride == 0
        {
            return bad("all counts must be > 0");
        }
        if !(self.err_threshold > 0.0 && self.epipolar_threshold > 0.0 && self.fb_threshold > 0.0) {
            return bad("thresholds must be > 0");
        }
        let weights = [
            self.lambda_p,
            self.lambda_d,
            self.lambda_f,
            self.lambda_i,
            self.ssim_weight,
        ];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return bad("loss weights must be >= 0");
        }
        if !(self.lr_gauss > 0.0 && self.lr_cam > 0.0 && self.scale_gain > 0.0) {
            return bad("step sizes and scale_gain must be > 0");
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return bad("background must lie in [0,1]");
        }
        Ok(())
    }

    /// Serializes every key in `CONFIG_KEYS` order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, _) in CONFIG_KEYS {
            let _ = writeln!(s, "{k}={}", self.get(k).unwrap_or_default());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_settings() {
        let c = Config::default();
        assert_eq!(c.n_ini, 50_000);
        assert_eq!((c.lambda_p, c.lambda_d, c.lambda_f, c.lambda_i), (1.0, 0.1, 0.01, 50.0));
        assert_eq!((c.lr_gauss, c.lr_cam), (4e-3, 1e-3));
        assert_eq!((c.iters_first, c.iters_cam, c.iters_gauss), (500, 150, 300));
        assert_eq!(c.densify_steps_first, vec![150, 300]);
        assert_eq!(c.densify_steps, vec![100, 200]);
        assert_eq!((c.err_threshold, c.epipolar_threshold), (0.01, 0.01));
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let c = Config {
            seed: 9,
            background: [0.5, 0.25, 1.0],
            camera_init: CameraInit::Velocity,
            densify_steps: vec![],
            ..Config::default()
        };
        let back = Config::from_text(&c.to_text(), "mem").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn every_key_is_gettable() {
        let c = Config::default();
        for (k, _) in CONFIG_KEYS {
            assert!(c.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(Config::from_text("n_ini=0", "t").is_err());
        assert!(Config::from_text("err_threshold=-1", "t").is_err());
        assert!(Config::from_text("lambda_d=-0.1", "t").is_err());
        assert!(Config::from_text("nope=1", "t").is_err());
    }
}
