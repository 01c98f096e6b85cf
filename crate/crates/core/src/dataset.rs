//! Frame-directory datasets.
//!
//! ```text
//! intrinsics.txt            fx fy cx cy width height
//! frames/frame_%04d.png     RGB frames (GFT1 .gft accepted too)
//! depth/depth_%04d.gft      H x W prior depth, one per frame
//! flow/fwd_%04d.gft         H x W x 2 flow from frame t to t+1
//! flow/bwd_%04d.gft         H x W x 2 flow from frame t to t-1
//! ```
//!
//! Synthetic datasets add `gt/trajectory.txt`, `gt/masks/mask_%04d.png`,
//! `scene.txt` and a suggested `config.txt`.

use std::path::{Path, PathBuf};

use crate::camera::Intrinsics;
use crate::error::{DataError, Error, Result};
use crate::io::{load_image, load_tensor, read_text, save_png, save_tensor, write_text};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Dataset {
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
    pub frames: Vec<Tensor>,
    pub depths: Vec<Tensor>,
    /// `fwd[t]`: flow from frame `t` to `t + 1`.
    pub fwd: Vec<Tensor>,
    /// `bwd[t - 1]`: flow from frame `t` to `t - 1`.
    pub bwd: Vec<Tensor>,
}

pub fn frame_path(dir: &Path, t: usize) -> PathBuf {
    dir.join("frames").join(format!("frame_{t:04}.png"))
}

pub fn depth_path(dir: &Path, t: usize) -> PathBuf {
    dir.join("depth").join(format!("depth_{t:04}.gft"))
}

pub fn fwd_path(dir: &Path, t: usize) -> PathBuf {
    dir.join("flow").join(format!("fwd_{t:04}.gft"))
}

pub fn bwd_path(dir: &Path, t: usize) -> PathBuf {
    dir.join("flow").join(format!("bwd_{t:04}.gft"))
}

pub fn mask_path(dir: &Path, t: usize) -> PathBuf {
    dir.join("gt").join("masks").join(format!("mask_{t:04}.png"))
}

pub fn parse_intrinsics(text: &str, origin: &str) -> Result<(Intrinsics, usize, usize), DataError> {
    let line = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .unwrap_or("");
    let v: Vec<&str> = line.split_whitespace().collect();
    let parse_err = |msg: String| DataError::Parse {
        origin: origin.to_string(),
        line: 1,
        msg,
    };
    if v.len() != 6 {
        return Err(parse_err(format!(
            "expected `fx fy cx cy width height`, found {} fields",
            v.len()
        )));
    }
    let f: Vec<f64> = v[..4]
        .iter()
        .map(|s| s.parse::<f64>().map_err(|e| parse_err(e.to_string())))
        .collect::<Result<_, _>>()?;
    let w = v[4].parse::<usize>().map_err(|e| parse_err(e.to_string()))?;
    let h = v[5].parse::<usize>().map_err(|e| parse_err(e.to_string()))?;
    let k = Intrinsics::new(f[0], f[1], f[2], f[3]);
    k.validate(w, h)?;
    Ok((k, w, h))
}

pub fn intrinsics_text(k: &Intrinsics, width: usize, height: usize) -> String {
    format!("{} {} {} {} {} {}\n", k.fx, k.fy, k.cx, k.cy, width, height)
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingFile(path))
    }
}

fn check_dims(t: &Tensor, h: usize, w: usize, c: usize, what: &Path) -> Result<(), DataError> {
    if t.height() != h || t.width() != w || t.channels() != c {
        return Err(DataError::Parse {
            origin: what.display().to_string(),
            line: 0,
            msg: format!("expected {h}x{w}x{c}, found {:?}", t.shape()),
        });
    }
    Ok(())
}

/// Bilinear resampling with pixel centers aligned; `factor < 1` averages
/// over a supersampled footprint.
pub fn resample(t: &Tensor, new_h: usize, new_w: usize) -> Tensor {
    let (h, w, c) = (t.height(), t.width(), t.channels());
    let fy = new_h as f64 / h as f64;
    let fx = new_w as f64 / w as f64;
    let ky = (1.0 / fy).ceil().max(1.0) as usize;
    let kx = (1.0 / fx).ceil().max(1.0) as usize;
    let sample = |x: f64, y: f64, ch: usize| {
        let x = x.clamp(0.0, (w - 1) as f64);
        let y = y.clamp(0.0, (h - 1) as f64);
        t.bilinear(x, y, ch).unwrap_or(0.0)
    };
    let out = Tensor::from_fn(new_h, new_w, c, |y, x, ch| {
        let mut acc = 0.0;
        for sy in 0..ky {
            for sx in 0..kx {
                let yy = (y as f64 + (sy as f64 + 0.5) / ky as f64) / fy - 0.5;
                let xx = (x as f64 + (sx as f64 + 0.5) / kx as f64) / fx - 0.5;
                acc += sample(xx, yy, ch);
            }
        }
        acc / (kx * ky) as f64
    });
    if c == 1 && t.rank() == 2 {
        out
    } else {
        Tensor::from_vec(vec![new_h, new_w, c], out.into_data()).expect("same size")
    }
}

fn resample_flow(f: &Tensor, new_h: usize, new_w: usize) -> Tensor {
    let sx = new_w as f64 / f.width() as f64;
    let sy = new_h as f64 / f.height() as f64;
    let r = resample(f, new_h, new_w);
    Tensor::from_fn(new_h, new_w, 2, |y, x, c| r.at(y, x, c) * if c == 0 { sx } else { sy })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Loads a dataset, resizing so the shorter side equals `short_side`
    /// (0 keeps the native size).
    pub fn load(dir: &Path, short_side: usize) -> Result<Self> {
        let kpath = require(dir.join("intrinsics.txt"))?;
        let (intrinsics, width, height) = parse_intrinsics(&read_text(&kpath)?, &kpath.display().to_string())?;
        let mut frames = Vec::new();
        loop {
            let t = frames.len();
            let png = frame_path(dir, t);
            let gft = png.with_extension("gft");
            let path = if png.exists() {
                png
            } else if gft.exists() {
                gft
            } else {
                break;
            };
            let img = load_image(&path)?;
            check_dims(&img, height, width, 3, &path)?;
            frames.push(img);
        }
        if frames.is_empty() {
            return Err(Error::MissingFile(frame_path(dir, 0)));
        }
        let n = frames.len();
        let mut depths = Vec::with_capacity(n);
        let mut fwd = Vec::with_capacity(n.saturating_sub(1));
        let mut bwd = Vec::with_capacity(n.saturating_sub(1));
        for t in 0..n {
            let p = require(depth_path(dir, t))?;
            let d = load_tensor(&p)?;
            check_dims(&d, height, width, 1, &p)?;
            depths.push(d);
            if t + 1 < n {
                let p = require(fwd_path(dir, t))?;
                let f = load_tensor(&p)?;
                check_dims(&f, height, width, 2, &p)?;
                fwd.push(f);
            }
            if t > 0 {
                let p = require(bwd_path(dir, t))?;
                let f = load_tensor(&p)?;
                check_dims(&f, height, width, 2, &p)?;
                bwd.push(f);
            }
        }
        let mut ds = Dataset {
            intrinsics,
            width,
            height,
            frames,
            depths,
            fwd,
            bwd,
        };
        if short_side > 0 && short_side != width.min(height) {
            ds = ds.resized(short_side);
        }
        Ok(ds)
    }

    pub fn resized(&self, short_side: usize) -> Self {
        let factor = short_side as f64 / self.width.min(self.height) as f64;
        let nw = ((self.width as f64 * factor).round() as usize).max(1);
        let nh = ((self.height as f64 * factor).round() as usize).max(1);
        Dataset {
            intrinsics: self.intrinsics.scaled(factor),
            width: nw,
            height: nh,
            frames: self.frames.iter().map(|f| resample(f, nh, nw)).collect(),
            depths: self.depths.iter().map(|d| resample(d, nh, nw)).collect(),
            fwd: self.fwd.iter().map(|f| resample_flow(f, nh, nw)).collect(),
            bwd: self.bwd.iter().map(|f| resample_flow(f, nh, nw)).collect(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_text(
            &dir.join("intrinsics.txt"),
            &intrinsics_text(&self.intrinsics, self.width, self.height),
        )?;
        for t in 0..self.len() {
            save_png(&frame_path(dir, t), &self.frames[t])?;
            save_tensor(&depth_path(dir, t), &self.depths[t])?;
        }
        for (t, f) in self.fwd.iter().enumerate() {
            save_tensor(&fwd_path(dir, t), f)?;
        }
        for (t, f) in self.bwd.iter().enumerate() {
            save_tensor(&bwd_path(dir, t + 1), f)?;
        }
        Ok(())
    }

    /// Flow from frame `t` to `t - 1`.
    pub fn bwd_of(&self, t: usize) -> &Tensor {
        &self.bwd[t - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intrinsics_round_trip() {
        let k = Intrinsics::new(120.0, 121.5, 79.5, 47.5);
        let (k2, w, h) = parse_intrinsics(&intrinsics_text(&k, 160, 96), "t").unwrap();
        assert_eq!((k2, w, h), (k, 160, 96));
        assert!(parse_intrinsics("1 2 3", "t").is_err());
    }

    #[test]
    fn identity_resample() {
        let t = Tensor::from_fn(5, 7, 3, |y, x, c| (y * 7 + x + c) as f64);
        assert_eq!(resample(&t, 5, 7), t);
    }

    #[test]
    fn downsample_averages_blocks() {
        let t = Tensor::from_fn(4, 4, 1, |y, x, _| ((y / 2) * 2 + x / 2) as f64);
        let r = resample(&t, 2, 2);
        assert_eq!(r.data(), &[0.0, 1.0, 2.0, 3.0]);
    }
}
