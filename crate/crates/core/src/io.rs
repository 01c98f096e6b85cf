//! On-disk formats: `GFT1` tensors and 8-bit PNG images/masks.
//!
//! `GFT1` layout: magic `b"GFT1"`, `u8` rank, `rank` little-endian `u32`
//! dims, then the little-endian `f32` payload (row-major, channel-last).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::DataError;
use crate::tensor::{Mask2D, Tensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"GFT1";

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + 4 * t.rank() + 4 * t.data().len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8], origin: &str) -> Result<Tensor, DataError> {
    if bytes.len() < 5 || &bytes[..4] != TENSOR_MAGIC {
        return Err(DataError::BadMagic(origin.to_string()));
    }
    let rank = bytes[4] as usize;
    let header = 5 + 4 * rank;
    if rank == 0 || bytes.len() < header {
        return Err(DataError::DimMismatch {
            expected: header,
            found: bytes.len(),
        });
    }
    let shape: Vec<usize> = bytes[5..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count: usize = shape.iter().product();
    let payload = &bytes[header..];
    if payload.len() != 4 * count {
        return Err(DataError::DimMismatch {
            expected: count,
            found: payload.len() / 4,
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::from_vec(shape, data)
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<(), DataError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| DataError::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    f.write_all(&encode_tensor(t)).map_err(|e| DataError::io(path, e))
}

pub fn load_tensor(path: &Path) -> Result<Tensor, DataError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| DataError::io(path, e))?;
    decode_tensor(&bytes, &path.display().to_string())
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an RGB (3-channel) or grayscale (1-channel) tensor in `[0,1]` as PNG.
pub fn save_png(path: &Path, t: &Tensor) -> Result<(), DataError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| DataError::io(parent, e))?;
    }
    let (h, w) = (t.height() as u32, t.width() as u32);
    let res = match t.channels() {
        1 => image::GrayImage::from_fn(w, h, |x, y| image::Luma([to_u8(t.at(y as usize, x as usize, 0))])).save(path),
        _ => image::RgbImage::from_fn(w, h, |x, y| {
            let (yy, xx) = (y as usize, x as usize);
            image::Rgb([to_u8(t.at(yy, xx, 0)), to_u8(t.at(yy, xx, 1)), to_u8(t.at(yy, xx, 2))])
        })
        .save(path),
    };
    res.map_err(|e| DataError::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Loads an 8-bit PNG as an RGB tensor in `[0,1]`.
pub fn load_png_rgb(path: &Path) -> Result<Tensor, DataError> {
    let img = image::open(path)
        .map_err(|e| DataError::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Tensor::from_fn(h as usize, w as usize, 3, |y, x, c| {
        img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
    }))
}

/// Loads an image from either PNG or `GFT1` (by extension).
pub fn load_image(path: &Path) -> Result<Tensor, DataError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") | Some("PNG") => load_png_rgb(path),
        _ => load_tensor(path),
    }
}

pub fn save_mask_png(path: &Path, m: &Mask2D) -> Result<(), DataError> {
    let t = Tensor::from_fn(m.height(), m.width(), 1, |y, x, _| if m.get(y, x) { 1.0 } else { 0.0 });
    save_png(path, &t)
}

/// Any non-zero luminance counts as set.
pub fn load_mask_png(path: &Path) -> Result<Mask2D, DataError> {
    let img = image::open(path)
        .map_err(|e| DataError::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok(Mask2D::from_fn(h as usize, w as usize, |y, x| {
        img.get_pixel(x as u32, y as u32)[0] > 0
    }))
}

/// Parses `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_key_values(text: &str, origin: &str) -> Result<Vec<(String, String)>, DataError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| DataError::Parse {
            origin: origin.to_string(),
            line: i + 1,
            msg: format!("expected key=value, got {line:?}"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_text(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|e| DataError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), DataError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| DataError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| DataError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_exact() {
        let t = Tensor::from_vec(vec![2, 2], vec![0.1f32 as f64, -3.5, 1e-7f32 as f64, 42.0]).unwrap();
        let bytes = encode_tensor(&t);
        let back = decode_tensor(&bytes, "mem").unwrap();
        assert_eq!(back, t);
        assert_eq!(encode_tensor(&back), bytes);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let mut bytes = encode_tensor(&Tensor::zeros(&[2, 2]));
        bytes[0] = b'X';
        assert!(matches!(decode_tensor(&bytes, "mem"), Err(DataError::BadMagic(_))));
    }

    #[test]
    fn nan_payload_is_rejected() {
        let mut bytes = encode_tensor(&Tensor::zeros(&[2, 2]));
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_tensor(&bytes, "mem"), Err(DataError::NonFiniteData)));
    }

    #[test]
    fn truncated_payload_is_dim_mismatch() {
        let bytes = encode_tensor(&Tensor::zeros(&[2, 3, 2]));
        assert!(matches!(
            decode_tensor(&bytes[..bytes.len() - 4], "mem"),
            Err(DataError::DimMismatch { .. })
        ));
    }

    #[test]
    fn key_values_skip_comments() {
        let kv = parse_key_values("# c\n a = 1 \n\nb=x # trailing\n", "t").unwrap();
        assert_eq!(kv, vec![("a".into(), "1".into()), ("b".into(), "x".into())]);
        assert!(parse_key_values("novalue", "t").is_err());
    }
}
