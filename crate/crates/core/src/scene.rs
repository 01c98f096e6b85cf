//! The Gaussian point set: columnar parameters, cluster labels and stable ids.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::DataError;
use crate::tensor::Mask2D;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GFS1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Cluster {
    Still,
    Moving,
}

impl Cluster {
    fn to_u8(self) -> u8 {
        match self {
            Cluster::Still => 0,
            Cluster::Moving => 1,
        }
    }

    fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Cluster::Still),
            1 => Some(Cluster::Moving),
            _ => None,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Rotation matrix of a (not necessarily unit) quaternion `[w, x, y, z]`.
pub fn quat_to_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// One decoded point, mostly for construction and inspection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianPoint {
    pub mean: [f64; 3],
    pub log_scale: [f64; 3],
    pub opacity_logit: f64,
    pub rotation: [f64; 4],
    pub color: [f64; 3],
    pub id: u64,
    pub cluster: Cluster,
    pub birth_frame: u32,
}

impl GaussianPoint {
    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }
}

/// `Σ = R(q) diag(s²) R(q)ᵀ`.
pub fn covariance3d(rotation: &[f64; 4], log_scale: &[f64; 3]) -> Matrix3<f64> {
    let r = quat_to_matrix(rotation);
    let s = Vector3::from(log_scale.map(|v| (2.0 * v).exp()));
    r * Matrix3::from_diagonal(&s) * r.transpose()
}

/// Columnar storage. Every column has the same length; ids are unique and
/// only ever grow.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianPointSet {
    pub means: Vec<[f64; 3]>,
    pub log_scales: Vec<[f64; 3]>,
    pub opacity_logits: Vec<f64>,
    pub rotations: Vec<[f64; 4]>,
    pub colors: Vec<[f64; 3]>,
    pub ids: Vec<u64>,
    pub clusters: Vec<Cluster>,
    pub birth_frames: Vec<u32>,
    next_id: u64,
}

impl GaussianPointSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    /// Appends a point, assigning it a fresh id (the point's own id is ignored).
    pub fn push(&mut self, mut p: GaussianPoint) -> u64 {
        p.id = self.next_id;
        self.next_id += 1;
        self.push_with_id(p);
        p.id
    }

    fn push_with_id(&mut self, p: GaussianPoint) {
        self.means.push(p.mean);
        self.log_scales.push(p.log_scale);
        self.opacity_logits.push(p.opacity_logit);
        self.rotations.push(p.rotation);
        self.colors.push(p.color);
        self.ids.push(p.id);
        self.clusters.push(p.cluster);
        self.birth_frames.push(p.birth_frame);
        self.next_id = self.next_id.max(p.id + 1);
    }

    pub fn get(&self, i: usize) -> GaussianPoint {
        GaussianPoint {
            mean: self.means[i],
            log_scale: self.log_scales[i],
            opacity_logit: self.opacity_logits[i],
            rotation: self.rotations[i],
            color: self.colors[i],
            id: self.ids[i],
            cluster: self.clusters[i],
            birth_frame: self.birth_frames[i],
        }
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        // ids are appended in increasing order and only removal can punch holes
        self.ids.binary_search(&id).ok()
    }

    pub fn covariance(&self, i: usize) -> Matrix3<f64> {
        covariance3d(&self.rotations[i], &self.log_scales[i])
    }

    /// Keeps the points for which `keep(i)` is true, preserving order and ids.
    pub fn retain_indices(&self, keep: impl Fn(usize) -> bool) -> GaussianPointSet {
        let mut out = GaussianPointSet {
            next_id: self.next_id,
            ..Default::default()
        };
        for i in 0..self.len() {
            if keep(i) {
                out.push_with_id(self.get(i));
            }
        }
        out.next_id = self.next_id;
        out
    }

    pub fn subset_cluster(&self, cluster: Cluster) -> GaussianPointSet {
        self.retain_indices(|i| self.clusters[i] == cluster)
    }

    /// Appends all points of `other` with fresh ids.
    pub fn extend_fresh(&mut self, other: &GaussianPointSet) {
        for i in 0..other.len() {
            self.push(other.get(i));
        }
    }

    /// Rounds every parameter to `f32` so the set survives a checkpoint
    /// round trip exactly. Quaternions are renormalized first.
    pub fn snap_to_f32(&mut self) {
        let r = |v: f64| v as f32 as f64;
        for q in &mut self.rotations {
            let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
            *q = q.map(|v| r(v / n));
        }
        for m in &mut self.means {
            *m = m.map(r);
        }
        for s in &mut self.log_scales {
            *s = s.map(r);
        }
        for a in &mut self.opacity_logits {
            *a = r(*a);
        }
        for c in &mut self.colors {
            *c = c.map(r);
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let n = self.len();
        let mut out = Vec::with_capacity(12 + n * (14 * 4 + 8 + 1 + 4));
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(n as u64).to_le_bytes());
        let mut put = |v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
        self.means.iter().flatten().for_each(|&v| put(v));
        self.log_scales.iter().flatten().for_each(|&v| put(v));
        self.opacity_logits.iter().for_each(|&v| put(v));
        self.rotations.iter().flatten().for_each(|&v| put(v));
        self.colors.iter().flatten().for_each(|&v| put(v));
        for id in &self.ids {
            out.extend_from_slice(&id.to_le_bytes());
        }
        out.extend(self.clusters.iter().map(|c| c.to_u8()));
        for b in &self.birth_frames {
            out.extend_from_slice(&b.to_le_bytes());
        }
        out.extend_from_slice(&self.next_id.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8], origin: &str) -> Result<Self, DataError> {
        if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(DataError::BadMagic(origin.to_string()));
        }
        let n = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let expected = 12 + n * (14 * 4 + 8 + 1 + 4) + 8;
        if bytes.len() != expected {
            return Err(DataError::DimMismatch {
                expected,
                found: bytes.len(),
            });
        }
        let mut pos = 12;
        let mut floats = |count: usize| -> Result<Vec<f64>, DataError> {
            let v: Vec<f64> = bytes[pos..pos + 4 * count]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            pos += 4 * count;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(DataError::NonFiniteData);
            }
            Ok(v)
        };
        let means = floats(3 * n)?;
        let scales = floats(3 * n)?;
        let opac = floats(n)?;
        let rots = floats(4 * n)?;
        let cols = floats(3 * n)?;
        let mut set = GaussianPointSet {
            means: means.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            log_scales: scales.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            opacity_logits: opac,
            rotations: rots.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect(),
            colors: cols.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            ..Default::default()
        };
        set.ids = bytes[pos..pos + 8 * n]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += 8 * n;
        set.clusters = bytes[pos..pos + n]
            .iter()
            .map(|&b| Cluster::from_u8(b).ok_or_else(|| DataError::BadMagic(format!("{origin}: cluster label {b}"))))
            .collect::<Result<_, _>>()?;
        pos += n;
        set.birth_frames = bytes[pos..pos + 4 * n]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += 4 * n;
        set.next_id = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| DataError::io(parent, e))?;
        }
        fs::write(path, self.encode()).map_err(|e| DataError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
        Self::decode(&bytes, &path.display().to_string())
    }

    /// Scales the whole scene about the origin by `s`.
    pub fn scale_scene(&mut self, s: f64) {
        let ls = s.ln();
        for m in &mut self.means {
            *m = m.map(|v| v * s);
        }
        for l in &mut self.log_scales {
            *l = l.map(|v| v + ls);
        }
    }
}

/// Partitions point ids by whether their screen position falls in `mask`.
/// Points projecting outside the image (or `None`) are Still.
pub fn split_by_mask(set: &GaussianPointSet, mask: &Mask2D, positions: &[Option<[f64; 2]>]) -> (Vec<u64>, Vec<u64>) {
    let mut moving = Vec::new();
    let mut still = Vec::new();
    for (i, pos) in positions.iter().enumerate().take(set.len()) {
        match pos {
            Some([x, y]) if mask.contains_point(*x, *y) => moving.push(set.ids[i]),
            _ => still.push(set.ids[i]),
        }
    }
    (moving, still)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn point(mean: [f64; 3]) -> GaussianPoint {
        GaussianPoint {
            mean,
            log_scale: [0.0; 3],
            opacity_logit: 2.0,
            rotation: [1.0, 0.0, 0.0, 0.0],
            color: [0.5; 3],
            id: 0,
            cluster: Cluster::Still,
            birth_frame: 0,
        }
    }

    #[test]
    fn axis_aligned_covariance() {
        let s = [1.0f64, 2.0, 3.0].map(f64::ln);
        let c = covariance3d(&[1.0, 0.0, 0.0, 0.0], &s);
        assert!((c - Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 9.0))).norm() < 1e-12);
    }

    #[test]
    fn rotated_covariance_swaps_axes() {
        let h = std::f64::consts::FRAC_PI_4;
        let q = [h.cos(), 0.0, 0.0, h.sin()];
        let s = [1.0f64, 2.0, 1.0].map(f64::ln);
        let c = covariance3d(&q, &s);
        assert!((c - Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0))).norm() < 1e-12);
    }

    #[test]
    fn split_extremes_and_half_plane() {
        let mut set = GaussianPointSet::new();
        let mut pos = Vec::new();
        for y in 0..4 {
            for x in 0..8 {
                set.push(point([0.0; 3]));
                pos.push(Some([x as f64, y as f64]));
            }
        }
        pos.push(None);
        set.push(point([0.0; 3]));
        let (m, s) = split_by_mask(&set, &Mask2D::new(4, 8), &pos);
        assert_eq!((m.len(), s.len()), (0, 33));
        let (m, s) = split_by_mask(&set, &Mask2D::full(4, 8), &pos);
        assert_eq!((m.len(), s.len()), (32, 1));
        let half = Mask2D::from_fn(4, 8, |_, x| x < 4);
        let (m, _) = split_by_mask(&set, &half, &pos);
        let expected: Vec<u64> = (0..32).filter(|i| i % 8 < 4).collect();
        assert_eq!(m, expected);
    }

    #[test]
    fn checkpoint_round_trip_after_snap() {
        let mut set = GaussianPointSet::new();
        for i in 0..5 {
            let mut p = point([i as f64 * 0.1, 0.3, 1.7]);
            p.rotation = [0.9, 0.1, -0.2, 0.3];
            p.cluster = if i % 2 == 0 { Cluster::Moving } else { Cluster::Still };
            p.birth_frame = i;
            set.push(p);
        }
        set.snap_to_f32();
        let back = GaussianPointSet::decode(&set.encode(), "mem").unwrap();
        assert_eq!(back, set);
        assert!(matches!(
            GaussianPointSet::decode(b"GFT1xxxxxxxx", "mem"),
            Err(DataError::BadMagic(_))
        ));
    }

    #[test]
    fn ids_are_append_only() {
        let mut set = GaussianPointSet::new();
        for _ in 0..4 {
            set.push(point([0.0; 3]));
        }
        let kept = set.retain_indices(|i| i != 1);
        let mut kept2 = kept.clone();
        let id = kept2.push(point([0.0; 3]));
        assert_eq!(kept.ids, vec![0, 2, 3]);
        assert_eq!(id, 4);
        assert_eq!(kept2.index_of(3), Some(2));
        assert_eq!(kept2.index_of(1), None);
    }

    proptest! {
        #[test]
        fn scale_and_opacity_decode_round_trip(s in 1e-4f64..1e3, a in 1e-6f64..(1.0 - 1e-6)) {
            prop_assert!((s.ln().exp() - s).abs() <= 1e-7 * s);
            prop_assert!((sigmoid(logit(a)) - a).abs() <= 1e-7);
        }

        #[test]
        fn covariance_is_spd(q in prop::array::uniform4(-1.0..1.0f64), s in prop::array::uniform3(-3.0..1.0f64)) {
            prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-3);
            let c = covariance3d(&q, &s);
            prop_assert!((c - c.transpose()).norm() <= 1e-12 * c.norm());
            let eig = c.symmetric_eigenvalues();
            prop_assert!(eig.iter().all(|&e| e > 0.0));
        }
    }
}
