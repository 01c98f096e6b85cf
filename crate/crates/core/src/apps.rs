//! Applications over a finished run: point tracks, mask propagation,
//! novel views and point-set edits.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, UnitQuaternion, Vector3};

use crate::camera::{Camera, Extrinsics, Intrinsics, Trajectory};
use crate::dataset::parse_intrinsics;
use crate::engine::checkpoint_path;
use crate::error::{AppError, Error, Result};
use crate::hull::{concave_hull, rasterize_polygon, DEFAULT_HULL_K};
use crate::io::read_text;
use crate::render::{render, PointScreen, RenderSettings};
use crate::scene::{Cluster, GaussianPointSet};
use crate::tensor::{Mask2D, Tensor};

/// Minimum transmittance at a point's own center for it to be visible.
pub const TRACK_VISIBILITY: f64 = 0.05;

/// Checkpoints and poses of a finished run.
#[derive(Clone, Debug)]
pub struct RunData {
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
    pub trajectory: Trajectory,
    pub frames: Vec<GaussianPointSet>,
    pub settings: RenderSettings,
}

impl RunData {
    pub fn load(dir: &Path) -> Result<Self> {
        let kpath = dir.join("intrinsics.txt");
        if !kpath.exists() {
            return Err(Error::MissingFile(kpath));
        }
        let (intrinsics, width, height) = parse_intrinsics(&read_text(&kpath)?, &kpath.display().to_string())?;
        let tpath = dir.join("trajectory.txt");
        if !tpath.exists() {
            return Err(Error::MissingFile(tpath));
        }
        let trajectory = Trajectory::load(&tpath)?;
        let mut frames = Vec::with_capacity(trajectory.len());
        for (t, _) in trajectory.poses() {
            let p = checkpoint_path(dir, *t);
            if !p.exists() {
                return Err(Error::MissingFile(p));
            }
            frames.push(GaussianPointSet::load(&p)?);
        }
        let mut settings = RenderSettings::default();
        if let Ok(text) = read_text(&dir.join("run.txt")) {
            if let Some(bg) = text.lines().find_map(|l| l.strip_prefix("background=")) {
                let v: Vec<f64> = bg.split(',').filter_map(|s| s.trim().parse().ok()).collect();
                if v.len() == 3 {
                    settings.background = [v[0], v[1], v[2]];
                }
            }
        }
        Ok(Self {
            intrinsics,
            width,
            height,
            trajectory,
            frames,
            settings,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn camera(&self, t: usize) -> Camera {
        let e = self.trajectory.poses()[t].1;
        Camera::new(self.intrinsics, e, self.width, self.height)
    }

    /// Screen state of every point of frame `t`.
    pub fn screen(&self, t: usize) -> Vec<PointScreen> {
        render(&self.frames[t], &self.camera(t), &self.settings).points
    }
}

fn visible(p: &PointScreen, width: usize, height: usize) -> bool {
    p.projected && p.in_image(width, height) && p.transmittance >= TRACK_VISIBILITY
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackSample {
    pub frame: usize,
    pub position: [f64; 3],
    pub pixel: [f64; 2],
    pub visible: bool,
}

/// Per-id sequences ordered by id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrackSet {
    pub tracks: Vec<(u64, Vec<TrackSample>)>,
}

impl TrackSet {
    pub const CSV_HEADER: &'static str = "id,frame,X,Y,Z,u,v,visible";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for (id, samples) in &self.tracks {
            for k in samples {
                let _ = writeln!(
                    s,
                    "{id},{},{},{},{},{},{},{}",
                    k.frame,
                    k.position[0],
                    k.position[1],
                    k.position[2],
                    k.pixel[0],
                    k.pixel[1],
                    u8::from(k.visible)
                );
            }
        }
        s
    }

    pub fn get(&self, id: u64) -> Option<&[TrackSample]> {
        self.tracks.iter().find(|(i, _)| *i == id).map(|(_, s)| s.as_slice())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrackQuery {
    Ids(Vec<u64>),
    /// The visible point nearest to pixel `(u, v)` at `frame`.
    Pixel {
        u: f64,
        v: f64,
        frame: usize,
    },
    /// Every point visible inside the mask at `frame`.
    Mask {
        mask: Mask2D,
        frame: usize,
    },
}

/// Ids selected by `query`.
pub fn query_ids(run: &RunData, query: &TrackQuery) -> Result<Vec<u64>> {
    match query {
        TrackQuery::Ids(ids) => {
            for &id in ids {
                if !run.frames.iter().any(|f| f.index_of(id).is_some()) {
                    return Err(AppError::UnknownId(id).into());
                }
            }
            Ok(ids.clone())
        }
        TrackQuery::Pixel { u, v, frame } => {
            let f = frame_index(run, *frame)?;
            let screen = run.screen(f);
            let best = screen
                .iter()
                .enumerate()
                .filter(|(_, p)| visible(p, run.width, run.height))
                .min_by(|(_, a), (_, b)| {
                    let da = (a.pos[0] - u).powi(2) + (a.pos[1] - v).powi(2);
                    let db = (b.pos[0] - u).powi(2) + (b.pos[1] - v).powi(2);
                    da.total_cmp(&db)
                })
                .map(|(i, _)| run.frames[f].ids[i]);
            best.map(|id| vec![id]).ok_or_else(|| AppError::EmptySelection.into())
        }
        TrackQuery::Mask { mask, frame } => {
            let f = frame_index(run, *frame)?;
            let screen = run.screen(f);
            let ids: Vec<u64> = screen
                .iter()
                .enumerate()
                .filter(|(_, p)| visible(p, run.width, run.height) && mask.contains_point(p.pos[0], p.pos[1]))
                .map(|(i, _)| run.frames[f].ids[i])
                .collect();
            Ok(ids)
        }
    }
}

fn frame_index(run: &RunData, frame: usize) -> Result<usize> {
    run.trajectory
        .poses()
        .iter()
        .position(|(t, _)| *t == frame)
        .ok_or_else(|| AppError::LengthMismatch(frame, run.len()).into())
}

/// 3D and 2D tracks of the queried points over every frame in which they exist.
pub fn extract_tracks(run: &RunData, query: &TrackQuery) -> Result<TrackSet> {
    let ids = query_ids(run, query)?;
    let mut map: HashMap<u64, Vec<TrackSample>> = ids.iter().map(|&id| (id, Vec::new())).collect();
    for f in 0..run.len() {
        let set = &run.frames[f];
        let screen = run.screen(f);
        let frame = run.trajectory.poses()[f].0;
        for &id in &ids {
            if let Some(i) = set.index_of(id) {
                let p = &screen[i];
                map.get_mut(&id).expect("id present").push(TrackSample {
                    frame,
                    position: set.means[i],
                    pixel: p.pos,
                    visible: visible(p, run.width, run.height),
                });
            }
        }
    }
    let mut tracks: Vec<(u64, Vec<TrackSample>)> = map.into_iter().collect();
    tracks.sort_by_key(|(id, _)| *id);
    Ok(TrackSet { tracks })
}

/// Propagates a frame-0 mask: the points visible inside it are followed
/// through every frame and the concave hull of their visible positions is
/// rasterized.
pub fn propagate_mask(run: &RunData, initial: &Mask2D) -> Result<Vec<Mask2D>> {
    let ids = query_ids(
        run,
        &TrackQuery::Mask {
            mask: initial.clone(),
            frame: run.trajectory.poses().first().map_or(0, |p| p.0),
        },
    )?;
    if ids.len() < 3 {
        return Err(AppError::TooFewPoints(ids.len()).into());
    }
    (0..run.len())
        .map(|f| {
            let set = &run.frames[f];
            let screen = run.screen(f);
            let pts: Vec<[f64; 2]> = ids
                .iter()
                .filter_map(|&id| set.index_of(id))
                .filter(|&i| visible(&screen[i], run.width, run.height))
                .map(|i| screen[i].pos)
                .collect();
            let hull = concave_hull(&pts, DEFAULT_HULL_K)?;
            Ok(rasterize_polygon(&hull, run.height, run.width))
        })
        .collect()
}

/// Plain render of `set` under a new pose and intrinsics.
pub fn render_novel_view(
    set: &GaussianPointSet,
    extrinsics: Extrinsics,
    intrinsics: Intrinsics,
    width: usize,
    height: usize,
    settings: &RenderSettings,
) -> Tensor {
    render(set, &Camera::new(intrinsics, extrinsics, width, height), settings).color
}

#[derive(Clone, Debug, PartialEq)]
pub enum Selection {
    All,
    Cluster(Cluster),
    Ids(Vec<u64>),
}

impl Selection {
    /// Indices of selected points; unknown ids are an error.
    pub fn indices(&self, set: &GaussianPointSet) -> Result<Vec<usize>, AppError> {
        match self {
            Selection::All => Ok((0..set.len()).collect()),
            Selection::Cluster(c) => Ok((0..set.len()).filter(|&i| set.clusters[i] == *c).collect()),
            Selection::Ids(ids) => ids
                .iter()
                .map(|&id| set.index_of(id).ok_or(AppError::UnknownId(id)))
                .collect(),
        }
    }
}

/// `x -> linear * x + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine3 {
    pub linear: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Affine3 {
    pub fn identity() -> Self {
        Self {
            linear: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        Self {
            linear: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation and uniform scale about `pivot`, then a translation.
    pub fn about(pivot: Vector3<f64>, rotation: UnitQuaternion<f64>, scale: f64, translation: Vector3<f64>) -> Self {
        let linear = rotation.to_rotation_matrix().into_inner() * scale;
        Self {
            linear,
            translation: pivot - linear * pivot + translation,
        }
    }

    pub fn inverse(&self) -> Option<Self> {
        let inv = self.linear.try_inverse()?;
        Some(Self {
            linear: inv,
            translation: -(inv * self.translation),
        })
    }

    pub fn is_identity(&self) -> bool {
        self.linear == Matrix3::identity() && self.translation == Vector3::zeros()
    }

    /// `(rotation, scale)` when the linear part is a rotation times a
    /// positive uniform scale.
    fn similarity(&self) -> Option<(UnitQuaternion<f64>, f64)> {
        let s = self.linear.determinant().cbrt();
        if !(s > 0.0) {
            return None;
        }
        let r = self.linear / s;
        if (r.transpose() * r - Matrix3::identity()).abs().max() > 1e-12 {
            return None;
        }
        Some((
            UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r)),
            s,
        ))
    }
}

/// Per-point color maps.
#[derive(Clone, Debug, PartialEq)]
pub enum ColorMap {
    Identity,
    Gray,
    Invert,
    /// Channel-wise multiply.
    Tint([f64; 3]),
    Set([f64; 3]),
}

impl ColorMap {
    /// Parses `gray`, `invert`, `tint:r,g,b` or `set:r,g,b`.
    pub fn parse(spec: &str) -> Result<Self, String> {
        let rgb = |v: &str| -> Result<[f64; 3], String> {
            let p: Vec<f64> = v
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|e| e.to_string()))
                .collect::<Result<_, _>>()?;
            if p.len() != 3 {
                return Err(format!("expected r,g,b in {v}"));
            }
            Ok([p[0], p[1], p[2]])
        };
        match spec.split_once(':') {
            None => match spec {
                "identity" | "none" => Ok(ColorMap::Identity),
                "gray" => Ok(ColorMap::Gray),
                "invert" => Ok(ColorMap::Invert),
                other => Err(format!("unknown color map {other}")),
            },
            Some(("tint", v)) => Ok(ColorMap::Tint(rgb(v)?)),
            Some(("set", v)) => Ok(ColorMap::Set(rgb(v)?)),
            Some((other, _)) => Err(format!("unknown color map {other}")),
        }
    }

    pub fn apply(&self, c: [f64; 3]) -> [f64; 3] {
        match self {
            ColorMap::Identity => c,
            ColorMap::Gray => {
                let g = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
                [g; 3]
            }
            ColorMap::Invert => c.map(|v| 1.0 - v),
            ColorMap::Tint(t) => [c[0] * t[0], c[1] * t[1], c[2] * t[2]],
            ColorMap::Set(v) => *v,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EditOp {
    Transform(Affine3),
    Color(ColorMap),
    Remove,
    /// Appends transformed copies of the selection with fresh ids.
    Duplicate(Affine3),
}

fn transform_point(set: &mut GaussianPointSet, i: usize, t: &Affine3) {
    let mu = t.linear * Vector3::from(set.means[i]) + t.translation;
    set.means[i] = [mu.x, mu.y, mu.z];
    if let Some((r, s)) = t.similarity() {
        let q = set.rotations[i];
        let q = UnitQuaternion::new_normalize(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
        let q = r * q;
        set.rotations[i] = [q.w, q.i, q.j, q.k];
        let ls = s.ln();
        set.log_scales[i] = set.log_scales[i].map(|v| v + ls);
        return;
    }
    let cov = t.linear * set.covariance(i) * t.linear.transpose();
    let eig = SymmetricEigen::new(cov);
    let mut v = eig.eigenvectors;
    if v.determinant() < 0.0 {
        v.set_column(2, &(-v.column(2)));
    }
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(v));
    set.rotations[i] = [q.w, q.i, q.j, q.k];
    set.log_scales[i] = [0, 1, 2].map(|k| 0.5 * eig.eigenvalues[k].max(1e-300).ln());
}

/// Applies `op` to the selected points and returns the edited set.
pub fn edit(set: &GaussianPointSet, selection: &Selection, op: &EditOp) -> Result<GaussianPointSet, AppError> {
    let idx = selection.indices(set)?;
    if idx.is_empty() {
        return Err(AppError::EmptySelection);
    }
    let mut chosen = vec![false; set.len()];
    for &i in &idx {
        chosen[i] = true;
    }
    let mut out = set.clone();
    match op {
        EditOp::Transform(t) => {
            if !t.is_identity() {
                for &i in &idx {
                    transform_point(&mut out, i, t);
                }
            }
        }
        EditOp::Color(m) => {
            if *m != ColorMap::Identity {
                for &i in &idx {
                    out.colors[i] = m.apply(out.colors[i]);
                }
            }
        }
        EditOp::Remove => out = set.retain_indices(|i| !chosen[i]),
        EditOp::Duplicate(t) => {
            let mut copies = set.retain_indices(|i| chosen[i]);
            if !t.is_identity() {
                for i in 0..copies.len() {
                    transform_point(&mut copies, i, t);
                }
            }
            out.extend_fresh(&copies);
        }
    }
    Ok(out)
}

/// Centroid of the selected means.
pub fn selection_centroid(set: &GaussianPointSet, selection: &Selection) -> Result<Vector3<f64>, AppError> {
    let idx = selection.indices(set)?;
    if idx.is_empty() {
        return Err(AppError::EmptySelection);
    }
    Ok(idx.iter().map(|&i| Vector3::from(set.means[i])).sum::<Vector3<f64>>() / idx.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn color_map_parse() {
        assert_eq!(ColorMap::parse("gray").unwrap(), ColorMap::Gray);
        assert_eq!(
            ColorMap::parse("tint:1,0.5,0").unwrap(),
            ColorMap::Tint([1.0, 0.5, 0.0])
        );
        assert!(ColorMap::parse("tint:1,2").is_err());
        assert!(ColorMap::parse("sepia").is_err());
    }

    #[test]
    fn affine_inverse() {
        let a = Affine3::about(
            Vector3::new(1.0, 2.0, 3.0),
            UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3),
            1.5,
            Vector3::new(0.5, 0.0, -1.0),
        );
        let b = a.inverse().unwrap();
        let x = Vector3::new(0.3, -0.7, 2.0);
        let y = b.linear * (a.linear * x + a.translation) + b.translation;
        assert!((y - x).norm() < 1e-12);
        assert!(a.similarity().is_some());
    }
}
