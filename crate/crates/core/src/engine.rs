//! Per-frame alternating optimization: first-frame fit, then for each later
//! frame clustering, camera phase, relocation and point phase.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;

use crate::alloc::{
    densify, error_map, error_sampling_map, init_gaussians, new_content_mask, PixelSource, SamplingMap,
};
use crate::camera::{Camera, Extrinsics, Trajectory};
use crate::cluster::{cluster_frame, previous_moving_mask};
use crate::config::{CameraInit, Config};
use crate::dataset::{intrinsics_text, Dataset};
use crate::error::{DataError, Error, LossError, Result};
use crate::io::{save_mask_png, save_png, write_text};
use crate::loss::{depth_loss, flow_loss, isotropic_loss, photometric_loss, LossReport};
use crate::metrics::psnr;
use crate::render::{render, PointScreen, RenderAdjoint, RenderGrads, RenderPass, RenderSettings};
use crate::rng::{rng_stream, RngStream};
use crate::scene::{Cluster, GaussianPointSet};
use crate::tensor::{Mask2D, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Pixels with accumulated alpha above this carry a depth target.
const DEPTH_ALPHA: f64 = 0.5;

/// Bias-corrected Adam moments for one flat parameter array.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// Appends zero moments for new parameters.
    pub fn grow(&mut self, n: usize) {
        self.m.resize(n, 0.0);
        self.v.resize(n, 0.0);
    }

    /// One update of `params`; entries where `active` is false are left
    /// untouched, moments included.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, active: impl Fn(usize) -> bool) {
        assert_eq!(params.len(), grads.len(), "adam: parameter/gradient length mismatch");
        assert_eq!(params.len(), self.m.len(), "adam: state length mismatch");
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for i in 0..params.len() {
            if !active(i) {
                continue;
            }
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
}

/// Adam state for the optimized point columns. Colors are never updated.
#[derive(Clone, Debug, Default)]
struct PointAdam {
    means: AdamState,
    log_scales: AdamState,
    opacity: AdamState,
    rotations: AdamState,
}

impl PointAdam {
    fn new(n: usize) -> Self {
        Self {
            means: AdamState::new(3 * n),
            log_scales: AdamState::new(3 * n),
            opacity: AdamState::new(n),
            rotations: AdamState::new(4 * n),
        }
    }

    fn grow(&mut self, n: usize) {
        self.means.grow(3 * n);
        self.log_scales.grow(3 * n);
        self.opacity.grow(n);
        self.rotations.grow(4 * n);
    }

    fn step(&mut self, set: &mut GaussianPointSet, g: &RenderGrads, lr: f64, frozen_mean: impl Fn(usize) -> bool) {
        self.means
            .step(set.means.as_flattened_mut(), g.means.as_flattened(), lr, |i| {
                !frozen_mean(i / 3)
            });
        self.log_scales.step(
            set.log_scales.as_flattened_mut(),
            g.log_scales.as_flattened(),
            lr,
            |_| true,
        );
        self.opacity
            .step(&mut set.opacity_logits, &g.opacity_logits, lr, |_| true);
        self.rotations
            .step(set.rotations.as_flattened_mut(), g.rotations.as_flattened(), lr, |_| {
                true
            });
    }
}

/// One logged loss evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub frame: usize,
    pub phase: &'static str,
    pub iter: usize,
    pub report: LossReport,
}

#[derive(Clone, Debug)]
pub struct FrameResult {
    pub frame: usize,
    /// World-to-camera pose in normalized scene units.
    pub extrinsics: Extrinsics,
    pub points: GaussianPointSet,
    pub losses: Vec<LossRecord>,
    /// Moving mask of this frame.
    pub moving: Mask2D,
    /// Pixels excluded from the camera phase.
    pub excluded: Mask2D,
    pub camera_skipped: bool,
    /// Tangent step from the initial to the final pose.
    pub camera_delta: [f64; 6],
    pub added: usize,
    pub render: Tensor,
    pub psnr: f64,
}

/// Outcome of the camera phase.
#[derive(Clone, Debug)]
pub struct CameraPhase {
    pub extrinsics: Extrinsics,
    pub skipped: bool,
    pub delta: [f64; 6],
    pub losses: Vec<LossRecord>,
}

/// Power of two closest to `1 / median(depth)`; scaling by it is exact in
/// binary floating point.
pub fn scene_scale(depth: &Tensor) -> f64 {
    let mut v: Vec<f64> = depth
        .data()
        .iter()
        .copied()
        .filter(|d| *d > 0.0 && d.is_finite())
        .collect();
    if v.is_empty() {
        return 1.0;
    }
    v.sort_by(f64::total_cmp);
    let med = v[v.len() / 2];
    2f64.powi((-med.log2()).round() as i32)
}

fn frame_err(frame: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Frame {
        frame,
        source: Box::new(e),
    }
}

/// Tangent `(ω, v)` with `b = retract(a, (ω, v))`.
fn tangent_between(a: &Extrinsics, b: &Extrinsics) -> [f64; 6] {
    let w = (b.rotation * a.rotation.inverse()).scaled_axis();
    let v = b.translation - a.translation;
    [w.x, w.y, w.z, v.x, v.y, v.z]
}

pub struct Engine {
    pub cfg: Config,
    /// Dataset with depth priors multiplied by `scale`.
    pub data: Dataset,
    pub scale: f64,
    pub settings: RenderSettings,
    pub set: GaussianPointSet,
    pub poses: Vec<Extrinsics>,
    /// Screen state of every point at the last finished frame.
    pub prev_screen: Vec<PointScreen>,
}

impl Engine {
    pub fn new(mut data: Dataset, cfg: Config) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::Data(DataError::InvalidConfig("dataset has no frames".into())));
        }
        let scale = scene_scale(&data.depths[0]);
        for d in &mut data.depths {
            *d = d.map(|v| v * scale);
        }
        let settings = RenderSettings {
            background: cfg.background,
        };
        Ok(Self {
            cfg,
            data,
            scale,
            settings,
            set: GaussianPointSet::new(),
            poses: Vec::new(),
            prev_screen: Vec::new(),
        })
    }

    pub fn camera(&self, e: Extrinsics) -> Camera {
        Camera::new(self.data.intrinsics, e, self.data.width, self.data.height)
    }

    /// Next frame to process.
    pub fn next_frame(&self) -> usize {
        self.poses.len()
    }

    fn rng(&self, label: &str) -> RngStream {
        rng_stream(self.cfg.seed, label)
    }

    /// Moving mask of frame `t`, from its flow toward a neighbor.
    pub fn moving_mask(&self, t: usize) -> Mask2D {
        let d = &self.data;
        let (flow, reverse) = if t > 0 {
            (d.bwd_of(t), &d.fwd[t - 1])
        } else if d.len() > 1 {
            (&d.fwd[0], d.bwd_of(1))
        } else {
            return Mask2D::new(d.height, d.width);
        };
        cluster_frame(
            flow,
            reverse,
            &d.intrinsics,
            self.cfg.epipolar_threshold,
            self.cfg.fmatrix_stride,
        )
        .mask
    }

    fn source<'a>(&'a self, t: usize, cam: &'a Camera, moving: Option<&'a Mask2D>) -> PixelSource<'a> {
        PixelSource {
            image: &self.data.frames[t],
            depth: &self.data.depths[t],
            camera: cam,
            moving,
            frame: t as u32,
            scale_gain: self.cfg.scale_gain,
        }
    }

    /// Error-driven densification against frame `t`; returns points added.
    fn densify_error(&mut self, t: usize, cam: &Camera, moving: Option<&Mask2D>, iter: usize) -> Result<usize> {
        let out = render(&self.set, cam, &self.settings);
        let map = error_sampling_map(&error_map(&out.color, &self.data.frames[t]), self.cfg.err_threshold);
        self.densify_with(t, cam, moving, &map, &format!("densify/{t}/{iter}"))
    }

    fn densify_with(
        &mut self,
        t: usize,
        cam: &Camera,
        moving: Option<&Mask2D>,
        map: &SamplingMap,
        label: &str,
    ) -> Result<usize> {
        if map.is_empty() {
            return Ok(0);
        }
        let mut rng = self.rng(label);
        let mut set = std::mem::take(&mut self.set);
        let res = densify(&mut set, map, self.cfg.n_ini, &self.source(t, cam, moving), &mut rng);
        self.set = set;
        Ok(res?)
    }

    /// Frame 0: initialization and 500 iterations of photometric, isotropic
    /// and depth loss. Cluster labels are assigned from the frame's moving
    /// mask once the fit is done.
    pub fn optimize_first_frame(&mut self) -> Result<FrameResult> {
        assert!(self.poses.is_empty(), "first frame already optimized");
        let cfg = self.cfg.clone();
        let cam = self.camera(Extrinsics::identity());
        let mut rng = self.rng("init");
        self.set = init_gaussians(&self.source(0, &cam, None), cfg.n_ini, &mut rng)?;
        self.set.snap_to_f32();
        let mut adam = PointAdam::new(self.set.len());
        let mut losses = Vec::new();
        let mut added = 0;
        for it in 0..cfg.iters_first {
            if cfg.densify_steps_first.contains(&it) {
                added += self.densify_error(0, &cam, None, it)?;
                adam.grow(self.set.len());
            }
            let (report, grads) = self.point_gradients(0, &cam, None, &[])?;
            losses.push(LossRecord {
                frame: 0,
                phase: "first",
                iter: it,
                report,
            });
            adam.step(&mut self.set, &grads, cfg.lr_gauss, |_| false);
        }
        let moving = self.moving_mask(0);
        self.finish_frame(
            0,
            Extrinsics::identity(),
            moving.clone(),
            Mask2D::new(cam.height, cam.width),
            false,
            [0.0; 6],
            losses,
            added,
            Some(&moving),
        )
    }

    /// Loss and gradients for the point phase. `moving` restricts depth and
    /// flow terms to the Moving cluster; without it (frame 0) depth covers
    /// the whole rendering and there is no flow term.
    fn point_gradients(
        &self,
        t: usize,
        cam: &Camera,
        moving: Option<&Mask2D>,
        prev: &[PointScreen],
    ) -> Result<(LossReport, RenderGrads)> {
        let cfg = &self.cfg;
        let n = self.set.len();
        let pass = RenderPass::new(&self.set, cam);
        let out = pass.forward(&self.settings);
        let pho = photometric_loss(&out.color, &self.data.frames[t], None, cfg.ssim_weight)?;
        let (iso, iso_grad) = isotropic_loss(&self.set.log_scales);
        let color_adj = pho.adjoint.map(|v| v * cfg.lambda_p);
        let mut report = LossReport {
            pho_mse: pho.mse,
            pho_ssim: pho.dssim,
            iso,
            a: 1.0,
            ..Default::default()
        };
        let mut extra = RenderGrads::zeros(n);
        let mut point_adj: Option<Vec<[f64; 2]>> = None;
        let mut depth_adj: Option<Tensor> = None;
        match moving {
            None => {
                let region = Mask2D::from_fn(cam.height, cam.width, |y, x| out.acc_alpha.at(y, x, 0) > DEPTH_ALPHA);
                match depth_loss(&out.depth, &self.data.depths[t], &region) {
                    Ok(d) => {
                        report.dep = d.loss;
                        report.a = d.a;
                        report.b = d.b;
                        depth_adj = Some(d.adjoint.map(|v| v * cfg.lambda_d));
                    }
                    Err(LossError::EmptyRegion) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            Some(mask) => {
                let idx: Vec<usize> = (0..n).filter(|&i| self.set.clusters[i] == Cluster::Moving).collect();
                if !idx.is_empty() {
                    let sub = self.set.retain_indices(|i| self.set.clusters[i] == Cluster::Moving);
                    let sub_pass = RenderPass::new(&sub, cam);
                    let sub_out = sub_pass.forward(&self.settings);
                    let region = Mask2D::from_fn(cam.height, cam.width, |y, x| {
                        mask.get(y, x) && sub_out.acc_alpha.at(y, x, 0) > DEPTH_ALPHA
                    });
                    match depth_loss(&sub_out.depth, &self.data.depths[t], &region) {
                        Ok(d) => {
                            report.dep = d.loss;
                            report.a = d.a;
                            report.b = d.b;
                            let adj = d.adjoint.map(|v| v * cfg.lambda_d);
                            let g = sub_pass.backward(
                                &self.settings,
                                &RenderAdjoint {
                                    depth: Some(&adj),
                                    ..Default::default()
                                },
                            );
                            for (k, &i) in idx.iter().enumerate() {
                                extra.means[i] = g.means[k];
                                extra.log_scales[i] = g.log_scales[k];
                                extra.opacity_logits[i] = g.opacity_logits[k];
                                extra.rotations[i] = g.rotations[k];
                            }
                        }
                        Err(LossError::EmptyRegion) => {}
                        Err(e) => return Err(e.into()),
                    }
                    // flow targets for Moving points that existed and were
                    // visible at the previous frame
                    let with_prev: Vec<usize> = idx
                        .iter()
                        .copied()
                        .filter(|&i| i < prev.len() && prev[i].projected && out.points[i].projected)
                        .collect();
                    let curr: Vec<[f64; 2]> = with_prev.iter().map(|&i| out.points[i].pos).collect();
                    let before: Vec<[f64; 2]> = with_prev.iter().map(|&i| prev[i].pos).collect();
                    if !with_prev.is_empty() {
                        match flow_loss(&curr, &before, &self.data.fwd[t - 1]) {
                            Ok(f) => {
                                report.flo = f.loss;
                                let mut adj = vec![[0.0; 2]; n];
                                for (k, &i) in with_prev.iter().enumerate() {
                                    adj[i] = [f.adjoint[k][0] * cfg.lambda_f, f.adjoint[k][1] * cfg.lambda_f];
                                }
                                point_adj = Some(adj);
                            }
                            Err(LossError::EmptyCluster) => {}
                            Err(e) => return Err(e.into()),
                        }
                    }
                }
            }
        }
        let mut grads = pass.backward(
            &self.settings,
            &RenderAdjoint {
                color: Some(&color_adj),
                depth: depth_adj.as_ref(),
                points: point_adj.as_deref(),
            },
        );
        for i in 0..n {
            for k in 0..3 {
                grads.means[i][k] += extra.means[i][k];
                grads.log_scales[i][k] += extra.log_scales[i][k] + cfg.lambda_i * iso_grad[i][k];
            }
            grads.opacity_logits[i] += extra.opacity_logits[i];
            for k in 0..4 {
                grads.rotations[i][k] += extra.rotations[i][k];
            }
        }
        report.total = cfg.lambda_p * pho.value(cfg.ssim_weight)
            + cfg.lambda_d * report.dep
            + cfg.lambda_f * report.flo
            + cfg.lambda_i * report.iso;
        Ok((report, grads))
    }

    /// Initial pose for frame `t`.
    pub fn initial_pose(&self, t: usize) -> Extrinsics {
        let last = self.poses[t - 1];
        match self.cfg.camera_init {
            CameraInit::Velocity if t >= 2 => {
                let vel = last.compose(&self.poses[t - 2].inverse());
                vel.compose(&last)
            }
            _ => last,
        }
    }

    /// Camera phase of frame `t` with the points frozen. Pixels in `excluded`
    /// are ignored; the flow term uses Still points visible at `t - 1`.
    /// Returns the lowest-loss iterate.
    pub fn optimize_camera(&self, t: usize, init: Extrinsics, excluded: &Mask2D) -> Result<CameraPhase> {
        let cfg = &self.cfg;
        let target = &self.data.frames[t];
        let skipped = CameraPhase {
            extrinsics: init,
            skipped: true,
            delta: [0.0; 6],
            losses: Vec::new(),
        };
        if excluded.count() == excluded.data().len() {
            return Ok(skipped);
        }
        let flow_ids: Vec<usize> = (0..self.set.len().min(self.prev_screen.len()))
            .filter(|&i| {
                let p = &self.prev_screen[i];
                self.set.clusters[i] == Cluster::Still
                    && p.projected
                    && p.in_image(self.data.width, self.data.height)
                    && p.transmittance >= cfg.flow_visibility
            })
            .collect();
        let mut pose = init;
        let mut best = (f64::INFINITY, init);
        let mut adam = AdamState::new(6);
        let mut losses = Vec::new();
        for it in 0..cfg.iters_cam {
            let cam = self.camera(pose);
            let pass = RenderPass::new(&self.set, &cam);
            let out = pass.forward(&self.settings);
            let pho = match photometric_loss(&out.color, target, Some(excluded), cfg.ssim_weight) {
                Ok(p) => p,
                Err(LossError::AllPixelsExcluded) => return Ok(skipped),
                Err(e) => return Err(e.into()),
            };
            let mut report = LossReport {
                pho_mse: pho.mse,
                pho_ssim: pho.dssim,
                a: 1.0,
                ..Default::default()
            };
            let color_adj = pho.adjoint.map(|v| v * cfg.lambda_p);
            let region = Mask2D::from_fn(cam.height, cam.width, |y, x| {
                !excluded.get(y, x) && out.acc_alpha.at(y, x, 0) > DEPTH_ALPHA
            });
            let depth_adj = match depth_loss(&out.depth, &self.data.depths[t], &region) {
                Ok(d) => {
                    report.dep = d.loss;
                    report.a = d.a;
                    report.b = d.b;
                    Some(d.adjoint.map(|v| v * cfg.lambda_d))
                }
                Err(LossError::EmptyRegion) => None,
                Err(e) => return Err(e.into()),
            };
            let ids: Vec<usize> = flow_ids.iter().copied().filter(|&i| out.points[i].projected).collect();
            let mut point_adj = None;
            if !ids.is_empty() {
                let curr: Vec<[f64; 2]> = ids.iter().map(|&i| out.points[i].pos).collect();
                let before: Vec<[f64; 2]> = ids.iter().map(|&i| self.prev_screen[i].pos).collect();
                match flow_loss(&curr, &before, &self.data.fwd[t - 1]) {
                    Ok(f) => {
                        report.flo = f.loss;
                        let mut adj = vec![[0.0; 2]; self.set.len()];
                        for (k, &i) in ids.iter().enumerate() {
                            adj[i] = [f.adjoint[k][0] * cfg.lambda_f, f.adjoint[k][1] * cfg.lambda_f];
                        }
                        point_adj = Some(adj);
                    }
                    Err(LossError::EmptyCluster) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            report.total =
                cfg.lambda_p * pho.value(cfg.ssim_weight) + cfg.lambda_d * report.dep + cfg.lambda_f * report.flo;
            if report.total < best.0 {
                best = (report.total, pose);
            }
            losses.push(LossRecord {
                frame: t,
                phase: "camera",
                iter: it,
                report,
            });
            let g = pass.backward(
                &self.settings,
                &RenderAdjoint {
                    color: Some(&color_adj),
                    depth: depth_adj.as_ref(),
                    points: point_adj.as_deref(),
                },
            );
            let mut delta = [0.0; 6];
            adam.step(&mut delta, &g.camera, cfg.lr_cam, |_| true);
            pose = pose.retract(&delta);
        }
        // the iterate after the last step has not been scored
        let cam = self.camera(pose);
        let out = render(&self.set, &cam, &self.settings);
        if let Ok(p) = photometric_loss(&out.color, target, Some(excluded), cfg.ssim_weight) {
            let region = Mask2D::from_fn(cam.height, cam.width, |y, x| {
                !excluded.get(y, x) && out.acc_alpha.at(y, x, 0) > DEPTH_ALPHA
            });
            let dep = depth_loss(&out.depth, &self.data.depths[t], &region).map_or(0.0, |d| d.loss);
            let ids: Vec<usize> = flow_ids.iter().copied().filter(|&i| out.points[i].projected).collect();
            let flo = if ids.is_empty() {
                0.0
            } else {
                let curr: Vec<[f64; 2]> = ids.iter().map(|&i| out.points[i].pos).collect();
                let before: Vec<[f64; 2]> = ids.iter().map(|&i| self.prev_screen[i].pos).collect();
                flow_loss(&curr, &before, &self.data.fwd[t - 1]).map_or(0.0, |f| f.loss)
            };
            let total = cfg.lambda_p * p.value(cfg.ssim_weight) + cfg.lambda_d * dep + cfg.lambda_f * flo;
            if total < best.0 {
                best = (total, pose);
            }
        }
        Ok(CameraPhase {
            extrinsics: best.1,
            skipped: false,
            delta: tangent_between(&init, &best.1),
            losses,
        })
    }

    /// Moves every Moving point along the flow from its previous screen
    /// position and re-unprojects it with frame `t`'s depth under `pose`.
    /// Points leaving the image keep their position.
    pub fn relocate_moving(&mut self, t: usize, pose: &Extrinsics) {
        let cam = self.camera(*pose);
        let flow = &self.data.fwd[t - 1];
        let depth = &self.data.depths[t];
        for i in 0..self.set.len().min(self.prev_screen.len()) {
            if self.set.clusters[i] != Cluster::Moving || !self.prev_screen[i].projected {
                continue;
            }
            let p = self.prev_screen[i].pos;
            let Some(f) = flow.bilinear2(p[0], p[1]) else {
                continue;
            };
            let x = [p[0] + f[0], p[1] + f[1]];
            let Some(d) = depth.bilinear(x[0], x[1], 0) else {
                continue;
            };
            if !(d > 0.0) {
                continue;
            }
            if let Ok(mu) = cam.unproject(&Vector2::new(x[0], x[1]), d) {
                self.set.means[i] = [mu.x, mu.y, mu.z];
            }
        }
    }

    /// Point phase of frame `t`: new-content densification at the first
    /// iteration, error densification on schedule, Still means frozen.
    pub fn optimize_gaussians(
        &mut self,
        t: usize,
        pose: Extrinsics,
        moving: &Mask2D,
    ) -> Result<(Vec<LossRecord>, usize)> {
        let cfg = self.cfg.clone();
        let cam = self.camera(pose);
        let prev = std::mem::take(&mut self.prev_screen);
        let mut adam = PointAdam::new(self.set.len());
        let mut losses = Vec::new();
        let mut added = 0;
        for it in 0..cfg.iters_gauss {
            if it == 0 {
                let fresh = new_content_mask(self.data.bwd_of(t), &self.data.fwd[t - 1], cfg.fb_threshold);
                added += self.densify_with(
                    t,
                    &cam,
                    Some(moving),
                    &SamplingMap::uniform(&fresh),
                    &format!("new/{t}"),
                )?;
                adam.grow(self.set.len());
            }
            if cfg.densify_steps.contains(&it) {
                added += self.densify_error(t, &cam, Some(moving), it)?;
                adam.grow(self.set.len());
            }
            let (report, grads) = self.point_gradients(t, &cam, Some(moving), &prev)?;
            losses.push(LossRecord {
                frame: t,
                phase: "gauss",
                iter: it,
                report,
            });
            let clusters = &self.set.clusters.clone();
            adam.step(&mut self.set, &grads, cfg.lr_gauss, |i| clusters[i] == Cluster::Still);
        }
        self.prev_screen = prev;
        Ok((losses, added))
    }

    #[allow(clippy::too_many_arguments)]
    fn finish_frame(
        &mut self,
        t: usize,
        pose: Extrinsics,
        moving: Mask2D,
        excluded: Mask2D,
        skipped: bool,
        delta: [f64; 6],
        losses: Vec<LossRecord>,
        added: usize,
        label_with: Option<&Mask2D>,
    ) -> Result<FrameResult> {
        if self.cfg.prune_opacity > 0.0 {
            let thr = self.cfg.prune_opacity;
            let set = &self.set;
            self.set = set.retain_indices(|i| crate::scene::sigmoid(set.opacity_logits[i]) >= thr);
        }
        self.set.snap_to_f32();
        let pose = pose.to_f32_precision();
        let cam = self.camera(pose);
        if let Some(mask) = label_with {
            let out = render(&self.set, &cam, &self.settings);
            for (i, p) in out.points.iter().enumerate() {
                let inside = p.projected && mask.contains_point(p.pos[0], p.pos[1]);
                self.set.clusters[i] = if inside { Cluster::Moving } else { Cluster::Still };
            }
        }
        let out = render(&self.set, &cam, &self.settings);
        let quality = psnr(&out.color, &self.data.frames[t])?;
        self.prev_screen = out.points;
        self.poses.push(pose);
        Ok(FrameResult {
            frame: t,
            extrinsics: pose,
            points: self.set.clone(),
            losses,
            moving,
            excluded,
            camera_skipped: skipped,
            camera_delta: delta,
            added,
            render: out.color,
            psnr: quality,
        })
    }

    /// Content of frame `t` not visible at `t - 1`, grown by two pixels so
    /// partially covered borders are left out as well.
    pub fn unseen_mask(&self, t: usize) -> Mask2D {
        new_content_mask(self.data.bwd_of(t), &self.data.fwd[t - 1], self.cfg.fb_threshold)
            .dilate3()
            .dilate3()
    }

    /// Processes frame `t >= 1`.
    pub fn optimize_frame(&mut self, t: usize) -> Result<FrameResult> {
        assert_eq!(t, self.poses.len(), "frames must be processed in order");
        let moving = self.moving_mask(t);
        let prev_cam = self.camera(self.poses[t - 1]);
        let excluded = moving
            .union(&previous_moving_mask(&self.set, &prev_cam))
            .union(&self.unseen_mask(t));
        let phase = self.optimize_camera(t, self.initial_pose(t), &excluded)?;
        let pose = phase.extrinsics;
        self.relocate_moving(t, &pose);
        let (gauss_losses, added) = self.optimize_gaussians(t, pose, &moving)?;
        let mut losses = phase.losses;
        losses.extend(gauss_losses);
        self.finish_frame(
            t,
            pose,
            moving,
            excluded,
            phase.skipped,
            phase.delta,
            losses,
            added,
            None,
        )
    }

    /// Processes the next frame.
    pub fn step(&mut self) -> Result<FrameResult> {
        let t = self.next_frame();
        let res = if t == 0 {
            self.optimize_first_frame()
        } else {
            self.optimize_frame(t)
        };
        res.map_err(frame_err(t))
    }

    /// Trajectory so far, in normalized scene units.
    pub fn trajectory(&self) -> Trajectory {
        let mut tr = Trajectory::new();
        for (t, e) in self.poses.iter().enumerate() {
            tr.push(t, *e).expect("frames are pushed in order");
        }
        tr
    }
}

/// Writes per-frame artifacts as frames finish.
pub struct RunWriter {
    dir: PathBuf,
    csv: String,
}

impl RunWriter {
    pub fn create(dir: &Path, engine: &Engine) -> Result<Self> {
        fs::create_dir_all(dir.join("debug")).map_err(|e| DataError::io(dir, e))?;
        let d = &engine.data;
        write_text(
            &dir.join("intrinsics.txt"),
            &intrinsics_text(&d.intrinsics, d.width, d.height),
        )?;
        let mut info = format!("scene_scale={}\nframes={}\n", engine.scale, d.len());
        for (k, _) in crate::config::CONFIG_KEYS {
            let _ = writeln!(info, "{k}={}", engine.cfg.get(k).unwrap_or_default());
        }
        write_text(&dir.join("run.txt"), &info)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            csv: format!("{}\n", LossReport::CSV_HEADER),
        })
    }

    pub fn write_frame(&mut self, engine: &Engine, r: &FrameResult) -> Result<()> {
        let t = r.frame;
        r.points.save(&checkpoint_path(&self.dir, t))?;
        save_png(&self.dir.join(format!("render_{t:04}.png")), &r.render)?;
        save_mask_png(&self.dir.join("debug").join(format!("moving_{t:04}.png")), &r.moving)?;
        save_mask_png(
            &self.dir.join("debug").join(format!("excluded_{t:04}.png")),
            &r.excluded,
        )?;
        for l in &r.losses {
            self.csv.push_str(&l.report.csv_row(l.frame, l.phase, l.iter));
            self.csv.push('\n');
        }
        write_text(&self.dir.join("losses.csv"), &self.csv)?;
        write_text(&self.dir.join("trajectory.txt"), &engine.trajectory().to_text())?;
        Ok(())
    }
}

pub fn checkpoint_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("frame_{t:04}.gfs"))
}

/// Whole-sequence reconstruction. Artifacts go to `out` when given;
/// `on_frame` sees each frame as it finishes.
pub fn run(
    data: Dataset,
    cfg: Config,
    out: Option<&Path>,
    mut on_frame: impl FnMut(&FrameResult),
) -> Result<(Engine, Vec<FrameResult>)> {
    let n = data.len();
    let mut engine = Engine::new(data, cfg)?;
    let mut writer = out.map(|d| RunWriter::create(d, &engine)).transpose()?;
    let mut results = Vec::with_capacity(n);
    for _ in 0..n {
        let r = engine.step()?;
        if let Some(w) = writer.as_mut() {
            w.write_frame(&engine, &r).map_err(frame_err(r.frame))?;
        }
        on_frame(&r);
        results.push(r);
    }
    Ok((engine, results))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_is_lr() {
        let mut s = AdamState::new(1);
        let mut p = [0.0];
        s.step(&mut p, &[1.0], 0.1, |_| true);
        assert!((p[0] + 0.1 / (1.0 + ADAM_EPS)).abs() < 1e-15);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn adam_zero_grad_keeps_params() {
        let mut s = AdamState::new(3);
        let mut p = [1.0, -2.0, 3.0];
        s.step(&mut p, &[0.0; 3], 0.1, |_| true);
        assert_eq!(p, [1.0, -2.0, 3.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn adam_inactive_entries_untouched() {
        let mut s = AdamState::new(2);
        let mut p = [1.0, 1.0];
        for _ in 0..5 {
            s.step(&mut p, &[1.0, 1.0], 0.1, |i| i == 0);
        }
        assert_eq!(p[1], 1.0);
        assert_eq!((s.m[1], s.v[1]), (0.0, 0.0));
        assert!(p[0] < 1.0);
    }

    #[test]
    fn scene_scale_is_power_of_two() {
        let d = Tensor::filled(&[4, 4], 3.0);
        assert_eq!(scene_scale(&d), 0.25);
        assert_eq!(scene_scale(&Tensor::filled(&[2, 2], 1.0)), 1.0);
    }

    #[test]
    fn tangent_round_trip() {
        let a = Extrinsics::identity().retract(&[0.1, -0.2, 0.05, 0.3, 0.0, -0.1]);
        let d = [0.01, 0.02, -0.03, 0.1, 0.2, 0.3];
        let b = a.retract(&d);
        let r = tangent_between(&a, &b);
        for k in 0..6 {
            assert!((r[k] - d[k]).abs() < 1e-12);
        }
    }
}
