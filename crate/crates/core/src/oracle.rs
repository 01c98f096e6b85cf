//! Synthetic ground truth: random point sets for renderer tests and analytic
//! ray-cast scenes with exact depth, flow, poses and motion masks.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use rayon::prelude::*;

use crate::camera::{project, Camera, Extrinsics, Intrinsics, Trajectory};
use crate::config::Config;
use crate::dataset::{mask_path, Dataset};
use crate::error::{OracleError, Result};
use crate::io::{parse_key_values, save_mask_png, write_text};
use crate::rng::{rng_stream, unit_quaternion, RngStream};
use crate::scene::{logit, Cluster, GaussianPoint, GaussianPointSet};
use crate::tensor::{Mask2D, Tensor};

/// Random points in front of `cam`, with screen footprints between roughly
/// 1 and 8 px, anisotropic scales and distinct depths.
pub fn random_point_set(seed: u64, n: usize, cam: &Camera) -> GaussianPointSet {
    let mut rng = rng_stream(seed, "random-points");
    let mut set = GaussianPointSet::new();
    let (w, h) = (cam.width as f64, cam.height as f64);
    for _ in 0..n {
        let px = rng.random_range(-0.1 * w..1.1 * w);
        let py = rng.random_range(-0.1 * h..1.1 * h);
        let depth = rng.random_range(1.5..6.0);
        let mean = cam.unproject(&Vector2::new(px, py), depth).expect("positive depth");
        let footprint = rng.random_range(1.0..8.0) * depth / cam.intrinsics.fx;
        let log_scale = [0; 3].map(|_| (footprint * rng.random_range(0.4..1.6f64)).ln());
        set.push(GaussianPoint {
            mean: [mean.x, mean.y, mean.z],
            log_scale,
            opacity_logit: logit(rng.random_range(0.05..0.95)),
            rotation: unit_quaternion(&mut rng),
            color: [rng.random(), rng.random(), rng.random()],
            id: 0,
            cluster: if rng.random_bool(0.5) {
                Cluster::Still
            } else {
                Cluster::Moving
            },
            birth_frame: 0,
        });
    }
    set
}

/// Small pinhole camera looking down +z from the origin.
pub fn test_camera(width: usize, height: usize) -> Camera {
    let f = 1.2 * width.max(height) as f64;
    Camera::new(
        Intrinsics::new(f, f, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
        Extrinsics::identity(),
        width,
        height,
    )
}

/// A mildly rotated and translated copy of `test_camera`.
pub fn perturbed_test_camera(seed: u64, width: usize, height: usize) -> Camera {
    let mut rng = rng_stream(seed, "test-camera");
    let mut c = test_camera(width, height);
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let rot = UnitQuaternion::from_scaled_axis(axis * 0.02);
    let t = Vector3::new(
        rng.random_range(-0.05..0.05),
        rng.random_range(-0.05..0.05),
        rng.random_range(-0.05..0.05),
    );
    c.extrinsics = Extrinsics::new(rot, t);
    c
}

/// Camera motion of a synthetic sequence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CameraPath {
    Still,
    /// Translation by `step` (world units) per frame, no rotation.
    Track {
        step: [f64; 3],
    },
    /// Yaw of `deg_per_frame` about a vertical axis through `(0, 0, pivot_depth)`.
    Orbit {
        deg_per_frame: f64,
        pivot_depth: f64,
    },
}

/// Static geometry of a synthetic sequence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Layout {
    /// Back wall, floor and three spheres.
    Room,
    /// A single fronto-parallel plane.
    Plane { depth: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MovingSphere {
    pub center: [f64; 3],
    pub radius: f64,
    pub velocity: [f64; 3],
}

/// Key=value description of a synthetic sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub focal: f64,
    pub path: CameraPath,
    pub layout: Layout,
    pub moving: Option<MovingSphere>,
    pub seed: u64,
}

impl OracleSpec {
    /// 12-frame orbit around a static room.
    pub fn static_orbit() -> Self {
        Self {
            width: 160,
            height: 96,
            frames: 12,
            focal: 120.0,
            path: CameraPath::Orbit {
                deg_per_frame: 1.5,
                pivot_depth: 3.0,
            },
            layout: Layout::Room,
            moving: None,
            seed: 1,
        }
    }

    /// 12-frame lateral track past a room with one sphere moving vertically.
    pub fn dynamic_track() -> Self {
        Self {
            path: CameraPath::Track { step: [0.06, 0.0, 0.0] },
            moving: Some(MovingSphere {
                center: [0.35, -0.55, 2.8],
                radius: 0.42,
                velocity: [0.02, 0.09, 0.0],
            }),
            seed: 2,
            ..Self::static_orbit()
        }
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self, OracleError> {
        let kv = parse_key_values(text, origin)?;
        let mut spec = match kv.iter().find(|(k, _)| k == "preset").map(|(_, v)| v.as_str()) {
            None | Some("static_orbit") => Self::static_orbit(),
            Some("dynamic_track") => Self::dynamic_track(),
            Some(other) => return Err(OracleError::SpecInvalid(format!("unknown preset {other:?}"))),
        };
        let bad = |k: &str, v: &str| OracleError::SpecInvalid(format!("bad value {v:?} for {k}"));
        let num = |k: &str, v: &str| v.parse::<f64>().map_err(|_| bad(k, v));
        let int = |k: &str, v: &str| v.parse::<usize>().map_err(|_| bad(k, v));
        let vec3 = |k: &str, v: &str| -> Result<[f64; 3], OracleError> {
            let p: Vec<f64> = v
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| bad(k, v))?;
            p.try_into().map_err(|_| bad(k, v))
        };
        for (k, v) in &kv {
            let (k, v) = (k.as_str(), v.as_str());
            match k {
                "preset" => {}
                "width" => spec.width = int(k, v)?,
                "height" => spec.height = int(k, v)?,
                "frames" => spec.frames = int(k, v)?,
                "focal" => spec.focal = num(k, v)?,
                "seed" => spec.seed = v.parse().map_err(|_| bad(k, v))?,
                "path" => {
                    spec.path = match v {
                        "still" => CameraPath::Still,
                        "track" => CameraPath::Track { step: [0.06, 0.0, 0.0] },
                        "orbit" => CameraPath::Orbit {
                            deg_per_frame: 1.5,
                            pivot_depth: 3.0,
                        },
                        _ => return Err(bad(k, v)),
                    }
                }
                "track_step" => spec.path = CameraPath::Track { step: vec3(k, v)? },
                "orbit_deg_per_frame" => match &mut spec.path {
                    CameraPath::Orbit { deg_per_frame, .. } => *deg_per_frame = num(k, v)?,
                    _ => return Err(OracleError::SpecInvalid(format!("{k} requires path=orbit"))),
                },
                "orbit_pivot_depth" => match &mut spec.path {
                    CameraPath::Orbit { pivot_depth, .. } => *pivot_depth = num(k, v)?,
                    _ => return Err(OracleError::SpecInvalid(format!("{k} requires path=orbit"))),
                },
                "layout" => {
                    spec.layout = match v {
                        "room" => Layout::Room,
                        "plane" => Layout::Plane { depth: 4.0 },
                        _ => return Err(bad(k, v)),
                    }
                }
                "plane_depth" => spec.layout = Layout::Plane { depth: num(k, v)? },
                "moving" => match v {
                    "none" => spec.moving = None,
                    "sphere" => spec.moving = spec.moving.or(Self::dynamic_track().moving),
                    _ => return Err(bad(k, v)),
                },
                "moving_center" | "moving_radius" | "moving_velocity" => {
                    let m = spec
                        .moving
                        .as_mut()
                        .ok_or_else(|| OracleError::SpecInvalid(format!("{k} requires moving=sphere")))?;
                    match k {
                        "moving_center" => m.center = vec3(k, v)?,
                        "moving_radius" => m.radius = num(k, v)?,
                        _ => m.velocity = vec3(k, v)?,
                    }
                }
                _ => return Err(OracleError::SpecInvalid(format!("unknown key {k:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let v3 = |v: [f64; 3]| format!("{},{},{}", v[0], v[1], v[2]);
        let _ = writeln!(
            s,
            "width={}\nheight={}\nframes={}\nfocal={}\nseed={}",
            self.width, self.height, self.frames, self.focal, self.seed
        );
        match self.path {
            CameraPath::Still => s.push_str("path=still\n"),
            CameraPath::Track { step } => {
                let _ = writeln!(s, "path=track\ntrack_step={}", v3(step));
            }
            CameraPath::Orbit {
                deg_per_frame,
                pivot_depth,
            } => {
                let _ = writeln!(
                    s,
                    "path=orbit\norbit_deg_per_frame={deg_per_frame}\norbit_pivot_depth={pivot_depth}"
                );
            }
        }
        match self.layout {
            Layout::Room => s.push_str("layout=room\n"),
            Layout::Plane { depth } => {
                let _ = writeln!(s, "layout=plane\nplane_depth={depth}");
            }
        }
        match self.moving {
            None => s.push_str("moving=none\n"),
            Some(m) => {
                let _ = writeln!(
                    s,
                    "moving=sphere\nmoving_center={}\nmoving_radius={}\nmoving_velocity={}",
                    v3(m.center),
                    m.radius,
                    v3(m.velocity)
                );
            }
        }
        s
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let fail = |m: &str| Err(OracleError::SpecInvalid(m.to_string()));
        if self.width < 8 || self.height < 8 {
            return fail("image must be at least 8x8");
        }
        if self.frames < 1 {
            return fail("frames must be positive");
        }
        if !(self.focal > 0.0) {
            return fail("focal must be positive");
        }
        if let Layout::Plane { depth } = self.layout {
            if !(depth > 0.0) {
                return fail("plane_depth must be positive");
            }
        }
        if let Some(m) = self.moving {
            if !(m.radius > 0.0) {
                return fail("moving_radius must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Wave {
    dir: Vector3<f64>,
    freq: f64,
    phase: f64,
    amp: [f64; 3],
}

/// Smooth color field: a base color plus a few plane waves.
#[derive(Clone, Debug)]
struct Texture {
    base: [f64; 3],
    waves: Vec<Wave>,
}

impl Texture {
    fn random(rng: &mut RngStream, base: [f64; 3], wavelength: (f64, f64), amp: f64) -> Self {
        let waves = (0..4)
            .map(|_| {
                let d = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                Wave {
                    dir: d.normalize(),
                    freq: 1.0 / rng.random_range(wavelength.0..wavelength.1),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    amp: [0; 3].map(|_| amp * rng.random_range(0.4..1.0)),
                }
            })
            .collect();
        Self { base, waves }
    }

    fn eval(&self, p: &Vector3<f64>) -> [f64; 3] {
        let mut c = self.base;
        for w in &self.waves {
            let s = (std::f64::consts::TAU * w.freq * w.dir.dot(p) + w.phase).sin();
            for k in 0..3 {
                c[k] += w.amp[k] * s;
            }
        }
        c.map(|v| v.clamp(0.0, 1.0))
    }
}

#[derive(Clone, Debug)]
enum Shape {
    Plane { point: Vector3<f64>, normal: Vector3<f64> },
    Sphere { center: Vector3<f64>, radius: f64 },
}

#[derive(Clone, Debug)]
struct Primitive {
    shape: Shape,
    velocity: Vector3<f64>,
    texture: Texture,
}

impl Primitive {
    fn moving(&self) -> bool {
        self.velocity != Vector3::zeros()
    }

    fn offset(&self, t: usize) -> Vector3<f64> {
        self.velocity * t as f64
    }

    /// Ray parameter of the nearest hit in front of the origin at frame `t`.
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>, t: usize) -> Option<f64> {
        match &self.shape {
            Shape::Plane { point, normal } => {
                let denom = normal.dot(d);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let s = normal.dot(&(point + self.offset(t) - o)) / denom;
                (s > 1e-6).then_some(s)
            }
            Shape::Sphere { center, radius } => {
                let oc = o - (center + self.offset(t));
                let a = d.dot(d);
                let b = 2.0 * d.dot(&oc);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let s0 = (-b - sq) / (2.0 * a);
                let s1 = (-b + sq) / (2.0 * a);
                if s0 > 1e-6 {
                    Some(s0)
                } else if s1 > 1e-6 {
                    Some(s1)
                } else {
                    None
                }
            }
        }
    }

    /// Texture coordinates travel with the primitive.
    fn color(&self, x: &Vector3<f64>, t: usize) -> [f64; 3] {
        self.texture.eval(&(x - self.offset(t)))
    }
}

/// A surface point seen through a pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    /// Camera-frame depth.
    pub depth: f64,
    pub point: Vector3<f64>,
    pub primitive: usize,
    pub moving: bool,
}

/// Exact per-frame data of a synthetic sequence.
#[derive(Clone, Debug)]
pub struct OracleFrame {
    pub color: Tensor,
    pub depth: Tensor,
    /// Flow to frame `t + 1` (absent for the last frame).
    pub fwd: Option<Tensor>,
    /// Flow to frame `t - 1` (absent for the first frame).
    pub bwd: Option<Tensor>,
    /// Pixels whose center sample hits a moving primitive.
    pub moving: Mask2D,
    /// Pixels whose color samples all hit the same primitive.
    pub pure: Mask2D,
    pub primitive: Vec<usize>,
}

/// Ray-cast scene with analytic depth, flow and motion labels.
#[derive(Clone, Debug)]
pub struct OracleScene {
    pub spec: OracleSpec,
    primitives: Vec<Primitive>,
}

const SUPERSAMPLE: usize = 3;

impl OracleScene {
    pub fn new(spec: OracleSpec) -> Result<Self, OracleError> {
        spec.validate()?;
        let mut rng = rng_stream(spec.seed, "oracle-scene");
        let mut prims = Vec::new();
        let still = Vector3::zeros();
        match spec.layout {
            Layout::Plane { depth } => prims.push(Primitive {
                shape: Shape::Plane {
                    point: Vector3::new(0.0, 0.0, depth),
                    normal: Vector3::new(0.0, 0.0, -1.0),
                },
                velocity: still,
                texture: Texture::random(&mut rng, [0.5, 0.45, 0.4], (0.5, 1.2), 0.12),
            }),
            Layout::Room => {
                prims.push(Primitive {
                    shape: Shape::Plane {
                        point: Vector3::new(0.0, 0.0, 5.5),
                        normal: Vector3::new(0.0, 0.0, -1.0),
                    },
                    velocity: still,
                    texture: Texture::random(&mut rng, [0.55, 0.5, 0.42], (0.5, 1.4), 0.13),
                });
                prims.push(Primitive {
                    shape: Shape::Plane {
                        point: Vector3::new(0.0, 1.1, 0.0),
                        normal: Vector3::new(0.0, -1.0, 0.0),
                    },
                    velocity: still,
                    texture: Texture::random(&mut rng, [0.35, 0.42, 0.5], (0.4, 1.0), 0.12),
                });
                let spheres = [
                    ([-0.9, 0.25, 3.3], 0.55, [0.75, 0.35, 0.3]),
                    ([0.9, 0.55, 2.7], 0.4, [0.3, 0.65, 0.35]),
                    ([0.0, -0.6, 4.3], 0.6, [0.6, 0.55, 0.2]),
                ];
                for (c, r, base) in spheres {
                    prims.push(Primitive {
                        shape: Shape::Sphere {
                            center: Vector3::from(c),
                            radius: r,
                        },
                        velocity: still,
                        texture: Texture::random(&mut rng, base, (0.25, 0.6), 0.15),
                    });
                }
            }
        }
        if let Some(m) = spec.moving {
            prims.push(Primitive {
                shape: Shape::Sphere {
                    center: Vector3::from(m.center),
                    radius: m.radius,
                },
                velocity: Vector3::from(m.velocity),
                texture: Texture::random(&mut rng, [0.3, 0.35, 0.8], (0.2, 0.45), 0.15),
            });
        }
        Ok(Self {
            spec,
            primitives: prims,
        })
    }

    pub fn intrinsics(&self) -> Intrinsics {
        let f = self.spec.focal;
        Intrinsics::new(
            f,
            f,
            (self.spec.width as f64 - 1.0) / 2.0,
            (self.spec.height as f64 - 1.0) / 2.0,
        )
    }

    pub fn pose(&self, t: usize) -> Extrinsics {
        match self.spec.path {
            CameraPath::Still => Extrinsics::identity(),
            CameraPath::Track { step } => {
                Extrinsics::from_camera_to_world(UnitQuaternion::identity(), Vector3::from(step) * t as f64)
            }
            CameraPath::Orbit {
                deg_per_frame,
                pivot_depth,
            } => {
                let rot = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), (deg_per_frame * t as f64).to_radians());
                let pivot = Vector3::new(0.0, 0.0, pivot_depth);
                Extrinsics::from_camera_to_world(rot, pivot + rot * (-pivot))
            }
        }
    }

    pub fn camera(&self, t: usize) -> Camera {
        Camera::new(self.intrinsics(), self.pose(t), self.spec.width, self.spec.height)
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory::from_poses((0..self.spec.frames).map(|t| (t, self.pose(t))).collect()).expect("contiguous")
    }

    /// Nearest surface through sub-pixel position `(x, y)` at frame `t`.
    pub fn cast(&self, t: usize, x: f64, y: f64) -> Option<Hit> {
        let k = self.intrinsics();
        let pose = self.pose(t);
        let cam_to_world = pose.inverse();
        let d_cam = Vector3::new((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
        let d = cam_to_world.rotation * d_cam;
        let o = pose.center();
        let mut best: Option<(f64, usize)> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some(s) = p.intersect(&o, &d, t) {
                if best.is_none_or(|(b, _)| s < b) {
                    best = Some((s, i));
                }
            }
        }
        best.map(|(s, i)| Hit {
            depth: s,
            point: o + d * s,
            primitive: i,
            moving: self.primitives[i].moving(),
        })
    }

    /// Where a surface point seen at frame `t` is at frame `t2`.
    pub fn advect(&self, hit: &Hit, t: usize, t2: usize) -> Vector3<f64> {
        hit.point + self.primitives[hit.primitive].velocity * (t2 as f64 - t as f64)
    }

    fn flow_to(&self, hit: &Hit, t: usize, t2: usize, x: f64, y: f64) -> [f64; 2] {
        let p = self.advect(hit, t, t2);
        match project(&p, &self.intrinsics(), &self.pose(t2)) {
            Ok((q, _)) => [q.x - x, q.y - y],
            Err(_) => [1e4, 1e4],
        }
    }

    pub fn frame(&self, t: usize) -> Result<OracleFrame, OracleError> {
        let (w, h) = (self.spec.width, self.spec.height);
        let n = self.spec.frames;
        let mut color = Tensor::zeros(&[h, w, 3]);
        let mut depth = Tensor::zeros(&[h, w]);
        let mut fwd = (t + 1 < n).then(|| Tensor::zeros(&[h, w, 2]));
        let mut bwd = (t > 0).then(|| Tensor::zeros(&[h, w, 2]));
        let mut moving = Mask2D::new(h, w);
        let mut pure = Mask2D::new(h, w);
        let mut primitive = vec![0; h * w];
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f64, y as f64);
                let hit = self.cast(t, px, py).ok_or_else(|| {
                    OracleError::SpecInvalid(format!("pixel ({x}, {y}) of frame {t} sees no surface"))
                })?;
                depth.set(y, x, 0, hit.depth);
                moving.set(y, x, hit.moving);
                primitive[y * w + x] = hit.primitive;
                if let Some(f) = fwd.as_mut() {
                    let v = self.flow_to(&hit, t, t + 1, px, py);
                    f.set(y, x, 0, v[0]);
                    f.set(y, x, 1, v[1]);
                }
                if let Some(f) = bwd.as_mut() {
                    let v = self.flow_to(&hit, t, t - 1, px, py);
                    f.set(y, x, 0, v[0]);
                    f.set(y, x, 1, v[1]);
                }
                let mut c = [0.0; 3];
                let mut same = true;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let ox = (sx as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
                        let oy = (sy as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
                        let s = self.cast(t, px + ox, py + oy).unwrap_or(hit);
                        same &= s.primitive == hit.primitive;
                        let sc = self.primitives[s.primitive].color(&s.point, t);
                        for k in 0..3 {
                            c[k] += sc[k];
                        }
                    }
                }
                let ns = (SUPERSAMPLE * SUPERSAMPLE) as f64;
                for k in 0..3 {
                    color.set(y, x, k, c[k] / ns);
                }
                pure.set(y, x, same);
            }
        }
        Ok(OracleFrame {
            color,
            depth,
            fwd,
            bwd,
            moving,
            pure,
            primitive,
        })
    }

    /// Diagonal of the bounding box of all surface points seen at pixel
    /// centers over the sequence.
    pub fn scene_diameter(&self) -> f64 {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for t in 0..self.spec.frames {
            for y in (0..self.spec.height).step_by(2) {
                for x in (0..self.spec.width).step_by(2) {
                    if let Some(hit) = self.cast(t, x as f64, y as f64) {
                        lo = lo.inf(&hit.point);
                        hi = hi.sup(&hit.point);
                    }
                }
            }
        }
        (hi - lo).norm()
    }

    /// Desk-scale engine settings for this sequence.
    pub fn suggested_config(&self) -> Config {
        Config {
            n_ini: 2000,
            short_side: self.spec.width.min(self.spec.height),
            ..Config::default()
        }
    }

    /// Writes the dataset layout described in [`crate::dataset`].
    pub fn generate(&self, out: &Path) -> Result<()> {
        let frames: Vec<OracleFrame> = (0..self.spec.frames)
            .into_par_iter()
            .map(|t| self.frame(t))
            .collect::<Result<_, _>>()?;
        let ds = Dataset {
            intrinsics: self.intrinsics(),
            width: self.spec.width,
            height: self.spec.height,
            frames: frames.iter().map(|f| f.color.clone()).collect(),
            depths: frames.iter().map(|f| f.depth.clone()).collect(),
            fwd: frames.iter().filter_map(|f| f.fwd.clone()).collect(),
            bwd: frames.iter().filter_map(|f| f.bwd.clone()).collect(),
        };
        ds.save(out)?;
        for (t, f) in frames.iter().enumerate() {
            save_mask_png(&mask_path(out, t), &f.moving)?;
        }
        self.trajectory().save(&out.join("gt").join("trajectory.txt"))?;
        write_text(&out.join("scene.txt"), &self.spec.to_text())?;
        write_text(&out.join("config.txt"), &self.suggested_config().to_text())?;
        Ok(())
    }
}
