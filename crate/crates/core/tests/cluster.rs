use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use splatflow_core::cluster::{estimate_fundamental, previous_moving_mask, sampson};
use splatflow_core::oracle::test_camera;
use splatflow_core::rng::rng_stream;
use splatflow_core::scene::{logit, Cluster, GaussianPoint, GaussianPointSet};
use splatflow_core::{Camera, Extrinsics, Intrinsics};

fn two_view(seed: u64, n: usize) -> Vec<([f64; 2], [f64; 2])> {
    let mut rng = rng_stream(seed, "two-view");
    let k = Intrinsics::new(300.0, 300.0, 160.0, 120.0);
    let a = Camera::new(k, Extrinsics::identity(), 320, 240);
    let rot = UnitQuaternion::from_scaled_axis(Vector3::new(0.02, -0.05, 0.01));
    let b = Camera::new(k, Extrinsics::new(rot, Vector3::new(-0.3, 0.05, 0.02)), 320, 240);
    (0..n)
        .map(|_| {
            let px = Vector2::new(rng.random_range(0.0..320.0), rng.random_range(0.0..240.0));
            let x = a.unproject(&px, rng.random_range(2.0..8.0)).unwrap();
            let (q, _) = b.project(&x).unwrap();
            ([px.x, px.y], [q.x, q.y])
        })
        .collect()
}

#[test]
fn recovers_exact_two_view_geometry() {
    let pairs = two_view(1, 60);
    let f = estimate_fundamental(&pairs).unwrap();
    for (a, b) in &pairs {
        assert!(f.sampson(*a, *b) <= 1e-6);
    }
    let s = f.matrix().svd(false, false).singular_values;
    let mut s: Vec<f64> = s.iter().copied().collect();
    s.sort_by(f64::total_cmp);
    assert!(s[0] <= 1e-12);
    assert!((f.matrix().norm() - 1.0).abs() <= 1e-12);
}

#[test]
fn robust_to_twenty_percent_outliers() {
    let mut pairs = two_view(2, 100);
    let mut rng = rng_stream(3, "outliers");
    for p in pairs.iter_mut().take(20) {
        p.1 = [rng.random_range(0.0..320.0), rng.random_range(0.0..240.0)];
    }
    let f = estimate_fundamental(&pairs).unwrap();
    let worst = pairs[20..]
        .iter()
        .map(|(a, b)| sampson(f.matrix(), *a, *b))
        .fold(0.0, f64::max);
    assert!(worst <= 1e-3, "worst inlier Sampson {worst}");
}

#[test]
fn previous_mask_covers_moving_footprint_only() {
    let cam = test_camera(40, 30);
    let mut set = GaussianPointSet::new();
    assert!(previous_moving_mask(&set, &cam).is_empty());
    let mk = |mean: [f64; 3], cluster| GaussianPoint {
        mean,
        log_scale: [0.05f64.ln(); 3],
        opacity_logit: logit(0.99),
        rotation: [1.0, 0.0, 0.0, 0.0],
        color: [0.0; 3],
        id: 0,
        cluster,
        birth_frame: 0,
    };
    set.push(mk([0.0, 0.0, 2.0], Cluster::Moving));
    set.push(mk([0.5, 0.0, 2.0], Cluster::Still));
    let m = previous_moving_mask(&set, &cam);
    // black color still marks the footprint
    assert!(m.get(15, 20) || m.get(14, 19));
    let (c, _) = cam.project(&Vector3::new(0.5, 0.0, 2.0)).unwrap();
    assert!(!m.get(c.y.round() as usize, c.x.round() as usize));
    // 3σ footprint: σ_px = 0.05 * fx / 2 = 1.2 px, plus dilation
    let sigma = (0.05f64 * cam.intrinsics.fx / 2.0).powi(2) + 0.3;
    let r = 3.0 * sigma.sqrt();
    for y in 0..30 {
        for x in 0..40 {
            let d = ((x as f64 - 19.5).powi(2) + (y as f64 - 14.5).powi(2)).sqrt();
            assert_eq!(m.get(y, x), d < r, "pixel {x},{y}");
        }
    }
}
