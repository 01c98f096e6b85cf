use proptest::prelude::*;
use rand::Rng;
use splatflow_core::loss::{depth_loss, flow_loss, isotropic_loss, photometric_loss, ssim};
use splatflow_core::rng::rng_stream;
use splatflow_core::{Mask2D, Tensor};

/// Direct SSIM: every window is evaluated explicitly with zero padding.
fn ssim_map_direct(a: &Tensor, b: &Tensor, c: usize) -> Vec<f64> {
    let (h, w) = (a.height() as isize, a.width() as isize);
    let mut g = [[0.0; 11]; 11];
    let mut s = 0.0;
    for i in 0..11 {
        for j in 0..11 {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            g[i][j] = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
            s += g[i][j];
        }
    }
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (mut ma, mut mb, mut maa, mut mbb, mut mab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let (yy, xx) = (y + i as isize - 5, x + j as isize - 5);
                    if yy < 0 || xx < 0 || yy >= h || xx >= w {
                        continue;
                    }
                    let wgt = g[i][j] / s;
                    let va = a.at(yy as usize, xx as usize, c);
                    let vb = b.at(yy as usize, xx as usize, c);
                    ma += wgt * va;
                    mb += wgt * vb;
                    maa += wgt * va * va;
                    mbb += wgt * vb * vb;
                    mab += wgt * va * vb;
                }
            }
            let (c1, c2) = (1e-4, 9e-4);
            out.push(
                (2.0 * ma * mb + c1) * (2.0 * (mab - ma * mb) + c2)
                    / ((ma * ma + mb * mb + c1) * (maa - ma * ma + mbb - mb * mb + c2)),
            );
        }
    }
    out
}

fn random_image(seed: u64, h: usize, w: usize) -> Tensor {
    let mut rng = rng_stream(seed, "img");
    Tensor::from_fn(h, w, 3, |_, _, _| rng.random_range(0.0..1.0))
}

#[test]
fn ssim_matches_direct_windows() {
    let a = random_image(1, 14, 17);
    let b = a.map(|v| (v * 0.8 + 0.1).min(1.0));
    let direct: f64 = (0..3)
        .map(|c| ssim_map_direct(&a, &b, c).iter().sum::<f64>())
        .sum::<f64>()
        / (14.0 * 17.0 * 3.0);
    assert!((ssim(&a, &b) - direct).abs() < 1e-12);
}

#[test]
fn constant_offset_mse_and_luminance_penalty() {
    let a = random_image(2, 12, 12).map(|v| v * 0.5);
    let b = a.map(|v| v + 0.1);
    let l = photometric_loss(&b, &a, None, 1.0).unwrap();
    assert!((l.mse - 0.01).abs() < 1e-12);
    let direct: f64 = (0..3)
        .map(|c| ssim_map_direct(&b, &a, c).iter().sum::<f64>())
        .sum::<f64>()
        / (12.0 * 12.0 * 3.0);
    assert!((l.dssim - (1.0 - direct)).abs() < 1e-12);
}

#[test]
fn ssim_is_symmetric() {
    let a = random_image(3, 10, 13);
    let b = random_image(4, 10, 13);
    assert!((ssim(&a, &b) - ssim(&b, &a)).abs() < 1e-14);
}

fn fd_check(name: &str, analytic: f64, numeric: f64) {
    let err = (analytic - numeric).abs();
    assert!(
        err <= 1e-3 * analytic.abs().max(numeric.abs()) || err <= 1e-7,
        "{name}: analytic {analytic} numeric {numeric}"
    );
}

#[test]
fn photometric_gradient_matches_finite_differences() {
    let target = random_image(5, 9, 11);
    let rendered = random_image(6, 9, 11);
    let exclude = Mask2D::from_fn(9, 11, |y, x| y < 3 && x < 4);
    let l = photometric_loss(&rendered, &target, Some(&exclude), 0.7).unwrap();
    let h = 1e-5;
    for k in (0..rendered.data().len()).step_by(7) {
        let mut p = rendered.clone();
        p.data_mut()[k] += h;
        let mut m = rendered.clone();
        m.data_mut()[k] -= h;
        let fp = photometric_loss(&p, &target, Some(&exclude), 0.7).unwrap().value(0.7);
        let fm = photometric_loss(&m, &target, Some(&exclude), 0.7).unwrap().value(0.7);
        fd_check("photometric", l.adjoint.data()[k], (fp - fm) / (2.0 * h));
    }
    for y in 0..3 {
        for x in 0..4 {
            assert_eq!(l.adjoint.at(y, x, 0), 0.0);
        }
    }
}

#[test]
fn depth_gradient_matches_finite_differences() {
    let mut rng = rng_stream(7, "depth");
    let r = Tensor::from_fn(8, 8, 1, |_, _, _| rng.random_range(1.0..3.0));
    let t = Tensor::from_fn(8, 8, 1, |_, _, _| rng.random_range(0.0..1.0));
    let region = Mask2D::from_fn(8, 8, |y, x| (x + y) % 3 != 0);
    let l = depth_loss(&r, &t, &region).unwrap();
    let h = 1e-6;
    for k in 0..64 {
        let mut p = r.clone();
        p.data_mut()[k] += h;
        let mut m = r.clone();
        m.data_mut()[k] -= h;
        let num = (depth_loss(&p, &t, &region).unwrap().loss - depth_loss(&m, &t, &region).unwrap().loss) / (2.0 * h);
        fd_check("depth", l.adjoint.data()[k], num);
    }
}

#[test]
fn depth_loss_matches_grid_search() {
    let mut rng = rng_stream(8, "grid");
    let r = Tensor::from_fn(8, 8, 1, |_, _, _| rng.random_range(0.5..2.0));
    let t = Tensor::from_fn(8, 8, 1, |y, x, _| {
        0.3 * r.at(y, x, 0) + 1.0 + rng.random_range(-0.1..0.1)
    });
    let region = Mask2D::full(8, 8);
    let l2 = |a: f64, b: f64| {
        (0..64)
            .map(|k| (a * r.data()[k] + b - t.data()[k]).powi(2))
            .sum::<f64>()
    };
    let (mut a0, mut b0, mut span) = (0.0, 0.0, 4.0);
    for _ in 0..40 {
        let mut best = (f64::INFINITY, a0, b0);
        for i in -10..=10 {
            for j in -10..=10 {
                let (a, b) = (a0 + span * i as f64 / 10.0, b0 + span * j as f64 / 10.0);
                let v = l2(a, b);
                if v < best.0 {
                    best = (v, a, b);
                }
            }
        }
        (a0, b0) = (best.1, best.2);
        span *= 0.5;
    }
    let oracle = (0..64)
        .map(|k| (a0 * r.data()[k] + b0 - t.data()[k]).abs())
        .sum::<f64>()
        / 64.0;
    assert!((depth_loss(&r, &t, &region).unwrap().loss - oracle).abs() < 1e-4);
}

#[test]
fn flow_gradient_and_exact_flow() {
    let mut rng = rng_stream(9, "flow");
    let flow = Tensor::from_fn(10, 12, 2, |_, _, _| rng.random_range(-2.0..2.0));
    let prev: Vec<[f64; 2]> = (0..20)
        .map(|_| [rng.random_range(0.0..11.0), rng.random_range(0.0..9.0)])
        .collect();
    let exact: Vec<[f64; 2]> = prev
        .iter()
        .map(|p| {
            let f = flow.bilinear2(p[0], p[1]).unwrap();
            [p[0] + f[0], p[1] + f[1]]
        })
        .collect();
    assert!(flow_loss(&exact, &prev, &flow).unwrap().loss < 1e-28);

    let curr: Vec<[f64; 2]> = exact
        .iter()
        .map(|c| [c[0] + rng.random_range(-1.0..1.0), c[1] + 0.3])
        .collect();
    let l = flow_loss(&curr, &prev, &flow).unwrap();
    let h = 1e-6;
    for i in 0..curr.len() {
        for k in 0..2 {
            let mut p = curr.clone();
            p[i][k] += h;
            let mut m = curr.clone();
            m[i][k] -= h;
            let num =
                (flow_loss(&p, &prev, &flow).unwrap().loss - flow_loss(&m, &prev, &flow).unwrap().loss) / (2.0 * h);
            fd_check("flow", l.adjoint[i][k], num);
        }
    }
    assert!(flow_loss(&[[0.0, 0.0]], &[[-5.0, 0.0]], &flow).is_err());
}

#[test]
fn isotropic_gradient_matches_finite_differences() {
    let mut rng = rng_stream(10, "iso");
    let ls: Vec<[f64; 3]> = (0..6).map(|_| [0; 3].map(|_| rng.random_range(-3.0..0.0))).collect();
    let (_, g) = isotropic_loss(&ls);
    let h = 1e-6;
    for i in 0..6 {
        for k in 0..3 {
            let mut p = ls.clone();
            p[i][k] += h;
            let mut m = ls.clone();
            m[i][k] -= h;
            let num = (isotropic_loss(&p).0 - isotropic_loss(&m).0) / (2.0 * h);
            fd_check("iso", g[i][k], num);
        }
    }
}

proptest! {
    #[test]
    fn depth_loss_is_affine_invariant(seed in 0u64..1000, a in 0.2f64..5.0, b in -3.0f64..3.0) {
        let mut rng = rng_stream(seed, "affine");
        let r = Tensor::from_fn(8, 8, 1, |_, _, _| rng.random_range(0.5..4.0));
        let t = Tensor::from_fn(8, 8, 1, |_, _, _| rng.random_range(0.0..1.0));
        let region = Mask2D::full(8, 8);
        let base = depth_loss(&r, &t, &region).unwrap().loss;
        let moved = depth_loss(&r.map(|v| a * v + b), &t, &region).unwrap().loss;
        prop_assert!((base - moved).abs() <= 1e-6);
    }

    #[test]
    fn isotropic_loss_zero_iff_isotropic(s in proptest::array::uniform3(-4.0f64..1.0)) {
        let (l, _) = isotropic_loss(&[s]);
        let iso = s[0] == s[1] && s[1] == s[2];
        prop_assert_eq!(l == 0.0, iso);
    }

    #[test]
    fn flow_loss_translation_consistent(dx in -5.0f64..5.0, dy in -5.0f64..5.0) {
        let flow = Tensor::from_fn(10, 10, 2, |y, x, c| if c == 0 { 0.5 } else { -0.25 + 0.0 * (x + y) as f64 });
        let prev = vec![[2.0, 3.0], [7.5, 4.25]];
        let curr: Vec<[f64; 2]> = prev.iter().map(|p| [p[0] + 0.5 + dx, p[1] - 0.25 + dy]).collect();
        let shifted = flow_loss(&curr, &prev, &flow).unwrap().loss;
        prop_assert!((shifted - 0.5 * (dx * dx + dy * dy)).abs() < 1e-12);
    }
}
