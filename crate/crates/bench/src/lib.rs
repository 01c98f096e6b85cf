//! Shared fixtures for the benchmarks.

use splatflow_core::oracle::{perturbed_test_camera, random_point_set};
use splatflow_core::{Camera, GaussianPointSet, Tensor};

/// A random point set of `n` points in front of a `width x height` camera.
pub fn scene(n: usize, width: usize, height: usize) -> (GaussianPointSet, Camera) {
    let cam = perturbed_test_camera(1, width, height);
    let set = random_point_set(1, n, &cam);
    (set, cam)
}

/// A smooth test image.
pub fn image(width: usize, height: usize) -> Tensor {
    Tensor::from_fn(height, width, 3, |y, x, c| {
        0.5 + 0.4 * ((x as f64 * 0.11 + c as f64).sin() * (y as f64 * 0.07).cos())
    })
}
