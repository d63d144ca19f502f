//! Deterministic synthetic data shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rot_core::pipeline::ImageBuffer;
use rot_core::PointCloud;
use std::f64::consts::PI;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, dim: usize, lo: f64, hi: f64) -> PointCloud {
    PointCloud::from_flat(dim, (0..n * dim).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()).unwrap()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let (a, b): (f64, f64) = (rng.random(), rng.random());
    (-2.0 * a.max(1e-300).ln()).sqrt() * (2.0 * PI * b).cos()
}

/// Four anisotropic clusters inside `[0.1, 0.9]²`.
pub fn blob(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    let centres = [
        [0.3, 0.35, 0.06, 0.03],
        [0.62, 0.3, 0.04, 0.07],
        [0.45, 0.65, 0.08, 0.04],
        [0.7, 0.68, 0.03, 0.05],
    ];
    let mut v = Vec::with_capacity(2 * n);
    for i in 0..n {
        let c = centres[i % 4];
        v.push((c[0] + c[2] * normal(rng)).clamp(0.1, 0.9));
        v.push((c[1] + c[3] * normal(rng)).clamp(0.1, 0.9));
    }
    PointCloud::from_flat(2, v).unwrap()
}

/// Affine map plus a mild smooth bend.
pub fn mild_warp(p: &[f64]) -> Vec<f64> {
    let (x, y) = (p[0], p[1]);
    vec![
        0.92 * x + 0.08 * y + 0.02 + 0.02 * (3.0 * y).sin(),
        -0.05 * x + 0.95 * y + 0.03 + 0.02 * (3.0 * x).cos(),
    ]
}

/// `mild_warp` followed by a rotation by `theta` about the box centre.
pub fn rotated_warp(theta: f64) -> impl Fn(&[f64]) -> Vec<f64> {
    move |p: &[f64]| {
        let q = mild_warp(p);
        let (dx, dy) = (q[0] - 0.5, q[1] - 0.5);
        vec![
            0.5 + theta.cos() * dx - theta.sin() * dy,
            0.5 + theta.sin() * dx + theta.cos() * dy,
        ]
    }
}

/// Smooth synthetic image, quantised to 8 bits.
pub fn synth_image(w: u32, h: u32, f: impl Fn(f64, f64) -> [f64; 3]) -> ImageBuffer {
    let mut px = Vec::with_capacity((w * h) as usize);
    for j in 0..h {
        for i in 0..w {
            let c = f(i as f64 / (w - 1) as f64, j as f64 / (h - 1) as f64);
            px.push(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0));
        }
    }
    ImageBuffer::new(w, h, px).unwrap()
}

pub fn scene(w: u32, h: u32) -> ImageBuffer {
    synth_image(w, h, |u, v| [0.2 + 0.6 * u, 0.3 + 0.3 * (3.0 * v).sin().abs(), 0.6 - 0.4 * u * v])
}

pub fn palette(w: u32, h: u32) -> ImageBuffer {
    synth_image(w, h, |u, v| [0.7 - 0.3 * v, 0.2 + 0.5 * u * u, 0.3 + 0.4 * v])
}

pub fn sunset(w: u32, h: u32) -> ImageBuffer {
    synth_image(w, h, |u, v| [0.85 - 0.2 * v, 0.35 + 0.3 * u * (1.0 - v), 0.15 + 0.35 * v * v])
}

/// Every channel raised by `delta`, clipped to `[0, 1]`.
pub fn shifted(img: &ImageBuffer, delta: f64) -> ImageBuffer {
    let px = img.pixels().iter().map(|p| p.map(|c| (c + delta).min(1.0))).collect();
    ImageBuffer::new(img.width(), img.height(), px).unwrap()
}
