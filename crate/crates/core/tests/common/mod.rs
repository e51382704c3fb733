#![allow(dead_code)]

use std::path::PathBuf;

use rand_chacha::ChaCha8Rng;
use schottky_vir::{circle_points, Complex64 as C, SchottkyParams, Surface, TruncationPolicy};

pub const RADIUS: f64 = 6.0;

pub fn fixture_params() -> SchottkyParams {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/g2_reference.json");
    SchottkyParams::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn surface(max_word_length: usize) -> Surface {
    Surface::new(fixture_params(), TruncationPolicy::fixed(max_word_length)).unwrap()
}

pub fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

pub fn rel(a: C, b: C) -> f64 {
    (a - b).norm() / b.norm()
}

/// Points on the radius-6 circle with pairwise separation above 1.
pub fn spread_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<C> {
    loop {
        let z = circle_points(rng, n, RADIUS);
        if (0..n).all(|i| (0..i).all(|j| (z[i] - z[j]).norm() > 1.0)) {
            return z;
        }
    }
}
