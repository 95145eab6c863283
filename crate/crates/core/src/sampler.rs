//! Sampling `(t_1..t_k, z_1..z_{k+1})` from the normalised weight
//! `g_{k+1} / ‖g_{k+1}‖_{L1}`: uniform order statistics on `[0, t]` for the
//! times and forward Brownian increments for the points.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::rng::RngStream;

/// One draw from the path density. `points` is flat, point `i` occupying
/// `points[i*d..(i+1)*d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub k: usize,
    pub d: usize,
    pub times: Vec<f64>,
    pub points: Vec<f64>,
}

impl PathSample {
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }
}

/// Fills `times` (length `k`) and `points` (length `(k+1)·d`) in place.
pub fn fill_path<R: Rng + ?Sized>(k: usize, t: f64, d: usize, rng: &mut R, times: &mut Vec<f64>, points: &mut Vec<f64>) {
    times.clear();
    'draw: loop {
        times.clear();
        for _ in 0..k {
            times.push(rng.random::<f64>() * t);
        }
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut prev = 0.0;
        for &s in times.iter() {
            if s <= prev {
                continue 'draw;
            }
            prev = s;
        }
        if prev >= t && k > 0 {
            continue;
        }
        break;
    }
    points.clear();
    points.resize((k + 1) * d, 0.0);
    let mut prev_t = 0.0;
    for i in 0..=k {
        let ti = if i < k { times[i] } else { t };
        let sd = (ti - prev_t).sqrt();
        for c in 0..d {
            let base = if i == 0 { 0.0 } else { points[(i - 1) * d + c] };
            let z: f64 = rng.sample(StandardNormal);
            points[i * d + c] = base + sd * z;
        }
        prev_t = ti;
    }
}

pub fn sample_path_with<R: Rng + ?Sized>(k: usize, t: f64, d: usize, rng: &mut R) -> PathSample {
    let mut times = Vec::with_capacity(k);
    let mut points = Vec::with_capacity((k + 1) * d);
    fill_path(k, t, d, rng, &mut times, &mut points);
    PathSample { k, d, times, points }
}

/// First draw of `stream`.
pub fn sample_path(k: usize, t: f64, d: usize, stream: &RngStream) -> PathSample {
    sample_path_with(k, t, d, &mut stream.indexed(0))
}

/// `m` draws; draw `i` uses `stream.indexed(i)` so the batch is identical for
/// any worker count.
pub fn sample_batch(k: usize, t: f64, d: usize, m: usize, stream: &RngStream) -> Vec<PathSample> {
    (0..m as u64)
        .into_par_iter()
        .map(|i| sample_path_with(k, t, d, &mut stream.indexed(i)))
        .collect()
}
