#![allow(dead_code)]

pub mod oracle;

use tala_core::barpointer::{
    build_state_space, default_bins_per_cycle, fit_observation_model, BarPointerStateSpace,
    ObservationModel,
};
use tala_core::model::{AnnotationSequence, FrameGrid, NoveltySignal, TalaSpec};
use tala_core::synth::{generate_annotations, generate_novelty, synthetic_training_set, SynthSpec};

pub const FPS: f64 = 100.0;
pub const TEMPO_RANGE: (f64, f64) = (55.0, 230.0);

pub fn grid_for(duration_sec: f64) -> FrameGrid {
    FrameGrid::new(FPS, (duration_sec * FPS).ceil() as usize).unwrap()
}

pub fn benchmark_track(
    tala: &TalaSpec,
    bpm: f64,
    duration_sec: f64,
    seed: u64,
) -> (NoveltySignal, AnnotationSequence) {
    let spec = SynthSpec::benchmark(tala.clone(), bpm, duration_sec, seed);
    let grid = grid_for(duration_sec);
    (
        generate_novelty(&spec, &grid).unwrap(),
        generate_annotations(&spec).unwrap(),
    )
}

/// Model fitted on benchmark tracks with seeds disjoint from the test tracks.
pub fn fitted_model(tala: &TalaSpec) -> ObservationModel {
    let training =
        synthetic_training_set(tala, &[70.0, 100.0, 140.0, 170.0], 30.0, FPS, 10_000).unwrap();
    fit_observation_model(&training, tala, default_bins_per_cycle(tala), 2).unwrap()
}

pub fn space(tala: &TalaSpec) -> BarPointerStateSpace {
    build_state_space(tala, TEMPO_RANGE, FPS, 1).unwrap()
}

pub fn preset(b: u32) -> TalaSpec {
    TalaSpec::registered()
        .into_iter()
        .find(|t| t.beats_per_cycle == b)
        .unwrap()
}

/// Central finite differences of `f` at `x` with step `h`.
pub fn finite_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest relative deviation between two gradients; entries where both are
/// zero count as exact.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let scale = x.abs().max(y.abs());
            if scale == 0.0 {
                0.0
            } else {
                (x - y).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

/// Random instance for gradient checks: binary targets with about one
/// positive in `1 / pos_rate` frames and distinct predictions in
/// [0.02, 0.98] spaced at least `gap` apart, so pooling has no ties.
pub fn tie_free_instance(seed: u64, len: usize, pos_rate: f64, gap: f64) -> (Vec<f64>, Vec<f64>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let targets: Vec<f64> = (0..len)
        .map(|_| {
            if rng.random::<f64>() < pos_rate {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    loop {
        let preds: Vec<f64> = (0..len).map(|_| rng.random_range(0.02..0.98)).collect();
        let mut sorted = preds.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).all(|w| w[1] - w[0] > gap) {
            return (targets, preds);
        }
    }
}
