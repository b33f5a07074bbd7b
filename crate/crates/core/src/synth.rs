//! Synthetic ground truth: isochronous annotations with optional timing
//! jitter, and novelty or activation curves with triangular spikes on them.
//!
//! All randomness comes from ChaCha8 seeded with `seed` via
//! `SeedableRng::seed_from_u64`. Stream 0 draws the timing jitter, stream 1
//! the novelty noise and stream 2 the activation noise, so each output is
//! reproducible on its own.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{MeterError, Result};
use crate::model::{
    ActivationPair, AnnotationSequence, FrameGrid, MeterEvent, NoveltySignal, TalaSpec,
};

const MAX_JITTER_DRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub tala: TalaSpec,
    pub tempo_bpm: f64,
    pub duration_sec: f64,
    /// Spike amplitude per cycle position, index 0 being the sama.
    pub accent_profile: Vec<f64>,
    pub timing_jitter_std_sec: f64,
    pub spike_width_frames: usize,
    pub noise_floor: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Flat accents, no jitter, no noise, single-frame spikes.
    pub fn new(tala: TalaSpec, tempo_bpm: f64, duration_sec: f64) -> Self {
        let b = tala.beats_per_cycle as usize;
        Self {
            tala,
            tempo_bpm,
            duration_sec,
            accent_profile: vec![1.0; b],
            timing_jitter_std_sec: 0.0,
            spike_width_frames: 1,
            noise_floor: 0.0,
            seed: 0,
        }
    }

    /// A moderately realistic track: sama accented over the other beats,
    /// 5 ms timing jitter, noise floor 0.05 and five-frame spikes.
    pub fn benchmark(tala: TalaSpec, tempo_bpm: f64, duration_sec: f64, seed: u64) -> Self {
        let b = tala.beats_per_cycle as usize;
        let mut accent_profile = vec![0.6; b];
        accent_profile[0] = 1.0;
        Self {
            tala,
            tempo_bpm,
            duration_sec,
            accent_profile,
            timing_jitter_std_sec: 0.005,
            spike_width_frames: 5,
            noise_floor: 0.05,
            seed,
        }
    }

    pub fn ibi_sec(&self) -> f64 {
        60.0 / self.tempo_bpm
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tempo_bpm > 0.0 && self.tempo_bpm.is_finite()) {
            return Err(MeterError::invalid("tempo must be positive"));
        }
        let cycle = self.ibi_sec() * f64::from(self.tala.beats_per_cycle);
        if !(self.duration_sec.is_finite() && self.duration_sec >= cycle) {
            return Err(MeterError::invalid(format!(
                "duration {} s shorter than one cycle ({cycle} s)",
                self.duration_sec
            )));
        }
        if self.accent_profile.len() != self.tala.beats_per_cycle as usize {
            return Err(MeterError::invalid(format!(
                "accent profile has {} entries for {} beats",
                self.accent_profile.len(),
                self.tala.beats_per_cycle
            )));
        }
        if self.accent_profile.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return Err(MeterError::invalid("accent amplitudes must lie in (0, 1]"));
        }
        if self
            .accent_profile
            .iter()
            .any(|&a| a > self.accent_profile[0])
        {
            return Err(MeterError::invalid("sama accent must be the largest"));
        }
        let jitter = self.timing_jitter_std_sec;
        if !(jitter >= 0.0 && jitter < self.ibi_sec() / 2.0) {
            return Err(MeterError::invalid("jitter std must be in [0, IBI/2)"));
        }
        if self.spike_width_frames == 0 {
            return Err(MeterError::invalid(
                "spike width must be at least one frame",
            ));
        }
        if !(self.noise_floor >= 0.0 && self.noise_floor.is_finite()) {
            return Err(MeterError::invalid("noise floor must be non-negative"));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Beats at `i * IBI` for every nominal time inside the duration, each moved
/// by Gaussian jitter. A draw that would leave the track or reorder the
/// beats is redrawn.
pub fn generate_annotations(spec: &SynthSpec) -> Result<AnnotationSequence> {
    spec.validate()?;
    let ibi = spec.ibi_sec();
    let b = spec.tala.beats_per_cycle;
    let mut rng = spec.rng(0);
    let normal = Normal::new(0.0, spec.timing_jitter_std_sec)
        .map_err(|e| MeterError::invalid(e.to_string()))?;
    let mut events: Vec<MeterEvent> = Vec::new();
    let mut i = 0u32;
    loop {
        let nominal = f64::from(i) * ibi;
        if nominal >= spec.duration_sec {
            break;
        }
        let prev = events.last().map(|e| e.time_sec);
        let ok = |t: f64| t >= 0.0 && t < spec.duration_sec && prev.is_none_or(|p| t > p);
        let mut time = nominal;
        if spec.timing_jitter_std_sec > 0.0 {
            time = (0..MAX_JITTER_DRAWS)
                .map(|_| nominal + normal.sample(&mut rng))
                .find(|&t| ok(t))
                .unwrap_or(nominal);
        }
        if !ok(time) {
            time = prev.map_or(nominal, |p| p + (nominal - p).max(ibi * 1e-3));
        }
        events.push(MeterEvent {
            time_sec: time,
            cycle_position: i % b + 1,
        });
        i += 1;
    }
    AnnotationSequence::new(events, spec.tala.clone())
}

/// Annotated novelty curves of benchmark tracks at each tempo, for fitting
/// an observation model when no real training data is at hand.
pub fn synthetic_training_set(
    tala: &TalaSpec,
    tempi_bpm: &[f64],
    duration_sec: f64,
    frame_rate_hz: f64,
    seed: u64,
) -> Result<Vec<(NoveltySignal, AnnotationSequence)>> {
    tempi_bpm
        .iter()
        .enumerate()
        .map(|(i, &bpm)| {
            let spec =
                SynthSpec::benchmark(tala.clone(), bpm, duration_sec, seed.wrapping_add(i as u64));
            let frames = (duration_sec * frame_rate_hz).ceil() as usize;
            let grid = FrameGrid::new(frame_rate_hz, frames)?;
            Ok((
                generate_novelty(&spec, &grid)?,
                generate_annotations(&spec)?,
            ))
        })
        .collect()
}

/// Adds a triangular spike of peak `amp` centred on `frame`, keeping the
/// larger value where spikes overlap.
fn add_spike(values: &mut [f64], frame: usize, width: usize, amp: f64) {
    let half = (width - 1) / 2;
    let scale = (width as f64 + 1.0) / 2.0;
    let lo = frame.saturating_sub(half);
    let hi = (frame + half).min(values.len() - 1);
    for (k, v) in values.iter_mut().enumerate().take(hi + 1).skip(lo) {
        let d = k.abs_diff(frame) as f64;
        *v = v.max(amp * (1.0 - d / scale));
    }
}

fn check_grid(spec: &SynthSpec, grid: &FrameGrid) -> Result<()> {
    if grid.num_frames() == 0 || grid.duration_sec() + 1e-9 < spec.duration_sec {
        return Err(MeterError::invalid(format!(
            "grid of {} s does not cover {} s",
            grid.duration_sec(),
            spec.duration_sec
        )));
    }
    Ok(())
}

/// Novelty with accent-scaled spikes on the annotated beats over uniform
/// noise in `[0, noise_floor]`.
pub fn generate_novelty(spec: &SynthSpec, grid: &FrameGrid) -> Result<NoveltySignal> {
    check_grid(spec, grid)?;
    let ann = generate_annotations(spec)?;
    let mut rng = spec.rng(1);
    let mut values: Vec<f64> = (0..grid.num_frames())
        .map(|_| rng.random::<f64>() * spec.noise_floor)
        .collect();
    for e in ann.events() {
        let frame = grid.time_to_frame(e.time_sec)?;
        let amp = spec.accent_profile[e.cycle_position as usize - 1];
        add_spike(&mut values, frame, spec.spike_width_frames, amp);
    }
    NoveltySignal::new(grid.frame_rate_hz(), values)
}

/// Ideal network outputs: unit spikes on beats and on samas.
///
/// With `off_phase` every spike sits halfway to the next beat instead, the
/// way a performance played on the off-beat looks to an onset detector;
/// both curves move together so their meter stays consistent.
pub fn generate_activations(
    spec: &SynthSpec,
    grid: &FrameGrid,
    off_phase: bool,
) -> Result<ActivationPair> {
    check_grid(spec, grid)?;
    let ann = generate_annotations(spec)?;
    let events = ann.events();
    let mut rng = spec.rng(2);
    let mut noise = || rng.random::<f64>() * spec.noise_floor;
    let n = grid.num_frames();
    let mut beat: Vec<f64> = (0..n).map(|_| noise()).collect();
    let mut downbeat: Vec<f64> = (0..n).map(|_| noise()).collect();
    for (i, e) in events.iter().enumerate() {
        let mut t = e.time_sec;
        if off_phase {
            let next = events.get(i + 1).map_or(t + spec.ibi_sec(), |n| n.time_sec);
            t += (next - t) / 2.0;
            if t >= spec.duration_sec.min(grid.duration_sec()) {
                continue;
            }
        }
        let frame = grid.time_to_frame(t)?;
        add_spike(&mut beat, frame, spec.spike_width_frames, 1.0);
        if e.cycle_position == 1 {
            add_spike(&mut downbeat, frame, spec.spike_width_frames, 1.0);
        }
    }
    for v in beat.iter_mut().chain(downbeat.iter_mut()) {
        *v = v.clamp(0.0, 1.0);
    }
    ActivationPair::new(grid.frame_rate_hz(), beat, downbeat)
}
