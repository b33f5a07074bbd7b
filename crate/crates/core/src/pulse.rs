//! Classical periodicity analysis: Fourier tempogram, predominant local
//! pulse, dynamic-programming beat tracking, and tempo/cycle statistics.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{MeterError, Result};
use crate::features::hann_window;
use crate::model::{AnnotationSequence, BeatList, FrameGrid, NoveltySignal};

#[derive(Debug, Clone, PartialEq)]
pub struct Tempogram {
    grid: FrameGrid,
    bpm_axis: Vec<f64>,
    window_frames: usize,
    magnitudes: Vec<f64>,
    phases: Vec<f64>,
}

impl Tempogram {
    pub fn grid(&self) -> &FrameGrid {
        &self.grid
    }

    pub fn bpm_axis(&self) -> &[f64] {
        &self.bpm_axis
    }

    pub fn window_frames(&self) -> usize {
        self.window_frames
    }

    pub fn magnitude(&self, frame: usize, tempo: usize) -> f64 {
        self.magnitudes[frame * self.bpm_axis.len() + tempo]
    }

    pub fn phase(&self, frame: usize, tempo: usize) -> f64 {
        self.phases[frame * self.bpm_axis.len() + tempo]
    }

    pub fn frame_magnitudes(&self, frame: usize) -> &[f64] {
        let t = self.bpm_axis.len();
        &self.magnitudes[frame * t..(frame + 1) * t]
    }

    /// Index of the strongest tempo at `frame`; ties go to the slower tempo.
    pub fn dominant_tempo(&self, frame: usize) -> usize {
        argmax_first(self.frame_magnitudes(frame))
    }

    /// Tempo with the largest magnitude summed over all frames.
    pub fn global_tempo_bpm(&self) -> f64 {
        let t = self.bpm_axis.len();
        let mut totals = vec![0.0; t];
        for n in 0..self.grid.num_frames() {
            for (acc, m) in totals.iter_mut().zip(self.frame_magnitudes(n)) {
                *acc += m;
            }
        }
        self.bpm_axis[argmax_first(&totals)]
    }
}

fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct TempogramParams {
    pub bpm_axis: Vec<f64>,
    pub window_sec: f64,
    pub remove_mean: bool,
}

impl Default for TempogramParams {
    fn default() -> Self {
        Self {
            bpm_axis: (30..=300).map(f64::from).collect(),
            window_sec: 4.0,
            remove_mean: true,
        }
    }
}

/// Windowed complex correlation of the novelty curve against a complex
/// exponential at each tempo, evaluated at every novelty frame.
pub fn fourier_tempogram(nov: &NoveltySignal, params: &TempogramParams) -> Result<Tempogram> {
    let axis = &params.bpm_axis;
    if axis.is_empty() {
        return Err(MeterError::invalid("empty tempo axis"));
    }
    if axis.iter().any(|b| !(b.is_finite() && *b > 0.0)) || axis.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MeterError::invalid(
            "tempo axis must be positive and strictly increasing",
        ));
    }
    let fps = nov.grid().frame_rate_hz();
    let min_period = 60.0 / axis[0];
    if !(params.window_sec >= 2.0 * min_period) {
        return Err(MeterError::invalid(format!(
            "window of {} s covers fewer than two periods of {} BPM",
            params.window_sec, axis[0]
        )));
    }
    let k = nov.len();
    let window_frames = ((params.window_sec * fps).round() as usize).max(1);
    let half = window_frames / 2;
    let window = hann_window(window_frames);
    let x: Vec<f64> = if params.remove_mean && k > 0 {
        let mean = nov.values().iter().sum::<f64>() / k as f64;
        nov.values().iter().map(|v| v - mean).collect()
    } else {
        nov.values().to_vec()
    };

    let t = axis.len();
    let mut magnitudes = vec![0.0; k * t];
    let mut phases = vec![0.0; k * t];
    let mut re_basis = vec![0.0; k];
    let mut im_basis = vec![0.0; k];
    for (ti, &bpm) in axis.iter().enumerate() {
        let omega = 2.0 * PI * bpm / 60.0 / fps;
        for m in 0..k {
            let xm = x[m];
            re_basis[m] = xm * (omega * m as f64).cos();
            im_basis[m] = -xm * (omega * m as f64).sin();
        }
        for n in 0..k {
            let lo = n.saturating_sub(half);
            let hi = (n + window_frames - half).min(k);
            let (mut re, mut im) = (0.0, 0.0);
            for m in lo..hi {
                let w = window[m + half - n];
                re += w * re_basis[m];
                im += w * im_basis[m];
            }
            magnitudes[n * t + ti] = (re * re + im * im).sqrt();
            phases[n * t + ti] = im.atan2(re);
        }
    }
    Ok(Tempogram {
        grid: *nov.grid(),
        bpm_axis: axis.clone(),
        window_frames,
        magnitudes,
        phases,
    })
}

/// Predominant local pulse curve.
///
/// At every half window a Hann-windowed cosine at the dominant tempo and its
/// measured phase is placed; the kernels are overlap-added and half-wave
/// rectified.
pub fn plp_curve(tg: &Tempogram, nov_grid: &FrameGrid) -> Result<NoveltySignal> {
    if tg.bpm_axis.is_empty() {
        return Err(MeterError::invalid("empty tempogram"));
    }
    let k = nov_grid.num_frames();
    let fps = nov_grid.frame_rate_hz();
    let len = tg.window_frames;
    let half = len / 2;
    let hop = half.max(1);
    let window = hann_window(len);
    let mut acc = vec![0.0; k];
    let frames = tg.grid.num_frames().min(k);
    let mut n = 0;
    while n < frames {
        let ti = tg.dominant_tempo(n);
        if tg.magnitude(n, ti) > 0.0 {
            let omega = 2.0 * PI * tg.bpm_axis[ti] / 60.0 / fps;
            let phase = tg.phase(n, ti);
            let lo = n.saturating_sub(half);
            let hi = (n + len - half).min(k);
            for (m, slot) in acc.iter_mut().enumerate().take(hi).skip(lo) {
                *slot += window[m + half - n] * (omega * m as f64 + phase).cos();
            }
        }
        n += hop;
    }
    for v in &mut acc {
        *v = v.max(0.0);
    }
    NoveltySignal::new(fps, acc)
}

/// Frames of strict local maxima above `threshold` (plateaus report their
/// first frame).
pub fn pick_peaks(nov: &NoveltySignal, threshold: f64) -> Vec<usize> {
    let v = nov.values();
    (0..v.len())
        .filter(|&i| {
            v[i] > threshold
                && (i == 0 || v[i] > v[i - 1])
                && (i + 1 == v.len() || v[i] >= v[i + 1])
        })
        .collect()
}

/// Globally optimal beat sequence under an assumed tempo.
///
/// Score: `C(t) = nov(t) + max_tau [C(tau) - lambda * ln((t - tau) / period)^2]`
/// over `tau` in `[t - 2*period, t - period/2]`. A sequence may start only
/// where that window is empty, and the last beat is the best-scoring frame in
/// the final period. Equal scores resolve to the smaller index.
pub fn ellis_dp_beats(nov: &NoveltySignal, target_bpm: f64, lambda: f64) -> Result<BeatList> {
    if !(target_bpm > 10.0 && target_bpm < 600.0) {
        return Err(MeterError::invalid(format!(
            "target tempo {target_bpm} BPM outside (10, 600)"
        )));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(MeterError::invalid("lambda must be positive"));
    }
    let fps = nov.grid().frame_rate_hz();
    let period = 60.0 * fps / target_bpm;
    let k = nov.len();
    if (k as f64) < period {
        return Ok(BeatList::empty());
    }
    let min_gap = ((period / 2.0).round() as usize).max(1);
    let max_gap = ((2.0 * period).round() as usize).max(min_gap);
    let penalty: Vec<f64> = (0..=max_gap)
        .map(|d| {
            if d == 0 {
                f64::NEG_INFINITY
            } else {
                -lambda * (d as f64 / period).ln().powi(2)
            }
        })
        .collect();

    let x = nov.values();
    let mut score = vec![0.0; k];
    let mut back: Vec<Option<usize>> = vec![None; k];
    for t in 0..k {
        if t < min_gap {
            score[t] = x[t];
            continue;
        }
        let lo = t.saturating_sub(max_gap);
        let mut best = f64::NEG_INFINITY;
        let mut arg = lo;
        for tau in lo..=t - min_gap {
            let s = score[tau] + penalty[t - tau];
            if s > best {
                best = s;
                arg = tau;
            }
        }
        score[t] = x[t] + best;
        back[t] = Some(arg);
    }

    let tail_start = k - (period.round() as usize).clamp(1, k);
    let mut end = tail_start;
    for t in tail_start..k {
        if score[t] > score[end] {
            end = t;
        }
    }
    let mut frames = vec![end];
    let mut cur = end;
    while let Some(prev) = back[cur] {
        frames.push(prev);
        cur = prev;
    }
    frames.reverse();
    Ok(BeatList::from_frames(&frames, nov.grid()))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median of the per-interval tempi `60 / IBI`.
pub fn median_tempo_bpm(beats: &BeatList) -> Result<f64> {
    if beats.len() < 2 {
        return Err(MeterError::invalid(format!(
            "need at least 2 beats for a tempo, got {}",
            beats.len()
        )));
    }
    let mut bpms: Vec<f64> = beats
        .times()
        .windows(2)
        .map(|w| 60.0 / (w[1] - w[0]))
        .collect();
    Ok(median(&mut bpms))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleStats {
    pub min: f64,
    pub max: f64,
    pub median: f64,
}

/// Statistics of the intervals between consecutive samas, in seconds.
pub fn cycle_duration_stats(ann: &AnnotationSequence) -> Result<CycleStats> {
    let samas = ann.sama_times();
    if samas.len() < 2 {
        return Err(MeterError::invalid(format!(
            "need at least 2 sama events, found {}",
            samas.len()
        )));
    }
    let mut d: Vec<f64> = samas.windows(2).map(|w| w[1] - w[0]).collect();
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(CycleStats {
        min,
        max,
        median: median(&mut d),
    })
}
