//! Time-frequency analysis and novelty extraction.
//!
//! The pipeline is STFT magnitude -> optional log compression -> spectral
//! flux -> normalization. Every stage keeps the frame grid of its input.

use std::f64::consts::PI;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{MeterError, Result};
use crate::model::{AnnotationSequence, FrameGrid, NoveltySignal, DEFAULT_FRAME_RATE};

/// Magnitude spectrogram, stored row-major as `[num_frames x num_bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    grid: FrameGrid,
    num_bins: usize,
    magnitudes: Vec<f64>,
}

impl Spectrogram {
    pub fn new(grid: FrameGrid, num_bins: usize, magnitudes: Vec<f64>) -> Result<Self> {
        if num_bins == 0 {
            return Err(MeterError::invalid("spectrogram needs at least one bin"));
        }
        if magnitudes.len() != grid.num_frames() * num_bins {
            return Err(MeterError::invalid(format!(
                "expected {} magnitudes, got {}",
                grid.num_frames() * num_bins,
                magnitudes.len()
            )));
        }
        if magnitudes.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(MeterError::invalid(
                "magnitudes must be finite and non-negative",
            ));
        }
        Ok(Self {
            grid,
            num_bins,
            magnitudes,
        })
    }

    pub fn grid(&self) -> &FrameGrid {
        &self.grid
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn num_frames(&self) -> usize {
        self.grid.num_frames()
    }

    pub fn frame(&self, n: usize) -> &[f64] {
        &self.magnitudes[n * self.num_bins..(n + 1) * self.num_bins]
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Hann-windowed STFT magnitudes.
///
/// Frame `t` covers samples `[t*hop, t*hop + window_size)`, zero-padded past
/// the end of the input; there are `ceil(len / hop)` frames. Bins run over
/// `0..=window_size/2`.
pub fn stft_magnitude(
    samples: &[f64],
    sample_rate: f64,
    window_size: usize,
    hop: usize,
) -> Result<Spectrogram> {
    if samples.is_empty() {
        return Err(MeterError::invalid("no samples"));
    }
    if hop == 0 || window_size < hop {
        return Err(MeterError::invalid(format!(
            "need window_size >= hop >= 1, got window {window_size}, hop {hop}"
        )));
    }
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(MeterError::invalid("sample rate must be positive"));
    }
    let num_frames = samples.len().div_ceil(hop);
    let num_bins = window_size / 2 + 1;
    let window = hann_window(window_size);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window_size);
    let mut buf = vec![Complex::new(0.0, 0.0); window_size];
    let mut magnitudes = Vec::with_capacity(num_frames * num_bins);
    for t in 0..num_frames {
        let start = t * hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            let x = samples.get(start + i).copied().unwrap_or(0.0);
            *slot = Complex::new(x * window[i], 0.0);
        }
        fft.process(&mut buf);
        magnitudes.extend(buf[..num_bins].iter().map(|c| c.norm()));
    }
    let grid = FrameGrid::new(sample_rate / hop as f64, num_frames)?;
    Spectrogram::new(grid, num_bins, magnitudes)
}

/// Replaces every magnitude `m` with `ln(1 + gamma * m)`.
pub fn log_compress(spec: &Spectrogram, gamma: f64) -> Result<Spectrogram> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(MeterError::invalid(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    Ok(Spectrogram {
        grid: spec.grid,
        num_bins: spec.num_bins,
        magnitudes: spec
            .magnitudes
            .iter()
            .map(|m| (gamma * m).ln_1p())
            .collect(),
    })
}

/// Half-wave rectified frame-to-frame magnitude increase, summed over bins.
/// Frame 0 is compared against silence.
pub fn spectral_flux(spec: &Spectrogram) -> NoveltySignal {
    let mut values = Vec::with_capacity(spec.num_frames());
    for n in 0..spec.num_frames() {
        let cur = spec.frame(n);
        let v = if n == 0 {
            cur.iter().map(|m| m.max(0.0)).sum()
        } else {
            let prev = spec.frame(n - 1);
            cur.iter().zip(prev).map(|(c, p)| (c - p).max(0.0)).sum()
        };
        values.push(v);
    }
    NoveltySignal::new(spec.grid.frame_rate_hz(), values).expect("flux is non-negative")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Divide by the maximum; an all-zero curve passes through.
    Max,
    /// Subtract a centred one-second moving average and clip at zero.
    MeanSubtractClip,
}

pub fn normalize_novelty(nov: &NoveltySignal, mode: NormMode) -> Result<NoveltySignal> {
    if nov.is_empty() {
        return Err(MeterError::invalid(
            "cannot normalize an empty novelty curve",
        ));
    }
    let x = nov.values();
    let values = match mode {
        NormMode::Max => {
            let max = x.iter().copied().fold(0.0, f64::max);
            if max > 0.0 {
                x.iter().map(|v| v / max).collect()
            } else {
                x.to_vec()
            }
        }
        NormMode::MeanSubtractClip => {
            let half = (nov.grid().frame_rate_hz() / 2.0).round() as usize;
            let mut prefix = Vec::with_capacity(x.len() + 1);
            prefix.push(0.0);
            for v in x {
                prefix.push(prefix.last().unwrap() + v);
            }
            (0..x.len())
                .map(|i| {
                    let lo = i.saturating_sub(half);
                    let hi = (i + half + 1).min(x.len());
                    let mean = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
                    // prefix sums leave O(eps) residue on flat curves
                    let d = x[i] - mean;
                    if d > 1e-12 * mean.abs().max(1.0) {
                        d
                    } else {
                        0.0
                    }
                })
                .collect()
        }
    };
    NoveltySignal::new(nov.grid().frame_rate_hz(), values)
}

/// Linear interpolation of `values` at a fractional index, clamped at the ends.
pub(crate) fn interpolate(values: &[f64], pos: f64) -> f64 {
    let last = values.len() - 1;
    if pos <= 0.0 {
        return values[0];
    }
    if pos >= last as f64 {
        return values[last];
    }
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    values[i] * (1.0 - frac) + values[i + 1] * frac
}

/// Mean novelty pattern over complete sama-to-sama cycles, each resampled to
/// `bins_per_cycle` points.
pub fn average_cycle_pattern(
    nov: &NoveltySignal,
    ann: &AnnotationSequence,
    bins_per_cycle: usize,
) -> Result<Vec<f64>> {
    if bins_per_cycle == 0 {
        return Err(MeterError::invalid("bins_per_cycle must be positive"));
    }
    let samas = ann.sama_times();
    if samas.len() < 2 {
        return Err(MeterError::invalid(format!(
            "need at least 2 sama events, found {}",
            samas.len()
        )));
    }
    if nov.is_empty() {
        return Err(MeterError::invalid("empty novelty curve"));
    }
    let fps = nov.grid().frame_rate_hz();
    let mut pattern = vec![0.0; bins_per_cycle];
    let cycles = samas.len() - 1;
    for w in samas.windows(2) {
        let (start, len) = (w[0], w[1] - w[0]);
        for (j, acc) in pattern.iter_mut().enumerate() {
            let t = start + len * j as f64 / bins_per_cycle as f64;
            *acc += interpolate(nov.values(), t * fps);
        }
    }
    for v in &mut pattern {
        *v /= cycles as f64;
    }
    Ok(pattern)
}

/// Parameters of the audio-to-novelty pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub frame_rate_hz: f64,
    pub window_size: usize,
    /// Log compression constant; `None` disables compression.
    pub gamma: Option<f64>,
    pub normalize: Option<NormMode>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            frame_rate_hz: DEFAULT_FRAME_RATE,
            window_size: 2048,
            gamma: Some(100.0),
            normalize: Some(NormMode::Max),
        }
    }
}

/// Full pipeline from mono samples. The hop is `round(sample_rate / fps)`,
/// so the returned grid rate is `sample_rate / hop`.
pub fn novelty_from_samples(
    samples: &[f64],
    sample_rate: f64,
    cfg: &FeatureConfig,
) -> Result<NoveltySignal> {
    let hop = (sample_rate / cfg.frame_rate_hz).round().max(1.0) as usize;
    let window = cfg.window_size.max(hop);
    let mut spec = stft_magnitude(samples, sample_rate, window, hop)?;
    if let Some(gamma) = cfg.gamma {
        spec = log_compress(&spec, gamma)?;
    }
    let nov = spectral_flux(&spec);
    match cfg.normalize {
        Some(mode) => normalize_novelty(&nov, mode),
        None => Ok(nov),
    }
}

/// Reads a RIFF WAV file (integer PCM or 32-bit float) and averages all
/// channels to mono. Integer samples are scaled to [-1, 1].
pub fn read_wav_mono(path: &Path) -> Result<(Vec<f64>, f64)> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<_, _>>()?
        }
    };
    let mono = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / frame.len() as f64)
        .collect();
    Ok((mono, f64::from(spec.sample_rate)))
}
