//! Joint beat and downbeat decoding of network activations.
//!
//! Every candidate meter (beats per bar) gets its own sub-space of beat
//! rings: a chain per (beat in bar, beat interval in frames) whose first
//! position is the beat itself. One Viterbi pass over the union picks the
//! meter, the tempo and the phase at once. The interval may change by one
//! frame at each beat boundary.

use serde::{Deserialize, Serialize};

use crate::error::{MeterError, Result};
use crate::lattice::{Chain, ChainLattice, EmissionTable};
use crate::model::{ActivationPair, BeatList, DEFAULT_FRAME_RATE};

/// Probability floor applied before taking logs.
pub const EMISSION_FLOOR: f64 = 1e-5;

const NONBEAT: u32 = 0;
const BEAT: u32 = 1;
const DOWNBEAT: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostprocConfig {
    pub beats_per_bar: Vec<u32>,
    pub min_tempo_bpm: f64,
    pub max_tempo_bpm: f64,
    pub frame_rate_hz: f64,
    pub transition_lambda: f64,
}

/// Generic western meters: 3 or 4 beats per bar, 55 to 215 BPM.
pub fn default_config() -> PostprocConfig {
    PostprocConfig {
        beats_per_bar: vec![3, 4],
        min_tempo_bpm: 55.0,
        max_tempo_bpm: 215.0,
        frame_rate_hz: DEFAULT_FRAME_RATE,
        transition_lambda: 100.0,
    }
}

/// Meters and tempo range of the four Carnatic talas: 3, 5, 7 and 8 beats
/// per cycle, 55 to 230 BPM.
pub fn cmr_informed_config() -> PostprocConfig {
    PostprocConfig {
        beats_per_bar: vec![3, 5, 7, 8],
        min_tempo_bpm: 55.0,
        max_tempo_bpm: 230.0,
        frame_rate_hz: DEFAULT_FRAME_RATE,
        transition_lambda: 100.0,
    }
}

impl Default for PostprocConfig {
    fn default() -> Self {
        default_config()
    }
}

impl PostprocConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beats_per_bar.is_empty() || self.beats_per_bar.iter().any(|&b| b < 2) {
            return Err(MeterError::invalid(
                "beats_per_bar must be non-empty with every entry >= 2",
            ));
        }
        if !(self.min_tempo_bpm > 0.0
            && self.min_tempo_bpm < self.max_tempo_bpm
            && self.max_tempo_bpm.is_finite())
        {
            return Err(MeterError::invalid(format!(
                "tempo range {}..{} BPM is not a positive interval",
                self.min_tempo_bpm, self.max_tempo_bpm
            )));
        }
        if !(self.frame_rate_hz > 0.0 && self.frame_rate_hz.is_finite()) {
            return Err(MeterError::invalid("frame rate must be positive"));
        }
        if !(self.transition_lambda > 0.0 && self.transition_lambda.is_finite()) {
            return Err(MeterError::invalid("transition lambda must be positive"));
        }
        Ok(())
    }

    /// Shortest and longest beat interval in frames.
    pub fn interval_range(&self) -> (usize, usize) {
        let beat = 60.0 * self.frame_rate_hz;
        let lo = ((beat / self.max_tempo_bpm).round() as usize).max(1);
        let hi = ((beat / self.min_tempo_bpm).round() as usize).max(lo);
        (lo, hi)
    }
}

/// Activation pair from the two network heads, where the downbeat logit is
/// added to the beat logit before the sigmoid.
pub fn sum_head_combine(
    beat_logits: &[f64],
    downbeat_logits: &[f64],
    frame_rate_hz: f64,
) -> Result<ActivationPair> {
    if beat_logits.len() != downbeat_logits.len() {
        return Err(MeterError::invalid(format!(
            "beat logits have {} frames, downbeat logits {}",
            beat_logits.len(),
            downbeat_logits.len()
        )));
    }
    let beat = beat_logits
        .iter()
        .zip(downbeat_logits)
        .map(|(b, d)| sigmoid(b + d))
        .collect();
    let downbeat = downbeat_logits.iter().map(|&d| sigmoid(d)).collect();
    ActivationPair::new(frame_rate_hz, beat, downbeat)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct MeterLattice {
    lattice: ChainLattice,
    /// `(beats per bar, beat in bar)` per chain.
    labels: Vec<(u32, u32)>,
}

fn build_lattice(cfg: &PostprocConfig) -> MeterLattice {
    let (lo, hi) = cfg.interval_range();
    let mut bars = cfg.beats_per_bar.clone();
    bars.sort_unstable();
    bars.dedup();
    let intervals: Vec<usize> = (lo..=hi).collect();
    // interval moves at a beat boundary: one frame either way, weighted by
    // the log tempo ratio and normalized over the moves inside the range
    let moves: Vec<Vec<(usize, f64)>> = intervals
        .iter()
        .map(|&n| {
            let cands: Vec<(usize, f64)> = [n.wrapping_sub(1), n, n + 1]
                .into_iter()
                .filter(|m| (lo..=hi).contains(m))
                .map(|m| {
                    (
                        m - lo,
                        -cfg.transition_lambda * (m as f64 / n as f64).ln().abs(),
                    )
                })
                .collect();
            let norm = cands.iter().map(|(_, w)| w.exp()).sum::<f64>().ln();
            cands.into_iter().map(|(i, w)| (i, w - norm)).collect()
        })
        .collect();

    let mut chains = Vec::new();
    let mut labels = Vec::new();
    let mut base = 0;
    let mut first_chain = Vec::new();
    for &b in &bars {
        first_chain.push(chains.len());
        for j in 0..b {
            for &n in &intervals {
                let mut classes = vec![NONBEAT; n];
                classes[0] = if j == 0 { DOWNBEAT } else { BEAT };
                chains.push(Chain {
                    classes,
                    preds: Vec::new(),
                    base,
                    stride: 1,
                });
                labels.push((b, j));
                base += n;
            }
        }
    }
    let per_beat = intervals.len();
    for (bi, &b) in bars.iter().enumerate() {
        for j in 0..b as usize {
            for (ni, mv) in moves.iter().enumerate() {
                let src = first_chain[bi] + j * per_beat + ni;
                let next_beat = (j + 1) % b as usize;
                for &(mi, lp) in mv {
                    let dst = first_chain[bi] + next_beat * per_beat + mi;
                    chains[dst].preds.push((src, lp));
                }
            }
        }
    }
    MeterLattice {
        lattice: ChainLattice::new(chains),
        labels,
    }
}

fn emissions(act: &ActivationPair) -> EmissionTable {
    let floor = |p: f64| p.max(EMISSION_FLOOR).ln();
    let mut log_probs = Vec::with_capacity(act.len() * 3);
    for (&b, &d) in act.beat().iter().zip(act.downbeat()) {
        log_probs.extend_from_slice(&[floor(1.0 - b), floor(b), floor(d)]);
    }
    EmissionTable {
        num_classes: 3,
        log_probs,
    }
}

/// Decoded meter: beat and downbeat times plus the selected beats per bar.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDecoding {
    pub beats: BeatList,
    pub downbeats: BeatList,
    pub beats_per_bar: Option<u32>,
}

/// Beat and downbeat times decoded jointly from activations; downbeats are
/// always a subset of beats. Activations shorter than one beat at the
/// slowest tempo give empty lists.
pub fn postprocess_joint(
    act: &ActivationPair,
    cfg: &PostprocConfig,
) -> Result<(BeatList, BeatList)> {
    let d = postprocess_joint_detailed(act, cfg)?;
    Ok((d.beats, d.downbeats))
}

pub fn postprocess_joint_detailed(
    act: &ActivationPair,
    cfg: &PostprocConfig,
) -> Result<JointDecoding> {
    cfg.validate()?;
    let fps = act.grid().frame_rate_hz();
    if (fps - cfg.frame_rate_hz).abs() > 1e-9 * fps {
        return Err(MeterError::invalid(format!(
            "activation frame rate {fps} Hz differs from configured {} Hz",
            cfg.frame_rate_hz
        )));
    }
    let (_, longest) = cfg.interval_range();
    if act.len() < longest {
        return Ok(JointDecoding {
            beats: BeatList::empty(),
            downbeats: BeatList::empty(),
            beats_per_bar: None,
        });
    }
    let ml = build_lattice(cfg);
    let path = ml.lattice.viterbi(&emissions(act));
    let mut beats = Vec::new();
    let mut downbeats = Vec::new();
    for (k, &(c, p)) in path.iter().enumerate() {
        if p == 0 {
            beats.push(k);
            if ml.labels[c].1 == 0 {
                downbeats.push(k);
            }
        }
    }
    let grid = act.grid();
    Ok(JointDecoding {
        beats: BeatList::from_frames(&beats, grid),
        downbeats: BeatList::from_frames(&downbeats, grid),
        beats_per_bar: path.first().map(|&(c, _)| ml.labels[c].0),
    })
}
