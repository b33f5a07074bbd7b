use serde::{Deserialize, Serialize};

use crate::error::{MeterError, Result};
use crate::lattice::{Chain, ChainLattice};
use crate::model::TalaSpec;

/// Hidden state of the bar-pointer model.
///
/// `position` counts frames since the last downbeat at the tempo selected by
/// `tempo`; index 0 is the slowest tempo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BarPointerState {
    pub position: usize,
    pub tempo: usize,
    pub pattern: usize,
}

/// Switching probabilities applied when the pointer wraps to a new cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionParams {
    /// Probability of moving to an adjacent tempo, split evenly up and down.
    pub p_tempo: f64,
    /// Probability of switching to a different rhythmic pattern.
    pub p_pattern: f64,
}

impl Default for TransitionParams {
    fn default() -> Self {
        Self {
            p_tempo: 0.02,
            p_pattern: 0.0,
        }
    }
}

/// Discretized bar-pointer state space with one position per frame of a
/// cycle at each tempo.
///
/// Adjacent tempi differ by exactly one frame in cycle length, so the
/// position ring of tempo `t` has `max_cycle_frames - t` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct BarPointerStateSpace {
    tala: TalaSpec,
    min_bpm: f64,
    max_bpm: f64,
    frame_rate_hz: f64,
    num_patterns: usize,
    positions: Vec<usize>,
    offsets: Vec<usize>,
    transition: TransitionParams,
}

pub fn build_state_space(
    tala: &TalaSpec,
    tempo_range: (f64, f64),
    frame_rate_hz: f64,
    num_patterns: usize,
) -> Result<BarPointerStateSpace> {
    BarPointerStateSpace::new(tala, tempo_range, frame_rate_hz, num_patterns)
}

impl BarPointerStateSpace {
    pub fn new(
        tala: &TalaSpec,
        (min_bpm, max_bpm): (f64, f64),
        frame_rate_hz: f64,
        num_patterns: usize,
    ) -> Result<Self> {
        if !(min_bpm > 0.0 && min_bpm <= max_bpm && max_bpm.is_finite()) {
            return Err(MeterError::invalid(format!(
                "tempo range {min_bpm}..{max_bpm} BPM is not a positive interval"
            )));
        }
        if !(frame_rate_hz > 0.0 && frame_rate_hz.is_finite()) {
            return Err(MeterError::invalid("frame rate must be positive"));
        }
        if num_patterns == 0 {
            return Err(MeterError::invalid(
                "at least one rhythmic pattern required",
            ));
        }
        let cycle = frame_rate_hz * 60.0 * f64::from(tala.beats_per_cycle);
        let longest = (cycle / min_bpm).round() as usize;
        let shortest = ((cycle / max_bpm).round() as usize).max(1);
        if longest < shortest || longest == 0 {
            return Err(MeterError::invalid(format!(
                "tempo range {min_bpm}..{max_bpm} BPM yields no tempo states at {frame_rate_hz} Hz"
            )));
        }
        let positions: Vec<usize> = (shortest..=longest).rev().collect();
        let offsets = positions
            .iter()
            .scan(0, |acc, &n| {
                let o = *acc;
                *acc += n;
                Some(o)
            })
            .collect();
        Ok(Self {
            tala: tala.clone(),
            min_bpm,
            max_bpm,
            frame_rate_hz,
            num_patterns,
            positions,
            offsets,
            transition: TransitionParams::default(),
        })
    }

    pub fn with_transition(mut self, transition: TransitionParams) -> Result<Self> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(transition.p_tempo) || !ok(transition.p_pattern) {
            return Err(MeterError::invalid(
                "transition probabilities must lie in [0, 1]",
            ));
        }
        self.transition = transition;
        Ok(self)
    }

    pub fn tala(&self) -> &TalaSpec {
        &self.tala
    }

    pub fn tempo_range(&self) -> (f64, f64) {
        (self.min_bpm, self.max_bpm)
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn num_patterns(&self) -> usize {
        self.num_patterns
    }

    pub fn num_tempi(&self) -> usize {
        self.positions.len()
    }

    pub fn transition(&self) -> TransitionParams {
        self.transition
    }

    /// Cycle length in frames at tempo index `tempo`.
    pub fn positions(&self, tempo: usize) -> usize {
        self.positions[tempo]
    }

    /// Tempo in beats per minute represented by tempo index `tempo`.
    pub fn tempo_bpm(&self, tempo: usize) -> f64 {
        self.frame_rate_hz * 60.0 * f64::from(self.tala.beats_per_cycle)
            / self.positions[tempo] as f64
    }

    pub fn num_states(&self) -> usize {
        self.positions.iter().sum::<usize>() * self.num_patterns
    }

    pub fn is_valid(&self, s: &BarPointerState) -> bool {
        s.tempo < self.positions.len()
            && s.position < self.positions[s.tempo]
            && s.pattern < self.num_patterns
    }

    fn check(&self, s: &BarPointerState) -> Result<()> {
        if self.is_valid(s) {
            Ok(())
        } else {
            Err(MeterError::invalid(format!(
                "state {s:?} outside the state space"
            )))
        }
    }

    pub fn state_index(&self, s: &BarPointerState) -> Result<usize> {
        self.check(s)?;
        Ok((self.offsets[s.tempo] + s.position) * self.num_patterns + s.pattern)
    }

    pub fn state_at(&self, index: usize) -> Result<BarPointerState> {
        if index >= self.num_states() {
            return Err(MeterError::invalid(format!(
                "state index {index} >= {}",
                self.num_states()
            )));
        }
        let pattern = index % self.num_patterns;
        let flat = index / self.num_patterns;
        let tempo = self.offsets.partition_point(|&o| o <= flat) - 1;
        Ok(BarPointerState {
            position: flat - self.offsets[tempo],
            tempo,
            pattern,
        })
    }

    /// Observation bin of a position for a model with `bins` bins per cycle.
    pub fn bin_of(&self, s: &BarPointerState, bins: usize) -> usize {
        s.position * bins / self.positions[s.tempo]
    }

    /// First frame of every beat within the cycle at tempo index `tempo`.
    pub fn beat_boundaries(&self, tempo: usize) -> Vec<usize> {
        let n = self.positions[tempo] as f64;
        let b = self.tala.beats_per_cycle;
        (0..b)
            .map(|j| (f64::from(j) * n / f64::from(b)).round() as usize)
            .collect()
    }

    /// Outgoing transitions of a state with their log probabilities.
    pub fn transition_step(&self, from: &BarPointerState) -> Result<Vec<(BarPointerState, f64)>> {
        self.check(from)?;
        if from.position + 1 < self.positions[from.tempo] {
            let to = BarPointerState {
                position: from.position + 1,
                ..*from
            };
            return Ok(vec![(to, 0.0)]);
        }
        let mut out = Vec::new();
        for (tempo, pt) in self.tempo_moves(from.tempo) {
            for (pattern, pr) in self.pattern_moves(from.pattern) {
                let p = pt * pr;
                if p > 0.0 {
                    out.push((
                        BarPointerState {
                            position: 0,
                            tempo,
                            pattern,
                        },
                        p.ln(),
                    ));
                }
            }
        }
        Ok(out)
    }

    /// Tempo moves at a wrap; mass beyond the range edges stays put.
    fn tempo_moves(&self, tempo: usize) -> Vec<(usize, f64)> {
        let half = self.transition.p_tempo / 2.0;
        let mut stay = 1.0 - self.transition.p_tempo;
        let mut moves = Vec::with_capacity(3);
        if tempo > 0 {
            moves.push((tempo - 1, half));
        } else {
            stay += half;
        }
        if tempo + 1 < self.positions.len() {
            moves.push((tempo + 1, half));
        } else {
            stay += half;
        }
        moves.push((tempo, stay));
        moves.sort_by_key(|&(t, _)| t);
        moves
    }

    fn pattern_moves(&self, pattern: usize) -> Vec<(usize, f64)> {
        let r = self.num_patterns;
        if r == 1 {
            return vec![(pattern, 1.0)];
        }
        let other = self.transition.p_pattern / (r - 1) as f64;
        (0..r)
            .map(|q| {
                (
                    q,
                    if q == pattern {
                        1.0 - self.transition.p_pattern
                    } else {
                        other
                    },
                )
            })
            .collect()
    }

    /// One chain per (tempo, pattern); emission classes are
    /// `pattern * bins + bin`.
    pub(crate) fn lattice(&self, bins: usize) -> ChainLattice {
        let r = self.num_patterns;
        let mut chains = Vec::with_capacity(self.positions.len() * r);
        for (t, &n) in self.positions.iter().enumerate() {
            for q in 0..r {
                let classes = (0..n).map(|p| (q * bins + p * bins / n) as u32).collect();
                chains.push(Chain {
                    classes,
                    preds: Vec::new(),
                    base: self.offsets[t] * r + q,
                    stride: r,
                });
            }
        }
        for t in 0..self.positions.len() {
            for q in 0..r {
                let tail = BarPointerState {
                    position: self.positions[t] - 1,
                    tempo: t,
                    pattern: q,
                };
                for (to, lp) in self.transition_step(&tail).expect("tail state is valid") {
                    chains[to.tempo * r + to.pattern]
                        .preds
                        .push((t * r + q, lp));
                }
            }
        }
        ChainLattice::new(chains)
    }

    pub(crate) fn chain_state(&self, chain: usize, position: usize) -> BarPointerState {
        BarPointerState {
            position,
            tempo: chain / self.num_patterns,
            pattern: chain % self.num_patterns,
        }
    }
}
