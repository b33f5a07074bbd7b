//! Core domain types: the frame grid, tala descriptions, annotation
//! sequences, beat lists and per-frame salience curves.
//!
//! Frame/time conversion rounds half away from zero everywhere in the crate.

use serde::{Deserialize, Serialize};

use crate::error::{MeterError, Result};

/// Frame rate used when nothing else is specified.
pub const DEFAULT_FRAME_RATE: f64 = 100.0;

/// The frame/time coordinate system shared by every per-frame signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameGrid {
    frame_rate_hz: f64,
    num_frames: usize,
}

impl FrameGrid {
    pub fn new(frame_rate_hz: f64, num_frames: usize) -> Result<Self> {
        if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
            return Err(MeterError::invalid(format!(
                "frame rate must be positive, got {frame_rate_hz}"
            )));
        }
        Ok(Self {
            frame_rate_hz,
            num_frames,
        })
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn duration_sec(&self) -> f64 {
        self.num_frames as f64 / self.frame_rate_hz
    }

    pub fn frame_to_time(&self, frame: usize) -> f64 {
        frame as f64 / self.frame_rate_hz
    }

    /// Nearest frame to `t`, clamped to the grid. Negative times are rejected.
    pub fn time_to_frame(&self, t: f64) -> Result<usize> {
        if !(t >= 0.0) {
            return Err(MeterError::invalid(format!(
                "time must be non-negative, got {t}"
            )));
        }
        let frame = (t * self.frame_rate_hz).round();
        let last = self.num_frames.saturating_sub(1);
        Ok((frame as usize).min(last))
    }
}

/// A cyclic metrical framework with `beats_per_cycle` beats per cycle.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TalaSpec {
    pub name: String,
    pub beats_per_cycle: u32,
}

/// The registered presets, by canonical name.
pub const TALA_PRESETS: [(&str, u32); 4] = [
    ("adi", 8),
    ("rupaka", 3),
    ("misra_chapu", 7),
    ("khanda_chapu", 5),
];

impl TalaSpec {
    pub fn new(name: impl Into<String>, beats_per_cycle: u32) -> Result<Self> {
        if beats_per_cycle == 0 {
            return Err(MeterError::invalid("beats_per_cycle must be at least 1"));
        }
        Ok(Self {
            name: name.into(),
            beats_per_cycle,
        })
    }

    pub fn adi() -> Self {
        Self::preset_unchecked("adi")
    }

    pub fn rupaka() -> Self {
        Self::preset_unchecked("rupaka")
    }

    pub fn misra_chapu() -> Self {
        Self::preset_unchecked("misra_chapu")
    }

    pub fn khanda_chapu() -> Self {
        Self::preset_unchecked("khanda_chapu")
    }

    fn preset_unchecked(name: &str) -> Self {
        Self::preset(name).expect("registered preset")
    }

    /// Looks up a registered tala by name.
    pub fn preset(name: &str) -> Result<Self> {
        TALA_PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|&(n, b)| Self {
                name: n.to_string(),
                beats_per_cycle: b,
            })
            .ok_or_else(|| MeterError::UnknownTala {
                name: name.to_string(),
                registered: Self::registered_names().join(", "),
            })
    }

    pub fn registered() -> Vec<Self> {
        TALA_PRESETS
            .iter()
            .map(|&(n, b)| Self {
                name: n.to_string(),
                beats_per_cycle: b,
            })
            .collect()
    }

    pub fn registered_names() -> Vec<&'static str> {
        TALA_PRESETS.iter().map(|(n, _)| *n).collect()
    }
}

/// One time-stamped metrical marker. Position 1 is the sama (downbeat).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeterEvent {
    pub time_sec: f64,
    pub cycle_position: u32,
}

/// Time-stamped markers annotated with their position in the tala cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSequence {
    events: Vec<MeterEvent>,
    tala: TalaSpec,
}

impl AnnotationSequence {
    pub fn new(events: Vec<MeterEvent>, tala: TalaSpec) -> Result<Self> {
        if let Some((i, message)) = validate_events(&events, tala.beats_per_cycle) {
            return Err(MeterError::Parse {
                line: i + 1,
                message,
            });
        }
        Ok(Self { events, tala })
    }

    pub fn events(&self) -> &[MeterEvent] {
        &self.events
    }

    pub fn tala(&self) -> &TalaSpec {
        &self.tala
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Times of every sama (position 1) event.
    pub fn sama_times(&self) -> Vec<f64> {
        self.events
            .iter()
            .filter(|e| e.cycle_position == 1)
            .map(|e| e.time_sec)
            .collect()
    }
}

/// Returns the index of the first offending event and a message.
pub(crate) fn validate_events(
    events: &[MeterEvent],
    beats_per_cycle: u32,
) -> Option<(usize, String)> {
    for (i, e) in events.iter().enumerate() {
        if !(e.time_sec.is_finite() && e.time_sec >= 0.0) {
            return Some((
                i,
                format!("time {} must be finite and non-negative", e.time_sec),
            ));
        }
        if e.cycle_position < 1 || e.cycle_position > beats_per_cycle {
            return Some((
                i,
                format!(
                    "cycle position {} outside 1..={}",
                    e.cycle_position, beats_per_cycle
                ),
            ));
        }
        if i > 0 {
            let prev = events[i - 1];
            if e.time_sec <= prev.time_sec {
                return Some((
                    i,
                    format!(
                        "time {} not after previous time {}",
                        e.time_sec, prev.time_sec
                    ),
                ));
            }
            let expected = prev.cycle_position % beats_per_cycle + 1;
            if e.cycle_position != expected {
                return Some((
                    i,
                    format!(
                        "cycle position {} does not follow {} (expected {})",
                        e.cycle_position, prev.cycle_position, expected
                    ),
                ));
            }
        }
    }
    None
}

/// Strictly increasing, non-negative event times in seconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BeatList(Vec<f64>);

impl BeatList {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        for (i, &t) in times.iter().enumerate() {
            if !(t.is_finite() && t >= 0.0) {
                return Err(MeterError::invalid(format!(
                    "beat {i}: time {t} must be finite and non-negative"
                )));
            }
            if i > 0 && t <= times[i - 1] {
                return Err(MeterError::invalid(format!(
                    "beat {i}: time {t} not after {}",
                    times[i - 1]
                )));
            }
        }
        Ok(Self(times))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    /// Beat times of strictly increasing frame indices.
    pub fn from_frames(frames: &[usize], grid: &FrameGrid) -> Self {
        debug_assert!(frames.windows(2).all(|w| w[0] < w[1]));
        Self(frames.iter().map(|&f| grid.frame_to_time(f)).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Shifts every time by `offset`, which must keep them non-negative.
    pub fn shifted(&self, offset: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|t| t + offset).collect())
    }
}

/// A per-frame rhythmic salience curve (onset detection function).
#[derive(Debug, Clone, PartialEq)]
pub struct NoveltySignal {
    grid: FrameGrid,
    values: Vec<f64>,
}

impl NoveltySignal {
    pub fn new(frame_rate_hz: f64, values: Vec<f64>) -> Result<Self> {
        let grid = FrameGrid::new(frame_rate_hz, values.len())?;
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(MeterError::invalid(format!(
                "novelty frame {i}: value {v} must be finite and non-negative"
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &FrameGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Beat and downbeat probability curves on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationPair {
    grid: FrameGrid,
    beat: Vec<f64>,
    downbeat: Vec<f64>,
}

impl ActivationPair {
    pub fn new(frame_rate_hz: f64, beat: Vec<f64>, downbeat: Vec<f64>) -> Result<Self> {
        if beat.len() != downbeat.len() {
            return Err(MeterError::invalid(format!(
                "beat curve has {} frames but downbeat curve has {}",
                beat.len(),
                downbeat.len()
            )));
        }
        let grid = FrameGrid::new(frame_rate_hz, beat.len())?;
        for (frame, (&b, &d)) in beat.iter().zip(&downbeat).enumerate() {
            for value in [b, d] {
                if !(0.0..=1.0).contains(&value) {
                    return Err(MeterError::ActivationRange { frame, value });
                }
            }
        }
        Ok(Self {
            grid,
            beat,
            downbeat,
        })
    }

    pub fn grid(&self) -> &FrameGrid {
        &self.grid
    }

    pub fn beat(&self) -> &[f64] {
        &self.beat
    }

    pub fn downbeat(&self) -> &[f64] {
        &self.downbeat
    }

    pub fn len(&self) -> usize {
        self.beat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beat.is_empty()
    }
}

/// Splits annotations into all beat times and sama (downbeat) times.
pub fn annotations_to_beats_and_downbeats(ann: &AnnotationSequence) -> (BeatList, BeatList) {
    let beats = ann.events.iter().map(|e| e.time_sec).collect();
    (BeatList(beats), BeatList(ann.sama_times()))
}

/// Binary per-frame targets with a 1 at the nearest frame of every beat.
pub fn targets_from_beats(beats: &BeatList, grid: &FrameGrid) -> Result<Vec<f64>> {
    let mut targets = vec![0.0; grid.num_frames()];
    let duration = grid.duration_sec();
    for &t in beats.times() {
        if t >= duration {
            return Err(MeterError::invalid(format!(
                "beat at {t} s is not before the grid duration {duration} s"
            )));
        }
        targets[grid.time_to_frame(t)?] = 1.0;
    }
    Ok(targets)
}
