use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::observation::ObservationModel;
use super::space::{BarPointerState, BarPointerStateSpace};
use crate::error::{MeterError, Result};
use crate::lattice::EmissionTable;
use crate::model::{BeatList, FrameGrid, NoveltySignal};

/// Largest position move, in frames, of a particle after resampling.
pub const PF_POSITION_STEP: usize = 2;
/// Share of particles redrawn uniformly after each resampling step.
pub const PF_REINJECT_FRACTION: f64 = 0.02;
/// Log-weight handicap of a redrawn particle.
pub const PF_REINJECT_LOG_PENALTY: f64 = 20.0;

fn check_compatible(
    space: &BarPointerStateSpace,
    model: &ObservationModel,
    nov: &NoveltySignal,
) -> Result<()> {
    if model.num_patterns() != space.num_patterns() {
        return Err(MeterError::invalid(format!(
            "model has {} patterns, state space {}",
            model.num_patterns(),
            space.num_patterns()
        )));
    }
    let fps = nov.grid().frame_rate_hz();
    if (fps - space.frame_rate_hz()).abs() > 1e-9 * fps {
        return Err(MeterError::invalid(format!(
            "novelty frame rate {fps} Hz differs from state space {} Hz",
            space.frame_rate_hz()
        )));
    }
    Ok(())
}

fn emission_table(model: &ObservationModel, nov: &NoveltySignal) -> EmissionTable {
    let num_classes = model.num_patterns() * model.bins_per_cycle();
    let mut log_probs = Vec::with_capacity(nov.len() * num_classes);
    let mut row = Vec::with_capacity(num_classes);
    for &v in nov.values() {
        model.class_log_probs(v, &mut row);
        log_probs.extend_from_slice(&row);
    }
    EmissionTable {
        num_classes,
        log_probs,
    }
}

/// Maximum a posteriori state sequence under a uniform initial distribution.
///
/// Ties between equally likely paths resolve toward the smaller flattened
/// state index.
pub fn viterbi_decode(
    space: &BarPointerStateSpace,
    model: &ObservationModel,
    nov: &NoveltySignal,
) -> Result<Vec<BarPointerState>> {
    check_compatible(space, model, nov)?;
    let lattice = space.lattice(model.bins_per_cycle());
    let path = lattice.viterbi(&emission_table(model, nov));
    Ok(path
        .into_iter()
        .map(|(c, p)| space.chain_state(c, p))
        .collect())
}

/// Bootstrap particle filter; the estimate at each frame is the state of
/// the heaviest particle. Identical seeds give identical output.
///
/// After every resampling step each particle takes a small random move: to
/// an adjacent tempo at the same cycle phase, and up to
/// `PF_POSITION_STEP` frames back or forward. A small fraction is instead redrawn uniformly over the whole
/// space with a log-weight handicap, so that a hypothesis missed by the
/// initial draw (typically the right tempo when the cloud has settled on a
/// related one) can still take over once the data favour it.
pub fn particle_filter_decode(
    space: &BarPointerStateSpace,
    model: &ObservationModel,
    nov: &NoveltySignal,
    num_particles: usize,
    seed: u64,
) -> Result<Vec<BarPointerState>> {
    check_compatible(space, model, nov)?;
    if num_particles == 0 {
        return Err(MeterError::invalid("need at least one particle"));
    }
    let lattice = space.lattice(model.bins_per_cycle());
    let r = space.num_patterns();
    let num_states = space.num_states();
    let jitter = |part: &mut (usize, usize), rng: &mut ChaCha8Rng| {
        if rng.random::<f64>() < PF_REINJECT_FRACTION {
            let st = space
                .state_at(rng.random_range(0..num_states))
                .expect("index in range");
            *part = (st.tempo * r + st.pattern, st.position);
            return -PF_REINJECT_LOG_PENALTY;
        }
        let (chain, pos) = *part;
        let (tempo, pattern) = (chain / r, chain % r);
        let n = space.positions(tempo);
        let new_tempo = match rng.random_range(0..3) {
            0 => tempo.saturating_sub(1),
            1 => tempo,
            _ => (tempo + 1).min(space.num_tempi() - 1),
        };
        let m = space.positions(new_tempo);
        // keep the cycle phase across the tempo move, then nudge by a frame
        let scaled = ((pos as f64 + 0.5) * m as f64 / n as f64) as usize;
        let k = PF_POSITION_STEP;
        let shifted = (scaled + m * k + rng.random_range(0..=2 * k) - k) % m;
        *part = (new_tempo * r + pattern, shifted);
        0.0
    };
    let path = lattice.particle_filter(&emission_table(model, nov), num_particles, seed, jitter);
    Ok(path
        .into_iter()
        .map(|(c, p)| space.chain_state(c, p))
        .collect())
}

/// Joint log probability of a state path: uniform prior, transitions and
/// emissions. Impossible paths score negative infinity.
pub fn path_log_score(
    space: &BarPointerStateSpace,
    model: &ObservationModel,
    nov: &NoveltySignal,
    path: &[BarPointerState],
) -> Result<f64> {
    check_compatible(space, model, nov)?;
    if path.len() != nov.len() {
        return Err(MeterError::invalid(format!(
            "path has {} states for {} frames",
            path.len(),
            nov.len()
        )));
    }
    if path.is_empty() {
        return Ok(0.0);
    }
    let mut score = -(space.num_states() as f64).ln();
    let bins = model.bins_per_cycle();
    for (k, s) in path.iter().enumerate() {
        if !space.is_valid(s) {
            return Err(MeterError::invalid(format!(
                "frame {k}: state {s:?} invalid"
            )));
        }
        if k > 0 {
            let lp = space
                .transition_step(&path[k - 1])?
                .into_iter()
                .find(|(to, _)| to == s)
                .map_or(f64::NEG_INFINITY, |(_, lp)| lp);
            score += lp;
        }
        score += model
            .gmm(s.pattern, space.bin_of(s, bins))
            .log_density(nov.values()[k]);
    }
    Ok(score)
}

/// Beat and downbeat times implied by a state path.
///
/// A beat is placed on every frame where the pointer enters one of the
/// cycle's beat subdivisions, a downbeat where it enters the first one. A
/// path whose first state lies within the first beat of the cycle also
/// gets a downbeat (and beat) on frame 0.
/// Regular steps are handled exactly. Arbitrary jumps, as a particle filter
/// estimate may make, are reduced to their change of phase within a beat:
/// moving ahead by less than half a beat counts as progress, anything else
/// holds the pointer where it was. Beats closer than half a beat are merged.
pub fn states_to_meter(
    path: &[BarPointerState],
    space: &BarPointerStateSpace,
    grid: &FrameGrid,
) -> Result<(BeatList, BeatList)> {
    if path.len() != grid.num_frames() {
        return Err(MeterError::invalid(format!(
            "path has {} states for {} frames",
            path.len(),
            grid.num_frames()
        )));
    }
    if let Some((k, s)) = path.iter().enumerate().find(|(_, s)| !space.is_valid(s)) {
        return Err(MeterError::invalid(format!(
            "frame {k}: state {s:?} invalid"
        )));
    }
    let b = space.tala().beats_per_cycle as usize;
    let boundaries: Vec<Vec<usize>> = (0..space.num_tempi())
        .map(|t| space.beat_boundaries(t))
        .collect();
    // position as a continuous beat count in [0, B)
    let beat_coord = |s: &BarPointerState| {
        let q = &boundaries[s.tempo];
        let j = q.partition_point(|&x| x <= s.position) - 1;
        let end = q.get(j + 1).copied().unwrap_or(space.positions(s.tempo));
        j as f64 + (s.position - q[j]) as f64 / (end - q[j]) as f64
    };
    let mut beats = Vec::new();
    let mut downbeats = Vec::new();
    // furthest state reached so far; an estimate behind it is held there
    let mut reached: Option<BarPointerState> = None;
    // beats covered since the last emitted one; neighbouring tempi round
    // their boundaries differently, so a hop between them could otherwise
    // enter the same beat twice
    let mut since_beat = f64::INFINITY;
    for (k, s) in path.iter().enumerate() {
        let bounds = &boundaries[s.tempo];
        let (crossed, step) = match reached {
            // a track starting inside the first beat opens with a downbeat
            None if s.position < bounds.get(1).copied().unwrap_or(space.positions(s.tempo)) => {
                (Some(0), 0.0)
            }
            None => (bounds.iter().position(|&q| q == s.position), 0.0),
            Some(prev) => {
                let from = beat_coord(&prev);
                let to = beat_coord(s);
                let wrapped = prev.position + 1 == space.positions(prev.tempo) && s.position == 0;
                let advanced = prev.tempo == s.tempo && prev.position + 1 == s.position;
                if wrapped || advanced {
                    (
                        bounds.iter().position(|&q| q == s.position),
                        (to - from).rem_euclid(b as f64),
                    )
                } else {
                    // jumps are judged on the beat phase alone
                    let delta = (to - from).rem_euclid(1.0);
                    if delta == 0.0 || delta >= 0.5 {
                        continue;
                    }
                    let crossed =
                        (from.fract() + delta >= 1.0 - 1e-12).then(|| to.floor() as usize % b);
                    (crossed, delta)
                }
            }
        };
        reached = Some(*s);
        since_beat += step;
        if let Some(j) = crossed {
            if since_beat + 1e-9 < 0.5 {
                continue;
            }
            since_beat = 0.0;
            let t = grid.frame_to_time(k);
            beats.push(t);
            if j == 0 {
                downbeats.push(t);
            }
        }
    }
    Ok((BeatList::new(beats)?, BeatList::new(downbeats)?))
}
