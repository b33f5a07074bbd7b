//! Beat and downbeat evaluation: tolerance-window F-measure and the
//! continuity family (CML/AML), applied identically to both event kinds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{MeterError, Result};
use crate::model::{annotations_to_beats_and_downbeats, AnnotationSequence, BeatList};

pub const DEFAULT_F_TOLERANCE: f64 = 0.07;
pub const DEFAULT_PHASE_TOLERANCE: f64 = 0.175;
const WINDOW_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub n_tp: usize,
    pub n_fp: usize,
    pub n_fn: usize,
    /// `(reference index, prediction index)` in prediction order.
    pub pairs: Vec<(usize, usize)>,
}

/// Greedy one-to-one matching: predictions in time order each take the
/// nearest still-unmatched reference within `±tolerance` (inclusive).
pub fn match_events(refs: &BeatList, preds: &BeatList, tolerance_sec: f64) -> MatchResult {
    let r = refs.times();
    let mut used = vec![false; r.len()];
    let mut pairs = Vec::new();
    for (pi, &p) in preds.times().iter().enumerate() {
        // refs are sorted, so the candidates form a contiguous range
        let lo = r.partition_point(|&x| x < p - tolerance_sec - WINDOW_EPS);
        let mut best: Option<(f64, usize)> = None;
        for (ri, &x) in r.iter().enumerate().skip(lo) {
            let d = (x - p).abs();
            if x > p + tolerance_sec + WINDOW_EPS {
                break;
            }
            if !used[ri] && d <= tolerance_sec + WINDOW_EPS && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, ri));
            }
        }
        if let Some((_, ri)) = best {
            used[ri] = true;
            pairs.push((ri, pi));
        }
    }
    let n_tp = pairs.len();
    MatchResult {
        n_tp,
        n_fp: preds.len() - n_tp,
        n_fn: refs.len() - n_tp,
        pairs,
    }
}

/// `(precision, recall, f)`. Both lists empty scores 1; exactly one empty
/// scores 0.
pub fn f_measure(refs: &BeatList, preds: &BeatList, tolerance_sec: f64) -> (f64, f64, f64) {
    match (refs.is_empty(), preds.is_empty()) {
        (true, true) => return (1.0, 1.0, 1.0),
        (true, false) => return (0.0, 1.0, 0.0),
        (false, true) => return (1.0, 0.0, 0.0),
        _ => {}
    }
    let m = match_events(refs, preds, tolerance_sec);
    let p = m.n_tp as f64 / preds.len() as f64;
    let r = m.n_tp as f64 / refs.len() as f64;
    let f = if m.n_tp == 0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f)
}

/// The reference grid at the allowed metrical levels: identity, off-phase,
/// double tempo, and half tempo from the first and from the second event.
pub fn metrical_variants(refs: &BeatList) -> Vec<(&'static str, BeatList)> {
    let t = refs.times();
    let mut out = vec![("identity", refs.clone())];
    if t.len() < 2 {
        return out;
    }
    let mids: Vec<f64> = t.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let mut double = Vec::with_capacity(2 * t.len() - 1);
    for (i, &x) in t.iter().enumerate() {
        double.push(x);
        if let Some(&m) = mids.get(i) {
            double.push(m);
        }
    }
    let every_other = |start: usize| t.iter().skip(start).step_by(2).copied().collect::<Vec<_>>();
    // inputs are sorted and distinct, so every variant is too
    out.push((
        "off_phase",
        BeatList::new(mids).expect("midpoints are increasing"),
    ));
    out.push((
        "double",
        BeatList::new(double).expect("interleaving is increasing"),
    ));
    out.push((
        "half_even",
        BeatList::new(every_other(0)).expect("subset is increasing"),
    ));
    out.push((
        "half_odd",
        BeatList::new(every_other(1)).expect("subset is increasing"),
    ));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuityConfig {
    /// Window half-width as a fraction of the local inter-beat interval.
    pub phase_tolerance: f64,
    /// Shortest run of correct predictions that counts as a continuous
    /// segment for the `_c` scores.
    pub min_segment: usize,
}

impl Default for ContinuityConfig {
    fn default() -> Self {
        Self {
            phase_tolerance: DEFAULT_PHASE_TOLERANCE,
            min_segment: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuityScores {
    pub cml_c: f64,
    pub cml_t: f64,
    pub aml_c: f64,
    pub aml_t: f64,
}

/// Per-prediction correctness against one reference grid.
///
/// Prediction `i` corresponds to its nearest reference `j` (each reference
/// serves one prediction at most). It is correct when it lies within the
/// phase window of `j`, the previous prediction lies within the window of
/// `j - 1`, and the predicted interval matches `ref[j] - ref[j-1]` within the
/// same relative tolerance. The first prediction has no predecessor, so its
/// interval to the second prediction is compared with `ref[j+1] - ref[j]`
/// instead.
fn correct_flags(refs: &[f64], preds: &[f64], tol: f64) -> Vec<bool> {
    let n = refs.len();
    let ibi = |j: usize| {
        if j == 0 {
            refs[1] - refs[0]
        } else {
            refs[j] - refs[j - 1]
        }
    };
    let in_window = |p: f64, j: usize| (p - refs[j]).abs() <= tol * ibi(j) + WINDOW_EPS;
    let tempo_ok =
        |pred_ibi: f64, ref_ibi: f64| (1.0 - pred_ibi / ref_ibi).abs() <= tol + WINDOW_EPS;
    let mut used = vec![false; n];
    let mut flags = Vec::with_capacity(preds.len());
    for (i, &p) in preds.iter().enumerate() {
        let k = refs.partition_point(|&x| x < p);
        let j = match (k.checked_sub(1), (k < n).then_some(k)) {
            (Some(a), Some(b)) => {
                if p - refs[a] <= refs[b] - p {
                    a
                } else {
                    b
                }
            }
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => unreachable!("refs has at least two events"),
        };
        let ok = !used[j] && in_window(p, j) && {
            if i == 0 {
                match (preds.get(1), j + 1 < n) {
                    (Some(&next), true) => tempo_ok(next - p, refs[j + 1] - refs[j]),
                    (Some(_), false) => false,
                    (None, _) => true,
                }
            } else {
                j > 0 && in_window(preds[i - 1], j - 1) && tempo_ok(p - preds[i - 1], ibi(j))
            }
        };
        if ok {
            used[j] = true;
        }
        flags.push(ok);
    }
    flags
}

/// `(longest eligible run, total correct)` as fractions of the prediction count.
fn cml(refs: &BeatList, preds: &BeatList, cfg: &ContinuityConfig) -> (f64, f64) {
    if refs.len() < 2 || preds.is_empty() {
        return (0.0, 0.0);
    }
    let flags = correct_flags(refs.times(), preds.times(), cfg.phase_tolerance);
    let mut longest = 0;
    let mut run = 0;
    for &f in &flags {
        run = if f { run + 1 } else { 0 };
        longest = longest.max(run);
    }
    if longest < cfg.min_segment {
        longest = 0;
    }
    let total = flags.iter().filter(|&&f| f).count();
    let n = preds.len() as f64;
    (longest as f64 / n, total as f64 / n)
}

/// CML scores against the references and AML scores as the best CML over
/// all metrical variants. Fewer than two references or no predictions give
/// all zeros.
pub fn continuity_metrics(
    refs: &BeatList,
    preds: &BeatList,
    cfg: &ContinuityConfig,
) -> Result<ContinuityScores> {
    continuity_with_variants(refs, preds, cfg, true)
}

fn continuity_with_variants(
    refs: &BeatList,
    preds: &BeatList,
    cfg: &ContinuityConfig,
    variants: bool,
) -> Result<ContinuityScores> {
    if !(cfg.phase_tolerance > 0.0 && cfg.phase_tolerance < 0.5) {
        return Err(MeterError::invalid(format!(
            "phase tolerance {} outside (0, 0.5)",
            cfg.phase_tolerance
        )));
    }
    let (cml_c, cml_t) = cml(refs, preds, cfg);
    let (mut aml_c, mut aml_t) = (cml_c, cml_t);
    if variants {
        for (_, v) in metrical_variants(refs).iter().skip(1) {
            let (c, t) = cml(v, preds, cfg);
            aml_c = aml_c.max(c);
            aml_t = aml_t.max(t);
        }
    }
    Ok(ContinuityScores {
        cml_c,
        cml_t,
        aml_c,
        aml_t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub f_tolerance_sec: f64,
    pub continuity: ContinuityConfig,
    /// Whether downbeat AML scores consider metrical variants; when off they
    /// equal the CML scores.
    pub downbeat_variants: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            f_tolerance_sec: DEFAULT_F_TOLERANCE,
            continuity: ContinuityConfig::default(),
            downbeat_variants: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSet {
    pub f: f64,
    pub cml_c: f64,
    pub cml_t: f64,
    pub aml_c: f64,
    pub aml_t: f64,
}

impl MetricSet {
    fn values(&self) -> [f64; 5] {
        [self.f, self.cml_c, self.cml_t, self.aml_c, self.aml_t]
    }

    fn from_values(v: [f64; 5]) -> Self {
        Self {
            f: v[0],
            cml_c: v[1],
            cml_t: v[2],
            aml_c: v[3],
            aml_t: v[4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub track_id: String,
    pub tala: String,
    pub beat: MetricSet,
    pub downbeat: MetricSet,
}

fn metric_set(
    refs: &BeatList,
    preds: &BeatList,
    cfg: &EvalConfig,
    variants: bool,
) -> Result<MetricSet> {
    let (_, _, f) = f_measure(refs, preds, cfg.f_tolerance_sec);
    let c = continuity_with_variants(refs, preds, &cfg.continuity, variants)?;
    Ok(MetricSet {
        f,
        cml_c: c.cml_c,
        cml_t: c.cml_t,
        aml_c: c.aml_c,
        aml_t: c.aml_t,
    })
}

pub fn evaluate_track(
    track_id: &str,
    reference: &AnnotationSequence,
    pred_beats: &BeatList,
    pred_downbeats: &BeatList,
    cfg: &EvalConfig,
) -> Result<TrackRecord> {
    let (ref_beats, ref_downbeats) = annotations_to_beats_and_downbeats(reference);
    Ok(TrackRecord {
        track_id: track_id.to_string(),
        tala: reference.tala().name.clone(),
        beat: metric_set(&ref_beats, pred_beats, cfg, true)?,
        downbeat: metric_set(&ref_downbeats, pred_downbeats, cfg, cfg.downbeat_variants)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    Overall,
    Tala,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub count: usize,
    pub beat: MetricSet,
    pub downbeat: MetricSet,
}

/// Mean of every metric per group. Rows are reduced in (tala, track id)
/// order so the result does not depend on the input order.
pub fn group_means(
    rows: &[TrackRecord],
    group_by: GroupBy,
) -> Result<BTreeMap<String, GroupSummary>> {
    if rows.is_empty() {
        return Err(MeterError::invalid("no evaluation rows to aggregate"));
    }
    let mut sorted: Vec<&TrackRecord> = rows.iter().collect();
    sorted.sort_by(|a, b| (&a.tala, &a.track_id).cmp(&(&b.tala, &b.track_id)));
    let mut sums: BTreeMap<String, (usize, [f64; 5], [f64; 5])> = BTreeMap::new();
    for r in sorted {
        let key = match group_by {
            GroupBy::Overall => "overall".to_string(),
            GroupBy::Tala => r.tala.clone(),
        };
        let e = sums.entry(key).or_insert((0, [0.0; 5], [0.0; 5]));
        e.0 += 1;
        for (s, v) in e.1.iter_mut().zip(r.beat.values()) {
            *s += v;
        }
        for (s, v) in e.2.iter_mut().zip(r.downbeat.values()) {
            *s += v;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(k, (n, b, d))| {
            let mean = |s: [f64; 5]| MetricSet::from_values(s.map(|x| x / n as f64));
            (
                k,
                GroupSummary {
                    count: n,
                    beat: mean(b),
                    downbeat: mean(d),
                },
            )
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetadata {
    pub f_tolerance_sec: f64,
    pub phase_tolerance: f64,
    pub min_segment: usize,
    pub downbeat_variants: bool,
    /// How the first prediction of a sequence is judged for continuity.
    pub first_prediction_rule: String,
    pub continuity_denominator: String,
}

impl From<&EvalConfig> for EvalMetadata {
    fn from(cfg: &EvalConfig) -> Self {
        Self {
            f_tolerance_sec: cfg.f_tolerance_sec,
            phase_tolerance: cfg.continuity.phase_tolerance,
            min_segment: cfg.continuity.min_segment,
            downbeat_variants: cfg.downbeat_variants,
            first_prediction_rule: "phase window plus interval to the second prediction against the following reference interval".into(),
            continuity_denominator: "number of predictions".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tracks: Vec<TrackRecord>,
    pub overall: GroupSummary,
    pub per_tala: BTreeMap<String, GroupSummary>,
    /// Tracks that had a reference but no prediction.
    pub missing: Vec<String>,
    pub metadata: EvalMetadata,
}

pub const CSV_COLUMNS: [&str; 12] = [
    "track_id",
    "tala",
    "beat_f",
    "beat_cml_c",
    "beat_cml_t",
    "beat_aml_c",
    "beat_aml_t",
    "downbeat_f",
    "downbeat_cml_c",
    "downbeat_cml_t",
    "downbeat_aml_c",
    "downbeat_aml_t",
];

/// Per-track rows sorted by (tala, track id) with overall and per-tala means.
pub fn aggregate(
    rows: &[TrackRecord],
    missing: Vec<String>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let overall = group_means(rows, GroupBy::Overall)?
        .remove("overall")
        .expect("overall group present");
    let per_tala = group_means(rows, GroupBy::Tala)?;
    let mut tracks = rows.to_vec();
    tracks.sort_by(|a, b| (&a.tala, &a.track_id).cmp(&(&b.tala, &b.track_id)));
    let mut missing = missing;
    missing.sort();
    Ok(EvalReport {
        tracks,
        overall,
        per_tala,
        missing,
        metadata: cfg.into(),
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| MeterError::Internal(e.to_string());
        w.write_record(CSV_COLUMNS).map_err(io)?;
        for t in &self.tracks {
            let mut rec = vec![t.track_id.clone(), t.tala.clone()];
            rec.extend(
                t.beat
                    .values()
                    .iter()
                    .chain(t.downbeat.values().iter())
                    .map(|v| format!("{v:.6}")),
            );
            w.write_record(&rec).map_err(io)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| MeterError::Internal(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| MeterError::Internal(e.to_string()))
    }
}
