//! Text file formats, dataset manifests, stratified splits and dataset
//! statistics.
//!
//! Formats (UTF-8, LF line endings):
//! - annotations: `time_sec,cycle_position` per line, no header, times
//!   written with 3 decimals;
//! - activations: `# frame_rate_hz: <fps>` then `beat<TAB>downbeat` per
//!   frame with 6 decimals;
//! - novelty: the same header, then one value per frame with 6 decimals;
//! - beat lists: one time per line with 3 decimals;
//! - manifests: JSON `{"version": 1, "entries": [...]}`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MeterError, Result};
use crate::model::{
    validate_events, ActivationPair, AnnotationSequence, BeatList, MeterEvent, NoveltySignal,
    TalaSpec,
};
use crate::pulse::{cycle_duration_stats, median_tempo_bpm, CycleStats};

const RATE_HEADER: &str = "# frame_rate_hz:";

/// The seeds of the three repeated training runs.
pub const PREDETERMINED_SEEDS: [u64; 3] = [42, 52, 62];

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| MeterError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| MeterError::io(path, e))
}

fn parse_f64(s: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| MeterError::Parse {
        line,
        message: format!("{what} '{}' is not a number", s.trim()),
    })?;
    if !v.is_finite() {
        return Err(MeterError::Parse {
            line,
            message: format!("{what} is not finite"),
        });
    }
    Ok(v)
}

/// Non-blank lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

// ---- annotations ----

pub fn parse_annotations(text: &str, tala: &TalaSpec) -> Result<AnnotationSequence> {
    let mut events = Vec::new();
    let mut lines = Vec::new();
    for (line, l) in content_lines(text) {
        let (t, p) = l.split_once(',').ok_or_else(|| MeterError::Parse {
            line,
            message: format!("expected 'time_sec,cycle_position', got '{l}'"),
        })?;
        let time_sec = parse_f64(t, line, "time")?;
        let cycle_position = p.trim().parse().map_err(|_| MeterError::Parse {
            line,
            message: format!("cycle position '{}' is not a positive integer", p.trim()),
        })?;
        events.push(MeterEvent {
            time_sec,
            cycle_position,
        });
        lines.push(line);
    }
    if let Some((i, message)) = validate_events(&events, tala.beats_per_cycle) {
        return Err(MeterError::Parse {
            line: lines[i],
            message,
        });
    }
    AnnotationSequence::new(events, tala.clone())
}

pub fn format_annotations(ann: &AnnotationSequence) -> String {
    ann.events()
        .iter()
        .map(|e| format!("{:.3},{}\n", e.time_sec, e.cycle_position))
        .collect()
}

pub fn read_annotations(path: &Path, tala: &TalaSpec) -> Result<AnnotationSequence> {
    parse_annotations(&read_text(path)?, tala)
}

pub fn write_annotations(ann: &AnnotationSequence, path: &Path) -> Result<()> {
    write_text(path, &format_annotations(ann))
}

// ---- frame-rate headed curves ----

/// Splits off the frame-rate header; returns the rate and the data lines.
fn parse_rate_header(text: &str) -> Result<(f64, Vec<(usize, &str)>)> {
    let mut lines = content_lines(text);
    let (line, first) = lines.next().ok_or_else(|| MeterError::Parse {
        line: 1,
        message: format!("missing '{RATE_HEADER} <fps>' header"),
    })?;
    let rate = first
        .strip_prefix(RATE_HEADER)
        .ok_or_else(|| MeterError::Parse {
            line,
            message: format!("missing '{RATE_HEADER} <fps>' header"),
        })?;
    let fps = parse_f64(rate, line, "frame rate")?;
    Ok((fps, lines.collect()))
}

pub fn parse_activations(text: &str) -> Result<ActivationPair> {
    let (fps, lines) = parse_rate_header(text)?;
    let mut beat = Vec::with_capacity(lines.len());
    let mut down = Vec::with_capacity(lines.len());
    for (frame, (line, l)) in lines.into_iter().enumerate() {
        let mut cols = l.split(['\t', ',']);
        let (Some(b), Some(d), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(MeterError::Parse {
                line,
                message: format!("expected 'beat<TAB>downbeat', got '{l}'"),
            });
        };
        let b = parse_f64(b, line, "beat activation")?;
        let d = parse_f64(d, line, "downbeat activation")?;
        for value in [b, d] {
            if !(0.0..=1.0).contains(&value) {
                return Err(MeterError::ActivationRange { frame, value });
            }
        }
        beat.push(b);
        down.push(d);
    }
    ActivationPair::new(fps, beat, down)
}

pub fn format_activations(act: &ActivationPair) -> String {
    let mut s = format!("{RATE_HEADER} {}\n", act.grid().frame_rate_hz());
    for (b, d) in act.beat().iter().zip(act.downbeat()) {
        s.push_str(&format!("{b:.6}\t{d:.6}\n"));
    }
    s
}

pub fn read_activations(path: &Path) -> Result<ActivationPair> {
    parse_activations(&read_text(path)?)
}

pub fn write_activations(act: &ActivationPair, path: &Path) -> Result<()> {
    write_text(path, &format_activations(act))
}

pub fn parse_novelty(text: &str) -> Result<NoveltySignal> {
    let (fps, lines) = parse_rate_header(text)?;
    let values = lines
        .into_iter()
        .map(|(line, l)| parse_f64(l, line, "novelty value"))
        .collect::<Result<Vec<_>>>()?;
    NoveltySignal::new(fps, values)
}

pub fn format_novelty(nov: &NoveltySignal) -> String {
    let mut s = format!("{RATE_HEADER} {}\n", nov.grid().frame_rate_hz());
    for v in nov.values() {
        s.push_str(&format!("{v:.6}\n"));
    }
    s
}

pub fn read_novelty(path: &Path) -> Result<NoveltySignal> {
    parse_novelty(&read_text(path)?)
}

pub fn write_novelty(nov: &NoveltySignal, path: &Path) -> Result<()> {
    write_text(path, &format_novelty(nov))
}

// ---- beat lists ----

pub fn parse_beats(text: &str) -> Result<BeatList> {
    let mut times = Vec::new();
    for (line, l) in content_lines(text) {
        let t = parse_f64(l, line, "time")?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(MeterError::Parse {
                    line,
                    message: format!("time {t} not after previous time {prev}"),
                });
            }
        }
        times.push(t);
    }
    BeatList::new(times)
}

pub fn format_beats(beats: &BeatList) -> String {
    beats.times().iter().map(|t| format!("{t:.3}\n")).collect()
}

pub fn read_beats(path: &Path) -> Result<BeatList> {
    parse_beats(&read_text(path)?)
}

pub fn write_beats(beats: &BeatList, path: &Path) -> Result<()> {
    write_text(path, &format_beats(beats))
}

// ---- manifest ----

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub track_id: String,
    pub tala: String,
    pub annotation_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation_path: Option<PathBuf>,
}

impl ManifestEntry {
    pub fn tala_spec(&self) -> Result<TalaSpec> {
        TalaSpec::preset(&self.tala)
    }
}

/// Tracks with their tala and file locations. Relative paths are resolved
/// against the directory the manifest was read from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    base_dir: Option<PathBuf>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self {
            version: MANIFEST_VERSION,
            entries,
            base_dir: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(MeterError::invalid(format!(
                "manifest version {} is not supported (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.track_id.as_str()) {
                return Err(MeterError::invalid(format!(
                    "duplicate track id '{}'",
                    e.track_id
                )));
            }
            e.tala_spec()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = Some(dir.into());
        self
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn get(&self, track_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.track_id == track_id)
    }

    /// Track ids grouped by tala name, each group in manifest order.
    pub fn by_tala(&self) -> BTreeMap<String, Vec<String>> {
        let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for e in &self.entries {
            groups
                .entry(e.tala.clone())
                .or_default()
                .push(e.track_id.clone());
        }
        groups
    }

    pub fn read_annotations(&self, entry: &ManifestEntry) -> Result<AnnotationSequence> {
        read_annotations(&self.resolve(&entry.annotation_path), &entry.tala_spec()?)
    }
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let m = DatasetManifest::from_json(&read_text(path)?)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(m.with_base_dir(base))
}

pub fn write_manifest(m: &DatasetManifest, path: &Path) -> Result<()> {
    write_text(path, &m.to_json()?)
}

// ---- splitting ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    /// Every track of the fold, sorted.
    pub tracks: Vec<String>,
    /// Training part when this fold is the training fold, sorted.
    pub train: Vec<String>,
    /// Validation part when this fold is the training fold, sorted.
    pub validation: Vec<String>,
}

/// Two-fold cross-validation plan with a train/validation split inside each
/// fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub val_fraction: f64,
    pub folds: Vec<Fold>,
}

impl SplitPlan {
    pub fn fold_of(&self, track_id: &str) -> Option<usize> {
        self.folds.iter().position(|f| {
            f.tracks
                .binary_search_by(|t| t.as_str().cmp(track_id))
                .is_ok()
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Apportions `total` items over groups of size `counts` in proportion
/// `fraction`, by the largest-remainder method. Ties go to the earlier
/// group.
pub fn largest_remainder(counts: &[usize], fraction: f64, total: usize) -> Vec<usize> {
    let exact: Vec<f64> = counts.iter().map(|&c| c as f64 * fraction).collect();
    let mut quota: Vec<usize> = exact
        .iter()
        .zip(counts)
        .map(|(&x, &c)| ((x + 1e-9).floor() as usize).min(c))
        .collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    let rem = |i: usize| exact[i] - quota[i] as f64;
    order.sort_by(|&a, &b| {
        rem(b)
            .partial_cmp(&rem(a))
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(quota.iter().sum());
    for i in order {
        if left == 0 {
            break;
        }
        if quota[i] < counts[i] {
            quota[i] += 1;
            left -= 1;
        }
    }
    quota
}

/// Tala-stratified two-fold split. Every tala is halved between the folds,
/// then each fold is split into train and validation with the same
/// stratification. Deterministic given the manifest contents and the seed;
/// manifest order does not matter.
pub fn stratified_split(
    manifest: &DatasetManifest,
    seed: u64,
    val_fraction: f64,
) -> Result<SplitPlan> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(MeterError::invalid(format!(
            "validation fraction {val_fraction} outside [0, 1)"
        )));
    }
    let mut groups = manifest.by_tala();
    if let Some((tala, ids)) = groups.iter().find(|(_, ids)| ids.len() < 2) {
        return Err(MeterError::invalid(format!(
            "tala '{tala}' has {} track(s); stratified splitting needs at least 2",
            ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for ids in groups.values_mut() {
        ids.sort();
        ids.shuffle(&mut rng);
    }
    let counts: Vec<usize> = groups.values().map(Vec::len).collect();
    let n: usize = counts.iter().sum();
    let first = largest_remainder(&counts, 0.5, n.div_ceil(2));
    let mut fold_groups: [Vec<Vec<String>>; 2] = [Vec::new(), Vec::new()];
    for (ids, &q) in groups.values().zip(&first) {
        fold_groups[0].push(ids[..q].to_vec());
        fold_groups[1].push(ids[q..].to_vec());
    }
    let folds = fold_groups
        .into_iter()
        .map(|mut fg| {
            let counts: Vec<usize> = fg.iter().map(Vec::len).collect();
            let size: usize = counts.iter().sum();
            let val_total = (size as f64 * val_fraction).round() as usize;
            let val_quota = largest_remainder(&counts, val_fraction, val_total);
            let (mut tracks, mut train, mut validation) = (Vec::new(), Vec::new(), Vec::new());
            for (ids, &q) in fg.iter_mut().zip(&val_quota) {
                ids.shuffle(&mut rng);
                validation.extend_from_slice(&ids[..q]);
                train.extend_from_slice(&ids[q..]);
                tracks.extend_from_slice(ids);
            }
            tracks.sort();
            train.sort();
            validation.sort();
            Fold {
                tracks,
                train,
                validation,
            }
        })
        .collect();
    Ok(SplitPlan {
        seed,
        val_fraction,
        folds,
    })
}

/// Orders tracks so every tala is spread evenly: the i-th of a group's n
/// tracks sits at (i + 0.5) / n, and the union is sorted by that position,
/// ties by tala name. With a seed each group is shuffled first; without one
/// the given order is kept.
pub fn interleave_order(groups: &BTreeMap<String, Vec<String>>, seed: Option<u64>) -> Vec<String> {
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    let groups: Vec<(&String, Vec<String>)> = groups
        .iter()
        .map(|(name, ids)| {
            let mut ids = ids.clone();
            if let Some(rng) = rng.as_mut() {
                ids.shuffle(rng);
            }
            (name, ids)
        })
        .collect();
    // (numerator 2i+1, denominator 2n, group, index) compared exactly
    let mut slots: Vec<(u128, u128, usize, usize)> = Vec::new();
    for (g, (_, ids)) in groups.iter().enumerate() {
        let n = ids.len() as u128;
        slots.extend((0..ids.len()).map(|i| (2 * i as u128 + 1, 2 * n, g, i)));
    }
    slots.sort_by(|a, b| {
        (a.0 * b.1)
            .cmp(&(b.0 * a.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });
    slots
        .into_iter()
        .map(|(_, _, g, i)| groups[g].1[i].clone())
        .collect()
}

// ---- statistics ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TalaSummary {
    pub pieces: usize,
    pub total_duration_sec: f64,
    pub median_duration_sec: f64,
    pub annotations: usize,
    pub samas: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackTempo {
    pub track_id: String,
    pub tala: String,
    pub duration_sec: f64,
    pub median_bpm: Option<f64>,
    pub cycle: Option<CycleStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsIssue {
    pub track_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub overall: TalaSummary,
    pub per_tala: BTreeMap<String, TalaSummary>,
    pub tracks: Vec<TrackTempo>,
    pub errors: Vec<StatsIssue>,
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn wav_duration(path: &Path) -> Result<f64> {
    let r = hound::WavReader::open(path)?;
    Ok(r.duration() as f64 / r.spec().sample_rate as f64)
}

fn summarize<'a>(rows: impl Iterator<Item = &'a (TrackTempo, usize, usize)>) -> TalaSummary {
    let mut durations = Vec::new();
    let (mut annotations, mut samas) = (0, 0);
    for (t, a, s) in rows {
        durations.push(t.duration_sec);
        annotations += a;
        samas += s;
    }
    TalaSummary {
        pieces: durations.len(),
        total_duration_sec: durations.iter().sum(),
        median_duration_sec: median(&durations),
        annotations,
        samas,
    }
}

/// Per-tala and overall counts and durations, plus per-track tempo and
/// cycle statistics. A track's duration is that of its audio when readable,
/// else the time of its last annotation. Unreadable files are reported in
/// `errors` and the track is left out.
pub fn dataset_stats(manifest: &DatasetManifest) -> DatasetStats {
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for e in &manifest.entries {
        let ann = match manifest.read_annotations(e) {
            Ok(a) => a,
            Err(err) => {
                errors.push(StatsIssue {
                    track_id: e.track_id.clone(),
                    message: err.to_string(),
                });
                continue;
            }
        };
        let last = ann.events().last().map_or(0.0, |ev| ev.time_sec);
        let duration_sec = match &e.audio_path {
            Some(p) => wav_duration(&manifest.resolve(p)).unwrap_or_else(|err| {
                errors.push(StatsIssue {
                    track_id: e.track_id.clone(),
                    message: format!("audio: {err}"),
                });
                last
            }),
            None => last,
        };
        let beats = BeatList::new(ann.events().iter().map(|ev| ev.time_sec).collect())
            .expect("validated annotations");
        let tempo = TrackTempo {
            track_id: e.track_id.clone(),
            tala: e.tala.clone(),
            duration_sec,
            median_bpm: median_tempo_bpm(&beats).ok(),
            cycle: cycle_duration_stats(&ann).ok(),
        };
        rows.push((tempo, ann.len(), ann.sama_times().len()));
    }
    let mut per_tala = BTreeMap::new();
    for tala in rows
        .iter()
        .map(|r| r.0.tala.clone())
        .collect::<std::collections::BTreeSet<_>>()
    {
        let s = summarize(rows.iter().filter(|r| r.0.tala == tala));
        per_tala.insert(tala, s);
    }
    DatasetStats {
        overall: summarize(rows.iter()),
        per_tala,
        tracks: rows.into_iter().map(|r| r.0).collect(),
        errors,
    }
}

pub const TEMPO_CSV_COLUMNS: [&str; 6] = [
    "track_id",
    "tala",
    "median_bpm",
    "min_cycle",
    "max_cycle",
    "median_cycle",
];

/// Per-track tempo and cycle table; undefined values are empty cells.
pub fn tempo_table_csv(stats: &DatasetStats) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| MeterError::Internal(e.to_string());
    w.write_record(TEMPO_CSV_COLUMNS).map_err(err)?;
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for t in &stats.tracks {
        w.write_record([
            t.track_id.clone(),
            t.tala.clone(),
            cell(t.median_bpm),
            cell(t.cycle.map(|c| c.min)),
            cell(t.cycle.map(|c| c.max)),
            cell(t.cycle.map(|c| c.median)),
        ])
        .map_err(err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| MeterError::Internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| MeterError::Internal(e.to_string()))
}
