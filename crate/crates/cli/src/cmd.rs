use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use tala_core::barpointer::{
    build_state_space, default_bins_per_cycle, fit_observation_model, particle_filter_decode,
    states_to_meter, viterbi_decode, ObservationModel, TransitionParams,
};
use tala_core::dataio::{
    dataset_stats, read_activations, read_beats, read_manifest, read_novelty, read_text,
    stratified_split, tempo_table_csv, write_activations, write_annotations, write_beats,
    write_manifest, write_novelty, write_text, DatasetManifest, ManifestEntry,
};
use tala_core::evalmetrics::{aggregate, evaluate_track, EvalConfig, GroupSummary};
use tala_core::features::{novelty_from_samples, read_wav_mono, FeatureConfig, NormMode};
use tala_core::losses::{
    combined_meter_loss, positive_weight_from_targets, shift_tolerant_bce, widen_targets,
    LossConfig,
};
use tala_core::model::{
    annotations_to_beats_and_downbeats, targets_from_beats, AnnotationSequence, BeatList,
    FrameGrid, NoveltySignal, TalaSpec,
};
use tala_core::postproc::{cmr_informed_config, default_config, postprocess_joint_detailed};
use tala_core::pulse::{ellis_dp_beats, fourier_tempogram, TempogramParams};
use tala_core::synth::{
    generate_activations, generate_annotations, generate_novelty, synthetic_training_set, SynthSpec,
};

use crate::table;
use crate::{
    Decoder, EvaluateArgs, FeaturesArgs, FitModelArgs, Grouping, InputError, Norm, PostprocessArgs,
    Preset, ScoreArgs, SplitArgs, StatsArgs, SynthArgs, TrackArgs,
};

const DEFAULT_TRAIN_TEMPI: [f64; 4] = [70.0, 100.0, 140.0, 170.0];
const DEFAULT_TRAIN_DURATION: f64 = 30.0;
const DEFAULT_TRAIN_SEED: u64 = 10_000;
const DEFAULT_COMPONENTS: usize = 2;

fn input_error(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(input_error(format!("{}: no such file", p.display())))
    }
}

fn require_dir(p: &Path) -> Result<()> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(input_error(format!("{}: no such directory", p.display())))
    }
}

fn print_json(v: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

pub fn prediction_paths(dir: &Path, track_id: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{track_id}.beats")),
        dir.join(format!("{track_id}.downbeats")),
    )
}

pub fn features(a: &FeaturesArgs) -> Result<()> {
    require_file(&a.audio)?;
    let (samples, sample_rate) =
        read_wav_mono(&a.audio).with_context(|| a.audio.display().to_string())?;
    let cfg = FeatureConfig {
        frame_rate_hz: a.fps,
        window_size: a.window,
        gamma: (a.gamma > 0.0).then_some(a.gamma),
        normalize: match a.norm {
            Norm::Max => Some(NormMode::Max),
            Norm::MeanClip => Some(NormMode::MeanSubtractClip),
            Norm::None => None,
        },
    };
    let nov = novelty_from_samples(&samples, sample_rate, &cfg)?;
    write_novelty(&nov, &a.out)?;
    print_json(&json!({
        "frames": nov.len(),
        "duration_sec": nov.grid().duration_sec(),
        "frame_rate_hz": nov.grid().frame_rate_hz(),
    }))
}

fn synthetic_model(tala: &TalaSpec, fps: f64) -> Result<ObservationModel> {
    let training = synthetic_training_set(
        tala,
        &DEFAULT_TRAIN_TEMPI,
        DEFAULT_TRAIN_DURATION,
        fps,
        DEFAULT_TRAIN_SEED,
    )?;
    Ok(fit_observation_model(
        &training,
        tala,
        default_bins_per_cycle(tala),
        DEFAULT_COMPONENTS,
    )?)
}

/// Downbeats of a plain beat sequence: every `b`-th beat, at the phase whose
/// beats carry the most novelty.
fn strongest_phase(beats: &BeatList, nov: &NoveltySignal, b: usize) -> Result<BeatList> {
    let mut energy = vec![0.0; b];
    for (i, &t) in beats.times().iter().enumerate() {
        energy[i % b] += nov.values()[nov.grid().time_to_frame(t)?];
    }
    let mut best = 0;
    for k in 1..b {
        if energy[k] > energy[best] {
            best = k;
        }
    }
    Ok(BeatList::new(
        beats
            .times()
            .iter()
            .skip(best)
            .step_by(b)
            .copied()
            .collect(),
    )?)
}

pub fn track(a: &TrackArgs) -> Result<()> {
    require_file(&a.novelty)?;
    if let Some(m) = &a.model {
        require_file(m)?;
    }
    let tala = TalaSpec::preset(&a.tala)?;
    if !(a.min_tempo > 0.0 && a.min_tempo <= a.max_tempo && a.max_tempo.is_finite()) {
        return Err(input_error(format!(
            "tempo range {}..{} BPM is not a positive interval",
            a.min_tempo, a.max_tempo
        )));
    }
    let nov = read_novelty(&a.novelty)?;
    let fps = nov.grid().frame_rate_hz();
    let (beats, downbeats, tempo_bpm) = match a.decoder {
        Decoder::Viterbi | Decoder::Pf => {
            let space = build_state_space(&tala, (a.min_tempo, a.max_tempo), fps, 1)?
                .with_transition(TransitionParams {
                    p_tempo: a.p_tempo,
                    p_pattern: 0.0,
                })?;
            let model = match &a.model {
                Some(p) => ObservationModel::from_json(&read_text(p)?)?,
                None => synthetic_model(&tala, fps)?,
            };
            let path = if a.decoder == Decoder::Viterbi {
                viterbi_decode(&space, &model, &nov)?
            } else {
                particle_filter_decode(&space, &model, &nov, a.particles, a.seed)?
            };
            let (b, d) = states_to_meter(&path, &space, nov.grid())?;
            (b, d, None)
        }
        Decoder::Ellis => {
            let lo = a.min_tempo.ceil() as u32;
            let hi = a.max_tempo.floor() as u32;
            let mut axis: Vec<f64> = (lo..=hi).map(f64::from).collect();
            if axis.is_empty() {
                axis.push(a.min_tempo);
            }
            let params = TempogramParams {
                bpm_axis: axis,
                ..TempogramParams::default()
            };
            let bpm = fourier_tempogram(&nov, &params)?.global_tempo_bpm();
            let beats = ellis_dp_beats(&nov, bpm, a.lambda)?;
            let downbeats = strongest_phase(&beats, &nov, tala.beats_per_cycle as usize)?;
            (beats, downbeats, Some(bpm))
        }
    };
    write_beats(&beats, &a.beats_out)?;
    write_beats(&downbeats, &a.downbeats_out)?;
    print_json(&json!({
        "decoder": format!("{:?}", a.decoder).to_lowercase(),
        "tala": tala.name,
        "frames": nov.len(),
        "beats": beats.len(),
        "downbeats": downbeats.len(),
        "tempo_bpm": tempo_bpm,
        "seed": a.seed,
    }))
}

pub fn postprocess(a: &PostprocessArgs) -> Result<()> {
    require_file(&a.activations)?;
    let mut cfg = match a.preset {
        Preset::Default => default_config(),
        Preset::Cmr => cmr_informed_config(),
    };
    if let Some(b) = &a.beats_per_bar {
        cfg.beats_per_bar = b.clone();
    }
    if let Some(t) = a.min_tempo {
        cfg.min_tempo_bpm = t;
    }
    if let Some(t) = a.max_tempo {
        cfg.max_tempo_bpm = t;
    }
    if let Some(l) = a.transition_lambda {
        cfg.transition_lambda = l;
    }
    let act = read_activations(&a.activations)?;
    if act.is_empty() {
        return Err(input_error(format!(
            "{}: no activation frames",
            a.activations.display()
        )));
    }
    cfg.frame_rate_hz = act.grid().frame_rate_hz();
    cfg.validate()?;
    log::info!(
        "postprocess: beats_per_bar {:?}, tempo {}-{} BPM, lambda {}",
        cfg.beats_per_bar,
        cfg.min_tempo_bpm,
        cfg.max_tempo_bpm,
        cfg.transition_lambda
    );
    let d = postprocess_joint_detailed(&act, &cfg)?;
    write_beats(&d.beats, &a.beats_out)?;
    write_beats(&d.downbeats, &a.downbeats_out)?;
    print_json(&json!({
        "frames": act.len(),
        "beats": d.beats.len(),
        "downbeats": d.downbeats.len(),
        "beats_per_bar": d.beats_per_bar,
        "config": cfg,
    }))
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    require_file(&a.manifest)?;
    require_dir(&a.predictions)?;
    let manifest = read_manifest(&a.manifest)?;
    let mut cfg = EvalConfig::default();
    if let Some(t) = a.f_tolerance {
        cfg.f_tolerance_sec = t;
    }
    if let Some(t) = a.phase_tolerance {
        cfg.continuity.phase_tolerance = t;
    }
    cfg.downbeat_variants = !a.no_downbeat_variants;
    if !(cfg.f_tolerance_sec > 0.0 && cfg.continuity.phase_tolerance > 0.0) {
        return Err(input_error("tolerances must be positive"));
    }
    let scored: Vec<Result<Option<_>>> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let (bp, dp) = prediction_paths(&a.predictions, &e.track_id);
            if !bp.is_file() || !dp.is_file() {
                return Ok(None);
            }
            let run = || -> Result<_> {
                let ann = manifest.read_annotations(e)?;
                Ok(evaluate_track(
                    &e.track_id,
                    &ann,
                    &read_beats(&bp)?,
                    &read_beats(&dp)?,
                    &cfg,
                )?)
            };
            run()
                .with_context(|| format!("track {}", e.track_id))
                .map(Some)
        })
        .collect();
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for (e, r) in manifest.entries.iter().zip(scored) {
        match r? {
            Some(row) => rows.push(row),
            None => missing.push(e.track_id.clone()),
        }
    }
    if rows.is_empty() {
        return Err(input_error(format!(
            "no manifest track has predictions in {}",
            a.predictions.display()
        )));
    }
    if !missing.is_empty() {
        log::warn!(
            "{} track(s) without predictions: {}",
            missing.len(),
            missing.join(", ")
        );
    }
    let report = aggregate(&rows, missing, &cfg)?;
    let csv_path = a
        .csv
        .clone()
        .unwrap_or_else(|| a.report.with_extension("csv"));
    write_text(&a.report, &(report.to_json()? + "\n"))?;
    write_text(&csv_path, &report.to_csv()?)?;
    let mut groups: Vec<(String, &GroupSummary)> = Vec::new();
    if a.group_by == Grouping::Tala {
        groups.extend(report.per_tala.iter().map(|(k, v)| (k.clone(), v)));
    }
    groups.push(("overall".into(), &report.overall));
    eprint!("{}", table::metrics(&groups));
    let group_map: BTreeMap<&str, &GroupSummary> =
        groups.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    print_json(&json!({
        "tracks": report.tracks.len(),
        "missing": report.missing,
        "groups": group_map,
        "report": a.report,
        "csv": csv_path,
    }))
}

pub fn stats(a: &StatsArgs) -> Result<()> {
    require_file(&a.manifest)?;
    let manifest = read_manifest(&a.manifest)?;
    let stats = dataset_stats(&manifest);
    for issue in &stats.errors {
        log::warn!("{}: {}", issue.track_id, issue.message);
    }
    if let Some(p) = &a.out {
        write_text(p, &(serde_json::to_string_pretty(&stats)? + "\n"))?;
    }
    if let Some(p) = &a.tempo_csv {
        write_text(p, &tempo_table_csv(&stats)?)?;
    }
    eprint!("{}", table::dataset(&stats));
    print_json(&json!({
        "overall": stats.overall,
        "per_tala": stats.per_tala,
        "errors": stats.errors,
    }))
}

pub fn split(a: &SplitArgs) -> Result<()> {
    require_file(&a.manifest)?;
    let manifest = read_manifest(&a.manifest)?;
    let plan = stratified_split(&manifest, a.seed, a.val_fraction)?;
    write_text(&a.out, &plan.to_json()?)?;
    let tala_of: BTreeMap<&str, &str> = manifest
        .entries
        .iter()
        .map(|e| (e.track_id.as_str(), e.tala.as_str()))
        .collect();
    let folds: Vec<_> = plan
        .folds
        .iter()
        .map(|f| {
            let mut per_tala: BTreeMap<&str, usize> = BTreeMap::new();
            for t in &f.tracks {
                *per_tala.entry(tala_of[t.as_str()]).or_default() += 1;
            }
            json!({
                "tracks": f.tracks.len(),
                "train": f.train.len(),
                "validation": f.validation.len(),
                "per_tala": per_tala,
            })
        })
        .collect();
    print_json(&json!({ "seed": a.seed, "plan": a.out, "folds": folds }))
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let talas = a
        .tala
        .iter()
        .map(|n| TalaSpec::preset(n))
        .collect::<Result<Vec<_>, _>>()?;
    if !(a.fps > 0.0 && a.duration > 0.0) {
        return Err(input_error("frame rate and duration must be positive"));
    }
    let mut jobs = Vec::new();
    for tala in &talas {
        for &bpm in &a.tempo {
            for i in 0..a.per_combo {
                let id = format!("{}_{bpm}bpm_{i:02}", tala.name);
                jobs.push((id, tala.clone(), bpm, a.seed + jobs.len() as u64));
            }
        }
    }
    std::fs::create_dir_all(&a.out_dir).with_context(|| a.out_dir.display().to_string())?;
    let grid = FrameGrid::new(a.fps, (a.duration * a.fps).ceil() as usize)?;
    let entries = jobs
        .par_iter()
        .map(|(id, tala, bpm, seed)| -> Result<ManifestEntry> {
            let spec = SynthSpec::benchmark(tala.clone(), *bpm, a.duration, *seed);
            let ann = generate_annotations(&spec)?;
            let nov = generate_novelty(&spec, &grid)?;
            let act = generate_activations(&spec, &grid, a.off_phase)?;
            let (ann_name, act_name) = (format!("{id}.csv"), format!("{id}.activations"));
            write_annotations(&ann, &a.out_dir.join(&ann_name))?;
            write_novelty(&nov, &a.out_dir.join(format!("{id}.novelty")))?;
            write_activations(&act, &a.out_dir.join(&act_name))?;
            Ok(ManifestEntry {
                track_id: id.clone(),
                tala: tala.name.clone(),
                annotation_path: ann_name.into(),
                audio_path: None,
                activation_path: Some(act_name.into()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest_path = a.out_dir.join("manifest.json");
    write_manifest(&DatasetManifest::new(entries)?, &manifest_path)?;
    print_json(&json!({ "tracks": jobs.len(), "manifest": manifest_path }))
}

struct LoadedTrack {
    id: String,
    beat: Vec<f64>,
    downbeat: Vec<f64>,
    beat_targets: Vec<f64>,
    downbeat_targets: Vec<f64>,
}

fn frame_targets(beats: &BeatList, grid: &FrameGrid) -> Result<Vec<f64>> {
    let inside: Vec<f64> = beats
        .times()
        .iter()
        .copied()
        .filter(|&t| t < grid.duration_sec())
        .collect();
    Ok(targets_from_beats(&BeatList::new(inside)?, grid)?)
}

pub fn score_activations(a: &ScoreArgs) -> Result<()> {
    require_file(&a.manifest)?;
    let manifest = read_manifest(&a.manifest)?;
    let loaded: Vec<Result<Option<LoadedTrack>>> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let Some(p) = &e.activation_path else {
                return Ok(None);
            };
            let run = || -> Result<LoadedTrack> {
                let act = read_activations(&manifest.resolve(p))?;
                let ann: AnnotationSequence = manifest.read_annotations(e)?;
                let (rb, rd) = annotations_to_beats_and_downbeats(&ann);
                Ok(LoadedTrack {
                    id: e.track_id.clone(),
                    beat_targets: frame_targets(&rb, act.grid())?,
                    downbeat_targets: frame_targets(&rd, act.grid())?,
                    beat: act.beat().to_vec(),
                    downbeat: act.downbeat().to_vec(),
                })
            };
            run()
                .with_context(|| format!("track {}", e.track_id))
                .map(Some)
        })
        .collect();
    let mut tracks = Vec::new();
    let mut missing = Vec::new();
    for (e, r) in manifest.entries.iter().zip(loaded) {
        match r? {
            Some(t) => tracks.push(t),
            None => missing.push(e.track_id.clone()),
        }
    }
    if tracks.is_empty() {
        return Err(input_error("no manifest entry has an activation_path"));
    }
    let weight = match a.positive_weight {
        Some(w) => w,
        None => positive_weight_from_targets(
            &tracks
                .iter()
                .map(|t| t.beat_targets.clone())
                .collect::<Vec<_>>(),
        )?,
    };
    let st_cfg = LossConfig::with_positive_weight(weight);
    st_cfg.validate()?;
    let rows = tracks
        .par_iter()
        .map(|t| -> Result<_> {
            let soft = |y: &[f64]| -> Result<Vec<f64>> {
                Ok(if a.widen {
                    widen_targets(y, &st_cfg.widen_weights)?
                } else {
                    y.to_vec()
                })
            };
            let combined = combined_meter_loss(
                &soft(&t.beat_targets)?,
                &t.beat,
                &soft(&t.downbeat_targets)?,
                &t.downbeat,
            )?;
            let st = shift_tolerant_bce(&t.beat_targets, &t.beat, &st_cfg)?.0
                + shift_tolerant_bce(&t.downbeat_targets, &t.downbeat, &st_cfg)?.0;
            Ok(json!({
                "track_id": t.id,
                "frames": t.beat.len(),
                "combined_bce": combined,
                "shift_tolerant": st,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let sum = |key: &str| {
        rows.iter()
            .map(|r| r[key].as_f64().unwrap_or(0.0))
            .sum::<f64>()
    };
    let frames: usize = tracks.iter().map(|t| t.beat.len()).sum();
    let out = json!({
        "positive_weight": weight,
        "widen": a.widen,
        "missing": missing,
        "total": {
            "frames": frames,
            "combined_bce": sum("combined_bce"),
            "shift_tolerant": sum("shift_tolerant"),
        },
        "tracks": rows,
    });
    if let Some(p) = &a.out {
        write_text(p, &(serde_json::to_string_pretty(&out)? + "\n"))?;
    }
    print_json(&out)
}

pub fn fit_model(a: &FitModelArgs) -> Result<()> {
    let tala = TalaSpec::preset(&a.tala)?;
    let bins = a.bins.unwrap_or_else(|| default_bins_per_cycle(&tala));
    let training: Vec<(NoveltySignal, AnnotationSequence)> = match (&a.manifest, &a.novelty_dir) {
        (Some(m), Some(dir)) => {
            require_file(m)?;
            require_dir(dir)?;
            let manifest = read_manifest(m)?;
            let picked: Vec<&ManifestEntry> = manifest
                .entries
                .iter()
                .filter(|e| e.tala == tala.name)
                .collect();
            if picked.is_empty() {
                return Err(input_error(format!(
                    "no {} tracks in {}",
                    tala.name,
                    m.display()
                )));
            }
            picked
                .par_iter()
                .map(|e| -> Result<_> {
                    let nov = read_novelty(&dir.join(format!("{}.novelty", e.track_id)))?;
                    Ok((nov, manifest.read_annotations(e)?))
                })
                .collect::<Result<Vec<_>>>()?
        }
        _ => synthetic_training_set(&tala, &a.tempi, a.duration, a.fps, a.seed)?,
    };
    let model = fit_observation_model(&training, &tala, bins, a.components)?;
    write_text(&a.out, &model.to_json()?)?;
    print_json(&json!({
        "tala": tala.name,
        "bins_per_cycle": bins,
        "components": a.components,
        "training_tracks": training.len(),
        "model": a.out,
    }))
}
