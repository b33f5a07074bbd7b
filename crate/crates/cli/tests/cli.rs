//! End-to-end runs of the `tala` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn tala(args: &[&str]) -> Output {
    tala_env(args, &[])
}

fn tala_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tala"));
    c.args(args).env_remove("TALA_JOBS");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn ok_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn times(p: impl AsRef<Path>) -> Vec<f64> {
    read(p).lines().map(|l| l.parse().unwrap()).collect()
}

/// Synthetic corpus in `dir/corpus`; returns the manifest path.
fn corpus(dir: &Path, talas: &str, tempi: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join("corpus");
    let mut args = vec![
        "synth",
        "-o",
        s(&out),
        "--tala",
        talas,
        "--tempo",
        tempi,
        "--duration",
        "20",
    ];
    args.extend_from_slice(extra);
    ok_json(&tala(&args));
    out.join("manifest.json")
}

/// Copies every annotation of the manifest into prediction files.
fn oracle_predictions(corpus: &Path, ids: &[&str], dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    for id in ids {
        let mut beats = String::new();
        let mut downs = String::new();
        for line in read(corpus.join(format!("{id}.csv"))).lines() {
            let mut cols = line.split(',');
            let (t, pos) = (cols.next().unwrap(), cols.next().unwrap());
            beats.push_str(&format!("{t}\n"));
            if pos == "1" {
                downs.push_str(&format!("{t}\n"));
            }
        }
        std::fs::write(dir.join(format!("{id}.beats")), beats).unwrap();
        std::fs::write(dir.join(format!("{id}.downbeats")), downs).unwrap();
    }
}

fn click_wav(path: &Path, sample_rate: u32, seconds: f64, bpm: f64) {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    let n = (seconds * f64::from(sample_rate)) as usize;
    let period = (60.0 / bpm * f64::from(sample_rate)) as usize;
    for i in 0..n {
        let k = i % period;
        let v = if k < 200 {
            (0.8 * (1.0 - k as f64 / 200.0) * (k as f64 * 0.7).sin() * 32767.0) as i16
        } else {
            0
        };
        w.write_sample(v).unwrap();
    }
    w.finalize().unwrap();
}

#[test]
fn features_writes_novelty() {
    let d = TempDir::new().unwrap();
    let wav = d.path().join("click.wav");
    click_wav(&wav, 22050, 4.0, 120.0);
    let out = d.path().join("n.txt");
    let j = ok_json(&tala(&["features", s(&wav), "-o", s(&out)]));
    assert!(out.is_file());
    assert_eq!(j["frame_rate_hz"].as_f64().unwrap(), 22050.0 / 221.0);
    assert!(j["frames"].as_u64().unwrap() > 300);

    let out50 = d.path().join("n50.txt");
    let j = ok_json(&tala(&[
        "features",
        s(&wav),
        "-o",
        s(&out50),
        "--fps",
        "50",
    ]));
    assert!(read(&out50).starts_with("# frame_rate_hz: 50\n"));
    assert!((j["duration_sec"].as_f64().unwrap() - 4.0).abs() < 0.1);

    let missing = tala(&["features", s(&d.path().join("none.wav")), "-o", s(&out)]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(!missing.stderr.is_empty());
    let garbage = d.path().join("bad.wav");
    std::fs::write(&garbage, "not audio").unwrap();
    assert_eq!(
        tala(&["features", s(&garbage), "-o", s(&out)])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn track_viterbi_rupaka_downbeats_every_cycle() {
    let d = TempDir::new().unwrap();
    let m = corpus(d.path(), "rupaka", "120", &[]);
    let nov = m.with_file_name("rupaka_120bpm_00.novelty");
    let (b, db) = (d.path().join("b"), d.path().join("d"));
    let j = ok_json(&tala(&[
        "track",
        s(&nov),
        "--tala",
        "rupaka",
        "--decoder",
        "viterbi",
        "--beats-out",
        s(&b),
        "--downbeats-out",
        s(&db),
    ]));
    assert_eq!(j["decoder"], "viterbi");
    let downs = times(&db);
    assert!(downs.len() >= 12, "{downs:?}");
    for w in downs.windows(2) {
        assert!((w[1] - w[0] - 1.5).abs() <= 0.03, "{downs:?}");
    }
    assert!(read(&b)
        .lines()
        .all(|l| l.split('.').nth(1).map(str::len) == Some(3)));
}

#[test]
fn track_pf_is_reproducible_and_ellis_runs() {
    let d = TempDir::new().unwrap();
    let m = corpus(d.path(), "adi", "90", &[]);
    let nov = m.with_file_name("adi_90bpm_00.novelty");
    let run = |decoder: &str, tag: &str| {
        let (b, db) = (
            d.path().join(format!("{tag}.b")),
            d.path().join(format!("{tag}.d")),
        );
        ok_json(&tala(&[
            "track",
            s(&nov),
            "--tala",
            "adi",
            "--decoder",
            decoder,
            "--seed",
            "7",
            "--particles",
            "500",
            "--beats-out",
            s(&b),
            "--downbeats-out",
            s(&db),
        ]));
        (read(b), read(db))
    };
    let first = run("pf", "a");
    assert_eq!(first, run("pf", "b"));
    assert!(first.0.lines().count() > 20);
    let (beats, downs) = run("ellis", "e");
    let beats: Vec<f64> = beats.lines().map(|l| l.parse().unwrap()).collect();
    let ibi = (beats[beats.len() - 1] - beats[0]) / (beats.len() - 1) as f64;
    assert!((ibi - 60.0 / 90.0).abs() < 0.02, "ibi {ibi}");
    assert!(downs.lines().count() >= 3);
}

#[test]
fn track_input_errors_exit_2() {
    let d = TempDir::new().unwrap();
    let m = corpus(d.path(), "adi", "90", &[]);
    let nov = m.with_file_name("adi_90bpm_00.novelty");
    let (b, db) = (d.path().join("b"), d.path().join("d"));
    let base = [
        "track",
        s(&nov),
        "--beats-out",
        s(&b),
        "--downbeats-out",
        s(&db),
    ];
    let mut args = base.to_vec();
    args.extend(["--tala", "adi", "--min-tempo", "230", "--max-tempo", "55"]);
    assert_eq!(tala(&args).status.code(), Some(2));
    let mut args = base.to_vec();
    args.extend(["--tala", "teental"]);
    let out = tala(&args);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for name in ["adi", "rupaka", "misra_chapu", "khanda_chapu"] {
        assert!(err.contains(name), "{err}");
    }
    assert!(!b.exists());
}

#[test]
fn postprocess_preset_and_errors() {
    let d = TempDir::new().unwrap();
    let m = corpus(d.path(), "rupaka", "100", &[]);
    let act = m.with_file_name("rupaka_100bpm_00.activations");
    let (b, db) = (d.path().join("b"), d.path().join("d"));
    let out = tala(&[
        "postprocess",
        s(&act),
        "--preset",
        "cmr",
        "--beats-out",
        s(&b),
        "--downbeats-out",
        s(&db),
    ]);
    let j = ok_json(&out);
    assert_eq!(
        j["config"]["beats_per_bar"],
        serde_json::json!([3, 5, 7, 8])
    );
    assert_eq!(j["config"]["min_tempo_bpm"], 55.0);
    assert_eq!(j["config"]["max_tempo_bpm"], 230.0);
    assert!(String::from_utf8_lossy(&out.stderr)
        .contains("beats_per_bar [3, 5, 7, 8], tempo 55-230 BPM"));
    assert_eq!(j["beats_per_bar"], 3);
    let downs = times(&db);
    assert!(downs.len() >= 10);
    for w in downs.windows(2) {
        assert!((w[1] - w[0] - 1.8).abs() <= 0.03, "{downs:?}");
    }

    let empty = d.path().join("empty.act");
    std::fs::write(&empty, "# frame_rate_hz: 100\n").unwrap();
    let out = tala(&[
        "postprocess",
        s(&empty),
        "--beats-out",
        s(&b),
        "--downbeats-out",
        s(&db),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let bad = d.path().join("bad.act");
    std::fs::write(&bad, "# frame_rate_hz: 100\n0.1\t0.0\n0.2\t0.1\n1.5\t0.2\n").unwrap();
    let out = tala(&[
        "postprocess",
        s(&bad),
        "--beats-out",
        s(&b),
        "--downbeats-out",
        s(&db),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("frame 2"));
}

#[test]
fn evaluate_perfect_missing_and_grouped() {
    let d = TempDir::new().unwrap();
    let m = corpus(d.path(), "adi,rupaka", "60,120", &[]);
    let c = m.parent().unwrap();
    let pred = d.path().join("pred");
    let all = [
        "adi_60bpm_00",
        "adi_120bpm_00",
        "rupaka_60bpm_00",
        "rupaka_120bpm_00",
    ];
    oracle_predictions(c, &all, &pred);
    let report = d.path().join("r.json");
    let j = ok_json(&tala(&[
        "evaluate",
        s(&m),
        s(&pred),
        "--report",
        s(&report),
    ]));
    assert_eq!(j["tracks"], 4);
    for key in ["f", "cml_c", "cml_t", "aml_c", "aml_t"] {
        assert_eq!(j["groups"]["overall"]["beat"][key], 1.0);
        assert_eq!(j["groups"]["overall"]["downbeat"][key], 1.0);
    }
    assert!(report.with_extension("csv").is_file());
    assert_eq!(read(report.with_extension("csv")).lines().count(), 5);

    std::fs::remove_file(pred.join("rupaka_60bpm_00.downbeats")).unwrap();
    let out = tala(&[
        "evaluate",
        s(&m),
        s(&pred),
        "--report",
        s(&report),
        "--group-by",
        "tala",
    ]);
    let j = ok_json(&out);
    assert_eq!(j["missing"], serde_json::json!(["rupaka_60bpm_00"]));
    assert_eq!(j["tracks"], 3);
    let groups = j["groups"].as_object().unwrap();
    assert_eq!(
        groups.keys().collect::<Vec<_>>(),
        ["adi", "overall", "rupaka"]
    );
    assert_eq!(groups["rupaka"]["count"], 1);
    let table = String::from_utf8_lossy(&out.stderr);
    assert!(
        table.lines().any(|l| l.starts_with("adi"))
            && table.lines().any(|l| l.starts_with("overall"))
    );
    let saved: Value = serde_json::from_str(&read(&report)).unwrap();
    assert_eq!(saved["missing"], serde_json::json!(["rupaka_60bpm_00"]));

    let nothing = d.path().join("nothing");
    std::fs::create_dir(&nothing).unwrap();
    assert_eq!(
        tala(&["evaluate", s(&m), s(&nothing), "--report", s(&report)])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn evaluate_output_does_not_depend_on_jobs() {
    let d = TempDir::new().unwrap();
    let m = corpus(d.path(), "adi,misra_chapu,khanda_chapu", "70,150", &[]);
    let c = m.parent().unwrap();
    let ids: Vec<String> = ["adi", "misra_chapu", "khanda_chapu"]
        .iter()
        .flat_map(|t| ["70", "150"].map(|b| format!("{t}_{b}bpm_00")))
        .collect();
    let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
    oracle_predictions(c, &ids, &d.path().join("pred"));
    let r1 = d.path().join("r1.json");
    let r4 = d.path().join("r4.json");
    let pred = d.path().join("pred");
    ok_json(&tala_env(
        &["evaluate", s(&m), s(&pred), "--report", s(&r1)],
        &[("TALA_JOBS", "1")],
    ));
    ok_json(&tala(&[
        "--jobs",
        "4",
        "evaluate",
        s(&m),
        s(&pred),
        "--report",
        s(&r4),
    ]));
    assert_eq!(read(&r1), read(&r4));
    assert_eq!(
        read(r1.with_extension("csv")),
        read(r4.with_extension("csv"))
    );
}

#[test]
fn split_is_byte_identical_and_inputs_untouched() {
    let d = TempDir::new().unwrap();
    let m = corpus(
        d.path(),
        "adi,rupaka,misra_chapu,khanda_chapu",
        "60,90,120,150,180",
        &[],
    );
    let before = read(&m);
    let (p1, p2) = (d.path().join("p1.json"), d.path().join("p2.json"));
    let j = ok_json(&tala(&["split", s(&m), "-o", s(&p1), "--seed", "42"]));
    ok_json(&tala(&["split", s(&m), "-o", s(&p2), "--seed", "42"]));
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(read(&m), before);
    let folds = j["folds"].as_array().unwrap();
    assert_eq!(
        folds[0]["tracks"].as_u64().unwrap() + folds[1]["tracks"].as_u64().unwrap(),
        20
    );
    let p3 = d.path().join("p3.json");
    ok_json(&tala(&["split", s(&m), "-o", s(&p3), "--seed", "52"]));
    assert_ne!(read(&p1), read(&p3));
}

#[test]
fn stats_counts_match_construction() {
    let d = TempDir::new().unwrap();
    let m = corpus(
        d.path(),
        "adi,rupaka,misra_chapu,khanda_chapu",
        "60,120",
        &["--per-combo", "2"],
    );
    let csv = d.path().join("tempo.csv");
    let j = ok_json(&tala(&["stats", s(&m), "--tempo-csv", s(&csv)]));
    assert_eq!(j["overall"]["pieces"], 16);
    for t in ["adi", "rupaka", "misra_chapu", "khanda_chapu"] {
        assert_eq!(j["per_tala"][t]["pieces"], 4);
        assert_eq!(j["per_tala"][t]["annotations"], 2 * 20 + 2 * 40);
    }
    assert_eq!(read(&csv).lines().count(), 17);
}

#[test]
fn synth_is_deterministic() {
    let (d1, d2) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    corpus(d1.path(), "adi,rupaka", "75", &["--off-phase"]);
    corpus(d2.path(), "adi,rupaka", "75", &["--off-phase"]);
    for f in [
        "manifest.json",
        "adi_75bpm_00.csv",
        "rupaka_75bpm_00.activations",
        "rupaka_75bpm_00.novelty",
    ] {
        let a = std::fs::read(d1.path().join("corpus").join(f)).unwrap();
        assert_eq!(
            a,
            std::fs::read(d2.path().join("corpus").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn score_activations_perfect_is_near_zero() {
    let d = TempDir::new().unwrap();
    let m = corpus(d.path(), "adi,khanda_chapu", "100", &[]);
    let c = m.parent().unwrap();
    let mut frames = 0;
    for id in ["adi_100bpm_00", "khanda_chapu_100bpm_00"] {
        let n = 2000;
        let (mut beat, mut down) = (vec![0u8; n], vec![0u8; n]);
        for line in read(c.join(format!("{id}.csv"))).lines() {
            let mut cols = line.split(',');
            let t: f64 = cols.next().unwrap().parse().unwrap();
            let f = (t * 100.0).round() as usize;
            beat[f] = 1;
            if cols.next() == Some("1") {
                down[f] = 1;
            }
        }
        let mut text = String::from("# frame_rate_hz: 100\n");
        for (b, dd) in beat.iter().zip(&down) {
            text.push_str(&format!("{b}.000000\t{dd}.000000\n"));
        }
        std::fs::write(c.join(format!("{id}.activations")), text).unwrap();
        frames += n;
    }
    let j = ok_json(&tala(&["score-activations", s(&m)]));
    let k = 2.0 * frames as f64;
    assert_eq!(j["total"]["frames"], frames);
    assert!(j["total"]["combined_bce"].as_f64().unwrap() <= 1e-7 * k * 1.001);
    assert!(j["total"]["shift_tolerant"].as_f64().unwrap() <= 1e-7 * k * 100.0);

    let noisy = ok_json(&tala(&[
        "score-activations",
        s(&m),
        "--widen",
        "--positive-weight",
        "3",
    ]));
    assert_eq!(noisy["positive_weight"], 3.0);
    assert!(noisy["total"]["combined_bce"].as_f64().unwrap() > 1.0);
}

#[test]
fn fit_model_feeds_track() {
    let d = TempDir::new().unwrap();
    let m = corpus(d.path(), "misra_chapu", "80,110,140", &[]);
    let model = d.path().join("model.json");
    let j = ok_json(&tala(&[
        "fit-model",
        "--tala",
        "misra_chapu",
        "-o",
        s(&model),
        "--manifest",
        s(&m),
        "--novelty-dir",
        s(m.parent().unwrap()),
    ]));
    assert_eq!(j["training_tracks"], 3);
    let nov = m.with_file_name("misra_chapu_110bpm_00.novelty");
    let (b, db) = (d.path().join("b"), d.path().join("d"));
    ok_json(&tala(&[
        "track",
        s(&nov),
        "--tala",
        "misra_chapu",
        "--model",
        s(&model),
        "--beats-out",
        s(&b),
        "--downbeats-out",
        s(&db),
    ]));
    let downs = times(&db);
    let cycle = 7.0 * 60.0 / 110.0;
    for w in downs.windows(2) {
        assert!((w[1] - w[0] - cycle).abs() <= 0.03, "{downs:?}");
    }
    assert_eq!(
        tala(&[
            "fit-model",
            "--tala",
            "adi",
            "-o",
            s(&model),
            "--manifest",
            s(&m),
            "--novelty-dir",
            s(d.path())
        ])
        .status
        .code(),
        Some(2)
    );
}
