//! Viterbi decoding against exhaustive enumeration on tiny state spaces.

mod common;

use common::oracle::random_instance;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tala_core::barpointer::{path_log_score, viterbi_decode, BarPointerState};
use tala_core::model::NoveltySignal;

#[test]
fn viterbi_matches_exhaustive_enumeration() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 40, 6);
        assert!(inst.space.num_states() <= 40 && inst.nov.len() <= 6);
        let path = viterbi_decode(&inst.space, &inst.model, &inst.nov).unwrap();
        assert_eq!(path.len(), inst.nov.len());
        let score = path_log_score(&inst.space, &inst.model, &inst.nov, &path).unwrap();
        let oracle = inst.best_exhaustive();
        assert!(
            (score - oracle).abs() <= 1e-9,
            "seed {seed}: viterbi {score} vs exhaustive {oracle}"
        );
    }
}

#[test]
fn path_score_agrees_with_independent_scoring() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let inst = random_instance(&mut rng, 40, 6);
        let states = inst.all_states();
        let xs = inst.nov.values();
        let mut path = vec![states[rng.random_range(0..states.len())]];
        let mut expected = -(states.len() as f64).ln() + inst.emission(&path[0], xs[0]);
        for &x in &xs[1..] {
            let succ = inst.successors(path.last().unwrap());
            let (s, lp) = succ[rng.random_range(0..succ.len())];
            expected += lp + inst.emission(&s, x);
            path.push(s);
        }
        let got = path_log_score(&inst.space, &inst.model, &inst.nov, &path).unwrap();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }
}

#[test]
fn viterbi_beats_random_paths() {
    // larger spaces: the decoded path must score at least as well as any
    // sampled valid path
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let inst = loop {
        let i = random_instance(&mut rng, 400, 1);
        if i.space.num_states() > 60 {
            break i;
        }
    };
    let frames = 40;
    let nov = NoveltySignal::new(
        inst.space.frame_rate_hz(),
        (0..frames).map(|_| rng.random_range(0.0..2.0)).collect(),
    )
    .unwrap();
    let path = viterbi_decode(&inst.space, &inst.model, &nov).unwrap();
    let best = path_log_score(&inst.space, &inst.model, &nov, &path).unwrap();
    assert!(best.is_finite());
    let states = inst.all_states();
    for _ in 0..1000 {
        let mut p = vec![states[rng.random_range(0..states.len())]];
        for _ in 1..frames {
            let succ = inst.successors(p.last().unwrap());
            p.push(succ[rng.random_range(0..succ.len())].0);
        }
        let s = path_log_score(&inst.space, &inst.model, &nov, &p).unwrap();
        assert!(s <= best + 1e-9, "random path {s} beats decoded {best}");
    }
}

#[test]
fn impossible_paths_score_negative_infinity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inst = loop {
        let i = random_instance(&mut rng, 40, 6);
        if i.nov.len() >= 2 && i.positions[0] >= 3 {
            break i;
        }
    };
    let s = BarPointerState {
        position: 0,
        tempo: 0,
        pattern: 0,
    };
    let mut path = vec![s; inst.nov.len()];
    path[1].position = 2;
    assert_eq!(
        path_log_score(&inst.space, &inst.model, &inst.nov, &path).unwrap(),
        f64::NEG_INFINITY
    );
}
