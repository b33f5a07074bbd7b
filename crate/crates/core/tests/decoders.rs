mod common;

use common::{benchmark_track, fitted_model, space};
use tala_core::barpointer::{
    particle_filter_decode, path_log_score, states_to_meter, viterbi_decode, ObservationModel,
};
use tala_core::evalmetrics::f_measure;
use tala_core::model::{annotations_to_beats_and_downbeats, TalaSpec};

#[test]
fn viterbi_recovers_a_rupaka_track() {
    let tala = TalaSpec::rupaka();
    let (nov, ann) = benchmark_track(&tala, 120.0, 20.0, 77);
    let sp = space(&tala);
    let model = fitted_model(&tala);
    let path = viterbi_decode(&sp, &model, &nov).unwrap();
    assert!(path_log_score(&sp, &model, &nov, &path)
        .unwrap()
        .is_finite());
    let (b, d) = states_to_meter(&path, &sp, nov.grid()).unwrap();
    let (rb, rd) = annotations_to_beats_and_downbeats(&ann);
    // the pointer may close a beat on the very last frame, where the
    // annotation grid has already stopped
    assert!(f_measure(&rb, &b, 0.07).2 >= 0.98);
    assert_eq!(f_measure(&rd, &d, 0.07).2, 1.0);
    for w in d.times().windows(2) {
        assert!((w[1] - w[0] - 1.5).abs() < 0.03);
    }
}

#[test]
fn particle_filter_is_seed_deterministic() {
    let tala = TalaSpec::khanda_chapu();
    let (nov, ann) = benchmark_track(&tala, 100.0, 20.0, 78);
    let sp = space(&tala);
    let model = fitted_model(&tala);
    let a = particle_filter_decode(&sp, &model, &nov, 1000, 7).unwrap();
    let b = particle_filter_decode(&sp, &model, &nov, 1000, 7).unwrap();
    assert_eq!(a, b);
    let (beats, _) = states_to_meter(&a, &sp, nov.grid()).unwrap();
    let (rb, _) = annotations_to_beats_and_downbeats(&ann);
    assert!(f_measure(&rb, &beats, 0.07).2 >= 0.9);
    assert!(particle_filter_decode(&sp, &model, &nov, 0, 7).is_err());
}

#[test]
fn model_json_round_trip_is_exact() {
    let model = fitted_model(&TalaSpec::rupaka());
    let text = model.to_json().unwrap();
    let back = ObservationModel::from_json(&text).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.to_json().unwrap(), text);
}
