//! Bar-pointer model: a pointer runs through each cycle one frame at a time
//! and may change tempo or rhythmic pattern only when it wraps.

mod decode;
mod observation;
mod space;

pub use decode::{
    particle_filter_decode, path_log_score, states_to_meter, viterbi_decode, PF_POSITION_STEP,
    PF_REINJECT_FRACTION, PF_REINJECT_LOG_PENALTY,
};
pub use observation::{
    default_bins_per_cycle, emission_log_prob, fit_observation_model,
    fit_observation_model_with_patterns, Gmm, ObservationModel, MODEL_FORMAT, MODEL_VERSION,
    VARIANCE_FLOOR,
};
pub use space::{build_state_space, BarPointerState, BarPointerStateSpace, TransitionParams};
