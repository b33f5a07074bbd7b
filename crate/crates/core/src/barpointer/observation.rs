use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::space::{BarPointerState, BarPointerStateSpace};
use crate::error::{MeterError, Result};
use crate::model::{AnnotationSequence, NoveltySignal, TalaSpec};

/// Smallest variance any mixture component may take.
pub const VARIANCE_FLOOR: f64 = 1e-3;
const EM_MAX_ITER: usize = 50;
const EM_TOL: f64 = 1e-6;
pub const MODEL_FORMAT: &str = "tala-observation-model";
pub const MODEL_VERSION: u32 = 1;

/// One-dimensional Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl Gmm {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        let gmm = Self {
            weights,
            means,
            variances,
        };
        gmm.validate()?;
        Ok(gmm)
    }

    fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.variances.len() != k {
            return Err(MeterError::invalid(
                "mixture needs matching non-empty weights, means and variances",
            ));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-6
        {
            return Err(MeterError::invalid(
                "mixture weights must be non-negative and sum to 1",
            ));
        }
        if self.variances.iter().any(|v| !(v.is_finite() && *v > 0.0))
            || self.means.iter().any(|m| !m.is_finite())
        {
            return Err(MeterError::invalid(
                "mixture means must be finite and variances positive",
            ));
        }
        Ok(())
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let terms = self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), v)| w.ln() - 0.5 * ((2.0 * PI * v).ln() + (x - m).powi(2) / v));
        log_sum_exp(terms)
    }

    fn single(data: &[f64]) -> Self {
        let (mean, var) = mean_var(data);
        Self {
            weights: vec![1.0],
            means: vec![mean],
            variances: vec![var.max(VARIANCE_FLOOR)],
        }
    }

    /// Expectation-maximization from a quantile split of the sorted data.
    ///
    /// Stops after 50 iterations or once the log-likelihood gains less than
    /// 1e-6. With fewer data points than components a single Gaussian is
    /// returned.
    pub fn fit(data: &[f64], components: usize) -> Self {
        let k = components.max(1);
        if data.len() < k || k == 1 {
            return Self::single(data);
        }
        let mut sorted = data.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mut gmm = Self {
            weights: vec![1.0 / k as f64; k],
            means: Vec::with_capacity(k),
            variances: Vec::with_capacity(k),
        };
        for g in 0..k {
            let (m, v) = mean_var(&sorted[g * n / k..(g + 1) * n / k]);
            gmm.means.push(m);
            gmm.variances.push(v.max(VARIANCE_FLOOR));
        }

        let mut resp = vec![0.0; n * k];
        let mut prev = f64::NEG_INFINITY;
        for _ in 0..EM_MAX_ITER {
            let mut ll = 0.0;
            for (i, &x) in sorted.iter().enumerate() {
                let row = &mut resp[i * k..(i + 1) * k];
                for (j, r) in row.iter_mut().enumerate() {
                    let v = gmm.variances[j];
                    *r = gmm.weights[j].ln()
                        - 0.5 * ((2.0 * PI * v).ln() + (x - gmm.means[j]).powi(2) / v);
                }
                let lse = log_sum_exp(row.iter().copied());
                ll += lse;
                row.iter_mut().for_each(|r| *r = (*r - lse).exp());
            }
            for j in 0..k {
                let nj: f64 = (0..n).map(|i| resp[i * k + j]).sum();
                if nj < 1e-12 {
                    // collapsed component: keep it but give it no mass
                    gmm.weights[j] = 0.0;
                    continue;
                }
                let mean = (0..n).map(|i| resp[i * k + j] * sorted[i]).sum::<f64>() / nj;
                let var = (0..n)
                    .map(|i| resp[i * k + j] * (sorted[i] - mean).powi(2))
                    .sum::<f64>()
                    / nj;
                gmm.weights[j] = nj / n as f64;
                gmm.means[j] = mean;
                gmm.variances[j] = var.max(VARIANCE_FLOOR);
            }
            let total: f64 = gmm.weights.iter().sum();
            gmm.weights.iter_mut().for_each(|w| *w /= total);
            if (ll - prev).abs() < EM_TOL {
                break;
            }
            prev = ll;
        }
        gmm
    }
}

fn mean_var(data: &[f64]) -> (f64, f64) {
    if data.is_empty() {
        return (0.0, VARIANCE_FLOOR);
    }
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Per-(pattern, bin) emission densities over the novelty value.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    bins_per_cycle: usize,
    /// `patterns[r][bin]`
    patterns: Vec<Vec<Gmm>>,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    version: u32,
    bins_per_cycle: usize,
    patterns: Vec<Vec<Gmm>>,
}

impl ObservationModel {
    pub fn new(bins_per_cycle: usize, patterns: Vec<Vec<Gmm>>) -> Result<Self> {
        if bins_per_cycle == 0 || patterns.is_empty() {
            return Err(MeterError::invalid(
                "observation model needs at least one bin and pattern",
            ));
        }
        for (r, bins) in patterns.iter().enumerate() {
            if bins.len() != bins_per_cycle {
                return Err(MeterError::invalid(format!(
                    "pattern {r} has {} bins, expected {bins_per_cycle}",
                    bins.len()
                )));
            }
            for g in bins {
                g.validate()?;
            }
        }
        Ok(Self {
            bins_per_cycle,
            patterns,
        })
    }

    pub fn bins_per_cycle(&self) -> usize {
        self.bins_per_cycle
    }

    pub fn num_patterns(&self) -> usize {
        self.patterns.len()
    }

    pub fn gmm(&self, pattern: usize, bin: usize) -> &Gmm {
        &self.patterns[pattern][bin]
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocument {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            bins_per_cycle: self.bins_per_cycle,
            patterns: self.patterns.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
            return Err(MeterError::invalid(format!(
                "unsupported observation model '{}' version {}",
                doc.format, doc.version
            )));
        }
        Self::new(doc.bins_per_cycle, doc.patterns)
    }

    /// Log-likelihood of every `(pattern, bin)` class for one value, in
    /// class order `pattern * bins + bin`.
    pub(crate) fn class_log_probs(&self, value: f64, out: &mut Vec<f64>) {
        out.clear();
        for bins in &self.patterns {
            out.extend(bins.iter().map(|g| g.log_density(value)));
        }
    }
}

/// Default observation resolution: 16 bins per beat.
pub fn default_bins_per_cycle(tala: &TalaSpec) -> usize {
    16 * tala.beats_per_cycle as usize
}

pub fn emission_log_prob(
    model: &ObservationModel,
    state: &BarPointerState,
    space: &BarPointerStateSpace,
    value: f64,
) -> Result<f64> {
    if !space.is_valid(state) || state.pattern >= model.num_patterns() {
        return Err(MeterError::invalid(format!(
            "state {state:?} not covered by the model"
        )));
    }
    let bin = space.bin_of(state, model.bins_per_cycle());
    Ok(model.gmm(state.pattern, bin).log_density(value))
}

/// Fit a single-pattern model from annotated novelty curves.
pub fn fit_observation_model(
    training: &[(NoveltySignal, AnnotationSequence)],
    tala: &TalaSpec,
    bins_per_cycle: usize,
    components: usize,
) -> Result<ObservationModel> {
    let labelled: Vec<(&NoveltySignal, &AnnotationSequence, usize)> =
        training.iter().map(|(n, a)| (n, a, 0)).collect();
    fit_labelled(&labelled, tala, bins_per_cycle, components, 1)
}

/// Fit one mixture per (pattern, bin) where every training track carries a
/// rhythmic pattern label below `num_patterns`.
pub fn fit_observation_model_with_patterns(
    training: &[(NoveltySignal, AnnotationSequence, usize)],
    tala: &TalaSpec,
    bins_per_cycle: usize,
    components: usize,
    num_patterns: usize,
) -> Result<ObservationModel> {
    let labelled: Vec<(&NoveltySignal, &AnnotationSequence, usize)> =
        training.iter().map(|(n, a, r)| (n, a, *r)).collect();
    fit_labelled(&labelled, tala, bins_per_cycle, components, num_patterns)
}

fn fit_labelled(
    training: &[(&NoveltySignal, &AnnotationSequence, usize)],
    tala: &TalaSpec,
    bins: usize,
    components: usize,
    num_patterns: usize,
) -> Result<ObservationModel> {
    if bins == 0 || components == 0 || num_patterns == 0 {
        return Err(MeterError::invalid(
            "bins, components and pattern count must all be positive",
        ));
    }
    if training.is_empty() {
        return Err(MeterError::invalid("no training tracks"));
    }
    let mut data: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); bins]; num_patterns];
    for (i, (nov, ann, pattern)) in training.iter().enumerate() {
        if ann.tala().beats_per_cycle != tala.beats_per_cycle {
            return Err(MeterError::invalid(format!(
                "training track {i} is annotated in {} beats per cycle, expected {}",
                ann.tala().beats_per_cycle,
                tala.beats_per_cycle
            )));
        }
        if *pattern >= num_patterns {
            return Err(MeterError::invalid(format!(
                "training track {i} has pattern {pattern} >= {num_patterns}"
            )));
        }
        let grid = nov.grid();
        let samas: Vec<usize> = ann
            .sama_times()
            .iter()
            .filter(|&&t| t < grid.duration_sec())
            .map(|&t| grid.time_to_frame(t))
            .collect::<Result<_>>()?;
        let mut samas = samas;
        samas.dedup();
        if samas.len() < 2 {
            return Err(MeterError::invalid(format!(
                "training track {i} does not cover a full cycle"
            )));
        }
        let values = nov.values();
        for w in samas.windows(2) {
            let (a, b) = (w[0], w[1].min(values.len()));
            let len = (w[1] - w[0]) as f64;
            for (k, &v) in values.iter().enumerate().take(b).skip(a) {
                let bin = (((k - a) as f64 / len) * bins as f64) as usize;
                data[*pattern][bin.min(bins - 1)].push(v);
            }
        }
    }
    let patterns = data
        .iter()
        .map(|bins| bins.iter().map(|d| Gmm::fit(d, components)).collect())
        .collect();
    ObservationModel::new(bins, patterns)
}
