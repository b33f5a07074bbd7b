//! Frame-level training objectives with analytic gradients.
//!
//! Losses are sums over frames, not means. Predictions are clamped to
//! `[CLAMP_EPS, 1 - CLAMP_EPS]` before any log is taken.

use serde::{Deserialize, Serialize};

use crate::error::{MeterError, Result};

pub const CLAMP_EPS: f64 = 1e-7;

/// Weights and pooling widths of the shift-tolerant loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub positive_weight: f64,
    pub pred_pool_width: usize,
    pub label_pool_width: usize,
    pub widen_weights: Vec<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            positive_weight: 1.0,
            pred_pool_width: 7,
            label_pool_width: 13,
            widen_weights: vec![0.5, 0.25],
        }
    }
}

impl LossConfig {
    pub fn with_positive_weight(w: f64) -> Self {
        LossConfig {
            positive_weight: w,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.positive_weight > 0.0 && self.positive_weight.is_finite()) {
            return Err(MeterError::invalid(format!(
                "positive weight must be positive, got {}",
                self.positive_weight
            )));
        }
        for (name, k) in [
            ("pred", self.pred_pool_width),
            ("label", self.label_pool_width),
        ] {
            if k % 2 == 0 {
                return Err(MeterError::invalid(format!(
                    "{name} pool width must be odd, got {k}"
                )));
            }
        }
        check_widen_weights(&self.widen_weights)
    }
}

fn check_widen_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|&w| !(w > 0.0 && w < 1.0)) {
        return Err(MeterError::invalid("widen weights must lie in (0, 1)"));
    }
    if weights.windows(2).any(|p| p[1] > p[0]) {
        return Err(MeterError::invalid("widen weights must be non-increasing"));
    }
    Ok(())
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(MeterError::invalid(format!(
            "targets have {} frames, predictions {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn check_unit(name: &str, xs: &[f64]) -> Result<()> {
    match xs.iter().position(|x| !(0.0..=1.0).contains(x)) {
        Some(i) => Err(MeterError::invalid(format!(
            "{name}[{i}] = {} outside [0, 1]",
            xs[i]
        ))),
        None => Ok(()),
    }
}

fn check_binary(xs: &[f64]) -> Result<()> {
    match xs.iter().position(|&x| x != 0.0 && x != 1.0) {
        Some(i) => Err(MeterError::invalid(format!(
            "target[{i}] = {} is not binary",
            xs[i]
        ))),
        None => Ok(()),
    }
}

fn clamp(p: f64) -> f64 {
    p.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS)
}

/// Binary cross-entropy summed over frames, with its gradient with respect
/// to each prediction. Targets may be soft.
pub fn bce_loss(targets: &[f64], preds: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_lengths(targets, preds)?;
    check_unit("target", targets)?;
    check_unit("prediction", preds)?;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(preds.len());
    for (&y, &p) in targets.iter().zip(preds) {
        let p = clamp(p);
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        grad.push((p - y) / (p * (1.0 - p)));
    }
    Ok((loss, grad))
}

/// Spreads every 1 to its neighbours: `weights[k]` at distance `k + 1`.
/// Overlaps keep the larger value.
pub fn widen_targets(targets: &[f64], widen_weights: &[f64]) -> Result<Vec<f64>> {
    check_binary(targets)?;
    check_widen_weights(widen_weights)?;
    let n = targets.len();
    let mut out = targets.to_vec();
    for i in (0..n).filter(|&i| targets[i] == 1.0) {
        for (k, &w) in widen_weights.iter().enumerate() {
            let d = k + 1;
            if i >= d {
                out[i - d] = out[i - d].max(w);
            }
            if i + d < n {
                out[i + d] = out[i + d].max(w);
            }
        }
    }
    Ok(out)
}

/// Centered sliding max of odd width `k`, truncated at the edges. Returns
/// the pooled values and the leftmost maximizer of every window.
pub fn max_pool(xs: &[f64], k: usize) -> (Vec<f64>, Vec<usize>) {
    let half = k / 2;
    let n = xs.len();
    let mut vals = Vec::with_capacity(n);
    let mut arg = Vec::with_capacity(n);
    for t in 0..n {
        let lo = t.saturating_sub(half);
        let hi = (t + half).min(n - 1);
        let mut best = lo;
        for i in lo + 1..=hi {
            if xs[i] > xs[best] {
                best = i;
            }
        }
        vals.push(xs[best]);
        arg.push(best);
    }
    (vals, arg)
}

/// Shift-tolerant BCE: the positive term sees predictions max-pooled over
/// `pred_pool_width` frames and is weighted by `positive_weight`; the
/// negative term is silenced within `label_pool_width / 2` frames of a
/// target. The gradient of each pooled frame goes to the leftmost maximizer
/// of its window.
pub fn shift_tolerant_bce(
    targets: &[f64],
    preds: &[f64],
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    let st = shift_tolerant_parts(targets, preds, cfg)?;
    Ok((st.positive + st.negative, st.grad))
}

/// The weighted positive and the negative term of [`shift_tolerant_bce`].
pub fn shift_tolerant_terms(
    targets: &[f64],
    preds: &[f64],
    cfg: &LossConfig,
) -> Result<(f64, f64)> {
    let st = shift_tolerant_parts(targets, preds, cfg)?;
    Ok((st.positive, st.negative))
}

struct StParts {
    positive: f64,
    negative: f64,
    grad: Vec<f64>,
}

fn shift_tolerant_parts(targets: &[f64], preds: &[f64], cfg: &LossConfig) -> Result<StParts> {
    cfg.validate()?;
    check_lengths(targets, preds)?;
    check_binary(targets)?;
    check_unit("prediction", preds)?;
    let clamped: Vec<f64> = preds.iter().map(|&p| clamp(p)).collect();
    let (pooled, arg) = max_pool(&clamped, cfg.pred_pool_width);
    let (label_pooled, _) = max_pool(targets, cfg.label_pool_width);
    let w = cfg.positive_weight;
    let (mut positive, mut negative) = (0.0, 0.0);
    let mut grad = vec![0.0; preds.len()];
    for t in 0..preds.len() {
        let (y, my, p) = (targets[t], label_pooled[t], pooled[t]);
        positive -= w * y * p.ln();
        negative -= (1.0 - my) * (1.0 - p).ln();
        grad[arg[t]] += -w * y / p + (1.0 - my) / (1.0 - p);
    }
    Ok(StParts {
        positive,
        negative,
        grad,
    })
}

/// Ratio of negative to positive frames over a training set. All-positive
/// data gives 0, which no loss accepts; callers must treat it as degenerate.
pub fn positive_weight_from_targets(all_targets: &[Vec<f64>]) -> Result<f64> {
    let mut ones = 0usize;
    let mut zeros = 0usize;
    for t in all_targets {
        check_binary(t)?;
        ones += t.iter().filter(|&&y| y == 1.0).count();
        zeros += t.iter().filter(|&&y| y == 0.0).count();
    }
    if ones == 0 {
        return Err(MeterError::invalid(
            "no positive frames in the training targets",
        ));
    }
    if zeros == 0 {
        log::warn!("every target frame is positive; positive weight is 0");
    }
    Ok(zeros as f64 / ones as f64)
}

/// Beat BCE plus downbeat BCE.
pub fn combined_meter_loss(
    beat_t: &[f64],
    beat_p: &[f64],
    down_t: &[f64],
    down_p: &[f64],
) -> Result<f64> {
    let (lb, _) = bce_loss(beat_t, beat_p)?;
    let (ld, _) = bce_loss(down_t, down_p)?;
    Ok(lb + ld)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_examples() {
        assert!(bce_loss(&[1.0; 4], &[1.0; 4]).unwrap().0 < 1e-6);
        let (l, g) = bce_loss(&[1.0], &[0.5]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((g[0] + 2.0).abs() < 1e-12);
        assert!(bce_loss(&[1.0], &[0.5, 0.5]).is_err());
        assert!(bce_loss(&[1.0], &[1.5]).is_err());
    }

    #[test]
    fn widening() {
        let mut t = vec![0.0; 11];
        t[5] = 1.0;
        let w = widen_targets(&t, &[0.5, 0.25]).unwrap();
        assert_eq!(
            w,
            vec![0.0, 0.0, 0.0, 0.25, 0.5, 1.0, 0.5, 0.25, 0.0, 0.0, 0.0]
        );
        assert_eq!(
            widen_targets(&[0.0; 5], &[0.5, 0.25]).unwrap(),
            vec![0.0; 5]
        );
        t[7] = 1.0;
        let w = widen_targets(&t, &[0.5, 0.25]).unwrap();
        assert_eq!(w[6], 0.5);
        assert_eq!(w[5], 1.0);
        assert!(widen_targets(&[0.5], &[0.5]).is_err());
        assert!(widen_targets(&[1.0], &[0.25, 0.5]).is_err());
    }

    #[test]
    fn pooling_truncates_and_breaks_ties_left() {
        let (v, a) = max_pool(&[1.0, 0.0, 1.0, 0.0, 0.0], 3);
        assert_eq!(v, vec![1.0, 1.0, 1.0, 1.0, 0.0]);
        assert_eq!(a, vec![0, 0, 2, 2, 3]);
    }

    #[test]
    fn shift_within_pool_is_free() {
        let cfg = LossConfig::with_positive_weight(3.0);
        let mut y = vec![0.0; 40];
        y[20] = 1.0;
        let spike = |at: usize| {
            let mut p = vec![0.0; 40];
            p[at] = 1.0;
            p
        };
        let (at, _) = shift_tolerant_bce(&y, &spike(20), &cfg).unwrap();
        for s in [17, 18, 19, 21, 22, 23] {
            assert_eq!(shift_tolerant_bce(&y, &spike(s), &cfg).unwrap().0, at);
        }
        assert!(shift_tolerant_bce(&y, &spike(26), &cfg).unwrap().0 > at + 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        assert!(LossConfig::with_positive_weight(0.0).validate().is_err());
        let c = LossConfig {
            pred_pool_width: 6,
            ..LossConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn positive_weight() {
        let mut t = vec![0.0; 100];
        t[3] = 1.0;
        assert_eq!(positive_weight_from_targets(&[t]).unwrap(), 99.0);
        assert_eq!(positive_weight_from_targets(&[vec![1.0; 5]]).unwrap(), 0.0);
        assert_eq!(
            positive_weight_from_targets(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
            1.0
        );
        assert!(positive_weight_from_targets(&[vec![0.0; 5]]).is_err());
    }

    #[test]
    fn combined() {
        assert!(combined_meter_loss(&[], &[], &[], &[]).unwrap() == 0.0);
        assert!(combined_meter_loss(&[1.0], &[1.0], &[0.0], &[0.0]).unwrap() < 1e-6);
        assert!(combined_meter_loss(&[1.0], &[1.0], &[0.0], &[0.0, 0.0]).is_err());
    }
}
