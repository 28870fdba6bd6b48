use serde::{Deserialize, Serialize};

use super::group::PreparedGroup;
use super::RlError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenBatch<T> {
    pub logp_new: Vec<T>,
    pub logp_old: Vec<T>,
    /// True on policy-generated tokens only.
    pub loss_mask: Vec<bool>,
}

impl<T: Scalar> TokenBatch<T> {
    pub fn new(logp_new: Vec<T>, logp_old: Vec<T>, loss_mask: Vec<bool>) -> Result<Self, RlError> {
        if logp_new.len() != logp_old.len() || logp_new.len() != loss_mask.len() {
            return Err(RlError::LengthMismatch);
        }
        Ok(TokenBatch {
            logp_new,
            logp_old,
            loss_mask,
        })
    }

    pub fn on_policy(logp: Vec<T>, loss_mask: Vec<bool>) -> Self {
        TokenBatch {
            logp_old: logp.clone(),
            logp_new: logp,
            loss_mask,
        }
    }

    pub fn masked_len(&self) -> usize {
        self.loss_mask.iter().filter(|m| **m).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig<T> {
    pub eps_low: T,
    pub eps_high: T,
}

impl<T: Scalar> Default for ClipConfig<T> {
    fn default() -> Self {
        ClipConfig {
            eps_low: T::lit(0.2),
            eps_high: T::lit(0.28),
        }
    }
}

impl<T: Scalar> ClipConfig<T> {
    pub fn new(eps_low: T, eps_high: T) -> Result<Self, RlError> {
        if !(T::zero() < eps_low && eps_low <= eps_high && eps_high < T::one()) {
            return Err(RlError::InvalidClip(eps_low.as_f64(), eps_high.as_f64()));
        }
        Ok(ClipConfig { eps_low, eps_high })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport<T> {
    pub loss: T,
    /// `[group][sample][token]`, zero on masked-out tokens.
    pub per_token_terms: Vec<Vec<Vec<T>>>,
    /// `d loss / d logp_new`, same layout as `per_token_terms`.
    pub grad_logp: Vec<Vec<Vec<T>>>,
    pub clip_fraction: T,
}

/// Token-level clipped surrogate. Each group's objective is its summed token
/// terms over its masked token count; the loss is minus the mean over groups.
pub fn grpo_loss<T: Scalar>(groups: &[PreparedGroup<T>], clip: &ClipConfig<T>) -> Result<LossReport<T>, RlError> {
    if groups.is_empty() {
        return Err(RlError::EmptyBatch);
    }
    let lo = T::one() - clip.eps_low;
    let hi = T::one() + clip.eps_high;
    let n_groups = T::from_count(groups.len());
    let mut objective = T::zero();
    let mut clipped = 0usize;
    let mut masked_total = 0usize;
    let mut terms = Vec::with_capacity(groups.len());
    let mut grads = Vec::with_capacity(groups.len());
    for (gi, g) in groups.iter().enumerate() {
        let denom: usize = g.samples.iter().map(|(b, _)| b.masked_len()).sum();
        if denom == 0 {
            return Err(RlError::EmptyMask(gi));
        }
        let denom_t = T::from_count(denom);
        masked_total += denom;
        let mut group_sum = T::zero();
        let mut g_terms = Vec::with_capacity(g.samples.len());
        let mut g_grads = Vec::with_capacity(g.samples.len());
        for (batch, adv) in &g.samples {
            let adv = *adv;
            let n = batch.loss_mask.len();
            let mut s_terms = vec![T::zero(); n];
            let mut s_grads = vec![T::zero(); n];
            for j in (0..n).filter(|&j| batch.loss_mask[j]) {
                let r = (batch.logp_new[j] - batch.logp_old[j]).exp();
                let unclipped = r * adv;
                let clipped_val = r.max(lo).min(hi) * adv;
                if clipped_val < unclipped {
                    clipped += 1;
                    s_terms[j] = clipped_val;
                } else {
                    s_terms[j] = unclipped;
                    s_grads[j] = -unclipped / (denom_t * n_groups);
                }
                group_sum = group_sum + s_terms[j];
            }
            g_terms.push(s_terms);
            g_grads.push(s_grads);
        }
        objective = objective + group_sum / denom_t;
        terms.push(g_terms);
        grads.push(g_grads);
    }
    Ok(LossReport {
        loss: -(objective / n_groups),
        per_token_terms: terms,
        grad_logp: grads,
        clip_fraction: T::from_count(clipped) / T::from_count(masked_total),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(logp_new: f64, logp_old: f64, adv: f64) -> Vec<PreparedGroup<f64>> {
        vec![PreparedGroup {
            samples: vec![(TokenBatch::new(vec![logp_new], vec![logp_old], vec![true]).unwrap(), adv)],
        }]
    }

    #[test]
    fn clip_arithmetic() {
        let clip = ClipConfig::default();
        let up = grpo_loss(&single(1.5f64.ln(), 0.0, 1.0), &clip).unwrap();
        assert!((up.per_token_terms[0][0][0] - 1.28).abs() < 1e-12);
        assert_eq!(up.clip_fraction, 1.0);
        assert_eq!(up.grad_logp[0][0][0], 0.0);
        let down = grpo_loss(&single(0.5f64.ln(), 0.0, -1.0), &clip).unwrap();
        assert!((down.per_token_terms[0][0][0] + 0.8).abs() < 1e-12);
    }

    #[test]
    fn on_policy_reduction() {
        let batch = |mask: Vec<bool>| TokenBatch::on_policy(vec![-0.7f64; mask.len()], mask);
        let groups = vec![PreparedGroup {
            samples: vec![
                (batch(vec![true, true, false]), 0.5),
                (batch(vec![true, false, false, true]), -0.5),
                (batch(vec![true]), 1.0),
            ],
        }];
        let r = grpo_loss(&groups, &ClipConfig::default()).unwrap();
        let expected: f64 = -(0.5 * 2.0 - 0.5 * 2.0 + 1.0) / 5.0;
        assert!((r.loss - expected).abs() < 1e-12);
        assert_eq!(r.clip_fraction, 0.0);
        assert_eq!(r.per_token_terms[0][0][2], 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        let empty = vec![PreparedGroup {
            samples: vec![(TokenBatch::on_policy(vec![0.0f64], vec![false]), 1.0)],
        }];
        assert!(matches!(grpo_loss(&empty, &ClipConfig::default()), Err(RlError::EmptyMask(0))));
        assert!(TokenBatch::new(vec![0.0f64], vec![], vec![true]).is_err());
        assert!(ClipConfig::new(0.3f64, 0.2).is_err());
        assert!(ClipConfig::new(0.0f64, 0.2).is_err());
        assert!(ClipConfig::new(0.2f32, 0.28).is_ok());
    }
}
