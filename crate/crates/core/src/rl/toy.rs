//! A linear softmax policy small enough for finite-difference gradient checks.

use rand::RngCore;

use super::advantage::{advantages, AdvantageMode};
use super::group::PreparedGroup;
use super::loss::{grpo_loss, ClipConfig, LossReport, TokenBatch};
use super::RlError;
use crate::scalar::Scalar;
use crate::seeds;

pub const MAX_TOY_PARAMS: usize = 100;
pub const FD_STEP: f64 = 1e-5;

/// `logits = W x + b`, parameters laid out as `W` row-major by action, then `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy<T> {
    n_features: usize,
    n_actions: usize,
    pub params: Vec<T>,
}

impl<T: Scalar> SoftmaxPolicy<T> {
    pub fn new(n_features: usize, n_actions: usize, params: Vec<T>) -> Result<Self, RlError> {
        let n = (n_features + 1) * n_actions;
        if n_actions < 2 || params.len() != n || n > MAX_TOY_PARAMS {
            return Err(RlError::ToyShape(n_features, n_actions, params.len()));
        }
        Ok(SoftmaxPolicy {
            n_features,
            n_actions,
            params,
        })
    }

    pub fn random(seed: u64, n_features: usize, n_actions: usize) -> Result<Self, RlError> {
        let mut rng = seeds::rng(seed);
        let n = (n_features + 1) * n_actions;
        let params = (0..n).map(|_| T::lit(seeds::uniform(&mut rng) - 0.5)).collect();
        Self::new(n_features, n_actions, params)
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn log_probs(&self, x: &[T]) -> Vec<T> {
        let bias = self.n_actions * self.n_features;
        let logits: Vec<T> = (0..self.n_actions)
            .map(|a| {
                let row = &self.params[a * self.n_features..(a + 1) * self.n_features];
                row.iter().zip(x).map(|(w, v)| *w * *v).sum::<T>() + self.params[bias + a]
            })
            .collect();
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + logits.iter().map(|l| (*l - max).exp()).sum::<T>().ln();
        logits.into_iter().map(|l| l - lse).collect()
    }

    pub fn logp(&self, x: &[T], action: usize) -> T {
        self.log_probs(x)[action]
    }

    /// `d logp(action | x) / d params`.
    pub fn grad_logp(&self, x: &[T], action: usize) -> Vec<T> {
        let probs: Vec<T> = self.log_probs(x).into_iter().map(T::exp).collect();
        let mut g = vec![T::zero(); self.params.len()];
        let bias = self.n_actions * self.n_features;
        for a in 0..self.n_actions {
            let coef = if a == action { T::one() } else { T::zero() } - probs[a];
            for f in 0..self.n_features {
                g[a * self.n_features + f] = coef * x[f];
            }
            g[bias + a] = coef;
        }
        g
    }

    pub fn sample(&self, x: &[T], rng: &mut impl RngCore) -> usize {
        let u = T::lit(seeds::uniform(rng));
        let mut acc = T::zero();
        for (a, lp) in self.log_probs(x).into_iter().enumerate() {
            acc = acc + lp.exp();
            if u < acc {
                return a;
            }
        }
        self.n_actions - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTrajectory<T> {
    pub features: Vec<Vec<T>>,
    pub actions: Vec<usize>,
    pub mask: Vec<bool>,
    pub logp_old: Vec<T>,
    pub advantage: T,
}

pub type ToyGroup<T> = Vec<ToyTrajectory<T>>;

/// Seeded groups of trajectories sampled from `policy`, with binary rewards
/// and advantages from `mode`. Every fourth token is masked out as an
/// observation token; `logp_old` is the sampling policy's.
pub fn sample_groups<T: Scalar>(
    policy: &SoftmaxPolicy<T>,
    seed: u64,
    n_groups: usize,
    group_size: usize,
    tokens: usize,
    mode: AdvantageMode,
) -> Result<Vec<ToyGroup<T>>, RlError> {
    let mut rng = seeds::rng(seed);
    let mut groups = Vec::with_capacity(n_groups);
    for _ in 0..n_groups {
        let mut trajs = Vec::with_capacity(group_size);
        let mut rewards = Vec::with_capacity(group_size);
        for _ in 0..group_size {
            let features: Vec<Vec<T>> = (0..tokens)
                .map(|_| (0..policy.n_features).map(|_| T::lit(seeds::uniform(&mut rng) * 2.0 - 1.0)).collect())
                .collect();
            let actions: Vec<usize> = features.iter().map(|x| policy.sample(x, &mut rng)).collect();
            let logp_old = features.iter().zip(&actions).map(|(x, a)| policy.logp(x, *a)).collect();
            let mask = (0..tokens).map(|j| j % 4 != 3).collect();
            rewards.push(if seeds::uniform(&mut rng) < 0.5 { T::one() } else { T::zero() });
            trajs.push(ToyTrajectory {
                features,
                actions,
                mask,
                logp_old,
                advantage: T::zero(),
            });
        }
        for (t, a) in trajs.iter_mut().zip(advantages(&rewards, mode)?) {
            t.advantage = a;
        }
        groups.push(trajs);
    }
    Ok(groups)
}

fn prepared<T: Scalar>(policy: &SoftmaxPolicy<T>, groups: &[ToyGroup<T>]) -> Vec<PreparedGroup<T>> {
    groups
        .iter()
        .map(|g| PreparedGroup {
            samples: g
                .iter()
                .map(|t| {
                    let logp_new = t.features.iter().zip(&t.actions).map(|(x, a)| policy.logp(x, *a)).collect();
                    let batch = TokenBatch {
                        logp_new,
                        logp_old: t.logp_old.clone(),
                        loss_mask: t.mask.clone(),
                    };
                    (batch, t.advantage)
                })
                .collect(),
        })
        .collect()
}

/// Loss and its analytic gradient with respect to the policy parameters.
pub fn toy_loss<T: Scalar>(
    policy: &SoftmaxPolicy<T>,
    groups: &[ToyGroup<T>],
    clip: &ClipConfig<T>,
) -> Result<(LossReport<T>, Vec<T>), RlError> {
    let report = grpo_loss(&prepared(policy, groups), clip)?;
    let mut grad = vec![T::zero(); policy.params.len()];
    for (g, group) in groups.iter().enumerate() {
        for (i, t) in group.iter().enumerate() {
            for (j, (x, a)) in t.features.iter().zip(&t.actions).enumerate() {
                let d = report.grad_logp[g][i][j];
                if d != T::zero() {
                    for (acc, v) in grad.iter_mut().zip(policy.grad_logp(x, *a)) {
                        *acc = *acc + d * v;
                    }
                }
            }
        }
    }
    Ok((report, grad))
}

/// `-(1/#groups) * sum_g (1 / tokens_g) * sum_{i,j masked} A_i * grad logp`.
pub fn reinforce_gradient<T: Scalar>(policy: &SoftmaxPolicy<T>, groups: &[ToyGroup<T>]) -> Vec<T> {
    let mut grad = vec![T::zero(); policy.params.len()];
    let n_groups = T::from_count(groups.len());
    for group in groups {
        let denom = T::from_count(group.iter().map(|t| t.mask.iter().filter(|m| **m).count()).sum());
        for t in group {
            for ((x, a), m) in t.features.iter().zip(&t.actions).zip(&t.mask) {
                if *m {
                    for (acc, v) in grad.iter_mut().zip(policy.grad_logp(x, *a)) {
                        *acc = *acc - t.advantage * v / (denom * n_groups);
                    }
                }
            }
        }
    }
    grad
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Max over parameters of `|a - n| / max(|a|, |n|, 1e-6)`.
    pub max_relative_deviation: f64,
}

/// Compares the analytic loss gradient with central differences of step
/// [`FD_STEP`].
pub fn toy_policy_grad_check<T: Scalar>(
    policy: &SoftmaxPolicy<T>,
    groups: &[ToyGroup<T>],
    clip: &ClipConfig<T>,
) -> Result<GradCheck, RlError> {
    let (_, analytic) = toy_loss(policy, groups, clip)?;
    let h = T::lit(FD_STEP);
    let mut numeric = Vec::with_capacity(policy.params.len());
    for k in 0..policy.params.len() {
        let mut plus = policy.clone();
        plus.params[k] = plus.params[k] + h;
        let mut minus = policy.clone();
        minus.params[k] = minus.params[k] - h;
        let lp = grpo_loss(&prepared(&plus, groups), clip)?.loss;
        let lm = grpo_loss(&prepared(&minus, groups), clip)?.loss;
        numeric.push(((lp - lm) / (h + h)).as_f64());
    }
    let analytic: Vec<f64> = analytic.into_iter().map(|v| v.as_f64()).collect();
    let max_relative_deviation = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max);
    Ok(GradCheck {
        analytic,
        numeric,
        max_relative_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn setup(seed: u64) -> (SoftmaxPolicy<f64>, Vec<ToyGroup<f64>>) {
        let p = SoftmaxPolicy::random(seed, 4, 3).unwrap();
        let g = sample_groups(&p, seed + 1, 2, 4, 5, AdvantageMode::LeaveOneOut).unwrap();
        (p, g)
    }

    #[test]
    fn shape_limits() {
        assert!(SoftmaxPolicy::<f64>::random(0, 30, 4).is_err());
        assert!(SoftmaxPolicy::<f64>::new(2, 3, vec![0.0; 5]).is_err());
        let p = SoftmaxPolicy::<f32>::random(0, 4, 3).unwrap();
        let total: f32 = p.log_probs(&[0.1, 0.2, 0.3, 0.4]).iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-5);
    }

    #[test]
    fn zero_advantages_give_zero_gradient() {
        let (p, mut g) = setup(3);
        g.iter_mut().flatten().for_each(|t| t.advantage = 0.0);
        let (_, grad) = toy_loss(&p, &g, &ClipConfig::default()).unwrap();
        assert!(grad.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_is_linear_in_advantage_on_policy() {
        let (p, g) = setup(5);
        let mut doubled = g.clone();
        doubled.iter_mut().flatten().for_each(|t| t.advantage *= 2.0);
        let (_, a) = toy_loss(&p, &g, &ClipConfig::default()).unwrap();
        let (_, b) = toy_loss(&p, &doubled, &ClipConfig::default()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_difference_agreement_off_policy() {
        let (p, mut g) = setup(9);
        let mut rng = seeds::rng(77);
        for t in g.iter_mut().flatten() {
            for lp in &mut t.logp_old {
                *lp += seeds::uniform(&mut rng) - 0.5;
            }
        }
        let check = toy_policy_grad_check(&p, &g, &ClipConfig::default()).unwrap();
        assert!(check.max_relative_deviation < 1e-4, "{check:?}");
        let (report, _) = toy_loss(&p, &g, &ClipConfig::default()).unwrap();
        assert!(report.clip_fraction > 0.0);
    }

    proptest! {
        #[test]
        fn on_policy_matches_reinforce(seed in 0u64..500) {
            let (p, g) = setup(seed);
            let (_, grad) = toy_loss(&p, &g, &ClipConfig::default()).unwrap();
            let reference = reinforce_gradient(&p, &g);
            for (a, b) in grad.iter().zip(&reference) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn clipped_terms_never_exceed_unclipped(
            logp in prop::collection::vec(-3.0f64..0.0, 1..16),
            shift in prop::collection::vec(-1.0f64..1.0, 16),
            adv in -2.0f64..2.0,
        ) {
            let old: Vec<f64> = logp.iter().zip(&shift).map(|(l, s)| l + s).collect();
            let batch = TokenBatch::new(logp.clone(), old.clone(), vec![true; logp.len()]).unwrap();
            let r = grpo_loss(&[PreparedGroup { samples: vec![(batch, adv)] }], &ClipConfig::default()).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.clip_fraction));
            for (j, term) in r.per_token_terms[0][0].iter().enumerate() {
                let unclipped = (logp[j] - old[j]).exp() * adv;
                prop_assert!(*term <= unclipped + 1e-15);
                if r.grad_logp[0][0][j] != 0.0 {
                    prop_assert!(term.abs() <= unclipped.abs() + 1e-15);
                }
            }
        }
    }
}
