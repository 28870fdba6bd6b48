use serde::{Deserialize, Serialize};

use super::advantage::{advantages, AdvantageMode};
use super::loss::TokenBatch;
use super::RlError;
use crate::agent::Termination;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSample<T> {
    pub tokens: TokenBatch<T>,
    pub reward: T,
    pub termination: Termination,
    #[serde(default)]
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup<T> {
    pub question: String,
    pub samples: Vec<GroupSample<T>>,
}

impl<T: Scalar> RolloutGroup<T> {
    pub fn survivors(&self) -> impl Iterator<Item = &GroupSample<T>> {
        self.samples.iter().filter(|s| !s.excluded)
    }
}

/// Marks zero-reward samples that ended by step or context limit as excluded
/// from both the loss and the baseline. Returns `None` when fewer than two
/// samples survive.
pub fn filter_group<T: Scalar>(mut group: RolloutGroup<T>) -> Option<RolloutGroup<T>> {
    for s in &mut group.samples {
        if s.reward == T::zero() && s.termination.is_truncation() {
            s.excluded = true;
        }
    }
    (group.survivors().count() >= 2).then_some(group)
}

/// Survivors with their advantage, ready for the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedGroup<T> {
    pub samples: Vec<(TokenBatch<T>, T)>,
}

pub fn prepare_group<T: Scalar>(group: &RolloutGroup<T>, mode: AdvantageMode) -> Result<PreparedGroup<T>, RlError> {
    let kept: Vec<&GroupSample<T>> = group.survivors().collect();
    let rewards: Vec<T> = kept.iter().map(|s| s.reward).collect();
    let adv = advantages(&rewards, mode)?;
    Ok(PreparedGroup {
        samples: kept.into_iter().zip(adv).map(|(s, a)| (s.tokens.clone(), a)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(reward: f64, termination: Termination) -> GroupSample<f64> {
        GroupSample {
            tokens: TokenBatch::on_policy(vec![-1.0], vec![true]),
            reward,
            termination,
            excluded: false,
        }
    }

    fn group(s: Vec<GroupSample<f64>>) -> RolloutGroup<f64> {
        RolloutGroup {
            question: "q".into(),
            samples: s,
        }
    }

    #[test]
    fn exclusion_rules() {
        use Termination::*;
        let g = filter_group(group(vec![
            sample(1.0, Answered),
            sample(0.0, StepLimit),
            sample(0.0, Answered),
            sample(0.0, ParseFailureLimit),
        ]))
        .unwrap();
        assert_eq!(g.survivors().count(), 3);

        let all = group(vec![sample(1.0, Answered), sample(0.0, Answered)]);
        assert_eq!(filter_group(all.clone()).unwrap(), all);

        let mostly_cut = group(vec![
            sample(1.0, Answered),
            sample(0.0, StepLimit),
            sample(0.0, ContextLimit),
            sample(0.0, StepLimit),
        ]);
        assert!(filter_group(mostly_cut).is_none());
    }

    #[test]
    fn excluded_samples_leave_the_baseline() {
        use Termination::*;
        let g = filter_group(group(vec![
            sample(1.0, Answered),
            sample(0.0, Answered),
            sample(0.0, ContextLimit),
        ]))
        .unwrap();
        let p = prepare_group(&g, AdvantageMode::LeaveOneOut).unwrap();
        let adv: Vec<f64> = p.samples.iter().map(|s| s.1).collect();
        assert_eq!(adv, [1.0, -1.0]);
    }

    #[test]
    fn reward_one_is_never_excluded() {
        for t in [
            Termination::Answered,
            Termination::StepLimit,
            Termination::ContextLimit,
            Termination::ParseFailureLimit,
            Termination::PolicyError,
        ] {
            let g = filter_group(group(vec![sample(1.0, t), sample(1.0, t)])).unwrap();
            assert_eq!(g.survivors().count(), 2);
        }
    }
}
