use serde::{Deserialize, Serialize};

use super::RlError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageMode {
    /// Baseline is the mean of the other group members.
    #[default]
    LeaveOneOut,
    /// Baseline is the group mean, including the sample itself.
    Mean,
}

fn check_group<T>(rewards: &[T]) -> Result<(), RlError> {
    if rewards.len() < 2 {
        return Err(RlError::GroupTooSmall(rewards.len()));
    }
    Ok(())
}

/// `R_i - mean(R)`.
pub fn mean_advantages<T: Scalar>(rewards: &[T]) -> Result<Vec<T>, RlError> {
    check_group(rewards)?;
    let mean = rewards.iter().copied().sum::<T>() / T::from_count(rewards.len());
    Ok(rewards.iter().map(|&r| r - mean).collect())
}

/// `R_i - mean_{k != i}(R_k)`.
pub fn loo_advantages<T: Scalar>(rewards: &[T]) -> Result<Vec<T>, RlError> {
    check_group(rewards)?;
    let total = rewards.iter().copied().sum::<T>();
    let others = T::from_count(rewards.len() - 1);
    Ok(rewards.iter().map(|&r| r - (total - r) / others).collect())
}

pub fn advantages<T: Scalar>(rewards: &[T], mode: AdvantageMode) -> Result<Vec<T>, RlError> {
    match mode {
        AdvantageMode::LeaveOneOut => loo_advantages(rewards),
        AdvantageMode::Mean => mean_advantages(rewards),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_examples() {
        assert_eq!(mean_advantages(&[1.0, 0.0, 0.0, 1.0]).unwrap(), [0.5, -0.5, -0.5, 0.5]);
        assert_eq!(mean_advantages(&[1.0, 1.0, 1.0]).unwrap(), [0.0; 3]);
        assert_eq!(mean_advantages(&[1.0, 0.0]).unwrap(), [0.5, -0.5]);
        assert_eq!(loo_advantages(&[1.0, 0.0]).unwrap(), [1.0, -1.0]);
        assert_eq!(loo_advantages(&[1.0f32; 4]).unwrap(), [0.0; 4]);
        assert!(matches!(loo_advantages(&[1.0]), Err(RlError::GroupTooSmall(1))));
        assert!(mean_advantages::<f64>(&[]).is_err());
    }

    proptest! {
        #[test]
        fn mean_advantages_sum_to_zero(r in prop::collection::vec(0.0f64..=1.0, 2..64)) {
            let s: f64 = mean_advantages(&r).unwrap().iter().sum();
            prop_assert!(s.abs() <= 1e-12);
        }

        #[test]
        fn loo_is_scaled_mean(r in prop::collection::vec(prop::bool::ANY.prop_map(|b| b as u8 as f64), 2..=64)) {
            let g = r.len() as f64;
            let mean = mean_advantages(&r).unwrap();
            let loo = loo_advantages(&r).unwrap();
            for (l, m) in loo.iter().zip(&mean) {
                prop_assert!((l - g / (g - 1.0) * m).abs() <= 1e-12);
            }
        }

        #[test]
        fn baseline_invariance(r in prop::collection::vec(0.0f64..=1.0, 2..32), c in -10.0f64..10.0) {
            let shifted: Vec<f64> = r.iter().map(|x| x + c).collect();
            for mode in [AdvantageMode::Mean, AdvantageMode::LeaveOneOut] {
                let a = advantages(&r, mode).unwrap();
                let b = advantages(&shifted, mode).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() <= 1e-9);
                }
            }
        }
    }
}
