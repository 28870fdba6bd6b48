use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardRecord {
    /// Exactly 0 or 1.
    pub reward: u8,
    pub judged_answer: String,
    pub gold: String,
}

impl RewardRecord {
    pub fn is_correct(&self) -> bool {
        self.reward == 1
    }
}

/// Answer grader. The default is normalized exact match; model-based graders
/// plug in behind the same trait.
pub trait Judge: Send + Sync {
    fn judge(&self, answer: &str, gold: &str) -> RewardRecord;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatchJudge;

impl Judge for ExactMatchJudge {
    fn judge(&self, answer: &str, gold: &str) -> RewardRecord {
        judge(answer, gold)
    }
}

fn trim_punct(s: &str) -> &str {
    s.trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation())
}

/// Lowercase, drop surrounding punctuation and a leading article, collapse
/// inner whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let mut t = trim_punct(&lower);
    for article in ["the", "an", "a"] {
        if let Some(rest) = t.strip_prefix(article) {
            if rest.starts_with(char::is_whitespace) {
                t = trim_punct(rest);
                break;
            }
        }
    }
    t.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn judge(answer: &str, gold: &str) -> RewardRecord {
    RewardRecord {
        reward: u8::from(normalize_answer(answer) == normalize_answer(gold)),
        judged_answer: answer.to_string(),
        gold: gold.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_examples() {
        assert_eq!(judge("The  Eiffel Tower", "eiffel tower").reward, 1);
        assert_eq!(judge("Paris", "London").reward, 0);
        assert_eq!(judge("12th Cavalry Regiment", "12th Cavalry Regiment").reward, 1);
        assert_eq!(judge("  \"Bokami.\" ", "bokami").reward, 1);
        assert_eq!(judge("an apple", "Apple!").reward, 1);
        assert_eq!(judge("Theo", "o").reward, 0);
        assert_eq!(judge("", "x").reward, 0);
    }
}
