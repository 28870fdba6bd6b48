use std::collections::BTreeSet;

use super::index::tokenize;

pub const VISIT_TOP_K: usize = 5;

/// Splits after '.', '!' or '?' when followed by whitespace. Sentences keep
/// their terminator; surrounding whitespace is dropped.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') && chars.peek().is_some_and(|(_, n)| n.is_whitespace()) {
            let end = i + c.len_utf8();
            let s = text[start..end].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = end;
        }
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest);
    }
    out
}

/// The `k` sentences with the most distinct goal terms, in document order.
/// Ties go to the earlier sentence, so a goal sharing nothing with the text
/// yields the first `k` sentences.
pub fn goal_extract(text: &str, goal: &str, k: usize) -> Vec<String> {
    let goal_terms: BTreeSet<String> = tokenize(goal).into_iter().collect();
    let sentences = split_sentences(text);
    let mut scored: Vec<(usize, usize)> = sentences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let terms: BTreeSet<String> = tokenize(s).into_iter().collect();
            (terms.intersection(&goal_terms).count(), i)
        })
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = scored.into_iter().take(k).map(|(_, i)| i).collect();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| sentences[i].to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segmentation() {
        assert_eq!(
            split_sentences("One. Two! Three? v1.2 stays. End"),
            ["One.", "Two!", "Three?", "v1.2 stays.", "End"]
        );
        assert!(split_sentences("   ").is_empty());
    }

    #[test]
    fn fallback_and_exact_goal() {
        let text = "A a. B b. C c. D d. E e. F f. G g.";
        assert_eq!(goal_extract(text, "zzz", 5), ["A a.", "B b.", "C c.", "D d.", "E e."]);
        assert!(goal_extract(text, "G g.", 5).contains(&"G g.".to_string()));
        assert_eq!(goal_extract("Only one.", "x", 5).len(), 1);
    }
}
