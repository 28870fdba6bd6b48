use serde::{Deserialize, Serialize};

use super::graph::{EntityGraph, Relation, ATTRIBUTE_KEYS, LABELS};
use super::SynthError;

/// How a question refers to its starting entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorRef {
    Name(String),
    Attributes(Vec<(String, String)>),
}

impl AnchorRef {
    pub fn describe(&self) -> String {
        match self {
            AnchorRef::Name(n) => n.clone(),
            AnchorRef::Attributes(pairs) => {
                let parts: Vec<String> = pairs.iter().map(|(k, v)| format!("whose {k} is {v}")).collect();
                format!("the entity {}", parts.join(" and "))
            }
        }
    }

    /// Entities this reference could denote.
    pub fn candidates(&self, graph: &EntityGraph) -> Vec<usize> {
        match self {
            AnchorRef::Name(n) => graph.by_name(n).into_iter().collect(),
            AnchorRef::Attributes(pairs) => graph.matching(pairs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QATask {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub hops: usize,
    pub support_path: Vec<Relation>,
    pub obfuscation_level: u32,
    /// Set when obfuscation was requested but no unique description exists.
    #[serde(default)]
    pub obfuscation_refused: bool,
    /// Set when the walk ended before the requested length.
    #[serde(default)]
    pub dead_end: bool,
}

/// Structured reading of a templated question.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedQuestion {
    pub anchor: AnchorRef,
    /// Relation labels in hop order.
    pub labels: Vec<String>,
}

fn ask_form(label: &str) -> Option<&'static str> {
    LABELS.iter().find(|(l, _)| *l == label).map(|(_, f)| *f)
}

pub fn render_question(anchor: &AnchorRef, labels: &[String]) -> Result<String, SynthError> {
    let (last, inner_labels) = labels.split_last().ok_or(SynthError::EmptyPath)?;
    let mut desc = anchor.describe();
    for l in inner_labels {
        ask_form(l).ok_or_else(|| SynthError::UnknownLabel(l.clone()))?;
        desc = format!("the entity that {desc} {l}");
    }
    let form = ask_form(last).ok_or_else(|| SynthError::UnknownLabel(last.clone()))?;
    Ok(format!("What {}?", form.replace("{}", &desc)))
}

fn parse_description(desc: &str, labels: &mut Vec<String>) -> Option<AnchorRef> {
    if let Some(rest) = desc.strip_prefix("the entity that ") {
        let (inner, label) = LABELS
            .iter()
            .find_map(|(l, _)| rest.strip_suffix(&format!(" {l}")).map(|inner| (inner, *l)))?;
        let anchor = parse_description(inner, labels)?;
        labels.push(label.to_string());
        return Some(anchor);
    }
    if let Some(rest) = desc.strip_prefix("the entity ") {
        let pairs = rest
            .split(" and ")
            .map(|part| {
                let kv = part.strip_prefix("whose ")?;
                let (k, v) = kv.split_once(" is ")?;
                Some((k.to_string(), v.to_string()))
            })
            .collect::<Option<Vec<_>>>()?;
        return Some(AnchorRef::Attributes(pairs));
    }
    (!desc.is_empty() && !desc.contains(' ')).then(|| AnchorRef::Name(desc.to_string()))
}

/// Inverse of [`render_question`].
pub fn parse_question(question: &str) -> Option<ParsedQuestion> {
    let body = question.trim().strip_prefix("What ")?.strip_suffix('?')?;
    for (label, form) in LABELS {
        let (pre, post) = form.split_once("{}").expect("form has a slot");
        let Some(desc) = body.strip_prefix(pre).and_then(|b| b.strip_suffix(post)) else {
            continue;
        };
        let mut labels = Vec::new();
        if let Some(anchor) = parse_description(desc, &mut labels) {
            labels.push(label.to_string());
            return Some(ParsedQuestion { anchor, labels });
        }
    }
    None
}

/// Smallest attribute conjunction (keys in fixed order) matching only `entity`.
pub fn unique_description(graph: &EntityGraph, entity: usize) -> Option<Vec<(String, String)>> {
    let attrs = &graph.entities[entity].attributes;
    let n = ATTRIBUTE_KEYS.len();
    let mut subsets: Vec<u32> = (1..(1u32 << n)).collect();
    subsets.sort_by_key(|m| (m.count_ones(), m.reverse_bits()));
    subsets.into_iter().find_map(|mask| {
        let pairs: Vec<(String, String)> = (0..n)
            .filter(|b| mask & (1 << b) != 0)
            .filter_map(|b| attrs.get(ATTRIBUTE_KEYS[b]).map(|v| (ATTRIBUTE_KEYS[b].to_string(), v.clone())))
            .collect();
        (pairs.len() == mask.count_ones() as usize && graph.matching(&pairs) == [entity]).then_some(pairs)
    })
}

/// Builds the task for a path. Levels above zero replace the anchor's name
/// with a uniquely identifying attribute description; when none exists the
/// task is emitted at level 0 with `obfuscation_refused` set.
pub fn compose_question(
    graph: &EntityGraph,
    path: &[Relation],
    obfuscation_level: u32,
) -> Result<QATask, SynthError> {
    let first = path.first().ok_or(SynthError::EmptyPath)?;
    for (i, r) in path.iter().enumerate() {
        if !graph.relations.contains(r) || (i > 0 && path[i - 1].dst != r.src) {
            return Err(SynthError::InvalidPath);
        }
    }
    let anchor_idx = first.src;
    let name = AnchorRef::Name(graph.entities[anchor_idx].name.clone());
    let (anchor, level, refused) = if obfuscation_level == 0 {
        (name, 0, false)
    } else {
        match unique_description(graph, anchor_idx) {
            Some(pairs) => (AnchorRef::Attributes(pairs), obfuscation_level, false),
            None => (name, 0, true),
        }
    };
    let labels: Vec<String> = path.iter().map(|r| r.label.clone()).collect();
    let terminal = path.last().expect("non-empty").dst;
    Ok(QATask {
        id: String::new(),
        question: render_question(&anchor, &labels)?,
        answer: graph.entities[terminal].name.clone(),
        hops: path.len(),
        support_path: path.to_vec(),
        obfuscation_level: level,
        obfuscation_refused: refused,
        dead_end: false,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verification {
    pub unique_answer: bool,
    pub resolved: String,
}

/// Resolves every entity matching the anchor and follows the relation chain
/// from each. Unique iff there is at least one candidate and all traversals
/// succeed and end at the same entity.
pub fn verify_task(task: &QATask, graph: &EntityGraph) -> Verification {
    let fail = Verification {
        unique_answer: false,
        resolved: String::new(),
    };
    let Some(parsed) = parse_question(&task.question) else {
        return fail;
    };
    let mut ends = Vec::new();
    for start in parsed.anchor.candidates(graph) {
        let end = parsed
            .labels
            .iter()
            .try_fold(start, |at, label| graph.follow(at, label));
        match end {
            Some(e) => ends.push(e),
            None => return fail,
        }
    }
    ends.sort_unstable();
    ends.dedup();
    match ends.as_slice() {
        [only] => Verification {
            unique_answer: true,
            resolved: graph.entities[*only].name.clone(),
        },
        _ => fail,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::graph::{generate_graph, Entity};
    use std::collections::BTreeMap;

    fn tiny() -> EntityGraph {
        let ent = |i: usize, name: &str, color: &str| Entity {
            id: format!("e{i}"),
            name: name.into(),
            attributes: BTreeMap::from([("color".to_string(), color.to_string())]),
        };
        EntityGraph {
            entities: vec![ent(0, "Ana", "red"), ent(1, "Bo", "blue"), ent(2, "Cy", "blue")],
            relations: vec![
                Relation { src: 0, label: "owns".into(), dst: 1 },
                Relation { src: 1, label: "funds".into(), dst: 2 },
                Relation { src: 2, label: "funds".into(), dst: 0 },
            ],
        }
    }

    #[test]
    fn level_zero_template() {
        let g = tiny();
        let t = compose_question(&g, &g.relations[..1], 0).unwrap();
        assert_eq!(t.question, "What does Ana own?");
        assert_eq!(t.answer, "Bo");
        assert_eq!(verify_task(&t, &g), Verification { unique_answer: true, resolved: "Bo".into() });
    }

    #[test]
    fn level_one_substitution() {
        let g = tiny();
        let t = compose_question(&g, &g.relations[..2], 1).unwrap();
        assert_eq!(t.question, "What does the entity that the entity whose color is red owns fund?");
        assert_eq!(t.answer, "Cy");
        assert!(verify_task(&t, &g).unique_answer);
        let p = parse_question(&t.question).unwrap();
        assert_eq!(p.labels, ["owns", "funds"]);
    }

    #[test]
    fn refusal_and_ambiguity() {
        let g = tiny();
        let t = compose_question(&g, &g.relations[1..2], 1).unwrap();
        assert!(t.obfuscation_refused);
        assert_eq!((t.obfuscation_level, t.question.as_str()), (0, "What does Bo fund?"));

        let mut ambiguous = t.clone();
        ambiguous.question = "What does the entity whose color is blue fund?".into();
        let v = verify_task(&ambiguous, &g);
        assert!(!v.unique_answer);
    }

    #[test]
    fn invalid_paths_are_rejected() {
        let g = tiny();
        assert!(compose_question(&g, &[], 0).is_err());
        let broken = [g.relations[0].clone(), g.relations[2].clone()];
        assert!(matches!(compose_question(&g, &broken, 0), Err(SynthError::InvalidPath)));
    }

    #[test]
    fn parse_inverts_render() {
        let g = generate_graph(4, 40, 8);
        for (i, r) in g.relations.iter().enumerate() {
            let t = compose_question(&g, std::slice::from_ref(r), (i % 2) as u32).unwrap();
            let p = parse_question(&t.question).unwrap();
            assert_eq!(render_question(&p.anchor, &p.labels).unwrap(), t.question);
        }
        assert!(parse_question("Who is Ana?").is_none());
    }
}
