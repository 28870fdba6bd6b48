//! A tabular policy over action templates.
//!
//! The policy keeps a small belief about the question (current entity, hops
//! resolved, last search hits) and picks one of [`Template::ALL`] from a
//! softmax over a per-state logit row. In ReAct mode the belief is rebuilt from
//! the message history; in CM mode it is carried in the report, so both modes
//! reach the same state after the same actions and observations.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agent::policy::{PolicyEndpoint, PolicyError, PolicyResponse, SamplingParams};
use crate::agent::{parse_action, prompt, Action, MessageList, Role, Step, Trajectory};
use crate::gateway::{SEARCH, VISIT};
use crate::seeds;
use crate::synth::{attribute_sentence, parse_question, AnchorRef, ParsedQuestion};

use super::TrainError;

const REPORT_PREFIX: &str = "belief: ";
const THOUGHT_PREFIX: &str = "Template ";
const NO_URL: &str = "sim://doc/none";
const UNKNOWN: &str = "unknown";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Template {
    SearchCurrent,
    VisitCurrent,
    AnswerCurrent,
    SearchQuestion,
    VisitFirstHit,
    AnswerFirstHit,
}

impl Template {
    pub const ALL: [Template; 6] = [
        Template::SearchCurrent,
        Template::VisitCurrent,
        Template::AnswerCurrent,
        Template::SearchQuestion,
        Template::VisitFirstHit,
        Template::AnswerFirstHit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Template::SearchCurrent => "search_current",
            Template::VisitCurrent => "visit_current",
            Template::AnswerCurrent => "answer_current",
            Template::SearchQuestion => "search_question",
            Template::VisitFirstHit => "visit_first_hit",
            Template::AnswerFirstHit => "answer_first_hit",
        }
    }

    pub fn index(self) -> usize {
        Template::ALL.iter().position(|t| *t == self).expect("listed")
    }

    /// Reads the template named at the start of a thought.
    pub fn from_thought(thought: &str) -> Option<Template> {
        let name = thought.strip_prefix(THOUGHT_PREFIX)?.split(['.', ' ', '\n']).next()?;
        Template::ALL.into_iter().find(|t| t.name() == name)
    }
}

pub const N_TEMPLATES: usize = Template::ALL.len();
const MAX_HOP_BUCKET: usize = 3;
pub const N_STATES: usize = 3 * (MAX_HOP_BUCKET + 1);
pub const N_PARAMS: usize = N_STATES * N_TEMPLATES;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// No page for the current entity is known yet.
    NeedHits,
    /// A page to read next is known.
    HaveHits,
    /// Every hop is resolved.
    Resolved,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Belief {
    pub current: Option<String>,
    pub current_url: Option<String>,
    pub hops_done: usize,
    pub hits: Vec<(String, String)>,
    pub rejected: Vec<String>,
}

fn parse_hits(observation: &str) -> Vec<(String, String)> {
    observation
        .lines()
        .filter_map(|line| {
            let (num, rest) = line.split_once(". [")?;
            num.parse::<usize>().ok()?;
            let (title, url) = rest.rsplit_once("](")?;
            Some((title.to_string(), url.strip_suffix(')')?.to_string()))
        })
        .collect()
}

struct VisitBlock<'a> {
    url: &'a str,
    title: &'a str,
    lines: Vec<&'a str>,
}

fn parse_visit(observation: &str) -> Vec<VisitBlock<'_>> {
    observation
        .split("\n=======\n")
        .filter_map(|block| {
            let mut lines = block.lines();
            let header = lines.next()?.strip_prefix("Relevant content from ")?.strip_suffix("):")?;
            let (url, title) = header.split_once(" (")?;
            Some(VisitBlock {
                url,
                title,
                lines: lines.filter_map(|l| l.strip_prefix("- ")).collect(),
            })
        })
        .collect()
}

impl Belief {
    pub fn initial(q: &ParsedQuestion) -> Self {
        Belief {
            current: match &q.anchor {
                AnchorRef::Name(n) => Some(n.clone()),
                AnchorRef::Attributes(_) => None,
            },
            ..Belief::default()
        }
    }

    fn candidate(&self) -> Option<&(String, String)> {
        self.hits.iter().find(|(_, url)| !self.rejected.contains(url))
    }

    pub fn phase(&self, q: &ParsedQuestion) -> Phase {
        match &self.current {
            Some(_) if self.hops_done >= q.labels.len() => Phase::Resolved,
            Some(_) if self.current_url.is_some() => Phase::HaveHits,
            None if self.candidate().is_some() => Phase::HaveHits,
            _ => Phase::NeedHits,
        }
    }

    pub fn state(&self, q: &ParsedQuestion) -> usize {
        let phase = match self.phase(q) {
            Phase::NeedHits => 0,
            Phase::HaveHits => 1,
            Phase::Resolved => 2,
        };
        phase * (MAX_HOP_BUCKET + 1) + self.hops_done.min(MAX_HOP_BUCKET)
    }

    /// Folds one action and its observation into the belief.
    pub fn update(&mut self, q: &ParsedQuestion, action: &Action, observation: &str) {
        let Action::ToolCall { tool_name, .. } = action else {
            return;
        };
        if tool_name == SEARCH {
            self.hits = parse_hits(observation);
            if let Some(c) = &self.current {
                if let Some((_, url)) = self.hits.iter().find(|(t, _)| t == c) {
                    self.current_url = Some(url.clone());
                }
            }
        } else if tool_name == VISIT {
            for block in parse_visit(observation) {
                self.absorb_page(q, &block);
            }
        }
    }

    fn absorb_page(&mut self, q: &ParsedQuestion, block: &VisitBlock<'_>) {
        if self.current.is_none() {
            let AnchorRef::Attributes(pairs) = &q.anchor else {
                return;
            };
            let matches = pairs
                .iter()
                .all(|(k, v)| block.lines.contains(&attribute_sentence(k, v).as_str()));
            if !matches {
                self.rejected.push(block.url.to_string());
                return;
            }
            self.current = Some(block.title.to_string());
            self.current_url = Some(block.url.to_string());
        }
        let Some(current) = self.current.clone() else {
            return;
        };
        let on_page = self.current_url.as_deref() == Some(block.url) || block.title == current;
        let Some(label) = q.labels.get(self.hops_done) else {
            return;
        };
        if !on_page {
            return;
        }
        let prefix = format!("{current} {label} ");
        let next = block
            .lines
            .iter()
            .find_map(|l| l.strip_prefix(&prefix)?.strip_suffix('.'));
        if let Some(next) = next {
            self.current = Some(next.to_string());
            self.current_url = None;
            self.hops_done += 1;
        }
    }

    fn to_report(&self) -> String {
        format!("{REPORT_PREFIX}{}", serde_json::to_string(self).expect("serializable"))
    }

    fn from_report(report: &str) -> Option<Belief> {
        serde_json::from_str(report.trim().strip_prefix(REPORT_PREFIX)?).ok()
    }

    /// Concrete action for a template in this belief.
    pub fn action(&self, q: &ParsedQuestion, question: &str, template: Template) -> Action {
        let first_hit = self.hits.first().map(|(t, u)| (t.as_str(), u.as_str()));
        let next_label = q.labels.get(self.hops_done).map_or("", String::as_str);
        match template {
            Template::SearchCurrent => {
                let query = match (&self.current, &q.anchor) {
                    (Some(c), _) => c.clone(),
                    (None, AnchorRef::Attributes(pairs)) => {
                        pairs.iter().map(|(_, v)| v.as_str()).collect::<Vec<_>>().join(" ")
                    }
                    (None, AnchorRef::Name(n)) => n.clone(),
                };
                Action::tool_call(SEARCH, json!({"query": [query]}))
            }
            Template::VisitCurrent => {
                let (url, goal) = match (&self.current, &q.anchor) {
                    (Some(_), _) => (self.current_url.clone(), next_label.to_string()),
                    (None, AnchorRef::Attributes(pairs)) => {
                        let mut goal: Vec<&str> = pairs.iter().flat_map(|(k, v)| [k.as_str(), v.as_str()]).collect();
                        goal.push(next_label);
                        (self.candidate().map(|(_, u)| u.clone()), goal.join(" "))
                    }
                    (None, AnchorRef::Name(_)) => (None, next_label.to_string()),
                };
                let url = url.unwrap_or_else(|| NO_URL.to_string());
                Action::tool_call(VISIT, json!({"url": [url], "goal": goal}))
            }
            Template::AnswerCurrent => Action::answer(self.current.as_deref().unwrap_or(UNKNOWN)),
            Template::SearchQuestion => Action::tool_call(SEARCH, json!({"query": [question]})),
            Template::VisitFirstHit => {
                let url = first_hit.map_or(NO_URL, |(_, u)| u);
                Action::tool_call(VISIT, json!({"url": [url], "goal": question}))
            }
            Template::AnswerFirstHit => Action::answer(first_hit.map_or(UNKNOWN, |(t, _)| t)),
        }
    }
}

/// Belief before each step of a finished trajectory, with the template the
/// step used. Steps whose thought names no template come back as `None`.
pub fn replay(trajectory: &Trajectory) -> Option<Vec<(usize, Option<Template>)>> {
    let q = parse_question(&trajectory.question)?;
    let mut belief = Belief::initial(&q);
    let mut out = Vec::with_capacity(trajectory.steps.len());
    for step in &trajectory.steps {
        out.push((belief.state(&q), Template::from_thought(step.thought.as_str())));
        let obs = step.observation.as_ref().map_or("", |o| o.text.as_str());
        belief.update(&q, &step.action, obs);
    }
    Some(out)
}

fn react_belief(q: &ParsedQuestion, messages: &MessageList) -> Belief {
    let mut belief = Belief::initial(q);
    let msgs = &messages.0;
    for pair in msgs.windows(2) {
        if pair[0].role == Role::Assistant && pair[1].role == Role::Tool {
            if let Ok(parsed) = parse_action(&pair[0].content) {
                belief.update(q, &parsed.action, &pair[1].content);
            }
        }
    }
    belief
}

/// Decision for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub state: usize,
    pub template: Template,
    pub logp: f64,
    pub text: String,
}

/// Logit table indexed `[state * N_TEMPLATES + template]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplatePolicy {
    pub table: Vec<f64>,
    /// Always take the highest-scoring template.
    pub greedy: bool,
}

/// Template that makes progress in each phase.
pub fn correct_template(phase: Phase) -> Template {
    match phase {
        Phase::NeedHits => Template::SearchCurrent,
        Phase::HaveHits => Template::VisitCurrent,
        Phase::Resolved => Template::AnswerCurrent,
    }
}

fn phase_of_state(state: usize) -> Phase {
    match state / (MAX_HOP_BUCKET + 1) {
        0 => Phase::NeedHits,
        1 => Phase::HaveHits,
        _ => Phase::Resolved,
    }
}

impl TemplatePolicy {
    pub fn new(table: Vec<f64>) -> Result<Self, TrainError> {
        if table.len() != N_PARAMS || table.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::PolicyShape(table.len(), N_PARAMS));
        }
        Ok(TemplatePolicy { table, greedy: false })
    }

    /// Perfect table, decoded greedily.
    pub fn oracle() -> Self {
        let mut p = Self::prior(10.0, 0.0);
        p.greedy = true;
        p
    }

    /// Supervised-style starting point: `skill` on the progressing template,
    /// `rush` on answering before the question is resolved.
    pub fn prior(skill: f64, rush: f64) -> Self {
        let mut table = vec![0.0; N_PARAMS];
        for s in 0..N_STATES {
            let phase = phase_of_state(s);
            table[s * N_TEMPLATES + correct_template(phase).index()] += skill;
            if phase != Phase::Resolved {
                table[s * N_TEMPLATES + Template::AnswerCurrent.index()] += rush;
            }
        }
        TemplatePolicy { table, greedy: false }
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.table[state * N_TEMPLATES..(state + 1) * N_TEMPLATES]
    }

    /// Log-probabilities of each template in `state` at `temperature`.
    pub fn log_probs(&self, state: usize, temperature: f64) -> [f64; N_TEMPLATES] {
        let t = if temperature > 0.0 { temperature } else { 1.0 };
        let row = self.row(state);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max) / t;
        let lse = max + row.iter().map(|l| (l / t - max).exp()).sum::<f64>().ln();
        std::array::from_fn(|a| row[a] / t - lse)
    }

    pub fn decide(&self, messages: &MessageList, sampling: &SamplingParams) -> Decision {
        let question = prompt::question_of(messages).unwrap_or_default();
        let Some(q) = parse_question(question) else {
            return Decision {
                state: 0,
                template: Template::AnswerCurrent,
                logp: 0.0,
                text: format!("{THOUGHT_PREFIX}{}.\n<answer>{UNKNOWN}</answer>", Template::AnswerCurrent.name()),
            };
        };
        let cm = prompt::parse_cm_prompt(messages);
        let belief = match &cm {
            Some(view) => {
                let mut b = Belief::from_report(view.report).unwrap_or_else(|| Belief::initial(&q));
                if let (Some(a), Some(o)) = (view.last_action, view.last_observation) {
                    if let Ok(parsed) = parse_action(a) {
                        b.update(&q, &parsed.action, o);
                    }
                }
                b
            }
            None => react_belief(&q, messages),
        };
        let state = belief.state(&q);
        let logps = self.log_probs(state, sampling.temperature);
        let choice = if self.greedy || sampling.temperature <= 0.0 {
            (0..N_TEMPLATES).fold(0, |best, a| if logps[a] > logps[best] { a } else { best })
        } else {
            let mut rng = seeds::rng(sampling.seed.unwrap_or(0));
            let u = seeds::uniform(&mut rng);
            let mut acc = 0.0;
            (0..N_TEMPLATES)
                .find(|&a| {
                    acc += logps[a].exp();
                    u < acc
                })
                .unwrap_or(N_TEMPLATES - 1)
        };
        let template = Template::ALL[choice];
        let action = belief.action(&q, question, template);
        let step = Step {
            thought: crate::agent::Thought(format!("{THOUGHT_PREFIX}{}.\n", template.name())),
            action,
            observation: None,
            report: cm.is_some().then(|| crate::agent::Report {
                text: belief.to_report(),
                truncated: false,
            }),
            token_logprobs: None,
        };
        Decision {
            state,
            template,
            logp: logps[choice],
            text: step.generated_text(),
        }
    }
}

impl PolicyEndpoint for TemplatePolicy {
    fn generate(&self, messages: &MessageList, sampling: &SamplingParams) -> Result<String, PolicyError> {
        Ok(self.decide(messages, sampling).text)
    }

    /// One scored token per step: the template choice.
    fn scored_generate(&self, messages: &MessageList, sampling: &SamplingParams) -> Result<PolicyResponse, PolicyError> {
        let d = self.decide(messages, sampling);
        Ok(PolicyResponse {
            text: d.text,
            token_logprobs: Some(vec![d.logp]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(text: &str) -> ParsedQuestion {
        parse_question(text).unwrap()
    }

    #[test]
    fn template_names_round_trip() {
        for t in Template::ALL {
            assert_eq!(Template::from_thought(&format!("Template {}.\n", t.name())), Some(t));
        }
        assert_eq!(Template::from_thought("I think"), None);
    }

    #[test]
    fn belief_follows_hops() {
        let q = q("What does the entity that Bo owns fund?");
        assert_eq!(q.labels, ["owns", "funds"]);
        let mut b = Belief::initial(&q);
        assert_eq!(b.phase(&q), Phase::NeedHits);
        let search = Action::tool_call(SEARCH, json!({"query": ["Bo"]}));
        b.update(&q, &search, "A search for 'Bo' found 2 results:\n\n1. [Cy](sim://doc/e0002)\nx\n\n2. [Bo](sim://doc/e0001)\ny\n");
        assert_eq!(b.current_url.as_deref(), Some("sim://doc/e0001"));
        assert_eq!(b.phase(&q), Phase::HaveHits);
        let visit = b.action(&q, "", Template::VisitCurrent);
        assert_eq!(visit, Action::tool_call(VISIT, json!({"url": ["sim://doc/e0001"], "goal": "owns"})));
        b.update(&q, &visit, "Relevant content from sim://doc/e0001 (Bo):\n- Bo owns Cy.\n- Its color is red.\n");
        assert_eq!((b.current.as_deref(), b.hops_done, b.phase(&q)), (Some("Cy"), 1, Phase::NeedHits));
        assert_eq!(b.state(&q), 1);
    }

    #[test]
    fn attribute_anchor_rejects_mismatches() {
        let q = q("What does the entity whose color is red fund?");
        let mut b = Belief::initial(&q);
        let search = b.action(&q, "", Template::SearchCurrent);
        assert_eq!(search, Action::tool_call(SEARCH, json!({"query": ["red"]})));
        b.update(&q, &search, "1. [Ak](sim://doc/e0001)\n2. [Bo](sim://doc/e0002)\n");
        let visit = b.action(&q, "", Template::VisitCurrent);
        assert_eq!(visit, Action::tool_call(VISIT, json!({"url": ["sim://doc/e0001"], "goal": "color red funds"})));
        b.update(&q, &visit, "Relevant content from sim://doc/e0001 (Ak):\n- Its color is blue.\n");
        assert_eq!(b.rejected, ["sim://doc/e0001"]);
        b.update(&q, &visit, "Relevant content from sim://doc/e0002 (Bo):\n- Its color is red.\n- Bo funds Di.\n");
        assert_eq!((b.current.as_deref(), b.hops_done, b.phase(&q)), (Some("Di"), 1, Phase::Resolved));
    }

    #[test]
    fn report_round_trip() {
        let b = Belief {
            current: Some("Bo".into()),
            hops_done: 2,
            hits: vec![("Bo".into(), "sim://doc/e0001".into())],
            ..Belief::default()
        };
        assert_eq!(Belief::from_report(&b.to_report()), Some(b));
    }

    #[test]
    fn prior_prefers_progress() {
        let p = TemplatePolicy::prior(2.0, 1.0);
        for s in 0..N_STATES {
            let lp = p.log_probs(s, 1.0);
            let best = correct_template(phase_of_state(s)).index();
            assert!((0..N_TEMPLATES).all(|a| lp[a] <= lp[best]));
            assert!((lp.iter().map(|l| l.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(TemplatePolicy::new(vec![0.0; 3]).is_err());
        assert!(N_PARAMS <= 1000);
    }
}
