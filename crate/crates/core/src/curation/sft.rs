use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::agent::prompt::{render_cm_prompt, render_react_prompt};
use crate::agent::{estimate_tokens, serialize_action, MessageList, Termination, Trajectory, Workspace};
use crate::gateway::ToolSpec;
use crate::rl::RewardRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftMode {
    React,
    Cm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SftStage {
    #[serde(rename = "40k")]
    Short,
    #[serde(rename = "128k")]
    Long,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SftConfig {
    pub short_limit_tokens: usize,
    pub long_limit_tokens: usize,
    /// Share of short ReAct samples replayed in the long stage.
    pub replay_fraction: f64,
    pub action_cap: usize,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig {
            short_limit_tokens: 40 * 1024,
            long_limit_tokens: 128 * 1024,
            replay_fraction: 0.1,
            action_cap: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftSample {
    /// Index of the source trajectory in the export input.
    pub source: usize,
    pub step: usize,
    pub mode: SftMode,
    pub messages_in: MessageList,
    pub target: String,
    pub tokens: usize,
    /// Short sample replayed in the long stage.
    #[serde(default)]
    pub replay: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SftExport {
    pub samples: Vec<SftSample>,
    /// `(source index, reason)` for trajectories that were not exported.
    pub rejected: Vec<(usize, String)>,
}

fn rejection(traj: &Trajectory, reward: &RewardRecord, mode: SftMode) -> Option<String> {
    if reward.reward != 1 {
        return Some("reward is 0; only successful trajectories are exported".into());
    }
    if traj.termination != Termination::Answered {
        return Some(format!("trajectory ended with {:?}", traj.termination));
    }
    if mode == SftMode::Cm {
        if let Some(t) = traj.steps.iter().position(|s| s.report.is_none()) {
            return Some(format!("step {t} has no report"));
        }
    }
    None
}

fn cm_workspace_before(traj: &Trajectory, t: usize) -> Workspace {
    let mut ws = Workspace::initial(traj.question.clone());
    if let Some(prev) = t.checked_sub(1).map(|p| &traj.steps[p]) {
        ws.report = prev.report.as_ref().map(|r| r.text.clone()).unwrap_or_default();
        ws.last_action = Some(prev.action.clone());
        ws.last_observation = prev.observation.clone();
    }
    ws.step_index = t;
    ws
}

fn per_step_samples(
    source: usize,
    traj: &Trajectory,
    mode: SftMode,
    registry: &[ToolSpec],
    cfg: &SftConfig,
) -> Vec<SftSample> {
    traj.steps
        .iter()
        .enumerate()
        .map(|(t, step)| {
            let (messages_in, target) = match mode {
                SftMode::React => (
                    render_react_prompt(&traj.question, &traj.steps[..t], registry),
                    format!("{}{}", step.thought.0, serialize_action(&step.action)),
                ),
                SftMode::Cm => (
                    render_cm_prompt(&cm_workspace_before(traj, t), registry, cfg.action_cap),
                    step.generated_text(),
                ),
            };
            SftSample {
                source,
                step: t,
                mode,
                tokens: messages_in.estimated_tokens() + estimate_tokens(&target),
                messages_in,
                target,
                replay: false,
            }
        })
        .collect()
}

/// Evenly spaced picks of `round(n * fraction)` out of `n`.
fn replay_indices(n: usize, fraction: f64) -> Vec<usize> {
    let m = ((n as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    (0..m).map(|i| i * n / m).collect()
}

/// One sample per step of each successful trajectory, filtered for `stage`.
///
/// ReAct samples go to the short stage when their token estimate is within
/// `short_limit_tokens`, otherwise to the long stage up to
/// `long_limit_tokens`; the long stage also replays an evenly spaced
/// `replay_fraction` of the short ReAct samples, flagged `replay`. CM
/// samples all belong to the short stage.
pub fn export_sft(
    items: &[(Trajectory, RewardRecord)],
    mode: SftMode,
    stage: SftStage,
    registry: &[ToolSpec],
    cfg: &SftConfig,
) -> SftExport {
    let mut out = SftExport::default();
    let mut all = Vec::new();
    for (i, (traj, reward)) in items.iter().enumerate() {
        match rejection(traj, reward, mode) {
            Some(why) => out.rejected.push((i, why)),
            None => all.extend(per_step_samples(i, traj, mode, registry, cfg)),
        }
    }
    out.samples = match (mode, stage) {
        (SftMode::Cm, SftStage::Short) => all,
        (SftMode::Cm, SftStage::Long) => Vec::new(),
        (SftMode::React, SftStage::Short) => {
            all.into_iter().filter(|s| s.tokens <= cfg.short_limit_tokens).collect()
        }
        (SftMode::React, SftStage::Long) => {
            let (short, long): (Vec<SftSample>, Vec<SftSample>) =
                all.into_iter().partition(|s| s.tokens <= cfg.short_limit_tokens);
            let mut picked: Vec<SftSample> = long
                .into_iter()
                .filter(|s| s.tokens <= cfg.long_limit_tokens)
                .collect();
            for i in replay_indices(short.len(), cfg.replay_fraction) {
                let mut s = short[i].clone();
                s.replay = true;
                picked.push(s);
            }
            picked
        }
    };
    out
}

#[derive(Serialize)]
struct SftLine<'a> {
    messages_in: &'a MessageList,
    target: &'a str,
    mode: SftMode,
    source: usize,
    step: usize,
    replay: bool,
}

pub fn write_sft(mut w: impl Write, samples: &[SftSample]) -> std::io::Result<()> {
    for s in samples {
        let line = SftLine {
            messages_in: &s.messages_in,
            target: &s.target,
            mode: s.mode,
            source: s.source,
            step: s.step,
            replay: s.replay,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{Action, Observation, Report, Step, Thought};
    use crate::rl::judge;
    use serde_json::json;

    fn step(i: usize, final_step: bool, pad: usize) -> Step {
        Step {
            thought: Thought(format!("thinking {i} {}", "x".repeat(pad))),
            action: if final_step {
                Action::answer("Bo")
            } else {
                Action::tool_call("search", json!({"query": [format!("q{i}")]}))
            },
            observation: (!final_step).then(|| Observation::capped("result", 4096)),
            report: Some(Report {
                text: format!("report {i}"),
                truncated: false,
            }),
            token_logprobs: None,
        }
    }

    fn traj(n: usize, pad: usize) -> Trajectory {
        Trajectory {
            question: "What does Ana own?".into(),
            steps: (0..n).map(|i| step(i, i + 1 == n, pad)).collect(),
            termination: Termination::Answered,
            token_count: 0,
        }
    }

    #[test]
    fn one_sample_per_step_and_rejections() {
        let ok = (traj(3, 0), judge("Bo", "Bo"));
        let bad = (traj(3, 0), judge("Bo", "Cy"));
        let cfg = SftConfig::default();
        let e = export_sft(&[ok.clone(), bad], SftMode::React, SftStage::Short, &[], &cfg);
        assert_eq!(e.samples.len(), 3);
        assert_eq!(e.rejected.len(), 1);
        assert_eq!(e.rejected[0].0, 1);
        assert!(e.samples[2].target.contains("<answer>Bo</answer>"));
        assert_eq!(e.samples[1].messages_in.len(), 4);

        let cm = export_sft(&[ok], SftMode::Cm, SftStage::Short, &[], &cfg);
        assert_eq!(cm.samples.len(), 3);
        assert!(cm.samples[1].messages_in.0[1].content.contains("report 0"));
        assert!(cm.samples[1].target.starts_with("<report>report 1</report>"));
    }

    #[test]
    fn stages_partition_react_samples() {
        let cfg = SftConfig {
            short_limit_tokens: 400,
            long_limit_tokens: 2000,
            ..SftConfig::default()
        };
        let items: Vec<_> = (0..12).map(|i| (traj(4, i * 60), judge("Bo", "bo"))).collect();
        let short = export_sft(&items, SftMode::React, SftStage::Short, &[], &cfg);
        let long = export_sft(&items, SftMode::React, SftStage::Long, &[], &cfg);
        let key = |s: &SftSample| (s.source, s.step);
        let short_keys: Vec<_> = short.samples.iter().map(key).collect();
        let long_fresh: Vec<_> = long.samples.iter().filter(|s| !s.replay).map(key).collect();
        assert!(!short_keys.is_empty() && !long_fresh.is_empty());
        assert!(long_fresh.iter().all(|k| !short_keys.contains(k)));
        let replays = long.samples.iter().filter(|s| s.replay).count();
        assert_eq!(replays, (short_keys.len() as f64 * 0.1).round() as usize);
        assert!(long.samples.iter().all(|s| s.tokens <= 2000));
    }

    #[test]
    fn replay_spacing() {
        assert_eq!(replay_indices(20, 0.1), [0, 10]);
        assert!(replay_indices(3, 0.1).is_empty());
        assert_eq!(replay_indices(4, 1.0), [0, 1, 2, 3]);
    }
}
