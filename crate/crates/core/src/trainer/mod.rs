//! Closed-loop training of the template policy: probe, curate, collect
//! groups, take clipped policy-gradient steps.

pub mod template;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Limits, RolloutMode};
use crate::curation::{
    spawn_background_scan, CurationError, Curator, Probe, ProblemRecord, RefreshPolicy, ScanQueue,
};
use crate::gateway::{GatewayError, ToolInvoker, VirtualClock};
use crate::manifest::{Manifest, ManifestEvent};
use crate::orchestrator::{collect_groups, CollectedGroup, Endpoints, OrchestratorError};
use crate::rl::{filter_group, grpo_loss, prepare_group, AdvantageMode, ClipConfig, ExactMatchJudge, RlError};
use crate::seeds;
use crate::simenv::{sim_gateway, SimEnv, SimEnvError};
use crate::synth::{synthesize, QATask, SynthConfig, SynthError};

pub use template::{correct_template, replay, Belief, Decision, Phase, Template, TemplatePolicy, N_PARAMS, N_STATES, N_TEMPLATES};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("policy table has {0} entries, expected {1} finite values")]
    PolicyShape(usize, usize),
    #[error("no problem survived the initial filter")]
    NoActiveProblems,
    #[error("step {0} has an unreadable trajectory for question '{1}'")]
    Unreplayable(usize, String),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    SimEnv(#[from] SimEnvError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Curation(#[from] CurationError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub mode: RolloutMode,
    pub group_size: usize,
    pub batch_questions: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub eval_k: usize,
    pub max_tool_calls: usize,
    pub concurrency: usize,
    /// Starting logit on the progressing template.
    pub prior_skill: f64,
    /// Starting logit on answering before the question is resolved.
    pub prior_rush: f64,
    /// Steps between background re-scans of too-hard problems.
    pub scan_interval: usize,
    pub curation: RefreshPolicy,
    pub eps_low: f64,
    pub eps_high: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 7,
            synth: SynthConfig {
                seed: 7,
                n_entities: 120,
                n_labels: 6,
                n_tasks: 200,
                min_hops: 2,
                max_hops: 2,
                obfuscation_level: 0,
            },
            mode: RolloutMode::React,
            group_size: 8,
            batch_questions: 16,
            steps: 50,
            learning_rate: 4.0,
            eval_k: 4,
            max_tool_calls: 10,
            concurrency: 8,
            prior_skill: 2.4,
            prior_rush: 1.2,
            scan_interval: 10,
            curation: RefreshPolicy {
                refresh_step_interval: 10,
                ..RefreshPolicy::default()
            },
            eps_low: 0.2,
            eps_high: 0.28,
        }
    }
}

impl TrainConfig {
    /// Rollout limits used for training and evaluation. Sampling runs at
    /// temperature 1 so recorded log-probabilities match the loss.
    pub fn limits(&self) -> Limits {
        let mut l = Limits {
            max_tool_calls: self.max_tool_calls,
            ..Limits::default()
        };
        l.sampling.temperature = 1.0;
        l
    }

    pub fn clip(&self) -> Result<ClipConfig<f64>, RlError> {
        ClipConfig::new(self.eps_low, self.eps_high)
    }
}

/// Tasks plus an in-process gateway over their corpus.
pub fn build_env(synth: &SynthConfig) -> Result<(Vec<QATask>, Arc<dyn ToolInvoker>), TrainError> {
    let s = synthesize(synth)?;
    let env = Arc::new(SimEnv::new(s.corpus)?);
    let gateway = sim_gateway(env, Arc::new(VirtualClock::new()))?;
    Ok((s.tasks, Arc::new(gateway)))
}

/// `k` rollouts per task; successes per task id.
pub fn probe_tasks(
    policy: &TemplatePolicy,
    tasks: &[QATask],
    tools: &Arc<dyn ToolInvoker>,
    cfg: &TrainConfig,
    run_seed: u64,
    k: usize,
) -> Result<BTreeMap<String, Probe>, TrainError> {
    let endpoints = Endpoints {
        policy: Arc::new(policy.clone()),
        tools: tools.clone(),
    };
    let limits = cfg.limits();
    let c = collect_groups(tasks, k, cfg.mode, &endpoints, &limits, run_seed, cfg.concurrency, &ExactMatchJudge, &Manifest::discard())?;
    Ok(c.groups
        .iter()
        .map(|g| {
            let successes = g.rewards.iter().filter(|r| r.reward == 1).count();
            (g.question_id.clone(), Probe { successes, k })
        })
        .collect())
}

pub fn mean_solve_rate(probes: &BTreeMap<String, Probe>, n_tasks: usize) -> f64 {
    let solved: f64 = probes.values().map(|p| p.successes as f64 / p.k as f64).sum();
    solved / n_tasks.max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub mean_reward: f64,
    pub clip_fraction: f64,
    pub groups: usize,
    pub active: usize,
}

/// Clipped surrogate and its gradient with respect to the logit table.
/// Each scored step is one token; its state comes from replaying the
/// trajectory.
pub fn policy_gradient(
    policy: &TemplatePolicy,
    groups: &[CollectedGroup],
    clip: &ClipConfig<f64>,
    temperature: f64,
    step: usize,
) -> Result<Option<(f64, f64, Vec<f64>)>, TrainError> {
    let mut prepared = Vec::new();
    let mut decisions: Vec<Vec<Vec<(usize, usize)>>> = Vec::new();
    let t = if temperature > 0.0 { temperature } else { 1.0 };
    for g in groups {
        let Some(mut filtered) = filter_group(g.to_rollout_group()) else {
            continue;
        };
        let mut kept = Vec::new();
        for (traj, s) in g.trajectories.iter().zip(&mut filtered.samples) {
            if s.excluded {
                continue;
            }
            let steps = replay(traj).ok_or_else(|| TrainError::Unreplayable(step, g.question_id.clone()))?;
            let scored: Vec<(usize, usize)> = steps
                .iter()
                .zip(&traj.steps)
                .filter(|(_, st)| st.token_logprobs.as_ref().is_some_and(|l| !l.is_empty()))
                .map(|((state, tpl), _)| tpl.map(|tpl| (*state, tpl.index())))
                .collect::<Option<_>>()
                .ok_or_else(|| TrainError::Unreplayable(step, g.question_id.clone()))?;
            s.tokens.logp_new = scored.iter().map(|&(state, a)| policy.log_probs(state, t)[a]).collect();
            kept.push(scored);
        }
        prepared.push(prepare_group(&filtered, AdvantageMode::LeaveOneOut)?);
        decisions.push(kept);
    }
    if prepared.is_empty() {
        return Ok(None);
    }
    let report = grpo_loss(&prepared, clip)?;
    let mut grad = vec![0.0; N_PARAMS];
    for (gi, group) in decisions.iter().enumerate() {
        for (si, sample) in group.iter().enumerate() {
            for (ti, &(state, action)) in sample.iter().enumerate() {
                let g = report.grad_logp[gi][si][ti];
                if g == 0.0 {
                    continue;
                }
                let lp = policy.log_probs(state, t);
                for (a, l) in lp.iter().enumerate() {
                    let indicator = if a == action { 1.0 } else { 0.0 };
                    grad[state * N_TEMPLATES + a] += g * (indicator - l.exp()) / t;
                }
            }
        }
    }
    Ok(Some((report.loss, report.clip_fraction, grad)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub baseline: f64,
    pub final_reward: f64,
    pub steps: Vec<StepLog>,
    pub table: Vec<f64>,
    pub n_tasks: usize,
}

fn scan_probe(
    policy: TemplatePolicy,
    tasks: Arc<BTreeMap<String, QATask>>,
    tools: Arc<dyn ToolInvoker>,
    cfg: TrainConfig,
    run_seed: u64,
) -> Arc<dyn Fn(&ProblemRecord) -> Probe + Send + Sync> {
    Arc::new(move |r: &ProblemRecord| {
        let k = cfg.curation.k_probe;
        let Some(task) = tasks.get(&r.id) else {
            return Probe { successes: 0, k };
        };
        let mut serial = cfg.clone();
        serial.concurrency = 1;
        probe_tasks(&policy, std::slice::from_ref(task), &tools, &serial, run_seed, k)
            .ok()
            .and_then(|p| p.get(&r.id).copied())
            .unwrap_or(Probe { successes: 0, k })
    })
}

/// Full loop: baseline probe, initial filter, `cfg.steps` updates with
/// periodic background scans and refreshes, final evaluation on all tasks.
pub fn train(cfg: &TrainConfig, manifest: &Manifest) -> Result<TrainReport, TrainError> {
    let (tasks, tools) = build_env(&cfg.synth)?;
    let by_id: Arc<BTreeMap<String, QATask>> = Arc::new(tasks.iter().map(|t| (t.id.clone(), t.clone())).collect());
    let clip = cfg.clip()?;
    let limits = cfg.limits();
    let mut policy = TemplatePolicy::prior(cfg.prior_skill, cfg.prior_rush);

    let probes = probe_tasks(&policy, &tasks, &tools, cfg, seeds::derive(&[cfg.seed, 1]), cfg.curation.k_probe)?;
    let baseline = mean_solve_rate(&probes, tasks.len());
    let records = tasks.iter().map(|t| ProblemRecord::new(&t.id, &t.question, &t.answer)).collect();
    let mut curator = Curator::new(records, cfg.curation.clone())?;
    if curator.initial_filter(&probes)?.is_empty() {
        return Err(TrainError::NoActiveProblems);
    }
    let mut seen_events = 0;
    let queue = ScanQueue::new();
    let mut scan: Option<std::thread::JoinHandle<usize>> = None;
    let mut logs = Vec::with_capacity(cfg.steps);

    for step in 1..=cfg.steps {
        let active = curator.active().to_vec();
        let take = cfg.batch_questions.min(active.len());
        let batch: Vec<QATask> = (0..take)
            .map(|i| by_id[&active[((step - 1) * take + i) % active.len()]].clone())
            .collect();
        let endpoints = Endpoints {
            policy: Arc::new(policy.clone()),
            tools: tools.clone(),
        };
        let run_seed = seeds::derive(&[cfg.seed, 2, step as u64]);
        let collected = collect_groups(&batch, cfg.group_size, cfg.mode, &endpoints, &limits, run_seed, cfg.concurrency, &ExactMatchJudge, manifest)?;
        let mut reward_sum = 0.0;
        for g in &collected.groups {
            curator.record_solve_rate(&g.question_id, g.mean_reward())?;
            reward_sum += g.mean_reward();
        }
        let mean_reward = reward_sum / collected.groups.len().max(1) as f64;
        curator.record_batch_reward(mean_reward);

        let (loss, clip_fraction) =
            match policy_gradient(&policy, &collected.groups, &clip, limits.sampling.temperature, step)? {
                Some((loss, clip_fraction, grad)) => {
                    for (p, g) in policy.table.iter_mut().zip(&grad) {
                        *p -= cfg.learning_rate * g;
                    }
                    (loss, clip_fraction)
                }
                None => (0.0, 0.0),
            };
        let log = StepLog {
            step,
            loss,
            mean_reward,
            clip_fraction,
            groups: collected.groups.len(),
            active: active.len(),
        };
        manifest.record(&ManifestEvent::TrainStep {
            step,
            loss,
            mean_reward,
            clip_fraction,
            groups: log.groups,
        });
        log::info!("step {step}: loss {loss:.4} reward {mean_reward:.3} active {}", active.len());
        logs.push(log);

        // Scans overlap training; joining before each drain keeps admission
        // independent of thread timing.
        if cfg.scan_interval > 0 && step % cfg.scan_interval == 0 {
            if let Some(h) = scan.take() {
                let _ = h.join();
                curator.drain_scan_queue(&queue)?;
            }
            let probe = scan_probe(policy.clone(), by_id.clone(), tools.clone(), cfg.clone(), seeds::derive(&[cfg.seed, 3, step as u64]));
            scan = Some(spawn_background_scan(curator.snapshot(), probe, cfg.curation.admission, queue.clone()));
        }
        curator.maybe_refresh(step)?;
        for e in &curator.events()[seen_events..] {
            manifest.record(&ManifestEvent::Curation { detail: e.clone() });
        }
        seen_events = curator.events().len();
    }
    if let Some(h) = scan {
        let _ = h.join();
    }

    let eval = probe_tasks(&policy, &tasks, &tools, cfg, seeds::derive(&[cfg.seed, 4]), cfg.eval_k)?;
    let final_reward = mean_solve_rate(&eval, tasks.len());
    Ok(TrainReport {
        baseline,
        final_reward,
        steps: logs,
        table: policy.table,
        n_tasks: tasks.len(),
    })
}
