//! Avg@k / Pass@k metrics and the evaluation runner.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Limits, RolloutMode, Trajectory};
use crate::manifest::{Manifest, ManifestEvent};
use crate::orchestrator::{run_batch, Endpoints, OrchestratorError, RolloutJob};
use crate::rl::Judge;
use crate::synth::QATask;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no results to score")]
    Empty,
    #[error("question '{0}' has no runs")]
    NoRuns(String),
    #[error("question '{id}' has {found} runs, expected {expected}")]
    RaggedRuns { id: String, expected: usize, found: usize },
    #[error("question '{0}' has a non-binary reward {1}")]
    NonBinary(String, u8),
    #[error("persisted run {run} of question '{id}' is missing")]
    MissingRun { id: String, run: usize },
    #[error("bad trajectory record: {0}")]
    Record(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
}

/// Rewards of `k` runs on one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunResult {
    pub question_id: String,
    pub rewards: Vec<u8>,
    /// Reference to each run's persisted trajectory.
    #[serde(default)]
    pub trajectory_refs: Vec<String>,
}

impl RunResult {
    pub fn new(question_id: impl Into<String>, rewards: Vec<u8>) -> Self {
        RunResult {
            question_id: question_id.into(),
            rewards,
            trajectory_refs: Vec::new(),
        }
    }
}

/// Common `k` of a result table.
pub fn check_results(results: &[RunResult]) -> Result<usize, EvalError> {
    let first = results.first().ok_or(EvalError::Empty)?;
    let k = first.rewards.len();
    for r in results {
        if r.rewards.is_empty() {
            return Err(EvalError::NoRuns(r.question_id.clone()));
        }
        if r.rewards.len() != k {
            return Err(EvalError::RaggedRuns {
                id: r.question_id.clone(),
                expected: k,
                found: r.rewards.len(),
            });
        }
        if let Some(&bad) = r.rewards.iter().find(|&&x| x > 1) {
            return Err(EvalError::NonBinary(r.question_id.clone(), bad));
        }
    }
    Ok(k)
}

/// Mean over questions of the mean over runs. Counts stay integral until a
/// single division, so the dominance chain holds exactly in floating point.
pub fn avg_at_k(results: &[RunResult]) -> Result<f64, EvalError> {
    let k = check_results(results)?;
    let total: usize = results.iter().map(|r| r.rewards.iter().map(|&x| x as usize).sum::<usize>()).sum();
    Ok(total as f64 / (results.len() * k) as f64)
}

/// Fraction of questions solved by at least one run.
pub fn pass_at_k(results: &[RunResult]) -> Result<f64, EvalError> {
    check_results(results)?;
    let solved = results.iter().filter(|r| r.rewards.contains(&1)).count();
    Ok(solved as f64 / results.len() as f64)
}

/// Mean reward of each full-benchmark run.
pub fn run_means(results: &[RunResult]) -> Result<Vec<f64>, EvalError> {
    let k = check_results(results)?;
    Ok((0..k)
        .map(|run| results.iter().map(|r| r.rewards[run] as usize).sum::<usize>() as f64 / results.len() as f64)
        .collect())
}

/// Best single run's mean reward; zero for no runs.
pub fn pass_at_1_best(run_means: &[f64]) -> f64 {
    run_means.iter().copied().fold(None, |best: Option<f64>, m| Some(best.map_or(m, |b| b.max(m)))).unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub avg_at_k: f64,
    pub pass_at_1_best: f64,
    pub pass_at_k: f64,
    pub run_means: Vec<f64>,
    pub questions: Vec<RunResult>,
}

impl MetricsReport {
    pub fn from_results(results: Vec<RunResult>) -> Result<Self, EvalError> {
        let means = run_means(&results)?;
        Ok(MetricsReport {
            k: means.len(),
            avg_at_k: avg_at_k(&results)?,
            pass_at_1_best: pass_at_1_best(&means),
            pass_at_k: pass_at_k(&results)?,
            run_means: means,
            questions: results,
        })
    }

    /// Plain-text table for a terminal.
    pub fn render_table(&self) -> String {
        let mut out = format!("{:<12} {}\n", "question", "runs");
        for q in &self.questions {
            let runs: Vec<String> = q.rewards.iter().map(u8::to_string).collect();
            out.push_str(&format!("{:<12} {}\n", q.question_id, runs.join(" ")));
        }
        out.push_str(&format!(
            "\nAvg@{k}: {:.4}\nPass@1 (best of {k}): {:.4}\nPass@{k}: {:.4}\n",
            self.avg_at_k,
            self.pass_at_1_best,
            self.pass_at_k,
            k = self.k
        ));
        out
    }
}

/// One persisted rollout of an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub question_id: String,
    pub run: usize,
    pub gold: String,
    pub trajectory: Trajectory,
}

impl TrajectoryRecord {
    pub fn reference(&self) -> String {
        format!("{}#{}", self.question_id, self.run)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub report: MetricsReport,
    pub records: Vec<TrajectoryRecord>,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub runs: usize,
    pub mode: RolloutMode,
    pub limits: Limits,
    pub run_seed: u64,
    pub concurrency: usize,
}

/// `opts.runs` full passes over `tasks`. A failed rollout scores zero.
pub fn evaluate(
    tasks: &[QATask],
    endpoints: &Endpoints,
    judge: &dyn Judge,
    opts: &EvalOptions,
    manifest: &Manifest,
) -> Result<EvalRun, EvalError> {
    if opts.runs == 0 || tasks.is_empty() {
        return Err(EvalError::Empty);
    }
    let jobs: Vec<RolloutJob> = tasks
        .iter()
        .flat_map(|t| (1..=opts.runs).map(move |slot| RolloutJob::new(&t.id, &t.question, opts.mode, slot, opts.run_seed, &opts.limits)))
        .collect();
    let out = run_batch(&jobs, endpoints, opts.concurrency)?;
    let mut records = Vec::with_capacity(jobs.len());
    let mut results: Vec<RunResult> = tasks.iter().map(|t| RunResult::new(&t.id, Vec::new())).collect();
    for (i, (job, t)) in jobs.iter().zip(out.trajectories).enumerate() {
        let task = &tasks[i / opts.runs];
        let reward = judge.judge(t.final_answer().unwrap_or_default(), &task.answer).reward;
        manifest.record(&ManifestEvent::JobEnd {
            job: i,
            question_id: job.question_id.clone(),
            termination: t.termination,
            tool_calls: t.tool_calls(),
            token_count: t.token_count,
            reward: Some(reward),
        });
        let record = TrajectoryRecord {
            question_id: task.id.clone(),
            run: job.slot - 1,
            gold: task.answer.clone(),
            trajectory: t,
        };
        let result = &mut results[i / opts.runs];
        result.rewards.push(reward);
        result.trajectory_refs.push(record.reference());
        records.push(record);
    }
    let report = MetricsReport::from_results(results)?;
    manifest.record(&ManifestEvent::Metrics {
        avg_at_k: report.avg_at_k,
        pass_at_1_best: report.pass_at_1_best,
        pass_at_k: report.pass_at_k,
        k: report.k,
        questions: report.questions.len(),
    });
    Ok(EvalRun { report, records })
}

/// Metrics from persisted trajectories, judged afresh. Questions keep their
/// first-seen order.
pub fn replay_metrics(records: &[TrajectoryRecord], judge: &dyn Judge) -> Result<MetricsReport, EvalError> {
    let mut order: Vec<&str> = Vec::new();
    let mut by_q: std::collections::HashMap<&str, Vec<Option<&TrajectoryRecord>>> = Default::default();
    for r in records {
        let slots = by_q.entry(&r.question_id).or_insert_with(|| {
            order.push(&r.question_id);
            Vec::new()
        });
        if slots.len() <= r.run {
            slots.resize(r.run + 1, None);
        }
        slots[r.run] = Some(r);
    }
    let results = order
        .into_iter()
        .map(|id| {
            let mut result = RunResult::new(id, Vec::new());
            for (run, slot) in by_q[id].iter().enumerate() {
                let rec = slot.ok_or_else(|| EvalError::MissingRun { id: id.to_string(), run })?;
                let answer = rec.trajectory.final_answer().unwrap_or_default();
                result.rewards.push(judge.judge(answer, &rec.gold).reward);
                result.trajectory_refs.push(rec.reference());
            }
            Ok(result)
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    MetricsReport::from_results(results)
}

pub fn write_records(mut w: impl Write, records: &[TrajectoryRecord]) -> Result<(), EvalError> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records(r: impl BufRead) -> Result<Vec<TrajectoryRecord>, EvalError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
