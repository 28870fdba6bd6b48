//! Difficulty filtering, mastery tracking and refresh of the active problem
//! set, plus SFT sample export.

mod scan;
mod sft;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use scan::{background_scan, spawn_background_scan, Candidate, ScanQueue};
pub use sft::{export_sft, write_sft, SftConfig, SftExport, SftMode, SftSample, SftStage};

pub const HISTORY_CAP: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurationError {
    #[error("problem '{id}': illegal status change {from:?} -> {to:?}")]
    IllegalTransition { id: String, from: ProblemStatus, to: ProblemStatus },
    #[error("problem '{0}' probed with k = {1}; need k >= 2")]
    ProbeTooSmall(String, usize),
    #[error("unknown problem '{0}'")]
    UnknownProblem(String),
    #[error("duplicate problem '{0}'")]
    DuplicateProblem(String),
    #[error("invalid refresh policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemStatus {
    Untested,
    Active,
    Mastered,
    TooHard,
    Pool,
}

impl ProblemStatus {
    /// Allowed lifecycle edges. Besides the probe outcomes and promotion,
    /// untested and too-hard problems may be admitted to the pool when a
    /// later checkpoint finds them moderately hard.
    pub fn can_become(self, to: ProblemStatus) -> bool {
        use ProblemStatus::*;
        matches!(
            (self, to),
            (Untested, Active | Mastered | TooHard | Pool) | (TooHard, Pool) | (Pool, Active) | (Active, Mastered)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub id: String,
    pub question: String,
    pub answer: String,
    /// Most recent solve rates, oldest first, at most [`HISTORY_CAP`].
    pub solve_history: VecDeque<f64>,
    pub status: ProblemStatus,
}

impl ProblemRecord {
    pub fn new(id: impl Into<String>, question: impl Into<String>, answer: impl Into<String>) -> Self {
        ProblemRecord {
            id: id.into(),
            question: question.into(),
            answer: answer.into(),
            solve_history: VecDeque::new(),
            status: ProblemStatus::Untested,
        }
    }

    pub fn set_status(&mut self, to: ProblemStatus) -> Result<(), CurationError> {
        if !self.status.can_become(to) {
            return Err(CurationError::IllegalTransition {
                id: self.id.clone(),
                from: self.status,
                to,
            });
        }
        self.status = to;
        Ok(())
    }

    pub fn record_solve_rate(&mut self, rate: f64) {
        if self.solve_history.len() == HISTORY_CAP {
            self.solve_history.pop_front();
        }
        self.solve_history.push_back(rate.clamp(0.0, 1.0));
    }

    /// Mean of the last `window` solve rates (fewer if the history is shorter).
    pub fn window_mean(&self, window: usize) -> Option<f64> {
        let n = self.solve_history.len().min(window);
        (n > 0).then(|| self.solve_history.iter().rev().take(n).sum::<f64>() / n as f64)
    }
}

/// Which probe outcomes count as moderately hard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AdmissionBand {
    /// `0 < successes < k`.
    #[default]
    Strict,
    /// Solve rate within `[low, high]`, still excluding 0 and k.
    Band { low: f64, high: f64 },
}

impl AdmissionBand {
    pub fn admits(&self, successes: usize, k: usize) -> bool {
        if successes == 0 || successes >= k {
            return false;
        }
        match *self {
            AdmissionBand::Strict => true,
            AdmissionBand::Band { low, high } => (low..=high).contains(&(successes as f64 / k as f64)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefreshPolicy {
    pub k_probe: usize,
    pub mastered_threshold: f64,
    pub window: usize,
    pub plateau_delta: f64,
    pub refresh_step_interval: usize,
    pub admission: AdmissionBand,
}

impl Default for RefreshPolicy {
    fn default() -> Self {
        RefreshPolicy {
            k_probe: 4,
            mastered_threshold: 0.9,
            window: 3,
            plateau_delta: 0.02,
            refresh_step_interval: 50,
            admission: AdmissionBand::Strict,
        }
    }
}

impl RefreshPolicy {
    pub fn validate(&self) -> Result<(), CurationError> {
        let bad = |m: &str| Err(CurationError::InvalidPolicy(m.into()));
        if self.k_probe < 2 {
            return bad("k_probe must be at least 2");
        }
        if !(self.mastered_threshold > 0.0 && self.mastered_threshold <= 1.0) {
            return bad("mastered_threshold must be in (0, 1]");
        }
        if self.window < 2 {
            return bad("window must be at least 2");
        }
        if self.refresh_step_interval == 0 {
            return bad("refresh_step_interval must be positive");
        }
        Ok(())
    }

    pub fn should_refresh(&self, step: usize, plateaued: bool) -> bool {
        plateaued || (step > 0 && step.is_multiple_of(self.refresh_step_interval))
    }
}

/// Probe outcome: `successes` correct answers out of `k` rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Probe {
    pub successes: usize,
    pub k: usize,
}

/// Classifies untested problems by their probe. Keeps exactly those with
/// `0 < successes < k`; returns the kept ids in input order.
pub fn initial_filter(
    records: &mut [ProblemRecord],
    probes: &BTreeMap<String, Probe>,
) -> Result<Vec<String>, CurationError> {
    let mut active = Vec::new();
    for r in records.iter_mut() {
        let p = probes.get(&r.id).ok_or_else(|| CurationError::UnknownProblem(r.id.clone()))?;
        if p.k < 2 {
            return Err(CurationError::ProbeTooSmall(r.id.clone(), p.k));
        }
        r.record_solve_rate(p.successes as f64 / p.k as f64);
        let to = match p.successes {
            0 => ProblemStatus::TooHard,
            s if s >= p.k => ProblemStatus::Mastered,
            _ => ProblemStatus::Active,
        };
        r.set_status(to)?;
        if to == ProblemStatus::Active {
            active.push(r.id.clone());
        }
    }
    Ok(active)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Detection {
    pub mastered: BTreeSet<String>,
    pub plateaued: bool,
}

/// True iff the last `window` batch rewards span less than `delta`.
pub fn is_plateau(batch_rewards: &[f64], window: usize, delta: f64) -> bool {
    if batch_rewards.len() < window || window == 0 {
        return false;
    }
    let recent = &batch_rewards[batch_rewards.len() - window..];
    let max = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = recent.iter().copied().fold(f64::INFINITY, f64::min);
    max - min < delta
}

/// Mastery and plateau detection over the active records.
pub fn update_and_detect<'a>(
    records: impl IntoIterator<Item = &'a ProblemRecord>,
    batch_rewards: &[f64],
    policy: &RefreshPolicy,
) -> Detection {
    let mastered = records
        .into_iter()
        .filter(|r| r.status == ProblemStatus::Active)
        .filter(|r| r.window_mean(policy.window).is_some_and(|m| m >= policy.mastered_threshold))
        .map(|r| r.id.clone())
        .collect();
    Detection {
        mastered,
        plateaued: is_plateau(batch_rewards, policy.window, policy.plateau_delta),
    }
}

/// Drops mastered ids, then tops up from the front of `pool` until the set
/// is back to `target` or the pool runs out. Returns the new set and whether
/// the pool ran short.
pub fn refresh(
    active: &[String],
    mastered: &BTreeSet<String>,
    pool: &mut VecDeque<String>,
    target: usize,
) -> (Vec<String>, bool) {
    let mut next: Vec<String> = active.iter().filter(|id| !mastered.contains(*id)).cloned().collect();
    while next.len() < target {
        match pool.pop_front() {
            Some(id) if !next.contains(&id) => next.push(id),
            Some(_) => {}
            None => return (next, true),
        }
    }
    (next, false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum CurationEvent {
    InitialFilter { active: usize, too_hard: usize, mastered: usize },
    Mastered { ids: Vec<String> },
    PoolAdmitted { ids: Vec<String> },
    Refreshed { step: usize, removed: usize, added: usize, size: usize, pool_short: bool },
}

/// Owner of the dataset `D` and the active set `D'`. All trainer-facing
/// mutation goes through `&mut self`; the background scanner only appends to
/// a [`ScanQueue`].
#[derive(Debug, Clone)]
pub struct Curator {
    records: Vec<ProblemRecord>,
    index: BTreeMap<String, usize>,
    active: Vec<String>,
    pool: VecDeque<String>,
    target: usize,
    policy: RefreshPolicy,
    batch_rewards: Vec<f64>,
    scan_cursor: usize,
    events: Vec<CurationEvent>,
}

impl Curator {
    pub fn new(records: Vec<ProblemRecord>, policy: RefreshPolicy) -> Result<Self, CurationError> {
        policy.validate()?;
        let mut index = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if index.insert(r.id.clone(), i).is_some() {
                return Err(CurationError::DuplicateProblem(r.id.clone()));
            }
        }
        Ok(Curator {
            records,
            index,
            active: Vec::new(),
            pool: VecDeque::new(),
            target: 0,
            policy,
            batch_rewards: Vec::new(),
            scan_cursor: 0,
            events: Vec::new(),
        })
    }

    pub fn policy(&self) -> &RefreshPolicy {
        &self.policy
    }

    pub fn records(&self) -> &[ProblemRecord] {
        &self.records
    }

    pub fn record(&self, id: &str) -> Option<&ProblemRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    fn record_mut(&mut self, id: &str) -> Result<&mut ProblemRecord, CurationError> {
        let i = *self.index.get(id).ok_or_else(|| CurationError::UnknownProblem(id.to_string()))?;
        Ok(&mut self.records[i])
    }

    pub fn active(&self) -> &[String] {
        &self.active
    }

    pub fn pool(&self) -> &VecDeque<String> {
        &self.pool
    }

    pub fn target_size(&self) -> usize {
        self.target
    }

    pub fn events(&self) -> &[CurationEvent] {
        &self.events
    }

    /// Read-only copy of the records, for a background scanner.
    pub fn snapshot(&self) -> Vec<ProblemRecord> {
        self.records.clone()
    }

    /// Applies probe results to the untested records they cover and fixes the
    /// target size. Unprobed records stay untested, available to the scanner.
    pub fn initial_filter(&mut self, probes: &BTreeMap<String, Probe>) -> Result<&[String], CurationError> {
        let untested: Vec<usize> = (0..self.records.len())
            .filter(|&i| self.records[i].status == ProblemStatus::Untested && probes.contains_key(&self.records[i].id))
            .collect();
        let mut subset: Vec<ProblemRecord> = untested.iter().map(|&i| self.records[i].clone()).collect();
        let kept = initial_filter(&mut subset, probes)?;
        for (i, r) in untested.into_iter().zip(subset) {
            self.records[i] = r;
        }
        self.active.extend(kept);
        self.target = self.active.len();
        let count = |s| self.records.iter().filter(|r| r.status == s).count();
        self.events.push(CurationEvent::InitialFilter {
            active: self.active.len(),
            too_hard: count(ProblemStatus::TooHard),
            mastered: count(ProblemStatus::Mastered),
        });
        Ok(&self.active)
    }

    /// Records one epoch's solve rate for an active problem.
    pub fn record_solve_rate(&mut self, id: &str, rate: f64) -> Result<(), CurationError> {
        self.record_mut(id)?.record_solve_rate(rate);
        Ok(())
    }

    pub fn record_batch_reward(&mut self, mean_reward: f64) {
        self.batch_rewards.push(mean_reward);
    }

    pub fn detect(&self) -> Detection {
        let active: Vec<&ProblemRecord> = self.active.iter().filter_map(|id| self.record(id)).collect();
        update_and_detect(active, &self.batch_rewards, &self.policy)
    }

    /// Moves newly queued scan candidates into the pool.
    pub fn drain_scan_queue(&mut self, queue: &ScanQueue) -> Result<usize, CurationError> {
        let fresh = queue.read_from(self.scan_cursor);
        self.scan_cursor += fresh.len();
        let mut admitted = Vec::new();
        for c in fresh {
            let Ok(r) = self.record_mut(&c.id) else {
                continue;
            };
            if r.status.can_become(ProblemStatus::Pool) {
                r.record_solve_rate(c.successes as f64 / c.k as f64);
                r.set_status(ProblemStatus::Pool)?;
                self.pool.push_back(c.id.clone());
                admitted.push(c.id);
            }
        }
        let n = admitted.len();
        if n > 0 {
            self.events.push(CurationEvent::PoolAdmitted { ids: admitted });
        }
        Ok(n)
    }

    /// Runs detection and, if due at `step`, a refresh. Returns whether the
    /// active set changed.
    pub fn maybe_refresh(&mut self, step: usize) -> Result<bool, CurationError> {
        let detection = self.detect();
        if !self.policy.should_refresh(step, detection.plateaued) {
            return Ok(false);
        }
        for id in &detection.mastered {
            self.record_mut(id)?.set_status(ProblemStatus::Mastered)?;
        }
        if !detection.mastered.is_empty() {
            self.events.push(CurationEvent::Mastered {
                ids: detection.mastered.iter().cloned().collect(),
            });
        }
        let before = self.active.clone();
        let (next, short) = refresh(&self.active, &detection.mastered, &mut self.pool, self.target);
        if short {
            log::warn!("curation pool is empty; active set shrinks to {}", next.len());
        }
        let added: Vec<String> = next.iter().filter(|id| !before.contains(id)).cloned().collect();
        for id in &added {
            self.record_mut(id)?.set_status(ProblemStatus::Active)?;
        }
        self.events.push(CurationEvent::Refreshed {
            step,
            removed: detection.mastered.len(),
            added: added.len(),
            size: next.len(),
            pool_short: short,
        });
        let changed = next != before;
        self.active = next;
        Ok(changed)
    }

    /// Every record's status is consistent with the active and pool lists.
    pub fn is_consistent(&self) -> bool {
        let active: BTreeSet<&String> = self.active.iter().collect();
        let pool: BTreeSet<&String> = self.pool.iter().collect();
        active.len() == self.active.len()
            && pool.len() == self.pool.len()
            && self.records.iter().all(|r| {
                (r.status == ProblemStatus::Active) == active.contains(&r.id)
                    && (r.status == ProblemStatus::Pool) == pool.contains(&r.id)
            })
    }
}
