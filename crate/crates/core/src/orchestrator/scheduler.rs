use std::collections::{HashSet, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;

use super::{OrchestratorError, RolloutJob};
use crate::agent::{Effect, PolicyEndpoint, PolicyError, RolloutMachine, Trajectory};
use crate::gateway::{Source, Status, ToolInvoker, ToolResult};
use crate::seeds;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    /// One trajectory per job, in job order.
    pub trajectories: Vec<Trajectory>,
    /// Highest number of rollouts alive at once.
    pub max_in_flight: usize,
}

struct Continuation {
    job: usize,
    machine: RolloutMachine,
    effect: Effect,
}

fn check_jobs(jobs: &[RolloutJob], limit: usize) -> Result<(), OrchestratorError> {
    if limit == 0 {
        return Err(OrchestratorError::ZeroConcurrency);
    }
    let mut seen = HashSet::new();
    for j in jobs {
        if !seen.insert((j.question_id.as_str(), j.slot)) {
            return Err(OrchestratorError::DuplicateJob(j.question_id.clone(), j.slot));
        }
    }
    Ok(())
}

fn start(job: usize, spec: &RolloutJob, tools: &dyn ToolInvoker) -> Continuation {
    let mut machine = RolloutMachine::new(
        spec.mode,
        spec.question.clone(),
        tools.tool_specs().into(),
        spec.limits.clone(),
    );
    let effect = machine.poll();
    Continuation { job, machine, effect }
}

/// Performs the pending effect and advances to the next one. Panics in either
/// endpoint are contained and reported to the machine as failures.
fn step(c: &mut Continuation, policy: &dyn PolicyEndpoint, tools: &dyn ToolInvoker) {
    match &c.effect {
        Effect::Done => return,
        Effect::CallPolicy { messages, sampling } => {
            let r = catch_unwind(AssertUnwindSafe(|| policy.scored_generate(messages, sampling)))
                .unwrap_or_else(|_| Err(PolicyError::Transport("policy panicked".into())));
            c.machine.feed_policy(r);
        }
        Effect::CallTool(request) => {
            let r = catch_unwind(AssertUnwindSafe(|| tools.invoke(request))).unwrap_or_else(|_| ToolResult {
                tool_name: request.tool_name.clone(),
                status: Status::Error,
                payload: "tool invoker panicked".into(),
                source: Source::Primary,
                attempts: 0,
                latency_ms: 0,
            });
            c.machine.feed_tool(&r);
        }
    }
    c.effect = c.machine.poll();
}

struct Shared {
    pending: VecDeque<usize>,
    ready: VecDeque<Continuation>,
    results: Vec<Option<Trajectory>>,
    in_flight: usize,
    max_in_flight: usize,
    remaining: usize,
}

impl Shared {
    fn admit(&mut self, jobs: &[RolloutJob], tools: &[Arc<dyn ToolInvoker>], limit: usize) {
        while self.in_flight < limit {
            let Some(j) = self.pending.pop_front() else { break };
            self.in_flight += 1;
            self.max_in_flight = self.max_in_flight.max(self.in_flight);
            let c = start(j, &jobs[j], tools[j].as_ref());
            self.settle(c);
        }
    }

    fn settle(&mut self, c: Continuation) {
        if matches!(c.effect, Effect::Done) {
            self.results[c.job] = Some(c.machine.into_trajectory());
            self.in_flight -= 1;
            self.remaining -= 1;
        } else {
            self.ready.push_back(c);
        }
    }
}

/// Runs `jobs` on a pool of `limit` workers with at most `limit` rollouts in
/// flight. Each worker performs one effect of one rollout, then returns the
/// rollout to the back of a FIFO ready queue, so a slow call only occupies
/// its own worker. `tools` holds one invoker per job.
pub(crate) fn execute(
    jobs: &[RolloutJob],
    policy: Arc<dyn PolicyEndpoint>,
    tools: Vec<Arc<dyn ToolInvoker>>,
    limit: usize,
) -> Result<BatchOutput, OrchestratorError> {
    check_jobs(jobs, limit)?;
    if tools.len() != jobs.len() {
        return Err(OrchestratorError::ToolEndpointCount {
            expected: jobs.len(),
            got: tools.len(),
        });
    }
    let shared = Mutex::new(Shared {
        pending: (0..jobs.len()).collect(),
        ready: VecDeque::new(),
        results: vec![None; jobs.len()],
        in_flight: 0,
        max_in_flight: 0,
        remaining: jobs.len(),
    });
    let wake = Condvar::new();
    shared.lock().unwrap().admit(jobs, &tools, limit);

    thread::scope(|scope| {
        for _ in 0..limit.min(jobs.len().max(1)) {
            scope.spawn(|| loop {
                let mut c = {
                    let mut s = shared.lock().unwrap();
                    loop {
                        if let Some(c) = s.ready.pop_front() {
                            break c;
                        }
                        if s.remaining == 0 {
                            return;
                        }
                        s = wake.wait(s).unwrap();
                    }
                };
                let tool = tools[c.job].clone();
                step(&mut c, policy.as_ref(), tool.as_ref());
                let mut s = shared.lock().unwrap();
                s.settle(c);
                s.admit(jobs, &tools, limit);
                wake.notify_all();
            });
        }
    });

    let s = shared.into_inner().unwrap();
    Ok(BatchOutput {
        trajectories: s.results.into_iter().map(|t| t.expect("every job finishes")).collect(),
        max_in_flight: s.max_in_flight,
    })
}

pub fn run_batch(
    jobs: &[RolloutJob],
    endpoints: &super::Endpoints,
    concurrency_limit: usize,
) -> Result<BatchOutput, OrchestratorError> {
    execute(
        jobs,
        endpoints.policy.clone(),
        vec![endpoints.tools.clone(); jobs.len()],
        concurrency_limit,
    )
}

/// Single-threaded run where each step picks a random ready rollout. Used to
/// exercise interleavings the threaded scheduler might not produce.
pub fn run_batch_interleaved(
    jobs: &[RolloutJob],
    endpoints: &super::Endpoints,
    concurrency_limit: usize,
    order_seed: u64,
) -> Result<BatchOutput, OrchestratorError> {
    check_jobs(jobs, concurrency_limit)?;
    let tools = vec![endpoints.tools.clone(); jobs.len()];
    let mut s = Shared {
        pending: (0..jobs.len()).collect(),
        ready: VecDeque::new(),
        results: vec![None; jobs.len()],
        in_flight: 0,
        max_in_flight: 0,
        remaining: jobs.len(),
    };
    let mut rng = seeds::rng(order_seed);
    s.admit(jobs, &tools, concurrency_limit);
    while !s.ready.is_empty() {
        let i = seeds::pick(&mut rng, s.ready.len());
        let mut c = s.ready.remove(i).expect("index in range");
        let tool = tools[c.job].clone();
        step(&mut c, endpoints.policy.as_ref(), tool.as_ref());
        s.settle(c);
        s.admit(jobs, &tools, concurrency_limit);
    }
    Ok(BatchOutput {
        trajectories: s.results.into_iter().map(|t| t.expect("every job finishes")).collect(),
        max_in_flight: s.max_in_flight,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{run_react_rollout, Limits, RolloutMode, ScriptedPolicy, Termination};
    use crate::gateway::{Gateway, ScriptedBackend, SystemClock, ToolSpec};
    use crate::orchestrator::Endpoints;

    fn endpoints() -> Endpoints {
        let gw = Gateway::builder(Arc::new(SystemClock::new()))
            .tool(ToolSpec::builtin("search").unwrap())
            .backend("sim_search", Arc::new(ScriptedBackend::new([Ok("result".into())])))
            .build()
            .unwrap();
        let script = [
            "a\n<tool_call>\n{\"name\": \"search\", \"arguments\": {\"query\": [\"x\"]}}\n</tool_call>",
            "b\n<tool_call>\n{\"name\": \"search\", \"arguments\": {\"query\": [\"y\"]}}\n</tool_call>",
            "done <answer>Z</answer>",
        ];
        Endpoints {
            policy: Arc::new(ScriptedPolicy::new(script)),
            tools: Arc::new(gw),
        }
    }

    fn jobs(n: usize) -> Vec<RolloutJob> {
        (0..n)
            .map(|i| RolloutJob::new(format!("q{i}"), format!("question {i}"), RolloutMode::React, 1, 7, &Limits::default()))
            .collect()
    }

    #[test]
    fn respects_limit_and_orders_results() {
        let ep = endpoints();
        let out = run_batch(&jobs(10), &ep, 3).unwrap();
        assert_eq!(out.max_in_flight, 3);
        assert_eq!(out.trajectories.len(), 10);
        for (i, t) in out.trajectories.iter().enumerate() {
            assert_eq!(t.question, format!("question {i}"));
            assert_eq!(t.termination, Termination::Answered);
        }
    }

    #[test]
    fn single_job_matches_direct_rollout() {
        let ep = endpoints();
        let j = jobs(1);
        let out = run_batch(&j, &ep, 4).unwrap();
        let direct = run_react_rollout(&j[0].question, ep.policy.as_ref(), ep.tools.as_ref(), &j[0].limits);
        assert_eq!(out.trajectories[0], direct);
        let inter = run_batch_interleaved(&j, &ep, 4, 1).unwrap();
        assert_eq!(inter.trajectories, out.trajectories);
    }

    #[test]
    fn rejects_bad_batches() {
        let ep = endpoints();
        assert!(run_batch(&jobs(2), &ep, 0).is_err());
        let mut dup = jobs(2);
        dup[1].question_id = "q0".into();
        assert!(matches!(run_batch(&dup, &ep, 2), Err(OrchestratorError::DuplicateJob(..))));
        assert!(run_batch(&[], &ep, 2).unwrap().trajectories.is_empty());
    }

    #[test]
    fn panicking_policy_becomes_policy_error() {
        struct Boom;
        impl PolicyEndpoint for Boom {
            fn generate(&self, _: &crate::agent::MessageList, _: &crate::agent::SamplingParams) -> Result<String, PolicyError> {
                panic!("boom")
            }
        }
        let mut ep = endpoints();
        ep.policy = Arc::new(Boom);
        let out = run_batch(&jobs(3), &ep, 2).unwrap();
        assert!(out.trajectories.iter().all(|t| t.termination == Termination::PolicyError));
    }
}
