use std::sync::Arc;
use std::time::Duration;

use deskresearch::agent::RolloutMode;
use deskresearch::gateway::{Clock, SystemClock, ToolInvoker, ToolRequest, ToolResult, ToolSpec};
use deskresearch::orchestrator::{run_batch, Endpoints, RolloutJob};
use deskresearch::seeds;
use deskresearch::simenv::{sim_gateway, SimEnv};
use deskresearch::synth::{synthesize, SynthConfig};
use deskresearch::trainer::{TemplatePolicy, TrainConfig};

/// Sleeps for real on about 30% of calls, keyed on the request so the
/// spike pattern is the same whatever the scheduling.
struct Spiky<T>(T);

impl<T: ToolInvoker> ToolInvoker for Spiky<T> {
    fn invoke(&self, request: &ToolRequest) -> ToolResult {
        let h = seeds::hash_str(&format!("{}{}", request.tool_name, request.arguments));
        if seeds::unit_interval(h) < 0.3 {
            std::thread::sleep(Duration::from_millis(2 + h % 8));
        }
        self.0.invoke(request)
    }

    fn tool_specs(&self) -> Vec<ToolSpec> {
        self.0.tool_specs()
    }
}

#[test]
fn batch_output_is_independent_of_concurrency() {
    let s = synthesize(&SynthConfig { seed: 31, n_entities: 80, n_tasks: 25, ..SynthConfig::default() }).unwrap();
    let env = Arc::new(SimEnv::new(s.corpus).unwrap());
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let tools = Spiky(sim_gateway(env, clock).unwrap());
    let endpoints = Endpoints { policy: Arc::new(TemplatePolicy::prior(1.0, 0.5)), tools: Arc::new(tools) };
    let limits = TrainConfig::default().limits();
    let jobs: Vec<RolloutJob> = s
        .tasks
        .iter()
        .flat_map(|t| {
            let mode = if t.hops % 2 == 0 { RolloutMode::React } else { RolloutMode::Cm };
            (1..=2).map(move |slot| (t, mode, slot))
        })
        .map(|(t, mode, slot)| RolloutJob::new(&t.id, &t.question, mode, slot, 17, &limits))
        .collect();
    assert_eq!(jobs.len(), 50);

    let serial = run_batch(&jobs, &endpoints, 1).unwrap();
    assert_eq!(serial.max_in_flight, 1);
    let parallel = run_batch(&jobs, &endpoints, 8).unwrap();
    assert!(parallel.max_in_flight > 1 && parallel.max_in_flight <= 8);
    assert_eq!(serial.trajectories, parallel.trajectories);
}
