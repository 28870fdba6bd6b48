use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, Context};
use deskresearch::agent::{run_cm_rollout, run_react_rollout, RolloutMode};
use deskresearch::config::{parse_override, Config, ConfigError};
use deskresearch::curation::{export_sft, write_sft, Curator, ProblemRecord, SftConfig, SftMode, SftStage};
use deskresearch::eval::{evaluate, read_records, replay_metrics, write_records, EvalOptions, MetricsReport};
use deskresearch::manifest::{Manifest, ManifestEvent};
use deskresearch::merge::{merge, read_tensors, sniff_dtype, write_tensors, MergeSpec, ParamSet, Storable};
use deskresearch::orchestrator::{collect_groups, heavy_mode, CollectedGroup, Endpoints, HeavyOptions};
use deskresearch::rl::ExactMatchJudge;
use deskresearch::simenv::{load_corpus, write_corpus, SimEnv};
use deskresearch::synth::{read_tasks, synthesize, write_tasks, QATask};
use deskresearch::trainer::{policy_gradient, train, TemplatePolicy};
use serde::Serialize;

use crate::{exit, Cli, Command, Mode};

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

trait WithCode<T> {
    fn code(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> WithCode<T> for Result<T, E> {
    fn code(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let code = match &e {
            ConfigError::MissingEndpoint(..) | ConfigError::Endpoint(_) => exit::ENDPOINT,
            ConfigError::SimEnv(_) | ConfigError::PolicyTable(_) => exit::DATA,
            _ => exit::CONFIG,
        };
        Failure { code, error: e.into() }
    }
}

fn load_config(cli: &Cli, extra: &[(&str, toml::Value)]) -> Result<Config, Failure> {
    let mut flags = Vec::new();
    for o in &cli.overrides {
        flags.push(parse_override(o)?);
    }
    if let Some(p) = &cli.policy {
        flags.push(("policy".into(), toml::Value::String(p.clone())));
    }
    if let Some(t) = &cli.tools {
        flags.push(("tools".into(), toml::Value::String(t.clone())));
    }
    if let Some(s) = cli.seed {
        let s = i64::try_from(s).map_err(|_| Failure { code: exit::CONFIG, error: anyhow!("seed {s} is too large") })?;
        flags.push(("run_seed".into(), toml::Value::Integer(s)));
    }
    if let Some(m) = cli.mode {
        let m = match m {
            Mode::React => "react",
            Mode::Cm => "cm",
        };
        flags.push(("mode".into(), toml::Value::String(m.into())));
    }
    if let Some(c) = cli.concurrency {
        flags.push(("concurrency".into(), toml::Value::Integer(c as i64)));
    }
    flags.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
    Ok(Config::layered(cli.config.as_deref(), &flags, &|k| std::env::var(k).ok())?)
}

fn int(v: usize) -> toml::Value {
    toml::Value::Integer(v as i64)
}

fn endpoints(cfg: &Config) -> Result<Endpoints, Failure> {
    Ok(Endpoints {
        policy: cfg.policy_endpoint()?,
        tools: cfg.tool_invoker()?,
    })
}

fn load_tasks(path: &Path) -> Result<Vec<QATask>, Failure> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display())).code(exit::DATA)?;
    read_tasks(BufReader::new(f)).with_context(|| format!("bad task file {}", path.display())).code(exit::DATA)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("cannot create {}", path.display()))
        .code(exit::RUNTIME)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).code(exit::RUNTIME)?;
    w.write_all(b"\n").and_then(|_| w.flush()).code(exit::RUNTIME)
}

fn artifact(manifest: &Manifest, kind: &str, path: &Path) {
    manifest.record(&ManifestEvent::Artifact {
        kind: kind.into(),
        path: path.display().to_string(),
    });
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth { .. } => "synth",
        Command::Index { .. } => "index",
        Command::Rollout { .. } => "rollout",
        Command::Collect { .. } => "collect",
        Command::TrainStep { .. } => "train-step",
        Command::Curate { .. } => "curate",
        Command::Eval { .. } => "eval",
        Command::Heavy { .. } => "heavy",
        Command::Merge { .. } => "merge",
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let manifest = match &cli.manifest {
        Some(p) => Manifest::append(p).with_context(|| format!("cannot open manifest {}", p.display())).code(exit::RUNTIME)?,
        None => Manifest::discard(),
    };
    let mut extra: Vec<(&str, toml::Value)> = Vec::new();
    if let Command::Synth { n_tasks, entities, min_hops, max_hops, obfuscation, .. } = &cli.command {
        if let Some(s) = cli.seed {
            extra.push(("synth.seed", toml::Value::Integer(s as i64)));
        }
        let opt = [("synth.n_tasks", n_tasks), ("synth.n_entities", entities), ("synth.min_hops", min_hops), ("synth.max_hops", max_hops)];
        for (k, v) in opt {
            if let Some(v) = v {
                extra.push((k, int(*v)));
            }
        }
        if let Some(o) = obfuscation {
            extra.push(("synth.obfuscation_level", int(*o as usize)));
        }
    }
    let cfg = load_config(&cli, &extra)?;
    manifest.record(&ManifestEvent::RunStart {
        command: command_name(&cli.command).into(),
        seed: cfg.run_seed,
    });
    let result = dispatch(&cli.command, &cfg, &manifest);
    manifest.record(&ManifestEvent::RunEnd { ok: result.is_ok() });
    result
}

fn dispatch(command: &Command, cfg: &Config, manifest: &Manifest) -> Result<(), Failure> {
    match command {
        Command::Synth { out_dir, .. } => {
            let s = synthesize(&cfg.synth).code(exit::CONFIG)?;
            std::fs::create_dir_all(out_dir).code(exit::RUNTIME)?;
            let tasks_path = out_dir.join("tasks.jsonl");
            let corpus_path = out_dir.join("corpus.jsonl");
            let mut w = create(&tasks_path)?;
            write_tasks(&mut w, &s.tasks).code(exit::RUNTIME)?;
            w.flush().code(exit::RUNTIME)?;
            let mut w = create(&corpus_path)?;
            write_corpus(&mut w, &s.corpus).code(exit::RUNTIME)?;
            w.flush().code(exit::RUNTIME)?;
            artifact(manifest, "tasks", &tasks_path);
            artifact(manifest, "corpus", &corpus_path);
            println!(
                "{} tasks over {} entities and {} relations -> {}",
                s.tasks.len(),
                s.graph.entities.len(),
                s.graph.relations.len(),
                out_dir.display()
            );
        }
        Command::Index { corpus, out, query } => {
            let docs = load_corpus(corpus).with_context(|| format!("bad corpus {}", corpus.display())).code(exit::DATA)?;
            let env = SimEnv::new(docs).code(exit::DATA)?;
            std::fs::write(out, env.index().to_bytes()).code(exit::RUNTIME)?;
            artifact(manifest, "index", out);
            println!("indexed {} documents -> {}", env.docs().len(), out.display());
            for q in query {
                println!("\n# {q}");
                for (i, hit) in env.search(q).iter().enumerate() {
                    println!("{}. {} <{}>\n   {}", i + 1, hit.title, hit.url, hit.snippet);
                }
            }
        }
        Command::Rollout { question, out } => {
            let ep = endpoints(cfg)?;
            let mut limits = cfg.limits.clone();
            limits.seed = cfg.run_seed;
            let trajectory = match cfg.mode {
                RolloutMode::React => run_react_rollout(question, ep.policy.as_ref(), ep.tools.as_ref(), &limits),
                RolloutMode::Cm => run_cm_rollout(question, ep.policy.as_ref(), ep.tools.as_ref(), &limits).trajectory,
            };
            if let Some(path) = out {
                write_json(path, &trajectory)?;
                artifact(manifest, "trajectory", path);
            }
            println!(
                "termination: {:?}\ntool calls: {}\nanswer: {}",
                trajectory.termination,
                trajectory.tool_calls(),
                trajectory.final_answer().unwrap_or("(none)")
            );
        }
        Command::Collect { tasks, out, group_size } => {
            let tasks = load_tasks(tasks)?;
            let ep = endpoints(cfg)?;
            let g = group_size.unwrap_or(cfg.group_size);
            let c = collect_groups(&tasks, g, cfg.mode, &ep, &cfg.limits, cfg.run_seed, cfg.concurrency, &ExactMatchJudge, manifest)
                .code(exit::RUNTIME)?;
            let mut w = create(out)?;
            for group in &c.groups {
                serde_json::to_writer(&mut w, group).code(exit::RUNTIME)?;
                w.write_all(b"\n").code(exit::RUNTIME)?;
            }
            w.flush().code(exit::RUNTIME)?;
            artifact(manifest, "groups", out);
            let mean = c.groups.iter().map(CollectedGroup::mean_reward).sum::<f64>() / c.groups.len().max(1) as f64;
            println!("{} groups ({} dropped), mean reward {mean:.4} -> {}", c.groups.len(), c.dropped.len(), out.display());
        }
        Command::TrainStep { groups, table, out, lr, closed_loop } => {
            if *closed_loop {
                let report = train(&cfg.train, manifest).code(exit::RUNTIME)?;
                write_json(out, &report.table)?;
                artifact(manifest, "policy_table", out);
                println!(
                    "{} tasks, {} steps: mean reward {:.4} -> {:.4}",
                    report.n_tasks,
                    report.steps.len(),
                    report.baseline,
                    report.final_reward
                );
                return Ok(());
            }
            let path = groups.as_ref().expect("clap requires --groups");
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display())).code(exit::DATA)?;
            let collected: Vec<CollectedGroup> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<Result<_, _>>()
                .with_context(|| format!("bad group file {}", path.display()))
                .code(exit::DATA)?;
            let mut policy = match table {
                Some(t) => deskresearch::config::load_policy_table(t)?,
                None => TemplatePolicy::prior(cfg.train.prior_skill, cfg.train.prior_rush),
            };
            let clip = cfg.train.clip().code(exit::CONFIG)?;
            let lr = lr.unwrap_or(cfg.train.learning_rate);
            let temperature = cfg.limits.sampling.temperature;
            match policy_gradient(&policy, &collected, &clip, temperature, 0).code(exit::DATA)? {
                Some((loss, clip_fraction, grad)) => {
                    for (p, g) in policy.table.iter_mut().zip(&grad) {
                        *p -= lr * g;
                    }
                    let mean = collected.iter().map(CollectedGroup::mean_reward).sum::<f64>() / collected.len().max(1) as f64;
                    manifest.record(&ManifestEvent::TrainStep {
                        step: 1,
                        loss,
                        mean_reward: mean,
                        clip_fraction,
                        groups: collected.len(),
                    });
                    println!("loss {loss:.6}, clip fraction {clip_fraction:.4}");
                }
                None => println!("no group kept two scored rollouts; table unchanged"),
            }
            write_json(out, &policy.table)?;
            artifact(manifest, "policy_table", out);
        }
        Command::Curate { tasks, out, sft } => {
            let tasks = load_tasks(tasks)?;
            let ep = endpoints(cfg)?;
            let k = cfg.curation.k_probe;
            let c = collect_groups(&tasks, k, cfg.mode, &ep, &cfg.limits, cfg.run_seed, cfg.concurrency, &ExactMatchJudge, manifest)
                .code(exit::RUNTIME)?;
            let probes = c
                .groups
                .iter()
                .map(|g| {
                    let successes = g.rewards.iter().filter(|r| r.reward == 1).count();
                    (g.question_id.clone(), deskresearch::curation::Probe { successes, k: g.rewards.len() })
                })
                .collect();
            let records = tasks.iter().map(|t| ProblemRecord::new(&t.id, &t.question, &t.answer)).collect();
            let mut curator = Curator::new(records, cfg.curation.clone()).code(exit::CONFIG)?;
            curator.initial_filter(&probes).code(exit::RUNTIME)?;
            for e in curator.events() {
                manifest.record(&ManifestEvent::Curation { detail: e.clone() });
            }
            #[derive(Serialize)]
            struct CurationOut<'a> {
                active: &'a [String],
                records: &'a [ProblemRecord],
            }
            write_json(out, &CurationOut { active: curator.active(), records: curator.records() })?;
            artifact(manifest, "curation", out);
            println!("{} of {} problems active -> {}", curator.active().len(), tasks.len(), out.display());
            if let Some(sft_path) = sft {
                let items: Vec<_> = c
                    .groups
                    .iter()
                    .flat_map(|g| g.trajectories.iter().cloned().zip(g.rewards.iter().cloned()))
                    .collect();
                let mode = match cfg.mode {
                    RolloutMode::React => SftMode::React,
                    RolloutMode::Cm => SftMode::Cm,
                };
                let registry = ep.tools.tool_specs();
                let export = export_sft(&items, mode, SftStage::Short, &registry, &SftConfig::default());
                let mut w = create(sft_path)?;
                write_sft(&mut w, &export.samples).code(exit::RUNTIME)?;
                w.flush().code(exit::RUNTIME)?;
                artifact(manifest, "sft", sft_path);
                println!("{} SFT samples ({} trajectories rejected) -> {}", export.samples.len(), export.rejected.len(), sft_path.display());
            }
        }
        Command::Eval { tasks, runs, out, trajectories, replay } => {
            let report: MetricsReport = if let Some(path) = replay {
                let f = File::open(path).with_context(|| format!("cannot open {}", path.display())).code(exit::DATA)?;
                let records = read_records(BufReader::new(f)).code(exit::DATA)?;
                replay_metrics(&records, &ExactMatchJudge).code(exit::DATA)?
            } else {
                let tasks = load_tasks(tasks.as_ref().expect("clap requires --tasks"))?;
                let ep = endpoints(cfg)?;
                let opts = EvalOptions {
                    runs: runs.unwrap_or(cfg.runs),
                    mode: cfg.mode,
                    limits: cfg.limits.clone(),
                    run_seed: cfg.run_seed,
                    concurrency: cfg.concurrency,
                };
                let run = evaluate(&tasks, &ep, &ExactMatchJudge, &opts, manifest).code(exit::RUNTIME)?;
                let mut w = create(trajectories)?;
                write_records(&mut w, &run.records).code(exit::RUNTIME)?;
                w.flush().code(exit::RUNTIME)?;
                artifact(manifest, "trajectories", trajectories);
                run.report
            };
            write_json(out, &report)?;
            artifact(manifest, "metrics", out);
            print!("{}", report.render_table());
        }
        Command::Heavy { question, n, synthesize } => {
            let ep = endpoints(cfg)?;
            let opts = HeavyOptions {
                n: n.unwrap_or(cfg.heavy.n),
                limits: cfg.limits.clone(),
                run_seed: cfg.run_seed,
                concurrency: cfg.concurrency,
                answer_cap: cfg.heavy.answer_cap,
            };
            let synthesis = synthesize.then(|| ep.policy.clone());
            let run = heavy_mode(question, ep.policy.clone(), std::slice::from_ref(&ep.tools), synthesis.as_deref(), &opts)
                .code(exit::RUNTIME)?;
            for r in &run.reports {
                println!("agent {}: {:?}, answer {}", r.agent, r.termination, r.answer.as_deref().unwrap_or("(none)"));
            }
            let how = if run.synthesized { "synthesis" } else { "vote" };
            println!("final answer ({how}): {}", run.final_answer);
        }
        Command::Merge { weights, inputs, out } => {
            let spec = MergeSpec::new(weights.clone()).code(exit::DATA)?;
            let first = inputs.first().expect("clap requires inputs");
            let bytes = std::fs::read(first).with_context(|| format!("cannot read {}", first.display())).code(exit::DATA)?;
            match sniff_dtype(&bytes).code(exit::DATA)?.as_str() {
                "f32" => merge_files::<f32>(inputs, &spec, out)?,
                "f64" => merge_files::<f64>(inputs, &spec, out)?,
                other => return Err(anyhow!("unsupported dtype {other}")).code(exit::DATA),
            }
            artifact(manifest, "merged", out);
            println!("merged {} parameter sets -> {}", inputs.len(), out.display());
        }
    }
    Ok(())
}

fn merge_files<T: Storable>(inputs: &[std::path::PathBuf], spec: &MergeSpec, out: &Path) -> Result<(), Failure> {
    let sets = inputs
        .iter()
        .map(|p| read_tensors::<T>(p).with_context(|| format!("cannot load {}", p.display())))
        .collect::<Result<Vec<ParamSet<T>>, _>>()
        .code(exit::DATA)?;
    let merged = merge(&sets, spec).code(exit::DATA)?;
    write_tensors(out, &merged).code(exit::RUNTIME)?;
    Ok(())
}
