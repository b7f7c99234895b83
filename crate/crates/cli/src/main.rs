//! `trace-forge`: build anchored execution-trace data, score responses and
//! compute step-level advantages.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (the offending record id
//! is printed on stderr).

mod io;

use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing_subscriber::EnvFilter;

use trace_forge_core::advantage::{self, AdvantageMatrix, GroupRewards};
use trace_forge_core::align::{align, QueryRecord};
use trace_forge_core::codec::{self, Parsed, ResponseRecord};
use trace_forge_core::executor::{Executor, ExecutorConfig, DEFAULT_TIMEOUT_MS};
use trace_forge_core::instrument::{instrument, InstrumentationConfig};
use trace_forge_core::pipeline::{self, BenchRecord, InputRecord, PipelineConfig, ProgramRecord, RlRecord};
use trace_forge_core::reward::{score, score_input_task, RewardConfig, RewardVector, TraceMode};
use trace_forge_core::sim::{self, Method, PlotConfig, SyntheticEnv, TrainConfig};
use trace_forge_core::{ExecutionTrace, InstrumentedProgram, TaskKind, TraceRecord, TrajectoryRecord};

use io::{read_records, write_records, RecordError};

#[derive(Parser)]
#[command(name = "trace-forge", version, about = "Anchored execution traces for code-reasoning data")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Seed for every stochastic stage.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker parallelism for trace, score and build stages.
    #[arg(long, global = true, default_value_t = 1)]
    pool: usize,

    /// Only log errors.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Args)]
struct Output {
    /// Output JSONL path; stdout when omitted or `-`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Backend {
    /// Replay recorded executions instead of starting a shim.
    #[arg(long)]
    fixtures: Option<PathBuf>,

    /// Per-execution timeout.
    #[arg(long, default_value_t = DEFAULT_TIMEOUT_MS)]
    timeout_ms: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Insert anchor prints into programs.
    Instrument {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        out: Output,
        #[arg(long, default_value_t = 0.0)]
        dropout: f64,
        #[arg(long, default_value_t = 10)]
        max_anchors: usize,
    },
    /// Execute instrumented programs and record their traces.
    Trace {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        inputs: PathBuf,
        #[command(flatten)]
        out: Output,
        #[command(flatten)]
        backend: Backend,
        /// Save every live execution as a fixture file.
        #[arg(long)]
        record_fixtures: Option<PathBuf>,
    },
    /// Split responses into tagged blocks and check their shape.
    Parse {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "output")]
        task: TaskKind,
        #[command(flatten)]
        out: Output,
    },
    /// Score parsed trajectories against ground-truth traces.
    Score {
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        traces: PathBuf,
        #[arg(long, default_value = "output")]
        task: TaskKind,
        /// Task instances (rl.jsonl); needed for input-prediction scoring.
        #[arg(long)]
        instances: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ModeArg::GtInput)]
        trace_mode: ModeArg,
        #[arg(long, default_value_t = 1.0)]
        r_internal: f64,
        #[arg(long, default_value_t = 1.0)]
        r_final: f64,
        #[command(flatten)]
        backend: Backend,
        #[command(flatten)]
        out: Output,
    },
    /// Group rewards by instance and compute advantages.
    Advantage {
        #[arg(long)]
        rewards: PathBuf,
        #[arg(long, default_value_t = advantage::DEFAULT_LAMBDA)]
        lambda: f64,
        #[arg(long, default_value_t = advantage::DEFAULT_EPSILON)]
        epsilon: f64,
        #[command(flatten)]
        out: Output,
    },
    /// Build SFT/RL data from programs and inputs.
    BuildDataset {
        #[arg(long)]
        programs: PathBuf,
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long)]
        bench: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        max_trace: usize,
        #[arg(long, default_value_t = 10)]
        ngram: usize,
        #[arg(long, default_value_t = 10)]
        max_anchors: usize,
        #[arg(long, default_value_t = 0.0)]
        dropout: f64,
        /// Skip the original-vs-instrumented equivalence run.
        #[arg(long)]
        no_verify: bool,
        #[command(flatten)]
        backend: Backend,
    },
    /// Remap line-numbered queries into instrumented coordinates.
    Align {
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        maps: PathBuf,
        #[command(flatten)]
        out: Output,
    },
    /// Train the tabular policy testbed and write curves.
    Simulate {
        #[arg(long, value_enum, default_value_t = MethodArg::All)]
        method: MethodArg,
        #[arg(long, default_value_t = advantage::DEFAULT_LAMBDA)]
        lambda: f64,
        #[arg(long, default_value_t = 5)]
        group: usize,
        #[arg(long, default_value_t = 1500)]
        steps: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 0.01)]
        kl_coef: f64,
        #[arg(long, value_enum, default_value_t = EnvArg::Hard)]
        env: EnvArg,
        /// Moving-average window for the smoothed curves.
        #[arg(long, default_value_t = 50)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    GtInput,
    CommittedInput,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum MethodArg {
    Terminal,
    StepGroup,
    Bilevel,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvArg {
    /// Six anchors, eight choices, answer needs the whole trace.
    Hard,
    /// One anchor, four choices.
    Single,
}

#[derive(Serialize, Deserialize)]
struct RewardRecord {
    instance_id: String,
    #[serde(flatten)]
    reward: RewardVector,
}

#[derive(Serialize)]
struct AdvantageRecord {
    instance_id: String,
    #[serde(flatten)]
    advantages: AdvantageMatrix,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = if cli.quiet { "error" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level)))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn executor(backend: &Backend, pool: usize) -> Result<Executor> {
    let cfg = ExecutorConfig {
        pool_size: pool,
        timeout_ms: backend.timeout_ms,
        fixture_path: backend.fixtures.clone(),
        shim: None,
    };
    Executor::new(cfg).context("cannot set up execution backend (pass --fixtures or set TRACE_FORGE_SHIM)")
}

fn thread_pool(pool: usize) -> Result<rayon::ThreadPool> {
    if pool == 0 {
        bail!("--pool must be at least 1");
    }
    Ok(rayon::ThreadPoolBuilder::new().num_threads(pool).build()?)
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    let pool = cli.pool;
    match cli.command {
        Command::Instrument {
            input,
            out,
            dropout,
            max_anchors,
        } => {
            let cfg = InstrumentationConfig {
                max_static_anchors: max_anchors,
                dropout_rate: dropout,
                rng_seed: seed.unwrap_or(0),
                ..Default::default()
            };
            cfg.validate()?;
            let programs = pipeline::assign_ids(read_records::<ProgramRecord>(&input)?);
            let instrumented = programs
                .iter()
                .map(|p| instrument(p, &cfg).map_err(|e| RecordError::new(&p.id, e).into()))
                .collect::<Result<Vec<_>>>()?;
            write_records(out.out.as_deref(), &instrumented)
        }
        Command::Trace {
            input,
            inputs,
            out,
            backend,
            record_fixtures,
        } => {
            let programs: Vec<InstrumentedProgram> = read_records(&input)?;
            let inputs: Vec<InputRecord> = read_records(&inputs)?;
            let mut ex = executor(&backend, pool)?;
            if record_fixtures.is_some() {
                ex = ex.recording();
            }
            let by_id: HashMap<&str, &InstrumentedProgram> =
                programs.iter().map(|p| (p.origin_id.as_str(), p)).collect();
            let traces = thread_pool(pool)?.install(|| {
                inputs
                    .par_iter()
                    .map(|rec| {
                        let program = by_id
                            .get(rec.id.as_str())
                            .ok_or_else(|| RecordError::new(&rec.id, "no instrumented program with this id"))?;
                        let trace = ex
                            .generate_trace(program, &rec.input)
                            .map_err(|e| RecordError::new(&rec.id, e))?;
                        Ok(TraceRecord {
                            origin_id: rec.id.clone(),
                            trace,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            if let Some(path) = record_fixtures {
                ex.take_recorded().save(&path)?;
            }
            write_records(out.out.as_deref(), &traces)
        }
        Command::Parse { input, task, out } => {
            let responses: Vec<ResponseRecord> = read_records(&input)?;
            let parsed: Vec<TrajectoryRecord> = responses
                .into_iter()
                .map(|r| match codec::parse(&r.text, task) {
                    Ok(p) => TrajectoryRecord {
                        instance_id: r.instance_id,
                        blocks: p.blocks().to_vec(),
                        malformed: p.shape_error().map(|e| e.to_string()),
                    },
                    Err(e) => TrajectoryRecord {
                        instance_id: r.instance_id,
                        blocks: Vec::new(),
                        malformed: Some(e.to_string()),
                    },
                })
                .collect();
            write_records(out.out.as_deref(), &parsed)
        }
        Command::Score {
            trajectories,
            traces,
            task,
            instances,
            trace_mode,
            r_internal,
            r_final,
            backend,
            out,
        } => {
            let cfg = RewardConfig {
                r_internal_budget: r_internal,
                r_final,
                input_task_trace_mode: match trace_mode {
                    ModeArg::GtInput => TraceMode::GtInput,
                    ModeArg::CommittedInput => TraceMode::CommittedInput,
                },
            };
            cfg.validate()?;
            let trajectories: Vec<TrajectoryRecord> = read_records(&trajectories)?;
            let traces: Vec<TraceRecord> = read_records(&traces)?;
            let mut by_origin = HashMap::new();
            for t in &traces {
                if by_origin.insert(t.origin_id.as_str(), &t.trace).is_some() {
                    return Err(RecordError::new(&t.origin_id, "duplicate trace id").into());
                }
            }
            let instances: HashMap<String, RlRecord> = match &instances {
                Some(path) => read_records::<RlRecord>(path)?
                    .into_iter()
                    .map(|r| (r.id.clone(), r))
                    .collect(),
                None => HashMap::new(),
            };
            let ex = match (task, instances.is_empty()) {
                (TaskKind::InputPrediction, true) => {
                    bail!("--task input needs --instances with the task records")
                }
                (TaskKind::InputPrediction, false) => executor(&backend, pool)?,
                (TaskKind::OutputPrediction, _) => Executor::replay(Default::default()),
            };
            let rewards = thread_pool(pool)?.install(|| {
                trajectories
                    .par_iter()
                    .map(|t| {
                        let parsed = parsed_record(t, task);
                        let reward = match task {
                            TaskKind::OutputPrediction => {
                                let trace = lookup_trace(&by_origin, &t.instance_id)?;
                                score(&parsed, trace, &cfg, &ex)
                            }
                            TaskKind::InputPrediction => {
                                let inst = instances
                                    .get(&t.instance_id)
                                    .ok_or_else(|| RecordError::new(&t.instance_id, "no task instance"))?;
                                score_input_task(&parsed, &inst.instance, &cfg, &ex)
                                    .map_err(|e| RecordError::new(&t.instance_id, e))?
                            }
                        };
                        Ok(RewardRecord {
                            instance_id: t.instance_id.clone(),
                            reward,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            write_records(out.out.as_deref(), &rewards)
        }
        Command::Advantage {
            rewards,
            lambda,
            epsilon,
            out,
        } => {
            let records: Vec<RewardRecord> = read_records(&rewards)?;
            let mut order: Vec<&str> = Vec::new();
            let mut groups: HashMap<&str, Vec<RewardVector>> = HashMap::new();
            for r in &records {
                let group = groups.entry(r.instance_id.as_str()).or_default();
                if group.is_empty() {
                    order.push(&r.instance_id);
                }
                group.push(r.reward.clone());
            }
            let out_records = order
                .into_iter()
                .map(|id| {
                    let rewards = GroupRewards::from_vectors(&groups[id])
                        .and_then(|g| advantage::compute(&g, lambda, epsilon))
                        .map_err(|e| RecordError::new(id, e))?;
                    Ok(AdvantageRecord {
                        instance_id: id.to_string(),
                        advantages: rewards,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            write_records(out.out.as_deref(), &out_records)
        }
        Command::BuildDataset {
            programs,
            inputs,
            bench,
            out_dir,
            max_trace,
            ngram,
            max_anchors,
            dropout,
            no_verify,
            backend,
        } => {
            let cfg = PipelineConfig {
                max_trace_lines: max_trace,
                ngram_k: ngram,
                dropout_rate: dropout,
                seed: seed.unwrap_or(0),
                max_static_anchors: max_anchors,
                verify_equivalence: !no_verify,
            };
            let programs = pipeline::assign_ids(read_records::<ProgramRecord>(&programs)?);
            let inputs: Vec<InputRecord> = read_records(&inputs)?;
            let bench: Vec<BenchRecord> = match &bench {
                Some(path) => read_records(path)?,
                None => Vec::new(),
            };
            let ex = executor(&backend, pool)?;
            let output = thread_pool(pool)?.install(|| pipeline::build(&programs, &inputs, &bench, &cfg, &ex))?;
            output.write(&out_dir)?;
            let stats = output.stats();
            tracing::info!(?stats, "dataset written");
            eprintln!(
                "{} samples: {} sft, {} rl, {} terminal-only, {} rejected",
                stats.samples, stats.sft, stats.rl, stats.terminal_only, stats.rejected
            );
            Ok(())
        }
        Command::Align { queries, maps, out } => {
            let queries: Vec<QueryRecord> = read_records(&queries)?;
            let maps: Vec<InstrumentedProgram> = read_records(&maps)?;
            let by_id: HashMap<&str, &InstrumentedProgram> =
                maps.iter().map(|p| (p.origin_id.as_str(), p)).collect();
            let aligned = queries
                .iter()
                .map(|q| {
                    let program = by_id
                        .get(q.origin_id.as_str())
                        .ok_or_else(|| RecordError::new(&q.origin_id, "no line map for this id"))?;
                    let query = align(&q.query, &program.line_map).map_err(|e| RecordError::new(&q.origin_id, e))?;
                    Ok(QueryRecord {
                        origin_id: q.origin_id.clone(),
                        query,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            write_records(out.out.as_deref(), &aligned)
        }
        Command::Simulate {
            method,
            lambda,
            group,
            steps,
            lr,
            kl_coef,
            env,
            window,
            out,
        } => {
            let env = match env {
                EnvArg::Hard => SyntheticEnv::hard(),
                EnvArg::Single => SyntheticEnv::single(4),
            };
            let methods: Vec<Method> = match method {
                MethodArg::All => Method::ALL.to_vec(),
                MethodArg::Terminal => vec![Method::Terminal],
                MethodArg::StepGroup => vec![Method::StepGroup],
                MethodArg::Bilevel => vec![Method::Bilevel],
            };
            let seeds: Vec<u64> = seed.map_or(sim::DEFAULT_SEEDS.to_vec(), |s| vec![s]);
            let configs: Vec<TrainConfig> = methods
                .iter()
                .flat_map(|&method| {
                    seeds.iter().map(move |&seed| TrainConfig {
                        method,
                        steps,
                        lr,
                        lambda,
                        group,
                        kl_coef,
                        seed,
                        ..Default::default()
                    })
                })
                .collect();
            let curves = thread_pool(pool)?.install(|| {
                configs
                    .par_iter()
                    .map(|cfg| sim::train(&env, cfg).map(|(c, _)| c))
                    .collect::<Result<Vec<_>, _>>()
            })?;
            let plot = PlotConfig {
                window,
                ..Default::default()
            };
            sim::plot_curves(&curves, &out, &plot)?;
            write_records(Some(&out.join("curves.jsonl")), &curves)?;
            if !cli.quiet {
                for c in &curves {
                    let last = c.last();
                    eprintln!(
                        "{} seed {}: final reward {:.4}, stepwise accuracy {:.4}",
                        c.method, c.seed, last.expected_final_reward, last.stepwise_accuracy
                    );
                }
            }
            Ok(())
        }
    }
}

/// Re-validates stored blocks; records with unbalanced tags carry none and
/// come back malformed.
fn parsed_record(t: &TrajectoryRecord, task: TaskKind) -> Parsed {
    codec::from_blocks(t.blocks.clone(), task)
}

/// Exact id first, then the id with its `:output`/`:input` suffix removed.
fn lookup_trace<'a>(
    by_origin: &HashMap<&str, &'a ExecutionTrace>,
    instance_id: &str,
) -> Result<&'a ExecutionTrace> {
    let base = instance_id.rsplit_once(':').map(|(b, _)| b);
    by_origin
        .get(instance_id)
        .or_else(|| base.and_then(|b| by_origin.get(b)))
        .copied()
        .ok_or_else(|| RecordError::new(instance_id, "no trace with this id").into())
}
