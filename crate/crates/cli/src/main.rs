mod config;
mod eval;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use cfcurate_core::clients::{
    ClientError, HttpPolicy, HttpTeacher, MockPolicy, PolicyClient, PolicyMode, PolicyRequest,
    ScenePayload, StubTeacher, TeacherClient,
};
use cfcurate_core::codec::{parse_response_lenient, TrainingRecord};
use cfcurate_core::par;
use cfcurate_core::pipeline::{
    filter_decision, label_cf_corpus, meta_record, mix_datasets, plan_round, rollout_corpus,
    sample_seed, scatter_export, traj_record, DatasetId, DatasetMixSpec, MixEntry, PipelineError,
    RolloutConfig, RolloutResult, RoundVariant,
};
use cfcurate_core::records::{read_jsonl_file, write_jsonl_file};
use cfcurate_core::scenelab::{label_scene, synth_suite, ScenarioError, Scene, ScriptSuite};

use config::{PolicyBackend, RunConfig, TeacherBackend};
use eval::{evaluate, render_report, Prediction};

#[derive(Parser, Debug)]
#[command(
    name = "cfcurate",
    version,
    about = "Counterfactual data curation for meta-action driving policies"
)]
struct Cli {
    /// TOML run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory relative output paths are resolved against.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate scenes from a script suite.
    Synth {
        #[arg(long)]
        suite: Option<String>,
        #[arg(long, short = 'n')]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Replace each scene's plan with the rule-based labeler output.
    Label {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Free and prefilled rollouts for every scene.
    Rollout {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        sampling: Sampling,
    },
    /// Apply the disagreement filter; write selected ids and a scatter table.
    Filter {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        epsilon: Option<f64>,
        /// One selected scene id per line.
        #[arg(long)]
        selected: PathBuf,
        /// CSV with minade_free, minade_pf, free_iou, selected.
        #[arg(long)]
        scatter: Option<PathBuf>,
    },
    /// Ask the teacher for reasoning on selected scenes and write CF records.
    LabelCf {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        results: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        round: Option<u32>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Build base training records (trajectory-only or meta-action).
    Records {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, value_enum)]
        kind: RecordKind,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Repeat and shuffle record files into one training mixture.
    Mix {
        /// `dataset=path`, e.g. `cf_round_1=cf.jsonl`.
        #[arg(long = "source", required = true)]
        sources: Vec<String>,
        /// `dataset=multiplier`; defaults to 1 for every source.
        #[arg(long = "weight")]
        weights: Vec<String>,
        /// JSON mix spec, e.g. from `round-plan`.
        #[arg(long, conflicts_with = "weights")]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Streaming shuffle buffer size instead of a global shuffle.
        #[arg(long)]
        window: Option<usize>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Sample policy responses for evaluation.
    Predict {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        sampling: Sampling,
    },
    /// Metrics, think statistics and difficulty bands.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        /// Write the report as JSON.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Comma-separated upper band edges in meters.
        #[arg(long, value_delimiter = ',')]
        bands: Option<Vec<f64>>,
    },
    /// Dataset mixture for a training round.
    RoundPlan {
        #[arg(long)]
        round: u32,
        #[arg(long, value_enum, default_value = "three-ds")]
        variant: Variant,
        /// CF rounds that exist; defaults to 1..=round.
        #[arg(long, value_delimiter = ',')]
        available: Option<Vec<u32>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args, Debug)]
struct Sampling {
    /// Mock policy perturbation strength.
    #[arg(long)]
    strength: Option<f64>,
    #[arg(long, short = 'k')]
    samples: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    include_route: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum RecordKind {
    Traj,
    Meta,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Variant {
    ThreeDs,
    FourDs,
}

/// Bad flag values or combinations not caught by the parser.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// A service failure that left nothing usable.
#[derive(Debug)]
struct ServiceError(String);

impl fmt::Display for ServiceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ServiceError {}

/// Failures of the remote side, as opposed to bad input.
fn is_service(e: &ClientError) -> bool {
    !matches!(
        e,
        ClientError::InvalidRequest(_) | ClientError::UnknownScene(_)
    )
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if cause.is::<ServiceError>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<ClientError>() {
            return if is_service(e) { 3 } else { 2 };
        }
        if let Some(PipelineError::Policy { source, .. } | PipelineError::Teacher { source, .. }) =
            cause.downcast_ref()
        {
            return if is_service(source) { 3 } else { 2 };
        }
    }
    2
}

fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    Ok(read_jsonl_file(path)?)
}

fn write<T: Serialize>(cfg: &RunConfig, path: &Path, records: &[T]) -> Result<PathBuf> {
    let path = cfg.output(path);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_jsonl_file(&path, records)?;
    Ok(path)
}

fn read_scenes(path: &Path) -> Result<Vec<Scene>> {
    let scenes: Vec<Scene> = read(path)?;
    for (i, s) in scenes.iter().enumerate() {
        s.validate()
            .with_context(|| format!("{} line {}: scene {}", path.display(), i + 1, s.id))?;
    }
    Ok(scenes)
}

fn policy_client(
    cfg: &RunConfig,
    scenes: &[Scene],
    strength: Option<f64>,
) -> Result<Box<dyn PolicyClient>> {
    Ok(match (&cfg.policy, strength) {
        (
            PolicyBackend::Mock {
                strength: configured,
            },
            flag,
        ) => {
            let s = flag.unwrap_or(*configured);
            if !(0.0..=1.0).contains(&s) {
                return Err(usage(format!("strength {s} is outside [0, 1]")));
            }
            Box::new(MockPolicy::new(scenes, s))
        }
        (PolicyBackend::Http(_), Some(_)) => {
            return Err(usage("--strength only applies to the mock policy"))
        }
        (PolicyBackend::Http(e), None) => Box::new(HttpPolicy::new(e.clone())?),
    })
}

fn teacher_client(cfg: &RunConfig) -> Result<Box<dyn TeacherClient>> {
    Ok(match &cfg.teacher {
        TeacherBackend::Stub => Box::new(StubTeacher),
        TeacherBackend::Http(e) => Box::new(HttpTeacher::new(e.clone())?),
    })
}

fn rollout_config(cfg: &RunConfig, s: &Sampling) -> Result<RolloutConfig> {
    let mut r = cfg.rollout;
    if let Some(k) = s.samples {
        r.samples_per_mode = k;
    }
    if let Some(t) = s.temperature {
        r.temperature = t;
    }
    if let Some(seed) = s.seed {
        r.seed = seed;
    }
    r.include_route |= s.include_route;
    r.validate().map_err(|e| usage(e.to_string()))?;
    Ok(r)
}

fn parse_pair(raw: &str) -> Result<(DatasetId, &str)> {
    let (name, value) = raw
        .split_once('=')
        .ok_or_else(|| usage(format!("expected dataset=value, got `{raw}`")))?;
    let id = name
        .trim()
        .parse::<DatasetId>()
        .map_err(|e| usage(e.to_string()))?;
    Ok((id, value.trim()))
}

/// Fails with a service error when every unit failed because of a client.
fn check_failures(kind: &str, ok: usize, failed: &[PipelineError]) -> Result<()> {
    if failed.is_empty() {
        return Ok(());
    }
    log::warn!(
        "{kind}: {} of {} scenes skipped",
        failed.len(),
        ok + failed.len()
    );
    let service = failed.iter().all(|e| match e {
        PipelineError::Policy { source, .. } | PipelineError::Teacher { source, .. } => {
            is_service(source)
        }
        _ => false,
    });
    if ok == 0 && service {
        return Err(ServiceError(format!(
            "{kind}: every request failed; first error: {}",
            failed[0]
        ))
        .into());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(d) = cli.output_dir {
        cfg.output_dir = d;
    }
    let threads = cfg.threads;
    par::with_threads(threads, move || dispatch(cli.command, &cfg))
}

fn dispatch(command: Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::Synth {
            suite,
            count,
            seed,
            out,
        } => {
            let name = suite
                .unwrap_or_else(|| cfg.synth.suite.clone())
                .replace('-', "_");
            let suite: ScriptSuite = name
                .parse()
                .map_err(|e: ScenarioError| usage(e.to_string()))?;
            let scenes = synth_suite(
                suite,
                count.unwrap_or(cfg.synth.count),
                seed.unwrap_or(cfg.seed),
            )?;
            let path = write(cfg, &out, &scenes)?;
            eprintln!("wrote {} scenes to {}", scenes.len(), path.display());
        }
        Command::Label { scenes, out } => {
            cfg.labeler.validate().map_err(|e| usage(e.to_string()))?;
            let mut scenes = read_scenes(&scenes)?;
            let plans = par::map_ordered(&scenes, |s| {
                label_scene(&s.expert_future, &s.history, s.route.as_ref(), &cfg.labeler)
            });
            for (s, p) in scenes.iter_mut().zip(plans) {
                s.gt_plan = p;
            }
            let path = write(cfg, &out, &scenes)?;
            eprintln!("labeled {} scenes into {}", scenes.len(), path.display());
        }
        Command::Rollout {
            scenes,
            out,
            sampling,
        } => {
            let rcfg = rollout_config(cfg, &sampling)?;
            let scenes = read_scenes(&scenes)?;
            let policy = policy_client(cfg, &scenes, sampling.strength)?;
            let (results, failed) = rollout_corpus(&policy, &scenes, &rcfg);
            check_failures("rollout", results.len(), &failed)?;
            let path = write(cfg, &out, &results)?;
            eprintln!(
                "wrote {} rollout results to {}",
                results.len(),
                path.display()
            );
        }
        Command::Filter {
            results,
            epsilon,
            selected,
            scatter,
        } => {
            let mut fcfg = cfg.filter;
            if let Some(e) = epsilon {
                fcfg.epsilon = e;
            }
            fcfg.validate().map_err(|e| usage(e.to_string()))?;
            let results: Vec<RolloutResult> = read(&results)?;
            let ids: Vec<&str> = results
                .iter()
                .filter(|r| filter_decision(r, &fcfg))
                .map(|r| r.scene_id.as_str())
                .collect();
            let sel_path = cfg.output(&selected);
            let mut text = ids.join("\n");
            if !text.is_empty() {
                text.push('\n');
            }
            fs::write(&sel_path, text)
                .with_context(|| format!("writing {}", sel_path.display()))?;
            if let Some(scatter) = scatter {
                let path = cfg.output(&scatter);
                let mut w = csv::Writer::from_path(&path)
                    .with_context(|| format!("writing {}", path.display()))?;
                for row in scatter_export(&results, &fcfg) {
                    w.serialize(row)?;
                }
                w.flush()?;
            }
            eprintln!(
                "selected {} of {} scenes (epsilon {})",
                ids.len(),
                results.len(),
                fcfg.epsilon
            );
        }
        Command::LabelCf {
            scenes,
            results,
            out,
            round,
            epsilon,
        } => {
            let mut lcfg = cfg.label_config();
            if let Some(r) = round {
                lcfg.round = r;
            }
            if let Some(e) = epsilon {
                lcfg.filter.epsilon = e;
            }
            lcfg.filter.validate().map_err(|e| usage(e.to_string()))?;
            if lcfg.round == 0 {
                return Err(usage("rounds start at 1"));
            }
            let scenes = read_scenes(&scenes)?;
            let results: Vec<RolloutResult> = read(&results)?;
            let teacher = teacher_client(cfg)?;
            let (records, failed) = label_cf_corpus(&teacher, &scenes, &results, &lcfg);
            check_failures("label-cf", records.len(), &failed)?;
            let path = write(cfg, &out, &records)?;
            eprintln!(
                "wrote {} counterfactual records to {}",
                records.len(),
                path.display()
            );
        }
        Command::Records { scenes, kind, out } => {
            let scenes = read_scenes(&scenes)?;
            let include_route = cfg.rollout.include_route;
            let records = par::try_map_ordered(&scenes, |s| match kind {
                RecordKind::Traj => traj_record(s, &cfg.loss, include_route),
                RecordKind::Meta => meta_record(s, &cfg.loss, include_route),
            })?;
            let path = write(cfg, &out, &records)?;
            eprintln!("wrote {} records to {}", records.len(), path.display());
        }
        Command::Mix {
            sources,
            weights,
            spec,
            seed,
            window,
            out,
        } => {
            let mut inputs: HashMap<DatasetId, Vec<TrainingRecord>> = HashMap::new();
            let mut order = Vec::new();
            for raw in &sources {
                let (id, path) = parse_pair(raw)?;
                if inputs.contains_key(&id) {
                    return Err(usage(format!("dataset {id} given twice")));
                }
                let records: Vec<TrainingRecord> = read(Path::new(path))?;
                for r in &records {
                    r.validate(&cfg.loss)
                        .with_context(|| format!("{path}: record {}", r.scene_id))?;
                }
                inputs.insert(id, records);
                order.push(id);
            }
            let mut mix = match (spec, &cfg.mix) {
                (Some(p), _) => {
                    let text = fs::read_to_string(&p)
                        .with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str::<DatasetMixSpec>(&text)
                        .with_context(|| format!("parsing {}", p.display()))?
                }
                (None, Some(m)) if weights.is_empty() => m.clone(),
                (None, _) => {
                    let mut multipliers: HashMap<DatasetId, u32> =
                        order.iter().map(|&id| (id, 1)).collect();
                    for raw in &weights {
                        let (id, v) = parse_pair(raw)?;
                        let m = v
                            .parse()
                            .map_err(|_| usage(format!("bad multiplier `{v}`")))?;
                        multipliers.insert(id, m);
                    }
                    let mut ids: Vec<DatasetId> = multipliers.keys().copied().collect();
                    ids.sort();
                    DatasetMixSpec {
                        entries: ids
                            .into_iter()
                            .map(|dataset| MixEntry {
                                dataset,
                                multiplier: multipliers[&dataset],
                            })
                            .collect(),
                        seed: cfg.seed,
                        window: None,
                    }
                }
            };
            if let Some(s) = seed {
                mix.seed = s;
            }
            if window.is_some() {
                mix.window = window;
            }
            mix.validate().map_err(|e| usage(e.to_string()))?;
            let mixed = mix_datasets(&mix, &inputs)?;
            let path = write(cfg, &out, &mixed)?;
            let summary: Vec<String> = mix
                .entries
                .iter()
                .map(|e| format!("{}x{}", e.dataset, e.multiplier))
                .collect();
            eprintln!(
                "mixed {} records ({}) into {}",
                mixed.len(),
                summary.join(", "),
                path.display()
            );
        }
        Command::Predict {
            scenes,
            out,
            sampling,
        } => {
            let rcfg = rollout_config(cfg, &sampling)?;
            let scenes = read_scenes(&scenes)?;
            let policy = policy_client(cfg, &scenes, sampling.strength)?;
            let predictions = par::try_map_ordered(&scenes, |s| -> Result<Prediction> {
                let payload = ScenePayload::from_scene(s, rcfg.include_route);
                let responses = (0..rcfg.samples_per_mode)
                    .map(|i| {
                        let req = PolicyRequest {
                            mode: PolicyMode::Free,
                            scene: payload.clone(),
                            plan: None,
                            temperature: rcfg.temperature,
                            seed: sample_seed(&rcfg, &s.id, i),
                        };
                        let text = policy
                            .call(&req)
                            .with_context(|| format!("scene {}", s.id))?;
                        parse_response_lenient(&text).with_context(|| format!("scene {}", s.id))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Prediction {
                    scene_id: s.id.clone(),
                    responses,
                    modes: None,
                })
            })?;
            let path = write(cfg, &out, &predictions)?;
            eprintln!(
                "wrote predictions for {} scenes to {}",
                predictions.len(),
                path.display()
            );
        }
        Command::Eval {
            predictions,
            scenes,
            out,
            bands,
        } => {
            let scenes = read_scenes(&scenes)?;
            let predictions: Vec<Prediction> = read(&predictions)?;
            let edges = bands.unwrap_or_else(|| cfg.eval.bands.clone());
            let report = evaluate(&scenes, &predictions, &edges)?;
            print!("{}", render_report(&report));
            if let Some(out) = out {
                let path = cfg.output(&out);
                let json = serde_json::to_string_pretty(&report)?;
                fs::write(&path, json + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::RoundPlan {
            round,
            variant,
            available,
            seed,
            out,
        } => {
            let available: BTreeSet<u32> = match available {
                Some(v) => v.into_iter().collect(),
                None => (1..=round).collect(),
            };
            let variant = match variant {
                Variant::ThreeDs => RoundVariant::ThreeDs,
                Variant::FourDs => RoundVariant::FourDs,
            };
            let spec =
                plan_round(round, variant, &available, seed.unwrap_or(cfg.seed)).map_err(|e| {
                    match e {
                        PipelineError::InvalidConfig(m) => usage(m),
                        other => anyhow!(other),
                    }
                })?;
            let json = serde_json::to_string_pretty(&spec)? + "\n";
            match out {
                Some(out) => {
                    let path = cfg.output(&out);
                    fs::write(&path, json)
                        .with_context(|| format!("writing {}", path.display()))?;
                }
                None => std::io::stdout().write_all(json.as_bytes())?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
