//! `morphcheck`: run metamorphic test suites against NLP models.

pub mod build;
pub mod config;
pub mod presets;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context as _};
use clap::{Args, Parser, Subcommand};
use morphcheck_core::engine::{Engine, EngineConfig, EnumerationMode, Selection, Shape};
use morphcheck_core::probe::{read_examples, train, TrainConfig};
use morphcheck_core::properties::{BooleanPredicate, Connective, PropertyExpr, ScoreView};
use morphcheck_core::relations::{compile, emit_dot, RelationPlan};
use morphcheck_core::report::{ReportFormat, ReportSet};
use morphcheck_core::transforms::{Monotonicity, Position, TransformSpec};
use morphcheck_core::ViewRequest;
use morphcheck_server::Backend;

pub use config::{ConfigError, RunConfig};

pub const SCHEMA: &str = include_str!("../run-config.schema.json");

/// Exit status of a completed run.
pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_OVER_BUDGET: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "morphcheck", version, about = "Metamorphic testing for NLP models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a test suite and write violation reports.
    Run(RunArgs),
    /// Print the number of test cases an enumeration yields.
    Count(CountArgs),
    /// Print relation graphs in DOT.
    Graph(GraphArgs),
    /// Linear probe utilities.
    #[command(subcommand)]
    Probe(ProbeCommand),
    /// Serve a stub model (or the echo mode) over the wire protocol.
    ServeStub(ServeArgs),
    /// Print a preset configuration.
    Preset {
        /// Preset name; lists presets when absent.
        name: Option<String>,
    },
    /// Print the JSON schema of run configurations.
    Schema,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct Source {
    /// Run configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in preset; relative paths resolve against the working directory.
    #[arg(long)]
    pub preset: Option<String>,
}

impl Source {
    pub fn load(&self) -> Result<RunConfig, ConfigError> {
        match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::load(path),
            (None, Some(name)) => {
                let text = presets::get(name).ok_or_else(|| {
                    ConfigError::at("", format!("unknown preset `{name}` (known: {})", presets::NAMES.join(", ")))
                })?;
                let mut cfg = RunConfig::parse(text)?;
                cfg.resolve_paths(&std::env::current_dir().unwrap_or_default());
                Ok(cfg)
            }
            (None, None) => Err(ConfigError::at("", "pass --config or --preset")),
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: Source,
    /// Model endpoint URL or `stub:NAME`; MORPHCHECK_MODEL_URL is the fallback
    /// when neither this nor the config names a model.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report format; repeat for several.
    #[arg(long, value_parser = parse_format)]
    pub format: Vec<ReportFormat>,
    /// Report file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Largest acceptable violation proportion.
    #[arg(long)]
    pub budget: Option<f64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    pub workers: Option<usize>,
    /// JSONL file receiving one verdict per case.
    #[arg(long)]
    pub emit_cases: Option<PathBuf>,
    /// Stop at the first failing case.
    #[arg(long)]
    pub fail_fast: bool,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    #[arg(long, value_parser = parse_shape)]
    pub shape: Shape,
    /// Number of source inputs.
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub allow_self: bool,
    /// Sample size; the count is capped by it.
    #[arg(long)]
    pub sample: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    /// Canonical plan of one relation class.
    #[arg(long, conflicts_with_all = ["config", "preset"])]
    pub class: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    /// Only the relation at this index of the config.
    #[arg(long)]
    pub relation: Option<usize>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ProbeCommand {
    /// Train a linear probe on `{"z": [...], "label": 0|1}` lines.
    Train(ProbeTrainArgs),
}

#[derive(Debug, Args)]
pub struct ProbeTrainArgs {
    #[arg(long)]
    pub examples: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, conflicts_with = "echo")]
    pub config: Option<PathBuf>,
    #[arg(long, conflicts_with = "echo")]
    pub preset: Option<String>,
    /// `stub:NAME`.
    #[arg(long, conflicts_with = "echo")]
    pub model: Option<String>,
    /// Zero vectors and a uniform softmax.
    #[arg(long)]
    pub echo: bool,
    /// Class names for the echo mode.
    #[arg(long, value_delimiter = ',', default_value = "negative,positive")]
    pub classes: Vec<String>,
    #[arg(long, default_value_t = 8)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub max_batch: usize,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// 0 picks a free port.
    #[arg(long, default_value_t = 8000)]
    pub port: u16,
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("`{s}` is not one of json, csv, md"))
}

fn parse_shape(s: &str) -> Result<Shape, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("`{s}` is not one of singles, ordered_pairs, unordered_pairs, ordered_triplets"))
}

/// Runs the parsed command and returns the process exit status.
pub fn execute(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Run(args) => run(args),
        Command::Count(args) => {
            let mode = EnumerationMode {
                shape: args.shape,
                selection: match args.sample {
                    Some(n) => Selection::Sample { n, seed: 0 },
                    None => Selection::Exhaustive,
                },
                allow_self: args.allow_self,
            };
            mode.validate()?;
            println!("{}", mode.selected(args.k)?);
            Ok(EXIT_OK)
        }
        Command::Graph(args) => graph(args),
        Command::Probe(ProbeCommand::Train(args)) => probe_train(args),
        Command::ServeStub(args) => serve_stub(args),
        Command::Preset { name: None } => {
            for n in presets::NAMES {
                println!("{n}");
            }
            Ok(EXIT_OK)
        }
        Command::Preset { name: Some(name) } => {
            let text = presets::get(&name).with_context(|| format!("unknown preset `{name}`"))?;
            print!("{text}");
            Ok(EXIT_OK)
        }
        Command::Schema => {
            print!("{SCHEMA}");
            Ok(EXIT_OK)
        }
    }
}

fn report_path(out: &Path, format: ReportFormat, several: bool) -> PathBuf {
    if !several {
        return out.to_path_buf();
    }
    out.with_extension(match format {
        ReportFormat::Json => "json",
        ReportFormat::Csv => "csv",
        ReportFormat::Markdown => "md",
    })
}

fn run(args: RunArgs) -> anyhow::Result<u8> {
    let mut cfg = args.source.load()?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(b) = args.budget {
        if !(0.0..=1.0).contains(&b) {
            bail!("--budget {b} is outside [0, 1]");
        }
        cfg.budget = b;
    }
    if let Some(w) = args.workers {
        cfg.engine.workers = w;
    }
    if !args.format.is_empty() {
        cfg.output.formats = args.format.clone();
    }
    if args.out.is_some() {
        cfg.output.path = args.out.clone();
    }
    if args.emit_cases.is_some() {
        cfg.output.emit_cases = args.emit_cases.clone();
    }
    cfg.engine.fail_fast |= args.fail_fast;

    let model = build::resolve_model(cfg.model.as_ref(), args.model.as_deref(), std::env::var("MORPHCHECK_MODEL_URL").ok())?;
    let port = build::build_port(&model, cfg.seed)?;
    let mut built = build::build_suite(&cfg, port.as_ref())?;
    built.probe_overlap.sort();
    built.probe_overlap.dedup();
    if !built.probe_overlap.is_empty() {
        eprintln!(
            "warning: {} tested insertion pair(s) share a word with the probe training split: {}",
            built.probe_overlap.len(),
            built.probe_overlap.join(" ")
        );
    }

    let defaults = EngineConfig::default();
    let engine = Engine::new(EngineConfig {
        workers: cfg.engine.workers,
        fail_fast: cfg.engine.fail_fast,
        keep_records: false,
        chunk_size: cfg.engine.chunk_size.unwrap_or(defaults.chunk_size),
    })?;
    let mut sink = match &cfg.output.emit_cases {
        Some(p) => Some(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => None,
    };
    let verdicts = engine.run_suite(&built.suite, port.as_ref(), sink.as_mut().map(|w| w as &mut dyn Write))?;
    if let Some(mut w) = sink {
        w.flush()?;
    }

    let reports = ReportSet::new(&verdicts, &cfg.groupings);
    let several = cfg.output.formats.len() > 1;
    let mut stdout = std::io::stdout().lock();
    for (i, format) in cfg.output.formats.iter().enumerate() {
        let text = reports.render(*format);
        match &cfg.output.path {
            Some(out) => {
                let path = report_path(out, *format, several);
                std::fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
            }
            None => {
                if i > 0 {
                    writeln!(stdout)?;
                }
                stdout.write_all(text.as_bytes())?;
            }
        }
    }
    stdout.flush()?;

    let totals = reports.totals;
    let proportion = reports.overall_proportion();
    let over = proportion > cfg.budget;
    eprintln!(
        "violation proportion {proportion:.4} ({} violated / {} decided, {} vacuous, {} errors); budget {:.4}: {}",
        totals.violated,
        totals.denominator(),
        totals.vacuous,
        totals.errors,
        cfg.budget,
        if over { "exceeded" } else { "ok" }
    );
    if totals.errors > 0 {
        eprintln!("error: {} case(s) could not be evaluated", totals.errors);
        return Ok(EXIT_ERROR);
    }
    Ok(if over { EXIT_OVER_BUDGET } else { EXIT_OK })
}

/// Representative plan of each relation class.
pub fn canonical_plan(class: &str) -> anyhow::Result<RelationPlan> {
    let s_pos = Arc::new(ScoreView::softmax_component("s_pos", 1));
    let t = TransformSpec::ConcatSentence { text: "Thank you.".into(), position: Position::Start };
    Ok(match class {
        "single_input" => RelationPlan::SingleInput { transform: t, property: PropertyExpr::Eq(0, 1), view: ViewRequest::Softmax },
        "pairwise_systematicity" => RelationPlan::PairwiseSystematicity {
            transform: t,
            premise: PropertyExpr::ord(&s_pos, 0, 1),
            hypothesis: PropertyExpr::ord(&s_pos, 0, 1),
            connective: Connective::Implies,
            view: ViewRequest::Softmax,
        },
        "pairwise_compositionality" => RelationPlan::PairwiseCompositionality {
            hidden_layer: -2,
            hidden_score: Arc::new(ScoreView::scalar("s_hyp")),
            output_score: Arc::new(ScoreView::softmax_component("s_ent", 0)),
            monotonicity: Monotonicity::Down,
            connective: Connective::Iff,
            view: ViewRequest::Softmax,
        },
        "three_way_transitivity" => RelationPlan::ThreeWayTransitivity {
            separator: " ".into(),
            predicate: Arc::new(BooleanPredicate::new("v_hyp", 2)),
            view: ViewRequest::Softmax,
        },
        other => bail!(
            "unknown relation class `{other}` (expected single_input, pairwise_systematicity, pairwise_compositionality or three_way_transitivity)"
        ),
    })
}

fn graph(args: GraphArgs) -> anyhow::Result<u8> {
    let plans: Vec<RelationPlan> = match &args.class {
        Some(class) => vec![canonical_plan(class)?],
        None => {
            let cfg = Source { config: args.config.clone(), preset: args.preset.clone() }.load()?;
            let model =
                build::resolve_model(cfg.model.as_ref(), args.model.as_deref(), std::env::var("MORPHCHECK_MODEL_URL").ok())?;
            let port = build::build_port(&model, cfg.seed)?;
            let built = build::build_suite(&cfg, port.as_ref())?;
            let first = built.suite.partitions.into_iter().next().context("the config yields no partitions")?;
            let mut plans: Vec<RelationPlan> = first.plans.into_iter().map(|p| p.plan).collect();
            if let Some(i) = args.relation {
                if i >= plans.len() {
                    bail!("--relation {i} but the config has {} relations", plans.len());
                }
                plans = vec![plans.swap_remove(i)];
            }
            plans
        }
    };
    let mut dot = String::new();
    for plan in &plans {
        dot.push_str(&emit_dot(&compile(plan)?));
    }
    match &args.out {
        Some(p) => std::fs::write(p, dot).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{dot}"),
    }
    Ok(EXIT_OK)
}

fn probe_train(args: ProbeTrainArgs) -> anyhow::Result<u8> {
    let file = File::open(&args.examples).with_context(|| format!("opening {}", args.examples.display()))?;
    let examples = read_examples(std::io::BufReader::new(file))?;
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        epochs: args.epochs.unwrap_or(defaults.epochs),
        learning_rate: args.learning_rate.unwrap_or(defaults.learning_rate),
        seed: args.seed,
        batch_size: args.batch_size,
    };
    let probe = train(&examples, &config)?;
    probe.save(&args.out)?;
    println!(
        "trained on {} examples: accuracy {:.4}, loss {:.6}",
        probe.meta.examples, probe.meta.train_accuracy, probe.meta.final_loss
    );
    Ok(EXIT_OK)
}

fn serve_stub(args: ServeArgs) -> anyhow::Result<u8> {
    let backend = if args.echo {
        if args.classes.len() < 2 {
            bail!("--classes needs at least two names");
        }
        Backend::echo(args.classes.clone(), args.hidden_dim, args.max_batch)
    } else {
        let cfg = match (&args.config, &args.preset) {
            (None, None) => None,
            (config, preset) => Some(Source { config: config.clone(), preset: preset.clone() }.load()?),
        };
        let seed = cfg.as_ref().map_or(0, |c| c.seed);
        let model = build::resolve_model(cfg.as_ref().and_then(|c| c.model.as_ref()), args.model.as_deref(), None)?;
        if model.stub_name().is_none() {
            bail!("serve-stub serves in-process stubs; the configured model is an HTTP endpoint");
        }
        Backend::Port(Arc::from(build::build_port(&model, seed)?))
    };
    let addr: SocketAddr = format!("{}:{}", args.host, args.port).parse().context("invalid --host/--port")?;
    morphcheck_server::run_until_ctrl_c(backend, addr, |bound| {
        println!("listening on http://{bound}");
        let _ = std::io::stdout().flush();
    })?;
    Ok(EXIT_OK)
}
