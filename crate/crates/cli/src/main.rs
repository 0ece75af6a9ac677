use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use session_parse::distsup::Template;
use session_parse::evaluate::{Protocol, Unit};
use session_parse::par::Execution;
use session_parse::sessionlm::Smoothing;
use session_parse::typer::TyperMode;
use session_parse_cli::commands::{self as cmd, require_existing, UsageError};
use session_parse_cli::config::PipelineConfig;

#[derive(Parser, Debug)]
#[command(name = "session-parse", version, about = "Session-aware entity and relation extraction for search queries")]
struct Cli {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every stochastic step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Fixed-order reductions. Always on; accepted for scripts.
    #[arg(long, global = true, default_value_t = true, action = clap::ArgAction::Set)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Drop,
    Marginal,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TemplateArg {
    Ere,
    Tre,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProtocolArg {
    Full,
    RecallOnly,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum UnitArg {
    Session,
    Query,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SmoothingArg {
    Mle,
    Additive,
    Interpolated,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus with knowledge files and gold labels.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        sessions: Option<usize>,
    },
    /// Label sessions by matching against the knowledge files.
    DistsupLabel {
        #[arg(long)]
        knowledge: Option<PathBuf>,
        #[arg(long)]
        sessions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the mention CRF on labeled query spans.
    TrainMention {
        #[arg(long)]
        knowledge: Option<PathBuf>,
        #[arg(long)]
        labeled: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Typed BIO labels instead of plain entity labels.
        #[arg(long)]
        typed: bool,
    },
    /// Train the session typer CRF.
    TrainTyper {
        #[arg(long)]
        knowledge: Option<PathBuf>,
        #[arg(long)]
        labeled: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "marginal")]
        mode: ModeArg,
        /// Drop transition features (independent per-state classifier).
        #[arg(long)]
        no_transitions: bool,
        /// Take query spans from this tagger instead of the annotations.
        #[arg(long)]
        mention_model: Option<PathBuf>,
    },
    /// Train a relation classifier for one template.
    TrainRelex {
        #[arg(long)]
        knowledge: Option<PathBuf>,
        #[arg(long)]
        labeled: Option<PathBuf>,
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long, value_enum)]
        template: TemplateArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tag sessions with mentions, types and relation interpretations.
    Tag {
        #[arg(long)]
        knowledge: Option<PathBuf>,
        #[arg(long)]
        sessions: Option<PathBuf>,
        #[arg(long)]
        mention_model: Option<PathBuf>,
        #[arg(long)]
        typer_model: Option<PathBuf>,
        #[arg(long)]
        ere_model: Option<PathBuf>,
        #[arg(long)]
        tre_model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted spans against gold spans.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        protocol: ProtocolArg,
        /// Write the score table as TSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Baseline predictions for a paired t-test.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "session")]
        unit: UnitArg,
    },
    /// Count entity n-grams over gold sessions.
    FitSessionlm {
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        unk: Option<bool>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-entropy of held-out sessions.
    Perplexity {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long, value_enum, default_value = "interpolated")]
        smoothing: SmoothingArg,
        #[arg(long)]
        delta: Option<f64>,
        /// Comma-separated weights, lowest order first.
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0.0)]
        type_weight: f64,
        /// Report bits instead of nats.
        #[arg(long)]
        bits: bool,
    },
    /// Grid-search interpolation weights on a dev set.
    TuneLm {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        step: Option<f64>,
        /// Include the entity-type component.
        #[arg(long = "type")]
        with_type: bool,
    },
}

struct Ctx {
    config: PipelineConfig,
    seed: u64,
    exec: Execution,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.chain().any(|c| c.downcast_ref::<UsageError>().is_some()) {
        return 1;
    }
    let numeric = e
        .chain()
        .filter_map(|c| c.downcast_ref::<session_parse::Error>())
        .any(|c| c.is_numeric());
    if numeric {
        3
    } else {
        2
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| UsageError(format!("{e:#}")))?,
        None => PipelineConfig::default(),
    };
    let seed = cli.seed.or(config.seed).unwrap_or(42);
    let exec = match cli.threads {
        Some(0) => return Err(UsageError("--threads must be at least 1".into()).into()),
        Some(1) => Execution::Sequential,
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("starting the thread pool")?;
            Execution::Parallel
        }
        None => Execution::Parallel,
    };
    let ctx = Ctx { config, seed, exec };
    dispatch(&ctx, cli.command)
}

fn or_config(arg: Option<PathBuf>, cfg: &Option<PathBuf>) -> Option<PathBuf> {
    arg.or_else(|| cfg.clone())
}

fn dispatch(ctx: &Ctx, command: Command) -> Result<()> {
    let paths = &ctx.config.paths;
    let exec = ctx.exec;
    match command {
        Command::Synth { out, sessions } => {
            let mut c = ctx.config.synth(ctx.seed);
            if let Some(n) = sessions {
                c.n_sessions = n;
            }
            let n = cmd::synth_corpus(&c, &out)?;
            log::info!("wrote {n} sessions to {}", out.display());
        }
        Command::DistsupLabel { knowledge, sessions, out } => {
            let args = cmd::DistsupArgs {
                knowledge: require_existing(or_config(knowledge, &paths.knowledge), "knowledge directory")?,
                sessions: require_existing(or_config(sessions, &paths.sessions), "sessions file")?,
                out,
                config: ctx.config.distsup(ctx.seed),
                exec,
            };
            let stats = cmd::distsup_label(&args)?;
            cmd::print(&stats.report())?;
        }
        Command::TrainMention { knowledge, labeled, out, typed } => {
            let knowledge = require_existing(or_config(knowledge, &paths.knowledge), "knowledge directory")?;
            let labeled = require_existing(or_config(labeled, &paths.labeled), "labeled sessions file")?;
            let store = cmd::load_store(&knowledge)?;
            let records = cmd::load_records(&labeled, exec)?;
            let typed = typed || ctx.config.mention.typed.unwrap_or(false);
            let file = cmd::train_mention(&store, &records, &ctx.config.mention(), typed, &ctx.config.crf(ctx.seed, exec))?;
            cmd::save_model(&out, &file)?;
        }
        Command::TrainTyper {
            knowledge,
            labeled,
            out,
            mode,
            no_transitions,
            mention_model,
        } => {
            let knowledge = require_existing(or_config(knowledge, &paths.knowledge), "knowledge directory")?;
            let labeled = require_existing(or_config(labeled, &paths.labeled), "labeled sessions file")?;
            let store = cmd::load_store(&knowledge)?;
            let records = cmd::load_records(&labeled, exec)?;
            let mode = match ctx.config.typer.mode.as_deref() {
                Some("drop") => TyperMode::Drop,
                Some("marginal") => TyperMode::Marginal,
                Some(other) => bail!(UsageError(format!("unknown typer mode {other:?} in config"))),
                None => match mode {
                    ModeArg::Drop => TyperMode::Drop,
                    ModeArg::Marginal => TyperMode::Marginal,
                },
            };
            let mut crf = ctx.config.crf(ctx.seed, exec);
            crf.transitions = !no_transitions && ctx.config.typer.transitions.unwrap_or(true);
            let features = ctx.config.mention();
            let tagger = mention_model
                .map(|p| cmd::load_model(&p, session_parse::corpus::ModelKind::MentionCrf))
                .transpose()?
                .map(|f| session_parse::crf::CrfModel::from_model_file(&f))
                .transpose()?;
            let file = cmd::train_typer(
                &store,
                &records,
                tagger.as_ref().map(|m| (m, &features)),
                &ctx.config.typer(),
                mode,
                &crf,
            )?;
            cmd::save_model(&out, &file)?;
        }
        Command::TrainRelex {
            knowledge,
            labeled,
            samples,
            template,
            out,
        } => {
            let knowledge = require_existing(or_config(knowledge, &paths.knowledge), "knowledge directory")?;
            let labeled = require_existing(or_config(labeled, &paths.labeled), "labeled sessions file")?;
            let samples = require_existing(or_config(samples, &paths.samples), "relation samples file")?;
            let store = cmd::load_store(&knowledge)?;
            let records = cmd::load_records(&labeled, exec)?;
            let template = match template {
                TemplateArg::Ere => Template::Ere,
                TemplateArg::Tre => Template::Tre,
            };
            let rows = cmd::load_samples(&samples, &records, &store, Some(template))?;
            log::info!("{} {} samples", rows.len(), template.as_str());
            let file = cmd::train_relex(&store, &rows, template, &ctx.config.relex(exec))?;
            cmd::save_model(&out, &file)?;
        }
        Command::Tag {
            knowledge,
            sessions,
            mention_model,
            typer_model,
            ere_model,
            tre_model,
            out,
        } => {
            let knowledge = require_existing(or_config(knowledge, &paths.knowledge), "knowledge directory")?;
            let sessions = require_existing(or_config(sessions, &paths.sessions), "sessions file")?;
            let mention_model = require_existing(or_config(mention_model, &paths.mention_model), "mention model")?;
            let typer_model = or_config(typer_model, &paths.typer_model);
            let ere_model = or_config(ere_model, &paths.ere_model);
            let tre_model = or_config(tre_model, &paths.tre_model);
            let store = cmd::load_store(&knowledge)?;
            let records = cmd::load_records(&sessions, exec)?;
            let threshold = ctx.config.relex(exec).threshold;
            let tagger = cmd::Tagger::load(
                &mention_model,
                typer_model.as_deref(),
                ere_model.as_deref(),
                tre_model.as_deref(),
                ctx.config.mention(),
                ctx.config.typer(),
                threshold,
            )?;
            let tagged = cmd::tag_all(&tagger, &records, &store, exec)?;
            cmd::save_records(&out, &tagged)?;
        }
        Command::Eval {
            gold,
            pred,
            protocol,
            out,
            compare,
            unit,
        } => {
            let protocol = match protocol {
                ProtocolArg::Full => Protocol::FullF1,
                ProtocolArg::RecallOnly => Protocol::RecallOnly,
            };
            let unit = match unit {
                UnitArg::Session => Unit::Session,
                UnitArg::Query => Unit::Query,
            };
            let gold = cmd::load_records(&require_existing(Some(gold), "gold file")?, exec)?;
            let pred = cmd::load_records(&require_existing(Some(pred), "prediction file")?, exec)?;
            let baseline = compare
                .map(|p| cmd::load_records(&require_existing(Some(p), "baseline file")?, exec))
                .transpose()?;
            let report = cmd::evaluate(&gold, &pred, baseline.as_deref(), protocol, unit)?;
            cmd::print(&report.table)?;
            if let Some(c) = &report.comparison {
                cmd::print(c)?;
            }
            if let Some(out) = out {
                cmd::save_text(&out, &report.tsv)?;
            }
        }
        Command::FitSessionlm {
            sessions,
            order,
            unk,
            out,
        } => {
            let sessions = require_existing(Some(sessions), "sessions file")?;
            let order = order.or(ctx.config.sessionlm.order).unwrap_or(3);
            let unk = unk.or(ctx.config.sessionlm.unk).unwrap_or(true);
            let records = cmd::load_records(&sessions, exec)?;
            let counts = cmd::fit_sessionlm(&records, order, unk, exec)?;
            cmd::save_text(&out, &counts.to_tsv())?;
        }
        Command::Perplexity {
            counts,
            sessions,
            smoothing,
            delta,
            weights,
            type_weight,
            bits,
        } => {
            let counts = cmd::load_counts(&require_existing(Some(counts), "counts file")?)?;
            let records = cmd::load_records(&require_existing(Some(sessions), "sessions file")?, exec)?;
            let smoothing = match smoothing {
                SmoothingArg::Mle => Smoothing::Mle,
                SmoothingArg::Additive => Smoothing::Additive {
                    delta: delta.or(ctx.config.sessionlm.delta).unwrap_or(1.0),
                },
                SmoothingArg::Interpolated => {
                    let n = counts.order();
                    let weights = weights.unwrap_or_else(|| vec![(1.0 - type_weight) / n as f64; n]);
                    Smoothing::Interpolated { weights, type_weight }
                }
            };
            smoothing.validate(counts.order()).map_err(|e| UsageError(e.to_string()))?;
            let h = cmd::perplexity(&counts, &smoothing, &records, bits)?;
            let unit = if bits { "bits" } else { "nats" };
            cmd::print(&format!("cross-entropy {h:.6} {unit}\n"))?;
        }
        Command::TuneLm {
            counts,
            dev,
            step,
            with_type,
        } => {
            let counts = cmd::load_counts(&require_existing(Some(counts), "counts file")?)?;
            let dev = cmd::load_records(&require_existing(Some(dev), "dev sessions file")?, exec)?;
            let step = step.or(ctx.config.sessionlm.grid_step).unwrap_or(0.1);
            let tuned = cmd::tune_lm(&counts, &dev, step, with_type)?;
            if let Smoothing::Interpolated { weights, type_weight } = &tuned {
                let w: Vec<String> = weights.iter().map(|w| format!("{w:.6}")).collect();
                let h = cmd::perplexity(&counts, &tuned, &dev, false)?;
                cmd::print(&format!(
                    "weights {}\ntype_weight {type_weight:.6}\ndev cross-entropy {h:.6} nats\n",
                    w.join(",")
                ))?;
            }
        }
    }
    Ok(())
}
