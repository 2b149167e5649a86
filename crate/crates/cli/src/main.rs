//! `visage`: preprocess corpora, train, generate and evaluate gesture models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use visage_core::evaluation::{Aggregation, Condition};
use visage_core::model::{Ablation, Decoding};

use config::{Dtype, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "visage", version, about = "Speech- and text-driven upper-face and head gesture generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AblationArg {
    Speech,
    Text,
    Cmam,
    AurDecoder,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::Speech => Ablation::Speech,
            AblationArg::Text => Ablation::Text,
            AblationArg::Cmam => Ablation::Cmam,
            AblationArg::AurDecoder => Ablation::AurDecoder,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ConditionArg {
    Sd,
    Si,
    Both,
}

impl ConditionArg {
    fn conditions(self) -> Vec<Condition> {
        match self {
            ConditionArg::Sd => vec![Condition::Sd],
            ConditionArg::Si => vec![Condition::Si],
            ConditionArg::Both => vec![Condition::Sd, Condition::Si],
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AggregationArg {
    Concatenated,
    PerIpu,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::Concatenated => Aggregation::Concatenated,
            AggregationArg::PerIpu => Aggregation::PerIpuMean,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Turns raw utterances into a normalized IPU dataset and its sidecar.
    Preprocess {
        #[command(flatten)]
        common: Common,
        /// Raw utterances, one JSON object per line.
        #[arg(long)]
        raw: PathBuf,
        /// Word-embedding table (`key v1 v2 ...` per line).
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Deterministic hash-seeded embeddings instead of a table.
        #[arg(long)]
        pseudo_embeddings: bool,
    },
    /// Trains the configured model (or an ablation of it).
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        ablation: Option<AblationArg>,
        /// Overrides train.max_steps.
        #[arg(long)]
        max_steps: Option<u64>,
        /// Continues from the saved train state if one exists.
        #[arg(long)]
        resume: bool,
    },
    /// Generates gesture curves for IPU records.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Directory holding weights and model card; defaults to the run directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        ablation: Option<AblationArg>,
        /// IPU records, one JSON object per line.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Writes curves in recording units using the dataset bounds.
        #[arg(long)]
        denormalize: bool,
        /// Samples at this temperature instead of greedy decoding.
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// Scores a checkpoint on the SD or SI test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        ablation: Option<AblationArg>,
        #[arg(long, value_enum, default_value = "sd")]
        condition: ConditionArg,
        #[arg(long, value_enum, default_value = "concatenated")]
        aggregation: AggregationArg,
    },
    /// Trains and evaluates the full model and all four ablations.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "both")]
        condition: ConditionArg,
        #[arg(long, value_enum, default_value = "concatenated")]
        aggregation: AggregationArg,
    },
    /// Prints parameter counts of the configured model and its ablations.
    Params {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        json: bool,
    },
    /// Writes a synthetic raw corpus for trying the pipeline.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        speakers: usize,
        #[arg(long, default_value_t = 6)]
        utterances: usize,
    },
}

fn load(common: &Common, ablation: Option<AblationArg>) -> Result<RunConfig> {
    Ok(RunConfig::load(common.config.as_deref(), common.seed)?.with_ablation(ablation.map(Ablation::from)))
}

macro_rules! with_dtype {
    ($cfg:expr, $f:ident($($arg:expr),*)) => {
        match $cfg.dtype {
            Dtype::F32 => commands::$f::<f32>($($arg),*),
            Dtype::F64 => commands::$f::<f64>($($arg),*),
        }
    };
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess {
            common,
            raw,
            embeddings,
            pseudo_embeddings,
        } => {
            let cfg = load(&common, None)?;
            commands::cmd_preprocess(&cfg, &raw, embeddings.as_deref(), pseudo_embeddings)
        }
        Command::Train {
            common,
            ablation,
            max_steps,
            resume,
        } => {
            let mut cfg = load(&common, ablation)?;
            if let Some(m) = max_steps {
                cfg.train.max_steps = m;
            }
            match cfg.dtype {
                Dtype::F32 => commands::cmd_train::<f32>(&cfg, resume).map(|_| ()),
                Dtype::F64 => commands::cmd_train::<f64>(&cfg, resume).map(|_| ()),
            }
        }
        Command::Infer {
            common,
            checkpoint,
            ablation,
            input,
            out_dir,
            denormalize,
            temperature,
        } => {
            let cfg = load(&common, ablation)?;
            let checkpoint = checkpoint.unwrap_or_else(|| cfg.variant_dir());
            let decoding = match temperature {
                Some(t) if t > 0.0 => Decoding::Sample {
                    temperature: t,
                    seed: cfg.seed,
                },
                Some(t) => anyhow::bail!("temperature must be positive, got {t}"),
                None => Decoding::Greedy,
            };
            with_dtype!(cfg, cmd_infer(&cfg, &checkpoint, &input, &out_dir, denormalize, decoding))
        }
        Command::Evaluate {
            common,
            checkpoint,
            ablation,
            condition,
            aggregation,
        } => {
            let cfg = load(&common, ablation)?;
            let checkpoint = checkpoint.unwrap_or_else(|| cfg.variant_dir());
            with_dtype!(cfg, cmd_evaluate(&cfg, &checkpoint, &condition.conditions(), aggregation.into()))
        }
        Command::Ablate {
            common,
            condition,
            aggregation,
        } => {
            let cfg = load(&common, None)?;
            with_dtype!(cfg, cmd_ablate(&cfg, &condition.conditions(), aggregation.into()))
        }
        Command::Params { common, json } => commands::cmd_params(&load(&common, None)?, json),
        Command::Synth {
            common,
            out,
            speakers,
            utterances,
        } => {
            let cfg = load(&common, None)?;
            commands::cmd_synth(&out, speakers, utterances, cfg.seed, cfg.model.d_emb)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VISAGE_LOG", "warn"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
