use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use serde::Serialize;
use visage_core::evaluation::{evaluate, predict, Aggregation, Condition, MetricsReport};
use visage_core::features::{
    preprocess, read_ipus, read_raw_utterances, write_raw_utterances, Dataset, DatasetMeta, EmbeddingSource,
    PreprocessOptions, Split, Stream, TARGET_FPS,
};
use visage_core::model::{Ablation, Decoding, GestureModel, ModelCard, REFERENCE_PARAM_COUNT};
use visage_core::numerics::Checkpoint;
use visage_core::synthetic::{raw_corpus, SynthOptions};
use visage_core::training::{split_inputs, write_loss_csv, TrainState, Trainer};
use visage_core::Scalar;

use crate::config::RunConfig;

pub const WEIGHTS_FILE: &str = "weights.json";
pub const CARD_FILE: &str = "model_card.json";
pub const STATE_FILE: &str = "train_state.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const RUN_CONFIG_FILE: &str = "run_config.json";

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    Dataset::load(&cfg.paths.dataset, &cfg.paths.meta).with_context(|| {
        format!(
            "loading dataset {} with sidecar {}",
            cfg.paths.dataset.display(),
            cfg.paths.meta.display()
        )
    })
}

pub fn cmd_preprocess(cfg: &RunConfig, raw: &Path, embeddings: Option<&Path>, pseudo: bool) -> Result<()> {
    let source = match (embeddings, pseudo) {
        (Some(_), true) => bail!("--embeddings and --pseudo-embeddings are exclusive"),
        (Some(p), false) => EmbeddingSource::read_table(p).with_context(|| format!("reading {}", p.display()))?,
        (None, true) => EmbeddingSource::Pseudo(cfg.model.d_emb),
        (None, false) => bail!("pass --embeddings FILE or --pseudo-embeddings"),
    };
    if source.dim() != cfg.model.d_emb {
        bail!(
            "embeddings have dimension {}, model.d_emb is {}",
            source.dim(),
            cfg.model.d_emb
        );
    }
    let utterances = read_raw_utterances(raw).with_context(|| format!("reading {}", raw.display()))?;
    let opts = PreprocessOptions {
        seed: cfg.seed,
        si_speakers: cfg.preprocess.si_speakers.iter().cloned().collect(),
        train_fraction: cfg.preprocess.train_fraction,
        val_fraction: cfg.preprocess.val_fraction,
        n_bins: cfg.model.n_bins,
        max_f0_len: cfg.model.max_f0_len,
        max_out_len: cfg.model.max_out_len,
    };
    let dataset = preprocess(&utterances, &source, &opts)?;
    create_parent(&cfg.paths.dataset)?;
    create_parent(&cfg.paths.meta)?;
    dataset.save(&cfg.paths.dataset, &cfg.paths.meta)?;
    let c = &dataset.meta.counts;
    println!(
        "{} utterances -> {} IPUs, {} words ({} silence tokens)",
        utterances.len(),
        c.ipus,
        c.words,
        c.silences
    );
    for (split, n) in &c.per_split {
        println!("  {split}: {n} IPUs");
    }
    println!("wrote {} and {}", cfg.paths.dataset.display(), cfg.paths.meta.display());
    Ok(())
}

pub fn cmd_synth(out: &Path, speakers: usize, utterances: usize, seed: u64, d_emb: usize) -> Result<()> {
    let opts = SynthOptions {
        seed,
        d_emb,
        ..SynthOptions::default()
    };
    let raw = raw_corpus(&opts, speakers, utterances)?;
    create_parent(out)?;
    write_raw_utterances(out, &raw)?;
    println!("wrote {} utterances from {speakers} speakers to {}", raw.len(), out.display());
    Ok(())
}

/// Trains the configured variant and writes its artifacts. Returns the
/// best-validation model.
pub fn cmd_train<T: Scalar>(cfg: &RunConfig, resume: bool) -> Result<GestureModel<T>> {
    let dataset = load_dataset(cfg)?;
    let train = split_inputs::<T>(&dataset, Split::Train, &cfg.model)?;
    let val = split_inputs::<T>(&dataset, Split::ValSd, &cfg.model)?;
    let dir = cfg.variant_dir();
    let state_path = dir.join(STATE_FILE);
    let mut trainer = if resume && state_path.exists() {
        let state = TrainState::load(&state_path)?;
        let diffs = cfg.model.diff(&state.model);
        if !diffs.is_empty() {
            bail!("saved state was trained with a different model config: {}", diffs.join(", "));
        }
        if state.train.ablation != cfg.train.ablation {
            bail!("saved state is for ablation `{}`", state.train.ablation);
        }
        info!("resuming from step {}", state.step);
        Trainer::resume(state, Some(cfg.train.max_steps), train, val)?
    } else {
        Trainer::from_config(cfg.model.clone(), cfg.train.clone(), train, val)?
    };
    let outcome = trainer.run()?;
    let best = trainer.best_model();

    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Checkpoint::from_store(best.params()).save(dir.join(WEIGHTS_FILE))?;
    ModelCard::of(&best).save(dir.join(CARD_FILE))?;
    trainer.state().save(&state_path)?;
    write_loss_csv(dir.join(LOSS_FILE), trainer.log())?;
    std::fs::write(dir.join(RUN_CONFIG_FILE), serde_json::to_string_pretty(cfg)? + "\n")?;
    println!(
        "{}: {} steps, best validation loss {} at step {}{}; artifacts in {}",
        cfg.train.ablation,
        outcome.steps,
        outcome.best_val_loss.map_or("n/a".into(), |v| format!("{v:.4}")),
        outcome.best_step.map_or("n/a".into(), |s| s.to_string()),
        if outcome.stopped_early { " (early stop)" } else { "" },
        dir.display()
    );
    Ok(best)
}

/// Loads weights and model card from `dir`, checking both against `cfg`.
pub fn load_model<T: Scalar>(cfg: &RunConfig, dir: &Path) -> Result<GestureModel<T>> {
    let card = ModelCard::load(dir.join(CARD_FILE)).with_context(|| format!("reading model card in {}", dir.display()))?;
    let diffs = cfg.model.diff(&card.config);
    if !diffs.is_empty() {
        bail!(
            "config does not match the checkpoint in {} (config vs checkpoint): {}",
            dir.display(),
            diffs.join(", ")
        );
    }
    let params = Checkpoint::load(dir.join(WEIGHTS_FILE))?.into_store::<T>()?;
    let model = GestureModel::from_params(card.config, card.ablation, params)?;
    if model.param_count() != card.param_count {
        bail!(
            "model card lists {} parameters, weights hold {}",
            card.param_count,
            model.param_count()
        );
    }
    Ok(model)
}

#[derive(Serialize)]
struct CurveRecord<'a> {
    id: &'a str,
    speaker_id: &'a str,
    fps: f64,
    frames: usize,
    denormalized: bool,
    streams: BTreeMap<&'static str, &'a [f64]>,
}

fn csv_cell(v: f64) -> String {
    format!("{v:.6}")
}

pub fn cmd_infer<T: Scalar>(
    cfg: &RunConfig,
    checkpoint: &Path,
    input: &Path,
    out_dir: &Path,
    denormalize: bool,
    decoding: Decoding,
) -> Result<()> {
    let model = load_model::<T>(cfg, checkpoint)?;
    let meta = DatasetMeta::load(&cfg.paths.meta).with_context(|| format!("reading {}", cfg.paths.meta.display()))?;
    let ipus = read_ipus(input).with_context(|| format!("reading {}", input.display()))?;
    if ipus.is_empty() {
        bail!("{} holds no IPU records", input.display());
    }
    let refs: Vec<_> = ipus.iter().collect();
    let preds = predict(&model, &refs, &meta, decoding)?;
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut jsonl = String::new();
    for p in &preds {
        let curves = if denormalize { p.denormalized(&meta)? } else { p.curves.clone() };
        let n = curves[0].len();
        let mut csv = String::from("frame_index");
        for s in Stream::ALL {
            write!(csv, ",{s}")?;
        }
        csv.push('\n');
        for i in 0..n {
            write!(csv, "{i}")?;
            for c in &curves {
                write!(csv, ",{}", csv_cell(c[i]))?;
            }
            csv.push('\n');
        }
        std::fs::write(out_dir.join(format!("{}.csv", p.id)), csv)?;
        let record = CurveRecord {
            id: &p.id,
            speaker_id: &p.speaker_id,
            fps: TARGET_FPS,
            frames: n,
            denormalized: denormalize,
            streams: Stream::ALL.iter().map(|s| (s.name(), curves[s.index()].as_slice())).collect(),
        };
        jsonl.push_str(&serde_json::to_string(&record)?);
        jsonl.push('\n');
    }
    std::fs::write(out_dir.join("curves.jsonl"), jsonl)?;
    println!("wrote curves for {} IPUs to {}", preds.len(), out_dir.display());
    Ok(())
}

fn report_paths(cfg: &RunConfig, ablation: Ablation, condition: Condition) -> (PathBuf, PathBuf) {
    let stem = format!("{ablation}-{}", condition.name().to_lowercase());
    (
        cfg.paths.reports.join(format!("{stem}.json")),
        cfg.paths.reports.join(format!("{stem}.csv")),
    )
}

fn evaluate_and_write<T: Scalar>(
    cfg: &RunConfig,
    model: &GestureModel<T>,
    dataset: &Dataset,
    condition: Condition,
    aggregation: Aggregation,
) -> Result<MetricsReport> {
    let (report, _) = evaluate(model, dataset, condition, aggregation, Decoding::Greedy)?;
    std::fs::create_dir_all(&cfg.paths.reports)
        .with_context(|| format!("creating {}", cfg.paths.reports.display()))?;
    let (json, csv) = report_paths(cfg, model.ablation(), condition);
    report.save(&json, &csv)?;
    print!("{report}");
    println!("wrote {} and {}", json.display(), csv.display());
    Ok(report)
}

pub fn cmd_evaluate<T: Scalar>(
    cfg: &RunConfig,
    checkpoint: &Path,
    conditions: &[Condition],
    aggregation: Aggregation,
) -> Result<()> {
    let model = load_model::<T>(cfg, checkpoint)?;
    let dataset = load_dataset(cfg)?;
    for &c in conditions {
        evaluate_and_write(cfg, &model, &dataset, c, aggregation)?;
    }
    Ok(())
}

/// Trains and evaluates the full model and every ablation with the same
/// seed and step budget, then writes a combined summary.
pub fn cmd_ablate<T: Scalar>(cfg: &RunConfig, conditions: &[Condition], aggregation: Aggregation) -> Result<()> {
    let dataset = load_dataset(cfg)?;
    let mut summary = String::from("variant,condition,stream,RMSE,PCC,AHR,NAHR\n");
    for kind in std::iter::once(Ablation::None).chain(Ablation::VARIANTS) {
        let variant = cfg.clone().with_ablation(Some(kind));
        let model = cmd_train::<T>(&variant, false)?;
        for &c in conditions {
            let report = evaluate_and_write(&variant, &model, &dataset, c, aggregation)?;
            for line in report.to_csv().lines().skip(1) {
                writeln!(summary, "{kind},{c},{line}")?;
            }
        }
    }
    let path = cfg.paths.reports.join("ablation-summary.csv");
    std::fs::write(&path, summary)?;
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct ParamRow {
    variant: String,
    total: usize,
    components: BTreeMap<String, usize>,
}

pub fn cmd_params(cfg: &RunConfig, json: bool) -> Result<()> {
    let mut rows = Vec::new();
    for kind in std::iter::once(Ablation::None).chain(Ablation::VARIANTS) {
        let model = GestureModel::<f32>::new(cfg.model.clone(), kind, 0)?;
        let mut components = BTreeMap::new();
        for (name, t) in model.params().iter() {
            let group = name.split('.').next().unwrap_or(name).to_string();
            *components.entry(group).or_insert(0) += t.len();
        }
        rows.push(ParamRow {
            variant: kind.to_string(),
            total: model.param_count(),
            components,
        });
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
        return Ok(());
    }
    println!("{:<12}{:>12}  components", "variant", "parameters");
    for r in &rows {
        let parts: Vec<String> = r.components.iter().map(|(k, v)| format!("{k} {v}")).collect();
        println!("{:<12}{:>12}  {}", r.variant, r.total, parts.join(", "));
    }
    println!(
        "reference count {REFERENCE_PARAM_COUNT}; configured full model is {:.2}x",
        rows[0].total as f64 / REFERENCE_PARAM_COUNT as f64
    );
    Ok(())
}
