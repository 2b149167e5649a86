use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::loss::{batch_gradient, dataset_loss};
use super::schedule::LrSchedule;
use crate::error::{Error, Result};
use crate::features::{Dataset, Split};
use crate::model::mix_seed;
use crate::model::{Ablation, GestureModel, ModelConfig, ModelInput};
use crate::numerics::{Checkpoint, ParamStore, Tensor};
use crate::Scalar;

/// Optimization settings. Defaults are desk-scale: batch 8 instead of 128.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub warmup_steps: u64,
    /// Multiplier on the warmup schedule.
    pub lr_scale: f64,
    pub adam: AdamConfig,
    pub max_steps: u64,
    /// Steps between validation passes.
    pub eval_every: u64,
    /// Validation passes without improvement before stopping.
    pub patience: usize,
    /// Global gradient-norm clip; off when unset.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            warmup_steps: 4000,
            lr_scale: 1.0,
            adam: AdamConfig::default(),
            max_steps: 20_000,
            eval_every: 100,
            patience: 10,
            grad_clip: None,
            seed: 0,
            ablation: Ablation::None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.warmup_steps == 0 {
            return Err(Error::Config("warmup_steps must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config("grad_clip must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn schedule(&self, d_model: usize) -> Result<LrSchedule> {
        LrSchedule::scaled(d_model, self.warmup_steps, self.lr_scale)
    }
}

/// One line of the loss curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: u64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub steps: u64,
    pub best_val_loss: Option<f64>,
    pub best_step: Option<u64>,
    pub stopped_early: bool,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainState {
    pub format: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub step: u64,
    pub params: Checkpoint,
    pub adam_m: Checkpoint,
    pub adam_v: Checkpoint,
    pub best: Option<BestParams>,
    pub stale_evals: usize,
    pub stopped: bool,
    pub log: Vec<LossRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BestParams {
    pub step: u64,
    pub val_loss: f64,
    pub params: Checkpoint,
}

pub const TRAIN_STATE_FORMAT: &str = "visage-train-state-v1";

impl TrainState {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let state: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if state.format != TRAIN_STATE_FORMAT {
            return Err(Error::Checkpoint(format!("unknown train-state format `{}`", state.format)));
        }
        Ok(state)
    }
}

/// Tensors keyed by the parameter names of `like`.
fn named<T: Scalar>(like: &ParamStore<T>, tensors: &[Tensor<T>]) -> Checkpoint {
    let mut store = ParamStore::new();
    for (name, t) in like.names().iter().zip(tensors) {
        store.insert(name.clone(), t.clone());
    }
    Checkpoint::from_store(&store)
}

fn unnamed<T: Scalar>(like: &ParamStore<T>, ckpt: Checkpoint) -> Result<Vec<Tensor<T>>> {
    let store = ckpt.into_store::<T>()?;
    like.check_layout(&store)?;
    Ok(store.tensors().to_vec())
}

/// Single-writer training loop over pre-built inputs.
pub struct Trainer<T: Scalar> {
    model: GestureModel<T>,
    config: TrainConfig,
    schedule: LrSchedule,
    adam: AdamState<T>,
    train: Vec<ModelInput<T>>,
    val: Vec<ModelInput<T>>,
    best: Option<(u64, f64, ParamStore<T>)>,
    stale_evals: usize,
    stopped: bool,
    log: Vec<LossRow>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: GestureModel<T>, config: TrainConfig, train: Vec<ModelInput<T>>, val: Vec<ModelInput<T>>) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::EmptySplit("train".into()));
        }
        if val.is_empty() {
            return Err(Error::EmptySplit("val_SD".into()));
        }
        if model.ablation() != config.ablation {
            return Err(Error::Config(format!(
                "model is built with ablation `{}`, training config asks for `{}`",
                model.ablation(),
                config.ablation
            )));
        }
        let schedule = config.schedule(model.config().d_model)?;
        let adam = AdamState::new(model.params());
        Ok(Self {
            model,
            config,
            schedule,
            adam,
            train,
            val,
            best: None,
            stale_evals: 0,
            stopped: false,
            log: Vec::new(),
        })
    }

    /// Fresh model initialized from `config.seed`.
    pub fn from_config(
        model_config: ModelConfig,
        config: TrainConfig,
        train: Vec<ModelInput<T>>,
        val: Vec<ModelInput<T>>,
    ) -> Result<Self> {
        let model = GestureModel::new(model_config, config.ablation, config.seed)?;
        Self::new(model, config, train, val)
    }

    /// Continues from a saved state. `max_steps` may be raised.
    pub fn resume(state: TrainState, max_steps: Option<u64>, train: Vec<ModelInput<T>>, val: Vec<ModelInput<T>>) -> Result<Self> {
        let mut config = state.train.clone();
        if let Some(m) = max_steps {
            config.max_steps = m;
        }
        let params = state.params.into_store::<T>()?;
        let model = GestureModel::from_params(state.model, config.ablation, params)?;
        let mut trainer = Self::new(model, config, train, val)?;
        let like = trainer.model.params().clone();
        trainer.adam = AdamState {
            m: unnamed(&like, state.adam_m)?,
            v: unnamed(&like, state.adam_v)?,
            step: state.step,
        };
        trainer.best = match state.best {
            Some(b) => {
                let p = b.params.into_store::<T>()?;
                like.check_layout(&p)?;
                Some((b.step, b.val_loss, p))
            }
            None => None,
        };
        trainer.stale_evals = state.stale_evals;
        trainer.stopped = state.stopped;
        trainer.log = state.log;
        Ok(trainer)
    }

    pub fn state(&self) -> TrainState {
        let p = self.model.params();
        TrainState {
            format: TRAIN_STATE_FORMAT.into(),
            model: self.model.config().clone(),
            train: self.config.clone(),
            step: self.adam.step,
            params: Checkpoint::from_store(p),
            adam_m: named(p, &self.adam.m),
            adam_v: named(p, &self.adam.v),
            best: self.best.as_ref().map(|(step, val_loss, params)| BestParams {
                step: *step,
                val_loss: *val_loss,
                params: Checkpoint::from_store(params),
            }),
            stale_evals: self.stale_evals,
            stopped: self.stopped,
            log: self.log.clone(),
        }
    }

    pub fn model(&self) -> &GestureModel<T> {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.adam.step
    }

    pub fn log(&self) -> &[LossRow] {
        &self.log
    }

    /// Training-set positions used by `step` (1-based): consecutive slices
    /// of an endless stream of per-epoch permutations.
    pub fn batch_indices(&self, step: u64) -> Vec<usize> {
        let n = self.train.len();
        let b = self.config.batch_size;
        let start = (step - 1) as usize * b;
        let mut out = Vec::with_capacity(b);
        let mut epoch = usize::MAX;
        let mut order = Vec::new();
        for pos in start..start + b {
            if pos / n != epoch {
                epoch = pos / n;
                order = (0..n).collect::<Vec<_>>();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(self.config.seed, epoch as u64)));
            }
            out.push(order[pos % n]);
        }
        out
    }

    /// Takes one optimizer step and returns its log row.
    pub fn step(&mut self) -> Result<LossRow> {
        let step = self.adam.step + 1;
        let indices = self.batch_indices(step);
        let batch: Vec<&ModelInput<T>> = indices.iter().map(|&i| &self.train[i]).collect();
        let step_seed = mix_seed(self.config.seed ^ 0x5eed_d120_u64, step);
        let seeds: Vec<Option<u64>> = (0..batch.len())
            .map(|k| (self.model.config().dropout > 0.0).then(|| mix_seed(step_seed, k as u64)))
            .collect();
        let (loss, mut grads) = batch_gradient(&self.model, &batch, &seeds)?;
        if let Some(clip) = self.config.grad_clip {
            clip_global_norm(&mut grads, clip);
        }
        let lr = self.schedule.rate(step)?;
        adam_step(self.model.params_mut(), &grads, &mut self.adam, &self.config.adam, lr)?;
        let row = LossRow {
            step,
            train_loss: loss,
            val_loss: None,
            lr,
        };
        self.log.push(row.clone());
        Ok(row)
    }

    pub fn validation_loss(&self) -> Result<f64> {
        dataset_loss(&self.model, &self.val)
    }

    /// Runs until `max_steps` or early stopping, validating every
    /// `eval_every` steps and at the end. The trainer keeps the latest
    /// parameters; [`Trainer::best_model`] has the best validated ones.
    pub fn run(&mut self) -> Result<TrainOutcome> {
        while !self.stopped && self.adam.step < self.config.max_steps {
            let row = self.step()?;
            if row.step % self.config.eval_every == 0 || row.step == self.config.max_steps {
                self.validate_now()?;
            }
            if row.step % 100 == 0 {
                log::info!("step {} loss {:.4} lr {:.3e}", row.step, row.train_loss, row.lr);
            }
        }
        Ok(TrainOutcome {
            steps: self.adam.step,
            best_val_loss: self.best.as_ref().map(|b| b.1),
            best_step: self.best.as_ref().map(|b| b.0),
            stopped_early: self.stopped,
        })
    }

    fn validate_now(&mut self) -> Result<()> {
        let val = self.validation_loss()?;
        let step = self.adam.step;
        if let Some(row) = self.log.last_mut() {
            row.val_loss = Some(val);
        }
        log::info!("step {step} validation loss {val:.4}");
        if self.best.as_ref().map_or(true, |b| val < b.1) {
            self.best = Some((step, val, self.model.params().clone()));
            self.stale_evals = 0;
        } else {
            self.stale_evals += 1;
            if self.stale_evals >= self.config.patience {
                log::info!("early stop at step {step}");
                self.stopped = true;
            }
        }
        Ok(())
    }

    /// The parameters with the lowest validation loss so far, or the
    /// latest ones before any validation.
    pub fn best_model(&self) -> GestureModel<T> {
        let mut model = self.model.clone();
        if let Some((_, _, params)) = &self.best {
            model.params_mut().copy_matching(params);
        }
        model
    }

    pub fn into_model(self) -> GestureModel<T> {
        self.model
    }
}

fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for g in grads {
            for v in g.data_mut() {
                *v = *v * s;
            }
        }
    }
}

/// Writes `step,train_loss,val_loss,lr`; an empty cell where no validation ran.
pub fn write_loss_csv(path: impl AsRef<Path>, rows: &[LossRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,train_loss,val_loss,lr")?;
    for r in rows {
        let val = r.val_loss.map(|v| format!("{v}")).unwrap_or_default();
        writeln!(f, "{},{},{},{}", r.step, r.train_loss, val, r.lr)?;
    }
    f.flush()?;
    Ok(())
}

/// Network inputs for every IPU of `split`.
pub fn split_inputs<T: Scalar>(dataset: &Dataset, split: Split, config: &ModelConfig) -> Result<Vec<ModelInput<T>>> {
    dataset
        .split(split)
        .into_iter()
        .map(|ipu| ModelInput::from_ipu(ipu, &dataset.meta, config))
        .collect()
}

/// The model variant with `kind` applied; shared weights are kept.
pub fn apply_ablation<T: Scalar>(model: &GestureModel<T>, kind: Ablation) -> Result<GestureModel<T>> {
    model.with_ablation(kind)
}
