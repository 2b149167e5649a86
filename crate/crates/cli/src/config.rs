use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use visage_core::model::{Ablation, ModelConfig};
use visage_core::training::TrainConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Normalized IPU records, one JSON object per line.
    pub dataset: PathBuf,
    /// Normalization and quantizer sidecar.
    pub meta: PathBuf,
    /// Training artifacts; ablated variants go to `run_dir/ablation-<name>`.
    pub run_dir: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: "data/ipus.jsonl".into(),
            meta: "data/meta.json".into(),
            run_dir: "runs/default".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub si_speakers: Vec<String>,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            si_speakers: Vec::new(),
            train_fraction: 0.8,
            val_fraction: 0.1,
        }
    }
}

/// Everything a command needs, read from one TOML file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds weight init, batch order, dropout and split assignment.
    pub seed: u64,
    pub dtype: Dtype,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub preprocess: PreprocessConfig,
    pub paths: Paths,
}

impl RunConfig {
    /// Reads `path` (defaults when `None`), applies the seed override and
    /// resolves relative paths against the config file's directory.
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
                let base = p.parent().unwrap_or(Path::new(""));
                for dir in [&mut cfg.paths.dataset, &mut cfg.paths.meta, &mut cfg.paths.run_dir, &mut cfg.paths.reports] {
                    if dir.is_relative() {
                        *dir = base.join(&*dir);
                    }
                }
                cfg
            }
            None => RunConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.train.seed = cfg.seed;
        cfg.model.validate()?;
        cfg.train.validate()?;
        if !(0.0..=1.0).contains(&cfg.preprocess.train_fraction)
            || !(0.0..=1.0).contains(&cfg.preprocess.val_fraction)
            || cfg.preprocess.train_fraction + cfg.preprocess.val_fraction > 1.0
        {
            bail!("preprocess fractions must lie in [0, 1] and sum to at most 1");
        }
        Ok(cfg)
    }

    pub fn with_ablation(mut self, ablation: Option<Ablation>) -> Self {
        if let Some(a) = ablation {
            self.train.ablation = a;
        }
        self
    }

    /// Artifact directory of the configured variant.
    pub fn variant_dir(&self) -> PathBuf {
        match self.train.ablation {
            Ablation::None => self.paths.run_dir.clone(),
            a => self.paths.run_dir.join(format!("ablation-{a}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "seed = 3\n[model]\nd_modle = 8\n").unwrap();
        let err = RunConfig::load(Some(&p), None).unwrap_err();
        assert!(format!("{err:#}").contains("d_modle"), "{err:#}");
    }

    #[test]
    fn paths_resolve_against_the_config_directory() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "seed = 3\n[paths]\ndataset = \"d/x.jsonl\"\n[train]\nbatch_size = 2\n").unwrap();
        let cfg = RunConfig::load(Some(&p), Some(9)).unwrap();
        assert_eq!(cfg.paths.dataset, dir.path().join("d/x.jsonl"));
        assert_eq!((cfg.seed, cfg.train.seed, cfg.train.batch_size), (9, 9, 2));
        let cmam = cfg.with_ablation(Some(Ablation::Cmam));
        assert!(cmam.variant_dir().ends_with("ablation-cmam"));
    }
}
