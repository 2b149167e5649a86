use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{ahr, nahr, pcc, rmse};
use crate::error::{Error, Result};
use crate::features::Stream;
use crate::model::Ablation;

/// Test condition: speakers seen (SD) or unseen (SI) during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "SD")]
    Sd,
    #[serde(rename = "SI")]
    Si,
}

impl Condition {
    pub fn split(self) -> crate::features::Split {
        match self {
            Condition::Sd => crate::features::Split::TestSd,
            Condition::Si => crate::features::Split::TestSi,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Condition::Sd => "SD",
            Condition::Si => "SI",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sd" => Ok(Condition::Sd),
            "si" => Ok(Condition::Si),
            other => Err(Error::Config(format!("unknown condition `{other}` (expected sd or si)"))),
        }
    }
}

/// How per-IPU sequences are combined into one number per stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Metrics over all frames of all IPUs concatenated.
    #[default]
    Concatenated,
    /// Metrics per IPU, then the mean of the defined values.
    PerIpuMean,
}

/// Activation metrics of an AU stream; `None` marks an undefined value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub ahr: Option<f64>,
    pub nahr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamMetrics {
    pub stream: Stream,
    pub rmse: f64,
    /// `None` when either sequence is constant.
    pub pcc: Option<f64>,
    /// Absent for head rotations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
}

impl StreamMetrics {
    pub fn compute(stream: Stream, pred: &[f64], truth: &[f64]) -> Result<Self> {
        let pcc = if pred.len() < 2 { None } else { pcc(pred, truth)? };
        Ok(Self {
            stream,
            rmse: rmse(pred, truth)?,
            pcc,
            activation: if stream.is_action_unit() {
                Some(Activation {
                    ahr: ahr(pred, truth)?,
                    nahr: nahr(pred, truth)?,
                })
            } else {
                None
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub condition: Condition,
    pub ablation: Ablation,
    pub aggregation: Aggregation,
    pub n_ipus: usize,
    pub n_frames: usize,
    pub streams: Vec<StreamMetrics>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

impl MetricsReport {
    /// Metrics from predicted and true curves, indexed `[ipu][stream][frame]`.
    pub fn from_curves(
        pred: &[Vec<Vec<f64>>],
        truth: &[Vec<Vec<f64>>],
        condition: Condition,
        ablation: Ablation,
        aggregation: Aggregation,
    ) -> Result<Self> {
        if pred.is_empty() {
            return Err(Error::EmptySplit(condition.split().name().into()));
        }
        if pred.len() != truth.len() {
            return Err(crate::error::shape_err("metrics", &[&[pred.len()], &[truth.len()]]));
        }
        let n_frames = truth.iter().map(|t| t[0].len()).sum();
        let streams = Stream::ALL
            .iter()
            .map(|&s| {
                let j = s.index();
                match aggregation {
                    Aggregation::Concatenated => {
                        let p: Vec<f64> = pred.iter().flat_map(|x| x[j].iter().copied()).collect();
                        let t: Vec<f64> = truth.iter().flat_map(|x| x[j].iter().copied()).collect();
                        StreamMetrics::compute(s, &p, &t)
                    }
                    Aggregation::PerIpuMean => {
                        let per = pred
                            .iter()
                            .zip(truth)
                            .map(|(p, t)| StreamMetrics::compute(s, &p[j], &t[j]))
                            .collect::<Result<Vec<_>>>()?;
                        Ok(StreamMetrics {
                            stream: s,
                            rmse: per.iter().map(|m| m.rmse).sum::<f64>() / per.len() as f64,
                            pcc: mean_defined(per.iter().map(|m| m.pcc)),
                            activation: s.is_action_unit().then(|| Activation {
                                ahr: mean_defined(per.iter().map(|m| m.activation.and_then(|a| a.ahr))),
                                nahr: mean_defined(per.iter().map(|m| m.activation.and_then(|a| a.nahr))),
                            }),
                        })
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            condition,
            ablation,
            aggregation,
            n_ipus: pred.len(),
            n_frames,
            streams,
        })
    }

    pub fn stream(&self, s: Stream) -> &StreamMetrics {
        &self.streams[s.index()]
    }

    /// Rows AU01..RZ, columns RMSE, PCC, AHR, NAHR. Head rotations show
    /// `NA` for the activation columns; degenerate values show `undefined`.
    pub fn to_csv(&self) -> String {
        let num = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"));
        let mut out = String::from("stream,RMSE,PCC,AHR,NAHR\n");
        for m in &self.streams {
            let (a, n) = match m.activation {
                Some(act) => (num(act.ahr), num(act.nahr)),
                None => ("NA".into(), "NA".into()),
            };
            out.push_str(&format!("{},{:.6},{},{a},{n}\n", m.stream, m.rmse, num(m.pcc)));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, json: impl AsRef<Path>, csv: impl AsRef<Path>) -> Result<()> {
        std::fs::write(json, self.to_json()?)?;
        std::fs::write(csv, self.to_csv())?;
        Ok(())
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.3}"));
        writeln!(
            f,
            "{} ({}, {} IPUs, {} frames)",
            self.condition, self.ablation, self.n_ipus, self.n_frames
        )?;
        writeln!(f, "{:<6}{:>10}{:>10}{:>10}{:>10}", "", "RMSE", "PCC", "AHR", "NAHR")?;
        for m in &self.streams {
            let (a, n) = match m.activation {
                Some(act) => (cell(act.ahr), cell(act.nahr)),
                None => ("NA".into(), "NA".into()),
            };
            writeln!(f, "{:<6}{:>10.3}{:>10}{:>10}{:>10}", m.stream.name(), m.rmse, cell(m.pcc), a, n)?;
        }
        Ok(())
    }
}
