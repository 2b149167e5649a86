use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{Aggregation, Condition, MetricsReport};
use crate::error::{Error, Result};
use crate::features::{Dataset, DatasetMeta, Ipu, Split, Stream};
use crate::model::{Decoding, GestureModel, ModelInput};
use crate::Scalar;

/// Generated curves of one IPU, normalized to `[0, 1]` and indexed
/// `[stream][frame]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IpuPrediction {
    pub id: String,
    pub speaker_id: String,
    pub curves: Vec<Vec<f64>>,
}

impl IpuPrediction {
    /// Curves mapped back to the recording scale with the dataset bounds.
    pub fn denormalized(&self, meta: &DatasetMeta) -> Result<Vec<Vec<f64>>> {
        Stream::ALL
            .iter()
            .map(|&s| Ok(meta.bounds(s)?.denormalize(&self.curves[s.index()])))
            .collect()
    }
}

/// Generates every IPU from text and F0 alone. The output length is the
/// IPU duration at 24 fps. IPUs run in parallel; order is preserved.
pub fn predict<T: Scalar>(
    model: &GestureModel<T>,
    ipus: &[&Ipu],
    meta: &DatasetMeta,
    decoding: Decoding,
) -> Result<Vec<IpuPrediction>> {
    let cfg = model.config();
    ipus.par_iter()
        .map(|ipu| {
            let input = ModelInput::<T>::from_ipu(ipu, meta, cfg)?.without_targets();
            let n = ipu.frame_count(cfg.max_out_len);
            let curves = model.generate_curves(&input, n, &meta.quantizer, decoding)?;
            Ok(IpuPrediction {
                id: ipu.id.clone(),
                speaker_id: ipu.speaker_id.clone(),
                curves,
            })
        })
        .collect()
}

/// Test IPUs of `condition`. For SI, IPUs of speakers that also appear in
/// training are dropped.
pub fn condition_ipus(dataset: &Dataset, condition: Condition) -> Result<Vec<&Ipu>> {
    let mut ipus = dataset.split(condition.split());
    if condition == Condition::Si {
        let seen: BTreeSet<&str> = dataset.speakers(Split::Train).into_iter().collect();
        let before = ipus.len();
        ipus.retain(|i| !seen.contains(i.speaker_id.as_str()));
        if ipus.len() < before {
            log::warn!("dropped {} SI IPUs from speakers seen in training", before - ipus.len());
        }
    }
    if ipus.is_empty() {
        return Err(Error::EmptySplit(condition.split().name().into()));
    }
    Ok(ipus)
}

/// True curves truncated to the generated length.
fn truth_curves(ipu: &Ipu, n: usize) -> Vec<Vec<f64>> {
    ipu.targets
        .streams()
        .iter()
        .map(|s| s[..n.min(s.len())].to_vec())
        .collect()
}

/// Generates the test split of `condition` and scores it against the
/// normalized ground truth.
pub fn evaluate<T: Scalar>(
    model: &GestureModel<T>,
    dataset: &Dataset,
    condition: Condition,
    aggregation: Aggregation,
    decoding: Decoding,
) -> Result<(MetricsReport, Vec<IpuPrediction>)> {
    let ipus = condition_ipus(dataset, condition)?;
    let preds = predict(model, &ipus, &dataset.meta, decoding)?;
    let mut pred_curves = Vec::with_capacity(preds.len());
    let mut truth = Vec::with_capacity(preds.len());
    for (p, ipu) in preds.iter().zip(&ipus) {
        let n = p.curves[0].len().min(ipu.targets.len());
        if n != p.curves[0].len() {
            log::warn!("IPU `{}`: {} target frames for {} generated", ipu.id, ipu.targets.len(), p.curves[0].len());
        }
        pred_curves.push(p.curves.iter().map(|c| c[..n].to_vec()).collect());
        truth.push(truth_curves(ipu, n));
    }
    let report = MetricsReport::from_curves(&pred_curves, &truth, condition, model.ablation(), aggregation)?;
    Ok((report, preds))
}
