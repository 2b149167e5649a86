use crate::error::{shape_err, Error, Result};

/// AU values strictly above this count as activated.
pub const ACTIVATION_THRESHOLD: f64 = 0.5;

fn check(op: &'static str, pred: &[f64], truth: &[f64], min_len: usize) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(shape_err(op, &[&[pred.len()], &[truth.len()]]));
    }
    if pred.len() < min_len {
        return Err(Error::EmptySequence(op));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check("rmse", pred, truth, 1)?;
    let sq: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

/// Pearson correlation; `None` when either sequence is constant.
pub fn pcc(pred: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    check("pcc", pred, truth, 2)?;
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut cov, mut vp, mut vt) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (dp, dt) = (p - mp, t - mt);
        cov += dp * dt;
        vp += dp * dp;
        vt += dt * dt;
    }
    if vp == 0.0 || vt == 0.0 {
        return Ok(None);
    }
    Ok(Some((cov / (vp.sqrt() * vt.sqrt())).clamp(-1.0, 1.0)))
}

pub fn activation(values: &[f64], threshold: f64) -> Vec<bool> {
    values.iter().map(|&v| v > threshold).collect()
}

fn hit_rate(op: &'static str, pred: &[f64], truth: &[f64], active: bool) -> Result<Option<f64>> {
    check(op, pred, truth, 1)?;
    let count = |v: &[f64]| {
        activation(v, ACTIVATION_THRESHOLD)
            .into_iter()
            .filter(|&a| a == active)
            .count()
    };
    let denom = count(truth);
    Ok((denom > 0).then(|| 100.0 * count(pred) as f64 / denom as f64))
}

/// Activated predicted frames as a percentage of activated true frames.
/// `None` when the truth is never activated.
pub fn ahr(pred: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    hit_rate("ahr", pred, truth, true)
}

/// As [`ahr`] for non-activated frames.
pub fn nahr(pred: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    hit_rate("nahr", pred, truth, false)
}
