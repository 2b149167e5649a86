//! Central finite-difference verification of analytic gradients.

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct FdOptions {
    /// Perturbation applied in both directions.
    pub h: f64,
    /// Maximum tolerated relative error.
    pub tol: f64,
    /// Lower bound on the relative-error denominator, so entries whose true
    /// gradient is zero are judged on absolute error at this scale.
    pub floor: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            h: 1e-6,
            tol: 1e-4,
            floor: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FdEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub exceeds: bool,
}

#[derive(Clone, Debug)]
pub struct FdReport {
    pub entries: Vec<FdEntry>,
    pub tol: f64,
}

impl FdReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &FdEntry> {
        self.entries.iter().filter(|e| e.exceeds)
    }

    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` (one tensor per parameter, in store order) with
/// `(f(p + h) - f(p - h)) / 2h` for every scalar of every parameter.
/// `f` must be deterministic.
pub fn finite_difference_check<F>(
    params: &ParamStore<f64>,
    analytic: &[Tensor<f64>],
    f: F,
    opts: FdOptions,
) -> Result<FdReport>
where
    F: Fn(&ParamStore<f64>) -> Result<f64>,
{
    let mut probe = params.clone();
    let mut entries = Vec::with_capacity(params.len());
    for (i, grad) in analytic.iter().enumerate() {
        let mut worst = (0.0, 0.0, 0);
        for j in 0..grad.len() {
            let orig = probe.tensors()[i].data()[j];
            probe.tensors_mut()[i].data_mut()[j] = orig + opts.h;
            let up = f(&probe)?;
            probe.tensors_mut()[i].data_mut()[j] = orig - opts.h;
            let down = f(&probe)?;
            probe.tensors_mut()[i].data_mut()[j] = orig;

            let numeric = (up - down) / (2.0 * opts.h);
            let a = grad.data()[j];
            let rel = relative_error(a, numeric, opts.floor);
            if rel > worst.0 {
                worst = (rel, (a - numeric).abs(), j);
            }
        }
        entries.push(FdEntry {
            name: params.names()[i].clone(),
            max_rel_err: worst.0,
            max_abs_err: worst.1,
            worst_index: worst.2,
            exceeds: worst.0 >= opts.tol,
        });
    }
    Ok(FdReport {
        entries,
        tol: opts.tol,
    })
}
