use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{GestureModel, ModelInput};
use crate::numerics::{collect_grads, Graph, Tensor, Var};
use crate::Scalar;

/// Mean cross-entropy over unpadded (frame, stream) pairs.
pub fn token_loss<T: Scalar>(
    graph: &Graph<T>,
    logits: &[Var],
    targets: &[Vec<usize>],
    frame_pad: &[bool],
) -> Result<Var> {
    let keep: Vec<bool> = frame_pad.iter().map(|p| !p).collect();
    if !keep.iter().any(|&k| k) {
        return Err(Error::AllPadded);
    }
    if logits.is_empty() || logits.len() != targets.len() {
        return Err(Error::Config(format!(
            "{} logit streams for {} target streams",
            logits.len(),
            targets.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (&l, t) in logits.iter().zip(targets) {
        let ce = graph.cross_entropy(l, t, &keep)?;
        total = Some(match total {
            None => ce,
            Some(acc) => graph.add(acc, ce)?,
        });
    }
    let total = total.expect("at least one stream");
    Ok(graph.scale(total, T::of(1.0 / logits.len() as f64)))
}

/// Loss and parameter gradients for one IPU.
#[derive(Clone, Debug)]
pub struct IpuGradient<T> {
    pub loss: f64,
    /// Unpadded frames, the IPU's weight in a batch mean.
    pub frames: usize,
    pub grads: Vec<Tensor<T>>,
}

fn targets_of<T>(input: &ModelInput<T>) -> Result<&Vec<Vec<usize>>> {
    input
        .targets
        .as_ref()
        .ok_or_else(|| Error::Dataset(format!("IPU `{}` has no targets", input.id)))
}

/// Teacher-forced loss of one IPU without gradients. Dropout is off.
pub fn ipu_loss<T: Scalar>(model: &GestureModel<T>, input: &ModelInput<T>) -> Result<f64> {
    let g = Graph::new();
    let s = model.session(&g, None, false);
    let logits = model.forward_teacher_forced(&s, input)?;
    let loss = token_loss(&g, &logits, targets_of(input)?, &input.frame_pad)?;
    Ok(g.value(loss).data()[0].as_f64())
}

/// Teacher-forced loss of one IPU and its gradient. `dropout_seed` turns
/// dropout on.
pub fn ipu_gradient<T: Scalar>(
    model: &GestureModel<T>,
    input: &ModelInput<T>,
    dropout_seed: Option<u64>,
) -> Result<IpuGradient<T>> {
    let g = Graph::new();
    let s = model.session(&g, dropout_seed, true);
    let logits = model.forward_teacher_forced(&s, input)?;
    let loss = token_loss(&g, &logits, targets_of(input)?, &input.frame_pad)?;
    let mut grads = g.backward(loss)?;
    Ok(IpuGradient {
        loss: g.value(loss).data()[0].as_f64(),
        frames: input.true_frames(),
        grads: collect_grads(&mut grads, s.leaves()),
    })
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.carry
    }
}

/// Frame-weighted mean of per-IPU losses and gradients, i.e. the loss
/// averaged over every unpadded (frame, stream) pair of the batch. Sums are
/// compensated and taken in batch order.
pub fn reduce<T: Scalar>(parts: &[IpuGradient<T>]) -> Result<(f64, Vec<Tensor<T>>)> {
    let total: usize = parts.iter().map(|p| p.frames).sum();
    if total == 0 {
        return Err(Error::AllPadded);
    }
    let weights: Vec<f64> = parts.iter().map(|p| p.frames as f64 / total as f64).collect();
    let mut loss = Compensated::default();
    for (p, w) in parts.iter().zip(&weights) {
        loss.add(w * p.loss);
    }
    let grads = (0..parts[0].grads.len())
        .map(|i| {
            let shape = parts[0].grads[i].shape().to_vec();
            let n = parts[0].grads[i].len();
            let mut acc = vec![Compensated::default(); n];
            for (p, w) in parts.iter().zip(&weights) {
                for (a, v) in acc.iter_mut().zip(p.grads[i].data()) {
                    a.add(w * v.as_f64());
                }
            }
            Tensor::new(shape, acc.into_iter().map(|a| T::of(a.value())).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((loss.value(), grads))
}

/// Batch loss and gradient. IPUs run in parallel; the reduction order is
/// the batch order.
pub fn batch_gradient<T: Scalar>(
    model: &GestureModel<T>,
    batch: &[&ModelInput<T>],
    dropout_seeds: &[Option<u64>],
) -> Result<(f64, Vec<Tensor<T>>)> {
    let parts = batch
        .par_iter()
        .zip(dropout_seeds.par_iter())
        .map(|(input, &seed)| ipu_gradient(model, input, seed))
        .collect::<Result<Vec<_>>>()?;
    reduce(&parts)
}

/// Frame-weighted mean loss over `inputs` with dropout off.
pub fn dataset_loss<T: Scalar>(model: &GestureModel<T>, inputs: &[ModelInput<T>]) -> Result<f64> {
    let losses = inputs
        .par_iter()
        .map(|input| Ok((ipu_loss(model, input)?, input.true_frames())))
        .collect::<Result<Vec<_>>>()?;
    let total: usize = losses.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::AllPadded);
    }
    let mut acc = Compensated::default();
    for (l, n) in losses {
        acc.add(l * n as f64 / total as f64);
    }
    Ok(acc.value())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits_const(g: &Graph<f64>, rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Var {
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        g.constant(Tensor::new(vec![rows, cols], data).unwrap())
    }

    #[test]
    fn uniform_logits_give_log_bins() {
        let g = Graph::new();
        let logits: Vec<Var> = (0..9).map(|_| logits_const(&g, 5, 256, |_, _| 0.3)).collect();
        let targets = vec![vec![0, 17, 255, 3, 100]; 9];
        let l = token_loss(&g, &logits, &targets, &[false; 5]).unwrap();
        assert!((g.value(l).data()[0] - 256f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_give_near_zero() {
        let g = Graph::new();
        let targets = vec![vec![1, 2, 0]; 9];
        let logits: Vec<Var> = (0..9)
            .map(|_| logits_const(&g, 3, 4, |r, c| if c == [1, 2, 0][r] { 40.0 } else { 0.0 }))
            .collect();
        let l = token_loss(&g, &logits, &targets, &[false; 3]).unwrap();
        assert!(g.value(l).data()[0] < 1e-15);
    }

    #[test]
    fn padding_is_excluded() {
        let g = Graph::new();
        let f = |r: usize, c: usize| ((r * 7 + c * 3) % 5) as f64 * 0.4;
        let short: Vec<Var> = (0..9).map(|_| logits_const(&g, 3, 4, f)).collect();
        let long: Vec<Var> = (0..9).map(|_| logits_const(&g, 6, 4, |r, c| if r < 3 { f(r, c) } else { 9.0 * c as f64 })).collect();
        let a = token_loss(&g, &short, &vec![vec![0, 1, 2]; 9], &[false; 3]).unwrap();
        let b = token_loss(&g, &long, &vec![vec![0, 1, 2, 5, 5, 5]; 9], &[false, false, false, true, true, true]).unwrap();
        assert!((g.value(a).data()[0] - g.value(b).data()[0]).abs() < 1e-15);
        assert!(matches!(
            token_loss(&g, &short, &vec![vec![0, 1, 2]; 9], &[true; 3]),
            Err(Error::AllPadded)
        ));
    }

    #[test]
    fn reduction_weights_by_frames() {
        let part = |loss: f64, frames: usize, g: f64| IpuGradient {
            loss,
            frames,
            grads: vec![Tensor::from_vec(vec![g, 2.0 * g])],
        };
        let (l, g) = reduce(&[part(1.0, 1, 3.0), part(4.0, 3, 1.0)]).unwrap();
        assert!((l - 3.25).abs() < 1e-15);
        assert_eq!(g[0].data(), &[1.5, 3.0]);
    }

    #[test]
    fn compensated_sum_keeps_small_terms() {
        let mut c = Compensated::default();
        for x in [1e16, 1.0, -1e16, 1.0] {
            c.add(x);
        }
        assert_eq!(c.value(), 2.0);
    }
}
