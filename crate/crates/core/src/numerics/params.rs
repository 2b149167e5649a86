use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::Scalar;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Ordered collection of named learnable tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every tensor as a gradient-receiving leaf of `graph`.
    pub fn leaves(&self, graph: &Graph<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| graph.param(t.clone())).collect()
    }

    /// Copies values from `other` for every name present in both with the same
    /// shape. Returns how many tensors were copied.
    pub fn copy_matching(&mut self, other: &ParamStore<T>) -> usize {
        let mut copied = 0;
        for (name, dst) in self.names.iter().zip(self.tensors.iter_mut()) {
            if let Some(src) = other.by_name(name) {
                if src.shape() == dst.shape() {
                    *dst = src.clone();
                    copied += 1;
                }
            }
        }
        copied
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Checks that `other` has exactly the same names and shapes, listing
    /// every difference.
    pub fn check_layout(&self, other: &ParamStore<T>) -> Result<()> {
        let mut diffs = Vec::new();
        for (name, t) in self.iter() {
            match other.by_name(name) {
                None => diffs.push(format!("missing `{name}`")),
                Some(o) if o.shape() != t.shape() => diffs.push(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    o.shape(),
                    t.shape()
                )),
                Some(_) => {}
            }
        }
        for name in other.names() {
            if self.by_name(name).is_none() {
                diffs.push(format!("unexpected `{name}`"));
            }
        }
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(Error::Checkpoint(diffs.join("; ")))
        }
    }
}

/// Pulls per-parameter gradients out of `grads`, in store order.
pub fn collect_grads<T: Scalar>(grads: &mut Gradients<T>, leaves: &[Var]) -> Vec<Tensor<T>> {
    leaves
        .iter()
        .map(|&v| grads.take(v).expect("parameter leaves always receive a gradient"))
        .collect()
}

pub const CHECKPOINT_FORMAT: &str = "visage-weights";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk weight file: a versioned list of named row-major tensors.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub params: Vec<NamedTensor>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Checkpoint {
    pub fn from_store<T: Scalar>(store: &ParamStore<T>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            dtype: T::dtype().to_string(),
            params: store
                .iter()
                .map(|(name, t)| NamedTensor {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    values: t.data().iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
        }
    }

    pub fn into_store<T: Scalar>(self) -> Result<ParamStore<T>> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let mut store = ParamStore::new();
        for p in self.params {
            let data = p.values.into_iter().map(T::of).collect();
            let t = Tensor::new(p.shape, data)
                .map_err(|e| Error::Checkpoint(format!("`{}`: {e}", p.name)))?;
            store.insert(p.name, t);
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("a.weight", Tensor::new(vec![2, 2], vec![0.1, -0.2, 1e-17, 3.0]).unwrap());
        s.insert("a.bias", Tensor::from_vec(vec![1.0 / 3.0, 2.5]));
        s
    }

    #[test]
    fn checkpoint_file_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        let s = store();
        Checkpoint::from_store(&s).save(&path).unwrap();
        let back: ParamStore<f64> = Checkpoint::load(&path).unwrap().into_store().unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn version_and_layout_are_checked() {
        let mut ck = Checkpoint::from_store(&store());
        ck.version = 99;
        assert!(ck.into_store::<f64>().is_err());

        let mut other = store();
        other.insert("extra", Tensor::from_vec(vec![0.0]));
        let err = store().check_layout(&other).unwrap_err().to_string();
        assert!(err.contains("unexpected `extra`"), "{err}");
    }

    #[test]
    fn copy_matching_skips_shape_changes() {
        let mut dst = ParamStore::<f64>::new();
        dst.insert("a.weight", Tensor::zeros(&[2, 2]));
        dst.insert("a.bias", Tensor::zeros(&[3]));
        assert_eq!(dst.copy_matching(&store()), 1);
        assert_eq!(dst.by_name("a.weight"), store().by_name("a.weight"));
    }
}
