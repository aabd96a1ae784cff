//! Named parameter/buffer storage and the forward-pass binder.
//!
//! Persistent state lives in a `ParamStore`; each training phase builds a
//! fresh `Graph` and leases parameters into it through a `Fwd` session. A
//! parameter bound twice (the shared trunk) gets one node, so gradient
//! contributions from every use accumulate on it.

use super::graph::{BatchStats, Graph, Scalar, TensorRef};
use crate::error::{Error, Result};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry<F> {
    pub shape: Vec<usize>,
    pub values: Vec<F>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<F> {
    params: BTreeMap<String, Entry<F>>,
    buffers: BTreeMap<String, Entry<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { params: BTreeMap::new(), buffers: BTreeMap::new() }
    }

    pub fn insert_param(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<F>) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.params.insert(name.into(), Entry { shape, values });
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<F>) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.buffers.insert(name.into(), Entry { shape, values });
    }

    pub fn param(&self, name: &str) -> Result<&Entry<F>> {
        self.params.get(name).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut Entry<F>> {
        self.params.get_mut(name).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn buffer(&self, name: &str) -> Result<&Entry<F>> {
        self.buffers.get(name).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn buffer_mut(&mut self, name: &str) -> Result<&mut Entry<F>> {
        self.buffers.get_mut(name).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn buffer_names(&self) -> impl Iterator<Item = &str> {
        self.buffers.keys().map(|s| s.as_str())
    }

    pub fn params_iter(&self) -> impl Iterator<Item = (&str, &Entry<F>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn buffers_iter(&self) -> impl Iterator<Item = (&str, &Entry<F>)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(|e| e.values.len()).sum()
    }
}

impl ParamStore<f32> {
    /// Widened copy for the finite-difference checker.
    pub fn to_f64(&self) -> ParamStore<f64> {
        let mut out = ParamStore::new();
        for (k, e) in &self.params {
            out.insert_param(k.clone(), e.shape.clone(), e.values.iter().map(|v| *v as f64).collect());
        }
        for (k, e) in &self.buffers {
            out.insert_buffer(k.clone(), e.shape.clone(), e.values.iter().map(|v| *v as f64).collect());
        }
        out
    }
}

/// How batch norm layers behave during a forward build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics; statistics are reported for running updates.
    Train,
    /// Batch statistics without reporting (gradient checks, probes).
    TrainFrozen,
    /// Running statistics from the store's buffers.
    Eval,
}

/// Batch statistics produced by one train-mode batch norm application,
/// keyed by the layer's buffer name prefix.
pub struct BnUpdate<F> {
    pub prefix: String,
    pub stats: BatchStats<F>,
    /// Elements averaged per channel (for the unbiased variance correction).
    pub count: usize,
}

/// One forward build: a graph plus the parameter bindings into it.
pub struct Fwd<'s, F: Scalar> {
    pub graph: Graph<F>,
    store: &'s ParamStore<F>,
    bound: BTreeMap<String, TensorRef>,
    pub bn_mode: BnMode,
    pub bn_updates: Vec<BnUpdate<F>>,
}

impl<'s, F: Scalar> Fwd<'s, F> {
    pub fn new(store: &'s ParamStore<F>, bn_mode: BnMode) -> Self {
        Fwd { graph: Graph::new(), store, bound: BTreeMap::new(), bn_mode, bn_updates: Vec::new() }
    }

    /// Bind a trainable parameter (cached; one node per name).
    pub fn param(&mut self, name: &str) -> Result<TensorRef> {
        if let Some(t) = self.bound.get(name) {
            return Ok(*t);
        }
        let entry = self.store.param(name)?;
        let t = self.graph.param(&entry.shape, entry.values.clone())?;
        self.bound.insert(name.to_string(), t);
        Ok(t)
    }

    /// Bind a buffer as a constant.
    pub fn buffer(&mut self, name: &str) -> Result<TensorRef> {
        let entry = self.store.buffer(name)?;
        self.graph.constant(&entry.shape, entry.values.clone())
    }

    pub fn bound(&self) -> impl Iterator<Item = (&str, TensorRef)> {
        self.bound.iter().map(|(k, t)| (k.as_str(), *t))
    }

    /// Batch-norm layer helper: dispatches on the session mode and records
    /// statistics for the trainer to fold into the running buffers.
    pub fn batchnorm(&mut self, x: TensorRef, prefix: &str, eps: F) -> Result<TensorRef> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        match self.bn_mode {
            BnMode::Train | BnMode::TrainFrozen => {
                let shape = self.graph.shape(x).to_vec();
                let count = shape[0] * shape[2] * shape[3];
                let (y, stats) = self.graph.batchnorm_train(x, gamma, beta, eps)?;
                if self.bn_mode == BnMode::Train {
                    self.bn_updates.push(BnUpdate { prefix: prefix.to_string(), stats, count });
                }
                Ok(y)
            }
            BnMode::Eval => {
                let mean = self.buffer(&format!("{prefix}.running_mean"))?;
                let var = self.buffer(&format!("{prefix}.running_var"))?;
                self.graph.batchnorm_eval(x, gamma, beta, mean, var, eps)
            }
        }
    }

    /// Gradients of every bound parameter after `backward`, in name order.
    pub fn grads(&self) -> BTreeMap<String, Vec<F>> {
        let mut out = BTreeMap::new();
        for (name, t) in &self.bound {
            if let Some(g) = self.graph.grad(*t) {
                out.insert(name.clone(), g.to_vec());
            }
        }
        out
    }
}

/// Fold captured batch statistics into running buffers by exponential
/// moving average. Variance uses the unbiased estimate.
pub fn apply_bn_updates(store: &mut ParamStore<f32>, updates: &[BnUpdate<f32>], momentum: f32) -> Result<()> {
    for u in updates {
        let correction = if u.count > 1 { u.count as f32 / (u.count as f32 - 1.0) } else { 1.0 };
        let rm = store.buffer_mut(&format!("{}.running_mean", u.prefix))?;
        for (r, m) in rm.values.iter_mut().zip(&u.stats.mean) {
            *r = momentum * *r + (1.0 - momentum) * *m;
        }
        let rv = store.buffer_mut(&format!("{}.running_var", u.prefix))?;
        for (r, v) in rv.values.iter_mut().zip(&u.stats.var) {
            *r = momentum * *r + (1.0 - momentum) * *v * correction;
        }
    }
    Ok(())
}
