//! Named parameter storage, initialization, and checkpointing.
//!
//! A `ParamStore` owns the master copy of every learnable tensor. Forward
//! passes bind parameters onto a tape through a `ParamBinder`, which pushes
//! each parameter at most once per tape so gradients from repeated use
//! accumulate on a single leaf.

use crate::scalar::Scalar;
use crate::tape::{TapeOf, TensorRef};
use rand::Rng;
use std::collections::HashMap;
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HORDCKPT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct ParamTensor<S> {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<S>,
}

/// How a parameter is filled at creation time.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in ±1/sqrt(fan_in). Fan-in is the row count (inputs).
    UniformFanIn,
    /// `UniformFanIn` shrunk by a factor; used for output heads that should
    /// start near zero.
    UniformFanInScaled(f64),
}

#[derive(Debug, thiserror::Error)]
pub enum ParamError {
    #[error("duplicate parameter name {0:?}")]
    DuplicateName(String),
    #[error("unknown parameter name {0:?}")]
    UnknownName(String),
    #[error("parameter {name:?}: checkpoint shape {found:?} does not match {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error(transparent)]
    Container(#[from] hord_io::ContainerError),
}

#[derive(Clone)]
pub struct ParamStore<S> {
    names: Vec<String>,
    tensors: Vec<ParamTensor<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut R,
    ) -> ParamId {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        let n = rows * cols;
        let values: Vec<S> = match init {
            Init::Zeros => vec![S::zero(); n],
            Init::Ones => vec![S::one(); n],
            Init::UniformFanIn | Init::UniformFanInScaled(_) => {
                let scale = match init {
                    Init::UniformFanInScaled(s) => s,
                    _ => 1.0,
                };
                let bound = scale / (rows.max(1) as f64).sqrt();
                (0..n)
                    .map(|_| S::of(rng.gen_range(-bound..bound)))
                    .collect()
            }
        };
        let id = ParamId(self.tensors.len());
        self.index.insert(name.to_string(), id.0);
        self.names.push(name.to_string());
        self.tensors.push(ParamTensor { rows, cols, values });
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor<S> {
        &mut self.tensors[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Total element count across all parameters.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }

    /// Save every parameter (float64 on disk regardless of S) plus free-form
    /// metadata. Round trips are bit-exact for S = f64.
    pub fn save(&self, path: &Path, meta: serde_json::Value) -> Result<(), ParamError> {
        let mut file = hord_io::BlockFile::new(CHECKPOINT_MAGIC, meta);
        for (name, tensor) in self.names.iter().zip(&self.tensors) {
            file.push(hord_io::Block::new(
                name.clone(),
                vec![tensor.rows, tensor.cols],
                tensor.values.iter().map(|v| v.to_f64_lossy()).collect(),
            ));
        }
        hord_io::write_block_file(path, &file)?;
        Ok(())
    }

    /// Load a checkpoint written by `save`, reconstructing names in file
    /// order. Returns the store and its metadata.
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value), ParamError> {
        let file = hord_io::read_block_file(path, Some(CHECKPOINT_MAGIC))?;
        let mut store = ParamStore::new();
        for block in file.blocks {
            if store.index.contains_key(&block.name) {
                return Err(ParamError::DuplicateName(block.name));
            }
            let (rows, cols) = match block.shape.as_slice() {
                [r, c] => (*r, *c),
                [n] => (1, *n),
                other => {
                    return Err(ParamError::ShapeMismatch {
                        name: block.name,
                        expected: vec![0, 0],
                        found: other.to_vec(),
                    })
                }
            };
            let id = ParamId(store.tensors.len());
            store.index.insert(block.name.clone(), id.0);
            store.names.push(block.name);
            store.tensors.push(ParamTensor {
                rows,
                cols,
                values: block.values.into_iter().map(S::of).collect(),
            });
        }
        Ok((store, file.meta))
    }

    /// Copy values from `other` into this store wherever names match,
    /// requiring identical shapes. Returns the number of tensors copied.
    pub fn copy_matching(&mut self, other: &ParamStore<S>) -> Result<usize, ParamError> {
        let mut copied = 0;
        for (name, src) in other.names.iter().zip(&other.tensors) {
            if let Some(&i) = self.index.get(name) {
                let dst = &mut self.tensors[i];
                if dst.rows != src.rows || dst.cols != src.cols {
                    return Err(ParamError::ShapeMismatch {
                        name: name.clone(),
                        expected: vec![dst.rows, dst.cols],
                        found: vec![src.rows, src.cols],
                    });
                }
                dst.values.clone_from(&src.values);
                copied += 1;
            }
        }
        Ok(copied)
    }
}

/// Per-tape cache of bound parameters. Binding the same `ParamId` twice
/// returns the same leaf, so multi-use gradients accumulate correctly.
pub struct ParamBinder {
    bound: Vec<Option<TensorRef>>,
    order: Vec<ParamId>,
}

impl ParamBinder {
    pub fn new() -> Self {
        ParamBinder {
            bound: Vec::new(),
            order: Vec::new(),
        }
    }

    pub fn bind<S: Scalar>(
        &mut self,
        tape: &mut TapeOf<S>,
        store: &ParamStore<S>,
        id: ParamId,
    ) -> TensorRef {
        if self.bound.len() <= id.0 {
            self.bound.resize(id.0 + 1, None);
        }
        if let Some(r) = self.bound[id.0] {
            return r;
        }
        let t = store.get(id);
        let r = tape.leaf(t.values.clone(), t.rows, t.cols);
        self.bound[id.0] = Some(r);
        self.order.push(id);
        r
    }

    /// Harvest gradients for every parameter bound on this tape, in binding
    /// order (deterministic given a deterministic forward pass).
    pub fn collect_grads<S: Scalar>(&self, tape: &TapeOf<S>) -> Vec<(ParamId, Vec<S>)> {
        self.order
            .iter()
            .map(|&id| (id, tape.grad(self.bound[id.0].unwrap()).to_vec()))
            .collect()
    }
}

impl Default for ParamBinder {
    fn default() -> Self {
        Self::new()
    }
}
