use std::fmt;

use sha2::{Digest, Sha256};

/// The network a parameter array belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Owner {
    Predictor,
    Psi,
    Head,
    Decoder,
}

impl Owner {
    pub const ALL: [Owner; 4] = [Owner::Predictor, Owner::Psi, Owner::Head, Owner::Decoder];

    pub fn as_str(self) -> &'static str {
        match self {
            Owner::Predictor => "predictor",
            Owner::Psi => "psi",
            Owner::Head => "head",
            Owner::Decoder => "decoder",
        }
    }
}

impl fmt::Display for Owner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A named dense parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub owner: Owner,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub trainable: bool,
}

impl ParamTensor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Every parameter of a model bundle, in a fixed order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: Vec<ParamTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn push(&mut self, name: String, owner: Owner, shape: Vec<usize>, values: Vec<f64>) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        debug_assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        self.tensors.push(ParamTensor {
            name,
            owner,
            shape,
            values,
            trainable: true,
        });
        self.tensors.len() - 1
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.tensors
    }

    pub fn get(&self, index: usize) -> &ParamTensor {
        &self.tensors[index]
    }

    pub fn values(&self, index: usize) -> &[f64] {
        &self.tensors[index].values
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(ParamTensor::len).sum()
    }

    pub fn scalar_count_of(&self, owner: Owner) -> usize {
        self.tensors
            .iter()
            .filter(|t| t.owner == owner)
            .map(ParamTensor::len)
            .sum()
    }

    pub fn is_trainable(&self, index: usize) -> bool {
        self.tensors[index].trainable
    }

    pub fn set_trainable(&mut self, owner: Owner, trainable: bool) {
        for t in self.tensors.iter_mut().filter(|t| t.owner == owner) {
            t.trainable = trainable;
        }
    }

    pub fn owner_trainable(&self, owner: Owner) -> bool {
        self.tensors
            .iter()
            .filter(|t| t.owner == owner)
            .any(|t| t.trainable)
    }

    /// SHA-256 over names, shapes and little-endian values of every array.
    pub fn digest(&self) -> String {
        digest_tensors(self.tensors.iter())
    }

    /// SHA-256 restricted to the arrays owned by `owner`.
    pub fn digest_of(&self, owner: Owner) -> String {
        digest_tensors(self.tensors.iter().filter(|t| t.owner == owner))
    }
}

fn digest_tensors<'a>(tensors: impl Iterator<Item = &'a ParamTensor>) -> String {
    let mut hasher = Sha256::new();
    for t in tensors {
        hasher.update(t.name.as_bytes());
        hasher.update([0u8]);
        for d in &t.shape {
            hasher.update((*d as u64).to_le_bytes());
        }
        for v in &t.values {
            hasher.update(v.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    tensors: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads {
            tensors: store.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn get(&self, index: usize) -> &[f64] {
        &self.tensors[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.tensors[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.tensors.iter().map(Vec::as_slice)
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Squared L2 norm of the gradients of one owner.
    pub fn norm_sq_of(&self, store: &ParamStore, owner: Owner) -> f64 {
        self.tensors
            .iter()
            .zip(store.tensors())
            .filter(|(_, t)| t.owner == owner)
            .flat_map(|(g, _)| g.iter())
            .map(|v| v * v)
            .sum()
    }
}
