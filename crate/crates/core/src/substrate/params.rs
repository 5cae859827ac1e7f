//! Named parameter storage with AdamW moments.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub value: Arc<ArrayD<T>>,
    pub m: ArrayD<T>,
    pub v: ArrayD<T>,
    /// Receives decoupled weight decay.
    pub decay: bool,
    /// Frozen parameters are stored and checkpointed but never updated.
    pub trainable: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Scalar> {
    params: Vec<Param<T>>,
    index: HashMap<String, ParamId>,
    /// Number of optimizer steps taken so far.
    pub step: u64,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
            step: 0,
        }
    }

    /// Registers a trainable parameter that receives weight decay.
    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<T>) -> ParamId {
        self.insert(name.into(), value, true, true)
    }

    /// Registers a trainable parameter exempt from weight decay (norm gains, SSM dynamics).
    pub fn add_no_decay(&mut self, name: impl Into<String>, value: ArrayD<T>) -> ParamId {
        self.insert(name.into(), value, false, true)
    }

    /// Registers a frozen buffer.
    pub fn add_frozen(&mut self, name: impl Into<String>, value: ArrayD<T>) -> ParamId {
        self.insert(name.into(), value, false, false)
    }

    fn insert(&mut self, name: String, value: ArrayD<T>, decay: bool, trainable: bool) -> ParamId {
        assert!(
            !self.index.contains_key(&name),
            "parameter `{name}` registered twice"
        );
        let id = ParamId(self.params.len());
        self.params.push(Param {
            m: ArrayD::zeros(value.raw_dim()),
            v: ArrayD::zeros(value.raw_dim()),
            name: name.clone(),
            value: Arc::new(value),
            decay,
            trainable,
        });
        self.index.insert(name, id);
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<T> {
        &self.params[id.0].value
    }

    pub fn shared(&self, id: ParamId) -> Arc<ArrayD<T>> {
        Arc::clone(&self.params[id.0].value)
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar entries across trainable parameters.
    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Overwrites a parameter value by name, checking the shape.
    pub fn set(&mut self, name: &str, value: ArrayD<T>) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Invalid(format!("unknown parameter `{name}`")))?;
        let current = self.value(id);
        if current.shape() != value.shape() {
            return Err(crate::error::shape_err(
                "ParamStore::set",
                value.shape(),
                current.shape(),
            ));
        }
        *self.value_mut(id) = value;
        Ok(())
    }

    /// Copies every parameter whose name starts with `prefix` from `other`
    /// (after replacing `prefix` with `other_prefix`), when shapes agree.
    pub fn copy_prefix_from(
        &mut self,
        prefix: &str,
        other: &ParamStore<T>,
        other_prefix: &str,
    ) -> usize {
        let mut copied = 0;
        for i in 0..self.params.len() {
            let name = self.params[i].name.clone();
            if let Some(rest) = name.strip_prefix(prefix) {
                let src = format!("{other_prefix}{rest}");
                if let Some(oid) = other.id(&src) {
                    if other.value(oid).shape() == self.params[i].value.shape() {
                        self.params[i].value = other.shared(oid);
                        copied += 1;
                    }
                }
            }
        }
        copied
    }
}
