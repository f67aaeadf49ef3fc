use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// One named weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub trainable: bool,
}

/// Ordered, uniquely named collection of weight matrices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Matrix, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::contract(format!("duplicate parameter name {name:?}")));
        }
        self.params.push(Param {
            name,
            value,
            trainable,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param> {
        self.params.iter_mut()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| &mut p.value)
    }

    /// Like [`get`](Self::get) but a missing name is a contract error.
    pub fn require(&self, name: &str) -> Result<&Matrix> {
        self.get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name:?}")))
    }

    pub fn require_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        self.get_mut(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name:?}")))
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.params
            .iter()
            .any(|p| p.name == name && p.trainable)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let p = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name:?}")))?;
        p.trainable = trainable;
        Ok(())
    }

    pub fn names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn trainable_names(&self) -> Vec<&str> {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.name.as_str())
            .collect()
    }

    /// True when both sets have the same names, order and shapes.
    pub fn congruent(&self, other: &ParamSet) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape())
    }

    /// Order-sensitive 64-bit fingerprint of names and values.
    pub(crate) fn fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for p in &self.params {
            p.name.hash(&mut h);
            p.value.shape().hash(&mut h);
            for x in p.value.data() {
                x.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Gradients for a subset of a [`ParamSet`], same names and shapes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradSet {
    entries: Vec<(String, Matrix)>,
}

impl GradSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Matrix) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = grad,
            None => self.entries.push((name, grad)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, g)| g)
    }

    pub fn require(&self, name: &str) -> Result<&Matrix> {
        self.get(name)
            .ok_or_else(|| Error::contract(format!("no gradient for {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|(n, g)| (n.as_str(), g))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every entry names a parameter of `params` with the same shape.
    pub fn check_congruent(&self, params: &ParamSet) -> Result<()> {
        for (name, g) in &self.entries {
            let p = params.require(name)?;
            if p.shape() != g.shape() {
                return Err(Error::contract(format!(
                    "gradient {name:?} is {:?} but parameter is {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        Ok(())
    }

    /// Largest entrywise relative error against another gradient set,
    /// normalized per matrix by its largest magnitude.
    pub fn max_relative_error(&self, other: &GradSet) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (name, g) in &self.entries {
            let o = other.require(name)?;
            let scale = g.max_abs().max(o.max_abs()).max(1e-12);
            worst = worst.max(g.max_abs_diff(o) / scale);
        }
        Ok(worst)
    }
}
