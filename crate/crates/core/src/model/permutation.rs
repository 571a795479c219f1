use std::fmt;

use crate::error::{Error, Result};

/// Execution order of all `L` layers: entry `i` is the (zero-based) index of
/// the layer run at position `i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(layers: usize) -> Self {
        Permutation((0..layers).collect())
    }

    /// Validates a zero-based order.
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &i in &order {
            if i >= order.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidPermutation(order));
            }
        }
        if order.is_empty() {
            return Err(Error::InvalidPermutation(order));
        }
        Ok(Permutation(order))
    }

    /// Validates a one-based order such as `[2, 1, 3]`.
    pub fn from_one_based(order: &[usize]) -> Result<Self> {
        if order.contains(&0) {
            return Err(Error::InvalidPermutation(order.to_vec()));
        }
        Permutation::new(order.iter().map(|&i| i - 1).collect())
            .map_err(|_| Error::InvalidPermutation(order.to_vec()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &j)| i == j)
    }

    /// `out[i] = items[self[i]]`: the items in execution order.
    pub fn apply<X: Clone>(&self, items: &[X]) -> Vec<X> {
        assert_eq!(items.len(), self.0.len(), "permutation length mismatch");
        self.0.iter().map(|&i| items[i].clone()).collect()
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (pos, &layer) in self.0.iter().enumerate() {
            inv[layer] = pos;
        }
        Permutation(inv)
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| (i + 1).to_string()).collect();
        f.write_str(&parts.join(","))
    }
}
