//! Sparse storage for fully symmetric force-constant tensors.
//!
//! Only one entry per sorted multi-index is kept; the stored number is the
//! value of the symmetric tensor element, so every permutation of the index
//! tuple carries the same value. Contractions either expand the distinct
//! permutations explicitly (partial contractions) or weight each entry by its
//! multinomial count (full contraction with a single vector).

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::DVec;

/// Index tuple padded to four slots; only the first `order` are meaningful.
pub type Index4 = [usize; 4];

#[derive(Debug, Clone)]
pub struct SparseSymTensor {
    order: usize,
    dim: usize,
    entries: Vec<(Index4, f64)>,
    expanded: OnceLock<Vec<(Index4, f64)>>,
}

impl PartialEq for SparseSymTensor {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order && self.dim == other.dim && self.entries == other.entries
    }
}

fn sorted_key(order: usize, dim: usize, idx: &[usize]) -> Result<Index4> {
    if idx.len() != order {
        return Err(Error::InvalidTensor(format!(
            "order-{order} tensor indexed with {} indices",
            idx.len()
        )));
    }
    let mut key = [0usize; 4];
    key[..order].copy_from_slice(idx);
    key[..order].sort_unstable();
    if let Some(&bad) = key[..order].iter().find(|&&i| i >= dim) {
        return Err(Error::InvalidTensor(format!(
            "index {bad} out of range for dimension {dim}"
        )));
    }
    Ok(key)
}

fn factorial(k: usize) -> f64 {
    (1..=k).product::<usize>() as f64
}

/// Number of distinct orderings of a sorted index tuple.
pub fn multinomial(idx: &[usize]) -> f64 {
    let mut count = factorial(idx.len());
    let mut run = 1;
    for w in idx.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            count /= factorial(run);
            run = 1;
        }
    }
    count / factorial(run)
}

fn distinct_permutations(order: usize, key: &Index4) -> Vec<Index4> {
    let mut out = Vec::new();
    let mut slots: Vec<usize> = key[..order].to_vec();
    // Heap's algorithm over positions, dedup afterwards.
    fn heap(k: usize, slots: &mut Vec<usize>, out: &mut Vec<Index4>) {
        if k <= 1 {
            let mut idx = [0usize; 4];
            idx[..slots.len()].copy_from_slice(slots);
            out.push(idx);
            return;
        }
        for i in 0..k {
            heap(k - 1, slots, out);
            if k.is_multiple_of(2) {
                slots.swap(i, k - 1);
            } else {
                slots.swap(0, k - 1);
            }
        }
    }
    heap(order, &mut slots, &mut out);
    out.sort_unstable();
    out.dedup();
    out
}

impl SparseSymTensor {
    pub fn new(order: usize, dim: usize) -> Result<Self> {
        if !(2..=4).contains(&order) {
            return Err(Error::InvalidTensor(format!(
                "unsupported tensor order {order} (expected 2, 3 or 4)"
            )));
        }
        Ok(Self {
            order,
            dim,
            entries: Vec::new(),
            expanded: OnceLock::new(),
        })
    }

    /// Build from (index tuple, value) pairs. Index tuples may come in any
    /// order; two tuples that sort to the same key are rejected.
    pub fn from_entries<'a, I>(order: usize, dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [usize], f64)>,
    {
        let mut tensor = Self::new(order, dim)?;
        for (idx, value) in entries {
            tensor.entries.push((sorted_key(order, dim, idx)?, value));
        }
        tensor.entries.sort_by_key(|a| a.0);
        if let Some(w) = tensor.entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidTensor(format!(
                "duplicate entry for indices {:?}",
                &w[0].0[..order]
            )));
        }
        tensor.entries.retain(|(_, v)| *v != 0.0);
        Ok(tensor)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, idx: &[usize]) -> Result<f64> {
        let key = sorted_key(self.order, self.dim, idx)?;
        Ok(self
            .entries
            .binary_search_by(|e| e.0.cmp(&key))
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0.0))
    }

    /// Overwrite (or create) the element for `idx` and all its permutations.
    pub fn set(&mut self, idx: &[usize], value: f64) -> Result<()> {
        let key = sorted_key(self.order, self.dim, idx)?;
        match self.entries.binary_search_by(|e| e.0.cmp(&key)) {
            Ok(pos) if value == 0.0 => {
                self.entries.remove(pos);
            }
            Ok(pos) => self.entries[pos].1 = value,
            Err(_) if value == 0.0 => {}
            Err(pos) => self.entries.insert(pos, (key, value)),
        }
        self.expanded = OnceLock::new();
        Ok(())
    }

    pub fn add(&mut self, idx: &[usize], delta: f64) -> Result<()> {
        let current = self.get(idx)?;
        self.set(idx, current + delta)
    }

    /// Stored (sorted index, value) pairs.
    pub fn iter(&self) -> impl Iterator<Item = (&[usize], f64)> + '_ {
        self.entries.iter().map(|(k, v)| (&k[..self.order], *v))
    }

    /// Every distinct permutation of every stored entry. Summing over this
    /// list reproduces the dense Einstein sum over all index tuples.
    pub fn permutations(&self) -> &[(Index4, f64)] {
        self.expanded.get_or_init(|| {
            self.entries
                .iter()
                .flat_map(|(key, value)| {
                    distinct_permutations(self.order, key)
                        .into_iter()
                        .map(move |p| (p, *value))
                })
                .collect()
        })
    }

    /// Full contraction `T_{ij..} a_i b_j ..` with one vector per slot.
    pub fn contract(&self, vectors: &[&DVec]) -> Result<f64> {
        if vectors.len() != self.order {
            return Err(Error::InvalidTensor(format!(
                "order-{} tensor contracted with {} vectors",
                self.order,
                vectors.len()
            )));
        }
        for v in vectors {
            crate::error::check_len("contraction vector", self.dim, v.len())?;
        }
        Ok(self
            .permutations()
            .iter()
            .map(|(idx, value)| vectors.iter().zip(idx.iter()).fold(*value, |acc, (v, &i)| acc * v[i]))
            .sum())
    }

    /// `T u u .. u` using multinomial weights on the stored entries only.
    pub fn contract_same(&self, u: &DVec) -> Result<f64> {
        crate::error::check_len("contraction vector", self.dim, u.len())?;
        Ok(self
            .iter()
            .map(|(idx, value)| multinomial(idx) * idx.iter().fold(value, |acc, &i| acc * u[i]))
            .sum())
    }
}
