use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ops::RunningStats;
use crate::tensor::{Element, Tensor};

/// Insertion-ordered, name-addressed collection.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedStore<V> {
    entries: Vec<(String, V)>,
    index: HashMap<String, usize>,
}

impl<V> Default for NamedStore<V> {
    fn default() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<V> NamedStore<V> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: V) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Spec(format!("duplicate entry name {name:?}")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&V> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut V> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &V)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut V)> {
        self.entries.iter_mut().map(|(n, v)| (n.as_str(), &mut *v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }
}

/// Trainable tensors.
pub type ParamStore<T = f32> = NamedStore<Tensor<T>>;

/// Batch-norm moving statistics (non-trainable).
pub type StatsStore<T = f32> = NamedStore<RunningStats<T>>;

impl<T: Element> NamedStore<Tensor<T>> {
    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        let mut out = NamedStore::new();
        for (n, t) in self.iter() {
            out.insert(n, t.cast()).expect("names are unique");
        }
        out
    }
}

impl<T: Element> NamedStore<RunningStats<T>> {
    pub fn cast<U: Element>(&self) -> StatsStore<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect();
        let mut out = NamedStore::new();
        for (n, s) in self.iter() {
            out.insert(
                n,
                RunningStats {
                    mean: conv(&s.mean),
                    var: conv(&s.var),
                    initialized: s.initialized,
                },
            )
            .expect("names are unique");
        }
        out
    }
}

/// FNV-1a over names and raw value bits; equal checksums mean bitwise-equal stores.
pub fn checksum<T: Element>(params: &ParamStore<T>, stats: Option<&StatsStore<T>>) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    for (name, t) in params.iter() {
        feed(name.as_bytes());
        for v in t.data() {
            feed(&v.as_f64().to_bits().to_le_bytes());
        }
    }
    if let Some(stats) = stats {
        for (name, s) in stats.iter() {
            feed(name.as_bytes());
            for v in s.mean.iter().chain(&s.var) {
                feed(&v.as_f64().to_bits().to_le_bytes());
            }
        }
    }
    h
}
