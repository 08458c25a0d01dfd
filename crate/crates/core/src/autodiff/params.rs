use std::collections::BTreeMap;

use rand::Rng;

use crate::array::RealArray;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub value: RealArray,
    pub trainable: bool,
}

/// Named hierarchy of parameter arrays, keyed by dotted paths such as
/// `graph.0.layer.1.combine.weight`. Iteration order is lexicographic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterTree {
    entries: BTreeMap<String, ParamEntry>,
}

/// Per-parameter gradients keyed like the [`ParameterTree`] they came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    entries: BTreeMap<String, RealArray>,
}

impl ParameterTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: RealArray, trainable: bool) -> Result<()> {
        let name = name.into();
        value.ensure_finite("ParameterTree::insert")?;
        if self.entries.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        self.entries.insert(name, ParamEntry { value, trainable });
        Ok(())
    }

    /// Inserts a trainable `out × in` weight and `out` bias drawn from
    /// U(-1/sqrt(in), 1/sqrt(in)).
    pub fn insert_linear<R: Rng + ?Sized>(
        &mut self,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<()> {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let mut draw = |count: usize| -> Vec<f64> {
            (0..count).map(|_| rng.random_range(-bound..=bound)).collect()
        };
        let w = RealArray::matrix(out_dim, in_dim, draw(out_dim * in_dim))?;
        let b = RealArray::vector(draw(out_dim));
        self.insert(format!("{prefix}.weight"), w, true)?;
        self.insert(format!("{prefix}.bias"), b, true)
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&RealArray> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut RealArray> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.entries
            .get_mut(name)
            .map(|e| e.trainable = trainable)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values across all entries.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Overwrites every value with zeros, keeping names and shapes.
    pub fn zero_all(&mut self) {
        for e in self.entries.values_mut() {
            e.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Compares names and shapes against `other`.
    pub fn check_structure(&self, other: &ParameterTree) -> Result<()> {
        let missing: Vec<String> = self
            .entries
            .keys()
            .filter(|k| !other.entries.contains_key(*k))
            .cloned()
            .collect();
        let extra: Vec<String> = other
            .entries
            .keys()
            .filter(|k| !self.entries.contains_key(*k))
            .cloned()
            .collect();
        let reshaped: Vec<String> = self
            .entries
            .iter()
            .filter_map(|(k, e)| {
                let o = other.entries.get(k)?;
                (o.value.shape() != e.value.shape()).then(|| {
                    format!("{k}: {:?} -> {:?}", e.value.shape(), o.value.shape())
                })
            })
            .collect();
        if missing.is_empty() && extra.is_empty() && reshaped.is_empty() {
            Ok(())
        } else {
            Err(Error::StructureMismatch {
                missing,
                extra,
                reshaped,
            })
        }
    }

    /// Copies all values from `source`, which must have identical structure.
    pub fn copy_from(&mut self, source: &ParameterTree) -> Result<()> {
        self.check_structure(source)?;
        for (name, entry) in self.entries.iter_mut() {
            entry.value = source.entries[name].value.clone();
        }
        Ok(())
    }
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: RealArray) {
        self.entries.insert(name.into(), grad);
    }

    pub fn get(&self, name: &str) -> Option<&RealArray> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RealArray)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// L2 norm over all gradient entries.
    pub fn global_norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.entries.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut tree = ParameterTree::new();
        tree.insert("a", RealArray::scalar(1.0), true).unwrap();
        assert!(matches!(
            tree.insert("a", RealArray::scalar(2.0), true),
            Err(Error::DuplicateParameter(_))
        ));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let mut tree = ParameterTree::new();
        assert!(tree.insert("a", RealArray::scalar(f64::NAN), true).is_err());
    }

    #[test]
    fn structure_check_reports_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut a = ParameterTree::new();
        a.insert_linear("fc", 3, 2, &mut rng).unwrap();
        let mut b = ParameterTree::new();
        b.insert_linear("fc", 4, 2, &mut rng).unwrap();
        b.insert("extra", RealArray::scalar(0.0), true).unwrap();
        match a.check_structure(&b) {
            Err(Error::StructureMismatch {
                missing,
                extra,
                reshaped,
            }) => {
                assert!(missing.is_empty());
                assert_eq!(extra, vec!["extra".to_string()]);
                assert_eq!(reshaped.len(), 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn linear_init_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tree = ParameterTree::new();
        tree.insert_linear("fc", 16, 8, &mut rng).unwrap();
        assert_eq!(tree.value("fc.weight").unwrap().shape(), &[8, 16]);
        assert!(tree.value("fc.weight").unwrap().max_abs() <= 0.25);
    }
}
