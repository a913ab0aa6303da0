//! T-SMOTE minority oversampling over fixed-length window vectors.
//!
//! New minority samples are drawn on the segment between a random minority
//! sample and one of its k nearest minority neighbours.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpearError};
use crate::rng::rng_from_seed;

/// One window vector with its label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: String,
    pub features: Vec<f64>,
    pub label: u8,
    pub synthetic: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledDataset {
    pub samples: Vec<LabeledSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub negatives: usize,
    pub positives: usize,
}

impl ClassCounts {
    pub fn minority_label(&self) -> u8 {
        u8::from(self.positives <= self.negatives)
    }

    pub fn majority(&self) -> usize {
        self.negatives.max(self.positives)
    }

    pub fn minority(&self) -> usize {
        self.negatives.min(self.positives)
    }
}

impl LabeledDataset {
    pub fn new(samples: Vec<LabeledSample>) -> Result<Self> {
        if let Some(first) = samples.first() {
            let len = first.features.len();
            if let Some(bad) = samples.iter().find(|s| s.features.len() != len) {
                return Err(SpearError::InvalidInput(format!(
                    "sample {} has {} features, expected {len}",
                    bad.id,
                    bad.features.len()
                )));
            }
        }
        if let Some(bad) = samples.iter().find(|s| s.label > 1) {
            return Err(SpearError::InvalidInput(format!(
                "sample {} has non-binary label {}",
                bad.id, bad.label
            )));
        }
        Ok(LabeledDataset { samples })
    }

    pub fn class_counts(&self) -> ClassCounts {
        let positives = self.samples.iter().filter(|s| s.label == 1).count();
        ClassCounts {
            negatives: self.samples.len() - positives,
            positives,
        }
    }

    fn minority_indices(&self) -> Vec<usize> {
        let label = self.class_counts().minority_label();
        (0..self.samples.len())
            .filter(|&i| self.samples[i].label == label)
            .collect()
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// For each minority sample (in dataset order), the dataset indices of its
/// `k` nearest other minority samples. Ties go to the lower index.
pub fn k_nearest_minority(dataset: &LabeledDataset, k: usize) -> Result<Vec<Vec<usize>>> {
    let minority = dataset.minority_indices();
    if minority.len() < 2 {
        return Err(SpearError::InvalidInput(format!(
            "T-SMOTE needs at least 2 minority samples, found {}; disable resampling",
            minority.len()
        )));
    }
    if k == 0 || k > minority.len() - 1 {
        return Err(SpearError::Config(format!(
            "tsmote.k must be in 1..={}, got {k}",
            minority.len() - 1
        )));
    }
    Ok(minority
        .iter()
        .map(|&i| {
            let query = &dataset.samples[i].features;
            let mut others: Vec<(f64, usize)> = minority
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| (squared_distance(query, &dataset.samples[j].features), j))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect())
}

/// `base + lambda * (neighbor - base)`, elementwise. Results are clamped to
/// the parents' coordinate bounds so rounding never leaves the segment.
pub fn interpolate(base: &[f64], neighbor: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if base.len() != neighbor.len() {
        return Err(SpearError::InvalidInput(format!(
            "cannot interpolate vectors of length {} and {}",
            base.len(),
            neighbor.len()
        )));
    }
    Ok(base
        .iter()
        .zip(neighbor)
        .map(|(&x, &n)| (x + lambda * (n - x)).clamp(x.min(n), x.max(n)))
        .collect())
}

/// Oversamples the minority class until both classes have equal counts.
/// Original samples keep their order; synthetic ones are appended.
pub fn balance(dataset: &LabeledDataset, k: usize, seed: u64) -> Result<LabeledDataset> {
    let counts = dataset.class_counts();
    if counts.negatives == 0 || counts.positives == 0 {
        return Err(SpearError::InvalidInput(
            "T-SMOTE needs both classes present".into(),
        ));
    }
    if counts.majority() == counts.minority() {
        return Ok(dataset.clone());
    }
    let minority = dataset.minority_indices();
    let neighbors = k_nearest_minority(dataset, k)?;
    let label = counts.minority_label();
    let needed = counts.majority() - counts.minority();

    let mut rng = rng_from_seed(seed);
    let mut samples = dataset.samples.clone();
    samples.reserve(needed);
    for n in 0..needed {
        let pick = rng.gen_range(0..minority.len());
        let nn = neighbors[pick][rng.gen_range(0..neighbors[pick].len())];
        let lambda: f64 = rng.gen();
        let base = &dataset.samples[minority[pick]];
        let features = interpolate(&base.features, &dataset.samples[nn].features, lambda)?;
        samples.push(LabeledSample {
            id: format!("syn{n}:{}+{}", base.id, dataset.samples[nn].id),
            features,
            label,
            synthetic: true,
        });
    }
    Ok(LabeledDataset { samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn sample(id: &str, features: Vec<f64>, label: u8) -> LabeledSample {
        LabeledSample {
            id: id.into(),
            features,
            label,
            synthetic: false,
        }
    }

    fn points(coords: &[f64], label: u8) -> Vec<LabeledSample> {
        coords
            .iter()
            .enumerate()
            .map(|(i, &c)| sample(&format!("{label}-{i}"), vec![c], label))
            .collect()
    }

    fn with_majority(minority: &[f64], majority: usize) -> LabeledDataset {
        let mut s = points(minority, 1);
        s.extend(points(&vec![100.0; majority], 0));
        LabeledDataset::new(s).unwrap()
    }

    #[test]
    fn neighbours_of_two() {
        let ds = with_majority(&[0.0, 5.0], 4);
        assert_eq!(k_nearest_minority(&ds, 1).unwrap(), vec![vec![1], vec![0]]);
    }

    #[test]
    fn neighbours_collinear() {
        let ds = with_majority(&[0.0, 1.0, 10.0], 5);
        assert_eq!(k_nearest_minority(&ds, 1).unwrap(), vec![vec![1], vec![0], vec![1]]);
    }

    #[test]
    fn neighbour_ties_prefer_lower_index() {
        let ds = with_majority(&[0.0, -1.0, 1.0], 5);
        assert_eq!(k_nearest_minority(&ds, 1).unwrap()[0], vec![1]);
    }

    #[test]
    fn neighbour_errors() {
        let ds = with_majority(&[0.0], 4);
        assert!(k_nearest_minority(&ds, 1).is_err());
        let ds = with_majority(&[0.0, 1.0], 4);
        assert!(k_nearest_minority(&ds, 2).is_err());
        assert!(balance(&with_majority(&[0.0], 4), 1, 0).is_err());
    }

    #[test]
    fn interpolation_examples() {
        let x1 = [4.0, 3.0, 4.0, 8.0, 7.0, 3.0];
        let x2 = [3.0, 4.0, 4.0, 3.0, 7.0, 4.0];
        assert_eq!(interpolate(&x1, &x2, 0.5).unwrap(), vec![3.5, 3.5, 4.0, 5.5, 7.0, 3.5]);
        assert_eq!(interpolate(&x1, &x2, 0.0).unwrap(), x1.to_vec());
        assert_eq!(interpolate(&x1, &x2, 1.0).unwrap(), x2.to_vec());
        assert!(interpolate(&x1, &x2[..3], 0.5).is_err());
    }

    #[test]
    fn balance_counts() {
        let minority: Vec<f64> = (0..10).map(f64::from).collect();
        let ds = with_majority(&minority, 90);
        let out = balance(&ds, 5, 9).unwrap();
        assert_eq!(out.class_counts(), ClassCounts { negatives: 90, positives: 90 });
        assert_eq!(out.samples.iter().filter(|s| s.synthetic).count(), 80);
        assert_eq!(&out.samples[..100], &ds.samples[..]);
        assert_eq!(out, balance(&ds, 5, 9).unwrap());
        assert_ne!(out, balance(&ds, 5, 10).unwrap());
    }

    #[test]
    fn balanced_input_is_unchanged() {
        let ds = with_majority(&[1.0, 2.0, 3.0], 3);
        assert_eq!(balance(&ds, 1, 0).unwrap(), ds);
    }

    #[test]
    fn minority_can_be_the_negative_class() {
        let mut s = points(&[0.0, 1.0], 0);
        s.extend(points(&[5.0, 6.0, 7.0, 8.0], 1));
        let out = balance(&LabeledDataset::new(s).unwrap(), 1, 3).unwrap();
        assert_eq!(out.class_counts(), ClassCounts { negatives: 4, positives: 4 });
        assert!(out.samples.iter().filter(|s| s.synthetic).all(|s| s.label == 0));
    }

    proptest! {
        #[test]
        fn synthetic_within_parent_bounds(seed in 0u64..1000, n_min in 2usize..8, dim in 1usize..6) {
            let mut rng = rng_from_seed(seed);
            let mut s: Vec<LabeledSample> = (0..n_min)
                .map(|i| sample(&format!("m{i}"), (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect(), 1))
                .collect();
            s.extend((0..20).map(|i| sample(&format!("M{i}"), vec![0.0; dim], 0)));
            let ds = LabeledDataset::new(s).unwrap();
            let out = balance(&ds, 1.max(n_min / 2), seed).unwrap();
            let by_id = |id: &str| ds.samples.iter().find(|s| s.id == id).unwrap().features.clone();
            for syn in out.samples.iter().filter(|s| s.synthetic) {
                prop_assert_eq!(syn.label, 1);
                let parents: Vec<&str> = syn.id.split(':').nth(1).unwrap().split('+').collect();
                let (a, b) = (by_id(parents[0]), by_id(parents[1]));
                for d in 0..dim {
                    prop_assert!(syn.features[d] >= a[d].min(b[d]) && syn.features[d] <= a[d].max(b[d]));
                }
            }
        }
    }
}
