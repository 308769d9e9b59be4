//! Label spaces, the global label union, and datasets bound to it.

pub mod io;
pub mod sampler;
pub mod synthetic;

use serde::{Deserialize, Serialize};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::losses::MaskedTarget;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    /// Exactly one class is active per sample (supervised as one-hot).
    CategoricalExclusive,
    /// Any subset of classes may be active.
    MultilabelBinary,
}

/// A named, ordered set of classes annotated by one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub name: String,
    pub classes: Vec<String>,
    pub kind: LabelKind,
}

impl LabelSpace {
    pub fn new(name: impl Into<String>, classes: Vec<String>, kind: LabelKind) -> Result<Self> {
        let name = name.into();
        if classes.is_empty() {
            return Err(Error::Config(format!("label space '{name}' has no classes")));
        }
        for (i, c) in classes.iter().enumerate() {
            if classes[..i].contains(c) {
                return Err(Error::Config(format!(
                    "label space '{name}' repeats class '{c}'"
                )));
            }
        }
        Ok(Self { name, classes, kind })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }
}

/// Ordered concatenation of registered label spaces. Global class indices
/// are determined purely by registration order, so identical registration
/// yields identical indices across processes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelUnion {
    spaces: Vec<LabelSpace>,
}

impl LabelUnion {
    pub fn new(spaces: Vec<LabelSpace>) -> Result<Self> {
        if spaces.is_empty() {
            return Err(Error::Config("label union needs at least one space".into()));
        }
        for (i, s) in spaces.iter().enumerate() {
            if spaces[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::Config(format!(
                    "label union registers space '{}' twice",
                    s.name
                )));
            }
        }
        Ok(Self { spaces })
    }

    pub fn spaces(&self) -> &[LabelSpace] {
        &self.spaces
    }

    pub fn total_classes(&self) -> usize {
        self.spaces.iter().map(|s| s.len()).sum()
    }

    pub fn offset(&self, space_index: usize) -> usize {
        self.spaces[..space_index].iter().map(|s| s.len()).sum()
    }

    /// Global index range covered by one space.
    pub fn range(&self, space_index: usize) -> Range<usize> {
        let start = self.offset(space_index);
        start..start + self.spaces[space_index].len()
    }

    /// Boolean mask over the union selecting exactly one space's classes.
    pub fn mask_for(&self, space_index: usize) -> Vec<bool> {
        let mut mask = vec![false; self.total_classes()];
        for j in self.range(space_index) {
            mask[j] = true;
        }
        mask
    }

    pub fn space_index(&self, name: &str) -> Option<usize> {
        self.spaces.iter().position(|s| s.name == name)
    }

    /// Flattened class names in global index order.
    pub fn class_names(&self) -> Vec<String> {
        self.spaces
            .iter()
            .flat_map(|s| s.classes.iter().cloned())
            .collect()
    }
}

/// One sample bound to a union: features plus a union-width masked target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub features: Vec<f64>,
    pub target: MaskedTarget,
}

/// A dataset whose targets live over a [`LabelUnion`].
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub space_index: usize,
    pub feature_dim: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// On-disk form of a sample: labels are local to the dataset's own space.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    pub id: String,
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
}

/// On-disk form of a dataset, matching the manifest + CSV formats.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub name: String,
    pub space: LabelSpace,
    pub feature_dim: usize,
    pub samples: Vec<RawSample>,
}

impl RawDataset {
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if s.features.len() != self.feature_dim {
                return Err(Error::Validation(format!(
                    "sample {} ('{}') has {} features, manifest declares {}",
                    i,
                    s.id,
                    s.features.len(),
                    self.feature_dim
                )));
            }
            if s.labels.len() != self.space.len() {
                return Err(Error::Validation(format!(
                    "sample {} ('{}') has {} label columns, manifest declares {}",
                    i,
                    s.id,
                    s.labels.len(),
                    self.space.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Splits off the first `n` samples (train) from the rest (held out).
    pub fn split_head(&self, n: usize) -> Result<(RawDataset, RawDataset)> {
        if n > self.samples.len() {
            return Err(Error::Data(format!(
                "cannot split {} samples off a dataset of {}",
                n,
                self.samples.len()
            )));
        }
        let head = RawDataset {
            name: self.name.clone(),
            space: self.space.clone(),
            feature_dim: self.feature_dim,
            samples: self.samples[..n].to_vec(),
        };
        let tail = RawDataset {
            name: self.name.clone(),
            space: self.space.clone(),
            feature_dim: self.feature_dim,
            samples: self.samples[n..].to_vec(),
        };
        Ok((head, tail))
    }

    /// For a categorical dataset: the first `per_class` samples of every
    /// class become the (balanced) train split; the remainder is the test
    /// split. Deterministic given the stored sample order.
    pub fn split_balanced(&self, per_class: usize) -> Result<(RawDataset, RawDataset)> {
        if self.space.kind != LabelKind::CategoricalExclusive {
            return Err(Error::Contract(
                "balanced split requires a categorical label space".into(),
            ));
        }
        let mut taken = vec![0usize; self.space.len()];
        let mut train = Vec::new();
        let mut test = Vec::new();
        for s in &self.samples {
            let class = s
                .labels
                .iter()
                .position(|&v| v == 1.0)
                .ok_or_else(|| Error::Data(format!("sample '{}' has no active class", s.id)))?;
            if taken[class] < per_class {
                taken[class] += 1;
                train.push(s.clone());
            } else {
                test.push(s.clone());
            }
        }
        if let Some(short) = taken.iter().position(|&t| t < per_class) {
            return Err(Error::Data(format!(
                "class '{}' has only {} samples, need {per_class} for the balanced split",
                self.space.classes[short], taken[short]
            )));
        }
        let wrap = |samples| RawDataset {
            name: self.name.clone(),
            space: self.space.clone(),
            feature_dim: self.feature_dim,
            samples,
        };
        Ok((wrap(train), wrap(test)))
    }
}

impl LabelUnion {
    /// Binds a raw dataset to this union: every sample's local labels are
    /// placed into the space's global range and masked to exactly that
    /// range.
    pub fn bind(&self, raw: &RawDataset) -> Result<Dataset> {
        raw.validate()?;
        let space_index = self.space_index(&raw.space.name).ok_or_else(|| {
            Error::Data(format!(
                "dataset '{}' uses label space '{}', which is not registered in the union",
                raw.name, raw.space.name
            ))
        })?;
        if self.spaces[space_index] != raw.space {
            return Err(Error::Data(format!(
                "label space '{}' in dataset '{}' differs from the registered definition",
                raw.space.name, raw.name
            )));
        }
        let total = self.total_classes();
        let offset = self.offset(space_index);
        let mask = self.mask_for(space_index);
        let mut samples = Vec::with_capacity(raw.samples.len());
        for s in &raw.samples {
            if raw.space.kind == LabelKind::CategoricalExclusive {
                let ones = s.labels.iter().filter(|&&v| v == 1.0).count();
                if ones != 1 {
                    return Err(Error::Validation(format!(
                        "categorical sample '{}' has {ones} active classes, expected exactly 1",
                        s.id
                    )));
                }
            }
            let mut targets = vec![0.0; total];
            targets[offset..offset + s.labels.len()].copy_from_slice(&s.labels);
            let target = MaskedTarget::new(targets, mask.clone(), space_index)?;
            samples.push(Sample {
                id: s.id.clone(),
                features: s.features.clone(),
                target,
            });
        }
        Ok(Dataset {
            name: raw.name.clone(),
            space_index,
            feature_dim: raw.feature_dim,
            samples,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_space_union() -> LabelUnion {
        let emo = LabelSpace::new(
            "emotion",
            vec!["A".into(), "B".into(), "C".into()],
            LabelKind::CategoricalExclusive,
        )
        .unwrap();
        let aus = LabelSpace::new(
            "aus",
            vec!["AU1".into(), "AU2".into()],
            LabelKind::MultilabelBinary,
        )
        .unwrap();
        LabelUnion::new(vec![emo, aus]).unwrap()
    }

    #[test]
    fn union_indices_are_registration_ordered() {
        let u = two_space_union();
        assert_eq!(u.total_classes(), 5);
        assert_eq!(u.range(0), 0..3);
        assert_eq!(u.range(1), 3..5);
        assert_eq!(u.mask_for(1), vec![false, false, false, true, true]);
        assert_eq!(u.class_names(), vec!["A", "B", "C", "AU1", "AU2"]);
    }

    #[test]
    fn duplicate_class_rejected() {
        let err = LabelSpace::new(
            "x",
            vec!["a".into(), "a".into()],
            LabelKind::MultilabelBinary,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn bind_places_labels_into_global_range() {
        let u = two_space_union();
        let raw = RawDataset {
            name: "aus-train".into(),
            space: u.spaces()[1].clone(),
            feature_dim: 2,
            samples: vec![RawSample {
                id: "s0".into(),
                features: vec![0.1, 0.2],
                labels: vec![1.0, 0.0],
            }],
        };
        let ds = u.bind(&raw).unwrap();
        let t = &ds.samples[0].target;
        assert_eq!(t.targets(), &[0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(t.mask(), &[false, false, false, true, true]);
        assert_eq!(t.dataset_index(), 1);
    }

    #[test]
    fn bind_rejects_multi_hot_categorical() {
        let u = two_space_union();
        let raw = RawDataset {
            name: "emo".into(),
            space: u.spaces()[0].clone(),
            feature_dim: 1,
            samples: vec![RawSample {
                id: "s0".into(),
                features: vec![0.0],
                labels: vec![1.0, 1.0, 0.0],
            }],
        };
        let err = u.bind(&raw).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn balanced_split_takes_first_per_class() {
        let space = LabelSpace::new(
            "c",
            vec!["x".into(), "y".into()],
            LabelKind::CategoricalExclusive,
        )
        .unwrap();
        let sample = |id: &str, class: usize| RawSample {
            id: id.into(),
            features: vec![0.0],
            labels: if class == 0 {
                vec![1.0, 0.0]
            } else {
                vec![0.0, 1.0]
            },
        };
        let raw = RawDataset {
            name: "d".into(),
            space,
            feature_dim: 1,
            samples: vec![
                sample("a", 0),
                sample("b", 1),
                sample("c", 0),
                sample("d", 0),
                sample("e", 1),
            ],
        };
        let (train, test) = raw.split_balanced(1).unwrap();
        assert_eq!(
            train.samples.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(),
            vec!["a", "b"]
        );
        assert_eq!(
            test.samples.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(),
            vec!["c", "d", "e"]
        );
        assert!(raw.split_balanced(3).is_err());
    }
}
