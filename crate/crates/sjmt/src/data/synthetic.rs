//! Synthetic benchmark with known emotion → action-unit structure.
//!
//! Each sample starts from an emotion drawn uniformly, takes that emotion's
//! action-unit activation pattern, flips every bit independently with
//! probability `flip_noise`, and projects the resulting bit vector through a
//! fixed seeded random matrix plus Gaussian feature noise. The emotion
//! dataset keeps only the emotion label, the AU dataset keeps only the
//! post-flip AU bits, and the ground-truth sidecar keeps both — AU labels
//! therefore stay consistent with the features while emotion labels carry
//! irreducible noise.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::data::{LabelKind, LabelSpace, RawDataset, RawSample};
use crate::error::{Error, Result};

const SALT_PROJECTION: u64 = 0x70726f6a; // "proj"
const SALT_EMOTION: u64 = 0x656d6f74; // "emot"
const SALT_AUS: u64 = 0x61757300; // "aus"
const SALT_COMPOUND: u64 = 0x636f6d70; // "comp"

/// One emotion and the action units that produce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmotionAus {
    pub name: String,
    pub aus: Vec<u32>,
}

/// A compound class built from two basic emotions; its AU set is the union
/// of the components' sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompoundClass {
    pub name: String,
    pub components: [String; 2],
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompoundConfig {
    pub classes: Vec<CompoundClass>,
    pub train_per_class: usize,
}

impl Default for CompoundConfig {
    fn default() -> Self {
        let class = |name: &str, a: &str, b: &str, count: usize| CompoundClass {
            name: name.into(),
            components: [a.into(), b.into()],
            count,
        };
        Self {
            classes: vec![
                class("angrily_disgusted", "Angry", "Disgust", 19),
                class("angrily_surprised", "Angry", "Surprise", 25),
                class("fearfully_angry", "Fear", "Angry", 19),
                class("fearfully_surprised", "Fear", "Surprise", 17),
                class("happily_disgusted", "Happy", "Disgust", 486),
                class("happily_surprised", "Happy", "Surprise", 36),
                class("sadly_angry", "Sad", "Angry", 15),
                class("sadly_disgusted", "Sad", "Disgust", 105),
            ],
            train_per_class: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    /// Ordered emotions with their generating AU sets.
    pub emotions: Vec<EmotionAus>,
    /// Ordered AU inventory; every AU referenced above must appear here.
    pub au_ids: Vec<u32>,
    /// Per-bit flip probability ρ; must stay below 0.5.
    pub flip_noise: f64,
    /// Feature dimension d of the random projection.
    pub projection_dim: usize,
    /// Standard deviation σ of the additive feature noise.
    pub feature_noise: f64,
    /// Standard deviation of the projection entries; controls how far the
    /// AU bit patterns sit apart in feature space relative to the feature
    /// noise. Defaults to `1/√k` for `k` action units.
    pub projection_scale: Option<f64>,
    /// Training rows generated per dataset.
    pub samples_per_dataset: usize,
    /// Extra held-out rows appended after the training rows.
    pub test_samples: usize,
    /// Set programmatically (the experiment config copies its global seed
    /// here); not a config-file field.
    #[serde(skip)]
    pub seed: u64,
    pub compound: Option<CompoundConfig>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let emo = |name: &str, aus: &[u32]| EmotionAus {
            name: name.into(),
            aus: aus.to_vec(),
        };
        Self {
            emotions: vec![
                emo("Angry", &[4, 9, 25]),
                emo("Disgust", &[1, 4, 6]),
                emo("Fear", &[5, 25]),
                emo("Happy", &[6, 12, 25]),
                emo("Sad", &[12, 17]),
                emo("Surprise", &[2, 25, 26]),
                emo("Neutral", &[]),
            ],
            au_ids: vec![1, 2, 4, 5, 6, 9, 12, 17, 25, 26],
            flip_noise: 0.1,
            projection_dim: 16,
            feature_noise: 0.3,
            projection_scale: None,
            samples_per_dataset: 2000,
            test_samples: 500,
            seed: 0,
            compound: Some(CompoundConfig::default()),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.flip_noise) {
            return Err(Error::Config(format!(
                "flip_noise must be in [0, 0.5), got {}; at 0.5 the labels are uninformative",
                self.flip_noise
            )));
        }
        if self.feature_noise < 0.0 {
            return Err(Error::Config("feature_noise must be non-negative".into()));
        }
        if let Some(s) = self.projection_scale {
            if s <= 0.0 {
                return Err(Error::Config("projection_scale must be positive".into()));
            }
        }
        if self.projection_dim == 0 {
            return Err(Error::Config("projection_dim must be positive".into()));
        }
        if self.samples_per_dataset == 0 {
            return Err(Error::Config("samples_per_dataset must be positive".into()));
        }
        if self.emotions.is_empty() {
            return Err(Error::Config("at least one emotion is required".into()));
        }
        for (i, e) in self.emotions.iter().enumerate() {
            if self.emotions[..i].iter().any(|o| o.name == e.name) {
                return Err(Error::Config(format!("emotion '{}' listed twice", e.name)));
            }
            for au in &e.aus {
                if !self.au_ids.contains(au) {
                    return Err(Error::Config(format!(
                        "emotion '{}' references AU{au}, which is not in au_ids",
                        e.name
                    )));
                }
            }
        }
        if let Some(c) = &self.compound {
            if c.classes.is_empty() {
                return Err(Error::Config("compound.classes must be nonempty".into()));
            }
            for class in &c.classes {
                for comp in &class.components {
                    if !self.emotions.iter().any(|e| &e.name == comp) {
                        return Err(Error::Config(format!(
                            "compound '{}' references unknown basic emotion '{comp}'",
                            class.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn emotion_names(&self) -> Vec<String> {
        self.emotions.iter().map(|e| e.name.clone()).collect()
    }

    pub fn emotion_space(&self) -> Result<LabelSpace> {
        LabelSpace::new(
            "emotion",
            self.emotion_names(),
            LabelKind::CategoricalExclusive,
        )
    }

    pub fn au_space(&self) -> Result<LabelSpace> {
        LabelSpace::new(
            "aus",
            self.au_ids.iter().map(|id| format!("AU{id}")).collect(),
            LabelKind::MultilabelBinary,
        )
    }

    pub fn compound_space(&self) -> Result<Option<LabelSpace>> {
        match &self.compound {
            None => Ok(None),
            Some(c) => Ok(Some(LabelSpace::new(
                "compound",
                c.classes.iter().map(|cl| cl.name.clone()).collect(),
                LabelKind::CategoricalExclusive,
            )?)),
        }
    }

    /// Generating AU bit pattern of an emotion, over `au_ids` order.
    pub fn bits_for(&self, emotion: &str) -> Option<Vec<u8>> {
        let e = self.emotions.iter().find(|e| e.name == emotion)?;
        Some(
            self.au_ids
                .iter()
                .map(|id| u8::from(e.aus.contains(id)))
                .collect(),
        )
    }

    /// AU set of a compound class: the union of its components' sets.
    pub fn compound_aus(&self, class: &CompoundClass) -> Result<BTreeSet<u32>> {
        let mut set = BTreeSet::new();
        for comp in &class.components {
            let e = self
                .emotions
                .iter()
                .find(|e| &e.name == comp)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "compound '{}' references unknown basic emotion '{comp}'",
                        class.name
                    ))
                })?;
            set.extend(e.aus.iter().copied());
        }
        Ok(set)
    }

    /// Gaussian projection; entry scale defaults to `1/√k` for `k` action
    /// units so feature magnitudes stay comparable across inventory sizes.
    fn projection(&self) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed ^ SALT_PROJECTION);
        let scale = self
            .projection_scale
            .unwrap_or(1.0 / (self.au_ids.len() as f64).sqrt());
        (0..self.projection_dim * self.au_ids.len())
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect()
    }
}

/// Ground truth for a generated sample: the drawn emotion (or compound
/// class) and the post-flip AU bits that produced the features.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRecord {
    pub id: String,
    pub emotion: String,
    pub au_bits: Vec<u8>,
}

/// The two basic datasets plus per-sample ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticFamily {
    pub emotion: RawDataset,
    pub aus: RawDataset,
    pub ground_truth: Vec<GroundTruthRecord>,
}

fn flip_bits(bits: &[u8], rho: f64, rng: &mut ChaCha20Rng) -> Vec<u8> {
    bits.iter()
        .map(|&b| if rng.gen_bool(rho) { 1 - b } else { b })
        .collect()
}

fn project(cfg: &SyntheticConfig, projection: &[f64], bits: &[u8], rng: &mut ChaCha20Rng) -> Vec<f64> {
    let d = cfg.projection_dim;
    let k = cfg.au_ids.len();
    let mut x = vec![0.0; d];
    for (di, xv) in x.iter_mut().enumerate() {
        let row = &projection[di * k..(di + 1) * k];
        let mut s = 0.0;
        for (j, &b) in bits.iter().enumerate() {
            if b == 1 {
                s += row[j];
            }
        }
        let noise: f64 = rng.sample(StandardNormal);
        *xv = s + cfg.feature_noise * noise;
    }
    x
}

/// Generates the emotion-only dataset, the AU-only dataset, and the
/// ground-truth sidecar. Each dataset has `samples_per_dataset` training
/// rows followed by `test_samples` held-out rows; the split is positional.
/// Deterministic given the config seed.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticFamily> {
    cfg.validate()?;
    let projection = cfg.projection();
    let n = cfg.samples_per_dataset + cfg.test_samples;
    let mut ground_truth = Vec::with_capacity(2 * n);

    let emotion_bits: Vec<Vec<u8>> = cfg
        .emotions
        .iter()
        .map(|e| cfg.bits_for(&e.name).expect("validated"))
        .collect();

    let gen_stream = |prefix: &str,
                          salt: u64,
                          label_of: &dyn Fn(usize, &[u8]) -> Vec<f64>,
                          ground_truth: &mut Vec<GroundTruthRecord>|
     -> Vec<RawSample> {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ salt);
        (0..n)
            .map(|i| {
                let e = rng.gen_range(0..cfg.emotions.len());
                let bits = flip_bits(&emotion_bits[e], cfg.flip_noise, &mut rng);
                let features = project(cfg, &projection, &bits, &mut rng);
                let id = format!("{prefix}-{i:06}");
                ground_truth.push(GroundTruthRecord {
                    id: id.clone(),
                    emotion: cfg.emotions[e].name.clone(),
                    au_bits: bits.clone(),
                });
                RawSample {
                    id,
                    features,
                    labels: label_of(e, &bits),
                }
            })
            .collect()
    };

    let n_emotions = cfg.emotions.len();
    let emotion_samples = gen_stream(
        "emo",
        SALT_EMOTION,
        &|e, _bits| {
            let mut l = vec![0.0; n_emotions];
            l[e] = 1.0;
            l
        },
        &mut ground_truth,
    );
    let au_samples = gen_stream(
        "aus",
        SALT_AUS,
        &|_e, bits| bits.iter().map(|&b| f64::from(b)).collect(),
        &mut ground_truth,
    );

    Ok(SyntheticFamily {
        emotion: RawDataset {
            name: "emotion".into(),
            space: cfg.emotion_space()?,
            feature_dim: cfg.projection_dim,
            samples: emotion_samples,
        },
        aus: RawDataset {
            name: "aus".into(),
            space: cfg.au_space()?,
            feature_dim: cfg.projection_dim,
            samples: au_samples,
        },
        ground_truth,
    })
}

/// Generates the compound-emotion dataset through the same flip/projection
/// pipeline, using the same fixed projection as [`generate_synthetic`].
/// Rows are generated class by class with the configured per-class counts.
pub fn generate_compound(cfg: &SyntheticConfig) -> Result<(RawDataset, Vec<GroundTruthRecord>)> {
    cfg.validate()?;
    let compound = cfg
        .compound
        .as_ref()
        .ok_or_else(|| Error::Config("compound section missing from config".into()))?;
    let space = cfg.compound_space()?.expect("compound present");
    let projection = cfg.projection();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ SALT_COMPOUND);

    let mut samples = Vec::new();
    let mut ground_truth = Vec::new();
    for (ci, class) in compound.classes.iter().enumerate() {
        let aus = cfg.compound_aus(class)?;
        let bits: Vec<u8> = cfg
            .au_ids
            .iter()
            .map(|id| u8::from(aus.contains(id)))
            .collect();
        for i in 0..class.count {
            let flipped = flip_bits(&bits, cfg.flip_noise, &mut rng);
            let features = project(cfg, &projection, &flipped, &mut rng);
            let id = format!("cmp-{ci}-{i:05}");
            let mut labels = vec![0.0; compound.classes.len()];
            labels[ci] = 1.0;
            ground_truth.push(GroundTruthRecord {
                id: id.clone(),
                emotion: class.name.clone(),
                au_bits: flipped,
            });
            samples.push(RawSample {
                id,
                features,
                labels,
            });
        }
    }

    Ok((
        RawDataset {
            name: "compound".into(),
            space,
            feature_dim: cfg.projection_dim,
            samples,
        },
        ground_truth,
    ))
}
