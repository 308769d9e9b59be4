//! Loss functions over a shared output layer spanning a label union.
//!
//! The selective loss restricts each sample's binary cross-entropy to the
//! label positions its source dataset actually annotates. Everything is
//! computed in logit space through a softplus identity
//! (`bce(p, y) = softplus(p) − y·p`), so no logarithm of a saturated
//! sigmoid is ever taken and no clamping constants exist. Out-of-mask
//! positions enter the graph with weight exactly 0.0, which makes their
//! logit gradients exactly zero, not merely small.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{sigmoid_scalar, Tape, Tensor, Var};

/// Per-sample binary target vector over the label union plus the boolean
/// mask of positions belonging to the sample's dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedTarget {
    targets: Vec<f64>,
    mask: Vec<bool>,
    dataset_index: usize,
}

impl MaskedTarget {
    pub fn new(targets: Vec<f64>, mask: Vec<bool>, dataset_index: usize) -> Result<Self> {
        if targets.len() != mask.len() {
            return Err(Error::Contract(format!(
                "target length {} != mask length {}",
                targets.len(),
                mask.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Contract(
                "sample has an empty label mask; unsupervised samples must not enter the loss"
                    .into(),
            ));
        }
        for (j, (&t, &m)) in targets.iter().zip(&mask).enumerate() {
            if t != 0.0 && t != 1.0 {
                return Err(Error::Contract(format!(
                    "target at position {j} is {t}, expected 0 or 1"
                )));
            }
            if t == 1.0 && !m {
                return Err(Error::Contract(format!(
                    "target 1 at position {j} outside the sample's mask"
                )));
            }
        }
        Ok(Self {
            targets,
            mask,
            dataset_index,
        })
    }

    /// Target vector with every position in the mask.
    pub fn full(targets: Vec<f64>, dataset_index: usize) -> Result<Self> {
        let mask = vec![true; targets.len()];
        Self::new(targets, mask, dataset_index)
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn dataset_index(&self) -> usize {
        self.dataset_index
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn mask_size(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Which class count normalizes each sample's summed cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizerMode {
    /// N = size of the sample's own label set (default).
    #[default]
    PerDataset,
    /// N = size of the whole label union.
    Union,
}

/// A computed loss: the batch-mean value plus the per-sample normalizers
/// that were applied.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub normalizers: Vec<usize>,
}

impl LossValue {
    /// The normalizer N when it is uniform across the batch.
    pub fn normalizer_used(&self) -> Option<usize> {
        let first = *self.normalizers.first()?;
        self.normalizers
            .iter()
            .all(|&n| n == first)
            .then_some(first)
    }
}

/// A loss attached to a tape: `root` drives backward, `loss` reports values.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub root: Var,
    pub loss: LossValue,
}

/// Elementwise logistic probabilities from logits (stable branch form).
pub fn sigmoid_probabilities(logits: &Tensor) -> Tensor {
    let values = logits.values().iter().map(|&p| sigmoid_scalar(p)).collect();
    Tensor::new(logits.shape().to_vec(), values).expect("shape preserved")
}

fn check_batch(tape: &Tape, logits: Var, targets: &[MaskedTarget]) -> Result<(usize, usize)> {
    let shape = tape.shape(logits);
    if shape.len() != 2 {
        return Err(Error::Shape {
            op: "bce",
            lhs: shape.to_vec(),
            rhs: vec![],
        });
    }
    let (b, l) = (shape[0], shape[1]);
    if targets.len() != b {
        return Err(Error::Contract(format!(
            "batch has {b} rows but {} masked targets",
            targets.len()
        )));
    }
    for (i, t) in targets.iter().enumerate() {
        if t.len() != l {
            return Err(Error::Contract(format!(
                "masked target {i} has length {}, logits have {l} columns",
                t.len()
            )));
        }
        if !t.mask().iter().any(|&m| m) {
            return Err(Error::Contract(format!("masked target {i} has an empty mask")));
        }
    }
    Ok((b, l))
}

fn weighted_bce(
    tape: &mut Tape,
    logits: Var,
    targets: &[MaskedTarget],
    weight_of: impl Fn(&MaskedTarget) -> usize,
    ignore_mask: bool,
) -> Result<BatchLoss> {
    let (b, l) = check_batch(tape, logits, targets)?;
    let mut weights = Vec::with_capacity(b * l);
    let mut y = Vec::with_capacity(b * l);
    let mut normalizers = Vec::with_capacity(b);
    let inv_b = 1.0 / b as f64;
    for t in targets {
        let n = weight_of(t);
        normalizers.push(n);
        let w = inv_b / n as f64;
        for j in 0..l {
            let in_sum = ignore_mask || t.mask()[j];
            weights.push(if in_sum { w } else { 0.0 });
            y.push(t.targets()[j]);
        }
    }
    let w_leaf = tape.leaf_values(vec![b, l], weights)?;
    let y_leaf = tape.leaf_values(vec![b, l], y)?;
    let sp = tape.softplus(logits);
    let py = tape.mul(logits, y_leaf)?;
    let per_term = tape.sub(sp, py)?;
    let weighted = tape.mul(per_term, w_leaf)?;
    let root = tape.sum_all(weighted);
    let value = tape.scalar_value(root);
    debug_assert!(value.is_finite() && value >= 0.0, "loss value {value}");
    Ok(BatchLoss {
        root,
        loss: LossValue { value, normalizers },
    })
}

/// Dataset-wise selective sigmoid cross-entropy.
///
/// Per sample, `E = −(1/N) Σ_{j∈mask} [y_j ln ŷ_j + (1−y_j) ln(1−ŷ_j)]`
/// with `N` chosen by `mode`; the returned value is the batch mean. The
/// logit gradient is `(ŷ_j − y_j)/(N·B)` inside the mask and exactly 0
/// outside it.
pub fn selective_bce(
    tape: &mut Tape,
    logits: Var,
    targets: &[MaskedTarget],
    mode: NormalizerMode,
) -> Result<BatchLoss> {
    let l = tape.shape(logits)[1];
    weighted_bce(
        tape,
        logits,
        targets,
        |t| match mode {
            NormalizerMode::PerDataset => t.mask_size(),
            NormalizerMode::Union => l,
        },
        false,
    )
}

/// Binary cross-entropy over every position of the union, ignoring masks:
/// unlabeled positions are treated as absent (target 0). This is the
/// baseline whose cross-penalty on co-occurring labels the selective loss
/// removes; it exists for the ablation comparison.
pub fn full_bce(tape: &mut Tape, logits: Var, targets: &[MaskedTarget]) -> Result<BatchLoss> {
    let l = tape.shape(logits)[1];
    weighted_bce(tape, logits, targets, |_| l, true)
}

/// Mean softmax cross-entropy against exact one-hot rows, via the
/// log-sum-exp identity.
pub fn softmax_cross_entropy(tape: &mut Tape, logits: Var, onehot: &Tensor) -> Result<BatchLoss> {
    let shape = tape.shape(logits).to_vec();
    if shape != onehot.shape() {
        return Err(Error::Shape {
            op: "softmax_cross_entropy",
            lhs: shape,
            rhs: onehot.shape().to_vec(),
        });
    }
    let (b, c) = (shape[0], shape[1]);
    for i in 0..b {
        let row = &onehot.values()[i * c..(i + 1) * c];
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != c {
            return Err(Error::Contract(format!(
                "row {i} is not one-hot: {row:?}"
            )));
        }
    }
    let lse = tape.log_sum_exp_rows(logits)?;
    let sum_lse = tape.sum_all(lse);
    let y_leaf = tape.leaf(onehot);
    let py = tape.mul(logits, y_leaf)?;
    let sum_py = tape.sum_all(py);
    let diff = tape.sub(sum_lse, sum_py)?;
    let root = tape.scale(diff, 1.0 / b as f64);
    let value = tape.scalar_value(root);
    debug_assert!(value.is_finite() && value >= -1e-12, "loss value {value}");
    Ok(BatchLoss {
        root,
        loss: LossValue {
            value,
            normalizers: vec![c; b],
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Independent scalar-loop reference: stable `ln σ` via `ln_1p`, explicit
    /// restriction to the mask, explicit normalization.
    fn ln_sigmoid(x: f64) -> f64 {
        if x >= 0.0 {
            -(-x).exp().ln_1p()
        } else {
            x - x.exp().ln_1p()
        }
    }

    fn oracle_selective(
        logits: &[f64],
        l: usize,
        targets: &[MaskedTarget],
        mode: NormalizerMode,
    ) -> f64 {
        let mut total = 0.0;
        for (b, t) in targets.iter().enumerate() {
            let n = match mode {
                NormalizerMode::PerDataset => t.mask_size(),
                NormalizerMode::Union => l,
            } as f64;
            let mut e = 0.0;
            for j in 0..l {
                if t.mask()[j] {
                    let p = logits[b * l + j];
                    let y = t.targets()[j];
                    e += y * ln_sigmoid(p) + (1.0 - y) * ln_sigmoid(-p);
                }
            }
            total += -e / n;
        }
        total / targets.len() as f64
    }

    fn random_instance(
        rng: &mut ChaCha8Rng,
        max_l: usize,
    ) -> (Tensor, Vec<MaskedTarget>, usize) {
        let l = rng.gen_range(1..=max_l);
        let b = rng.gen_range(1..=4);
        let logits: Vec<f64> = (0..b * l).map(|_| rng.gen_range(-8.0..8.0)).collect();
        let mut targets = Vec::new();
        for _ in 0..b {
            let mut mask = vec![false; l];
            while !mask.iter().any(|&m| m) {
                for m in mask.iter_mut() {
                    *m = rng.gen_bool(0.5);
                }
            }
            let t: Vec<f64> = mask
                .iter()
                .map(|&m| if m && rng.gen_bool(0.5) { 1.0 } else { 0.0 })
                .collect();
            targets.push(MaskedTarget::new(t, mask, 0).unwrap());
        }
        (Tensor::matrix(b, l, logits).unwrap(), targets, l)
    }

    #[test]
    fn zero_logits_mask_of_three_gives_ln2() {
        let logits = Tensor::matrix(1, 5, vec![0.0; 5]).unwrap();
        let mask = vec![true, true, true, false, false];
        let t = MaskedTarget::new(vec![1.0, 0.0, 1.0, 0.0, 0.0], mask, 0).unwrap();
        let mut tape = Tape::new();
        let lv = tape.leaf(&logits);
        let out = selective_bce(&mut tape, lv, &[t], NormalizerMode::PerDataset).unwrap();
        assert!((out.loss.value - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(out.loss.normalizer_used(), Some(3));
    }

    #[test]
    fn single_class_confident_positive() {
        // E = −ln σ(20), evaluated independently through ln_1p.
        let expected = (-20.0f64).exp().ln_1p();
        let logits = Tensor::matrix(1, 1, vec![20.0]).unwrap();
        let t = MaskedTarget::full(vec![1.0], 0).unwrap();
        let mut tape = Tape::new();
        let lv = tape.leaf(&logits);
        let out = selective_bce(&mut tape, lv, &[t], NormalizerMode::PerDataset).unwrap();
        assert!((out.loss.value - expected).abs() < 1e-12, "{}", out.loss.value);
        assert!(out.loss.value > 2.0e-9 && out.loss.value < 2.1e-9);
    }

    #[test]
    fn matches_scalar_loop_oracle_and_masked_fd_gradient_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let (logits, targets, l) = random_instance(&mut rng, 12);
            let mut tape = Tape::new();
            let lv = tape.leaf(&logits);
            let out = selective_bce(&mut tape, lv, &targets, NormalizerMode::PerDataset).unwrap();
            let want = oracle_selective(logits.values(), l, &targets, NormalizerMode::PerDataset);
            assert!(
                (out.loss.value - want).abs() < 1e-12,
                "fused {} oracle {}",
                out.loss.value,
                want
            );

            // Finite differences on a masked-out coordinate: value must not move.
            let b = logits.shape()[0];
            'outer: for bi in 0..b {
                for j in 0..l {
                    if !targets[bi].mask()[j] {
                        let mut bumped = logits.clone();
                        bumped.values_mut()[bi * l + j] += 0.37;
                        let mut tape2 = Tape::new();
                        let lv2 = tape2.leaf(&bumped);
                        let out2 =
                            selective_bce(&mut tape2, lv2, &targets, NormalizerMode::PerDataset)
                                .unwrap();
                        assert_eq!(out.loss.value.to_bits(), out2.loss.value.to_bits());
                        break 'outer;
                    }
                }
            }

            tape.backward(out.root).unwrap();
            let grads = tape.grad(lv);
            for (bi, t) in targets.iter().enumerate() {
                let n = t.mask_size() as f64;
                for j in 0..l {
                    let g = grads[bi * l + j];
                    if t.mask()[j] {
                        let p = logits.values()[bi * l + j];
                        let want = (sigmoid_scalar(p) - t.targets()[j]) / (n * b as f64);
                        assert!((g - want).abs() < 1e-10, "grad {g} want {want}");
                    } else {
                        assert_eq!(g.to_bits(), 0.0f64.to_bits(), "masked grad not +0.0");
                    }
                }
            }
        }
    }

    #[test]
    fn loss_goes_to_zero_in_the_target_direction() {
        let t = MaskedTarget::full(vec![1.0, 0.0, 1.0], 0).unwrap();
        let logits = Tensor::matrix(1, 3, vec![40.0, -40.0, 40.0]).unwrap();
        let mut tape = Tape::new();
        let lv = tape.leaf(&logits);
        let out = selective_bce(&mut tape, lv, &[t], NormalizerMode::PerDataset).unwrap();
        assert!(out.loss.value >= 0.0 && out.loss.value < 1e-15);
    }

    #[test]
    fn empty_mask_is_rejected() {
        let err = MaskedTarget::new(vec![0.0, 0.0], vec![false, false], 0).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn target_outside_mask_is_rejected() {
        let err = MaskedTarget::new(vec![0.0, 1.0], vec![true, false], 0).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn full_bce_equals_selective_with_full_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let l = rng.gen_range(1..=10);
            let b = rng.gen_range(1..=4);
            let logits = Tensor::matrix(
                b,
                l,
                (0..b * l).map(|_| rng.gen_range(-5.0..5.0)).collect(),
            )
            .unwrap();
            let targets: Vec<MaskedTarget> = (0..b)
                .map(|_| {
                    let t: Vec<f64> =
                        (0..l).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
                    MaskedTarget::full(t, 0).unwrap()
                })
                .collect();
            let mut tape = Tape::new();
            let lv = tape.leaf(&logits);
            let sel = selective_bce(&mut tape, lv, &targets, NormalizerMode::PerDataset).unwrap();
            let mut tape2 = Tape::new();
            let lv2 = tape2.leaf(&logits);
            let full = full_bce(&mut tape2, lv2, &targets).unwrap();
            assert!((sel.loss.value - full.loss.value).abs() < 1e-12);
        }
    }

    #[test]
    fn full_bce_pushes_unlabeled_cooccurring_positions_negative() {
        // A sample annotated only in the first (emotion-like) block, with the
        // trailing positions unlabeled. Under full BCE those positions get
        // target 0, so their descent direction is negative; under the
        // selective loss their gradient is exactly zero.
        let l = 5;
        let mut targets = vec![0.0; l];
        targets[0] = 1.0;
        let mut mask = vec![false; l];
        mask[0] = true;
        mask[1] = true;
        let t = MaskedTarget::new(targets, mask, 0).unwrap();
        let logits = Tensor::matrix(1, 5, vec![0.3, -0.2, 0.8, 0.9, -0.1]).unwrap();

        let mut tape = Tape::new();
        let lv = tape.leaf(&logits);
        let full = full_bce(&mut tape, lv, std::slice::from_ref(&t)).unwrap();
        tape.backward(full.root).unwrap();
        let g_full = tape.grad(lv).to_vec();
        for j in 2..5 {
            assert!(
                g_full[j] > 0.0,
                "full BCE should push unlabeled position {j} down, grad {}",
                g_full[j]
            );
        }

        let mut tape2 = Tape::new();
        let lv2 = tape2.leaf(&logits);
        let sel = selective_bce(&mut tape2, lv2, &[t], NormalizerMode::PerDataset).unwrap();
        tape2.backward(sel.root).unwrap();
        let g_sel = tape2.grad(lv2);
        for j in 2..5 {
            assert_eq!(g_sel[j], 0.0);
        }
    }

    #[test]
    fn union_normalizer_rescales_the_loss() {
        let logits = Tensor::matrix(1, 4, vec![0.0; 4]).unwrap();
        let mask = vec![true, true, false, false];
        let t = MaskedTarget::new(vec![1.0, 0.0, 0.0, 0.0], mask, 0).unwrap();
        let mut tape = Tape::new();
        let lv = tape.leaf(&logits);
        let per = selective_bce(&mut tape, lv, std::slice::from_ref(&t), NormalizerMode::PerDataset)
            .unwrap();
        let mut tape2 = Tape::new();
        let lv2 = tape2.leaf(&logits);
        let uni = selective_bce(&mut tape2, lv2, &[t], NormalizerMode::Union).unwrap();
        assert!((per.loss.value - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((uni.loss.value - std::f64::consts::LN_2 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_uniform_gives_ln_c() {
        let c = 7;
        let logits = Tensor::matrix(1, c, vec![0.4; c]).unwrap();
        let mut onehot = vec![0.0; c];
        onehot[3] = 1.0;
        let onehot = Tensor::matrix(1, c, onehot).unwrap();
        let mut tape = Tape::new();
        let lv = tape.leaf(&logits);
        let out = softmax_cross_entropy(&mut tape, lv, &onehot).unwrap();
        assert!((out.loss.value - (c as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_confident_true_class_vanishes() {
        let mut logits = vec![0.0; 7];
        logits[2] = 30.0;
        let logits = Tensor::matrix(1, 7, logits).unwrap();
        let mut onehot = vec![0.0; 7];
        onehot[2] = 1.0;
        let onehot = Tensor::matrix(1, 7, onehot).unwrap();
        let mut tape = Tape::new();
        let lv = tape.leaf(&logits);
        let out = softmax_cross_entropy(&mut tape, lv, &onehot).unwrap();
        assert!(out.loss.value < 1e-12, "{}", out.loss.value);
    }

    #[test]
    fn softmax_gradient_is_softmax_minus_onehot() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let b = 3;
        let c = 5;
        let logits = Tensor::matrix(
            b,
            c,
            (0..b * c).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let mut onehot = vec![0.0; b * c];
        for i in 0..b {
            onehot[i * c + rng.gen_range(0..c)] = 1.0;
        }
        let onehot = Tensor::matrix(b, c, onehot).unwrap();

        let mut tape = Tape::new();
        let lv = tape.leaf(&logits);
        let out = softmax_cross_entropy(&mut tape, lv, &onehot).unwrap();
        tape.backward(out.root).unwrap();
        let grads = tape.grad(lv);
        for i in 0..b {
            let row = &logits.values()[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&x| (x - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            for j in 0..c {
                let want = (exps[j] / z - onehot.values()[i * c + j]) / b as f64;
                assert!((grads[i * c + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rejects_invalid_onehot() {
        let logits = Tensor::matrix(1, 3, vec![0.0; 3]).unwrap();
        let onehot = Tensor::matrix(1, 3, vec![0.5, 0.5, 0.0]).unwrap();
        let mut tape = Tape::new();
        let lv = tape.leaf(&logits);
        let err = softmax_cross_entropy(&mut tape, lv, &onehot).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn sigmoid_probabilities_monotone_and_bounded() {
        let logits = Tensor::vector(vec![-1000.0, -5.0, -0.3, 0.0, 0.3, 5.0, 1000.0]);
        let probs = sigmoid_probabilities(&logits);
        let v = probs.values();
        assert_eq!(v[3], 0.5);
        for w in v.windows(2) {
            assert!(w[0] <= w[1]);
        }
        for &p in v {
            assert!((0.0..=1.0).contains(&p) && p.is_finite());
        }
        // Within the representable range the output is strictly inside (0,1):
        // below −745 the true value underflows, above ~36.7 it rounds to 1.
        let probs = sigmoid_probabilities(&Tensor::vector(vec![-700.0, 36.0]));
        assert!(probs.values()[0] > 0.0);
        assert!(probs.values()[1] < 1.0);
    }
}
