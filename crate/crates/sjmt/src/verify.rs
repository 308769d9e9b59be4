//! The finite-difference verification suite behind `gradcheck`: every tape
//! primitive, the loss functions (including the exact-zero masked-gradient
//! property) and a full residual model trained end to end through the
//! selective loss.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use crate::data::{LabelKind, LabelSpace, LabelUnion};
use crate::error::Result;
use crate::losses::{self, MaskedTarget, NormalizerMode};
use crate::nn::{self, HeadSelection, HeadStrategy, NetworkSpec};
use crate::tensor::gradcheck::finite_difference_check;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteSize {
    Small,
    Full,
}

impl std::str::FromStr for SuiteSize {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(SuiteSize::Small),
            "full" => Ok(SuiteSize::Full),
            other => Err(crate::error::Error::Config(format!(
                "unknown suite size '{other}' (expected small or full)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    pub entries: Vec<SuiteEntry>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| !e.passed)
            .map(|e| e.name.as_str())
            .collect()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_error)
            .fold(0.0, f64::max)
    }
}

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn draw(rng: &mut ChaCha20Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Uniform in `[-2,2]` but resampled outside `±1e-3`, keeping ReLU inputs
/// away from the kink where central differences are invalid.
fn draw_off_kink(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let v: f64 = rng.gen_range(-2.0..2.0);
            if v.abs() > 1e-3 {
                break v;
            }
        })
        .collect()
}

fn push_check<F>(
    report: &mut SuiteReport,
    name: &str,
    params: &[Tensor],
    f: F,
) -> Result<()>
where
    F: Fn(&mut Tape, &[crate::tensor::Var]) -> Result<crate::tensor::Var>,
{
    let check = finite_difference_check(name, f, params, H, TOL)?;
    report.entries.push(SuiteEntry {
        name: name.to_string(),
        max_rel_error: check.max_rel_error(),
        passed: check.passed(),
    });
    Ok(())
}

fn random_masked_targets(rng: &mut ChaCha20Rng, b: usize, l: usize) -> Vec<MaskedTarget> {
    (0..b)
        .map(|_| {
            let mut mask = vec![false; l];
            while !mask.iter().any(|&m| m) {
                for m in mask.iter_mut() {
                    *m = rng.gen_bool(0.5);
                }
            }
            let targets = mask
                .iter()
                .map(|&m| if m && rng.gen_bool(0.5) { 1.0 } else { 0.0 })
                .collect();
            MaskedTarget::new(targets, mask, 0).expect("valid by construction")
        })
        .collect()
}

fn primitive_checks(report: &mut SuiteReport, rng: &mut ChaCha20Rng) -> Result<()> {
    let a34 = Tensor::matrix(3, 4, draw(rng, 12, -2.0, 2.0))?;
    let b42 = Tensor::matrix(4, 2, draw(rng, 8, -2.0, 2.0))?;
    push_check(report, "matmul", &[a34, b42], |t, v| {
        let p = t.matmul(v[0], v[1])?;
        let s = t.sigmoid(p);
        Ok(t.sum_all(s))
    })?;

    let x = Tensor::matrix(3, 3, draw(rng, 9, -2.0, 2.0))?;
    let y = Tensor::matrix(3, 3, draw(rng, 9, -2.0, 2.0))?;
    push_check(report, "add", &[x.clone(), y.clone()], |t, v| {
        let s = t.add(v[0], v[1])?;
        let s = t.softplus(s);
        Ok(t.sum_all(s))
    })?;
    push_check(report, "sub", &[x.clone(), y.clone()], |t, v| {
        let s = t.sub(v[0], v[1])?;
        let s = t.softplus(s);
        Ok(t.sum_all(s))
    })?;
    push_check(report, "mul", &[x.clone(), y], |t, v| {
        let s = t.mul(v[0], v[1])?;
        let s = t.sigmoid(s);
        Ok(t.sum_all(s))
    })?;

    let row = Tensor::vector(draw(rng, 3, -1.0, 1.0));
    push_check(report, "add_row", &[x.clone(), row.clone()], |t, v| {
        let s = t.add_row(v[0], v[1])?;
        let s = t.softplus(s);
        Ok(t.sum_all(s))
    })?;
    push_check(report, "mul_row", &[x.clone(), row], |t, v| {
        let s = t.mul_row(v[0], v[1])?;
        let s = t.sigmoid(s);
        Ok(t.sum_all(s))
    })?;

    let off_kink = Tensor::matrix(3, 4, draw_off_kink(rng, 12))?;
    push_check(report, "relu", &[off_kink], |t, v| {
        let r = t.relu(v[0]);
        let s = t.mul(r, r)?;
        Ok(t.sum_all(s))
    })?;

    push_check(report, "sigmoid", &[x.clone()], |t, v| {
        let s = t.sigmoid(v[0]);
        Ok(t.sum_all(s))
    })?;
    push_check(report, "softplus", &[x.clone()], |t, v| {
        let s = t.softplus(v[0]);
        Ok(t.sum_all(s))
    })?;

    let positive = Tensor::matrix(2, 3, draw(rng, 6, 0.5, 2.5))?;
    push_check(report, "log", &[positive.clone()], |t, v| {
        let s = t.log(v[0])?;
        Ok(t.sum_all(s))
    })?;
    push_check(report, "rsqrt_shift", &[positive], |t, v| {
        let s = t.rsqrt_shift(v[0], 1e-5)?;
        Ok(t.sum_all(s))
    })?;

    push_check(report, "scale", &[x.clone()], |t, v| {
        let s = t.sigmoid(v[0]);
        let s = t.scale(s, 2.5);
        Ok(t.sum_all(s))
    })?;
    push_check(report, "mean_rows", &[x.clone()], |t, v| {
        let m = t.mean_rows(v[0])?;
        let s = t.softplus(m);
        Ok(t.sum_all(s))
    })?;
    push_check(report, "log_sum_exp_rows", &[x], |t, v| {
        let l = t.log_sum_exp_rows(v[0])?;
        Ok(t.sum_all(l))
    })?;

    // The exact train-mode normalization graph, differentiated through the
    // batch statistics.
    let xn = Tensor::matrix(6, 3, draw(rng, 18, -2.0, 2.0))?;
    push_check(report, "batch_norm_train_graph", &[xn], |t, v| {
        let mean = t.mean_rows(v[0])?;
        let neg = t.neg(mean);
        let centered = t.add_row(v[0], neg)?;
        let sq = t.mul(centered, centered)?;
        let var = t.mean_rows(sq)?;
        let rinv = t.rsqrt_shift(var, 1e-5)?;
        let normed = t.mul_row(centered, rinv)?;
        let s = t.sigmoid(normed);
        Ok(t.sum_all(s))
    })?;
    Ok(())
}

fn loss_checks(report: &mut SuiteReport, rng: &mut ChaCha20Rng) -> Result<()> {
    let (b, l) = (3, 8);
    let logits = Tensor::matrix(b, l, draw(rng, b * l, -4.0, 4.0))?;
    let targets = random_masked_targets(rng, b, l);

    {
        let targets = targets.clone();
        push_check(report, "selective_bce", &[logits.clone()], move |t, v| {
            Ok(losses::selective_bce(t, v[0], &targets, NormalizerMode::PerDataset)?.root)
        })?;
    }
    {
        let targets = targets.clone();
        push_check(report, "full_bce", &[logits.clone()], move |t, v| {
            Ok(losses::full_bce(t, v[0], &targets)?.root)
        })?;
    }

    let c = 5;
    let cat_logits = Tensor::matrix(b, c, draw(rng, b * c, -3.0, 3.0))?;
    let mut onehot = vec![0.0; b * c];
    for i in 0..b {
        onehot[i * c + rng.gen_range(0..c)] = 1.0;
    }
    let onehot = Tensor::matrix(b, c, onehot)?;
    push_check(report, "softmax_cross_entropy", &[cat_logits], move |t, v| {
        Ok(losses::softmax_cross_entropy(t, v[0], &onehot)?.root)
    })?;

    // Masked coordinates must carry bit-exact zero gradients, not merely
    // small ones.
    let mut tape = Tape::new();
    let lv = tape.leaf(&logits);
    let out = losses::selective_bce(&mut tape, lv, &targets, NormalizerMode::PerDataset)?;
    tape.backward(out.root)?;
    let grads = tape.grad(lv);
    let mut exact = true;
    for (i, t) in targets.iter().enumerate() {
        for j in 0..l {
            if !t.mask()[j] && grads[i * l + j].to_bits() != 0.0f64.to_bits() {
                exact = false;
            }
        }
    }
    report.entries.push(SuiteEntry {
        name: "masked_gradient_exact_zero".into(),
        max_rel_error: if exact { 0.0 } else { f64::INFINITY },
        passed: exact,
    });
    Ok(())
}

/// Central-difference check of a whole residual network trained through the
/// selective loss, differentiating with respect to every parameter tensor.
fn model_check(
    report: &mut SuiteReport,
    name: &str,
    spec: &NetworkSpec,
    rng: &mut ChaCha20Rng,
) -> Result<()> {
    let net = nn::init_network(spec)?;
    let b = 4;
    let batch = Tensor::matrix(b, spec.input_dim, draw(rng, b * spec.input_dim, -1.5, 1.5))?;
    let total = match &spec.head {
        HeadStrategy::SharedSelective { union } => union.total_classes(),
        _ => unreachable!("model check uses the shared head"),
    };
    let targets = random_masked_targets(rng, b, total);

    let eval = |net: &nn::Network| -> Result<f64> {
        let mut net = net.clone();
        let mut tape = Tape::new();
        let pass = net.forward_train(&mut tape, &batch, HeadSelection::All)?;
        let loss = losses::selective_bce(
            &mut tape,
            pass.single(),
            &targets,
            NormalizerMode::PerDataset,
        )?;
        Ok(loss.loss.value)
    };

    // Analytic gradients via one taped pass on a clone.
    let mut work = net.clone();
    let mut tape = Tape::new();
    let pass = work.forward_train(&mut tape, &batch, HeadSelection::All)?;
    let loss = losses::selective_bce(
        &mut tape,
        pass.single(),
        &targets,
        NormalizerMode::PerDataset,
    )?;
    tape.backward(loss.root)?;
    work.accumulate_grads(&tape, &pass)?;
    let analytic: Vec<Vec<f64>> = work
        .params()
        .iter()
        .map(|p| p.grad().unwrap_or(&[]).to_vec())
        .collect();

    let mut max_rel: f64 = 0.0;
    let mut perturbed = net.clone();
    let n_params = net.params().len();
    for pi in 0..n_params {
        for j in 0..net.params()[pi].numel() {
            let orig = net.params()[pi].values()[j];
            perturbed.params_mut()[pi].values_mut()[j] = orig + H;
            let plus = eval(&perturbed)?;
            perturbed.params_mut()[pi].values_mut()[j] = orig - H;
            let minus = eval(&perturbed)?;
            perturbed.params_mut()[pi].values_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * H);
            let a = analytic[pi][j];
            let denom = a.abs().max(numeric.abs()).max(1e-3);
            max_rel = max_rel.max((a - numeric).abs() / denom);
        }
    }
    report.entries.push(SuiteEntry {
        name: name.to_string(),
        max_rel_error: max_rel,
        passed: max_rel <= TOL,
    });
    Ok(())
}

fn model_union(cat: usize, ml: usize) -> LabelUnion {
    let a = LabelSpace::new(
        "cat",
        (0..cat).map(|i| format!("c{i}")).collect(),
        LabelKind::CategoricalExclusive,
    )
    .expect("nonempty");
    let b = LabelSpace::new(
        "ml",
        (0..ml).map(|i| format!("m{i}")).collect(),
        LabelKind::MultilabelBinary,
    )
    .expect("nonempty");
    LabelUnion::new(vec![a, b]).expect("distinct names")
}

/// Runs the verification suite; deterministic (fixed internal seed).
pub fn run_suite(size: SuiteSize) -> Result<SuiteReport> {
    let mut rng = ChaCha20Rng::seed_from_u64(20_240_101);
    let mut report = SuiteReport::default();

    primitive_checks(&mut report, &mut rng)?;
    loss_checks(&mut report, &mut rng)?;

    // ~220 parameters: 4→6 input layer, two width-6 blocks, shared head
    // over a 4-class union, batch statistics in the normalization path.
    let spec = NetworkSpec {
        input_dim: 4,
        width: 6,
        blocks: 2,
        normalize: true,
        head: HeadStrategy::SharedSelective {
            union: model_union(2, 2),
        },
        seed: 11,
    };
    model_check(&mut report, "residual_model", &spec, &mut rng)?;

    if size == SuiteSize::Full {
        let spec = NetworkSpec {
            input_dim: 6,
            width: 10,
            blocks: 3,
            normalize: true,
            head: HeadStrategy::SharedSelective {
                union: model_union(3, 4),
            },
            seed: 12,
        };
        model_check(&mut report, "residual_model_deep", &spec, &mut rng)?;
        for round in 0..3 {
            let mut rng = ChaCha20Rng::seed_from_u64(7_000 + round);
            primitive_checks(&mut report, &mut rng)?;
            loss_checks(&mut report, &mut rng)?;
        }
    }

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let report = run_suite(SuiteSize::Small).unwrap();
        assert!(
            report.passed(),
            "failing checks: {:?} (max rel {})",
            report.failing(),
            report.max_rel_error()
        );
        assert!(report.max_rel_error() < 1e-5);
        assert!(report
            .entries
            .iter()
            .any(|e| e.name == "masked_gradient_exact_zero" && e.max_rel_error == 0.0));
    }

    #[test]
    fn corrupted_sigmoid_backward_is_caught_and_named() {
        crate::tensor::_set_sigmoid_backward_fault(true);
        let report = run_suite(SuiteSize::Small).unwrap();
        crate::tensor::_set_sigmoid_backward_fault(false);
        assert!(!report.passed());
        assert!(
            report.failing().contains(&"sigmoid"),
            "failing: {:?}",
            report.failing()
        );
    }
}
