//! Training loop: SGD with a staircase-decayed learning rate, one of three
//! strategies over the same step/batch budget.
//!
//! * `single_task` — one network per dataset, softmax cross-entropy for
//!   categorical spaces and plain sigmoid cross-entropy for multilabel ones.
//! * `classical_mt` — a shared trunk with one head and one loss per dataset,
//!   fed by alternating whole batches; a batch updates the trunk and its own
//!   head only.
//! * `sjmt` — a single shared head over the label union, fed by mixed
//!   batches under the dataset-wise selective loss, so a sample only
//!   supervises the label positions its dataset annotates.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use crate::data::sampler::{Batch, BatchSampler, SamplingMode};
use crate::data::{Dataset, LabelKind, LabelUnion};
use crate::error::{Error, Result};
use crate::losses::{self, BatchLoss, NormalizerMode};
use crate::nn::{self, HeadSelection, HeadStrategy, Network, NetworkSpec};
use crate::tensor::{Tape, Tensor};

const SALT_SAMPLER: u64 = 0x73616d70; // "samp"
const SALT_AUGMENT: u64 = 0x6a697474; // "jitt"

/// Any parameter drifting past this bound counts as divergence; it also
/// guarantees the next forward pass cannot overflow f64.
const PARAM_BOUND: f64 = 1e18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    SingleTask,
    ClassicalMt,
    Sjmt,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Strategy::SingleTask => "single_task",
            Strategy::ClassicalMt => "classical_mt",
            Strategy::Sjmt => "sjmt",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_task" => Ok(Strategy::SingleTask),
            "classical_mt" => Ok(Strategy::ClassicalMt),
            "sjmt" => Ok(Strategy::Sjmt),
            other => Err(Error::Config(format!(
                "unknown strategy '{other}' (expected single_task, classical_mt or sjmt)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub batch_size: usize,
    pub lr0: f64,
    pub decay_every_steps: usize,
    pub decay_factor: f64,
    pub total_steps: usize,
    pub seed: u64,
    /// Gaussian feature jitter applied in train mode only.
    pub augment_sigma: f64,
    pub normalizer: NormalizerMode,
    /// Ablation: replace the selective loss with mask-ignoring BCE.
    pub use_full_bce: bool,
    /// Validation interval in steps; 0 disables periodic evaluation.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Sjmt,
            batch_size: 64,
            lr0: 0.05,
            decay_every_steps: 500,
            decay_factor: 0.1,
            total_steps: 4000,
            seed: 0,
            augment_sigma: 0.05,
            normalizer: NormalizerMode::PerDataset,
            use_full_bce: false,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "decay_factor must be in (0, 1], got {}",
                self.decay_factor
            )));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.decay_every_steps == 0 {
            return Err(Error::Config("decay_every_steps must be at least 1".into()));
        }
        if self.augment_sigma < 0.0 {
            return Err(Error::Config("augment_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

/// Staircase-decayed learning rate: `lr0 · γ^⌊step / decay_every⌋`.
pub fn lr_schedule(step: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.decay_factor.powi((step / cfg.decay_every_steps) as i32)
}

/// One plain SGD update: `p ← p − lr·g`, then gradients reset to zero.
/// Tensors with no gradient slot never took part in the backward pass
/// (e.g. an inactive head) and are left untouched.
pub fn sgd_step(params: &mut [&mut Tensor], lr: f64) -> Result<()> {
    for (i, p) in params.iter_mut().enumerate() {
        let Some(grad) = p.grad() else {
            continue;
        };
        if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                step: 0,
                reason: format!("non-finite gradient {bad} in parameter tensor {i}"),
            });
        }
        let grad = grad.to_vec();
        for (v, g) in p.values_mut().iter_mut().zip(&grad) {
            *v -= lr * g;
        }
        p.zero_grad();
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub dataset: String,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub step: usize,
    pub metrics: Vec<(String, f64)>,
}

/// Complete record of one run: per-step loss rows plus periodic validation
/// metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,dataset,lr,loss\n");
        for r in &self.steps {
            let _ = writeln!(out, "{},{},{},{}", r.step, r.dataset, r.lr, r.loss);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.steps.last().map(|r| r.loss)
    }
}

/// Builds the network spec implied by a strategy over a union.
pub fn spec_for_strategy(
    strategy: Strategy,
    union: &LabelUnion,
    input_dim: usize,
    width: usize,
    blocks: usize,
    normalize: bool,
    seed: u64,
) -> Result<NetworkSpec> {
    let head = match strategy {
        Strategy::SingleTask => {
            if union.spaces().len() != 1 {
                return Err(Error::Config(format!(
                    "single_task expects a one-space union, got {} spaces",
                    union.spaces().len()
                )));
            }
            HeadStrategy::SingleTask {
                space: union.spaces()[0].clone(),
            }
        }
        Strategy::ClassicalMt => HeadStrategy::MultiHead {
            spaces: union.spaces().to_vec(),
        },
        Strategy::Sjmt => HeadStrategy::SharedSelective {
            union: union.clone(),
        },
    };
    Ok(NetworkSpec {
        input_dim,
        width,
        blocks,
        normalize,
        head,
        seed,
    })
}

fn check_strategy_datasets(strategy: Strategy, datasets: &[&Dataset]) -> Result<()> {
    match strategy {
        Strategy::SingleTask if datasets.len() != 1 => Err(Error::Config(format!(
            "single_task trains on exactly one dataset, got {}",
            datasets.len()
        ))),
        Strategy::ClassicalMt | Strategy::Sjmt if datasets.len() < 2 => {
            Err(Error::Config(format!(
                "{strategy} needs at least two datasets, got {}",
                datasets.len()
            )))
        }
        _ => Ok(()),
    }
}

/// Local (within-head) targets for a single-dataset batch.
fn local_targets(batch: &Batch, union: &LabelUnion, space_index: usize) -> Result<Tensor> {
    let range = union.range(space_index);
    let width = range.len();
    let mut vals = Vec::with_capacity(batch.len() * width);
    for t in &batch.targets {
        vals.extend_from_slice(&t.targets()[range.clone()]);
    }
    Tensor::matrix(batch.len(), width, vals)
}

fn head_loss(
    tape: &mut Tape,
    strategy: Strategy,
    cfg: &TrainConfig,
    pass: &nn::ForwardPass,
    batch: &Batch,
    union: &LabelUnion,
    datasets: &[&Dataset],
) -> Result<BatchLoss> {
    match strategy {
        Strategy::Sjmt => {
            let logits = pass.single();
            if cfg.use_full_bce {
                losses::full_bce(tape, logits, &batch.targets)
            } else {
                losses::selective_bce(tape, logits, &batch.targets, cfg.normalizer)
            }
        }
        Strategy::SingleTask | Strategy::ClassicalMt => {
            let di = batch.dataset_indices[0];
            debug_assert!(batch.dataset_indices.iter().all(|&d| d == di));
            let ds = datasets[di];
            let space = &union.spaces()[ds.space_index];
            let logits = pass
                .head(if strategy == Strategy::SingleTask { 0 } else { di })
                .ok_or_else(|| Error::Contract("active head missing from forward pass".into()))?;
            let local = local_targets(batch, union, ds.space_index)?;
            match space.kind {
                LabelKind::CategoricalExclusive => {
                    losses::softmax_cross_entropy(tape, logits, &local)
                }
                LabelKind::MultilabelBinary => {
                    // Within its own head every position is labeled.
                    let targets: Vec<_> = (0..local.shape()[0])
                        .map(|i| {
                            let row = local.values()[i * space.len()..(i + 1) * space.len()].to_vec();
                            losses::MaskedTarget::full(row, di)
                        })
                        .collect::<Result<_>>()?;
                    losses::selective_bce(tape, logits, &targets, NormalizerMode::PerDataset)
                }
            }
        }
    }
}

fn augment(batch: &mut Batch, sigma: f64, rng: &mut ChaCha20Rng) {
    if sigma == 0.0 {
        return;
    }
    for v in batch.features.values_mut() {
        let noise: f64 = rng.sample(StandardNormal);
        *v += sigma * noise;
    }
}

fn dataset_label(batch: &Batch, datasets: &[&Dataset]) -> String {
    let sources = batch.sources();
    if sources.len() == 1 {
        datasets[sources[0]].name.clone()
    } else {
        sources
            .iter()
            .map(|&d| datasets[d].name.as_str())
            .collect::<Vec<_>>()
            .join("+")
    }
}

/// Periodic/final validation callback: name → metric rows.
pub type EvalFn<'a> = dyn Fn(&Network) -> Result<Vec<(String, f64)>> + 'a;

/// Runs one training strategy to completion. Fully deterministic given the
/// config seed: the sampler, augmentation and initialization streams are all
/// derived from it.
pub fn train(
    datasets: &[&Dataset],
    union: &LabelUnion,
    net_spec: &NetworkSpec,
    cfg: &TrainConfig,
    evaluator: Option<&EvalFn<'_>>,
) -> Result<(Network, TrainLog)> {
    cfg.validate()?;
    check_strategy_datasets(cfg.strategy, datasets)?;
    let strategy_head_ok = matches!(
        (cfg.strategy, &net_spec.head),
        (Strategy::SingleTask, HeadStrategy::SingleTask { .. })
            | (Strategy::ClassicalMt, HeadStrategy::MultiHead { .. })
            | (Strategy::Sjmt, HeadStrategy::SharedSelective { .. })
    );
    if !strategy_head_ok {
        return Err(Error::Config(format!(
            "network head does not match strategy {}",
            cfg.strategy
        )));
    }

    let mode = match cfg.strategy {
        Strategy::SingleTask | Strategy::Sjmt => SamplingMode::Mixed,
        Strategy::ClassicalMt => SamplingMode::Alternating { period: 1 },
    };
    let mut sampler = BatchSampler::new(
        datasets.to_vec(),
        mode,
        cfg.batch_size,
        cfg.seed ^ SALT_SAMPLER,
    )?;
    let mut aug_rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ SALT_AUGMENT);

    let mut net = nn::init_network(net_spec)?;
    let mut log = TrainLog::default();

    for step in 0..cfg.total_steps {
        let mut batch = sampler.next_batch();
        augment(&mut batch, cfg.augment_sigma, &mut aug_rng);

        let selection = match cfg.strategy {
            Strategy::Sjmt | Strategy::SingleTask => HeadSelection::All,
            Strategy::ClassicalMt => HeadSelection::Only(batch.dataset_indices[0]),
        };
        let mut tape = Tape::new();
        let pass = net.forward_train(&mut tape, &batch.features, selection)?;
        let loss = head_loss(&mut tape, cfg.strategy, cfg, &pass, &batch, union, datasets)?;
        if !loss.loss.value.is_finite() {
            return Err(Error::Divergence {
                step,
                reason: format!("loss is {}", loss.loss.value),
            });
        }
        tape.backward(loss.root)?;
        net.accumulate_grads(&tape, &pass)?;

        let lr = lr_schedule(step, cfg);
        sgd_step(&mut net.params_mut(), lr).map_err(|e| match e {
            Error::Divergence { reason, .. } => Error::Divergence { step, reason },
            other => other,
        })?;
        if let Some((i, bad)) = net.params().iter().enumerate().find_map(|(i, p)| {
            p.values()
                .iter()
                .find(|v| !v.is_finite() || v.abs() > PARAM_BOUND)
                .map(|v| (i, *v))
        }) {
            return Err(Error::Divergence {
                step,
                reason: format!("parameter tensor {i} reached {bad}"),
            });
        }

        log.steps.push(StepRecord {
            step,
            dataset: dataset_label(&batch, datasets),
            lr,
            loss: loss.loss.value,
        });

        if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 {
            if let Some(eval) = evaluator {
                log.evals.push(EvalRecord {
                    step,
                    metrics: eval(&net)?,
                });
            }
        }
    }

    Ok((net, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LabelSpace, RawDataset, RawSample};
    use crate::losses::MaskedTarget;

    #[test]
    fn lr_schedule_follows_the_staircase() {
        let cfg = TrainConfig {
            lr0: 0.05,
            decay_every_steps: 500,
            decay_factor: 0.1,
            ..Default::default()
        };
        assert_eq!(lr_schedule(0, &cfg), 0.05);
        assert_eq!(lr_schedule(499, &cfg), 0.05);
        assert!((lr_schedule(500, &cfg) - 0.005).abs() < 1e-15);

        let constant = TrainConfig {
            decay_factor: 1.0,
            ..cfg
        };
        assert_eq!(lr_schedule(0, &constant), 0.05);
        assert_eq!(lr_schedule(123_456, &constant), 0.05);
    }

    #[test]
    fn sgd_updates_and_resets_grads() {
        let mut p = Tensor::vector(vec![1.0]).with_grad();
        p.accumulate_grad(&[2.0]).unwrap();
        sgd_step(&mut [&mut p], 0.1).unwrap();
        assert!((p.values()[0] - 0.8).abs() < 1e-15);
        assert_eq!(p.grad().unwrap(), &[0.0]);

        p.accumulate_grad(&[5.0]).unwrap();
        sgd_step(&mut [&mut p], 0.0).unwrap();
        assert!((p.values()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_contracts_a_quadratic_bowl() {
        // f(p) = p², gradient 2p, lr 0.4 → contraction factor (1 − 0.8).
        let mut p = Tensor::vector(vec![1.0]).with_grad();
        for _ in 0..50 {
            let g = 2.0 * p.values()[0];
            p.accumulate_grad(&[g]).unwrap();
            sgd_step(&mut [&mut p], 0.4).unwrap();
        }
        assert!(p.values()[0].abs() < 1e-4, "{}", p.values()[0]);
    }

    #[test]
    fn sgd_rejects_non_finite_gradient() {
        let mut p = Tensor::vector(vec![1.0]).with_grad();
        p.accumulate_grad(&[f64::NAN]).unwrap();
        let err = sgd_step(&mut [&mut p], 0.1).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    // -- small synthetic fixtures for end-to-end strategy checks --

    fn toy_multidomain() -> (LabelUnion, Dataset, Dataset) {
        let emo = LabelSpace::new(
            "emotion",
            vec!["e0".into(), "e1".into()],
            LabelKind::CategoricalExclusive,
        )
        .unwrap();
        let aus = LabelSpace::new(
            "aus",
            vec!["AU1".into(), "AU2".into(), "AU3".into()],
            LabelKind::MultilabelBinary,
        )
        .unwrap();
        let union = LabelUnion::new(vec![emo.clone(), aus.clone()]).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mk_emo = |rng: &mut ChaCha20Rng| {
            let samples = (0..40)
                .map(|i| {
                    let class = i % 2;
                    RawSample {
                        id: format!("e{i}"),
                        features: vec![
                            class as f64 + 0.1 * rng.sample::<f64, _>(StandardNormal),
                            rng.sample(StandardNormal),
                        ],
                        labels: if class == 0 {
                            vec![1.0, 0.0]
                        } else {
                            vec![0.0, 1.0]
                        },
                    }
                })
                .collect();
            RawDataset {
                name: "emotion".into(),
                space: emo.clone(),
                feature_dim: 2,
                samples,
            }
        };
        let mk_aus = |rng: &mut ChaCha20Rng| {
            let samples = (0..40)
                .map(|i| {
                    let on = i % 2 == 0;
                    RawSample {
                        id: format!("a{i}"),
                        features: vec![
                            if on { 1.0 } else { 0.0 },
                            rng.sample(StandardNormal),
                        ],
                        labels: if on {
                            vec![1.0, 0.0, 1.0]
                        } else {
                            vec![0.0, 1.0, 0.0]
                        },
                    }
                })
                .collect();
            RawDataset {
                name: "aus".into(),
                space: aus.clone(),
                feature_dim: 2,
                samples,
            }
        };
        let da = union.bind(&mk_emo(&mut rng)).unwrap();
        let db = union.bind(&mk_aus(&mut rng)).unwrap();
        (union, da, db)
    }

    fn small_cfg(strategy: Strategy, steps: usize) -> TrainConfig {
        TrainConfig {
            strategy,
            batch_size: 8,
            lr0: 0.05,
            decay_every_steps: 100,
            decay_factor: 0.5,
            total_steps: steps,
            seed: 42,
            augment_sigma: 0.0,
            normalizer: NormalizerMode::PerDataset,
            use_full_bce: false,
            eval_every: 0,
        }
    }

    #[test]
    fn same_seed_trains_bit_identically() {
        let (union, da, db) = toy_multidomain();
        let cfg = small_cfg(Strategy::Sjmt, 30);
        let spec = spec_for_strategy(Strategy::Sjmt, &union, 2, 8, 1, true, cfg.seed).unwrap();
        let (n1, l1) = train(&[&da, &db], &union, &spec, &cfg, None).unwrap();
        let (n2, l2) = train(&[&da, &db], &union, &spec, &cfg, None).unwrap();
        assert_eq!(l1, l2);
        for (a, b) in n1.params().iter().zip(n2.params().iter()) {
            for (x, y) in a.values().iter().zip(b.values()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn classical_mt_log_alternates_datasets() {
        let (union, da, db) = toy_multidomain();
        let cfg = small_cfg(Strategy::ClassicalMt, 6);
        let spec =
            spec_for_strategy(Strategy::ClassicalMt, &union, 2, 8, 1, false, cfg.seed).unwrap();
        let (_, log) = train(&[&da, &db], &union, &spec, &cfg, None).unwrap();
        let names: Vec<&str> = log.steps.iter().map(|r| r.dataset.as_str()).collect();
        assert_eq!(
            names,
            vec!["emotion", "aus", "emotion", "aus", "emotion", "aus"]
        );
    }

    #[test]
    fn classical_mt_batch_from_a_leaves_head_b_untouched() {
        let (union, da, db) = toy_multidomain();
        let cfg = small_cfg(Strategy::ClassicalMt, 1); // one step, from dataset 0
        let spec =
            spec_for_strategy(Strategy::ClassicalMt, &union, 2, 8, 1, false, cfg.seed).unwrap();
        let fresh = nn::init_network(&spec).unwrap();
        let (trained, log) = train(&[&da, &db], &union, &spec, &cfg, None).unwrap();
        assert_eq!(log.steps[0].dataset, "emotion");
        // Slots: input(2) + block(4) + head0(2) + head1(2); head B is the last pair.
        let n = fresh.params().len();
        for slot in [n - 2, n - 1] {
            let before = fresh.params()[slot].values();
            let after = trained.params()[slot].values();
            for (x, y) in before.iter().zip(after) {
                assert_eq!(x.to_bits(), y.to_bits(), "head-B slot {slot} changed");
            }
        }
        // The trunk did change.
        assert!(fresh.params()[0]
            .values()
            .iter()
            .zip(trained.params()[0].values())
            .any(|(x, y)| x != y));
    }

    #[test]
    fn sjmt_single_source_batch_has_zero_grads_on_other_datasets_head_rows() {
        let (union, da, _db) = toy_multidomain();
        let spec = spec_for_strategy(Strategy::Sjmt, &union, 2, 6, 1, true, 3).unwrap();
        let mut net = nn::init_network(&spec).unwrap();

        // Hand-build a batch containing only dataset-A samples.
        let rows = 4;
        let mut feats = Vec::new();
        let mut targets = Vec::new();
        for s in da.samples.iter().take(rows) {
            feats.extend_from_slice(&s.features);
            targets.push(s.target.clone());
        }
        let features = Tensor::matrix(rows, 2, feats).unwrap();
        let mut tape = Tape::new();
        let pass = net.forward_train(&mut tape, &features, HeadSelection::All).unwrap();
        let loss = losses::selective_bce(
            &mut tape,
            pass.single(),
            &targets,
            NormalizerMode::PerDataset,
        )
        .unwrap();
        tape.backward(loss.root).unwrap();
        net.accumulate_grads(&tape, &pass).unwrap();

        // Head weight is [width × 5]; columns 2..5 belong to dataset B's
        // exclusive classes, as does the bias tail.
        let mut params = net.params_mut();
        let n = params.len();
        let head_w = &params[n - 2];
        let g = head_w.grad().unwrap();
        let (width, total) = (6, 5);
        for r in 0..width {
            for c in union.range(1) {
                assert_eq!(g[r * total + c], 0.0, "head weight grad at ({r},{c})");
            }
            for c in union.range(0) {
                // At least structurally present; emotion columns may be nonzero.
                let _ = g[r * total + c];
            }
        }
        let head_b = &mut params[n - 1];
        let gb = head_b.grad().unwrap();
        for c in union.range(1) {
            assert_eq!(gb[c], 0.0, "head bias grad at {c}");
        }
        assert!(union.range(0).any(|c| gb[c] != 0.0));
    }

    #[test]
    fn divergent_learning_rate_is_reported_with_its_step() {
        let (union, da, db) = toy_multidomain();
        let mut cfg = small_cfg(Strategy::Sjmt, 50);
        cfg.lr0 = 1e22;
        let spec = spec_for_strategy(Strategy::Sjmt, &union, 2, 8, 1, false, cfg.seed).unwrap();
        let err = train(&[&da, &db], &union, &spec, &cfg, None).unwrap_err();
        match err {
            Error::Divergence { step, .. } => assert!(step < 5, "diverged at step {step}"),
            other => panic!("expected divergence, got {other}"),
        }
    }

    #[test]
    fn strategy_dataset_mismatch_is_a_config_error() {
        let (union, da, db) = toy_multidomain();
        let cfg = small_cfg(Strategy::SingleTask, 5);
        let spec = spec_for_strategy(Strategy::Sjmt, &union, 2, 8, 1, false, 0).unwrap();
        let err = train(&[&da, &db], &union, &spec, &cfg, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn masked_target_batch_round_trip_through_local_targets() {
        let (union, _da, db) = toy_multidomain();
        let t = db.samples[0].target.clone();
        let batch = Batch {
            features: Tensor::matrix(1, 2, db.samples[0].features.clone()).unwrap(),
            targets: vec![t.clone()],
            dataset_indices: vec![1],
        };
        let local = local_targets(&batch, &union, 1).unwrap();
        assert_eq!(local.shape(), &[1, 3]);
        assert_eq!(local.values(), &t.targets()[2..5]);
        let rebuilt = MaskedTarget::full(local.values().to_vec(), 1).unwrap();
        assert_eq!(rebuilt.targets(), &t.targets()[2..5]);
    }
}
