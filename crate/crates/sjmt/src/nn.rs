//! Residual vector networks with pluggable head strategies.
//!
//! The trunk is a dense input layer followed by identity-skip residual
//! blocks over a fixed width. Heads come in three arrangements: one head
//! over a single label space, one head per dataset over a shared trunk, or
//! a single shared head spanning the whole label union.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::{LabelSpace, LabelUnion};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// Fully connected layer; weight is stored `[in × out]` so a batch forward
/// is one `[B×in]·[in×out]` product plus a bias row.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    /// Scaled-normal fan-in initialization: σ = √(2/in) ahead of ReLU,
    /// σ = √(1/in) otherwise. Biases start at zero.
    fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut ChaCha20Rng) -> Self {
        let gain = match activation {
            Activation::Relu => 2.0,
            Activation::Identity => 1.0,
        };
        let std = (gain / in_dim as f64).sqrt();
        let weight: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * std)
            .collect();
        Self {
            weight: Tensor::matrix(in_dim, out_dim, weight)
                .expect("dims positive")
                .with_grad(),
            bias: Tensor::vector(vec![0.0; out_dim]).with_grad(),
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }

    /// `x·W + b` without the activation.
    fn linear(&self, tape: &mut Tape, x: Var, slot: usize, binds: &mut Vec<(usize, Var)>) -> Result<Var> {
        let w = tape.leaf(&self.weight);
        let b = tape.leaf(&self.bias);
        binds.push((slot, w));
        binds.push((slot + 1, b));
        let h = tape.matmul(x, w)?;
        tape.add_row(h, b)
    }

    fn activate(&self, tape: &mut Tape, h: Var) -> Var {
        match self.activation {
            Activation::Relu => tape.relu(h),
            Activation::Identity => h,
        }
    }
}

/// Per-feature running statistics for batch normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl NormState {
    pub fn new(dim: usize) -> Self {
        Self {
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: 0.9,
            eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

enum NormPass<'a> {
    Train(&'a mut NormState),
    Eval(&'a NormState),
}

/// Normalizes each feature column. Train mode uses batch statistics
/// (mean 0, variance 1 up to ε) and folds them into the running estimates
/// with momentum; eval mode applies the running estimates.
fn batch_norm(tape: &mut Tape, x: Var, norm: NormPass<'_>) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 2 {
        return Err(Error::Shape {
            op: "batch_norm",
            lhs: shape,
            rhs: vec![],
        });
    }
    match norm {
        NormPass::Train(state) => {
            if shape[0] < 2 {
                return Err(Error::Contract(format!(
                    "batch normalization in train mode needs a batch of at least 2, got {}",
                    shape[0]
                )));
            }
            let mean = tape.mean_rows(x)?;
            let neg_mean = tape.neg(mean);
            let centered = tape.add_row(x, neg_mean)?;
            let sq = tape.mul(centered, centered)?;
            let var = tape.mean_rows(sq)?;
            let rinv = tape.rsqrt_shift(var, state.eps)?;
            let out = tape.mul_row(centered, rinv)?;
            let m = state.momentum;
            for (r, &b) in state.running_mean.iter_mut().zip(tape.value(mean)) {
                *r = m * *r + (1.0 - m) * b;
            }
            for (r, &b) in state.running_var.iter_mut().zip(tape.value(var)) {
                *r = m * *r + (1.0 - m) * b;
            }
            Ok(out)
        }
        NormPass::Eval(state) => {
            let neg_mean: Vec<f64> = state.running_mean.iter().map(|&m| -m).collect();
            let rinv: Vec<f64> = state
                .running_var
                .iter()
                .map(|&v| 1.0 / (v + state.eps).sqrt())
                .collect();
            let nm = tape.leaf(&Tensor::vector(neg_mean));
            let ri = tape.leaf(&Tensor::vector(rinv));
            let centered = tape.add_row(x, nm)?;
            tape.mul_row(centered, ri)
        }
    }
}

/// Two equal-width dense layers with an identity skip connection; with all
/// parameters zero the block is the identity map.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub first: DenseLayer,
    pub second: DenseLayer,
}

impl ResidualBlock {
    fn init(width: usize, rng: &mut ChaCha20Rng) -> Self {
        Self {
            first: DenseLayer::init(width, width, Activation::Relu, rng),
            second: DenseLayer::init(width, width, Activation::Identity, rng),
        }
    }

    fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        norm: Option<NormPass<'_>>,
        slot: usize,
        binds: &mut Vec<(usize, Var)>,
    ) -> Result<Var> {
        let mut h = self.first.linear(tape, x, slot, binds)?;
        if let Some(n) = norm {
            h = batch_norm(tape, h, n)?;
        }
        h = self.first.activate(tape, h);
        let h = self.second.linear(tape, h, slot + 2, binds)?;
        let h = self.second.activate(tape, h);
        tape.add(x, h)
    }
}

/// How the output layer(s) cover the label structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "strategy")]
pub enum HeadStrategy {
    /// One head over a single dataset's own label space.
    SingleTask { space: LabelSpace },
    /// One head per dataset, all sharing the trunk.
    MultiHead { spaces: Vec<LabelSpace> },
    /// A single head spanning the whole label union.
    SharedSelective { union: LabelUnion },
}

impl HeadStrategy {
    /// Output width of each head, in head order.
    pub fn head_widths(&self) -> Vec<usize> {
        match self {
            HeadStrategy::SingleTask { space } => vec![space.len()],
            HeadStrategy::MultiHead { spaces } => spaces.iter().map(|s| s.len()).collect(),
            HeadStrategy::SharedSelective { union } => vec![union.total_classes()],
        }
    }

    pub fn n_heads(&self) -> usize {
        self.head_widths().len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub width: usize,
    pub blocks: usize,
    pub normalize: bool,
    pub head: HeadStrategy,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.width == 0 {
            return Err(Error::Config(format!(
                "layer widths must be positive (input_dim {}, width {})",
                self.input_dim, self.width
            )));
        }
        if self.head.head_widths().iter().any(|&w| w == 0) {
            return Err(Error::Config("a head has zero output classes".into()));
        }
        Ok(())
    }
}

/// Which heads a forward pass should compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadSelection {
    All,
    Only(usize),
}

/// Result of a forward pass: logits per computed head plus the bindings
/// from parameter slots to tape leaves, used to pull gradients back out.
pub struct ForwardPass {
    /// `(head_index, logits)` for each computed head; logits are raw
    /// pre-activation scores — losses own any squashing.
    pub heads: Vec<(usize, Var)>,
    bindings: Vec<(usize, Var)>,
}

impl ForwardPass {
    pub fn head(&self, index: usize) -> Option<Var> {
        self.heads
            .iter()
            .find(|(i, _)| *i == index)
            .map(|(_, v)| *v)
    }

    pub fn single(&self) -> Var {
        debug_assert_eq!(self.heads.len(), 1);
        self.heads[0].1
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    input_layer: DenseLayer,
    blocks: Vec<ResidualBlock>,
    norms: Vec<NormState>,
    heads: Vec<DenseLayer>,
}

/// Builds a network with deterministic scaled-normal initialization: the
/// same spec (including its seed) always yields bit-identical parameters.
pub fn init_network(spec: &NetworkSpec) -> Result<Network> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let input_layer = DenseLayer::init(spec.input_dim, spec.width, Activation::Relu, &mut rng);
    let blocks: Vec<ResidualBlock> = (0..spec.blocks)
        .map(|_| ResidualBlock::init(spec.width, &mut rng))
        .collect();
    let norms = if spec.normalize {
        (0..spec.blocks).map(|_| NormState::new(spec.width)).collect()
    } else {
        Vec::new()
    };
    let heads = spec
        .head
        .head_widths()
        .iter()
        .map(|&w| DenseLayer::init(spec.width, w, Activation::Identity, &mut rng))
        .collect();
    Ok(Network {
        spec: spec.clone(),
        input_layer,
        blocks,
        norms,
        heads,
    })
}

impl Network {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn norm_states(&self) -> &[NormState] {
        &self.norms
    }

    pub fn param_count(&self) -> usize {
        self.param_refs().iter().map(|t| t.numel()).sum()
    }

    fn param_refs(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.input_layer.weight, &self.input_layer.bias];
        for b in &self.blocks {
            out.push(&b.first.weight);
            out.push(&b.first.bias);
            out.push(&b.second.weight);
            out.push(&b.second.bias);
        }
        for h in &self.heads {
            out.push(&h.weight);
            out.push(&h.bias);
        }
        out
    }

    /// Mutable references to every trainable tensor, in stable slot order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.input_layer.weight, &mut self.input_layer.bias];
        for b in &mut self.blocks {
            out.push(&mut b.first.weight);
            out.push(&mut b.first.bias);
            out.push(&mut b.second.weight);
            out.push(&mut b.second.bias);
        }
        for h in &mut self.heads {
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        out
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.param_refs()
    }

    fn head_slot_base(&self) -> usize {
        2 + 4 * self.blocks.len()
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        let s = batch.shape();
        if s.len() != 2 || s[1] != self.spec.input_dim {
            return Err(Error::Shape {
                op: "network_forward",
                lhs: s.to_vec(),
                rhs: vec![0, self.spec.input_dim],
            });
        }
        Ok(())
    }

    /// Training-mode forward: applies batch statistics and updates the
    /// running normalization state.
    pub fn forward_train(
        &mut self,
        tape: &mut Tape,
        batch: &Tensor,
        selection: HeadSelection,
    ) -> Result<ForwardPass> {
        self.check_input(batch)?;
        let Network {
            spec,
            input_layer,
            blocks,
            norms,
            heads,
        } = self;
        let mut binds = Vec::new();
        let x = tape.leaf(batch);
        let mut h = input_layer.linear(tape, x, 0, &mut binds)?;
        h = input_layer.activate(tape, h);
        for (i, block) in blocks.iter().enumerate() {
            let norm = if spec.normalize {
                Some(NormPass::Train(&mut norms[i]))
            } else {
                None
            };
            h = block.forward(tape, h, norm, 2 + 4 * i, &mut binds)?;
        }
        let base = 2 + 4 * blocks.len();
        let mut out = Vec::new();
        for (k, head) in heads.iter().enumerate() {
            let wanted = match selection {
                HeadSelection::All => true,
                HeadSelection::Only(j) => j == k,
            };
            if wanted {
                let logits = head.linear(tape, h, base + 2 * k, &mut binds)?;
                out.push((k, logits));
            }
        }
        if out.is_empty() {
            return Err(Error::Contract("head selection matched no head".into()));
        }
        Ok(ForwardPass {
            heads: out,
            bindings: binds,
        })
    }

    /// Evaluation-mode forward: immutable, uses running statistics.
    pub fn forward_eval(
        &self,
        tape: &mut Tape,
        batch: &Tensor,
        selection: HeadSelection,
    ) -> Result<ForwardPass> {
        self.check_input(batch)?;
        let mut binds = Vec::new();
        let x = tape.leaf(batch);
        let mut h = self.input_layer.linear(tape, x, 0, &mut binds)?;
        h = self.input_layer.activate(tape, h);
        for (i, block) in self.blocks.iter().enumerate() {
            let norm = if self.spec.normalize {
                Some(NormPass::Eval(&self.norms[i]))
            } else {
                None
            };
            h = block.forward(tape, h, norm, 2 + 4 * i, &mut binds)?;
        }
        let base = self.head_slot_base();
        let mut out = Vec::new();
        for (k, head) in self.heads.iter().enumerate() {
            let wanted = match selection {
                HeadSelection::All => true,
                HeadSelection::Only(j) => j == k,
            };
            if wanted {
                let logits = head.linear(tape, h, base + 2 * k, &mut binds)?;
                out.push((k, logits));
            }
        }
        if out.is_empty() {
            return Err(Error::Contract("head selection matched no head".into()));
        }
        Ok(ForwardPass {
            heads: out,
            bindings: binds,
        })
    }

    /// Pulls tape gradients back into the parameter tensors' grad slots,
    /// accumulating additively.
    pub fn accumulate_grads(&mut self, tape: &Tape, pass: &ForwardPass) -> Result<()> {
        let bindings = pass.bindings.clone();
        let mut params = self.params_mut();
        for (slot, var) in bindings {
            params[slot].accumulate_grad(tape.grad(var))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path, train_seed: Option<u64>) -> Result<()> {
        let ckpt = Checkpoint::from_network(self, train_seed);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(&ckpt)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Network, Option<u64>)> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        let seed = ckpt.train_seed;
        Ok((ckpt.into_network()?, seed))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerParams {
    weight: Vec<f64>,
    bias: Vec<f64>,
}

/// Versioned checkpoint: spec, parameters, normalization statistics and the
/// training seed. JSON floats are written in shortest round-trip form, so a
/// save → load cycle is bit-exact.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    version: u32,
    spec: NetworkSpec,
    layers: Vec<LayerParams>,
    norms: Vec<NormState>,
    train_seed: Option<u64>,
}

const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    fn from_network(net: &Network, train_seed: Option<u64>) -> Self {
        let mut layers = vec![LayerParams {
            weight: net.input_layer.weight.values().to_vec(),
            bias: net.input_layer.bias.values().to_vec(),
        }];
        for b in &net.blocks {
            for l in [&b.first, &b.second] {
                layers.push(LayerParams {
                    weight: l.weight.values().to_vec(),
                    bias: l.bias.values().to_vec(),
                });
            }
        }
        for h in &net.heads {
            layers.push(LayerParams {
                weight: h.weight.values().to_vec(),
                bias: h.bias.values().to_vec(),
            });
        }
        Self {
            version: CHECKPOINT_VERSION,
            spec: net.spec.clone(),
            layers,
            norms: net.norms.clone(),
            train_seed,
        }
    }

    fn into_network(self) -> Result<Network> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::ArtifactMismatch(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let mut net = init_network(&self.spec)?;
        let expected = 1 + 2 * net.blocks.len() + net.heads.len();
        if self.layers.len() != expected {
            return Err(Error::ArtifactMismatch(format!(
                "checkpoint has {} layers, spec implies {expected}",
                self.layers.len()
            )));
        }
        if self.norms.len() != net.norms.len() {
            return Err(Error::ArtifactMismatch(format!(
                "checkpoint has {} normalization states, spec implies {}",
                self.norms.len(),
                net.norms.len()
            )));
        }
        let mut layers = self.layers.into_iter();
        let mut assign = |l: &mut DenseLayer| -> Result<()> {
            let p = layers.next().expect("count checked");
            if p.weight.len() != l.weight.numel() || p.bias.len() != l.bias.numel() {
                return Err(Error::ArtifactMismatch(
                    "checkpoint layer sizes do not match the spec".into(),
                ));
            }
            l.weight.values_mut().copy_from_slice(&p.weight);
            l.bias.values_mut().copy_from_slice(&p.bias);
            Ok(())
        };
        assign(&mut net.input_layer)?;
        for i in 0..net.blocks.len() {
            assign(&mut net.blocks[i].first)?;
            assign(&mut net.blocks[i].second)?;
        }
        for i in 0..net.heads.len() {
            assign(&mut net.heads[i])?;
        }
        net.norms = self.norms;
        Ok(net)
    }
}
