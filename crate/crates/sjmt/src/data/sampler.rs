//! Batch construction over one or more union-bound datasets.
//!
//! `Mixed` draws uniformly from the concatenation of all datasets, each
//! sample carrying its own mask — the joint-training regime. `Alternating`
//! feeds whole batches from one dataset at a time, cycling — the classical
//! multi-task regime. Both sample without replacement within an epoch and
//! reshuffle each epoch with the sampler's seeded generator.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::MaskedTarget;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    Mixed,
    /// Batch `t` comes wholly from dataset `(t / period) mod K`.
    Alternating { period: usize },
}

/// One training batch: row-major features plus per-sample masked targets.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Tensor,
    pub targets: Vec<MaskedTarget>,
    /// Source dataset index (into the sampler's dataset list) per sample.
    pub dataset_indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Distinct source datasets present, ascending.
    pub fn sources(&self) -> Vec<usize> {
        let mut s = self.dataset_indices.clone();
        s.sort_unstable();
        s.dedup();
        s
    }
}

#[derive(Debug)]
pub struct BatchSampler<'a> {
    datasets: Vec<&'a Dataset>,
    mode: SamplingMode,
    batch_size: usize,
    rng: ChaCha20Rng,
    // (dataset, sample) queue for mixed mode
    mixed_queue: Vec<(usize, usize)>,
    mixed_pos: usize,
    // per-dataset queues for alternating mode
    per_dataset: Vec<Vec<usize>>,
    per_dataset_pos: Vec<usize>,
    step: usize,
}

impl<'a> BatchSampler<'a> {
    pub fn new(
        datasets: Vec<&'a Dataset>,
        mode: SamplingMode,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if datasets.is_empty() {
            return Err(Error::Data("sampler needs at least one dataset".into()));
        }
        for d in &datasets {
            if d.is_empty() {
                return Err(Error::Data(format!("dataset '{}' is empty", d.name)));
            }
        }
        if let SamplingMode::Alternating { period } = mode {
            if period == 0 {
                return Err(Error::Config("alternating period must be at least 1".into()));
            }
        }
        let per_dataset = datasets.iter().map(|d| (0..d.len()).collect()).collect();
        let per_dataset_pos = vec![usize::MAX; datasets.len()];
        Ok(Self {
            datasets,
            mode,
            batch_size,
            rng: ChaCha20Rng::seed_from_u64(seed),
            mixed_queue: Vec::new(),
            mixed_pos: usize::MAX,
            per_dataset,
            per_dataset_pos,
            step: 0,
        })
    }

    fn draw_mixed(&mut self) -> (usize, usize) {
        if self.mixed_pos >= self.mixed_queue.len() {
            if self.mixed_queue.is_empty() {
                for (di, d) in self.datasets.iter().enumerate() {
                    self.mixed_queue.extend((0..d.len()).map(|si| (di, si)));
                }
            }
            self.mixed_queue.shuffle(&mut self.rng);
            self.mixed_pos = 0;
        }
        let pick = self.mixed_queue[self.mixed_pos];
        self.mixed_pos += 1;
        pick
    }

    fn draw_from(&mut self, di: usize) -> usize {
        if self.per_dataset_pos[di] >= self.per_dataset[di].len() {
            self.per_dataset[di].shuffle(&mut self.rng);
            self.per_dataset_pos[di] = 0;
        }
        let si = self.per_dataset[di][self.per_dataset_pos[di]];
        self.per_dataset_pos[di] += 1;
        si
    }

    /// Emits the next batch. Batches may straddle epoch boundaries; the
    /// epoch reshuffle happens whenever a queue runs dry.
    pub fn next_batch(&mut self) -> Batch {
        let picks: Vec<(usize, usize)> = match self.mode {
            SamplingMode::Mixed => (0..self.batch_size).map(|_| self.draw_mixed()).collect(),
            SamplingMode::Alternating { period } => {
                let di = (self.step / period) % self.datasets.len();
                (0..self.batch_size)
                    .map(|_| (di, self.draw_from(di)))
                    .collect()
            }
        };
        self.step += 1;

        let dim = self.datasets[picks[0].0].feature_dim;
        let mut features = Vec::with_capacity(picks.len() * dim);
        let mut targets = Vec::with_capacity(picks.len());
        let mut dataset_indices = Vec::with_capacity(picks.len());
        for &(di, si) in &picks {
            let s = &self.datasets[di].samples[si];
            features.extend_from_slice(&s.features);
            targets.push(s.target.clone());
            dataset_indices.push(di);
        }
        Batch {
            features: Tensor::matrix(picks.len(), dim, features).expect("consistent dims"),
            targets,
            dataset_indices,
        }
    }
}
