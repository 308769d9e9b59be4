//! Prediction rules, per-class accuracy, the per-emotion AU score matrix
//! and report assembly.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::{Dataset, LabelKind, LabelUnion};
use crate::error::{Error, Result};
use crate::losses::sigmoid_probabilities;
use crate::nn::{HeadSelection, HeadStrategy, Network};
use crate::tensor::{Tape, Tensor};

/// Counts and accuracy for one class, `(TP + TN) / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassAccuracy {
    pub class_index: usize,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    pub accuracy: f64,
}

impl ClassAccuracy {
    pub fn n(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Per-class accuracy over aligned binary prediction/truth matrices
/// (`N` samples × `C` classes). Counts are integers; the accuracy is their
/// ratio, so `accuracy·N == TP + TN` holds exactly at the count level.
pub fn accuracy_per_class(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<Vec<ClassAccuracy>> {
    if pred.len() != truth.len() {
        return Err(Error::Contract(format!(
            "{} predictions vs {} truths",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Contract("empty evaluation set".into()));
    }
    let c = pred[0].len();
    if pred.iter().chain(truth.iter()).any(|r| r.len() != c) {
        return Err(Error::Contract("ragged prediction/truth rows".into()));
    }
    let n = pred.len();
    let mut out = Vec::with_capacity(c);
    for j in 0..c {
        let (mut tp, mut tn, mut fp, mut fn_) = (0usize, 0usize, 0usize, 0usize);
        for i in 0..n {
            match (pred[i][j], truth[i][j]) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
            }
        }
        out.push(ClassAccuracy {
            class_index: j,
            tp,
            tn,
            fp,
            fn_,
            accuracy: (tp + tn) as f64 / n as f64,
        });
    }
    Ok(out)
}

/// Per-class accuracy from categorical label vectors.
pub fn accuracy_from_labels(
    pred: &[usize],
    truth: &[usize],
    n_classes: usize,
) -> Result<Vec<ClassAccuracy>> {
    let onehot = |labels: &[usize]| -> Vec<Vec<bool>> {
        labels
            .iter()
            .map(|&l| (0..n_classes).map(|j| j == l).collect())
            .collect()
    };
    accuracy_per_class(&onehot(pred), &onehot(truth))
}

/// Fraction of samples whose predicted label equals the truth.
pub fn overall_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Contract(format!(
            "aligned nonempty label vectors required ({} vs {})",
            pred.len(),
            truth.len()
        )));
    }
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / pred.len() as f64)
}

pub fn mean_class_accuracy(list: &[ClassAccuracy]) -> f64 {
    list.iter().map(|c| c.accuracy).sum::<f64>() / list.len() as f64
}

/// Per-class recall (correct within class / class size); `None` for classes
/// absent from the truth.
pub fn per_class_recall(
    pred: &[usize],
    truth: &[usize],
    n_classes: usize,
) -> Result<Vec<Option<f64>>> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Contract("aligned nonempty label vectors required".into()));
    }
    let mut correct = vec![0usize; n_classes];
    let mut count = vec![0usize; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        count[t] += 1;
        if p == t {
            correct[t] += 1;
        }
    }
    Ok((0..n_classes)
        .map(|j| {
            if count[j] == 0 {
                None
            } else {
                Some(correct[j] as f64 / count[j] as f64)
            }
        })
        .collect())
}

/// Decisions for one label space of a batch.
#[derive(Debug, Clone)]
pub enum SpacePrediction {
    /// Argmax over the space's logits (ties go to the lowest index).
    Categorical { space: String, labels: Vec<usize> },
    /// Sigmoid scores and the `score ≥ 0.5` decisions.
    Multilabel {
        space: String,
        scores: Vec<Vec<f64>>,
        bits: Vec<Vec<bool>>,
    },
}

impl SpacePrediction {
    pub fn space(&self) -> &str {
        match self {
            SpacePrediction::Categorical { space, .. } => space,
            SpacePrediction::Multilabel { space, .. } => space,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Predictions {
    pub spaces: Vec<SpacePrediction>,
    pub n_samples: usize,
}

impl Predictions {
    pub fn categorical(&self, space: &str) -> Option<&[usize]> {
        self.spaces.iter().find_map(|s| match s {
            SpacePrediction::Categorical { space: n, labels } if n == space => {
                Some(labels.as_slice())
            }
            _ => None,
        })
    }

    pub fn multilabel_scores(&self, space: &str) -> Option<&[Vec<f64>]> {
        self.spaces.iter().find_map(|s| match s {
            SpacePrediction::Multilabel { space: n, scores, .. } if n == space => {
                Some(scores.as_slice())
            }
            _ => None,
        })
    }

    pub fn multilabel_bits(&self, space: &str) -> Option<&[Vec<bool>]> {
        self.spaces.iter().find_map(|s| match s {
            SpacePrediction::Multilabel { space: n, bits, .. } if n == space => {
                Some(bits.as_slice())
            }
            _ => None,
        })
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn space_prediction(space_name: &str, kind: LabelKind, logits: &[f64], b: usize, c: usize) -> SpacePrediction {
    match kind {
        LabelKind::CategoricalExclusive => SpacePrediction::Categorical {
            space: space_name.to_string(),
            labels: (0..b).map(|i| argmax(&logits[i * c..(i + 1) * c])).collect(),
        },
        LabelKind::MultilabelBinary => {
            let probs = sigmoid_probabilities(
                &Tensor::matrix(b, c, logits.to_vec()).expect("consistent dims"),
            );
            let scores: Vec<Vec<f64>> = (0..b)
                .map(|i| probs.values()[i * c..(i + 1) * c].to_vec())
                .collect();
            let bits = scores
                .iter()
                .map(|row| row.iter().map(|&s| s >= 0.5).collect())
                .collect();
            SpacePrediction::Multilabel {
                space: space_name.to_string(),
                scores,
                bits,
            }
        }
    }
}

/// Evaluation-mode predictions for every label space the network covers.
pub fn predict(net: &Network, features: &Tensor) -> Result<Predictions> {
    let b = features.shape()[0];
    let mut tape = Tape::new();
    let pass = net.forward_eval(&mut tape, features, HeadSelection::All)?;
    let mut spaces = Vec::new();
    match &net.spec().head {
        HeadStrategy::SingleTask { space } => {
            let logits = tape.value(pass.single());
            spaces.push(space_prediction(&space.name, space.kind, logits, b, space.len()));
        }
        HeadStrategy::MultiHead { spaces: head_spaces } => {
            for (k, space) in head_spaces.iter().enumerate() {
                let var = pass
                    .head(k)
                    .ok_or_else(|| Error::Contract(format!("head {k} missing")))?;
                let logits = tape.value(var);
                spaces.push(space_prediction(&space.name, space.kind, logits, b, space.len()));
            }
        }
        HeadStrategy::SharedSelective { union } => {
            let logits = tape.value(pass.single());
            let total = union.total_classes();
            for (k, space) in union.spaces().iter().enumerate() {
                let range = union.range(k);
                let mut local = Vec::with_capacity(b * space.len());
                for i in 0..b {
                    local.extend_from_slice(&logits[i * total..][range.clone()]);
                }
                spaces.push(space_prediction(&space.name, space.kind, &local, b, space.len()));
            }
        }
    }
    Ok(Predictions {
        spaces,
        n_samples: b,
    })
}

pub fn dataset_features(ds: &Dataset) -> Tensor {
    let mut vals = Vec::with_capacity(ds.len() * ds.feature_dim);
    for s in &ds.samples {
        vals.extend_from_slice(&s.features);
    }
    Tensor::matrix(ds.len(), ds.feature_dim, vals).expect("consistent dims")
}

/// True class indices of a categorical dataset, from its union targets.
pub fn categorical_truth(ds: &Dataset, union: &LabelUnion) -> Result<Vec<usize>> {
    let range = union.range(ds.space_index);
    ds.samples
        .iter()
        .map(|s| {
            s.target.targets()[range.clone()]
                .iter()
                .position(|&v| v == 1.0)
                .ok_or_else(|| Error::Data(format!("sample '{}' has no active class", s.id)))
        })
        .collect()
}

/// True bit rows of a multilabel dataset, from its union targets.
pub fn multilabel_truth(ds: &Dataset, union: &LabelUnion) -> Vec<Vec<bool>> {
    let range = union.range(ds.space_index);
    ds.samples
        .iter()
        .map(|s| {
            s.target.targets()[range.clone()]
                .iter()
                .map(|&v| v == 1.0)
                .collect()
        })
        .collect()
}

/// Headline metrics of a network on one dataset's own task.
pub fn dataset_metrics(
    net: &Network,
    ds: &Dataset,
    union: &LabelUnion,
) -> Result<Vec<(String, f64)>> {
    let space = &union.spaces()[ds.space_index];
    let preds = predict(net, &dataset_features(ds))?;
    let mut out = Vec::new();
    match space.kind {
        LabelKind::CategoricalExclusive => {
            let pred = preds
                .categorical(&space.name)
                .ok_or_else(|| Error::Contract(format!("no categorical head for '{}'", space.name)))?;
            let truth = categorical_truth(ds, union)?;
            out.push((
                format!("{}_accuracy", space.name),
                overall_accuracy(pred, &truth)?,
            ));
            let per_class = accuracy_from_labels(pred, &truth, space.len())?;
            out.push((
                format!("{}_mean_class_accuracy", space.name),
                mean_class_accuracy(&per_class),
            ));
        }
        LabelKind::MultilabelBinary => {
            let bits = preds
                .multilabel_bits(&space.name)
                .ok_or_else(|| Error::Contract(format!("no multilabel head for '{}'", space.name)))?;
            let truth = multilabel_truth(ds, union);
            let per_class = accuracy_per_class(bits, &truth)?;
            out.push((
                format!("{}_mean_class_accuracy", space.name),
                mean_class_accuracy(&per_class),
            ));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    /// Group rows by the model's own emotion prediction (default).
    Predicted,
    /// Group rows by the supplied ground-truth labels instead.
    GroundTruth,
}

/// Mean sigmoid AU scores grouped by emotion category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuScoreMatrix {
    pub emotions: Vec<String>,
    pub au_classes: Vec<String>,
    /// `means[row][col]`; rows with `row_counts == 0` hold zeros.
    pub means: Vec<Vec<f64>>,
    pub row_counts: Vec<usize>,
}

impl AuScoreMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("emotion,count");
        for au in &self.au_classes {
            let _ = write!(out, ",{au}");
        }
        out.push('\n');
        for (i, e) in self.emotions.iter().enumerate() {
            let _ = write!(out, "{e},{}", self.row_counts[i]);
            for v in &self.means[i] {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Rows as density glyphs, one glyph per cell, plus row counts.
    pub fn to_ascii_heatmap(&self) -> String {
        const RAMP: &[u8] = b" .:-=+*#%@";
        let name_w = self
            .emotions
            .iter()
            .map(|e| e.len())
            .max()
            .unwrap_or(0)
            .max("emotion".len());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:name_w$}  {}  count",
            "emotion",
            self.au_classes.join(" ")
        );
        for (i, e) in self.emotions.iter().enumerate() {
            let _ = write!(out, "{e:name_w$}  ");
            for (j, v) in self.means[i].iter().enumerate() {
                let glyph = if self.row_counts[i] == 0 {
                    '?'
                } else {
                    let idx = (v.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64).round() as usize;
                    RAMP[idx] as char
                };
                let w = self.au_classes[j].len();
                let _ = write!(out, "{glyph:^w$} ");
            }
            let _ = writeln!(out, " {}", self.row_counts[i]);
        }
        out
    }
}

/// Groups test samples by emotion category and averages the sigmoid AU
/// scores within each group. Grouping uses the model's predicted emotion by
/// default; `GroupBy::GroundTruth` requires `truth_emotions`.
pub fn au_mean_score_matrix(
    net: &Network,
    features: &Tensor,
    emotion_space: &LabelUnion,
    group_by: GroupBy,
    truth_emotions: Option<&[usize]>,
) -> Result<AuScoreMatrix> {
    let b = features.shape()[0];
    if b == 0 {
        return Err(Error::Contract("empty test set".into()));
    }
    let emo_idx = emotion_space
        .spaces()
        .iter()
        .position(|s| s.kind == LabelKind::CategoricalExclusive)
        .ok_or_else(|| Error::Contract("union has no categorical emotion space".into()))?;
    let au_idx = emotion_space
        .spaces()
        .iter()
        .position(|s| s.kind == LabelKind::MultilabelBinary)
        .ok_or_else(|| Error::Contract("union has no multilabel AU space".into()))?;
    let emo_space = &emotion_space.spaces()[emo_idx];
    let au_space = &emotion_space.spaces()[au_idx];

    let preds = predict(net, features)?;
    let groups: Vec<usize> = match group_by {
        GroupBy::Predicted => preds
            .categorical(&emo_space.name)
            .ok_or_else(|| Error::Contract("network does not predict the emotion space".into()))?
            .to_vec(),
        GroupBy::GroundTruth => truth_emotions
            .ok_or_else(|| {
                Error::Contract("ground-truth grouping requires truth_emotions".into())
            })?
            .to_vec(),
    };
    if groups.len() != b {
        return Err(Error::Contract(format!(
            "{} grouping labels for {b} samples",
            groups.len()
        )));
    }
    let scores = preds
        .multilabel_scores(&au_space.name)
        .ok_or_else(|| Error::Contract("network does not score the AU space".into()))?;

    let rows = emo_space.len();
    let cols = au_space.len();
    let mut sums = vec![vec![0.0; cols]; rows];
    let mut counts = vec![0usize; rows];
    for (i, &g) in groups.iter().enumerate() {
        if g >= rows {
            return Err(Error::Contract(format!("group label {g} out of range")));
        }
        counts[g] += 1;
        for (j, &s) in scores[i].iter().enumerate() {
            sums[g][j] += s;
        }
    }
    let means = sums
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            if counts[i] == 0 {
                vec![0.0; cols]
            } else {
                row.into_iter().map(|s| s / counts[i] as f64).collect()
            }
        })
        .collect();
    Ok(AuScoreMatrix {
        emotions: emo_space.classes.clone(),
        au_classes: au_space.classes.clone(),
        means,
        row_counts: counts,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmotionCoherence {
    pub emotion: String,
    pub k: usize,
    /// `None` when the generating set is empty (nothing to rank against).
    pub precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceReport {
    pub per_emotion: Vec<EmotionCoherence>,
    /// Mean over emotions with a defined precision.
    pub macro_precision: f64,
}

/// Top-`k` precision of each emotion row's AU scores against the generating
/// emotion → AU map. `k` defaults to the size of each emotion's generating
/// set; ties rank the lowest AU index first.
pub fn coherence_score(
    matrix: &AuScoreMatrix,
    truth_map: &BTreeMap<String, Vec<String>>,
    k: Option<usize>,
) -> Result<CoherenceReport> {
    if let Some(k) = k {
        if k == 0 || k > matrix.au_classes.len() {
            return Err(Error::Contract(format!(
                "k = {k} outside 1..={}",
                matrix.au_classes.len()
            )));
        }
    }
    let mut per_emotion = Vec::new();
    let mut defined = Vec::new();
    for (i, emotion) in matrix.emotions.iter().enumerate() {
        let generating = truth_map.get(emotion).ok_or_else(|| {
            Error::Contract(format!("truth map has no entry for emotion '{emotion}'"))
        })?;
        let want: Vec<usize> = generating
            .iter()
            .map(|name| {
                matrix
                    .au_classes
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Error::Contract(format!("unknown AU class '{name}'")))
            })
            .collect::<Result<_>>()?;
        let k_e = k.unwrap_or(want.len());
        if k_e == 0 {
            per_emotion.push(EmotionCoherence {
                emotion: emotion.clone(),
                k: 0,
                precision: None,
            });
            continue;
        }
        if k_e > matrix.au_classes.len() {
            return Err(Error::Contract(format!(
                "k = {k_e} for '{emotion}' exceeds the {} AU classes",
                matrix.au_classes.len()
            )));
        }
        let mut order: Vec<usize> = (0..matrix.au_classes.len()).collect();
        order.sort_by(|&a, &b| {
            matrix.means[i][b]
                .partial_cmp(&matrix.means[i][a])
                .expect("scores are finite")
                .then(a.cmp(&b))
        });
        let hits = order[..k_e].iter().filter(|j| want.contains(j)).count();
        let precision = hits as f64 / k_e as f64;
        defined.push(precision);
        per_emotion.push(EmotionCoherence {
            emotion: emotion.clone(),
            k: k_e,
            precision: Some(precision),
        });
    }
    let macro_precision = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Ok(CoherenceReport {
        per_emotion,
        macro_precision,
    })
}

/// Metrics of one run on one task, for report assembly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: String,
    /// Overall argmax accuracy; categorical tasks only.
    pub overall_accuracy: Option<f64>,
    /// Mean of the per-class `(TP+TN)/N` accuracies.
    pub mean_class_accuracy: f64,
    pub per_class: Vec<(String, f64)>,
    /// `(class, recall, class count)`; categorical tasks only.
    pub per_class_recall: Option<Vec<(String, f64, usize)>>,
}

/// Everything one strategy produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyMetrics {
    pub strategy: String,
    pub tasks: Vec<TaskMetrics>,
    pub coherence_macro: Option<f64>,
}

/// Full evaluation of one network on one dataset's task.
pub fn task_metrics(net: &Network, ds: &Dataset, union: &LabelUnion) -> Result<TaskMetrics> {
    let space = &union.spaces()[ds.space_index];
    let preds = predict(net, &dataset_features(ds))?;
    match space.kind {
        LabelKind::CategoricalExclusive => {
            let pred = preds
                .categorical(&space.name)
                .ok_or_else(|| Error::Contract(format!("no categorical head for '{}'", space.name)))?;
            let truth = categorical_truth(ds, union)?;
            let per_class = accuracy_from_labels(pred, &truth, space.len())?;
            let recalls = per_class_recall(pred, &truth, space.len())?;
            let mut counts = vec![0usize; space.len()];
            for &t in &truth {
                counts[t] += 1;
            }
            Ok(TaskMetrics {
                task: space.name.clone(),
                overall_accuracy: Some(overall_accuracy(pred, &truth)?),
                mean_class_accuracy: mean_class_accuracy(&per_class),
                per_class: space
                    .classes
                    .iter()
                    .zip(&per_class)
                    .map(|(c, a)| (c.clone(), a.accuracy))
                    .collect(),
                per_class_recall: Some(
                    space
                        .classes
                        .iter()
                        .enumerate()
                        .map(|(j, c)| (c.clone(), recalls[j].unwrap_or(0.0), counts[j]))
                        .collect(),
                ),
            })
        }
        LabelKind::MultilabelBinary => {
            let bits = preds
                .multilabel_bits(&space.name)
                .ok_or_else(|| Error::Contract(format!("no multilabel head for '{}'", space.name)))?;
            let truth = multilabel_truth(ds, union);
            let per_class = accuracy_per_class(bits, &truth)?;
            Ok(TaskMetrics {
                task: space.name.clone(),
                overall_accuracy: None,
                mean_class_accuracy: mean_class_accuracy(&per_class),
                per_class: space
                    .classes
                    .iter()
                    .zip(&per_class)
                    .map(|(c, a)| (c.clone(), a.accuracy))
                    .collect(),
                per_class_recall: None,
            })
        }
    }
}

/// Strategy-comparison report plus the optional emotion × AU matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub runs: Vec<StrategyMetrics>,
    pub matrix: Option<AuScoreMatrix>,
}

/// Assembles the comparison across runs.
pub fn build_report(runs: Vec<StrategyMetrics>, matrix: Option<AuScoreMatrix>) -> Result<ExperimentReport> {
    if runs.is_empty() {
        return Err(Error::Contract("report needs at least one run".into()));
    }
    Ok(ExperimentReport { runs, matrix })
}

impl ExperimentReport {
    /// Long format: `run,task,class,metric,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("run,task,class,metric,value\n");
        for run in &self.runs {
            for t in &run.tasks {
                if let Some(acc) = t.overall_accuracy {
                    let _ = writeln!(out, "{},{},,overall_accuracy,{acc}", run.strategy, t.task);
                }
                let _ = writeln!(
                    out,
                    "{},{},,mean_class_accuracy,{}",
                    run.strategy, t.task, t.mean_class_accuracy
                );
                for (class, acc) in &t.per_class {
                    let _ = writeln!(
                        out,
                        "{},{},{class},class_accuracy,{acc}",
                        run.strategy, t.task
                    );
                }
                if let Some(recalls) = &t.per_class_recall {
                    for (class, r, _count) in recalls {
                        let _ = writeln!(
                            out,
                            "{},{},{class},class_recall,{r}",
                            run.strategy, t.task
                        );
                    }
                }
            }
            if let Some(c) = run.coherence_macro {
                let _ = writeln!(out, "{},,,coherence_macro_precision,{c}", run.strategy);
            }
        }
        out
    }

    /// One comparison column per run; one row per (task, metric).
    pub fn comparison_table(&self) -> String {
        let mut rows: Vec<(String, Vec<Option<f64>>)> = Vec::new();
        let n_runs = self.runs.len();
        fn set_cell(
            rows: &mut Vec<(String, Vec<Option<f64>>)>,
            n_runs: usize,
            name: String,
            ri: usize,
            value: f64,
        ) {
            let i = match rows.iter().position(|(n, _)| n == &name) {
                Some(i) => i,
                None => {
                    rows.push((name, vec![None; n_runs]));
                    rows.len() - 1
                }
            };
            rows[i].1[ri] = Some(value);
        }
        for (ri, run) in self.runs.iter().enumerate() {
            for t in &run.tasks {
                if let Some(acc) = t.overall_accuracy {
                    set_cell(&mut rows, n_runs, format!("{} accuracy", t.task), ri, acc);
                }
                set_cell(
                    &mut rows,
                    n_runs,
                    format!("{} mean-class accuracy", t.task),
                    ri,
                    t.mean_class_accuracy,
                );
            }
            if let Some(c) = run.coherence_macro {
                set_cell(
                    &mut rows,
                    n_runs,
                    "AU coherence (macro precision)".to_string(),
                    ri,
                    c,
                );
            }
        }

        let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(6).max(6);
        let col_w = self
            .runs
            .iter()
            .map(|r| r.strategy.len())
            .max()
            .unwrap_or(8)
            .max(8);
        let mut out = String::new();
        let _ = write!(out, "{:name_w$}", "metric");
        for run in &self.runs {
            let _ = write!(out, "  {:>col_w$}", run.strategy);
        }
        out.push('\n');
        let _ = writeln!(out, "{}", "-".repeat(name_w + (col_w + 2) * self.runs.len()));
        for (name, vals) in &rows {
            let _ = write!(out, "{name:name_w$}");
            for v in vals {
                match v {
                    Some(v) => {
                        let _ = write!(out, "  {:>col_w$.4}", v);
                    }
                    None => {
                        let _ = write!(out, "  {:>col_w$}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    /// Aligned tables plus the AU heatmap.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("strategy comparison\n");
        out.push_str(&self.comparison_table());
        for run in &self.runs {
            for t in &run.tasks {
                if let Some(recalls) = &t.per_class_recall {
                    let _ = writeln!(out, "\nper-class results: {} / {}", run.strategy, t.task);
                    let name_w = recalls
                        .iter()
                        .map(|(c, _, _)| c.len())
                        .max()
                        .unwrap_or(5)
                        .max("class".len());
                    let _ = writeln!(out, "{:name_w$}  {:>6}  {:>8}", "class", "count", "recall");
                    let mut weighted = 0.0;
                    let mut total = 0usize;
                    for (class, r, count) in recalls {
                        let _ = writeln!(out, "{class:name_w$}  {count:>6}  {r:>8.4}");
                        weighted += r * *count as f64;
                        total += count;
                    }
                    let mean = recalls.iter().map(|(_, r, _)| r).sum::<f64>() / recalls.len() as f64;
                    let _ = writeln!(out, "{:name_w$}  {:>6}  {:>8.4}", "mean_classes", "-", mean);
                    let _ = writeln!(
                        out,
                        "{:name_w$}  {total:>6}  {:>8.4}",
                        "all_samples",
                        weighted / total as f64
                    );
                }
            }
        }
        if let Some(m) = &self.matrix {
            out.push_str("\nmean AU scores by predicted emotion\n");
            out.push_str(&m.to_ascii_heatmap());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index_on_ties_and_ignores_shifts() {
        assert_eq!(argmax(&[0.1, 3.0, -1.0, 0.0, 0.0, 0.0, 0.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0, 1.0]), 0);
        let row = [0.4, 1.3, -0.7];
        let shifted: Vec<f64> = row.iter().map(|v| v + 100.0).collect();
        assert_eq!(argmax(&row), argmax(&shifted));
    }

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let truth = vec![vec![true, false], vec![false, true], vec![true, true]];
        let accs = accuracy_per_class(&truth, &truth).unwrap();
        for a in accs {
            assert_eq!(a.accuracy, 1.0);
            assert_eq!(a.fp + a.fn_, 0);
        }
    }

    #[test]
    fn counts_follow_the_definition() {
        // N=10, one class with TP=2, TN=6 → accuracy 0.8.
        let pred: Vec<Vec<bool>> = [true, true, true, false, false, false, false, false, false, false]
            .iter()
            .map(|&p| vec![p])
            .collect();
        let truth: Vec<Vec<bool>> = [true, true, false, true, false, false, false, false, false, false]
            .iter()
            .map(|&t| vec![t])
            .collect();
        let a = &accuracy_per_class(&pred, &truth).unwrap()[0];
        assert_eq!((a.tp, a.tn, a.fp, a.fn_), (2, 6, 1, 1));
        assert_eq!(a.accuracy, 0.8);
        assert_eq!(a.n(), 10);
        // Integer identity behind accuracy·N == TP + TN.
        assert_eq!(a.tp + a.tn, 8);
    }

    #[test]
    fn mismatched_lengths_are_a_contract_error() {
        let err = accuracy_per_class(&[vec![true]], &[]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn recall_and_overall_accuracy() {
        let pred = [0, 0, 1, 2, 1];
        let truth = [0, 1, 1, 2, 2];
        assert_eq!(overall_accuracy(&pred, &truth).unwrap(), 0.6);
        let recalls = per_class_recall(&pred, &truth, 4).unwrap();
        assert_eq!(recalls[0], Some(1.0));
        assert_eq!(recalls[1], Some(0.5));
        assert_eq!(recalls[2], Some(0.5));
        assert_eq!(recalls[3], None);
    }

    #[test]
    fn coherence_on_a_perfect_matrix_is_one() {
        let matrix = AuScoreMatrix {
            emotions: vec!["Happy".into(), "Sad".into()],
            au_classes: vec!["AU6".into(), "AU12".into(), "AU17".into()],
            means: vec![vec![0.9, 0.8, 0.1], vec![0.2, 0.7, 0.9]],
            row_counts: vec![10, 5],
        };
        let mut map = BTreeMap::new();
        map.insert("Happy".to_string(), vec!["AU6".to_string(), "AU12".to_string()]);
        map.insert("Sad".to_string(), vec!["AU12".to_string(), "AU17".to_string()]);
        let report = coherence_score(&matrix, &map, None).unwrap();
        assert_eq!(report.macro_precision, 1.0);
    }

    #[test]
    fn coherence_tie_breaking_is_lowest_index_first() {
        // All scores equal: top-k is simply the first k AU columns.
        let matrix = AuScoreMatrix {
            emotions: vec!["E".into()],
            au_classes: (0..5).map(|i| format!("AU{i}")).collect(),
            means: vec![vec![0.5; 5]],
            row_counts: vec![3],
        };
        let mut map = BTreeMap::new();
        map.insert("E".to_string(), vec!["AU0".to_string(), "AU3".to_string()]);
        let report = coherence_score(&matrix, &map, None).unwrap();
        // k = 2, picked {AU0, AU1}, intersection {AU0} → 1/2.
        assert_eq!(report.per_emotion[0].precision, Some(0.5));
    }

    #[test]
    fn coherence_skips_empty_generating_sets() {
        let matrix = AuScoreMatrix {
            emotions: vec!["Neutral".into(), "Happy".into()],
            au_classes: vec!["AU6".into(), "AU12".into()],
            means: vec![vec![0.5, 0.5], vec![0.9, 0.8]],
            row_counts: vec![1, 1],
        };
        let mut map = BTreeMap::new();
        map.insert("Neutral".to_string(), vec![]);
        map.insert("Happy".to_string(), vec!["AU6".to_string(), "AU12".to_string()]);
        let report = coherence_score(&matrix, &map, None).unwrap();
        assert_eq!(report.per_emotion[0].precision, None);
        assert_eq!(report.macro_precision, 1.0);
    }

    #[test]
    fn coherence_rejects_oversized_k() {
        let matrix = AuScoreMatrix {
            emotions: vec!["E".into()],
            au_classes: vec!["AU1".into()],
            means: vec![vec![0.5]],
            row_counts: vec![1],
        };
        let mut map = BTreeMap::new();
        map.insert("E".to_string(), vec!["AU1".to_string()]);
        assert!(coherence_score(&matrix, &map, Some(2)).is_err());
    }

    #[test]
    fn report_rows_include_table4_style_summary_rows() {
        let metrics = StrategyMetrics {
            strategy: "single_task".into(),
            tasks: vec![TaskMetrics {
                task: "compound".into(),
                overall_accuracy: Some(0.5),
                mean_class_accuracy: 0.8,
                per_class: vec![("a".into(), 0.9), ("b".into(), 0.7)],
                per_class_recall: Some(vec![
                    ("a".into(), 1.0, 3),
                    ("b".into(), 0.0, 1),
                ]),
            }],
            coherence_macro: None,
        };
        let report = build_report(vec![metrics], None).unwrap();
        let text = report.to_text();
        // mean of class recalls: (1.0 + 0.0)/2
        assert!(text.contains("mean_classes"), "{text}");
        assert!(text.contains("0.5000"), "{text}");
        // all-samples row: 3/4 weighted
        assert!(text.contains("0.7500"), "{text}");
        let csv = report.to_csv();
        assert!(csv.contains("single_task,compound,a,class_recall,1"));
    }
}
