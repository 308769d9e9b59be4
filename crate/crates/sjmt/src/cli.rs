//! Command-line entry points: `generate`, `train`, `eval`, `report` and
//! `gradcheck`, all driven by one experiment config file. Every command is
//! deterministic given the config and seed; the only timestamp lives in the
//! training summary's `timestamp_unix` field.

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::config::{ExperimentConfig, GroupByConfig};
use crate::data::io as data_io;
use crate::data::synthetic::{generate_compound, generate_synthetic};
use crate::data::{Dataset, LabelKind, LabelUnion, RawDataset};
use crate::error::{Error, Result};
use crate::eval::{self, AuScoreMatrix, GroupBy, StrategyMetrics};
use crate::nn::Network;
use crate::train::{self, Strategy};
use crate::verify::{self, SuiteSize};

pub const OUT_DIR_ENV: &str = "SJMT_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "sjmt",
    version,
    about = "Joint training over datasets with heterogeneous label spaces"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args)]
pub struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Override the config's global seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the output directory (env: SJMT_OUT_DIR).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate the synthetic datasets and the ground-truth sidecar.
    Generate(ConfigArgs),
    /// Train strategies under identical budgets, writing checkpoints,
    /// training logs and summaries.
    Train {
        #[command(flatten)]
        args: ConfigArgs,
        /// single_task | classical_mt | sjmt | all
        #[arg(long, default_value = "all")]
        strategy: String,
    },
    /// Evaluate trained checkpoints on the held-out splits.
    Eval(ConfigArgs),
    /// Assemble the strategy-comparison report from evaluation outputs.
    Report(ConfigArgs),
    /// Run the finite-difference verification suite.
    Gradcheck {
        /// small | full
        #[arg(long, default_value = "small")]
        size: String,
    },
}

/// Exit codes: 0 success, 2 config, 3 divergence, 4 artifact mismatch,
/// 5 verification failure. Stable for scripting.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Parse { .. } | Error::Validation(_) => 2,
        Error::Divergence { .. } => 3,
        Error::ArtifactMismatch(_) => 4,
        _ => 1,
    }
}

fn resolve_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
        cfg.out_dir = PathBuf::from(dir);
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.synthetic.seed = seed;
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> i32 {
    let outcome = (|| -> Result<i32> {
        match cli.command {
            Command::Generate(args) => {
                let cfg = resolve_config(&args)?;
                cmd_generate(&cfg)?;
                Ok(0)
            }
            Command::Train { args, strategy } => {
                let cfg = resolve_config(&args)?;
                let strategies = parse_strategies(&strategy)?;
                cmd_train(&cfg, &strategies)?;
                Ok(0)
            }
            Command::Eval(args) => {
                let cfg = resolve_config(&args)?;
                cmd_eval(&cfg)?;
                Ok(0)
            }
            Command::Report(args) => {
                let cfg = resolve_config(&args)?;
                let table = cmd_report(&cfg)?;
                println!("{table}");
                Ok(0)
            }
            Command::Gradcheck { size } => {
                let size: SuiteSize = size.parse()?;
                let report = cmd_gradcheck(size)?;
                for e in &report.entries {
                    println!(
                        "{} {:<32} max_rel_err = {:.3e}",
                        if e.passed { "PASS" } else { "FAIL" },
                        e.name,
                        e.max_rel_error
                    );
                }
                if report.passed() {
                    println!(
                        "gradcheck: all {} checks passed (max rel err {:.3e})",
                        report.entries.len(),
                        report.max_rel_error()
                    );
                    Ok(0)
                } else {
                    eprintln!("gradcheck: failing checks: {}", report.failing().join(", "));
                    Ok(5)
                }
            }
        }
    })();
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn parse_strategies(s: &str) -> Result<Vec<Strategy>> {
    if s == "all" {
        Ok(vec![Strategy::SingleTask, Strategy::ClassicalMt, Strategy::Sjmt])
    } else {
        Ok(vec![s.parse()?])
    }
}

/// Generates and writes all configured datasets; prints the file inventory.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let dir = cfg.data_dir();
    let family = generate_synthetic(&cfg.synthetic)?;
    let mut written = Vec::new();
    let mut ground_truth = family.ground_truth;

    for ds in [&family.emotion, &family.aus] {
        let manifest = data_io::save_dataset(&dir, ds)?;
        println!("wrote {} ({} samples)", manifest.display(), ds.len());
        written.push(manifest.clone());
        written.push(dir.join(format!("{}.csv", ds.name)));
    }
    if cfg.synthetic.compound.is_some() {
        let (compound, gt) = generate_compound(&cfg.synthetic)?;
        let manifest = data_io::save_dataset(&dir, &compound)?;
        println!("wrote {} ({} samples)", manifest.display(), compound.len());
        written.push(manifest.clone());
        written.push(dir.join(format!("{}.csv", compound.name)));
        ground_truth.extend(gt);
    }
    let gt_path = dir.join("ground_truth.csv");
    data_io::save_ground_truth(&gt_path, &ground_truth, &cfg.synthetic.au_ids)?;
    println!("wrote {} ({} records)", gt_path.display(), ground_truth.len());
    written.push(gt_path);
    Ok(written)
}

struct TaskData {
    union: LabelUnion,
    train: Vec<Dataset>,
    test: Vec<Dataset>,
}

fn load_raw(cfg: &ExperimentConfig, name: &str) -> Result<RawDataset> {
    let manifest = cfg.data_dir().join(format!("{name}.manifest.json"));
    if !manifest.exists() {
        return Err(Error::Data(format!(
            "dataset manifest {} not found; run `generate` first",
            manifest.display()
        )));
    }
    data_io::load_dataset(&manifest)
}

fn split_raw(cfg: &ExperimentConfig, raw: &RawDataset) -> Result<(RawDataset, RawDataset)> {
    if raw.name == "compound" {
        let per_class = cfg
            .synthetic
            .compound
            .as_ref()
            .map(|c| c.train_per_class)
            .ok_or_else(|| Error::Config("compound dataset without compound config".into()))?;
        raw.split_balanced(per_class)
    } else {
        raw.split_head(cfg.synthetic.samples_per_dataset.min(raw.len()))
    }
}

fn task_data(cfg: &ExperimentConfig, strategy: Strategy) -> Result<TaskData> {
    let names: Vec<String> = match strategy {
        Strategy::SingleTask => vec![cfg.train.single_task_dataset.clone()],
        _ => cfg.train.datasets.clone(),
    };
    let mut spaces = Vec::new();
    let mut splits = Vec::new();
    for name in &names {
        let raw = load_raw(cfg, name)?;
        spaces.push(raw.space.clone());
        splits.push(split_raw(cfg, &raw)?);
    }
    let union = LabelUnion::new(spaces)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (tr, te) in &splits {
        train.push(union.bind(tr)?);
        if !te.is_empty() {
            test.push(union.bind(te)?);
        }
    }
    Ok(TaskData { union, train, test })
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    strategy: String,
    seed: u64,
    /// The one timestamp metadata field; everything else is reproducible
    /// byte for byte.
    timestamp_unix: u64,
    final_train_loss: f64,
    metrics: BTreeMap<String, f64>,
    config: &'a ExperimentConfig,
}

/// Trains the requested strategies under identical budgets; writes a
/// checkpoint, a training-log CSV and a summary JSON per strategy.
pub fn cmd_train(cfg: &ExperimentConfig, strategies: &[Strategy]) -> Result<()> {
    let runs = cfg.runs_dir();
    std::fs::create_dir_all(&runs)?;
    for &strategy in strategies {
        let data = task_data(cfg, strategy)?;
        let net_spec = train::spec_for_strategy(
            strategy,
            &data.union,
            cfg.synthetic.projection_dim,
            cfg.network.width,
            cfg.network.blocks,
            cfg.network.normalize,
            cfg.seed,
        )?;
        let tc = cfg.train_config(strategy, cfg.seed);
        let union = data.union.clone();
        let tests = data.test.clone();
        let evaluator = move |net: &Network| -> Result<Vec<(String, f64)>> {
            let mut out = Vec::new();
            for ds in &tests {
                out.extend(eval::dataset_metrics(net, ds, &union)?);
            }
            Ok(out)
        };
        println!(
            "training {strategy}: {} steps, batch {}, seed {}",
            tc.total_steps, tc.batch_size, tc.seed
        );
        let train_refs: Vec<&Dataset> = data.train.iter().collect();
        let (net, log) = train::train(&train_refs, &data.union, &net_spec, &tc, Some(&evaluator))?;

        net.save(&runs.join(format!("ckpt_{strategy}.json")), Some(tc.seed))?;
        log.write_csv(&runs.join(format!("train_{strategy}.csv")))?;

        let mut metrics = BTreeMap::new();
        for ds in &data.test {
            for (k, v) in eval::dataset_metrics(&net, ds, &data.union)? {
                metrics.insert(k, v);
            }
        }
        let summary = TrainSummary {
            strategy: strategy.to_string(),
            seed: cfg.seed,
            timestamp_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            final_train_loss: log.final_loss().expect("at least one step"),
            metrics: metrics.clone(),
            config: cfg,
        };
        std::fs::write(
            runs.join(format!("summary_{strategy}.json")),
            serde_json::to_string_pretty(&summary)?,
        )?;
        let shown: Vec<String> = metrics.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
        println!("  {strategy}: final loss {:.4}, {}", summary.final_train_loss, shown.join(", "));
    }
    Ok(())
}

/// Generating emotion → AU-class map for the categorical space `name`.
fn generating_map(cfg: &ExperimentConfig, space_name: &str) -> Result<BTreeMap<String, Vec<String>>> {
    let mut map = BTreeMap::new();
    match space_name {
        "emotion" => {
            for e in &cfg.synthetic.emotions {
                map.insert(
                    e.name.clone(),
                    e.aus.iter().map(|id| format!("AU{id}")).collect(),
                );
            }
        }
        "compound" => {
            let compound = cfg
                .synthetic
                .compound
                .as_ref()
                .ok_or_else(|| Error::Config("no compound section configured".into()))?;
            for class in &compound.classes {
                let aus = cfg.synthetic.compound_aus(class)?;
                map.insert(
                    class.name.clone(),
                    aus.iter().map(|id| format!("AU{id}")).collect(),
                );
            }
        }
        other => {
            return Err(Error::Contract(format!(
                "no generating AU map for label space '{other}'"
            )))
        }
    }
    Ok(map)
}

#[derive(Serialize, Deserialize)]
struct MetricsFile {
    metrics: StrategyMetrics,
    matrix: Option<AuScoreMatrix>,
}

const ALL_STRATEGIES: [Strategy; 3] = [Strategy::SingleTask, Strategy::ClassicalMt, Strategy::Sjmt];

/// Evaluates every checkpoint present under the configured output
/// directory; writes per-strategy metrics JSON, and the emotion × AU
/// matrix CSV for the shared-head run.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<Vec<StrategyMetrics>> {
    let runs = cfg.runs_dir();
    let report_dir = cfg.report_dir();
    std::fs::create_dir_all(&report_dir)?;
    let mut all = Vec::new();
    for strategy in ALL_STRATEGIES {
        let ckpt = runs.join(format!("ckpt_{strategy}.json"));
        if !ckpt.exists() {
            continue;
        }
        let (net, _) = Network::load(&ckpt)?;
        let data = task_data(cfg, strategy)?;
        let expected = train::spec_for_strategy(
            strategy,
            &data.union,
            cfg.synthetic.projection_dim,
            cfg.network.width,
            cfg.network.blocks,
            cfg.network.normalize,
            net.spec().seed,
        )?;
        if net.spec().head != expected.head || net.spec().input_dim != expected.input_dim {
            return Err(Error::ArtifactMismatch(format!(
                "checkpoint {} does not match the label union implied by the config",
                ckpt.display()
            )));
        }

        let mut tasks = Vec::new();
        for ds in &data.test {
            tasks.push(eval::task_metrics(&net, ds, &data.union)?);
        }

        let mut coherence = None;
        let mut matrix = None;
        let has_cat = data
            .union
            .spaces()
            .iter()
            .any(|s| s.kind == LabelKind::CategoricalExclusive);
        let has_ml = data
            .union
            .spaces()
            .iter()
            .any(|s| s.kind == LabelKind::MultilabelBinary);
        if strategy != Strategy::SingleTask && has_cat && has_ml {
            let cat_space = data
                .union
                .spaces()
                .iter()
                .position(|s| s.kind == LabelKind::CategoricalExclusive)
                .expect("checked");
            let cat_test = data
                .test
                .iter()
                .find(|d| d.space_index == cat_space)
                .ok_or_else(|| Error::Data("no held-out split for the categorical task".into()))?;
            let features = eval::dataset_features(cat_test);
            let (group_by, truth) = match cfg.eval.group_by {
                GroupByConfig::Predicted => (GroupBy::Predicted, None),
                GroupByConfig::GroundTruth => (
                    GroupBy::GroundTruth,
                    Some(eval::categorical_truth(cat_test, &data.union)?),
                ),
            };
            let m = eval::au_mean_score_matrix(&net, &features, &data.union, group_by, truth.as_deref())?;
            let map = generating_map(cfg, &data.union.spaces()[cat_space].name)?;
            let c = eval::coherence_score(&m, &map, None)?;
            coherence = Some(c.macro_precision);
            if strategy == Strategy::Sjmt {
                std::fs::write(report_dir.join("matrix.csv"), m.to_csv())?;
            }
            matrix = Some(m);
        }

        let metrics = StrategyMetrics {
            strategy: strategy.to_string(),
            tasks,
            coherence_macro: coherence,
        };
        let file = MetricsFile {
            metrics: metrics.clone(),
            matrix,
        };
        std::fs::write(
            report_dir.join(format!("metrics_{strategy}.json")),
            serde_json::to_string_pretty(&file)?,
        )?;
        println!("evaluated {strategy}");
        all.push(metrics);
    }
    if all.is_empty() {
        return Err(Error::ArtifactMismatch(format!(
            "no checkpoints found under {}; run `train` first",
            runs.display()
        )));
    }
    Ok(all)
}

/// Assembles report.csv and report.txt from the evaluation outputs and
/// returns the comparison table.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<String> {
    let report_dir = cfg.report_dir();
    let mut runs = Vec::new();
    let mut matrix = None;
    for strategy in ALL_STRATEGIES {
        let path = report_dir.join(format!("metrics_{strategy}.json"));
        if !path.exists() {
            continue;
        }
        let file: MetricsFile = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
        if file.matrix.is_some() && strategy == Strategy::Sjmt {
            matrix = file.matrix;
        }
        runs.push(file.metrics);
    }
    if runs.is_empty() {
        return Err(Error::ArtifactMismatch(format!(
            "no evaluation outputs under {}; run `eval` first",
            report_dir.display()
        )));
    }
    let report = eval::build_report(runs, matrix)?;
    std::fs::write(report_dir.join("report.csv"), report.to_csv())?;
    std::fs::write(report_dir.join("report.txt"), report.to_text())?;
    Ok(report.comparison_table())
}

pub fn cmd_gradcheck(size: SuiteSize) -> Result<verify::SuiteReport> {
    verify::run_suite(size)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_lists_parse() {
        assert_eq!(parse_strategies("all").unwrap().len(), 3);
        assert_eq!(parse_strategies("sjmt").unwrap(), vec![Strategy::Sjmt]);
        assert!(parse_strategies("nope").is_err());
    }

    #[test]
    fn exit_codes_are_stable() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(
            exit_code(&Error::Validation("x".into())),
            2
        );
        assert_eq!(
            exit_code(&Error::Divergence {
                step: 3,
                reason: "x".into()
            }),
            3
        );
        assert_eq!(exit_code(&Error::ArtifactMismatch("x".into())), 4);
        assert_eq!(exit_code(&Error::Data("x".into())), 1);
    }
}
