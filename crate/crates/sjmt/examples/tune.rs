// Scratch harness for sizing the comparison experiment. Not part of the
// deliverable surface; prints timing and per-seed accuracies.

use std::collections::BTreeMap;
use std::time::Instant;

use sjmt::data::synthetic::{generate_synthetic, SyntheticConfig};
use sjmt::data::LabelUnion;
use sjmt::eval;
use sjmt::losses::NormalizerMode;
use sjmt::train::{self, Strategy, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2500);
    let width: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(64);
    let blocks: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3);
    let seeds: Vec<u64> = vec![11, 12, 13, 14, 15];

    let mut acc: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut coh: BTreeMap<&str, Vec<f64>> = BTreeMap::new();

    for &seed in &seeds {
        let scale: Option<f64> = std::env::var("TUNE_SCALE").ok().and_then(|v| v.parse().ok());
        let syn = SyntheticConfig {
            flip_noise: 0.1,
            feature_noise: 0.3,
            projection_scale: scale,
            samples_per_dataset: 2000,
            test_samples: 1000,
            seed,
            ..Default::default()
        };
        let family = generate_synthetic(&syn).unwrap();
        let (emo_train, emo_test) = family.emotion.split_head(2000).unwrap();
        let (aus_train, aus_test) = family.aus.split_head(2000).unwrap();

        let single_union = LabelUnion::new(vec![emo_train.space.clone()]).unwrap();
        let multi_union =
            LabelUnion::new(vec![emo_train.space.clone(), aus_train.space.clone()]).unwrap();

        let mut tc = TrainConfig {
            strategy: Strategy::SingleTask,
            batch_size: 64,
            lr0: 0.05,
            decay_every_steps: 1000,
            decay_factor: 0.1,
            total_steps: steps,
            seed,
            augment_sigma: 0.05,
            normalizer: NormalizerMode::PerDataset,
            use_full_bce: false,
            eval_every: 0,
        };

        for (name, strategy, full_bce) in [
            ("single_task", Strategy::SingleTask, false),
            ("classical_mt", Strategy::ClassicalMt, false),
            ("sjmt", Strategy::Sjmt, false),
            ("sjmt_full_bce", Strategy::Sjmt, true),
        ] {
            let union = if strategy == Strategy::SingleTask {
                &single_union
            } else {
                &multi_union
            };
            tc.strategy = strategy;
            tc.use_full_bce = full_bce;
            let spec =
                train::spec_for_strategy(strategy, union, 16, width, blocks, true, seed).unwrap();
            let train_sets = if strategy == Strategy::SingleTask {
                vec![union.bind(&emo_train).unwrap()]
            } else {
                vec![union.bind(&emo_train).unwrap(), union.bind(&aus_train).unwrap()]
            };
            let refs: Vec<&sjmt::data::Dataset> = train_sets.iter().collect();
            let t0 = Instant::now();
            let (net, _log) = train::train(&refs, union, &spec, &tc, None).unwrap();
            let dt = t0.elapsed().as_secs_f64();

            let emo_test_b = union.bind(&emo_test).unwrap();
            let pred = eval::predict(&net, &eval::dataset_features(&emo_test_b)).unwrap();
            let labels = pred.categorical("emotion").unwrap();
            let truth = eval::categorical_truth(&emo_test_b, union).unwrap();
            let a = eval::overall_accuracy(labels, &truth).unwrap();
            acc.entry(name).or_default().push(a);

            let mut extra = String::new();
            if strategy != Strategy::SingleTask {
                let aus_test_b = union.bind(&aus_test).unwrap();
                let m = eval::dataset_metrics(&net, &aus_test_b, union).unwrap();
                extra = format!(", au_mca {:.4}", m[0].1);
                let matrix = eval::au_mean_score_matrix(
                    &net,
                    &eval::dataset_features(&emo_test_b),
                    union,
                    eval::GroupBy::Predicted,
                    None,
                )
                .unwrap();
                let mut map = BTreeMap::new();
                for e in &syn.emotions {
                    map.insert(
                        e.name.clone(),
                        e.aus.iter().map(|id| format!("AU{id}")).collect::<Vec<_>>(),
                    );
                }
                let c = eval::coherence_score(&matrix, &map, None).unwrap();
                coh.entry(name).or_default().push(c.macro_precision);
                extra.push_str(&format!(", coherence {:.4}", c.macro_precision));
            }
            println!("seed {seed} {name:<14} emo_acc {a:.4}{extra}  ({dt:.1}s)");
        }
    }

    println!("\nmeans over {} seeds (steps={steps}, width={width}, blocks={blocks}):", seeds.len());
    for (name, v) in &acc {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let c = coh
            .get(name)
            .map(|v| format!("  coherence {:.4}", v.iter().sum::<f64>() / v.len() as f64))
            .unwrap_or_default();
        println!("  {name:<14} emo_acc {mean:.4}{c}");
    }
}
