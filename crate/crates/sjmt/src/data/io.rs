//! Dataset persistence: a JSON manifest describing the label space plus a
//! CSV of samples (`id`, feature columns, one 0/1 column per class), and the
//! ground-truth sidecar for synthetic data. Floats are written in shortest
//! round-trip form, so save → load reproduces values bit-exactly.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::synthetic::GroundTruthRecord;
use crate::data::{LabelSpace, RawDataset, RawSample};
use crate::error::{Error, Result};

/// Manifest describing one dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub label_space: LabelSpace,
    pub feature_dim: usize,
    pub samples_file: String,
}

fn parse_field(path: &Path, line: usize, field: &str, what: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        path: path.display().to_string(),
        line,
        msg: format!("{what} field '{field}' is not a number"),
    })
}

/// Writes `<name>.manifest.json` and `<name>.csv` under `dir`; returns the
/// manifest path.
pub fn save_dataset(dir: &Path, ds: &RawDataset) -> Result<PathBuf> {
    ds.validate()?;
    fs::create_dir_all(dir)?;
    let csv_name = format!("{}.csv", ds.name);
    let manifest = Manifest {
        name: ds.name.clone(),
        label_space: ds.space.clone(),
        feature_dim: ds.feature_dim,
        samples_file: csv_name.clone(),
    };
    let manifest_path = dir.join(format!("{}.manifest.json", ds.name));
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;

    let mut out = String::new();
    out.push_str("id");
    for j in 0..ds.feature_dim {
        let _ = write!(out, ",f{j}");
    }
    for c in &ds.space.classes {
        let _ = write!(out, ",{c}");
    }
    out.push('\n');
    for s in &ds.samples {
        out.push_str(&s.id);
        for v in &s.features {
            let _ = write!(out, ",{v}");
        }
        for l in &s.labels {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
    }
    fs::write(dir.join(&csv_name), out)?;
    Ok(manifest_path)
}

/// Loads a dataset from its manifest, validating every row's column count
/// against the declared feature dimension and label space.
pub fn load_dataset(manifest_path: &Path) -> Result<RawDataset> {
    let manifest_text = fs::read_to_string(manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let csv_path = dir.join(&manifest.samples_file);
    let text = fs::read_to_string(&csv_path)?;

    let expected_cols = 1 + manifest.feature_dim + manifest.label_space.len();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: csv_path.display().to_string(),
        line: 1,
        msg: "file is empty".into(),
    })?;
    if header.split(',').count() != expected_cols {
        return Err(Error::Validation(format!(
            "{}: header has {} columns, manifest declares {} (1 id + {} features + {} classes)",
            csv_path.display(),
            header.split(',').count(),
            expected_cols,
            manifest.feature_dim,
            manifest.label_space.len()
        )));
    }

    let mut samples = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected_cols {
            return Err(Error::Validation(format!(
                "{}:{}: row has {} columns, manifest declares {}",
                csv_path.display(),
                lineno,
                fields.len(),
                expected_cols
            )));
        }
        let id = fields[0].to_string();
        let mut features = Vec::with_capacity(manifest.feature_dim);
        for f in &fields[1..1 + manifest.feature_dim] {
            features.push(parse_field(&csv_path, lineno, f, "feature")?);
        }
        let mut labels = Vec::with_capacity(manifest.label_space.len());
        for f in &fields[1 + manifest.feature_dim..] {
            let v = parse_field(&csv_path, lineno, f, "label")?;
            if v != 0.0 && v != 1.0 {
                return Err(Error::Validation(format!(
                    "{}:{}: label value {v} is not 0 or 1",
                    csv_path.display(),
                    lineno
                )));
            }
            labels.push(v);
        }
        samples.push(RawSample {
            id,
            features,
            labels,
        });
    }

    let ds = RawDataset {
        name: manifest.name,
        space: manifest.label_space,
        feature_dim: manifest.feature_dim,
        samples,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes the synthetic ground-truth sidecar: `id,emotion,<AU columns>`.
pub fn save_ground_truth(path: &Path, records: &[GroundTruthRecord], au_ids: &[u32]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut out = String::from("id,emotion");
    for id in au_ids {
        let _ = write!(out, ",AU{id}");
    }
    out.push('\n');
    for r in records {
        if r.au_bits.len() != au_ids.len() {
            return Err(Error::Validation(format!(
                "ground-truth record '{}' has {} AU bits, expected {}",
                r.id,
                r.au_bits.len(),
                au_ids.len()
            )));
        }
        let _ = write!(out, "{},{}", r.id, r.emotion);
        for b in &r.au_bits {
            let _ = write!(out, ",{b}");
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads the ground-truth sidecar back.
pub fn load_ground_truth(path: &Path) -> Result<Vec<GroundTruthRecord>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        line: 1,
        msg: "file is empty".into(),
    })?;
    let n_cols = header.split(',').count();
    if n_cols < 3 {
        return Err(Error::Validation(format!(
            "{}: ground-truth header needs id, emotion and at least one AU column",
            path.display()
        )));
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_cols {
            return Err(Error::Validation(format!(
                "{}:{}: row has {} columns, header has {}",
                path.display(),
                lineno,
                fields.len(),
                n_cols
            )));
        }
        let mut au_bits = Vec::with_capacity(n_cols - 2);
        for f in &fields[2..] {
            let v = parse_field(path, lineno, f, "AU bit")?;
            if v != 0.0 && v != 1.0 {
                return Err(Error::Validation(format!(
                    "{}:{}: AU bit {v} is not 0 or 1",
                    path.display(),
                    lineno
                )));
            }
            au_bits.push(v as u8);
        }
        records.push(GroundTruthRecord {
            id: fields[0].to_string(),
            emotion: fields[1].to_string(),
            au_bits,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate_synthetic, SyntheticConfig};

    #[test]
    fn round_trip_preserves_samples_bit_exactly() {
        let cfg = SyntheticConfig {
            samples_per_dataset: 1000,
            test_samples: 0,
            seed: 21,
            ..Default::default()
        };
        let family = generate_synthetic(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_dataset(dir.path(), &family.aus).unwrap();
        let loaded = load_dataset(&manifest).unwrap();
        assert_eq!(loaded, family.aus);
    }

    #[test]
    fn ground_truth_round_trip() {
        let cfg = SyntheticConfig {
            samples_per_dataset: 40,
            test_samples: 5,
            seed: 2,
            ..Default::default()
        };
        let family = generate_synthetic(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ground_truth.csv");
        save_ground_truth(&path, &family.ground_truth, &cfg.au_ids).unwrap();
        let loaded = load_ground_truth(&path).unwrap();
        assert_eq!(loaded, family.ground_truth);
    }

    #[test]
    fn row_with_extra_label_column_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = Manifest {
            name: "bad".into(),
            label_space: LabelSpace::new(
                "s",
                vec!["a".into(), "b".into()],
                crate::data::LabelKind::MultilabelBinary,
            )
            .unwrap(),
            feature_dim: 1,
            samples_file: "bad.csv".into(),
        };
        let mpath = dir.path().join("bad.manifest.json");
        fs::write(&mpath, serde_json::to_string(&manifest).unwrap()).unwrap();
        fs::write(
            dir.path().join("bad.csv"),
            "id,f0,a,b\nrow0,0.5,1,0,1\n",
        )
        .unwrap();
        let err = load_dataset(&mpath).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn non_numeric_feature_is_a_parse_error_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = Manifest {
            name: "bad2".into(),
            label_space: LabelSpace::new(
                "s",
                vec!["a".into()],
                crate::data::LabelKind::MultilabelBinary,
            )
            .unwrap(),
            feature_dim: 1,
            samples_file: "bad2.csv".into(),
        };
        let mpath = dir.path().join("bad2.manifest.json");
        fs::write(&mpath, serde_json::to_string(&manifest).unwrap()).unwrap();
        fs::write(dir.path().join("bad2.csv"), "id,f0,a\nrow0,oops,1\n").unwrap();
        let err = load_dataset(&mpath).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }
}
