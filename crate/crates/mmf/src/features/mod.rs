//! Dataset ingestion and the MMF feature pipeline: triplet manifests,
//! feature tables, K-Means augmentation, golden features and permutation
//! feature selection.

mod golden;
mod kmeans;
mod select;

pub use golden::{
    apply_golden_features, golden_features, GoldenFeatureDef, GoldenOp, GOLDEN_TOP_N_DEFAULT,
};
pub use kmeans::{append_kmeans_columns, default_k, kmeans_augment, KMeansAugmentation};
pub use select::{inject_noise_columns, permutation_importance, select_features, NOISE_COLUMNS};

use crate::deepsim::{dists, FeatureExtractor};
use crate::error::{Error, Result};
use crate::imgio::decode;
use crate::metrics::{compute_battery, tier_metrics, BatteryTier};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

/// Target column name used in CSV headers.
pub const TARGET_COLUMN: &str = "target_dists";

/// One manifest line: a source/translated pair with optional ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    pub sample_id: String,
    pub model_id: String,
    pub source: PathBuf,
    pub translated: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
}

/// Declarative listing of image pairs/triplets (JSON lines on disk).
#[derive(Debug, Clone, Default)]
pub struct TripletManifest {
    pub records: Vec<PairRecord>,
}

impl TripletManifest {
    pub fn new(records: Vec<PairRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert((r.sample_id.clone(), r.model_id.clone())) {
                return Err(Error::Manifest(format!(
                    "duplicate record for sample `{}` model `{}`",
                    r.sample_id, r.model_id
                )));
            }
        }
        Ok(TripletManifest { records })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let reader = std::io::BufReader::new(file);
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: PairRecord = serde_json::from_str(&line).map_err(|e| {
                Error::Manifest(format!("{}:{}: {e}", path.display(), i + 1))
            })?;
            records.push(record);
        }
        let manifest = TripletManifest::new(records)?;
        for r in &manifest.records {
            for (role, p) in [("source", Some(&r.source)), ("translated", Some(&r.translated)), ("ground_truth", r.ground_truth.as_ref())] {
                if let Some(p) = p {
                    if !p.exists() {
                        return Err(Error::Manifest(format!(
                            "record `{}/{}`: {role} path {} does not exist",
                            r.sample_id,
                            r.model_id,
                            p.display()
                        )));
                    }
                }
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.push(b'\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn has_ground_truth(&self) -> Result<bool> {
        let with_gt = self.records.iter().filter(|r| r.ground_truth.is_some()).count();
        if with_gt == 0 {
            Ok(false)
        } else if with_gt == self.records.len() {
            Ok(true)
        } else {
            Err(Error::Manifest(format!(
                "{with_gt} of {} records carry ground truth; must be all or none",
                self.records.len()
            )))
        }
    }
}

/// Row identity: the group is the source image, so group_id == sample_id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowId {
    pub sample_id: String,
    pub model_id: String,
    pub group_id: String,
}

/// Column-major tabular dataset of metric scores with an optional target.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    feature_names: Vec<String>,
    ids: Vec<RowId>,
    columns: Vec<Vec<f64>>,
    target: Option<Vec<f64>>,
}

impl FeatureTable {
    pub fn new(
        feature_names: Vec<String>,
        ids: Vec<RowId>,
        columns: Vec<Vec<f64>>,
        target: Option<Vec<f64>>,
    ) -> Result<Self> {
        if feature_names.len() != columns.len() {
            return Err(Error::FeatureTable(
                "feature name/column count mismatch".into(),
            ));
        }
        let n = ids.len();
        for (name, col) in feature_names.iter().zip(columns.iter()) {
            if col.len() != n {
                return Err(Error::FeatureTable(format!("column `{name}` is ragged")));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::FeatureTable(format!(
                    "column `{name}` holds a non-finite value"
                )));
            }
        }
        if let Some(t) = &target {
            if t.len() != n {
                return Err(Error::FeatureTable("target length mismatch".into()));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::FeatureTable("target holds a non-finite value".into()));
            }
        }
        let mut unique: HashSet<&str> = HashSet::new();
        for name in &feature_names {
            if !unique.insert(name) {
                return Err(Error::FeatureTable(format!("duplicate column `{name}`")));
            }
        }
        Ok(FeatureTable {
            feature_names,
            ids,
            columns,
            target,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.ids.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn ids(&self) -> &[RowId] {
        &self.ids
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn target(&self) -> Option<&[f64]> {
        self.target.as_deref()
    }

    pub fn set_target(&mut self, target: Option<Vec<f64>>) {
        self.target = target;
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        let idx = self
            .feature_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        Ok(&self.columns[idx])
    }

    pub fn push_column(&mut self, name: String, values: Vec<f64>) -> Result<()> {
        if values.len() != self.n_rows() {
            return Err(Error::FeatureTable(format!(
                "column `{name}` has {} values for {} rows",
                values.len(),
                self.n_rows()
            )));
        }
        if self.feature_names.contains(&name) {
            return Err(Error::FeatureTable(format!("duplicate column `{name}`")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::FeatureTable(format!(
                "column `{name}` holds a non-finite value"
            )));
        }
        self.feature_names.push(name);
        self.columns.push(values);
        Ok(())
    }

    /// Replaces an existing column's values.
    pub fn set_column(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        let idx = self
            .feature_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        if values.len() != self.n_rows() {
            return Err(Error::FeatureTable("replacement column length mismatch".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::FeatureTable(format!(
                "column `{name}` holds a non-finite value"
            )));
        }
        self.columns[idx] = values;
        Ok(())
    }

    /// Copies the given rows into a new table.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureTable {
        FeatureTable {
            feature_names: self.feature_names.clone(),
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            columns: self
                .columns
                .iter()
                .map(|col| rows.iter().map(|&r| col[r]).collect())
                .collect(),
            target: self
                .target
                .as_ref()
                .map(|t| rows.iter().map(|&r| t[r]).collect()),
        }
    }

    /// Copies the named columns (in the given order) into a new table.
    pub fn select_columns(&self, names: &[String]) -> Result<FeatureTable> {
        let mut columns = Vec::with_capacity(names.len());
        for name in names {
            columns.push(self.column(name)?.to_vec());
        }
        Ok(FeatureTable {
            feature_names: names.to_vec(),
            ids: self.ids.clone(),
            columns,
            target: self.target.clone(),
        })
    }

    /// Distinct group ids in first-appearance order.
    pub fn group_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for id in &self.ids {
            if seen.insert(id.group_id.clone()) {
                out.push(id.group_id.clone());
            }
        }
        out
    }

    /// Row indices per group id.
    pub fn rows_of_groups(&self, groups: &HashSet<String>) -> Vec<usize> {
        self.ids
            .iter()
            .enumerate()
            .filter(|(_, id)| groups.contains(&id.group_id))
            .map(|(i, _)| i)
            .collect()
    }

    /// Borrowed training view for the tree learner.
    pub fn train_view(&self) -> Result<crate::gbdt::DataView<'_>> {
        let target = self
            .target
            .as_deref()
            .ok_or_else(|| Error::FeatureTable("table has no target column".into()))?;
        Ok(crate::gbdt::DataView {
            names: &self.feature_names,
            columns: &self.columns,
            target,
        })
    }

    /// Predicts every row with a model whose features are a subset of this
    /// table's columns.
    pub fn predict_with(&self, model: &crate::gbdt::GbdtModel) -> Result<Vec<f64>> {
        let mut cols: Vec<&[f64]> = Vec::with_capacity(model.feature_names.len());
        for name in &model.feature_names {
            cols.push(self.column(name)?);
        }
        let mut row = vec![0.0; cols.len()];
        let mut out = Vec::with_capacity(self.n_rows());
        for i in 0..self.n_rows() {
            for (j, col) in cols.iter().enumerate() {
                row[j] = col[i];
            }
            out.push(model.predict_row(&row));
        }
        Ok(out)
    }

    /// Writes the CSV form: `sample_id,model_id,group_id,<features...>[,target_dists]`,
    /// UTF-8, LF line endings, shortest round-trip float formatting.
    pub fn to_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = std::io::BufWriter::new(file);
        let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);

        let mut header = vec!["sample_id".to_string(), "model_id".into(), "group_id".into()];
        header.extend(self.feature_names.iter().cloned());
        if self.target.is_some() {
            header.push(TARGET_COLUMN.into());
        }
        w.write_all(header.join(",").as_bytes()).map_err(io_err)?;
        w.write_all(b"\n").map_err(io_err)?;

        for i in 0..self.n_rows() {
            let mut fields = vec![
                self.ids[i].sample_id.clone(),
                self.ids[i].model_id.clone(),
                self.ids[i].group_id.clone(),
            ];
            for col in &self.columns {
                fields.push(format!("{}", col[i]));
            }
            if let Some(t) = &self.target {
                fields.push(format!("{}", t[i]));
            }
            w.write_all(fields.join(",").as_bytes()).map_err(io_err)?;
            w.write_all(b"\n").map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }

    pub fn from_csv(path: impl AsRef<Path>) -> Result<FeatureTable> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::FeatureTable(format!("{}: {e}", path.display())))?;
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::FeatureTable(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.len() < 3 || header[0] != "sample_id" || header[1] != "model_id" || header[2] != "group_id"
        {
            return Err(Error::FeatureTable(format!(
                "{}: header must start with sample_id,model_id,group_id",
                path.display()
            )));
        }
        let has_target = header.last().map(String::as_str) == Some(TARGET_COLUMN);
        let feature_end = if has_target { header.len() - 1 } else { header.len() };
        let feature_names: Vec<String> = header[3..feature_end].to_vec();

        let mut ids = Vec::new();
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); feature_names.len()];
        let mut target: Vec<f64> = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::FeatureTable(e.to_string()))?;
            if record.len() != header.len() {
                return Err(Error::FeatureTable(format!(
                    "{}: row {} has {} fields, header has {}",
                    path.display(),
                    line + 2,
                    record.len(),
                    header.len()
                )));
            }
            ids.push(RowId {
                sample_id: record[0].to_string(),
                model_id: record[1].to_string(),
                group_id: record[2].to_string(),
            });
            for (c, col) in columns.iter_mut().enumerate() {
                let raw = &record[3 + c];
                col.push(raw.parse::<f64>().map_err(|e| {
                    Error::FeatureTable(format!(
                        "{}: row {} column `{}`: {e}",
                        path.display(),
                        line + 2,
                        feature_names[c]
                    ))
                })?);
            }
            if has_target {
                let raw = &record[header.len() - 1];
                target.push(raw.parse::<f64>().map_err(|e| {
                    Error::FeatureTable(format!("{}: row {}: {e}", path.display(), line + 2))
                })?);
            }
        }
        FeatureTable::new(
            feature_names,
            ids,
            columns,
            if has_target { Some(target) } else { None },
        )
    }
}

/// Scores every manifest record: features are the metric battery between
/// source and translated; the target (when ground truth is present) is the
/// DISTS between translated and ground truth. Rows whose translated path
/// IS the ground-truth path get target exactly 0.
pub fn build_feature_table(
    manifest: &TripletManifest,
    tier: BatteryTier,
    fx: &FeatureExtractor,
) -> Result<FeatureTable> {
    if manifest.records.is_empty() {
        return Err(Error::Manifest("empty manifest".into()));
    }
    let with_target = manifest.has_ground_truth()?;
    let names: Vec<String> = tier_metrics(tier).iter().map(|s| s.to_string()).collect();

    let rows: Vec<(Vec<f64>, Option<f64>)> = manifest
        .records
        .par_iter()
        .map(|record| -> Result<(Vec<f64>, Option<f64>)> {
            let source = decode(&record.source)?;
            let translated = decode(&record.translated)?;
            let scores = compute_battery(
                &source,
                &translated,
                tier,
                fx,
                &format!("{}/{}", record.sample_id, record.model_id),
            )?;
            let values: Vec<f64> = scores.iter().map(|s| s.value).collect();
            let target = match &record.ground_truth {
                None => None,
                Some(gt_path) => {
                    if gt_path == &record.translated {
                        Some(0.0)
                    } else {
                        let gt = decode(gt_path)?;
                        Some(dists(&translated, &gt, fx)?)
                    }
                }
            };
            Ok((values, target))
        })
        .collect::<Result<Vec<_>>>()?;

    let ids: Vec<RowId> = manifest
        .records
        .iter()
        .map(|r| RowId {
            sample_id: r.sample_id.clone(),
            model_id: r.model_id.clone(),
            group_id: r.sample_id.clone(),
        })
        .collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(rows.len()); names.len()];
    let mut target: Vec<f64> = Vec::with_capacity(rows.len());
    for (values, t) in &rows {
        for (c, v) in values.iter().enumerate() {
            columns[c].push(*v);
        }
        if let Some(t) = t {
            target.push(*t);
        }
    }
    FeatureTable::new(names, ids, columns, with_target.then_some(target))
}
