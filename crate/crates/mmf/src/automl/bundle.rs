//! The self-contained model bundle: serialized member models plus every
//! preprocessing step, replayable on raw feature tables without training
//! data.
//!
//! Directory layout: `bundle.json` (preprocessing, members, report),
//! `models/<id>.json` (per-model fold tree dumps), `extractor.prov`
//! (provenance string). JSON is written with sorted keys.

use crate::error::{Error, Result};
use crate::features::{
    append_kmeans_columns, apply_golden_features, FeatureTable, GoldenFeatureDef,
    KMeansAugmentation, TARGET_COLUMN,
};
use crate::gbdt::GbdtModel;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Replay recipe: raw metric columns in, model-ready columns out. Steps
/// replay in fixed order: K-Means distances, golden features, stacking
/// columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundlePreprocessing {
    pub tier: String,
    pub extractor_provenance: String,
    /// Raw feature columns the bundle needs present.
    pub raw_features: Vec<String>,
    pub kmeans: Option<KMeansAugmentation>,
    pub golden: Vec<GoldenFeatureDef>,
    /// Columns retained by permutation selection (informational; models
    /// already reference only their own features).
    pub selected_features: Option<Vec<String>>,
    /// Model ids whose fold-mean predictions become `stack_<id>` columns.
    pub stack_inputs: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemberRef {
    pub model_id: String,
    pub repetitions: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingReport {
    pub mode: String,
    pub validation: String,
    pub seed: u64,
    pub budget_seconds: f64,
    pub elapsed_seconds: f64,
    pub steps_run: Vec<String>,
    pub steps_skipped: Vec<String>,
    pub per_model_valid_rmse: BTreeMap<String, f64>,
    pub ensemble_valid_rmse: f64,
    pub test_mae: f64,
    pub test_r2: f64,
    pub test_rmse: f64,
    /// MAE of the full input table through the final bundle.
    pub train_table_mae: f64,
    pub n_test_rows: usize,
    pub test_groups: Vec<String>,
}

/// A trained model: one fitted tree ensemble per validation fold;
/// inference averages the folds.
#[derive(Debug, Clone)]
pub struct SavedModel {
    pub fold_models: Vec<GbdtModel>,
}

impl SavedModel {
    pub fn predict(&self, table: &FeatureTable) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; table.n_rows()];
        for m in &self.fold_models {
            for (a, p) in acc.iter_mut().zip(table.predict_with(m)?) {
                *a += p;
            }
        }
        let k = self.fold_models.len() as f64;
        for a in &mut acc {
            *a /= k;
        }
        Ok(acc)
    }

    fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "folds": self.fold_models.iter().map(GbdtModel::to_json).collect::<Vec<_>>(),
        })
    }

    fn from_json(value: &serde_json::Value) -> Result<SavedModel> {
        let folds = value
            .get("folds")
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::Bundle("model file missing folds".into()))?;
        let fold_models = folds
            .iter()
            .map(GbdtModel::from_json)
            .collect::<Result<Vec<_>>>()?;
        if fold_models.is_empty() {
            return Err(Error::Bundle("model file holds no folds".into()));
        }
        Ok(SavedModel { fold_models })
    }
}

/// The trained MMF artifact.
#[derive(Debug, Clone)]
pub struct EnsembleBundle {
    pub members: Vec<MemberRef>,
    pub preprocessing: BundlePreprocessing,
    pub target_name: String,
    pub models: BTreeMap<String, SavedModel>,
    pub report: TrainingReport,
}

impl EnsembleBundle {
    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::Bundle("bundle has no ensemble members".into()));
        }
        for m in &self.members {
            if !self.models.contains_key(&m.model_id) {
                return Err(Error::Bundle(format!(
                    "member `{}` has no serialized model",
                    m.model_id
                )));
            }
        }
        for id in &self.preprocessing.stack_inputs {
            if !self.models.contains_key(id) {
                return Err(Error::Bundle(format!(
                    "stacking input `{id}` has no serialized model"
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let models_dir = dir.join("models");
        std::fs::create_dir_all(&models_dir)
            .map_err(|e| Error::io(models_dir.display().to_string(), e))?;

        let manifest = serde_json::json!({
            "members": serde_json::to_value(&self.members)?,
            "preprocessing": serde_json::to_value(&self.preprocessing)?,
            "target_name": self.target_name,
            "model_ids": self.models.keys().collect::<Vec<_>>(),
            "report": serde_json::to_value(&self.report)?,
        });
        write_sorted_json(&dir.join("bundle.json"), &manifest)?;

        for (id, model) in &self.models {
            write_sorted_json(&models_dir.join(format!("{id}.json")), &model.to_json())?;
        }
        let prov_path = dir.join("extractor.prov");
        std::fs::write(&prov_path, &self.preprocessing.extractor_provenance)
            .map_err(|e| Error::io(prov_path.display().to_string(), e))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<EnsembleBundle> {
        let dir = dir.as_ref();
        let manifest_path = dir.join("bundle.json");
        let raw = std::fs::read(&manifest_path)
            .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
        let manifest: serde_json::Value = serde_json::from_slice(&raw)?;
        let members: Vec<MemberRef> = serde_json::from_value(
            manifest
                .get("members")
                .cloned()
                .ok_or_else(|| Error::Bundle("bundle.json missing members".into()))?,
        )?;
        let preprocessing: BundlePreprocessing = serde_json::from_value(
            manifest
                .get("preprocessing")
                .cloned()
                .ok_or_else(|| Error::Bundle("bundle.json missing preprocessing".into()))?,
        )?;
        let target_name = manifest
            .get("target_name")
            .and_then(|v| v.as_str())
            .unwrap_or(TARGET_COLUMN)
            .to_string();
        let report: TrainingReport = serde_json::from_value(
            manifest
                .get("report")
                .cloned()
                .ok_or_else(|| Error::Bundle("bundle.json missing report".into()))?,
        )?;
        let ids: Vec<String> = serde_json::from_value(
            manifest
                .get("model_ids")
                .cloned()
                .ok_or_else(|| Error::Bundle("bundle.json missing model_ids".into()))?,
        )?;
        let mut models = BTreeMap::new();
        for id in ids {
            let path = dir.join("models").join(format!("{id}.json"));
            let raw =
                std::fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
            let value: serde_json::Value = serde_json::from_slice(&raw)?;
            models.insert(id, SavedModel::from_json(&value)?);
        }
        let bundle = EnsembleBundle {
            members,
            preprocessing,
            target_name,
            models,
            report,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

/// Serializes through `serde_json::Value` so object keys come out sorted.
fn write_sorted_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Replays the preprocessing recipe in recorded order and returns the
/// repetition-weighted mean member prediction, clamped to the DISTS range.
pub fn predict_bundle(bundle: &EnsembleBundle, raw_table: &FeatureTable) -> Result<Vec<f64>> {
    bundle.validate()?;
    for name in &bundle.preprocessing.raw_features {
        if !raw_table.feature_names().contains(name) {
            return Err(Error::MissingColumn(name.clone()));
        }
    }
    let mut table = raw_table.clone();
    if let Some(km) = &bundle.preprocessing.kmeans {
        append_kmeans_columns(&mut table, km)?;
    }
    apply_golden_features(&mut table, &bundle.preprocessing.golden)?;
    for id in &bundle.preprocessing.stack_inputs {
        let model = &bundle.models[id];
        let preds = model.predict(&table)?;
        table.push_column(format!("stack_{id}"), preds)?;
    }

    let total_reps: usize = bundle.members.iter().map(|m| m.repetitions).sum();
    let mut acc = vec![0.0; table.n_rows()];
    for member in &bundle.members {
        let preds = bundle.models[&member.model_id].predict(&table)?;
        for (a, p) in acc.iter_mut().zip(preds) {
            *a += p * member.repetitions as f64;
        }
    }
    Ok(acc
        .into_iter()
        .map(|v| (v / total_reps as f64).clamp(0.0, 1.0))
        .collect())
}
