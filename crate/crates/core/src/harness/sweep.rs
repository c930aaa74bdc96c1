use std::io::Write;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::run::{train_prepared, PreparedData, RunRecord};
use crate::arch::Architecture;
use crate::augment::{enumerate_policies, AugmentationPolicy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub run_label: String,
    pub rotation: bool,
    pub translation: bool,
    pub horizontal_flip: bool,
    pub intensity_shift: bool,
    pub zoom: bool,
    /// Empty for a failed run.
    pub test_accuracy: Option<f64>,
}

impl AblationRow {
    fn new(policy: &AugmentationPolicy, test_accuracy: Option<f64>) -> Self {
        Self {
            run_label: policy.label(),
            rotation: policy.rotation,
            translation: policy.translation,
            horizontal_flip: policy.horizontal_flip,
            intensity_shift: policy.intensity_shift,
            zoom: policy.zoom,
            test_accuracy,
        }
    }
}

pub struct Ablation {
    pub rows: Vec<AblationRow>,
    /// `None` where the run errored before producing a record.
    pub records: Vec<Option<RunRecord>>,
}

/// The run config for one policy of the sweep: only the flags change.
pub fn ablation_config(base: &RunConfig, index: usize, policy: &AugmentationPolicy) -> RunConfig {
    let mut config = base.clone();
    config.augmentation = base.augmentation.with_flags(policy.flags());
    config.output_dir = base
        .output_dir
        .as_ref()
        .map(|d| d.join(format!("{:02}_{}", index, policy.label())));
    config
}

/// Trains once per augmentation subset, in enumeration order, with identical
/// seeds. Failures become rows with no accuracy and the sweep carries on.
pub fn ablate(base: &RunConfig) -> Result<Ablation> {
    base.validate()?;
    let data = PreparedData::load(base)?;
    ablate_prepared(base, &data)
}

pub fn ablate_prepared(base: &RunConfig, data: &PreparedData) -> Result<Ablation> {
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for (i, policy) in enumerate_policies().iter().enumerate() {
        let config = ablation_config(base, i, policy);
        info!("ablation run {}/32: {}", i + 1, policy.label());
        match train_prepared(&config, data) {
            Ok(out) => {
                let acc = if out.record.is_completed() { out.record.test_accuracy() } else { None };
                rows.push(AblationRow::new(policy, acc));
                records.push(Some(out.record));
            }
            Err(e) => {
                warn!("ablation run {} failed: {e}", policy.label());
                rows.push(AblationRow::new(policy, None));
                records.push(None);
            }
        }
    }
    let ablation = Ablation { rows, records };
    if let Some(dir) = &base.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("ablation.csv");
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_ablation_csv(&ablation.rows, file)?;
    }
    Ok(ablation)
}

pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "run_label",
        "rotation",
        "translation",
        "horizontal_flip",
        "intensity_shift",
        "zoom",
        "test_accuracy",
    ])?;
    for r in rows {
        w.write_record([
            r.run_label.clone(),
            r.rotation.to_string(),
            r.translation.to_string(),
            r.horizontal_flip.to_string(),
            r.intensity_shift.to_string(),
            r.zoom.to_string(),
            r.test_accuracy.map_or(String::new(), |a| format!("{a:.6}")),
        ])?;
    }
    w.flush().map_err(|e| Error::io("ablation csv", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: Architecture,
    pub parameters: usize,
    pub test_accuracy: Option<f64>,
    pub training_seconds: f64,
}

/// Trains each architecture with the same data, hyperparameters and seed.
pub fn compare(template: &RunConfig) -> Result<(Vec<ComparisonRow>, Vec<RunRecord>)> {
    template.validate()?;
    let data = PreparedData::load(template)?;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for arch in Architecture::ALL {
        let mut config = template.clone();
        config.architecture = arch;
        config.output_dir = template.output_dir.as_ref().map(|d| d.join(arch.as_str()));
        let record = train_prepared(&config, &data)?.record;
        rows.push(ComparisonRow {
            model: arch,
            parameters: record.parameter_count,
            test_accuracy: record.test_accuracy(),
            training_seconds: record.wall_seconds,
        });
        records.push(record);
    }
    if let Some(dir) = &template.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("comparison.csv");
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_comparison_csv(&rows, file)?;
    }
    Ok((rows, records))
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "parameters", "test_accuracy", "training_seconds"])?;
    for r in rows {
        w.write_record([
            r.model.to_string(),
            r.parameters.to_string(),
            r.test_accuracy.map_or(String::new(), |a| format!("{a:.6}")),
            format!("{:.3}", r.training_seconds),
        ])?;
    }
    w.flush().map_err(|e| Error::io("comparison csv", e))
}
