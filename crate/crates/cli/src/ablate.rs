//! One train+eval run per value of a single hyperparameter axis, collected
//! into a table with the best value of each metric column flagged.

use std::fmt::Write as _;

use log::warn;
use pyformer::data::HsiCube;
use serde::{Deserialize, Serialize};

use crate::config::{AblationSpec, Axis, RunConfig};
use crate::error::{CliError, CliResult};
use crate::pipeline::{prepare, resolve_model, train_and_evaluate};

/// Axis value as it appears in the report: integral values print without a
/// fractional part.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValue {
    Int(u64),
    Float(f64),
}

impl AxisValue {
    pub fn new(v: f64) -> Self {
        if v >= 0.0 && v.fract() == 0.0 && v < 1e15 {
            AxisValue::Int(v as u64)
        } else {
            AxisValue::Float(v)
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            AxisValue::Int(i) => i as f64,
            AxisValue::Float(f) => f,
        }
    }
}

impl std::fmt::Display for AxisValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AxisValue::Int(i) => write!(f, "{i}"),
            AxisValue::Float(x) => write!(f, "{x}"),
        }
    }
}

/// Test-set metrics of one axis value; all `None` when skipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: AxisValue,
    pub oa: Option<f64>,
    pub aa: Option<f64>,
    pub kappa: Option<f64>,
    pub f1: Option<f64>,
    pub skipped: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BestValues {
    pub oa: Option<AxisValue>,
    pub aa: Option<AxisValue>,
    pub kappa: Option<AxisValue>,
    pub f1: Option<AxisValue>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub axis: String,
    pub values: Vec<AxisValue>,
    pub rows: Vec<AblationRow>,
    pub best: BestValues,
}

/// The configuration one axis value runs with, or why it cannot run.
pub fn cell_config(base: &RunConfig, axis: Axis, value: f64) -> Result<RunConfig, String> {
    let mut c = base.clone();
    c.ablation = None;
    let whole = || -> Result<usize, String> {
        if value >= 1.0 && value.fract() == 0.0 {
            Ok(value as usize)
        } else {
            Err(format!("{} must be a positive integer, got {value}", axis.name()))
        }
    };
    match axis {
        Axis::TrainRatio => {
            let val = base.split.ratios[1];
            let train = value / 100.0;
            let test = 1.0 - train - val;
            if !(train > 0.0) || !(test > 1e-9) {
                return Err(format!("train ratio {value}% leaves no test centers next to {}% validation", val * 100.0));
            }
            c.split.ratios = [train, val, test];
            c.split_file = None;
        }
        Axis::PatchSize => {
            c.model.patch_size = whole()?;
            c.split_file = None;
        }
        Axis::Heads => c.model.num_heads = whole()?,
        Axis::Layers => c.model.num_layers = whole()?,
    }
    Ok(c)
}

fn best_of(rows: &[AblationRow], metric: impl Fn(&AblationRow) -> Option<f64>) -> Option<AxisValue> {
    let mut best: Option<(f64, AxisValue)> = None;
    for r in rows {
        if let Some(v) = metric(r) {
            if best.map_or(true, |(b, _)| v > b) {
                best = Some((v, r.value));
            }
        }
    }
    best.map(|(_, v)| v)
}

/// Runs every value of `spec` over `base`. Values whose configuration is
/// invalid for the model or the data are reported as skipped; if none can
/// run, the whole ablation is a validation error.
pub fn run_ablation(base: &RunConfig, spec: &AblationSpec, cube: &HsiCube) -> CliResult<AblationReport> {
    if spec.values.is_empty() {
        return Err(CliError::Validation("ablation needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(spec.values.len());
    for &v in &spec.values {
        let value = AxisValue::new(v);
        let attempt = cell_config(base, spec.axis, v).and_then(|mut c| {
            resolve_model(&mut c, cube).map_err(|e| e.to_string())?;
            let prep = prepare(&c, cube).map_err(|e| e.to_string())?;
            Ok((c, prep))
        });
        let row = match attempt {
            Err(reason) => {
                warn!("skipping {} = {value}: {reason}", spec.axis.name());
                AblationRow { value, oa: None, aa: None, kappa: None, f1: None, skipped: true, reason: Some(reason) }
            }
            Ok((c, prep)) => {
                log::info!("{} = {value}", spec.axis.name());
                let t = train_and_evaluate(&c, cube, &prep)?.report.test;
                AblationRow {
                    value,
                    oa: Some(t.oa),
                    aa: Some(t.aa),
                    kappa: Some(t.kappa),
                    f1: Some(t.f1_macro),
                    skipped: false,
                    reason: None,
                }
            }
        };
        rows.push(row);
    }
    if rows.iter().all(|r| r.skipped) {
        let reasons: Vec<String> =
            rows.iter().map(|r| format!("{}: {}", r.value, r.reason.as_deref().unwrap_or(""))).collect();
        return Err(CliError::Validation(format!(
            "every {} value is invalid ({})",
            spec.axis.name(),
            reasons.join("; ")
        )));
    }
    let best = BestValues {
        oa: best_of(&rows, |r| r.oa),
        aa: best_of(&rows, |r| r.aa),
        kappa: best_of(&rows, |r| r.kappa),
        f1: best_of(&rows, |r| r.f1),
    };
    Ok(AblationReport {
        axis: spec.axis.name().to_string(),
        values: spec.values.iter().map(|&v| AxisValue::new(v)).collect(),
        rows,
        best,
    })
}

/// Percent table; the best entry of each column carries a `*`.
pub fn format_table(report: &AblationReport) -> String {
    let head = ["OA", "AA", "kappa", "F1"];
    let first = report.axis.len().max(report.values.iter().map(|v| v.to_string().len()).max().unwrap_or(0));
    let mut out = String::new();
    let _ = write!(out, "{:<first$}", report.axis);
    for h in head {
        let _ = write!(out, "  {h:>8}");
    }
    out.push('\n');
    let best = [report.best.oa, report.best.aa, report.best.kappa, report.best.f1];
    for r in &report.rows {
        let _ = write!(out, "{:<first$}", r.value.to_string());
        if r.skipped {
            let _ = write!(out, "  skipped: {}", r.reason.as_deref().unwrap_or("invalid"));
        } else {
            for (cell, b) in [r.oa, r.aa, r.kappa, r.f1].into_iter().zip(best) {
                let mark = if b == Some(r.value) { "*" } else { " " };
                let _ = write!(out, "  {:>7.2}{mark}", cell.unwrap_or(f64::NAN) * 100.0);
            }
        }
        out.push('\n');
    }
    out
}
