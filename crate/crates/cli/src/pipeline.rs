//! The data-to-metrics path shared by the train, eval, map and ablate
//! commands.

use log::{info, warn};
use pyformer::data::{disjoint_split, extract_patches, fit_pca, Center, HsiCube, PatchSet, PcaModel, SplitAssignment};
use pyformer::model::{PyFormerConfig, PyFormerParams};
use pyformer::train::{evaluate, metrics_from_confusion, train, MetricsReport, TrainHistory};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub struct Prepared {
    pub pca: PcaModel,
    pub patches: PatchSet,
    pub split: SplitAssignment,
}

/// Metrics on every part of the split. Validation is absent when the split
/// holds no validation centers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub train: MetricsReport,
    pub val: Option<MetricsReport>,
    pub test: MetricsReport,
}

pub fn load_cube(cfg: &RunConfig) -> CliResult<HsiCube> {
    let path = cfg.require_cube()?;
    let cube = HsiCube::load(path)?;
    info!("loaded {}x{}x{} cube with {} classes", cube.height(), cube.width(), cube.bands(), cube.num_classes());
    Ok(cube)
}

/// PCA, patches and the split, either read from `split_file` or drawn
/// from the configured ratios and seed.
pub fn prepare(cfg: &RunConfig, cube: &HsiCube) -> CliResult<Prepared> {
    let m = &cfg.model;
    if m.b_star > cube.bands() {
        return Err(CliError::Validation(format!("B* = {} exceeds the cube's {} bands", m.b_star, cube.bands())));
    }
    if m.patch_size > cube.height().min(cube.width()) {
        return Err(CliError::Validation(format!(
            "patch size {} does not fit the {}x{} scene",
            m.patch_size,
            cube.height(),
            cube.width()
        )));
    }
    let pca = fit_pca(cube, m.b_star)?;
    let patches = extract_patches(cube, &pca, m.patch_size)?;
    if patches.is_empty() {
        return Err(CliError::Validation(format!("no labeled pixel has a full {0}x{0} window", m.patch_size)));
    }
    let split = match &cfg.split_file {
        Some(p) => SplitAssignment::load(p)?,
        None => disjoint_split(&patches, cfg.split.ratios, cfg.seed, cfg.split.strict_spatial)?,
    };
    for w in &split.warnings {
        warn!("{w}");
    }
    Ok(Prepared { pca, patches, split })
}

fn report(params: &PyFormerParams, cfg: &PyFormerConfig, p: &PatchSet, centers: &[Center], names: &[String]) -> CliResult<MetricsReport> {
    let cm = evaluate(params, cfg, p, centers)?;
    let m = metrics_from_confusion(&cm)?;
    Ok(MetricsReport::new(&m, &cm, names))
}

pub fn evaluate_split(
    params: &PyFormerParams,
    cfg: &PyFormerConfig,
    prep: &Prepared,
    names: &[String],
) -> CliResult<EvalReport> {
    let s = &prep.split;
    if s.test.is_empty() {
        return Err(CliError::Validation("the split has no test centers".into()));
    }
    if s.train.is_empty() {
        return Err(CliError::Validation("the split has no training centers".into()));
    }
    let val = if s.val.is_empty() { None } else { Some(report(params, cfg, &prep.patches, &s.val, names)?) };
    Ok(EvalReport {
        train: report(params, cfg, &prep.patches, &s.train, names)?,
        val,
        test: report(params, cfg, &prep.patches, &s.test, names)?,
    })
}

/// Sets the class count from the data and checks the model.
pub fn resolve_model(cfg: &mut RunConfig, cube: &HsiCube) -> CliResult<()> {
    if cfg.model.num_classes != cube.num_classes() {
        info!("num_classes set to {} from the cube", cube.num_classes());
        cfg.model.num_classes = cube.num_classes();
    }
    cfg.model.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    cfg.train.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(())
}

pub struct TrainedRun {
    pub params: PyFormerParams,
    pub history: TrainHistory,
    pub report: EvalReport,
}

/// Seeded init, training, and evaluation on every split part. `cfg` must
/// already be resolved against the cube.
pub fn train_and_evaluate(cfg: &RunConfig, cube: &HsiCube, prep: &Prepared) -> CliResult<TrainedRun> {
    let init = PyFormerParams::init(&cfg.model, cfg.seed)?;
    info!(
        "training {} parameters on {} centers for {} epochs",
        init.count(),
        prep.split.train.len(),
        cfg.train.epochs
    );
    let (params, history) = train(init, &cfg.model, &cfg.train, &prep.patches, &prep.split).map_err(|e| match e {
        pyformer::Error::Invalid(msg) if msg.starts_with("non-finite") => CliError::Runtime(msg),
        other => other.into(),
    })?;
    for e in &history.epochs {
        log::debug!("epoch {:>3} loss {:.6} train OA {:.4} val OA {:?}", e.epoch, e.loss, e.train_oa, e.val_oa);
    }
    let report = evaluate_split(&params, &cfg.model, prep, cube.class_names())?;
    Ok(TrainedRun { params, history, report })
}
