use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use pyformer::data::{fit_pca, generate_synthetic, HsiCube};
use pyformer::model::{load_checkpoint, save_checkpoint, PyFormerConfig, PyFormerParams};
use pyformer::train::{check_model_gradients, gradcheck_batch, gradcheck_config, gradcheck_params, render_map, GroupCheck};
use serde::Serialize;

use crate::ablate::{format_table, run_ablation};
use crate::config::{write_json, RunConfig};
use crate::error::{CliError, CliResult};
use crate::pipeline::{evaluate_split, load_cube, prepare, resolve_model, train_and_evaluate, EvalReport};
use crate::{Cli, Command};

pub const CUBE_FILE: &str = "cube.json";
pub const SPLIT_FILE: &str = "split.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const METRICS_FILE: &str = "metrics.json";
pub const HISTORY_FILE: &str = "history.json";
pub const MAP_FILE: &str = "map.ppm";
pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "report.txt";
pub const GRADCHECK_FILE: &str = "gradcheck.json";

pub fn dispatch(cli: &Cli, cfg: RunConfig) -> CliResult<()> {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Synth(_) => synth(&cfg, need_out(out)?),
        Command::Split(_) => split(&cfg, need_out(out)?),
        Command::Train(_) => train(cfg, need_out(out)?),
        Command::Eval(_) => eval(cfg, need_out(out)?),
        Command::Map(_) => map(cfg, need_out(out)?),
        Command::Ablate(_) => ablate(&cfg, need_out(out)?),
        Command::Gradcheck(_) => gradcheck(&cfg, out),
    }
}

fn need_out(out: Option<&Path>) -> CliResult<&Path> {
    out.ok_or_else(|| CliError::Validation("this command needs --out DIR".into()))
}

fn make_dir(dir: &Path) -> CliResult<PathBuf> {
    if dir.exists() && !dir.is_dir() {
        return Err(CliError::Runtime(format!("{} exists and is not a directory", dir.display())));
    }
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    Ok(dir.to_path_buf())
}

fn class_summary(cube: &HsiCube) -> String {
    let counts = cube.class_counts();
    let mut parts = vec![format!("unlabeled {}", counts[0])];
    for (name, n) in cube.class_names().iter().zip(&counts[1..]) {
        parts.push(format!("{name} {n}"));
    }
    parts.join(", ")
}

pub fn synth(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let scene = generate_synthetic(&cfg.synth).map_err(|e| CliError::Validation(e.to_string()))?;
    let dir = make_dir(out)?;
    let cube = scene.cube;
    cube.save(&dir.join(CUBE_FILE))?;
    cfg.save(&dir)?;
    println!("{}x{}x{} cube -> {}", cube.height(), cube.width(), cube.bands(), dir.join(CUBE_FILE).display());
    println!("{}", class_summary(&cube));
    Ok(())
}

pub fn split(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let cube = load_cube(cfg)?;
    let prep = prepare(cfg, &cube)?;
    let dir = make_dir(out)?;
    let s = &prep.split;
    s.save(&dir.join(SPLIT_FILE))?;
    cfg.save(&dir)?;
    println!(
        "{} centers: train {}, val {}, test {}, discarded {}",
        prep.patches.len(),
        s.train.len(),
        s.val.len(),
        s.test.len(),
        s.discarded
    );
    Ok(())
}

fn print_report(r: &EvalReport) {
    let line = |name: &str, m: &pyformer::train::MetricsReport| {
        println!("{name:<5} OA {:>6}  AA {:>6}  kappa {:>6}  F1 {:>6}", m.percent.oa, m.percent.aa, m.percent.kappa, m.percent.f1_macro);
    };
    line("train", &r.train);
    match &r.val {
        Some(v) => line("val", v),
        None => println!("val   (no validation centers)"),
    }
    line("test", &r.test);
}

pub fn train(mut cfg: RunConfig, out: &Path) -> CliResult<()> {
    let cube = load_cube(&cfg)?;
    resolve_model(&mut cfg, &cube)?;
    let prep = prepare(&cfg, &cube)?;
    let run = train_and_evaluate(&cfg, &cube, &prep)?;
    let dir = make_dir(out)?;
    save_checkpoint(&dir.join(CHECKPOINT_DIR), &cfg.model, &run.params)?;
    prep.split.save(&dir.join(SPLIT_FILE))?;
    write_json(&dir.join(HISTORY_FILE), &run.history)?;
    write_json(&dir.join(METRICS_FILE), &run.report)?;
    cfg.save(&dir)?;
    print_report(&run.report);
    Ok(())
}

/// Loads the checkpoint and checks it against the data the run prepares.
fn checked_checkpoint(cfg: &mut RunConfig, cube: &HsiCube) -> CliResult<PyFormerParams> {
    let (saved, params) = load_checkpoint(cfg.require_checkpoint()?)?;
    let want: &PyFormerConfig = &cfg.model;
    if saved.b_star != want.b_star {
        return Err(CliError::Validation(format!(
            "checkpoint expects B* = {} but the data is reduced to B* = {}",
            saved.b_star, want.b_star
        )));
    }
    if saved.patch_size != want.patch_size {
        return Err(CliError::Validation(format!(
            "checkpoint expects {0}x{0} patches but the data is cut into {1}x{1}",
            saved.patch_size, want.patch_size
        )));
    }
    if saved.num_classes != cube.num_classes() {
        return Err(CliError::Validation(format!(
            "checkpoint has {} classes, the cube {}",
            saved.num_classes,
            cube.num_classes()
        )));
    }
    if saved != cfg.model {
        info!("model settings taken from the checkpoint");
    }
    cfg.model = saved;
    Ok(params)
}

pub fn eval(mut cfg: RunConfig, out: &Path) -> CliResult<()> {
    let cube = load_cube(&cfg)?;
    let params = checked_checkpoint(&mut cfg, &cube)?;
    let prep = prepare(&cfg, &cube)?;
    let report = evaluate_split(&params, &cfg.model, &prep, cube.class_names())?;
    let dir = make_dir(out)?;
    write_json(&dir.join(METRICS_FILE), &report)?;
    cfg.save(&dir)?;
    print_report(&report);
    Ok(())
}

pub fn map(mut cfg: RunConfig, out: &Path) -> CliResult<()> {
    let cube = load_cube(&cfg)?;
    let params = checked_checkpoint(&mut cfg, &cube)?;
    let pca = fit_pca(&cube, cfg.model.b_star)?;
    let map = render_map(&params, &cfg.model, &cube, &pca)?;
    let dir = make_dir(out)?;
    map.image.save(&dir.join(MAP_FILE))?;
    cfg.save(&dir)?;
    let predicted = map.predictions.iter().filter(|&&p| p != 0).count();
    println!("{}x{} map, {predicted} pixels classified -> {}", map.image.width, map.image.height, dir.join(MAP_FILE).display());
    Ok(())
}

pub fn ablate(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let spec = cfg.ablation.as_ref().ok_or_else(|| CliError::Validation("no ablation axis configured".into()))?;
    let cube = load_cube(cfg)?;
    let report = run_ablation(cfg, spec, &cube)?;
    let dir = make_dir(out)?;
    let table = format_table(&report);
    write_json(&dir.join(REPORT_FILE), &report)?;
    fs::write(dir.join(TABLE_FILE), &table).map_err(|e| CliError::io(&dir.join(TABLE_FILE), e))?;
    cfg.save(&dir)?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct GradcheckReport<'a> {
    tolerance: f64,
    eps: f64,
    passed: bool,
    groups: &'a [GroupCheck],
}

fn within(g: &GroupCheck, tol: f64) -> bool {
    g.max_rel_error <= tol
}

pub fn gradcheck(cfg: &RunConfig, out: Option<&Path>) -> CliResult<()> {
    let g = &cfg.gradcheck;
    if !(g.tolerance >= 0.0) || !(g.eps > 0.0) || g.samples == 0 || g.batch == 0 {
        return Err(CliError::Validation(
            "gradcheck needs tolerance >= 0, eps > 0 and at least one sample".into(),
        ));
    }
    let model = gradcheck_config();
    let params = gradcheck_params(&model, cfg.seed)?;
    let (x, y) = gradcheck_batch(&model, g.batch, cfg.seed)?;
    let groups = check_model_gradients(&model, &params, &x, &y, g.eps, Some(g.samples))?;
    let passed = groups.iter().all(|r| within(r, g.tolerance));

    let width = groups.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in &groups {
        let status = if within(r, g.tolerance) { "ok" } else { "FAIL" };
        println!("{:<width$}  {:>4}/{:<5} {:>10.3e}  {status}", r.name, r.checked, r.numel, r.max_rel_error);
    }
    if let Some(dir) = out {
        let dir = make_dir(dir)?;
        let report = GradcheckReport { tolerance: g.tolerance, eps: g.eps, passed, groups: &groups };
        write_json(&dir.join(GRADCHECK_FILE), &report)?;
        cfg.save(&dir)?;
    }
    if passed {
        println!("all {} parameter groups within {:e}", groups.len(), g.tolerance);
        return Ok(());
    }
    let mut bad: Vec<&GroupCheck> = groups.iter().filter(|r| !within(r, g.tolerance)).collect();
    bad.sort_by(|a, b| b.max_rel_error.total_cmp(&a.max_rel_error));
    let worst: Vec<String> = bad
        .iter()
        .take(5)
        .map(|r| format!("{} [{}] rel {:.3e} (analytic {:.6e}, numeric {:.6e})", r.name, r.worst_index, r.max_rel_error, r.analytic, r.numeric))
        .collect();
    Err(CliError::Validation(format!(
        "{} of {} groups exceed tolerance {:e}; worst: {}",
        bad.len(),
        groups.len(),
        g.tolerance,
        worst.join("; ")
    )))
}
