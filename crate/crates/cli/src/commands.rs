use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use taanp::metrics::MetricReport;
use taanp::npmodel::{Checkpoint, Model32, SubTask};
use taanp::scenarios::{
    evaluate, horizon_reports, paired_signs, penetration_binning, run_density_sweep, run_fcd_ablation, run_lifecycle,
    run_placement, segment_rrmse, sign_test_p, spaced_windows, task_reports, EvalWindowing, PlacementKind,
    PlacementStrategy, TrainSetup,
};
use taanp::synthworld::{
    assign_sensors, estimated_penetration, generate_world, load_dataset, render_dataset, FeatureMask,
    SensorAssignment, World, FEATURE_DIM,
};
use taanp::training::{EpisodeLayout, EpisodeSampler, TrainState};
use taanp::uncertainty::{error_rejection_curve, pcv_bins};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{Report, RunDir};

pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const MODEL_FILE: &str = "model.ckpt";
pub const STATE_FILE: &str = "state.ckpt";
pub const EVAL_REPORT: &str = "eval.jsonl";
pub const PLACE_REPORT: &str = "place.jsonl";
pub const RESILIENCE_REPORT: &str = "resilience.jsonl";
pub const SWEEP_REPORT: &str = "sweep.jsonl";

fn load_world(cfg: &RunConfig, run: &mut RunDir) -> Result<World, CliError> {
    match &cfg.data {
        Some(dir) => {
            run.input(dir)?;
            Ok(load_dataset(dir)?)
        }
        None => Ok(generate_world(&cfg.world)?),
    }
}

fn sensors(cfg: &RunConfig, world: &World) -> Result<SensorAssignment, CliError> {
    Ok(assign_sensors(world.n_segments(), cfg.unobserved_ratio, cfg.sensor_seed)?)
}

fn load_checkpoint(path: &Path, run: &mut RunDir) -> Result<Checkpoint, CliError> {
    let ck = Checkpoint::load(path)?;
    run.input(path)?;
    run.input(&path.with_extension("bin"))?;
    Ok(ck)
}

fn load_model(cfg: &RunConfig, run: &mut RunDir) -> Result<Model32, CliError> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs `checkpoint`".into()))?;
    Ok(Model32::from_checkpoint(&load_checkpoint(path, run)?)?)
}

/// Test-period windows, capped, and the matching windowing.
fn test_windows(
    cfg: &RunConfig,
    world: &World,
    sensors: &SensorAssignment,
    mask: FeatureMask,
) -> Result<(Vec<usize>, EvalWindowing), CliError> {
    let sampler = EpisodeSampler::new(world, sensors.clone(), &cfg.training, mask)?;
    let windows = spaced_windows(sampler.test_windows(), cfg.eval.max_windows);
    let win = EvalWindowing {
        history: cfg.training.history,
        horizon: cfg.training.horizon,
        mask,
    };
    Ok((windows, win))
}

pub fn synth(cfg: &RunConfig, run: &mut RunDir) -> Result<(), CliError> {
    let world = generate_world(&cfg.world)?;
    for (name, text) in render_dataset(&world) {
        run.write(name, text.as_bytes())?;
    }
    eprintln!(
        "world: {} segments, {} steps, {:.1}% readings missing",
        world.n_segments(),
        world.n_steps(),
        100.0 * world.missing.missing_rate()
    );
    Ok(())
}

fn track_all(run: &mut RunDir, paths: Vec<PathBuf>) -> Result<(), CliError> {
    for p in paths {
        run.track_file(&p)?;
    }
    Ok(())
}

pub fn train(cfg: &RunConfig, run: &mut RunDir) -> Result<(), CliError> {
    let world = load_world(cfg, run)?;
    let sensors = sensors(cfg, &world)?;
    let sampler = EpisodeSampler::new(&world, sensors, &cfg.training, cfg.feature_mask()?)?;
    let mut state = match &cfg.resume {
        Some(path) => TrainState::<f32>::from_checkpoint(&load_checkpoint(path, run)?, &cfg.training)?,
        None => {
            let model = Model32::new(cfg.model.clone(), FEATURE_DIM, sampler.flow_scale(), cfg.seed)?;
            TrainState::new(model, &cfg.training)?
        }
    };
    let outcome = state.run(&sampler, &cfg.training, |r| {
        eprintln!(
            "epoch {:>3}  train nll {:.4} kl {:.4}  val total {:.4}  ({:.1}s)",
            r.epoch, r.train_nll, r.train_kl, r.val_total, r.wall_secs
        )
    });
    // The log is written even when training diverges.
    let mut log = Report::new("train", None);
    for r in &state.history {
        let v = serde_json::to_value(r).map_err(|e| CliError::Config(e.to_string()))?;
        log.record("epoch", v)?;
    }
    outcome?;
    log.record(
        "summary",
        json!({
            "variant": cfg.model.variant.to_string(),
            "ablation": cfg.ablation.map(|a| a.name()),
            "epochs": state.epoch,
            "best_val_total": state.best_val,
            "early_stopped": state.epoch < cfg.training.max_epochs,
            "param_checksum": format!("{:016x}", state.best.checksum()),
        }),
    )?;
    run.write(TRAIN_LOG, log.render().as_bytes())?;
    track_all(run, state.best.to_checkpoint().save(&run.dir.join(MODEL_FILE))?)?;
    track_all(run, state.save(&run.dir.join(STATE_FILE))?)?;
    Ok(())
}

pub fn eval(cfg: &RunConfig, run: &mut RunDir) -> Result<(), CliError> {
    let model = load_model(cfg, run)?;
    let world = load_world(cfg, run)?;
    let sensors = sensors(cfg, &world)?;
    let (windows, win) = test_windows(cfg, &world, &sensors, cfg.feature_mask()?)?;
    let outcomes = evaluate(&model, &world, &EpisodeLayout::from_sensors(&sensors), &windows, win, cfg.inference())?;
    let score = cfg.scoring();
    let mut report = Report::new("eval", None);
    report.record(
        "summary",
        json!({
            "windows": windows.len(),
            "targets": outcomes.len(),
            "mode": cfg.uncertainty.mode,
            "k": cfg.uncertainty.k,
            "predictive": cfg.uncertainty.predictive,
            "param_checksum": format!("{:016x}", model.checksum()),
        }),
    )?;
    for r in task_reports(&outcomes, score)? {
        report.record("task", r)?;
    }
    for r in horizon_reports(&outcomes, win.horizon, score)? {
        report.record("horizon", r)?;
    }
    let valid: Vec<_> = outcomes.iter().filter(|o| o.y.is_some()).collect();
    let pcv: Vec<Option<f64>> = valid.iter().map(|o| o.predictive.decompose().pcv).collect();
    let y: Vec<f64> = valid.iter().filter_map(|o| o.y).collect();
    let pred: Vec<f64> = valid.iter().map(|o| o.predictive.mean()).collect();
    if !cfg.eval.pcv_edges.is_empty() {
        for b in pcv_bins(&pcv, &y, &pred, &cfg.eval.pcv_edges)? {
            report.record("pcv_bin", b)?;
        }
    }
    if !cfg.eval.rejection.is_empty() {
        for p in error_rejection_curve(&pcv, &y, &pred, &cfg.eval.rejection)? {
            report.record("rejection", p)?;
        }
    }
    if !cfg.eval.penetration_edges.is_empty() {
        let est = estimated_penetration(&world.flow, &world.fcd, world.missing.flags());
        let per_seg = segment_rrmse(&outcomes, |o| o.task != SubTask::ForecastObserved);
        let samples: Vec<(f64, f64)> = per_seg.iter().map(|(&s, &v)| (est[s], v)).collect();
        for b in penetration_binning(&samples, &cfg.eval.penetration_edges)? {
            report.record("penetration_bin", b)?;
        }
    }
    run.write(EVAL_REPORT, report.render().as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct StrategySummary {
    strategy: PlacementKind,
    seeds: usize,
    mean_final_r2: f64,
    mean_final_rmse: f64,
}

pub fn place(cfg: &RunConfig, run: &mut RunDir) -> Result<(), CliError> {
    let p = &cfg.placement;
    let model = load_model(cfg, run)?;
    let world = load_world(cfg, run)?;
    let sensors = sensors(cfg, &world)?;
    let (windows, win) = test_windows(cfg, &world, &sensors, cfg.feature_mask()?)?;
    let mut report = Report::new("place", Some("placement"));
    let mut finals: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
    for &kind in &p.strategies {
        let mut r2s = Vec::new();
        let mut rmses = Vec::new();
        for &seed in &p.seeds {
            let strategy = PlacementStrategy {
                kind,
                batch_size: p.batch_size,
            };
            let spec = taanp::scenarios::InferenceSpec { seed, ..cfg.inference() };
            let rep = run_placement(&model, &world, &sensors, strategy, p.rounds, &windows, win, spec, seed)?;
            for r in &rep.rounds {
                report.record(
                    "round",
                    json!({"strategy": kind, "seed": seed, "fine_tune": rep.fine_tune, "round": r}),
                )?;
            }
            r2s.push(rep.final_r2());
            rmses.push(rep.rounds.last().map_or(f64::NAN, |r| r.rmse));
            eprintln!("{kind} seed {seed}: final R² {:.4}", rep.final_r2());
        }
        report.record(
            "summary",
            StrategySummary {
                strategy: kind,
                seeds: r2s.len(),
                mean_final_r2: mean(&r2s),
                mean_final_rmse: mean(&rmses),
            },
        )?;
        finals.insert(kind.name(), r2s);
    }
    for (better, worse) in [("uncertainty_desc", "random"), ("random", "uncertainty_asc")] {
        if let (Some(a), Some(b)) = (finals.get(better), finals.get(worse)) {
            let (wins, losses, ties) = paired_signs(a, b);
            report.record(
                "sign_test",
                json!({"better": better, "worse": worse, "wins": wins, "losses": losses, "ties": ties,
                       "p_value": sign_test_p(wins, losses)}),
            )?;
        }
    }
    run.write(PLACE_REPORT, report.render().as_bytes())?;
    Ok(())
}

pub fn resilience(cfg: &RunConfig, run: &mut RunDir) -> Result<(), CliError> {
    let world = load_world(cfg, run)?;
    let sensors = sensors(cfg, &world)?;
    let schedule = cfg.lifecycle.schedule(sensors.observed().len());
    schedule.validate(&sensors)?;
    let model = load_model(cfg, run)?;
    let (windows, win) = test_windows(cfg, &world, &sensors, cfg.feature_mask()?)?;
    let rep = run_lifecycle(&model, &world, &sensors, &schedule, &windows, win, cfg.inference(), cfg.seed)?;
    let mut report = Report::new("resilience", Some("lifecycle"));
    report.record("schedule", &schedule)?;
    for d in &rep.days {
        report.record("day", d)?;
    }
    let min = rep.days.iter().map(|d| d.retention).fold(f64::INFINITY, f64::min);
    let last = rep.days.last().map_or(f64::NAN, |d| d.retention);
    report.record(
        "summary",
        json!({"days": rep.days.len(), "min_retention": min, "final_retention": last}),
    )?;
    run.write(RESILIENCE_REPORT, report.render().as_bytes())?;
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Seed-averaged MAE/SMAPE/CRPS per subtask.
fn averaged(groups: &[&Vec<MetricReport>]) -> Vec<serde_json::Value> {
    SubTask::ALL
        .iter()
        .enumerate()
        .map(|(i, task)| {
            let avg = |f: fn(&MetricReport) -> Option<f64>| {
                let v: Vec<f64> = groups.iter().filter_map(|g| g.get(i).and_then(f)).collect();
                (!v.is_empty()).then(|| mean(&v))
            };
            json!({"task": task.name(), "mae": avg(|r| r.mae), "smape": avg(|r| r.smape), "crps": avg(|r| r.crps)})
        })
        .collect()
}

pub fn sweep(cfg: &RunConfig, run: &mut RunDir) -> Result<(), CliError> {
    let s = &cfg.sweep;
    let masks = s
        .fcd_drops
        .iter()
        .map(|d| FeatureMask::parse(d))
        .collect::<taanp::Result<Vec<_>>>()?;
    let world = load_world(cfg, run)?;
    let setup = TrainSetup {
        model: cfg.model.clone(),
        training: cfg.training.clone(),
    };
    let mut report = Report::new("sweep", Some("density"));
    let points = run_density_sweep(&world, &s.ratios, &s.seeds, &setup, cfg.inference(), cfg.eval.max_windows)?;
    for p in &points {
        report.record("density", p)?;
    }
    for &ratio in &s.ratios {
        let group: Vec<_> = points.iter().filter(|p| p.ratio == ratio).map(|p| &p.reports).collect();
        report.record("density_summary", json!({"ratio": ratio, "tasks": averaged(&group)}))?;
    }
    if !masks.is_empty() {
        let ab = run_fcd_ablation(
            &world,
            &masks,
            &s.seeds,
            cfg.unobserved_ratio,
            &setup,
            cfg.inference(),
            cfg.eval.max_windows,
        )?;
        for p in &ab {
            report.record("fcd", p)?;
        }
        for m in &masks {
            let group: Vec<_> = ab.iter().filter(|p| p.drop == m.label()).map(|p| &p.reports).collect();
            report.record("fcd_summary", json!({"drop": m.label(), "tasks": averaged(&group)}))?;
        }
    }
    run.write(SWEEP_REPORT, report.render().as_bytes())?;
    Ok(())
}
