//! Acceptance suite. Prints one PASS/FAIL line per criterion and a summary.
//! Failures make the process exit non-zero only with
//! `TAANP_ACCEPTANCE_STRICT=1`. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 2 3`.

use std::collections::{BTreeMap, HashMap};
use std::error::Error;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use diffcore::{Gradients, RngStream};
use serde_json::Value;
use taanp::metrics::{crps_gaussian, picp, qice, rrmse, smape, MaskedSeries, MetricReport, ScoreConfig};
use taanp::npmodel::{Episode, ForwardMode, Model32, Model64, ModelConfig, SubTask, Variant};
use taanp::scenarios::{
    evaluate, fit, fit_and_score, paired_signs, report_for, run_lifecycle, run_placement, sign_test_p,
    spaced_windows, EvalWindowing, InferenceSpec, LifecycleSchedule, PlacementKind, PlacementStrategy, SensingState,
    TargetOutcome, TrainSetup,
};
use taanp::synthworld::{assign_sensors, generate_world, FeatureMask, SensorAssignment, World, WorldConfig};
use taanp::training::{
    clip_global_norm, elbo_loss, elbo_value, validation_loss, Ablation, AdamW, EpisodeLayout, EpisodeSampler,
    InferenceMode, TrainingConfig,
};
use taanp::uncertainty::Mixture;

type Res<T> = Result<T, Box<dyn Error>>;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Res<Verdict> {
    Ok(Verdict {
        pass,
        detail: detail.into(),
    })
}

// Fixture and budgets.
const UNOBSERVED: f64 = 0.6;
const DROPOUT: f64 = 0.3;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const EVAL_WINDOWS: usize = 64;
const NOISY_SIGMA: f64 = 60.0;
const SCENARIO_BUDGET_SECS: f64 = 600.0;
const TRAIN_BUDGET_SECS: f64 = 900.0;

fn acc_model(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        hidden: 32,
        rep_dim: 32,
        latent_dim: 16,
        heads: 4,
        dropout: DROPOUT,
        ..ModelConfig::default()
    }
}

fn acc_training() -> TrainingConfig {
    TrainingConfig {
        episodes_per_epoch: Some(64),
        max_targets: Some(128),
        val_episodes: Some(32),
        max_epochs: 300,
        patience: 100,
        dropout_rate: DROPOUT,
        ..TrainingConfig::default()
    }
}

/// Setup for the sweeps, which train one model per point: the fixture model
/// on a shorter schedule.
fn sweep_setup() -> TrainSetup {
    TrainSetup {
        model: acc_model(Variant::Taanp),
        training: TrainingConfig {
            episodes_per_epoch: Some(48),
            max_epochs: 150,
            patience: 40,
            ..acc_training()
        },
    }
}

fn win() -> EvalWindowing {
    EvalWindowing {
        history: 4,
        horizon: 4,
        mask: FeatureMask::NONE,
    }
}

fn mc(k: usize, seed: u64) -> InferenceSpec {
    InferenceSpec {
        mode: InferenceMode::Mc,
        k,
        seed,
        ..InferenceSpec::default()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

struct Trained {
    model: Model32,
    val_nll: f64,
    secs: f64,
}

/// Seed-0 fixture world, its sensor split and lazily trained models.
struct Fixture {
    world: World,
    sensors: SensorAssignment,
    models: HashMap<(Ablation, u64), Trained>,
}

impl Fixture {
    fn new() -> Res<Self> {
        let world = generate_world(&WorldConfig::default())?;
        let sensors = assign_sensors(world.n_segments(), UNOBSERVED, 0)?;
        Ok(Self {
            world,
            sensors,
            models: HashMap::new(),
        })
    }

    fn trained(&mut self, ablation: Ablation, seed: u64) -> Res<&Trained> {
        if !self.models.contains_key(&(ablation, seed)) {
            let t = train_on(&self.world, &self.sensors, ablation, seed)?;
            self.models.insert((ablation, seed), t);
        }
        Ok(&self.models[&(ablation, seed)])
    }

    fn test_windows(&self) -> Res<Vec<usize>> {
        let sampler = EpisodeSampler::new(&self.world, self.sensors.clone(), &acc_training(), FeatureMask::NONE)?;
        Ok(spaced_windows(sampler.test_windows(), Some(EVAL_WINDOWS)))
    }
}

fn train_on(world: &World, sensors: &SensorAssignment, ablation: Ablation, seed: u64) -> Res<Trained> {
    let (model, training, _) = ablation.apply(&acc_model(Variant::Taanp), &acc_training());
    let setup = TrainSetup { model, training };
    let start = Instant::now();
    let (model, _) = fit::<f32>(world, sensors, FeatureMask::NONE, &setup, seed)?;
    let secs = start.elapsed().as_secs_f64();
    let cfg = TrainingConfig {
        seed,
        ..setup.training.clone()
    };
    let sampler = EpisodeSampler::new(world, sensors.clone(), &cfg, FeatureMask::NONE)?;
    let val_nll = validation_loss(&model, &sampler, &cfg)?.nll;
    eprintln!("  trained {} seed {seed}: val nll {val_nll:.4} in {secs:.0}s", ablation.name());
    Ok(Trained { model, val_nll, secs })
}

fn score(items: &[&TargetOutcome]) -> Res<MetricReport> {
    Ok(report_for(items.iter().copied(), ScoreConfig::default())?)
}

// 1 ------------------------------------------------------------------------

fn gradient_check(_: &mut Fixture) -> Res<Verdict> {
    let start = Instant::now();
    let world = generate_world(&WorldConfig {
        n_segments: 16,
        days: 2,
        ..WorldConfig::default()
    })?;
    let cfg = TrainingConfig {
        max_targets: Some(12),
        ..TrainingConfig::default()
    };
    let sampler = EpisodeSampler::new(&world, assign_sensors(16, 0.5, 1)?, &cfg, FeatureMask::NONE)?;
    let mcfg = ModelConfig {
        variant: Variant::Taanp,
        hidden: 8,
        rep_dim: 8,
        latent_dim: 4,
        heads: 2,
        dropout: 0.1,
        ..ModelConfig::default()
    };
    let mut model = Model64::new(mcfg, taanp::synthworld::FEATURE_DIM, sampler.flow_scale(), 5)?;
    // Zero-initialised biases put exact ReLU kinks under the probe; move off them.
    let mut jitter = RngStream::new(5, 1);
    for id in model.params().ids().collect::<Vec<_>>() {
        for v in model.params_mut().get_mut(id).data_mut() {
            *v += 0.05 * jitter.normal();
        }
    }
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut picker = RngStream::new(77, 0);
    let mut done = 0;
    while done < 20 {
        let t0 = sampler.train_windows()[picker.below(sampler.train_windows().len())];
        let Some(ep) = sampler.train_episode(t0, &mut picker)? else { continue };
        done += 1;
        let rng = RngStream::new(1000 + done, 3);
        let range = cfg.context_subsample_range;
        let (_, grads) = elbo_loss(&model, &ep, &mut rng.clone(), 1.0, range)?;
        let ids: Vec<_> = model.params().ids().collect();
        for id in ids {
            let n = model.params().get(id).numel();
            let analytic = grads.get(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
            for i in 0..n {
                let eval = |delta: f64| -> Res<f64> {
                    let mut m = model.clone();
                    m.params_mut().get_mut(id).data_mut()[i] += delta;
                    Ok(elbo_value(&m, &ep, &mut rng.clone(), 1.0, range)?.total)
                };
                let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
                let denom = fd.abs().max(analytic[i].abs()).max(1e-3);
                worst = worst.max((fd - analytic[i]).abs() / denom);
                checked += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst < 1e-3 && secs < 60.0,
        format!("max rel err {worst:.2e} over {checked} coordinates of 20 episodes in {secs:.1}s (need < 1e-3, < 60s)"),
    )
}

// 2 ------------------------------------------------------------------------

/// erf by Taylor series near zero and a continued fraction for erfc beyond.
fn erf_oracle(x: f64) -> f64 {
    if x.abs() < 2.5 {
        let mut term = x;
        let mut sum = x;
        for n in 1..200 {
            term *= -x * x / n as f64;
            sum += term / (2 * n + 1) as f64;
        }
        return sum * 2.0 / std::f64::consts::PI.sqrt();
    }
    let ax = x.abs();
    let mut frac = ax;
    for k in (1..120).rev() {
        frac = ax + (k as f64 / 2.0) / frac;
    }
    let erfc = (-ax * ax).exp() / std::f64::consts::PI.sqrt() / frac;
    (1.0 - erfc).copysign(x)
}

fn phi_oracle(z: f64) -> f64 {
    0.5 * (1.0 + erf_oracle(z / std::f64::consts::SQRT_2))
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// ∫ (F(x) − 1{x ≥ y})² dx, split at y.
fn crps_integral(mu: f64, sigma: f64, y: f64) -> f64 {
    let lo = mu.min(y) - 14.0 * sigma;
    let hi = mu.max(y) + 14.0 * sigma;
    let f = |x: f64| phi_oracle((x - mu) / sigma);
    let panels = |a: f64, b: f64| (((b - a) / (sigma / 60.0)).ceil() as usize).max(2000);
    simpson(|x| f(x).powi(2), lo, y, panels(lo, y)) + simpson(|x| (1.0 - f(x)).powi(2), y, hi, panels(y, hi))
}

fn metric_oracles(_: &mut Fixture) -> Res<Verdict> {
    let mus = [-10.0, -1.0, 0.0, 2.5, 50.0];
    let sigmas = [0.1, 0.5, 1.0, 3.0, 10.0];
    let ys = [-5.0, -0.3, 0.0, 1.0, 40.0];
    let mut worst = 0.0f64;
    for &mu in &mus {
        for &s in &sigmas {
            for &y in &ys {
                worst = worst.max((crps_gaussian(mu, s, y)? - crps_integral(mu, s, y)).abs());
            }
        }
    }
    let exact = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let y = [10.0, 20.0, 30.0];
    let s0 = smape(&MaskedSeries::new(&y, &y))?;
    let s200 = smape(&MaskedSeries::new(&[0.0], &[5.0]))?;
    let r10 = rrmse(&MaskedSeries::new(&[100.0, 100.0], &[110.0, 90.0]))?;
    let pile = qice(&[0.55; 100], 10)?;
    let ok = worst < 1e-6 && exact(s0, 0.0) && exact(s200, 200.0) && exact(r10, 10.0) && exact(pile, 0.18);
    verdict(
        ok,
        format!(
            "crps max |closed − integral| {worst:.2e} on 125 points; smape {s0}, {s200}; rrmse {r10}; qice pileup {pile}"
        ),
    )
}

// 3 ------------------------------------------------------------------------

fn decomposition_identity(fx: &mut Fixture) -> Res<Verdict> {
    let model = fx.trained(Ablation::Full, 0)?.model.clone();
    let windows = fx.test_windows()?;
    let layout = EpisodeLayout::from_sensors(&fx.sensors);
    let outcomes = evaluate(&model, &fx.world, &layout, &windows[..4], win(), mc(10, 3))?;
    let identity = outcomes.iter().all(|o| {
        let d = o.predictive.decompose();
        d.total_var == d.au + d.eu
    });
    let mut rng = RngStream::new(31, 0);
    let mut worst = 0.0f64;
    let picks: Vec<usize> = (0..10).map(|i| i * outcomes.len() / 10).collect();
    for &i in &picks {
        let mix = &outcomes[i].predictive;
        let d = mix.decompose();
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                let (m, s) = mix.components()[rng.below(mix.k())];
                m + s * rng.normal()
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        worst = worst.max((var - d.total_var).abs() / d.total_var);
    }
    verdict(
        identity && worst < 0.02,
        format!(
            "total = au + eu on all {} targets: {identity}; 1e5-draw variance max rel err {:.2}% over {} mixtures",
            outcomes.len(),
            worst * 100.0,
            picks.len()
        ),
    )
}

// 4 ------------------------------------------------------------------------

fn calibrated_data(_: &mut Fixture) -> Res<Verdict> {
    let n = 100_000;
    let mut rng = RngStream::new(4, 4);
    let (mut lo, mut hi, mut ys, mut pits) = (vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        let mu = rng.uniform_range(0.0, 500.0);
        let sigma = rng.uniform_range(1.0, 60.0);
        let y = mu + sigma * rng.normal();
        let m = Mixture::single(mu, sigma);
        let (l, h) = m.interval(0.05)?;
        lo.push(l);
        hi.push(h);
        ys.push(y);
        pits.push(m.cdf(y));
    }
    let p = picp(&lo, &hi, &ys, None)?;
    let q = qice(&pits, 10)?;
    verdict(
        (0.947..=0.953).contains(&p) && q < 0.01,
        format!("PICP {p:.4} (need [0.947, 0.953]), QICE {q:.4} (need < 0.01) over {n} cases"),
    )
}

// 5 ------------------------------------------------------------------------

fn trained_calibration(fx: &mut Fixture) -> Res<Verdict> {
    let t = fx.trained(Ablation::Full, 0)?;
    let (model, secs) = (t.model.clone(), t.secs);
    let windows = fx.test_windows()?;
    let layout = EpisodeLayout::from_sensors(&fx.sensors);
    let outcomes = evaluate(&model, &fx.world, &layout, &windows, win(), mc(10, 0))?;
    let held_out: Vec<_> = outcomes.iter().filter(|o| o.task != SubTask::ForecastObserved).collect();
    let r = score(&held_out)?;
    let (p, q) = (r.picp.unwrap_or(f64::NAN), r.qice.unwrap_or(f64::NAN));

    let noisy = generate_world(&WorldConfig {
        noise_sigma: NOISY_SIGMA,
        ..WorldConfig::default()
    })?;
    let sensors = assign_sensors(noisy.n_segments(), UNOBSERVED, 0)?;
    let tn = train_on(&noisy, &sensors, Ablation::Full, 0)?;
    let out = evaluate(&tn.model, &noisy, &EpisodeLayout::from_sensors(&sensors), &windows, win(), mc(10, 0))?;
    let au: Vec<f64> = out
        .iter()
        .filter(|o| o.task == SubTask::ForecastObserved && o.y.is_some())
        .map(|o| o.predictive.decompose().au)
        .collect();
    let sigma_hat = mean(&au).sqrt();
    let rel = (sigma_hat - NOISY_SIGMA).abs() / NOISY_SIGMA;
    let ok = (0.88..=0.98).contains(&p) && q < 0.03 && rel <= 0.25 && secs.max(tn.secs) <= TRAIN_BUDGET_SECS;
    verdict(
        ok,
        format!(
            "held-out PICP {p:.3} (need [0.88, 0.98]), QICE {q:.4} (need < 0.03) on {} targets; \
             recovered σ {sigma_hat:.1} vs injected {NOISY_SIGMA} ({:.1}% off, need ≤ 25%); training {secs:.0}s / {:.0}s",
            held_out.len(),
            rel * 100.0,
            tn.secs
        ),
    )
}

// 6 ------------------------------------------------------------------------

const GP_LENGTH: f64 = 0.5;
const GP_NOISE: f64 = 0.1;
const GP_OFFSET: f64 = 5.0;

fn rbf(a: f64, b: f64) -> f64 {
    (-(a - b).powi(2) / (2.0 * GP_LENGTH * GP_LENGTH)).exp()
}

/// Solve `a·x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap_or(c);
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn cholesky(k: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = k.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|p| l[i][p] * l[j][p]).sum();
            l[i][j] = if i == j { (k[i][i] - s).sqrt() } else { (k[i][j] - s) / l[j][j] };
        }
    }
    l
}

struct GpTask {
    cx: Vec<f64>,
    cy: Vec<f64>,
    tx: Vec<f64>,
    ty: Vec<f64>,
}

fn gp_task(rng: &mut RngStream) -> GpTask {
    loop {
        let nc = 3 + rng.below(18);
        let n = nc + 20;
        let xs: Vec<f64> = (0..n).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
        let k: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| rbf(xs[i], xs[j]) + if i == j { 1e-8 } else { 0.0 }).collect())
            .collect();
        let l = cholesky(&k);
        let e: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let ys: Vec<f64> = (0..n)
            .map(|i| GP_OFFSET + (0..=i).map(|j| l[i][j] * e[j]).sum::<f64>() + GP_NOISE * rng.normal())
            .collect();
        if ys.iter().all(|y| *y >= 0.0) {
            return GpTask {
                cx: xs[..nc].to_vec(),
                cy: ys[..nc].to_vec(),
                tx: xs[nc..].to_vec(),
                ty: ys[nc..].to_vec(),
            };
        }
    }
}

/// Fixed radial features of x. Dot-product attention on a raw scalar input
/// cannot express "nearby", so the network sees this encoding instead.
const GP_CENTRES: usize = 9;

fn gp_features(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .flat_map(|&x| (0..GP_CENTRES).map(move |c| rbf(x, -2.0 + 0.5 * c as f64)))
        .collect()
}

impl GpTask {
    fn episode(&self) -> Res<Episode> {
        Ok(Episode::new(
            GP_CENTRES,
            gp_features(&self.cx),
            self.cy.clone(),
            gp_features(&self.tx),
            vec![SubTask::EstimateUnobserved; self.tx.len()],
            self.ty.iter().map(|&y| Some(y)).collect(),
        )?)
    }

    /// Exact posterior predictive `(mean, std)` of the noisy targets.
    fn posterior(&self) -> Vec<(f64, f64)> {
        let n = self.cx.len();
        let k: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| rbf(self.cx[i], self.cx[j]) + if i == j { GP_NOISE * GP_NOISE } else { 0.0 })
                    .collect()
            })
            .collect();
        let alpha = solve(k.clone(), self.cy.iter().map(|y| y - GP_OFFSET).collect());
        self.tx
            .iter()
            .map(|&x| {
                let ks: Vec<f64> = self.cx.iter().map(|&c| rbf(x, c)).collect();
                let v = solve(k.clone(), ks.clone());
                let mu = GP_OFFSET + ks.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>();
                let var = 1.0 - ks.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + GP_NOISE * GP_NOISE;
                (mu, var.max(1e-12).sqrt())
            })
            .collect()
    }
}

fn gp_oracle(_: &mut Fixture) -> Res<Verdict> {
    let cfg = ModelConfig {
        variant: Variant::Anp,
        hidden: 64,
        rep_dim: 64,
        latent_dim: 32,
        heads: 4,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let mut model = Model64::new(cfg, GP_CENTRES, 1.0, 0)?;
    let mut opt = AdamW::new(model.params(), 1e-3, 0.0, 0.9, 0.999, 1e-8);
    let mut rng = RngStream::new(6, 1);
    let (steps, batch) = (12000, 8);
    let start = Instant::now();
    for _ in 0..steps {
        let mut acc = Gradients::empty(model.params().len());
        for _ in 0..batch {
            let ep = gp_task(&mut rng).episode()?;
            let (_, g) = elbo_loss(&model, &ep, &mut rng, 1.0, (0.5, 1.0))?;
            acc.merge(&g);
        }
        acc.scale(1.0 / batch as f64);
        clip_global_norm(&mut acc, 5.0);
        opt.step(model.params_mut(), &acc);
    }
    let train_secs = start.elapsed().as_secs_f64();
    let mut test = RngStream::new(6, 2);
    let (mut np, mut gp) = (Vec::new(), Vec::new());
    for _ in 0..200 {
        let task = gp_task(&mut test);
        let (pred, _) = model.forward(&task.episode()?, ForwardMode::InferPlain, &mut RngStream::new(0, 0))?;
        for (i, (m, s)) in task.posterior().into_iter().enumerate() {
            gp.push(crps_gaussian(m, s, task.ty[i])?);
            np.push(crps_gaussian(pred.mu[i], pred.sigma[i], task.ty[i])?);
        }
    }
    let (np, gp) = (mean(&np), mean(&gp));
    verdict(
        np <= 1.5 * gp,
        format!(
            "ANP mean CRPS {np:.4} vs exact GP {gp:.4} (ratio {:.3}, need ≤ 1.5) on 200 episodes; trained {steps}×{batch} episodes in {train_secs:.0}s",
            np / gp
        ),
    )
}

// 7 ------------------------------------------------------------------------

fn mc_dropout_effect(fx: &mut Fixture) -> Res<Verdict> {
    let windows = fx.test_windows()?;
    let layout = EpisodeLayout::from_sensors(&fx.sensors);
    let (mut q1, mut q10) = (Vec::new(), Vec::new());
    // Diagnostics only: per-subtask means at K=1 and K=10.
    let mut by_task = vec![(Vec::new(), Vec::new()); SubTask::ALL.len()];
    for seed in SEEDS {
        let model = fx.trained(Ablation::Full, seed)?.model.clone();
        for k in [1, 10] {
            let o = evaluate(&model, &fx.world, &layout, &windows, win(), mc(k, seed))?;
            let all: Vec<_> = o.iter().collect();
            let q = score(&all)?.qice.unwrap_or(f64::NAN);
            if k == 1 { q1.push(q) } else { q10.push(q) }
            for (ti, task) in SubTask::ALL.iter().enumerate() {
                let part: Vec<_> = o.iter().filter(|t| t.task == *task).collect();
                let q = score(&part)?.qice.unwrap_or(f64::NAN);
                if k == 1 { by_task[ti].0.push(q) } else { by_task[ti].1.push(q) }
            }
        }
    }
    let (a, b) = (mean(&q1), mean(&q10));
    let tasks: Vec<String> = SubTask::ALL
        .iter()
        .zip(&by_task)
        .map(|(t, (x, y))| format!("{} {:.4}/{:.4}", t.name(), mean(x), mean(y)))
        .collect();
    verdict(
        a > b,
        format!(
            "mean QICE K=1 {a:.4} vs K=10 {b:.4} over seeds {SEEDS:?} (per seed K=1 {q1:.4?}, K=10 {q10:.4?}; \
             by subtask K=1/K=10: {})",
            tasks.join(", ")
        ),
    )
}

// 8 ------------------------------------------------------------------------

fn task_isolation(fx: &mut Fixture) -> Res<Verdict> {
    let world = generate_world(&WorldConfig {
        n_segments: 16,
        days: 2,
        ..WorldConfig::default()
    })?;
    let sensors = assign_sensors(16, 0.5, 0)?;
    let cfg = TrainingConfig::default();
    let sampler = EpisodeSampler::new(&world, sensors, &cfg, FeatureMask::NONE)?;
    let small = |variant| ModelConfig {
        variant,
        hidden: 16,
        rep_dim: 16,
        latent_dim: 8,
        heads: 2,
        dropout: 0.1,
        ..ModelConfig::default()
    };
    let model = Model64::new(small(Variant::Taanp), taanp::synthworld::FEATURE_DIM, sampler.flow_scale(), 2)?;
    let ids = model.ids().clone();
    let queries = [ids.wq_s, ids.wq_t, ids.wq_st];
    let mut isolated = true;
    for &t0 in sampler.test_windows().iter().step_by(40).take(5) {
        let Some(ep) = sampler.eval_episode(t0)? else { continue };
        for (q, task) in SubTask::ALL.iter().enumerate() {
            let idx: Vec<usize> = (0..ep.n_targets())
                .filter(|&i| ep.target_tasks()[i] == *task && ep.target_y()[i].is_some())
                .collect();
            if idx.is_empty() {
                continue;
            }
            let sub = ep.with_target_subset(&idx)?;
            let (_, g) = elbo_loss(&model, &sub, &mut RngStream::new(t0 as u64, 1), 1.0, (0.5, 1.0))?;
            for (j, &id) in queries.iter().enumerate() {
                let nonzero = g.get(id).is_some_and(|v| v.iter().any(|x| *x != 0.0));
                isolated &= nonzero == (j == q);
            }
        }
    }

    let mut tied = model.clone();
    let shared = tied.params().get(ids.wq_s).clone();
    for id in [ids.wq_t, ids.wq_st] {
        *tied.params_mut().get_mut(id) = shared.clone();
    }
    let mut anp = Model64::new(small(Variant::Anp), taanp::synthworld::FEATURE_DIM, sampler.flow_scale(), 9)?;
    for id in anp.params().ids().collect::<Vec<_>>() {
        let name = match anp.params().name(id) {
            "attn.wq" => "attn.wq_s".to_string(),
            other => other.to_string(),
        };
        let src = tied.params().find(&name).ok_or("missing tied parameter")?;
        *anp.params_mut().get_mut(id) = tied.params().get(src).clone();
    }
    let mut tie_err = 0.0f64;
    for &t0 in sampler.test_windows().iter().step_by(40).take(5) {
        let Some(ep) = sampler.eval_episode(t0)? else { continue };
        let (a, _) = tied.forward(&ep, ForwardMode::InferPlain, &mut RngStream::new(0, 0))?;
        let (b, _) = anp.forward(&ep, ForwardMode::InferPlain, &mut RngStream::new(0, 0))?;
        for i in 0..a.mu.len() {
            tie_err = tie_err.max((a.mu[i] - b.mu[i]).abs()).max((a.sigma[i] - b.sigma[i]).abs());
        }
    }

    let (mut full, mut plain) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        full.push(fx.trained(Ablation::Full, seed)?.val_nll);
        plain.push(fx.trained(Ablation::NoTamqm, seed)?.val_nll);
    }
    // A lower NLL is a win for the full model.
    let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
    let (wins, losses, _) = paired_signs(&neg(&full), &neg(&plain));
    let p = sign_test_p(wins, losses);
    let (mf, mp) = (mean(&full), mean(&plain));
    verdict(
        isolated && tie_err <= 1e-10 && mf <= mp,
        format!(
            "query-gradient isolation {isolated}; tied vs ANP max diff {tie_err:.1e}; val NLL full {mf:.4} vs no_tamqm {mp:.4} \
             ({wins}/{} seeds better, sign-test p {p:.3})",
            SEEDS.len()
        ),
    )
}

// 9 + 10 -------------------------------------------------------------------

struct ScenarioRuns {
    checksum: String,
    placement: Vec<(PlacementKind, u64, taanp::scenarios::PlacementReport)>,
    lifecycle: taanp::scenarios::LifecycleReport,
    max_run_secs: f64,
}

fn scenario_runs(fx: &mut Fixture) -> Res<ScenarioRuns> {
    let model = fx.trained(Ablation::Full, 0)?.model.clone();
    let windows: Vec<usize> = spaced_windows(&fx.test_windows()?, Some(8));
    let mut placement = Vec::new();
    let mut max_run_secs = 0.0f64;
    for kind in [PlacementKind::UncertaintyDesc, PlacementKind::Random, PlacementKind::UncertaintyAsc] {
        for seed in 0..10u64 {
            let start = Instant::now();
            let strategy = PlacementStrategy { kind, batch_size: 4 };
            let rep = run_placement(&model, &fx.world, &fx.sensors, strategy, 8, &windows, win(), mc(10, seed), seed)?;
            max_run_secs = max_run_secs.max(start.elapsed().as_secs_f64());
            placement.push((kind, seed, rep));
        }
    }
    let start = Instant::now();
    let schedule = LifecycleSchedule::damage_repair_add(3, LifecycleSchedule::desk_per_day(fx.sensors.observed().len()));
    let lifecycle = run_lifecycle(&model, &fx.world, &fx.sensors, &schedule, &windows, win(), mc(10, 0), 0)?;
    max_run_secs = max_run_secs.max(start.elapsed().as_secs_f64());
    Ok(ScenarioRuns {
        checksum: format!("{:016x}", model.checksum()),
        placement,
        lifecycle,
        max_run_secs,
    })
}

fn scenario_properties(fx: &mut Fixture, runs: &ScenarioRuns) -> Res<Verdict> {
    let mut notes = Vec::new();
    let mut ok = true;

    let mut state = SensingState::new(&fx.sensors);
    let mut rng = RngStream::new(9, 9);
    let damaged = state.damage(6, &mut rng);
    let repaired = state.repair(6);
    let fifo = repaired == damaged && state.observed() == fx.sensors.observed();
    ok &= fifo;
    notes.push(format!("FIFO restore {fifo}"));

    let model = fx.trained(Ablation::Full, 0)?.model.clone();
    let windows = spaced_windows(&fx.test_windows()?, Some(8));
    let empty = run_lifecycle(&model, &fx.world, &fx.sensors, &LifecycleSchedule::default(), &windows, win(), mc(10, 0), 0)?;
    let unit = empty.days.iter().all(|d| d.retention == 1.0);
    ok &= unit;
    notes.push(format!("empty-schedule retention 1.0 {unit}"));

    let finals = |kind| -> Vec<f64> {
        runs.placement.iter().filter(|(k, _, _)| *k == kind).map(|(_, _, r)| r.final_r2()).collect()
    };
    let (desc, rand, asc) = (
        finals(PlacementKind::UncertaintyDesc),
        finals(PlacementKind::Random),
        finals(PlacementKind::UncertaintyAsc),
    );
    let (md, mr, ma) = (mean(&desc), mean(&rand), mean(&asc));
    let (w1, l1, _) = paired_signs(&desc, &rand);
    let (w2, l2, _) = paired_signs(&rand, &asc);
    let order = md >= mr && mr >= ma;
    ok &= order;
    notes.push(format!(
        "placement final R² desc {md:.4} ≥ random {mr:.4} ≥ asc {ma:.4}: {order} (sign-test p {:.3}, {:.3})",
        sign_test_p(w1, l1),
        sign_test_p(w2, l2)
    ));

    let setup = sweep_setup();
    let ratios = [0.1, 0.5, 0.9];
    let start = Instant::now();
    let mut mae: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    // SMAPE and CRPS are reported alongside; the check itself is on MAE.
    let mut other: BTreeMap<(usize, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (ri, &ratio) in ratios.iter().enumerate() {
        for seed in SEEDS {
            let sensors = assign_sensors(fx.world.n_segments(), ratio, seed)?;
            let reps = fit_and_score(&fx.world, &sensors, FeatureMask::NONE, &setup, mc(10, seed), Some(24), seed)?;
            for (ti, r) in reps.iter().enumerate() {
                mae.entry((ti, ri)).or_default().push(r.mae.unwrap_or(f64::NAN));
                let e = other.entry((ti, ri)).or_default();
                e.0.push(r.smape.unwrap_or(f64::NAN));
                e.1.push(r.crps.unwrap_or(f64::NAN));
            }
            eprintln!(
                "  density {ratio} seed {seed}: MAE {:.1?}",
                reps.iter().map(|r| r.mae.unwrap_or(f64::NAN)).collect::<Vec<_>>()
            );
        }
    }
    let sweep_secs = start.elapsed().as_secs_f64();
    let mut monotone = true;
    let mut curves = Vec::new();
    for (ti, task) in SubTask::ALL.iter().enumerate() {
        let curve: Vec<f64> = (0..ratios.len()).map(|ri| mean(&mae[&(ti, ri)])).collect();
        monotone &= curve.windows(2).all(|w| w[1] >= w[0]);
        let smape: Vec<f64> = (0..ratios.len()).map(|ri| mean(&other[&(ti, ri)].0)).collect();
        let crps: Vec<f64> = (0..ratios.len()).map(|ri| mean(&other[&(ti, ri)].1)).collect();
        curves.push(format!("{} MAE {curve:.1?} SMAPE {smape:.1?} CRPS {crps:.1?}", task.name()));
    }
    ok &= monotone && sweep_secs <= SCENARIO_BUDGET_SECS;
    notes.push(format!(
        "density MAE at {ratios:?} non-decreasing {monotone} [{}] in {sweep_secs:.0}s",
        curves.join("; ")
    ));

    let start = Instant::now();
    let mut eu_mae: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for seed in SEEDS {
        let sensors = assign_sensors(fx.world.n_segments(), UNOBSERVED, seed)?;
        for drop in ["fcd_flow", "fcd_speed"] {
            let mask = FeatureMask::parse(drop)?;
            let reps = fit_and_score(&fx.world, &sensors, mask, &setup, mc(10, seed), Some(24), seed)?;
            eu_mae.entry(drop).or_default().push(reps[0].mae.unwrap_or(f64::NAN));
        }
    }
    let fcd_secs = start.elapsed().as_secs_f64();
    let (mf, ms) = (mean(&eu_mae["fcd_flow"]), mean(&eu_mae["fcd_speed"]));
    let fcd = mf > ms;
    ok &= fcd && fcd_secs <= SCENARIO_BUDGET_SECS;
    notes.push(format!(
        "estimation MAE without fcd_flow {mf:.2} > without fcd_speed {ms:.2}: {fcd} in {fcd_secs:.0}s"
    ));

    ok &= runs.max_run_secs <= SCENARIO_BUDGET_SECS;
    notes.push(format!("longest placement/lifecycle run {:.0}s", runs.max_run_secs));
    verdict(ok, notes.join("; "))
}

fn scenarios(fx: &mut Fixture) -> Res<Verdict> {
    let runs = scenario_runs(fx)?;
    let v = scenario_properties(fx, &runs)?;
    let adapt = no_retrain(fx, &runs)?;
    ADAPT.with(|a| *a.borrow_mut() = Some(adapt));
    Ok(v)
}

thread_local! {
    static ADAPT: std::cell::RefCell<Option<Verdict>> = const { std::cell::RefCell::new(None) };
}

fn no_retrain(fx: &mut Fixture, runs: &ScenarioRuns) -> Res<Verdict> {
    let layout0 = fx.sensors.observed().to_vec();
    let mut steps = 0usize;
    let mut unseen = 0usize;
    let mut constant = true;
    let mut finite = true;
    for (_, _, rep) in &runs.placement {
        for r in &rep.rounds {
            steps += 1;
            constant &= r.param_checksum == runs.checksum;
            finite &= r.r2.is_finite() && r.rmse.is_finite();
            unseen += usize::from(r.observed != layout0.len());
        }
    }
    let mut dips = Vec::new();
    for d in &runs.lifecycle.days {
        steps += 1;
        constant &= d.param_checksum == runs.checksum;
        finite &= d.rrmse.is_finite() && d.retention.is_finite();
        dips.push(format!("{:.3}", d.retention));
        unseen += usize::from(d.day > 0 && (d.damaged > 0 || d.observed != layout0.len()));
    }
    verdict(
        constant && finite && unseen > 0,
        format!(
            "checksum {} constant over {steps} placement/lifecycle steps: {constant}; all forwards finite: {finite}; \
             {unseen} steps on layouts other than the training one; lifecycle retention by day [{}]",
            runs.checksum,
            dips.join(", ")
        ),
    )
}

fn adaptation(_: &mut Fixture) -> Res<Verdict> {
    ADAPT
        .with(|a| a.borrow_mut().take())
        .ok_or_else(|| "needs the scenario runs of criterion 9 in the same invocation".into())
}

// 11 -----------------------------------------------------------------------

const CLI_CONFIG: &str = r#"
data = "world"
checkpoint = "train/model.ckpt"

[world]
n_segments = 20
days = 3

[model]
hidden = 16
rep_dim = 16
latent_dim = 8
heads = 2

[training]
max_epochs = 4
episodes_per_epoch = 8
batch_episodes = 4
max_targets = 32
val_episodes = 4
dropout_rate = 0.2

[uncertainty]
k = 4

[eval]
max_windows = 6
pcv_edges = [0.0, 25.0, 50.0, 100.0, 10000.0]
rejection = [0.0, 0.1, 0.5]
penetration_edges = [0.0, 0.05, 0.2]

[placement]
strategies = ["uncertainty_desc", "random"]
rounds = 2
seeds = [0, 1]

[lifecycle]
stage_days = 1

[sweep]
ratios = [0.3, 0.7]
fcd_drops = ["", "fcd_flow"]
"#;

fn taanp(dir: &Path, args: &[&str]) -> Res<()> {
    let out = Command::new(env!("CARGO_BIN_EXE_taanp")).args(args).current_dir(dir).output()?;
    if !out.status.success() {
        return Err(format!("taanp {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)).into());
    }
    Ok(())
}

fn reproducibility(_: &mut Fixture) -> Res<Verdict> {
    let tmp = tempfile::tempdir()?;
    let dir = tmp.path();
    std::fs::write(dir.join("run.toml"), CLI_CONFIG)?;
    let runs: [(&str, &[&str]); 7] = [
        ("world", &["synth"]),
        ("train", &["train"]),
        ("train_more", &["train", "--resume", "train/state.ckpt", "--seed", "0"]),
        ("eval", &["eval"]),
        ("place", &["place"]),
        ("resilience", &["resilience"]),
        ("sweep", &["sweep"]),
    ];
    for (out, args) in runs {
        let mut a = args.to_vec();
        a.extend(["--config", "run.toml", "--out", out]);
        taanp(dir, &a)?;
    }
    let mut compared = 0usize;
    let mut mismatches = Vec::new();
    for (out, _) in runs {
        let manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.join(out).join("manifest.json"))?)?;
        let command = manifest["command"].as_str().ok_or("manifest lacks command")?;
        let config = format!("{out}/{}", manifest["config_file"].as_str().ok_or("manifest lacks config_file")?);
        let replay = format!("{out}_replay");
        taanp(dir, &[command, "--config", &config, "--out", &replay])?;
        for f in manifest["files"].as_array().ok_or("manifest lacks files")? {
            let name = f["path"].as_str().ok_or("bad file entry")?;
            let a = std::fs::read(dir.join(out).join(name))?;
            let b = std::fs::read(dir.join(&replay).join(name))?;
            compared += 1;
            if a != b {
                mismatches.push(format!("{out}/{name}"));
            }
        }
    }
    verdict(
        mismatches.is_empty(),
        format!(
            "{compared} files from {} commands replayed from their manifests; differing: {mismatches:?}",
            runs.len()
        ),
    )
}

type Criterion = fn(&mut Fixture) -> Res<Verdict>;

fn main() {
    let criteria: [(&str, Criterion); 11] = [
        ("gradient correctness", gradient_check),
        ("metric oracles", metric_oracles),
        ("decomposition identity", decomposition_identity),
        ("calibration on calibrated data", calibrated_data),
        ("trained-model calibration", trained_calibration),
        ("GP oracle sanity", gp_oracle),
        ("MC-dropout effect", mc_dropout_effect),
        ("task isolation and reductions", task_isolation),
        ("scenario properties", scenarios),
        ("no-retrain adaptation", adaptation),
        ("CLI reproducibility", reproducibility),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut fx = match Fixture::new() {
        Ok(f) => f,
        Err(e) => {
            println!("FAIL fixture: {e}");
            std::process::exit(1);
        }
    };
    let (mut failed, mut run_count) = (0, 0);
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) && !(n == 9 && selected.contains(&10)) {
            continue;
        }
        let start = Instant::now();
        let v = run(&mut fx).unwrap_or_else(|e| Verdict {
            pass: false,
            detail: format!("error: {e}"),
        });
        let secs = start.elapsed().as_secs_f64();
        if !selected.is_empty() && n == 9 && !selected.contains(&9) {
            continue;
        }
        run_count += 1;
        failed += usize::from(!v.pass);
        println!(
            "{} {n:>2} {name}: {} [{secs:.0}s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", run_count - failed);
    if failed > 0 && std::env::var("TAANP_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
