use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use dynlearn::config::{ControlMode, ModelChoice, RunConfig};
use dynlearn::control::{closed_loop, estimate_p, GainSchedule, Regulator, Tracker};
use dynlearn::eval::{
    evaluate_model, tracking_metrics, train_blackbox, BlackBoxModel, MeanStd, Metrics, MetricsReport, Physical, Predictor,
    METRICS_SCHEMA_VERSION,
};
use dynlearn::learning::{train, Checkpoint, EpochStats, SavedModel, TrainingSummary, TransitionDataset};
use dynlearn::mechanics::MechanicalModel;
use dynlearn::physnets::{ModelKind, StructuredModel};
use dynlearn::plants::{generate_dataset, save_trajectories, Plant, RawTrajectory};
use dynlearn::Error;

#[derive(Parser)]
#[command(name = "dynlearn", version, about = "Learn structured robot dynamics from trajectories and control with them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the plant and write a transition dataset, raw trajectories and a manifest.
    GenData,
    /// Train a model on the training split and write a checkpoint.
    Train,
    /// Roll a model out over the test trajectories and write the predictions.
    Predict,
    /// Run the regulation or tracking controller in closed loop with the plant.
    Control,
    /// Evaluate one-step, free-rollout and windowed errors on the test split.
    Eval,
    /// Summarise a checkpoint (or dataset) and check model/plant consistency.
    Inspect,
}

#[derive(Args)]
struct Flags {
    /// TOML or JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// lnn, hnn or blackbox.
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    plant: Option<String>,
    /// Sample period of generated data and step of closed-loop simulation.
    #[arg(long, global = true)]
    dt: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Hidden widths, e.g. "32,32,32".
    #[arg(long, global = true)]
    hidden: Option<String>,
    /// Windowed-rollout reset period in samples.
    #[arg(long, global = true)]
    window: Option<usize>,
    /// Rollout horizon in samples.
    #[arg(long, global = true)]
    horizon: Option<usize>,
    /// "KP,KD" or "kp0,kp1;kd0,kd1".
    #[arg(long, global = true)]
    gains: Option<String>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset CSV to use instead of `<out>/dataset.csv`.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Checkpoint to load instead of `<out>/model.json`.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Use the analytic plant as the model.
    #[arg(long, global = true)]
    oracle: bool,
}

fn resolve_config(flags: &Flags) -> Result<RunConfig, Error> {
    let mut cfg = match &flags.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_env(|k| std::env::var(k).ok())?;
    if let Some(m) = &flags.model {
        cfg.model = ModelChoice::from_str(m)?;
    }
    if let Some(p) = &flags.plant {
        cfg.plant = p.clone();
    }
    if let Some(dt) = flags.dt {
        cfg.data.sample_dt = dt;
        cfg.control.dt = dt;
    }
    if let Some(e) = flags.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    if let Some(h) = &flags.hidden {
        let widths = h
            .split(',')
            .map(|w| w.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::Config {
                path: "network.hidden".into(),
                message: format!("`{h}`: {e}"),
            })?;
        if cfg.model == ModelChoice::Blackbox {
            cfg.network.blackbox_hidden = widths;
        } else {
            cfg.network.hidden = Some(widths);
        }
    }
    if let Some(w) = flags.window {
        cfg.eval.windows = vec![w];
    }
    if let Some(h) = flags.horizon {
        cfg.eval.horizon = h;
    }
    if let Some(g) = &flags.gains {
        cfg.control.gains = GainSchedule::from_str(g).map_err(|e| match e {
            Error::Config { path, message } => Error::Config {
                path: format!("control.{path}"),
                message,
            },
            other => other,
        })?;
    }
    if let Some(out) = &flags.out {
        cfg.out = out.to_string_lossy().into_owned();
    }
    if let Some(d) = &flags.data {
        cfg.data.path = Some(d.to_string_lossy().into_owned());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Wall-clock numbers live apart from the metrics so those stay reproducible.
fn write_timings(out: &Path, command: &str, seconds: &[(&str, f64)]) -> Result<(), Error> {
    let map: serde_json::Map<String, Value> = seconds.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
    write_json(&out.join("timings.json"), &json!({ "command": command, "seconds": map }))
}

fn report(cfg: &RunConfig, command: &str, model: &str, metrics: Metrics) -> MetricsReport {
    MetricsReport {
        schema_version: METRICS_SCHEMA_VERSION,
        command: command.into(),
        model: model.into(),
        plant: Some(cfg.plant.clone()),
        seed: cfg.seed,
        config_sha256: cfg.hash(),
        metrics,
    }
}

struct Run {
    cfg: RunConfig,
    out: PathBuf,
    checkpoint: PathBuf,
    oracle: bool,
}

impl Run {
    fn dataset(&self) -> Result<TransitionDataset, Error> {
        let path = self.cfg.data.path.as_ref().map(PathBuf::from).unwrap_or_else(|| self.out.join("dataset.csv"));
        if path.exists() {
            return TransitionDataset::load(&path);
        }
        if self.cfg.data.path.is_some() {
            return Err(Error::Config {
                path: "data.path".into(),
                message: format!("{} does not exist", path.display()),
            });
        }
        let generated = generate_dataset(&self.cfg.gen_spec()?)?;
        let data = generated.datasets.into_iter().next().expect("one sample rate");
        data.save(&path)?;
        Ok(data)
    }

    /// Trajectory-level split; a zero test fraction evaluates on everything.
    fn split(&self, data: &TransitionDataset) -> Result<(TransitionDataset, TransitionDataset), Error> {
        if self.cfg.data.test_fraction == 0.0 {
            return Ok((data.clone(), data.clone()));
        }
        data.split(self.cfg.data.test_fraction, self.cfg.seed)
    }

    fn model(&self) -> Result<Loaded, Error> {
        if self.oracle {
            return Ok(Loaded::Oracle(Physical {
                model: self.cfg.plant()?,
                kind: self.cfg.model.kind(),
            }));
        }
        Ok(Loaded::Saved(Checkpoint::load(&self.checkpoint)?.to_model()?))
    }
}

enum Loaded {
    Saved(SavedModel),
    Oracle(Physical<Plant>),
}

impl Loaded {
    fn name(&self) -> &'static str {
        match self {
            Loaded::Oracle(_) => "oracle",
            Loaded::Saved(SavedModel::BlackBox(_)) => "blackbox",
            Loaded::Saved(SavedModel::Structured(m)) => match m.kind {
                ModelKind::Lnn => "lnn",
                ModelKind::Hnn => "hnn",
            },
        }
    }

    fn mechanical(&self) -> Result<&dyn MechanicalModel, Error> {
        match self {
            Loaded::Oracle(p) => Ok(&p.model),
            Loaded::Saved(SavedModel::Structured(m)) => Ok(m),
            Loaded::Saved(SavedModel::BlackBox(_)) => {
                Err(Error::Invalid("a black-box model has no mechanical structure to control or inspect with".into()))
            }
        }
    }
}

impl Predictor for Loaded {
    fn kind(&self) -> ModelKind {
        match self {
            Loaded::Saved(m) => m.kind(),
            Loaded::Oracle(p) => p.kind,
        }
    }

    fn dof(&self) -> usize {
        match self {
            Loaded::Saved(m) => m.dof(),
            Loaded::Oracle(p) => p.model.dof(),
        }
    }

    fn predict(&self, state: &[f64], u: &[f64], dt: f64) -> dynlearn::Result<Vec<f64>> {
        match self {
            Loaded::Saved(m) => m.predict(state, u, dt),
            Loaded::Oracle(p) => p.predict(state, u, dt),
        }
    }
}

fn gen_data(run: &Run) -> Result<(), Error> {
    let t0 = Instant::now();
    let spec = run.cfg.gen_spec()?;
    let generated = generate_dataset(&spec)?;
    let data = &generated.datasets[0];
    data.save(&run.out.join("dataset.csv"))?;
    save_trajectories(&run.out.join("trajectories.csv"), &generated.trajectories)?;
    let failures: Vec<Value> = generated
        .failures
        .iter()
        .map(|f| json!({ "trajectory": f.id, "message": f.message }))
        .collect();
    let manifest = json!({
        "schema_version": 1,
        "plant": run.cfg.plant,
        "labels": run.cfg.model.kind(),
        "seed": run.cfg.seed,
        "config_sha256": run.cfg.hash(),
        "initial_states": spec.initial_states.len(),
        "signals": spec.signals.len(),
        "trajectories": generated.trajectories.len(),
        "samples": data.len(),
        "sample_rate_hz": data.sample_rate_hz(),
        "duration": spec.duration,
        "fine_dt": spec.fine_dt,
        "failures": failures,
        "files": { "dataset": "dataset.csv", "trajectories": "trajectories.csv" },
    });
    write_json(&run.out.join("manifest.json"), &manifest)?;
    write_timings(&run.out, "gen-data", &[("generate", t0.elapsed().as_secs_f64())])?;
    println!(
        "generated {} trajectories, {} samples -> {}",
        generated.trajectories.len(),
        data.len(),
        run.out.display()
    );
    Ok(())
}

fn last_stats(history: &[EpochStats]) -> Option<MeanStd> {
    history.last().map(|h| MeanStd {
        mean: h.loss_mean,
        std: h.loss_std,
    })
}

fn write_history(path: &Path, history: &[EpochStats]) -> Result<(), Error> {
    let mut text = String::from("epoch,loss_mean,loss_std\n");
    for h in history {
        text.push_str(&format!("{},{:e},{:e}\n", h.epoch, h.loss_mean, h.loss_std));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn train_cmd(run: &Run) -> Result<(), Error> {
    let cfg = &run.cfg;
    let t0 = Instant::now();
    let data = run.dataset()?;
    let (train_set, test_set) = run.split(&data)?;
    let tcfg = cfg.train_config();
    let t1 = Instant::now();
    let trained = match cfg.model {
        ModelChoice::Blackbox => {
            let model = BlackBoxModel::new(
                cfg.model.kind(),
                data.dof,
                data.inputs,
                &cfg.network.blackbox_hidden,
                cfg.seed,
            )?;
            train_blackbox(&model, &train_set, &tcfg).map(|(m, h)| (SavedModel::BlackBox(m), h))
        }
        ModelChoice::Lnn | ModelChoice::Hnn => {
            let model = StructuredModel::new(&cfg.model_spec(data.dof, data.inputs))?;
            train(&model, &train_set, &tcfg).map(|(m, h)| (SavedModel::Structured(m), h))
        }
    };
    let (model, history) = match trained {
        Ok(v) => v,
        Err(Error::Diverged { epoch, reason, last_good }) => {
            Checkpoint::new(&last_good, None).save(&run.out.join("last_good.json"))?;
            return Err(Error::Diverged { epoch, reason, last_good });
        }
        Err(e) => return Err(e),
    };
    let train_seconds = t1.elapsed().as_secs_f64();
    let training = last_stats(&history);
    let summary = training.map(|s| TrainingSummary {
        epochs: history.len(),
        seed: cfg.seed,
        final_loss_mean: s.mean,
        final_loss_std: s.std,
    });
    Checkpoint::new(&model, summary).save(&run.checkpoint)?;
    write_history(&run.out.join("history.csv"), &history)?;
    let loaded = Loaded::Saved(model);
    // the shortest test trajectory bounds the rollout horizon here
    let shortest = test_set.trajectories().iter().map(|t| t.steps()).min().unwrap_or(0);
    let horizon = cfg.eval.horizon.min(shortest);
    let mut metrics = if horizon > 0 {
        let windows: Vec<usize> = cfg.eval.windows.iter().copied().filter(|w| *w <= horizon).collect();
        evaluate_model(&loaded, &test_set, horizon, &windows)?
    } else {
        Metrics::default()
    };
    metrics.training = training;
    write_json(&run.out.join("metrics.json"), &report(cfg, "train", loaded.name(), metrics))?;
    write_json(&run.out.join("config.json"), cfg)?;
    write_timings(
        &run.out,
        "train",
        &[("train", train_seconds), ("total", t0.elapsed().as_secs_f64())],
    )?;
    println!(
        "trained {} for {} epochs on {} samples, final loss {:.3e} -> {}",
        loaded.name(),
        history.len(),
        train_set.len(),
        training.map_or(f64::NAN, |s| s.mean),
        run.checkpoint.display()
    );
    Ok(())
}

fn eval_cmd(run: &Run) -> Result<(), Error> {
    let t0 = Instant::now();
    let model = run.model()?;
    let data = run.dataset()?;
    let (_, test_set) = run.split(&data)?;
    let metrics = evaluate_model(&model, &test_set, run.cfg.eval.horizon, &run.cfg.eval.windows)?;
    let rep = report(&run.cfg, "eval", model.name(), metrics);
    write_json(&run.out.join("metrics.json"), &rep)?;
    write_timings(&run.out, "eval", &[("eval", t0.elapsed().as_secs_f64())])?;
    println!("{}", serde_json::to_string_pretty(&rep.metrics).expect("metrics serialize"));
    Ok(())
}

fn to_velocity(model: &Loaded, kind: ModelKind, q: &[f64], v: &[f64]) -> Result<Vec<f64>, Error> {
    if kind == ModelKind::Lnn {
        return Ok(v.to_vec());
    }
    let m: DMatrix<f64> = model.mechanical()?.mechanics(q)?.mass_matrix();
    let qd = m
        .lu()
        .solve(&DVector::from_column_slice(v))
        .ok_or(Error::SingularMass { condition: f64::INFINITY })?;
    Ok(qd.iter().copied().collect())
}

fn predict_cmd(run: &Run) -> Result<(), Error> {
    let t0 = Instant::now();
    let model = run.model()?;
    let data = run.dataset()?;
    let (_, test_set) = run.split(&data)?;
    let window = run.cfg.eval.windows.first().copied().filter(|_| run.cfg.eval.windows.len() == 1);
    let n = data.dof;
    let mut predicted = Vec::new();
    for traj in test_set.trajectories() {
        let steps = run.cfg.eval.horizon.min(traj.steps());
        let mut states = vec![traj.states[0].clone()];
        for k in 0..steps {
            let start = match window {
                Some(w) if k % w == 0 => &traj.states[k],
                _ => &states[k],
            };
            states.push(model.predict(start, &traj.inputs[k], traj.dt)?);
        }
        let mut raw = RawTrajectory {
            id: traj.id,
            t: Vec::new(),
            q: Vec::new(),
            qd: Vec::new(),
            u: Vec::new(),
        };
        for (k, x) in states.iter().enumerate() {
            raw.t.push(k as f64 * traj.dt);
            raw.q.push(x[..n].to_vec());
            raw.qd.push(to_velocity(&model, data.kind, &x[..n], &x[n..])?);
            raw.u.push(traj.inputs[k.min(steps.saturating_sub(1))].clone());
        }
        predicted.push(raw);
    }
    save_trajectories(&run.out.join("predictions.csv"), &predicted)?;
    let horizon = run.cfg.eval.horizon.min(test_set.trajectories().iter().map(|t| t.steps()).min().unwrap_or(0));
    let metrics = if horizon > 0 {
        evaluate_model(&model, &test_set, horizon, &window.into_iter().filter(|w| *w <= horizon).collect::<Vec<_>>())?
    } else {
        Metrics::default()
    };
    write_json(&run.out.join("metrics.json"), &report(&run.cfg, "predict", model.name(), metrics))?;
    write_timings(&run.out, "predict", &[("predict", t0.elapsed().as_secs_f64())])?;
    println!("predicted {} trajectories -> {}", predicted.len(), run.out.join("predictions.csv").display());
    Ok(())
}

fn control_cmd(run: &Run) -> Result<(), Error> {
    let t0 = Instant::now();
    let cfg = &run.cfg;
    let plant = cfg.plant()?;
    let loaded = run.model()?;
    let model = loaded.mechanical()?;
    let n = plant.dof();
    if model.dof() != n || model.input_dim() != plant.input_dim() {
        return Err(Error::Config {
            path: "plant".into(),
            message: format!(
                "model has {} coordinates and {} inputs, plant `{}` has {} and {}",
                model.dof(),
                model.input_dim(),
                cfg.plant,
                n,
                plant.input_dim()
            ),
        });
    }
    let gains = cfg.control.gains.broadcast(n).map_err(|e| match e {
        Error::Config { path, message } => Error::Config {
            path: format!("control.{path}"),
            message,
        },
        other => other,
    })?;
    let x0 = cfg.control.initial_state.clone().unwrap_or_else(|| vec![0.0; 2 * n]);
    if x0.len() != 2 * n {
        return Err(Error::Config {
            path: "control.initial_state".into(),
            message: format!("expected {} values, got {}", 2 * n, x0.len()),
        });
    }
    let reference = cfg.reference(&plant);
    if reference.dof() != n {
        return Err(Error::Config {
            path: "control.reference".into(),
            message: format!("expected {n} coordinates, got {}", reference.dof()),
        });
    }
    let loop_cfg = cfg.closed_loop_config();
    let result = match cfg.control.mode {
        ControlMode::Regulation => {
            let q_ref = reference.at(0.0).q;
            closed_loop(&plant, &Regulator { model, q_ref, gains }, &x0, &loop_cfg)?
        }
        ControlMode::Tracking => closed_loop(&plant, &Tracker { model, reference, gains }, &x0, &loop_cfg)?,
    };
    result.save_csv(&run.out.join("closed_loop.csv"))?;
    let tracking = tracking_metrics(&result.q, &result.q_ref)?;
    let metrics = Metrics {
        tracking: Some(tracking.clone()),
        ..Metrics::default()
    };
    write_json(&run.out.join("metrics.json"), &report(cfg, "control", loaded.name(), metrics))?;
    write_timings(&run.out, "control", &[("control", t0.elapsed().as_secs_f64())])?;
    println!(
        "closed loop: final |q - q_ref|_inf {:.3e}, rmse {:?}, {} clipped steps",
        tracking.final_error_inf,
        tracking.rmse,
        result.clip_events()
    );
    Ok(())
}

fn inspect_cmd(run: &Run) -> Result<(), Error> {
    if !run.oracle && !run.checkpoint.exists() {
        if let Some(path) = &run.cfg.data.path {
            let data = TransitionDataset::load(Path::new(path))?;
            let summary = json!({
                "dataset": path,
                "labels": data.kind,
                "dof": data.dof,
                "inputs": data.inputs,
                "plant": data.plant,
                "samples": data.len(),
                "trajectories": data.trajectory_ids().len(),
                "sample_rate_hz": data.sample_rate_hz(),
            });
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            return Ok(());
        }
    }
    let loaded = run.model()?;
    let mut summary = json!({ "model": loaded.name(), "kind": loaded.kind(), "dof": loaded.dof() });
    if let Loaded::Saved(saved) = &loaded {
        let ckpt = Checkpoint::new(saved, None);
        let params = match saved {
            SavedModel::Structured(m) => m.param_count(),
            SavedModel::BlackBox(m) => m.mlp.params.flatten().len(),
        };
        summary["inputs"] = json!(saved.inputs());
        summary["parameters"] = json!(params);
        summary["format_version"] = json!(ckpt.format_version);
        if !run.oracle {
            summary["training"] = json!(Checkpoint::load(&run.checkpoint)?.training);
        }
    }
    let plant = run.cfg.plant()?;
    if let Ok(model) = loaded.mechanical() {
        if model.dof() == plant.dof() && model.input_dim() == plant.input_dim() {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(run.cfg.seed);
            let grid: Vec<Vec<f64>> = (0..25)
                .map(|_| plant.sample_state(&mut rng)[..plant.dof()].to_vec())
                .collect();
            let consistency = estimate_p(model, &plant, &grid)?;
            write_json(&run.out.join("consistency.json"), &consistency)?;
            summary["consistency"] = json!({
                "plant": run.cfg.plant,
                "median_residual_g": consistency.median_residual_g,
                "median_residual_a": consistency.median_residual_a,
                "median_residual_d": consistency.median_residual_d,
                "all_definite": consistency.all_definite,
                "all_small": consistency.all_small,
            });
        }
    }
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn error_json(e: &Error) -> Value {
    let kind = match e {
        Error::Config { .. } => "config",
        Error::Dimension { .. } => "dimension",
        Error::Parse(_) => "parse",
        Error::VersionMismatch { .. } => "version_mismatch",
        Error::Diverged { .. } => "diverged",
        Error::Io(_) => "io",
        Error::Invalid(_) => "invalid",
        _ => "numerical",
    };
    let mut v = json!({ "error": kind, "message": e.to_string() });
    if let Error::Config { path, .. } = e {
        v["path"] = json!(path);
    }
    v
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = resolve_config(&cli.flags).and_then(|cfg| {
        let out = PathBuf::from(&cfg.out);
        std::fs::create_dir_all(&out)?;
        let run = Run {
            checkpoint: cli.flags.checkpoint.clone().unwrap_or_else(|| out.join("model.json")),
            oracle: cli.flags.oracle,
            out,
            cfg,
        };
        match cli.command {
            Command::GenData => gen_data(&run),
            Command::Train => train_cmd(&run),
            Command::Predict => predict_cmd(&run),
            Command::Control => control_cmd(&run),
            Command::Eval => eval_cmd(&run),
            Command::Inspect => inspect_cmd(&run),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(if matches!(e, Error::Config { .. }) { 2 } else { 1 })
        }
    }
}
