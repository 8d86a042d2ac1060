//! Run configuration shared by every command, read from TOML or JSON.
//!
//! Unknown keys are rejected and every error names the offending field, for
//! example `train.learning_rate`.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::control::{ClosedLoopConfig, GainSchedule, ReferenceSignal};
use crate::error::{Error, Result};
use crate::eval::{sha256_hex, BLACKBOX_HIDDEN};
use crate::learning::TrainConfig;
use crate::physnets::{ModelKind, ModelSpec, Structure};
use crate::plants::{GenSpec, Plant, PLANT_NAMES};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    #[default]
    Lnn,
    Hnn,
    Blackbox,
}

impl ModelChoice {
    /// Label convention of the datasets the model trains on. The black box
    /// uses velocity states.
    pub fn kind(self) -> ModelKind {
        match self {
            ModelChoice::Hnn => ModelKind::Hnn,
            ModelChoice::Lnn | ModelChoice::Blackbox => ModelKind::Lnn,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelChoice::Lnn => "lnn",
            ModelChoice::Hnn => "hnn",
            ModelChoice::Blackbox => "blackbox",
        }
    }
}

impl FromStr for ModelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lnn" => Ok(ModelChoice::Lnn),
            "hnn" => Ok(ModelChoice::Hnn),
            "blackbox" => Ok(ModelChoice::Blackbox),
            other => Err(Error::config("model", format!("unknown model `{other}` (expected lnn, hnn or blackbox)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Existing dataset CSV; when unset the data is generated.
    pub path: Option<String>,
    pub initial_states: usize,
    pub signals: usize,
    pub duration: f64,
    pub fine_dt: f64,
    pub sample_dt: f64,
    pub noise_sigma: Vec<f64>,
    pub smoothing_window: Option<usize>,
    /// Fraction of trajectories held out for evaluation.
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            initial_states: 10,
            signals: 10,
            duration: 5.0,
            fine_dt: 1e-3,
            sample_dt: 1e-2,
            noise_sigma: Vec::new(),
            smoothing_window: None,
            test_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Hidden widths for every structured head; per-head defaults when unset.
    pub hidden: Option<Vec<usize>>,
    pub blackbox_hidden: Vec<usize>,
    pub mass_epsilon: f64,
    pub mass_bound: Option<f64>,
    pub damping: Structure,
    pub input_bound: Option<f64>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: None,
            blackbox_hidden: BLACKBOX_HIDDEN.to_vec(),
            mass_epsilon: 1e-2,
            mass_bound: None,
            damping: Structure::Full,
            input_bound: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub cosine_decay: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            clip_norm: t.clip_norm,
            cosine_decay: t.cosine_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Free-rollout horizon in samples.
    pub horizon: usize,
    pub windows: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            horizon: 500,
            windows: vec![5],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlMode {
    #[default]
    Regulation,
    Tracking,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub mode: ControlMode,
    /// One entry per coordinate, or a single entry broadcast to all.
    pub gains: GainSchedule,
    /// Defaults to half the excitation range, held constant (regulation) or
    /// as the sinusoid amplitude (tracking).
    pub reference: Option<ReferenceSignal>,
    pub duration: f64,
    pub dt: f64,
    pub control_dt: Option<f64>,
    pub saturation: Option<Vec<f64>>,
    /// `[q; q̇]`; the zero state when unset.
    pub initial_state: Option<Vec<f64>>,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            mode: ControlMode::Regulation,
            gains: GainSchedule {
                kp: vec![10.0],
                kd: vec![50.0],
            },
            reference: None,
            duration: 5.0,
            dt: 1e-3,
            control_dt: None,
            saturation: None,
            initial_state: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: String,
    pub plant: String,
    pub model: ModelChoice,
    pub data: DataConfig,
    pub network: NetworkConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
    pub control: ControlConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: "out".into(),
            plant: "damped_pendulum".into(),
            model: ModelChoice::Lnn,
            data: DataConfig::default(),
            network: NetworkConfig::default(),
            train: TrainSection::default(),
            eval: EvalConfig::default(),
            control: ControlConfig::default(),
        }
    }
}

fn path_error<E: std::fmt::Display>(e: serde_path_to_error::Error<E>) -> Error {
    let path = e.path().to_string();
    Error::Config {
        path: if path == "." { "<root>".into() } else { path },
        message: e.into_inner().to_string(),
    }
}

fn prefixed(prefix: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::Config { path, message } => Error::Config {
            path: format!("{prefix}.{path}"),
            message,
        },
        other => other,
    })
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(path, format!("must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<root>", e.to_string()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(path_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(&mut de).map_err(path_error)?;
        de.end().map_err(|e| Error::config("<root>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Chooses the format from the extension (`.json`, otherwise TOML).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    /// Applies `DYNLEARN_SEED` and `DYNLEARN_OUT` from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(seed) = lookup("DYNLEARN_SEED") {
            self.seed = seed
                .trim()
                .parse()
                .map_err(|e| Error::config("DYNLEARN_SEED", format!("`{seed}`: {e}")))?;
        }
        if let Some(out) = lookup("DYNLEARN_OUT") {
            self.out = out;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !PLANT_NAMES.contains(&self.plant.as_str()) {
            return Err(Error::config(
                "plant",
                format!("unknown plant `{}` (expected one of {})", self.plant, PLANT_NAMES.join(", ")),
            ));
        }
        let d = &self.data;
        if d.initial_states == 0 {
            return Err(Error::config("data.initial_states", "must be >= 1"));
        }
        if d.signals == 0 {
            return Err(Error::config("data.signals", "must be >= 1"));
        }
        positive("data.duration", d.duration)?;
        positive("data.fine_dt", d.fine_dt)?;
        positive("data.sample_dt", d.sample_dt)?;
        if let Some(i) = d.noise_sigma.iter().position(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::config(format!("data.noise_sigma[{i}]"), "must be >= 0"));
        }
        if d.smoothing_window == Some(0) {
            return Err(Error::config("data.smoothing_window", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&d.test_fraction) {
            return Err(Error::config("data.test_fraction", "must be in [0, 1)"));
        }
        let n = &self.network;
        for (path, widths) in [("network.hidden", n.hidden.as_deref()), ("network.blackbox_hidden", Some(&n.blackbox_hidden[..]))] {
            if let Some(w) = widths {
                if let Some(i) = w.iter().position(|h| *h == 0) {
                    return Err(Error::config(format!("{path}[{i}]"), "widths must be >= 1"));
                }
            }
        }
        positive("network.mass_epsilon", n.mass_epsilon)?;
        if let Some(b) = n.mass_bound {
            positive("network.mass_bound", b)?;
        }
        if let Some(b) = n.input_bound {
            positive("network.input_bound", b)?;
        }
        prefixed("train", self.train_config().validate())?;
        if self.eval.horizon == 0 {
            return Err(Error::config("eval.horizon", "must be >= 1"));
        }
        if let Some(i) = self.eval.windows.iter().position(|w| *w == 0) {
            return Err(Error::config(format!("eval.windows[{i}]"), "must be >= 1"));
        }
        let c = &self.control;
        prefixed("control", c.gains.validate())?;
        if let Some(r) = &c.reference {
            prefixed("control", r.validate())?;
        }
        positive("control.duration", c.duration)?;
        positive("control.dt", c.dt)?;
        if let Some(cd) = c.control_dt {
            positive("control.control_dt", cd)?;
        }
        Ok(())
    }

    pub fn plant(&self) -> Result<Plant> {
        Plant::by_name(&self.plant)
    }

    pub fn gen_spec(&self) -> Result<GenSpec> {
        let plant = self.plant()?;
        let d = &self.data;
        let mut spec = GenSpec::random(plant, d.initial_states, d.signals, d.duration, self.seed);
        spec.fine_dt = d.fine_dt;
        spec.resample_hz = vec![1.0 / d.sample_dt];
        spec.labels = self.model.kind();
        spec.noise_sigma = d.noise_sigma.clone();
        spec.smoothing_window = d.smoothing_window;
        Ok(spec)
    }

    pub fn model_spec(&self, dof: usize, inputs: usize) -> ModelSpec {
        let n = &self.network;
        let mut spec = ModelSpec::new(dof, inputs).with_seed(self.seed).with_kind(self.model.kind());
        if let Some(h) = &n.hidden {
            spec = spec.with_hidden(h);
        }
        spec.mass_epsilon = n.mass_epsilon;
        spec.mass_bound = n.mass_bound;
        spec.damping_structure = n.damping;
        spec.input_bound = n.input_bound;
        spec
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            seed: self.seed,
            clip_norm: t.clip_norm,
            kind: self.model.kind(),
            cosine_decay: t.cosine_decay,
        }
    }

    pub fn closed_loop_config(&self) -> ClosedLoopConfig {
        let c = &self.control;
        ClosedLoopConfig {
            duration: c.duration,
            dt: c.dt,
            control_dt: c.control_dt,
            saturation: c.saturation.clone(),
        }
    }

    /// The configured reference, or the default built from the plant's
    /// excitation range.
    pub fn reference(&self, plant: &Plant) -> ReferenceSignal {
        if let Some(r) = &self.control.reference {
            return r.clone();
        }
        let (q_max, _, _) = plant.excitation_ranges();
        let half: Vec<f64> = q_max.iter().map(|q| 0.5 * q).collect();
        match self.control.mode {
            ControlMode::Regulation => ReferenceSignal::Constant { q: half },
            ControlMode::Tracking => ReferenceSignal::Sinusoid {
                center: vec![0.0; half.len()],
                amplitude: half.clone(),
                frequency: vec![0.2; half.len()],
                phase: vec![0.0; half.len()],
            },
        }
    }

    /// Canonical JSON of the effective configuration.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Invalid(e.to_string()))
    }

    /// SHA-256 of the canonical JSON with `out` cleared, so the same run
    /// written to two directories hashes the same.
    pub fn hash(&self) -> String {
        let cfg = Self {
            out: String::new(),
            ..self.clone()
        };
        sha256_hex(cfg.to_json().as_bytes())
    }
}
