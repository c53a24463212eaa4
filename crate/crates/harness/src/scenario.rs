//! Scenario files: TOML with every unknown key rejected.
//!
//! Only `d_safe` and `agents` are required. Everything else falls back to the
//! values of the bundled `cube8` scenario (see [`CUBE8`]).

use std::path::{Path, PathBuf};

use dpc_core::behavior::{excitation_order, min_samples};
use dpc_core::deepc::{
    constant_reference, geometric_sigma_schedule, horizon_weight, position_selector, Formulation, PairRisk, Regularization, SampleBox,
    StepConfig, TrackingTask,
};
use dpc_core::io::{digest, ModelFile};
use dpc_core::linsys::{drone_model, StateSpace};
use dpc_core::qp::Settings;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Source text of the bundled eight-drone cube scenario.
pub const CUBE8: &str = include_str!("../scenarios/cube8.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum ModelSource {
    /// The twelve-state quadrotor hover model.
    #[default]
    Drone,
    /// A model JSON file, relative to the scenario file.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Horizon {
    pub t_p: usize,
    pub t_f: usize,
    pub t_num: usize,
}

impl Default for Horizon {
    fn default() -> Self {
        Self { t_p: 1, t_f: 30, t_num: 214 }
    }
}

/// Per-step diagonal weights, repeated over the horizon. Empty `output` means
/// unit weight on the position coordinates only; empty `input` means zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Weights {
    pub output: Vec<f64>,
    pub input: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Collision {
    /// Safe distance (m). Required.
    pub d_safe: f64,
    #[serde(default = "default_phi")]
    pub phi: PairRisk,
    /// Output coordinates holding the position.
    #[serde(default = "default_positions")]
    pub position_indices: Vec<usize>,
    /// Output covariance `Σ = sigma · I`.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Covariance growth `s` in `Σ(τ) = Σ s^τ`.
    #[serde(default = "one")]
    pub sigma_growth: f64,
    #[serde(default)]
    pub soft: bool,
    #[serde(default = "yes")]
    pub keep_side: bool,
    #[serde(default = "one_usize")]
    pub n_scp: usize,
}

fn default_phi() -> PairRisk {
    PairRisk::Uniform(0.1)
}
fn default_positions() -> Vec<usize> {
    vec![0, 1, 2]
}
fn default_sigma() -> f64 {
    0.01
}
fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bounds {
    pub u_lo: Option<f64>,
    pub u_hi: Option<f64>,
    pub y_lo: Option<Vec<f64>>,
    pub y_hi: Option<Vec<f64>>,
}

impl Default for Bounds {
    fn default() -> Self {
        Self { u_lo: Some(-0.7007), u_hi: Some(0.2993), y_lo: None, y_hi: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    /// LQR gain from the Riccati recursion.
    #[default]
    Riccati,
    /// Open-loop injection, `K = 0`.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Collection {
    pub excitation: [f64; 2],
    pub feedback: Feedback,
    /// Riccati weights `Q = riccati_q · I`, `R = riccati_r · I`.
    pub riccati_q: f64,
    pub riccati_r: f64,
}

impl Default for Collection {
    fn default() -> Self {
        Self { excitation: [-0.01, 0.01], feedback: Feedback::Riccati, riccati_q: 1.0, riccati_r: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    /// Excitation seed; agent `i` draws from ChaCha8 stream `i`.
    pub data: u64,
    /// Monte Carlo collision check seed.
    pub mc: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { data: 7, mc: 11 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Control {
    pub formulation: Formulation,
    pub regularization: Option<Regularization>,
    /// Monte Carlo samples per pair for the post-run collision check; 0 disables it.
    pub mc_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    /// Initial position; other state entries start at zero unless `x0` is given.
    pub start: Vec<f64>,
    /// Destination position; other reference entries are zero unless `y_ref` is given.
    pub goal: Vec<f64>,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub y_ref: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Sampling time (s); must match the model when given.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub model: ModelSource,
    #[serde(default)]
    pub horizon: Horizon,
    #[serde(default)]
    pub weights: Weights,
    pub collision: Collision,
    #[serde(default)]
    pub bounds: Bounds,
    #[serde(default)]
    pub collection: Collection,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub solver: Settings,
    #[serde(default)]
    pub control: Control,
    pub agents: Vec<AgentConfig>,
}

fn default_name() -> String {
    "scenario".into()
}
fn default_steps() -> usize {
    150
}

/// Command-line overrides applied on top of a parsed scenario.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub solver_eps: Option<f64>,
    pub scp_iters: Option<usize>,
    pub soft_collisions: bool,
}

/// A validated scenario with its model resolved.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: StateSpace<f64>,
    /// Hash of the whole effective configuration and model.
    pub hash: String,
    /// Hash of the parts that determine the collected datasets.
    pub data_hash: String,
}

fn schema_err(e: toml::de::Error) -> HarnessError {
    HarnessError::Scenario(e.message().to_string())
}

fn bad(key: &str, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Scenario(format!("{key}: {msg}"))
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(schema_err)
    }

    pub fn cube8() -> Self {
        Self::from_toml(CUBE8).expect("bundled scenario parses")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seeds.data = s;
            self.seeds.mc = s;
        }
        if let Some(eps) = o.solver_eps {
            self.solver.eps_prim = eps;
            self.solver.eps_dual = eps;
        }
        if let Some(n) = o.scp_iters {
            self.collision.n_scp = n;
        }
        if o.soft_collisions {
            self.collision.soft = true;
        }
    }

    pub fn step_config(&self) -> StepConfig {
        StepConfig {
            d_safe: self.collision.d_safe,
            phi: self.collision.phi.clone(),
            n_scp: self.collision.n_scp,
            soft_collisions: self.collision.soft,
            keep_side: self.collision.keep_side,
            formulation: self.control.formulation,
            regularization: self.control.regularization,
            solver: self.solver.clone(),
            ..StepConfig::default()
        }
    }
}

fn position_state(indices: &[usize], p: &[f64], len: usize) -> DVector<f64> {
    let mut v = DVector::zeros(len);
    for (&i, &x) in indices.iter().zip(p) {
        v[i] = x;
    }
    v
}

impl Scenario {
    /// Resolves and validates; `base` is the directory model paths are relative to.
    pub fn new(config: ScenarioConfig, base: &Path) -> Result<Self> {
        let model = match &config.model {
            ModelSource::Drone => drone_model(),
            ModelSource::File { path } => dpc_core::io::read_model(&base.join(path))?,
        };
        let s = Self::with_model(config, model)?;
        Ok(s)
    }

    pub fn with_model(config: ScenarioConfig, model: StateSpace<f64>) -> Result<Self> {
        validate(&config, &model)?;
        let model_json = serde_json::to_value(ModelFile::from_model(&model))?;
        let full = serde_json::json!({ "config": &config, "model": &model_json });
        let data = serde_json::json!({
            "model": &model_json,
            "horizon": &config.horizon,
            "collection": &config.collection,
            "seed": config.seeds.data,
            "agents": config.agents.len(),
        });
        Ok(Self {
            hash: digest(serde_json::to_string(&full)?.as_bytes()),
            data_hash: digest(serde_json::to_string(&data)?.as_bytes()),
            config,
            model,
        })
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(path.to_path_buf(), e))?;
        let mut config = ScenarioConfig::from_toml(&text)?;
        config.apply(overrides);
        Self::new(config, path.parent().unwrap_or(Path::new(".")))
    }

    /// The bundled scenario, or a file.
    pub fn resolve(name_or_path: &str, overrides: &Overrides) -> Result<Self> {
        if name_or_path == "cube8" {
            let mut config = ScenarioConfig::cube8();
            config.apply(overrides);
            return Self::new(config, Path::new("."));
        }
        Self::load(Path::new(name_or_path), overrides)
    }

    pub fn n_agents(&self) -> usize {
        self.config.agents.len()
    }

    pub fn excitation_order(&self) -> usize {
        let h = &self.config.horizon;
        excitation_order(h.t_p, h.t_f, self.model.n())
    }

    pub fn initial_state(&self, agent: usize) -> DVector<f64> {
        let a = &self.config.agents[agent];
        match &a.x0 {
            Some(x) => DVector::from_column_slice(x),
            None => position_state(&self.config.collision.position_indices, &a.start, self.model.n()),
        }
    }

    /// Reference output held over the horizon.
    pub fn goal_output(&self, agent: usize) -> DVector<f64> {
        let a = &self.config.agents[agent];
        match &a.y_ref {
            Some(y) => DVector::from_column_slice(y),
            None => position_state(&self.config.collision.position_indices, &a.goal, self.model.q()),
        }
    }

    pub fn positions(&self, y: &DVector<f64>) -> DVector<f64> {
        let idx = &self.config.collision.position_indices;
        DVector::from_iterator(idx.len(), idx.iter().map(|&i| y[i]))
    }

    pub fn task(&self, agent: usize) -> Result<TrackingTask<f64>> {
        let c = &self.config;
        let (m, q, t_f) = (self.model.m(), self.model.q(), c.horizon.t_f);
        let out = if c.weights.output.is_empty() {
            position_state(&c.collision.position_indices, &vec![1.0; c.collision.position_indices.len()], q)
        } else {
            DVector::from_column_slice(&c.weights.output)
        };
        let inp = if c.weights.input.is_empty() { DVector::zeros(m) } else { DVector::from_column_slice(&c.weights.input) };
        let mut task = TrackingTask::new(
            m,
            q,
            t_f,
            horizon_weight(&DMatrix::from_diagonal(&out), t_f),
            horizon_weight(&DMatrix::from_diagonal(&inp), t_f),
            constant_reference(&self.goal_output(agent), t_f),
            position_selector(q, &c.collision.position_indices),
        )?
        .with_sigma_schedule(geometric_sigma_schedule(
            &(DMatrix::identity(q, q) * c.collision.sigma),
            c.collision.sigma_growth,
            t_f,
        ))?;
        if let (Some(lo), Some(hi)) = (c.bounds.u_lo, c.bounds.u_hi) {
            task = task.with_input_bounds(SampleBox::uniform(m, lo, hi)?)?;
        }
        if c.bounds.y_lo.is_some() || c.bounds.y_hi.is_some() {
            let lo = c.bounds.y_lo.clone().map(DVector::from_vec).unwrap_or_else(|| DVector::from_element(q, f64::NEG_INFINITY));
            let hi = c.bounds.y_hi.clone().map(DVector::from_vec).unwrap_or_else(|| DVector::from_element(q, f64::INFINITY));
            task = task.with_output_bounds(SampleBox::new(lo, hi)?)?;
        }
        Ok(task)
    }
}

fn validate(c: &ScenarioConfig, model: &StateSpace<f64>) -> Result<()> {
    let (n, m, q) = (model.n(), model.m(), model.q());
    if c.agents.is_empty() {
        return Err(bad("agents", "at least one agent is required"));
    }
    if let Some(dt) = c.dt {
        if (dt - model.dt()).abs() > 1e-12 {
            return Err(bad("dt", format!("{dt} does not match the model sampling time {}", model.dt())));
        }
    }
    let h = &c.horizon;
    if h.t_p == 0 || h.t_f == 0 {
        return Err(bad("horizon", "t_p and t_f must be at least 1"));
    }
    let order = excitation_order(h.t_p, h.t_f, n);
    let need = min_samples(m, order);
    if h.t_num < need {
        return Err(bad(
            "horizon.t_num",
            format!("{} is below the minimum (m+1)L-1 = ({m}+1)*{order}-1 = {need} for excitation order L = T_p+T_f+n = {order}", h.t_num),
        ));
    }
    let col = &c.collision;
    if !(col.d_safe > 0.0) {
        return Err(bad("collision.d_safe", "must be positive"));
    }
    if col.position_indices.is_empty() || col.position_indices.iter().any(|&i| i >= q.min(n)) {
        return Err(bad("collision.position_indices", format!("need indices below {}", q.min(n))));
    }
    if !(col.sigma >= 0.0) || !(col.sigma_growth >= 1.0) {
        return Err(bad("collision.sigma", "sigma must be nonnegative and sigma_growth at least 1"));
    }
    col.phi.validate(c.agents.len()).map_err(|e| bad("collision.phi", e))?;
    if !c.weights.output.is_empty() && c.weights.output.len() != q {
        return Err(bad("weights.output", format!("expected {q} entries")));
    }
    if !c.weights.input.is_empty() && c.weights.input.len() != m {
        return Err(bad("weights.input", format!("expected {m} entries")));
    }
    if c.weights.output.iter().chain(&c.weights.input).any(|w| !(*w >= 0.0)) {
        return Err(bad("weights", "entries must be nonnegative"));
    }
    match (c.bounds.u_lo, c.bounds.u_hi) {
        (Some(lo), Some(hi)) if !(lo <= 0.0 && 0.0 <= hi) => return Err(bad("bounds", "input box must contain zero")),
        (Some(_), None) | (None, Some(_)) => return Err(bad("bounds", "give both u_lo and u_hi or neither")),
        _ => {}
    }
    for (key, v) in [("bounds.y_lo", &c.bounds.y_lo), ("bounds.y_hi", &c.bounds.y_hi)] {
        if v.as_ref().is_some_and(|v| v.len() != q) {
            return Err(bad(key, format!("expected {q} entries")));
        }
    }
    let [lo, hi] = c.collection.excitation;
    if !(lo <= hi) {
        return Err(bad("collection.excitation", "lower bound exceeds upper bound"));
    }
    if !(c.collection.riccati_q > 0.0 && c.collection.riccati_r > 0.0) {
        return Err(bad("collection", "Riccati weights must be positive"));
    }
    if c.control.regularization.is_some() && c.control.formulation != Formulation::Behavior {
        return Err(bad("control.regularization", "requires formulation = \"behavior\""));
    }
    let pd = col.position_indices.len();
    let mut starts = Vec::with_capacity(c.agents.len());
    for (i, a) in c.agents.iter().enumerate() {
        if a.start.len() != pd || a.goal.len() != pd {
            return Err(bad(&format!("agents[{i}]"), format!("start and goal need {pd} coordinates")));
        }
        if a.x0.as_ref().is_some_and(|x| x.len() != n) {
            return Err(bad(&format!("agents[{i}].x0"), format!("expected {n} entries")));
        }
        if a.y_ref.as_ref().is_some_and(|y| y.len() != q) {
            return Err(bad(&format!("agents[{i}].y_ref"), format!("expected {q} entries")));
        }
        let y0 = match &a.x0 {
            Some(x) => model.c() * DVector::from_column_slice(x),
            None => model.c() * position_state(&col.position_indices, &a.start, n),
        };
        starts.push(DVector::from_iterator(pd, col.position_indices.iter().map(|&k| y0[k])));
    }
    for i in 0..starts.len() {
        for j in i + 1..starts.len() {
            let d = (&starts[i] - &starts[j]).norm();
            if d < col.d_safe {
                return Err(bad("agents", format!("agents {i} and {j} start {d:.4} m apart, closer than d_safe = {}", col.d_safe)));
            }
        }
    }
    Ok(())
}
