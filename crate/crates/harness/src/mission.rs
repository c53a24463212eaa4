//! Closed-loop runs, metrics and the mission output files.

use std::path::Path;

use dpc_core::chance::{mc_collision_probability, GaussianVector};
use dpc_core::deepc::{run_mission, Controller, MissionAgent, MissionConfig, MissionLog};
use log::info;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::collect::AgentData;
use crate::error::{io_err, HarnessError, Result};
use crate::scenario::Scenario;
use crate::table::{fmt_num, Table};

/// Everything `compare` and `plotdata` need, written as `mission.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionFile {
    pub scenario: String,
    pub scenario_hash: String,
    pub controller: Controller,
    pub d_safe: f64,
    pub position_indices: Vec<usize>,
    pub u_bounds: Option<(f64, f64)>,
    pub goals: Vec<Vec<f64>>,
    pub log: MissionLog<f64>,
}

impl MissionFile {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn n_agents(&self) -> usize {
        self.log.n_agents()
    }

    pub fn position(&self, t: usize, agent: usize) -> DVector<f64> {
        let y = &self.log.outputs[t][agent];
        DVector::from_iterator(self.position_indices.len(), self.position_indices.iter().map(|&i| y[i]))
    }

    /// Pairwise distances at sample `t`, pairs `(i, j)` with `i < j` in row-major order.
    pub fn distances(&self, t: usize) -> Vec<f64> {
        let n = self.n_agents();
        let p: Vec<_> = (0..n).map(|i| self.position(t, i)).collect();
        let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                d.push((&p[i] - &p[j]).norm());
            }
        }
        d
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let n = self.n_agents();
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub steps_done: usize,
    pub aborted: Option<String>,
    /// Smallest pairwise distance over all samples (m), with where it happened.
    pub min_distance: Option<f64>,
    pub min_distance_step: Option<usize>,
    pub min_distance_pair: Option<(usize, usize)>,
    /// Final distance to each agent's goal position (m).
    pub terminal_errors: Vec<f64>,
    /// Largest amount an applied input leaves the input box (N).
    pub max_input_violation: f64,
    pub soft_steps: usize,
    pub qp_iterations_total: usize,
    pub qp_iterations_max: usize,
    pub solve_seconds_mean: f64,
    pub solve_seconds_max: f64,
    pub w_norm_2: Vec<f64>,
    pub w_norm_inf: Vec<f64>,
    /// Largest Monte Carlo collision frequency over pairs at their closest approach.
    pub mc_collision_max: Option<f64>,
}

impl Metrics {
    /// Descriptions of broken hard invariants: aborts, separation and input bounds.
    pub fn violations(&self, d_safe: f64) -> Vec<String> {
        let mut v = Vec::new();
        if let Some(r) = &self.aborted {
            v.push(format!("mission aborted: {r}"));
        }
        if let Some(d) = self.min_distance.filter(|d| *d < d_safe) {
            v.push(format!("min pairwise distance {d:.6} m < d_safe {d_safe} m"));
        }
        if self.max_input_violation > 0.0 {
            v.push(format!("input bound exceeded by {:.3e} N", self.max_input_violation));
        }
        v
    }
}

pub fn build_agents(s: &Scenario, data: Option<&[AgentData]>) -> Result<Vec<MissionAgent<f64>>> {
    (0..s.n_agents())
        .map(|i| {
            Ok(MissionAgent {
                plant: s.model.clone(),
                x0: s.initial_state(i),
                task: s.task(i)?,
                behavior: data.map(|d| d[i].behavior.clone()),
                window: None,
            })
        })
        .collect()
}

pub fn mission_config(s: &Scenario, controller: Controller) -> MissionConfig {
    MissionConfig { steps: s.config.steps, controller, step: s.config.step_config() }
}

/// Runs the scenario; `data` is required for the data-driven controller.
pub fn run(s: &Scenario, data: Option<&[AgentData]>, controller: Controller) -> Result<MissionFile> {
    if controller == Controller::Deepc && data.is_none() {
        return Err(HarnessError::Mismatch("the data-driven controller needs collected datasets".into()));
    }
    let agents = build_agents(s, data)?;
    let log = run_mission(&agents, &mission_config(s, controller))?;
    let c = &s.config;
    Ok(MissionFile {
        scenario: c.name.clone(),
        scenario_hash: s.hash.clone(),
        controller,
        d_safe: c.collision.d_safe,
        position_indices: c.collision.position_indices.clone(),
        u_bounds: c.bounds.u_lo.zip(c.bounds.u_hi),
        goals: c.agents.iter().map(|a| a.goal.clone()).collect(),
        log,
    })
}

pub fn metrics(s: &Scenario, mf: &MissionFile, data: Option<&[AgentData]>) -> Result<Metrics> {
    let log = &mf.log;
    let mut min: Option<(f64, usize, (usize, usize))> = None;
    for t in 0..log.outputs.len() {
        for (d, pair) in mf.distances(t).into_iter().zip(mf.pairs()) {
            if min.is_none_or(|m| d < m.0) {
                min = Some((d, t, pair));
            }
        }
    }
    let last = log.outputs.len().saturating_sub(1);
    let terminal_errors = if log.outputs.is_empty() {
        Vec::new()
    } else {
        (0..mf.n_agents()).map(|i| (mf.position(last, i) - DVector::from_column_slice(&mf.goals[i])).norm()).collect()
    };
    let max_input_violation = match mf.u_bounds {
        Some((lo, hi)) => log.inputs.iter().flatten().flat_map(|u| u.iter()).map(|&v| (lo - v).max(v - hi).max(0.0)).fold(0.0, f64::max),
        None => 0.0,
    };
    let times: Vec<f64> = log.records.iter().map(|r| r.solve_seconds).collect();
    let (w2, winf): (Vec<f64>, Vec<f64>) = data.map(|d| d.iter().map(AgentData::norms).unzip()).unwrap_or_default();
    let mc_collision_max = mc_check(s, mf, min.map(|m| m.1))?;
    Ok(Metrics {
        steps_done: log.steps_done(),
        aborted: log.abort.as_ref().map(|a| format!("step {}: {}", a.step, a.reason)),
        min_distance: min.map(|m| m.0),
        min_distance_step: min.map(|m| m.1),
        min_distance_pair: min.map(|m| m.2),
        terminal_errors,
        max_input_violation,
        soft_steps: log.records.iter().filter(|r| r.soft).count(),
        qp_iterations_total: log.records.iter().map(|r| r.iterations).sum(),
        qp_iterations_max: log.records.iter().map(|r| r.iterations).max().unwrap_or(0),
        solve_seconds_mean: if times.is_empty() { 0.0 } else { times.iter().sum::<f64>() / times.len() as f64 },
        solve_seconds_max: times.iter().copied().fold(0.0, f64::max),
        w_norm_2: w2,
        w_norm_inf: winf,
        mc_collision_max,
    })
}

/// Samples each pair's positions around the executed ones at the pair's closest
/// approach, using the first-step position covariance.
fn mc_check(s: &Scenario, mf: &MissionFile, any_sample: Option<usize>) -> Result<Option<f64>> {
    let samples = s.config.control.mc_samples;
    if samples == 0 || any_sample.is_none() || mf.n_agents() < 2 {
        return Ok(None);
    }
    let pd = mf.position_indices.len();
    let sigma = DMatrix::identity(pd, pd) * s.config.collision.sigma;
    let mut worst: f64 = 0.0;
    for (k, (i, j)) in mf.pairs().into_iter().enumerate() {
        let t = (0..mf.log.outputs.len())
            .min_by(|&a, &b| {
                let da = (mf.position(a, i) - mf.position(a, j)).norm();
                let db = (mf.position(b, i) - mf.position(b, j)).norm();
                da.total_cmp(&db)
            })
            .unwrap_or(0);
        let xi = GaussianVector::new(mf.position(t, i), sigma.clone())?;
        let xj = GaussianVector::new(mf.position(t, j), sigma.clone())?;
        let p = mc_collision_probability(&xi, &xj, mf.d_safe, samples, s.config.seeds.mc.wrapping_add(k as u64))?;
        worst = worst.max(p);
    }
    Ok(Some(worst))
}

fn coord_names(pd: usize) -> Vec<String> {
    const XYZ: [&str; 3] = ["x", "y", "z"];
    (0..pd).map(|k| if pd <= 3 { XYZ[k].to_string() } else { format!("p{k}") }).collect()
}

/// `step,time,agent,<x,y,z>`: one row per sample and agent.
pub fn positions_table(mf: &MissionFile) -> Table {
    let pd = mf.position_indices.len();
    let mut t = Table::new(Some(&mf.scenario_hash), ["step", "time", "agent"].into_iter().map(String::from).chain(coord_names(pd)));
    let dt = mf.log.dt;
    for step in 0..mf.log.outputs.len() {
        for a in 0..mf.n_agents() {
            let mut row = vec![step.to_string(), fmt_num(step as f64 * dt), a.to_string()];
            row.extend(mf.position(step, a).iter().map(|v| fmt_num(*v)));
            t.push(row);
        }
    }
    t
}

/// `step,time,agent,u0..u<m-1>`: applied inputs.
pub fn inputs_table(mf: &MissionFile) -> Table {
    let m = mf.log.inputs.first().and_then(|u| u.first()).map_or(0, |u| u.len());
    let mut t =
        Table::new(Some(&mf.scenario_hash), ["step", "time", "agent"].into_iter().map(String::from).chain((0..m).map(|k| format!("u{k}"))));
    for (step, us) in mf.log.inputs.iter().enumerate() {
        for (a, u) in us.iter().enumerate() {
            let mut row = vec![step.to_string(), fmt_num(step as f64 * mf.log.dt), a.to_string()];
            row.extend(u.iter().map(|v| fmt_num(*v)));
            t.push(row);
        }
    }
    t
}

/// `step,time,d_<i>_<j>...,d_safe`: one column per pair.
pub fn distances_table(mf: &MissionFile) -> Table {
    let header = ["step".to_string(), "time".to_string()]
        .into_iter()
        .chain(mf.pairs().into_iter().map(|(i, j)| format!("d_{i}_{j}")))
        .chain(["d_safe".to_string()]);
    let mut t = Table::new(Some(&mf.scenario_hash), header);
    for step in 0..mf.log.outputs.len() {
        let mut row = vec![step.to_string(), fmt_num(step as f64 * mf.log.dt)];
        row.extend(mf.distances(step).into_iter().map(fmt_num));
        row.push(fmt_num(mf.d_safe));
        t.push(row);
    }
    t
}

/// `step,objective,qp_objective,soft,status`.
pub fn objective_table(mf: &MissionFile) -> Table {
    let mut t = Table::new(Some(&mf.scenario_hash), ["step", "objective", "qp_objective", "soft", "status"]);
    for (step, r) in mf.log.records.iter().enumerate() {
        t.push(vec![step.to_string(), fmt_num(r.objective), fmt_num(r.qp_objective), r.soft.to_string(), r.status.to_string()]);
    }
    t
}

/// `step,iterations,qp_solves,n_constraints,n_active,min_margin,primal,dual,gap`.
pub fn qp_table(mf: &MissionFile) -> Table {
    let mut t = Table::new(
        Some(&mf.scenario_hash),
        ["step", "iterations", "qp_solves", "n_constraints", "n_active", "min_margin", "primal", "dual", "gap"],
    );
    for (step, r) in mf.log.records.iter().enumerate() {
        t.push(vec![
            step.to_string(),
            r.iterations.to_string(),
            r.qp_solves.to_string(),
            r.n_constraints.to_string(),
            r.n_active.to_string(),
            r.min_margin.map(fmt_num).unwrap_or_default(),
            fmt_num(r.residuals.primal),
            fmt_num(r.residuals.dual),
            fmt_num(r.residuals.gap),
        ]);
    }
    t
}

/// `step,solve_seconds`. Wall-clock, so the only output that differs between reruns.
pub fn timing_table(mf: &MissionFile) -> Table {
    let mut t = Table::new(Some(&mf.scenario_hash), ["step", "solve_seconds"]);
    for (step, r) in mf.log.records.iter().enumerate() {
        t.push(vec![step.to_string(), fmt_num(r.solve_seconds)]);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub scenario_hash: String,
    pub data_hash: String,
    pub controller: Controller,
    pub seeds: crate::scenario::Seeds,
    pub d_safe: f64,
    pub metrics: Metrics,
    pub violations: Vec<String>,
}

/// Writes `mission.json`, the per-quantity CSVs and `summary.json` into `out`.
pub fn write_run(s: &Scenario, mf: &MissionFile, m: &Metrics, out: &Path) -> Result<Summary> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    std::fs::write(out.join("mission.json"), mf.to_json()?).map_err(io_err(out))?;
    positions_table(mf).write(&out.join("positions.csv"))?;
    inputs_table(mf).write(&out.join("inputs.csv"))?;
    distances_table(mf).write(&out.join("distances.csv"))?;
    objective_table(mf).write(&out.join("objective.csv"))?;
    qp_table(mf).write(&out.join("qp.csv"))?;
    timing_table(mf).write(&out.join("timing.csv"))?;
    let summary = Summary {
        scenario: s.config.name.clone(),
        scenario_hash: s.hash.clone(),
        data_hash: s.data_hash.clone(),
        controller: mf.controller,
        seeds: s.config.seeds.clone(),
        d_safe: mf.d_safe,
        metrics: m.clone(),
        violations: m.violations(mf.d_safe),
    };
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?).map_err(io_err(out))?;
    info!("wrote run outputs to {}", out.display());
    Ok(summary)
}
