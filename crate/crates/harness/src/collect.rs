//! Data collection: gain design, excitation, persistency check and the trajectory
//! matrix of each agent.

use std::path::Path;

use dpc_core::behavior::{is_persistently_exciting, BehaviorMatrix, DEFAULT_RANK_TOL};
use dpc_core::io::{read_dataset, write_dataset, DatasetFile};
use dpc_core::linsys::{
    design_stabilizing_gain, simulate_closed_loop, uniform_excitation, FeedbackGain, RiccatiSettings, TrajectoryDataset,
};
use log::info;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, HarnessError, Result};
use crate::scenario::{Feedback, Scenario};
use crate::table::{fmt_num, Table};

/// One agent's collected data and its trajectory matrix.
#[derive(Debug, Clone)]
pub struct AgentData {
    pub dataset: TrajectoryDataset<f64>,
    pub behavior: BehaviorMatrix<f64>,
}

impl AgentData {
    pub fn norms(&self) -> (f64, f64) {
        (self.behavior.norm_2(), self.behavior.norm_inf())
    }
}

pub fn gain(s: &Scenario, feedback: Feedback) -> Result<FeedbackGain<f64>> {
    let (n, m) = (s.model.n(), s.model.m());
    let c = &s.config.collection;
    Ok(match feedback {
        Feedback::None => FeedbackGain::zeros(&s.model),
        Feedback::Riccati => design_stabilizing_gain(
            &s.model,
            &(DMatrix::identity(n, n) * c.riccati_q),
            &(DMatrix::identity(m, m) * c.riccati_r),
            RiccatiSettings::default(),
        )?,
    })
}

/// Builds the trajectory matrix from a dataset after checking persistency of excitation.
pub fn behavior_of(s: &Scenario, agent: usize, dataset: TrajectoryDataset<f64>) -> Result<AgentData> {
    let order = s.excitation_order();
    if !is_persistently_exciting(&dataset.u_d, order, DEFAULT_RANK_TOL)? {
        return Err(HarnessError::Excitation(format!(
            "agent {agent}: inputs are not persistently exciting of order {order} with T_num = {}; \
             widen the excitation interval or increase horizon.t_num",
            dataset.len()
        )));
    }
    let h = &s.config.horizon;
    let behavior = BehaviorMatrix::from_dataset_checked(&dataset, h.t_p, h.t_f, &s.model)?;
    Ok(AgentData { dataset, behavior })
}

/// Excites agent `agent` on ChaCha8 stream `agent` of the data seed, starting from rest.
pub fn collect_agent(s: &Scenario, agent: usize, k: &FeedbackGain<f64>) -> Result<AgentData> {
    let c = &s.config.collection;
    let u_r = uniform_excitation(s.model.m(), s.config.horizon.t_num, c.excitation[0], c.excitation[1], s.config.seeds.data, agent as u64);
    let data = simulate_closed_loop(&s.model, k, &u_r, &DVector::zeros(s.model.n()))?;
    behavior_of(s, agent, data)
}

pub fn collect(s: &Scenario, feedback: Feedback) -> Result<Vec<AgentData>> {
    let k = gain(s, feedback)?;
    (0..s.n_agents()).map(|i| collect_agent(s, i, &k)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentNorms {
    pub agent: usize,
    pub rows: usize,
    pub cols: usize,
    pub norm_2: f64,
    pub norm_inf: f64,
    pub open_loop_norm_2: Option<f64>,
    pub open_loop_norm_inf: Option<f64>,
    pub digest: String,
}

/// Contents of `collect.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectReport {
    pub scenario: String,
    pub scenario_hash: String,
    pub data_hash: String,
    pub seed: u64,
    pub feedback: Feedback,
    pub excitation_order: usize,
    pub t_num: usize,
    pub agents: Vec<AgentNorms>,
}

pub fn dataset_path(dir: &Path, agent: usize) -> std::path::PathBuf {
    dir.join(format!("agent_{agent}.json"))
}

fn dataset_file(s: &Scenario, agent: usize, data: &TrajectoryDataset<f64>) -> DatasetFile {
    let mut f = DatasetFile::from_dataset(data);
    f.source.insert("scenario_hash".into(), s.hash.clone().into());
    f.source.insert("data_hash".into(), s.data_hash.clone().into());
    f.source.insert("agent".into(), agent.into());
    f.source.insert("seed".into(), s.config.seeds.data.into());
    f
}

/// Collects every agent, writes `agent_<i>.json`, `collect.json` and `norms.csv`
/// into `out`. With `open_loop`, the same excitation is also injected without
/// feedback and its norms are reported next to the closed-loop ones.
pub fn cmd_collect(s: &Scenario, out: &Path, open_loop: bool) -> Result<CollectReport> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let feedback = s.config.collection.feedback;
    let closed = collect(s, feedback)?;
    let open = if open_loop { Some(collect(s, Feedback::None)?) } else { None };
    let mut agents = Vec::with_capacity(closed.len());
    for (i, d) in closed.iter().enumerate() {
        let digest = write_dataset(&dataset_path(out, i), &dataset_file(s, i, &d.dataset))?;
        let (n2, ninf) = d.norms();
        let o = open.as_ref().map(|o| o[i].norms());
        info!("agent {i}: W is {}x{}, |W|_2 = {n2:.4}, |W|_inf = {ninf:.4}", d.behavior.n_rows(), d.behavior.n_cols());
        agents.push(AgentNorms {
            agent: i,
            rows: d.behavior.n_rows(),
            cols: d.behavior.n_cols(),
            norm_2: n2,
            norm_inf: ninf,
            open_loop_norm_2: o.map(|x| x.0),
            open_loop_norm_inf: o.map(|x| x.1),
            digest,
        });
    }
    let report = CollectReport {
        scenario: s.config.name.clone(),
        scenario_hash: s.hash.clone(),
        data_hash: s.data_hash.clone(),
        seed: s.config.seeds.data,
        feedback,
        excitation_order: s.excitation_order(),
        t_num: s.config.horizon.t_num,
        agents,
    };
    std::fs::write(out.join("collect.json"), serde_json::to_string_pretty(&report)?).map_err(io_err(out))?;
    norms_table(&report).write(&out.join("norms.csv"))?;
    Ok(report)
}

/// Columns `agent,rows,cols,norm_2,norm_inf,open_loop_norm_2,open_loop_norm_inf`;
/// open-loop cells are empty when not collected.
pub fn norms_table(r: &CollectReport) -> Table {
    let mut t =
        Table::new(Some(&r.scenario_hash), ["agent", "rows", "cols", "norm_2", "norm_inf", "open_loop_norm_2", "open_loop_norm_inf"]);
    let opt = |x: Option<f64>| x.map(fmt_num).unwrap_or_default();
    for a in &r.agents {
        t.push(vec![
            a.agent.to_string(),
            a.rows.to_string(),
            a.cols.to_string(),
            fmt_num(a.norm_2),
            fmt_num(a.norm_inf),
            opt(a.open_loop_norm_2),
            opt(a.open_loop_norm_inf),
        ]);
    }
    t
}

/// Reads the datasets written by [`cmd_collect`], refusing files collected for a
/// different scenario.
pub fn load_datasets(s: &Scenario, dir: &Path) -> Result<Vec<AgentData>> {
    (0..s.n_agents())
        .map(|i| {
            let path = dataset_path(dir, i);
            let (file, _) = read_dataset(&path)?;
            let found = file.source.get("data_hash").and_then(|v| v.as_str()).unwrap_or("<none>");
            if found != s.data_hash {
                return Err(HarnessError::Mismatch(format!(
                    "{} was collected for data hash {found}, scenario needs {}",
                    path.display(),
                    s.data_hash
                )));
            }
            behavior_of(s, i, file.to_dataset()?)
        })
        .collect()
}
