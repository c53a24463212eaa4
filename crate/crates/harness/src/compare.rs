//! Step-by-step differences between two mission logs of the same scenario.

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::mission::MissionFile;
use crate::table::{fmt_num, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenario_hash: String,
    pub controllers: (dpc_core::deepc::Controller, dpc_core::deepc::Controller),
    pub steps: usize,
    /// Largest absolute input difference (N).
    pub max_input_diff: f64,
    /// `max_input_diff` over the largest input magnitude in the first log.
    pub max_input_diff_rel: f64,
    /// Largest absolute output difference.
    pub max_output_diff: f64,
    pub max_output_diff_rel: f64,
    /// `step,agent,input_diff,output_diff` with infinity-norm differences per row.
    #[serde(skip)]
    pub table: Table,
}

fn inf_diff(a: &nalgebra::DVector<f64>, b: &nalgebra::DVector<f64>) -> f64 {
    (a - b).amax()
}

pub fn compare(a: &MissionFile, b: &MissionFile) -> Result<Comparison> {
    if a.scenario_hash != b.scenario_hash {
        return Err(HarnessError::Mismatch(format!("scenario hashes differ: {} vs {}", a.scenario_hash, b.scenario_hash)));
    }
    if a.log.steps_done() != b.log.steps_done() {
        return Err(HarnessError::Mismatch(format!("step counts differ: {} vs {}", a.log.steps_done(), b.log.steps_done())));
    }
    if a.n_agents() != b.n_agents() {
        return Err(HarnessError::Mismatch(format!("agent counts differ: {} vs {}", a.n_agents(), b.n_agents())));
    }
    let mut table = Table::new(Some(&a.scenario_hash), ["step", "agent", "input_diff", "output_diff"]);
    let (mut du, mut dy, mut su, mut sy) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for t in 0..a.log.steps_done() {
        for i in 0..a.n_agents() {
            let eu = inf_diff(&a.log.inputs[t][i], &b.log.inputs[t][i]);
            let ey = inf_diff(&a.log.outputs[t + 1][i], &b.log.outputs[t + 1][i]);
            du = du.max(eu);
            dy = dy.max(ey);
            su = su.max(a.log.inputs[t][i].amax());
            sy = sy.max(a.log.outputs[t + 1][i].amax());
            table.push(vec![t.to_string(), i.to_string(), fmt_num(eu), fmt_num(ey)]);
        }
    }
    let rel = |d: f64, s: f64| if s > 0.0 { d / s } else { d };
    Ok(Comparison {
        scenario_hash: a.scenario_hash.clone(),
        controllers: (a.controller, b.controller),
        steps: a.log.steps_done(),
        max_input_diff: du,
        max_input_diff_rel: rel(du, su),
        max_output_diff: dy,
        max_output_diff_rel: rel(dy, sy),
        table,
    })
}
