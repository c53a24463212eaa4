//! Plot-ready CSVs from a mission log.
//!
//! | file              | columns                                                  |
//! |-------------------|----------------------------------------------------------|
//! | `trajectory.csv`  | `step,time,agent,x,y,z`, one row per sample and agent     |
//! | `projection.csv`  | `step,time,agent,plane,h,v` for planes `xy`, `xz`, `yz`   |
//! | `distances.csv`   | `step,time,d_<i>_<j>...,d_safe`                          |
//! | `thrust.csv`      | `step,time,a<i>_u<k>...`, one column per agent and motor |

use std::path::Path;

use crate::error::{io_err, Result};
use crate::mission::{distances_table, positions_table, MissionFile};
use crate::table::{fmt_num, Table};

pub fn projection_table(mf: &MissionFile) -> Table {
    let mut t = Table::new(Some(&mf.scenario_hash), ["step", "time", "agent", "plane", "h", "v"]);
    const NAMES: [char; 3] = ['x', 'y', 'z'];
    let pd = mf.position_indices.len().min(3);
    for step in 0..mf.log.outputs.len() {
        for a in 0..mf.n_agents() {
            let p = mf.position(step, a);
            for h in 0..pd {
                for v in h + 1..pd {
                    t.push(vec![
                        step.to_string(),
                        fmt_num(step as f64 * mf.log.dt),
                        a.to_string(),
                        format!("{}{}", NAMES[h], NAMES[v]),
                        fmt_num(p[h]),
                        fmt_num(p[v]),
                    ]);
                }
            }
        }
    }
    t
}

pub fn thrust_table(mf: &MissionFile) -> Table {
    let m = mf.log.inputs.first().and_then(|u| u.first()).map_or(0, |u| u.len());
    let n = mf.n_agents();
    let header = ["step".to_string(), "time".to_string()].into_iter().chain((0..n).flat_map(|a| (0..m).map(move |k| format!("a{a}_u{k}"))));
    let mut t = Table::new(Some(&mf.scenario_hash), header);
    for (step, us) in mf.log.inputs.iter().enumerate() {
        let mut row = vec![step.to_string(), fmt_num(step as f64 * mf.log.dt)];
        row.extend(us.iter().flat_map(|u| u.iter().map(|v| fmt_num(*v))));
        t.push(row);
    }
    t
}

/// Writes the four plot files into `out`. A log without samples gives header-only files.
pub fn cmd_plotdata(mf: &MissionFile, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    positions_table(mf).write(&out.join("trajectory.csv"))?;
    projection_table(mf).write(&out.join("projection.csv"))?;
    distances_table(mf).write(&out.join("distances.csv"))?;
    thrust_table(mf).write(&out.join("thrust.csv"))?;
    Ok(())
}
