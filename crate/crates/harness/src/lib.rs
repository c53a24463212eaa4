#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Scenario files, data collection, mission runs and plot data for the
//! multi-agent data-driven controller in `dpc-core`.

pub mod collect;
pub mod compare;
pub mod error;
pub mod mission;
pub mod plotdata;
pub mod scenario;
pub mod table;

pub use error::{HarnessError, Result};
pub use scenario::{Overrides, Scenario, ScenarioConfig};
