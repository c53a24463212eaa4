use log::{info, warn};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::behavior::BehaviorMatrix;
use crate::error::{dim_err, Error, Result};
use crate::linsys::StateSpace;
use crate::qp::{KktResiduals, Status};
use crate::scalar::Scalar;

use super::step::{model_mpc_step, shifted_anchor, solve_step, straight_line_anchor, AgentPlan, StepConfig, StepSolution};
use super::task::{AgentSpec, AgentWindow, TrackingTask};

/// Which predictor closes the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    /// Data-driven, from the trajectory matrix.
    #[default]
    Deepc,
    /// Exact-model baseline.
    ModelMpc,
}

/// One simulated agent: the true plant, its initial state and its controller data.
#[derive(Debug, Clone)]
pub struct MissionAgent<T: Scalar> {
    pub plant: StateSpace<T>,
    pub x0: DVector<T>,
    pub task: TrackingTask<T>,
    /// Required by [`Controller::Deepc`].
    pub behavior: Option<BehaviorMatrix<T>>,
    /// Initial window; defaults to zero inputs and the initial output repeated.
    pub window: Option<AgentWindow<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionConfig {
    pub steps: usize,
    pub controller: Controller,
    pub step: StepConfig,
}

/// Per-step diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct StepRecord<T: Scalar> {
    pub plans: Vec<AgentPlan<T>>,
    pub status: Status,
    pub soft: bool,
    pub objective: T,
    pub qp_objective: T,
    pub iterations: usize,
    pub qp_solves: usize,
    pub residuals: KktResiduals<T>,
    pub polished: bool,
    #[serde(skip)]
    pub solve_seconds: f64,
    pub n_constraints: usize,
    pub n_active: usize,
    /// Smallest linearized collision margin of the plan, if any constraints exist.
    pub min_margin: Option<T>,
}

impl<T: Scalar> StepRecord<T> {
    fn from_solution(s: StepSolution<T>) -> Self {
        let min_margin = s.min_margin();
        Self {
            status: s.status,
            soft: s.soft,
            objective: s.objective,
            qp_objective: s.qp_objective,
            iterations: s.iterations,
            qp_solves: s.qp_solves,
            residuals: s.residuals,
            polished: s.polished,
            solve_seconds: s.solve_seconds,
            n_constraints: s.constraints.len(),
            n_active: s.active.len(),
            min_margin,
            plans: s.plans,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionAbort {
    pub step: usize,
    pub reason: String,
}

/// Closed-loop record. `states[t][i]` and `outputs[t][i]` cover `t = 0..=steps_done`,
/// `inputs[t][i]` and `records[t]` cover `t = 0..steps_done`. Outputs are `C x(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct MissionLog<T: Scalar> {
    pub dt: T,
    pub states: Vec<Vec<DVector<T>>>,
    pub outputs: Vec<Vec<DVector<T>>>,
    pub inputs: Vec<Vec<DVector<T>>>,
    pub records: Vec<StepRecord<T>>,
    pub abort: Option<MissionAbort>,
}

impl<T: Scalar> MissionLog<T> {
    pub fn n_agents(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn steps_done(&self) -> usize {
        self.inputs.len()
    }
}

fn check_agents<T: Scalar>(agents: &[MissionAgent<T>], cfg: &MissionConfig) -> Result<()> {
    cfg.step.validate(agents.len())?;
    for a in agents {
        if a.x0.len() != a.plant.n() {
            return Err(dim_err("initial state", a.plant.n(), a.x0.len()));
        }
        if a.plant.m() != a.task.m() || a.plant.q() != a.task.q() {
            return Err(dim_err(
                "plant vs task (m, q)",
                format!("({}, {})", a.task.m(), a.task.q()),
                format!("({}, {})", a.plant.m(), a.plant.q()),
            ));
        }
        if cfg.controller == Controller::Deepc && a.behavior.is_none() {
            return Err(Error::InsufficientData("data-driven controller needs a trajectory matrix per agent".into()));
        }
    }
    Ok(())
}

/// Receding-horizon loop: build windows, solve the coupled step, apply each
/// agent's first planned input, measure, repeat. A failed step stops the loop
/// and is reported in [`MissionLog::abort`] with everything before it kept.
pub fn run_mission<T: Scalar>(agents: &[MissionAgent<T>], cfg: &MissionConfig) -> Result<MissionLog<T>> {
    check_agents(agents, cfg)?;
    let mut specs = Vec::new();
    if cfg.controller == Controller::Deepc {
        for a in agents {
            let b = a.behavior.clone().expect("checked above");
            specs.push(AgentSpec::new(b, a.task.clone())?);
        }
    }
    let t_p = specs.first().map_or(1, |s| s.t_p());
    let mut windows = Vec::with_capacity(agents.len());
    for a in agents {
        let w = match &a.window {
            Some(w) => AgentWindow::new(w.u_p.clone(), w.y_p.clone(), a.plant.m(), a.plant.q(), t_p)?,
            None => AgentWindow::steady(&DVector::zeros(a.plant.m()), &(a.plant.c() * &a.x0), t_p),
        };
        windows.push(w);
    }

    let dt = agents.first().map_or(T::one(), |a| a.plant.dt());
    let mut states: Vec<DVector<T>> = agents.iter().map(|a| a.x0.clone()).collect();
    let mut log = MissionLog {
        dt,
        states: vec![states.clone()],
        outputs: vec![agents.iter().zip(&states).map(|(a, x)| a.plant.c() * x).collect()],
        inputs: Vec::new(),
        records: Vec::new(),
        abort: None,
    };
    let tasks: Vec<&TrackingTask<T>> = agents.iter().map(|a| &a.task).collect();
    let models: Vec<StateSpace<T>> = agents.iter().map(|a| a.plant.clone()).collect();
    let mut anchors: Vec<DVector<T>> = agents
        .iter()
        .zip(&states)
        .map(|(a, x)| {
            let q = a.task.q();
            let target = a.task.reference().rows(a.task.reference().len() - q, q).clone_owned();
            straight_line_anchor(&(a.plant.c() * x), &target, a.task.t_f())
        })
        .collect();

    for t in 0..cfg.steps {
        let result = match cfg.controller {
            Controller::Deepc => solve_step(&specs, &windows, &anchors, &cfg.step),
            Controller::ModelMpc => model_mpc_step(&models, &states, &tasks, &anchors, &cfg.step).map(|m| m.solution),
        };
        let sol = match result {
            Ok(s) => s,
            Err(e) => {
                warn!("step {t}: {e}");
                log.abort = Some(MissionAbort { step: t, reason: e.to_string() });
                break;
            }
        };
        if sol.soft {
            info!("step {t}: collision constraints softened");
        }
        let mut applied = Vec::with_capacity(agents.len());
        let mut measured = Vec::with_capacity(agents.len());
        for (idx, a) in agents.iter().enumerate() {
            let u = sol.plans[idx].first_input.clone();
            let (x_next, y) = a.plant.step(&states[idx], &u)?;
            windows[idx].push(&u, &y);
            states[idx] = x_next;
            applied.push(u);
            measured.push(a.plant.c() * &states[idx]);
        }
        anchors = sol.plans.iter().zip(agents).map(|(p, a)| shifted_anchor(&p.mu, a.task.q())).collect();
        log.inputs.push(applied);
        log.states.push(states.clone());
        log.outputs.push(measured);
        log.records.push(StepRecord::from_solution(sol));
    }
    Ok(log)
}
