use dpc_core::behavior::BehaviorMatrix;
use dpc_core::deepc::{
    assemble_agent_qp_blocks, constant_reference, geometric_sigma_schedule, horizon_weight, linearize_collisions, model_mpc_step,
    position_selector, run_mission, shifted_anchor, solve_step, straight_line_anchor, AgentSpec, AgentWindow, Controller, Formulation,
    MissionAgent, MissionConfig, PairRisk, SampleBox, StepConfig, TrackingTask,
};
use dpc_core::linsys::{design_stabilizing_gain, drone_model, simulate_closed_loop, uniform_excitation, RiccatiSettings, StateSpace};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const T_F: usize = 30;
const U_LO: f64 = -0.7007;
const U_HI: f64 = 0.2993;

fn drone_behavior(stream: u64) -> BehaviorMatrix<f64> {
    let model = drone_model::<f64>();
    let k = design_stabilizing_gain(&model, &DMatrix::identity(12, 12), &DMatrix::identity(4, 4), RiccatiSettings::default()).unwrap();
    let u_r = uniform_excitation(4, 214, -0.01, 0.01, 7, stream);
    let data = simulate_closed_loop(&model, &k, &u_r, &DVector::zeros(12)).unwrap();
    BehaviorMatrix::from_dataset(&data, 1, T_F).unwrap()
}

fn hover_state(p: [f64; 3]) -> DVector<f64> {
    let mut x = DVector::zeros(12);
    x.rows_mut(0, 3).copy_from_slice(&p);
    x
}

fn drone_task(target: [f64; 3], r: f64) -> TrackingTask<f64> {
    let mut qb = DMatrix::zeros(12, 12);
    for i in 0..3 {
        qb[(i, i)] = 1.0;
    }
    TrackingTask::new(
        4,
        12,
        T_F,
        horizon_weight(&qb, T_F),
        DMatrix::identity(4 * T_F, 4 * T_F) * r,
        constant_reference(&hover_state(target), T_F),
        position_selector(12, &[0, 1, 2]),
    )
    .unwrap()
    .with_input_bounds(SampleBox::uniform(4, U_LO, U_HI).unwrap())
    .unwrap()
    .with_sigma_schedule(geometric_sigma_schedule(&(DMatrix::identity(12, 12) * 0.01), 1.0, T_F))
    .unwrap()
}

fn tight() -> StepConfig {
    let mut cfg = StepConfig::default();
    cfg.solver.eps_prim = 1e-9;
    cfg.solver.eps_dual = 1e-9;
    cfg
}

fn rel_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-12)
}

#[test]
fn drone_block_sizes() {
    let spec = AgentSpec::new(drone_behavior(0), drone_task([1.0, 1.0, 1.0], 0.0)).unwrap();
    let w = AgentWindow::steady(&DVector::zeros(4), &DVector::zeros(12), 1);
    let block = assemble_agent_qp_blocks(&spec, &w, None).unwrap();
    assert_eq!(block.dim(), 184 + 120 + 360);
    assert_eq!(block.a_eq.nrows(), (4 + 12) * (1 + T_F));
    assert_eq!(block.b_eq.len(), 496);
}

#[test]
fn collision_constraint_counts() {
    for (n, expected) in [(2, 30), (8, 840)] {
        let tasks: Vec<TrackingTask<f64>> = (0..n).map(|_| drone_task([0.0; 3], 0.0)).collect();
        let refs: Vec<&TrackingTask<f64>> = tasks.iter().collect();
        let anchors: Vec<DVector<f64>> = (0..n).map(|i| constant_reference(&hover_state([i as f64, 0.0, 0.0]), T_F)).collect();
        let cons = linearize_collisions(&refs, &anchors, 0.3, &PairRisk::Uniform(0.1), true).unwrap();
        assert_eq!(cons.len(), expected);
        assert!(cons.iter().all(|c| c.step < T_F && c.i < c.j));
    }
}

#[test]
fn far_anchors_leave_constraints_slack() {
    let tasks = [drone_task([0.0; 3], 0.0), drone_task([0.0; 3], 0.0)];
    let refs: Vec<_> = tasks.iter().collect();
    let anchors = [constant_reference(&hover_state([-5.0, 0.0, 0.0]), T_F), constant_reference(&hover_state([5.0, 0.0, 0.0]), T_F)];
    for c in linearize_collisions(&refs, &anchors, 0.3, &PairRisk::Uniform(0.1), true).unwrap() {
        let m = c.margin(&tasks[0].position(&anchors[0], c.step), &tasks[1].position(&anchors[1], c.step));
        assert!(m > 9.0);
    }
}

#[test]
fn identity_plant_on_reference_needs_no_input() {
    let model =
        StateSpace::new(DMatrix::<f64>::identity(2, 2), DMatrix::identity(2, 2), DMatrix::identity(2, 2), DMatrix::zeros(2, 2), 1.0)
            .unwrap();
    let x = DVector::from_vec(vec![0.4, -1.2]);
    let t_f = 5;
    let task = TrackingTask::new(
        2,
        2,
        t_f,
        DMatrix::identity(2 * t_f, 2 * t_f),
        DMatrix::identity(2 * t_f, 2 * t_f) * 0.1,
        constant_reference(&x, t_f),
        position_selector(2, &[0, 1]),
    )
    .unwrap();
    let anchors = [constant_reference(&x, t_f)];
    let out = model_mpc_step(&[model], std::slice::from_ref(&x), &[&task], &anchors, &StepConfig::default()).unwrap();
    assert!(out.solution.plans[0].u.amax() < 1e-7);
    assert!(out.solution.objective < 1e-10);
}

#[test]
fn model_prediction_matches_simulation() {
    let model = drone_model::<f64>();
    let x = DVector::from_fn(12, |i, _| 0.2 * ((3 * i + 1) as f64).cos());
    let mut task = drone_task([0.5, -0.5, 0.25], 0.01);
    task = TrackingTask::new(
        4,
        12,
        T_F,
        task.q_weight().clone(),
        task.r_weight().clone(),
        task.reference().clone(),
        task.pos_extract().clone(),
    )
    .unwrap();
    let anchors = [task.reference().clone()];
    let out = model_mpc_step(std::slice::from_ref(&model), std::slice::from_ref(&x), &[&task], &anchors, &StepConfig::default()).unwrap();
    let u = &out.solution.plans[0].u;
    let mut xs = x;
    for k in 0..T_F {
        let (next, _) = model.step(&xs, &u.rows(k * 4, 4).clone_owned()).unwrap();
        xs = next;
        assert!((&xs - out.states[0].rows(k * 12, 12)).amax() < 1e-10, "block {k}");
    }
}

#[test]
fn hover_at_reference_stays_put() {
    let p = [0.3, -0.2, 0.5];
    let spec = AgentSpec::new(drone_behavior(1), drone_task(p, 0.0)).unwrap();
    let w = AgentWindow::steady(&DVector::zeros(4), &hover_state(p), 1);
    let anchors = [spec.task().reference().clone()];
    for formulation in [Formulation::Predictor, Formulation::Behavior] {
        let cfg = StepConfig { formulation, ..StepConfig::default() };
        let sol = solve_step(std::slice::from_ref(&spec), std::slice::from_ref(&w), &anchors, &cfg).unwrap();
        let u0 = &sol.plans[0].first_input;
        assert!(u0.iter().all(|v| (U_LO..=U_HI).contains(v)));
        assert!(sol.objective < 1e-8, "{formulation:?}: objective {}", sol.objective);
    }
}

#[test]
fn data_and_model_controllers_agree() {
    let model = drone_model::<f64>();
    let spec = AgentSpec::new(drone_behavior(2), drone_task([1.0, -0.5, 0.8], 0.01)).unwrap();
    let x_prev = DVector::from_fn(12, |i, _| 0.05 * ((i as f64) - 4.0).sin());
    let u_prev = DVector::from_vec(vec![0.02, -0.01, 0.0, 0.01]);
    let x_t = model.a() * &x_prev + model.b() * &u_prev;
    let w = AgentWindow::from_samples(&[u_prev], &[x_prev]).unwrap();
    let anchors = [spec.task().reference().clone()];
    let base = model_mpc_step(&[model], &[x_t], &[spec.task()], &anchors, &tight()).unwrap().solution;
    for formulation in [Formulation::Predictor, Formulation::Behavior] {
        let cfg = StepConfig { formulation, ..tight() };
        let sol = solve_step(std::slice::from_ref(&spec), std::slice::from_ref(&w), &anchors, &cfg).unwrap();
        let (p, b) = (&sol.plans[0], &base.plans[0]);
        assert!(rel_diff(&p.u, &b.u) < 1e-4, "{formulation:?} u: {}", rel_diff(&p.u, &b.u));
        assert!(rel_diff(&p.mu, &b.mu) < 1e-4, "{formulation:?} mu: {}", rel_diff(&p.mu, &b.mu));
        let stacked = DVector::from_iterator(496, w.u_p.iter().chain(w.y_p.iter()).chain(p.u.iter()).chain(p.mu.iter()).copied());
        assert!((spec.behavior().w() * &p.g - stacked).amax() < 1e-6);
    }
}

#[test]
fn head_on_agents_respect_constraints_or_go_soft() {
    let specs = [
        AgentSpec::new(drone_behavior(0), drone_task([1.0, 0.0, 0.0], 0.0)).unwrap(),
        AgentSpec::new(drone_behavior(1), drone_task([-0.8, 0.0, 0.0], 0.0)).unwrap(),
    ];
    let starts = [[-0.1, 0.0, 0.0], [0.1, 0.0, 0.0]];
    let windows: Vec<_> = starts.iter().map(|p| AgentWindow::steady(&DVector::zeros(4), &hover_state(*p), 1)).collect();
    let anchors: Vec<_> = specs
        .iter()
        .zip(&starts)
        .map(|(s, p)| straight_line_anchor(&hover_state(*p), &s.task().reference().rows(0, 12).clone_owned(), T_F))
        .collect();
    let sol = solve_step(&specs, &windows, &anchors, &StepConfig::default()).unwrap();
    assert_eq!(sol.constraints.len(), T_F);
    let worst = sol.min_margin().unwrap();
    assert!(sol.soft || worst >= -1e-6, "hard plan with margin {worst}");
    // The first output block is fixed by the window at 0.2 m, inside d_safe.
    assert!(sol.soft);
    for p in &sol.plans {
        assert!(p.u.iter().all(|v| *v >= U_LO - 1e-7 && *v <= U_HI + 1e-7));
    }
}

#[test]
fn scaling_weights_keeps_the_minimizer() {
    let mut spec = AgentSpec::new(drone_behavior(3), drone_task([0.6, 0.4, -0.3], 0.05)).unwrap();
    let w = AgentWindow::steady(&DVector::zeros(4), &hover_state([0.0; 3]), 1);
    let anchors = [spec.task().reference().clone()];
    let cfg = tight();
    let base = solve_step(std::slice::from_ref(&spec), std::slice::from_ref(&w), &anchors, &cfg).unwrap();
    spec.task_mut().scale_weights(37.5);
    let scaled = solve_step(std::slice::from_ref(&spec), std::slice::from_ref(&w), &anchors, &cfg).unwrap();
    assert!((&base.plans[0].u - &scaled.plans[0].u).amax() < 1e-6);
    spec.task_mut().scale_weights(1e4);
    let heavy = solve_step(std::slice::from_ref(&spec), std::slice::from_ref(&w), &anchors, &cfg).unwrap();
    assert!(rel_diff(&heavy.plans[0].u, &base.plans[0].u) < 1e-4, "{}", rel_diff(&heavy.plans[0].u, &base.plans[0].u));
}

fn single_agent(target: [f64; 3], start: [f64; 3], r: f64) -> MissionAgent<f64> {
    MissionAgent {
        plant: drone_model(),
        x0: hover_state(start),
        task: drone_task(target, r),
        behavior: Some(drone_behavior(4)),
        window: None,
    }
}

#[test]
fn tracking_objective_does_not_increase() {
    let agent = single_agent([0.4, -0.3, 0.2], [0.0; 3], 0.0);
    let cfg = MissionConfig { steps: 6, controller: Controller::Deepc, step: StepConfig::default() };
    let log = run_mission(&[agent], &cfg).unwrap();
    assert!(log.abort.is_none());
    for pair in log.records.windows(2) {
        assert!(pair[1].objective <= pair[0].objective + 1e-6, "{} -> {}", pair[0].objective, pair[1].objective);
    }
}

#[test]
fn zero_length_mission_keeps_initial_condition() {
    let agent = single_agent([1.0; 3], [0.0; 3], 0.0);
    let log = run_mission(&[agent], &MissionConfig { steps: 0, controller: Controller::Deepc, step: StepConfig::default() }).unwrap();
    assert_eq!(log.states.len(), 1);
    assert_eq!(log.outputs.len(), 1);
    assert!(log.inputs.is_empty() && log.records.is_empty() && log.abort.is_none());
}

#[test]
fn holding_position_drifts_less_than_a_millimeter() {
    let p = [0.3, -0.2, 0.5];
    for controller in [Controller::Deepc, Controller::ModelMpc] {
        let agent = single_agent(p, p, 0.0);
        let log = run_mission(&[agent], &MissionConfig { steps: 50, controller, step: StepConfig::default() }).unwrap();
        assert!(log.abort.is_none());
        let drift = log.outputs.iter().map(|o| (o[0].rows(0, 3) - DVector::from_row_slice(&p)).norm()).fold(0.0, f64::max);
        assert!(drift < 1e-3, "{controller:?}: drift {drift}");
    }
}

#[test]
fn missing_behavior_is_rejected() {
    let mut agent = single_agent([1.0; 3], [0.0; 3], 0.0);
    agent.behavior = None;
    let cfg = MissionConfig { steps: 1, controller: Controller::Deepc, step: StepConfig::default() };
    assert!(run_mission(&[agent], &cfg).is_err());
}

proptest! {
    #[test]
    fn straight_line_anchor_hits_both_ends(a in proptest::collection::vec(-2.0f64..2.0, 3), b in proptest::collection::vec(-2.0f64..2.0, 3), t_f in 2usize..40) {
        let (a, b) = (DVector::from_vec(a), DVector::from_vec(b));
        let line = straight_line_anchor(&a, &b, t_f);
        prop_assert_eq!(line.len(), 3 * t_f);
        prop_assert!((line.rows(0, 3) - &a).amax() < 1e-12);
        prop_assert!((line.rows(3 * (t_f - 1), 3) - &b).amax() < 1e-12);
        let shifted = shifted_anchor(&line, 3);
        prop_assert_eq!(shifted.rows(0, 3 * (t_f - 1)), line.rows(3, 3 * (t_f - 1)));
        prop_assert_eq!(shifted.rows(3 * (t_f - 1), 3), line.rows(3 * (t_f - 1), 3));
    }

    #[test]
    fn kept_directions_never_flip(offsets in proptest::collection::vec(-1.0f64..1.0, 2 * T_F)) {
        let tasks = [drone_task([0.0; 3], 0.0), drone_task([0.0; 3], 0.0)];
        let refs: Vec<_> = tasks.iter().collect();
        let a = DVector::from_fn(12 * T_F, |i, _| if i % 12 == 0 { offsets[i / 12] } else if i % 12 == 1 { 0.1 } else { 0.0 });
        let b = DVector::from_fn(12 * T_F, |i, _| if i % 12 == 0 { offsets[T_F + i / 12] } else { 0.0 });
        let cons = linearize_collisions(&refs, &[a, b], 0.3, &PairRisk::Uniform(0.1), true).unwrap();
        prop_assert_eq!(cons.len(), T_F);
        for pair in cons.windows(2) {
            prop_assert!(pair[0].k.dot(&pair[1].k) >= 0.0);
            prop_assert!((pair[1].k.norm() - 1.0).abs() < 1e-12);
        }
    }
}
