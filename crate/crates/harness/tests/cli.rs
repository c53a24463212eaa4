use std::path::Path;
use std::process::Command;

use dpc_core::deepc::Controller;
use dpc_harness::collect::{cmd_collect, collect, load_datasets};
use dpc_harness::compare::compare;
use dpc_harness::mission::{metrics, run, write_run, MissionFile};
use dpc_harness::plotdata::cmd_plotdata;
use dpc_harness::scenario::Feedback;
use dpc_harness::table::Table;
use dpc_harness::{HarnessError, Overrides, Scenario, ScenarioConfig};

const DPC: &str = env!("CARGO_BIN_EXE_dpc");

fn drone(cfg: ScenarioConfig) -> Scenario {
    Scenario::with_model(cfg, dpc_core::linsys::drone_model()).unwrap()
}

/// cube8 settings with the first `agents` agents and a shorter mission.
fn cube8_prefix(agents: usize, steps: usize) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::cube8();
    cfg.agents.truncate(agents);
    cfg.steps = steps;
    cfg
}

fn write_toml(dir: &Path, name: &str, agents: &[([f64; 3], [f64; 3])], extra: &str) -> std::path::PathBuf {
    let mut text = format!("name = \"{name}\"\n{extra}\n[model]\nsource = \"drone\"\n[collision]\nd_safe = 0.3\n");
    for (start, goal) in agents {
        text += &format!("[[agents]]\nstart = {start:?}\ngoal = {goal:?}\n");
    }
    let path = dir.join(format!("{name}.toml"));
    std::fs::write(&path, text).unwrap();
    path
}

fn dpc(args: &[&str]) -> std::process::Output {
    Command::new(DPC).args(args).env("RUST_LOG", "error").output().unwrap()
}

#[test]
fn identical_logs_compare_to_zero() {
    let s = drone(cube8_prefix(2, 5));
    let data = collect(&s, Feedback::Riccati).unwrap();
    let mf = run(&s, Some(&data), Controller::Deepc).unwrap();
    let c = compare(&mf, &mf).unwrap();
    assert_eq!((c.max_input_diff, c.max_output_diff), (0.0, 0.0));
    assert_eq!(c.table.rows.len(), 5 * 2);
}

#[test]
fn logs_of_different_length_are_refused() {
    let s = drone(cube8_prefix(1, 3));
    let data = collect(&s, Feedback::Riccati).unwrap();
    let a = run(&s, Some(&data), Controller::Deepc).unwrap();
    let mut b = a.clone();
    b.log.inputs.pop();
    b.log.outputs.pop();
    b.log.records.pop();
    assert!(matches!(compare(&a, &b), Err(HarnessError::Mismatch(_))));
}

#[test]
fn data_driven_and_model_missions_agree() {
    let mut cfg = cube8_prefix(1, 10);
    cfg.solver.eps_prim = 1e-9;
    cfg.solver.eps_dual = 1e-9;
    let s = drone(cfg);
    let data = collect(&s, Feedback::Riccati).unwrap();
    let d = run(&s, Some(&data), Controller::Deepc).unwrap();
    let m = run(&s, None, Controller::ModelMpc).unwrap();
    let c = compare(&d, &m).unwrap();
    assert!(c.max_output_diff_rel < 1e-4, "{}", c.max_output_diff_rel);
    assert!(c.max_input_diff_rel < 1e-3, "{}", c.max_input_diff_rel);
}

#[test]
fn plot_files_have_expected_columns() {
    let s = drone(ScenarioConfig { steps: 2, ..ScenarioConfig::cube8() });
    let data = collect(&s, Feedback::Riccati).unwrap();
    let mf = run(&s, Some(&data), Controller::Deepc).unwrap();
    let dir = tempfile::tempdir().unwrap();
    cmd_plotdata(&mf, dir.path()).unwrap();
    let dist = Table::read(&dir.path().join("distances.csv")).unwrap();
    assert_eq!(dist.header.len(), 2 + 28 + 1);
    assert_eq!(dist.header.last().unwrap(), "d_safe");
    assert_eq!(dist.rows.len(), 3);
    let thrust = Table::read(&dir.path().join("thrust.csv")).unwrap();
    assert_eq!(thrust.header.len(), 2 + 8 * 4);
    assert_eq!(thrust.rows.len(), 2);
    let proj = Table::read(&dir.path().join("projection.csv")).unwrap();
    assert_eq!(proj.rows.len(), 3 * 8 * 3);
    assert_eq!(dist.scenario_hash.as_deref(), Some(s.hash.as_str()));
}

#[test]
fn empty_log_gives_header_only_plot_files() {
    let s = drone(cube8_prefix(2, 0));
    let data = collect(&s, Feedback::Riccati).unwrap();
    let mut mf = run(&s, Some(&data), Controller::Deepc).unwrap();
    mf.log.outputs.clear();
    let dir = tempfile::tempdir().unwrap();
    cmd_plotdata(&mf, dir.path()).unwrap();
    for f in ["trajectory.csv", "projection.csv", "distances.csv", "thrust.csv"] {
        let t = Table::read(&dir.path().join(f)).unwrap();
        assert!(t.rows.is_empty(), "{f}");
        assert!(!t.header.is_empty(), "{f}");
    }
}

#[test]
fn replay_is_byte_identical() {
    let s = drone(cube8_prefix(2, 4));
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        cmd_collect(&s, &d.path().join("data"), false).unwrap();
        let data = load_datasets(&s, &d.path().join("data")).unwrap();
        let mf = run(&s, Some(&data), Controller::Deepc).unwrap();
        let m = metrics(&s, &mf, Some(&data)).unwrap();
        write_run(&s, &mf, &m, &d.path().join("run")).unwrap();
    }
    for f in ["data/agent_0.json", "data/agent_1.json", "data/norms.csv", "run/mission.json", "run/positions.csv", "run/inputs.csv"] {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
}

#[test]
fn stationary_agent_stays_at_its_goal() {
    let mut cfg = cube8_prefix(1, 50);
    cfg.agents[0].goal = cfg.agents[0].start.clone();
    let s = drone(cfg);
    let data = collect(&s, Feedback::Riccati).unwrap();
    let mf = run(&s, Some(&data), Controller::Deepc).unwrap();
    let m = metrics(&s, &mf, Some(&data)).unwrap();
    assert!(m.terminal_errors[0] < 1e-3, "{:?}", m.terminal_errors);
}

#[test]
fn cli_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let scenario = write_toml(d, "pair", &[([-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]), ([1.0, 0.05, 0.0], [-1.0, 0.05, 0.0])], "steps = 20");
    let sc = scenario.to_str().unwrap();
    let p = |x: &str| d.join(x).to_str().unwrap().to_string();
    let out = dpc(&["collect", "--scenario", sc, "--out", &p("data"), "--open-loop"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let norms = Table::read(&d.join("data/norms.csv")).unwrap();
    let closed = norms.numbers("norm_2").unwrap();
    let open = norms.numbers("open_loop_norm_2").unwrap();
    assert!(closed.iter().zip(&open).all(|(c, o)| o / c >= 100.0));

    let out = dpc(&["run", "--scenario", sc, "--data", &p("data"), "--out", &p("deepc")]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = dpc(&["run", "--scenario", sc, "--out", &p("model"), "--controller", "model-mpc"]);
    assert_eq!(out.status.code(), Some(0));
    let out = dpc(&["compare", &p("deepc/mission.json"), &p("model/mission.json"), "--out", &p("cmp.csv")]);
    assert!(out.status.success());
    assert_eq!(Table::read(&d.join("cmp.csv")).unwrap().rows.len(), 40);
    let out = dpc(&["plotdata", &p("deepc/mission.json"), "--out", &p("plots")]);
    assert!(out.status.success());
    assert!(d.join("plots/thrust.csv").exists());

    let out = dpc(&["--seed", "3", "run", "--scenario", sc, "--data", &p("data"), "--out", &p("other")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data hash"));
}

#[test]
fn broken_separation_exits_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // Tracking weights far above the slack penalty pull both agents onto a shared goal.
    let extra = "steps = 10\n[weights]\noutput = [1e6, 1e6, 1e6, 0, 0, 0, 0, 0, 0, 0, 0, 0]\ninput = [0, 0, 0, 0]";
    let scenario = write_toml(d, "squeeze", &[([-0.16, 0.0, 0.0], [0.0; 3]), ([0.16, 0.0, 0.0], [0.0; 3])], extra);
    let sc = scenario.to_str().unwrap();
    let p = |x: &str| d.join(x).to_str().unwrap().to_string();
    assert!(dpc(&["collect", "--scenario", sc, "--out", &p("data")]).status.success());
    let out = dpc(&["--soft-collisions", "run", "--scenario", sc, "--data", &p("data"), "--out", &p("run")]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("min pairwise distance"));
    let mf = MissionFile::read(&d.join("run/mission.json")).unwrap();
    assert_eq!(mf.log.steps_done(), 10);
}

#[test]
fn overlapping_starts_are_rejected() {
    let mut cfg = cube8_prefix(2, 5);
    cfg.agents[1].start = vec![-0.9, -1.0, -1.0];
    let err = Scenario::with_model(cfg, dpc_core::linsys::drone_model()).unwrap_err().to_string();
    assert!(err.contains("d_safe"), "{err}");
    assert!(Scenario::resolve("cube8", &Overrides::default()).is_ok());
}
