use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fluidq_cli::commands::{analyze_buffer1, bounds_buffer2, reproduce_tables, run_simulation};
use fluidq_cli::report::{Buffer1Report, Buffer2Report, TablesReport};
use fluidq_cli::{Format, Report, RunConfig};
use fluidq_core::{ModelParams, SimConfig, SimEstimate};

fn config(model: ModelParams) -> RunConfig {
    RunConfig::from_json(&format!(r#"{{"model": {}}}"#, serde_json::to_string(&model).unwrap())).unwrap()
}

fn fluidq(args: &[&str], cfg: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fluidq"));
    cmd.args(args);
    if let Some(p) = cfg {
        cmd.arg("--config").arg(p);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &tempfile::TempDir, text: &str) -> PathBuf {
    let p = dir.path().join("config.json");
    std::fs::write(&p, text).unwrap();
    p
}

const SCENARIO_A: &str = r#""n": 1, "alpha1": 11.0, "beta1": 1.0, "alpha2": 11.0, "beta2": 1.0,
    "r1": 12.48, "r2": 12.48, "c1": 1.6, "c2": 1.0, "x_star": 1.5"#;

#[test]
fn scenario_a_threshold_tail() {
    let mut cfg = config(ModelParams::scenario_a());
    cfg.analysis.x_grid = vec![1.5, 3.0];
    let r = analyze_buffer1(&cfg).unwrap();
    assert_eq!(format!("{:.4}", r.rows[0].tail), "0.1706");
    assert!(r.rows[0].density.is_none());
    assert_eq!(r.rows[1].density.as_ref().unwrap().len(), 2);
    assert!(r.to_csv().contains("\n1.500000,0.170607,,\n"));
}

#[test]
fn scenario_e_finite_tail_at_three() {
    let mut cfg = config(ModelParams::scenario_e().with_capacity(Some(6.0)));
    cfg.analysis.x_grid = vec![3.0];
    let r = analyze_buffer1(&cfg).unwrap();
    assert_eq!(format!("{:.4}", r.rows[0].tail), "0.0592");
}

#[test]
fn integral_ratio_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    // four sources with c1/R1 = 2
    let text = r#"{"model": {"n": 4, "alpha1": 11.0, "beta1": 1.0, "alpha2": 11.0, "beta2": 1.0,
        "r1": 0.8, "r2": 0.8, "c1": 1.6, "c2": 1.0, "x_star": 1.5}}"#;
    let out = fluidq(&["analyze-buffer1"], Some(&write_config(&dir, text)));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("c1/R1 integral"));
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(r#"{{"model": {{{SCENARIO_A}}}, "analysis": {{"tolerance": 1e-9}}}}"#);
    let out = fluidq(&["analyze-buffer1"], Some(&write_config(&dir, &text)));
    assert_eq!(out.status.code(), Some(2));
    let text = format!(r#"{{"model": {{{SCENARIO_A}}}, "plots": {{}}}}"#);
    let out = fluidq(&["analyze-buffer1"], Some(&write_config(&dir, &text)));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, &format!(r#"{{"model": {{{SCENARIO_A}}}}}"#));
    // no Riccati iteration reaches this tolerance
    let out = fluidq(&["analyze-buffer1", "--tol", "1e-40"], Some(&cfg));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bounds_report_has_constant_eta_column() {
    let r = bounds_buffer2(&config(ModelParams::scenario_a())).unwrap();
    assert!(r.k_lower <= r.k_upper);
    assert!(r.residual.abs() < 1e-8);
    let csv = r.to_csv();
    let etas: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(etas.len(), 4);
    assert!(etas.iter().all(|e| *e == "0.214669"));
}

#[test]
fn bounds_bracket_simulation() {
    let mut cfg = config(ModelParams::scenario_a());
    cfg.analysis.y_grid = vec![1.0, 2.0, 4.0];
    let mut sim = SimConfig::new(5e5, 4);
    sim.replications = 2;
    cfg.simulation = Some(sim);
    let b = bounds_buffer2(&cfg).unwrap();
    let s = run_simulation(&cfg).unwrap();
    for (row, est) in b.rows.iter().zip(&s.y_tail) {
        assert_eq!(row.y, est.level);
        assert!(row.lower <= est.prob && est.prob <= row.upper, "{row:?} vs {est:?}");
    }
}

#[test]
fn json_reports_round_trip() {
    let mut cfg = config(ModelParams::scenario_a().with_capacity(Some(6.0)));
    cfg.simulation = Some(SimConfig::new(2e3, 1));
    let b1 = analyze_buffer1(&cfg).unwrap();
    assert_eq!(serde_json::from_str::<Buffer1Report>(&b1.render(Format::Json)).unwrap(), b1);
    let b2 = bounds_buffer2(&config(ModelParams::scenario_a())).unwrap();
    assert_eq!(serde_json::from_str::<Buffer2Report>(&b2.render(Format::Json)).unwrap(), b2);
    let s = run_simulation(&cfg).unwrap();
    assert_eq!(serde_json::from_str::<SimEstimate>(&s.render(Format::Json)).unwrap(), s);
    let t = reproduce_tables(1e-12);
    assert_eq!(serde_json::from_str::<TablesReport>(&t.render(Format::Json)).unwrap(), t);
}

#[test]
fn simulation_csv_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(r#"{{"model": {{{SCENARIO_A}, "v": 3.5}}, "simulation": {{"horizon": 2e4, "replications": 2}}}}"#);
    let cfg = write_config(&dir, &text);
    let a = fluidq(&["simulate", "--seed", "9"], Some(&cfg));
    let b = fluidq(&["simulate", "--seed", "9"], Some(&cfg));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let c = fluidq(&["simulate", "--seed", "10"], Some(&cfg));
    assert_ne!(a.stdout, c.stdout);
    let header = String::from_utf8(a.stdout).unwrap();
    assert!(header.starts_with("quantity,level,prob,std_error,replications\n"));
}

#[test]
fn more_replications_shrink_the_error() {
    let mut cfg = config(ModelParams::scenario_a().with_capacity(Some(3.5)));
    let mut sim = SimConfig::new(5e4, 2);
    sim.x_grid = vec![1.5];
    sim.y_grid = vec![1.0];
    cfg.simulation = Some(sim.clone());
    let one = run_simulation(&cfg).unwrap();
    sim.replications = 4;
    cfg.simulation = Some(sim);
    let four = run_simulation(&cfg).unwrap();
    let ratio = one.x_tail[0].std_error / four.x_tail[0].std_error;
    assert!(ratio > 1.4 && ratio < 2.9, "ratio {ratio}");
    assert!((four.x_tail[0].prob - 0.1411).abs() < 4.0 * four.x_tail[0].std_error);
}

#[test]
fn table_cells() {
    let t = reproduce_tables(1e-12);
    assert_eq!(t.cells.len(), 24);
    assert!(t.cells.iter().all(|c| !c.flagged));
    let cell = |q: &str, s: &str, v: Option<f64>| t.cells.iter().find(|c| c.quantity == q && c.scenario == s && c.v == v).unwrap();
    assert_eq!(format!("{:.4}", cell("3", "F", Some(3.5)).computed.unwrap()), "0.0505");
    assert_eq!(format!("{:.4}", cell("x*", "E", Some(20.0)).computed.unwrap()), "0.1942");
    for c in t.cells.iter().filter(|c| c.v == Some(20.0)) {
        let inf = cell(&c.quantity, &c.scenario, None);
        assert_eq!(format!("{:.4}", c.computed.unwrap()), format!("{:.4}", inf.computed.unwrap()));
    }
    let text = t.to_text();
    assert!(text.contains("0.0505"));
    assert!(text.contains("0 cell(s) deviate"));
}

#[test]
fn reproduce_tables_command() {
    let out = fluidq(&["reproduce-tables"], None);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("lim P(X > x*)\n"));
    let out = fluidq(&["reproduce-tables", "--format", "csv"], None);
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.contains("3,F,3.5,0.0505,0.0505,false"));
}

#[test]
fn config_defaults() {
    let cfg = config(ModelParams::scenario_a().with_capacity(Some(3.5)));
    assert_eq!(cfg.x_grid(), vec![0.75, 1.5, 3.0]);
    assert_eq!(cfg.y_grid(), vec![1.0, 2.0, 4.0, 8.0]);
    let sim = cfg.sim_config();
    assert_eq!(sim.batches, 50);
    assert_eq!(sim.warmup(), 0.1 * sim.horizon);
    assert_eq!(sim.x_grid, cfg.x_grid());
}
