use std::fs;
use std::path::Path;

use approx::assert_abs_diff_eq;
use scpo::checkpoint::Checkpoint;
use scpo::experiment::{
    reachable_masks, run_experiment, run_reachable, ExperimentConfig, TaskKind, LOG_COLUMNS, MASK_COLUMNS,
    REGRESSION_CURVE_COLUMNS, TRAJECTORY_COLUMNS,
};
use scpo::net::PolicyNet;

fn small_regression() -> ExperimentConfig {
    let mut c = ExperimentConfig::new(TaskKind::Regression);
    c.epochs = Some(6);
    c.network.hidden_width = 8;
    c.network.num_blocks = 2;
    c.trainer.checkpoint_every = 2;
    c
}

fn small_control() -> ExperimentConfig {
    let mut c = ExperimentConfig::new(TaskKind::DoubleIntegrator);
    c.epochs = Some(3);
    c.trainer.eta = Some(1e-2);
    c.network.hidden_width = 8;
    c.network.num_blocks = 2;
    c.control.grid_resolution = 12;
    c.control.rollouts_per_epoch = 6;
    c.control.rollout_horizon = 60;
    c.control.reach_horizon = 600;
    c.control.curve_horizon = 80;
    c
}

fn header(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(String::from).collect()
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].to_string()).collect()
}

#[test]
fn regression_run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_regression();
    let run = run_experiment(&cfg, dir.path(), |_| {}).unwrap();
    let out = dir.path();
    assert_eq!(header(&out.join("log.csv")), LOG_COLUMNS);
    assert_eq!(header(&out.join("curve.csv")), REGRESSION_CURVE_COLUMNS);
    assert_eq!(column(&out.join("log.csv"), "epoch").len(), 6);

    let ckpts: Vec<String> = {
        let mut v: Vec<String> = fs::read_dir(out.join("checkpoints"))
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        v.sort();
        v
    };
    assert_eq!(ckpts, ["epoch-0000.ckpt", "epoch-0002.ckpt", "epoch-0004.ckpt", "epoch-0006.ckpt"]);

    let last = Checkpoint::load(out.join("checkpoints/epoch-0006.ckpt")).unwrap().into_net().unwrap();
    let fin = Checkpoint::load(out.join("final_policy.ckpt")).unwrap().into_net().unwrap();
    assert_eq!(last.params(), fin.params());
    assert_eq!(fin.params(), run.outcome.net.params());

    let first = Checkpoint::load(out.join("checkpoints/epoch-0000.ckpt")).unwrap().into_net().unwrap();
    let theta0 = PolicyNet::init_zero_residual(cfg.net_spec()).unwrap();
    assert_eq!(first.params(), theta0.params());

    // echoed config reproduces the run
    let echoed = ExperimentConfig::load(out.join("config.json")).unwrap();
    assert_eq!(echoed, cfg);

    let bound = cfg.regression.bound;
    for v in column(&out.join("curve.csv"), "policy") {
        assert!(v.parse::<f64>().unwrap().abs() <= bound + 1e-9);
    }
}

#[test]
fn runs_are_reproducible_from_seed() {
    let cfg = small_regression();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_experiment(&cfg, a.path(), |_| {}).unwrap();
    let rb = run_experiment(&cfg, b.path(), |_| {}).unwrap();
    assert_eq!(ra.outcome.net.params(), rb.outcome.net.params());
    for (x, y) in ra.outcome.log.records.iter().zip(&rb.outcome.log.records) {
        assert_eq!((x.loss, x.loss_after, x.max_g, x.alpha), (y.loss, y.loss_after, y.max_g, y.alpha));
    }
    let mut other = cfg.clone();
    other.seed = 1;
    let rc = run_experiment(&other, tempfile::tempdir().unwrap().path(), |_| {}).unwrap();
    assert_ne!(rc.outcome.log.records[0].loss, ra.outcome.log.records[0].loss);
}

#[test]
fn control_run_and_reachable_masks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_control();
    let run = run_experiment(&cfg, dir.path(), |_| {}).unwrap();
    assert!(run.outcome.log.records.iter().all(|r| r.max_g <= 1e-9));
    let curve = dir.path().join("curve.csv");
    assert_eq!(header(&curve), TRAJECTORY_COLUMNS);
    let policies = column(&curve, "policy");
    for p in ["safe", "theta", "expert"] {
        assert!(policies.iter().any(|v| v == p), "{p} missing");
    }

    // theta_0 is the backup policy, so their masks agree exactly
    let reach = dir.path().join("reach0");
    let counts = run_reachable(&cfg, &dir.path().join("checkpoints/epoch-0000.ckpt"), &reach).unwrap();
    assert_eq!(counts.safe, counts.theta);
    assert_eq!(counts.safe_not_theta, 0);
    assert!(counts.safe > 0);
    for f in ["mask_safe.csv", "mask_theta.csv", "mask_expert.csv"] {
        assert_eq!(header(&reach.join(f)), MASK_COLUMNS);
        assert_eq!(column(&reach.join(f), "flag").len(), 144);
    }
    assert_eq!(
        fs::read_to_string(reach.join("mask_safe.csv")).unwrap(),
        fs::read_to_string(reach.join("mask_theta.csv")).unwrap()
    );

    let masks = reachable_masks(&cfg, run.outcome.net.params()).unwrap();
    assert_eq!(masks.grid.len(), 144);
}

#[test]
fn reachable_rejects_missing_checkpoint() {
    let cfg = small_control();
    let dir = tempfile::tempdir().unwrap();
    let err = run_reachable(&cfg, &dir.path().join("nope.ckpt"), dir.path()).unwrap_err();
    assert!(err.to_string().contains("nope.ckpt"));
}

#[test]
fn backup_value_matches_quadratic_near_origin() {
    let cfg = ExperimentConfig::new(TaskKind::DoubleIntegrator);
    let model = cfg.backup_model().unwrap();
    let x = [0.05, -0.02];
    let quad = (0..2)
        .map(|i| (0..2).map(|j| x[i] * model.backup.p[(i, j)] * x[j]).sum::<f64>())
        .sum::<f64>();
    assert_abs_diff_eq!(scpo::control::value_backup(&model, &x), quad, epsilon = 1e-9);
}
