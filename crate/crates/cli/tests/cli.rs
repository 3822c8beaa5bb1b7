use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn herding(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_herding")).args(args).output().expect("run binary")
}

struct Case {
    dir: tempfile::TempDir,
}

impl Case {
    fn new() -> Self {
        Case { dir: tempfile::tempdir().unwrap() }
    }

    fn file(&self, name: &str, body: &str) -> PathBuf {
        let p = self.dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn run(&self, sub: &str, config: &str, extra: &[&str]) -> Output {
        let cfg = self.file("run.cfg", config);
        let out = self.out();
        let mut args = vec![sub, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        herding(&args)
    }

    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.out().join(name)).unwrap()
    }
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).expect("column");
    lines.map(|l| l.split(',').nth(idx).unwrap_or("").to_string()).collect()
}

fn no_output(dir: &Path) -> bool {
    !dir.exists()
}

#[test]
fn config_errors_exit_with_two_and_write_nothing() {
    for (sub, cfg) in [
        ("regions", "model.obs = 0.8,0.2;0.3,0.3\n"),
        ("regions", "regions.typo = 3\n"),
        ("herding-sim", "sim.flag_priors = 0.2,1.4\n"),
        ("brp", "brp.samples = missing.csv\n"),
        ("async", "async.pattern = ring\n"),
        ("stopping-sweep", "stopping.rho = 1.5\n"),
        ("incentive-sweep", "incentive.omega = 0.3,0.3\n"),
    ] {
        let c = Case::new();
        let out = c.run(sub, cfg, &[]);
        assert_eq!(out.status.code(), Some(2), "{sub} with {cfg:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stderr).contains("config key"));
        assert!(no_output(&c.out()));
    }
    let c = Case::new();
    let out = herding(&["regions", "--config", c.dir.path().join("absent.cfg").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn two_state_regions_switch_at_the_thresholds() {
    let c = Case::new();
    let out = c.run("regions", "model.obs = 0.8,0.2;0.2,0.8\nregions.grid = 11\n", &[]);
    assert!(out.status.success());
    let csv = c.read("regions.csv");
    assert!(csv.starts_with("pi_0,pi_1,label\n"));
    let p = column(&csv, "pi_0");
    let labels = column(&csv, "label");
    for (p, l) in p.iter().zip(&labels) {
        let p: f64 = p.parse().unwrap();
        let expect = if p >= 0.8 - 1e-12 {
            "herd_0"
        } else if p < 0.2 - 1e-12 {
            "herd_1"
        } else {
            "learning"
        };
        assert_eq!(l, expect, "p = {p}");
    }
}

#[test]
fn three_state_regions() {
    let c = Case::new();
    let cfg = "model.obs = 0.7,0.2,0.1;0.1,0.7,0.2;0.2,0.1,0.7\nregions.grid = 7\n";
    assert!(c.run("regions", cfg, &[]).status.success());
    let csv = c.read("regions.csv");
    assert_eq!(csv.lines().count(), 1 + 28);
    for line in csv.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        let probs: Vec<f64> = cells[..3].iter().map(|v| v.parse().unwrap()).collect();
        if let Some(i) = probs.iter().position(|&v| v == 1.0) {
            assert_eq!(cells[3], format!("herd_{i}"));
        }
    }
    let c = Case::new();
    assert!(c
        .run("regions", "model.obs = 0.7,0.2,0.1;0.1,0.7,0.2;0.2,0.1,0.7\nregions.grid = 4\n", &[])
        .status
        .success());
    assert!(c
        .read("regions.csv")
        .lines()
        .any(|l| l.starts_with("0.333333333333,0.333333333333,0.333333333333,learning")));
}

#[test]
fn vertex_prior_cascades_at_once() {
    let c = Case::new();
    assert!(c.run("herding-sim", "sim.flag_priors = 0\nsim.horizon = 30\n", &["--runs", "10"]).status.success());
    assert!(column(&c.read("summary.csv"), "cascade_time").iter().all(|k| k == "1"));
}

#[test]
fn prior_grid_cascades_within_a_short_horizon() {
    let c = Case::new();
    let cfg = "model.obs = 0.8,0.2;0.2,0.8\nsim.flag_priors = 0.2,0.3,0.4,0.5,0.6,0.7,0.8\nsim.horizon = 80\n";
    assert!(c.run("herding-sim", cfg, &["--runs", "20"]).status.success());
    let summary = c.read("summary.csv");
    assert_eq!(summary.lines().count(), 1 + 7 * 2 * 20);
    assert!(column(&summary, "cascade_time").iter().all(|k| !k.is_empty()));
    let paths = c.read("mean_paths.csv");
    assert_eq!(paths.lines().count(), 1 + 14 * 81);
}

#[test]
fn replayed_observations_drive_the_simulation() {
    let c = Case::new();
    c.file("labels.csv", "state,observation\n0,0\n0,1\n1,1\n");
    let cfg = "sensor.kind = replay\nsensor.replay = labels.csv\nsim.flag_priors = 0.5\nsim.horizon = 20\n";
    assert!(c.run("herding-sim", cfg, &["--runs", "3"]).status.success());
    let a = Case::new();
    a.file("labels.csv", "state,observation\n0,0\n0,1\n1,1\n");
    assert_eq!(a.run("herding-sim", &format!("{cfg}sensor.cyclic = false\n"), &["--runs", "3"]).status.code(), Some(1));
}

#[test]
fn brp_verdicts_from_files() {
    let c = Case::new();
    // Environment 0 classifies perfectly, environment 1 always answers 0.
    c.file("samples.csv", "environment,state,action\n0,0,0\n0,1,1\n1,0,0\n1,1,0\n");
    let out = c.run("brp", "brp.samples = samples.csv\nbrp.prior = 0.5,0.5\n", &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(c.read("feasibility.csv").contains("ribum,"));
    assert!(c.read("utilities.csv").starts_with("environment,state,action,utility\n"));
    assert!(c.read("report.csv").starts_with("eps1,eps2,K_hat\n"));

    let c = Case::new();
    c.file("samples.csv", "environment,state,action\n0,0,0\n0,0,1\n0,1,0\n0,1,1\n1,0,0\n1,0,1\n1,1,0\n1,1,1\n");
    let out = c.run("brp", "brp.samples = samples.csv\n", &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(c.read("feasibility.csv").contains("not_ribum"));
    assert!(!c.out().join("utilities.csv").exists());

    let c = Case::new();
    c.file("samples.csv", "environment,state,action\n0,0,0\n0,1,1\n1,0,0\n1,1,0\n");
    assert!(c.run("brp", "brp.samples = samples.csv\nbrp.method = sparse\n", &[]).status.success());
}

#[test]
fn sweep_outputs_have_the_declared_shape() {
    let c = Case::new();
    assert!(c
        .run("stopping-sweep", "stopping.grid = 100\nstopping.vi_points = 11\n", &["--runs", "10"])
        .status
        .success());
    let s = c.read("stopping_sweep.csv");
    assert!(s.starts_with("theta,mean_cost,mean_stop_time,accuracy\n"));
    assert_eq!(s.lines().count(), 101);
    assert_eq!(c.read("value_iteration.csv").lines().count(), 12);

    let c = Case::new();
    assert!(c.run("incentive-sweep", "incentive.grid = 5\n", &["--runs", "5"]).status.success());
    let s = c.read("incentive_sweep.csv");
    assert!(s.starts_with("theta,total_incentive,classification_rate\n"));
    assert_eq!(s.lines().count(), 6);

    let c = Case::new();
    assert!(c.run("spsa", "spsa.iterations = 4\n", &["--runs", "5"]).status.success());
    assert_eq!(c.read("spsa.csv").lines().count(), 5);
    assert!(c.read("spsa_final.csv").starts_with("theta,mean_cost,total_incentive,classification_rate\n"));
}

#[test]
fn schedules_from_files() {
    let c = Case::new();
    c.file(
        "s.csv",
        "event_index,agent,kind\n0,0,draw\n1,0,update\n2,0,broadcast\n3,1,draw\n4,1,update\n5,1,broadcast\n",
    );
    assert!(c.run("async", "async.schedule = s.csv\n", &["--runs", "3"]).status.success());
    assert!(column(&c.read("incest.csv"), "kl_naive_vs_correct").iter().all(|k| k == "0"));
    let c = Case::new();
    c.file("s.csv", "event_index,agent,kind\n0,0,update\n");
    assert_eq!(c.run("async", "async.schedule = s.csv\n", &[]).status.code(), Some(2));
}

#[test]
fn seed_flag_overrides_the_config_and_output_is_reproducible() {
    let a = Case::new();
    let b = Case::new();
    let cfg = "seed = 5\nsim.flag_priors = 0.34\nsim.horizon = 50\n";
    assert!(a.run("herding-sim", cfg, &["--runs", "30"]).status.success());
    assert!(b.run("herding-sim", cfg, &["--runs", "30"]).status.success());
    assert_eq!(a.read("summary.csv"), b.read("summary.csv"));
    let c = Case::new();
    assert!(c.run("herding-sim", cfg, &["--runs", "30", "--seed", "6"]).status.success());
    assert_ne!(a.read("summary.csv"), c.read("summary.csv"));
}
