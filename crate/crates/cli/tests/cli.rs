use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_smoothed-ftpl");

fn threshold_config(horizons: &str, seeds: &str, extra: &str) -> String {
    format!(
        r#"{{
  "environment": {{"kind": "threshold"}},
  "adversary": {{"kind": "uniform_box", "lower": [0], "upper": [1],
                "labeler": {{"kind": "threshold", "cut": 0.4, "flip_prob": 0.1}}}},
  "learner": {{"algorithm": "lazy_ftpl_expo"}},
  "run": {{"T": {horizons}, "seeds": {seeds}}}{extra}
}}"#
    )
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn config(&self, name: &str, text: &str) -> PathBuf {
        let p = self.dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn cli(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("SMOOTHED_FTPL_OUT")
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_csv(p: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(p).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect()
}

fn without_wall_clock(rows: Vec<Vec<String>>) -> Vec<Vec<String>> {
    rows.into_iter()
        .map(|mut r| {
            r.remove(9);
            r
        })
        .collect()
}

#[test]
fn single_cell_gives_one_run_and_one_row() {
    let ws = Workspace::new();
    let cfg = ws.config("c.json", &threshold_config("[10]", "[1]", ""));
    let out = ws.out("o");
    let res = cli(&["run", "--config", path(&cfg), "--out", path(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let runs: Vec<_> = std::fs::read_dir(out.join("runs")).unwrap().collect();
    assert_eq!(runs.len(), 1);
    let rows = read_csv(&out.join("results.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "threshold");
    assert_eq!(rows[0][1], "10");
    // ceil(T / n) oracle calls
    let n: usize = rows[0][2].parse().unwrap();
    assert_eq!(rows[0][7], 10usize.div_ceil(n).to_string());

    let record: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("runs/T10_seed1/run.json")).unwrap()).unwrap();
    assert_eq!(record["config_seed"], 1);
    assert_eq!(record["record"]["steps"].as_array().unwrap().len(), 10);
}

#[test]
fn repeated_runs_match_apart_from_wall_clock() {
    let ws = Workspace::new();
    let cfg = ws.config("c.json", &threshold_config("[50, 80]", "[1, 2, 3]", ""));
    let (a, b) = (ws.out("a"), ws.out("b"));
    assert!(cli(&["run", "--config", path(&cfg), "--out", path(&a), "--jobs", "1"]).status.success());
    assert!(cli(&["run", "--config", path(&cfg), "--out", path(&b), "--jobs", "3"]).status.success());
    let ra = without_wall_clock(read_csv(&a.join("results.csv")));
    let rb = without_wall_clock(read_csv(&b.join("results.csv")));
    assert_eq!(ra, rb);
    assert_eq!(
        std::fs::read(a.join("runs/T80_seed2/run.json")).unwrap(),
        std::fs::read(b.join("runs/T80_seed2/run.json")).unwrap()
    );
}

#[test]
fn master_seed_changes_the_streams() {
    let ws = Workspace::new();
    let cfg = ws.config("c.json", &threshold_config("[200]", "[1]", ""));
    let (a, b) = (ws.out("a"), ws.out("b"));
    assert!(cli(&["run", "--config", path(&cfg), "--out", path(&a)]).status.success());
    assert!(cli(&["run", "--config", path(&cfg), "--out", path(&b), "--seed", "9"]).status.success());
    let ja = std::fs::read(a.join("runs/T200_seed1/run.json")).unwrap();
    let jb = std::fs::read(b.join("runs/T200_seed1/run.json")).unwrap();
    assert_ne!(ja, jb);
}

#[test]
fn several_horizons_append_a_fit_row() {
    let ws = Workspace::new();
    let cfg = ws.config("c.json", &threshold_config("[100, 200, 400, 800]", "[1, 2]", ""));
    let out = ws.out("o");
    assert!(cli(&["run", "--config", path(&cfg), "--out", path(&out)]).status.success());
    let rows = read_csv(&out.join("results.csv"));
    assert_eq!(rows.len(), 9);
    let fit = rows.last().unwrap();
    assert_eq!(fit[0], "threshold/fit");
    let slope: f64 = fit[5].parse().unwrap();
    assert!(slope.is_finite() && slope > 0.0 && slope < 1.5, "{slope}");
}

#[test]
fn floats_are_written_with_seventeen_digits() {
    let ws = Workspace::new();
    let cfg = ws.config("c.json", &threshold_config("[30]", "[4]", ""));
    let out = ws.out("o");
    assert!(cli(&["run", "--config", path(&cfg), "--out", path(&out)]).status.success());
    let rows = read_csv(&out.join("results.csv"));
    let eta = &rows[0][3];
    let mantissa = eta.split('e').next().unwrap();
    assert_eq!(mantissa.replace(['.', '-'], "").len(), 17, "{eta}");
}

#[test]
fn env_var_overrides_out_flag() {
    let ws = Workspace::new();
    let cfg = ws.config("c.json", &threshold_config("[10]", "[1]", ""));
    let (flag, var) = (ws.out("flag"), ws.out("var"));
    let res = Command::new(BIN)
        .args(["run", "--config", path(&cfg), "--out", path(&flag)])
        .env("SMOOTHED_FTPL_OUT", &var)
        .output()
        .unwrap();
    assert!(res.status.success());
    assert!(var.join("results.csv").exists());
    assert!(!flag.exists());
}

#[test]
fn bad_configs_exit_two_with_position() {
    let ws = Workspace::new();
    let cfg = ws.config(
        "c.json",
        &threshold_config("[10]", "[1]", ",\n  \"verify\": {\"n_mc\": 10, \"typo\": 1}"),
    );
    let res = cli(&["run", "--config", path(&cfg), "--out", path(&ws.out("o"))]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("line 7") && err.contains("verify.typo"), "{err}");

    let cfg = ws.config("d.json", &threshold_config("[10]", "[1]", "").replace("0.1}", "-0.1}"));
    let res = cli(&["run", "--config", path(&cfg), "--out", path(&ws.out("o"))]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("adversary.labeler.flip_prob"));

    let res = cli(&["run", "--config", path(&ws.out("missing.json"))]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn verify_trivial_bracket_passes() {
    let ws = Workspace::new();
    let extra = ",\n  \"verify\": {\"epsilon\": [1000], \"n_mc\": 200}";
    let cfg = ws.config("c.json", &threshold_config("[10]", "[1]", extra));
    let out = ws.out("o");
    let res = cli(&["verify", "bracket", "--config", path(&cfg), "--out", path(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = read_csv(&out.join("verify_bracket.csv"));
    assert_eq!(rows.len(), 1);
    assert!(rows[0][0].contains("cells=1"));
    assert_eq!(rows[0][1], "true");
}

#[test]
fn verify_concentration_with_no_samples_passes() {
    let ws = Workspace::new();
    let extra = ",\n  \"verify\": {\"n\": 0, \"trials\": 5}";
    let cfg = ws.config("c.json", &threshold_config("[10]", "[1]", extra));
    let out = ws.out("o");
    let res = cli(&["verify", "concentration", "--config", path(&cfg), "--out", path(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(read_csv(&out.join("verify_concentration.csv"))[0][1], "true");
}

#[test]
fn verify_isometry_negative_control_fails() {
    let ws = Workspace::new();
    let extra = ",\n  \"verify\": {\"alpha\": 0, \"pairs\": 5, \"n_mc\": 4000}";
    let cfg = ws.config("c.json", &threshold_config("[10]", "[1]", extra));
    let out = ws.out("o");
    let res = cli(&["verify", "isometry", "--config", path(&cfg), "--out", path(&out)]);
    assert_eq!(res.status.code(), Some(1));
    let rows = read_csv(&out.join("verify_isometry.csv"));
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().any(|r| r[1] == "false"));

    // the honest constant passes on the same pairs
    let cfg = ws.config("d.json", &threshold_config("[10]", "[1]", &extra.replace("\"alpha\": 0, ", "")));
    let res = cli(&["verify", "isometry", "--config", path(&cfg), "--out", path(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn verify_modeflip_on_planning() {
    let ws = Workspace::new();
    let cfg = ws.config(
        "p.json",
        r#"{
  "environment": {"kind": "planning", "horizon": 2, "u_max": 0.2, "diameter": 0.7, "lipschitz": 1,
                  "loss": {"kind": "l1_norm"}},
  "adversary": {"kind": "planning_noise", "width": 0.2},
  "learner": {"algorithm": "lazy_ftpl_expo"},
  "run": {"T": 20, "seeds": [0]},
  "verify": {"pairs": 4, "n_mc": 2000}
}"#,
    );
    let out = ws.out("o");
    let res = cli(&["verify", "modeflip", "--config", path(&cfg), "--out", path(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(read_csv(&out.join("verify_modeflip.csv")).len(), 4);
}

#[test]
fn sweep_eta_gives_one_row_per_value() {
    let ws = Workspace::new();
    let cfg = ws.config("c.json", &threshold_config("[40]", "[1]", ""));
    let out = ws.out("o");
    let res = cli(&[
        "sweep", "--config", path(&cfg), "--out", path(&out), "--param", "learner.eta", "--values", "10", "100",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = read_csv(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][3].parse::<f64>().unwrap(), 10.0);
    assert_eq!(rows[1][3].parse::<f64>().unwrap(), 100.0);
    assert_eq!((rows[0][10].as_str(), rows[1][10].as_str()), ("10", "100"));
}

#[test]
fn sweeping_seeds_changes_only_seed_and_outcomes() {
    let ws = Workspace::new();
    let cfg = ws.config("c.json", &threshold_config("[60]", "[1]", ""));
    let out = ws.out("o");
    let res = cli(&[
        "sweep", "--config", path(&cfg), "--out", path(&out), "--param", "run.seeds", "--values", "1", "2", "3",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = read_csv(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 3);
    for r in &rows[1..] {
        // env, T, n, eta and oracle calls are fixed by the config
        for col in [0, 1, 2, 3, 7] {
            assert_eq!(r[col], rows[0][col]);
        }
    }
    let seeds: Vec<&str> = rows.iter().map(|r| r[4].as_str()).collect();
    assert_eq!(seeds, ["1", "2", "3"]);
}

#[test]
fn sweep_rejects_empty_values_and_unknown_paths() {
    let ws = Workspace::new();
    let cfg = ws.config("c.json", &threshold_config("[10]", "[1]", ""));
    let out = ws.out("o");
    let res = cli(&["sweep", "--config", path(&cfg), "--out", path(&out), "--param", "learner.eta", "--values"]);
    assert_eq!(res.status.code(), Some(2));
    let res = cli(&["sweep", "--config", path(&cfg), "--out", path(&out), "--param", "learner.etaa", "--values", "1"]);
    assert_eq!(res.status.code(), Some(2));
    let res = cli(&["sweep", "--config", path(&cfg), "--out", path(&out), "--param", "nowhere.eta", "--values", "1"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.join("sweep.csv").exists());
}

#[test]
fn schema_file_is_valid_json_naming_every_section() {
    let schema: serde_json::Value =
        serde_json::from_str(include_str!("../config.schema.json")).unwrap();
    let props = schema["properties"].as_object().unwrap();
    for key in ["environment", "adversary", "learner", "run", "output", "verify"] {
        assert!(props.contains_key(key), "{key}");
    }
    assert_eq!(schema["additionalProperties"], false);
}
