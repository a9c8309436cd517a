use std::process::Command;

use opindex::cli::{self, CommandConfig, OutputFormat, ResultRecord, Status};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_opindex"))
}

fn run_json(args: &[&str]) -> (i32, ResultRecord) {
    let out = bin().args(args).args(["--format", "json"]).output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    let rec = ResultRecord::from_json(&text).unwrap_or_else(|e| panic!("{e}: {text}"));
    (out.status.code().unwrap(), rec)
}

#[test]
fn witten_defaults_are_documented_grid() {
    let c = cli::parse_config(["opindex", "witten-estimate", "--mu", "1.0"]).unwrap();
    match c.command {
        CommandConfig::WittenEstimate { mu, grid } => {
            assert_eq!(mu, 1.0);
            assert_eq!((grid.half_width, grid.points), (40.0, 1024));
            assert_eq!(grid.schedule(), vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0]);
            assert_eq!(grid.s_nodes, 8);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(c.format, OutputFormat::Table);
}

#[test]
fn malformed_value_is_a_usage_error() {
    let out = bin().args(["witten-estimate", "--mu", "abc"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(matches!(
        cli::parse_config(["opindex", "witten-estimate", "--mu", "abc"]),
        Err(cli::UsageError::Invalid(_))
    ));
    let (code, rec) = run_json(&["levinson", "--well-depth", "-3"]);
    assert_eq!(code, 2);
    assert_eq!(rec.status, Status::UsageError);
}

#[test]
fn flags_override_file_values() {
    for file in ["mu = 0.5\n", "{\"mu\": 0.5}"] {
        let c = cli::parse_config_with(["opindex", "witten-estimate", "--mu", "1.7"], Some(file)).unwrap();
        assert!(matches!(c.command, CommandConfig::WittenEstimate { mu, .. } if mu == 1.7));
        let c = cli::parse_config_with(["opindex", "witten-estimate"], Some(file)).unwrap();
        assert!(matches!(c.command, CommandConfig::WittenEstimate { mu, .. } if mu == 0.5));
    }
}

#[test]
fn config_file_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = dir.path().join("unknown.conf");
    std::fs::write(&unknown, "# comment\nwell_depth = 3\nmu = 1\n").unwrap();
    let out = bin().args(["levinson", "--config"]).arg(&unknown).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{\"well-depth\": ").unwrap();
    let out = bin().args(["levinson", "--config"]).arg(&broken).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let good = dir.path().join("good.conf");
    std::fs::write(&good, "well_depth = 5  # two bound states\nformat = json\n").unwrap();
    let out = bin().args(["levinson", "--config"]).arg(&good).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let rec = ResultRecord::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(rec.scalars["n_bound"], 2.0);
}

#[test]
fn toeplitz_example_reports_minus_one() {
    let (code, rec) = run_json(&["toeplitz-example", "--n", "64"]);
    assert_eq!(code, 0);
    assert_eq!(rec.scalars["index"], -1.0);
    assert_eq!(rec.residuals["left_defect_violations"], 0.0);
    assert_eq!(rec.conventions, opindex::conventions::all_tags());
}

#[test]
fn witten_estimate_csv() {
    let out = bin().args(["witten-estimate", "--mu", "1.0", "--format", "csv"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let mut reader = csv::Reader::from_reader(out.stdout.as_slice());
    assert_eq!(reader.headers().unwrap(), vec!["record", "key", "x", "value_re", "value_im"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    let rhs: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| &r[0] == "curve" && &r[1] == "rhs")
        .map(|r| (r[2].parse().unwrap(), r[3].parse().unwrap()))
        .collect();
    assert_eq!(rhs.len(), 8);
    assert_eq!(rhs[0].0, 1.0);
    let plateau: f64 = rows
        .iter()
        .find(|r| &r[0] == "scalar" && &r[1] == "plateau")
        .map(|r| r[3].parse().unwrap())
        .unwrap();
    assert!((plateau - 0.5).abs() <= 0.02);
    // 17 significant digits
    let v = &rows.iter().find(|r| &r[0] == "scalar").unwrap()[3];
    assert_eq!(v.split('e').next().unwrap().replace(['.', '-'], "").len(), 17);
}

#[test]
fn levinson_command_accepts_depth_two() {
    let (code, rec) = run_json(&["levinson", "--well-depth", "2", "--well-width", "1"]);
    assert_eq!(code, 0);
    assert!(rec.residuals["levinson"] <= 0.05);
    assert_eq!(rec.scalars["n_bound"], 1.0);
    assert!(rec.curves.iter().any(|c| c.name == "s11"));
}

#[test]
fn near_resonant_well_is_inconclusive() {
    // 1% above the first threshold: |t(0)| extrapolates into the guard band
    let depth = (std::f64::consts::PI / 2.0).powi(2) * 1.01;
    let (code, rec) = run_json(&["levinson", "--well-depth", &depth.to_string()]);
    assert_eq!(code, 3);
    assert_eq!(rec.status, Status::Inconclusive);
    assert!(rec.message.unwrap().contains("guard band"));
}

#[test]
fn records_are_deterministic_and_round_trip() {
    let (_, a) = run_json(&["corrected-index", "--well-depth", "5"]);
    let (_, b) = run_json(&["corrected-index", "--well-depth", "5"]);
    assert_eq!(a.without_timing(), b.without_timing());
    assert_eq!(a.without_timing().to_json(), b.without_timing().to_json());
    assert_eq!(ResultRecord::from_json(&a.to_json()).unwrap(), a);
    assert_eq!(a.scalars["fredholm_index"], 2.0);
}

#[test]
fn out_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rec.json");
    let out = bin()
        .args(["sigma-index", "--branch", "antidiagonal", "--format", "json", "--out"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let rec = ResultRecord::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert!((rec.scalars["witten_index_sigma"] - 0.5).abs() < 1e-6);
}

#[test]
fn help_lists_csv_schema() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("record,key,x,value_re,value_im"));
    assert!(text.contains("witten-estimate"));
}
