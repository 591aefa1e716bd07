use std::fs;
use std::process::Command;

use liftrec::cli::{self, ColumnType, ExperimentConfig, Schema, Value};
use proptest::prelude::*;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_liftrec"))
}

const MINIMAL: &str = r#"
experiment = "internal"
action = "recover"
seed = 5

[grid]
n = 41

[potential]
kind = "step"
base = 1.0
q0 = 0.5
a = 0.4
b = 0.6

[noise]
deltas = [0.0]
"#;

#[test]
fn minimal_internal_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, MINIMAL).unwrap();
    let out = dir.path().join("out");
    let st = bin().args(["internal", "recover", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let csv = fs::read_to_string(out.join("table.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.split(',').any(|c| c == "err_L2"), "{header}");
    let rows = cli::read_table(&out.join("table.csv"), &cli::internal_schema()).unwrap();
    assert_eq!(rows.len(), 1);
    match rows[0][7] {
        Value::Real(e) => assert!(e <= 1e-3),
        ref v => panic!("{v:?}"),
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["assertions"].as_array().unwrap().iter().all(|a| a["pass"] == true));
    assert_eq!(summary["seed"], 5);
}

#[test]
fn unknown_key_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, format!("{MINIMAL}\n[grid2]\nn = 3\n")).unwrap();
    let st = bin().args(["internal", "recover", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).status().unwrap();
    assert_eq!(st.code(), Some(2));
    assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
    assert!(ExperimentConfig::from_toml_str("[grid]\nn = 41\nm = 3\n").is_err());
}

#[test]
fn mismatched_kind_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, MINIMAL).unwrap();
    let st = bin().args(["phaselift", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).status().unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn failing_assertion_exits_one() {
    // an iteration cap too small for convergence makes the recovery check fail
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, format!("{MINIMAL}\n[solver]\nmax_iter = 2\ncheck_every = 1\n")).unwrap();
    let o = bin().args(["internal", "recover", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("assertion failed: exact recovery"), "{err}");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        "experiment = \"internal\"\nseed = 2\n[grid]\nn = 21\n[noise]\ndeltas = [0.0, 1e-2]\nseeds = [1, 2]\n[sweep]\nq0 = [0.5]\n",
    )
    .unwrap();
    let mut tables = Vec::new();
    for (k, jobs) in ["1", "2"].iter().enumerate() {
        let out = dir.path().join(format!("o{k}"));
        let st = bin()
            .args(["internal", "recover", "--jobs", jobs, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert_eq!(st.code(), Some(0));
        tables.push(fs::read(out.join("table.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
}

#[test]
fn sweep_and_certify_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml_str(&format!(
        "experiment = \"internal\"\naction = \"sweep\"\n[grid]\nn = 21\n[sweep]\nq0 = [-0.3, 0.5, 1.5]\n[output]\ndir = \"{}\"\n",
        dir.path().join("s").display()
    ))
    .unwrap();
    let out = cli::run(&cfg).unwrap();
    assert_eq!(out.exit_code, 0);
    let rows = cli::read_table(&out.out_dir.join("table.csv"), &cli::internal_schema()).unwrap();
    let pass: Vec<Value> = rows.iter().map(|r| r[5].clone()).collect();
    assert_eq!(pass, vec![Value::Bool(true), Value::Bool(true), Value::Bool(false)]);

    let cfg = ExperimentConfig::from_toml_str(&format!(
        "experiment = \"certify\"\nseed = 2\n[certify]\ntarget = \"phaselift\"\n[output]\ndir = \"{}\"\n",
        dir.path().join("c").display()
    ))
    .unwrap();
    let out = cli::run(&cfg).unwrap();
    assert_eq!(out.exit_code, 0);
    let rows = cli::read_table(&out.out_dir.join("table.csv"), &cli::certify_schema()).unwrap();
    assert_eq!(rows.len(), 1);
}

#[test]
fn table_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let schema = Schema::new(&[("a", ColumnType::Real), ("b", ColumnType::Int)]);
    let path = dir.path().join("t.csv");
    cli::emit_table(&[], &schema, &path).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), "a,b\n");
    let bad = vec![vec![Value::Int(1), Value::Int(2)]];
    assert!(cli::emit_table(&bad, &schema, &path).is_err());
    let short = vec![vec![Value::Real(1.0)]];
    assert!(cli::emit_table(&short, &schema, &path).is_err());
    assert!(cli::emit_table(&[], &schema, &dir.path().join("missing/t.csv")).is_err());
}

fn cell(ty: ColumnType) -> BoxedStrategy<Value> {
    let missing = Just(Value::Missing);
    match ty {
        ColumnType::Real => prop_oneof![any::<f64>().prop_filter("finite", |x| x.is_finite()).prop_map(Value::Real), missing].boxed(),
        ColumnType::Int => prop_oneof![any::<i64>().prop_map(Value::Int), missing].boxed(),
        ColumnType::Bool => prop_oneof![any::<bool>().prop_map(Value::Bool), missing].boxed(),
        ColumnType::Text => "[a-z ,\"]{0,8}".prop_map(Value::Text).boxed(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tables_round_trip(rows in prop::collection::vec(
        (cell(ColumnType::Real), cell(ColumnType::Int), cell(ColumnType::Bool), cell(ColumnType::Text)), 0..6)) {
        let schema = Schema::new(&[("x", ColumnType::Real), ("k", ColumnType::Int), ("ok", ColumnType::Bool), ("s", ColumnType::Text)]);
        let rows: Vec<Vec<Value>> = rows.into_iter().map(|(a, b, c, d)| vec![a, b, c, d]).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        cli::emit_table(&rows, &schema, &path).unwrap();
        let back = cli::read_table(&path, &schema).unwrap();
        prop_assert_eq!(back, rows);
    }
}
