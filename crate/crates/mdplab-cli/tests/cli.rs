use std::fs;
use std::process::{Command, Output};

fn mdplab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdplab")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const CONFIG: &str = r#"
experiment = "cli-coin"
family = "inf-branch"
episodes = 500
horizon = 4
master_seed = 1

[strategy]
kind = "fixed-branch"
i = 2

[event]
kind = "avoid-within"
label = "t"
"#;

#[test]
fn list_names_everything() {
    let o = mdplab(&["list"]);
    assert!(o.status.success());
    let out = stdout(&o);
    for word in ["families:", "chain", "scenarios:", "thm7-decay", "puterman", "ladder"] {
        assert!(out.contains(word), "{word} missing in {out}");
    }
}

#[test]
fn transform_check_passes() {
    let o = mdplab(&["transform", "--check", "R", "--episodes", "200", "--horizon", "80"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("PASS"));
    assert_eq!(mdplab(&["transform", "--check", "Q"]).status.code(), Some(2));
}

#[test]
fn simulate_writes_jsonl_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("rows.jsonl");
    let o = mdplab(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let row: serde_json::Value = serde_json::from_str(fs::read_to_string(&out).unwrap().trim()).unwrap();
    assert_eq!(row["experiment"], "cli-coin");
    assert_eq!(row["episodes"], 500);
    let csv = fs::read_to_string(dir.path().join("rows.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);

    // same seed, same numbers on stdout
    let again = mdplab(&["simulate", "--config", cfg.to_str().unwrap()]);
    let row2: serde_json::Value = serde_json::from_str(stdout(&again).trim()).unwrap();
    assert_eq!(row["successes"], row2["successes"]);
}

#[test]
fn malformed_configs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, format!("{CONFIG}\ncolour = \"red\"\n")).unwrap();
    let o = mdplab(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
    let missing = mdplab(&["simulate", "--config", dir.path().join("none.toml").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(mdplab(&["scenarios", "nope"]).status.code(), Some(2));
}

#[test]
fn value_iter_on_a_text_mdp() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("m.txt");
    fs::write(&input, "c C a:1:0 b:1:0\na R WIN:1/3:0 LOSE:2/3:0\nb R WIN:3/4:0 LOSE:1/4:0\n").unwrap();
    let md = dir.path().join("md.csv");
    let o = mdplab(&["value-iter", "--input", input.to_str().unwrap(), "--objective", "reach", "--md-out", md.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["value"], "3/4");
    assert!(fs::read_to_string(&md).unwrap().contains("c,b"));

    fs::write(&input, "a R WIN:1/3:0\n").unwrap();
    assert_eq!(mdplab(&["value-iter", "--input", input.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn value_iter_pipeline_on_the_ladder() {
    let o = mdplab(&["value-iter", "--family", "ladder-small", "--objective", "pipeline", "--eps", "1/10"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["certified"], true);
}

#[test]
fn series_prints_json() {
    let o = mdplab(&["series", "--schedule", "halving", "--gadgets", "30"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["fr"]["k"], 2);
    assert!(v["n_epsilon"].as_array().unwrap().len() == 3);
}
