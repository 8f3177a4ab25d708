use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pubmech(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pubmech"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join("out").join(name)).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn check_scs_is_clean() {
    let dir = tempfile::tempdir().unwrap();
    let o = pubmech(dir.path(), &["check", "scs", "--n", "5", "--trials", "10000"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = read(dir.path(), "check.csv");
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    assert_eq!(lines.next().unwrap(), "mechanism,n,property,trials,tolerance,violations,max_gain");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert_eq!(r.split(',').nth(5), Some("0"), "{r}");
    }
}

#[test]
fn zero_samples_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = pubmech(dir.path(), &["evaluate", "scs", "--samples", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("samples must be positive"));
}

#[test]
fn config_errors_point_at_lines() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.toml"), "seed = 1\n[prior]\nfamily = \"beta\"\nparams = [0.5]\n").unwrap();
    let o = pubmech(dir.path(), &["evaluate", "--config", "a.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("a.toml:3:"), "{}", stderr(&o));

    fs::write(dir.path().join("b.toml"), "seed = 1\n\n[dp]\nhh = 3\n").unwrap();
    let o = pubmech(dir.path(), &["solve-dp", "--config", "b.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("b.toml:4:"), "{}", stderr(&o));

    let o = pubmech(dir.path(), &["evaluate", "--nonsense"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn violations_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    // agent 1 can skip the first offer to reach a cheaper one
    fs::write(dir.path().join("seq.csv"), "T_1,T_2,B_1,B_2\n0,0,0.9,0.1\n0,0,0.1,0.9\n").unwrap();
    fs::write(
        dir.path().join("c.toml"),
        "n = 2\ntrials = 20000\n[mechanism]\nkind = \"sequence\"\nfile = \"seq.csv\"\n",
    )
    .unwrap();
    let o = pubmech(dir.path(), &["check", "--config", "c.toml"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let witnesses = read(dir.path(), "check_violations.csv");
    assert!(witnesses.lines().any(|l| l.starts_with("sp,")));
}

#[test]
fn reruns_and_thread_counts_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["evaluate", "cec", "--n", "4", "--samples", "20000", "--seed", "9"];
    let mut outputs = Vec::new();
    for threads in ["1", "4", "4"] {
        let mut a = args.to_vec();
        a.extend(["--threads", threads]);
        assert!(pubmech(dir.path(), &a).status.success());
        outputs.push(read(dir.path(), "evaluate.csv"));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[1], outputs[2]);
    assert!(pubmech(dir.path(), &["evaluate", "cec", "--n", "4", "--samples", "20000", "--seed", "10"]).status.success());
    assert_ne!(read(dir.path(), "evaluate.csv"), outputs[0]);
}

#[test]
fn solve_dp_reports_the_policy() {
    let dir = tempfile::tempdir().unwrap();
    let o = pubmech(dir.path(), &["solve-dp", "--solver", "unanimous", "--n", "2", "--h", "100"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = read(dir.path(), "dp.csv");
    let row: Vec<&str> = csv.lines().nth(2).unwrap().split(',').collect();
    assert_eq!(row[0], "unanimous");
    let value: f64 = row[6].parse().unwrap();
    // two uniform agents, shares (1/2, 1/2): both accept with probability 1/4
    assert!(value >= 0.5 - 1e-9, "{value}");
}

#[test]
fn evolved_artifacts_feed_back_into_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(
        p.join("seq.toml"),
        "n = 3\nseed = 4\nsamples = 20000\n[ga]\ntarget = \"sequences\"\nrounds = 5\npopulation = 20\nelite = 10\nholdout_profiles = 2000\n",
    )
    .unwrap();
    assert!(pubmech(p, &["evolve", "--config", "seq.toml"]).status.success());
    fs::copy(p.join("out/evolve_best.csv"), p.join("best_seq.csv")).unwrap();
    fs::write(p.join("eval.toml"), "n = 3\nsamples = 20000\n[mechanism]\nkind = \"sequence\"\nfile = \"best_seq.csv\"\n").unwrap();
    let o = pubmech(p, &["evaluate", "--config", "eval.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(pubmech(p, &["check", "--config", "eval.toml", "--trials", "3000"]).status.success());

    fs::write(
        p.join("ama.toml"),
        "seed = 2\n[ga]\ntarget = \"curves\"\ncurve = \"piecewise-5\"\nweights = [1.0, 2.0]\nrounds = 3\nholdout_profiles = 1000\n",
    )
    .unwrap();
    let o = pubmech(p, &["evolve", "--config", "ama.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    fs::copy(p.join("out/evolve_best.csv"), p.join("ama.csv")).unwrap();
    fs::write(p.join("eval_ama.toml"), "samples = 1000\n[mechanism]\nkind = \"ama\"\nfile = \"ama.csv\"\n").unwrap();
    let o = pubmech(p, &["evaluate", "--config", "eval_ama.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(read(p, "evaluate.csv").contains("piecewise-5"));
    let o = pubmech(p, &["check", "--config", "eval_ama.toml", "--trials", "3000"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    fs::write(
        p.join("h.toml"),
        "n = 3\nseed = 1\n[ga]\ntarget = \"redistribution\"\nrounds = 2\npopulation = 10\nelite = 4\nholdout_profiles = 1000\n",
    )
    .unwrap();
    let o = pubmech(p, &["evolve", "--config", "h.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    fs::copy(p.join("out/evolve_best.csv"), p.join("h.csv")).unwrap();
    fs::write(p.join("eval_h.toml"), "n = 3\nsamples = 5000\n[mechanism]\nkind = \"redistribution\"\nfile = \"h.csv\"\n").unwrap();
    assert!(pubmech(p, &["evaluate", "--config", "eval_h.toml"]).status.success());
    let o = pubmech(p, &["check", "--config", "eval_h.toml", "--trials", "3000"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn unknown_preset_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = pubmech(dir.path(), &["table", "ch9-nothing"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ch3-twopeak"));
}
