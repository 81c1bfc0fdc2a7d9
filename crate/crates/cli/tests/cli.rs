use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ustlab::rng::RngStream;
use ustlab_cli::{parse_value, run, validate, RunConfig, RunError};

fn ustlab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ustlab"))
        .args(args)
        .current_dir(dir)
        .env_remove("USTLAB_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

#[test]
fn exponents_match_the_three_dimensional_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = ustlab(&["exponents", "--beta", "1.62"], dir.path());
    assert!(o.status.success());
    let r = &stdout_json(&o)["result"];
    for (key, want) in [("d_f", 1.85), ("d_w", 2.85), ("extrinsic_walk", 4.62), ("d_s", 1.30)] {
        assert!((r[key].as_f64().unwrap() - want).abs() < 0.01, "{key}");
    }
    assert!(dir.path().join("ustlab-out/exponents.json").exists());
}

#[test]
fn growth_rows_are_written_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| ["lerw-growth", "--radii", "8,16,32", "--samples", "10", "--output-dir", out];
    assert!(ustlab(&args("a"), dir.path()).status.success());
    assert!(ustlab(&args("b"), dir.path()).status.success());
    let a = fs::read(dir.path().join("a/growth.csv")).unwrap();
    let b = fs::read(dir.path().join("b/growth.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("# config_hash=") && header.contains("seed=0") && header.contains("algorithm=chacha8"));
    assert_eq!(lines.next().unwrap(), "radius,sample_index,length,seed,stream");
    assert!(lines.count() >= 30);
}

#[test]
fn output_dir_defaults_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ustlab"))
        .args(["exponents", "--beta", "1.5"])
        .current_dir(dir.path())
        .env("USTLAB_OUTPUT_DIR", "from-env")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("from-env/exponents.json").exists());
}

#[test]
fn config_files_and_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "subcommand = \"quasi-loops\"\nseed = 4\n[params]\nscales = [16]\nepsilons = [0.5, 0.25]\nsamples = 30\nbootstrap = 20\n";
    fs::write(dir.path().join("q.toml"), cfg).unwrap();
    let o = ustlab(&["validate", "--config", "q.toml"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(stdout_json(&o)["diagnostics"].as_array().unwrap().len(), 0);
    let o = ustlab(&["quasi-loops", "--config", "q.toml", "--samples", "40"], dir.path());
    let status = o.status.code().unwrap();
    // either a fit or an honest degenerate-fit report; never a config error
    assert!(status == 0 || status == 1, "{}", String::from_utf8_lossy(&o.stderr));
    let o = ustlab(&["exponents", "--config", "q.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["diagnostics"][0]["key"], "subcommand");
}

#[test]
fn validate_reports_each_problem() {
    let mut empty = RunConfig::new("lerw-growth");
    empty.params.insert("radii".into(), toml::Value::Array(vec![]));
    let d = validate(&empty);
    assert_eq!(d.len(), 1);
    assert_eq!(d[0].key, "radii");

    let mut margin = RunConfig::new("walk-dim");
    margin.params.insert("model".into(), parse_value("{kind = \"ust\", half_extent = 20}"));
    let d = validate(&margin);
    assert_eq!(d.len(), 1);
    assert_eq!(d[0].key, "half_extent");
    assert!(d[0].message.contains("truncation margin"));

    for name in ustlab_cli::SUBCOMMANDS {
        if name == "gh-distance" || name == "path-ensemble" {
            continue; // need input files
        }
        assert!(validate(&RunConfig::new(name)).is_empty(), "{name}");
    }

    let mut many = RunConfig::new("hittability");
    many.params.insert("scale".into(), parse_value("1.0"));
    many.params.insert("paths".into(), parse_value("1"));
    assert_eq!(validate(&many).len(), 3);
}

#[test]
fn metric_subcommands_read_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let inst = r#"{"distances": [[0, 1], [1, 0]], "masses": [1, 1], "embedding": [[0,0,0],[1,0,0]], "root": 0}"#;
    let moved = r#"{"distances": [[0, 1], [1, 0]], "masses": [1, 1], "embedding": [[0,0,0],[0,1,0]], "root": 0}"#;
    fs::write(p.join("a.json"), inst).unwrap();
    fs::write(p.join("b.json"), moved).unwrap();
    let o = ustlab(&["gh-distance", "--a", "a.json", "--b", "b.json", "--radii", "[-1]"], p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = &stdout_json(&o)["result"];
    let (lo, hi) = (r["delta_c"]["lower"].as_f64().unwrap(), r["delta_c"]["upper"].as_f64().unwrap());
    assert!(lo <= hi && hi > 0.0);
    assert!(r["delta"]["certified"].as_bool().unwrap());
    let o = ustlab(&["gh-distance", "--a", "a.json", "--b", "missing.json"], p);
    assert_eq!(o.status.code(), Some(2));

    let o = ustlab(&["generate-ust", "--half-extent", "3", "--boundary", "free", "--output-dir", "t"], p);
    assert!(o.status.success());
    let csv = fs::read_to_string(p.join("t/tree.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 343);
    let obj = fs::read_to_string(p.join("t/tree.obj")).unwrap();
    assert_eq!(obj.lines().filter(|l| l.starts_with("l ")).count(), 342);
    let o = ustlab(&["path-ensemble", "--a", "t/tree.csv", "--b", "t/tree.csv", "--sample-pairs", "20"], p);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["result"]["value"].as_f64(), Some(0.0));
}

/// `validate` and `run` agree on randomly perturbed configurations.
#[test]
fn validate_and_run_agree_on_fuzzed_configs() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = RngStream::new(2024, 0);
    let mut accepted = 0;
    for i in 0..60 {
        let mut cfg = match rng.below(3) {
            0 => {
                let mut c = RunConfig::new("exponents");
                let beta = 0.8 + 1.5 * rng.uniform();
                c.params.insert("beta".into(), toml::Value::Float(beta));
                c.params.insert("dimension".into(), toml::Value::Integer(1 + rng.below(4) as i64));
                c
            }
            1 => {
                let mut c = RunConfig::new("lerw-growth");
                let n = rng.below(4) as usize;
                let mut radii: Vec<toml::Value> = (0..n).map(|_| toml::Value::Integer(rng.below(12) as i64)).collect();
                if rng.below(2) == 0 {
                    radii.sort_by_key(|v| v.as_integer());
                }
                c.params.insert("radii".into(), toml::Value::Array(radii));
                c.params.insert("samples".into(), toml::Value::Integer(rng.below(3) as i64));
                c.params.insert("safety_factor".into(), toml::Value::Float(2.0 + 8.0 * rng.uniform()));
                c
            }
            _ => {
                let mut c = RunConfig::new("hittability");
                c.params.insert("scale".into(), toml::Value::Float(1.0 + 15.0 * rng.uniform()));
                c.params.insert("rs".into(), parse_value("0.5,0.25"));
                c.params.insert("paths".into(), toml::Value::Integer(rng.below(4) as i64));
                c.params.insert("trials".into(), toml::Value::Integer(rng.below(3) as i64 * 5));
                c.params.insert("bootstrap".into(), toml::Value::Integer(10));
                c
            }
        };
        if rng.below(8) == 0 {
            cfg.params.insert("typo".into(), toml::Value::Integer(1));
        }
        cfg.output_dir = Some(dir.path().join(format!("run{i}")));
        let ok = validate(&cfg).is_empty();
        match run(&cfg) {
            Err(RunError::Config(d)) => assert!(!ok && !d.is_empty(), "{cfg:?}"),
            // degenerate fits on tiny samples are pipeline outcomes, not config errors
            Ok(_) | Err(RunError::Pipeline(_)) => {
                assert!(ok, "{cfg:?}");
                accepted += 1;
            }
            Err(RunError::Io(e)) => panic!("{e}"),
        }
    }
    assert!(accepted > 5 && accepted < 55, "{accepted}");
}
