use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_smartpilot");

const SMALL: &str = r#"
seed = 3
[assembly]
n_windows = 60
window_len = 9
[forecast]
periods = 120
[predictx]
image_folds = 2
[predictx.pretrain]
epochs = 2
[predictx.image_pretrain]
epochs = 1
[predictx.fusion]
epochs = 3
[foresight]
lstm_units = [8, 4]
dense_units = 4
[foresight.train]
epochs = 1
"#;

const FLAGS: [&str; 11] = [
    "--seed", "--out", "--data", "--ontology", "--agent", "--variant", "--rate", "--port", "--config", "--facility",
    "--log-level",
];

fn smartpilot(args: &[&str], dir: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("SMARTPILOT_CONFIG")
        .output()
        .unwrap()
}

fn ok(args: &[&str], dir: &Path) -> String {
    let o = smartpilot(args, dir);
    assert_eq!(o.status.code(), Some(0), "{args:?}\n{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn code(args: &[&str], dir: &Path) -> (i32, String) {
    let o = smartpilot(args, dir);
    (o.status.code().unwrap(), String::from_utf8_lossy(&o.stderr).into_owned())
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn generated() -> tempfile::TempDir {
    let ws = workspace();
    ok(&["gen", "--config", "small.toml", "--data", "d"], ws.path());
    ws
}

#[test]
fn gen_twice_gives_byte_identical_trees() {
    let ws = workspace();
    ok(&["gen", "--config", "small.toml", "--out", "a"], ws.path());
    ok(&["gen", "--config", "small.toml", "--out", "b"], ws.path());
    let (a, b) = (tree(&ws.path().join("a")), tree(&ws.path().join("b")));
    assert!(a.len() >= 10, "{:?}", a.keys().collect::<Vec<_>>());
    assert_eq!(a, b);
    for f in ["ontology.json", "replay.tsv", "forecast.tsv", "metadata.json", "manifest.json", "corpus/gold.json"] {
        assert!(a.contains_key(Path::new(f)), "{f}");
    }
    let manifest: Value = serde_json::from_slice(&a[Path::new("manifest.json")]).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["files"].as_object().unwrap().len(), a.len() - 1);

    ok(&["gen", "--config", "small.toml", "--seed", "4", "--out", "c"], ws.path());
    let c = tree(&ws.path().join("c"));
    assert_ne!(a[Path::new("replay.tsv")], c[Path::new("replay.tsv")]);
}

#[test]
fn help_documents_every_flag_and_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let top = ok(&["--help"], dir.path());
    for sub in ["gen", "train", "ablate", "eval", "serve", "replay", "ask"] {
        assert!(top.contains(sub), "{sub} missing from help");
        let help = ok(&[sub, "--help"], dir.path());
        for flag in FLAGS {
            let line = help.lines().find(|l| l.trim_start().starts_with(flag)).unwrap_or_else(|| panic!("{sub}: {flag}"));
            // Flag, value name, then a description.
            assert!(line.split_whitespace().count() >= 3, "{sub}: undocumented {flag}: {line}");
        }
        let listed: Vec<&str> = help
            .lines()
            .map(str::trim_start)
            .filter(|l| l.starts_with('-') && !l.contains("--help") && !l.contains("--version"))
            .collect();
        assert_eq!(listed.len(), FLAGS.len(), "{sub}: only the known flags\n{help}");
    }
    assert!(top.contains("SMARTPILOT_CONFIG"));
}

#[test]
fn exit_codes_follow_the_contract() {
    let ws = workspace();
    let dir = ws.path();
    assert_eq!(code(&["--help"], dir).0, 0);
    assert_eq!(code(&["--version"], dir).0, 0);
    assert_eq!(code(&["gen", "--bogus"], dir).0, 1);
    assert_eq!(code(&["fly"], dir).0, 1);
    assert_eq!(code(&["train", "--agent", "nope"], dir).0, 1);
    assert_eq!(code(&["train"], dir).0, 1);
    assert_eq!(code(&["gen", "--config", "missing.toml"], dir).0, 1);
    fs::write(dir.join("bad.toml"), "[predictx]\nlatnt_dim = 3\n").unwrap();
    let (c, err) = code(&["gen", "--config", "bad.toml"], dir);
    assert_eq!(c, 1);
    assert!(err.contains("latnt_dim"), "{err}");
    assert_eq!(code(&["replay", "--rate", "-1"], dir).0, 1);
    assert_eq!(code(&["ask", "  "], dir).0, 1);

    let (c, err) = code(&["eval", "--agent", "predictx", "--data", "nothing-here"], dir);
    assert_eq!(c, 2);
    let e: Value = serde_json::from_str(err.lines().last().unwrap()).unwrap();
    assert_eq!(e["error"], "runtime");
    assert!(e["message"].as_str().unwrap().contains("predictx-P3.json"));
}

#[test]
fn env_config_is_the_default_and_flags_override_it() {
    let ws = workspace();
    let run = |args: &[&str]| {
        let o = Command::new(BIN)
            .args(args)
            .current_dir(ws.path())
            .env("SMARTPILOT_CONFIG", "small.toml")
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stderr).unwrap()
    };
    let log = run(&["gen", "--out", "e"]);
    assert!(log.contains("seed=3 config_hash="), "{log}");
    let log = run(&["gen", "--out", "f", "--seed", "9"]);
    assert!(log.contains("seed=9 config_hash="), "{log}");
    let manifest: Value = serde_json::from_slice(&fs::read(ws.path().join("f/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    let hash = log.split("config_hash=").nth(1).unwrap().split_whitespace().next().unwrap();
    assert_eq!(manifest["config_hash"], hash);
}

#[test]
fn train_eval_and_replay_are_reproducible() {
    let ws = generated();
    let dir = ws.path();
    let base = ["--config", "small.toml", "--data", "d"];
    let with = |extra: &[&'static str]| -> Vec<&str> { extra.iter().copied().chain(base).collect() };
    let out = ok(&with(&["train", "--agent", "predictx"]), dir);
    assert!(out.contains("P3: test accuracy"), "{out}");
    let out = ok(&with(&["train", "--agent", "foresight"]), dir);
    assert_eq!(out.lines().count(), 6, "{out}");
    let table = ok(&with(&["eval", "--agent", "foresight"]), dir);
    assert_eq!(table.lines().count(), 4);
    assert!(table.starts_with("product\tmae_lstm"));
    let m: Value = serde_json::from_str(&ok(&with(&["eval", "--agent", "predictx"]), dir)).unwrap();
    assert_eq!(m["metrics"]["support"], 12);

    let stats: Value = serde_json::from_str(&ok(&with(&["replay"]), dir)).unwrap();
    assert_eq!(stats["frames"], 60 * 10);
    assert_eq!(stats["predictions"], 60);
    assert_eq!(stats["dropped"], 0);
    let log = dir.join("d/reports/predictions.jsonl");
    let first = fs::read(&log).unwrap();
    assert_eq!(first.iter().filter(|b| **b == b'\n').count(), 60);
    ok(&with(&["replay"]), dir);
    assert_eq!(fs::read(&log).unwrap(), first, "replay log is byte-identical");

    let ig: Value = serde_json::from_str(&ok(&with(&["eval", "--agent", "infoguide"]), dir)).unwrap();
    assert!(ig["hit_rate"].as_f64().unwrap() >= 0.85);
    assert!(ig["refusal_rate"].as_f64().unwrap() >= 0.9);
}

/// Default-size data, so the report shows what the variants really do.
#[test]
fn ablate_reports_every_variant_and_p3_beats_p1() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen", "--data", "d", "--log-level", "warn"], dir.path());
    let table = ok(&["ablate", "--data", "d", "--seed", "7"], dir.path());
    let accuracy = |v: &str| -> f64 {
        let line = table.lines().find(|l| l.starts_with(&format!("{v}\t"))).unwrap_or_else(|| panic!("{v}\n{table}"));
        line.split('\t').nth(4).unwrap().parse().unwrap()
    };
    for v in ["B1", "B2 [detection]", "P1", "P2", "P3"] {
        assert!(accuracy(v) > 0.0);
    }
    assert!(accuracy("P3") > accuracy("P1"), "{table}");
    let report: Value = serde_json::from_slice(&fs::read(dir.path().join("d/reports/ablation.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 7);
    assert_eq!(report["test_size"], 400);
    assert!(dir.path().join("d/reports/ablation.tsv").is_file());
}

#[test]
fn local_ask_answers_and_refuses() {
    let ws = generated();
    let gold: Value = serde_json::from_slice(&fs::read(ws.path().join("d/corpus/gold.json")).unwrap()).unwrap();
    let q = gold["gold"][0]["question"].as_str().unwrap();
    let out = ok(&["ask", q, "--data", "d"], ws.path());
    assert!(out.contains("sources:"), "{out}");
    let out = ok(&["ask", "zq xv qqq", "--data", "d"], ws.path());
    assert!(out.starts_with("No answer"), "{out}");
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn ask_against_a_served_index_prints_the_refusal() {
    let ws = generated();
    let dir = ws.path();
    ok(&["train", "--agent", "predictx", "--config", "small.toml", "--data", "d"], dir);
    let port = free_port().to_string();
    let mut child = Command::new(BIN)
        .args(["serve", "--config", "small.toml", "--data", "d", "--rate", "inf", "--port", &port])
        .current_dir(dir)
        .env_remove("SMARTPILOT_CONFIG")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let stderr = child.stderr.take().unwrap();
    let server = Server(child);
    let mut lines = BufReader::new(stderr).lines();
    let deadline = Instant::now() + Duration::from_secs(60);
    loop {
        let line = lines.next().expect("server exited early").unwrap();
        if line.contains("listening on") {
            break;
        }
        assert!(Instant::now() < deadline);
    }
    std::thread::spawn(move || lines.for_each(drop));

    let out = ok(&["ask", "zq xv qqq", "--port", &port], dir);
    assert!(out.starts_with("No answer"), "{out}");
    let gold: Value = serde_json::from_slice(&fs::read(dir.join("d/corpus/gold.json")).unwrap()).unwrap();
    let out = ok(&["ask", gold["gold"][1]["question"].as_str().unwrap(), "--port", &port], dir);
    assert!(out.contains("sources:"), "{out}");

    let health: Value = reqwest::blocking::get(format!("http://127.0.0.1:{port}/api/health")).unwrap().json().unwrap();
    assert_eq!(health["status"], "ok");
    // The replay reaches the hub.
    let deadline = Instant::now() + Duration::from_secs(30);
    loop {
        let recent: Value = reqwest::blocking::get(format!("http://127.0.0.1:{port}/api/anomalies/recent?n=100"))
            .unwrap()
            .json()
            .unwrap();
        if recent.as_array().unwrap().len() == 60 {
            break;
        }
        assert!(Instant::now() < deadline, "{recent}");
        std::thread::sleep(Duration::from_millis(50));
    }

    let (c, err) = code(&["serve", "--config", "small.toml", "--data", "d", "--port", &port], dir);
    assert_eq!(c, 2, "busy port: {err}");
    drop(server);
    let (c, _) = code(&["ask", "zq xv qqq", "--port", &port], dir);
    assert_eq!(c, 2, "no server");
}
