use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn vptc(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vptc"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

const FREE: &str = r#"
name = "free"
duration = 0.3

[field]
x_star = [0.5, 0.3]

[initial]
q = [0.3, 0.6, 0.4]

[constraints]
sca = false
eca = false
"#;

const OVERLAP: &str = r#"
name = "overlap"
duration = 0.2

[field]
x_star = [0.5, 0.3]

[initial]
q = [0.3, 0.6, 0.4]

[constraints]
sca = false
eca = true

[models]
sdf_dir = "sdf"

[[obstacles]]
id = 0
center = [0.2, 0.05]
radius = 0.05
"#;

#[test]
fn run_writes_log_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("free.toml");
    std::fs::write(&scenario, FREE).unwrap();
    let out = dir.path().join("out");
    let o = vptc(&out, &["run", scenario.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    assert!(out.join("free.log").exists());
    let csv = std::fs::read_to_string(out.join("free_metrics.csv")).unwrap();
    assert!(csv.starts_with("scenario,steps,"));
    assert!(csv.lines().nth(1).unwrap().starts_with("free,60,"));

    let m = vptc(&out, &["metrics", out.join("free.log").to_str().unwrap()]);
    assert_eq!(m.status.code(), Some(0));
    let stdout = text(&m.stdout);
    let logged: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let recomputed: Vec<&str> = stdout.lines().nth(1).unwrap().split(',').collect();
    // loop rate comes from wall-clock times and is stored in the log too
    assert_eq!(logged, recomputed);
}

#[test]
fn violations_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let fit = vptc(
        dir.path(),
        &["fit-sdf", "--degree", "4", "--samples", "500"],
    );
    assert_eq!(fit.status.code(), Some(0), "{}", text(&fit.stderr));
    assert!(dir.path().join("sdf").is_dir());

    let scenarios = dir.path().join("scenarios");
    std::fs::create_dir(&scenarios).unwrap();
    std::fs::write(scenarios.join("overlap.toml"), OVERLAP).unwrap();
    std::fs::write(scenarios.join("free.toml"), FREE).unwrap();
    std::fs::rename(dir.path().join("sdf"), scenarios.join("sdf")).unwrap();
    let overlap = scenarios.join("overlap.toml");
    let overlap = overlap.to_str().unwrap();
    let out = dir.path().join("out");

    let o = vptc(&out, &["run", overlap]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("obstacle clearance"));
    let o = vptc(&out, &["run", overlap, "--toggle", "eca=off"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));

    let b = vptc(&out, &["batch", scenarios.to_str().unwrap()]);
    assert_eq!(b.status.code(), Some(2));
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(text(&b.stdout).contains("2 scenarios, 1 with violations"));
}

#[test]
fn dataset_and_training_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let g = vptc(dir.path(), &["--seed", "3", "gen-data", "--count", "300"]);
    assert_eq!(g.status.code(), Some(0), "{}", text(&g.stderr));
    let data = std::fs::read_to_string(dir.path().join("sca_dataset.csv")).unwrap();
    assert_eq!(data.lines().count(), 301);
    assert!(data.starts_with("q_0,q_1,q_2,qd_0,qd_1,qd_2,label,first_contact_t"));

    let t = vptc(dir.path(), &["train-sca", "--epochs", "1"]);
    assert_eq!(t.status.code(), Some(0), "{}", text(&t.stderr));
    let model = vptc::sca::ScaModel::load(&dir.path().join("sca.bin")).unwrap();
    assert_eq!(model.dof(), 3);
}

#[test]
fn usage_errors_are_not_violations() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["run", "missing.toml"][..],
        &["run", "x.toml", "--toggle", "jnt=off"],
        &["frobnicate"],
    ] {
        let o = vptc(dir.path(), args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
    }
    let h = vptc(dir.path(), &["--help"]);
    assert_eq!(h.status.code(), Some(0));
    let help = text(&h.stdout);
    for sub in [
        "gen-data",
        "train-sca",
        "fit-sdf",
        "run",
        "batch",
        "metrics",
        "teleop",
    ] {
        assert!(help.contains(sub), "help lists {sub}");
    }
}

#[test]
fn teleop_listens_until_killed() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("free.toml");
    std::fs::write(&scenario, FREE).unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_vptc"))
        .args([
            "teleop",
            scenario.to_str().unwrap(),
            "--port",
            &port.to_string(),
            "--snapshot-hz",
            "20",
        ])
        .env("RUST_LOG", "info")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let started = Instant::now();
    let mut listening = false;
    while started.elapsed() < Duration::from_secs(10) {
        match lines.next() {
            Some(Ok(line)) if line.contains(&format!("ws://127.0.0.1:{port}")) => {
                listening = true;
                break;
            }
            Some(Ok(_)) => {}
            _ => break,
        }
    }
    let connected = listening && std::net::TcpStream::connect(("127.0.0.1", port)).is_ok();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(listening && connected);
}
