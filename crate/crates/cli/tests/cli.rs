use std::path::Path;
use std::process::Command;

fn dsilt() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dsilt"))
}

fn run_simulate(out: &Path, threads: &str) -> std::process::Output {
    dsilt()
        .args(["simulate", "--design", "hmm", "--p", "10", "--s", "2", "--mu", "0.8", "--M", "2", "--n", "100"])
        .args(["--reps", "2", "--alpha", "0.1", "--method", "dsilt,oneshot", "--K", "2", "--Kp", "3", "--seed", "5"])
        .args(["--threads", threads, "--out"])
        .arg(out)
        .output()
        .unwrap()
}

#[test]
fn simulate_writes_outputs_and_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let res = run_simulate(&out, "1");
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["metrics.csv", "manifest.json", "plot.gp", "replications.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.lines().nth(1).unwrap().starts_with("hmm,10,2,0.8,2,100,dsilt,0.1,2,"));
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert!(stdout.contains("dsilt") && stdout.contains("oneshot"));

    let again = dir.path().join("run2");
    assert_eq!(run_simulate(&again, "2").status.code(), Some(0));
    assert_eq!(metrics, std::fs::read_to_string(again.join("metrics.csv")).unwrap());
}

#[test]
fn protocol_demo_with_both_transports() {
    let dir = tempfile::tempdir().unwrap();
    let mut listings = Vec::new();
    for transport in ["memory", "files"] {
        let d = dir.path().join(transport);
        let res = dsilt().args(["protocol-demo", "--transport", transport, "--dir"]).arg(&d).output().unwrap();
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        assert!(String::from_utf8_lossy(&res.stdout).contains("14 frames written"));
        let mut files = Vec::new();
        for sub in ["round1", "broadcast", "round2"] {
            let mut names: Vec<_> = std::fs::read_dir(d.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
            names.sort();
            for p in names {
                files.push((p.strip_prefix(&d).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
        listings.push(files);
    }
    assert_eq!(listings[0].len(), 14);
    assert_eq!(listings[0], listings[1]);
}

#[test]
fn bad_arguments_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let res = dsilt().args(["simulate", "--method", "meta", "--out"]).arg(dir.path()).output().unwrap();
    assert!(!res.status.success());
    let res = dsilt().args(["simulate", "--K", "3", "--p", "10", "--s", "2", "--n", "60", "--reps", "1", "--out"]).arg(dir.path()).output().unwrap();
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("K must be even"));
}
