use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn wasn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wasn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = wasn(args);
    assert!(
        out.status.success(),
        "wasn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_shows_array_and_feature_defaults() {
    let help = ok(&["dataset", "--help"]);
    for (flag, default) in [
        ("--nodes", "5"),
        ("--mics", "8"),
        ("--radius", "0.11"),
        ("--duration", "1"),
        ("--subbands", "6"),
        ("--angles", "360"),
        ("--gammatone-channels", "64"),
        ("--cell", "1"),
        ("--halfwidth", "10"),
        ("--method", "fuzzy"),
        ("--areas", "140x140"),
    ] {
        let line = help
            .lines()
            .skip_while(|l| !l.trim_start().starts_with(flag))
            .take_while(|l| !l.trim().is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        assert!(line.contains(&format!("[default: {default}]")), "{flag}: {line}");
    }
    let top = ok(&["--help"]);
    for cmd in [
        "dataset", "simulate", "features", "localize", "evaluate", "serve-collector", "emit-node",
        "export-ml", "run",
    ] {
        assert!(top.contains(cmd), "{cmd} missing from --help");
    }
}

#[test]
fn stages_chain_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for sub in ["clips", "features", "ml"] {
        fs::create_dir(d.join(sub)).unwrap();
    }
    let manifest = d.join("scenes.jsonl");
    ok(&["dataset", "--count", "3", "--seed", "9", "--class-weights", "1,1,1,0", "--out", s(d)]);
    assert_eq!(fs::read_to_string(&manifest).unwrap().lines().count(), 3);
    ok(&["simulate", "--seed", "9", "--manifest", s(&manifest), "--out", s(&d.join("clips"))]);
    assert_eq!(fs::read_dir(d.join("clips")).unwrap().count(), 3 * 5 + 1);
    ok(&[
        "features", "--manifest", s(&manifest), "--clips", s(&d.join("clips")), "--out", s(&d.join("features")),
    ]);
    let est = d.join("est.jsonl");
    ok(&["localize", "--method", "plse", "--features", s(&d.join("features")), "--out", s(&est)]);
    let first: serde_json::Value =
        serde_json::from_str(fs::read_to_string(&est).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["method"], "plse");
    let report = d.join("report.json");
    let line = ok(&["evaluate", "--estimates", s(&est), "--manifest", s(&manifest), "--out", s(&report)]);
    assert!(line.contains("mean RMSE"), "{line}");
    let r: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert!(r["rmse"].as_f64().unwrap() >= 0.0);
    let line = ok(&[
        "export-ml", "--manifest", s(&manifest), "--features", s(&d.join("features")), "--out", s(&d.join("ml")),
    ]);
    assert!(line.contains("N=5 F=6 U=360 D=19 H=64"), "{line}");
}

#[test]
fn missing_output_directory_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent");
    let out = wasn(&["dataset", "--count", "1", "--out", s(&missing)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("absent"), "{err}");
    assert!(!missing.exists());

    let bad = wasn(&["dataset", "--noise-spl", "40", "--out", s(dir.path())]);
    assert!(!bad.status.success());
    let bad = wasn(&["dataset", "--class-weights", "1,1", "--out", s(dir.path())]);
    assert!(!bad.status.success());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("cfg.toml");
    fs::write(&cfg, "seed = 5\nscenes_per_area = 4\nmax_interferers = 0\n").unwrap();
    let (a, b) = (d.join("a"), d.join("b"));
    fs::create_dir(&a).unwrap();
    fs::create_dir(&b).unwrap();
    ok(&["dataset", "--config", s(&cfg), "--count", "2", "--out", s(&a)]);
    ok(&["dataset", "--seed", "5", "--count", "2", "--max-interferers", "0", "--out", s(&b)]);
    let ma = fs::read(a.join("scenes.jsonl")).unwrap();
    assert_eq!(ma, fs::read(b.join("scenes.jsonl")).unwrap());
    assert_eq!(String::from_utf8(ma).unwrap().lines().count(), 2);

    fs::write(&cfg, "seed = 5\nno_such_key = 1\n").unwrap();
    let out = wasn(&["dataset", "--config", s(&cfg), "--out", s(&a)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
}

#[test]
fn collector_receives_every_node() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for sub in ["clips", "features", "frames"] {
        fs::create_dir(d.join(sub)).unwrap();
    }
    let manifest = d.join("scenes.jsonl");
    ok(&["dataset", "--count", "2", "--nodes", "3", "--out", s(d)]);
    ok(&["simulate", "--nodes", "3", "--manifest", s(&manifest), "--out", s(&d.join("clips"))]);
    ok(&[
        "features", "--manifest", s(&manifest), "--clips", s(&d.join("clips")), "--out", s(&d.join("features")),
    ]);

    let mut collector = Command::new(env!("CARGO_BIN_EXE_wasn"))
        .args(["serve-collector", "--port", "0", "--nodes", "3", "--max-frames", "2"])
        .args(["--out", s(&d.join("frames"))])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut banner = String::new();
    BufReader::new(collector.stderr.take().unwrap()).read_line(&mut banner).unwrap();
    let addr = banner.trim().strip_prefix("listening on ").expect("banner").to_owned();

    let emitters: Vec<_> = (0..3)
        .map(|id| {
            Command::new(env!("CARGO_BIN_EXE_wasn"))
                .args(["emit-node", "--id", &id.to_string(), "--rate", "0", "--start-time", "100"])
                .args(["--features", s(&d.join("features")), "--connect", &addr])
                .output()
                .unwrap()
        })
        .collect();
    assert!(emitters.iter().all(|o| o.status.success()));
    let out = collector.wait_with_output().unwrap();
    assert!(out.status.success());
    let summary = String::from_utf8(out.stdout).unwrap();
    assert!(summary.starts_with("2 frames (0 incomplete)"), "{summary}");
    for ts in [100, 101] {
        let frame: serde_json::Value =
            serde_json::from_slice(&fs::read(d.join("frames").join(format!("frame_{ts}.json"))).unwrap()).unwrap();
        assert_eq!(frame["complete"], true);
        assert_eq!(frame["nodes"].as_object().unwrap().len(), 3);
    }
}
