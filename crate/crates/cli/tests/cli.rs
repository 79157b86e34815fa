use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_refinedet"));
    c.env_remove("REFINEDET_EDGE_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn refinedet")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixtures(dir: &Path) -> PathBuf {
    let o = run(&["fixtures", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 50);
    dir.to_path_buf()
}

#[test]
fn build_prints_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixtures(tmp.path());
    let o = run(&["build", fx.join("exp09.cfg").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("anchor count: 6375"), "{out}");
    assert!(out.contains("parameter count: "), "{out}");
    assert!(out.contains("backbone: ResNet-18"), "{out}");

    let wts = tmp.path().join("exp09.wts");
    let o = run(&["build", fx.join("exp09.cfg").to_str().unwrap(), "--weights-out", wts.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(std::fs::metadata(&wts).unwrap().len() > 0);
}

#[test]
fn sweep_emits_two_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixtures(tmp.path());
    let o = run(&[
        "sweep",
        fx.join("exp09.cfg").to_str().unwrap(),
        "--nms",
        "400,200,0.1;1000,500,0.01",
        "--runs",
        "2",
        "--warmup",
        "1",
        "--inputs",
        "1",
        "--format",
        "csv",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 2, "{out}");
    assert!(rows[0].contains(",400,200,0.1,"));
    assert!(rows[1].contains(",1000,500,0.01,"));
}

#[test]
fn exit_codes() {
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));

    let o = run(&["build", "/definitely/not/here.cfg"]);
    assert_eq!(o.status.code(), Some(2));

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.cfg");
    std::fs::write(&bad, "format_version = 1\nbackbone = resnet34\n").unwrap();
    let o = run(&["build", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("mobilenetv2"));

    let o = bin()
        .args(["fixtures", tmp.path().join("fx").to_str().unwrap()])
        .env("REFINEDET_EDGE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn strict_and_lenient_modes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("extra.cfg");
    std::fs::write(
        &cfg,
        "format_version = 1\nname = RefineDet320\nbackbone = mobilenetv1\nwidth_multiplier = 0.0625\ncolour = blue\n",
    )
    .unwrap();
    let o = run(&["build", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("colour"));
    let o = run(&["build", cfg.to_str().unwrap(), "--strict"]);
    assert_eq!(o.status.code(), Some(3));

    let cfg = tmp.path().join("named.cfg");
    std::fs::write(
        &cfg,
        "format_version = 1\nname = rRefineDet320\nbackbone = mobilenetv1\nhead_depth = 256\nwidth_multiplier = 0.0625\n",
    )
    .unwrap();
    assert!(run(&["build", cfg.to_str().unwrap()]).status.success());
    assert_eq!(run(&["build", cfg.to_str().unwrap(), "--strict"]).status.code(), Some(3));
}

#[test]
fn eval_perfect_detector() {
    let tmp = tempfile::tempdir().unwrap();
    let gt = tmp.path().join("gt.txt");
    let dets = tmp.path().join("dets.txt");
    std::fs::write(&gt, "1,0,10,10,20,20,0\n2,1,0,0,5,8,0\n").unwrap();
    std::fs::write(&dets, "1,0,10,10,20,20,0.9\n2,1,0,0,5,8,0.8\n").unwrap();
    let o = run(&[
        "eval",
        "--dets",
        dets.to_str().unwrap(),
        "--gt",
        gt.to_str().unwrap(),
        "--num-classes",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("mAP@[0.50:0.95]: 1.000000"));

    std::fs::write(&dets, "1,0,10,10\n").unwrap();
    let o = run(&["eval", "--dets", dets.to_str().unwrap(), "--gt", gt.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn stripped_reports_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixtures(tmp.path());
    let mut rendered = Vec::new();
    for i in 0..2 {
        let json = tmp.path().join(format!("r{i}.json"));
        let o = run(&[
            "bench",
            fx.join("exp17.cfg").to_str().unwrap(),
            "--runs",
            "3",
            "--warmup",
            "1",
            "--inputs",
            "2",
            "--seed",
            "5",
            "--format",
            "report",
            "-o",
            json.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let o = run(&["report", json.to_str().unwrap(), "--strip-timings", "--format", "report"]);
        assert!(o.status.success());
        rendered.push(o.stdout);
    }
    assert_eq!(rendered[0], rendered[1]);
    let text = String::from_utf8(rendered.pop().unwrap()).unwrap();
    assert!(text.contains("\"mean_ms\": 0.0"));
}
