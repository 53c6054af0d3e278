//! Drives the `qvsum` binary through a full generate → train → eval →
//! summarize → ablate cycle on a small synthetic corpus.

use std::path::Path;
use std::process::{Command, Output};

fn qvsum(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qvsum"))
        .args(args)
        .current_dir(cwd)
        .env_remove("QVSUM_DATA_ROOT")
        .output()
        .expect("run qvsum")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = qvsum(args, cwd);
    assert!(
        out.status.success(),
        "qvsum {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn end_to_end_on_synthetic_data() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        &[
            "gen-synthetic",
            "--n",
            "10",
            "--rule",
            "query-match",
            "--out",
            "data/manifest.json",
        ],
        dir,
    );
    assert!(ok(
        &[
            "validate",
            "--manifest",
            "data/manifest.json",
            "--check-frames"
        ],
        dir
    )
    .starts_with("ok: 10 pairs"));

    ok(
        &[
            "cache-features",
            "--manifest",
            "data/manifest.json",
            "--out",
            "feats",
        ],
        dir,
    );
    assert!(dir.join("feats/features.json").exists());
    let log = ok(
        &[
            "train",
            "--manifest",
            "data/manifest.json",
            "--preset",
            "synthetic-ablation",
            "--epochs",
            "2",
            "--features",
            "feats",
            "--out",
            "ck",
        ],
        dir,
    );
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch")).count(), 2);
    for f in [
        "config.json",
        "dictionary.json",
        "meta.json",
        "weights.qvw",
        "weights_best.qvw",
    ] {
        assert!(dir.join("ck").join(f).exists(), "{f} missing");
    }

    // Frames and cached features must give the same accuracy.
    let from_frames = ok(&["eval", "--ckpt", "ck", "--split", "val"], dir);
    let from_cache = ok(
        &[
            "eval",
            "--ckpt",
            "ck",
            "--split",
            "val",
            "--features",
            "feats",
        ],
        dir,
    );
    assert!(from_frames.starts_with("val accuracy"));
    assert_eq!(from_frames, from_cache);

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("data/manifest.json")).unwrap()).unwrap();
    let video = manifest["pairs"][0]["video_id"].as_str().unwrap();
    ok(
        &[
            "summarize",
            "--ckpt",
            "ck",
            "--video",
            video,
            "--query",
            "beach",
            "--k",
            "3",
            "--out",
            "sum",
        ],
        dir,
    );
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("sum/summary.json")).unwrap()).unwrap();
    let indices = summary["indices"].as_array().unwrap();
    assert!(indices.len() <= 3);
    assert_eq!(summary["scores"].as_array().unwrap().len(), 199);
    for i in indices {
        assert!(dir
            .join(format!("sum/frame_{:03}.png", i.as_u64().unwrap()))
            .exists());
    }
    assert!(dir.join("sum/strip.png").exists() && dir.join("sum/strip.json").exists());

    ok(
        &[
            "ablate",
            "--manifest",
            "data/manifest.json",
            "--suite",
            "query",
            "--seeds",
            "0",
            "--preset",
            "synthetic-ablation",
            "--epochs",
            "1",
            "--out",
            "report",
        ],
        dir,
    );
    let csv = std::fs::read_to_string(dir.join("report/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    let strips = std::fs::read_dir(dir.join("report/strips"))
        .unwrap()
        .count();
    assert_eq!(strips, 4, "one png + json per configuration");
}

#[test]
fn mismatched_feature_cache_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        &["gen-synthetic", "--n", "6", "--out", "data/manifest.json"],
        dir,
    );
    ok(
        &[
            "cache-features",
            "--manifest",
            "data/manifest.json",
            "--seed",
            "1",
            "--out",
            "feats",
        ],
        dir,
    );
    let out = qvsum(
        &[
            "train",
            "--manifest",
            "data/manifest.json",
            "--preset",
            "desk",
            "--seed",
            "2",
            "--epochs",
            "1",
            "--features",
            "feats",
            "--out",
            "ck",
        ],
        dir,
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("feature cache was made by"));
}

#[test]
fn invalid_manifest_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        &["gen-synthetic", "--n", "5", "--out", "data/manifest.json"],
        dir,
    );
    // Frames are checked against disk; removing one video's frames breaks it.
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("data/manifest.json")).unwrap()).unwrap();
    let frame_dir = manifest["pairs"][0]["frame_dir"].as_str().unwrap();
    std::fs::remove_dir_all(dir.join("data").join(frame_dir)).unwrap();
    let out = qvsum(
        &[
            "validate",
            "--manifest",
            "data/manifest.json",
            "--check-frames",
        ],
        dir,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("violation"));
}

#[test]
fn serve_answers_http() {
    use std::io::{BufRead, BufReader, Read, Write};

    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        &["gen-synthetic", "--n", "6", "--out", "data/manifest.json"],
        dir,
    );
    ok(
        &[
            "train",
            "--manifest",
            "data/manifest.json",
            "--preset",
            "desk",
            "--epochs",
            "1",
            "--out",
            "ck",
        ],
        dir,
    );
    let mut child = Command::new(env!("CARGO_BIN_EXE_qvsum"))
        .args([
            "serve",
            "--ckpt",
            "ck",
            "--manifest",
            "data/manifest.json",
            "--port",
            "0",
        ])
        .current_dir(dir)
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on http://")
        .expect(&line)
        .to_string();

    let mut stream = std::net::TcpStream::connect(&addr).unwrap();
    write!(
        stream,
        "GET /videos HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n"
    )
    .unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert_eq!(resp.matches("\"video_id\"").count(), 6, "{resp}");
}
