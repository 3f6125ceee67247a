use std::path::{Path, PathBuf};
use std::process::Command;

use nellcom::training::{metric, Phase};
use nellcom_harness::aggregate::aggregate;
use nellcom_harness::cli::evaluate_run;
use nellcom_harness::run::{load_run, METRICS_FILE};

const TINY: &[&str] = &["--sl-epochs", "2", "--rl-epochs", "1"];

fn nellcom(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_nellcom"))
        .args(args)
        .env_remove("NELLCOM_OUT")
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).trim().to_string(),
        String::from_utf8_lossy(&out.stderr).to_string(),
    )
}

fn train(out: &Path, grammar: &str, seed: u64, epochs: &[&str]) -> PathBuf {
    let seed = seed.to_string();
    let out_s = out.to_str().unwrap();
    let mut args = vec![
        "train",
        "--grammar",
        grammar,
        "--seed",
        &seed,
        "--out",
        out_s,
    ];
    args.extend_from_slice(if epochs.is_empty() { TINY } else { epochs });
    let (code, stdout, stderr) = nellcom(&args);
    assert_eq!(code, 0, "{stderr}");
    PathBuf::from(stdout)
}

#[test]
fn training_twice_gives_identical_metrics_in_fresh_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let a = train(tmp.path(), "fix+op", 7, &[]);
    let b = train(tmp.path(), "fix+op", 7, &[]);
    assert_ne!(a, b);
    assert!(b.file_name().unwrap().to_str().unwrap().ends_with("-1"));
    let read = |d: &Path| std::fs::read(d.join(METRICS_FILE)).unwrap();
    assert_eq!(read(&a), read(&b));
    for f in [
        "config.json",
        "summary.json",
        "data/train.tsv",
        "data/test.tsv",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let ckpt = "checkpoints/rl/speaker/decoder.gru.w_hidden.f64";
    assert_eq!(
        std::fs::read(a.join(ckpt)).unwrap(),
        std::fs::read(b.join(ckpt)).unwrap()
    );
}

#[test]
fn evaluation_from_checkpoints_reproduces_recorded_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let run = train(tmp.path(), "flex+op", 1, &[]);
    let loaded = load_run(&run).unwrap();
    for phase in [Phase::Supervised, Phase::Communication] {
        let recorded = loaded.trajectory.last(phase).unwrap();
        let recomputed = evaluate_run(&run, phase).unwrap();
        for name in [
            metric::LISTENING_ACC,
            metric::PERMISSIVE_ACC,
            metric::RECON_ACC_TEST,
            metric::RECON_ACC_TRAIN,
            metric::PCT_MK,
            metric::EFFORT,
        ] {
            assert_eq!(
                recorded.get(name),
                recomputed.get(name).copied(),
                "{phase} {name}"
            );
        }
    }
    let (code, stdout, _) = nellcom(&["evaluate", "--run", run.to_str().unwrap(), "--phase", "sl"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(v.get(metric::SPEAKING_ACC).is_some());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let (code, _, err) = nellcom(&["train", "--grammar", "svo", "--out", out]);
    assert_eq!(code, 2, "{err}");
    assert_eq!(err.lines().count(), 1);
    let (code, _, _) = nellcom(&["train", "--config", "/nonexistent/c.json", "--out", out]);
    assert_eq!(code, 2);
    let (code, _, _) = nellcom(&["train", "--batch-size", "0", "--out", out]);
    assert_eq!(code, 2);
    let (code, _, _) = nellcom(&["analyze", out, "--out", out]);
    assert_eq!(code, 3);

    let run = train(tmp.path(), "fix+op", 0, &[]);
    std::fs::remove_dir_all(run.join("checkpoints/rl/listener")).unwrap();
    let (code, _, err) = nellcom(&["evaluate", "--run", run.to_str().unwrap()]);
    assert_eq!(code, 4, "{err}");
    let (code, _, _) = nellcom(&["evaluate", "--run", run.to_str().unwrap(), "--phase", "sl"]);
    assert_eq!(code, 0);
    std::fs::write(
        run.join("checkpoints/sl/speaker/decoder.output.bias.f64"),
        [0u8; 3],
    )
    .unwrap();
    let (code, _, _) = nellcom(&["evaluate", "--run", run.to_str().unwrap(), "--phase", "sl"]);
    assert_eq!(code, 4);
}

#[test]
fn gen_data_writes_the_split() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let (code, dir, _) = nellcom(&[
        "gen-data",
        "--grammar",
        "flex+op",
        "--seed",
        "3",
        "--out",
        out,
    ]);
    assert_eq!(code, 0);
    let lines = |f: &str| {
        std::fs::read_to_string(Path::new(&dir).join(f))
            .unwrap()
            .lines()
            .count()
    };
    assert_eq!(lines("data/train.tsv"), 480);
    assert_eq!(lines("data/test.tsv"), 240);
}

#[test]
fn sweep_emits_runs_report_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let mut args = vec![
        "sweep",
        "--grammars",
        "fix+op,flex+op",
        "--seeds",
        "2",
        "--jobs",
        "2",
        "--out",
        out,
    ];
    args.extend_from_slice(TINY);
    let (code, dir, err) = nellcom(&args);
    assert_eq!(code, 0, "{err}");
    let dir = PathBuf::from(dir);
    assert_eq!(std::fs::read_dir(dir.join("runs")).unwrap().count(), 4);
    for g in ["fix+op", "flex+op"] {
        for f in [
            "aggregate.csv",
            "aggregate.json",
            "points.csv",
            "timeline.svg",
            "distribution.svg",
        ] {
            assert!(dir.join("report").join(g).join(f).is_file(), "{g}/{f}");
        }
    }
    let svg = std::fs::read_to_string(dir.join("report/tradeoff.svg")).unwrap();
    assert_eq!(svg.matches("<polygon").count(), 2);
    assert!(svg.contains("<!-- data"));

    // plotting again from the aggregates
    let target = tmp.path().join("again.svg");
    let (code, _, _) = nellcom(&[
        "plot",
        "--kind",
        "tradeoff",
        "--input",
        dir.join("report/fix+op").to_str().unwrap(),
        dir.join("report/flex+op").to_str().unwrap(),
        "--out",
        target.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert_eq!(std::fs::read_to_string(&target).unwrap(), svg);
    let (code, _, _) = nellcom(&[
        "plot",
        "--kind",
        "timeline",
        "--input",
        dir.join("report/fix+op").to_str().unwrap(),
        "--out",
        target.to_str().unwrap(),
    ]);
    assert_eq!(code, 3, "existing files are not overwritten");

    let (code, analysis, _) =
        nellcom(&["analyze", dir.join("runs").to_str().unwrap(), "--out", out]);
    assert_eq!(code, 0);
    assert_eq!(
        std::fs::read(Path::new(&analysis).join("flex+op/aggregate.csv")).unwrap(),
        std::fs::read(dir.join("report/flex+op/aggregate.csv")).unwrap()
    );
}

#[test]
fn aggregation_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let a = load_run(&train(tmp.path(), "fix+op", 0, &[])).unwrap();
    let b = load_run(&train(tmp.path(), "fix+op", 1, &[])).unwrap();
    let flex = load_run(&train(tmp.path(), "flex+op", 0, &[])).unwrap();
    let short = load_run(&train(
        tmp.path(),
        "fix+op",
        2,
        &["--sl-epochs", "2", "--rl-epochs", "0"],
    ))
    .unwrap();

    // a single run is its own mean
    let single = aggregate(std::slice::from_ref(&a)).unwrap();
    for r in &a.trajectory.records {
        for (k, v) in &r.metrics {
            let s = single.stat(r.phase, r.epoch, k).unwrap();
            if v.is_finite() {
                assert_eq!(s.mean, *v);
                assert_eq!(s.std, 0.0);
            } else {
                assert_eq!(s.n, 0);
            }
        }
    }

    // identical test-set sizes: mean of proportions equals pooled proportion
    let both = aggregate(&[a.clone(), b.clone()]).unwrap();
    let ra = a.trajectory.last(Phase::Communication).unwrap();
    let rb = b.trajectory.last(Phase::Communication).unwrap();
    let (ca, cb) = (ra.counts.unwrap(), rb.counts.unwrap());
    let pooled_mk =
        (ca.0[1] + ca.0[3] + cb.0[1] + cb.0[3]) as f64 / (ca.total() + cb.total()) as f64;
    let mean_mk = both
        .stat(Phase::Communication, ra.epoch, metric::PCT_MK)
        .unwrap()
        .mean;
    assert!((pooled_mk - mean_mk).abs() < 1e-12);

    assert!(aggregate(&[a.clone(), flex]).is_err(), "mixed grammars");
    let err = aggregate(&[a, short]).unwrap_err();
    assert_eq!(err.exit_code(), 3, "missing epochs");
    assert!(aggregate(&[]).is_err());
}
