use std::path::Path;
use std::process::{Command, Output};

use comodo::cli::{EvalRecord, RunManifest};
use comodo::config::RunConfig;
use comodo::trainer::StepMetrics;

fn comodo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_comodo"))
        .args(args)
        .output()
        .expect("spawn comodo")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = "num_classes = 3\ntrain_per_class = 8\ntest_per_class = 4\nchannels = 2\nwindow_len = 16\n\
embed_dim = 8\nenc_hidden = 6\nchannel_dim = 4\nproj_hidden = 6\nbatch_size = 4\nqueue_capacity = 8\nepochs = 2\n";

fn write_cfg(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn generate_data_default_layout_and_rerun_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&comodo(&["generate-data", "--out", s(&a)])), 0);
    assert_eq!(code(&comodo(&["generate-data", "--out", s(&b)])), 0);
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("dataset.json")).unwrap()).unwrap();
    assert_eq!(meta["train_count"], 200);
    assert_eq!(meta["test_count"], 100);
    assert_eq!(meta["num_classes"], 5);
    for f in [
        "dataset.json",
        "generation.json",
        "resolved.cfg",
        "train.cmeb",
        "train.cmwd",
        "train.manifest.jsonl",
        "test.cmeb",
        "test.cmwd",
        "test.manifest.jsonl",
    ] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = tmp.path().join("c");
    assert_eq!(code(&comodo(&["generate-data", "--out", s(&c), "--seed", "9"])), 0);
    assert_ne!(std::fs::read(a.join("train.cmeb")).unwrap(), std::fs::read(c.join("train.cmeb")).unwrap());
}

#[test]
fn single_class_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "one.cfg", "num_classes = 1\n");
    let out = comodo(&["generate-data", "--config", &cfg, "--out", s(&tmp.path().join("d"))]);
    assert_eq!(code(&out), 2);
    assert!(!tmp.path().join("d").exists());
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("r");
    let typo = write_cfg(tmp.path(), "typo.cfg", "lerning_rate = 0.1\n");
    assert_eq!(code(&comodo(&["train", "--config", &typo, "--out", s(&out_dir)])), 2);
    let mismatch = write_cfg(tmp.path(), "k.cfg", "batch_size = 32\nqueue_capacity = 100\n");
    let out = comodo(&["train", "--config", &mismatch, "--out", s(&out_dir)]);
    assert_eq!(code(&out), 2);
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("100") && msg.contains("32"), "{msg}");
    assert!(!out_dir.exists());
}

#[test]
fn train_writes_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "t.cfg", TINY);
    let run = tmp.path().join("run");
    assert_eq!(code(&comodo(&["train", "--config", &cfg, "--out", s(&run)])), 0);

    let metrics = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    let records: Vec<StepMetrics> = metrics.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    // 24 train samples / batch 4 = 6 steps per epoch.
    assert_eq!(records.len(), 12);
    assert_eq!(records.last().unwrap().step, 12);
    for f in ["checkpoints/epoch-001.cmdo", "checkpoints/epoch-002.cmdo", "final.cmdo", "state.cmts"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    assert_eq!(
        std::fs::read(run.join("checkpoints/epoch-002.cmdo")).unwrap(),
        std::fs::read(run.join("final.cmdo")).unwrap()
    );

    let manifest: RunManifest = serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest.elapsed_ms.is_some());
    assert_eq!(manifest.checkpoints.len(), 2);
    // The manifest's config snapshot alone reproduces the run.
    let replay_cfg = write_cfg(tmp.path(), "replay.cfg", &manifest.config);
    assert_eq!(RunConfig::parse(&manifest.config).unwrap(), RunConfig::parse(TINY).unwrap());
    let replay = tmp.path().join("replay");
    assert_eq!(code(&comodo(&["train", "--config", &replay_cfg, "--out", s(&replay)])), 0);
    assert_eq!(metrics, std::fs::read_to_string(replay.join("metrics.jsonl")).unwrap());
    assert_eq!(std::fs::read(run.join("final.cmdo")).unwrap(), std::fs::read(replay.join("final.cmdo")).unwrap());
}

#[test]
fn default_train_record_count() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    assert_eq!(code(&comodo(&["train", "--out", s(&run)])), 0);
    let n = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap().lines().count();
    assert_eq!(n, 20 * (200 / 32));
}

#[test]
fn seed_flag_and_evict_flag_change_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "t.cfg", TINY);
    let read = |d: &str| std::fs::read_to_string(tmp.path().join(d).join("metrics.jsonl")).unwrap();
    for (dir, extra) in [("base", vec![]), ("seeded", vec!["--seed", "5"]), ("evict", vec!["--evict-after-loss"])] {
        let out = tmp.path().join(dir);
        let mut args = vec!["train", "--config", &cfg, "--out", s(&out)];
        args.extend(extra);
        assert_eq!(code(&comodo(&args)), 0, "{dir}");
    }
    assert_ne!(read("base"), read("seeded"));
    let deferred: Vec<StepMetrics> = read("evict").lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(deferred.last().unwrap().queue_size, 12);
}

#[test]
fn non_finite_training_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "t.cfg", &format!("{TINY}learning_rate = 1e308\n"));
    let out = comodo(&["train", "--config", &cfg, "--out", s(&tmp.path().join("r"))]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn eval_reports_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "t.cfg", &format!("{TINY}epochs = 0\n").replace("epochs = 2\n", ""));
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    assert_eq!(code(&comodo(&["generate-data", "--config", &cfg, "--out", s(&data)])), 0);
    assert_eq!(code(&comodo(&["train", "--config", &cfg, "--data", s(&data), "--out", s(&run)])), 0);
    let ckpt = run.join("final.cmdo");

    for probe in ["centroid", "knn", "kernel-ridge"] {
        let ev = tmp.path().join(format!("eval-{probe}"));
        let out = comodo(&[
            "eval", "--config", &cfg, "--checkpoint", s(&ckpt), "--data", s(&data), "--probe", probe, "--out", s(&ev),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let recs: Vec<EvalRecord> = std::fs::read_to_string(ev.join("eval.jsonl"))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(recs.iter().map(|r| r.k).collect::<Vec<_>>(), [1, 3, 5]);
        assert!(recs.iter().all(|r| r.n_test == 12 && r.checkpoint.len() == 16));
        assert!(recs.windows(2).all(|w| w[0].accuracy <= w[1].accuracy));
    }

    let missing = comodo(&[
        "eval", "--config", &cfg, "--checkpoint", s(&tmp.path().join("nope.cmdo")), "--data", s(&data), "--out",
        s(&tmp.path().join("e")),
    ]);
    assert_eq!(code(&missing), 3);

    // Default data has 6 channels; the tiny checkpoint expects 2.
    let mismatch = comodo(&["eval", "--checkpoint", s(&ckpt), "--out", s(&tmp.path().join("e"))]);
    assert_eq!(code(&mismatch), 5);
}

#[test]
fn ablate_writes_table_and_records() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "t.cfg", &format!("{TINY}ablate_seeds = 2\nablate_queue_sizes = 4, 8\n"));
    let out_dir = tmp.path().join("abl");
    let out = comodo(&["ablate", "--config", &cfg, "--axis", "queue_size", "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0);
    let table = std::fs::read_to_string(out_dir.join("ablation-queue_size.txt")).unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout), table);
    assert_eq!(table.lines().count(), 4);
    let rows = std::fs::read_to_string(out_dir.join("ablation-queue_size.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 2 * 2 + 2);

    let par = tmp.path().join("par");
    assert_eq!(code(&comodo(&["ablate", "--config", &cfg, "--axis", "queue_size", "--out", s(&par), "--parallel"])), 0);
    assert_eq!(rows, std::fs::read_to_string(par.join("ablation-queue_size.jsonl")).unwrap());

    let bad = comodo(&["ablate", "--config", &cfg, "--axis", "depth", "--out", s(&out_dir)]);
    assert_ne!(code(&bad), 0);
}

#[test]
fn thread_cap_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "t.cfg", TINY);
    let run = |dir: &str, threads: &str| {
        let out = tmp.path().join(dir);
        let status = Command::new(env!("CARGO_BIN_EXE_comodo"))
            .args(["train", "--config", &cfg, "--out", s(&out)])
            .env("COMODO_THREADS", threads)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out.join("final.cmdo")).unwrap()
    };
    assert_eq!(run("one", "1"), run("four", "4"));
}
