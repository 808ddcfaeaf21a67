//! End-to-end runs of the `dstsa` binary on tiny synthetic configurations.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dstsa::config::RunConfig;
use dstsa::network::count_params_flops;

const TINY: &[&str] = &[
    "--synthetic",
    "--set",
    "model.base_channels=8",
    "--set",
    "model.stage_depths=1,1,1",
    "--set",
    "data.train_per_class=4",
    "--set",
    "data.val_per_class=2",
    "--set",
    "train.frames=12",
    "--set",
    "train.batch_size=8",
    "--set",
    "train.warmup=1",
    "--set",
    "run.checkpoint_every=1",
];

fn dstsa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dstsa"))
        .args(args)
        .env("DSTSA_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn train(out: &Path, epochs: usize, extra: &[&str]) -> Output {
    let epochs = epochs.to_string();
    let out = out.to_str().unwrap();
    let mut args = vec!["train", "--epochs", &epochs, "--out", out];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    dstsa(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn log_rows(dir: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(dir.join("train_log.tsv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect()
}

#[test]
fn train_then_eval_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = train(&run, 3, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["config.txt", "train_log.tsv", "metrics.json", "last.ckpt", "epoch_0001.ckpt", "epoch_0003.ckpt"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    assert_eq!(log_rows(&run).len(), 3);
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["epochs_completed"], 3);
    let acc = metrics["final_train_acc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    // the same checkpoint twice fuses to its own accuracy
    let ckpt = run.join("last.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    let eval_dir = dir.path().join("eval");
    let o = dstsa(&["eval", "--checkpoint", ckpt, "--checkpoint", ckpt, "--weights", "1,2", "--out", eval_dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval_dir.join("eval.json")).unwrap()).unwrap();
    let single = report["modalities"][0][1].as_f64().unwrap();
    assert_eq!(report["fused_accuracy"].as_f64().unwrap(), single);
    assert_eq!(report["samples"], 8);
    let confusion = fs::read_to_string(eval_dir.join("confusion_fused.csv")).unwrap();
    let cells: usize = confusion
        .lines()
        .skip(1)
        .flat_map(|l| l.split(',').skip(1).map(|x| x.parse::<usize>().unwrap()).collect::<Vec<_>>())
        .sum();
    assert_eq!(cells, 8);

    // static bank: K·V·V rows
    let topo = dir.path().join("topo.csv");
    let o = dstsa(&["export", "--checkpoint", ckpt, "--what", "topology", "--layer", "blocks.1", "--out", topo.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&topo).unwrap();
    assert_eq!(text.lines().count(), 1 + 8 * 22 * 22);
    assert!(text.lines().skip(1).all(|l| l.starts_with("blocks.1,") && l.split(',').nth(2) == Some("-1")));

    // temporal graphs: one per group and frame of the layer's input
    let dynamic = dir.path().join("dyn.json");
    let o = dstsa(&[
        "export", "--checkpoint", ckpt, "--what", "topology", "--dynamic", "--sample", "1", "--layer", "blocks.2", "--format", "json",
        "--out", dynamic.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(&dynamic).unwrap()).unwrap();
    let mut frames: Vec<i64> = rows.iter().map(|r| r["frame"].as_i64().unwrap()).collect();
    frames.sort_unstable();
    frames.dedup();
    // blocks.2 follows the first stride-2 block: 12 -> 6 frames
    assert_eq!(frames, (0..6).collect::<Vec<_>>());

    let cam = dir.path().join("cam.csv");
    let o = dstsa(&["export", "--checkpoint", ckpt, "--what", "cam", "--sample", "0", "--out", cam.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&cam).unwrap();
    assert!(text.starts_with("# sample=0") && text.contains("normalization=min-max"));
    let values: Vec<f64> = text
        .lines()
        .skip(2)
        .flat_map(|l| l.split(',').skip(1).map(|x| x.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .collect();
    assert_eq!(values.len(), 3 * 22);
    assert!(values.iter().all(|x| (0.0..=1.0).contains(x)));
    assert_eq!(values.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
    assert_eq!(values.iter().cloned().fold(0.0, f64::max), 1.0);

    let o = dstsa(&["export", "--checkpoint", ckpt, "--what", "topology", "--layer", "blocks.99"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("blocks.0"), "{}", stderr(&o));
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let straight = dir.path().join("straight");
    let split = dir.path().join("split");
    assert!(train(&straight, 3, &[]).status.success());
    assert!(train(&split, 2, &[]).status.success());
    let ckpt = split.join("last.ckpt");
    let o = dstsa(&["train", "--resume", ckpt.to_str().unwrap(), "--epochs", "3", "--out", split.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (a, b) = (log_rows(&straight), log_rows(&split));
    assert_eq!(b.len(), 3);
    // epoch, lr, loss, train and val accuracy agree exactly; wall time does not
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x[..5], y[..5]);
    }
}

#[test]
fn eval_rejects_checkpoints_trained_on_different_classes() {
    let dir = tempfile::tempdir().unwrap();
    let (four, three) = (dir.path().join("four"), dir.path().join("three"));
    assert!(train(&four, 1, &[]).status.success());
    assert!(train(&three, 1, &["--classes", "3"]).status.success());
    let o = dstsa(&[
        "eval",
        "--checkpoint",
        four.join("last.ckpt").to_str().unwrap(),
        "--checkpoint",
        three.join("last.ckpt").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("different data or classes"), "{}", stderr(&o));
}

#[test]
fn exit_codes() {
    let o = dstsa(&["train", "--ker=3"]);
    assert_eq!(o.status.code(), Some(2));
    let o = dstsa(&["summary", "--set", "ker=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown configuration key(s): ker"), "{}", stderr(&o));
    let o = dstsa(&["summary", "--set", "model.groups=3"]);
    assert_eq!(o.status.code(), Some(2), "64 channels do not split into 3 groups: {}", stderr(&o));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "# comment\ntrain.epochs 3\n").unwrap();
    let o = dstsa(&["summary", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let missing = dir.path().join("none.ckpt");
    let o = dstsa(&["eval", "--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    let o = dstsa(&["verify", "--only", "schedule"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = dstsa(&["verify", "--only", "no.such.check"]);
    assert_eq!(o.status.code(), Some(2));
    let o = dstsa(&["verify", "--only", "gradient.primitives", "--inject-fault", "tanh-backward"]);
    assert_eq!(o.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("FAIL") && stdout.contains("tanh"), "{stdout}");
}

#[test]
fn summary_reports_the_model_size() {
    let o = dstsa(&["summary", "--set", "model.groups=4"]);
    assert!(o.status.success());
    let cfg = RunConfig {
        model: dstsa::network::ModelConfig {
            groups: 4,
            ..RunConfig::default().model
        },
        ..RunConfig::default()
    };
    let (params, _) = count_params_flops(&cfg.model).unwrap();
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains(&format!("total: {params} parameters")), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("blocks.")).count(), 12);
}

#[test]
fn dumped_configuration_reads_back_identically() {
    let mut cfg = RunConfig::default();
    cfg.apply_pairs(&[
        ("model.theta".into(), "softmax".into()),
        ("model.branches".into(), "M,S,g1,g3".into()),
        ("train.milestones".into(), "10,20,30".into()),
        ("train.modality".into(), "bone_motion".into()),
        ("run.out".into(), "/tmp/some where".into()),
    ])
    .unwrap();
    let back = RunConfig::from_text(&cfg.dump()).unwrap();
    assert_eq!(back.dump(), cfg.dump());
    assert_eq!(back.model, cfg.model);
    assert_eq!(back.train, cfg.train);
}
