use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wildnerf::imagebuf::{GrayImage, RgbImage};
use wildnerf::metrics::{psnr, METRICS_CSV_HEADER};
use wildnerf::sceneio::SceneDataset;
use wildnerf::training::{checkpoint_load, LOSS_CSV_HEADER};

const SMALL_CONFIG: &str = "rays_per_batch = 128
samples_per_ray = 24
warmup_prune = 40
lr_mlp = 5e-3
lr_encoding = 2e-2
[occupancy]
resolution = 16
update_interval = 8
[field]
hidden = [16, 16]
geo_features = 7
[field.grid]
levels = 6
table_size = 8192
base_resolution = 4
growth_factor = 1.6
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_wildnerf"));
    c.env_remove("WILDSYNTH_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn synth(dir: &Path, preset: &str, times: &str) {
    ok(&["synth", "--out", s(dir), "--preset", preset, "--resolution", "24", "--times", times, "--cameras", "2", "--seed", "3"]);
}

/// Dataset plus a short training run in `root`.
fn trained(root: &Path, iters: &str) -> (PathBuf, PathBuf) {
    let data = root.join("data");
    synth(&data, "translate", "4");
    let cfg = root.join("small.toml");
    std::fs::write(&cfg, SMALL_CONFIG).unwrap();
    let ckpt = root.join("model.ckpt");
    ok(&["train", "--data", s(&data), "--out", s(&ckpt), "--iters", iters, "--deterministic", "--config", s(&cfg)]);
    (data, ckpt)
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).to_lowercase().contains("usage"));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["synth", "--out", "x", "--preset", "spiral"]).status.code(), Some(2));
}

#[test]
fn synth_static_single_time_has_empty_masks() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    ok(&["synth", "--out", s(&data), "--preset", "static", "--times", "1", "--resolution", "16"]);
    let ds = SceneDataset::load(&data).unwrap();
    for i in 0..ds.len() {
        let m = ds.load_mask(i).unwrap().expect("mask");
        assert!(m.data.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn synth_is_reproducible_and_deform_moves() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    synth(&a, "deform", "3");
    synth(&b, "deform", "3");
    assert_eq!(tree(&a), tree(&b));
    let ds = SceneDataset::load(&a).unwrap();
    let moving = (0..ds.len()).any(|i| {
        ds.load_mask(i)
            .unwrap()
            .is_some_and(|m: GrayImage| m.data.iter().any(|&v| v > 0.5))
    });
    assert!(moving);
}

#[test]
fn synth_into_unwritable_path_fails() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain");
    std::fs::write(&file, b"x").unwrap();
    let out = run(&["synth", "--out", s(&file.join("sub")), "--resolution", "16"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error:"));
}

#[test]
fn zero_iterations_writes_initial_checkpoint_and_empty_history() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ckpt) = trained(dir.path(), "0");
    let state = checkpoint_load(&ckpt).unwrap();
    assert_eq!(state.iter, 0);
    let csv = std::fs::read_to_string(dir.path().join("model.loss.csv")).unwrap();
    assert_eq!(csv.trim_end(), LOSS_CSV_HEADER);
}

#[test]
fn train_prints_summary_and_writes_only_declared_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "translate", "3");
    let before = tree(&data);
    let out_dir = dir.path().join("out");
    std::fs::create_dir(&out_dir).unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, SMALL_CONFIG).unwrap();
    let ckpt = out_dir.join("m.ckpt");
    let out = ok(&["train", "--data", s(&data), "--out", s(&ckpt), "--iters", "5", "--config", s(&cfg)]);
    let line = String::from_utf8_lossy(&out.stdout);
    let last = line.lines().last().unwrap();
    assert!(last.starts_with("iters 5 loss ") && last.contains(" wall "), "{last}");
    let written: Vec<PathBuf> = tree(&out_dir).into_keys().collect();
    assert_eq!(written, vec![PathBuf::from("m.ckpt"), PathBuf::from("m.loss.csv")]);
    assert_eq!(tree(&data), before);
}

#[test]
fn flags_override_config_file_over_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "translate", "3");
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, format!("seed = 11\nmax_iters = 2\n{SMALL_CONFIG}")).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    ok(&["train", "--data", s(&data), "--out", s(&ckpt), "--config", s(&cfg), "--seed", "5", "--no-pruning", "--ablate", "flow"]);
    let st = checkpoint_load(&ckpt).unwrap();
    assert_eq!(st.config.seed, 5);
    assert_eq!(st.iter, 2);
    assert_eq!(st.config.rays_per_batch, 128);
    assert!(!st.config.pruning_enabled);
    assert_eq!(st.config.ablation, Some(wildnerf::training::Ablation::Flow));
    // untouched keys keep the built-in default
    assert_eq!(st.config.decay, wildnerf::training::TrainConfig::default().decay);

    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let out = run(&["train", "--data", s(&data), "--out", s(&ckpt), "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error:"));
}

#[test]
fn deterministic_runs_match_apart_from_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "translate", "3");
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, SMALL_CONFIG).unwrap();
    let mut histories = Vec::new();
    for (run_id, threads) in [("a", "1"), ("b", "3")] {
        let ckpt = dir.path().join(format!("{run_id}.ckpt"));
        let out = bin()
            .args(["train", "--data", s(&data), "--out", s(&ckpt), "--iters", "8", "--seed", "7", "--deterministic", "--config", s(&cfg)])
            .env("WILDSYNTH_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        let csv = std::fs::read_to_string(dir.path().join(format!("{run_id}.loss.csv"))).unwrap();
        let rows: Vec<String> = csv
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect();
        histories.push(rows);
    }
    assert_eq!(histories[0], histories[1]);
    assert_eq!(histories[0].len(), 9);
}

#[test]
fn render_and_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ckpt) = trained(dir.path(), "150");

    let eval_csv = dir.path().join("train.csv");
    ok(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--split", "train", "--out", s(&eval_csv)]);
    let text = std::fs::read_to_string(&eval_csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(METRICS_CSV_HEADER));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[1], "train");
    assert_eq!(row[2], "full");
    assert_eq!(row[5], "");
    let eval_psnr: f32 = row[3].parse().unwrap();

    // eval is deterministic
    let again = dir.path().join("train2.csv");
    ok(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--split", "train", "--out", s(&again)]);
    assert_eq!(std::fs::read(&eval_csv).unwrap(), std::fs::read(&again).unwrap());

    // a training (camera, time) pair renders near the split mean
    let ds = SceneDataset::load(&data).unwrap();
    let frame = ds.split("train").unwrap()[0];
    let f = &ds.frames[frame];
    let png = dir.path().join("r.png");
    let pfm = dir.path().join("r.pfm");
    ok(&["render", "--ckpt", s(&ckpt), "--data", s(&data), "--camera", &f.camera.to_string(), "--time", &f.time.to_string(), "--out", s(&png), "--depth", s(&pfm)]);
    let rendered = RgbImage::load_png(&png).unwrap();
    let gt = ds.load_image(frame).unwrap();
    let p = psnr(&rendered, &gt, 1.0).unwrap();
    assert!(p > eval_psnr - 1.0, "render {p} vs eval mean {eval_psnr}");
    let depth = wildnerf::sceneio::load_prior(&pfm, wildnerf::sceneio::PriorKind::DepthPfm).unwrap();
    assert_eq!((depth.width, depth.height), (gt.width, gt.height));

    // rendering is reproducible and varies with time
    let png2 = dir.path().join("r2.png");
    ok(&["render", "--ckpt", s(&ckpt), "--data", s(&data), "--camera", &f.camera.to_string(), "--time", &f.time.to_string(), "--out", s(&png2)]);
    assert_eq!(std::fs::read(&png).unwrap(), std::fs::read(&png2).unwrap());
    let mut sweep = Vec::new();
    for t in 0..ds.time_count {
        let out = dir.path().join(format!("t{t}.png"));
        ok(&["render", "--ckpt", s(&ckpt), "--data", s(&data), "--camera", &f.camera.to_string(), "--time", &t.to_string(), "--out", s(&out)]);
        sweep.push(std::fs::read(&out).unwrap());
    }
    for i in 0..sweep.len() {
        for j in i + 1..sweep.len() {
            assert_ne!(sweep[i], sweep[j], "times {i} and {j} rendered identically");
        }
    }
}

#[test]
fn render_and_eval_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ckpt) = trained(dir.path(), "1");
    let out = dir.path().join("x.png");

    let bad = run(&["render", "--ckpt", s(&ckpt), "--data", s(&data), "--camera", "99", "--time", "0", "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).starts_with("error:"));
    assert_eq!(stderr(&bad).trim_end().lines().count(), 1);

    let missing = dir.path().join("nope.ckpt");
    let bad = run(&["render", "--ckpt", s(&missing), "--data", s(&data), "--camera", "0", "--time", "0", "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains(s(&missing)));

    let csv = dir.path().join("e.csv");
    let bad = run(&["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--split", "nonexistent", "--out", s(&csv)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(!csv.exists());

    let bad = bin()
        .args(["eval", "--ckpt", s(&ckpt), "--data", s(&data), "--out", s(&csv)])
        .env("WILDSYNTH_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}
