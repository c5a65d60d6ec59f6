use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tsm_cli::{shift_check, Exit};
use tsm_core::bench::CSV_HEADER;
use tsm_core::check::{LibraryKernel, ShiftKernel};
use tsm_core::net::{consensus_average, forward_offline, load_weights, save_weights, NetworkSpec, Placement, WeightStore};
use tsm_core::shift::{shift_adjoint, shift_offline, ShiftSpec};
use tsm_core::tensor_io::{load_tensor, save_tensor};
use tsm_core::train::{toy_network, METRICS_HEADER};
use tsm_core::{Activation, Axis, ClipShape, Tensor};

fn tsm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsm")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small network with bi-directional shifts, its weights, and a random
/// two-clip input, all written under `dir`.
struct Fixture {
    spec: NetworkSpec,
    weights: WeightStore,
    clip: Activation,
    spec_path: PathBuf,
    weights_path: PathBuf,
    clip_path: PathBuf,
}

fn fixture(dir: &Path, spec: NetworkSpec) -> Fixture {
    let weights = WeightStore::init(&spec, 5).unwrap();
    let i = spec.input;
    let s = ClipShape::new(2, i.t, i.c, i.h, i.w);
    let clip = Activation::from_vec(s, (0..s.len()).map(|k| ((k * 37 % 101) as f32 / 50.0) - 1.0).collect()).unwrap();
    let (spec_path, weights_path, clip_path) = (dir.join("spec.json"), dir.join("w.tsmw"), dir.join("clip.tsmt"));
    spec.save(&spec_path).unwrap();
    save_weights(&weights, &weights_path).unwrap();
    save_tensor(clip.as_tensor(), &clip_path).unwrap();
    Fixture {
        spec,
        weights,
        clip,
        spec_path,
        weights_path,
        clip_path,
    }
}

fn toy() -> NetworkSpec {
    toy_network(4, 8, 8, Placement::Residual)
}

/// Writes frame `t` of every clip as `frame_{t:05}.tsmt`.
fn write_frames(clip: &Activation, dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    let s = clip.shape();
    for t in 0..s.t {
        let data = (0..s.n).flat_map(|n| clip.frame(n, t).to_vec()).collect();
        let frame = Tensor::from_vec(vec![s.n, s.c, s.h, s.w], vec![Axis::N, Axis::C, Axis::H, Axis::W], data).unwrap();
        save_tensor(&frame, dir.join(format!("frame_{t:05}.tsmt"))).unwrap();
    }
}

#[test]
fn shift_check_defaults_pass() {
    let o = tsm(&["shift-check"]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let out = text(&o.stdout);
    for name in ["oracle", "adjoint", "identity", "time_reversal"] {
        assert!(out.contains(&format!("PASS {name} (100 cases)")), "{out}");
    }
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        &["shift-check", "--cases", "0"][..],
        &["shift-check", "--bogus"],
        &["no-such-command"],
        &["bench-shift", "--reps", "5"],
        &["bench-shift", "--warmup", "1"],
        &["bench-shift", "--shape", "1x2x3"],
        &["bench-shift", "--shape", "1x0x8x4x4"],
        &["bench-shift", "--fractions", "1/0"],
        &["train-toy", "--placement", "sideways", "--out-weights", "w", "--metrics-csv", "m"],
    ] {
        let o = tsm(args);
        assert_eq!(code(&o), 2, "{args:?}: {}", text(&o.stderr));
    }
    assert_eq!(code(&tsm(&["--help"])), 0);
}

struct Swapped;

impl ShiftKernel for Swapped {
    fn shift(&self, x: &Activation<f64>, spec: &ShiftSpec) -> tsm_core::Result<Activation<f64>> {
        shift_adjoint(x, spec)
    }
    fn adjoint(&self, g: &Activation<f64>, spec: &ShiftSpec) -> tsm_core::Result<Activation<f64>> {
        shift_offline(g, spec)
    }
}

#[test]
fn mutated_kernel_fails_the_check() {
    let mut out = Vec::new();
    assert_eq!(shift_check(&Swapped, 0, 100, &mut out), Exit::CheckFailed);
    assert_eq!(Exit::CheckFailed.code(), 3);
    assert!(text(&out).contains("FAIL oracle"));
    let mut out = Vec::new();
    assert_eq!(shift_check(&LibraryKernel, 0, 20, &mut out), Exit::Success);
}

#[test]
fn infer_offline_writes_logits_and_consensus() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path(), toy());
    let out = dir.path().join("out");
    let o = tsm(&[
        "infer-offline",
        "--spec", p(&f.spec_path),
        "--weights", p(&f.weights_path),
        "--clip", p(&f.clip_path),
        "--out", p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let logits = forward_offline(&f.clip, &f.spec, &f.weights).unwrap();
    assert_eq!(load_tensor(out.join("logits.tsmt")).unwrap(), logits);
    assert_eq!(load_tensor(out.join("consensus.tsmt")).unwrap(), consensus_average(&logits).unwrap());
    let stdout = text(&o.stdout);
    assert!(stdout.contains("clip 0: class") && stdout.contains("clip 1: class"), "{stdout}");
}

#[test]
fn identity_shift_spec_reproduces_the_shift_free_engine() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path(), toy().zero_shifts());
    let out = dir.path().join("out");
    let o = tsm(&[
        "infer-offline",
        "--spec", p(&f.spec_path),
        "--weights", p(&f.weights_path),
        "--clip", p(&f.clip_path),
        "--out", p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let free = forward_offline(&f.clip, &toy().shift_free(), &f.weights).unwrap();
    assert_eq!(load_tensor(out.join("logits.tsmt")).unwrap(), free);
}

#[test]
fn unreadable_inputs_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path(), toy());
    let out = dir.path().join("out");
    let missing = dir.path().join("missing.tsmw");
    let o = tsm(&["infer-offline", "--spec", p(&f.spec_path), "--weights", p(&missing), "--clip", p(&f.clip_path), "--out", p(&out)]);
    assert_eq!(code(&o), 1);
    assert!(text(&o.stderr).contains("missing.tsmw"));

    let bytes = fs::read(&f.weights_path).unwrap();
    fs::write(&f.weights_path, &bytes[..bytes.len() - 7]).unwrap();
    let o = tsm(&["infer-offline", "--spec", p(&f.spec_path), "--weights", p(&f.weights_path), "--clip", p(&f.clip_path), "--out", p(&out)]);
    assert_eq!(code(&o), 1);
    let err = text(&o.stderr);
    assert!(err.contains("w.tsmw") && err.contains("at byte"), "{err}");
    assert!(!out.exists());
}

fn online(f: &Fixture, frames: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "infer-online",
        "--spec", p(&f.spec_path),
        "--weights", p(&f.weights_path),
        "--frames-dir", p(frames),
        "--out", p(out),
    ];
    args.extend_from_slice(extra);
    tsm(&args)
}

#[test]
fn infer_online_matches_offline_unidirectional() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path(), toy().to_unidirectional());
    let frames = dir.path().join("frames");
    write_frames(&f.clip, &frames);
    let out = dir.path().join("online");
    let o = online(&f, &frames, &out, &[]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("4 frames, median step"));

    let offline = dir.path().join("offline");
    let o = tsm(&["infer-offline", "--spec", p(&f.spec_path), "--weights", p(&f.weights_path), "--clip", p(&f.clip_path), "--out", p(&offline)]);
    assert_eq!(code(&o), 0);
    for name in ["logits.tsmt", "consensus.tsmt"] {
        let (a, b) = (load_tensor(out.join(name)).unwrap(), load_tensor(offline.join(name)).unwrap());
        assert_eq!(a.extents(), b.extents());
        let d = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
        assert!(d <= 1e-5, "{name}: {d}");
    }
}

#[test]
fn infer_online_single_frame_consensus_is_its_logits() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path(), toy().to_unidirectional().with_frames(1));
    let frames = dir.path().join("frames");
    write_frames(&f.clip, &frames);
    let out = dir.path().join("out");
    assert_eq!(code(&online(&f, &frames, &out, &[])), 0);
    let logits = load_tensor(out.join("logits.tsmt")).unwrap();
    assert_eq!(logits.extents(), &[2, 1, 2]);
    assert_eq!(load_tensor(out.join("consensus.tsmt")).unwrap().data(), logits.data());
}

#[test]
fn infer_online_rejects_bad_frame_sets() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path(), toy().to_unidirectional());
    let out = dir.path().join("out");

    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    assert_eq!(code(&online(&f, &empty, &out, &[])), 1);

    let gap = dir.path().join("gap");
    write_frames(&f.clip, &gap);
    fs::remove_file(gap.join("frame_00001.tsmt")).unwrap();
    let o = online(&f, &gap, &out, &[]);
    assert_eq!(code(&o), 1);
    assert!(text(&o.stderr).contains("gap"));

    let wrong = dir.path().join("wrong");
    fs::create_dir_all(&wrong).unwrap();
    let t = Tensor::from_vec(vec![1, 3, 8, 8], vec![Axis::N, Axis::C, Axis::H, Axis::W], vec![0.0f32; 192]).unwrap();
    save_tensor(&t, wrong.join("frame_00000.tsmt")).unwrap();
    assert_eq!(code(&online(&f, &wrong, &out, &[])), 1);
}

#[test]
fn infer_online_converts_bidirectional_only_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path(), toy());
    let frames = dir.path().join("frames");
    write_frames(&f.clip, &frames);
    let out = dir.path().join("out");
    assert_eq!(code(&online(&f, &frames, &out, &[])), 1);
    let o = online(&f, &frames, &out, &["--convert-bidirectional"]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    assert!(text(&o.stderr).contains("warning: block 0"));
}

#[test]
fn bench_shift_csv_contract() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("b.csv");
    let o = tsm(&["bench-shift", "--shape", "1x16x4x8x8", "--fractions", "0,1/4,1", "--reps", "20", "--csv", p(&csv)]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let body = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = body.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("baseline,1,16,4,8,8,0,0,0,"));
    assert!(lines[4].starts_with("shift_1,1,16,4,8,8,8,8,"));
    assert!(!body.contains('\r'));
}

#[test]
fn bench_net_reports_equal_macs() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path(), toy());
    let csv = dir.path().join("n.csv");
    let o = tsm(&["bench-net", "--spec", p(&f.spec_path), "--reps", "20", "--csv", p(&csv)]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let body = fs::read_to_string(&csv).unwrap();
    assert_eq!(body.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(body.lines().count(), 4);
    let stdout = text(&o.stdout);
    let macs: Vec<&str> = stdout.lines().filter_map(|l| l.split("macs/frame ").nth(1)).collect();
    assert_eq!(macs.len(), 3);
    assert!(macs.iter().all(|m| *m == macs[0]), "{stdout}");
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn gen_data_is_deterministic_and_balanced() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = tsm(&["gen-data", "--seed", "9", "--count", "20", "--frames", "4", "--height", "8", "--width", "8", "--out-dir", p(d)]);
        assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta, tb);
    assert_eq!(ta.len(), 21);
    let labels = fs::read_to_string(a.join("labels.csv")).unwrap();
    assert_eq!(labels.lines().next().unwrap(), "file,label,start_row,start_col");
    let right = labels.lines().skip(1).filter(|l| l.split(',').nth(1) == Some("1")).count();
    assert_eq!(right, 10);
    let clip = load_tensor(a.join("clip_00000.tsmt")).unwrap();
    assert_eq!(clip.extents(), &[1, 4, 1, 8, 8]);

    let o = tsm(&["gen-data", "--frames", "1", "--out-dir", p(&dir.path().join("c"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn train_toy_writes_weights_metrics_and_spec() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.json");
    fs::write(&config, r#"{"epochs": 2, "train_size": 16, "test_size": 8, "frames": 4, "height": 8, "width": 8, "batch_size": 8}"#).unwrap();
    let (w, m, s) = (dir.path().join("w.tsmw"), dir.path().join("m.csv"), dir.path().join("s.json"));
    let o = tsm(&["train-toy", "--config", p(&config), "--seed", "4", "--out-weights", p(&w), "--metrics-csv", p(&m), "--out-spec", p(&s)]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let metrics = fs::read_to_string(&m).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), METRICS_HEADER);
    assert_eq!(metrics.lines().count(), 3);
    let spec = tsm_core::net::load_spec(&s).unwrap();
    assert_eq!(spec, toy());
    load_weights(&w).unwrap().validate(&spec).unwrap();

    // same flags, same bytes
    let w2 = dir.path().join("w2.tsmw");
    let o = tsm(&["train-toy", "--config", p(&config), "--seed", "4", "--out-weights", p(&w2), "--metrics-csv", p(&m)]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(&w).unwrap(), fs::read(&w2).unwrap());

    fs::write(&config, r#"{"epochs": 2, "momentum": 0.9}"#).unwrap();
    let o = tsm(&["train-toy", "--config", p(&config), "--out-weights", p(&w), "--metrics-csv", p(&m)]);
    assert_eq!(code(&o), 1);
    assert!(text(&o.stderr).contains("momentum"));
}
