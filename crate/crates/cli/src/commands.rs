use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use tsm_core::bench::{bench_network, bench_shift, parse_fractions, BenchOptions, CostReport};
use tsm_core::check::{run_shift_checks, LibraryKernel, ShiftKernel};
use tsm_core::net::{consensus_average, forward_offline, load_spec, load_weights, save_weights};
use tsm_core::online::{stream_init, stream_step, StreamOptions};
use tsm_core::synth::gen_dataset;
use tsm_core::tensor_io::{load_tensor, save_tensor};
use tsm_core::train::{toy_network, train, write_metrics_csv, TrainConfig};
use tsm_core::{Activation, Axis, ClipShape, FrameShape, FrameTensor, Tensor};

use crate::{CliError, CliResult, Command, Exit};

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn say(out: &mut dyn Write, text: std::fmt::Arguments<'_>) -> CliResult {
    out.write_fmt(text)
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| CliError::Runtime(format!("writing output: {e}")))
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => { say($out, format_args!($($arg)*)) };
}

pub(crate) fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<Exit> {
    match cmd {
        Command::ShiftCheck { seed, cases } => Ok(shift_check(&LibraryKernel, seed, cases as usize, out)),
        Command::InferOffline { spec, weights, clip, out: dir } => infer_offline(&spec, &weights, &clip, &dir, out),
        Command::InferOnline {
            spec,
            weights,
            frames_dir,
            out: dir,
            convert_bidirectional,
        } => infer_online(&spec, &weights, &frames_dir, &dir, convert_bidirectional, out, err),
        Command::BenchShift {
            shape,
            fractions,
            reps,
            warmup,
            seed,
            pin,
            csv,
        } => {
            let shape = parse_shape(&shape)?;
            let fractions = parse_fractions(&fractions).map_err(|e| CliError::Usage(e.to_string()))?;
            let opts = BenchOptions { warmup: warmup as usize, pin, seed };
            let report = bench_shift(shape, &fractions, reps as usize, opts)?;
            emit_report(&report, csv.as_deref(), out)
        }
        Command::BenchNet {
            spec,
            reps,
            warmup,
            seed,
            pin,
            csv,
        } => {
            let spec = load_spec(&spec)?;
            let opts = BenchOptions { warmup: warmup as usize, pin, seed };
            let report = bench_network(&spec, reps as usize, opts)?;
            emit_report(&report, csv.as_deref(), out)
        }
        Command::GenData {
            seed,
            count,
            frames,
            height,
            width,
            out_dir,
        } => gen_data(seed, count, frames, height, width, &out_dir, out),
        Command::TrainToy {
            config,
            seed,
            placement,
            out_weights,
            metrics_csv,
            out_spec,
        } => train_toy(config.as_deref(), seed, placement.into(), &out_weights, &metrics_csv, out_spec.as_deref(), out),
    }
}

/// Runs the property suite against `kernel` and reports each property.
/// Returns [`Exit::CheckFailed`] if any property fails.
pub fn shift_check(kernel: &dyn ShiftKernel, seed: u64, cases: usize, out: &mut dyn Write) -> Exit {
    let report = run_shift_checks(kernel, seed, cases);
    for p in &report.properties {
        let status = if p.passed() { "PASS" } else { "FAIL" };
        let line = match &p.first_failure {
            Some(f) => format!("{status} {} ({}/{} failed; first: {f})", p.name, p.failures, p.cases),
            None => format!("{status} {} ({} cases)", p.name, p.cases),
        };
        // a closed output stream cannot change the verdict
        let _ = writeln!(out, "{line}");
    }
    if report.all_passed() {
        Exit::Success
    } else {
        Exit::CheckFailed
    }
}

/// `NxCxTxHxW`, the conventional order, into a frames-major clip shape.
fn parse_shape(s: &str) -> CliResult<ClipShape> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|d| d.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("shape {s:?} is not NxCxTxHxW")))?;
    match dims[..] {
        [n, c, t, h, w] if dims.iter().all(|&d| d > 0) => Ok(ClipShape::new(n, t, c, h, w)),
        _ => Err(CliError::Usage(format!("shape {s:?} needs five positive extents NxCxTxHxW"))),
    }
}

fn emit_report(report: &CostReport, csv: Option<&Path>, out: &mut dyn Write) -> CliResult<Exit> {
    for r in &report.rows {
        let macs = r.macs.map_or(String::new(), |m| format!("  macs/frame {m}"));
        say!(
            out,
            "{:<12} median {:>10} ns  p10 {:>10}  p90 {:>10}  overhead {:>7.2}%  bytes {}{macs}",
            r.label,
            r.median_ns,
            r.p10_ns,
            r.p90_ns,
            r.overhead_pct,
            r.bytes_moved
        )?;
    }
    if let Some(path) = csv {
        report.write_csv(path)?;
    }
    Ok(Exit::Success)
}

fn clip_from_tensor(t: Tensor, path: &Path) -> CliResult<Activation> {
    use Axis::*;
    let shape = match (t.axes(), t.extents()) {
        ([N, T, C, H, W], &[n, tt, c, h, w]) => ClipShape::new(n, tt, c, h, w),
        ([T, C, H, W], &[tt, c, h, w]) => ClipShape::new(1, tt, c, h, w),
        (axes, _) => {
            return Err(CliError::Runtime(format!(
                "{}: a clip needs axes (N, T, C, H, W) or (T, C, H, W), found {axes:?}",
                path.display()
            )))
        }
    };
    Ok(Activation::from_vec(shape, t.into_vec())?)
}

fn frame_from_tensor(t: Tensor, path: &Path) -> CliResult<FrameTensor> {
    use Axis::*;
    let shape = match (t.axes(), t.extents()) {
        ([N, C, H, W], &[n, c, h, w]) => FrameShape::new(n, c, h, w),
        ([C, H, W], &[c, h, w]) => FrameShape::new(1, c, h, w),
        (axes, _) => {
            return Err(CliError::Runtime(format!(
                "{}: a frame needs axes (N, C, H, W) or (C, H, W), found {axes:?}",
                path.display()
            )))
        }
    };
    Ok(FrameTensor::from_vec(shape, t.into_vec())?)
}

fn write_outputs(dir: &Path, logits: &Tensor, consensus: &Tensor) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    save_tensor(logits, dir.join("logits.tsmt"))?;
    save_tensor(consensus, dir.join("consensus.tsmt"))?;
    Ok(())
}

fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

fn print_consensus(consensus: &Tensor, out: &mut dyn Write) -> CliResult {
    let k = consensus.extents()[1];
    for (n, row) in consensus.data().chunks_exact(k).enumerate() {
        let values: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        say!(out, "clip {n}: class {} consensus [{}]", argmax(row), values.join(", "))?;
    }
    Ok(())
}

fn infer_offline(spec: &Path, weights: &Path, clip: &Path, dir: &Path, out: &mut dyn Write) -> CliResult<Exit> {
    let spec = load_spec(spec)?;
    let w = load_weights(weights)?;
    let x = clip_from_tensor(load_tensor(clip)?, clip)?;
    let logits = forward_offline(&x, &spec, &w)?;
    let consensus = consensus_average(&logits)?;
    write_outputs(dir, &logits, &consensus)?;
    print_consensus(&consensus, out)?;
    Ok(Exit::Success)
}

/// `frame_00000.tsmt`, `frame_00001.tsmt`, ... in order, with no gaps.
fn frame_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut indexed = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(digits) = name.strip_prefix("frame_").and_then(|s| s.strip_suffix(".tsmt")) else {
            continue;
        };
        if digits.len() < 5 || !digits.bytes().all(|b| b.is_ascii_digit()) {
            continue;
        }
        let index: usize = digits
            .parse()
            .map_err(|_| CliError::Runtime(format!("{}: frame index out of range", entry.path().display())))?;
        indexed.push((index, entry.path()));
    }
    if indexed.is_empty() {
        return Err(CliError::Runtime(format!("{}: no frame_NNNNN.tsmt files", dir.display())));
    }
    indexed.sort();
    for (expected, (index, path)) in indexed.iter().enumerate() {
        if *index != expected {
            return Err(CliError::Runtime(format!(
                "{}: frame numbering has a gap, expected frame_{expected:05}.tsmt before {}",
                dir.display(),
                path.display()
            )));
        }
    }
    Ok(indexed.into_iter().map(|(_, p)| p).collect())
}

fn stack_steps(steps: &[Tensor], n: usize, k: usize) -> CliResult<Tensor> {
    let t = steps.len();
    let mut data = vec![0.0f32; n * t * k];
    for (ti, s) in steps.iter().enumerate() {
        for ni in 0..n {
            data[(ni * t + ti) * k..(ni * t + ti + 1) * k].copy_from_slice(&s.data()[ni * k..(ni + 1) * k]);
        }
    }
    Ok(Tensor::from_vec(vec![n, t, k], vec![Axis::N, Axis::T, Axis::C], data)?)
}

fn infer_online(
    spec: &Path,
    weights: &Path,
    frames_dir: &Path,
    dir: &Path,
    convert: bool,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> CliResult<Exit> {
    let spec = load_spec(spec)?;
    let w = load_weights(weights)?;
    let files = frame_files(frames_dir)?;
    let first = frame_from_tensor(load_tensor(&files[0])?, &files[0])?;
    let batch = first.shape().n;
    let opts = StreamOptions {
        convert_bidirectional: convert,
        window: None,
    };
    let mut state = stream_init::<f32>(&spec, batch, opts)?;
    for warning in state.warnings() {
        let _ = writeln!(err, "warning: {warning}");
    }

    let mut steps = Vec::with_capacity(files.len());
    let mut times = Vec::with_capacity(files.len());
    let mut consensus = None;
    let mut frame = Some(first);
    for (i, path) in files.iter().enumerate() {
        let f = match frame.take() {
            Some(f) => f,
            None => frame_from_tensor(load_tensor(path)?, path)?,
        };
        let t0 = Instant::now();
        let step = stream_step(&f, &spec, &w, &mut state)
            .map_err(|e| CliError::Runtime(format!("{} (frame {i}): {e}", path.display())))?;
        times.push(t0.elapsed());
        steps.push(step.logits);
        consensus = Some(step.consensus);
    }
    let consensus = consensus.expect("at least one frame");
    let logits = stack_steps(&steps, batch, spec.num_classes())?;
    write_outputs(dir, &logits, &consensus)?;
    print_consensus(&consensus, out)?;
    times.sort();
    let median: Duration = times[times.len() / 2];
    say!(out, "{} frames, median step {:.3} ms", files.len(), median.as_secs_f64() * 1e3)?;
    Ok(Exit::Success)
}

fn gen_data(seed: u64, count: usize, t: usize, h: usize, w: usize, dir: &Path, out: &mut dyn Write) -> CliResult<Exit> {
    let clips = gen_dataset(seed, count, t, h, w)?;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut labels = String::from("file,label,start_row,start_col\n");
    for (i, c) in clips.iter().enumerate() {
        let name = format!("clip_{i:05}.tsmt");
        save_tensor(c.clip.as_tensor(), dir.join(&name))?;
        labels.push_str(&format!("{name},{},{},{}\n", c.label, c.start_row, c.start_col));
    }
    let path = dir.join("labels.csv");
    fs::write(&path, labels).map_err(|e| io_err(&path, e))?;
    say!(out, "wrote {count} clips to {}", dir.display())?;
    Ok(Exit::Success)
}

fn load_config(path: Option<&Path>) -> CliResult<TrainConfig> {
    let Some(path) = path else {
        return Ok(TrainConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: invalid training config: {e}", path.display())))
}

fn train_toy(
    config: Option<&Path>,
    seed: Option<u64>,
    placement: tsm_core::net::Placement,
    out_weights: &Path,
    metrics_csv: &Path,
    out_spec: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult<Exit> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let spec = toy_network(cfg.frames, cfg.height, cfg.width, placement);
    let (tr, te) = cfg.datasets()?;
    let outcome = train(&spec, &cfg, &tr, &te)?;
    for m in &outcome.history {
        say!(
            out,
            "epoch {:>3}  loss {:.4}  train acc {:.3}  test acc {:.3}",
            m.epoch,
            m.train_loss,
            m.train_acc,
            m.test_acc
        )?;
    }
    save_weights(&outcome.weights, out_weights)?;
    write_metrics_csv(metrics_csv, &outcome.history)?;
    if let Some(p) = out_spec {
        spec.save(p)?;
    }
    Ok(Exit::Success)
}
