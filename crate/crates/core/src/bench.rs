//! Wall-clock cost of shifting.
//!
//! Every configuration is timed over the same pre-allocated buffers, with
//! configurations interleaved within each repetition so slow drift of the
//! machine affects them alike. Reported statistics are order statistics
//! (median, p10, p90) of per-pass times.

use std::fmt::{self, Write as _};
use std::hint::black_box;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec;
use crate::error::{Error, Result};
use crate::net::{count_network, forward_offline, NetworkSpec, WeightStore};
use crate::shift::{bytes_moved, shift_offline_into, ShiftMode, ShiftSpec};
use crate::tensor::{Activation, ClipShape};

pub const CSV_HEADER: &str =
    "label,n,c,t,h,w,n_fwd,n_bwd,bytes_moved,median_ns,p10_ns,p90_ns,reps,baseline_ns,overhead_pct";
pub const MIN_REPS: usize = 20;
pub const MIN_WARMUP: usize = 3;

/// Proportion of all channels that get shifted, split evenly between the two
/// directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fraction {
    pub num: usize,
    pub den: usize,
}

impl Fraction {
    pub fn new(num: usize, den: usize) -> Result<Self> {
        if den == 0 || num > den {
            return Err(Error::spec(format!("shift fraction {num}/{den} is not in [0, 1]")));
        }
        Ok(Fraction { num, den })
    }

    /// `floor(c * fraction / 2)` channels each way.
    pub fn resolve(&self, c: usize) -> Result<ShiftSpec> {
        ShiftSpec::from_fraction(c, self.num, 2 * self.den, ShiftMode::Bidirectional)
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.num, self.den) {
            (0, _) => f.write_str("0"),
            (n, d) if n == d => f.write_str("1"),
            (n, d) => write!(f, "{n}/{d}"),
        }
    }
}

impl FromStr for Fraction {
    type Err = Error;

    /// Accepts `a/b` or a whole number.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::spec(format!("invalid shift fraction {s:?}"));
        let s = s.trim();
        match s.split_once('/') {
            Some((a, b)) => Fraction::new(
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            ),
            None => Fraction::new(s.parse().map_err(|_| bad())?, 1),
        }
    }
}

/// Comma-separated fractions, e.g. `0,1/8,1/4,1/2,1`.
pub fn parse_fractions(s: &str) -> Result<Vec<Fraction>> {
    s.split(',').map(str::parse).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostRow {
    pub label: String,
    pub shape: ClipShape,
    pub n_fwd: usize,
    pub n_bwd: usize,
    pub bytes_moved: u64,
    pub median_ns: u64,
    pub p10_ns: u64,
    pub p90_ns: u64,
    pub reps: usize,
    pub baseline_ns: u64,
    pub overhead_pct: f64,
    /// MACs per frame, for network rows. Not part of the CSV.
    pub macs: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
}

impl CostReport {
    pub fn row(&self, label: &str) -> Option<&CostRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let s = r.shape;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.3}",
                r.label,
                s.n,
                s.c,
                s.t,
                s.h,
                s.w,
                r.n_fwd,
                r.n_bwd,
                r.bytes_moved,
                r.median_ns,
                r.p10_ns,
                r.p90_ns,
                r.reps,
                r.baseline_ns,
                r.overhead_pct
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        codec::write_file(path.as_ref(), self.to_csv().as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchOptions {
    pub warmup: usize,
    /// Pin the thread to the CPU it is running on, where supported.
    pub pin: bool,
    /// Seed for the input values.
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            warmup: MIN_WARMUP,
            pin: false,
            seed: 0,
        }
    }
}

/// Order statistics of a sample of durations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timing {
    pub median_ns: u64,
    pub p10_ns: u64,
    pub p90_ns: u64,
}

/// Nearest-rank percentile, `p` in `[0, 1]`.
fn percentile(sorted: &[u64], p: f64) -> u64 {
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl Timing {
    pub fn from_samples(samples: &[u64]) -> Timing {
        let mut s = samples.to_vec();
        s.sort_unstable();
        Timing {
            median_ns: percentile(&s, 0.5),
            p10_ns: percentile(&s, 0.1),
            p90_ns: percentile(&s, 0.9),
        }
    }
}

pub fn overhead_pct(median_ns: u64, baseline_ns: u64) -> f64 {
    if baseline_ns == 0 {
        return 0.0;
    }
    100.0 * (median_ns as f64 - baseline_ns as f64) / baseline_ns as f64
}

fn check_run(reps: usize, opts: &BenchOptions) -> Result<()> {
    if reps < MIN_REPS {
        return Err(Error::spec(format!("need at least {MIN_REPS} repetitions, got {reps}")));
    }
    if opts.warmup < MIN_WARMUP {
        return Err(Error::spec(format!("need at least {MIN_WARMUP} warmup passes, got {}", opts.warmup)));
    }
    if opts.pin {
        pin_current_thread();
    }
    Ok(())
}

/// Best effort; silently does nothing where unsupported.
#[cfg(target_os = "linux")]
fn pin_current_thread() {
    // SAFETY: plain libc calls on a zeroed, correctly sized cpu_set_t.
    unsafe {
        let cpu = libc::sched_getcpu();
        if cpu < 0 {
            return;
        }
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(cpu as usize, &mut set);
        libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set);
    }
}

#[cfg(not(target_os = "linux"))]
fn pin_current_thread() {}

/// Runs `warmup` untimed rounds, then `reps` timed rounds of `pass(0)`
/// through `pass(count - 1)`. Returns per-pass samples in nanoseconds.
fn interleaved(count: usize, warmup: usize, reps: usize, mut pass: impl FnMut(usize)) -> Vec<Vec<u64>> {
    for _ in 0..warmup {
        (0..count).for_each(&mut pass);
    }
    let mut samples = vec![Vec::with_capacity(reps); count];
    for _ in 0..reps {
        for (i, s) in samples.iter_mut().enumerate() {
            let t0 = Instant::now();
            pass(i);
            s.push(t0.elapsed().as_nanos() as u64);
        }
    }
    samples
}

fn random_clip(shape: ClipShape, seed: u64) -> Result<Activation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Activation::from_vec(shape, (0..shape.len()).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
}

/// Times `shift_offline` at each fraction against the plain copy that every
/// shift starts with (the zero-fraction pass, timed as its own series).
pub fn bench_shift(shape: ClipShape, fractions: &[Fraction], reps: usize, opts: BenchOptions) -> Result<CostReport> {
    let specs: Vec<ShiftSpec> = fractions.iter().map(|f| f.resolve(shape.c)).collect::<Result<_>>()?;
    check_run(reps, &opts)?;
    let x = random_clip(shape, opts.seed)?;
    let mut out = Activation::zeros(shape)?;
    let mut sink = 0.0f32;

    let identity = ShiftSpec::identity();
    let all: Vec<ShiftSpec> = std::iter::once(identity).chain(specs.iter().copied()).collect();
    let samples = interleaved(all.len(), opts.warmup, reps, |i| {
        shift_offline_into(black_box(&x), &all[i], &mut out).expect("validated spec");
        sink += black_box(out.data())[out.data().len() / 2];
    });
    black_box(sink);

    let baseline = Timing::from_samples(&samples[0]);
    let mut rows = Vec::with_capacity(all.len());
    let row = |label: String, spec: &ShiftSpec, t: Timing| -> Result<CostRow> {
        Ok(CostRow {
            label,
            shape,
            n_fwd: spec.n_fwd,
            n_bwd: spec.n_bwd,
            bytes_moved: bytes_moved(spec, shape)?,
            median_ns: t.median_ns,
            p10_ns: t.p10_ns,
            p90_ns: t.p90_ns,
            reps,
            baseline_ns: baseline.median_ns,
            overhead_pct: overhead_pct(t.median_ns, baseline.median_ns),
            macs: None,
        })
    };
    rows.push(row("baseline".into(), &identity, baseline)?);
    for ((f, spec), s) in fractions.iter().zip(&specs).zip(&samples[1..]) {
        rows.push(row(format!("shift_{f}"), spec, Timing::from_samples(s))?);
    }
    Ok(CostReport { rows })
}

/// Times `forward_offline` of `spec` against the same network with every
/// shift removed (its shift-free form), using identical weights.
pub fn bench_network(spec: &NetworkSpec, reps: usize, opts: BenchOptions) -> Result<CostReport> {
    check_run(reps, &opts)?;
    let free = spec.shift_free();
    let w = WeightStore::<f32>::init(spec, opts.seed)?;
    let i = spec.input;
    let shape = ClipShape::new(1, i.t, i.c, i.h, i.w);
    let clip = random_clip(shape, opts.seed.wrapping_add(1))?;
    let mut sink = 0.0f32;

    // the shift-free network twice: once as the baseline, once as a row
    let nets = [&free, &free, spec];
    let samples = interleaved(nets.len(), opts.warmup, reps, |i| {
        let logits = forward_offline(black_box(&clip), nets[i], &w).expect("validated network");
        sink += black_box(logits.data())[0];
    });
    black_box(sink);

    let baseline = Timing::from_samples(&samples[0]);
    let mut total = (0, 0, 0);
    for (b, (inp, _)) in spec.blocks.iter().zip(spec.shapes()?.blocks) {
        if b.has_shift() {
            total.0 += b.shift.n_fwd;
            total.1 += b.shift.n_bwd;
            total.2 += bytes_moved(&b.shift, ClipShape::new(1, i.t, inp.c, inp.h, inp.w))?;
        }
    }
    let mut rows = Vec::new();
    let free_macs = count_network(&free)?.macs_per_frame;
    for (label, t, moved, macs) in [
        ("baseline", baseline, (0, 0, 0), free_macs),
        ("shift_free", Timing::from_samples(&samples[1]), (0, 0, 0), free_macs),
        ("tsm", Timing::from_samples(&samples[2]), total, count_network(spec)?.macs_per_frame),
    ] {
        rows.push(CostRow {
            label: label.into(),
            shape,
            n_fwd: moved.0,
            n_bwd: moved.1,
            bytes_moved: moved.2,
            median_ns: t.median_ns,
            p10_ns: t.p10_ns,
            p90_ns: t.p90_ns,
            reps,
            baseline_ns: baseline.median_ns,
            overhead_pct: overhead_pct(t.median_ns, baseline.median_ns),
            macs: Some(macs),
        });
    }
    Ok(CostReport { rows })
}
