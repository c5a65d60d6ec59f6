//! Randomized property suite for a shift implementation.
//!
//! Properties:
//! - `oracle`: the kernel matches the element-wise reference bit for bit.
//! - `adjoint`: `<shift(x), y> = <x, adjoint(y)>` to within 1e-10.
//! - `identity`: a shift of zero channels returns its input unchanged.
//! - `time_reversal`: with equal group sizes, reversing time around a shift
//!   equals the shift with the two groups exchanged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::shift::{shift_adjoint, shift_offline, shift_offline_naive, Padding, ShiftMode, ShiftSpec};
use crate::tensor::{reverse_time, Activation, ClipShape};

pub const ADJOINT_TOLERANCE: f64 = 1e-10;

/// The operations under test.
pub trait ShiftKernel {
    fn shift(&self, x: &Activation<f64>, spec: &ShiftSpec) -> Result<Activation<f64>>;
    fn adjoint(&self, g: &Activation<f64>, spec: &ShiftSpec) -> Result<Activation<f64>>;
}

/// The library's own implementation.
#[derive(Debug, Clone, Copy, Default)]
pub struct LibraryKernel;

impl ShiftKernel for LibraryKernel {
    fn shift(&self, x: &Activation<f64>, spec: &ShiftSpec) -> Result<Activation<f64>> {
        shift_offline(x, spec)
    }

    fn adjoint(&self, g: &Activation<f64>, spec: &ShiftSpec) -> Result<Activation<f64>> {
        shift_adjoint(g, spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    pub first_failure: Option<String>,
}

impl PropertyResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub properties: Vec<PropertyResult>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        self.properties.iter().all(PropertyResult::passed)
    }
}

pub fn random_clip(rng: &mut impl Rng, s: ClipShape) -> Activation<f64> {
    Activation::from_vec(s, (0..s.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("sized")
}

pub fn random_shape(rng: &mut impl Rng) -> ClipShape {
    ClipShape::new(
        rng.gen_range(1..=3),
        rng.gen_range(1..=6),
        rng.gen_range(1..=12),
        rng.gen_range(1..=5),
        rng.gen_range(1..=5),
    )
}

/// Any valid spec for `c` channels: bi-directional with either padding, or
/// uni-directional.
pub fn random_spec(rng: &mut impl Rng, c: usize) -> ShiftSpec {
    if rng.gen_bool(0.25) {
        return ShiftSpec::online(rng.gen_range(0..=c));
    }
    let n_fwd = rng.gen_range(0..=c);
    let n_bwd = rng.gen_range(0..=c - n_fwd);
    let padding = if rng.gen_bool(0.5) { Padding::Zero } else { Padding::Circular };
    ShiftSpec::offline(n_fwd, n_bwd).with_padding(padding)
}

fn dot(a: &Activation<f64>, b: &Activation<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Exchanges channel blocks `[0, m)` and `[m, 2m)` of every frame.
fn swap_blocks(x: &Activation<f64>, m: usize) -> Activation<f64> {
    let s = x.shape();
    let plane = s.plane();
    let mut out = x.clone();
    let (src, dst) = (x.data(), out.data_mut());
    for f in 0..s.n * s.t {
        let base = f * s.frame_len();
        let (a, b) = (base, base + m * plane);
        dst[a..a + m * plane].copy_from_slice(&src[b..b + m * plane]);
        dst[b..b + m * plane].copy_from_slice(&src[a..a + m * plane]);
    }
    out
}

struct Tally {
    result: PropertyResult,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Tally {
            result: PropertyResult {
                name,
                cases: 0,
                failures: 0,
                first_failure: None,
            },
        }
    }

    fn record(&mut self, ok: Result<bool>, describe: impl FnOnce() -> String) {
        self.result.cases += 1;
        let failed = match ok {
            Ok(true) => None,
            Ok(false) => Some(describe()),
            Err(e) => Some(format!("{}: {e}", describe())),
        };
        if let Some(msg) = failed {
            self.result.failures += 1;
            self.result.first_failure.get_or_insert(msg);
        }
    }
}

/// Runs `cases` random cases of every property, seeded by `seed`.
pub fn run_shift_checks(kernel: &dyn ShiftKernel, seed: u64, cases: usize) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut oracle = Tally::new("oracle");
    let mut adjoint = Tally::new("adjoint");
    let mut identity = Tally::new("identity");
    let mut reversal = Tally::new("time_reversal");

    for _ in 0..cases {
        let s = random_shape(&mut rng);
        let spec = random_spec(&mut rng, s.c);
        let x = random_clip(&mut rng, s);
        let y = random_clip(&mut rng, s);
        let what = || format!("shape {s} spec {spec:?}");

        oracle.record(
            (|| Ok(kernel.shift(&x, &spec)? == shift_offline_naive(&x, &spec)?))(),
            what,
        );

        adjoint.record(
            (|| {
                let lhs = dot(&kernel.shift(&x, &spec)?, &y);
                let rhs = dot(&x, &kernel.adjoint(&y, &spec)?);
                Ok((lhs - rhs).abs() <= ADJOINT_TOLERANCE)
            })(),
            what,
        );

        let none = ShiftSpec {
            n_fwd: 0,
            n_bwd: 0,
            ..spec
        };
        identity.record((|| Ok(kernel.shift(&x, &none)? == x))(), || format!("shape {s} spec {none:?}"));

        let m = rng.gen_range(0..=s.c / 2);
        let padding = if rng.gen_bool(0.5) { Padding::Zero } else { Padding::Circular };
        let eq = ShiftSpec {
            n_fwd: m,
            n_bwd: m,
            padding,
            mode: ShiftMode::Bidirectional,
        };
        reversal.record(
            (|| {
                let lhs = reverse_time(&kernel.shift(&reverse_time(&x), &eq)?);
                let rhs = swap_blocks(&kernel.shift(&swap_blocks(&x, m), &eq)?, m);
                Ok(lhs == rhs)
            })(),
            || format!("shape {s} spec {eq:?}"),
        );
    }
    CheckReport {
        properties: vec![oracle.result, adjoint.result, identity.result, reversal.result],
    }
}
