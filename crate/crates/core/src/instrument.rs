//! Scalar wrapper that counts the arithmetic performed on it.
//!
//! Running a generic kernel over [`Counted`] values reports how many
//! additions, subtractions, multiplications and divisions it executed.

use std::cell::Cell;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub};

thread_local! {
    static OPS: Cell<u64> = const { Cell::new(0) };
}

fn tick() {
    OPS.with(|c| c.set(c.get() + 1));
}

#[derive(Debug, Clone, Copy, Default, PartialEq, PartialOrd)]
pub struct Counted(pub f32);

/// Runs `f` and returns its result with the number of arithmetic operations
/// performed on [`Counted`] values on this thread meanwhile.
pub fn count_arith<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let before = OPS.with(Cell::get);
    let out = f();
    let after = OPS.with(Cell::get);
    (out, after - before)
}

macro_rules! counted_binop {
    ($trait:ident, $method:ident, $op:tt) => {
        impl $trait for Counted {
            type Output = Counted;
            fn $method(self, rhs: Counted) -> Counted {
                tick();
                Counted(self.0 $op rhs.0)
            }
        }
    };
}

counted_binop!(Add, add, +);
counted_binop!(Sub, sub, -);
counted_binop!(Mul, mul, *);
counted_binop!(Div, div, /);

impl Neg for Counted {
    type Output = Counted;
    fn neg(self) -> Counted {
        tick();
        Counted(-self.0)
    }
}

impl AddAssign for Counted {
    fn add_assign(&mut self, rhs: Counted) {
        *self = *self + rhs;
    }
}

impl MulAssign for Counted {
    fn mul_assign(&mut self, rhs: Counted) {
        *self = *self * rhs;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_each_operation() {
        let (v, ops) = count_arith(|| {
            let mut acc = Counted::default();
            for i in 0..4 {
                acc += Counted(i as f32) * Counted(2.0);
            }
            acc
        });
        assert_eq!(v, Counted(12.0));
        assert_eq!(ops, 8);
    }
}
