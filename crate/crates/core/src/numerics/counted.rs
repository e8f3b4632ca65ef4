//! Instrumented scalar for operation accounting.
//!
//! [`Counted`] wraps an `f64` and bumps thread-local counters on every
//! multiply and add/subtract. Running a kernel with `Tensor<Counted>` gives the
//! exact number of arithmetic operations it performed, independent of any
//! analytic formula. Normalization steps (softmax, scaling) run inside
//! [`uncounted`] and are excluded from the tally.

use std::cell::Cell;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use super::real::{Precision, Real};

thread_local! {
    static MULS: Cell<u64> = const { Cell::new(0) };
    static ADDS: Cell<u64> = const { Cell::new(0) };
    static PAUSED: Cell<u32> = const { Cell::new(0) };
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub multiplies: u64,
    pub adds: u64,
}

impl OpCounts {
    pub fn total(&self) -> u64 {
        self.multiplies + self.adds
    }
}

#[inline]
fn bump(cell: &'static std::thread::LocalKey<Cell<u64>>) {
    if PAUSED.with(|p| p.get()) == 0 {
        cell.with(|c| c.set(c.get() + 1));
    }
}

/// Runs `f` with counting suspended on this thread.
pub fn uncounted<R>(f: impl FnOnce() -> R) -> R {
    PAUSED.with(|p| p.set(p.get() + 1));
    let out = f();
    PAUSED.with(|p| p.set(p.get() - 1));
    out
}

/// Runs `f` and returns its result together with the operations it counted.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, OpCounts) {
    let before = snapshot();
    let out = f();
    let after = snapshot();
    (
        out,
        OpCounts {
            multiplies: after.multiplies - before.multiplies,
            adds: after.adds - before.adds,
        },
    )
}

fn snapshot() -> OpCounts {
    OpCounts {
        multiplies: MULS.with(|c| c.get()),
        adds: ADDS.with(|c| c.get()),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, PartialOrd)]
pub struct Counted(pub f64);

impl Add for Counted {
    type Output = Counted;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        bump(&ADDS);
        Counted(self.0 + rhs.0)
    }
}

impl Sub for Counted {
    type Output = Counted;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        bump(&ADDS);
        Counted(self.0 - rhs.0)
    }
}

impl Mul for Counted {
    type Output = Counted;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        bump(&MULS);
        Counted(self.0 * rhs.0)
    }
}

impl Div for Counted {
    type Output = Counted;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        Counted(self.0 / rhs.0)
    }
}

impl Neg for Counted {
    type Output = Counted;
    #[inline]
    fn neg(self) -> Self {
        Counted(-self.0)
    }
}

impl AddAssign for Counted {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl SubAssign for Counted {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl MulAssign for Counted {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl DivAssign for Counted {
    #[inline]
    fn div_assign(&mut self, rhs: Self) {
        *self = *self / rhs;
    }
}

impl Real for Counted {
    const PRECISION: Precision = Precision::F64;

    fn from_f64(v: f64) -> Self {
        Counted(v)
    }
    fn to_f64(self) -> f64 {
        self.0
    }
    fn exp(self) -> Self {
        Counted(self.0.exp())
    }
    fn ln(self) -> Self {
        Counted(self.0.ln())
    }
    fn sqrt(self) -> Self {
        Counted(self.0.sqrt())
    }
    fn abs(self) -> Self {
        Counted(self.0.abs())
    }
    fn is_finite(self) -> bool {
        self.0.is_finite()
    }
    fn write_le(self, out: &mut Vec<u8>) {
        self.0.write_le(out)
    }
    fn read_le(bytes: &[u8]) -> Self {
        Counted(f64::read_le(bytes))
    }
}
