//! Shared helpers for the integration suites: a double-double arithmetic
//! kernel for high-precision oracle evaluations, and utilities for driving
//! the compiled binary.

#![allow(dead_code)]

use std::path::PathBuf;
use std::process::{Command, Output};

/// Double-double value (Dekker arithmetic): an unevaluated sum hi + lo with
/// |lo| ≤ ulp(hi)/2, giving ~31 significant decimal digits. Enough headroom
/// to serve as an independent oracle for 1e-10 relative comparisons.
#[derive(Clone, Copy, Debug)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bv = s - a;
    let err = (a - (s - bv)) + (b - bv);
    Dd { hi: s, lo: err }
}

/// Requires |a| ≥ |b|.
fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd { hi: s, lo: b - (s - a) }
}

fn two_prod(a: f64, b: f64) -> Dd {
    let p = a * b;
    // FMA makes the rounding error of a*b exact.
    let e = a.mul_add(b, -p);
    Dd { hi: p, lo: e }
}

impl Dd {
    pub fn from_f64(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    /// π to double-double precision (tail of the f64 constant).
    pub fn pi() -> Dd {
        Dd {
            hi: std::f64::consts::PI,
            lo: 1.2246467991473532e-16,
        }
    }

    pub fn add(self, o: Dd) -> Dd {
        let s = two_sum(self.hi, o.hi);
        quick_two_sum(s.hi, s.lo + self.lo + o.lo)
    }

    pub fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    pub fn mul(self, o: Dd) -> Dd {
        let p = two_prod(self.hi, o.hi);
        quick_two_sum(p.hi, p.lo + self.hi * o.lo + self.lo * o.hi)
    }

    pub fn div(self, o: Dd) -> Dd {
        // Long division: three quotient terms cover double-double accuracy.
        let q1 = self.hi / o.hi;
        let r1 = self.sub(o.mul(Dd::from_f64(q1)));
        let q2 = r1.hi / o.hi;
        let r2 = r1.sub(o.mul(Dd::from_f64(q2)));
        let q3 = r2.hi / o.hi;
        quick_two_sum(q1, q2).add(Dd::from_f64(q3))
    }

    pub fn sqrt(self) -> Dd {
        // One Newton correction of the f64 root: y + (x − y²)/(2y).
        let y = Dd::from_f64(self.hi.sqrt());
        let diff = self.sub(y.mul(y));
        y.add(diff.div(y.add(y)))
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// s(A, M) = ((2A + M² − M·√(M² + 4A))/2)^{−1/2}, evaluated in
/// double-double arithmetic.
pub fn oracle_s(a: f64, m: f64) -> f64 {
    let a = Dd::from_f64(a);
    let m = Dd::from_f64(m);
    let disc = m.mul(m).add(Dd::from_f64(4.0).mul(a)).sqrt();
    let inner = Dd::from_f64(2.0)
        .mul(a)
        .add(m.mul(m))
        .sub(m.mul(disc))
        .div(Dd::from_f64(2.0));
    Dd::from_f64(1.0).div(inner.sqrt()).to_f64()
}

/// η(s, 1, Y) = s + (8s/(π(1−s)))·Y for α = 1, with s itself carried in
/// double-double from the same (A, M) inputs.
pub fn oracle_eta_alpha1(a: f64, m: f64, y: u32) -> f64 {
    let a = Dd::from_f64(a);
    let m = Dd::from_f64(m);
    let disc = m.mul(m).add(Dd::from_f64(4.0).mul(a)).sqrt();
    let inner = Dd::from_f64(2.0)
        .mul(a)
        .add(m.mul(m))
        .sub(m.mul(disc))
        .div(Dd::from_f64(2.0));
    let s = Dd::from_f64(1.0).div(inner.sqrt());
    let one_minus = Dd::from_f64(1.0).sub(s);
    let tail = Dd::from_f64(8.0)
        .mul(s)
        .div(Dd::pi().mul(one_minus))
        .mul(Dd::from_f64(y as f64));
    s.add(tail).to_f64()
}

/// Runs the compiled binary with the given arguments.
pub fn run_bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pwdyn"))
        .args(args)
        .output()
        .expect("binary launches")
}

pub fn exit_code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

/// A fresh scratch directory under the system temp dir, unique per test name
/// and process, removed if left over from a previous run.
pub fn fresh_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("pwdyn-test-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).expect("create scratch dir");
    dir
}

pub fn read(path: &std::path::Path) -> String {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}
