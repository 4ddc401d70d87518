//! Built-in example systems: a quadratic-strips family (430 parabolic pieces
//! with strong expansion) and a linear-strips family φ_n(u,v) = a·v + b·u − 2nL,
//! together with the screening constant for the linear family, piece-index
//! bookkeeping, the closed-form inverse-branch algebra their transfer
//! operators use, and machine-checkable ground-truth facts.

use crate::map_model::{
    Branch, Constraint, Family, MapError, Piece, PiecewiseMapSpec, Point,
};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GalleryError {
    #[error(
        "(a, b) = ({a}, {b}) rejected: need |a| < (|b| − S)/√S = {bound} with S = {s_constant}"
    )]
    NotAdmissible {
        a: i64,
        b: i64,
        bound: f64,
        s_constant: f64,
    },
    #[error("(a, b) = ({a}, {b}) sits within the guard band of the bound {bound}; not classified")]
    Borderline { a: i64, b: i64, bound: f64 },
    #[error("invalid example parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExampleId {
    Nonlinear,
    Linear { a: i64, b: i64, l: f64 },
}

// ---------------------------------------------------------------------------
// Quadratic-strips family
// ---------------------------------------------------------------------------

/// Built-in coefficients: f_k(u) = −(71/2)u² − 214u + k − 1/2 on [-1, 1]².
pub const QUAD_C2: f64 = -35.5;
pub const QUAD_C1: f64 = -214.0;
pub const QUAD_K_MIN: i64 = -179;
pub const QUAD_K_MAX: i64 = 250;

/// Separator graph f_k(u) = c2·u² + c1·u + k − 1/2.
pub fn quad_f(c2: f64, c1: f64, k: i64, u: f64) -> f64 {
    c2 * u * u + c1 * u + (k as f64) - 0.5
}

/// General quadratic-strips builder. Pieces are the open sets
/// {(u,v) ∈ (−L,L)²: f_k(u) < v < f_{k+1}(u)} with branches
/// φ_k(u,v) = 2v − 2f_k(u) − 1. The u-derivative magnitude 2|2c2·u + c1|
/// must stay positive on the collar [−L−ε₁, L+ε₁].
pub fn build_quadratic_family(
    c2: f64,
    c1: f64,
    k_min: i64,
    k_max: i64,
    l: f64,
    alpha: f64,
    eps1: f64,
    arc_crossings: u32,
) -> Result<PiecewiseMapSpec, GalleryError> {
    if k_min > k_max {
        return Err(GalleryError::InvalidParams(format!(
            "empty piece range: k_min = {k_min} > k_max = {k_max}"
        )));
    }
    if !c2.is_finite() || !c1.is_finite() {
        return Err(GalleryError::InvalidParams(
            "quadratic coefficients must be finite".into(),
        ));
    }
    // |∂φ/∂u| = 2|2c2·u + c1| is monotone in u; it degenerates if the line
    // 2c2·u + c1 crosses zero inside the collar.
    let collar_lo = -l - eps1;
    let collar_hi = l + eps1;
    let d_lo = 2.0 * c2 * collar_lo + c1;
    let d_hi = 2.0 * c2 * collar_hi + c1;
    if d_lo == 0.0 || d_hi == 0.0 || (d_lo < 0.0) != (d_hi < 0.0) {
        return Err(GalleryError::InvalidParams(format!(
            "∂φ/∂u vanishes on the collar: 2·c2·u + c1 spans [{d_lo}, {d_hi}]"
        )));
    }
    let declared_a = 2.0 * d_lo.abs().min(d_hi.abs());
    let declared_m = 2.0;
    let holder_c = (4.0 * c2).abs();

    let mut pieces = Vec::with_capacity((k_max - k_min + 1) as usize);
    for k in k_min..=k_max {
        let membership = vec![
            Constraint::new(move |u, _| u - l, |_, _| (1.0, 0.0)),
            Constraint::new(move |u, _| -u - l, |_, _| (-1.0, 0.0)),
            Constraint::new(move |_, v| v - l, |_, _| (0.0, 1.0)),
            Constraint::new(move |_, v| -v - l, |_, _| (0.0, -1.0)),
            // below the upper separator: v < f_{k+1}(u)
            Constraint::new(
                move |u, v| v - quad_f(c2, c1, k + 1, u),
                move |u, _| (-(2.0 * c2 * u + c1), 1.0),
            ),
            // above the lower separator: f_k(u) < v
            Constraint::new(
                move |u, v| quad_f(c2, c1, k, u) - v,
                move |u, _| (2.0 * c2 * u + c1, -1.0),
            ),
        ];
        let branch = Branch {
            value: Arc::new(move |u, v| 2.0 * v - 2.0 * quad_f(c2, c1, k, u) - 1.0),
            gradient: Arc::new(move |u, _| (-2.0 * (2.0 * c2 * u + c1), 2.0)),
            declared_a,
            declared_m,
            holder_c,
        };
        pieces.push(Piece {
            index: k,
            membership,
            branch,
        });
    }

    let spec = PiecewiseMapSpec::new(
        l,
        alpha,
        eps1,
        arc_crossings,
        pieces,
        Family::QuadraticStrips { c2, c1 },
    )?;
    let n = (k_max - k_min + 1) as usize;
    Ok(spec.with_locator(Arc::new(move |u, v| {
        // Between the separators f_k < v < f_{k+1} iff k < w < k+1 where
        // w = v − c2·u² − c1·u + 1/2, so the candidate is floor(w).
        let w = v - c2 * u * u - c1 * u + 0.5;
        let k = w.floor();
        if k >= k_min as f64 && k <= k_max as f64 {
            let idx = (k as i64 - k_min) as usize;
            (idx < n).then_some(idx)
        } else {
            None
        }
    })))
}

/// The fixed strongly expanding quadratic example: 430 pieces, A = 144,
/// M = 2, γ = 1/12, Hölder constant 142, collar radius 1, Y = 3.
pub fn build_nonlinear() -> PiecewiseMapSpec {
    build_quadratic_family(QUAD_C2, QUAD_C1, QUAD_K_MIN, QUAD_K_MAX, 1.0, 1.0, 1.0, 3)
        .expect("built-in quadratic family must construct")
}

// ---------------------------------------------------------------------------
// Linear-strips family
// ---------------------------------------------------------------------------

/// Screening constant S = 1 + 48/π + 288/π² + (4/π)(1 + 12/π)·√(6π + 36) ≈ 90.9.
pub fn admissibility_constant() -> f64 {
    let pi = std::f64::consts::PI;
    1.0 + 48.0 / pi
        + 288.0 / (pi * pi)
        + (4.0 / pi) * (1.0 + 12.0 / pi) * (6.0 * pi + 36.0).sqrt()
}

/// The |a|-threshold (|b| − S)/√S for the pair (a, b).
pub fn admissibility_bound(b: i64) -> f64 {
    let s = admissibility_constant();
    (b.unsigned_abs() as f64 - s) / s.sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Admissibility {
    Admissible,
    /// |a| within the 1e-12 relative guard band of the bound: S is
    /// irrational, so a verdict this close to the threshold would rest on
    /// the last bits of its floating-point evaluation.
    Borderline,
    NotAdmissible,
}

pub fn admissibility(a: i64, b: i64) -> Admissibility {
    let bound = admissibility_bound(b);
    let m = a.unsigned_abs() as f64;
    let band = 1e-12 * bound.abs().max(1.0);
    if m < bound - band {
        Admissibility::Admissible
    } else if m > bound + band {
        Admissibility::NotAdmissible
    } else {
        Admissibility::Borderline
    }
}

/// Integers n whose boundary line a·v + b·u = (2n−1)L meets the closed
/// square, i.e. the closed interval (1−|a|−|b|)/2 ≤ n ≤ (|a|+|b|+1)/2.
pub fn index_range(a: i64, b: i64) -> std::ops::RangeInclusive<i64> {
    let s = (a.unsigned_abs() + b.unsigned_abs()) as i64;
    // ceil((1 − s)/2) and floor((s + 1)/2) in integer arithmetic.
    let lo = -((s - 1).div_euclid(2));
    let hi = (s + 1).div_euclid(2);
    lo..=hi
}

/// Integers n for which the open strip (2n−1)L < a·v + b·u < (2n+1)L meets
/// the open square with positive area: |n| < (|a|+|b|+1)/2. This is one
/// tighter on each side than `index_range` whenever a boundary line only
/// grazes a corner of the square.
pub fn piece_indices(a: i64, b: i64) -> std::ops::RangeInclusive<i64> {
    let s = (a.unsigned_abs() + b.unsigned_abs()) as i64;
    let n_max = s.div_euclid(2);
    -n_max..=n_max
}

fn validate_linear_params(a: i64, b: i64, l: f64) -> Result<(), GalleryError> {
    if a == 0 || b == 0 {
        return Err(GalleryError::InvalidParams(format!(
            "a and b must be nonzero integers, got ({a}, {b})"
        )));
    }
    let twice = 2.0 * l;
    if !(l > 0.0) || !l.is_finite() || twice != twice.round() {
        return Err(GalleryError::InvalidParams(format!(
            "L must be a positive integer or half-integer, got {l}"
        )));
    }
    Ok(())
}

/// Linear-strips builder that screens (a, b) against the admissibility bound
/// first. Use `build_linear_unchecked` to construct a rejected pair anyway
/// (e.g. to report its constants).
pub fn build_linear(a: i64, b: i64, l: f64) -> Result<PiecewiseMapSpec, GalleryError> {
    validate_linear_params(a, b, l)?;
    match admissibility(a, b) {
        Admissibility::Admissible => build_linear_unchecked(a, b, l),
        Admissibility::Borderline => Err(GalleryError::Borderline {
            a,
            b,
            bound: admissibility_bound(b),
        }),
        Admissibility::NotAdmissible => Err(GalleryError::NotAdmissible {
            a,
            b,
            bound: admissibility_bound(b),
            s_constant: admissibility_constant(),
        }),
    }
}

/// Constructs the linear-strips map without the admissibility screen
/// (parameters are still validated). Collar radius is L/2, Y = 3, α = 1.
pub fn build_linear_unchecked(a: i64, b: i64, l: f64) -> Result<PiecewiseMapSpec, GalleryError> {
    validate_linear_params(a, b, l)?;
    let af = a as f64;
    let bf = b as f64;
    let mut pieces = Vec::new();
    for n in piece_indices(a, b) {
        let nf = n as f64;
        let membership = vec![
            Constraint::new(move |u, _| u - l, |_, _| (1.0, 0.0)),
            Constraint::new(move |u, _| -u - l, |_, _| (-1.0, 0.0)),
            Constraint::new(move |_, v| v - l, |_, _| (0.0, 1.0)),
            Constraint::new(move |_, v| -v - l, |_, _| (0.0, -1.0)),
            Constraint::new(
                move |u, v| (2.0 * nf - 1.0) * l - (af * v + bf * u),
                move |_, _| (-bf, -af),
            ),
            Constraint::new(
                move |u, v| (af * v + bf * u) - (2.0 * nf + 1.0) * l,
                move |_, _| (bf, af),
            ),
        ];
        let branch = Branch {
            value: Arc::new(move |u, v| af * v + bf * u - 2.0 * nf * l),
            gradient: Arc::new(move |_, _| (bf, af)),
            declared_a: bf.abs(),
            declared_m: af.abs(),
            holder_c: 0.0,
        };
        pieces.push(Piece {
            index: n,
            membership,
            branch,
        });
    }
    let n_min = *piece_indices(a, b).start();
    let count = pieces.len();
    let spec = PiecewiseMapSpec::new(
        l,
        1.0,
        0.5 * l,
        3,
        pieces,
        Family::LinearStrips { a, b },
    )?;
    Ok(spec.with_locator(Arc::new(move |u, v| {
        let n = ((af * v + bf * u) / (2.0 * l)).round();
        let idx = n as i64 - n_min;
        (idx >= 0 && (idx as usize) < count).then_some(idx as usize)
    })))
}

// ---------------------------------------------------------------------------
// Closed-form inverse-branch algebra (built-in coefficients)
// ---------------------------------------------------------------------------

/// Position of an Ω-point relative to the two lines y = (2x ± 1)/12 that
/// split Ω into the three regions with different preimage-branch ranges,
/// encoded by z = x − 6y. `None` on the dividing lines themselves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuadRegion {
    /// z ∈ (−3/2, −1/2): above the upper line.
    High,
    /// z ∈ (−1/2, 1/2): between the lines.
    Mid,
    /// z ∈ (1/2, 3/2): below the lower line.
    Low,
}

pub fn quad_region(x: f64, y: f64) -> Option<QuadRegion> {
    let z = x - 6.0 * y;
    if z > -1.5 && z < -0.5 {
        Some(QuadRegion::High)
    } else if z > -0.5 && z < 0.5 {
        Some(QuadRegion::Mid)
    } else if z > 0.5 && z < 1.5 {
        Some(QuadRegion::Low)
    } else {
        None
    }
}

/// Inclusive branch-index window (a, b) for the region: exactly the k for
/// which the preimage abscissa (−214 + √Ψ_k)/71 lands inside (−1, 1).
pub fn quad_k_window(region: QuadRegion) -> (i64, i64) {
    match region {
        QuadRegion::High => (-179, 248),
        QuadRegion::Mid => (-178, 249),
        QuadRegion::Low => (-177, 250),
    }
}

/// Ψ_k(x, y) = 214² − 71(2x − 12y) + 142k.
pub fn quad_psi(k: i64, x: f64, y: f64) -> f64 {
    45796.0 - 71.0 * (2.0 * x - 12.0 * y) + 142.0 * (k as f64)
}

/// Preimage of (x, y) ∈ Ω under branch k: ((−214 + √Ψ_k)/71, x/12).
pub fn quad_branch_preimage(k: i64, x: f64, y: f64) -> Point {
    let psi = quad_psi(k, x, y);
    Point::new((-214.0 + psi.sqrt()) / 71.0, x / 12.0)
}

/// Preimage of (x, y) ∈ Ω under linear branch n:
/// ((√|b|·y − a·x + 2nL)/b, x/√|b|).
pub fn linear_branch_preimage(a: i64, b: i64, l: f64, n: i64, x: f64, y: f64) -> Point {
    let sqrt_b = (b.unsigned_abs() as f64).sqrt();
    Point::new(
        (sqrt_b * y - (a as f64) * x + 2.0 * (n as f64) * l) / (b as f64),
        x / sqrt_b,
    )
}

// ---------------------------------------------------------------------------
// Ground-truth facts consumed by the regression suite
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub enum Fact {
    /// Declared constants of the example.
    Constants {
        a: f64,
        m: f64,
        gamma: f64,
        alpha: f64,
        arc_crossings: u32,
    },
    /// Number of pieces the builder produces.
    PieceCount(usize),
    /// Whether the invariant density is constant on Ω.
    ConstantInvariantDensity(bool),
    /// The contraction factor η is expected below 1.
    EtaBelowOne,
    /// Applying the transfer operator to the constant 1 gives a function
    /// strictly increasing in z = x − 6y on the region z ∈ (z_lo, z_hi).
    PfOfOneIncreasingInZ { z_lo: f64, z_hi: f64 },
    /// Boundary lines meet the square exactly for indices lo..=hi.
    IndexRange { lo: i64, hi: i64 },
}

pub fn ground_truth_facts(id: &ExampleId) -> Vec<Fact> {
    match *id {
        ExampleId::Nonlinear => vec![
            Fact::Constants {
                a: 144.0,
                m: 2.0,
                gamma: 1.0 / 12.0,
                alpha: 1.0,
                arc_crossings: 3,
            },
            Fact::PieceCount(430),
            Fact::ConstantInvariantDensity(false),
            Fact::EtaBelowOne,
            Fact::PfOfOneIncreasingInZ {
                z_lo: -1.5,
                z_hi: -0.5,
            },
        ],
        ExampleId::Linear { a, b, .. } => {
            let range = index_range(a, b);
            vec![
                Fact::Constants {
                    a: b.unsigned_abs() as f64,
                    m: a.unsigned_abs() as f64,
                    gamma: 1.0 / (b.unsigned_abs() as f64).sqrt(),
                    alpha: 1.0,
                    arc_crossings: 3,
                },
                Fact::PieceCount(piece_indices(a, b).count()),
                Fact::ConstantInvariantDensity(true),
                Fact::EtaBelowOne,
                Fact::IndexRange {
                    lo: *range.start(),
                    hi: *range.end(),
                },
            ]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map_model::{induce, iterate_process};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn screening_constant_value() {
        // High-precision reference: 90.907146659479...
        let s = admissibility_constant();
        assert!((s - 90.9071).abs() < 0.01, "S = {s}");
    }

    #[test]
    fn admissibility_examples() {
        assert_eq!(admissibility(1, 101), Admissibility::Admissible);
        let bound = admissibility_bound(101);
        assert!(bound > 1.0 && bound < 1.1, "bound = {bound}");
        // (|b| − S)/√S < 0 for b = 50.
        assert_eq!(admissibility(1, 50), Admissibility::NotAdmissible);
        assert!(admissibility_bound(50) < 0.0);
    }

    #[test]
    fn index_range_examples() {
        assert_eq!(index_range(1, 101), -50..=51);
        assert_eq!(index_range(1, 1), 0..=1);
        assert_eq!(piece_indices(1, 101), -51..=51);
        assert_eq!(piece_indices(1, 1), -1..=1);
    }

    #[test]
    fn nonlinear_piece_count_and_constants() {
        let spec = build_nonlinear();
        assert_eq!(spec.pieces.len(), 430);
        assert_eq!(spec.min_declared_a(), 144.0);
        assert_eq!(spec.max_declared_m(), 2.0);
        assert_eq!(spec.pieces[0].branch.holder_c, 142.0);
        let sys = induce(Arc::new(spec)).unwrap();
        assert_eq!(sys.gamma, 1.0 / 12.0);
    }

    #[test]
    fn separators_differ_by_one_exactly() {
        for &u in &[-1.0, -0.3, 0.0, 0.7, 1.0] {
            for k in [-179, 0, 250] {
                let diff = quad_f(QUAD_C2, QUAD_C1, k + 1, u) - quad_f(QUAD_C2, QUAD_C1, k, u);
                assert_eq!(diff, 1.0);
            }
        }
    }

    #[test]
    fn nonlinear_locator_agrees_with_scan() {
        let spec = build_nonlinear();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20_000 {
            let u = rng.gen_range(-1.0..1.0);
            let v = rng.gen_range(-1.0..1.0);
            let by_locator = spec.locate(u, v);
            let by_scan = spec.pieces.iter().position(|p| p.contains(u, v));
            assert_eq!(by_locator, by_scan, "at ({u}, {v})");
        }
    }

    #[test]
    fn nonlinear_orbits_stay_in_the_square() {
        let spec = build_nonlinear();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let x0 = rng.gen_range(-1.0..1.0);
            let x1 = rng.gen_range(-1.0..1.0);
            match iterate_process(&spec, x0, x1, 1000) {
                Ok(xs) => assert!(xs.iter().all(|x| x.abs() <= 1.0)),
                Err(MapError::Halted { .. }) => {} // measure-zero boundary hit
                Err(e) => panic!("unexpected error: {e}"),
            }
        }
    }

    #[test]
    fn linear_builder_screens_admissibility() {
        assert!(build_linear(1, 101, 1.0).is_ok());
        match build_linear(1, 50, 1.0) {
            Err(GalleryError::NotAdmissible { bound, .. }) => assert!(bound < 0.0),
            other => panic!("expected NotAdmissible, got {other:?}"),
        }
        // Unchecked construction still works for the rejected pair.
        let spec = build_linear_unchecked(1, 50, 1.0).unwrap();
        assert_eq!(spec.pieces.len(), piece_indices(1, 50).count());
    }

    #[test]
    fn linear_param_validation() {
        assert!(matches!(
            build_linear(0, 101, 1.0),
            Err(GalleryError::InvalidParams(_))
        ));
        assert!(matches!(
            build_linear(1, 101, 0.75),
            Err(GalleryError::InvalidParams(_))
        ));
        assert!(build_linear(1, 101, 1.5).is_ok());
    }

    #[test]
    fn linear_locator_agrees_with_scan() {
        let spec = build_linear(1, 101, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20_000 {
            let u = rng.gen_range(-1.0..1.0);
            let v = rng.gen_range(-1.0..1.0);
            assert_eq!(
                spec.locate(u, v),
                spec.pieces.iter().position(|p| p.contains(u, v)),
                "at ({u}, {v})"
            );
        }
    }

    #[test]
    fn linear_branch_maps_strip_into_square() {
        let spec = build_linear(1, 101, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut hits = 0;
        while hits < 5_000 {
            let u = rng.gen_range(-1.0..1.0);
            let v = rng.gen_range(-1.0..1.0);
            if let Some(i) = spec.locate(u, v) {
                hits += 1;
                let val = (spec.pieces[i].branch.value)(u, v);
                assert!(val.abs() < 1.0, "φ({u}, {v}) = {val} escapes");
            }
        }
    }

    #[test]
    fn quad_region_windows() {
        assert_eq!(quad_region(-0.9, 0.05), Some(QuadRegion::High)); // z = -1.2
        assert_eq!(quad_region(0.0, 0.0), Some(QuadRegion::Mid));
        assert_eq!(quad_region(0.9, -0.05), Some(QuadRegion::Low)); // z = 1.2
        assert_eq!(quad_region(0.5, 0.0), None); // exactly on a line
        assert_eq!(quad_k_window(QuadRegion::High), (-179, 248));
        assert_eq!(quad_k_window(QuadRegion::Mid), (-178, 249));
        assert_eq!(quad_k_window(QuadRegion::Low), (-177, 250));
    }

    #[test]
    fn quad_preimage_window_matches_membership() {
        // The k-window of each region must be exactly the set of k whose
        // preimage abscissa lands in (−1, 1).
        let probes = [
            (-0.7, 0.05, QuadRegion::High),
            (0.2, 0.03, QuadRegion::Mid),
            (0.8, -0.04, QuadRegion::Low),
        ];
        for &(x, y, reg) in &probes {
            assert_eq!(quad_region(x, y), Some(reg));
            let (lo, hi) = quad_k_window(reg);
            for k in (lo - 2)..=(hi + 2) {
                let psi = quad_psi(k, x, y);
                let inside = psi > 0.0 && {
                    let xp = quad_branch_preimage(k, x, y).x;
                    xp > -1.0 && xp < 1.0
                };
                assert_eq!(
                    inside,
                    k >= lo && k <= hi,
                    "branch {k} at ({x}, {y}) in {reg:?}"
                );
            }
        }
    }

    #[test]
    fn quad_preimage_is_a_right_inverse() {
        let spec = build_nonlinear();
        let sys = induce(Arc::new(spec)).unwrap();
        let pts = [(-0.7, 0.05), (0.2, 0.03), (0.8, -0.04), (0.0, 0.0)];
        for &(x, y) in &pts {
            let reg = quad_region(x, y).unwrap();
            let (lo, hi) = quad_k_window(reg);
            for k in [lo, (lo + hi) / 2, hi] {
                let pre = quad_branch_preimage(k, x, y);
                let img = sys.step(pre).unwrap();
                assert!(
                    (img.x - x).abs() < 1e-9 && (img.y - y).abs() < 1e-9,
                    "branch {k}: T({pre:?}) = {img:?} ≠ ({x}, {y})"
                );
            }
        }
    }

    #[test]
    fn linear_preimage_is_a_right_inverse() {
        let spec = build_linear(1, 101, 1.0).unwrap();
        let sys = induce(Arc::new(spec)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut checked = 0;
        while checked < 2_000 {
            let x = rng.gen_range(-1.0..1.0);
            let y = rng.gen_range(-sys.omega.y1..sys.omega.y1);
            let n = rng.gen_range(-51..=51);
            let pre = linear_branch_preimage(1, 101, 1.0, n, x, y);
            if pre.x.abs() < 1.0 - 1e-9 {
                checked += 1;
                let img = sys.step(pre).unwrap();
                assert!(
                    (img.x - x).abs() < 1e-9 && (img.y - y).abs() < 1e-9,
                    "branch {n}: T({pre:?}) = {img:?} ≠ ({x}, {y})"
                );
            }
        }
    }

    #[test]
    fn facts_cover_both_examples() {
        let nf = ground_truth_facts(&ExampleId::Nonlinear);
        assert!(nf.contains(&Fact::PieceCount(430)));
        assert!(nf.contains(&Fact::ConstantInvariantDensity(false)));
        let lf = ground_truth_facts(&ExampleId::Linear {
            a: 1,
            b: 101,
            l: 1.0,
        });
        assert!(lf.contains(&Fact::IndexRange { lo: -50, hi: 51 }));
        assert!(lf.contains(&Fact::ConstantInvariantDensity(true)));
        assert!(lf.contains(&Fact::PieceCount(103)));
    }
}
