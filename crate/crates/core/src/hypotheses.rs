//! Constants and verification checks for piecewise expanding maps.
//!
//! Computes the contraction data (A, M, γ, s, η) and runs randomized
//! falsification checks of the structural requirements: piece disjointness
//! and coverage, boundary-arc regularity, branch definedness on collars,
//! derivative bounds, gradient Hölder continuity, the horizontal-segment
//! condition, and the two expansion (dilatance) tests for the induced system.
//!
//! Sampled checks report `SampledPass`, never a proof. Strict inequalities
//! are tested with a relative slack of 1e-9 because natural examples sit
//! exactly on their bounds (constant-gradient branches attain |∂φ/∂u| = A,
//! and the minimum eigenvalue of the expansion matrix B equals 1/s² exactly
//! for them), so an exact comparison would fail on rounding noise alone.

use crate::map_model::{induce, InducedSystem, MapError, PiecewiseMapSpec, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HypError {
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error(transparent)]
    Map(#[from] MapError),
}

/// s = ((2A + M² − M·√(M² + 4A))/2)^{−1/2}; requires A > 1 and 0 ≤ M < A−1,
/// which guarantees s < 1.
pub fn compute_s(a: f64, m: f64) -> Result<f64, HypError> {
    if !(a > 1.0) {
        return Err(HypError::InvalidBounds(format!("need A > 1, got A = {a}")));
    }
    if !(m >= 0.0) || !(m < a - 1.0) {
        return Err(HypError::InvalidBounds(format!(
            "need 0 <= M < A − 1, got M = {m}, A = {a}"
        )));
    }
    let inner = (2.0 * a + m * m - m * (m * m + 4.0 * a).sqrt()) / 2.0;
    Ok(1.0 / inner.sqrt())
}

/// η = s^α + (8s/(π(1−s)))·Y; the contraction is useful only when η < 1.
pub fn compute_eta(s: f64, alpha: f64, y: u32) -> Result<f64, HypError> {
    if !(s > 0.0 && s < 1.0) {
        return Err(HypError::InvalidBounds(format!(
            "need 0 < s < 1, got s = {s}"
        )));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(HypError::InvalidBounds(format!(
            "need alpha in (0, 1], got {alpha}"
        )));
    }
    if y == 0 {
        return Err(HypError::InvalidBounds("need Y >= 1".into()));
    }
    Ok(s.powf(alpha) + 8.0 * s / (std::f64::consts::PI * (1.0 - s)) * (y as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckStatus {
    /// Established by direct evaluation of a closed-form condition.
    Pass,
    /// No counterexample found by randomized sampling.
    SampledPass,
    Fail,
}

impl CheckStatus {
    fn as_str(self) -> &'static str {
        match self {
            CheckStatus::Pass => "pass",
            CheckStatus::SampledPass => "sampled-pass",
            CheckStatus::Fail => "fail",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Witness {
    pub point: (f64, f64),
    pub partner: Option<(f64, f64)>,
    pub piece: Option<i64>,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub id: &'static str,
    pub status: CheckStatus,
    pub samples: usize,
    pub witnesses: Vec<Witness>,
    pub note: String,
}

impl CheckOutcome {
    fn sampled(id: &'static str, samples: usize, witnesses: Vec<Witness>, note: String) -> Self {
        let status = if witnesses.is_empty() {
            CheckStatus::SampledPass
        } else {
            CheckStatus::Fail
        };
        CheckOutcome {
            id,
            status,
            samples,
            witnesses,
            note,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckConfig {
    /// Sample budget per piece for each sampled check.
    pub samples_per_piece: usize,
    /// Uniform samples of the whole square for disjointness/coverage.
    pub global_samples: usize,
    /// Boundary points probed per (piece, constraint) for arc regularity.
    pub boundary_points: usize,
    /// Interior probes along each tested segment.
    pub segment_probes: usize,
    /// Fallback probes in the ε₁-disc around a segment point before failing.
    pub disc_probes: usize,
    pub seed: u64,
    /// Relative slack applied to strict inequalities.
    pub rel_slack: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            samples_per_piece: 10_000,
            global_samples: 100_000,
            boundary_points: 20,
            segment_probes: 9,
            disc_probes: 32,
            seed: 20240601,
            rel_slack: 1e-9,
        }
    }
}

#[derive(Clone, Debug)]
pub struct HypothesisReport {
    pub a: f64,
    pub m: f64,
    pub gamma: f64,
    pub s: Option<f64>,
    pub eta: Option<f64>,
    pub alpha: f64,
    pub arc_crossings: u32,
    pub checks: Vec<CheckOutcome>,
    pub overall_pass: bool,
}

impl HypothesisReport {
    /// Stable-order text rendering: constants first, one record per check,
    /// then the overall verdict.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "A={}", self.a);
        let _ = writeln!(out, "M={}", self.m);
        let _ = writeln!(out, "gamma={}", self.gamma);
        match self.s {
            Some(s) => {
                let _ = writeln!(out, "s={s}");
            }
            None => {
                let _ = writeln!(out, "s=undefined");
            }
        }
        match self.eta {
            Some(e) => {
                let _ = writeln!(out, "eta={e}");
            }
            None => {
                let _ = writeln!(out, "eta=undefined");
            }
        }
        let _ = writeln!(out, "alpha={}", self.alpha);
        let _ = writeln!(out, "Y={}", self.arc_crossings);
        for c in &self.checks {
            let _ = writeln!(
                out,
                "check id={} status={} samples={} witnesses={}{}",
                c.id,
                c.status.as_str(),
                c.samples,
                c.witnesses.len(),
                if c.note.is_empty() {
                    String::new()
                } else {
                    format!(" note={}", c.note)
                }
            );
            for w in c.witnesses.iter().take(5) {
                let piece = w
                    .piece
                    .map(|p| p.to_string())
                    .unwrap_or_else(|| "-".into());
                let partner = w
                    .partner
                    .map(|(x, y)| format!("({x},{y})"))
                    .unwrap_or_else(|| "-".into());
                let _ = writeln!(
                    out,
                    "  witness piece={piece} point=({},{}) partner={partner} detail={}",
                    w.point.0, w.point.1, w.detail
                );
            }
        }
        let _ = writeln!(
            out,
            "overall={}",
            if self.overall_pass { "pass" } else { "fail" }
        );
        out
    }
}

// ---------------------------------------------------------------------------
// Interior sampling
// ---------------------------------------------------------------------------

/// Uniform sampler over one piece: a coarse scan finds the u-bins whose
/// vertical section is nonempty, then rejection sampling over
/// (alive bins) × (−L, L) — the proposal is uniform over a superset of the
/// piece, so accepted points are uniform over the piece itself. Pieces
/// thinner than the scan lattice in every column are never hit and make the
/// sampler empty, which the checks surface as an explicit failure.
struct PieceSampler {
    alive: Vec<f64>, // left edges of alive bins
    bin_width: f64,
    l: f64,
}

const SCAN_BINS: usize = 2048;
const SCAN_PROBES: usize = 33;
const SAMPLE_TRIES: usize = 400;

impl PieceSampler {
    fn build(spec: &PiecewiseMapSpec, piece_idx: usize) -> Self {
        let l = spec.l;
        let piece = &spec.pieces[piece_idx];
        let bin_width = 2.0 * l / SCAN_BINS as f64;
        let mut alive = Vec::new();
        for i in 0..SCAN_BINS {
            let u = -l + (i as f64 + 0.5) * bin_width;
            let hit = (0..SCAN_PROBES).any(|j| {
                let v = -l + (j as f64 + 0.5) * (2.0 * l / SCAN_PROBES as f64);
                piece.contains(u, v)
            });
            if hit {
                alive.push(-l + i as f64 * bin_width);
            }
        }
        PieceSampler {
            alive,
            bin_width,
            l,
        }
    }

    fn sample(&self, spec: &PiecewiseMapSpec, piece_idx: usize, rng: &mut ChaCha8Rng) -> Option<(f64, f64)> {
        if self.alive.is_empty() {
            return None;
        }
        let piece = &spec.pieces[piece_idx];
        for _ in 0..SAMPLE_TRIES {
            let lo = self.alive[rng.gen_range(0..self.alive.len())];
            let u = lo + rng.gen::<f64>() * self.bin_width;
            let v = rng.gen_range(-self.l..self.l);
            if piece.contains(u, v) {
                return Some((u, v));
            }
        }
        None
    }
}

fn build_samplers(spec: &PiecewiseMapSpec) -> Vec<PieceSampler> {
    (0..spec.pieces.len())
        .into_par_iter()
        .map(|i| PieceSampler::build(spec, i))
        .collect()
}

fn disc_offset(rng: &mut ChaCha8Rng, r: f64) -> (f64, f64) {
    let theta = rng.gen::<f64>() * std::f64::consts::TAU;
    let rad = r * rng.gen::<f64>().sqrt();
    (rad * theta.cos(), rad * theta.sin())
}

fn cap_witnesses(mut per_piece: Vec<Vec<Witness>>) -> Vec<Witness> {
    let mut all: Vec<Witness> = per_piece.drain(..).flatten().collect();
    all.truncate(20);
    all
}

fn no_sample_witness(spec: &PiecewiseMapSpec, idx: usize) -> Witness {
    Witness {
        point: (f64::NAN, f64::NAN),
        partner: None,
        piece: Some(spec.pieces[idx].index),
        detail: "piece interior not located by the support scan; cannot sample".into(),
    }
}

// ---------------------------------------------------------------------------
// Individual checks
// ---------------------------------------------------------------------------

/// Disjointness and coverage in one sampling pass over the square:
/// every uniform sample must belong to exactly one piece (membership counted
/// by full scan, ignoring the locator). Returns (disjointness, coverage).
pub fn check_partition(spec: &PiecewiseMapSpec, samples: usize, seed: u64) -> (CheckOutcome, CheckOutcome) {
    let chunk = 4096usize;
    let chunks = samples.div_ceil(chunk);
    let results: Vec<(usize, Vec<Witness>, Vec<Witness>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let n = chunk.min(samples - c * chunk);
            let mut overlap = Vec::new();
            let mut uncovered = Vec::new();
            for _ in 0..n {
                let u = rng.gen_range(-spec.l..spec.l);
                let v = rng.gen_range(-spec.l..spec.l);
                let mut count = 0u32;
                let mut first = None;
                let mut second = None;
                for p in &spec.pieces {
                    if p.contains(u, v) {
                        count += 1;
                        if first.is_none() {
                            first = Some(p.index);
                        } else if second.is_none() {
                            second = Some(p.index);
                        }
                    }
                }
                if count > 1 {
                    overlap.push(Witness {
                        point: (u, v),
                        partner: None,
                        piece: first,
                        detail: format!(
                            "belongs to {count} pieces (first two: {:?}, {:?})",
                            first, second
                        ),
                    });
                }
                if count == 0 {
                    uncovered.push(Witness {
                        point: (u, v),
                        partner: None,
                        piece: None,
                        detail: "belongs to no piece".into(),
                    });
                }
            }
            (n, overlap, uncovered)
        })
        .collect();

    let mut overlap = Vec::new();
    let mut uncovered = Vec::new();
    let mut total = 0;
    for (n, o, u) in results {
        total += n;
        overlap.extend(o);
        uncovered.extend(u);
    }
    let disjoint = CheckOutcome::sampled("H1.disjoint", total, {
        let mut o = overlap;
        o.truncate(20);
        o
    }, String::new());
    // A uniform sample has probability zero of landing on the measure-zero
    // boundary set, but rounding can park one there; tolerate a couple.
    let note = format!("{} uncovered of {}", uncovered.len(), total);
    let cover = if uncovered.len() <= 2 {
        CheckOutcome {
            id: "H1.cover",
            status: CheckStatus::SampledPass,
            samples: total,
            witnesses: Vec::new(),
            note,
        }
    } else {
        let mut w = uncovered;
        w.truncate(20);
        CheckOutcome {
            id: "H1.cover",
            status: CheckStatus::Fail,
            samples: total,
            witnesses: w,
            note,
        }
    };
    (disjoint, cover)
}

/// Boundary arcs are non-degenerate: walks from interior samples along each
/// constraint's gradient to bracket its zero level, bisects, and requires a
/// nonvanishing gradient at the located boundary point.
pub fn check_boundary_arcs(spec: &PiecewiseMapSpec, points: usize, seed: u64) -> CheckOutcome {
    let samplers = build_samplers(spec);
    check_boundary_arcs_with(spec, &samplers, points, seed)
}

fn check_boundary_arcs_with(
    spec: &PiecewiseMapSpec,
    samplers: &[PieceSampler],
    points: usize,
    seed: u64,
) -> CheckOutcome {
    let per_piece: Vec<(usize, Vec<Witness>)> = (0..spec.pieces.len())
        .into_par_iter()
        .map(|pi| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(pi as u64);
            let piece = &spec.pieces[pi];
            let mut wit = Vec::new();
            let mut tested = 0;
            for (ci, cons) in piece.membership.iter().enumerate() {
                for _ in 0..points {
                    let Some((u, v)) = samplers[pi].sample(spec, pi, &mut rng) else {
                        continue;
                    };
                    // Ascend g along its gradient until it turns nonnegative.
                    let (gu, gv) = (cons.grad)(u, v);
                    let norm = gu.hypot(gv);
                    if norm == 0.0 {
                        // Degenerate already at the interior sample's gradient;
                        // walk straight up in u as a fallback direction.
                        continue;
                    }
                    let (du, dv) = (gu / norm, gv / norm);
                    let mut t_lo = 0.0f64;
                    let mut t_hi = spec.eps1 / 8.0;
                    let mut bracketed = false;
                    while t_hi <= 4.0 * spec.l + spec.eps1 {
                        if (cons.g)(u + t_hi * du, v + t_hi * dv) >= 0.0 {
                            bracketed = true;
                            break;
                        }
                        t_lo = t_hi;
                        t_hi *= 2.0;
                    }
                    if !bracketed {
                        continue; // constraint inactive in this direction
                    }
                    for _ in 0..60 {
                        let mid = 0.5 * (t_lo + t_hi);
                        if (cons.g)(u + mid * du, v + mid * dv) >= 0.0 {
                            t_hi = mid;
                        } else {
                            t_lo = mid;
                        }
                    }
                    let bx = u + t_hi * du;
                    let by = v + t_hi * dv;
                    tested += 1;
                    let (bgu, bgv) = (cons.grad)(bx, by);
                    if bgu.hypot(bgv) < 1e-9 {
                        wit.push(Witness {
                            point: (bx, by),
                            partner: None,
                            piece: Some(piece.index),
                            detail: format!(
                                "constraint {ci}: gradient vanishes at a boundary point"
                            ),
                        });
                    }
                }
            }
            (tested, wit)
        })
        .collect();
    let samples = per_piece.iter().map(|(n, _)| n).sum();
    let witnesses = cap_witnesses(per_piece.into_iter().map(|(_, w)| w).collect());
    CheckOutcome::sampled("H1.boundary-arcs", samples, witnesses, String::new())
}

/// Branch formulas are defined (finite value and gradient) on the whole
/// ε₁-collar of their piece.
pub fn check_collar_defined(spec: &PiecewiseMapSpec, samples: usize, seed: u64) -> CheckOutcome {
    let samplers = build_samplers(spec);
    check_collar_defined_with(spec, &samplers, samples, seed)
}

fn check_collar_defined_with(
    spec: &PiecewiseMapSpec,
    samplers: &[PieceSampler],
    samples: usize,
    seed: u64,
) -> CheckOutcome {
    let per_piece: Vec<(usize, Vec<Witness>)> = (0..spec.pieces.len())
        .into_par_iter()
        .map(|pi| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(pi as u64);
            let piece = &spec.pieces[pi];
            let mut wit = Vec::new();
            let mut n = 0;
            for _ in 0..samples {
                let Some((qu, qv)) = samplers[pi].sample(spec, pi, &mut rng) else {
                    wit.push(no_sample_witness(spec, pi));
                    break;
                };
                let (du, dv) = disc_offset(&mut rng, spec.eps1);
                let (u, v) = (qu + du, qv + dv);
                n += 1;
                let val = (piece.branch.value)(u, v);
                let (gu, gv) = (piece.branch.gradient)(u, v);
                if !val.is_finite() || !gu.is_finite() || !gv.is_finite() {
                    wit.push(Witness {
                        point: (u, v),
                        partner: None,
                        piece: Some(piece.index),
                        detail: format!("branch not finite on collar: value {val}, gradient ({gu}, {gv})"),
                    });
                    if wit.len() >= 5 {
                        break;
                    }
                }
            }
            (n, wit)
        })
        .collect();
    let samples_used = per_piece.iter().map(|(n, _)| n).sum();
    let witnesses = cap_witnesses(per_piece.into_iter().map(|(_, w)| w).collect());
    CheckOutcome::sampled("H2.collar-defined", samples_used, witnesses, String::new())
}

/// Derivative bounds on collars: |∂φ/∂u| ≥ declared A_k and |∂φ/∂v| ≤
/// declared M_k at sampled collar points of each piece.
pub fn check_derivative_bounds(spec: &PiecewiseMapSpec, samples: usize, seed: u64) -> CheckOutcome {
    let samplers = build_samplers(spec);
    check_derivative_bounds_with(spec, &samplers, samples, seed, 1e-9)
}

fn check_derivative_bounds_with(
    spec: &PiecewiseMapSpec,
    samplers: &[PieceSampler],
    samples: usize,
    seed: u64,
    slack: f64,
) -> CheckOutcome {
    let per_piece: Vec<(usize, Vec<Witness>)> = (0..spec.pieces.len())
        .into_par_iter()
        .map(|pi| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(pi as u64);
            let piece = &spec.pieces[pi];
            let a_k = piece.branch.declared_a;
            let m_k = piece.branch.declared_m;
            let mut wit = Vec::new();
            let mut n = 0;
            for _ in 0..samples {
                let Some((qu, qv)) = samplers[pi].sample(spec, pi, &mut rng) else {
                    wit.push(no_sample_witness(spec, pi));
                    break;
                };
                let (du, dv) = disc_offset(&mut rng, spec.eps1);
                let (u, v) = (qu + du, qv + dv);
                n += 1;
                let (gu, gv) = (piece.branch.gradient)(u, v);
                if gu.abs() < a_k * (1.0 - slack) {
                    wit.push(Witness {
                        point: (u, v),
                        partner: None,
                        piece: Some(piece.index),
                        detail: format!("|∂φ/∂u| = {} < declared A = {a_k}", gu.abs()),
                    });
                } else if gv.abs() > m_k * (1.0 + slack) + m_k.max(1.0) * 1e-15 {
                    wit.push(Witness {
                        point: (u, v),
                        partner: None,
                        piece: Some(piece.index),
                        detail: format!("|∂φ/∂v| = {} > declared M = {m_k}", gv.abs()),
                    });
                }
                if wit.len() >= 5 {
                    break;
                }
            }
            (n, wit)
        })
        .collect();
    let samples_used = per_piece.iter().map(|(n, _)| n).sum();
    let witnesses = cap_witnesses(per_piece.into_iter().map(|(_, w)| w).collect());
    CheckOutcome::sampled("H3.derivative-bounds", samples_used, witnesses, String::new())
}

/// Gradient Hölder continuity on collars: ‖∇φ(p) − ∇φ(p′)‖ ≤ C_k·‖p − p′‖^α
/// for sampled pairs of collar points of the same piece.
pub fn check_gradient_holder(spec: &PiecewiseMapSpec, samples: usize, seed: u64) -> CheckOutcome {
    let samplers = build_samplers(spec);
    check_gradient_holder_with(spec, &samplers, samples, seed, 1e-9)
}

fn check_gradient_holder_with(
    spec: &PiecewiseMapSpec,
    samplers: &[PieceSampler],
    samples: usize,
    seed: u64,
    slack: f64,
) -> CheckOutcome {
    let alpha = spec.alpha;
    let per_piece: Vec<(usize, Vec<Witness>)> = (0..spec.pieces.len())
        .into_par_iter()
        .map(|pi| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(pi as u64);
            let piece = &spec.pieces[pi];
            let c_k = piece.branch.holder_c;
            let mut wit = Vec::new();
            let mut n = 0;
            for _ in 0..samples {
                let (Some((qu, qv)), Some((ru, rv))) = (
                    samplers[pi].sample(spec, pi, &mut rng),
                    samplers[pi].sample(spec, pi, &mut rng),
                ) else {
                    wit.push(no_sample_witness(spec, pi));
                    break;
                };
                let (d1u, d1v) = disc_offset(&mut rng, spec.eps1);
                let (d2u, d2v) = disc_offset(&mut rng, spec.eps1);
                let p = (qu + d1u, qv + d1v);
                let q = (ru + d2u, rv + d2v);
                let dist = (p.0 - q.0).hypot(p.1 - q.1);
                if dist == 0.0 {
                    continue;
                }
                n += 1;
                let (g1u, g1v) = (piece.branch.gradient)(p.0, p.1);
                let (g2u, g2v) = (piece.branch.gradient)(q.0, q.1);
                let diff = (g1u - g2u).hypot(g1v - g2v);
                let bound = c_k * dist.powf(alpha) * (1.0 + slack) + 1e-12;
                if diff > bound {
                    wit.push(Witness {
                        point: p,
                        partner: Some(q),
                        piece: Some(piece.index),
                        detail: format!("‖∇φ(p) − ∇φ(p′)‖ = {diff} > C·d^α = {bound}"),
                    });
                    if wit.len() >= 5 {
                        break;
                    }
                }
            }
            (n, wit)
        })
        .collect();
    let samples_used = per_piece.iter().map(|(n, _)| n).sum();
    let witnesses = cap_witnesses(per_piece.into_iter().map(|(_, w)| w).collect());
    CheckOutcome::sampled("H3.gradient-holder", samples_used, witnesses, String::new())
}

/// Horizontal-segment condition (the strong, sufficient form): for sampled
/// pairs of equal-ordinate collar points of a piece, every interior point of
/// the joining segment must stay in the collar. Membership in the collar is
/// certified by exhibiting a piece point within ε₁ (first the interpolated
/// generator, then disc probes); failure to certify any probe is a witness.
pub fn check_geometric_condition(spec: &PiecewiseMapSpec, samples: usize, seed: u64) -> CheckOutcome {
    let samplers = build_samplers(spec);
    check_geometric_condition_with(spec, &samplers, samples, seed, CheckConfig::default().segment_probes, CheckConfig::default().disc_probes)
}

fn check_geometric_condition_with(
    spec: &PiecewiseMapSpec,
    samplers: &[PieceSampler],
    samples: usize,
    seed: u64,
    segment_probes: usize,
    disc_probes: usize,
) -> CheckOutcome {
    let eps1 = spec.eps1;
    let per_piece: Vec<(usize, Vec<Witness>)> = (0..spec.pieces.len())
        .into_par_iter()
        .map(|pi| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(pi as u64);
            let piece = &spec.pieces[pi];
            let mut wit = Vec::new();
            let mut n = 0;
            'pairs: for _ in 0..samples {
                let Some((qu, qv)) = samplers[pi].sample(spec, pi, &mut rng) else {
                    wit.push(no_sample_witness(spec, pi));
                    break;
                };
                let (du, dv) = disc_offset(&mut rng, eps1);
                let p = (qu + du, qv + dv);
                // Partner with exactly the same ordinate: draw a second
                // generator whose forced vertical offset still fits in the
                // ε₁-disc, then pick the horizontal offset freely.
                let mut partner = None;
                for _ in 0..40 {
                    let Some((ru, rv)) = samplers[pi].sample(spec, pi, &mut rng) else {
                        break;
                    };
                    let off_v = p.1 - rv;
                    if off_v.abs() <= eps1 * 0.999 {
                        let max_u = (eps1 * eps1 - off_v * off_v).sqrt() * 0.999;
                        let off_u = rng.gen_range(-max_u..max_u);
                        partner = Some(((ru + off_u, p.1), (ru, rv)));
                        break;
                    }
                }
                let Some((p2, gen2)) = partner else {
                    continue;
                };
                n += 1;
                for t_i in 1..=segment_probes {
                    let t = t_i as f64 / (segment_probes + 1) as f64;
                    let m = (p.0 + t * (p2.0 - p.0), p.1);
                    // Interpolated generator: within ε₁ of m by convexity of
                    // the disc offsets, so membership certifies m in the collar.
                    let c = (qu + t * (gen2.0 - qu), qv + t * (gen2.1 - qv));
                    if piece.contains(c.0, c.1) {
                        continue;
                    }
                    let mut certified = false;
                    for _ in 0..disc_probes {
                        let (wu, wv) = disc_offset(&mut rng, eps1 * 0.999);
                        if piece.contains(m.0 + wu, m.1 + wv) {
                            certified = true;
                            break;
                        }
                    }
                    if !certified {
                        wit.push(Witness {
                            point: p,
                            partner: Some(p2),
                            piece: Some(piece.index),
                            detail: format!(
                                "segment point ({}, {}) has no piece point within eps1 = {eps1}",
                                m.0, m.1
                            ),
                        });
                        if wit.len() >= 5 {
                            break 'pairs;
                        }
                        break;
                    }
                }
            }
            (n, wit)
        })
        .collect();
    let samples_used = per_piece.iter().map(|(n, _)| n).sum();
    let witnesses = cap_witnesses(per_piece.into_iter().map(|(_, w)| w).collect());
    let note = if witnesses.is_empty() {
        String::new()
    } else {
        "strong (segment) form failed; the weaker path form was not checked".into()
    };
    CheckOutcome::sampled("H4.segment", samples_used, witnesses, note)
}

/// Applies branch k of the induced system to an Ω-point without piece lookup.
fn apply_branch(sys: &InducedSystem, k: usize, p: Point) -> Point {
    let v = p.y / sys.gamma;
    let phi = (sys.spec.pieces[k].branch.value)(p.x, v);
    Point::new(v, sys.gamma * phi)
}

/// Expansion matrix B = DTᵀDT at a square point (u, v) for branch k;
/// returns its minimum eigenvalue. B = [[γ²φ_u², γφ_uφ_v], [γφ_uφ_v,
/// 1/γ² + φ_v²]] with det B = φ_u².
fn b_min_eigenvalue(sys: &InducedSystem, k: usize, u: f64, v: f64) -> f64 {
    let (gu, gv) = (sys.spec.pieces[k].branch.gradient)(u, v);
    let g2 = sys.gamma * sys.gamma;
    let tr = g2 * gu * gu + 1.0 / g2 + gv * gv;
    let det = gu * gu;
    (tr - (tr * tr - 4.0 * det).max(0.0).sqrt()) / 2.0
}

/// Two expansion tests per branch of the induced system:
/// (i) pairwise — ‖T_k(p) − T_k(q)‖ ≥ (1/s)·‖p − q‖ for sampled pairs whose
/// segment lies in the collar (pairs that fail the segment precondition are
/// skipped, not failed); (ii) pointwise — min eigenvalue of B ≥ 1/s².
pub fn check_dilatance(sys: &InducedSystem, samples: usize, seed: u64) -> Result<Vec<CheckOutcome>, HypError> {
    let samplers = build_samplers(&sys.spec);
    let s = compute_s(sys.spec.min_declared_a(), sys.spec.max_declared_m())?;
    Ok(check_dilatance_with(sys, &samplers, s, samples, seed, 1e-9, 9, 32))
}

#[allow(clippy::too_many_arguments)]
fn check_dilatance_with(
    sys: &InducedSystem,
    samplers: &[PieceSampler],
    s: f64,
    samples: usize,
    seed: u64,
    slack: f64,
    segment_probes: usize,
    disc_probes: usize,
) -> Vec<CheckOutcome> {
    let spec = &sys.spec;
    let eps1 = spec.eps1;
    let inv_s = 1.0 / s;
    let inv_s2 = 1.0 / (s * s);

    // (i) pairwise expansion on flattened pairs.
    let pairwise: Vec<(usize, usize, Vec<Witness>)> = (0..spec.pieces.len())
        .into_par_iter()
        .map(|pi| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(pi as u64);
            let piece = &spec.pieces[pi];
            let mut wit = Vec::new();
            let mut tested = 0;
            let mut skipped = 0;
            'outer: for _ in 0..samples {
                let (Some(q1), Some(q2)) = (
                    samplers[pi].sample(spec, pi, &mut rng),
                    samplers[pi].sample(spec, pi, &mut rng),
                ) else {
                    wit.push(no_sample_witness(spec, pi));
                    break;
                };
                if q1 == q2 {
                    continue;
                }
                // Segment precondition (in square coordinates; flattening is
                // linear so the flattened segment is the image of this one).
                for t_i in 1..=segment_probes {
                    let t = t_i as f64 / (segment_probes + 1) as f64;
                    let c = (q1.0 + t * (q2.0 - q1.0), q1.1 + t * (q2.1 - q1.1));
                    if piece.contains(c.0, c.1) {
                        continue;
                    }
                    let mut ok = false;
                    for _ in 0..disc_probes {
                        let (wu, wv) = disc_offset(&mut rng, eps1 * 0.999);
                        if piece.contains(c.0 + wu, c.1 + wv) {
                            ok = true;
                            break;
                        }
                    }
                    if !ok {
                        skipped += 1;
                        continue 'outer;
                    }
                }
                tested += 1;
                let p1 = sys.flatten(q1.0, q1.1);
                let p2 = sys.flatten(q2.0, q2.1);
                let i1 = apply_branch(sys, pi, p1);
                let i2 = apply_branch(sys, pi, p2);
                let lhs = i1.dist(&i2);
                let rhs = inv_s * (1.0 - slack) * p1.dist(&p2);
                if lhs < rhs {
                    wit.push(Witness {
                        point: (p1.x, p1.y),
                        partner: Some((p2.x, p2.y)),
                        piece: Some(piece.index),
                        detail: format!("image distance {lhs} < (1/s)·distance = {rhs}"),
                    });
                    if wit.len() >= 5 {
                        break;
                    }
                }
            }
            (tested, skipped, wit)
        })
        .collect();
    let tested: usize = pairwise.iter().map(|(t, _, _)| t).sum();
    let skipped: usize = pairwise.iter().map(|(_, s, _)| s).sum();
    let wits = cap_witnesses(pairwise.into_iter().map(|(_, _, w)| w).collect());
    let pairwise_outcome = CheckOutcome::sampled(
        "dilatance.pairwise",
        tested,
        wits,
        format!("{skipped} pairs skipped (segment precondition unmet)"),
    );

    // (ii) pointwise eigenvalue bound on collar points.
    let pointwise: Vec<(usize, Vec<Witness>)> = (0..spec.pieces.len())
        .into_par_iter()
        .map(|pi| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
            rng.set_stream(pi as u64);
            let mut wit = Vec::new();
            let mut n = 0;
            for _ in 0..samples {
                let Some((qu, qv)) = samplers[pi].sample(spec, pi, &mut rng) else {
                    wit.push(no_sample_witness(spec, pi));
                    break;
                };
                let (du, dv) = disc_offset(&mut rng, eps1);
                let (u, v) = (qu + du, qv + dv);
                n += 1;
                let lam = b_min_eigenvalue(sys, pi, u, v);
                if lam < inv_s2 * (1.0 - slack) {
                    wit.push(Witness {
                        point: (u, v),
                        partner: None,
                        piece: Some(spec.pieces[pi].index),
                        detail: format!("min eigenvalue of B = {lam} < 1/s² = {inv_s2}"),
                    });
                    if wit.len() >= 5 {
                        break;
                    }
                }
            }
            (n, wit)
        })
        .collect();
    let n: usize = pointwise.iter().map(|(n, _)| n).sum();
    let wits = cap_witnesses(pointwise.into_iter().map(|(_, w)| w).collect());
    let pointwise_outcome = CheckOutcome::sampled("dilatance.pointwise", n, wits, String::new());

    vec![pairwise_outcome, pointwise_outcome]
}

// ---------------------------------------------------------------------------
// Full report
// ---------------------------------------------------------------------------

pub fn full_report(spec: &Arc<PiecewiseMapSpec>) -> Result<HypothesisReport, HypError> {
    full_report_with(spec, &CheckConfig::default())
}

/// Runs every check and assembles the constants. Errors only when the map
/// cannot even be flattened (A ≤ 1); a bound violation M ≥ A−1 is reported
/// as a failing check with s and η left undefined.
pub fn full_report_with(
    spec: &Arc<PiecewiseMapSpec>,
    cfg: &CheckConfig,
) -> Result<HypothesisReport, HypError> {
    let a = spec.min_declared_a();
    let m = spec.max_declared_m();
    if !(a > 1.0) {
        return Err(HypError::InvalidBounds(format!(
            "need A > 1 to flatten, got A = {a}"
        )));
    }
    let gamma = 1.0 / a.sqrt();
    let bound_ok = m < a - 1.0;
    let (s, eta) = if bound_ok {
        let s = compute_s(a, m)?;
        let eta = compute_eta(s, spec.alpha, spec.arc_crossings)?;
        (Some(s), Some(eta))
    } else {
        (None, None)
    };

    let samplers = build_samplers(spec);
    let mut checks = Vec::new();

    let (disjoint, cover) = check_partition(spec, cfg.global_samples, cfg.seed);
    checks.push(disjoint);
    checks.push(cover);
    checks.push(check_boundary_arcs_with(
        spec,
        &samplers,
        cfg.boundary_points,
        cfg.seed.wrapping_add(1),
    ));
    checks.push(check_collar_defined_with(
        spec,
        &samplers,
        cfg.samples_per_piece,
        cfg.seed.wrapping_add(2),
    ));
    checks.push(CheckOutcome {
        id: "H3.bound-relation",
        status: if bound_ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        samples: 0,
        witnesses: Vec::new(),
        note: format!("M = {m}, A − 1 = {}", a - 1.0),
    });
    checks.push(check_derivative_bounds_with(
        spec,
        &samplers,
        cfg.samples_per_piece,
        cfg.seed.wrapping_add(3),
        cfg.rel_slack,
    ));
    checks.push(check_gradient_holder_with(
        spec,
        &samplers,
        cfg.samples_per_piece,
        cfg.seed.wrapping_add(4),
        cfg.rel_slack,
    ));
    checks.push(check_geometric_condition_with(
        spec,
        &samplers,
        cfg.samples_per_piece,
        cfg.seed.wrapping_add(5),
        cfg.segment_probes,
        cfg.disc_probes,
    ));
    checks.push(CheckOutcome {
        id: "H5.eta",
        status: match eta {
            Some(e) if e < 1.0 => CheckStatus::Pass,
            _ => CheckStatus::Fail,
        },
        samples: 0,
        witnesses: Vec::new(),
        note: match eta {
            Some(e) => format!("eta = {e}"),
            None => "eta undefined (M >= A - 1)".into(),
        },
    });
    if let Some(s_val) = s {
        let sys = induce(Arc::clone(spec))?;
        checks.extend(check_dilatance_with(
            &sys,
            &samplers,
            s_val,
            cfg.samples_per_piece,
            cfg.seed.wrapping_add(6),
            cfg.rel_slack,
            cfg.segment_probes,
            cfg.disc_probes,
        ));
    }

    // A "fail" verdict must always carry a witness; the closed-form checks
    // (bound relation, eta) carry their constants in the note instead.
    let overall_pass = checks.iter().all(|c| c.status != CheckStatus::Fail);
    Ok(HypothesisReport {
        a,
        m,
        gamma,
        s,
        eta,
        alpha: spec.alpha,
        arc_crossings: spec.arc_crossings,
        checks,
        overall_pass,
    })
}
