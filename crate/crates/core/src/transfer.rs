//! Transfer-operator discretization and invariant densities.
//!
//! The Perron–Frobenius operator P of the induced system T is approximated
//! by Ulam's method: the matrix entry (i, j) estimates the fraction of cell
//! j that T sends into cell i. Entries are assembled by seeded, stratified
//! Monte Carlo (a jittered sub-lattice per source cell), which keeps the
//! noise on the stationary density well below plain independent sampling at
//! the same budget. Densities are column vectors; the matrix acts on the
//! left, matching the transfer direction (mass flows forward under T).
//!
//! The invariant density h* is the normalized fixed vector of the matrix,
//! found by power iteration from the uniform density with a Cesàro
//! (iterate-averaging) fallback for oscillating peripheral spectrum. The
//! closed-form operator for the built-in example families is also provided
//! for cross-validation: it evaluates Ph by summing h over branch preimages
//! with the exact expansion weights.

use crate::examples::{
    linear_branch_preimage, piece_indices, quad_branch_preimage, quad_k_window, quad_psi,
    quad_region, ExampleId,
};
use crate::map_model::{InducedSystem, MapError, Point, Rect};
use crate::norms::{Grid1D, GridFunction};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransferError {
    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),
    #[error("no convergence after {iters} iterations (residual {residual})")]
    NoConvergence {
        iters: usize,
        residual: f64,
        /// ℓ¹ residual after each operator application, for post-mortem dumps.
        trace: Vec<f64>,
    },
    #[error("branch {k} preimage of ({x}, {y}) falls outside its piece")]
    BranchInversionFailure { k: i64, x: f64, y: f64 },
    #[error("point ({x}, {y}) lies on the excluded boundary set")]
    PointOnExcludedSet { x: f64, y: f64 },
    #[error("closed-form operator unavailable: {0}")]
    UnsupportedExample(String),
    #[error(transparent)]
    Map(#[from] MapError),
}

// ---------------------------------------------------------------------------
// Ulam discretization
// ---------------------------------------------------------------------------

/// Column-stochastic (up to halted mass) sparse transfer matrix on an
/// nx×ny cell grid over `rect`. `cols[j]` lists (row, weight) pairs with
/// ascending rows; weights are nonnegative and sum to at most 1 per column.
#[derive(Clone, Debug)]
pub struct UlamOperator {
    pub rect: Rect,
    pub nx: usize,
    pub ny: usize,
    pub cols: Vec<Vec<(u32, f64)>>,
    pub samples_per_cell: usize,
    pub seed: u64,
    /// Largest per-column fraction of samples whose image was undefined.
    pub delta_halt: f64,
}

impl UlamOperator {
    pub fn n(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_area(&self) -> f64 {
        self.rect.width() / self.nx as f64 * self.rect.height() / self.ny as f64
    }

    /// Index of the cell containing (x, y), clamped to the grid.
    pub fn cell_index(&self, x: f64, y: f64) -> usize {
        let hx = self.rect.width() / self.nx as f64;
        let hy = self.rect.height() / self.ny as f64;
        let ix = (((x - self.rect.x0) / hx).floor() as i64).clamp(0, self.nx as i64 - 1) as usize;
        let iy = (((y - self.rect.y0) / hy).floor() as i64).clamp(0, self.ny as i64 - 1) as usize;
        iy * self.nx + ix
    }

    /// y = M·x with a fixed accumulation order (bit-stable).
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n()];
        for (j, col) in self.cols.iter().enumerate() {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for &(i, w) in col {
                y[i as usize] += w * xj;
            }
        }
        y
    }

    pub fn column_sums(&self) -> Vec<f64> {
        self.cols
            .iter()
            .map(|col| col.iter().map(|&(_, w)| w).sum())
            .collect()
    }

    /// Sparse triplet rendering, one `row,col,value` line per entry, ordered
    /// by column then row.
    pub fn to_triplet_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# rect={},{},{},{}",
            self.rect.x0, self.rect.x1, self.rect.y0, self.rect.y1
        );
        let _ = writeln!(
            out,
            "# nx={} ny={} samples_per_cell={} seed={} delta_halt={}",
            self.nx, self.ny, self.samples_per_cell, self.seed, self.delta_halt
        );
        out.push_str("row,col,value\n");
        for (j, col) in self.cols.iter().enumerate() {
            for &(i, w) in col {
                let _ = writeln!(out, "{},{},{}", i, j, w);
            }
        }
        out
    }

    /// Inverse of [`to_triplet_csv`](Self::to_triplet_csv): weights written
    /// with shortest round-trip formatting parse back bit-identical.
    pub fn from_triplet_csv(text: &str) -> Result<Self, TransferError> {
        let bad = |m: &str| TransferError::DegenerateGrid(format!("matrix file: {m}"));
        let mut lines = text.lines();
        let rect_line = lines
            .next()
            .and_then(|l| l.strip_prefix("# rect="))
            .ok_or_else(|| bad("missing rect header"))?;
        let r: Vec<f64> = rect_line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(&format!("rect header: {e}")))?;
        if r.len() != 4 {
            return Err(bad("rect header needs 4 numbers"));
        }
        let meta_line = lines
            .next()
            .and_then(|l| l.strip_prefix("# "))
            .ok_or_else(|| bad("missing grid header"))?;
        let mut nx = 0usize;
        let mut ny = 0usize;
        let mut samples_per_cell = 0usize;
        let mut seed = 0u64;
        let mut delta_halt = 0.0f64;
        for tok in meta_line.split_whitespace() {
            let (key, val) = tok
                .split_once('=')
                .ok_or_else(|| bad(&format!("malformed header token {tok:?}")))?;
            match key {
                "nx" => nx = val.parse().map_err(|e| bad(&format!("nx: {e}")))?,
                "ny" => ny = val.parse().map_err(|e| bad(&format!("ny: {e}")))?,
                "samples_per_cell" => {
                    samples_per_cell =
                        val.parse().map_err(|e| bad(&format!("samples: {e}")))?
                }
                "seed" => seed = val.parse().map_err(|e| bad(&format!("seed: {e}")))?,
                "delta_halt" => {
                    delta_halt = val.parse().map_err(|e| bad(&format!("delta_halt: {e}")))?
                }
                other => return Err(bad(&format!("unknown header key {other:?}"))),
            }
        }
        if nx < 2 || ny < 2 {
            return Err(bad("grid too small"));
        }
        if lines.next() != Some("row,col,value") {
            return Err(bad("missing column header"));
        }
        let mut cols: Vec<Vec<(u32, f64)>> = vec![Vec::new(); nx * ny];
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let (i, j, w) = (|| -> Option<(u32, usize, f64)> {
                let i = parts.next()?.parse().ok()?;
                let j = parts.next()?.parse().ok()?;
                let w = parts.next()?.parse().ok()?;
                if parts.next().is_some() {
                    return None;
                }
                Some((i, j, w))
            })()
            .ok_or_else(|| bad(&format!("malformed triplet line {line:?}")))?;
            if i as usize >= nx * ny || j >= nx * ny {
                return Err(bad(&format!("index out of range in line {line:?}")));
            }
            cols[j].push((i, w));
        }
        Ok(UlamOperator {
            rect: Rect::new(r[0], r[1], r[2], r[3]),
            nx,
            ny,
            cols,
            samples_per_cell,
            seed,
            delta_halt,
        })
    }
}

/// Ulam matrix for the induced system, assembled by stratified Monte Carlo
/// over vertical fibers: each source cell is cut into `samples_per_cell`
/// x-strata, one abscissa is drawn uniformly per stratum, and the whole
/// vertical fiber at that abscissa is transported — its exact split across
/// target cells is resolved by recursive bisection and deposited as
/// fractional mass. The estimate is unbiased in x and exact along y, which
/// suppresses the shot noise that point samples would put on every entry
/// (at 200 samples/cell that noise alone would swamp a 5% density check).
/// Fiber segments whose image is undefined (no piece) contribute their
/// length to δ_halt.
pub fn build_ulam(
    sys: &InducedSystem,
    nx: usize,
    ny: usize,
    samples_per_cell: usize,
    seed: u64,
) -> Result<UlamOperator, TransferError> {
    build_ulam_from(|p| sys.step(p), sys.omega, nx, ny, samples_per_cell, seed)
}

/// Initial fiber subdivision; bisection refines from these segments.
const FIBER_SCAN: usize = 8;
/// Segments shorter than this fraction of the fiber stop the bisection.
const FIBER_TOL: f64 = 1e-12;
/// Per-fiber deposits below this fraction are discarded as measure dust
/// (bisection slivers around crossing points).
const FIBER_DUST: f64 = 1e-9;

/// Splits one vertical fiber {x} × [y_lo, y_hi] across target bins by
/// recursive bisection of the bin label, filling the empty buffer `out`
/// with (label, length-fraction) deposits. Labels are `Some(bin)` or `None`
/// for halted segments. Exact whenever bin and piece indices are monotone
/// staircases along fibers — true for strip-like families; otherwise
/// features narrower than a scan segment with identical flanking labels
/// can be missed.
fn transport_fiber(
    label_at: impl Fn(f64) -> Option<u32>,
    y_lo: f64,
    y_hi: f64,
    out: &mut Vec<(Option<u32>, f64)>,
) {
    debug_assert!(out.is_empty());
    let h = y_hi - y_lo;
    let mut pts = [0.0f64; FIBER_SCAN + 1];
    let mut labs = [None; FIBER_SCAN + 1];
    for i in 0..=FIBER_SCAN {
        let y = y_lo + h * (i as f64 / FIBER_SCAN as f64);
        pts[i] = y;
        labs[i] = label_at(y);
    }
    if labs.iter().all(|l| *l == labs[0]) {
        out.push((labs[0], 1.0));
        return;
    }
    let mut stack: Vec<(f64, f64, Option<u32>, Option<u32>)> = (0..FIBER_SCAN)
        .map(|i| (pts[i], pts[i + 1], labs[i], labs[i + 1]))
        .collect();
    while let Some((a, b, la, lb)) = stack.pop() {
        let len = b - a;
        if la == lb {
            out.push((la, len / h));
        } else if len <= h * FIBER_TOL {
            out.push((la, 0.5 * len / h));
            out.push((lb, 0.5 * len / h));
        } else {
            let m = 0.5 * (a + b);
            let lm = label_at(m);
            stack.push((a, m, la, lm));
            stack.push((m, b, lm, lb));
        }
    }
    // Merge duplicate labels and drop bisection dust.
    out.sort_unstable_by(|p, q| p.0.cmp(&q.0));
    let mut w = 0;
    for r in 0..out.len() {
        if w > 0 && out[w - 1].0 == out[r].0 {
            out[w - 1].1 += out[r].1;
        } else {
            out[w] = out[r];
            w += 1;
        }
    }
    out.truncate(w);
    out.retain(|&(_, frac)| frac >= FIBER_DUST);
    if out.len() == 1 {
        // A single surviving label owns the fiber outright.
        out[0].1 = 1.0;
    }
}

/// Generic assembly over any measurable self-map of `rect`; test doubles
/// (identity, permutations) exercise the plumbing without a full system.
pub(crate) fn build_ulam_from(
    map: impl Fn(Point) -> Result<Point, MapError> + Sync,
    rect: Rect,
    nx: usize,
    ny: usize,
    samples_per_cell: usize,
    seed: u64,
) -> Result<UlamOperator, TransferError> {
    if nx < 2 || ny < 2 {
        return Err(TransferError::DegenerateGrid(format!(
            "need nx, ny >= 2, got {nx}x{ny}"
        )));
    }
    if samples_per_cell < 1 {
        return Err(TransferError::DegenerateGrid(
            "need at least one sample per cell".into(),
        ));
    }
    let n = nx * ny;
    let hx = rect.width() / nx as f64;
    let hy = rect.height() / ny as f64;
    let bin_of = |q: Point| -> u32 {
        let tx = (((q.x - rect.x0) / hx).floor() as i64).clamp(0, nx as i64 - 1) as usize;
        let ty = (((q.y - rect.y0) / hy).floor() as i64).clamp(0, ny as i64 - 1) as usize;
        (ty * nx + tx) as u32
    };

    let per_col: Vec<(Vec<(u32, f64)>, f64)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let ix = j % nx;
            let iy = j / nx;
            let x0 = rect.x0 + ix as f64 * hx;
            let y_lo = rect.y0 + iy as f64 * hy;
            let y_hi = rect.y0 + (iy + 1) as f64 * hy;
            let mut mass: std::collections::HashMap<u32, f64> =
                std::collections::HashMap::new();
            let mut halt = 0.0f64;
            let mut deposits: Vec<(Option<u32>, f64)> = Vec::with_capacity(8);
            // Systematic stratification: one random phase per column, shared
            // by all strata. Riemann-sum cancellation across the strata then
            // beats independent jitter by a wide margin at equal budget.
            let phase = rng.gen::<f64>();
            for t in 0..samples_per_cell {
                let x = x0 + (t as f64 + phase) / samples_per_cell as f64 * hx;
                deposits.clear();
                transport_fiber(
                    |y| map(Point::new(x, y)).ok().map(bin_of),
                    y_lo,
                    y_hi,
                    &mut deposits,
                );
                for &(lab, frac) in &deposits {
                    match lab {
                        Some(bin) => *mass.entry(bin).or_insert(0.0) += frac,
                        None => halt += frac,
                    }
                }
            }
            let mut rows: Vec<u32> = mass.keys().copied().collect();
            rows.sort_unstable();
            let inv = 1.0 / samples_per_cell as f64;
            let col: Vec<(u32, f64)> = rows.into_iter().map(|r| (r, mass[&r] * inv)).collect();
            (col, halt * inv)
        })
        .collect();

    let mut cols = Vec::with_capacity(n);
    let mut delta_halt = 0.0f64;
    for (col, halt) in per_col {
        delta_halt = delta_halt.max(halt);
        cols.push(col);
    }
    Ok(UlamOperator {
        rect,
        nx,
        ny,
        cols,
        samples_per_cell,
        seed,
        delta_halt,
    })
}

// ---------------------------------------------------------------------------
// Spectral analysis
// ---------------------------------------------------------------------------

/// Eigenvalues on or near the unit circle count as peripheral when their
/// modulus is within this tolerance of 1.
pub const PERIPHERAL_TOL: f64 = 1e-2;

#[derive(Clone, Debug)]
pub struct SpectralReport {
    /// Computed eigenvalues with modulus ≥ 1 − PERIPHERAL_TOL, by descending
    /// modulus.
    pub leading_eigs: Vec<Complex64>,
    /// Nonnegative density with unit integral on the operator's grid.
    pub invariant_density: GridFunction,
    /// 1 − |second-largest eigenvalue modulus|.
    pub gap_estimate: f64,
    pub peripheral_count: usize,
    pub iterations: usize,
    pub residual: f64,
    pub delta_halt: f64,
}

impl SpectralReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "resolution={}x{}",
            self.invariant_density.nx, self.invariant_density.ny
        );
        let _ = writeln!(out, "delta_halt={}", self.delta_halt);
        let _ = writeln!(out, "iterations={}", self.iterations);
        let _ = writeln!(out, "residual={}", self.residual);
        let _ = writeln!(out, "gap={}", self.gap_estimate);
        let _ = writeln!(out, "peripheral_count={}", self.peripheral_count);
        for e in &self.leading_eigs {
            let _ = writeln!(out, "eig re={} im={} modulus={}", e.re, e.im, e.norm());
        }
        out
    }
}

/// Longest oscillation period the averaging fallback resolves exactly.
const MAX_PERIOD: usize = 32;

fn normalized_apply(op: &UlamOperator, p: &[f64]) -> Option<Vec<f64>> {
    let mut q = op.apply(p);
    let mass: f64 = q.iter().sum();
    if !(mass > 0.0) {
        return None;
    }
    for v in &mut q {
        *v /= mass;
    }
    Some(q)
}

fn l1_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Power iteration from the uniform density, renormalizing each iterate
/// (the matrix loses up to δ_halt of mass per step). If plain iteration has
/// not met `tol` in ℓ¹ after `max_iters` steps, a fallback averages the
/// last q iterates for q = 2..=MAX_PERIOD and accepts the first average
/// fixed to tolerance — exact for peripheral spectra made of roots of unity
/// of order up to MAX_PERIOD (e.g. a period-2 cycle averages out at q = 2).
/// The returned count tallies every operator application.
fn stationary_vector(
    op: &UlamOperator,
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, usize, f64), TransferError> {
    let n = op.n();
    let mut trace: Vec<f64> = Vec::new();
    let mut p = vec![1.0 / n as f64; n];
    let mut residual = f64::INFINITY;
    for it in 1..=max_iters {
        let q = match normalized_apply(op, &p) {
            Some(q) => q,
            None => {
                return Err(TransferError::NoConvergence {
                    iters: it,
                    residual: f64::INFINITY,
                    trace,
                })
            }
        };
        residual = l1_diff(&q, &p);
        trace.push(residual);
        p = q;
        if residual <= tol {
            return Ok((p, it, residual));
        }
    }
    // Oscillation fallback: collect a window of consecutive iterates.
    let mut iters = max_iters;
    let mut window: Vec<Vec<f64>> = vec![p.clone()];
    for _ in 1..MAX_PERIOD {
        let q = match normalized_apply(op, window.last().unwrap()) {
            Some(q) => q,
            None => {
                return Err(TransferError::NoConvergence {
                    iters,
                    residual,
                    trace,
                })
            }
        };
        iters += 1;
        trace.push(l1_diff(&q, window.last().unwrap()));
        window.push(q);
    }
    let mut best = residual;
    for q in 2..=MAX_PERIOD {
        let mut avg = vec![0.0; n];
        for row in &window[MAX_PERIOD - q..] {
            for (a, b) in avg.iter_mut().zip(row) {
                *a += b;
            }
        }
        let mass: f64 = avg.iter().sum();
        for v in &mut avg {
            *v /= mass;
        }
        let image = match normalized_apply(op, &avg) {
            Some(im) => im,
            None => break,
        };
        iters += 1;
        let r = l1_diff(&image, &avg);
        trace.push(r);
        if r <= tol {
            return Ok((avg, iters, r));
        }
        best = best.min(r);
    }
    Err(TransferError::NoConvergence {
        iters,
        residual: best,
        trace,
    })
}

/// Leading eigenvalues by orthogonal subspace iteration with a Rayleigh–Ritz
/// extraction; deterministic start (uniform vector plus cosine modes).
fn leading_eigenvalues(op: &UlamOperator, k: usize, iters: usize) -> Vec<Complex64> {
    let n = op.n();
    let k = k.min(n);
    let mut basis = nalgebra::DMatrix::<f64>::zeros(n, k);
    for m in 0..k {
        for i in 0..n {
            let t = (i as f64 + 0.5) / n as f64;
            basis[(i, m)] = if m == 0 {
                1.0
            } else {
                (std::f64::consts::PI * m as f64 * t).cos()
            };
        }
    }
    let mut q = basis.qr().q();
    for _ in 0..iters {
        let mut w = nalgebra::DMatrix::<f64>::zeros(n, k);
        for m in 0..k {
            let col: Vec<f64> = q.column(m).iter().copied().collect();
            let img = op.apply(&col);
            for i in 0..n {
                w[(i, m)] = img[i];
            }
        }
        q = w.qr().q();
    }
    // Projected k×k matrix H = Qᵀ (A Q).
    let mut aq = nalgebra::DMatrix::<f64>::zeros(n, k);
    for m in 0..k {
        let col: Vec<f64> = q.column(m).iter().copied().collect();
        let img = op.apply(&col);
        for i in 0..n {
            aq[(i, m)] = img[i];
        }
    }
    let h = q.transpose() * aq;
    let mut eigs: Vec<Complex64> = h.complex_eigenvalues().iter().copied().collect();
    eigs.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap());
    eigs
}

fn assemble_report(
    op: &UlamOperator,
    vector: Vec<f64>,
    iterations: usize,
    residual: f64,
    k_eigs: usize,
) -> SpectralReport {
    let eigs = leading_eigenvalues(op, k_eigs.max(2), 200);
    let leading: Vec<Complex64> = eigs
        .iter()
        .copied()
        .filter(|e| e.norm() >= 1.0 - PERIPHERAL_TOL)
        .collect();
    let gap = if eigs.len() >= 2 {
        1.0 - eigs[1].norm()
    } else {
        1.0
    };
    let area = op.cell_area();
    let density = GridFunction::new(
        op.rect,
        op.nx,
        op.ny,
        vector.iter().map(|m| m / area).collect(),
    )
    .expect("stationary vector is finite");
    SpectralReport {
        peripheral_count: leading.len(),
        leading_eigs: leading,
        invariant_density: density,
        gap_estimate: gap,
        iterations,
        residual,
        delta_halt: op.delta_halt,
    }
}

/// Invariant density of the discretized operator with spectral diagnostics.
pub fn invariant_density(
    op: &UlamOperator,
    tol: f64,
    max_iters: usize,
) -> Result<SpectralReport, TransferError> {
    let (p, iters, residual) = stationary_vector(op, tol, max_iters)?;
    Ok(assemble_report(op, p, iters, residual, 4))
}

/// The `k_eigs` largest-modulus eigenvalues plus the stationary density.
pub fn peripheral_spectrum(
    op: &UlamOperator,
    k_eigs: usize,
) -> Result<SpectralReport, TransferError> {
    let (p, iters, residual) = stationary_vector(op, 1e-10, 5_000)?;
    Ok(assemble_report(op, p, iters, residual, k_eigs))
}

// ---------------------------------------------------------------------------
// Closed-form operator for the built-in families
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PfEval {
    pub value: f64,
    /// Number of branch preimages that contributed.
    pub branches: usize,
}

/// Evaluates Ph at the given Ω points by the exact branch-sum formula of the
/// built-in families: Ph(x, y) = Σ_k h(T_k^{-1}(x, y)) / |∂φ_k/∂u|, the sum
/// running over the branches whose preimage abscissa is admissible. Points
/// on the excluded boundary set (where a preimage sits exactly on a piece
/// boundary) are rejected.
pub fn pf_apply_exact(
    id: &ExampleId,
    h: &GridFunction,
    points: &[(f64, f64)],
) -> Result<Vec<PfEval>, TransferError> {
    match *id {
        ExampleId::Nonlinear => pf_nonlinear(h, points),
        ExampleId::Linear { a, b, l } => pf_linear(a, b, l, h, points),
    }
}

fn pf_nonlinear(h: &GridFunction, points: &[(f64, f64)]) -> Result<Vec<PfEval>, TransferError> {
    let mut out = Vec::with_capacity(points.len());
    for &(x, y) in points {
        let region =
            quad_region(x, y).ok_or(TransferError::PointOnExcludedSet { x, y })?;
        let (k_lo, k_hi) = quad_k_window(region);
        let mut acc = 0.0;
        let mut branches = 0usize;
        for k in k_lo..=k_hi {
            let psi = quad_psi(k, x, y);
            if !(psi > 0.0) {
                return Err(TransferError::BranchInversionFailure { k, x, y });
            }
            let pre = quad_branch_preimage(k, x, y);
            // Preimage abscissa must fall inside the open square; the window
            // is exactly the set of k for which it does, so a miss is a bug
            // witness, not a skip.
            if pre.x.abs() >= 1.0 {
                return Err(TransferError::BranchInversionFailure { k, x, y });
            }
            acc += h.value_at(pre.x, pre.y) / (2.0 * psi.sqrt());
            branches += 1;
        }
        if branches == 0 {
            return Err(TransferError::PointOnExcludedSet { x, y });
        }
        out.push(PfEval {
            value: acc,
            branches,
        });
    }
    Ok(out)
}

fn pf_linear(
    a: i64,
    b: i64,
    l: f64,
    h: &GridFunction,
    points: &[(f64, f64)],
) -> Result<Vec<PfEval>, TransferError> {
    if a == 0 || b == 0 {
        return Err(TransferError::UnsupportedExample(
            "linear family needs nonzero coefficients".into(),
        ));
    }
    let weight = 1.0 / (b.unsigned_abs() as f64);
    let mut out = Vec::with_capacity(points.len());
    for &(x, y) in points {
        let mut acc = 0.0;
        let mut branches = 0usize;
        for n in piece_indices(a, b) {
            let pre = linear_branch_preimage(a, b, l, n, x, y);
            let margin = l - pre.x.abs();
            if margin <= 0.0 {
                if margin > -1e-13 * l {
                    // Exactly on a strip boundary: the point is in the bad set.
                    return Err(TransferError::PointOnExcludedSet { x, y });
                }
                continue;
            }
            acc += h.value_at(pre.x, pre.y) * weight;
            branches += 1;
        }
        out.push(PfEval {
            value: acc,
            branches,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Marginals
// ---------------------------------------------------------------------------

/// Both expressions of the stationary scalar density: f(x) = ∫ h*(x, v) dv
/// (integrating out the second Ω coordinate) and f(x) = γ·∫ h*(u, γx) du
/// (reading the same density off the first coordinate one step later). The
/// first lives on the x-grid of h*, the second on its y-grid rescaled by
/// 1/γ; both integrate to 1 when h* does.
pub fn marginal_density(h_star: &GridFunction, sys: &InducedSystem) -> (Grid1D, Grid1D) {
    let l = sys.spec.l;
    let gamma = sys.gamma;
    let hy = h_star.hy();
    let hx = h_star.hx();
    let first: Vec<f64> = (0..h_star.nx)
        .map(|ix| (0..h_star.ny).map(|iy| h_star.value(ix, iy)).sum::<f64>() * hy)
        .collect();
    let second: Vec<f64> = (0..h_star.ny)
        .map(|iy| {
            gamma * (0..h_star.nx).map(|ix| h_star.value(ix, iy)).sum::<f64>() * hx
        })
        .collect();
    let f1 = Grid1D::new(-l, l, first).expect("finite density marginal");
    let f2 = Grid1D::new(-l, l, second).expect("finite density marginal");
    (f1, f2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples::{build_linear, build_nonlinear};
    use crate::map_model::induce;
    use std::sync::Arc;

    fn unit_rect() -> Rect {
        Rect::new(0.0, 1.0, 0.0, 1.0)
    }

    #[test]
    fn identity_map_yields_the_identity_matrix() {
        let op = build_ulam_from(Ok, unit_rect(), 4, 4, 25, 9).unwrap();
        assert_eq!(op.delta_halt, 0.0);
        for (j, col) in op.cols.iter().enumerate() {
            assert_eq!(col.len(), 1, "column {j} should have one entry");
            assert_eq!(col[0].0 as usize, j);
            assert!((col[0].1 - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_grids_are_rejected() {
        assert!(matches!(
            build_ulam_from(Ok, unit_rect(), 1, 4, 10, 0),
            Err(TransferError::DegenerateGrid(_))
        ));
        assert!(matches!(
            build_ulam_from(Ok, unit_rect(), 4, 4, 0, 0),
            Err(TransferError::DegenerateGrid(_))
        ));
    }

    #[test]
    fn identity_operator_converges_in_one_iteration() {
        let op = build_ulam_from(Ok, unit_rect(), 4, 4, 25, 9).unwrap();
        let report = invariant_density(&op, 1e-12, 50).unwrap();
        assert_eq!(report.iterations, 1);
        assert_eq!(report.residual, 0.0);
        let d = &report.invariant_density;
        assert!((d.integral() - 1.0).abs() < 1e-9);
        for &v in &d.values {
            assert!((v - 1.0).abs() < 1e-12, "uniform density on the unit square");
        }
        // Identity: every computed eigenvalue is 1.
        for e in &report.leading_eigs {
            assert!((e.re - 1.0).abs() < 1e-8 && e.im.abs() < 1e-8);
        }
    }

    /// Bipartite chain 0 → {1 w.p. 0.7, 2 w.p. 0.3}, 1 → 0, 2 → 0, with
    /// cell 3 draining into 0. Eigenvalues {1, −1, 0, 0}; iterates from the
    /// uniform start oscillate with period 2 forever, so only the averaging
    /// fallback can deliver the stationary vector (0.5, 0.35, 0.15, 0).
    fn oscillating_op() -> UlamOperator {
        UlamOperator {
            rect: Rect::new(0.0, 2.0, 0.0, 1.0),
            nx: 2,
            ny: 2,
            cols: vec![
                vec![(1, 0.7), (2, 0.3)],
                vec![(0, 1.0)],
                vec![(0, 1.0)],
                vec![(0, 1.0)],
            ],
            samples_per_cell: 1,
            seed: 0,
            delta_halt: 0.0,
        }
    }

    #[test]
    fn oscillating_chain_settles_by_iterate_averaging() {
        let op = oscillating_op();
        let report = peripheral_spectrum(&op, 4).unwrap();
        assert!(report.peripheral_count >= 2, "{:?}", report.leading_eigs);
        let has_one = report
            .leading_eigs
            .iter()
            .any(|e| (e.re - 1.0).abs() < 1e-8 && e.im.abs() < 1e-8);
        let has_minus_one = report
            .leading_eigs
            .iter()
            .any(|e| (e.re + 1.0).abs() < 1e-8 && e.im.abs() < 1e-8);
        assert!(has_one && has_minus_one, "{:?}", report.leading_eigs);
        // Stationary masses 0.5, 0.35, 0.15, 0 over cell area 0.5.
        let d = &report.invariant_density.values;
        let expect = [1.0, 0.7, 0.3, 0.0];
        for (v, e) in d.iter().zip(expect) {
            assert!((v - e).abs() < 1e-9, "density {v} vs {e}");
        }
        assert!(report.residual <= 1e-10);
    }

    #[test]
    fn slow_chain_reports_no_convergence() {
        // Two-state chain mixing at rate ~3e-4: far from stationary after
        // 40 iterations under a tight tolerance.
        let op = UlamOperator {
            rect: Rect::new(0.0, 2.0, 0.0, 1.0),
            nx: 2,
            ny: 2,
            cols: vec![
                vec![(0, 1.0 - 1e-4), (1, 1e-4)],
                vec![(0, 2e-4), (1, 1.0 - 2e-4)],
                vec![(2, 1.0 - 1e-4), (3, 1e-4)],
                vec![(2, 2e-4), (3, 1.0 - 2e-4)],
            ],
            samples_per_cell: 1,
            seed: 0,
            delta_halt: 0.0,
        };
        match invariant_density(&op, 1e-14, 40) {
            Err(TransferError::NoConvergence {
                iters,
                residual,
                trace,
            }) => {
                assert!(iters >= 40);
                assert!(residual > 1e-14);
                assert!(trace.len() >= 40);
                assert!(trace.iter().all(|r| r.is_finite()));
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn linear_columns_are_stochastic_up_to_halt() {
        let spec = Arc::new(build_linear(1, 101, 1.0).unwrap());
        let sys = induce(spec).unwrap();
        let op = build_ulam(&sys, 32, 32, 64, 11).unwrap();
        assert!(op.delta_halt < 1e-3, "delta_halt = {}", op.delta_halt);
        for (j, s) in op.column_sums().iter().enumerate() {
            assert!(
                *s <= 1.0 + 1e-12 && *s >= 1.0 - 1e-3,
                "column {j} sums to {s}"
            );
        }
        for col in &op.cols {
            for &(_, w) in col {
                assert!(w >= 0.0 && w <= 1.0);
            }
        }
    }

    #[test]
    fn linear_invariant_density_is_uniform() {
        let spec = Arc::new(build_linear(1, 101, 1.0).unwrap());
        let sys = induce(spec).unwrap();
        let op = build_ulam(&sys, 64, 64, 200, 5).unwrap();
        let report = invariant_density(&op, 1e-9, 500).unwrap();
        let d = &report.invariant_density;
        assert!((d.integral() - 1.0).abs() < 1e-9);
        let target = 1.0 / sys.omega.area();
        let max_dev = d
            .values
            .iter()
            .map(|v| (v - target).abs() / target)
            .fold(0.0, f64::max);
        assert!(max_dev < 0.05, "max relative deviation {max_dev}");
        // Strong mixing: the spectral gap is wide.
        assert!(report.gap_estimate > 0.5, "gap = {}", report.gap_estimate);
        assert_eq!(report.peripheral_count, 1);
    }

    #[test]
    fn nonlinear_invariant_density_is_not_constant() {
        let spec = Arc::new(build_nonlinear());
        let sys = induce(spec).unwrap();
        let op = build_ulam(&sys, 64, 64, 100, 5).unwrap();
        assert!(op.delta_halt < 1e-3, "delta_halt = {}", op.delta_halt);
        let report = invariant_density(&op, 1e-9, 500).unwrap();
        let d = &report.invariant_density;
        let n = d.values.len() as f64;
        let mean = d.values.iter().sum::<f64>() / n;
        let var = d.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let cv = var.sqrt() / mean;
        assert!(cv > 0.01, "coefficient of variation {cv}");
    }

    #[test]
    fn exact_operator_fixes_constants_on_the_linear_example() {
        let spec = Arc::new(build_linear(1, 101, 1.0).unwrap());
        let sys = induce(Arc::clone(&spec)).unwrap();
        let c = 2.75;
        let h = GridFunction::constant(sys.omega, 16, 16, c).unwrap();
        let id = ExampleId::Linear { a: 1, b: 101, l: 1.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let pts: Vec<(f64, f64)> = (0..200)
            .map(|_| {
                (
                    rng.gen_range(sys.omega.x0..sys.omega.x1),
                    rng.gen_range(sys.omega.y0..sys.omega.y1),
                )
            })
            .collect();
        for ev in pf_apply_exact(&id, &h, &pts).unwrap() {
            assert_eq!(ev.branches, 101, "active branch count is |b|");
            assert!((ev.value - c).abs() < 1e-12, "Pc = c, got {}", ev.value);
        }
    }

    #[test]
    fn exact_operator_of_one_increases_with_z() {
        // h = 1: Ph(x, y) = Σ 1/(2√Ψ_k); on the region whose window is
        // k ∈ [−179, 248] it must strictly increase in z = x − 6y.
        let spec = Arc::new(build_nonlinear());
        let sys = induce(Arc::clone(&spec)).unwrap();
        let h = GridFunction::constant(sys.omega, 8, 8, 1.0).unwrap();
        let id = ExampleId::Nonlinear;
        let y = 0.49 / 6.0;
        let zs = [-1.45, -1.2, -0.95, -0.7, -0.55];
        let pts: Vec<(f64, f64)> = zs.iter().map(|z| (z + 6.0 * y, y)).collect();
        let evals = pf_apply_exact(&id, &h, &pts).unwrap();
        for w in evals.windows(2) {
            assert!(
                w[1].value > w[0].value,
                "Ph must increase with z: {} then {}",
                w[0].value,
                w[1].value
            );
        }
        assert!(evals.iter().all(|e| e.branches == 428));
    }

    #[test]
    fn excluded_set_points_are_rejected() {
        let h = GridFunction::constant(
            Rect::new(-1.0, 1.0, -1.0 / 12.0, 1.0 / 12.0),
            4,
            4,
            1.0,
        )
        .unwrap();
        // z = x − 6y = 0.5 exactly: region boundary.
        let err = pf_apply_exact(&ExampleId::Nonlinear, &h, &[(0.5, 0.0)]).unwrap_err();
        assert!(matches!(err, TransferError::PointOnExcludedSet { .. }));
    }

    #[test]
    fn exact_operator_preserves_the_integral() {
        // Quadrature of Ph over Ω against the integral of h, h ≥ 0 random.
        let spec = Arc::new(build_nonlinear());
        let sys = induce(Arc::clone(&spec)).unwrap();
        let h = GridFunction::from_fn(sys.omega, 24, 24, |x, y| {
            1.0 + 0.8 * (3.0 * x).sin() * (40.0 * y).cos()
        })
        .unwrap();
        let nq = 96usize;
        let hx = sys.omega.width() / nq as f64;
        let hy = sys.omega.height() / nq as f64;
        let mut pts = Vec::with_capacity(nq * nq);
        for iy in 0..nq {
            for ix in 0..nq {
                pts.push((
                    sys.omega.x0 + (ix as f64 + 0.5) * hx,
                    sys.omega.y0 + (iy as f64 + 0.5) * hy,
                ));
            }
        }
        let evals = pf_apply_exact(&ExampleId::Nonlinear, &h, &pts).unwrap();
        let integral_ph: f64 = evals.iter().map(|e| e.value).sum::<f64>() * hx * hy;
        let integral_h = h.integral();
        let rel = (integral_ph - integral_h).abs() / integral_h;
        assert!(rel < 1e-3, "∫Ph = {integral_ph} vs ∫h = {integral_h}");
    }

    #[test]
    fn marginals_of_the_uniform_density_are_uniform() {
        let spec = Arc::new(build_linear(1, 101, 1.0).unwrap());
        let sys = induce(spec).unwrap();
        let h = GridFunction::constant(sys.omega, 32, 16, 1.0 / sys.omega.area()).unwrap();
        let (f1, f2) = marginal_density(&h, &sys);
        assert!((f1.integral() - 1.0).abs() < 1e-6);
        assert!((f2.integral() - 1.0).abs() < 1e-6);
        for g in [&f1, &f2] {
            for &v in &g.values {
                assert!((v - 0.5).abs() < 1e-9, "1/(2L) = 0.5, got {v}");
            }
        }
    }

    #[test]
    fn marginals_of_the_computed_linear_density_are_near_uniform() {
        let spec = Arc::new(build_linear(1, 101, 1.0).unwrap());
        let sys = induce(spec).unwrap();
        let op = build_ulam(&sys, 64, 64, 200, 5).unwrap();
        let report = invariant_density(&op, 1e-9, 500).unwrap();
        let (f1, f2) = marginal_density(&report.invariant_density, &sys);
        assert!((f1.integral() - 1.0).abs() < 1e-6);
        assert!((f2.integral() - 1.0).abs() < 1e-6);
        for g in [&f1, &f2] {
            for &v in &g.values {
                assert!((v - 0.5).abs() / 0.5 < 0.05, "marginal value {v}");
            }
        }
    }

    #[test]
    fn triplet_csv_is_stable() {
        let op = build_ulam_from(Ok, unit_rect(), 2, 2, 4, 1).unwrap();
        let csv = op.to_triplet_csv();
        let expect = "# rect=0,1,0,1\n# nx=2 ny=2 samples_per_cell=4 seed=1 delta_halt=0\nrow,col,value\n0,0,1\n1,1,1\n2,2,1\n3,3,1\n";
        assert_eq!(csv, expect);
    }

    #[test]
    fn triplet_csv_round_trips_a_real_matrix() {
        let sys = induce(Arc::new(build_linear(1, 101, 1.0).unwrap())).unwrap();
        let op = build_ulam(&sys, 8, 8, 16, 3).unwrap();
        let back = UlamOperator::from_triplet_csv(&op.to_triplet_csv()).unwrap();
        assert_eq!(back.rect, op.rect);
        assert_eq!(back.nx, op.nx);
        assert_eq!(back.ny, op.ny);
        assert_eq!(back.samples_per_cell, op.samples_per_cell);
        assert_eq!(back.seed, op.seed);
        assert_eq!(back.delta_halt.to_bits(), op.delta_halt.to_bits());
        assert_eq!(back.cols, op.cols, "weights must round-trip bit-exactly");

        assert!(UlamOperator::from_triplet_csv("garbage").is_err());
    }
}
