//! Acceptance suite: ten end-to-end criteria covering the contraction
//! constants, invariant densities, exact operator identities, marginal
//! consistency, correlation decay, the norm machinery, expansion bounds,
//! index algebra, and byte-level reproducibility. Each criterion prints one
//! pass/fail line (visible with `--nocapture`, or on failure).

mod common;

use pwdyn::correlation::{build_decay_curve, ObservablePair};
use pwdyn::examples::{build_linear, build_nonlinear, index_range, piece_indices, ExampleId};
use pwdyn::hypotheses::{check_dilatance, compute_eta, compute_s, CheckStatus};
use pwdyn::map_model::{induce, InducedSystem};
use pwdyn::norms::{norm_alpha, norm_alpha_l, tr_lift, tr_norm, Grid1D, GridFunction, NormParams};
use pwdyn::transfer::{
    build_ulam, invariant_density, marginal_density, pf_apply_exact, UlamOperator,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

fn verdict(n: u32, pass: bool, detail: &str) {
    println!(
        "criterion {n:02} {} — {detail}",
        if pass { "pass" } else { "FAIL" }
    );
    assert!(pass, "criterion {n:02} failed — {detail}");
}

struct Fixture {
    sys: InducedSystem,
    op: UlamOperator,
    h_star: GridFunction,
    build_secs: f64,
}

static LINEAR: OnceLock<Fixture> = OnceLock::new();
static NONLINEAR: OnceLock<Fixture> = OnceLock::new();

/// Linear example at the stated acceptance scale: 64×64 grid, 200 fiber
/// samples per cell, seed 0. Built on one thread so the recorded time
/// backs the single-threaded runtime target.
fn linear_fix() -> &'static Fixture {
    LINEAR.get_or_init(|| {
        let spec = Arc::new(build_linear(1, 101, 1.0).expect("admissible parameters"));
        let sys = induce(spec).expect("induced system");
        let t0 = Instant::now();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .expect("local pool");
        let (op, report) = pool.install(|| {
            let op = build_ulam(&sys, 64, 64, 200, 0).expect("operator");
            let report = invariant_density(&op, 1e-12, 20_000).expect("density");
            (op, report)
        });
        Fixture {
            sys,
            op,
            h_star: report.invariant_density,
            build_secs: t0.elapsed().as_secs_f64(),
        }
    })
}

/// Nonlinear example: 64×64 grid, 50 fiber samples per cell, seed 0.
fn nonlinear_fix() -> &'static Fixture {
    NONLINEAR.get_or_init(|| {
        let spec = Arc::new(build_nonlinear());
        let sys = induce(spec).expect("induced system");
        let t0 = Instant::now();
        let op = build_ulam(&sys, 64, 64, 50, 0).expect("operator");
        let report = invariant_density(&op, 1e-12, 20_000).expect("density");
        Fixture {
            sys,
            op,
            h_star: report.invariant_density,
            build_secs: t0.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn c01_contraction_constants_match_a_high_precision_oracle() {
    let s = compute_s(144.0, 2.0).expect("valid bounds");
    let eta = compute_eta(s, 1.0, 3).expect("valid constants");
    let s_ref = common::oracle_s(144.0, 2.0);
    let eta_ref = common::oracle_eta_alpha1(144.0, 2.0, 3);
    let s_rel = ((s - s_ref) / s_ref).abs();
    let eta_rel = ((eta - eta_ref) / eta_ref).abs();
    let pass = s <= 0.1 && eta < 1.0 && s_rel <= 1e-10 && eta_rel <= 1e-10;
    verdict(
        1,
        pass,
        &format!(
            "s={s:.12} (needs <= 0.1; rel err vs oracle {s_rel:.1e}), eta={eta:.12} (needs < 1; rel err {eta_rel:.1e})"
        ),
    );
}

#[test]
fn c02_linear_invariant_density_is_uniform_within_five_percent() {
    let fix = linear_fix();
    let uniform = 1.0 / (4.0 * fix.sys.gamma); // 1 / area(Ω) at L = 1
    let max_dev = fix
        .h_star
        .values
        .iter()
        .map(|v| (v - uniform).abs() / uniform)
        .fold(0.0, f64::max);
    let pass = max_dev < 0.05 && fix.build_secs < 120.0;
    verdict(
        2,
        pass,
        &format!(
            "max relative cell deviation {:.3}% (needs < 5%), single-thread operator+density build {:.1}s (needs < 120s)",
            100.0 * max_dev,
            fix.build_secs
        ),
    );
}

#[test]
fn c03_linear_exact_operator_fixes_constants() {
    let fix = linear_fix();
    let id = ExampleId::Linear { a: 1, b: 101, l: 1.0 };
    let one = GridFunction::constant(fix.sys.omega, 16, 16, 1.0).expect("constant field");
    let mut rng = ChaCha8Rng::seed_from_u64(301);
    let r = fix.sys.omega;
    let pts: Vec<(f64, f64)> = (0..1000)
        .map(|_| (rng.gen_range(r.x0..r.x1), rng.gen_range(r.y0..r.y1)))
        .collect();
    let evals = pf_apply_exact(&id, &one, &pts).expect("interior points");
    let max_err = evals
        .iter()
        .map(|e| (e.value - 1.0).abs())
        .fold(0.0, f64::max);
    let branch_count_ok = evals.iter().all(|e| e.branches == 101);
    let pass = max_err < 1e-12 && branch_count_ok;
    verdict(
        3,
        pass,
        &format!(
            "1000 points: max |P1 − 1| = {max_err:.2e} (needs < 1e-12); every point saw 101 branches: {branch_count_ok}"
        ),
    );
}

#[test]
fn c04_nonlinear_operator_moves_the_constant_density() {
    let fix = nonlinear_fix();
    let one = GridFunction::constant(fix.sys.omega, 16, 16, 1.0).expect("constant field");
    // 50 points of fixed y, walking the transverse coordinate z = x − 6y
    // across the region where all samples share a branch-count window.
    let y0 = 0.49 / 6.0;
    let pts: Vec<(f64, f64)> = (0..50)
        .map(|i| {
            let z = -1.45 + 0.9 * (i as f64) / 49.0;
            (z + 6.0 * y0, y0)
        })
        .collect();
    let evals = pf_apply_exact(&ExampleId::Nonlinear, &one, &pts).expect("interior points");
    let increasing = evals.windows(2).all(|w| w[1].value > w[0].value);

    let n = fix.h_star.values.len() as f64;
    let mean = fix.h_star.values.iter().sum::<f64>() / n;
    let var = fix
        .h_star
        .values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    let cv = var.sqrt() / mean;
    let pass = increasing && cv > 0.01;
    verdict(
        4,
        pass,
        &format!(
            "P1 strictly increasing across 50 transverse points: {increasing}; density coefficient of variation {:.2}% (needs > 1%)",
            100.0 * cv
        ),
    );
}

#[test]
fn c05_marginal_formulas_agree_on_both_examples() {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, fix) in [("linear", linear_fix()), ("nonlinear", nonlinear_fix())] {
        let (first, second) = marginal_density(&fix.h_star, &fix.sys);
        assert_eq!(first.n(), second.n(), "square grids align the marginals");
        let h = first.h();
        let l1: f64 = first
            .values
            .iter()
            .zip(&second.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * h;
        let tol = 4.0 * fix.h_star.half_diag(); // 2 · cell diameter
        let ok = l1 <= tol;
        pass &= ok;
        parts.push(format!("{name}: L1 distance {l1:.2e} <= {tol:.2e}"));
    }
    verdict(5, pass, &parts.join("; "));
}

#[test]
fn c06_linear_decay_fit_with_estimator_agreement() {
    let fix = linear_fix();
    let pair = ObservablePair::x_over_l(1.0, 64);
    let lags: Vec<usize> = (1..=20).collect();
    let t0 = Instant::now();
    let curve = build_decay_curve(&fix.sys, &fix.op, &fix.h_star, &pair, &lags, 10_000, 0)
        .expect("decay curve");
    let elapsed = t0.elapsed().as_secs_f64();

    let slope = curve.fitted_rho.ln();
    let rho_ok = curve.fitted_rho > 0.0 && curve.fitted_rho < 1.0;
    let (checked, agreeing) = curve.agreement();
    let agree_ok = checked > 0 && checked == agreeing;
    let mut bound_ok = true;
    for (k, &lag) in curve.lags.iter().enumerate() {
        if lag < curve.fit_window.0 || lag > curve.fit_window.1 {
            continue;
        }
        let bound = 1.1 * curve.fitted_c * curve.fitted_rho.powi(lag as i32);
        bound_ok &= curve.cov_op[k].abs() <= bound;
    }
    let pass = rho_ok && agree_ok && bound_ok && elapsed < 300.0;
    verdict(
        6,
        pass,
        &format!(
            "log-fit slope {slope:.3} (needs < 0, rho={:.4}); trajectory estimator within 3 stderr at {agreeing}/{checked} fitted lags; |cov_n| <= 1.1·C·rho^n on window {}..{}: {bound_ok}; runtime {elapsed:.1}s (needs < 300s)",
            curve.fitted_rho, curve.fit_window.0, curve.fit_window.1
        ),
    );
}

#[test]
fn c07_norm_inequalities_and_trace_lift_cross_check() {
    let fix = linear_fix();
    let sys = &fix.sys;
    let gamma = sys.gamma;
    let l = sys.spec.l;
    let p = NormParams::new(1.0, 0.025, 0.3, 8).expect("params");
    let mut rng = ChaCha8Rng::seed_from_u64(701);
    // Inequality pair on zero-extensions: ‖f‖ ≤ ‖g‖_Ω (1% discretization
    // slack) and ‖f·1_Ω‖_Ω ≤ (1 + 16(1+γ)L·max(1,ε₀^α)/(π·ε₀^{1+α}))·‖f‖.
    let mut worst_ext = 0.0_f64;
    let mut worst_restrict = 0.0_f64;
    for _ in 0..20 {
        let modes: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| {
                (
                    rng.gen_range(-4.0..4.0),
                    rng.gen_range(-4.0..4.0),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    rng.gen_range(-2.0..2.0),
                )
            })
            .collect();
        let g = GridFunction::from_fn(sys.omega, 96, 10, |x, y| {
            modes
                .iter()
                .map(|&(kx, ky, ph, amp)| amp * (kx * x + ky * y + ph).sin())
                .sum()
        })
        .expect("field");
        let f = g.extend_by_zero(p.eps1);
        let plane = norm_alpha(&f, &p).expect("plane norm");
        let omega = norm_alpha_l(&g, &p, l, gamma, g.sup_abs(), g.l1()).expect("omega norm");
        worst_ext = worst_ext.max(plane / omega);
        let factor = 1.0
            + 16.0 * (1.0 + gamma) * l * p.eps0.powf(p.alpha).max(1.0)
                / (std::f64::consts::PI * p.eps0.powf(1.0 + p.alpha));
        worst_restrict = worst_restrict.max(omega / (factor * plane));
    }
    let ineq_ok = worst_ext <= 1.01 && worst_restrict <= 1.0;

    // Direct 1-D trace norm vs the generic norm of the lifted field.
    let p_half = NormParams::new(0.5, 0.05, 0.6, 16).expect("params");
    let mut worst_rel = 0.0_f64;
    for _ in 0..5 {
        let modes: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.gen_range(0.5..5.0),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    rng.gen_range(-1.5..1.5),
                )
            })
            .collect();
        let hfun = Grid1D::from_fn(-l, l, 256, |x| {
            modes
                .iter()
                .map(|&(k, ph, amp)| amp * (k * x + ph).sin())
                .sum()
        })
        .expect("observable");
        let direct = tr_norm(&hfun, &p_half, sys).expect("trace norm");
        let lifted = tr_lift(&hfun, sys);
        let via_lift = norm_alpha_l(&lifted, &p_half, l, gamma, lifted.sup_abs(), lifted.l1())
            .expect("lifted norm");
        worst_rel = worst_rel.max((direct - via_lift).abs() / via_lift);
    }
    let cross_ok = worst_rel <= 0.02;
    let pass = ineq_ok && cross_ok;
    verdict(
        7,
        pass,
        &format!(
            "20 random fields: extension ratio <= {worst_ext:.4} (needs <= 1.01), restriction ratio <= {worst_restrict:.4} (needs <= 1); trace-norm vs lifted-norm max rel diff {:.3}% (needs <= 2%)",
            100.0 * worst_rel
        ),
    );
}

#[test]
fn c08_expansion_holds_pairwise_and_pointwise() {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, fix) in [("linear", linear_fix()), ("nonlinear", nonlinear_fix())] {
        let pieces = fix.sys.spec.pieces.len();
        let per_piece = 10_000_usize.div_ceil(pieces);
        let outcomes = check_dilatance(&fix.sys, per_piece, 801).expect("valid constants");
        for o in &outcomes {
            let ok = o.status != CheckStatus::Fail && o.witnesses.is_empty() && o.samples >= 10_000;
            pass &= ok;
            parts.push(format!(
                "{name} {}: {} samples, {} violations",
                o.id,
                o.samples,
                o.witnesses.len()
            ));
        }
    }
    verdict(8, pass, &parts.join("; "));
}

#[test]
fn c09_index_algebra_matches_independent_oracles() {
    let (a, b, l) = (1_i64, 101_i64, 1.0_f64);
    // Corner scan: the linear form a·v + b·u attains its extremes over the
    // closed square at corners, so the boundary line for n meets the square
    // iff (2n−1)L lies between those extremes.
    let corners = [(-l, -l), (-l, l), (l, -l), (l, l)];
    let vals: Vec<f64> = corners
        .iter()
        .map(|&(u, v)| (a as f64) * v + (b as f64) * u)
        .collect();
    let cmin = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let cmax = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let oracle: Vec<i64> = (-300..=300)
        .filter(|&n| {
            let line = (2 * n - 1) as f64 * l;
            line >= cmin && line <= cmax
        })
        .collect();
    let got: Vec<i64> = index_range(a, b).collect();
    let range_ok = got == oracle;

    // Rejection sampling: which open strips intersect the open square with
    // positive area.
    let expected: Vec<i64> = piece_indices(a, b).collect();
    let lo = expected[0] - 3;
    let hi = *expected.last().unwrap() + 3;
    let mut found = vec![false; (hi - lo + 1) as usize];
    let mut rng = ChaCha8Rng::seed_from_u64(901);
    for _ in 0..200_000 {
        let u = rng.gen_range(-l..l);
        let v = rng.gen_range(-l..l);
        let t = (a as f64) * v + (b as f64) * u;
        let n = (t / (2.0 * l)).round() as i64;
        if n >= lo && n <= hi && t > (2 * n - 1) as f64 * l && t < (2 * n + 1) as f64 * l {
            found[(n - lo) as usize] = true;
        }
    }
    let sampled: Vec<i64> = (lo..=hi).filter(|&n| found[(n - lo) as usize]).collect();
    let strips_ok = sampled == expected;

    verdict(
        9,
        range_ok && strips_ok,
        &format!(
            "index range {:?}..={:?} equals corner-scan oracle: {range_ok}; sampled nonempty strips {:?}..={:?} equal declared pieces: {strips_ok}",
            got.first(), got.last(), sampled.first(), sampled.last()
        ),
    );
}

#[test]
fn c10_decay_command_is_byte_reproducible() {
    let dir_a = common::fresh_dir("acc-c10-a");
    let dir_b = common::fresh_dir("acc-c10-b");
    let base = [
        "decay", "--example", "linear", "--a", "1", "--b", "101", "--L", "1", "--nx", "32",
        "--ny", "32", "--samples-per-cell", "100", "--trajectories", "4000", "--lags", "1..12",
        "--seed", "0", "--out",
    ];
    let mut pass = true;
    let mut parts = Vec::new();

    let out_a = dir_a.display().to_string();
    let out_b = dir_b.display().to_string();
    let run = |out: &str| {
        let mut args: Vec<&str> = base.to_vec();
        args.push(out);
        common::run_bin(&args)
    };
    let files = ["decay_curve.csv", "decay_fit.csv"];
    let snapshot = |dir: &std::path::Path| files.map(|f| common::read(&dir.join(f)));

    for (label, out, dir, reference) in [
        ("fresh run", &out_a, &dir_a, None),
        ("fresh run in a second directory", &out_b, &dir_b, Some(&dir_a)),
        ("cached rerun", &out_a, &dir_a, Some(&dir_b)),
    ] {
        let o = run(out);
        let code = common::exit_code(&o);
        pass &= code == 0;
        parts.push(format!("{label}: exit {code}"));
        if let Some(other) = reference {
            let identical = snapshot(dir) == snapshot(other);
            pass &= identical;
            parts.push(format!("outputs byte-identical: {identical}"));
        }
    }
    verdict(10, pass, &parts.join("; "));
}
