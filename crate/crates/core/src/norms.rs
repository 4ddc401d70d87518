//! Anisotropic α-Hölder norms on cell-constant grid functions.
//!
//! Functions are represented as constant values on the cells of a regular
//! grid. Oscillation over a region is the exact sup minus inf of the values
//! of the cells meeting the region; for Euclidean balls a cell counts as
//! meeting the ball when its center lies within ε plus half the cell
//! diagonal — a conservative rule that is cheap, monotone in ε, and errs
//! toward larger oscillation. The sup over ε in the seminorm definitions is
//! discretized on a geometric ladder of `eps_samples` values whose floor is
//! the half-diagonal (below that scale the discrete oscillation no longer
//! approximates the continuum one and the ratio ε^{−α}·osc blows up
//! spuriously), so the reported value is a ladder maximum, not the exact
//! continuum sup.

use crate::map_model::{InducedSystem, Rect};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NormError {
    #[error("region does not meet the grid with positive area")]
    EmptyRegion,
    #[error("bad parameters: {0}")]
    BadParams(String),
}

// ---------------------------------------------------------------------------
// Grid types
// ---------------------------------------------------------------------------

/// Cell-constant function on an interval, used for marginal densities and
/// the horizontal factors of product observables.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid1D {
    pub x0: f64,
    pub x1: f64,
    pub values: Vec<f64>,
}

impl Grid1D {
    pub fn new(x0: f64, x1: f64, values: Vec<f64>) -> Result<Self, NormError> {
        if !(x1 > x0) || !x0.is_finite() || !x1.is_finite() {
            return Err(NormError::BadParams(format!("bad interval [{x0}, {x1}]")));
        }
        if values.is_empty() {
            return Err(NormError::BadParams("empty value array".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NormError::BadParams("non-finite value".into()));
        }
        Ok(Grid1D { x0, x1, values })
    }

    pub fn from_fn(x0: f64, x1: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self, NormError> {
        if n == 0 {
            return Err(NormError::BadParams("need at least one cell".into()));
        }
        let h = (x1 - x0) / n as f64;
        let values = (0..n).map(|i| f(x0 + (i as f64 + 0.5) * h)).collect();
        Grid1D::new(x0, x1, values)
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn h(&self) -> f64 {
        (self.x1 - self.x0) / self.n() as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.x0 + (i as f64 + 0.5) * self.h()
    }

    /// Value of the cell containing `x`, clamping to the nearest cell outside
    /// the interval.
    pub fn value_at(&self, x: f64) -> f64 {
        let i = ((x - self.x0) / self.h()).floor() as isize;
        let i = i.clamp(0, self.n() as isize - 1) as usize;
        self.values[i]
    }

    /// ∫ f dx (signed).
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.h()
    }

    pub fn l1(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.h()
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// One row per cell: center abscissa and value.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# x0={} x1={} n={}", self.x0, self.x1, self.n());
        out.push_str("x_center,value\n");
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{},{}", self.center(i), v);
        }
        out
    }
}

/// Cell-constant function on a rectangle; `values[iy * nx + ix]` is the value
/// on the cell with indices (ix, iy), ix counting from `rect.x0`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub rect: Rect,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(rect: Rect, nx: usize, ny: usize, values: Vec<f64>) -> Result<Self, NormError> {
        if nx == 0 || ny == 0 {
            return Err(NormError::BadParams("need positive cell counts".into()));
        }
        if !(rect.width() > 0.0) || !(rect.height() > 0.0) {
            return Err(NormError::BadParams("rect must have positive area".into()));
        }
        if values.len() != nx * ny {
            return Err(NormError::BadParams(format!(
                "value array has {} entries, expected {}",
                values.len(),
                nx * ny
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(NormError::BadParams("non-finite value".into()));
        }
        Ok(GridFunction {
            rect,
            nx,
            ny,
            values,
        })
    }

    pub fn from_fn(
        rect: Rect,
        nx: usize,
        ny: usize,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, NormError> {
        if nx == 0 || ny == 0 {
            return Err(NormError::BadParams("need positive cell counts".into()));
        }
        let hx = rect.width() / nx as f64;
        let hy = rect.height() / ny as f64;
        let mut values = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            let y = rect.y0 + (iy as f64 + 0.5) * hy;
            for ix in 0..nx {
                let x = rect.x0 + (ix as f64 + 0.5) * hx;
                values.push(f(x, y));
            }
        }
        GridFunction::new(rect, nx, ny, values)
    }

    pub fn constant(rect: Rect, nx: usize, ny: usize, c: f64) -> Result<Self, NormError> {
        GridFunction::new(rect, nx, ny, vec![c; nx * ny])
    }

    pub fn hx(&self) -> f64 {
        self.rect.width() / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.rect.height() / self.ny as f64
    }

    pub fn half_diag(&self) -> f64 {
        0.5 * self.hx().hypot(self.hy())
    }

    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    pub fn center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.rect.x0 + (ix as f64 + 0.5) * self.hx(),
            self.rect.y0 + (iy as f64 + 0.5) * self.hy(),
        )
    }

    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.nx + ix]
    }

    /// Value of the cell containing (x, y); indices are clamped to the grid,
    /// so points a rounding error outside the rect read the nearest cell.
    pub fn value_at(&self, x: f64, y: f64) -> f64 {
        let ix = (((x - self.rect.x0) / self.hx()).floor() as i64)
            .clamp(0, self.nx as i64 - 1) as usize;
        let iy = (((y - self.rect.y0) / self.hy()).floor() as i64)
            .clamp(0, self.ny as i64 - 1) as usize;
        self.value(ix, iy)
    }

    /// ∫∫ f dA (signed).
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    pub fn l1(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.cell_area()
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Embeds the function in a larger grid padded with zero cells; the pad
    /// width is the smallest whole number of cells covering `margin`. Cell
    /// geometry is preserved, so the original values sit on aligned cells.
    pub fn extend_by_zero(&self, margin: f64) -> GridFunction {
        let kx = (margin / self.hx()).ceil().max(0.0) as usize;
        let ky = (margin / self.hy()).ceil().max(0.0) as usize;
        let nx = self.nx + 2 * kx;
        let ny = self.ny + 2 * ky;
        let rect = Rect::new(
            self.rect.x0 - kx as f64 * self.hx(),
            self.rect.x1 + kx as f64 * self.hx(),
            self.rect.y0 - ky as f64 * self.hy(),
            self.rect.y1 + ky as f64 * self.hy(),
        );
        let mut values = vec![0.0; nx * ny];
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                values[(iy + ky) * nx + (ix + kx)] = self.value(ix, iy);
            }
        }
        GridFunction {
            rect,
            nx,
            ny,
            values,
        }
    }

    /// CSV rendering: two comment lines documenting the geometry, a header,
    /// then one `x_index,y_index,value` row per cell in raster order.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# rect={},{},{},{}",
            self.rect.x0, self.rect.x1, self.rect.y0, self.rect.y1
        );
        let _ = writeln!(out, "# nx={} ny={}", self.nx, self.ny);
        out.push_str("x_index,y_index,value\n");
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let _ = writeln!(out, "{},{},{}", ix, iy, self.value(ix, iy));
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Oscillation
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub enum Region {
    Ball { cx: f64, cy: f64, r: f64 },
    Rect(Rect),
}

/// Max minus min of the cell values over the cells meeting the region.
/// Balls use the conservative center rule (center within r + half-diagonal);
/// rectangles use exact positive-area overlap.
pub fn osc(f: &GridFunction, region: &Region) -> Result<f64, NormError> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    match *region {
        Region::Ball { cx, cy, r } => {
            if !(r > 0.0) {
                return Err(NormError::EmptyRegion);
            }
            let reach = r + f.half_diag();
            let hx = f.hx();
            let hy = f.hy();
            // Index window containing every candidate center.
            let ix_lo = (((cx - reach) - f.rect.x0) / hx - 0.5).floor().max(0.0) as usize;
            let ix_hi = ((((cx + reach) - f.rect.x0) / hx - 0.5).ceil().max(0.0) as usize)
                .min(f.nx.saturating_sub(1));
            let iy_lo = (((cy - reach) - f.rect.y0) / hy - 0.5).floor().max(0.0) as usize;
            let iy_hi = ((((cy + reach) - f.rect.y0) / hy - 0.5).ceil().max(0.0) as usize)
                .min(f.ny.saturating_sub(1));
            if ix_lo >= f.nx || iy_lo >= f.ny {
                return Err(NormError::EmptyRegion);
            }
            let r2 = reach * reach;
            for iy in iy_lo..=iy_hi {
                let y = f.rect.y0 + (iy as f64 + 0.5) * hy;
                let dy2 = (y - cy) * (y - cy);
                for ix in ix_lo..=ix_hi {
                    let x = f.rect.x0 + (ix as f64 + 0.5) * hx;
                    if (x - cx) * (x - cx) + dy2 <= r2 {
                        let v = f.value(ix, iy);
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
            }
        }
        Region::Rect(r) => {
            let ox0 = r.x0.max(f.rect.x0);
            let ox1 = r.x1.min(f.rect.x1);
            let oy0 = r.y0.max(f.rect.y0);
            let oy1 = r.y1.min(f.rect.y1);
            if !(ox1 > ox0) || !(oy1 > oy0) {
                return Err(NormError::EmptyRegion);
            }
            let hx = f.hx();
            let hy = f.hy();
            // Cells with positive-area overlap: strict interior index range.
            let ix_lo = ((ox0 - f.rect.x0) / hx).floor().max(0.0) as usize;
            let ix_hi = (((ox1 - f.rect.x0) / hx).ceil() as usize).min(f.nx);
            let iy_lo = ((oy0 - f.rect.y0) / hy).floor().max(0.0) as usize;
            let iy_hi = (((oy1 - f.rect.y0) / hy).ceil() as usize).min(f.ny);
            for iy in iy_lo..iy_hi {
                let cy0 = f.rect.y0 + iy as f64 * hy;
                if !(cy0 + hy > oy0 && cy0 < oy1) {
                    continue;
                }
                for ix in ix_lo..ix_hi {
                    let cx0 = f.rect.x0 + ix as f64 * hx;
                    if !(cx0 + hx > ox0 && cx0 < ox1) {
                        continue;
                    }
                    let v = f.value(ix, iy);
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
        }
    }
    if hi < lo {
        return Err(NormError::EmptyRegion);
    }
    Ok(hi - lo)
}

/// Exact-intersection oscillation over a ball: a cell counts iff the closed
/// cell rectangle truly meets the closed ball. Slower than the conservative
/// rule; used as an independent cross-check.
#[cfg(test)]
pub(crate) fn osc_ball_exact(f: &GridFunction, cx: f64, cy: f64, r: f64) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let hx = f.hx();
    let hy = f.hy();
    for iy in 0..f.ny {
        let y0 = f.rect.y0 + iy as f64 * hy;
        // Distance from center to the cell's y-interval.
        let dyv = if cy < y0 {
            y0 - cy
        } else if cy > y0 + hy {
            cy - (y0 + hy)
        } else {
            0.0
        };
        if dyv > r {
            continue;
        }
        for ix in 0..f.nx {
            let x0 = f.rect.x0 + ix as f64 * hx;
            let dxv = if cx < x0 {
                x0 - cx
            } else if cx > x0 + hx {
                cx - (x0 + hx)
            } else {
                0.0
            };
            if dxv * dxv + dyv * dyv <= r * r {
                let v = f.value(ix, iy);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if hi < lo {
        0.0
    } else {
        hi - lo
    }
}

// ---------------------------------------------------------------------------
// Norm parameters and ε ladders
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct NormParams {
    /// Hölder exponent in (0, 1].
    pub alpha: f64,
    /// Ball-radius cap for the Ω-norm's oscillation term; must stay below
    /// γ·eps1 (checked where γ is known).
    pub eps0: f64,
    /// Ball-radius cap for the plane seminorm.
    pub eps1: f64,
    /// Number of ε values on the geometric scan ladder.
    pub eps_samples: usize,
}

impl NormParams {
    pub fn new(alpha: f64, eps0: f64, eps1: f64, eps_samples: usize) -> Result<Self, NormError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(NormError::BadParams(format!("alpha = {alpha} not in (0, 1]")));
        }
        if !(eps0 > 0.0) || !(eps1 > 0.0) {
            return Err(NormError::BadParams("eps0 and eps1 must be positive".into()));
        }
        if !(eps0 < eps1) {
            return Err(NormError::BadParams(format!(
                "need eps0 < eps1, got {eps0} >= {eps1}"
            )));
        }
        if eps_samples < 2 {
            return Err(NormError::BadParams("need at least 2 scan values".into()));
        }
        Ok(NormParams {
            alpha,
            eps0,
            eps1,
            eps_samples,
        })
    }
}

/// Geometric ladder from `floor` to just below `top`.
fn eps_ladder(floor: f64, top: f64, n: usize) -> Result<Vec<f64>, NormError> {
    let top = top * (1.0 - 1e-9);
    if !(floor > 0.0) || floor >= top {
        return Err(NormError::BadParams(format!(
            "scan range empty: cell half-diagonal {floor} reaches the radius cap {top}; refine \
             the grid or raise the cap"
        )));
    }
    let ratio = (top / floor).powf(1.0 / (n - 1) as f64);
    Ok((0..n).map(|j| floor * ratio.powi(j as i32)).collect())
}

/// ε^{−α} · Σ_cells osc(f, B_ε(cell center)) · cell-area — one rung of the
/// seminorm scan. Empty balls contribute zero oscillation.
pub fn seminorm_at(f: &GridFunction, eps: f64, alpha: f64) -> f64 {
    let mut acc = 0.0;
    for iy in 0..f.ny {
        for ix in 0..f.nx {
            let (cx, cy) = f.center(ix, iy);
            let o = osc(f, &Region::Ball { cx, cy, r: eps }).unwrap_or(0.0);
            acc += o;
        }
    }
    eps.powf(-alpha) * acc * f.cell_area()
}

/// |f|_α: ladder maximum over ε ∈ (0, eps1) of ε^{−α}·∫ osc(f, B_ε(x)) dx,
/// the integral discretized at cell centers. The function should carry a
/// zero margin of width ≥ eps1 inside its rect for the plane integral to be
/// exact (`extend_by_zero` arranges this).
pub fn seminorm_alpha(f: &GridFunction, p: &NormParams) -> Result<f64, NormError> {
    let ladder = eps_ladder(f.half_diag(), p.eps1, p.eps_samples)?;
    Ok(ladder
        .iter()
        .map(|&e| seminorm_at(f, e, p.alpha))
        .fold(0.0, f64::max))
}

/// ‖f‖_α = |f|_α + ‖f‖_{L¹}.
pub fn norm_alpha(f: &GridFunction, p: &NormParams) -> Result<f64, NormError> {
    Ok(seminorm_alpha(f, p)? + f.l1())
}

/// ‖g‖_{α,L} = N(g, α, L) + 16(1+γ)·ε₀^{1−α}·L·‖g‖_∞ + ‖g‖_{L¹}, where
/// N is the seminorm scan restricted to ε ∈ (0, eps0) with balls clipped to
/// Ω (g's own grid). The sup and L¹ norms of the represented function are
/// supplied by the caller (the grid's own values work:
/// `g.sup_abs()`, `g.l1()`).
pub fn norm_alpha_l(
    g: &GridFunction,
    p: &NormParams,
    l: f64,
    gamma: f64,
    sup_norm: f64,
    l1_norm: f64,
) -> Result<f64, NormError> {
    if !(p.eps0 < gamma * p.eps1) {
        return Err(NormError::BadParams(format!(
            "need eps0 < gamma * eps1 = {}, got {}",
            gamma * p.eps1,
            p.eps0
        )));
    }
    let ladder = eps_ladder(g.half_diag(), p.eps0, p.eps_samples)?;
    let n_term = ladder
        .iter()
        .map(|&e| seminorm_at(g, e, p.alpha))
        .fold(0.0, f64::max);
    Ok(n_term + 16.0 * (1.0 + gamma) * p.eps0.powf(1.0 - p.alpha) * l * sup_norm + l1_norm)
}

// ---------------------------------------------------------------------------
// Horizontal lifts
// ---------------------------------------------------------------------------

/// Lift of a 1D function to Ω: (x, y) ↦ H(x). The vertical resolution is
/// chosen automatically so cells are near-square (a single flat row would
/// blow up the half-diagonal and with it every conservative ball rule).
pub fn tr_lift(h: &Grid1D, sys: &InducedSystem) -> GridFunction {
    let omega = sys.omega;
    let nx = h.n();
    let hx = omega.width() / nx as f64;
    let ny = ((omega.height() / hx).round() as usize).max(1);
    let mut values = Vec::with_capacity(nx * ny);
    for _iy in 0..ny {
        values.extend_from_slice(&h.values);
    }
    GridFunction {
        rect: omega,
        nx,
        ny,
        values,
    }
}

/// 1D oscillation of `h` over the cells whose centers lie within
/// `r + h/2` of `x` (the 1D analogue of the conservative ball rule).
pub(crate) fn osc1(h: &Grid1D, x: f64, r: f64) -> f64 {
    let reach = r + 0.5 * h.h();
    let step = h.h();
    let i_lo = (((x - reach) - h.x0) / step - 0.5).ceil().max(0.0) as usize;
    let i_hi = ((((x + reach) - h.x0) / step - 0.5).floor().max(0.0) as usize)
        .min(h.n().saturating_sub(1));
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in i_lo..=i_hi {
        if (h.center(i) - x).abs() <= reach {
            let v = h.values[i];
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if hi < lo {
        0.0
    } else {
        hi - lo
    }
}

/// ‖Tr H‖_{α,Ω} evaluated directly on the 1D data:
/// 2γL·sup_ε ε^{−α}·∫ osc(H, [x−ε, x+ε] ∩ [−L, L]) dx
/// + 16(1+γ)·L·ε₀^{1−α}·‖H‖_∞ + 2γL·‖H‖_{L¹}.
pub fn tr_norm(h: &Grid1D, p: &NormParams, sys: &InducedSystem) -> Result<f64, NormError> {
    let l = sys.spec.l;
    let gamma = sys.gamma;
    if !(p.eps0 < gamma * p.eps1) {
        return Err(NormError::BadParams(format!(
            "need eps0 < gamma * eps1 = {}, got {}",
            gamma * p.eps1,
            p.eps0
        )));
    }
    let ladder = eps_ladder(0.5 * h.h(), p.eps0, p.eps_samples)?;
    let step = h.h();
    let osc_sup = ladder
        .iter()
        .map(|&e| {
            let total: f64 = (0..h.n()).map(|i| osc1(h, h.center(i), e)).sum();
            e.powf(-p.alpha) * total * step
        })
        .fold(0.0, f64::max);
    Ok(2.0 * gamma * l * osc_sup
        + 16.0 * (1.0 + gamma) * l * p.eps0.powf(1.0 - p.alpha) * h.sup_abs()
        + 2.0 * gamma * l * h.l1())
}
