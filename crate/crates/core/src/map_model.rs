//! Declarative model of a piecewise map φ on the square [-L, L]² and the
//! induced planar system T on the flattened rectangle Ω = [-L, L] × [-γL, γL].
//!
//! A map is a finite list of pieces. Each piece owns an open region of the
//! square cut out by strict inequalities g_i(u, v) < 0 and carries a branch
//! formula valid on a collar of radius `eps1` around the region's closure.
//! The induced system applies the flattening (u, v) ↦ (u, γv) with γ = 1/√A
//! and steps T_k(x, y) = (y/γ, γ·φ_k(x, y/γ)).
//!
//! Orbits of the second-order recurrence X_{n+2} = φ(X_n, X_{n+1}) correspond
//! to T-orbits of Z_n = (X_n, γ·X_{n+1}). `InducedSystem::orbit_from_pair`
//! generates the planar orbit by iterating the scalar pair internally and
//! flattening on emit, so the correspondence is exact in floating point;
//! re-applying `step` to an already-flattened point instead pays a y/γ
//! round-trip of about one ulp, which matters for chaotic orbits.

use std::sync::Arc;
use thiserror::Error;

/// Scalar field on the plane, boxed so built-in families and hand-written
/// test pieces share one representation.
pub type RealFn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Gradient field `(∂/∂u, ∂/∂v)`.
pub type GradFn2 = Arc<dyn Fn(f64, f64) -> (f64, f64) + Send + Sync>;
/// Optional fast piece lookup: proposes a candidate piece index for a point.
/// The candidate is always verified against the piece's inequalities, so a
/// wrong hint costs a fallback scan but never wrong membership.
pub type Locator = Arc<dyn Fn(f64, f64) -> Option<usize> + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Closed axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("point ({0}, {1}) lies outside the declared domain")]
    OutOfDomain(f64, f64),
    #[error("no piece contains ({0}, {1}); the point sits on the boundary set")]
    NoPiece(f64, f64),
    #[error("invalid map data: {0}")]
    InvalidBounds(String),
    #[error("orbit halted on the boundary set while computing step {step}")]
    Halted { step: usize },
}

/// One strict inequality g(u, v) < 0 together with its gradient, used both
/// for membership and for boundary-regularity sampling.
pub struct Constraint {
    pub g: RealFn2,
    pub grad: GradFn2,
}

impl Constraint {
    pub fn new(
        g: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        grad: impl Fn(f64, f64) -> (f64, f64) + Send + Sync + 'static,
    ) -> Self {
        Constraint {
            g: Arc::new(g),
            grad: Arc::new(grad),
        }
    }
}

/// Branch formula attached to a piece, with its declared expansion data:
/// `declared_a` lower-bounds |∂φ/∂u| and `declared_m` upper-bounds |∂φ/∂v|
/// on the piece's collar; `holder_c` bounds the gradient's Hölder constant.
pub struct Branch {
    pub value: RealFn2,
    pub gradient: GradFn2,
    pub declared_a: f64,
    pub declared_m: f64,
    pub holder_c: f64,
}

pub struct Piece {
    /// Identifier within the family (may be negative, e.g. strip numbers).
    pub index: i64,
    /// Membership predicate: the point is inside iff every g_i < 0 strictly.
    pub membership: Vec<Constraint>,
    pub branch: Branch,
}

impl Piece {
    pub fn contains(&self, u: f64, v: f64) -> bool {
        self.membership.iter().all(|c| (c.g)(u, v) < 0.0)
    }
}

/// Which coefficient family generated the declared map. Exact Ulam assembly
/// and fast piece lookup key off this; `Custom` falls back to generic paths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Family {
    Custom,
    /// φ_n(u, v) = a·v + b·u − 2nL on diagonal strips.
    LinearStrips { a: i64, b: i64 },
    /// φ_k(u, v) = 2v − 2f_k(u) − 1 between graphs of f_k = c2·u² + c1·u + k − 1/2.
    QuadraticStrips { c2: f64, c1: f64 },
}

pub struct PiecewiseMapSpec {
    /// Half-width of the square domain.
    pub l: f64,
    /// Hölder exponent of the branch gradients, in (0, 1].
    pub alpha: f64,
    /// Collar radius around each piece on which the branch bounds hold.
    pub eps1: f64,
    /// Bound on the number of boundary arcs a short horizontal segment meets.
    pub arc_crossings: u32,
    pub pieces: Vec<Piece>,
    pub family: Family,
    locator: Option<Locator>,
}

impl std::fmt::Debug for PiecewiseMapSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PiecewiseMapSpec")
            .field("l", &self.l)
            .field("alpha", &self.alpha)
            .field("eps1", &self.eps1)
            .field("arc_crossings", &self.arc_crossings)
            .field("pieces", &self.pieces.len())
            .field("family", &self.family)
            .finish_non_exhaustive()
    }
}

impl PiecewiseMapSpec {
    pub fn new(
        l: f64,
        alpha: f64,
        eps1: f64,
        arc_crossings: u32,
        pieces: Vec<Piece>,
        family: Family,
    ) -> Result<Self, MapError> {
        if !(l > 0.0) || !l.is_finite() {
            return Err(MapError::InvalidBounds(format!("L must be positive, got {l}")));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(MapError::InvalidBounds(format!(
                "alpha must lie in (0, 1], got {alpha}"
            )));
        }
        if !(eps1 > 0.0) || !eps1.is_finite() {
            return Err(MapError::InvalidBounds(format!(
                "eps1 must be positive, got {eps1}"
            )));
        }
        if arc_crossings == 0 {
            return Err(MapError::InvalidBounds("Y must be at least 1".into()));
        }
        if pieces.is_empty() {
            return Err(MapError::InvalidBounds("a map needs at least one piece".into()));
        }
        for p in &pieces {
            if !(p.branch.declared_a > 0.0) || !(p.branch.declared_m >= 0.0) {
                return Err(MapError::InvalidBounds(format!(
                    "piece {}: declared bounds must satisfy A > 0, M >= 0",
                    p.index
                )));
            }
            if !(p.branch.holder_c >= 0.0) {
                return Err(MapError::InvalidBounds(format!(
                    "piece {}: Hölder constant must be nonnegative",
                    p.index
                )));
            }
        }
        Ok(PiecewiseMapSpec {
            l,
            alpha,
            eps1,
            arc_crossings,
            pieces,
            family,
            locator: None,
        })
    }

    pub fn with_locator(mut self, locator: Locator) -> Self {
        self.locator = Some(locator);
        self
    }

    pub fn square(&self) -> Rect {
        Rect::new(-self.l, self.l, -self.l, self.l)
    }

    /// Smallest declared expansion constant over the pieces (the global A).
    pub fn min_declared_a(&self) -> f64 {
        self.pieces
            .iter()
            .map(|p| p.branch.declared_a)
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest declared transverse bound over the pieces (the global M).
    pub fn max_declared_m(&self) -> f64 {
        self.pieces
            .iter()
            .map(|p| p.branch.declared_m)
            .fold(0.0, f64::max)
    }

    /// Index (into `pieces`) of the piece containing (u, v), if any.
    /// The locator hint is tried first and always verified; membership is
    /// decided solely by the strict inequalities.
    pub fn locate(&self, u: f64, v: f64) -> Option<usize> {
        if let Some(loc) = &self.locator {
            if let Some(i) = loc(u, v) {
                if i < self.pieces.len() && self.pieces[i].contains(u, v) {
                    return Some(i);
                }
            }
        }
        self.pieces.iter().position(|p| p.contains(u, v))
    }

    /// φ at a point of the closed square. Boundary-set points (members of no
    /// piece) report `NoPiece`.
    pub fn evaluate_phi(&self, u: f64, v: f64) -> Result<f64, MapError> {
        if u.abs() > self.l || v.abs() > self.l || !u.is_finite() || !v.is_finite() {
            return Err(MapError::OutOfDomain(u, v));
        }
        match self.locate(u, v) {
            Some(i) => Ok((self.pieces[i].branch.value)(u, v)),
            None => Err(MapError::NoPiece(u, v)),
        }
    }
}

/// Scalar orbit X_0, …, X_n of X_{k+2} = φ(X_k, X_{k+1}).
///
/// Returns n+1 values, or `Halted { step }` when the pair (X_{step-2},
/// X_{step-1}) lies on the boundary set so X_step is undefined.
pub fn iterate_process(
    spec: &PiecewiseMapSpec,
    x0: f64,
    x1: f64,
    n: usize,
) -> Result<Vec<f64>, MapError> {
    if x0.abs() > spec.l || !x0.is_finite() {
        return Err(MapError::OutOfDomain(x0, x1));
    }
    if x1.abs() > spec.l || !x1.is_finite() {
        return Err(MapError::OutOfDomain(x0, x1));
    }
    let mut xs = Vec::with_capacity(n + 1);
    xs.push(x0);
    if n >= 1 {
        xs.push(x1);
    }
    for k in 2..=n {
        let (a, b) = (xs[k - 2], xs[k - 1]);
        let phi = spec.evaluate_phi(a, b).map_err(|e| match e {
            MapError::NoPiece(_, _) => MapError::Halted { step: k },
            other => other,
        })?;
        xs.push(phi);
    }
    Ok(xs)
}

/// The induced planar system on Ω = [-L, L] × [-γL, γL].
pub struct InducedSystem {
    pub spec: Arc<PiecewiseMapSpec>,
    pub gamma: f64,
    pub omega: Rect,
}

/// Builds the induced system; requires the global expansion constant A > 1
/// so that γ = 1/√A < 1.
pub fn induce(spec: Arc<PiecewiseMapSpec>) -> Result<InducedSystem, MapError> {
    let a = spec.min_declared_a();
    if !(a > 1.0) {
        return Err(MapError::InvalidBounds(format!(
            "induced system needs A > 1, but min declared A = {a}"
        )));
    }
    let gamma = 1.0 / a.sqrt();
    let l = spec.l;
    let omega = Rect::new(-l, l, -gamma * l, gamma * l);
    Ok(InducedSystem { spec, gamma, omega })
}

impl InducedSystem {
    /// (u, v) on the square ↦ (u, γv) on Ω.
    pub fn flatten(&self, u: f64, v: f64) -> Point {
        Point::new(u, self.gamma * v)
    }

    /// Inverse of `flatten`; costs one rounding.
    pub fn unflatten(&self, p: Point) -> (f64, f64) {
        (p.x, p.y / self.gamma)
    }

    /// Membership of an Ω-point in the flattened piece image U_k
    /// (k = index into `spec.pieces`).
    pub fn piece_flat_contains(&self, k: usize, p: Point) -> bool {
        let (u, v) = self.unflatten(p);
        self.spec.pieces[k].contains(u, v)
    }

    /// One application of T: (x, y) ↦ (y/γ, γ·φ(x, y/γ)).
    pub fn step(&self, p: Point) -> Result<Point, MapError> {
        if !self.omega.contains(p) {
            return Err(MapError::OutOfDomain(p.x, p.y));
        }
        let mut v = p.y / self.gamma;
        // Flattening dust: y = ±γL can unflatten a hair beyond ±L.
        if v.abs() > self.spec.l && v.abs() <= self.spec.l * (1.0 + 1e-13) {
            v = v.signum() * self.spec.l;
        }
        let phi = self.spec.evaluate_phi(p.x, v)?;
        Ok(Point::new(v, self.gamma * phi))
    }

    /// Planar orbit Z_0, …, Z_n from the scalar pair (x0, x1), with
    /// Z_k = (X_k, γ·X_{k+1}) bit-for-bit (flattening applied on emit).
    pub fn orbit_from_pair(&self, x0: f64, x1: f64, n: usize) -> Result<Vec<Point>, MapError> {
        let xs = iterate_process(&self.spec, x0, x1, n + 1).map_err(|e| match e {
            MapError::Halted { step } => MapError::Halted {
                step: step.saturating_sub(1),
            },
            other => other,
        })?;
        Ok((0..=n)
            .map(|k| Point::new(xs[k], self.gamma * xs[k + 1]))
            .collect())
    }
}
