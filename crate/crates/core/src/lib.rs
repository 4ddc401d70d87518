//! Toolkit for a class of planar piecewise expanding maps.
//!
//! A process X_{n+1} = φ(X_n, X_{n+1})… is declared as a piecewise map φ on
//! the square [−L, L]², cut into finitely many pieces with smooth boundary
//! arcs and one expanding branch per piece. The toolkit
//!
//! * builds the induced two-dimensional system T on the flattened rectangle
//!   Ω ([`map_model`]),
//! * verifies the structural hypotheses behind the spectral-gap argument —
//!   derivative bounds, gradient Hölder continuity, segment geometry,
//!   dilatance — by randomized falsification ([`hypotheses`]),
//! * works with the anisotropic α-Hölder norms the contraction runs in
//!   ([`norms`]),
//! * discretizes the transfer operator by Ulam's method and estimates the
//!   invariant density ([`transfer`]),
//! * estimates correlation decay rates and the constants entering the
//!   quantitative decay bound ([`correlation`]),
//! * ships two ready-made example families and their ground-truth facts
//!   ([`examples`]), and
//! * exposes all of it through a deterministic command-line interface
//!   ([`config`], [`cli`]).
//!
//! Everything randomized takes an explicit seed and yields byte-identical
//! results across runs and thread counts.

pub mod cli;
pub mod config;
pub mod correlation;
pub mod examples;
pub mod hypotheses;
pub mod map_model;
pub mod norms;
pub mod transfer;

pub use cli::main_entry;
pub use config::{parse_lags, ConfigError, FileConfig, Observable, Overrides, RunConfig};
pub use correlation::{
    build_decay_curve, covariance_bound_factor, covariance_mc, covariance_op, fit_decay,
    sample_stationary, BoundFactor, CorrError, CovEstimate, DecayCurve, DecayFit,
    ObservablePair,
};
pub use examples::{build_linear, build_nonlinear, ExampleId, GalleryError};
pub use hypotheses::{
    compute_eta, compute_s, full_report, CheckConfig, CheckOutcome, CheckStatus,
    HypothesisReport, Witness,
};
pub use map_model::{
    induce, InducedSystem, MapError, PiecewiseMapSpec, Point, Rect,
};
pub use transfer::{
    build_ulam, invariant_density, marginal_density, peripheral_spectrum, pf_apply_exact,
    PfEval, SpectralReport, TransferError, UlamOperator,
};
