//! Centralized numeric tolerances and guard thresholds.
//!
//! Every comparison tolerance in the crate lives here so that a tolerance is
//! a reviewable decision, not a magic number at the call site. Relative
//! tolerances are applied against `max(1, scale)` of the inputs unless noted.

/// Hermiticity defect allowed before an operator is rejected as input to an
/// eigendecomposition or propagator build. Relative to `max(1, max|entry|)`.
pub const HERMITICITY_TOL: f64 = 1e-12;

/// Residual bound for every eigendecomposition: `||A V - V L||_F` must stay
/// below this times `max(1, ||A||_F)`.
pub const EIGH_RESIDUAL_TOL: f64 = 1e-10;

/// Unitarity defect allowed for propagators (norm preservation per step and
/// `||U U^H - I||_max` in direct checks).
pub const UNITARITY_TOL: f64 = 1e-10;

/// Trajectory state invariants: Hermiticity of the reduced density.
pub const RHO_HERMITICITY_TOL: f64 = 1e-10;
/// Trajectory state invariants: allowed deviation of the trace from 1.
pub const RHO_TRACE_TOL: f64 = 1e-9;
/// Trajectory state invariants: most negative admissible eigenvalue.
pub const RHO_EIGENVALUE_FLOOR: f64 = -1e-9;

/// Population allowed on the top level of any truncated Fock ladder during a
/// propagation before the run aborts with `TruncationTooSmall`.
pub const FOCK_TOP_LEVEL_TOL: f64 = 1e-8;

/// Extra Fock levels demanded above the classical excitation estimate when a
/// model is built (`n_max >= alpha0 + 2*(2j) + FOCK_SAFETY_MARGIN`).
pub const FOCK_SAFETY_MARGIN: usize = 5;

/// Threshold on `||[H_E, H_SE]||` (relative to the product of the factor
/// norms) below which the pair is classified as commuting.
pub const COMMUTATOR_ZERO_TOL: f64 = 1e-10;

/// Residual of `C - kappa*I` on the guarded sub-block, relative to
/// `max(1, ||C_sub||_F)`, below which the commutator counts as scalar.
pub const SCALAR_COMMUTATOR_TOL: f64 = 1e-8;

/// Environment purity: `||rho_E^2 - rho_E||_max` bound for a state declared
/// pure, and the second-eigenvalue bound for the dynamical rank-1 check.
pub const ENV_PURITY_TOL: f64 = 1e-10;
pub const ENV_RANK_ONE_TOL: f64 = 1e-8;

/// Dynamical rank-1 probe: window end and number of probe times.
pub const ENV_PROBE_T_END: f64 = 10.0;
pub const ENV_PROBE_COUNT: usize = 16;

/// Off-diagonal magnitude under which a reduced density counts as diagonal.
pub const OFFDIAG_ZERO_TOL: f64 = 1e-10;

/// Coherence classification: minimum R^2 of the quadratic-in-t log fit for
/// the gaussian-decay class.
pub const GAUSSIAN_FIT_MIN_R2: f64 = 0.99;
/// Points below this fraction of the initial coherence are excluded from the
/// gaussian log fit (they sit at the rounding floor).
pub const GAUSSIAN_FIT_FLOOR_REL: f64 = 1e-14;
/// Minimum number of points the gaussian log fit must retain.
pub const GAUSSIAN_FIT_MIN_POINTS: usize = 8;
/// The final coherence must drop below this fraction of the initial value
/// before a gaussian fit counts as decay at all.
pub const GAUSSIAN_FINAL_FRACTION: f64 = 0.8;
/// Coherence classification: revival ratio (late-window max over initial)
/// required for the oscillatory class.
pub const REVIVAL_RATIO_MIN: f64 = 0.1;
/// Coherence classification: fraction of the initial coherence the final
/// value must drop below for the monotone-decay class.
pub const MONOTONE_FINAL_FRACTION: f64 = 0.01;
/// Slack allowed on "non-increasing" for the monotone-decay class, and the
/// magnitude a difference must exceed (relative to the series maximum) to
/// count as a derivative sign change.
pub const MONOTONE_SLACK: f64 = 1e-9;
pub const DERIVATIVE_NOISE_FLOOR: f64 = 1e-9;

/// Minimum number of samples a coherence series must have.
pub const COHERENCE_MIN_SAMPLES: usize = 32;
/// Minimum number of characteristic periods the series must span (applied
/// when the trajectory declares a characteristic period).
pub const COHERENCE_MIN_PERIODS: f64 = 3.0;

/// Closed-form element sums: terms are accumulated in log-magnitude/phase
/// form; factorial lookups beyond this index raise `IndexOverflow`.
pub const LOG_FACTORIAL_LIMIT: usize = 4096;
/// Factorials up to here are also exposed in linear scale.
pub const LINEAR_FACTORIAL_LIMIT: usize = 170;

/// Adaptive environment-overlap sums: relative tail bound at which the sum
/// stops, the cap on summed terms, and the tail bound that must be reached
/// before the cap (otherwise `TailTooLarge`).
pub const OVERLAP_TAIL_REL: f64 = 1e-12;
pub const OVERLAP_TERM_CAP: usize = 512;

/// Volterra solver: `h * (||e_s|| + integral ||v||)` must stay below this.
pub const VOLTERRA_STEP_GUARD: f64 = 0.1;
/// Condition-number estimate above which `G(t)` counts as singular.
pub const GREENS_CONDITION_LIMIT: f64 = 1e12;
/// Spectral-density tail (relative to peak) allowed at the edge of a
/// tabulated grid before the Fourier transform is refused.
pub const SPECTRAL_TAIL_TOL: f64 = 1e-8;

/// Default Zassenhaus expansion order cap.
pub const ZASSENHAUS_MAX_ORDER: usize = 8;

/// Two-path identity (super-matrix contraction vs direct partial trace).
pub const TWO_PATH_TOL: f64 = 1e-10;
/// Closed form vs oracle comparison tolerance.
pub const CLOSED_FORM_TOL: f64 = 1e-6;

/// Significant digits written to CSV/JSON number fields (16 fractional
/// digits in scientific notation = 17 significant digits).
pub const CSV_PRECISION: usize = 16;
