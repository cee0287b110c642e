//! Markovianity and coherence classification: measurements on Hamiltonian
//! pairs (the commutator criterion), on trajectories (off-diagonal decay
//! patterns), and per-model verdict records combining both with a dynamical
//! environment-purity probe.

use crate::closedform::{model1_rho_diag, ClosedFormError};
use crate::constants::{
    COMMUTATOR_ZERO_TOL, COHERENCE_MIN_PERIODS, COHERENCE_MIN_SAMPLES, DERIVATIVE_NOISE_FLOOR,
    ENV_PROBE_COUNT, ENV_PROBE_T_END, ENV_RANK_ONE_TOL, GAUSSIAN_FINAL_FRACTION,
    GAUSSIAN_FIT_FLOOR_REL, GAUSSIAN_FIT_MIN_POINTS, GAUSSIAN_FIT_MIN_R2, MONOTONE_FINAL_FRACTION,
    MONOTONE_SLACK, OFFDIAG_ZERO_TOL, REVIVAL_RATIO_MIN, SCALAR_COMMUTATOR_TOL, TWO_PATH_TOL,
};
use crate::evolution::{EvolutionError, Trajectory};
use crate::greens::SpectralDensity;
use crate::linalg::{
    commutator, eigh, opnorm, HamiltonianEigen, LinalgError, OperatorMatrix, StateVector,
};
use crate::models::{
    MeasurementData, ModelError, ModelInstance, ModelKind, ModelTag, TensorModel,
};
use crate::numeric::linear_fit;
use crate::C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("operator dimensions differ: {left}x{left} vs {right}x{right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("coherence series needs at least {need} samples, got {got}")]
    InsufficientSamples { got: usize, need: usize },
    #[error(
        "coherence series spans {span:.3} but needs at least {need:.3} \
         (three characteristic periods)"
    )]
    InsufficientSpan { span: f64, need: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    ClosedForm(#[from] ClosedFormError),
}

/// How the commutator of an environment/interaction pair is classified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommutatorClass {
    Commuting,
    ScalarCommutator,
    General,
}

impl CommutatorClass {
    fn severity(self) -> u8 {
        match self {
            CommutatorClass::Commuting => 0,
            CommutatorClass::ScalarCommutator => 1,
            CommutatorClass::General => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CommutatorClass::Commuting => "commuting",
            CommutatorClass::ScalarCommutator => "scalar-commutator",
            CommutatorClass::General => "general",
        }
    }
}

/// Measured facts about `[H_E, H_SE]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommutatorReport {
    /// Spectral norm of the commutator.
    pub norm_ch: f64,
    /// Scalar nearest to the commutator in Frobenius distance, fitted on the
    /// truncation-guarded leading sub-block (the full-space trace of any
    /// commutator vanishes identically, so the full-space fit is always 0).
    pub nearest_scalar: C64,
    /// Relative Frobenius residual of `C - nearest_scalar*I` on that block.
    pub residual: f64,
    pub classification: CommutatorClass,
}

/// Classify `[h_e, h_se]`: commuting when the commutator norm is negligible
/// against the product of the factor norms, scalar when the guarded sub-block
/// is a multiple of the identity to high relative precision, general
/// otherwise. The guard drops the trailing eighth of the rows and columns
/// (at least one, keeping at least two) where truncated ladder products pile
/// up their edge artifacts.
pub fn commutator_report(
    h_e: &OperatorMatrix,
    h_se: &OperatorMatrix,
) -> Result<CommutatorReport, DiagnosticsError> {
    if h_e.nrows() != h_e.ncols() || h_se.nrows() != h_se.ncols() || h_e.nrows() != h_se.nrows() {
        return Err(DiagnosticsError::DimensionMismatch {
            left: h_e.nrows(),
            right: h_se.nrows(),
        });
    }
    let c = commutator(h_e, h_se);
    let norm_ch = opnorm(&c);
    let dim = c.nrows();
    let guard = (dim / 8).max(1);
    let sub_dim = dim.saturating_sub(guard).max(2.min(dim));
    let mut trace = C64::new(0.0, 0.0);
    for k in 0..sub_dim {
        trace += c[(k, k)];
    }
    let nearest_scalar = trace / sub_dim as f64;
    let mut residual_sq = 0.0f64;
    let mut block_sq = 0.0f64;
    for i in 0..sub_dim {
        for j in 0..sub_dim {
            let v = c[(i, j)];
            block_sq += v.norm_sqr();
            let d = if i == j { v - nearest_scalar } else { v };
            residual_sq += d.norm_sqr();
        }
    }
    let residual = residual_sq.sqrt() / block_sq.sqrt().max(1.0);
    let scale = opnorm(h_e) * opnorm(h_se) + 1.0;
    let classification = if norm_ch <= COMMUTATOR_ZERO_TOL * scale {
        CommutatorClass::Commuting
    } else if residual <= SCALAR_COMMUTATOR_TOL {
        CommutatorClass::ScalarCommutator
    } else {
        CommutatorClass::General
    };
    Ok(CommutatorReport {
        norm_ch,
        nearest_scalar,
        residual,
        classification,
    })
}

/// Decay pattern of the off-diagonal part of a reduced-density series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoherenceClass {
    ConstantDiagonal,
    GaussianDecay,
    MonotoneDecay,
    Oscillatory,
    Inconclusive,
}

impl CoherenceClass {
    pub fn as_str(self) -> &'static str {
        match self {
            CoherenceClass::ConstantDiagonal => "constant-diagonal",
            CoherenceClass::GaussianDecay => "gaussian-decay",
            CoherenceClass::MonotoneDecay => "monotone-decay",
            CoherenceClass::Oscillatory => "oscillatory",
            CoherenceClass::Inconclusive => "inconclusive",
        }
    }
}

/// Off-diagonal coherence measures of a trajectory plus their classification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub times: Vec<f64>,
    /// `sum_{i != j} |rho_ij|` per time (coherence monotone).
    pub l1_offdiag: Vec<f64>,
    /// `max_{i != j} |rho_ij|` per time (classification measure).
    pub max_offdiag: Vec<f64>,
    pub classification: CoherenceClass,
    /// Max over the final third of the series divided by the initial value.
    pub revival_ratio: f64,
    /// Slope of `log(max_offdiag)` against `t^2/2` when the series is
    /// classified as gaussian decay.
    pub fitted_kappa: Option<f64>,
}

pub(crate) fn offdiag_measures(rho: &OperatorMatrix) -> (f64, f64) {
    let mut l1 = 0.0f64;
    let mut max = 0.0f64;
    for i in 0..rho.nrows() {
        for j in 0..rho.ncols() {
            if i != j {
                let mag = rho[(i, j)].norm();
                l1 += mag;
                max = max.max(mag);
            }
        }
    }
    (l1, max)
}

/// Count derivative sign changes, ignoring steps smaller than the noise
/// floor relative to the series maximum.
fn derivative_sign_changes(series: &[f64]) -> usize {
    let scale = series.iter().copied().fold(0.0f64, f64::max).max(1e-300);
    let mut previous: Option<bool> = None;
    let mut changes = 0usize;
    for pair in series.windows(2) {
        let step = pair[1] - pair[0];
        if step.abs() <= DERIVATIVE_NOISE_FLOOR * scale {
            continue;
        }
        let rising = step > 0.0;
        if let Some(prev) = previous {
            if prev != rising {
                changes += 1;
            }
        }
        previous = Some(rising);
    }
    changes
}

/// Classify the off-diagonal decay of a trajectory. The classification is a
/// pure function of the series, applied in fixed priority order:
///
/// 1. constant-diagonal — every off-diagonal magnitude stays below 1e-10;
/// 2. gaussian-decay — `log(max_offdiag)` fits `a + kappa t^2/2` with
///    negative slope, `R^2 >= 0.99`, and an actual drop by the end;
/// 3. monotone-decay — non-increasing within slack, final below 1% of the
///    initial value;
/// 4. oscillatory — revival ratio at least 0.1 with at least two derivative
///    sign changes;
/// 5. inconclusive.
///
/// `characteristic_period` is the model's natural oscillation period when it
/// has one; the series must then span at least three periods. Pass `None`
/// for dynamics whose validity window is set by something other than a
/// period (for example a truncation-limited gaussian-decay window).
pub fn coherence_series(
    traj: &Trajectory,
    characteristic_period: Option<f64>,
) -> Result<CoherenceReport, DiagnosticsError> {
    let n = traj.times.len().min(traj.states.len());
    if n < COHERENCE_MIN_SAMPLES {
        return Err(DiagnosticsError::InsufficientSamples {
            got: n,
            need: COHERENCE_MIN_SAMPLES,
        });
    }
    if let Some(period) = characteristic_period {
        let span = traj.times[n - 1] - traj.times[0];
        let need = COHERENCE_MIN_PERIODS * period.abs();
        if span < need {
            return Err(DiagnosticsError::InsufficientSpan { span, need });
        }
    }
    let mut l1_offdiag = Vec::with_capacity(n);
    let mut max_offdiag = Vec::with_capacity(n);
    for rho in traj.states.iter().take(n) {
        let (l1, max) = offdiag_measures(rho);
        l1_offdiag.push(l1);
        max_offdiag.push(max);
    }

    let initial = max_offdiag[0];
    let last = max_offdiag[n - 1];
    let late_start = n - n / 3;
    let late_max = max_offdiag[late_start..]
        .iter()
        .copied()
        .fold(0.0f64, f64::max);
    let revival_ratio = if initial > 0.0 {
        late_max / initial
    } else if late_max > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };

    let mut fitted_kappa = None;
    let classification = if max_offdiag.iter().all(|&m| m < OFFDIAG_ZERO_TOL) {
        CoherenceClass::ConstantDiagonal
    } else if let Some(kappa) = gaussian_fit(&traj.times[..n], &max_offdiag, initial, last) {
        fitted_kappa = Some(kappa);
        CoherenceClass::GaussianDecay
    } else if max_offdiag
        .windows(2)
        .all(|w| w[1] <= w[0] + MONOTONE_SLACK)
        && last < MONOTONE_FINAL_FRACTION * initial
    {
        CoherenceClass::MonotoneDecay
    } else if revival_ratio >= REVIVAL_RATIO_MIN && derivative_sign_changes(&max_offdiag) >= 2 {
        CoherenceClass::Oscillatory
    } else {
        CoherenceClass::Inconclusive
    };

    Ok(CoherenceReport {
        times: traj.times[..n].to_vec(),
        l1_offdiag,
        max_offdiag,
        classification,
        revival_ratio,
        fitted_kappa,
    })
}

fn gaussian_fit(times: &[f64], max_offdiag: &[f64], initial: f64, last: f64) -> Option<f64> {
    if !(last < GAUSSIAN_FINAL_FRACTION * initial) {
        return None;
    }
    let mut xs = Vec::with_capacity(times.len());
    let mut ys = Vec::with_capacity(times.len());
    for (&t, &m) in times.iter().zip(max_offdiag) {
        if m > GAUSSIAN_FIT_FLOOR_REL * initial {
            xs.push(0.5 * t * t);
            ys.push(m.ln());
        }
    }
    if xs.len() < GAUSSIAN_FIT_MIN_POINTS {
        return None;
    }
    let (_, slope, r2) = linear_fit(&xs, &ys);
    (slope < 0.0 && r2 >= GAUSSIAN_FIT_MIN_R2).then_some(slope)
}

/// Outcome of the dynamical environment-purity probe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvPurityReport {
    /// Whether the prepared environment density is pure.
    pub initially_pure: bool,
    /// `max|rho_E^2 - rho_E|` of the preparation.
    pub purity_defect: f64,
    /// Whether the reduced environment density stayed rank-1 at every probe.
    pub stays_rank_one: bool,
    /// Largest second eigenvalue seen across the probe times.
    pub max_second_eigenvalue: f64,
    pub probe_times: Vec<f64>,
}

fn env_purity_probe(tm: &TensorModel) -> Result<EnvPurityReport, DiagnosticsError> {
    let info = tm.initial.validate(tm.layout)?;
    let eig = HamiltonianEigen::new(&tm.hamiltonian())?;
    let system_factors = tm.initial.system.rank_factors();
    let env_factors = tm.initial.env_rank_factors()?;
    let layout = tm.layout;
    let de = layout.env_dim;
    let mut probe_times = Vec::with_capacity(ENV_PROBE_COUNT);
    let mut max_second = 0.0f64;
    for k in 1..=ENV_PROBE_COUNT {
        let t = ENV_PROBE_T_END * k as f64 / ENV_PROBE_COUNT as f64;
        // The reduced environment density is sum_r v_r v_r^dag over the
        // weighted rows v_r[gamma] = sqrt(w) psi[i, gamma] of every evolved
        // rank factor. Its nonzero spectrum equals that of the small Gram
        // matrix G[r, r'] = <v_r, v_r'>, which stays well conditioned where
        // the massively rank-deficient de x de density itself does not.
        let mut rows: Vec<StateVector> = Vec::new();
        for (ws, sys) in &system_factors {
            for (we, env) in &env_factors {
                let weight = (ws * we).sqrt();
                let mut psi0 = StateVector::zeros(layout.total_dim());
                for (i, &ci) in sys.iter().enumerate() {
                    if ci.norm_sqr() == 0.0 {
                        continue;
                    }
                    for (gamma, &eg) in env.iter().enumerate() {
                        psi0[layout.joint_index(i, gamma)] = ci * eg;
                    }
                }
                let psi = eig.evolve_vector(&psi0, t);
                for i in 0..layout.system_dim {
                    let row = StateVector::from_fn(de, |gamma, _| {
                        psi[layout.joint_index(i, gamma)] * weight
                    });
                    if row.norm_squared() > 0.0 {
                        rows.push(row);
                    }
                }
            }
        }
        let r = rows.len();
        let gram = OperatorMatrix::from_fn(r, r, |a, b| rows[a].dotc(&rows[b]));
        let second = if r >= 2 {
            let (vals, _) = eigh(&gram)?;
            vals[r - 2].max(0.0)
        } else {
            0.0
        };
        max_second = max_second.max(second);
        probe_times.push(t);
    }
    Ok(EnvPurityReport {
        initially_pure: info.env_pure,
        purity_defect: info.env_purity_defect,
        stays_rank_one: max_second <= ENV_RANK_ONE_TOL,
        max_second_eigenvalue: max_second,
        probe_times,
    })
}

/// Whether restricting the joint dynamics to the single initially occupied
/// environment state is exact and decoherence-free: the projected density
/// `<m, n0| rho_joint |m', n0>` must stay diagonal and match the
/// survival-amplitude formula at every probe time.
fn projective_reading_consistent(
    instance: &ModelInstance,
    tm: &TensorModel,
) -> Result<bool, DiagnosticsError> {
    let eig = HamiltonianEigen::new(&tm.hamiltonian())?;
    let system_factors = tm.initial.system.rank_factors();
    let env_factors = tm.initial.env_rank_factors()?;
    let layout = tm.layout;
    let ds = layout.system_dim;
    let n0 = instance.params.alpha0;
    for k in 0..=4usize {
        let t = ENV_PROBE_T_END * k as f64 / 4.0;
        let formula = model1_rho_diag(instance, t, false)?;
        let mut projected = OperatorMatrix::zeros(ds, ds);
        for (ws, sys) in &system_factors {
            for (we, env) in &env_factors {
                let weight = ws * we;
                let mut psi0 = StateVector::zeros(layout.total_dim());
                for (i, &ci) in sys.iter().enumerate() {
                    if ci.norm_sqr() == 0.0 {
                        continue;
                    }
                    for (gamma, &eg) in env.iter().enumerate() {
                        psi0[layout.joint_index(i, gamma)] = ci * eg;
                    }
                }
                let psi = eig.evolve_vector(&psi0, t);
                let amp: Vec<C64> = (0..ds)
                    .map(|m| psi[layout.joint_index(m, n0)])
                    .collect();
                for m1 in 0..ds {
                    for m2 in 0..ds {
                        projected[(m1, m2)] += amp[m1] * amp[m2].conj() * weight;
                    }
                }
            }
        }
        for m1 in 0..ds {
            for m2 in 0..ds {
                if m1 == m2 {
                    if (projected[(m1, m1)].re - formula.diagonal[m1]).abs() > TWO_PATH_TOL {
                        return Ok(false);
                    }
                } else if projected[(m1, m2)].norm() > OFFDIAG_ZERO_TOL {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Per-branch commutator reports for a measurement-type model, reduced to
/// the worst classification (ties broken by the larger commutator norm).
fn worst_branch_report(md: &MeasurementData) -> Result<CommutatorReport, DiagnosticsError> {
    let mut worst: Option<CommutatorReport> = None;
    for h_i in &md.h_se_env {
        let report = commutator_report(&md.h_e_env, h_i)?;
        let replace = match &worst {
            None => true,
            Some(w) => {
                let (s, ws) = (
                    report.classification.severity(),
                    w.classification.severity(),
                );
                s > ws || (s == ws && report.norm_ch > w.norm_ch)
            }
        };
        if replace {
            worst = Some(report);
        }
    }
    worst.ok_or(DiagnosticsError::DimensionMismatch { left: 0, right: 0 })
}

/// The combined Markovianity verdict for one model instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarkovianityVerdict {
    pub model: ModelTag,
    /// Commutator criterion; for measurement-type models this is the worst
    /// per-branch report, and a Green's-function model has none.
    pub commutator: Option<CommutatorReport>,
    /// Dynamical single-environment-state criterion (tensor models only).
    pub env_purity: Option<EnvPurityReport>,
    /// Whether the diagonal survival-amplitude readout matches the joint
    /// dynamics exactly (the alternative single-state reading; level-ladder
    /// model only).
    pub projective_reading_consistent: Option<bool>,
    pub markovian: bool,
    /// Which criterion carried the verdict.
    pub reason: String,
}

/// Evaluate every applicable Markovianity criterion for `instance` and
/// combine them: Markovian when the commutator criterion holds, when the
/// environment starts pure and demonstrably stays rank-1, or when the
/// diagonal projective readout is exact. Each criterion's outcome is
/// reported separately so a verdict is auditable.
pub fn markovianity_verdict(
    instance: &ModelInstance,
) -> Result<MarkovianityVerdict, DiagnosticsError> {
    match &instance.kind {
        ModelKind::Greens(g) => {
            let flat = matches!(g.spectral, SpectralDensity::Flat { .. });
            Ok(MarkovianityVerdict {
                model: instance.tag,
                commutator: None,
                env_purity: None,
                projective_reading_consistent: None,
                markovian: flat,
                reason: if flat {
                    "flat spectral density: the memory kernel is a delta spike and the \
                     dissipation matrix is constant"
                        .into()
                } else {
                    "finite-width spectral density: the memory kernel has nonzero support, \
                     so the dissipation remembers its past"
                        .into()
                },
            })
        }
        ModelKind::Tensor(tm) => {
            let commutator_rep = match &tm.measurement {
                Some(md) => worst_branch_report(md)?,
                None => commutator_report(&tm.h_e, &tm.h_se)?,
            };
            let env = env_purity_probe(tm)?;
            let projective = if instance.tag == ModelTag::Model1 {
                Some(projective_reading_consistent(instance, tm)?)
            } else {
                None
            };
            let commuting = commutator_rep.classification == CommutatorClass::Commuting;
            let pure_route = env.initially_pure && env.stays_rank_one;
            let projective_route = projective == Some(true);
            let markovian = commuting || pure_route || projective_route;
            let reason = if commuting {
                "the environment and interaction Hamiltonians commute".to_string()
            } else if pure_route {
                "the environment starts pure and its reduced state stays rank-1 under the \
                 joint dynamics"
                    .to_string()
            } else if projective_route {
                "the diagonal survival-amplitude readout reproduces the joint dynamics \
                 exactly (single-environment-state reading); note the reduced environment \
                 state itself does not stay rank-1"
                    .to_string()
            } else {
                format!(
                    "no criterion holds: commutator is {} and the environment does not \
                     stay in a single pure state",
                    commutator_rep.classification.as_str()
                )
            };
            Ok(MarkovianityVerdict {
                model: instance.tag,
                commutator: Some(commutator_rep),
                env_purity: Some(env),
                projective_reading_consistent: projective,
                markovian,
                reason,
            })
        }
    }
}
