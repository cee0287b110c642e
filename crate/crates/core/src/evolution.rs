//! Brute-force joint evolution and the super-matrix route to the reduced
//! density.
//!
//! Two independent paths produce `rho_S(t)` for a tensor-space model:
//!
//! 1. **Oracle**: diagonalize the full joint Hamiltonian once, evolve every
//!    rank factor of the (product) initial state exactly, and partial-trace.
//! 2. **Super-matrix**: build the map
//!    `C[(i1,i2),(j1,j2)](t) = sum_k w_k (Psi_{i1} Psi_{i2}^dag)[j1,j2]`,
//!    where `Psi_i` is the evolved joint vector started from system basis
//!    state `i` tensored with the k-th environment rank factor, reshaped to
//!    a `system x environment` matrix. The reduced density is then the
//!    contraction of `C` with the initial system coefficients alone — the
//!    environment is folded in once and for all.
//!
//! Both paths must agree to near machine precision; that agreement is this
//! module's central invariant and is enforced by the test suite at 1e-10.

use crate::constants::{
    FOCK_TOP_LEVEL_TOL, RHO_EIGENVALUE_FLOOR, RHO_HERMITICITY_TOL, RHO_TRACE_TOL,
};
use crate::linalg::{
    eigh, hermiticity_deviation, vector_partial_trace_system, HamiltonianEigen, LinalgError,
    OperatorMatrix, SpaceLayout, StateVector,
};
use crate::models::{ModelError, ModelInstance, TensorModel};
use crate::C64;
use thiserror::Error;

/// Which computation produced a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectorySource {
    Oracle,
    SuperMatrix,
    ClosedForm,
    /// Truncated product expansion at the stored order.
    Zassenhaus(usize),
}

impl TrajectorySource {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrajectorySource::Oracle => "oracle",
            TrajectorySource::SuperMatrix => "super-matrix",
            TrajectorySource::ClosedForm => "closed-form",
            TrajectorySource::Zassenhaus(_) => "zassenhaus",
        }
    }
}

/// A time series of reduced system densities.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<OperatorMatrix>,
    pub source: TrajectorySource,
    /// Population of the top retained Fock level at each time (empty when
    /// the model has no Fock factor to monitor).
    pub top_population: Vec<f64>,
}

impl Trajectory {
    pub fn system_dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.nrows())
    }

    /// Every stored state must be a physical density: Hermitian, unit trace,
    /// and positive semi-definite up to the numerical floor.
    pub fn validate(&self) -> Result<(), EvolutionError> {
        if self.times.len() != self.states.len() {
            return Err(EvolutionError::StateInvalid(format!(
                "{} times vs {} states",
                self.times.len(),
                self.states.len()
            )));
        }
        for (&t, rho) in self.times.iter().zip(&self.states) {
            let dev = hermiticity_deviation(rho);
            if dev > RHO_HERMITICITY_TOL {
                return Err(EvolutionError::StateInvalid(format!(
                    "state at t = {t} not Hermitian (deviation {dev:.3e})"
                )));
            }
            let trace = rho.trace();
            if (trace.re - 1.0).abs() > RHO_TRACE_TOL || trace.im.abs() > RHO_TRACE_TOL {
                return Err(EvolutionError::StateInvalid(format!(
                    "state at t = {t} has trace {trace}"
                )));
            }
            let symmetrized = (rho + rho.adjoint()).map(|z| z * 0.5);
            let (vals, _) = eigh(&symmetrized)?;
            if vals[0] < RHO_EIGENVALUE_FLOOR {
                return Err(EvolutionError::StateInvalid(format!(
                    "state at t = {t} has eigenvalue {:.3e}",
                    vals[0]
                )));
            }
        }
        Ok(())
    }
}

/// The super-matrix `C` at one time, indexed by two row (initial) and two
/// column (final) system indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperMatrixC {
    pub dim: usize,
    pub t: f64,
    entries: Vec<C64>,
}

impl SuperMatrixC {
    fn index(&self, i1: usize, i2: usize, j1: usize, j2: usize) -> usize {
        ((i1 * self.dim + i2) * self.dim + j1) * self.dim + j2
    }

    pub fn get(&self, i1: usize, i2: usize, j1: usize, j2: usize) -> C64 {
        self.entries[self.index(i1, i2, j1, j2)]
    }

    /// Largest deviation from the double Kronecker delta
    /// `delta_{i1 j1} delta_{i2 j2}`; vanishes at `t = 0` exactly when the
    /// environment weights sum to one.
    pub fn delta_defect(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for i1 in 0..d {
            for i2 in 0..d {
                for j1 in 0..d {
                    for j2 in 0..d {
                        let expected = if i1 == j1 && i2 == j2 { 1.0 } else { 0.0 };
                        let dev = (self.get(i1, i2, j1, j2) - C64::new(expected, 0.0)).norm();
                        worst = worst.max(dev);
                    }
                }
            }
        }
        worst
    }
}

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("brute-force propagation requires a tensor-space model")]
    NotTensorModel,
    #[error("times must be finite, non-negative, and strictly increasing")]
    BadTimeGrid,
    #[error(
        "top Fock level populated at t = {t}: {population:.3e} exceeds {limit:.1e}; \
         raise n_max"
    )]
    TruncationSpill { t: f64, population: f64, limit: f64 },
    #[error("evolved state norm drifted by {deficit:.3e} at t = {t}")]
    NormDrift { t: f64, deficit: f64 },
    #[error("invalid reduced state: {0}")]
    StateInvalid(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn check_times(times: &[f64]) -> Result<(), EvolutionError> {
    if times.is_empty()
        || times.iter().any(|t| !t.is_finite() || *t < 0.0)
        || times.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(EvolutionError::BadTimeGrid);
    }
    Ok(())
}

/// Joint basis vector `|i> ⊗ |env>` without building a dense Kronecker.
fn joint_from_system_basis(i: usize, env: &StateVector, layout: SpaceLayout) -> StateVector {
    let mut v = StateVector::zeros(layout.total_dim());
    for (gamma, &amp) in env.iter().enumerate() {
        v[layout.joint_index(i, gamma)] = amp;
    }
    v
}

fn top_population(psi: &StateVector, top_indices: &[usize]) -> f64 {
    top_indices.iter().map(|&idx| psi[idx].norm_sqr()).sum()
}

/// Shared machinery: the diagonalized joint Hamiltonian plus the initial
/// state's rank factorization, reusable across many times.
pub struct Propagator<'m> {
    model: &'m TensorModel,
    eig: HamiltonianEigen,
    system_factors: Vec<(f64, StateVector)>,
    env_factors: Vec<(f64, StateVector)>,
}

impl<'m> Propagator<'m> {
    pub fn new(instance: &'m ModelInstance) -> Result<Self, EvolutionError> {
        let model = match instance.tensor() {
            Ok(t) => t,
            Err(_) => return Err(EvolutionError::NotTensorModel),
        };
        let eig = HamiltonianEigen::new(&model.hamiltonian())?;
        Ok(Self {
            model,
            eig,
            system_factors: model.initial.system.rank_factors(),
            env_factors: model.initial.env_rank_factors()?,
        })
    }

    fn evolve_checked(&self, psi0: &StateVector, t: f64) -> Result<StateVector, EvolutionError> {
        let psi = self.eig.evolve_vector(psi0, t);
        let deficit = (psi.norm() - psi0.norm()).abs();
        if deficit > 1e-10 {
            return Err(EvolutionError::NormDrift { t, deficit });
        }
        Ok(psi)
    }

    fn guard_truncation(&self, t: f64, population: f64) -> Result<(), EvolutionError> {
        if population > FOCK_TOP_LEVEL_TOL {
            return Err(EvolutionError::TruncationSpill {
                t,
                population,
                limit: FOCK_TOP_LEVEL_TOL,
            });
        }
        Ok(())
    }

    /// Reduced density at one time by direct joint evolution of every rank
    /// factor, with the truncation monitor evaluated on the way.
    pub fn oracle_state(&self, t: f64) -> Result<(OperatorMatrix, f64), EvolutionError> {
        let layout = self.model.layout;
        let ds = layout.system_dim;
        let mut rho = OperatorMatrix::zeros(ds, ds);
        let mut spill = 0.0f64;
        for (ws, sys) in &self.system_factors {
            for (we, env) in &self.env_factors {
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
                let psi = self.evolve_checked(&psi0, t)?;
                spill += weight * top_population(&psi, &self.model.fock_top_indices);
                let partial = vector_partial_trace_system(&psi, layout)?;
                rho += partial.map(|z| z * weight);
            }
        }
        self.guard_truncation(t, spill)?;
        Ok((rho, spill))
    }

    /// The super-matrix at one time: environment rank factors are evolved
    /// against every system basis state and contracted pairwise.
    pub fn c_at(&self, t: f64) -> Result<SuperMatrixC, EvolutionError> {
        let layout = self.model.layout;
        let ds = layout.system_dim;
        let de = layout.env_dim;
        let mut entries = vec![C64::new(0.0, 0.0); ds * ds * ds * ds];
        for (weight, env) in &self.env_factors {
            // Evolve |i> ⊗ |env_k> for every system basis index, reshaped to
            // a system x environment matrix.
            // No truncation monitor here: the map is built from every system
            // basis state, including ones that sit on the top Fock level by
            // construction. The physical-state monitor lives on the oracle
            // path, which always accompanies this one in comparisons.
            let mut frames: Vec<OperatorMatrix> = Vec::with_capacity(ds);
            for i in 0..ds {
                let psi0 = joint_from_system_basis(i, env, layout);
                let psi = self.evolve_checked(&psi0, t)?;
                frames.push(OperatorMatrix::from_fn(ds, de, |j, gamma| {
                    psi[layout.joint_index(j, gamma)]
                }));
            }
            for i1 in 0..ds {
                for i2 in 0..ds {
                    let product = &frames[i1] * frames[i2].adjoint();
                    for j1 in 0..ds {
                        for j2 in 0..ds {
                            let idx = ((i1 * ds + i2) * ds + j1) * ds + j2;
                            entries[idx] += product[(j1, j2)] * *weight;
                        }
                    }
                }
            }
        }
        Ok(SuperMatrixC {
            dim: ds,
            t,
            entries,
        })
    }
}

/// Brute-force reference trajectory: exact joint evolution + partial trace.
pub fn propagate_oracle(
    instance: &ModelInstance,
    times: &[f64],
) -> Result<Trajectory, EvolutionError> {
    check_times(times)?;
    let prop = Propagator::new(instance)?;
    let mut states = Vec::with_capacity(times.len());
    let mut top = Vec::with_capacity(times.len());
    for &t in times {
        let (rho, spill) = prop.oracle_state(t)?;
        states.push(rho);
        top.push(spill);
    }
    let traj = Trajectory {
        times: times.to_vec(),
        states,
        source: TrajectorySource::Oracle,
        top_population: top,
    };
    traj.validate()?;
    Ok(traj)
}

/// The super-matrix at a single time (convenience over [`Propagator`]).
pub fn super_matrix_c(instance: &ModelInstance, t: f64) -> Result<SuperMatrixC, EvolutionError> {
    if !t.is_finite() || t < 0.0 {
        return Err(EvolutionError::BadTimeGrid);
    }
    Propagator::new(instance)?.c_at(t)
}

/// Contract the super-matrix with initial system coefficients:
/// `rho[j1,j2] = sum_{i1,i2} kappa[i1,i2] C[(i1,i2),(j1,j2)]`.
pub fn assemble_rho_from_c(c: &SuperMatrixC, coefficients: &OperatorMatrix) -> OperatorMatrix {
    let d = c.dim;
    assert_eq!(
        (coefficients.nrows(), coefficients.ncols()),
        (d, d),
        "coefficient matrix must match the super-matrix dimension"
    );
    OperatorMatrix::from_fn(d, d, |j1, j2| {
        let mut acc = C64::new(0.0, 0.0);
        for i1 in 0..d {
            for i2 in 0..d {
                acc += coefficients[(i1, i2)] * c.get(i1, i2, j1, j2);
            }
        }
        acc
    })
}

/// Trajectory produced through the super-matrix route.
pub fn propagate_via_c(
    instance: &ModelInstance,
    times: &[f64],
) -> Result<Trajectory, EvolutionError> {
    check_times(times)?;
    let prop = Propagator::new(instance)?;
    let model = instance.tensor().map_err(|_| EvolutionError::NotTensorModel)?;
    let kappa = model.initial.system.coefficient_matrix();
    let mut states = Vec::with_capacity(times.len());
    for &t in times {
        let c = prop.c_at(t)?;
        states.push(assemble_rho_from_c(&c, &kappa));
    }
    let traj = Trajectory {
        times: times.to_vec(),
        states,
        source: TrajectorySource::SuperMatrix,
        top_population: Vec::new(),
    };
    traj.validate()?;
    Ok(traj)
}
