//! The model catalogue: five concrete system–environment bundles, each built
//! as embedded Hamiltonian pieces `(H_S, H_E, H_SE)` on a bipartite tensor
//! layout together with a validated initial state.
//!
//! * `model1` — spin system exchanging quanta with a boson mode through a
//!   ladder coupling; conserves the total excitation number.
//! * `model2` — boson system pushed by a spin environment through the
//!   spin-magnitude operator; `[H_E, H_SE] = 0`.
//! * `model3` — the mirror image: spin multiplets as the system, one boson
//!   mode as the environment; `[H_E, H_SE] != 0`.
//! * `model4` — measurement-type coupling: the system level index is
//!   conserved and selects which Hamiltonian drives the environment. Case (a)
//!   uses a commuting family, case (b) a pair with (approximately) scalar
//!   commutator realized on truncated quadratures.
//! * `model5` — a dissipative level system defined at the Green's-function
//!   level by its energies and a bath spectral density (no tensor space).

use crate::constants::{
    ENV_PURITY_TOL, FOCK_SAFETY_MARGIN, HERMITICITY_TOL, RHO_EIGENVALUE_FLOOR,
    RHO_HERMITICITY_TOL, RHO_TRACE_TOL,
};
use crate::greens::SpectralDensity;
use crate::linalg::{
    commutator, eigh, hermiticity_deviation, max_abs, opnorm, LinalgError, OperatorMatrix,
    SpaceLayout, StateVector,
};
use crate::operators::{embed_env, embed_system, identity, projector, FockSpace, SpinSpace};
use crate::C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which catalogue entry a [`ModelInstance`] realizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTag {
    Model1,
    Model2,
    Model3,
    Model4a,
    Model4b,
    Model5,
}

impl ModelTag {
    pub const ALL: [ModelTag; 6] = [
        ModelTag::Model1,
        ModelTag::Model2,
        ModelTag::Model3,
        ModelTag::Model4a,
        ModelTag::Model4b,
        ModelTag::Model5,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelTag::Model1 => "model1",
            ModelTag::Model2 => "model2",
            ModelTag::Model3 => "model3",
            ModelTag::Model4a => "model4a",
            ModelTag::Model4b => "model4b",
            ModelTag::Model5 => "model5",
        }
    }
}

impl std::str::FromStr for ModelTag {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "model1" => Ok(ModelTag::Model1),
            "model2" => Ok(ModelTag::Model2),
            "model3" => Ok(ModelTag::Model3),
            "model4a" => Ok(ModelTag::Model4a),
            "model4b" => Ok(ModelTag::Model4b),
            "model5" => Ok(ModelTag::Model5),
            other => Err(ModelError::UnknownTag(other.to_string())),
        }
    }
}

impl std::fmt::Display for ModelTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Scalar knobs shared by the catalogue. Frequencies are angular (hbar = 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    /// System oscillator / spin frequency (models 1, 2).
    pub omega_s: f64,
    /// Spin frequency: environment in model 2, system in model 3.
    pub omega: f64,
    /// Boson quantum (models 1, 3) or quadrature drive strength (model 4).
    pub beta: f64,
    /// System–environment coupling strength (models 1–3).
    pub eta: f64,
    /// Gaussian-envelope rate for model 4b; filled in by the builder from
    /// `etas` and must be ≤ 0 there.
    pub kappa: f64,
    /// Spin magnitudes in play (half-integers as reals).
    pub j_values: Vec<f64>,
    /// Fock truncation (levels `0 ..= n_max`).
    pub n_max: usize,
    /// Initial environment Fock label for model 1.
    pub alpha0: usize,
    /// Model-4 system level energies.
    pub epsilons: Vec<f64>,
    /// Model-4 per-level environment coupling strengths.
    pub etas: Vec<f64>,
    /// Model-4a coherent environment label (re, im).
    pub alpha_c: (f64, f64),
    /// Optional system amplitude override (re, im), model-specific length.
    pub amplitudes: Option<Vec<(f64, f64)>>,
    /// Optional diagonal-mixture weight override for model 1.
    pub weights: Option<Vec<f64>>,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            omega_s: 1.0,
            omega: 1.0,
            beta: 1.0,
            eta: 0.4,
            kappa: 0.0,
            j_values: vec![0.5],
            n_max: 12,
            alpha0: 1,
            epsilons: vec![0.0, 1.0],
            etas: vec![0.3, 0.7],
            alpha_c: (1.5, 0.0),
            amplitudes: None,
            weights: None,
        }
    }
}

impl ModelParams {
    /// Catalogue defaults tuned per model so that the default configuration
    /// is meaningful and truncation-safe for that model's dynamics.
    pub fn defaults_for(tag: ModelTag) -> Self {
        let mut p = Self::default();
        match tag {
            ModelTag::Model1 => {
                p.eta = 1.0;
            }
            ModelTag::Model2 => {}
            ModelTag::Model3 => {
                p.eta = 1.0;
                p.j_values = vec![0.5, 1.0];
                p.n_max = 48;
            }
            ModelTag::Model4a => {
                p.n_max = 40;
            }
            ModelTag::Model4b => {
                p.beta = 0.1;
                p.etas = vec![0.05, 0.45];
                p.n_max = 40;
            }
            ModelTag::Model5 => {}
        }
        p
    }

    fn finite(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("omega_s", self.omega_s),
            ("omega", self.omega),
            ("beta", self.beta),
            ("eta", self.eta),
            ("kappa", self.kappa),
        ] {
            if !v.is_finite() {
                return Err(ModelError::InvalidParams(format!("{name} is not finite")));
            }
        }
        Ok(())
    }
}

/// Convert a half-integer spin value to its doubled integer form.
pub fn two_j_of(j: f64) -> Result<u32, ModelError> {
    let doubled = 2.0 * j;
    let rounded = doubled.round();
    if j < 0.0 || (doubled - rounded).abs() > 1e-9 || rounded > u32::MAX as f64 {
        return Err(ModelError::InvalidParams(format!(
            "spin value {j} is not a non-negative half-integer"
        )));
    }
    Ok(rounded as u32)
}

/// Initial system preparation: a pure amplitude vector, or a mixture that is
/// diagonal in the system basis.
#[derive(Debug, Clone, PartialEq)]
pub enum SystemInit {
    Pure(Vec<C64>),
    DiagonalMixture(Vec<f64>),
}

impl SystemInit {
    pub fn dim(&self) -> usize {
        match self {
            SystemInit::Pure(c) => c.len(),
            SystemInit::DiagonalMixture(w) => w.len(),
        }
    }

    /// Coefficient matrix `kappa[i1, i2]`: the initial reduced density. For a
    /// pure preparation this is `c_{i1} conj(c_{i2})`; for a mixture, the
    /// diagonal of weights.
    pub fn coefficient_matrix(&self) -> OperatorMatrix {
        match self {
            SystemInit::Pure(c) => {
                OperatorMatrix::from_fn(c.len(), c.len(), |i, j| c[i] * c[j].conj())
            }
            SystemInit::DiagonalMixture(w) => OperatorMatrix::from_fn(w.len(), w.len(), |i, j| {
                if i == j {
                    C64::new(w[i], 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            }),
        }
    }

    /// Spectral decomposition of the initial system density as
    /// `(weight, vector)` pairs with positive weights.
    pub fn rank_factors(&self) -> Vec<(f64, StateVector)> {
        match self {
            SystemInit::Pure(c) => {
                let v = StateVector::from_fn(c.len(), |i, _| c[i]);
                vec![(1.0, v)]
            }
            SystemInit::DiagonalMixture(w) => w
                .iter()
                .enumerate()
                .filter(|(_, &wi)| wi > 1e-15)
                .map(|(i, &wi)| {
                    let mut v = StateVector::zeros(w.len());
                    v[i] = C64::new(1.0, 0.0);
                    (wi, v)
                })
                .collect(),
        }
    }
}

/// Initial environment preparation.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvInit {
    Pure(StateVector),
    Density(OperatorMatrix),
}

impl EnvInit {
    pub fn dim(&self) -> usize {
        match self {
            EnvInit::Pure(v) => v.len(),
            EnvInit::Density(d) => d.nrows(),
        }
    }

    /// The environment weight matrix `d_{alpha1, alpha2}`.
    pub fn density(&self) -> OperatorMatrix {
        match self {
            EnvInit::Pure(v) => OperatorMatrix::from_fn(v.len(), v.len(), |i, j| v[i] * v[j].conj()),
            EnvInit::Density(d) => d.clone(),
        }
    }
}

/// Validated facts about an initial state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialStateInfo {
    /// Whether the environment preparation is pure (`rho_E^2 = rho_E`).
    pub env_pure: bool,
    /// Largest entry of `rho_E^2 - rho_E`.
    pub env_purity_defect: f64,
}

/// Decoupled initial preparation `rho_S(0) ⊗ rho_E(0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub system: SystemInit,
    pub environment: EnvInit,
}

impl InitialState {
    /// Check normalization, Hermiticity, positivity, and report environment
    /// purity. Mixed environments are legal (one catalogue entry requires
    /// one); purity is a reported fact, not a hard invariant.
    pub fn validate(&self, layout: SpaceLayout) -> Result<InitialStateInfo, ModelError> {
        if self.system.dim() != layout.system_dim {
            return Err(ModelError::InvalidParams(format!(
                "system preparation dim {} != layout {}",
                self.system.dim(),
                layout.system_dim
            )));
        }
        if self.environment.dim() != layout.env_dim {
            return Err(ModelError::InvalidParams(format!(
                "environment preparation dim {} != layout {}",
                self.environment.dim(),
                layout.env_dim
            )));
        }
        match &self.system {
            SystemInit::Pure(c) => {
                let norm2: f64 = c.iter().map(|z| z.norm_sqr()).sum();
                if (norm2 - 1.0).abs() > 1e-12 {
                    return Err(ModelError::NotNormalized {
                        what: "system amplitudes",
                        defect: (norm2 - 1.0).abs(),
                    });
                }
            }
            SystemInit::DiagonalMixture(w) => {
                if w.iter().any(|&x| x < -1e-15) {
                    return Err(ModelError::InvalidParams(
                        "mixture weights must be non-negative".into(),
                    ));
                }
                let sum: f64 = w.iter().sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(ModelError::NotNormalized {
                        what: "mixture weights",
                        defect: (sum - 1.0).abs(),
                    });
                }
            }
        }
        let d = self.environment.density();
        let herm = hermiticity_deviation(&d);
        if herm > RHO_HERMITICITY_TOL {
            return Err(ModelError::DensityInvalid(format!(
                "environment density not Hermitian: deviation {herm:.3e}"
            )));
        }
        let trace = d.trace();
        if (trace.re - 1.0).abs() > RHO_TRACE_TOL || trace.im.abs() > RHO_TRACE_TOL {
            return Err(ModelError::NotNormalized {
                what: "environment density trace",
                defect: (trace - C64::new(1.0, 0.0)).norm(),
            });
        }
        let (vals, _) = eigh(&d)?;
        if vals[0] < RHO_EIGENVALUE_FLOOR {
            return Err(ModelError::DensityInvalid(format!(
                "environment density has negative eigenvalue {:.3e}",
                vals[0]
            )));
        }
        let defect = max_abs(&(&d * &d - &d));
        Ok(InitialStateInfo {
            env_pure: defect <= ENV_PURITY_TOL,
            env_purity_defect: defect,
        })
    }

    /// Spectral factors of the environment density: `(weight, vector)` pairs.
    pub fn env_rank_factors(&self) -> Result<Vec<(f64, StateVector)>, ModelError> {
        match &self.environment {
            EnvInit::Pure(v) => Ok(vec![(1.0, v.clone())]),
            EnvInit::Density(d) => {
                let (vals, vecs) = eigh(d)?;
                let mut out = Vec::new();
                for (k, &w) in vals.iter().enumerate() {
                    if w < RHO_EIGENVALUE_FLOOR {
                        return Err(ModelError::DensityInvalid(format!(
                            "environment density eigenvalue {w:.3e} below floor"
                        )));
                    }
                    if w > 1e-14 {
                        out.push((w, StateVector::from_column_slice(vecs.column(k).as_slice())));
                    }
                }
                Ok(out)
            }
        }
    }

    /// Initial reduced system density.
    pub fn rho_s0(&self) -> OperatorMatrix {
        self.system.coefficient_matrix()
    }
}

/// What kind of space a tensor factor is (labels for reports and the
/// closed-form index conventions).
#[derive(Debug, Clone, PartialEq)]
pub enum FactorSpace {
    Spin(SpinSpace),
    Fock(FockSpace),
    Levels(usize),
}

impl FactorSpace {
    pub fn dim(&self) -> usize {
        match self {
            FactorSpace::Spin(s) => s.dim(),
            FactorSpace::Fock(f) => f.dim(),
            FactorSpace::Levels(n) => *n,
        }
    }

    /// Human-readable basis labels, in order.
    pub fn labels(&self) -> Vec<String> {
        match self {
            FactorSpace::Spin(s) => s
                .labels()
                .iter()
                .map(|(two_j, two_m)| {
                    format!("j{}m{}", fmt_half(*two_j as i32), fmt_half(*two_m))
                })
                .collect(),
            FactorSpace::Fock(f) => (0..=f.n_max).map(|n| format!("n{n}")).collect(),
            FactorSpace::Levels(n) => (0..*n).map(|i| format!("s{i}")).collect(),
        }
    }
}

fn fmt_half(two_x: i32) -> String {
    if two_x % 2 == 0 {
        format!("{}", two_x / 2)
    } else {
        format!("{}/2", two_x)
    }
}

/// Which measurement-coupling case a model-4 instance realizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementCase {
    /// Commuting family: `[H_E, H_SE^i] = 0` for every branch.
    A,
    /// Scalar-commutator pair: `[H_E, H_SE^i]` proportional to the identity
    /// on the truncation-guarded sub-block.
    B,
}

/// Model-4 payload: the per-level conditional environment Hamiltonians.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementData {
    pub case: MeasurementCase,
    /// System level energies.
    pub epsilons: Vec<f64>,
    /// Shared environment Hamiltonian, on the environment factor.
    pub h_e_env: OperatorMatrix,
    /// Per-level coupling Hamiltonians, on the environment factor.
    pub h_se_env: Vec<OperatorMatrix>,
}

/// A model realized on a bipartite tensor space (models 1–4).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorModel {
    pub layout: SpaceLayout,
    /// Full-space embeddings.
    pub h_s: OperatorMatrix,
    pub h_e: OperatorMatrix,
    pub h_se: OperatorMatrix,
    pub initial: InitialState,
    pub system_space: FactorSpace,
    pub env_space: FactorSpace,
    /// Joint indices of the top retained Fock level (for truncation
    /// monitoring during evolution); empty when no Fock factor is present.
    pub fock_top_indices: Vec<usize>,
    /// Present for model 4.
    pub measurement: Option<MeasurementData>,
}

impl TensorModel {
    pub fn hamiltonian(&self) -> OperatorMatrix {
        &self.h_s + &self.h_e + &self.h_se
    }
}

/// A model defined at the Green's-function level (model 5).
#[derive(Debug, Clone, PartialEq)]
pub struct GreensModel {
    /// Diagonal system energies.
    pub e_s: Vec<f64>,
    pub spectral: SpectralDensity,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    Tensor(TensorModel),
    Greens(GreensModel),
}

/// A fully built catalogue entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInstance {
    pub tag: ModelTag,
    pub params: ModelParams,
    pub kind: ModelKind,
}

impl ModelInstance {
    pub fn tensor(&self) -> Result<&TensorModel, ModelError> {
        match &self.kind {
            ModelKind::Tensor(t) => Ok(t),
            ModelKind::Greens(_) => Err(ModelError::InvalidParams(
                "operation requires a tensor-space model".into(),
            )),
        }
    }

    pub fn greens(&self) -> Result<&GreensModel, ModelError> {
        match &self.kind {
            ModelKind::Greens(g) => Ok(g),
            ModelKind::Tensor(_) => Err(ModelError::InvalidParams(
                "operation requires a Green's-function model".into(),
            )),
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown model tag `{0}`")]
    UnknownTag(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("{what} not normalized (defect {defect:.3e})")]
    NotNormalized { what: &'static str, defect: f64 },
    #[error("invalid density: {0}")]
    DensityInvalid(String),
    #[error(
        "Fock truncation too small: need n_max >= {needed}, got {got} \
         (initial occupation {initial_occupation}, ladder reach {ladder_reach})"
    )]
    TruncationTooSmall {
        needed: usize,
        got: usize,
        initial_occupation: usize,
        ladder_reach: usize,
    },
    #[error(
        "commuting-family violation: ||[H_E, H_SE^{branch}]|| = {norm:.3e} \
         exceeds bound {bound:.3e}"
    )]
    CommutationViolation { branch: usize, norm: f64, bound: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Ladder couplings migrate excitations: require headroom above the initial
/// occupation plus the full spin ladder span, with a safety margin.
fn ensure_truncation(
    n_max: usize,
    initial_occupation: usize,
    two_j_max: u32,
) -> Result<(), ModelError> {
    let ladder_reach = 2 * two_j_max as usize;
    let needed = initial_occupation + ladder_reach + FOCK_SAFETY_MARGIN;
    if n_max < needed {
        return Err(ModelError::TruncationTooSmall {
            needed,
            got: n_max,
            initial_occupation,
            ladder_reach,
        });
    }
    Ok(())
}

fn pure_amplitudes_from(
    raw: &[(f64, f64)],
    dim: usize,
    what: &'static str,
) -> Result<Vec<C64>, ModelError> {
    if raw.len() != dim {
        return Err(ModelError::InvalidParams(format!(
            "{what}: expected {dim} amplitudes, got {}",
            raw.len()
        )));
    }
    let c: Vec<C64> = raw.iter().map(|&(re, im)| C64::new(re, im)).collect();
    let norm2: f64 = c.iter().map(|z| z.norm_sqr()).sum();
    if (norm2 - 1.0).abs() > 1e-12 {
        return Err(ModelError::NotNormalized {
            what,
            defect: (norm2 - 1.0).abs(),
        });
    }
    Ok(c)
}

/// Joint indices of the top Fock level for truncation monitoring.
fn top_level_indices(layout: SpaceLayout, fock_is_system: bool) -> Vec<usize> {
    if fock_is_system {
        (0..layout.env_dim)
            .map(|e| layout.joint_index(layout.system_dim - 1, e))
            .collect()
    } else {
        (0..layout.system_dim)
            .map(|s| layout.joint_index(s, layout.env_dim - 1))
            .collect()
    }
}

/// Spin system with a ladder coupling to one boson mode:
/// `H = omega_s Jz + beta a^dag a + eta (a^dag J- + a J+)`.
///
/// The environment starts in the single Fock state `|alpha0>`; the system
/// default is a uniform diagonal mixture over the multiplet (a diagonal
/// preparation is what keeps the reduced density exactly diagonal, since the
/// total excitation number is conserved).
pub fn build_model1(params: &ModelParams) -> Result<ModelInstance, ModelError> {
    params.finite()?;
    if params.j_values.len() != 1 {
        return Err(ModelError::InvalidParams(
            "model1 takes exactly one spin value".into(),
        ));
    }
    let two_j = two_j_of(params.j_values[0])?;
    if params.alpha0 > params.n_max {
        return Err(ModelError::InvalidParams(format!(
            "alpha0 {} exceeds n_max {}",
            params.alpha0, params.n_max
        )));
    }
    ensure_truncation(params.n_max, params.alpha0, two_j)?;

    let spin = SpinSpace::single(two_j);
    let fock = FockSpace::new(params.n_max);
    let layout = SpaceLayout::new(spin.dim(), fock.dim());

    let h_s = embed_system(&spin.jz().map(|z| z * params.omega_s), layout);
    let h_e = embed_env(&fock.number().map(|z| z * params.beta), layout);
    let a = fock.annihilation();
    let coupling = crate::linalg::kron(&spin.jminus(), &a.adjoint())
        + crate::linalg::kron(&spin.jplus(), &a);
    let h_se = coupling.map(|z| z * params.eta);

    let system = match (&params.amplitudes, &params.weights) {
        (Some(_), Some(_)) => {
            return Err(ModelError::InvalidParams(
                "model1: give either amplitudes (pure) or weights (mixture), not both".into(),
            ))
        }
        (Some(raw), None) => SystemInit::Pure(pure_amplitudes_from(raw, spin.dim(), "model1")?),
        (None, Some(w)) => {
            if w.len() != spin.dim() {
                return Err(ModelError::InvalidParams(format!(
                    "model1: expected {} weights, got {}",
                    spin.dim(),
                    w.len()
                )));
            }
            SystemInit::DiagonalMixture(w.clone())
        }
        (None, None) => {
            SystemInit::DiagonalMixture(vec![1.0 / spin.dim() as f64; spin.dim()])
        }
    };
    let initial = InitialState {
        system,
        environment: EnvInit::Pure(fock.fock_vector(params.alpha0)),
    };
    initial.validate(layout)?;

    Ok(ModelInstance {
        tag: ModelTag::Model1,
        params: params.clone(),
        kind: ModelKind::Tensor(TensorModel {
            layout,
            h_s,
            h_e,
            h_se,
            initial,
            system_space: FactorSpace::Spin(spin),
            env_space: FactorSpace::Fock(fock),
            fock_top_indices: top_level_indices(layout, false),
            measurement: None,
        }),
    })
}

/// How the spin-environment mixture of model 2 is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EnvWeighting {
    /// Maximally mixed over all listed `(j, m)` states (trace 1).
    #[default]
    Conventional,
    /// Literal per-state weight `1/(2j+1)^4`, normalized to trace 1 so the
    /// preparation is a valid density. The unnormalized variant's total
    /// weight is reported by [`model2_literal_weights`].
    LiteralNormalized,
}

/// Per-state weights `1/(2j+1)^4` over the listed multiplets, plus their sum
/// (the trace the literal, unnormalized reading would assign).
pub fn model2_literal_weights(spin: &SpinSpace) -> (Vec<f64>, f64) {
    let weights: Vec<f64> = spin
        .labels()
        .iter()
        .map(|&(two_j, _)| {
            let j_hat = two_j as f64 + 1.0;
            1.0 / j_hat.powi(4)
        })
        .collect();
    let total: f64 = weights.iter().sum();
    (weights, total)
}

/// Boson system driven by a spin environment through the spin magnitude:
/// `H = omega_s a^dag a + omega Jz + eta (a^dag + a) J^2`.
///
/// `[H_E, H_SE] = 0` by construction. The environment mixture follows the
/// requested weighting; the system default is `(|0> + |1>)/sqrt(2)`.
pub fn build_model2(
    params: &ModelParams,
    weighting: EnvWeighting,
) -> Result<ModelInstance, ModelError> {
    params.finite()?;
    if params.j_values.is_empty() {
        return Err(ModelError::InvalidParams(
            "model2 needs at least one spin value".into(),
        ));
    }
    let two_js = params
        .j_values
        .iter()
        .map(|&j| two_j_of(j))
        .collect::<Result<Vec<_>, _>>()?;
    let spin = SpinSpace::multi(two_js.clone());
    let fock = FockSpace::new(params.n_max);
    let layout = SpaceLayout::new(fock.dim(), spin.dim());

    let amplitudes = match &params.amplitudes {
        Some(raw) => pure_amplitudes_from(raw, fock.dim(), "model2")?,
        None => {
            let mut c = vec![C64::new(0.0, 0.0); fock.dim()];
            let w = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            c[0] = w;
            c[1] = w;
            c
        }
    };
    let max_occupied = amplitudes
        .iter()
        .rposition(|z| z.norm() > 1e-15)
        .unwrap_or(0);
    let two_j_max = *two_js.iter().max().expect("non-empty");
    ensure_truncation(params.n_max, max_occupied, two_j_max)?;

    let h_s = embed_system(&fock.number().map(|z| z * params.omega_s), layout);
    let h_e = embed_env(&spin.jz().map(|z| z * params.omega), layout);
    let h_se = crate::linalg::kron(&fock.position().map(|z| z * 2.0f64.sqrt()), &spin.jsquared())
        .map(|z| z * params.eta);

    let dim_e = spin.dim();
    let env_density = match weighting {
        EnvWeighting::Conventional => {
            identity(dim_e).map(|z| z / C64::new(dim_e as f64, 0.0))
        }
        EnvWeighting::LiteralNormalized => {
            let (weights, total) = model2_literal_weights(&spin);
            OperatorMatrix::from_fn(dim_e, dim_e, |i, j| {
                if i == j {
                    C64::new(weights[i] / total, 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            })
        }
    };
    let initial = InitialState {
        system: SystemInit::Pure(amplitudes),
        environment: EnvInit::Density(env_density),
    };
    initial.validate(layout)?;

    Ok(ModelInstance {
        tag: ModelTag::Model2,
        params: params.clone(),
        kind: ModelKind::Tensor(TensorModel {
            layout,
            h_s,
            h_e,
            h_se,
            initial,
            system_space: FactorSpace::Fock(fock),
            env_space: FactorSpace::Spin(spin),
            fock_top_indices: top_level_indices(layout, true),
            measurement: None,
        }),
    })
}

/// Default pure system amplitudes for model 3: equal superposition putting
/// one basis state in each multiplet (the stretched `m = j` state), so that
/// every retained coherence crosses multiplets and actually feels the
/// environment. For a single multiplet: equal superposition over it.
pub fn model3_default_amplitudes(spin: &SpinSpace) -> Vec<C64> {
    let offsets = spin.offsets();
    let dim = spin.dim();
    let mut c = vec![C64::new(0.0, 0.0); dim];
    if spin.two_js.len() == 1 {
        let w = 1.0 / (dim as f64).sqrt();
        for entry in c.iter_mut() {
            *entry = C64::new(w, 0.0);
        }
    } else {
        let w = 1.0 / (spin.two_js.len() as f64).sqrt();
        for &off in &offsets {
            c[off] = C64::new(w, 0.0); // index `off` holds m = +j of its multiplet
        }
    }
    c
}

/// Spin multiplets as the system, one boson mode as the environment:
/// `H = omega Jz + beta b^dag b + eta (b^dag + b) J^2`.
///
/// `[H_E, H_SE] = eta*beta (b^dag - b) J^2 != 0`. Environment starts in the
/// boson vacuum.
pub fn build_model3(params: &ModelParams) -> Result<ModelInstance, ModelError> {
    params.finite()?;
    if params.j_values.is_empty() {
        return Err(ModelError::InvalidParams(
            "model3 needs at least one spin value".into(),
        ));
    }
    let two_js = params
        .j_values
        .iter()
        .map(|&j| two_j_of(j))
        .collect::<Result<Vec<_>, _>>()?;
    let spin = SpinSpace::multi(two_js.clone());
    let fock = FockSpace::new(params.n_max);
    let layout = SpaceLayout::new(spin.dim(), fock.dim());
    let two_j_max = *two_js.iter().max().expect("non-empty");
    ensure_truncation(params.n_max, 0, two_j_max)?;

    let h_s = embed_system(&spin.jz().map(|z| z * params.omega), layout);
    let h_e = embed_env(&fock.number().map(|z| z * params.beta), layout);
    let h_se = crate::linalg::kron(&spin.jsquared(), &fock.position().map(|z| z * 2.0f64.sqrt()))
        .map(|z| z * params.eta);

    let amplitudes = match &params.amplitudes {
        Some(raw) => pure_amplitudes_from(raw, spin.dim(), "model3")?,
        None => model3_default_amplitudes(&spin),
    };
    let initial = InitialState {
        system: SystemInit::Pure(amplitudes),
        environment: EnvInit::Pure(fock.fock_vector(0)),
    };
    initial.validate(layout)?;

    Ok(ModelInstance {
        tag: ModelTag::Model3,
        params: params.clone(),
        kind: ModelKind::Tensor(TensorModel {
            layout,
            h_s,
            h_e,
            h_se,
            initial,
            system_space: FactorSpace::Spin(spin),
            env_space: FactorSpace::Fock(fock),
            fock_top_indices: top_level_indices(layout, false),
            measurement: None,
        }),
    })
}

/// Measurement-type model from an explicit environment Hamiltonian and a
/// per-level coupling family: the joint Hamiltonian is
/// `H = sum_i |i><i| ⊗ (eps_i + H_SE^i) + 1 ⊗ H_E`, so the level index is
/// conserved and each level drives the environment with its own `H_E^i`.
///
/// Case (a) requires every `[H_E, H_SE^i] = 0`; case (b) expects the
/// commutators to be scalars on the truncation-guarded sub-block (verified by
/// the diagnostics, not here) and records the Gaussian rate `kappa` derived
/// from the coupling spread.
pub fn build_model4(
    params: &ModelParams,
    case: MeasurementCase,
    h_e_env: OperatorMatrix,
    h_se_env: Vec<OperatorMatrix>,
    env_init: StateVector,
) -> Result<ModelInstance, ModelError> {
    params.finite()?;
    let n_levels = params.epsilons.len();
    if n_levels < 2 {
        return Err(ModelError::InvalidParams(
            "model4 needs at least two system levels".into(),
        ));
    }
    if h_se_env.len() != n_levels {
        return Err(ModelError::InvalidParams(format!(
            "model4: {} couplings for {} levels",
            h_se_env.len(),
            n_levels
        )));
    }
    let de = h_e_env.nrows();
    if h_e_env.ncols() != de || h_se_env.iter().any(|m| m.nrows() != de || m.ncols() != de) {
        return Err(ModelError::InvalidParams(
            "model4: environment operators must be square and same-dimensional".into(),
        ));
    }
    if env_init.len() != de {
        return Err(ModelError::InvalidParams(
            "model4: environment vector dimension mismatch".into(),
        ));
    }
    if (env_init.norm() - 1.0).abs() > 1e-12 {
        return Err(ModelError::NotNormalized {
            what: "model4 environment vector",
            defect: (env_init.norm() - 1.0).abs(),
        });
    }
    for m in std::iter::once(&h_e_env).chain(h_se_env.iter()) {
        let dev = hermiticity_deviation(m);
        if dev > HERMITICITY_TOL * max_abs(m).max(1.0) {
            return Err(ModelError::InvalidParams(format!(
                "model4: environment operator not Hermitian (deviation {dev:.3e})"
            )));
        }
    }
    if case == MeasurementCase::A {
        for (i, h_i) in h_se_env.iter().enumerate() {
            let norm = opnorm(&commutator(&h_e_env, h_i));
            let bound = 1e-10 * (opnorm(&h_e_env) * opnorm(h_i) + 1.0);
            if norm > bound {
                return Err(ModelError::CommutationViolation {
                    branch: i,
                    norm,
                    bound,
                });
            }
        }
    }

    let layout = SpaceLayout::new(n_levels, de);
    let mut h_s_sys = OperatorMatrix::zeros(n_levels, n_levels);
    for (i, &eps) in params.epsilons.iter().enumerate() {
        h_s_sys[(i, i)] = C64::new(eps, 0.0);
    }
    let h_s = embed_system(&h_s_sys, layout);
    let h_e = embed_env(&h_e_env, layout);
    let mut h_se = OperatorMatrix::zeros(layout.total_dim(), layout.total_dim());
    for (i, h_i) in h_se_env.iter().enumerate() {
        h_se += crate::linalg::kron(&projector(n_levels, i), h_i);
    }

    let amplitudes = match &params.amplitudes {
        Some(raw) => pure_amplitudes_from(raw, n_levels, "model4")?,
        None => {
            let w = C64::new(1.0 / (n_levels as f64).sqrt(), 0.0);
            vec![w; n_levels]
        }
    };
    let initial = InitialState {
        system: SystemInit::Pure(amplitudes),
        environment: EnvInit::Pure(env_init),
    };
    initial.validate(layout)?;

    let mut out_params = params.clone();
    if case == MeasurementCase::B {
        // Gaussian rate from the coupling spread: the widest pair dominates
        // the leading off-diagonal envelope.
        let spread = params
            .etas
            .iter()
            .flat_map(|&a| params.etas.iter().map(move |&b| (a - b).abs()))
            .fold(0.0f64, f64::max);
        out_params.kappa = -spread * spread / 2.0;
    }

    let tag = match case {
        MeasurementCase::A => ModelTag::Model4a,
        MeasurementCase::B => ModelTag::Model4b,
    };
    Ok(ModelInstance {
        tag,
        params: out_params.clone(),
        kind: ModelKind::Tensor(TensorModel {
            layout,
            h_s,
            h_e,
            h_se,
            initial,
            system_space: FactorSpace::Levels(n_levels),
            env_space: FactorSpace::Fock(FockSpace::new(de - 1)),
            fock_top_indices: top_level_indices(layout, false),
            measurement: Some(MeasurementData {
                case,
                epsilons: out_params.epsilons.clone(),
                h_e_env,
                h_se_env,
            }),
        }),
    })
}

/// Default instantiation of model 4 (the catalogue gives shapes, not
/// numbers): case (a) couples every level to the boson number operator with
/// its own strength and starts the environment in a coherent state; case (b)
/// uses momentum as the drive and position couplings on the vacuum, so each
/// branch commutator is the scalar `-i beta eta_i` below the truncation edge.
pub fn build_model4_default(
    params: &ModelParams,
    case: MeasurementCase,
) -> Result<ModelInstance, ModelError> {
    let n_levels = params.epsilons.len();
    if params.etas.len() != n_levels {
        return Err(ModelError::InvalidParams(format!(
            "model4: {} couplings for {} levels",
            params.etas.len(),
            n_levels
        )));
    }
    let fock = FockSpace::new(params.n_max);
    match case {
        MeasurementCase::A => {
            let h_e = fock.number().map(|z| z * params.beta);
            let family: Vec<OperatorMatrix> = params
                .etas
                .iter()
                .map(|&eta_i| fock.number().map(|z| z * eta_i))
                .collect();
            let alpha = C64::new(params.alpha_c.0, params.alpha_c.1);
            let (gamma, lost) = fock.coherent_vector(alpha);
            if lost > 1e-10 {
                return Err(ModelError::TruncationTooSmall {
                    needed: (alpha.norm_sqr() + 4.0 * alpha.norm()).ceil() as usize
                        + FOCK_SAFETY_MARGIN,
                    got: params.n_max,
                    initial_occupation: alpha.norm_sqr().ceil() as usize,
                    ladder_reach: 0,
                });
            }
            let gamma = &gamma / C64::new(gamma.norm(), 0.0);
            build_model4(params, case, h_e, family, gamma)
        }
        MeasurementCase::B => {
            let h_e = fock.momentum().map(|z| z * params.beta);
            let family: Vec<OperatorMatrix> = params
                .etas
                .iter()
                .map(|&eta_i| fock.position().map(|z| z * eta_i))
                .collect();
            build_model4(params, case, h_e, family, fock.fock_vector(0))
        }
    }
}

/// Dissipative level system defined by its energies and a bath spectral
/// density; consumed by the Green's-function solver.
pub fn build_model5(
    params: &ModelParams,
    e_s: Vec<f64>,
    spectral: SpectralDensity,
) -> Result<ModelInstance, ModelError> {
    params.finite()?;
    if e_s.is_empty() {
        return Err(ModelError::InvalidParams(
            "model5 needs at least one level".into(),
        ));
    }
    if e_s.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::InvalidParams(
            "model5 level energies must be finite".into(),
        ));
    }
    spectral
        .validate()
        .map_err(|e| ModelError::InvalidParams(e.to_string()))?;
    Ok(ModelInstance {
        tag: ModelTag::Model5,
        params: params.clone(),
        kind: ModelKind::Greens(GreensModel { e_s, spectral }),
    })
}

/// Build a catalogue entry from its tag with per-model defaults (model 5
/// gets a flat spectrum; use [`build_model5`] for anything richer).
pub fn build_default(tag: ModelTag) -> Result<ModelInstance, ModelError> {
    let params = ModelParams::defaults_for(tag);
    match tag {
        ModelTag::Model1 => build_model1(&params),
        ModelTag::Model2 => build_model2(&params, EnvWeighting::Conventional),
        ModelTag::Model3 => build_model3(&params),
        ModelTag::Model4a => build_model4_default(&params, MeasurementCase::A),
        ModelTag::Model4b => build_model4_default(&params, MeasurementCase::B),
        ModelTag::Model5 => build_model5(
            &params,
            vec![0.1, 0.2],
            SpectralDensity::Flat { j0: 0.2 },
        ),
    }
}
