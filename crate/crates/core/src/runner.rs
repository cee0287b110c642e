//! Scenario execution: build the configured model, produce one trajectory
//! per requested path, compare them, classify the dynamics, and write the
//! plot-ready artifacts into an isolated output directory.

use crate::closedform::{model1_rho_diag, model2_rho, model3_rho, model4_rho, ClosedFormError};
use crate::config::{Model1Reading, PathChoice, RunConfig};
use crate::constants::RHO_EIGENVALUE_FLOOR;
use crate::diagnostics::{coherence_series, markovianity_verdict, DiagnosticsError};
use crate::evolution::{propagate_oracle, EvolutionError, Trajectory, TrajectorySource};
use crate::greens::{solve_greens, GreensError, GreensSolution};
use crate::linalg::{vector_partial_trace_system, LinalgError, OperatorMatrix, StateVector};
use crate::models::{ModelError, ModelInstance, ModelKind, ModelTag, SystemInit};
use crate::report::{
    write_comparison_csv, write_discrepancy_json, write_greens_csv, write_trajectory_csv,
    write_verdict_json, DiscrepancyRecord, ReportError, VerdictDocument,
};
use crate::zassenhaus::{zassenhaus_propagator, ZassenhausError};
use crate::C64;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    ClosedForm(#[from] ClosedFormError),
    #[error(transparent)]
    Zassenhaus(#[from] ZassenhausError),
    #[error(transparent)]
    Greens(#[from] GreensError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("{0}")]
    Unsupported(String),
}

impl RunnerError {
    /// Whether the failure is a usage problem (bad config) rather than a
    /// numeric one; drives the process exit code.
    pub fn is_usage(&self) -> bool {
        matches!(self, RunnerError::Config(_) | RunnerError::Unsupported(_))
    }
}

/// Worst disagreement between two trajectories over a shared grid.
#[derive(Debug, Clone)]
pub struct PairSummary {
    pub a: String,
    pub b: String,
    pub max_abs_delta: f64,
    pub worst_time: f64,
    pub worst_row: usize,
    pub worst_col: usize,
}

fn pair_summary(a: (&str, &Trajectory), b: (&str, &Trajectory)) -> PairSummary {
    let mut worst = PairSummary {
        a: a.0.to_string(),
        b: b.0.to_string(),
        max_abs_delta: 0.0,
        worst_time: a.1.times.first().copied().unwrap_or(0.0),
        worst_row: 0,
        worst_col: 0,
    };
    for (idx, t) in a.1.times.iter().enumerate() {
        let delta = &a.1.states[idx] - &b.1.states[idx];
        for i in 0..delta.nrows() {
            for j in 0..delta.ncols() {
                let mag = delta[(i, j)].norm();
                if mag > worst.max_abs_delta {
                    worst.max_abs_delta = mag;
                    worst.worst_time = *t;
                    worst.worst_row = i;
                    worst.worst_col = j;
                }
            }
        }
    }
    worst
}

/// Everything one run produced.
#[derive(Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub pair_summaries: Vec<PairSummary>,
    pub discrepancy: Option<DiscrepancyRecord>,
    pub verdict: VerdictDocument,
}

fn pure_amplitudes<'a>(
    instance: &'a ModelInstance,
    what: &str,
) -> Result<&'a [C64], RunnerError> {
    let model = instance.tensor()?;
    match &model.initial.system {
        SystemInit::Pure(c) => Ok(c),
        SystemInit::DiagonalMixture(_) => Err(RunnerError::Unsupported(format!(
            "{what} needs a pure system preparation; this run starts from a diagonal mixture"
        ))),
    }
}

/// Closed-form trajectory for the configured model on the given grid.
pub fn propagate_closed_form(
    config: &RunConfig,
    instance: &ModelInstance,
    times: &[f64],
) -> Result<Trajectory, RunnerError> {
    let mut states = Vec::with_capacity(times.len());
    match instance.tag {
        ModelTag::Model1 => {
            let renormalize = config.model1_reading == Model1Reading::Renormalized;
            for &t in times {
                let diag = model1_rho_diag(instance, t, renormalize)?;
                let d = diag.diagonal.len();
                states.push(OperatorMatrix::from_fn(d, d, |i, j| {
                    if i == j {
                        C64::new(diag.diagonal[i], 0.0)
                    } else {
                        C64::new(0.0, 0.0)
                    }
                }));
            }
        }
        ModelTag::Model2 => {
            let amplitudes = pure_amplitudes(instance, "the propagator-product form")?.to_vec();
            for &t in times {
                states.push(model2_rho(
                    &instance.params,
                    &amplitudes,
                    t,
                    config.weighting.into(),
                )?);
            }
        }
        ModelTag::Model3 => {
            let amplitudes = pure_amplitudes(instance, "the vacuum-environment form")?.to_vec();
            for &t in times {
                states.push(model3_rho(&instance.params, &amplitudes, t)?);
            }
        }
        ModelTag::Model4a | ModelTag::Model4b => {
            for &t in times {
                states.push(model4_rho(instance, t)?);
            }
        }
        ModelTag::Model5 => {
            return Err(RunnerError::Unsupported(
                "the level system solves for propagators, not trajectories; \
                 its run writes the propagator table instead"
                    .into(),
            ));
        }
    }
    Ok(Trajectory {
        times: times.to_vec(),
        states,
        source: TrajectorySource::ClosedForm,
        top_population: Vec::new(),
    })
}

/// Trajectory via the truncated product expansion: split the joint
/// Hamiltonian into its free and interaction parts, build the order-`order`
/// approximate propagator at each time, and reduce. No truncation monitor
/// runs here — the oracle path carries the physical-state guard.
pub fn propagate_zassenhaus(
    instance: &ModelInstance,
    times: &[f64],
    order: usize,
) -> Result<Trajectory, RunnerError> {
    let model = instance.tensor()?;
    let layout = model.layout;
    let h_free = &model.h_s + &model.h_e;
    let system_factors = model.initial.system.rank_factors();
    let env_factors = model.initial.env_rank_factors()?;
    let mut states = Vec::with_capacity(times.len());
    let mut top = Vec::with_capacity(times.len());
    for &t in times {
        let propagator = zassenhaus_propagator(&h_free, &model.h_se, t, order)?;
        let ds = layout.system_dim;
        let mut rho = OperatorMatrix::zeros(ds, ds);
        let mut spill = 0.0f64;
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
                let psi = &propagator * &psi0;
                spill += weight
                    * model
                        .fock_top_indices
                        .iter()
                        .map(|&idx| psi[idx].norm_sqr())
                        .sum::<f64>();
                rho += vector_partial_trace_system(&psi, layout)?.map(|z| z * weight);
            }
        }
        states.push(rho);
        top.push(spill);
    }
    Ok(Trajectory {
        times: times.to_vec(),
        states,
        source: TrajectorySource::Zassenhaus(order),
        top_population: if model.fock_top_indices.is_empty() {
            Vec::new()
        } else {
            top
        },
    })
}

/// The literal level-ladder readout is deliberately trace-deficient, so the
/// full density validation does not apply; check what still must hold and
/// return the worst deficit.
fn check_literal_diagonal(traj: &Trajectory) -> Result<f64, RunnerError> {
    let mut worst = 0.0f64;
    for (&t, rho) in traj.times.iter().zip(&traj.states) {
        let mut trace = 0.0f64;
        for i in 0..rho.nrows() {
            for j in 0..rho.ncols() {
                let z = rho[(i, j)];
                if i == j {
                    if z.re < RHO_EIGENVALUE_FLOOR || z.im.abs() > 1e-14 {
                        return Err(RunnerError::Unsupported(format!(
                            "literal readout produced an invalid diagonal entry {z} at t = {t}"
                        )));
                    }
                    trace += z.re;
                } else if z.norm() > 0.0 {
                    return Err(RunnerError::Unsupported(format!(
                        "literal readout produced an off-diagonal entry at t = {t}"
                    )));
                }
            }
        }
        if trace > 1.0 + 1e-9 {
            return Err(RunnerError::Unsupported(format!(
                "literal readout trace {trace} exceeds one at t = {t}"
            )));
        }
        worst = worst.max(1.0 - trace);
    }
    Ok(worst)
}

fn produce_trajectory(
    config: &RunConfig,
    instance: &ModelInstance,
    times: &[f64],
    path: PathChoice,
) -> Result<Trajectory, RunnerError> {
    match path {
        PathChoice::Oracle => Ok(propagate_oracle(instance, times)?),
        PathChoice::ClosedForm => propagate_closed_form(config, instance, times),
        PathChoice::Zassenhaus(order) => propagate_zassenhaus(instance, times, order),
    }
}

/// Whether this trajectory is exempt from the unit-trace validation (the
/// literal level-ladder readout reports its deficit instead).
fn literal_reading(config: &RunConfig, path: PathChoice) -> bool {
    config.model == ModelTag::Model1
        && path == PathChoice::ClosedForm
        && config.model1_reading == Model1Reading::Literal
}

/// Classification + verdict for a tensor-model run. The coherence series is
/// read off the reference trajectory; a grid too short or too coarse for
/// classification leaves that field empty rather than failing the run.
fn verdict_for_tensor(
    config: &RunConfig,
    instance: &ModelInstance,
    reference: &Trajectory,
    trace_deficit: Option<f64>,
) -> Result<VerdictDocument, RunnerError> {
    let verdict = markovianity_verdict(instance)?;
    let coherence = match coherence_series(reference, config.characteristic_period()) {
        Ok(report) => Some(report),
        Err(DiagnosticsError::InsufficientSamples { .. })
        | Err(DiagnosticsError::InsufficientSpan { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(VerdictDocument {
        model: instance.tag.to_string(),
        commutator: verdict.commutator.clone(),
        coherence,
        verdict,
        trace_deficit,
        dissipation_constancy: None,
    })
}

/// Worst deviation of any level's dissipation rate from its final value.
fn dissipation_constancy(solution: &GreensSolution) -> f64 {
    let n = solution.times.len();
    let mut worst = 0.0f64;
    if n == 0 {
        return worst;
    }
    for level in 0..solution.levels() {
        let last = solution.dissipation_scalar(n - 1, level);
        for idx in 0..n {
            worst = worst.max((solution.dissipation_scalar(idx, level) - last).abs());
        }
    }
    worst
}

fn run_greens(
    config: &RunConfig,
    instance: &ModelInstance,
    dir: &Path,
) -> Result<RunArtifacts, RunnerError> {
    let greens = instance.greens()?;
    let spectra = vec![greens.spectral.clone(); greens.e_s.len()];
    let solution = solve_greens(&greens.e_s, &spectra, config.t_end, config.model5.n_steps)?;
    let verdict = markovianity_verdict(instance)?;
    let doc = VerdictDocument {
        model: instance.tag.to_string(),
        commutator: None,
        coherence: None,
        verdict,
        trace_deficit: None,
        dissipation_constancy: Some(dissipation_constancy(&solution)),
    };
    let greens_path = dir.join("greens.csv");
    write_greens_csv(&greens_path, &solution)?;
    let verdict_path = dir.join("verdict.json");
    write_verdict_json(&verdict_path, &doc)?;
    Ok(RunArtifacts {
        dir: dir.to_path_buf(),
        files: vec![greens_path, verdict_path],
        pair_summaries: Vec::new(),
        discrepancy: None,
        verdict: doc,
    })
}

/// Resolve the run's output directory under the given root.
pub fn resolve_output_dir(config: &RunConfig, output_root: &Path) -> PathBuf {
    match &config.output_dir {
        Some(dir) => output_root.join(dir),
        None => output_root.join("runs").join(config.model.to_string()),
    }
}

/// Execute one configured scenario and write its artifacts under
/// `output_root` (see [`resolve_output_dir`]).
pub fn execute_run(config: &RunConfig, output_root: &Path) -> Result<RunArtifacts, RunnerError> {
    config.validate()?;
    let instance = config.build_instance()?;
    let dir = resolve_output_dir(config, output_root);
    if let ModelKind::Greens(_) = instance.kind {
        return run_greens(config, &instance, &dir);
    }

    let times = config.grid();
    let mut files = Vec::new();
    let mut produced: Vec<(PathChoice, String, Trajectory)> = Vec::new();
    let mut trace_deficit = None;
    for &path in &config.paths {
        let traj = produce_trajectory(config, &instance, &times, path)?;
        if literal_reading(config, path) {
            trace_deficit = Some(check_literal_diagonal(&traj)?);
        } else if path != PathChoice::Oracle {
            // The oracle validates during propagation.
            traj.validate().map_err(RunnerError::Evolution)?;
        }
        produced.push((path, path.label(), traj));
    }

    for (_, label, traj) in &produced {
        let file = dir.join(format!("trajectory_{label}.csv"));
        write_trajectory_csv(&file, traj)?;
        files.push(file);
    }

    let mut pair_summaries = Vec::new();
    if produced.len() >= 2 {
        let labeled: Vec<(String, &Trajectory)> = produced
            .iter()
            .map(|(_, label, traj)| (label.clone(), traj))
            .collect();
        let file = dir.join("comparison.csv");
        write_comparison_csv(&file, &labeled)?;
        files.push(file);
        for a in 0..produced.len() {
            for b in (a + 1)..produced.len() {
                pair_summaries.push(pair_summary(
                    (&produced[a].1, &produced[a].2),
                    (&produced[b].1, &produced[b].2),
                ));
            }
        }
    }

    // A closed form disagreeing with the oracle beyond tolerance is a
    // documented finding, not a run failure.
    let mut discrepancy = None;
    let find = |want: PathChoice| produced.iter().find(|(p, _, _)| *p == want);
    if let (Some((_, la, ta)), Some((_, lb, tb))) =
        (find(PathChoice::Oracle), find(PathChoice::ClosedForm))
    {
        if !literal_reading(config, PathChoice::ClosedForm) {
            let summary = pair_summary((la, ta), (lb, tb));
            if summary.max_abs_delta > config.tolerances.closed_form {
                let record = DiscrepancyRecord::new(
                    &config.model.to_string(),
                    la,
                    lb,
                    config.tolerances.closed_form,
                    summary.max_abs_delta,
                    summary.worst_time,
                    summary.worst_row,
                    summary.worst_col,
                );
                let file = dir.join("discrepancy.json");
                write_discrepancy_json(&file, &record)?;
                files.push(file);
                discrepancy = Some(record);
            }
        }
    }

    let reference = find(PathChoice::Oracle)
        .map(|(_, _, t)| t)
        .unwrap_or(&produced[0].2);
    let verdict = verdict_for_tensor(config, &instance, reference, trace_deficit)?;
    let verdict_path = dir.join("verdict.json");
    write_verdict_json(&verdict_path, &verdict)?;
    files.push(verdict_path);

    Ok(RunArtifacts {
        dir,
        files,
        pair_summaries,
        discrepancy,
        verdict,
    })
}

/// Compute the verdict document without touching the filesystem: the oracle
/// (or propagator solve) runs on the configured grid purely for
/// classification.
pub fn compute_verdict(config: &RunConfig) -> Result<VerdictDocument, RunnerError> {
    config.validate()?;
    let instance = config.build_instance()?;
    match &instance.kind {
        ModelKind::Greens(g) => {
            let spectra = vec![g.spectral.clone(); g.e_s.len()];
            let solution =
                solve_greens(&g.e_s, &spectra, config.t_end, config.model5.n_steps)?;
            let verdict = markovianity_verdict(&instance)?;
            Ok(VerdictDocument {
                model: instance.tag.to_string(),
                commutator: None,
                coherence: None,
                verdict,
                trace_deficit: None,
                dissipation_constancy: Some(dissipation_constancy(&solution)),
            })
        }
        ModelKind::Tensor(_) => {
            let times = config.grid();
            let reference = propagate_oracle(&instance, &times)?;
            verdict_for_tensor(config, &instance, &reference, None)
        }
    }
}
