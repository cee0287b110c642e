//! Plot-ready artifact writers. Every writer formats floats with a fixed
//! `{:.16e}` scheme and iterates in a fixed order, so identical inputs
//! produce byte-identical bodies.

use crate::diagnostics::{
    offdiag_measures, CoherenceReport, CommutatorReport, MarkovianityVerdict,
};
use crate::evolution::Trajectory;
use crate::greens::GreensSolution;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot encode report: {0}")]
    Json(#[from] serde_json::Error),
    #[error("comparison needs trajectories on the same grid: {0}")]
    GridMismatch(String),
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_text(path: &Path, body: &str) -> Result<(), ReportError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| ReportError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    fs::write(path, body).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// CSV body for one trajectory: `t`, then `re_rho_<i>_<j>`, `im_rho_<i>_<j>`
/// for each element in row-major order, then the coherence metrics and the
/// real trace (which exposes any deliberate trace deficit).
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let dim = traj.system_dim();
    let mut out = String::new();
    out.push('t');
    for i in 0..dim {
        for j in 0..dim {
            let _ = write!(out, ",re_rho_{i}_{j},im_rho_{i}_{j}");
        }
    }
    out.push_str(",l1_offdiag,max_offdiag,trace_re\n");
    for (idx, rho) in traj.states.iter().enumerate() {
        out.push_str(&fmt_float(traj.times[idx]));
        for i in 0..dim {
            for j in 0..dim {
                let z = rho[(i, j)];
                let _ = write!(out, ",{},{}", fmt_float(z.re), fmt_float(z.im));
            }
        }
        let (l1, max) = offdiag_measures(rho);
        let trace_re: f64 = (0..dim).map(|i| rho[(i, i)].re).sum();
        let _ = write!(
            out,
            ",{},{},{}\n",
            fmt_float(l1),
            fmt_float(max),
            fmt_float(trace_re)
        );
    }
    out
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<(), ReportError> {
    write_text(path, &trajectory_csv(traj))
}

/// CSV body comparing trajectories pairwise: `t`, then one
/// `max_abs_delta_<a>_vs_<b>` column per (earlier, later) pair in the given
/// order, holding the per-time max elementwise `|rho_a - rho_b|`.
pub fn comparison_csv(labeled: &[(String, &Trajectory)]) -> Result<String, ReportError> {
    if labeled.len() < 2 {
        return Err(ReportError::GridMismatch(
            "need at least two trajectories to compare".into(),
        ));
    }
    let times = &labeled[0].1.times;
    for (label, traj) in labeled {
        if traj.times.len() != times.len()
            || traj
                .times
                .iter()
                .zip(times.iter())
                .any(|(a, b)| (a - b).abs() > 1e-12)
        {
            return Err(ReportError::GridMismatch(format!(
                "`{label}` uses a different time grid"
            )));
        }
        if traj.system_dim() != labeled[0].1.system_dim() {
            return Err(ReportError::GridMismatch(format!(
                "`{label}` has a different system dimension"
            )));
        }
    }
    let mut out = String::from("t");
    for a in 0..labeled.len() {
        for b in (a + 1)..labeled.len() {
            let _ = write!(out, ",max_abs_delta_{}_vs_{}", labeled[a].0, labeled[b].0);
        }
    }
    out.push('\n');
    for idx in 0..times.len() {
        out.push_str(&fmt_float(times[idx]));
        for a in 0..labeled.len() {
            for b in (a + 1)..labeled.len() {
                let delta = &labeled[a].1.states[idx] - &labeled[b].1.states[idx];
                let max = delta.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
                let _ = write!(out, ",{}", fmt_float(max));
            }
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_comparison_csv(
    path: &Path,
    labeled: &[(String, &Trajectory)],
) -> Result<(), ReportError> {
    write_text(path, &comparison_csv(labeled)?)
}

/// CSV body for the dissipative level system: `t`, then per level `k` the
/// propagator components `re_g_<k>`, `im_g_<k>` and the instantaneous
/// dissipation rate `c_<k>`.
pub fn greens_csv(solution: &GreensSolution) -> String {
    let levels = solution.levels();
    let mut out = String::from("t");
    for k in 0..levels {
        let _ = write!(out, ",re_g_{k},im_g_{k},c_{k}");
    }
    out.push('\n');
    for idx in 0..solution.times.len() {
        out.push_str(&fmt_float(solution.times[idx]));
        for k in 0..levels {
            let g = solution.g[idx][k];
            let c = solution.dissipation_scalar(idx, k);
            let _ = write!(
                out,
                ",{},{},{}",
                fmt_float(g.re),
                fmt_float(g.im),
                fmt_float(c)
            );
        }
        out.push('\n');
    }
    out
}

pub fn write_greens_csv(path: &Path, solution: &GreensSolution) -> Result<(), ReportError> {
    write_text(path, &greens_csv(solution))
}

/// The run's verdict document: headline classification fields hoisted to the
/// top level, full detail nested under `verdict`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictDocument {
    pub model: String,
    pub commutator: Option<CommutatorReport>,
    pub coherence: Option<CoherenceReport>,
    pub verdict: MarkovianityVerdict,
    /// How far the emitted trace falls below one, when the run deliberately
    /// emits a trace-deficient readout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_deficit: Option<f64>,
    /// Worst deviation of the dissipation rates from constancy (level
    /// systems only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dissipation_constancy: Option<f64>,
}

pub fn write_verdict_json(path: &Path, doc: &VerdictDocument) -> Result<(), ReportError> {
    let mut body = serde_json::to_string_pretty(doc)?;
    body.push('\n');
    write_text(path, &body)
}

/// A finding, not a failure: two paths that should agree exceeded the
/// configured tolerance somewhere. The run still exits cleanly; this record
/// documents where the disagreement peaks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscrepancyRecord {
    pub kind: String,
    pub model: String,
    pub path_a: String,
    pub path_b: String,
    pub tolerance: f64,
    pub max_abs_delta: f64,
    pub worst_time: f64,
    pub worst_row: usize,
    pub worst_col: usize,
}

impl DiscrepancyRecord {
    pub fn new(
        model: &str,
        path_a: &str,
        path_b: &str,
        tolerance: f64,
        max_abs_delta: f64,
        worst_time: f64,
        worst_row: usize,
        worst_col: usize,
    ) -> Self {
        Self {
            kind: "DISCREPANCY".into(),
            model: model.into(),
            path_a: path_a.into(),
            path_b: path_b.into(),
            tolerance,
            max_abs_delta,
            worst_time,
            worst_row,
            worst_col,
        }
    }
}

pub fn write_discrepancy_json(path: &Path, record: &DiscrepancyRecord) -> Result<(), ReportError> {
    let mut body = serde_json::to_string_pretty(record)?;
    body.push('\n');
    write_text(path, &body)
}
