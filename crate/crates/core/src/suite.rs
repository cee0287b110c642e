//! The cross-model verdict suite: one row per catalogue entry, each checked
//! against its expected commutator class, Markovianity verdict, and
//! coherence classification. A row that misses any expectation fails the
//! suite.

use crate::config::{PathChoice, RunConfig};
use crate::diagnostics::{CoherenceClass, CommutatorClass};
use crate::models::ModelTag;
use crate::runner::{compute_verdict, RunnerError};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// What one suite row must show.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RowExpectation {
    /// Expected commutator class; `None` means the model has no commutator
    /// report (the level system).
    pub commutator: Option<CommutatorClass>,
    pub markovian: bool,
    /// Expected coherence class; `None` skips the check.
    pub coherence: Option<CoherenceClass>,
    /// When set, the fitted Gaussian decay rate must match the rate recorded
    /// on the built instance within this relative tolerance.
    pub kappa_fit_rel_tol: Option<f64>,
    /// When set, every level's dissipation rate must stay within this bound
    /// of its final value (level systems).
    pub constant_dissipation_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSpec {
    pub config: RunConfig,
    pub expected: RowExpectation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub rows: Vec<RowSpec>,
}

fn row(
    tag: ModelTag,
    t_end: f64,
    n_points: usize,
    expected: RowExpectation,
) -> RowSpec {
    let mut config = RunConfig::for_model(tag);
    config.t_end = t_end;
    config.n_points = n_points;
    config.paths = vec![PathChoice::Oracle];
    RowSpec { config, expected }
}

impl Default for SuiteSpec {
    /// The six-row catalogue summary: every model with its published
    /// verdict triple.
    fn default() -> Self {
        SuiteSpec {
            rows: vec![
                row(
                    ModelTag::Model1,
                    50.0,
                    64,
                    RowExpectation {
                        commutator: Some(CommutatorClass::General),
                        markovian: true,
                        coherence: Some(CoherenceClass::ConstantDiagonal),
                        ..Default::default()
                    },
                ),
                row(
                    ModelTag::Model2,
                    30.0,
                    96,
                    RowExpectation {
                        commutator: Some(CommutatorClass::Commuting),
                        markovian: true,
                        coherence: Some(CoherenceClass::Oscillatory),
                        ..Default::default()
                    },
                ),
                row(
                    ModelTag::Model3,
                    30.0,
                    128,
                    RowExpectation {
                        commutator: Some(CommutatorClass::General),
                        markovian: false,
                        coherence: Some(CoherenceClass::Oscillatory),
                        ..Default::default()
                    },
                ),
                row(
                    ModelTag::Model4a,
                    40.0,
                    161,
                    RowExpectation {
                        commutator: Some(CommutatorClass::Commuting),
                        markovian: true,
                        coherence: Some(CoherenceClass::Oscillatory),
                        ..Default::default()
                    },
                ),
                row(
                    ModelTag::Model4b,
                    8.0,
                    81,
                    RowExpectation {
                        commutator: Some(CommutatorClass::ScalarCommutator),
                        markovian: false,
                        coherence: Some(CoherenceClass::GaussianDecay),
                        kappa_fit_rel_tol: Some(0.05),
                        ..Default::default()
                    },
                ),
                row(
                    ModelTag::Model5,
                    20.0,
                    101,
                    RowExpectation {
                        commutator: None,
                        markovian: true,
                        coherence: None,
                        constant_dissipation_tol: Some(1e-8),
                        ..Default::default()
                    },
                ),
            ],
        }
    }
}

/// One evaluated row: the observed verdicts plus what (if anything) missed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowResult {
    pub model: String,
    pub commutator: Option<CommutatorClass>,
    pub markovian: bool,
    pub coherence: Option<CoherenceClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitted_kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dissipation_constancy: Option<f64>,
    pub pass: bool,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub rows: Vec<RowResult>,
    pub all_pass: bool,
}

fn class_name(class: Option<CommutatorClass>) -> &'static str {
    class.map_or("-", |c| c.as_str())
}

fn coherence_name(class: Option<CoherenceClass>) -> &'static str {
    class.map_or("-", |c| c.as_str())
}

fn evaluate_row(spec: &RowSpec) -> RowResult {
    let model = spec.config.model.to_string();
    let doc = match compute_verdict(&spec.config) {
        Ok(doc) => doc,
        Err(e) => {
            return RowResult {
                model,
                commutator: None,
                markovian: false,
                coherence: None,
                fitted_kappa: None,
                dissipation_constancy: None,
                pass: false,
                failures: vec![format!("run failed: {e}")],
            };
        }
    };
    let commutator = doc.commutator.as_ref().map(|c| c.classification);
    let coherence = doc.coherence.as_ref().map(|c| c.classification);
    let fitted_kappa = doc.coherence.as_ref().and_then(|c| c.fitted_kappa);
    let mut failures = Vec::new();

    if commutator != spec.expected.commutator {
        failures.push(format!(
            "commutator class {} (expected {})",
            class_name(commutator),
            class_name(spec.expected.commutator)
        ));
    }
    if doc.verdict.markovian != spec.expected.markovian {
        failures.push(format!(
            "verdict {} (expected {})",
            verdict_word(doc.verdict.markovian),
            verdict_word(spec.expected.markovian)
        ));
    }
    if let Some(expected) = spec.expected.coherence {
        if coherence != Some(expected) {
            failures.push(format!(
                "coherence class {} (expected {})",
                coherence_name(coherence),
                expected.as_str()
            ));
        }
    }
    if let Some(rel_tol) = spec.expected.kappa_fit_rel_tol {
        match (fitted_kappa, recorded_kappa(&spec.config)) {
            (_, None) => failures.push("no recorded decay rate to compare against".into()),
            (None, Some(_)) => {
                failures.push("classification produced no fitted decay rate".into())
            }
            (Some(fitted), Some(recorded)) => {
                if recorded.abs() < 1e-300 {
                    failures.push(format!(
                        "recorded decay rate is zero; fitted {fitted:+.6e} cannot be \
                         compared relatively"
                    ));
                } else if (fitted - recorded).abs() > rel_tol * recorded.abs() {
                    failures.push(format!(
                        "fitted decay rate {fitted:+.6e} off the recorded {recorded:+.6e} \
                         by more than {:.1}%",
                        rel_tol * 100.0
                    ));
                }
            }
        }
    }
    if let Some(tol) = spec.expected.constant_dissipation_tol {
        match doc.dissipation_constancy {
            Some(dev) if dev <= tol => {}
            Some(dev) => failures.push(format!(
                "dissipation rates vary by {dev:.3e} (allowed {tol:.1e})"
            )),
            None => failures.push("no dissipation rates to check".into()),
        }
    }

    RowResult {
        model,
        commutator,
        markovian: doc.verdict.markovian,
        coherence,
        fitted_kappa,
        dissipation_constancy: doc.dissipation_constancy,
        pass: failures.is_empty(),
        failures,
    }
}

fn recorded_kappa(config: &RunConfig) -> Option<f64> {
    config
        .build_instance()
        .ok()
        .map(|instance| instance.params.kappa)
}

fn verdict_word(markovian: bool) -> &'static str {
    if markovian {
        "markovian"
    } else {
        "non-markovian"
    }
}

/// Evaluate every row; a row whose run errors becomes a failing row rather
/// than aborting the others.
pub fn run_suite(spec: &SuiteSpec) -> Result<SuiteReport, RunnerError> {
    let rows: Vec<RowResult> = spec.rows.iter().map(evaluate_row).collect();
    let all_pass = rows.iter().all(|r| r.pass);
    Ok(SuiteReport { rows, all_pass })
}

/// Human-readable table carrying exactly the verdict fields that the JSON
/// report carries.
pub fn render_table(report: &SuiteReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<9} {:<19} {:<14} {:<19} {:<14} {}",
        "model", "commutator", "verdict", "coherence", "fitted_kappa", "result"
    );
    let _ = writeln!(out, "{}", "-".repeat(84));
    for row in &report.rows {
        let kappa = row
            .fitted_kappa
            .map_or("-".to_string(), |k| format!("{k:+.6e}"));
        let _ = writeln!(
            out,
            "{:<9} {:<19} {:<14} {:<19} {:<14} {}",
            row.model,
            class_name(row.commutator),
            verdict_word(row.markovian),
            coherence_name(row.coherence),
            kappa,
            if row.pass { "PASS" } else { "FAIL" }
        );
    }
    for row in &report.rows {
        for failure in &row.failures {
            let _ = writeln!(out, "  {}: {}", row.model, failure);
        }
    }
    let passed = report.rows.iter().filter(|r| r.pass).count();
    let _ = writeln!(
        out,
        "suite: {} ({passed}/{} rows)",
        if report.all_pass { "PASS" } else { "FAIL" },
        report.rows.len()
    );
    out
}
