//! Command-line front end: configure a scenario, run it, and inspect the
//! verdicts. Exit codes: 0 success (a flagged DISCREPANCY is a finding, not
//! a failure), 1 usage or configuration error, 2 numeric failure or missed
//! suite expectation.

use clap::{Args, Parser, Subcommand};
use oqslab::config::{ConfigError, PathChoice, RunConfig};
use oqslab::models::ModelTag;
use oqslab::report::VerdictDocument;
use oqslab::runner::{compute_verdict, execute_run, RunnerError};
use oqslab::suite::{render_table, run_suite, SuiteSpec};
use std::path::{Path, PathBuf};

const OUTPUT_ROOT_VAR: &str = "OQSLAB_OUTPUT_ROOT";

#[derive(Parser)]
#[command(
    name = "oqslab",
    version,
    about = "Trajectories, comparisons, and Markovianity verdicts for a small \
             catalogue of exactly solvable open-system models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario: produce a trajectory per path and write the
    /// comparison and verdict artifacts.
    Run(ScenarioArgs),
    /// Evaluate the six-row cross-model verdict suite and write suite.json.
    Suite(SuiteArgs),
    /// Print the scenario's verdict document without writing artifacts.
    Verdict(ScenarioArgs),
    /// Run the scenario and summarize how far the selected paths disagree.
    Compare(ScenarioArgs),
}

/// Scenario selection: a config file, override flags, or both (flags win).
#[derive(Args)]
struct ScenarioArgs {
    /// Scenario description file (TOML).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Model tag: model1, model2, model3, model4a, model4b, or model5.
    #[arg(long, value_name = "TAG")]
    model: Option<String>,
    /// End of the time grid.
    #[arg(long, value_name = "T")]
    t_end: Option<f64>,
    /// Number of grid points (including t = 0).
    #[arg(long, value_name = "N")]
    n_points: Option<usize>,
    /// Computation path (repeatable): oracle, closedform, or zassenhaus:N.
    /// Replaces the configured list when given.
    #[arg(long = "path", value_name = "PATH")]
    paths: Vec<String>,
    /// Output directory, resolved under the output root.
    #[arg(long, value_name = "DIR")]
    output_dir: Option<String>,
}

#[derive(Args)]
struct SuiteArgs {
    /// Directory (under the output root) for suite.json.
    #[arg(long, value_name = "DIR")]
    output_dir: Option<String>,
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn usage_error(message: String) -> RunnerError {
    RunnerError::Config(ConfigError::Invalid(message))
}

fn build_config(args: &ScenarioArgs) -> Result<RunConfig, RunnerError> {
    let mut config = match (&args.config, &args.model) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage_error(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::from_toml_str(&text)?
        }
        (None, Some(tag)) => {
            let tag: ModelTag = tag
                .parse()
                .map_err(|e| usage_error(format!("{e}")))?;
            RunConfig::for_model(tag)
        }
        (None, None) => {
            return Err(usage_error(
                "pass --config FILE or --model TAG to select a scenario".into(),
            ));
        }
    };
    if args.config.is_some() {
        if let Some(tag) = &args.model {
            config.model = tag.parse().map_err(|e| usage_error(format!("{e}")))?;
        }
    }
    if let Some(t_end) = args.t_end {
        config.t_end = t_end;
    }
    if let Some(n_points) = args.n_points {
        config.n_points = n_points;
    }
    if !args.paths.is_empty() {
        let mut paths = Vec::new();
        for text in &args.paths {
            paths.push(text.parse::<PathChoice>()?);
        }
        config.paths = paths;
    }
    if let Some(dir) = &args.output_dir {
        config.output_dir = Some(dir.clone());
    }
    config.validate()?;
    Ok(config)
}

fn verdict_headline(doc: &VerdictDocument) -> String {
    let mut line = format!(
        "verdict: {} is {}",
        doc.model,
        if doc.verdict.markovian {
            "markovian"
        } else {
            "non-markovian"
        }
    );
    if let Some(report) = &doc.commutator {
        line.push_str(&format!(" (commutator {})", report.classification.as_str()));
    }
    if let Some(report) = &doc.coherence {
        line.push_str(&format!(
            "; coherence {}",
            report.classification.as_str()
        ));
    }
    if let Some(deficit) = doc.trace_deficit {
        line.push_str(&format!("; literal-readout trace deficit {deficit:.3e}"));
    }
    if let Some(dev) = doc.dissipation_constancy {
        line.push_str(&format!("; dissipation constancy {dev:.3e}"));
    }
    line
}

fn cmd_run(args: &ScenarioArgs, root: &Path) -> Result<i32, RunnerError> {
    let config = build_config(args)?;
    let artifacts = execute_run(&config, root)?;
    for file in &artifacts.files {
        println!("wrote {}", file.display());
    }
    println!("{}", verdict_headline(&artifacts.verdict));
    if let Some(record) = &artifacts.discrepancy {
        println!(
            "DISCREPANCY: {} vs {} max |delta| = {:.6e} at t = {:.6}, element ({}, {}); \
             tolerance {:.1e} — see discrepancy.json",
            record.path_a,
            record.path_b,
            record.max_abs_delta,
            record.worst_time,
            record.worst_row,
            record.worst_col,
            record.tolerance
        );
    }
    Ok(0)
}

fn cmd_compare(args: &ScenarioArgs, root: &Path) -> Result<i32, RunnerError> {
    let config = build_config(args)?;
    if config.model == ModelTag::Model5 {
        return Err(usage_error(
            "compare needs trajectory paths; the level system has a single solver".into(),
        ));
    }
    if config.paths.len() < 2 {
        return Err(usage_error(
            "compare needs at least two paths (repeat --path)".into(),
        ));
    }
    let artifacts = execute_run(&config, root)?;
    for pair in &artifacts.pair_summaries {
        println!(
            "{} vs {}: max |delta| = {:.6e} at t = {:.6}, element ({}, {})",
            pair.a, pair.b, pair.max_abs_delta, pair.worst_time, pair.worst_row, pair.worst_col
        );
    }
    println!(
        "comparison table: {}",
        artifacts.dir.join("comparison.csv").display()
    );
    if let Some(record) = &artifacts.discrepancy {
        println!(
            "DISCREPANCY: {} vs {} exceeded tolerance {:.1e} — see discrepancy.json",
            record.path_a, record.path_b, record.tolerance
        );
    }
    Ok(0)
}

fn cmd_verdict(args: &ScenarioArgs) -> Result<i32, RunnerError> {
    let config = build_config(args)?;
    let doc = compute_verdict(&config)?;
    let body = serde_json::to_string_pretty(&doc)
        .map_err(|e| RunnerError::Report(oqslab::report::ReportError::Json(e)))?;
    println!("{body}");
    Ok(0)
}

fn cmd_suite(args: &SuiteArgs, root: &Path) -> Result<i32, RunnerError> {
    let spec = SuiteSpec::default();
    let report = run_suite(&spec)?;
    print!("{}", render_table(&report));
    let dir = match &args.output_dir {
        Some(dir) => root.join(dir),
        None => root.join("runs").join("suite"),
    };
    std::fs::create_dir_all(&dir)
        .map_err(|e| usage_error(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join("suite.json");
    let mut body = serde_json::to_string_pretty(&report)
        .map_err(|e| RunnerError::Report(oqslab::report::ReportError::Json(e)))?;
    body.push('\n');
    std::fs::write(&path, body)
        .map_err(|e| usage_error(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(if report.all_pass { 0 } else { 2 })
}

fn dispatch(cli: Cli) -> Result<i32, RunnerError> {
    let root = output_root();
    match &cli.command {
        Command::Run(args) => cmd_run(args, &root),
        Command::Suite(args) => cmd_suite(args, &root),
        Command::Verdict(args) => cmd_verdict(args),
        Command::Compare(args) => cmd_compare(args, &root),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not usage errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(if e.is_usage() { 1 } else { 2 });
        }
    }
}
