//! `qsn` command-line front end.
//!
//! Exit codes: 0 on success, 1 on runtime errors, 2 on usage errors. Errors are
//! reported on stderr as one JSON object per line.

pub mod funcspec;
mod output;

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use qsn_core::allocation::Split;
use qsn_core::bounds::{photon_bounds, qubit_bounds, CurvatureForm, ResourceKind};
use qsn_core::experiment::{
    budget_for, sweep_resource, verify_general_fom, with_threads, AllocationRule, ExportFormat, ExportMetadata,
    ProtocolConfig, ProtocolKind, SweepConfig, SweepRecord,
};
use qsn_core::interpolation::{run_interpolation, GaussianBeam, SensorLayout};
use qsn_core::protocol::{BaselineWeights, ResourceBudget};

use funcspec::{parse_finite, parse_list, FunctionSpec, SpecError};
use output::{Emitter, Table};

fn finite(s: &str) -> Result<f64, SpecError> {
    parse_finite(s)
}

/// Comma-separated list taken as a single flag value.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
struct Floats(Vec<f64>);

impl std::ops::Deref for Floats {
    type Target = Vec<f64>;
    fn deref(&self) -> &Vec<f64> {
        &self.0
    }
}

fn list(s: &str) -> Result<Floats, SpecError> {
    parse_list(s).map(Floats)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
struct Counts(Vec<u64>);

fn function(s: &str) -> Result<FunctionSpec, SpecError> {
    FunctionSpec::parse(s)
}

/// `optimal` | `numeric` | `power:c,p` | `fixed:t1`
fn alloc(s: &str) -> Result<AllocationRule<f64>, SpecError> {
    match s.split_once(':') {
        None if s == "optimal" => Ok(AllocationRule::Optimal),
        None if s == "numeric" => Ok(AllocationRule::Numeric),
        Some(("power", v)) => match parse_list(v)?.as_slice() {
            &[c, p] => Ok(AllocationRule::PowerLaw { c, p }),
            _ => Err(SpecError(format!("expected `power:c,p`, got `{s}`"))),
        },
        Some(("fixed", v)) => Ok(AllocationRule::Fixed { t1: parse_finite(v)? }),
        _ => Err(SpecError(format!("unknown allocation policy `{s}`"))),
    }
}

fn photon_count(s: &str) -> Result<u64, SpecError> {
    s.trim().parse::<u64>().map_err(|_| SpecError(format!("`{s}` is not a photon count")))
}

fn photon_list(s: &str) -> Result<Counts, SpecError> {
    s.split(',').map(photon_count).collect::<Result<_, _>>().map(Counts)
}

#[derive(Parser, Debug)]
#[command(name = "qsn", version, about = "Bounds, simulation and allocation for distributed quantum sensing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
struct Common {
    /// Output format.
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Write to this file instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Master seed.
    #[arg(long, env = "QSN_SEED", default_value_t = 0)]
    seed: u64,
    /// Omit the creation time and zero wall-clock fields.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum ProtocolArg {
    TwoStep,
    Unentangled,
    Both,
}

impl ProtocolArg {
    fn kinds(self) -> Vec<ProtocolKind> {
        match self {
            ProtocolArg::TwoStep => vec![ProtocolKind::TwoStep],
            ProtocolArg::Unentangled => vec![ProtocolKind::Unentangled],
            ProtocolArg::Both => vec![ProtocolKind::TwoStep, ProtocolKind::Unentangled],
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
enum FormArg {
    Squared,
    AsPrinted,
}

#[derive(Args, Debug, Clone, Serialize)]
struct Target {
    /// Function spec, e.g. `linear:3,4`, `product:d=2`, `poly:d=2:x1^2*x2`.
    #[arg(long, value_parser = function)]
    #[serde(skip)]
    function: FunctionSpec,
    /// True parameter values, comma-separated.
    #[arg(long, value_parser = list, allow_hyphen_values = true)]
    theta: Floats,
}

#[derive(Args, Debug, Clone, Serialize)]
#[group(required = true, multiple = false)]
struct Resource {
    /// Total interrogation time.
    #[arg(long, value_parser = finite, allow_negative_numbers = true)]
    time: Option<f64>,
    /// Total photon number.
    #[arg(long, value_parser = photon_count)]
    photons: Option<u64>,
}

impl Resource {
    fn budget(&self) -> ResourceBudget<f64> {
        match (self.time, self.photons) {
            (Some(t), _) => ResourceBudget::Time(t),
            (_, Some(n)) => ResourceBudget::Photons(n),
            _ => unreachable!("clap enforces one resource"),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Entangled bound, unentangled baseline and advantage ratio.
    Bounds {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        resource: Resource,
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo MSE of the protocols at one resource amount.
    Simulate {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        resource: Resource,
        #[arg(long, value_parser = alloc, default_value = "optimal")]
        alloc: AllocationRule<f64>,
        #[arg(long, value_enum, default_value = "both")]
        protocol: ProtocolArg,
        #[arg(long, default_value_t = 200_000)]
        trials: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo MSE over a resource grid.
    Sweep {
        #[command(flatten)]
        target: Target,
        #[arg(long, value_parser = list, conflicts_with = "photons", required_unless_present = "photons")]
        times: Option<Floats>,
        #[arg(long, value_parser = photon_list)]
        photons: Option<Counts>,
        #[arg(long, value_parser = alloc, default_value = "optimal")]
        alloc: AllocationRule<f64>,
        #[arg(long, value_enum, default_value = "both")]
        protocol: ProtocolArg,
        #[arg(long, default_value_t = 200_000)]
        trials: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Split of the budget between the two protocol steps.
    Allocate {
        #[command(flatten)]
        target: Target,
        #[command(flatten)]
        resource: Resource,
        #[arg(long, value_parser = alloc, default_value = "optimal")]
        alloc: AllocationRule<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo check of the second-order error formula.
    VerifyFom {
        #[command(flatten)]
        target: Target,
        /// Step-1 standard deviation, one value or one per parameter.
        #[arg(long, value_parser = list)]
        sigma: Floats,
        #[arg(long, default_value_t = 1_000_000)]
        trials: usize,
        #[arg(long, value_enum, default_value = "squared")]
        form: FormArg,
        #[command(flatten)]
        common: Common,
    },
    /// Field interpolation with a Gaussian-beam ansatz.
    Interpolate {
        /// JSON layout `{"sensors": [...], "target": x}`.
        #[arg(long, conflicts_with_all = ["sensors", "target"])]
        layout: Option<PathBuf>,
        #[arg(long, value_parser = list, allow_hyphen_values = true, requires = "target")]
        sensors: Option<Floats>,
        #[arg(long, value_parser = finite, allow_hyphen_values = true)]
        target: Option<f64>,
        /// True beam parameters `A,x0,w`.
        #[arg(long, value_parser = list, allow_hyphen_values = true, default_value = "1,0,1")]
        params: Floats,
        #[arg(long, value_parser = finite, allow_negative_numbers = true)]
        time: f64,
        #[arg(long, value_parser = alloc, default_value = "optimal")]
        alloc: AllocationRule<f64>,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[command(flatten)]
        common: Common,
    },
}

/// Failure of a command, mapped to an exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(qsn_core::Error),
}

impl From<qsn_core::Error> for Failure {
    fn from(e: qsn_core::Error) -> Self {
        Failure::Runtime(e)
    }
}

#[derive(Serialize)]
struct Diagnostic<'a> {
    level: &'a str,
    kind: &'a str,
    message: String,
}

fn report(stderr: &mut dyn Write, kind: &str, message: String) {
    let line = serde_json::to_string(&Diagnostic { level: "error", kind, message })
        .unwrap_or_else(|_| "{\"level\":\"error\"}".into());
    let _ = writeln!(stderr, "{line}");
}

/// Runs `qsn` with the given arguments (including the program name).
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_command_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_command_with<I, S>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            report(stderr, "usage", e.to_string().trim().replace('\n', " "));
            return 2;
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            report(stderr, "usage", msg);
            2
        }
        Err(Failure::Runtime(e)) => {
            report(stderr, e.kind(), e.to_string());
            1
        }
    }
}

fn check_theta(target: &Target) -> Result<(), Failure> {
    let d = target.function.function.dim();
    if target.theta.len() != d {
        return Err(Failure::Usage(format!(
            "--theta has {} values but `{}` takes {d}",
            target.theta.len(),
            target.function.label
        )));
    }
    Ok(())
}

fn metadata(common: &Common, command: &str, config: serde_json::Value) -> ExportMetadata {
    let mut cfg = serde_json::json!({ "command": command, "options": config, "seed": common.seed });
    if let Some(map) = cfg.as_object_mut() {
        map.insert("common".into(), serde_json::to_value(common).unwrap_or_default());
    }
    ExportMetadata::new(cfg, !common.no_timestamp)
}

fn export_format(f: Format) -> ExportFormat {
    match f {
        Format::Csv => ExportFormat::Csv,
        Format::Json => ExportFormat::Json,
    }
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Bounds { target, resource, common } => {
            check_theta(&target)?;
            let f = &target.function.function;
            let budget = resource.budget();
            let report = match budget {
                ResourceBudget::Time(t) => qubit_bounds(f, &target.theta, t)?,
                ResourceBudget::Photons(n) => photon_bounds(f, &target.theta, n as f64)?,
            };
            let meta = metadata(&common, "bounds", serde_json::json!({ "function": target.function.label, "target": target, "resource": resource }));
            let mut table = Table::new(&[
                "function",
                "theta",
                "resource_kind",
                "resource",
                "entangled_bound",
                "unentangled_baseline",
                "advantage_ratio",
                "conjectured",
                "degenerate",
            ]);
            table.push(vec![
                target.function.label.clone().into(),
                output::join(&target.theta).into(),
                report.resource_kind.as_str().into(),
                report.resource.into(),
                report.entangled_bound.into(),
                report.unentangled_baseline.into(),
                report.advantage_ratio.into(),
                report.conjectured.into(),
                report.degenerate.into(),
            ]);
            Emitter::new(common.format == Format::Json, common.out.clone()).table(&table, &meta, stdout)
        }
        Command::Simulate { target, resource, alloc, protocol, trials, common } => {
            check_theta(&target)?;
            let budget = resource.budget();
            let (kind, amount) = (budget.kind(), budget.amount());
            let meta = metadata(
                &common,
                "simulate",
                serde_json::json!({ "function": target.function.label, "target": target, "resource": resource, "alloc": alloc, "protocol": protocol, "trials": trials }),
            );
            let records = run_sweeps(&target, kind, &[amount], alloc, protocol, trials, &common)?;
            emit_records(records, &meta, &common, stdout)
        }
        Command::Sweep { target, times, photons, alloc, protocol, trials, common } => {
            check_theta(&target)?;
            let (kind, grid) = match (times.clone(), photons.clone()) {
                (Some(t), _) => (ResourceKind::QubitTime, t.0),
                (_, Some(n)) => (ResourceKind::PhotonNumber, n.0.into_iter().map(|v| v as f64).collect::<Vec<f64>>()),
                _ => unreachable!("clap requires a grid"),
            };
            let meta = metadata(
                &common,
                "sweep",
                serde_json::json!({ "function": target.function.label, "target": target, "times": times, "photons": photons, "alloc": alloc, "protocol": protocol, "trials": trials }),
            );
            let records = run_sweeps(&target, kind, &grid, alloc, protocol, trials, &common)?;
            emit_records(records, &meta, &common, stdout)
        }
        Command::Allocate { target, resource, alloc, common } => {
            check_theta(&target)?;
            let f = &target.function.function;
            let budget = resource.budget();
            let plan = alloc.plan(f, &target.theta, &budget)?;
            let predicted = ProtocolConfig::two_step(f.clone(), target.theta.to_vec(), budget, plan.clone()).predicted_mse()?;
            let meta = metadata(&common, "allocate", serde_json::json!({ "function": target.function.label, "target": target, "resource": resource, "alloc": alloc }));
            let mut table = Table::new(&[
                "function",
                "resource_kind",
                "resource",
                "policy",
                "step1",
                "step2",
                "mode_counts",
                "skip_step1",
                "clamped",
                "predicted_mse",
            ]);
            let (s1, s2, modes) = match &plan.split {
                Split::Time { t1, t2 } => (t1.to_string(), t2.to_string(), String::new()),
                Split::Photon { n1, n2, mode_counts } => (
                    n1.to_string(),
                    n2.to_string(),
                    mode_counts.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(";"),
                ),
            };
            table.push(vec![
                target.function.label.clone().into(),
                budget.kind().as_str().into(),
                budget.amount().into(),
                plan.policy.label().into(),
                s1.into(),
                s2.into(),
                modes.into(),
                plan.skip_step1.into(),
                plan.clamped.into(),
                predicted.into(),
            ]);
            Emitter::new(common.format == Format::Json, common.out.clone()).table(&table, &meta, stdout)
        }
        Command::VerifyFom { target, sigma, trials, form, common } => {
            check_theta(&target)?;
            let d = target.theta.len();
            let sigmas = match sigma.len() {
                1 => vec![sigma[0]; d],
                n if n == d => sigma.to_vec(),
                n => return Err(Failure::Usage(format!("--sigma has {n} values, expected 1 or {d}"))),
            };
            if sigmas.iter().any(|s| *s <= 0.0) {
                return Err(Failure::Usage("--sigma values must be > 0".into()));
            }
            let variances: Vec<f64> = sigmas.iter().map(|s| s * s).collect();
            let cform = match form {
                FormArg::Squared => CurvatureForm::Squared,
                FormArg::AsPrinted => CurvatureForm::AsPrinted,
            };
            let f = target.function.function.clone();
            let theta = target.theta.clone();
            let seed = common.seed;
            let check = with_threads(common.threads, || verify_general_fom(&f, &theta, &variances, trials, seed, cform))??;
            let meta = metadata(&common, "verify-fom", serde_json::json!({ "function": target.function.label, "target": target, "sigma": sigma, "trials": trials, "form": form }));
            let mut table = Table::new(&["function", "theta", "sigma", "form", "trials", "empirical", "standard_error", "predicted", "z"]);
            table.push(vec![
                target.function.label.clone().into(),
                output::join(&target.theta).into(),
                output::join(&sigmas).into(),
                serde_json::to_value(form).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
                    .into(),
                trials.into(),
                check.empirical.into(),
                check.standard_error.into(),
                check.predicted.into(),
                check.z.into(),
            ]);
            Emitter::new(common.format == Format::Json, common.out.clone()).table(&table, &meta, stdout)
        }
        Command::Interpolate { layout, sensors, target, params, time, alloc, trials, common } => {
            let layout = match (layout, sensors, target) {
                (Some(path), _, _) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|source| qsn_core::Error::Io { path: path.clone(), source })?;
                    SensorLayout::from_json(&text)?
                }
                (None, Some(s), Some(x)) => SensorLayout::new(s.0, x)?,
                _ => return Err(Failure::Usage("give --layout or both --sensors and --target".into())),
            };
            if params.len() != 3 {
                return Err(Failure::Usage("--params takes A,x0,w".into()));
            }
            if time <= 0.0 {
                return Err(Failure::Runtime(qsn_core::Error::NonPositiveResource(time)));
            }
            let seed = common.seed;
            let start = std::time::Instant::now();
            let lay = layout.clone();
            let p = params.clone();
            let rep = with_threads(common.threads, move || {
                run_interpolation(Arc::new(GaussianBeam::new()), &p, &lay, time, alloc, trials, seed)
            })??;
            let elapsed = if common.no_timestamp { 0 } else { start.elapsed().as_millis() as u64 };
            let label = format!(
                "gaussian-beam:sensors={};target={};c={}",
                layout.sensors.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
                layout.target,
                params.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
            );
            let baseline = rep.bounds.unentangled_baseline;
            let records = [
                (ProtocolKind::TwoStep, &rep.two_step, rep.predicted_two_step, seed),
                (ProtocolKind::Unentangled, &rep.unentangled, baseline, seed.wrapping_add(1)),
            ]
            .into_iter()
            .map(|(protocol, est, predicted_mse, s)| SweepRecord {
                protocol,
                function: label.clone(),
                theta: rep.theta_true.clone(),
                resource_kind: ResourceKind::QubitTime,
                resource: time,
                trials,
                mse: est.mse,
                mse_se: est.mse_se,
                bias: est.bias,
                predicted_mse,
                bound: rep.bounds.entangled_bound,
                seed: s,
                ms_elapsed: elapsed,
            })
            .collect();
            let meta = metadata(&common, "interpolate", serde_json::json!({ "layout": layout, "params": params, "time": time, "alloc": alloc, "trials": trials }));
            emit_records(records, &meta, &common, stdout)
        }
    }
}

fn run_sweeps(
    target: &Target,
    kind: ResourceKind,
    grid: &[f64],
    rule: AllocationRule<f64>,
    protocol: ProtocolArg,
    trials: usize,
    common: &Common,
) -> Result<Vec<SweepRecord<f64>>, Failure> {
    for &amount in grid {
        budget_for::<f64>(kind, amount)?.validate()?;
    }
    let mut records = Vec::new();
    for kind_p in protocol.kinds() {
        let cfg = SweepConfig {
            protocol: kind_p,
            function: target.function.function.clone(),
            function_label: target.function.label.clone(),
            theta: target.theta.to_vec(),
            resource_kind: kind,
            rule,
            baseline_weights: BaselineWeights::Oracle,
        };
        let seed = common.seed;
        let mut out = with_threads(common.threads, || sweep_resource(&cfg, grid, trials, seed))??;
        if common.no_timestamp {
            for r in &mut out {
                r.ms_elapsed = 0;
            }
        }
        records.extend(out);
    }
    Ok(records)
}

fn emit_records(records: Vec<SweepRecord<f64>>, meta: &ExportMetadata, common: &Common, stdout: &mut dyn Write) -> Result<(), Failure> {
    Emitter::new(common.format == Format::Json, common.out.clone()).records(&records, export_format(common.format), meta, stdout)
}
