//! Command-line front end. Exit codes: 0 pass, 1 verification failure, 2 input error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::fieldforge::RateVariant;
use crate::flow::{integrate_many, FieldKind};
use crate::specfile::Problem;
use crate::verify::{check_base_conservation, check_gradient_consistency, fitted_slope, run_suite, CheckRecord};

pub const THREADS_ENV: &str = "ATTRACTORFORGE_THREADS";

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "attractorforge", version, about = "Build and verify vector fields with prescribed attracting level sets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// Problem file (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Override the seed from the problem file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use the literal `(D − d_i)` rates with D = D₁ (for regression testing).
    #[arg(long, hide = true)]
    pub debug_printed_rates: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse the problem, check gradients and base-field conservation.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate the fields at a point.
    FieldEval {
        #[command(flatten)]
        common: Common,
        /// Comma-separated coordinates.
        #[arg(long, allow_hyphen_values = true)]
        point: String,
    },
    /// Integrate from every initial condition; writes one CSV per start.
    Integrate {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the verification suite and write a JSON report.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Report path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit decay slopes for a list of λ values.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated λ values; may be empty.
        #[arg(long, allow_hyphen_values = true)]
        lambda: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_list(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: `{s}`")))
        .collect()
}

fn load(common: &Common) -> Result<Problem, String> {
    let variant = if common.debug_printed_rates {
        RateVariant::PrintedFirstComponent
    } else {
        RateVariant::Standard
    };
    let problem = Problem::load(&common.spec, variant).map_err(|e| e.to_string())?;
    Ok(match common.seed {
        Some(s) => problem.with_seed(s),
        None => problem,
    })
}

fn write_output(path: Option<&Path>, text: &str, out: &mut dyn Write) -> Result<(), String> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("cannot write {}: {e}", p.display())),
        None => writeln!(out, "{text}").map_err(|e| e.to_string()),
    }
}

fn describe(rec: &CheckRecord) -> String {
    format!(
        "{} {}: residual {:e} threshold {:e}{}",
        if rec.pass { "PASS" } else { "FAIL" },
        rec.check,
        rec.residual,
        rec.threshold,
        rec.detail.as_deref().map(|d| format!(" ({d})")).unwrap_or_default()
    )
}

/// Parse `args` and run. Output goes to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_PASS };
            let _ = write!(err, "{e}");
            return code;
        }
    };
    let threads = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok());
    match threads {
        Some(t) if t > 0 => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => {
                let (code, o, e) = pool.install(|| {
                    let (mut o, mut e) = (Vec::new(), Vec::new());
                    let code = dispatch(cli.command, &mut o, &mut e);
                    (code, o, e)
                });
                let _ = out.write_all(&o);
                let _ = err.write_all(&e);
                code
            }
            Err(_) => dispatch(cli.command, out, err),
        },
        _ => dispatch(cli.command, out, err),
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match cmd {
        Command::Validate { common } => validate(&common, out),
        Command::FieldEval { common, point } => field_eval(&common, &point, out),
        Command::Integrate { common, out: dir } => integrate_cmd(&common, &dir, out),
        Command::Verify { common, out: path } => verify_cmd(&common, path.as_deref(), out),
        Command::Sweep { common, lambda, out: path } => sweep(&common, &lambda, path.as_deref(), out),
    };
    match result {
        Ok(code) => code,
        Err((code, msg)) => {
            let _ = writeln!(err, "error: {msg}");
            code
        }
    }
}

type CmdResult = Result<i32, (i32, String)>;

fn input(msg: String) -> (i32, String) {
    (EXIT_INPUT, msg)
}

fn validate(common: &Common, out: &mut dyn Write) -> CmdResult {
    let problem = load(common).map_err(|m| (EXIT_FAIL, m))?;
    let points = &problem.initial_conditions;
    let checks = [
        check_gradient_consistency(&problem.spec, points, &problem.verify),
        check_base_conservation(&problem.spec, points, &problem.verify),
    ];
    for c in &checks {
        let _ = writeln!(out, "{}", describe(c));
    }
    match checks.iter().find(|c| !c.pass) {
        Some(c) => Err((EXIT_FAIL, format!("check_{} failed: {}", c.check, describe(c)))),
        None => Ok(EXIT_PASS),
    }
}

#[derive(Serialize)]
struct FieldEvalOutput {
    format: u32,
    point: Vec<f64>,
    in_mrk: bool,
    margin: f64,
    singular_values: Vec<f64>,
    #[serde(rename = "F")]
    f: f64,
    x0_lambda: Vec<f64>,
    x_lambda: Vec<f64>,
}

fn field_eval(common: &Common, point: &str, out: &mut dyn Write) -> CmdResult {
    let problem = load(common).map_err(input)?;
    let spec = &problem.spec;
    let x = parse_list(point).map_err(input)?;
    if x.len() != spec.dim() {
        return Err(input(format!("point has {} coordinates, expected {}", x.len(), spec.dim())));
    }
    let rank = spec.mrk_check(&x);
    if !rank.in_mrk {
        return Err(input(format!("rank-deficient point (margin {:e})", rank.margin)));
    }
    let x0 = spec.x0_lambda(&x).map_err(|e| input(e.to_string()))?;
    let xl = spec.x_lambda(&x).map_err(|e| input(e.to_string()))?;
    let f = spec.f_value(&x).map_err(|e| input(e.to_string()))?;
    let doc = FieldEvalOutput {
        format: 1,
        point: x,
        in_mrk: rank.in_mrk,
        margin: rank.margin,
        singular_values: rank.singular_values,
        f,
        x0_lambda: x0,
        x_lambda: xl,
    };
    write_output(None, &serde_json::to_string_pretty(&doc).expect("serializes"), out).map_err(input)?;
    Ok(EXIT_PASS)
}

fn integrate_cmd(common: &Common, dir: &Path, out: &mut dyn Write) -> CmdResult {
    let problem = load(common).map_err(input)?;
    std::fs::create_dir_all(dir).map_err(|e| input(format!("cannot create {}: {e}", dir.display())))?;
    let results = integrate_many(
        &problem.spec,
        FieldKind::Perturbed,
        &problem.initial_conditions,
        &problem.integrator,
    );
    let mut bad = Vec::new();
    for (i, r) in results.iter().enumerate() {
        match r {
            Ok(tr) => {
                let path = dir.join(format!("trajectory_{i}.csv"));
                let file = std::fs::File::create(&path)
                    .map_err(|e| input(format!("cannot write {}: {e}", path.display())))?;
                tr.write_csv(std::io::BufWriter::new(file))
                    .map_err(|e| input(format!("cannot write {}: {e}", path.display())))?;
                let _ = writeln!(
                    out,
                    "{}: {} samples, stop_reason={}",
                    path.display(),
                    tr.samples.len(),
                    tr.stop_reason.as_str()
                );
            }
            Err(e) => bad.push(format!("initial_conditions[{i}]: {e}")),
        }
    }
    if bad.is_empty() {
        Ok(EXIT_PASS)
    } else {
        Err(input(bad.join("; ")))
    }
}

fn verify_cmd(common: &Common, path: Option<&Path>, out: &mut dyn Write) -> CmdResult {
    let problem = load(common).map_err(input)?;
    let report = run_suite(
        &problem.spec,
        &problem.initial_conditions,
        problem.stability.as_ref(),
        &problem.verify,
    );
    write_output(path, &report.to_json(), out).map_err(input)?;
    if path.is_some() {
        for c in &report.checks {
            let _ = writeln!(out, "{}", describe(c));
        }
    }
    Ok(if report.pass { EXIT_PASS } else { EXIT_FAIL })
}

#[derive(Debug, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub expected_slope: f64,
    /// Mean over the initial conditions that produced a slope.
    pub slope: Option<f64>,
    pub slopes: Vec<Option<f64>>,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct SweepTable {
    pub format: u32,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

pub fn sweep_table(problem: &Problem, lambdas: &[f64]) -> Result<SweepTable, String> {
    let rows = lambdas
        .par_iter()
        .map(|&lambda| {
            let spec = problem.spec.with_lambda(lambda).map_err(|e| e.to_string())?;
            let slopes: Vec<Option<f64>> = problem
                .initial_conditions
                .iter()
                .map(|x0| fitted_slope(&spec, x0, &problem.integrator))
                .collect();
            let got: Vec<f64> = slopes.iter().flatten().copied().collect();
            let slope = (!got.is_empty()).then(|| got.iter().sum::<f64>() / got.len() as f64);
            let expected = -2.0 * lambda;
            let tol = if lambda > 0.0 {
                problem.verify.slope_rel_tol * 2.0 * lambda
            } else {
                problem.verify.slope_zero_tol
            };
            let pass = !got.is_empty() && got.iter().all(|s| (s - expected).abs() <= tol);
            Ok(SweepRow {
                lambda,
                expected_slope: expected,
                slope,
                slopes,
                pass,
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(SweepTable {
        format: 1,
        seed: problem.seed,
        rows,
    })
}

fn sweep(common: &Common, lambdas: &str, path: Option<&Path>, out: &mut dyn Write) -> CmdResult {
    let problem = load(common).map_err(input)?;
    let lambdas = parse_list(lambdas).map_err(input)?;
    let table = sweep_table(&problem, &lambdas).map_err(input)?;
    let text = serde_json::to_string_pretty(&table).expect("serializes");
    write_output(path, &text, out).map_err(input)?;
    Ok(if table.rows.iter().all(|r| r.pass) { EXIT_PASS } else { EXIT_FAIL })
}
