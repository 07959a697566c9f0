//! Command-line front end: argument parsing into a serializable [`RunConfig`],
//! and CSV / markdown reporting. Exit codes are 0 on success, 1 on numerical
//! or I/O failure and 2 on usage errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::check::{all_passed, run_checks};
use crate::eigenstudy::{run_degree_study, run_sequence_study, EigRecord, Sequence};
use crate::elasticity::Material;
use crate::error::Error;
use crate::geometry::{reference_triangle, unit_square, Polygon, SEQUENCE_LEN};
use crate::hrspace::Stabilization;
use crate::interp::{convergence_study, AnalyticStress, Displacement, MeshFamily, RateRow};
use crate::localsolver::FemConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "hrvem", version, about = "Stability studies for 2D Hellinger-Reissner virtual elements")]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum CliCommand {
    /// Extreme generalized eigenvalues and condition numbers of (A, B).
    Eig(EigArgs),
    /// Interpolation error convergence on a structured mesh family.
    Interp(InterpArgs),
    /// Run the invariant suite; exits 1 if any check fails.
    Check {
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
struct FemArgs {
    /// Lagrange degree of the surrogate (default p + 1).
    #[arg(long)]
    fem_degree: Option<usize>,
    /// Uniform refinements of the centroid fan.
    #[arg(long, default_value_t = 3)]
    fem_refine: usize,
}

#[derive(Debug, Args)]
struct EigArgs {
    /// triangle, square, hourglass:<k or a..b>, trapezoid:<k or a..b> or file:<path>.
    #[arg(long)]
    element: String,
    /// Degree or inclusive range a..b, within 1..6.
    #[arg(long, default_value = "1")]
    p: String,
    #[command(flatten)]
    material: MaterialArgs,
    /// Comma-separated list: projection, projection-trace, projection-reduced, dofi.
    #[arg(long, default_value = "projection,dofi")]
    stab: String,
    /// Drop the divergence term from every projection-based stabilization.
    #[arg(long)]
    stab_reduced: bool,
    #[command(flatten)]
    fem: FemArgs,
}

#[derive(Debug, Args)]
struct InterpArgs {
    /// square-grid, triangle-grid or trapezoid-grid.
    #[arg(long, default_value = "square-grid")]
    family: String,
    /// Number of meshes, with 2, 4, ... cells per side.
    #[arg(long, default_value_t = 4)]
    levels: usize,
    #[arg(long, default_value_t = 1)]
    p: usize,
    /// Displacement generating the stress: preset:trig, preset:mixed or poly:<n>.
    #[arg(long, default_value = "preset:trig")]
    w: String,
    #[command(flatten)]
    material: MaterialArgs,
    #[command(flatten)]
    fem: FemArgs,
}

#[derive(Debug, Args)]
struct MaterialArgs {
    /// compressible, incompressible or <lambda>,<mu>.
    #[arg(long, default_value = "compressible")]
    material: String,
    /// Lame lambda; overrides --material together with --mu.
    #[arg(long, requires = "mu")]
    lambda: Option<f64>,
    #[arg(long, requires = "lambda")]
    mu: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    Md,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ElementSpec {
    Sequence { sequence: Sequence, ks: Vec<usize> },
    Polygon { label: String, vertices: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    Eig {
        element: ElementSpec,
        ps: Vec<usize>,
        material: Material,
        stabs: Vec<Stabilization>,
        fem: FemConfig,
    },
    Interp {
        family: MeshFamily,
        levels: usize,
        p: usize,
        w: Displacement,
        material: Material,
        fem: FemConfig,
    },
    Check {
        seed: u64,
    },
}

/// Fully validated run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
    pub threads: Option<usize>,
}

#[derive(Debug)]
pub enum CliError {
    /// Help or version output; not an error.
    Display(String),
    Usage(String),
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn parse_range(s: &str, what: &'static str, lo: usize, hi: usize) -> Result<Vec<usize>, CliError> {
    let parse = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| usage(format!("invalid {what} '{s}'")))
    };
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (parse(a)?, parse(b)?),
        None => {
            let v = parse(s)?;
            (v, v)
        }
    };
    if a > b {
        return Err(usage(format!("empty {what} range '{s}'")));
    }
    for v in [a, b] {
        if !(lo..=hi).contains(&v) {
            return Err(usage(Error::OutOfRange {
                what,
                value: v as i64,
                allowed: format!("{lo}..={hi}"),
            }));
        }
    }
    Ok((a..=b).collect())
}

fn vertices_of(poly: &Polygon) -> Vec<[f64; 2]> {
    poly.vertices().iter().map(|v| [v.x, v.y]).collect()
}

pub fn parse_element(s: &str) -> Result<ElementSpec, CliError> {
    let s = s.trim();
    let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
    match kind {
        "triangle" => Ok(ElementSpec::Polygon {
            label: "triangle".into(),
            vertices: vertices_of(&reference_triangle()),
        }),
        "square" => Ok(ElementSpec::Polygon {
            label: "square".into(),
            vertices: vertices_of(&unit_square()),
        }),
        "hourglass" | "trapezoid" => {
            let sequence = if kind == "hourglass" {
                Sequence::Hourglass
            } else {
                Sequence::Trapezoid
            };
            let arg = if arg.is_empty() { "0..5" } else { arg };
            let ks = parse_range(arg, "k", 0, SEQUENCE_LEN - 1)?;
            Ok(ElementSpec::Sequence { sequence, ks })
        }
        "file" => {
            let text = std::fs::read_to_string(arg).map_err(|e| usage(format!("cannot read element file '{arg}': {e}")))?;
            let poly = Polygon::parse(&text).map_err(|e| usage(format!("element file '{arg}': {e}")))?;
            let label = std::path::Path::new(arg)
                .file_stem()
                .map_or_else(|| "file".to_string(), |s| s.to_string_lossy().into_owned());
            Ok(ElementSpec::Polygon {
                label,
                vertices: vertices_of(&poly),
            })
        }
        _ => Err(usage(format!(
            "unknown element '{s}' (expected triangle, square, hourglass:<k>, trapezoid:<k> or file:<path>)"
        ))),
    }
}

pub fn parse_material(s: &str) -> Result<Material, CliError> {
    match s.trim() {
        "compressible" => Ok(Material::compressible()),
        "incompressible" => Ok(Material::incompressible()),
        other => {
            let (l, m) = other
                .split_once(',')
                .ok_or_else(|| usage(format!("invalid material '{other}'")))?;
            let num = |t: &str| t.trim().parse::<f64>().map_err(|_| usage(format!("invalid material '{other}'")));
            Material::new(num(l)?, num(m)?).map_err(usage)
        }
    }
}

fn material(args: &MaterialArgs) -> Result<Material, CliError> {
    match (args.lambda, args.mu) {
        (Some(l), Some(m)) => Material::new(l, m).map_err(usage),
        _ => parse_material(&args.material),
    }
}

fn fem_config(args: &FemArgs) -> Result<FemConfig, CliError> {
    if args.fem_degree == Some(0) {
        return Err(usage("--fem-degree must be at least 1"));
    }
    Ok(FemConfig::new(args.fem_degree, args.fem_refine))
}

/// Parses and validates a full argument vector (including the program name).
pub fn parse_args<I, T>(argv: I) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => CliError::Display(e.to_string()),
        _ => CliError::Usage(e.to_string()),
    })?;
    if cli.threads == Some(0) {
        return Err(usage("--threads must be at least 1"));
    }
    let command = match cli.command {
        CliCommand::Eig(a) => {
            let stabs = a
                .stab
                .split(',')
                .map(|s| {
                    let st = Stabilization::parse(s).map_err(usage)?;
                    Ok(if a.stab_reduced { st.reduced() } else { st })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            Command::Eig {
                element: parse_element(&a.element)?,
                ps: parse_range(&a.p, "p", 1, 6)?,
                material: material(&a.material)?,
                stabs,
                fem: fem_config(&a.fem)?,
            }
        }
        CliCommand::Interp(a) => {
            if !(1..=6).contains(&a.p) {
                return Err(usage(Error::OutOfRange {
                    what: "p",
                    value: a.p as i64,
                    allowed: "1..=6".into(),
                }));
            }
            if !(1..=8).contains(&a.levels) {
                return Err(usage(Error::OutOfRange {
                    what: "levels",
                    value: a.levels as i64,
                    allowed: "1..=8".into(),
                }));
            }
            Command::Interp {
                family: MeshFamily::parse(&a.family).map_err(usage)?,
                levels: a.levels,
                p: a.p,
                w: Displacement::parse(&a.w).map_err(usage)?,
                material: material(&a.material)?,
                fem: fem_config(&a.fem)?,
            }
        }
        CliCommand::Check { seed } => Command::Check { seed },
    };
    Ok(RunConfig {
        command,
        out: cli.out,
        format: cli.format,
        threads: cli.threads,
    })
}

/// Scientific notation with a four-digit fraction and a signed two-digit
/// exponent, e.g. `2.7301e+02`.
pub fn sci(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{v:.4e}");
    let (mant, exp) = s.split_once('e').unwrap_or((&s, "0"));
    let e: i32 = exp.parse().unwrap_or(0);
    let sign = if e < 0 { '-' } else { '+' };
    format!("{mant}e{sign}{:02}", e.abs())
}

pub fn eig_report(records: &[EigRecord], format: OutputFormat) -> String {
    let mut out = String::new();
    let k = |r: &EigRecord| r.k.map_or_else(String::new, |k| k.to_string());
    match format {
        OutputFormat::Csv => {
            out.push_str("element,k,p,stab,gmin,gmax,dropped,condA,condB\n");
            for r in records {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    r.element,
                    k(r),
                    r.p,
                    r.stab.label(),
                    sci(r.gmin),
                    sci(r.gmax),
                    r.dropped,
                    sci(r.cond_a),
                    sci(r.cond_b)
                );
            }
        }
        OutputFormat::Md => {
            out.push_str("| element | k | p | stabilization | min eig | max eig | dropped | cond(A) | cond(B) |\n");
            out.push_str("|---|---|---|---|---|---|---|---|---|\n");
            for r in records {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                    r.element,
                    k(r),
                    r.p,
                    r.stab.label(),
                    sci(r.gmin),
                    sci(r.gmax),
                    r.dropped,
                    sci(r.cond_a),
                    sci(r.cond_b)
                );
            }
        }
    }
    out
}

pub fn interp_report(rows: &[RateRow], format: OutputFormat) -> String {
    let mut out = String::new();
    let rate = |r: Option<f64>| r.map_or_else(String::new, |v| format!("{v:.4}"));
    match format {
        OutputFormat::Csv => {
            out.push_str("h,e_div,e_L2,rate_div,rate_L2\n");
            for r in rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    sci(r.h),
                    sci(r.e_div),
                    sci(r.e_l2),
                    rate(r.rate_div),
                    rate(r.rate_l2)
                );
            }
        }
        OutputFormat::Md => {
            out.push_str("| h | div error | L2 error | div rate | L2 rate |\n|---|---|---|---|---|\n");
            for r in rows {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} |",
                    sci(r.h),
                    sci(r.e_div),
                    sci(r.e_l2),
                    rate(r.rate_div),
                    rate(r.rate_l2)
                );
            }
        }
    }
    out
}

fn run_eig(
    element: &ElementSpec,
    ps: &[usize],
    material: &Material,
    stabs: &[Stabilization],
    fem: &FemConfig,
) -> crate::Result<Vec<EigRecord>> {
    match element {
        ElementSpec::Sequence { sequence, ks } => {
            let mut out = Vec::new();
            for &p in ps {
                out.extend(run_sequence_study(*sequence, ks, p, material, stabs, fem)?);
            }
            Ok(out)
        }
        ElementSpec::Polygon { label, vertices } => {
            let coords: Vec<(f64, f64)> = vertices.iter().map(|v| (v[0], v[1])).collect();
            let poly = Polygon::from_coords(&coords)?;
            run_degree_study(&poly, label, ps, material, stabs, fem)
        }
    }
}

/// Executes a validated configuration and returns the report text together
/// with the exit code.
pub fn execute(config: &RunConfig) -> crate::Result<(String, i32)> {
    match &config.command {
        Command::Eig {
            element,
            ps,
            material,
            stabs,
            fem,
        } => {
            let records = run_eig(element, ps, material, stabs, fem)?;
            Ok((eig_report(&records, config.format), EXIT_OK))
        }
        Command::Interp {
            family,
            levels,
            p,
            w,
            material,
            fem,
        } => {
            let sigma = AnalyticStress::from_displacement(w.clone(), material);
            let rows = convergence_study(*family, *levels, *p, &sigma, material, fem)?;
            Ok((interp_report(&rows, config.format), EXIT_OK))
        }
        Command::Check { seed } => {
            let outcomes = run_checks(*seed)?;
            let mut text = String::new();
            for o in &outcomes {
                let _ = writeln!(text, "{o}");
            }
            let passed = outcomes.iter().filter(|o| o.passed).count();
            let _ = writeln!(text, "{passed}/{} checks passed", outcomes.len());
            let code = if all_passed(&outcomes) { EXIT_OK } else { EXIT_FAILURE };
            Ok((text, code))
        }
    }
}

#[cfg(feature = "parallel")]
fn set_threads(n: Option<usize>) {
    if let Some(n) = n {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not configure thread pool: {e}");
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn set_threads(n: Option<usize>) {
    if n.is_some_and(|n| n > 1) {
        log::warn!("built without the parallel feature; --threads ignored");
    }
}

/// Runs a validated configuration, writing the report. Returns the exit code.
pub fn run(config: &RunConfig) -> i32 {
    set_threads(config.threads);
    log::debug!("config: {}", serde_json::to_string(config).unwrap_or_default());
    let (text, code) = match execute(config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    match &config.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &text) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return EXIT_FAILURE;
            }
        }
        None => print!("{text}"),
    }
    code
}

/// Entry point used by the binary.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter("HRVEM_LOG")).try_init();
    match parse_args(argv) {
        Ok(config) => run(&config),
        Err(CliError::Display(text)) => {
            print!("{text}");
            EXIT_OK
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("{}", msg.trim_end());
            EXIT_USAGE
        }
    }
}
