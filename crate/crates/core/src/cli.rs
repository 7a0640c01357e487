//! Command-line front end: map files, run configuration files and CSV output.
//!
//! Data goes to `--out` (or standard output); summaries and warnings go to
//! standard error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{ArgAction, CommandFactory, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::duffing::{
    build_map, DuffingMap, DuffingParams, ExactFlow, ExpansionPoint, DEFAULT_BUILD_STEPS, DEFAULT_EXACT_STEPS,
};
use crate::dynamics::{
    MapHandle, NewtonOptions, DEFAULT_ESCAPE_RADIUS, DEFAULT_MAX_PERIOD, DEFAULT_PERIOD_TOL,
};
use crate::feigenbaum::{
    attractor_cloud, sweep, unstable_trail, AttractorConfig, Direction, SeedMode, SweepConfig, Window,
    DEFAULT_CLOUD_KEEP, DEFAULT_CLOUD_TRANSIENT, DEFAULT_SWEEP_KEEP, DEFAULT_SWEEP_TRANSIENT,
};
use crate::poly::{count_monomials, Basis, PolyMap, TruncatedPoly};

pub const MAP_HEADER: &str = "varmap-map v1";

/// Default allowed distance of a Taylor sweep from the expansion frequency.
pub const DEFAULT_OMEGA_BOUND: f64 = 0.05;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) | CliError::Io { .. } => 2,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

// ---------------------------------------------------------------------------
// Map files

/// A Taylor map with the time it was built.
#[derive(Clone, Debug, PartialEq)]
pub struct MapFile {
    pub map: DuffingMap,
    pub built_at: String,
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(" ")
}

impl MapFile {
    pub fn new(map: DuffingMap) -> Self {
        let built_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        MapFile { map, built_at }
    }

    pub fn to_text(&self) -> String {
        let pm = &self.map.map;
        let p = &self.map.params;
        let basis = pm.basis();
        let mut s = String::new();
        let _ = writeln!(s, "{MAP_HEADER}");
        let _ = writeln!(s, "m {}", pm.num_vars());
        let _ = writeln!(s, "n {}", pm.max_degree());
        let _ = writeln!(s, "expansion_point {}", fmt_vec(&pm.expansion_point));
        let _ = writeln!(s, "design_image {}", fmt_vec(&pm.design_image));
        let _ = writeln!(s, "beta {}", fmt_f64(p.beta));
        let _ = writeln!(s, "epsilon {}", fmt_f64(p.epsilon));
        let _ = writeln!(s, "omega_d {}", fmt_f64(p.omega_d));
        let _ = writeln!(s, "drive_period {}", fmt_f64(pm.duration));
        let _ = writeln!(s, "steps {}", pm.steps);
        let _ = writeln!(s, "built {}", self.built_at);
        let _ = writeln!(s, "coefficients");
        for (a, comp) in pm.components.iter().enumerate() {
            for (r, &c) in comp.coeffs().iter().enumerate() {
                // positive zero only: a stored -0.0 must survive the round trip
                if c.to_bits() == 0 {
                    continue;
                }
                let exps = basis.exponents(r).iter().map(|e| e.to_string()).collect::<Vec<_>>().join(" ");
                let _ = writeln!(s, "{a} {exps} {}", fmt_f64(c));
            }
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.to_text()).map_err(io_err(format!("cannot write map file {}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(io_err(format!("cannot read map file {}", path.display())))?;
        Self::parse(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == MAP_HEADER => {}
            _ => return Err(format!("missing '{MAP_HEADER}' header line")),
        }
        let mut field = |key: &str| -> Result<Vec<String>, String> {
            let (no, line) = lines.next().ok_or_else(|| format!("file ends before '{key}'"))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(format!("line {}: expected '{key}'", no + 1));
            }
            Ok(parts.map(str::to_owned).collect())
        };
        let one = |v: Vec<String>, key: &str| -> Result<String, String> {
            match <[String; 1]>::try_from(v) {
                Ok([x]) => Ok(x),
                Err(_) => Err(format!("'{key}' takes one value")),
            }
        };
        let num = |s: &str, key: &str| -> Result<f64, String> {
            s.parse::<f64>().map_err(|_| format!("bad number '{s}' for '{key}'"))
        };
        let int = |s: &str, key: &str| -> Result<usize, String> {
            s.parse::<usize>().map_err(|_| format!("bad integer '{s}' for '{key}'"))
        };

        let m = int(&one(field("m")?, "m")?, "m")?;
        if m != 3 {
            return Err(format!("expected m = 3 (q, p, omega), got {m}"));
        }
        let n = int(&one(field("n")?, "n")?, "n")?;
        if n == 0 {
            return Err("map order must be at least 1".into());
        }
        let vec3 = |v: Vec<String>, key: &str| -> Result<Vec<f64>, String> {
            if v.len() != m {
                return Err(format!("'{key}' needs {m} values"));
            }
            v.iter().map(|s| num(s, key)).collect()
        };
        let expansion_point = vec3(field("expansion_point")?, "expansion_point")?;
        let design_image = vec3(field("design_image")?, "design_image")?;
        let beta = num(&one(field("beta")?, "beta")?, "beta")?;
        let epsilon = num(&one(field("epsilon")?, "epsilon")?, "epsilon")?;
        let omega_d = num(&one(field("omega_d")?, "omega_d")?, "omega_d")?;
        let duration = num(&one(field("drive_period")?, "drive_period")?, "drive_period")?;
        let steps = int(&one(field("steps")?, "steps")?, "steps")?;
        let built_at = field("built")?.join(" ");
        field("coefficients")?;
        if expansion_point[2] != omega_d {
            return Err("expansion frequency differs from omega_d".into());
        }

        let basis = Basis::shared(m, n).map_err(|e| e.to_string())?;
        let mut coeffs = vec![vec![0.0; basis.len()]; m];
        let mut seen = vec![vec![false; basis.len()]; m];
        for (no, line) in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != m + 2 {
                return Err(format!("line {}: expected {} fields", no + 1, m + 2));
            }
            let a = int(parts[0], "component")?;
            if a >= m {
                return Err(format!("line {}: component {a} out of range", no + 1));
            }
            let exps = parts[1..=m]
                .iter()
                .map(|s| s.parse::<u16>().map_err(|_| format!("line {}: bad exponent '{s}'", no + 1)))
                .collect::<Result<Vec<_>, _>>()?;
            let r = basis.index_of(&exps).map_err(|e| format!("line {}: {e}", no + 1))?;
            if std::mem::replace(&mut seen[a][r], true) {
                return Err(format!("line {}: duplicate coefficient", no + 1));
            }
            coeffs[a][r] = num(parts[m + 1], "coefficient")?;
        }
        let components = coeffs
            .into_iter()
            .map(|c| TruncatedPoly::from_coeffs(&basis, c))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let map = PolyMap { components, expansion_point, design_image, duration, steps };
        Ok(MapFile { map: DuffingMap { params: DuffingParams::new(beta, epsilon, omega_d), map }, built_at })
    }
}

// ---------------------------------------------------------------------------
// Run configuration files

/// Reads `key = value` lines; `#` starts a comment.
pub fn parse_run_config(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key = value", no + 1))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(format!("line {}: empty key", no + 1));
        }
        out.push((k.replace('_', "-"), v.to_owned()));
    }
    Ok(out)
}

fn find_config(args: &[OsString]) -> Option<Result<PathBuf, CliError>> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return Some(it.next().map(PathBuf::from).ok_or_else(|| usage("--config needs a file")));
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(Ok(PathBuf::from(v)));
        }
    }
    None
}

/// Inserts the configuration file's flags right after the subcommand name so
/// that flags given on the command line, which come later, take precedence.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let path = match find_config(&args) {
        None => return Ok(args),
        Some(p) => p?,
    };
    let text = fs::read_to_string(&path).map_err(io_err(format!("cannot read config {}", path.display())))?;
    let entries = parse_run_config(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;

    let root = Cli::command();
    let names: Vec<String> = root.get_subcommands().map(|c| c.get_name().to_owned()).collect();
    let pos = args.iter().skip(1).position(|a| names.iter().any(|n| a == n.as_str())).map(|p| p + 1);
    let Some(pos) = pos else { return Ok(args) };
    let sub_name = args[pos].to_string_lossy().into_owned();
    let sub = root.find_subcommand(&sub_name).expect("subcommand located above");

    let mut inserted = Vec::new();
    for (key, value) in entries {
        if key == "config" {
            return Err(usage(format!("{}: a config file cannot name another", path.display())));
        }
        let arg = sub
            .get_arguments()
            .chain(root.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| usage(format!("{}: unknown key '{key}' for '{sub_name}'", path.display())))?;
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" | "1" | "yes" => inserted.push(OsString::from(format!("--{key}"))),
                "false" | "0" | "no" => {}
                _ => return Err(usage(format!("{}: '{key}' expects true or false", path.display()))),
            }
        } else {
            inserted.push(OsString::from(format!("--{key}={value}")));
        }
    }
    let mut out = args;
    out.splice(pos + 1..pos + 1, inserted);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Arguments

#[derive(Parser, Debug)]
#[command(name = "varmap", version, about = "Taylor transfer maps of the driven Duffing oscillator")]
#[command(args_override_self = true)]
pub struct Cli {
    /// key = value file with flag defaults for the chosen subcommand
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel sweeps and clouds
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Suppress summaries on standard error
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Integrate the variational equations and write a map file
    Build(BuildArgs),
    /// Steady-state samples over a frequency grid
    Sweep(SweepArgs),
    /// Long orbit at one frequency
    Attractor(AttractorArgs),
    /// Newton fixed points of the period-k map
    Fixpoint(FixpointArgs),
    /// Taylor maps against the exact map on probe circles
    Compare(CompareArgs),
}

#[derive(clap::Args, Debug, Clone)]
#[command(args_override_self = true)]
pub struct BuildArgs {
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    #[arg(long, default_value_t = 25.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1.285)]
    pub omega_d: f64,
    #[arg(long, default_value_t = 1.26082, allow_negative_numbers = true)]
    pub q_bd: f64,
    #[arg(long, default_value_t = 2.05452, allow_negative_numbers = true)]
    pub p_bd: f64,
    #[arg(long, default_value_t = 8)]
    pub order: usize,
    /// RK4 steps over one drive period
    #[arg(long, default_value_t = DEFAULT_BUILD_STEPS)]
    pub steps: usize,
    /// Output map file; standard output if absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Where iterates come from: a map file, or the exact flow.
#[derive(clap::Args, Debug, Clone)]
pub struct SourceArgs {
    /// Taylor map file; the exact map is used if absent
    #[arg(long, conflicts_with_all = ["beta", "epsilon", "exact_steps"])]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// RK4 steps per drive period for the exact map
    #[arg(long)]
    pub exact_steps: Option<usize>,
}

#[derive(clap::Args, Debug, Clone)]
#[command(args_override_self = true)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = 1.24)]
    pub omega_min: f64,
    #[arg(long, default_value_t = 1.30)]
    pub omega_max: f64,
    #[arg(long, default_value_t = 600)]
    pub samples: usize,
    #[arg(long, value_enum, default_value_t = DirectionArg::Up)]
    pub direction: DirectionArg,
    #[arg(long, value_enum, default_value_t = SeedModeArg::Continuation)]
    pub seed_mode: SeedModeArg,
    #[arg(long, default_value_t = DEFAULT_SWEEP_TRANSIENT)]
    pub transient: usize,
    #[arg(long, default_value_t = DEFAULT_SWEEP_KEEP)]
    pub keep: usize,
    /// Starting q; defaults to the expansion point
    #[arg(long, allow_negative_numbers = true)]
    pub seed_q: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub seed_p: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MAX_PERIOD)]
    pub period_max: usize,
    #[arg(long, default_value_t = DEFAULT_PERIOD_TOL)]
    pub period_tol: f64,
    #[arg(long, default_value_t = DEFAULT_ESCAPE_RADIUS)]
    pub escape_radius: f64,
    /// Warn when a Taylor sweep strays further than this from omega_d
    #[arg(long, default_value_t = DEFAULT_OMEGA_BOUND)]
    pub omega_bound: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args, Debug, Clone)]
#[command(args_override_self = true)]
pub struct AttractorArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = 1.2902)]
    pub omega: f64,
    #[arg(long, default_value_t = DEFAULT_CLOUD_TRANSIENT)]
    pub transient: usize,
    #[arg(long, default_value_t = DEFAULT_CLOUD_KEEP)]
    pub keep: usize,
    #[arg(long, allow_negative_numbers = true)]
    pub seed_q: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub seed_p: Option<f64>,
    /// Keep only points in q_lo,q_hi,p_lo,p_hi
    #[arg(long, value_delimiter = ',', value_name = "Q_LO,Q_HI,P_LO,P_HI", allow_negative_numbers = true)]
    pub window: Option<Vec<f64>>,
    /// Independent orbits run in parallel
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value_t = DEFAULT_ESCAPE_RADIUS)]
    pub escape_radius: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args, Debug, Clone)]
#[command(args_override_self = true)]
pub struct FixpointArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Single frequency; overrides the range flags
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub omega_min: Option<f64>,
    #[arg(long)]
    pub omega_max: Option<f64>,
    #[arg(long, default_value_t = 101)]
    pub samples: usize,
    /// Continuation order along the range
    #[arg(long, value_enum, default_value_t = DirectionArg::Up)]
    pub direction: DirectionArg,
    #[arg(long, default_value_t = 1)]
    pub period: usize,
    #[arg(long, allow_negative_numbers = true)]
    pub guess_q: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub guess_p: Option<f64>,
    #[arg(long, default_value_t = NewtonOptions::default().tol)]
    pub newton_tol: f64,
    #[arg(long, default_value_t = NewtonOptions::default().max_iter)]
    pub max_iter: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args, Debug, Clone)]
#[command(args_override_self = true)]
pub struct CompareArgs {
    /// Comma-separated map files sharing one expansion point
    #[arg(long, value_delimiter = ',', required = true)]
    pub maps: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1e-3,3e-3,1e-2,3e-2")]
    pub radii: Vec<f64>,
    /// Probe directions on the (q, p) circle
    #[arg(long, default_value_t = 16)]
    pub directions: usize,
    /// RK4 steps for the exact map; defaults to the maps' build steps
    #[arg(long)]
    pub exact_steps: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum DirectionArg {
    Up,
    Down,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Up => Direction::Up,
            DirectionArg::Down => Direction::Down,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedModeArg {
    Continuation,
    Fixed,
}

impl From<SeedModeArg> for SeedMode {
    fn from(s: SeedModeArg) -> Self {
        match s {
            SeedModeArg::Continuation => SeedMode::Continuation,
            SeedModeArg::Fixed => SeedMode::Fixed,
        }
    }
}

// ---------------------------------------------------------------------------
// Running

struct Ctx {
    quiet: bool,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn warn(&self, msg: impl AsRef<str>) {
        eprintln!("warning: {}", msg.as_ref());
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ctx = Ctx { quiet: cli.quiet };
    match cli.command {
        Command::Build(a) => cmd_build(&ctx, &a),
        Command::Sweep(a) => cmd_sweep(&ctx, &a),
        Command::Attractor(a) => cmd_attractor(&ctx, &a),
        Command::Fixpoint(a) => cmd_fixpoint(&ctx, &a),
        Command::Compare(a) => cmd_compare(&ctx, &a),
    }
}

fn open_out(out: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    match out {
        Some(p) if p.as_os_str() != "-" => {
            let f = fs::File::create(p).map_err(io_err(format!("cannot create {}", p.display())))?;
            Ok(Box::new(io::BufWriter::new(f)))
        }
        _ => Ok(Box::new(io::BufWriter::new(io::stdout().lock()))),
    }
}

fn write_all(out: &Option<PathBuf>, body: &str) -> Result<(), CliError> {
    let mut w = open_out(out)?;
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(io_err("cannot write output"))
}

fn check_finite(name: &str, x: f64) -> Result<f64, CliError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(usage(format!("--{name} must be finite")))
    }
}

struct Source {
    handle: MapHandle,
    expansion: ExpansionPoint,
}

fn load_source(ctx: &Ctx, s: &SourceArgs) -> Result<Source, CliError> {
    match &s.map {
        Some(path) => {
            let file = MapFile::load(path)?;
            let expansion = file.map.expansion();
            ctx.note(format!(
                "map: order {} about (q, p, omega) = ({}, {}, {})",
                file.map.order(),
                expansion.q_bd,
                expansion.p_bd,
                expansion.omega_bd
            ));
            Ok(Source { handle: MapHandle::taylor(file.map), expansion })
        }
        None => {
            let d = DuffingParams::default();
            let beta = check_finite("beta", s.beta.unwrap_or(d.beta))?;
            let epsilon = check_finite("epsilon", s.epsilon.unwrap_or(d.epsilon))?;
            let steps = s.exact_steps.unwrap_or(DEFAULT_EXACT_STEPS);
            if steps == 0 {
                return Err(usage("--exact-steps must be at least 1"));
            }
            let params = DuffingParams::new(beta, epsilon, d.omega_d);
            Ok(Source { handle: MapHandle::exact_with_steps(params, steps), expansion: ExpansionPoint::default() })
        }
    }
}

fn fmt_period(p: Option<usize>) -> String {
    p.map(|k| k.to_string()).unwrap_or_default()
}

fn cmd_build(ctx: &Ctx, a: &BuildArgs) -> Result<(), CliError> {
    if a.order == 0 {
        return Err(usage("--order must be at least 1"));
    }
    if a.steps == 0 {
        return Err(usage("--steps must be at least 1"));
    }
    for (name, x) in [("beta", a.beta), ("epsilon", a.epsilon), ("omega-d", a.omega_d), ("q-bd", a.q_bd), ("p-bd", a.p_bd)] {
        check_finite(name, x)?;
    }
    if a.omega_d <= 0.0 {
        return Err(usage("--omega-d must be positive"));
    }
    let l = count_monomials(3, a.order).map_err(|e| usage(e.to_string()))?;
    let params = DuffingParams::new(a.beta, a.epsilon, a.omega_d);

    let start = Instant::now();
    let map = build_map(params, a.q_bd, a.p_bd, a.order, a.steps).map_err(|e| CliError::Numerical(e.to_string()))?;
    let t_ne = start.elapsed().as_secs_f64();

    let flow = ExactFlow::new(a.beta, a.epsilon, a.steps);
    let reps = 20;
    let start = Instant::now();
    let mut z = [a.q_bd, a.p_bd];
    for _ in 0..reps {
        z = std::hint::black_box(flow.period_map([a.q_bd, a.p_bd], a.omega_d));
    }
    std::hint::black_box(z);
    let t_2 = start.elapsed().as_secs_f64() / reps as f64;

    ctx.note(format!("L(3,{}) = {l}", a.order));
    ctx.note(format!("N_e = {}", 3 * l));
    ctx.note(format!("build time: {t_ne:.6} s"));
    ctx.note(format!(
        "T_Ne/T_2 = {:.1} (N_e/2 = {:.1}, informational)",
        t_ne / t_2.max(f64::MIN_POSITIVE),
        3.0 * l as f64 / 2.0
    ));

    let file = MapFile::new(map);
    match &a.out {
        Some(p) if p.as_os_str() != "-" => file.save(p),
        _ => write_all(&None, &file.to_text()),
    }
}

fn cmd_sweep(ctx: &Ctx, a: &SweepArgs) -> Result<(), CliError> {
    let src = load_source(ctx, &a.source)?;
    check_finite("omega-min", a.omega_min)?;
    check_finite("omega-max", a.omega_max)?;
    if a.omega_min <= 0.0 {
        return Err(usage("frequencies must be positive"));
    }
    let seed = [a.seed_q.unwrap_or(src.expansion.q_bd), a.seed_p.unwrap_or(src.expansion.p_bd)];
    let mut cfg = SweepConfig::new(a.omega_min, a.omega_max, a.samples, seed);
    cfg.transient = a.transient;
    cfg.keep = a.keep;
    cfg.seed_mode = a.seed_mode.into();
    cfg.direction = a.direction.into();
    cfg.period_max = a.period_max;
    cfg.period_tol = a.period_tol;
    cfg.escape_radius = a.escape_radius;
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    if src.handle.is_taylor() {
        let w = src.expansion.omega_bd;
        let stray = (a.omega_min - w).abs().max((a.omega_max - w).abs());
        if stray > a.omega_bound {
            ctx.warn(format!(
                "omega range reaches {stray:.4} from the expansion frequency {w}, beyond {}",
                a.omega_bound
            ));
        }
    }
    let outcome = sweep(&cfg, &src.handle).map_err(|e| CliError::Numerical(e.to_string()))?;
    for w in &outcome.warnings {
        ctx.warn(w);
    }

    let mut body = String::from("omega,q,p,period,escaped\n");
    for rec in &outcome.records {
        let period = fmt_period(rec.period);
        let esc = u8::from(rec.escaped);
        if rec.kept_points.is_empty() {
            let _ = writeln!(body, "{},,,{period},{esc}", rec.omega);
        }
        for z in &rec.kept_points {
            let _ = writeln!(body, "{},{},{},{period},{esc}", rec.omega, z[0], z[1]);
        }
    }
    let escaped = outcome.records.iter().filter(|r| r.escaped).count();
    ctx.note(format!("{} frequencies, {escaped} escaped", outcome.records.len()));
    write_all(&a.out, &body)
}

fn cmd_attractor(ctx: &Ctx, a: &AttractorArgs) -> Result<(), CliError> {
    let src = load_source(ctx, &a.source)?;
    check_finite("omega", a.omega)?;
    if a.omega <= 0.0 {
        return Err(usage("--omega must be positive"));
    }
    let seed = [a.seed_q.unwrap_or(src.expansion.q_bd), a.seed_p.unwrap_or(src.expansion.p_bd)];
    let mut cfg = AttractorConfig::new(a.omega, seed);
    cfg.transient = a.transient;
    cfg.keep = a.keep;
    cfg.workers = a.workers;
    cfg.escape_radius = a.escape_radius;
    cfg.window = match a.window.as_deref() {
        None => None,
        Some(&[q_lo, q_hi, p_lo, p_hi]) => Some(Window { q_lo, q_hi, p_lo, p_hi }),
        Some(_) => return Err(usage("--window takes q_lo,q_hi,p_lo,p_hi")),
    };
    if a.workers == 0 {
        return Err(usage("--workers must be at least 1"));
    }
    let out = attractor_cloud(&cfg, &src.handle).map_err(|e| usage(e.to_string()))?;

    let mut body = String::from("q,p\n");
    if out.escaped {
        ctx.note(format!(
            "orbit escaped at omega = {}: {}; no points written",
            a.omega,
            out.diagnostic.as_deref().unwrap_or("left the escape radius")
        ));
    } else {
        for z in &out.points {
            let _ = writeln!(body, "{},{}", z[0], z[1]);
        }
        match out.period {
            Some(k) => ctx.note(format!("{} points, period {k}", out.points.len())),
            None => ctx.note(format!("{} points, no period up to {DEFAULT_MAX_PERIOD}", out.points.len())),
        }
    }
    write_all(&a.out, &body)
}

fn cmd_fixpoint(ctx: &Ctx, a: &FixpointArgs) -> Result<(), CliError> {
    let src = load_source(ctx, &a.source)?;
    if a.period == 0 {
        return Err(usage("--period must be at least 1"));
    }
    let omegas: Vec<f64> = match (a.omega, a.omega_min, a.omega_max) {
        (Some(w), _, _) => vec![check_finite("omega", w)?],
        (None, Some(lo), Some(hi)) => {
            let mut cfg = SweepConfig::new(lo, hi, a.samples, [0.0, 0.0]);
            cfg.direction = a.direction.into();
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            cfg.grid()
        }
        (None, _, _) => vec![src.expansion.omega_bd],
    };
    if omegas.iter().any(|&w| w.is_nan() || w <= 0.0) {
        return Err(usage("frequencies must be positive"));
    }
    let guess = [a.guess_q.unwrap_or(src.expansion.q_bd), a.guess_p.unwrap_or(src.expansion.p_bd)];
    let opts = NewtonOptions { tol: a.newton_tol, max_iter: a.max_iter, ..NewtonOptions::default() };
    let trail =
        unstable_trail(&omegas, a.period, guess, &src.handle, &opts).map_err(|e| CliError::Numerical(e.to_string()))?;
    if trail.len() < omegas.len() {
        ctx.note(format!(
            "continuation stopped after omega = {}",
            trail.last().map(|f| f.omega).unwrap_or(omegas[0])
        ));
    }

    let mut body = String::from(
        "omega,q,p,period,stable,multiplier_re1,multiplier_im1,multiplier_re2,multiplier_im2,converged\n",
    );
    for f in &trail {
        let [m1, m2] = f.multipliers;
        let _ = writeln!(
            body,
            "{},{},{},{},{},{},{},{},{},{}",
            f.omega,
            f.location[0],
            f.location[1],
            f.period,
            u8::from(f.is_stable()),
            m1.re,
            m1.im,
            m2.re,
            m2.im,
            u8::from(f.converged)
        );
    }
    ctx.note(format!("{} fixed points", trail.len()));
    write_all(&a.out, &body)
}

/// Error of one map against the exact map on `directions` points of each
/// (q, p) circle plus the two `omega` offsets, as (max, mean).
pub fn compare_errors(map: &DuffingMap, exact: &MapHandle, radius: f64, directions: usize) -> (f64, f64) {
    let e = map.expansion();
    let taylor = MapHandle::taylor(map.clone());
    let mut probes: Vec<[f64; 3]> = (0..directions)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / directions as f64;
            [radius * a.cos(), radius * a.sin(), 0.0]
        })
        .collect();
    probes.push([0.0, 0.0, radius]);
    probes.push([0.0, 0.0, -radius]);
    let errs: Vec<f64> = probes
        .iter()
        .map(|d| {
            let (q, p, w) = (e.q_bd + d[0], e.p_bd + d[1], e.omega_bd + d[2]);
            let (tq, tp) = taylor.apply(q, p, w);
            let (xq, xp) = exact.apply(q, p, w);
            (tq - xq).hypot(tp - xp)
        })
        .collect();
    let max = errs.iter().cloned().fold(0.0, f64::max);
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    (max, mean)
}

fn cmd_compare(ctx: &Ctx, a: &CompareArgs) -> Result<(), CliError> {
    if a.maps.is_empty() {
        return Err(usage("--maps needs at least one file"));
    }
    if a.directions == 0 {
        return Err(usage("--directions must be at least 1"));
    }
    if a.radii.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(usage("radii must be finite and non-negative"));
    }
    let maps = a.maps.iter().map(|p| MapFile::load(p)).collect::<Result<Vec<_>, _>>()?;
    let first = &maps[0].map;
    for (m, path) in maps.iter().zip(&a.maps).skip(1) {
        if m.map.map.expansion_point != first.map.expansion_point || m.map.params != first.params {
            return Err(usage(format!(
                "{} was built about a different expansion point or parameters than {}",
                path.display(),
                a.maps[0].display()
            )));
        }
    }
    let steps = a.exact_steps.unwrap_or(first.map.steps);
    if steps == 0 {
        return Err(usage("--exact-steps must be at least 1"));
    }
    let exact = MapHandle::exact_with_steps(first.params, steps);
    ctx.note(format!("exact map with {steps} steps per period"));

    let mut body = String::from("order,radius,max_err,mean_err\n");
    for m in &maps {
        for &r in &a.radii {
            let (max, mean) = compare_errors(&m.map, &exact, r, a.directions);
            let _ = writeln!(body, "{},{r},{max},{mean}", m.map.order());
        }
    }
    write_all(&a.out, &body)
}
