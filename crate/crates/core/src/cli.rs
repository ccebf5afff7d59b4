//! Command-line front end for the `flqkd` binary.
//!
//! Subcommands write CSV to `--out` (or standard output). Exit codes: 0 on
//! success, 2 for configuration errors (reported before any computation),
//! 3 for numeric failures during computation.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::constellation::make_kpsk;
use crate::error::Error;
use crate::link::{link_budget, GaussianChannel, ParamsDoc, ProtocolParams};
use crate::monitor::{
    expected_rates, flux_check, intrusion_parameter, simulate_counts_from, DEFAULT_GATE_S,
    DEFAULT_Z_THRESHOLD,
};
use crate::optimizer::{evaluate_channel, point_row, sweep, OptimizerSettings, SweepRow};
use crate::rates::{EveModel, TabulatedBound, ZeroLeakage};
use crate::receiver::DEFAULT_QUAD_TOL;
use crate::stream::Stream;

pub const PARAMS_ENV: &str = "FLQKD_PARAMS";

pub const SWEEP_HEADER: &str = "L_km,K,N_S_opt,snr,I_AB_bps,chi_bps,skr_lb_bps,secure,at_bound";
pub const MONITOR_HEADER: &str = "f_true,f_E_est,raw,z_flux,pass";
pub const CONSTELLATION_HEADER: &str = "section,index,I,Q,angle_rad,radius";

/// Brightness used by `monitor` when neither `--N_S` nor the params file
/// sets one.
pub const DEFAULT_MONITOR_N_S: f64 = 0.01;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "flqkd", version, about = "K-ary PSK floodlight QKD rate laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize brightness over a grid of path lengths and alphabet sizes.
    Sweep(SweepArgs),
    /// Evaluate the rate pipeline at one operating point.
    Rate(RateArgs),
    /// Simulate the monitoring taps and the intrusion-parameter estimate.
    Monitor(MonitorArgs),
    /// Export constellation points, noise radius and decision boundaries.
    Constellation(ConstellationArgs),
}

/// Parameter sources shared by every subcommand.
#[derive(Debug, Clone, Args, Default)]
pub struct ParamArgs {
    /// JSON parameter file (falls back to $FLQKD_PARAMS).
    #[arg(long, value_name = "PATH")]
    pub params: Option<PathBuf>,
    /// Output CSV path; standard output when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Source bandwidth (Hz).
    #[arg(long = "W", value_name = "HZ")]
    pub w_hz: Option<f64>,
    /// Symbol rate (symbols/s).
    #[arg(long = "R", value_name = "BAUD")]
    pub r_baud: Option<f64>,
    #[arg(long = "G_B")]
    pub g_b: Option<f64>,
    #[arg(long = "N_LO")]
    pub n_lo: Option<f64>,
    #[arg(long = "kappa_A")]
    pub kappa_a: Option<f64>,
    #[arg(long = "kappa_B")]
    pub kappa_b: Option<f64>,
    /// ASE-to-SPDC ratio.
    #[arg(long = "n")]
    pub n: Option<f64>,
    /// Fiber loss (dB/km).
    #[arg(long = "alpha")]
    pub alpha_db_per_km: Option<f64>,
    #[arg(long = "eta")]
    pub eta: Option<f64>,
    #[arg(long = "beta")]
    pub beta: Option<f64>,
}

impl ParamArgs {
    fn doc(&self) -> ParamsDoc {
        ParamsDoc {
            w_hz: self.w_hz,
            r_baud: self.r_baud,
            g_b: self.g_b,
            n_lo: self.n_lo,
            kappa_a: self.kappa_a,
            kappa_b: self.kappa_b,
            n: self.n,
            alpha_db_per_km: self.alpha_db_per_km,
            eta: self.eta,
            beta: self.beta,
            ..Default::default()
        }
    }

    /// File (or `$FLQKD_PARAMS`) overlaid with flag-level settings.
    fn load(&self) -> Result<ParamsDoc, Error> {
        let path = self
            .params
            .clone()
            .or_else(|| std::env::var_os(PARAMS_ENV).map(PathBuf::from));
        let file = match path {
            Some(p) => ParamsDoc::load(&p)?,
            None => ParamsDoc::default(),
        };
        Ok(file.overlay(&self.doc()))
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: ParamArgs,
    /// Alphabet sizes, comma separated.
    #[arg(long = "K", value_parser = parse_alphabets, default_value = "2,4,8,32")]
    pub k: Alphabets,
    /// Path lengths (km): `start:stop:step`, a comma list, or one value.
    #[arg(long = "L", value_parser = parse_lengths, default_value = "0:150:10")]
    pub l: Lengths,
    /// Eve model: `zero` or `table:PATH`.
    #[arg(long, default_value = "zero")]
    pub eve: String,
    /// Intrusion parameter fed to the Eve model.
    #[arg(long = "f-e", default_value_t = 0.0)]
    pub f_e: f64,
    /// Relative tolerance of the brightness search.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Brightness search interval `MIN,MAX`.
    #[arg(long = "ns-bounds", value_parser = parse_bounds, default_value = "1e-7,0.5")]
    pub ns_bounds: (f64, f64),
}

#[derive(Debug, Args)]
pub struct RateArgs {
    #[command(flatten)]
    pub common: ParamArgs,
    #[arg(long = "K", value_parser = parse_alphabet)]
    pub k: Option<usize>,
    #[arg(long = "L")]
    pub l_km: Option<f64>,
    /// Source brightness (photons/mode).
    #[arg(long = "N_S")]
    pub n_s: Option<f64>,
    /// Direct SNR `r²/σ²`, bypassing the link budget.
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long, default_value = "zero")]
    pub eve: String,
    #[arg(long = "f-e", default_value_t = 0.0)]
    pub f_e: f64,
    /// Quadrature tolerance.
    #[arg(long, default_value_t = DEFAULT_QUAD_TOL)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    #[command(flatten)]
    pub common: ParamArgs,
    #[arg(long = "L")]
    pub l_km: Option<f64>,
    #[arg(long = "N_S")]
    pub n_s: Option<f64>,
    /// Accumulation time per scenario (s).
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    /// Coincidence gate width (s).
    #[arg(long, default_value_t = DEFAULT_GATE_S)]
    pub gate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// True intrusion fractions, comma separated.
    #[arg(long = "f-true", value_parser = parse_fractions, default_value = "0")]
    pub f_true: Fractions,
    /// Flux-check threshold on |z|.
    #[arg(long = "z-threshold", default_value_t = DEFAULT_Z_THRESHOLD)]
    pub z_threshold: f64,
}

#[derive(Debug, Args)]
pub struct ConstellationArgs {
    #[command(flatten)]
    pub common: ParamArgs,
    #[arg(long = "K", value_parser = parse_alphabet)]
    pub k: Option<usize>,
    #[arg(long = "L")]
    pub l_km: Option<f64>,
    #[arg(long = "N_S")]
    pub n_s: Option<f64>,
    #[arg(long)]
    pub snr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alphabets(pub Vec<usize>);

#[derive(Debug, Clone, PartialEq)]
pub struct Lengths(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct Fractions(pub Vec<f64>);

fn parse_alphabet(s: &str) -> Result<usize, String> {
    let k: usize = s
        .trim()
        .parse()
        .map_err(|_| format!("'{s}' is not a non-negative integer"))?;
    if k < 2 {
        return Err(format!("alphabet size must be >= 2, got {k}"));
    }
    Ok(k)
}

fn parse_alphabets(s: &str) -> Result<Alphabets, String> {
    let ks = s.split(',').map(parse_alphabet).collect::<Result<Vec<_>, _>>()?;
    Ok(Alphabets(ks))
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("'{s}' is not a number"))?;
    if !v.is_finite() {
        return Err(format!("'{s}' is not finite"));
    }
    Ok(v)
}

/// `start:stop:step` (inclusive of `stop` when it lands on the grid), a
/// comma-separated list, or a single value.
pub fn parse_lengths(s: &str) -> Result<Lengths, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let values = match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (parse_f64(start)?, parse_f64(stop)?, parse_f64(step)?);
            if step <= 0.0 || stop < start {
                return Err(format!("range '{s}' needs step > 0 and stop >= start"));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            (0..=n).map(|i| start + step * i as f64).collect()
        }
        [_] => s.split(',').map(parse_f64).collect::<Result<Vec<_>, _>>()?,
        _ => return Err(format!("cannot parse length list '{s}'")),
    };
    if values.iter().any(|&v| v < 0.0) {
        return Err("path lengths must be >= 0".into());
    }
    Ok(Lengths(values))
}

fn parse_fractions(s: &str) -> Result<Fractions, String> {
    let v = s.split(',').map(parse_f64).collect::<Result<Vec<_>, _>>()?;
    if v.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err("intrusion fractions must lie in [0, 1]".into());
    }
    Ok(Fractions(v))
}

fn parse_bounds(s: &str) -> Result<(f64, f64), String> {
    match s.split(',').collect::<Vec<_>>().as_slice() {
        [lo, hi] => {
            let (lo, hi) = (parse_f64(lo)?, parse_f64(hi)?);
            if !(lo > 0.0 && lo < hi) {
                return Err(format!("bounds need 0 < MIN < MAX, got {lo},{hi}"));
            }
            Ok((lo, hi))
        }
        _ => Err(format!("expected MIN,MAX, got '{s}'")),
    }
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(e: impl std::fmt::Display) -> Self {
        Self { code: EXIT_CONFIG, message: e.to_string() }
    }

    fn numeric(e: impl std::fmt::Display) -> Self {
        Self { code: EXIT_NUMERIC, message: e.to_string() }
    }
}

/// `{:.16e}`: 17 significant digits, identical on every platform.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_eve(choice: &str) -> Result<Box<dyn EveModel>, CliError> {
    if choice == "zero" {
        return Ok(Box::new(ZeroLeakage));
    }
    if let Some(path) = choice.strip_prefix("table:") {
        let table = TabulatedBound::load(Path::new(path)).map_err(CliError::config)?;
        return Ok(Box::new(table));
    }
    Err(CliError::config(format!("unknown eve model '{choice}' (expected zero or table:PATH)")))
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let n_s = r.n_s_opt.map(fmt_num).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            fmt_num(r.l_km),
            r.k,
            n_s,
            fmt_num(r.snr),
            fmt_num(r.i_ab),
            fmt_num(r.chi),
            fmt_num(r.skr_lb),
            r.secure,
            r.at_bound
        );
    }
    out
}

fn run_sweep(args: &SweepArgs) -> Result<String, CliError> {
    let doc = args.common.load().map_err(CliError::config)?;
    let (n_min, n_max) = args.ns_bounds;
    let template = doc.resolve(Some(n_min)).map_err(CliError::config)?;
    let settings = OptimizerSettings {
        n_min,
        n_max,
        tol: args.tol,
        f_e: args.f_e,
        ..Default::default()
    };
    settings.validate().map_err(CliError::config)?;
    let eve = parse_eve(&args.eve)?;
    log::info!(
        "sweeping {} lengths x {} alphabets with eve = {}",
        args.l.0.len(),
        args.k.0.len(),
        eve.name()
    );
    let rows = sweep(&template, eve.as_ref(), &args.l.0, &args.k.0, &settings)
        .map_err(CliError::numeric)?;
    Ok(sweep_csv(&rows))
}

fn run_rate(args: &RateArgs) -> Result<String, CliError> {
    if args.n_s.is_some() && args.snr.is_some() {
        return Err(CliError::config("give exactly one of --N_S and --snr, not both"));
    }
    if !(args.tol > 0.0 && args.tol <= 1e-3) {
        return Err(CliError::config(format!("--tol must lie in (0, 1e-3], got {}", args.tol)));
    }
    let mut doc = args.common.load().map_err(CliError::config)?;
    doc.k = args.k.or(doc.k);
    doc.l_km = args.l_km.or(doc.l_km);
    doc.n_s = args.n_s.or(doc.n_s);
    let eve = parse_eve(&args.eve)?;
    if !(0.0..=1.0).contains(&args.f_e) {
        return Err(CliError::config("--f-e must lie in [0, 1]"));
    }

    let row = match args.snr {
        Some(snr) => {
            // Brightness is irrelevant here; a placeholder keeps validation
            // of the remaining fields.
            let p = doc.resolve(Some(1.0)).map_err(CliError::config)?;
            let ch = GaussianChannel::from_snr(snr).map_err(CliError::config)?;
            if args.eve != "zero" {
                return Err(CliError::config(
                    "tabulated eve models need a brightness; use --N_S instead of --snr",
                ));
            }
            let point = evaluate_channel(&ch, p.k, p.r_baud, p.beta, 0.0, args.tol)
                .map_err(CliError::numeric)?;
            SweepRow {
                l_km: p.l_km,
                k: p.k,
                n_s_opt: None,
                snr: point.snr,
                i_ab: point.rates.i_ab,
                chi: point.rates.chi,
                skr_lb: point.rates.skr_lb,
                secure: point.rates.secure,
                at_bound: false,
                unimodal: true,
            }
        }
        None => {
            if doc.n_s.is_none() {
                return Err(CliError::config("give exactly one of --N_S and --snr"));
            }
            let p = doc.resolve(None).map_err(CliError::config)?;
            point_row(&p, eve.as_ref(), args.f_e, args.tol).map_err(CliError::numeric)?
        }
    };
    Ok(sweep_csv(&[row]))
}

fn run_monitor(args: &MonitorArgs) -> Result<String, CliError> {
    let mut doc = args.common.load().map_err(CliError::config)?;
    doc.l_km = args.l_km.or(doc.l_km);
    doc.n_s = args.n_s.or(doc.n_s);
    let p = doc.resolve(Some(DEFAULT_MONITOR_N_S)).map_err(CliError::config)?;
    // Validates duration and gate before any sampling.
    let nominal = expected_rates(&p, 0.0, args.duration, args.gate).map_err(CliError::config)?;
    if !(args.z_threshold > 0.0) {
        return Err(CliError::config("--z-threshold must be > 0"));
    }

    let mut out = String::from(MONITOR_HEADER);
    out.push('\n');
    for (i, &f_true) in args.f_true.0.iter().enumerate() {
        let mut stream = Stream::substream(args.seed, i as u64);
        let counts = simulate_counts_from(&p, f_true, args.duration, args.gate, &mut stream)
            .map_err(CliError::numeric)?;
        let est = intrusion_parameter(&counts).map_err(CliError::numeric)?;
        let flux = flux_check(&counts, nominal.s_b, args.z_threshold).map_err(CliError::numeric)?;
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_num(f_true),
            fmt_num(est.f_e),
            fmt_num(est.raw),
            fmt_num(flux.z),
            flux.pass
        );
    }
    Ok(out)
}

fn run_constellation(args: &ConstellationArgs) -> Result<String, CliError> {
    let mut doc = args.common.load().map_err(CliError::config)?;
    doc.k = args.k.or(doc.k);
    doc.l_km = args.l_km.or(doc.l_km);
    if args.n_s.is_some() && args.snr.is_some() {
        return Err(CliError::config("give at most one of --N_S and --snr"));
    }
    doc.n_s = args.n_s.or(doc.n_s);
    let k = doc.k.unwrap_or(ProtocolParams::reference(1.0).k);
    let c = make_kpsk(k).map_err(CliError::config)?;
    let ch = match args.snr {
        Some(snr) => GaussianChannel::from_snr(snr).map_err(CliError::config)?,
        None => {
            let p = doc
                .resolve(None)
                .map_err(|_| CliError::config("constellation needs --snr or --N_S"))?;
            link_budget(&p).map_err(CliError::config)?
        }
    };

    let mut out = String::from(CONSTELLATION_HEADER);
    out.push('\n');
    for (j, &theta) in c.angles().iter().enumerate() {
        let (s, co) = theta.sin_cos();
        let _ = writeln!(
            out,
            "point,{j},{},{},{},{}",
            fmt_num(ch.r() * co),
            fmt_num(ch.r() * s),
            fmt_num(theta),
            fmt_num(ch.r())
        );
    }
    let _ = writeln!(out, "sigma,0,,,,{}", fmt_num(ch.sigma()));
    for (j, theta) in c.boundary_angles().into_iter().enumerate() {
        let _ = writeln!(out, "boundary,{j},,,{},", fmt_num(theta));
    }
    Ok(out)
}

fn out_path(cmd: &Command) -> Option<&Path> {
    let common = match cmd {
        Command::Sweep(a) => &a.common,
        Command::Rate(a) => &a.common,
        Command::Monitor(a) => &a.common,
        Command::Constellation(a) => &a.common,
    };
    common.out.as_deref()
}

/// Runs a parsed command and returns its CSV.
pub fn execute(cmd: &Command) -> Result<String, CliError> {
    match cmd {
        Command::Sweep(a) => run_sweep(a),
        Command::Rate(a) => run_rate(a),
        Command::Monitor(a) => run_monitor(a),
        Command::Constellation(a) => run_constellation(a),
    }
}

/// Entry point: parses `args`, runs the subcommand, writes the CSV and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let csv = match execute(&cli.command) {
        Ok(csv) => csv,
        Err(e) => {
            eprintln!("error: {}", e.message);
            return e.code;
        }
    };
    let written = match out_path(&cli.command) {
        Some(path) => std::fs::write(path, csv.as_bytes())
            .map_err(|e| format!("writing {}: {e}", path.display())),
        None => std::io::stdout()
            .lock()
            .write_all(csv.as_bytes())
            .map_err(|e| format!("writing standard output: {e}")),
    };
    match written {
        Ok(()) => EXIT_OK,
        Err(msg) => {
            eprintln!("error: {msg}");
            EXIT_CONFIG
        }
    }
}
