//! Command-line front end.
//!
//! Exit codes: 0 success, 1 input error, 2 unstable closed loop,
//! 3 no stabilizing controller found, 4 numerical failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::error::Error;
use crate::hinf::{hinf_norm, HinfOptions, HinfResult};
use crate::io::{controller_to_json, read_controller, read_plant};
use crate::model::{assemble_closed_loop, sigma_max, ClosedLoopSystem, ControllerRealization, TimeDelayPlant};
use crate::optim::{synthesize, SynthesisOptions};
use crate::stability::{spectral_abscissa, StabilityReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_UNSTABLE: i32 = 2;
pub const EXIT_SYNTHESIS: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "delay-hinf", version, about = "H-infinity norms and fixed-order H-infinity synthesis for time-delay systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// H-infinity norm of the closed loop (open loop when no controller is given).
    Norm {
        plant: PathBuf,
        controller: Option<PathBuf>,
        #[arg(long)]
        json: bool,
        /// Largest discretization degree before giving up.
        #[arg(long, default_value_t = 160)]
        n_max: usize,
    },
    /// Spectral abscissa and rightmost characteristic roots.
    Abscissa {
        plant: PathBuf,
        controller: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Fixed-order controller synthesis.
    Synthesize {
        plant: PathBuf,
        #[arg(long)]
        order: usize,
        #[arg(long, default_value_t = 5)]
        starts: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Gradient tolerance of the norm minimization.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Iteration cap per optimization phase.
        #[arg(long, default_value_t = 100)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-3)]
        margin: f64,
        #[arg(long, default_value_t = 1.0)]
        init_scale: f64,
        /// Controller output file; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// CSV of the largest singular value over a logarithmic frequency grid.
    SigmaPlot {
        plant: PathBuf,
        controller: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-2)]
        wmin: f64,
        #[arg(long, default_value_t = 1e2)]
        wmax: f64,
        #[arg(long, default_value_t = 200)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parse(_) | Error::Dimension(_) | Error::InvalidArgument(_) | Error::Io(_) => EXIT_INPUT,
        Error::Unstable { .. } => EXIT_UNSTABLE,
        Error::StabilizationFailed { .. } => EXIT_SYNTHESIS,
        _ => EXIT_NUMERICAL,
    }
}

fn load(plant: &Path, controller: Option<&Path>) -> Result<(TimeDelayPlant, ControllerRealization), Error> {
    let p = read_plant(plant)?;
    let k = match controller {
        Some(path) => read_controller(path, &p)?,
        None => ControllerRealization::zero_order(&p),
    };
    Ok((p, k))
}

fn load_closed_loop(plant: &Path, controller: Option<&Path>) -> Result<ClosedLoopSystem, Error> {
    let (p, k) = load(plant, controller)?;
    assemble_closed_loop(&p, &k)
}

fn log_space(wmin: f64, wmax: f64, points: usize) -> Vec<f64> {
    let (a, b) = (wmin.log10(), wmax.log10());
    (0..points)
        .map(|i| {
            if i + 1 == points {
                wmax
            } else {
                10f64.powf(a + (b - a) * i as f64 / (points - 1) as f64)
            }
        })
        .collect()
}

#[derive(Serialize)]
struct SynthesisReport<'a> {
    order: usize,
    norm: &'a HinfResult,
    abscissa: &'a StabilityReport,
    starts_tried: usize,
    starts: Vec<StartLine>,
}

#[derive(Serialize)]
struct StartLine {
    start: usize,
    stabilized: bool,
    abscissa: f64,
    norm: Option<f64>,
}

fn print_hinf(out: &mut dyn Write, r: &HinfResult) -> std::io::Result<()> {
    writeln!(out, "norm = {}", r.norm)?;
    for p in &r.peaks {
        writeln!(out, "peak omega = {}, sigma = {}", p.omega, p.sigma)?;
    }
    writeln!(out, "n_used = {}", r.n_used)?;
    writeln!(out, "converged = {}", r.converged)
}

fn print_abscissa(out: &mut dyn Write, r: &StabilityReport) -> std::io::Result<()> {
    writeln!(out, "abscissa = {}", r.abscissa)?;
    for root in &r.rightmost_roots {
        writeln!(out, "root = {}{:+}j", root.re, root.im)?;
    }
    writeln!(out, "n_used = {}", r.n_used)?;
    writeln!(out, "nonsmooth = {}", r.nonsmooth)
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), Error> {
    match cli.command {
        Command::Norm { plant, controller, json, n_max } => {
            let cl = load_closed_loop(&plant, controller.as_deref())?;
            let opts = HinfOptions { n_max, ..HinfOptions::default() };
            let r = hinf_norm(&cl, &opts)?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&r).expect("serializable"))?;
            } else {
                print_hinf(out, &r)?;
            }
        }
        Command::Abscissa { plant, controller, json } => {
            let cl = load_closed_loop(&plant, controller.as_deref())?;
            let r = spectral_abscissa(&cl, &Default::default())?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&r).expect("serializable"))?;
            } else {
                print_abscissa(out, &r)?;
            }
        }
        Command::Synthesize { plant, order, starts, seed, tol, max_iter, margin, init_scale, out: path, json } => {
            let p = read_plant(&plant)?;
            if order == 0 {
                return Err(Error::InvalidArgument("order must be ≥ 1".into()));
            }
            if !(tol > 0.0) || !(margin >= 0.0) || !(init_scale > 0.0) {
                return Err(Error::InvalidArgument("tol and init-scale must be positive, margin nonnegative".into()));
            }
            let mut opts = SynthesisOptions { starts, seed, margin, init_scale, ..SynthesisOptions::default() };
            opts.minimize.grad_tol = tol;
            opts.minimize.max_iter = max_iter;
            opts.stabilize.max_iter = max_iter.max(1);
            let r = synthesize(&p, order, &opts)?;
            let text = controller_to_json(&r.controller);
            if let Some(path) = &path {
                std::fs::write(path, &text)?;
            }
            let report = SynthesisReport {
                order,
                norm: &r.norm,
                abscissa: &r.abscissa,
                starts_tried: r.starts_tried,
                starts: r
                    .starts
                    .iter()
                    .map(|s| StartLine { start: s.start, stabilized: s.stabilized, abscissa: s.abscissa, norm: s.norm })
                    .collect(),
            };
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("serializable"))?;
            } else {
                print_hinf(out, &r.norm)?;
                writeln!(out, "abscissa = {}", r.abscissa.abscissa)?;
                for s in &report.starts {
                    let norm = s.norm.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
                    writeln!(
                        out,
                        "start {}: stabilized = {}, abscissa = {}, norm = {}",
                        s.start, s.stabilized, s.abscissa, norm
                    )?;
                }
                if path.is_none() {
                    write!(out, "{text}")?;
                }
            }
        }
        Command::SigmaPlot { plant, controller, wmin, wmax, points, out: path } => {
            if points < 2 || !(wmin > 0.0) || !(wmin < wmax) || !wmax.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "bad frequency range: need 0 < wmin < wmax and points ≥ 2 (got wmin = {wmin}, wmax = {wmax}, points = {points})"
                )));
            }
            let cl = load_closed_loop(&plant, controller.as_deref())?;
            let r = hinf_norm(&cl, &HinfOptions::default())?;
            let mut csv = String::from("omega,sigma_max\n");
            for w in log_space(wmin, wmax, points) {
                csv.push_str(&format!("{},{}\n", w, sigma_max(&cl, w)));
            }
            csv.push_str("# peak\n");
            for p in &r.peaks {
                csv.push_str(&format!("{},{}\n", p.omega, p.sigma));
            }
            match path {
                Some(path) => std::fs::write(path, csv)?,
                None => out.write_all(csv.as_bytes())?,
            }
        }
    }
    Ok(())
}

/// Runs the CLI on `args` (including the program name) and returns the
/// exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = if code == EXIT_OK { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
