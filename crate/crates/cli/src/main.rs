//! `qdyne`: command-line front end for the sequential-readout toolkit.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod field_table;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "qdyne", version, about = "Sequential-readout AC magnetometry simulator and analysis")]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// TOML run configuration; see qdyne.example.toml.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Run a reference scenario end to end.
    #[arg(long, global = true, value_enum, value_name = "NAME")]
    preset: Option<Preset>,

    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,

    /// Verify invariants of the emitted data and fail if one is violated.
    #[arg(long, global = true)]
    check: bool,

    /// Drop the repolarization factor from sensitivity sweeps.
    #[arg(long, global = true)]
    no_repolarization: bool,

    /// Also write gnuplot scripts next to the CSV files.
    #[arg(long, global = true)]
    plot: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Normalised weighting versus pulse-width ratio.
    Fig1b,
    /// Bandwidth of XY4-(4) around 1 MHz.
    Fig1c,
    /// Reference-field trace, spectrum and sensitivity.
    Fig3,
    /// Sensitivity versus frequency with and without repolarization.
    Fig4,
    /// Repolarization fit and laser window versus frequency.
    Fig5,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Normalised weighting W̄ over a range of α.
    Weighting {
        #[arg(long)]
        alpha_min: Option<f64>,
        #[arg(long)]
        alpha_max: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Readout versus field frequency at fixed sequence timing, and its FWHM.
    Bandwidth {
        /// Field amplitude in tesla.
        #[arg(long)]
        field: Option<f64>,
    },
    /// Simulate a sequential-readout trace and estimate the sensitivity.
    Qdyne {
        #[arg(long)]
        n_blocks: Option<usize>,
        /// Per-block noise; overrides calibration.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Spectrum and sensitivity of an existing trace CSV.
    Spectrum {
        #[arg(long, value_name = "PATH")]
        trace: PathBuf,
        /// RMS of the reference field in the trace, tesla.
        #[arg(long)]
        b_ref_rms: Option<f64>,
    },
    /// Relative sensitivity versus frequency, limits and optimum.
    SensitivitySweep {
        /// Two-column CSV of (frequency_hz, field_rms_t).
        #[arg(long, value_name = "PATH")]
        field_table: Option<PathBuf>,
        /// Anchor point as FREQUENCY_HZ,ETA_T_PER_RTHZ.
        #[arg(long, value_name = "F,ETA", value_parser = parse_pair)]
        anchor: Option<(f64, f64)>,
    },
    /// Fit a repolarization or contrast-decay model to a two-column CSV.
    Fit {
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        #[arg(long, value_enum)]
        model: Option<FitModel>,
        /// Hold the contrast stretch exponent fixed.
        #[arg(long)]
        fix_p: Option<f64>,
    },
    /// Generate synthetic fit data from the configured photophysics.
    Synth {
        #[arg(long, value_enum)]
        model: FitModel,
        /// Gaussian noise as a fraction of the largest value.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 40)]
        points: usize,
    },
    /// Field amplitude that gives a π phase on resonance.
    Calibrate {
        #[arg(long)]
        frequency: Option<f64>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitModel {
    Repolarization,
    Contrast,
}

impl FitModel {
    pub fn name(self) -> &'static str {
        match self {
            FitModel::Repolarization => "repolarization",
            FitModel::Contrast => "contrast",
        }
    }
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected two comma-separated numbers")?;
    let a = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let b = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((a, b))
}

fn preset_command(p: Preset) -> &'static str {
    match p {
        Preset::Fig1b => "weighting",
        Preset::Fig1c => "bandwidth",
        Preset::Fig3 => "qdyne",
        Preset::Fig4 => "sensitivity-sweep",
        Preset::Fig5 => "fit",
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Weighting { .. } => "weighting",
        Command::Bandwidth { .. } => "bandwidth",
        Command::Qdyne { .. } => "qdyne",
        Command::Spectrum { .. } => "spectrum",
        Command::SensitivitySweep { .. } => "sensitivity-sweep",
        Command::Fit { .. } => "fit",
        Command::Synth { .. } => "synth",
        Command::Calibrate { .. } => "calibrate",
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let mut cfg = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if g.no_repolarization {
        cfg.sweep.include_repolarization = false;
    }
    match (g.preset, &cli.command) {
        (Some(p), Some(c)) if preset_command(p) != command_name(c) => bail!(
            "preset {:?} runs `{}`, not `{}`",
            p,
            preset_command(p),
            command_name(c)
        ),
        (Some(p), _) => commands::run_preset(p, cli.command.as_ref(), &mut cfg, g),
        (None, Some(c)) => commands::run_command(c, &mut cfg, g),
        (None, None) => bail!("nothing to do: give a subcommand or --preset (see --help)"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
