//! Subcommand implementations.

use std::f64::consts::SQRT_2;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use qdyne_core::io::{format_float, read_trace, read_two_column, write_curve, write_spectrum, write_table, write_trace};
use qdyne_core::photophysics::{
    fit_contrast_decay, fit_repolarization, signal_level, synthetic_samples, FitOptions,
};
use qdyne_core::qdyne::{build_schedule, downconverted_frequency, simulate_trace, NoiseModel, SrTrace, TraceSetup};
use qdyne_core::response::{
    bandwidth_profile_with, calibration_field_pi, fwhm_bandwidth, normalized_weighting, AcField,
};
use qdyne_core::sensmodel::{
    anchor_scale_with_field, default_grid, divergence_frequency, frequency_limits, optimum_frequency,
    sweep_with_field, SensitivityCurve,
};
use qdyne_core::sequence::{make_xy4, tau_for_frequency, Axis, SequenceSpec};
use qdyne_core::spectrum::{
    amplitude_spectrum, estimate_sensitivity_with, parseval_residual, AmplitudeSpectrum, FloorOptions,
    SensitivityReport,
};
use qdyne_core::{presets, Exec};

use crate::config::RunConfig;
use crate::field_table::FieldCalibrationTable;
use crate::output::{report, Output};
use crate::{Command, FitModel, Global, Preset};

const PARSEVAL_TOLERANCE: f64 = 1e-9;

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let last = (n - 1) as f64;
    (0..n)
        .map(|i| match i {
            0 => lo,
            i if i == n - 1 => hi,
            i => lo + (hi - lo) * i as f64 / last,
        })
        .collect()
}

fn sequence(cfg: &RunConfig, axis: Axis) -> Result<SequenceSpec> {
    let s = &cfg.sequence;
    Ok(make_xy4(s.xy4_repeats, tau_for_frequency(s.frequency, s.tau_pi)?, s.tau_pi, axis)?)
}

fn pi_field(cfg: &RunConfig, f: f64) -> Result<f64> {
    let tau_pi = cfg.sequence.tau_pi;
    let alpha = tau_pi / tau_for_frequency(f, tau_pi)?;
    Ok(calibration_field_pi(f, cfg.n_pulses(), alpha, &cfg.consts())?)
}

pub fn run_command(c: &Command, cfg: &mut RunConfig, g: &Global) -> Result<()> {
    match c {
        Command::Weighting { alpha_min, alpha_max, points } => {
            set(&mut cfg.weighting.alpha_min, *alpha_min);
            set(&mut cfg.weighting.alpha_max, *alpha_max);
            set(&mut cfg.weighting.points, *points);
            cfg.validate()?;
            weighting(cfg, &mut open(cfg, g, "weighting")?, g.check)
        }
        Command::Bandwidth { field } => {
            set(&mut cfg.bandwidth.field, *field);
            cfg.validate()?;
            bandwidth(cfg, &mut open(cfg, g, "bandwidth")?, g.check)
        }
        Command::Qdyne { n_blocks, sigma } => {
            set(&mut cfg.qdyne.n_blocks, *n_blocks);
            if sigma.is_some() {
                cfg.noise.sigma = *sigma;
            }
            cfg.validate()?;
            qdyne(cfg, &mut open(cfg, g, "qdyne")?, g.check)
        }
        Command::Spectrum { trace, b_ref_rms } => {
            set(&mut cfg.field.amplitude_rms, *b_ref_rms);
            cfg.validate()?;
            spectrum(cfg, &mut open(cfg, g, "spectrum")?, trace, g.check)
        }
        Command::SensitivitySweep { field_table, anchor } => {
            if field_table.is_some() {
                cfg.sweep.field_table = field_table.clone();
            }
            if let Some((f, eta)) = anchor {
                cfg.sweep.anchor_frequency = Some(*f);
                cfg.sweep.anchor_eta = Some(*eta);
            }
            cfg.validate()?;
            let mut out = open(cfg, g, "sensitivity-sweep")?;
            sensitivity_sweep(cfg, &mut out, "curve.csv", g.check)
        }
        Command::Fit { data, model, fix_p } => {
            if data.is_some() {
                cfg.fit.data = data.clone();
            }
            if let Some(m) = model {
                cfg.fit.model = Some(m.name().into());
            }
            if fix_p.is_some() {
                cfg.fit.fix_p = *fix_p;
            }
            cfg.validate()?;
            let data = cfg.fit.data.clone().ok_or_else(|| anyhow!("fit needs --data or fit.data"))?;
            let model = match cfg.fit.model.as_deref() {
                Some("repolarization") => FitModel::Repolarization,
                Some("contrast") => FitModel::Contrast,
                _ => bail!("fit needs --model or fit.model"),
            };
            let samples = read_two_column(
                std::fs::File::open(&data).with_context(|| format!("cannot open {}", data.display()))?,
            )
            .with_context(|| format!("{}", data.display()))?;
            fit(cfg, &mut open(cfg, g, "fit")?, model, &samples)
        }
        Command::Synth { model, noise, points } => {
            cfg.validate()?;
            if *points < 4 {
                bail!("synth needs at least 4 points");
            }
            if !(noise.is_finite() && *noise >= 0.0) {
                bail!("noise must be a non-negative fraction, got {noise}");
            }
            synth(cfg, &mut open(cfg, g, "synth")?, *model, *noise, *points).map(|_| ())
        }
        Command::Calibrate { frequency } => {
            cfg.validate()?;
            calibrate(cfg, frequency.unwrap_or(cfg.sequence.frequency))
        }
    }
}

pub fn run_preset(p: Preset, c: Option<&Command>, cfg: &mut RunConfig, g: &Global) -> Result<()> {
    match p {
        Preset::Fig1b | Preset::Fig1c | Preset::Fig3 => {
            let default = match p {
                Preset::Fig1b => Command::Weighting { alpha_min: None, alpha_max: None, points: None },
                Preset::Fig1c => Command::Bandwidth { field: None },
                _ => Command::Qdyne { n_blocks: None, sigma: None },
            };
            run_command(c.unwrap_or(&default), cfg, g)
        }
        Preset::Fig4 => {
            if let Some(Command::SensitivitySweep { field_table, anchor }) = c {
                if field_table.is_some() {
                    cfg.sweep.field_table = field_table.clone();
                }
                if let Some((f, eta)) = anchor {
                    cfg.sweep.anchor_frequency = Some(*f);
                    cfg.sweep.anchor_eta = Some(*eta);
                }
            }
            if cfg.sweep.anchor_frequency.is_none() {
                cfg.sweep.anchor_frequency = Some(presets::SEQUENCE_FREQUENCY);
                cfg.sweep.anchor_eta = Some(presets::TARGET_ETA);
            }
            cfg.validate()?;
            let mut out = open(cfg, g, "sensitivity-sweep")?;
            let with = cfg.sweep.include_repolarization;
            sensitivity_sweep(cfg, &mut out, "curve.csv", g.check)?;
            if with {
                let mut off = cfg.clone();
                off.sweep.include_repolarization = false;
                sensitivity_sweep(&off, &mut out, "curve_no_repolarization.csv", g.check)?;
            }
            Ok(())
        }
        Preset::Fig5 => {
            cfg.validate()?;
            let mut out = open(cfg, g, "fit")?;
            let (samples, _) = synth(cfg, &mut out, FitModel::Repolarization, 0.01, 40)?;
            fit(cfg, &mut out, FitModel::Repolarization, &samples)?;
            laser_window(cfg, &mut out)
        }
    }
}

fn set<T: Copy>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn open(cfg: &RunConfig, g: &Global, command: &str) -> Result<Output> {
    Output::new(&g.out, cfg, command, g.plot)
}

fn weighting(cfg: &RunConfig, out: &mut Output, check: bool) -> Result<()> {
    let w = &cfg.weighting;
    let rows: Vec<Vec<f64>> = linspace(w.alpha_min, w.alpha_max, w.points)
        .into_iter()
        .map(|a| vec![a, normalized_weighting(a)])
        .collect();
    let meta = out.provenance().to_vec();
    out.write("weighting.csv", |f| write_table(f, &meta, &["alpha", "wbar"], &rows))?;
    out.plot_script("weighting.csv", 1, 2, "alpha", "normalised weighting", false)?;
    let monotone = rows.windows(2).all(|r| r[1][1] < r[0][1]);
    report(&[("rows", rows.len().to_string()), ("monotone_decreasing", monotone.to_string())]);
    if check && !monotone {
        bail!("check failed: weighting column is not strictly decreasing");
    }
    Ok(())
}

fn bandwidth(cfg: &RunConfig, out: &mut Output, check: bool) -> Result<()> {
    let b = &cfg.bandwidth;
    let axis: Axis = b.readout.parse().expect("validated");
    let seq = sequence(cfg, axis)?;
    let grid = linspace(b.f_min, b.f_max, b.points);
    let profile =
        bandwidth_profile_with(Exec::default(), &seq, b.field, cfg.sequence.frequency, &grid, &cfg.consts())?;
    let rows: Vec<Vec<f64>> = profile.points.iter().map(|(f, v)| vec![*f, *v]).collect();
    let meta = out.provenance().to_vec();
    out.write("bandwidth.csv", |f| write_table(f, &meta, &["f_hz", "signal"], &rows))?;
    out.plot_script("bandwidth.csv", 1, 2, "field frequency (Hz)", "readout", false)?;
    if check && profile.points.iter().any(|(_, v)| v.abs() > 1.0 + 1e-12) {
        bail!("check failed: readout outside [-1, 1]");
    }
    let fbw = fwhm_bandwidth(&profile).context("bandwidth")?;
    report(&[
        ("center_hz", format_float(cfg.sequence.frequency)),
        ("field_t", format_float(b.field)),
        ("f_bw_hz", format_float(fbw)),
    ]);
    Ok(())
}

fn floor_options(cfg: &RunConfig) -> FloorOptions {
    FloorOptions {
        dc_bins: cfg.qdyne.dc_bins,
        band_halfwidth_bins: cfg.qdyne.band_halfwidth_bins,
        harmonics: cfg.qdyne.harmonics,
    }
}

fn exclusions(cfg: &RunConfig) -> Vec<(f64, f64)> {
    cfg.qdyne.exclusions.iter().map(|[a, b]| (*a, *b)).collect()
}

/// Writes the spectrum and the sensitivity estimate of `trace`.
fn analyse(cfg: &RunConfig, out: &mut Output, trace: &SrTrace, check: bool) -> Result<SensitivityReport> {
    let spec: AmplitudeSpectrum = amplitude_spectrum(trace)?;
    let meta = out.provenance().to_vec();
    out.write("spectrum.csv", |f| write_spectrum(f, &meta, &spec))?;
    out.plot_script("spectrum.csv", 2, 3, "frequency (Hz)", "amplitude", false)?;
    let residual = parseval_residual(&trace.samples, &spec);
    if check && !(residual <= PARSEVAL_TOLERANCE) {
        bail!("check failed: Parseval residual {residual:e} exceeds {PARSEVAL_TOLERANCE:e}");
    }
    let r = estimate_sensitivity_with(
        &spec,
        cfg.field.amplitude_rms,
        trace.duration(),
        &exclusions(cfg),
        &floor_options(cfg),
    )
    .context("sensitivity estimate")?;
    let row = format!("{}\n{}\n", SensitivityReport::CSV_HEADER, r.csv_row());
    let mut text = String::new();
    for (k, v) in out.provenance() {
        text.push_str(&format!("# {k}={v}\n"));
    }
    out.write_text("sensitivity.csv", &(text + &row))?;
    report(&[("parseval_residual", format_float(residual))]);
    print!("{}", r.to_key_value());
    Ok(r)
}

fn qdyne(cfg: &RunConfig, out: &mut Output, check: bool) -> Result<()> {
    let seq = sequence(cfg, cfg.readout())?;
    let mut setup = TraceSetup {
        schedule: build_schedule(&seq, cfg.schedule.t_sr, cfg.schedule.margin)?,
        field: AcField::new(cfg.field.amplitude_rms * SQRT_2, cfg.field.frequency, cfg.field.phase)?,
        repol: cfg.repol(),
        contrast: cfg.contrast(),
        noise: NoiseModel::default(),
        consts: cfg.consts(),
        detuning_attenuation: cfg.qdyne.detuning_attenuation,
    };
    let n = cfg.qdyne.n_blocks;
    let sigma = match cfg.noise.sigma {
        Some(s) => s,
        None if cfg.field.amplitude_rms > 0.0 => presets::calibrated_sigma(
            &setup,
            n,
            cfg.field.amplitude_rms,
            cfg.noise.target_eta,
        )
        .context("noise calibration")?,
        None => bail!("noise.sigma must be set when there is no reference field to calibrate against"),
    };
    setup.noise = NoiseModel::new(sigma)?;
    let trace = simulate_trace(&setup, n, cfg.seed)?;
    let meta = out.provenance_unseeded();
    out.write("trace.csv", |f| write_trace(f, &meta, &trace))?;
    out.plot_script("trace.csv", 2, 3, "time (s)", "readout", false)?;
    report(&[
        ("sigma", format_float(sigma)),
        ("f_sens_hz", format_float(downconverted_frequency(cfg.field.frequency, cfg.schedule.t_sr))),
        ("t_laser_s", format_float(setup.schedule.t_laser())),
    ]);
    analyse(cfg, out, &trace, check).map(|_| ())
}

fn spectrum(cfg: &RunConfig, out: &mut Output, path: &Path, check: bool) -> Result<()> {
    let file = std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let trace = read_trace(file).with_context(|| format!("{}", path.display()))?;
    analyse(cfg, out, &trace, check).map(|_| ())
}

fn sensitivity_sweep(cfg: &RunConfig, out: &mut Output, name: &str, check: bool) -> Result<()> {
    let b_probe = match cfg.sweep.b_probe {
        Some(b) => b,
        None => pi_field(cfg, cfg.sequence.frequency)?,
    };
    let mc = cfg.model_config(b_probe);
    let grid = default_grid(&mc, cfg.sweep.points)?;
    let table = cfg.sweep.field_table.as_deref().map(FieldCalibrationTable::load).transpose()?;
    let field = |f: f64| match &table {
        Some(t) => t.field_rms(f) * SQRT_2,
        None => b_probe,
    };
    let mut curve: SensitivityCurve = sweep_with_field(Exec::default(), &mc, &grid, &field)?;
    if let (Some(f), Some(eta)) = (cfg.sweep.anchor_frequency, cfg.sweep.anchor_eta) {
        curve = anchor_scale_with_field(&curve, f, eta, field(f)).context("anchor")?;
    }
    if check {
        if curve.points.windows(2).any(|w| !(w[0].f_ac < w[1].f_ac)) {
            bail!("check failed: curve is not sorted by frequency");
        }
        if curve.points.iter().any(|p| !(p.eta_rel > 0.0)) {
            bail!("check failed: non-positive relative sensitivity");
        }
    }
    let mut meta = out.provenance().to_vec();
    meta.push(("include_repolarization".into(), mc.include_repolarization.to_string()));
    meta.push(("b_probe_t".into(), format_float(b_probe)));
    out.write(name, |f| write_curve(f, &meta, &curve))?;
    let col = if curve.scale.is_some() { 8 } else { 7 };
    out.plot_script(name, 1, col, "frequency (Hz)", "sensitivity", true)?;

    let (f_low, f_high) = frequency_limits(&mc);
    let opt = optimum_frequency(&curve)?;
    let prefix = name.trim_end_matches(".csv");
    let mut lines = vec![
        ("curve", prefix.to_string()),
        ("f_low_hz", format_float(f_low)),
        ("f_high_hz", format_float(f_high)),
        ("optimum_hz", format_float(opt.frequency)),
        ("optimum_eta_rel", format_float(opt.eta_rel)),
        ("optimum_at_boundary", opt.at_boundary.to_string()),
        ("infeasible_points", curve.boundaries.len().to_string()),
    ];
    match divergence_frequency(&curve, cfg.sweep.divergence_factor) {
        Ok(f) => lines.push(("divergence_hz", format_float(f))),
        Err(_) => lines.push(("divergence_hz", "none".into())),
    }
    if let Some(scale) = curve.scale {
        lines.push(("optimum_eta_t_per_rthz", format_float(scale * opt.eta_rel)));
    }
    if let Some(t) = &table {
        let (lo, hi) = t.range();
        if grid[0] < lo || grid[grid.len() - 1] > hi {
            eprintln!("note: field table covers {lo:e}..{hi:e} Hz; values outside are held at the ends");
        }
    }
    report(&lines);
    Ok(())
}

fn synth_times(cfg: &RunConfig, model: FitModel, points: usize) -> Vec<f64> {
    let span = match model {
        FitModel::Repolarization => 5.0 * cfg.photophysics.t_p,
        FitModel::Contrast => 3.0 * cfg.photophysics.t2,
    };
    (1..=points).map(|i| span * i as f64 / points as f64).collect()
}

fn synth(
    cfg: &RunConfig,
    out: &mut Output,
    model: FitModel,
    noise: f64,
    points: usize,
) -> Result<(Vec<(f64, f64)>, PathBuf)> {
    let times = synth_times(cfg, model, points);
    let (samples, header) = match model {
        FitModel::Repolarization => {
            let m = cfg.repol();
            let f = |t| signal_level(t, &m).expect("positive times");
            (synthetic_samples(&times, f, noise, cfg.seed)?, ["laser_s", "signal"])
        }
        FitModel::Contrast => {
            let m = cfg.contrast();
            (synthetic_samples(&times, |t| m.at_time(t), noise, cfg.seed)?, ["evolution_s", "contrast"])
        }
    };
    let rows: Vec<Vec<f64>> = samples.iter().map(|(t, y)| vec![*t, *y]).collect();
    let mut meta = out.provenance().to_vec();
    meta.push(("relative_noise".into(), format_float(noise)));
    let name = format!("{}_data.csv", model.name());
    let path = out.write(&name, |f| write_table(f, &meta, &header, &rows))?;
    out.plot_script(&name, 1, 2, "time (s)", header[1], false)?;
    report(&[("data", path.display().to_string())]);
    Ok((samples, path))
}

type ModelCurve = Box<dyn Fn(f64) -> f64>;

fn fit(cfg: &RunConfig, out: &mut Output, model: FitModel, samples: &[(f64, f64)]) -> Result<()> {
    let opts = FitOptions { seed: cfg.seed, exec: Exec::default(), fixed_p: cfg.fit.fix_p };
    let (mut lines, curve): (Vec<(&str, String)>, ModelCurve) = match model {
        FitModel::Repolarization => {
            let r = fit_repolarization(samples, &opts)?;
            let m = r.model;
            (
                vec![
                    ("s0", format_float(m.s0)),
                    ("t_p_s", format_float(m.t_p)),
                    ("residual_rms", format_float(r.residual_rms)),
                    ("iterations", r.iterations.to_string()),
                    ("converged", r.converged.to_string()),
                ],
                Box::new(move |t| signal_level(t, &m).unwrap_or(f64::NAN)),
            )
        }
        FitModel::Contrast => {
            let r = fit_contrast_decay(samples, &opts)?;
            let m = r.model;
            (
                vec![
                    ("c0", format_float(m.c0)),
                    ("t2_s", format_float(m.t2)),
                    ("p", format_float(m.p)),
                    ("p_fixed", opts.fixed_p.is_some().to_string()),
                    ("residual_rms", format_float(r.residual_rms)),
                    ("iterations", r.iterations.to_string()),
                    ("converged", r.converged.to_string()),
                ],
                Box::new(move |t| m.at_time(t)),
            )
        }
    };
    lines.insert(0, ("model", model.name().to_string()));
    let rows: Vec<Vec<f64>> = samples.iter().map(|(t, y)| vec![*t, *y, curve(*t)]).collect();
    let meta = out.provenance().to_vec();
    out.write("fit.csv", |f| write_table(f, &meta, &["x", "data", "model"], &rows))?;
    out.plot_script("fit.csv", 1, 3, "time (s)", "model", false)?;
    let text: String = lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    out.write_text("fit.txt", &text)?;
    report(&lines);
    Ok(())
}

/// Laser window left in each block versus sensing frequency.
fn laser_window(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let mc = cfg.model_config(pi_field(cfg, cfg.sequence.frequency)?);
    let rows: Vec<Vec<f64>> = default_grid(&mc, cfg.sweep.points)?
        .into_iter()
        .map(|f| vec![f, cfg.schedule.t_sr - cfg.n_pulses() as f64 / (2.0 * f) - cfg.schedule.margin])
        .collect();
    let meta = out.provenance().to_vec();
    out.write("t_laser.csv", |f| write_table(f, &meta, &["f_hz", "t_laser_s"], &rows))?;
    out.plot_script("t_laser.csv", 1, 2, "frequency (Hz)", "laser window (s)", true)?;
    Ok(())
}

fn calibrate(cfg: &RunConfig, f: f64) -> Result<()> {
    let tau_pi = cfg.sequence.tau_pi;
    let tau = tau_for_frequency(f, tau_pi)?;
    let alpha = tau_pi / tau;
    let b = pi_field(cfg, f)?;
    report(&[
        ("frequency_hz", format_float(f)),
        ("n_pulses", cfg.n_pulses().to_string()),
        ("tau_s", format_float(tau)),
        ("alpha", format_float(alpha)),
        ("wbar", format_float(normalized_weighting(alpha))),
        ("b_pi_t", format_float(b)),
        ("b_pi_rms_t", format_float(b / SQRT_2)),
    ]);
    Ok(())
}
