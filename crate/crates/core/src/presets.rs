//! Reference scenarios shared by the command-line presets and the
//! acceptance suite: XY4-(4) with 80 ns pulses in a 50 µs block.

use std::f64::consts::SQRT_2;

use crate::error::Result;
use crate::photophysics::{ContrastModel, RepolarizationModel};
use crate::qdyne::{build_schedule, simulate_trace, NoiseModel, TraceSetup};
use crate::response::{AcField, PhysicalConstants};
use crate::sequence::{make_xy4, tau_for_frequency, Axis, SequenceSpec};
use crate::spectrum::{amplitude_spectrum, find_peak};

pub const XY4_REPEATS: usize = 4;
pub const N_PULSES: usize = 4 * XY4_REPEATS;
pub const TAU_PI: f64 = 80e-9;
pub const T_SR: f64 = 50e-6;
pub const SEQUENCE_FREQUENCY: f64 = 1e6;

pub const BANDWIDTH_FIELD: f64 = 1.9e-6;
pub const BANDWIDTH_SPAN: (f64, f64) = (0.8e6, 1.2e6);
pub const BANDWIDTH_POINTS: usize = 4001;

pub const REFERENCE_FREQUENCY: f64 = 996e3;
pub const REFERENCE_FIELD_RMS: f64 = 0.3211e-6;
pub const N_BLOCKS: usize = 20_000;
/// Sensitivity the reference-field scenario is calibrated to, T/√Hz.
pub const TARGET_ETA: f64 = 229e-12;

pub const WEIGHTING_ALPHA_MAX: f64 = 2.0;
pub const WEIGHTING_POINTS: usize = 201;

/// XY4-(4) commensurate with `f`, read out along `axis`.
pub fn xy4_sequence(f: f64, axis: Axis) -> Result<SequenceSpec> {
    make_xy4(XY4_REPEATS, tau_for_frequency(f, TAU_PI)?, TAU_PI, axis)
}

pub fn bandwidth_grid() -> Vec<f64> {
    let (lo, hi) = BANDWIDTH_SPAN;
    let last = (BANDWIDTH_POINTS - 1) as f64;
    (0..BANDWIDTH_POINTS).map(|i| lo + (hi - lo) * i as f64 / last).collect()
}

pub fn weighting_alphas() -> Vec<f64> {
    let last = (WEIGHTING_POINTS - 1) as f64;
    (0..WEIGHTING_POINTS).map(|i| WEIGHTING_ALPHA_MAX * i as f64 / last).collect()
}

/// The detuned reference field threading a 1 MHz sequence, without noise.
pub fn reference_setup() -> Result<TraceSetup> {
    let seq = xy4_sequence(SEQUENCE_FREQUENCY, Axis::Y)?;
    Ok(TraceSetup {
        schedule: build_schedule(&seq, T_SR, 0.0)?,
        field: AcField::new(REFERENCE_FIELD_RMS * SQRT_2, REFERENCE_FREQUENCY, 0.0)?,
        repol: RepolarizationModel::default(),
        contrast: ContrastModel::default(),
        noise: NoiseModel::default(),
        consts: PhysicalConstants::default(),
        detuning_attenuation: true,
    })
}

/// White-noise level that puts the sensitivity estimate of `setup` at
/// `eta` over `n_blocks` blocks.
///
/// The floor of white noise is `2 sigma / sqrt(n)` in amplitude units and
/// `eta = b_rms * floor / peak * sqrt(n t_sr)`, with the peak taken from
/// the noiseless trace.
pub fn calibrated_sigma(setup: &TraceSetup, n_blocks: usize, b_rms: f64, eta: f64) -> Result<f64> {
    let quiet = TraceSetup { noise: NoiseModel::default(), ..setup.clone() };
    let spec = amplitude_spectrum(&simulate_trace(&quiet, n_blocks, 0)?)?;
    let (_, peak) = find_peak(&spec, 2)?;
    let n = n_blocks as f64;
    let t_meas = n * setup.schedule.t_sr();
    Ok(eta * peak * n.sqrt() / (2.0 * b_rms * t_meas.sqrt()))
}

/// [`reference_setup`] with the noise calibrated to [`TARGET_ETA`].
pub fn calibrated_reference_setup() -> Result<TraceSetup> {
    let mut setup = reference_setup()?;
    let sigma = calibrated_sigma(&setup, N_BLOCKS, REFERENCE_FIELD_RMS, TARGET_ETA)?;
    setup.noise = NoiseModel::new(sigma)?;
    Ok(setup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::estimate_sensitivity;

    #[test]
    fn calibrated_reference_lands_near_target() {
        let setup = calibrated_reference_setup().unwrap();
        let trace = simulate_trace(&setup, N_BLOCKS, 3).unwrap();
        let spec = amplitude_spectrum(&trace).unwrap();
        let r = estimate_sensitivity(&spec, REFERENCE_FIELD_RMS, trace.duration(), &[]).unwrap();
        assert!((r.peak_frequency - 4e3).abs() <= spec.bin_width);
        assert!((r.eta / TARGET_ETA - 1.0).abs() < 0.05, "{:e}", r.eta);
    }

    #[test]
    fn grids() {
        let a = weighting_alphas();
        assert_eq!(a[0], 0.0);
        assert_eq!(a[19], 0.19);
        assert_eq!(*a.last().unwrap(), 2.0);
        let g = bandwidth_grid();
        assert_eq!(g[2000], 1e6);
    }
}
