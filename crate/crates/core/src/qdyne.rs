//! Sequential readout: a dynamical-decoupling block followed by an optical
//! readout/repolarization window, repeated every dwell time `t_sr`.
//!
//! The AC field keeps its phase across blocks, so block `i` starts at field
//! phase `2 pi f_ac i t_sr + phi0` and the per-block readout traces an
//! undersampled copy of the field at the down-converted frequency.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::photophysics::{contrast, signal_level, ContrastModel, RepolarizationModel};
use crate::response::{weighting, AcField, PhysicalConstants};
use crate::sequence::{Axis, SequenceSpec};

/// One sequential-readout unit block.
#[derive(Debug, Clone, PartialEq)]
pub struct SrSchedule {
    t_sr: f64,
    seq: SequenceSpec,
    t_laser: f64,
    margin: f64,
}

impl SrSchedule {
    pub fn t_sr(&self) -> f64 {
        self.t_sr
    }

    pub fn seq(&self) -> &SequenceSpec {
        &self.seq
    }

    pub fn t_laser(&self) -> f64 {
        self.t_laser
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn tau_sens(&self) -> f64 {
        self.seq.tau_sens()
    }

    /// Everything in the block that is not sensing: laser window plus margin.
    pub fn delta(&self) -> f64 {
        self.t_sr - self.seq.tau_sens()
    }

    /// Sampling rate of the readout trace.
    pub fn f_sr(&self) -> f64 {
        1.0 / self.t_sr
    }
}

/// Fits the sequence into a block of length `t_sr`; the laser window takes
/// whatever the sequence and the fixed margin leave over.
pub fn build_schedule(seq: &SequenceSpec, t_sr: f64, margin: f64) -> Result<SrSchedule> {
    if !(margin.is_finite() && margin >= 0.0) {
        return Err(Error::InvalidTiming(format!("margin must be non-negative, got {margin:e} s")));
    }
    let min_dwell = seq.tau_sens() + margin;
    if !(t_sr.is_finite() && t_sr > 0.0) {
        return Err(Error::InfeasibleSchedule {
            reason: format!("dwell time must be positive, got {t_sr:e} s"),
            min_dwell,
        });
    }
    let t_laser = t_sr - seq.tau_sens() - margin;
    if t_laser <= 1e-12 * t_sr {
        return Err(Error::InfeasibleSchedule {
            reason: format!("dwell {t_sr:e} s leaves no time for the laser pulse"),
            min_dwell,
        });
    }
    Ok(SrSchedule { t_sr, seq: seq.clone(), t_laser, margin })
}

/// Signed alias of `f_ac` under sampling at `1/t_sr`,
/// `f_ac - n f_SR` with `n` the nearest multiple (ties to the smaller `n`).
pub fn downconverted_frequency(f_ac: f64, t_sr: f64) -> f64 {
    let f_sr = 1.0 / t_sr;
    let n = (f_ac * t_sr - 0.5).ceil();
    f_ac - n * f_sr
}

/// Field phase at the start of block `i`, reduced to `[0, 2 pi)`.
pub fn block_phase(i: u64, f_ac: f64, sched: &SrSchedule, phi0: f64) -> f64 {
    let cycles = (f_ac * sched.t_sr).rem_euclid(1.0);
    let frac = (cycles * i as f64).rem_euclid(1.0);
    (TAU * frac + phi0).rem_euclid(TAU)
}

/// White Gaussian readout noise per block.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseModel {
    pub sigma: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidInput(format!("noise sigma must be non-negative, got {sigma}")));
        }
        Ok(Self { sigma })
    }
}

/// The undersampled readout series.
#[derive(Debug, Clone, PartialEq)]
pub struct SrTrace {
    pub dwell: f64,
    pub samples: Vec<f64>,
    pub seed: u64,
    /// Generating parameters as ordered `key = value` pairs.
    pub meta: Vec<(String, String)>,
}

impl SrTrace {
    pub fn new(dwell: f64, samples: Vec<f64>, seed: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("trace has no samples".into()));
        }
        if !(dwell.is_finite() && dwell > 0.0) {
            return Err(Error::InvalidInput(format!("dwell must be positive, got {dwell:e}")));
        }
        Ok(Self { dwell, samples, seed, meta: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dwell
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.dwell
    }
}

/// Everything that determines a synthetic trace apart from its length and
/// seed.
#[derive(Debug, Clone)]
pub struct TraceSetup {
    pub schedule: SrSchedule,
    pub field: AcField,
    pub repol: RepolarizationModel,
    pub contrast: ContrastModel,
    pub noise: NoiseModel,
    pub consts: PhysicalConstants,
    /// Evaluate each block at the actual field frequency instead of the
    /// sequence's commensurate one, so detuning attenuates the signal.
    pub detuning_attenuation: bool,
}

impl TraceSetup {
    /// `S(t_laser) * C(N, tau)`.
    pub fn signal_scale(&self) -> f64 {
        let seq = self.schedule.seq();
        let s = signal_level(self.schedule.t_laser(), &self.repol).unwrap_or(0.0);
        s * contrast(seq.n_pulses(), seq.tau(), &self.contrast)
    }

    /// On-resonance accumulated phase for a field starting at phase 0.
    pub fn phi_max(&self) -> f64 {
        let seq = self.schedule.seq();
        self.consts.gamma_e
            * self.field.amplitude
            * seq.tau_sens()
            * weighting(seq.alpha(), FRAC_PI_2, 0.0, seq.n_pulses())
    }

    /// Noiseless readout of block `i`.
    pub fn block_value(&self, i: u64) -> f64 {
        let seq = self.schedule.seq();
        let phase = block_phase(i, self.field.frequency, &self.schedule, self.field.phase);
        let phi = if self.detuning_attenuation {
            let beta = PI * self.field.frequency * seq.period();
            self.consts.gamma_e
                * self.field.amplitude
                * seq.tau_sens()
                * weighting(seq.alpha(), beta, phase, seq.n_pulses())
        } else {
            self.phi_max() * phase.cos()
        };
        let g = match seq.readout_axis() {
            Axis::X => phi.cos(),
            Axis::Y => phi.sin(),
        };
        self.signal_scale() * g
    }

    fn meta(&self, n_blocks: usize) -> Vec<(String, String)> {
        let seq = self.schedule.seq();
        [
            ("f_ac_hz", self.field.frequency.to_string()),
            ("b_ac_t", self.field.amplitude.to_string()),
            ("phi_ac_rad", self.field.phase.to_string()),
            ("n_pulses", seq.n_pulses().to_string()),
            ("tau_s", seq.tau().to_string()),
            ("tau_pi_s", seq.tau_pi().to_string()),
            ("readout", seq.readout_axis().to_string()),
            ("t_sr_s", self.schedule.t_sr().to_string()),
            ("t_laser_s", self.schedule.t_laser().to_string()),
            ("margin_s", self.schedule.margin().to_string()),
            ("sigma", self.noise.sigma.to_string()),
            ("n_blocks", n_blocks.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Generates `n_blocks` readout samples, index-ordered, with noise drawn
/// from a ChaCha20 stream seeded by `seed`.
pub fn simulate_trace(setup: &TraceSetup, n_blocks: usize, seed: u64) -> Result<SrTrace> {
    if n_blocks == 0 {
        return Err(Error::InvalidInput("at least one block is required".into()));
    }
    let noise = Normal::new(0.0, setup.noise.sigma)
        .map_err(|e| Error::InvalidInput(format!("noise model: {e}")))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let samples = (0..n_blocks as u64)
        .map(|i| setup.block_value(i) + noise.sample(&mut rng))
        .collect();
    let mut trace = SrTrace::new(setup.schedule.t_sr(), samples, seed)?;
    trace.meta = setup.meta(n_blocks);
    Ok(trace)
}
