//! Spin-phase response of a dynamical-decoupling block to an AC field.
//!
//! For a field `B(t) = B_ac cos(2 pi f t + phi)` the phase accumulated over
//! the block is `gamma B_ac N tau (1 + alpha) W(alpha, beta, phi)` with
//! `beta = pi f tau (1 + alpha)`. For an even number of pulses
//!
//! ```text
//! W = sin(N beta)/(N beta) * [1 - cos(beta a)/cos(beta)] * cos(N beta + phi),
//! a = alpha / (1 + alpha)
//! ```
//!
//! which is exact when no phase accrues during the pulses. An odd pulse
//! count swaps the roles of the sine and cosine factors (see [`weighting`]).

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::sequence::{modulation_function_with, Axis, PulseShape, SegmentKind, SequenceSpec};

/// Electron-spin gyromagnetic ratio of the NV center, `2 pi * 28.024 GHz/T`.
pub const GAMMA_NV: f64 = 2.0 * PI * 28.024e9;

/// `|cos beta|` below which the weighting is evaluated in its
/// singularity-free form.
const SINGULAR_COS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// rad s^-1 T^-1
    pub gamma_e: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self { gamma_e: GAMMA_NV }
    }
}

impl PhysicalConstants {
    pub fn new(gamma_e: f64) -> Result<Self> {
        if !(gamma_e.is_finite() && gamma_e > 0.0) {
            return Err(Error::InvalidInput(format!(
                "gyromagnetic ratio must be positive, got {gamma_e:e}"
            )));
        }
        Ok(Self { gamma_e })
    }
}

/// `B(t) = amplitude * cos(2 pi frequency t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcField {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl AcField {
    pub fn new(amplitude: f64, frequency: f64, phase: f64) -> Result<Self> {
        if !(amplitude.is_finite() && amplitude >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "field amplitude must be non-negative, got {amplitude:e} T"
            )));
        }
        if !(frequency.is_finite() && frequency > 0.0) {
            return Err(Error::InvalidInput(format!(
                "field frequency must be positive, got {frequency:e} Hz"
            )));
        }
        if !phase.is_finite() {
            return Err(Error::InvalidInput("field phase must be finite".into()));
        }
        Ok(Self {
            amplitude,
            frequency,
            phase,
        })
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// `sin(N d) / sin(d)`, equal to `N` at `d = 0`.
fn dirichlet(n: f64, d: f64) -> f64 {
    let s = d.sin();
    if s.abs() < 1e-300 {
        n
    } else {
        (n * d).sin() / s
    }
}

fn parity_sign(k: i64) -> f64 {
    if k.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Finite-pulse weighting function `W(alpha, beta, phi)` for `n_pulses`
/// pulses.
///
/// The removable singularities at `cos(beta) = 0` are evaluated through
/// `sin(N d)/sin(d)` with `d` the offset from the nearest odd multiple of
/// `pi/2`; at `beta = pi/2` and even `N` this gives
/// `(2/pi) cos((pi/2) a) cos(phi)`.
pub fn weighting(alpha: f64, beta: f64, phi: f64, n_pulses: usize) -> f64 {
    let n = n_pulses as f64;
    let a = if alpha.is_infinite() { 1.0 } else { alpha / (1.0 + alpha) };
    let even = n_pulses.is_multiple_of(2);
    // cos(beta) - cos(beta a), written without cancellation.
    let diff = -2.0 * (0.5 * beta * (1.0 + a)).sin() * (0.5 * beta * (1.0 - a)).sin();
    let cos_b = beta.cos();

    if cos_b.abs() < SINGULAR_COS {
        let m = (beta / PI - 0.5).round();
        let d = beta - (m + 0.5) * PI;
        let m = m as i64;
        let ratio = if even {
            // sin(N beta) / cos(beta)
            -parity_sign(m + (n_pulses / 2) as i64) * dirichlet(n, d)
        } else {
            // -cos(N beta) / cos(beta)
            -parity_sign(((n_pulses - 1) / 2) as i64) * dirichlet(n, d)
        };
        let tail = if even {
            (n * beta + phi).cos()
        } else {
            (n * beta + phi).sin()
        };
        return ratio * diff / (n * beta) * tail;
    }

    if even {
        sinc(n * beta) * (diff / cos_b) * (n * beta + phi).cos()
    } else {
        let diff_over_nb = if beta == 0.0 { 0.0 } else { diff / (n * beta) };
        -((n * beta).cos() / cos_b) * diff_over_nb * (n * beta + phi).sin()
    }
}

/// On-resonance weighting normalised to ideal pulses,
/// `W̄(alpha) = (pi/2) W(alpha, pi/2, 0) = cos((pi/2) alpha / (1 + alpha))`.
pub fn normalized_weighting(alpha: f64) -> f64 {
    let a = if alpha.is_infinite() { 1.0 } else { alpha / (1.0 + alpha) };
    (FRAC_PI_2 * a).cos()
}

/// Phase accumulated by the spin over the whole block.
pub fn accumulated_phase(seq: &SequenceSpec, field: &AcField, consts: &PhysicalConstants) -> f64 {
    let period = seq.period();
    let beta = PI * field.frequency * period;
    consts.gamma_e
        * field.amplitude
        * seq.tau_sens()
        * weighting(seq.alpha(), beta, field.phase, seq.n_pulses())
}

/// Readout versus AC frequency at fixed sequence timing.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthProfile {
    pub readout: Axis,
    pub center: f64,
    /// `(frequency, readout value)` pairs in grid order.
    pub points: Vec<(f64, f64)>,
}

impl BandwidthProfile {
    /// Off-resonance readout level: `cos 0 = 1` for X, `sin 0 = 0` for Y.
    pub fn baseline(&self) -> f64 {
        match self.readout {
            Axis::X => 1.0,
            Axis::Y => 0.0,
        }
    }
}

pub fn bandwidth_profile(
    seq: &SequenceSpec,
    b_ac: f64,
    f0: f64,
    f_grid: &[f64],
    consts: &PhysicalConstants,
) -> Result<BandwidthProfile> {
    bandwidth_profile_with(Exec::default(), seq, b_ac, f0, f_grid, consts)
}

pub fn bandwidth_profile_with(
    exec: Exec,
    seq: &SequenceSpec,
    b_ac: f64,
    f0: f64,
    f_grid: &[f64],
    consts: &PhysicalConstants,
) -> Result<BandwidthProfile> {
    let fc = seq.commensurate_frequency();
    if !(f0 > 0.0) || ((f0 - fc) / fc).abs() > 1e-9 {
        return Err(Error::InconsistentConfiguration(format!(
            "center frequency {f0:e} Hz does not match the sequence timing ({fc:e} Hz)"
        )));
    }
    if let Some(f) = f_grid.iter().find(|f| !(f.is_finite() && **f > 0.0)) {
        return Err(Error::InvalidInput(format!("grid frequency {f:e} Hz is not positive")));
    }
    let scale = consts.gamma_e * b_ac * seq.tau_sens();
    let (alpha, n) = (seq.alpha(), seq.n_pulses());
    let readout = seq.readout_axis();
    let points = exec.map(f_grid, |&f| {
        let phi = scale * weighting(alpha, FRAC_PI_2 * f / f0, 0.0, n);
        let v = match readout {
            Axis::X => phi.cos(),
            Axis::Y => phi.sin(),
        };
        (f, v)
    });
    Ok(BandwidthProfile {
        readout,
        center: f0,
        points,
    })
}

/// Full width of the dominant feature at half its depth below (or height
/// above) the off-resonance baseline, linearly interpolated between grid
/// points.
pub fn fwhm_bandwidth(profile: &BandwidthProfile) -> Result<f64> {
    let base = profile.baseline();
    let dev: Vec<f64> = profile.points.iter().map(|p| (p.1 - base).abs()).collect();
    let (imax, &dmax) = dev
        .iter()
        .enumerate()
        .fold((0, &0.0), |acc, (i, d)| if *d > *acc.1 { (i, d) } else { acc });
    if dmax <= 1e-12 {
        return Err(Error::NoFeature("profile is flat".into()));
    }
    let half = 0.5 * dmax;
    let freq = |i: usize| profile.points[i].0;
    let cross = |i: usize, j: usize| {
        // interpolate between i (inside, dev > half) and j (outside)
        let t = (dev[i] - half) / (dev[i] - dev[j]);
        freq(i) + t * (freq(j) - freq(i))
    };

    let left = (1..=imax)
        .rev()
        .find(|&i| dev[i - 1] <= half)
        .map(|i| cross(i, i - 1));
    let right = (imax..dev.len() - 1)
        .find(|&i| dev[i + 1] <= half)
        .map(|i| cross(i, i + 1));
    match (left, right) {
        (Some(l), Some(r)) => Ok(r - l),
        _ => Err(Error::NoFeature(
            "feature is not resolved within the frequency grid".into(),
        )),
    }
}

/// Field amplitude giving a π phase on resonance,
/// `B(pi) = pi^2 f / (gamma N W̄(alpha))`.
pub fn calibration_field_pi(
    f_ac: f64,
    n_pulses: usize,
    alpha: f64,
    consts: &PhysicalConstants,
) -> Result<f64> {
    if !(f_ac.is_finite() && f_ac > 0.0) || n_pulses == 0 {
        return Err(Error::InvalidInput(
            "calibration needs a positive frequency and at least one pulse".into(),
        ));
    }
    let wbar = normalized_weighting(alpha);
    if wbar <= 1e-12 {
        return Err(Error::DegenerateSequence(format!(
            "normalised weighting vanishes at alpha = {alpha}"
        )));
    }
    Ok(PI * PI * f_ac / (consts.gamma_e * n_pulses as f64 * wbar))
}

/// Accumulated phase by direct quadrature of `gamma y(t) B(t)` over the
/// modulation function, using the gated pulse convention.
pub fn numerical_phase_oracle(
    seq: &SequenceSpec,
    field: &AcField,
    consts: &PhysicalConstants,
    dt: f64,
) -> Result<f64> {
    numerical_phase_oracle_with(seq, field, consts, dt, PulseShape::Gated)
}

/// Composite Simpson on every smooth piece of `y(t)`, with nodes landing
/// exactly on the pulse edges.
pub fn numerical_phase_oracle_with(
    seq: &SequenceSpec,
    field: &AcField,
    consts: &PhysicalConstants,
    dt: f64,
    shape: PulseShape,
) -> Result<f64> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Precision(format!("step must be positive, got {dt:e}")));
    }
    if seq.tau_pi() > 0.0 && dt > seq.tau_pi() / 50.0 {
        return Err(Error::Precision(format!(
            "step {dt:e} s exceeds tau_pi/50 = {:e} s",
            seq.tau_pi() / 50.0
        )));
    }
    if dt > 1.0 / (200.0 * field.frequency) {
        return Err(Error::Precision(format!(
            "step {dt:e} s exceeds 1/(200 f) = {:e} s",
            1.0 / (200.0 * field.frequency)
        )));
    }
    let w = 2.0 * PI * field.frequency;
    let m = modulation_function_with(seq, shape);
    let mut total = 0.0;
    for seg in m.segments() {
        let len = seg.duration();
        if len <= 0.0 || matches!(seg.kind, SegmentKind::Gated { .. }) {
            continue;
        }
        let mut n = (len / dt).ceil() as usize;
        n = n.max(2);
        if n % 2 == 1 {
            n += 1;
        }
        let h = len / n as f64;
        let g = |t: f64| seg.value(t) * (w * t + field.phase).cos();
        let mut acc = g(seg.start) + g(seg.end);
        for k in 1..n {
            let t = seg.start + k as f64 * h;
            acc += if k % 2 == 1 { 4.0 } else { 2.0 } * g(t);
        }
        total += acc * h / 3.0;
    }
    Ok(consts.gamma_e * field.amplitude * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::{make_xy4, tau_for_frequency};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn reference_seq() -> SequenceSpec {
        make_xy4(4, 420e-9, 80e-9, Axis::X).unwrap()
    }

    #[test]
    fn weighting_on_resonance_matches_normalised_value() {
        let w = weighting(80.0 / 420.0, FRAC_PI_2, 0.0, 16);
        assert!((w - 2.0 / PI * 0.968).abs() < 1e-3 * 2.0 / PI);
        assert_relative_eq!(w, 2.0 / PI * normalized_weighting(80.0 / 420.0), max_relative = 1e-12);
        assert_relative_eq!(weighting(0.0, FRAC_PI_2, 0.0, 4), 2.0 / PI, max_relative = 1e-12);
        assert_relative_eq!(weighting(0.0, FRAC_PI_2, 0.0, 16), 2.0 / PI, max_relative = 1e-12);
    }

    #[test]
    fn weighting_off_resonance_matches_oracle() {
        // (alpha=0.5, beta=0.9 pi/2, phi=0.3, N=16)
        let (alpha, beta, phi) = (0.5, 0.9 * FRAC_PI_2, 0.3);
        let tau = 1e-6;
        let seq = make_xy4(4, tau, alpha * tau, Axis::X).unwrap();
        let f = beta / (PI * seq.period());
        let field = AcField::new(1e-6, f, phi).unwrap();
        let c = PhysicalConstants::default();
        let dt = (seq.tau_pi() / 50.0).min(1.0 / (2000.0 * f));
        let oracle = numerical_phase_oracle(&seq, &field, &c, dt).unwrap()
            / (c.gamma_e * field.amplitude * seq.tau_sens());
        let closed = weighting(alpha, beta, phi, 16);
        assert!((oracle - closed).abs() <= 1e-6 * oracle.abs().max(1e-3));
    }

    #[test]
    fn weighting_is_zero_at_zero_beta() {
        for n in [1, 2, 3, 16] {
            assert_eq!(weighting(0.3, 0.0, 0.4, n), 0.0);
        }
    }

    #[test]
    fn odd_pulse_count_matches_oracle() {
        let c = PhysicalConstants::default();
        for n in [1usize, 3, 5] {
            for (alpha, beta, phi) in [(0.0, 1.0, 0.7), (0.19, 1.5, 2.0), (0.5, FRAC_PI_2, 0.3)] {
                let tau = 1e-6;
                let seq = SequenceSpec::new(tau, alpha * tau, vec![Axis::X; n], Axis::X).unwrap();
                let f = beta / (PI * seq.period());
                let field = AcField::new(1e-6, f, phi).unwrap();
                let dt = if alpha > 0.0 { (alpha * tau / 50.0).min(1.0 / (2000.0 * f)) } else { 1.0 / (2000.0 * f) };
                let o = numerical_phase_oracle(&seq, &field, &c, dt).unwrap()
                    / (c.gamma_e * 1e-6 * seq.tau_sens());
                let w = weighting(alpha, beta, phi, n);
                assert!((o - w).abs() <= 1e-7, "n={n} {o} {w}");
            }
        }
    }

    #[test]
    fn normalised_weighting_examples() {
        assert_eq!(normalized_weighting(0.0), 1.0);
        assert!((normalized_weighting(0.19) - 0.968).abs() < 1e-3);
        assert!(normalized_weighting(0.2) >= 0.96);
        assert!(normalized_weighting(1e12) < 1e-11);
    }

    #[test]
    fn phase_examples() {
        let c = PhysicalConstants::default();
        let seq = reference_seq();
        let zero = AcField::new(0.0, 1e6, 0.0).unwrap();
        assert_eq!(accumulated_phase(&seq, &zero, &c), 0.0);

        // gamma N B Wbar / (pi f)
        let b = 1.9e-6;
        let field = AcField::new(b, 1e6, 0.0).unwrap();
        let expect = c.gamma_e * 16.0 * b * normalized_weighting(seq.alpha()) / (PI * 1e6);
        let phi = accumulated_phase(&seq, &field, &c);
        assert_relative_eq!(phi, expect, max_relative = 1e-12);
        assert!((phi - 1.65).abs() < 0.01);

        let bpi = calibration_field_pi(1e6, 16, seq.alpha(), &c).unwrap();
        let at_pi = accumulated_phase(&seq, &AcField::new(bpi, 1e6, 0.0).unwrap(), &c);
        assert_relative_eq!(at_pi, PI, max_relative = 1e-12);
    }

    #[test]
    fn calibration_field_examples() {
        let c = PhysicalConstants::default();
        let b = calibration_field_pi(1e6, 16, 0.19, &c).unwrap();
        assert!((b - 3.62e-6).abs() < 0.01e-6, "{b}");
        assert_relative_eq!(
            calibration_field_pi(1e6, 32, 0.19, &c).unwrap(),
            b / 2.0,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            calibration_field_pi(2e6, 16, 0.19, &c).unwrap(),
            2.0 * b,
            max_relative = 1e-14
        );
        assert!(matches!(
            calibration_field_pi(1e6, 16, f64::INFINITY, &c),
            Err(Error::DegenerateSequence(_))
        ));
    }

    #[test]
    fn oracle_ideal_pulse_cpmg() {
        let c = PhysicalConstants::default();
        let tau = tau_for_frequency(1e6, 0.0).unwrap();
        let seq = make_xy4(4, tau, 0.0, Axis::X).unwrap();
        let field = AcField::new(1e-6, 1e6, 0.0).unwrap();
        let o = numerical_phase_oracle(&seq, &field, &c, 1e-9).unwrap();
        assert_relative_eq!(o, c.gamma_e * 1e-6 * 16.0 * tau * 2.0 / PI, max_relative = 1e-9);
        let zero = AcField::new(0.0, 1e6, 0.0).unwrap();
        assert_eq!(numerical_phase_oracle(&seq, &zero, &c, 1e-9).unwrap(), 0.0);
    }

    #[test]
    fn oracle_rejects_coarse_steps() {
        let c = PhysicalConstants::default();
        let seq = reference_seq();
        let field = AcField::new(1e-6, 1e6, 0.0).unwrap();
        assert!(matches!(
            numerical_phase_oracle(&seq, &field, &c, 2e-9),
            Err(Error::Precision(_))
        ));
        let ideal = make_xy4(4, 500e-9, 0.0, Axis::X).unwrap();
        assert!(matches!(
            numerical_phase_oracle(&ideal, &field, &c, 6e-9),
            Err(Error::Precision(_))
        ));
    }

    #[test]
    fn cosine_rotation_accrues_more_phase_than_gated() {
        let c = PhysicalConstants::default();
        let seq = reference_seq();
        let field = AcField::new(1e-6, 1e6, 0.0).unwrap();
        let g = numerical_phase_oracle_with(&seq, &field, &c, 1e-9, PulseShape::Gated).unwrap();
        let r = numerical_phase_oracle_with(&seq, &field, &c, 1e-9, PulseShape::CosineRotation)
            .unwrap();
        assert!(r > g);
    }

    #[test]
    fn profile_dip_and_wings() {
        let c = PhysicalConstants::default();
        let seq = reference_seq();
        let grid: Vec<f64> = (0..=400).map(|i| 0.8e6 + i as f64 * 1e3).collect();
        let p = bandwidth_profile(&seq, 1.9e-6, 1e6, &grid, &c).unwrap();
        let at_f0 = p.points.iter().find(|(f, _)| *f == 1e6).unwrap().1;
        let min = p.points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        assert!(at_f0 - min < 0.01);
        let far = bandwidth_profile(&seq, 1.9e-6, 1e6, &[1.31e6], &c).unwrap();
        assert!(far.points[0].1 > 0.99);

        let bad = bandwidth_profile(&seq, 1.9e-6, 1.01e6, &grid, &c);
        assert!(matches!(bad, Err(Error::InconsistentConfiguration(_))));
    }

    #[test]
    fn fwhm_of_analytic_gaussian_phase_dip() {
        // cos(Phi) with Phi(f) = P exp(-(f-f0)^2 / (2 s^2)); the half-depth
        // level 1 - (1 - cos P)/2 is reached where cos(Phi) = (1 + cos P)/2.
        let (p0, s, f0) = (1.2f64, 10e3, 1e6);
        let phi_half = ((1.0 + p0.cos()) / 2.0).acos();
        let expect = 2.0 * s * (2.0 * (p0 / phi_half).ln()).sqrt();
        let points = (0..=20000)
            .map(|i| {
                let f = f0 - 100e3 + i as f64 * 10.0;
                let phi = p0 * (-(f - f0).powi(2) / (2.0 * s * s)).exp();
                (f, phi.cos())
            })
            .collect();
        let prof = BandwidthProfile { readout: Axis::X, center: f0, points };
        let w = fwhm_bandwidth(&prof).unwrap();
        assert!((w - expect).abs() < 1.0, "{w} vs {expect}");
    }

    #[test]
    fn fwhm_flat_profile_is_an_error() {
        let prof = BandwidthProfile {
            readout: Axis::X,
            center: 1e6,
            points: (0..10).map(|i| (i as f64, 1.0)).collect(),
        };
        assert!(matches!(fwhm_bandwidth(&prof), Err(Error::NoFeature(_))));
    }

    proptest! {
        #[test]
        fn singularity_limit(alpha in 0.0f64..2.0, phi in 0.0f64..6.3, k in 1usize..8, sgn in prop::bool::ANY) {
            let n = 2 * k;
            let d = if sgn { 1e-8 } else { -1e-8 };
            let w = weighting(alpha, FRAC_PI_2 + d, phi, n);
            let limit = 2.0 / PI * normalized_weighting(alpha) * phi.cos();
            prop_assert!((w - limit).abs() < 1e-6);
        }

        #[test]
        fn normalised_weighting_decreasing(a in 0.0f64..50.0, da in 1e-6f64..5.0) {
            prop_assert!(normalized_weighting(a + da) < normalized_weighting(a));
        }

        #[test]
        fn phase_linear_in_amplitude(b in 0.0f64..1e-5, s in 0.0f64..10.0, f in 2e5f64..6e6) {
            let c = PhysicalConstants::default();
            let seq = reference_seq();
            let p1 = accumulated_phase(&seq, &AcField::new(b, f, 0.2).unwrap(), &c);
            let p2 = accumulated_phase(&seq, &AcField::new(s * b, f, 0.2).unwrap(), &c);
            prop_assert!((p2 - s * p1).abs() <= 1e-12 * p2.abs().max(1e-300) + 1e-300);
        }

        #[test]
        fn phase_follows_cos_n_beta_plus_phi(phi in 0.0f64..6.3, f in 5e5f64..2e6) {
            let c = PhysicalConstants::default();
            let seq = reference_seq();
            let beta = PI * f * seq.period();
            let p0 = accumulated_phase(&seq, &AcField::new(1e-6, f, 0.0).unwrap(), &c);
            let p = accumulated_phase(&seq, &AcField::new(1e-6, f, phi).unwrap(), &c);
            let n = 16.0;
            let c0 = (n * beta).cos();
            prop_assume!(c0.abs() > 1e-3);
            prop_assert!((p - p0 * (n * beta + phi).cos() / c0).abs() <= 1e-9 * p0.abs() / c0.abs());
        }
    }
}
