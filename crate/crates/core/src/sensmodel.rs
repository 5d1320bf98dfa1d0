//! Frequency dependence of the sequential-readout sensitivity,
//!
//! `eta(f) ∝ 1 / (S(T_laser) C(N tau) |Phi(f)|) * sqrt(T_SR / tau_sens)`,
//!
//! with every timing fixed by the commensurate condition at `f`. Values are
//! relative until a curve is anchored to one measured point.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::photophysics::{contrast, signal_level, ContrastModel, RepolarizationModel};
use crate::qdyne::build_schedule;
use crate::response::{calibration_field_pi, weighting, PhysicalConstants};
use crate::sequence::{tau_for_frequency, Axis, SequenceSpec};

/// Lowest frequency swept when the repolarization limit is switched off.
pub const UNCONSTRAINED_FLOOR_HZ: f64 = 1e3;

pub const DEFAULT_GRID_POINTS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub t_sr: f64,
    pub margin: f64,
    pub n_pulses: usize,
    pub tau_pi: f64,
    pub repol: RepolarizationModel,
    pub contr: ContrastModel,
    /// Field amplitude used to form the accumulated phase.
    pub b_probe: f64,
    pub include_repolarization: bool,
    pub consts: PhysicalConstants,
}

impl Default for ModelConfig {
    /// XY4-(4) with 80 ns pulses in a 50 µs block, probed with the π field
    /// at 1 MHz.
    fn default() -> Self {
        let consts = PhysicalConstants::default();
        let tau_pi = 80e-9;
        let f_ref = 1e6;
        let alpha = tau_pi / (0.5 / f_ref - tau_pi);
        let b_probe = calibration_field_pi(f_ref, 16, alpha, &consts)
            .expect("reference calibration is well defined");
        Self {
            t_sr: 50e-6,
            margin: 0.0,
            n_pulses: 16,
            tau_pi,
            repol: RepolarizationModel::default(),
            contr: ContrastModel::default(),
            b_probe,
            include_repolarization: true,
            consts,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin >= 0.0 && self.t_sr > self.margin) {
            return Err(Error::Configuration(format!(
                "need t_sr > margin >= 0 (t_sr = {:e} s, margin = {:e} s)",
                self.t_sr, self.margin
            )));
        }
        if !(self.b_probe.is_finite() && self.b_probe > 0.0) {
            return Err(Error::Configuration(format!(
                "probe field must be positive, got {:e} T",
                self.b_probe
            )));
        }
        if self.n_pulses == 0 {
            return Err(Error::Configuration("at least one pi pulse is required".into()));
        }
        if !(self.tau_pi.is_finite() && self.tau_pi >= 0.0) {
            return Err(Error::Configuration(format!(
                "pulse width must be non-negative, got {:e} s",
                self.tau_pi
            )));
        }
        Ok(())
    }

    /// XY-alternating train at the commensurate spacing for `f_ac`.
    fn sequence(&self, f_ac: f64) -> Result<SequenceSpec> {
        let tau = tau_for_frequency(f_ac, self.tau_pi)?;
        let phases = [Axis::X, Axis::Y].iter().copied().cycle().take(self.n_pulses).collect();
        SequenceSpec::new(tau, self.tau_pi, phases, Axis::Y)
    }
}

/// One evaluated frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub f_ac: f64,
    pub tau: f64,
    /// Laser window left in the block; zero where the sequence alone
    /// overruns the block and repolarization is ignored.
    pub t_laser: f64,
    pub s_value: f64,
    pub c_value: f64,
    pub phi: f64,
    pub eta_rel: f64,
}

/// A grid frequency that fell outside the feasible range.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMarker {
    pub f_ac: f64,
    pub bound: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityCurve {
    pub points: Vec<CurvePoint>,
    pub boundaries: Vec<BoundaryMarker>,
    /// Tesla·√s per relative unit once anchored.
    pub scale: Option<f64>,
    pub config: ModelConfig,
}

impl SensitivityCurve {
    pub fn eta_abs(&self, point: &CurvePoint) -> Option<f64> {
        self.scale.map(|s| s * point.eta_rel)
    }
}

fn out_of_range(f_ac: f64, bound: String) -> Error {
    Error::FrequencyOutOfRange { frequency: f_ac, bound }
}

/// Evaluates one point with an explicit probe amplitude.
pub fn evaluate_point_with_field(f_ac: f64, cfg: &ModelConfig, b: f64) -> Result<CurvePoint> {
    cfg.validate()?;
    if !(b.is_finite() && b > 0.0) {
        return Err(Error::InvalidInput(format!("probe field must be positive, got {b:e} T")));
    }
    let seq = cfg.sequence(f_ac)?;
    let tau_sens = seq.tau_sens();
    let (t_laser, s_value) = if cfg.include_repolarization {
        let sched = build_schedule(&seq, cfg.t_sr, cfg.margin).map_err(|_| {
            out_of_range(
                f_ac,
                format!(
                    "at or below the repolarization limit {:e} Hz",
                    frequency_limits(cfg).0
                ),
            )
        })?;
        (sched.t_laser(), signal_level(sched.t_laser(), &cfg.repol)?)
    } else {
        ((cfg.t_sr - tau_sens - cfg.margin).max(0.0), 1.0)
    };
    let c_value = contrast(cfg.n_pulses, seq.tau(), &cfg.contr);
    let phi = cfg.consts.gamma_e * b * tau_sens * weighting(seq.alpha(), FRAC_PI_2, 0.0, cfg.n_pulses);
    let denom = s_value * c_value * phi.abs();
    if !(denom > 0.0) {
        return Err(out_of_range(f_ac, "signal vanishes at this frequency".into()));
    }
    Ok(CurvePoint {
        f_ac,
        tau: seq.tau(),
        t_laser,
        s_value,
        c_value,
        phi,
        eta_rel: (cfg.t_sr / tau_sens).sqrt() / denom,
    })
}

pub fn evaluate_point(f_ac: f64, cfg: &ModelConfig) -> Result<CurvePoint> {
    evaluate_point_with_field(f_ac, cfg, cfg.b_probe)
}

pub fn eta_relative(f_ac: f64, cfg: &ModelConfig) -> Result<f64> {
    evaluate_point(f_ac, cfg).map(|p| p.eta_rel)
}

pub fn sweep(cfg: &ModelConfig, f_grid: &[f64]) -> Result<SensitivityCurve> {
    sweep_with(Exec::default(), cfg, f_grid)
}

pub fn sweep_with(exec: Exec, cfg: &ModelConfig, f_grid: &[f64]) -> Result<SensitivityCurve> {
    let b = cfg.b_probe;
    sweep_with_field(exec, cfg, f_grid, &|_| b)
}

/// Sweep where the probe amplitude may vary with frequency, e.g. from a
/// measured coil calibration.
pub fn sweep_with_field(
    exec: Exec,
    cfg: &ModelConfig,
    f_grid: &[f64],
    field: &(dyn Fn(f64) -> f64 + Sync),
) -> Result<SensitivityCurve> {
    cfg.validate()?;
    if f_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput("frequency grid must be strictly ascending".into()));
    }
    let evaluated = exec.map(f_grid, |&f| evaluate_point_with_field(f, cfg, field(f)));
    let mut points = Vec::new();
    let mut boundaries = Vec::new();
    for (f, r) in f_grid.iter().zip(evaluated) {
        match r {
            Ok(p) => points.push(p),
            Err(Error::FrequencyOutOfRange { bound, .. }) => {
                boundaries.push(BoundaryMarker { f_ac: *f, bound })
            }
            Err(Error::InvalidInput(msg)) if !(f.is_finite() && *f > 0.0) => {
                boundaries.push(BoundaryMarker { f_ac: *f, bound: msg })
            }
            Err(e) => return Err(e),
        }
    }
    if points.is_empty() {
        return Err(Error::Configuration("no grid frequency is feasible".into()));
    }
    Ok(SensitivityCurve { points, boundaries, scale: None, config: cfg.clone() })
}

/// `(f_low, f_high)`. Without the repolarization limit, `f_low` is zero and
/// the practical low-frequency edge comes from [`divergence_frequency`].
pub fn frequency_limits(cfg: &ModelConfig) -> (f64, f64) {
    let f_high = if cfg.tau_pi > 0.0 { 0.5 / cfg.tau_pi } else { f64::INFINITY };
    let f_low = if cfg.include_repolarization {
        cfg.n_pulses as f64 / (2.0 * (cfg.t_sr - cfg.margin))
    } else {
        0.0
    };
    (f_low, f_high)
}

/// Log-spaced grid from `1.05 f_low` to `0.95 f_high`; `f_low` is replaced
/// by [`UNCONSTRAINED_FLOOR_HZ`] when it is zero.
pub fn default_grid(cfg: &ModelConfig, n_points: usize) -> Result<Vec<f64>> {
    let (f_low, f_high) = frequency_limits(cfg);
    if !f_high.is_finite() {
        return Err(Error::Configuration(
            "ideal pulses leave the grid without an upper edge".into(),
        ));
    }
    let lo = 1.05 * if f_low > 0.0 { f_low } else { UNCONSTRAINED_FLOOR_HZ };
    let hi = 0.95 * f_high;
    if !(lo < hi) || n_points < 2 {
        return Err(Error::Configuration(format!(
            "empty frequency range [{lo:e}, {hi:e}] Hz"
        )));
    }
    let (a, b) = (lo.ln(), hi.ln());
    let last = (n_points - 1) as f64;
    Ok((0..n_points)
        .map(|i| match i {
            0 => lo,
            i if i == n_points - 1 => hi,
            i => (a + (b - a) * i as f64 / last).exp(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Optimum {
    pub frequency: f64,
    pub eta_rel: f64,
    /// The grid minimum sits on the first or last point; the true minimum
    /// may lie outside the grid.
    pub at_boundary: bool,
}

/// Grid argmin refined by a parabola through it and its neighbours.
pub fn optimum_frequency(curve: &SensitivityCurve) -> Result<Optimum> {
    let pts = &curve.points;
    if pts.is_empty() {
        return Err(Error::InvalidInput("empty curve".into()));
    }
    let mut k = 0;
    for (i, p) in pts.iter().enumerate() {
        if p.eta_rel < pts[k].eta_rel {
            k = i;
        }
    }
    if k == 0 || k == pts.len() - 1 {
        return Ok(Optimum { frequency: pts[k].f_ac, eta_rel: pts[k].eta_rel, at_boundary: true });
    }
    let (x0, x1, x2) = (pts[k - 1].f_ac, pts[k].f_ac, pts[k + 1].f_ac);
    let (y0, y1, y2) = (pts[k - 1].eta_rel, pts[k].eta_rel, pts[k + 1].eta_rel);
    let d01 = (y1 - y0) / (x1 - x0);
    let d12 = (y2 - y1) / (x2 - x1);
    let curv = (d12 - d01) / (x2 - x0);
    if !(curv > 0.0) {
        return Ok(Optimum { frequency: x1, eta_rel: y1, at_boundary: false });
    }
    // vertex of y = y1 + d (x - x1) + curv (x - x1)(x - x1 - (x2 - x0) + ...)
    let x = 0.5 * (x0 + x1) - d01 / (2.0 * curv);
    let x = x.clamp(x0, x2);
    let y = y0 + d01 * (x - x0) + curv * (x - x0) * (x - x1);
    Ok(Optimum { frequency: x, eta_rel: y, at_boundary: false })
}

/// Highest frequency below the optimum where the curve has risen to
/// `factor` times its minimum, interpolated in `log f`. This is the
/// reported low-frequency divergence point.
pub fn divergence_frequency(curve: &SensitivityCurve, factor: f64) -> Result<f64> {
    if !(factor > 1.0) {
        return Err(Error::InvalidInput(format!("divergence factor must exceed 1, got {factor}")));
    }
    let pts = &curve.points;
    let k = pts
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.eta_rel.total_cmp(&b.1.eta_rel))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::InvalidInput("empty curve".into()))?;
    let level = factor * pts[k].eta_rel;
    for i in (0..k).rev() {
        let (hi, lo) = (&pts[i + 1], &pts[i]);
        if lo.eta_rel >= level {
            let t = (level - hi.eta_rel) / (lo.eta_rel - hi.eta_rel);
            return Ok((hi.f_ac.ln() + t * (lo.f_ac.ln() - hi.f_ac.ln())).exp());
        }
    }
    Err(Error::NoFeature(format!(
        "curve never reaches {factor}x its minimum below the optimum"
    )))
}

/// Sets the absolute scale so the curve equals `eta_ref` at `f_ref`.
pub fn anchor_scale(curve: &SensitivityCurve, f_ref: f64, eta_ref: f64) -> Result<SensitivityCurve> {
    anchor_scale_with_field(curve, f_ref, eta_ref, curve.config.b_probe)
}

/// As [`anchor_scale`], for curves swept with a frequency-dependent probe
/// whose amplitude at `f_ref` is `b_ref`.
pub fn anchor_scale_with_field(
    curve: &SensitivityCurve,
    f_ref: f64,
    eta_ref: f64,
    b_ref: f64,
) -> Result<SensitivityCurve> {
    if !(eta_ref.is_finite() && eta_ref > 0.0) {
        return Err(Error::InvalidInput(format!("anchor sensitivity must be positive, got {eta_ref:e}")));
    }
    let at_ref = evaluate_point_with_field(f_ref, &curve.config, b_ref)?.eta_rel;
    let mut out = curve.clone();
    out.scale = Some(eta_ref / at_ref);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn reference_curve(cfg: &ModelConfig) -> SensitivityCurve {
        sweep(cfg, &default_grid(cfg, DEFAULT_GRID_POINTS).unwrap()).unwrap()
    }

    #[test]
    fn default_probe_is_pi_field_at_1mhz() {
        let b = ModelConfig::default().b_probe;
        assert!((b - 3.62e-6).abs() < 0.01e-6, "{b:e}");
    }

    #[test]
    fn limits_for_reference_configuration() {
        let cfg = ModelConfig::default();
        let (lo, hi) = frequency_limits(&cfg);
        assert_relative_eq!(lo, 160e3, max_relative = 1e-12);
        assert_relative_eq!(hi, 6.25e6, max_relative = 1e-12);
        let half = ModelConfig { t_sr: 25e-6, ..cfg.clone() };
        assert_relative_eq!(frequency_limits(&half).0, 2.0 * lo, max_relative = 1e-12);
        let off = ModelConfig { include_repolarization: false, ..cfg };
        assert_eq!(frequency_limits(&off).0, 0.0);
    }

    #[test]
    fn diverges_at_both_limits() {
        let cfg = ModelConfig::default();
        let opt = optimum_frequency(&reference_curve(&cfg)).unwrap();
        assert!(!opt.at_boundary);
        assert!(eta_relative(161e3, &cfg).unwrap() > 10.0 * opt.eta_rel);
        assert!(eta_relative(6.24e6, &cfg).unwrap() > 10.0 * opt.eta_rel);
        assert!(matches!(eta_relative(160e3, &cfg), Err(Error::FrequencyOutOfRange { .. })));
        assert!(matches!(eta_relative(6.25e6, &cfg), Err(Error::FrequencyOutOfRange { .. })));
    }

    #[test]
    fn optimum_in_expected_band() {
        let opt = optimum_frequency(&reference_curve(&ModelConfig::default())).unwrap();
        assert!((0.8e6..=1.1e6).contains(&opt.frequency), "{}", opt.frequency);
    }

    #[test]
    fn repolarization_off_moves_divergence_down() {
        let on = ModelConfig::default();
        let off = ModelConfig { include_repolarization: false, ..on.clone() };
        let d_on = divergence_frequency(&reference_curve(&on), 10.0).unwrap();
        let d_off = divergence_frequency(&reference_curve(&off), 10.0).unwrap();
        assert!(d_off < d_on, "{d_off} vs {d_on}");
        let grid = default_grid(&off, DEFAULT_GRID_POINTS).unwrap();
        assert!(grid[0] < 160e3);
    }

    #[test]
    fn repolarization_off_removes_s_factor() {
        let on = ModelConfig::default();
        let off = ModelConfig { include_repolarization: false, ..on.clone() };
        for f in [200e3, 500e3, 1e6, 3e6] {
            let p = evaluate_point(f, &on).unwrap();
            let q = evaluate_point(f, &off).unwrap();
            assert_relative_eq!(q.eta_rel, p.eta_rel * p.s_value, max_relative = 1e-12);
            assert!(q.eta_rel <= p.eta_rel);
        }
    }

    #[test]
    fn synthetic_parabola_minimum() {
        let f0 = 1.2345e6;
        let grid: Vec<f64> = (0..41).map(|i| 0.5e6 + 5e4 * i as f64).collect();
        let points = grid
            .iter()
            .map(|&f| CurvePoint {
                f_ac: f,
                tau: 0.0,
                t_laser: 0.0,
                s_value: 1.0,
                c_value: 1.0,
                phi: 1.0,
                eta_rel: 3.0 + ((f - f0) / 1e6).powi(2),
            })
            .collect();
        let curve = SensitivityCurve {
            points,
            boundaries: vec![],
            scale: None,
            config: ModelConfig::default(),
        };
        let opt = optimum_frequency(&curve).unwrap();
        assert!((opt.frequency - f0).abs() < 1e-3 * 5e4);
        assert_relative_eq!(opt.eta_rel, 3.0, max_relative = 1e-9);
    }

    #[test]
    fn monotone_curve_flags_boundary() {
        let cfg = ModelConfig::default();
        let curve = sweep(&cfg, &[2e6, 3e6, 4e6, 5e6]).unwrap();
        assert!(optimum_frequency(&curve).unwrap().at_boundary);
    }

    #[test]
    fn infeasible_points_become_markers() {
        let cfg = ModelConfig::default();
        let curve = sweep(&cfg, &[100e3, 150e3, 1e6, 7e6]).unwrap();
        assert_eq!(curve.points.len(), 1);
        assert_eq!(curve.boundaries.len(), 3);
        assert!(matches!(sweep(&cfg, &[100e3, 7e6]), Err(Error::Configuration(_))));
        assert!(sweep(&cfg, &[2e6, 1e6]).is_err());
    }

    #[test]
    fn refined_grid_contains_coarse_values() {
        let cfg = ModelConfig::default();
        let coarse: Vec<f64> = (1..=10).map(|i| 0.5e6 * i as f64).collect();
        let fine: Vec<f64> = (2..=20).map(|i| 0.25e6 * i as f64).collect();
        let c = sweep(&cfg, &coarse).unwrap();
        let f = sweep(&cfg, &fine).unwrap();
        for p in &c.points {
            let q = f.points.iter().find(|q| q.f_ac == p.f_ac).unwrap();
            assert_eq!(p, q);
        }
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let cfg = ModelConfig::default();
        let grid = default_grid(&cfg, 64).unwrap();
        assert_eq!(
            sweep_with(Exec::Sequential, &cfg, &grid).unwrap(),
            sweep_with(Exec::Parallel, &cfg, &grid).unwrap()
        );
    }

    #[test]
    fn anchoring() {
        let cfg = ModelConfig::default();
        let curve = sweep(&cfg, &[0.5e6, 1e6, 5e6]).unwrap();
        let a = anchor_scale(&curve, 1e6, 229e-12).unwrap();
        let at_1 = a.eta_abs(&a.points[1]).unwrap();
        assert_relative_eq!(at_1, 229e-12, max_relative = 1e-14);
        assert!(a.eta_abs(&a.points[2]).unwrap() > at_1);
        let b = anchor_scale(&a, 1e6, 229e-12).unwrap();
        assert_eq!(a, b);
        assert!(anchor_scale(&curve, 7e6, 229e-12).is_err());
    }

    #[test]
    fn overhead_scales_as_root_dwell() {
        let base = ModelConfig { t_sr: 1e-3, ..ModelConfig::default() };
        let long = ModelConfig { t_sr: 4e-3, ..base.clone() };
        let r = eta_relative(1e6, &long).unwrap() / eta_relative(1e6, &base).unwrap();
        assert!((r - 2.0).abs() < 1e-3, "{r}");
    }

    #[test]
    fn config_validation() {
        let bad = ModelConfig { margin: 60e-6, ..ModelConfig::default() };
        assert!(matches!(eta_relative(1e6, &bad), Err(Error::Configuration(_))));
        let bad = ModelConfig { b_probe: 0.0, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn probe_scaling(k in 0.1f64..100.0, f in 200e3f64..6e6) {
            let cfg = ModelConfig::default();
            let scaled = ModelConfig { b_probe: k * cfg.b_probe, ..cfg.clone() };
            let a = eta_relative(f, &cfg).unwrap();
            let b = eta_relative(f, &scaled).unwrap();
            prop_assert!((a / b - k).abs() < 1e-9 * k);
        }

        #[test]
        fn argmin_invariant_to_amplitudes(kb in 0.1f64..10.0, ks in 0.1f64..1.0, kc in 0.1f64..1.0) {
            let cfg = ModelConfig::default();
            let grid = default_grid(&cfg, 80).unwrap();
            let other = ModelConfig {
                b_probe: kb * cfg.b_probe,
                repol: RepolarizationModel { s0: ks, ..cfg.repol },
                contr: ContrastModel { c0: kc * cfg.contr.c0, ..cfg.contr },
                ..cfg.clone()
            };
            let a = optimum_frequency(&sweep(&cfg, &grid).unwrap()).unwrap();
            let b = optimum_frequency(&sweep(&other, &grid).unwrap()).unwrap();
            prop_assert!((a.frequency - b.frequency).abs() < 1e-6 * a.frequency);
        }

        #[test]
        fn grid_spans_declared_range(n in 2usize..400, off in proptest::bool::ANY) {
            let cfg = ModelConfig { include_repolarization: !off, ..ModelConfig::default() };
            let g = default_grid(&cfg, n).unwrap();
            let (lo, hi) = frequency_limits(&cfg);
            let lo = if lo > 0.0 { lo } else { UNCONSTRAINED_FLOOR_HZ };
            prop_assert_eq!(g.len(), n);
            prop_assert!((g[0] - 1.05 * lo).abs() < 1e-9 * lo);
            prop_assert!((g[n - 1] - 0.95 * hi).abs() < 1e-9 * hi);
            prop_assert!(g.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
