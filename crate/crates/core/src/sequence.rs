//! Dynamical-decoupling blocks and their timing arithmetic.
//!
//! A block of `N` π pulses of width `tau_pi` separated by free evolution of
//! length `tau` uses symmetric Carr-Purcell placement: `tau/2` of free
//! evolution before the first pulse and after the last one. One pulse
//! period is therefore `tau + tau_pi = tau (1 + alpha)` and the whole block
//! lasts `N tau (1 + alpha)`.

use std::fmt;

use crate::error::{Error, Result};

/// Rotation axis of a pulse (its microwave phase).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Axis::X => write!(f, "X"),
            Axis::Y => write!(f, "Y"),
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "X" | "x" => Ok(Axis::X),
            "Y" | "y" => Ok(Axis::Y),
            other => Err(Error::InvalidInput(format!("unknown axis '{other}'"))),
        }
    }
}

/// A dynamical-decoupling block followed by a π/2 readout pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSpec {
    n_pulses: usize,
    tau: f64,
    tau_pi: f64,
    pulse_phases: Vec<Axis>,
    readout_axis: Axis,
}

impl SequenceSpec {
    pub fn new(
        tau: f64,
        tau_pi: f64,
        pulse_phases: Vec<Axis>,
        readout_axis: Axis,
    ) -> Result<Self> {
        if pulse_phases.is_empty() {
            return Err(Error::InvalidInput(
                "a sequence needs at least one pi pulse".into(),
            ));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidTiming(format!(
                "pulse spacing must be positive, got {tau:e} s"
            )));
        }
        if !(tau_pi.is_finite() && tau_pi >= 0.0) {
            return Err(Error::InvalidTiming(format!(
                "pulse width must be non-negative, got {tau_pi:e} s"
            )));
        }
        Ok(Self {
            n_pulses: pulse_phases.len(),
            tau,
            tau_pi,
            pulse_phases,
            readout_axis,
        })
    }

    pub fn n_pulses(&self) -> usize {
        self.n_pulses
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn tau_pi(&self) -> f64 {
        self.tau_pi
    }

    pub fn pulse_phases(&self) -> &[Axis] {
        &self.pulse_phases
    }

    pub fn readout_axis(&self) -> Axis {
        self.readout_axis
    }

    /// Duty ratio `tau_pi / tau`.
    pub fn alpha(&self) -> f64 {
        self.tau_pi / self.tau
    }

    /// Pulse period `tau + tau_pi`.
    pub fn period(&self) -> f64 {
        self.tau + self.tau_pi
    }

    /// Interrogation time `N tau (1 + alpha)`.
    pub fn tau_sens(&self) -> f64 {
        self.n_pulses as f64 * self.period()
    }

    /// AC frequency commensurate with the pulse train, `1 / (2 tau (1 + alpha))`.
    pub fn commensurate_frequency(&self) -> f64 {
        0.5 / self.period()
    }

    /// The same sequence with a different readout pulse phase.
    pub fn with_readout(mut self, axis: Axis) -> Self {
        self.readout_axis = axis;
        self
    }

    /// `true` when the phases follow the XY4 pattern (X, Y, X, Y repeated).
    pub fn is_xy4(&self) -> bool {
        self.n_pulses.is_multiple_of(4)
            && self
                .pulse_phases
                .iter()
                .enumerate()
                .all(|(i, a)| *a == if i % 2 == 0 { Axis::X } else { Axis::Y })
    }
}

/// XY4-(k): `k` repetitions of (X, Y, X, Y), `N = 4k` pulses.
pub fn make_xy4(k: usize, tau: f64, tau_pi: f64, readout_axis: Axis) -> Result<SequenceSpec> {
    if k == 0 {
        return Err(Error::InvalidInput("XY4 repetition count must be >= 1".into()));
    }
    let phases = [Axis::X, Axis::Y, Axis::X, Axis::Y]
        .iter()
        .copied()
        .cycle()
        .take(4 * k)
        .collect();
    SequenceSpec::new(tau, tau_pi, phases, readout_axis)
}

/// Pulse spacing that makes the train commensurate with `f_ac`:
/// `tau = 1/(2 f_ac) - tau_pi`.
pub fn tau_for_frequency(f_ac: f64, tau_pi: f64) -> Result<f64> {
    if !(f_ac.is_finite() && f_ac > 0.0) {
        return Err(Error::InvalidInput(format!(
            "AC frequency must be positive, got {f_ac:e} Hz"
        )));
    }
    if !(tau_pi.is_finite() && tau_pi >= 0.0) {
        return Err(Error::InvalidTiming(format!(
            "pulse width must be non-negative, got {tau_pi:e} s"
        )));
    }
    let tau = 0.5 / f_ac - tau_pi;
    if tau <= 0.0 {
        return Err(Error::FrequencyOutOfRange {
            frequency: f_ac,
            bound: format!(
                "at or above the Rabi frequency {:e} Hz",
                0.5 / tau_pi
            ),
        });
    }
    Ok(tau)
}

/// `1 / (2 tau_pi)`; ideal (zero-width) pulses have no upper limit.
pub fn rabi_frequency(tau_pi: f64) -> Result<f64> {
    if tau_pi.is_nan() || tau_pi < 0.0 {
        return Err(Error::InvalidTiming(format!(
            "pulse width must be non-negative, got {tau_pi:e} s"
        )));
    }
    if tau_pi == 0.0 {
        return Err(Error::Unbounded(
            "Rabi frequency of an ideal zero-width pulse".into(),
        ));
    }
    Ok(0.5 / tau_pi)
}

/// How the spin responds to the field while a π pulse is being applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PulseShape {
    /// No phase accrues during the pulse. This is the convention under
    /// which the closed-form weighting function is exact.
    #[default]
    Gated,
    /// The sign of the modulation rotates as `cos(pi (t - t_s) / tau_pi)`
    /// across the pulse.
    CosineRotation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentKind {
    PlusOne,
    MinusOne,
    /// Zero modulation (gated pulse).
    Gated { start_sign: f64 },
    /// `start_sign * cos(pi (t - start) / width)`.
    CosineTransition { start_sign: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub kind: SegmentKind,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_transition(&self) -> bool {
        matches!(
            self.kind,
            SegmentKind::Gated { .. } | SegmentKind::CosineTransition { .. }
        )
    }

    /// Value of the modulation at `t`, which must lie inside the segment.
    pub fn value(&self, t: f64) -> f64 {
        match self.kind {
            SegmentKind::PlusOne => 1.0,
            SegmentKind::MinusOne => -1.0,
            SegmentKind::Gated { .. } => 0.0,
            SegmentKind::CosineTransition { start_sign } => {
                let w = self.duration();
                if w == 0.0 {
                    0.0
                } else {
                    start_sign * (std::f64::consts::PI * (t - self.start) / w).cos()
                }
            }
        }
    }
}

/// Piecewise sign function `y(t)` seen by the spin over the sensing window.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationFunction {
    segments: Vec<Segment>,
}

impl ModulationFunction {
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn span(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.end)
    }

    pub fn transition_count(&self) -> usize {
        self.segments.iter().filter(|s| s.is_transition()).count()
    }

    pub fn free_segments(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| !s.is_transition())
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.segments
            .iter()
            .find(|s| t >= s.start && t < s.end)
            .map_or(0.0, |s| s.value(t))
    }
}

pub fn modulation_function(seq: &SequenceSpec) -> ModulationFunction {
    modulation_function_with(seq, PulseShape::default())
}

pub fn modulation_function_with(seq: &SequenceSpec, shape: PulseShape) -> ModulationFunction {
    let n = seq.n_pulses;
    let half = 0.5 * seq.tau;
    let mut segments = Vec::with_capacity(2 * n + 1);
    let mut sign = 1.0;
    let free = |start: f64, end: f64, sign: f64| Segment {
        start,
        end,
        kind: if sign > 0.0 {
            SegmentKind::PlusOne
        } else {
            SegmentKind::MinusOne
        },
    };

    // Pulse edges on the exact grid; free segments reuse them.
    let period = seq.period();
    let edges: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let centre = (k as f64 + 0.5) * period;
            (centre - 0.5 * seq.tau_pi, centre + 0.5 * seq.tau_pi)
        })
        .collect();
    let first_end = if n > 0 { edges[0].0 } else { half };
    segments.push(free(0.0, first_end, sign));
    for (k, &(p_start, p_end)) in edges.iter().enumerate() {
        let kind = match shape {
            PulseShape::Gated => SegmentKind::Gated { start_sign: sign },
            PulseShape::CosineRotation => SegmentKind::CosineTransition { start_sign: sign },
        };
        segments.push(Segment {
            start: p_start,
            end: p_end,
            kind,
        });
        sign = -sign;
        let next = edges.get(k + 1).map_or(seq.tau_sens(), |e| e.0);
        segments.push(free(p_end, next, sign));
    }
    ModulationFunction { segments }
}
