//! Run configuration: a TOML document whose every key is optional and
//! defaults to the reference XY4-(4) scenario.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qdyne_core::photophysics::{ContrastModel, RepolarizationModel, DEFAULT_C0, DEFAULT_P, DEFAULT_T2, DEFAULT_T_P};
use qdyne_core::presets;
use qdyne_core::response::{PhysicalConstants, GAMMA_NV};
use qdyne_core::sensmodel::{ModelConfig, DEFAULT_GRID_POINTS};
use qdyne_core::sequence::Axis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub constants: Constants,
    pub sequence: Sequence,
    pub schedule: Schedule,
    pub photophysics: Photophysics,
    pub field: Field,
    pub noise: Noise,
    pub qdyne: Qdyne,
    pub weighting: Weighting,
    pub bandwidth: Bandwidth,
    pub sweep: Sweep,
    pub fit: Fit,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            constants: Constants::default(),
            sequence: Sequence::default(),
            schedule: Schedule::default(),
            photophysics: Photophysics::default(),
            field: Field::default(),
            noise: Noise::default(),
            qdyne: Qdyne::default(),
            weighting: Weighting::default(),
            bandwidth: Bandwidth::default(),
            sweep: Sweep::default(),
            fit: Fit::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Constants {
    pub gamma_e: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Self { gamma_e: GAMMA_NV }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sequence {
    pub xy4_repeats: usize,
    pub tau_pi: f64,
    /// Frequency the pulse spacing is tuned to.
    pub frequency: f64,
    pub readout: String,
}

impl Default for Sequence {
    fn default() -> Self {
        Self {
            xy4_repeats: presets::XY4_REPEATS,
            tau_pi: presets::TAU_PI,
            frequency: presets::SEQUENCE_FREQUENCY,
            readout: "Y".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub t_sr: f64,
    pub margin: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { t_sr: presets::T_SR, margin: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Photophysics {
    pub s0: f64,
    pub t_p: f64,
    pub c0: f64,
    pub t2: f64,
    pub p: f64,
}

impl Default for Photophysics {
    fn default() -> Self {
        Self { s0: 1.0, t_p: DEFAULT_T_P, c0: DEFAULT_C0, t2: DEFAULT_T2, p: DEFAULT_P }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Field {
    pub frequency: f64,
    pub amplitude_rms: f64,
    pub phase: f64,
}

impl Default for Field {
    fn default() -> Self {
        Self {
            frequency: presets::REFERENCE_FREQUENCY,
            amplitude_rms: presets::REFERENCE_FIELD_RMS,
            phase: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Noise {
    /// Fixed per-block noise; when absent it is calibrated to `target_eta`.
    pub sigma: Option<f64>,
    pub target_eta: f64,
}

impl Default for Noise {
    fn default() -> Self {
        Self { sigma: None, target_eta: presets::TARGET_ETA }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Qdyne {
    pub n_blocks: usize,
    pub detuning_attenuation: bool,
    pub dc_bins: usize,
    pub band_halfwidth_bins: usize,
    pub harmonics: usize,
    /// Extra `[low, high]` Hz bands left out of the noise floor.
    pub exclusions: Vec<[f64; 2]>,
}

impl Default for Qdyne {
    fn default() -> Self {
        Self {
            n_blocks: presets::N_BLOCKS,
            detuning_attenuation: true,
            dc_bins: 2,
            band_halfwidth_bins: 5,
            harmonics: 3,
            exclusions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Weighting {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub points: usize,
}

impl Default for Weighting {
    fn default() -> Self {
        Self { alpha_min: 0.0, alpha_max: presets::WEIGHTING_ALPHA_MAX, points: presets::WEIGHTING_POINTS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bandwidth {
    pub field: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub points: usize,
    pub readout: String,
}

impl Default for Bandwidth {
    fn default() -> Self {
        Self {
            field: presets::BANDWIDTH_FIELD,
            f_min: presets::BANDWIDTH_SPAN.0,
            f_max: presets::BANDWIDTH_SPAN.1,
            points: presets::BANDWIDTH_POINTS,
            readout: "X".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub points: usize,
    pub include_repolarization: bool,
    /// Probe amplitude; when absent the π field at the sequence frequency.
    pub b_probe: Option<f64>,
    pub anchor_frequency: Option<f64>,
    pub anchor_eta: Option<f64>,
    pub field_table: Option<PathBuf>,
    pub divergence_factor: f64,
}

impl Default for Sweep {
    fn default() -> Self {
        Self {
            points: DEFAULT_GRID_POINTS,
            include_repolarization: true,
            b_probe: None,
            anchor_frequency: None,
            anchor_eta: None,
            field_table: None,
            divergence_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Fit {
    pub data: Option<PathBuf>,
    pub model: Option<String>,
    pub fix_p: Option<f64>,
}

/// Line of `key` inside `[section]` (or at top level for an empty section).
fn line_of(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

/// A semantic check that failed, located at the offending key.
struct Violation {
    section: &'static str,
    key: &'static str,
    message: String,
}

fn check(ok: bool, section: &'static str, key: &'static str, message: impl Into<String>) -> Option<Violation> {
    (!ok).then(|| Violation { section, key, message: message.into() })
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1);
            match line {
                Some(l) => anyhow!("{origin}:{l}: {}", e.message()),
                None => anyhow!("{origin}: {}", e.message()),
            }
        })?;
        if let Some(v) = cfg.violations().into_iter().next() {
            let location = match line_of(text, v.section, v.key) {
                Some(l) => format!("{origin}:{l}"),
                None => origin.to_string(),
            };
            let dotted = if v.section.is_empty() { v.key.to_string() } else { format!("{}.{}", v.section, v.key) };
            bail!("{location}: {dotted}: {}", v.message);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.sweep.field_table, &mut cfg.fit.data].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.exists() {
                bail!("{}: referenced file {} does not exist", path.display(), p.display());
            }
        }
        Ok(cfg)
    }

    fn violations(&self) -> Vec<Violation> {
        let s = &self.sequence;
        let ph = &self.photophysics;
        let positive = |x: f64| x.is_finite() && x > 0.0;
        [
            check(positive(self.constants.gamma_e), "constants", "gamma_e", "must be positive"),
            check(s.xy4_repeats >= 1, "sequence", "xy4_repeats", "must be at least 1"),
            check(s.tau_pi.is_finite() && s.tau_pi >= 0.0, "sequence", "tau_pi", "must be non-negative"),
            check(
                positive(s.frequency) && (s.tau_pi == 0.0 || s.frequency < 0.5 / s.tau_pi),
                "sequence",
                "frequency",
                "must be positive and below the Rabi frequency 1/(2 tau_pi)",
            ),
            check(s.readout.parse::<Axis>().is_ok(), "sequence", "readout", "must be X or Y"),
            check(positive(self.schedule.t_sr), "schedule", "t_sr", "must be positive"),
            check(
                self.schedule.margin.is_finite() && self.schedule.margin >= 0.0 && self.schedule.margin < self.schedule.t_sr,
                "schedule",
                "margin",
                "must satisfy 0 <= margin < t_sr",
            ),
            check(positive(ph.s0), "photophysics", "s0", "must be positive"),
            check(positive(ph.t_p), "photophysics", "t_p", "must be positive"),
            check(ph.c0 > 0.0 && ph.c0 <= 1.0, "photophysics", "c0", "must lie in (0, 1]"),
            check(positive(ph.t2), "photophysics", "t2", "must be positive"),
            check(positive(ph.p), "photophysics", "p", "must be positive"),
            check(positive(self.field.frequency), "field", "frequency", "must be positive"),
            check(
                self.field.amplitude_rms.is_finite() && self.field.amplitude_rms >= 0.0,
                "field",
                "amplitude_rms",
                "must be non-negative",
            ),
            check(self.field.phase.is_finite(), "field", "phase", "must be finite"),
            check(
                self.noise.sigma.is_none_or(|x| x.is_finite() && x >= 0.0),
                "noise",
                "sigma",
                "must be non-negative",
            ),
            check(positive(self.noise.target_eta), "noise", "target_eta", "must be positive"),
            check(self.qdyne.n_blocks >= 8, "qdyne", "n_blocks", "must be at least 8"),
            check(self.qdyne.dc_bins >= 1, "qdyne", "dc_bins", "must be at least 1"),
            check(
                self.qdyne.exclusions.iter().all(|[a, b]| a <= b),
                "qdyne",
                "exclusions",
                "each band must be [low, high] with low <= high",
            ),
            check(
                self.weighting.alpha_min >= 0.0 && self.weighting.alpha_min < self.weighting.alpha_max,
                "weighting",
                "alpha_max",
                "range must satisfy 0 <= alpha_min < alpha_max",
            ),
            check(self.weighting.points >= 2, "weighting", "points", "must be at least 2"),
            check(self.bandwidth.field.is_finite() && self.bandwidth.field >= 0.0, "bandwidth", "field", "must be non-negative"),
            check(
                positive(self.bandwidth.f_min) && self.bandwidth.f_min < self.bandwidth.f_max,
                "bandwidth",
                "f_max",
                "range must satisfy 0 < f_min < f_max",
            ),
            check(self.bandwidth.points >= 3, "bandwidth", "points", "must be at least 3"),
            check(self.bandwidth.readout.parse::<Axis>().is_ok(), "bandwidth", "readout", "must be X or Y"),
            check(self.sweep.points >= 3, "sweep", "points", "must be at least 3"),
            check(self.sweep.b_probe.is_none_or(positive), "sweep", "b_probe", "must be positive"),
            check(
                self.sweep.anchor_frequency.is_some() == self.sweep.anchor_eta.is_some(),
                "sweep",
                "anchor_eta",
                "anchor_frequency and anchor_eta must be given together",
            ),
            check(self.sweep.anchor_eta.is_none_or(positive), "sweep", "anchor_eta", "must be positive"),
            check(self.sweep.divergence_factor > 1.0, "sweep", "divergence_factor", "must exceed 1"),
            check(self.fit.fix_p.is_none_or(positive), "fit", "fix_p", "must be positive"),
            check(
                self.fit.model.as_deref().is_none_or(|m| m == "repolarization" || m == "contrast"),
                "fit",
                "model",
                "must be \"repolarization\" or \"contrast\"",
            ),
        ]
        .into_iter()
        .flatten()
        .collect()
    }

    /// Re-runs the semantic checks, e.g. after command-line overrides.
    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            Some(v) => bail!("{}.{}: {}", v.section, v.key, v.message),
            None => Ok(()),
        }
    }

    /// SHA-256 of the canonical serialisation, for output provenance.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(self).expect("configuration serialises");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn consts(&self) -> PhysicalConstants {
        PhysicalConstants { gamma_e: self.constants.gamma_e }
    }

    pub fn n_pulses(&self) -> usize {
        4 * self.sequence.xy4_repeats
    }

    pub fn readout(&self) -> Axis {
        self.sequence.readout.parse().expect("validated")
    }

    pub fn repol(&self) -> RepolarizationModel {
        RepolarizationModel { s0: self.photophysics.s0, t_p: self.photophysics.t_p }
    }

    pub fn contrast(&self) -> ContrastModel {
        ContrastModel { c0: self.photophysics.c0, t2: self.photophysics.t2, p: self.photophysics.p }
    }

    pub fn model_config(&self, b_probe: f64) -> ModelConfig {
        ModelConfig {
            t_sr: self.schedule.t_sr,
            margin: self.schedule.margin,
            n_pulses: self.n_pulses(),
            tau_pi: self.sequence.tau_pi,
            repol: self.repol(),
            contr: self.contrast(),
            b_probe,
            include_repolarization: self.sweep.include_repolarization,
            consts: self.consts(),
        }
    }
}
