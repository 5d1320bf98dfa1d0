//! Amplitude spectra of readout traces and the reference-field sensitivity
//! estimate built on them.
//!
//! Normalisation: a sinusoid of amplitude `A` centred on a bin reads `A` in
//! that bin; bin 0 holds the magnitude of the mean. Windows are corrected
//! for their coherent gain so the same holds with [`Window::Hann`].

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::io::format_float;
use crate::qdyne::SrTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    Rectangular,
    Hann,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeSpectrum {
    pub bin_width: f64,
    /// One-sided amplitudes, `floor(n/2) + 1` bins.
    pub amplitudes: Vec<f64>,
    pub n_samples: usize,
    pub dwell: f64,
    pub window: Window,
    coherent_gain: f64,
}

impl AmplitudeSpectrum {
    pub fn frequency(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_width
    }

    pub fn nyquist(&self) -> f64 {
        0.5 / self.dwell
    }

    /// Bin nearest to `f`, clamped into the spectrum.
    pub fn bin_of(&self, f: f64) -> usize {
        ((f / self.bin_width).round().max(0.0) as usize).min(self.amplitudes.len() - 1)
    }

    fn has_nyquist_bin(&self) -> bool {
        self.n_samples.is_multiple_of(2)
    }

    /// Time-domain energy `sum (w_i x_i)^2` implied by the amplitudes.
    pub fn equivalent_energy(&self) -> f64 {
        let n = self.n_samples as f64;
        let last = self.amplitudes.len() - 1;
        let body: f64 = self
            .amplitudes
            .iter()
            .enumerate()
            .map(|(k, a)| {
                if k == 0 || (k == last && self.has_nyquist_bin()) {
                    a * a
                } else {
                    0.5 * a * a
                }
            })
            .sum();
        n * self.coherent_gain * self.coherent_gain * body
    }
}

/// Energy of the windowed series, the time-domain side of Parseval.
pub fn windowed_energy(samples: &[f64], window: Window) -> f64 {
    window
        .coefficients(samples.len())
        .iter()
        .zip(samples)
        .map(|(w, x)| (w * x).powi(2))
        .sum()
}

/// Relative mismatch between time-domain and spectral energy.
pub fn parseval_residual(samples: &[f64], spec: &AmplitudeSpectrum) -> f64 {
    let t = windowed_energy(samples, spec.window);
    let f = spec.equivalent_energy();
    if t == 0.0 {
        f.abs()
    } else {
        ((t - f) / t).abs()
    }
}

pub fn amplitude_spectrum(trace: &SrTrace) -> Result<AmplitudeSpectrum> {
    amplitude_spectrum_with(&trace.samples, trace.dwell, Window::Rectangular)
}

pub fn amplitude_spectrum_with(
    samples: &[f64],
    dwell: f64,
    window: Window,
) -> Result<AmplitudeSpectrum> {
    let n = samples.len();
    if n < 8 {
        return Err(Error::InvalidInput(format!("spectrum needs at least 8 samples, got {n}")));
    }
    if !(dwell.is_finite() && dwell > 0.0) {
        return Err(Error::InvalidInput(format!("dwell must be positive, got {dwell:e}")));
    }
    let w = window.coefficients(n);
    let coherent_gain = w.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> =
        samples.iter().zip(&w).map(|(x, w)| Complex::new(x * w, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let scale = 1.0 / (n as f64 * coherent_gain);
    let half = n / 2;
    let amplitudes = (0..=half)
        .map(|k| {
            let m = buf[k].norm() * scale;
            if k == 0 || (n.is_multiple_of(2) && k == half) {
                m
            } else {
                2.0 * m
            }
        })
        .collect();
    Ok(AmplitudeSpectrum {
        bin_width: 1.0 / (n as f64 * dwell),
        amplitudes,
        n_samples: n,
        dwell,
        window,
        coherent_gain,
    })
}

/// Largest bin at or above `exclude_dc_bins`; ties go to the lower
/// frequency. Returns `(bin, frequency, amplitude)`.
pub fn find_peak_bin(spec: &AmplitudeSpectrum, exclude_dc_bins: usize) -> Result<(usize, f64, f64)> {
    if exclude_dc_bins == 0 {
        return Err(Error::InvalidInput("at least the DC bin must be excluded".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    for (k, &a) in spec.amplitudes.iter().enumerate().skip(exclude_dc_bins) {
        if best.is_none_or(|(_, b)| a > b) {
            best = Some((k, a));
        }
    }
    match best {
        Some((k, a)) if a > 0.0 => Ok((k, spec.frequency(k), a)),
        _ => Err(Error::NoFeature("spectrum has no non-zero bin outside DC".into())),
    }
}

pub fn find_peak(spec: &AmplitudeSpectrum, exclude_dc_bins: usize) -> Result<(f64, f64)> {
    find_peak_bin(spec, exclude_dc_bins).map(|(_, f, a)| (f, a))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorOptions {
    pub dc_bins: usize,
    /// Bins on either side of the peak and of each harmonic that are left
    /// out of the floor.
    pub band_halfwidth_bins: usize,
    /// Highest harmonic of the peak excluded (aliased into the band).
    pub harmonics: usize,
}

impl Default for FloorOptions {
    fn default() -> Self {
        Self { dc_bins: 2, band_halfwidth_bins: 5, harmonics: 3 }
    }
}

/// Folds `f` into `[0, f_s/2]`.
fn alias(f: f64, fs: f64) -> f64 {
    (f - (f / fs).round() * fs).abs()
}

/// RMS of the bins outside DC, the peak band, its harmonic bands and the
/// caller's `(low, high)` Hz exclusions.
pub fn noise_floor(spec: &AmplitudeSpectrum, exclusions: &[(f64, f64)]) -> Result<f64> {
    noise_floor_with(spec, exclusions, &FloorOptions::default())
}

pub fn noise_floor_with(
    spec: &AmplitudeSpectrum,
    exclusions: &[(f64, f64)],
    opts: &FloorOptions,
) -> Result<f64> {
    let n_bins = spec.amplitudes.len();
    let mut keep = vec![true; n_bins];
    keep.iter_mut().take(opts.dc_bins.max(1)).for_each(|k| *k = false);

    if let Ok((_, f_peak, _)) = find_peak_bin(spec, opts.dc_bins.max(1)) {
        let fs = 1.0 / spec.dwell;
        for h in 1..=opts.harmonics.max(1) {
            let centre = spec.bin_of(alias(h as f64 * f_peak, fs));
            let lo = centre.saturating_sub(opts.band_halfwidth_bins);
            let hi = (centre + opts.band_halfwidth_bins).min(n_bins - 1);
            keep[lo..=hi].iter_mut().for_each(|k| *k = false);
        }
    }
    for &(lo, hi) in exclusions {
        if !(lo <= hi) {
            return Err(Error::InvalidExclusion(format!("band ({lo}, {hi}) is reversed")));
        }
        for (k, flag) in keep.iter_mut().enumerate() {
            let f = spec.frequency(k);
            if f >= lo && f <= hi {
                *flag = false;
            }
        }
    }
    let used: Vec<f64> = spec
        .amplitudes
        .iter()
        .zip(&keep)
        .filter_map(|(a, k)| k.then_some(*a))
        .collect();
    if used.len() * 4 < n_bins {
        return Err(Error::InvalidExclusion(format!(
            "only {} of {n_bins} bins remain after exclusions",
            used.len()
        )));
    }
    Ok((used.iter().map(|a| a * a).sum::<f64>() / used.len() as f64).sqrt())
}

/// A floor this far below the peak is round-off, not noise.
pub const NOISELESS_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    pub peak_frequency: f64,
    pub peak_amplitude: f64,
    pub noise_floor_rms: f64,
    /// Smallest detectable field over the record, tesla.
    pub delta_b: f64,
    /// Tesla per root hertz.
    pub eta: f64,
    pub measurement_time: f64,
    /// The floor is at round-off level, see [`NOISELESS_RATIO`].
    pub noiseless: bool,
}

impl SensitivityReport {
    pub const CSV_HEADER: &'static str =
        "peak_frequency_hz,peak_amplitude,noise_floor_rms,delta_b_t,eta_t_per_rthz,measurement_time_s,noiseless";

    pub fn csv_row(&self) -> String {
        self.cells().join(",")
    }

    pub fn to_key_value(&self) -> String {
        Self::CSV_HEADER
            .split(',')
            .zip(self.cells())
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    fn cells(&self) -> Vec<String> {
        let mut cells: Vec<String> = [
            self.peak_frequency,
            self.peak_amplitude,
            self.noise_floor_rms,
            self.delta_b,
            self.eta,
            self.measurement_time,
        ]
        .iter()
        .map(|x| format_float(*x))
        .collect();
        cells.push(self.noiseless.to_string());
        cells
    }
}

/// Scales the noise floor by the reference peak: `delta_b = b_ref_rms *
/// floor / peak` and `eta = delta_b * sqrt(t_meas)`.
pub fn estimate_sensitivity(
    spec: &AmplitudeSpectrum,
    b_ref_rms: f64,
    t_meas: f64,
    exclusions: &[(f64, f64)],
) -> Result<SensitivityReport> {
    estimate_sensitivity_with(spec, b_ref_rms, t_meas, exclusions, &FloorOptions::default())
}

pub fn estimate_sensitivity_with(
    spec: &AmplitudeSpectrum,
    b_ref_rms: f64,
    t_meas: f64,
    exclusions: &[(f64, f64)],
    opts: &FloorOptions,
) -> Result<SensitivityReport> {
    if !(b_ref_rms > 0.0 && t_meas > 0.0) {
        return Err(Error::InvalidInput(
            "reference field and measurement time must be positive".into(),
        ));
    }
    let (_, peak_frequency, peak_amplitude) = find_peak_bin(spec, opts.dc_bins.max(1))?;
    let floor = noise_floor_with(spec, exclusions, opts)?;
    if peak_amplitude <= 3.0 * floor {
        return Err(Error::UnreliableReference { peak: peak_amplitude, floor });
    }
    let delta_b = b_ref_rms * floor / peak_amplitude;
    Ok(SensitivityReport {
        peak_frequency,
        peak_amplitude,
        noise_floor_rms: floor,
        delta_b,
        eta: delta_b * t_meas.sqrt(),
        measurement_time: t_meas,
        noiseless: floor <= NOISELESS_RATIO * peak_amplitude,
    })
}
