//! Spectral linewidth of a single noisy oscillator.
//!
//! The oscillator is simulated alone, its complex envelope
//! `exp(i(φ(t) − 2π f0 t))` is block-averaged to a coarse sample rate, and
//! the periodograms of consecutive segments are averaged. For white frequency
//! noise the spectrum is a Lorentzian; its full width at half maximum is read
//! off the half-maximum crossings of the averaged spectrum.

use std::f64::consts::TAU;

use oscsync_core::integrator::{run, steps_for, EnvelopeRecorder, PhaseObserver, RunError, StepFrame};
use oscsync_core::rng::{RngStream, StreamDomain};
use oscsync_core::{NetworkConfig, OscillatorParams, PhaseState, Role};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinewidthError {
    #[error("observation of {observation} s is too short for FWHM {fwhm} Hz: need FWHM x observation >= {min}")]
    TooShort { fwhm: f64, observation: f64, min: f64 },
    #[error("need at least {min} segments, got {got}")]
    Segments { min: usize, got: usize },
    #[error("invalid linewidth settings: {0}")]
    Settings(String),
    #[error(transparent)]
    Config(#[from] oscsync_core::network::ConfigError),
    #[error(transparent)]
    Run(#[from] RunError),
}

/// Minimum `FWHM · observation` for a meaningful estimate.
pub const MIN_WIDTH_TIME_PRODUCT: f64 = 50.0;
pub const MIN_SEGMENTS: usize = 20;
// fraction of the envelope sample rate fitted; block averaging bends the far tails
const FIT_SPAN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinewidthOptions {
    /// Natural frequency of the oscillator, Hz.
    pub frequency: f64,
    pub dt: f64,
    /// Periodograms averaged.
    pub segments: usize,
    /// Integration steps per envelope sample.
    pub block: u64,
    pub seed: u64,
}

impl Default for LinewidthOptions {
    fn default() -> Self {
        LinewidthOptions { frequency: 600e6, dt: 1e-10, segments: MIN_SEGMENTS, block: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinewidthEstimate {
    /// Estimated FWHM, Hz. Equals `resolution` when the line is unresolved.
    pub fwhm: f64,
    /// Frequency bin width, Hz.
    pub resolution: f64,
    /// The line is narrower than about one bin.
    pub resolution_limited: bool,
    pub segments: usize,
}

/// Averaged periodogram of a complex signal, DC-centred.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Hz, increasing.
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
}

impl Spectrum {
    pub fn resolution(&self) -> f64 {
        self.frequencies[1] - self.frequencies[0]
    }
}

/// Averages the periodograms of `segments` consecutive, non-overlapping
/// segments of `samples` taken every `interval` seconds.
pub fn averaged_periodogram(samples: &[Complex<f64>], interval: f64, segments: usize) -> Spectrum {
    let n = samples.len() / segments.max(1);
    assert!(n >= 2, "segments must hold at least two samples");
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut power = vec![0.0; n];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for seg in samples.chunks_exact(n).take(segments) {
        buf.copy_from_slice(seg);
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p += c.norm_sqr();
        }
    }
    // reorder bins to increasing frequency: −n/2 .. n/2−1
    let half = n / 2;
    let df = 1.0 / (n as f64 * interval);
    let order: Vec<usize> = (half..n).chain(0..half).collect();
    Spectrum {
        frequencies: order.iter().map(|&k| if k >= half { k as f64 - n as f64 } else { k as f64 } * df).collect(),
        power: order.iter().map(|&k| power[k] / (segments as f64 * n as f64)).collect(),
    }
}

/// Expected periodogram, in the bin order of [`averaged_periodogram`], of an
/// `n`-sample segment whose autocorrelation is `rho^|k|`: the FFT of the
/// triangle-weighted autocorrelation, so the finite-segment leakage is part
/// of the model.
fn wiener_periodogram(n: usize, rho: f64, fft: &dyn rustfft::Fft<f64>) -> Vec<f64> {
    let mut r: Vec<Complex<f64>> = (0..n)
        .map(|k| Complex::new((1.0 - k as f64 / n as f64) * rho.powi(k as i32), 0.0))
        .collect();
    fft.process(&mut r);
    let half = n / 2;
    (half..n).chain(0..half).map(|j| 2.0 * r[j].re - 1.0).collect()
}

/// Whittle negative log-likelihood of the spectrum under a scaled model,
/// with the scale profiled out.
fn whittle(power: &[f64], model: &[f64]) -> f64 {
    let m = power.len() as f64;
    let scale = power.iter().zip(model).map(|(p, g)| p / g).sum::<f64>() / m;
    model.iter().map(|g| g.ln()).sum::<f64>() + m * scale.ln()
}

/// FWHM of the Lorentzian line of a phase-diffusing oscillator, fitted to an
/// averaged periodogram of its carrier-free envelope.
///
/// Wiener phase with FWHM `w` gives an envelope autocorrelation
/// `exp(−π·w·|t|)`; the width is found by a golden-section search of the
/// Whittle likelihood over bins within `max_offset` Hz of zero.
pub fn fit_wiener_width(spectrum: &Spectrum, max_offset: f64) -> f64 {
    let n = spectrum.frequencies.len();
    let df = spectrum.resolution();
    let interval = 1.0 / (n as f64 * df);
    let keep: Vec<usize> = (0..n).filter(|&j| spectrum.frequencies[j].abs() <= max_offset).collect();
    let power: Vec<f64> = keep.iter().map(|&j| spectrum.power[j]).collect();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let cost = |ln_w: f64| {
        let rho = (-core::f64::consts::PI * ln_w.exp() * interval).exp();
        let model = wiener_periodogram(n, rho, fft.as_ref());
        whittle(&power, &keep.iter().map(|&j| model[j]).collect::<Vec<_>>())
    };
    // widths from a hundredth of a bin to a tenth of the sample rate
    let (mut lo, mut hi) = ((0.01 * df).ln(), (0.1 / interval).ln());
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut x1, mut x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut c1, mut c2) = (cost(x1), cost(x2));
    while hi - lo > 1e-4 {
        if c1 <= c2 {
            hi = x2;
            (x2, c2) = (x1, c1);
            x1 = hi - g * (hi - lo);
            c1 = cost(x1);
        } else {
            lo = x1;
            (x1, c1) = (x2, c2);
            x2 = lo + g * (hi - lo);
            c2 = cost(x2);
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// Simulates an isolated oscillator with the given FWHM for `observation`
/// seconds and estimates its linewidth.
pub fn estimate_linewidth(
    fwhm_config: f64,
    observation: f64,
    options: &LinewidthOptions,
) -> Result<LinewidthEstimate, LinewidthError> {
    if !(fwhm_config >= 0.0 && fwhm_config.is_finite()) {
        return Err(LinewidthError::Settings(format!("FWHM must be non-negative, got {fwhm_config}")));
    }
    if options.segments < MIN_SEGMENTS {
        return Err(LinewidthError::Segments { min: MIN_SEGMENTS, got: options.segments });
    }
    if fwhm_config > 0.0 && fwhm_config * observation < MIN_WIDTH_TIME_PRODUCT {
        return Err(LinewidthError::TooShort { fwhm: fwhm_config, observation, min: MIN_WIDTH_TIME_PRODUCT });
    }
    let network = NetworkConfig::new(
        vec![OscillatorParams { natural_frequency: options.frequency, role: Role::Core }],
        vec![0.0],
        fwhm_config,
        options.dt,
    )?;
    let steps = steps_for(observation, options.dt)?;
    let block = options.block.max(1);
    if steps / block < 2 * options.segments as u64 {
        return Err(LinewidthError::Settings("observation too short for the segment count".into()));
    }
    let mut env = EnvelopeRecorder::new(0, TAU * options.frequency * options.dt, block);
    let stream = RngStream::for_run(options.seed, StreamDomain::Linewidth, 0, 0);
    run(&network, observation, &PhaseState::new(vec![0.0], 0.0), &stream, &mut env)?;
    let samples: Vec<Complex<f64>> = env.samples.iter().map(|&(re, im)| Complex::new(re, im)).collect();
    let spectrum = averaged_periodogram(&samples, block as f64 * options.dt, options.segments);
    let resolution = spectrum.resolution();
    let width = fit_wiener_width(&spectrum, FIT_SPAN * spectrum.frequencies.len() as f64 * resolution);
    let (fwhm, resolution_limited) = if width > resolution { (width, false) } else { (resolution, true) };
    Ok(LinewidthEstimate { fwhm, resolution, resolution_limited, segments: options.segments })
}

struct IncrementStats {
    drift: f64,
    n: u64,
    mean: f64,
    m2: f64,
}

impl PhaseObserver for IncrementStats {
    fn observe(&mut self, frame: &StepFrame<'_>) -> Result<(), oscsync_core::integrator::ObserverError> {
        // Welford
        let x = frame.increments[0] - self.drift;
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
        Ok(())
    }
}

/// Sample variance of the per-step phase increments of an isolated
/// oscillator (drift removed) over `steps` steps.
pub fn phase_increment_variance(fwhm: f64, dt: f64, steps: u64, seed: u64) -> Result<f64, LinewidthError> {
    let f0 = 600e6;
    let network = NetworkConfig::new(vec![OscillatorParams { natural_frequency: f0, role: Role::Core }], vec![0.0], fwhm, dt)?;
    let mut stats = IncrementStats { drift: TAU * f0 * dt, n: 0, mean: 0.0, m2: 0.0 };
    let stream = RngStream::for_run(seed, StreamDomain::Linewidth, 1, 0);
    run(&network, steps as f64 * dt, &PhaseState::new(vec![0.0], 0.0), &stream, &mut stats)?;
    Ok(stats.m2 / (stats.n - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodogram_of_a_tone_peaks_at_its_frequency() {
        let interval = 1e-9;
        let f = 25e6;
        let samples: Vec<_> = (0..4000).map(|k| Complex::from_polar(1.0, TAU * f * k as f64 * interval)).collect();
        let s = averaged_periodogram(&samples, interval, 20);
        let (i, _) = s.power.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        assert!((s.frequencies[i] - f).abs() < 1e-3 * f);
        assert_eq!(s.resolution(), 5e6);
    }

    #[test]
    fn fit_recovers_width_of_its_own_model() {
        let n = 1000;
        let interval = 1e-9;
        let w = 3e6;
        let rho = (-core::f64::consts::PI * w * interval).exp();
        let model = wiener_periodogram(n, rho, FftPlanner::new().plan_fft_forward(n).as_ref());
        let df = 1.0 / (n as f64 * interval);
        let frequencies = (0..n).map(|j| (j as f64 - (n / 2) as f64) * df).collect();
        let spectrum = Spectrum { frequencies, power: model.iter().map(|g| 7.0 * g).collect() };
        let est = fit_wiener_width(&spectrum, 1e8);
        assert!((est - w).abs() < 1e-3 * w, "{est}");
    }

    #[test]
    fn too_short_observation_is_refused() {
        let err = estimate_linewidth(1e6, 10e-6, &LinewidthOptions::default()).unwrap_err();
        assert!(matches!(err, LinewidthError::TooShort { .. }));
        let err = estimate_linewidth(1e6, 100e-6, &LinewidthOptions { segments: 5, ..Default::default() });
        assert!(matches!(err, Err(LinewidthError::Segments { .. })));
    }

    #[test]
    fn noiseless_line_is_resolution_limited() {
        let est = estimate_linewidth(0.0, 20e-6, &LinewidthOptions::default()).unwrap();
        assert!(est.resolution_limited);
        assert_eq!(est.fwhm, est.resolution);
    }
}
