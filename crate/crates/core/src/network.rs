//! Network description: oscillators, symmetric couplings and phase noise.
//!
//! All quantities are SI: frequencies and coupling strengths in Hz, times in
//! seconds. Oscillators are always ordered cores first, then inputs, so the
//! bit layout of a [`PatternCode`](crate::readout::PatternCode) is stable.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::MHZ;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("oscillator {index}: natural frequency must be positive and finite, got {value} Hz")]
    NonPositiveFrequency { index: usize, value: f64 },
    #[error("coupling ({m}, {n}) must be non-negative and finite, got {value} Hz")]
    NegativeCoupling { m: usize, n: usize, value: f64 },
    #[error("coupling matrix is not symmetric at ({m}, {n})")]
    Asymmetric { m: usize, n: usize },
    #[error("self-coupling of oscillator {index} must be zero")]
    NonZeroDiagonal { index: usize },
    #[error("input oscillators {m} and {n} must not be coupled")]
    InputInputCoupling { m: usize, n: usize },
    #[error("coupling matrix has {got} entries, expected {expected}")]
    CouplingShape { got: usize, expected: usize },
    #[error("noise FWHM must be non-negative and finite, got {0} Hz")]
    NegativeNoise(f64),
    #[error("time step must be positive and finite, got {0} s")]
    NonPositiveStep(f64),
    #[error("at least {required} core oscillators are required, got {got}")]
    TooFewCores { required: usize, got: usize },
    #[error("expected {expected} input frequencies, got {got}")]
    InputCount { expected: usize, got: usize },
    #[error("core oscillator {0} is declared after an input; cores must come first")]
    CoreAfterInput(usize),
    #[error("coupling strength {name} must be non-negative and finite, got {value} Hz")]
    NegativeStrength { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Core,
    Input,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatorParams {
    /// Hz.
    pub natural_frequency: f64,
    pub role: Role,
}

/// Validated, immutable network description.
///
/// `coupling` is stored row-major (`coupling[m * n_osc + n]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNetworkConfig", into = "RawNetworkConfig")]
pub struct NetworkConfig {
    oscillators: Vec<OscillatorParams>,
    coupling: Vec<f64>,
    noise_fwhm: f64,
    dt: f64,
}

#[derive(Serialize, Deserialize)]
struct RawNetworkConfig {
    oscillators: Vec<OscillatorParams>,
    coupling: Vec<Vec<f64>>,
    noise_fwhm: f64,
    dt: f64,
}

impl TryFrom<RawNetworkConfig> for NetworkConfig {
    type Error = ConfigError;

    fn try_from(raw: RawNetworkConfig) -> Result<Self, Self::Error> {
        let n = raw.oscillators.len();
        if raw.coupling.len() != n || raw.coupling.iter().any(|row| row.len() != n) {
            return Err(ConfigError::CouplingShape {
                got: raw.coupling.iter().map(Vec::len).sum(),
                expected: n * n,
            });
        }
        let flat = raw.coupling.into_iter().flatten().collect();
        NetworkConfig::new(raw.oscillators, flat, raw.noise_fwhm, raw.dt)
    }
}

impl From<NetworkConfig> for RawNetworkConfig {
    fn from(cfg: NetworkConfig) -> Self {
        let n = cfg.len();
        let coupling = cfg.coupling.chunks(n.max(1)).map(<[f64]>::to_vec).collect();
        RawNetworkConfig {
            oscillators: cfg.oscillators,
            coupling,
            noise_fwhm: cfg.noise_fwhm,
            dt: cfg.dt,
        }
    }
}

impl NetworkConfig {
    /// Builds a config from a row-major coupling matrix, checking every invariant.
    pub fn new(
        oscillators: Vec<OscillatorParams>,
        coupling: Vec<f64>,
        noise_fwhm: f64,
        dt: f64,
    ) -> Result<Self, ConfigError> {
        let cfg = NetworkConfig { oscillators, coupling, noise_fwhm, dt };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.oscillators.len();
        if self.coupling.len() != n * n {
            return Err(ConfigError::CouplingShape { got: self.coupling.len(), expected: n * n });
        }
        let mut seen_input = false;
        for (index, osc) in self.oscillators.iter().enumerate() {
            match osc.role {
                Role::Input => seen_input = true,
                Role::Core if seen_input => return Err(ConfigError::CoreAfterInput(index)),
                Role::Core => {}
            }
            let f = osc.natural_frequency;
            if !(f.is_finite() && f > 0.0) {
                return Err(ConfigError::NonPositiveFrequency { index, value: f });
            }
        }
        for m in 0..n {
            if self.coupling[m * n + m] != 0.0 {
                return Err(ConfigError::NonZeroDiagonal { index: m });
            }
            for k in 0..n {
                let value = self.coupling[m * n + k];
                if !(value.is_finite() && value >= 0.0) {
                    return Err(ConfigError::NegativeCoupling { m, n: k, value });
                }
                if value != self.coupling[k * n + m] {
                    return Err(ConfigError::Asymmetric { m, n: k });
                }
                if m != k
                    && value != 0.0
                    && self.oscillators[m].role == Role::Input
                    && self.oscillators[k].role == Role::Input
                {
                    return Err(ConfigError::InputInputCoupling { m, n: k });
                }
            }
        }
        if !(self.noise_fwhm.is_finite() && self.noise_fwhm >= 0.0) {
            return Err(ConfigError::NegativeNoise(self.noise_fwhm));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(ConfigError::NonPositiveStep(self.dt));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.oscillators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.oscillators.is_empty()
    }

    pub fn oscillators(&self) -> &[OscillatorParams] {
        &self.oscillators
    }

    /// Row-major coupling matrix in Hz.
    pub fn coupling_matrix(&self) -> &[f64] {
        &self.coupling
    }

    pub fn coupling(&self, m: usize, n: usize) -> f64 {
        self.coupling[m * self.len() + n]
    }

    pub fn noise_fwhm(&self) -> f64 {
        self.noise_fwhm
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_core(&self) -> usize {
        self.oscillators.iter().filter(|o| o.role == Role::Core).count()
    }

    pub fn input_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.oscillators
            .iter()
            .enumerate()
            .filter(|(_, o)| o.role == Role::Input)
            .map(|(i, _)| i)
    }

    /// Copy with the input oscillators retuned, in declaration order.
    pub fn with_input_frequencies(&self, freqs: &[f64]) -> Result<Self, ConfigError> {
        let inputs: Vec<usize> = self.input_indices().collect();
        if inputs.len() != freqs.len() {
            return Err(ConfigError::InputCount { expected: inputs.len(), got: freqs.len() });
        }
        let mut out = self.clone();
        for (&i, &f) in inputs.iter().zip(freqs) {
            out.oscillators[i].natural_frequency = f;
        }
        out.validate()?;
        Ok(out)
    }

    pub fn with_noise_fwhm(&self, fwhm: f64) -> Result<Self, ConfigError> {
        let mut out = self.clone();
        out.noise_fwhm = fwhm;
        out.validate()?;
        Ok(out)
    }

    pub fn with_dt(&self, dt: f64) -> Result<Self, ConfigError> {
        let mut out = self.clone();
        out.dt = dt;
        out.validate()?;
        Ok(out)
    }
}

/// Uniform-coupling topology: a core clique at `k_cc` plus inputs coupled to
/// every core at `k_ic`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PaperTopologySpec {
    pub core_frequencies: Vec<f64>,
    pub input_frequencies: Vec<f64>,
    pub k_cc: f64,
    pub k_ic: f64,
    pub noise_fwhm: f64,
    pub dt: f64,
}

impl Default for PaperTopologySpec {
    /// Four cores at 560–620 MHz, two inputs (placeholder 600 MHz),
    /// k_cc = 4 MHz, k_ic = 12 MHz, noiseless, 100 ps step.
    fn default() -> Self {
        PaperTopologySpec {
            core_frequencies: alloc::vec![560.0 * MHZ, 580.0 * MHZ, 600.0 * MHZ, 620.0 * MHZ],
            input_frequencies: alloc::vec![600.0 * MHZ, 600.0 * MHZ],
            k_cc: 4.0 * MHZ,
            k_ic: 12.0 * MHZ,
            noise_fwhm: 0.0,
            dt: 1.0e-10,
        }
    }
}

impl PaperTopologySpec {
    /// Two cores at 560/580 MHz and one input, used to calibrate thresholds.
    pub fn reduced() -> Self {
        PaperTopologySpec {
            core_frequencies: alloc::vec![560.0 * MHZ, 580.0 * MHZ],
            input_frequencies: alloc::vec![600.0 * MHZ],
            ..Self::default()
        }
    }
}

pub fn build_paper_network(spec: &PaperTopologySpec) -> Result<NetworkConfig, ConfigError> {
    if spec.core_frequencies.len() < 2 {
        return Err(ConfigError::TooFewCores { required: 2, got: spec.core_frequencies.len() });
    }
    for (name, value) in [("k_cc", spec.k_cc), ("k_ic", spec.k_ic)] {
        if !(value.is_finite() && value >= 0.0) {
            return Err(ConfigError::NegativeStrength { name, value });
        }
    }
    let oscillators: Vec<OscillatorParams> = spec
        .core_frequencies
        .iter()
        .map(|&f| OscillatorParams { natural_frequency: f, role: Role::Core })
        .chain(
            spec.input_frequencies
                .iter()
                .map(|&f| OscillatorParams { natural_frequency: f, role: Role::Input }),
        )
        .collect();
    let n = oscillators.len();
    let mut coupling = alloc::vec![0.0; n * n];
    for m in 0..n {
        for k in 0..n {
            if m == k {
                continue;
            }
            coupling[m * n + k] = match (oscillators[m].role, oscillators[k].role) {
                (Role::Core, Role::Core) => spec.k_cc,
                (Role::Input, Role::Input) => 0.0,
                _ => spec.k_ic,
            };
        }
    }
    NetworkConfig::new(oscillators, coupling, spec.noise_fwhm, spec.dt)
}
