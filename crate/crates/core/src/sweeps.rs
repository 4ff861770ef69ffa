//! One-dimensional robustness studies: coupling, noise, threshold and
//! evaluation-time sweeps, each reported as discriminated-pattern counts per
//! detection scheme (plus map matching for the evaluation-time sweep).
//!
//! Every sweep value that changes the dynamics (`k_ic`, `k_cc`, FWHM) is
//! simulated with the sweep's master seed, so a sweep row equals a standalone
//! [`build_map`](crate::readout::build_map) + filter + count with that seed.
//! Threshold and τ sweeps threshold one shared [`RawGrid`].

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detectors::{DetectorSpec, Scheme};
use crate::exec::Executor;
use crate::network::{build_paper_network, PaperTopologySpec};
use crate::readout::{
    filtered_pattern_count, map_match, GridSpec, InconsistentPolicy, RawGrid, ReadoutError, SimProtocol,
};
use crate::rng::derive_seed;
use crate::{MHZ, MICROSECOND};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SweepError {
    #[error(transparent)]
    Readout(#[from] ReadoutError),
    #[error("invalid sweep: {0}")]
    Spec(String),
}

impl From<crate::network::ConfigError> for SweepError {
    fn from(e: crate::network::ConfigError) -> Self {
        SweepError::Readout(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    KIc,
    KCc,
    Fwhm,
    EpsilonV,
    EpsilonCounter,
    Tau,
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParameter::KIc => "k_ic",
            SweepParameter::KCc => "k_cc",
            SweepParameter::Fwhm => "fwhm",
            SweepParameter::EpsilonV => "epsilon_v",
            SweepParameter::EpsilonCounter => "epsilon_counter",
            SweepParameter::Tau => "tau",
        })
    }
}

/// Thresholds applied to each scheme when it is not the swept quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub variance: f64,
    pub direct: u64,
    pub flipflop: u64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            variance: DetectorSpec::DEFAULT_VARIANCE,
            direct: DetectorSpec::DEFAULT_DIRECT,
            flipflop: DetectorSpec::DEFAULT_FLIPFLOP,
        }
    }
}

impl Thresholds {
    pub fn detector(&self, scheme: Scheme) -> DetectorSpec {
        match scheme {
            Scheme::Variance => DetectorSpec::Variance(self.variance),
            Scheme::Direct => DetectorSpec::Direct(self.direct),
            Scheme::Flipflop => DetectorSpec::Flipflop(self.flipflop),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    /// Strictly increasing. Hz for couplings and FWHM, seconds for τ.
    pub values: Vec<f64>,
    pub topology: PaperTopologySpec,
    pub protocol: SimProtocol,
    pub thresholds: Thresholds,
    pub schemes: Vec<Scheme>,
    pub grid: GridSpec,
    /// Robustness-filter radius, Hz.
    pub radius: f64,
    pub master_seed: u64,
    /// Reference evaluation time of the τ sweep.
    pub reference_tau: f64,
    /// Whether two Inconsistent cells match in the τ sweep.
    pub inconsistent_policy: InconsistentPolicy,
}

impl SweepSpec {
    /// Defaults: FWHM = 1 MHz, 100 × 100 grid over 470–670 MHz, 3 MHz radius,
    /// all three schemes, 100 µs τ reference.
    pub fn new(parameter: SweepParameter, values: Vec<f64>) -> Self {
        SweepSpec {
            parameter,
            values,
            topology: PaperTopologySpec { noise_fwhm: 1.0 * MHZ, ..Default::default() },
            protocol: SimProtocol::default(),
            thresholds: Thresholds::default(),
            schemes: Scheme::ALL.to_vec(),
            grid: GridSpec::square(470.0 * MHZ, 670.0 * MHZ, 100),
            radius: 3.0 * MHZ,
            master_seed: 0,
            reference_tau: 100.0 * MICROSECOND,
            inconsistent_policy: InconsistentPolicy::Match,
        }
    }

    fn validate(&self, expected: &[SweepParameter]) -> Result<(), SweepError> {
        if !expected.contains(&self.parameter) {
            return Err(SweepError::Spec(alloc::format!("cannot sweep {} here", self.parameter)));
        }
        if self.values.is_empty() {
            return Err(SweepError::Spec("no sweep values".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) || self.values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SweepError::Spec("sweep values must be finite and strictly increasing".into()));
        }
        if self.schemes.is_empty() {
            return Err(SweepError::Spec("no detection scheme selected".into()));
        }
        Ok(())
    }

    fn schemes_for(&self) -> Vec<Scheme> {
        match self.parameter {
            SweepParameter::EpsilonV => self.schemes.iter().copied().filter(|&s| s == Scheme::Variance).collect(),
            SweepParameter::EpsilonCounter => {
                self.schemes.iter().copied().filter(|&s| s != Scheme::Variance).collect()
            }
            _ => self.schemes.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub scheme: Scheme,
    pub pattern_count: usize,
    /// Only for τ sweeps: agreement with the reference map, percent.
    pub matching_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Rows of one scheme, in sweep order.
    pub fn series(&self, scheme: Scheme) -> impl Iterator<Item = &SweepRow> + '_ {
        self.rows.iter().filter(move |r| r.scheme == scheme)
    }

    pub fn count_at(&self, scheme: Scheme, value: f64) -> Option<usize> {
        self.series(scheme).find(|r| r.value == value).map(|r| r.pattern_count)
    }
}

fn count_rows(
    raw: &RawGrid,
    value: f64,
    schemes: &[Scheme],
    thresholds: &Thresholds,
    radius: f64,
    rows: &mut Vec<SweepRow>,
) -> Result<(), SweepError> {
    for &scheme in schemes {
        let map = raw.to_map(&thresholds.detector(scheme), 0)?;
        let pattern_count = filtered_pattern_count(&map, radius)?.count;
        rows.push(SweepRow { value, scheme, pattern_count, matching_pct: None });
    }
    Ok(())
}

/// Pattern counts versus `k_ic` or `k_cc`; the other coupling stays at its topology value.
pub fn sweep_coupling<E: Executor>(spec: &SweepSpec, exec: &E) -> Result<SweepResult, SweepError> {
    spec.validate(&[SweepParameter::KIc, SweepParameter::KCc])?;
    let mut rows = Vec::new();
    for &value in &spec.values {
        let mut topology = spec.topology.clone();
        match spec.parameter {
            SweepParameter::KIc => topology.k_ic = value,
            _ => topology.k_cc = value,
        }
        let network = build_paper_network(&topology)?;
        let raw = RawGrid::simulate(&network, &spec.protocol, &spec.grid, spec.master_seed, &[spec.protocol.tau], exec)?;
        count_rows(&raw, value, &spec.schemes, &spec.thresholds, spec.radius, &mut rows)?;
    }
    Ok(SweepResult { spec: spec.clone(), rows })
}

/// Pattern counts versus phase-noise FWHM.
pub fn sweep_noise<E: Executor>(spec: &SweepSpec, exec: &E) -> Result<SweepResult, SweepError> {
    spec.validate(&[SweepParameter::Fwhm])?;
    let mut rows = Vec::new();
    for &value in &spec.values {
        let topology = PaperTopologySpec { noise_fwhm: value, ..spec.topology.clone() };
        let network = build_paper_network(&topology)?;
        let raw = RawGrid::simulate(&network, &spec.protocol, &spec.grid, spec.master_seed, &[spec.protocol.tau], exec)?;
        count_rows(&raw, value, &spec.schemes, &spec.thresholds, spec.radius, &mut rows)?;
    }
    Ok(SweepResult { spec: spec.clone(), rows })
}

/// Simulates the shared raw grid a threshold sweep thresholds.
pub fn threshold_raw_grid<E: Executor>(spec: &SweepSpec, exec: &E) -> Result<RawGrid, SweepError> {
    let network = build_paper_network(&spec.topology)?;
    Ok(RawGrid::simulate(&network, &spec.protocol, &spec.grid, spec.master_seed, &[spec.protocol.tau], exec)?)
}

/// Pattern counts versus `ε_v` (variance) or the counter threshold (both counters).
pub fn sweep_threshold<E: Executor>(spec: &SweepSpec, exec: &E) -> Result<SweepResult, SweepError> {
    spec.validate(&[SweepParameter::EpsilonV, SweepParameter::EpsilonCounter])?;
    let raw = threshold_raw_grid(spec, exec)?;
    sweep_threshold_on(spec, &raw)
}

/// Threshold sweep over an existing raw grid.
pub fn sweep_threshold_on(spec: &SweepSpec, raw: &RawGrid) -> Result<SweepResult, SweepError> {
    spec.validate(&[SweepParameter::EpsilonV, SweepParameter::EpsilonCounter])?;
    if spec.parameter == SweepParameter::EpsilonCounter
        && spec.values.iter().any(|&v| v < 0.0 || v != libm::floor(v))
    {
        return Err(SweepError::Spec("counter thresholds must be non-negative integers".into()));
    }
    let schemes = spec.schemes_for();
    let mut rows = Vec::new();
    for &value in &spec.values {
        let mut thresholds = spec.thresholds;
        match spec.parameter {
            SweepParameter::EpsilonV => thresholds.variance = value,
            _ => {
                thresholds.direct = value as u64;
                thresholds.flipflop = value as u64;
            }
        }
        count_rows(raw, value, &schemes, &thresholds, spec.radius, &mut rows)?;
    }
    Ok(SweepResult { spec: spec.clone(), rows })
}

/// Counter threshold that keeps the slip rate at 12 per µs: `max(1, round(12·τ/µs))`,
/// rounding halves up.
pub fn scaled_counter_threshold(tau: f64) -> u64 {
    let x = 12.0 * tau / MICROSECOND;
    (libm::floor(x + 0.5 + 1e-9) as u64).max(1)
}

/// Seed of the τ-sweep reference simulations, independent of the swept runs.
pub fn reference_seed(master_seed: u64) -> u64 {
    derive_seed(master_seed, 0x7265_6665_7265_6e63)
}

/// Simulates the long-τ reference grid of a τ sweep.
pub fn tau_reference_grid<E: Executor>(spec: &SweepSpec, exec: &E) -> Result<RawGrid, SweepError> {
    let network = build_paper_network(&spec.topology)?;
    Ok(RawGrid::simulate(
        &network,
        &spec.protocol,
        &spec.grid,
        reference_seed(spec.master_seed),
        &[spec.reference_tau],
        exec,
    )?)
}

/// Simulates the nested-window grid a τ sweep thresholds.
pub fn tau_sweep_grid<E: Executor>(spec: &SweepSpec, exec: &E) -> Result<RawGrid, SweepError> {
    spec.validate(&[SweepParameter::Tau])?;
    let network = build_paper_network(&spec.topology)?;
    Ok(RawGrid::simulate(&network, &spec.protocol, &spec.grid, spec.master_seed, &spec.values, exec)?)
}

/// Matching percentage against the reference map and pattern count per τ.
///
/// All windows open after the same cool-down, so one simulation per run
/// serves every τ. Counter thresholds follow [`scaled_counter_threshold`];
/// the variance threshold stays fixed.
pub fn sweep_tau<E: Executor>(
    spec: &SweepSpec,
    exec: &E,
    reference: Option<&RawGrid>,
) -> Result<SweepResult, SweepError> {
    let computed;
    let reference = match reference {
        Some(r) => r,
        None => {
            computed = tau_reference_grid(spec, exec)?;
            &computed
        }
    };
    let raw = tau_sweep_grid(spec, exec)?;
    sweep_tau_on(spec, &raw, reference)
}

/// τ sweep over existing sweep and reference grids.
pub fn sweep_tau_on(spec: &SweepSpec, raw: &RawGrid, reference: &RawGrid) -> Result<SweepResult, SweepError> {
    spec.validate(&[SweepParameter::Tau])?;
    if reference.grid != raw.grid || reference.taus.len() != 1 {
        return Err(SweepError::Spec("reference must be a single-window grid on the sweep grid".into()));
    }
    if raw.taus != spec.values {
        return Err(SweepError::Spec("sweep grid windows do not match the sweep values".into()));
    }
    let detector_at = |scheme: Scheme, tau: f64| match scheme {
        Scheme::Variance => DetectorSpec::Variance(spec.thresholds.variance),
        Scheme::Direct => DetectorSpec::Direct(scaled_counter_threshold(tau)),
        Scheme::Flipflop => DetectorSpec::Flipflop(scaled_counter_threshold(tau)),
    };
    let mut rows = Vec::new();
    for &scheme in &spec.schemes {
        let ref_map = reference.to_map(&detector_at(scheme, reference.taus[0]), 0)?;
        for (w, &tau) in spec.values.iter().enumerate() {
            let map = raw.to_map(&detector_at(scheme, tau), w)?;
            let pattern_count = filtered_pattern_count(&map, spec.radius)?.count;
            let pct = map_match(&map, &ref_map, spec.inconsistent_policy)?;
            rows.push(SweepRow { value: tau, scheme, pattern_count, matching_pct: Some(pct) });
        }
    }
    // keep rows grouped by value, then scheme, like the other sweeps
    rows.sort_by(|a, b| a.value.total_cmp(&b.value).then(a.scheme.cmp(&b.scheme)));
    Ok(SweepResult { spec: spec.clone(), rows })
}
