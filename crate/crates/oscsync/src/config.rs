//! Run configuration shared by every subcommand, and the unit-aware value
//! parsers used at the command line.
//!
//! A configuration is resolved in layers: the defaults of the command, then
//! an optional JSON file (merged key by key, so it may be partial), then
//! command-line flags. The fully resolved value is what manifests record.

use std::str::FromStr;

use oscsync_core::detectors::Scheme;
use oscsync_core::readout::{GridSpec, InconsistentPolicy, SimProtocol};
use oscsync_core::sweeps::{SweepParameter, Thresholds};
use oscsync_core::{PaperTopologySpec, MHZ, MICROSECOND};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::linewidth::LinewidthOptions;

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("cannot parse {what} from {input:?}")]
    Value { what: &'static str, input: String },
}

fn bad(what: &'static str, input: &str) -> ParseError {
    ParseError::Value { what, input: input.to_string() }
}

fn with_suffix(s: &str, what: &'static str, units: &[(&str, f64)]) -> Result<f64, ParseError> {
    let t = s.trim();
    let (num, scale) = units
        .iter()
        .find_map(|&(u, k)| t.strip_suffix(u).map(|n| (n.trim_end(), k)))
        .unwrap_or((t, 1.0));
    let x: f64 = num.parse().map_err(|_| bad(what, s))?;
    if !x.is_finite() {
        return Err(bad(what, s));
    }
    Ok(x * scale)
}

/// Frequency in Hz; accepts `GHz`, `MHz`, `kHz` and `Hz` suffixes.
pub fn parse_hz(s: &str) -> Result<f64, ParseError> {
    with_suffix(s, "frequency", &[("GHz", 1e9), ("MHz", MHZ), ("kHz", 1e3), ("Hz", 1.0)])
}

/// Duration in seconds; accepts `us`, `µs`, `ns`, `ps`, `ms` and `s` suffixes.
pub fn parse_seconds(s: &str) -> Result<f64, ParseError> {
    with_suffix(
        s,
        "duration",
        &[("µs", MICROSECOND), ("us", MICROSECOND), ("ns", 1e-9), ("ps", 1e-12), ("ms", 1e-3), ("s", 1.0)],
    )
}

/// Comma-separated list of frequencies.
pub fn parse_hz_list(s: &str) -> Result<Vec<f64>, ParseError> {
    s.split(',').map(parse_hz).collect()
}

/// `NxM` or `N` (square) cell counts.
pub fn parse_grid(s: &str) -> Result<(usize, usize), ParseError> {
    let parse = |t: &str| t.trim().parse::<usize>().ok().filter(|&n| n > 0);
    match s.split_once(['x', 'X']) {
        Some((a, b)) => parse(a).zip(parse(b)).ok_or_else(|| bad("grid", s)),
        None => parse(s).map(|n| (n, n)).ok_or_else(|| bad("grid", s)),
    }
}

/// `start:stop:step` frequency range.
pub fn parse_range(s: &str) -> Result<InputRange, ParseError> {
    let parts: Vec<&str> = s.split(':').collect();
    let [start, stop, step] = parts[..] else {
        return Err(bad("range start:stop:step", s));
    };
    Ok(InputRange { start: parse_hz(start)?, stop: parse_hz(stop)?, step: parse_hz(step)? })
}

/// `min:max` frequency span.
pub fn parse_span(s: &str) -> Result<(f64, f64), ParseError> {
    let (a, b) = s.split_once(':').ok_or_else(|| bad("span min:max", s))?;
    Ok((parse_hz(a)?, parse_hz(b)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub parameter: SweepParameter,
    /// Empty means the parameter's default values.
    pub values: Vec<f64>,
    /// Window of the τ sweep's reference map.
    pub reference_tau: f64,
    pub inconsistent_policy: InconsistentPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceOptions {
    pub duration: f64,
    pub stride: u64,
}

/// Linewidth estimate; FWHM, step and seed come from the topology and `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinewidthConfig {
    pub observation: f64,
    /// Natural frequency of the isolated oscillator, Hz.
    pub frequency: f64,
    pub segments: usize,
    /// Integration steps per envelope sample.
    pub block: u64,
}

/// Everything a subcommand needs to reproduce its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub topology: PaperTopologySpec,
    pub protocol: SimProtocol,
    pub thresholds: Thresholds,
    /// Scheme of `map`.
    pub detector: Scheme,
    /// Schemes evaluated by sweeps.
    pub schemes: Vec<Scheme>,
    pub grid: GridSpec,
    /// Robustness-filter radius, Hz.
    pub radius: f64,
    pub seed: u64,
    pub sweep: SweepOptions,
    pub trace: TraceOptions,
    /// Input sweep of `sweep-1d`.
    pub input_range: InputRange,
    pub linewidth: LinewidthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            topology: PaperTopologySpec::default(),
            protocol: SimProtocol::default(),
            thresholds: Thresholds::default(),
            detector: Scheme::Direct,
            schemes: Scheme::ALL.to_vec(),
            grid: GridSpec::default(),
            radius: 3.0 * MHZ,
            seed: 0,
            sweep: SweepOptions {
                parameter: SweepParameter::KIc,
                values: Vec::new(),
                reference_tau: 100.0 * MICROSECOND,
                inconsistent_policy: InconsistentPolicy::Match,
            },
            trace: TraceOptions { duration: 1.0 * MICROSECOND, stride: 1 },
            input_range: InputRange { start: 470.0 * MHZ, stop: 670.0 * MHZ, step: 1.0 * MHZ },
            linewidth: LinewidthConfig {
                observation: 100.0 * MICROSECOND,
                frequency: LinewidthOptions::default().frequency,
                segments: LinewidthOptions::default().segments,
                block: LinewidthOptions::default().block,
            },
        }
    }
}

/// Subcommands that run something and therefore resolve a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SimulateTrace,
    #[serde(rename = "sweep-1d")]
    Sweep1d,
    Map,
    SweepCoupling,
    SweepNoise,
    SweepThreshold,
    SweepTau,
    Linewidth,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SimulateTrace => "simulate-trace",
            Command::Sweep1d => "sweep-1d",
            Command::Map => "map",
            Command::SweepCoupling => "sweep-coupling",
            Command::SweepNoise => "sweep-noise",
            Command::SweepThreshold => "sweep-threshold",
            Command::SweepTau => "sweep-tau",
            Command::Linewidth => "linewidth",
        }
    }
}

impl FromStr for Command {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(Value::String(s.to_string())).map_err(|_| bad("command", s))
    }
}

impl RunConfig {
    /// Defaults of `command`: sweeps run noisy (1 MHz) on a 100 × 100 grid,
    /// the τ sweep on 50 × 50, `sweep-1d` on the reduced two-core system.
    pub fn defaults_for(command: Command) -> Self {
        let mut c = RunConfig::default();
        let noisy = PaperTopologySpec { noise_fwhm: 1.0 * MHZ, ..Default::default() };
        let grid = |n| GridSpec::square(470.0 * MHZ, 670.0 * MHZ, n);
        match command {
            Command::SweepCoupling | Command::SweepThreshold => {
                c.topology = noisy;
                c.grid = grid(100);
                c.sweep.parameter =
                    if command == Command::SweepCoupling { SweepParameter::KIc } else { SweepParameter::EpsilonV };
            }
            Command::SweepNoise => {
                c.grid = grid(100);
                c.sweep.parameter = SweepParameter::Fwhm;
            }
            Command::SweepTau => {
                c.topology = noisy;
                c.grid = grid(50);
                c.sweep.parameter = SweepParameter::Tau;
            }
            Command::Sweep1d => {
                c.topology = PaperTopologySpec::reduced();
                c.topology.input_frequencies = vec![c.input_range.start];
            }
            Command::Linewidth => c.topology.noise_fwhm = 1.0 * MHZ,
            Command::SimulateTrace | Command::Map => {}
        }
        c
    }

    /// Merges a (possibly partial) JSON object over `self`.
    pub fn merged(&self, overlay: Value) -> Result<Self, serde_json::Error> {
        let mut base = serde_json::to_value(self)?;
        merge(&mut base, overlay);
        serde_json::from_value(base)
    }

    pub fn linewidth_options(&self) -> LinewidthOptions {
        LinewidthOptions {
            frequency: self.linewidth.frequency,
            dt: self.topology.dt,
            segments: self.linewidth.segments,
            block: self.linewidth.block,
            seed: self.seed,
        }
    }

    /// Sweep values, or the defaults of the swept parameter when none are set.
    pub fn sweep_values(&self) -> Vec<f64> {
        if !self.sweep.values.is_empty() {
            return self.sweep.values.clone();
        }
        let steps = |start: f64, step: f64, n: usize| (0..n).map(|i| start + step * i as f64).collect();
        match self.sweep.parameter {
            SweepParameter::KIc => steps(0.0, 2.0 * MHZ, 16),
            SweepParameter::KCc => steps(0.0, 1.0 * MHZ, 11),
            SweepParameter::Fwhm => steps(0.0, 0.5 * MHZ, 11),
            SweepParameter::EpsilonV => steps(0.05, 0.05, 10),
            SweepParameter::EpsilonCounter => steps(1.0, 1.0, 30),
            SweepParameter::Tau => steps(0.1 * MICROSECOND, 0.1 * MICROSECOND, 20),
        }
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
