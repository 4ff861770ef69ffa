//! Simulation core for weakly coupled Kuramoto oscillator networks used as
//! pattern recognizers.
//!
//! A small clique of *core* oscillators is driven by *input* oscillators whose
//! natural frequencies encode the stimulus. After a cool-down the network is
//! read out pairwise over an evaluation window with one of three schemes:
//!
//! * the variance of `sin(φn − φm)`,
//! * a signed *direct counter* of rising-edge differences,
//! * a *flip-flop counter* of edge alternation violations.
//!
//! The set of pairs judged quasi-synchronized is the network's output
//! ([`readout::PatternCode`]). Scanning the two input frequencies produces a
//! readout map; filtering and counting its regions measures how many input
//! classes the network can discriminate.
//!
//! The crate is `no_std` (it needs `alloc`). Parallel execution, file formats
//! and the command-line front end live in the companion `oscsync` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

mod batch;
pub mod calibration;
pub mod detectors;
pub mod exec;
pub mod integrator;
pub mod network;
mod normal;
pub mod readout;
pub mod rng;
pub mod sweeps;
mod trig;

pub use detectors::{DetectorSpec, PairReadout, RawValue, Scheme, SchmittLevels, SchmittTrigger};
pub use exec::{CellFailure, Executor, Sequential};
pub use integrator::{Integrator, NoiseModel, PhaseObserver, PhaseState, StepFrame};
pub use network::{build_paper_network, NetworkConfig, OscillatorParams, PaperTopologySpec, Role};
pub use readout::{
    Consensus, FilteredMap, GridAxis, GridSpec, MapCell, PatternCode, RawGrid, ReadoutMap,
    SimProtocol,
};
pub use rng::RngStream;

/// One megahertz in Hz.
pub const MHZ: f64 = 1.0e6;
/// One microsecond in seconds.
pub const MICROSECOND: f64 = 1.0e-6;
