//! Recognition protocol, readout maps, robustness filter and pattern counting.
//!
//! A map is built in two layers. [`RawGrid`] holds the raw detector
//! statistics of every repetition at every grid point, for all three schemes
//! and one or more evaluation windows. Thresholding a raw grid with a
//! [`DetectorSpec`] yields a [`ReadoutMap`] of consensus pattern codes, so
//! threshold and window sweeps reuse a single set of simulations.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::{run_batch, BatchSetup, LaneJob, LANES};
use crate::detectors::{
    core_pairs, DetectorError, DetectorSpec, RawValue, Scheme, SchmittLevels, WindowPlan, WindowStats,
};
use crate::exec::{CellFailure, Executor, Sequential};
use crate::integrator::{drift_of, steps_for, Integrator, RunError};
use crate::network::{ConfigError, NetworkConfig};
use crate::rng::{RngStream, StreamDomain};
use crate::{MHZ, MICROSECOND};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReadoutError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error("invalid protocol: {0}")]
    Protocol(String),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("maps are defined on different grids")]
    GridMismatch,
    #[error("filter radius must be a non-negative finite frequency, got {0} Hz")]
    Radius(f64),
    #[error("network has {0} core oscillators; pattern codes support at most 11")]
    TooManyCores(usize),
    #[error("cell ({ia}, {ib}) at fA = {fa} Hz, fB = {fb} Hz failed: {message}")]
    CellFailed { ia: usize, ib: usize, fa: f64, fb: f64, message: String },
    #[error("sweep point {index} at fA = {fa} Hz failed: {message}")]
    PointFailed { index: usize, fa: f64, message: String },
}

/// Bitmask over core pairs; bit `k` is the `k`-th pair in lexicographic order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatternCode(pub u64);

impl PatternCode {
    pub fn from_decisions<I: IntoIterator<Item = bool>>(decisions: I) -> Self {
        PatternCode(decisions.into_iter().enumerate().fold(0, |acc, (k, d)| acc | (d as u64) << k))
    }

    pub fn is_set(&self, pair_index: usize) -> bool {
        self.0 >> pair_index & 1 == 1
    }
}

impl fmt::Display for PatternCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Outcome of the repetitions at one input point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Consensus {
    Pattern(PatternCode),
    Inconsistent,
}

impl Consensus {
    /// Serialized form: the pattern code, or −1.
    pub fn code(&self) -> i64 {
        match self {
            Consensus::Pattern(p) => p.0 as i64,
            Consensus::Inconsistent => -1,
        }
    }

    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            -1 => Some(Consensus::Inconsistent),
            c if c >= 0 => Some(Consensus::Pattern(PatternCode(c as u64))),
            _ => None,
        }
    }

    pub fn pattern(&self) -> Option<PatternCode> {
        match self {
            Consensus::Pattern(p) => Some(*p),
            Consensus::Inconsistent => None,
        }
    }

    /// All-equal consensus over per-repetition codes.
    pub fn of<I: IntoIterator<Item = PatternCode>>(codes: I) -> Self {
        let mut it = codes.into_iter();
        match it.next() {
            Some(first) if it.all(|c| c == first) => Consensus::Pattern(first),
            _ => Consensus::Inconsistent,
        }
    }
}

impl Serialize for Consensus {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(self.code())
    }
}

impl<'de> Deserialize<'de> for Consensus {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let code = i64::deserialize(d)?;
        Consensus::from_code(code).ok_or_else(|| serde::de::Error::custom("pattern code must be >= -1"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapCell {
    /// `(f_A, f_B)` in Hz.
    pub input_frequencies: (f64, f64),
    pub consensus: Consensus,
}

/// Evenly spaced, inclusive axis of input frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl GridAxis {
    pub fn new(min: f64, max: f64, steps: usize) -> Self {
        GridAxis { min, max, steps }
    }

    pub fn value(&self, i: usize) -> f64 {
        if self.steps <= 1 {
            self.min
        } else {
            self.min + (self.max - self.min) * i as f64 / (self.steps - 1) as f64
        }
    }

    /// Spacing between neighbouring centres; infinite for a single-point axis.
    pub fn pitch(&self) -> f64 {
        if self.steps <= 1 {
            f64::INFINITY
        } else {
            (self.max - self.min) / (self.steps - 1) as f64
        }
    }

    fn validate(&self) -> Result<(), ReadoutError> {
        let ok = self.steps >= 1
            && self.min.is_finite()
            && self.max.is_finite()
            && self.min > 0.0
            && (self.max > self.min || (self.steps == 1 && self.max >= self.min));
        if ok {
            Ok(())
        } else {
            Err(ReadoutError::Grid(alloc::format!(
                "axis {}..{} Hz with {} steps",
                self.min,
                self.max,
                self.steps
            )))
        }
    }
}

/// Grid over `(f_A, f_B)`; cells are row-major with `f_A` as the row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub a: GridAxis,
    pub b: GridAxis,
}

impl Default for GridSpec {
    /// 470–670 MHz on both axes, 200 × 200.
    fn default() -> Self {
        Self::square(470.0 * MHZ, 670.0 * MHZ, 200)
    }
}

impl GridSpec {
    pub fn square(min: f64, max: f64, steps: usize) -> Self {
        let axis = GridAxis::new(min, max, steps);
        GridSpec { a: axis, b: axis }
    }

    pub fn len(&self) -> usize {
        self.a.steps * self.b.steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index / self.b.steps, index % self.b.steps)
    }

    pub fn point(&self, index: usize) -> (f64, f64) {
        let (ia, ib) = self.coords(index);
        (self.a.value(ia), self.b.value(ib))
    }

    pub fn validate(&self) -> Result<(), ReadoutError> {
        self.a.validate()?;
        self.b.validate()
    }
}

/// Timing and repetition of the recognition protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimProtocol {
    /// Seconds excluded from detection at the start of every run.
    pub cooldown: f64,
    /// Evaluation window in seconds.
    pub tau: f64,
    pub repetitions: u32,
    pub schmitt: SchmittLevels,
    /// Hardware-style counter saturation; `None` counts without limit.
    pub counter_saturation: Option<u64>,
}

impl Default for SimProtocol {
    /// 0.5 µs cool-down, τ = 0.5 µs, 10 repetitions.
    fn default() -> Self {
        SimProtocol {
            cooldown: 0.5 * MICROSECOND,
            tau: 0.5 * MICROSECOND,
            repetitions: 10,
            schmitt: SchmittLevels::default(),
            counter_saturation: None,
        }
    }
}

impl SimProtocol {
    /// Simulated time per run.
    pub fn total(&self) -> f64 {
        self.cooldown + self.tau
    }

    pub fn validate(&self, dt: f64) -> Result<(), ReadoutError> {
        self.plan(dt, &[self.tau]).map(|_| ())
    }

    /// Window plan with one window per entry of `taus` (seconds, strictly increasing).
    pub fn plan(&self, dt: f64, taus: &[f64]) -> Result<WindowPlan, ReadoutError> {
        if self.repetitions == 0 {
            return Err(ReadoutError::Protocol("at least one repetition is required".into()));
        }
        self.schmitt.validate()?;
        let cooldown_steps = if self.cooldown == 0.0 { 0 } else { steps_for(self.cooldown, dt)? };
        if taus.is_empty() {
            return Err(ReadoutError::Protocol("no evaluation window".into()));
        }
        let window_steps = taus.iter().map(|&t| steps_for(t, dt)).collect::<Result<Vec<_>, _>>()?;
        if window_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ReadoutError::Protocol("evaluation windows must be strictly increasing".into()));
        }
        Ok(WindowPlan { cooldown_steps, window_steps })
    }
}

/// Raw statistics of all repetitions at one grid point.
///
/// Layout: `[(rep * n_windows + window) * n_pairs + pair]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRaw {
    pub n_pairs: usize,
    pub n_windows: usize,
    pub repetitions: usize,
    pub variance: Vec<f64>,
    pub direct: Vec<i64>,
    pub flipflop: Vec<u64>,
}

impl PointRaw {
    fn with_capacity(n_pairs: usize, n_windows: usize, repetitions: usize) -> Self {
        let len = n_pairs * n_windows * repetitions;
        PointRaw {
            n_pairs,
            n_windows,
            repetitions,
            variance: Vec::with_capacity(len),
            direct: Vec::with_capacity(len),
            flipflop: Vec::with_capacity(len),
        }
    }

    fn push(&mut self, stats: &WindowStats) {
        self.variance.extend_from_slice(&stats.variance);
        self.direct.extend_from_slice(&stats.direct);
        self.flipflop.extend_from_slice(&stats.flipflop);
    }

    pub fn raw(&self, scheme: Scheme, rep: usize, window: usize, pair: usize) -> RawValue {
        let i = (rep * self.n_windows + window) * self.n_pairs + pair;
        match scheme {
            Scheme::Variance => RawValue::Variance(self.variance[i]),
            Scheme::Direct => RawValue::Direct(self.direct[i]),
            Scheme::Flipflop => RawValue::Flipflop(self.flipflop[i]),
        }
    }

    pub fn code(&self, detector: &DetectorSpec, rep: usize, window: usize) -> PatternCode {
        let scheme = detector.scheme();
        PatternCode::from_decisions(
            (0..self.n_pairs).map(|k| detector.is_synchronized(self.raw(scheme, rep, window, k))),
        )
    }

    pub fn consensus(&self, detector: &DetectorSpec, window: usize) -> Consensus {
        Consensus::of((0..self.repetitions).map(|r| self.code(detector, r, window)))
    }
}

/// Simulates every repetition at one input point.
///
/// Repetition `r` draws its initial phases and noise from
/// `RngStream::for_run(master_seed, domain, index, r)`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_point(
    template: &NetworkConfig,
    inputs: &[f64],
    protocol: &SimProtocol,
    plan: &WindowPlan,
    master_seed: u64,
    domain: StreamDomain,
    index: u64,
) -> Result<PointRaw, ReadoutError> {
    check_core_count(template)?;
    let drift = drift_of(&template.with_input_frequencies(inputs)?);
    let mut points = simulate_points(template, &[drift], &[index], protocol, plan, master_seed, domain, &Sequential)
        .map_err(|f| ReadoutError::Protocol(f.message))?;
    Ok(points.pop().expect("one point in, one point out"))
}

fn check_core_count(network: &NetworkConfig) -> Result<(), ReadoutError> {
    match network.n_core() {
        n if n > 11 => Err(ReadoutError::TooManyCores(n)),
        _ => Ok(()),
    }
}

/// Simulates all repetitions of many points, `LANES` runs at a time.
///
/// Point `p` has per-oscillator drifts `drifts[p]` and stream index
/// `indices[p]`. A failure reports the position of the affected point.
#[allow(clippy::too_many_arguments)]
fn simulate_points<E: Executor>(
    template: &NetworkConfig,
    drifts: &[Vec<f64>],
    indices: &[u64],
    protocol: &SimProtocol,
    plan: &WindowPlan,
    master_seed: u64,
    domain: StreamDomain,
    exec: &E,
) -> Result<Vec<PointRaw>, CellFailure> {
    let n_core = template.n_core();
    let integrator = Integrator::new(template);
    let setup = BatchSetup {
        integrator: &integrator,
        n_core,
        levels: protocol.schmitt,
        plan,
        saturation: protocol.counter_saturation,
    };
    let reps = protocol.repetitions as usize;
    let n_jobs = drifts.len() * reps;
    let chunks = exec
        .map_indexed(n_jobs.div_ceil(LANES), |c| {
            let jobs: Vec<LaneJob> = (c * LANES..n_jobs.min((c + 1) * LANES))
                .map(|j| LaneJob {
                    drift: drifts[j / reps].clone(),
                    stream: RngStream::for_run(master_seed, domain, indices[j / reps], (j % reps) as u32),
                })
                .collect();
            run_batch(&setup, &jobs)
        })
        .map_err(|f| CellFailure { index: f.index * LANES / reps, message: f.message })?;
    let n_pairs = n_core * (n_core - 1) / 2;
    let mut runs = chunks.into_iter().flatten();
    let points = (0..drifts.len())
        .map(|_| {
            let mut point = PointRaw::with_capacity(n_pairs, plan.window_steps.len(), reps);
            for windows in runs.by_ref().take(reps) {
                for w in &windows {
                    point.push(w);
                }
            }
            point
        })
        .collect();
    Ok(points)
}

/// Runs the protocol at one point and returns its consensus cell.
///
/// `cell_index` addresses the random streams, so the result equals the
/// corresponding cell of a map built with the same master seed.
pub fn classify_point(
    template: &NetworkConfig,
    protocol: &SimProtocol,
    detector: &DetectorSpec,
    point: (f64, f64),
    master_seed: u64,
    cell_index: u64,
) -> Result<MapCell, ReadoutError> {
    detector.validate()?;
    let plan = protocol.plan(template.dt(), &[protocol.tau])?;
    let raw = simulate_point(
        template,
        &[point.0, point.1],
        protocol,
        &plan,
        master_seed,
        StreamDomain::MapCell,
        cell_index,
    )?;
    Ok(MapCell { input_frequencies: point, consensus: raw.consensus(detector, 0) })
}

/// Everything needed to regenerate a map bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMetadata {
    pub detector: DetectorSpec,
    pub network: NetworkConfig,
    pub protocol: SimProtocol,
    pub grid: GridSpec,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutMap {
    pub meta: MapMetadata,
    pub cells: Vec<MapCell>,
}

impl ReadoutMap {
    pub fn grid(&self) -> &GridSpec {
        &self.meta.grid
    }

    pub fn inconsistent_fraction(&self) -> f64 {
        if self.cells.is_empty() {
            return 0.0;
        }
        let n = self.cells.iter().filter(|c| c.consensus == Consensus::Inconsistent).count();
        n as f64 / self.cells.len() as f64
    }
}

/// Raw statistics over a whole grid, for one or several nested windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawGrid {
    pub network: NetworkConfig,
    pub protocol: SimProtocol,
    pub grid: GridSpec,
    pub master_seed: u64,
    /// Window lengths in seconds; window `w` of every point spans `taus[w]`.
    pub taus: Vec<f64>,
    pub points: Vec<PointRaw>,
}

impl RawGrid {
    /// Simulates all cells. The result does not depend on the executor.
    pub fn simulate<E: Executor>(
        network: &NetworkConfig,
        protocol: &SimProtocol,
        grid: &GridSpec,
        master_seed: u64,
        taus: &[f64],
        exec: &E,
    ) -> Result<Self, ReadoutError> {
        grid.validate()?;
        let plan = protocol.plan(network.dt(), taus)?;
        if network.input_indices().count() != 2 {
            return Err(ReadoutError::Grid("readout maps need exactly two input oscillators".into()));
        }
        check_core_count(network)?;
        let cell_failed = |index: usize, message: String| {
            let (ia, ib) = grid.coords(index);
            let (fa, fb) = grid.point(index);
            ReadoutError::CellFailed { ia, ib, fa, fb, message }
        };
        let drifts = (0..grid.len())
            .map(|i| {
                let (fa, fb) = grid.point(i);
                network.with_input_frequencies(&[fa, fb]).map(|net| drift_of(&net))
            })
            .enumerate()
            .map(|(i, r)| r.map_err(|e| cell_failed(i, alloc::format!("{e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let indices: Vec<u64> = (0..grid.len() as u64).collect();
        let points = simulate_points(network, &drifts, &indices, protocol, &plan, master_seed, StreamDomain::MapCell, exec)
            .map_err(|CellFailure { index, message }| cell_failed(index, message))?;
        Ok(RawGrid {
            network: network.clone(),
            protocol: *protocol,
            grid: *grid,
            master_seed,
            taus: taus.to_vec(),
            points,
        })
    }

    pub fn n_simulations(&self) -> usize {
        self.points.len() * self.protocol.repetitions as usize
    }

    /// Thresholds window `window` with `detector`.
    pub fn to_map(&self, detector: &DetectorSpec, window: usize) -> Result<ReadoutMap, ReadoutError> {
        detector.validate()?;
        let tau = *self
            .taus
            .get(window)
            .ok_or_else(|| ReadoutError::Protocol(alloc::format!("no window {window}")))?;
        let cells = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| MapCell { input_frequencies: self.grid.point(i), consensus: p.consensus(detector, window) })
            .collect();
        Ok(ReadoutMap {
            meta: MapMetadata {
                detector: *detector,
                network: self.network.clone(),
                protocol: SimProtocol { tau, ..self.protocol },
                grid: self.grid,
                master_seed: self.master_seed,
            },
            cells,
        })
    }
}

/// Builds a readout map: [`classify_point`] over every grid cell.
pub fn build_map<E: Executor>(
    network: &NetworkConfig,
    protocol: &SimProtocol,
    detector: &DetectorSpec,
    grid: &GridSpec,
    master_seed: u64,
    exec: &E,
) -> Result<ReadoutMap, ReadoutError> {
    detector.validate()?;
    RawGrid::simulate(network, protocol, grid, master_seed, &[protocol.tau], exec)?.to_map(detector, 0)
}

/// Robustness filter result: which cells survive.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredMap {
    pub radius: f64,
    pub kept: Vec<bool>,
    /// The radius is below the grid pitch, so every consistent cell is kept.
    pub degenerate: bool,
}

impl FilteredMap {
    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }
}

/// Keeps a cell iff every cell whose centre lies within `radius` Hz of it
/// (disk clipped at the map boundary) is consistent with the same code.
pub fn robust_filter(map: &ReadoutMap, radius: f64) -> Result<FilteredMap, ReadoutError> {
    if !(radius.is_finite() && radius >= 0.0) {
        return Err(ReadoutError::Radius(radius));
    }
    let grid = map.grid();
    let (pa, pb) = (grid.a.pitch(), grid.b.pitch());
    let r2 = radius * radius * (1.0 + 1e-9);
    let reach = |pitch: f64| if pitch.is_finite() { libm::floor(radius / pitch) as isize } else { 0 };
    let (ra, rb) = (reach(pa), reach(pb));
    let mut offsets = Vec::new();
    for da in -ra..=ra {
        for db in -rb..=rb {
            let d2 = sq(da as f64 * if ra > 0 { pa } else { 0.0 }) + sq(db as f64 * if rb > 0 { pb } else { 0.0 });
            if (da, db) != (0, 0) && d2 <= r2 {
                offsets.push((da, db));
            }
        }
    }
    let (na, nb) = (grid.a.steps as isize, grid.b.steps as isize);
    let kept = (0..map.cells.len())
        .map(|i| {
            let Consensus::Pattern(code) = map.cells[i].consensus else {
                return false;
            };
            let (ia, ib) = grid.coords(i);
            offsets.iter().all(|&(da, db)| {
                let (ja, jb) = (ia as isize + da, ib as isize + db);
                if ja < 0 || jb < 0 || ja >= na || jb >= nb {
                    return true;
                }
                map.cells[(ja * nb + jb) as usize].consensus == Consensus::Pattern(code)
            })
        })
        .collect();
    Ok(FilteredMap { radius, kept, degenerate: offsets.is_empty() })
}

fn sq(x: f64) -> f64 {
    x * x
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternCount {
    pub count: usize,
    /// Ascending.
    pub codes: Vec<PatternCode>,
}

/// Distinct pattern codes among the cells kept by the filter.
pub fn count_patterns(map: &ReadoutMap, filtered: &FilteredMap) -> PatternCount {
    let mut codes: Vec<PatternCode> = map
        .cells
        .iter()
        .zip(&filtered.kept)
        .filter(|(_, &k)| k)
        .filter_map(|(c, _)| c.consensus.pattern())
        .collect();
    codes.sort_unstable();
    codes.dedup();
    PatternCount { count: codes.len(), codes }
}

/// Filter at `radius` and count in one go.
pub fn filtered_pattern_count(map: &ReadoutMap, radius: f64) -> Result<PatternCount, ReadoutError> {
    Ok(count_patterns(map, &robust_filter(map, radius)?))
}

/// Whether two Inconsistent cells count as matching in [`map_match`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InconsistentPolicy {
    /// Inconsistent == Inconsistent is a match.
    #[default]
    Match,
    /// Cells inconsistent in both maps are left out of the percentage.
    Exclude,
}

/// Percentage of cells whose consensus values agree.
pub fn map_match(a: &ReadoutMap, b: &ReadoutMap, policy: InconsistentPolicy) -> Result<f64, ReadoutError> {
    if a.grid() != b.grid() || a.cells.len() != b.cells.len() {
        return Err(ReadoutError::GridMismatch);
    }
    let mut total = 0usize;
    let mut equal = 0usize;
    for (x, y) in a.cells.iter().zip(&b.cells) {
        let both_inconsistent = x.consensus == Consensus::Inconsistent && y.consensus == Consensus::Inconsistent;
        if both_inconsistent && policy == InconsistentPolicy::Exclude {
            continue;
        }
        total += 1;
        equal += (x.consensus == y.consensus) as usize;
    }
    Ok(if total == 0 { 100.0 } else { 100.0 * equal as f64 / total as f64 })
}

/// Pair list matching the bit layout of [`PatternCode`] for `n_core` cores.
pub fn pattern_pairs(n_core: usize) -> Vec<(usize, usize)> {
    core_pairs(n_core)
}
