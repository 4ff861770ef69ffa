//! Pairwise quasi-synchronization readout.
//!
//! Three schemes judge whether two oscillators are quasi-synchronized over an
//! evaluation window:
//!
//! * **variance**: `Var(sin(φn − φm)) < ε_v`, sampled every step;
//! * **direct counter**: each oscillator's `sin φ` is digitized by a Schmitt
//!   trigger, rising edges of `n` increment and of `m` decrement a signed
//!   counter, synchronized iff `|ΔN| < ε_d`;
//! * **flip-flop counter**: counts each time two consecutive rising edges come
//!   from the same oscillator, synchronized iff `count < ε_f`.
//!
//! The batch functions ([`variance_detector`], [`direct_counter_detector`],
//! [`flipflop_counter_detector`]) take whole streams. [`PairwiseObserver`]
//! evaluates all three schemes for every core pair in one pass over a
//! simulation, snapshotting at several window lengths.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrator::{ObserverError, PhaseObserver, StepFrame};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectorError {
    #[error("evaluation window is empty")]
    EmptyWindow,
    #[error("Schmitt levels must satisfy -1 < low < high < 1, got low={low}, high={high}")]
    SchmittLevels { low: f64, high: f64 },
    #[error("variance threshold must lie in [0, 0.5], got {0}")]
    VarianceThreshold(f64),
    #[error("unknown detection scheme `{0}`")]
    UnknownScheme(alloc::string::String),
}

/// Hysteresis levels of the digitizing comparator, in units of the unit-amplitude signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchmittLevels {
    pub low: f64,
    pub high: f64,
}

impl Default for SchmittLevels {
    fn default() -> Self {
        SchmittLevels { low: -0.5, high: 0.5 }
    }
}

impl SchmittLevels {
    pub fn new(low: f64, high: f64) -> Result<Self, DetectorError> {
        let levels = SchmittLevels { low, high };
        levels.validate()?;
        Ok(levels)
    }

    /// Symmetric hysteresis `±theta`.
    pub fn symmetric(theta: f64) -> Result<Self, DetectorError> {
        Self::new(-theta, theta)
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        let ok = self.low > -1.0 && self.low < self.high && self.high < 1.0;
        if ok {
            Ok(())
        } else {
            Err(DetectorError::SchmittLevels { low: self.low, high: self.high })
        }
    }
}

/// Comparator with hysteresis that reports low→high transitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchmittTrigger {
    levels: SchmittLevels,
    high: bool,
}

impl SchmittTrigger {
    /// Starts high only if `first` is already above the high level.
    pub fn new(levels: SchmittLevels, first: f64) -> Self {
        SchmittTrigger { levels, high: first > levels.high }
    }

    pub fn is_high(&self) -> bool {
        self.high
    }

    /// Feeds one sample; returns `true` on a rising edge.
    #[inline(always)]
    pub fn update(&mut self, x: f64) -> bool {
        if self.high {
            if x < self.levels.low {
                self.high = false;
            }
            false
        } else if x > self.levels.high {
            self.high = true;
            true
        } else {
            false
        }
    }
}

/// Digitizes a sampled signal and returns the sample indices of rising edges.
///
/// The first sample only sets the initial level and never produces an edge.
pub fn digitize_and_detect_edges<I>(signal: I, levels: SchmittLevels) -> Vec<u64>
where
    I: IntoIterator<Item = f64>,
{
    let mut it = signal.into_iter();
    let Some(first) = it.next() else {
        return Vec::new();
    };
    let mut trigger = SchmittTrigger::new(levels, first);
    it.zip(1u64..).filter_map(|(x, i)| trigger.update(x).then_some(i)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Variance,
    Direct,
    Flipflop,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Variance, Scheme::Direct, Scheme::Flipflop];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Variance => "variance",
            Scheme::Direct => "direct",
            Scheme::Flipflop => "flipflop",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = DetectorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "variance" => Ok(Scheme::Variance),
            "direct" | "direct_counter" | "direct-counter" => Ok(Scheme::Direct),
            "flipflop" | "flip-flop" | "flipflop_counter" | "flipflop-counter" => Ok(Scheme::Flipflop),
            other => Err(DetectorError::UnknownScheme(other.into())),
        }
    }
}

/// Detection scheme together with its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", content = "threshold", rename_all = "lowercase")]
pub enum DetectorSpec {
    /// `ε_v ∈ [0, 0.5]`.
    Variance(f64),
    /// `ε_d`, compared against `|ΔN|`.
    Direct(u64),
    /// `ε_f`, compared against the violation count.
    Flipflop(u64),
}

impl DetectorSpec {
    pub const DEFAULT_VARIANCE: f64 = 0.28;
    pub const DEFAULT_DIRECT: u64 = 6;
    pub const DEFAULT_FLIPFLOP: u64 = 6;

    /// The calibrated defaults for each scheme.
    pub fn default_for(scheme: Scheme) -> Self {
        match scheme {
            Scheme::Variance => DetectorSpec::Variance(Self::DEFAULT_VARIANCE),
            Scheme::Direct => DetectorSpec::Direct(Self::DEFAULT_DIRECT),
            Scheme::Flipflop => DetectorSpec::Flipflop(Self::DEFAULT_FLIPFLOP),
        }
    }

    pub fn scheme(&self) -> Scheme {
        match self {
            DetectorSpec::Variance(_) => Scheme::Variance,
            DetectorSpec::Direct(_) => Scheme::Direct,
            DetectorSpec::Flipflop(_) => Scheme::Flipflop,
        }
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        match *self {
            DetectorSpec::Variance(eps) if !(0.0..=0.5).contains(&eps) => {
                Err(DetectorError::VarianceThreshold(eps))
            }
            _ => Ok(()),
        }
    }

    /// Applies the threshold (strict inequality in every scheme).
    pub fn is_synchronized(&self, raw: RawValue) -> bool {
        match (*self, raw) {
            (DetectorSpec::Variance(eps), RawValue::Variance(v)) => v < eps,
            (DetectorSpec::Direct(eps), RawValue::Direct(d)) => d.unsigned_abs() < eps,
            (DetectorSpec::Flipflop(eps), RawValue::Flipflop(c)) => c < eps,
            (spec, raw) => panic!("{spec:?} cannot threshold {raw:?}"),
        }
    }
}

/// Statistic produced by one scheme before thresholding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RawValue {
    Variance(f64),
    /// Signed `ΔN = N_n − N_m`.
    Direct(i64),
    Flipflop(u64),
}

impl RawValue {
    /// The quantity compared with the threshold: variance, `|ΔN|` or count.
    pub fn magnitude(&self) -> f64 {
        match *self {
            RawValue::Variance(v) => v,
            RawValue::Direct(d) => d.unsigned_abs() as f64,
            RawValue::Flipflop(c) => c as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairReadout {
    pub pair: (usize, usize),
    pub raw: RawValue,
    pub synchronized: bool,
}

impl PairReadout {
    fn new(pair: (usize, usize), raw: RawValue, spec: DetectorSpec) -> Self {
        PairReadout { pair, raw, synchronized: spec.is_synchronized(raw) }
    }
}

/// One-pass population variance of a bounded signal.
///
/// Samples are shifted by the first one before accumulating, which keeps the
/// sums small when the signal is nearly constant; a constant signal yields
/// exactly zero.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VarianceAccumulator {
    count: u64,
    shift: f64,
    sum: f64,
    sum_sq: f64,
}

impl VarianceAccumulator {
    #[inline(always)]
    pub fn push(&mut self, x: f64) {
        if self.count == 0 {
            self.shift = x;
        }
        let d = x - self.shift;
        self.count += 1;
        self.sum += d;
        self.sum_sq += d * d;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub(crate) fn from_sums(count: u64, shift: f64, sum: f64, sum_sq: f64) -> Self {
        VarianceAccumulator { count, shift, sum, sum_sq }
    }

    /// Population variance, `None` for an empty window.
    pub fn variance(&self) -> Option<f64> {
        if self.count == 0 {
            return None;
        }
        let n = self.count as f64;
        let mean = self.sum / n;
        Some((self.sum_sq / n - mean * mean).max(0.0))
    }
}

/// Variance scheme over a stream of `(φn, φm)` samples covering the window.
pub fn variance_detector<I>(
    pair: (usize, usize),
    phases: I,
    threshold: f64,
) -> Result<PairReadout, DetectorError>
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let mut acc = VarianceAccumulator::default();
    for (pn, pm) in phases {
        acc.push(libm::sin(pn - pm));
    }
    let v = acc.variance().ok_or(DetectorError::EmptyWindow)?;
    Ok(PairReadout::new(pair, RawValue::Variance(v), DetectorSpec::Variance(threshold)))
}

/// Direct counter over the rising edges of `n` and `m` inside the window.
pub fn direct_counter_detector(
    pair: (usize, usize),
    edges_n: &[u64],
    edges_m: &[u64],
    threshold: u64,
) -> PairReadout {
    let delta = edges_n.len() as i64 - edges_m.len() as i64;
    PairReadout::new(pair, RawValue::Direct(delta), DetectorSpec::Direct(threshold))
}

/// Counts alternation violations in the time-ordered merge of two edge trains.
///
/// Edges on the same step are ordered by oscillator index.
pub fn flipflop_violations(pair: (usize, usize), edges_n: &[u64], edges_m: &[u64]) -> u64 {
    let n_first = pair.0 <= pair.1;
    let mut flipflop = FlipFlop::default();
    let (mut i, mut j) = (0, 0);
    while i < edges_n.len() || j < edges_m.len() {
        let take_n = match (edges_n.get(i), edges_m.get(j)) {
            (Some(a), Some(b)) => a < b || (a == b && n_first),
            (Some(_), None) => true,
            _ => false,
        };
        if take_n {
            flipflop.edge(Side::First, None);
            i += 1;
        } else {
            flipflop.edge(Side::Second, None);
            j += 1;
        }
    }
    flipflop.count
}

/// Flip-flop counter over the rising edges of `n` and `m` inside the window.
pub fn flipflop_counter_detector(
    pair: (usize, usize),
    edges_n: &[u64],
    edges_m: &[u64],
    threshold: u64,
) -> PairReadout {
    let count = flipflop_violations(pair, edges_n, edges_m);
    PairReadout::new(pair, RawValue::Flipflop(count), DetectorSpec::Flipflop(threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, Default)]
struct FlipFlop {
    last: Option<Side>,
    count: u64,
}

impl FlipFlop {
    #[inline(always)]
    fn edge(&mut self, side: Side, saturation: Option<u64>) {
        if self.last == Some(side) {
            self.count += 1;
            if let Some(sat) = saturation {
                self.count = self.count.min(sat);
            }
        }
        self.last = Some(side);
    }
}

/// Lexicographic list of index pairs `(i, j)`, `i < j < n`.
pub fn core_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// Raw statistics of every core pair over one evaluation window.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WindowStats {
    pub variance: Vec<f64>,
    /// Signed `ΔN` per pair.
    pub direct: Vec<i64>,
    pub flipflop: Vec<u64>,
}

impl WindowStats {
    pub fn raw(&self, scheme: Scheme, pair_index: usize) -> RawValue {
        match scheme {
            Scheme::Variance => RawValue::Variance(self.variance[pair_index]),
            Scheme::Direct => RawValue::Direct(self.direct[pair_index]),
            Scheme::Flipflop => RawValue::Flipflop(self.flipflop[pair_index]),
        }
    }
}

/// Where the evaluation windows sit inside a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowPlan {
    /// Steps excluded before the window opens.
    pub cooldown_steps: u64,
    /// Window lengths in steps, strictly increasing; all windows open together.
    pub window_steps: Vec<u64>,
}

impl WindowPlan {
    pub fn total_steps(&self) -> u64 {
        self.cooldown_steps + self.window_steps.last().copied().unwrap_or(0)
    }
}

/// Streams all three schemes over every pair of the first `n_core` oscillators.
///
/// The Schmitt triggers run from the first step, so the digitizer state is
/// settled when the window opens; counters and variances only see steps
/// `cooldown + 1 ..= cooldown + τ`.
#[derive(Debug, Clone)]
pub struct PairwiseObserver {
    n_core: usize,
    pairs: Vec<(usize, usize)>,
    levels: SchmittLevels,
    saturation: Option<u64>,
    plan: WindowPlan,
    triggers: Vec<SchmittTrigger>,
    edges: Vec<bool>,
    variance: Vec<VarianceAccumulator>,
    direct: Vec<i64>,
    flipflop: Vec<FlipFlop>,
    next_checkpoint: usize,
    /// One entry per completed window, in plan order.
    pub windows: Vec<WindowStats>,
}

impl PairwiseObserver {
    pub fn new(n_core: usize, levels: SchmittLevels, plan: WindowPlan, saturation: Option<u64>) -> Self {
        let pairs = core_pairs(n_core);
        let p = pairs.len();
        PairwiseObserver {
            n_core,
            pairs,
            levels,
            saturation,
            triggers: Vec::with_capacity(n_core),
            edges: alloc::vec![false; n_core],
            variance: alloc::vec![VarianceAccumulator::default(); p],
            direct: alloc::vec![0; p],
            flipflop: alloc::vec![FlipFlop::default(); p],
            next_checkpoint: 0,
            windows: Vec::with_capacity(plan.window_steps.len()),
            plan,
        }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn is_complete(&self) -> bool {
        self.next_checkpoint == self.plan.window_steps.len()
    }

    fn snapshot(&self) -> WindowStats {
        WindowStats {
            variance: self.variance.iter().map(|v| v.variance().unwrap_or(0.0)).collect(),
            direct: self.direct.clone(),
            flipflop: self.flipflop.iter().map(|f| f.count).collect(),
        }
    }
}

impl PhaseObserver for PairwiseObserver {
    #[inline]
    fn observe(&mut self, frame: &StepFrame<'_>) -> Result<(), ObserverError> {
        if self.is_complete() {
            return Ok(());
        }
        let s = &frame.sin[..self.n_core];
        if self.triggers.is_empty() {
            if frame.sin.len() < self.n_core {
                return Err(ObserverError(alloc::format!(
                    "frame has {} oscillators, observer expects {} cores",
                    frame.sin.len(),
                    self.n_core
                )));
            }
            self.triggers.extend(s.iter().map(|&x| SchmittTrigger::new(self.levels, x)));
            self.edges.iter_mut().for_each(|e| *e = false);
        } else {
            for ((t, e), &x) in self.triggers.iter_mut().zip(self.edges.iter_mut()).zip(s) {
                *e = t.update(x);
            }
        }
        if frame.step <= self.plan.cooldown_steps {
            return Ok(());
        }
        let c = &frame.cos[..self.n_core];
        let sat = self.saturation;
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            // sin(φi − φj)
            self.variance[k].push(s[i] * c[j] - c[i] * s[j]);
            if self.edges[i] {
                self.flipflop[k].edge(Side::First, sat);
                self.direct[k] += 1;
            }
            if self.edges[j] {
                self.flipflop[k].edge(Side::Second, sat);
                self.direct[k] -= 1;
            }
            if let Some(sat) = sat {
                let sat = sat as i64;
                self.direct[k] = self.direct[k].clamp(-sat, sat);
            }
        }
        let elapsed = frame.step - self.plan.cooldown_steps;
        if elapsed == self.plan.window_steps[self.next_checkpoint] {
            let snap = self.snapshot();
            self.windows.push(snap);
            self.next_checkpoint += 1;
        }
        Ok(())
    }
}
