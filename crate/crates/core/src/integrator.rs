//! Stochastic Kuramoto dynamics.
//!
//! Each step applies
//!
//! ```text
//! φn ← wrap(φn + dt·[2π f0(n) + 2π Σm k_mn sin(φm − φn)] + σ·N(0,1)),   σ² = 2π·FWHM·dt
//! ```
//!
//! The noise is additive, so the Milstein correction term vanishes and the
//! scheme is exactly Euler–Maruyama. Phases are wrapped into `[0, 2π)` after
//! every step; observers that need unwrapped phase accumulate the per-step
//! increments handed to them in [`StepFrame::increments`].
//!
//! `sin(φm − φn)` is expanded as `sin φm cos φn − cos φm sin φn`, so a step
//! costs one `sincos` per oscillator plus a dense matrix–vector product.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::Rng;
use thiserror::Error;

use crate::network::NetworkConfig;
use crate::normal::{box_muller, phase_from_word};
use crate::rng::RngStream;
use crate::trig::sincos_wrapped;

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    /// Radians, wrapped into `[0, 2π)`.
    pub phases: Vec<f64>,
    /// Seconds.
    pub time: f64,
}

impl PhaseState {
    pub fn new(phases: Vec<f64>, time: f64) -> Self {
        let phases = phases.into_iter().map(wrap_phase).collect();
        PhaseState { phases, time }
    }

    /// Independent uniform phases on `[0, 2π)`.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let phases = (0..n).map(|_| phase_from_word(rng.next_u64())).collect();
        PhaseState { phases, time: 0.0 }
    }
}

/// Maps any finite phase into `[0, 2π)`.
#[inline]
pub fn wrap_phase(phi: f64) -> f64 {
    if (0.0..TAU).contains(&phi) {
        return phi;
    }
    let r = phi - TAU * libm::floor(phi / TAU);
    // floor rounding can land exactly on 2π
    if r >= TAU || r < 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub fwhm: f64,
    pub dt: f64,
}

impl NoiseModel {
    pub fn new(fwhm: f64, dt: f64) -> Self {
        NoiseModel { fwhm, dt }
    }

    /// Standard deviation of the per-step phase kick, `sqrt(2π·FWHM·dt)`.
    pub fn per_step_sigma(&self) -> f64 {
        libm::sqrt(TAU * self.fwhm * self.dt)
    }
}

/// Everything an observer may look at after a completed step.
#[derive(Debug, Clone, Copy)]
pub struct StepFrame<'a> {
    /// 1-based index of the step just completed, counted from the start of the run.
    pub step: u64,
    /// Seconds, after the step.
    pub time: f64,
    pub phases: &'a [f64],
    pub sin: &'a [f64],
    pub cos: &'a [f64],
    /// Unwrapped phase change of each oscillator during this step.
    pub increments: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct ObserverError(pub String);

/// Read-only consumer of the phase stream, called once per step.
pub trait PhaseObserver {
    fn observe(&mut self, frame: &StepFrame<'_>) -> Result<(), ObserverError>;
}

impl PhaseObserver for () {
    #[inline]
    fn observe(&mut self, _: &StepFrame<'_>) -> Result<(), ObserverError> {
        Ok(())
    }
}

impl<A: PhaseObserver, B: PhaseObserver> PhaseObserver for (A, B) {
    #[inline]
    fn observe(&mut self, frame: &StepFrame<'_>) -> Result<(), ObserverError> {
        self.0.observe(frame)?;
        self.1.observe(frame)
    }
}

impl<O: PhaseObserver + ?Sized> PhaseObserver for &mut O {
    #[inline]
    fn observe(&mut self, frame: &StepFrame<'_>) -> Result<(), ObserverError> {
        (**self).observe(frame)
    }
}

impl PhaseObserver for [&mut dyn PhaseObserver] {
    fn observe(&mut self, frame: &StepFrame<'_>) -> Result<(), ObserverError> {
        self.iter_mut().try_for_each(|o| o.observe(frame))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error("state has {got} phases but the network has {expected} oscillators")]
    Dimension { expected: usize, got: usize },
    #[error("duration {duration} s is not a positive multiple of dt = {dt} s")]
    Duration { duration: f64, dt: f64 },
    #[error("observer failed at step {step}: {source}")]
    Observer { step: u64, source: ObserverError },
}

/// Converts a duration into a whole number of steps, rejecting non-multiples.
pub fn steps_for(duration: f64, dt: f64) -> Result<u64, RunError> {
    let ratio = duration / dt;
    let steps = libm::round(ratio);
    if !(duration > 0.0) || !ratio.is_finite() || libm::fabs(ratio - steps) > 1e-6 * steps.max(1.0) {
        return Err(RunError::Duration { duration, dt });
    }
    Ok(steps as u64)
}

/// Compiled form of a [`NetworkConfig`] with scratch space for stepping.
///
/// All rates are pre-multiplied by `2π·dt`.
#[derive(Debug, Clone)]
pub struct Integrator {
    n: usize,
    dt: f64,
    pub(crate) drift: Vec<f64>,
    pub(crate) coupling: Vec<f64>,
    sigma: f64,
    sin: Vec<f64>,
    cos: Vec<f64>,
    incr: Vec<f64>,
}

impl Integrator {
    pub fn new(config: &NetworkConfig) -> Self {
        let n = config.len();
        let dt = config.dt();
        let scale = TAU * dt;
        Integrator {
            n,
            dt,
            drift: drift_of(config),
            coupling: config.coupling_matrix().iter().map(|k| scale * k).collect(),
            sigma: NoiseModel::new(config.noise_fwhm(), dt).per_step_sigma(),
            sin: alloc::vec![0.0; n],
            cos: alloc::vec![0.0; n],
            incr: alloc::vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Advances `state` by `steps` steps, calling `observer` after each one.
    pub fn run<R, O>(
        &mut self,
        state: &mut PhaseState,
        steps: u64,
        rng: &mut R,
        observer: &mut O,
    ) -> Result<(), RunError>
    where
        R: Rng + ?Sized,
        O: PhaseObserver + ?Sized,
    {
        if state.phases.len() != self.n {
            return Err(RunError::Dimension { expected: self.n, got: state.phases.len() });
        }
        for (p, (s, c)) in state.phases.iter_mut().zip(self.sin.iter_mut().zip(self.cos.iter_mut())) {
            *p = wrap_phase(*p);
            (*s, *c) = sincos_wrapped(*p);
        }
        let t0 = state.time;
        for k in 1..=steps {
            self.advance(&mut state.phases, rng);
            let frame = StepFrame {
                step: k,
                time: t0 + k as f64 * self.dt,
                phases: &state.phases,
                sin: &self.sin,
                cos: &self.cos,
                increments: &self.incr,
            };
            observer
                .observe(&frame)
                .map_err(|source| RunError::Observer { step: k, source })?;
        }
        state.time = t0 + steps as f64 * self.dt;
        Ok(())
    }

    /// One step; expects `self.sin`/`self.cos` to hold the current phases' values.
    #[inline(always)]
    fn advance<R: Rng + ?Sized>(&mut self, phases: &mut [f64], rng: &mut R) {
        let n = self.n;
        for i in 0..n {
            let row = &self.coupling[i * n..(i + 1) * n];
            let mut acc_sin = 0.0;
            let mut acc_cos = 0.0;
            for ((k, s), c) in row.iter().zip(&self.sin).zip(&self.cos) {
                acc_sin += k * s;
                acc_cos += k * c;
            }
            // Σ k sin(φm − φi) = cos φi · Σ k sin φm − sin φi · Σ k cos φm
            self.incr[i] = self.drift[i] + self.cos[i] * acc_sin - self.sin[i] * acc_cos;
        }
        if self.sigma > 0.0 {
            // normals come in pairs; an odd oscillator count drops the last
            for pair in self.incr.chunks_mut(2) {
                let (z0, z1) = box_muller(rng.next_u64(), rng.next_u64());
                pair[0] += self.sigma * z0;
                if let Some(d) = pair.get_mut(1) {
                    *d += self.sigma * z1;
                }
            }
        }
        for i in 0..n {
            let mut p = phases[i] + self.incr[i];
            if p >= TAU {
                p -= TAU;
            } else if p < 0.0 {
                p += TAU;
            }
            if !(0.0..TAU).contains(&p) {
                p = wrap_phase(p);
            }
            phases[i] = p;
            (self.sin[i], self.cos[i]) = sincos_wrapped(p);
        }
    }
}

/// Per-step deterministic phase advance `2π·f·dt` of every oscillator.
pub(crate) fn drift_of(config: &NetworkConfig) -> Vec<f64> {
    let scale = TAU * config.dt();
    config.oscillators().iter().map(|o| scale * o.natural_frequency).collect()
}

/// Single step of the dynamics with a caller-supplied generator.
pub fn step<R: Rng + ?Sized>(config: &NetworkConfig, state: &PhaseState, rng: &mut R) -> PhaseState {
    let mut next = state.clone();
    Integrator::new(config)
        .run(&mut next, 1, rng, &mut ())
        .expect("state dimension must match the network");
    next
}

/// Integrates `duration` seconds from `initial`, drawing noise from `stream`.
pub fn run<O: PhaseObserver + ?Sized>(
    config: &NetworkConfig,
    duration: f64,
    initial: &PhaseState,
    stream: &RngStream,
    observer: &mut O,
) -> Result<PhaseState, RunError> {
    let steps = steps_for(duration, config.dt())?;
    let mut state = initial.clone();
    let mut rng = stream.rng();
    Integrator::new(config).run(&mut state, steps, &mut rng, observer)?;
    Ok(state)
}

/// Mean frequency in Hz from an unwrapped phase change over `window` seconds.
pub fn measure_mean_frequency(unwrapped_phase_delta: f64, window: f64) -> f64 {
    unwrapped_phase_delta / (TAU * window)
}

/// Accumulates unwrapped phase over steps `(skip, ∞)` to measure mean frequencies.
#[derive(Debug, Clone)]
pub struct MeanFrequencyObserver {
    skip_steps: u64,
    dt: f64,
    unwrapped: Vec<f64>,
    steps: u64,
}

impl MeanFrequencyObserver {
    /// Ignores the first `skip_steps` steps (transient).
    pub fn new(n: usize, dt: f64, skip_steps: u64) -> Self {
        MeanFrequencyObserver { skip_steps, dt, unwrapped: alloc::vec![0.0; n], steps: 0 }
    }

    /// Unwrapped phase change of each oscillator over the observed steps.
    pub fn phase_deltas(&self) -> &[f64] {
        &self.unwrapped
    }

    pub fn window(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    /// Hz, one per oscillator. Zero before any step was observed.
    pub fn mean_frequencies(&self) -> Vec<f64> {
        let window = self.window();
        self.unwrapped
            .iter()
            .map(|&d| if self.steps == 0 { 0.0 } else { measure_mean_frequency(d, window) })
            .collect()
    }
}

impl PhaseObserver for MeanFrequencyObserver {
    #[inline]
    fn observe(&mut self, frame: &StepFrame<'_>) -> Result<(), ObserverError> {
        if frame.step > self.skip_steps {
            for (u, d) in self.unwrapped.iter_mut().zip(frame.increments) {
                *u += d;
            }
            self.steps += 1;
        }
        Ok(())
    }
}

/// Records `(t, φ, sin φ)` every `stride` steps.
#[derive(Debug, Clone)]
pub struct TraceRecorder {
    stride: u64,
    pub rows: Vec<TraceRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub time: f64,
    pub phases: Vec<f64>,
    pub sin: Vec<f64>,
}

impl TraceRecorder {
    pub fn new(stride: u64) -> Self {
        TraceRecorder { stride: stride.max(1), rows: Vec::new() }
    }
}

impl PhaseObserver for TraceRecorder {
    fn observe(&mut self, frame: &StepFrame<'_>) -> Result<(), ObserverError> {
        if frame.step % self.stride == 0 {
            self.rows.push(TraceRow {
                time: frame.time,
                phases: frame.phases.to_vec(),
                sin: frame.sin.to_vec(),
            });
        }
        Ok(())
    }
}

/// Block-averaged complex envelope `exp(i(φ(t) − 2π f0 t))` of one oscillator.
///
/// Removing the known carrier keeps the spectrum centred at zero so a coarse
/// sample rate suffices for linewidth estimation.
#[derive(Debug, Clone)]
pub struct EnvelopeRecorder {
    index: usize,
    carrier_step: f64,
    block: u64,
    offset: f64,
    acc: (f64, f64),
    filled: u64,
    /// `(re, im)` block means.
    pub samples: Vec<(f64, f64)>,
}

impl EnvelopeRecorder {
    /// `carrier_step` is the noiseless phase advance per step, `2π f0 dt`.
    pub fn new(index: usize, carrier_step: f64, block: u64) -> Self {
        EnvelopeRecorder {
            index,
            carrier_step,
            block: block.max(1),
            offset: 0.0,
            acc: (0.0, 0.0),
            filled: 0,
            samples: Vec::new(),
        }
    }
}

impl PhaseObserver for EnvelopeRecorder {
    fn observe(&mut self, frame: &StepFrame<'_>) -> Result<(), ObserverError> {
        let d = frame.increments.get(self.index).ok_or_else(|| {
            ObserverError(alloc::format!("no oscillator {} in frame", self.index))
        })?;
        self.offset += d - self.carrier_step;
        self.acc.0 += libm::cos(self.offset);
        self.acc.1 += libm::sin(self.offset);
        self.filled += 1;
        if self.filled == self.block {
            let b = self.block as f64;
            self.samples.push((self.acc.0 / b, self.acc.1 / b));
            self.acc = (0.0, 0.0);
            self.filled = 0;
        }
        Ok(())
    }
}
