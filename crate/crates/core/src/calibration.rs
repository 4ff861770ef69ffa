//! Threshold calibration on a reduced system: one input oscillator is swept
//! while the readouts of the first core pair are recorded before
//! thresholding, together with the mean frequency of every oscillator.
//!
//! Each sweep point is a single run with random initial phases drawn from
//! `RngStream::for_run(seed, Sweep1d, point, 0)`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::detectors::{PairwiseObserver, RawValue, SchmittLevels, Scheme, WindowPlan};
use crate::exec::{CellFailure, Executor};
use crate::integrator::{steps_for, Integrator, MeanFrequencyObserver, PhaseState};
use crate::network::{build_paper_network, PaperTopologySpec};
use crate::readout::ReadoutError;
use crate::rng::{RngStream, StreamDomain};
use crate::sweeps::Thresholds;
use crate::{MHZ, MICROSECOND};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationSpec {
    /// Must declare exactly one input; its frequency is overwritten per point.
    pub topology: PaperTopologySpec,
    /// Swept input frequencies, Hz.
    pub inputs: Vec<f64>,
    pub cooldown: f64,
    pub tau: f64,
    pub schmitt: SchmittLevels,
    pub master_seed: u64,
}

impl Default for CalibrationSpec {
    /// Two cores {560, 580} MHz, one input swept 470–670 MHz in 1 MHz steps,
    /// noiseless, 0.5 µs cool-down and τ = 0.5 µs.
    fn default() -> Self {
        CalibrationSpec {
            topology: PaperTopologySpec::reduced(),
            inputs: stepped_range(470.0 * MHZ, 670.0 * MHZ, 1.0 * MHZ).expect("valid default range"),
            cooldown: 0.5 * MICROSECOND,
            tau: 0.5 * MICROSECOND,
            schmitt: SchmittLevels::default(),
            master_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub input_frequency: f64,
    /// Mean frequency of every oscillator over the window, Hz.
    pub mean_frequencies: Vec<f64>,
    pub variance: f64,
    /// Signed `ΔN` of the first core pair.
    pub direct: i64,
    pub flipflop: u64,
}

impl CalibrationRow {
    pub fn raw(&self, scheme: Scheme) -> RawValue {
        match scheme {
            Scheme::Variance => RawValue::Variance(self.variance),
            Scheme::Direct => RawValue::Direct(self.direct),
            Scheme::Flipflop => RawValue::Flipflop(self.flipflop),
        }
    }

    /// Thresholded decision of `scheme` for the first core pair.
    pub fn synchronized(&self, thresholds: &Thresholds, scheme: Scheme) -> bool {
        thresholds.detector(scheme).is_synchronized(self.raw(scheme))
    }
}

/// `start, start + step, ...` up to `stop` inclusive (within 1e-9 steps).
pub fn stepped_range(start: f64, stop: f64, step: f64) -> Result<Vec<f64>, ReadoutError> {
    if !(start.is_finite() && stop.is_finite() && step.is_finite() && step > 0.0 && stop >= start) {
        return Err(ReadoutError::Protocol(alloc::format!("bad range {start}:{stop}:{step}")));
    }
    let n = libm::floor((stop - start) / step + 1e-9) as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

pub fn calibration_sweep<E: Executor>(spec: &CalibrationSpec, exec: &E) -> Result<Vec<CalibrationRow>, ReadoutError> {
    if spec.topology.input_frequencies.len() != 1 {
        return Err(ReadoutError::Protocol("calibration needs exactly one input oscillator".into()));
    }
    let template = build_paper_network(&spec.topology)?;
    let dt = template.dt();
    let cooldown = steps_for_allow_zero(spec.cooldown, dt)?;
    let window = steps_for(spec.tau, dt)?;
    let plan = WindowPlan { cooldown_steps: cooldown, window_steps: alloc::vec![window] };
    spec.schmitt.validate()?;
    let n = template.len();
    let results = exec
        .map_indexed(spec.inputs.len(), |i| -> Result<CalibrationRow, ReadoutError> {
            let fa = spec.inputs[i];
            let network = template.with_input_frequencies(&[fa])?;
            let mut rng = RngStream::for_run(spec.master_seed, StreamDomain::Sweep1d, i as u64, 0).rng();
            let mut state = PhaseState::random(n, &mut rng);
            let mut freq = MeanFrequencyObserver::new(n, dt, cooldown);
            let mut pairs = PairwiseObserver::new(template.n_core(), spec.schmitt, plan.clone(), None);
            Integrator::new(&network).run(&mut state, plan.total_steps(), &mut rng, &mut (&mut freq, &mut pairs))?;
            let w = &pairs.windows[0];
            Ok(CalibrationRow {
                input_frequency: fa,
                mean_frequencies: freq.mean_frequencies(),
                variance: w.variance[0],
                direct: w.direct[0],
                flipflop: w.flipflop[0],
            })
        })
        .map_err(|CellFailure { index, message }| ReadoutError::PointFailed { index, fa: spec.inputs[index], message })?;
    results
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| ReadoutError::PointFailed { index: i, fa: spec.inputs[i], message: alloc::format!("{e}") })
        })
        .collect()
}

fn steps_for_allow_zero(duration: f64, dt: f64) -> Result<u64, ReadoutError> {
    if duration == 0.0 {
        Ok(0)
    } else {
        Ok(steps_for(duration, dt)?)
    }
}

/// Fraction of rows on which all three thresholded decisions agree.
pub fn decision_agreement(rows: &[CalibrationRow], thresholds: &Thresholds) -> f64 {
    if rows.is_empty() {
        return 1.0;
    }
    let agree = rows
        .iter()
        .filter(|r| {
            let v = r.synchronized(thresholds, Scheme::Variance);
            v == r.synchronized(thresholds, Scheme::Direct) && v == r.synchronized(thresholds, Scheme::Flipflop)
        })
        .count();
    agree as f64 / rows.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;

    #[test]
    fn range_is_inclusive() {
        let r = stepped_range(470e6, 670e6, 1e6).unwrap();
        assert_eq!(r.len(), 201);
        assert_eq!(r[200], 670e6);
        assert!(stepped_range(1.0, 0.0, 1.0).is_err());
        assert!(stepped_range(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn far_detuned_input_leaves_cores_free() {
        let spec = CalibrationSpec { inputs: alloc::vec![470e6, 670e6], ..Default::default() };
        let rows = calibration_sweep(&spec, &Sequential).unwrap();
        for r in &rows {
            let df = (r.mean_frequencies[0] - r.mean_frequencies[1]).abs();
            assert!(df > 10e6, "cores should beat, got {df}");
            assert!(r.flipflop >= 6 && r.direct.abs() >= 6, "{r:?}");
            assert!(r.variance > 0.28);
        }
    }

    #[test]
    fn rejects_two_inputs() {
        let spec = CalibrationSpec { topology: PaperTopologySpec::default(), ..Default::default() };
        assert!(calibration_sweep(&spec, &Sequential).is_err());
    }
}
