//! Lane-parallel integration of independent runs sharing one coupling matrix.
//!
//! Map cells differ only in their input frequencies, so `LANES` runs are
//! stepped together in structure-of-arrays form and the readout statistics are
//! accumulated alongside. Every lane performs exactly the floating-point
//! operations of [`Integrator`] + [`PairwiseObserver`], in the same order, so
//! results are bit-identical to the scalar path; only the scheduling differs.
//!
//! [`PairwiseObserver`]: crate::detectors::PairwiseObserver

use alloc::vec::Vec;
use core::array::from_fn;
use core::f64::consts::TAU;

use crate::detectors::{core_pairs, SchmittLevels, VarianceAccumulator, WindowPlan, WindowStats};
use crate::integrator::{wrap_phase, Integrator};
use crate::normal::{box_muller_lanes, phase_from_word, XoshiroLanes};
use crate::rng::RngStream;
use crate::trig::sincos_wrapped_lanes;

pub(crate) const LANES: usize = 8;

type V = [f64; LANES];
type M = [u64; LANES];

/// One run: per-oscillator drift (`2π·f·dt`) and its random stream.
pub(crate) struct LaneJob {
    pub drift: Vec<f64>,
    pub stream: RngStream,
}

pub(crate) struct BatchSetup<'a> {
    pub integrator: &'a Integrator,
    pub n_core: usize,
    pub levels: SchmittLevels,
    pub plan: &'a WindowPlan,
    pub saturation: Option<u64>,
}

/// Runs up to `LANES` jobs; returns each job's completed windows.
pub(crate) fn run_batch(setup: &BatchSetup<'_>, jobs: &[LaneJob]) -> Vec<Vec<WindowStats>> {
    assert!(!jobs.is_empty() && jobs.len() <= LANES);
    #[cfg(target_arch = "x86_64")]
    {
        cpufeatures::new!(has_avx512, "avx512f");
        cpufeatures::new!(has_avx2, "avx2", "fma");
        if has_avx512::get() {
            // SAFETY: the required features were detected at runtime
            return unsafe { run_avx512(setup, jobs) };
        }
        if has_avx2::get() {
            // SAFETY: as above
            return unsafe { run_avx2(setup, jobs) };
        }
    }
    run_generic(setup, jobs)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn run_avx512(setup: &BatchSetup<'_>, jobs: &[LaneJob]) -> Vec<Vec<WindowStats>> {
    run_generic(setup, jobs)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn run_avx2(setup: &BatchSetup<'_>, jobs: &[LaneJob]) -> Vec<Vec<WindowStats>> {
    run_generic(setup, jobs)
}

#[inline(always)]
fn splat(x: f64) -> V {
    [x; LANES]
}

#[inline(always)]
fn run_generic(setup: &BatchSetup<'_>, jobs: &[LaneJob]) -> Vec<Vec<WindowStats>> {
    let integ = setup.integrator;
    let n = integ.len();
    let nc = setup.n_core;
    let pairs = core_pairs(nc);
    let np = pairs.len();
    let sigma = integ.sigma();
    let plan = setup.plan;
    let (lo, hi) = (setup.levels.low, setup.levels.high);
    let sat = setup.saturation.unwrap_or(u64::MAX);
    let sat_i = setup.saturation.map_or(i64::MAX, |s| s as i64);

    // idle lanes replay the last job and are dropped at the end
    let job = |l: usize| &jobs[l.min(jobs.len() - 1)];
    let mut rng = XoshiroLanes::<LANES>::new(from_fn(|l| job(l).stream.state_words()));
    let drift: Vec<V> = (0..n).map(|i| from_fn(|l| job(l).drift[i])).collect();
    let mut phase: Vec<V> = (0..n)
        .map(|_| {
            let w = rng.next();
            from_fn(|l| wrap_phase(phase_from_word(w[l])))
        })
        .collect();
    let mut sin = alloc::vec![splat(0.0); n];
    let mut cos = alloc::vec![splat(0.0); n];
    for i in 0..n {
        (sin[i], cos[i]) = sincos_wrapped_lanes(&phase[i]);
    }
    let mut incr = alloc::vec![splat(0.0); n];

    let mut high: Vec<M> = alloc::vec![[0; LANES]; nc];
    let mut edge: Vec<M> = alloc::vec![[0; LANES]; nc];
    let mut shift = alloc::vec![splat(0.0); np];
    let mut sum = alloc::vec![splat(0.0); np];
    let mut sum_sq = alloc::vec![splat(0.0); np];
    let mut direct: Vec<[i64; LANES]> = alloc::vec![[0; LANES]; np];
    let mut ff_count: Vec<M> = alloc::vec![[0; LANES]; np];
    // 0: no edge yet, 1: last edge from the pair's first member, 2: second
    let mut ff_last: Vec<M> = alloc::vec![[0; LANES]; np];
    let mut count = 0u64;
    let mut windows: Vec<Vec<WindowStats>> = (0..LANES).map(|_| Vec::new()).collect();
    let mut next_checkpoint = 0;

    for step in 1..=plan.total_steps() {
        // dynamics
        for i in 0..n {
            let row = &integ.coupling[i * n..(i + 1) * n];
            let mut acc_s = splat(0.0);
            let mut acc_c = splat(0.0);
            for (m, &k) in row.iter().enumerate() {
                let (sm, cm) = (&sin[m], &cos[m]);
                acc_s = from_fn(|l| acc_s[l] + k * sm[l]);
                acc_c = from_fn(|l| acc_c[l] + k * cm[l]);
            }
            let (d, si, ci) = (&drift[i], &sin[i], &cos[i]);
            incr[i] = from_fn(|l| d[l] + ci[l] * acc_s[l] - si[l] * acc_c[l]);
        }
        if sigma > 0.0 {
            for pair in incr.chunks_mut(2) {
                let (a, b) = (rng.next(), rng.next());
                let (z0, z1) = box_muller_lanes(&a, &b);
                let d = &mut pair[0];
                *d = from_fn(|l| d[l] + sigma * z0[l]);
                if let Some(d) = pair.get_mut(1) {
                    *d = from_fn(|l| d[l] + sigma * z1[l]);
                }
            }
        }
        for i in 0..n {
            let (ph, d) = (&phase[i], &incr[i]);
            let q: V = from_fn(|l| ph[l] + d[l]);
            let mut p: V = from_fn(|l| {
                let up = q[l] + TAU;
                let down = q[l] - TAU;
                let x = if q[l] < 0.0 { up } else { q[l] };
                if q[l] >= TAU { down } else { x }
            });
            let bad = p.iter().fold(false, |acc, &x| acc | !(x >= 0.0 && x < TAU));
            if bad {
                for x in p.iter_mut() {
                    if !(0.0..TAU).contains(x) {
                        *x = wrap_phase(*x);
                    }
                }
            }
            phase[i] = p;
            (sin[i], cos[i]) = sincos_wrapped_lanes(&p);
        }

        // digitizers run from the first step
        if step == 1 {
            for i in 0..nc {
                let x = &sin[i];
                high[i] = from_fn(|l| (x[l] > hi) as u64);
                edge[i] = [0; LANES];
            }
        } else {
            for i in 0..nc {
                let (x, h) = (&sin[i], high[i]);
                let rise: M = from_fn(|l| (1 - h[l]) & (x[l] > hi) as u64);
                let fall: M = from_fn(|l| h[l] & (x[l] < lo) as u64);
                high[i] = from_fn(|l| (h[l] & (1 - fall[l])) | rise[l]);
                edge[i] = rise;
            }
        }
        if step <= plan.cooldown_steps {
            continue;
        }

        // pair statistics inside the window
        let first = count == 0;
        count += 1;
        for (k, &(i, j)) in pairs.iter().enumerate() {
            let (si, ci, sj, cj) = (&sin[i], &cos[i], &sin[j], &cos[j]);
            let v: V = from_fn(|l| si[l] * cj[l] - ci[l] * sj[l]);
            if first {
                shift[k] = v;
            }
            let sh = &shift[k];
            let dv: V = from_fn(|l| v[l] - sh[l]);
            let (s1, s2) = (&mut sum[k], &mut sum_sq[k]);
            *s1 = from_fn(|l| s1[l] + dv[l]);
            *s2 = from_fn(|l| s2[l] + dv[l] * dv[l]);

            let (ei, ej) = (edge[i], edge[j]);
            let dk = direct[k];
            direct[k] = from_fn(|l| (dk[l] + ei[l] as i64 - ej[l] as i64).clamp(-sat_i, sat_i));

            let (c0, last0) = (ff_count[k], ff_last[k]);
            let c1: M = from_fn(|l| (c0[l] + (ei[l] & (last0[l] == 1) as u64)).min(sat));
            let last1: M = from_fn(|l| if ei[l] == 1 { 1 } else { last0[l] });
            ff_count[k] = from_fn(|l| (c1[l] + (ej[l] & (last1[l] == 2) as u64)).min(sat));
            ff_last[k] = from_fn(|l| if ej[l] == 1 { 2 } else { last1[l] });
        }

        if count == plan.window_steps[next_checkpoint] {
            for (l, w) in windows.iter_mut().enumerate().take(jobs.len()) {
                w.push(WindowStats {
                    variance: (0..np)
                        .map(|k| {
                            VarianceAccumulator::from_sums(count, shift[k][l], sum[k][l], sum_sq[k][l])
                                .variance()
                                .unwrap_or(0.0)
                        })
                        .collect(),
                    direct: direct.iter().map(|d| d[l]).collect(),
                    flipflop: ff_count.iter().map(|c| c[l]).collect(),
                });
            }
            next_checkpoint += 1;
            if next_checkpoint == plan.window_steps.len() {
                break;
            }
        }
    }
    windows.truncate(jobs.len());
    windows
}
