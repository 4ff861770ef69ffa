//! Map-level properties on grids small enough for a sequential run.

use oscsync_core::readout::simulate_point;
use oscsync_core::rng::StreamDomain;
use oscsync_core::sweeps::{sweep_tau, SweepParameter, SweepSpec, Thresholds};
use oscsync_core::{
    build_paper_network, Consensus, GridSpec, PaperTopologySpec, RawGrid, Scheme, Sequential, SimProtocol, MHZ,
    MICROSECOND,
};

fn noiseless_grid(steps: usize) -> RawGrid {
    let net = build_paper_network(&PaperTopologySpec::default()).unwrap();
    let protocol = SimProtocol::default();
    let grid = GridSpec::square(470.0 * MHZ, 670.0 * MHZ, steps);
    RawGrid::simulate(&net, &protocol, &grid, 2, &[protocol.tau], &Sequential).unwrap()
}

#[test]
fn noiseless_maps_agree_across_schemes_and_deep_cells_are_stable() {
    let raw = noiseless_grid(50);
    let t = Thresholds::default();
    let maps: Vec<_> = Scheme::ALL.iter().map(|&s| raw.to_map(&t.detector(s), 0).unwrap()).collect();

    let mut consistent = 0;
    let mut agree = 0;
    for i in 0..raw.grid.len() {
        let cells: Vec<_> = maps.iter().map(|m| m.cells[i].consensus).collect();
        if cells.contains(&Consensus::Inconsistent) {
            continue;
        }
        consistent += 1;
        agree += usize::from(cells.iter().all(|c| *c == cells[0]));
    }
    let frac = agree as f64 / consistent as f64;
    assert!(consistent > 2000 && frac >= 0.9, "{agree} of {consistent} consistent cells agree");

    // cells whose whole 5x5 neighbourhood carries one nonzero code in every
    // scheme give that code in every repetition of a fresh simulation
    let (na, nb) = (raw.grid.a.steps, raw.grid.b.steps);
    let deep: Vec<usize> = (0..raw.grid.len())
        .filter(|&i| {
            let (ia, ib) = raw.grid.coords(i);
            let code = maps[1].cells[i].consensus;
            ia >= 2 && ib >= 2 && ia + 2 < na && ib + 2 < nb && code.code() > 0
                && (ia - 2..=ia + 2).all(|a| {
                    (ib - 2..=ib + 2).all(|b| maps.iter().all(|m| m.cells[a * nb + b].consensus == code))
                })
        })
        .collect();
    assert!(deep.len() >= 10, "only {} deep cells", deep.len());
    let protocol = SimProtocol { repetitions: 24, ..Default::default() };
    let plan = protocol.plan(raw.network.dt(), &[protocol.tau]).unwrap();
    for &i in deep.iter().step_by(deep.len() / 8) {
        let (fa, fb) = raw.grid.point(i);
        let point = simulate_point(&raw.network, &[fa, fb], &protocol, &plan, 99, StreamDomain::MapCell, i as u64).unwrap();
        for (s, m) in Scheme::ALL.iter().zip(&maps) {
            assert_eq!(point.consensus(&t.detector(*s), 0), m.cells[i].consensus, "{s} at ({fa}, {fb})");
        }
    }
}

#[test]
fn tau_sweep_matching_trends_upward() {
    let taus: Vec<f64> = (1..=10).map(|i| 0.2 * i as f64 * MICROSECOND).collect();
    let mut spec = SweepSpec::new(SweepParameter::Tau, taus);
    spec.grid = GridSpec::square(470.0 * MHZ, 670.0 * MHZ, 32);
    spec.protocol.repetitions = 4;
    spec.reference_tau = 10.0 * MICROSECOND;
    spec.master_seed = 4;
    let result = sweep_tau(&spec, &Sequential, None).unwrap();
    for scheme in Scheme::ALL {
        let pct: Vec<f64> = result.series(scheme).map(|r| r.matching_pct.unwrap()).collect();
        for w in pct.windows(2) {
            assert!(w[1] >= w[0] - 3.0, "{scheme}: {pct:?}");
        }
        let half = pct.len() / 2;
        let early: f64 = pct[..half].iter().sum::<f64>() / half as f64;
        let late: f64 = pct[half..].iter().sum::<f64>() / (pct.len() - half) as f64;
        assert!(late >= early, "{scheme}: {pct:?}");
    }
}
