//! CSV schemas written by the command-line tool.
//!
//! Floats are written with 17 significant digits, so every value reads back
//! bit-exactly.

use std::io::{Read, Write};

use oscsync_core::calibration::CalibrationRow;
use oscsync_core::integrator::TraceRow;
use oscsync_core::readout::{Consensus, FilteredMap, GridAxis, GridSpec, MapCell, MapMetadata, ReadoutMap};
use oscsync_core::sweeps::SweepResult;
use thiserror::Error;

use crate::linewidth::LinewidthEstimate;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("{0}")]
    Schema(String),
}

pub const MAP_HEADER: [&str; 4] = ["fA_Hz", "fB_Hz", "pattern_code", "kept"];

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes one row per cell; `kept` is 0 for cells the filter suppressed.
pub fn write_map_csv<W: Write>(out: W, map: &ReadoutMap, filtered: &FilteredMap) -> Result<(), FormatError> {
    if filtered.kept.len() != map.cells.len() {
        return Err(FormatError::Schema("filter does not belong to this map".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MAP_HEADER)?;
    for (cell, &kept) in map.cells.iter().zip(&filtered.kept) {
        let (fa, fb) = cell.input_frequencies;
        w.write_record([fmt_f64(fa), fmt_f64(fb), cell.consensus.code().to_string(), u8::from(kept).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapRow {
    pub fa: f64,
    pub fb: f64,
    pub consensus: Consensus,
    pub kept: bool,
}

pub fn read_map_csv<R: Read>(input: R) -> Result<Vec<MapRow>, FormatError> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().collect::<Vec<_>>() != MAP_HEADER {
        return Err(FormatError::Schema(format!("map header must be {}", MAP_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |message: String| FormatError::Row { line, message };
        if rec.len() != 4 {
            return Err(err(format!("expected 4 fields, got {}", rec.len())));
        }
        let num = |i: usize| rec[i].trim().parse::<f64>().map_err(|e| err(format!("{}: {e}", MAP_HEADER[i])));
        let code: i64 = rec[2].trim().parse().map_err(|e| err(format!("pattern_code: {e}")))?;
        let consensus = Consensus::from_code(code).ok_or_else(|| err(format!("bad pattern code {code}")))?;
        let kept = match rec[3].trim() {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("kept must be 0 or 1, got {other:?}"))),
        };
        rows.push(MapRow { fa: num(0)?, fb: num(1)?, consensus, kept });
    }
    Ok(rows)
}

/// Grid implied by row-major map rows.
pub fn infer_grid(rows: &[MapRow]) -> Result<GridSpec, FormatError> {
    let first = rows.first().ok_or_else(|| FormatError::Schema("empty map".into()))?;
    let nb = rows.iter().take_while(|r| r.fa == first.fa).count();
    if rows.len() % nb != 0 {
        return Err(FormatError::Schema("map rows do not form a rectangular grid".into()));
    }
    let na = rows.len() / nb;
    let last = rows[rows.len() - 1];
    let grid = GridSpec { a: GridAxis::new(first.fa, last.fa, na), b: GridAxis::new(first.fb, last.fb, nb) };
    check_grid(rows, &grid)?;
    Ok(grid)
}

fn check_grid(rows: &[MapRow], grid: &GridSpec) -> Result<(), FormatError> {
    if rows.len() != grid.len() {
        return Err(FormatError::Schema(format!("{} rows for a {}-cell grid", rows.len(), grid.len())));
    }
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * y.abs().max(1.0);
    for (i, r) in rows.iter().enumerate() {
        let (fa, fb) = grid.point(i);
        if !close(r.fa, fa) || !close(r.fb, fb) {
            return Err(FormatError::Schema(format!("row {} at ({}, {}) is off the grid", i + 1, r.fa, r.fb)));
        }
    }
    Ok(())
}

/// Rebuilds a map from CSV rows under known metadata.
pub fn map_from_rows(rows: &[MapRow], meta: MapMetadata) -> Result<ReadoutMap, FormatError> {
    check_grid(rows, &meta.grid)?;
    let cells = rows.iter().map(|r| MapCell { input_frequencies: (r.fa, r.fb), consensus: r.consensus }).collect();
    Ok(ReadoutMap { meta, cells })
}

/// `param_value,scheme,pattern_count`, plus `matching_pct` when present.
pub fn write_sweep_csv<W: Write>(out: W, result: &SweepResult) -> Result<(), FormatError> {
    let matching = result.rows.iter().any(|r| r.matching_pct.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["param_value", "scheme", "pattern_count"];
    if matching {
        header.push("matching_pct");
    }
    w.write_record(&header)?;
    for r in &result.rows {
        let mut rec = vec![fmt_f64(r.value), r.scheme.to_string(), r.pattern_count.to_string()];
        if matching {
            rec.push(r.matching_pct.map(fmt_f64).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Calibration sweep: the input frequency, every mean frequency (cores, then
/// the input) and the raw outputs of the first core pair. `direct_raw` is `|ΔN|`.
pub fn write_sweep1d_csv<W: Write>(out: W, rows: &[CalibrationRow]) -> Result<(), FormatError> {
    let n_core = rows.first().map_or(2, |r| r.mean_frequencies.len().saturating_sub(1));
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["fA_Hz".to_string()];
    header.extend((1..=n_core).map(|i| format!("meanf_{i}")));
    header.extend(["meanf_A", "var_raw", "direct_raw", "flipflop_raw"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![fmt_f64(r.input_frequency)];
        rec.extend(r.mean_frequencies.iter().map(|&f| fmt_f64(f)));
        rec.extend([fmt_f64(r.variance), r.direct.unsigned_abs().to_string(), r.flipflop.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `t_s, phi_0.., sin_0..`.
pub fn write_trace_csv<W: Write>(out: W, n: usize, rows: &[TraceRow]) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t_s".to_string()];
    header.extend((0..n).map(|i| format!("phi_{i}")));
    header.extend((0..n).map(|i| format!("sin_{i}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![fmt_f64(r.time)];
        rec.extend(r.phases.iter().chain(&r.sin).map(|&x| fmt_f64(x)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_linewidth_csv<W: Write>(out: W, configured: f64, est: &LinewidthEstimate) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fwhm_config_Hz", "fwhm_estimate_Hz", "resolution_Hz", "resolution_limited", "segments"])?;
    w.write_record([
        fmt_f64(configured),
        fmt_f64(est.fwhm),
        fmt_f64(est.resolution),
        u8::from(est.resolution_limited).to_string(),
        est.segments.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use oscsync_core::detectors::DetectorSpec;
    use oscsync_core::readout::{robust_filter, PatternCode, SimProtocol};
    use oscsync_core::{build_paper_network, PaperTopologySpec};

    fn sample_map() -> ReadoutMap {
        let grid = GridSpec {
            a: GridAxis::new(470e6, 670e6, 3),
            b: GridAxis::new(1.0 / 3.0 * 1e9, 0.5e9, 2),
        };
        let codes = [0, 5, -1, 63, 5, 5];
        ReadoutMap {
            meta: MapMetadata {
                detector: DetectorSpec::Direct(6),
                network: build_paper_network(&PaperTopologySpec::default()).unwrap(),
                protocol: SimProtocol::default(),
                grid,
                master_seed: 1,
            },
            cells: codes
                .iter()
                .enumerate()
                .map(|(i, &c)| MapCell { input_frequencies: grid.point(i), consensus: Consensus::from_code(c).unwrap() })
                .collect(),
        }
    }

    #[test]
    fn map_round_trip_is_exact() {
        let map = sample_map();
        let filtered = robust_filter(&map, 0.0).unwrap();
        let mut buf = Vec::new();
        write_map_csv(&mut buf, &map, &filtered).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("fA_Hz,fB_Hz,pattern_code,kept\n"));
        assert!(text.lines().nth(3).unwrap().ends_with(",-1,0"));
        let rows = read_map_csv(&buf[..]).unwrap();
        assert_eq!(infer_grid(&rows).unwrap(), map.meta.grid);
        let back = map_from_rows(&rows, map.meta.clone()).unwrap();
        assert_eq!(back, map);
        assert_eq!(rows.iter().map(|r| r.kept).collect::<Vec<_>>(), filtered.kept);
        assert_eq!(back.cells[3].consensus, Consensus::Pattern(PatternCode(63)));
    }

    #[test]
    fn malformed_maps_are_rejected() {
        assert!(read_map_csv("a,b,c,d\n".as_bytes()).is_err());
        let bad_code = "fA_Hz,fB_Hz,pattern_code,kept\n1,2,-2,0\n";
        assert!(matches!(read_map_csv(bad_code.as_bytes()), Err(FormatError::Row { .. })));
        let bad_kept = "fA_Hz,fB_Hz,pattern_code,kept\n1,2,3,yes\n";
        assert!(read_map_csv(bad_kept.as_bytes()).is_err());
        let ragged = "fA_Hz,fB_Hz,pattern_code,kept\n1,1,0,1\n1,2,0,1\n2,1,0,1\n";
        let rows = read_map_csv(ragged.as_bytes()).unwrap();
        assert!(infer_grid(&rows).is_err());
    }

    #[test]
    fn floats_keep_seventeen_digits() {
        for x in [0.1, 1.0 / 3.0, 5.999999999999999e8, 1e-10, 0.0, -2.5e-300] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }
}
