use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use oscsync::formats::read_map_csv;
use oscsync::manifest::RunManifest;

fn oscsync(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oscsync")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = oscsync(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

const SMALL_MAP: [&str; 9] = ["map", "--grid", "10", "--reps", "3", "--fwhm", "1MHz", "--cooldown", "0.2us"];

#[test]
fn map_is_identical_across_worker_counts_and_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&[&SMALL_MAP[..], &["--workers", "1", "-o", &p(d, "a.csv")]].concat());
    ok(&[&SMALL_MAP[..], &["--workers", "3", "-o", &p(d, "b.csv")]].concat());
    ok(&["map", "--config", &p(d, "a.manifest.json"), "--workers", "2", "-o", &p(d, "c.csv")]);
    let a = fs::read(d.join("a.csv")).unwrap();
    assert_eq!(a, fs::read(d.join("b.csv")).unwrap());
    assert_eq!(a, fs::read(d.join("c.csv")).unwrap());

    let m = RunManifest::read(&d.join("a.manifest.json")).unwrap();
    assert_eq!(m.config.grid.a.steps, 10);
    assert_eq!(m.config.protocol.repetitions, 3);
    assert_eq!(m.config.topology.noise_fwhm, 1e6);
    assert_eq!(m.master_seed, m.config.seed);
    assert_eq!(read_map_csv(&a[..]).unwrap().len(), 100);

    // a different seed gives a different map
    ok(&[&SMALL_MAP[..], &["--seed", "9", "-o", &p(d, "s.csv")]].concat());
    assert_ne!(a, fs::read(d.join("s.csv")).unwrap());
}

#[test]
fn count_patterns_reads_a_written_map() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let printed = ok(&[&SMALL_MAP[..], &["-o", &p(d, "m.csv")]].concat());
    let n: usize = printed.split(": ").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
    let out = ok(&["count-patterns", &p(d, "m.csv")]);
    let mut lines = out.lines();
    assert_eq!(lines.next().unwrap(), format!("{n} patterns"));
    assert_eq!(lines.count(), n);

    // without the manifest the grid is inferred from the rows
    fs::copy(d.join("m.csv"), d.join("bare.csv")).unwrap();
    let bare = ok(&["count-patterns", &p(d, "bare.csv")]);
    assert_eq!(bare, out);
    let unfiltered = ok(&["count-patterns", &p(d, "bare.csv"), "--radius", "0"]);
    let m: usize = unfiltered.lines().next().unwrap().split(' ').next().unwrap().parse().unwrap();
    assert!(m >= n);
}

#[test]
fn sweep_1d_writes_the_calibration_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "cal.csv");
    ok(&["sweep-1d", "--input-range", "550MHz:560MHz:5MHz", "--cooldown", "0.1us", "--tau", "0.2us", "-o", &out]);
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "fA_Hz,meanf_1,meanf_2,meanf_A,var_raw,direct_raw,flipflop_raw");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1][0], 555e6);
    for r in &rows {
        assert_eq!(r.len(), 7);
        assert!(r[4] >= 0.0 && r[5] >= 0.0 && r[6] >= 0.0);
    }
    assert!(dir.path().join("cal.manifest.json").exists());
}

#[test]
fn trace_and_linewidth_run() {
    let dir = tempfile::tempdir().unwrap();
    let trace = p(dir.path(), "t.csv");
    ok(&["simulate-trace", "--duration", "10ns", "--stride", "10", "-o", &trace]);
    let text = fs::read_to_string(&trace).unwrap();
    assert!(text.starts_with("t_s,phi_0,"));
    assert_eq!(text.lines().count(), 11);

    let lw = p(dir.path(), "lw.csv");
    let printed = ok(&["linewidth", "--fwhm", "4MHz", "--observation", "20us", "-o", &lw]);
    assert!(printed.starts_with("configured 4.000000 MHz"), "{printed}");
    let text = fs::read_to_string(&lw).unwrap();
    let est: f64 = text.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((est / 4e6 - 1.0).abs() < 0.3, "{est}");
}

#[test]
fn sweep_tau_caches_its_reference() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cache = d.join("cache");
    let args = [
        "sweep-tau", "--grid", "4", "--reps", "2", "--cooldown", "0.1us", "--values", "0.1us,0.2us", "--reference-tau",
        "0.5us", "--cache-dir", &cache.to_string_lossy(),
    ];
    let first = ok(&[&args[..], &["-o", &p(d, "tau.csv")]].concat());
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 1);
    let second = ok(&[&args[..], &["-o", &p(d, "tau2.csv")]].concat());
    assert_eq!(first, second);
    let text = fs::read_to_string(d.join("tau.csv")).unwrap();
    assert!(text.starts_with("param_value,scheme,pattern_count,matching_pct\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 3);
}

#[test]
fn sweeps_write_one_row_per_value_and_scheme() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "th.csv");
    ok(&[
        "sweep-threshold", "--parameter", "epsilon_counter", "--values", "2,6", "--grid", "4", "--reps", "2", "--cooldown",
        "0.1us", "--tau", "0.2us", "-o", &out,
    ]);
    let text = fs::read_to_string(&out).unwrap();
    let schemes: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(schemes, ["direct", "flipflop", "direct", "flipflop"]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(oscsync(&["map", "--grid", "0x3"]).status.code(), Some(1));
    assert_eq!(oscsync(&["map", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(oscsync(&["map", "--fwhm", "-1MHz", "-o", &p(d, "x.csv")]).status.code(), Some(1));
    assert_eq!(oscsync(&["map", "--config", &p(d, "missing.json")]).status.code(), Some(1));
    fs::write(d.join("bad.json"), r#"{"grid": {"a": {"steps": "many"}}}"#).unwrap();
    assert_eq!(oscsync(&["map", "--config", &p(d, "bad.json")]).status.code(), Some(1));
    fs::write(d.join("unknown.json"), r#"{"colour": 1}"#).unwrap();
    assert_eq!(oscsync(&["map", "--config", &p(d, "unknown.json")]).status.code(), Some(1));
    let unwritable = p(d, "no/such/dir/m.csv");
    let out = oscsync(&["map", "--grid", "2", "--reps", "1", "--cooldown", "0.1us", "--tau", "0.1us", "-o", &unwritable]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).lines().last().unwrap().starts_with("error: "));
    assert!(oscsync(&["--help"]).status.success());
}
