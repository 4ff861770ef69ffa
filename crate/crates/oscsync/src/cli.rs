//! The `oscsync` command line.
//!
//! Exit status: 0 on success, 1 for invalid arguments or configuration, 2
//! when a run fails.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use oscsync_core::calibration::{calibration_sweep, stepped_range, CalibrationSpec};
use oscsync_core::detectors::{SchmittLevels, Scheme};
use oscsync_core::integrator::{steps_for, Integrator, TraceRecorder};
use oscsync_core::readout::{count_patterns as count_kept, pattern_pairs, robust_filter, GridAxis, InconsistentPolicy, MapMetadata, RawGrid};
use oscsync_core::rng::{RngStream, StreamDomain};
use oscsync_core::sweeps::{self, SweepParameter, SweepResult, SweepSpec};
use oscsync_core::{build_paper_network, PhaseState, MHZ};
use thiserror::Error;

use crate::cache::GridCache;
use crate::config::{
    parse_grid, parse_hz, parse_range, parse_seconds, parse_span, Command, RunConfig,
};
use crate::exec::Rayon;
use crate::formats::{self, infer_grid, map_from_rows, read_map_csv};
use crate::linewidth::{estimate_linewidth, LinewidthError};
use crate::manifest::{detector_for, load_config_overlay, RunManifest};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unreadable configuration or an invalid resolved configuration.
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "oscsync", version, about = "Kuramoto oscillator network readout simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Record phases and sin(phase) of one run.
    SimulateTrace {
        #[command(flatten)]
        run: RunArgs,
        /// Simulated time, e.g. 1us.
        #[arg(long, value_parser = parse_seconds)]
        duration: Option<f64>,
        /// Record every n-th step.
        #[arg(long)]
        stride: Option<u64>,
    },
    /// Sweep one input over a reduced system and record raw readouts.
    #[command(name = "sweep-1d")]
    Sweep1d {
        #[command(flatten)]
        run: RunArgs,
        /// start:stop:step, e.g. 470MHz:670MHz:1MHz.
        #[arg(long, value_parser = parse_range)]
        input_range: Option<crate::config::InputRange>,
    },
    /// Build a readout map over the two input frequencies.
    Map {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Filter a map CSV and count its discriminated patterns.
    CountPatterns {
        /// Map CSV written by `map`.
        map: PathBuf,
        /// Filter radius, Hz.
        #[arg(long, value_parser = parse_hz)]
        radius: Option<f64>,
        /// Manifest of the map; defaults to the sidecar next to the CSV.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Pattern counts versus k_ic (or k_cc with --parameter k_cc).
    SweepCoupling {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_parser = ["k_ic", "k_cc"])]
        parameter: Option<String>,
    },
    /// Pattern counts versus phase-noise FWHM.
    SweepNoise {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Pattern counts versus a detection threshold.
    SweepThreshold {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_parser = ["epsilon_v", "epsilon_counter"])]
        parameter: Option<String>,
    },
    /// Map agreement with a long-window reference and pattern counts versus τ.
    SweepTau {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_parser = parse_seconds)]
        reference_tau: Option<f64>,
        /// Leave cells inconsistent in both maps out of the matching percentage.
        #[arg(long)]
        exclude_inconsistent: bool,
        /// Where reference grids are cached [default: oscsync-cache next to the output].
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Estimate the spectral linewidth of an isolated noisy oscillator.
    Linewidth {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_parser = parse_seconds)]
        observation: Option<f64>,
        #[arg(long)]
        segments: Option<usize>,
    },
}

/// Flags shared by every simulating subcommand; each overrides the
/// corresponding configuration entry.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON configuration or a manifest of an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads [default: all cores]. Results do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Phase-noise FWHM, Hz.
    #[arg(long, value_parser = parse_hz)]
    pub fwhm: Option<f64>,
    #[arg(long, value_parser = parse_hz)]
    pub k_ic: Option<f64>,
    #[arg(long, value_parser = parse_hz)]
    pub k_cc: Option<f64>,
    /// Core natural frequencies, comma separated.
    #[arg(long, value_parser = parse_hz, value_delimiter = ',')]
    pub cores: Option<Vec<f64>>,
    /// Input natural frequencies, comma separated.
    #[arg(long, value_parser = parse_hz, value_delimiter = ',')]
    pub inputs: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_seconds)]
    pub dt: Option<f64>,
    #[arg(long, value_parser = parse_seconds)]
    pub cooldown: Option<f64>,
    #[arg(long, value_parser = parse_seconds)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub reps: Option<u32>,
    #[arg(long)]
    pub eps_v: Option<f64>,
    #[arg(long)]
    pub eps_d: Option<u64>,
    #[arg(long)]
    pub eps_f: Option<u64>,
    /// Symmetric Schmitt trigger levels ±theta.
    #[arg(long)]
    pub schmitt: Option<f64>,
    /// Saturate counters at this value.
    #[arg(long)]
    pub saturation: Option<u64>,
    /// Cells per axis, NxM or N.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<(usize, usize)>,
    /// Input-frequency span of both map axes, min:max.
    #[arg(long, value_parser = parse_span)]
    pub span: Option<(f64, f64)>,
    /// Robustness-filter radius, Hz.
    #[arg(long, value_parser = parse_hz)]
    pub radius: Option<f64>,
    /// Scheme of `map`: variance, direct or flipflop.
    #[arg(long)]
    pub detector: Option<Scheme>,
    /// Schemes evaluated by sweeps, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub schemes: Option<Vec<Scheme>>,
    /// Sweep values, comma separated (units of the swept parameter).
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<String>>,
}

impl RunArgs {
    fn resolve(&self, command: Command) -> Result<RunConfig, CliError> {
        let mut c = RunConfig::defaults_for(command);
        if let Some(path) = &self.config {
            c = c.merged(load_config_overlay(path).map_err(usage)?).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        }
        let t = &mut c.topology;
        set(&mut t.noise_fwhm, self.fwhm);
        set(&mut t.k_ic, self.k_ic);
        set(&mut t.k_cc, self.k_cc);
        set(&mut t.core_frequencies, self.cores.clone());
        set(&mut t.input_frequencies, self.inputs.clone());
        set(&mut t.dt, self.dt);
        let p = &mut c.protocol;
        set(&mut p.cooldown, self.cooldown);
        set(&mut p.tau, self.tau);
        set(&mut p.repetitions, self.reps);
        if let Some(theta) = self.schmitt {
            p.schmitt = SchmittLevels::symmetric(theta).map_err(usage)?;
        }
        if self.saturation.is_some() {
            p.counter_saturation = self.saturation;
        }
        set(&mut c.thresholds.variance, self.eps_v);
        set(&mut c.thresholds.direct, self.eps_d);
        set(&mut c.thresholds.flipflop, self.eps_f);
        if let Some((na, nb)) = self.grid {
            c.grid.a.steps = na;
            c.grid.b.steps = nb;
        }
        if let Some((min, max)) = self.span {
            c.grid.a = GridAxis::new(min, max, c.grid.a.steps);
            c.grid.b = GridAxis::new(min, max, c.grid.b.steps);
        }
        set(&mut c.radius, self.radius);
        set(&mut c.detector, self.detector);
        set(&mut c.schemes, self.schemes.clone());
        set(&mut c.seed, self.seed);
        Ok(c)
    }

    fn sweep_values(&self, parameter: SweepParameter) -> Result<Option<Vec<f64>>, CliError> {
        let Some(values) = &self.values else { return Ok(None) };
        let parse = |s: &str| -> Result<f64, CliError> {
            match parameter {
                SweepParameter::KIc | SweepParameter::KCc | SweepParameter::Fwhm => parse_hz(s).map_err(usage),
                SweepParameter::Tau => parse_seconds(s).map_err(usage),
                _ => s.trim().parse().map_err(|_| usage(format!("cannot parse threshold from {s:?}"))),
            }
        };
        values.iter().map(|s| parse(s)).collect::<Result<Vec<_>, _>>().map(Some)
    }

    fn output(&self, command: Command) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from(format!("{}.csv", command.name())))
    }

    fn executor(&self) -> Result<Rayon, CliError> {
        Rayon::new(self.workers).map_err(usage)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Parses `argv` and runs the subcommand.
pub fn run<I, T>(argv: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let text = e.render().to_string();
            return Err(CliError::Usage(text.strip_prefix("error: ").unwrap_or(&text).to_string()));
        }
    };
    dispatch(cli.command)
}

fn dispatch(sub: Sub) -> Result<(), CliError> {
    match sub {
        Sub::SimulateTrace { run, duration, stride } => {
            let mut c = run.resolve(Command::SimulateTrace)?;
            set(&mut c.trace.duration, duration);
            set(&mut c.trace.stride, stride);
            simulate_trace(&run, c)
        }
        Sub::Sweep1d { run, input_range } => {
            let mut c = run.resolve(Command::Sweep1d)?;
            set(&mut c.input_range, input_range);
            sweep_1d(&run, c)
        }
        Sub::Map { run } => {
            let c = run.resolve(Command::Map)?;
            map(&run, c)
        }
        Sub::CountPatterns { map, radius, manifest } => count_patterns(&map, radius, manifest.as_deref()),
        Sub::SweepCoupling { run, parameter } => {
            let mut c = run.resolve(Command::SweepCoupling)?;
            match parameter.as_deref() {
                Some("k_cc") => c.sweep.parameter = SweepParameter::KCc,
                Some(_) => c.sweep.parameter = SweepParameter::KIc,
                None => {}
            }
            sweep(&run, Command::SweepCoupling, c, None)
        }
        Sub::SweepNoise { run } => {
            let c = run.resolve(Command::SweepNoise)?;
            sweep(&run, Command::SweepNoise, c, None)
        }
        Sub::SweepThreshold { run, parameter } => {
            let mut c = run.resolve(Command::SweepThreshold)?;
            match parameter.as_deref() {
                Some("epsilon_counter") => c.sweep.parameter = SweepParameter::EpsilonCounter,
                Some(_) => c.sweep.parameter = SweepParameter::EpsilonV,
                None => {}
            }
            sweep(&run, Command::SweepThreshold, c, None)
        }
        Sub::SweepTau { run, reference_tau, exclude_inconsistent, cache_dir } => {
            let mut c = run.resolve(Command::SweepTau)?;
            set(&mut c.sweep.reference_tau, reference_tau);
            if exclude_inconsistent {
                c.sweep.inconsistent_policy = InconsistentPolicy::Exclude;
            }
            let out = run.output(Command::SweepTau);
            let dir = cache_dir.unwrap_or_else(|| parent_dir(&out).join("oscsync-cache"));
            sweep(&run, Command::SweepTau, c, Some(GridCache::new(dir)))
        }
        Sub::Linewidth { run, observation, segments } => {
            let mut c = run.resolve(Command::Linewidth)?;
            set(&mut c.linewidth.observation, observation);
            set(&mut c.linewidth.segments, segments);
            linewidth(&run, c)
        }
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn finish(command: Command, config: RunConfig, outputs: Vec<PathBuf>) -> Result<(), CliError> {
    let path = RunManifest::path_for(&outputs[0]);
    RunManifest::new(command, config, outputs).write(&path).map_err(runtime)?;
    eprintln!("wrote manifest {}", path.display());
    Ok(())
}

fn simulate_trace(run: &RunArgs, c: RunConfig) -> Result<(), CliError> {
    let network = build_paper_network(&c.topology).map_err(usage)?;
    let steps = steps_for(c.trace.duration, network.dt()).map_err(usage)?;
    let out = run.output(Command::SimulateTrace);
    let mut rng = RngStream::for_run(c.seed, StreamDomain::Trace, 0, 0).rng();
    let mut state = PhaseState::random(network.len(), &mut rng);
    let mut rec = TraceRecorder::new(c.trace.stride);
    Integrator::new(&network).run(&mut state, steps, &mut rng, &mut rec).map_err(runtime)?;
    formats::write_trace_csv(create(&out)?, network.len(), &rec.rows).map_err(runtime)?;
    eprintln!("wrote {} rows to {}", rec.rows.len(), out.display());
    finish(Command::SimulateTrace, c, vec![out])
}

fn sweep_1d(run: &RunArgs, c: RunConfig) -> Result<(), CliError> {
    let r = c.input_range;
    let spec = CalibrationSpec {
        topology: c.topology.clone(),
        inputs: stepped_range(r.start, r.stop, r.step).map_err(usage)?,
        cooldown: c.protocol.cooldown,
        tau: c.protocol.tau,
        schmitt: c.protocol.schmitt,
        master_seed: c.seed,
    };
    if spec.topology.input_frequencies.len() != 1 {
        return Err(usage("sweep-1d needs exactly one input oscillator (--inputs)"));
    }
    let out = run.output(Command::Sweep1d);
    eprintln!("sweep-1d: {} input frequencies", spec.inputs.len());
    let rows = calibration_sweep(&spec, &run.executor()?).map_err(runtime)?;
    formats::write_sweep1d_csv(create(&out)?, &rows).map_err(runtime)?;
    eprintln!("wrote {}", out.display());
    finish(Command::Sweep1d, c, vec![out])
}

fn map(run: &RunArgs, c: RunConfig) -> Result<(), CliError> {
    let network = build_paper_network(&c.topology).map_err(usage)?;
    let detector = detector_for(&c);
    detector.validate().map_err(usage)?;
    c.grid.validate().map_err(usage)?;
    c.protocol.validate(network.dt()).map_err(usage)?;
    let out = run.output(Command::Map);
    let exec = run.executor()?;
    eprintln!(
        "map: {} cells x {} repetitions, workers = {}",
        c.grid.len(),
        c.protocol.repetitions,
        exec.workers()
    );
    let start = Instant::now();
    let raw = RawGrid::simulate(&network, &c.protocol, &c.grid, c.seed, &[c.protocol.tau], &exec).map_err(runtime)?;
    let map = raw.to_map(&detector, 0).map_err(runtime)?;
    let filtered = robust_filter(&map, c.radius).map_err(usage)?;
    formats::write_map_csv(create(&out)?, &map, &filtered).map_err(runtime)?;
    let count = count_kept(&map, &filtered);
    eprintln!("simulated in {:.1} s", start.elapsed().as_secs_f64());
    println!(
        "{}: {} patterns after a {} MHz filter, {:.2}% inconsistent cells",
        out.display(),
        count.count,
        c.radius / MHZ,
        100.0 * map.inconsistent_fraction()
    );
    finish(Command::Map, c, vec![out])
}

fn count_patterns(path: &Path, radius: Option<f64>, manifest: Option<&Path>) -> Result<(), CliError> {
    let file = File::open(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let rows = read_map_csv(file).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let sidecar = RunManifest::path_for(path);
    let manifest_path = manifest.map(Path::to_path_buf).or_else(|| sidecar.exists().then_some(sidecar));
    let (meta, default_radius) = match manifest_path {
        Some(p) => {
            let m = RunManifest::read(&p).map_err(usage)?;
            (m.map_metadata().map_err(usage)?, m.config.radius)
        }
        None => {
            let c = RunConfig::defaults_for(Command::Map);
            let grid = infer_grid(&rows).map_err(usage)?;
            eprintln!("no manifest found; assuming the default network");
            let network = build_paper_network(&c.topology).map_err(usage)?;
            let meta = MapMetadata { detector: detector_for(&c), network, protocol: c.protocol, grid, master_seed: c.seed };
            (meta, c.radius)
        }
    };
    let n_core = meta.network.n_core();
    let map = map_from_rows(&rows, meta).map_err(usage)?;
    let filtered = robust_filter(&map, radius.unwrap_or(default_radius)).map_err(usage)?;
    if filtered.degenerate {
        eprintln!("warning: radius is below the grid pitch; every consistent cell is kept");
    }
    let count = count_kept(&map, &filtered);
    let pairs = pattern_pairs(n_core);
    let mut stdout = std::io::stdout().lock();
    let mut say = |line: String| writeln!(stdout, "{line}").map_err(runtime);
    say(format!("{} patterns", count.count))?;
    for code in &count.codes {
        let synced: Vec<String> =
            pairs.iter().enumerate().filter(|(k, _)| code.is_set(*k)).map(|(_, (m, n))| format!("({},{})", m + 1, n + 1)).collect();
        let width = pairs.len();
        say(format!("{:>4}  {:0width$b}  {}", code.0, code.0, if synced.is_empty() { "-".into() } else { synced.join(" ") }))?;
    }
    Ok(())
}

fn sweep_spec(c: &RunConfig, values: Vec<f64>) -> SweepSpec {
    SweepSpec {
        parameter: c.sweep.parameter,
        values,
        topology: c.topology.clone(),
        protocol: c.protocol,
        thresholds: c.thresholds,
        schemes: c.schemes.clone(),
        grid: c.grid,
        radius: c.radius,
        master_seed: c.seed,
        reference_tau: c.sweep.reference_tau,
        inconsistent_policy: c.sweep.inconsistent_policy,
    }
}

fn sweep(run: &RunArgs, command: Command, mut c: RunConfig, cache: Option<GridCache>) -> Result<(), CliError> {
    if let Some(values) = run.sweep_values(c.sweep.parameter)? {
        c.sweep.values = values;
    }
    c.sweep.values = c.sweep_values();
    let spec = sweep_spec(&c, c.sweep.values.clone());
    build_paper_network(&spec.topology).map_err(usage)?;
    spec.grid.validate().map_err(usage)?;
    let out = run.output(command);
    let exec = run.executor()?;
    eprintln!(
        "{}: {} = {:?} on a {}x{} grid, workers = {}",
        command.name(),
        spec.parameter,
        spec.values,
        spec.grid.a.steps,
        spec.grid.b.steps,
        exec.workers()
    );
    let start = Instant::now();
    let result: SweepResult = match command {
        Command::SweepCoupling => sweeps::sweep_coupling(&spec, &exec),
        Command::SweepNoise => sweeps::sweep_noise(&spec, &exec),
        Command::SweepThreshold => sweeps::sweep_threshold(&spec, &exec),
        Command::SweepTau => {
            let cache = cache.expect("τ sweeps cache their reference");
            let network = build_paper_network(&spec.topology).map_err(usage)?;
            eprintln!("reference grid (τ = {} s) cached in {}", spec.reference_tau, cache.dir().display());
            let reference = cache
                .simulate(
                    &network,
                    &spec.protocol,
                    &spec.grid,
                    sweeps::reference_seed(spec.master_seed),
                    &[spec.reference_tau],
                    &exec,
                )
                .map_err(runtime)?;
            sweeps::sweep_tau(&spec, &exec, Some(&reference))
        }
        _ => unreachable!("not a sweep"),
    }
    .map_err(|e| match e {
        sweeps::SweepError::Spec(_) => usage(e),
        _ => runtime(e),
    })?;
    eprintln!("swept in {:.1} s", start.elapsed().as_secs_f64());
    formats::write_sweep_csv(create(&out)?, &result).map_err(runtime)?;
    for r in &result.rows {
        match r.matching_pct {
            Some(pct) => println!("{:.6e}  {:<8}  {:>3}  {:6.2}%", r.value, r.scheme, r.pattern_count, pct),
            None => println!("{:.6e}  {:<8}  {:>3}", r.value, r.scheme, r.pattern_count),
        }
    }
    finish(command, c, vec![out])
}

fn linewidth(run: &RunArgs, c: RunConfig) -> Result<(), CliError> {
    let out = run.output(Command::Linewidth);
    let fwhm = c.topology.noise_fwhm;
    let est = estimate_linewidth(fwhm, c.linewidth.observation, &c.linewidth_options()).map_err(|e| match e {
        LinewidthError::Run(_) => runtime(e),
        _ => usage(e),
    })?;
    formats::write_linewidth_csv(create(&out)?, fwhm, &est).map_err(runtime)?;
    println!(
        "configured {:.6} MHz, estimated {:.6} MHz (bin {:.3} MHz{})",
        fwhm / MHZ,
        est.fwhm / MHZ,
        est.resolution / MHZ,
        if est.resolution_limited { ", resolution limited" } else { "" }
    );
    finish(Command::Linewidth, c, vec![out])
}
