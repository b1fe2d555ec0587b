//! Command-line front end. Four subcommands share one configuration file
//! and a handful of global flags:
//!
//! * `predict`   prints the analytic amplification numbers and the
//!   deterministic build-up table.
//! * `simulate`  runs the stochastic cycle simulation and writes one trace
//!   file per replica plus an ensemble summary.
//! * `plan`      plans a single rearrangement cycle from occupancy grid
//!   files and writes the move list.
//! * `analyze`   turns trace files back into per-cycle metric tables, a
//!   correlation report, the recurrence overlay and an optional decay fit.
//!
//! Exit statuses partition by failure class: 0 success, 2 usage (flag
//! parsing, handled by clap), 3 malformed or insufficient input data,
//! 4 parameter or model domain errors, 5 I/O failures. All numeric output
//! is fixed six-decimal so byte comparison of outputs is meaningful; absent
//! values print as `nan`. Every generated file is line-oriented text with
//! `#` headers documenting its columns.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{
    self, correlation_report, fit_decay, model_overlay, per_cycle_metrics, AnalysisError,
    OverlayParams,
};
use crate::config::{ConfigError, FileConfig};
use crate::geometry::{Site, Zone};
use crate::loss::{amplification_factor, iterate_recurrence, steady_state};
use crate::planner::{plan_cycle, plan_duration, MovePlan};
use crate::sim::trace_io::{
    parse_grid, read_trace, write_grid, write_trace, TraceError, TraceFile,
};
use crate::sim::{run_replicas, Ensemble, RunTrace, SimulationConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Malformed or insufficient input: unparseable files, wrong grid
    /// dimensions, traces with too few cycles.
    #[error("{0}")]
    Data(String),
    /// Structurally fine input whose values the model rejects.
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Data(_) => 3,
            CliError::Domain(_) => 4,
            CliError::Io(_) => 5,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Domain(e.to_string())
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Trace and grid parse failures are data errors; the underlying file
/// system failures stay I/O.
fn trace_err(path: &Path, e: TraceError) -> CliError {
    match e {
        TraceError::Io(inner) => io_err(path, inner),
        TraceError::Parse { .. } => CliError::Data(format!("{}: {e}", path.display())),
    }
}

/// Everything the analysis can complain about is a property of the input
/// data except a decay fit that turns out not to decay, which is a model
/// domain failure.
fn analysis_err(e: AnalysisError) -> CliError {
    match e {
        AnalysisError::NotDecaying { .. } => CliError::Domain(e.to_string()),
        _ => CliError::Data(e.to_string()),
    }
}

/// Half-open cycle-index window `START:END` as typed on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecayWindow {
    pub start: usize,
    pub end: usize,
}

fn parse_window(s: &str) -> Result<DecayWindow, String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected START:END, got '{s}'"))?;
    let start = a
        .trim()
        .parse()
        .map_err(|e| format!("window start '{a}': {e}"))?;
    let end = b
        .trim()
        .parse()
        .map_err(|e| format!("window end '{b}': {e}"))?;
    Ok(DecayWindow { start, end })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    /// Metric tables and reports only.
    Table,
    /// Tables plus final-cycle occupancy dumps in the 0/1 grid format.
    Grid,
}

#[derive(Debug, Parser)]
#[command(
    name = "relattice",
    version,
    about = "Cyclic atom-array operation: predict, simulate, plan and analyze"
)]
pub struct Cli {
    /// Configuration file; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Override the configured RNG seed.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,

    /// Override the configured replica count.
    #[arg(long, global = true, value_name = "N")]
    pub replicas: Option<u32>,

    /// Directory for generated files; created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,

    /// Cycle window START:END for the decay fit in `analyze`.
    #[arg(long, global = true, value_name = "A:B", value_parser = parse_window)]
    pub decay_window: Option<DecayWindow>,

    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Table)]
    pub format: OutputFormat,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the amplification factor, steady state and build-up table.
    Predict,
    /// Run the cycle simulation; write per-replica traces and a summary.
    Simulate,
    /// Plan one rearrangement cycle from occupancy grids.
    Plan(PlanArgs),
    /// Compute metric tables and reports from simulation traces.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Occupancy grid; its loading-zone sites are the candidate sources.
    pub loaded: PathBuf,
    /// Occupancy grid; its storage-zone sites are the already-stored atoms.
    /// Defaults to LOADED, so one full snapshot serves as both.
    pub stored: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Trace files produced by `simulate`.
    #[arg(required = true)]
    pub traces: Vec<PathBuf>,
}

/// Parses the real command line and runs it; the process exit code.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    let mut stdout = io::stdout().lock();
    exec(&cli, &mut stdout)
}

/// Runs an already-parsed invocation against an arbitrary output sink.
pub fn exec(cli: &Cli, out: &mut dyn Write) -> i32 {
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let config = load_file_config(cli)?;
    let text = match &cli.command {
        Command::Predict => cmd_predict(&config)?,
        Command::Simulate => cmd_simulate(cli, &config)?,
        Command::Plan(args) => cmd_plan(cli, &config, args)?,
        Command::Analyze(args) => cmd_analyze(cli, args)?,
    };
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Io(format!("stdout: {e}")))
}

/// Reads the configuration file (or takes the defaults) and applies the
/// command-line overrides, so the echoed configuration in output files
/// reflects what actually ran.
fn load_file_config(cli: &Cli) -> Result<FileConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            FileConfig::from_toml_str(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.run.rng_seed = seed;
    }
    if let Some(replicas) = cli.replicas {
        config.run.n_replicas = replicas;
    }
    Ok(config)
}

fn ensure_out_dir(cli: &Cli) -> Result<(), CliError> {
    fs::create_dir_all(&cli.out).map_err(|e| io_err(&cli.out, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn num6(x: f64) -> String {
    format!("{x:.6}")
}

fn opt6(x: Option<f64>) -> String {
    x.map(num6).unwrap_or_else(|| "nan".to_string())
}

/// Mean of the final quarter of a per-cycle series (at least one cycle):
/// the reported plateau level of a run.
pub fn plateau_mean(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "plateau of an empty series");
    let tail = (values.len().div_ceil(4)).max(1);
    let slice = &values[values.len() - tail..];
    slice.iter().sum::<f64>() / slice.len() as f64
}

fn cmd_predict(config: &FileConfig) -> Result<String, CliError> {
    let sim = config.to_simulation_config()?;
    let p = &sim.loss_parameters;
    let beta = amplification_factor(p.resort_loss, p.cycle_loss)
        .map_err(|e| CliError::Domain(e.to_string()))?;
    let fixed = steady_state(p.atoms_loaded_per_cycle, p.resort_loss, p.cycle_loss)
        .map_err(|e| CliError::Domain(e.to_string()))?;
    let effective = (1.0 - p.resort_loss) * p.atoms_loaded_per_cycle;

    let build_up = iterate_recurrence(
        0.0,
        p.atoms_loaded_per_cycle,
        p.resort_loss,
        p.cycle_loss,
        sim.n_cycles as usize,
    );
    let mut s = String::new();
    writeln!(s, "amplification_factor {}", num6(beta)).expect("infallible");
    writeln!(s, "steady_state {}", num6(fixed)).expect("infallible");
    writeln!(s, "effective_reload {}", num6(effective)).expect("infallible");
    s.push_str("# columns cycle predicted_count\n");
    for (i, n) in build_up.iter().enumerate() {
        writeln!(s, "B {i} {}", num6(*n)).expect("infallible");
    }
    Ok(s)
}

fn trace_file_name(replica: u32) -> String {
    format!("trace-r{replica:04}.txt")
}

fn render_ensemble(ensemble: &Ensemble<f64>, seed: u64) -> String {
    let mut s = String::new();
    s.push_str("# relattice-ensemble v1\n");
    writeln!(
        s,
        "# seed {} replicas {} cycles {}",
        seed,
        ensemble.traces.len(),
        ensemble.mean_stored.len()
    )
    .expect("infallible");
    s.push_str("# plateau_mean averages mean_stored over the final quarter of cycles\n");
    s.push_str("# columns cycle mean_stored std_stored\n");
    for (c, (m, d)) in ensemble
        .mean_stored
        .iter()
        .zip(&ensemble.std_stored)
        .enumerate()
    {
        writeln!(s, "E {c} {} {}", num6(*m), num6(*d)).expect("infallible");
    }
    writeln!(s, "# plateau_mean {}", num6(plateau_mean(&ensemble.mean_stored)))
        .expect("infallible");
    s
}

fn cmd_simulate(cli: &Cli, config: &FileConfig) -> Result<String, CliError> {
    let sim = config.to_simulation_config()?;
    let ensemble = run_replicas(&sim).map_err(|e| CliError::Domain(e.to_string()))?;
    ensure_out_dir(cli)?;

    let echo = config.to_toml_string();
    for trace in &ensemble.traces {
        let mut bytes = Vec::new();
        write_trace(&mut bytes, trace, &echo).expect("writing to a Vec cannot fail");
        write_file(&cli.out.join(trace_file_name(trace.replica)), &bytes)?;
        if cli.format == OutputFormat::Grid {
            let last = trace.records.last().expect("n_cycles is at least one");
            let mut grid = Vec::new();
            write_grid(
                &mut grid,
                sim.geometry.n_cols(),
                sim.geometry.n_rows(),
                last.image2.bits(),
            )
            .expect("writing to a Vec cannot fail");
            write_file(
                &cli.out.join(format!("final-r{:04}.grid", trace.replica)),
                &grid,
            )?;
        }
    }
    let ensemble_path = cli.out.join("ensemble.txt");
    write_file(&ensemble_path, render_ensemble(&ensemble, sim.rng_seed).as_bytes())?;

    let mut s = String::new();
    writeln!(s, "replicas {}", ensemble.traces.len()).expect("infallible");
    writeln!(s, "cycles {}", ensemble.mean_stored.len()).expect("infallible");
    writeln!(s, "plateau_mean {}", num6(plateau_mean(&ensemble.mean_stored)))
        .expect("infallible");
    writeln!(s, "ensemble {}", ensemble_path.display()).expect("infallible");
    Ok(s)
}

/// Reads a 0/1 occupancy grid and checks it against the configured lattice.
fn read_occupancy(path: &Path, sim: &SimulationConfig<f64>) -> Result<Vec<Site>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let (n_cols, n_rows, bits) = parse_grid(&text).map_err(|e| trace_err(path, e))?;
    let geo = &sim.geometry;
    if n_cols != geo.n_cols() || n_rows != geo.n_rows() {
        return Err(CliError::Data(format!(
            "{}: grid is {n_cols}x{n_rows}, configured lattice is {}x{}",
            path.display(),
            geo.n_cols(),
            geo.n_rows()
        )));
    }
    Ok(bits.iter_ones().map(|i| geo.site_from_index(i)).collect())
}

fn render_plan(plan: &MovePlan<f64>, sim: &SimulationConfig<f64>, duration_ms: f64) -> String {
    let geo = &sim.geometry;
    let mut s = String::new();
    s.push_str("# relattice-plan v1\n");
    writeln!(s, "# lattice {} {}", geo.n_cols(), geo.n_rows()).expect("infallible");
    writeln!(s, "# d_min {}", num6(plan.d_min)).expect("infallible");
    writeln!(s, "# duration_ms {}", num6(duration_ms)).expect("infallible");
    s.push_str(
        "# columns M index src_col src_row dst_col dst_row length_um waypoints_x_y...\n",
    );
    for (k, mv) in plan.moves.iter().enumerate() {
        write!(
            s,
            "M {k} {} {} {} {} {}",
            mv.source.col,
            mv.source.row,
            mv.destination.col,
            mv.destination.row,
            num6(mv.total_length())
        )
        .expect("infallible");
        for p in mv.polyline().points() {
            write!(s, " {} {}", num6(p.x), num6(p.y)).expect("infallible");
        }
        s.push('\n');
    }
    for v in &plan.violations {
        writeln!(
            s,
            "V {} {} {} {}",
            v.move_index,
            v.site.col,
            v.site.row,
            num6(v.distance)
        )
        .expect("infallible");
    }
    writeln!(s, "# moves {}", plan.moves.len()).expect("infallible");
    writeln!(s, "# violations {}", plan.violations.len()).expect("infallible");
    s
}

fn cmd_plan(cli: &Cli, config: &FileConfig, args: &PlanArgs) -> Result<String, CliError> {
    let sim = config.to_simulation_config()?;
    // One snapshot can describe both zones: sources are what sits in the
    // loading band, obstacles what sits in storage.
    let snapshot = read_occupancy(&args.loaded, &sim)?;
    let zone_sites = |sites: &[Site], zone: Zone| -> Vec<Site> {
        sites
            .iter()
            .copied()
            .filter(|&s| sim.geometry.zone(s) == zone)
            .collect()
    };
    let loaded = zone_sites(&snapshot, Zone::Loading);
    let stored = match &args.stored {
        Some(path) => zone_sites(&read_occupancy(path, &sim)?, Zone::Storage),
        None => zone_sites(&snapshot, Zone::Storage),
    };
    let plan = plan_cycle(
        &sim.geometry,
        &loaded,
        &stored,
        &sim.target_pattern,
        sim.collateral_model.d_min,
        sim.exact_assignment_limit,
    )
    .map_err(|e| CliError::Domain(e.to_string()))?;
    let duration_ms = plan_duration(&plan, &sim.kinematics);

    ensure_out_dir(cli)?;
    let plan_path = cli.out.join("plan.txt");
    write_file(&plan_path, render_plan(&plan, &sim, duration_ms).as_bytes())?;

    let mut s = String::new();
    writeln!(s, "moves {}", plan.moves.len()).expect("infallible");
    writeln!(s, "duration_ms {}", num6(duration_ms)).expect("infallible");
    writeln!(s, "violations {}", plan.violations.len()).expect("infallible");
    writeln!(s, "plan {}", plan_path.display()).expect("infallible");
    if !plan.violations.is_empty() {
        // The plan file is on disk for inspection, but a plan that cannot
        // clear the stored array is not a usable output.
        return Err(CliError::Domain(format!(
            "plan has {} clearance violations (see {})",
            plan.violations.len(),
            plan_path.display()
        )));
    }
    Ok(s)
}

/// Rebuilds an in-memory run trace from a parsed file, re-validating the
/// embedded configuration against the recorded lattice.
fn rehydrate_trace(path: &Path, file: TraceFile) -> Result<RunTrace<f64>, CliError> {
    let config = FileConfig::from_toml_str(&file.config_toml)
        .map_err(|e| CliError::Data(format!("{}: embedded config: {e}", path.display())))?;
    let sim = config
        .to_simulation_config()
        .map_err(|e| CliError::Data(format!("{}: embedded config: {e}", path.display())))?;
    if sim.geometry.n_cols() != file.n_cols || sim.geometry.n_rows() != file.n_rows {
        return Err(CliError::Data(format!(
            "{}: lattice line is {}x{} but embedded config builds {}x{}",
            path.display(),
            file.n_cols,
            file.n_rows,
            sim.geometry.n_cols(),
            sim.geometry.n_rows()
        )));
    }
    let n_sites = sim.geometry.n_sites();
    for record in &file.records {
        if let Some(&d) = record
            .move_destinations
            .iter()
            .find(|&&d| d as usize >= n_sites)
        {
            return Err(CliError::Data(format!(
                "{}: cycle {}: destination index {d} outside the lattice",
                path.display(),
                record.cycle_index
            )));
        }
    }
    Ok(RunTrace {
        config: sim,
        replica: file.replica,
        records: file.records,
    })
}

fn render_metrics(trace_name: &str, series: &analysis::FractionSeries<f64>) -> String {
    let mut s = String::new();
    s.push_str("# relattice-metrics v1\n");
    writeln!(s, "# trace {trace_name}").expect("infallible");
    writeln!(s, "# cycles {}", series.n_cycles()).expect("infallible");
    s.push_str(
        "# columns cycle loading move_success stored_survival shelved_survival \
         cycle_survival resort_gain boundary_gain cycle_gain fluctuation\n",
    );
    for j in 0..series.n_cycles() {
        writeln!(
            s,
            "R {j} {} {} {} {} {} {} {} {} {}",
            opt6(series.loading_fraction[j]),
            opt6(series.move_success[j]),
            opt6(series.stored_survival[j]),
            opt6(series.shelved_survival[j]),
            opt6(series.cycle_survival[j]),
            opt6(series.resort_gain[j]),
            opt6(series.boundary_gain[j]),
            opt6(series.cycle_gain[j]),
            opt6(series.fluctuation[j]),
        )
        .expect("infallible");
    }
    s
}

fn render_report(
    trace_name: &str,
    trace: &RunTrace<f64>,
    window: Option<DecayWindow>,
) -> Result<String, CliError> {
    let correlation = correlation_report(trace).map_err(analysis_err)?;
    let overlay = model_overlay(trace, &OverlayParams::default()).map_err(analysis_err)?;
    let counts: Vec<f64> = trace.stored_counts().iter().map(|&n| n as f64).collect();

    let mut s = String::new();
    s.push_str("# relattice-report v1\n");
    writeln!(s, "# trace {trace_name}").expect("infallible");
    writeln!(s, "# cycles {}", trace.records.len()).expect("infallible");
    s.push('\n');
    s.push_str("[correlation]\n");
    writeln!(s, "n_pairs {}", correlation.n_pairs).expect("infallible");
    writeln!(s, "stored_survival {}", opt6(correlation.stored_survival)).expect("infallible");
    writeln!(s, "shelved_survival {}", opt6(correlation.shelved_survival)).expect("infallible");
    writeln!(s, "cycle_survival {}", opt6(correlation.cycle_survival)).expect("infallible");
    writeln!(s, "resort_gain {}", opt6(correlation.resort_gain)).expect("infallible");
    writeln!(s, "boundary_gain {}", opt6(correlation.boundary_gain)).expect("infallible");
    writeln!(s, "cycle_gain {}", opt6(correlation.cycle_gain)).expect("infallible");
    s.push('\n');
    s.push_str("[overlay]\n");
    writeln!(
        s,
        "atoms_loaded_per_cycle {}",
        num6(overlay.atoms_loaded_per_cycle)
    )
    .expect("infallible");
    writeln!(s, "resort_loss {}", num6(overlay.resort_loss)).expect("infallible");
    writeln!(s, "cycle_loss {}", num6(overlay.cycle_loss)).expect("infallible");
    s.push_str("# columns cycle observed predicted\n");
    for (i, (obs, pred)) in counts.iter().zip(&overlay.predicted).enumerate() {
        writeln!(s, "O {i} {obs:.0} {}", num6(*pred)).expect("infallible");
    }
    if let Some(w) = window {
        let fit = fit_decay(&counts, w.start..w.end).map_err(analysis_err)?;
        s.push('\n');
        s.push_str("[decay]\n");
        writeln!(s, "window {}:{}", fit.window.start, fit.window.end).expect("infallible");
        writeln!(s, "survival {}", num6(fit.survival)).expect("infallible");
        writeln!(s, "cycle_loss {}", num6(fit.cycle_loss)).expect("infallible");
        writeln!(s, "residual_norm {}", num6(fit.residual_norm)).expect("infallible");
    }
    Ok(s)
}

fn cmd_analyze(cli: &Cli, args: &AnalyzeArgs) -> Result<String, CliError> {
    ensure_out_dir(cli)?;
    let mut s = String::new();
    for path in &args.traces {
        let file = read_trace(path).map_err(|e| trace_err(path, e))?;
        let trace = rehydrate_trace(path, file)?;
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("trace")
            .to_string();
        let stem = path
            .file_stem()
            .and_then(|n| n.to_str())
            .unwrap_or("trace")
            .to_string();

        let series = per_cycle_metrics(&trace);
        let metrics_path = cli.out.join(format!("{stem}-metrics.txt"));
        write_file(&metrics_path, render_metrics(&name, &series).as_bytes())?;
        let report_path = cli.out.join(format!("{stem}-report.txt"));
        write_file(
            &report_path,
            render_report(&name, &trace, cli.decay_window)?.as_bytes(),
        )?;

        writeln!(s, "trace {name} cycles {}", trace.records.len()).expect("infallible");
        writeln!(s, "wrote {}", metrics_path.display()).expect("infallible");
        writeln!(s, "wrote {}", report_path.display()).expect("infallible");
        if cli.format == OutputFormat::Grid {
            let last = trace.records.last().expect("validated non-empty");
            let mut grid = Vec::new();
            write_grid(
                &mut grid,
                trace.config.geometry.n_cols(),
                trace.config.geometry.n_rows(),
                last.image2.bits(),
            )
            .expect("writing to a Vec cannot fail");
            let grid_path = cli.out.join(format!("{stem}-final.grid"));
            write_file(&grid_path, &grid)?;
            writeln!(s, "wrote {}", grid_path.display()).expect("infallible");
        }
    }
    Ok(s)
}
