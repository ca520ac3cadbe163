use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use tiersim::calibration::{Calibration, CalibrationError};
use tiersim::harness::{cmd_run, Experiment, ExperimentKind, ExperimentReport, HarnessError, RunOptions};

/// Tiered-memory page placement simulator.
#[derive(Debug, Parser)]
#[command(name = "tiersim", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every cell of an experiment file.
    Run(RunArgs),
    /// Run a ratio-sweep experiment and report the best FAST share per demand level.
    SweepRatio {
        #[command(flatten)]
        run: RunArgs,
        /// FAST shares to try, replacing the file's grid.
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
        /// Grid spacing used when no explicit ratios are given.
        #[arg(long)]
        grid_step: Option<f64>,
    },
    /// Fit a calibration file from a measurement CSV.
    Calibrate {
        /// CSV with columns tier,read_fraction,demand_mbps,latency_ns,bandwidth_mbps.
        measurements: PathBuf,
        /// Calibration supplying capacities and energies (defaults built in).
        #[arg(long)]
        template: Option<PathBuf>,
        /// Output calibration TOML; stdout if omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Write a calibration (the built-in one by default) as TOML and/or measurement CSV.
    ExportCalibration {
        #[arg(long, env = "TIERSIM_CALIBRATION")]
        calibration: Option<PathBuf>,
        #[arg(long)]
        toml: Option<PathBuf>,
        #[arg(long)]
        measurements: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment definition (TOML).
    experiment: PathBuf,
    /// Comma-separated seeds replacing the file's list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Concurrent cells; 0 means one per CPU.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Artifact root; results land in <out>/<experiment name>/.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Validate and list cells without running them.
    #[arg(long)]
    dry_run: bool,
    /// Omit the timestamp line from summary tables.
    #[arg(long)]
    no_timestamp: bool,
    /// Calibration used when the experiment names none.
    #[arg(long, env = "TIERSIM_CALIBRATION")]
    calibration: Option<PathBuf>,
}

/// An error paired with the exit code it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure { code: e.exit_code() as u8, err: e.into() }
    }
}

impl From<CalibrationError> for Failure {
    fn from(e: CalibrationError) -> Self {
        let code = if matches!(e, CalibrationError::Io(_)) { 1 } else { 2 };
        Failure { code, err: e.into() }
    }
}

fn io_failure(err: anyhow::Error) -> Failure {
    Failure { code: 1, err }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Run(args) => run(&args, |_| Ok(())),
        Command::SweepRatio { run: args, ratios, grid_step } => run(&args, |exp| {
            if exp.file.kind != ExperimentKind::RatioSweep {
                return Err(HarnessError::Config(format!("{} is not a ratio_sweep experiment", exp.file.name)));
            }
            let sweep = exp.file.sweep.as_mut().ok_or_else(|| HarnessError::Config("missing [sweep] table".into()))?;
            if let Some(r) = ratios {
                sweep.ratios = r;
            }
            if let Some(s) = grid_step {
                sweep.grid_step = s;
            }
            Ok(())
        }),
        Command::Calibrate { measurements, template, output } => calibrate(&measurements, template.as_deref(), output.as_deref()),
        Command::ExportCalibration { calibration, toml, measurements } => {
            export_calibration(calibration.as_deref(), toml.as_deref(), measurements.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn run(args: &RunArgs, adjust: impl FnOnce(&mut Experiment) -> Result<(), HarnessError>) -> Result<(), Failure> {
    let mut exp = Experiment::load(&args.experiment)?;
    adjust(&mut exp)?;
    let opts = RunOptions {
        seeds: args.seeds.clone(),
        workers: args.workers,
        out: Some(args.out.clone()),
        dry_run: args.dry_run,
        no_timestamp: args.no_timestamp,
        calibration: args.calibration.clone(),
    };
    let (report, cells) = cmd_run(&exp, &opts)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    if args.dry_run {
        for c in &cells {
            writeln!(out, "{}", c.label).map_err(|e| io_failure(e.into()))?;
        }
        writeln!(out, "{} cells, nothing run", cells.len()).map_err(|e| io_failure(e.into()))?;
        return Ok(());
    }
    print_report(&mut out, &report).map_err(|e| io_failure(e.into()))
}

fn print_report(out: &mut impl Write, report: &ExperimentReport) -> io::Result<()> {
    if report.sweep.is_empty() {
        writeln!(out, "{:<44} {:>12} {:>12} {:>9} {:>10}", "cell", "mbps", "latency_ns", "migrated", "violations")?;
        for c in &report.cells {
            let s = &c.summary;
            writeln!(
                out,
                "{:<44} {:>12.1} {:>12.1} {:>9} {:>10}",
                c.label,
                s.throughput_mbps,
                s.steady_latency_ns,
                s.migrated_pages,
                s.invariants.total()
            )?;
        }
    } else {
        writeln!(out, "{:>12} {:>6} {:>10} {:>12} {:>8}", "demand_mbps", "seed", "best_share", "best_mbps", "gain")?;
        for l in &report.sweep {
            let gain = l.gain.map_or("-".to_string(), |g| format!("{g:.4}"));
            writeln!(out, "{:>12.0} {:>6} {:>10.2} {:>12.1} {:>8}", l.demand_mbps, l.seed, l.best_fast_share, l.best_throughput_mbps, gain)?;
        }
    }
    if let Some(cmp) = &report.comparison {
        writeln!(out, "\ngeomean vs {}:", cmp.baseline)?;
        for g in &cmp.geomean {
            writeln!(out, "  {:<16} speedup {:.3}  energy {:.3}", g.policy, g.geomean_speedup, g.geomean_energy_ratio)?;
        }
    }
    if let Some(d) = &report.out_dir {
        writeln!(out, "\nartifacts in {}", d.display())?;
    }
    Ok(())
}

fn calibrate(measurements: &Path, template: Option<&Path>, output: Option<&Path>) -> Result<(), Failure> {
    let template = match template {
        Some(p) => Calibration::load(p)?,
        None => Calibration::default(),
    };
    let input = File::open(measurements)
        .with_context(|| format!("cannot open {}", measurements.display()))
        .map_err(io_failure)?;
    let cal = Calibration::from_measurements(input, &template)?;
    write_text(output, &cal.to_toml()?)
}

fn export_calibration(calibration: Option<&Path>, toml: Option<&Path>, measurements: Option<&Path>) -> Result<(), Failure> {
    let cal = match calibration {
        Some(p) => Calibration::load(p)?,
        None => Calibration::default(),
    };
    if toml.is_none() && measurements.is_none() {
        return write_text(None, &cal.to_toml()?);
    }
    if let Some(p) = toml {
        write_text(Some(p), &cal.to_toml()?)?;
    }
    if let Some(p) = measurements {
        let f = File::create(p).with_context(|| format!("cannot create {}", p.display())).map_err(io_failure)?;
        cal.write_measurements(BufWriter::new(f))?;
    }
    Ok(())
}

fn write_text(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => io::stdout().write_all(text.as_bytes()).map_err(|e| anyhow!(e)),
    }
    .map_err(io_failure)
}
