use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use oscloc::pipeline::{
    emit_report, load_scenario, reduced_model_json, run_scenario, write_scan_csv, ParamsFile, Provenance,
    ScanSummary, VERSION,
};
use oscloc::{
    build_laplacian, kron_reduce, learn, load_case, read_trajectory, scan, simulate_full_dae, simulate_reduced,
    spectral_stats, write_trajectory, DynParams, ForcingSpec, GridCase, ReducedModel, ScanResult, SimConfig,
    SpectralCache, Trajectory,
};

/// Locate the source of forced oscillations from generator measurements.
#[derive(Parser)]
#[command(name = "oscloc", version, about)]
struct Cli {
    /// Worker threads for the likelihood scan (default: all cores).
    /// Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Noise seed. For `run`, overrides the scenario: ambient uses SEED and
    /// the forced run SEED + 1.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate generator trajectories from a case with true parameters.
    Simulate(SimulateArgs),
    /// Estimate inertia, damping and noise scale from ambient data.
    Learn(LearnArgs),
    /// Print the Kron-reduced model as JSON.
    Reduce(ReduceArgs),
    /// Scan every (bus, frequency) hypothesis and write the ranked table.
    Localize(LocalizeArgs),
    /// Write plot-ready likelihood and spectrum tables plus a summary.
    Report(ReportArgs),
    /// Run a scenario file: simulate, learn, simulate forced, localize, report.
    Run(RunArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    case: PathBuf,
    /// Recorded seconds.
    #[arg(long)]
    duration: f64,
    /// Sampling rate, Hz.
    #[arg(long, default_value_t = 50.0)]
    rate: f64,
    /// Noise scale σ; 0 for a noise-free run.
    #[arg(long, default_value_t = 0.2)]
    sigma: f64,
    /// `source=<id>,freq=<Hz>,amp=<γ>[,phase=<cycles>]`
    #[arg(long)]
    forcing: Option<ForcingSpec>,
    /// Integrate the full differential-algebraic system.
    #[arg(long)]
    full_dae: bool,
    /// Seconds simulated and discarded before recording.
    #[arg(long, default_value_t = 0.0)]
    burn_in: f64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct LearnArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long)]
    traj: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct ReduceArgs {
    #[arg(long)]
    case: PathBuf,
    /// Defaults to standard output.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ScanInputs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    traj: PathBuf,
    /// Restrict the scan to `fmin:fmax` Hz.
    #[arg(long, value_parser = parse_band)]
    band: Option<(f64, f64)>,
}

#[derive(Args)]
struct LocalizeArgs {
    #[command(flatten)]
    inputs: ScanInputs,
    /// Keep only the best K rows, in ranked order.
    #[arg(long)]
    top: Option<usize>,
    /// Scan table (CSV).
    #[arg(short, long)]
    output: PathBuf,
    /// Summary JSON; defaults to `<output stem>.summary.json`.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    inputs: ScanInputs,
    /// Output directory.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
}

fn parse_band(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected fmin:fmax")?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad fmin {lo:?}"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad fmax {hi:?}"))?;
    if !(lo >= 0.0 && hi > lo) {
        return Err(format!("need 0 <= fmin < fmax, got {lo}:{hi}"));
    }
    Ok((lo, hi))
}

fn reduce_case(case: &GridCase) -> Result<ReducedModel> {
    Ok(kron_reduce(&build_laplacian(case))?)
}

fn simulate(args: &SimulateArgs, seed: u64) -> Result<()> {
    let case = load_case(&args.case)?;
    let (inertia, damping) = case
        .true_dynamics()
        .with_context(|| format!("{} lacks inertia/damping for some generator", args.case.display()))?;
    let params = if args.sigma == 0.0 {
        DynParams::noise_free(inertia, damping)?
    } else {
        DynParams::new(inertia, damping, args.sigma)?
    };
    let cfg = SimConfig { burn_in: args.burn_in, ..SimConfig::new(args.duration, args.rate, seed) };
    let mut traj = if args.full_dae {
        simulate_full_dae(&case, &params, args.forcing.as_ref(), &cfg)?
    } else {
        simulate_reduced(&reduce_case(&case)?, &params, args.forcing.as_ref(), &cfg, &case.name)?
    };
    traj.meta.version = Some(VERSION.to_string());
    write_trajectory(&traj, &args.output)?;
    eprintln!("wrote {} samples to {}", traj.n_samples(), args.output.display());
    Ok(())
}

fn learn_cmd(args: &LearnArgs) -> Result<()> {
    let case = load_case(&args.case)?;
    let model = reduce_case(&case)?;
    let traj = read_trajectory(&args.traj)?;
    let (params, moments) = learn(&traj, &model)?;
    let mut file = ParamsFile::new(&model.gen_ids, &params, Some(&moments));
    file.provenance = Some(Provenance::new(None));
    file.write(&args.output)?;
    for (i, id) in model.gen_ids.iter().enumerate() {
        eprintln!("generator {id}: m = {:.4}, d = {:.4}", params.inertia[i], params.damping[i]);
    }
    eprintln!("sigma = {:.4}", params.sigma);
    Ok(())
}

fn reduce_cmd(args: &ReduceArgs) -> Result<()> {
    let json = reduced_model_json(&reduce_case(&load_case(&args.case)?)?);
    match &args.output {
        Some(path) => std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{json}"),
    }
    Ok(())
}

fn scan_inputs(inputs: &ScanInputs) -> Result<(ScanResult, Trajectory)> {
    let case = load_case(&inputs.case)?;
    let model = reduce_case(&case)?;
    let params = ParamsFile::read(&inputs.params)?.to_params(&model.gen_ids)?;
    let traj = read_trajectory(&inputs.traj)?;
    let mut cache: SpectralCache = spectral_stats(&traj, None)?;
    if let Some((lo, hi)) = inputs.band {
        cache.bins = cache.band(lo, hi);
        if cache.bins.is_empty() {
            bail!("band {lo}:{hi} Hz contains no frequency bins");
        }
    }
    Ok((scan(&cache, &model, &params, &model.bus_ids(), None)?, traj))
}

fn print_winner(summary: &ScanSummary) {
    let w = &summary.winner;
    eprintln!(
        "winner: bus {} at {:.6} Hz (k = {}), gamma_hat = {:.4}, group {:?}",
        w.bus_id, w.freq_hz, w.k, w.gamma_hat, summary.winner_group
    );
}

fn default_summary_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scan".into());
    output.with_file_name(format!("{stem}.summary.json"))
}

fn localize(args: &LocalizeArgs) -> Result<()> {
    let (result, _) = scan_inputs(&args.inputs)?;
    let provenance = Provenance::new(None);
    write_scan_csv(&result, &args.output, args.top, &provenance)?;
    let summary = ScanSummary::from_scan(&result, provenance)?;
    let summary_path = args.summary.clone().unwrap_or_else(|| default_summary_path(&args.output));
    summary.write(&summary_path)?;
    print_winner(&summary);
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    let (result, traj) = scan_inputs(&args.inputs)?;
    let files = emit_report(&result, &traj, &args.output, &Provenance::new(None))?;
    print_winner(&ScanSummary::from_scan(&result, Provenance::new(None))?);
    eprintln!("wrote {}, {}, {}", files.loglik.display(), files.spectrum.display(), files.summary.display());
    Ok(())
}

fn run(args: &RunArgs, seed: Option<u64>) -> Result<()> {
    let mut loaded = load_scenario(&args.scenario)?;
    if let Some(seed) = seed {
        loaded.scenario.ambient.seed = seed;
        loaded.scenario.event.seed = seed + 1;
    }
    let outcome = run_scenario(&loaded)?;
    print_winner(&outcome.summary);
    eprintln!("artifacts in {}", outcome.output_dir.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    match &cli.command {
        Command::Simulate(args) => simulate(args, cli.seed.unwrap_or(0)),
        Command::Learn(args) => learn_cmd(args),
        Command::Reduce(args) => reduce_cmd(args),
        Command::Localize(args) => localize(args),
        Command::Report(args) => report(args),
        Command::Run(args) => run(args, cli.seed),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
