use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clutterk::config::ScenarioConfig;
use clutterk::grid::{RangeDopplerGrid, VelocityAxis};
use clutterk::harness;
use clutterk::io::{read_signal, write_signal, write_text, SignalHeader};
use clutterk::metrics::bfr_result;
use clutterk::operators::ClutterOperator;
use clutterk::solver::{filter_clutter, FilterConfig};
use clutterk::waveform::PulseTrain;
use clutterk::{Error, C64};

/// Kernel-regularized clutter cancellation for irregular-PRI radar.
#[derive(Parser, Debug)]
#[command(name = "clutterk", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Scenario configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `experiment.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; defaults to `results/<experiment.name>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for independent runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Record bitwise reproducibility in the manifest.
    #[arg(long, global = true)]
    reproducible: bool,
    /// Print the resolved configuration and run plan, then exit.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a received signal and its ground truth.
    Simulate,
    /// Filter clutter from a signal file.
    Filter {
        signal: PathBuf,
        /// Pulse train JSON; defaults to `train.json` beside the signal.
        #[arg(long)]
        train: Option<PathBuf>,
        /// True clutter signal; prints the best-fit rate when given.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Overrides `solver.lambda_c`.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Filter response curves.
    Response {
        /// Comma-separated `lambda_C` values replacing `response_lambdas`.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        lambda_sweep: Option<Vec<f64>>,
    },
    /// Monte Carlo best-fit-rate sweep.
    BfrSweep,
    /// Two-target scenario: maps, estimates and peak losses.
    TargetScenario,
}

enum Failure {
    Config(String),
    Runtime(String),
    NotConverged(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
        Err(Failure::NotConverged(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(4)
        }
    }
}

fn load_config(g: &Global) -> CliResult<ScenarioConfig> {
    let path = g.config.as_ref().ok_or_else(|| Failure::Config("--config is required".into()))?;
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(s) = g.seed {
        cfg.experiment.seed = s;
    }
    if g.reproducible {
        cfg.solver.reproducible = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(g: &Global, cfg: &ScenarioConfig) -> PathBuf {
    g.out.clone().unwrap_or_else(|| Path::new("results").join(&cfg.experiment.name))
}

fn run(cli: Cli) -> CliResult<()> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    }
    let mut cfg = load_config(g)?;
    let out = out_dir(g, &cfg);
    if g.dry_run {
        print_plan(&cli.command, &cfg, &out)?;
        return Ok(());
    }
    match &cli.command {
        Command::Simulate => simulate(&cfg, &out),
        Command::Filter { signal, train, truth, lambda } => {
            if let Some(l) = lambda {
                cfg.solver.lambda_c = *l;
                cfg.validate()?;
            }
            filter(&cfg, &out, signal, train.as_deref(), truth.as_deref())
        }
        Command::Response { lambda_sweep } => {
            if let Some(sweep) = lambda_sweep {
                cfg.experiment.response_lambdas = sweep.clone();
                cfg.validate()?;
            }
            let study = harness::run_response_study(&cfg)?;
            harness::write_response_study(&out, &cfg, &study, g.threads)?;
            let all = study.curves.iter().all(|c| c.curve.all_converged);
            println!("{} curves at range bin {} -> {}", study.curves.len(), study.range_bin, out.display());
            if !all {
                return Err(Failure::NotConverged("some response probes did not converge".into()));
            }
            Ok(())
        }
        Command::BfrSweep => {
            let sweep = harness::run_bfr_sweep(&cfg)?;
            harness::write_bfr_sweep(&out, &cfg, &sweep, g.threads)?;
            println!("n_pulses,mode,lambda,n_runs,n_excluded,mean_bfr,std_bfr");
            for a in sweep.aggregates.iter().filter(|a| a.selected) {
                println!(
                    "{},{},{},{},{},{:.3},{:.3}",
                    a.n_pulses,
                    a.mode.as_str(),
                    a.lambda,
                    a.n_runs,
                    a.n_excluded,
                    a.mean,
                    a.std
                );
            }
            Ok(())
        }
        Command::TargetScenario => {
            let sc = harness::run_target_scenario(&cfg)?;
            harness::write_target_scenario(&out, &cfg, &sc, g.threads)?;
            for t in &sc.injected {
                println!("target ({} m, {} m/s): loss {:.3} dB", t.range_m, t.velocity_mps, t.loss.db);
            }
            for e in &sc.estimates {
                println!("estimate ({:.1} m, {} m/s): |x| = {:.4}", e.range_m, e.velocity, e.amplitude.norm());
            }
            if !sc.converged {
                return Err(Failure::NotConverged(format!("clutter filter did not converge in {} iterations", sc.iterations)));
            }
            Ok(())
        }
    }
}

fn print_plan(cmd: &Command, cfg: &ScenarioConfig, out: &Path) -> CliResult<()> {
    println!("# command: {cmd:?}");
    println!("# output: {}", out.display());
    let seeds: Vec<u64> = match cmd {
        Command::BfrSweep => harness::sweep_seeds(cfg),
        Command::Response { .. } => (0..cfg.experiment.response_realizations as u64).map(|r| cfg.experiment.seed + r).collect(),
        _ => vec![cfg.experiment.seed],
    };
    println!("# seeds: {} ({}..={})", seeds.len(), seeds.first().unwrap_or(&0), seeds.last().unwrap_or(&0));
    print!("{}", cfg.to_toml()?);
    Ok(())
}

fn header_for(train: &PulseTrain<f64>, n_velocities: usize) -> SignalHeader {
    SignalHeader {
        n_pulses: train.n_pulses() as u64,
        block_len: train.block_len() as u64,
        pulse_len: train.max_pulse_len() as u64,
        n_velocities: n_velocities as u64,
        n_delays: train.n_delays() as u64,
        sample_rate: train.sample_rate(),
        carrier_freq: train.carrier_freq(),
    }
}

fn simulate(cfg: &ScenarioConfig, out: &Path) -> CliResult<()> {
    let seed = cfg.experiment.seed;
    let real = harness::realize(cfg, seed, cfg.waveform.n_pulses, None)?;
    let header = header_for(&real.train, real.grid.n_velocities());
    std::fs::create_dir_all(out).map_err(Error::from)?;
    write_signal(&out.join("signal.bin"), &header, &real.received)?;
    write_signal(&out.join("clutter.bin"), &header, &real.clutter)?;
    write_text(&out.join("train.json"), &real.train.to_json()?)?;
    let truth = serde_json::to_string(&real.scene).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_text(&out.join("truth.json"), &truth)?;
    let mut m = harness::Manifest::new("simulate", cfg, vec![seed]);
    m.outputs = ["signal.bin", "clutter.bin", "train.json", "truth.json"].map(String::from).to_vec();
    m.write(out)?;
    println!(
        "{} samples ({} pulses x {}), noise variance {:.4e} -> {}",
        real.received.len(),
        header.n_pulses,
        header.block_len,
        real.scene.noise_variance,
        out.display()
    );
    Ok(())
}

fn filter(cfg: &ScenarioConfig, out: &Path, signal: &Path, train: Option<&Path>, truth: Option<&Path>) -> CliResult<()> {
    let (header, y) = read_signal(signal)?;
    let train_path = match train {
        Some(p) => p.to_path_buf(),
        None => signal.with_file_name("train.json"),
    };
    let text = std::fs::read_to_string(&train_path)
        .map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", train_path.display())))?;
    let train = PulseTrain::<f64>::from_json(&text)?;
    if header.n_pulses as usize != train.n_pulses() || header.block_len as usize != train.block_len() {
        return Err(Failure::Runtime("signal header does not match the pulse train".into()));
    }
    let parts: Vec<_> = cfg.grid.velocity_segments_mps.iter().map(|s| (s[0], s[1], s[2])).collect();
    let grid = RangeDopplerGrid::for_train(&train, VelocityAxis::segments(&parts)?, cfg.grid.range_offset_m)?;
    let kernel = harness::configured_kernel(cfg, &grid)?;
    let op = ClutterOperator::new(&train, &grid)?;
    let fc: FilterConfig = cfg.solver.clone();
    let result = filter_clutter(&y, &op, &kernel, &fc)?;

    let out_header = header_for(&train, grid.n_velocities());
    std::fs::create_dir_all(out).map_err(Error::from)?;
    write_signal(&out.join("filtered.bin"), &out_header, &result.y_filt)?;
    write_signal(&out.join("clutter_estimate.bin"), &out_header, &result.clutter_estimate)?;
    write_text(&out.join("diagnostics.csv"), &result.residual_csv())?;
    let mut m = harness::Manifest::new("filter", cfg, vec![cfg.experiment.seed]);
    m.outputs = ["filtered.bin", "clutter_estimate.bin", "diagnostics.csv"].map(String::from).to_vec();
    m.write(out)?;

    let last = result.residual_history.last().copied().unwrap_or(f64::NAN);
    println!("iterations {} residual {last:.3e} converged {}", result.iterations, result.converged);
    if let Some(p) = truth {
        let (_, c): (_, Vec<C64>) = read_signal(p)?;
        let b = bfr_result(&c, &result.clutter_estimate, cfg.experiment.bfr_mode)?;
        println!("bfr {:.4} %", b.bfr);
    }
    if !result.converged && !result.stagnated {
        return Err(Failure::NotConverged(format!(
            "PCG did not converge: {} iterations, residual {last:.3e}",
            result.iterations
        )));
    }
    Ok(())
}
