use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dynmap_core::congestion::{estimate_hidden_from_users, p_coll, ErrorPeriodMap};
use dynmap_core::{Error, Result, SimConfig};
use dynmap_sim::campaign::PointCoords;
use dynmap_sim::scenario::grid_for;
use dynmap_sim::{calibrate_map, monte_carlo, run_sim, scenario_trace, SweepSpec};
use log::{info, warn};
use serde::Serialize;

mod config;

use config::load_config;

#[derive(Parser)]
#[command(name = "dynmap", version, about = "Cooperative vehicle tracking simulator")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulates one run and writes its metrics.
    Run(Common),
    /// Runs a Monte Carlo campaign over a parameter grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Sweep grid (TOML with `t_period`, `e_thr`, `schemes`, `n_sc`).
        #[arg(long)]
        grid: PathBuf,
        /// Runs per point; defaults to `N_sim`.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Builds the error-threshold to period map from simulated error growth.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Independent traces to pool.
        #[arg(long, default_value_t = 1)]
        runs: usize,
    },
    /// Tabulates the analytic collision probability.
    AnalyzePcoll {
        #[arg(long, env = "DYNMAP_OUT", default_value = "results")]
        out: PathBuf,
        /// Largest number of same-subcarrier users.
        #[arg(long, default_value_t = 10)]
        users_max: usize,
        /// Points on the access-probability grid `k / points`.
        #[arg(long, default_value_t = 100)]
        points: usize,
    },
    /// Tabulates the inverse of a calibration map (period to threshold).
    AnalyzeMap {
        #[arg(long, env = "DYNMAP_OUT", default_value = "results")]
        out: PathBuf,
        #[arg(long)]
        map: PathBuf,
        #[arg(long, default_value_t = 100)]
        points: usize,
    },
    /// Writes the synthetic grid traffic of a configuration as a CSV trace.
    GenTraffic(Common),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides one configuration key, e.g. `--set T_period=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Error-period map CSV, as written by `calibrate`.
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long, env = "DYNMAP_OUT", default_value = "results")]
    out: PathBuf,
    /// Worker threads for campaigns.
    #[arg(short, long)]
    jobs: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<SimConfig> {
        let mut cfg = load_config(self.config.as_deref(), &self.overrides)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(map) = &self.map {
            cfg.map = Some(map.display().to_string());
        }
        if let Some(trace) = &cfg.trace {
            if !Path::new(trace).is_file() {
                return Err(Error::Config(format!("trace file `{trace}` not found")));
            }
        }
        if let Some(n) = self.jobs {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::Config(format!("--jobs: {e}")))?;
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for anything wrong with the inputs, 3 for failures while running.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::Schema { .. } | Error::Resampling(_) => 2,
        _ => 3,
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run(common) => cmd_run(&common),
        Command::Sweep { common, grid, runs } => cmd_sweep(&common, &grid, runs),
        Command::Calibrate { common, runs } => cmd_calibrate(&common, runs),
        Command::AnalyzePcoll { out, users_max, points } => cmd_analyze_pcoll(&out, users_max, points),
        Command::AnalyzeMap { out, map, points } => cmd_analyze_map(&out, &map, points),
        Command::GenTraffic(common) => cmd_gen_traffic(&common),
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io { path: path.to_path_buf(), source: e }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn load_map(cfg: &SimConfig) -> Result<Option<ErrorPeriodMap>> {
    let Some(path) = &cfg.map else { return Ok(None) };
    let map = ErrorPeriodMap::read_csv(path).map_err(|e| Error::Config(format!("error-period map: {e}")))?;
    if (map.slot() - cfg.slot).abs() > 1e-9 * cfg.slot {
        return Err(Error::Config(format!("{path}: map slot {} s differs from T_t = {} s", map.slot(), cfg.slot)));
    }
    Ok(Some(map))
}

fn write_config(cfg: &SimConfig, dir: &Path) -> Result<()> {
    let path = dir.join("config.toml");
    std::fs::write(&path, cfg.to_toml_string()).map_err(io_err(&path))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() })?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

#[derive(Serialize)]
struct RunRecord<'a> {
    schema: &'static str,
    seed: u64,
    coords: PointCoords,
    metrics: &'a dynmap_core::metrics::RunMetrics,
}

fn cmd_run(common: &Common) -> Result<()> {
    let cfg = common.config()?;
    let map = load_map(&cfg)?;
    dynmap_sim::world::check_scenario(&cfg, map.as_ref())?;
    let trace = scenario_trace(&cfg, cfg.seed)?;
    let metrics = run_sim(&cfg, &trace, cfg.seed, map.as_ref())?;
    create_dir(&common.out)?;
    write_config(&cfg, &common.out)?;
    let record = RunRecord {
        schema: "dynmap run v1",
        seed: cfg.seed,
        coords: PointCoords::of(&cfg),
        metrics: &metrics,
    };
    write_json(&common.out.join("run.json"), &record)?;
    metrics.write_series_csv(common.out.join("series.csv"))?;
    println!(
        "{}: mean error {:.3} m, p95 {:.3} m, detection error {:.4}, T_tx {}",
        record.coords.label(),
        metrics.mean_error,
        metrics.p95_error,
        metrics.detection_error,
        metrics.mean_tx_interval.map_or("n/a".into(), |t| format!("{t:.3} s")),
    );
    Ok(())
}

fn cmd_sweep(common: &Common, grid: &Path, runs: Option<usize>) -> Result<()> {
    let cfg = common.config()?;
    let spec = SweepSpec::load(grid)?;
    let points = spec.points(&cfg)?;
    let map = load_map(&cfg)?;
    let runs = runs.unwrap_or(cfg.runs);
    info!("{} points x {runs} runs", points.len());
    let summary = monte_carlo(&cfg, &points, runs, map.as_ref())?;
    summary.write(&common.out)?;
    write_config(&cfg, &common.out)?;
    for p in &summary.points {
        println!(
            "{:<28} mean {:>8.3} m  p95 {:>8.3} m  T_tx {:>7.3} s",
            p.label,
            p.mean("mean_error").unwrap_or(f64::NAN),
            p.mean("p95_error").unwrap_or(f64::NAN),
            p.mean("mean_tx_interval").unwrap_or(f64::NAN),
        );
    }
    Ok(())
}

fn cmd_calibrate(common: &Common, runs: usize) -> Result<()> {
    let cfg = common.config()?;
    let (map, hist) = calibrate_map(&cfg, runs, |r| scenario_trace(&cfg, cfg.seed + r as u64))?;
    create_dir(&common.out)?;
    write_config(&cfg, &common.out)?;
    map.write_csv(common.out.join("map.csv"))?;

    let path = common.out.join("error-growth.csv");
    let mut text = String::from("# dynmap error-growth v1\nh,horizon_s,mean_error_m,samples\n");
    for (h, (mean, n)) in hist.mean_errors().iter().zip(&hist.totals).enumerate() {
        text += &format!("{},{},{},{}\n", h + 1, (h + 1) as f64 * cfg.slot, mean, n);
    }
    std::fs::write(&path, text).map_err(io_err(&path))?;
    println!("map written to {}", common.out.join("map.csv").display());
    Ok(())
}

fn cmd_analyze_pcoll(out: &Path, users_max: usize, points: usize) -> Result<()> {
    if users_max == 0 || points == 0 {
        return Err(Error::Config("--users-max and --points must be positive".into()));
    }
    create_dir(out)?;
    let path = out.join("pcoll.csv");
    let mut text = String::from("# dynmap pcoll v1\nN_sc,N_ht,rho,P_coll\n");
    for users in 1..=users_max {
        let n_ht: f64 = estimate_hidden_from_users(users);
        for k in 1..=points {
            let rho = k as f64 / points as f64;
            text += &format!("{users},{n_ht},{rho},{}\n", p_coll(rho, n_ht)?);
        }
    }
    std::fs::write(&path, text).map_err(io_err(&path))?;
    println!("{} rows written to {}", users_max * points, path.display());
    Ok(())
}

fn cmd_analyze_map(out: &Path, map_path: &Path, points: usize) -> Result<()> {
    if points < 2 {
        return Err(Error::Config("--points must be at least 2".into()));
    }
    let map = ErrorPeriodMap::read_csv(map_path).map_err(|e| Error::Config(format!("error-period map: {e}")))?;
    let periods = map.periods();
    let (lo, hi) = (periods[0], periods[periods.len() - 1]);
    create_dir(out)?;
    let path = out.join("map-inverse.csv");
    let mut text = String::from("# dynmap map-inverse v1\nT_period_s,E_thr_m\n");
    for k in 0..points {
        let t = lo + (hi - lo) * k as f64 / (points - 1) as f64;
        text += &format!("{t},{}\n", map.threshold(t));
    }
    std::fs::write(&path, text).map_err(io_err(&path))?;
    println!("{points} rows written to {}", path.display());
    Ok(())
}

fn cmd_gen_traffic(common: &Common) -> Result<()> {
    let mut cfg = common.config()?;
    if cfg.trace.take().is_some() {
        warn!("`trace` is ignored by gen-traffic");
    }
    grid_for(&cfg).validate()?;
    let trace = scenario_trace(&cfg, cfg.seed)?;
    create_dir(&common.out)?;
    let path = common.out.join("trace.csv");
    trace.write_csv(&path)?;
    println!(
        "{} vehicles, {} slots, mean density {:.1} /km² written to {}",
        trace.vehicles.len(),
        trace.n_slots(),
        trace.mean_density(),
        path.display()
    );
    Ok(())
}
