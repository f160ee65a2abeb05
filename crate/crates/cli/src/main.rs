use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use ccplan::calibration::{
    resolve, threshold_row, ConfidenceSpec, RademacherGeometry, ThresholdPolicy, ThresholdRow,
};
use ccplan::harness::{
    self, emit_threshold_table, format_table, load_config, run_mpc_cell, run_mpc_study, run_offline_study,
    run_plan_job, write_mpc_study, write_offline_study, MpcCell, MpcStudyConfig, MpcStudyReport,
    OfflineStudyConfig, PlanJob,
};
use ccplan::mpc::{episode_metrics, Controller, MpcConfig};
use ccplan::uncertainty::resolve_environment;

#[derive(Parser)]
#[command(name = "ccplan", version, about = "Chance-constrained trajectory planning toolkit")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Base seed; overrides the seed in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Naive,
    Binomial,
    Rademacher,
    BooleRademacher,
    Hard,
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerArg {
    Cc,
    Ml,
}

#[derive(Subcommand)]
enum Command {
    /// Violation threshold for one (N, eta, beta).
    Calibrate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        eta: f64,
        #[arg(long)]
        beta: f64,
        #[arg(long, value_enum, default_value = "binomial")]
        policy: PolicyArg,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 1)]
        obstacles: usize,
        #[arg(long, default_value_t = 1)]
        horizon: usize,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Plan once from a JSON/TOML job file.
    Plan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Iteration log CSV (defaults to `<out>` with a `.log.csv` suffix).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Receding-horizon episodes in one environment.
    Mpc {
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 0.05)]
        eta: f64,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
        #[arg(long, value_enum, default_value = "cc")]
        controller: ControllerArg,
        /// MPC settings file; command-line values take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Offline calibration study.
    OfflineStudy {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "offline-study")]
        out: PathBuf,
    },
    /// MPC study across environments and etas.
    MpcStudy {
        #[arg(long, value_delimiter = ',', default_value = "env0,env1,env2")]
        envs: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.2,0.4,0.6,0.8")]
        etas: Vec<f64>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Skip the mean-rollout baseline.
        #[arg(long)]
        no_baseline: bool,
        /// Persist every episode trace under `raw/`.
        #[arg(long)]
        traces: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "mpc-study")]
        out: PathBuf,
    },
    /// Analytic threshold table.
    Thresholds {
        #[arg(long, default_value_t = 0.05)]
        beta: f64,
        #[arg(long, value_delimiter = ',', default_values_t = harness::TABLE_NS)]
        ns: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = harness::TABLE_ETAS)]
        etas: Vec<f64>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();

    match cli.command {
        Command::Calibrate {
            n,
            eta,
            beta,
            policy,
            dim,
            obstacles,
            horizon,
            format,
        } => {
            let spec = ConfidenceSpec::new(eta, beta, n)?;
            let policy = match policy {
                PolicyArg::Naive => ThresholdPolicy::Naive,
                PolicyArg::Binomial => ThresholdPolicy::Binomial,
                PolicyArg::Rademacher => ThresholdPolicy::Rademacher(RademacherGeometry::new(dim, obstacles, horizon)?),
                PolicyArg::BooleRademacher => {
                    ThresholdPolicy::BooleRademacher(RademacherGeometry::new(dim, obstacles, horizon)?)
                }
                PolicyArg::Hard => ThresholdPolicy::Hard,
            };
            let row = threshold_row(policy, spec);
            print_calibration(&mut out, &row, resolve(policy, spec).k_thresh, format)?;
        }
        Command::Plan { config, out: trace, log } => {
            let mut job: PlanJob = load_config(&config).with_context(|| format!("reading {}", config.display()))?;
            if let Some(seed) = cli.seed {
                job.planner.seed = seed;
            }
            let outcome = run_plan_job(&job)?;
            let log = log.unwrap_or_else(|| trace.with_extension("log.csv"));
            create_parent(&trace)?;
            serde_json::to_writer_pretty(fs::File::create(&trace)?, &outcome)?;
            outcome.result.write_log_csv(fs::File::create(&log)?)?;
            let r = &outcome.result;
            writeln!(
                out,
                "T = {:.4} s, cost = {:.4}, k = {}/{} (threshold {}){}",
                r.trajectory.duration(),
                r.cost,
                r.k,
                job.planner.n_particles,
                r.k_thresh,
                if r.infeasible { ", INFEASIBLE" } else { "" }
            )?;
            if let Some(e) = outcome.eta_hat {
                writeln!(out, "evaluated violation probability {e:.4}")?;
            }
        }
        Command::Mpc {
            env,
            eta,
            episodes,
            controller,
            config,
            out: dir,
        } => {
            let mut mpc: MpcConfig = match config {
                Some(p) => load_config(&p)?,
                None => MpcConfig::default(),
            };
            mpc.planner.eta = eta;
            let environment = resolve_environment(&env)?;
            let controller = match controller {
                ControllerArg::Cc => Controller::ChanceConstrained,
                ControllerArg::Ml => Controller::MeanBaseline,
            };
            let seed = cli.seed.unwrap_or(0);
            let traces = run_mpc_cell(&mpc, &environment, controller, episodes, seed)?;
            fs::create_dir_all(&dir)?;
            for (i, t) in traces.iter().enumerate() {
                let f = io::BufWriter::new(fs::File::create(dir.join(format!("episode_{i:04}.json")))?);
                serde_json::to_writer(f, t)?;
            }
            let cell = MpcCell {
                env: env.clone(),
                controller,
                eta: (controller == Controller::ChanceConstrained).then_some(eta),
                t_straight: traces.first().map_or(0.0, |t| t.straight_duration),
                episodes: traces.iter().map(episode_metrics).collect(),
            };
            write_aggregate(&dir.join("aggregate.csv"), &cell)?;
            writeln!(
                out,
                "{env}: {} episodes, success rate {:.3}, collision rate {:.3}",
                episodes,
                cell.success_rate(),
                cell.collision_rate()
            )?;
        }
        Command::OfflineStudy { config, out: dir } => {
            let mut cfg: OfflineStudyConfig = match config {
                Some(p) => load_config(&p)?,
                None => OfflineStudyConfig::default(),
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let report = run_offline_study(&cfg)?;
            write_offline_study(&dir, &cfg, &report)?;
            report.write_csv(&mut out)?;
        }
        Command::MpcStudy {
            envs,
            etas,
            episodes,
            no_baseline,
            traces,
            config,
            out: dir,
        } => {
            let mut cfg: MpcStudyConfig = match config {
                Some(p) => load_config(&p)?,
                None => MpcStudyConfig::default(),
            };
            cfg.envs = envs;
            cfg.etas = etas;
            if let Some(e) = episodes {
                cfg.episodes = e;
            }
            if no_baseline {
                cfg.baseline = false;
            }
            cfg.traces |= traces;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let report: MpcStudyReport = run_mpc_study(&cfg, Some(&dir))?;
            write_mpc_study(&dir, &cfg, &report)?;
            report.write_csv(&mut out)?;
        }
        Command::Thresholds { beta, ns, etas, format } => {
            let rows = emit_threshold_table(&ns, &etas, beta)?;
            match format {
                Format::Text => write!(out, "{}", format_table(&rows, false))?,
                Format::Csv => write!(out, "{}", format_table(&rows, true))?,
                Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&rows)?)?,
            }
        }
    }
    Ok(())
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn print_calibration(out: &mut impl Write, row: &ThresholdRow, k_thresh: usize, format: Format) -> Result<()> {
    match format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(row)?)?,
        Format::Csv => {
            writeln!(out, "policy,n,eta,beta,k,ratio,margin,feasible,k_thresh")?;
            let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                row.policy,
                row.n,
                row.eta,
                row.beta,
                row.k.map_or_else(String::new, |k| k.to_string()),
                opt(row.ratio),
                opt(row.margin),
                row.feasible,
                k_thresh
            )?;
        }
        Format::Text => match row.k {
            Some(k) => writeln!(
                out,
                "{} threshold for N={}, eta={}, beta={}: k = {k} (k/N = {:.4})",
                row.policy,
                row.n,
                row.eta,
                row.beta,
                k as f64 / row.n as f64
            )?,
            None => writeln!(
                out,
                "{} threshold for N={}, eta={}, beta={}: infeasible (planner falls back to k = 0)",
                row.policy, row.n, row.eta, row.beta
            )?,
        },
    }
    Ok(())
}

fn write_aggregate(path: &Path, cell: &MpcCell) -> Result<()> {
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "eta,env,episode,duration,success,collided,min_distance")?;
    let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| x.to_string());
    for (i, m) in cell.episodes.iter().enumerate() {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            opt(cell.eta),
            cell.env,
            i,
            opt(m.duration),
            m.success,
            m.collided,
            opt(m.min_distance)
        )?;
    }
    Ok(())
}
