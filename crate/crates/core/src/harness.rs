//! Experiment orchestration: offline calibration studies, MPC studies and
//! analytic threshold tables, with on-disk reports.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    k_beta, k_beta_rad, rademacher_margin, resolve, ConfidenceSpec, RademacherGeometry, Threshold,
};
use crate::chance_eval::evaluate_solution;
use crate::error::{Error, Result};
use crate::mpc::{episode_metrics, run_episode, straight_line_duration, Controller, EpisodeMetrics, EpisodeTrace, MpcConfig};
use crate::planner::{plan, PlanRequest, PlanResult, PlannerConfig};
use crate::rng::{self, label};
use crate::trajectory::BoundaryConditions;
use crate::uncertainty::{resolve_environment, sample_particles, Environment, EnvironmentModel, GaussianObstacle};

pub const PERCENTILE_METHOD: &str = "nearest-rank";

/// Nearest-rank percentile: `sorted[ceil(q n) - 1]`, rank clamped to `[1, n]`.
pub fn percentile(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("percentile of no samples"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::domain(format!("percentile level {q} outside [0, 1]")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

fn median(samples: &[f64]) -> Option<f64> {
    percentile(samples, 0.5).ok()
}

/// Reads a JSON or TOML file, chosen by extension (JSON otherwise).
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => Ok(toml::from_str(&text)?),
        _ => Ok(serde_json::from_str(&text)?),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| x.to_string())
}

/// An environment given by preset name, file path, or inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnvironmentSource {
    Named(String),
    Inline(Environment),
}

impl EnvironmentSource {
    pub fn resolve(&self) -> Result<Environment> {
        match self {
            EnvironmentSource::Named(name) => resolve_environment(name),
            EnvironmentSource::Inline(env) => {
                env.model.validate()?;
                Ok(env.clone())
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Single plans

/// A single planning problem: rest-to-rest from `start` to `goal`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanJob {
    pub environment: EnvironmentSource,
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
    /// Rollout length (s) for dynamic environments.
    pub horizon: f64,
    pub planner: PlannerConfig,
    /// Fresh particles used to evaluate the result; 0 skips evaluation.
    pub n_eval: usize,
}

impl Default for PlanJob {
    fn default() -> Self {
        Self {
            environment: EnvironmentSource::Inline(centered_gaussian()),
            start: vec![1.0, 1.0],
            goal: vec![9.0, 9.0],
            horizon: 5.0,
            planner: PlannerConfig::default(),
            n_eval: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanOutcome {
    pub environment: String,
    #[serde(flatten)]
    pub result: PlanResult,
    /// Violation probability on fresh particles, if requested.
    pub eta_hat: Option<f64>,
}

pub fn run_plan_job(job: &PlanJob) -> Result<PlanOutcome> {
    let env = job.environment.resolve()?;
    let steps = if env.model.is_static() {
        1
    } else {
        (job.horizon / env.model.dt()).round() as usize + 1
    };
    let particles = sample_particles(
        &env.model,
        job.planner.n_particles,
        steps,
        rng::derive_seed(job.planner.seed, &[label::PARTICLES]),
    )?;
    let bc = BoundaryConditions::rest_to_rest(job.start.clone(), job.goal.clone())?;
    let result = plan(&job.planner, &PlanRequest::new(bc, env.robot_radius, &particles))?;
    let eta_hat = if job.n_eval > 0 {
        Some(evaluate_solution(
            &result.trajectory,
            &env.model,
            env.robot_radius,
            job.n_eval,
            rng::derive_seed(job.planner.seed, &[label::EVAL]),
        )?)
    } else {
        None
    };
    Ok(PlanOutcome {
        environment: env.name,
        result,
        eta_hat,
    })
}

// ---------------------------------------------------------------------------
// Offline study

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub n: usize,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OfflineStudyConfig {
    /// Planner runs per cell.
    pub n_exp: usize,
    /// Fresh particles used to evaluate each plan.
    pub n_eval: usize,
    pub cells: Vec<StudyCell>,
    pub beta: f64,
    pub environment: Environment,
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
    /// `eta`, `beta` and `n_particles` are overridden per cell.
    pub planner: PlannerConfig,
    pub seed: u64,
    pub persist_raw: bool,
}

/// One uncertain static obstacle in the middle of the workspace.
pub fn centered_gaussian() -> Environment {
    Environment {
        name: "gaussian-center".into(),
        robot_radius: 0.25,
        model: EnvironmentModel::StaticGaussian {
            obstacles: vec![GaussianObstacle::isotropic([5.0, 5.0], 0.5, 1.0)],
            dt: crate::uncertainty::DEFAULT_DT,
        },
    }
}

impl Default for OfflineStudyConfig {
    fn default() -> Self {
        Self {
            n_exp: 2000,
            n_eval: 2000,
            cells: [0.05, 0.1, 0.2].iter().map(|&eta| StudyCell { n: 100, eta }).collect(),
            beta: 0.05,
            environment: centered_gaussian(),
            // Diagonal, so that any detour costs time on both axes.
            start: vec![1.0, 1.0],
            goal: vec![9.0, 9.0],
            planner: PlannerConfig::default(),
            seed: 0,
            persist_raw: true,
        }
    }
}

impl OfflineStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_exp < 100 {
            return Err(Error::config("n_exp must be >= 100"));
        }
        if self.n_eval < 1000 {
            return Err(Error::config("n_eval must be >= 1000"));
        }
        if self.cells.is_empty() {
            return Err(Error::config("offline study needs at least one (N, eta) cell"));
        }
        if !self.environment.model.is_static() {
            return Err(Error::config("offline study requires a static Gaussian environment"));
        }
        self.environment.model.validate()?;
        for c in &self.cells {
            ConfidenceSpec::new(c.eta, self.beta, c.n)?;
        }
        BoundaryConditions::rest_to_rest(self.start.clone(), self.goal.clone())?;
        self.planner.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineRun {
    pub run: usize,
    pub eta_hat: f64,
    pub k: usize,
    pub duration: f64,
    pub infeasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub n: usize,
    pub eta: f64,
    pub beta: f64,
    pub k_thresh: usize,
    pub eta_binom: f64,
    /// `None` when the Rademacher bound is infeasible.
    pub eta_rad: Option<f64>,
    pub eta_hat_avg: f64,
    pub eta_hat_pct: f64,
    pub beta_hat: f64,
    pub infeasible_runs: usize,
    pub mean_duration: f64,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub raw: Vec<OfflineRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub percentile: String,
    pub cells: Vec<CellReport>,
}

impl StudyReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "n,eta,beta,k_thresh,eta_binom,eta_rad,eta_hat_avg,eta_hat_pct,beta_hat,infeasible_runs,mean_duration"
        )?;
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.n,
                c.eta,
                c.beta,
                c.k_thresh,
                c.eta_binom,
                opt(c.eta_rad),
                c.eta_hat_avg,
                c.eta_hat_pct,
                c.beta_hat,
                c.infeasible_runs,
                c.mean_duration
            )?;
        }
        Ok(())
    }
}

/// Fraction of runs whose evaluated violation probability exceeds `eta`.
pub fn beta_hat(eta_hats: &[f64], eta: f64) -> f64 {
    if eta_hats.is_empty() {
        return 0.0;
    }
    eta_hats.iter().filter(|&&e| e > eta).count() as f64 / eta_hats.len() as f64
}

fn offline_run(config: &OfflineStudyConfig, planner: &PlannerConfig, cell: StudyCell, run: usize) -> Result<OfflineRun> {
    let env = &config.environment;
    let base = rng::derive_seed(config.seed, &[cell.n as u64, cell.eta.to_bits(), run as u64]);
    let particles = sample_particles(&env.model, cell.n, 1, rng::derive_seed(base, &[label::PARTICLES]))?;
    let bc = BoundaryConditions::rest_to_rest(config.start.clone(), config.goal.clone())?;
    let mut planner = planner.clone();
    planner.seed = rng::derive_seed(base, &[label::PLAN]);
    let req = PlanRequest::new(bc, env.robot_radius, &particles);
    let res = plan(&planner, &req)?;
    let eta_hat = evaluate_solution(
        &res.trajectory,
        &env.model,
        env.robot_radius,
        config.n_eval,
        rng::derive_seed(base, &[label::EVAL]),
    )?;
    Ok(OfflineRun {
        run,
        eta_hat,
        k: res.k,
        duration: res.trajectory.duration(),
        infeasible: res.infeasible,
    })
}

/// Offline calibration study: per cell, `n_exp` plans on fresh particle sets,
/// each evaluated on a fresh `n_eval` set.
pub fn run_offline_study(config: &OfflineStudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let mut cells = Vec::with_capacity(config.cells.len());
    for &cell in &config.cells {
        let spec = ConfidenceSpec::new(cell.eta, config.beta, cell.n)?;
        let planner = PlannerConfig {
            eta: cell.eta,
            beta: config.beta,
            n_particles: cell.n,
            ..config.planner.clone()
        };
        let runs = (0..config.n_exp)
            .into_par_iter()
            .map(|i| offline_run(config, &planner, cell, i))
            .collect::<Result<Vec<_>>>()?;
        let eta_hats: Vec<f64> = runs.iter().map(|r| r.eta_hat).collect();
        let k_thresh = resolve(planner.policy, spec).k_thresh;
        let rad = RademacherGeometry::new(2, 1, 1)?;
        let eta_rad = k_beta_rad(spec, rad).is_feasible().then(|| rademacher_margin(spec, rad));
        cells.push(CellReport {
            n: cell.n,
            eta: cell.eta,
            beta: config.beta,
            k_thresh,
            eta_binom: k_thresh as f64 / cell.n as f64,
            eta_rad,
            eta_hat_avg: eta_hats.iter().sum::<f64>() / eta_hats.len() as f64,
            eta_hat_pct: percentile(&eta_hats, 1.0 - config.beta)?,
            beta_hat: beta_hat(&eta_hats, cell.eta),
            infeasible_runs: runs.iter().filter(|r| r.infeasible).count(),
            mean_duration: runs.iter().map(|r| r.duration).sum::<f64>() / runs.len() as f64,
            raw: if config.persist_raw { runs } else { Vec::new() },
        });
    }
    Ok(StudyReport {
        percentile: PERCENTILE_METHOD.into(),
        cells,
    })
}

/// Writes `config.json`, `report.csv`, `report.json` and (if present)
/// `raw/N<n>_eta<eta>.csv`.
pub fn write_offline_study(dir: &Path, config: &OfflineStudyConfig, report: &StudyReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("config.json"), config)?;
    report.write_csv(fs::File::create(dir.join("report.csv"))?)?;
    let summary = StudyReport {
        percentile: report.percentile.clone(),
        cells: report.cells.iter().map(|c| CellReport { raw: Vec::new(), ..c.clone() }).collect(),
    };
    write_json(&dir.join("report.json"), &summary)?;
    let raw_dir = dir.join("raw");
    fs::create_dir_all(&raw_dir)?;
    for c in report.cells.iter().filter(|c| !c.raw.is_empty()) {
        let mut w = csv::Writer::from_path(raw_dir.join(format!("N{}_eta{}.csv", c.n, c.eta)))?;
        for r in &c.raw {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Reads back a persisted raw file.
pub fn read_raw_runs(path: &Path) -> Result<Vec<OfflineRun>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

// ---------------------------------------------------------------------------
// MPC study

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcStudyConfig {
    /// Preset names or environment files.
    pub envs: Vec<String>,
    pub etas: Vec<f64>,
    pub episodes: usize,
    pub seed: u64,
    /// Also run the mean-rollout baseline in every environment.
    pub baseline: bool,
    pub mpc: MpcConfig,
    /// Persist one JSON trace per episode under `raw/`.
    pub traces: bool,
}

impl Default for MpcStudyConfig {
    fn default() -> Self {
        Self {
            envs: vec!["env0".into(), "env1".into(), "env2".into()],
            etas: vec![0.05, 0.2, 0.4, 0.6, 0.8],
            episodes: 200,
            seed: 0,
            baseline: true,
            mpc: MpcConfig::default(),
            traces: false,
        }
    }
}

/// One (environment, controller, eta) cell of an MPC study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcCell {
    pub env: String,
    pub controller: Controller,
    /// `None` for the baseline.
    pub eta: Option<f64>,
    pub t_straight: f64,
    pub episodes: Vec<EpisodeMetrics>,
}

impl MpcCell {
    pub fn collision_rate(&self) -> f64 {
        self.rate(|m| m.collided)
    }

    pub fn success_rate(&self) -> f64 {
        self.rate(|m| m.success)
    }

    fn rate(&self, f: impl Fn(&EpisodeMetrics) -> bool) -> f64 {
        self.episodes.iter().filter(|m| f(m)).count() as f64 / self.episodes.len().max(1) as f64
    }

    /// Durations of successful episodes.
    pub fn durations(&self) -> Vec<f64> {
        self.episodes.iter().filter_map(|m| m.duration).collect()
    }

    pub fn min_distances(&self) -> Vec<f64> {
        self.episodes.iter().filter_map(|m| m.min_distance).collect()
    }

    pub fn median_duration(&self) -> Option<f64> {
        median(&self.durations())
    }

    pub fn label(&self) -> String {
        match self.eta {
            Some(eta) => format!("{}_eta{}", self.env, eta),
            None => format!("{}_baseline", self.env),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcStudyReport {
    pub cells: Vec<MpcCell>,
}

impl MpcStudyReport {
    pub fn cell(&self, env: &str, eta: Option<f64>) -> Option<&MpcCell> {
        self.cells.iter().find(|c| c.env == env && c.eta == eta)
    }

    /// Per-cell summary.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "env,controller,eta,episodes,success_rate,collision_rate,median_duration,mean_duration,median_min_distance,t_straight"
        )?;
        for c in &self.cells {
            let d = c.durations();
            let mean = (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64);
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                c.env,
                controller_name(c.controller),
                opt(c.eta),
                c.episodes.len(),
                c.success_rate(),
                c.collision_rate(),
                opt(median(&d)),
                opt(mean),
                opt(median(&c.min_distances())),
                c.t_straight
            )?;
        }
        Ok(())
    }

    /// One line per episode.
    pub fn write_episodes_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["controller", "eta", "env", "episode", "duration", "success", "collided", "min_distance"])?;
        for c in &self.cells {
            for (i, m) in c.episodes.iter().enumerate() {
                w.write_record([
                    controller_name(c.controller).to_string(),
                    opt(c.eta),
                    c.env.clone(),
                    i.to_string(),
                    opt(m.duration),
                    m.success.to_string(),
                    m.collided.to_string(),
                    opt(m.min_distance),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn controller_name(c: Controller) -> &'static str {
    match c {
        Controller::ChanceConstrained => "cc",
        Controller::MeanBaseline => "ml",
    }
}

/// Seed of episode `i`; shared by every controller and eta so that cells
/// see the same ground-truth randomness.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    rng::derive_seed(seed, &[label::TRUTH, episode as u64])
}

/// Runs `episodes` episodes of one cell, in parallel, ordered by index.
pub fn run_mpc_cell(
    config: &MpcConfig,
    env: &Environment,
    controller: Controller,
    episodes: usize,
    seed: u64,
) -> Result<Vec<EpisodeTrace>> {
    (0..episodes)
        .into_par_iter()
        .map(|i| run_episode(config, env, controller, episode_seed(seed, i)))
        .collect()
}

fn write_traces(dir: &Path, label: &str, traces: &[EpisodeTrace]) -> Result<()> {
    let raw = dir.join("raw").join(label);
    fs::create_dir_all(&raw)?;
    for (i, t) in traces.iter().enumerate() {
        let f = std::io::BufWriter::new(fs::File::create(raw.join(format!("episode_{i:04}.json")))?);
        serde_json::to_writer(f, t)?;
    }
    Ok(())
}

/// MPC study over environments and etas, plus the baseline. When `out` is
/// given, per-episode traces are written there as cells finish.
pub fn run_mpc_study(config: &MpcStudyConfig, out: Option<&Path>) -> Result<MpcStudyReport> {
    config.mpc.validate()?;
    if config.episodes == 0 {
        return Err(Error::config("episodes must be >= 1"));
    }
    let mut cells = Vec::new();
    for name in &config.envs {
        let env = resolve_environment(name)?;
        let t_straight = straight_line_duration(&config.mpc.start, &config.mpc.goal, &config.mpc.planner.limits)?;
        let mut jobs: Vec<(Controller, Option<f64>)> =
            config.etas.iter().map(|&e| (Controller::ChanceConstrained, Some(e))).collect();
        if config.baseline {
            jobs.push((Controller::MeanBaseline, None));
        }
        for (controller, eta) in jobs {
            let mut mpc = config.mpc.clone();
            if let Some(eta) = eta {
                mpc.planner.eta = eta;
            }
            let traces = run_mpc_cell(&mpc, &env, controller, config.episodes, config.seed)?;
            let cell = MpcCell {
                env: name.clone(),
                controller,
                eta,
                t_straight,
                episodes: traces.iter().map(episode_metrics).collect(),
            };
            log::info!(
                "{}: collision rate {:.3}, success rate {:.3}",
                cell.label(),
                cell.collision_rate(),
                cell.success_rate()
            );
            if let (Some(dir), true) = (out, config.traces) {
                write_traces(dir, &cell.label(), &traces)?;
            }
            cells.push(cell);
        }
    }
    Ok(MpcStudyReport { cells })
}

/// Boxplot-ready per-cell distributions.
#[derive(Debug, Clone, Serialize)]
struct CellDistributions<'a> {
    env: &'a str,
    controller: Controller,
    eta: Option<f64>,
    t_straight: f64,
    success_rate: f64,
    collision_rate: f64,
    durations: Vec<f64>,
    min_distances: Vec<f64>,
}

/// Writes `config.json`, `report.csv`, `episodes.csv` and `distributions.json`.
pub fn write_mpc_study(dir: &Path, config: &MpcStudyConfig, report: &MpcStudyReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("config.json"), config)?;
    report.write_csv(fs::File::create(dir.join("report.csv"))?)?;
    report.write_episodes_csv(fs::File::create(dir.join("episodes.csv"))?)?;
    let dists: Vec<_> = report
        .cells
        .iter()
        .map(|c| CellDistributions {
            env: &c.env,
            controller: c.controller,
            eta: c.eta,
            t_straight: c.t_straight,
            success_rate: c.success_rate(),
            collision_rate: c.collision_rate(),
            durations: c.durations(),
            min_distances: c.min_distances(),
        })
        .collect();
    write_json(&dir.join("distributions.json"), &dists)
}

// ---------------------------------------------------------------------------
// Threshold table

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub n: usize,
    pub eta: f64,
    pub beta: f64,
    /// `None` when infeasible.
    pub k_beta: Option<usize>,
    pub eta_binom: Option<f64>,
    pub k_rad: Option<usize>,
    /// Continuous Rademacher ratio; `None` when infeasible.
    pub eta_rad: Option<f64>,
}

/// The eta grid of the standard offline table.
pub const TABLE_ETAS: [f64; 10] = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.6, 0.8];
pub const TABLE_NS: [usize; 2] = [100, 1000];

/// Analytic thresholds for every `(N, eta)` pair, rows ordered by eta then
/// N. The Rademacher column uses a planar robot and one static obstacle.
pub fn emit_threshold_table(ns: &[usize], etas: &[f64], beta: f64) -> Result<Vec<TableRow>> {
    let rad = RademacherGeometry::new(2, 1, 1)?;
    let mut rows = Vec::with_capacity(ns.len() * etas.len());
    for &eta in etas {
        for &n in ns {
            let spec = ConfidenceSpec::new(eta, beta, n)?;
            let kb = k_beta(spec).count();
            let kr = k_beta_rad(spec, rad);
            rows.push(TableRow {
                n,
                eta,
                beta,
                k_beta: kb,
                eta_binom: kb.map(|k| k as f64 / n as f64),
                k_rad: kr.count(),
                eta_rad: matches!(kr, Threshold::Count(_)).then(|| rademacher_margin(spec, rad)),
            });
        }
    }
    Ok(rows)
}

/// Renders a table with three decimals, `n/a` for infeasible entries.
pub fn format_table(rows: &[TableRow], csv: bool) -> String {
    let f3 = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"));
    let k = |v: Option<usize>| v.map_or_else(|| "n/a".to_string(), |x| x.to_string());
    let mut s = String::new();
    if csv {
        s.push_str("eta,n,eta_rad,eta_binom,k_rad,k_beta\n");
        for r in rows {
            s.push_str(&format!("{},{},{},{},{},{}\n", r.eta, r.n, f3(r.eta_rad), f3(r.eta_binom), k(r.k_rad), k(r.k_beta)));
        }
    } else {
        s.push_str(&format!("{:>6} {:>6} {:>8} {:>9} {:>6} {:>7}\n", "eta", "N", "eta_rad", "eta_binom", "k_rad", "k_beta"));
        for r in rows {
            s.push_str(&format!(
                "{:>6} {:>6} {:>8} {:>9} {:>6} {:>7}\n",
                r.eta,
                r.n,
                f3(r.eta_rad),
                f3(r.eta_binom),
                k(r.k_rad),
                k(r.k_beta)
            ));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_nearest_rank() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.95).unwrap(), 5.0);
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 0.5).unwrap(), 2.0);
        assert_eq!(percentile(&[7.0], 0.0).unwrap(), 7.0);
        assert_eq!(percentile(&[7.0], 1.0).unwrap(), 7.0);
        assert!(matches!(percentile(&[], 0.5), Err(Error::Empty(_))));
        assert!(percentile(&[1.0], 1.5).is_err());
    }

    #[test]
    fn table_cells() {
        let rows = emit_threshold_table(&[100, 1000], &[0.3, 0.35, 0.8], 0.05).unwrap();
        let get = |n, eta| rows.iter().find(|r| r.n == n && r.eta == eta).unwrap();
        assert_eq!(format!("{:.3}", get(1000, 0.3).eta_rad.unwrap()), "0.059");
        assert_eq!(format!("{:.3}", get(1000, 0.3).eta_binom.unwrap()), "0.275");
        assert_eq!(get(100, 0.35).eta_binom, Some(0.26));
        assert_eq!(get(100, 0.35).eta_rad, None);
        assert_eq!(format!("{:.3}", get(1000, 0.8).eta_rad.unwrap()), "0.559");
    }

    #[test]
    fn offline_config_invariants() {
        let mut c = OfflineStudyConfig::default();
        c.validate().unwrap();
        c.n_exp = 99;
        assert!(c.validate().is_err());
        let mut c = OfflineStudyConfig::default();
        c.n_eval = 10;
        assert!(c.validate().is_err());
    }

    #[test]
    fn beta_hat_is_strict() {
        assert_eq!(beta_hat(&[0.1, 0.2, 0.05, 0.11], 0.1), 0.5);
        assert_eq!(beta_hat(&[], 0.1), 0.0);
    }
}
