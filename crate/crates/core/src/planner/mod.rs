//! Chance-constrained via-point trajectory optimization.
//!
//! Candidates are via-point sets sampled from a CMA-ES search distribution.
//! Each one is synthesized at its minimal feasible duration, scored by the
//! task objective plus a barrier on the number of violating particles, and
//! ranked. The particle set is fixed for the whole run unless resampling is
//! requested.

pub mod cmaes;

use std::sync::Arc;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{resolve, ConfidenceSpec, ThresholdPolicy};
use crate::chance_eval::{count_violations, penalty, CollisionGeometry, PenaltyParams};
use crate::error::{Error, Result};
use crate::rng::{self, label};
use crate::trajectory::{
    min_duration_with_basis, synthesize_with_basis, uniform_timings, BoundaryConditions, KinodynamicLimits,
    SplineBasis, Trajectory, TrajectoryRecord, ViaPoints,
};
use crate::uncertainty::{sample_particles, EnvironmentModel, ParticleSet};

pub use cmaes::{rank_order, CmaEs};

/// Default goal-attraction weight (seconds per workspace unit).
pub const DEFAULT_W_GOAL: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub n_via: usize,
    pub max_iter: usize,
    pub population: usize,
    pub eta: f64,
    pub beta: f64,
    pub n_particles: usize,
    pub policy: ThresholdPolicy,
    /// Defaults to [`PenaltyParams::default_for`] the duration ceiling.
    pub penalty: Option<PenaltyParams>,
    pub limits: KinodynamicLimits,
    pub inject_waiting: bool,
    pub seed: u64,
    /// Candidates slower than this are rejected outright.
    pub duration_ceiling: f64,
    pub resample_each_iter: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            n_via: 3,
            max_iter: 100,
            population: 32,
            eta: 0.1,
            beta: 0.05,
            n_particles: 100,
            policy: ThresholdPolicy::Binomial,
            penalty: None,
            limits: KinodynamicLimits::symmetric(2, 1.5, 2.0).expect("valid default limits"),
            inject_waiting: false,
            seed: 0,
            duration_ceiling: 30.0,
            resample_each_iter: false,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 || self.n_via < 1 || self.max_iter < 1 {
            return Err(Error::config("planner requires M >= 4, N_via >= 1 and maxIter >= 1"));
        }
        ConfidenceSpec::new(self.eta, self.beta, self.n_particles)?;
        self.limits.validate()?;
        if !(self.duration_ceiling > 0.0) {
            return Err(Error::config("duration ceiling must be > 0"));
        }
        Ok(())
    }

    pub fn penalty_params(&self, n: usize) -> PenaltyParams {
        self.penalty
            .unwrap_or_else(|| PenaltyParams::default_for(self.duration_ceiling, n))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Objective {
    /// Motion duration.
    Duration,
    /// Duration plus `w_goal` times the distance from the plan's end to `goal`.
    GoalReaching { goal: Vec<f64>, w_goal: f64 },
}

impl Objective {
    pub fn value(&self, duration: f64, end: &[f64]) -> f64 {
        match self {
            Objective::Duration => duration,
            Objective::GoalReaching { goal, w_goal } => {
                let d2: f64 = end.iter().zip(goal).map(|(a, b)| (a - b) * (a - b)).sum();
                duration + w_goal * d2.sqrt()
            }
        }
    }
}

/// A fixed trajectory scored alongside every generation, e.g. waiting in place.
#[derive(Debug, Clone)]
pub struct FixedCandidate {
    pub trajectory: Trajectory,
    /// Duration charged by the objective; waiting occupies the whole horizon.
    pub nominal_duration: f64,
}

impl FixedCandidate {
    /// Charged at its actual duration.
    pub fn new(trajectory: Trajectory) -> Self {
        let nominal_duration = trajectory.duration();
        Self {
            trajectory,
            nominal_duration,
        }
    }
}

/// Where particles come from.
#[derive(Debug, Clone, Copy)]
pub enum Particles<'a> {
    Fixed(&'a ParticleSet),
    /// Sampled from the model with `steps` rollout steps and the planner seed.
    Model { model: &'a EnvironmentModel, steps: usize },
}

#[derive(Debug, Clone)]
pub struct PlanRequest<'a> {
    pub bc: BoundaryConditions,
    pub robot_radius: f64,
    pub particles: Particles<'a>,
    /// Collision-check horizon in seconds (`f64::INFINITY` for static sets).
    pub check_horizon: f64,
    pub objective: Objective,
    /// Initial search mean (flattened via-points); linear interpolation if absent.
    pub initial_mean: Option<Vec<f64>>,
    /// Candidate injected when `inject_waiting` is set; defaults to holding `q0`.
    pub waiting: Option<FixedCandidate>,
    /// Remainder of a previously executed plan, if it is still running.
    pub continuation: Option<FixedCandidate>,
}

impl<'a> PlanRequest<'a> {
    pub fn new(bc: BoundaryConditions, robot_radius: f64, particles: &'a ParticleSet) -> Self {
        let check_horizon = if particles.is_static() {
            f64::INFINITY
        } else {
            (particles.steps() - 1) as f64 * particles.dt()
        };
        Self {
            bc,
            robot_radius,
            particles: Particles::Fixed(particles),
            check_horizon,
            objective: Objective::Duration,
            initial_mean: None,
            waiting: None,
            continuation: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    Sampled,
    Waiting,
    Mean,
    Continuation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iter: usize,
    pub best_cost: f64,
    pub best_k: usize,
    pub sigma: f64,
    pub generation_best_cost: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanResult {
    pub trajectory: Trajectory,
    pub cost: f64,
    pub k: usize,
    pub k_thresh: usize,
    pub hard: bool,
    /// True when the best candidate's count exceeds the threshold.
    pub infeasible: bool,
    pub source: CandidateSource,
    pub mean_cost: f64,
    pub evaluations: usize,
    pub particles_digest: u64,
    pub log: Vec<IterationLog>,
}

impl PlanResult {
    pub fn record(&self) -> TrajectoryRecord {
        self.trajectory.record()
    }

    /// CSV with columns `iter, best_cost, best_k, sigma`.
    pub fn write_log_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "iter,best_cost,best_k,sigma")?;
        for l in &self.log {
            writeln!(out, "{},{},{},{}", l.iter, l.best_cost, l.best_k, l.sigma)?;
        }
        Ok(())
    }
}

/// Initial CMA-ES distribution: via-points on the straight line at the
/// uniform timings, isotropic step `0.25 * |qT - q0|` (at least 0.1).
pub fn init_distribution(config: &PlannerConfig, bc: &BoundaryConditions) -> Result<CmaEs> {
    let mean = straight_line_vias(bc, config.n_via);
    let span: f64 = bc.q0.iter().zip(&bc.qt).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt();
    CmaEs::new(mean, (0.25 * span).max(0.1), config.population)
}

pub fn straight_line_vias(bc: &BoundaryConditions, n_via: usize) -> Vec<f64> {
    uniform_timings(n_via)
        .iter()
        .flat_map(|&s| bc.q0.iter().zip(&bc.qt).map(move |(a, b)| a + s * (b - a)))
        .collect()
}

/// Score of one candidate.
#[derive(Debug, Clone)]
struct Scored {
    x: Vec<f64>,
    cost: f64,
    k: usize,
    trajectory: Option<Trajectory>,
}

struct Evaluator<'a> {
    basis: Arc<SplineBasis>,
    bc: &'a BoundaryConditions,
    limits: &'a KinodynamicLimits,
    geom: CollisionGeometry,
    horizon: f64,
    objective: &'a Objective,
    k_thresh: usize,
    penalty: PenaltyParams,
    ceiling: f64,
    reject_cost: f64,
}

impl Evaluator<'_> {
    fn score_trajectory(&self, traj: &Trajectory, particles: &ParticleSet, duration: f64) -> Result<(f64, usize)> {
        let k = count_violations(traj, particles, &self.geom, self.horizon)?.k;
        let end = traj.position(1.0);
        let cost = self.objective.value(duration, &end) + penalty(k, self.k_thresh, &self.penalty);
        Ok((cost, k))
    }

    fn evaluate(&self, x: Vec<f64>, particles: &ParticleSet) -> Result<Scored> {
        let via = ViaPoints::from_flat(&x, self.bc.dim());
        let rejected = |x| Scored {
            x,
            cost: self.reject_cost,
            k: particles.len(),
            trajectory: None,
        };
        let duration = match min_duration_with_basis(&self.basis, &via, self.bc, self.limits) {
            Ok(t) if t <= self.ceiling => t,
            Ok(_) | Err(Error::Infeasible(_)) => return Ok(rejected(x)),
            Err(e) => return Err(e),
        };
        let traj = synthesize_with_basis(&self.basis, &via, self.bc, duration)?;
        let (cost, k) = self.score_trajectory(&traj, particles, duration)?;
        Ok(Scored {
            x,
            cost,
            k,
            trajectory: Some(traj),
        })
    }
}

/// Runs the chance-constrained optimization.
pub fn plan(config: &PlannerConfig, req: &PlanRequest) -> Result<PlanResult> {
    config.validate()?;
    req.bc.validate()?;
    if req.bc.dim() != config.limits.dim() {
        return Err(Error::DimensionMismatch {
            expected: config.limits.dim(),
            got: req.bc.dim(),
        });
    }
    for d in 0..req.bc.dim() {
        for v in [req.bc.qd0[d], req.bc.qdt[d]] {
            if v < config.limits.qd_min[d] || v > config.limits.qd_max[d] {
                return Err(Error::Infeasible(format!("boundary velocity {v} exceeds the limits")));
            }
        }
    }

    let owned;
    let mut particles: &ParticleSet = match req.particles {
        Particles::Fixed(p) => p,
        Particles::Model { model, steps } => {
            owned = sample_particles(model, config.n_particles, steps, rng::derive_seed(config.seed, &[label::PLAN]))?;
            &owned
        }
    };
    let mut resampled;
    let n = particles.len();
    let spec = ConfidenceSpec::new(config.eta, config.beta, n)?;
    let threshold = resolve(config.policy, spec);
    let penalty_params = config.penalty_params(n);
    let basis = Arc::new(SplineBasis::new(&uniform_timings(config.n_via))?);
    let eval = Evaluator {
        basis,
        bc: &req.bc,
        limits: &config.limits,
        geom: CollisionGeometry::for_particles(req.robot_radius, particles)?,
        horizon: req.check_horizon,
        objective: &req.objective,
        k_thresh: threshold.k_thresh,
        penalty: penalty_params,
        ceiling: config.duration_ceiling,
        reject_cost: 2.0 * (penalty_params.j_pen_min + penalty_params.slope * n as f64) + config.duration_ceiling,
    };

    let mut es = init_distribution(config, &req.bc)?;
    if let Some(mean) = &req.initial_mean {
        if mean.len() != es.dim() {
            return Err(Error::DimensionMismatch {
                expected: es.dim(),
                got: mean.len(),
            });
        }
        es = CmaEs::new(mean.clone(), es.sigma(), config.population)?;
    }

    let mut fixed: Vec<(FixedCandidate, CandidateSource)> = Vec::new();
    if let Some(c) = &req.continuation {
        fixed.push((c.clone(), CandidateSource::Continuation));
    }
    if config.inject_waiting {
        let w = match &req.waiting {
            Some(w) => w.clone(),
            None => {
                let hold = if req.check_horizon.is_finite() { req.check_horizon } else { config.duration_ceiling };
                FixedCandidate {
                    trajectory: brake_and_hold(&req.bc, &config.limits)?,
                    nominal_duration: hold,
                }
            }
        };
        fixed.push((w, CandidateSource::Waiting));
    }

    let digest = particles.digest();
    let mut best: Option<(Scored, CandidateSource)> = None;
    let mut log = Vec::with_capacity(config.max_iter);
    let mut evaluations = 0;
    let better = |cand: &Scored, best: &Option<(Scored, CandidateSource)>| {
        best.as_ref().is_none_or(|(b, _)| cand.cost < b.cost)
    };

    // The initial mean competes too, so a warm start is never discarded.
    let start_scored = eval.evaluate(es.mean().to_vec(), particles)?;
    evaluations += 1;
    if start_scored.trajectory.is_some() {
        best = Some((start_scored, CandidateSource::Mean));
    }

    for iter in 0..config.max_iter {
        if config.resample_each_iter && iter > 0 {
            if let Particles::Model { model, steps } = req.particles {
                let seed = rng::derive_seed(config.seed, &[label::PLAN, iter as u64]);
                resampled = sample_particles(model, config.n_particles, steps, seed)?;
                particles = &resampled;
            }
        }
        let xs: Vec<Vec<f64>> = (0..config.population)
            .map(|idx| {
                let mut r = rng::stream(config.seed, &[label::CANDIDATES, iter as u64, idx as u64]);
                es.sample(&mut r)
            })
            .collect();
        let scored: Vec<Scored> = xs
            .into_par_iter()
            .map(|x| eval.evaluate(x, particles))
            .collect::<Result<_>>()?;
        evaluations += scored.len();

        let mut gen_best = f64::INFINITY;
        for s in &scored {
            gen_best = gen_best.min(s.cost);
            if s.trajectory.is_some() && better(s, &best) {
                best = Some((s.clone(), CandidateSource::Sampled));
            }
        }
        for (w, source) in &fixed {
            let (cost, k) = eval.score_trajectory(&w.trajectory, particles, w.nominal_duration)?;
            evaluations += 1;
            gen_best = gen_best.min(cost);
            let s = Scored {
                x: Vec::new(),
                cost,
                k,
                trajectory: Some(w.trajectory.clone()),
            };
            if better(&s, &best) {
                best = Some((s, *source));
            }
        }

        es.update(&scored.into_iter().map(|s| (s.x, s.cost)).collect::<Vec<_>>())?;
        let (b, _) = best.as_ref().map_or((f64::INFINITY, n), |(b, _)| (b.cost, b.k));
        log.push(IterationLog {
            iter,
            best_cost: b,
            best_k: best.as_ref().map_or(n, |(b, _)| b.k),
            sigma: es.sigma(),
            generation_best_cost: gen_best,
        });
    }

    let mean_scored = eval.evaluate(es.mean().to_vec(), particles)?;
    evaluations += 1;
    let mean_cost = mean_scored.cost;
    if mean_scored.trajectory.is_some() && better(&mean_scored, &best) {
        best = Some((mean_scored, CandidateSource::Mean));
    }
    debug!("plan finished: mean cost {mean_cost}, best {:?}", best.as_ref().map(|b| b.0.cost));

    let (best, source) = match best {
        Some(b) => b,
        None => {
            // Nothing satisfied the limits within the ceiling; fall back to the
            // slowest admissible hold so callers always get a trajectory.
            let traj = brake_and_hold(&req.bc, &config.limits)?;
            let (cost, k) = eval.score_trajectory(&traj, particles, traj.duration())?;
            (
                Scored {
                    x: Vec::new(),
                    cost: cost.max(eval.reject_cost),
                    k,
                    trajectory: Some(traj),
                },
                CandidateSource::Waiting,
            )
        }
    };
    let trajectory = best.trajectory.expect("best candidate has a trajectory");
    Ok(PlanResult {
        infeasible: best.k > threshold.k_thresh || best.cost >= eval.reject_cost,
        trajectory,
        cost: best.cost,
        k: best.k,
        k_thresh: threshold.k_thresh,
        hard: threshold.hard,
        source,
        mean_cost,
        evaluations,
        particles_digest: digest,
        log,
    })
}

/// Decelerates from `(q0, qdot0)` at the largest per-axis rate allowed and
/// stops at `q0 + qdot0 * tau / 2`; held there afterwards. At rest this is
/// the constant waiting trajectory.
pub fn brake_and_hold(bc: &BoundaryConditions, limits: &KinodynamicLimits) -> Result<Trajectory> {
    let tau = bc
        .qd0
        .iter()
        .enumerate()
        .map(|(d, &v)| {
            if v > 0.0 {
                v / -limits.qdd_min[d]
            } else if v < 0.0 {
                v / -limits.qdd_max[d]
            } else {
                0.0
            }
        })
        .fold(0.0f64, f64::max)
        .max(crate::trajectory::T_MIN);
    let stop: Vec<f64> = bc.q0.iter().zip(&bc.qd0).map(|(q, v)| q + v * tau / 2.0).collect();
    let zeros = vec![0.0; bc.dim()];
    let brake = BoundaryConditions::new(bc.q0.clone(), bc.qd0.clone(), stop, zeros)?;
    crate::trajectory::synthesize(&ViaPoints::empty(), &brake, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uncertainty::GaussianObstacle;

    #[test]
    fn init_interpolates() {
        let cfg = PlannerConfig::default();
        let bc = BoundaryConditions::rest_to_rest(vec![0.0, 0.0], vec![10.0, 10.0]).unwrap();
        let es = init_distribution(&cfg, &bc).unwrap();
        assert_eq!(es.mean(), &[2.5, 2.5, 5.0, 5.0, 7.5, 7.5]);
        let same = BoundaryConditions::rest_to_rest(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let es = init_distribution(&cfg, &same).unwrap();
        assert!(es.mean().iter().all(|v| *v == 1.0));
        assert_eq!(es.sigma(), 0.1);
    }

    #[test]
    fn objective_values() {
        assert_eq!(Objective::Duration.value(3.0, &[0.0, 0.0]), 3.0);
        let o = Objective::GoalReaching { goal: vec![3.0, 4.0], w_goal: 2.0 };
        assert_eq!(o.value(1.0, &[0.0, 0.0]), 11.0);
    }

    #[test]
    fn brake_respects_limits_and_stops() {
        let limits = KinodynamicLimits::symmetric(2, 1.5, 2.0).unwrap();
        let bc = BoundaryConditions::new(vec![1.0, 1.0], vec![1.0, -0.5], vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        let tr = brake_and_hold(&bc, &limits).unwrap();
        assert!(tr.satisfies(&limits));
        assert_eq!(tr.position(1.0), vec![1.25, 0.875]);
        let (_, v) = tr.state_at_time(0.0);
        assert_eq!(v, vec![1.0, -0.5]);
    }

    #[test]
    fn free_space_plan_is_fast_and_deterministic() {
        let model = EnvironmentModel::StaticGaussian {
            obstacles: vec![GaussianObstacle::isotropic([5.0, 9.0], 0.1, 0.3)],
            dt: 0.05,
        };
        let set = sample_particles(&model, 50, 1, 1).unwrap();
        let bc = BoundaryConditions::rest_to_rest(vec![1.0, 5.0], vec![9.0, 5.0]).unwrap();
        let cfg = PlannerConfig { max_iter: 30, population: 16, n_particles: 50, ..PlannerConfig::default() };
        let req = PlanRequest::new(bc, 0.25, &set);
        let a = plan(&cfg, &req).unwrap();
        let b = plan(&cfg, &req).unwrap();
        assert_eq!(a.cost.to_bits(), b.cost.to_bits());
        assert!(!a.infeasible);
        // Straight rest-to-rest cubic over 8 units: max(1.5*8/1.5, sqrt(6*8/2)).
        assert!(a.cost <= 8.0 * 1.01, "cost {}", a.cost);
        assert!(a.log.windows(2).all(|w| w[1].best_cost <= w[0].best_cost));
    }
}
