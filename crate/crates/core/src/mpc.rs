//! Receding-horizon control against a simulated stochastic environment.

use serde::{Deserialize, Serialize};

use crate::calibration::ThresholdPolicy;
use crate::error::{Error, Result};
use crate::planner::{
    brake_and_hold, plan, CandidateSource, Objective, PlanRequest, PlannerConfig, Particles, FixedCandidate,
    DEFAULT_W_GOAL,
};
use crate::rng::{self, label};
use crate::trajectory::{min_duration, synthesize, uniform_timings, BoundaryConditions, KinodynamicLimits, Trajectory, TrajectoryRecord, ViaPoints};
use crate::uncertainty::{sample_particles, Environment, Point, WorldState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    /// Replanning period (s).
    pub delta: f64,
    /// Rollout and collision-check horizon (s).
    pub horizon: f64,
    pub max_steps: usize,
    pub planner: PlannerConfig,
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
    pub goal_tolerance: f64,
    pub speed_tolerance: f64,
    pub w_goal: f64,
    pub warm_start: bool,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            delta: 0.25,
            horizon: 5.0,
            max_steps: 100,
            planner: PlannerConfig {
                max_iter: 20,
                inject_waiting: true,
                ..PlannerConfig::default()
            },
            start: vec![1.0, 1.0],
            goal: vec![9.0, 9.0],
            goal_tolerance: 0.1,
            speed_tolerance: 0.05,
            w_goal: DEFAULT_W_GOAL,
            warm_start: true,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < self.horizon) {
            return Err(Error::config("MPC requires 0 < delta < horizon"));
        }
        if self.max_steps < 1 {
            return Err(Error::config("max_steps must be >= 1"));
        }
        if self.start.len() != 2 || self.goal.len() != 2 {
            return Err(Error::config("start and goal must be planar"));
        }
        self.planner.validate()
    }
}

/// Which planner drives the robot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    /// Chance-constrained planning against all particles.
    ChanceConstrained,
    /// Hard-constrained planning against the mean particle rollout.
    MeanBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub cost: f64,
    pub k: usize,
    pub k_thresh: usize,
    pub infeasible: bool,
    pub source: CandidateSource,
    pub trajectory: TrajectoryRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    /// Ground-truth obstacle state when the step starts.
    pub world: WorldState,
    pub particle_seed: u64,
    pub plan: PlanSummary,
    /// The plan was rejected and the robot braked and held instead.
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Time to reach the goal (successful episodes only).
    pub duration: Option<f64>,
    pub success: bool,
    pub collided: bool,
    pub reached_goal: bool,
    /// Smallest clearance over executed time (successful episodes only).
    pub min_distance: Option<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub env: String,
    pub controller: Controller,
    pub eta: f64,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    /// Executed robot positions at the environment resolution.
    pub robot_path: Vec<Point>,
    /// Ground-truth obstacle centers at the same instants.
    pub obstacle_path: Vec<Vec<Point>>,
    /// Smallest clearance, including unsuccessful episodes.
    pub raw_min_distance: f64,
    pub first_collision_time: Option<f64>,
    pub reached_goal_step: Option<usize>,
    pub delta: f64,
    pub straight_duration: f64,
}

/// Duration of the rest-to-rest straight line from `start` to `goal`.
pub fn straight_line_duration(start: &[f64], goal: &[f64], limits: &KinodynamicLimits) -> Result<f64> {
    let bc = BoundaryConditions::rest_to_rest(start.to_vec(), goal.to_vec())?;
    min_duration(&ViaPoints::empty(), &bc, limits)
}

/// Initial via-points from the previous plan, shifted by `elapsed` seconds.
/// `None` once the previous plan has run out.
pub fn warm_start(previous: &Trajectory, elapsed: f64, n_via: usize) -> Option<Vec<f64>> {
    let t = previous.duration();
    if elapsed >= t {
        return None;
    }
    Some(
        uniform_timings(n_via)
            .iter()
            .flat_map(|s| previous.position((elapsed + s * (t - elapsed)) / t))
            .collect(),
    )
}

/// The unexecuted remainder of `previous` after `elapsed` seconds, started
/// from the state `(q, qd)` actually reached. A minimum-effort spline
/// restricted to a sub-interval is again the minimum-effort spline through
/// its remaining via-points, so this reproduces the tail exactly.
pub fn continuation(previous: &Trajectory, elapsed: f64, q: &[f64], qd: &[f64]) -> Option<Trajectory> {
    let t = previous.duration();
    if elapsed >= t - 1e-9 {
        return None;
    }
    let e = elapsed / t;
    let (points, timings): (Vec<Vec<f64>>, Vec<f64>) = previous
        .via()
        .points()
        .iter()
        .zip(previous.via().timings())
        .filter(|(_, s)| **s > e + 1e-6)
        .map(|(p, s)| (p.clone(), (s - e) / (1.0 - e)))
        .unzip();
    let via = ViaPoints::with_timings(points, timings).ok()?;
    let end = previous.boundary();
    let bc = BoundaryConditions::new(q.to_vec(), qd.to_vec(), end.qt.clone(), end.qdt.clone()).ok()?;
    synthesize(&via, &bc, t - elapsed).ok()
}

fn clearance(robot: Point, obstacles: &[Point], robot_radius: f64, radii: &[f64]) -> f64 {
    obstacles
        .iter()
        .zip(radii)
        .map(|(o, r)| ((robot[0] - o[0]).powi(2) + (robot[1] - o[1]).powi(2)).sqrt() - robot_radius - r)
        .fold(f64::INFINITY, f64::min)
}

fn clamp_velocity(qd: &mut [f64], limits: &KinodynamicLimits) {
    for (d, v) in qd.iter_mut().enumerate() {
        *v = v.clamp(limits.qd_min[d], limits.qd_max[d]);
    }
}

/// Runs one closed-loop episode.
pub fn run_episode(config: &MpcConfig, env: &Environment, controller: Controller, seed: u64) -> Result<EpisodeTrace> {
    config.validate()?;
    let model = &env.model;
    let dt = model.dt();
    let rollout_steps = (config.horizon / dt).round() as usize + 1;
    let substeps = (config.delta / dt).round().max(1.0) as usize;
    let radii = model.radii();
    let limits = &config.planner.limits;

    let mut truth_rng = rng::stream(seed, &[label::TRUTH]);
    let mut world = model.initial_state(&mut truth_rng);
    let mut q = config.start.clone();
    let mut qd = vec![0.0; q.len()];
    let mut previous: Option<Trajectory> = None;

    let mut trace = EpisodeTrace {
        env: env.name.clone(),
        controller,
        eta: config.planner.eta,
        seed,
        steps: Vec::new(),
        robot_path: vec![[q[0], q[1]]],
        obstacle_path: vec![model.positions(&world)],
        raw_min_distance: clearance([q[0], q[1]], &model.positions(&world), env.robot_radius, &radii),
        first_collision_time: None,
        reached_goal_step: None,
        delta: config.delta,
        straight_duration: straight_line_duration(&config.start, &config.goal, limits)?,
    };
    if trace.raw_min_distance < 0.0 {
        trace.first_collision_time = Some(0.0);
    }

    let at_goal = |q: &[f64], qd: &[f64]| {
        let dist = q.iter().zip(&config.goal).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let speed = qd.iter().map(|v| v * v).sum::<f64>().sqrt();
        dist <= config.goal_tolerance && speed < config.speed_tolerance
    };

    for step in 0..config.max_steps {
        if at_goal(&q, &qd) {
            trace.reached_goal_step = Some(step);
            break;
        }
        let time = step as f64 * config.delta;
        let particle_seed = rng::derive_seed(seed, &[label::PARTICLES, step as u64]);
        let particles = sample_particles(&model.conditioned(&world), config.planner.n_particles, rollout_steps, particle_seed)?;
        let particles = match controller {
            Controller::ChanceConstrained => particles,
            Controller::MeanBaseline => particles.mean_rollout(),
        };
        let mut planner = config.planner.clone();
        planner.seed = rng::derive_seed(seed, &[label::PLAN, step as u64]);
        if controller == Controller::MeanBaseline {
            planner.policy = ThresholdPolicy::Hard;
            planner.n_particles = 1;
        }

        clamp_velocity(&mut qd, limits);
        let bc = BoundaryConditions::new(q.clone(), qd.clone(), config.goal.clone(), vec![0.0; q.len()])?;
        let brake = brake_and_hold(&bc, limits)?;
        let request = PlanRequest {
            bc,
            robot_radius: env.robot_radius,
            particles: Particles::Fixed(&particles),
            check_horizon: config.horizon,
            objective: Objective::GoalReaching {
                goal: config.goal.clone(),
                w_goal: config.w_goal,
            },
            initial_mean: if config.warm_start {
                previous.as_ref().and_then(|p| warm_start(p, config.delta, planner.n_via))
            } else {
                None
            },
            waiting: Some(FixedCandidate {
                trajectory: brake.clone(),
                nominal_duration: config.horizon,
            }),
            continuation: previous
                .as_ref()
                .and_then(|p| continuation(p, config.delta, &q, &qd))
                .map(FixedCandidate::new),
        };
        let (executed, summary, fallback) = match plan(&planner, &request) {
            Ok(res) => {
                let summary = PlanSummary {
                    cost: res.cost,
                    k: res.k,
                    k_thresh: res.k_thresh,
                    infeasible: res.infeasible,
                    source: res.source,
                    trajectory: res.record(),
                };
                if res.infeasible {
                    (brake, summary, true)
                } else {
                    (res.trajectory, summary, false)
                }
            }
            Err(Error::Infeasible(_)) => {
                let summary = PlanSummary {
                    cost: f64::INFINITY,
                    k: particles.len(),
                    k_thresh: 0,
                    infeasible: true,
                    source: CandidateSource::Waiting,
                    trajectory: brake.record(),
                };
                (brake, summary, true)
            }
            Err(e) => return Err(e),
        };
        trace.steps.push(StepRecord {
            step,
            time,
            q: q.clone(),
            qd: qd.clone(),
            world: world.clone(),
            particle_seed,
            plan: summary,
            fallback,
        });

        for sub in 1..=substeps {
            world = model.advance(&world, &mut truth_rng);
            let t = sub as f64 * dt;
            let p = executed.planar_position_at_time(t);
            let obstacles = model.positions(&world);
            let c = clearance(p, &obstacles, env.robot_radius, &radii);
            if c < 0.0 && trace.first_collision_time.is_none() {
                trace.first_collision_time = Some(time + t);
            }
            trace.raw_min_distance = trace.raw_min_distance.min(c);
            trace.robot_path.push(p);
            trace.obstacle_path.push(obstacles);
        }
        let (nq, nqd) = executed.state_at_time(config.delta);
        q = nq;
        qd = nqd;
        previous = Some(executed);
    }
    if trace.reached_goal_step.is_none() && at_goal(&q, &qd) {
        trace.reached_goal_step = Some(trace.steps.len());
    }
    Ok(trace)
}

/// Episode metrics: duration and minimum distance are reported only for
/// successful episodes (goal reached without any collision).
pub fn episode_metrics(trace: &EpisodeTrace) -> EpisodeMetrics {
    let collided = trace.first_collision_time.is_some();
    let reached = trace.reached_goal_step.is_some();
    let success = reached && !collided;
    EpisodeMetrics {
        duration: trace
            .reached_goal_step
            .filter(|_| success)
            .map(|s| s as f64 * trace.delta),
        success,
        collided,
        reached_goal: reached,
        min_distance: success.then_some(trace.raw_min_distance.max(0.0)),
        steps: trace.steps.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uncertainty::{Bounds, EnvironmentModel, ObstacleSpec};

    fn far_env() -> Environment {
        Environment {
            name: "far".into(),
            robot_radius: 0.25,
            model: EnvironmentModel::RandomWalk {
                obstacles: vec![ObstacleSpec { x0: [9.5, 0.5], v0: [0.0, 0.0], radius: 0.2, accel_variance: 0.0 }],
                bounds: Bounds::default(),
                dt: 0.05,
            },
        }
    }

    #[test]
    fn warm_start_falls_back_after_end() {
        let bc = BoundaryConditions::rest_to_rest(vec![0.0, 0.0], vec![4.0, 0.0]).unwrap();
        let tr = synthesize(&ViaPoints::empty(), &bc, 2.0).unwrap();
        assert!(warm_start(&tr, 2.0, 3).is_none());
        let w = warm_start(&tr, 1.0, 1).unwrap();
        assert_eq!(w, tr.position(0.75));
    }

    #[test]
    fn continuation_reproduces_tail() {
        let bc = BoundaryConditions::new(vec![0.0, 0.0], vec![0.5, 0.0], vec![4.0, 2.0], vec![0.0, 0.0]).unwrap();
        let via = ViaPoints::uniform(vec![vec![1.0, 1.0], vec![2.0, 0.5], vec![3.0, 2.5]]);
        let tr = synthesize(&via, &bc, 4.0).unwrap();
        let (q, qd) = tr.state_at_time(1.3);
        let tail = continuation(&tr, 1.3, &q, &qd).unwrap();
        for i in 0..=50 {
            let t = i as f64 * 2.7 / 50.0;
            let (a, b) = (tail.state_at_time(t).0, tr.state_at_time(1.3 + t).0);
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-9), "{a:?} {b:?}");
        }
    }

    #[test]
    fn free_space_episode_reaches_goal() {
        let mut cfg = MpcConfig::default();
        cfg.planner.population = 16;
        cfg.planner.n_particles = 10;
        let trace = run_episode(&cfg, &far_env(), Controller::ChanceConstrained, 1).unwrap();
        let m = episode_metrics(&trace);
        assert!(m.success, "{m:?}");
        let t = m.duration.unwrap();
        // Durations are whole MPC steps, so compare up to one step.
        let single_shot = trace.steps[0].plan.trajectory.duration;
        assert!((t - single_shot).abs() <= cfg.delta, "{t} vs {single_shot}");
    }

    #[test]
    fn collided_episode_is_not_successful() {
        let trace = EpisodeTrace {
            env: "x".into(),
            controller: Controller::ChanceConstrained,
            eta: 0.1,
            seed: 0,
            steps: vec![],
            robot_path: vec![],
            obstacle_path: vec![],
            raw_min_distance: -0.1,
            first_collision_time: Some(1.0),
            reached_goal_step: Some(10),
            delta: 0.25,
            straight_duration: 1.0,
        };
        let m = episode_metrics(&trace);
        assert!(!m.success && m.collided && m.duration.is_none() && m.min_distance.is_none());
    }
}
