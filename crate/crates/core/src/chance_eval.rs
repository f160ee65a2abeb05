//! Monte-Carlo evaluation of the joint collision chance constraint.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;
use crate::uncertainty::{bbox_of, sample_particles, EnvironmentModel, ParticleSet, Point, CHUNK};

/// Robot and obstacle disc radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionGeometry {
    pub robot_radius: f64,
    pub obstacle_radii: Vec<f64>,
}

impl CollisionGeometry {
    pub fn new(robot_radius: f64, obstacle_radii: Vec<f64>) -> Result<Self> {
        let g = Self {
            robot_radius,
            obstacle_radii,
        };
        if !(robot_radius > 0.0) || g.obstacle_radii.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::domain("collision radii must be > 0"));
        }
        Ok(g)
    }

    /// Geometry using the obstacle radii carried by `particles`.
    pub fn for_particles(robot_radius: f64, particles: &ParticleSet) -> Result<Self> {
        Self::new(robot_radius, particles.radii().to_vec())
    }

    fn combined(&self) -> Vec<f64> {
        self.obstacle_radii.iter().map(|r| r + self.robot_radius).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    pub j_pen_min: f64,
    pub slope: f64,
}

impl PenaltyParams {
    /// `J_pen_min = 1e4 * duration_ceiling`, `a = J_pen_min / N`.
    pub fn default_for(duration_ceiling: f64, n: usize) -> Self {
        let j_pen_min = 1e4 * duration_ceiling;
        Self {
            j_pen_min,
            slope: j_pen_min / n.max(1) as f64,
        }
    }

    /// Checks the barrier dominates every violation-free cost up to `max_cost`.
    pub fn validate(&self, max_cost: f64) -> Result<()> {
        if !(self.j_pen_min > 0.0) || !(self.slope >= 0.0) {
            return Err(Error::domain("penalty requires J_pen_min > 0 and a >= 0"));
        }
        if self.j_pen_min <= max_cost {
            return Err(Error::domain(format!(
                "J_pen_min {} must exceed the largest violation-free cost {max_cost}",
                self.j_pen_min
            )));
        }
        Ok(())
    }
}

/// Discontinuous barrier: zero up to `k_thresh`, then `J_pen_min + a * (k - k_thresh - 1)`.
pub fn penalty(k: usize, k_thresh: usize, params: &PenaltyParams) -> f64 {
    if k <= k_thresh {
        0.0
    } else {
        params.j_pen_min + params.slope * (k - k_thresh - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub k: usize,
    pub n: usize,
    /// Step index of each particle's first violation.
    pub first_violation_step: Vec<Option<usize>>,
}

impl ViolationReport {
    pub fn ratio(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    /// CSV with columns `particle, first_violation_step` (empty when none).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "particle,first_violation_step")?;
        for (i, s) in self.first_violation_step.iter().enumerate() {
            match s {
                Some(j) => writeln!(out, "{i},{j}")?,
                None => writeln!(out, "{i},")?,
            }
        }
        Ok(())
    }
}

/// Robot disc centers at the collision-check instants `t_j = j * dt`.
struct RobotPath {
    points: Vec<Point>,
    boxes: Vec<[f64; 4]>,
}

impl RobotPath {
    fn new(traj: &Trajectory, dt: f64, steps: usize) -> Self {
        let points: Vec<Point> = (0..steps)
            .map(|j| traj.planar_position_at_time(j as f64 * dt))
            .collect();
        let boxes = points.chunks(CHUNK).map(bbox_of).collect();
        Self { points, boxes }
    }
}

fn box_gap_sq(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let dx = (a[0] - b[2]).max(b[0] - a[2]).max(0.0);
    let dy = (a[1] - b[3]).max(b[1] - a[3]).max(0.0);
    dx * dx + dy * dy
}

fn dist_sq(a: Point, b: Point) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    dx * dx + dy * dy
}

/// Number of check instants for `traj` against `particles` within `check_horizon`.
fn check_steps(traj: &Trajectory, particles: &ParticleSet, check_horizon: f64) -> usize {
    let dt = particles.dt();
    let limit = |t: f64| ((t / dt + 1e-9).floor() as usize).saturating_add(1);
    if particles.is_static() {
        // Obstacles never move, so instants after the robot stops add nothing.
        let end = (traj.duration() / dt - 1e-9).ceil().max(0.0) as usize + 1;
        if check_horizon.is_finite() { end.min(limit(check_horizon)) } else { end }
    } else {
        particles.steps().min(limit(check_horizon))
    }
}

fn check_dims(traj: &Trajectory, particles: &ParticleSet, geom: &CollisionGeometry) -> Result<()> {
    if traj.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: traj.dim(),
        });
    }
    if geom.obstacle_radii.len() != particles.num_obstacles() {
        return Err(Error::DimensionMismatch {
            expected: particles.num_obstacles(),
            got: geom.obstacle_radii.len(),
        });
    }
    Ok(())
}

/// First step at which particle `i` collides with the robot path, if any.
fn first_violation(path: &RobotPath, particles: &ParticleSet, i: usize, rsum: &[f64]) -> Option<usize> {
    let m = particles.num_obstacles();
    let last_obs_step = particles.steps() - 1;
    let fixed = particles.is_static();
    for (c, rbox) in path.boxes.iter().enumerate() {
        let near: Vec<usize> = (0..m)
            .filter(|&o| {
                let oc = if fixed { 0 } else { c };
                box_gap_sq(rbox, &particles.chunk_bbox(i, o, oc)) < rsum[o] * rsum[o]
            })
            .collect();
        if near.is_empty() {
            continue;
        }
        let start = c * CHUNK;
        for (dj, &q) in path.points[start..(start + CHUNK).min(path.points.len())].iter().enumerate() {
            let j = start + dj;
            let oj = if fixed { 0 } else { j.min(last_obs_step) };
            if near
                .iter()
                .any(|&o| dist_sq(q, particles.position(i, o, oj)) < rsum[o] * rsum[o])
            {
                return Some(j);
            }
        }
    }
    None
}

/// Counts particles whose rollout collides with the trajectory at any
/// check instant `t_j = j * dt <= check_horizon`. A particle counts once no
/// matter how many steps or obstacles collide. After its end the robot is
/// held at `q(T)`. For static particle sets the check ends once the robot
/// has stopped.
pub fn count_violations(
    traj: &Trajectory,
    particles: &ParticleSet,
    geom: &CollisionGeometry,
    check_horizon: f64,
) -> Result<ViolationReport> {
    check_dims(traj, particles, geom)?;
    let steps = check_steps(traj, particles, check_horizon);
    let path = RobotPath::new(traj, particles.dt(), steps);
    let rsum = geom.combined();
    let first: Vec<Option<usize>> = (0..particles.len())
        .map(|i| first_violation(&path, particles, i, &rsum))
        .collect();
    Ok(ViolationReport {
        k: first.iter().filter(|s| s.is_some()).count(),
        n: particles.len(),
        first_violation_step: first,
    })
}

/// Per-step counts of particles in collision at that step alone.
pub fn pointwise_violations(
    traj: &Trajectory,
    particles: &ParticleSet,
    geom: &CollisionGeometry,
    check_horizon: f64,
) -> Result<Vec<usize>> {
    check_dims(traj, particles, geom)?;
    let steps = check_steps(traj, particles, check_horizon);
    let path = RobotPath::new(traj, particles.dt(), steps);
    let rsum = geom.combined();
    let last = particles.steps() - 1;
    Ok((0..steps)
        .map(|j| {
            let oj = if particles.is_static() { 0 } else { j.min(last) };
            (0..particles.len())
                .filter(|&i| {
                    (0..particles.num_obstacles())
                        .any(|o| dist_sq(path.points[j], particles.position(i, o, oj)) < rsum[o] * rsum[o])
                })
                .count()
        })
        .collect())
}

/// Separable-constraint evaluation around a nominal point `p_bar`. Particle
/// `i` violates iff `h2(delta_i) = max_{j,o} |p_o(t_j) - p_bar| + r_o > h1`.
pub fn nominal_point_violations(h1: f64, particles: &ParticleSet, p_bar: Point) -> ViolationReport {
    let m = particles.num_obstacles();
    let first: Vec<Option<usize>> = (0..particles.len())
        .map(|i| {
            (0..particles.steps()).find(|&j| {
                (0..m).any(|o| dist_sq(particles.position(i, o, j), p_bar).sqrt() + particles.radii()[o] > h1)
            })
        })
        .collect();
    ViolationReport {
        k: first.iter().filter(|s| s.is_some()).count(),
        n: particles.len(),
        first_violation_step: first,
    }
}

/// Empirical violation probability of `traj` on `n_eval` fresh particles.
pub fn evaluate_solution(
    traj: &Trajectory,
    model: &EnvironmentModel,
    robot_radius: f64,
    n_eval: usize,
    seed: u64,
) -> Result<f64> {
    let steps = if model.is_static() {
        1
    } else {
        (traj.duration() / model.dt()).ceil() as usize + 1
    };
    let particles = sample_particles(model, n_eval, steps, seed)?;
    let geom = CollisionGeometry::for_particles(robot_radius, &particles)?;
    let horizon = if model.is_static() {
        f64::INFINITY
    } else {
        (steps - 1) as f64 * model.dt()
    };
    Ok(count_violations(traj, &particles, &geom, horizon)?.ratio())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{synthesize, waiting_trajectory, BoundaryConditions, ViaPoints};
    use crate::uncertainty::GaussianObstacle;

    fn line(a: Point, b: Point, t: f64) -> Trajectory {
        let bc = BoundaryConditions::rest_to_rest(a.to_vec(), b.to_vec()).unwrap();
        synthesize(&ViaPoints::empty(), &bc, t).unwrap()
    }

    fn static_set(points: &[Point], r: f64) -> ParticleSet {
        let rollouts: Vec<_> = points.iter().map(|p| vec![vec![*p]]).collect();
        ParticleSet::from_rollouts(vec![r], 0.1, &rollouts)
            .unwrap()
            .into_static()
            .unwrap()
    }

    #[test]
    fn penalty_formula() {
        let p = PenaltyParams { j_pen_min: 1000.0, slope: 10.0 };
        assert_eq!(penalty(3, 3, &p), 0.0);
        assert_eq!(penalty(4, 3, &p), 1000.0);
        assert_eq!(penalty(7, 3, &p), 1030.0);
    }

    #[test]
    fn far_trajectory_has_no_violations() {
        let set = static_set(&[[5.0, 5.0], [5.2, 5.1]], 0.5);
        let tr = line([0.0, 0.0], [1.0, 0.0], 2.0);
        let g = CollisionGeometry::for_particles(0.25, &set).unwrap();
        assert_eq!(count_violations(&tr, &set, &g, f64::INFINITY).unwrap().k, 0);
    }

    #[test]
    fn crossing_counts_once_per_particle() {
        let set = static_set(&[[5.0, 0.0], [5.0, 0.1], [5.0, 3.0]], 0.5);
        let tr = line([0.0, 0.0], [10.0, 0.0], 4.0);
        let g = CollisionGeometry::for_particles(0.25, &set).unwrap();
        let rep = count_violations(&tr, &set, &g, f64::INFINITY).unwrap();
        assert_eq!(rep.k, 2);
        assert_eq!(rep.first_violation_step[2], None);
    }

    #[test]
    fn waiting_matches_held_start_point() {
        let set = static_set(&[[1.0, 1.0], [3.0, 3.0]], 0.5);
        let g = CollisionGeometry::for_particles(0.6, &set).unwrap();
        let w = waiting_trajectory(&[1.2, 1.0], 5.0).unwrap();
        let rep = count_violations(&w, &set, &g, f64::INFINITY).unwrap();
        assert_eq!(rep.first_violation_step, vec![Some(0), None]);
    }

    #[test]
    fn nominal_point_extremes() {
        let set = static_set(&[[1.0, 1.0], [3.0, 3.0]], 0.5);
        assert_eq!(nominal_point_violations(f64::INFINITY, &set, [0.0, 0.0]).k, 0);
        assert_eq!(nominal_point_violations(0.0, &set, [0.0, 0.0]).k, 2);
    }

    #[test]
    fn tight_gaussian_on_path_always_collides() {
        let model = EnvironmentModel::StaticGaussian {
            obstacles: vec![GaussianObstacle::isotropic([5.0, 0.0], 1e-6, 0.5)],
            dt: 0.05,
        };
        let tr = line([0.0, 0.0], [10.0, 0.0], 5.0);
        assert_eq!(evaluate_solution(&tr, &model, 0.25, 200, 3).unwrap(), 1.0);
    }

    #[test]
    fn penalty_validation() {
        assert!(PenaltyParams::default_for(20.0, 100).validate(20.0).is_ok());
        assert!(PenaltyParams { j_pen_min: 10.0, slope: 1.0 }.validate(20.0).is_err());
    }
}
