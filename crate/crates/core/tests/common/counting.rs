use ccplan::chance_eval::CollisionGeometry;
use ccplan::trajectory::{synthesize, BoundaryConditions, Trajectory, ViaPoints};
use ccplan::uncertainty::{ParticleSet, Point};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub traj: Trajectory,
    pub rollouts: Vec<Vec<Vec<Point>>>,
    pub radii: Vec<f64>,
    pub robot_radius: f64,
    pub dt: f64,
    pub horizon: f64,
}

impl Instance {
    pub fn particles(&self) -> ParticleSet {
        ParticleSet::from_rollouts(self.radii.clone(), self.dt, &self.rollouts).unwrap()
    }

    pub fn geometry(&self) -> CollisionGeometry {
        CollisionGeometry::new(self.robot_radius, self.radii.clone()).unwrap()
    }
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(1..=50);
    let m = rng.random_range(1..=3);
    let h = rng.random_range(1..=20);
    let dt = [0.05, 0.1, 0.25][rng.random_range(0..3)];
    let pt = |rng: &mut ChaCha8Rng| vec![rng.random_range(0.0..4.0), rng.random_range(0.0..4.0)];
    let a = pt(rng);
    let b = pt(rng);
    let vias: Vec<Vec<f64>> = (0..rng.random_range(0..3)).map(|_| pt(rng)).collect();
    let bc = BoundaryConditions::rest_to_rest(a, b).unwrap();
    let duration = rng.random_range(0.2..3.0);
    let traj = synthesize(&ViaPoints::uniform(vias), &bc, duration).unwrap();
    let rollouts = (0..n)
        .map(|_| {
            (0..m)
                .map(|_| {
                    let mut p = [rng.random_range(0.0..4.0), rng.random_range(0.0..4.0)];
                    let v = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                    (0..h)
                        .map(|_| {
                            let q = p;
                            p = [p[0] + v[0] * dt, p[1] + v[1] * dt];
                            q
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let radii = (0..m).map(|_| rng.random_range(0.1..0.8)).collect();
    let horizon = if rng.random_bool(0.2) {
        f64::INFINITY
    } else {
        rng.random_range(0.0..1.3 * h as f64 * dt)
    };
    Instance {
        traj,
        rollouts,
        radii,
        robot_radius: rng.random_range(0.1..0.5),
        dt,
        horizon,
    }
}

/// Triple loop over particles, instants and obstacles.
pub fn brute_force(inst: &Instance) -> (usize, Vec<Option<usize>>, Vec<usize>) {
    let h = inst.rollouts[0][0].len();
    let by_horizon = if inst.horizon.is_finite() {
        (inst.horizon / inst.dt + 1e-9).floor() as usize + 1
    } else {
        usize::MAX
    };
    let steps = h.min(by_horizon);
    let hit = |i: usize, j: usize| {
        let q = inst.traj.planar_position_at_time(j as f64 * inst.dt);
        inst.rollouts[i].iter().zip(&inst.radii).any(|(r, rad)| {
            let (dx, dy) = (q[0] - r[j][0], q[1] - r[j][1]);
            let s = inst.robot_radius + rad;
            dx * dx + dy * dy < s * s
        })
    };
    let first: Vec<Option<usize>> = (0..inst.rollouts.len()).map(|i| (0..steps).find(|&j| hit(i, j))).collect();
    let per_step = (0..steps)
        .map(|j| (0..inst.rollouts.len()).filter(|&i| hit(i, j)).count())
        .collect();
    (first.iter().flatten().count(), first, per_step)
}

