//! Stochastic obstacle models and particle rollouts.

use std::hash::{Hash, Hasher};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, label, StreamRng};

pub type Point = [f64; 2];

/// Rollout resolution: 100 steps over a 5 s horizon.
pub const DEFAULT_DT: f64 = 0.05;

/// Axis-aligned workspace box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: Point,
    pub hi: Point,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            lo: [0.0, 0.0],
            hi: [10.0, 10.0],
        }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        if (0..2).all(|a| self.lo[a] < self.hi[a]) {
            Ok(())
        } else {
            Err(Error::domain(format!("empty workspace box {self:?}")))
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        (0..2).all(|a| p[a] >= self.lo[a] && p[a] <= self.hi[a])
    }
}

/// A randomly walking circular obstacle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSpec {
    pub x0: Point,
    pub v0: Point,
    pub radius: f64,
    #[serde(default)]
    pub accel_variance: f64,
}

/// A static obstacle whose position is Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianObstacle {
    pub mean: Point,
    pub covariance: [[f64; 2]; 2],
    pub radius: f64,
}

impl GaussianObstacle {
    pub fn isotropic(mean: Point, sigma: f64, radius: f64) -> Self {
        let v = sigma * sigma;
        Self {
            mean,
            covariance: [[v, 0.0], [0.0, v]],
            radius,
        }
    }

    /// Lower-triangular factor `(l11, l21, l22)` of the covariance.
    fn cholesky(&self) -> (f64, f64, f64) {
        let [[a, b], [_, c]] = self.covariance;
        let l11 = a.max(0.0).sqrt();
        let l21 = if l11 > 0.0 { b / l11 } else { 0.0 };
        let l22 = (c - l21 * l21).max(0.0).sqrt();
        (l11, l21, l22)
    }

    fn validate(&self) -> Result<()> {
        let [[a, b], [b2, c]] = self.covariance;
        if b != b2 {
            return Err(Error::domain("covariance must be symmetric"));
        }
        let tol = 1e-12 * (a.abs() + c.abs()).max(1.0);
        if a < 0.0 || c < 0.0 || a * c - b * b < -tol {
            return Err(Error::domain("covariance must be positive semidefinite"));
        }
        check_radius(self.radius)
    }
}

/// How the conveyor's direction-change probability evolves between flips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardUpdate {
    /// `p <- p * (1 - alpha)`.
    #[default]
    Decay,
    /// `p <- p + alpha * (1 - p)`.
    Grow,
}

impl HazardUpdate {
    pub fn apply(self, p: f64, alpha: f64) -> f64 {
        match self {
            HazardUpdate::Decay => p * (1.0 - alpha),
            HazardUpdate::Grow => p + alpha * (1.0 - p),
        }
    }
}

/// A box on a conveyor belt moving along the x axis at a fixed lane `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConveyorSpec {
    /// Initial belt coordinate.
    pub x0: f64,
    /// Lane coordinate; constant over time.
    pub lane: f64,
    /// Signed initial belt velocity; its magnitude is conserved.
    pub velocity: f64,
    pub alpha: f64,
    pub belt: [f64; 2],
    pub radius: f64,
    /// Initial direction-change probability; defaults to `alpha`.
    #[serde(default)]
    pub p0: Option<f64>,
    #[serde(default)]
    pub hazard: HazardUpdate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum EnvironmentModel {
    StaticGaussian {
        obstacles: Vec<GaussianObstacle>,
        #[serde(default = "default_dt")]
        dt: f64,
    },
    RandomWalk {
        obstacles: Vec<ObstacleSpec>,
        #[serde(default)]
        bounds: Bounds,
        #[serde(default = "default_dt")]
        dt: f64,
    },
    Conveyor {
        conveyor: ConveyorSpec,
        #[serde(default = "default_dt")]
        dt: f64,
    },
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

fn check_radius(r: f64) -> Result<()> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("radius {r} must be > 0")))
    }
}

/// Random-walk obstacle state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkState {
    pub x: Point,
    pub v: Point,
}

/// Conveyor state `[x, xdot, p]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConveyorState {
    pub x: f64,
    pub xd: f64,
    pub p: f64,
}

/// Exact physical state of every obstacle at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "state", rename_all = "snake_case")]
pub enum WorldState {
    Static(Vec<Point>),
    Walk(Vec<WalkState>),
    Conveyor(ConveyorState),
}

/// Reflects `x` into `[lo, hi]`; returns the folded position and whether an
/// odd number of reflections occurred.
fn reflect(x: f64, lo: f64, hi: f64) -> (f64, bool) {
    if x >= lo && x <= hi {
        return (x, false);
    }
    let w = hi - lo;
    let y = (x - lo).rem_euclid(2.0 * w);
    let crossings = ((x - lo) / w).floor() as i64;
    let folded = if y <= w { lo + y } else { lo + 2.0 * w - y };
    (folded, crossings.rem_euclid(2) == 1)
}

/// One random-walk step with a given acceleration sample.
pub fn step_random_walk_with_accel(state: WalkState, accel: Point, bounds: &Bounds, dt: f64) -> WalkState {
    let mut next = state;
    for a in 0..2 {
        next.v[a] = state.v[a] + accel[a] * dt;
        let (x, flipped) = reflect(state.x[a] + next.v[a] * dt, bounds.lo[a], bounds.hi[a]);
        next.x[a] = x;
        if flipped {
            next.v[a] = -next.v[a];
        }
    }
    next
}

/// One random-walk step: Gaussian acceleration per axis, then
/// reflection of positions leaving the workspace with velocity inversion.
pub fn step_random_walk<R: Rng + ?Sized>(
    state: WalkState,
    spec: &ObstacleSpec,
    bounds: &Bounds,
    dt: f64,
    rng: &mut R,
) -> WalkState {
    let sd = spec.accel_variance.sqrt();
    let ax: f64 = rng.sample(StandardNormal);
    let ay: f64 = rng.sample(StandardNormal);
    step_random_walk_with_accel(state, [sd * ax, sd * ay], bounds, dt)
}

/// One conveyor step with a given uniform draw `r`.
pub fn step_conveyor_with_draw(state: ConveyorState, spec: &ConveyorSpec, dt: f64, r: f64) -> ConveyorState {
    let p = spec.hazard.apply(state.p, spec.alpha);
    let projected = state.x + state.xd * dt;
    let flip = r < p || projected < spec.belt[0] || projected > spec.belt[1];
    let (xd, p) = if flip { (-state.xd, spec.alpha) } else { (state.xd, p) };
    ConveyorState {
        x: state.x + xd * dt,
        xd,
        p,
    }
}

pub fn step_conveyor<R: Rng + ?Sized>(state: ConveyorState, spec: &ConveyorSpec, dt: f64, rng: &mut R) -> ConveyorState {
    let r: f64 = rng.random();
    step_conveyor_with_draw(state, spec, dt, r)
}

impl EnvironmentModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt() > 0.0) {
            return Err(Error::domain("dt must be > 0"));
        }
        match self {
            EnvironmentModel::StaticGaussian { obstacles, .. } => {
                obstacles.iter().try_for_each(GaussianObstacle::validate)
            }
            EnvironmentModel::RandomWalk { obstacles, bounds, .. } => {
                bounds.validate()?;
                for o in obstacles {
                    check_radius(o.radius)?;
                    if !(o.accel_variance >= 0.0) {
                        return Err(Error::domain("acceleration variance must be >= 0"));
                    }
                }
                Ok(())
            }
            EnvironmentModel::Conveyor { conveyor: c, .. } => {
                check_radius(c.radius)?;
                if !(c.belt[0] < c.belt[1]) {
                    return Err(Error::domain("belt bounds must be increasing"));
                }
                if !(0.0..=1.0).contains(&c.alpha) || !(0.0..=1.0).contains(&c.p0.unwrap_or(c.alpha)) {
                    return Err(Error::domain("alpha and p0 must lie in [0, 1]"));
                }
                Ok(())
            }
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            EnvironmentModel::StaticGaussian { dt, .. }
            | EnvironmentModel::RandomWalk { dt, .. }
            | EnvironmentModel::Conveyor { dt, .. } => *dt,
        }
    }

    pub fn num_obstacles(&self) -> usize {
        match self {
            EnvironmentModel::StaticGaussian { obstacles, .. } => obstacles.len(),
            EnvironmentModel::RandomWalk { obstacles, .. } => obstacles.len(),
            EnvironmentModel::Conveyor { .. } => 1,
        }
    }

    pub fn radii(&self) -> Vec<f64> {
        match self {
            EnvironmentModel::StaticGaussian { obstacles, .. } => obstacles.iter().map(|o| o.radius).collect(),
            EnvironmentModel::RandomWalk { obstacles, .. } => obstacles.iter().map(|o| o.radius).collect(),
            EnvironmentModel::Conveyor { conveyor, .. } => vec![conveyor.radius],
        }
    }

    pub fn is_static(&self) -> bool {
        matches!(self, EnvironmentModel::StaticGaussian { .. })
    }

    /// Draws an initial world state. Only the static Gaussian model is
    /// random here; the dynamic models start from their configured state.
    pub fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> WorldState {
        match self {
            EnvironmentModel::StaticGaussian { obstacles, .. } => WorldState::Static(
                obstacles
                    .iter()
                    .map(|o| {
                        let (l11, l21, l22) = o.cholesky();
                        let z0: f64 = rng.sample(StandardNormal);
                        let z1: f64 = rng.sample(StandardNormal);
                        [o.mean[0] + l11 * z0, o.mean[1] + l21 * z0 + l22 * z1]
                    })
                    .collect(),
            ),
            EnvironmentModel::RandomWalk { obstacles, .. } => {
                WorldState::Walk(obstacles.iter().map(|o| WalkState { x: o.x0, v: o.v0 }).collect())
            }
            EnvironmentModel::Conveyor { conveyor: c, .. } => WorldState::Conveyor(ConveyorState {
                x: c.x0,
                xd: c.velocity,
                p: c.p0.unwrap_or(c.alpha),
            }),
        }
    }

    /// Advances a world state by one `dt`.
    pub fn advance<R: Rng + ?Sized>(&self, state: &WorldState, rng: &mut R) -> WorldState {
        match (self, state) {
            (EnvironmentModel::RandomWalk { obstacles, bounds, dt }, WorldState::Walk(s)) => WorldState::Walk(
                s.iter()
                    .zip(obstacles)
                    .map(|(st, spec)| step_random_walk(*st, spec, bounds, *dt, rng))
                    .collect(),
            ),
            (EnvironmentModel::Conveyor { conveyor, dt }, WorldState::Conveyor(s)) => {
                WorldState::Conveyor(step_conveyor(*s, conveyor, *dt, rng))
            }
            (_, s) => s.clone(),
        }
    }

    /// Obstacle centers for a world state.
    pub fn positions(&self, state: &WorldState) -> Vec<Point> {
        match (state, self) {
            (WorldState::Static(p), _) => p.clone(),
            (WorldState::Walk(s), _) => s.iter().map(|w| w.x).collect(),
            (WorldState::Conveyor(s), EnvironmentModel::Conveyor { conveyor, .. }) => vec![[s.x, conveyor.lane]],
            (WorldState::Conveyor(s), _) => vec![[s.x, 0.0]],
        }
    }

    /// The same model, started from an exactly observed state.
    pub fn conditioned(&self, state: &WorldState) -> EnvironmentModel {
        let mut out = self.clone();
        match (&mut out, state) {
            (EnvironmentModel::RandomWalk { obstacles, .. }, WorldState::Walk(s)) => {
                for (o, st) in obstacles.iter_mut().zip(s) {
                    o.x0 = st.x;
                    o.v0 = st.v;
                }
            }
            (EnvironmentModel::Conveyor { conveyor, .. }, WorldState::Conveyor(s)) => {
                conveyor.x0 = s.x;
                conveyor.velocity = s.xd;
                conveyor.p0 = Some(s.p);
            }
            (EnvironmentModel::StaticGaussian { obstacles, .. }, WorldState::Static(p)) => {
                for (o, &x) in obstacles.iter_mut().zip(p) {
                    o.mean = x;
                    o.covariance = [[0.0; 2]; 2];
                }
            }
            _ => {}
        }
        out
    }
}

/// `n` particles, each a rollout of `m` obstacles over `h` steps of `dt`.
/// Step 0 is the current (initial) state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    n: usize,
    m: usize,
    h: usize,
    dt: f64,
    radii: Vec<f64>,
    is_static: bool,
    /// `positions[(i * m + o) * h + j]`.
    positions: Vec<Point>,
    /// Per `(i, o, chunk)`: `[xmin, ymin, xmax, ymax]` over `CHUNK` steps.
    #[serde(skip)]
    bbox: Vec<[f64; 4]>,
}

/// Steps per pruning box.
pub(crate) const CHUNK: usize = 8;

pub(crate) fn bbox_of(points: &[Point]) -> [f64; 4] {
    points.iter().fold(
        [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
        |b, p| [b[0].min(p[0]), b[1].min(p[1]), b[2].max(p[0]), b[3].max(p[1])],
    )
}

impl ParticleSet {
    /// Builds a set from explicit rollouts `rollouts[i][o][j]`.
    pub fn from_rollouts(radii: Vec<f64>, dt: f64, rollouts: &[Vec<Vec<Point>>]) -> Result<Self> {
        let n = rollouts.len();
        if n == 0 {
            return Err(Error::Empty("particle set"));
        }
        let m = radii.len();
        let h = rollouts[0].first().map_or(0, Vec::len);
        if h == 0 {
            return Err(Error::Empty("rollout"));
        }
        let mut positions = Vec::with_capacity(n * m * h);
        for r in rollouts {
            if r.len() != m {
                return Err(Error::DimensionMismatch { expected: m, got: r.len() });
            }
            for o in r {
                if o.len() != h {
                    return Err(Error::DimensionMismatch { expected: h, got: o.len() });
                }
                positions.extend_from_slice(o);
            }
        }
        let mut set = Self {
            n,
            m,
            h,
            dt,
            radii,
            is_static: false,
            positions,
            bbox: Vec::new(),
        };
        set.finish()?;
        Ok(set)
    }

    fn finish(&mut self) -> Result<()> {
        if self.positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::domain("particle positions must be finite"));
        }
        self.bbox = self
            .positions
            .chunks(self.h)
            .flat_map(|r| r.chunks(CHUNK).map(bbox_of))
            .collect();
        Ok(())
    }

    /// Marks the set as static: obstacles hold their step-0 position for
    /// as long as the robot moves. Fails unless every rollout is constant.
    pub fn into_static(mut self) -> Result<Self> {
        let constant = self.positions.chunks(self.h).all(|r| r.iter().all(|p| *p == r[0]));
        if !constant {
            return Err(Error::domain("static particle sets need constant rollouts"));
        }
        self.is_static = true;
        Ok(self)
    }

    /// Restores derived data after deserialization.
    pub fn rebuild(mut self) -> Result<Self> {
        self.finish()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn num_obstacles(&self) -> usize {
        self.m
    }

    pub fn steps(&self) -> usize {
        self.h
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    /// True when every rollout is constant in time.
    pub fn is_static(&self) -> bool {
        self.is_static
    }

    pub fn rollout(&self, i: usize, o: usize) -> &[Point] {
        let start = (i * self.m + o) * self.h;
        &self.positions[start..start + self.h]
    }

    pub fn position(&self, i: usize, o: usize, j: usize) -> Point {
        self.positions[(i * self.m + o) * self.h + j]
    }

    /// Bounding box of steps `[c * CHUNK, (c + 1) * CHUNK)` of one rollout.
    pub(crate) fn chunk_bbox(&self, i: usize, o: usize, c: usize) -> [f64; 4] {
        self.bbox[(i * self.m + o) * self.h.div_ceil(CHUNK) + c]
    }

    /// Collapses all particles to their per-step mean rollout.
    pub fn mean_rollout(&self) -> ParticleSet {
        let inv = 1.0 / self.n as f64;
        let mut positions = vec![[0.0; 2]; self.m * self.h];
        for i in 0..self.n {
            for (k, p) in positions.iter_mut().enumerate() {
                let q = self.positions[i * self.m * self.h + k];
                p[0] += q[0] * inv;
                p[1] += q[1] * inv;
            }
        }
        let mut set = Self {
            n: 1,
            m: self.m,
            h: self.h,
            dt: self.dt,
            radii: self.radii.clone(),
            is_static: self.is_static,
            positions,
            bbox: Vec::new(),
        };
        set.finish().expect("mean of finite positions is finite");
        set
    }

    /// Content hash, used to assert that a set is left untouched.
    pub fn digest(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        (self.n, self.m, self.h).hash(&mut h);
        self.dt.to_bits().hash(&mut h);
        for p in &self.positions {
            p[0].to_bits().hash(&mut h);
            p[1].to_bits().hash(&mut h);
        }
        for r in &self.radii {
            r.to_bits().hash(&mut h);
        }
        h.finish()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }
}

/// Rolls out one particle from its own stream.
fn rollout<R: Rng>(model: &EnvironmentModel, h: usize, rng: &mut R, out: &mut [Point]) {
    let m = model.num_obstacles();
    let mut state = model.initial_state(rng);
    for j in 0..h {
        if j > 0 {
            state = model.advance(&state, rng);
        }
        for (o, p) in model.positions(&state).into_iter().enumerate() {
            out[o * h + j] = p;
        }
    }
    debug_assert_eq!(out.len(), m * h);
}

/// Samples `n` independent rollouts of `h` steps. Particle `i` draws only from
/// the stream `(seed, PARTICLES, i)`, so the result does not depend on the
/// thread count or evaluation order.
pub fn sample_particles(model: &EnvironmentModel, n: usize, h: usize, seed: u64) -> Result<ParticleSet> {
    model.validate()?;
    if n == 0 || h == 0 {
        return Err(Error::domain("particle count and horizon must be >= 1"));
    }
    let m = model.num_obstacles();
    let mut positions = vec![[0.0; 2]; n * m * h];
    if m > 0 {
        positions.par_chunks_mut(m * h).enumerate().for_each(|(i, chunk)| {
            let mut rng: StreamRng = rng::stream(seed, &[label::PARTICLES, i as u64]);
            rollout(model, h, &mut rng, chunk);
        });
    }
    let mut set = ParticleSet {
        n,
        m,
        h,
        dt: model.dt(),
        radii: model.radii(),
        is_static: model.is_static(),
        positions,
        bbox: Vec::new(),
    };
    set.finish()?;
    Ok(set)
}

/// A named environment: obstacle model plus robot radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub name: String,
    pub robot_radius: f64,
    pub model: EnvironmentModel,
}

/// File format mirroring the tabulated environment specifications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentTable {
    pub env: String,
    pub n_obs: usize,
    pub robot_radius: f64,
    pub x0: Vec<Point>,
    pub v0: Vec<Point>,
    pub radii: Vec<f64>,
    pub accel_variance: Vec<f64>,
    #[serde(default)]
    pub bounds: Bounds,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

impl EnvironmentTable {
    pub fn into_environment(self) -> Result<Environment> {
        let n = self.n_obs;
        for len in [self.x0.len(), self.v0.len(), self.radii.len(), self.accel_variance.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, got: len });
            }
        }
        check_radius(self.robot_radius)?;
        let obstacles = (0..n)
            .map(|o| ObstacleSpec {
                x0: self.x0[o],
                v0: self.v0[o],
                radius: self.radii[o],
                accel_variance: self.accel_variance[o],
            })
            .collect();
        let model = EnvironmentModel::RandomWalk {
            obstacles,
            bounds: self.bounds,
            dt: self.dt,
        };
        model.validate()?;
        Ok(Environment {
            name: self.env,
            robot_radius: self.robot_radius,
            model,
        })
    }
}

/// Built-in random-walk environments `env0`, `env1`, `env2`.
pub fn preset(name: &str) -> Result<Environment> {
    let table = match name {
        "env0" => EnvironmentTable {
            env: "env0".into(),
            n_obs: 5,
            robot_radius: 0.25,
            x0: vec![[2.0, 4.0], [3.5, 8.0], [7.5, 2.5], [9.0, 1.5], [4.5, 8.0]],
            v0: vec![[0.7, 0.0], [0.25, -0.5], [-0.5, 0.5], [-0.1, 0.1], [0.0, -1.0]],
            radii: vec![0.5, 0.4, 0.3, 0.35, 0.55],
            accel_variance: vec![0.5, 0.75, 0.65, 0.8, 0.6],
            bounds: Bounds::default(),
            dt: DEFAULT_DT,
        },
        "env1" => EnvironmentTable {
            env: "env1".into(),
            n_obs: 4,
            robot_radius: 0.5,
            x0: vec![[7.9, 5.7], [1.3, 3.5], [4.9, 9.4], [5.2, 3.0]],
            v0: vec![[0.6, 0.1], [0.0, 0.2], [-0.4, 0.1], [-0.2, 0.0]],
            // The first radius is tabulated with a stray minus sign.
            radii: vec![0.32, 0.51, 0.49, 0.34],
            accel_variance: vec![0.54, 0.64, 0.51, 0.8],
            bounds: Bounds::default(),
            dt: DEFAULT_DT,
        },
        "env2" => EnvironmentTable {
            env: "env2".into(),
            n_obs: 5,
            robot_radius: 0.5,
            x0: vec![[2.1, 3.1], [6.8, 5.0], [7.3, 6.7], [4.2, 4.2], [8.5, 2.8]],
            v0: vec![[0.5, -0.2], [0.5, 0.0], [0.0, -0.2], [0.4, 0.6], [0.2, -0.3]],
            radii: vec![0.54, 0.45, 0.55, 0.35, 0.34],
            accel_variance: vec![0.64, 0.66, 0.62, 0.57, 0.75],
            bounds: Bounds::default(),
            dt: DEFAULT_DT,
        },
        other => return Err(Error::config(format!("unknown environment preset {other:?}"))),
    };
    table.into_environment()
}

/// Resolves a preset name or loads an environment file (JSON or TOML). Files
/// may hold either an [`EnvironmentTable`] or a full [`Environment`].
pub fn resolve_environment(name_or_path: &str) -> Result<Environment> {
    if let Ok(env) = preset(name_or_path) {
        return Ok(env);
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        return Err(Error::config(format!("{name_or_path:?} is neither a preset nor a file")));
    }
    let text = std::fs::read_to_string(path)?;
    let is_toml = path.extension().is_some_and(|e| e == "toml");
    let parse_table = || -> Result<EnvironmentTable> {
        Ok(if is_toml { toml::from_str(&text)? } else { serde_json::from_str(&text)? })
    };
    let parse_env = || -> Result<Environment> {
        Ok(if is_toml { toml::from_str(&text)? } else { serde_json::from_str(&text)? })
    };
    match parse_table() {
        Ok(t) => t.into_environment(),
        Err(table_err) => {
            let env = parse_env().map_err(|_| table_err)?;
            env.model.validate()?;
            Ok(env)
        }
    }
}
