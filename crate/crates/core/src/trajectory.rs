//! Minimum-effort cubic-spline trajectories through via-points.
//!
//! A trajectory lives on the phase interval `s in [0, 1]` and is mapped to
//! time by `t = s * T`. Its shape minimizes `int |q''(s)|^2 ds` subject to
//! passing through the via-points and matching boundary positions and
//! phase-derivatives `q'(0) = T * qdot_0`, `q'(1) = T * qdot_T`.
//!
//! The minimizer is linear in the weight vector
//! `w = [q_via_1, .., q_via_N, q_0, q'_0, q_T, q'_T]`, so each scalar basis
//! function is obtained once per via-point layout by solving the KKT
//! system of the constrained quadratic program with a unit weight vector.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Duration floor for degenerate zero-displacement motions (seconds).
pub const T_MIN: f64 = 1e-3;

/// Relative tolerance applied when checking kinodynamic limits.
const LIMIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditions {
    pub q0: Vec<f64>,
    pub qd0: Vec<f64>,
    pub qt: Vec<f64>,
    pub qdt: Vec<f64>,
}

impl BoundaryConditions {
    pub fn new(q0: Vec<f64>, qd0: Vec<f64>, qt: Vec<f64>, qdt: Vec<f64>) -> Result<Self> {
        let bc = Self { q0, qd0, qt, qdt };
        bc.validate()?;
        Ok(bc)
    }

    /// Start and end at rest.
    pub fn rest_to_rest(q0: Vec<f64>, qt: Vec<f64>) -> Result<Self> {
        let zeros = vec![0.0; q0.len()];
        Self::new(q0, zeros.clone(), qt, zeros)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.q0.len();
        if d == 0 {
            return Err(Error::domain("boundary conditions need dimension >= 1"));
        }
        for v in [&self.qd0, &self.qt, &self.qdt] {
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: v.len(),
                });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.q0.len()
    }

    pub fn has_zero_velocities(&self) -> bool {
        self.qd0.iter().chain(&self.qdt).all(|&v| v == 0.0)
    }
}

/// Ordered via-points with their phase timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViaPoints {
    points: Vec<Vec<f64>>,
    timings: Vec<f64>,
}

/// Uniform interior timings `s_n = n / (count + 1)`.
pub fn uniform_timings(count: usize) -> Vec<f64> {
    (1..=count).map(|n| n as f64 / (count + 1) as f64).collect()
}

impl ViaPoints {
    /// Via-points at uniformly spaced phases.
    pub fn uniform(points: Vec<Vec<f64>>) -> Self {
        let timings = uniform_timings(points.len());
        Self { points, timings }
    }

    pub fn with_timings(points: Vec<Vec<f64>>, timings: Vec<f64>) -> Result<Self> {
        if points.len() != timings.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: timings.len(),
            });
        }
        Ok(Self { points, timings })
    }

    pub fn empty() -> Self {
        Self {
            points: Vec::new(),
            timings: Vec::new(),
        }
    }

    /// Reshapes a flat `[p_1, .., p_N]` vector of `dim`-vectors.
    pub fn from_flat(flat: &[f64], dim: usize) -> Self {
        Self::uniform(flat.chunks(dim).map(<[f64]>::to_vec).collect())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn timings(&self) -> &[f64] {
        &self.timings
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn validate(&self, dim: usize) -> Result<()> {
        for p in &self.points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
        }
        Ok(())
    }
}

/// Per-DoF velocity and acceleration bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinodynamicLimits {
    pub qd_min: Vec<f64>,
    pub qd_max: Vec<f64>,
    pub qdd_min: Vec<f64>,
    pub qdd_max: Vec<f64>,
}

impl KinodynamicLimits {
    pub fn new(
        qd_min: Vec<f64>,
        qd_max: Vec<f64>,
        qdd_min: Vec<f64>,
        qdd_max: Vec<f64>,
    ) -> Result<Self> {
        let l = Self {
            qd_min,
            qd_max,
            qdd_min,
            qdd_max,
        };
        l.validate()?;
        Ok(l)
    }

    /// Bounds `|qdot| <= vel`, `|qddot| <= acc` on every axis.
    pub fn symmetric(dim: usize, vel: f64, acc: f64) -> Result<Self> {
        Self::new(
            vec![-vel; dim],
            vec![vel; dim],
            vec![-acc; dim],
            vec![acc; dim],
        )
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.qd_min.len();
        for v in [&self.qd_max, &self.qdd_min, &self.qdd_max] {
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: v.len(),
                });
            }
        }
        let ordered = |lo: &[f64], hi: &[f64]| lo.iter().zip(hi).all(|(a, b)| a < b);
        if !ordered(&self.qd_min, &self.qd_max) || !ordered(&self.qdd_min, &self.qdd_max) {
            return Err(Error::domain("kinodynamic limits require min < max per axis"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.qd_min.len()
    }

    pub fn scaled(&self, vel_factor: f64, acc_factor: f64) -> Self {
        let s = |v: &[f64], f: f64| v.iter().map(|x| x * f).collect();
        Self {
            qd_min: s(&self.qd_min, vel_factor),
            qd_max: s(&self.qd_max, vel_factor),
            qdd_min: s(&self.qdd_min, acc_factor),
            qdd_max: s(&self.qdd_max, acc_factor),
        }
    }
}

/// Cubic `a + b u + c u^2 + d u^3` in the local coordinate `u = s - s_k`.
type Cubic = [f64; 4];

fn cubic_value(p: &Cubic, u: f64) -> f64 {
    p[0] + u * (p[1] + u * (p[2] + u * p[3]))
}

fn cubic_d1(p: &Cubic, u: f64) -> f64 {
    p[1] + u * (2.0 * p[2] + 3.0 * u * p[3])
}

fn cubic_d2(p: &Cubic, u: f64) -> f64 {
    2.0 * p[2] + 6.0 * p[3] * u
}

/// `int_0^h (p''(u))^2 du`.
fn cubic_effort(p: &Cubic, h: f64) -> f64 {
    let (c, d) = (p[2], p[3]);
    4.0 * c * c * h + 12.0 * c * d * h * h + 12.0 * d * d * h * h * h
}

/// Scalar basis functions of the minimum-effort spline for one via timing
/// layout.
#[derive(Debug, Clone)]
pub struct SplineBasis {
    knots: Vec<f64>,
    n_via: usize,
    /// `coeffs[seg * n_weights + j]`: cubic of basis function `j` on `seg`.
    coeffs: Vec<Cubic>,
}

impl SplineBasis {
    /// Basis for uniformly spaced via timings.
    pub fn uniform(n_via: usize) -> Result<Self> {
        Self::new(&uniform_timings(n_via))
    }

    pub fn new(timings: &[f64]) -> Result<Self> {
        let mut knots = Vec::with_capacity(timings.len() + 2);
        knots.push(0.0);
        knots.extend_from_slice(timings);
        knots.push(1.0);
        if knots.windows(2).any(|w| !(w[1] - w[0] > 1e-12)) {
            return Err(Error::Singular(format!(
                "via timings must be strictly increasing inside (0, 1): {timings:?}"
            )));
        }
        let n_via = timings.len();
        let segs = n_via + 1;
        let n_w = n_via + 4;
        let nx = 4 * segs;
        let n_con = 3 * segs + 1;

        // Constraint matrix A x = B w.
        let mut a = DMatrix::<f64>::zeros(n_con, nx);
        let mut b = DMatrix::<f64>::zeros(n_con, n_w);
        let value_weight = |k: usize| match k {
            0 => n_via,
            k if k == segs => n_via + 2,
            k => k - 1,
        };
        let mut row = 0;
        for k in 0..segs {
            let h = knots[k + 1] - knots[k];
            a[(row, 4 * k)] = 1.0;
            b[(row, value_weight(k))] = 1.0;
            row += 1;
            for i in 0..4 {
                a[(row, 4 * k + i)] = h.powi(i as i32);
            }
            b[(row, value_weight(k + 1))] = 1.0;
            row += 1;
        }
        for k in 1..segs {
            let h = knots[k] - knots[k - 1];
            a[(row, 4 * (k - 1) + 1)] = 1.0;
            a[(row, 4 * (k - 1) + 2)] = 2.0 * h;
            a[(row, 4 * (k - 1) + 3)] = 3.0 * h * h;
            a[(row, 4 * k + 1)] = -1.0;
            row += 1;
        }
        a[(row, 1)] = 1.0;
        b[(row, n_via + 1)] = 1.0;
        row += 1;
        let last = 4 * (segs - 1);
        let h = knots[segs] - knots[segs - 1];
        a[(row, last + 1)] = 1.0;
        a[(row, last + 2)] = 2.0 * h;
        a[(row, last + 3)] = 3.0 * h * h;
        b[(row, n_via + 3)] = 1.0;
        row += 1;
        debug_assert_eq!(row, n_con);

        // KKT system [Q A^T; A 0] [x; lambda] = [0; B w].
        let n = nx + n_con;
        let mut kkt = DMatrix::<f64>::zeros(n, n);
        for k in 0..segs {
            let h = knots[k + 1] - knots[k];
            let (ci, di) = (4 * k + 2, 4 * k + 3);
            kkt[(ci, ci)] = 8.0 * h;
            kkt[(ci, di)] = 12.0 * h * h;
            kkt[(di, ci)] = 12.0 * h * h;
            kkt[(di, di)] = 24.0 * h * h * h;
        }
        kkt.view_mut((0, nx), (nx, n_con)).copy_from(&a.transpose());
        kkt.view_mut((nx, 0), (n_con, nx)).copy_from(&a);
        let mut rhs = DMatrix::<f64>::zeros(n, n_w);
        rhs.view_mut((nx, 0), (n_con, n_w)).copy_from(&b);

        let sol = kkt
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("KKT system is not invertible".into()))?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("KKT solution is not finite".into()));
        }

        let mut coeffs = vec![[0.0; 4]; segs * n_w];
        for k in 0..segs {
            for j in 0..n_w {
                for i in 0..4 {
                    coeffs[k * n_w + j][i] = sol[(4 * k + i, j)];
                }
            }
        }
        Ok(Self {
            knots,
            n_via,
            coeffs,
        })
    }

    pub fn n_via(&self) -> usize {
        self.n_via
    }

    pub fn n_weights(&self) -> usize {
        self.n_via + 4
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn timings(&self) -> &[f64] {
        &self.knots[1..self.knots.len() - 1]
    }

    fn segments(&self) -> usize {
        self.n_via + 1
    }

    fn locate(&self, s: f64) -> (usize, f64) {
        let seg = self
            .knots
            .partition_point(|&k| k <= s)
            .saturating_sub(1)
            .min(self.segments() - 1);
        (seg, s - self.knots[seg])
    }

    /// Basis rows `Phi(s)`, `Phi'(s)`, `Phi''(s)` (one entry per weight).
    pub fn phi(&self, s: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (seg, u) = self.locate(s);
        let n_w = self.n_weights();
        let cubics = &self.coeffs[seg * n_w..(seg + 1) * n_w];
        (
            cubics.iter().map(|p| cubic_value(p, u)).collect(),
            cubics.iter().map(|p| cubic_d1(p, u)).collect(),
            cubics.iter().map(|p| cubic_d2(p, u)).collect(),
        )
    }

    /// Basis matrices sampled on `grid`: rows are grid points, columns weights.
    pub fn matrices(&self, grid: &[f64]) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let n_w = self.n_weights();
        let mut p0 = DMatrix::zeros(grid.len(), n_w);
        let mut p1 = DMatrix::zeros(grid.len(), n_w);
        let mut p2 = DMatrix::zeros(grid.len(), n_w);
        for (r, &s) in grid.iter().enumerate() {
            let (a, b, c) = self.phi(s);
            p0.row_mut(r).copy_from(&DVector::from_vec(a).transpose());
            p1.row_mut(r).copy_from(&DVector::from_vec(b).transpose());
            p2.row_mut(r).copy_from(&DVector::from_vec(c).transpose());
        }
        (p0, p1, p2)
    }

    /// Per-segment, per-DoF cubics for the weight matrix `w` (`n_weights x dim`,
    /// row-major).
    fn combine(&self, w: &[f64], dim: usize) -> Vec<Cubic> {
        let n_w = self.n_weights();
        let segs = self.segments();
        let mut out = vec![[0.0; 4]; segs * dim];
        for k in 0..segs {
            for j in 0..n_w {
                let basis = &self.coeffs[k * n_w + j];
                for d in 0..dim {
                    let wj = w[j * dim + d];
                    if wj == 0.0 {
                        continue;
                    }
                    let dst = &mut out[k * dim + d];
                    for i in 0..4 {
                        dst[i] += basis[i] * wj;
                    }
                }
            }
        }
        out
    }
}

/// Weight matrix rows `[via.., q0, q'0, qT, q'T]` with the boundary
/// phase-derivatives scaled by `vel_scale`.
fn weight_matrix(via: &ViaPoints, bc: &BoundaryConditions, vel_scale: f64) -> Vec<f64> {
    let dim = bc.dim();
    let mut w = Vec::with_capacity((via.len() + 4) * dim);
    for p in via.points() {
        w.extend_from_slice(p);
    }
    w.extend_from_slice(&bc.q0);
    w.extend(bc.qd0.iter().map(|v| v * vel_scale));
    w.extend_from_slice(&bc.qt);
    w.extend(bc.qdt.iter().map(|v| v * vel_scale));
    w
}

/// A synthesized trajectory. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Trajectory {
    basis: Arc<SplineBasis>,
    via: ViaPoints,
    bc: BoundaryConditions,
    duration: f64,
    dim: usize,
    /// `cubics[seg * dim + d]` in phase space.
    cubics: Vec<Cubic>,
}

/// Sampled positions, velocities and accelerations.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySamples {
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub qd: Vec<Vec<f64>>,
    pub qdd: Vec<Vec<f64>>,
}

fn check_inputs(via: &ViaPoints, bc: &BoundaryConditions, duration: f64) -> Result<()> {
    bc.validate()?;
    via.validate(bc.dim())?;
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::domain(format!("duration {duration} must be > 0")));
    }
    Ok(())
}

/// Synthesizes the minimum-effort spline through `via` with duration `duration`.
pub fn synthesize(via: &ViaPoints, bc: &BoundaryConditions, duration: f64) -> Result<Trajectory> {
    let basis = Arc::new(SplineBasis::new(via.timings())?);
    synthesize_with_basis(&basis, via, bc, duration)
}

/// Like [`synthesize`], reusing a precomputed basis whose timings match `via`.
pub fn synthesize_with_basis(
    basis: &Arc<SplineBasis>,
    via: &ViaPoints,
    bc: &BoundaryConditions,
    duration: f64,
) -> Result<Trajectory> {
    check_inputs(via, bc, duration)?;
    if via.len() != basis.n_via() {
        return Err(Error::DimensionMismatch {
            expected: basis.n_via(),
            got: via.len(),
        });
    }
    let dim = bc.dim();
    let cubics = basis.combine(&weight_matrix(via, bc, duration), dim);
    Ok(Trajectory {
        basis: Arc::clone(basis),
        via: via.clone(),
        bc: bc.clone(),
        duration,
        dim,
        cubics,
    })
}

/// Constant trajectory holding `q_hold` for `duration` seconds.
pub fn waiting_trajectory(q_hold: &[f64], duration: f64) -> Result<Trajectory> {
    let bc = BoundaryConditions::rest_to_rest(q_hold.to_vec(), q_hold.to_vec())?;
    synthesize(&ViaPoints::empty(), &bc, duration)
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn via(&self) -> &ViaPoints {
        &self.via
    }

    pub fn boundary(&self) -> &BoundaryConditions {
        &self.bc
    }

    pub fn basis(&self) -> &Arc<SplineBasis> {
        &self.basis
    }

    fn cubic(&self, seg: usize, d: usize) -> &Cubic {
        &self.cubics[seg * self.dim + d]
    }

    /// Position at phase `s` (clamped to `[0, 1]`).
    pub fn position(&self, s: f64) -> Vec<f64> {
        let (seg, u) = self.basis.locate(s.clamp(0.0, 1.0));
        (0..self.dim).map(|d| cubic_value(self.cubic(seg, d), u)).collect()
    }

    /// Position and velocity at time `t`. Before 0 and after `T` the robot is
    /// at rest at the respective endpoint.
    pub fn state_at_time(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        if t >= self.duration {
            return (self.bc.qt.clone(), vec![0.0; self.dim]);
        }
        let (seg, u) = self.basis.locate((t / self.duration).max(0.0));
        let q = (0..self.dim).map(|d| cubic_value(self.cubic(seg, d), u)).collect();
        let qd = (0..self.dim)
            .map(|d| cubic_d1(self.cubic(seg, d), u) / self.duration)
            .collect();
        (q, qd)
    }

    /// Planar position at time `t`, held at the endpoint after `T`.
    pub fn planar_position_at_time(&self, t: f64) -> [f64; 2] {
        let s = (t / self.duration).clamp(0.0, 1.0);
        let (seg, u) = self.basis.locate(s);
        [
            cubic_value(self.cubic(seg, 0), u),
            cubic_value(self.cubic(seg, 1.min(self.dim - 1)), u),
        ]
    }

    /// Samples `q`, `qdot = q'/T`, `qddot = q''/T^2` on the phase grid.
    pub fn evaluate(&self, grid: &[f64]) -> Result<TrajectorySamples> {
        if let Some(bad) = grid.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::domain(format!("phase {bad} outside [0, 1]")));
        }
        let (t, t2) = (self.duration, self.duration * self.duration);
        let mut out = TrajectorySamples {
            s: grid.to_vec(),
            t: grid.iter().map(|s| s * t).collect(),
            q: Vec::with_capacity(grid.len()),
            qd: Vec::with_capacity(grid.len()),
            qdd: Vec::with_capacity(grid.len()),
        };
        for &s in grid {
            let (seg, u) = self.basis.locate(s);
            let cs = (0..self.dim).map(|d| self.cubic(seg, d));
            let (mut q, mut qd, mut qdd) = (Vec::new(), Vec::new(), Vec::new());
            for c in cs {
                q.push(cubic_value(c, u));
                qd.push(cubic_d1(c, u) / t);
                qdd.push(cubic_d2(c, u) / t2);
            }
            out.q.push(q);
            out.qd.push(qd);
            out.qdd.push(qdd);
        }
        Ok(out)
    }

    /// Phase-space effort `int_0^1 |q''(s)|^2 ds`.
    pub fn effort(&self) -> f64 {
        let knots = self.basis.knots();
        self.cubics
            .chunks(self.dim)
            .enumerate()
            .map(|(k, cs)| {
                let h = knots[k + 1] - knots[k];
                cs.iter().map(|c| cubic_effort(c, h)).sum::<f64>()
            })
            .sum()
    }

    /// Time-domain effort `int_0^T |qddot(t)|^2 dt = effort() / T^3`.
    pub fn time_effort(&self) -> f64 {
        self.effort() / self.duration.powi(3)
    }

    /// Worst normalized limit excess; `<= 0` means the limits hold.
    pub fn limit_excess(&self, limits: &KinodynamicLimits) -> f64 {
        let inv_t = 1.0 / self.duration;
        let knots = self.basis.knots();
        let mut worst = f64::NEG_INFINITY;
        for (k, cs) in self.cubics.chunks(self.dim).enumerate() {
            let h = knots[k + 1] - knots[k];
            for (d, c) in cs.iter().enumerate() {
                for_each_extreme(c, h, |q1, q2| {
                    let v = q1 * inv_t;
                    let a = q2 * inv_t * inv_t;
                    worst = worst
                        .max(excess(v, limits.qd_min[d], limits.qd_max[d]))
                        .max(excess(a, limits.qdd_min[d], limits.qdd_max[d]));
                });
            }
        }
        worst
    }

    pub fn satisfies(&self, limits: &KinodynamicLimits) -> bool {
        self.limit_excess(limits) <= LIMIT_TOL
    }

    pub fn record(&self) -> TrajectoryRecord {
        TrajectoryRecord {
            via: self.via.points().to_vec(),
            timings: self.via.timings().to_vec(),
            bc: self.bc.clone(),
            duration: self.duration,
            dim: self.dim,
        }
    }

    /// Writes `s, t, q_*, qd_*, qdd_*` columns for `samples` uniform phases.
    pub fn write_trace_csv<W: Write>(&self, samples: usize, mut out: W) -> Result<()> {
        let grid: Vec<f64> = (0..samples)
            .map(|i| i as f64 / (samples.max(2) - 1) as f64)
            .collect();
        let ev = self.evaluate(&grid)?;
        let mut header = vec!["s".to_string(), "t".to_string()];
        for prefix in ["q", "qd", "qdd"] {
            header.extend((0..self.dim).map(|d| format!("{prefix}_{d}")));
        }
        writeln!(out, "{}", header.join(","))?;
        for i in 0..grid.len() {
            let mut row = vec![ev.s[i].to_string(), ev.t[i].to_string()];
            for series in [&ev.q, &ev.qd, &ev.qdd] {
                row.extend(series[i].iter().map(f64::to_string));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Calls `f(q', q'')` at every point where a velocity or acceleration
/// extreme of the cubic on `[0, h]` can occur.
fn for_each_extreme(c: &Cubic, h: f64, mut f: impl FnMut(f64, f64)) {
    f(cubic_d1(c, 0.0), cubic_d2(c, 0.0));
    f(cubic_d1(c, h), cubic_d2(c, h));
    if c[3] != 0.0 {
        let u = -c[2] / (3.0 * c[3]);
        if u > 0.0 && u < h {
            f(cubic_d1(c, u), cubic_d2(c, u));
        }
    }
}

fn excess(x: f64, lo: f64, hi: f64) -> f64 {
    let over = (x - hi) / hi.abs().max(1e-12);
    let under = (lo - x) / lo.abs().max(1e-12);
    over.max(under)
}

/// Serializable description `{via, bc, T, D}` of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub via: Vec<Vec<f64>>,
    pub timings: Vec<f64>,
    pub bc: BoundaryConditions,
    #[serde(rename = "T")]
    pub duration: f64,
    #[serde(rename = "D")]
    pub dim: usize,
}

impl TrajectoryRecord {
    pub fn synthesize(&self) -> Result<Trajectory> {
        let via = ViaPoints::with_timings(self.via.clone(), self.timings.clone())?;
        synthesize(&via, &self.bc, self.duration)
    }
}

impl Serialize for Trajectory {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.record().serialize(s)
    }
}

/// Smallest `T` for which `x` phase-units per unit time stays within `[lo, hi]`.
fn velocity_ratio(x: f64, lo: f64, hi: f64) -> f64 {
    if x > 0.0 {
        if hi > 0.0 { x / hi } else { f64::INFINITY }
    } else if x < 0.0 {
        if lo < 0.0 { x / lo } else { f64::INFINITY }
    } else {
        0.0
    }
}

/// Spline shape split into its duration-independent part and the part
/// proportional to `T` (from the boundary velocities).
struct SplineShape<'a> {
    basis: &'a SplineBasis,
    dim: usize,
    fixed: Vec<Cubic>,
    per_t: Vec<Cubic>,
}

impl<'a> SplineShape<'a> {
    fn new(basis: &'a SplineBasis, via: &ViaPoints, bc: &BoundaryConditions) -> Self {
        let dim = bc.dim();
        let mut w = weight_matrix(via, bc, 0.0);
        let fixed = basis.combine(&w, dim);
        let n_via = via.len();
        w.iter_mut().for_each(|x| *x = 0.0);
        for d in 0..dim {
            w[(n_via + 1) * dim + d] = bc.qd0[d];
            w[(n_via + 3) * dim + d] = bc.qdt[d];
        }
        let per_t = basis.combine(&w, dim);
        Self {
            basis,
            dim,
            fixed,
            per_t,
        }
    }

    /// Closed-form minimal duration of the duration-independent part.
    fn scaling_duration(&self, limits: &KinodynamicLimits) -> f64 {
        let knots = self.basis.knots();
        let (mut tv, mut ta2) = (0.0f64, 0.0f64);
        for (k, cs) in self.fixed.chunks(self.dim).enumerate() {
            let h = knots[k + 1] - knots[k];
            for (d, c) in cs.iter().enumerate() {
                for_each_extreme(c, h, |q1, q2| {
                    tv = tv.max(velocity_ratio(q1, limits.qd_min[d], limits.qd_max[d]));
                    ta2 = ta2.max(velocity_ratio(q2, limits.qdd_min[d], limits.qdd_max[d]));
                });
            }
        }
        tv.max(ta2.sqrt())
    }

    fn feasible_at(&self, t: f64, limits: &KinodynamicLimits) -> bool {
        let knots = self.basis.knots();
        let (inv_t, inv_t2) = (1.0 / t, 1.0 / (t * t));
        for k in 0..self.basis.segments() {
            let h = knots[k + 1] - knots[k];
            for d in 0..self.dim {
                let (f, p) = (&self.fixed[k * self.dim + d], &self.per_t[k * self.dim + d]);
                let c = [f[0] + t * p[0], f[1] + t * p[1], f[2] + t * p[2], f[3] + t * p[3]];
                let mut ok = true;
                for_each_extreme(&c, h, |q1, q2| {
                    ok &= excess(q1 * inv_t, limits.qd_min[d], limits.qd_max[d]) <= LIMIT_TOL
                        && excess(q2 * inv_t2, limits.qdd_min[d], limits.qdd_max[d]) <= LIMIT_TOL;
                });
                if !ok {
                    return false;
                }
            }
        }
        true
    }
}

/// Smallest duration for which the synthesized trajectory respects `limits`.
///
/// With zero boundary velocities the phase-space shape does not depend on
/// `T`, and since `qdot ~ 1/T`, `qddot ~ 1/T^2` the answer is a closed-form
/// scaling. Otherwise the boundary derivatives couple shape and duration
/// and the duration is found by a coarse geometric scan followed by
/// bisection to a relative tolerance of `1e-4`.
pub fn min_duration(
    via: &ViaPoints,
    bc: &BoundaryConditions,
    limits: &KinodynamicLimits,
) -> Result<f64> {
    let basis = SplineBasis::new(via.timings())?;
    min_duration_with_basis(&basis, via, bc, limits)
}

pub fn min_duration_with_basis(
    basis: &SplineBasis,
    via: &ViaPoints,
    bc: &BoundaryConditions,
    limits: &KinodynamicLimits,
) -> Result<f64> {
    bc.validate()?;
    via.validate(bc.dim())?;
    if limits.dim() != bc.dim() {
        return Err(Error::DimensionMismatch {
            expected: bc.dim(),
            got: limits.dim(),
        });
    }
    for d in 0..bc.dim() {
        for v in [bc.qd0[d], bc.qdt[d]] {
            if v < limits.qd_min[d] || v > limits.qd_max[d] {
                return Err(Error::Infeasible(format!(
                    "boundary velocity {v} outside [{}, {}] on axis {d}",
                    limits.qd_min[d], limits.qd_max[d]
                )));
            }
        }
    }
    let shape = SplineShape::new(basis, via, bc);
    let t_scale = shape.scaling_duration(limits);
    if !t_scale.is_finite() {
        return Err(Error::Infeasible(
            "limits exclude the required direction of motion".into(),
        ));
    }
    if bc.has_zero_velocities() {
        return Ok(t_scale.max(T_MIN));
    }

    if shape.feasible_at(T_MIN, limits) {
        return Ok(T_MIN);
    }
    let upper = 10.0 * t_scale.max(T_MIN) + 1.0;
    // Coarse scan for the first feasible duration; feasibility need not be
    // monotone in T once boundary velocities are involved.
    let mut lo = T_MIN;
    let mut hi = None;
    let mut t = T_MIN;
    while t < upper {
        t = (t * 1.05).min(upper);
        if shape.feasible_at(t, limits) {
            hi = Some(t);
            break;
        }
        lo = t;
    }
    let mut hi = hi.ok_or_else(|| {
        Error::Infeasible(format!("no feasible duration up to {upper:.3} s"))
    })?;
    while hi - lo > 1e-4 * hi {
        let mid = 0.5 * (lo + hi);
        if shape.feasible_at(mid, limits) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bc1(q0: f64, qt: f64) -> BoundaryConditions {
        BoundaryConditions::rest_to_rest(vec![q0], vec![qt]).unwrap()
    }

    #[test]
    fn zero_motion_is_zero_everywhere() {
        let tr = synthesize(&ViaPoints::empty(), &bc1(0.0, 0.0), 1.0).unwrap();
        for i in 0..=10 {
            assert_eq!(tr.position(i as f64 / 10.0), vec![0.0]);
        }
    }

    #[test]
    fn rest_to_rest_is_smoothstep_cubic() {
        let tr = synthesize(&ViaPoints::empty(), &bc1(0.0, 1.0), 1.0).unwrap();
        for i in 0..=100 {
            let s = i as f64 / 100.0;
            let expected = 3.0 * s * s - 2.0 * s * s * s;
            assert!((tr.position(s)[0] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn passes_through_via_point() {
        let via = ViaPoints::uniform(vec![vec![0.5]]);
        let tr = synthesize(&via, &bc1(0.0, 1.0), 1.0).unwrap();
        assert!((tr.position(0.5)[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn boundary_samples_match_conditions() {
        let bc = BoundaryConditions::new(vec![1.0, -1.0], vec![0.3, 0.1], vec![2.0, 4.0], vec![-0.2, 0.0])
            .unwrap();
        let via = ViaPoints::uniform(vec![vec![1.5, 0.0], vec![2.5, 3.0]]);
        let tr = synthesize(&via, &bc, 2.5).unwrap();
        let ev = tr.evaluate(&[0.0, 1.0]).unwrap();
        for d in 0..2 {
            assert!((ev.q[0][d] - bc.q0[d]).abs() < 1e-12);
            assert!((ev.qd[0][d] - bc.qd0[d]).abs() < 1e-12);
            assert!((ev.q[1][d] - bc.qt[d]).abs() < 1e-12);
            assert!((ev.qd[1][d] - bc.qdt[d]).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluate_rejects_out_of_range_phase() {
        let tr = synthesize(&ViaPoints::empty(), &bc1(0.0, 1.0), 1.0).unwrap();
        assert!(matches!(tr.evaluate(&[1.2]), Err(Error::Domain(_))));
    }

    #[test]
    fn duplicate_timings_are_singular() {
        let via = ViaPoints::with_timings(vec![vec![0.1], vec![0.2]], vec![0.5, 0.5]).unwrap();
        assert!(matches!(synthesize(&via, &bc1(0.0, 1.0), 1.0), Err(Error::Singular(_))));
    }

    #[test]
    fn min_duration_rest_to_rest() {
        let limits = KinodynamicLimits::symmetric(1, 1.5, 6.0).unwrap();
        let t = min_duration(&ViaPoints::empty(), &bc1(0.0, 1.0), &limits).unwrap();
        assert!((t - 1.0).abs() < 1e-12);
        let t2 = min_duration(&ViaPoints::empty(), &bc1(0.0, 1.0), &limits.scaled(2.0, 4.0)).unwrap();
        assert!((t2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn min_duration_degenerate_is_floored() {
        let limits = KinodynamicLimits::symmetric(1, 1.0, 1.0).unwrap();
        let t = min_duration(&ViaPoints::empty(), &bc1(2.0, 2.0), &limits).unwrap();
        assert_eq!(t, T_MIN);
    }

    #[test]
    fn min_duration_rejects_excess_boundary_velocity() {
        let limits = KinodynamicLimits::symmetric(1, 1.0, 1.0).unwrap();
        let bc = BoundaryConditions::new(vec![0.0], vec![2.0], vec![1.0], vec![0.0]).unwrap();
        assert!(matches!(
            min_duration(&ViaPoints::empty(), &bc, &limits),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn min_duration_with_initial_velocity_is_tight() {
        let limits = KinodynamicLimits::symmetric(2, 1.5, 2.0).unwrap();
        let bc = BoundaryConditions::new(vec![0.0, 0.0], vec![0.8, -0.3], vec![5.0, 2.0], vec![0.0, 0.0])
            .unwrap();
        let via = ViaPoints::uniform(vec![vec![1.0, 0.5], vec![2.5, 1.0], vec![4.0, 1.8]]);
        let t = min_duration(&via, &bc, &limits).unwrap();
        assert!(synthesize(&via, &bc, t).unwrap().satisfies(&limits));
        assert!(!synthesize(&via, &bc, 0.999 * t).unwrap().satisfies(&limits));
    }

    #[test]
    fn waiting_trajectory_is_constant() {
        let tr = waiting_trajectory(&[1.0, 2.0], 3.0).unwrap();
        let ev = tr.evaluate(&[0.0, 0.3, 0.77, 1.0]).unwrap();
        for i in 0..4 {
            assert_eq!(ev.q[i], vec![1.0, 2.0]);
            assert!(ev.qd[i].iter().chain(&ev.qdd[i]).all(|v| v.abs() < 1e-15));
        }
        assert_eq!(tr.duration(), 3.0);
    }

    #[test]
    fn state_after_end_is_held() {
        let tr = synthesize(&ViaPoints::empty(), &bc1(0.0, 1.0), 1.0).unwrap();
        let (q, qd) = tr.state_at_time(5.0);
        assert_eq!((q, qd), (vec![1.0], vec![0.0]));
        assert_eq!(tr.planar_position_at_time(7.0), [1.0, 1.0]);
    }

    #[test]
    fn record_roundtrip() {
        let via = ViaPoints::uniform(vec![vec![0.2, 0.4]]);
        let bc = BoundaryConditions::rest_to_rest(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let tr = synthesize(&via, &bc, 2.0).unwrap();
        let json = serde_json::to_string(&tr).unwrap();
        let rec: TrajectoryRecord = serde_json::from_str(&json).unwrap();
        let back = rec.synthesize().unwrap();
        assert_eq!(back.position(0.3), tr.position(0.3));
        assert!(json.contains("\"T\":2.0"));
    }
}
