use ccplan::trajectory::{BoundaryConditions, ViaPoints};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dense equality-constrained QP over per-segment cubics `a + b s + c s^2 + d s^3`
/// (global phase `s`), with only C1 continuity imposed. Returns the
/// coefficients per (segment, dof) and the optimal effort.
pub struct QpOracle {
    knots: Vec<f64>,
    coef: Vec<Vec<[f64; 4]>>,
    pub effort: f64,
}

impl QpOracle {
    pub fn solve(via: &ViaPoints, bc: &BoundaryConditions, t: f64) -> Self {
        let mut knots = vec![0.0];
        knots.extend_from_slice(via.timings());
        knots.push(1.0);
        let segs = knots.len() - 1;
        let nx = 4 * segs;
        let mut coef = vec![vec![[0.0; 4]; bc.dim()]; segs];
        let mut effort = 0.0;
        for d in 0..bc.dim() {
            let mut h = DMatrix::<f64>::zeros(nx, nx);
            for k in 0..segs {
                let (s0, s1) = (knots[k], knots[k + 1]);
                let l1 = s1 - s0;
                let l2 = (s1 * s1 - s0 * s0) / 2.0;
                let l3 = (s1.powi(3) - s0.powi(3)) / 3.0;
                let (c, dd) = (4 * k + 2, 4 * k + 3);
                h[(c, c)] += 2.0 * 4.0 * l1;
                h[(c, dd)] += 2.0 * 12.0 * l2;
                h[(dd, c)] += 2.0 * 12.0 * l2;
                h[(dd, dd)] += 2.0 * 36.0 * l3;
            }
            let val = |s: f64| [1.0, s, s * s, s * s * s];
            let der = |s: f64| [0.0, 1.0, 2.0 * s, 3.0 * s * s];
            let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
            let mut row = |seg: usize, basis: [f64; 4], rhs: f64, other: Option<(usize, [f64; 4])>| {
                let mut r = vec![0.0; nx];
                for i in 0..4 {
                    r[4 * seg + i] += basis[i];
                }
                if let Some((o, b)) = other {
                    for i in 0..4 {
                        r[4 * o + i] -= b[i];
                    }
                }
                rows.push((r, rhs));
            };
            row(0, val(0.0), bc.q0[d], None);
            row(0, der(0.0), t * bc.qd0[d], None);
            row(segs - 1, val(1.0), bc.qt[d], None);
            row(segs - 1, der(1.0), t * bc.qdt[d], None);
            for n in 1..segs {
                let s = knots[n];
                let v = via.points()[n - 1][d];
                row(n - 1, val(s), v, None);
                row(n, val(s), v, None);
                row(n - 1, der(s), 0.0, Some((n, der(s))));
            }
            let m = rows.len();
            let mut kkt = DMatrix::<f64>::zeros(nx + m, nx + m);
            let mut rhs = DVector::<f64>::zeros(nx + m);
            kkt.view_mut((0, 0), (nx, nx)).copy_from(&h);
            for (i, (r, b)) in rows.iter().enumerate() {
                for j in 0..nx {
                    kkt[(nx + i, j)] = r[j];
                    kkt[(j, nx + i)] = r[j];
                }
                rhs[nx + i] = *b;
            }
            let x = kkt.lu().solve(&rhs).expect("KKT system solvable");
            for k in 0..segs {
                coef[k][d] = [x[4 * k], x[4 * k + 1], x[4 * k + 2], x[4 * k + 3]];
            }
            let xs = x.rows(0, nx).into_owned();
            effort += 0.5 * (xs.transpose() * &h * &xs)[(0, 0)];
        }
        Self { knots, coef, effort }
    }

    pub fn position(&self, s: f64) -> Vec<f64> {
        let k = (1..self.knots.len() - 1).filter(|&i| self.knots[i] <= s).count();
        self.coef[k].iter().map(|c| c[0] + c[1] * s + c[2] * s * s + c[3] * s * s * s).collect()
    }
}

pub fn random_instance(rng: &mut ChaCha8Rng, zero_velocity: bool) -> (ViaPoints, BoundaryConditions, f64) {
    let dim = rng.random_range(1..=3);
    let n_via = rng.random_range(0..=5);
    let v = |rng: &mut ChaCha8Rng| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>();
    let q0 = v(rng);
    let qt = v(rng);
    let (qd0, qdt) = if zero_velocity {
        (vec![0.0; dim], vec![0.0; dim])
    } else {
        let w = |rng: &mut ChaCha8Rng| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        (w(rng), w(rng))
    };
    let points = (0..n_via).map(|_| v(rng)).collect();
    let via = if rng.random_bool(0.5) {
        ViaPoints::uniform(points)
    } else {
        let mut ts: Vec<f64> = (0..n_via).map(|_| rng.random_range(0.05..0.95)).collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup_by(|a, b| (*a - *b).abs() < 0.02);
        if ts.len() == n_via {
            ViaPoints::with_timings(points, ts).unwrap()
        } else {
            ViaPoints::uniform(points)
        }
    };
    let bc = BoundaryConditions::new(q0, qd0, qt, qdt).unwrap();
    (via, bc, rng.random_range(0.5..5.0))
}
