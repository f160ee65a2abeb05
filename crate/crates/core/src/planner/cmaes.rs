//! (mu/mu_w, lambda)-CMA-ES with the standard default parameters.

use std::cmp::Ordering;

use log::debug;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Eigenvalues of the covariance are floored here to keep it positive definite.
pub const EIGEN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct CmaEs {
    n: usize,
    lambda: usize,
    weights: Vec<f64>,
    mueff: f64,
    cc: f64,
    cs: f64,
    c1: f64,
    cmu: f64,
    damps: f64,
    chi_n: f64,
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    /// Eigenbasis `B` and axis lengths `D` with `C = B diag(D^2) B^T`.
    basis: DMatrix<f64>,
    axes: DVector<f64>,
    pc: DVector<f64>,
    ps: DVector<f64>,
    generation: usize,
}

fn tie_key(x: &[f64]) -> u64 {
    let bits: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
    derive_seed(0, &bits)
}

/// Orders `(x, f)` pairs by cost. Ties are broken by a hash of `x`, which is
/// independent of input order and, unlike a lexicographic rule, does not
/// drift the mean along a fixed direction on plateaus.
pub fn rank_order(a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then_with(|| tie_key(&a.0).cmp(&tie_key(&b.0)))
}

impl CmaEs {
    /// Isotropic start `N(mean, sigma^2 I)` with population `lambda`.
    pub fn new(mean: Vec<f64>, sigma: f64, lambda: usize) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::Empty("search mean"));
        }
        if lambda < 4 {
            return Err(Error::domain("population size must be >= 4"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::domain("step size must be > 0"));
        }
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mueff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let nf = n as f64;
        let cc = (4.0 + mueff / nf) / (nf + 4.0 + 2.0 * mueff / nf);
        let cs = (mueff + 2.0) / (nf + mueff + 5.0);
        let c1 = 2.0 / ((nf + 1.3).powi(2) + mueff);
        let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nf + 2.0).powi(2) + mueff));
        let damps = 1.0 + 2.0 * (((mueff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + cs;
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Ok(Self {
            n,
            lambda,
            weights,
            mueff,
            cc,
            cs,
            c1,
            cmu,
            damps,
            chi_n,
            mean: DVector::from_vec(mean),
            sigma,
            cov: DMatrix::identity(n, n),
            basis: DMatrix::identity(n, n),
            axes: DVector::from_element(n, 1.0),
            pc: DVector::zeros(n),
            ps: DVector::zeros(n),
            generation: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    /// Draws `x = m + sigma * B * (D .* z)`, `z ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_fn(self.n, |i, _| self.axes[i] * rng.sample::<f64, _>(StandardNormal));
        let x = &self.mean + (&self.basis * z) * self.sigma;
        x.as_slice().to_vec()
    }

    /// One generation update from evaluated `(x, cost)` pairs; the pairs are
    /// ranked here so their order does not matter.
    pub fn update(&mut self, evaluated: &[(Vec<f64>, f64)]) -> Result<()> {
        if evaluated.len() < self.weights.len() {
            return Err(Error::domain("fewer candidates than parents"));
        }
        let mut ranked: Vec<&(Vec<f64>, f64)> = evaluated.iter().collect();
        ranked.sort_by(|a, b| rank_order(a, b));

        let old = self.mean.clone();
        let ys: Vec<DVector<f64>> = ranked
            .iter()
            .take(self.weights.len())
            .map(|(x, _)| (DVector::from_column_slice(x) - &old) / self.sigma)
            .collect();
        let yw = ys
            .iter()
            .zip(&self.weights)
            .fold(DVector::zeros(self.n), |acc, (y, w)| acc + y * *w);
        self.mean = &old + &yw * self.sigma;

        // C^{-1/2} y_w = B D^{-1} B^T y_w
        let inv_sqrt = {
            let bt_y = self.basis.transpose() * &yw;
            let scaled = DVector::from_fn(self.n, |i, _| bt_y[i] / self.axes[i]);
            &self.basis * scaled
        };
        self.ps = &self.ps * (1.0 - self.cs) + inv_sqrt * (self.cs * (2.0 - self.cs) * self.mueff).sqrt();
        let gen = (self.generation + 1) as f64;
        let ps_norm = self.ps.norm();
        let hsig = ps_norm / (1.0 - (1.0 - self.cs).powf(2.0 * gen)).sqrt() / self.chi_n
            < 1.4 + 2.0 / (self.n as f64 + 1.0);
        let hs = if hsig { 1.0 } else { 0.0 };
        self.pc = &self.pc * (1.0 - self.cc) + &yw * (hs * (self.cc * (2.0 - self.cc) * self.mueff).sqrt());

        let rank_mu = ys
            .iter()
            .zip(&self.weights)
            .fold(DMatrix::zeros(self.n, self.n), |acc, (y, w)| acc + y * y.transpose() * *w);
        let rank_one = &self.pc * self.pc.transpose() + &self.cov * ((1.0 - hs) * self.cc * (2.0 - self.cc));
        self.cov = &self.cov * (1.0 - self.c1 - self.cmu) + rank_one * self.c1 + rank_mu * self.cmu;

        self.sigma *= ((self.cs / self.damps) * (ps_norm / self.chi_n - 1.0)).exp();
        self.generation += 1;
        self.decompose();
        Ok(())
    }

    fn decompose(&mut self) {
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let mut floored = 0;
        let vals = eig.eigenvalues.map(|v| {
            if v < EIGEN_FLOOR || !v.is_finite() {
                floored += 1;
                EIGEN_FLOOR
            } else {
                v
            }
        });
        if floored > 0 {
            debug!("covariance repaired: {floored} eigenvalue(s) floored at {EIGEN_FLOOR:e}");
        }
        self.basis = eig.eigenvectors;
        self.axes = vals.map(f64::sqrt);
        self.cov = &self.basis * DMatrix::from_diagonal(&vals) * self.basis.transpose();
    }
}
