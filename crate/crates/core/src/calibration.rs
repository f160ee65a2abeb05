//! Violation-count thresholds for Monte-Carlo chance constraints.
//!
//! Given `N` particles, a violation bound `eta` and a confidence `1 - beta`,
//! these functions decide how many violating particles a candidate may show
//! and still be accepted. The binomial threshold inverts the binomial CDF;
//! the Rademacher thresholds subtract a distribution-free slack from `eta`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of a binomial distribution `B(trials, success_prob)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinomialParams {
    trials: usize,
    success_prob: f64,
}

impl BinomialParams {
    pub fn new(trials: usize, success_prob: f64) -> Result<Self> {
        if trials == 0 {
            return Err(Error::domain("binomial trials must be >= 1"));
        }
        if !(0.0..=1.0).contains(&success_prob) {
            return Err(Error::domain(format!(
                "success probability {success_prob} outside [0, 1]"
            )));
        }
        Ok(Self {
            trials,
            success_prob,
        })
    }

    pub fn trials(&self) -> usize {
        self.trials
    }

    pub fn success_prob(&self) -> f64 {
        self.success_prob
    }
}

/// Chance-constraint request: at most `eta` violation probability, with
/// confidence `1 - beta`, estimated from `n` particles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSpec {
    pub eta: f64,
    pub beta: f64,
    pub n: usize,
}

impl ConfidenceSpec {
    pub fn new(eta: f64, beta: f64, n: usize) -> Result<Self> {
        let spec = Self { eta, beta, n };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::domain(format!("eta {} outside [0, 1]", self.eta)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::domain(format!("beta {} outside (0, 1]", self.beta)));
        }
        if self.n == 0 {
            return Err(Error::domain("particle count must be >= 1"));
        }
        Ok(())
    }
}

/// Problem geometry entering the Rademacher bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RademacherGeometry {
    /// Workspace dimension `n`.
    pub dim: usize,
    /// Number of obstacles `m`.
    pub obstacles: usize,
    /// Number of checked time steps `H`.
    pub horizon: usize,
}

impl RademacherGeometry {
    pub fn new(dim: usize, obstacles: usize, horizon: usize) -> Result<Self> {
        let g = Self {
            dim,
            obstacles,
            horizon,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.obstacles == 0 || self.horizon == 0 {
            return Err(Error::domain(
                "Rademacher geometry requires dim, obstacles and horizon >= 1",
            ));
        }
        Ok(())
    }

    /// VC dimension of ball classifiers in `dim` dimensions.
    pub fn vc_dim(&self) -> usize {
        self.dim + 1
    }

    fn multiplicity(&self) -> f64 {
        (self.obstacles * self.horizon) as f64
    }
}

/// How the violation threshold `k_thresh` is derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// `floor(eta * N)`.
    Naive,
    /// Largest `k` with binomial CDF `C(k; N, eta) <= beta`.
    Binomial,
    Rademacher(RademacherGeometry),
    BooleRademacher(RademacherGeometry),
    /// Zero violations allowed.
    Hard,
}

impl ThresholdPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            ThresholdPolicy::Naive => "naive",
            ThresholdPolicy::Binomial => "binomial",
            ThresholdPolicy::Rademacher(_) => "rademacher",
            ThresholdPolicy::BooleRademacher(_) => "boole_rademacher",
            ThresholdPolicy::Hard => "hard",
        }
    }
}

/// Outcome of a threshold computation. `Infeasible` orders below every count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    Infeasible,
    Count(usize),
}

impl Threshold {
    pub fn count(&self) -> Option<usize> {
        match *self {
            Threshold::Count(k) => Some(k),
            Threshold::Infeasible => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, Threshold::Count(_))
    }
}

fn ln_choose(n: usize, k: usize) -> f64 {
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
}

fn pmf_unchecked(n: usize, p: f64, k: usize) -> f64 {
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let log_pmf = ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (-p).ln_1p();
    log_pmf.exp()
}

/// Compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
}

/// Binomial probability mass `P(K = k)`, evaluated in log space.
pub fn binom_pmf(params: BinomialParams, k: usize) -> Result<f64> {
    if k > params.trials {
        return Err(Error::domain(format!(
            "k = {k} exceeds trials N = {}",
            params.trials
        )));
    }
    Ok(pmf_unchecked(params.trials, params.success_prob, k))
}

/// Binomial CDF `C(k; N, p) = P(K <= k)`.
pub fn binom_cdf(params: BinomialParams, k: usize) -> Result<f64> {
    if k > params.trials {
        return Err(Error::domain(format!(
            "k = {k} exceeds trials N = {}",
            params.trials
        )));
    }
    let mut acc = KahanSum::default();
    for l in 0..=k {
        acc.add(pmf_unchecked(params.trials, params.success_prob, l));
    }
    Ok(acc.sum.min(1.0))
}

/// Confidence-bounded threshold `k_beta = max{k : C(k; N, eta) <= beta}`.
///
/// Scans `k` upward while accumulating the CDF and stops at the first
/// exceedance. `Infeasible` means even `k = 0` fails, which always happens
/// for `eta = 0` with `beta < 1`.
pub fn k_beta(spec: ConfidenceSpec) -> Threshold {
    let ConfidenceSpec { eta, beta, n } = spec;
    if beta >= 1.0 {
        return Threshold::Count(n);
    }
    let mut cdf = KahanSum::default();
    for k in 0..=n {
        cdf.add(pmf_unchecked(n, eta, k));
        if cdf.sum > beta {
            return if k == 0 {
                Threshold::Infeasible
            } else {
                Threshold::Count(k - 1)
            };
        }
    }
    Threshold::Count(n)
}

/// Largest `k <= n` with `k / n <= bound`, or `Infeasible` if `bound < 0`.
fn max_ratio_count(n: usize, bound: f64) -> Threshold {
    let fits = |k: usize| (k as f64) / (n as f64) <= bound;
    if !fits(0) {
        return Threshold::Infeasible;
    }
    let mut k = ((bound * n as f64).floor().max(0.0) as usize).min(n);
    while k > 0 && !fits(k) {
        k -= 1;
    }
    while k < n && fits(k + 1) {
        k += 1;
    }
    Threshold::Count(k)
}

/// Slack `mH * sqrt(2d ln(eN/d) / N) + sqrt(ln(1/beta) / (2N))` of the joint
/// Rademacher bound.
pub fn rademacher_slack(n: usize, beta: f64, geometry: RademacherGeometry) -> f64 {
    let nf = n as f64;
    let d = geometry.vc_dim() as f64;
    let complexity = (2.0 * d * (1.0 + (nf / d).ln()) / nf).sqrt();
    let confidence = ((1.0 / beta).ln() / (2.0 * nf)).sqrt();
    geometry.multiplicity() * complexity + confidence
}

/// Largest admissible violation ratio `eta - slack` under the joint
/// Rademacher bound. Negative when no count is admissible.
pub fn rademacher_margin(spec: ConfidenceSpec, geometry: RademacherGeometry) -> f64 {
    spec.eta - rademacher_slack(spec.n, spec.beta, geometry)
}

/// Slack and bound of the per-constraint (Boole) variant, which splits
/// `eta` and `beta` evenly across the `mH` obstacle/time pairs.
fn boole_terms(spec: ConfidenceSpec, geometry: RademacherGeometry) -> (f64, f64) {
    let split = geometry.multiplicity();
    let single = RademacherGeometry {
        obstacles: 1,
        horizon: 1,
        ..geometry
    };
    let slack = rademacher_slack(spec.n, spec.beta / split, single);
    (slack, spec.eta / split)
}

/// Largest admissible violation ratio of the Boole variant.
pub fn boole_rademacher_margin(spec: ConfidenceSpec, geometry: RademacherGeometry) -> f64 {
    let (slack, bound) = boole_terms(spec, geometry);
    bound - slack
}

/// `k_{beta,rad} = max{k : k/N + slack <= eta}`.
pub fn k_beta_rad(spec: ConfidenceSpec, geometry: RademacherGeometry) -> Threshold {
    max_ratio_count(spec.n, rademacher_margin(spec, geometry))
}

/// Boole variant of the Rademacher threshold. Never exceeds [`k_beta_rad`].
pub fn k_beta_rad_boole(spec: ConfidenceSpec, geometry: RademacherGeometry) -> Threshold {
    max_ratio_count(spec.n, boole_rademacher_margin(spec, geometry))
}

/// Naive Monte-Carlo threshold `floor(eta * N)`.
pub fn naive_threshold(spec: ConfidenceSpec) -> usize {
    // Relative guard so that e.g. 0.29 * 100 counts as 29.
    ((spec.eta * spec.n as f64) * (1.0 + 4.0 * f64::EPSILON)).floor() as usize
}

/// A threshold ready for use by the evaluator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedThreshold {
    /// Maximum accepted number of violating particles.
    pub k_thresh: usize,
    /// Set when the policy is `Hard` or the requested bound was infeasible;
    /// the evaluator then demands zero violations.
    pub hard: bool,
    pub raw: Threshold,
}

/// Evaluates `policy` for `spec`. Infeasible bounds fall back to hard
/// semantics (`k_thresh = 0`).
pub fn resolve(policy: ThresholdPolicy, spec: ConfidenceSpec) -> ResolvedThreshold {
    let raw = match policy {
        ThresholdPolicy::Naive => Threshold::Count(naive_threshold(spec)),
        ThresholdPolicy::Binomial => k_beta(spec),
        ThresholdPolicy::Rademacher(g) => k_beta_rad(spec, g),
        ThresholdPolicy::BooleRademacher(g) => k_beta_rad_boole(spec, g),
        ThresholdPolicy::Hard => Threshold::Count(0),
    };
    match raw {
        Threshold::Count(k) => ResolvedThreshold {
            k_thresh: k,
            hard: matches!(policy, ThresholdPolicy::Hard),
            raw,
        },
        Threshold::Infeasible => ResolvedThreshold {
            k_thresh: 0,
            hard: true,
            raw,
        },
    }
}

/// Integer threshold for `policy` (see [`resolve`]).
pub fn resolve_threshold(policy: ThresholdPolicy, spec: ConfidenceSpec) -> usize {
    resolve(policy, spec).k_thresh
}

/// One line of a threshold table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub policy: String,
    pub n: usize,
    pub eta: f64,
    pub beta: f64,
    /// `None` when the bound is infeasible.
    pub k: Option<usize>,
    /// `k / N`.
    pub ratio: Option<f64>,
    /// Continuous admissible ratio before flooring to a count; only the
    /// Rademacher variants have one.
    pub margin: Option<f64>,
    pub feasible: bool,
}

pub fn threshold_row(policy: ThresholdPolicy, spec: ConfidenceSpec) -> ThresholdRow {
    let raw = resolve(policy, spec).raw;
    let margin = match policy {
        ThresholdPolicy::Rademacher(g) => Some(rademacher_margin(spec, g)),
        ThresholdPolicy::BooleRademacher(g) => Some(boole_rademacher_margin(spec, g)),
        _ => None,
    };
    ThresholdRow {
        policy: policy.name().to_string(),
        n: spec.n,
        eta: spec.eta,
        beta: spec.beta,
        k: raw.count(),
        ratio: raw.count().map(|k| k as f64 / spec.n as f64),
        margin: margin.filter(|_| raw.is_feasible()),
        feasible: raw.is_feasible(),
    }
}
