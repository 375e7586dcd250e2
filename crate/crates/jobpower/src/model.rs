//! Generative model for per-job power draw.
//!
//! A job occupies one or more cages (the power-metered enclosure groups of
//! the machine) and each cage reports watts once a minute. The per-cage
//! series is regime-switching:
//!
//! ```text
//! watts(t) = mu[xi(t)] + z(t) + eps(t)
//! ```
//!
//! * `xi` is a hidden Markov chain over K regime levels `mu`. Regime dynamics
//!   are sticky: in regime k the chain considers moving at all only with
//!   probability `lambda[k]` per minute, and when it does, the destination is
//!   drawn from a shared distribution `pi` (which may re-select the current
//!   regime). Residence time in regime k is therefore geometric with
//!   parameter `lambda[k] * (1 - pi[k])`.
//! * `z` is stationary AR(1) smooth drift with marginal variance `sigma2`
//!   and lag-one correlation `exp(-rho)`.
//! * `eps` is white measurement noise with variance `tau2` shared by every
//!   job on the machine.
//!
//! Jobs are exchangeable draws from a parent population: regime means come
//! from a truncated normal mixture, stickiness rates from a shared beta,
//! `sigma2` and `rho` from log-normals, and the destination distribution
//! `pi` from a stick-breaking prior. The parent in turn has vague hyperpriors
//! so the whole hierarchy is learned from a corpus of traces.
//!
//! Multi-cage jobs are modeled with independent replicate series that share
//! one set of job parameters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist;
use crate::error::{Error, Result};
use crate::rng::SeedTree;

/// One observed minute of cage power. `censored_at` marks samples recorded at
/// a monitoring cap: the true draw was at or above the cap and `watts` holds
/// the cap value itself.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub minute: u32,
    pub watts: f64,
    pub censored_at: Option<f64>,
}

/// Observed power history of one job: one replicate series per cage.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JobSeries {
    pub job_id: String,
    pub replicates: Vec<Vec<PowerSample>>,
}

impl JobSeries {
    pub fn new(job_id: impl Into<String>, replicates: Vec<Vec<PowerSample>>) -> Self {
        JobSeries { job_id: job_id.into(), replicates }
    }

    pub fn n_cages(&self) -> usize {
        self.replicates.len()
    }

    /// Total observed minutes across replicates.
    pub fn n_samples(&self) -> usize {
        self.replicates.iter().map(|r| r.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.n_samples() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.job_id.is_empty() {
            return Err(Error::data("job series needs a job id"));
        }
        for (c, rep) in self.replicates.iter().enumerate() {
            for (t, s) in rep.iter().enumerate() {
                if s.minute as usize != t {
                    return Err(Error::data(format!(
                        "job {} cage {c}: minutes must be contiguous from 0 (found {} at position {t})",
                        self.job_id, s.minute
                    )));
                }
                if !s.watts.is_finite() || s.watts < 0.0 {
                    return Err(Error::data(format!(
                        "job {} cage {c} minute {t}: watts must be finite and nonnegative",
                        self.job_id
                    )));
                }
                if let Some(cap) = s.censored_at {
                    if !cap.is_finite() || (s.watts - cap).abs() > 1e-9 {
                        return Err(Error::data(format!(
                            "job {} cage {c} minute {t}: censored sample must record the cap value",
                            self.job_id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// All watt values pooled across replicates.
    pub fn pooled_watts(&self) -> Vec<f64> {
        self.replicates.iter().flat_map(|r| r.iter().map(|s| s.watts)).collect()
    }

    /// Censor the series at its own empirical quantile `q`, mimicking a
    /// monitoring cap: samples above the cap are recorded at the cap.
    /// Returns the censored copy and the cap. No-op on an empty series.
    pub fn censored_at_quantile(&self, q: f64) -> (JobSeries, Option<f64>) {
        if self.is_empty() {
            return (self.clone(), None);
        }
        let cap = crate::stats::quantile(&self.pooled_watts(), q);
        let mut out = self.clone();
        for rep in out.replicates.iter_mut() {
            for s in rep.iter_mut() {
                if s.watts > cap {
                    s.watts = cap;
                    s.censored_at = Some(cap);
                }
            }
        }
        (out, Some(cap))
    }

    /// First `minutes` of every replicate.
    pub fn truncated(&self, minutes: usize) -> JobSeries {
        JobSeries {
            job_id: self.job_id.clone(),
            replicates: self
                .replicates
                .iter()
                .map(|r| r.iter().take(minutes).cloned().collect())
                .collect(),
        }
    }
}

/// Per-job parameters and latent paths. Regime labels are 0-based indices
/// into `mu`. `v` holds the K-1 free stick-breaking fractions behind the
/// destination distribution `pi` (the last weight absorbs the remainder, so
/// `pi` always sums to one exactly). `xi`, `phi`, `z` hold one path per cage
/// replicate and are empty for a job that has no observed series yet.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JobParams {
    pub lambda: Vec<f64>,
    pub v: Vec<f64>,
    pub mu: Vec<f64>,
    /// Parent mixture component each regime mean was drawn from (0-based).
    pub psi: Vec<usize>,
    pub sigma2: f64,
    pub rho: f64,
    pub xi: Vec<Vec<usize>>,
    pub phi: Vec<Vec<bool>>,
    pub z: Vec<Vec<f64>>,
}

impl JobParams {
    pub fn n_regimes(&self) -> usize {
        self.mu.len()
    }

    /// Destination distribution over regimes (length K, sums to one).
    pub fn pi(&self) -> Vec<f64> {
        stick_break(&self.v).expect("stored stick fractions are valid")
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.mu.len();
        if k == 0 {
            return Err(Error::config("job needs at least one regime"));
        }
        if self.lambda.len() != k || self.psi.len() != k || self.v.len() + 1 != k {
            return Err(Error::config(format!(
                "inconsistent regime dimensions: K={k}, lambda={}, v={}, psi={}",
                self.lambda.len(),
                self.v.len(),
                self.psi.len()
            )));
        }
        if self.lambda.iter().any(|&l| !(0.0..=1.0).contains(&l)) {
            return Err(Error::config("lambda entries must lie in [0, 1]"));
        }
        if self.v.iter().any(|&f| !(f > 0.0 && f < 1.0)) {
            return Err(Error::config("stick fractions must lie in (0, 1)"));
        }
        if !(self.sigma2 > 0.0) || !(self.rho > 0.0) {
            return Err(Error::config("sigma2 and rho must be positive"));
        }
        if self.psi.iter().any(|&m| m >= usize::MAX) {
            unreachable!()
        }
        Ok(())
    }

    /// Debug-build guard: every stored value finite.
    pub fn debug_assert_finite(&self) {
        debug_assert!(
            self.lambda.iter().chain(&self.v).chain(&self.mu).all(|x| x.is_finite())
                && self.sigma2.is_finite()
                && self.rho.is_finite()
                && self.z.iter().flatten().all(|x| x.is_finite()),
            "non-finite job parameter state"
        );
    }
}

/// Population-level (parent) parameters shared by all jobs.
///
/// `u` holds the M-1 free stick fractions behind the mixture weights `omega`
/// over the M regime-mean components `(nu, varsigma2)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParentParams {
    /// Log-normal law of per-job AR(1) variance: ln sigma2_j ~ N(mu_sigma, sigma2_sigma).
    pub mu_sigma: f64,
    pub sigma2_sigma: f64,
    /// Log-normal law of per-job correlation range: ln rho_j ~ N(mu_rho, sigma2_rho).
    pub mu_rho: f64,
    pub sigma2_rho: f64,
    /// Stick fractions of the regime-mean mixture weights (length M-1).
    pub u: Vec<f64>,
    /// Mixture component means (length M).
    pub nu: Vec<f64>,
    /// Mixture component variances (length M).
    pub varsigma2: Vec<f64>,
    /// Beta law of per-job stickiness rates: lambda ~ Beta(alpha_lambda, beta_lambda).
    pub alpha_lambda: f64,
    pub beta_lambda: f64,
    /// Concentration of the parent stick-breaking prior (u_m ~ Beta(1, gamma)).
    pub gamma: f64,
    /// Concentration of the per-job destination stick prior (v_k ~ Beta(1, delta)).
    pub delta: f64,
    /// Measurement-noise variance shared by all jobs.
    pub tau2: f64,
}

impl ParentParams {
    pub fn n_components(&self) -> usize {
        self.nu.len()
    }

    /// Mixture weights over regime-mean components (length M, sums to one).
    pub fn omega(&self) -> Vec<f64> {
        stick_break(&self.u).expect("stored stick fractions are valid")
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.nu.len();
        if m == 0 || self.varsigma2.len() != m || self.u.len() + 1 != m {
            return Err(Error::config("inconsistent parent mixture dimensions"));
        }
        if self.u.iter().any(|&f| !(f > 0.0 && f < 1.0)) {
            return Err(Error::config("parent stick fractions must lie in (0, 1)"));
        }
        for &v in &self.varsigma2 {
            if !(v > 0.0) {
                return Err(Error::config("mixture variances must be positive"));
            }
        }
        for &v in &[
            self.sigma2_sigma,
            self.sigma2_rho,
            self.alpha_lambda,
            self.beta_lambda,
            self.gamma,
            self.delta,
            self.tau2,
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config("parent scale parameters must be positive and finite"));
            }
        }
        Ok(())
    }
}

/// Fixed hyperprior constants for the top of the hierarchy.
///
/// Field pairs follow the conjugate families they parameterize: normal
/// (mean m_*, variance s2_*), inverse-gamma and gamma (shape a_*, rate b_*).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct HyperPriors {
    /// Per-job regime truncation K.
    pub k_regimes: usize,
    /// Parent mean-mixture truncation M.
    pub m_components: usize,
    /// Normal prior on mu_sigma.
    pub m_sigma: f64,
    pub s2_sigma: f64,
    /// Inverse-gamma prior on sigma2_sigma.
    pub a_sigma: f64,
    pub b_sigma: f64,
    /// Normal prior on mu_rho.
    pub m_rho: f64,
    pub s2_rho: f64,
    /// Inverse-gamma prior on sigma2_rho.
    pub a_rho: f64,
    pub b_rho: f64,
    /// Gamma prior on the parent stick concentration gamma.
    pub a_gamma: f64,
    pub b_gamma: f64,
    /// Normal prior on mixture component means nu_m.
    pub m_nu: f64,
    pub s2_nu: f64,
    /// Inverse-gamma prior on mixture component variances varsigma2_m.
    pub a_varsigma: f64,
    pub b_varsigma: f64,
    /// Gamma prior on alpha_lambda.
    pub a_lambda: f64,
    pub b_lambda: f64,
    /// Gamma prior on beta_lambda.
    pub c_lambda: f64,
    pub d_lambda: f64,
    /// Gamma prior on the destination stick concentration delta.
    pub a_delta: f64,
    pub b_delta: f64,
    /// Inverse-gamma prior on the measurement-noise variance tau2.
    pub a_tau: f64,
    pub b_tau: f64,
}

impl Default for HyperPriors {
    fn default() -> Self {
        HyperPriors {
            k_regimes: 10,
            m_components: 20,
            m_sigma: 4.0,
            s2_sigma: 1.0,
            a_sigma: 10.0,
            b_sigma: 5.0,
            m_rho: -2.0,
            s2_rho: 9.0,
            a_rho: 10.0,
            b_rho: 5.0,
            a_gamma: 1.0,
            b_gamma: 1.0,
            m_nu: 2000.0,
            s2_nu: 1.0e6,
            a_varsigma: 1.0,
            b_varsigma: 1.0,
            a_lambda: 1.0,
            b_lambda: 1.0,
            c_lambda: 1.0,
            d_lambda: 1.0,
            a_delta: 1.0,
            b_delta: 1.0,
            a_tau: 10.0,
            b_tau: 10.0,
        }
    }
}

impl HyperPriors {
    pub fn validate(&self) -> Result<()> {
        if self.k_regimes < 1 {
            return Err(Error::config("k_regimes must be at least 1"));
        }
        if self.m_components < 1 {
            return Err(Error::config("m_components must be at least 1"));
        }
        let positives = [
            ("s2_sigma", self.s2_sigma),
            ("a_sigma", self.a_sigma),
            ("b_sigma", self.b_sigma),
            ("s2_rho", self.s2_rho),
            ("a_rho", self.a_rho),
            ("b_rho", self.b_rho),
            ("a_gamma", self.a_gamma),
            ("b_gamma", self.b_gamma),
            ("s2_nu", self.s2_nu),
            ("a_varsigma", self.a_varsigma),
            ("b_varsigma", self.b_varsigma),
            ("a_lambda", self.a_lambda),
            ("b_lambda", self.b_lambda),
            ("c_lambda", self.c_lambda),
            ("d_lambda", self.d_lambda),
            ("a_delta", self.a_delta),
            ("b_delta", self.b_delta),
            ("a_tau", self.a_tau),
            ("b_tau", self.b_tau),
        ];
        for (name, v) in positives {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("hyperprior {name} must be positive, got {v}")));
            }
        }
        if !self.m_sigma.is_finite() || !self.m_rho.is_finite() || !self.m_nu.is_finite() {
            return Err(Error::config("hyperprior means must be finite"));
        }
        Ok(())
    }
}

/// Expand stick-breaking fractions into an exact probability vector.
///
/// `fractions[i]` takes that share of the stick remaining after the first i
/// weights; the final weight absorbs whatever is left, so the result has
/// `fractions.len() + 1` entries and sums to one (to rounding).
pub fn stick_break(fractions: &[f64]) -> Result<Vec<f64>> {
    if fractions.is_empty() {
        // a single weight absorbing the whole stick
        return Ok(vec![1.0]);
    }
    let mut w = Vec::with_capacity(fractions.len() + 1);
    let mut remaining = 1.0;
    for &f in fractions {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::config(format!("stick fraction {f} outside (0, 1)")));
        }
        w.push(remaining * f);
        remaining *= 1.0 - f;
    }
    w.push(remaining);
    Ok(w)
}

/// Dense K x K regime transition matrix from stickiness rates and the shared
/// destination distribution: off-diagonal P[k][l] = lambda[k] * pi[l], and
/// the diagonal keeps the rest, lambda[k] * pi[k] + (1 - lambda[k]).
pub fn transition_matrix(lambda: &[f64], pi: &[f64]) -> Result<Vec<Vec<f64>>> {
    let k = lambda.len();
    if k == 0 || pi.len() != k {
        return Err(Error::config(format!(
            "transition matrix needs matching nonempty lambda ({}) and pi ({})",
            k,
            pi.len()
        )));
    }
    if lambda.iter().any(|&l| !(0.0..=1.0).contains(&l)) {
        return Err(Error::config("lambda entries must lie in [0, 1]"));
    }
    let total: f64 = pi.iter().sum();
    if pi.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::config("pi must be a probability vector"));
    }
    let mut rows = Vec::with_capacity(k);
    for i in 0..k {
        let mut row: Vec<f64> = pi.iter().map(|&p| lambda[i] * p).collect();
        row[i] += 1.0 - lambda[i];
        rows.push(row);
    }
    Ok(rows)
}

/// Long-run regime occupancy of the transition chain: proportional to
/// pi[k] / lambda[k]. Returns None when some rate is zero (the chain then
/// freezes wherever it starts and has no unique stationary law).
pub fn stationary_distribution(lambda: &[f64], pi: &[f64]) -> Option<Vec<f64>> {
    if lambda.iter().any(|&l| l <= 0.0) {
        return None;
    }
    let mut s: Vec<f64> = pi.iter().zip(lambda).map(|(&p, &l)| p / l).collect();
    let total: f64 = s.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    for x in s.iter_mut() {
        *x /= total;
    }
    Some(s)
}

/// Draw parent parameters from the hyperpriors.
pub fn sample_parent_from_hyperpriors<R: Rng>(h: &HyperPriors, rng: &mut R) -> Result<ParentParams> {
    h.validate()?;
    let normal = |mean: f64, var: f64, rng: &mut R| -> f64 {
        mean + var.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal)
    };
    let mu_sigma = normal(h.m_sigma, h.s2_sigma, rng);
    let sigma2_sigma = dist::sample_inverse_gamma(h.a_sigma, h.b_sigma, rng)?;
    let mu_rho = normal(h.m_rho, h.s2_rho, rng);
    let sigma2_rho = dist::sample_inverse_gamma(h.a_rho, h.b_rho, rng)?;
    let gamma = dist::sample_gamma(h.a_gamma, h.b_gamma, rng)?.max(1e-8);
    let m = h.m_components;
    let u: Vec<f64> =
        (0..m - 1).map(|_| dist::sample_beta(1.0, gamma, rng)).collect::<Result<_>>()?;
    let nu: Vec<f64> = (0..m).map(|_| normal(h.m_nu, h.s2_nu, rng)).collect();
    let varsigma2: Vec<f64> =
        (0..m).map(|_| dist::sample_inverse_gamma(h.a_varsigma, h.b_varsigma, rng)).collect::<Result<_>>()?;
    let alpha_lambda = dist::sample_gamma(h.a_lambda, h.b_lambda, rng)?.max(1e-8);
    let beta_lambda = dist::sample_gamma(h.c_lambda, h.d_lambda, rng)?.max(1e-8);
    let delta = dist::sample_gamma(h.a_delta, h.b_delta, rng)?.max(1e-8);
    let tau2 = dist::sample_inverse_gamma(h.a_tau, h.b_tau, rng)?;
    Ok(ParentParams {
        mu_sigma,
        sigma2_sigma,
        mu_rho,
        sigma2_rho,
        u,
        nu,
        varsigma2,
        alpha_lambda,
        beta_lambda,
        gamma,
        delta,
        tau2,
    })
}

/// Draw one job's parameters from the parent law (no latent paths yet).
pub fn sample_job_from_parent<R: Rng>(
    parent: &ParentParams,
    k_regimes: usize,
    rng: &mut R,
) -> Result<JobParams> {
    parent.validate()?;
    if k_regimes < 1 {
        return Err(Error::config("k_regimes must be at least 1"));
    }
    let omega = parent.omega();
    let lambda: Vec<f64> = (0..k_regimes)
        .map(|_| dist::sample_beta(parent.alpha_lambda, parent.beta_lambda, rng))
        .collect::<Result<_>>()?;
    let v: Vec<f64> =
        (0..k_regimes - 1).map(|_| dist::sample_beta(1.0, parent.delta, rng)).collect::<Result<_>>()?;
    let mut psi = Vec::with_capacity(k_regimes);
    let mut mu = Vec::with_capacity(k_regimes);
    for _ in 0..k_regimes {
        let m = dist::sample_categorical(&omega, rng)?;
        psi.push(m);
        mu.push(
            parent.nu[m]
                + parent.varsigma2[m].sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal),
        );
    }
    let sigma2 = (parent.mu_sigma
        + parent.sigma2_sigma.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal))
    .exp();
    let rho = (parent.mu_rho
        + parent.sigma2_rho.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal))
    .exp();
    Ok(JobParams {
        lambda,
        v,
        mu,
        psi,
        sigma2: sigma2.clamp(1e-12, 1e12),
        rho: rho.clamp(1e-10, 1e3),
        xi: Vec::new(),
        phi: Vec::new(),
        z: Vec::new(),
    })
}

/// A simulated job: the observable series plus the latent paths that
/// generated it (useful for recovery checks).
#[derive(Clone, Debug)]
pub struct SimulatedJob {
    pub series: JobSeries,
    /// Copy of the input parameters with `xi`, `phi`, `z` filled in.
    pub latent: JobParams,
}

/// Simulate `minutes` of power for a job on `n_cages` cages. Cage replicates
/// share the job's parameters but draw independent paths. The regime chain
/// starts from its stationary law (falling back to the destination
/// distribution when some rate is zero), and watts are floored at zero.
pub fn simulate_job(
    params: &JobParams,
    parent: &ParentParams,
    minutes: usize,
    n_cages: usize,
    seed: &SeedTree,
) -> Result<SimulatedJob> {
    params.validate()?;
    parent.validate()?;
    if n_cages == 0 {
        return Err(Error::config("simulate_job needs at least one cage"));
    }
    let pi = params.pi();
    let rows = transition_matrix(&params.lambda, &pi)?;
    let init = stationary_distribution(&params.lambda, &pi).unwrap_or_else(|| pi.clone());
    let phi_ar = (-params.rho).exp();
    let innov_var = params.sigma2 * (1.0 - phi_ar * phi_ar);
    let mut latent = params.clone();
    latent.xi.clear();
    latent.phi.clear();
    latent.z.clear();
    let mut replicates = Vec::with_capacity(n_cages);
    for cage in 0..n_cages {
        let mut rng = seed.child_idx("cage", cage as u64).rng();
        let mut xi = Vec::with_capacity(minutes);
        let mut phi = Vec::with_capacity(minutes);
        let mut z = Vec::with_capacity(minutes);
        let mut samples = Vec::with_capacity(minutes);
        let mut state = 0usize;
        let mut drift = 0.0f64;
        for t in 0..minutes {
            if t == 0 {
                state = dist::sample_categorical(&init, &mut rng)?;
                phi.push(true);
                drift = params.sigma2.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
            } else {
                let moved = rng.random::<f64>() < params.lambda[state];
                phi.push(moved);
                if moved {
                    state = dist::sample_categorical(&pi, &mut rng)?;
                }
                debug_assert!(rows[state].len() == pi.len());
                drift = phi_ar * drift
                    + innov_var.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
            xi.push(state);
            z.push(drift);
            let eps = parent.tau2.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
            let watts = (params.mu[state] + drift + eps).max(0.0);
            samples.push(PowerSample { minute: t as u32, watts, censored_at: None });
        }
        latent.xi.push(xi);
        latent.phi.push(phi);
        latent.z.push(z);
        replicates.push(samples);
    }
    Ok(SimulatedJob {
        series: JobSeries { job_id: "sim".to_string(), replicates },
        latent,
    })
}
