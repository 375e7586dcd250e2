//! Per-job updating against a frozen parent, and forecasting.
//!
//! After the corpus fit, parent uncertainty is negligible next to job-level
//! uncertainty, so the parent is frozen: scalar parameters at their
//! posterior means, and the regime-mean parent law collapsed to a compact
//! normal mixture fitted to the posterior-mean density on a grid. A single
//! job (possibly brand new, possibly running under a cap) is then updated
//! by iterating only the job-level sweep, which is what makes the
//! minute-scale control loop affordable. Forecasts continue the latent
//! regime path and drift from their current values; all cages of a job are
//! assumed to move in lockstep, which errs on the conservative side for
//! aggregate power.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::{init_job, job::job_sweep, AcceptanceStats, JobPrior, McmcConfig};
use crate::mixfit::{self, NormalMixture};
use crate::model::{
    sample_job_from_parent, stationary_distribution, JobParams, JobSeries, ParentParams,
};
use crate::rng::SeedTree;

/// Parent frozen for per-job updating: scalars at posterior means, the
/// regime-mean parent replaced by a fitted normal mixture.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FixedParent {
    pub mu_sigma: f64,
    pub sigma2_sigma: f64,
    pub mu_rho: f64,
    pub sigma2_rho: f64,
    pub alpha_lambda: f64,
    pub beta_lambda: f64,
    pub delta: f64,
    pub tau2: f64,
    /// Mixture approximation of the posterior-mean regime-mean density.
    pub mu_mixture: NormalMixture,
    /// Regime truncation carried over from the corpus fit.
    pub k_regimes: usize,
    /// Which chain(s) this parent was frozen from.
    pub source: String,
    /// Relative L2 residual of the mixture fit on its grid.
    pub fit_residual: f64,
}

impl FixedParent {
    pub fn validate(&self) -> Result<()> {
        self.mu_mixture.validate()?;
        if self.k_regimes == 0 {
            return Err(Error::config("frozen parent needs at least one regime"));
        }
        for (name, v) in [
            ("sigma2_sigma", self.sigma2_sigma),
            ("sigma2_rho", self.sigma2_rho),
            ("alpha_lambda", self.alpha_lambda),
            ("beta_lambda", self.beta_lambda),
            ("delta", self.delta),
            ("tau2", self.tau2),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("frozen parent {name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn to_prior(&self) -> JobPrior {
        JobPrior {
            alpha_lambda: self.alpha_lambda,
            beta_lambda: self.beta_lambda,
            delta: self.delta,
            omega: self.mu_mixture.weights.clone(),
            nu: self.mu_mixture.means.clone(),
            varsigma2: self.mu_mixture.sds.iter().map(|s| s * s).collect(),
            mu_sigma: self.mu_sigma,
            sigma2_sigma: self.sigma2_sigma,
            mu_rho: self.mu_rho,
            sigma2_rho: self.sigma2_rho,
            tau2: self.tau2,
        }
    }

    /// Rebuild a `ParentParams` view (stick fractions inverted from the
    /// mixture weights) so generative helpers can be reused verbatim.
    pub fn to_parent_params(&self) -> ParentParams {
        let w = &self.mu_mixture.weights;
        let mut u = Vec::with_capacity(w.len().saturating_sub(1));
        let mut rem = 1.0f64;
        for &wi in w.iter().take(w.len() - 1) {
            u.push((wi / rem).clamp(1e-12, 1.0 - 1e-12));
            rem = (rem - wi).max(1e-300);
        }
        ParentParams {
            mu_sigma: self.mu_sigma,
            sigma2_sigma: self.sigma2_sigma,
            mu_rho: self.mu_rho,
            sigma2_rho: self.sigma2_rho,
            u,
            nu: self.mu_mixture.means.clone(),
            varsigma2: self.mu_mixture.sds.iter().map(|s| s * s).collect(),
            alpha_lambda: self.alpha_lambda,
            beta_lambda: self.beta_lambda,
            gamma: 1.0,
            delta: self.delta,
            tau2: self.tau2,
        }
    }
}

/// Knobs for freezing a parent.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixParentConfig {
    /// Components in the regime-mean mixture approximation.
    pub n_components: usize,
    /// Grid resolution for the density fit.
    pub grid_points: usize,
    /// Highest acceptable relative L2 residual of the fit.
    pub max_residual: f64,
    /// Regime truncation to carry into per-job updates.
    pub k_regimes: usize,
}

impl Default for FixParentConfig {
    fn default() -> Self {
        // Posterior-averaged densities are combs of narrow bumps: even a good
        // smooth refit keeps ~0.2-0.4 relative L2, so the ceiling only trips
        // on fits that miss whole modes.
        FixParentConfig { n_components: 10, grid_points: 512, max_residual: 0.5, k_regimes: 10 }
    }
}

/// Freeze a parent from posterior samples: scalars at their means, the
/// regime-mean density averaged over samples on a grid and approximated by
/// a normal mixture. Errors if the fit residual exceeds the configured
/// tolerance.
pub fn fix_parent(
    samples: &[&ParentParams],
    source: &str,
    cfg: &FixParentConfig,
    seed: &SeedTree,
) -> Result<FixedParent> {
    if samples.is_empty() {
        return Err(Error::config("cannot freeze a parent from zero samples"));
    }
    if cfg.grid_points < 16 || cfg.n_components == 0 || cfg.k_regimes == 0 {
        return Err(Error::config("degenerate parent-freezing configuration"));
    }
    let n = samples.len() as f64;
    let mean_of = |f: &dyn Fn(&ParentParams) -> f64| samples.iter().map(|p| f(p)).sum::<f64>() / n;

    // grid support: union of the non-negligible component ranges
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in samples {
        let omega = p.omega();
        let floor = 1e-3 / p.n_components() as f64;
        for ((&w, &nu), &vs) in omega.iter().zip(&p.nu).zip(&p.varsigma2) {
            if w > floor {
                let sd = vs.sqrt();
                lo = lo.min(nu - 3.0 * sd);
                hi = hi.max(nu + 3.0 * sd);
            }
        }
    }
    if !(lo < hi) {
        return Err(Error::data("regime-mean parent density has empty support"));
    }
    let grid: Vec<f64> = (0..cfg.grid_points)
        .map(|i| lo + (hi - lo) * i as f64 / (cfg.grid_points - 1) as f64)
        .collect();
    let mut density = vec![0.0f64; grid.len()];
    for p in samples {
        let omega = p.omega();
        for (d, &x) in density.iter_mut().zip(&grid) {
            let mut acc = 0.0;
            for ((&w, &nu), &vs) in omega.iter().zip(&p.nu).zip(&p.varsigma2) {
                acc += w * crate::dist::normal_lnpdf(x, nu, vs).exp();
            }
            *d += acc / n;
        }
    }

    let (mu_mixture, fit_residual) =
        mixfit::fit_density_mixture(&grid, &density, cfg.n_components, &seed.child("fix-parent"))?;
    if fit_residual > cfg.max_residual {
        return Err(Error::numerical(format!(
            "regime-mean mixture fit residual {fit_residual:.4} exceeds tolerance {:.4}",
            cfg.max_residual
        )));
    }

    let fixed = FixedParent {
        mu_sigma: mean_of(&|p| p.mu_sigma),
        sigma2_sigma: mean_of(&|p| p.sigma2_sigma),
        mu_rho: mean_of(&|p| p.mu_rho),
        sigma2_rho: mean_of(&|p| p.sigma2_rho),
        alpha_lambda: mean_of(&|p| p.alpha_lambda),
        beta_lambda: mean_of(&|p| p.beta_lambda),
        delta: mean_of(&|p| p.delta),
        tau2: mean_of(&|p| p.tau2),
        mu_mixture,
        k_regimes: cfg.k_regimes,
        source: source.to_string(),
        fit_residual,
    };
    fixed.validate()?;
    Ok(fixed)
}

/// Posterior draws for one job updated against a frozen parent.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JobChain {
    pub job_id: String,
    pub draws: Vec<JobParams>,
    pub acceptance: AcceptanceStats,
}

/// Update a single job against a frozen parent by iterating the job-level
/// sweep. An empty history short-circuits to independent draws from the
/// parent law (the prior predictive), with no latent paths attached.
/// Only the iteration/burn-in/thinning and step-scale fields of the config
/// are used; chain count does not apply here.
pub fn update_job(series: &JobSeries, parent: &FixedParent, cfg: &McmcConfig) -> Result<JobChain> {
    parent.validate()?;
    cfg.validate()?;
    let seed = SeedTree::from_master(cfg.seed).child("update-job").child(&series.job_id);
    let keep = |iter: usize| iter >= cfg.burn_in && (iter - cfg.burn_in) % cfg.thin == 0;

    if series.is_empty() {
        let pp = parent.to_parent_params();
        let mut draws = Vec::new();
        for iter in 0..cfg.n_iterations {
            if keep(iter) {
                let mut rng = seed.child_idx("prior", iter as u64).rng();
                draws.push(sample_job_from_parent(&pp, parent.k_regimes, &mut rng)?);
            }
        }
        return Ok(JobChain {
            job_id: series.job_id.clone(),
            draws,
            acceptance: AcceptanceStats::default(),
        });
    }

    series.validate()?;
    let prior = parent.to_prior();
    let pp = parent.to_parent_params();
    let mut init_rng = seed.child("init").rng();
    let mut state = init_job(series, &pp, parent.k_regimes, &mut init_rng);
    let mut acc = AcceptanceStats::default();
    let mut draws = Vec::new();
    for iter in 0..cfg.n_iterations {
        let mut rng = seed.child_idx("iter", iter as u64).rng();
        job_sweep(&mut state, series, &prior, !cfg.flatten_likelihood, cfg.rho_rw_scale, &mut acc, &mut rng)?;
        if keep(iter) {
            draws.push(state.params.clone());
        }
    }
    Ok(JobChain { job_id: series.job_id.clone(), draws, acceptance: acc })
}

/// A bundle of simulated futures for one job. Realizations hold per-cage
/// watts; under the lockstep assumption every cage of the job draws the
/// same trace, so total job power is `n_cages` times the stored values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictiveEnsemble {
    pub job_id: String,
    pub horizon: usize,
    pub n_cages: usize,
    /// Per-cage watts, one inner vector per realization.
    pub realizations: Vec<Vec<f64>>,
    /// Replicate cages share one latent path per realization.
    pub lockstep: bool,
}

impl PredictiveEnsemble {
    pub fn n_realizations(&self) -> usize {
        self.realizations.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.realizations.is_empty() || self.horizon == 0 || self.n_cages == 0 {
            return Err(Error::config("ensemble needs >= 1 realization, horizon, cage"));
        }
        for r in &self.realizations {
            if r.len() != self.horizon {
                return Err(Error::config("realization length disagrees with horizon"));
            }
            if r.iter().any(|&w| !w.is_finite() || w < 0.0) {
                return Err(Error::data("realizations must be finite and nonnegative"));
            }
        }
        Ok(())
    }

    /// Pointwise mean per-cage trace.
    pub fn mean_trace(&self) -> Vec<f64> {
        let r_n = self.realizations.len() as f64;
        (0..self.horizon)
            .map(|t| self.realizations.iter().map(|r| r[t]).sum::<f64>() / r_n)
            .collect()
    }
}

/// Simulate `horizon` minutes of per-cage power under fixed job parameters,
/// continuing from `start` = (regime, drift) when the job has a running
/// history, or from the stationary law for a fresh job. Watts floored at 0.
pub(crate) fn continue_trace<R: Rng>(
    params: &JobParams,
    tau2: f64,
    start: Option<(usize, f64)>,
    horizon: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let pi = params.pi();
    let phi_ar = (-params.rho).exp();
    let innov_sd = (params.sigma2 * (1.0 - phi_ar * phi_ar)).max(0.0).sqrt();
    let noise_sd = tau2.sqrt();
    let (mut state, mut z, fresh) = match start {
        Some((s, z0)) => {
            if s >= params.n_regimes() {
                return Err(Error::config("start regime out of range"));
            }
            (s, z0, false)
        }
        None => {
            let init =
                stationary_distribution(&params.lambda, &pi).unwrap_or_else(|| pi.clone());
            let s = crate::dist::sample_categorical(&init, rng)?;
            let z0 = params.sigma2.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
            (s, z0, true)
        }
    };
    let mut out = Vec::with_capacity(horizon);
    for t in 0..horizon {
        if !(t == 0 && fresh) {
            if rng.random::<f64>() < params.lambda[state] {
                state = crate::dist::sample_categorical(&pi, rng)?;
            }
            z = phi_ar * z + innov_sd * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        let eps = noise_sd * rng.sample::<f64, _>(rand_distr::StandardNormal);
        out.push((params.mu[state] + z + eps).max(0.0));
    }
    Ok(out)
}

/// Generate a predictive ensemble from a job chain: each realization picks
/// a posterior draw, continues its regime path from the last sampled state
/// and its drift from the last sampled value (fresh jobs start from the
/// stationary law), and adds measurement noise. Deterministic given the
/// seed.
pub fn predict(
    chain: &JobChain,
    parent: &FixedParent,
    horizon: usize,
    n_realizations: usize,
    n_cages: usize,
    seed: &SeedTree,
) -> Result<PredictiveEnsemble> {
    if chain.draws.is_empty() {
        return Err(Error::config("predict needs a nonempty job chain"));
    }
    if horizon == 0 || n_realizations == 0 || n_cages == 0 {
        return Err(Error::config("predict needs horizon, realizations, cages >= 1"));
    }
    let mut realizations = Vec::with_capacity(n_realizations);
    for r in 0..n_realizations {
        let mut rng = seed.child_idx("realization", r as u64).rng();
        let draw = &chain.draws[rng.random_range(0..chain.draws.len())];
        let start = draw
            .xi
            .first()
            .and_then(|path| path.last().copied())
            .map(|s| (s, draw.z.first().and_then(|z| z.last().copied()).unwrap_or(0.0)));
        realizations.push(continue_trace(draw, parent.tau2, start, horizon, &mut rng)?);
    }
    let ens = PredictiveEnsemble {
        job_id: chain.job_id.clone(),
        horizon,
        n_cages,
        realizations,
        lockstep: true,
    };
    ens.validate()?;
    Ok(ens)
}
