//! Fast non-Bayesian estimation path.
//!
//! Each training job gets a point estimate: normal-mixture clustering of
//! its power samples (component count by BIC), hard regime labels, count
//! MLEs for the switching rates, and an exact Gaussian maximum-likelihood
//! fit of the AR(1)-plus-noise residual law via the Kalman filter. The
//! collection of per-job estimates *is* the parent: updating a new job
//! reduces to reweighting that discrete set by each estimate's likelihood
//! on the observed history. An order of magnitude cheaper than the
//! Bayesian path, at the price of no shrinkage toward the parent and no
//! parameter uncertainty within an estimate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist;
use crate::error::{Error, Result};
use crate::model::{stationary_distribution, transition_matrix, JobParams, JobSeries, PowerSample};
use crate::neldermead::{self, NelderMeadConfig};
use crate::predict::{continue_trace, PredictiveEnsemble};
use crate::rng::SeedTree;

/// Point estimate of one job's generating law.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PragmaticJobEstimate {
    pub job_id: String,
    /// Regime mean watts, ascending.
    pub regime_means: Vec<f64>,
    /// Occupancy-based destination distribution (sums to one).
    pub pi: Vec<f64>,
    /// Per-regime switching rates.
    pub lambda: Vec<f64>,
    pub sigma2: f64,
    pub rho: f64,
    pub tau2: f64,
    /// Hard regime labels per cage replicate and minute.
    pub labels: Vec<Vec<usize>>,
    /// Mixture selection fell back to one component.
    pub em_fallback: bool,
}

impl PragmaticJobEstimate {
    pub fn n_regimes(&self) -> usize {
        self.regime_means.len()
    }

    /// Stick fractions reproducing `pi`, for reuse of the generative types.
    fn sticks(&self) -> Vec<f64> {
        let k = self.pi.len();
        let mut v = Vec::with_capacity(k.saturating_sub(1));
        let mut rem = 1.0f64;
        for &p in self.pi.iter().take(k - 1) {
            v.push((p / rem).clamp(1e-12, 1.0 - 1e-12));
            rem = (rem - p).max(1e-300);
        }
        v
    }

    fn to_job_params(&self) -> JobParams {
        JobParams {
            lambda: self.lambda.clone(),
            v: self.sticks(),
            mu: self.regime_means.clone(),
            psi: vec![0; self.regime_means.len()],
            sigma2: self.sigma2,
            rho: self.rho,
            xi: Vec::new(),
            phi: Vec::new(),
            z: Vec::new(),
        }
    }
}

/// The training collection, used as a uniform-prior discrete parent.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmpiricalParent {
    pub estimates: Vec<PragmaticJobEstimate>,
}

impl EmpiricalParent {
    pub fn validate(&self) -> Result<()> {
        if self.estimates.is_empty() {
            return Err(Error::config("empirical parent must be nonempty"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- mixtures

struct GmmFit {
    weights: Vec<f64>,
    means: Vec<f64>,
    vars: Vec<f64>,
    loglik: f64,
}

/// Plain EM for a 1-D normal mixture. Returns None when a component
/// collapses or the likelihood degenerates.
fn em_once(data: &[f64], init_means: &[f64], init_var: f64, var_floor: f64) -> Option<GmmFit> {
    let k = init_means.len();
    let n = data.len();
    let mut w = vec![1.0 / k as f64; k];
    let mut m = init_means.to_vec();
    let mut v = vec![init_var.max(var_floor); k];
    let mut resp = vec![0.0f64; k];
    let mut loglik = f64::NEG_INFINITY;
    for _ in 0..250 {
        let mut w_acc = vec![0.0f64; k];
        let mut m_acc = vec![0.0f64; k];
        let mut v_acc = vec![0.0f64; k];
        let mut ll = 0.0f64;
        for &x in data {
            let mut total = 0.0;
            for c in 0..k {
                resp[c] = w[c] * dist::normal_lnpdf(x, m[c], v[c]).exp();
                total += resp[c];
            }
            if !(total > 0.0) {
                return None;
            }
            ll += total.ln();
            for c in 0..k {
                let r = resp[c] / total;
                w_acc[c] += r;
                m_acc[c] += r * x;
                v_acc[c] += r * x * x;
            }
        }
        for c in 0..k {
            if w_acc[c] < 1e-8 {
                return None; // dead component
            }
            m[c] = m_acc[c] / w_acc[c];
            v[c] = (v_acc[c] / w_acc[c] - m[c] * m[c]).max(var_floor);
            w[c] = w_acc[c] / n as f64;
        }
        if (ll - loglik).abs() < 1e-9 * (1.0 + ll.abs()) {
            loglik = ll;
            break;
        }
        loglik = ll;
    }
    Some(GmmFit { weights: w, means: m, vars: v, loglik })
}

/// Mixture fit with component count selected by BIC over 1..=k_max.
/// Falls back to a single component when nothing else converges.
fn fit_gmm_bic(data: &[f64], k_max: usize, seed: &SeedTree) -> (GmmFit, bool) {
    let n = data.len();
    let sample_var = crate::stats::variance(data).max(1e-12);
    let var_floor = (1e-4 * sample_var).max(1e-12);
    let mut sorted = data.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite watts"));
    let quant = |p: f64| crate::stats::quantile_of_sorted(&sorted, p);

    let single = {
        let m = crate::stats::mean(data);
        GmmFit {
            weights: vec![1.0],
            means: vec![m],
            vars: vec![sample_var.max(var_floor)],
            loglik: data.iter().map(|&x| dist::normal_lnpdf(x, m, sample_var.max(var_floor))).sum(),
        }
    };
    let bic = |fit: &GmmFit| -> f64 {
        let p = 3.0 * fit.weights.len() as f64 - 1.0;
        -2.0 * fit.loglik + p * (n as f64).ln()
    };
    let mut best = bic(&single);
    let mut best_fit = single;
    let mut any_multi = false;
    let mut rng = seed.child("gmm").rng();
    for k in 2..=k_max.max(1) {
        if k > n {
            break;
        }
        let mut best_k: Option<GmmFit> = None;
        for r in 0..3 {
            let init: Vec<f64> = (0..k)
                .map(|c| {
                    let q = quant((c as f64 + 0.5) / k as f64);
                    if r == 0 {
                        q
                    } else {
                        q + 0.25
                            * sample_var.sqrt()
                            * rng.sample::<f64, _>(rand_distr::StandardNormal)
                    }
                })
                .collect();
            if let Some(fit) = em_once(data, &init, sample_var / k as f64, var_floor) {
                if best_k.as_ref().map_or(true, |b| fit.loglik > b.loglik) {
                    best_k = Some(fit);
                }
            }
        }
        if let Some(fit) = best_k {
            any_multi = true;
            let score = bic(&fit);
            if score < best {
                best = score;
                best_fit = fit;
            }
        }
    }
    // fallback means EM never converged for any k > 1 (losing on BIC is a
    // legitimate selection, not a failure)
    let fallback = !any_multi && k_max > 1 && n > 3;
    (best_fit, fallback)
}

// --------------------------------------------------------------- residuals

/// Exact Gaussian log-likelihood of AR(1)-plus-noise via the Kalman filter:
/// latent z_t = e^{-rho} z_{t-1} + innovation, observed r_t = z_t + noise.
/// Each replicate contributes an independent run from the stationary law.
pub fn ar1_noise_loglik(residuals: &[Vec<f64>], sigma2: f64, rho: f64, tau2: f64) -> f64 {
    let phi = (-rho).exp();
    let q = sigma2 * (1.0 - phi * phi);
    let mut ll = 0.0;
    for rep in residuals {
        let mut pred_mean = 0.0f64;
        let mut pred_var = sigma2; // stationary prior on z_1
        for &r in rep {
            let s = pred_var + tau2;
            ll += dist::normal_lnpdf(r, pred_mean, s);
            let gain = pred_var / s;
            let filt_mean = pred_mean + gain * (r - pred_mean);
            let filt_var = pred_var * (1.0 - gain);
            pred_mean = phi * filt_mean;
            pred_var = phi * phi * filt_var + q;
        }
    }
    ll
}

/// Maximum-likelihood (sigma2, rho, tau2) for the residual law, by simplex
/// search on the log scale from two deterministic starts.
pub fn fit_ar1_noise_mle(residuals: &[Vec<f64>]) -> Result<(f64, f64, f64)> {
    let n: usize = residuals.iter().map(|r| r.len()).sum();
    if n < 8 {
        return Err(Error::data("AR(1) MLE needs at least 8 residual samples"));
    }
    let pooled: Vec<f64> = residuals.iter().flatten().copied().collect();
    let total_var = crate::stats::variance(&pooled).max(1e-12);
    let objective = |th: &[f64]| -> f64 {
        let (s2, rho, t2) = (th[0].exp(), th[1].exp(), th[2].exp());
        if !(s2.is_finite() && rho.is_finite() && t2.is_finite()) {
            return f64::INFINITY;
        }
        -ar1_noise_loglik(residuals, s2, rho.clamp(1e-8, 1e3), t2)
    };
    let cfg = NelderMeadConfig { max_evals: 3000, initial_step: 0.3, ..NelderMeadConfig::default() };
    let mut best: Option<neldermead::NelderMeadResult> = None;
    for rho0 in [0.1f64, 1.0] {
        let start = [(0.5 * total_var).ln(), rho0.ln(), (0.5 * total_var).ln()];
        let res = neldermead::minimize(objective, &start, &cfg);
        if best.as_ref().map_or(true, |b| res.f < b.f) {
            best = Some(res);
        }
    }
    let best = best.expect("two starts ran");
    Ok((best.x[0].exp(), best.x[1].exp().clamp(1e-8, 1e3), best.x[2].exp()))
}

// -------------------------------------------------------------------- fits

/// Estimate one job's law: mixture clustering for regime means (BIC), hard
/// labels, count MLEs for the switching mechanism, Kalman MLE for the
/// residual law. Censored samples participate at their recorded cap value.
pub fn fit_job_pragmatic(
    job: &JobSeries,
    k_max: usize,
    seed: &SeedTree,
) -> Result<PragmaticJobEstimate> {
    job.validate()?;
    if job.n_samples() < 10 {
        return Err(Error::data(format!(
            "pragmatic fit needs >= 10 samples, job {} has {}",
            job.job_id,
            job.n_samples()
        )));
    }
    let pooled = job.pooled_watts();
    let (mut gmm, em_fallback) = fit_gmm_bic(&pooled, k_max.max(1), seed);

    // relabel components by ascending mean
    let mut order: Vec<usize> = (0..gmm.means.len()).collect();
    order.sort_by(|&a, &b| gmm.means[a].partial_cmp(&gmm.means[b]).expect("finite means"));
    gmm.weights = order.iter().map(|&i| gmm.weights[i]).collect();
    gmm.means = order.iter().map(|&i| gmm.means[i]).collect();
    gmm.vars = order.iter().map(|&i| gmm.vars[i]).collect();
    let k = gmm.means.len();

    let classify = |x: f64| -> usize {
        (0..k)
            .max_by(|&a, &b| {
                let da = gmm.weights[a].ln() + dist::normal_lnpdf(x, gmm.means[a], gmm.vars[a]);
                let db = gmm.weights[b].ln() + dist::normal_lnpdf(x, gmm.means[b], gmm.vars[b]);
                da.partial_cmp(&db).expect("finite densities")
            })
            .unwrap_or(0)
    };
    let labels: Vec<Vec<usize>> = job
        .replicates
        .iter()
        .map(|rep| rep.iter().map(|s| classify(s.watts)).collect())
        .collect();

    // occupancy and departure counts
    let mut occupancy = vec![0.0f64; k];
    let mut visits = vec![0.0f64; k];
    let mut moves = vec![0.0f64; k];
    for rep in &labels {
        for (t, &l) in rep.iter().enumerate() {
            occupancy[l] += 1.0;
            if t + 1 < rep.len() {
                visits[l] += 1.0;
                if rep[t + 1] != l {
                    moves[l] += 1.0;
                }
            }
        }
    }
    let occ_total: f64 = occupancy.iter().sum();
    let pi: Vec<f64> = {
        let raw: Vec<f64> = occupancy.iter().map(|&c| (c / occ_total).max(1e-9)).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|&p| p / s).collect()
    };
    let lambda: Vec<f64> = (0..k)
        .map(|c| {
            if visits[c] == 0.0 {
                return 0.1; // never observed long enough to leave
            }
            let denom = 1.0 - pi[c];
            if denom <= 0.0 {
                return 1e-6; // single regime: the chain never leaves
            }
            let departure = moves[c] / visits[c];
            (departure / denom).clamp(1e-6, 1.0 - 1e-6)
        })
        .collect();

    let residuals: Vec<Vec<f64>> = job
        .replicates
        .iter()
        .zip(&labels)
        .map(|(rep, ls)| {
            rep.iter().zip(ls).map(|(s, &l)| s.watts - gmm.means[l]).collect()
        })
        .collect();
    let (sigma2, rho, tau2) = fit_ar1_noise_mle(&residuals)?;

    Ok(PragmaticJobEstimate {
        job_id: job.job_id.clone(),
        regime_means: gmm.means,
        pi,
        lambda,
        sigma2,
        rho,
        tau2,
        labels,
        em_fallback,
    })
}

/// Fit the whole training corpus into an empirical parent.
pub fn fit_empirical_parent(
    corpus: &[JobSeries],
    k_max: usize,
    seed: &SeedTree,
) -> Result<EmpiricalParent> {
    if corpus.is_empty() {
        return Err(Error::config("empirical parent needs a nonempty corpus"));
    }
    let estimates = corpus
        .iter()
        .enumerate()
        .map(|(i, job)| fit_job_pragmatic(job, k_max, &seed.child_idx("job", i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EmpiricalParent { estimates })
}

// ------------------------------------------------------------- re-weighting

/// Log-likelihood of an observed history under one estimate, by the forward
/// algorithm. The residual law is folded into the emissions through its
/// innovations form: given the previous observation and regime, the current
/// one is normal with lag-one shrinkage a = gamma1/gamma0. Censored samples
/// contribute the survival mass above their cap. `marginal_independence`
/// drops the lag term (cheaper, less sharp).
fn forward_loglik(
    est: &PragmaticJobEstimate,
    samples: &[PowerSample],
    marginal_independence: bool,
) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let k = est.n_regimes();
    let rows = transition_matrix(&est.lambda, &est.pi)?;
    let ln_p: Vec<Vec<f64>> =
        rows.iter().map(|r| r.iter().map(|&p| p.max(1e-300).ln()).collect()).collect();
    let init = stationary_distribution(&est.lambda, &est.pi).unwrap_or_else(|| est.pi.clone());

    let gamma0 = est.sigma2 + est.tau2;
    let gamma1 = if marginal_independence { 0.0 } else { (-est.rho).exp() * est.sigma2 };
    let a = gamma1 / gamma0;
    let v = gamma0 - gamma1 * gamma1 / gamma0;
    let ln_norm = |x: f64, mean: f64, var: f64| -> f64 { dist::normal_lnpdf(x, mean, var) };

    let mut alpha: Vec<f64> = (0..k)
        .map(|c| {
            let base = init[c].max(1e-300).ln();
            match samples[0].censored_at {
                Some(cap) => base + dist::normal_ln_survival(cap, est.regime_means[c], gamma0),
                None => base + ln_norm(samples[0].watts, est.regime_means[c], gamma0),
            }
        })
        .collect();
    let mut ll = dist::log_sum_exp(&alpha);
    for a_val in &mut alpha {
        *a_val -= ll;
    }

    let mut scratch = vec![f64::NEG_INFINITY; k];
    let mut terms = vec![0.0f64; k];
    for t in 1..samples.len() {
        let prev_x = samples[t - 1].watts; // cap value when censored
        for (c, slot) in scratch.iter_mut().enumerate() {
            for l in 0..k {
                let mean = est.regime_means[c] + a * (prev_x - est.regime_means[l]);
                let emit = match samples[t].censored_at {
                    Some(cap) => dist::normal_ln_survival(cap, mean, v),
                    None => ln_norm(samples[t].watts, mean, v),
                };
                terms[l] = alpha[l] + ln_p[l][c] + emit;
            }
            *slot = dist::log_sum_exp(&terms);
        }
        let step = dist::log_sum_exp(&scratch);
        if !step.is_finite() {
            return Err(Error::numerical("forward pass underflowed"));
        }
        ll += step;
        for (a_val, s) in alpha.iter_mut().zip(&scratch) {
            *a_val = s - step;
        }
    }
    Ok(ll)
}

/// Posterior weights over the parent's estimates given a history: uniform
/// prior times each estimate's forward likelihood, normalized in log space.
/// Empty histories return the uniform prior.
pub fn update_job_pragmatic(
    history: &JobSeries,
    parent: &EmpiricalParent,
    marginal_independence: bool,
) -> Result<Vec<f64>> {
    parent.validate()?;
    let n = parent.estimates.len();
    if history.is_empty() {
        return Ok(vec![1.0 / n as f64; n]);
    }
    history.validate()?;
    let mut logw = Vec::with_capacity(n);
    for est in &parent.estimates {
        let mut ll = 0.0;
        for rep in &history.replicates {
            ll += forward_loglik(est, rep, marginal_independence)?;
        }
        logw.push(ll);
    }
    let norm = dist::log_sum_exp(&logw);
    if !norm.is_finite() {
        return Err(Error::numerical("all estimate likelihoods underflowed"));
    }
    Ok(logw.iter().map(|l| (l - norm).exp()).collect())
}

/// Filtered regime log-probabilities at the last minute of one replicate's
/// history under one estimate. Deterministic, so callers drawing many
/// realizations can compute it once per estimate.
fn filter_terminal(
    est: &PragmaticJobEstimate,
    samples: &[PowerSample],
    marginal_independence: bool,
) -> Result<Vec<f64>> {
    let k = est.n_regimes();
    let rows = transition_matrix(&est.lambda, &est.pi)?;
    let ln_p: Vec<Vec<f64>> =
        rows.iter().map(|r| r.iter().map(|&p| p.max(1e-300).ln()).collect()).collect();
    let init = stationary_distribution(&est.lambda, &est.pi).unwrap_or_else(|| est.pi.clone());
    let gamma0 = est.sigma2 + est.tau2;
    let gamma1 = if marginal_independence { 0.0 } else { (-est.rho).exp() * est.sigma2 };
    let a = gamma1 / gamma0;
    let v = gamma0 - gamma1 * gamma1 / gamma0;

    let mut alpha: Vec<f64> = (0..k)
        .map(|c| {
            init[c].max(1e-300).ln()
                + dist::normal_lnpdf(samples[0].watts, est.regime_means[c], gamma0)
        })
        .collect();
    let mut terms = vec![0.0f64; k];
    let mut scratch = vec![0.0f64; k];
    for t in 1..samples.len() {
        let prev_x = samples[t - 1].watts;
        for (c, slot) in scratch.iter_mut().enumerate() {
            for l in 0..k {
                let mean = est.regime_means[c] + a * (prev_x - est.regime_means[l]);
                terms[l] = alpha[l] + ln_p[l][c] + dist::normal_lnpdf(samples[t].watts, mean, v);
            }
            *slot = dist::log_sum_exp(&terms);
        }
        let norm = dist::log_sum_exp(&scratch);
        for (a_val, s) in alpha.iter_mut().zip(&scratch) {
            *a_val = s - norm;
        }
    }
    Ok(alpha)
}

/// Sample a terminal regime from the filter and shrink the last observation
/// toward that regime's mean to seed the drift (first replicate; cages are
/// forecast in lockstep anyway).
fn start_from_terminal<R: Rng>(
    est: &PragmaticJobEstimate,
    terminal: &[f64],
    last_watts: f64,
    rng: &mut R,
) -> Result<(usize, f64)> {
    let state = dist::sample_categorical_log(terminal, rng)?;
    let shrink = est.sigma2 / (est.sigma2 + est.tau2);
    Ok((state, shrink * (last_watts - est.regime_means[state])))
}

/// Predictive ensemble from the weighted parent: each realization samples
/// an estimate by weight and simulates forward, continuing from the
/// filtered end of the history when one is supplied.
pub fn predict_pragmatic(
    weights: &[f64],
    parent: &EmpiricalParent,
    history: Option<&JobSeries>,
    horizon: usize,
    n_realizations: usize,
    n_cages: usize,
    marginal_independence: bool,
    seed: &SeedTree,
) -> Result<PredictiveEnsemble> {
    parent.validate()?;
    if weights.len() != parent.estimates.len() {
        return Err(Error::config("one weight per parent estimate required"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-6 || weights.iter().any(|&w| w < 0.0) {
        return Err(Error::config("weights must form a probability vector"));
    }
    if horizon == 0 || n_realizations == 0 || n_cages == 0 {
        return Err(Error::config("predict needs horizon, realizations, cages >= 1"));
    }
    let history = history.filter(|h| !h.is_empty());
    let job_id = history.map(|h| h.job_id.clone()).unwrap_or_else(|| "new".to_string());

    // Terminal filter states are deterministic per estimate; compute lazily
    // and reuse across realizations.
    let mut terminals: Vec<Option<Vec<f64>>> = vec![None; parent.estimates.len()];
    let mut realizations = Vec::with_capacity(n_realizations);
    for r in 0..n_realizations {
        let mut rng = seed.child_idx("realization", r as u64).rng();
        let idx = dist::sample_categorical(weights, &mut rng)?;
        let est = &parent.estimates[idx];
        let start = match history {
            Some(h) => {
                if terminals[idx].is_none() {
                    terminals[idx] =
                        Some(filter_terminal(est, &h.replicates[0], marginal_independence)?);
                }
                let terminal = terminals[idx].as_ref().expect("just filled");
                let last = h.replicates[0].last().expect("nonempty replicate");
                Some(start_from_terminal(est, terminal, last.watts, &mut rng)?)
            }
            None => None,
        };
        let params = est.to_job_params();
        realizations.push(continue_trace(&params, est.tau2, start, horizon, &mut rng)?);
    }
    let ens = PredictiveEnsemble {
        job_id,
        horizon,
        n_cages,
        realizations,
        lockstep: true,
    };
    ens.validate()?;
    Ok(ens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    fn series_from(watts: Vec<f64>) -> JobSeries {
        JobSeries::new(
            "t",
            vec![watts
                .into_iter()
                .enumerate()
                .map(|(t, w)| PowerSample { minute: t as u32, watts: w, censored_at: None })
                .collect()],
        )
    }

    #[test]
    fn constant_trace_selects_one_regime() {
        let seed = SeedTree::from_master(31);
        let mut rng = seed.child("noise").rng();
        let watts: Vec<f64> = (0..120)
            .map(|_| 1000.0 + 0.5 * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let mean = stats::mean(&watts);
        let est = fit_job_pragmatic(&series_from(watts), 6, &seed).unwrap();
        assert_eq!(est.n_regimes(), 1, "means {:?}", est.regime_means);
        assert!((est.regime_means[0] - mean).abs() < 1e-6);
        // a one-regime chain must still carry a usable rate and params
        assert!(est.lambda[0].is_finite() && (0.0..=1.0).contains(&est.lambda[0]));
        est.to_job_params().validate().unwrap();
    }

    #[test]
    fn square_wave_counts_match_hand_arithmetic() {
        let seed = SeedTree::from_master(32);
        let mut rng = seed.child("noise").rng();
        // 10-minute residences alternating between two well-separated levels
        let watts: Vec<f64> = (0..200)
            .map(|t| {
                let level = if (t / 10) % 2 == 0 { 1000.0 } else { 2000.0 };
                level + 2.0 * rng.sample::<f64, _>(rand_distr::StandardNormal)
            })
            .collect();
        let est = fit_job_pragmatic(&series_from(watts), 6, &seed).unwrap();
        assert_eq!(est.n_regimes(), 2, "means {:?}", est.regime_means);
        // occupancy 100/100; departures: 19 boundary crossings over 199
        // in-range steps, visits split 100/99
        assert!((est.pi[0] - 0.5).abs() < 1e-9);
        let lam0_expect = (10.0 / 100.0) / 0.5;
        let lam1_expect = (9.0 / 99.0) / 0.5;
        assert!((est.lambda[0] - lam0_expect).abs() < 1e-9, "{:?}", est.lambda);
        assert!((est.lambda[1] - lam1_expect).abs() < 1e-9, "{:?}", est.lambda);
    }

    #[test]
    fn kalman_loglik_matches_dense_gaussian() {
        // oracle: z + noise is multivariate normal with covariance
        // sigma2 * Gamma_rho + tau2 * I
        let (sigma2, rho, tau2) = (25.0, 0.4f64, 4.0);
        let phi = (-rho).exp();
        let n = 40usize;
        let seed = SeedTree::from_master(33);
        let mut rng = seed.child("r").rng();
        let r: Vec<f64> =
            (0..n).map(|_| 3.0 * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let ll = ar1_noise_loglik(&[r.clone()], sigma2, rho, tau2);
        let mut cov = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let c = sigma2 * phi.powi((i as i32 - j as i32).abs());
                cov[(i, j)] = c + if i == j { tau2 } else { 0.0 };
            }
        }
        let chol = nalgebra::Cholesky::new(cov).unwrap();
        let x = nalgebra::DVector::from_vec(r);
        let sol = chol.solve(&x);
        let quad = x.dot(&sol);
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let want = -0.5 * (n as f64 * crate::dist::LN_2PI + logdet + quad);
        assert!((ll - want).abs() < 1e-8, "kalman {ll} vs dense {want}");
    }

    #[test]
    fn ar1_noise_mle_recovers_truth() {
        let (sigma2, rho, tau2) = (25.0f64, 0.2f64, 4.0f64);
        let phi = (-rho).exp();
        let innov = (sigma2 * (1.0 - phi * phi)).sqrt();
        let seed = SeedTree::from_master(34);
        let mut rng = seed.child("sim").rng();
        let mut z =
            sigma2.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
        let r: Vec<f64> = (0..4000)
            .map(|t| {
                if t > 0 {
                    z = phi * z + innov * rng.sample::<f64, _>(rand_distr::StandardNormal);
                }
                z + tau2.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal)
            })
            .collect();
        let (s2, rh, t2) = fit_ar1_noise_mle(&[r]).unwrap();
        assert!((s2 - sigma2).abs() < 0.25 * sigma2, "sigma2 {s2}");
        assert!(((-rh as f64).exp() - phi).abs() < 0.05, "phi {}", (-rh as f64).exp());
        assert!((t2 - tau2).abs() < 0.3 * tau2, "tau2 {t2}");
    }

    fn toy_estimate(id: &str, mean: f64) -> PragmaticJobEstimate {
        PragmaticJobEstimate {
            job_id: id.into(),
            regime_means: vec![mean],
            pi: vec![1.0],
            lambda: vec![0.1],
            sigma2: 100.0,
            rho: 0.3,
            tau2: 25.0,
            labels: vec![],
            em_fallback: false,
        }
    }

    #[test]
    fn empty_history_gives_uniform_weights() {
        let parent = EmpiricalParent {
            estimates: vec![toy_estimate("a", 1000.0), toy_estimate("b", 2000.0)],
        };
        let w = update_job_pragmatic(&JobSeries::new("x", vec![]), &parent, false).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn history_identifies_its_generator() {
        let parent = EmpiricalParent {
            estimates: vec![
                toy_estimate("a", 1000.0),
                toy_estimate("b", 2000.0),
                toy_estimate("c", 3000.0),
            ],
        };
        let seed = SeedTree::from_master(35);
        let mut rng = seed.child("gen").rng();
        let watts: Vec<f64> = (0..60)
            .map(|_| 2000.0 + 11.0 * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let w = update_job_pragmatic(&series_from(watts), &parent, false).unwrap();
        assert!(w[1] > 0.9, "weights {w:?}");
        let total: f64 = w.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_estimates_share_weight() {
        let parent = EmpiricalParent {
            estimates: vec![
                toy_estimate("a", 1500.0),
                toy_estimate("a2", 1500.0),
                toy_estimate("b", 4000.0),
            ],
        };
        let seed = SeedTree::from_master(36);
        let mut rng = seed.child("gen").rng();
        let watts: Vec<f64> = (0..40)
            .map(|_| 1500.0 + 11.0 * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let w = update_job_pragmatic(&series_from(watts), &parent, false).unwrap();
        assert!((w[0] - w[1]).abs() < 1e-12, "{w:?}");
        assert!(w[2] < 1e-6);
    }

    #[test]
    fn prediction_mixes_by_weight_and_is_deterministic() {
        let parent = EmpiricalParent {
            estimates: vec![toy_estimate("a", 1000.0), toy_estimate("b", 3000.0)],
        };
        let seed = SeedTree::from_master(37);
        let ens =
            predict_pragmatic(&[0.99, 0.01], &parent, None, 4, 400, 2, false, &seed).unwrap();
        let grand = stats::mean(&ens.mean_trace());
        assert!((grand - 1020.0).abs() < 60.0, "ensemble mean {grand}");
        let again =
            predict_pragmatic(&[0.99, 0.01], &parent, None, 4, 400, 2, false, &seed).unwrap();
        assert_eq!(ens.realizations, again.realizations);
        assert_eq!(ens.n_cages, 2);
    }

    #[test]
    fn single_entry_parent_prediction_follows_that_estimate() {
        let parent = EmpiricalParent { estimates: vec![toy_estimate("only", 2500.0)] };
        let seed = SeedTree::from_master(38);
        let ens = predict_pragmatic(&[1.0], &parent, None, 6, 300, 1, false, &seed).unwrap();
        let m = stats::mean(&ens.mean_trace());
        assert!((m - 2500.0).abs() < 5.0, "mean {m}");
    }
}
