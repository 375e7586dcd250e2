//! Per-job conditional updates (one Gibbs/Metropolis sweep over a single
//! job's latent paths and parameters, holding the parent fixed).
//!
//! The full conditionals:
//!
//! * regime path: xi(t) has the phi-collapsed conditional
//!   `P[xi(t-1), k] * P[k, xi(t+1)] * N(x(t); mu_k + z(t), tau2)`, with the
//!   destination weight `pi_k` standing in for the missing transition at
//!   t = 1 and the trailing factor dropped at t = T. The sweep runs on the
//!   phi-marginalized target and phi is then redrawn exactly from
//!   p(phi | xi): forced to 1 where the state changed, else Bernoulli
//!   `lambda_k pi_k / (1 - lambda_k (1 - pi_k))` (a self-transition may or
//!   may not have been a re-selected destination).
//! * rates: lambda_k ~ Beta(alpha + m_k, beta + n_k - m_k) where n_k counts
//!   minutes spent in k with a successor and m_k those whose successor was a
//!   possible transition.
//! * destination sticks: v_k ~ Beta(1 + a_k, delta + g_k) with a_k counting
//!   possible transitions landing in k and g_k those landing above k.
//! * regime means: normal conjugate update against the parent mixture
//!   component psi_k, then psi_k re-picked from the mixture responsibilities.
//! * smooth path z: tridiagonal Gaussian conditional, sampled in O(T).
//! * sigma2: independence Metropolis with the conjugate inverse-gamma
//!   proposal IG(a0 + n/2, b0 + q/2), where (a0, b0) moment-match the
//!   log-normal prior and q is the AR(1) quadratic form of z. When the prior
//!   actually is IG(a0, b0) the proposal is the exact conditional and every
//!   draw is accepted; the log-normal prior enters through the MH ratio.
//! * rho: random-walk Metropolis on ln(rho), step variance `rw_scale`.
//!
//! Censored samples are imputed from the truncated predictive before each
//! sweep so every other update can treat `x` as fully observed.

use rand::Rng;

use crate::ar1;
use crate::dist;
use crate::error::Result;
use crate::model::{transition_matrix, JobParams, JobSeries};

/// Parent-level view a single job's sweep conditions on. Built either from
/// the evolving `ParentParams` of a full corpus fit or from a frozen
/// `FixedParent`.
#[derive(Clone, Debug)]
pub struct JobPrior {
    pub alpha_lambda: f64,
    pub beta_lambda: f64,
    pub delta: f64,
    /// Regime-mean mixture: weights, component means, component variances.
    pub omega: Vec<f64>,
    pub nu: Vec<f64>,
    pub varsigma2: Vec<f64>,
    pub mu_sigma: f64,
    pub sigma2_sigma: f64,
    pub mu_rho: f64,
    pub sigma2_rho: f64,
    pub tau2: f64,
}

/// Mutable per-job sampler state: parameters plus the working copy of the
/// observations with censored entries imputed.
#[derive(Clone, Debug)]
pub struct JobState {
    pub params: JobParams,
    /// Imputed watts, one vector per cage replicate (equals observed watts
    /// wherever the sample is uncensored).
    pub x: Vec<Vec<f64>>,
}

/// Redraw every censored observation from N(mu_xi + z, tau2) truncated to
/// lie at or above its recording cap.
pub fn update_censored<R: Rng>(state: &mut JobState, series: &JobSeries, tau2: f64, rng: &mut R) {
    for (rep, samples) in series.replicates.iter().enumerate() {
        for (t, s) in samples.iter().enumerate() {
            if let Some(cap) = s.censored_at {
                let mean = state.params.mu[state.params.xi[rep][t]] + state.params.z[rep][t];
                state.x[rep][t] = dist::sample_truncnorm_lower(mean, tau2, cap, rng);
            }
        }
    }
}

/// One sweep of the regime path: xi(t) for t = 1..T in time order from the
/// collapsed kernel, then phi redrawn exactly given the new path.
/// `include_data = false` drops the observation factor (the sweep then
/// targets the path prior - used by the invariance diagnostics).
pub fn update_regime_path<R: Rng>(
    params: &mut JobParams,
    x: &[Vec<f64>],
    tau2: f64,
    include_data: bool,
    rng: &mut R,
) -> Result<()> {
    let k_n = params.n_regimes();
    let pi = params.pi();
    let rows = transition_matrix(&params.lambda, &pi)?;
    let ln_p: Vec<Vec<f64>> =
        rows.iter().map(|r| r.iter().map(|&p| p.ln()).collect()).collect();
    let ln_pi: Vec<f64> = pi.iter().map(|&p| p.ln()).collect();
    let mut lw = vec![0.0f64; k_n];
    for rep in 0..params.xi.len() {
        let t_n = params.xi[rep].len();
        for t in 0..t_n {
            for (k, w) in lw.iter_mut().enumerate() {
                let mut acc = if t == 0 { ln_pi[k] } else { ln_p[params.xi[rep][t - 1]][k] };
                if t + 1 < t_n {
                    acc += ln_p[k][params.xi[rep][t + 1]];
                }
                if include_data {
                    acc += dist::normal_lnpdf(x[rep][t], params.mu[k] + params.z[rep][t], tau2);
                }
                *w = acc;
            }
            params.xi[rep][t] = dist::sample_categorical_log(&lw, rng)?;
        }
        // phi | xi: exact draw, no dependence on the previous phi
        for t in 0..t_n {
            params.phi[rep][t] = if t == 0 {
                true
            } else if params.xi[rep][t] != params.xi[rep][t - 1] {
                true
            } else {
                let k = params.xi[rep][t];
                let stay_via_move = params.lambda[k] * pi[k];
                let p = stay_via_move / (stay_via_move + 1.0 - params.lambda[k]);
                rng.random::<f64>() < p
            };
        }
    }
    Ok(())
}

/// Conjugate update of the stickiness rates from the possible-transition
/// counts (pooled over cage replicates).
pub fn update_rates<R: Rng>(
    params: &mut JobParams,
    alpha_lambda: f64,
    beta_lambda: f64,
    rng: &mut R,
) -> Result<()> {
    let k_n = params.n_regimes();
    let mut n = vec![0u64; k_n];
    let mut m = vec![0u64; k_n];
    for rep in 0..params.xi.len() {
        let t_n = params.xi[rep].len();
        for t in 0..t_n.saturating_sub(1) {
            let k = params.xi[rep][t];
            n[k] += 1;
            if params.phi[rep][t + 1] {
                m[k] += 1;
            }
        }
    }
    for k in 0..k_n {
        params.lambda[k] = dist::sample_beta(
            alpha_lambda + m[k] as f64,
            beta_lambda + (n[k] - m[k]) as f64,
            rng,
        )?;
    }
    Ok(())
}

/// Conjugate update of the destination stick fractions from the landing
/// counts of possible transitions.
pub fn update_transition_probs<R: Rng>(
    params: &mut JobParams,
    delta: f64,
    rng: &mut R,
) -> Result<()> {
    let k_n = params.n_regimes();
    let mut land = vec![0u64; k_n];
    for rep in 0..params.xi.len() {
        for t in 0..params.xi[rep].len() {
            if params.phi[rep][t] {
                land[params.xi[rep][t]] += 1;
            }
        }
    }
    let mut above: u64 = land.iter().sum();
    for k in 0..k_n.saturating_sub(1) {
        above -= land[k];
        params.v[k] = dist::sample_beta(1.0 + land[k] as f64, delta + above as f64, rng)?;
    }
    Ok(())
}

/// Conjugate update of each regime mean against its parent mixture
/// component, then a categorical re-pick of the component membership psi_k.
pub fn update_regime_means<R: Rng>(
    params: &mut JobParams,
    x: &[Vec<f64>],
    prior: &JobPrior,
    include_data: bool,
    rng: &mut R,
) -> Result<()> {
    let k_n = params.n_regimes();
    let ln_omega: Vec<f64> = prior.omega.iter().map(|&w| w.ln()).collect();
    let mut lw = vec![0.0f64; prior.omega.len()];
    for k in 0..k_n {
        let mut n = 0.0f64;
        let mut sum = 0.0f64;
        if include_data {
            for rep in 0..params.xi.len() {
                for t in 0..params.xi[rep].len() {
                    if params.xi[rep][t] == k {
                        n += 1.0;
                        sum += x[rep][t] - params.z[rep][t];
                    }
                }
            }
        }
        let m = params.psi[k];
        let post_var = 1.0 / (1.0 / prior.varsigma2[m] + n / prior.tau2);
        let post_mean = post_var * (prior.nu[m] / prior.varsigma2[m] + sum / prior.tau2);
        params.mu[k] =
            post_mean + post_var.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
        for (m, w) in lw.iter_mut().enumerate() {
            *w = ln_omega[m] + dist::normal_lnpdf(params.mu[k], prior.nu[m], prior.varsigma2[m]);
        }
        params.psi[k] = dist::sample_categorical_log(&lw, rng)?;
    }
    Ok(())
}

/// Draw the smooth drift path of every replicate from its tridiagonal
/// Gaussian conditional (the AR(1) prior when `include_data` is false).
pub fn update_residual_process<R: Rng>(
    params: &mut JobParams,
    x: &[Vec<f64>],
    tau2: f64,
    include_data: bool,
    rng: &mut R,
) -> Result<()> {
    let phi_ar = (-params.rho).exp();
    let data_prec = if include_data { 1.0 / tau2 } else { 0.0 };
    for rep in 0..params.z.len() {
        let r: Vec<f64> = (0..params.z[rep].len())
            .map(|t| x[rep][t] - params.mu[params.xi[rep][t]])
            .collect();
        params.z[rep] = ar1::sample_smooth(&r, data_prec, phi_ar, params.sigma2, rng)?;
    }
    Ok(())
}

/// Total length and AR(1) quadratic form of the drift paths at correlation
/// `phi` (unit marginal variance).
fn drift_suffstats(z: &[Vec<f64>], phi: f64) -> (f64, f64) {
    let mut n = 0.0;
    let mut q = 0.0;
    for path in z {
        if path.is_empty() {
            continue;
        }
        n += path.len() as f64;
        q += ar1::ar1_unit_precision(path.len(), phi).quad_form(path);
    }
    (n, q)
}

/// Moment-match a log-normal (mu, var) to an inverse-gamma (shape, rate).
/// Always feasible for finite inputs: shape = 2 + 1/(e^var - 1) > 2. Returns
/// None only when `var` is large enough to overflow the match.
pub fn lognormal_ig_moment_match(mu: f64, var: f64) -> Option<(f64, f64)> {
    if !(var > 0.0) || var > 500.0 {
        return None;
    }
    let shape = 2.0 + 1.0 / var.exp_m1();
    let mean = (mu + 0.5 * var).exp();
    if !shape.is_finite() || !mean.is_finite() || mean <= 0.0 {
        return None;
    }
    Some((shape, mean * (shape - 1.0)))
}

/// Core sigma2 Metropolis step with a pluggable prior log-density; returns
/// whether the proposal was accepted. Used with the log-normal parent prior
/// in the pipeline and with a conjugate IG prior in exactness tests.
fn ou_variance_mh(
    params: &mut JobParams,
    prior_lnpdf: &dyn Fn(f64) -> f64,
    matched: Option<(f64, f64)>,
    rw_fallback_var: f64,
    rng: &mut rand_chacha::ChaCha12Rng,
) -> Result<bool> {
    let phi_ar = (-params.rho).exp();
    let (n, q) = drift_suffstats(&params.z, phi_ar);
    let cur = params.sigma2;
    // likelihood of the drift paths as a function of sigma2 only
    let ln_lik = |s2: f64| -0.5 * (n * s2.ln() + q / s2);
    let (proposal, ln_qratio) = match matched {
        Some((a0, b0)) => {
            let a = a0 + 0.5 * n;
            let b = b0 + 0.5 * q;
            let prop = dist::sample_inverse_gamma(a, b, rng)?;
            // q(cur)/q(prop) in logs
            let lq = dist::inverse_gamma_lnpdf(cur, a, b) - dist::inverse_gamma_lnpdf(prop, a, b);
            (prop, lq)
        }
        None => {
            // overflow-degenerate match: symmetric random walk on ln sigma2
            let step = rw_fallback_var.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
            let prop = (cur.ln() + step).exp();
            // Jacobian of the log walk: q(cur)/q(prop) = cur/prop... combined with
            // the prior expressed on the natural scale this reduces to +ln(prop/cur)
            (prop, (prop / cur).ln())
        }
    };
    if !(proposal > 0.0) || !proposal.is_finite() {
        return Ok(false);
    }
    let ln_accept =
        ln_lik(proposal) - ln_lik(cur) + prior_lnpdf(proposal) - prior_lnpdf(cur) + ln_qratio;
    let accept = ln_accept >= 0.0 || rng.random::<f64>().ln() < ln_accept;
    if accept {
        params.sigma2 = proposal;
    }
    Ok(accept)
}

/// Metropolis update of the drift marginal variance against its log-normal
/// parent law.
pub fn update_ou_variance(
    params: &mut JobParams,
    mu_sigma: f64,
    sigma2_sigma: f64,
    rng: &mut rand_chacha::ChaCha12Rng,
) -> Result<bool> {
    let matched = lognormal_ig_moment_match(mu_sigma, sigma2_sigma);
    let prior = move |s2: f64| dist::lognormal_lnpdf(s2, mu_sigma, sigma2_sigma);
    // Two stacked moves: the independence proposal jumps straight to the
    // conditional bulk when prior and drift path agree, but its acceptance
    // collapses when they disagree (the moment-matched pseudo-observations
    // drag the proposal away from the path-supported scale). The log-scale
    // walk keeps the chain mobile in exactly that regime.
    let jumped = ou_variance_mh(params, &prior, matched, 0.25, rng)?;
    let walked = ou_variance_mh(params, &prior, None, 0.25, rng)?;
    Ok(jumped || walked)
}

/// Random-walk Metropolis on ln(rho) against the log-normal parent law.
/// `rw_scale` is the variance of the log-scale step.
pub fn update_ou_range(
    params: &mut JobParams,
    mu_rho: f64,
    sigma2_rho: f64,
    rw_scale: f64,
    rng: &mut rand_chacha::ChaCha12Rng,
) -> Result<bool> {
    let theta = params.rho.ln();
    let theta_prop =
        theta + rw_scale.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
    // clamp range keeps 1 - phi^2 representable; with any realistic prior
    // these bounds are dozens of standard deviations out
    if !(-60.0..=60.0).contains(&theta_prop) {
        return Ok(false);
    }
    let rho_prop = theta_prop.exp();
    let ln_lik = |rho: f64| -> f64 {
        let phi = (-rho).exp();
        params.z.iter().map(|z| ar1::ar1_lnpdf(z, phi, params.sigma2)).sum()
    };
    // prior on theta = ln rho is N(mu_rho, sigma2_rho); the log-scale walk is
    // symmetric in theta so no extra Jacobian appears
    let ln_accept = ln_lik(rho_prop) - ln_lik(params.rho)
        + dist::normal_lnpdf(theta_prop, mu_rho, sigma2_rho)
        - dist::normal_lnpdf(theta, mu_rho, sigma2_rho);
    let accept = ln_accept >= 0.0 || rng.random::<f64>().ln() < ln_accept;
    if accept {
        params.rho = rho_prop;
    }
    Ok(accept)
}

/// Metropolis acceptance tallies for one chain.
#[derive(Clone, Copy, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct AcceptanceStats {
    pub sigma2: (u64, u64),
    pub rho: (u64, u64),
    pub alpha_lambda: (u64, u64),
    pub beta_lambda: (u64, u64),
}

impl AcceptanceStats {
    pub fn rate(pair: (u64, u64)) -> f64 {
        if pair.1 == 0 {
            return f64::NAN;
        }
        pair.0 as f64 / pair.1 as f64
    }
}

/// One full sweep over a job's latent paths and parameters.
pub fn job_sweep(
    state: &mut JobState,
    series: &JobSeries,
    prior: &JobPrior,
    include_data: bool,
    rho_rw_scale: f64,
    acc: &mut AcceptanceStats,
    rng: &mut rand_chacha::ChaCha12Rng,
) -> Result<()> {
    if include_data {
        update_censored(state, series, prior.tau2, rng);
    }
    update_regime_path(&mut state.params, &state.x, prior.tau2, include_data, rng)?;
    update_rates(&mut state.params, prior.alpha_lambda, prior.beta_lambda, rng)?;
    update_transition_probs(&mut state.params, prior.delta, rng)?;
    update_regime_means(&mut state.params, &state.x, prior, include_data, rng)?;
    update_residual_process(&mut state.params, &state.x, prior.tau2, include_data, rng)?;
    acc.sigma2.1 += 1;
    if update_ou_variance(&mut state.params, prior.mu_sigma, prior.sigma2_sigma, rng)? {
        acc.sigma2.0 += 1;
    }
    acc.rho.1 += 1;
    if update_ou_range(&mut state.params, prior.mu_rho, prior.sigma2_rho, rho_rw_scale, rng)? {
        acc.rho.0 += 1;
    }
    state.params.debug_assert_finite();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    fn small_params(t_n: usize) -> JobParams {
        JobParams {
            lambda: vec![0.3, 0.5],
            v: vec![0.6],
            mu: vec![100.0, 200.0],
            psi: vec![0, 1],
            sigma2: 4.0,
            rho: 0.5,
            xi: vec![vec![0; t_n]],
            phi: vec![vec![true; t_n]],
            z: vec![vec![0.0; t_n]],
        }
    }

    #[test]
    fn conjugate_ig_prior_always_accepts() {
        // when the prior equals the moment-matched IG, the independence
        // proposal is the exact conditional: acceptance probability 1
        let mut rng = SeedTree::from_master(12).child("sig").rng();
        let mut params = small_params(40);
        // give z some actual AR(1) structure
        params.z[0] =
            crate::ar1::sample_smooth(&vec![0.0; 40], 0.0, 0.6, 4.0, &mut rng).unwrap();
        let (a0, b0) = (4.0, 9.0);
        let prior = move |s2: f64| dist::inverse_gamma_lnpdf(s2, a0, b0);
        for _ in 0..200 {
            let accepted =
                ou_variance_mh(&mut params, &prior, Some((a0, b0)), 0.25, &mut rng).unwrap();
            assert!(accepted, "conjugate proposal must always be accepted");
        }
    }

    #[test]
    fn moment_match_reproduces_lognormal_moments() {
        let (mu, var) = (4.0, 1.0);
        let (a, b) = lognormal_ig_moment_match(mu, var).unwrap();
        // IG(a, b): mean b/(a-1), variance b^2 / ((a-1)^2 (a-2))
        let mean = b / (a - 1.0);
        let v = b * b / ((a - 1.0) * (a - 1.0) * (a - 2.0));
        let ln_mean = (mu + 0.5 * var).exp();
        let ln_var = (var.exp() - 1.0) * (2.0 * mu + var).exp();
        assert!((mean - ln_mean).abs() / ln_mean < 1e-12);
        assert!((v - ln_var).abs() / ln_var < 1e-9);
        assert!(lognormal_ig_moment_match(0.0, 1000.0).is_none());
    }

    #[test]
    fn single_regime_path_update_keeps_state_and_draws_phi() {
        let mut rng = SeedTree::from_master(3).child("k1").rng();
        let t_n = 500;
        let mut params = JobParams {
            lambda: vec![0.3],
            v: vec![],
            mu: vec![100.0],
            psi: vec![0],
            sigma2: 1.0,
            rho: 1.0,
            xi: vec![vec![0; t_n]],
            phi: vec![vec![false; t_n]],
            z: vec![vec![0.0; t_n]],
        };
        let x = vec![vec![100.0; t_n]];
        update_regime_path(&mut params, &x, 1.0, true, &mut rng).unwrap();
        assert!(params.xi[0].iter().all(|&k| k == 0));
        assert!(params.phi[0][0]);
        // with K = 1 a self-transition is a re-pick with probability lambda:
        // stay_via_move / (stay_via_move + 1 - lambda) = lambda
        let frac = params.phi[0][1..].iter().filter(|&&b| b).count() as f64 / (t_n - 1) as f64;
        assert!((frac - 0.3).abs() < 0.07, "phi rate {frac}");
    }

    #[test]
    fn rate_update_uses_counts() {
        // freeze a path with known counts and verify the Beta posterior mean
        let mut params = small_params(6);
        params.xi[0] = vec![0, 0, 1, 1, 0, 0];
        params.phi[0] = vec![true, false, true, false, true, false];
        // regime 0 occupies t = 0,1,4 among t<5; successors phi(1),phi(2),phi(5) = f,t,f -> m0 = 1, n0 = 3
        // regime 1 occupies t = 2,3; successors phi(3),phi(4) = f,t -> m1 = 1, n1 = 2
        let mut rng = SeedTree::from_master(9).child("rates").rng();
        let mut a_draws = Vec::new();
        let mut b_draws = Vec::new();
        for _ in 0..30_000 {
            let mut p = params.clone();
            update_rates(&mut p, 2.0, 3.0, &mut rng).unwrap();
            a_draws.push(p.lambda[0]);
            b_draws.push(p.lambda[1]);
        }
        let m0 = crate::stats::mean(&a_draws);
        let m1 = crate::stats::mean(&b_draws);
        assert!((m0 - 3.0 / 8.0).abs() < 0.01, "lambda0 mean {m0}");
        assert!((m1 - 3.0 / 7.0).abs() < 0.01, "lambda1 mean {m1}");
    }

    #[test]
    fn censored_imputation_respects_cap() {
        use crate::model::{JobSeries, PowerSample};
        let t_n = 200;
        let mut params = small_params(t_n);
        params.mu = vec![100.0, 200.0];
        let series = JobSeries::new(
            "c",
            vec![(0..t_n)
                .map(|t| PowerSample {
                    minute: t as u32,
                    watts: 110.0,
                    censored_at: if t % 2 == 0 { Some(110.0) } else { None },
                })
                .collect()],
        );
        let mut state = JobState { params, x: vec![vec![110.0; t_n]] };
        let mut rng = SeedTree::from_master(21).child("cens").rng();
        update_censored(&mut state, &series, 25.0, &mut rng);
        for t in 0..t_n {
            if t % 2 == 0 {
                assert!(state.x[0][t] >= 110.0);
            } else {
                assert_eq!(state.x[0][t], 110.0);
            }
        }
        // imputed values should follow the truncated normal above the cap:
        // mean = mu + sd * phi(a)/(1-Phi(a)) with mu=100, sd=5, a=2
        let imputed: Vec<f64> =
            (0..t_n).step_by(2).map(|t| state.x[0][t]).collect();
        let a: f64 = 2.0;
        let phi = (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let expect = 100.0 + 5.0 * phi / (1.0 - dist::std_normal_cdf(a));
        let got = crate::stats::mean(&imputed);
        assert!((got - expect).abs() < 0.4, "imputed mean {got} vs {expect}");
    }
}
