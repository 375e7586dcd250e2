//! Parent-level conditional updates: one Gibbs/Metropolis pass over the
//! population parameters given the current per-job draws.
//!
//! All conjugate families are standard; the only care points are the stick
//! truncation convention (M-1 free fractions, so the gamma-concentration
//! shape gains M-1, and delta's gains J*(K-1)) and the two shape parameters
//! of the rate law, which get log-scale random-walk Metropolis because a
//! beta likelihood has no conjugate prior in its shapes.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::dist;
use crate::error::Result;
use crate::model::{HyperPriors, ParentParams};

use super::job::{AcceptanceStats, JobState};

/// Sum of ln Beta(lambda; alpha, beta) over all jobs' rates, as a function
/// of the shapes. `s1 = sum ln lambda`, `s0 = sum ln(1-lambda)`, n entries.
fn beta_shape_loglik(alpha: f64, beta: f64, n: f64, s1: f64, s0: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    n * (ln_gamma(alpha + beta) - ln_gamma(alpha) - ln_gamma(beta))
        + (alpha - 1.0) * s1
        + (beta - 1.0) * s0
}

/// Log-scale random-walk Metropolis step for one beta shape parameter with a
/// Gamma(shape_prior, rate_prior) prior. Returns the new value and whether
/// the move was accepted.
fn shape_rw_step(
    cur: f64,
    rw_var: f64,
    prior_shape: f64,
    prior_rate: f64,
    loglik: impl Fn(f64) -> f64,
    rng: &mut ChaCha12Rng,
) -> (f64, bool) {
    let theta = cur.ln();
    let theta_prop = theta + rw_var.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
    if !(-40.0..=40.0).contains(&theta_prop) {
        return (cur, false);
    }
    let prop = theta_prop.exp();
    // target on the log scale: gamma prior density times the Jacobian e^theta
    let ln_accept = loglik(prop) - loglik(cur)
        + dist::gamma_lnpdf(prop, prior_shape, prior_rate)
        - dist::gamma_lnpdf(cur, prior_shape, prior_rate)
        + theta_prop
        - theta;
    if ln_accept >= 0.0 || rng.random::<f64>().ln() < ln_accept {
        (prop, true)
    } else {
        (cur, false)
    }
}

/// One pass over every parent parameter. `include_data = false` drops the
/// observation terms (only tau2 conditions on data directly), so the pass
/// combined with flattened job sweeps targets the prior.
pub fn update_parent(
    parent: &mut ParentParams,
    jobs: &[JobState],
    h: &HyperPriors,
    include_data: bool,
    alpha_rw: f64,
    beta_rw: f64,
    acc: &mut AcceptanceStats,
    rng: &mut ChaCha12Rng,
) -> Result<()> {
    let j_n = jobs.len() as f64;
    let m_n = parent.n_components();

    // --- log-normal law of sigma2 ---
    let lsig: Vec<f64> = jobs.iter().map(|s| s.params.sigma2.ln()).collect();
    let sum_lsig: f64 = lsig.iter().sum();
    let post_var = 1.0 / (1.0 / h.s2_sigma + j_n / parent.sigma2_sigma);
    let post_mean = post_var * (h.m_sigma / h.s2_sigma + sum_lsig / parent.sigma2_sigma);
    parent.mu_sigma =
        post_mean + post_var.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
    let ss: f64 = lsig.iter().map(|l| (l - parent.mu_sigma).powi(2)).sum();
    parent.sigma2_sigma =
        dist::sample_inverse_gamma(h.a_sigma + 0.5 * j_n, h.b_sigma + 0.5 * ss, rng)?;

    // --- log-normal law of rho ---
    let lrho: Vec<f64> = jobs.iter().map(|s| s.params.rho.ln()).collect();
    let sum_lrho: f64 = lrho.iter().sum();
    let post_var = 1.0 / (1.0 / h.s2_rho + j_n / parent.sigma2_rho);
    let post_mean = post_var * (h.m_rho / h.s2_rho + sum_lrho / parent.sigma2_rho);
    parent.mu_rho =
        post_mean + post_var.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
    let ss: f64 = lrho.iter().map(|l| (l - parent.mu_rho).powi(2)).sum();
    parent.sigma2_rho =
        dist::sample_inverse_gamma(h.a_rho + 0.5 * j_n, h.b_rho + 0.5 * ss, rng)?;

    // --- regime-mean mixture ---
    // component occupancy and per-component regime means
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); m_n];
    for s in jobs {
        for (k, &m) in s.params.psi.iter().enumerate() {
            members[m].push(s.params.mu[k]);
        }
    }
    let counts: Vec<f64> = members.iter().map(|v| v.len() as f64).collect();
    let mut above: f64 = counts.iter().sum();
    for m in 0..m_n - 1 {
        above -= counts[m];
        parent.u[m] = dist::sample_beta(1.0 + counts[m], parent.gamma + above, rng)?;
    }
    for m in 0..m_n {
        let n_m = counts[m];
        let sum_mu: f64 = members[m].iter().sum();
        let post_var = 1.0 / (1.0 / h.s2_nu + n_m / parent.varsigma2[m]);
        let post_mean = post_var * (h.m_nu / h.s2_nu + sum_mu / parent.varsigma2[m]);
        parent.nu[m] =
            post_mean + post_var.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
        let ss: f64 = members[m].iter().map(|&mu| (mu - parent.nu[m]).powi(2)).sum();
        parent.varsigma2[m] =
            dist::sample_inverse_gamma(h.a_varsigma + 0.5 * n_m, h.b_varsigma + 0.5 * ss, rng)?;
    }

    // --- stick concentrations ---
    // M-1 free fractions in the parent stick, K-1 per job in the destination stick
    let neg_log_rem_u: f64 = parent.u.iter().map(|&u| -(1.0 - u).ln()).sum();
    parent.gamma = dist::sample_gamma(
        h.a_gamma + (m_n - 1) as f64,
        h.b_gamma + neg_log_rem_u,
        rng,
    )?
    .max(1e-8);
    let mut neg_log_rem_v = 0.0;
    let mut v_count = 0.0;
    for s in jobs {
        for &v in &s.params.v {
            neg_log_rem_v -= (1.0 - v).ln();
            v_count += 1.0;
        }
    }
    parent.delta =
        dist::sample_gamma(h.a_delta + v_count, h.b_delta + neg_log_rem_v, rng)?.max(1e-8);

    // --- measurement noise ---
    let mut n_obs = 0.0;
    let mut ss = 0.0;
    if include_data {
        for s in jobs {
            for rep in 0..s.x.len() {
                for t in 0..s.x[rep].len() {
                    let r = s.x[rep][t] - s.params.mu[s.params.xi[rep][t]] - s.params.z[rep][t];
                    ss += r * r;
                    n_obs += 1.0;
                }
            }
        }
    }
    parent.tau2 = dist::sample_inverse_gamma(h.a_tau + 0.5 * n_obs, h.b_tau + 0.5 * ss, rng)?;

    // --- beta shapes of the rate law ---
    let mut s1 = 0.0;
    let mut s0 = 0.0;
    let mut n_rates = 0.0;
    for s in jobs {
        for &l in &s.params.lambda {
            s1 += l.ln();
            s0 += (1.0 - l).ln();
            n_rates += 1.0;
        }
    }
    let beta_cur = parent.beta_lambda;
    let (alpha_new, a_ok) = shape_rw_step(
        parent.alpha_lambda,
        alpha_rw,
        h.a_lambda,
        h.b_lambda,
        |a| beta_shape_loglik(a, beta_cur, n_rates, s1, s0),
        rng,
    );
    parent.alpha_lambda = alpha_new;
    acc.alpha_lambda.1 += 1;
    if a_ok {
        acc.alpha_lambda.0 += 1;
    }
    let alpha_cur = parent.alpha_lambda;
    let (beta_new, b_ok) = shape_rw_step(
        parent.beta_lambda,
        beta_rw,
        h.c_lambda,
        h.d_lambda,
        |b| beta_shape_loglik(alpha_cur, b, n_rates, s1, s0),
        rng,
    );
    parent.beta_lambda = beta_new;
    acc.beta_lambda.1 += 1;
    if b_ok {
        acc.beta_lambda.0 += 1;
    }
    Ok(())
}
