//! Distribution utilities shared by the samplers: log-densities, categorical
//! sampling in log space, and a lower-truncated normal sampler.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use statrs::distribution::ContinuousCDF;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837877066409345483560659472811;

#[inline]
pub fn normal_lnpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Log-density of a log-normal: ln x ~ N(mu, var).
#[inline]
pub fn lognormal_lnpdf(x: f64, mu: f64, var: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let lx = x.ln();
    normal_lnpdf(lx, mu, var) - lx
}

/// Log-density of Beta(a, b) at x in (0, 1).
pub fn beta_lnpdf(x: f64, a: f64, b: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return f64::NEG_INFINITY;
    }
    ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln()
}

/// Log-density of Gamma(shape, rate) at x > 0.
pub fn gamma_lnpdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Log-density of inverse-gamma(shape, rate): density ~ x^{-shape-1} e^{-rate/x}.
pub fn inverse_gamma_lnpdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - rate / x
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m; // all -inf (or empty)
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Sample an index with probability proportional to `exp(log_w[i])`.
/// Errors when every weight is zero or any is NaN, rather than silently
/// returning a bogus index.
pub fn sample_categorical_log<R: Rng>(log_w: &[f64], rng: &mut R) -> Result<usize> {
    let m = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m.is_nan() {
        return Err(Error::numerical("categorical weights contain NaN"));
    }
    if m == f64::NEG_INFINITY {
        return Err(Error::numerical(
            "degenerate categorical: all weights vanish (likelihood underflow)",
        ));
    }
    let mut total = 0.0;
    for &lw in log_w {
        total += (lw - m).exp();
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &lw) in log_w.iter().enumerate() {
        acc += (lw - m).exp();
        if u < acc {
            return Ok(i);
        }
    }
    Ok(log_w.len() - 1) // rounding fell past the end
}

/// Sample an index from unnormalized nonnegative weights.
pub fn sample_categorical<R: Rng>(w: &[f64], rng: &mut R) -> Result<usize> {
    let total: f64 = w.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::numerical("degenerate categorical weights"));
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &wi) in w.iter().enumerate() {
        acc += wi;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(w.len() - 1)
}

/// Inverse-gamma(shape, rate) draw via the reciprocal of a gamma draw.
pub fn sample_inverse_gamma<R: Rng>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::numerical(format!("inverse-gamma({shape}, {rate}): {e}")))?;
    let draw: f64 = g.sample(rng);
    if draw <= 0.0 {
        // shape < ~1e-3 can underflow to zero; treat as a numerical failure
        return Err(Error::numerical("inverse-gamma draw underflowed"));
    }
    Ok(1.0 / draw)
}

/// Gamma(shape, rate) draw.
pub fn sample_gamma<R: Rng>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::numerical(format!("gamma({shape}, {rate}): {e}")))?;
    Ok(g.sample(rng))
}

/// Beta(a, b) draw clamped into the open interval so downstream logs and
/// stick-breaking stay finite.
pub fn sample_beta<R: Rng>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    let d = rand_distr::Beta::new(a, b)
        .map_err(|e| Error::numerical(format!("beta({a}, {b}): {e}")))?;
    let x: f64 = d.sample(rng);
    Ok(x.clamp(1e-12, 1.0 - 1e-12))
}

/// Draw from N(mean, var) conditioned on the result being >= lower.
///
/// Uses plain rejection in the bulk and Robert's translated-exponential
/// rejection in the tail, so it stays efficient however far `lower` sits
/// above the mean.
pub fn sample_truncnorm_lower<R: Rng>(mean: f64, var: f64, lower: f64, rng: &mut R) -> f64 {
    assert!(var > 0.0, "truncated normal needs positive variance");
    let sd = var.sqrt();
    let alpha = (lower - mean) / sd;
    if alpha < 0.3 {
        // acceptance probability is at least P(Z >= 0.3) ~ 0.38
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z >= alpha {
                return mean + sd * z;
            }
        }
    }
    let lam = 0.5 * (alpha + (alpha * alpha + 4.0).sqrt());
    loop {
        let e: f64 = rng.sample(Exp1);
        let z = alpha + e / lam;
        let d = z - lam;
        let u: f64 = rng.random();
        if u.ln() <= -0.5 * d * d {
            return mean + sd * z;
        }
    }
}

pub fn std_normal_cdf(x: f64) -> f64 {
    statrs::distribution::Normal::standard().cdf(x)
}

/// Standard normal quantile function.
pub fn std_normal_quantile(p: f64) -> f64 {
    statrs::distribution::Normal::standard().inverse_cdf(p)
}

/// Log of the upper tail P(X > x) for X ~ N(mean, var).
pub fn normal_ln_survival(x: f64, mean: f64, var: f64) -> f64 {
    let z = (x - mean) / var.sqrt();
    let s = statrs::distribution::Normal::standard().sf(z);
    if s > 0.0 {
        s.ln()
    } else {
        // far tail: ln P(Z > z) ~ -z^2/2 - ln(z sqrt(2 pi))
        -0.5 * z * z - (z.max(1e-10)).ln() - 0.5 * LN_2PI
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use crate::stats;

    #[test]
    fn lnpdfs_match_known_values() {
        // standard normal at 0 is 1/sqrt(2 pi)
        assert!((normal_lnpdf(0.0, 0.0, 1.0) + 0.5 * LN_2PI).abs() < 1e-12);
        // Beta(1,1) is uniform
        assert!(beta_lnpdf(0.3, 1.0, 1.0).abs() < 1e-12);
        // Gamma(1, rate) at 0+ has density = rate
        assert!((gamma_lnpdf(1e-12, 1.0, 2.5) - 2.5f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn categorical_log_matches_probabilities() {
        let mut rng = SeedTree::from_master(7).child("cat").rng();
        let log_w = [0.0f64.ln(), 0.2f64.ln(), 0.8f64.ln()];
        let mut counts = [0usize; 3];
        for _ in 0..20_000 {
            counts[sample_categorical_log(&log_w, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[0], 0);
        let p2 = counts[2] as f64 / 20_000.0;
        assert!((p2 - 0.8).abs() < 0.02, "p2 = {p2}");
    }

    #[test]
    fn categorical_all_zero_errors() {
        let mut rng = SeedTree::from_master(7).rng();
        assert!(sample_categorical_log(&[f64::NEG_INFINITY; 3], &mut rng).is_err());
    }

    #[test]
    fn inverse_gamma_moments() {
        // IG(a, b) has mean b/(a-1)
        let mut rng = SeedTree::from_master(11).child("ig").rng();
        let draws: Vec<f64> = (0..40_000)
            .map(|_| sample_inverse_gamma(5.0, 8.0, &mut rng).unwrap())
            .collect();
        let m = stats::mean(&draws);
        assert!((m - 2.0).abs() < 0.05, "mean = {m}");
    }

    #[test]
    fn truncated_normal_matches_closed_form_mean() {
        // E[X | X > a] = mu + sd * phi(alpha) / (1 - Phi(alpha))
        let mut rng = SeedTree::from_master(3).child("tn").rng();
        for &(mean, var, lower) in &[(0.0, 1.0, 2.0), (5.0, 4.0, 4.0), (0.0, 1.0, -1.0), (0.0, 1.0, 6.0)] {
            let sd = f64::sqrt(var);
            let alpha = (lower - mean) / sd;
            let phi = (-0.5 * alpha * alpha).exp() / (2.0 * std::f64::consts::PI).sqrt();
            let expect = mean + sd * phi / (1.0 - std_normal_cdf(alpha));
            let draws: Vec<f64> = (0..60_000)
                .map(|_| sample_truncnorm_lower(mean, var, lower, &mut rng))
                .collect();
            assert!(draws.iter().all(|&x| x >= lower));
            let got = stats::mean(&draws);
            let se = stats::std_dev(&draws) / (draws.len() as f64).sqrt();
            assert!(
                (got - expect).abs() < 5.0 * se.max(1e-4),
                "lower={lower}: got {got}, expect {expect}"
            );
        }
    }

    #[test]
    fn survival_log_handles_far_tail() {
        let ls = normal_ln_survival(40.0, 0.0, 1.0);
        assert!(ls.is_finite() && ls < -700.0);
        let near = normal_ln_survival(0.0, 0.0, 1.0);
        assert!((near - 0.5f64.ln()).abs() < 1e-10);
    }
}
