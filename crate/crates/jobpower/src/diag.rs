//! Chain diagnostics and small exact oracles used to cross-check the
//! samplers: potential scale reduction across chains, total-variation
//! distance, brute-force enumeration of regime-path marginals, and a dense
//! closed form of the smooth-drift conditional.

use crate::dist;
use crate::error::{Error, Result};
use crate::model::{stick_break, transition_matrix, JobParams};

/// Gelman-Rubin potential scale reduction over two or more chains of equal
/// length. Values near 1 indicate the chains are sampling the same law.
pub fn potential_scale_reduction(chains: &[Vec<f64>]) -> Result<f64> {
    let m = chains.len();
    if m < 2 {
        return Err(Error::config("scale reduction needs at least two chains"));
    }
    let n = chains[0].len();
    if n < 2 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::config("chains must share a common length of at least 2"));
    }
    let means: Vec<f64> = chains.iter().map(|c| crate::stats::mean(c)).collect();
    let grand = crate::stats::mean(&means);
    let b = n as f64 / (m as f64 - 1.0)
        * means.iter().map(|&x| (x - grand).powi(2)).sum::<f64>();
    let w = chains.iter().map(|c| crate::stats::variance(c)).sum::<f64>() / m as f64;
    if w <= 0.0 {
        // all chains constant: identical constants are perfectly mixed
        return if b <= 0.0 { Ok(1.0) } else { Ok(f64::INFINITY) };
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    Ok((var_plus / w).sqrt())
}

/// Total-variation distance between two discrete distributions on the same
/// support: half the L1 distance.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::config("distributions must share a support"));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Exact per-minute regime marginals P(xi(t) = k | x, theta) for one cage
/// replicate, by summing the joint density over all K^T paths. The change
/// indicators are marginalized out analytically (the path law below is the
/// collapsed kernel), so these marginals are directly comparable with the
/// Gibbs sampler's xi frequencies.
///
/// Deliberately brute force - this is an oracle, not a production routine.
/// Rejected when K^T exceeds ~10^7 states.
pub fn enumerate_regime_marginals(
    params: &JobParams,
    x: &[f64],
    z: &[f64],
    tau2: f64,
) -> Result<Vec<Vec<f64>>> {
    let k_n = params.n_regimes();
    let t_n = x.len();
    if t_n == 0 || z.len() != t_n {
        return Err(Error::config("enumeration needs matching nonempty x and z"));
    }
    if (k_n as f64).powi(t_n as i32) > 1e7 {
        return Err(Error::config("path space too large to enumerate"));
    }
    let pi = stick_break(&params.v)?;
    let rows = transition_matrix(&params.lambda, &pi)?;
    let ln_p: Vec<Vec<f64>> =
        rows.iter().map(|r| r.iter().map(|&p| p.ln()).collect()).collect();
    let ln_pi: Vec<f64> = pi.iter().map(|&p| p.ln()).collect();
    let ln_emit: Vec<Vec<f64>> = (0..t_n)
        .map(|t| {
            (0..k_n)
                .map(|k| dist::normal_lnpdf(x[t], params.mu[k] + z[t], tau2))
                .collect()
        })
        .collect();

    let n_paths = k_n.pow(t_n as u32);
    let mut log_joint = Vec::with_capacity(n_paths);
    let mut path = vec![0usize; t_n];
    let mut paths = Vec::with_capacity(n_paths);
    for mut idx in 0..n_paths {
        for slot in path.iter_mut() {
            *slot = idx % k_n;
            idx /= k_n;
        }
        let mut lw = ln_pi[path[0]] + ln_emit[0][path[0]];
        for t in 1..t_n {
            lw += ln_p[path[t - 1]][path[t]] + ln_emit[t][path[t]];
        }
        log_joint.push(lw);
        paths.push(path.clone());
    }
    let norm = dist::log_sum_exp(&log_joint);
    let mut marginals = vec![vec![0.0f64; k_n]; t_n];
    for (lw, p) in log_joint.iter().zip(&paths) {
        let w = (lw - norm).exp();
        for (t, &k) in p.iter().enumerate() {
            marginals[t][k] += w;
        }
    }
    Ok(marginals)
}

/// Invert a dense matrix by Gauss-Jordan elimination with partial pivoting.
fn invert_dense(mut a: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let mut inv: Vec<Vec<f64>> =
        (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&p, &q| a[p][col].abs().partial_cmp(&a[q][col].abs()).expect("finite"))
            .expect("nonempty column");
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::numerical("dense matrix is numerically singular"));
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let d = a[col][col];
        for j in 0..n {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let f = a[row][col];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                a[row][j] -= f * a[col][j];
                inv[row][j] -= f * inv[col][j];
            }
        }
    }
    Ok(inv)
}

/// Dense closed form of the smooth-drift conditional given residuals `r`:
/// the drift has prior covariance sigma2 * C with C_{st} = exp(-rho|s-t|)
/// and the observation adds white noise tau2, so
///   Sigma* = tau2 (I + (tau2/sigma2) C^{-1})^{-1},   mu* = Sigma* r / tau2.
/// Both inverses are taken by brute force - this is an oracle for the
/// tridiagonal sampler, not a production routine. Returns (mu*, Sigma*).
pub fn dense_drift_conditional(
    r: &[f64],
    sigma2: f64,
    rho: f64,
    tau2: f64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = r.len();
    if n == 0 {
        return Err(Error::config("dense drift conditional needs observations"));
    }
    if !(sigma2 > 0.0) || !(tau2 > 0.0) || !(rho > 0.0) {
        return Err(Error::config("sigma2, rho, tau2 must be positive"));
    }
    let corr: Vec<Vec<f64>> = (0..n)
        .map(|s| (0..n).map(|t| (-rho * (s as f64 - t as f64).abs()).exp()).collect())
        .collect();
    let corr_inv = invert_dense(corr)?;
    let ratio = tau2 / sigma2;
    let system: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| ratio * corr_inv[i][j] + f64::from(u8::from(i == j)))
                .collect()
        })
        .collect();
    let mut cov = invert_dense(system)?;
    for row in &mut cov {
        for v in row.iter_mut() {
            *v *= tau2;
        }
    }
    let mean: Vec<f64> =
        (0..n).map(|i| (0..n).map(|j| cov[i][j] * r[j]).sum::<f64>() / tau2).collect();
    Ok((mean, cov))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_chains_give_rhat_at_most_one() {
        // identical chains give B = 0, so R-hat = sqrt((n-1)/n) < 1
        let c = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let r = potential_scale_reduction(&[c.clone(), c]).unwrap();
        assert!((r - (5.0f64 / 6.0).sqrt()).abs() < 1e-12, "r = {r}");
    }

    #[test]
    fn shifted_chains_give_large_rhat() {
        let a: Vec<f64> = (0..50).map(|i| i as f64 * 0.01).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 100.0).collect();
        assert!(potential_scale_reduction(&[a, b]).unwrap() > 10.0);
    }

    #[test]
    fn tv_distance_basics() {
        assert_eq!(tv_distance(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        assert!((tv_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(tv_distance(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn enumeration_matches_two_point_hand_calc() {
        // T=1: marginal is proportional to pi_k * N(x; mu_k, tau2)
        let params = JobParams {
            lambda: vec![0.2, 0.2],
            v: vec![0.3],
            mu: vec![0.0, 1.0],
            psi: vec![0, 0],
            sigma2: 1.0,
            rho: 1.0,
            xi: vec![vec![0]],
            phi: vec![vec![true]],
            z: vec![vec![0.0]],
        };
        let m = enumerate_regime_marginals(&params, &[0.8], &[0.0], 0.5).unwrap();
        let w0 = 0.3 * dist::normal_lnpdf(0.8, 0.0, 0.5).exp();
        let w1 = 0.7 * dist::normal_lnpdf(0.8, 1.0, 0.5).exp();
        assert!((m[0][0] - w0 / (w0 + w1)).abs() < 1e-12);
        assert!((m[0][1] - w1 / (w0 + w1)).abs() < 1e-12);
    }

    #[test]
    fn dense_drift_matches_scalar_posterior() {
        // T=1: precision 1/tau2 + 1/sigma2, mean = cov * r / tau2
        let (mean, cov) = dense_drift_conditional(&[3.0], 4.0, 0.7, 2.0).unwrap();
        let want_var = 1.0 / (1.0 / 2.0 + 1.0 / 4.0);
        assert!((cov[0][0] - want_var).abs() < 1e-12);
        assert!((mean[0] - want_var * 3.0 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn dense_drift_recovers_prior_when_noise_dominates() {
        let r = vec![1.0, -2.0, 0.5, 3.0];
        let (sigma2, rho) = (5.0, 0.4);
        let (mean, cov) = dense_drift_conditional(&r, sigma2, rho, 1e12).unwrap();
        for (s, row) in cov.iter().enumerate() {
            for (t, &v) in row.iter().enumerate() {
                let prior = sigma2 * (-rho * (s as f64 - t as f64).abs()).exp();
                assert!((v - prior).abs() < 1e-6 * sigma2, "cov[{s}][{t}] = {v} vs {prior}");
            }
        }
        assert!(mean.iter().all(|m| m.abs() < 1e-6));
    }

    #[test]
    fn dense_drift_interpolates_when_noise_vanishes() {
        // tau2 -> 0: the posterior pins the drift at the residuals
        let r = vec![0.3, -1.1, 2.2];
        let (mean, cov) = dense_drift_conditional(&r, 2.0, 0.5, 1e-10).unwrap();
        for (m, &want) in mean.iter().zip(&r) {
            assert!((m - want).abs() < 1e-6);
        }
        assert!(cov.iter().enumerate().all(|(i, row)| row[i] < 1e-9));
    }

    #[test]
    fn enumeration_rejects_huge_spaces() {
        let params = JobParams {
            lambda: vec![0.2; 4],
            v: vec![0.5, 0.5, 0.5],
            mu: vec![0.0, 1.0, 2.0, 3.0],
            psi: vec![0; 4],
            sigma2: 1.0,
            rho: 1.0,
            xi: vec![vec![0; 30]],
            phi: vec![vec![true; 30]],
            z: vec![vec![0.0; 30]],
        };
        let x = vec![0.0; 30];
        let z = vec![0.0; 30];
        assert!(enumerate_regime_marginals(&params, &x, &z, 1.0).is_err());
    }
}
