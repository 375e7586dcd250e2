//! Stationary AR(1) smooth-drift machinery.
//!
//! The drift component z has marginal variance `sigma2` and lag-one
//! correlation `phi = exp(-rho)` (the discretization of an
//! Ornstein-Uhlenbeck process sampled once a minute). Its precision matrix is
//! tridiagonal, and adding independent observation noise keeps the posterior
//! precision tridiagonal, so everything here - sampling a whole path
//! conditional on residuals, log-densities, quadratic forms - runs in O(T)
//! through a banded Cholesky sweep rather than a dense factorization.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Symmetric tridiagonal matrix: `diag` has length n, `off` length n-1.
#[derive(Clone, Debug)]
pub struct Tridiag {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl Tridiag {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    /// x' A x for symmetric tridiagonal A.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let n = self.n();
        assert_eq!(x.len(), n);
        let mut q = 0.0;
        for i in 0..n {
            q += self.diag[i] * x[i] * x[i];
        }
        for i in 0..n - 1 {
            q += 2.0 * self.off[i] * x[i] * x[i + 1];
        }
        q
    }

    /// Lower-bidiagonal Cholesky factor; errors when the matrix is not
    /// positive definite.
    pub fn cholesky(&self) -> Result<TridiagChol> {
        let n = self.n();
        let mut d = vec![0.0; n];
        let mut e = vec![0.0; n.saturating_sub(1)];
        let mut prev = 0.0f64;
        for i in 0..n {
            let mut a = self.diag[i];
            if i > 0 {
                a -= prev * prev;
            }
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::numerical(format!(
                    "tridiagonal Cholesky failed at row {i}: pivot {a}"
                )));
            }
            d[i] = a.sqrt();
            if i + 1 < n {
                prev = self.off[i] / d[i];
                e[i] = prev;
            }
        }
        Ok(TridiagChol { d, e })
    }
}

/// Cholesky factor L of a symmetric tridiagonal matrix: L is lower
/// bidiagonal with diagonal `d` and subdiagonal `e`.
pub struct TridiagChol {
    d: Vec<f64>,
    e: Vec<f64>,
}

impl TridiagChol {
    pub fn n(&self) -> usize {
        self.d.len()
    }

    /// log det of the original matrix (twice the log det of L).
    pub fn log_det(&self) -> f64 {
        2.0 * self.d.iter().map(|x| x.ln()).sum::<f64>()
    }

    /// Solve (L L') x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut v = b[i];
            if i > 0 {
                v -= self.e[i - 1] * y[i - 1];
            }
            y[i] = v / self.d[i];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut v = y[i];
            if i + 1 < n {
                v -= self.e[i] * x[i + 1];
            }
            x[i] = v / self.d[i];
        }
        x
    }

    /// Solve L' w = eta (used to turn white noise into a draw with
    /// covariance (L L')^{-1}).
    fn solve_transpose(&self, eta: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut w = vec![0.0; n];
        for i in (0..n).rev() {
            let mut v = eta[i];
            if i + 1 < n {
                v -= self.e[i] * w[i + 1];
            }
            w[i] = v / self.d[i];
        }
        w
    }

    /// Draw from N(mean, P^{-1}) where P = L L' and mean = P^{-1} b.
    pub fn sample_with_canonical_mean<R: Rng>(&self, b: &[f64], rng: &mut R) -> Vec<f64> {
        let mut z = self.solve(b);
        let eta: Vec<f64> = (0..self.n()).map(|_| rng.sample(StandardNormal)).collect();
        let w = self.solve_transpose(&eta);
        for i in 0..z.len() {
            z[i] += w[i];
        }
        z
    }
}

/// Precision matrix of a stationary AR(1) path with unit marginal variance
/// and lag-one correlation `phi`. For n = 1 this is just [1].
pub fn ar1_unit_precision(n: usize, phi: f64) -> Tridiag {
    assert!(n >= 1);
    assert!((0.0..1.0).contains(&phi), "phi must be in [0, 1), got {phi}");
    if n == 1 {
        return Tridiag { diag: vec![1.0], off: vec![] };
    }
    let s = 1.0 / (1.0 - phi * phi);
    let mut diag = vec![(1.0 + phi * phi) * s; n];
    diag[0] = s;
    diag[n - 1] = s;
    let off = vec![-phi * s; n - 1];
    Tridiag { diag, off }
}

/// Log-density of a path under the stationary AR(1) law with marginal
/// variance `sigma2` and correlation `phi`.
pub fn ar1_lnpdf(z: &[f64], phi: f64, sigma2: f64) -> f64 {
    let n = z.len();
    if n == 0 {
        return 0.0;
    }
    let prec = ar1_unit_precision(n, phi);
    let q = prec.quad_form(z);
    // |sigma2 * Gamma| = sigma2^n * (1 - phi^2)^(n-1)
    let ln_det_cov = n as f64 * sigma2.ln() + (n - 1) as f64 * (1.0 - phi * phi).ln();
    -0.5 * (n as f64 * crate::dist::LN_2PI + ln_det_cov + q / sigma2)
}

/// Posterior precision and canonical mean for a smooth path observed through
/// independent noise: residuals r = x - level, observation precision
/// `data_prec` (use 0 to recover the prior). Returns (precision, b) with the
/// posterior being N(P^{-1} b, P^{-1}).
pub fn smooth_conditional(r: &[f64], data_prec: f64, phi: f64, sigma2: f64) -> (Tridiag, Vec<f64>) {
    let n = r.len();
    let mut prec = ar1_unit_precision(n, phi);
    let inv_s2 = 1.0 / sigma2;
    for d in prec.diag.iter_mut() {
        *d = *d * inv_s2 + data_prec;
    }
    for o in prec.off.iter_mut() {
        *o *= inv_s2;
    }
    let b: Vec<f64> = r.iter().map(|&ri| ri * data_prec).collect();
    (prec, b)
}

/// Draw one smooth path conditional on residuals (or from the prior when
/// `data_prec` is zero).
pub fn sample_smooth<R: Rng>(
    r: &[f64],
    data_prec: f64,
    phi: f64,
    sigma2: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if r.is_empty() {
        return Ok(Vec::new());
    }
    let (prec, b) = smooth_conditional(r, data_prec, phi, sigma2);
    let chol = prec.cholesky()?;
    Ok(chol.sample_with_canonical_mean(&b, rng))
}
