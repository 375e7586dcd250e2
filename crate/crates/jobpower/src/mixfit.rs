//! Normal-mixture approximation of a density tabulated on a grid.
//!
//! Used to compress the averaged regime-mean parent density into a compact
//! mixture before per-job updating. The fit minimizes L2 distance on the
//! grid: a weighted EM pass (treating grid points as fractional
//! observations) supplies starting values, then Nelder-Mead polishes the
//! full parameter vector against the actual L2 objective. Components that
//! the target does not need end up with near-zero weight rather than being
//! pruned.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neldermead::{self, NelderMeadConfig};
use crate::rng::SeedTree;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormalMixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl NormalMixture {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn density(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.sds)
            .map(|((&w, &m), &s)| {
                w * crate::dist::normal_lnpdf(x, m, s * s).exp()
            })
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.weights.len();
        if g == 0 || self.means.len() != g || self.sds.len() != g {
            return Err(Error::config("mixture component arrays disagree in length"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-6 || self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::config("mixture weights must be a probability vector"));
        }
        if self.sds.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::config("mixture sds must be positive"));
        }
        Ok(())
    }
}

/// Relative L2 distance between the mixture and a tabulated target:
/// ||fit - target|| / ||target|| over the grid points.
pub fn relative_l2(mix: &NormalMixture, grid: &[f64], target: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (&x, &t) in grid.iter().zip(target) {
        let d = mix.density(x) - t;
        num += d * d;
        den += t * t;
    }
    if den == 0.0 {
        return f64::INFINITY;
    }
    (num / den).sqrt()
}

/// One weighted EM pass: treat each grid point as an observation with mass
/// proportional to the target density. Returns a full mixture (weights
/// renormalized, sds floored at half the grid spacing).
fn weighted_em(
    grid: &[f64],
    mass: &[f64],
    init_means: &[f64],
    init_sd: f64,
    sd_floor: f64,
    iters: usize,
) -> NormalMixture {
    let g = init_means.len();
    let mut mix = NormalMixture {
        weights: vec![1.0 / g as f64; g],
        means: init_means.to_vec(),
        sds: vec![init_sd.max(sd_floor); g],
    };
    let n = grid.len();
    let mut resp = vec![0.0f64; g];
    for _ in 0..iters {
        let mut w_acc = vec![0.0f64; g];
        let mut m_acc = vec![0.0f64; g];
        let mut v_acc = vec![0.0f64; g];
        for i in 0..n {
            let mut total = 0.0;
            for c in 0..g {
                let d = mix.weights[c]
                    * crate::dist::normal_lnpdf(grid[i], mix.means[c], mix.sds[c] * mix.sds[c])
                        .exp();
                resp[c] = d;
                total += d;
            }
            if total <= 0.0 {
                continue;
            }
            for c in 0..g {
                let r = mass[i] * resp[c] / total;
                w_acc[c] += r;
                m_acc[c] += r * grid[i];
            }
        }
        for c in 0..g {
            if w_acc[c] > 1e-300 {
                mix.means[c] = m_acc[c] / w_acc[c];
            }
        }
        for i in 0..n {
            let mut total = 0.0;
            for c in 0..g {
                let d = mix.weights[c]
                    * crate::dist::normal_lnpdf(grid[i], mix.means[c], mix.sds[c] * mix.sds[c])
                        .exp();
                resp[c] = d;
                total += d;
            }
            if total <= 0.0 {
                continue;
            }
            for c in 0..g {
                let r = mass[i] * resp[c] / total;
                v_acc[c] += r * (grid[i] - mix.means[c]).powi(2);
            }
        }
        let mass_total: f64 = w_acc.iter().sum();
        for c in 0..g {
            if w_acc[c] > 1e-300 {
                mix.sds[c] = (v_acc[c] / w_acc[c]).sqrt().max(sd_floor);
            }
            mix.weights[c] = (w_acc[c] / mass_total).max(1e-12);
        }
        let wt: f64 = mix.weights.iter().sum();
        for w in &mut mix.weights {
            *w /= wt;
        }
    }
    mix
}

/// Pack mixture parameters for the unconstrained polish: weight logits
/// (softmax), raw means, log sds.
fn pack(mix: &NormalMixture) -> Vec<f64> {
    let mut v = Vec::with_capacity(3 * mix.n_components());
    v.extend(mix.weights.iter().map(|w| w.max(1e-12).ln()));
    v.extend(mix.means.iter().copied());
    v.extend(mix.sds.iter().map(|s| s.ln()));
    v
}

fn unpack(theta: &[f64], g: usize, sd_floor: f64) -> NormalMixture {
    let logits = &theta[..g];
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    NormalMixture {
        weights,
        means: theta[g..2 * g].to_vec(),
        sds: theta[2 * g..3 * g].iter().map(|l| l.exp().max(sd_floor)).collect(),
    }
}

/// Fit a `g`-component normal mixture to a nonnegative density tabulated on
/// an increasing grid, minimizing relative L2 distance. Several restarts
/// (EM from spread-out quantile inits) feed a simplex polish; the best fit
/// and its residual are returned. Deterministic for a fixed seed.
pub fn fit_density_mixture(
    grid: &[f64],
    target: &[f64],
    g: usize,
    seed: &SeedTree,
) -> Result<(NormalMixture, f64)> {
    if grid.len() != target.len() || grid.len() < 8 {
        return Err(Error::config("mixture fit needs a grid of at least 8 points"));
    }
    if g == 0 {
        return Err(Error::config("mixture fit needs at least one component"));
    }
    if target.iter().any(|&t| !t.is_finite() || t < 0.0) {
        return Err(Error::data("target density must be finite and nonnegative"));
    }
    if target.iter().sum::<f64>() <= 0.0 {
        return Err(Error::data("target density is identically zero"));
    }
    let spacing = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
    if spacing <= 0.0 {
        return Err(Error::config("grid must be increasing"));
    }
    let sd_floor = 0.5 * spacing;

    // target as fractional observations for EM
    let mass_total: f64 = target.iter().sum();
    let mass: Vec<f64> = target.iter().map(|t| t / mass_total).collect();
    // target mean/sd for initialization spread
    let t_mean: f64 = grid.iter().zip(&mass).map(|(x, m)| x * m).sum();
    let t_sd: f64 = grid
        .iter()
        .zip(&mass)
        .map(|(x, m)| m * (x - t_mean).powi(2))
        .sum::<f64>()
        .sqrt()
        .max(sd_floor);

    // cumulative-mass quantiles as deterministic component seeds
    let quantile = |p: f64| -> f64 {
        let mut acc = 0.0;
        for (&x, &m) in grid.iter().zip(&mass) {
            acc += m;
            if acc >= p {
                return x;
            }
        }
        grid[grid.len() - 1]
    };

    let mut rng = seed.child("mixfit").rng();
    let mut best: Option<(NormalMixture, f64)> = None;
    let n_restarts = 5;
    for r in 0..n_restarts {
        let init_means: Vec<f64> = (0..g)
            .map(|c| {
                let q = quantile((c as f64 + 0.5) / g as f64);
                if r == 0 {
                    q
                } else {
                    q + 0.3 * t_sd * rng.sample::<f64, _>(rand_distr::StandardNormal)
                }
            })
            .collect();
        let init_sd = t_sd / (g as f64).sqrt() * if r % 2 == 0 { 1.0 } else { 2.0 };
        let em = weighted_em(grid, &mass, &init_means, init_sd, sd_floor, 60);
        let polish_cfg = NelderMeadConfig {
            max_evals: 3000 * g,
            x_tol: 1e-7,
            f_tol: 1e-12,
            initial_step: 0.05,
        };
        let theta0 = pack(&em);
        let res = neldermead::minimize(
            |th| relative_l2(&unpack(th, g, sd_floor), grid, target),
            &theta0,
            &polish_cfg,
        );
        let mix = unpack(&res.x, g, sd_floor);
        let resid = relative_l2(&mix, grid, target);
        if best.as_ref().map_or(true, |(_, b)| resid < *b) {
            best = Some((mix, resid));
        }
    }
    let (mix, resid) = best.expect("at least one restart ran");
    mix.validate()?;
    Ok((mix, resid))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tabulate(mix: &NormalMixture, lo: f64, hi: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
        let grid: Vec<f64> =
            (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        let dens: Vec<f64> = grid.iter().map(|&x| mix.density(x)).collect();
        (grid, dens)
    }

    #[test]
    fn single_normal_recovered_with_spare_components() {
        let truth = NormalMixture { weights: vec![1.0], means: vec![2.0], sds: vec![0.7] };
        let (grid, dens) = tabulate(&truth, -2.0, 6.0, 256);
        let seed = SeedTree::from_master(7);
        let (fit, resid) = fit_density_mixture(&grid, &dens, 4, &seed).unwrap();
        assert!(resid < 0.01, "residual {resid}");
        // effective mean/sd of the fit match the target
        let fit_mean = fit.mean();
        assert!((fit_mean - 2.0).abs() < 0.05, "mean {fit_mean}");
    }

    #[test]
    fn bimodal_target_gets_mass_at_both_modes() {
        let truth = NormalMixture {
            weights: vec![0.35, 0.65],
            means: vec![-3.0, 3.0],
            sds: vec![0.6, 0.8],
        };
        let (grid, dens) = tabulate(&truth, -7.0, 7.0, 384);
        let seed = SeedTree::from_master(8);
        let (fit, resid) = fit_density_mixture(&grid, &dens, 6, &seed).unwrap();
        assert!(resid < 0.05, "residual {resid}");
        // integrated weight on each side of zero within 0.05 of truth
        let left: f64 = fit
            .weights
            .iter()
            .zip(&fit.means)
            .filter(|(_, &m)| m < 0.0)
            .map(|(w, _)| w)
            .sum();
        assert!((left - 0.35).abs() < 0.05, "left mass {left}");
    }

    #[test]
    fn deterministic_given_seed() {
        let truth = NormalMixture { weights: vec![1.0], means: vec![0.0], sds: vec![1.0] };
        let (grid, dens) = tabulate(&truth, -4.0, 4.0, 128);
        let seed = SeedTree::from_master(9);
        let a = fit_density_mixture(&grid, &dens, 3, &seed).unwrap();
        let b = fit_density_mixture(&grid, &dens, 3, &seed).unwrap();
        assert_eq!(a.0.weights, b.0.weights);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn rejects_bad_inputs() {
        let seed = SeedTree::from_master(1);
        assert!(fit_density_mixture(&[0.0, 1.0], &[1.0, 1.0], 2, &seed).is_err());
        let grid: Vec<f64> = (0..32).map(|i| i as f64).collect();
        let zeros = vec![0.0; 32];
        assert!(fit_density_mixture(&grid, &zeros, 2, &seed).is_err());
        let neg: Vec<f64> = (0..32).map(|i| if i == 3 { -1.0 } else { 1.0 }).collect();
        assert!(fit_density_mixture(&grid, &neg, 2, &seed).is_err());
    }
}
