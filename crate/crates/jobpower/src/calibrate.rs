//! Predictive-calibration checks.
//!
//! A forecast distribution is calibrated when realized outcomes behave like
//! draws from it. Each job's realized degradation is placed within its
//! predictive ensemble by a *randomized* probability integral transform -
//! the randomization makes the transform exactly uniform even when the
//! predictive law has atoms (degradation is exactly zero for many capped
//! windows), which a plain empirical CDF would not be. The resulting
//! Z-scores are compared against simultaneous normal Q-Q bands built by
//! Monte Carlo on order statistics: the band is the narrowest pointwise
//! envelope whose *joint* coverage hits the requested level.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::degradation;
use crate::error::{Error, Result};
use crate::mcmc::McmcConfig;
use crate::model::JobSeries;
use crate::predict::{self, FixedParent};
use crate::rng::SeedTree;

/// Randomized PIT of `observed` against predictive `draws`:
/// U = (L + V (E + 1)) / (R + 1) with L draws strictly below, E draws tied,
/// and V uniform. Exactly U(0,1) when `observed` is one more draw from the
/// same law, atoms included.
pub fn randomized_pit<R: Rng>(draws: &[f64], observed: f64, rng: &mut R) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::config("randomized PIT needs at least one draw"));
    }
    if !observed.is_finite() || draws.iter().any(|d| !d.is_finite()) {
        return Err(Error::data("PIT inputs must be finite"));
    }
    let below = draws.iter().filter(|&&d| d < observed).count() as f64;
    let tied = draws.iter().filter(|&&d| d == observed).count() as f64;
    let v: f64 = rng.random();
    Ok((below + v * (tied + 1.0)) / (draws.len() as f64 + 1.0))
}

/// PIT mapped to the normal scale, clamped away from the endpoints so the
/// quantile stays finite.
pub fn pit_zscore<R: Rng>(draws: &[f64], observed: f64, rng: &mut R) -> Result<f64> {
    let r = draws.len() as f64;
    let eps = 0.5 / (r + 1.0);
    let u = randomized_pit(draws, observed, rng)?.clamp(eps, 1.0 - eps);
    Ok(crate::dist::std_normal_quantile(u))
}

/// Simultaneous envelope for the order statistics of `n` standard normals.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QqBand {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Pointwise tail mass that achieved the joint coverage.
    pub pointwise_epsilon: f64,
    pub level: f64,
}

impl QqBand {
    /// Does the sorted version of `zscores` stay inside the envelope?
    pub fn contains(&self, zscores: &[f64]) -> bool {
        if zscores.len() != self.lower.len() {
            return false;
        }
        let mut sorted = zscores.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite z-scores"));
        sorted
            .iter()
            .enumerate()
            .all(|(k, &z)| z >= self.lower[k] && z <= self.upper[k])
    }
}

/// Build the band: simulate `n_mc` sorted normal samples of size `n`, then
/// binary-search the pointwise tail mass epsilon so that the fraction of
/// simulated samples lying fully inside [q_eps(k), q_{1-eps}(k)] for every
/// rank k equals `level`.
pub fn simultaneous_qq_band(
    n: usize,
    level: f64,
    n_mc: usize,
    seed: &SeedTree,
) -> Result<QqBand> {
    if n == 0 || n_mc < 200 {
        return Err(Error::config("band needs n >= 1 and at least 200 Monte Carlo sets"));
    }
    if !(0.5 < level && level < 1.0) {
        return Err(Error::config("band level must lie in (0.5, 1)"));
    }
    let mut rng = seed.child("qq-band").rng();
    let mut sims: Vec<Vec<f64>> = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let mut s: Vec<f64> =
            (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        s.sort_by(|a, b| a.partial_cmp(b).expect("finite normals"));
        sims.push(s);
    }
    // per-rank sorted pools for fast quantile lookup
    let mut pools: Vec<Vec<f64>> = (0..n).map(|k| sims.iter().map(|s| s[k]).collect()).collect();
    for p in &mut pools {
        p.sort_by(|a, b| a.partial_cmp(b).expect("finite normals"));
    }
    let band_at = |eps: f64| -> (Vec<f64>, Vec<f64>) {
        let lower: Vec<f64> =
            pools.iter().map(|p| crate::stats::quantile_of_sorted(p, eps)).collect();
        let upper: Vec<f64> =
            pools.iter().map(|p| crate::stats::quantile_of_sorted(p, 1.0 - eps)).collect();
        (lower, upper)
    };
    let coverage = |lower: &[f64], upper: &[f64]| -> f64 {
        let inside = sims
            .iter()
            .filter(|s| s.iter().enumerate().all(|(k, &z)| z >= lower[k] && z <= upper[k]))
            .count();
        inside as f64 / n_mc as f64
    };
    // coverage decreases as eps grows; bisect to the requested level
    let mut lo = 1e-7f64;
    let mut hi = 0.5 * (1.0 - level);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let (l, u) = band_at(mid);
        if coverage(&l, &u) >= level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (lower, upper) = band_at(lo);
    Ok(QqBand { lower, upper, pointwise_epsilon: lo, level })
}

/// One calibration scenario: how much history the updater sees and which
/// mean degradation target picks the cap.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CalibrationScenario {
    pub history_minutes: usize,
    pub target: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub scenarios: Vec<CalibrationScenario>,
    /// Future window scored against the prediction, minutes.
    pub horizon: usize,
    pub n_realizations: usize,
    /// Censor each job's history at this quantile of its own draw
    /// (None = uncensored histories).
    pub censor_quantile: Option<f64>,
    pub idle_watts: f64,
    /// Per-job update settings (single chain; seed expanded per job).
    pub update: McmcConfig,
    pub band_level: f64,
    pub band_mc: usize,
    /// Predictive-spread multiplier on the variance scale. 1 = honest
    /// forecasts; 0.5 = deliberately overconfident (negative control).
    pub variance_scale: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            scenarios: [0usize, 30, 200]
                .iter()
                .flat_map(|&h| {
                    [0.005, 0.02]
                        .iter()
                        .map(move |&t| CalibrationScenario { history_minutes: h, target: t })
                })
                .collect(),
            horizon: 30,
            n_realizations: 400,
            censor_quantile: Some(0.95),
            idle_watts: 400.0,
            update: McmcConfig {
                n_iterations: 800,
                burn_in: 300,
                n_chains: 1,
                thin: 1,
                ..McmcConfig::default()
            },
            band_level: 0.95,
            band_mc: 2000,
            variance_scale: 1.0,
        }
    }
}

/// Result of one scenario over the corpus.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub history_minutes: usize,
    pub target: f64,
    pub zscores: Vec<f64>,
    /// Jobs dropped for a degenerate (zero-spread) predictive law.
    pub excluded: usize,
    pub band: QqBand,
    pub within_band: bool,
}

/// Run every configured scenario over a corpus of *full* traces (each at
/// least `history + horizon` minutes long): update each job on its
/// (possibly censored) history prefix, predict the next window, pick the
/// cap whose mean predicted relative degradation hits the scenario target,
/// and score the realized degradation of the true future as a Z-score
/// within the predictive ensemble.
pub fn calibration_scenarios(
    corpus: &[JobSeries],
    parent: &FixedParent,
    cfg: &CalibrationConfig,
    seed: &SeedTree,
) -> Result<Vec<ScenarioOutcome>> {
    parent.validate()?;
    if corpus.is_empty() {
        return Err(Error::config("calibration needs a nonempty corpus"));
    }
    if !(cfg.variance_scale > 0.0) {
        return Err(Error::config("variance scale must be positive"));
    }
    let max_hist =
        cfg.scenarios.iter().map(|s| s.history_minutes).max().unwrap_or(0);
    for job in corpus {
        if job.n_samples() < max_hist + cfg.horizon {
            return Err(Error::data(format!(
                "job {} has {} minutes; scenarios need {}",
                job.job_id,
                job.n_samples(),
                max_hist + cfg.horizon
            )));
        }
    }

    let mut outcomes = Vec::with_capacity(cfg.scenarios.len());
    for (s_idx, scn) in cfg.scenarios.iter().enumerate() {
        let s_seed = seed.child_idx("scenario", s_idx as u64);
        let mut zscores = Vec::with_capacity(corpus.len());
        let mut excluded = 0usize;
        for (j, job) in corpus.iter().enumerate() {
            let j_seed = s_seed.child_idx("job", j as u64);
            let history = if scn.history_minutes == 0 {
                JobSeries::new(job.job_id.clone(), vec![])
            } else {
                let prefix = job.truncated(scn.history_minutes);
                match cfg.censor_quantile {
                    Some(q) => prefix.censored_at_quantile(q).0,
                    None => prefix,
                }
            };
            let mut update_cfg = cfg.update.clone();
            // distinct, reproducible stream per scenario x job
            update_cfg.seed =
                cfg.update.seed ^ ((s_idx as u64) << 32) ^ (j as u64 + 1);
            let chain = predict::update_job(&history, parent, &update_cfg)?;
            let ens = predict::predict(
                &chain,
                parent,
                cfg.horizon,
                cfg.n_realizations,
                1,
                &j_seed.child("predict"),
            )?;
            let cap = degradation::ensemble_cap_for_target(&ens, cfg.idle_watts, scn.target)?;

            let mut draws: Vec<f64> = ens
                .realizations
                .iter()
                .map(|r| degradation::degradation_bound(r, cap, cfg.idle_watts).map(|b| b.delta_minutes))
                .collect::<Result<_>>()?;
            if cfg.variance_scale != 1.0 {
                let m = crate::stats::mean(&draws);
                let s = cfg.variance_scale.sqrt();
                for d in &mut draws {
                    *d = (m + s * (*d - m)).max(0.0);
                }
            }
            let spread = crate::stats::std_dev(&draws);
            if !(spread > 0.0) {
                excluded += 1;
                continue;
            }

            // realized bound over the true future window (first cage; the
            // calibration corpus is single-cage by construction)
            let future: Vec<f64> = job.replicates[0]
                [scn.history_minutes..scn.history_minutes + cfg.horizon]
                .iter()
                .map(|s| s.watts)
                .collect();
            let realized =
                degradation::degradation_bound(&future, cap, cfg.idle_watts)?.delta_minutes;
            let mut pit_rng = j_seed.child("pit").rng();
            zscores.push(pit_zscore(&draws, realized, &mut pit_rng)?);
        }
        if zscores.is_empty() {
            return Err(Error::numerical(format!(
                "scenario {}min/{:.3} excluded every job",
                scn.history_minutes, scn.target
            )));
        }
        let band = simultaneous_qq_band(
            zscores.len(),
            cfg.band_level,
            cfg.band_mc,
            &s_seed.child("band"),
        )?;
        let within_band = band.contains(&zscores);
        outcomes.push(ScenarioOutcome {
            history_minutes: scn.history_minutes,
            target: scn.target,
            zscores,
            excluded,
            band,
            within_band,
        });
    }
    Ok(outcomes)
}
