//! Machine-wide cap selection under a total power budget.
//!
//! The machine owes its utility a hard ceiling: total draw = job cages +
//! idle cages + machine baseline. Whatever remains after baseline and idle
//! allotments is the job-area budget, split across running jobs as per-cage
//! caps. The naive split is uniform; the statistical strategies move the
//! budget toward jobs whose predicted draw makes capping expensive,
//! minimizing a Monte Carlo estimate of either the cage-weighted mean or
//! the expected maximum of the per-job degradation bounds. The search runs
//! over a positive reparameterization (first coordinate pinned, the rest on
//! the log scale) so every candidate meets the budget identity exactly, and
//! evaluates all candidates on one fixed set of realizations (common random
//! numbers; the max couples realizations by index).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neldermead::{self, NelderMeadConfig};
use crate::predict::PredictiveEnsemble;
use crate::rng::SeedTree;

/// Machine power budget bookkeeping (watts).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Budget {
    /// Contracted ceiling for the whole machine.
    pub total: f64,
    /// Draw of everything that is not a compute cage (cooling, network...).
    pub baseline: f64,
    /// Fixed cap given to each idle cage.
    pub idle_cap: f64,
    pub n_cages: usize,
    pub n_idle: usize,
}

impl Budget {
    /// Watts left for cages that are running jobs.
    pub fn job_budget(&self) -> f64 {
        self.total - self.baseline - self.idle_cap * self.n_idle as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_idle > self.n_cages {
            return Err(Error::config("more idle cages than cages"));
        }
        if !(self.total > self.baseline) || self.idle_cap < 0.0 {
            return Err(Error::config("budget must exceed baseline; idle cap nonnegative"));
        }
        if self.n_idle < self.n_cages && !(self.job_budget() > 0.0) {
            return Err(Error::config(format!(
                "job-area budget {:.1} W is not positive",
                self.job_budget()
            )));
        }
        Ok(())
    }
}

/// Per-job per-cage caps for one planning window.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CapPlan {
    pub job_ids: Vec<String>,
    pub cage_counts: Vec<usize>,
    /// Watts per cage, aligned with `job_ids`.
    pub caps: Vec<f64>,
    pub strategy: String,
    /// Monte Carlo objective value at the returned plan, when optimized.
    pub objective: Option<f64>,
    /// Search hit its evaluation limit before collapsing.
    pub stagnated: bool,
}

impl CapPlan {
    pub fn is_empty(&self) -> bool {
        self.caps.is_empty()
    }

    /// Budget identity to 1e-9 relative, and every cap above the per-cage
    /// idle draw.
    pub fn validate(&self, budget: &Budget, idle_power: f64) -> Result<()> {
        if self.caps.len() != self.job_ids.len() || self.caps.len() != self.cage_counts.len() {
            return Err(Error::config("cap plan fields disagree in length"));
        }
        if self.is_empty() {
            return Ok(());
        }
        let spent: f64 =
            self.caps.iter().zip(&self.cage_counts).map(|(c, &n)| c * n as f64).sum();
        let want = budget.job_budget();
        if (spent - want).abs() > 1e-9 * want.abs().max(1.0) {
            return Err(Error::config(format!(
                "plan spends {spent:.6} W of a {want:.6} W job budget"
            )));
        }
        if self.caps.iter().any(|&c| !(c > idle_power)) {
            return Err(Error::config("every cap must exceed the idle draw"));
        }
        Ok(())
    }
}

fn check_roster(cage_counts: &[usize], budget: &Budget) -> Result<()> {
    budget.validate()?;
    let running: usize = cage_counts.iter().sum();
    if running + budget.n_idle != budget.n_cages {
        return Err(Error::config(format!(
            "roster occupies {running} cages but budget says {} running",
            budget.n_cages - budget.n_idle
        )));
    }
    if cage_counts.iter().any(|&n| n == 0) {
        return Err(Error::config("every job occupies at least one cage"));
    }
    Ok(())
}

/// Uniform per-cage cap: the job-area budget split evenly over running
/// cages. An all-idle machine returns an empty plan.
pub fn naive_caps(jobs: &[(String, usize)], budget: &Budget) -> Result<CapPlan> {
    budget.validate()?;
    if jobs.is_empty() {
        if budget.n_idle != budget.n_cages {
            return Err(Error::config("no jobs given but budget reports running cages"));
        }
        return Ok(CapPlan {
            job_ids: vec![],
            cage_counts: vec![],
            caps: vec![],
            strategy: "naive".into(),
            objective: None,
            stagnated: false,
        });
    }
    let cage_counts: Vec<usize> = jobs.iter().map(|(_, n)| *n).collect();
    check_roster(&cage_counts, budget)?;
    let running: usize = cage_counts.iter().sum();
    let cap = budget.job_budget() / running as f64;
    Ok(CapPlan {
        job_ids: jobs.iter().map(|(id, _)| id.clone()).collect(),
        caps: vec![cap; jobs.len()],
        cage_counts,
        strategy: "naive".into(),
        objective: None,
        stagnated: false,
    })
}

/// Scale a positive unconstrained vector onto the budget surface:
/// caps = c_star * job_budget / sum(c_star_j * cages_j). Scale-invariant in
/// `c_star` and exact by construction.
pub fn reparameterize(c_star: &[f64], cage_counts: &[usize], budget: &Budget) -> Result<Vec<f64>> {
    if c_star.len() != cage_counts.len() || c_star.is_empty() {
        return Err(Error::config("reparameterize needs matching nonempty vectors"));
    }
    if c_star.iter().any(|&c| !(c > 0.0) || !c.is_finite()) {
        return Err(Error::config("reparameterization requires positive entries"));
    }
    let weighted: f64 = c_star.iter().zip(cage_counts).map(|(c, &n)| c * n as f64).sum();
    let scale = budget.job_budget() / weighted;
    Ok(c_star.iter().map(|&c| c * scale).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Cage-weighted mean of per-job expected degradation.
    WeightedMean,
    /// Expected (over realizations) maximum per-job degradation.
    ExpectedMax,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeConfig {
    pub n_starts: usize,
    /// 0 = scale with dimension.
    pub max_evals: usize,
    /// Caps below idle + headroom are penalized away (the bound diverges at
    /// the idle draw).
    pub min_headroom: f64,
    pub seed: u64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig { n_starts: 5, max_evals: 0, min_headroom: 10.0, seed: 0 }
    }
}

struct CapObjective<'a> {
    traces: Vec<&'a [Vec<f64>]>,
    cage_counts: Vec<usize>,
    horizons: Vec<f64>,
    idle: f64,
    kind: Objective,
    floor: f64,
    n_real: usize,
}

impl CapObjective<'_> {
    /// Monte Carlo objective; candidates violating the cap floor get a
    /// graded penalty so the simplex is pushed back, never an error.
    fn eval(&self, caps: &[f64]) -> f64 {
        let mut deficit = 0.0;
        for &c in caps {
            if c < self.floor {
                deficit += self.floor - c;
            }
        }
        if deficit > 0.0 {
            return 1e9 + deficit;
        }
        match self.kind {
            Objective::WeightedMean => {
                let mut num = 0.0;
                let mut den = 0.0;
                for (j, traces) in self.traces.iter().enumerate() {
                    let band = caps[j] - self.idle;
                    let mut mean_rel = 0.0;
                    for r in traces.iter() {
                        let excess: f64 = r.iter().map(|&p| (p - caps[j]).max(0.0)).sum();
                        mean_rel += excess / band / self.horizons[j];
                    }
                    mean_rel /= self.n_real as f64;
                    num += self.cage_counts[j] as f64 * mean_rel;
                    den += self.cage_counts[j] as f64;
                }
                num / den
            }
            Objective::ExpectedMax => {
                let mut acc = 0.0;
                for r in 0..self.n_real {
                    let mut worst = 0.0f64;
                    for (j, traces) in self.traces.iter().enumerate() {
                        let band = caps[j] - self.idle;
                        let excess: f64 =
                            traces[r].iter().map(|&p| (p - caps[j]).max(0.0)).sum();
                        worst = worst.max(excess / band / self.horizons[j]);
                    }
                    acc += worst;
                }
                acc / self.n_real as f64
            }
        }
    }
}

/// Optimize per-job caps against predictive ensembles. The search space is
/// the (J-1)-dimensional log reparameterization (first job pinned at 1);
/// multiple starts - the uniform plan plus random perturbations - guard
/// against the noisy, nonconvex Monte Carlo surface. The returned plan
/// never does worse than the uniform split on the same ensembles.
pub fn optimize_caps(
    ensembles: &[&PredictiveEnsemble],
    budget: &Budget,
    objective: Objective,
    idle_power: f64,
    cfg: &OptimizeConfig,
) -> Result<CapPlan> {
    if ensembles.is_empty() {
        return Err(Error::config("cap optimization needs at least one ensemble"));
    }
    for e in ensembles {
        e.validate()?;
    }
    let n_real = ensembles[0].n_realizations();
    if ensembles.iter().any(|e| e.n_realizations() != n_real) {
        return Err(Error::config("ensembles must share a realization count"));
    }
    let cage_counts: Vec<usize> = ensembles.iter().map(|e| e.n_cages).collect();
    check_roster(&cage_counts, budget)?;
    if !(idle_power >= 0.0) {
        return Err(Error::config("idle power must be nonnegative"));
    }
    let strategy = match objective {
        Objective::WeightedMean => "weighted_mean",
        Objective::ExpectedMax => "expected_max",
    };

    let obj = CapObjective {
        traces: ensembles.iter().map(|e| e.realizations.as_slice()).collect(),
        cage_counts: cage_counts.clone(),
        horizons: ensembles.iter().map(|e| e.horizon as f64).collect(),
        idle: idle_power,
        kind: objective,
        floor: idle_power + cfg.min_headroom,
        n_real,
    };
    let job_ids: Vec<String> = ensembles.iter().map(|e| e.job_id.clone()).collect();

    let j = ensembles.len();
    if j == 1 {
        let caps = reparameterize(&[1.0], &cage_counts, budget)?;
        let value = obj.eval(&caps);
        let plan = CapPlan {
            job_ids,
            cage_counts,
            caps,
            strategy: strategy.into(),
            objective: Some(value),
            stagnated: false,
        };
        plan.validate(budget, idle_power)?;
        return Ok(plan);
    }

    let theta_to_caps = |theta: &[f64]| -> Result<Vec<f64>> {
        let mut c_star = Vec::with_capacity(j);
        c_star.push(1.0);
        c_star.extend(theta.iter().map(|t| t.clamp(-30.0, 30.0).exp()));
        reparameterize(&c_star, &cage_counts, budget)
    };
    let nm_cfg = NelderMeadConfig {
        max_evals: if cfg.max_evals > 0 { cfg.max_evals } else { (400 * j).max(2000) },
        x_tol: 1e-6,
        f_tol: 1e-10,
        initial_step: 0.25,
    };
    let seed = SeedTree::from_master(cfg.seed).child("optimize-caps");
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for s in 0..cfg.n_starts.max(1) {
        let theta0: Vec<f64> = if s == 0 {
            vec![0.0; j - 1] // the uniform plan
        } else {
            let mut rng = seed.child_idx("start", s as u64).rng();
            (0..j - 1)
                .map(|_| 0.5 * rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect()
        };
        let res = neldermead::minimize(
            |th| match theta_to_caps(th) {
                Ok(caps) => obj.eval(&caps),
                Err(_) => f64::INFINITY,
            },
            &theta0,
            &nm_cfg,
        );
        if best.as_ref().map_or(true, |(_, f, _)| res.f < *f) {
            best = Some((res.x, res.f, !res.converged));
        }
    }
    let (theta, value, stagnated) = best.expect("at least one start ran");
    let caps = theta_to_caps(&theta)?;
    let plan = CapPlan {
        job_ids,
        cage_counts,
        caps,
        strategy: strategy.into(),
        objective: Some(value),
        stagnated,
    };
    plan.validate(budget, idle_power)?;
    Ok(plan)
}

/// Evaluate an existing plan's Monte Carlo objective on ensembles (used to
/// score the naive plan on the same footing as optimized ones).
pub fn plan_objective(
    plan: &CapPlan,
    ensembles: &[&PredictiveEnsemble],
    objective: Objective,
    idle_power: f64,
) -> Result<f64> {
    if plan.caps.len() != ensembles.len() {
        return Err(Error::config("plan and ensembles disagree in job count"));
    }
    let n_real = ensembles.first().map(|e| e.n_realizations()).unwrap_or(0);
    let obj = CapObjective {
        traces: ensembles.iter().map(|e| e.realizations.as_slice()).collect(),
        cage_counts: plan.cage_counts.clone(),
        horizons: ensembles.iter().map(|e| e.horizon as f64).collect(),
        idle: idle_power,
        kind: objective,
        floor: idle_power,
        n_real,
    };
    Ok(obj.eval(&plan.caps))
}
