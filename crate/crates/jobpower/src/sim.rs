//! Synthetic machine studies: a fixture parent, corpus generation, queue
//! replay to steady state, and head-to-head evaluation of cap strategies.
//!
//! The fixture parent is a handcrafted population law on the cage-kilowatt
//! scale; corpora drawn from it provide templates (full power traces with
//! known generator) for everything downstream. The queue replay drives a
//! machine with head-of-line admission until the running mix forgets its
//! empty start, then snapshots mixes of (template, elapsed) pairs. For each
//! mix, the evaluator gives every strategy the same censored histories and
//! the same budget (a fixed fraction of the mix's true near-future demand),
//! lets each pick per-job caps, and scores the caps against the true future
//! the templates actually contain.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::caps::{naive_caps, optimize_caps, Budget, CapPlan, Objective, OptimizeConfig};
use crate::dist;
use crate::error::{Error, Result};
use crate::mcmc::McmcConfig;
use crate::mixfit::NormalMixture;
use crate::model::{sample_job_from_parent, simulate_job, JobSeries};
use crate::pragmatic::{predict_pragmatic, update_job_pragmatic, EmpiricalParent};
use crate::predict::{predict, update_job, FixedParent, PredictiveEnsemble};
use crate::rng::SeedTree;

/// Handcrafted population law for simulation studies. Regime means live
/// between roughly 1.2 and 3.9 kW per cage, drift has an 80 W marginal
/// scale with strong minute-to-minute memory, regimes dwell ~20 minutes,
/// and the meter adds 40 W of noise.
pub fn fixture_parent() -> FixedParent {
    FixedParent {
        mu_sigma: 6400.0f64.ln(),
        sigma2_sigma: 0.25,
        mu_rho: -3.0,
        sigma2_rho: 0.25,
        alpha_lambda: 1.2,
        beta_lambda: 20.0,
        delta: 1.5,
        tau2: 1600.0,
        mu_mixture: NormalMixture {
            weights: vec![0.10, 0.20, 0.25, 0.20, 0.15, 0.10],
            means: vec![1200.0, 1600.0, 2200.0, 2800.0, 3300.0, 3900.0],
            sds: vec![120.0, 150.0, 180.0, 200.0, 220.0, 250.0],
        },
        k_regimes: 4,
        source: "FIXTURE_PARENT_V1".into(),
        fit_residual: 0.0,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_jobs: usize,
    /// Durations are log-uniform on [min_minutes, max_minutes).
    pub min_minutes: usize,
    pub max_minutes: usize,
    /// Cage counts are drawn from 1..=max_cages with weight 1/c, matching
    /// the small-job-heavy shape of real schedules.
    pub max_cages: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { n_jobs: 200, min_minutes: 10, max_minutes: 601, max_cages: 12, seed: 0 }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_jobs == 0 || self.max_cages == 0 {
            return Err(Error::config("corpus needs jobs and cages"));
        }
        if self.min_minutes < 2 || self.min_minutes >= self.max_minutes {
            return Err(Error::config("corpus duration range must satisfy 2 <= min < max"));
        }
        Ok(())
    }
}

/// Draw a corpus of complete job traces from a frozen parent. Each job gets
/// its own parameters from the parent law, a log-uniform duration, and a
/// small-biased cage count; replicate cages share parameters but draw
/// independent paths.
pub fn synthetic_corpus(parent: &FixedParent, cfg: &CorpusConfig) -> Result<Vec<JobSeries>> {
    parent.validate()?;
    cfg.validate()?;
    let pp = parent.to_parent_params();
    let cage_weights: Vec<f64> = (1..=cfg.max_cages).map(|c| 1.0 / c as f64).collect();
    let seed = SeedTree::from_master(cfg.seed).child("corpus");
    let ln_lo = (cfg.min_minutes as f64).ln();
    let ln_hi = (cfg.max_minutes as f64).ln();

    let mut corpus = Vec::with_capacity(cfg.n_jobs);
    for i in 0..cfg.n_jobs {
        let mut rng = seed.child_idx("job", i as u64).rng();
        let u: f64 = rng.random();
        let minutes = ((ln_lo + u * (ln_hi - ln_lo)).exp().floor() as usize)
            .clamp(cfg.min_minutes, cfg.max_minutes - 1);
        let cages = 1 + dist::sample_categorical(&cage_weights, &mut rng)?;
        let params = sample_job_from_parent(&pp, parent.k_regimes, &mut rng)?;
        let sim = simulate_job(&params, &pp, minutes, cages, &seed.child_idx("trace", i as u64))?;
        let mut series = sim.series;
        series.job_id = format!("job{i:03}");
        corpus.push(series);
    }
    Ok(corpus)
}

/// Physical machine description for queue replay and budget synthesis.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MachineConfig {
    pub n_cages: usize,
    /// Contracted machine ceiling (watts).
    pub total_watts: f64,
    /// Non-cage overhead draw (watts).
    pub baseline_watts: f64,
    /// Cap handed to each idle cage (watts).
    pub idle_cap_watts: f64,
    /// Draw of a fully throttled cage; degradation denominators measure
    /// headroom above this (watts).
    pub idle_draw_watts: f64,
    /// Planning window: caps are chosen for this many minutes ahead.
    pub window_minutes: usize,
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig {
            n_cages: 154,
            total_watts: 575_000.0,
            baseline_watts: 56_500.0,
            idle_cap_watts: 1_200.0,
            idle_draw_watts: 400.0,
            window_minutes: 5,
        }
    }
}

impl MachineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cages == 0 || self.window_minutes == 0 {
            return Err(Error::config("machine needs cages and a planning window"));
        }
        if !(self.total_watts > self.baseline_watts)
            || self.idle_cap_watts < 0.0
            || self.idle_draw_watts < 0.0
        {
            return Err(Error::config("machine wattage fields are inconsistent"));
        }
        Ok(())
    }
}

/// One job running at a snapshot: which template it is an instance of, how
/// many cages it holds, and how long it has been running.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunningJob {
    pub template: usize,
    pub cages: usize,
    pub elapsed: usize,
}

/// Snapshot of the running mix at one completion event.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mix {
    pub minute: u64,
    pub jobs: Vec<RunningJob>,
}

/// Replay an infinite queue of template instances through the machine:
/// head-of-line admission (the head waits until it fits; nothing overtakes
/// it), completions free cages, and the mix is snapshotted after every
/// post-warmup completion. Returns `n_mixes` evenly spaced snapshots.
pub fn run_queue_to_steady_state(
    templates: &[JobSeries],
    machine: &MachineConfig,
    n_mixes: usize,
    completions: usize,
    seed: &SeedTree,
) -> Result<Vec<Mix>> {
    machine.validate()?;
    if templates.is_empty() || n_mixes == 0 || completions == 0 {
        return Err(Error::config("queue replay needs templates, mixes, completions"));
    }
    for t in templates {
        if t.n_cages() == 0 || t.replicates[0].is_empty() {
            return Err(Error::config(format!("template {} is empty", t.job_id)));
        }
        if t.n_cages() > machine.n_cages {
            return Err(Error::config(format!(
                "template {} needs {} cages but the machine has {}",
                t.job_id,
                t.n_cages(),
                machine.n_cages
            )));
        }
    }

    struct Active {
        template: usize,
        cages: usize,
        start: u64,
        end: u64,
    }
    let mut rng = seed.child("queue").rng();
    let draw_head = |rng: &mut rand_chacha::ChaCha12Rng| rng.random_range(0..templates.len());
    let mut head = draw_head(&mut rng);
    let mut running: Vec<Active> = Vec::new();
    let mut free = machine.n_cages;
    let mut now = 0u64;
    let mut done = 0usize;
    let warmup = completions / 5;
    let mut snapshots: Vec<Mix> = Vec::new();

    let admit = |now: u64,
                     free: &mut usize,
                     head: &mut usize,
                     running: &mut Vec<Active>,
                     rng: &mut rand_chacha::ChaCha12Rng| {
        loop {
            let cages = templates[*head].n_cages();
            if cages > *free {
                break;
            }
            let minutes = templates[*head].replicates[0].len() as u64;
            running.push(Active { template: *head, cages, start: now, end: now + minutes });
            *free -= cages;
            *head = draw_head(rng);
        }
    };

    admit(now, &mut free, &mut head, &mut running, &mut rng);
    while done < completions {
        let next_end = running
            .iter()
            .map(|a| a.end)
            .min()
            .ok_or_else(|| Error::config("queue head never fits an empty machine"))?;
        now = next_end;
        running.retain(|a| {
            if a.end == now {
                free += a.cages;
                done += 1;
                false
            } else {
                true
            }
        });
        admit(now, &mut free, &mut head, &mut running, &mut rng);
        if done > warmup && !running.is_empty() {
            snapshots.push(Mix {
                minute: now,
                jobs: running
                    .iter()
                    .map(|a| RunningJob {
                        template: a.template,
                        cages: a.cages,
                        elapsed: (now - a.start) as usize,
                    })
                    .collect(),
            });
        }
    }
    if snapshots.len() < n_mixes {
        return Err(Error::config(format!(
            "only {} post-warmup snapshots for {} requested mixes; raise completions",
            snapshots.len(),
            n_mixes
        )));
    }
    let step = snapshots.len() as f64 / n_mixes as f64;
    Ok((0..n_mixes).map(|i| snapshots[(i as f64 * step) as usize].clone()).collect())
}

/// Strategy order used by every score array.
pub const STRATEGY_NAMES: [&str; 5] =
    ["naive", "bayes_mean", "bayes_max", "pragmatic_mean", "pragmatic_max"];

/// Realized degradation of one mix under each strategy's caps.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixScores {
    pub minute: u64,
    pub n_jobs: usize,
    pub job_budget: f64,
    /// Cage-weighted mean realized degradation, in `STRATEGY_NAMES` order.
    pub weighted: [f64; 5],
    /// Worst single-job realized degradation, same order.
    pub worst: [f64; 5],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    /// Budget as a fraction of the mix's true near-future demand; below 1
    /// forces real contention.
    pub demand_fraction: f64,
    /// Predictive ensemble size per job.
    pub n_realizations: usize,
    /// Histories are censored at this empirical quantile of their own past,
    /// mimicking a monitoring cap in force while they ran.
    pub censor_quantile: Option<f64>,
    /// Job-update settings for the full posterior strategies (single chain).
    pub update: McmcConfig,
    pub marginal_independence: bool,
    pub optimize: OptimizeConfig,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            demand_fraction: 0.7,
            n_realizations: 200,
            censor_quantile: Some(0.95),
            update: McmcConfig {
                n_iterations: 600,
                burn_in: 200,
                n_chains: 1,
                ..McmcConfig::default()
            },
            marginal_independence: false,
            optimize: OptimizeConfig::default(),
        }
    }
}

struct MixJob {
    id: String,
    cages: usize,
    history: JobSeries,
    /// True per-cage traces over the scoring window.
    future: Vec<Vec<f64>>,
    window: usize,
}

impl MixJob {
    /// Mean across cages of the per-cage relative degradation bound over
    /// the true future window.
    fn realized_degradation(&self, cap: f64, idle: f64) -> f64 {
        let mut acc = 0.0;
        for cage in &self.future {
            let excess: f64 = cage.iter().map(|&p| (p - cap).max(0.0)).sum();
            acc += excess / (cap - idle) / self.window as f64;
        }
        acc / self.future.len() as f64
    }
}

fn score_plan(plan: &CapPlan, jobs: &[MixJob], idle: f64) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut worst = 0.0f64;
    for (job, &cap) in jobs.iter().zip(&plan.caps) {
        let d = job.realized_degradation(cap, idle);
        num += job.cages as f64 * d;
        den += job.cages as f64;
        worst = worst.max(d);
    }
    (num / den, worst)
}

/// Score all five strategies on one mix. Every strategy sees the same
/// censored histories and the same budget (a fraction of the true demand
/// over the next window); the full-posterior strategies share one chain per
/// job and the pragmatic strategies share one weight vector per job, so
/// the mean/max variants differ only in their objective.
pub fn evaluate_mix(
    templates: &[JobSeries],
    mix: &Mix,
    machine: &MachineConfig,
    bayes_parent: &FixedParent,
    pragmatic_parent: &EmpiricalParent,
    cfg: &StrategyConfig,
    seed: &SeedTree,
) -> Result<MixScores> {
    machine.validate()?;
    if mix.jobs.is_empty() {
        return Err(Error::config("cannot evaluate an empty mix"));
    }
    if !(cfg.demand_fraction > 0.0) {
        return Err(Error::config("demand fraction must be positive"));
    }

    // Assemble per-job histories and true futures.
    let mut jobs = Vec::with_capacity(mix.jobs.len());
    let mut demand = 0.0;
    for (slot, rj) in mix.jobs.iter().enumerate() {
        let template = templates
            .get(rj.template)
            .ok_or_else(|| Error::config(format!("mix references template {}", rj.template)))?;
        let duration = template.replicates[0].len();
        if rj.elapsed >= duration {
            return Err(Error::config(format!(
                "mix job {slot} has elapsed {} of a {duration} minute template",
                rj.elapsed
            )));
        }
        let id = format!("t{}s{slot}", rj.template);
        let window = machine.window_minutes.min(duration - rj.elapsed);
        let future: Vec<Vec<f64>> = template
            .replicates
            .iter()
            .map(|r| r[rj.elapsed..rj.elapsed + window].iter().map(|s| s.watts).collect())
            .collect();
        demand +=
            future.iter().flatten().sum::<f64>() / window as f64;
        let history = if rj.elapsed == 0 {
            JobSeries::new(id.clone(), vec![])
        } else {
            let mut h = template.truncated(rj.elapsed);
            h.job_id = id.clone();
            match cfg.censor_quantile {
                Some(q) => h.censored_at_quantile(q).0,
                None => h,
            }
        };
        jobs.push(MixJob { id, cages: rj.cages, history, future, window });
    }

    let running: usize = jobs.iter().map(|j| j.cages).sum();
    if running > machine.n_cages {
        return Err(Error::config("mix occupies more cages than the machine has"));
    }
    let n_idle = machine.n_cages - running;
    let job_budget = cfg.demand_fraction * demand;
    let budget = Budget {
        total: job_budget
            + machine.baseline_watts
            + machine.idle_cap_watts * n_idle as f64,
        baseline: machine.baseline_watts,
        idle_cap: machine.idle_cap_watts,
        n_cages: machine.n_cages,
        n_idle,
    };
    let idle = machine.idle_draw_watts;
    let floor = idle + cfg.optimize.min_headroom;
    if job_budget / running as f64 <= floor {
        return Err(Error::config(format!(
            "budget allows only {:.0} W per cage, below the {floor:.0} W floor",
            job_budget / running as f64
        )));
    }

    // Per-job predictive ensembles for both model families.
    let mut bayes_ens = Vec::with_capacity(jobs.len());
    let mut prag_ens = Vec::with_capacity(jobs.len());
    for (j, job) in jobs.iter().enumerate() {
        let job_seed = seed.child_idx("job", j as u64);
        let mut ucfg = cfg.update.clone();
        ucfg.seed = job_seed.child("update-seed").rng().random();
        let chain = update_job(&job.history, bayes_parent, &ucfg)?;
        bayes_ens.push(predict(
            &chain,
            bayes_parent,
            job.window,
            cfg.n_realizations,
            job.cages,
            &job_seed.child("predict-bayes"),
        )?);

        let weights =
            update_job_pragmatic(&job.history, pragmatic_parent, cfg.marginal_independence)?;
        let history = if job.history.is_empty() { None } else { Some(&job.history) };
        prag_ens.push(predict_pragmatic(
            &weights,
            pragmatic_parent,
            history,
            job.window,
            cfg.n_realizations,
            job.cages,
            cfg.marginal_independence,
            &job_seed.child("predict-pragmatic"),
        )?);
    }

    // Five plans on the shared budget.
    let roster: Vec<(String, usize)> = jobs.iter().map(|j| (j.id.clone(), j.cages)).collect();
    let naive = naive_caps(&roster, &budget)?;
    let b_refs: Vec<&PredictiveEnsemble> = bayes_ens.iter().collect();
    let p_refs: Vec<&PredictiveEnsemble> = prag_ens.iter().collect();
    let plans = [
        naive,
        optimize_caps(&b_refs, &budget, Objective::WeightedMean, idle, &cfg.optimize)?,
        optimize_caps(&b_refs, &budget, Objective::ExpectedMax, idle, &cfg.optimize)?,
        optimize_caps(&p_refs, &budget, Objective::WeightedMean, idle, &cfg.optimize)?,
        optimize_caps(&p_refs, &budget, Objective::ExpectedMax, idle, &cfg.optimize)?,
    ];

    let mut weighted = [0.0f64; 5];
    let mut worst = [0.0f64; 5];
    for (s, plan) in plans.iter().enumerate() {
        let (w, m) = score_plan(plan, &jobs, idle);
        weighted[s] = w;
        worst[s] = m;
    }
    Ok(MixScores { minute: mix.minute, n_jobs: jobs.len(), job_budget, weighted, worst })
}

/// Evaluate every mix; seed children keep mixes independent and the whole
/// sweep reproducible.
pub fn evaluate_strategies(
    templates: &[JobSeries],
    mixes: &[Mix],
    machine: &MachineConfig,
    bayes_parent: &FixedParent,
    pragmatic_parent: &EmpiricalParent,
    cfg: &StrategyConfig,
    seed: &SeedTree,
) -> Result<Vec<MixScores>> {
    mixes
        .iter()
        .enumerate()
        .map(|(m, mix)| {
            evaluate_mix(
                templates,
                mix,
                machine,
                bayes_parent,
                pragmatic_parent,
                cfg,
                &seed.child_idx("mix", m as u64),
            )
        })
        .collect()
}
