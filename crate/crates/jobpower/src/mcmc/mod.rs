//! Posterior sampling of the full hierarchy from a corpus of job traces.
//!
//! One iteration sweeps every job's latent paths and parameters (in parallel
//! across jobs) and then the parent. Randomness is drawn from labeled
//! streams keyed by (master seed, chain, job, iteration), so the schedule -
//! sequential, parallel, or resumed from a checkpoint - never changes the
//! numbers.

pub mod job;
pub mod parent;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HyperPriors, JobParams, JobSeries, ParentParams};
use crate::rng::SeedTree;
use crate::stats;

pub use job::{AcceptanceStats, JobPrior, JobState};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct McmcConfig {
    pub n_iterations: usize,
    pub burn_in: usize,
    pub n_chains: usize,
    /// Keep every `thin`-th post-burn-in draw.
    pub thin: usize,
    /// Variance of the log-scale random-walk step for rho.
    pub rho_rw_scale: f64,
    /// Variance of the log-scale random-walk steps for the rate-law shapes.
    pub alpha_lambda_rw_scale: f64,
    pub beta_lambda_rw_scale: f64,
    pub seed: u64,
    /// Keep per-job parameter draws in the samples (memory scales with
    /// corpus size x chain length; parent draws are always kept).
    pub store_job_params: bool,
    /// Diagnostic switch: drop all observation terms so the sampler targets
    /// the prior. Used by the invariance test suite.
    pub flatten_likelihood: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n_iterations: 10_000,
            burn_in: 2_000,
            n_chains: 5,
            thin: 1,
            rho_rw_scale: 0.25,
            alpha_lambda_rw_scale: 0.01,
            beta_lambda_rw_scale: 0.01,
            seed: 0,
            store_job_params: true,
            flatten_likelihood: false,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iterations == 0 || self.n_chains == 0 {
            return Err(Error::config("n_iterations and n_chains must be positive"));
        }
        if self.burn_in >= self.n_iterations {
            return Err(Error::config(format!(
                "burn_in ({}) must be below n_iterations ({})",
                self.burn_in, self.n_iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::config("thin must be at least 1"));
        }
        for (name, v) in [
            ("rho_rw_scale", self.rho_rw_scale),
            ("alpha_lambda_rw_scale", self.alpha_lambda_rw_scale),
            ("beta_lambda_rw_scale", self.beta_lambda_rw_scale),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// One retained draw of the hierarchy. `jobs` follows corpus order and is
/// empty unless the run stored per-job parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub iteration: usize,
    pub parent: ParentParams,
    pub jobs: Vec<JobParams>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainRun {
    pub chain_index: usize,
    pub samples: Vec<PosteriorSample>,
    pub acceptance: AcceptanceStats,
}

/// Complete sampler state at an iteration boundary. Together with the master
/// seed this determines the rest of the chain exactly, because per-iteration
/// random streams are derived from (seed, chain, job, iteration) and never
/// from a running generator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct McmcCheckpoint {
    pub schema_version: u32,
    pub chain_index: usize,
    /// Iterations completed so far.
    pub iteration: usize,
    pub seed: u64,
    pub parent: ParentParams,
    pub job_ids: Vec<String>,
    pub jobs: Vec<JobParams>,
    /// Working observation copies (censored entries hold imputed values).
    pub imputed: Vec<Vec<Vec<f64>>>,
    pub acceptance: AcceptanceStats,
}

impl JobPrior {
    pub fn from_parent(p: &ParentParams) -> Self {
        JobPrior {
            alpha_lambda: p.alpha_lambda,
            beta_lambda: p.beta_lambda,
            delta: p.delta,
            omega: p.omega(),
            nu: p.nu.clone(),
            varsigma2: p.varsigma2.clone(),
            mu_sigma: p.mu_sigma,
            sigma2_sigma: p.sigma2_sigma,
            mu_rho: p.mu_rho,
            sigma2_rho: p.sigma2_rho,
            tau2: p.tau2,
        }
    }
}

/// Deterministic data-informed initialization of the parent, with mild
/// chain-specific jitter so multiple chains start overdispersed.
fn init_parent(corpus: &[JobSeries], h: &HyperPriors, chain_rng: &mut rand_chacha::ChaCha12Rng) -> ParentParams {
    use rand::Rng;
    let pooled: Vec<f64> = corpus.iter().flat_map(|s| s.pooled_watts()).collect();
    let (lo_q, hi_q, sd) = if pooled.is_empty() {
        (0.0, 1.0, 1.0)
    } else {
        (
            stats::quantile(&pooled, 0.01),
            stats::quantile(&pooled, 0.99),
            stats::std_dev(&pooled).max(1e-3),
        )
    };
    let m = h.m_components;
    // uniform mixture weights: u_m = 1/(M - m) makes every omega equal
    let u: Vec<f64> = (0..m - 1).map(|i| 1.0 / (m - i) as f64).collect();
    let jitter = |rng: &mut rand_chacha::ChaCha12Rng, scale: f64| -> f64 {
        scale * rng.sample::<f64, _>(rand_distr::StandardNormal)
    };
    let nu: Vec<f64> = (0..m)
        .map(|i| {
            let q = (i as f64 + 0.5) / m as f64;
            lo_q + q * (hi_q - lo_q) + jitter(chain_rng, sd / (2.0 * m as f64))
        })
        .collect();
    let varsigma2 = vec![(sd / 2.0).powi(2).max(1.0); m];
    let global_var = sd * sd;
    ParentParams {
        mu_sigma: (0.25 * global_var).max(1e-3).ln() + jitter(chain_rng, 0.2),
        sigma2_sigma: if h.a_sigma > 1.0 { h.b_sigma / (h.a_sigma - 1.0) } else { 1.0 },
        mu_rho: h.m_rho + jitter(chain_rng, 0.3),
        sigma2_rho: if h.a_rho > 1.0 { h.b_rho / (h.a_rho - 1.0) } else { 1.0 },
        u,
        nu,
        varsigma2,
        alpha_lambda: (1.0 + jitter(chain_rng, 0.1)).clamp(0.5, 2.0),
        beta_lambda: (10.0 + jitter(chain_rng, 1.0)).clamp(5.0, 20.0),
        gamma: 1.0,
        delta: 1.0,
        tau2: (0.05 * global_var).max(1e-3),
    }
}

/// Deterministic initialization of one job's state: regime means at the
/// job's own quantiles, path by nearest level, drift at zero.
pub(crate) fn init_job(series: &JobSeries, parent: &ParentParams, k_regimes: usize, chain_rng: &mut rand_chacha::ChaCha12Rng) -> JobState {
    use rand::Rng;
    let watts = series.pooled_watts();
    let spread = if watts.is_empty() { 1.0 } else { stats::std_dev(&watts).max(1e-3) };
    let mu: Vec<f64> = (0..k_regimes)
        .map(|k| {
            let q = (k as f64 + 0.5) / k_regimes as f64;
            let base = if watts.is_empty() { parent.nu[0] } else { stats::quantile(&watts, q) };
            base + spread / (4.0 * k_regimes as f64)
                * chain_rng.sample::<f64, _>(rand_distr::StandardNormal)
        })
        .collect();
    let psi: Vec<usize> = mu
        .iter()
        .map(|&m| {
            parent
                .nu
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    (a.1 - m).abs().partial_cmp(&(b.1 - m).abs()).expect("finite")
                })
                .map(|(i, _)| i)
                .unwrap_or(0)
        })
        .collect();
    let mut xi = Vec::new();
    let mut phi = Vec::new();
    let mut z = Vec::new();
    let mut x = Vec::new();
    for rep in &series.replicates {
        let path: Vec<usize> = rep
            .iter()
            .map(|s| {
                mu.iter()
                    .enumerate()
                    .min_by(|a, b| {
                        (a.1 - s.watts).abs().partial_cmp(&(b.1 - s.watts).abs()).expect("finite")
                    })
                    .map(|(i, _)| i)
                    .unwrap_or(0)
            })
            .collect();
        let flags: Vec<bool> =
            (0..path.len()).map(|t| t == 0 || path[t] != path[t - 1]).collect();
        xi.push(path);
        phi.push(flags);
        z.push(vec![0.0; rep.len()]);
        x.push(rep.iter().map(|s| s.watts).collect());
    }
    let params = JobParams {
        lambda: vec![0.1; k_regimes],
        v: (0..k_regimes - 1).map(|i| 1.0 / (k_regimes - i) as f64).collect(),
        mu,
        psi,
        sigma2: (0.25 * spread * spread).max(1e-3),
        rho: parent.mu_rho.exp().clamp(1e-4, 10.0),
        xi,
        phi,
        z,
    };
    JobState { params, x }
}

fn collect_sample(
    iteration: usize,
    parent: &ParentParams,
    states: &[JobState],
    store_jobs: bool,
) -> PosteriorSample {
    PosteriorSample {
        iteration,
        parent: parent.clone(),
        jobs: if store_jobs {
            states.iter().map(|s| s.params.clone()).collect()
        } else {
            Vec::new()
        },
    }
}

/// Run (or resume) one chain up to `stop_at` iterations (defaults to the
/// configured total). Returns the retained samples from the executed span
/// plus a checkpoint at the stopping point.
pub fn run_chain_segment(
    corpus: &[JobSeries],
    h: &HyperPriors,
    cfg: &McmcConfig,
    chain_index: usize,
    start: Option<&McmcCheckpoint>,
    stop_at: Option<usize>,
) -> Result<(ChainRun, McmcCheckpoint)> {
    cfg.validate()?;
    h.validate()?;
    if corpus.is_empty() {
        return Err(Error::config("corpus must contain at least one job series"));
    }
    for s in corpus {
        s.validate()?;
    }
    let master = SeedTree::from_master(cfg.seed);
    let chain_seed = master.child_idx("chain", chain_index as u64);
    let mut init_rng = chain_seed.child("init").rng();

    let (mut parent, mut states, mut acc, start_iter) = match start {
        Some(ck) => {
            if ck.jobs.len() != corpus.len() {
                return Err(Error::config(format!(
                    "checkpoint holds {} jobs, corpus has {}",
                    ck.jobs.len(),
                    corpus.len()
                )));
            }
            if ck.seed != cfg.seed || ck.chain_index != chain_index {
                return Err(Error::config(
                    "checkpoint seed/chain does not match the requested run",
                ));
            }
            let states: Vec<JobState> = ck
                .jobs
                .iter()
                .zip(&ck.imputed)
                .map(|(p, x)| JobState { params: p.clone(), x: x.clone() })
                .collect();
            (ck.parent.clone(), states, ck.acceptance, ck.iteration)
        }
        None => {
            let parent = init_parent(corpus, h, &mut init_rng);
            let states: Vec<JobState> = corpus
                .iter()
                .map(|s| init_job(s, &parent, h.k_regimes, &mut init_rng))
                .collect();
            (parent, states, AcceptanceStats::default(), 0)
        }
    };

    let stop = stop_at.unwrap_or(cfg.n_iterations).min(cfg.n_iterations);
    let include_data = !cfg.flatten_likelihood;
    let mut samples = Vec::new();
    for iter in start_iter..stop {
        let prior = JobPrior::from_parent(&parent);
        // job sweeps own independent streams: parallel == sequential
        let sweep_results: Vec<Result<AcceptanceStats>> = states
            .par_iter_mut()
            .enumerate()
            .map(|(j, st)| {
                let mut rng =
                    chain_seed.child_idx("job", j as u64).child_idx("iter", iter as u64).rng();
                let mut local_acc = AcceptanceStats::default();
                job::job_sweep(
                    st,
                    &corpus[j],
                    &prior,
                    include_data,
                    cfg.rho_rw_scale,
                    &mut local_acc,
                    &mut rng,
                )?;
                Ok(local_acc)
            })
            .collect();
        for r in sweep_results {
            let a = r?;
            acc.sigma2.0 += a.sigma2.0;
            acc.sigma2.1 += a.sigma2.1;
            acc.rho.0 += a.rho.0;
            acc.rho.1 += a.rho.1;
        }
        let mut parent_rng = chain_seed.child_idx("parent", iter as u64).rng();
        parent::update_parent(
            &mut parent,
            &states,
            h,
            include_data,
            cfg.alpha_lambda_rw_scale,
            cfg.beta_lambda_rw_scale,
            &mut acc,
            &mut parent_rng,
        )?;
        if iter >= cfg.burn_in && (iter - cfg.burn_in) % cfg.thin == 0 {
            samples.push(collect_sample(iter, &parent, &states, cfg.store_job_params));
        }
    }

    let checkpoint = McmcCheckpoint {
        schema_version: 1,
        chain_index,
        iteration: stop,
        seed: cfg.seed,
        parent: parent.clone(),
        job_ids: corpus.iter().map(|s| s.job_id.clone()).collect(),
        jobs: states.iter().map(|s| s.params.clone()).collect(),
        imputed: states.iter().map(|s| s.x.clone()).collect(),
        acceptance: acc,
    };
    Ok((ChainRun { chain_index, samples, acceptance: acc }, checkpoint))
}

/// Run one chain start to finish.
pub fn run_chain(
    corpus: &[JobSeries],
    h: &HyperPriors,
    cfg: &McmcConfig,
    chain_index: usize,
) -> Result<ChainRun> {
    run_chain_segment(corpus, h, cfg, chain_index, None, None).map(|(run, _)| run)
}

/// Run all configured chains (in parallel when threads allow).
pub fn run_mcmc(corpus: &[JobSeries], h: &HyperPriors, cfg: &McmcConfig) -> Result<Vec<ChainRun>> {
    cfg.validate()?;
    (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| run_chain(corpus, h, cfg, c))
        .collect()
}

/// Pooled post-burn-in parent draws across chains, in (chain, iteration) order.
pub fn pooled_parent_samples(chains: &[ChainRun]) -> Vec<&ParentParams> {
    chains.iter().flat_map(|c| c.samples.iter().map(|s| &s.parent)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_job_from_parent, simulate_job};

    fn tiny_corpus(n_jobs: usize, minutes: usize) -> Vec<JobSeries> {
        let parent = ParentParams {
            mu_sigma: 2.3,
            sigma2_sigma: 0.3,
            mu_rho: -1.0,
            sigma2_rho: 0.4,
            u: vec![0.5],
            nu: vec![1200.0, 2600.0],
            varsigma2: vec![2500.0, 2500.0],
            alpha_lambda: 1.5,
            beta_lambda: 30.0,
            gamma: 1.0,
            delta: 2.0,
            tau2: 4.0,
        };
        let seed = SeedTree::from_master(400);
        (0..n_jobs)
            .map(|j| {
                let mut rng = seed.child_idx("job", j as u64).rng();
                let job = sample_job_from_parent(&parent, 4, &mut rng).unwrap();
                let mut sim =
                    simulate_job(&job, &parent, minutes, 1, &seed.child_idx("sim", j as u64))
                        .unwrap();
                sim.series.job_id = format!("job-{j}");
                sim.series
            })
            .collect()
    }

    fn small_cfg() -> McmcConfig {
        McmcConfig {
            n_iterations: 60,
            burn_in: 10,
            n_chains: 1,
            thin: 1,
            seed: 5,
            ..McmcConfig::default()
        }
    }

    #[test]
    fn chain_is_deterministic() {
        let corpus = tiny_corpus(3, 40);
        let h = HyperPriors { k_regimes: 3, m_components: 4, ..HyperPriors::default() };
        let a = run_chain(&corpus, &h, &small_cfg(), 0).unwrap();
        let b = run_chain(&corpus, &h, &small_cfg(), 0).unwrap();
        assert_eq!(a.samples.len(), b.samples.len());
        for (sa, sb) in a.samples.iter().zip(&b.samples) {
            assert_eq!(sa.parent.mu_sigma, sb.parent.mu_sigma);
            assert_eq!(sa.parent.tau2, sb.parent.tau2);
            for (ja, jb) in sa.jobs.iter().zip(&sb.jobs) {
                assert_eq!(ja.mu, jb.mu);
                assert_eq!(ja.xi, jb.xi);
            }
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let corpus = tiny_corpus(4, 30);
        let h = HyperPriors { k_regimes: 3, m_components: 4, ..HyperPriors::default() };
        let cfg = small_cfg();
        let serial_pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let a = serial_pool.install(|| run_chain(&corpus, &h, &cfg, 0)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let b = pool.install(|| run_chain(&corpus, &h, &cfg, 0)).unwrap();
        for (sa, sb) in a.samples.iter().zip(&b.samples) {
            assert_eq!(sa.parent.tau2, sb.parent.tau2);
            for (ja, jb) in sa.jobs.iter().zip(&sb.jobs) {
                assert_eq!(ja.sigma2, jb.sigma2);
            }
        }
    }

    #[test]
    fn checkpoint_resume_is_bit_exact() {
        let corpus = tiny_corpus(3, 30);
        let h = HyperPriors { k_regimes: 3, m_components: 4, ..HyperPriors::default() };
        let cfg = small_cfg();
        let (full, _) = run_chain_segment(&corpus, &h, &cfg, 0, None, None).unwrap();
        let (head, ck) = run_chain_segment(&corpus, &h, &cfg, 0, None, Some(25)).unwrap();
        // round-trip the checkpoint through JSON like the CLI would
        let ck: McmcCheckpoint =
            serde_json::from_str(&serde_json::to_string(&ck).unwrap()).unwrap();
        let (tail, _) = run_chain_segment(&corpus, &h, &cfg, 0, Some(&ck), None).unwrap();
        let stitched: Vec<&PosteriorSample> =
            head.samples.iter().chain(tail.samples.iter()).collect();
        assert_eq!(stitched.len(), full.samples.len());
        for (s, f) in stitched.iter().zip(&full.samples) {
            assert_eq!(s.iteration, f.iteration);
            assert_eq!(s.parent.mu_sigma, f.parent.mu_sigma);
            assert_eq!(s.parent.tau2, f.parent.tau2);
            for (a, b) in s.jobs.iter().zip(&f.jobs) {
                assert_eq!(a.mu, b.mu);
                assert_eq!(a.z, b.z);
                assert_eq!(a.lambda, b.lambda);
            }
        }
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let h = HyperPriors::default();
        assert!(run_chain(&[], &h, &small_cfg(), 0).is_err());
    }

    #[test]
    fn bad_config_is_rejected() {
        let corpus = tiny_corpus(1, 10);
        let h = HyperPriors::default();
        let cfg = McmcConfig { burn_in: 100, n_iterations: 50, ..McmcConfig::default() };
        assert!(matches!(run_chain(&corpus, &h, &cfg, 0), Err(Error::Config(_))));
    }
}
