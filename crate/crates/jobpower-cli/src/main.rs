//! Command-line workbench around the jobpower library.
//!
//! Every command is deterministic given its arguments: seeds are explicit,
//! output files carry no timestamps or absolute paths, and floats are
//! written shortest-round-trip. Exit codes distinguish bad invocations (2),
//! bad input data (3), and numerical failures (4).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use jobpower::calibrate::CalibrationConfig;
use jobpower::caps::{naive_caps, optimize_caps, plan_objective, Budget, Objective, OptimizeConfig};
use jobpower::degradation::{ensemble_cap_for_target, expected_degradation};
use jobpower::diag::potential_scale_reduction;
use jobpower::io;
use jobpower::mcmc::{pooled_parent_samples, run_mcmc, McmcConfig};
use jobpower::model::{HyperPriors, JobSeries, ParentParams};
use jobpower::pragmatic::{fit_empirical_parent, EmpiricalParent};
use jobpower::predict::{
    fix_parent, predict, update_job, FixParentConfig, FixedParent, JobChain, PredictiveEnsemble,
};
use jobpower::rng::SeedTree;
use jobpower::sim::{
    evaluate_strategies, fixture_parent, run_queue_to_steady_state, synthetic_corpus,
    CorpusConfig, MachineConfig, StrategyConfig, STRATEGY_NAMES,
};
use jobpower::{Error, Result};

/// Optional TOML file supplying the less-travelled knobs; command-line
/// flags override the sections they shadow.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    corpus: CorpusConfig,
    machine: MachineConfig,
    hyper: HyperPriors,
    mcmc: McmcConfig,
    fix_parent: FixParentConfig,
    pragmatic: PragmaticSection,
    optimize: OptimizeConfig,
    strategy: StrategyConfig,
    calibration: CalibrationConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PragmaticSection {
    k_max: usize,
    marginal_independence: bool,
}

impl Default for PragmaticSection {
    fn default() -> Self {
        PragmaticSection { k_max: 10, marginal_independence: false }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::config(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str(&text)
                .map_err(|e| Error::config(format!("config {}: {e}", p.display())))
        }
    }
}

#[derive(Parser)]
#[command(
    name = "jobpower",
    version,
    about = "Model, predict, and cap the power draw of HPC jobs"
)]
struct Cli {
    /// Worker threads for multi-chain fitting (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML file with advanced settings.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic corpus of job power traces.
    Generate(GenerateArgs),
    /// Fit the hierarchical model to a corpus and freeze the parent.
    FitParent(FitParentArgs),
    /// Fit per-job moment estimates into an empirical parent.
    FitPragmatic(FitPragmaticArgs),
    /// Update one job's posterior against a frozen parent.
    UpdateJob(UpdateJobArgs),
    /// Simulate forward power draws for an updated job.
    Predict(PredictArgs),
    /// Tabulate expected degradation bounds over a range of caps.
    DegradationCurve(DegradationCurveArgs),
    /// Split a power budget into per-job caps against predictions.
    OptimizeCaps(OptimizeCapsArgs),
    /// Replay a job queue and compare capping strategies end to end.
    Simulate(SimulateArgs),
    /// Check predictive calibration of degradation forecasts.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Directory receiving traces.csv and parent.json.
    #[arg(long, value_name = "DIR")]
    output_dir: PathBuf,
    /// Number of jobs (overrides [corpus] in --config).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Generate from this frozen parent instead of the built-in fixture.
    #[arg(long, value_name = "FILE")]
    parent: Option<PathBuf>,
}

#[derive(Args)]
struct FitParentArgs {
    #[arg(long, value_name = "FILE")]
    traces: PathBuf,
    /// Output path for the frozen parent JSON.
    #[arg(long, value_name = "FILE")]
    output: PathBuf,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FitPragmaticArgs {
    #[arg(long, value_name = "FILE")]
    traces: PathBuf,
    /// Output path for the empirical parent JSON.
    #[arg(long, value_name = "FILE")]
    output: PathBuf,
    /// Regime cap per job fit.
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct UpdateJobArgs {
    /// History CSV; omit for a brand-new job (prior predictive).
    #[arg(long, value_name = "FILE")]
    history: Option<PathBuf>,
    /// Job to select when the history file holds several.
    #[arg(long)]
    job_id: Option<String>,
    #[arg(long, value_name = "FILE")]
    parent: PathBuf,
    /// Output path for the posterior chain JSON.
    #[arg(long, value_name = "FILE")]
    output: PathBuf,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PredictArgs {
    /// Posterior chain JSON from update-job.
    #[arg(long, value_name = "FILE")]
    chain: PathBuf,
    #[arg(long, value_name = "FILE")]
    parent: PathBuf,
    /// Minutes to forecast.
    #[arg(long, default_value_t = 30)]
    horizon: usize,
    #[arg(long, default_value_t = 400)]
    realizations: usize,
    #[arg(long, default_value_t = 1)]
    cages: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path for the ensemble JSON.
    #[arg(long, value_name = "FILE")]
    output: PathBuf,
    /// Also export realizations as CSV.
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct DegradationCurveArgs {
    /// Predictive ensemble JSON.
    #[arg(long, value_name = "FILE")]
    ensemble: PathBuf,
    /// Idle draw of a fully throttled cage, watts.
    #[arg(long, default_value_t = 400.0)]
    idle: f64,
    /// Explicit caps to evaluate, watts.
    #[arg(long, value_delimiter = ',')]
    caps: Vec<f64>,
    /// Evenly spaced caps as lo:hi:count.
    #[arg(long, value_name = "LO:HI:N")]
    grid: Option<String>,
    /// Also solve for the cap meeting this mean relative degradation.
    #[arg(long)]
    target: Option<f64>,
    /// Output CSV path (stdout when omitted).
    #[arg(long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct OptimizeCapsArgs {
    /// Predictive ensemble JSON, one per job (roster order).
    #[arg(long = "ensemble", value_name = "FILE", required = true)]
    ensembles: Vec<PathBuf>,
    #[arg(long)]
    total: f64,
    #[arg(long)]
    baseline: f64,
    /// Cap handed to each idle cage, watts.
    #[arg(long, default_value_t = 1200.0)]
    idle_cap: f64,
    #[arg(long)]
    n_cages: usize,
    /// Idle draw of a fully throttled cage, watts.
    #[arg(long, default_value_t = 400.0)]
    idle_draw: f64,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::WeightedMean)]
    objective: ObjectiveArg,
    #[arg(long)]
    seed: Option<u64>,
    /// Output path for the cap plan JSON.
    #[arg(long, value_name = "FILE")]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    WeightedMean,
    ExpectedMax,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::WeightedMean => Objective::WeightedMean,
            ObjectiveArg::ExpectedMax => Objective::ExpectedMax,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Template traces CSV (complete runs).
    #[arg(long, value_name = "FILE")]
    templates: PathBuf,
    /// Frozen parent JSON for the full-posterior strategies.
    #[arg(long, value_name = "FILE")]
    parent: PathBuf,
    /// Empirical parent JSON for the pragmatic strategies.
    #[arg(long, value_name = "FILE")]
    empirical: PathBuf,
    /// Number of steady-state mixes to score.
    #[arg(long, default_value_t = 100)]
    mixes: usize,
    /// Completions to replay before and during snapshotting.
    #[arg(long, default_value_t = 1000)]
    completions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path for per-mix scores JSON.
    #[arg(long, value_name = "FILE")]
    output: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Corpus of complete traces CSV.
    #[arg(long, value_name = "FILE")]
    traces: PathBuf,
    #[arg(long, value_name = "FILE")]
    parent: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output path for scenario outcomes JSON.
    #[arg(long, value_name = "FILE")]
    output: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // A pool may already exist in tests; the configured run ignores that.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2u8,
                Error::Data(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 3,
                Error::Numerical(_) => 4,
            })
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Generate(a) => cmd_generate(a, &cfg),
        Command::FitParent(a) => cmd_fit_parent(a, &cfg),
        Command::FitPragmatic(a) => cmd_fit_pragmatic(a, &cfg),
        Command::UpdateJob(a) => cmd_update_job(a, &cfg),
        Command::Predict(a) => cmd_predict(a),
        Command::DegradationCurve(a) => cmd_degradation_curve(a),
        Command::OptimizeCaps(a) => cmd_optimize_caps(a, &cfg),
        Command::Simulate(a) => cmd_simulate(a, &cfg),
        Command::Calibrate(a) => cmd_calibrate(a, &cfg),
    }
}

/// Shortest float form that parses back to the same value.
fn fmt_f64(v: f64) -> String {
    serde_json::to_string(&v).expect("finite float")
}

fn cmd_generate(a: &GenerateArgs, cfg: &RunConfig) -> Result<()> {
    let mut corpus_cfg = cfg.corpus.clone();
    if let Some(j) = a.jobs {
        corpus_cfg.n_jobs = j;
    }
    if let Some(s) = a.seed {
        corpus_cfg.seed = s;
    }
    let parent: FixedParent = match &a.parent {
        Some(p) => io::load_json(p)?,
        None => fixture_parent(),
    };
    let corpus = synthetic_corpus(&parent, &corpus_cfg)?;
    std::fs::create_dir_all(&a.output_dir)
        .map_err(|e| Error::config(format!("cannot create {}: {e}", a.output_dir.display())))?;
    io::write_traces(&corpus, a.output_dir.join("traces.csv"))?;
    io::save_json(&parent, a.output_dir.join("parent.json"))?;
    let samples: usize = corpus.iter().map(|j| j.n_samples()).sum();
    println!("generated {} jobs, {} cage-minutes (parent: {})", corpus.len(), samples, parent.source);
    println!("wrote traces.csv and parent.json");
    Ok(())
}

fn cmd_fit_parent(a: &FitParentArgs, cfg: &RunConfig) -> Result<()> {
    let corpus = io::read_traces(&a.traces)?;
    let mut mcfg = cfg.mcmc.clone();
    if let Some(v) = a.iterations {
        mcfg.n_iterations = v;
    }
    if let Some(v) = a.burn_in {
        mcfg.burn_in = v;
    }
    if let Some(v) = a.chains {
        mcfg.n_chains = v;
    }
    if let Some(v) = a.seed {
        mcfg.seed = v;
    }
    mcfg.store_job_params = false; // freezing needs only parent draws

    let chains = run_mcmc(&corpus, &cfg.hyper, &mcfg)?;
    let kept: usize = chains.iter().map(|c| c.samples.len()).sum();
    println!(
        "fitted {} jobs: {} chains x {} iterations, {} draws kept",
        corpus.len(),
        chains.len(),
        mcfg.n_iterations,
        kept
    );
    if chains.len() >= 2 {
        type Pick = fn(&ParentParams) -> f64;
        let picks: [(&str, Pick); 4] = [
            ("mu_sigma", |p| p.mu_sigma),
            ("mu_rho", |p| p.mu_rho),
            ("alpha_lambda", |p| p.alpha_lambda),
            ("tau2", |p| p.tau2),
        ];
        let mut line = String::from("split-chain diagnostics:");
        for (name, pick) in picks {
            let traces: Vec<Vec<f64>> =
                chains.iter().map(|c| c.samples.iter().map(|s| pick(&s.parent)).collect()).collect();
            let n = traces.iter().map(|t| t.len()).min().unwrap_or(0);
            let trimmed: Vec<Vec<f64>> = traces.iter().map(|t| t[..n].to_vec()).collect();
            let rhat = potential_scale_reduction(&trimmed)?;
            write!(line, " rhat({name})={rhat:.3}").expect("string write");
        }
        println!("{line}");
    }

    let pooled = pooled_parent_samples(&chains);
    let source = format!("{} chains x {} kept draws", chains.len(), kept);
    let fixed = fix_parent(&pooled, &source, &cfg.fix_parent, &SeedTree::from_master(mcfg.seed))?;
    println!(
        "frozen parent: {} mixture components, fit residual {:.5}",
        fixed.mu_mixture.n_components(),
        fixed.fit_residual
    );
    io::save_json(&fixed, &a.output)?;
    Ok(())
}

fn cmd_fit_pragmatic(a: &FitPragmaticArgs, cfg: &RunConfig) -> Result<()> {
    let corpus = io::read_traces(&a.traces)?;
    let k_max = a.k_max.unwrap_or(cfg.pragmatic.k_max);
    let seed = SeedTree::from_master(a.seed.unwrap_or(0)).child("empirical");
    let parent = fit_empirical_parent(&corpus, k_max, &seed)?;
    let fallbacks = parent.estimates.iter().filter(|e| e.em_fallback).count();
    let regimes: usize = parent.estimates.iter().map(|e| e.n_regimes()).sum();
    println!(
        "fitted {} estimates ({} regimes total, {} single-component fallbacks)",
        parent.estimates.len(),
        regimes,
        fallbacks
    );
    io::save_json(&parent, &a.output)?;
    Ok(())
}

fn select_job(mut jobs: Vec<JobSeries>, wanted: Option<&str>) -> Result<JobSeries> {
    match wanted {
        Some(id) => jobs
            .into_iter()
            .find(|j| j.job_id == id)
            .ok_or_else(|| Error::data(format!("job {id} not present in the history file"))),
        None if jobs.len() == 1 => Ok(jobs.remove(0)),
        None => Err(Error::config(format!(
            "history file holds {} jobs; pick one with --job-id",
            jobs.len()
        ))),
    }
}

fn cmd_update_job(a: &UpdateJobArgs, cfg: &RunConfig) -> Result<()> {
    let series = match &a.history {
        Some(path) => select_job(io::read_traces(path)?, a.job_id.as_deref())?,
        None => JobSeries::new(a.job_id.clone().unwrap_or_else(|| "new".into()), vec![]),
    };
    let parent: FixedParent = io::load_json(&a.parent)?;
    let mut mcfg = cfg.mcmc.clone();
    mcfg.n_chains = 1;
    if let Some(v) = a.iterations {
        mcfg.n_iterations = v;
    }
    if let Some(v) = a.burn_in {
        mcfg.burn_in = v;
    }
    if let Some(v) = a.thin {
        mcfg.thin = v;
    }
    if let Some(v) = a.seed {
        mcfg.seed = v;
    }
    let chain = update_job(&series, &parent, &mcfg)?;
    println!(
        "job {}: {} draws kept from {} minutes of history",
        chain.job_id,
        chain.draws.len(),
        series.n_samples()
    );
    let (s_acc, s_all) = chain.acceptance.sigma2;
    let (r_acc, r_all) = chain.acceptance.rho;
    if s_all > 0 {
        println!(
            "acceptance: sigma2 {:.3}, rho {:.3}",
            s_acc as f64 / s_all as f64,
            r_acc as f64 / r_all as f64
        );
    }
    io::save_json(&chain, &a.output)?;
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let chain: JobChain = io::load_json(&a.chain)?;
    let parent: FixedParent = io::load_json(&a.parent)?;
    let seed = SeedTree::from_master(a.seed).child("predict");
    let ens = predict(&chain, &parent, a.horizon, a.realizations, a.cages, &seed)?;
    let mean = ens.mean_trace();
    println!(
        "job {}: {} realizations x {} minutes, mean first/last {} / {}",
        ens.job_id,
        ens.n_realizations(),
        ens.horizon,
        fmt_f64(mean[0]),
        fmt_f64(*mean.last().expect("nonempty trace"))
    );
    io::save_json(&ens, &a.output)?;
    if let Some(csv) = &a.csv {
        io::write_ensemble_csv(&ens, csv)?;
    }
    Ok(())
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let err = || Error::config(format!("grid must be LO:HI:N, got `{spec}`"));
    if parts.len() != 3 {
        return Err(err());
    }
    let lo: f64 = parts[0].parse().map_err(|_| err())?;
    let hi: f64 = parts[1].parse().map_err(|_| err())?;
    let n: usize = parts[2].parse().map_err(|_| err())?;
    if n < 2 || !(hi > lo) {
        return Err(err());
    }
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

fn cmd_degradation_curve(a: &DegradationCurveArgs) -> Result<()> {
    let ens: PredictiveEnsemble = io::load_json(&a.ensemble)?;
    let mut rows: Vec<(f64, &str)> = a.caps.iter().map(|&c| (c, "cap")).collect();
    if let Some(spec) = &a.grid {
        rows.extend(parse_grid(spec)?.into_iter().map(|c| (c, "grid")));
    }
    if let Some(target) = a.target {
        let cap = ensemble_cap_for_target(&ens, a.idle, target)?;
        rows.push((cap, "target"));
    }
    if rows.is_empty() {
        return Err(Error::config("nothing to evaluate: pass --caps, --grid, or --target"));
    }
    rows.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite caps"));

    let mut out = String::from(
        "cap_watts,mean_delta_minutes,mean_relative,p50_relative,p90_relative,source\n",
    );
    for (cap, source) in rows {
        let d = expected_degradation(&ens, cap, a.idle, &[0.5, 0.9])?;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_f64(cap),
            fmt_f64(d.mean.delta_minutes),
            fmt_f64(d.mean.relative_increase),
            fmt_f64(d.quantiles[0].1.relative_increase),
            fmt_f64(d.quantiles[1].1.relative_increase),
            source
        )
        .expect("string write");
    }
    match &a.output {
        Some(path) => std::fs::write(path, out)
            .map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))?,
        None => print!("{out}"),
    }
    Ok(())
}

fn cmd_optimize_caps(a: &OptimizeCapsArgs, cfg: &RunConfig) -> Result<()> {
    let loaded: Vec<PredictiveEnsemble> =
        a.ensembles.iter().map(|p| io::load_json(p)).collect::<Result<_>>()?;
    let refs: Vec<&PredictiveEnsemble> = loaded.iter().collect();
    let running: usize = refs.iter().map(|e| e.n_cages).sum();
    if running > a.n_cages {
        return Err(Error::config(format!(
            "ensembles occupy {running} cages but the machine has {}",
            a.n_cages
        )));
    }
    let budget = Budget {
        total: a.total,
        baseline: a.baseline,
        idle_cap: a.idle_cap,
        n_cages: a.n_cages,
        n_idle: a.n_cages - running,
    };
    let mut ocfg = cfg.optimize.clone();
    if let Some(s) = a.seed {
        ocfg.seed = s;
    }
    let plan = optimize_caps(&refs, &budget, a.objective.into(), a.idle_draw, &ocfg)?;
    let roster: Vec<(String, usize)> =
        refs.iter().map(|e| (e.job_id.clone(), e.n_cages)).collect();
    let uniform = naive_caps(&roster, &budget)?;
    let uniform_obj = plan_objective(&uniform, &refs, a.objective.into(), a.idle_draw)?;
    println!(
        "job budget {} W across {} jobs ({} running cages, {} idle)",
        fmt_f64(budget.job_budget()),
        plan.job_ids.len(),
        running,
        budget.n_idle
    );
    for ((id, cages), cap) in plan.job_ids.iter().zip(&plan.cage_counts).zip(&plan.caps) {
        println!("  {id}: {} W/cage x {cages}", fmt_f64(*cap));
    }
    println!(
        "objective {} = {} (uniform plan {}{})",
        plan.strategy,
        fmt_f64(plan.objective.expect("optimized plan")),
        fmt_f64(uniform_obj),
        if plan.stagnated { "; search stagnated" } else { "" }
    );
    io::save_json(&plan, &a.output)?;
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs, cfg: &RunConfig) -> Result<()> {
    let templates = io::read_traces(&a.templates)?;
    let parent: FixedParent = io::load_json(&a.parent)?;
    let empirical: EmpiricalParent = io::load_json(&a.empirical)?;
    let machine = cfg.machine;
    let seed = SeedTree::from_master(a.seed);
    let mixes = run_queue_to_steady_state(
        &templates,
        &machine,
        a.mixes,
        a.completions,
        &seed.child("queue"),
    )?;
    let scores = evaluate_strategies(
        &templates,
        &mixes,
        &machine,
        &parent,
        &empirical,
        &cfg.strategy,
        &seed.child("evaluate"),
    )?;

    let n = scores.len() as f64;
    println!("scored {} mixes (budget = {} of true demand)", scores.len(), cfg.strategy.demand_fraction);
    println!("strategy          mean_weighted  mean_worst  beats_naive");
    for (s, name) in STRATEGY_NAMES.iter().enumerate() {
        let mean_w: f64 = scores.iter().map(|m| m.weighted[s]).sum::<f64>() / n;
        let mean_x: f64 = scores.iter().map(|m| m.worst[s]).sum::<f64>() / n;
        let beats = scores.iter().filter(|m| m.weighted[s] < m.weighted[0]).count();
        println!("{name:<17} {mean_w:>13.6} {mean_x:>11.6} {beats:>11}");
    }
    io::save_json(&scores, &a.output)?;
    Ok(())
}

fn cmd_calibrate(a: &CalibrateArgs, cfg: &RunConfig) -> Result<()> {
    let corpus = io::read_traces(&a.traces)?;
    let parent: FixedParent = io::load_json(&a.parent)?;
    let mut ccfg = cfg.calibration.clone();
    if let Some(s) = a.seed {
        ccfg.update.seed = s;
    }
    let seed = SeedTree::from_master(ccfg.update.seed).child("calibrate");
    let outcomes = jobpower::calibrate::calibration_scenarios(&corpus, &parent, &ccfg, &seed)?;
    let mut within = 0usize;
    for o in &outcomes {
        if o.within_band {
            within += 1;
        }
        println!(
            "history {:>3} min, target {:>5}: n={} excluded={} within_band={}",
            o.history_minutes,
            fmt_f64(o.target),
            o.zscores.len(),
            o.excluded,
            o.within_band
        );
    }
    println!("{within}/{} scenarios inside the {} simultaneous band", outcomes.len(), fmt_f64(ccfg.band_level));
    io::save_json(&outcomes, &a.output)?;
    Ok(())
}
