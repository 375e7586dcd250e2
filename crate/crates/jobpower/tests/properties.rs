//! Randomized structural properties: probability constructions stay on the
//! simplex, degradation bounds behave monotonically, cap reparameterization
//! spends budgets exactly, and trace serialization round-trips.

use proptest::prelude::*;

use jobpower::calibrate::randomized_pit;
use jobpower::caps::{reparameterize, Budget};
use jobpower::degradation::{cap_for_target, degradation_bound};
use jobpower::io;
use jobpower::model::{stationary_distribution, stick_break, transition_matrix, JobSeries, PowerSample};
use jobpower::rng::SeedTree;

fn fractions() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-6..=1.0 - 1e-6, 0..8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn stick_break_is_a_distribution(v in fractions()) {
        let pi = stick_break(&v).unwrap();
        prop_assert_eq!(pi.len(), v.len() + 1);
        prop_assert!(pi.iter().all(|&p| (0.0..=1.0).contains(&p)));
        let total: f64 = pi.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transition_rows_are_distributions(v in fractions(), seed in any::<u64>()) {
        let pi = stick_break(&v).unwrap();
        let mut rng = SeedTree::from_master(seed).child("lambda").rng();
        let lambda: Vec<f64> = (0..pi.len()).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        let rows = transition_matrix(&lambda, &pi).unwrap();
        for (k, row) in rows.iter().enumerate() {
            prop_assert!(row.iter().all(|&p| p >= -1e-15));
            let total: f64 = row.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9, "row {} sums to {}", k, total);
        }
    }

    #[test]
    fn stationary_law_is_fixed_by_transitions(v in fractions()) {
        let pi = stick_break(&v).unwrap();
        let k = pi.len();
        let lambda: Vec<f64> = (0..k).map(|i| 0.05 + 0.9 * (i as f64 + 0.5) / k as f64).collect();
        let s = stationary_distribution(&lambda, &pi).unwrap();
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let rows = transition_matrix(&lambda, &pi).unwrap();
        for l in 0..k {
            let flowed: f64 = (0..k).map(|j| s[j] * rows[j][l]).sum();
            prop_assert!((flowed - s[l]).abs() < 1e-10, "state {} not stationary", l);
        }
    }

    #[test]
    fn degradation_is_monotone_and_vanishes_above_peak(
        trace in prop::collection::vec(0.0..10_000.0f64, 1..60),
        idle in 0.0..500.0f64,
    ) {
        let peak = trace.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let above = degradation_bound(&trace, peak.max(idle) + 1.0, idle).unwrap();
        prop_assert_eq!(above.delta_minutes, 0.0);
        let lo = degradation_bound(&trace, idle + 50.0, idle).unwrap();
        let hi = degradation_bound(&trace, idle + 500.0, idle).unwrap();
        prop_assert!(lo.delta_minutes >= hi.delta_minutes - 1e-12);
    }

    #[test]
    fn cap_search_meets_its_target(
        trace in prop::collection::vec(500.0..6_000.0f64, 5..80),
        target in 0.001..0.3f64,
    ) {
        let idle = 400.0;
        let cap = cap_for_target(&trace, idle, target).unwrap();
        prop_assert!(cap > idle);
        let b = degradation_bound(&trace, cap, idle).unwrap();
        prop_assert!(b.relative_increase <= target + 1e-12);
    }

    #[test]
    fn reparameterized_caps_spend_the_job_budget_exactly(
        c_star in prop::collection::vec(0.01..100.0f64, 1..12),
        cages in prop::collection::vec(1usize..10, 1..12),
    ) {
        let n = c_star.len().min(cages.len());
        let c_star = &c_star[..n];
        let cages = &cages[..n];
        let total_cages: usize = cages.iter().sum();
        let budget = Budget {
            total: 500_000.0,
            baseline: 50_000.0,
            idle_cap: 1_000.0,
            n_cages: total_cages + 4,
            n_idle: 4,
        };
        let caps = reparameterize(c_star, cages, &budget).unwrap();
        let spent: f64 = caps.iter().zip(cages).map(|(c, &n)| c * n as f64).sum();
        prop_assert!(
            (spent - budget.job_budget()).abs() <= 1e-9 * budget.job_budget(),
            "spent {} of {}", spent, budget.job_budget()
        );
        // scale invariance: c* and 3c* give the same caps
        let scaled: Vec<f64> = c_star.iter().map(|c| 3.0 * c).collect();
        let again = reparameterize(&scaled, cages, &budget).unwrap();
        for (a, b) in caps.iter().zip(&again) {
            prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn randomized_pit_stays_in_unit_interval(
        draws in prop::collection::vec(-100.0..100.0f64, 1..50),
        observed in -150.0..150.0f64,
        seed in any::<u64>(),
    ) {
        let mut rng = SeedTree::from_master(seed).child("pit").rng();
        let u = randomized_pit(&draws, observed, &mut rng).unwrap();
        prop_assert!((0.0..=1.0).contains(&u), "PIT {}", u);
    }

    #[test]
    fn trace_serialization_round_trips(
        jobs in prop::collection::vec(
            (
                prop::collection::vec(
                    prop::collection::vec((0.0..9_000.0f64, prop::bool::ANY), 1..12),
                    1..4,
                ),
                0u32..1000,
            ),
            1..5,
        )
    ) {
        let corpus: Vec<JobSeries> = jobs
            .iter()
            .enumerate()
            .map(|(i, (reps, tag))| {
                let replicates = reps
                    .iter()
                    .map(|cage| {
                        // censor above the cage median so the cap equals the
                        // recorded value, as the format requires
                        let mut sorted: Vec<f64> = cage.iter().map(|(w, _)| *w).collect();
                        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                        let cap = sorted[sorted.len() / 2];
                        cage.iter()
                            .enumerate()
                            .map(|(t, &(w, censor))| {
                                if censor && w >= cap {
                                    PowerSample { minute: t as u32, watts: cap, censored_at: Some(cap) }
                                } else {
                                    PowerSample { minute: t as u32, watts: w, censored_at: None }
                                }
                            })
                            .collect()
                    })
                    .collect();
                JobSeries::new(format!("job-{i}-{tag}"), replicates)
            })
            .collect();
        let mut buf = Vec::new();
        io::write_traces_to(&corpus, &mut buf).unwrap();
        let back = io::read_traces_from(buf.as_slice()).unwrap();
        prop_assert_eq!(corpus.len(), back.len());
        for (a, b) in corpus.iter().zip(&back) {
            prop_assert_eq!(&a.job_id, &b.job_id);
            prop_assert_eq!(a.replicates.len(), b.replicates.len());
            for (ra, rb) in a.replicates.iter().zip(&b.replicates) {
                prop_assert_eq!(ra.len(), rb.len());
                for (sa, sb) in ra.iter().zip(rb) {
                    prop_assert_eq!(sa.minute, sb.minute);
                    prop_assert!(sa.watts == sb.watts, "watts changed in round trip");
                    prop_assert_eq!(sa.censored_at, sb.censored_at);
                }
            }
        }
    }
}
