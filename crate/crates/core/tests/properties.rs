use proptest::prelude::*;

use pilot_commit::grpo::{self, Reward};
use pilot_commit::metrics::{mean_group_std, rollouts_to_target};
use pilot_commit::scheduler::{classify, should_evict, BufferEntry, BufferOrder, PilotEstimate, ReplayBuffer, Verdict};
use pilot_commit::{
    Allocator, BaselineConfig, BudgetLedger, Dapo, EnvConfig, Grpo, PilotCommit, Population, PromptId,
    SchedulerConfig, StepMetrics,
};

fn rewards(max_len: usize) -> impl Strategy<Value = Vec<Reward>> {
    prop::collection::vec(0u8..=1, 2..=max_len)
}

proptest! {
    #[test]
    fn advantages_are_standardized(r in rewards(128)) {
        let adv = grpo::advantages(&r).unwrap();
        prop_assert_eq!(adv.values.len(), r.len());
        if adv.degenerate {
            prop_assert!(adv.values.iter().all(|&a| a == 0.0));
        } else {
            let g = r.len() as f64;
            let sum: f64 = adv.values.iter().sum();
            let mean_sq = adv.values.iter().map(|a| a * a).sum::<f64>() / g;
            prop_assert!(sum.abs() < 1e-12, "sum {}", sum);
            prop_assert!((mean_sq - 1.0).abs() < 1e-12, "mean square {}", mean_sq);
        }
    }

    #[test]
    fn gradient_is_bounded_and_non_negative(r in rewards(64), theta in -20.0f64..20.0) {
        let g = grpo::surrogate_gradient(theta, &r).unwrap();
        prop_assert!((0.0..=0.5 + 1e-12).contains(&g));
    }

    #[test]
    fn positive_mass_is_at_most_half_the_group(r in rewards(64)) {
        if let Ok(d) = grpo::two_cluster_decompose(0.3, &r) {
            prop_assert!(d.positive_mass <= r.len() as f64 / 2.0 + 1e-9);
        }
    }

    #[test]
    fn classify_is_total(
        k in 0usize..=64,
        extra in 0usize..=64,
        lo in 0.0f64..=1.0,
        width in 0.0f64..=1.0,
    ) {
        let n = (k + extra).max(1);
        let k = k.min(n);
        let hi = (lo + width).min(1.0);
        let config = SchedulerConfig { p_lower: lo, p_upper: hi, p_solve: 1.0, ..SchedulerConfig::default() };
        let rewards: Vec<Reward> = (0..n).map(|i| Reward::from(i < k)).collect();
        let est = PilotEstimate::from_rewards(PromptId(0), rewards, 0);
        let p = k as f64 / n as f64;
        let verdict = classify(&est, &config);
        let expected = if p < lo {
            Verdict::DeferHard
        } else if p > hi {
            Verdict::SkipEasy
        } else {
            Verdict::Keep
        };
        prop_assert_eq!(verdict, expected);
        prop_assert_eq!(should_evict(&est, &config), k == n);
    }

    #[test]
    fn buffer_expiry_respects_age(
        created in prop::collection::vec(0u64..40, 0..60),
        now in 0u64..50,
        d in 0u64..8,
    ) {
        let mut buffer = ReplayBuffer::new(BufferOrder::Fifo, 0);
        for (i, &c) in created.iter().enumerate() {
            let c = c.min(now);
            buffer.push(BufferEntry {
                estimate: PilotEstimate::from_rewards(PromptId(i as u32), vec![0, 1], c),
                created_step: c,
            });
        }
        let before = buffer.len();
        let removed = buffer.expire(now, d);
        prop_assert_eq!(before - removed, buffer.len());
        prop_assert!(buffer.entries().all(|e| e.age(now) <= d));
    }

    #[test]
    fn mean_group_std_is_bounded(groups in prop::collection::vec(rewards(32), 1..20)) {
        let m = mean_group_std(&groups).unwrap();
        prop_assert!((0.0..=0.5).contains(&m));
    }

    #[test]
    fn rollouts_to_target_is_monotone(
        successes in prop::collection::vec(0.0f64..1.0, 1..40),
        lo in 0.0f64..1.0,
        bump in 0.0f64..0.5,
    ) {
        let series: Vec<StepMetrics> = successes
            .iter()
            .enumerate()
            .map(|(i, &s)| StepMetrics {
                step: i as u64,
                mean_success: s,
                mean_reward_std: 0.0,
                sampled_cumulative: 100 * (i as u64 + 1),
                trained_cumulative: 0,
                buffer_size: 0,
                evictions_cumulative: 0,
                extra_rounds: 0,
            })
            .collect();
        let a = rollouts_to_target(&series, lo);
        let b = rollouts_to_target(&series, lo + bump);
        match (a, b) {
            (Some(a), Some(b)) => prop_assert!(a <= b),
            (None, Some(_)) => prop_assert!(false, "higher target reached but lower not"),
            _ => {}
        }
    }
}

fn pop(seed: u64, size: usize, lr: f64) -> Population {
    Population::new(&EnvConfig {
        population_size: size,
        seed,
        learning_rate: lr,
        ..EnvConfig::default()
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pilot_commit_ledger_is_conserved(
        seed in 0u64..1_000,
        n_pilot in 2usize..12,
        n_commit in 0usize..24,
        b_t in 4usize..24,
        s in 1usize..4,
        d in 0u64..5,
        binding in any::<bool>(),
        eviction in any::<bool>(),
    ) {
        let config = SchedulerConfig {
            n_pilot,
            n_commit,
            b_t,
            oversample_s: s,
            max_age_d: d,
            binding_enabled: binding,
            eviction_enabled: eviction,
            ..SchedulerConfig::default()
        };
        let mut population = pop(seed, 600, 0.3);
        let mut pc = PilotCommit::new(config.clone(), seed).unwrap();
        let mut ledger = BudgetLedger::new();
        for step in 0..15 {
            let ev = match pc.step(&mut population, &mut ledger, step) {
                Ok(ev) => ev,
                Err(e) if e.is_exhaustion() => break,
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            };
            let entry = ledger.last().unwrap();
            let rounds = 1 + u64::from(entry.extra_rounds);
            prop_assert_eq!(entry.sampled, rounds * (config.b_g() * n_pilot) as u64 + (b_t * n_commit) as u64);
            prop_assert_eq!(entry.trained, config.trained_per_step());
            prop_assert_eq!(ev.trained.len(), b_t);
            for c in &ev.consumed {
                prop_assert!(step - c.created_step <= d);
                prop_assert!(c.pilot_step <= c.created_step);
            }
            prop_assert_eq!(ev.buffer_size, pc.buffer_len());
        }
        prop_assert!(ledger.is_consistent());
        prop_assert_eq!(ledger.sampled_total, population.draw_count());
    }

    #[test]
    fn baseline_ledgers_are_conserved(seed in 0u64..1_000, n in 2usize..16, b_t in 2usize..24) {
        let config = BaselineConfig { n, b_t, oversample_s: 3 };
        let mut allocators: Vec<Box<dyn Allocator>> = vec![
            Box::new(Grpo::new(config.clone(), seed).unwrap()),
            Box::new(Dapo::new(config.clone(), seed).unwrap()),
        ];
        for alloc in allocators.iter_mut() {
            let mut population = pop(seed, 500, 0.3);
            let mut ledger = BudgetLedger::new();
            for step in 0..10 {
                match alloc.step(&mut population, &mut ledger, step) {
                    Ok(_) => {}
                    Err(e) if e.is_exhaustion() => break,
                    Err(e) => return Err(TestCaseError::fail(e.to_string())),
                }
                prop_assert_eq!(ledger.last().unwrap().trained, config.grpo_per_step());
            }
            prop_assert_eq!(ledger.sampled_total, population.draw_count());
        }
    }
}
