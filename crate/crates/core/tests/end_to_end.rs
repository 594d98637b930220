use csiblt::baselines::{bloom_reconcile, guess_schedule, iblt_guess_reconcile, naive_reconcile};
use csiblt::harness::{gen_instance, gen_instance_in, run_trial, Protocol, TransportKind, TrialOptions, TrialRecord};
use proptest::prelude::*;

fn strip(mut r: TrialRecord) -> TrialRecord {
    r.wall_ms = 0.0;
    r
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// A session either reconciles exactly or says it failed.
    #[test]
    fn cs_iblt_never_silently_wrong(n in 5u64..60, frac in 0.0f64..=1.0, k in 2usize..=3, seed: u64) {
        let d = ((n as f64) * frac) as u64;
        let inst = gen_instance(n, d, seed).unwrap();
        let rec = run_trial(&inst, Protocol::CsIblt, k, &TrialOptions::default()).unwrap();
        prop_assert!(!rec.silently_wrong());
        prop_assert_eq!(rec.success, rec.claimed_success);
        prop_assert!(rec.rows_used.unwrap() <= 2 * n as usize);
        prop_assert_eq!(rec.scalars_sent, 2 * rec.rows_used.unwrap() as u64);
        if !rec.success {
            prop_assert!(rec.abort.is_some());
        }
    }

    #[test]
    fn naive_is_always_exact(n in 0u64..200, frac in 0.0f64..=1.0, seed: u64) {
        let d = ((n as f64) * frac) as u64;
        let inst = gen_instance(n.max(1), d.min(n.max(1)), seed).unwrap();
        let o = naive_reconcile(&inst.s_a, &inst.s_b);
        prop_assert_eq!(o.delta_a, inst.delta_a());
        prop_assert_eq!(o.delta_b, inst.delta_b());
        prop_assert_eq!(o.scalars_sent, inst.s_a.len() as u64);
    }

    /// Guessing costs exactly round 0 whenever d <= n/2 decodes there.
    #[test]
    fn guess_cost_follows_schedule(n in 20u64..200, frac in 0.0f64..=1.0, seed: u64) {
        let d = ((n as f64) * frac) as u64;
        let inst = gen_instance(n, d, seed).unwrap();
        let o = iblt_guess_reconcile(&inst.s_a, &inst.s_b, n, 3, seed).unwrap();
        let sched = guess_schedule(n);
        let prefix: Vec<u64> = sched.iter().scan(0, |acc, g| { *acc += 4 * g; Some(*acc) }).collect();
        let rounds = o.rounds as usize;
        if rounds <= sched.len() {
            prop_assert_eq!(o.scalars_sent, prefix[rounds - 1]);
        } else {
            prop_assert_eq!(o.scalars_sent, prefix[sched.len() - 1] + 8 * n);
            prop_assert!(o.fallback_used);
        }
        if o.success {
            prop_assert_eq!(o.delta_a, inst.delta_a());
            prop_assert_eq!(o.delta_b, inst.delta_b());
        }
    }

    /// Δ_B candidates are genuine and no element of Δ_A is missed.
    #[test]
    fn bloom_one_sided_errors(n in 10u64..100, frac in 0.0f64..=1.0, bpe in 1usize..12, seed: u64) {
        let d = ((n as f64) * frac) as u64;
        let inst = gen_instance_in(n, d, seed, 5_000).unwrap();
        let o = bloom_reconcile(&inst.s_a, &inst.s_b, 5_000, bpe, seed).unwrap();
        prop_assert!(o.delta_b.is_subset(&inst.delta_b()));
        prop_assert!(inst.delta_a().is_subset(&o.delta_a));
        prop_assert!(o.success);
    }
}

#[test]
fn transports_agree() {
    for seed in 0..4u64 {
        let inst = gen_instance(40, 10 + seed * 5, seed).unwrap();
        let inproc = run_trial(&inst, Protocol::CsIblt, 2, &TrialOptions::default()).unwrap();
        let tcp = run_trial(
            &inst,
            Protocol::CsIblt,
            2,
            &TrialOptions {
                transport: TransportKind::Tcp,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(strip(inproc), strip(tcp));
    }
}

#[test]
fn bloom_false_positives_fall_with_filter_size() {
    let universe = 20_000;
    let mut fp = Vec::new();
    let mut missed_b = 0;
    for bpe in [4usize, 8, 16] {
        let mut spurious = 0usize;
        for seed in 0..100u64 {
            let inst = gen_instance_in(100, 20, seed, universe).unwrap();
            let o = bloom_reconcile(&inst.s_a, &inst.s_b, universe, bpe, seed).unwrap();
            spurious += o.delta_a.difference(&inst.delta_a()).count();
            missed_b += inst.delta_b().difference(&o.delta_b).count();
        }
        fp.push(spurious as f64 / 100.0);
    }
    assert!(fp[0] > fp[1] && fp[1] > fp[2], "{fp:?}");
    println!("mean spurious Δ_A elements at 4/8/16 bits: {fp:?}; Δ_B misses over all trials: {missed_b}");
}

#[test]
fn bloom_with_large_filter_is_nearly_exact() {
    let inst = gen_instance_in(200, 40, 9, 100_000).unwrap();
    let o = bloom_reconcile(&inst.s_a, &inst.s_b, 100_000, 64, 9).unwrap();
    assert_eq!(o.delta_b, inst.delta_b());
    assert!(o.delta_a.difference(&inst.delta_a()).count() <= 1);
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &t in &idx[i..=j] {
            r[t] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn rows_used_track_difference_size() {
    let ds = [1u64, 10, 50, 100, 200];
    let mut means = Vec::new();
    for &d in &ds {
        let mut total = 0;
        for t in 0..3u64 {
            let inst = gen_instance(200, d, 1000 * d + t).unwrap();
            let rec = run_trial(&inst, Protocol::CsIblt, 3, &TrialOptions::default()).unwrap();
            total += rec.rows_used.unwrap();
        }
        means.push(total as f64 / 3.0);
    }
    let x: Vec<f64> = ds.iter().map(|&d| d as f64).collect();
    let rho = spearman(&x, &means);
    println!("mean rows_used at n=200 for d in {ds:?}: {means:?}, spearman {rho:.3}");
    assert!(means.windows(2).all(|w| w[0] <= w[1]), "{means:?}");
    assert!(rho > 0.9);
}
