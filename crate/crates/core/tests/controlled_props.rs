use netcournot::controlled::{
    allocate, firm_payoff, gen_theta_family, max_deviation_gain, objective, price_curve,
    stackelberg_search, stackelberg_single_firm, uniform_price, AllocationConfig, SearchOptions,
};
use netcournot::model::{CostFunction, Instance, MarketParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn markets_strategy() -> impl Strategy<Value = Vec<MarketParams>> {
    prop::collection::vec((0.3f64..3.0, 0.2f64..3.0), 1..=4)
        .prop_map(|v| v.into_iter().map(|(a, b)| MarketParams::new(a, b)).collect())
}

fn random_feasible(rng: &mut ChaCha8Rng, m: usize, q: f64, cap: &[f64]) -> Option<Vec<f64>> {
    for _ in 0..100 {
        let mut w: Vec<f64> = (0..m).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
        let s: f64 = w.iter().sum();
        for x in w.iter_mut() {
            *x *= q / s;
        }
        if w.iter().zip(cap).all(|(x, c)| x <= c) {
            return Some(w);
        }
    }
    None
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn allocation_is_optimal_and_exhaustive(
        markets in markets_strategy(),
        lambda in 0.0f64..=1.0,
        q in 0.0f64..4.0,
        floor in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let cfg = AllocationConfig::new(lambda, floor).unwrap();
        let a = allocate(&markets, q, &cfg).unwrap();
        let cap: Vec<f64> = markets
            .iter()
            .map(|mk| if floor { mk.alpha / mk.beta } else { f64::INFINITY })
            .collect();
        let capacity: f64 = cap.iter().sum();
        let total: f64 = a.d.iter().sum();
        prop_assert!(a.d.iter().all(|&x| x >= 0.0));
        if q <= capacity {
            prop_assert!((total - q).abs() <= 1e-12 * (1.0 + q));
        } else {
            prop_assert!((total - capacity).abs() <= 1e-12 * (1.0 + q));
        }
        if q <= capacity && q > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scale = 1e-12 * (1.0 + a.objective.abs());
            for _ in 0..10_000 {
                if let Some(d) = random_feasible(&mut rng, markets.len(), q, &cap) {
                    prop_assert!(objective(&markets, &d, lambda) <= a.objective + scale);
                }
            }
        }
    }

    #[test]
    fn welfare_platform_equalizes_prices(markets in markets_strategy(), q in 0.01f64..5.0) {
        let cfg = AllocationConfig::new(0.5, false).unwrap();
        let a = allocate(&markets, q, &cfg).unwrap();
        let prices: Vec<f64> = a.active.iter().map(|&j| markets[j].price(a.d[j])).collect();
        let inv: f64 = a.active.iter().map(|&j| 1.0 / markets[j].beta).sum();
        let ratio: f64 = a.active.iter().map(|&j| markets[j].alpha / markets[j].beta).sum();
        let shared = (ratio - q) / inv;
        for p in prices {
            prop_assert!((p - shared).abs() <= 1e-9);
        }
    }

    #[test]
    fn budget_balance(markets in markets_strategy(), d in prop::collection::vec(0.0f64..3.0, 4)) {
        let d = &d[..markets.len()];
        let p = uniform_price(&markets, d);
        let rev: f64 = markets.iter().zip(d).map(|(mk, &x)| x * mk.price(x)).sum();
        let total: f64 = d.iter().sum();
        if total > 0.0 {
            prop_assert!((p * total - rev).abs() <= 1e-12 * (1.0 + rev.abs()));
        }
    }

    #[test]
    fn curve_continuous_and_nonincreasing(
        markets in markets_strategy(),
        lambda in prop_oneof![0.0f64..=0.5, 0.5f64..(2.0 / 3.0)],
        floor in any::<bool>(),
    ) {
        let cfg = AllocationConfig::new(lambda, floor).unwrap();
        let curve = price_curve(&markets, &cfg).unwrap();
        for w in curve.segments.windows(2) {
            let b = w[1].start;
            prop_assert!((w[0].price_at(b) - w[1].price_at(b)).abs() <= 1e-9);
        }
        let hi = 1.2 * curve.q_max;
        let mut prev = f64::INFINITY;
        for k in 0..=1000 {
            let q = hi * k as f64 / 1000.0;
            let p = curve.price(q);
            if lambda <= 0.5 {
                prop_assert!(p <= prev + 1e-9);
            }
            let exact = allocate(&markets, q, &cfg).unwrap();
            if q > 0.0 {
                prop_assert!((p - exact.uniform_price).abs() <= 1e-9);
            }
            prev = p;
        }
    }
}

#[test]
fn theta_curve_is_max_of_affine() {
    let cfg = AllocationConfig::new(0.5, false).unwrap();
    for (m, theta) in [(2, 0.5), (3, 0.5), (5, 0.3), (4, 0.1)] {
        let inst = gen_theta_family(m, theta, 0.0).unwrap();
        let curve = price_curve(&inst.markets, &cfg).unwrap();
        for k in 0..=1000 {
            let q = curve.q_max * k as f64 / 1000.0;
            let expect = (0..m as i32)
                .map(|k| theta.powi(k) - theta.powi(2 * k) * q)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((curve.price(q) - expect).abs() <= 1e-9, "m={m} q={q}");
        }
    }
}

#[test]
fn theta_profit_quarter_at_segment_optima() {
    let cfg = AllocationConfig::new(0.5, false).unwrap();
    for (m, theta) in [(3, 0.5), (4, 0.25)] {
        let inst = gen_theta_family(m, theta, 0.0).unwrap();
        for k in 0..m as i32 {
            let q = 1.0 / (2.0 * theta.powi(k));
            let v = firm_payoff(0, &[q], &inst, &cfg).unwrap();
            assert!((v - 0.25).abs() <= 1e-9, "k={k} v={v}");
        }
    }
}

#[test]
fn revenue_stationary_at_half_ratio_sum() {
    let markets = vec![
        MarketParams::new(1.0, 1.0),
        MarketParams::new(0.9, 0.5),
        MarketParams::new(0.8, 2.0),
    ];
    let inst = Instance::open_access(vec![CostFunction::linear(0.0)], markets.clone());
    let target: f64 = markets.iter().map(|mk| mk.alpha / (2.0 * mk.beta)).sum();
    for lambda in [0.0, 0.3, 0.5, 0.6] {
        let cfg = AllocationConfig::new(lambda, false).unwrap();
        assert_eq!(allocate(&markets, target, &cfg).unwrap().active.len(), 3);
        let se = stackelberg_single_firm(&inst, &cfg).unwrap();
        assert_eq!(se.len(), 1);
        assert!((se[0].total_q - target).abs() <= 1e-9, "lambda {lambda}");
    }
}

#[test]
fn single_firm_outcomes_survive_dense_deviation_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut instances = vec![
        gen_theta_family(2, 0.5, 0.0).unwrap(),
        gen_theta_family(4, 0.4, 0.02).unwrap(),
    ];
    for _ in 0..6 {
        let m = rng.gen_range(1..=3);
        let markets = (0..m)
            .map(|_| MarketParams::new(rng.gen_range(0.5..3.0), rng.gen_range(0.2..3.0)))
            .collect();
        instances.push(Instance::open_access(
            vec![CostFunction::linear(rng.gen_range(0.0..0.4))],
            markets,
        ));
    }
    for inst in &instances {
        for (lambda, floor) in [(0.0, false), (0.5, false), (0.6, true), (0.9, false), (0.9, true)] {
            let cfg = AllocationConfig::new(lambda, floor).unwrap();
            let curve = price_curve(&inst.markets, &cfg).unwrap();
            for o in stackelberg_single_firm(inst, &cfg).unwrap() {
                let gain = max_deviation_gain(&o.s, inst, &cfg, &curve, 10_000).unwrap();
                assert!(gain <= 1e-7, "gain {gain} lambda {lambda}");
            }
        }
    }
}

#[test]
fn search_matches_exact_on_single_firm() {
    let opts = SearchOptions {
        grid: 4000,
        ..SearchOptions::default()
    };
    let cases = [
        gen_theta_family(2, 0.5, 0.0).unwrap(),
        gen_theta_family(3, 0.5, 0.0).unwrap(),
        Instance::open_access(
            vec![CostFunction::linear(0.3)],
            vec![MarketParams::new(2.0, 1.0), MarketParams::new(1.0, 0.4)],
        ),
    ];
    for inst in &cases {
        for lambda in [0.2, 0.5] {
            let cfg = AllocationConfig::new(lambda, false).unwrap();
            let worst = |v: Vec<netcournot::controlled::StackelbergOutcome>| {
                v.iter().map(|o| o.sw).fold(f64::INFINITY, f64::min)
            };
            let exact = worst(stackelberg_single_firm(inst, &cfg).unwrap());
            let found = worst(stackelberg_search(inst, &cfg, &opts).unwrap());
            assert!((exact - found).abs() <= 1e-6, "{exact} vs {found}");
        }
    }
}
