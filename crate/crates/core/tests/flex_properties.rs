mod common;

use flexcast::bau_scheduler::{aggregate_profile, schedule_bau, BauKind, BauStrategy, Schedule};
use flexcast::flex_products::{freeze_step, solve_product, Accounting, FlexOptions, FlexRequest, FlexResult, Product};
use flexcast::grid_data::{Category, TimeGrid, Transaction};
use flexcast::signals::{Signal, SignalKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-6;

struct Case {
    grid: TimeGrid,
    uni: Vec<Transaction>,
    v2g: Vec<Transaction>,
    prices: Signal,
    mef: Signal,
}

/// Up to a dozen sessions around the evening of the sample day.
fn case(seed: u64) -> Case {
    let grid = common::grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=12);
    let mut uni = Vec::new();
    for id in 0..n {
        let arrive = 140 + rng.random_range(0..40);
        let len = rng.random_range(1..=32);
        let p = [3.7, 7.4, 11.0, 22.0][rng.random_range(0..4)];
        let energy = rng.random_range(0.05..1.0) * p * len as f64 * grid.dt_hours();
        uni.push(Transaction::new(id, Category::Residential, arrive, arrive + len, energy, p, false).unwrap());
    }
    let v2g = uni.iter().map(|tx| tx.with_v2g(true)).collect();
    let prices =
        Signal::new(SignalKind::DayAheadPrice, (0..grid.n_steps()).map(|_| rng.random_range(-0.02..0.4)).collect()).unwrap();
    let mef = Signal::new(SignalKind::Mef, (0..grid.n_steps()).map(|_| rng.random_range(0.05..0.7)).collect()).unwrap();
    Case { grid, uni, v2g, prices, mef }
}

fn bau(c: &Case, kind: BauKind, v2g: bool) -> Schedule {
    let s = BauStrategy::from_kind(kind, Some(&c.prices), Some(&c.mef)).unwrap();
    schedule_bau(if v2g { &c.v2g } else { &c.uni }, &c.grid, &s).unwrap()
}

fn request(c: &Case, product: Product, start: usize, len: usize, lead_steps: usize, v2g: bool) -> FlexRequest {
    FlexRequest::new(product, start, len, lead_steps as f64 * c.grid.dt_hours(), v2g, &c.grid).unwrap()
}

fn solve(c: &Case, bau: &Schedule, req: &FlexRequest) -> FlexResult {
    let txs = if req.v2g() { &c.v2g } else { &c.uni };
    solve_product(bau, txs, req, Accounting { prices: Some(&c.prices), mef: Some(&c.mef) }, FlexOptions::default())
        .unwrap()
}

fn kind_strategy() -> impl Strategy<Value = BauKind> {
    prop_oneof![Just(BauKind::Cost), Just(BauKind::Mef), Just(BauKind::Unopt)]
}

fn product_strategy() -> impl Strategy<Value = Product> {
    prop_oneof![Just(Product::Redispatch), Just(Product::CapacityLimitation)]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, ..ProptestConfig::default() })]

    #[test]
    fn longer_lead_never_hurts(
        seed in any::<u64>(),
        kind in kind_strategy(),
        product in product_strategy(),
        start in 150usize..185,
        len in 1usize..8,
        leads in (1usize..40, 1usize..40),
    ) {
        let c = case(seed);
        let b = bau(&c, kind, false);
        let (short, long) = (leads.0.min(leads.1), leads.0.max(leads.1));
        let a = solve(&c, &b, &request(&c, product, start, len, short, false)).magnitude_kw;
        let z = solve(&c, &b, &request(&c, product, start, len, long, false)).magnitude_kw;
        match product {
            Product::Redispatch => prop_assert!(z >= a - TOL, "{a} -> {z}"),
            Product::CapacityLimitation => prop_assert!(z <= a + TOL, "{a} -> {z}"),
        }
    }

    #[test]
    fn wider_window_never_helps(
        seed in any::<u64>(),
        kind in kind_strategy(),
        product in product_strategy(),
        start in 150usize..180,
        lens in (1usize..8, 1usize..8),
        lead in 1usize..40,
    ) {
        let c = case(seed);
        let b = bau(&c, kind, false);
        let (inner, outer) = (lens.0.min(lens.1), lens.0.max(lens.1));
        let a = solve(&c, &b, &request(&c, product, start, inner, lead, false)).magnitude_kw;
        let z = solve(&c, &b, &request(&c, product, start, outer, lead, false)).magnitude_kw;
        match product {
            Product::Redispatch => prop_assert!(z <= a + TOL, "{a} -> {z}"),
            Product::CapacityLimitation => prop_assert!(z >= a - TOL, "{a} -> {z}"),
        }
    }

    #[test]
    fn v2g_dominates_on_the_same_bau(
        seed in any::<u64>(),
        kind in kind_strategy(),
        product in product_strategy(),
        start in 150usize..185,
        len in 1usize..8,
        lead in 1usize..40,
    ) {
        let c = case(seed);
        let b = bau(&c, kind, false);
        let uni = solve(&c, &b, &request(&c, product, start, len, lead, false)).magnitude_kw;
        let v2g = solve(&c, &b, &request(&c, product, start, len, lead, true)).magnitude_kw;
        match product {
            Product::Redispatch => prop_assert!(v2g >= uni - TOL, "uni {uni} v2g {v2g}"),
            Product::CapacityLimitation => prop_assert!(v2g <= uni + TOL, "uni {uni} v2g {v2g}"),
        }
    }

    #[test]
    fn greedy_bau_ignores_lead_time(
        seed in any::<u64>(),
        product in product_strategy(),
        start in 150usize..185,
        len in 1usize..8,
        leads in (1usize..92, 1usize..92),
    ) {
        let c = case(seed);
        let b = bau(&c, BauKind::Unopt, false);
        let a = solve(&c, &b, &request(&c, product, start, len, leads.0, false)).magnitude_kw;
        let z = solve(&c, &b, &request(&c, product, start, len, leads.1, false)).magnitude_kw;
        prop_assert!((a - z).abs() <= TOL, "{a} vs {z}");
    }

    #[test]
    fn magnitudes_bounds_freeze_and_tightness(
        seed in any::<u64>(),
        kind in kind_strategy(),
        product in product_strategy(),
        v2g in any::<bool>(),
        start in 150usize..185,
        len in 1usize..8,
        lead in 1usize..40,
    ) {
        let c = case(seed);
        let b = bau(&c, kind, v2g);
        let req = request(&c, product, start, len, lead, v2g);
        let r = solve(&c, &b, &req);
        let baseline = aggregate_profile(&b);
        let adjusted = aggregate_profile(&r.adjusted_schedule);
        let window = req.window();
        match product {
            Product::Redispatch => {
                prop_assert!(r.magnitude_kw >= -TOL);
                for t in window.clone() {
                    prop_assert!(adjusted[t] <= baseline[t] - r.magnitude_kw + TOL);
                }
                prop_assert!(window.clone().any(|t| (adjusted[t] - (baseline[t] - r.magnitude_kw)).abs() <= TOL));
            }
            Product::CapacityLimitation => {
                let peak = window.clone().map(|t| baseline[t]).fold(0.0, f64::max);
                prop_assert!(r.magnitude_kw >= 0.0 && r.magnitude_kw <= peak + TOL);
                for t in window.clone() {
                    prop_assert!(adjusted[t] <= r.magnitude_kw + TOL);
                }
                if r.magnitude_kw > TOL {
                    prop_assert!(window.clone().any(|t| (adjusted[t] - r.magnitude_kw).abs() <= TOL));
                }
            }
        }
        let freeze = freeze_step(&req, &c.grid);
        prop_assert_eq!(r.freeze_step, freeze);
        for (row_b, row_a) in b.power_kw().iter().zip(r.adjusted_schedule.power_kw()) {
            for t in 0..freeze {
                prop_assert_eq!((row_b[t] * 1e9).round(), (row_a[t] * 1e9).round());
            }
        }
        let txs = if v2g { &c.v2g } else { &c.uni };
        for (n, tx) in txs.iter().enumerate() {
            let e = &r.adjusted_schedule.energy_kwh()[n];
            prop_assert!(e.iter().all(|&x| x >= -TOL && x <= tx.energy_kwh() + TOL));
            prop_assert!((r.adjusted_schedule.delivered_kwh(n) - tx.energy_kwh()).abs() <= TOL);
            for t in tx.connected() {
                let p = r.adjusted_schedule.power_kw()[n][t];
                prop_assert!(p >= tx.p_min_kw() - TOL && p <= tx.p_max_kw() + TOL);
            }
        }
    }

    #[test]
    fn secondary_objective_keeps_bau_optimum(
        seed in any::<u64>(),
        kind in prop_oneof![Just(BauKind::Cost), Just(BauKind::Mef)],
        product in product_strategy(),
        start in 150usize..185,
        len in 1usize..8,
        lead in 1usize..40,
    ) {
        let c = case(seed);
        let b = bau(&c, kind, false);
        let r = solve(&c, &b, &request(&c, product, start, len, lead, false));
        let delta = match kind {
            BauKind::Cost => r.cost_delta.unwrap(),
            _ => r.emission_delta.unwrap(),
        };
        // BAU is optimal for its own objective over a superset.
        prop_assert!(delta >= -1e-6, "delta {delta}");
        // Where BAU already attains the product optimum the tie-break must return it.
        let baseline = aggregate_profile(&b);
        let bau_value = match product {
            Product::Redispatch => 0.0,
            Product::CapacityLimitation => request(&c, product, start, len, lead, false).window().map(|t| baseline[t]).fold(0.0, f64::max),
        };
        if (r.magnitude_kw - bau_value).abs() <= 1e-9 {
            prop_assert!(delta.abs() <= 1e-6, "magnitude {} delta {delta}", r.magnitude_kw);
        }
    }

    #[test]
    fn window_reduction_matches_full_program(
        seed in any::<u64>(),
        kind in kind_strategy(),
        product in product_strategy(),
        v2g in any::<bool>(),
        start in 150usize..185,
        len in 1usize..8,
        lead in 1usize..40,
    ) {
        let c = case(seed);
        let b = bau(&c, kind, v2g);
        let req = request(&c, product, start, len, lead, v2g);
        let txs = if v2g { &c.v2g } else { &c.uni };
        let reduced = solve_product(&b, txs, &req, Accounting::default(), FlexOptions::default()).unwrap();
        let full = solve_product(&b, txs, &req, Accounting::default(), FlexOptions { restrict_to_window: false, ..FlexOptions::default() })
            .unwrap();
        prop_assert!((reduced.magnitude_kw - full.magnitude_kw).abs() <= TOL, "{} vs {}", reduced.magnitude_kw, full.magnitude_kw);
    }

    #[test]
    fn oracle_agrees_on_tiny_instances(seed in any::<u64>(), v2g in any::<bool>(), kind in kind_strategy()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = common::tiny_instance(&mut rng, v2g);
        let (cmp, sense, bau) = common::compare_bau(kind, &inst);
        prop_assert!(cmp.holds(sense), "lp {} oracle {} bound {}", cmp.lp, cmp.oracle, cmp.bound);
        for product in [Product::Redispatch, Product::CapacityLimitation] {
            let req = common::random_request(&mut rng, &inst, product);
            if let Some((cmp, sense)) = common::compare_product(&bau, &inst, &req) {
                prop_assert!(cmp.holds(sense), "{product}: lp {} oracle {} bound {}", cmp.lp, cmp.oracle, cmp.bound);
            }
        }
    }
}

#[test]
fn oracle_detects_a_wrong_optimum() {
    // Scoring the greedy schedule as if it were cost-optimal must fall
    // outside the bound on some instance with a wide price spread.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let inst = common::tiny_instance(&mut rng, false);
        let (cmp, sense, _) = common::compare_bau(BauKind::Cost, &inst);
        assert!(cmp.holds(sense));
        let unopt = common::compare_bau(BauKind::Unopt, &inst).2;
        let wrong = common::strategy_objective(BauKind::Cost, &inst, unopt.power_kw());
        if wrong - cmp.oracle > cmp.bound + common::SLACK {
            assert!(!common::Comparison { lp: wrong, ..cmp }.holds(sense));
            return;
        }
    }
    panic!("no instance separated the greedy schedule from the optimum");
}
