mod common;

use common::{brute_force_shapley, random_table_game, residual_ok, rng};
use proptest::prelude::*;
use semshap::shapley::{
    enumerate_coalitions_priority, explain, sample_coalitions_montecarlo, shapley_kernel_weight,
    Coalition, ExplainConfig, FnGame, SamplerKind, TableGame,
};

#[test]
fn exact_matches_permutation_formula() {
    let mut r = rng(11);
    for m in 3..=8 {
        for _ in 0..50 {
            let game = random_table_game(m, &mut r);
            let e = explain(&game, m, &ExplainConfig::exact()).unwrap();
            let oracle = brute_force_shapley(&game, m);
            for (a, b) in e.phi.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-9, "m={m}: {a} vs {b}");
            }
            assert!(residual_ok(&e));
        }
    }
}

#[test]
fn glove_game_closed_form() {
    // one left glove (player 0) and two right gloves: phi = (2/3, 1/6, 1/6)
    let game = FnGame(|c: &Coalition| {
        if c.contains(0) && (c.contains(1) || c.contains(2)) {
            1.0
        } else {
            0.0
        }
    });
    let e = explain(&game, 3, &ExplainConfig::exact()).unwrap();
    let expected = [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];
    for (a, b) in e.phi.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn priority_weights_never_increase() {
    for m in 2..=12 {
        let weights: Vec<f64> = enumerate_coalitions_priority(m).unwrap().map(|c| c.weight).collect();
        assert_eq!(weights.len(), (1 << m) - 2);
        assert!(weights.windows(2).all(|w| w[1] <= w[0]), "m={m}");
    }
}

#[test]
fn montecarlo_first_draw_follows_kernel_mass() {
    // M = 4: sizes 1 and 3 hold 8 of the 11 units of kernel mass
    let trials = 20_000;
    let (mut small, mut extreme) = (0usize, 0usize);
    for seed in 0..trials {
        let c = sample_coalitions_montecarlo(4, 1, seed).unwrap()[0].coalition;
        match c.size() {
            1 => {
                small += 1;
                extreme += 1;
            }
            3 => extreme += 1,
            _ => {}
        }
    }
    let p_extreme = extreme as f64 / trials as f64;
    let p_single = small as f64 / trials as f64;
    assert!((p_extreme - 8.0 / 11.0).abs() < 0.01, "{p_extreme}");
    assert!((p_single - 4.0 / 11.0).abs() < 0.01, "{p_single}");
}

fn arb_game() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (2usize..=7).prop_flat_map(|m| (Just(m), prop::collection::vec(-10.0f64..10.0, 1 << m)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn efficiency_for_every_sampler((m, values) in arb_game(), frac in 0.05f64..1.0, seed in any::<u64>()) {
        let game = TableGame::new(m, values).unwrap();
        let pool = (1usize << m) - 2;
        let budget = ((pool as f64 * frac).ceil() as usize).clamp(1, pool);
        for cfg in [
            ExplainConfig::exact(),
            ExplainConfig::priority(budget),
            ExplainConfig::montecarlo(budget, seed),
        ] {
            let e = explain(&game, m, &cfg).unwrap();
            prop_assert!(residual_ok(&e), "{:?} residual {}", cfg.sampler, e.efficiency_residual());
        }
    }

    #[test]
    fn inert_feature_gets_nothing((m, values) in arb_game(), inert in 0usize..7) {
        let inert = inert % m;
        // v(S) = table value of S with the inert player removed
        let game = FnGame(move |c: &Coalition| values[c.without(inert).bits() as usize]);
        let e = explain(&game, m, &ExplainConfig::exact()).unwrap();
        prop_assert!(e.phi[inert].abs() <= 1e-9);
    }

    #[test]
    fn interchangeable_players_share_equally((m, values) in arb_game(), i in 0usize..7, j in 0usize..7) {
        let (i, j) = (i % m, j % m);
        prop_assume!(i != j);
        // symmetrise: v(S) = (t(S) + t(swap_ij S)) / 2
        let swap = move |bits: u32| {
            let (bi, bj) = ((bits >> i) & 1, (bits >> j) & 1);
            (bits & !(1 << i) & !(1 << j)) | (bj << i) | (bi << j)
        };
        let game = FnGame(move |c: &Coalition| {
            (values[c.bits() as usize] + values[swap(c.bits()) as usize]) / 2.0
        });
        let e = explain(&game, m, &ExplainConfig::exact()).unwrap();
        prop_assert!((e.phi[i] - e.phi[j]).abs() <= 1e-9);
    }

    #[test]
    fn kernel_weight_is_symmetric(m in 2usize..=30, s in 1usize..30) {
        prop_assume!(s < m);
        prop_assert_eq!(shapley_kernel_weight(m, s).unwrap(), shapley_kernel_weight(m, m - s).unwrap());
    }

    #[test]
    fn priority_is_reproducible((m, values) in arb_game(), budget in 1usize..30) {
        let game = TableGame::new(m, values).unwrap();
        let budget = budget.min((1 << m) - 2);
        let a = explain(&game, m, &ExplainConfig::priority(budget)).unwrap();
        let b = explain(&game, m, &ExplainConfig::priority(budget)).unwrap();
        prop_assert_eq!(a.sampler, SamplerKind::Priority);
        prop_assert_eq!(
            a.phi.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.phi.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
