mod common;

use std::sync::Arc;

use common::Shape;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use survfin::market::{clear_prices, holdings, simulate};
use survfin::strategy::{ProportionSpec, SolverOptions};
use survfin::{
    AlphaSet, BetaSet, ConstraintSpec, Environment, Error, MarketModel, Renormalize, StrategyProfile, StrategyRule,
};

fn competitors(rng: &mut ChaCha8Rng, n1: usize, n2: usize, count: usize) -> Vec<(String, StrategyRule, f64)> {
    let mut rules = vec![("optimal".to_string(), StrategyRule::Optimal, rng.random_range(0.5..2.0))];
    for j in 1..count {
        let rule = match j % 3 {
            0 => StrategyRule::PerturbedOptimal { noise: 0.2, seed: rng.random() },
            1 => StrategyRule::Constant {
                proportions: vec![ProportionSpec {
                    alpha: (0..n1).map(|_| rng.random_range(0.0..0.4)).collect(),
                    beta: (0..n2).map(|_| rng.random::<f64>()).collect(),
                }],
            },
            _ => StrategyRule::KellyEndogenous,
        };
        rules.push((format!("agent{j}"), rule, rng.random_range(0.5..2.0)));
    }
    rules
}

#[test]
fn renormalization_does_not_change_the_path() {
    let shape = Shape { states: 2..=3, exogenous: 1..=2, endogenous: 1..=2, leverage: false, beta_polytope: false };
    for inst in common::instances(77, 5, &shape) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rules = competitors(&mut rng, inst.env.num_exogenous(), inst.env.num_endogenous(), 3);
        let profile = StrategyProfile::build(&inst.model, &rules, &SolverOptions::default()).unwrap();
        let run = |mode| {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            simulate(&inst.model, &profile, profile.initial_wealth(), 200, mode, &mut rng).unwrap()
        };
        let (plain, scaled) = (run(Renormalize::Never), run(Renormalize::Always));
        for (a, b) in plain.states.iter().zip(&scaled.states) {
            assert_eq!(a.state, b.state);
            assert!(b.t == 0 || (b.total - 1.0).abs() < 1e-12);
            let (wa, wb) = (a.market_wealth(), b.market_wealth());
            assert!((wa - wb).abs() <= 1e-9 * wa);
            for (ra, rb) in a.relative.iter().zip(&b.relative) {
                assert!((ra - rb).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn wealth_overflow_is_a_numerical_error() {
    let env = Environment::iid(&[1.0], DMatrix::from_element(1, 1, 1e200), DMatrix::from_element(1, 1, 1.0), 0).unwrap();
    let model = Arc::new(MarketModel::uniform(env, ConstraintSpec::new(AlphaSet::Nonneg, BetaSet::Simplex)).unwrap());
    let rules = vec![("optimal".to_string(), StrategyRule::Optimal, 1.0)];
    let profile = StrategyProfile::build(&model, &rules, &SolverOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let res = simulate(&model, &profile, vec![1.0], 10, Renormalize::Always, &mut rng);
    assert!(matches!(res, Err(Error::Numerical { .. })), "{:?}", res.err());
}

#[test]
fn single_agent_holds_the_whole_market() {
    let shape = Shape { states: 1..=3, exogenous: 0..=2, endogenous: 1..=3, leverage: false, beta_polytope: false };
    let inst = common::instances(3, 1, &shape).remove(0);
    let rules = vec![("solo".to_string(), StrategyRule::Optimal, 1.0)];
    let profile = StrategyProfile::build(&inst.model, &rules, &SolverOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let traj = simulate(&inst.model, &profile, vec![1.0], 50, Renormalize::Never, &mut rng).unwrap();
    assert!(traj.relative_wealth(0).iter().all(|&r| r == 1.0));
}

#[test]
fn unbought_assets_have_zero_price_and_no_holders() {
    let env = Environment::iid(&[0.5, 0.5], DMatrix::zeros(2, 0), DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 1.0]), 0)
        .unwrap();
    let model = Arc::new(MarketModel::uniform(env, ConstraintSpec::new(AlphaSet::Nonneg, BetaSet::Simplex)).unwrap());
    let only_first = StrategyRule::Constant { proportions: vec![ProportionSpec { alpha: vec![], beta: vec![1.0, 0.0] }] };
    let rules = vec![("a".to_string(), only_first.clone(), 1.0), ("b".to_string(), only_first, 3.0)];
    let profile = StrategyProfile::build(&model, &rules, &SolverOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let traj = simulate(&model, &profile, profile.initial_wealth(), 5, Renormalize::Never, &mut rng).unwrap();
    for t in 0..5 {
        assert_eq!(traj.steps[t].prices[1], 0.0);
        assert!((traj.states[t + 1].relative[0] - 0.25).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn market_clears_and_wealth_follows_the_budget(seed in 0u64..10_000, agents in 1usize..5) {
        let shape = Shape { states: 1..=4, exogenous: 0..=3, endogenous: 1..=3, leverage: true, beta_polytope: true };
        let Some(inst) = common::random_instance(seed, &shape) else { return Ok(()) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n1, n2) = (inst.env.num_exogenous(), inst.env.num_endogenous());
        let rules = competitors(&mut rng, n1, n2, agents);
        let profile = StrategyProfile::build(&inst.model, &rules, &SolverOptions::default()).unwrap();
        let traj = simulate(&inst.model, &profile, profile.initial_wealth(), 30, Renormalize::Never, &mut rng).unwrap();
        for t in 0..traj.horizon() {
            let st = &traj.states[t];
            let step = &traj.steps[t];
            let betas: Vec<_> = step.proportions.iter().map(|h| &h.beta).collect();
            let prices = clear_prices(&betas, &st.wealth);
            prop_assert_eq!(&prices, &step.prices);
            for (n, units) in (0..n2).map(|n| (n, holdings(&betas, &st.wealth, &prices).iter().map(|y| y[n]).sum::<f64>())) {
                if prices[n] > 0.0 {
                    prop_assert!((units - 1.0).abs() < 1e-12);
                }
            }
            let next = common::next_wealth(
                &step.proportions,
                &st.absolute_wealth(),
                &inst.env.x(step.next_state),
                &inst.env.y(step.next_state),
            );
            let actual = traj.states[t + 1].absolute_wealth();
            for (a, b) in actual.iter().zip(&next) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
            prop_assert!((traj.states[t + 1].relative.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(traj.states[t + 1].relative.iter().all(|&r| r >= 0.0));
        }
    }
}
