mod common;

use common::Shape;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use survfin::analysis::{
    aggregate, compensator_increment, diagnose, log_ineq_gap, logsum_gap, numeraire_max_ratio, numeraire_ratio,
    representative,
};
use survfin::market::simulate;
use survfin::strategy::{optimal_proportions, ProportionSpec, SolverOptions};
use survfin::{Proportions, Renormalize, StrategyProfile, StrategyRule};

#[test]
fn log_inequality_is_tight_on_the_diagonal() {
    for a in [1e-6, 0.3, 1.0] {
        assert!(log_ineq_gap(a, a).abs() < 1e-15);
    }
    let x = DVector::from_vec(vec![0.2, 0.3]);
    assert!(logsum_gap(&x, &x).abs() < 1e-15);
}

#[test]
fn representative_strategy_excludes_the_designated_agent() {
    let h = [Proportions::from_slices(&[], &[1.0, 0.0]), Proportions::from_slices(&[], &[0.0, 1.0])];
    let rep = representative(&h, &[0.25, 0.75], 0);
    assert_eq!(rep.bar.beta, DVector::from_vec(vec![0.25, 0.75]));
    assert_eq!(rep.tilde.beta, DVector::from_vec(vec![0.0, 1.0]));
    let alone = representative(&h[..1], &[1.0], 0);
    assert_eq!(alone.tilde.beta, DVector::zeros(2));
}

#[test]
fn diagnostics_of_a_two_agent_market() {
    let shape = Shape { states: 2..=3, exogenous: 1..=2, endogenous: 2..=3, leverage: false, beta_polytope: false };
    let inst = common::instances(42, 1, &shape).remove(0);
    let (n1, n2) = (inst.env.num_exogenous(), inst.env.num_endogenous());
    let rules = vec![
        ("optimal".to_string(), StrategyRule::Optimal, 1.0),
        (
            "fixed".to_string(),
            StrategyRule::Constant { proportions: vec![ProportionSpec { alpha: vec![0.1; n1], beta: vec![0.5 / n2 as f64; n2] }] },
            1.0,
        ),
    ];
    let profile = StrategyProfile::build(&inst.model, &rules, &SolverOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let traj = simulate(&inst.model, &profile, profile.initial_wealth(), 300, Renormalize::Never, &mut rng).unwrap();
    let report = diagnose(&inst.model, &traj, 0).unwrap();
    assert_eq!(report.compensator_increments.len(), 300);
    assert!(report.min_compensator_increment >= -1e-12);
    assert!(report.bound_slack.iter().flatten().all(|&s| s >= -1e-9));
    assert!(report.numeraire.iter().all(|n| n.max_ratio <= 1.0 + 1e-7 && (n.self_ratio - 1.0).abs() < 1e-10));
    for sums in [&report.proximity_partial_sums, &report.dominance_partial_sums] {
        assert!(sums.windows(2).all(|w| w[1] >= w[0]));
    }
    assert_eq!(report.final_r, *traj.relative_wealth(0).last().unwrap());
    assert!(report.final_r > 0.5);
    let agg = aggregate(&[report.clone(), report.clone()]);
    assert_eq!(agg.paths, 2);
    assert_eq!(agg.min_r, report.min_r);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn log_inequality_holds(a in 1e-9f64..1.0, b in 1e-9f64..1.0) {
        prop_assert!(log_ineq_gap(a, b) >= -1e-12);
    }

    #[test]
    fn logsum_inequality_holds(raw in prop::collection::vec((0.0f64..1.0, 1e-6f64..1.0), 1..6), sx in 0.0f64..1.0, sy in 0.0f64..1.0) {
        let (tx, ty): (f64, f64) = raw.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        let x = DVector::from_iterator(raw.len(), raw.iter().map(|(x, _)| if tx > 0.0 { x / tx * sx } else { 0.0 }));
        let y = DVector::from_iterator(raw.len(), raw.iter().map(|(_, y)| y / ty * sy.max(1e-9)));
        prop_assert!(logsum_gap(&x, &y) >= -1e-12);
    }

    #[test]
    fn optimal_agent_has_nonnegative_drift(seed in 0u64..10_000, agents in 2usize..5) {
        let shape = Shape { states: 1..=4, exogenous: 0..=3, endogenous: 1..=3, leverage: true, beta_polytope: true };
        let Some(inst) = common::random_instance(seed, &shape) else { return Ok(()) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let opts = SolverOptions::default();
        let (n1, n2) = (inst.env.num_exogenous(), inst.env.num_endogenous());
        let mut props = Vec::new();
        let s = rng.random_range(0..inst.env.num_states());
        let w: f64 = rng.random_range(0.5..5.0);
        let wealth: Vec<f64> = (0..agents).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = wealth.iter().sum();
        let scaled: Vec<f64> = wealth.iter().map(|v| v / total * w).collect();
        props.push(optimal_proportions(inst.model.state(s), w, &opts).unwrap());
        let alphas = if n1 > 0 { common::sample_alpha(&inst.spec, &inst.env, s, &mut rng, agents) } else { vec![DVector::zeros(0); agents] };
        for a in alphas.into_iter().take(agents - 1) {
            let b = common::sample_beta(&inst.spec, n2, &mut rng, 1).remove(0);
            let room = 1.0 - a.sum();
            let b = if b.sum() > room && b.sum() > 0.0 { &b * (room / b.sum()) } else { b };
            props.push(Proportions::new(a, b));
        }
        let relative: Vec<f64> = scaled.iter().map(|v| v / w).collect();
        let lib = compensator_increment(&inst.model.state(s).law, &props, &relative, w, 0).unwrap();
        let direct = common::compensator(&inst.env, s, &props, &scaled, 0);
        prop_assert!(lib >= -1e-9, "increment {}", lib);
        prop_assert!((lib - direct).abs() < 1e-9);
    }

    #[test]
    fn optimum_is_a_numeraire(seed in 0u64..10_000, w in 0.2f64..20.0) {
        let shape = Shape { states: 1..=3, exogenous: 0..=3, endogenous: 1..=3, leverage: true, beta_polytope: true };
        let Some(inst) = common::random_instance(seed, &shape) else { return Ok(()) };
        let sm = inst.model.state(0);
        let hat = optimal_proportions(sm, w, &SolverOptions::default()).unwrap();
        let (max, argmax) = numeraire_max_ratio(sm, &hat, w).unwrap();
        prop_assert!(max <= 1.0 + 1e-7);
        prop_assert!(sm.budget_set.contains(&argmax.to_vector(), 1e-8));
        prop_assert!((numeraire_ratio(sm, &hat, &hat, w).unwrap() - 1.0).abs() < 1e-10);
        let direct = common::numeraire_ratio(&inst.env, 0, w, &hat, &argmax);
        prop_assert!((direct - max).abs() < 1e-9);
    }
}
