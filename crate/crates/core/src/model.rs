//! A validated market: environment plus per-state constraints, with the
//! sets and laws every solver needs precomputed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::constraints::{
    bounded_arbitrage, cone_counterexample, detect_unbounded_arbitrage, feasible_point, fmt_vec, null_space,
    projected_alpha_polytope, ConstraintSpec, NullSpaceBasis,
};
use crate::environment::{ConditionalLaw, Environment};
use crate::error::{Assumption, Error, Result};
use crate::lp::LpOutcome;
use crate::polytope::Polytope;
use crate::strategy::{effective_payoffs, EffectivePayoffs, Proportions};

/// Points sampled per set for the cone property.
pub const CONE_SAMPLES: usize = 1000;

#[derive(Debug, Clone)]
pub struct StateModel {
    pub state: usize,
    pub law: ConditionalLaw,
    pub spec: ConstraintSpec,
    /// `A` including the non-negative-value cuts.
    pub alpha_set: Polytope,
    pub null_space: NullSpaceBasis,
    /// `A^p = A ∩ L^perp`.
    pub projected_alpha: Polytope,
    pub beta_set: Polytope,
    /// `C = (A x B) ∩ H`.
    pub budget_set: Polytope,
    pub effective: EffectivePayoffs,
    /// A point of `C` with positive value on every next state.
    pub feasible: Proportions,
}

impl StateModel {
    fn build(env: &Environment, state: usize, spec: &ConstraintSpec) -> Result<Self> {
        let law = env.conditional_law(state)?;
        let alpha_set = spec.alpha_polytope(&law)?;
        let null_space = null_space(&law);
        let projected_alpha = projected_alpha_polytope(spec, &law, &null_space)?;
        if !projected_alpha.is_bounded()? {
            let detail = match detect_unbounded_arbitrage(spec, &law)? {
                Some(u) => format!("unbounded arbitrage along {} in state {state}", fmt_vec(&u)),
                None => format!("projected constraint set is unbounded in state {state}"),
            };
            return Err(Error::assumption(Assumption::A5, detail));
        }
        let beta_set = spec.beta_polytope(law.num_endogenous())?;
        let budget_set = spec.budget_polytope(&law)?;
        let effective = effective_payoffs(&law, spec)?;
        let feasible = feasible_point(spec, &law)?;
        Ok(StateModel {
            state,
            law,
            spec: spec.clone(),
            alpha_set,
            null_space,
            projected_alpha,
            beta_set,
            budget_set,
            effective,
            feasible,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MarketModel {
    env: Environment,
    states: Vec<StateModel>,
}

impl MarketModel {
    /// Validates every assumption in every state; the first violation is
    /// returned as an error naming the assumption.
    pub fn new(env: Environment, specs: Vec<ConstraintSpec>) -> Result<Self> {
        if specs.len() != env.num_states() {
            return Err(Error::invalid(format!(
                "{} constraint specifications for {} states",
                specs.len(),
                env.num_states()
            )));
        }
        let report = validate(&env, &specs)?;
        if let Some((state, first)) = report.first_failure() {
            // Unbounded arbitrage is the cause of an unbounded projected set;
            // name it when both fail.
            let check = report.states[state]
                .checks
                .iter()
                .find(|c| c.status == CheckStatus::Fail && c.assumption == Some(Assumption::A5))
                .unwrap_or(first);
            return Err(Error::assumption(
                check.assumption.expect("failures name an assumption"),
                format!("state {state}: {}", check.detail),
            ));
        }
        let states = specs
            .iter()
            .enumerate()
            .map(|(s, spec)| StateModel::build(&env, s, spec))
            .collect::<Result<Vec<_>>>()?;
        Ok(MarketModel { env, states })
    }

    /// The same constraints in every state.
    pub fn uniform(env: Environment, spec: ConstraintSpec) -> Result<Self> {
        let specs = vec![spec; env.num_states()];
        MarketModel::new(env, specs)
    }

    pub fn environment(&self) -> &Environment {
        &self.env
    }

    pub fn state(&self, s: usize) -> &StateModel {
        &self.states[s]
    }

    pub fn states(&self) -> &[StateModel] {
        &self.states
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub assumption: Option<Assumption>,
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

impl Check {
    fn verdict(assumption: Assumption, failure: Option<String>, pass: impl Into<String>) -> Self {
        let (status, detail) = match failure {
            Some(d) => (CheckStatus::Fail, d),
            None => (CheckStatus::Pass, pass.into()),
        };
        Check { assumption: Some(assumption), name: assumption.label().to_string(), status, detail }
    }

    fn info(name: &str, detail: String) -> Self {
        Check { assumption: None, name: name.to_string(), status: CheckStatus::Info, detail }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateReport {
    pub state: usize,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub states: Vec<StateReport>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.first_failure().is_none()
    }

    pub fn first_failure(&self) -> Option<(usize, &Check)> {
        self.states
            .iter()
            .flat_map(|s| s.checks.iter().map(move |c| (s.state, c)))
            .find(|(_, c)| c.status == CheckStatus::Fail)
    }

    /// Pass/fail per assumption over all states.
    pub fn summary(&self) -> Vec<(Assumption, bool)> {
        Assumption::ALL
            .iter()
            .map(|&a| {
                let ok = self
                    .states
                    .iter()
                    .flat_map(|s| &s.checks)
                    .filter(|c| c.assumption == Some(a))
                    .all(|c| c.status != CheckStatus::Fail);
                (a, ok)
            })
            .collect()
    }
}

fn assumption_failure(res: Result<()>, which: Assumption) -> Result<Option<String>> {
    match res {
        Ok(()) => Ok(None),
        Err(Error::Assumption { assumption, detail }) if assumption == which => Ok(Some(detail)),
        Err(e) => Err(e),
    }
}

/// Runs every assumption check in every state without stopping at failures.
pub fn validate(env: &Environment, specs: &[ConstraintSpec]) -> Result<ValidationReport> {
    let mut states = Vec::with_capacity(specs.len());
    for (s, spec) in specs.iter().enumerate() {
        let law = env.conditional_law(s)?;
        let n1 = law.num_exogenous();
        let n2 = law.num_endogenous();
        let mut checks = Vec::new();

        // Non-negative exogenous values: cuts are added to A; report whether
        // the user-supplied set already satisfied them.
        let raw = spec.alpha_polytope_unconditioned(n1)?;
        let mut cut_rows = 0;
        for x in &law.x_vals {
            let binding = match raw.maximize(&(-x))? {
                LpOutcome::Optimal { value, .. } => value > 1e-9,
                LpOutcome::Unbounded { .. } => true,
                LpOutcome::Infeasible => false,
            };
            cut_rows += usize::from(binding);
        }
        checks.push(Check {
            assumption: Some(Assumption::A1),
            name: Assumption::A1.label().to_string(),
            status: CheckStatus::Pass,
            detail: if cut_rows == 0 {
                "every admissible exogenous portfolio has non-negative value".to_string()
            } else {
                format!("enforced by {cut_rows} value cut(s) on the exogenous set")
            },
        });

        let (a2_fail, a2_pass) = match feasible_point(spec, &law) {
            Ok(h) => (None, format!("feasible point alpha = {}, beta = {}", fmt_vec(&h.alpha), fmt_vec(&h.beta))),
            Err(Error::Assumption { assumption: Assumption::A2, detail }) => (Some(detail), String::new()),
            Err(e) => return Err(e),
        };
        checks.push(Check::verdict(Assumption::A2, a2_fail, a2_pass));

        let basis = null_space(&law);
        checks.push(Check::info(
            "null investments",
            if basis.is_trivial() {
                "trivial".to_string()
            } else {
                let vs: Vec<String> = basis.basis.iter().map(fmt_vec).collect();
                format!("dimension {}: {}", basis.basis.len(), vs.join(", "))
            },
        ));

        let a3 = assumption_failure(projected_alpha_polytope(spec, &law, &basis).map(|_| ()), Assumption::A3)?;
        let a3_failed = a3.is_some();
        checks.push(Check::verdict(Assumption::A3, a3, "projection onto the complement of null investments stays in A"));

        let arbitrage = detect_unbounded_arbitrage(spec, &law)?;
        let bounded = if a3_failed { None } else { Some(projected_alpha_polytope(spec, &law, &basis)?.is_bounded()?) };
        checks.push(Check::verdict(
            Assumption::A4,
            match bounded {
                Some(false) => Some("projected constraint set is unbounded".to_string()),
                _ => None,
            },
            if a3_failed { "not evaluated" } else { "projected constraint set is compact" },
        ));
        checks.push(Check::verdict(
            Assumption::A5,
            arbitrage.map(|u| format!("unbounded arbitrage along {}", fmt_vec(&u))),
            "no unbounded arbitrage",
        ));
        if let Some(u) = bounded_arbitrage(spec, &law)? {
            checks.push(Check::info("bounded arbitrage", format!("admissible arbitrage portfolio {}", fmt_vec(&u))));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c0de ^ s as u64);
        let alpha_set = spec.alpha_polytope(&law)?;
        checks.push(Check::verdict(
            Assumption::ConeA,
            cone_counterexample(&alpha_set, &mut rng, CONE_SAMPLES)?
                .map(|(x, l)| format!("{} scaled by {l:.4} leaves A", fmt_vec(&x))),
            format!("{CONE_SAMPLES} sampled points"),
        ));
        let beta_set = spec.beta_polytope(n2)?;
        checks.push(Check::verdict(
            Assumption::ConeB,
            cone_counterexample(&beta_set, &mut rng, CONE_SAMPLES)?
                .map(|(x, l)| format!("{} scaled by {l:.4} leaves B", fmt_vec(&x))),
            format!("{CONE_SAMPLES} sampled points"),
        ));
        states.push(StateReport { state: s, checks });
    }
    Ok(ValidationReport { states })
}
