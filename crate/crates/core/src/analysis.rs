//! Diagnostics of simulated markets.
//!
//! All expectations are exact sums over the next-state law, so the checks
//! carry floating-point error only. The designated agent is agent 0.

use nalgebra::DVector;
use serde::Serialize;

use crate::environment::ConditionalLaw;
use crate::error::{Error, Result};
use crate::lp::LpOutcome;
use crate::market::{clear_prices, gross_return, MarketTrajectory};
use crate::model::{MarketModel, StateModel};
use crate::strategy::{EffectivePayoffs, Proportions};

/// Tolerance of the convergence flag in [`survival_stats`].
pub const SURVIVAL_TOL: f64 = 1e-3;

/// Wealth-weighted average strategies.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentativeStrategies {
    /// Average over all agents.
    pub bar: Proportions,
    /// Average over agents other than the designated one, `0/0 = 0`.
    pub tilde: Proportions,
}

pub fn representative(proportions: &[Proportions], relative: &[f64], agent: usize) -> RepresentativeStrategies {
    let n1 = proportions[0].alpha.len();
    let n2 = proportions[0].beta.len();
    let weighted = |weights: &dyn Fn(usize) -> f64| {
        proportions.iter().enumerate().fold(
            Proportions::new(DVector::zeros(n1), DVector::zeros(n2)),
            |acc, (m, h)| {
                let w = weights(m);
                Proportions::new(acc.alpha + &h.alpha * w, acc.beta + &h.beta * w)
            },
        )
    };
    let rest = 1.0 - relative[agent];
    RepresentativeStrategies {
        bar: weighted(&|m| relative[m]),
        tilde: weighted(&|m| if m == agent || rest <= 0.0 { 0.0 } else { relative[m] / rest }),
    }
}

/// Relative wealth of `agent` after moving to the support point `k`.
fn next_relative(
    law: &ConditionalLaw,
    k: usize,
    proportions: &[Proportions],
    relative: &[f64],
    market_wealth: f64,
    agent: usize,
) -> f64 {
    let betas: Vec<&DVector<f64>> = proportions.iter().map(|h| &h.beta).collect();
    // Wealth in units of market wealth; payoffs scaled accordingly.
    let prices = clear_prices(&betas, relative);
    let y = &law.y_vals[k] / market_wealth;
    let next: Vec<f64> = proportions
        .iter()
        .zip(relative)
        .map(|(h, &r)| if r == 0.0 { 0.0 } else { gross_return(h, &law.x_vals[k], &y, &prices) * r })
        .collect();
    let total: f64 = next.iter().sum();
    if total > 0.0 {
        next[agent] / total
    } else {
        0.0
    }
}

/// `E[ln r'] - ln r` for `agent`, all proportions held fixed. Returns `-inf`
/// if the agent is ruined on some next state.
pub fn compensator_increment(
    law: &ConditionalLaw,
    proportions: &[Proportions],
    relative: &[f64],
    market_wealth: f64,
    agent: usize,
) -> Result<f64> {
    if !(relative[agent] > 0.0) {
        return Err(Error::invalid("designated agent has no wealth"));
    }
    let expected = law.expect_indexed(|k| {
        let r = next_relative(law, k, proportions, relative, market_wealth, agent);
        if r > 0.0 {
            r.ln()
        } else {
            f64::NEG_INFINITY
        }
    })?;
    Ok(expected - relative[agent].ln())
}

/// `Q = max over A of <alpha, x> + |Y| / W` for the next-state values `x, y`.
pub fn q_value(sm: &StateModel, x: &DVector<f64>, y_total: f64, market_wealth: f64) -> Result<f64> {
    let best = if x.is_empty() {
        0.0
    } else {
        match sm.projected_alpha.maximize(x)? {
            LpOutcome::Optimal { value, .. } => value,
            _ => return Err(Error::numerical("exogenous value maximization failed")),
        }
    };
    let q = best + y_total / market_wealth;
    if !(q > 0.0) {
        return Err(Error::numerical(format!("non-positive normalizer Q = {q}")));
    }
    Ok(q)
}

/// `(<alpha^1 - alpha', x> / Q)^2 + |beta^1 - beta'|^2`.
pub fn series_term(h: &Proportions, other: &Proportions, x: &DVector<f64>, q: f64) -> f64 {
    let a = (&h.alpha - &other.alpha).dot(x) / q;
    a * a + (&h.beta - &other.beta).norm_squared()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesTerms {
    pub proximity: f64,
    pub dominance: f64,
    pub q: f64,
}

/// Proximity and dominance terms of step `t` along the realized next state.
pub fn series_terms(model: &MarketModel, traj: &MarketTrajectory, t: usize, agent: usize) -> Result<SeriesTerms> {
    let st = &traj.states[t];
    let step = &traj.steps[t];
    let env = model.environment();
    let x = env.x(step.next_state);
    let y = env.y(step.next_state);
    let q = q_value(model.state(st.state), &x, y.sum(), st.market_wealth())?;
    let rep = representative(&step.proportions, &st.relative, agent);
    let h = &step.proportions[agent];
    Ok(SeriesTerms { proximity: series_term(h, &rep.bar, &x, q), dominance: series_term(h, &rep.tilde, &x, q), q })
}

/// `E[(<alpha^1 - alpha_bar, X> / (2Q))^2] + |beta^1 - beta_bar|^2 / 4`, the
/// lower bound on the compensator increment when `B` is the whole simplex slice.
pub fn strengthened_bound(sm: &StateModel, proportions: &[Proportions], relative: &[f64], market_wealth: f64, agent: usize) -> Result<f64> {
    let rep = representative(proportions, relative, agent);
    let h = &proportions[agent];
    let diff = &h.alpha - &rep.bar.alpha;
    let mut total = 0.0;
    for (k, (x, y)) in sm.law.x_vals.iter().zip(&sm.law.y_vals).enumerate() {
        let q = q_value(sm, x, y.sum(), market_wealth)?;
        let a = diff.dot(x) / (2.0 * q);
        total += sm.law.probs[k] * a * a;
    }
    Ok(total + (&h.beta - &rep.bar.beta).norm_squared() / 4.0)
}

/// `F^n = beta^{1,n} / sum_m r^m beta^{m,n}` with `0/0 = 0`.
pub fn f_ratio(proportions: &[Proportions], relative: &[f64], agent: usize) -> DVector<f64> {
    let bar = representative(proportions, relative, agent).bar.beta;
    let h = &proportions[agent].beta;
    DVector::from_fn(h.len(), |n, _| if bar[n] > 0.0 { h[n] / bar[n] } else { 0.0 })
}

/// Endogenous returns `Z^n = Y~^n / (beta^n W)` when everyone holds `h`, `0/0 = 0`.
pub fn numeraire_returns(eff: &EffectivePayoffs, h: &Proportions, market_wealth: f64) -> Vec<DVector<f64>> {
    eff.values
        .iter()
        .map(|y| {
            DVector::from_fn(y.len(), |n, _| {
                if y[n] == 0.0 || h.beta[n] == 0.0 {
                    0.0
                } else {
                    y[n] / (h.beta[n] * market_wealth)
                }
            })
        })
        .collect()
}

/// `E[(<alpha, X> + <beta, Z>) / (<alpha_hat, X> + <beta_hat, Z>)]`.
pub fn numeraire_ratio(sm: &StateModel, h_hat: &Proportions, h: &Proportions, market_wealth: f64) -> Result<f64> {
    let z = numeraire_returns(&sm.effective, h_hat, market_wealth);
    sm.law.expect_indexed(|k| h.value(&sm.law.x_vals[k], &z[k]) / h_hat.value(&sm.law.x_vals[k], &z[k]))
}

/// `E ln(<alpha_hat, X> + <beta_hat, Z>) - E ln(<alpha, X> + <beta, Z>)`.
pub fn numeraire_log_gap(sm: &StateModel, h_hat: &Proportions, h: &Proportions, market_wealth: f64) -> Result<f64> {
    let z = numeraire_returns(&sm.effective, h_hat, market_wealth);
    let log_value = |p: &Proportions| {
        sm.law.expect_indexed(|k| {
            let v = p.value(&sm.law.x_vals[k], &z[k]);
            if v > 0.0 {
                v.ln()
            } else {
                f64::NEG_INFINITY
            }
        })
    };
    Ok(log_value(h_hat)? - log_value(h)?)
}

/// Maximum of the numéraire ratio over `C`. The ratio is linear in `(alpha, beta)`.
pub fn numeraire_max_ratio(sm: &StateModel, h_hat: &Proportions, market_wealth: f64) -> Result<(f64, Proportions)> {
    let z = numeraire_returns(&sm.effective, h_hat, market_wealth);
    let n1 = h_hat.alpha.len();
    let n2 = h_hat.beta.len();
    let mut c = DVector::zeros(n1 + n2);
    for (k, p) in sm.law.probs.iter().enumerate() {
        let d = h_hat.value(&sm.law.x_vals[k], &z[k]);
        for j in 0..n1 {
            c[j] += p * sm.law.x_vals[k][j] / d;
        }
        for n in 0..n2 {
            c[n1 + n] += p * z[k][n] / d;
        }
    }
    match sm.budget_set.maximize(&c)? {
        LpOutcome::Optimal { x, value } => Ok((value, Proportions::from_vector(&x, n1))),
        _ => Err(Error::numerical("numéraire ratio maximization failed")),
    }
}

/// `ln((a+b)/2) - (ln a + ln b)/2 - (a-b)^2/8`, non-negative on `(0, 1]^2`.
pub fn log_ineq_gap(a: f64, b: f64) -> f64 {
    ((a + b) / 2.0).ln() - (a.ln() + b.ln()) / 2.0 - (a - b) * (a - b) / 8.0
}

/// `<x, ln x - ln y> - |x - y|^2/4 - |x| + |y|` with `0 ln 0 = 0`; non-negative
/// when `|x|, |y| <= 1` and `y^n = 0` implies `x^n = 0`.
pub fn logsum_gap(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let kl: f64 = x.iter().zip(y.iter()).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a.ln() - b.ln())).sum();
    kl - (x - y).norm_squared() / 4.0 - x.sum() + y.sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurvivalStats {
    pub initial_r: f64,
    pub min_r: f64,
    pub final_r: f64,
    /// `|r_T - r_{T/2}| < SURVIVAL_TOL`.
    pub converged: bool,
}

pub fn survival_stats(traj: &MarketTrajectory, agent: usize) -> SurvivalStats {
    let r = traj.relative_wealth(agent);
    let last = *r.last().expect("trajectory has an initial state");
    SurvivalStats {
        initial_r: r[0],
        min_r: r.iter().copied().fold(f64::INFINITY, f64::min),
        final_r: last,
        converged: (last - r[r.len() / 2]).abs() < SURVIVAL_TOL,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NumeraireCheck {
    pub t: usize,
    /// Largest ratio over the admissible set; at most one.
    pub max_ratio: f64,
    /// Ratio of the designated agent's own proportions; exactly one.
    pub self_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub agent: usize,
    pub compensator_increments: Vec<f64>,
    pub min_compensator_increment: f64,
    /// Increment minus its lower bound; present in states where `B` is the whole simplex slice.
    pub bound_slack: Vec<Option<f64>>,
    pub numeraire: Vec<NumeraireCheck>,
    pub proximity_partial_sums: Vec<f64>,
    pub dominance_partial_sums: Vec<f64>,
    pub q_values: Vec<f64>,
    /// `max_n |beta^{1,n} - p^n / W|`.
    pub price_gaps: Vec<f64>,
    pub f_ratios: Vec<Vec<f64>>,
    pub min_r: f64,
    pub final_r: f64,
    pub survival: SurvivalStats,
}

/// Every diagnostic along a trajectory for `agent`.
pub fn diagnose(model: &MarketModel, traj: &MarketTrajectory, agent: usize) -> Result<DiagnosticsReport> {
    let horizon = traj.horizon();
    let mut increments = Vec::with_capacity(horizon);
    let mut bound_slack = Vec::with_capacity(horizon);
    let mut numeraire = Vec::with_capacity(horizon);
    let mut proximity = Vec::with_capacity(horizon);
    let mut dominance = Vec::with_capacity(horizon);
    let mut q_values = Vec::with_capacity(horizon);
    let mut price_gaps = Vec::with_capacity(horizon);
    let mut f_ratios = Vec::with_capacity(horizon);
    let (mut prox, mut dom) = (0.0, 0.0);
    for t in 0..horizon {
        let st = &traj.states[t];
        let step = &traj.steps[t];
        let sm = model.state(st.state);
        let w = st.market_wealth();
        let h = &step.proportions[agent];
        if st.relative[agent] > 0.0 {
            let inc = compensator_increment(&sm.law, &step.proportions, &st.relative, w, agent)?;
            increments.push(inc);
            bound_slack.push(if sm.spec.has_simplex_beta() {
                Some(inc - strengthened_bound(sm, &step.proportions, &st.relative, w, agent)?)
            } else {
                None
            });
            let (max_ratio, _) = numeraire_max_ratio(sm, h, w)?;
            let self_ratio = numeraire_ratio(sm, h, h, w)?;
            numeraire.push(NumeraireCheck { t, max_ratio, self_ratio });
        } else {
            increments.push(f64::NEG_INFINITY);
            bound_slack.push(None);
        }
        let terms = series_terms(model, traj, t, agent)?;
        prox += terms.proximity;
        dom += terms.dominance;
        proximity.push(prox);
        dominance.push(dom);
        q_values.push(terms.q);
        let rho = &step.prices / st.total;
        price_gaps.push((&h.beta - rho).amax());
        f_ratios.push(f_ratio(&step.proportions, &st.relative, agent).iter().copied().collect());
    }
    let survival = survival_stats(traj, agent);
    Ok(DiagnosticsReport {
        agent,
        min_compensator_increment: increments.iter().copied().fold(f64::INFINITY, f64::min),
        compensator_increments: increments,
        bound_slack,
        numeraire,
        proximity_partial_sums: proximity,
        dominance_partial_sums: dominance,
        q_values,
        price_gaps,
        f_ratios,
        min_r: survival.min_r,
        final_r: survival.final_r,
        survival,
    })
}

/// Summary over paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateDiagnostics {
    pub paths: usize,
    pub min_compensator_increment: f64,
    pub min_bound_slack: Option<f64>,
    pub max_numeraire_ratio: f64,
    pub min_r: f64,
    pub mean_final_r: f64,
    pub max_final_proximity_sum: f64,
    pub min_final_dominance_sum: f64,
}

pub fn aggregate(reports: &[DiagnosticsReport]) -> AggregateDiagnostics {
    let fold_min = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::INFINITY, f64::min);
    let fold_max = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::NEG_INFINITY, f64::max);
    let slacks: Vec<f64> = reports.iter().flat_map(|r| r.bound_slack.iter().flatten().copied()).collect();
    AggregateDiagnostics {
        paths: reports.len(),
        min_compensator_increment: fold_min(&mut reports.iter().map(|r| r.min_compensator_increment)),
        min_bound_slack: (!slacks.is_empty()).then(|| fold_min(&mut slacks.iter().copied())),
        max_numeraire_ratio: fold_max(&mut reports.iter().flat_map(|r| r.numeraire.iter().map(|n| n.max_ratio))),
        min_r: fold_min(&mut reports.iter().map(|r| r.min_r)),
        mean_final_r: reports.iter().map(|r| r.final_r).sum::<f64>() / reports.len().max(1) as f64,
        max_final_proximity_sum: fold_max(&mut reports.iter().map(|r| r.proximity_partial_sums.last().copied().unwrap_or(0.0))),
        min_final_dominance_sum: fold_min(&mut reports.iter().map(|r| r.dominance_partial_sums.last().copied().unwrap_or(0.0))),
    }
}
