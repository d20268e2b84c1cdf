//! Market clearing and the wealth recursion.
//!
//! Each endogenous asset is in unit supply and its price equals the wealth
//! invested in it, `p^n = sum_m beta^{m,n} v^m`. An agent's wealth then
//! evolves as
//!
//! ```text
//! v'^m = (<alpha^m, X'> + sum_n beta^{m,n} Y'^n / p^n) v^m,     0/0 = 0.
//! ```
//!
//! Wealth is stored relative to a scale `exp(log_scale)` so long horizons
//! neither overflow nor underflow; every reported quantity is absolute.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MarketModel;
use crate::strategy::{Observation, Proportions, StrategyProfile};

/// Relative tolerance of the market-wealth identity.
pub const IDENTITY_TOL: f64 = 1e-9;
/// Horizon above which automatic renormalization switches on.
pub const AUTO_RENORMALIZE_HORIZON: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct MarketState {
    pub t: usize,
    pub state: usize,
    /// Wealth in units of `exp(log_scale)`.
    pub wealth: Vec<f64>,
    pub log_scale: f64,
    /// `sum_m wealth^m`, in the same units.
    pub total: f64,
    pub relative: Vec<f64>,
}

impl MarketState {
    pub fn initial(state: usize, wealth: Vec<f64>) -> Result<Self> {
        if wealth.is_empty() || wealth.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("initial wealth must be positive and finite for every agent"));
        }
        Ok(MarketState::from_parts(0, state, wealth, 0.0))
    }

    fn from_parts(t: usize, state: usize, wealth: Vec<f64>, log_scale: f64) -> Self {
        let total: f64 = wealth.iter().sum();
        let relative = wealth.iter().map(|&v| if total > 0.0 { v / total } else { 0.0 }).collect();
        MarketState { t, state, wealth, log_scale, total, relative }
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn absolute_wealth(&self) -> Vec<f64> {
        let s = self.scale();
        self.wealth.iter().map(|v| v * s).collect()
    }

    pub fn market_wealth(&self) -> f64 {
        self.total * self.scale()
    }
}

/// What happened between `t` and `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub proportions: Vec<Proportions>,
    /// Clearing prices in the wealth units of the state at `t`.
    pub prices: DVector<f64>,
    pub next_state: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketTrajectory {
    /// States at `t = 0..=T`.
    pub states: Vec<MarketState>,
    /// Steps `t -> t + 1` for `t = 0..T`.
    pub steps: Vec<StepRecord>,
}

impl MarketTrajectory {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Absolute clearing prices at time `t < T`.
    pub fn absolute_prices(&self, t: usize) -> DVector<f64> {
        &self.steps[t].prices * self.states[t].scale()
    }

    pub fn relative_wealth(&self, agent: usize) -> Vec<f64> {
        self.states.iter().map(|s| s.relative[agent]).collect()
    }
}

/// `p^n = sum_m beta^{m,n} v^m`.
pub fn clear_prices(betas: &[&DVector<f64>], wealth: &[f64]) -> DVector<f64> {
    let n2 = betas.first().map_or(0, |b| b.len());
    betas.iter().zip(wealth).fold(DVector::zeros(n2), |acc, (b, &v)| acc + *b * v)
}

/// Units held, `y^{m,n} = beta^{m,n} v^m / p^n`, zero where `p^n = 0`.
pub fn holdings(betas: &[&DVector<f64>], wealth: &[f64], prices: &DVector<f64>) -> Vec<DVector<f64>> {
    betas
        .iter()
        .zip(wealth)
        .map(|(b, &v)| DVector::from_fn(prices.len(), |n, _| if prices[n] > 0.0 { b[n] * v / prices[n] } else { 0.0 }))
        .collect()
}

/// Wealth per unit of current wealth after one period: `<alpha, x> + sum_n beta^n y^n / p^n`.
pub fn gross_return(h: &Proportions, x: &DVector<f64>, y: &DVector<f64>, prices: &DVector<f64>) -> f64 {
    let endo: f64 = (0..prices.len())
        .filter(|&n| prices[n] > 0.0 && h.beta[n] != 0.0)
        .map(|n| h.beta[n] * y[n] / prices[n])
        .sum();
    h.alpha.dot(x) + endo
}

/// Proportions of every agent at `state`; zero-wealth agents are given the
/// state's reference point since their choice has no effect.
pub fn decide_all(model: &MarketModel, profile: &StrategyProfile, state: &MarketState) -> Result<Vec<Proportions>> {
    let abs = state.absolute_wealth();
    let w = state.market_wealth();
    let sm = model.state(state.state);
    // The optimal rule depends on the absolute market wealth once exogenous
    // assets are present; renormalization cannot help if it leaves f64 range.
    if model.environment().num_exogenous() > 0 && !(w.is_finite() && w > 0.0) {
        return Err(Error::Numerical {
            message: format!("market wealth {w} outside floating-point range at t = {}", state.t),
            state: Some(state.state),
        });
    }
    let budget = crate::constraints::SimplexBudget {
        n1: model.environment().num_exogenous(),
        n2: model.environment().num_endogenous(),
    };
    profile
        .agents
        .iter()
        .enumerate()
        .map(|(m, agent)| {
            if state.wealth[m] == 0.0 {
                return Ok(sm.feasible.clone());
            }
            let obs = Observation { t: state.t, state: state.state, agent: m, wealth: &abs, market_wealth: w };
            let h = agent.strategy.decide(&obs)?;
            if !budget.contains(&h, 1e-9) {
                return Err(Error::Invariant(format!(
                    "agent {} chose proportions outside the budget set at t = {}",
                    agent.name, state.t
                )));
            }
            Ok(h)
        })
        .collect()
}

/// Advances the market to `next_state` given everyone's proportions.
pub fn step(
    model: &MarketModel,
    state: &MarketState,
    proportions: Vec<Proportions>,
    next_state: usize,
    renormalize: bool,
) -> Result<(MarketState, StepRecord)> {
    let env = model.environment();
    let betas: Vec<&DVector<f64>> = proportions.iter().map(|h| &h.beta).collect();
    let prices = clear_prices(&betas, &state.wealth);
    let x = env.x(next_state);
    // Payoffs in the stored wealth units.
    let y = env.y(next_state) / state.scale();
    let mut next: Vec<f64> = proportions
        .iter()
        .zip(&state.wealth)
        .map(|(h, &v)| if v == 0.0 { 0.0 } else { gross_return(h, &x, &y, &prices) * v })
        .collect();
    let total: f64 = next.iter().sum();
    for (m, v) in next.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v < -1e-12 * total.abs().max(f64::MIN_POSITIVE) {
                return Err(Error::Invariant(format!(
                    "(A.1) violated: wealth of agent {m} becomes negative ({:e}) at t = {}",
                    *v,
                    state.t + 1
                )));
            }
            *v = 0.0;
        }
    }
    let total: f64 = next.iter().sum();
    // Market wealth = exogenous returns on invested wealth + payoffs of held assets.
    let exo: f64 = proportions
        .iter()
        .zip(&state.relative)
        .map(|(h, r)| r * h.alpha.dot(&x))
        .sum::<f64>()
        * state.total;
    let paid: f64 = (0..prices.len()).filter(|&n| prices[n] > 0.0).map(|n| y[n]).sum();
    if (exo + paid - total).abs() > IDENTITY_TOL * total.max(f64::MIN_POSITIVE) {
        return Err(Error::Invariant(format!(
            "market wealth identity fails at t = {}: {total:e} vs {:e}",
            state.t + 1,
            exo + paid
        )));
    }
    let mut log_scale = state.log_scale;
    if renormalize && total > 0.0 {
        for v in &mut next {
            *v /= total;
        }
        log_scale += total.ln();
    }
    let record = StepRecord { proportions, prices, next_state };
    Ok((MarketState::from_parts(state.t + 1, next_state, next, log_scale), record))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Renormalize {
    /// On for horizons above [`AUTO_RENORMALIZE_HORIZON`].
    #[default]
    Auto,
    Always,
    Never,
}

impl Renormalize {
    pub fn active(self, horizon: usize) -> bool {
        match self {
            Renormalize::Auto => horizon > AUTO_RENORMALIZE_HORIZON,
            Renormalize::Always => true,
            Renormalize::Never => false,
        }
    }
}

/// Simulates `horizon` periods from the environment's initial state.
pub fn simulate<R: Rng + ?Sized>(
    model: &MarketModel,
    profile: &StrategyProfile,
    initial_wealth: Vec<f64>,
    horizon: usize,
    renormalize: Renormalize,
    rng: &mut R,
) -> Result<MarketTrajectory> {
    if initial_wealth.len() != profile.len() {
        return Err(Error::invalid(format!(
            "{} initial wealths for {} agents",
            initial_wealth.len(),
            profile.len()
        )));
    }
    let env = model.environment();
    let renorm = renormalize.active(horizon);
    let mut state = MarketState::initial(env.initial_state(), initial_wealth)?;
    let mut states = Vec::with_capacity(horizon + 1);
    let mut steps = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let proportions = decide_all(model, profile, &state)?;
        let next_state = env.sample_next(state.state, rng)?;
        let (next, record) = step(model, &state, proportions, next_state, renorm)?;
        states.push(std::mem::replace(&mut state, next));
        steps.push(record);
    }
    states.push(state);
    Ok(MarketTrajectory { states, steps })
}
