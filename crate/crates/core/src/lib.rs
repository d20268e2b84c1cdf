//! Multi-agent markets with exogenous and endogenous short-lived assets, the
//! relative growth optimal strategy, and diagnostics for its survival and
//! dominance properties on finite-state environments.

pub mod analysis;
pub mod config;
pub mod constraints;
pub mod environment;
pub mod error;
pub mod experiment;
pub mod generate;
pub mod lp;
pub mod market;
pub mod model;
pub mod optimize;
pub mod polytope;
pub mod qp;
pub mod strategy;

pub use constraints::{AlphaSet, BetaSet, ConstraintSpec, NullSpaceBasis, SimplexBudget};
pub use environment::{ConditionalLaw, Environment, Mode};
pub use error::{Assumption, Error, Result};
pub use generate::GeneratorSpec;
pub use market::{MarketState, MarketTrajectory, Renormalize};
pub use model::MarketModel;
pub use strategy::{Proportions, StrategyProfile, StrategyRule, TruncationSchedule};
