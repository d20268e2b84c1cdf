//! Experiment configuration documents (TOML).
//!
//! ```toml
//! [environment]
//! mode = "iid"
//! probabilities = [0.5, 0.5]
//! exogenous = [[1.1], [0.9]]
//! payoffs = [[1.0, 0.2], [0.3, 0.8]]
//!
//! [constraints]
//! alpha = { kind = "nonneg" }
//! beta = { kind = "simplex" }
//!
//! [[agents]]
//! name = "optimal"
//! rule = { kind = "optimal" }
//! wealth = 1.0
//!
//! [run]
//! horizon = 100
//! seed = 7
//! ```
//!
//! Syntax errors and semantic errors carry the line of the offending entry.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::constraints::{AlphaSet, BetaSet, ConstraintSpec};
use crate::environment::{Environment, Mode};
use crate::error::{Error, Result};
use crate::generate::GeneratorSpec;
use crate::market::Renormalize;
use crate::model::MarketModel;
use crate::optimize::AscentOptions;
use crate::strategy::{SolverOptions, StrategyProfile, StrategyRule, TruncationSchedule};

pub const MAX_STATES: usize = 64;
pub const MAX_ASSETS: usize = 16;
pub const MAX_AGENTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentBlock {
    #[serde(default)]
    pub mode: Option<Mode>,
    /// `S x S` row-stochastic matrix.
    #[serde(default)]
    pub transition: Option<Vec<Vec<f64>>>,
    /// Iid next-state distribution.
    #[serde(default)]
    pub probabilities: Option<Vec<f64>>,
    /// `S x N1` gross returns; omitted when there are no exogenous assets.
    #[serde(default)]
    pub exogenous: Option<Vec<Vec<f64>>>,
    /// `S x N2` payoffs.
    #[serde(default)]
    pub payoffs: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub initial_state: usize,
    #[serde(default)]
    pub generator: Option<GeneratorSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateOverride {
    pub state: usize,
    #[serde(default)]
    pub alpha: Option<AlphaSet>,
    #[serde(default)]
    pub beta: Option<BetaSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsBlock {
    #[serde(default = "default_alpha")]
    pub alpha: AlphaSet,
    #[serde(default = "default_beta")]
    pub beta: BetaSet,
    #[serde(default)]
    pub per_state: Vec<Spanned<StateOverride>>,
}

fn default_alpha() -> AlphaSet {
    AlphaSet::Nonneg
}

fn default_beta() -> BetaSet {
    BetaSet::Simplex
}

impl Default for ConstraintsBlock {
    fn default() -> Self {
        ConstraintsBlock { alpha: default_alpha(), beta: default_beta(), per_state: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentBlock {
    pub name: String,
    pub rule: StrategyRule,
    pub wealth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub horizon: usize,
    #[serde(default = "default_paths")]
    pub paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub renormalize: Renormalize,
    #[serde(default = "default_output")]
    pub output: String,
}

fn default_paths() -> usize {
    1
}

fn default_output() -> String {
    "out".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub max_iterations: Option<usize>,
    #[serde(default)]
    pub starts: Option<usize>,
    /// Also solve the truncated problems for indices `2^0..=2^k`.
    #[serde(default)]
    pub truncation_exponent: Option<u32>,
    #[serde(default)]
    pub verify: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: Spanned<EnvironmentBlock>,
    #[serde(default)]
    pub constraints: Option<Spanned<ConstraintsBlock>>,
    pub agents: Vec<Spanned<AgentBlock>>,
    pub run: Spanned<RunBlock>,
    #[serde(default)]
    pub solver: Option<Spanned<SolverBlock>>,
}

/// A configuration together with its source text, for locating errors.
#[derive(Debug, Clone)]
pub struct ConfigDocument {
    pub text: String,
    pub config: ExperimentConfig,
}

/// Everything a run needs, validated.
pub struct Experiment {
    pub document: ConfigDocument,
    pub model: Arc<MarketModel>,
    pub profile: StrategyProfile,
    pub solver: SolverOptions,
}

fn line_of(text: &str, offset: usize) -> usize {
    text.as_bytes()[..offset.min(text.len())].iter().filter(|&&b| b == b'\n').count() + 1
}

/// Parses a configuration without validating its contents.
pub fn parse_config(text: &str) -> Result<ConfigDocument> {
    match toml::from_str::<ExperimentConfig>(text) {
        Ok(config) => Ok(ConfigDocument { text: text.to_string(), config }),
        Err(e) => Err(Error::Config {
            line: e.span().map(|s| line_of(text, s.start)),
            message: e.message().to_string(),
        }),
    }
}

/// Parses and fully validates a configuration.
pub fn load_config(text: &str) -> Result<Experiment> {
    parse_config(text)?.build()
}

fn matrix(rows: &[Vec<f64>], cols_hint: usize, what: &str) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(cols_hint, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != cols) {
        return Err(Error::invalid(format!("{what} row {i} has {} entries, expected {cols}", rows[i].len())));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

impl ConfigDocument {
    pub fn line(&self, span: Range<usize>) -> usize {
        line_of(&self.text, span.start)
    }

    /// Anchors argument errors at `span`; other errors pass through.
    fn at<T>(&self, span: Range<usize>, res: Result<T>) -> Result<T> {
        res.map_err(|e| match e {
            Error::InvalidArgument(message) => Error::Config { line: Some(self.line(span)), message },
            other => other,
        })
    }

    pub fn environment(&self) -> Result<Environment> {
        let block = &self.config.environment;
        self.at(block.span(), environment_from(block.get_ref()))
    }

    /// One constraint specification per state.
    pub fn constraint_specs(&self, env: &Environment) -> Result<Vec<ConstraintSpec>> {
        let states = env.num_states();
        let Some(block) = &self.config.constraints else {
            return Ok(vec![ConstraintSpec::default(); states]);
        };
        let b = block.get_ref();
        let mut specs = vec![ConstraintSpec::new(b.alpha.clone(), b.beta.clone()); states];
        for o in &b.per_state {
            let ov = o.get_ref();
            if ov.state >= states {
                return Err(Error::Config {
                    line: Some(self.line(o.span())),
                    message: format!("override for state {} but there are {states} states", ov.state),
                });
            }
            if let Some(a) = &ov.alpha {
                specs[ov.state].alpha = a.clone();
            }
            if let Some(bs) = &ov.beta {
                specs[ov.state].beta = bs.clone();
            }
        }
        // Surface malformed sets with the line of the block.
        for spec in &specs {
            let res = spec.alpha_polytope_unconditioned(env.num_exogenous()).and_then(|_| spec.beta_polytope(env.num_endogenous()));
            self.at(block.span(), res.map(|_| ()))?;
        }
        Ok(specs)
    }

    pub fn solver_options(&self) -> Result<SolverOptions> {
        let mut opts = SolverOptions::default();
        let Some(block) = &self.config.solver else {
            return Ok(opts);
        };
        let b = block.get_ref();
        let res = (|| {
            if let Some(t) = b.tolerance {
                if !(t > 0.0 && t < 1.0) {
                    return Err(Error::invalid("solver tolerance must lie in (0, 1)"));
                }
                opts.ascent = AscentOptions { tolerance: t, ..opts.ascent };
            }
            if let Some(m) = b.max_iterations {
                if m == 0 {
                    return Err(Error::invalid("max_iterations must be positive"));
                }
                opts.ascent.max_iterations = m;
            }
            if let Some(s) = b.starts {
                if s == 0 {
                    return Err(Error::invalid("starts must be positive"));
                }
                opts.starts = s;
            }
            if let Some(k) = b.truncation_exponent {
                if k > 40 {
                    return Err(Error::invalid("truncation_exponent must be at most 40"));
                }
                opts.schedule = Some(TruncationSchedule::powers_of_two(k, TruncationSchedule::default().tolerance())?);
            }
            if let Some(v) = b.verify {
                opts.verify = v;
            }
            Ok(opts)
        })();
        self.at(block.span(), res)
    }

    pub fn validate_run(&self) -> Result<()> {
        let run = &self.config.run;
        let r = run.get_ref();
        let res = if r.paths == 0 {
            Err(Error::invalid("run needs at least one path"))
        } else if r.output.is_empty() {
            Err(Error::invalid("output directory must not be empty"))
        } else {
            Ok(())
        };
        self.at(run.span(), res)
    }

    /// Validates every block and builds the market and its agents.
    pub fn build(self) -> Result<Experiment> {
        let env = self.environment()?;
        let specs = self.constraint_specs(&env)?;
        let solver = self.solver_options()?;
        self.validate_run()?;
        if self.config.agents.is_empty() {
            return Err(Error::Config { line: None, message: "at least one [[agents]] entry is required".into() });
        }
        if self.config.agents.len() > MAX_AGENTS {
            return Err(Error::Config { line: None, message: format!("at most {MAX_AGENTS} agents are supported") });
        }
        let model = Arc::new(MarketModel::new(env, specs)?);
        let mut agents = Vec::with_capacity(self.config.agents.len());
        for a in &self.config.agents {
            let b = a.get_ref();
            agents.push((b.name.clone(), b.rule.clone(), b.wealth));
            // Build one at a time so a failure names its entry.
            self.at(a.span(), StrategyProfile::build(&model, &agents[agents.len() - 1..], &solver).map(|_| ()))?;
        }
        let profile = StrategyProfile::build(&model, &agents, &solver)?;
        Ok(Experiment { document: self, model, profile, solver })
    }
}

fn environment_from(b: &EnvironmentBlock) -> Result<Environment> {
    if let Some(g) = &b.generator {
        if b.transition.is_some() || b.probabilities.is_some() || b.exogenous.is_some() || b.payoffs.is_some() {
            return Err(Error::invalid("a generated environment cannot also list matrices"));
        }
        if g.states > MAX_STATES || g.exogenous > MAX_ASSETS || g.endogenous > MAX_ASSETS {
            return Err(Error::invalid(format!(
                "generator supports at most {MAX_STATES} states and {MAX_ASSETS} assets of each kind"
            )));
        }
        if b.mode.is_some_and(|m| m != g.mode) {
            return Err(Error::invalid("environment mode and generator mode disagree"));
        }
        let env = g.generate()?;
        if b.initial_state != 0 {
            return Environment::new(
                env.mode(),
                env.transition().clone(),
                env.exogenous_returns().clone(),
                env.payoffs().clone(),
                b.initial_state,
            );
        }
        return Ok(env);
    }
    let payoffs = b.payoffs.as_ref().ok_or_else(|| Error::invalid("environment needs payoffs or a generator"))?;
    let s = payoffs.len();
    if s > MAX_STATES {
        return Err(Error::invalid(format!("at most {MAX_STATES} states are supported")));
    }
    let y = matrix(payoffs, 0, "payoffs")?;
    let x = match &b.exogenous {
        Some(rows) => {
            if rows.len() != s {
                return Err(Error::invalid(format!("exogenous has {} rows, payoffs has {s}", rows.len())));
            }
            matrix(rows, 0, "exogenous")?
        }
        None => DMatrix::zeros(s, 0),
    };
    if x.ncols() > MAX_ASSETS || y.ncols() > MAX_ASSETS {
        return Err(Error::invalid(format!("at most {MAX_ASSETS} assets of each kind are supported")));
    }
    match (&b.transition, &b.probabilities) {
        (Some(_), Some(_)) => Err(Error::invalid("give either transition or probabilities, not both")),
        (None, None) => Err(Error::invalid("environment needs transition or probabilities")),
        (None, Some(p)) => {
            if b.mode == Some(Mode::Markov) {
                return Err(Error::invalid("markov mode needs a transition matrix"));
            }
            if p.len() != s {
                return Err(Error::invalid(format!("{} probabilities for {s} states", p.len())));
            }
            Environment::iid(p, x, y, b.initial_state)
        }
        (Some(t), None) => {
            if t.len() != s {
                return Err(Error::invalid(format!("transition has {} rows for {s} states", t.len())));
            }
            let p = matrix(t, s, "transition")?;
            Environment::new(b.mode.unwrap_or(Mode::Markov), p, x, y, b.initial_state)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[environment]
probabilities = [1.0]
payoffs = [[1.0]]

[[agents]]
name = "a"
rule = { kind = "optimal" }
wealth = 1.0

[run]
horizon = 3
seed = 1
"#;

    #[test]
    fn minimal_config_loads() {
        let e = load_config(MINIMAL).unwrap();
        assert_eq!(e.profile.len(), 1);
        assert_eq!(e.document.config.run.get_ref().paths, 1);
        assert_eq!(e.model.environment().num_exogenous(), 0);
    }

    #[test]
    fn syntax_errors_carry_lines() {
        let text = MINIMAL.replace("horizon = 3", "horizon = three");
        match parse_config(&text) {
            Err(Error::Config { line: Some(l), .. }) => assert_eq!(l, 12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn semantic_errors_carry_lines() {
        let text = MINIMAL.replace("payoffs = [[1.0]]", "payoffs = [[1.0]]\ninitial_state = 4");
        match load_config(&text) {
            Err(Error::Config { line: Some(l), .. }) => assert_eq!(l, 2),
            Err(e) => panic!("unexpected {e}"),
            Ok(_) => panic!("accepted bad initial state"),
        }
        let text = MINIMAL.replace("wealth = 1.0", "wealth = -1.0");
        match load_config(&text) {
            Err(Error::Config { line: Some(l), .. }) => assert_eq!(l, 6),
            Err(e) => panic!("unexpected {e}"),
            Ok(_) => panic!("accepted negative wealth"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = MINIMAL.replace("seed = 1", "seed = 1\nsed = 2");
        assert!(matches!(parse_config(&text), Err(Error::Config { line: Some(_), .. })));
    }
}
