//! Random finite-state environments.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{Environment, Mode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub states: usize,
    #[serde(default)]
    pub exogenous: usize,
    pub endogenous: usize,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    pub seed: u64,
    /// Range of exogenous gross returns.
    #[serde(default = "default_returns")]
    pub returns: (f64, f64),
    /// Range of endogenous payoffs.
    #[serde(default = "default_payoffs")]
    pub payoffs: (f64, f64),
    /// Probability that a payoff entry is zero.
    #[serde(default)]
    pub zero_payoff_probability: f64,
}

fn default_mode() -> Mode {
    Mode::Iid
}

fn default_returns() -> (f64, f64) {
    (0.8, 1.3)
}

fn default_payoffs() -> (f64, f64) {
    (0.05, 1.0)
}

impl GeneratorSpec {
    pub fn new(states: usize, exogenous: usize, endogenous: usize, mode: Mode, seed: u64) -> Self {
        GeneratorSpec {
            states,
            exogenous,
            endogenous,
            mode,
            seed,
            returns: default_returns(),
            payoffs: default_payoffs(),
            zero_payoff_probability: 0.0,
        }
    }

    pub fn generate(&self) -> Result<Environment> {
        let (s, n1, n2) = (self.states, self.exogenous, self.endogenous);
        if s == 0 || n2 == 0 {
            return Err(Error::invalid("generator needs at least one state and one endogenous asset"));
        }
        let (rl, rh) = self.returns;
        let (yl, yh) = self.payoffs;
        if !(rl > 0.0 && rl <= rh && rh.is_finite()) || !(yl >= 0.0 && yl <= yh && yh.is_finite()) {
            return Err(Error::invalid("generator ranges must be ordered, finite, with positive returns"));
        }
        if !(0.0..1.0).contains(&self.zero_payoff_probability) {
            return Err(Error::invalid("zero payoff probability must lie in [0, 1)"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let row = |rng: &mut ChaCha8Rng| {
            let w: Vec<f64> = (0..s).map(|_| 0.2 + rng.random::<f64>()).collect();
            let total: f64 = w.iter().sum();
            w.into_iter().map(|v| v / total).collect::<Vec<f64>>()
        };
        let transition = match self.mode {
            Mode::Iid => {
                let r = row(&mut rng);
                DMatrix::from_fn(s, s, |_, j| r[j])
            }
            Mode::Markov => {
                let rows: Vec<Vec<f64>> = (0..s).map(|_| row(&mut rng)).collect();
                DMatrix::from_fn(s, s, |i, j| rows[i][j])
            }
        };
        let x = DMatrix::from_fn(s, n1, |_, _| rng.random_range(rl..=rh));
        let mut y = DMatrix::from_fn(s, n2, |_, _| {
            if rng.random::<f64>() < self.zero_payoff_probability {
                0.0
            } else {
                rng.random_range(yl..=yh)
            }
        });
        // Every state pays something.
        for i in 0..s {
            if y.row(i).sum() <= 0.0 {
                y[(i, rng.random_range(0..n2))] = yh.max(1e-3);
            }
        }
        Environment::new(self.mode, normalize_rows(transition), x, y, 0)
    }
}

/// Rescales rows to sum to one exactly in floating point where possible.
fn normalize_rows(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for mut r in m.row_iter_mut() {
        let total: f64 = r.sum();
        r /= total;
        let drift: f64 = 1.0 - r.sum();
        let last = r.len() - 1;
        r[last] += drift;
    }
    m
}
