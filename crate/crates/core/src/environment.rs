//! Finite-state stochastic environment.
//!
//! The environment is a Markov chain on `S` states. Entering state `k`
//! realizes the exogenous gross returns `X[k]` and the endogenous payoffs
//! `Y[k]`, so the conditional law of `(X_{t+1}, Y_{t+1})` given the current
//! state is a finite mixture and every conditional expectation is an exact
//! finite sum.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Iid,
    Markov,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Environment {
    mode: Mode,
    transition: DMatrix<f64>,
    exogenous: DMatrix<f64>,
    payoffs: DMatrix<f64>,
    initial_state: usize,
}

impl Environment {
    /// Validates and builds an environment.
    ///
    /// `exogenous` is `S x N1` (strictly positive gross returns), `payoffs` is
    /// `S x N2` (non-negative total payoffs, unit supply).
    pub fn new(
        mode: Mode,
        transition: DMatrix<f64>,
        exogenous: DMatrix<f64>,
        payoffs: DMatrix<f64>,
        initial_state: usize,
    ) -> Result<Self> {
        let s = transition.nrows();
        if s == 0 {
            return Err(Error::invalid("environment needs at least one state"));
        }
        if transition.ncols() != s {
            return Err(Error::invalid(format!(
                "transition matrix must be square, got {}x{}",
                s,
                transition.ncols()
            )));
        }
        if exogenous.nrows() != s || payoffs.nrows() != s {
            return Err(Error::invalid(format!(
                "return and payoff matrices need {s} rows (got {} and {})",
                exogenous.nrows(),
                payoffs.nrows()
            )));
        }
        if payoffs.ncols() == 0 {
            return Err(Error::invalid("at least one endogenous asset is required"));
        }
        for (i, row) in transition.row_iter().enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::invalid(format!(
                    "transition row {i} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::invalid(format!(
                    "transition row {i} sums to {sum}, expected 1"
                )));
            }
        }
        if mode == Mode::Iid {
            let first = transition.row(0).clone_owned();
            for i in 1..s {
                if transition.row(i) != first {
                    return Err(Error::invalid(format!(
                        "iid mode requires identical transition rows (row {i} differs)"
                    )));
                }
            }
        }
        if let Some((k, n)) = find(&exogenous, |x| !(x.is_finite() && x > 0.0)) {
            return Err(Error::invalid(format!(
                "exogenous return X[{k}][{n}] = {} must be finite and > 0",
                exogenous[(k, n)]
            )));
        }
        if let Some((k, n)) = find(&payoffs, |y| !(y.is_finite() && y >= 0.0)) {
            return Err(Error::invalid(format!(
                "payoff Y[{k}][{n}] = {} must be finite and >= 0",
                payoffs[(k, n)]
            )));
        }
        if initial_state >= s {
            return Err(Error::invalid(format!(
                "initial state {initial_state} out of range for {s} states"
            )));
        }
        Ok(Environment { mode, transition, exogenous, payoffs, initial_state })
    }

    /// Iid environment: every state transitions according to `probs`.
    pub fn iid(
        probs: &[f64],
        exogenous: DMatrix<f64>,
        payoffs: DMatrix<f64>,
        initial_state: usize,
    ) -> Result<Self> {
        let s = probs.len();
        let transition = DMatrix::from_fn(s, s, |_, j| probs[j]);
        Environment::new(Mode::Iid, transition, exogenous, payoffs, initial_state)
    }

    pub fn num_states(&self) -> usize {
        self.transition.nrows()
    }

    pub fn num_exogenous(&self) -> usize {
        self.exogenous.ncols()
    }

    pub fn num_endogenous(&self) -> usize {
        self.payoffs.ncols()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn exogenous_returns(&self) -> &DMatrix<f64> {
        &self.exogenous
    }

    pub fn payoffs(&self) -> &DMatrix<f64> {
        &self.payoffs
    }

    /// Gross exogenous returns realized on entering `state`.
    pub fn x(&self, state: usize) -> DVector<f64> {
        self.exogenous.row(state).transpose()
    }

    /// Endogenous payoffs realized on entering `state`.
    pub fn y(&self, state: usize) -> DVector<f64> {
        self.payoffs.row(state).transpose()
    }

    fn check_state(&self, state: usize) -> Result<()> {
        if state >= self.num_states() {
            return Err(Error::invalid(format!(
                "state {state} out of range for {} states",
                self.num_states()
            )));
        }
        Ok(())
    }

    /// Conditional law of the next-period returns and payoffs given `state`,
    /// with zero-probability branches removed.
    pub fn conditional_law(&self, state: usize) -> Result<ConditionalLaw> {
        self.check_state(state)?;
        let mut support = Vec::new();
        let mut probs = Vec::new();
        let mut x_vals = Vec::new();
        let mut y_vals = Vec::new();
        for (next, &p) in self.transition.row(state).iter().enumerate() {
            if p > 0.0 {
                support.push(next);
                probs.push(p);
                x_vals.push(self.x(next));
                y_vals.push(self.y(next));
            }
        }
        Ok(ConditionalLaw { support, probs, x_vals, y_vals })
    }

    /// Draws the next state from the transition row of `state`.
    pub fn sample_next<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> Result<usize> {
        self.check_state(state)?;
        let row = self.transition.row(state);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (next, &p) in row.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last_positive = next;
                if u < acc {
                    return Ok(next);
                }
            }
        }
        // Rounding in the cumulative sum can leave u just above it.
        Ok(last_positive)
    }
}

fn find(m: &DMatrix<f64>, bad: impl Fn(f64) -> bool) -> Option<(usize, usize)> {
    (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
        .find(|&(i, j)| bad(m[(i, j)]))
}

/// Finite conditional distribution of `(X_{t+1}, Y_{t+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalLaw {
    pub support: Vec<usize>,
    pub probs: Vec<f64>,
    pub x_vals: Vec<DVector<f64>>,
    pub y_vals: Vec<DVector<f64>>,
}

impl ConditionalLaw {
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn num_exogenous(&self) -> usize {
        self.x_vals.first().map_or(0, |x| x.len())
    }

    pub fn num_endogenous(&self) -> usize {
        self.y_vals.first().map_or(0, |y| y.len())
    }

    /// Exact conditional expectation `sum_k p_k f(x_k, y_k)`.
    ///
    /// A `-inf` term on any support point makes the result `-inf`; a NaN
    /// term is reported together with the offending state index.
    pub fn expect<F>(&self, mut f: F) -> Result<f64>
    where
        F: FnMut(&DVector<f64>, &DVector<f64>) -> f64,
    {
        self.expect_indexed(|k| f(&self.x_vals[k], &self.y_vals[k]))
    }

    /// [`expect`](Self::expect) with the integrand given the support index.
    pub fn expect_indexed<F>(&self, mut f: F) -> Result<f64>
    where
        F: FnMut(usize) -> f64,
    {
        let mut total = 0.0;
        let mut neg_inf = false;
        for k in 0..self.len() {
            let v = f(k);
            if v.is_nan() {
                return Err(Error::Numerical {
                    message: "integrand evaluated to NaN".into(),
                    state: Some(self.support[k]),
                });
            }
            if v == f64::NEG_INFINITY {
                neg_inf = true;
            } else {
                total += self.probs[k] * v;
            }
        }
        Ok(if neg_inf { f64::NEG_INFINITY } else { total })
    }

    /// Vector-valued version of [`expect`](Self::expect) without the
    /// extended-real handling; used for gradients.
    pub fn expect_vec<F>(&self, dim: usize, mut f: F) -> DVector<f64>
    where
        F: FnMut(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
    {
        let mut acc = DVector::zeros(dim);
        for k in 0..self.len() {
            acc += f(&self.x_vals[k], &self.y_vals[k]) * self.probs[k];
        }
        acc
    }
}
