//! Investment proportions, the relative growth optimal strategy and the
//! competitor rules used in simulations.
//!
//! The optimal exogenous proportions solve
//!
//! ```text
//! maximize  E ln(<alpha, X> W + |Y~|) - <e, alpha>   over the projected set A^p
//! ```
//!
//! where `Y~` keeps only the payoffs of endogenous assets that the
//! constraints allow to hold. The endogenous proportions then maximize
//! `sum_n c_n ln beta_n` over `B` with `|beta| = 1 - <e, alpha>`, where
//! `c_n = E[Y~^n / (<alpha, X> W + |Y~|)]`. The same maximizer is also
//! reachable through the smooth truncations `g_i(x) = 1/i + i atan(x/i)`,
//! which are kept as an independent validation path.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintSpec;
use crate::environment::ConditionalLaw;
use crate::error::{Assumption, Error, Result};
use crate::lp::LpOutcome;
use crate::model::{MarketModel, StateModel};
use crate::optimize::{maximize, maximize_multistart, AscentOptions, ConcaveObjective};
use crate::polytope::Polytope;

/// First-order conditions must hold to this accuracy.
pub const CERTIFICATE_TOL: f64 = 1e-7;
/// Agreement required between the direct and the truncated solution paths.
pub const PATH_AGREEMENT_TOL: f64 = 1e-6;
const POSITIVE_TOL: f64 = 1e-12;

/// Investment proportions `h = (alpha, beta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Proportions {
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
}

impl Proportions {
    pub fn new(alpha: DVector<f64>, beta: DVector<f64>) -> Self {
        Proportions { alpha, beta }
    }

    pub fn from_slices(alpha: &[f64], beta: &[f64]) -> Self {
        Proportions::new(DVector::from_column_slice(alpha), DVector::from_column_slice(beta))
    }

    /// Splits `(alpha, beta)` stacked in one vector.
    pub fn from_vector(v: &DVector<f64>, n1: usize) -> Self {
        Proportions::new(v.rows(0, n1).clone_owned(), v.rows(n1, v.len() - n1).clone_owned())
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.alpha.len() + self.beta.len(),
            self.alpha.iter().chain(self.beta.iter()).copied(),
        )
    }

    /// Portfolio value per unit of wealth when endogenous assets return `z`.
    pub fn value(&self, x: &DVector<f64>, z: &DVector<f64>) -> f64 {
        self.alpha.dot(x) + self.beta.dot(z)
    }
}

/// Increasing truncation indices for the `g_i` validation path.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationSchedule {
    indices: Vec<u64>,
    tolerance: f64,
}

impl TruncationSchedule {
    pub fn new(indices: Vec<u64>, tolerance: f64) -> Result<Self> {
        if indices.is_empty() || indices[0] < 1 || indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("truncation indices must be strictly increasing and at least 1"));
        }
        if !(tolerance > 0.0) {
            return Err(Error::invalid("truncation tolerance must be positive"));
        }
        Ok(TruncationSchedule { indices, tolerance })
    }

    /// `1, 2, 4, ..., 2^max_exponent`.
    pub fn powers_of_two(max_exponent: u32, tolerance: f64) -> Result<Self> {
        TruncationSchedule::new((0..=max_exponent).map(|k| 1u64 << k).collect(), tolerance)
    }

    pub fn indices(&self) -> &[u64] {
        &self.indices
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }
}

impl Default for TruncationSchedule {
    /// The truncated maximizers approach the limit at rate `O(1/i)`, so the
    /// indices run far enough for the last steps to fall below the tolerance.
    fn default() -> Self {
        TruncationSchedule::powers_of_two(30, 1e-7).expect("valid default schedule")
    }
}

/// `g_i(x) = 1/i + i atan(x/i)` with first and second derivatives.
pub fn truncation(i: f64, x: f64) -> (f64, f64, f64) {
    let u = x / i;
    let d = 1.0 + u * u;
    (1.0 / i + i * u.atan(), 1.0 / d, -2.0 * u / (i * d * d))
}

/// Payoffs restricted to endogenous assets the constraints allow to hold.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectivePayoffs {
    pub investable: Vec<bool>,
    /// One vector per support point of the law.
    pub values: Vec<DVector<f64>>,
    /// `|Y~|` per support point.
    pub totals: Vec<f64>,
}

/// `Y~^n = Y^n` if some `beta` in `B` has `beta^n > 0`, else `0`.
pub fn effective_payoffs(law: &ConditionalLaw, spec: &ConstraintSpec) -> Result<EffectivePayoffs> {
    let n2 = law.num_endogenous();
    let b = spec.beta_polytope(n2)?;
    let investable = (0..n2)
        .map(|n| {
            let mut c = DVector::zeros(n2);
            c[n] = 1.0;
            Ok(match b.maximize(&c)? {
                LpOutcome::Optimal { value, .. } => value > POSITIVE_TOL,
                LpOutcome::Unbounded { .. } => true,
                LpOutcome::Infeasible => false,
            })
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(restrict_payoffs(law, investable))
}

pub(crate) fn restrict_payoffs(law: &ConditionalLaw, investable: Vec<bool>) -> EffectivePayoffs {
    let values: Vec<DVector<f64>> = law
        .y_vals
        .iter()
        .map(|y| DVector::from_fn(y.len(), |n, _| if investable[n] { y[n] } else { 0.0 }))
        .collect();
    let totals = values.iter().map(|y| y.sum()).collect();
    EffectivePayoffs { investable, values, totals }
}

/// `F(alpha) = E ln(<alpha, X> + kappa) - <e, alpha>` with `kappa = |Y~| / W`.
/// Equals the wealth-scale objective minus the constant `ln W`.
struct GrowthObjective<'a> {
    law: &'a ConditionalLaw,
    kappa: Vec<f64>,
}

impl<'a> GrowthObjective<'a> {
    fn new(law: &'a ConditionalLaw, eff: &EffectivePayoffs, wealth: f64) -> Self {
        GrowthObjective { law, kappa: eff.totals.iter().map(|t| t / wealth).collect() }
    }

    fn denominators(&self, alpha: &DVector<f64>) -> Vec<f64> {
        self.law.x_vals.iter().zip(&self.kappa).map(|(x, k)| alpha.dot(x) + k).collect()
    }
}

impl ConcaveObjective for GrowthObjective<'_> {
    fn value(&self, alpha: &DVector<f64>) -> f64 {
        let d = self.denominators(alpha);
        if d.iter().any(|&v| !(v > 0.0)) {
            return f64::NEG_INFINITY;
        }
        self.law.probs.iter().zip(&d).map(|(p, v)| p * v.ln()).sum::<f64>() - alpha.sum()
    }

    fn gradient(&self, alpha: &DVector<f64>) -> DVector<f64> {
        let d = self.denominators(alpha);
        let mut g = DVector::from_element(alpha.len(), -1.0);
        for ((p, x), v) in self.law.probs.iter().zip(&self.law.x_vals).zip(&d) {
            g.axpy(p / v, x, 1.0);
        }
        g
    }

    fn hessian(&self, alpha: &DVector<f64>) -> DMatrix<f64> {
        let d = self.denominators(alpha);
        let n = alpha.len();
        let mut h = DMatrix::zeros(n, n);
        for ((p, x), v) in self.law.probs.iter().zip(&self.law.x_vals).zip(&d) {
            h.ger(-p / (v * v), x, x, 1.0);
        }
        h
    }
}

/// `E ln g_i(<alpha, X> W + |Y~|) - <e, alpha>`.
struct TruncatedObjective<'a> {
    law: &'a ConditionalLaw,
    totals: &'a [f64],
    wealth: f64,
    index: f64,
}

impl TruncatedObjective<'_> {
    fn terms(&self, alpha: &DVector<f64>) -> Vec<(f64, f64, f64)> {
        self.law
            .x_vals
            .iter()
            .zip(self.totals)
            .map(|(x, t)| truncation(self.index, alpha.dot(x) * self.wealth + t))
            .collect()
    }
}

impl ConcaveObjective for TruncatedObjective<'_> {
    fn value(&self, alpha: &DVector<f64>) -> f64 {
        let terms = self.terms(alpha);
        if terms.iter().any(|&(g, _, _)| !(g > 0.0)) {
            return f64::NEG_INFINITY;
        }
        self.law.probs.iter().zip(&terms).map(|(p, (g, _, _))| p * g.ln()).sum::<f64>() - alpha.sum()
    }

    fn gradient(&self, alpha: &DVector<f64>) -> DVector<f64> {
        let mut grad = DVector::from_element(alpha.len(), -1.0);
        for ((p, x), (g, g1, _)) in self.law.probs.iter().zip(&self.law.x_vals).zip(self.terms(alpha)) {
            grad.axpy(p * self.wealth * g1 / g, x, 1.0);
        }
        grad
    }

    fn hessian(&self, alpha: &DVector<f64>) -> DMatrix<f64> {
        let n = alpha.len();
        let mut h = DMatrix::zeros(n, n);
        let w2 = self.wealth * self.wealth;
        for ((p, x), (g, g1, g2)) in self.law.probs.iter().zip(&self.law.x_vals).zip(self.terms(alpha)) {
            h.ger(p * w2 * (g2 * g - g1 * g1) / (g * g), x, x, 1.0);
        }
        h
    }
}

/// `E ln(<alpha, X> W + |Y~|) - <e, alpha>`.
pub fn alpha_objective(law: &ConditionalLaw, eff: &EffectivePayoffs, wealth: f64, alpha: &DVector<f64>) -> f64 {
    GrowthObjective::new(law, eff, wealth).value(alpha) + wealth.ln()
}

/// `E ln g_i(<alpha, X> W + |Y~|) - <e, alpha>`.
pub fn truncated_objective(
    law: &ConditionalLaw,
    eff: &EffectivePayoffs,
    wealth: f64,
    index: u64,
    alpha: &DVector<f64>,
) -> f64 {
    TruncatedObjective { law, totals: &eff.totals, wealth, index: index as f64 }.value(alpha)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub ascent: AscentOptions,
    /// Number of starting points for the exogenous problem.
    pub starts: usize,
    /// Also run the truncation path and require agreement with the direct solution.
    pub schedule: Option<TruncationSchedule>,
    /// Check the first-order conditions of every solution.
    pub verify: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { ascent: AscentOptions::default(), starts: 5, schedule: None, verify: true }
    }
}

/// Starting points in `A^p` with `<alpha, x_k> + kappa_k > 0` on the support.
fn alpha_starts(law: &ConditionalLaw, kappa: &[f64], ap: &Polytope, count: usize) -> Result<Vec<DVector<f64>>> {
    let n = ap.dim();
    // Variables (alpha, t): maximize t with t <= <alpha, x_k> + kappa_k, t <= 1.
    let (g, h) = ap.inequalities();
    let (e, f) = ap.equalities();
    let k = law.len();
    let mut a = DMatrix::zeros(g.nrows() + k + 1, n + 1);
    a.view_mut((0, 0), (g.nrows(), n)).copy_from(g);
    let mut b = DVector::zeros(g.nrows() + k + 1);
    b.rows_mut(0, g.nrows()).copy_from(h);
    for (r, x) in law.x_vals.iter().enumerate() {
        for j in 0..n {
            a[(g.nrows() + r, j)] = -x[j];
        }
        a[(g.nrows() + r, n)] = 1.0;
        b[g.nrows() + r] = kappa[r];
    }
    a[(g.nrows() + k, n)] = 1.0;
    b[g.nrows() + k] = 1.0;
    let mut ee = DMatrix::zeros(e.nrows(), n + 1);
    ee.view_mut((0, 0), (e.nrows(), n)).copy_from(e);
    let mut c = DVector::zeros(n + 1);
    c[n] = 1.0;
    let anchor = match crate::lp::maximize(&c, &a, &b, &ee, f)? {
        LpOutcome::Optimal { x, value } if value > 0.0 => x.rows(0, n).clone_owned(),
        _ => {
            return Err(Error::assumption(
                Assumption::A2,
                "no admissible exogenous portfolio keeps next-period wealth positive",
            ))
        }
    };
    let mut candidates = vec![anchor.clone()];
    if let Some(deep) = ap.deep_point()? {
        candidates.push(deep);
    }
    let mean_x = law.expect_vec(n, |x, _| x.clone());
    for dir in [DVector::from_element(n, 1.0), DVector::from_element(n, -1.0), mean_x] {
        if let LpOutcome::Optimal { x, .. } = ap.maximize(&dir)? {
            candidates.push(x);
        }
    }
    let mut starts: Vec<DVector<f64>> = vec![anchor.clone()];
    for v in candidates.into_iter().skip(1) {
        // Midpoints with the anchor stay strictly inside the domain.
        let s = (&anchor + v) * 0.5;
        if starts.len() < count && !starts.iter().any(|o| (o - &s).amax() < 1e-12) {
            starts.push(s);
        }
    }
    Ok(starts)
}

/// Maximizer of the `g_i`-truncated problem over `A^p`.
pub fn solve_alpha_truncated(
    law: &ConditionalLaw,
    eff: &EffectivePayoffs,
    ap: &Polytope,
    wealth: f64,
    index: u64,
    opts: &SolverOptions,
) -> Result<DVector<f64>> {
    check_wealth(wealth)?;
    if ap.dim() == 0 {
        return Ok(DVector::zeros(0));
    }
    let kappa: Vec<f64> = eff.totals.iter().map(|t| t / wealth).collect();
    let starts = alpha_starts(law, &kappa, ap, opts.starts)?;
    let obj = TruncatedObjective { law, totals: &eff.totals, wealth, index: index as f64 };
    Ok(maximize_multistart(&obj, ap, &starts, &opts.ascent)?.x)
}

/// First-order diagnostics of an exogenous solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaCertificate {
    /// `min_k <alpha, x_k> W + |Y~_k|`, which must be positive.
    pub min_wealth: f64,
    /// `max over alpha' in A^p of E[<alpha' - alpha, X> W / D] - <e, alpha' - alpha>`,
    /// with `D = <alpha, X> W + |Y~|`; at most zero at the optimum.
    pub ineq_gap: f64,
    /// `E[<alpha, X> W / D] - <e, alpha>`, zero at the optimum.
    pub eq_residual: f64,
}

impl AlphaCertificate {
    pub fn holds(&self, tol: f64) -> bool {
        self.min_wealth > 0.0 && self.ineq_gap <= tol && self.eq_residual.abs() <= tol
    }
}

/// The gradient is orthogonal to null investments, so maximizing the
/// linear first-order form over `A^p` covers all of `A`.
pub fn alpha_certificate(
    law: &ConditionalLaw,
    eff: &EffectivePayoffs,
    ap: &Polytope,
    wealth: f64,
    alpha: &DVector<f64>,
) -> Result<AlphaCertificate> {
    let obj = GrowthObjective::new(law, eff, wealth);
    let d = obj.denominators(alpha);
    let min_wealth = d.iter().fold(f64::INFINITY, |m, &v| m.min(v)) * wealth;
    if !(min_wealth > 0.0) {
        return Ok(AlphaCertificate { min_wealth, ineq_gap: f64::INFINITY, eq_residual: f64::INFINITY });
    }
    let grad = obj.gradient(alpha);
    let ineq_gap = if alpha.is_empty() {
        0.0
    } else {
        match ap.maximize(&grad)? {
            LpOutcome::Optimal { value, .. } => value - grad.dot(alpha),
            LpOutcome::Unbounded { .. } => f64::INFINITY,
            LpOutcome::Infeasible => return Err(Error::invalid("projected constraint set is empty")),
        }
    };
    Ok(AlphaCertificate { min_wealth, ineq_gap, eq_residual: grad.dot(alpha) })
}

/// Iterates of the truncation path.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleReport {
    pub indices: Vec<u64>,
    pub iterates: Vec<DVector<f64>>,
    /// Distances between successive iterates.
    pub steps: Vec<f64>,
    /// The last two iterates are within the schedule tolerance.
    pub converged: bool,
    /// Distinct points among the tail iterates (a single point when converged).
    pub limit_points: Vec<DVector<f64>>,
}

pub fn truncation_path(
    law: &ConditionalLaw,
    eff: &EffectivePayoffs,
    ap: &Polytope,
    wealth: f64,
    schedule: &TruncationSchedule,
    opts: &SolverOptions,
) -> Result<ScheduleReport> {
    let iterates = schedule
        .indices()
        .iter()
        .map(|&i| solve_alpha_truncated(law, eff, ap, wealth, i, opts))
        .collect::<Result<Vec<_>>>()?;
    let steps: Vec<f64> = iterates.windows(2).map(|w| (&w[1] - &w[0]).norm()).collect();
    let converged = steps.last().is_none_or(|&s| s < schedule.tolerance());
    let tail = &iterates[iterates.len().saturating_sub(4)..];
    let mut limit_points: Vec<DVector<f64>> = Vec::new();
    for p in tail.iter().rev() {
        if !limit_points.iter().any(|q| (q - p).norm() < schedule.tolerance()) {
            limit_points.push(p.clone());
        }
        if converged {
            break;
        }
    }
    Ok(ScheduleReport { indices: schedule.indices().to_vec(), iterates, steps, converged, limit_points })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSolution {
    pub alpha: DVector<f64>,
    /// `E ln(<alpha, X> W + |Y~|) - <e, alpha>` at the solution.
    pub objective: f64,
    pub certificate: AlphaCertificate,
    pub schedule: Option<ScheduleReport>,
}

/// The optimal exogenous proportions on `A^p`.
pub fn solve_alpha(
    law: &ConditionalLaw,
    eff: &EffectivePayoffs,
    ap: &Polytope,
    wealth: f64,
    opts: &SolverOptions,
) -> Result<AlphaSolution> {
    check_wealth(wealth)?;
    let obj = GrowthObjective::new(law, eff, wealth);
    let alpha = if ap.dim() == 0 {
        if obj.value(&DVector::zeros(0)).is_infinite() {
            return Err(Error::assumption(Assumption::A2, "endogenous payoffs vanish in some next state"));
        }
        DVector::zeros(0)
    } else {
        let starts = alpha_starts(law, &obj.kappa, ap, opts.starts)?;
        maximize_multistart(&obj, ap, &starts, &opts.ascent)?.x
    };
    let certificate = alpha_certificate(law, eff, ap, wealth, &alpha)?;
    if opts.verify && !certificate.holds(CERTIFICATE_TOL) {
        return Err(Error::Consistency(format!("exogenous first-order conditions fail: {certificate:?}")));
    }
    let schedule = match &opts.schedule {
        Some(s) => {
            let report = truncation_path(law, eff, ap, wealth, s, opts)?;
            let last = report.iterates.last().expect("non-empty schedule");
            if !report.converged {
                return Err(Error::NonConvergence {
                    what: "truncation schedule",
                    iterations: report.indices.len(),
                    residual: *report.steps.last().unwrap_or(&f64::NAN),
                });
            }
            let gap = (last - &alpha).norm();
            if gap > PATH_AGREEMENT_TOL {
                return Err(Error::Consistency(format!(
                    "truncated and direct exogenous solutions differ by {gap:e}"
                )));
            }
            Some(report)
        }
        None => None,
    };
    let objective = obj.value(&alpha) + wealth.ln();
    Ok(AlphaSolution { alpha, objective, certificate, schedule })
}

/// `c_n = E[Y~^n / (<alpha, X> W + |Y~|)]` with `0/0 = 0`.
pub fn endogenous_weights(law: &ConditionalLaw, eff: &EffectivePayoffs, wealth: f64, alpha: &DVector<f64>) -> DVector<f64> {
    let n2 = law.num_endogenous();
    let mut c = DVector::zeros(n2);
    for (((p, x), y), total) in law.probs.iter().zip(&law.x_vals).zip(&eff.values).zip(&eff.totals) {
        let d = alpha.dot(x) * wealth + total;
        for n in 0..n2 {
            if y[n] != 0.0 {
                c[n] += p * y[n] / d;
            }
        }
    }
    c
}

/// `beta^n = E[Y^n / (<alpha, X> W + |Y|)]`, the endogenous proportions when
/// `B` is the whole simplex slice.
pub fn beta_explicit(law: &ConditionalLaw, wealth: f64, alpha: &DVector<f64>) -> DVector<f64> {
    let eff = restrict_payoffs(law, vec![true; law.num_endogenous()]);
    endogenous_weights(law, &eff, wealth, alpha)
}

/// `sum_{c_n > 0} c_n ln beta_n`.
struct WeightedLog<'a> {
    c: &'a DVector<f64>,
}

impl ConcaveObjective for WeightedLog<'_> {
    fn value(&self, beta: &DVector<f64>) -> f64 {
        let mut v = 0.0;
        for (c, b) in self.c.iter().zip(beta.iter()) {
            if *c > 0.0 {
                if !(*b > 0.0) {
                    return f64::NEG_INFINITY;
                }
                v += c * b.ln();
            }
        }
        v
    }

    fn gradient(&self, beta: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(beta.len(), |n, _| if self.c[n] > 0.0 { self.c[n] / beta[n] } else { 0.0 })
    }

    fn hessian(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(beta.len(), beta.len(), |i, j| {
            if i == j && self.c[i] > 0.0 {
                -self.c[i] / (beta[i] * beta[i])
            } else {
                0.0
            }
        })
    }
}

/// Optimal endogenous proportions in `B~ = B ∩ {|beta| = 1 - <e, alpha>}`.
/// Ties are broken towards the least-norm maximizer.
pub fn solve_beta(
    law: &ConditionalLaw,
    eff: &EffectivePayoffs,
    b_set: &Polytope,
    wealth: f64,
    alpha: &DVector<f64>,
    opts: &SolverOptions,
) -> Result<DVector<f64>> {
    check_wealth(wealth)?;
    let n2 = b_set.dim();
    let target = 1.0 - alpha.sum();
    let slice = b_set.clone().with_equality(&vec![1.0; n2], target)?;
    let c = endogenous_weights(law, eff, wealth, alpha);
    let active: Vec<usize> = (0..n2).filter(|&n| c[n] > 0.0).collect();
    let zero = DVector::zeros(n2);
    if active.is_empty() {
        return slice.project(&zero);
    }
    // Variables (beta, t): maximize t with t <= beta_n on active coordinates.
    let (g, h) = slice.inequalities();
    let (e, f) = slice.equalities();
    let mut a = DMatrix::zeros(g.nrows() + active.len() + 1, n2 + 1);
    a.view_mut((0, 0), (g.nrows(), n2)).copy_from(g);
    let mut b = DVector::zeros(g.nrows() + active.len() + 1);
    b.rows_mut(0, g.nrows()).copy_from(h);
    for (r, &n) in active.iter().enumerate() {
        a[(g.nrows() + r, n)] = -1.0;
        a[(g.nrows() + r, n2)] = 1.0;
    }
    let last = g.nrows() + active.len();
    a[(last, n2)] = 1.0;
    b[last] = 1.0;
    let mut ee = DMatrix::zeros(e.nrows(), n2 + 1);
    ee.view_mut((0, 0), (e.nrows(), n2)).copy_from(e);
    let mut obj_t = DVector::zeros(n2 + 1);
    obj_t[n2] = 1.0;
    let start = match crate::lp::maximize(&obj_t, &a, &b, &ee, f)? {
        LpOutcome::Optimal { x, value } if value > 0.0 => x.rows(0, n2).clone_owned(),
        _ => {
            return Err(Error::Consistency(
                "no admissible endogenous portfolio holds every asset with positive weight".into(),
            ))
        }
    };
    let best = maximize(&WeightedLog { c: &c }, &slice, &start, &opts.ascent)?.x;
    if active.len() == n2 {
        return Ok(best);
    }
    // Least-norm point among maximizers: fix the active coordinates.
    let mut fixed = slice;
    for &n in &active {
        let mut row = vec![0.0; n2];
        row[n] = 1.0;
        fixed = fixed.with_equality(&row, best[n])?;
    }
    fixed.project_from(&zero, &best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaCertificate {
    /// `min over beta in B` of the slack in the first-order inequality; at
    /// least zero at the optimum.
    pub ratio_slack: f64,
    /// Largest `c_n` among coordinates with `beta^n = 0`; zero at the optimum.
    pub orphan_weight: f64,
}

impl BetaCertificate {
    pub fn holds(&self, tol: f64) -> bool {
        self.ratio_slack >= -tol && self.orphan_weight <= tol
    }
}

/// Checks `E[(|Y~| - sum_n beta^n Y~^n / beta_hat^n) / D] >= |beta_hat| - |beta|`
/// for every `beta` in `B` by one linear program.
pub fn beta_certificate(
    law: &ConditionalLaw,
    eff: &EffectivePayoffs,
    b_set: &Polytope,
    wealth: f64,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
) -> Result<BetaCertificate> {
    let c = endogenous_weights(law, eff, wealth, alpha);
    let n2 = beta.len();
    let mut orphan_weight: f64 = 0.0;
    let ratio = DVector::from_fn(n2, |n, _| {
        if beta[n] > 0.0 {
            c[n] / beta[n]
        } else {
            orphan_weight = orphan_weight.max(c[n]);
            0.0
        }
    });
    // slack(beta') = (sum c - |beta_hat|) + sum_n beta'^n (1 - ratio_n)
    let lin = DVector::from_fn(n2, |n, _| ratio[n] - 1.0);
    let worst = match b_set.maximize(&lin)? {
        LpOutcome::Optimal { value, .. } => -value,
        LpOutcome::Unbounded { .. } => f64::NEG_INFINITY,
        LpOutcome::Infeasible => return Err(Error::invalid("endogenous constraint set is empty")),
    };
    Ok(BetaCertificate { ratio_slack: c.sum() - beta.sum() + worst, orphan_weight })
}

/// The relative growth optimal proportions in one state at market wealth `wealth`.
pub fn optimal_proportions(sm: &StateModel, wealth: f64, opts: &SolverOptions) -> Result<Proportions> {
    let sol = solve_alpha(&sm.law, &sm.effective, &sm.projected_alpha, wealth, opts)?;
    let alpha = sol.alpha;
    let target = 1.0 - alpha.sum();
    let beta = if sm.spec.has_simplex_beta() {
        let raw = beta_explicit(&sm.law, wealth, &alpha);
        let total = raw.sum();
        if opts.verify && (total - target).abs() > CERTIFICATE_TOL {
            return Err(Error::Consistency(format!(
                "explicit endogenous weights sum to {total} instead of {target}"
            )));
        }
        if total > 0.0 {
            raw * (target.max(0.0) / total)
        } else {
            raw
        }
    } else {
        let beta = solve_beta(&sm.law, &sm.effective, &sm.beta_set, wealth, &alpha, opts)?;
        if opts.verify {
            let cert = beta_certificate(&sm.law, &sm.effective, &sm.beta_set, wealth, &alpha, &beta)?;
            if !cert.holds(CERTIFICATE_TOL) {
                return Err(Error::Consistency(format!("endogenous first-order conditions fail: {cert:?}")));
            }
        }
        beta
    };
    Ok(Proportions::new(alpha, beta))
}

fn check_wealth(wealth: f64) -> Result<()> {
    if wealth > 0.0 && wealth.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("market wealth must be positive and finite, got {wealth}")))
    }
}

/// What an agent sees when choosing proportions at time `t`.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub t: usize,
    pub state: usize,
    pub agent: usize,
    /// Absolute wealth of every agent.
    pub wealth: &'a [f64],
    /// Absolute total market wealth.
    pub market_wealth: f64,
}

pub trait Strategy: Send + Sync {
    fn decide(&self, obs: &Observation<'_>) -> Result<Proportions>;
}

/// Proportions as written in a configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionSpec {
    #[serde(default)]
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ProportionSpec {
    pub fn to_proportions(&self) -> Proportions {
        Proportions::from_slices(&self.alpha, &self.beta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    /// First period the entry applies to.
    #[serde(default)]
    pub from_t: usize,
    /// State the entry applies to; every state when absent.
    #[serde(default)]
    pub state: Option<usize>,
    #[serde(flatten)]
    pub proportions: ProportionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyRule {
    /// The relative growth optimal strategy.
    Optimal,
    /// Fixed proportions: one entry for all states, or one per state.
    Constant { proportions: Vec<ProportionSpec> },
    /// `beta^n = E[Y^n / |Y|]`, no exogenous investment.
    KellyEndogenous,
    /// Optimal proportions plus uniform noise of the given scale.
    PerturbedOptimal { noise: f64, seed: u64 },
    /// The last entry with `from_t <= t` matching the state.
    Table { entries: Vec<TableEntry> },
}

impl StrategyRule {
    pub fn build(&self, model: &Arc<MarketModel>, opts: &SolverOptions) -> Result<Box<dyn Strategy>> {
        let env = model.environment();
        let (n1, n2, s) = (env.num_exogenous(), env.num_endogenous(), env.num_states());
        let check = |p: &ProportionSpec| {
            if p.alpha.len() != n1 || p.beta.len() != n2 {
                return Err(Error::invalid(format!(
                    "proportions need {n1} exogenous and {n2} endogenous entries"
                )));
            }
            if p.alpha.iter().chain(&p.beta).any(|v| !v.is_finite()) {
                return Err(Error::invalid("proportions must be finite"));
            }
            Ok(())
        };
        Ok(match self {
            StrategyRule::Optimal => Box::new(OptimalStrategy::new(model.clone(), opts.clone())),
            StrategyRule::Constant { proportions } => {
                if proportions.len() != 1 && proportions.len() != s {
                    return Err(Error::invalid(format!("constant rule needs 1 or {s} entries")));
                }
                proportions.iter().try_for_each(check)?;
                let per_state = (0..s)
                    .map(|st| {
                        let spec = &proportions[if proportions.len() == 1 { 0 } else { st }];
                        admissible(model.state(st), spec.to_proportions())
                    })
                    .collect::<Result<Vec<_>>>()?;
                Box::new(FixedStrategy { per_state })
            }
            StrategyRule::KellyEndogenous => {
                let per_state = (0..s)
                    .map(|st| {
                        let sm = model.state(st);
                        let beta = beta_explicit(&sm.law, 1.0, &DVector::zeros(n1));
                        admissible(sm, Proportions::new(DVector::zeros(n1), beta))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Box::new(FixedStrategy { per_state })
            }
            StrategyRule::PerturbedOptimal { noise, seed } => {
                if !(*noise >= 0.0 && noise.is_finite()) {
                    return Err(Error::invalid("perturbation scale must be non-negative"));
                }
                Box::new(PerturbedStrategy {
                    base: OptimalStrategy::new(model.clone(), opts.clone()),
                    model: model.clone(),
                    noise: *noise,
                    seed: *seed,
                })
            }
            StrategyRule::Table { entries } => {
                if entries.is_empty() {
                    return Err(Error::invalid("table rule needs at least one entry"));
                }
                let mut resolved = Vec::with_capacity(entries.len());
                for e in entries {
                    check(&e.proportions)?;
                    if let Some(st) = e.state {
                        if st >= s {
                            return Err(Error::invalid(format!("table entry state {st} out of range")));
                        }
                    }
                    let states: Vec<usize> = e.state.map_or((0..s).collect(), |st| vec![st]);
                    let props = states
                        .iter()
                        .map(|&st| Ok((st, admissible(model.state(st), e.proportions.to_proportions())?)))
                        .collect::<Result<Vec<_>>>()?;
                    resolved.push((e.from_t, e.state, props));
                }
                Box::new(TableStrategy { entries: resolved })
            }
        })
    }
}

/// `h` if it lies in `C`, else its Euclidean projection onto `C`.
pub fn admissible(sm: &StateModel, h: Proportions) -> Result<Proportions> {
    let v = h.to_vector();
    if sm.budget_set.contains(&v, 1e-12) {
        return Ok(h);
    }
    let start = sm.feasible.to_vector();
    let p = sm.budget_set.project_from(&v, &start)?;
    Ok(Proportions::from_vector(&p, h.alpha.len()))
}

struct FixedStrategy {
    per_state: Vec<Proportions>,
}

impl Strategy for FixedStrategy {
    fn decide(&self, obs: &Observation<'_>) -> Result<Proportions> {
        Ok(self.per_state[obs.state].clone())
    }
}

struct TableStrategy {
    entries: Vec<(usize, Option<usize>, Vec<(usize, Proportions)>)>,
}

impl Strategy for TableStrategy {
    fn decide(&self, obs: &Observation<'_>) -> Result<Proportions> {
        self.entries
            .iter()
            .rev()
            .filter(|(from, st, _)| *from <= obs.t && st.is_none_or(|s| s == obs.state))
            .find_map(|(_, _, props)| props.iter().find(|(s, _)| *s == obs.state).map(|(_, p)| p.clone()))
            .ok_or_else(|| Error::invalid(format!("no table entry for t = {}, state = {}", obs.t, obs.state)))
    }
}

/// Rounds to 12 significant digits.
pub fn quantize_wealth(w: f64) -> f64 {
    format!("{w:.11e}").parse().expect("formatted float parses")
}

/// The relative growth optimal strategy, with solutions cached by state and
/// quantized market wealth. Solutions are computed at the quantized wealth so
/// cached and fresh answers agree bit for bit.
pub struct OptimalStrategy {
    model: Arc<MarketModel>,
    opts: SolverOptions,
    cache: RwLock<HashMap<(usize, u64), Proportions>>,
}

impl OptimalStrategy {
    pub fn new(model: Arc<MarketModel>, opts: SolverOptions) -> Self {
        OptimalStrategy { model, opts, cache: RwLock::new(HashMap::new()) }
    }

    pub fn proportions(&self, state: usize, wealth: f64) -> Result<Proportions> {
        // Without exogenous assets the solution does not depend on wealth.
        let w = if self.model.environment().num_exogenous() == 0 {
            1.0
        } else {
            check_wealth(wealth)?;
            quantize_wealth(wealth)
        };
        let key = (state, w.to_bits());
        if let Some(h) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(h.clone());
        }
        let h = optimal_proportions(self.model.state(state), w, &self.opts)?;
        self.cache.write().expect("cache lock").insert(key, h.clone());
        Ok(h)
    }
}

impl Strategy for OptimalStrategy {
    fn decide(&self, obs: &Observation<'_>) -> Result<Proportions> {
        self.proportions(obs.state, obs.market_wealth)
    }
}

struct PerturbedStrategy {
    base: OptimalStrategy,
    model: Arc<MarketModel>,
    noise: f64,
    seed: u64,
}

impl Strategy for PerturbedStrategy {
    fn decide(&self, obs: &Observation<'_>) -> Result<Proportions> {
        let h = self.base.proportions(obs.state, obs.market_wealth)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((obs.t as u64) << 16 | obs.state as u64);
        let v = h.to_vector().map(|x| x + self.noise * (2.0 * rng.random::<f64>() - 1.0));
        admissible(self.model.state(obs.state), Proportions::from_vector(&v, h.alpha.len()))
    }
}

/// One participant of a simulation.
pub struct Agent {
    pub name: String,
    pub rule: StrategyRule,
    pub initial_wealth: f64,
    pub strategy: Box<dyn Strategy>,
}

/// The agents of a market, in order; agent 0 is the designated agent of the
/// diagnostics.
pub struct StrategyProfile {
    pub agents: Vec<Agent>,
}

impl StrategyProfile {
    pub fn build(
        model: &Arc<MarketModel>,
        rules: &[(String, StrategyRule, f64)],
        opts: &SolverOptions,
    ) -> Result<Self> {
        if rules.is_empty() {
            return Err(Error::invalid("a market needs at least one agent"));
        }
        let agents = rules
            .iter()
            .map(|(name, rule, w)| {
                if !(*w > 0.0 && w.is_finite()) {
                    return Err(Error::invalid(format!("initial wealth of {name} must be positive")));
                }
                Ok(Agent { name: name.clone(), rule: rule.clone(), initial_wealth: *w, strategy: rule.build(model, opts)? })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StrategyProfile { agents })
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn initial_wealth(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.initial_wealth).collect()
    }
}
