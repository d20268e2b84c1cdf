//! Maximization of smooth concave functions over polytopes.
//!
//! Each iteration solves the quadratic model in the metric of the negated
//! (regularized) Hessian over the polytope, then backtracks along the step.
//! When the model step fails to increase the objective a plain projected
//! gradient step is tried instead. Convergence is measured by the
//! projected-gradient norm `|Proj(x + grad) - x|`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::polytope::Polytope;

pub trait ConcaveObjective {
    /// Objective value; `-inf` outside the domain.
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentOptions {
    /// Projected-gradient norm declaring convergence.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Objective values within this distance count as tied.
    pub tie_tolerance: f64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        AscentOptions { tolerance: 1e-9, max_iterations: 500, tie_tolerance: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Maximum {
    pub x: DVector<f64>,
    pub value: f64,
    pub projected_gradient: f64,
    pub iterations: usize,
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

fn projected_gradient<O: ConcaveObjective>(obj: &O, set: &Polytope, x: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let g = obj.gradient(x);
    let y = set.project_from(&(x + &g), x)?;
    let norm = (&y - x).norm();
    Ok((g, norm))
}

/// Backtracks from `x` along `d`; returns the accepted point and value.
fn line_search<O: ConcaveObjective>(
    obj: &O,
    x: &DVector<f64>,
    fx: f64,
    d: &DVector<f64>,
    slope: f64,
) -> Option<(DVector<f64>, f64)> {
    let mut t = 1.0;
    for _ in 0..MAX_HALVINGS {
        let y = x + d * t;
        let fy = obj.value(&y);
        if fy.is_finite() && fy >= fx + ARMIJO * t * slope && fy > fx {
            return Some((y, fy));
        }
        t *= 0.5;
    }
    None
}

/// Maximizes `obj` over `set` from the feasible point `start`, which must lie
/// in the domain of `obj`.
pub fn maximize<O: ConcaveObjective>(
    obj: &O,
    set: &Polytope,
    start: &DVector<f64>,
    opts: &AscentOptions,
) -> Result<Maximum> {
    let mut x = start.clone();
    let mut fx = obj.value(&x);
    if !fx.is_finite() {
        return Err(Error::numerical("ascent started outside the objective domain"));
    }
    let n = x.len();
    let mut pg = f64::INFINITY;
    for it in 0..opts.max_iterations {
        let (g, norm) = projected_gradient(obj, set, &x)?;
        pg = norm;
        if pg < opts.tolerance {
            return Ok(Maximum { x, value: fx, projected_gradient: pg, iterations: it });
        }
        let h = obj.hessian(&x);
        let shift = 1e-10 * (1.0 + h.diagonal().amax());
        let metric = -h + DMatrix::identity(n, n) * shift;
        let q = -&g - &metric * &x;
        let z = set.minimize_quadratic(&metric, &q, &x)?;
        let d = &z - &x;
        let slope = g.dot(&d);
        // The predicted increase is below the resolution of the objective:
        // line searches cannot discriminate, so take the model step as is.
        if slope <= 1e-15 * (1.0 + fx.abs()) {
            let fz = obj.value(&z);
            if d.norm() <= 1e-15 * (1.0 + x.norm()) || !(fz >= fx - 1e-15 * (1.0 + fx.abs())) {
                return Ok(Maximum { x, value: fx, projected_gradient: pg, iterations: it });
            }
            x = z;
            fx = fz;
            continue;
        }
        if let Some((y, fy)) = line_search(obj, &x, fx, &d, slope) {
            x = y;
            fx = fy;
            continue;
        }
        let d = set.project_from(&(&x + &g), &x)? - &x;
        let slope = g.dot(&d);
        match line_search(obj, &x, fx, &d, slope) {
            Some((y, fy)) => {
                x = y;
                fx = fy;
            }
            None => {
                // No representable improvement along either direction.
                if pg < opts.tolerance.sqrt() {
                    return Ok(Maximum { x, value: fx, projected_gradient: pg, iterations: it });
                }
                return Err(Error::NonConvergence { what: "concave ascent", iterations: it, residual: pg });
            }
        }
    }
    Err(Error::NonConvergence { what: "concave ascent", iterations: opts.max_iterations, residual: pg })
}

/// Runs [`maximize`] from every start and returns, among the results whose
/// value is within the tie tolerance of the best, the one of least norm.
pub fn maximize_multistart<O: ConcaveObjective>(
    obj: &O,
    set: &Polytope,
    starts: &[DVector<f64>],
    opts: &AscentOptions,
) -> Result<Maximum> {
    let mut results = Vec::with_capacity(starts.len());
    let mut last_err = None;
    for s in starts {
        match maximize(obj, set, s, opts) {
            Ok(m) => results.push(m),
            Err(e) => last_err = Some(e),
        }
    }
    let best = results.iter().map(|m| m.value).fold(f64::NEG_INFINITY, f64::max);
    results
        .into_iter()
        .filter(|m| m.value >= best - opts.tie_tolerance)
        .min_by(|a, b| a.x.norm().total_cmp(&b.x.norm()))
        .ok_or_else(|| last_err.unwrap_or_else(|| Error::invalid("no starting points supplied")))
}
