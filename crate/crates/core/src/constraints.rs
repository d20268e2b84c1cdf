//! Portfolio constraint sets.
//!
//! Constraints act separately on exogenous proportions `alpha` (set `A`) and
//! endogenous proportions `beta` (set `B`); the admissible set is
//! `C = (A x B) ∩ H` with the budget set
//! `H = {(alpha, beta) : beta >= 0, <e,alpha> in [0,1], <e,beta> = 1 - <e,alpha>}`.
//! Every set is an explicit polytope. Non-negativity of exogenous portfolio
//! values on the support of the next-period law is always added to `A`
//! as the cuts `<alpha, x_k> >= 0`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::ConditionalLaw;
use crate::error::{Assumption, Error, Result};
use crate::lp::LpOutcome;
use crate::polytope::{Polytope, MEMBERSHIP_TOL};
use crate::strategy::Proportions;

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_CUTOFF: f64 = 1e-9;
/// LP values above this count as strictly positive.
const POSITIVE_TOL: f64 = 1e-9;
/// Sampling box for possibly unbounded sets.
const SAMPLE_RADIUS: f64 = 10.0;

/// The budget set `H` for `n1` exogenous and `n2` endogenous assets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimplexBudget {
    pub n1: usize,
    pub n2: usize,
}

impl SimplexBudget {
    pub fn contains(&self, h: &Proportions, tol: f64) -> bool {
        let a = h.alpha.sum();
        let b = h.beta.sum();
        h.alpha.len() == self.n1
            && h.beta.len() == self.n2
            && h.beta.iter().all(|&v| v >= -tol)
            && a >= -tol
            && a <= 1.0 + tol
            && (a + b - 1.0).abs() <= tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlphaSet {
    /// No restriction beyond the budget and non-negative portfolio values.
    Full,
    /// No short sales.
    Nonneg,
    /// Long positions cover short positions with margin: `c|alpha+| >= |alpha-|`.
    Leverage { c: f64 },
    /// Coordinate bounds.
    #[serde(rename = "box")]
    Bounds { lower: Vec<f64>, upper: Vec<f64> },
    /// `G alpha <= g`.
    Polytope { matrix: Vec<Vec<f64>>, rhs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaSet {
    /// `beta >= 0, <e,beta> <= 1`.
    Simplex,
    /// `G beta <= g`, intersected with the simplex slice.
    Polytope { matrix: Vec<Vec<f64>>, rhs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub alpha: AlphaSet,
    pub beta: BetaSet,
}

impl Default for ConstraintSpec {
    fn default() -> Self {
        ConstraintSpec { alpha: AlphaSet::Nonneg, beta: BetaSet::Simplex }
    }
}

impl ConstraintSpec {
    pub fn new(alpha: AlphaSet, beta: BetaSet) -> Self {
        ConstraintSpec { alpha, beta }
    }

    pub fn has_simplex_beta(&self) -> bool {
        self.beta == BetaSet::Simplex
    }

    /// `A` in `R^n1` without the non-negative-value cuts.
    pub fn alpha_polytope_unconditioned(&self, n1: usize) -> Result<Polytope> {
        let ones = vec![1.0; n1];
        let neg_ones = vec![-1.0; n1];
        let mut p = Polytope::space(n1)
            .with_inequality(&ones, 1.0)?
            .with_inequality(&neg_ones, 0.0)?;
        match &self.alpha {
            AlphaSet::Full => {}
            AlphaSet::Nonneg => {
                p = p.with_inequalities(&-DMatrix::identity(n1, n1), &DVector::zeros(n1))?;
            }
            AlphaSet::Leverage { c } => {
                if !(0.0..1.0).contains(c) {
                    return Err(Error::invalid(format!("leverage parameter {c} must lie in [0, 1)")));
                }
                if n1 > 16 {
                    return Err(Error::invalid("leverage constraint supports at most 16 exogenous assets"));
                }
                // |a-| - c|a+| = sum_n max(-a_n, -c a_n) <= 0, one row per choice of branches.
                let rows = 1usize << n1;
                let a = DMatrix::from_fn(rows, n1, |r, j| if r >> j & 1 == 1 { -1.0 } else { -c });
                p = p.with_inequalities(&a, &DVector::zeros(rows))?;
            }
            AlphaSet::Bounds { lower, upper } => {
                if lower.len() != n1 || upper.len() != n1 {
                    return Err(Error::invalid(format!("box bounds need {n1} entries")));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
                    return Err(Error::invalid("box lower bound exceeds upper bound"));
                }
                let eye = DMatrix::identity(n1, n1);
                p = p
                    .with_inequalities(&eye, &DVector::from_column_slice(upper))?
                    .with_inequalities(&-eye, &-DVector::from_column_slice(lower))?;
            }
            AlphaSet::Polytope { matrix, rhs } => {
                let (g, h) = dense(matrix, rhs, n1, "alpha")?;
                p = p.with_inequalities(&g, &h)?;
            }
        }
        Ok(p)
    }

    /// `A` in `R^n1` including the cuts `<alpha, x_k> >= 0` on the support of `law`.
    pub fn alpha_polytope(&self, law: &ConditionalLaw) -> Result<Polytope> {
        let n1 = law.num_exogenous();
        let mut p = self.alpha_polytope_unconditioned(n1)?;
        if n1 > 0 {
            let cuts = DMatrix::from_fn(law.len(), n1, |k, j| -law.x_vals[k][j]);
            p = p.with_inequalities(&cuts, &DVector::zeros(law.len()))?;
        }
        Ok(p)
    }

    /// `B` in `R^n2`.
    pub fn beta_polytope(&self, n2: usize) -> Result<Polytope> {
        let mut p = Polytope::space(n2)
            .with_inequalities(&-DMatrix::identity(n2, n2), &DVector::zeros(n2))?
            .with_inequality(&vec![1.0; n2], 1.0)?;
        if let BetaSet::Polytope { matrix, rhs } = &self.beta {
            let (g, h) = dense(matrix, rhs, n2, "beta")?;
            p = p.with_inequalities(&g, &h)?;
        }
        Ok(p)
    }

    /// `C = (A x B) ∩ H` in `R^(n1 + n2)`, coordinates ordered `(alpha, beta)`.
    pub fn budget_polytope(&self, law: &ConditionalLaw) -> Result<Polytope> {
        let n1 = law.num_exogenous();
        let n2 = law.num_endogenous();
        let a = self.alpha_polytope(law)?;
        let b = self.beta_polytope(n2)?;
        block_product(&a, &b)?.with_equality(&vec![1.0; n1 + n2], 1.0)
    }
}

fn dense(matrix: &[Vec<f64>], rhs: &[f64], n: usize, what: &str) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if matrix.len() != rhs.len() {
        return Err(Error::invalid(format!(
            "{what} polytope has {} rows but {} right-hand sides",
            matrix.len(),
            rhs.len()
        )));
    }
    if let Some(r) = matrix.iter().position(|row| row.len() != n) {
        return Err(Error::invalid(format!("{what} polytope row {r} needs {n} entries")));
    }
    if matrix.iter().flatten().chain(rhs).any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{what} polytope has non-finite entries")));
    }
    let g = DMatrix::from_fn(matrix.len(), n, |r, c| matrix[r][c]);
    Ok((g, DVector::from_column_slice(rhs)))
}

/// `P x Q` as a polytope on the concatenated coordinates.
pub fn block_product(p: &Polytope, q: &Polytope) -> Result<Polytope> {
    let (n, m) = (p.dim(), q.dim());
    let lift = |mat: &DMatrix<f64>, offset: usize| {
        let mut out = DMatrix::zeros(mat.nrows(), n + m);
        out.view_mut((0, offset), (mat.nrows(), mat.ncols())).copy_from(mat);
        out
    };
    let (pa, pb) = p.inequalities();
    let (pe, pf) = p.equalities();
    let (qa, qb) = q.inequalities();
    let (qe, qf) = q.equalities();
    Polytope::space(n + m)
        .with_inequalities(&lift(pa, 0), pb)?
        .with_inequalities(&lift(qa, n), qb)?
        .with_equalities(&lift(pe, 0), pf)?
        .with_equalities(&lift(qe, n), qf)
}

/// Orthonormal basis of the null investments `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct NullSpaceBasis {
    pub dim: usize,
    pub basis: Vec<DVector<f64>>,
}

impl NullSpaceBasis {
    pub fn is_trivial(&self) -> bool {
        self.basis.is_empty()
    }

    /// Orthogonal projection onto the complement of `L`.
    pub fn complement_projector(&self) -> DMatrix<f64> {
        let mut p = DMatrix::identity(self.dim, self.dim);
        for u in &self.basis {
            p -= u * u.transpose();
        }
        p
    }
}

/// Basis of `{alpha : <e,alpha> = 0, <alpha, x_k> = 0 for every support point}`.
pub fn null_space(law: &ConditionalLaw) -> NullSpaceBasis {
    let n = law.num_exogenous();
    if n == 0 {
        return NullSpaceBasis { dim: 0, basis: Vec::new() };
    }
    let rows = (law.len() + 1).max(n);
    let mut m = DMatrix::zeros(rows, n);
    m.row_mut(0).fill(1.0);
    for (k, x) in law.x_vals.iter().enumerate() {
        m.row_mut(k + 1).copy_from(&x.transpose());
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested v_t");
    let max = svd.singular_values.amax();
    let mut basis: Vec<DVector<f64>> = (0..n)
        .filter(|&i| svd.singular_values[i] <= RANK_CUTOFF * max)
        .map(|i| v_t.row(i).transpose())
        .collect();
    // Fix signs so the basis is reproducible: first non-negligible entry positive.
    for u in &mut basis {
        if let Some(&lead) = u.iter().find(|v| v.abs() > 1e-12) {
            if lead < 0.0 {
                *u = -&*u;
            }
        }
    }
    NullSpaceBasis { dim: n, basis }
}

/// `A^p = A ∩ L^perp`, after confirming that the projection of `A` onto
/// `L^perp` stays inside `A`. Under that condition the projection and the
/// intersection coincide.
pub fn projected_alpha_polytope(
    spec: &ConstraintSpec,
    law: &ConditionalLaw,
    basis: &NullSpaceBasis,
) -> Result<Polytope> {
    let a = spec.alpha_polytope(law)?;
    if basis.is_trivial() {
        return Ok(a);
    }
    check_projection_inside(&a, basis)?;
    let n = basis.dim;
    let e = DMatrix::from_fn(basis.basis.len(), n, |r, c| basis.basis[r][c]);
    a.with_equalities(&e, &DVector::zeros(basis.basis.len()))
}

/// Exact check that `P(A) ⊆ A` for the orthogonal projector `P` onto `L^perp`:
/// for every inequality row `a_i . x <= b_i`, `max_{x in A} (P a_i) . x <= b_i`.
fn check_projection_inside(a: &Polytope, basis: &NullSpaceBasis) -> Result<()> {
    let proj = basis.complement_projector();
    let (g, h) = a.inequalities();
    for i in 0..g.nrows() {
        let c = &proj * g.row(i).transpose();
        match a.maximize(&c)? {
            LpOutcome::Optimal { value, x } if value > h[i] + MEMBERSHIP_TOL * (1.0 + h[i].abs()) => {
                return Err(Error::assumption(
                    Assumption::A3,
                    format!(
                        "projection of {} leaves the constraint set (row {i}: {value:.6} > {:.6})",
                        fmt_vec(&x),
                        h[i]
                    ),
                ));
            }
            LpOutcome::Unbounded { .. } => {
                return Err(Error::assumption(
                    Assumption::A3,
                    format!("projection of the constraint set is unbounded along row {i}"),
                ));
            }
            _ => {}
        }
    }
    Ok(())
}

/// `A^p` as an explicit-polytope constraint specification; the null
/// investment directions appear as paired inequalities `±<u, alpha> <= 0`.
/// Fails with an arbitrage violation if `A^p` is unbounded.
pub fn project_constraint(
    spec: &ConstraintSpec,
    law: &ConditionalLaw,
    basis: &NullSpaceBasis,
) -> Result<ConstraintSpec> {
    let ap = projected_alpha_polytope(spec, law, basis)?;
    if !ap.is_bounded()? {
        let detail = match detect_unbounded_arbitrage(spec, law)? {
            Some(u) => format!("projected constraint set is unbounded; arbitrage direction {}", fmt_vec(&u)),
            None => "projected constraint set is unbounded".to_string(),
        };
        return Err(Error::assumption(Assumption::A5, detail));
    }
    let (g, h) = ap.inequalities();
    let (e, f) = ap.equalities();
    let mut matrix: Vec<Vec<f64>> = g.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut rhs: Vec<f64> = h.iter().copied().collect();
    for (row, &val) in e.row_iter().zip(f.iter()) {
        matrix.push(row.iter().copied().collect());
        rhs.push(val);
        matrix.push(row.iter().map(|v| -v).collect());
        rhs.push(-val);
    }
    Ok(ConstraintSpec { alpha: AlphaSet::Polytope { matrix, rhs }, beta: spec.beta.clone() })
}

/// A direction `u` with `<e,u> = 0`, `<u, x_k> >= 0` on the support, strictly
/// positive somewhere, and `lambda u ∈ A` for all `lambda > 0`, if one exists.
pub fn detect_unbounded_arbitrage(spec: &ConstraintSpec, law: &ConditionalLaw) -> Result<Option<DVector<f64>>> {
    let n = law.num_exogenous();
    if n == 0 {
        return Ok(None);
    }
    let cone = spec
        .alpha_polytope(law)?
        .recession_cone()
        .with_equality(&vec![1.0; n], 0.0)?
        .boxed(1.0);
    let gain = law.expect_vec(n, |x, _| x.clone());
    match cone.maximize(&gain)? {
        LpOutcome::Optimal { x, value } if value > POSITIVE_TOL => Ok(Some(x)),
        LpOutcome::Optimal { .. } | LpOutcome::Infeasible => Ok(None),
        LpOutcome::Unbounded { .. } => Err(Error::numerical("boxed arbitrage program reported unbounded")),
    }
}

/// An arbitrage portfolio contained in `A` itself (possibly bounded).
/// Such portfolios are allowed; they are reported for information.
pub fn bounded_arbitrage(spec: &ConstraintSpec, law: &ConditionalLaw) -> Result<Option<DVector<f64>>> {
    let n = law.num_exogenous();
    if n == 0 {
        return Ok(None);
    }
    let set = spec.alpha_polytope(law)?.with_equality(&vec![1.0; n], 0.0)?.boxed(SAMPLE_RADIUS);
    let gain = law.expect_vec(n, |x, _| x.clone());
    match set.maximize(&gain)? {
        LpOutcome::Optimal { x, value } if value > POSITIVE_TOL => Ok(Some(x)),
        _ => Ok(None),
    }
}

/// A point of `C` whose portfolio value is strictly positive on every support
/// point.
pub fn feasible_point(spec: &ConstraintSpec, law: &ConditionalLaw) -> Result<Proportions> {
    let n1 = law.num_exogenous();
    let n2 = law.num_endogenous();
    let n = n1 + n2;
    let c = spec.budget_polytope(law)?;
    // Variables (alpha, beta, t): maximize t with t <= value_k, t <= 1.
    let (g, h) = c.inequalities();
    let (e, f) = c.equalities();
    let k = law.len();
    let mut a = DMatrix::zeros(g.nrows() + k + 1, n + 1);
    a.view_mut((0, 0), (g.nrows(), n)).copy_from(g);
    for (r, (x, y)) in law.x_vals.iter().zip(&law.y_vals).enumerate() {
        let row = g.nrows() + r;
        for j in 0..n1 {
            a[(row, j)] = -x[j];
        }
        for j in 0..n2 {
            a[(row, n1 + j)] = -y[j];
        }
        a[(row, n)] = 1.0;
    }
    a[(g.nrows() + k, n)] = 1.0;
    let mut b = DVector::zeros(g.nrows() + k + 1);
    b.rows_mut(0, g.nrows()).copy_from(h);
    b[g.nrows() + k] = 1.0;
    let mut ee = DMatrix::zeros(e.nrows(), n + 1);
    ee.view_mut((0, 0), (e.nrows(), n)).copy_from(e);
    let mut obj = DVector::zeros(n + 1);
    obj[n] = 1.0;
    match crate::lp::maximize(&obj, &a, &b, &ee, f)? {
        LpOutcome::Optimal { x, value } if value > POSITIVE_TOL => {
            Ok(Proportions::from_vector(&x.rows(0, n).clone_owned(), n1))
        }
        LpOutcome::Infeasible => Err(Error::assumption(
            Assumption::A2,
            "the admissible set C is empty",
        )),
        _ => Err(Error::assumption(
            Assumption::A2,
            "no admissible portfolio has strictly positive value in every next state",
        )),
    }
}

/// Sampling check of the cone property: for sampled `x` in the set and
/// `lambda` on a grid of `[0, 1/<e,x>]` (or `[0, 10]` when `<e,x> = 0`),
/// `lambda x` stays in the set. Returns a counterexample `(x, lambda)`.
pub fn cone_counterexample<R: Rng + ?Sized>(
    set: &Polytope,
    rng: &mut R,
    samples: usize,
) -> Result<Option<(DVector<f64>, f64)>> {
    let points = set.sample(rng, samples, SAMPLE_RADIUS)?;
    for x in points {
        let s = x.sum();
        let top = if s > 1e-12 { 1.0 / s } else { 10.0 };
        for step in 0..=10 {
            let lambda = top * step as f64 / 10.0;
            let scaled = &x * lambda;
            if !set.contains(&scaled, 1e-7 * (1.0 + scaled.amax())) {
                return Ok(Some((x, lambda)));
            }
        }
    }
    Ok(None)
}

pub(crate) fn fmt_vec(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("({})", parts.join(", "))
}
