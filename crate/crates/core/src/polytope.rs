//! Convex polyhedra `{x : A x <= b, E x = f}` in explicit form.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::lp::{self, LpOutcome};
use crate::qp::QuadraticProgram;

/// Membership tolerance used throughout.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    dim: usize,
    a: DMatrix<f64>,
    b: DVector<f64>,
    e: DMatrix<f64>,
    f: DVector<f64>,
}

impl Polytope {
    /// The whole space `R^dim`.
    pub fn space(dim: usize) -> Self {
        Polytope {
            dim,
            a: DMatrix::zeros(0, dim),
            b: DVector::zeros(0),
            e: DMatrix::zeros(0, dim),
            f: DVector::zeros(0),
        }
    }

    pub fn from_inequalities(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let dim = a.ncols();
        Polytope::space(dim).with_inequalities(&a, &b)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inequalities(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.a, &self.b)
    }

    pub fn equalities(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.e, &self.f)
    }

    pub fn with_inequalities(mut self, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Self> {
        if a.ncols() != self.dim || a.nrows() != b.len() {
            return Err(Error::invalid(format!(
                "inequality block is {}x{} with {} bounds, expected {} columns",
                a.nrows(),
                a.ncols(),
                b.len(),
                self.dim
            )));
        }
        self.a = stack(&self.a, a);
        self.b = concat(&self.b, b);
        Ok(self)
    }

    pub fn with_inequality(self, row: &[f64], rhs: f64) -> Result<Self> {
        let a = DMatrix::from_row_slice(1, row.len(), row);
        self.with_inequalities(&a, &DVector::from_element(1, rhs))
    }

    pub fn with_equalities(mut self, e: &DMatrix<f64>, f: &DVector<f64>) -> Result<Self> {
        if e.ncols() != self.dim || e.nrows() != f.len() {
            return Err(Error::invalid("equality block dimensions do not agree"));
        }
        self.e = stack(&self.e, e);
        self.f = concat(&self.f, f);
        Ok(self)
    }

    pub fn with_equality(self, row: &[f64], rhs: f64) -> Result<Self> {
        let e = DMatrix::from_row_slice(1, row.len(), row);
        self.with_equalities(&e, &DVector::from_element(1, rhs))
    }

    /// Intersection with another polytope of the same dimension.
    pub fn intersect(&self, other: &Polytope) -> Result<Self> {
        self.clone()
            .with_inequalities(&other.a, &other.b)?
            .with_equalities(&other.e, &other.f)
    }

    /// Largest constraint violation at `x` (non-positive when `x` is inside).
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        let ineq = &self.a * x - &self.b;
        let eq = &self.e * x - &self.f;
        ineq.iter().copied().chain(eq.iter().map(|r| r.abs())).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim && self.violation(x) <= tol
    }

    pub fn maximize(&self, c: &DVector<f64>) -> Result<LpOutcome> {
        lp::maximize(c, &self.a, &self.b, &self.e, &self.f)
    }

    pub fn is_empty(&self) -> Result<bool> {
        Ok(self.maximize(&DVector::zeros(self.dim))? == LpOutcome::Infeasible)
    }

    /// Any point of the polytope.
    pub fn some_point(&self) -> Result<Option<DVector<f64>>> {
        Ok(self.maximize(&DVector::zeros(self.dim))?.point().cloned())
    }

    /// `true` if the polytope is bounded (empty polytopes count as bounded).
    pub fn is_bounded(&self) -> Result<bool> {
        for i in 0..self.dim {
            for sign in [1.0, -1.0] {
                let mut c = DVector::zeros(self.dim);
                c[i] = sign;
                match self.maximize(&c)? {
                    LpOutcome::Infeasible => return Ok(true),
                    LpOutcome::Unbounded { .. } => return Ok(false),
                    LpOutcome::Optimal { .. } => {}
                }
            }
        }
        Ok(true)
    }

    /// `{d : A d <= 0, E d = 0}`.
    pub fn recession_cone(&self) -> Polytope {
        Polytope {
            dim: self.dim,
            a: self.a.clone(),
            b: DVector::zeros(self.b.len()),
            e: self.e.clone(),
            f: DVector::zeros(self.f.len()),
        }
    }

    /// The polytope intersected with the box `[-radius, radius]^dim`.
    pub fn boxed(&self, radius: f64) -> Polytope {
        let n = self.dim;
        let mut a = DMatrix::zeros(2 * n, n);
        for i in 0..n {
            a[(2 * i, i)] = 1.0;
            a[(2 * i + 1, i)] = -1.0;
        }
        let b = DVector::from_element(2 * n, radius);
        self.clone().with_inequalities(&a, &b).expect("box dimensions match")
    }

    /// Euclidean projection of `y`, starting the active-set iteration from
    /// the feasible point `start`.
    pub fn project_from(&self, y: &DVector<f64>, start: &DVector<f64>) -> Result<DVector<f64>> {
        self.minimize_quadratic(&DMatrix::identity(self.dim, self.dim), &(-y), start)
    }

    /// Euclidean projection of `y` (a feasible start is found by LP).
    pub fn project(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if self.contains(y, 0.0) {
            return Ok(y.clone());
        }
        let start = self
            .some_point()?
            .ok_or_else(|| Error::invalid("cannot project onto an empty polytope"))?;
        self.project_from(y, &start)
    }

    /// Minimizes `1/2 x'Px + q'x` over the polytope from a feasible start.
    pub fn minimize_quadratic(
        &self,
        p: &DMatrix<f64>,
        q: &DVector<f64>,
        start: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let e = self.reduced_equalities();
        QuadraticProgram { p, q, g: &self.a, h: &self.b, e: &e }.solve_from(start)
    }

    /// Orthonormal basis of the row space of the equality block.
    fn reduced_equalities(&self) -> DMatrix<f64> {
        if self.e.nrows() == 0 || self.dim == 0 {
            return DMatrix::zeros(0, self.dim);
        }
        let svd = self.e.clone().svd(false, true);
        let v_t = svd.v_t.expect("requested v_t");
        let max = svd.singular_values.amax();
        let rows: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > 1e-9 * max)
            .collect();
        DMatrix::from_fn(rows.len(), self.dim, |r, c| v_t[(rows[r], c)])
    }

    /// Point maximizing the smallest inequality slack (capped at 1), a
    /// cheap stand-in for a relative-interior point.
    pub fn deep_point(&self) -> Result<Option<DVector<f64>>> {
        let n = self.dim;
        let m = self.a.nrows();
        let mut a = DMatrix::zeros(m + 1, n + 1);
        a.view_mut((0, 0), (m, n)).copy_from(&self.a);
        for i in 0..m {
            a[(i, n)] = self.a.row(i).norm().max(1e-12);
        }
        a[(m, n)] = 1.0;
        let b = concat(&self.b, &DVector::from_element(1, 1.0));
        let mut e = DMatrix::zeros(self.e.nrows(), n + 1);
        e.view_mut((0, 0), (self.e.nrows(), n)).copy_from(&self.e);
        let mut c = DVector::zeros(n + 1);
        c[n] = 1.0;
        match lp::maximize(&c, &a, &b, &e, &self.f)? {
            LpOutcome::Optimal { x, value } if value >= 0.0 => Ok(Some(x.rows(0, n).clone_owned())),
            LpOutcome::Optimal { .. } => self.some_point(),
            LpOutcome::Unbounded { x, .. } => Ok(Some(x.rows(0, n).clone_owned())),
            LpOutcome::Infeasible => Ok(None),
        }
    }

    /// Vertices reached by maximizing random linear objectives over the
    /// polytope intersected with `[-radius, radius]^dim`.
    pub fn random_vertices<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        count: usize,
        radius: f64,
    ) -> Result<Vec<DVector<f64>>> {
        let boxed = self.boxed(radius);
        let mut out: Vec<DVector<f64>> = Vec::new();
        for _ in 0..count {
            let c = DVector::from_fn(self.dim, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            if let LpOutcome::Optimal { x, .. } = boxed.maximize(&c)? {
                if !out.iter().any(|v| (v - &x).amax() < 1e-9) {
                    out.push(x);
                }
            }
        }
        Ok(out)
    }

    /// Random points of the polytope (within `[-radius, radius]^dim`): random
    /// convex combinations of randomly reached vertices, with a share of pure
    /// vertices and edge midpoints so boundary cases are exercised.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        count: usize,
        radius: f64,
    ) -> Result<Vec<DVector<f64>>> {
        let vertices = self.random_vertices(rng, 4 * self.dim + 8, radius)?;
        if vertices.is_empty() {
            return Ok(Vec::new());
        }
        let k = vertices.len();
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let u: f64 = rng.random();
            let point = if u < 0.1 {
                vertices[rng.random_range(0..k)].clone()
            } else if u < 0.2 {
                (&vertices[rng.random_range(0..k)] + &vertices[rng.random_range(0..k)]) * 0.5
            } else {
                let w: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
                let total: f64 = w.iter().sum();
                vertices.iter().zip(&w).fold(DVector::zeros(self.dim), |acc, (v, wi)| acc + v * (wi / total))
            };
            out.push(point);
        }
        Ok(out)
    }
}

fn stack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    m.view_mut((0, 0), (top.nrows(), top.ncols())).copy_from(top);
    m.view_mut((top.nrows(), 0), (bottom.nrows(), bottom.ncols())).copy_from(bottom);
    m
}

fn concat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}
