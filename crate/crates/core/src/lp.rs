//! Dense two-phase simplex for small linear programs.
//!
//! Problems in this crate have a handful of variables and a few dozen
//! constraints, so a tableau method with Bland's anti-cycling rule is
//! adequate and keeps the solver free of external dependencies.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: DVector<f64>, value: f64 },
    /// The objective grows without bound along `ray` from the feasible point `x`.
    Unbounded { x: DVector<f64>, ray: DVector<f64> },
    Infeasible,
}

impl LpOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            LpOutcome::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }

    pub fn point(&self) -> Option<&DVector<f64>> {
        match self {
            LpOutcome::Optimal { x, .. } | LpOutcome::Unbounded { x, .. } => Some(x),
            LpOutcome::Infeasible => None,
        }
    }
}

/// Maximizes `c . x` subject to `a x <= b` and `e x = f` with `x` free.
pub fn maximize(
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    e: &DMatrix<f64>,
    f: &DVector<f64>,
) -> Result<LpOutcome> {
    let n = c.len();
    if a.ncols() != n || e.ncols() != n || a.nrows() != b.len() || e.nrows() != f.len() {
        return Err(Error::invalid("linear program dimensions do not agree"));
    }
    if c.iter().chain(a.iter()).chain(b.iter()).chain(e.iter()).chain(f.iter()).any(|v| !v.is_finite()) {
        return Err(Error::numerical("linear program has non-finite data"));
    }
    Tableau::build(c, a, b, e, f).solve()
}

/// Column layout: `[u (n) | w (n) | slack (mi) | artificial (m)]`, `x = u - w`.
struct Tableau {
    n: usize,
    mi: usize,
    m: usize,
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cost: Vec<f64>,
    objective: DVector<f64>,
}

impl Tableau {
    fn build(
        c: &DVector<f64>,
        a: &DMatrix<f64>,
        b: &DVector<f64>,
        e: &DMatrix<f64>,
        f: &DVector<f64>,
    ) -> Self {
        let n = c.len();
        let mi = a.nrows();
        let m = mi + e.nrows();
        let width = 2 * n + mi + m + 1;
        let mut rows = Vec::with_capacity(m);
        for r in 0..m {
            let mut row = vec![0.0; width];
            let (coeffs, rhs) = if r < mi {
                row[2 * n + r] = 1.0;
                (a.row(r).clone_owned(), b[r])
            } else {
                (e.row(r - mi).clone_owned(), f[r - mi])
            };
            for j in 0..n {
                row[j] = coeffs[j];
                row[n + j] = -coeffs[j];
            }
            row[width - 1] = rhs;
            if rhs < 0.0 {
                for v in row.iter_mut() {
                    *v = -*v;
                }
            }
            row[2 * n + mi + r] = 1.0;
            rows.push(row);
        }
        let basis = (0..m).map(|r| 2 * n + mi + r).collect();
        Tableau { n, mi, m, rows, basis, cost: vec![0.0; width], objective: c.clone() }
    }

    fn width(&self) -> usize {
        2 * self.n + self.mi + self.m + 1
    }

    fn first_artificial(&self) -> usize {
        2 * self.n + self.mi
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let w = self.width();
        let p = self.rows[r][col];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i != r {
                let factor = row[col];
                if factor != 0.0 {
                    for j in 0..w {
                        row[j] -= factor * pivot_row[j];
                    }
                    row[col] = 0.0;
                }
            }
        }
        let factor = self.cost[col];
        if factor != 0.0 {
            for j in 0..w {
                self.cost[j] -= factor * pivot_row[j];
            }
            self.cost[col] = 0.0;
        }
        self.basis[r] = col;
    }

    /// Sets the reduced-cost row for raw costs `raw` (minimization).
    fn price(&mut self, raw: &[f64]) {
        let w = self.width();
        self.cost = raw.to_vec();
        self.cost.resize(w, 0.0);
        for r in 0..self.m {
            let cb = raw.get(self.basis[r]).copied().unwrap_or(0.0);
            if cb != 0.0 {
                for j in 0..w {
                    self.cost[j] -= cb * self.rows[r][j];
                }
            }
        }
    }

    /// Runs primal simplex iterations over columns `< limit`.
    /// Returns `Some(col)` if the objective is unbounded along `col`.
    fn iterate(&mut self, limit: usize) -> Result<Option<usize>> {
        let max_iter = 50 * (self.width() + self.m) + 1000;
        for _ in 0..max_iter {
            let Some(col) = (0..limit).find(|&j| self.cost[j] < -COST_TOL) else {
                return Ok(None);
            };
            let rhs = self.width() - 1;
            let mut best: Option<(f64, usize, usize)> = None;
            for r in 0..self.m {
                let a = self.rows[r][col];
                if a > PIVOT_TOL {
                    let ratio = self.rows[r][rhs].max(0.0) / a;
                    let better = match best {
                        None => true,
                        Some((br, _, bb)) => {
                            ratio < br - 1e-14 || (ratio <= br + 1e-14 && self.basis[r] < bb)
                        }
                    };
                    if better {
                        best = Some((ratio, r, self.basis[r]));
                    }
                }
            }
            match best {
                None => return Ok(Some(col)),
                Some((_, r, _)) => self.pivot(r, col),
            }
        }
        Err(Error::NonConvergence { what: "simplex", iterations: max_iter, residual: f64::NAN })
    }

    fn point(&self) -> DVector<f64> {
        let rhs = self.width() - 1;
        let mut z = vec![0.0; self.width() - 1];
        for r in 0..self.m {
            z[self.basis[r]] = self.rows[r][rhs];
        }
        DVector::from_fn(self.n, |j, _| z[j] - z[self.n + j])
    }

    fn solve(mut self) -> Result<LpOutcome> {
        let art = self.first_artificial();
        let w = self.width();

        // Phase 1: minimize the sum of artificials.
        let mut raw = vec![0.0; w - 1];
        for v in raw.iter_mut().skip(art) {
            *v = 1.0;
        }
        self.price(&raw);
        self.iterate(art)?;
        let infeasibility: f64 = (0..self.m)
            .filter(|&r| self.basis[r] >= art)
            .map(|r| self.rows[r][w - 1])
            .sum();
        let scale = 1.0 + self.rows.iter().map(|r| r[w - 1].abs()).fold(0.0, f64::max);
        if infeasibility > FEAS_TOL * scale {
            return Ok(LpOutcome::Infeasible);
        }
        // Drive remaining artificials out of the basis; rows with no usable
        // pivot are redundant and stay inert.
        for r in 0..self.m {
            if self.basis[r] >= art {
                if let Some(col) = (0..art).find(|&j| self.rows[r][j].abs() > 1e-9) {
                    self.pivot(r, col);
                }
            }
        }

        // Phase 2: minimize -c.x over the original columns.
        let mut raw = vec![0.0; w - 1];
        for j in 0..self.n {
            raw[j] = -self.objective[j];
            raw[self.n + j] = self.objective[j];
        }
        self.price(&raw);
        let unbounded = self.iterate(art)?;
        let x = self.point();
        match unbounded {
            None => {
                let value = self.objective.dot(&x);
                Ok(LpOutcome::Optimal { x, value })
            }
            Some(col) => {
                let mut dz = vec![0.0; w - 1];
                dz[col] = 1.0;
                for r in 0..self.m {
                    dz[self.basis[r]] -= self.rows[r][col];
                }
                let ray = DVector::from_fn(self.n, |j, _| dz[j] - dz[self.n + j]);
                Ok(LpOutcome::Unbounded { x, ray })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn none(n: usize) -> (DMatrix<f64>, DVector<f64>) {
        (DMatrix::zeros(0, n), DVector::zeros(0))
    }

    #[test]
    fn simplex_vertex() {
        // max x + 2y, x + y <= 1, x, y >= 0
        let c = DVector::from_vec(vec![1.0, 2.0]);
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        let b = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let (e, f) = none(2);
        match maximize(&c, &a, &b, &e, &f).unwrap() {
            LpOutcome::Optimal { x, value } => {
                assert!((value - 2.0).abs() < 1e-12);
                assert!((x[1] - 1.0).abs() < 1e-12);
            }
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn equality_and_negative_rhs() {
        // max -x - y, x + y = 3, x >= 1 (written -x <= -1), y >= 0
        let c = DVector::from_vec(vec![-1.0, -2.0]);
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]);
        let b = DVector::from_vec(vec![-1.0, 0.0]);
        let e = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let f = DVector::from_vec(vec![3.0]);
        let out = maximize(&c, &a, &b, &e, &f).unwrap();
        let x = out.point().unwrap();
        assert!((x[0] - 3.0).abs() < 1e-12 && x[1].abs() < 1e-12);
        assert!((out.value().unwrap() + 3.0).abs() < 1e-12);
    }

    #[test]
    fn unbounded_ray() {
        // max x - y with x - y <= ... nothing but y >= 0
        let c = DVector::from_vec(vec![1.0, 0.0]);
        let a = DMatrix::from_row_slice(1, 2, &[0.0, -1.0]);
        let b = DVector::from_vec(vec![0.0]);
        let (e, f) = none(2);
        match maximize(&c, &a, &b, &e, &f).unwrap() {
            LpOutcome::Unbounded { ray, .. } => {
                assert!(ray[0] > 0.0);
                assert!(-ray[1] <= 1e-12);
            }
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn infeasible() {
        let c = DVector::from_vec(vec![1.0]);
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![0.0, -1.0]);
        let (e, f) = none(1);
        assert_eq!(maximize(&c, &a, &b, &e, &f).unwrap(), LpOutcome::Infeasible);
    }

    #[test]
    fn redundant_equalities() {
        let c = DVector::from_vec(vec![1.0, 0.0]);
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]);
        let b = DVector::zeros(2);
        let e = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let f = DVector::from_vec(vec![1.0, 2.0]);
        let out = maximize(&c, &a, &b, &e, &f).unwrap();
        assert!((out.value().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_dimensional() {
        let c = DVector::zeros(0);
        let a = DMatrix::zeros(1, 0);
        let b = DVector::from_vec(vec![1.0]);
        let (e, f) = none(0);
        assert_eq!(maximize(&c, &a, &b, &e, &f).unwrap().value(), Some(0.0));
        let b = DVector::from_vec(vec![-1.0]);
        assert_eq!(maximize(&c, &a, &b, &e, &f).unwrap(), LpOutcome::Infeasible);
    }
}
