//! Primal active-set method for small strictly convex quadratic programs
//!
//! ```text
//! minimize 1/2 x'Px + q'x   subject to   Gx <= h,  Ex = f
//! ```
//!
//! started from a feasible point. Used for Euclidean projections onto
//! polytopes and for the scaled-metric (Newton) steps of the concave
//! maximizer.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const STEP_TOL: f64 = 1e-13;
const ACTIVE_TOL: f64 = 1e-10;

pub struct QuadraticProgram<'a> {
    pub p: &'a DMatrix<f64>,
    pub q: &'a DVector<f64>,
    pub g: &'a DMatrix<f64>,
    pub h: &'a DVector<f64>,
    pub e: &'a DMatrix<f64>,
}

impl QuadraticProgram<'_> {
    /// Solves the program from the feasible point `x0` (equality residuals
    /// of `x0` are preserved; the caller is responsible for them).
    pub fn solve_from(&self, x0: &DVector<f64>) -> Result<DVector<f64>> {
        let n = x0.len();
        if n == 0 {
            return Ok(x0.clone());
        }
        let m = self.g.nrows();
        let ne = self.e.nrows();
        let mut x = x0.clone();
        let mut working: Vec<usize> = Vec::new();
        for i in 0..m {
            let slack = self.h[i] - self.g.row(i).dot(&x.transpose());
            if slack.abs() <= ACTIVE_TOL * (1.0 + self.h[i].abs())
                && increases_rank(self.e, self.g, &working, i)
            {
                working.push(i);
            }
        }
        let max_iter = 20 * (n + m) + 100;
        for _ in 0..max_iter {
            let k = ne + working.len();
            let mut kkt = DMatrix::zeros(n + k, n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(self.p);
            for r in 0..k {
                let row = if r < ne { self.e.row(r) } else { self.g.row(working[r - ne]) };
                for j in 0..n {
                    kkt[(n + r, j)] = row[j];
                    kkt[(j, n + r)] = row[j];
                }
            }
            let grad = self.p * &x + self.q;
            let mut rhs = DVector::zeros(n + k);
            rhs.rows_mut(0, n).copy_from(&(-&grad));
            let sol = solve_kkt(kkt, &rhs)?;
            let step = sol.rows(0, n).clone_owned();
            let scale = 1.0 + x.amax();
            if step.amax() <= STEP_TOL * scale {
                let grad_scale = 1.0 + grad.amax();
                let worst = (0..working.len())
                    .map(|w| (w, sol[n + ne + w]))
                    .min_by(|a, b| a.1.total_cmp(&b.1));
                match worst {
                    Some((w, lam)) if lam < -1e-11 * grad_scale => {
                        working.remove(w);
                    }
                    _ => return Ok(x),
                }
            } else {
                let mut t = 1.0;
                let mut blocking = None;
                for i in 0..m {
                    if working.contains(&i) {
                        continue;
                    }
                    let gi = self.g.row(i);
                    let ap = gi.dot(&step.transpose());
                    if ap > 1e-14 * (1.0 + gi.amax()) * step.amax() {
                        let slack = (self.h[i] - gi.dot(&x.transpose())).max(0.0);
                        let ti = slack / ap;
                        if ti < t {
                            t = ti;
                            blocking = Some(i);
                        }
                    }
                }
                x += step * t;
                if let Some(i) = blocking {
                    working.push(i);
                }
            }
        }
        Err(Error::NonConvergence { what: "active-set QP", iterations: max_iter, residual: f64::NAN })
    }
}

fn increases_rank(e: &DMatrix<f64>, g: &DMatrix<f64>, working: &[usize], candidate: usize) -> bool {
    let n = g.ncols();
    let rows = e.nrows() + working.len();
    let mut a = DMatrix::zeros(rows + 1, n);
    for r in 0..e.nrows() {
        a.set_row(r, &e.row(r));
    }
    for (r, &i) in working.iter().enumerate() {
        a.set_row(e.nrows() + r, &g.row(i));
    }
    a.set_row(rows, &g.row(candidate));
    let before = if rows == 0 { 0 } else { rank(&a.rows(0, rows).clone_owned()) };
    rank(&a) > before
}

/// Numerical rank with a relative singular-value cutoff.
pub(crate) fn rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.amax();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > 1e-9 * max).count()
}

fn solve_kkt(kkt: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(sol) = kkt.clone().lu().solve(rhs) {
        let resid = (&kkt * &sol - rhs).amax();
        if resid.is_finite() && resid <= 1e-9 * (1.0 + rhs.amax()) {
            return Ok(sol);
        }
    }
    let svd = kkt.svd(true, true);
    let eps = 1e-12 * svd.singular_values.amax().max(1.0);
    svd.solve(rhs, eps).map_err(|e| Error::numerical(format!("KKT solve failed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_onto_simplex() {
        // project (1, 1, -1) onto {x >= 0, sum x = 1}
        let p = DMatrix::identity(3, 3);
        let y = DVector::from_vec(vec![1.0, 1.0, -1.0]);
        let q = -&y;
        let g = -DMatrix::identity(3, 3);
        let h = DVector::zeros(3);
        let e = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let x0 = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let qp = QuadraticProgram { p: &p, q: &q, g: &g, h: &h, e: &e };
        let x = qp.solve_from(&x0).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-12 && (x[1] - 0.5).abs() < 1e-12 && x[2].abs() < 1e-12);
    }

    #[test]
    fn degenerate_vertex_start() {
        // Box [0,1]^2 with a duplicated constraint, starting at the corner.
        let p = DMatrix::identity(2, 2);
        let q = DVector::from_vec(vec![-0.3, -2.0]);
        let g = DMatrix::from_row_slice(
            5,
            2,
            &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0, 2.0, 0.0],
        );
        let h = DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0, 2.0]);
        let e = DMatrix::zeros(0, 2);
        let qp = QuadraticProgram { p: &p, q: &q, g: &g, h: &h, e: &e };
        let x = qp.solve_from(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert!((x[0] - 0.3).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }
}
