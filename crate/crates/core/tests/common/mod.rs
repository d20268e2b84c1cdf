//! Independent reference computations for the integration and acceptance
//! tests. Nothing here calls the solvers under test: expectations are summed
//! directly from the environment matrices, polytopes are handled by brute
//! force vertex enumeration and null spaces by row reduction.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use survfin::{AlphaSet, BetaSet, ConstraintSpec, Environment, Proportions};

/// Next-state support of `state`: `(probability, x, y)`.
pub fn branches(env: &Environment, state: usize) -> Vec<(f64, DVector<f64>, DVector<f64>)> {
    let row = env.transition().row(state);
    (0..env.num_states())
        .filter(|&k| row[k] > 0.0)
        .map(|k| {
            (
                row[k],
                env.exogenous_returns().row(k).transpose(),
                env.payoffs().row(k).transpose(),
            )
        })
        .collect()
}

/// `E ln(<alpha, X> W + |Y|) - <e, alpha>`.
pub fn growth_objective(env: &Environment, state: usize, wealth: f64, alpha: &[f64]) -> f64 {
    let mut v = 0.0;
    for (p, x, y) in branches(env, state) {
        let d: f64 = alpha.iter().zip(x.iter()).map(|(a, x)| a * x).sum::<f64>() * wealth + y.sum();
        if d <= 0.0 {
            return f64::NEG_INFINITY;
        }
        v += p * d.ln();
    }
    v - alpha.iter().sum::<f64>()
}

/// `E[Y^n / |Y|]`.
pub fn kelly(env: &Environment, state: usize) -> Vec<f64> {
    let n2 = env.num_endogenous();
    let mut out = vec![0.0; n2];
    for (p, _, y) in branches(env, state) {
        let total = y.sum();
        for n in 0..n2 {
            if y[n] > 0.0 {
                out[n] += p * y[n] / total;
            }
        }
    }
    out
}

/// `E[Y^n / (<alpha, X> W + |Y|)]` with `0/0 = 0`.
pub fn explicit_beta(env: &Environment, state: usize, wealth: f64, alpha: &[f64]) -> Vec<f64> {
    let n2 = env.num_endogenous();
    let mut out = vec![0.0; n2];
    for (p, x, y) in branches(env, state) {
        let d = alpha.iter().zip(x.iter()).map(|(a, x)| a * x).sum::<f64>() * wealth + y.sum();
        for n in 0..n2 {
            if y[n] > 0.0 {
                out[n] += p * y[n] / d;
            }
        }
    }
    out
}

/// Optimal proportion of a single exogenous asset with `alpha in [0, 1]`:
/// the root of `E[X W / (a X W + |Y|)] = 1` by bisection, or an endpoint.
pub fn bisect_single_asset(env: &Environment, state: usize, wealth: f64) -> f64 {
    let br = branches(env, state);
    let phi = |a: f64| -> f64 {
        br.iter().map(|(p, x, y)| p * x[0] * wealth / (a * x[0] * wealth + y.sum())).sum::<f64>() - 1.0
    };
    if phi(0.0) <= 0.0 {
        return 0.0;
    }
    if phi(1.0) >= 0.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Maximum of the growth objective over `{alpha >= 0, <e, alpha> <= 1}` on
/// a grid of the given step, for one or two exogenous assets.
pub fn grid_maximum(env: &Environment, state: usize, wealth: f64, step: f64) -> (f64, Vec<f64>) {
    let n1 = env.num_exogenous();
    let steps = (1.0 / step).round() as usize;
    let mut best = (f64::NEG_INFINITY, vec![]);
    match n1 {
        1 => {
            for i in 0..=steps {
                let a = vec![i as f64 * step];
                let v = growth_objective(env, state, wealth, &a);
                if v > best.0 {
                    best = (v, a);
                }
            }
        }
        2 => {
            for i in 0..=steps {
                for j in 0..=(steps - i) {
                    let a = vec![i as f64 * step, j as f64 * step];
                    let v = growth_objective(env, state, wealth, &a);
                    if v > best.0 {
                        best = (v, a);
                    }
                }
            }
        }
        _ => panic!("grid search supports one or two free coordinates"),
    }
    best
}

/// Basis of `{u : M u = 0}` by Gauss-Jordan elimination with partial pivoting.
pub fn rref_null_space(m: &DMatrix<f64>, tol: f64) -> Vec<DVector<f64>> {
    let (rows, cols) = m.shape();
    let mut a = m.clone();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let (p, val) = (r..rows).map(|i| (i, a[(i, c)].abs())).fold((r, -1.0), |b, x| if x.1 > b.1 { x } else { b });
        if val <= tol {
            continue;
        }
        a.swap_rows(r, p);
        let piv = a[(r, c)];
        for j in 0..cols {
            a[(r, j)] /= piv;
        }
        for i in 0..rows {
            if i != r {
                let f = a[(i, c)];
                for j in 0..cols {
                    a[(i, j)] -= f * a[(r, j)];
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    let free: Vec<usize> = (0..cols).filter(|c| !pivots.contains(c)).collect();
    free.iter()
        .map(|&f| {
            let mut v = DVector::zeros(cols);
            v[f] = 1.0;
            for (i, &pc) in pivots.iter().enumerate() {
                v[pc] = -a[(i, f)];
            }
            v
        })
        .collect()
}

/// Null investments of `state`: `<e, u> = 0` and `<u, x_k> = 0` on the support.
pub fn null_investments(env: &Environment, state: usize) -> Vec<DVector<f64>> {
    let n1 = env.num_exogenous();
    let br = branches(env, state);
    let m = DMatrix::from_fn(br.len() + 1, n1, |i, j| if i == 0 { 1.0 } else { br[i - 1].1[j] });
    rref_null_space(&m, 1e-12)
}

/// Orthogonal projector onto the span of `basis`.
pub fn span_projector(basis: &[DVector<f64>], dim: usize) -> DMatrix<f64> {
    if basis.is_empty() {
        return DMatrix::zeros(dim, dim);
    }
    let b = DMatrix::from_columns(basis);
    let g = b.transpose() * &b;
    &b * g.try_inverse().expect("independent basis") * b.transpose()
}

fn k_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Vertices of `{x : G x <= h, E x = f}` by solving every square subsystem of
/// active constraints. Only meaningful for small bounded polytopes.
pub fn vertices(g: &DMatrix<f64>, h: &DVector<f64>, e: &DMatrix<f64>, f: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = g.ncols().max(e.ncols());
    let free = n.saturating_sub(e.nrows());
    let mut out: Vec<DVector<f64>> = Vec::new();
    for rows in k_subsets(g.nrows(), free) {
        let m = DMatrix::from_fn(e.nrows() + free, n, |i, j| if i < e.nrows() { e[(i, j)] } else { g[(rows[i - e.nrows()], j)] });
        let rhs = DVector::from_fn(e.nrows() + free, |i, _| if i < e.nrows() { f[i] } else { h[rows[i - e.nrows()]] });
        let svd = m.clone().svd(true, true);
        if svd.singular_values.min() < 1e-10 * svd.singular_values.max().max(1.0) {
            continue;
        }
        let Ok(x) = svd.solve(&rhs, 1e-14) else { continue };
        let feasible = (g * &x - h).iter().all(|&v| v <= 1e-9) && (e * &x - f).iter().all(|v| v.abs() <= 1e-9);
        if feasible && !out.iter().any(|o| (o - &x).amax() < 1e-9) {
            out.push(x);
        }
    }
    out
}

/// Inequality rows `G alpha <= g` of the exogenous set including the budget
/// and non-negative-value rows, written from the set's definition.
pub fn alpha_rows(spec: &ConstraintSpec, env: &Environment, state: usize) -> (DMatrix<f64>, DVector<f64>) {
    let n1 = env.num_exogenous();
    let mut rows: Vec<(Vec<f64>, f64)> = vec![(vec![1.0; n1], 1.0), (vec![-1.0; n1], 0.0)];
    match &spec.alpha {
        AlphaSet::Full => {}
        AlphaSet::Nonneg => {
            for j in 0..n1 {
                let mut r = vec![0.0; n1];
                r[j] = -1.0;
                rows.push((r, 0.0));
            }
        }
        AlphaSet::Leverage { c } => {
            for mask in 0..(1usize << n1) {
                rows.push(((0..n1).map(|j| if mask >> j & 1 == 1 { -1.0 } else { -c }).collect(), 0.0));
            }
        }
        AlphaSet::Bounds { lower, upper } => {
            for j in 0..n1 {
                let mut r = vec![0.0; n1];
                r[j] = 1.0;
                rows.push((r.clone(), upper[j]));
                r[j] = -1.0;
                rows.push((r, -lower[j]));
            }
        }
        AlphaSet::Polytope { matrix, rhs } => {
            for (r, b) in matrix.iter().zip(rhs) {
                rows.push((r.clone(), *b));
            }
        }
    }
    for (_, x, _) in branches(env, state) {
        rows.push((x.iter().map(|v| -v).collect(), 0.0));
    }
    let g = DMatrix::from_fn(rows.len(), n1, |i, j| rows[i].0[j]);
    let h = DVector::from_fn(rows.len(), |i, _| rows[i].1);
    (g, h)
}

/// Whether `alpha` lies in the exogenous set, evaluated from the definition.
pub fn alpha_member(spec: &ConstraintSpec, env: &Environment, state: usize, alpha: &DVector<f64>, tol: f64) -> bool {
    let (g, h) = alpha_rows(spec, env, state);
    (g * alpha - h).iter().all(|&v| v <= tol)
}

/// Whether `beta` lies in the endogenous set.
pub fn beta_member(spec: &ConstraintSpec, beta: &DVector<f64>, tol: f64) -> bool {
    if beta.iter().any(|&b| b < -tol) || beta.sum() > 1.0 + tol {
        return false;
    }
    match &spec.beta {
        BetaSet::Simplex => true,
        BetaSet::Polytope { matrix, rhs } => {
            matrix.iter().zip(rhs).all(|(r, b)| r.iter().zip(beta.iter()).map(|(a, x)| a * x).sum::<f64>() <= b + tol)
        }
    }
}

/// Random points of the (bounded) exogenous set: mixtures of its vertices
/// with random weights, so boundary and interior points both occur.
pub fn sample_alpha<R: Rng>(spec: &ConstraintSpec, env: &Environment, state: usize, rng: &mut R, count: usize) -> Vec<DVector<f64>> {
    let (g, h) = alpha_rows(spec, env, state);
    let n1 = env.num_exogenous();
    let verts = vertices(&g, &h, &DMatrix::zeros(0, n1), &DVector::zeros(0));
    assert!(!verts.is_empty(), "exogenous set has no vertices");
    (0..count)
        .map(|i| {
            if i < verts.len() {
                return verts[i].clone();
            }
            // Sparse weights reach faces as well as the interior.
            let w: Vec<f64> = verts.iter().map(|_| if rng.random::<f64>() < 0.5 { rng.random::<f64>() } else { 0.0 }).collect();
            let total: f64 = w.iter().sum();
            if total == 0.0 {
                return verts[rng.random_range(0..verts.len())].clone();
            }
            verts.iter().zip(&w).fold(DVector::zeros(n1), |acc, (v, wi)| acc + v * (wi / total))
        })
        .collect()
}

/// Random points of the endogenous set.
pub fn sample_beta<R: Rng>(spec: &ConstraintSpec, n2: usize, rng: &mut R, count: usize) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let raw: Vec<f64> = (0..n2).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
        let total: f64 = raw.iter().sum();
        let scale = rng.random::<f64>();
        let mut b = DVector::from_fn(n2, |n, _| raw[n] / total * scale);
        // Occasionally zero a coordinate to hit faces.
        if rng.random::<f64>() < 0.3 {
            b[rng.random_range(0..n2)] = 0.0;
        }
        if beta_member(spec, &b, 0.0) {
            out.push(b);
        }
    }
    out
}

/// Next-period absolute wealth of every agent on the branch `(x, y)`,
/// straight from the price and wealth equations.
pub fn next_wealth(props: &[Proportions], wealth: &[f64], x: &DVector<f64>, y: &DVector<f64>) -> Vec<f64> {
    let n2 = y.len();
    let prices: Vec<f64> = (0..n2).map(|n| props.iter().zip(wealth).map(|(h, v)| h.beta[n] * v).sum()).collect();
    props
        .iter()
        .zip(wealth)
        .map(|(h, v)| {
            let mut out = h.alpha.dot(x) * v;
            for n in 0..n2 {
                if prices[n] > 0.0 {
                    out += h.beta[n] * v * y[n] / prices[n];
                }
            }
            out
        })
        .collect()
}

/// `E ln r'^agent - ln r^agent` for fixed proportions.
pub fn compensator(env: &Environment, state: usize, props: &[Proportions], wealth: &[f64], agent: usize) -> f64 {
    let total: f64 = wealth.iter().sum();
    let r = wealth[agent] / total;
    let mut e = 0.0;
    for (p, x, y) in branches(env, state) {
        let next = next_wealth(props, wealth, &x, &y);
        let t: f64 = next.iter().sum();
        e += p * (next[agent] / t).ln();
    }
    e - r.ln()
}

/// `E[(<alpha, X> + <beta, Z>) / (<alpha_hat, X> + <beta_hat, Z>)]` with
/// `Z^n = Y^n / (beta_hat^n W)` and `0/0 = 0`.
pub fn numeraire_ratio(env: &Environment, state: usize, wealth: f64, hat: &Proportions, h: &Proportions) -> f64 {
    let mut e = 0.0;
    for (p, x, y) in branches(env, state) {
        let z = DVector::from_fn(y.len(), |n, _| if hat.beta[n] > 0.0 { y[n] / (hat.beta[n] * wealth) } else { 0.0 });
        e += p * (h.alpha.dot(&x) + h.beta.dot(&z)) / (hat.alpha.dot(&x) + hat.beta.dot(&z));
    }
    e
}

/// Shape of randomly generated instances.
#[derive(Debug, Clone)]
pub struct Shape {
    pub states: std::ops::RangeInclusive<usize>,
    pub exogenous: std::ops::RangeInclusive<usize>,
    pub endogenous: std::ops::RangeInclusive<usize>,
    /// Allow leverage constraints besides no short sales.
    pub leverage: bool,
    /// Allow the endogenous cone `beta^1 <= beta^2` besides the simplex.
    pub beta_polytope: bool,
}

pub struct Instance {
    pub env: Environment,
    pub spec: ConstraintSpec,
    pub model: std::sync::Arc<survfin::MarketModel>,
}

/// A random environment and constraint pair passing every assumption, or
/// `None` when the draw violates one.
pub fn random_instance(seed: u64, shape: &Shape) -> Option<Instance> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xacce_97a0);
    let s = rng.random_range(shape.states.clone());
    let n1 = rng.random_range(shape.exogenous.clone());
    let n2 = rng.random_range(shape.endogenous.clone());
    let mode = if rng.random::<bool>() { survfin::Mode::Iid } else { survfin::Mode::Markov };
    let mut g = survfin::GeneratorSpec::new(s, n1, n2, mode, seed);
    g.returns = (0.85, 1.2);
    g.zero_payoff_probability = if rng.random::<f64>() < 0.3 { 0.25 } else { 0.0 };
    let env = g.generate().ok()?;
    let alpha = if shape.leverage && n1 > 1 && rng.random::<bool>() {
        AlphaSet::Leverage { c: (rng.random::<f64>() * 0.6 * 100.0).round() / 100.0 }
    } else {
        AlphaSet::Nonneg
    };
    let beta = if shape.beta_polytope && n2 > 1 && rng.random::<bool>() {
        let mut row = vec![0.0; n2];
        row[0] = 1.0;
        row[1] = -1.0;
        BetaSet::Polytope { matrix: vec![row], rhs: vec![0.0] }
    } else {
        BetaSet::Simplex
    };
    let spec = ConstraintSpec::new(alpha, beta);
    let model = survfin::MarketModel::uniform(env.clone(), spec.clone()).ok()?;
    Some(Instance { env, spec, model: std::sync::Arc::new(model) })
}

/// The first `count` valid instances from consecutive seeds starting at `first_seed`.
pub fn instances(first_seed: u64, count: usize, shape: &Shape) -> Vec<Instance> {
    (first_seed..).filter_map(|s| random_instance(s, shape)).take(count).collect()
}

/// Endogenous assets some admissible `beta` can hold, from the vertices of `B`.
pub fn investable(spec: &ConstraintSpec, n2: usize) -> Vec<bool> {
    let mut rows: Vec<(Vec<f64>, f64)> = (0..n2)
        .map(|n| {
            let mut r = vec![0.0; n2];
            r[n] = -1.0;
            (r, 0.0)
        })
        .collect();
    rows.push((vec![1.0; n2], 1.0));
    if let BetaSet::Polytope { matrix, rhs } = &spec.beta {
        rows.extend(matrix.iter().cloned().zip(rhs.iter().copied()));
    }
    let g = DMatrix::from_fn(rows.len(), n2, |i, j| rows[i].0[j]);
    let h = DVector::from_fn(rows.len(), |i, _| rows[i].1);
    let verts = vertices(&g, &h, &DMatrix::zeros(0, n2), &DVector::zeros(0));
    (0..n2).map(|n| verts.iter().any(|v| v[n] > 1e-12)).collect()
}

/// Residuals of the first-order conditions at `hat` against test points:
/// each returned value must be at least `-tol` (the equality residual is
/// returned as `-|residual|`).
#[derive(Debug, Clone, Copy)]
pub struct FocResiduals {
    pub alpha_ineq: f64,
    pub alpha_eq: f64,
    pub beta_ineq: f64,
    pub ratio_form: f64,
}

pub fn foc_residuals(
    env: &Environment,
    state: usize,
    spec: &ConstraintSpec,
    wealth: f64,
    hat: &Proportions,
    alphas: &[DVector<f64>],
    betas: &[DVector<f64>],
) -> FocResiduals {
    let inv = investable(spec, env.num_endogenous());
    let br: Vec<(f64, DVector<f64>, DVector<f64>)> = branches(env, state)
        .into_iter()
        .map(|(p, x, y)| (p, x, DVector::from_fn(y.len(), |n, _| if inv[n] { y[n] } else { 0.0 })))
        .collect();
    let d: Vec<f64> = br.iter().map(|(_, x, y)| hat.alpha.dot(x) * wealth + y.sum()).collect();
    let e = |f: &dyn Fn(usize) -> f64| -> f64 { (0..br.len()).map(|k| br[k].0 * f(k)).sum() };
    let alpha_eq = -(e(&|k| hat.alpha.dot(&br[k].1) * wealth / d[k]) - hat.alpha.sum()).abs();
    let alpha_ineq = alphas
        .iter()
        .map(|a| {
            let diff = &hat.alpha - a;
            e(&|k| diff.dot(&br[k].1) * wealth / d[k]) - diff.sum()
        })
        .fold(f64::INFINITY, f64::min);
    let xlnx = |yn: f64, b: f64| -> f64 {
        // y ln b with 0 ln 0 = 0.
        if yn == 0.0 {
            0.0
        } else {
            yn * b.ln()
        }
    };
    let beta_ineq = betas
        .iter()
        .map(|b| {
            let lhs = e(&|k| {
                let y = &br[k].2;
                (0..y.len()).map(|n| xlnx(y[n], hat.beta[n]) - xlnx(y[n], b[n])).sum::<f64>() / d[k]
            });
            lhs - (hat.beta.sum() - b.sum())
        })
        .fold(f64::INFINITY, f64::min);
    let ratio_form = betas
        .iter()
        .map(|b| {
            let lhs = e(&|k| {
                let y = &br[k].2;
                let held: f64 = (0..y.len()).filter(|&n| hat.beta[n] > 0.0).map(|n| b[n] * y[n] / hat.beta[n]).sum();
                (y.sum() - held) / d[k]
            });
            lhs - (hat.beta.sum() - b.sum())
        })
        .fold(f64::INFINITY, f64::min);
    FocResiduals { alpha_ineq, alpha_eq, beta_ineq, ratio_form }
}
