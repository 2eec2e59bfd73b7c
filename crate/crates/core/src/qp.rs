//! Primal active-set solver for small dense convex quadratic programs
//!
//! minimize ½ xᵀHx + gᵀx subject to aᵢᵀx ≥ bᵢ.

use nalgebra::{DMatrix, DVector};

/// `Σ coeff · x[index] ≥ lower`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub terms: Vec<(usize, f64)>,
    pub lower: f64,
}

impl LinearConstraint {
    pub fn new(terms: Vec<(usize, f64)>, lower: f64) -> Self {
        Self { terms, lower }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, c)| c * x[i]).sum()
    }

    /// `aᵀx − b`; nonnegative when satisfied.
    #[inline]
    pub fn slack(&self, x: &[f64]) -> f64 {
        self.eval(x) - self.lower
    }

    fn dense(&self, n: usize) -> DVector<f64> {
        let mut a = DVector::zeros(n);
        for &(i, c) in &self.terms {
            a[i] += c;
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpOptions {
    pub max_iterations: usize,
    /// Slack below which a constraint counts as active.
    pub active_tol: f64,
    /// Largest constraint violation accepted in the starting point.
    pub feasibility_tol: f64,
    /// Multipliers above `-multiplier_tol` are treated as nonnegative.
    pub multiplier_tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            active_tol: 1e-10,
            feasibility_tol: 1e-9,
            multiplier_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Working set at the solution, in the order constraints were added.
    pub active: Vec<usize>,
    /// Multipliers matching `active`.
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    /// `‖Hx + g − Σ λᵢ aᵢ‖∞`.
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QpError {
    #[error("constraints admit no feasible point")]
    Infeasible,
    #[error("starting point violates constraint {index} by {violation:e}")]
    InfeasibleStart { index: usize, violation: f64 },
    #[error("active-set iteration limit reached")]
    MaxIterations { best: Vec<f64>, feasible: bool },
    #[error("Hessian is not positive definite")]
    NotConvex,
    #[error("dimension mismatch")]
    Dimension,
    #[error("singular KKT system")]
    Singular,
}

/// Returns `H`, or `H + 1e-9·I` when `H` is only semidefinite.
pub fn regularize(h: &DMatrix<f64>) -> Result<DMatrix<f64>, QpError> {
    let sym = (h + h.transpose()) * 0.5;
    if sym.clone().cholesky().is_some() {
        return Ok(sym);
    }
    let n = sym.nrows();
    let reg = sym + DMatrix::identity(n, n) * 1e-9;
    if reg.clone().cholesky().is_some() {
        Ok(reg)
    } else {
        Err(QpError::NotConvex)
    }
}

pub fn objective(h: &DMatrix<f64>, g: &DVector<f64>, x: &[f64]) -> f64 {
    let x = DVector::from_column_slice(x);
    0.5 * x.dot(&(h * &x)) + g.dot(&x)
}

/// Solves the equality-constrained step: min ½pᵀHp + gradᵀp with aᵢᵀp = 0
/// for the working set. Returns `(p, λ)` where `H(x+p) + g = Σ λᵢ aᵢ`.
fn eqp(h: &DMatrix<f64>, grad: &DVector<f64>, rows: &[DVector<f64>]) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = h.nrows();
    let w = rows.len();
    let mut kkt = DMatrix::zeros(n + w, n + w);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    for (k, a) in rows.iter().enumerate() {
        for i in 0..n {
            kkt[(i, n + k)] = -a[i];
            kkt[(n + k, i)] = a[i];
        }
    }
    let mut rhs = DVector::zeros(n + w);
    rhs.rows_mut(0, n).copy_from(&(-grad));
    let sol = kkt.lu().solve(&rhs)?;
    Some((sol.rows(0, n).into_owned(), sol.rows(n, w).into_owned()))
}

/// Adds rows greedily while they stay linearly independent.
fn independent_subset(cons: &[LinearConstraint], candidates: &[usize], n: usize) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    for &i in candidates {
        let a = cons[i].dense(n);
        let norm = a.norm();
        if norm == 0.0 {
            continue;
        }
        let mut r = a / norm;
        for b in &basis {
            let d = r.dot(b);
            r -= b * d;
        }
        let rn = r.norm();
        if rn > 1e-9 {
            basis.push(r / rn);
            kept.push(i);
        }
    }
    kept
}

/// Runs the primal active-set method from a feasible `x0`.
///
/// `working` seeds the working set; entries that are not active at `x0` or
/// are linearly dependent on earlier entries are dropped.
pub fn solve_active_set(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    cons: &[LinearConstraint],
    x0: &[f64],
    working: &[usize],
    opts: &QpOptions,
) -> Result<QpSolution, QpError> {
    let n = h.nrows();
    if h.ncols() != n || g.len() != n || x0.len() != n {
        return Err(QpError::Dimension);
    }
    if cons.iter().any(|c| c.terms.iter().any(|&(i, _)| i >= n)) {
        return Err(QpError::Dimension);
    }
    for (i, c) in cons.iter().enumerate() {
        let s = c.slack(x0);
        if s < -opts.feasibility_tol {
            return Err(QpError::InfeasibleStart { index: i, violation: -s });
        }
    }
    let dense: Vec<DVector<f64>> = cons.iter().map(|c| c.dense(n)).collect();
    let seeds: Vec<usize> = working
        .iter()
        .copied()
        .filter(|&i| i < cons.len() && cons[i].slack(x0).abs() <= opts.active_tol)
        .collect();
    let mut w = independent_subset(cons, &seeds, n);
    let mut in_w = vec![false; cons.len()];
    for &i in &w {
        in_w[i] = true;
    }
    let mut x = DVector::from_column_slice(x0);

    for iter in 0..opts.max_iterations {
        let grad = h * &x + g;
        let rows: Vec<DVector<f64>> = w.iter().map(|&i| dense[i].clone()).collect();
        let (p, lambda) = eqp(h, &grad, &rows).ok_or(QpError::Singular)?;
        let p_scale = 1.0 + x.amax();
        if p.amax() <= 1e-12 * p_scale {
            let mut worst: Option<(usize, f64)> = None;
            for (k, &l) in lambda.iter().enumerate() {
                if l < -opts.multiplier_tol && worst.map_or(true, |(_, m)| l < m) {
                    worst = Some((k, l));
                }
            }
            match worst {
                None => {
                    let mut r = grad.clone();
                    for (k, a) in rows.iter().enumerate() {
                        r -= a * lambda[k];
                    }
                    let xs: Vec<f64> = x.iter().copied().collect();
                    return Ok(QpSolution {
                        objective: objective(h, g, &xs),
                        x: xs,
                        active: w,
                        multipliers: lambda.iter().copied().collect(),
                        iterations: iter + 1,
                        kkt_residual: r.amax(),
                    });
                }
                Some((k, _)) => {
                    in_w[w[k]] = false;
                    w.remove(k);
                }
            }
            continue;
        }
        let mut alpha = 1.0;
        let mut blocking = None;
        let p_norm = p.norm();
        for (i, a) in dense.iter().enumerate() {
            if in_w[i] {
                continue;
            }
            let ap = a.dot(&p);
            if ap < -1e-12 * a.norm() * p_norm {
                let slack = (a.dot(&x) - cons[i].lower).max(0.0);
                let ratio = slack / -ap;
                if ratio < alpha {
                    alpha = ratio;
                    blocking = Some(i);
                }
            }
        }
        x += &p * alpha;
        if let Some(i) = blocking {
            in_w[i] = true;
            w.push(i);
        }
    }
    let best: Vec<f64> = x.iter().copied().collect();
    let feasible = cons.iter().all(|c| c.slack(&best) >= -opts.feasibility_tol);
    Err(QpError::MaxIterations { best, feasible })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_minimizer() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let g = DVector::from_column_slice(&[1.0, -1.0]);
        let s = solve_active_set(&h, &g, &[], &[0.0, 0.0], &[], &QpOptions::default()).unwrap();
        let expect = h.clone().lu().solve(&(-&g)).unwrap();
        assert!((DVector::from_column_slice(&s.x) - expect).amax() < 1e-12);
    }

    #[test]
    fn clamped_scalar() {
        // (u-2)^2 with u <= 1
        let h = DMatrix::from_element(1, 1, 2.0);
        let g = DVector::from_element(1, -4.0);
        let c = [LinearConstraint::new(vec![(0, -1.0)], -1.0)];
        let s = solve_active_set(&h, &g, &c, &[0.0], &[], &QpOptions::default()).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12);
        assert_eq!(s.active, vec![0]);
        assert!((s.multipliers[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_infeasible_start() {
        let h = DMatrix::identity(1, 1);
        let g = DVector::zeros(1);
        let c = [LinearConstraint::new(vec![(0, 1.0)], 1.0)];
        assert!(matches!(
            solve_active_set(&h, &g, &c, &[0.0], &[], &QpOptions::default()),
            Err(QpError::InfeasibleStart { index: 0, .. })
        ));
    }

    #[test]
    fn semidefinite_is_regularized() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let r = regularize(&h).unwrap();
        assert_eq!(r[(1, 1)], 1e-9);
        assert!(regularize(&(-h)).is_err());
    }
}
