//! Limited-memory BFGS with a strong-Wolfe or a backtracking Armijo line
//! search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineSearch {
    StrongWolfe,
    /// Backtracking with sufficient-decrease acceptance only; tolerates
    /// kinks in piecewise-smooth objectives.
    Armijo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iterations: usize,
    pub grad_tol: f64,
    pub rel_cost_tol: f64,
    pub line_search: LineSearch,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search_evals: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 8,
            max_iterations: 500,
            grad_tol: 1e-6,
            rel_cost_tol: 1e-8,
            line_search: LineSearch::StrongWolfe,
            c1: 1e-4,
            c2: 0.9,
            max_line_search_evals: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientNorm,
    RelativeCostChange,
    MaxIterations,
    LineSearchFailure,
}

impl StopReason {
    pub fn converged(self) -> bool {
        matches!(self, StopReason::GradientNorm | StopReason::RelativeCostChange)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Objective at the initial point and after every accepted step.
    pub trace: Vec<f64>,
    pub reason: StopReason,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Counted<F> {
    fn call(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x, g);
        if v.is_finite() && g.iter().all(|v| v.is_finite()) {
            v
        } else {
            f64::INFINITY
        }
    }
}

struct Point {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    slope: f64,
}

/// Minimizes `f` from `x0`. The callback writes the gradient into its
/// second argument and returns the objective value.
pub fn minimize<F>(f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> OptimResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut obj = Counted { f, evals: 0 };
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = obj.call(&x, &mut g);
    let mut trace = vec![fx];
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;

    if n == 0 || norm(&g) < opts.grad_tol {
        return OptimResult {
            x,
            value: fx,
            iterations,
            evaluations: obj.evals,
            trace,
            reason: StopReason::GradientNorm,
        };
    }

    let mut retried = false;
    let reason = loop {
        if iterations >= opts.max_iterations {
            break StopReason::MaxIterations;
        }
        let mut d = two_loop(&g, &hist);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let alpha0 = if hist.is_empty() { (1.0 / norm(&d)).min(1.0) } else { 1.0 };

        let mut eval_at = |alpha: f64, gbuf: &mut Vec<f64>| -> (f64, f64) {
            let xt: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            let ft = obj.call(&xt, gbuf);
            (ft, dot(gbuf, &d))
        };
        let found = match opts.line_search {
            LineSearch::StrongWolfe => strong_wolfe(&mut eval_at, n, fx, slope, alpha0, opts),
            LineSearch::Armijo => armijo(&mut eval_at, n, fx, slope, alpha0, opts),
        };
        let Some(p) = found else {
            if !hist.is_empty() && !retried {
                // retry once along steepest descent
                hist.clear();
                retried = true;
                continue;
            }
            break StopReason::LineSearchFailure;
        };
        retried = false;
        iterations += 1;

        let s: Vec<f64> = d.iter().map(|di| p.alpha * di).collect();
        let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        let f_prev = fx;
        fx = p.f;
        g = p.g;
        trace.push(fx);

        let sy = dot(&s, &y);
        if sy > 1e-10 * norm(&s) * norm(&y) && sy > 0.0 {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }

        if norm(&g) < opts.grad_tol {
            break StopReason::GradientNorm;
        }
        if (f_prev - fx).abs() <= opts.rel_cost_tol * f_prev.abs().max(1.0) {
            break StopReason::RelativeCostChange;
        }
    };
    OptimResult {
        x,
        value: fx,
        iterations,
        evaluations: obj.evals,
        trace,
        reason,
    }
}

fn two_loop(g: &[f64], hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

fn armijo<E>(eval: &mut E, n: usize, f0: f64, slope: f64, alpha0: f64, opts: &LbfgsOptions) -> Option<Point>
where
    E: FnMut(f64, &mut Vec<f64>) -> (f64, f64),
{
    let mut alpha = alpha0;
    let mut g = vec![0.0; n];
    for _ in 0..opts.max_line_search_evals {
        let (f, s) = eval(alpha, &mut g);
        if f <= f0 + opts.c1 * alpha * slope && f < f0 {
            return Some(Point { alpha, f, g, slope: s });
        }
        alpha *= 0.5;
    }
    None
}

fn strong_wolfe<E>(eval: &mut E, n: usize, f0: f64, slope0: f64, alpha0: f64, opts: &LbfgsOptions) -> Option<Point>
where
    E: FnMut(f64, &mut Vec<f64>) -> (f64, f64),
{
    let (c1, c2) = (opts.c1, opts.c2);
    let mut budget = opts.max_line_search_evals;
    let mut prev = Point {
        alpha: 0.0,
        f: f0,
        g: Vec::new(),
        slope: slope0,
    };
    let mut alpha = alpha0;
    let mut first = true;
    loop {
        if budget == 0 {
            return None;
        }
        budget -= 1;
        let mut g = vec![0.0; n];
        let (f, s) = eval(alpha, &mut g);
        let cur = Point { alpha, f, g, slope: s };
        if f > f0 + c1 * alpha * slope0 || (!first && f >= prev.f) {
            return zoom(eval, n, f0, slope0, prev, cur, budget, opts);
        }
        if s.abs() <= -c2 * slope0 {
            return Some(cur);
        }
        if s >= 0.0 {
            return zoom(eval, n, f0, slope0, cur, prev, budget, opts);
        }
        first = false;
        alpha *= 2.0;
        prev = cur;
    }
}

#[allow(clippy::too_many_arguments)]
fn zoom<E>(
    eval: &mut E,
    n: usize,
    f0: f64,
    slope0: f64,
    mut lo: Point,
    mut hi: Point,
    mut budget: usize,
    opts: &LbfgsOptions,
) -> Option<Point>
where
    E: FnMut(f64, &mut Vec<f64>) -> (f64, f64),
{
    let (c1, c2) = (opts.c1, opts.c2);
    while budget > 0 {
        budget -= 1;
        let alpha = interpolate(&lo, &hi);
        let mut g = vec![0.0; n];
        let (f, s) = eval(alpha, &mut g);
        let cur = Point { alpha, f, g, slope: s };
        if f > f0 + c1 * alpha * slope0 || f >= lo.f {
            hi = cur;
        } else {
            if s.abs() <= -c2 * slope0 {
                return Some(cur);
            }
            if s * (hi.alpha - lo.alpha) >= 0.0 {
                hi = std::mem::replace(&mut lo, cur);
            } else {
                lo = cur;
            }
        }
        if (hi.alpha - lo.alpha).abs() < 1e-16 * lo.alpha.abs().max(1.0) {
            break;
        }
    }
    // fall back to the best sufficient-decrease point found
    (lo.alpha > 0.0 && lo.f < f0 && !lo.g.is_empty()).then_some(lo)
}

/// Safeguarded cubic interpolation between two bracket ends.
fn interpolate(a: &Point, b: &Point) -> f64 {
    let (lo, hi) = if a.alpha < b.alpha { (a, b) } else { (b, a) };
    let width = hi.alpha - lo.alpha;
    let mid = lo.alpha + 0.5 * width;
    if !hi.f.is_finite() || !lo.f.is_finite() {
        return mid;
    }
    let d1 = lo.slope + hi.slope - 3.0 * (lo.f - hi.f) / (lo.alpha - hi.alpha);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if disc < 0.0 {
        return mid;
    }
    let d2 = disc.sqrt();
    let t = hi.alpha - width * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
    let margin = 0.1 * width;
    if t.is_finite() && t > lo.alpha + margin && t < hi.alpha - margin {
        t
    } else {
        mid
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn rosenbrock_wolfe() {
        let opts = LbfgsOptions {
            rel_cost_tol: 0.0,
            ..Default::default()
        };
        let r = minimize(rosenbrock, vec![-1.2, 1.0], &opts);
        assert!(r.reason.converged(), "{:?}", r.reason);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?}", r.x);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn quadratic_armijo() {
        let opts = LbfgsOptions {
            line_search: LineSearch::Armijo,
            rel_cost_tol: 0.0,
            ..Default::default()
        };
        let r = minimize(
            |x, g| {
                g[0] = 2.0 * (x[0] - 3.0);
                g[1] = 20.0 * (x[1] + 1.0);
                (x[0] - 3.0).powi(2) + 10.0 * (x[1] + 1.0).powi(2)
            },
            vec![0.0, 0.0],
            &opts,
        );
        assert!((r.x[0] - 3.0).abs() < 1e-6 && (r.x[1] + 1.0).abs() < 1e-6);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn nonsmooth_abs_does_not_increase() {
        let opts = LbfgsOptions {
            line_search: LineSearch::Armijo,
            ..Default::default()
        };
        let r = minimize(
            |x, g| {
                g[0] = x[0].signum();
                g[1] = 2.0 * x[1];
                x[0].abs() + x[1] * x[1]
            },
            vec![1.3, -0.7],
            &opts,
        );
        assert!(r.value < 1e-3);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }
}
