//! BFGS with an inverse-Hessian update and a strong-Wolfe line search.

use serde::{Deserialize, Serialize};

/// Something that can be minimized. Gradients are requested only where the
/// line search needs them.
pub trait Objective {
    fn value(&mut self, x: &[f64]) -> f64;
    fn gradient(&mut self, x: &[f64]) -> Vec<f64>;
}

/// Adapter for a pair of closures.
pub struct FnObjective<F, G> {
    pub value: F,
    pub gradient: G,
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64]) -> Vec<f64>,
{
    fn value(&mut self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn gradient(&mut self, x: &[f64]) -> Vec<f64> {
        (self.gradient)(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BfgsStatus {
    /// `‖∇f‖_∞` reached the tolerance.
    Converged,
    IterationLimit,
    /// No step satisfying the Wolfe conditions was found, even after a
    /// Hessian reset.
    LineSearchFailed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BfgsReport {
    pub status: BfgsStatus,
    pub iterations: usize,
    pub value_evals: usize,
    pub gradient_evals: usize,
    pub value: f64,
    pub grad_inf: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct LineSearchParams {
    pub c1: f64,
    pub c2: f64,
    pub max_evals: usize,
}

impl Default for LineSearchParams {
    fn default() -> Self {
        Self {
            c1: 1e-4,
            c2: 0.9,
            max_evals: 40,
        }
    }
}

/// Optimizer state that survives between calls to [`Bfgs::run`], so a caller
/// can tighten the tolerance and continue with the accumulated curvature.
#[derive(Clone, Debug)]
pub struct Bfgs {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
    // row-major n × n inverse Hessian approximation
    h: Vec<f64>,
    fresh: bool,
    pub line_search: LineSearchParams,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

enum Step {
    Wolfe { alpha: f64, f: f64, g: Vec<f64> },
    Armijo { alpha: f64, f: f64 },
    Failed,
}

impl Bfgs {
    /// Starts at `x0`, evaluating value and gradient once.
    pub fn new(objective: &mut impl Objective, x0: Vec<f64>) -> Self {
        let f = objective.value(&x0);
        let g = objective.gradient(&x0);
        Self::with_values(x0, f, g)
    }

    /// Starts from an already evaluated point.
    pub fn with_values(x: Vec<f64>, f: f64, g: Vec<f64>) -> Self {
        assert_eq!(x.len(), g.len());
        let n = x.len();
        Self {
            x,
            f,
            g,
            h: identity(n),
            fresh: true,
            line_search: LineSearchParams::default(),
        }
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn value(&self) -> f64 {
        self.f
    }

    pub fn gradient(&self) -> &[f64] {
        &self.g
    }

    pub fn grad_inf(&self) -> f64 {
        inf_norm(&self.g)
    }

    pub fn reset_hessian(&mut self) {
        self.h = identity(self.x.len());
        self.fresh = true;
    }

    /// Iterates until `‖∇f‖_∞ ≤ grad_tol` or `max_iter` accepted steps.
    pub fn run(&mut self, objective: &mut impl Objective, grad_tol: f64, max_iter: usize) -> BfgsReport {
        let n = self.x.len();
        let mut report = BfgsReport {
            status: BfgsStatus::IterationLimit,
            iterations: 0,
            value_evals: 0,
            gradient_evals: 0,
            value: self.f,
            grad_inf: self.grad_inf(),
        };
        let mut retried = false;
        loop {
            if self.grad_inf() <= grad_tol {
                report.status = BfgsStatus::Converged;
                break;
            }
            if report.iterations >= max_iter {
                break;
            }
            let mut p: Vec<f64> = (0..n)
                .map(|i| -dot(&self.h[i * n..(i + 1) * n], &self.g))
                .collect();
            let mut slope = dot(&p, &self.g);
            if !(slope < 0.0) {
                self.reset_hessian();
                p = self.g.iter().map(|v| -v).collect();
                slope = dot(&p, &self.g);
            }
            let alpha0 = if self.fresh {
                (1.0 / dot(&p, &p).sqrt()).min(1.0)
            } else {
                1.0
            };
            let step = self.line_search(objective, &p, slope, alpha0, &mut report);
            let (alpha, f_new, g_new) = match step {
                Step::Wolfe { alpha, f, g } => (alpha, f, g),
                Step::Armijo { alpha, f } => {
                    let x: Vec<f64> = self.x.iter().zip(&p).map(|(x, d)| x + alpha * d).collect();
                    report.gradient_evals += 1;
                    (alpha, f, objective.gradient(&x))
                }
                Step::Failed => {
                    if retried || self.fresh {
                        report.status = BfgsStatus::LineSearchFailed;
                        break;
                    }
                    retried = true;
                    self.reset_hessian();
                    continue;
                }
            };
            retried = false;
            let s: Vec<f64> = p.iter().map(|d| alpha * d).collect();
            let y: Vec<f64> = g_new.iter().zip(&self.g).map(|(a, b)| a - b).collect();
            for (x, si) in self.x.iter_mut().zip(&s) {
                *x += si;
            }
            self.f = f_new;
            self.g = g_new;
            report.iterations += 1;
            self.update(&s, &y);
        }
        report.value = self.f;
        report.grad_inf = self.grad_inf();
        report
    }

    fn update(&mut self, s: &[f64], y: &[f64]) {
        let n = s.len();
        let sy = dot(s, y);
        if !(sy > 1e-12 * dot(s, s).sqrt() * dot(y, y).sqrt()) {
            return;
        }
        if self.fresh {
            let scale = sy / dot(y, y);
            self.h.iter_mut().for_each(|v| *v *= scale);
            self.fresh = false;
        }
        let rho = 1.0 / sy;
        let hy: Vec<f64> = (0..n).map(|i| dot(&self.h[i * n..(i + 1) * n], y)).collect();
        let yhy = dot(y, &hy);
        // H ← H − ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
        let k = rho * rho * yhy + rho;
        for i in 0..n {
            for j in 0..n {
                self.h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + k * s[i] * s[j];
            }
        }
    }

    fn line_search(
        &self,
        objective: &mut impl Objective,
        p: &[f64],
        slope0: f64,
        alpha0: f64,
        report: &mut BfgsReport,
    ) -> Step {
        let LineSearchParams { c1, c2, max_evals } = self.line_search;
        let f0 = self.f;
        let at = |a: f64| -> Vec<f64> { self.x.iter().zip(p).map(|(x, d)| x + a * d).collect() };
        // values are evaluated first; gradients only once sufficient
        // decrease holds
        let mut best_armijo: Option<(f64, f64)> = None;
        let (mut a_prev, mut f_prev, mut d_prev) = (0.0, f0, slope0);
        let mut a = alpha0;
        let mut evals = 0;
        let mut bracket: Option<((f64, f64, f64), (f64, f64, f64))> = None;
        while evals < max_evals {
            evals += 1;
            report.value_evals += 1;
            let fa = objective.value(&at(a));
            if !fa.is_finite() || fa > f0 + c1 * a * slope0 || (evals > 1 && fa >= f_prev) {
                bracket = Some(((a_prev, f_prev, d_prev), (a, fa, f64::NAN)));
                break;
            }
            best_armijo = Some((a, fa));
            report.gradient_evals += 1;
            let ga = objective.gradient(&at(a));
            let da = dot(&ga, p);
            if da.abs() <= -c2 * slope0 {
                return Step::Wolfe { alpha: a, f: fa, g: ga };
            }
            if da >= 0.0 {
                bracket = Some(((a, fa, da), (a_prev, f_prev, d_prev)));
                break;
            }
            a_prev = a;
            f_prev = fa;
            d_prev = da;
            a *= 2.0;
        }
        let Some((mut lo, mut hi)) = bracket else {
            return best_armijo.map_or(Step::Failed, |(alpha, f)| Step::Armijo { alpha, f });
        };
        // zoom: lo always satisfies sufficient decrease and has the lowest value
        while evals < max_evals {
            evals += 1;
            let a = interpolate(lo, hi);
            if (hi.0 - lo.0).abs() < 1e-16 * lo.0.abs().max(1.0) {
                break;
            }
            report.value_evals += 1;
            let fa = objective.value(&at(a));
            if !fa.is_finite() || fa > f0 + c1 * a * slope0 || fa >= lo.1 {
                hi = (a, fa, f64::NAN);
                continue;
            }
            best_armijo = Some((a, fa));
            report.gradient_evals += 1;
            let ga = objective.gradient(&at(a));
            let da = dot(&ga, p);
            if da.abs() <= -c2 * slope0 {
                return Step::Wolfe { alpha: a, f: fa, g: ga };
            }
            if da * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (a, fa, da);
        }
        match best_armijo {
            Some((alpha, f)) if alpha > 0.0 && f < f0 => Step::Armijo { alpha, f },
            _ => Step::Failed,
        }
    }
}

/// Minimizer of the quadratic through `lo` (value and slope) and `hi`
/// (value), kept inside the central part of the interval.
fn interpolate(lo: (f64, f64, f64), hi: (f64, f64, f64)) -> f64 {
    let (a, fa, da) = lo;
    let (b, fb, _) = hi;
    let w = b - a;
    let denom = 2.0 * (fb - fa - da * w);
    let mut t = if denom > 0.0 && fb.is_finite() { -da * w * w / denom } else { 0.5 * w };
    let (lo_t, hi_t) = (0.1 * w, 0.9 * w);
    if w > 0.0 {
        t = t.clamp(lo_t, hi_t);
    } else {
        t = t.clamp(hi_t, lo_t);
    }
    a + t
}

/// One-shot minimization from `x0`.
pub fn bfgs_minimize<F, G>(value: F, gradient: G, x0: Vec<f64>, grad_tol: f64, max_iter: usize) -> (Vec<f64>, BfgsReport)
where
    F: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64]) -> Vec<f64>,
{
    let mut obj = FnObjective { value, gradient };
    let mut b = Bfgs::new(&mut obj, x0);
    let mut report = b.run(&mut obj, grad_tol, max_iter);
    report.value_evals += 1;
    report.gradient_evals += 1;
    (b.x().to_vec(), report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    fn rosenbrock_grad(x: &[f64]) -> Vec<f64> {
        vec![
            -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
            200.0 * (x[1] - x[0] * x[0]),
        ]
    }

    #[test]
    fn rosenbrock_from_classic_start() {
        let (x, r) = bfgs_minimize(rosenbrock, rosenbrock_grad, vec![-1.2, 1.0], 1e-10, 500);
        assert_eq!(r.status, BfgsStatus::Converged);
        assert!(rosenbrock(&x) < 1e-8, "{x:?} {r:?}");
    }

    #[test]
    fn already_stationary() {
        let (x, r) = bfgs_minimize(rosenbrock, rosenbrock_grad, vec![1.0, 1.0], 1e-8, 100);
        assert_eq!(r.iterations, 0);
        assert_eq!(r.status, BfgsStatus::Converged);
        assert_eq!(x, vec![1.0, 1.0]);
    }

    #[test]
    fn values_never_increase() {
        let mut trace = Vec::new();
        let mut obj = FnObjective {
            value: rosenbrock,
            gradient: rosenbrock_grad,
        };
        let mut b = Bfgs::new(&mut obj, vec![-1.2, 1.0]);
        for _ in 0..60 {
            b.run(&mut obj, 1e-12, 1);
            trace.push(b.value());
        }
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }
}
