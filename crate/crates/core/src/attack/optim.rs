use std::collections::VecDeque;

use super::AttackConfig;
use crate::error::Result;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 50;
/// Projected-gradient size at which L-BFGS stops.
const PG_TOL: f64 = 1e-12;

/// A scalar function of a flat vector. `eval(x, false)` may return an empty
/// gradient.
pub trait Problem {
    fn eval(&self, x: &[f64], grad: bool) -> Result<(f64, Vec<f64>)>;
}

impl<F> Problem for F
where
    F: Fn(&[f64], bool) -> Result<(f64, Vec<f64>)>,
{
    fn eval(&self, x: &[f64], grad: bool) -> Result<(f64, Vec<f64>)> {
        self(x, grad)
    }
}

/// Result of one minimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimized {
    pub x: Vec<f64>,
    /// Objective at `x`.
    pub value: f64,
    /// Objective at every iterate, starting with the initial point.
    pub trace: Vec<f64>,
    pub evaluations: usize,
    /// Set when the run ended early for a reason worth reporting.
    pub note: Option<String>,
}

fn clamp_into(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adam driven by the elementwise sign of the gradient, with the step-size
/// schedule of `cfg` and projection onto `[lo, hi]` after every step.
pub fn signed_adam(problem: &impl Problem, x0: &[f64], lo: &[f64], hi: &[f64], cfg: &AttackConfig) -> Result<Minimized> {
    let mut x = x0.to_vec();
    clamp_into(&mut x, lo, hi);
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    let mut trace = Vec::with_capacity(cfg.max_iter + 1);
    for t in 0..cfg.max_iter {
        let (value, grad) = problem.eval(&x, true)?;
        trace.push(value);
        let lr = cfg.step_size_at(t);
        let c1 = 1.0 - BETA1.powi(t as i32 + 1);
        let c2 = 1.0 - BETA2.powi(t as i32 + 1);
        for k in 0..x.len() {
            let s = sign(grad[k]);
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * s;
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * s * s;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            x[k] = (x[k] - lr * m_hat / (v_hat.sqrt() + ADAM_EPS)).clamp(lo[k], hi[k]);
        }
    }
    let (value, _) = problem.eval(&x, false)?;
    trace.push(value);
    Ok(Minimized { x, value, trace, evaluations: cfg.max_iter + 1, note: None })
}

/// Projected L-BFGS (two-loop recursion) with backtracking Armijo line
/// search. `max_evals` bounds objective evaluations; a failed line search
/// ends the run at the current iterate and is recorded in `note`.
pub fn lbfgs(
    problem: &impl Problem,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    memory: usize,
    max_evals: usize,
    step_size: f64,
) -> Result<Minimized> {
    let mut x = x0.to_vec();
    clamp_into(&mut x, lo, hi);
    let (mut f, mut g) = problem.eval(&x, true)?;
    let mut evaluations = 1;
    let mut trace = vec![f];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(memory);
    let mut note = None;
    while evaluations < max_evals {
        let mut projected: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - b).collect();
        clamp_into(&mut projected, lo, hi);
        let pg = projected.iter().zip(&x).map(|(p, a)| (p - a).abs()).fold(0.0, f64::max);
        if pg < PG_TOL {
            break;
        }
        let mut d = two_loop(&g, &history);
        if dot(&d, &g) >= 0.0 {
            history.clear();
            d = g.iter().map(|v| -v).collect();
        }
        let mut alpha = if history.is_empty() {
            let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            step_size * (1.0 / gmax).min(1.0)
        } else {
            step_size
        };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            if evaluations >= max_evals {
                break;
            }
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            clamp_into(&mut trial, lo, hi);
            let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            if s.iter().all(|v| *v == 0.0) {
                break;
            }
            evaluations += 1;
            if let Ok((ft, gt)) = problem.eval(&trial, true) {
                if ft <= f + ARMIJO_C * dot(&g, &s) {
                    accepted = Some((trial, s, ft, gt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((trial, s, ft, gt)) = accepted else {
            if evaluations < max_evals {
                note = Some(format!("line search failed after {evaluations} evaluations"));
            }
            break;
        };
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if history.len() == memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = trial;
        f = ft;
        g = gt;
        trace.push(f);
    }
    Ok(Minimized { x, value: f, trace, evaluations, note })
}

/// `-H g` for the inverse-Hessian estimate held in `history`.
fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    const INF: f64 = f64::INFINITY;

    fn quad(x: &[f64], _: bool) -> Result<(f64, Vec<f64>)> {
        Ok(((x[0] - 3.0).powi(2), vec![2.0 * (x[0] - 3.0)]))
    }

    fn rosenbrock(x: &[f64], _: bool) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    #[test]
    fn lbfgs_quadratic() {
        let out = lbfgs(&quad, &[0.0], &[-INF], &[INF], 10, 100, 1.0).unwrap();
        assert!((out.x[0] - 3.0).abs() < 1e-8, "{out:?}");
    }

    #[test]
    fn lbfgs_active_bound() {
        let sq = |x: &[f64], _: bool| Ok((x[0] * x[0], vec![2.0 * x[0]]));
        let out = lbfgs(&sq, &[2.0], &[1.0], &[2.0], 10, 100, 1.0).unwrap();
        assert_eq!(out.x, vec![1.0]);
    }

    #[test]
    fn lbfgs_rosenbrock() {
        let out = lbfgs(&rosenbrock, &[-1.2, 1.0], &[-INF; 2], &[INF; 2], 10, 5000, 1.0).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-5 && (out.x[1] - 1.0).abs() < 1e-5, "{out:?}");
    }

    #[test]
    fn signed_adam_zero_budget_returns_clamped_start() {
        let cfg = AttackConfig { max_iter: 0, ..AttackConfig::default() };
        let out = signed_adam(&quad, &[-0.5], &[0.0], &[1.0], &cfg).unwrap();
        assert_eq!(out.x, vec![0.0]);
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn signed_adam_ignores_positive_scale() {
        let cfg = AttackConfig { max_iter: 50, step_size: 0.3, ..AttackConfig::default() };
        let scaled = |x: &[f64], g: bool| quad(x, g).map(|(f, g)| (0.37 * f, g.iter().map(|v| 0.37 * v).collect()));
        let a = signed_adam(&quad, &[0.0], &[-INF], &[INF], &cfg).unwrap();
        let b = signed_adam(&scaled, &[0.0], &[-INF], &[INF], &cfg).unwrap();
        assert_eq!(a.x, b.x);
        assert!((a.x[0] - 3.0).abs() < 0.5);
    }
}
