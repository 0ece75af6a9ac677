//! Deterministic L-BFGS ascent with backtracking line search.
//!
//! Used by both CRF objectives and the binary logistic models. The caller
//! supplies value and gradient of a function to maximize.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsConfig {
    pub max_iters: usize,
    /// Stop when the relative objective change of an accepted step is below this.
    pub tol: f64,
    /// Stop when the max-norm of the gradient is below this.
    pub gtol: f64,
    /// Number of correction pairs kept.
    pub memory: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            max_iters: 200,
            tol: 1e-9,
            gtol: 1e-8,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimReport {
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the start point and after every accepted step.
    pub history: Vec<f64>,
}

impl OptimReport {
    pub fn final_value(&self) -> f64 {
        *self.history.last().expect("history holds the start point")
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Maximizes `f` from `x0`. `f` returns `(value, gradient)`.
pub fn maximize<F>(x0: Vec<f64>, config: &LbfgsConfig, mut f: F) -> Result<(Vec<f64>, OptimReport)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    // Internally minimizes -f.
    let mut eval = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (v, mut g) = f(x)?;
        g.iter_mut().for_each(|gi| *gi = -*gi);
        Ok((-v, g))
    };

    let mut x = x0;
    let (mut fx, mut gx) = eval(&x)?;
    if !fx.is_finite() || gx.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("objective is not finite at the start point".into()));
    }
    let mut report = OptimReport {
        iterations: 0,
        converged: false,
        history: vec![-fx],
    };
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();

    while report.iterations < config.max_iters {
        if max_abs(&gx) < config.gtol {
            report.converged = true;
            break;
        }

        let mut attempt = 0;
        let (x_new, f_new, g_new) = loop {
            let d = if mem.is_empty() {
                let scale = 1.0 / dot(&gx, &gx).sqrt().max(1.0);
                gx.iter().map(|g| -g * scale).collect::<Vec<_>>()
            } else {
                direction(&gx, &mem)
            };
            let slope = dot(&gx, &d);
            if let Some(found) = line_search(&x, fx, slope, &d, &mut eval)? {
                break found;
            }
            if !mem.is_empty() && attempt == 0 {
                mem.clear();
                attempt += 1;
                continue;
            }
            if max_abs(&gx) < config.gtol.max(1e-6) {
                report.converged = true;
                return Ok((x, report));
            }
            return Err(Error::Numeric(format!(
                "line search failed at iteration {} (objective {}, |grad| {:e})",
                report.iterations,
                -fx,
                max_abs(&gx)
            )));
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if mem.len() == config.memory.max(1) {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }

        let rel = (fx - f_new).abs() / fx.abs().max(f_new.abs()).max(1.0);
        x = x_new;
        fx = f_new;
        gx = g_new;
        report.iterations += 1;
        report.history.push(-fx);
        if rel < config.tol {
            report.converged = true;
            break;
        }
    }
    Ok((x, report))
}

/// Two-loop recursion: returns `-H g`.
fn direction(g: &[f64], mem: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    let (s, y, _) = mem.back().expect("non-empty memory");
    let gamma = dot(s, y) / dot(y, y);
    q.iter_mut().for_each(|qi| *qi *= gamma);
    for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}

type Step = (Vec<f64>, f64, Vec<f64>);

/// Backtracking with the Armijo condition. Near the optimum, where the
/// required decrease is below the objective's rounding error, a step is also
/// accepted under the approximate Wolfe conditions of Hager and Zhang.
/// `None` when no acceptable step.
fn line_search<E>(x: &[f64], fx: f64, slope: f64, d: &[f64], eval: &mut E) -> Result<Option<Step>>
where
    E: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(slope < 0.0) {
        return Ok(None);
    }
    let mut step = 1.0;
    for _ in 0..60 {
        let x_new: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + step * di).collect();
        match eval(&x_new) {
            Ok((f_new, g_new)) if f_new.is_finite() && g_new.iter().all(|g| g.is_finite()) => {
                if f_new <= fx + 1e-4 * step * slope {
                    return Ok(Some((x_new, f_new, g_new)));
                }
                let slope_new = dot(&g_new, d);
                if f_new <= fx + 1e-12 * fx.abs().max(1.0) && slope_new >= 0.9 * slope && slope_new <= -0.8 * slope {
                    return Ok(Some((x_new, f_new, g_new)));
                }
            }
            Ok(_) | Err(Error::NonFinite(_)) => {}
            Err(e) => return Err(e),
        }
        step *= 0.5;
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concave_quadratic() {
        // maximize -(x-3)^2 - 2(y+1)^2
        let (x, rep) = maximize(vec![0.0, 0.0], &LbfgsConfig::default(), |x| {
            let v = -(x[0] - 3.0).powi(2) - 2.0 * (x[1] + 1.0).powi(2);
            Ok((v, vec![-2.0 * (x[0] - 3.0), -4.0 * (x[1] + 1.0)]))
        })
        .unwrap();
        assert!((x[0] - 3.0).abs() < 1e-6 && (x[1] + 1.0).abs() < 1e-6);
        assert!(rep.converged);
        assert!(rep.history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn rosenbrock() {
        let (x, _) = maximize(
            vec![-1.2, 1.0],
            &LbfgsConfig {
                max_iters: 500,
                tol: 1e-14,
                gtol: 1e-10,
                memory: 5,
            },
            |x| {
                let (a, b) = (x[0], x[1]);
                let v = -((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2));
                let ga = -(-2.0 * (1.0 - a) - 400.0 * a * (b - a * a));
                let gb = -(200.0 * (b - a * a));
                Ok((v, vec![ga, gb]))
            },
        )
        .unwrap();
        assert!((x[0] - 1.0).abs() < 1e-5 && (x[1] - 1.0).abs() < 1e-5, "{x:?}");
    }

    #[test]
    fn accepts_steps_lost_in_objective_rounding() {
        // every move away from 0 costs 1e-9 of pure noise the gradient cannot see
        let mut eval = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let noise = if x[0] == 0.0 { 0.0 } else { 1e-9 };
            Ok((1e6 + 0.5e-12 * (x[0] - 1.0).powi(2) + noise, vec![1e-12 * (x[0] - 1.0)]))
        };
        let (f0, g0) = eval(&[0.0]).unwrap();
        let d = vec![-g0[0] * 1e12];
        let (x, _, g) = line_search(&[0.0], f0, g0[0] * d[0], &d, &mut eval).unwrap().unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && g[0].abs() < 1e-20);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let r = maximize(vec![0.0], &LbfgsConfig::default(), |_| Ok((f64::NAN, vec![0.0])));
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
