//! Bound-constrained limited-memory BFGS.
//!
//! Minimizes a smooth function subject to `x >= lower`. Variables that sit on
//! their bound with the gradient pushing outward are held fixed; the
//! two-loop recursion runs on the remaining free variables and the step is
//! searched along the projected path `P(x + t d)` with an Armijo test.
//! Stopping rules follow the usual `pgtol` / `factr` conventions.

use std::collections::VecDeque;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    /// Stop when the projected gradient's max-norm falls below this.
    pub pgtol: f64,
    /// Stop when the relative objective reduction is below `factr * eps`.
    pub factr: f64,
    pub max_iter: usize,
    /// Number of stored correction pairs.
    pub memory: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            pgtol: 1e-5,
            factr: 1e7,
            max_iter: 15_000,
            memory: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimStatus {
    /// Projected gradient below `pgtol`.
    GradientTolerance,
    /// Relative reduction below `factr * eps`.
    ObjectiveTolerance,
    MaxIterations,
    /// No step along the search path decreased the objective.
    LineSearchFailed,
    /// The objective returned a non-finite value at the start point.
    BadStart,
}

impl OptimStatus {
    pub fn converged(self) -> bool {
        matches!(
            self,
            OptimStatus::GradientTolerance | OptimStatus::ObjectiveTolerance
        )
    }
}

#[derive(Clone, Debug)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub projected_gradient: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub status: OptimStatus,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project(x: &mut [f64], lower: &[f64]) {
    x.iter_mut().zip(lower).for_each(|(v, l)| *v = v.max(*l));
}

fn projected_gradient_norm(x: &[f64], g: &[f64], lower: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lower)
        .map(|((&x, &g), &l)| (x - (x - g).max(l)).abs())
        .fold(0.0, f64::max)
}

/// Minimizes `f` from `x0`; `f` writes the gradient into its second argument
/// and returns the value (`+inf` or NaN marks an infeasible point).
pub fn minimize(
    mut f: impl FnMut(&[f64], &mut [f64]) -> f64,
    x0: &[f64],
    lower: &[f64],
    cfg: &OptimConfig,
) -> OptimResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower);
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut evaluations = 1;
    if !fx.is_finite() {
        return OptimResult {
            projected_gradient: f64::NAN,
            x,
            f: fx,
            iterations: 0,
            evaluations,
            status: OptimStatus::BadStart,
        };
    }
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut status = OptimStatus::MaxIterations;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        let pg = projected_gradient_norm(&x, &g, lower);
        if pg <= cfg.pgtol {
            status = OptimStatus::GradientTolerance;
            break;
        }
        iterations += 1;

        // Variables pinned at their bound by an outward gradient.
        let free: Vec<bool> = (0..n).map(|i| !(x[i] <= lower[i] && g[i] > 0.0)).collect();
        let mut d: Vec<f64> = g
            .iter()
            .zip(&free)
            .map(|(&gi, &fr)| if fr { -gi } else { 0.0 })
            .collect();

        // Two-loop recursion restricted to the free variables.
        if !hist.is_empty() {
            let masked = |v: &[f64]| -> Vec<f64> {
                v.iter()
                    .zip(&free)
                    .map(|(&a, &fr)| if fr { a } else { 0.0 })
                    .collect()
            };
            let pairs: Vec<(Vec<f64>, Vec<f64>)> = hist
                .iter()
                .map(|(s, y, _)| (masked(s), masked(y)))
                .collect();
            let mut alphas = Vec::with_capacity(pairs.len());
            for (s, y) in pairs.iter().rev() {
                let sy = dot(s, y);
                if sy <= 1e-300 {
                    alphas.push(0.0);
                    continue;
                }
                let a = dot(s, &d) / sy;
                d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
                alphas.push(a);
            }
            let (s_last, y_last) = pairs.last().unwrap();
            let yy = dot(y_last, y_last);
            let sy = dot(s_last, y_last);
            if yy > 0.0 && sy > 0.0 {
                let gamma = sy / yy;
                d.iter_mut().for_each(|di| *di *= gamma);
            }
            for ((s, y), a) in pairs.iter().zip(alphas.iter().rev()) {
                let sy = dot(s, y);
                if sy <= 1e-300 {
                    continue;
                }
                let b = dot(y, &d) / sy;
                d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - b) * si);
            }
            if dot(&d, &g) >= 0.0 {
                // Not a descent direction: reset to steepest descent.
                hist.clear();
                d = g
                    .iter()
                    .zip(&free)
                    .map(|(&gi, &fr)| if fr { -gi } else { 0.0 })
                    .collect();
            }
        }
        let mut step = 1.0;
        if hist.is_empty() {
            // First step (or after a reset): move at most ~10% of the scale.
            let dmax = d.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-3);
            if dmax > 0.0 {
                step = (0.1 * scale / dmax).min(1.0);
            }
        }

        // Backtracking along the projection arc.
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = (x[i] + step * d[i]).max(lower[i]);
            }
            let f_try = f(&x_new, &mut g_new);
            evaluations += 1;
            let decrease: f64 = g
                .iter()
                .zip(x_new.iter().zip(&x))
                .map(|(gi, (a, b))| gi * (a - b))
                .sum();
            if f_try.is_finite() && f_try <= fx + 1e-4 * decrease && f_try <= fx {
                accepted = true;
                let reduction = fx - f_try;
                let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
                    if hist.len() == cfg.memory {
                        hist.pop_front();
                    }
                    hist.push_back((s, y, sy));
                }
                let scale_f = fx.abs().max(f_try.abs()).max(1.0);
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut g, &mut g_new);
                let f_old = fx;
                fx = f_try;
                if reduction <= cfg.factr * f64::EPSILON * scale_f && f_old.is_finite() {
                    status = OptimStatus::ObjectiveTolerance;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            if !hist.is_empty() {
                // Retry once from steepest descent before giving up.
                hist.clear();
                continue;
            }
            status = OptimStatus::LineSearchFailed;
            break;
        }
        if status == OptimStatus::ObjectiveTolerance {
            break;
        }
    }
    let projected_gradient = projected_gradient_norm(&x, &g, lower);
    if (status == OptimStatus::MaxIterations || status == OptimStatus::LineSearchFailed)
        && projected_gradient <= cfg.pgtol
    {
        status = OptimStatus::GradientTolerance;
    }
    OptimResult {
        x,
        f: fx,
        projected_gradient,
        iterations,
        evaluations,
        status,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_unconstrained_region() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let cfg = OptimConfig {
            pgtol: 1e-8,
            factr: 10.0,
            ..Default::default()
        };
        let r = minimize(f, &[0.5, 0.8], &[0.0, 0.0], &cfg);
        assert!(r.status.converged(), "{:?}", r.status);
        assert!(
            (r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5,
            "{:?}",
            r.x
        );
    }

    #[test]
    fn active_bound_is_respected() {
        // minimum of (x-(-1))^2 + (y-2)^2 subject to x, y >= 0.5 is (0.5, 2)
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] + 1.0);
            g[1] = 2.0 * (x[1] - 2.0);
            (x[0] + 1.0).powi(2) + (x[1] - 2.0).powi(2)
        };
        let r = minimize(f, &[3.0, 3.0], &[0.5, 0.5], &OptimConfig::default());
        assert!(r.status.converged());
        assert_eq!(r.x[0], 0.5);
        assert!((r.x[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn never_worse_than_start() {
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 4.0 * x[0].powi(3);
            x[0].powi(4)
        };
        let r = minimize(f, &[2.0], &[-10.0], &OptimConfig::default());
        assert!(r.f <= 16.0);
        assert!(r.x[0].abs() < 0.1);
    }
}
