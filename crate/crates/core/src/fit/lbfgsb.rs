//! Projected limited-memory BFGS with box constraints.
//!
//! Search directions come from the two-loop recursion restricted to the free
//! variables (those not held at a bound by their gradient). Steps are
//! projected onto the box and accepted with an Armijo backtracking test on
//! the projected path, so the objective never increases.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Stop when the projected gradient infinity norm falls below this.
    pub grad_tol: f64,
    /// Stop when the relative decrease of one iteration falls below this.
    pub ftol: f64,
    pub memory: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            grad_tol: 1e-6,
            ftol: 2.2e-9,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    /// Stopped on a stationarity test rather than the iteration cap.
    pub converged: bool,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverError {
    NonFinite,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

fn project(x: &mut [f64], lower: f64, upper: f64) {
    x.iter_mut().for_each(|v| *v = v.clamp(lower, upper));
}

/// Gradient with components zeroed where a bound blocks descent.
fn projected_gradient(x: &[f64], g: &[f64], lower: f64, upper: f64, out: &mut [f64]) {
    for ((o, &xi), &gi) in out.iter_mut().zip(x).zip(g) {
        let blocked = (xi <= lower && gi > 0.0) || (xi >= upper && gi < 0.0);
        *o = if blocked { 0.0 } else { gi };
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Memory {
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    capacity: usize,
}

impl Memory {
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        let scale = dot(&s, &s).sqrt() * dot(&y, &y).sqrt();
        if sy <= 1e-10 * scale || sy <= 0.0 {
            return;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    /// `-H g` on the free variables (`pg` is already zero on blocked ones).
    fn direction(&self, pg: &[f64], free: &[bool]) -> Vec<f64> {
        let mut q = pg.to_vec();
        let mut alpha = vec![0.0; self.pairs.len()];
        let masked = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .zip(free)
                .map(|(&x, &f)| if f { x } else { 0.0 })
                .collect()
        };
        for (i, (s, y, rho)) in self.pairs.iter().enumerate().rev() {
            let s = masked(s);
            let a = rho * dot(&s, &q);
            alpha[i] = a;
            for (qi, yi) in q.iter_mut().zip(y.iter().zip(free)) {
                if *yi.1 {
                    *qi -= a * yi.0;
                }
            }
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let (s, y) = (masked(s), masked(y));
            let yy = dot(&y, &y);
            if yy > 0.0 {
                let gamma = dot(&s, &y) / yy;
                if gamma > 0.0 {
                    q.iter_mut().for_each(|v| *v *= gamma);
                }
            }
        }
        for (i, (s, y, rho)) in self.pairs.iter().enumerate() {
            let y = masked(y);
            let beta = rho * dot(&y, &q);
            for (qi, (si, &f)) in q.iter_mut().zip(s.iter().zip(free)) {
                if f {
                    *qi += (alpha[i] - beta) * si;
                }
            }
        }
        q.iter_mut()
            .zip(free)
            .for_each(|(v, &f)| *v = if f { -*v } else { 0.0 });
        q
    }
}

/// Minimizes `f` over the box `[lower, upper]^n` starting from `x0`.
///
/// `f(x, grad)` returns the value and writes the gradient.
pub fn minimize<F>(
    mut f: F,
    x0: &[f64],
    lower: f64,
    upper: f64,
    opts: &SolverOptions,
) -> Result<SolverResult, SolverError>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut evaluations = 1;
    if !fx.is_finite() {
        return Err(SolverError::NonFinite);
    }

    let mut memory = Memory {
        pairs: VecDeque::with_capacity(opts.memory),
        capacity: opts.memory.max(1),
    };
    let mut pg = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iters {
        projected_gradient(&x, &g, lower, upper, &mut pg);
        if inf_norm(&pg) <= opts.grad_tol {
            converged = true;
            break;
        }
        let free: Vec<bool> = pg
            .iter()
            .zip(&x)
            .map(|(&p, &xi)| p != 0.0 || (xi > lower && xi < upper))
            .collect();

        let mut steepest = memory.pairs.is_empty();
        let mut d = if steepest {
            pg.iter().map(|v| -v).collect()
        } else {
            memory.direction(&pg, &free)
        };
        if dot(&d, &pg) >= 0.0 {
            memory.pairs.clear();
            steepest = true;
            d = pg.iter().map(|v| -v).collect();
        }

        let mut accepted = None;
        loop {
            let mut step = if steepest {
                (1.0 / inf_norm(&d)).min(1.0)
            } else {
                1.0
            };
            for _ in 0..MAX_BACKTRACKS {
                for ((xn, &xi), &di) in x_new.iter_mut().zip(&x).zip(&d) {
                    *xn = (xi + step * di).clamp(lower, upper);
                }
                let decrease: f64 = x_new
                    .iter()
                    .zip(&x)
                    .zip(&g)
                    .map(|((xn, xi), gi)| gi * (xn - xi))
                    .sum();
                if decrease >= 0.0 {
                    break;
                }
                let f_new = f(&x_new, &mut g_new);
                evaluations += 1;
                if !f_new.is_finite() {
                    return Err(SolverError::NonFinite);
                }
                if f_new <= fx + ARMIJO_C1 * decrease {
                    accepted = Some(f_new);
                    break;
                }
                step *= 0.5;
            }
            if accepted.is_some() || steepest {
                break;
            }
            // The quasi-Newton direction failed; retry along the gradient.
            memory.pairs.clear();
            steepest = true;
            d = pg.iter().map(|v| -v).collect();
        }

        iterations += 1;
        let Some(f_new) = accepted else {
            // No decrease even along the projected gradient: a minimum at
            // the resolution of the objective.
            converged = true;
            break;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        memory.push(s, y);
        let rel = (fx - f_new) / fx.abs().max(f_new.abs()).max(1.0);
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        fx = f_new;
        if rel <= opts.ftol {
            converged = true;
            break;
        }
    }

    Ok(SolverResult {
        x,
        f: fx,
        iterations,
        converged,
        evaluations,
    })
}
