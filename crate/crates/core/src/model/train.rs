//! L2-regularised logistic loss and a limited-memory BFGS minimiser.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Coefficient of `0.5 * ||w||^2` (the intercept is not penalised).
    pub l2_strength: f64,
    /// Number of correction pairs kept by L-BFGS.
    pub history: usize,
    pub max_iterations: usize,
    /// Stop once the Euclidean norm of the gradient falls to this value.
    pub gradient_tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            l2_strength: 1.0,
            history: 10,
            max_iterations: 500,
            gradient_tolerance: 1e-6,
        }
    }
}

/// `sum_i [softplus(u_i) - y_i u_i] + (l2 / 2) ||w||^2` with
/// `u_i = b + w . x_i`. Parameters are laid out as `[w_1 .. w_d, b]`.
pub struct LogisticObjective<'a> {
    rows: &'a [Vec<f64>],
    targets: &'a [f64],
    l2: f64,
}

impl<'a> LogisticObjective<'a> {
    pub fn new(rows: &'a [Vec<f64>], targets: &'a [f64], l2: f64) -> Self {
        assert_eq!(rows.len(), targets.len());
        Self { rows, targets, l2 }
    }

    pub fn dimension(&self) -> usize {
        self.rows.first().map_or(0, Vec::len) + 1
    }

    pub fn value(&self, params: &[f64]) -> f64 {
        self.value_and_gradient(params).0
    }

    pub fn value_and_gradient(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let d = params.len() - 1;
        let (w, b) = (&params[..d], params[d]);
        let mut loss = 0.0;
        let mut grad = vec![0.0; d + 1];
        for (x, &y) in self.rows.iter().zip(self.targets) {
            let u = b + x.iter().zip(w).map(|(xi, wi)| xi * wi).sum::<f64>();
            loss += softplus(u) - y * u;
            let r = sigmoid(u) - y;
            for (g, xi) in grad[..d].iter_mut().zip(x) {
                *g += r * xi;
            }
            grad[d] += r;
        }
        for (g, wi) in grad[..d].iter_mut().zip(w) {
            *g += self.l2 * wi;
        }
        loss += 0.5 * self.l2 * w.iter().map(|wi| wi * wi).sum::<f64>();
        (loss, grad)
    }
}

/// `ln(1 + e^u)` without overflow.
pub fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    /// Objective value at the start and after every accepted step.
    pub values: Vec<f64>,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub struct LbfgsOutcome {
    pub params: Vec<f64>,
    pub trace: OptimizationTrace,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

const ARMIJO: f64 = 1e-4;
const APPROX_ARMIJO: f64 = 0.1;
const WOLFE: f64 = 0.9;
/// Relative slack on f allowed by the approximate Wolfe test.
pub const F_FUZZ: f64 = 1e-12;
const MAX_BACKTRACKS: usize = 60;

/// Minimises a smooth function from `start`. `eval` returns the value and
/// gradient. Accepted steps satisfy the Armijo condition, or, once f is
/// flat to rounding, the approximate Wolfe conditions; recorded values
/// never increase by more than `F_FUZZ * max(|f|, 1)`.
pub fn lbfgs<F>(mut eval: F, start: Vec<f64>, config: &TrainConfig) -> LbfgsOutcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = start;
    let (mut f, mut g) = eval(&x);
    let mut values = vec![f];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.history);
    let mut iterations = 0;

    while iterations < config.max_iterations {
        if norm(&g) <= config.gradient_tolerance {
            break;
        }
        let mut direction = two_loop(&g, &memory);
        let mut slope = dot(&g, &direction);
        if slope >= 0.0 {
            memory.clear();
            direction = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = if memory.is_empty() {
            (1.0 / norm(&g)).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let candidate: Vec<f64> = x.iter().zip(&direction).map(|(xi, di)| xi + step * di).collect();
            let (fc, gc) = eval(&candidate);
            if fc <= f + ARMIJO * step * slope {
                accepted = Some((candidate, fc, gc));
                break;
            }
            // Near the optimum the predicted decrease falls below rounding
            // error in f. Fall back to the approximate Wolfe test, which
            // judges the step by the directional derivative instead.
            let slope_c = dot(&gc, &direction);
            if fc <= f + F_FUZZ * f.abs().max(1.0)
                && slope_c >= WOLFE * slope
                && slope_c <= (2.0 * APPROX_ARMIJO - 1.0) * slope
            {
                accepted = Some((candidate, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            break;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if memory.len() == config.history {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        f = f_new;
        g = g_new;
        values.push(f);
        iterations += 1;
    }

    let gradient_norm = norm(&g);
    LbfgsOutcome {
        params: x,
        trace: OptimizationTrace {
            values,
            gradient_norm,
            iterations,
            converged: gradient_norm <= config.gradient_tolerance,
        },
    }
}

fn two_loop(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let alpha = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= alpha * yi;
        }
        alphas.push(alpha);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|qi| *qi *= gamma);
    }
    for ((s, y, rho), alpha) in memory.iter().zip(alphas.into_iter().rev()) {
        let beta = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (alpha - beta) * si;
        }
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}
