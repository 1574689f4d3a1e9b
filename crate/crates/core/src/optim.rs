//! Quasi-Newton minimisation with a backtracking line search.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BfgsOptions {
    pub grad_tol: f64,
    /// Stop when a step moves the parameters by less than this (max-norm). Zero disables.
    pub step_tol: f64,
    pub max_iter: usize,
    pub initial_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-8, step_tol: 0.0, max_iter: 2000, initial_step: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimises `f` where `f(x)` returns `(value, gradient)`.
pub fn bfgs<F>(f: F, x0: &[f64], opts: &BfgsOptions) -> BfgsResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    bfgs_observed(f, x0, opts, |_, _, _| {})
}

/// [`bfgs`] calling `observe(iteration, x, value)` after every accepted step.
pub fn bfgs_observed<F, O>(mut f: F, x0: &[f64], opts: &BfgsOptions, mut observe: O) -> BfgsResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
    O: FnMut(usize, &[f64], f64),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x);
    let mut evaluations = 1;
    let mut hinv = identity(n);
    let mut iterations = 0;
    let mut first = true;
    while iterations < opts.max_iter {
        let gnorm = norm_inf(&g);
        if gnorm < opts.grad_tol || n == 0 {
            return BfgsResult { x, value: fx, grad_norm: gnorm, iterations, evaluations, converged: true };
        }
        let mut dir: Vec<f64> = (0..n).map(|i| -dot(&hinv[i], &g)).collect();
        let mut slope = dot(&dir, &g);
        if slope >= 0.0 {
            hinv = identity(n);
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = if first { (opts.initial_step / norm_inf(&dir)).min(1.0) } else { 1.0 };
        first = false;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let (ft, gt) = f(&trial);
            evaluations += 1;
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gn)) = accepted else {
            let gnorm = norm_inf(&g);
            return BfgsResult { x, value: fx, grad_norm: gnorm, iterations, evaluations, converged: gnorm < opts.grad_tol };
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if iterations == 0 {
                let scale = sy / dot(&y, &y);
                hinv = identity(n).into_iter().map(|r| r.into_iter().map(|v| v * scale).collect()).collect();
            }
            let hy: Vec<f64> = (0..n).map(|i| dot(&hinv[i], &y)).collect();
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    hinv[i][j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }
        let moved = norm_inf(&s);
        let df = fx - fnew;
        x = xn;
        fx = fnew;
        g = gn;
        iterations += 1;
        observe(iterations, &x, fx);
        if opts.step_tol > 0.0 && moved < opts.step_tol {
            let gnorm = norm_inf(&g);
            return BfgsResult { x, value: fx, grad_norm: gnorm, iterations, evaluations, converged: true };
        }
        if df.abs() <= f64::EPSILON * fx.abs().max(1e-300) && moved < 1e-14 {
            break;
        }
    }
    let gnorm = norm_inf(&g);
    BfgsResult { x, value: fx, grad_norm: gnorm, iterations, evaluations, converged: gnorm < opts.grad_tol }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// Central finite-difference gradient.
pub fn fd_gradient<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut work = x.to_vec();
    for i in 0..x.len() {
        work[i] = x[i] + h;
        let fp = f(&work);
        work[i] = x[i] - h;
        let fm = f(&work);
        work[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// BFGS driven by finite-difference gradients.
pub fn bfgs_fd<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], h: f64, opts: &BfgsOptions) -> BfgsResult {
    bfgs_fd_observed(f, x0, h, opts, |_, _, _| {})
}

pub fn bfgs_fd_observed<F, O>(mut f: F, x0: &[f64], h: f64, opts: &BfgsOptions, observe: O) -> BfgsResult
where
    F: FnMut(&[f64]) -> f64,
    O: FnMut(usize, &[f64], f64),
{
    bfgs_observed(
        |x| {
            let v = f(x);
            let g = fd_gradient(&mut f, x, h);
            (v, g)
        },
        x0,
        opts,
        observe,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            (v, g)
        };
        let r = bfgs(f, &[-1.2, 1.0], &BfgsOptions::default());
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn test_fd_quadratic() {
        let r = bfgs_fd(|x| (x[0] - 0.3).powi(2) + 2.0 * (x[1] + 1.0).powi(2), &[0.0, 0.0], 1e-5, &BfgsOptions { grad_tol: 1e-9, ..Default::default() });
        assert!((r.x[0] - 0.3).abs() < 1e-6 && (r.x[1] + 1.0).abs() < 1e-6);
    }
}
