//! Shared helpers for integration tests: random inputs and a numeric
//! minimizer that knows nothing about the Gibbs closed form.

#![allow(dead_code)]

use gossiplearn::simplex::{Belief, LogWeights};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn random_belief<R: Rng + ?Sized>(rng: &mut R, m: usize, floor: f64) -> Belief {
    let raw: Vec<f64> = (0..m).map(|_| floor + rng.random::<f64>()).collect();
    let sum: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|x| x / sum).collect();
    let head: f64 = w[..m - 1].iter().sum();
    w[m - 1] = 1.0 - head;
    Belief::new(w).unwrap()
}

pub fn random_log_weights<R: Rng + ?Sized>(rng: &mut R, m: usize, scale: f64) -> LogWeights {
    LogWeights::new((0..m).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn objective(x: &[f64], z: &[f64], alpha: f64, prior: &[f64]) -> f64 {
    x.iter()
        .zip(z)
        .zip(prior)
        .map(|((&xi, &zi), &pi)| -zi * xi + xi * (xi / pi).ln() / alpha)
        .sum()
}

/// Minimizes `-<z, x> + (1/alpha) KL(x || prior)` over the open simplex by
/// damped Newton steps in the first `m - 1` coordinates (the last one is
/// `1 - sum`), starting from the prior.
pub fn newton_prox_minimizer(z: &[f64], alpha: f64, prior: &[f64]) -> Vec<f64> {
    let m = z.len();
    let k = m - 1;
    let mut x = prior.to_vec();
    for _ in 0..500 {
        let g: Vec<f64> = (0..m)
            .map(|j| -z[j] + ((x[j] / prior[j]).ln() + 1.0) / alpha)
            .collect();
        let grad = DVector::from_iterator(k, (0..k).map(|j| g[j] - g[k]));
        if grad.amax() < 1e-15 {
            break;
        }
        let mut hess = DMatrix::from_element(k, k, 1.0 / (alpha * x[k]));
        for j in 0..k {
            hess[(j, j)] += 1.0 / (alpha * x[j]);
        }
        let dir = -hess
            .cholesky()
            .expect("Hessian is positive definite")
            .solve(&grad);
        let dlast = -dir.sum();
        // Largest step keeping every coordinate positive, then backtrack.
        let mut step: f64 = 1.0;
        for j in 0..m {
            let d = if j < k { dir[j] } else { dlast };
            if d < 0.0 {
                step = step.min(0.99 * x[j] / -d);
            }
        }
        let f0 = objective(&x, z, alpha, prior);
        let slope: f64 = grad.dot(&dir);
        let mut next;
        loop {
            next = (0..m)
                .map(|j| x[j] + step * if j < k { dir[j] } else { dlast })
                .collect::<Vec<f64>>();
            if objective(&next, z, alpha, prior) <= f0 + 1e-4 * step * slope || step < 1e-12 {
                break;
            }
            step *= 0.5;
        }
        let moved = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = next;
        if moved < 1e-17 {
            break;
        }
    }
    x
}
