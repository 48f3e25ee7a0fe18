//! Elastic-net logistic regression fitted by proximal Newton steps with
//! cyclic coordinate descent.

use serde::{Deserialize, Serialize};

use super::{sigmoid, Matrix};

/// Overall penalty strength.
pub const LAMBDA: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-8;
pub const MAX_OUTER: usize = 100;
pub const MAX_INNER: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlmParams {
    /// Share of the penalty on the L1 term.
    pub alpha: f64,
    pub standardize_numericals: bool,
}

impl Default for GlmParams {
    fn default() -> Self {
        GlmParams {
            alpha: 0.05,
            standardize_numericals: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmModel {
    pub intercept: f64,
    /// Coefficients on the (possibly standardized) inputs.
    pub coefficients: Vec<f64>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl GlmModel {
    pub fn margin(&self, x: impl Fn(usize) -> f64) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .enumerate()
                .filter(|(_, b)| **b != 0.0)
                .map(|(j, b)| b * (x(j) - self.means[j]) / self.scales[j])
                .sum::<f64>()
    }
}

fn linear_predictor(z: &[Vec<f64>], b0: f64, beta: &[f64], eta: &mut [f64]) {
    eta.fill(b0);
    for (b, col) in beta.iter().zip(z) {
        if *b != 0.0 {
            for (e, v) in eta.iter_mut().zip(col) {
                *e += b * v;
            }
        }
    }
}

fn objective(z: &[Vec<f64>], target: &[f64], b0: f64, beta: &[f64], l1: f64, l2: f64) -> f64 {
    let mut eta = vec![0.0; target.len()];
    linear_predictor(z, b0, beta, &mut eta);
    let loss = eta
        .iter()
        .zip(target)
        .map(|(&m, &t)| {
            let s = if t > 0.5 { -m } else { m };
            if s > 0.0 { s + (-s).exp().ln_1p() } else { s.exp().ln_1p() }
        })
        .sum::<f64>()
        / target.len() as f64;
    let pen = beta.iter().map(|b| l1 * b.abs() + 0.5 * l2 * b * b).sum::<f64>();
    loss + pen
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

pub fn fit(x: &Matrix, y: &[bool], params: &GlmParams) -> GlmModel {
    let n = y.len();
    let nf = n as f64;
    let p = x.cols.len();
    let (means, scales): (Vec<f64>, Vec<f64>) = if params.standardize_numericals {
        x.cols
            .iter()
            .map(|c| {
                let m = c.iter().sum::<f64>() / nf;
                let v = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / nf;
                (m, if v > 0.0 { v.sqrt() } else { 0.0 })
            })
            .unzip()
    } else {
        (vec![0.0; p], vec![1.0; p])
    };
    // centred/scaled copies; constant columns become all zero
    let z: Vec<Vec<f64>> = x
        .cols
        .iter()
        .enumerate()
        .map(|(j, c)| {
            if scales[j] == 0.0 {
                vec![0.0; n]
            } else {
                c.iter().map(|v| (v - means[j]) / scales[j]).collect()
            }
        })
        .collect();
    let scales: Vec<f64> = scales.into_iter().map(|s| if s == 0.0 { 1.0 } else { s }).collect();
    let target: Vec<f64> = y.iter().map(|&t| f64::from(u8::from(t))).collect();

    let l1 = LAMBDA * params.alpha;
    let l2 = LAMBDA * (1.0 - params.alpha);
    let pos = target.iter().sum::<f64>();
    let mut b0 = (pos / (nf - pos)).ln();
    let mut beta = vec![0.0; p];
    let mut eta = vec![b0; n];
    let mut w = vec![0.0; n];
    let mut resid = vec![0.0; n];

    for _ in 0..MAX_OUTER {
        // quadratic approximation at the current point
        for i in 0..n {
            let pi = sigmoid(eta[i]);
            w[i] = (pi * (1.0 - pi)).max(1e-5);
            // working residual: z_i - eta_i
            resid[i] = (target[i] - pi) / w[i];
        }
        let xw2: Vec<f64> = z
            .iter()
            .map(|c| c.iter().zip(&w).map(|(v, wi)| wi * v * v).sum::<f64>() / nf)
            .collect();
        let w_sum = w.iter().sum::<f64>() / nf;
        let start_b0 = b0;
        let start_beta = beta.clone();

        for _ in 0..MAX_INNER {
            let mut max_change: f64 = 0.0;
            let d0 = resid.iter().zip(&w).map(|(r, wi)| wi * r).sum::<f64>() / nf / w_sum;
            b0 += d0;
            for r in resid.iter_mut() {
                *r -= d0;
            }
            max_change = max_change.max(w_sum * d0 * d0);
            for j in 0..p {
                if xw2[j] == 0.0 {
                    continue;
                }
                let col = &z[j];
                let grad = col
                    .iter()
                    .zip(&w)
                    .zip(&resid)
                    .map(|((v, wi), r)| wi * v * r)
                    .sum::<f64>()
                    / nf;
                let old = beta[j];
                let new = soft_threshold(grad + xw2[j] * old, l1) / (xw2[j] + l2);
                let delta = new - old;
                if delta != 0.0 {
                    beta[j] = new;
                    for (r, v) in resid.iter_mut().zip(col) {
                        *r -= delta * v;
                    }
                    max_change = max_change.max(xw2[j] * delta * delta);
                }
            }
            if max_change < TOLERANCE * TOLERANCE {
                break;
            }
        }
        // backtrack along the Newton direction until the objective does not rise
        let before = objective(&z, &target, start_b0, &start_beta, l1, l2);
        let (full_b0, full_beta) = (b0, beta.clone());
        let mut step = 1.0;
        loop {
            b0 = start_b0 + step * (full_b0 - start_b0);
            for j in 0..p {
                beta[j] = start_beta[j] + step * (full_beta[j] - start_beta[j]);
            }
            if step < 1e-6 || objective(&z, &target, b0, &beta, l1, l2) <= before {
                break;
            }
            step *= 0.5;
        }
        linear_predictor(&z, b0, &beta, &mut eta);
        let moved = (b0 - start_b0).abs().max(
            beta.iter()
                .zip(&start_beta)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
        if moved < TOLERANCE {
            break;
        }
    }
    GlmModel {
        intercept: b0,
        coefficients: beta,
        means,
        scales,
    }
}
