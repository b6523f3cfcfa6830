//! Weighted L2-regularized logistic regression fit by damped Newton steps.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn logit(&self, row: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>()
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|r| {
                let z = self.bias + self.weights.iter().zip(r.iter()).map(|(w, v)| w * v).sum::<f64>();
                sigmoid(z)
            })
            .collect()
    }

    /// Minimizes `Σ w_i · logloss_i / Σ w_i + l2/2 · |weights|²` over `rows`.
    pub fn fit(x: &Array2<f64>, y: &[bool], rows: &[usize], sample_weight: &[f64], l2: f64) -> Result<Self, Error> {
        let d = x.ncols();
        let p = d + 1;
        let total: f64 = rows.iter().map(|&r| sample_weight[r]).sum();
        if total <= 0.0 {
            return Err(Error::Config("logistic regression needs positive sample weight".into()));
        }
        let objective = |theta: &[f64]| {
            let mut loss = 0.0;
            for &r in rows {
                let z = theta[d] + (0..d).map(|j| theta[j] * x[[r, j]]).sum::<f64>();
                // log(1 + e^z) - y z, computed stably.
                let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
                loss += sample_weight[r] * (softplus - if y[r] { z } else { 0.0 });
            }
            loss / total + 0.5 * l2 * theta[..d].iter().map(|t| t * t).sum::<f64>()
        };

        let mut theta = vec![0.0; p];
        let mut current = objective(&theta);
        for _ in 0..100 {
            let mut grad = vec![0.0; p];
            let mut hess = vec![vec![0.0; p]; p];
            for &r in rows {
                let w = sample_weight[r] / total;
                let z = theta[d] + (0..d).map(|j| theta[j] * x[[r, j]]).sum::<f64>();
                let q = sigmoid(z);
                let resid = q - if y[r] { 1.0 } else { 0.0 };
                let curv = (q * (1.0 - q)).max(1e-12);
                for a in 0..p {
                    let xa = if a == d { 1.0 } else { x[[r, a]] };
                    grad[a] += w * resid * xa;
                    for b in 0..=a {
                        let xb = if b == d { 1.0 } else { x[[r, b]] };
                        hess[a][b] += w * curv * xa * xb;
                    }
                }
            }
            for a in 0..p {
                for b in 0..a {
                    hess[b][a] = hess[a][b];
                }
                if a < d {
                    grad[a] += l2 * theta[a];
                    hess[a][a] += l2;
                }
                hess[a][a] += 1e-10;
            }
            let step = solve(hess, grad.clone()).ok_or_else(|| Error::Config("singular Newton system".into()))?;
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let cand: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t - scale * s).collect();
                let value = objective(&cand);
                if value <= current {
                    let improvement = current - value;
                    theta = cand;
                    current = value;
                    accepted = true;
                    if improvement < 1e-14 {
                        return Ok(Self::from_theta(&theta, d));
                    }
                    break;
                }
                scale *= 0.5;
            }
            if !accepted || grad.iter().map(|g| g.abs()).fold(0.0, f64::max) < 1e-12 {
                break;
            }
        }
        Ok(Self::from_theta(&theta, d))
    }

    fn from_theta(theta: &[f64], d: usize) -> Self {
        Self {
            weights: theta[..d].to_vec(),
            bias: theta[d],
        }
    }
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}
