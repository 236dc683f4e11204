//! Static base weights and the dynamic left-stochastic combination matrix.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaRule {
    #[default]
    RelativeDegree,
    Uniform,
    Metropolis,
    /// User supplied.
    Custom,
}

/// Off-diagonal base weights `gamma[(l, k)]`; the diagonal is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaWeights {
    pub rule: GammaRule,
    pub gamma: DMatrix<f64>,
    pub neighbors: Vec<Vec<usize>>,
}

impl GammaWeights {
    pub fn new(rule: GammaRule, neighbors: &[Vec<usize>]) -> Result<Self> {
        let n = neighbors.len();
        let deg: Vec<f64> = neighbors.iter().map(|s| s.len() as f64).collect();
        let mut gamma = DMatrix::zeros(n, n);
        for k in 0..n {
            let total: f64 = neighbors[k].iter().map(|&m| deg[m]).sum();
            for &l in &neighbors[k] {
                if l == k {
                    continue;
                }
                gamma[(l, k)] = match rule {
                    GammaRule::RelativeDegree => deg[l] / total,
                    GammaRule::Uniform => 1.0 / deg[k],
                    GammaRule::Metropolis => 1.0 / deg[k].max(deg[l]),
                    GammaRule::Custom => {
                        return Err(Error::Config("custom weights need an explicit matrix".into()))
                    }
                };
            }
        }
        Self::from_matrix(rule, gamma, neighbors)
    }

    /// Validate explicit weights against the neighbor sets and the
    /// `sum_l gamma_{l,k} < 1` condition.
    pub fn from_matrix(rule: GammaRule, gamma: DMatrix<f64>, neighbors: &[Vec<usize>]) -> Result<Self> {
        let n = neighbors.len();
        if gamma.nrows() != n || gamma.ncols() != n {
            return Err(Error::Dimension(format!("gamma must be {n}x{n}")));
        }
        for k in 0..n {
            let mut sum = 0.0;
            for l in 0..n {
                let g = gamma[(l, k)];
                if l == k {
                    if g != 0.0 {
                        return Err(Error::Invariant(format!("gamma[{k},{k}] must be zero")));
                    }
                    continue;
                }
                if !(g >= 0.0) || !g.is_finite() {
                    return Err(Error::Invariant(format!("gamma[{l},{k}] = {g} is negative or not finite")));
                }
                if g > 0.0 && !neighbors[k].contains(&l) {
                    return Err(Error::Invariant(format!("gamma[{l},{k}] > 0 but {l} is not a neighbor of {k}")));
                }
                sum += g;
            }
            if sum >= 1.0 {
                return Err(Error::Invariant(format!(
                    "weights into node {k} sum to {sum}, need < 1"
                )));
            }
        }
        Ok(Self { rule, gamma, neighbors: neighbors.to_vec() })
    }

    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    /// `A_i` for the given active sets.
    pub fn dynamic_weights(&self, active: &[Vec<usize>]) -> Result<DMatrix<f64>> {
        let n = self.num_nodes();
        if active.len() != n {
            return Err(Error::Dimension(format!("{} active sets for {n} nodes", active.len())));
        }
        let mut a = DMatrix::zeros(n, n);
        for k in 0..n {
            let mut off = 0.0;
            for &l in &active[k] {
                if l == k {
                    continue;
                }
                if !self.neighbors[k].contains(&l) {
                    return Err(Error::Contract(format!("{l} is active at {k} but not a neighbor")));
                }
                a[(l, k)] = self.gamma[(l, k)];
                off += self.gamma[(l, k)];
            }
            a[(k, k)] = 1.0 - off;
        }
        Ok(a)
    }

    /// Combination matrix with every link up.
    pub fn static_matrix(&self) -> DMatrix<f64> {
        self.mean_matrix(&DMatrix::from_element(self.num_nodes(), self.num_nodes(), 1.0))
    }

    /// `E[A_i]` given success probabilities `p[(l, k)]`.
    pub fn mean_matrix(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.num_nodes();
        let mut a = DMatrix::zeros(n, n);
        for k in 0..n {
            let mut off = 0.0;
            for l in 0..n {
                if l != k {
                    a[(l, k)] = self.gamma[(l, k)] * p[(l, k)];
                    off += a[(l, k)];
                }
            }
            a[(k, k)] = 1.0 - off;
        }
        a
    }
}
