//! Moment matrices: `E[X_i (x) conj(X_i)]` and the regressor factor `F_bar`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::moments::LinkMoments;
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Law of a link through three moments of the gate indicator `I` and the
/// estimation-error product `I g_hat v_bar`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LinkLaw {
    /// `E[I]`.
    pub p: f64,
    /// `E[I g_hat v_bar]`.
    pub mu: Complex64,
    /// `E[I |g_hat v_bar|^2]`.
    pub t: f64,
}

impl LinkLaw {
    pub fn always_on() -> Self {
        Self { p: 1.0, mu: ZERO, t: 0.0 }
    }

    /// Gating with probability `p` and no estimation error.
    pub fn bernoulli(p: f64) -> Self {
        Self { p, mu: ZERO, t: 0.0 }
    }

    pub fn from_moments(m: &LinkMoments) -> Self {
        Self { p: m.p, mu: m.gv * m.p, t: m.gv2 * m.p }
    }

    /// `E[zeta]` with `zeta = I (1 - g_hat v_bar)`.
    fn zeta_mean(&self) -> Complex64 {
        Complex64::new(self.p, 0.0) - self.mu
    }

    /// `E[|zeta|^2]`.
    fn zeta_sq(&self) -> f64 {
        self.p - 2.0 * self.mu.re + self.t
    }
}

/// Same-column joint moments of `x_{.,k} = a_{.,k} + e_{.,k}` and `e_{.,k}`.
#[derive(Debug, Clone)]
struct Column {
    /// `E[x_l conj(x_m)]`.
    xx: CMatrix,
    /// `E[e_m conj(x_l)]` at `(m, l)`.
    ex: CMatrix,
    /// `E[e_m conj(e_l)]`.
    ee: CMatrix,
}

/// Moments of the random combination matrix `X_i = A_i + E_i`. Columns are
/// independent, so cross-column moments factor into means.
#[derive(Debug, Clone)]
pub struct ColumnMoments {
    pub n: usize,
    /// `E[x_{l,k}]`.
    pub x_mean: CMatrix,
    /// `E[e_{l,k}]`.
    pub e_mean: CMatrix,
    cols: Vec<Column>,
}

impl ColumnMoments {
    /// `gamma[(l, k)]` base weights and `law[l][k]` per link.
    pub fn all(gamma: &DMatrix<f64>, law: &[Vec<LinkLaw>]) -> Self {
        let n = gamma.nrows();
        let mut x_mean = CMatrix::zeros(n, n);
        let mut e_mean = CMatrix::zeros(n, n);
        let mut cols = Vec::with_capacity(n);
        for k in 0..n {
            let g = |l: usize| if l == k { 0.0 } else { gamma[(l, k)] };
            let lw = |l: usize| law[l][k];
            let gp_sum: f64 = (0..n).map(|j| g(j) * lw(j).p).sum();
            // 1 - gamma_l - sum_{j != l,k} gamma_j p_j
            let rest = |l: usize| 1.0 - g(l) - (gp_sum - g(l) * lw(l).p);
            for l in 0..n {
                if l == k {
                    x_mean[(l, k)] = Complex64::new(1.0 - gp_sum, 0.0);
                } else {
                    x_mean[(l, k)] = lw(l).zeta_mean() * g(l);
                    e_mean[(l, k)] = -lw(l).mu * g(l);
                }
            }
            let mut xx = CMatrix::zeros(n, n);
            let mut ex = CMatrix::zeros(n, n);
            let mut ee = CMatrix::zeros(n, n);
            for l in 0..n {
                for m in 0..n {
                    xx[(l, m)] = if l == k && m == k {
                        let sq: f64 = (0..n).map(|j| g(j) * g(j) * lw(j).p).sum();
                        let sq2: f64 = (0..n).map(|j| (g(j) * lw(j).p).powi(2)).sum();
                        Complex64::new(1.0 - 2.0 * gp_sum + sq + gp_sum * gp_sum - sq2, 0.0)
                    } else if l == m {
                        Complex64::new(g(l) * g(l) * lw(l).zeta_sq(), 0.0)
                    } else if m == k {
                        lw(l).zeta_mean() * (g(l) * rest(l))
                    } else if l == k {
                        lw(m).zeta_mean().conj() * (g(m) * rest(m))
                    } else {
                        lw(l).zeta_mean() * lw(m).zeta_mean().conj() * (g(l) * g(m))
                    };
                    if m == k {
                        continue;
                    }
                    // e_m with m a neighbor; l ranges over all entries of x.
                    let em = -lw(m).mu * g(m);
                    ex[(m, l)] = if l == m {
                        -(lw(m).mu - Complex64::new(lw(m).t, 0.0)) * (g(m) * g(m))
                    } else if l == k {
                        em * rest(m)
                    } else {
                        em * lw(l).zeta_mean().conj() * g(l)
                    };
                    for l2 in 0..n {
                        if l2 == k {
                            continue;
                        }
                        ee[(m, l2)] = if l2 == m {
                            Complex64::new(g(m) * g(m) * lw(m).t, 0.0)
                        } else {
                            em * (-lw(l2).mu * g(l2)).conj()
                        };
                    }
                }
            }
            cols.push(Column { xx, ex, ee });
        }
        Self { n, x_mean, e_mean, cols }
    }

    /// `E[x_{l,k} conj(x_{m,n})]`.
    pub fn xx(&self, l: usize, k: usize, m: usize, n: usize) -> Complex64 {
        if k == n {
            self.cols[k].xx[(l, m)]
        } else {
            self.x_mean[(l, k)] * self.x_mean[(m, n)].conj()
        }
    }

    fn s_mean(&self, k: usize) -> Complex64 {
        self.e_mean.column(k).sum()
    }

    /// `E[s_k conj(x_{l,n})]` with `s_k = sum_m e_{m,k}`.
    pub fn sx(&self, k: usize, l: usize, n: usize) -> Complex64 {
        if k == n {
            self.cols[k].ex.column(l).sum()
        } else {
            self.s_mean(k) * self.x_mean[(l, n)].conj()
        }
    }

    /// `E[s_k conj(s_n)]`.
    pub fn ss(&self, k: usize, n: usize) -> Complex64 {
        if k == n {
            self.cols[k].ee.sum()
        } else {
            self.s_mean(k) * self.s_mean(n).conj()
        }
    }
}

/// `E[X_i]` and `E[X_i (x) conj(X_i)]`, the latter indexed
/// `(l N + m, k N + n) -> E[x_{l,k} conj(x_{m,n})]`.
pub fn assemble_x(c: &ColumnMoments) -> (CMatrix, CMatrix) {
    let n = c.n;
    let exx = CMatrix::from_fn(n * n, n * n, |r, z| c.xx(r / n, z / n, r % n, z % n));
    (c.x_mean.clone(), exx)
}

/// `E[A_i (x) A_i]` for links gated independently with probabilities `p[(l, k)]`.
pub fn expected_a_kron_a(gamma: &DMatrix<f64>, p: &DMatrix<f64>) -> CMatrix {
    let n = gamma.nrows();
    let law: Vec<Vec<LinkLaw>> = (0..n).map(|l| (0..n).map(|k| LinkLaw::bernoulli(p[(l, k)])).collect()).collect();
    assemble_x(&ColumnMoments::all(gamma, &law)).1
}

fn check_hermitian(r: &[CMatrix]) -> Result<()> {
    for (k, rk) in r.iter().enumerate() {
        if !rk.is_square() || (rk - rk.adjoint()).norm() > 1e-10 * rk.norm().max(1.0) {
            return Err(Error::Config(format!("regressor covariance {k} is not Hermitian")));
        }
    }
    Ok(())
}

fn h_bar(r: &[CMatrix], mus: &[f64]) -> CMatrix {
    let blocks: Vec<CMatrix> = r
        .iter()
        .zip(mus)
        .map(|(rk, &mu)| CMatrix::identity(rk.nrows(), rk.nrows()) - rk * Complex64::new(mu, 0.0))
        .collect();
    linalg::block_diag(&blocks)
}

/// `(I - M R)^T (x)_b (I - M R)`.
pub fn barf_small_step(r: &[CMatrix], mus: &[f64]) -> Result<CMatrix> {
    check_hermitian(r)?;
    let m = r.first().map_or(1, |x| x.nrows());
    let h = h_bar(r, mus);
    linalg::block_kron(&h.transpose(), &h, m)
}

/// `E[(I - M R_i)^T (x)_b (I - M R_i)]` for circular Gaussian regressors:
/// the small-step term plus `mu_k^2 ((beta - 1) R_k^T (x) R_k + r_k r_k^*)`
/// on diagonal block `(k N + k)`, `r_k = vec(R_k)`. With `beta = 2` (real data)
/// the result is exact on bvec of symmetric weighting matrices only.
pub fn barf_gaussian(r: &[CMatrix], mus: &[f64], beta: f64) -> Result<CMatrix> {
    let mut f = barf_small_step(r, mus)?;
    let n = r.len();
    let m = r.first().map_or(1, |x| x.nrows());
    let m2 = m * m;
    for (k, rk) in r.iter().enumerate() {
        let vec_r = CMatrix::from_iterator(m2, 1, rk.iter().copied());
        let extra = linalg::kron(&rk.transpose(), rk) * Complex64::new(beta - 1.0, 0.0) + &vec_r * vec_r.adjoint();
        let pos = (k * n + k) * m2;
        let mut view = f.view_mut((pos, pos), (m2, m2));
        view += extra * Complex64::new(mus[k] * mus[k], 0.0);
    }
    Ok(f)
}
