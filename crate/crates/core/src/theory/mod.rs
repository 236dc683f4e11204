//! Mean and mean-square performance theory of equalized diffusion.
//!
//! Quantities follow the network error recursion
//! `w~_i = B_i w~_{i-1} - (A_i + E_i)^T M p_i - E_i^T w_o - v_i`, with
//! `X_i = A_i + E_i` and `e_{l,k}(i) = -a_{l,k}(i) g_hat v_bar`.
//! Weighted norms use `|x|^2_sigma = x^* Sigma x` with `sigma = bvec(Sigma)`.

pub mod matrices;
pub mod moments;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::combination::GammaWeights;
use crate::engine::Mode;
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector};
use crate::network::NetworkModel;

pub use matrices::{barf_gaussian, barf_small_step, expected_a_kron_a, ColumnMoments, LinkLaw};
pub use moments::{all_link_moments, exp_int_e1, link_moments_mc, taylor_a2g2, LinkMoments};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FbarVariant {
    /// Gaussian fourth-moment expression.
    #[default]
    Gaussian,
    /// Small step-size approximation without the `O(mu^2)` moment term.
    SmallStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RvMethod {
    #[default]
    MonteCarlo,
    Taylor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryConfig {
    pub fbar: FbarVariant,
    pub rv: RvMethod,
    /// Monte Carlo draws per link.
    pub samples: usize,
    pub seed: u64,
    /// Accepted samples below which a link estimate is flagged.
    pub min_accepted: usize,
    /// 1 for complex regressors, 2 for real ones.
    pub beta: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            fbar: FbarVariant::Gaussian,
            rv: RvMethod::MonteCarlo,
            samples: 200_000,
            seed: 0x7E0,
            min_accepted: 1_000,
            beta: 1.0,
        }
    }
}

/// Assembled theory for one network, weight set and mode.
#[derive(Debug, Clone)]
pub struct TheoryModel {
    pub mode: Mode,
    pub n: usize,
    pub m: usize,
    pub beta: f64,
    /// `A = E[A_i]`.
    pub a: DMatrix<f64>,
    /// `E = E[E_i]`.
    pub e: CMatrix,
    /// `E[X_i (x) conj(X_i)]`, `N^2 x N^2`.
    pub exx: CMatrix,
    pub r_cal: CMatrix,
    pub m_cal: CMatrix,
    /// `B = (A + E)^T (I - M R)` extended.
    pub b: CMatrix,
    pub fbar: CMatrix,
    pub d: CMatrix,
    pub f: CMatrix,
    pub p_cal: CMatrix,
    pub rv: CMatrix,
    /// `Q` without the mean-dependent cross term.
    pub q0: CMatrix,
    /// `cross[k][(l, n)] = E[s_k conj(x_{l,n})]`, `s_k = sum_m e_{m,k}`.
    pub cross: Vec<CMatrix>,
    pub gamma: CVector,
    pub bias: Option<CVector>,
    pub rho_b: f64,
    pub rho_f: f64,
    /// `||E^T||` block-infinity bound.
    pub e_norm: f64,
    /// `||D^T||` block-infinity bound.
    pub d_norm: f64,
    pub lambda_max: Vec<f64>,
    pub links: Vec<LinkMoments>,
    pub warnings: Vec<String>,
    w_stack: CVector,
}

/// Steady-state predictions, linear scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub network_msd: f64,
    pub network_emse: f64,
    pub node_msd: Vec<f64>,
    pub node_emse: Vec<f64>,
}

/// Predicted learning curves, linear scale, one entry per iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransientCurves {
    pub network_msd: Vec<f64>,
    pub network_emse: Vec<f64>,
    /// `node_msd[k][i]`.
    pub node_msd: Vec<Vec<f64>>,
    pub node_emse: Vec<Vec<f64>>,
    pub divergent: bool,
}

/// `((1 - 1/(1+e))/l, (1 + 1/(1+e))/l)` per node.
pub fn mean_step_bounds(lambda_max: &[f64], e_norm: f64) -> Vec<(f64, f64)> {
    let h = 1.0 / (1.0 + e_norm);
    lambda_max.iter().map(|&l| ((1.0 - h) / l, (1.0 + h) / l)).collect()
}

/// `((1 - 1/sqrt(d))/l, (1 + 1/sqrt(d))/l)` per node, lower end clamped at 0.
pub fn ms_step_bounds(lambda_max: &[f64], d_norm: f64) -> Vec<(f64, f64)> {
    let h = 1.0 / d_norm.sqrt();
    lambda_max.iter().map(|&l| (((1.0 - h) / l).max(0.0), (1.0 + h) / l)).collect()
}

fn block(mat: &mut CMatrix, bi: usize, bj: usize, m: usize, val: &CMatrix) {
    mat.view_mut((bi * m, bj * m), (m, m)).copy_from(val);
}

impl TheoryModel {
    /// Assemble every matrix, estimating link statistics by Monte Carlo.
    pub fn build(net: &NetworkModel, weights: &GammaWeights, mode: Mode, cfg: &TheoryConfig) -> Result<Self> {
        let pilots = match mode {
            Mode::PilotCsi(n) => Some(n),
            Mode::NoEqualization => {
                return Err(Error::Config("no theory is available for unequalized links".into()))
            }
            _ => None,
        };
        let links = match mode {
            Mode::PerfectCsi | Mode::PilotCsi(_) => all_link_moments(net, pilots, cfg.samples, cfg.seed),
            _ => Vec::new(),
        };
        Self::from_moments(net, weights, mode, cfg, links)
    }

    /// Assemble from given link moments (empty for ideal and non-cooperative modes).
    pub fn from_moments(
        net: &NetworkModel,
        weights: &GammaWeights,
        mode: Mode,
        cfg: &TheoryConfig,
        links: Vec<LinkMoments>,
    ) -> Result<Self> {
        net.validate()?;
        let (n, m) = (net.num_nodes(), net.dim);
        let nm = n * m;
        let mut warnings = Vec::new();
        let wireless = matches!(mode, Mode::PerfectCsi | Mode::PilotCsi(_));
        if wireless && links.len() != net.links.len() {
            return Err(Error::Dimension(format!("{} link moments for {} links", links.len(), net.links.len())));
        }
        for (l, lm) in net.links.iter().zip(&links) {
            if lm.accepted < cfg.min_accepted {
                warnings.push(format!(
                    "link {}->{}: only {} of {} Monte Carlo draws passed the gate",
                    l.from, l.to, lm.accepted, lm.draws
                ));
            }
        }

        // Per-link laws of (I, I g_hat v_bar).
        let mut law = vec![vec![LinkLaw::default(); n]; n];
        let mut gamma = weights.gamma.clone();
        match mode {
            Mode::NonCoop => gamma.fill(0.0),
            Mode::IdealAtc => {
                for k in 0..n {
                    for &l in &net.neighbors[k] {
                        if l != k {
                            law[l][k] = LinkLaw::always_on();
                        }
                    }
                }
            }
            _ => {
                for (l, lm) in net.links.iter().zip(&links) {
                    law[l.from][l.to] = LinkLaw::from_moments(lm);
                }
            }
        }
        let cols = ColumnMoments::all(&gamma, &law);
        let (ex, exx) = matrices::assemble_x(&cols);
        let a = DMatrix::from_fn(n, n, |l, k| {
            if l == k {
                1.0 - (0..n).filter(|&j| j != k).map(|j| gamma[(j, k)] * law[j][k].p).sum::<f64>()
            } else {
                gamma[(l, k)] * law[l][k].p
            }
        });
        let e = CMatrix::from_fn(n, n, |l, k| if l == k { Complex64::new(0.0, 0.0) } else { -gamma[(l, k)] * law[l][k].mu });

        let r_blocks: Vec<CMatrix> = (0..n).map(|k| net.regressor_cov(k)).collect();
        let r_cal = linalg::block_diag(&r_blocks);
        let mus: Vec<f64> = net.nodes.iter().map(|x| x.step_size).collect();
        let m_cal = linalg::block_diag(
            &mus.iter().map(|&mu| CMatrix::identity(m, m) * Complex64::new(mu, 0.0)).collect::<Vec<_>>(),
        );
        let h_bar = CMatrix::identity(nm, nm) - &m_cal * &r_cal;
        let x_ext = linalg::kron(&ex, &CMatrix::identity(m, m));
        let b = x_ext.transpose() * &h_bar;

        let fbar = match cfg.fbar {
            FbarVariant::Gaussian => barf_gaussian(&r_blocks, &mus, cfg.beta)?,
            FbarVariant::SmallStep => barf_small_step(&r_blocks, &mus)?,
        };
        let d = linalg::kron(&exx, &CMatrix::identity(m * m, m * m));
        let f = &fbar * &d;

        // Noise terms.
        let p_cal = linalg::block_diag(
            &(0..n).map(|k| &r_blocks[k] * Complex64::new(net.nodes[k].noise_variance, 0.0)).collect::<Vec<_>>(),
        );
        let mut rv = CMatrix::zeros(nm, nm);
        if wireless {
            for k in 0..n {
                let mut s = 0.0;
                for (link, lm) in net.links.iter().zip(&links) {
                    if link.to != k {
                        continue;
                    }
                    let g = gamma[(link.from, k)];
                    let a2g2 = match cfg.rv {
                        RvMethod::MonteCarlo => g * g * lm.p * lm.g2,
                        RvMethod::Taylor => taylor_a2g2(g, lm.p, lm.lambda, lm.nu, lm.path_gain),
                    };
                    s += a2g2 * link.link_noise_variance;
                }
                block(&mut rv, k, k, m, &(CMatrix::identity(m, m) * Complex64::new(s, 0.0)));
            }
        }
        let w_o = CVector::from_vec(net.w_true.clone());
        let w_stack = CVector::from_fn(nm, |i, _| w_o[i % m]);
        let wwh = &w_o * w_o.adjoint();
        let mut q0 = rv.clone();
        for k in 0..n {
            for nn in 0..n {
                let t1 = &wwh * cols.ss(k, nn);
                let mut t2 = CMatrix::zeros(m, m);
                for l in 0..n {
                    let x = cols.xx(l, k, l, nn);
                    if x != Complex64::new(0.0, 0.0) {
                        let g = &r_blocks[l] * Complex64::new(mus[l] * mus[l] * net.nodes[l].noise_variance, 0.0);
                        t2 += g * x;
                    }
                }
                let cur = q0.view((k * m, nn * m), (m, m)).clone_owned();
                block(&mut q0, k, nn, m, &(cur + t1 + t2));
            }
        }
        let cross: Vec<CMatrix> = (0..n)
            .map(|k| CMatrix::from_fn(n, n, |l, nn| cols.sx(k, l, nn)))
            .collect();

        let rho_b = linalg::spectral_radius(&b)?;
        let rho_f = linalg::spectral_radius(&f)?;
        let e_norm = linalg::block_maxnorm_bound(&e.transpose(), 1)?;
        let d_norm = linalg::block_maxnorm_bound(&exx.transpose(), 1)?;
        let lambda_max = (0..n).map(|k| net.lambda_max(k)).collect();

        let mut model = TheoryModel {
            mode,
            n,
            m,
            beta: cfg.beta,
            a,
            e,
            exx,
            r_cal,
            m_cal,
            b,
            fbar,
            d,
            f,
            p_cal,
            rv,
            q0,
            cross,
            gamma: CVector::zeros(nm * nm),
            bias: None,
            rho_b,
            rho_f,
            e_norm,
            d_norm,
            lambda_max,
            links,
            warnings,
            w_stack,
        };
        if rho_b < 1.0 {
            let bias = model.solve_bias()?;
            model.gamma = model.gamma_for_mean(&bias)?;
            model.bias = Some(bias);
        } else {
            model.warnings.push(format!("mean recursion is unstable: rho(B) = {rho_b}"));
        }
        Ok(model)
    }

    /// `E^T w_o` extended.
    fn drive(&self) -> CVector {
        let et = linalg::kron(&self.e.transpose(), &CMatrix::identity(self.m, self.m));
        et * &self.w_stack
    }

    fn solve_bias(&self) -> Result<CVector> {
        let nm = self.n * self.m;
        let lhs = CMatrix::identity(nm, nm) - &self.b;
        let rhs = -self.drive();
        lhs.lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical { what: "I - B is singular".into(), iterations: 0 })
    }

    /// Limit of `E[w~_i]`, the solution of `b = B b - E^T w_o`.
    pub fn mean_bias(&self) -> Result<CVector> {
        self.bias.clone().ok_or(Error::Instability { what: "rho(B)".into(), radius: self.rho_b })
    }

    /// `gamma` with the cross term evaluated at mean error `mean`.
    pub fn gamma_for_mean(&self, mean: &CVector) -> Result<CVector> {
        let (n, m) = (self.n, self.m);
        let nm = n * m;
        let y = (CMatrix::identity(nm, nm) - &self.m_cal * &self.r_cal) * mean;
        let w_o = self.w_stack.rows(0, m).clone_owned();
        let mut q = self.q0.clone();
        for k in 0..n {
            for nn in 0..n {
                let mut kb = CMatrix::zeros(m, m);
                for l in 0..n {
                    let c = self.cross[k][(l, nn)];
                    if c != Complex64::new(0.0, 0.0) {
                        kb -= &w_o * y.rows(l * m, m).adjoint() * c;
                    }
                }
                let mut cur = q.view_mut((k * m, nn * m), (m, m));
                cur += &kb;
                let mut sym = q.view_mut((nn * m, k * m), (m, m));
                sym += kb.adjoint();
            }
        }
        linalg::bvec(&q.transpose(), m)
    }

    /// Weighting vector of the network MSD.
    pub fn sigma_msd(&self) -> CVector {
        let nm = self.n * self.m;
        linalg::bvec(&CMatrix::identity(nm, nm), self.m).expect("square") / Complex64::new(self.n as f64, 0.0)
    }

    /// Weighting vector of the network EMSE.
    pub fn sigma_emse(&self) -> CVector {
        linalg::bvec(&self.r_cal, self.m).expect("square") / Complex64::new(self.n as f64, 0.0)
    }

    fn node_weighting(&self, k: usize, emse: bool) -> CVector {
        let nm = self.n * self.m;
        let mut omega = CMatrix::zeros(nm, nm);
        let blk = if emse {
            self.r_cal.view((k * self.m, k * self.m), (self.m, self.m)).clone_owned()
        } else {
            CMatrix::identity(self.m, self.m)
        };
        block(&mut omega, k, k, self.m, &blk);
        linalg::bvec(&omega, self.m).expect("square")
    }

    fn require_ms_stable(&self) -> Result<()> {
        if self.rho_f >= 1.0 || self.bias.is_none() {
            return Err(Error::Instability { what: "rho(F)".into(), radius: self.rho_f.max(self.rho_b) });
        }
        Ok(())
    }

    /// Steady-state MSD and EMSE, network and per node.
    pub fn steady_state(&self) -> Result<SteadyState> {
        self.require_ms_stable()?;
        let dim = self.f.nrows();
        let lu = (CMatrix::identity(dim, dim) - &self.f).lu();
        let eval = |omega: CVector| -> Result<f64> {
            let s = lu
                .solve(&omega)
                .ok_or_else(|| Error::Numerical { what: "I - F is singular".into(), iterations: 0 })?;
            Ok(self.gamma.dot(&s).re)
        };
        Ok(SteadyState {
            network_msd: eval(self.sigma_msd())?,
            network_emse: eval(self.sigma_emse())?,
            node_msd: (0..self.n).map(|k| eval(self.node_weighting(k, false))).collect::<Result<_>>()?,
            node_emse: (0..self.n).map(|k| eval(self.node_weighting(k, true))).collect::<Result<_>>()?,
        })
    }

    /// 2-norm condition number of `I - F`.
    pub fn condition_number(&self) -> f64 {
        let dim = self.f.nrows();
        let sv = (CMatrix::identity(dim, dim) - &self.f).singular_values();
        let max = sv.iter().copied().fold(0.0, f64::max);
        let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
        max / min
    }

    /// Learning curves from `w_{k,-1} = 0`. Entry `i` of the MSD curves is
    /// `E|w~_i|^2`; entry `i` of the EMSE curves is the a-priori error of
    /// iteration `i`, which uses `w~_{i-1}`.
    pub fn transient(&self, iterations: usize) -> Result<TransientCurves> {
        let n = self.n;
        let sig_msd = self.sigma_msd();
        let sig_emse = self.sigma_emse();
        let node_msd_w: Vec<CVector> = (0..n).map(|k| self.node_weighting(k, false)).collect();
        let node_emse_w: Vec<CVector> = (0..n).map(|k| self.node_weighting(k, true)).collect();
        let ft = self.f.transpose();
        let drive = self.drive();
        // omega_i = bvec((E[w~_i w~_i^*])^T), so that E|w~_i|^2_sigma = omega_i^T sigma.
        let mut omega = linalg::bvec(&(&self.w_stack * self.w_stack.adjoint()).transpose(), self.m)?;
        let mut mean = self.w_stack.clone();
        let dotr = |a: &CVector, b: &CVector| a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<Complex64>().re;
        let mut out = TransientCurves {
            network_msd: Vec::with_capacity(iterations),
            network_emse: Vec::with_capacity(iterations),
            node_msd: vec![Vec::with_capacity(iterations); n],
            node_emse: vec![Vec::with_capacity(iterations); n],
            divergent: self.rho_f >= 1.0 || self.rho_b >= 1.0,
        };
        let static_gamma = self.e.iter().all(|x| *x == Complex64::new(0.0, 0.0));
        for _ in 0..iterations {
            out.network_emse.push(dotr(&omega, &sig_emse));
            for k in 0..n {
                out.node_emse[k].push(dotr(&omega, &node_emse_w[k]));
            }
            let g = if static_gamma { self.gamma.clone() } else { self.gamma_for_mean(&mean)? };
            omega = &ft * &omega + g;
            mean = &self.b * &mean - &drive;
            out.network_msd.push(dotr(&omega, &sig_msd));
            for k in 0..n {
                out.node_msd[k].push(dotr(&omega, &node_msd_w[k]));
            }
        }
        Ok(out)
    }

    /// Network steady-state MSD recomputed with every Monte Carlo moment moved
    /// by -1 and +1 standard error.
    pub fn sensitivity(&self, net: &NetworkModel, weights: &GammaWeights, cfg: &TheoryConfig) -> Result<(f64, f64)> {
        let at = |k: f64| -> Result<f64> {
            let links = self.links.iter().map(|l| l.shifted(k)).collect();
            Ok(Self::from_moments(net, weights, self.mode, cfg, links)?.steady_state()?.network_msd)
        };
        Ok((at(-1.0)?, at(1.0)?))
    }
}
