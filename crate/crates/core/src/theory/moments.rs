//! Per-link gating statistics, by conditional Monte Carlo or closed-form
//! approximation.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{pilot_lambda, success_probability};
use crate::network::{LinkParams, NetworkModel};
use crate::rng::{self, complex_normal};

/// Conditional moments of one link given that it passes the gate.
/// Unconditional moments are these times `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkMoments {
    /// `exp(-lambda nu)`.
    pub p: f64,
    pub lambda: f64,
    pub nu: f64,
    /// `P_t / r^alpha`.
    pub path_gain: f64,
    /// `E[g_hat v_bar | gated]`, `v_bar` the averaged pilot noise.
    pub gv: Complex64,
    /// `E[|g_hat|^2 | gated]`.
    pub g2: f64,
    /// `E[|g_hat v_bar|^2 | gated]`.
    pub gv2: f64,
    pub se_gv: f64,
    pub se_g2: f64,
    pub se_gv2: f64,
    pub accepted: usize,
    pub draws: usize,
}

impl LinkMoments {
    /// Every Monte Carlo moment moved by `k` standard errors.
    pub fn shifted(&self, k: f64) -> Self {
        let dir = if self.gv.norm() > 0.0 { self.gv / self.gv.norm() } else { Complex64::new(1.0, 0.0) };
        Self {
            gv: self.gv + dir * (k * self.se_gv),
            g2: (self.g2 + k * self.se_g2).max(0.0),
            gv2: (self.gv2 + k * self.se_gv2).max(0.0),
            ..*self
        }
    }
}

/// `(mean, standard error)` accumulator.
#[derive(Default)]
struct Acc {
    n: usize,
    sum: f64,
    sum2: f64,
}

impl Acc {
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum2 += x * x;
    }
    fn mean(&self) -> f64 {
        if self.n == 0 { 0.0 } else { self.sum / self.n as f64 }
    }
    fn se(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let var = ((self.sum2 - self.sum * self.sum / n) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

/// Conditional Monte Carlo for one link: `draws` joint samples of fading and
/// pilot noise, keeping those with `|h_hat|^2 >= nu`.
pub fn link_moments_mc(
    net: &NetworkModel,
    link: &LinkParams,
    pilots: Option<usize>,
    draws: usize,
    rng: &mut rng::StreamRng,
) -> LinkMoments {
    let nu = net.nu(link);
    let c = net.path_gain(link);
    let (noise, n) = match pilots {
        Some(n) => (link.pilot_noise_variance, n),
        None => (0.0, 1),
    };
    let lambda = pilot_lambda(link.fading_variance, c, noise, n);
    let sd = noise.sqrt();
    let (mut re, mut im, mut g2, mut gv2) = (Acc::default(), Acc::default(), Acc::default(), Acc::default());
    for _ in 0..draws {
        let h = complex_normal(rng, link.fading_variance);
        // sqrt(r^a / P) * v_bar, i.e. the estimation error h_hat - h.
        let err = if sd > 0.0 {
            crate::channel::pilot_error(c, n, sd, rng)
        } else {
            Complex64::new(0.0, 0.0)
        };
        let hh = h + err;
        let mag = hh.norm_sqr();
        if mag < nu || mag == 0.0 {
            continue;
        }
        // g_hat v_bar = conj(h_hat) / |h_hat|^2 * (h_hat - h).
        let x = hh.conj() * err / mag;
        re.push(x.re);
        im.push(x.im);
        g2.push(1.0 / (c * mag));
        gv2.push(x.norm_sqr());
    }
    LinkMoments {
        p: success_probability(nu, lambda),
        lambda,
        nu,
        path_gain: c,
        gv: Complex64::new(re.mean(), im.mean()),
        g2: g2.mean(),
        gv2: gv2.mean(),
        se_gv: (re.se().powi(2) + im.se().powi(2)).sqrt(),
        se_g2: g2.se(),
        se_gv2: gv2.se(),
        accepted: g2.n,
        draws,
    }
}

/// Moments for every link of `net`, each from its own stream of `seed`.
pub fn all_link_moments(net: &NetworkModel, pilots: Option<usize>, draws: usize, seed: u64) -> Vec<LinkMoments> {
    let key = rng::run_key(seed, u64::MAX);
    net.links
        .par_iter()
        .enumerate()
        .map(|(j, link)| {
            let mut r = rng::stream(key, j as u64);
            link_moments_mc(net, link, pilots, draws, &mut r)
        })
        .collect()
}

/// Exponential integral `E1(x)` for `x > 0`.
pub fn exp_int_e1(x: f64) -> f64 {
    const EULER: f64 = 0.577_215_664_901_532_9;
    if x <= 0.0 {
        return f64::INFINITY;
    }
    if x <= 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..200 {
            term *= -x / k as f64;
            let add = term / k as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        return -EULER - x.ln() - sum;
    }
    // Continued fraction, modified Lentz.
    let tiny = 1e-300;
    let mut b = x + 1.0;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let a = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (a * d + b);
        c = b + a / c;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h * (-x).exp()
}


/// Second-order Taylor approximation of `E[a^2 |g_hat|^2]` through the mean
/// and variance of the truncated exponential `z = (P_t/r^alpha)|h_hat|^2`.
pub fn taylor_a2g2(gamma: f64, p: f64, lambda: f64, nu: f64, path_gain: f64) -> f64 {
    let m = 1.0 / lambda + nu;
    let c = path_gain;
    gamma * gamma * p * (1.0 / (c * m) - nu / (c * m * m) + 1.0 / (c * lambda * lambda * m.powi(3)))
}

/// Mean of `(P_t/r^alpha)|h_hat|^2` given the gate.
pub fn truncated_mean_z(lambda: f64, nu: f64, path_gain: f64) -> f64 {
    path_gain * (1.0 / lambda + nu)
}

/// Variance of `(P_t/r^alpha)|h_hat|^2` given the gate.
pub fn truncated_var_z(lambda: f64, path_gain: f64) -> f64 {
    (path_gain / lambda).powi(2)
}
