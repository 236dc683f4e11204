//! Per-slot link realizations: Rayleigh fading, pilot estimation, SNR gating
//! and zero-forcing equalization.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetworkModel;
use crate::rng::{complex_normal, StreamRng};

/// What a receiver knows about its incoming channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsiMode {
    /// No channel at all; neighbors' intermediates arrive intact.
    Ideal,
    /// The receiver knows `h` exactly.
    Perfect,
    /// `h` is estimated from `pilots` unit training symbols.
    Pilot { pilots: usize },
    /// No equalization: `g = 1`, gating by the true `h`.
    Unequalized,
}

impl CsiMode {
    pub fn check(self) -> Result<()> {
        match self {
            CsiMode::Pilot { pilots: 0 } => Err(Error::Config("pilot mode needs at least one pilot".into())),
            _ => Ok(()),
        }
    }
}

/// Circular Gaussian fading coefficient with `E|h|^2 = variance`.
pub fn draw_fading<R: rand::Rng + ?Sized>(variance: f64, rng: &mut R) -> Complex64 {
    complex_normal(rng, variance)
}

/// `p = exp(-lambda nu)`.
pub fn success_probability(nu: f64, lambda: f64) -> f64 {
    (-lambda * nu).exp()
}

/// Variance of the pilot estimation error `h - h_hat`: `(r^alpha / P_t) sigma^2 / n`.
pub fn estimation_error_variance(path_gain: f64, pilot_noise: f64, pilots: usize) -> f64 {
    pilot_noise / (path_gain * pilots as f64)
}

/// Rate of the exponential law of `|h_hat|^2`: `1 / (sigma_h^2 + error variance)`.
/// With zero pilot noise this is the true-CSI rate `1 / sigma_h^2`.
pub fn pilot_lambda(fading_variance: f64, path_gain: f64, pilot_noise: f64, pilots: usize) -> f64 {
    1.0 / (fading_variance + estimation_error_variance(path_gain, pilot_noise, pilots))
}

/// Received copy of `payload` after fading, path loss and additive noise.
pub fn transmit<R: rand::Rng + ?Sized>(
    payload: &[Complex64],
    h: Complex64,
    path_gain: f64,
    link_noise: f64,
    rng: &mut R,
) -> Vec<Complex64> {
    let a = h * path_gain.sqrt();
    payload
        .iter()
        .map(|&x| a * x + complex_normal(rng, link_noise))
        .collect()
}

/// Least-squares channel estimate from `pilots` unit training symbols,
/// written as `h + sqrt(r^alpha / P_t) * mean(v_j)`.
pub fn pilot_estimate<R: rand::Rng + ?Sized>(
    h: Complex64,
    path_gain: f64,
    pilots: usize,
    pilot_noise: f64,
    rng: &mut R,
) -> Result<Complex64> {
    if pilots == 0 {
        return Err(Error::Config("pilot estimate needs at least one pilot".into()));
    }
    Ok(h + pilot_error(path_gain, pilots, pilot_noise.sqrt(), rng))
}

/// `sqrt(r^alpha / P_t) * mean(v_j)` with `v_j = sd * z_j`, `z_j ~ CN(0, 1)`.
pub(crate) fn pilot_error<R: rand::Rng + ?Sized>(
    path_gain: f64,
    pilots: usize,
    sd: f64,
    rng: &mut R,
) -> Complex64 {
    let mut sum = Complex64::new(0.0, 0.0);
    for _ in 0..pilots {
        sum += complex_normal(rng, 1.0);
    }
    sum * (sd / (pilots as f64 * path_gain.sqrt()))
}

/// Active neighborhood of node `k`. `estimates` and `thresholds` are aligned
/// with `neighbors`; the entries at `k` are ignored.
pub fn gate_active_set(
    k: usize,
    neighbors: &[usize],
    estimates: &[Complex64],
    thresholds: &[f64],
) -> Vec<usize> {
    neighbors
        .iter()
        .zip(estimates.iter().zip(thresholds))
        .filter(|&(&l, (h, &nu))| l == k || h.norm_sqr() >= nu)
        .map(|(&l, _)| l)
        .collect()
}

/// Zero-forcing gain `g = conj(h_hat) / |h_hat|^2 * sqrt(r^alpha / P_t)`,
/// or 1 on the self link.
pub fn equalizer_gain(h_hat: Complex64, nu: f64, path_gain: f64, is_self: bool) -> Result<Complex64> {
    if is_self {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let mag = h_hat.norm_sqr();
    if !(mag >= nu) || mag == 0.0 {
        return Err(Error::Contract(format!(
            "equalizer requested on an inactive link (|h_hat|^2 = {mag:e}, nu = {nu:e})"
        )));
    }
    Ok(h_hat.conj() / mag / path_gain.sqrt())
}

/// Random state of one link, drawn once per slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkDraw {
    pub fading: Complex64,
    pub estimate: Complex64,
    pub active: bool,
}

/// One slot of channel realizations for every directed link.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDraw {
    /// Aligned with `NetworkModel::links`.
    pub links: Vec<LinkDraw>,
    /// `N_{k,i}`, sorted, always containing `k`.
    pub active_sets: Vec<Vec<usize>>,
}

/// Independent streams feeding one link.
#[derive(Debug, Clone)]
pub struct LinkStreams {
    pub fading: StreamRng,
    pub pilot: StreamRng,
    pub noise: StreamRng,
}

/// Precomputed per-link constants.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LinkConst {
    pub nu: f64,
    pub path_gain: f64,
    pub fading_sd2: f64,
    pub pilot_sd: f64,
    pub noise_var: f64,
    /// Index of the reverse link, used for reciprocal fading.
    pub reverse: Option<usize>,
}

pub(crate) fn link_constants(net: &NetworkModel) -> Vec<LinkConst> {
    net.links
        .iter()
        .map(|l| LinkConst {
            nu: net.nu(l),
            path_gain: net.path_gain(l),
            fading_sd2: l.fading_variance,
            pilot_sd: l.pilot_noise_variance.sqrt(),
            noise_var: l.link_noise_variance,
            reverse: net.link_index(l.to, l.from),
        })
        .collect()
}

impl ChannelDraw {
    /// Draw one slot. Per slot each fading stream yields one draw and, in
    /// pilot mode, each pilot stream yields `pilots` draws.
    pub(crate) fn draw_with(
        net: &NetworkModel,
        consts: &[LinkConst],
        csi: CsiMode,
        streams: &mut [LinkStreams],
    ) -> ChannelDraw {
        let mut fading: Vec<Complex64> = streams
            .iter_mut()
            .zip(consts)
            .map(|(s, c)| draw_fading(c.fading_sd2, &mut s.fading))
            .collect();
        if net.reciprocal_fading {
            for (j, l) in net.links.iter().enumerate() {
                if l.from > l.to {
                    if let Some(r) = consts[j].reverse {
                        fading[j] = fading[r];
                    }
                }
            }
        }
        let links: Vec<LinkDraw> = fading
            .iter()
            .zip(consts)
            .zip(streams.iter_mut())
            .map(|((&h, c), s)| {
                let estimate = match csi {
                    CsiMode::Pilot { pilots } => h + pilot_error(c.path_gain, pilots, c.pilot_sd, &mut s.pilot),
                    _ => h,
                };
                let active = match csi {
                    CsiMode::Ideal => true,
                    _ => estimate.norm_sqr() >= c.nu,
                };
                LinkDraw { fading: h, estimate, active }
            })
            .collect();
        let mut active_sets: Vec<Vec<usize>> = (0..net.num_nodes()).map(|k| vec![k]).collect();
        for (l, d) in net.links.iter().zip(&links) {
            if d.active {
                active_sets[l.to].push(l.from);
            }
        }
        for set in &mut active_sets {
            set.sort_unstable();
        }
        ChannelDraw { links, active_sets }
    }

    /// Draw one slot for `net` from the given link streams.
    pub fn draw(net: &NetworkModel, csi: CsiMode, streams: &mut [LinkStreams]) -> Result<ChannelDraw> {
        csi.check()?;
        if streams.len() != net.links.len() {
            return Err(Error::Dimension(format!(
                "{} link streams for {} links",
                streams.len(),
                net.links.len()
            )));
        }
        Ok(Self::draw_with(net, &link_constants(net), csi, streams))
    }

    /// Indicator `I_{l,k}(i)`.
    pub fn indicator(&self, net: &NetworkModel, from: usize, to: usize) -> bool {
        from == to || net.link_index(from, to).is_some_and(|j| self.links[j].active)
    }
}
