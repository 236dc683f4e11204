//! Single-realization simulator for ATC and CTA diffusion over fading links.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{link_constants, ChannelDraw, CsiMode, LinkConst, LinkStreams};
use crate::combination::GammaWeights;
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::network::NetworkModel;
use crate::rng::{self, complex_normal, LinkStream};

/// Norm above which a node estimate counts as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    IdealAtc,
    PerfectCsi,
    PilotCsi(usize),
    NonCoop,
    NoEqualization,
}

impl Mode {
    pub fn label(self) -> String {
        match self {
            Mode::IdealAtc => "ideal_atc".into(),
            Mode::PerfectCsi => "perfect_csi".into(),
            Mode::PilotCsi(n) => format!("pilot_csi_{n}"),
            Mode::NonCoop => "non_coop".into(),
            Mode::NoEqualization => "no_equalization".into(),
        }
    }

    pub fn csi(self) -> CsiMode {
        match self {
            Mode::IdealAtc | Mode::NonCoop => CsiMode::Ideal,
            Mode::PerfectCsi => CsiMode::Perfect,
            Mode::PilotCsi(pilots) => CsiMode::Pilot { pilots },
            Mode::NoEqualization => CsiMode::Unequalized,
        }
    }

    /// Modes whose total divergence is an error rather than the expected outcome.
    pub fn is_required(self) -> bool {
        self != Mode::NoEqualization
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(&self.label())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ideal_atc" => Mode::IdealAtc,
            "perfect_csi" => Mode::PerfectCsi,
            "non_coop" => Mode::NonCoop,
            "no_equalization" => Mode::NoEqualization,
            _ => match s.strip_prefix("pilot_csi_").map(str::parse::<usize>) {
                Some(Ok(n)) if n >= 1 => Mode::PilotCsi(n),
                _ => return Err(Error::Config(format!("unknown mode '{s}'"))),
            },
        })
    }
}

impl Serialize for Mode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for Mode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Atc,
    Cta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub iterations: usize,
    pub strategy: Strategy,
    /// Average the network error vector over iterations `>= from`.
    pub mean_error_from: Option<usize>,
}

impl RunOptions {
    pub fn new(iterations: usize) -> Self {
        Self { iterations, strategy: Strategy::Atc, mean_error_from: None }
    }
}

/// Trajectory of one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: Mode,
    pub strategy: Strategy,
    pub run: u64,
    pub seed: u64,
    pub nodes: usize,
    /// `|w_o - w_{k,i}|^2`, row-major by iteration.
    pub msd: Vec<f64>,
    /// `|u_{k,i} (w_o - w_{k,i-1})|^2`, row-major by iteration.
    pub emse: Vec<f64>,
    /// First iteration at which some node blew up; the record stops before it.
    pub diverged_at: Option<usize>,
    /// Time-averaged `w_o - w_{k,i}` stacked over nodes.
    pub mean_error: Option<Vec<Complex64>>,
}

impl RunRecord {
    pub fn completed(&self) -> usize {
        self.msd.len() / self.nodes
    }

    pub fn node_msd(&self, i: usize, k: usize) -> f64 {
        self.msd[i * self.nodes + k]
    }

    pub fn network_msd(&self, i: usize) -> f64 {
        self.msd[i * self.nodes..(i + 1) * self.nodes].iter().sum::<f64>() / self.nodes as f64
    }

    pub fn network_emse(&self, i: usize) -> f64 {
        self.emse[i * self.nodes..(i + 1) * self.nodes].iter().sum::<f64>() / self.nodes as f64
    }
}

/// LMS adaptation `psi = w + mu u^* (d - u w)`.
pub fn adapt_step(w_prev: &[Complex64], u: &[Complex64], d: Complex64, mu: f64) -> Vec<Complex64> {
    let mut out = w_prev.to_vec();
    adapt_in_place(&mut out, u, d, mu);
    out
}

fn adapt_in_place(w: &mut [Complex64], u: &[Complex64], d: Complex64, mu: f64) {
    let err = d - dot(u, w);
    for (wj, uj) in w.iter_mut().zip(u) {
        *wj += uj.conj() * err * mu;
    }
}

fn dot(u: &[Complex64], w: &[Complex64]) -> Complex64 {
    u.iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Incoming neighbors of each node in ascending order; `None` marks the self term.
fn incoming(net: &NetworkModel) -> Vec<Vec<(usize, Option<usize>)>> {
    (0..net.num_nodes())
        .map(|k| {
            net.neighbors[k]
                .iter()
                .map(|&l| (l, if l == k { None } else { net.link_index(l, k) }))
                .collect()
        })
        .collect()
}

/// Combination step for every node.
///
/// `payloads` holds the transmitted vectors (`psi_{l,i}` for ATC, `w_{l,i-1}`
/// for CTA), `link_noise` one standard circular Gaussian `M`-vector per link
/// (scaled here by the link noise standard deviation). `draw` is required
/// for the wireless modes and ignored otherwise.
pub fn combine_step(
    net: &NetworkModel,
    weights: &GammaWeights,
    mode: Mode,
    draw: Option<&ChannelDraw>,
    payloads: &[Complex64],
    link_noise: &[Complex64],
    out: &mut [Complex64],
) -> Result<()> {
    let consts = link_constants(net);
    let inc = incoming(net);
    combine_with(net, weights, &consts, &inc, mode, draw, payloads, link_noise, out)
}

#[allow(clippy::too_many_arguments)]
fn combine_with(
    net: &NetworkModel,
    weights: &GammaWeights,
    consts: &[LinkConst],
    inc: &[Vec<(usize, Option<usize>)>],
    mode: Mode,
    draw: Option<&ChannelDraw>,
    payloads: &[Complex64],
    link_noise: &[Complex64],
    out: &mut [Complex64],
) -> Result<()> {
    let m = net.dim;
    if mode == Mode::NonCoop {
        out.copy_from_slice(payloads);
        return Ok(());
    }
    let draw = match (mode, draw) {
        (Mode::IdealAtc, _) => None,
        (_, Some(d)) => Some(d),
        (_, None) => return Err(Error::Contract(format!("{mode} needs a channel draw"))),
    };
    for (k, nb) in inc.iter().enumerate() {
        let active = |j: Option<usize>| match (draw, j) {
            (_, None) => true,
            (None, Some(_)) => true,
            (Some(d), Some(j)) => d.links[j].active,
        };
        let mut off = 0.0;
        for &(l, j) in nb {
            if j.is_some() && active(j) {
                off += weights.gamma[(l, k)];
            }
        }
        let self_weight = 1.0 - off;
        let acc = &mut out[k * m..(k + 1) * m];
        acc.iter_mut().for_each(|x| *x = Complex64::new(0.0, 0.0));
        for &(l, j) in nb {
            if !active(j) {
                continue;
            }
            let src = &payloads[l * m..(l + 1) * m];
            let (a, kappa, noise_gain, noise) = match (j, draw) {
                (None, _) => (self_weight, Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), None),
                (Some(_), None) => (weights.gamma[(l, k)], Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), None),
                (Some(j), Some(d)) => {
                    let c = &consts[j];
                    let link = &d.links[j];
                    let sd = c.noise_var.sqrt();
                    let z = &link_noise[j * m..(j + 1) * m];
                    if mode == Mode::NoEqualization {
                        (weights.gamma[(l, k)], link.fading * c.path_gain.sqrt(), Complex64::new(sd, 0.0), Some(z))
                    } else {
                        let g = crate::channel::equalizer_gain(link.estimate, c.nu, c.path_gain, false)?;
                        // g (h sqrt(P/r^a) psi + v) with the h_hat part cancelled exactly.
                        let kappa = Complex64::new(1.0, 0.0) + g * c.path_gain.sqrt() * (link.fading - link.estimate);
                        (weights.gamma[(l, k)], kappa, g * sd, Some(z))
                    }
                }
            };
            match noise {
                None => {
                    for (x, s) in acc.iter_mut().zip(src) {
                        *x += a * (kappa * s);
                    }
                }
                Some(z) => {
                    for ((x, s), zz) in acc.iter_mut().zip(src).zip(z) {
                        *x += a * (kappa * s + noise_gain * zz);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Reusable simulator for one network, weight set and mode.
pub struct Simulator<'a> {
    net: &'a NetworkModel,
    weights: &'a GammaWeights,
    mode: Mode,
    consts: Vec<LinkConst>,
    inc: Vec<Vec<(usize, Option<usize>)>>,
    factors: Vec<Option<CMatrix>>,
    noise_sd: Vec<f64>,
}

impl<'a> Simulator<'a> {
    pub fn new(net: &'a NetworkModel, weights: &'a GammaWeights, mode: Mode) -> Result<Self> {
        net.validate()?;
        mode.csi().check()?;
        if weights.neighbors != net.neighbors {
            return Err(Error::Config("combination weights were built for another topology".into()));
        }
        let factors = (0..net.num_nodes())
            .map(|k| match net.nodes[k].regressor_covariance {
                None => Ok(None),
                Some(_) => net.regressor_factor(k).map(Some),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            net,
            weights,
            mode,
            consts: link_constants(net),
            inc: incoming(net),
            factors,
            noise_sd: net.nodes.iter().map(|n| n.noise_variance.sqrt()).collect(),
        })
    }

    fn draw_regressor(&self, k: usize, rng: &mut rng::StreamRng, u: &mut [Complex64]) {
        let m = self.net.dim;
        match &self.factors[k] {
            None => {
                let sd = self.net.nodes[k].regressor_variance.sqrt();
                for x in u.iter_mut() {
                    *x = (complex_normal(rng, 1.0) * sd).conj();
                }
            }
            Some(l) => {
                let z: Vec<Complex64> = (0..m).map(|_| complex_normal(rng, 1.0)).collect();
                for (r, x) in u.iter_mut().enumerate() {
                    let v: Complex64 = (0..m).map(|c| l[(r, c)] * z[c]).sum();
                    *x = v.conj();
                }
            }
        }
    }

    /// Run one realization. `master_seed` and `run` fix every random draw.
    pub fn run(&self, opts: &RunOptions, master_seed: u64, run: u64) -> Result<RunRecord> {
        if opts.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        let net = self.net;
        let (n, m) = (net.num_nodes(), net.dim);
        let key = rng::run_key(master_seed, run);
        let mut data = rng::stream(key, rng::DATA_STREAM);
        let mut streams: Vec<LinkStreams> = (0..net.links.len())
            .map(|j| LinkStreams {
                fading: rng::link_stream(key, j, LinkStream::Fading),
                pilot: rng::link_stream(key, j, LinkStream::Pilot),
                noise: rng::link_stream(key, j, LinkStream::Noise),
            })
            .collect();
        let wireless = !matches!(self.mode, Mode::IdealAtc | Mode::NonCoop);
        let csi = self.mode.csi();

        let w_true = &net.w_true;
        let mut w = vec![Complex64::new(0.0, 0.0); n * m];
        let mut payload = vec![Complex64::new(0.0, 0.0); n * m];
        let mut next = vec![Complex64::new(0.0, 0.0); n * m];
        let mut noise = vec![Complex64::new(0.0, 0.0); net.links.len() * m];
        let mut u = vec![Complex64::new(0.0, 0.0); m];
        let mut msd = Vec::with_capacity(opts.iterations * n);
        let mut emse = Vec::with_capacity(opts.iterations * n);
        let mut mean_acc = opts.mean_error_from.map(|_| vec![Complex64::new(0.0, 0.0); n * m]);
        let mut mean_count = 0usize;
        let mut diverged_at = None;

        for i in 0..opts.iterations {
            let mut adapt = |src: &[Complex64], dst: &mut [Complex64], emse: &mut Vec<f64>, this: &Self| {
                for k in 0..n {
                    this.draw_regressor(k, &mut data, &mut u);
                    let v = complex_normal(&mut data, 1.0) * this.noise_sd[k];
                    let prev = &w[k * m..(k + 1) * m];
                    let apriori: Complex64 = u.iter().zip(w_true.iter().zip(prev)).map(|(a, (o, p))| a * (o - p)).sum();
                    emse.push(apriori.norm_sqr());
                    let d = dot(&u, w_true) + v;
                    let dst_k = &mut dst[k * m..(k + 1) * m];
                    dst_k.copy_from_slice(&src[k * m..(k + 1) * m]);
                    adapt_in_place(dst_k, &u, d, net.nodes[k].step_size);
                }
            };
            let channel = |streams: &mut [LinkStreams], noise: &mut [Complex64]| -> Option<ChannelDraw> {
                if !wireless {
                    return None;
                }
                let d = ChannelDraw::draw_with(net, &self.consts, csi, streams);
                for (j, s) in streams.iter_mut().enumerate() {
                    for x in &mut noise[j * m..(j + 1) * m] {
                        *x = complex_normal(&mut s.noise, 1.0);
                    }
                }
                Some(d)
            };
            match opts.strategy {
                Strategy::Atc => {
                    adapt(&w, &mut payload, &mut emse, self);
                    let d = channel(&mut streams, &mut noise);
                    combine_with(net, self.weights, &self.consts, &self.inc, self.mode, d.as_ref(), &payload, &noise, &mut next)?;
                }
                Strategy::Cta => {
                    let d = channel(&mut streams, &mut noise);
                    combine_with(net, self.weights, &self.consts, &self.inc, self.mode, d.as_ref(), &w, &noise, &mut payload)?;
                    adapt(&payload, &mut next, &mut emse, self);
                }
            }
            std::mem::swap(&mut w, &mut next);

            let blown = (0..n).any(|k| {
                let norm2: f64 = w[k * m..(k + 1) * m].iter().map(|x| x.norm_sqr()).sum();
                !norm2.is_finite() || norm2 > DIVERGENCE_THRESHOLD * DIVERGENCE_THRESHOLD
            });
            if blown {
                emse.truncate(i * n);
                diverged_at = Some(i);
                break;
            }
            for k in 0..n {
                msd.push(
                    w[k * m..(k + 1) * m]
                        .iter()
                        .zip(w_true)
                        .map(|(x, o)| (o - x).norm_sqr())
                        .sum(),
                );
            }
            if let (Some(acc), Some(from)) = (mean_acc.as_mut(), opts.mean_error_from) {
                if i >= from {
                    for (j, a) in acc.iter_mut().enumerate() {
                        *a += w_true[j % m] - w[j];
                    }
                    mean_count += 1;
                }
            }
        }
        let mean_error = mean_acc.map(|acc| {
            let c = mean_count.max(1) as f64;
            acc.into_iter().map(|x| x / c).collect()
        });
        Ok(RunRecord {
            mode: self.mode,
            strategy: opts.strategy,
            run,
            seed: master_seed,
            nodes: n,
            msd,
            emse,
            diverged_at,
            mean_error,
        })
    }
}

/// Build a simulator and run one realization.
pub fn run_realization(
    net: &NetworkModel,
    weights: &GammaWeights,
    mode: Mode,
    opts: &RunOptions,
    master_seed: u64,
    run: u64,
) -> Result<RunRecord> {
    Simulator::new(net, weights, mode)?.run(opts, master_seed, run)
}
