//! Static network description: placement, neighborhoods, per-node signal
//! statistics and per-link channel parameters.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::rng;

/// Per-node data statistics and step size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeParams {
    pub position: [f64; 2],
    /// `sigma^2_{u,k}`; the covariance is `sigma^2_{u,k} I_M` unless
    /// `regressor_covariance` is given.
    pub regressor_variance: f64,
    /// Optional full Hermitian positive-definite covariance, row-major.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regressor_covariance: Option<Vec<Vec<Complex64>>>,
    pub noise_variance: f64,
    pub step_size: f64,
}

/// Parameters of the directed link `from -> to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    pub from: usize,
    pub to: usize,
    pub distance: f64,
    pub fading_variance: f64,
    pub link_noise_variance: f64,
    pub pilot_noise_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkModel {
    pub dim: usize,
    pub w_true: Vec<Complex64>,
    pub transmit_power: f64,
    pub range: f64,
    pub path_loss_exponent: f64,
    pub nodes: Vec<NodeParams>,
    /// Static neighborhoods `N_k`, sorted, each containing `k`.
    pub neighbors: Vec<Vec<usize>>,
    /// Every directed link `l -> k` with `l` in `N_k \ {k}`, sorted by `(to, from)`.
    pub links: Vec<LinkParams>,
    #[serde(default)]
    pub reciprocal_fading: bool,
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Neighborhoods by transmission range: `l` is in `N_k` iff `l == k` or the
/// two nodes are at most `range` apart.
pub fn build_topology(positions: &[[f64; 2]], range: f64) -> Result<Vec<Vec<usize>>> {
    if !(range > 0.0) {
        return Err(Error::Config(format!("transmission range must be positive, got {range}")));
    }
    for (i, a) in positions.iter().enumerate() {
        for (j, b) in positions.iter().enumerate().skip(i + 1) {
            if a == b {
                return Err(Error::Config(format!("nodes {i} and {j} share position {a:?}")));
            }
        }
    }
    Ok((0..positions.len())
        .map(|k| {
            (0..positions.len())
                .filter(|&l| l == k || distance(positions[l], positions[k]) <= range)
                .collect()
        })
        .collect())
}

/// Fading threshold `nu = (r / r_o)^alpha` of a link at distance `r`.
pub fn link_threshold(r: f64, range: f64, alpha: f64) -> Result<f64> {
    if !(r > 0.0 && range > 0.0 && alpha > 0.0) {
        return Err(Error::Config(format!(
            "link threshold needs positive r, r_o, alpha (got {r}, {range}, {alpha})"
        )));
    }
    Ok((r / range).powf(alpha))
}

/// True when the undirected neighbor graph is connected.
pub fn is_connected(neighbors: &[Vec<usize>]) -> bool {
    let n = neighbors.len();
    if n == 0 {
        return true;
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(k) = stack.pop() {
        for &l in &neighbors[k] {
            if !seen[l] {
                seen[l] = true;
                stack.push(l);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

impl NetworkModel {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Fading threshold of a link.
    pub fn nu(&self, link: &LinkParams) -> f64 {
        (link.distance / self.range).powf(self.path_loss_exponent)
    }

    /// Large-scale power gain `P_t / r^alpha`.
    pub fn path_gain(&self, link: &LinkParams) -> f64 {
        self.transmit_power / link.distance.powf(self.path_loss_exponent)
    }

    /// Mean received SNR of a link in dB: `sigma_h^2 P_t / (sigma_v^2 r^alpha)`.
    pub fn link_snr_db(&self, link: &LinkParams) -> f64 {
        10.0 * (link.fading_variance * self.path_gain(link) / link.link_noise_variance).log10()
    }

    pub fn is_connected(&self) -> bool {
        is_connected(&self.neighbors)
    }

    /// Index of the directed link `from -> to`, if it exists.
    pub fn link_index(&self, from: usize, to: usize) -> Option<usize> {
        self.links
            .binary_search_by(|l| (l.to, l.from).cmp(&(to, from)))
            .ok()
    }

    /// Regressor covariance `R_{u,k}`.
    pub fn regressor_cov(&self, k: usize) -> CMatrix {
        let node = &self.nodes[k];
        match &node.regressor_covariance {
            Some(rows) => CMatrix::from_fn(self.dim, self.dim, |i, j| rows[i][j]),
            None => CMatrix::identity(self.dim, self.dim) * Complex64::new(node.regressor_variance, 0.0),
        }
    }

    /// Largest eigenvalue of `R_{u,k}`.
    pub fn lambda_max(&self, k: usize) -> f64 {
        match self.nodes[k].regressor_covariance {
            None => self.nodes[k].regressor_variance,
            Some(_) => self
                .regressor_cov(k)
                .symmetric_eigenvalues()
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Lower Cholesky factor of `R_{u,k}`, used to draw regressors.
    pub fn regressor_factor(&self, k: usize) -> Result<CMatrix> {
        let r = self.regressor_cov(k);
        r.cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::Config(format!("regressor covariance of node {k} is not positive definite")))
    }

    pub fn set_step_size(&mut self, mu: f64) {
        for node in &mut self.nodes {
            node.step_size = mu;
        }
    }

    /// Multiply every link and pilot noise variance by `factor`.
    pub fn scale_link_noise(&mut self, factor: f64) {
        for link in &mut self.links {
            link.link_noise_variance *= factor;
            link.pilot_noise_variance *= factor;
        }
    }

    /// Structural and statistical checks.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if n == 0 || self.dim == 0 {
            return Err(Error::Config("network needs at least one node and M >= 1".into()));
        }
        if self.w_true.len() != self.dim {
            return Err(Error::Config(format!(
                "w_true has length {} but M = {}",
                self.w_true.len(),
                self.dim
            )));
        }
        if !(self.transmit_power > 0.0 && self.range > 0.0 && self.path_loss_exponent > 0.0) {
            return Err(Error::Config("P_t, r_o and alpha must be positive".into()));
        }
        for (k, node) in self.nodes.iter().enumerate() {
            if !(node.regressor_variance > 0.0) || !(node.noise_variance >= 0.0) || !(node.step_size > 0.0) {
                return Err(Error::Config(format!(
                    "node {k}: need sigma_u^2 > 0, sigma_v^2 >= 0, mu > 0"
                )));
            }
            if let Some(rows) = &node.regressor_covariance {
                if rows.len() != self.dim || rows.iter().any(|r| r.len() != self.dim) {
                    return Err(Error::Config(format!("node {k}: covariance must be {0}x{0}", self.dim)));
                }
                let r = self.regressor_cov(k);
                if (&r - r.adjoint()).norm() > 1e-10 * r.norm() {
                    return Err(Error::Config(format!("node {k}: covariance is not Hermitian")));
                }
                self.regressor_factor(k)?;
            }
        }
        let positions: Vec<[f64; 2]> = self.nodes.iter().map(|n| n.position).collect();
        let expected = build_topology(&positions, self.range)?;
        if expected != self.neighbors {
            return Err(Error::Config("neighbor sets do not match positions and range".into()));
        }
        let mut want = Vec::new();
        for k in 0..n {
            for &l in &self.neighbors[k] {
                if l != k {
                    want.push((k, l));
                }
            }
        }
        let have: Vec<(usize, usize)> = self.links.iter().map(|l| (l.to, l.from)).collect();
        if want != have {
            return Err(Error::Config("link list must cover every neighbor pair, sorted by (to, from)".into()));
        }
        for link in &self.links {
            let r = distance(positions[link.from], positions[link.to]);
            if (r - link.distance).abs() > 1e-9 || !(link.distance > 0.0) {
                return Err(Error::Config(format!("link {}->{}: bad distance", link.from, link.to)));
            }
            if !(link.fading_variance > 0.0) || !(link.link_noise_variance >= 0.0) || !(link.pilot_noise_variance >= 0.0) {
                return Err(Error::Config(format!("link {}->{}: bad variances", link.from, link.to)));
            }
        }
        Ok(())
    }
}

/// A closed interval `[lo, hi]` sampled uniformly.
pub type Range2 = [f64; 2];

/// Recipe for drawing a network. Explicit per-node values override the
/// corresponding random draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSpec {
    /// Seed used by [`NetworkSpec::build`].
    pub seed: u64,
    pub nodes: usize,
    pub dim: usize,
    pub w_true: Vec<Complex64>,
    pub transmit_power: f64,
    pub range: f64,
    pub path_loss_exponent: f64,
    pub step_size: f64,
    pub fading_variance: f64,
    /// `sigma^2_{u,k}` ~ U[lo, hi].
    pub regressor_variance: Range2,
    /// `10 log10 sigma^2_{v,k}` ~ U[lo, hi].
    pub noise_variance_db: Range2,
    /// Mean received link SNR in dB ~ U[lo, hi], drawn per directed link;
    /// the link noise variance follows from it.
    pub link_snr_db: Range2,
    pub reciprocal_fading: bool,
    /// Redraw placements until the neighbor graph is connected.
    pub require_connected: bool,
    pub positions: Option<Vec<[f64; 2]>>,
    pub regressor_variances: Option<Vec<f64>>,
    pub noise_variances: Option<Vec<f64>>,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            nodes: 10,
            dim: 2,
            w_true: vec![Complex64::new(2.0, 2.0), Complex64::new(-2.0, 2.0)],
            transmit_power: 1.0,
            range: 0.4,
            path_loss_exponent: 3.2,
            step_size: 0.01,
            fading_variance: 1.0,
            regressor_variance: [0.8, 1.2],
            noise_variance_db: [-25.0, -15.0],
            link_snr_db: [50.0, 60.0],
            reciprocal_fading: false,
            require_connected: true,
            positions: None,
            regressor_variances: None,
            noise_variances: None,
        }
    }
}

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;
const NETWORK_STREAM: u64 = 0x4E45_5457;

fn uniform(rng: &mut rng::StreamRng, r: Range2) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

impl NetworkSpec {
    fn check(&self) -> Result<()> {
        if self.nodes == 0 || self.dim == 0 {
            return Err(Error::Config("nodes and dim must be positive".into()));
        }
        if self.w_true.len() != self.dim {
            return Err(Error::Config(format!("w_true needs {} entries", self.dim)));
        }
        for (name, r) in [
            ("regressor_variance", self.regressor_variance),
            ("noise_variance_db", self.noise_variance_db),
            ("link_snr_db", self.link_snr_db),
        ] {
            if !(r[0] <= r[1]) {
                return Err(Error::Config(format!("{name}: lower bound exceeds upper bound")));
            }
        }
        if self.regressor_variance[0] <= 0.0 {
            return Err(Error::Config("regressor variances must be positive".into()));
        }
        for (name, len) in [
            ("positions", self.positions.as_ref().map(Vec::len)),
            ("regressor_variances", self.regressor_variances.as_ref().map(Vec::len)),
            ("noise_variances", self.noise_variances.as_ref().map(Vec::len)),
        ] {
            if let Some(len) = len {
                if len != self.nodes {
                    return Err(Error::Config(format!("{name} has {len} entries, expected {}", self.nodes)));
                }
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<NetworkModel> {
        self.sample(self.seed)
    }

    /// Draw a network. Deterministic in `seed`.
    ///
    /// Order of draws from one ChaCha8 stream: placements (x then y per node,
    /// repeated until connected when required), then `sigma^2_{u,k}` and
    /// `sigma^2_{v,k}` in dB for each node, then one link SNR per directed
    /// link in `(to, from)` order.
    pub fn sample(&self, seed: u64) -> Result<NetworkModel> {
        self.check()?;
        let mut rng = rng::stream(rng::splitmix64(seed), NETWORK_STREAM);
        let positions = match &self.positions {
            Some(p) => p.clone(),
            None => {
                let mut attempt = 0;
                loop {
                    let p: Vec<[f64; 2]> = (0..self.nodes)
                        .map(|_| [rng.random::<f64>(), rng.random::<f64>()])
                        .collect();
                    let nb = build_topology(&p, self.range)?;
                    if !self.require_connected || is_connected(&nb) {
                        break p;
                    }
                    attempt += 1;
                    if attempt >= MAX_PLACEMENT_ATTEMPTS {
                        return Err(Error::Config(format!(
                            "no connected placement found in {MAX_PLACEMENT_ATTEMPTS} attempts"
                        )));
                    }
                }
            }
        };
        let neighbors = build_topology(&positions, self.range)?;
        if self.require_connected && !is_connected(&neighbors) {
            return Err(Error::Config("the given positions do not form a connected network".into()));
        }
        let nodes: Vec<NodeParams> = positions
            .iter()
            .enumerate()
            .map(|(k, &position)| {
                let su = uniform(&mut rng, self.regressor_variance);
                let sv_db = uniform(&mut rng, self.noise_variance_db);
                NodeParams {
                    position,
                    regressor_variance: self.regressor_variances.as_ref().map_or(su, |v| v[k]),
                    regressor_covariance: None,
                    noise_variance: self
                        .noise_variances
                        .as_ref()
                        .map_or(10f64.powf(sv_db / 10.0), |v| v[k]),
                    step_size: self.step_size,
                }
            })
            .collect();
        let mut links = Vec::new();
        for k in 0..self.nodes {
            for &l in &neighbors[k] {
                if l == k {
                    continue;
                }
                let r = distance(positions[l], positions[k]);
                let snr_db = uniform(&mut rng, self.link_snr_db);
                let gain = self.transmit_power / r.powf(self.path_loss_exponent);
                let noise = self.fading_variance * gain / 10f64.powf(snr_db / 10.0);
                links.push(LinkParams {
                    from: l,
                    to: k,
                    distance: r,
                    fading_variance: self.fading_variance,
                    link_noise_variance: noise,
                    pilot_noise_variance: noise,
                });
            }
        }
        let model = NetworkModel {
            dim: self.dim,
            w_true: self.w_true.clone(),
            transmit_power: self.transmit_power,
            range: self.range,
            path_loss_exponent: self.path_loss_exponent,
            nodes,
            neighbors,
            links,
            reciprocal_fading: self.reciprocal_fading,
        };
        model.validate()?;
        Ok(model)
    }
}

/// The ten-node, `M = 2` network of the reference experiments.
pub fn sample_default_network(seed: u64) -> Result<NetworkModel> {
    NetworkSpec::default().sample(seed)
}

/// Dense real matrix of pairwise distances.
pub fn distance_matrix(positions: &[[f64; 2]]) -> DMatrix<f64> {
    DMatrix::from_fn(positions.len(), positions.len(), |i, j| distance(positions[i], positions[j]))
}
