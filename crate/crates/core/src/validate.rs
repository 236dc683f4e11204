//! Cross-module oracle checks run by `fdiff validate`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{draw_fading, equalizer_gain, pilot_estimate, pilot_lambda, success_probability};
use crate::combination::{GammaRule, GammaWeights};
use crate::linalg::{self, CMatrix};
use crate::network::NetworkSpec;
use crate::rng::{self, complex_normal};
use crate::theory::{barf_gaussian, expected_a_kron_a, exp_int_e1, link_moments_mc, taylor_a2g2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Observed error in the unit of `tolerance`.
    pub error: f64,
    pub tolerance: f64,
    /// Advisory checks are reported but never fail the suite.
    pub advisory: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidateOptions {
    pub seed: u64,
    /// Monte Carlo draws for the sampled checks.
    pub draws: usize,
    /// Multiplies every tolerance.
    pub tolerance_scale: f64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self { seed: 0x5EED, draws: 1_000_000, tolerance_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateReport {
    pub checks: Vec<CheckResult>,
}

impl ValidateReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed || c.advisory)
    }
}

fn check(name: &str, error: f64, tolerance: f64, detail: String) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed: error.is_finite() && error <= tolerance,
        error,
        tolerance,
        advisory: false,
        detail,
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn random_matrix(r: usize, c: usize, rng: &mut rng::StreamRng) -> CMatrix {
    CMatrix::from_fn(r, c, |_, _| complex_normal(rng, 1.0))
}

fn bvec_identity(rng: &mut rng::StreamRng) -> CheckResult {
    let (bs, n) = (2, 3);
    let a = random_matrix(n * bs, n * bs, rng);
    let b = random_matrix(n * bs, n * bs, rng);
    let c = random_matrix(n * bs, n * bs, rng);
    let lhs = linalg::bvec(&(&a * &c * &b), bs).expect("square partition");
    let rhs = linalg::block_kron(&b.transpose(), &a, bs).expect("square partition")
        * linalg::bvec(&c, bs).expect("square partition");
    let err = (&lhs - &rhs).norm() / lhs.norm();
    check("bvec_identity", err, 1e-12, "bvec(A C B) vs (B^T (x)_b A) bvec(C)".into())
}

fn block_kron_mixed(rng: &mut rng::StreamRng) -> CheckResult {
    let (n, m) = (3, 2);
    let x = random_matrix(n, n, rng);
    let y = random_matrix(n, n, rng);
    let im = CMatrix::identity(m, m);
    let lhs = linalg::block_kron(&linalg::kron(&x, &im), &linalg::kron(&y, &im), m).expect("partition");
    let rhs = linalg::kron(&linalg::kron(&x, &y), &CMatrix::identity(m * m, m * m));
    let err = (&lhs - &rhs).norm() / rhs.norm();
    check("block_kron_mixed_product", err, 1e-12, "(X (x) I) (x)_b (Y (x) I) vs (X (x) Y) (x) I".into())
}

/// Closed-form `E[A (x) A]` against all `2^L` activity patterns of a
/// fully connected three-node network.
fn activity_enumeration() -> CheckResult {
    let n = 3;
    let neighbors: Vec<Vec<usize>> = (0..n).map(|_| (0..n).collect()).collect();
    let w = GammaWeights::new(GammaRule::Metropolis, &neighbors).expect("valid weights");
    let probs = [0.5, 0.25, 0.75, 0.125, 0.625, 0.375];
    let mut p = DMatrix::from_element(n, n, 1.0);
    let links: Vec<(usize, usize)> = (0..n).flat_map(|k| (0..n).filter(move |&l| l != k).map(move |l| (l, k))).collect();
    for (j, &(l, k)) in links.iter().enumerate() {
        p[(l, k)] = probs[j];
    }
    let closed = expected_a_kron_a(&w.gamma, &p);
    let mut brute = CMatrix::zeros(n * n, n * n);
    for mask in 0u32..(1 << links.len()) {
        let mut weight = 1.0;
        let mut active: Vec<Vec<usize>> = (0..n).map(|k| vec![k]).collect();
        for (j, &(l, k)) in links.iter().enumerate() {
            if mask >> j & 1 == 1 {
                weight *= p[(l, k)];
                active[k].push(l);
            } else {
                weight *= 1.0 - p[(l, k)];
            }
        }
        let a = linalg::complexify(&w.dynamic_weights(&active).expect("valid pattern"));
        brute += linalg::kron(&a, &a) * Complex64::new(weight, 0.0);
    }
    let err = (&closed - &brute).iter().map(|z| z.norm()).fold(0.0, f64::max);
    check("activity_kron_enumeration", err, 1e-12, "64 link-activity patterns".into())
}

fn fbar_scalar(beta: f64) -> CheckResult {
    let (mu, s2) = (0.05, 1.3);
    let r = vec![CMatrix::from_element(1, 1, Complex64::new(s2, 0.0))];
    let f = barf_gaussian(&r, &[mu], beta).expect("hermitian")[(0, 0)].re;
    let expect = 1.0 - 2.0 * mu * s2 + (beta + 1.0) * mu * mu * s2 * s2;
    let name = if beta == 2.0 { "fbar_scalar_real" } else { "fbar_scalar_complex" };
    check(name, (f - expect).abs(), 1e-10, format!("{f:.15} vs {expect:.15}"))
}

/// Sampled `E[(I - M R_i)^T (x)_b (I - M R_i)]` for three nodes with `M = 2`.
fn fbar_sampled(draws: usize, rng: &mut rng::StreamRng) -> CheckResult {
    let m = 2;
    let mus = [0.2, 0.15, 0.1];
    let covs: Vec<CMatrix> = [(1.0, 0.3), (0.8, -0.2), (1.2, 0.5)]
        .iter()
        .map(|&(d, o)| {
            CMatrix::from_row_slice(2, 2, &[
                Complex64::new(d, 0.0),
                Complex64::new(o, 0.2 * o),
                Complex64::new(o, -0.2 * o),
                Complex64::new(d * 0.9, 0.0),
            ])
        })
        .collect();
    let chols: Vec<CMatrix> = covs
        .iter()
        .map(|c| c.clone().cholesky().expect("positive definite").l())
        .collect();
    let closed = barf_gaussian(&covs, &mus, 1.0).expect("hermitian");
    let mut blocks = vec![CMatrix::zeros(m * m, m * m); 3];
    let mut means = vec![CMatrix::zeros(m, m); 3];
    for _ in 0..draws {
        for k in 0..3 {
            let z = CMatrix::from_fn(m, 1, |_, _| complex_normal(rng, 1.0));
            let x = &chols[k] * z;
            let h = CMatrix::identity(m, m) - &x * x.adjoint() * Complex64::new(mus[k], 0.0);
            blocks[k] += linalg::kron(&h.transpose(), &h);
            means[k] += h;
        }
    }
    let scale = Complex64::new(1.0 / draws as f64, 0.0);
    let h: Vec<CMatrix> = means.iter().map(|x| x * scale).collect();
    let mut brute = CMatrix::zeros(9 * m * m, 9 * m * m);
    for k in 0..3 {
        for l in 0..3 {
            let b = if k == l { &blocks[k] * scale } else { linalg::kron(&h[k].transpose(), &h[l]) };
            let pos = (k * 3 + l) * m * m;
            brute.view_mut((pos, pos), (m * m, m * m)).copy_from(&b);
        }
    }
    // Compare the deviation from the identity so the check sees the step-size terms.
    let eye = CMatrix::identity(closed.nrows(), closed.nrows());
    let err = (&closed - &brute).norm() / (&closed - &eye).norm();
    check("fbar_sampled", err, 0.01, format!("{draws} draws, deviation from I compared"))
}

struct LinkCase {
    gain: f64,
    noise: f64,
    nu: f64,
    pilots: usize,
}

impl LinkCase {
    fn q(&self) -> f64 {
        self.noise / (self.gain * self.pilots as f64)
    }

    fn lambda(&self) -> f64 {
        pilot_lambda(1.0, self.gain, self.noise, self.pilots)
    }
}

#[derive(Default)]
struct LinkSample {
    on: f64,
    err_energy: f64,
    z_on: f64,
    g2: f64,
    gv: Complex64,
    gv2: f64,
}

fn sample_link(case: &LinkCase, draws: usize, rng: &mut rng::StreamRng) -> LinkSample {
    let mut s = LinkSample::default();
    for _ in 0..draws {
        let h = draw_fading(1.0, rng);
        let hh = pilot_estimate(h, case.gain, case.pilots, case.noise, rng).expect("pilots >= 1");
        s.err_energy += (hh - h).norm_sqr();
        if let Ok(g) = equalizer_gain(hh, case.nu, case.gain, false) {
            let x = g * case.gain.sqrt() * (hh - h);
            s.on += 1.0;
            s.z_on += hh.norm_sqr();
            s.g2 += g.norm_sqr();
            s.gv += x;
            s.gv2 += x.norm_sqr();
        }
    }
    let d = draws as f64;
    s.z_on /= s.on.max(1.0);
    s.on /= d;
    s.err_energy /= d;
    s.g2 /= d;
    s.gv /= d;
    s.gv2 /= d;
    s
}

fn link_checks(draws: usize, rng: &mut rng::StreamRng, out: &mut Vec<CheckResult>) {
    // Exponent 3.2, distance 0.25, range 0.4, unit power; link SNR 20 dB.
    let gain = 0.25f64.powf(-3.2);
    let case = LinkCase {
        gain,
        noise: gain / 100.0,
        nu: 0.25f64.powf(3.2) / 0.4f64.powf(3.2),
        pilots: 1,
    };
    let (lam, q, nu) = (case.lambda(), case.q(), case.nu);
    let p = success_probability(nu, lam);
    let s = sample_link(&case, draws, rng);
    let e1 = exp_int_e1(lam * nu);
    out.push(check(
        "gating_frequency",
        (s.on - p).abs(),
        0.01,
        format!("empirical {:.5} vs exp(-lambda nu) {p:.5}", s.on),
    ));
    out.push(check(
        "pilot_error_variance",
        rel(s.err_energy, q),
        0.01,
        format!("empirical {:.4e} vs {q:.4e}", s.err_energy),
    ));
    out.push(check(
        "gated_estimate_mean",
        rel(s.z_on, 1.0 / lam + nu),
        0.01,
        format!("E[|h_hat|^2 | gated] {:.5} vs {:.5}", s.z_on, 1.0 / lam + nu),
    ));
    let g2 = lam / gain * e1;
    out.push(check("inverse_gain_moment", rel(s.g2, g2), 0.01, format!("{:.5e} vs {g2:.5e}", s.g2)));
    let gv = p * q * lam;
    out.push(check(
        "equalized_error_mean",
        (s.gv - gv).norm() / gv,
        0.02,
        format!("{:.5e} vs {gv:.5e}", s.gv.re),
    ));
    let gv2 = (q * lam).powi(2) * p + q * lam * lam * e1;
    out.push(check("equalized_error_energy", rel(s.gv2, gv2), 0.02, format!("{:.5e} vs {gv2:.5e}", s.gv2)));

    // The theory module's sampler on a two-node network with the same link.
    let spec = NetworkSpec {
        nodes: 2,
        positions: Some(vec![[0.0, 0.0], [0.25, 0.0]]),
        link_snr_db: [20.0, 20.0],
        ..NetworkSpec::default()
    };
    let net = spec.build().expect("two-node network");
    let link = &net.links[0];
    let lm = link_moments_mc(&net, link, Some(1), draws, rng);
    let lam_t = lm.lambda;
    let want = lam_t / lm.path_gain * exp_int_e1(lam_t * lm.nu);
    out.push(check(
        "link_moments_closed_form",
        rel(lm.p * lm.g2, want),
        0.01,
        format!("p E[|g|^2 | gated] {:.5e} vs {want:.5e}", lm.p * lm.g2),
    ));

    // Second-order expansion of the inverse-gain moment, one pilot.
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    for snr_db in [10.0, 20.0, 30.0] {
        let spec = NetworkSpec { link_snr_db: [snr_db, snr_db], ..spec.clone() };
        let net = spec.build().expect("two-node network");
        let link = &net.links[0];
        let (nu, c) = (net.nu(link), net.path_gain(link));
        let lam = pilot_lambda(link.fading_variance, c, link.pilot_noise_variance, 1);
        let p = success_probability(nu, lam);
        let exact = lam / c * exp_int_e1(lam * nu);
        let approx = taylor_a2g2(1.0, p, lam, nu, c);
        let e = rel(approx, exact);
        worst = worst.max(e);
        detail.push_str(&format!("{snr_db} dB: {approx:.4e} vs {exact:.4e}; "));
    }
    let mut t = check("taylor_inverse_gain", worst, 0.10, detail.trim_end_matches("; ").to_string());
    t.advisory = true;
    out.push(t);
}

/// Run every check.
pub fn run_suite(opts: &ValidateOptions) -> ValidateReport {
    let mut rng = rng::stream(rng::splitmix64(opts.seed), 0x56414C);
    let mut checks = vec![
        bvec_identity(&mut rng),
        block_kron_mixed(&mut rng),
        activity_enumeration(),
        fbar_scalar(2.0),
        fbar_scalar(1.0),
        fbar_sampled(opts.draws, &mut rng),
    ];
    link_checks(opts.draws, &mut rng, &mut checks);
    for c in &mut checks {
        c.tolerance *= opts.tolerance_scale;
        c.passed = c.error.is_finite() && c.error <= c.tolerance;
    }
    ValidateReport { checks }
}
