mod common;

use common::{c, e1_quadrature, enumerate_a_kron_a, line_network, max_abs_diff};
use fading_diffusion::channel::{pilot_lambda, success_probability, ChannelDraw, CsiMode, LinkStreams};
use fading_diffusion::combination::{GammaRule, GammaWeights};
use fading_diffusion::engine::{Mode, RunOptions, Simulator};
use fading_diffusion::linalg::{self, CMatrix};
use fading_diffusion::network::{sample_default_network, NetworkModel};
use fading_diffusion::rng::{self, complex_normal, LinkStream};
use fading_diffusion::theory::{
    all_link_moments, barf_gaussian, barf_small_step, exp_int_e1, expected_a_kron_a, mean_step_bounds,
    ms_step_bounds, FbarVariant, RvMethod, TheoryConfig, TheoryModel,
};
use nalgebra::DMatrix;
use num_complex::Complex64;

fn weights(net: &NetworkModel) -> GammaWeights {
    GammaWeights::new(GammaRule::RelativeDegree, &net.neighbors).unwrap()
}

fn cfg(samples: usize) -> TheoryConfig {
    TheoryConfig { samples, ..TheoryConfig::default() }
}

fn p_matrix(net: &NetworkModel, pilots: Option<usize>) -> DMatrix<f64> {
    let n = net.num_nodes();
    DMatrix::from_fn(n, n, |l, k| {
        net.link_index(l, k).map_or(1.0, |j| {
            let link = &net.links[j];
            let (noise, np) = pilots.map_or((0.0, 1), |np| (link.pilot_noise_variance, np));
            let lam = pilot_lambda(link.fading_variance, net.path_gain(link), noise, np);
            success_probability(net.nu(link), lam)
        })
    })
}

#[test]
fn e1_matches_quadrature() {
    for x in [1e-3, 0.05, 0.3, 1.0, 1.5, 4.0, 12.0] {
        let a = exp_int_e1(x);
        let b = e1_quadrature(x);
        assert!((a / b - 1.0).abs() < 1e-9, "E1({x}): {a} vs {b}");
    }
    assert!((exp_int_e1(1.0) - 0.219_383_934_395_520_3).abs() < 1e-15);
}

#[test]
fn link_moments_match_closed_forms() {
    let net = line_network(15.0);
    for pilots in [None, Some(1), Some(2)] {
        let lms = all_link_moments(&net, pilots, 400_000, 77);
        for (link, m) in net.links.iter().zip(&lms) {
            let cg = net.path_gain(link);
            let q = pilots.map_or(0.0, |n| link.pilot_noise_variance / (cg * n as f64));
            let lam = 1.0 / (link.fading_variance + q);
            assert!((m.lambda - lam).abs() < 1e-12 * lam);
            let e1 = e1_quadrature(lam * m.nu);
            let g2 = lam / cg * e1;
            assert!((m.p * m.g2 - g2).abs() <= 4.0 * m.p * m.se_g2 + 1e-3 * g2, "{pilots:?} g2");
            let gv = m.p * q * lam;
            assert!((m.p * m.gv - gv).norm() <= 4.0 * m.p * m.se_gv + 1e-12, "{pilots:?} gv");
            let gv2 = (q * lam).powi(2) * m.p + q * link.fading_variance * lam * lam * e1;
            assert!((m.p * m.gv2 - gv2).abs() <= 4.0 * m.p * m.se_gv2 + 1e-12, "{pilots:?} gv2");
        }
    }
}

#[test]
fn second_moment_of_weights_matches_enumeration() {
    let net = line_network(20.0);
    let w = GammaWeights::new(GammaRule::Metropolis, &net.neighbors).unwrap();
    let p = DMatrix::from_fn(4, 4, |l, k| if l == k { 1.0 } else { 0.2 + 0.1 * (l + 2 * k) as f64 % 0.7 });
    let closed = expected_a_kron_a(&w.gamma, &p);
    let brute = linalg::complexify(&enumerate_a_kron_a(&w.gamma, &p));
    assert!(max_abs_diff(&closed, &brute) < 1e-12);
}

#[test]
fn perfect_csi_model_structure() {
    let net = sample_default_network(1).unwrap();
    let w = weights(&net);
    let m = TheoryModel::build(&net, &w, Mode::PerfectCsi, &cfg(50_000)).unwrap();
    assert!(m.e.iter().all(|z| z.norm() == 0.0));
    assert_eq!(m.mean_bias().unwrap().norm(), 0.0);
    let p = p_matrix(&net, None);
    assert!(max_abs_diff(&m.exx, &expected_a_kron_a(&w.gamma, &p)) < 1e-12);
    assert!(m.rho_b < 1.0 && m.rho_f < 1.0);
    assert!(m.condition_number().is_finite() && m.condition_number() >= 1.0);
    // D factors through the identity of size M^2.
    let d = linalg::kron(&m.exx, &CMatrix::identity(4, 4));
    assert!(max_abs_diff(&d, &m.d) == 0.0);
}

#[test]
fn ideal_links_reduce_to_standard_diffusion() {
    let net = sample_default_network(1).unwrap();
    let w = weights(&net);
    let m = TheoryModel::build(&net, &w, Mode::IdealAtc, &TheoryConfig::default()).unwrap();
    let a = linalg::complexify(&w.static_matrix());
    assert!(max_abs_diff(&m.exx, &linalg::kron(&a, &a)) < 1e-15);
    let f = &m.fbar * linalg::kron(&linalg::kron(&a, &a), &CMatrix::identity(4, 4));
    assert!(max_abs_diff(&f, &m.f) < 1e-15);
    assert_eq!(m.mean_bias().unwrap().norm(), 0.0);
    assert!(m.rv.iter().all(|z| z.norm() == 0.0));
}

/// `E[X (x) conj(X)]` from raw channel draws against the assembled moments.
#[test]
fn weight_error_moments_match_channel_draws() {
    let net = line_network(12.0);
    let w = weights(&net);
    let n = net.num_nodes();
    let model = TheoryModel::build(&net, &w, Mode::PilotCsi(1), &cfg(2_000_000)).unwrap();
    let key = rng::run_key(31, 0);
    let mut st: Vec<LinkStreams> = (0..net.links.len())
        .map(|j| LinkStreams {
            fading: rng::link_stream(key, j, LinkStream::Fading),
            pilot: rng::link_stream(key, j, LinkStream::Pilot),
            noise: rng::link_stream(key, j, LinkStream::Noise),
        })
        .collect();
    let draws = 200_000;
    let mut sum = CMatrix::zeros(n * n, n * n);
    let mut sq = DMatrix::<f64>::zeros(n * n, n * n);
    let mut xmean = CMatrix::zeros(n, n);
    for _ in 0..draws {
        let d = ChannelDraw::draw(&net, CsiMode::Pilot { pilots: 1 }, &mut st).unwrap();
        let mut x = CMatrix::identity(n, n);
        for (link, ld) in net.links.iter().zip(&d.links) {
            if !ld.active {
                continue;
            }
            let g = w.gamma[(link.from, link.to)];
            let gv = ld.estimate.conj() * (ld.estimate - ld.fading) / ld.estimate.norm_sqr();
            x[(link.from, link.to)] = c(g) * (c(1.0) - gv);
            x[(link.to, link.to)] -= c(g);
        }
        let kx = linalg::kron(&x, &x.conjugate());
        sq += kx.map(|z| z.norm_sqr());
        sum += kx;
        xmean += x;
    }
    let dn = draws as f64;
    let emp = sum / c(dn);
    for r in 0..n * n {
        for z in 0..n * n {
            let var = (sq[(r, z)] / dn - emp[(r, z)].norm_sqr()).max(0.0);
            let se = (var / dn).sqrt();
            let err = (emp[(r, z)] - model.exx[(r, z)]).norm();
            assert!(err <= 6.0 * se + 1e-9, "entry ({r},{z}): {} vs {}", emp[(r, z)], model.exx[(r, z)]);
        }
    }
    let x_theory = linalg::complexify(&model.a) + &model.e;
    let emp_x = xmean / c(dn);
    assert!(max_abs_diff(&emp_x, &x_theory) < 3e-3);
}

#[test]
fn real_gaussian_fbar_matches_sampling() {
    let covs = [
        CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.4), c(0.4), c(0.7)]),
        CMatrix::from_row_slice(2, 2, &[c(1.3), c(-0.2), c(-0.2), c(0.9)]),
    ];
    let mus = [0.2, 0.25];
    let closed = barf_gaussian(&covs, &mus, 2.0).unwrap();
    let chol: Vec<CMatrix> = covs.iter().map(|r| r.clone().cholesky().unwrap().l()).collect();
    let mut r = rng::stream(41, 0);
    let draws = 400_000;
    let mut blocks = vec![CMatrix::zeros(4, 4); 2];
    for _ in 0..draws {
        for k in 0..2 {
            let z = CMatrix::from_fn(2, 1, |_, _| c(complex_normal(&mut r, 2.0).re));
            let x = &chol[k] * z;
            let h = CMatrix::identity(2, 2) - &x * x.transpose() * c(mus[k]);
            blocks[k] += linalg::kron(&h.transpose(), &h);
        }
    }
    // For real data the fourth-moment form holds on symmetric weighting matrices,
    // the only ones the recursion produces.
    let mut sym = CMatrix::identity(4, 4) * c(0.5);
    for i in 0..2 {
        for j in 0..2 {
            sym[(i + 2 * j, j + 2 * i)] += c(0.5);
        }
    }
    let s = c(1.0 / draws as f64);
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..2 {
        let pos = (k * 2 + k) * 4;
        let cl = closed.view((pos, pos), (4, 4)).clone_owned();
        num += ((&cl - &blocks[k] * s) * &sym).norm_squared();
        den += ((&cl - CMatrix::identity(4, 4)) * &sym).norm_squared();
    }
    let rel = (num / den).sqrt();
    assert!(rel < 0.01, "relative deviation {rel}");
}

#[test]
fn small_step_fbar_differs_by_second_order() {
    let covs = vec![CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.2), c(0.2), c(0.8)]); 3];
    let gap = |mu: f64| {
        let mus = [mu; 3];
        (barf_gaussian(&covs, &mus, 1.0).unwrap() - barf_small_step(&covs, &mus).unwrap()).norm()
    };
    let ratio = gap(0.02) / gap(0.01);
    assert!((ratio - 4.0).abs() < 1e-9, "{ratio}");
}

#[test]
fn transient_limit_equals_steady_state() {
    let net = sample_default_network(1).unwrap();
    let w = weights(&net);
    let m = TheoryModel::build(&net, &w, Mode::PerfectCsi, &cfg(50_000)).unwrap();
    let ss = m.steady_state().unwrap();
    let t = m.transient(6000).unwrap();
    let last = *t.network_msd.last().unwrap();
    assert!((last / ss.network_msd - 1.0).abs() < 1e-8, "{last} vs {}", ss.network_msd);
    let last_e = *t.network_emse.last().unwrap();
    assert!((last_e / ss.network_emse - 1.0).abs() < 1e-8);
    let mean = ss.node_msd.iter().sum::<f64>() / ss.node_msd.len() as f64;
    assert!((mean / ss.network_msd - 1.0).abs() < 1e-12);
    // Initial error is |w_o|^2 at every node.
    let w0: f64 = net.w_true.iter().map(|z| z.norm_sqr()).sum();
    assert!(t.network_msd[0] < w0 && t.network_msd[0] > 0.9 * w0);
}

#[test]
fn pilot_bias_shrinks_with_power() {
    let net = line_network(15.0);
    let w = weights(&net);
    let mut loud = net.clone();
    loud.transmit_power *= 100.0;
    let a = TheoryModel::build(&net, &w, Mode::PilotCsi(1), &cfg(400_000)).unwrap();
    let b = TheoryModel::build(&loud, &w, Mode::PilotCsi(1), &cfg(400_000)).unwrap();
    for (x, y) in a.e.iter().zip(b.e.iter()) {
        if x.norm() > 0.0 {
            assert!(y.norm() < x.norm() * 0.1, "{y} vs {x}");
        }
    }
    assert!(b.mean_bias().unwrap().norm() < a.mean_bias().unwrap().norm());
    assert!(a.mean_bias().unwrap().norm() > 0.0);
}

#[test]
fn e_matrix_is_stable_across_seeds() {
    let net = line_network(15.0);
    let w = weights(&net);
    let a = TheoryModel::build(&net, &w, Mode::PilotCsi(1), &cfg(400_000)).unwrap();
    let b = TheoryModel::build(&net, &w, Mode::PilotCsi(1), &TheoryConfig { seed: 99, ..cfg(400_000) }).unwrap();
    for (link, (la, lb)) in net.links.iter().zip(a.links.iter().zip(&b.links)) {
        let (l, k) = (link.from, link.to);
        let se = w.gamma[(l, k)] * la.p * (la.se_gv.powi(2) + lb.se_gv.powi(2)).sqrt();
        assert!((a.e[(l, k)] - b.e[(l, k)]).norm() <= 5.0 * se, "link {l}->{k}");
    }
}

#[test]
fn gating_statistics_depend_on_noise_to_power_ratio() {
    let net = line_network(15.0);
    let mut scaled = net.clone();
    scaled.transmit_power *= 7.0;
    scaled.scale_link_noise(7.0);
    let a = all_link_moments(&net, Some(1), 10_000, 5);
    let b = all_link_moments(&scaled, Some(1), 10_000, 5);
    for (x, y) in a.iter().zip(&b) {
        assert!((x.p - y.p).abs() < 1e-12);
        assert!((x.nu - y.nu).abs() < 1e-15);
        assert!((x.lambda - y.lambda).abs() < 1e-12);
        assert_eq!(x.accepted, y.accepted);
        assert!((x.gv - y.gv).norm() < 1e-9 * x.gv.norm().max(1e-12));
    }
}

#[test]
fn sensitivity_brackets_prediction() {
    let net = line_network(15.0);
    let w = weights(&net);
    let c = cfg(100_000);
    let m = TheoryModel::build(&net, &w, Mode::PilotCsi(1), &c).unwrap();
    let (lo, hi) = m.sensitivity(&net, &w, &c).unwrap();
    let msd = m.steady_state().unwrap().network_msd;
    assert!(lo.min(hi) <= msd * (1.0 + 1e-9) && lo.max(hi) >= msd * (1.0 - 1e-9), "{lo} {msd} {hi}");
    assert!(m.links.iter().all(|l| l.se_g2 > 0.0 && l.se_gv > 0.0));
}

#[test]
fn step_size_ranges() {
    let lmax = [2.0, 1.0];
    assert_eq!(mean_step_bounds(&lmax, 0.0), vec![(0.0, 1.0), (0.0, 2.0)]);
    let b = ms_step_bounds(&lmax, 4.0);
    assert!((b[0].0 - 0.25).abs() < 1e-15 && (b[0].1 - 0.75).abs() < 1e-15);
    assert_eq!(ms_step_bounds(&lmax, 0.25)[1].0, 0.0);

    let mut net = sample_default_network(1).unwrap();
    let w = weights(&net);
    net.set_step_size(5.0);
    let m = TheoryModel::build(&net, &w, Mode::PerfectCsi, &cfg(20_000)).unwrap();
    assert!(m.rho_f > 1.0 && m.rho_b > 1.0);
    assert!(m.mean_bias().is_err());
    assert!(m.steady_state().is_err());
    assert!(m.transient(100).unwrap().divergent);
}

#[test]
fn variants_and_unsupported_mode() {
    let net = line_network(20.0);
    let w = weights(&net);
    assert!(TheoryModel::build(&net, &w, Mode::NoEqualization, &TheoryConfig::default()).is_err());
    let base = TheoryModel::build(&net, &w, Mode::PilotCsi(1), &cfg(100_000)).unwrap();
    let small = TheoryModel::build(&net, &w, Mode::PilotCsi(1), &TheoryConfig { fbar: FbarVariant::SmallStep, ..cfg(100_000) }).unwrap();
    let taylor = TheoryModel::build(&net, &w, Mode::PilotCsi(1), &TheoryConfig { rv: RvMethod::Taylor, ..cfg(100_000) }).unwrap();
    let db = |m: &TheoryModel| 10.0 * m.steady_state().unwrap().network_msd.log10();
    assert!((db(&base) - db(&small)).abs() < 0.2);
    assert!(db(&taylor).is_finite());
}

#[test]
fn prediction_matches_simulation_on_small_network() {
    let net = line_network(20.0);
    let w = weights(&net);
    for mode in [Mode::PerfectCsi, Mode::PilotCsi(1)] {
        let m = TheoryModel::build(&net, &w, mode, &cfg(400_000)).unwrap();
        let theory = m.steady_state().unwrap().network_msd;
        let sim = Simulator::new(&net, &w, mode).unwrap();
        let opts = RunOptions::new(2000);
        let runs = 200;
        let mut acc = 0.0;
        for r in 0..runs {
            let rec = sim.run(&opts, 8, r).unwrap();
            acc += (1600..2000).map(|i| rec.network_msd(i)).sum::<f64>() / 400.0;
        }
        let gap = 10.0 * (acc / runs as f64 / theory).log10();
        assert!(gap.abs() < 0.5, "{mode}: {gap} dB");
    }
}

#[test]
fn unit_draw_noise() {
    let mut r = rng::stream(1, 1);
    let z: Complex64 = (0..100_000).map(|_| complex_normal(&mut r, 2.0).norm_sqr()).sum::<f64>().into();
    assert!((z.re / 100_000.0 - 2.0).abs() < 0.03);
}
