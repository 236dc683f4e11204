#![allow(dead_code)]

use fading_diffusion::linalg::CMatrix;
use fading_diffusion::network::{NetworkModel, NetworkSpec};
use nalgebra::DMatrix;
use num_complex::Complex64;

/// `E1(x)` by Simpson quadrature of `int_{-inf}^0 exp(-x e^{-s}) ds`.
pub fn e1_quadrature(x: f64) -> f64 {
    let lo = x.ln().min(0.0) - 6.0;
    let n = 40_000;
    let h = -lo / n as f64;
    let f = |s: f64| (-x * (-s).exp()).exp();
    let mut sum = f(lo) + f(0.0);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(lo + i as f64 * h);
    }
    sum * h / 3.0
}

/// `E[A (x) A]` over every activity pattern of the off-diagonal support.
pub fn enumerate_a_kron_a(gamma: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    let n = gamma.nrows();
    let links: Vec<(usize, usize)> = (0..n)
        .flat_map(|k| (0..n).map(move |l| (l, k)))
        .filter(|&(l, k)| l != k && gamma[(l, k)] > 0.0)
        .collect();
    let mut out = DMatrix::zeros(n * n, n * n);
    for mask in 0u64..(1 << links.len()) {
        let mut prob = 1.0;
        let mut a = DMatrix::<f64>::identity(n, n);
        for (j, &(l, k)) in links.iter().enumerate() {
            if mask >> j & 1 == 1 {
                prob *= p[(l, k)];
                a[(l, k)] = gamma[(l, k)];
                a[(k, k)] -= gamma[(l, k)];
            } else {
                prob *= 1.0 - p[(l, k)];
            }
        }
        out += a.kronecker(&a) * prob;
    }
    out
}

pub fn real_part(m: &CMatrix) -> DMatrix<f64> {
    m.map(|z| z.re)
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Four nodes on a line, spacing 0.3, range 0.4: a path graph.
pub fn line_network(link_snr_db: f64) -> NetworkModel {
    NetworkSpec {
        nodes: 4,
        positions: Some(vec![[0.1, 0.5], [0.4, 0.5], [0.7, 0.5], [1.0, 0.5]]),
        regressor_variances: Some(vec![1.0, 0.9, 1.1, 1.2]),
        noise_variances: Some(vec![1e-3, 2e-3, 1e-3, 3e-3]),
        link_snr_db: [link_snr_db, link_snr_db],
        ..NetworkSpec::default()
    }
    .build()
    .expect("line network")
}

/// Sample mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}
