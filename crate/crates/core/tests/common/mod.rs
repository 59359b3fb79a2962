//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    lo + (hi - lo) * u
}

/// Random `M = S + K` with `S ⪰ ½·id` symmetric and `K` antisymmetric, so
/// every eigenvalue has real part at least ½. Dimensions cycle through 1..=5.
pub fn stable_corpus(count: usize, seed: u64) -> Vec<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|n| {
            let d = 1 + n % 5;
            let b = DMatrix::from_fn(d, d, |_, _| uniform(&mut rng, -1.0, 1.0));
            let c = DMatrix::from_fn(d, d, |_, _| uniform(&mut rng, -1.0, 1.0));
            let s = b.transpose() * &b / d as f64 + DMatrix::identity(d, d) * 0.5;
            s + (&c - c.transpose())
        })
        .collect()
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on
/// `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        nodes.push(x);
        weights.push(2.0 / ((1.0 - x * x) * dp * dp));
    }
    (nodes, weights)
}

/// `exp(A)` by Taylor series with scaling and squaring.
pub fn taylor_expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let d = a.nrows();
    let norm = a.iter().map(|v| v.abs()).sum::<f64>().max(1e-300);
    let s = (norm / 0.25).log2().ceil().max(0.0) as i32;
    let scaled = a / 2f64.powi(s);
    let mut term = DMatrix::identity(d, d);
    let mut sum = term.clone();
    for k in 1..=24 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// `∫₀^L e^{−Mt} e^{−Mᵀt} dt` by composite 12-point Gauss–Legendre on
/// panels of width `h`.
pub fn lyapunov_by_quadrature(m: &DMatrix<f64>, upper: f64, h: f64) -> DMatrix<f64> {
    let d = m.nrows();
    let (nodes, weights) = gauss_legendre(12);
    let panel = taylor_expm(&(-m * h));
    let inner: Vec<DMatrix<f64>> = nodes
        .iter()
        .map(|&z| taylor_expm(&(-m * (0.5 * h * (z + 1.0)))))
        .collect();
    let mut start = DMatrix::identity(d, d);
    let mut total = DMatrix::zeros(d, d);
    let panels = (upper / h).round() as usize;
    for _ in 0..panels {
        for (e, &w) in inner.iter().zip(&weights) {
            let g = &start * e;
            total += &g * g.transpose() * (0.5 * h * w);
        }
        start = &start * &panel;
    }
    total
}

/// Inverse by Gauss–Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    let mut a = m.clone();
    let mut inv = DMatrix::identity(d, d);
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))
            .unwrap();
        a.swap_rows(col, pivot);
        inv.swap_rows(col, pivot);
        let p = a[(col, col)];
        for c in 0..d {
            a[(col, c)] /= p;
            inv[(col, c)] /= p;
        }
        for r in 0..d {
            if r != col {
                let f = a[(r, col)];
                for c in 0..d {
                    a[(r, c)] -= f * a[(col, c)];
                    inv[(r, c)] -= f * inv[(col, c)];
                }
            }
        }
    }
    inv
}
