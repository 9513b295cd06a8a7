//! Brute-force reference implementations and numeric helpers shared by the
//! integration tests. Everything here works on plain nested `Vec`s and
//! evaluates the textbook formulas directly, independent of the library's
//! vectorized code.

#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || gaussian(rng))
}

pub fn rows_of(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// `-log( exp(s_ij / tau) / sum_{k != i} exp(s_ik / tau) )`.
pub fn pair_loss(z: &[Vec<f64>], i: usize, j: usize, tau: f64) -> f64 {
    let numerator = (cosine(&z[i], &z[j]) / tau).exp();
    let mut denominator = 0.0;
    for (k, zk) in z.iter().enumerate() {
        if k != i {
            denominator += (cosine(&z[i], zk) / tau).exp();
        }
    }
    -(numerator / denominator).ln()
}

/// Rows `2k` and `2k + 1` are positive partners; mean over every row as
/// anchor.
pub fn contrastive(z: &[Vec<f64>], tau: f64) -> f64 {
    let m = z.len();
    let mut total = 0.0;
    for k in 0..m / 2 {
        total += pair_loss(z, 2 * k, 2 * k + 1, tau);
        total += pair_loss(z, 2 * k + 1, 2 * k, tau);
    }
    total / m as f64
}

pub fn in_domain(source: &[Vec<f64>], target: &[Vec<f64>], tau: f64) -> f64 {
    contrastive(source, tau) + contrastive(target, tau)
}

fn softmax_row(row: &[f64]) -> Vec<f64> {
    let total: f64 = row.iter().map(|v| v.exp()).sum();
    row.iter().map(|v| v.exp() / total).collect()
}

pub fn entropy(logits: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for row in logits {
        for p in softmax_row(row) {
            if p > 0.0 {
                total -= p * p.ln();
            }
        }
    }
    total / logits.len() as f64
}

pub fn cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &label) in logits.iter().zip(labels) {
        total -= softmax_row(row)[label].ln();
    }
    total / logits.len() as f64
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_gradient(x: &Array2<f64>, h: f64, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut grad = Array2::zeros(x.raw_dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.raw_dim()) {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let up = f(&probe);
        probe[idx] = orig - h;
        let down = f(&probe);
        probe[idx] = orig;
        grad[idx] = (up - down) / (2.0 * h);
    }
    grad
}

/// `||a - b|| / max(||a||, ||b||)`, 0 when both vanish.
pub fn relative_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).mapv(|v| v * v).sum().sqrt();
    let scale = a.mapv(|v| v * v).sum().sqrt().max(b.mapv(|v| v * v).sum().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn close(actual: f64, expected: f64, rel: f64) -> bool {
    (actual - expected).abs() <= rel * expected.abs() + 1e-300
}

/// Probability mass of `Binomial(n, p)` at `0..=n`, from log-factorials.
pub fn binomial_pmf(n: u64, p: f64) -> Vec<f64> {
    let mut ln_fact = vec![0.0; n as usize + 1];
    for m in 1..=n as usize {
        ln_fact[m] = ln_fact[m - 1] + (m as f64).ln();
    }
    (0..=n as usize)
        .map(|i| {
            let ln_choose = ln_fact[n as usize] - ln_fact[i] - ln_fact[n as usize - i];
            (ln_choose + i as f64 * p.ln() + (n as usize - i) as f64 * (1.0 - p).ln()).exp()
        })
        .collect()
}

/// Central interval `[lo, hi]` holding at least `coverage` of the mass:
/// `lo` is the largest value with `P(X < lo) <= tail`, `hi` the smallest
/// with `P(X > hi) <= tail`, where `tail = (1 - coverage) / 2`.
pub fn binomial_interval(n: u64, p: f64, coverage: f64) -> (u64, u64) {
    let tail = (1.0 - coverage) / 2.0;
    let pmf = binomial_pmf(n, p);
    let mut lo = 0;
    let mut below = 0.0;
    while below + pmf[lo] <= tail {
        below += pmf[lo];
        lo += 1;
    }
    let mut hi = n as usize;
    let mut above = 0.0;
    while above + pmf[hi] <= tail {
        above += pmf[hi];
        hi -= 1;
    }
    (lo as u64, hi as u64)
}
