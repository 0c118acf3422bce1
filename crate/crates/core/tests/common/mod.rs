#![allow(dead_code)]

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use simca::sinkhorn::StopRule;
use simca::{CapacityVector, DistanceMatrix, EmbeddingMatrix, PureMatching};

pub const TIGHT: StopRule = StopRule::Tolerance {
    tolerance: 1e-12,
    max_iters: 100_000,
};

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn sphere_points(rng: &mut impl Rng, rows: usize, dim: usize) -> EmbeddingMatrix {
    let raw = Array2::from_shape_fn((rows, dim), |_| rng.sample::<f64, _>(StandardNormal));
    let mut emb = EmbeddingMatrix::new(raw).unwrap();
    emb.normalize_rows();
    emb
}

pub fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi))
}

/// Positive capacities summing to `n + slack`.
pub fn random_caps(rng: &mut impl Rng, n: usize, m: usize, slack: usize) -> CapacityVector {
    assert!(n >= m);
    let mut caps = vec![1usize; m];
    for _ in 0..(n - m + slack) {
        caps[rng.random_range(0..m)] += 1;
    }
    CapacityVector::new(caps).unwrap()
}

/// Uniformly shuffled fill of `n` users into the capacity slots.
pub fn random_matching(rng: &mut impl Rng, n: usize, caps: &CapacityVector) -> PureMatching {
    let mut slots: Vec<usize> = caps
        .as_slice()
        .iter()
        .enumerate()
        .flat_map(|(j, &c)| std::iter::repeat_n(j, c))
        .collect();
    loop {
        slots.shuffle(rng);
        let sigma = PureMatching::new(slots[..n].to_vec());
        if sigma.check_feasible(caps).is_ok() {
            return sigma;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub users: EmbeddingMatrix,
    pub items: EmbeddingMatrix,
    pub distances: DistanceMatrix,
    pub caps: CapacityVector,
    pub sigma: PureMatching,
    pub alpha: f64,
}

pub fn random_instance(seed: u64, n: usize, m: usize, d: usize, slack: usize) -> Instance {
    let mut r = rng(seed);
    let users = sphere_points(&mut r, n, d);
    let items = sphere_points(&mut r, m, d);
    let distances = DistanceMatrix::new(uniform_matrix(&mut r, n, m, 0.0, 2.0)).unwrap();
    let caps = random_caps(&mut r, n, m, slack);
    let sigma = random_matching(&mut r, n, &caps);
    let alpha = r.random_range(0.1..0.6);
    Instance {
        users,
        items,
        distances,
        caps,
        sigma,
        alpha,
    }
}

pub fn relative_error(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    let diff = (analytic - numeric).mapv(|x| x * x).sum().sqrt();
    let scale = analytic.mapv(|x| x * x).sum().sqrt().max(1e-12);
    diff / scale
}

/// Every matching of `n` users under capacity upper bounds, by objective,
/// sorted best first.
pub fn all_objectives(scores: &Array2<f64>, caps: &[usize]) -> Vec<f64> {
    fn go(scores: &Array2<f64>, left: &mut [usize], i: usize, acc: f64, out: &mut Vec<f64>) {
        if i == scores.nrows() {
            out.push(acc);
            return;
        }
        for j in 0..left.len() {
            if left[j] > 0 {
                left[j] -= 1;
                go(scores, left, i + 1, acc + scores[[i, j]], out);
                left[j] += 1;
            }
        }
    }
    let mut out = Vec::new();
    go(scores, &mut caps.to_vec(), 0, 0.0, &mut out);
    out.sort_by(|a, b| b.total_cmp(a));
    out
}

/// Maximizes `Tr(pi^T M) + eps H(pi)` over couplings with unit rows and
/// column masses `(c0, n - c0)` by projected gradient ascent on the first
/// column. Only valid for two items.
pub fn two_item_ot_oracle(scores: &Array2<f64>, c0: f64, epsilon: f64) -> Array2<f64> {
    let n = scores.nrows();
    assert_eq!(scores.ncols(), 2);
    let mut x = vec![c0 / n as f64; n];
    let step = 0.05 * epsilon.min(1.0);
    for _ in 0..200_000 {
        let grad: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, &xi)| scores[[i, 0]] - scores[[i, 1]] - epsilon * (xi.ln() - (1.0 - xi).ln()))
            .collect();
        let moved: Vec<f64> = x.iter().zip(&grad).map(|(xi, g)| xi + step * g).collect();
        x = project_capped_simplex(&moved, c0);
    }
    Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { x[i] } else { 1.0 - x[i] })
}

/// Euclidean projection onto `{x : sum x = total, lo <= x_i <= 1 - lo}`.
pub fn project_capped_simplex(y: &[f64], total: f64) -> Vec<f64> {
    let lo = 1e-12;
    let clip = |t: f64| -> Vec<f64> { y.iter().map(|v| (v - t).clamp(lo, 1.0 - lo)).collect() };
    let (mut a, mut b) = (-1e3, 1e3);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if clip(mid).iter().sum::<f64>() > total {
            a = mid;
        } else {
            b = mid;
        }
    }
    clip(0.5 * (a + b))
}

pub fn entropy_of(pi: &Array2<f64>) -> f64 {
    pi.iter().filter(|&&p| p > 0.0).map(|&p| -p * (p.ln() - 1.0)).sum()
}

pub fn trace_value(scores: &Array2<f64>, pi: &Array2<f64>) -> f64 {
    (scores * pi).sum()
}
