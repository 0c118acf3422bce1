//! Synthetic benchmark datasets and the two noise models.
//!
//! Embeddings come from a Gaussian mixture projected onto the unit sphere,
//! positions are uniform angles on the unit circle with arc-length distances,
//! capacities follow a symmetric Dirichlet, and the observed matching is the
//! exact capacity-constrained optimum of the generated affinities.
//!
//! Every operation draws from its own ChaCha20 stream derived from the seed,
//! so outputs depend only on `(config, seed)`.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lap::solve_lap;
use crate::model::{
    check_alpha, compute_affinity, CapacityVector, Dataset, DistanceMatrix, EmbeddingMatrix,
    PureMatching,
};

const EMBEDDING_STREAM: u64 = 1;
const POSITION_STREAM: u64 = 2;
const CAPACITY_STREAM: u64 = 3;
const SWAP_STREAM: u64 = 4;
const GAUSSIAN_STREAM: u64 = 5;

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub k: usize,
    pub alpha: f64,
    pub cluster_spread: f64,
    pub dirichlet_conc: f64,
    pub extra_spots_per_item: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n: 1000,
            m: 3,
            d: 2,
            k: 3,
            alpha: 0.3,
            cluster_spread: 0.3,
            dirichlet_conc: 1.0,
            extra_spots_per_item: 10,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::param("d", "must be at least 1"));
        }
        if self.k == 0 {
            return Err(Error::param("k", "must be at least 1"));
        }
        if self.m < self.k {
            return Err(Error::param(
                "m",
                format!("{} items cannot cover {} clusters", self.m, self.k),
            ));
        }
        if self.m > self.n {
            return Err(Error::param(
                "n",
                format!("{} users is fewer than {} items", self.n, self.m),
            ));
        }
        check_alpha(self.alpha)?;
        if !(self.cluster_spread > 0.0 && self.cluster_spread.is_finite()) {
            return Err(Error::param("cluster_spread", "must be positive"));
        }
        if !(self.dirichlet_conc > 0.0 && self.dirichlet_conc.is_finite()) {
            return Err(Error::param("dirichlet_conc", "must be positive"));
        }
        Ok(())
    }
}

/// Splits `n` users across items proportionally with largest-remainder
/// rounding (ties to the lower index), then adds `extra` spots to each item.
/// An item rounded down to zero borrows one spot from the largest item.
pub fn capacities_from_proportions(n: usize, proportions: &[f64], extra: usize) -> Result<CapacityVector> {
    let total: f64 = proportions.iter().sum();
    if proportions.is_empty() || proportions.iter().any(|&p| !(p >= 0.0)) || !(total > 0.0) {
        return Err(Error::param("proportions", "must be nonnegative with positive sum"));
    }
    let quotas: Vec<f64> = proportions.iter().map(|p| p / total * n as f64).collect();
    let mut caps: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = caps.iter().sum();
    let mut order: Vec<usize> = (0..caps.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &j in order.iter().take(n.saturating_sub(assigned)) {
        caps[j] += 1;
    }
    if extra == 0 && n >= caps.len() {
        while let Some(empty) = caps.iter().position(|&c| c == 0) {
            let largest = (0..caps.len()).max_by_key(|&j| (caps[j], usize::MAX - j)).unwrap();
            caps[largest] -= 1;
            caps[empty] += 1;
        }
    }
    CapacityVector::new(caps.into_iter().map(|c| c + extra).collect())
}

/// Dirichlet(conc, ..., conc) proportions times `n`, rounded to sum exactly
/// to `n`, plus `extra` spots per item.
pub fn sample_capacities(n: usize, m: usize, conc: f64, extra: usize, seed: u64) -> Result<CapacityVector> {
    if m == 0 {
        return Err(Error::param("m", "must be at least 1"));
    }
    let gamma = Gamma::new(conc, 1.0).map_err(|e| Error::param("dirichlet_conc", e.to_string()))?;
    let mut rng = stream(seed, CAPACITY_STREAM);
    let mut draws: Vec<f64> = (0..m).map(|_| gamma.sample(&mut rng)).collect();
    if draws.iter().sum::<f64>() <= 0.0 {
        // every gamma draw underflowed (tiny concentration); fall back to uniform
        draws = vec![1.0; m];
    }
    capacities_from_proportions(n, &draws, extra)
}

/// Arc length between two angles on the unit circle.
pub fn circle_distance(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs().rem_euclid(2.0 * PI);
    diff.min(2.0 * PI - diff)
}

/// Generates a full dataset: embeddings, distances, capacities and the
/// optimal matching.
pub fn generate_dataset(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let GenConfig { n, m, d, k, .. } = *cfg;

    let mut rng = stream(cfg.seed, EMBEDDING_STREAM);
    let centers = Array2::from_shape_simple_fn((k, d), || rng.sample::<f64, _>(StandardNormal));
    let draw_point = |cluster: usize, rng: &mut ChaCha20Rng| -> Vec<f64> {
        (0..d)
            .map(|c| centers[[cluster, c]] + cfg.cluster_spread * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let mut item_rows = Vec::with_capacity(m * d);
    for j in 0..m {
        let cluster = if j < k { j } else { rng.random_range(0..k) };
        item_rows.extend(draw_point(cluster, &mut rng));
    }
    let mut user_rows = Vec::with_capacity(n * d);
    for _ in 0..n {
        let cluster = rng.random_range(0..k);
        user_rows.extend(draw_point(cluster, &mut rng));
    }
    let mut items = EmbeddingMatrix::new(Array2::from_shape_vec((m, d), item_rows).expect("m*d draws"))?;
    let mut users = EmbeddingMatrix::new(Array2::from_shape_vec((n, d), user_rows).expect("n*d draws"))?;
    items.normalize_rows();
    users.normalize_rows();

    let mut rng = stream(cfg.seed, POSITION_STREAM);
    let user_angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let item_angles: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let raw = Array2::from_shape_fn((n, m), |(i, j)| circle_distance(user_angles[i], item_angles[j]));
    let distances = DistanceMatrix::mean_normalized(raw)?;

    let capacities = sample_capacities(n, m, cfg.dirichlet_conc, cfg.extra_spots_per_item, cfg.seed)?;

    let scores = compute_affinity(&users, &items, &distances, cfg.alpha)?;
    let matching = solve_lap(scores.view(), &capacities)?.matching;

    Ok(Dataset {
        users,
        items_truth: Some(items),
        distances,
        capacities,
        matching,
        alpha: cfg.alpha,
        seed: cfg.seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwapNoise {
    pub matching: PureMatching,
    /// Users whose item differs from the input.
    pub modified: usize,
    /// Set when the requested amount could not be reached, e.g. because every
    /// user shares a single item.
    pub exhausted: bool,
}

/// Swaps the items of random user pairs until `rho` of the allocations are
/// modified (rounded to the nearest even count). Partners are drawn among
/// untouched users with a different item, so item loads are preserved and
/// every swap modifies exactly two allocations.
pub fn apply_swap_noise(matching: &PureMatching, rho: f64, seed: u64) -> Result<SwapNoise> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::param("swap_rho", format!("{rho} is outside [0, 1]")));
    }
    let n = matching.len();
    let target = {
        let raw = rho * n as f64;
        let even = 2.0 * (raw / 2.0).round();
        (even as usize).min(n - n % 2)
    };
    let mut assign = matching.as_slice().to_vec();
    let mut rng = stream(seed, SWAP_STREAM);
    let mut untouched: Vec<usize> = (0..n).collect();
    let mut modified = 0;
    while modified < target && !untouched.is_empty() {
        let pick = rng.random_range(0..untouched.len());
        let user = untouched.swap_remove(pick);
        let partners: Vec<usize> = untouched
            .iter()
            .enumerate()
            .filter(|&(_, &u)| assign[u] != assign[user])
            .map(|(idx, _)| idx)
            .collect();
        if partners.is_empty() {
            // this user cannot be modified anymore; it stays out of the pool
            continue;
        }
        let idx = partners[rng.random_range(0..partners.len())];
        let partner = untouched.swap_remove(idx);
        assign.swap(user, partner);
        modified += 2;
    }
    Ok(SwapNoise {
        matching: PureMatching::new(assign),
        modified,
        exhausted: modified < target,
    })
}

/// `sqrt(1 - rho^2) U + rho Z` with `Z` standard normal; rows are not
/// renormalized.
pub fn apply_gaussian_noise(users: &EmbeddingMatrix, rho: f64, seed: u64) -> Result<EmbeddingMatrix> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::param("gauss_rho", format!("{rho} is outside [0, 1]")));
    }
    let keep = (1.0 - rho * rho).sqrt();
    let mut rng = stream(seed, GAUSSIAN_STREAM);
    let noisy = users
        .values()
        .mapv(|x| keep * x + rho * rng.sample::<f64, _>(StandardNormal));
    EmbeddingMatrix::new(noisy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lap::solve_lap;
    use proptest::prelude::*;
    use rand::Rng;

    fn small(seed: u64) -> GenConfig {
        GenConfig {
            n: 60,
            m: 4,
            d: 3,
            k: 2,
            extra_spots_per_item: 2,
            seed,
            ..GenConfig::default()
        }
    }

    #[test]
    fn capacities_examples() {
        let c = sample_capacities(500, 1, 1.0, 7, 3).unwrap();
        assert_eq!(c.as_slice(), &[507]);
        let c = capacities_from_proportions(999, &[1.0, 1.0, 1.0], 0).unwrap();
        assert_eq!(c.as_slice(), &[333, 333, 333]);
        let c = capacities_from_proportions(10, &[1.0, 1.0, 1.0], 0).unwrap();
        assert_eq!(c.as_slice(), &[4, 3, 3]);
        for seed in 0..10 {
            assert_eq!(sample_capacities(1000, 3, 1.0, 10, seed).unwrap().total(), 1030);
        }
        // a vanishing proportion still gets one spot
        let c = capacities_from_proportions(10, &[1.0, 1e-9], 0).unwrap();
        assert_eq!(c.as_slice(), &[9, 1]);
    }

    #[test]
    fn default_shape_dataset() {
        let cfg = GenConfig {
            seed: 1,
            ..GenConfig::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        assert_eq!(ds.n_users(), 1000);
        assert_eq!(ds.n_items(), 3);
        assert_eq!(ds.capacities.total(), 1000 + 3 * 10);
        assert!((ds.distances.mean() - 1.0).abs() < 1e-9);
        ds.validate().unwrap();
    }

    #[test]
    fn single_item_dataset() {
        let cfg = GenConfig {
            n: 20,
            m: 1,
            k: 1,
            ..GenConfig::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        assert!(ds.matching.as_slice().iter().all(|&j| j == 0));
    }

    #[test]
    fn generated_invariants() {
        for seed in 0..5 {
            let ds = generate_dataset(&small(seed)).unwrap();
            ds.validate().unwrap();
            assert!(ds.users.is_normalized(1e-9));
            assert!(ds.items_truth.as_ref().unwrap().is_normalized(1e-9));
            assert!((ds.distances.mean() - 1.0).abs() < 1e-9);
            let scores = compute_affinity(&ds.users, ds.items_truth.as_ref().unwrap(), &ds.distances, ds.alpha).unwrap();
            let stored = crate::lap::objective(&scores.view(), ds.matching.as_slice());
            let resolved = solve_lap(scores.view(), &ds.capacities).unwrap();
            assert_eq!(resolved.objective, stored);
        }
    }

    #[test]
    fn distance_bound() {
        let cfg = small(9);
        let mut rng = stream(cfg.seed, POSITION_STREAM);
        let ua: Vec<f64> = (0..cfg.n).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let ia: Vec<f64> = (0..cfg.m).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let raw = Array2::from_shape_fn((cfg.n, cfg.m), |(i, j)| circle_distance(ua[i], ia[j]));
        let mean = raw.mean().unwrap();
        let ds = generate_dataset(&cfg).unwrap();
        assert!(ds.distances.values().iter().all(|&x| (0.0..=PI / mean + 1e-12).contains(&x)));
        assert!((circle_distance(0.1, 2.0 * PI - 0.1) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn determinism() {
        assert_eq!(generate_dataset(&small(4)).unwrap(), generate_dataset(&small(4)).unwrap());
        assert_ne!(generate_dataset(&small(4)).unwrap(), generate_dataset(&small(5)).unwrap());
    }

    #[test]
    fn config_validation() {
        let bad = GenConfig { k: 5, m: 3, ..GenConfig::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("`m`"));
        let bad = GenConfig { d: 0, ..GenConfig::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("`d`"));
    }

    #[test]
    fn swap_noise_examples() {
        let sigma = PureMatching::new(vec![0, 1, 2, 0, 1, 2, 0, 1]);
        let out = apply_swap_noise(&sigma, 0.0, 1).unwrap();
        assert_eq!(out.matching, sigma);

        let half = PureMatching::new((0..10).map(|i| i % 2).collect());
        let out = apply_swap_noise(&half, 1.0, 2).unwrap();
        assert_eq!(out.matching.hamming(&half), 10);
        assert!(!out.exhausted);

        let single = PureMatching::new(vec![0; 6]);
        let out = apply_swap_noise(&single, 0.5, 3).unwrap();
        assert_eq!(out.matching, single);
        assert!(out.exhausted);
        assert!(apply_swap_noise(&single, 1.5, 3).is_err());
    }

    #[test]
    fn gaussian_noise_extremes() {
        let u = generate_dataset(&small(1)).unwrap().users;
        assert_eq!(apply_gaussian_noise(&u, 0.0, 7).unwrap(), u);
        let z1 = apply_gaussian_noise(&u, 1.0, 7).unwrap();
        let other = EmbeddingMatrix::new(u.values().mapv(|x| 3.0 * x + 1.0)).unwrap();
        assert_eq!(apply_gaussian_noise(&other, 1.0, 7).unwrap(), z1);
    }

    #[test]
    fn gaussian_noise_second_moment() {
        // E|U~_i|^2 = (1 - rho^2) + rho^2 d for unit rows
        let (rows, d, rho) = (10_000, 3, 0.6);
        let mut base = Array2::zeros((rows, d));
        base.column_mut(0).fill(1.0);
        let u = EmbeddingMatrix::new(base).unwrap();
        let noisy = apply_gaussian_noise(&u, rho, 11).unwrap();
        let sq: Vec<f64> = noisy.values().rows().into_iter().map(|r| r.dot(&r)).collect();
        let mean = sq.iter().sum::<f64>() / rows as f64;
        let var = sq.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (rows - 1) as f64;
        let se = (var / rows as f64).sqrt();
        let expected = 0.64 + 0.36 * d as f64;
        assert!((mean - expected).abs() <= 3.0 * se, "{mean} vs {expected} (se {se})");
    }

    proptest! {
        #[test]
        fn swaps_preserve_loads_and_hit_target(
            assign in prop::collection::vec(0usize..3, 2..80),
            rho in 0.0f64..0.5,
            seed in any::<u64>(),
        ) {
            let sigma = PureMatching::new(assign);
            let n = sigma.len();
            let out = apply_swap_noise(&sigma, rho, seed).unwrap();
            prop_assert_eq!(out.matching.counts(3), sigma.counts(3));
            prop_assert_eq!(out.modified, out.matching.hamming(&sigma));
            if !out.exhausted {
                let frac = out.modified as f64 / n as f64;
                prop_assert!((frac - rho).abs() <= 1.0 / n as f64 + 1e-12);
            }
        }
    }
}
