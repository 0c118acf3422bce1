//! Domain types shared by every stage of the pipeline, and the affinity
//! function that turns embeddings and distances into user/item scores.
//!
//! The affinity of user `i` for item `j` is
//!
//! ```text
//! M[i][j] = (1 - alpha) * <U_i, V_j> - alpha * D[i][j]
//! ```
//!
//! where `alpha` in `[0, 1]` trades latent affinity against geographic
//! proximity. The function is linear in the item embeddings, which is what
//! makes the training loss convex in `V`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Dense row-major matrix whose rows are `dim`-dimensional latent vectors,
/// one per user (`n x d`) or per item (`m x d`).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix(Array2<f64>);

impl EmbeddingMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("embedding entries must be finite".into()));
        }
        Ok(EmbeddingMatrix(values))
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        EmbeddingMatrix(Array2::zeros((rows, dim)))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Scales every row to unit Euclidean norm. Zero rows are left untouched.
    pub fn normalize_rows(&mut self) {
        for mut row in self.0.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|x| x / norm);
            }
        }
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        self.0
            .rows()
            .into_iter()
            .all(|r| (r.dot(&r).sqrt() - 1.0).abs() <= tol)
    }
}

/// Nonnegative `n x m` matrix of user/item distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(Array2<f64>);

impl DistanceMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::Domain(
                "distances must be finite and nonnegative".into(),
            ));
        }
        Ok(DistanceMatrix(values))
    }

    /// Divides every entry by the grand mean so that the result has mean 1.
    pub fn mean_normalized(values: Array2<f64>) -> Result<Self> {
        let mean = values.mean().unwrap_or(0.0);
        if !(mean > 0.0) {
            return Err(Error::Domain(
                "cannot mean-normalize a distance matrix with zero mean".into(),
            ));
        }
        DistanceMatrix::new(values.mapv(|x| x / mean))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn mean(&self) -> f64 {
        self.0.mean().unwrap_or(0.0)
    }
}

/// Per-item capacities; each item can absorb at most `caps[j]` users.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapacityVector(Vec<usize>);

impl CapacityVector {
    pub fn new(caps: Vec<usize>) -> Result<Self> {
        if caps.is_empty() {
            return Err(Error::param("capacities", "at least one item is required"));
        }
        if let Some(j) = caps.iter().position(|&c| c == 0) {
            return Err(Error::param(
                "capacities",
                format!("item {j} has zero capacity"),
            ));
        }
        Ok(CapacityVector(caps))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total capacity `s(C)`.
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn to_masses(&self) -> Array1<f64> {
        self.0.iter().map(|&c| c as f64).collect()
    }

    pub fn check_feasible(&self, users: usize) -> Result<()> {
        if self.total() < users {
            return Err(Error::Infeasible {
                total: self.total(),
                users,
            });
        }
        Ok(())
    }
}

/// A hard assignment of every user to one item.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PureMatching(Vec<usize>);

impl PureMatching {
    pub fn new(assign: Vec<usize>) -> Self {
        PureMatching(assign)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn item_of(&self, user: usize) -> usize {
        self.0[user]
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }

    /// Number of users sent to each of the `m` items.
    pub fn counts(&self, m: usize) -> Vec<usize> {
        let mut counts = vec![0; m];
        for &j in &self.0 {
            if j < m {
                counts[j] += 1;
            }
        }
        counts
    }

    /// Checks item indices and per-item counts against the capacities. When
    /// the total capacity equals the number of users every item must be full.
    pub fn check_feasible(&self, caps: &CapacityVector) -> Result<()> {
        let m = caps.len();
        if let Some(&j) = self.0.iter().find(|&&j| j >= m) {
            return Err(Error::IndexOutOfRange { index: j, len: m });
        }
        let counts = self.counts(m);
        let exact = caps.total() == self.0.len();
        for (j, (&count, &cap)) in counts.iter().zip(caps.as_slice()).enumerate() {
            if count > cap || (exact && count != cap) {
                return Err(Error::Domain(format!(
                    "item {j} receives {count} users but has capacity {cap}"
                )));
            }
        }
        Ok(())
    }

    /// The `n x m` 0/1 matrix representation.
    pub fn to_matrix(&self, m: usize) -> Array2<f64> {
        let mut out = Array2::zeros((self.0.len(), m));
        for (i, &j) in self.0.iter().enumerate() {
            out[[i, j]] = 1.0;
        }
        out
    }

    /// Number of users assigned to different items in `self` and `other`.
    pub fn hamming(&self, other: &PureMatching) -> usize {
        self.0
            .iter()
            .zip(&other.0)
            .filter(|(a, b)| a != b)
            .count()
    }
}

/// A strictly positive fractional assignment of users to items.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling(Array2<f64>);

impl Coupling {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::Domain(
                "coupling entries must be finite and nonnegative".into(),
            ));
        }
        Ok(Coupling(values))
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn row_sums(&self) -> Array1<f64> {
        self.0.sum_axis(Axis(1))
    }

    pub fn col_sums(&self) -> Array1<f64> {
        self.0.sum_axis(Axis(0))
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Affinity/proximity trade-off and entropic regularization strength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinityParams {
    pub alpha: f64,
    pub epsilon: f64,
}

impl AffinityParams {
    pub fn new(alpha: f64, epsilon: f64) -> Result<Self> {
        check_alpha(alpha)?;
        check_epsilon(epsilon)?;
        Ok(AffinityParams { alpha, epsilon })
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param("alpha", format!("{alpha} is outside [0, 1]")));
    }
    Ok(())
}

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::param(
            "epsilon",
            format!("{epsilon} must be positive and finite"),
        ));
    }
    Ok(())
}

/// The observed data: user embeddings, distances, capacities and the optimal
/// matching, plus the ground-truth item embeddings when they are known.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub users: EmbeddingMatrix,
    pub items_truth: Option<EmbeddingMatrix>,
    pub distances: DistanceMatrix,
    pub capacities: CapacityVector,
    pub matching: PureMatching,
    pub alpha: f64,
    pub seed: u64,
}

impl Dataset {
    pub fn n_users(&self) -> usize {
        self.users.rows()
    }

    pub fn n_items(&self) -> usize {
        self.capacities.len()
    }

    pub fn dim(&self) -> usize {
        self.users.dim()
    }

    /// Checks that `n`, `m` and `d` agree across fields and that the matching
    /// respects the capacities.
    pub fn validate(&self) -> Result<()> {
        let (n, m, d) = (self.n_users(), self.n_items(), self.dim());
        if self.distances.shape() != (n, m) {
            return Err(Error::shape(
                "distances",
                format!("{n}x{m}"),
                format!("{:?}", self.distances.shape()),
            ));
        }
        if let Some(items) = &self.items_truth {
            if items.rows() != m || items.dim() != d {
                return Err(Error::shape(
                    "items_truth",
                    format!("{m}x{d}"),
                    format!("{}x{}", items.rows(), items.dim()),
                ));
            }
        }
        if self.matching.len() != n {
            return Err(Error::shape("matching", n, self.matching.len()));
        }
        check_alpha(self.alpha)?;
        self.capacities.check_feasible(n)?;
        self.matching.check_feasible(&self.capacities)
    }
}

/// An affinity function `Phi(u, v, d)` together with its partial gradients in
/// the item and user embeddings.
pub trait Affinity {
    fn score(&self, user: ArrayView1<'_, f64>, item: ArrayView1<'_, f64>, distance: f64) -> f64;

    fn grad_item(
        &self,
        user: ArrayView1<'_, f64>,
        item: ArrayView1<'_, f64>,
        distance: f64,
    ) -> Array1<f64>;

    fn grad_user(
        &self,
        user: ArrayView1<'_, f64>,
        item: ArrayView1<'_, f64>,
        distance: f64,
    ) -> Array1<f64>;

    /// Full `n x m` affinity matrix.
    fn matrix(
        &self,
        users: &EmbeddingMatrix,
        items: &EmbeddingMatrix,
        distances: &DistanceMatrix,
    ) -> Result<Array2<f64>> {
        check_shapes(users, items, distances)?;
        let (n, m) = distances.shape();
        let d = distances.values();
        Ok(Array2::from_shape_fn((n, m), |(i, j)| {
            self.score(users.row(i), items.row(j), d[[i, j]])
        }))
    }
}

/// Inner-product affinity penalized by distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentGeoAffinity {
    pub alpha: f64,
}

impl LatentGeoAffinity {
    pub fn new(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(LatentGeoAffinity { alpha })
    }
}

impl Affinity for LatentGeoAffinity {
    fn score(&self, user: ArrayView1<'_, f64>, item: ArrayView1<'_, f64>, distance: f64) -> f64 {
        (1.0 - self.alpha) * user.dot(&item) - self.alpha * distance
    }

    fn grad_item(&self, user: ArrayView1<'_, f64>, _: ArrayView1<'_, f64>, _: f64) -> Array1<f64> {
        user.mapv(|x| (1.0 - self.alpha) * x)
    }

    fn grad_user(&self, _: ArrayView1<'_, f64>, item: ArrayView1<'_, f64>, _: f64) -> Array1<f64> {
        item.mapv(|x| (1.0 - self.alpha) * x)
    }

    fn matrix(
        &self,
        users: &EmbeddingMatrix,
        items: &EmbeddingMatrix,
        distances: &DistanceMatrix,
    ) -> Result<Array2<f64>> {
        check_shapes(users, items, distances)?;
        let inner = users.values().dot(&items.values().t());
        let (a, b) = (1.0 - self.alpha, self.alpha);
        Ok(ndarray::Zip::from(&inner)
            .and(&distances.values())
            .map_collect(|&s, &dist| a * s - b * dist))
    }
}

fn check_shapes(
    users: &EmbeddingMatrix,
    items: &EmbeddingMatrix,
    distances: &DistanceMatrix,
) -> Result<()> {
    if users.dim() != items.dim() {
        return Err(Error::shape("embedding dimension", users.dim(), items.dim()));
    }
    let expected = (users.rows(), items.rows());
    if distances.shape() != expected {
        return Err(Error::shape(
            "distance matrix",
            format!("{}x{}", expected.0, expected.1),
            format!("{}x{}", distances.shape().0, distances.shape().1),
        ));
    }
    Ok(())
}

/// `M[i][j] = (1 - alpha) <U_i, V_j> - alpha D[i][j]`.
pub fn compute_affinity(
    users: &EmbeddingMatrix,
    items: &EmbeddingMatrix,
    distances: &DistanceMatrix,
    alpha: f64,
) -> Result<Array2<f64>> {
    LatentGeoAffinity::new(alpha)?.matrix(users, items, distances)
}

/// Gradient of `M[i][j]` with respect to `V_j`: `(1 - alpha) U_i` for every `j`.
pub fn affinity_grad_item(users: &EmbeddingMatrix, i: usize, alpha: f64) -> Result<Array1<f64>> {
    check_alpha(alpha)?;
    if i >= users.rows() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: users.rows(),
        });
    }
    Ok(users.row(i).mapv(|x| (1.0 - alpha) * x))
}

/// Gradient of `M[i][j]` with respect to `U_i`: `(1 - alpha) V_j`.
pub fn affinity_grad_user(items: &EmbeddingMatrix, j: usize, alpha: f64) -> Result<Array1<f64>> {
    check_alpha(alpha)?;
    if j >= items.rows() {
        return Err(Error::IndexOutOfRange {
            index: j,
            len: items.rows(),
        });
    }
    Ok(items.row(j).mapv(|x| (1.0 - alpha) * x))
}
