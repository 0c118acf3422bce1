//! Learning item embeddings from an observed matching.
//!
//! Each epoch builds the affinity matrix from the current embeddings, runs a
//! fixed number of Sinkhorn rounds and takes one Adam step along
//!
//! ```text
//! grad_V L = (1/eps) * sum_ij (pi - sigma)[i][j] * grad_V M[i][j]
//!          = ((1 - alpha)/eps) * (pi - sigma)^T U
//! ```
//!
//! where `L = -sum_i log pi[i][sigma(i)]`. The expression is exact when `pi` is
//! the optimal regularized coupling. With spare capacity the transport problem
//! carries a virtual row; the expression is then the exact gradient of the
//! cross-entropy against the matching extended with that row's residual
//! capacities (see [`extended_cross_entropy`]).

use ndarray::{s, Array2, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lap::round_coupling;
use crate::metrics::{f1_scores, mean_embedding_distance};
use crate::model::{
    check_alpha, check_epsilon, compute_affinity, CapacityVector, Coupling, Dataset,
    DistanceMatrix, EmbeddingMatrix, PureMatching,
};
use crate::sinkhorn::{extend_with_slack, ot_value, solve_ot, SinkhornResult, StopRule};

const ITEM_STREAM: u64 = 11;
const USER_STREAM: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Rows drawn uniformly on the unit sphere.
    #[default]
    UnitSphereRandom,
    /// Independent standard normal entries.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub sinkhorn_iters: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub joint_users: bool,
    pub init_scheme: InitScheme,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epsilon: 0.1,
            alpha: 0.3,
            sinkhorn_iters: 10,
            learning_rate: 0.01,
            epochs: 400,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            joint_users: false,
            init_scheme: InitScheme::UnitSphereRandom,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon)?;
        check_alpha(self.alpha)?;
        if self.sinkhorn_iters == 0 {
            return Err(Error::param("sinkhorn_iters", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate", "must be positive"));
        }
        for (name, beta) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::param(name, format!("{beta} is outside [0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::param("adam_eps", "must be positive"));
        }
        Ok(())
    }
}

/// One row of training history, measured before that epoch's update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub f1_micro: f64,
    pub f1_macro: f64,
    pub mean_embed_dist: Option<f64>,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first(&self) -> Option<&EpochRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub items: EmbeddingMatrix,
    /// Learned user embeddings in joint mode.
    pub users: Option<EmbeddingMatrix>,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Array2<f64>,
    pub second_moment: Array2<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(shape: (usize, usize)) -> Self {
        AdamState {
            first_moment: Array2::zeros(shape),
            second_moment: Array2::zeros(shape),
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamParams {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update, applied in place.
pub fn adam_step(
    params: &mut Array2<f64>,
    grad: ArrayView2<'_, f64>,
    state: &mut AdamState,
    adam: AdamParams,
) -> Result<()> {
    if params.dim() != grad.dim()
        || params.dim() != state.first_moment.dim()
        || params.dim() != state.second_moment.dim()
    {
        return Err(Error::shape(
            "adam step",
            format!("{:?}", params.dim()),
            format!("{:?}", grad.dim()),
        ));
    }
    state.step += 1;
    let step = state.step as i32;
    let correct1 = 1.0 - adam.beta1.powi(step);
    let correct2 = 1.0 - adam.beta2.powi(step);
    Zip::from(params)
        .and(&grad)
        .and(&mut state.first_moment)
        .and(&mut state.second_moment)
        .for_each(|p, &g, m, v| {
            *m = adam.beta1 * *m + (1.0 - adam.beta1) * g;
            *v = adam.beta2 * *v + (1.0 - adam.beta2) * g * g;
            let m_hat = *m / correct1;
            let v_hat = *v / correct2;
            *p -= adam.learning_rate * m_hat / (v_hat.sqrt() + adam.eps);
        });
    Ok(())
}

fn user_block<'a>(sigma: &PureMatching, pi: &'a Coupling) -> Result<ArrayView2<'a, f64>> {
    let values = pi.values();
    if values.nrows() < sigma.len() {
        return Err(Error::shape("coupling rows", sigma.len(), values.nrows()));
    }
    Ok(values.slice_move(s![..sigma.len(), ..]))
}

/// `-sum_i log pi[i][sigma(i)]` over real users. Rows of `pi` beyond the
/// matching's length (the virtual slack row) are ignored.
pub fn cross_entropy_loss(sigma: &PureMatching, pi: &Coupling) -> Result<f64> {
    let block = user_block(sigma, pi)?;
    let mut loss = 0.0;
    for (i, &j) in sigma.as_slice().iter().enumerate() {
        if j >= block.ncols() {
            return Err(Error::IndexOutOfRange {
                index: j,
                len: block.ncols(),
            });
        }
        let p = block[[i, j]];
        if !(p > 0.0) {
            return Err(Error::Domain(format!(
                "matched entry ({i}, {j}) of the coupling is not positive"
            )));
        }
        loss -= p.ln();
    }
    Ok(loss)
}

/// The matching as a transport plan for the slack-extended problem: the 0/1
/// user rows plus, when `s(C) > n`, a virtual row holding each item's unused
/// capacity.
pub fn extended_assignment(sigma: &PureMatching, caps: &CapacityVector) -> Result<Array2<f64>> {
    sigma.check_feasible(caps)?;
    let n = sigma.len();
    let m = caps.len();
    let slack = caps.total() > n;
    let mut out = Array2::zeros((if slack { n + 1 } else { n }, m));
    out.slice_mut(s![..n, ..]).assign(&sigma.to_matrix(m));
    if slack {
        let counts = sigma.counts(m);
        for j in 0..m {
            out[[n, j]] = (caps.as_slice()[j] - counts[j]) as f64;
        }
    }
    Ok(out)
}

/// Cross-entropy of the extended assignment against the full coupling,
/// `-sum_ij sigma_ext[i][j] log pi[i][j]`. Equals [`cross_entropy_loss`] when
/// `s(C) = n`.
pub fn extended_cross_entropy(
    sigma: &PureMatching,
    caps: &CapacityVector,
    pi: &Coupling,
) -> Result<f64> {
    let target = extended_assignment(sigma, caps)?;
    if target.dim() != pi.shape() {
        return Err(Error::shape(
            "extended coupling",
            format!("{:?}", target.dim()),
            format!("{:?}", pi.shape()),
        ));
    }
    let mut loss = 0.0;
    for (&t, &p) in target.iter().zip(pi.values().iter()) {
        if t > 0.0 {
            loss -= t * p.ln();
        }
    }
    Ok(loss)
}

/// The right-hand side of the loss identity,
/// `-s(C) + (V_eps(M) - <sigma, M>) / eps`, evaluated at a solved coupling.
pub fn loss_from_value(
    affinity: ArrayView2<'_, f64>,
    sigma: &PureMatching,
    caps: &CapacityVector,
    solved: &SinkhornResult,
    epsilon: f64,
) -> Result<f64> {
    let inst = extend_with_slack(affinity, caps, epsilon)?;
    let value = ot_value(inst.affinity.view(), &solved.coupling, epsilon)?;
    let matched: f64 = sigma
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &j)| affinity[[i, j]])
        .sum();
    Ok(-(caps.total() as f64) + (value - matched) / epsilon)
}

fn residual(sigma: &PureMatching, pi: &Coupling) -> Result<Array2<f64>> {
    let block = user_block(sigma, pi)?;
    let mut diff = block.to_owned();
    for (i, &j) in sigma.as_slice().iter().enumerate() {
        if j >= diff.ncols() {
            return Err(Error::IndexOutOfRange {
                index: j,
                len: diff.ncols(),
            });
        }
        diff[[i, j]] -= 1.0;
    }
    Ok(diff)
}

/// `G_j = ((1 - alpha)/eps) * sum_i (pi - sigma)[i][j] U_i`, an `m x d` matrix.
pub fn loss_gradient_items(
    users: &EmbeddingMatrix,
    sigma: &PureMatching,
    pi: &Coupling,
    alpha: f64,
    epsilon: f64,
) -> Result<Array2<f64>> {
    check_alpha(alpha)?;
    check_epsilon(epsilon)?;
    if users.rows() != sigma.len() {
        return Err(Error::shape("user embeddings", sigma.len(), users.rows()));
    }
    let diff = residual(sigma, pi)?;
    Ok(diff.t().dot(&users.values()) * ((1.0 - alpha) / epsilon))
}

/// `G_i = ((1 - alpha)/eps) * sum_j (pi - sigma)[i][j] V_j`, an `n x d` matrix.
pub fn loss_gradient_users(
    items: &EmbeddingMatrix,
    sigma: &PureMatching,
    pi: &Coupling,
    alpha: f64,
    epsilon: f64,
) -> Result<Array2<f64>> {
    check_alpha(alpha)?;
    check_epsilon(epsilon)?;
    let diff = residual(sigma, pi)?;
    if items.rows() != diff.ncols() {
        return Err(Error::shape("item embeddings", diff.ncols(), items.rows()));
    }
    Ok(diff.dot(&items.values()) * ((1.0 - alpha) / epsilon))
}

/// Loss terms at one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    /// Cross-entropy over real users.
    pub loss: f64,
    /// Cross-entropy including the virtual row; the quantity the analytic
    /// gradient differentiates.
    pub extended_loss: f64,
    pub solved: SinkhornResult,
}

/// Solves the transport problem for the given embeddings and reports both
/// loss variants.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_loss(
    users: &EmbeddingMatrix,
    items: &EmbeddingMatrix,
    distances: &DistanceMatrix,
    caps: &CapacityVector,
    sigma: &PureMatching,
    alpha: f64,
    epsilon: f64,
    stop: StopRule,
) -> Result<LossEval> {
    let scores = compute_affinity(users, items, distances, alpha)?;
    let inst = extend_with_slack(scores.view(), caps, epsilon)?;
    let solved = solve_ot(&inst, stop)?;
    Ok(LossEval {
        loss: cross_entropy_loss(sigma, &solved.coupling)?,
        extended_loss: extended_cross_entropy(sigma, caps, &solved.coupling)?,
        solved,
    })
}

pub(crate) fn init_embeddings(
    rows: usize,
    dim: usize,
    scheme: InitScheme,
    seed: u64,
    stream: u64,
) -> EmbeddingMatrix {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut values = Array2::from_shape_simple_fn((rows, dim), || rng.sample::<f64, _>(StandardNormal));
    if scheme == InitScheme::UnitSphereRandom {
        for mut row in values.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|x| x / norm);
            } else {
                row.fill(0.0);
                row[0] = 1.0;
            }
        }
    }
    EmbeddingMatrix::new(values).expect("normal draws are finite")
}

fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>()
}

/// Runs `config.epochs` rounds of: affinity, fixed-length Sinkhorn, analytic
/// gradient, Adam update. History rows describe the parameters before each
/// update; F1 compares the LAP rounding of that epoch's coupling with the
/// dataset's matching.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    dataset.validate()?;
    config.validate()?;
    let (n, m, d) = (dataset.n_users(), dataset.n_items(), dataset.dim());
    let caps = &dataset.capacities;
    let sigma = &dataset.matching;

    let mut items = init_embeddings(m, d, config.init_scheme, config.seed, ITEM_STREAM).into_inner();
    let mut users = if config.joint_users {
        init_embeddings(n, d, config.init_scheme, config.seed, USER_STREAM).into_inner()
    } else {
        dataset.users.values().to_owned()
    };
    let mut item_state = AdamState::new(items.dim());
    let mut user_state = AdamState::new(users.dim());
    let adam = AdamParams {
        learning_rate: config.learning_rate,
        beta1: config.adam_beta1,
        beta2: config.adam_beta2,
        eps: config.adam_eps,
    };

    let mut history = TrainHistory::default();
    for epoch in 0..config.epochs {
        let item_emb = EmbeddingMatrix::new(items.clone())?;
        let user_emb = EmbeddingMatrix::new(users.clone())?;
        let scores = compute_affinity(&user_emb, &item_emb, &dataset.distances, config.alpha)?;
        let inst = extend_with_slack(scores.view(), caps, config.epsilon)?;
        let solved = solve_ot(&inst, StopRule::Iterations(config.sinkhorn_iters))?;
        let pi = solved.user_coupling();

        let loss = cross_entropy_loss(sigma, &pi)?;
        let item_grad = loss_gradient_items(&user_emb, sigma, &pi, config.alpha, config.epsilon)?;
        let user_grad = if config.joint_users {
            Some(loss_gradient_users(&item_emb, sigma, &pi, config.alpha, config.epsilon)?)
        } else {
            None
        };
        let grad_norm = (frobenius(&item_grad) + user_grad.as_ref().map_or(0.0, frobenius)).sqrt();

        let recovered = round_coupling(&pi, caps)?;
        let f1 = f1_scores(sigma, &recovered, m)?;
        let mean_embed_dist = dataset
            .items_truth
            .as_ref()
            .map(|truth| mean_embedding_distance(&item_emb, truth))
            .transpose()?;
        history.records.push(EpochRecord {
            epoch,
            loss,
            f1_micro: f1.micro,
            f1_macro: f1.macro_avg,
            mean_embed_dist,
            grad_norm,
        });

        adam_step(&mut items, item_grad.view(), &mut item_state, adam)?;
        if let Some(grad) = user_grad {
            adam_step(&mut users, grad.view(), &mut user_state, adam)?;
        }
    }

    Ok(TrainOutcome {
        items: EmbeddingMatrix::new(items)?,
        users: if config.joint_users {
            Some(EmbeddingMatrix::new(users)?)
        } else {
            None
        },
        history,
    })
}
