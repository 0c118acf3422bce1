//! Entropy-regularized optimal transport between users and item capacities.
//!
//! Solves `max_pi <pi, M> + eps * H(pi)` over couplings with row sums 1 and
//! column sums `C`. The optimum factors as `pi[i][j] = a_i exp(M[i][j]/eps) b_j`;
//! the scalings are computed in the log domain so small `eps` never
//! overflows.
//!
//! When the total capacity exceeds the number of users, a virtual user row
//! with zero affinity and mass `s(C) - n` absorbs the unused capacity.

use ndarray::{Array1, Array2, ArrayView2, Axis, s};

use crate::error::{Error, Result};
use crate::model::{check_epsilon, CapacityVector, Coupling};

/// Default marginal tolerance for converged solves.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;
/// Default iteration cap for converged solves.
pub const DEFAULT_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct OtInstance {
    /// Affinities, with the virtual row appended when present.
    pub affinity: Array2<f64>,
    pub row_masses: Array1<f64>,
    pub col_masses: Array1<f64>,
    pub epsilon: f64,
    /// Number of real users; rows beyond this index are virtual.
    pub users: usize,
}

impl OtInstance {
    pub fn has_slack_row(&self) -> bool {
        self.affinity.nrows() > self.users
    }

    /// Same transport problem at a different regularization strength.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(OtInstance {
            epsilon,
            ..self.clone()
        })
    }
}

/// Builds the balanced transport instance for affinities `M` and capacities `C`,
/// adding a zero-affinity virtual row of mass `s(C) - n` when `s(C) > n`.
pub fn extend_with_slack(
    affinity: ArrayView2<'_, f64>,
    caps: &CapacityVector,
    epsilon: f64,
) -> Result<OtInstance> {
    check_epsilon(epsilon)?;
    let (n, m) = affinity.dim();
    if m != caps.len() {
        return Err(Error::shape("affinity columns", caps.len(), m));
    }
    caps.check_feasible(n)?;
    if affinity.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("affinities must be finite".into()));
    }
    let slack = caps.total() - n;
    let rows = if slack > 0 { n + 1 } else { n };
    let mut extended = Array2::zeros((rows, m));
    extended.slice_mut(s![..n, ..]).assign(&affinity);
    let mut row_masses = Array1::ones(rows);
    if slack > 0 {
        row_masses[n] = slack as f64;
    }
    Ok(OtInstance {
        affinity: extended,
        row_masses,
        col_masses: caps.to_masses(),
        epsilon,
        users: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Exactly this many row/column update rounds.
    Iterations(usize),
    /// Stop once the largest marginal violation is at most `tolerance`.
    Tolerance { tolerance: f64, max_iters: usize },
}

impl StopRule {
    pub fn converged() -> Self {
        StopRule::Tolerance {
            tolerance: DEFAULT_TOLERANCE,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornResult {
    /// Full coupling, including the virtual row when present.
    pub coupling: Coupling,
    pub log_a: Array1<f64>,
    pub log_b: Array1<f64>,
    pub iterations: usize,
    /// Largest absolute deviation of any row or column sum from its mass.
    pub marginal_error: f64,
    /// False when a tolerance target was not met within `max_iters`.
    pub converged: bool,
    users: usize,
}

impl SinkhornResult {
    /// The `n x m` block of real users; its rows still sum to one.
    pub fn user_coupling(&self) -> Coupling {
        let values = self.coupling.values().slice(s![..self.users, ..]).to_owned();
        Coupling::new(values).expect("sub-block of a valid coupling")
    }

    /// Transported mass of the virtual row, if any.
    pub fn slack_row(&self) -> Option<Array1<f64>> {
        let values = self.coupling.values();
        (values.nrows() > self.users).then(|| values.row(self.users).to_owned())
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Alternating log-domain Sinkhorn scaling, starting from `log_b = 0`.
pub fn solve_ot(inst: &OtInstance, stop: StopRule) -> Result<SinkhornResult> {
    check_epsilon(inst.epsilon)?;
    let (rows, cols) = inst.affinity.dim();
    if inst.row_masses.len() != rows || inst.col_masses.len() != cols {
        return Err(Error::shape(
            "marginals",
            format!("{rows}+{cols}"),
            format!("{}+{}", inst.row_masses.len(), inst.col_masses.len()),
        ));
    }
    if inst.row_masses.iter().chain(&inst.col_masses).any(|&x| !(x > 0.0)) {
        return Err(Error::Domain("marginal masses must be positive".into()));
    }

    let kernel = inst.affinity.mapv(|x| x / inst.epsilon);
    let log_r = inst.row_masses.mapv(f64::ln);
    let log_c = inst.col_masses.mapv(f64::ln);
    let mut log_a = Array1::<f64>::zeros(rows);
    let mut log_b = Array1::<f64>::zeros(cols);

    let (limit, tolerance) = match stop {
        StopRule::Iterations(k) => (k, None),
        StopRule::Tolerance {
            tolerance,
            max_iters,
        } => (max_iters, Some(tolerance)),
    };

    let mut iterations = 0;
    let mut marginal_error = f64::INFINITY;
    while iterations < limit {
        for i in 0..rows {
            let row = kernel.row(i);
            let lse = log_sum_exp(row.iter().zip(&log_b).map(|(k, b)| k + b));
            log_a[i] = log_r[i] - lse;
        }
        for j in 0..cols {
            let col = kernel.column(j);
            let lse = log_sum_exp(col.iter().zip(&log_a).map(|(k, a)| k + a));
            log_b[j] = log_c[j] - lse;
        }
        iterations += 1;
        if let Some(tol) = tolerance {
            marginal_error = marginal_violation(&kernel, &log_a, &log_b, inst);
            if marginal_error <= tol {
                break;
            }
        }
    }

    let plan = Array2::from_shape_fn((rows, cols), |(i, j)| {
        (log_a[i] + kernel[[i, j]] + log_b[j]).exp()
    });
    let coupling = Coupling::new(plan)?;
    if tolerance.is_none() || iterations == 0 {
        marginal_error = marginal_error_of(&coupling, inst);
    }
    let converged = tolerance.is_none_or(|tol| marginal_error <= tol);
    Ok(SinkhornResult {
        coupling,
        log_a,
        log_b,
        iterations,
        marginal_error,
        converged,
        users: inst.users,
    })
}

fn marginal_violation(
    kernel: &Array2<f64>,
    log_a: &Array1<f64>,
    log_b: &Array1<f64>,
    inst: &OtInstance,
) -> f64 {
    let (rows, cols) = kernel.dim();
    let mut row_sums = Array1::<f64>::zeros(rows);
    let mut col_sums = Array1::<f64>::zeros(cols);
    for i in 0..rows {
        for j in 0..cols {
            let p = (log_a[i] + kernel[[i, j]] + log_b[j]).exp();
            row_sums[i] += p;
            col_sums[j] += p;
        }
    }
    max_deviation(&row_sums, &inst.row_masses).max(max_deviation(&col_sums, &inst.col_masses))
}

fn marginal_error_of(coupling: &Coupling, inst: &OtInstance) -> f64 {
    max_deviation(&coupling.row_sums(), &inst.row_masses)
        .max(max_deviation(&coupling.col_sums(), &inst.col_masses))
}

fn max_deviation(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `H(pi) = -sum pi (log pi - 1)`. Entries below `1e-300` contribute through
/// the limit `x (log x - 1) -> 0`.
pub fn entropy(pi: &Coupling) -> Result<f64> {
    let mut h = 0.0;
    for &x in pi.values().iter() {
        if !(x > 0.0) {
            return Err(Error::Domain(format!(
                "entropy needs strictly positive entries, found {x}"
            )));
        }
        if x >= 1e-300 {
            h -= x * (x.ln() - 1.0);
        }
    }
    Ok(h)
}

/// Regularized objective `<pi, M> + eps H(pi)`; at the optimal coupling this
/// is the optimal value `V_eps(M)`.
pub fn ot_value(affinity: ArrayView2<'_, f64>, pi: &Coupling, epsilon: f64) -> Result<f64> {
    if affinity.dim() != pi.shape() {
        return Err(Error::shape(
            "coupling",
            format!("{:?}", affinity.dim()),
            format!("{:?}", pi.shape()),
        ));
    }
    let transport = (&affinity * &pi.values()).sum();
    Ok(transport + epsilon * entropy(pi)?)
}

/// Column sums of a coupling (item loads).
pub fn item_loads(pi: &Coupling) -> Array1<f64> {
    pi.values().sum_axis(Axis(0))
}
