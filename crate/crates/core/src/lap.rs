//! Capacity-constrained linear assignment.
//!
//! Every user goes to exactly one item and item `j` takes at most `C[j]`
//! users; the solver maximizes the total score. Conceptually each item is
//! expanded into `C[j]` identical unit-capacity slots, giving a rectangular
//! `n x s(C)` assignment problem solved by shortest augmenting paths with dual
//! potentials. Slots of one item are interchangeable, so [`solve_lap`] keeps
//! them merged and runs the augmenting-path search over items, which keeps the
//! cost at `O(n * m)` per user instead of `O(n * s(C))`.
//! [`solve_lap_slots`] runs the literal slot expansion and serves as a second
//! exact route; [`brute_force_lap`] enumerates.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::model::{CapacityVector, Coupling, PureMatching};

/// Upper bound on the number of matchings [`brute_force_lap`] will enumerate.
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

#[derive(Debug, Clone, PartialEq)]
pub struct LapSolution {
    pub matching: PureMatching,
    /// `sum_i M[i][sigma(i)]`, accumulated in user order.
    pub objective: f64,
}

fn check_instance(scores: &ArrayView2<'_, f64>, caps: &CapacityVector) -> Result<()> {
    if scores.ncols() != caps.len() {
        return Err(Error::shape("score matrix columns", caps.len(), scores.ncols()));
    }
    caps.check_feasible(scores.nrows())?;
    if scores.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("assignment scores must be finite".into()));
    }
    Ok(())
}

pub(crate) fn objective(scores: &ArrayView2<'_, f64>, assign: &[usize]) -> f64 {
    assign
        .iter()
        .enumerate()
        .fold(0.0, |acc, (i, &j)| acc + scores[[i, j]])
}

/// Exact maximum-score matching under per-item capacities.
///
/// Users are inserted one at a time; each insertion follows the cheapest
/// chain of reassignments that ends at an item with spare capacity. Items
/// carry a price `q[j] >= 0` that is zero whenever the item has room, and
/// every assigned user sits on an item minimizing `cost + q`.
pub fn solve_lap(scores: ArrayView2<'_, f64>, caps: &CapacityVector) -> Result<LapSolution> {
    check_instance(&scores, caps)?;
    let (n, m) = scores.dim();
    let cap = caps.as_slice();
    let cost = |i: usize, j: usize| -scores[[i, j]];

    let mut assign = vec![usize::MAX; n];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut price = vec![0.0f64; m];

    // best_move[j][k]: cheapest (cost[i][k] - cost[i][j]) over users i on j
    let mut best_move = vec![f64::INFINITY; m * m];
    let mut best_user = vec![usize::MAX; m * m];
    let mut dist = vec![0.0f64; m];
    // predecessor item in the chain; None means the new user enters directly
    let mut pred: Vec<Option<usize>> = vec![None; m];
    let mut done = vec![false; m];

    for s in 0..n {
        best_move.fill(f64::INFINITY);
        for (j, users) in members.iter().enumerate() {
            for &i in users {
                let base = cost(i, j);
                for k in 0..m {
                    if k == j {
                        continue;
                    }
                    let delta = cost(i, k) - base;
                    if delta < best_move[j * m + k] {
                        best_move[j * m + k] = delta;
                        best_user[j * m + k] = i;
                    }
                }
            }
        }

        for j in 0..m {
            dist[j] = cost(s, j) + price[j];
            pred[j] = None;
            done[j] = false;
        }

        let terminal = loop {
            let mut next = usize::MAX;
            for j in 0..m {
                if !done[j] && (next == usize::MAX || dist[j] < dist[next]) {
                    next = j;
                }
            }
            // s(C) >= n guarantees a non-full item is reachable
            debug_assert!(next != usize::MAX);
            done[next] = true;
            if members[next].len() < cap[next] {
                break next;
            }
            for k in 0..m {
                let step = best_move[next * m + k];
                if done[k] || !step.is_finite() {
                    continue;
                }
                let candidate = dist[next] + step + price[k] - price[next];
                if candidate < dist[k] {
                    dist[k] = candidate;
                    pred[k] = Some(next);
                }
            }
        };

        let reach = dist[terminal];
        for j in 0..m {
            if done[j] && dist[j] < reach {
                price[j] += reach - dist[j];
            }
        }

        // Walk the chain back: the user that moved out of `from` into `to`.
        let mut to = terminal;
        while let Some(from) = pred[to] {
            let mover = best_user[from * m + to];
            let slot = members[from]
                .iter()
                .position(|&u| u == mover)
                .expect("mover is a member of its item");
            members[from].swap_remove(slot);
            members[to].push(mover);
            assign[mover] = to;
            to = from;
        }
        members[to].push(s);
        assign[s] = to;
    }

    let objective = objective(&scores, &assign);
    Ok(LapSolution {
        matching: PureMatching::new(assign),
        objective,
    })
}

/// Minimum-cost rectangular assignment (`rows <= cols`) by shortest augmenting
/// paths with row/column potentials. Returns the column of each row.
pub fn linear_sum_assignment(cost: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
    let (nr, nc) = cost.dim();
    if nr > nc {
        return Err(Error::shape("assignment matrix", "rows <= cols", format!("{nr}x{nc}")));
    }
    if cost.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("assignment costs must be finite".into()));
    }

    let mut u = vec![0.0f64; nr];
    let mut v = vec![0.0f64; nc];
    let mut col4row = vec![usize::MAX; nr];
    let mut row4col = vec![usize::MAX; nc];
    let mut path = vec![usize::MAX; nc];
    let mut shortest = vec![f64::INFINITY; nc];
    let mut scanned_rows = vec![false; nr];
    let mut scanned_cols = vec![false; nc];
    let mut remaining: Vec<usize> = Vec::with_capacity(nc);

    for cur_row in 0..nr {
        shortest.fill(f64::INFINITY);
        scanned_rows.fill(false);
        scanned_cols.fill(false);
        remaining.clear();
        remaining.extend(0..nc);

        let mut min_val = 0.0;
        let mut i = cur_row;
        let sink = loop {
            scanned_rows[i] = true;
            let mut index = usize::MAX;
            for (it, &j) in remaining.iter().enumerate() {
                let r = min_val + cost[[i, j]] - u[i] - v[j];
                if r < shortest[j] {
                    path[j] = i;
                    shortest[j] = r;
                }
                // lowest reduced cost, then free columns, then lowest index
                let better = index == usize::MAX || {
                    let k = remaining[index];
                    let key = |c: usize| (shortest[c], row4col[c] != usize::MAX, c);
                    key(j) < key(k)
                };
                if better {
                    index = it;
                }
            }
            let lowest = shortest[remaining[index]];
            min_val = lowest;
            let j = remaining.swap_remove(index);
            scanned_cols[j] = true;
            if row4col[j] == usize::MAX {
                break j;
            }
            i = row4col[j];
        };

        u[cur_row] += min_val;
        for r in 0..nr {
            if scanned_rows[r] && r != cur_row {
                u[r] += min_val - shortest[col4row[r]];
            }
        }
        for c in 0..nc {
            if scanned_cols[c] {
                v[c] -= min_val - shortest[c];
            }
        }

        let mut j = sink;
        loop {
            let r = path[j];
            row4col[j] = r;
            let prev = col4row[r];
            col4row[r] = j;
            if r == cur_row {
                break;
            }
            j = prev;
        }
    }
    Ok(col4row)
}

/// The same problem as [`solve_lap`], solved on the explicit slot expansion:
/// item `j` becomes `C[j]` unit columns and unused slots absorb slack.
pub fn solve_lap_slots(scores: ArrayView2<'_, f64>, caps: &CapacityVector) -> Result<LapSolution> {
    check_instance(&scores, caps)?;
    let n = scores.nrows();
    let slot_item: Vec<usize> = caps
        .as_slice()
        .iter()
        .enumerate()
        .flat_map(|(j, &c)| std::iter::repeat_n(j, c))
        .collect();
    let cost = Array2::from_shape_fn((n, slot_item.len()), |(i, s)| -scores[[i, slot_item[s]]]);
    let cols = linear_sum_assignment(cost.view())?;
    let assign: Vec<usize> = cols.into_iter().map(|s| slot_item[s]).collect();
    let objective = objective(&scores, &assign);
    Ok(LapSolution {
        matching: PureMatching::new(assign),
        objective,
    })
}

/// Number of maps `[n] -> [m]` with at most `caps[j]` users per item.
pub fn count_matchings(n: usize, caps: &[usize]) -> f64 {
    // ways[r]: assignments of r distinguishable users to the items seen so far
    let mut ways = vec![0.0f64; n + 1];
    ways[0] = 1.0;
    for &c in caps {
        let mut next = vec![0.0f64; n + 1];
        for (r, next_r) in next.iter_mut().enumerate() {
            let mut binom = 1.0;
            for k in 0..=c.min(r) {
                if k > 0 {
                    binom = binom * (r - k + 1) as f64 / k as f64;
                }
                *next_r += binom * ways[r - k];
            }
        }
        ways = next;
    }
    ways[n]
}

/// Exhaustive search over every feasible matching. Ties go to the
/// lexicographically smallest assignment vector.
pub fn brute_force_lap(scores: ArrayView2<'_, f64>, caps: &CapacityVector) -> Result<LapSolution> {
    check_instance(&scores, caps)?;
    let n = scores.nrows();
    let count = count_matchings(n, caps.as_slice());
    if count > BRUTE_FORCE_LIMIT {
        return Err(Error::InstanceTooLarge {
            count,
            limit: BRUTE_FORCE_LIMIT,
        });
    }

    struct Search<'a> {
        scores: ArrayView2<'a, f64>,
        left: Vec<usize>,
        current: Vec<usize>,
        best: Option<(f64, Vec<usize>)>,
    }

    impl Search<'_> {
        fn go(&mut self, i: usize, acc: f64) {
            if i == self.current.len() {
                if self.best.as_ref().is_none_or(|(b, _)| acc > *b) {
                    self.best = Some((acc, self.current.clone()));
                }
                return;
            }
            for j in 0..self.left.len() {
                if self.left[j] == 0 {
                    continue;
                }
                self.left[j] -= 1;
                self.current[i] = j;
                self.go(i + 1, acc + self.scores[[i, j]]);
                self.left[j] += 1;
            }
        }
    }

    let mut search = Search {
        scores,
        left: caps.as_slice().to_vec(),
        current: vec![0; n],
        best: None,
    };
    search.go(0, 0.0);
    let (objective, assign) = search.best.expect("feasible instance has a matching");
    Ok(LapSolution {
        matching: PureMatching::new(assign),
        objective,
    })
}

/// Recovers a pure matching from a fractional coupling by solving the
/// assignment problem with the coupling entries as scores.
pub fn round_coupling(pi: &Coupling, caps: &CapacityVector) -> Result<PureMatching> {
    if pi.values().iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Domain("coupling must be strictly positive".into()));
    }
    Ok(solve_lap(pi.values(), caps)?.matching)
}
