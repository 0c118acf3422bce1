//! The two solvers on a small instance: the exact capacity-constrained
//! assignment, and entropic transport at several regularization strengths.

use ndarray::array;
use simca::lap::{round_coupling, solve_lap};
use simca::sinkhorn::{entropy, extend_with_slack, ot_value, solve_ot, StopRule};
use simca::CapacityVector;

fn main() -> simca::Result<()> {
    let scores = array![
        [0.9, 0.1, 0.3],
        [0.8, 0.2, 0.1],
        [0.7, 0.6, 0.0],
        [0.2, 0.5, 0.4],
        [0.1, 0.3, 0.8],
    ];
    // one spare seat: a virtual row absorbs it in the transport problem
    let caps = CapacityVector::new(vec![2, 2, 2])?;

    let exact = solve_lap(scores.view(), &caps)?;
    println!("assignment {:?}, objective {:.3}", exact.matching.as_slice(), exact.objective);

    for eps in [0.05, 0.2, 1.0] {
        let inst = extend_with_slack(scores.view(), &caps, eps)?;
        let solved = solve_ot(&inst, StopRule::converged())?;
        let users = solved.user_coupling();
        let rounded = round_coupling(&users, &caps)?;
        println!(
            "eps {eps}: {} iterations, entropy {:.3}, value {:.3}, rounded {:?}",
            solved.iterations,
            entropy(&solved.coupling)?,
            ot_value(inst.affinity.view(), &solved.coupling, eps)?,
            rounded.as_slice()
        );
        println!("  unused capacity {:.3?}", solved.slack_row().map(|r| r.to_vec()));
    }
    Ok(())
}
