//! Robustness to noisy user embeddings and to a corrupted observed matching.

use simca::datagen::{apply_swap_noise, generate_dataset};
use simca::experiment::{mean_f1_by_grid, sweep, ExperimentConfig, SweepParam};

fn main() -> simca::Result<()> {
    let base = ExperimentConfig {
        n: 300,
        repeats: 3,
        ..ExperimentConfig::default()
    };
    let ds = generate_dataset(&base.gen_config())?;

    let swapped = apply_swap_noise(&ds.matching, 0.2, 1)?;
    println!(
        "swap noise 0.2 relabels {} of {} users",
        swapped.matching.hamming(&ds.matching),
        ds.n_users()
    );

    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    for (param, grid) in [
        (SweepParam::GaussRho, vec![0.0, 0.2, 0.4, 0.6]),
        (SweepParam::SwapRho, vec![0.0, 0.1, 0.2, 0.4]),
    ] {
        let cfg = ExperimentConfig {
            sweep_param: param,
            rho_values: grid,
            ..base.clone()
        };
        let rows = sweep(&ds, &cfg, jobs)?;
        for (rho, f1) in mean_f1_by_grid(&rows) {
            println!("{param} {rho:<4} mean f1 {f1:.3}");
        }
    }
    Ok(())
}
