//! Final F1 as a function of the entropic regularization.

use simca::datagen::generate_dataset;
use simca::experiment::{mean_f1_by_grid, sweep, sweep_to_csv, ExperimentConfig, SweepParam};
use simca::plot::sweep_svg;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig {
        n: 300,
        sweep_param: SweepParam::Epsilon,
        epsilon_values: vec![0.05, 0.1, 0.5, 1.0, 2.0],
        repeats: 3,
        ..ExperimentConfig::default()
    };
    let ds = generate_dataset(&cfg.gen_config())?;
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let rows = sweep(&ds, &cfg, jobs)?;

    for (eps, f1) in mean_f1_by_grid(&rows) {
        println!("eps {eps:<5} mean f1 {f1:.3}");
    }
    let dir = std::env::temp_dir().join("simca-eps-sweep");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("sweep.csv"), sweep_to_csv(&rows))?;
    std::fs::write(dir.join("sweep.svg"), sweep_svg(&rows))?;
    println!("rows and chart in {}", dir.display());
    Ok(())
}
