//! Learns item embeddings from an observed assignment and plots the run.
//!
//! ```text
//! cargo run --release --example train_items -- [out_dir]
//! ```

use std::path::PathBuf;

use simca::bundle::write_history;
use simca::datagen::{generate_dataset, GenConfig};
use simca::metrics::evaluate;
use simca::plot::{training_svg, TRAINING_SVG};
use simca::trainer::{train, TrainConfig};
use simca::AffinityParams;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("simca-train"));
    std::fs::create_dir_all(&out)?;

    let ds = generate_dataset(&GenConfig { n: 300, ..GenConfig::default() })?;
    let cfg = TrainConfig::default();
    let outcome = train(&ds, &cfg)?;

    for rec in outcome.history.records.iter().step_by(50) {
        println!(
            "epoch {:>3}  loss {:>8.3}  f1 {:.3}  |grad| {:.3}",
            rec.epoch, rec.loss, rec.f1_micro, rec.grad_norm
        );
    }
    let report = evaluate(&ds, &outcome.items, &ds.users, AffinityParams::new(cfg.alpha, cfg.epsilon)?)?;
    println!("recovered assignment: micro f1 {:.3}, macro f1 {:.3}", report.f1_micro, report.f1_macro);

    write_history(&out.join("history.csv"), &outcome.history)?;
    let svg = out.join(TRAINING_SVG);
    std::fs::write(&svg, training_svg(&outcome.history))?;
    println!("history and chart in {}", out.display());
    Ok(())
}
