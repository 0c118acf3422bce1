//! Generates a synthetic dataset and writes it as a bundle.
//!
//! ```text
//! cargo run --release --example generate_dataset -- [out_dir]
//! ```

use std::path::PathBuf;

use simca::bundle::write_bundle;
use simca::datagen::{generate_dataset, GenConfig};

fn main() -> simca::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("simca-bundle"));

    let cfg = GenConfig {
        n: 300,
        seed: 7,
        ..GenConfig::default()
    };
    let ds = generate_dataset(&cfg)?;
    write_bundle(&out, &ds, &cfg)?;

    let counts = ds.matching.counts(ds.n_items());
    println!("{} users, {} items in {} dims", ds.n_users(), ds.n_items(), ds.dim());
    println!("capacities {:?}, filled {:?}", ds.capacities.as_slice(), counts);
    println!("mean distance {:.3}", ds.distances.mean());
    println!("bundle written to {}", out.display());
    Ok(())
}
