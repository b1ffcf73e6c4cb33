//! CSV in, standardized splits with label noise out.

use mgce::data::{self, SplitSpec};
use mgce::harness;

fn main() -> mgce::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let ds = data::synth_gaussian_mixture(4, 3, 400, 1.5, 9)?;
    let path = dir.path().join("train.csv");
    harness::write_csv(&ds, &path)?;
    let loaded = data::load_csv(&path, "label")?;
    println!("loaded {} rows, {} features, {} classes", loaded.n(), loaded.d(), loaded.k);

    let (noisy, flipped) = data::inject_symmetric_noise(&loaded, 0.3, 1)?;
    println!("flipped {} labels", flipped.iter().filter(|&&f| f).count());
    let (train, val) = data::split(&noisy, SplitSpec { val_fraction: 0.1, seed: 0 })?;
    let (train, others) = data::standardize(&train, &[&val])?;
    let col0: Vec<f64> = train.features.column(0).to_vec();
    let mean = col0.iter().sum::<f64>() / col0.len() as f64;
    println!("train {} / val {}; first feature mean after scaling {mean:.1e}", train.n(), others[0].n());
    Ok(())
}
