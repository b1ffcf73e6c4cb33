//! Accuracy, MAE risk and static calibration error on hand-made predictions.

use mgce::metrics::{self, SceConfig};

fn main() -> mgce::Result<()> {
    let probs = vec![
        vec![0.9, 0.05, 0.05],
        vec![0.6, 0.3, 0.1],
        vec![0.2, 0.7, 0.1],
        vec![0.1, 0.1, 0.8],
        vec![0.4, 0.35, 0.25],
        vec![0.05, 0.9, 0.05],
    ];
    let labels = [0, 1, 1, 2, 2, 1];
    println!("accuracy {:.3}", metrics::accuracy(&probs, &labels)?);
    println!("MAE risk {:.3}", metrics::mae_risk(&probs, &labels)?);
    let cfg = SceConfig { bins: 5 };
    println!("SCE      {:.3}", metrics::sce(&probs, &labels, cfg)?);
    for bin in metrics::sce_table(&probs, &labels, cfg)?.iter().filter(|b| b.count > 0) {
        println!(
            "  class {} bin {} [{:.1}, {:.1}]: n {} freq {:.2} conf {:.2}",
            bin.class, bin.bin, bin.lower, bin.upper, bin.count, bin.frequency, bin.confidence
        );
    }
    Ok(())
}
