//! Train the same small MLP with each loss on a noisy mixture.

use mgce::baselines::LossKind;
use mgce::data::{self, SplitSpec};
use mgce::train::{self, TrainConfig};
use mgce::Model;

fn main() -> mgce::Result<()> {
    let (clean, test) = data::synth_train_test(4, 8, 3000, 1000, 1.5, 0)?;
    let (noisy, _) = data::inject_symmetric_noise(&clean, 0.4, 2)?;
    let (tr, va) = data::split(&noisy, SplitSpec::default())?;
    for loss in [LossKind::Mgce, LossKind::Gce, LossKind::Ce, LossKind::Mae] {
        let cfg = TrainConfig { loss, lr: 0.01, epochs: 15, ..TrainConfig::default() };
        let out = train::train(Model::mlp(8, 64, 4, 0), &tr, Some(&va), Some(&test), &cfg, |_| Ok(()))?;
        let best = out.best_record();
        println!(
            "{loss:<5} best epoch {:>2}: test acc {:.3}, SCE {:.4}, MAE risk {:.3}",
            best.epoch,
            best.test_accuracy.unwrap_or(f64::NAN),
            best.sce.unwrap_or(f64::NAN),
            best.mae_risk.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
