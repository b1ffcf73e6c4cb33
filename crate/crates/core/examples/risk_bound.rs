//! Train a linear classifier on a two-class mixture and compare its test
//! MAE risk with the minimax value.

use mgce::data;
use mgce::objective;
use mgce::train::{self, TrainConfig};
use mgce::Model;

fn main() -> mgce::Result<()> {
    let (k, d) = (2, 10);
    let lambda0 = objective::lambda0_from_confidence(k * d, 0.05)?;
    for seed in 0..5 {
        let (tr, te) = data::synth_train_test(k, d, 2000, 2000, 2.0, seed)?;
        let cfg = TrainConfig { lambda0, lr: 0.01, epochs: 10, seed, ..TrainConfig::default() };
        let out = train::train(Model::linear(d, k), &tr, None, None, &cfg, |_| Ok(()))?;
        let r = objective::risk_bound_report(&out.final_model, &out.stats, te.features.view(), &te.labels, &cfg.loss_params()?)?;
        println!("seed {seed}: MAE risk {:.4} <= V {:.4}: {}", r.empirical_mae_risk, r.v_beta, r.bound_holds);
    }
    Ok(())
}
