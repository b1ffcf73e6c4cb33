//! Feature expectations, their spread, and the minimax objective value.

use mgce::data;
use mgce::loss::LossParams;
use mgce::objective::{self, estimate_stats_kronecker};
use mgce::Model;

fn main() -> mgce::Result<()> {
    let ds = data::synth_gaussian_mixture(3, 2, 500, 2.0, 4)?;
    let lambda0 = objective::lambda0_from_confidence(ds.k * ds.d(), 0.05)?;
    let stats = estimate_stats_kronecker(ds.features.view(), &ds.labels, ds.k, lambda0)?.with_delta(0.05);
    println!("lambda0 {lambda0:.4} (m = {}, delta = 0.05)", stats.m);
    println!("tau    {:.3?}", stats.tau);
    println!("s      {:.3?}", stats.s);
    let params = LossParams::new(1.4)?;
    let mut model = Model::linear(ds.d(), ds.k);
    for scale in [0.0, 0.5, 1.0] {
        let mu: Vec<f64> = stats.tau.iter().map(|t| scale * t).collect();
        model.set_mu_flat(&mu)?;
        let v = objective::evaluate_objective(&model, &stats, ds.features.view(), &params)?;
        println!(
            "mu = {scale} * tau: V = {:.4} ({:+.4} tau, {:+.4} lambda, {:+.4} potential)",
            v.v_beta, v.term_tau, v.term_lambda, v.term_phi_mean
        );
    }
    Ok(())
}
