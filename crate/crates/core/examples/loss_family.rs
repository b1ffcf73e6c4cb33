//! The probability losses between MAE (beta = 1) and CE (beta -> inf),
//! their sandwich bounds, and the margin loss they induce.

use mgce::loss::{self, LossParams};

fn main() -> mgce::Result<()> {
    println!("{:>6} {:>8} {:>8} {:>8} {:>8} {:>8}", "h_y", "MAE", "b=1.4", "b=2", "b=10", "CE");
    for h in [0.01, 0.1, 0.3, 0.5, 0.8, 0.99] {
        let l = |b: f64| loss::alpha_probability_loss(h, &LossParams::new(b).unwrap()).unwrap();
        println!(
            "{h:>6} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            1.0 - h,
            l(1.4),
            l(2.0),
            l(10.0),
            loss::alpha_probability_loss(h, &LossParams::cross_entropy())?
        );
    }
    for (beta, k) in [(1.0, 10), (1.4, 10), (4.0, 10)] {
        let (lo, hi) = loss::class_sum_bounds(beta, k);
        println!("beta {beta}, k {k}: sum over classes in [{lo:.4}, {hi:.4}]");
    }
    for beta in [1.2, 2.0, 8.0] {
        let params = LossParams::new(beta)?;
        let f = [0.3, -0.1, 0.0];
        println!("margin loss beta {beta}: label 0 -> {:.4}, label 1 -> {:.4}", loss::margin_loss(&f, 0, &params)?, loss::margin_loss(&f, 1, &params)?);
    }
    println!("alpha 3 is beta {}", loss::beta_from_alpha(3.0)?);
    Ok(())
}
