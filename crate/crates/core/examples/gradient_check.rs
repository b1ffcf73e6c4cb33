//! Implicit gradients against central differences.

use mgce::gradients::{self, run_gradcheck, GradCheckConfig};
use mgce::loss::{self, LossParams};

fn main() -> mgce::Result<()> {
    let params = LossParams::new(1.8)?;
    let f = [0.4, -0.3, 1.1];
    let (value, grad) = gradients::margin_loss_and_grad(&f, 2, &params)?;
    println!("loss {value:.6}, gradient {:?} (sums to {:.1e})", &*grad, grad.iter().sum::<f64>());
    println!("worst case {:?}", &*loss::worst_case_from_margins(&f, &params)?);

    for beta in [1.05, 1.4, 5.0, 1e6] {
        let report = run_gradcheck(&GradCheckConfig::new(beta, 10, 6, 50, 1))?;
        println!(
            "beta {beta:>9}: margin err {:.2e}, param err {:.2e}, threshold {:.0e} -> {}",
            report.max_margin_error,
            report.max_param_error,
            report.threshold,
            if report.passed { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
