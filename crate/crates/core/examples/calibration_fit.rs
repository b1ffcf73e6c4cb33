//! Fit the margins of a single instance against a known conditional p*;
//! the fitted classifier probabilities follow p*^(beta/(beta-1)).

use mgce::objective::calibration_fit;

fn main() -> mgce::Result<()> {
    let p_star = [0.5, 0.3, 0.2];
    for beta in [1.2, 2.0, 5.0] {
        let fit = calibration_fit(&p_star, beta)?;
        println!(
            "beta {beta}: h* = {:.4?} after {} steps, |h* - target| = {:.1e}, argmax kept: {}",
            &*fit.h_star, fit.iterations, fit.h_error, fit.argmax_match
        );
    }
    Ok(())
}
