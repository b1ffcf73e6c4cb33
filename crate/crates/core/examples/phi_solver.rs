//! Solve the implicit potential for a few margin vectors and show how the
//! bisection bracket shrinks.

use mgce::harness;
use mgce::loss::{self, LossParams};

fn main() -> mgce::Result<()> {
    let margins = [1.5, 0.2, -0.7, 0.0];
    println!("margins {margins:?}");
    for beta in [1.0, 1.4, 2.0, 5.0, 50.0, 1e6] {
        let params = LossParams::new(beta)?;
        let sol = loss::solve_phi(&margins, &params)?;
        let (lo, hi) = sol.initial_bracket;
        println!(
            "beta {beta:>9}: phi {:+.6}  start [{lo:+.4}, {hi:+.4}]  {} iterations (bound {})  F(phi) = {:.6}",
            sol.phi,
            sol.iterations,
            harness::iteration_bound(hi - lo, params.bisect_tol),
            loss::constraint_value(&margins, beta, sol.phi),
        );
    }

    // tighter tolerance, same root
    let coarse = loss::solve_phi(&margins, &LossParams::new(2.0)?)?;
    let fine = loss::solve_phi(&margins, &LossParams::with_tol(2.0, loss::TIGHT_BISECT_TOL)?)?;
    println!("beta 2: phi {:.12} at tol 1e-4, {:.12} at tol {:e}", coarse.phi, fine.phi, loss::TIGHT_BISECT_TOL);
    println!("CE mode uses -logsumexp: {:.6}", -loss::log_sum_exp(&margins));
    Ok(())
}
