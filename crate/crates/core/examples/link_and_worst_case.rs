//! Classifier probabilities, the matching worst-case distribution, and the
//! closed-form maps between them.

use mgce::loss::{self, LossParams};

fn show(name: &str, v: &[f64]) {
    let cells: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    println!("  {name:<8} [{}]", cells.join(", "));
}

fn main() -> mgce::Result<()> {
    let margins = [0.6, 0.2, 0.0, -0.3];
    for beta in [1.0, 1.4, 3.0, 1e6] {
        let params = LossParams::new(beta)?;
        let sol = loss::solve_link(&margins, &params)?;
        println!("beta {beta}");
        show("h", &sol.h);
        show("p", &sol.p);
        if beta > 1.0 && !params.is_ce_mode() {
            show("p from h", &loss::worst_case_from_probs(&sol.h, beta)?);
            show("h from p", &loss::probs_from_worst_case(&sol.p, beta)?);
        }
    }
    show("softmax", &loss::softmax(&margins));

    // p_y exceeds h_y exactly below the threshold Z^-beta
    let beta = 2.0;
    let h = [0.5, 0.3, 0.15, 0.05];
    let p = loss::worst_case_from_probs(&h, beta)?;
    let z: f64 = h.iter().map(|v: &f64| v.powf((beta - 1.0) / beta)).sum();
    println!("crossover Z^-beta = {:.4}", z.powf(-beta));
    for (hy, py) in h.iter().zip(p.iter()) {
        println!("  h {hy:.3} -> p {py:.4} ({})", if py > hy { "raised" } else { "lowered" });
    }
    Ok(())
}
