//! GCE is not convex in the margins; the minimax loss is.

use mgce::baselines::{self, LossKind};
use mgce::loss::{self, LossParams};

fn main() -> mgce::Result<()> {
    let beta = 1.4;
    let gce = baselines::scan_midpoint_convexity(|f, y| Ok(baselines::gce_loss_and_grad(f, y, beta)?.0), 2, 10_000, 5.0, 0.0, 3)?;
    let params = LossParams::new(beta)?;
    let mgce = baselines::scan_midpoint_convexity(|f, y| loss::margin_loss(f, y, &params), 2, 10_000, 5.0, 4e-4, 3)?;
    println!("GCE:  {} of {} midpoints above the chord", gce.violations, gce.pairs);
    if let Some(v) = gce.worst {
        println!("      a {:.3?}  b {:.3?}  label {}: {:.4} > {:.4}", v.a, v.b, v.label, v.midpoint_loss, v.chord_loss);
    }
    println!("MGCE: {} of {}", mgce.violations, mgce.pairs);

    let f = [1.0, -0.5, 0.2];
    for kind in [LossKind::Mgce, LossKind::Gce, LossKind::Ce, LossKind::Mae] {
        let (l, g) = kind.loss_and_grad(&f, 1, &params)?;
        println!("{kind:<5} loss {l:.4}  grad {:.4?}", &*g);
    }
    Ok(())
}
