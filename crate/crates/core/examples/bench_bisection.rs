//! Solver cost as the class count grows.

use mgce::harness;

fn main() -> mgce::Result<()> {
    let rows = harness::cmd_bench_bisection(&[1.0, 1.4, 5.0, 1e6], &[2, 10, 100, 1000], 500, 3, 1e-4, 0)?;
    print!("{}", harness::format_bench(&rows));
    Ok(())
}
