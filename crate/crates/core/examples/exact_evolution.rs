//! Exact Dicke-sector evolution of the cat state next to the order-2 flow.
//!
//! ```bash
//! cargo run --release --example exact_evolution
//! ```

use ctc_lab::analysis::{run_trajectory, SweepGenerator};
use ctc_lab::series::{Generator, Observable};
use ctc_lab::spin::StateFamily;

pub fn run_example() -> ctc_lab::Result<()> {
    let exact = SweepGenerator { generator: Generator::Exact, n: Some(40) };
    let flow = SweepGenerator { generator: Generator::Cumulant2, n: None };
    let obs = vec![Observable::mz(), Observable::chi(2, 2)];
    let ex = run_trajectory(StateFamily::Cat, exact, 2.5, 1.0, 5.0, 0.5, (None, None), Some(obs))?;
    let c2 = run_trajectory(StateFamily::Cat, flow, 2.5, 1.0, 5.0, 0.5, (None, None), None)?;

    println!("{:>5} {:>12} {:>12} {:>12}", "t", "mz (N=40)", "mz (ord 2)", "chi_zz N=40");
    let (a, b, c) = (ex.require(Observable::mz())?, c2.require(Observable::mz())?, ex.require(Observable::chi(2, 2))?);
    for (k, t) in ex.times.iter().enumerate() {
        println!("{t:>5.1} {:>12.6} {:>12.6} {:>12.6}", a[k], b[k], c[k]);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> ctc_lab::Result<()> {
    run_example()
}
