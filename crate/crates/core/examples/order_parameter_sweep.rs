//! Long-time average of m_z against Ω/κ and the location of the steepest drop.

use ctc_lab::analysis::{steepest_interval, sweep_order_parameter, SweepGenerator, SweepSpec};
use ctc_lab::series::{Generator, Observable};
use ctc_lab::spin::StateFamily;

pub fn run_example() -> ctc_lab::Result<()> {
    let spec = SweepSpec {
        family: StateFamily::Cat,
        generators: vec![
            SweepGenerator { generator: Generator::Cumulant2, n: None },
            SweepGenerator { generator: Generator::Exact, n: Some(30) },
        ],
        ratios: (1..=10).map(|k| 0.2 * k as f64).collect(),
        kappa: 1.0,
        observable: Observable::mz(),
        t_end: 40.0,
        window: Some((20.0, 40.0)),
        sample_dt: 0.1,
        rel_tol: None,
        abs_tol: None,
    };
    let res = sweep_order_parameter(&spec)?;
    print!("{}", res.to_csv());
    let c2: Vec<f64> = res.columns[0].averages.iter().map(|a| a.unwrap_or(f64::NAN)).collect();
    if let Some((slope, lo, hi)) = steepest_interval(&res.ratios, &c2) {
        println!("steepest order-2 change {slope:.3} on [{lo:.1}, {hi:.1}]");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> ctc_lab::Result<()> {
    run_example()
}
