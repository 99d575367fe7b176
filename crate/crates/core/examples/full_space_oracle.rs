//! Checks the Dicke-sector solver against brute-force evolution of all 2^N amplitudes.

use ctc_lab::cli::oracle_mz_deviation;
use ctc_lab::spin::StateFamily;

pub fn run_example() -> ctc_lab::Result<()> {
    let families = [StateFamily::Cat, StateFamily::Coherent { theta: 0.7, phi: 0.0 }];
    for n in [3u32, 5] {
        let dev = oracle_mz_deviation(n, 2.5, &families, 4.0, 0.1)?;
        for (f, d) in families.iter().zip(dev) {
            println!("N = {n}, {}: max |Δm_z| = {d:.1e}", f.label());
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> ctc_lab::Result<()> {
    run_example()
}
