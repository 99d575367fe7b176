//! Full Liouvillian spectrum at small N, its structural checks and the
//! modes an observable actually excites.

use ctc_lab::cli::spectral_observable;
use ctc_lab::liouville::{build_liouvillian, spectral_decompose, spectral_weights};
use ctc_lab::series::Observable;
use ctc_lab::spin::{ModelParams, StateFamily};

pub fn run_example() -> ctc_lab::Result<()> {
    let params = ModelParams::new(12, 2.5, 1.0)?;
    let dec = spectral_decompose(&build_liouvillian(&params)?)?;
    let ax = dec.axioms(1e-9);
    println!(
        "{} eigenvalues; pair error {:.1e}, max Re {:.1e}, zero modes {}, biorthogonality {:.1e}",
        dec.len(),
        ax.conjugate_pair_error,
        ax.max_real_part,
        ax.zero_modes,
        ax.biorthogonality_residual
    );

    let rho = StateFamily::Scs { theta: std::f64::consts::FRAC_PI_4, phi: 0.0 }.build(&params)?;
    let op = spectral_observable(Observable::mz(), &params)?;
    let mut w = spectral_weights(&dec, &rho.data.view(), &op.view())?;
    w.sort_by(|a, b| b.weight.total_cmp(&a.weight));
    println!("{:>12} {:>12} {:>8}", "Re λ", "Im λ", "weight");
    for m in w.iter().filter(|m| m.beta >= 0.0).take(6) {
        println!("{:>12.6} {:>12.6} {:>8.4}", m.alpha, m.beta, m.weight);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> ctc_lab::Result<()> {
    run_example()
}
