//! Tracks the slow rotating modes across N and extrapolates them in 1/N.

use ctc_lab::cli::spectral_observable;
use ctc_lab::liouville::{build_liouvillian, scale_tracked, spectral_decompose, spectral_weights, track_modes};
use ctc_lab::series::Observable;
use ctc_lab::spin::{ModelParams, StateFamily};

pub fn run_example() -> ctc_lab::Result<()> {
    let grid = [8u32, 10, 12, 14, 16];
    let state = StateFamily::Scs { theta: std::f64::consts::FRAC_PI_4, phi: 0.0 };
    let mut decs = Vec::new();
    let mut weights = Vec::new();
    for &n in &grid {
        let params = ModelParams::new(n, 2.5, 1.0)?;
        let dec = spectral_decompose(&build_liouvillian(&params)?)?;
        let op = spectral_observable(Observable::mz(), &params)?;
        weights.push(spectral_weights(&dec, &state.build(&params)?.data.view(), &op.view())?);
        decs.push((n, dec.without_vectors()));
    }
    let refs: Vec<_> = decs.iter().map(|(n, d)| (*n, d)).collect();
    let tracks = track_modes(&refs, 4, None, Some(&weights))?;
    for m in scale_tracked(&tracks, 2)? {
        println!(
            "Im λ → {:.5} (residual {:.1e}), Re λ → {:+.2e}; Re λ at N = {}: {:+.4}",
            m.im_fit.a0(),
            m.im_fit.residual,
            m.re_fit.a0(),
            grid[0],
            m.track.alphas()[0]
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> ctc_lab::Result<()> {
    run_example()
}
