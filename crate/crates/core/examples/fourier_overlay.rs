//! Fourier spectrum of the order-2 m_z trajectory, overlaid with Liouvillian
//! frequencies from a small-N diagonalisation.

use ctc_lab::analysis::{fourier_spectrum, overlay_comparison, run_trajectory, SweepGenerator, Window};
use ctc_lab::cli::spectral_observable;
use ctc_lab::liouville::{build_liouvillian, spectral_decompose, spectral_weights};
use ctc_lab::series::{Generator, Observable};
use ctc_lab::spin::{ModelParams, StateFamily};

pub fn run_example() -> ctc_lab::Result<()> {
    let state = StateFamily::Scs { theta: std::f64::consts::FRAC_PI_4, phi: 0.0 };
    let flow = SweepGenerator { generator: Generator::Cumulant2, n: None };
    let ts = run_trajectory(state, flow, 2.5, 1.0, 200.0, 0.05, (None, None), None)?;
    let spec = fourier_spectrum(&ts, Observable::mz(), Window::Hann)?;
    for p in &spec.peaks {
        println!("peak at ω = {:.4} (amplitude {:.3})", p.freq, p.amp);
    }

    let params = ModelParams::new(16, 2.5, 1.0)?;
    let dec = spectral_decompose(&build_liouvillian(&params)?)?;
    let op = spectral_observable(Observable::mz(), &params)?;
    let w = spectral_weights(&dec, &state.build(&params)?.data.view(), &op.view())?;
    let marks: Vec<(f64, f64)> = w.iter().filter(|m| m.beta > 0.0).map(|m| (m.beta, m.weight)).collect();
    let report = overlay_comparison(&spec, &marks)?;
    println!("worst peak offset from N = 16 frequencies: {:.2} bins", report.max_peak_error_bins);
    Ok(())
}

#[allow(dead_code)]
fn main() -> ctc_lab::Result<()> {
    run_example()
}
