//! Acceptance run: one PASS/FAIL line per criterion, tolerances pinned below.
//! With `CTC_ACCEPTANCE_STRICT=1` the process exits non-zero when any
//! criterion is red; otherwise the summary line carries the verdict so that
//! a workspace test run still reaches the targets after this one.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4, FRAC_PI_6};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ctc_lab::analysis::{
    fourier_spectrum, overlay_comparison, run_trajectory, steepest_interval, sweep_order_parameter,
    SpectrumResult, SweepGenerator, SweepSpec, Window,
};
use ctc_lab::cli::{oracle_mz_deviation, spectral_observable};
use ctc_lab::flows::{cumulant2_rhs, cumulant3_rhs, meanfield_rhs, FlowParams};
use ctc_lab::lindblad::{evolve_exact, EvolutionSpec};
use ctc_lab::liouville::{
    build_liouvillian, reconstruct_series, scale_tracked, spectral_decompose, spectral_weights,
    track_modes, ModeWeight, SpectralDecomposition,
};
use ctc_lab::oracle::pair_correlation_ladder;
use ctc_lab::series::{Generator, Observable, TimeSeries};
use ctc_lab::spin::{
    build_collective_ops, coherent_second_cumulants, coherent_state, raw_second_cumulants,
    CumulantState, ModelParams, StateFamily, PAIRS, TRIPLES,
};

// Criterion 1
const ORACLE_TOL: f64 = 1e-7;
const C1_BUDGET: f64 = 300.0;
// Criterion 2
const MEANFIELD_ZERO_TOL: f64 = 1e-12;
const RMS_AT_200: f64 = 0.05;
const C2_BUDGET: f64 = 600.0;
// Criterion 3
const SUPPRESSION: f64 = 5.0;
const SLOPE_WINDOW: (f64, f64) = (0.8, 1.2);
const SWEEP_AGREEMENT: f64 = 0.1;
const C3_BUDGET: f64 = 1200.0;
// Criterion 4
const CONSERVATION_TOL: f64 = 1e-8;
const C4_BUDGET: f64 = 120.0;
// Criterion 5
const PAIR_TOL: f64 = 1e-9;
const RE_TOL: f64 = 1e-9;
const ZERO_TOL: f64 = 1e-9;
const BIORTH_TOL: f64 = 1e-8;
const RECON_TOL: f64 = 1e-6;
const C5_BUDGET: f64 = 900.0;
// Criterion 6
const RESIDUAL_FACTOR: f64 = 3.0;
const PEAK_BINS: f64 = 1.0;
const C6_BUDGET: f64 = 900.0;
// Criterion 7
const CLOSED_FORM_TOL: f64 = 1e-10;
const C7_BUDGET: f64 = 60.0;
// Criterion 8
const CAT_ZZ_TOL: f64 = 1e-12;
const C8_BUDGET: f64 = 60.0;
// Criterion 9
const HIERARCHY_TOL: f64 = 1e-14;
const C9_BUDGET: f64 = 60.0;

const RATIO: f64 = 2.5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: u8, name: &str, budget: f64, elapsed: Duration, out: Outcome) -> bool {
    let secs = elapsed.as_secs_f64();
    let in_time = secs < budget;
    let pass = out.pass && in_time;
    println!(
        "criterion {id} {} {name}: {} [{secs:.1} s, budget {budget:.0} s{}]",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        if in_time { "" } else { ", over budget" }
    );
    pass
}

fn run<F: FnOnce() -> Outcome>(id: u8, name: &str, budget: f64, f: F) -> bool {
    let t = Instant::now();
    let out = f();
    report(id, name, budget, t.elapsed(), out)
}

fn fail(e: impl std::fmt::Display) -> Outcome {
    Outcome {
        pass: false,
        detail: format!("error: {e}"),
    }
}

macro_rules! tryo {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return fail(e),
        }
    };
}

fn symmetric_families() -> Vec<StateFamily> {
    vec![
        StateFamily::Cat,
        StateFamily::Coherent { theta: 0.0, phi: 0.0 },
        StateFamily::Coherent { theta: FRAC_PI_4, phi: 0.0 },
        StateFamily::Coherent { theta: FRAC_PI_2, phi: 0.0 },
        StateFamily::Scs { theta: FRAC_PI_4, phi: 0.0 },
    ]
}

fn flow(g: Generator) -> SweepGenerator {
    SweepGenerator { generator: g, n: None }
}

fn exact(n: u32) -> SweepGenerator {
    SweepGenerator {
        generator: Generator::Exact,
        n: Some(n),
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn criterion1() -> Outcome {
    let families = symmetric_families();
    let mut worst: f64 = 0.0;
    let mut at = (0, 0.0);
    for n in [4u32, 6, 8, 10] {
        for r in [0.5, 2.5] {
            let devs = tryo!(oracle_mz_deviation(n, r, &families, 10.0, 0.05));
            for d in devs {
                if d > worst {
                    worst = d;
                    at = (n, r);
                }
            }
        }
    }
    Outcome {
        pass: worst <= ORACLE_TOL,
        detail: format!(
            "max |Δm_z| = {worst:.2e} at N = {}, Ω/κ = {} (tol {ORACLE_TOL:.0e}; 5 states × 4 N × 2 ratios)",
            at.0, at.1
        ),
    }
}

fn criterion2() -> Outcome {
    let t_end = 20.0;
    let dt = 0.05;
    let mf = tryo!(run_trajectory(StateFamily::Cat, flow(Generator::Meanfield), RATIO, 1.0, t_end, dt, (None, None), None));
    let mf_max = mf.columns.iter().map(|(_, v)| max_abs(v)).fold(0.0, f64::max);
    let c2 = tryo!(run_trajectory(StateFamily::Cat, flow(Generator::Cumulant2), RATIO, 1.0, t_end, dt, (None, None), None));
    let c2_mz = tryo!(c2.require(Observable::mz())).to_vec();
    let c2_max = max_abs(&c2_mz);
    let mut rms = Vec::new();
    for n in [50u32, 100, 200] {
        let ex = tryo!(run_trajectory(
            StateFamily::Cat,
            exact(n),
            RATIO,
            1.0,
            t_end,
            dt,
            (None, None),
            Some(vec![Observable::mz()])
        ));
        let e = tryo!(ex.require(Observable::mz()));
        let ss: f64 = e.iter().zip(&c2_mz).map(|(a, b)| (a - b).powi(2)).sum();
        rms.push(ss / e.len() as f64);
    }
    let rms: Vec<f64> = rms.into_iter().map(f64::sqrt).collect();
    let decreasing = rms.windows(2).all(|w| w[1] < w[0]);
    let pass = mf_max <= MEANFIELD_ZERO_TOL && c2_max > 1e-3 && decreasing && rms[2] <= RMS_AT_200;
    Outcome {
        pass,
        detail: format!(
            "mean-field max |x| = {mf_max:.1e}; order-2 max |m_z| = {c2_max:.3}; RMS(exact − order 2) at N = 50, 100, 200: {:.4}, {:.4}, {:.4} (≤ {RMS_AT_200} at 200, strictly decreasing: {decreasing})",
            rms[0], rms[1], rms[2]
        ),
    }
}

fn criterion3() -> Outcome {
    let spec = SweepSpec {
        family: StateFamily::Cat,
        generators: vec![flow(Generator::Meanfield), flow(Generator::Cumulant2), exact(200)],
        ratios: (1..=10).map(|k| 0.2 * k as f64).collect(),
        kappa: 1.0,
        observable: Observable::mz(),
        t_end: 100.0,
        window: Some((50.0, 100.0)),
        sample_dt: 0.05,
        rel_tol: None,
        abs_tol: None,
    };
    let res = tryo!(sweep_order_parameter(&spec));
    if !res.failures.is_empty() {
        return fail(res.failures.join("; "));
    }
    let col = |k: usize| -> Vec<f64> { res.columns[k].averages.iter().map(|a| a.unwrap_or(f64::NAN)).collect() };
    let (mf, c2, ex) = (col(0), col(1), col(2));
    let mf_max = max_abs(&mf);
    let i04 = res.ratios.iter().position(|r| (r - 0.4).abs() < 1e-9).unwrap();
    let i20 = res.ratios.len() - 1;
    let suppressed = c2[i04].abs() >= SUPPRESSION * c2[i20].abs();
    let (slope, lo, hi) = steepest_interval(&res.ratios, &c2).unwrap();
    let located = lo >= SLOPE_WINDOW.0 - 1e-9 && hi <= SLOPE_WINDOW.1 + 1e-9;
    let gap = c2.iter().zip(&ex).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Outcome {
        pass: mf_max <= MEANFIELD_ZERO_TOL && suppressed && located && gap <= SWEEP_AGREEMENT,
        detail: format!(
            "mean-field max |avg| = {mf_max:.1e}; |avg(0.4)| / |avg(2.0)| = {:.1} (≥ {SUPPRESSION}); steepest slope {slope:.2} on [{lo:.1}, {hi:.1}] (inside [{}, {}]); max |order 2 − exact N=200| = {gap:.3} (≤ {SWEEP_AGREEMENT})",
            c2[i04].abs() / c2[i20].abs(),
            SLOPE_WINDOW.0,
            SLOPE_WINDOW.1
        ),
    }
}

fn criterion4() -> Outcome {
    let mut worst2: f64 = 0.0;
    let mut worst1: f64 = 0.0;
    let mut runs = 0;
    for fam in symmetric_families() {
        for r in [0.5, 1.0, 2.5] {
            let t2 = tryo!(run_trajectory(fam, flow(Generator::Cumulant2), r, 1.0, 100.0, 0.05, (None, None), None));
            let s2 = tryo!(t2.require(Observable::S2Norm));
            worst2 = worst2.max(s2.iter().fold(0.0, |m, v| m.max((v - s2[0]).abs())));
            let t1 = tryo!(run_trajectory(fam, flow(Generator::Meanfield), r, 1.0, 100.0, 0.05, (None, None), None));
            let norm = bloch_norm(&t1);
            worst1 = worst1.max(norm.iter().fold(0.0, |m, v| m.max((v - norm[0]).abs())));
            runs += 2;
        }
    }
    Outcome {
        pass: worst2 <= CONSERVATION_TOL && worst1 <= CONSERVATION_TOL,
        detail: format!(
            "{runs} trajectories to t = 100/κ; order-2 max |Σm² + tr χ − initial| = {worst2:.1e}, order-1 max ||m|² drift| = {worst1:.1e} (tol {CONSERVATION_TOL:.0e})"
        ),
    }
}

fn bloch_norm(ts: &TimeSeries) -> Vec<f64> {
    let cols: Vec<&[f64]> = (0..3).map(|i| ts.get(Observable::M(i)).unwrap()).collect();
    (0..ts.len()).map(|k| cols.iter().map(|c| c[k] * c[k]).sum()).collect()
}

/// Decompositions at Ω/κ = 2.5 stripped of vectors, with the modal weights
/// needed for the scaling and overlay criterion.
struct Cached {
    n: u32,
    dec: SpectralDecomposition,
    mz: Vec<ModeWeight>,
    chi_zz: Vec<ModeWeight>,
}

fn weights_for(dec: &SpectralDecomposition, params: &ModelParams, obs: Observable) -> ctc_lab::Result<Vec<ModeWeight>> {
    let rho = StateFamily::Scs { theta: FRAC_PI_4, phi: 0.0 }.build(params)?;
    let op = spectral_observable(obs, params)?;
    spectral_weights(dec, &rho.data.view(), &op.view())
}

fn cache_entry(n: u32, dec: &SpectralDecomposition) -> ctc_lab::Result<Cached> {
    let params = ModelParams::new(n, RATIO, 1.0)?;
    Ok(Cached {
        n,
        mz: weights_for(dec, &params, Observable::mz())?,
        chi_zz: weights_for(dec, &params, Observable::chi(2, 2))?,
        dec: dec.without_vectors(),
    })
}

fn reconstruction_error(dec: &SpectralDecomposition, params: &ModelParams) -> ctc_lab::Result<f64> {
    let obs = [Observable::mx(), Observable::my(), Observable::mz(), Observable::chi(2, 2), Observable::chi(0, 2)];
    let spec = EvolutionSpec::new(10.0, 0.05)
        .with_tolerances(1e-12, 1e-14)
        .with_observables(obs.to_vec());
    let mut worst: f64 = 0.0;
    for fam in symmetric_families() {
        let rho = fam.build(params)?;
        let ex = evolve_exact(&rho, params, &spec)?;
        let rc = reconstruct_series(dec, &rho, &obs, &ex.times)?;
        for o in obs {
            for (a, b) in ex.require(o)?.iter().zip(rc.require(o)?) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(worst)
}

fn criterion5(cache: &mut Vec<Cached>) -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    let mut recon = Vec::new();
    for r in [0.5, 2.5] {
        for n in [10u32, 20, 40, 60] {
            let params = tryo!(ModelParams::new(n, r, 1.0));
            let dec = tryo!(build_liouvillian(&params).and_then(|l| spectral_decompose(&l)));
            let ax = dec.axioms(ZERO_TOL);
            let ok = ax.holds(PAIR_TOL, RE_TOL, BIORTH_TOL);
            pass &= ok;
            if !ok {
                lines.push(format!(
                    "Ω/κ = {r}, N = {n}: pair {:.1e}, max Re {:.1e}, zero modes {}, biorthogonality {:.1e}",
                    ax.conjugate_pair_error, ax.max_real_part, ax.zero_modes, ax.biorthogonality_residual
                ));
            }
            if n == 20 {
                let err = tryo!(reconstruction_error(&dec, &params));
                pass &= err <= RECON_TOL;
                recon.push(format!("{err:.1e} at Ω/κ = {r}"));
            }
            if r == RATIO {
                cache.push(tryo!(cache_entry(n, &dec)));
            }
        }
    }
    let axioms = if lines.is_empty() {
        "axioms hold at all 8 (N, Ω/κ) points".to_string()
    } else {
        format!("axioms violated: {}", lines.join("; "))
    };
    Outcome {
        pass,
        detail: format!(
            "{axioms}; reconstruction vs exact integration at N = 20: {} (tol {RECON_TOL:.0e})",
            recon.join(", ")
        ),
    }
}

fn nearest_bins(spec: &SpectrumResult, freq: f64, betas: &[f64]) -> f64 {
    betas.iter().map(|b| (freq - b).abs()).fold(f64::INFINITY, f64::min) / spec.bin_width
}

fn criterion6(cache: &mut Vec<Cached>) -> Outcome {
    for n in [30u32, 50] {
        let params = tryo!(ModelParams::new(n, RATIO, 1.0));
        let dec = tryo!(build_liouvillian(&params).and_then(|l| spectral_decompose(&l)));
        cache.push(tryo!(cache_entry(n, &dec)));
    }
    cache.sort_by_key(|c| c.n);
    let decs: Vec<(u32, &SpectralDecomposition)> = cache.iter().map(|c| (c.n, &c.dec)).collect();
    let weights: Vec<Vec<ModeWeight>> = cache.iter().map(|c| c.mz.clone()).collect();
    let tracks = tryo!(track_modes(&decs, 8, None, Some(&weights)));
    let scaling = tryo!(scale_tracked(&tracks, 4));
    let last = cache.last().unwrap();
    let weight_of = |ws: &[ModeWeight], k: usize| ws.iter().find(|w| w.index == k).map_or(0.0, |w| w.weight);

    // Leading modes: those the m_z or χ_zz overlay actually shows (weight ≥ 5%).
    let mut ratios = Vec::new();
    let mut re_pass = true;
    for m in &scaling {
        let k = *m.track.indices.last().unwrap();
        let w = weight_of(&last.mz, k).max(weight_of(&last.chi_zz, k));
        if w < ctc_lab::analysis::PEAK_THRESHOLD {
            continue;
        }
        let ratio = m.re_fit.a0().abs() / m.re_fit.residual;
        re_pass &= ratio <= RESIDUAL_FACTOR;
        ratios.push(format!(
            "β∞ = {:.4}: |a0| = {:.1e}, residual = {:.1e}, ratio {ratio:.0}",
            m.im_fit.a0(),
            m.re_fit.a0().abs(),
            m.re_fit.residual
        ));
    }
    let betas: Vec<f64> = scaling.iter().map(|m| m.im_fit.a0()).collect();
    let marks = |ws: &[ModeWeight]| -> Vec<(f64, f64)> {
        scaling
            .iter()
            .map(|m| (m.im_fit.a0(), weight_of(ws, *m.track.indices.last().unwrap())))
            .collect()
    };

    let scs = StateFamily::Scs { theta: FRAC_PI_4, phi: 0.0 };
    let c2 = tryo!(run_trajectory(scs, flow(Generator::Cumulant2), RATIO, 1.0, 400.0, 0.05, (None, None), None));
    let mf = tryo!(run_trajectory(scs, flow(Generator::Meanfield), RATIO, 1.0, 400.0, 0.05, (None, None), None));
    let s_mz = tryo!(fourier_spectrum(&c2, Observable::mz(), Window::Hann));
    let s_chi = tryo!(fourier_spectrum(&c2, Observable::chi(2, 2), Window::Hann));
    let s_mf = tryo!(fourier_spectrum(&mf, Observable::mz(), Window::Hann));
    let o_mz = tryo!(overlay_comparison(&s_mz, &marks(&last.mz)));
    let o_chi = tryo!(overlay_comparison(&s_chi, &marks(&last.chi_zz)));
    let peaks_pass = o_mz.peaks_within(PEAK_BINS) && o_chi.peaks_within(PEAK_BINS);
    let e2 = nearest_bins(&s_mz, s_mz.dominant().unwrap().freq, &betas);
    let e1 = nearest_bins(&s_mf, s_mf.dominant().unwrap().freq, &betas);
    Outcome {
        pass: re_pass && peaks_pass && e1 > e2,
        detail: format!(
            "scaling (μ = 4, N = 10..60) {}: {}; order-2 peaks within {:.3} (m_z, {} peaks) and {:.3} (χ_zz, {} peaks) bins of a0(Im) (≤ {PEAK_BINS}); dominant-peak error mean-field {e1:.2} bins vs order 2 {e2:.2} bins",
            if re_pass { "ok" } else { "|a0(Re)| exceeds 3 × residual" },
            ratios.join("; "),
            o_mz.max_peak_error_bins,
            o_mz.peaks.len(),
            o_chi.max_peak_error_bins,
            o_chi.peaks.len()
        ),
    }
}

fn criterion7() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut growth: f64 = 0.0;
    let mut printed_sign_off = 0;
    for theta in [0.0, FRAC_PI_6, FRAC_PI_3, FRAC_PI_2] {
        for phi in [0.0, FRAC_PI_4] {
            let mut scaled = Vec::new();
            for n in [32u32, 64, 128] {
                let params = tryo!(ModelParams::new(n, 1.0, 1.0));
                let ops = tryo!(build_collective_ops(&params));
                let raw = raw_second_cumulants(&tryo!(coherent_state(&params, theta, phi)), &ops);
                let cf = coherent_second_cumulants(theta, phi, params.spin());
                let mut biggest: f64 = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        worst = worst.max((raw[i][j] - cf[i][j]).norm());
                        biggest = biggest.max(raw[i][j].norm() * n as f64);
                    }
                }
                // The xz and yz entries as typeset carry the opposite sign.
                for (i, j) in [(0, 2), (1, 2)] {
                    if cf[i][j].norm() > 1e-12 && (raw[i][j] + cf[i][j]).norm() > CLOSED_FORM_TOL {
                        printed_sign_off += 1;
                    }
                }
                scaled.push(biggest);
            }
            for w in scaled.windows(2) {
                growth = growth.max(w[1] / w[0]);
            }
        }
    }
    Outcome {
        pass: worst <= CLOSED_FORM_TOL && growth <= 1.0 + 1e-9,
        detail: format!(
            "max |χ_ij − closed form| = {worst:.1e} (tol {CLOSED_FORM_TOL:.0e}) over 4 θ × 2 φ × 3 N; max growth of max|χ_ij|·N per doubling = {growth:.12}; xz/yz matched with the sign fixed by the stated Bloch vector ({printed_sign_off} entries differ from the typeset sign)"
        ),
    }
}

fn criterion8() -> Outcome {
    let ns = [6u32, 8, 10, 12];
    let mut parts = Vec::new();
    let mut pass = true;
    let mut cat_zz: f64 = 0.0;
    for fam in [StateFamily::Cat, StateFamily::Coherent { theta: FRAC_PI_3, phi: 0.0 }] {
        let mut c_max: f64 = 0.0;
        for &(a, b) in &PAIRS {
            let lad = tryo!(pair_correlation_ladder(&fam, a, b, &ns));
            c_max = c_max.max(lad.fitted_c);
            // C fitted at the smallest N must bound every larger N.
            let c0 = lad.reports[0].gap.abs() * ns[0] as f64;
            for r in &lad.reports {
                pass &= r.gap.abs() <= (c0 * (1.0 + 1e-9) + 1e-12) / r.n as f64;
            }
            if matches!(fam, StateFamily::Cat) && (a, b) == (2, 2) {
                cat_zz = lad.reports.iter().map(|r| r.gap.abs()).fold(0.0, f64::max);
            }
        }
        parts.push(format!("{}: C = {c_max:.4}", fam.label()));
    }
    pass &= cat_zz <= CAT_ZZ_TOL;
    Outcome {
        pass,
        detail: format!(
            "|χ_ij − 4·corr| ≤ C/N for all 6 axis pairs, N = 6..12 ({}); cat (z,z) max gap {cat_zz:.1e} (≤ {CAT_ZZ_TOL:.0e})",
            parts.join(", ")
        ),
    }
}

fn random_state(rng: &mut ChaCha8Rng, order: u8) -> CumulantState {
    let mut st = CumulantState::zeros(order).unwrap();
    for v in st.m.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    for &(i, j) in &PAIRS {
        st.set_chi_sym(i, j, rng.random_range(-0.5..0.5));
    }
    if order >= 3 {
        for &(i, j, k) in &TRIPLES {
            st.set_tau_sym(i, j, k, rng.random_range(-0.2..0.2));
        }
    }
    st
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut d21: f64 = 0.0;
    let mut chi_dot: f64 = 0.0;
    let mut d32: f64 = 0.0;
    for _ in 0..1000 {
        let p = tryo!(FlowParams::new(rng.random_range(0.0..3.0), rng.random_range(0.5..1.5)));
        let full = random_state(&mut rng, 3);

        let mut s2 = tryo!(full.with_order(2));
        s2.chi = [[0.0; 3]; 3];
        let s1 = tryo!(full.with_order(1));
        let r2 = tryo!(cumulant2_rhs(&s2, &p));
        let r1 = tryo!(meanfield_rhs(&s1, &p));
        d21 = d21.max(max_diff(&r2.m, &r1.m));
        chi_dot = chi_dot.max(r2.chi.iter().flatten().fold(0.0, |m, v| m.max(v.abs())));

        let mut s3 = full;
        s3.tau = [[[0.0; 3]; 3]; 3];
        let r3 = tryo!(cumulant3_rhs(&s3, &p));
        let r2b = tryo!(cumulant2_rhs(&tryo!(full.with_order(2)), &p));
        d32 = d32.max(max_diff(&r3.m, &r2b.m));
        for i in 0..3 {
            d32 = d32.max(max_diff(&r3.chi[i], &r2b.chi[i]));
        }
    }
    Outcome {
        pass: d21 <= HIERARCHY_TOL && chi_dot <= HIERARCHY_TOL && d32 <= HIERARCHY_TOL,
        detail: format!(
            "1000 random states: order 2 at χ = 0 vs order 1: {d21:.1e} (χ̇ block {chi_dot:.1e}); order 3 at τ = 0 vs order 2 (m and χ blocks): {d32:.1e} (tol {HIERARCHY_TOL:.0e})"
        ),
    }
}

fn main() -> ExitCode {
    let mut cache = Vec::new();
    let results = [
        run(1, "exact vs full-space oracle", C1_BUDGET, criterion1),
        run(2, "cat-state trajectories", C2_BUDGET, criterion2),
        run(3, "order-parameter sweep", C3_BUDGET, criterion3),
        run(4, "strong-symmetry invariant", C4_BUDGET, criterion4),
        run(5, "Liouvillian spectral axioms", C5_BUDGET, || criterion5(&mut cache)),
        run(6, "scaling and spectral overlay", C6_BUDGET, || criterion6(&mut cache)),
        run(7, "coherent-state closed forms", C7_BUDGET, criterion7),
        run(8, "pair-correlation equivalence", C8_BUDGET, criterion8),
        run(9, "hierarchy consistency", C9_BUDGET, criterion9),
    ];
    let red = results.iter().filter(|p| !**p).count();
    println!(
        "acceptance: {} of {} criteria pass{}",
        results.len() - red,
        results.len(),
        if red == 0 { "" } else { " (RED)" }
    );
    let strict = std::env::var("CTC_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if red == 0 || !strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
