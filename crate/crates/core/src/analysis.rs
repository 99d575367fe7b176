//! Long-time averages, order-parameter sweeps, Fourier spectra and the
//! comparison of spectral peaks against Liouvillian eigenfrequencies.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{evolve_flow_labeled, FlowParams, FlowSpec};
use crate::lindblad::{evolve_exact_labeled, EvolutionSpec};
use crate::series::{fmt_f64, Generator, Observable, TimeSeries};
use crate::spin::{thermodynamic_cumulants, ModelParams, StateFamily};

pub const PEAK_THRESHOLD: f64 = 0.05;
pub const MIN_SPECTRUM_SAMPLES: usize = 64;

/// Trapezoidal mean of `obs` over `[t_start, t_end]`, interpolating linearly
/// at window edges that fall between samples.
pub fn time_average(series: &TimeSeries, obs: Observable, t_start: f64, t_end: f64) -> Result<f64> {
    let v = series.require(obs)?;
    let t = &series.times;
    if !(t_end > t_start) {
        return Err(Error::Analysis(format!("empty averaging window [{t_start}, {t_end}]")));
    }
    let slack = 1e-9 * t_end.abs().max(1.0);
    if t.is_empty() || t_start < t[0] - slack || t_end > t[t.len() - 1] + slack {
        return Err(Error::Analysis(format!(
            "averaging window [{t_start}, {t_end}] is outside the series range"
        )));
    }
    let (a, b) = (t_start.max(t[0]), t_end.min(t[t.len() - 1]));
    let mut acc = 0.0;
    for k in 1..t.len() {
        let (t0, t1) = (t[k - 1], t[k]);
        let (lo, hi) = (t0.max(a), t1.min(b));
        if hi <= lo {
            continue;
        }
        let lerp = |x: f64| v[k - 1] + (v[k] - v[k - 1]) * (x - t0) / (t1 - t0);
        acc += 0.5 * (hi - lo) * (lerp(lo) + lerp(hi));
    }
    Ok(acc / (b - a))
}

/// One column of a sweep. `n` is set for exact dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGenerator {
    pub generator: Generator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
}

impl SweepGenerator {
    pub fn column_name(&self) -> String {
        match self.n {
            Some(n) => format!("{}_n{n}", self.generator.tag()),
            None => self.generator.tag().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub family: StateFamily,
    pub generators: Vec<SweepGenerator>,
    pub ratios: Vec<f64>,
    #[serde(default = "one")]
    pub kappa: f64,
    pub observable: Observable,
    pub t_end: f64,
    /// Defaults to `[t_end/2, t_end]`.
    #[serde(default)]
    pub window: Option<(f64, f64)>,
    pub sample_dt: f64,
    #[serde(default)]
    pub rel_tol: Option<f64>,
    #[serde(default)]
    pub abs_tol: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepColumn {
    pub generator: SweepGenerator,
    /// `None` where the point failed.
    pub averages: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub ratios: Vec<f64>,
    pub window: (f64, f64),
    pub columns: Vec<SweepColumn>,
    pub failures: Vec<String>,
}

impl SweepSpec {
    pub fn window(&self) -> (f64, f64) {
        self.window.unwrap_or((0.5 * self.t_end, self.t_end))
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() {
            return Err(Error::InvalidParameter("empty ratio grid".into()));
        }
        if self.ratios.windows(2).any(|w| w[0] >= w[1]) || self.ratios.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::InvalidParameter("ratio grid must be non-negative and ascending".into()));
        }
        if self.generators.is_empty() {
            return Err(Error::InvalidParameter("no generators requested".into()));
        }
        for g in &self.generators {
            match (g.generator, g.n) {
                (Generator::Exact, None) => {
                    return Err(Error::InvalidParameter("exact sweep column needs N".into()))
                }
                (Generator::Exact, Some(_)) | (_, None) => {}
                (_, Some(_)) => {
                    return Err(Error::InvalidParameter("flow columns take no N".into()))
                }
            }
            if let Some(order) = g.generator.order() {
                if self.observable.order() > order {
                    return Err(Error::InvalidParameter(format!(
                        "observable {} is not carried at order {order}",
                        self.observable
                    )));
                }
            }
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::InvalidParameter("kappa must be positive".into()));
        }
        self.family.validate()?;
        let (a, b) = self.window();
        if !(b > a) || a < 0.0 || b > self.t_end + 1e-9 {
            return Err(Error::InvalidParameter(format!("invalid averaging window [{a}, {b}]")));
        }
        if !(self.sample_dt > 0.0) || self.sample_dt > self.t_end {
            return Err(Error::InvalidParameter("invalid sample_dt".into()));
        }
        Ok(())
    }
}

/// One trajectory of any generator. Exact runs sample `observables`
/// (default: orders 1 and 2); flows sample every cumulant they carry.
#[allow(clippy::too_many_arguments)]
pub fn run_trajectory(
    family: StateFamily,
    g: SweepGenerator,
    omega: f64,
    kappa: f64,
    t_end: f64,
    sample_dt: f64,
    tolerances: (Option<f64>, Option<f64>),
    observables: Option<Vec<Observable>>,
) -> Result<TimeSeries> {
    match g.generator {
        Generator::Exact => {
            let n = g
                .n
                .ok_or_else(|| Error::InvalidParameter("exact dynamics needs N".into()))?;
            let params = ModelParams::new(n, omega, kappa)?;
            let rho = family.build(&params)?;
            let mut es = EvolutionSpec::new(t_end, sample_dt);
            if let Some(obs) = observables {
                es = es.with_observables(obs);
            }
            let (rtol, atol) = (tolerances.0.unwrap_or(es.rel_tol), tolerances.1.unwrap_or(es.abs_tol));
            let es = es.with_tolerances(rtol, atol);
            evolve_exact_labeled(&rho, &params, &es, Some(family))
        }
        other => {
            if g.n.is_some() {
                return Err(Error::InvalidParameter("flow generators take no N".into()));
            }
            let order = other.order().expect("flow generator");
            let init = thermodynamic_cumulants(&family, order)?;
            let mut fs = FlowSpec::new(order, FlowParams::new(omega, kappa)?, t_end, sample_dt);
            if let Some(r) = tolerances.0 {
                fs.rel_tol = r;
            }
            if let Some(a) = tolerances.1 {
                fs.abs_tol = a;
            }
            evolve_flow_labeled(&init, &fs, Some(family))
        }
    }
}

/// Runs one trajectory of the sweep.
pub fn sweep_point(spec: &SweepSpec, g: SweepGenerator, ratio: f64) -> Result<TimeSeries> {
    run_trajectory(
        spec.family,
        g,
        ratio * spec.kappa,
        spec.kappa,
        spec.t_end,
        spec.sample_dt,
        (spec.rel_tol, spec.abs_tol),
        Some(vec![spec.observable]),
    )
}

/// Long-time averages per ratio and generator. Failed points are logged
/// and left empty; the sweep fails only if every point fails.
pub fn sweep_order_parameter(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let (a, b) = spec.window();
    let jobs: Vec<(usize, usize)> = (0..spec.generators.len())
        .flat_map(|g| (0..spec.ratios.len()).map(move |r| (g, r)))
        .collect();
    let results: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(g, r)| {
            let ts = sweep_point(spec, spec.generators[g], spec.ratios[r])?;
            time_average(&ts, spec.observable, a, b)
        })
        .collect();
    let mut columns: Vec<SweepColumn> = spec
        .generators
        .iter()
        .map(|&g| SweepColumn {
            generator: g,
            averages: vec![None; spec.ratios.len()],
        })
        .collect();
    let mut failures = Vec::new();
    let mut last_err = None;
    for (&(g, r), res) in jobs.iter().zip(results) {
        match res {
            Ok(v) => columns[g].averages[r] = Some(v),
            Err(e) => {
                let msg = format!(
                    "{} at ratio {}: {e}",
                    spec.generators[g].column_name(),
                    spec.ratios[r]
                );
                log::error!("sweep point failed: {msg}");
                failures.push(msg);
                last_err = Some(e);
            }
        }
    }
    if failures.len() == jobs.len() {
        return Err(last_err.expect("at least one job"));
    }
    Ok(SweepResult {
        ratios: spec.ratios.clone(),
        window: (a, b),
        columns,
        failures,
    })
}

impl SweepResult {
    pub fn column(&self, name: &str) -> Option<&SweepColumn> {
        self.columns.iter().find(|c| c.generator.column_name() == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("ratio");
        for c in &self.columns {
            out.push(',');
            out.push_str(&c.generator.column_name());
        }
        out.push('\n');
        for (i, r) in self.ratios.iter().enumerate() {
            out.push_str(&fmt_f64(*r));
            for c in &self.columns {
                out.push(',');
                match c.averages[i] {
                    Some(v) => out.push_str(&fmt_f64(v)),
                    None => out.push_str("nan"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Largest finite-difference slope magnitude of a column and the grid
/// interval on which it occurs.
pub fn steepest_interval(ratios: &[f64], values: &[f64]) -> Option<(f64, f64, f64)> {
    ratios
        .windows(2)
        .zip(values.windows(2))
        .map(|(r, v)| (((v[1] - v[0]) / (r[1] - r[0])).abs(), r[0], r[1]))
        .max_by(|a, b| a.0.total_cmp(&b.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Rect,
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub freq: f64,
    pub amp: f64,
    pub bin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    /// Angular frequencies in units of κ, ascending from 0.
    pub freqs: Vec<f64>,
    pub amps: Vec<f64>,
    pub peaks: Vec<Peak>,
    pub window: Window,
    pub bin_width: f64,
    pub threshold: f64,
}

impl SpectrumResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("omega,amplitude\n");
        for (f, a) in self.freqs.iter().zip(&self.amps) {
            out.push_str(&fmt_f64(*f));
            out.push(',');
            out.push_str(&fmt_f64(*a));
            out.push('\n');
        }
        out
    }

    /// Highest peak, if any.
    pub fn dominant(&self) -> Option<Peak> {
        self.peaks.iter().copied().max_by(|a, b| a.amp.total_cmp(&b.amp))
    }
}

/// Mean-subtracted, windowed one-sided amplitude spectrum, normalised to a
/// maximum of 1. Peaks are positive-frequency local maxima above the threshold.
pub fn fourier_spectrum(series: &TimeSeries, obs: Observable, window: Window) -> Result<SpectrumResult> {
    let v = series.require(obs)?;
    let t = &series.times;
    let n = t.len();
    if n < MIN_SPECTRUM_SAMPLES {
        return Err(Error::Analysis(format!(
            "series too short for a spectrum ({n} < {MIN_SPECTRUM_SAMPLES} samples)"
        )));
    }
    let dt = (t[n - 1] - t[0]) / (n - 1) as f64;
    if t.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-6 * dt) {
        return Err(Error::Analysis("spectrum needs uniform sampling".into()));
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = v
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let w = match window {
                Window::Rect => 1.0,
                Window::Hann => 0.5 - 0.5 * (2.0 * PI * k as f64 / (n - 1) as f64).cos(),
            };
            Complex::new((x - mean) * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2 + 1;
    let mut amps: Vec<f64> = buf[..half].iter().map(|z| z.norm()).collect();
    let max = amps.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::Analysis("series has no oscillating content".into()));
    }
    amps.iter_mut().for_each(|a| *a /= max);
    let bin_width = 2.0 * PI / (n as f64 * dt);
    let freqs: Vec<f64> = (0..half).map(|k| k as f64 * bin_width).collect();
    let peaks = (1..half)
        .filter(|&k| {
            let left = amps[k] > amps[k - 1];
            let right = k + 1 == half || amps[k] >= amps[k + 1];
            left && right && amps[k] >= PEAK_THRESHOLD
        })
        .map(|k| Peak {
            freq: freqs[k],
            amp: amps[k],
            bin: k,
        })
        .collect();
    Ok(SpectrumResult {
        freqs,
        amps,
        peaks,
        window,
        bin_width,
        threshold: PEAK_THRESHOLD,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlayPair {
    pub beta: f64,
    pub weight: f64,
    pub peak_freq: f64,
    pub peak_amp: f64,
    pub freq_error_bins: f64,
    pub amp_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakMatch {
    pub freq: f64,
    pub amp: f64,
    pub nearest_beta: f64,
    pub error_bins: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayReport {
    pub bin_width: f64,
    /// Each diamond paired with its nearest spectral peak.
    pub pairs: Vec<OverlayPair>,
    /// Each spectral peak paired with its nearest diamond.
    pub peaks: Vec<PeakMatch>,
    pub max_peak_error_bins: f64,
}

impl OverlayReport {
    pub fn peaks_within(&self, bins: f64) -> bool {
        self.peaks.iter().all(|p| p.error_bins <= bins)
    }
}

/// Pairs `(β_k, weight)` diamonds with spectrum peaks, both ways.
pub fn overlay_comparison(spectrum: &SpectrumResult, weights: &[(f64, f64)]) -> Result<OverlayReport> {
    if weights.is_empty() {
        return Err(Error::Analysis("no eigenfrequencies to compare against".into()));
    }
    if spectrum.peaks.is_empty() {
        return Err(Error::Analysis(format!(
            "no spectral peaks above the {:.0}% threshold",
            100.0 * spectrum.threshold
        )));
    }
    let bw = spectrum.bin_width;
    let pairs = weights
        .iter()
        .map(|&(beta, weight)| {
            let p = spectrum
                .peaks
                .iter()
                .min_by(|a, b| (a.freq - beta).abs().total_cmp(&(b.freq - beta).abs()))
                .expect("nonempty");
            OverlayPair {
                beta,
                weight,
                peak_freq: p.freq,
                peak_amp: p.amp,
                freq_error_bins: (p.freq - beta).abs() / bw,
                amp_error: (p.amp - weight).abs(),
            }
        })
        .collect();
    let peaks: Vec<PeakMatch> = spectrum
        .peaks
        .iter()
        .map(|p| {
            let beta = weights
                .iter()
                .map(|w| w.0)
                .min_by(|a, b| (a - p.freq).abs().total_cmp(&(b - p.freq).abs()))
                .expect("nonempty");
            PeakMatch {
                freq: p.freq,
                amp: p.amp,
                nearest_beta: beta,
                error_bins: (beta - p.freq).abs() / bw,
            }
        })
        .collect();
    let max_peak_error_bins = peaks.iter().map(|p| p.error_bins).fold(0.0, f64::max);
    Ok(OverlayReport {
        bin_width: bw,
        pairs,
        peaks,
        max_peak_error_bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{sample_grid, SeriesMeta};
    use std::collections::BTreeMap;

    fn synthetic(t_end: f64, dt: f64, f: impl Fn(f64) -> f64) -> TimeSeries {
        let times = sample_grid(t_end, dt);
        let vals = times.iter().map(|&t| f(t)).collect();
        TimeSeries {
            times,
            columns: vec![(Observable::mz(), vals)],
            meta: SeriesMeta {
                generator: Generator::Meanfield,
                n: None,
                omega: 1.0,
                kappa: 1.0,
                state: None,
                state_label: "synthetic".into(),
                t_end,
                sample_dt: dt,
                rel_tol: 0.0,
                abs_tol: 0.0,
                diagnostics: BTreeMap::new(),
            },
        }
    }

    #[test]
    fn averages() {
        let c = synthetic(10.0, 0.1, |_| 0.37);
        assert!((time_average(&c, Observable::mz(), 2.0, 9.0).unwrap() - 0.37).abs() < 1e-14);
        let s = synthetic(4.0 * PI, PI / 200.0, |t| (2.0 * t).sin());
        assert!(time_average(&s, Observable::mz(), 0.0, 4.0 * PI).unwrap().abs() < 1e-10);
        let lin = synthetic(10.0, 1.0, |t| t);
        assert!((time_average(&lin, Observable::mz(), 2.5, 7.5).unwrap() - 5.0).abs() < 1e-14);
        assert!(time_average(&c, Observable::mz(), 5.0, 5.0).is_err());
        assert!(time_average(&c, Observable::mz(), 5.0, 11.0).is_err());
        assert!(time_average(&c, Observable::chi(2, 2), 1.0, 2.0).is_err());
    }

    #[test]
    fn sine_peak_is_found_within_a_bin() {
        let s = synthetic(200.0, 0.05, |t| (2.0 * t).sin());
        for w in [Window::Hann, Window::Rect] {
            let sp = fourier_spectrum(&s, Observable::mz(), w).unwrap();
            let top = sp.dominant().unwrap();
            assert!((top.freq - 2.0).abs() <= sp.bin_width, "{w:?}: {top:?}");
            assert!(sp.amps.iter().all(|a| (0.0..=1.0).contains(a)));
            assert!(sp.freqs.windows(2).all(|f| f[1] > f[0]));
        }
    }

    #[test]
    fn peaks_invariant_under_offset_and_scale() {
        let f = |t: f64| (1.3 * t).cos() + 0.4 * (3.1 * t).sin();
        let a = fourier_spectrum(&synthetic(150.0, 0.05, f), Observable::mz(), Window::Hann).unwrap();
        let b = fourier_spectrum(
            &synthetic(150.0, 0.05, |t| 7.0 - 3.0 * f(t)),
            Observable::mz(),
            Window::Hann,
        )
        .unwrap();
        let bins = |s: &SpectrumResult| s.peaks.iter().map(|p| p.bin).collect::<Vec<_>>();
        assert_eq!(bins(&a), bins(&b));
        assert_eq!(a.peaks.len(), 2);
    }

    #[test]
    fn short_series_rejected() {
        let s = synthetic(1.0, 0.05, |t| t.sin());
        assert!(fourier_spectrum(&s, Observable::mz(), Window::Hann).is_err());
    }

    #[test]
    fn overlay_exact_match() {
        let sp = SpectrumResult {
            freqs: vec![0.0, 1.0, 2.0, 3.0],
            amps: vec![0.0, 1.0, 0.1, 0.5],
            peaks: vec![
                Peak { freq: 1.0, amp: 1.0, bin: 1 },
                Peak { freq: 3.0, amp: 0.5, bin: 3 },
            ],
            window: Window::Rect,
            bin_width: 1.0,
            threshold: PEAK_THRESHOLD,
        };
        let rep = overlay_comparison(&sp, &[(1.0, 1.0), (3.0, 0.4)]).unwrap();
        assert!(rep.pairs.iter().all(|p| p.freq_error_bins == 0.0));
        assert!((rep.pairs[1].amp_error - 0.1).abs() < 1e-15);
        assert!(rep.peaks_within(0.0));
        let empty = SpectrumResult { peaks: vec![], ..sp.clone() };
        assert!(overlay_comparison(&empty, &[(1.0, 1.0)]).is_err());
        assert!(overlay_comparison(&sp, &[]).is_err());
    }

    fn cat_spec(generators: Vec<SweepGenerator>, ratios: Vec<f64>) -> SweepSpec {
        SweepSpec {
            family: StateFamily::Cat,
            generators,
            ratios,
            kappa: 1.0,
            observable: Observable::mz(),
            t_end: 100.0,
            window: None,
            sample_dt: 0.1,
            rel_tol: None,
            abs_tol: None,
        }
    }

    #[test]
    fn meanfield_sweep_of_cat_is_zero() {
        let g = SweepGenerator { generator: Generator::Meanfield, n: None };
        let res = sweep_order_parameter(&cat_spec(vec![g], vec![0.2, 1.0, 2.5])).unwrap();
        assert!(res.columns[0].averages.iter().all(|v| *v == Some(0.0)));
        assert!(res.to_csv().starts_with("ratio,meanfield\n"));
    }

    #[test]
    fn meanfield_fixed_point_below_threshold() {
        let mut spec = cat_spec(
            vec![SweepGenerator { generator: Generator::Meanfield, n: None }],
            vec![0.5],
        );
        spec.family = StateFamily::Coherent { theta: 0.0, phi: 0.0 };
        let res = sweep_order_parameter(&spec).unwrap();
        let want = -(1.0f64 - 0.25).sqrt();
        assert!((res.columns[0].averages[0].unwrap() - want).abs() < 1e-3);
    }

    #[test]
    fn order2_cat_average_shrinks_in_the_oscillating_phase() {
        let g = SweepGenerator { generator: Generator::Cumulant2, n: None };
        let res = sweep_order_parameter(&cat_spec(vec![g], vec![0.5, 2.5])).unwrap();
        let (lo, hi) = (res.columns[0].averages[0].unwrap(), res.columns[0].averages[1].unwrap());
        assert!(lo < 0.0 && lo.abs() >= 5.0 * hi.abs(), "{lo} {hi}");
    }

    #[test]
    fn bad_sweeps_are_rejected() {
        let g = SweepGenerator { generator: Generator::Meanfield, n: None };
        assert!(sweep_order_parameter(&cat_spec(vec![g], vec![])).is_err());
        assert!(sweep_order_parameter(&cat_spec(vec![g], vec![1.0, 0.5])).is_err());
        let e = SweepGenerator { generator: Generator::Exact, n: None };
        assert!(sweep_order_parameter(&cat_spec(vec![e], vec![1.0])).is_err());
    }

    #[test]
    fn steepest() {
        let (s, a, b) = steepest_interval(&[0.0, 1.0, 2.0, 3.0], &[0.0, 0.1, 1.0, 1.2]).unwrap();
        assert!((s - 0.9).abs() < 1e-15 && a == 1.0 && b == 2.0);
    }
}
