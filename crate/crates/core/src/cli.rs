//! Configuration-driven commands behind the `ctc` binary. Every command
//! parses and validates its JSON config before touching the output
//! directory; files are written atomically.

use std::f64::consts::FRAC_PI_4;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::analysis::{
    fourier_spectrum, overlay_comparison, run_trajectory, sweep_order_parameter, OverlayReport,
    SpectrumResult, SweepGenerator, SweepSpec, Window,
};
use crate::error::{Error, Result};
use crate::lindblad::EvolutionSpec;
use crate::liouville::{
    build_liouvillian_with_guard, scale_tracked, spectral_decompose, spectral_weights,
    spectrum_entries, track_modes, ModeScaling, ModeWeight, SpectralAxioms, SpectralDecomposition,
    SpectrumEntry, TrackedMode, DEFAULT_DIM_GUARD,
};
use crate::oracle::{
    evolve_full_heisenberg, pair_correlation_ladder, FullStateVector, PairCorrelationLadder,
};
use crate::plot::{self, Line};
use crate::series::{write_atomic, Generator, Observable, TimeSeries};
use crate::spin::{build_collective_ops, ModelParams, StateFamily};

/// Process exit code for a failure: 2 for configuration problems, 3 for
/// numerical failures, 1 for anything else (I/O while writing results).
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        3
    } else if matches!(e, Error::Io(_)) {
        1
    } else {
        2
    }
}

fn one() -> f64 {
    1.0
}

/// Reads and parses a config file. Any failure here is a config error.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

fn check_run(g: &SweepGenerator, obs: &[Observable]) -> Result<()> {
    match (g.generator, g.n) {
        (Generator::Exact, None) => return Err(Error::Config("exact runs need \"n\"".into())),
        (Generator::Exact, Some(n)) => ModelParams::new(n, 1.0, 1.0).map(|_| ())?,
        (_, Some(_)) => return Err(Error::Config("flow runs take no \"n\"".into())),
        (_, None) => {}
    }
    if let Some(order) = g.generator.order() {
        if let Some(o) = obs.iter().find(|o| o.order() > order) {
            return Err(Error::Config(format!(
                "{o} is not carried by {}",
                g.generator.tag()
            )));
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

// ---------------------------------------------------------------- evolve

/// `ctc evolve`: one or more trajectories from a shared initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveConfig {
    pub state: StateFamily,
    pub omega: f64,
    #[serde(default = "one")]
    pub kappa: f64,
    pub runs: Vec<SweepGenerator>,
    pub t_end: f64,
    pub sample_dt: f64,
    #[serde(default)]
    pub rel_tol: Option<f64>,
    #[serde(default)]
    pub abs_tol: Option<f64>,
    /// Observables sampled by exact runs (flows carry all of theirs).
    #[serde(default)]
    pub observables: Option<Vec<Observable>>,
    /// Observables drawn with `--plot`.
    #[serde(default = "default_plot")]
    pub plot: Vec<Observable>,
    #[serde(default = "default_evolve_stem")]
    pub stem: String,
}

fn default_plot() -> Vec<Observable> {
    vec![Observable::mz()]
}
fn default_evolve_stem() -> String {
    "evolve".into()
}

impl EvolveConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("kappa", self.kappa)?;
        if !(self.omega >= 0.0) {
            return Err(Error::Config("omega must be non-negative".into()));
        }
        if self.runs.is_empty() {
            return Err(Error::Config("no runs requested".into()));
        }
        EvolutionSpec::new(self.t_end, self.sample_dt)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.state.validate()?;
        for g in &self.runs {
            check_run(g, &[])?;
        }
        if let Some(sampled) = &self.observables {
            if sampled.is_empty() {
                return Err(Error::Config("empty observable list".into()));
            }
        }
        // A plotted observable must appear in at least one run.
        for o in &self.plot {
            let carried = self.runs.iter().any(|g| match g.generator.order() {
                Some(k) => o.order() <= k,
                None => match &self.observables {
                    Some(v) => v.contains(o),
                    None => o.order() <= 2,
                },
            });
            if !carried {
                return Err(Error::Config(format!("plotted observable {o} is not sampled by any run")));
            }
        }
        Ok(())
    }
}

pub fn run_evolve(cfg: &EvolveConfig) -> Result<Vec<(String, TimeSeries)>> {
    use rayon::prelude::*;
    cfg.validate()?;
    cfg.runs
        .par_iter()
        .map(|&g| {
            let ts = run_trajectory(
                cfg.state,
                g,
                cfg.omega,
                cfg.kappa,
                cfg.t_end,
                cfg.sample_dt,
                (cfg.rel_tol, cfg.abs_tol),
                cfg.observables.clone(),
            )?;
            Ok((g.column_name(), ts))
        })
        .collect()
}

pub fn cmd_evolve(cfg: &EvolveConfig, out: &Path, plot_figs: bool) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let runs = run_evolve(cfg)?;
    prepare_out(out)?;
    let mut written = Vec::new();
    for (name, ts) in &runs {
        let (csv, meta) = ts.write(out, &format!("{}_{name}", cfg.stem))?;
        written.extend([csv, meta]);
    }
    if plot_figs {
        for &o in &cfg.plot {
            let lines: Vec<Line> = runs
                .iter()
                .filter_map(|(name, ts)| {
                    ts.get(o).map(|v| Line {
                        label: name,
                        points: ts.times.iter().copied().zip(v.iter().copied()).collect(),
                    })
                })
                .collect();
            let path = out.join(format!("{}_{o}.svg", cfg.stem));
            plot::lines(&path, &format!("{o}, Ω/κ = {}", cfg.omega / cfg.kappa), "κt", &o.to_string(), &lines, &[])?;
            written.push(path);
        }
    }
    Ok(written)
}

// ---------------------------------------------------------------- spectrum

fn default_mu() -> usize {
    4
}
fn default_modes() -> usize {
    8
}

/// `ctc spectrum`: per-N Liouvillian spectra, mode tracking and scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    pub omega: f64,
    #[serde(default = "one")]
    pub kappa: f64,
    pub n_grid: Vec<u32>,
    #[serde(default = "default_mu")]
    pub mu: usize,
    /// Number of slow rotating modes to track (ignored when `seeds` is set).
    #[serde(default = "default_modes")]
    pub modes: usize,
    /// Frequencies at the first N selecting the modes to track.
    #[serde(default)]
    pub seeds: Option<Vec<f64>>,
    pub state: StateFamily,
    /// `m_i` weighs with `S_i/S`; `chi_ij` with the second moment `{S_i,S_j}/2S²`.
    #[serde(default = "Observable::mz")]
    pub observable: Observable,
    #[serde(default = "default_guard")]
    pub max_dim: usize,
}

fn default_guard() -> usize {
    DEFAULT_DIM_GUARD
}

impl SpectrumConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("kappa", self.kappa)?;
        if self.n_grid.is_empty() {
            return Err(Error::Config("empty N grid".into()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("N grid must be strictly increasing".into()));
        }
        for &n in &self.n_grid {
            let d = (n as usize + 1).pow(2);
            if d > self.max_dim {
                return Err(Error::SizeGuard(format!(
                    "N = {n} gives Liouville dimension {d} > {}",
                    self.max_dim
                )));
            }
        }
        if self.n_grid.len() > 1 && !(1..=crate::liouville::MAX_SCALING_ORDER).contains(&self.mu) {
            return Err(Error::Config(format!("mu must lie in 1..={}", crate::liouville::MAX_SCALING_ORDER)));
        }
        if self.n_grid.len() > 1 && self.n_grid.len() < self.mu + 2 {
            return Err(Error::Config(format!(
                "a fit of order {} needs at least {} grid points",
                self.mu,
                self.mu + 2
            )));
        }
        if matches!(self.observable, Observable::S2Norm | Observable::Tau(..)) {
            return Err(Error::Config(format!("no spectral weights for {}", self.observable)));
        }
        self.state.validate()
    }
}

/// Dicke-sector operator whose modal weights are reported.
pub fn spectral_observable(obs: Observable, params: &ModelParams) -> Result<ndarray::Array2<num_complex::Complex64>> {
    let ops = build_collective_ops(params)?;
    let s = params.spin();
    match obs {
        Observable::M(i) => Ok(ops.axis(i).mapv(|z| z / s)),
        Observable::Chi(i, j) => Ok(ops.sym_pair_matrix(i, j).mapv(|z| z / (s * s))),
        other => Err(Error::Config(format!("no spectral weights for {other}"))),
    }
}

/// Spectrum of one N.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumPoint {
    pub n: u32,
    pub omega: f64,
    pub kappa: f64,
    pub axioms: SpectralAxioms,
    pub spectrum: Vec<SpectrumEntry>,
}

/// Eigenfrequency marker: thermodynamic-limit frequency with the modal
/// weight at the largest N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diamond {
    pub beta: f64,
    pub alpha: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumOutput {
    pub points: Vec<SpectrumPoint>,
    pub tracks: Vec<TrackedMode>,
    pub scaling: Vec<ModeScaling>,
    pub diamonds: Vec<Diamond>,
}

/// Decomposes one N and returns the decomposition with its weights.
pub fn spectrum_at(cfg: &SpectrumConfig, n: u32) -> Result<(SpectralDecomposition, Vec<ModeWeight>)> {
    let params = ModelParams::new(n, cfg.omega, cfg.kappa)?;
    let dec = spectral_decompose(&build_liouvillian_with_guard(&params, cfg.max_dim)?)?;
    let rho = cfg.state.build(&params)?;
    let op = spectral_observable(cfg.observable, &params)?;
    let w = spectral_weights(&dec, &rho.data.view(), &op.view())?;
    Ok((dec, w))
}

/// Full pipeline; `on_point` sees each N as soon as it is done.
pub fn run_spectrum<F>(cfg: &SpectrumConfig, mut on_point: F) -> Result<SpectrumOutput>
where
    F: FnMut(&SpectrumPoint) -> Result<()>,
{
    cfg.validate()?;
    let mut light = Vec::new();
    let mut weights = Vec::new();
    let mut points = Vec::new();
    for &n in &cfg.n_grid {
        let (dec, w) = spectrum_at(cfg, n)?;
        let point = SpectrumPoint {
            n,
            omega: cfg.omega,
            kappa: cfg.kappa,
            axioms: dec.axioms(1e-9),
            spectrum: spectrum_entries(&dec, Some(&w)),
        };
        log::info!("N = {n}: {} modes, axioms {:?}", dec.len(), point.axioms);
        on_point(&point)?;
        points.push(point);
        light.push((n, dec.without_vectors()));
        weights.push(w);
    }
    if cfg.n_grid.len() < 2 {
        return Ok(SpectrumOutput {
            points,
            tracks: vec![],
            scaling: vec![],
            diamonds: vec![],
        });
    }
    let refs: Vec<(u32, &SpectralDecomposition)> = light.iter().map(|(n, d)| (*n, d)).collect();
    let tracks = track_modes(&refs, cfg.modes, cfg.seeds.as_deref(), Some(&weights))?;
    let scaling = scale_tracked(&tracks, cfg.mu)?;
    let last = weights.last().expect("non-empty grid");
    let diamonds = scaling
        .iter()
        .map(|m| {
            let k = *m.track.indices.last().expect("tracked");
            Diamond {
                beta: m.im_fit.a0(),
                alpha: m.re_fit.a0(),
                weight: last.iter().find(|w| w.index == k).map_or(0.0, |w| w.weight),
            }
        })
        .collect();
    Ok(SpectrumOutput {
        points,
        tracks,
        scaling,
        diamonds,
    })
}

/// Exported scaling fit of one tracked mode.
#[derive(Serialize)]
struct ScalingExport<'a> {
    mode: usize,
    re: &'a crate::liouville::ScalingFit,
    im: &'a crate::liouville::ScalingFit,
}

pub fn cmd_spectrum(cfg: &SpectrumConfig, out: &Path, plot_figs: bool) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    prepare_out(out)?;
    let mut written = Vec::new();
    let res = run_spectrum(cfg, |p| {
        let path = out.join(format!("spectrum_n{}.json", p.n));
        write_json(&path, p)?;
        written.push(path);
        Ok(())
    })?;
    if !res.tracks.is_empty() {
        let path = out.join("tracks.json");
        write_json(&path, &res.tracks)?;
        written.push(path);
        let fits: Vec<ScalingExport> = res
            .scaling
            .iter()
            .enumerate()
            .map(|(mode, m)| ScalingExport {
                mode,
                re: &m.re_fit,
                im: &m.im_fit,
            })
            .collect();
        let path = out.join("scaling.json");
        write_json(&path, &fits)?;
        written.push(path);
        let path = out.join("diamonds.json");
        write_json(&path, &res.diamonds)?;
        written.push(path);
    }
    if plot_figs {
        let groups: Vec<(String, Vec<(f64, f64)>)> = res
            .points
            .iter()
            .map(|p| (format!("N = {}", p.n), p.spectrum.iter().map(|e| (e.re, e.im)).collect()))
            .collect();
        let refs: Vec<(&str, Vec<(f64, f64)>)> = groups.iter().map(|(l, v)| (l.as_str(), v.clone())).collect();
        let path = out.join("spectrum.svg");
        plot::eigenvalues(&path, &format!("Liouvillian spectrum, Ω/κ = {}", cfg.omega / cfg.kappa), &refs)?;
        written.push(path);
        if !res.scaling.is_empty() {
            let lines: Vec<(String, Vec<(f64, f64)>)> = res
                .scaling
                .iter()
                .enumerate()
                .map(|(k, m)| {
                    let pts = m.track.n_grid.iter().zip(m.track.alphas()).map(|(&n, a)| (1.0 / n as f64, a)).collect();
                    (format!("mode {k}"), pts)
                })
                .collect();
            let series: Vec<Line> = lines.iter().map(|(l, p)| Line { label: l, points: p.clone() }).collect();
            let path = out.join("scaling_re.svg");
            plot::lines(&path, "Re λ of tracked modes", "1/N", "Re λ/κ", &series, &[])?;
            written.push(path);
        }
    }
    Ok(written)
}

// ---------------------------------------------------------------- sweep

pub fn cmd_sweep(cfg: &SweepSpec, out: &Path, plot_figs: bool) -> Result<Vec<PathBuf>> {
    cfg.validate().map_err(|e| match e {
        Error::InvalidParameter(m) => Error::Config(m),
        other => other,
    })?;
    let res = sweep_order_parameter(cfg)?;
    prepare_out(out)?;
    let mut written = vec![out.join("sweep.csv"), out.join("sweep.json")];
    write_atomic(&written[0], res.to_csv().as_bytes())?;
    write_json(&written[1], &res)?;
    if plot_figs {
        let names: Vec<String> = res.columns.iter().map(|c| c.generator.column_name()).collect();
        let series: Vec<Line> = res
            .columns
            .iter()
            .zip(&names)
            .map(|(c, name)| Line {
                label: name,
                points: res
                    .ratios
                    .iter()
                    .zip(&c.averages)
                    .filter_map(|(&r, a)| a.map(|v| (r, v)))
                    .collect(),
            })
            .collect();
        let path = out.join("sweep.svg");
        plot::lines(
            &path,
            &format!("long-time average of {}", cfg.observable),
            "Ω/κ",
            &cfg.observable.to_string(),
            &series,
            &[1.0],
        )?;
        written.push(path);
    }
    Ok(written)
}

// ---------------------------------------------------------------- fourier

/// `ctc fourier`: trajectories and their normalised spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierConfig {
    pub state: StateFamily,
    pub omega: f64,
    #[serde(default = "one")]
    pub kappa: f64,
    pub runs: Vec<SweepGenerator>,
    pub t_end: f64,
    pub sample_dt: f64,
    #[serde(default)]
    pub rel_tol: Option<f64>,
    #[serde(default)]
    pub abs_tol: Option<f64>,
    pub observables: Vec<Observable>,
    #[serde(default)]
    pub window: Window,
}

impl FourierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.observables.is_empty() {
            return Err(Error::Config("no observables requested".into()));
        }
        self.as_evolve().validate()
    }

    fn as_evolve(&self) -> EvolveConfig {
        EvolveConfig {
            state: self.state,
            omega: self.omega,
            kappa: self.kappa,
            runs: self.runs.clone(),
            t_end: self.t_end,
            sample_dt: self.sample_dt,
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            observables: Some(self.observables.clone()),
            plot: self.observables.clone(),
            stem: "fourier".into(),
        }
    }
}

/// Spectrum of one (run, observable) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FourierOutput {
    pub run: String,
    pub observable: Observable,
    pub spectrum: SpectrumResult,
}

pub fn run_fourier(cfg: &FourierConfig) -> Result<Vec<FourierOutput>> {
    cfg.validate()?;
    let mut outs = Vec::new();
    for (name, ts) in run_evolve(&cfg.as_evolve())? {
        for &o in &cfg.observables {
            outs.push(FourierOutput {
                run: name.clone(),
                observable: o,
                spectrum: fourier_spectrum(&ts, o, cfg.window)?,
            });
        }
    }
    Ok(outs)
}

#[derive(Serialize)]
struct PeakExport<'a> {
    run: &'a str,
    observable: Observable,
    bin_width: f64,
    threshold: f64,
    window: Window,
    peaks: &'a [crate::analysis::Peak],
}

fn write_fourier(outs: &[FourierOutput], out: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    for f in outs {
        let stem = format!("fourier_{}_{}", f.run, f.observable);
        let csv = out.join(format!("{stem}.csv"));
        write_atomic(&csv, f.spectrum.to_csv().as_bytes())?;
        let json = out.join(format!("{stem}_peaks.json"));
        write_json(
            &json,
            &PeakExport {
                run: &f.run,
                observable: f.observable,
                bin_width: f.spectrum.bin_width,
                threshold: f.spectrum.threshold,
                window: f.spectrum.window,
                peaks: &f.spectrum.peaks,
            },
        )?;
        written.extend([csv, json]);
    }
    Ok(())
}

fn spectrum_line(f: &FourierOutput, max_freq: f64) -> Vec<(f64, f64)> {
    f.spectrum
        .freqs
        .iter()
        .zip(&f.spectrum.amps)
        .filter(|(w, _)| **w <= max_freq)
        .map(|(&w, &a)| (w, a))
        .collect()
}

fn plot_max_freq(outs: &[FourierOutput], extra: &[f64]) -> f64 {
    let top = outs
        .iter()
        .flat_map(|f| f.spectrum.peaks.iter().map(|p| p.freq))
        .chain(extra.iter().copied())
        .fold(0.0, f64::max);
    if top > 0.0 {
        1.25 * top
    } else {
        10.0
    }
}

pub fn cmd_fourier(cfg: &FourierConfig, out: &Path, plot_figs: bool) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let outs = run_fourier(cfg)?;
    prepare_out(out)?;
    let mut written = Vec::new();
    write_fourier(&outs, out, &mut written)?;
    if plot_figs {
        let top = plot_max_freq(&outs, &[]);
        for &o in &cfg.observables {
            let chosen: Vec<&FourierOutput> = outs.iter().filter(|f| f.observable == o).collect();
            let series: Vec<Line> = chosen
                .iter()
                .map(|f| Line {
                    label: &f.run,
                    points: spectrum_line(f, top),
                })
                .collect();
            let path = out.join(format!("fourier_{o}.svg"));
            plot::spectrum_with_diamonds(&path, &format!("normalised spectrum of {o}"), &series, &[])?;
            written.push(path);
        }
    }
    Ok(written)
}

// ---------------------------------------------------------------- compare

/// `ctc compare`: flow spectra against Liouvillian eigenfrequencies. The
/// markers come either from a spectrum run in the same config or from a
/// `diamonds.json` written earlier (path relative to the config file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub fourier: FourierConfig,
    #[serde(default)]
    pub spectrum: Option<SpectrumConfig>,
    #[serde(default)]
    pub diamonds: Option<PathBuf>,
}

impl CompareConfig {
    pub fn validate(&self) -> Result<()> {
        self.fourier.validate()?;
        match (&self.spectrum, &self.diamonds) {
            (Some(s), None) => {
                s.validate()?;
                if s.n_grid.len() < 2 {
                    return Err(Error::Config("compare needs an N grid for scaling".into()));
                }
                Ok(())
            }
            (None, Some(_)) => Ok(()),
            _ => Err(Error::Config("give exactly one of \"spectrum\" and \"diamonds\"".into())),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    pub run: String,
    pub observable: Observable,
    pub overlay: OverlayReport,
}

pub fn run_compare(cfg: &CompareConfig, base: &Path) -> Result<(Vec<FourierOutput>, Vec<Diamond>, Vec<CompareReport>)> {
    cfg.validate()?;
    let diamonds: Vec<Diamond> = match (&cfg.spectrum, &cfg.diamonds) {
        (Some(s), _) => run_spectrum(s, |_| Ok(()))?.diamonds,
        (None, Some(p)) => load_config(&base.join(p))?,
        _ => unreachable!("validated"),
    };
    let outs = run_fourier(&cfg.fourier)?;
    let marks: Vec<(f64, f64)> = diamonds.iter().map(|d| (d.beta, d.weight)).collect();
    let reports = outs
        .iter()
        .map(|f| {
            Ok(CompareReport {
                run: f.run.clone(),
                observable: f.observable,
                overlay: overlay_comparison(&f.spectrum, &marks)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((outs, diamonds, reports))
}

pub fn cmd_compare(cfg: &CompareConfig, base: &Path, out: &Path, plot_figs: bool) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let (outs, diamonds, reports) = run_compare(cfg, base)?;
    prepare_out(out)?;
    let mut written = Vec::new();
    write_fourier(&outs, out, &mut written)?;
    let path = out.join("diamonds.json");
    write_json(&path, &diamonds)?;
    written.push(path);
    let path = out.join("overlay.json");
    write_json(&path, &reports)?;
    written.push(path);
    if plot_figs {
        let marks: Vec<(f64, f64)> = diamonds.iter().map(|d| (d.beta, d.weight)).collect();
        let top = plot_max_freq(&outs, &marks.iter().map(|m| m.0).collect::<Vec<_>>());
        for &o in &cfg.fourier.observables {
            let chosen: Vec<&FourierOutput> = outs.iter().filter(|f| f.observable == o).collect();
            let series: Vec<Line> = chosen
                .iter()
                .map(|f| Line {
                    label: &f.run,
                    points: spectrum_line(f, top),
                })
                .collect();
            let path = out.join(format!("compare_{o}.svg"));
            plot::spectrum_with_diamonds(&path, &format!("normalised spectrum of {o}"), &series, &marks)?;
            written.push(path);
        }
    }
    Ok(written)
}

// ---------------------------------------------------------------- verify

fn default_verify_ns() -> Vec<u32> {
    vec![4, 6, 8, 10]
}
fn default_verify_ratios() -> Vec<f64> {
    vec![0.5, 2.5]
}
fn default_verify_families() -> Vec<StateFamily> {
    vec![
        StateFamily::Cat,
        StateFamily::Coherent { theta: 0.0, phi: 0.0 },
        StateFamily::Coherent { theta: FRAC_PI_4, phi: 0.0 },
        StateFamily::Coherent { theta: 2.0 * FRAC_PI_4, phi: 0.0 },
        StateFamily::Scs { theta: FRAC_PI_4, phi: 0.0 },
    ]
}
fn default_verify_t_end() -> f64 {
    10.0
}
fn default_verify_dt() -> f64 {
    0.05
}
fn default_verify_tol() -> f64 {
    1e-7
}
fn default_pair_ns() -> Vec<u32> {
    vec![6, 8, 10, 12]
}
fn default_pair_families() -> Vec<StateFamily> {
    vec![StateFamily::Cat, StateFamily::Coherent { theta: FRAC_PI_4, phi: 0.0 }]
}

/// `ctc verify`: brute-force oracle suites. Every field has a default, so
/// an empty object `{}` runs the standard suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_verify_ns")]
    pub n_values: Vec<u32>,
    #[serde(default = "default_verify_ratios")]
    pub ratios: Vec<f64>,
    #[serde(default = "default_verify_families")]
    pub families: Vec<StateFamily>,
    #[serde(default = "default_verify_t_end")]
    pub t_end: f64,
    #[serde(default = "default_verify_dt")]
    pub sample_dt: f64,
    #[serde(default = "default_verify_tol")]
    pub tolerance: f64,
    #[serde(default = "default_pair_ns")]
    pub pair_n_values: Vec<u32>,
    #[serde(default = "default_pair_families")]
    pub pair_families: Vec<StateFamily>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        for &n in &self.n_values {
            if n == 0 || n > crate::oracle::MAX_EVOLUTION_SITES {
                return Err(Error::SizeGuard(format!("oracle evolution supports N <= 10, got {n}")));
            }
        }
        for &n in &self.pair_n_values {
            if n < 2 || n > crate::oracle::MAX_STATE_SITES {
                return Err(Error::SizeGuard(format!("oracle states support 2 <= N <= 12, got {n}")));
            }
        }
        for f in self.families.iter().chain(&self.pair_families) {
            f.validate()?;
        }
        check_positive("tolerance", self.tolerance)?;
        if self.ratios.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::Config("ratios must be non-negative".into()));
        }
        EvolutionSpec::new(self.t_end, self.sample_dt)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolutionCheck {
    pub n: u32,
    pub ratio: f64,
    pub family: StateFamily,
    pub max_abs_dev_mz: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub tolerance: f64,
    pub evolution: Vec<EvolutionCheck>,
    pub pair_correlation: Vec<PairCorrelationLadder>,
    pub pass: bool,
}

/// Dicke-sector `m_z(t)` against the full-space Heisenberg-picture oracle
/// for every family at one (N, Ω/κ).
pub fn oracle_mz_deviation(
    n: u32,
    ratio: f64,
    families: &[StateFamily],
    t_end: f64,
    sample_dt: f64,
) -> Result<Vec<f64>> {
    let params = ModelParams::new(n, ratio, 1.0)?;
    let spec = EvolutionSpec::new(t_end, sample_dt)
        .with_tolerances(1e-10, 1e-12)
        .with_observables(vec![Observable::mz()]);
    let states = families
        .iter()
        .map(|f| FullStateVector::from_family(n, f))
        .collect::<Result<Vec<_>>>()?;
    let full = evolve_full_heisenberg(&states, Observable::mz(), &params, &spec)?;
    families
        .iter()
        .zip(&full)
        .map(|(f, fs)| {
            let ex = crate::lindblad::evolve_exact(&f.build(&params)?, &params, &spec)?;
            let (a, b) = (ex.require(Observable::mz())?, fs.require(Observable::mz())?);
            Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
        })
        .collect()
}

pub fn run_verify(cfg: &VerifyConfig) -> Result<VerifyReport> {
    use rayon::prelude::*;
    cfg.validate()?;
    let jobs: Vec<(u32, f64)> = cfg
        .n_values
        .iter()
        .flat_map(|&n| cfg.ratios.iter().map(move |&r| (n, r)))
        .collect();
    let devs = jobs
        .par_iter()
        .map(|&(n, r)| oracle_mz_deviation(n, r, &cfg.families, cfg.t_end, cfg.sample_dt))
        .collect::<Result<Vec<_>>>()?;
    let mut evolution = Vec::new();
    for (&(n, ratio), d) in jobs.iter().zip(devs) {
        for (f, dev) in cfg.families.iter().zip(d) {
            evolution.push(EvolutionCheck {
                n,
                ratio,
                family: *f,
                max_abs_dev_mz: dev,
                pass: dev <= cfg.tolerance,
            });
        }
    }
    let pair_correlation = cfg
        .pair_families
        .iter()
        .map(|f| pair_correlation_ladder(f, 2, 2, &cfg.pair_n_values))
        .collect::<Result<Vec<_>>>()?;
    let pass = evolution.iter().all(|c| c.pass);
    Ok(VerifyReport {
        tolerance: cfg.tolerance,
        evolution,
        pair_correlation,
        pass,
    })
}

/// Writes the report; a failed check is a numerical failure.
pub fn cmd_verify(cfg: &VerifyConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let report = run_verify(cfg)?;
    prepare_out(out)?;
    let path = out.join("verify_report.json");
    write_json(&path, &report)?;
    if !report.pass {
        let worst = report
            .evolution
            .iter()
            .map(|c| c.max_abs_dev_mz)
            .fold(0.0, f64::max);
        return Err(Error::ToleranceFailure {
            t: cfg.t_end,
            what: format!("oracle deviation {worst:.3e} exceeds {:.1e}", cfg.tolerance),
        });
    }
    Ok(vec![path])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::SizeGuard("x".into())), 2);
        assert_eq!(exit_code(&Error::NonFinite { t: 1.0 }), 3);
        assert_eq!(exit_code(&Error::NotBiorthogonal { residual: 1.0 }), 3);
    }

    #[test]
    fn configs_reject_unknown_fields() {
        let bad = r#"{"state": {"family": "cat"}, "omega": 1, "runs": [], "t_end": 1, "sample_dt": 0.1, "bogus": 1}"#;
        assert!(serde_json::from_str::<EvolveConfig>(bad).is_err());
        let ok: VerifyConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(ok.n_values, vec![4, 6, 8, 10]);
        assert!(serde_json::from_str::<VerifyConfig>(r#"{"n": [4]}"#).is_err());
    }

    #[test]
    fn evolve_validation() {
        let mut cfg: EvolveConfig = serde_json::from_str(
            r#"{"state": {"family": "cat"}, "omega": 2.5, "runs": [{"generator": "meanfield"}], "t_end": 1, "sample_dt": 0.1}"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        cfg.runs.push(SweepGenerator { generator: Generator::Exact, n: None });
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.runs[1].n = Some(4);
        cfg.validate().unwrap();
        cfg.runs.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn spectrum_guard_is_a_config_error() {
        let cfg: SpectrumConfig = serde_json::from_str(
            r#"{"omega": 2.5, "n_grid": [200], "state": {"family": "cat"}}"#,
        )
        .unwrap();
        let e = cfg.validate().unwrap_err();
        assert_eq!(exit_code(&e), 2);
    }
}
