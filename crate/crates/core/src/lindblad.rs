//! Direct integration of the master equation on the Dicke-sector density
//! matrix:
//!
//! ρ̇ = −i[Ω Sx, ρ] + (κ/S)(S− ρ S+ − ½{S+ S−, ρ})

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, I};
use crate::ode::{Dop853, IntegrationStats, OdeSystem};
use crate::series::{sample_grid, Generator, Observable, SeriesMeta, TimeSeries};
use crate::spin::{
    build_collective_ops, cumulants_unchecked, CollectiveOps, DickeDensityMatrix, ModelParams,
    StateFamily,
};

/// Largest tolerated |tr ρ(t) − 1| along a trajectory.
pub const TRACE_DRIFT_TOL: f64 = 1e-8;

/// Reference right-hand side with dense matrix products.
pub fn lindblad_rhs(
    rho: &DickeDensityMatrix,
    ops: &CollectiveOps,
    params: &ModelParams,
) -> Result<Array2<C64>> {
    if rho.dim() != ops.dim() || params.dim() != ops.dim() {
        return Err(Error::DimensionMismatch {
            expected: ops.dim(),
            got: rho.dim(),
        });
    }
    let r = &rho.data;
    let h = ops.sx.mapv(|z| z * params.omega);
    let k = linalg::matmul(&ops.sp, &ops.sm);
    let comm = linalg::matmul(&h, r) - linalg::matmul(r, &h);
    let jump = linalg::matmul(&linalg::matmul(&ops.sm, r), &ops.sp);
    let anti = linalg::matmul(&k, r) + linalg::matmul(r, &k);
    let g = params.kappa / ops.spin;
    Ok(comm.mapv(|z| -I * z) + (jump - anti.mapv(|z| 0.5 * z)).mapv(|z| g * z))
}

/// Banded generator acting on the packed upper triangle of a Hermitian
/// `d×d` matrix (row `r` holds columns `r..d`). Each output entry depends on
/// at most seven input entries; the lower triangle is never stored.
#[derive(Debug, Clone)]
pub struct DickeGenerator {
    d: usize,
    half_omega: f64,
    rate: f64,
    // a[k] = S+[k+1][k] for k < d-1, a[d-1] = 0
    a: Vec<f64>,
    // diagonal of S+ S-
    kd: Vec<f64>,
    offsets: Vec<usize>,
}

/// Start of row `r` in packed upper-triangular storage.
fn packed_offset(d: usize, r: usize) -> usize {
    r * d - r * r.saturating_sub(1) / 2
}

impl DickeGenerator {
    pub fn new(params: &ModelParams, ops: &CollectiveOps) -> Self {
        let d = ops.dim();
        let mut a = ops.ladder.clone();
        a.push(0.0);
        let mut kd = vec![0.0; d];
        for k in 1..d {
            kd[k] = a[k - 1] * a[k - 1];
        }
        let offsets = (0..=d).map(|r| packed_offset(d, r)).collect();
        Self {
            d,
            half_omega: 0.5 * params.omega,
            rate: params.kappa / ops.spin,
            a,
            kd,
            offsets,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn packed_len(&self) -> usize {
        self.d * (self.d + 1) / 2
    }

    pub fn pack(&self, rho: &ArrayView2<C64>) -> Vec<C64> {
        let mut out = Vec::with_capacity(self.packed_len());
        for r in 0..self.d {
            for c in r..self.d {
                out.push(0.5 * (rho[[r, c]] + rho[[c, r]].conj()));
            }
        }
        out
    }

    pub fn unpack(&self, packed: &[C64]) -> Array2<C64> {
        let d = self.d;
        let mut m = Array2::zeros((d, d));
        for r in 0..d {
            let row = &packed[self.offsets[r]..self.offsets[r + 1]];
            m[[r, r]] = C64::new(row[0].re, 0.0);
            for c in r + 1..d {
                m[[r, c]] = row[c - r];
                m[[c, r]] = row[c - r].conj();
            }
        }
        m
    }

    /// Derivative of the packed Hermitian state.
    pub fn apply(&self, rho: &[C64], out: &mut [C64]) {
        let d = self.d;
        let a = &self.a;
        let kd = &self.kd;
        let w = C64::new(0.0, -self.half_omega);
        let rate = self.rate;
        let zero = C64::new(0.0, 0.0);
        let row = |r: usize| &rho[self.offsets[r]..self.offsets[r + 1]];
        for r in 0..d {
            let cur = row(r);
            let o = &mut out[self.offsets[r]..self.offsets[r + 1]];
            let (ar, kr) = (a[r], kd[r]);
            // Diagonal entry: the neighbours below the diagonal are mirrored.
            {
                let mut comm = zero;
                if r > 0 {
                    let x = row(r - 1)[1];
                    comm += a[r - 1] * (x - x.conj());
                }
                let mut diss = -kr * cur[0];
                if r + 1 < d {
                    let x = cur[1];
                    comm += ar * (x.conj() - x);
                    diss += ar * ar * row(r + 1)[0];
                }
                o[0] = w * comm + rate * diss;
            }
            if r + 1 == d {
                continue;
            }
            // c in r+1..d; offsets into the neighbouring rows:
            //   ρ[r-1][c] = up[c-r+1], ρ[r+1][c] = down[c-r-1], ρ[r][c±1] = cur[c-r±1]
            let up = if r > 0 { Some(row(r - 1)) } else { None };
            let down = row(r + 1);
            let a_up = if r > 0 { a[r - 1] } else { 0.0 };
            let last = d - 1;
            for c in r + 1..d {
                let j = c - r;
                let mut comm = ar * down[j - 1] - a[c - 1] * cur[j - 1];
                if let Some(u) = up {
                    comm += a_up * u[j + 1];
                }
                let mut diss = -0.5 * (kr + kd[c]) * cur[j];
                if c < last {
                    comm -= a[c] * cur[j + 1];
                    diss += ar * a[c] * down[j];
                }
                o[j] = w * comm + rate * diss;
            }
        }
    }
}

impl OdeSystem for DickeGenerator {
    fn dim(&self) -> usize {
        2 * self.packed_len()
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let rho: &[C64] = bytemuck::cast_slice(y);
        let out: &mut [C64] = bytemuck::cast_slice_mut(dy);
        self.apply(rho, out);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionSpec {
    pub t_end: f64,
    pub sample_dt: f64,
    #[serde(default = "default_rtol")]
    pub rel_tol: f64,
    #[serde(default = "default_atol")]
    pub abs_tol: f64,
    #[serde(default = "default_observables")]
    pub observables: Vec<Observable>,
    /// Number of evenly spaced samples at which the smallest eigenvalue of ρ
    /// is computed; 0 disables the check.
    #[serde(default = "default_positivity_checks")]
    pub positivity_checks: usize,
}

pub fn default_rtol() -> f64 {
    1e-10
}
pub fn default_atol() -> f64 {
    1e-12
}
fn default_observables() -> Vec<Observable> {
    Observable::all_at_order(2)
}
fn default_positivity_checks() -> usize {
    16
}

impl EvolutionSpec {
    pub fn new(t_end: f64, sample_dt: f64) -> Self {
        Self {
            t_end,
            sample_dt,
            rel_tol: default_rtol(),
            abs_tol: default_atol(),
            observables: default_observables(),
            positivity_checks: default_positivity_checks(),
        }
    }

    pub fn with_tolerances(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = abs_tol;
        self
    }

    pub fn with_observables(mut self, obs: Vec<Observable>) -> Self {
        self.observables = obs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        validate_timing(self.t_end, self.sample_dt, self.rel_tol, self.abs_tol)?;
        if self.observables.is_empty() {
            return Err(Error::InvalidParameter("no observables requested".into()));
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        sample_grid(self.t_end, self.sample_dt)
    }

    fn max_order(&self) -> u8 {
        self.observables.iter().map(|o| o.order()).max().unwrap_or(1)
    }
}

pub(crate) fn validate_timing(t_end: f64, dt: f64, rtol: f64, atol: f64) -> Result<()> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!("t_end must be positive, got {t_end}")));
    }
    if !(dt > 0.0 && dt <= t_end) {
        return Err(Error::InvalidParameter(format!(
            "sample_dt must lie in (0, t_end], got {dt}"
        )));
    }
    for (name, v) in [("rel_tol", rtol), ("abs_tol", atol)] {
        if !(v > 0.0 && v <= 1e-2) {
            return Err(Error::InvalidParameter(format!("{name} must lie in (0, 1e-2], got {v}")));
        }
    }
    Ok(())
}

/// Summary of invariant monitoring along a trajectory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ExactDiagnostics {
    pub max_trace_drift: f64,
    pub min_eigenvalue: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

/// Integrate and hand each sample to `on_sample`. The state is stored as
/// its upper triangle, so samples are Hermitian by construction.
pub fn evolve_exact_with<F>(
    rho0: &DickeDensityMatrix,
    params: &ModelParams,
    spec: &EvolutionSpec,
    mut on_sample: F,
) -> Result<ExactDiagnostics>
where
    F: FnMut(f64, &DickeDensityMatrix) -> Result<()>,
{
    params.validate()?;
    spec.validate()?;
    if rho0.params.n != params.n {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            got: rho0.dim(),
        });
    }
    rho0.check_hermitian_and_trace()?;
    let ops = build_collective_ops(params)?;
    let gen = DickeGenerator::new(params, &ops);
    let times = spec.times();
    let stride = if spec.positivity_checks == 0 {
        usize::MAX
    } else {
        (times.len() / spec.positivity_checks).max(1)
    };

    let y0: Vec<f64> = bytemuck::cast_slice(&gen.pack(&rho0.data.view())).to_vec();
    let mut diag = ExactDiagnostics {
        min_eigenvalue: f64::INFINITY,
        ..Default::default()
    };
    let mut idx = 0usize;
    let solver = Dop853::new(spec.rel_tol, spec.abs_tol);
    let stats: IntegrationStats = solver.integrate(&gen, 0.0, &y0, &times, |t, y| {
        let rho = DickeDensityMatrix::unchecked(gen.unpack(bytemuck::cast_slice(y)), *params)?;
        let drift = (rho.trace() - 1.0).norm();
        if !drift.is_finite() {
            return Err(Error::NonFinite { t });
        }
        diag.max_trace_drift = diag.max_trace_drift.max(drift);
        if drift > TRACE_DRIFT_TOL {
            return Err(Error::ToleranceFailure {
                t,
                what: format!("trace drift {drift:.3e} exceeds {TRACE_DRIFT_TOL:.0e}"),
            });
        }
        let check = stride != usize::MAX && (idx % stride == 0 || idx + 1 == times.len());
        if check {
            let e = rho.min_eigenvalue()?;
            diag.min_eigenvalue = diag.min_eigenvalue.min(e);
            if e < -crate::spin::POSITIVITY_TOL {
                log::warn!("negative eigenvalue {e:.3e} at t = {t}");
            }
        }
        idx += 1;
        on_sample(t, &rho)
    })?;
    diag.accepted_steps = stats.accepted;
    diag.rejected_steps = stats.rejected;
    if !diag.min_eigenvalue.is_finite() {
        diag.min_eigenvalue = f64::NAN;
    }
    Ok(diag)
}

pub fn evolve_exact(
    rho0: &DickeDensityMatrix,
    params: &ModelParams,
    spec: &EvolutionSpec,
) -> Result<TimeSeries> {
    evolve_exact_labeled(rho0, params, spec, None)
}

/// As [`evolve_exact`], recording the state family in the metadata.
pub fn evolve_exact_labeled(
    rho0: &DickeDensityMatrix,
    params: &ModelParams,
    spec: &EvolutionSpec,
    family: Option<StateFamily>,
) -> Result<TimeSeries> {
    let ops = build_collective_ops(params)?;
    let order = spec.max_order();
    let mut times = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); spec.observables.len()];
    let diag = evolve_exact_with(rho0, params, spec, |t, rho| {
        let st = cumulants_unchecked(&rho.data.view(), &ops, order);
        times.push(t);
        for (c, o) in spec.observables.iter().enumerate() {
            cols[c].push(o.value(&st));
        }
        Ok(())
    })?;
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("max_trace_drift".into(), diag.max_trace_drift);
    diagnostics.insert("min_eigenvalue".into(), diag.min_eigenvalue);
    diagnostics.insert("accepted_steps".into(), diag.accepted_steps as f64);
    diagnostics.insert("rejected_steps".into(), diag.rejected_steps as f64);
    Ok(TimeSeries {
        times,
        columns: spec.observables.iter().copied().zip(cols).collect(),
        meta: SeriesMeta {
            generator: Generator::Exact,
            n: Some(params.n),
            omega: params.omega,
            kappa: params.kappa,
            state: family,
            state_label: family.map(|f| f.label()).unwrap_or_else(|| "custom".into()),
            t_end: spec.t_end,
            sample_dt: spec.sample_dt,
            rel_tol: spec.rel_tol,
            abs_tol: spec.abs_tol,
            diagnostics,
        },
    })
}

/// `tr(ρ O)` for a dense operator.
pub fn expectation(rho: &ArrayView2<C64>, op: &Array2<C64>) -> C64 {
    let d = rho.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for r in 0..d {
        for c in 0..d {
            acc += op[[r, c]] * rho[[c, r]];
        }
    }
    acc
}
