//! Truncated cumulant hierarchy in the thermodynamic limit.
//!
//! Order 1 is the mean-field flow, order 2 closes with third cumulants set to
//! zero, order 3 closes with fourth cumulants set to zero. The right-hand
//! sides are written out term by term in the printed form so they can be
//! compared line by line; `w` stands for the drive (ω₀ = Ω).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lindblad::validate_timing;
use crate::ode::{Dop853, OdeSystem};
use crate::series::{sample_grid, Generator, Observable, SeriesMeta, TimeSeries};
use crate::spin::{check_order, CumulantState, ModelParams, StateFamily};

/// Largest accepted asymmetry of χ or τ on input.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Drive and dissipation for the N → ∞ flows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub omega: f64,
    pub kappa: f64,
}

impl FlowParams {
    pub fn new(omega: f64, kappa: f64) -> Result<Self> {
        let p = Self { omega, kappa };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        // Reuse the finite-N checks with a dummy atom count.
        ModelParams {
            n: 1,
            omega: self.omega,
            kappa: self.kappa,
        }
        .validate()
    }
}

impl From<ModelParams> for FlowParams {
    fn from(p: ModelParams) -> Self {
        Self {
            omega: p.omega,
            kappa: p.kappa,
        }
    }
}

fn expect_order(state: &CumulantState, order: u8) -> Result<()> {
    if state.order != order {
        return Err(Error::InvalidParameter(format!(
            "expected an order-{order} cumulant state, got order {}",
            state.order
        )));
    }
    Ok(())
}

fn check_symmetric(state: &CumulantState) -> Result<()> {
    let a = state.chi_asymmetry();
    if a > SYMMETRY_TOL {
        return Err(Error::InvalidState(format!("chi is not symmetric (asymmetry {a:.3e})")));
    }
    if state.order >= 3 {
        let a = state.tau_asymmetry();
        if a > SYMMETRY_TOL {
            return Err(Error::InvalidState(format!("tau is not fully symmetric (asymmetry {a:.3e})")));
        }
    }
    Ok(())
}

pub fn meanfield_rhs(state: &CumulantState, p: &FlowParams) -> Result<CumulantState> {
    expect_order(state, 1)?;
    let (k, w) = (p.kappa, p.omega);
    let [mx, my, mz] = state.m;
    let mut d = CumulantState::zeros(1)?;
    d.m[0] = k * mx * mz;
    d.m[1] = (k * my - w) * mz;
    d.m[2] = -k * mx * mx - k * my * my + w * my;
    Ok(d)
}

pub fn cumulant2_rhs(state: &CumulantState, p: &FlowParams) -> Result<CumulantState> {
    expect_order(state, 2)?;
    check_symmetric(state)?;
    let (k, w) = (p.kappa, p.omega);
    let [mx, my, mz] = state.m;
    let c = &state.chi;
    let (xx, xy, xz, yy, yz, zz) = (c[0][0], c[0][1], c[0][2], c[1][1], c[1][2], c[2][2]);
    let mut d = CumulantState::zeros(2)?;
    d.m[0] = k * xz + k * mx * mz;
    d.m[1] = k * yz + (k * my - w) * mz;
    d.m[2] = -k * xx - k * yy - k * mx * mx - k * my * my + w * my;
    d.set_chi_sym(0, 0, 2.0 * k * mz * xx + 2.0 * k * mx * xz);
    d.set_chi_sym(0, 1, 2.0 * k * mz * xy + (k * my - w) * xz + k * mx * yz);
    d.set_chi_sym(
        0,
        2,
        -2.0 * k * mx * xx + (w - 2.0 * k * my) * xy + k * mz * xz + k * mx * zz,
    );
    d.set_chi_sym(1, 1, 2.0 * k * mz * yy + (2.0 * k * my - 2.0 * w) * yz);
    d.set_chi_sym(
        1,
        2,
        -2.0 * k * mx * xy + (w - 2.0 * k * my) * yy + k * mz * yz + (k * my - w) * zz,
    );
    d.set_chi_sym(2, 2, -4.0 * k * mx * xz + (2.0 * w - 4.0 * k * my) * yz);
    Ok(d)
}

pub fn cumulant3_rhs(state: &CumulantState, p: &FlowParams) -> Result<CumulantState> {
    expect_order(state, 3)?;
    check_symmetric(state)?;
    let (k, w) = (p.kappa, p.omega);
    let [mx, my, mz] = state.m;
    let c = &state.chi;
    let (xx, xy, xz, yy, yz, zz) = (c[0][0], c[0][1], c[0][2], c[1][1], c[1][2], c[2][2]);
    // Appears as a separate symbol in the printed τ̇_yzz line.
    let zy = c[2][1];
    let t = &state.tau;
    let txxx = t[0][0][0];
    let tyyy = t[1][1][1];
    let tzzz = t[2][2][2];
    let txxy = t[0][0][1];
    let txxz = t[0][0][2];
    let txyy = t[0][1][1];
    let tyyz = t[1][1][2];
    let txzz = t[0][2][2];
    let tyzz = t[1][2][2];
    let txyz = t[0][1][2];

    let mut d = CumulantState::zeros(3)?;
    // The mean equations only see χ.
    d.m[0] = k * xz + k * mx * mz;
    d.m[1] = k * yz + (k * my - w) * mz;
    d.m[2] = -k * xx - k * yy - k * mx * mx - k * my * my + w * my;

    d.set_chi_sym(0, 0, 2.0 * xx * k * mz + 2.0 * xz * k * mx + 2.0 * k * txxz);
    d.set_chi_sym(
        1,
        1,
        2.0 * yy * k * mz + 2.0 * yz * k * my - 2.0 * yz * w + 2.0 * k * tyyz,
    );
    d.set_chi_sym(
        2,
        2,
        -4.0 * xz * k * mx - 4.0 * yz * k * my + 2.0 * yz * w - 2.0 * k * txxz - 2.0 * k * tyyz,
    );
    d.set_chi_sym(
        0,
        1,
        2.0 * xy * k * mz + xz * k * my - xz * w + yz * k * mx + 2.0 * k * txyz,
    );
    d.set_chi_sym(
        0,
        2,
        -2.0 * xx * k * mx - 2.0 * xy * k * my + xy * w + xz * k * mz + zz * k * mx
            - k * txxx
            - k * txyy
            + k * txzz,
    );
    d.set_chi_sym(
        1,
        2,
        -2.0 * xy * k * mx - 2.0 * yy * k * my + yy * w + yz * k * mz + zz * k * my - zz * w
            - k * txxy
            - k * tyyy
            + k * tyzz,
    );

    d.set_tau_sym(0, 0, 0, 6.0 * xx * xz * k + 3.0 * k * mx * txxz + 3.0 * k * mz * txxx);
    d.set_tau_sym(
        1,
        1,
        1,
        6.0 * yy * yz * k + 3.0 * k * my * tyyz + 3.0 * k * mz * tyyy - 3.0 * w * tyyz,
    );
    d.set_tau_sym(
        2,
        2,
        2,
        -6.0 * xz * xz * k - 6.0 * yz * yz * k - 6.0 * k * mx * txzz - 6.0 * k * my * tyzz
            + 3.0 * w * tyzz,
    );
    d.set_tau_sym(
        0,
        0,
        1,
        2.0 * xx * yz * k + 4.0 * xy * xz * k + 2.0 * k * mx * txyz + k * my * txxz
            + 3.0 * k * mz * txxy
            - w * txxz,
    );
    d.set_tau_sym(
        0,
        0,
        2,
        -2.0 * xx * xx * k + 2.0 * xx * zz * k - 2.0 * xy * xy * k + 2.0 * xz * xz * k
            - 2.0 * k * mx * txxx
            + 2.0 * k * mx * txzz
            - 2.0 * k * my * txxy
            + 2.0 * k * mz * txxz
            + w * txxy,
    );
    d.set_tau_sym(
        0,
        1,
        1,
        4.0 * xy * yz * k + 2.0 * xz * yy * k + k * mx * tyyz + 2.0 * k * my * txyz
            + 3.0 * k * mz * txyy
            - 2.0 * w * txyz,
    );
    d.set_tau_sym(
        1,
        1,
        2,
        -2.0 * xy * xy * k - 2.0 * yy * yy * k + 2.0 * yy * zz * k + 2.0 * yz * yz * k
            - 2.0 * k * mx * txyy
            - 2.0 * k * my * tyyy
            + 2.0 * k * my * tyzz
            + 2.0 * k * mz * tyyz
            + w * tyyy
            - 2.0 * w * tyzz,
    );
    d.set_tau_sym(
        0,
        2,
        2,
        -4.0 * xx * xz * k - 4.0 * xy * yz * k + 2.0 * xz * zz * k - 4.0 * k * mx * txxz
            + k * mx * tzzz
            - 4.0 * k * my * txyz
            + k * mz * txzz
            + 2.0 * w * txyz,
    );
    d.set_tau_sym(
        1,
        2,
        2,
        -4.0 * xy * xz * k - 6.0 * yy * yz * k + 2.0 * yy * zy * k + 2.0 * yz * zz * k
            - 2.0 * yz * k * mx * mx
            - 2.0 * yz * k * my * my
            + 2.0 * yz * my * w
            + 2.0 * zy * k * mx * mx
            + 2.0 * zy * k * my * my
            - 2.0 * zy * my * w
            - 4.0 * k * mx * txyz
            - 4.0 * k * my * tyyz
            + k * my * tzzz
            + k * mz * tyzz
            + 2.0 * w * tyyz
            - w * tzzz,
    );
    d.set_tau_sym(
        0,
        1,
        2,
        -2.0 * xx * xy * k - 2.0 * xy * yy * k + 2.0 * xy * zz * k + 2.0 * xz * yz * k
            - 2.0 * k * mx * txxy
            + k * mx * tyzz
            - 2.0 * k * my * txyy
            + k * my * txzz
            + 2.0 * k * mz * txyz
            + w * txyy
            - w * txzz,
    );
    Ok(d)
}

/// Dispatch on `state.order`.
pub fn flow_rhs(state: &CumulantState, p: &FlowParams) -> Result<CumulantState> {
    match state.order {
        1 => meanfield_rhs(state, p),
        2 => cumulant2_rhs(state, p),
        3 => cumulant3_rhs(state, p),
        o => Err(Error::InvalidParameter(format!("no flow of order {o}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub order: u8,
    pub params: FlowParams,
    pub t_end: f64,
    pub sample_dt: f64,
    #[serde(default = "default_rtol")]
    pub rel_tol: f64,
    #[serde(default = "default_atol")]
    pub abs_tol: f64,
}

fn default_rtol() -> f64 {
    1e-12
}
fn default_atol() -> f64 {
    1e-14
}

impl FlowSpec {
    pub fn new(order: u8, params: FlowParams, t_end: f64, sample_dt: f64) -> Self {
        Self {
            order,
            params,
            t_end,
            sample_dt,
            rel_tol: default_rtol(),
            abs_tol: default_atol(),
        }
    }

    pub fn with_tolerances(mut self, rel_tol: f64, abs_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self.abs_tol = abs_tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_order(self.order)?;
        self.params.validate()?;
        validate_timing(self.t_end, self.sample_dt, self.rel_tol, self.abs_tol)
    }
}

struct FlowSystem {
    order: u8,
    params: FlowParams,
}

impl OdeSystem for FlowSystem {
    fn dim(&self) -> usize {
        CumulantState::packed_len(self.order)
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        // Packed storage is symmetric by construction, so neither step can fail.
        let st = CumulantState::unpack(self.order, y).expect("packed length");
        let d = flow_rhs(&st, &self.params).expect("symmetric state");
        dy.copy_from_slice(&d.pack());
    }
}

pub fn evolve_flow(init: &CumulantState, spec: &FlowSpec) -> Result<TimeSeries> {
    evolve_flow_labeled(init, spec, None)
}

pub fn evolve_flow_labeled(
    init: &CumulantState,
    spec: &FlowSpec,
    family: Option<StateFamily>,
) -> Result<TimeSeries> {
    spec.validate()?;
    if init.order != spec.order {
        return Err(Error::InvalidParameter(format!(
            "initial state has order {} but the flow has order {}",
            init.order, spec.order
        )));
    }
    check_symmetric(init)?;
    let sys = FlowSystem {
        order: spec.order,
        params: spec.params,
    };
    let obs = Observable::all_at_order(spec.order);
    let times = sample_grid(spec.t_end, spec.sample_dt);
    let mut out_t = Vec::with_capacity(times.len());
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(times.len()); obs.len()];
    let solver = Dop853::new(spec.rel_tol, spec.abs_tol);
    let stats = solver.integrate(&sys, 0.0, &init.pack(), &times, |t, y| {
        let st = CumulantState::unpack(spec.order, y)?;
        out_t.push(t);
        for (c, o) in obs.iter().enumerate() {
            cols[c].push(o.value(&st));
        }
        Ok(())
    })?;
    let generator = Generator::for_order(spec.order)?;
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("accepted_steps".into(), stats.accepted as f64);
    diagnostics.insert("rejected_steps".into(), stats.rejected as f64);
    Ok(TimeSeries {
        times: out_t,
        columns: obs.into_iter().zip(cols).collect(),
        meta: SeriesMeta {
            generator,
            n: None,
            omega: spec.params.omega,
            kappa: spec.params.kappa,
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
