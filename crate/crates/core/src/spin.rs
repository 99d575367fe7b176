//! Collective spin-S operators in the maximal-spin Dicke sector, initial
//! states, and cumulant extraction.
//!
//! Basis ordering is `|S, m⟩` with `m` ascending from `-S`; index `k = S + m`.
//! Ladder operators are `S± = Sx ± i Sy` and the single sites are spin-1/2,
//! so `Sz` has eigenvalues `-S..=S`.

use std::f64::consts::{PI, TAU};

use ndarray::{Array1, Array2, ArrayView2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Banded, I, ONE, ZERO};

pub const HERMITICITY_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-8;

/// Unique index pairs of a symmetric 3x3 tensor, in packing order.
pub const PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

/// Unique sorted index triples of a fully symmetric 3x3x3 tensor.
pub const TRIPLES: [(usize, usize, usize); 10] = [
    (0, 0, 0),
    (0, 0, 1),
    (0, 0, 2),
    (0, 1, 1),
    (0, 1, 2),
    (0, 2, 2),
    (1, 1, 1),
    (1, 1, 2),
    (1, 2, 2),
    (2, 2, 2),
];

pub const AXES: [char; 3] = ['x', 'y', 'z'];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: u32,
    pub omega: f64,
    pub kappa: f64,
}

impl ModelParams {
    pub fn new(n: u32, omega: f64, kappa: f64) -> Result<Self> {
        let p = Self { n, omega, kappa };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("N must be at least 1".into()));
        }
        if !self.omega.is_finite() || self.omega < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "omega must be finite and non-negative, got {}",
                self.omega
            )));
        }
        if !self.kappa.is_finite() || self.kappa <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "kappa must be finite and positive, got {}",
                self.kappa
            )));
        }
        Ok(())
    }

    /// Total spin S = N/2.
    pub fn spin(&self) -> f64 {
        self.n as f64 / 2.0
    }

    pub fn dim(&self) -> usize {
        self.n as usize + 1
    }

    pub fn ratio(&self) -> f64 {
        self.omega / self.kappa
    }
}

/// Collective operators, both as dense matrices and as banded tables used
/// for fast moment evaluation.
#[derive(Debug, Clone)]
pub struct CollectiveOps {
    pub spin: f64,
    pub sx: Array2<C64>,
    pub sy: Array2<C64>,
    pub sz: Array2<C64>,
    pub sp: Array2<C64>,
    pub sm: Array2<C64>,
    pub s2: Array2<C64>,
    /// `m` values of the basis, ascending.
    pub m: Vec<f64>,
    /// `S+[k+1][k] = ladder[k]`.
    pub ladder: Vec<f64>,
    axes: [Banded; 3],
    pair_sym: [Banded; 6],
    raw_pairs: Vec<Banded>,
    triple_sym: Vec<Banded>,
}

pub fn build_collective_ops(params: &ModelParams) -> Result<CollectiveOps> {
    params.validate()?;
    let d = params.dim();
    let s = params.spin();
    let m: Vec<f64> = (0..d).map(|k| k as f64 - s).collect();
    let ladder: Vec<f64> = (0..d - 1)
        .map(|k| (s * (s + 1.0) - m[k] * (m[k] + 1.0)).max(0.0).sqrt())
        .collect();

    let mut sp = Banded::zeros(d, 1);
    let mut sm = Banded::zeros(d, 1);
    let mut sz = Banded::zeros(d, 0);
    for k in 0..d {
        sz.set(k, k, C64::new(m[k], 0.0));
    }
    for (k, &a) in ladder.iter().enumerate() {
        sp.set(k + 1, k, C64::new(a, 0.0));
        sm.set(k, k + 1, C64::new(a, 0.0));
    }
    let sx = scale(&sp.add_scaled(&sm, ONE), C64::new(0.5, 0.0));
    let sy = scale(&sp.add_scaled(&sm, -ONE), C64::new(0.0, -0.5));
    let axes = [sx, sy, sz];

    let mut raw_pairs = Vec::with_capacity(9);
    for i in 0..3 {
        for j in 0..3 {
            raw_pairs.push(axes[i].mul(&axes[j]));
        }
    }
    let pair_sym = PAIRS.map(|(i, j)| {
        scale(
            &raw_pairs[3 * i + j].add_scaled(&raw_pairs[3 * j + i], ONE),
            C64::new(0.5, 0.0),
        )
    });
    let triple_sym = TRIPLES
        .iter()
        .map(|&(i, j, k)| {
            let perms = [(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)];
            let mut acc = Banded::zeros(d, 3);
            for (a, b, c) in perms {
                acc = acc.add_scaled(&raw_pairs[3 * a + b].mul(&axes[c]), ONE);
            }
            scale(&acc, C64::new(1.0 / 6.0, 0.0))
        })
        .collect();

    let s2 = raw_pairs[0]
        .add_scaled(&raw_pairs[4], ONE)
        .add_scaled(&raw_pairs[8], ONE);

    Ok(CollectiveOps {
        spin: s,
        sx: axes[0].to_dense(),
        sy: axes[1].to_dense(),
        sz: axes[2].to_dense(),
        sp: sp.to_dense(),
        sm: sm.to_dense(),
        s2: s2.to_dense(),
        m,
        ladder,
        axes,
        pair_sym,
        raw_pairs,
        triple_sym,
    })
}

fn scale(b: &Banded, s: C64) -> Banded {
    Banded::zeros(b.dim(), 0).add_scaled(b, s)
}

impl CollectiveOps {
    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn axis(&self, i: usize) -> &Array2<C64> {
        match i {
            0 => &self.sx,
            1 => &self.sy,
            2 => &self.sz,
            _ => panic!("axis index {i} out of range"),
        }
    }

    /// `⟨S_i⟩ = tr(ρ S_i)`.
    pub fn mean(&self, rho: &ArrayView2<C64>, i: usize) -> f64 {
        self.axes[i].trace_with(rho).re
    }

    /// Raw (non-symmetrised) `⟨S_i S_j⟩`.
    pub fn raw_second_moment(&self, rho: &ArrayView2<C64>, i: usize, j: usize) -> C64 {
        self.raw_pairs[3 * i + j].trace_with(rho)
    }

    /// `⟨{S_i, S_j}⟩ / 2` for the `p`-th entry of [`PAIRS`].
    pub fn sym_second_moment(&self, rho: &ArrayView2<C64>, p: usize) -> f64 {
        self.pair_sym[p].trace_with(rho).re
    }

    /// Fully symmetrised third moment for the `t`-th entry of [`TRIPLES`].
    pub fn sym_third_moment(&self, rho: &ArrayView2<C64>, t: usize) -> f64 {
        self.triple_sym[t].trace_with(rho).re
    }

    /// Dense `(S_i S_j + S_j S_i) / 2`.
    pub fn sym_pair_matrix(&self, i: usize, j: usize) -> Array2<C64> {
        let p = pair_index(i, j);
        self.pair_sym[p].to_dense()
    }
}

pub fn pair_index(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    PAIRS.iter().position(|&p| p == (a, b)).unwrap()
}

pub fn triple_index(i: usize, j: usize, k: usize) -> usize {
    let mut v = [i, j, k];
    v.sort_unstable();
    TRIPLES
        .iter()
        .position(|&t| t == (v[0], v[1], v[2]))
        .unwrap()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DickeDensityMatrix {
    pub data: Array2<C64>,
    pub params: ModelParams,
}

impl DickeDensityMatrix {
    /// Validated constructor: Hermiticity, unit trace and positivity.
    pub fn new(data: Array2<C64>, params: ModelParams) -> Result<Self> {
        let rho = Self::unchecked(data, params)?;
        rho.check_hermitian_and_trace()?;
        let min_eig = rho.min_eigenvalue()?;
        if min_eig < -POSITIVITY_TOL {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(rho)
    }

    /// Shape check only. Used for integrator samples where positivity is
    /// monitored rather than enforced.
    pub fn unchecked(data: Array2<C64>, params: ModelParams) -> Result<Self> {
        let d = params.dim();
        if data.dim() != (d, d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: data.nrows(),
            });
        }
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().to_owned()
        };
        Ok(Self { data, params })
    }

    /// Projector onto a normalised state vector.
    pub fn from_pure(psi: &Array1<C64>, params: ModelParams) -> Result<Self> {
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidState(format!("state norm {norm} is not 1")));
        }
        let d = psi.len();
        let data = Array2::from_shape_fn((d, d), |(r, c)| psi[r] * psi[c].conj());
        Self::unchecked(data, params)
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn trace(&self) -> C64 {
        self.data.diag().sum()
    }

    /// Relative Frobenius distance from Hermiticity.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim();
        let mut num = 0.0;
        for r in 0..d {
            for c in 0..d {
                num += (self.data[[r, c]] - self.data[[c, r]].conj()).norm_sqr();
            }
        }
        num.sqrt() / linalg::frobenius(&self.data).max(f64::MIN_POSITIVE)
    }

    pub fn check_hermitian_and_trace(&self) -> Result<()> {
        let h = self.hermiticity_error();
        if h > HERMITICITY_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (relative error {h:.3e})")));
        }
        let tr = self.trace();
        if (tr - ONE).norm() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} deviates from 1")));
        }
        Ok(())
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        let w = linalg::eigvals_hermitian(&self.data)?;
        Ok(w.first().copied().unwrap_or(0.0))
    }

    /// Replace the matrix by its Hermitian part.
    pub fn symmetrize(&mut self) {
        let h = (&self.data + &linalg::dagger(&self.data)).mapv(|z| z * 0.5);
        self.data = h;
    }

    pub fn expect(&self, op: &Array2<C64>) -> C64 {
        let d = self.dim();
        let mut acc = ZERO;
        for r in 0..d {
            for c in 0..d {
                acc += op[[r, c]] * self.data[[c, r]];
            }
        }
        acc
    }
}

pub fn dicke_state(params: &ModelParams, m: f64) -> Result<DickeDensityMatrix> {
    params.validate()?;
    let s = params.spin();
    let k = m + s;
    if !(m >= -s && m <= s) || (k - k.round()).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "m = {m} is not a valid magnetic quantum number for S = {s}"
        )));
    }
    let mut psi = Array1::zeros(params.dim());
    psi[k.round() as usize] = ONE;
    DickeDensityMatrix::from_pure(&psi, *params)
}

/// Half-angle sine and cosine with rounding residue snapped to zero, so that
/// e.g. `θ = π` gives exactly `|S, S⟩`.
fn half_angles(theta: f64) -> (f64, f64) {
    let t = theta.rem_euclid(TAU) / 2.0;
    let snap = |v: f64| if v.abs() < 1e-15 { 0.0 } else { v };
    (snap(t.sin()), snap(t.cos()))
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    for k in 1..=n {
        out[k] = out[k - 1] + (k as f64).ln();
    }
    out
}

fn signed_pow(base: f64, exp: usize) -> (f64, f64) {
    // (sign, log|base|^exp), with 0^0 = 1.
    if exp == 0 {
        return (1.0, 0.0);
    }
    if base == 0.0 {
        return (0.0, f64::NEG_INFINITY);
    }
    let sign = if base < 0.0 && exp % 2 == 1 { -1.0 } else { 1.0 };
    (sign, exp as f64 * base.abs().ln())
}

/// Dicke-basis amplitudes of the spin coherent state `|θ, φ⟩`.
pub fn coherent_amplitudes(n: u32, theta: f64, phi: f64) -> Array1<C64> {
    let n = n as usize;
    let (s, c) = half_angles(theta);
    let lf = ln_factorials(n);
    Array1::from_shape_fn(n + 1, |k| {
        let (sg1, l1) = signed_pow(s, k);
        let (sg2, l2) = signed_pow(c, n - k);
        let sign = sg1 * sg2;
        if sign == 0.0 {
            return ZERO;
        }
        let mag = (0.5 * (lf[n] - lf[k] - lf[n - k]) + l1 + l2).exp();
        C64::from_polar(sign * mag, -(k as f64) * phi)
    })
}

pub fn coherent_state(params: &ModelParams, theta: f64, phi: f64) -> Result<DickeDensityMatrix> {
    params.validate()?;
    let mut psi = coherent_amplitudes(params.n, theta, phi);
    // Renormalise away the last few ulps of the log-space evaluation.
    let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    psi.mapv_inplace(|z| z / norm);
    DickeDensityMatrix::from_pure(&psi, *params)
}

/// `Ψ(θ, φ)` together with the branch-degeneracy flag.
#[derive(Debug, Clone)]
pub struct Superposition {
    pub rho: DickeDensityMatrix,
    /// Set when `θ` and `π − θ` give the same coherent state (θ = π/2 mod π);
    /// `rho` is then that single coherent state.
    pub degenerate: bool,
}

pub fn scs_superposition(params: &ModelParams, theta: f64, phi: f64) -> Result<Superposition> {
    params.validate()?;
    let (s1, c1) = half_angles(theta);
    let (s2, c2) = half_angles(PI - theta);
    if ((s1 - s2).abs() < 1e-12 && (c1 - c2).abs() < 1e-12)
        || ((s1 + s2).abs() < 1e-12 && (c1 + c2).abs() < 1e-12)
    {
        log::warn!("superposition branches coincide at theta = {theta}; returning a single coherent state");
        return Ok(Superposition {
            rho: coherent_state(params, theta, phi)?,
            degenerate: true,
        });
    }
    let a = coherent_amplitudes(params.n, theta, phi);
    let b = coherent_amplitudes(params.n, PI - theta, phi);
    // ⟨θ,φ|π−θ,φ⟩ is a product of identical single-site overlaps.
    let overlap = (s1 * s2 + c1 * c2).powi(params.n as i32);
    let norm_sq = 2.0 + 2.0 * overlap;
    let v = &a + &b;
    let d = v.len();
    let data = Array2::from_shape_fn((d, d), |(r, c)| v[r] * v[c].conj() / norm_sq);
    let rho = DickeDensityMatrix::unchecked(data, *params)?;
    rho.check_hermitian_and_trace()?;
    Ok(Superposition {
        rho,
        degenerate: false,
    })
}

/// `(|S,−S⟩ + |S,S⟩)/√2`.
pub fn cat_state(params: &ModelParams) -> Result<DickeDensityMatrix> {
    Ok(scs_superposition(params, 0.0, 0.0)?.rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CumulantState {
    pub order: u8,
    pub m: [f64; 3],
    pub chi: [[f64; 3]; 3],
    pub tau: [[[f64; 3]; 3]; 3],
}

impl CumulantState {
    pub fn zeros(order: u8) -> Result<Self> {
        check_order(order)?;
        Ok(Self {
            order,
            m: [0.0; 3],
            chi: [[0.0; 3]; 3],
            tau: [[[0.0; 3]; 3]; 3],
        })
    }

    /// Number of independent real components at this order.
    pub fn packed_len(order: u8) -> usize {
        match order {
            1 => 3,
            2 => 9,
            _ => 19,
        }
    }

    pub fn pack(&self) -> Vec<f64> {
        let mut out = self.m.to_vec();
        if self.order >= 2 {
            out.extend(PAIRS.iter().map(|&(i, j)| self.chi[i][j]));
        }
        if self.order >= 3 {
            out.extend(TRIPLES.iter().map(|&(i, j, k)| self.tau[i][j][k]));
        }
        out
    }

    pub fn unpack(order: u8, y: &[f64]) -> Result<Self> {
        let mut st = Self::zeros(order)?;
        if y.len() != Self::packed_len(order) {
            return Err(Error::DimensionMismatch {
                expected: Self::packed_len(order),
                got: y.len(),
            });
        }
        st.m.copy_from_slice(&y[..3]);
        if order >= 2 {
            for (p, &(i, j)) in PAIRS.iter().enumerate() {
                st.chi[i][j] = y[3 + p];
                st.chi[j][i] = y[3 + p];
            }
        }
        if order >= 3 {
            for (t, &(i, j, k)) in TRIPLES.iter().enumerate() {
                st.set_tau_sym(i, j, k, y[9 + t]);
            }
        }
        Ok(st)
    }

    pub fn set_tau_sym(&mut self, i: usize, j: usize, k: usize, v: f64) {
        for (a, b, c) in [(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)] {
            self.tau[a][b][c] = v;
        }
    }

    pub fn set_chi_sym(&mut self, i: usize, j: usize, v: f64) {
        self.chi[i][j] = v;
        self.chi[j][i] = v;
    }

    /// Copy truncated (or zero-extended) to another order.
    pub fn with_order(&self, order: u8) -> Result<Self> {
        let mut st = Self::zeros(order)?;
        st.m = self.m;
        if order >= 2 && self.order >= 2 {
            st.chi = self.chi;
        }
        if order >= 3 && self.order >= 3 {
            st.tau = self.tau;
        }
        Ok(st)
    }

    pub fn chi_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((self.chi[i][j] - self.chi[j][i]).abs());
            }
        }
        worst
    }

    pub fn tau_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let v = self.tau[i][j][k];
                    for (a, b, c) in [(i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)] {
                        worst = worst.max((v - self.tau[a][b][c]).abs());
                    }
                }
            }
        }
        worst
    }

    /// `Σ m_i² + tr χ`, equal to `⟨S²⟩/S²`.
    pub fn s2_norm(&self) -> f64 {
        let m2: f64 = self.m.iter().map(|v| v * v).sum();
        m2 + self.chi[0][0] + self.chi[1][1] + self.chi[2][2]
    }
}

pub(crate) fn check_order(order: u8) -> Result<()> {
    if (1..=3).contains(&order) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "cumulant order must be 1, 2 or 3, got {order}"
        )))
    }
}

/// Parts of the raw moments that the real symmetric cumulants discard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CumulantDiagnostics {
    /// `Im(⟨S_i S_j⟩) / S²`, the commutator part `ε_ijk ⟨S_k⟩ / (2S²)`.
    pub chi_imag: [[f64; 3]; 3],
    pub max_chi_imag: f64,
}

pub fn cumulants_from_state(rho: &DickeDensityMatrix, order: u8) -> Result<CumulantState> {
    let ops = build_collective_ops(&rho.params)?;
    cumulants_with_ops(rho, &ops, order)
}

/// Same as [`cumulants_from_state`] with prebuilt operators; the input is
/// validated for Hermiticity and trace only.
pub fn cumulants_with_ops(
    rho: &DickeDensityMatrix,
    ops: &CollectiveOps,
    order: u8,
) -> Result<CumulantState> {
    rho.check_hermitian_and_trace()?;
    Ok(cumulants_unchecked(&rho.data.view(), ops, order))
}

pub(crate) fn cumulants_unchecked(rho: &ArrayView2<C64>, ops: &CollectiveOps, order: u8) -> CumulantState {
    let s = ops.spin;
    let mut st = CumulantState::zeros(order.clamp(1, 3)).unwrap();
    let mean = [ops.mean(rho, 0), ops.mean(rho, 1), ops.mean(rho, 2)];
    for i in 0..3 {
        st.m[i] = mean[i] / s;
    }
    if order < 2 {
        return st;
    }
    let mut second = [[0.0; 3]; 3];
    for (p, &(i, j)) in PAIRS.iter().enumerate() {
        let v = ops.sym_second_moment(rho, p);
        second[i][j] = v;
        second[j][i] = v;
        st.set_chi_sym(i, j, (v - mean[i] * mean[j]) / (s * s));
    }
    if order < 3 {
        return st;
    }
    for (t, &(i, j, k)) in TRIPLES.iter().enumerate() {
        let m3 = ops.sym_third_moment(rho, t);
        let v = m3 - second[i][j] * mean[k] - second[j][k] * mean[i] - second[i][k] * mean[j]
            + 2.0 * mean[i] * mean[j] * mean[k];
        st.set_tau_sym(i, j, k, v / (s * s * s));
    }
    st
}

pub fn cumulants_with_diagnostics(
    rho: &DickeDensityMatrix,
    ops: &CollectiveOps,
    order: u8,
) -> Result<(CumulantState, CumulantDiagnostics)> {
    let st = cumulants_with_ops(rho, ops, order)?;
    let view = rho.data.view();
    let s2 = ops.spin * ops.spin;
    let mut chi_imag = [[0.0; 3]; 3];
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let v = ops.raw_second_moment(&view, i, j).im / s2;
            chi_imag[i][j] = v;
            worst = worst.max(v.abs());
        }
    }
    if worst > 0.0 {
        log::debug!("discarded commutator part of chi: max |Im| = {worst:.3e}");
    }
    Ok((
        st,
        CumulantDiagnostics {
            chi_imag,
            max_chi_imag: worst,
        },
    ))
}

/// Raw complex second cumulants `(⟨S_i S_j⟩ − ⟨S_i⟩⟨S_j⟩) / S²`.
pub fn raw_second_cumulants(rho: &DickeDensityMatrix, ops: &CollectiveOps) -> [[C64; 3]; 3] {
    let view = rho.data.view();
    let s = ops.spin;
    let mean: Vec<f64> = (0..3).map(|i| ops.mean(&view, i)).collect();
    let mut out = [[ZERO; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (ops.raw_second_moment(&view, i, j) - mean[i] * mean[j]) / (s * s);
        }
    }
    out
}

/// Closed-form raw second cumulants of the coherent state `|θ,φ⟩` at spin
/// `s`, in the layout of [`raw_second_cumulants`]. Every entry is O(1/S).
pub fn coherent_second_cumulants(theta: f64, phi: f64, s: f64) -> [[C64; 3]; 3] {
    let (c2, s2) = ((0.5 * theta).cos().powi(2), (0.5 * theta).sin().powi(2));
    let (st, ct) = (theta.sin(), theta.cos());
    let e = C64::from_polar(1.0, phi);
    let k = 1.0 / (2.0 * s);
    let quartic = c2 * c2 + s2 * s2;
    let mut out = [[ZERO; 3]; 3];
    out[0][0] = C64::new(k * (quartic - 0.5 * st * st * (2.0 * phi).cos()), 0.0);
    out[1][1] = C64::new(k * (quartic + 0.5 * st * st * (2.0 * phi).cos()), 0.0);
    out[2][2] = C64::new(k * st * st, 0.0);
    out[0][1] = -k * C64::new(st * st * phi.sin() * phi.cos(), ct);
    out[0][2] = -k * st * (e * s2 - e.conj() * c2);
    out[1][2] = -k * st * (e * s2 + e.conj() * c2) / I;
    for i in 0..3 {
        for j in 0..i {
            out[i][j] = out[j][i].conj();
        }
    }
    out
}

/// Initial-state descriptor as it appears in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StateFamily {
    Cat,
    Coherent {
        theta: f64,
        phi: f64,
    },
    Scs {
        theta: f64,
        phi: f64,
    },
    Dicke {
        m: f64,
    },
    /// `|S, ±S⟩` for any N; `sign` is +1 or −1.
    DickeExtremal {
        #[serde(default = "default_sign")]
        sign: i8,
    },
}

fn default_sign() -> i8 {
    1
}

impl StateFamily {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StateFamily::Coherent { theta, phi } | StateFamily::Scs { theta, phi } => {
                if !theta.is_finite() || !phi.is_finite() {
                    return Err(Error::InvalidParameter("state angles must be finite".into()));
                }
            }
            StateFamily::Dicke { m } if !m.is_finite() => {
                return Err(Error::InvalidParameter("dicke m must be finite".into()));
            }
            StateFamily::DickeExtremal { sign } if sign != 1 && sign != -1 => {
                return Err(Error::InvalidParameter(format!(
                    "dicke-extremal sign must be +1 or -1, got {sign}"
                )));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn build(&self, params: &ModelParams) -> Result<DickeDensityMatrix> {
        self.validate()?;
        match *self {
            StateFamily::Cat => cat_state(params),
            StateFamily::Coherent { theta, phi } => coherent_state(params, theta, phi),
            StateFamily::Scs { theta, phi } => Ok(scs_superposition(params, theta, phi)?.rho),
            StateFamily::Dicke { m } => dicke_state(params, m),
            StateFamily::DickeExtremal { sign } => dicke_state(params, sign as f64 * params.spin()),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            StateFamily::Cat => "cat".into(),
            StateFamily::Coherent { theta, phi } => format!("coherent(theta={theta}, phi={phi})"),
            StateFamily::Scs { theta, phi } => format!("scs(theta={theta}, phi={phi})"),
            StateFamily::Dicke { m } => format!("dicke(m={m})"),
            StateFamily::DickeExtremal { sign } => format!("dicke-extremal(sign={sign})"),
        }
    }
}

/// N ladder and polynomial degree used when no closed form is available.
pub const RICHARDSON_LADDER: [u32; 4] = [64, 128, 256, 512];
pub const RICHARDSON_DEGREE: usize = 3;
/// Largest tolerated gap between the full extrapolation and the one that
/// drops the smallest N.
pub const RICHARDSON_TOL: f64 = 1e-6;

/// Cumulants in the limit N → ∞ for initialising the flows.
pub fn thermodynamic_cumulants(family: &StateFamily, order: u8) -> Result<CumulantState> {
    check_order(order)?;
    family.validate()?;
    let mut st = CumulantState::zeros(order)?;
    match *family {
        StateFamily::Cat => {
            if order >= 2 {
                st.chi[2][2] = 1.0;
            }
        }
        StateFamily::Coherent { theta, phi } => {
            st.m = bloch_vector(theta, phi);
        }
        StateFamily::DickeExtremal { sign } => {
            st.m = [0.0, 0.0, sign as f64];
        }
        StateFamily::Dicke { .. } => {
            return Err(Error::InvalidParameter(
                "a fixed-m Dicke state has no N-independent limit; use dicke-extremal".into(),
            ))
        }
        StateFamily::Scs { theta, phi } => {
            return richardson(family, order).map_err(|e| match e {
                Error::Extrapolation { residual } => {
                    log::error!("extrapolation for scs({theta}, {phi}) failed: residual {residual:.3e}");
                    e
                }
                e => e,
            })
        }
    }
    Ok(st)
}

/// `(sinθ cosφ, sinθ sinφ, −cosθ)`.
pub fn bloch_vector(theta: f64, phi: f64) -> [f64; 3] {
    [theta.sin() * phi.cos(), theta.sin() * phi.sin(), -theta.cos()]
}

fn richardson(family: &StateFamily, order: u8) -> Result<CumulantState> {
    let samples: Vec<(f64, Vec<f64>)> = RICHARDSON_LADDER
        .iter()
        .map(|&n| {
            let params = ModelParams::new(n, 0.0, 1.0)?;
            let rho = family.build(&params)?;
            let st = cumulants_from_state(&rho, order)?;
            Ok((1.0 / n as f64, st.pack()))
        })
        .collect::<Result<_>>()?;
    let ncomp = samples[0].1.len();
    let mut limit = vec![0.0; ncomp];
    let mut residual: f64 = 0.0;
    for c in 0..ncomp {
        let pts: Vec<(f64, f64)> = samples.iter().map(|(x, v)| (*x, v[c])).collect();
        let full = neville_at_zero(&pts[..RICHARDSON_DEGREE + 1]);
        let reduced = neville_at_zero(&pts[pts.len() - RICHARDSON_DEGREE..]);
        limit[c] = full;
        residual = residual.max((full - reduced).abs());
    }
    if !(residual <= RICHARDSON_TOL) {
        return Err(Error::Extrapolation { residual });
    }
    log::debug!("richardson extrapolation residual {residual:.3e}");
    CumulantState::unpack(order, &limit)
}

/// Value at x = 0 of the interpolating polynomial through `pts`.
pub fn neville_at_zero(pts: &[(f64, f64)]) -> f64 {
    let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let mut p: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let n = p.len();
    for k in 1..n {
        for i in 0..n - k {
            p[i] = (x[i + k] * p[i] - x[i] * p[i + 1]) / (x[i + k] - x[i]);
        }
    }
    p[0]
}

/// Identity matrix of the sector as complex entries.
pub fn identity(d: usize) -> Array2<C64> {
    Array2::from_diag_elem(d, ONE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn p(n: u32) -> ModelParams {
        ModelParams::new(n, 1.0, 1.0).unwrap()
    }

    fn commutator(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
        linalg::matmul(a, b) - linalg::matmul(b, a)
    }

    fn max_abs(a: &Array2<C64>) -> f64 {
        a.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn rejects_zero_atoms() {
        assert!(ModelParams::new(0, 1.0, 1.0).is_err());
        assert!(ModelParams::new(2, -1.0, 1.0).is_err());
        assert!(ModelParams::new(2, 1.0, 0.0).is_err());
    }

    #[test]
    fn spin_one_ladder() {
        let ops = build_collective_ops(&p(2)).unwrap();
        for (k, m) in [-1.0, 0.0, 1.0].iter().enumerate() {
            assert_eq!(ops.sz[[k, k]], C64::new(*m, 0.0));
        }
        assert!(max_abs(&(&ops.s2 - &identity(3).mapv(|z| z * 2.0))) < 1e-15);
    }

    #[test]
    fn su2_algebra_up_to_512() {
        for n in [1, 2, 3, 7, 64, 512] {
            let ops = build_collective_ops(&p(n)).unwrap();
            let s = n as f64 / 2.0;
            let scale = s * (s + 1.0);
            let comm = commutator(&ops.sx, &ops.sy);
            assert!(max_abs(&(&comm - &ops.sz.mapv(|z| z * I))) <= 1e-12 * scale, "n={n}");
            assert!(max_abs(&(&ops.s2 - &identity(n as usize + 1).mapv(|z| z * scale))) <= 1e-12 * scale);
            assert!(max_abs(&(&ops.sp - &linalg::dagger(&ops.sm))) == 0.0);
            assert!(max_abs(&(&ops.sp - &(&ops.sx + &ops.sy.mapv(|z| z * I)))) < 1e-14 * scale);
        }
    }

    #[test]
    fn dicke_states() {
        let rho = dicke_state(&p(4), 2.0).unwrap();
        assert_eq!(rho.data[[4, 4]], ONE);
        assert_eq!(rho.data.iter().filter(|z| **z != ZERO).count(), 1);
        let rho = dicke_state(&p(4), -2.0).unwrap();
        assert_eq!(rho.data[[0, 0]], ONE);
        assert!(dicke_state(&p(4), 3.0).is_err());
        assert!(dicke_state(&p(3), 0.5).is_ok());
        assert!(dicke_state(&p(3), 0.0).is_err());
    }

    #[test]
    fn coherent_amplitudes_spin_one_equator() {
        let psi = coherent_amplitudes(2, PI / 2.0, 0.0);
        let expect = [0.5, FRAC_1_SQRT_2, 0.5];
        for k in 0..3 {
            assert!((psi[k] - C64::new(expect[k], 0.0)).norm() < 1e-15);
        }
        let south = coherent_state(&p(6), 0.0, 1.3).unwrap();
        assert_eq!(south, dicke_state(&p(6), -3.0).unwrap());
    }

    #[test]
    fn coherent_state_is_normalised_at_large_n() {
        for n in [150, 400, 1000] {
            let psi = coherent_amplitudes(n, 1.1, 0.4);
            let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
            assert!((norm - 1.0).abs() < 1e-10, "n={n}: {norm}");
            let rho = coherent_state(&p(n), 1.1, 0.4).unwrap();
            assert!((rho.trace() - ONE).norm() < 1e-12);
        }
    }

    #[test]
    fn coherent_closed_form_cumulants() {
        for &(theta, phi) in &[(0.0, 0.0), (0.4, 0.3), (1.2, 2.0), (2.9, -0.7)] {
            let params = p(16);
            let ops = build_collective_ops(&params).unwrap();
            let raw = raw_second_cumulants(&coherent_state(&params, theta, phi).unwrap(), &ops);
            let cf = coherent_second_cumulants(theta, phi, params.spin());
            // Spin-coherent covariance: (δ_ij − n_i n_j)/2S + i ε_ijk n_k/2S.
            let n = bloch_vector(theta, phi);
            let k = 1.0 / (2.0 * params.spin());
            for i in 0..3 {
                for j in 0..3 {
                    let eps = (0..3).map(|l| levi_civita(i, j, l) * n[l]).sum::<f64>();
                    let generic = C64::new(k * ((i == j) as u8 as f64 - n[i] * n[j]), k * eps);
                    assert!((raw[i][j] - cf[i][j]).norm() < 1e-12, "{i}{j}");
                    assert!((generic - cf[i][j]).norm() < 1e-12, "{i}{j}");
                }
            }
        }
    }

    fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
        match (i, j, k) {
            (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
            (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
            _ => 0.0,
        }
    }

    #[test]
    fn coherent_mean_spin() {
        for &(theta, phi) in &[(0.3, 0.0), (1.2, 2.0), (2.9, -0.7), (4.0, 1.0)] {
            let params = p(20);
            let rho = coherent_state(&params, theta, phi).unwrap();
            let st = cumulants_from_state(&rho, 2).unwrap();
            let b = bloch_vector(theta, phi);
            for i in 0..3 {
                assert!((st.m[i] - b[i]).abs() < 1e-10);
            }
            assert!((st.chi[2][2] - theta.sin().powi(2) / 20.0).abs() < 1e-10);
        }
    }

    #[test]
    fn cat_state_properties() {
        let rho = cat_state(&p(2)).unwrap();
        assert_eq!(rho.data[[0, 0]], C64::new(0.5, 0.0));
        assert_eq!(rho.data[[0, 2]], C64::new(0.5, 0.0));
        assert_eq!(rho.data[[1, 1]], ZERO);
        for n in [1, 2, 5, 50, 51] {
            let rho = cat_state(&p(n)).unwrap();
            let ops = build_collective_ops(&p(n)).unwrap();
            assert_eq!(ops.mean(&rho.data.view(), 2), 0.0);
            let st = cumulants_with_ops(&rho, &ops, 3).unwrap();
            assert_eq!(st.chi[2][2], 1.0, "n={n}");
            if n > 2 {
                assert_eq!(st.m, [0.0; 3]);
                assert!((st.chi[0][0] - 1.0 / n as f64).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn superposition_degenerate_and_large_n() {
        let sup = scs_superposition(&p(10), PI / 2.0, 0.3).unwrap();
        assert!(sup.degenerate);
        assert_eq!(sup.rho, coherent_state(&p(10), PI / 2.0, 0.3).unwrap());
        assert!(scs_superposition(&p(9), 1.5 * PI, 0.0).unwrap().degenerate);
        let st = cumulants_from_state(&scs_superposition(&p(400), PI / 4.0, 0.0).unwrap().rho, 2).unwrap();
        assert!((st.m[0] - FRAC_1_SQRT_2).abs() < 1e-10);
        assert!((st.chi[2][2] - 0.5).abs() < 5e-3);
    }

    #[test]
    fn superposition_normalisation_uses_overlap() {
        // At small N the branches overlap strongly; √2 alone would be wrong.
        let sup = scs_superposition(&p(3), 1.2, 0.0).unwrap();
        assert!((sup.rho.trace() - ONE).norm() < 1e-14);
        let a = coherent_amplitudes(3, 1.2, 0.0);
        let b = coherent_amplitudes(3, PI - 1.2, 0.0);
        let ov: C64 = a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum();
        assert!((ov.re - 1.2f64.sin().powi(3)).abs() < 1e-14);
    }

    #[test]
    fn eq6_sum_for_pure_states() {
        let params = p(12);
        let s = params.spin();
        for fam in [
            StateFamily::Cat,
            StateFamily::Coherent { theta: 0.7, phi: 0.2 },
            StateFamily::Scs { theta: PI / 4.0, phi: 0.0 },
            StateFamily::Dicke { m: 1.0 },
        ] {
            let st = cumulants_from_state(&fam.build(&params).unwrap(), 2).unwrap();
            assert!((st.s2_norm() - (1.0 + 1.0 / s)).abs() < 1e-12, "{fam:?}");
        }
    }

    #[test]
    fn third_cumulants_vanish_for_symmetric_two_branch_limit() {
        let st = thermodynamic_cumulants(&StateFamily::Scs { theta: PI / 4.0, phi: 0.0 }, 3).unwrap();
        assert!((st.m[0] - FRAC_1_SQRT_2).abs() < 1e-8);
        assert!((st.chi[2][2] - 0.5).abs() < 1e-8);
        assert!(st.tau.iter().flatten().flatten().all(|v| v.abs() < 1e-7));
        assert!((st.s2_norm() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn pack_roundtrip() {
        let mut st = CumulantState::zeros(3).unwrap();
        st.m = [0.1, -0.2, 0.3];
        st.set_chi_sym(0, 2, 0.5);
        st.set_tau_sym(0, 1, 2, -0.7);
        st.set_tau_sym(2, 2, 1, 0.25);
        let back = CumulantState::unpack(3, &st.pack()).unwrap();
        assert_eq!(back, st);
        assert_eq!(back.tau_asymmetry(), 0.0);
    }

    #[test]
    fn validation_rejects_bad_matrices() {
        let params = p(1);
        let mut m = Array2::zeros((2, 2));
        m[[0, 0]] = C64::new(0.5, 0.0);
        m[[1, 1]] = C64::new(0.5, 0.0);
        m[[0, 1]] = C64::new(0.1, 0.0);
        assert!(DickeDensityMatrix::new(m.clone(), params).is_err());
        m[[1, 0]] = C64::new(0.1, 0.0);
        assert!(DickeDensityMatrix::new(m.clone(), params).is_ok());
        m[[0, 1]] = C64::new(0.9, 0.0);
        m[[1, 0]] = C64::new(0.9, 0.0);
        assert!(DickeDensityMatrix::new(m, params).is_err());
    }

    #[test]
    fn family_grammar() {
        let f: StateFamily = serde_json::from_str(r#"{"family":"cat"}"#).unwrap();
        assert_eq!(f, StateFamily::Cat);
        let f: StateFamily =
            serde_json::from_str(r#"{"family":"coherent","theta":0.7853981634,"phi":0.0}"#).unwrap();
        assert!(matches!(f, StateFamily::Coherent { .. }));
        let f: StateFamily = serde_json::from_str(r#"{"family":"dicke","m":-25}"#).unwrap();
        assert_eq!(f, StateFamily::Dicke { m: -25.0 });
        let f: StateFamily = serde_json::from_str(r#"{"family":"dicke-extremal"}"#).unwrap();
        assert_eq!(f, StateFamily::DickeExtremal { sign: 1 });
        assert!(serde_json::from_str::<StateFamily>(r#"{"family":"ghz"}"#).is_err());
    }
}
