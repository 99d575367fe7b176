//! Brute-force reference in the full 2^N Hilbert space.
//!
//! Basis index bit `i` is the state of site `i` (little-endian), with
//! `|0⟩ = ↓` and `|1⟩ = ↑`. Single-site operators are spin-1/2. Nothing here
//! uses the Dicke-sector code paths; agreement with them is the point.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lindblad::EvolutionSpec;
use crate::ode::{Dop853, OdeSystem};
use crate::series::{Generator, Observable, SeriesMeta, TimeSeries};
use crate::spin::{ModelParams, StateFamily};

pub const MAX_STATE_SITES: u32 = 12;
pub const MAX_EVOLUTION_SITES: u32 = 10;

const ZERO: C64 = C64::new(0.0, 0.0);

fn guard(n: u32, limit: u32, what: &str) -> Result<()> {
    if n == 0 || n > limit {
        return Err(Error::SizeGuard(format!(
            "{what} supports 1 <= N <= {limit}, got N = {n}"
        )));
    }
    Ok(())
}

/// Collective operators of the full space, applied matrix-free.
#[derive(Debug, Clone, Copy)]
pub struct FullCollectiveOps {
    pub n: u32,
}

pub fn full_collective_ops(n: u32) -> Result<FullCollectiveOps> {
    guard(n, MAX_STATE_SITES, "full-space operators")?;
    Ok(FullCollectiveOps { n })
}

impl FullCollectiveOps {
    pub fn dim(&self) -> usize {
        1 << self.n
    }

    /// `out = S− x` for a `dim × cols` row-major block.
    pub fn lower(&self, x: &[C64], cols: usize, out: &mut [C64]) {
        for (r, row) in out.chunks_exact_mut(cols).enumerate() {
            row.iter_mut().for_each(|v| *v = ZERO);
            for i in 0..self.n {
                let b = 1usize << i;
                if r & b == 0 {
                    let src = &x[(r | b) * cols..((r | b) + 1) * cols];
                    row.iter_mut().zip(src).for_each(|(o, v)| *o += v);
                }
            }
        }
    }

    /// `out = S+ x`.
    pub fn raise(&self, x: &[C64], cols: usize, out: &mut [C64]) {
        for (r, row) in out.chunks_exact_mut(cols).enumerate() {
            row.iter_mut().for_each(|v| *v = ZERO);
            for i in 0..self.n {
                let b = 1usize << i;
                if r & b != 0 {
                    let src = &x[(r ^ b) * cols..((r ^ b) + 1) * cols];
                    row.iter_mut().zip(src).for_each(|(o, v)| *o += v);
                }
            }
        }
    }

    /// `Sz` eigenvalue of basis state `r`.
    pub fn sz_value(&self, r: usize) -> f64 {
        r.count_ones() as f64 - self.n as f64 / 2.0
    }

    /// `out = S_axis x` (axis 0, 1, 2 = x, y, z).
    pub fn apply(&self, axis: usize, x: &[C64], cols: usize, out: &mut [C64]) {
        match axis {
            2 => {
                for r in 0..self.dim() {
                    let m = self.sz_value(r);
                    for c in 0..cols {
                        out[r * cols + c] = m * x[r * cols + c];
                    }
                }
            }
            0 | 1 => {
                let mut up = vec![ZERO; out.len()];
                self.raise(x, cols, &mut up);
                self.lower(x, cols, out);
                // Sx = (S+ + S−)/2, Sy = (S+ − S−)/(2i)
                for (o, u) in out.iter_mut().zip(&up) {
                    *o = if axis == 0 {
                        0.5 * (*u + *o)
                    } else {
                        C64::new(0.0, -0.5) * (*u - *o)
                    };
                }
            }
            _ => panic!("axis index {axis} out of range"),
        }
    }

    /// Dense matrix of `S_axis` (small N only).
    pub fn matrix(&self, axis: usize) -> Result<Array2<C64>> {
        guard(self.n, 8, "dense full-space matrices")?;
        let d = self.dim();
        let eye: Vec<C64> = Array2::<C64>::eye(d).iter().copied().collect();
        let mut out = vec![ZERO; d * d];
        self.apply(axis, &eye, d, &mut out);
        Ok(Array2::from_shape_vec((d, d), out).expect("square"))
    }

    /// Columns of the isometry from the Dicke sector: `|S, m⟩` with
    /// `k = S + m` excitations, as uniform superpositions.
    pub fn dicke_isometry(&self) -> Array2<C64> {
        let d = self.dim();
        let n = self.n as usize;
        let mut v = Array2::zeros((d, n + 1));
        let mut counts = vec![0usize; n + 1];
        for r in 0..d {
            counts[r.count_ones() as usize] += 1;
        }
        for r in 0..d {
            let k = r.count_ones() as usize;
            v[[r, k]] = C64::new(1.0 / (counts[k] as f64).sqrt(), 0.0);
        }
        v
    }

    /// `V† S_axis V`, the operator restricted to the symmetric sector.
    pub fn restrict_to_dicke(&self, axis: usize) -> Array2<C64> {
        let v = self.dicke_isometry();
        let (d, k) = v.dim();
        let flat: Vec<C64> = v.iter().copied().collect();
        let mut sv = vec![ZERO; d * k];
        self.apply(axis, &flat, k, &mut sv);
        let sv = Array2::from_shape_vec((d, k), sv).expect("shape");
        v.t().mapv(|z| z.conj()).dot(&sv)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullStateVector {
    pub n: u32,
    pub amps: Vec<C64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullDensityMatrix {
    pub n: u32,
    /// Row-major `2^n × 2^n`.
    pub data: Vec<C64>,
}

fn single_site(theta: f64, phi: f64) -> [C64; 2] {
    // The phase convention matches the Dicke-basis expansion e^{−i(J+m)φ}.
    [
        C64::new((theta / 2.0).cos(), 0.0),
        C64::from_polar((theta / 2.0).sin(), -phi),
    ]
}

impl FullStateVector {
    pub fn product(n: u32, site: [C64; 2]) -> Result<Self> {
        guard(n, MAX_STATE_SITES, "full-space states")?;
        let d = 1usize << n;
        let amps = (0..d)
            .map(|r| {
                (0..n).fold(C64::new(1.0, 0.0), |acc, i| acc * site[(r >> i) & 1])
            })
            .collect();
        Ok(Self { n, amps })
    }

    pub fn coherent(n: u32, theta: f64, phi: f64) -> Result<Self> {
        Self::product(n, single_site(theta, phi))
    }

    /// `(|0…0⟩ + |1…1⟩)/√2`.
    pub fn cat(n: u32) -> Result<Self> {
        guard(n, MAX_STATE_SITES, "full-space states")?;
        let d = 1usize << n;
        let mut amps = vec![ZERO; d];
        let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        amps[0] += h;
        amps[d - 1] += h;
        Ok(Self { n, amps })
    }

    /// Normalised `|θ,φ⟩ + |π−θ,φ⟩`.
    pub fn scs(n: u32, theta: f64, phi: f64) -> Result<Self> {
        let a = Self::coherent(n, theta, phi)?;
        let b = Self::coherent(n, PI - theta, phi)?;
        let mut amps: Vec<C64> = a.amps.iter().zip(&b.amps).map(|(x, y)| x + y).collect();
        let norm = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        amps.iter_mut().for_each(|z| *z /= norm);
        Ok(Self { n, amps })
    }

    /// Uniform superposition of all basis states with `k` up-spins.
    pub fn dicke(n: u32, k: u32) -> Result<Self> {
        guard(n, MAX_STATE_SITES, "full-space states")?;
        if k > n {
            return Err(Error::InvalidParameter(format!("{k} excitations on {n} sites")));
        }
        let d = 1usize << n;
        let count = (0..d).filter(|r| r.count_ones() == k).count() as f64;
        let amps = (0..d)
            .map(|r| {
                if r.count_ones() == k {
                    C64::new(1.0 / count.sqrt(), 0.0)
                } else {
                    ZERO
                }
            })
            .collect();
        Ok(Self { n, amps })
    }

    pub fn from_family(n: u32, family: &StateFamily) -> Result<Self> {
        match *family {
            StateFamily::Cat => Self::cat(n),
            StateFamily::Coherent { theta, phi } => Self::coherent(n, theta, phi),
            StateFamily::Scs { theta, phi } => {
                if (theta.rem_euclid(PI) - PI / 2.0).abs() < 1e-12 {
                    Self::coherent(n, theta, phi)
                } else {
                    Self::scs(n, theta, phi)
                }
            }
            StateFamily::Dicke { m } => {
                let k = m + n as f64 / 2.0;
                if (k - k.round()).abs() > 1e-9 || k < -0.5 {
                    return Err(Error::InvalidParameter(format!("invalid m = {m} for N = {n}")));
                }
                Self::dicke(n, k.round() as u32)
            }
            StateFamily::DickeExtremal { sign } => Self::dicke(n, if sign > 0 { n } else { 0 }),
        }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn to_density(&self) -> Result<FullDensityMatrix> {
        guard(self.n, MAX_STATE_SITES, "full-space density matrices")?;
        let d = self.dim();
        let mut data = vec![ZERO; d * d];
        for r in 0..d {
            for c in 0..d {
                data[r * d + c] = self.amps[r] * self.amps[c].conj();
            }
        }
        Ok(FullDensityMatrix { n: self.n, data })
    }
}

impl FullDensityMatrix {
    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn trace(&self) -> C64 {
        let d = self.dim();
        (0..d).map(|r| self.data[r * d + r]).sum()
    }

    /// `P_sym / (N+1)`, the maximally mixed state of the symmetric sector.
    pub fn symmetric_mixed(n: u32) -> Result<Self> {
        guard(n, MAX_EVOLUTION_SITES, "full-space density matrices")?;
        let d = 1usize << n;
        let mut data = vec![ZERO; d * d];
        for k in 0..=n {
            let v = FullStateVector::dicke(n, k)?;
            for r in 0..d {
                if v.amps[r] == ZERO {
                    continue;
                }
                for c in 0..d {
                    data[r * d + c] += v.amps[r] * v.amps[c].conj() / (n as f64 + 1.0);
                }
            }
        }
        Ok(Self { n, data })
    }

    pub fn to_array(&self) -> Array2<C64> {
        let d = self.dim();
        Array2::from_shape_vec((d, d), self.data.clone()).expect("square")
    }
}

/// Either representation of a full-space state.
pub trait FullState {
    fn sites(&self) -> u32;
    /// Reduced density matrix on `sites` (bit `q` of the result is `sites[q]`).
    fn reduced(&self, sites: &[usize]) -> Result<FullDensityMatrix>;
    /// `⟨S_i⟩` and the symmetrised `⟨{S_i, S_j}⟩/2`.
    fn collective_moments(&self) -> ([f64; 3], [[f64; 3]; 3]);
}

fn check_sites(n: u32, sites: &[usize]) -> Result<()> {
    let mut seen = 0usize;
    for &s in sites {
        if s >= n as usize || seen & (1 << s) != 0 {
            return Err(Error::InvalidParameter(format!(
                "invalid site list {sites:?} for N = {n}"
            )));
        }
        seen |= 1 << s;
    }
    Ok(())
}

/// Basis indices of the complement configurations and the map from a
/// subsystem configuration to its bit pattern.
fn split_indices(n: u32, sites: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mask: usize = sites.iter().map(|s| 1usize << s).sum();
    let env: Vec<usize> = (0..1usize << n).filter(|r| r & mask == 0).collect();
    let sub: Vec<usize> = (0..1usize << sites.len())
        .map(|a| {
            sites
                .iter()
                .enumerate()
                .filter(|(q, _)| a >> q & 1 == 1)
                .map(|(_, s)| 1usize << s)
                .sum()
        })
        .collect();
    (env, sub)
}

impl FullState for FullStateVector {
    fn sites(&self) -> u32 {
        self.n
    }

    fn reduced(&self, sites: &[usize]) -> Result<FullDensityMatrix> {
        check_sites(self.n, sites)?;
        let (env, sub) = split_indices(self.n, sites);
        let k = sub.len();
        let mut data = vec![ZERO; k * k];
        for &e in &env {
            for a in 0..k {
                let pa = self.amps[e | sub[a]];
                for b in 0..k {
                    data[a * k + b] += pa * self.amps[e | sub[b]].conj();
                }
            }
        }
        // Dividing by the computed norm cancels rounding in the amplitudes
        // (the cat reduction comes out as exactly I/2).
        let norm: f64 = self.amps.iter().map(|z| z.norm_sqr()).sum();
        data.iter_mut().for_each(|z| *z /= norm);
        Ok(FullDensityMatrix {
            n: sites.len() as u32,
            data,
        })
    }

    fn collective_moments(&self) -> ([f64; 3], [[f64; 3]; 3]) {
        let ops = FullCollectiveOps { n: self.n };
        let d = self.dim();
        let applied: Vec<Vec<C64>> = (0..3)
            .map(|axis| {
                let mut out = vec![ZERO; d];
                ops.apply(axis, &self.amps, 1, &mut out);
                out
            })
            .collect();
        let dot = |a: &[C64], b: &[C64]| -> C64 { a.iter().zip(b).map(|(x, y)| x.conj() * y).sum() };
        let mut mean = [0.0; 3];
        let mut second = [[0.0; 3]; 3];
        for i in 0..3 {
            mean[i] = dot(&self.amps, &applied[i]).re;
            for j in 0..3 {
                // ⟨ψ|S_i S_j|ψ⟩ = (S_i ψ)† (S_j ψ); the real part is the symmetrised moment.
                second[i][j] = dot(&applied[i], &applied[j]).re;
            }
        }
        (mean, second)
    }
}

impl FullState for FullDensityMatrix {
    fn sites(&self) -> u32 {
        self.n
    }

    fn reduced(&self, sites: &[usize]) -> Result<FullDensityMatrix> {
        check_sites(self.n, sites)?;
        let (env, sub) = split_indices(self.n, sites);
        let d = self.dim();
        let k = sub.len();
        let mut data = vec![ZERO; k * k];
        for &e in &env {
            for a in 0..k {
                for b in 0..k {
                    data[a * k + b] += self.data[(e | sub[a]) * d + (e | sub[b])];
                }
            }
        }
        let tr = self.trace().re;
        data.iter_mut().for_each(|z| *z /= tr);
        Ok(FullDensityMatrix {
            n: sites.len() as u32,
            data,
        })
    }

    fn collective_moments(&self) -> ([f64; 3], [[f64; 3]; 3]) {
        let ops = FullCollectiveOps { n: self.n };
        let d = self.dim();
        let trace = |m: &[C64]| -> C64 { (0..d).map(|r| m[r * d + r]).sum() };
        let applied: Vec<Vec<C64>> = (0..3)
            .map(|axis| {
                let mut out = vec![ZERO; d * d];
                ops.apply(axis, &self.data, d, &mut out);
                out
            })
            .collect();
        let mut mean = [0.0; 3];
        let mut second = [[0.0; 3]; 3];
        let mut tmp = vec![ZERO; d * d];
        for i in 0..3 {
            mean[i] = trace(&applied[i]).re;
            for j in 0..3 {
                ops.apply(i, &applied[j], d, &mut tmp);
                second[i][j] = trace(&tmp).re;
            }
        }
        (mean, second)
    }
}

/// Real symmetric second cumulants `χ_ij` from the collective moments.
pub fn collective_chi<S: FullState + ?Sized>(state: &S) -> [[f64; 3]; 3] {
    let s = state.sites() as f64 / 2.0;
    let (mean, second) = state.collective_moments();
    let mut chi = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let sym = 0.5 * (second[i][j] + second[j][i]);
            chi[i][j] = (sym - mean[i] * mean[j]) / (s * s);
        }
    }
    chi
}

pub fn reduced_density<S: FullState + ?Sized>(state: &S, sites: &[usize]) -> Result<FullDensityMatrix> {
    state.reduced(sites)
}

fn pauli_half(axis: usize) -> [[C64; 2]; 2] {
    let h = 0.5;
    match axis {
        0 => [[ZERO, C64::new(h, 0.0)], [C64::new(h, 0.0), ZERO]],
        // basis order (↓, ↑): s_y = [[0, i/2], [−i/2, 0]] so that s+ = sx + i sy raises ↓ → ↑
        1 => [[ZERO, C64::new(0.0, h)], [C64::new(0.0, -h), ZERO]],
        2 => [[C64::new(-h, 0.0), ZERO], [ZERO, C64::new(h, 0.0)]],
        _ => panic!("axis index {axis} out of range"),
    }
}

fn local_expect(rho: &FullDensityMatrix, op: &[[C64; 2]; 2]) -> f64 {
    let mut acc = ZERO;
    for a in 0..2 {
        for b in 0..2 {
            acc += op[a][b] * rho.data[b * 2 + a];
        }
    }
    acc.re
}

/// `⟨s_a^i s_b^j⟩ − ⟨s_a^i⟩⟨s_b^j⟩` with spin-1/2 site operators.
pub fn two_site_correlation<S: FullState + ?Sized>(
    state: &S,
    i: usize,
    j: usize,
    a: usize,
    b: usize,
) -> Result<f64> {
    if i == j {
        return Err(Error::InvalidParameter("two-site correlation needs i != j".into()));
    }
    if a > 2 || b > 2 {
        return Err(Error::InvalidParameter("axis index out of range".into()));
    }
    let pair = state.reduced(&[i, j])?;
    let (oa, ob) = (pauli_half(a), pauli_half(b));
    // Reduced basis index = bit0 (site i) + 2 * bit1 (site j).
    let mut joint = ZERO;
    for r in 0..4 {
        for c in 0..4 {
            let op = oa[r & 1][c & 1] * ob[r >> 1][c >> 1];
            joint += op * pair.data[c * 4 + r];
        }
    }
    let ri = state.reduced(&[i])?;
    let rj = state.reduced(&[j])?;
    Ok(joint.re - local_expect(&ri, &oa) * local_expect(&rj, &ob))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelationReport {
    pub n: u32,
    pub axes: (usize, usize),
    pub chi: f64,
    pub four_corr: f64,
    pub gap: f64,
    /// Largest spread of the correlation over site pairs.
    pub pair_spread: f64,
}

/// Collective `χ_ab` against `4 ×` the two-site correlation of axes `a, b`.
pub fn verify_pair_correlation_equivalence<S: FullState + ?Sized>(
    state: &S,
    a: usize,
    b: usize,
) -> Result<PairCorrelationReport> {
    let n = state.sites();
    if n < 2 {
        return Err(Error::InvalidParameter("needs at least two sites".into()));
    }
    let mut values = Vec::new();
    for i in 0..n as usize {
        for j in 0..n as usize {
            if i != j {
                values.push(two_site_correlation(state, i, j, a, b)?);
            }
        }
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = hi - lo;
    if spread > 1e-10 {
        return Err(Error::InvalidState(format!(
            "state is not permutation invariant (pair spread {spread:.3e})"
        )));
    }
    let chi = collective_chi(state)[a][b];
    let four_corr = 4.0 * values[0];
    Ok(PairCorrelationReport {
        n,
        axes: (a, b),
        chi,
        four_corr,
        gap: chi - four_corr,
        pair_spread: spread,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelationLadder {
    pub family: StateFamily,
    pub axes: (usize, usize),
    pub reports: Vec<PairCorrelationReport>,
    /// `max_N |gap| · N`, the constant in `|gap| ≤ C/N`.
    pub fitted_c: f64,
}

pub fn pair_correlation_ladder(
    family: &StateFamily,
    a: usize,
    b: usize,
    ns: &[u32],
) -> Result<PairCorrelationLadder> {
    let reports = ns
        .iter()
        .map(|&n| verify_pair_correlation_equivalence(&FullStateVector::from_family(n, family)?, a, b))
        .collect::<Result<Vec<_>>>()?;
    let fitted_c = reports
        .iter()
        .map(|r| r.gap.abs() * r.n as f64)
        .fold(0.0, f64::max);
    Ok(PairCorrelationLadder {
        family: *family,
        axes: (a, b),
        reports,
        fitted_c,
    })
}

/// Master equation in the full space, integrated on the packed upper
/// triangle of ρ (row-major, `r ≤ c`). The output is assembled as `Z + Z†`,
/// so the lower triangle never has to be stored. With `adjoint` set the
/// generator is the Heisenberg-picture one acting on observables.
struct FullGenerator {
    ops: FullCollectiveOps,
    omega: f64,
    rate: f64,
    adjoint: bool,
    // rho, z, rho·S+, slab copy of rho
    scratch: RefCell<[Vec<C64>; 4]>,
}

/// Column block width; a `d × BLOCK` slab stays in L2 at N = 10.
const BLOCK: usize = 32;

fn packed_len(d: usize) -> usize {
    d * (d + 1) / 2
}

fn row_offset(r: usize, d: usize) -> usize {
    r * d - r * r.saturating_sub(1) / 2
}

fn pack_upper(full: &[C64], d: usize) -> Vec<C64> {
    let mut out = Vec::with_capacity(packed_len(d));
    for r in 0..d {
        out.extend_from_slice(&full[r * d + r..(r + 1) * d]);
    }
    out
}

fn unpack_into(packed: &[C64], d: usize, full: &mut [C64]) {
    for r in 0..d {
        let o = row_offset(r, d);
        full[r * d + r..(r + 1) * d].copy_from_slice(&packed[o..o + d - r]);
    }
    for rb in (0..d).step_by(BLOCK) {
        for cb in (0..=rb).step_by(BLOCK) {
            for r in rb..(rb + BLOCK).min(d) {
                for c in cb..(cb + BLOCK).min(r) {
                    full[r * d + c] = full[c * d + r].conj();
                }
            }
        }
    }
}

impl FullGenerator {
    fn new(params: &ModelParams, adjoint: bool) -> Self {
        let d = 1usize << params.n;
        Self {
            ops: FullCollectiveOps { n: params.n },
            omega: params.omega,
            rate: params.kappa / params.spin(),
            adjoint,
            scratch: RefCell::new([
                vec![ZERO; d * d],
                vec![ZERO; d * d],
                vec![ZERO; d * d],
                vec![ZERO; d * BLOCK.min(d)],
            ]),
        }
    }

    fn apply_packed(&self, packed: &[C64], out: &mut [C64]) {
        let d = self.ops.dim();
        let n = self.ops.n as usize;
        let bw = BLOCK.min(d);
        let slab = d * bw;
        // z and rs are slab-major: slab j holds columns j·bw.. of every row
        // contiguously, which avoids power-of-two strides in the row sweeps.
        let at = |r: usize, c: usize| (c / bw) * slab + r * bw + c % bw;
        let mut guard = self.scratch.borrow_mut();
        let [rho, z, rs, xs] = &mut *guard;
        unpack_into(packed, d, rho);
        let sign = if self.adjoint { 1.0 } else { -1.0 };
        let w = C64::new(0.0, sign * 0.5 * self.omega);
        let g2 = 0.5 * self.rate;
        let mut lo = vec![ZERO; slab];

        // z = ∓iΩ Sx ρ − (g/2) S+S− ρ
        for (j, zs) in z.chunks_exact_mut(slab).enumerate() {
            let c0 = j * bw;
            for (r, x) in xs.chunks_exact_mut(bw).enumerate() {
                x.copy_from_slice(&rho[r * d + c0..r * d + c0 + bw]);
            }
            for (r, (l, zr)) in lo.chunks_exact_mut(bw).zip(zs.chunks_exact_mut(bw)).enumerate() {
                l.iter_mut().chain(zr.iter_mut()).for_each(|v| *v = ZERO);
                for i in 0..n {
                    let b = 1usize << i;
                    let src = &xs[(r ^ b) * bw..((r ^ b) + 1) * bw];
                    // S− fills lo, S+ accumulates in zr for now
                    let dst = if r & b == 0 { &mut *l } else { &mut *zr };
                    dst.iter_mut().zip(src).for_each(|(o, v)| *o += v);
                }
            }
            for r in 0..d {
                let zr = &mut zs[r * bw..(r + 1) * bw];
                zr.iter_mut()
                    .zip(&lo[r * bw..(r + 1) * bw])
                    .for_each(|(o, a)| *o = w * (*o + a));
                for i in 0..n {
                    let b = 1usize << i;
                    if r & b != 0 {
                        let src = &lo[(r ^ b) * bw..((r ^ b) + 1) * bw];
                        zr.iter_mut().zip(src).for_each(|(o, v)| *o -= g2 * v);
                    }
                }
            }
        }

        // rs = ρ S+ (or O S− in the adjoint case), a gather within each row
        let tmp = &mut lo[..d];
        for (r, row) in rho.chunks_exact(d).enumerate() {
            tmp.iter_mut().for_each(|v| *v = ZERO);
            for i in 0..n {
                let b = 1usize << i;
                for base in (0..d).step_by(2 * b) {
                    let (dst, src) = if self.adjoint {
                        (base + b, base)
                    } else {
                        (base, base + b)
                    };
                    tmp[dst..dst + b]
                        .iter_mut()
                        .zip(&row[src..src + b])
                        .for_each(|(o, v)| *o += v);
                }
            }
            for (j, part) in tmp.chunks_exact(bw).enumerate() {
                rs[j * slab + r * bw..j * slab + (r + 1) * bw].copy_from_slice(part);
            }
        }

        // z += (g/2) S− ρ S+ (or S+ O S−); the jump term is Hermitian, so
        // adding half of it to z supplies all of it once z + z† is formed
        let want = if self.adjoint { usize::MAX } else { 0 };
        for (zs, ss) in z.chunks_exact_mut(slab).zip(rs.chunks_exact(slab)) {
            for (r, zr) in zs.chunks_exact_mut(bw).enumerate() {
                for i in 0..n {
                    let b = 1usize << i;
                    if r & b == want & b {
                        let src = &ss[(r ^ b) * bw..((r ^ b) + 1) * bw];
                        zr.iter_mut().zip(src).for_each(|(o, v)| *o += g2 * v);
                    }
                }
            }
        }

        // out = z + z† on the upper triangle
        for rb in (0..d).step_by(bw) {
            for cb in (rb..d).step_by(bw) {
                for r in rb..rb + bw {
                    let o = row_offset(r, d);
                    for c in cb.max(r)..cb + bw {
                        out[o + c - r] = z[at(r, c)] + z[at(c, r)].conj();
                    }
                }
            }
        }
    }

    /// `⟨S_x⟩, ⟨S_y⟩, ⟨S_z⟩` and the trace, read off the packed state.
    fn packed_means(&self, packed: &[C64]) -> ([f64; 3], C64) {
        let d = self.ops.dim();
        let mut plus = ZERO;
        let mut sz = 0.0;
        let mut tr = ZERO;
        for r in 0..d {
            let o = row_offset(r, d);
            tr += packed[o];
            sz += self.ops.sz_value(r) * packed[o].re;
            for i in 0..self.ops.n {
                let b = 1usize << i;
                if r & b == 0 {
                    // ⟨S+⟩ = Σ ρ[r][r|b]
                    plus += packed[o + b];
                }
            }
        }
        ([plus.re, plus.im, sz], tr)
    }
}

impl OdeSystem for FullGenerator {
    fn dim(&self) -> usize {
        2 * packed_len(self.ops.dim())
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        self.apply_packed(bytemuck::cast_slice(y), bytemuck::cast_slice_mut(dy));
    }
}

/// Hermitian part of a full density matrix, packed.
fn hermitian_packed(rho: &FullDensityMatrix) -> Vec<C64> {
    let d = rho.dim();
    let mut h = rho.data.clone();
    for r in 0..d {
        for c in r..d {
            h[r * d + c] = 0.5 * (rho.data[r * d + c] + rho.data[c * d + r].conj());
        }
    }
    pack_upper(&h, d)
}

/// Full-space right-hand side of the Hermitian part of `rho`.
pub fn full_lindblad_rhs(rho: &FullDensityMatrix, params: &ModelParams) -> Result<FullDensityMatrix> {
    guard(params.n, MAX_EVOLUTION_SITES, "full-space evolution")?;
    if rho.n != params.n {
        return Err(Error::DimensionMismatch {
            expected: 1 << params.n,
            got: rho.dim(),
        });
    }
    let d = rho.dim();
    let gen = FullGenerator::new(params, false);
    let mut packed = vec![ZERO; packed_len(d)];
    gen.apply_packed(&hermitian_packed(rho), &mut packed);
    let mut out = vec![ZERO; d * d];
    unpack_into(&packed, d, &mut out);
    Ok(FullDensityMatrix { n: rho.n, data: out })
}

pub fn evolve_full(
    rho0: &FullDensityMatrix,
    params: &ModelParams,
    spec: &EvolutionSpec,
) -> Result<TimeSeries> {
    guard(params.n, MAX_EVOLUTION_SITES, "full-space evolution")?;
    params.validate()?;
    spec.validate()?;
    if rho0.n != params.n {
        return Err(Error::DimensionMismatch {
            expected: 1 << params.n,
            got: rho0.dim(),
        });
    }
    if let Some(o) = spec.observables.iter().find(|o| matches!(o, Observable::Tau(..))) {
        return Err(Error::InvalidParameter(format!("the oracle does not evaluate '{o}'")));
    }
    let d = rho0.dim();
    let gen = FullGenerator::new(params, false);
    let s = params.spin();
    let mut times = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); spec.observables.len()];
    let mut max_drift: f64 = 0.0;
    let need_second = spec.observables.iter().any(|o| o.order() >= 2);
    let solver = Dop853::new(spec.rel_tol, spec.abs_tol);
    let y0: Vec<f64> = bytemuck::cast_slice(&hermitian_packed(rho0)).to_vec();
    let stats = solver.integrate(&gen, 0.0, &y0, &spec.times(), |t, y| {
        let packed: &[C64] = bytemuck::cast_slice(y);
        let (mut mean, tr) = gen.packed_means(packed);
        max_drift = max_drift.max((tr - 1.0).norm());
        let mut second = [[0.0; 3]; 3];
        if need_second {
            let mut data = vec![ZERO; d * d];
            unpack_into(packed, d, &mut data);
            (mean, second) = FullDensityMatrix { n: params.n, data }.collective_moments();
        }
        times.push(t);
        for (c, o) in spec.observables.iter().enumerate() {
            let v = match *o {
                Observable::M(i) => mean[i] / s,
                Observable::Chi(i, j) => {
                    (0.5 * (second[i][j] + second[j][i]) - mean[i] * mean[j]) / (s * s)
                }
                Observable::S2Norm => (second[0][0] + second[1][1] + second[2][2]) / (s * s),
                Observable::Tau(..) => unreachable!(),
            };
            cols[c].push(v);
        }
        Ok(())
    })?;
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("max_trace_drift".into(), max_drift);
    diagnostics.insert("accepted_steps".into(), stats.accepted as f64);
    diagnostics.insert("rejected_steps".into(), stats.rejected as f64);
    Ok(TimeSeries {
        times,
        columns: spec.observables.iter().copied().zip(cols).collect(),
        meta: SeriesMeta {
            generator: Generator::Exact,
            n: Some(params.n),
            omega: params.omega,
            kappa: params.kappa,
            state: None,
            state_label: "full-space oracle".into(),
            t_end: spec.t_end,
            sample_dt: spec.sample_dt,
            rel_tol: spec.rel_tol,
            abs_tol: spec.abs_tol,
            diagnostics,
        },
    })
}

/// Heisenberg-picture oracle: evolves `O = S_axis/S` under the adjoint
/// generator once and reads `⟨ψ|O(t)|ψ⟩` for every state, so a whole family
/// of initial states costs a single integration. Only `M(i)` is supported.
pub fn evolve_full_heisenberg(
    states: &[FullStateVector],
    obs: Observable,
    params: &ModelParams,
    spec: &EvolutionSpec,
) -> Result<Vec<TimeSeries>> {
    guard(params.n, MAX_EVOLUTION_SITES, "full-space evolution")?;
    params.validate()?;
    spec.validate()?;
    let Observable::M(axis) = obs else {
        return Err(Error::InvalidParameter(format!(
            "the Heisenberg oracle evaluates magnetisations only, not '{obs}'"
        )));
    };
    if let Some(st) = states.iter().find(|st| st.n != params.n) {
        return Err(Error::DimensionMismatch {
            expected: 1 << params.n,
            got: st.dim(),
        });
    }
    let ops = FullCollectiveOps { n: params.n };
    let d = ops.dim();
    let s = params.spin();
    let mut o0 = vec![ZERO; d * d];
    let mut eye = vec![ZERO; d * d];
    for r in 0..d {
        eye[r * d + r] = C64::new(1.0 / s, 0.0);
    }
    ops.apply(axis, &eye, d, &mut o0);
    drop(eye);
    let gen = FullGenerator::new(params, true);
    let solver = Dop853::new(spec.rel_tol, spec.abs_tol);
    let y0: Vec<f64> = bytemuck::cast_slice(&pack_upper(&o0, d)).to_vec();
    drop(o0);
    let mut times = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); states.len()];
    let stats = solver.integrate(&gen, 0.0, &y0, &spec.times(), |t, y| {
        let packed: &[C64] = bytemuck::cast_slice(y);
        times.push(t);
        for (st, col) in states.iter().zip(cols.iter_mut()) {
            let a = &st.amps;
            let norm: f64 = a.iter().map(|z| z.norm_sqr()).sum();
            let mut acc = 0.0;
            for r in 0..d {
                let row = &packed[row_offset(r, d)..row_offset(r, d) + d - r];
                acc += a[r].norm_sqr() * row[0].re;
                let off: C64 = row[1..].iter().zip(&a[r + 1..]).map(|(o, c)| o * c).sum();
                acc += 2.0 * (a[r].conj() * off).re;
            }
            col.push(acc / norm);
        }
        Ok(())
    })?;
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("accepted_steps".into(), stats.accepted as f64);
    diagnostics.insert("rejected_steps".into(), stats.rejected as f64);
    Ok(cols
        .into_iter()
        .map(|col| TimeSeries {
            times: times.clone(),
            columns: vec![(obs, col)],
            meta: SeriesMeta {
                generator: Generator::Exact,
                n: Some(params.n),
                omega: params.omega,
                kappa: params.kappa,
                state: None,
                state_label: "full-space oracle (Heisenberg picture)".into(),
                t_end: spec.t_end,
                sample_dt: spec.sample_dt,
                rel_tol: spec.rel_tol,
                abs_tol: spec.abs_tol,
                diagnostics: diagnostics.clone(),
            },
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::spin::{build_collective_ops, cat_state, DickeDensityMatrix};
    use ndarray::Array1;

    #[test]
    fn sz_spectrum_two_sites() {
        let ops = full_collective_ops(2).unwrap();
        let v: Vec<f64> = (0..4).map(|r| ops.sz_value(r)).collect();
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, vec![-1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn su2_on_the_full_space() {
        let ops = full_collective_ops(4).unwrap();
        let (x, y, z) = (ops.matrix(0).unwrap(), ops.matrix(1).unwrap(), ops.matrix(2).unwrap());
        let comm = x.dot(&y) - y.dot(&x);
        let iz = z.mapv(|v| v * C64::new(0.0, 1.0));
        assert!(linalg::frobenius(&(comm - iz)) < 1e-13);
    }

    #[test]
    fn symmetric_restriction_matches_dicke_operators() {
        for n in [1, 3, 6] {
            let full = full_collective_ops(n).unwrap();
            let dicke = build_collective_ops(&ModelParams::new(n, 1.0, 1.0).unwrap()).unwrap();
            for axis in 0..3 {
                let r = full.restrict_to_dicke(axis);
                assert!(linalg::frobenius(&(&r - dicke.axis(axis))) < 1e-12, "n={n} axis={axis}");
            }
        }
    }

    #[test]
    fn cat_is_one_uniform() {
        for n in 2..=12 {
            let cat = FullStateVector::cat(n).unwrap();
            let rho = if n <= 8 { Some(cat.to_density().unwrap()) } else { None };
            for site in 0..n as usize {
                let r = cat.reduced(&[site]).unwrap();
                if let Some(rho) = &rho {
                    assert_eq!(rho.reduced(&[site]).unwrap(), r);
                }
                assert_eq!(r.data, vec![C64::new(0.5, 0.0), ZERO, ZERO, C64::new(0.5, 0.0)]);
            }
        }
    }

    #[test]
    fn single_site_bloch_vectors() {
        let up = FullStateVector::product(5, [ZERO, C64::new(1.0, 0.0)]).unwrap();
        let r = up.reduced(&[3]).unwrap();
        assert_eq!(r.data[3], C64::new(1.0, 0.0));
        let (theta, phi) = (1.1, 0.6);
        let psi = FullStateVector::coherent(6, theta, phi).unwrap();
        let r = psi.reduced(&[2]).unwrap();
        let b = crate::spin::bloch_vector(theta, phi);
        for axis in 0..3 {
            assert!((local_expect(&r, &pauli_half(axis)) - 0.5 * b[axis]).abs() < 1e-14);
        }
    }

    #[test]
    fn cat_zz_correlation_and_equivalence() {
        let cat = FullStateVector::cat(8).unwrap();
        assert!((two_site_correlation(&cat, 0, 5, 2, 2).unwrap() - 0.25).abs() < 1e-15);
        let rep = verify_pair_correlation_equivalence(&cat, 2, 2).unwrap();
        assert!((rep.chi - 1.0).abs() < 1e-12 && rep.gap.abs() < 1e-12);
        let prod = FullStateVector::coherent(6, 0.4, 0.2).unwrap();
        assert!(two_site_correlation(&prod, 1, 4, 0, 2).unwrap().abs() < 1e-15);
        assert!(two_site_correlation(&prod, 1, 1, 0, 2).is_err());
        assert!(prod.reduced(&[1, 9]).is_err());
    }

    #[test]
    fn non_symmetric_state_is_rejected() {
        let mut psi = FullStateVector::product(4, [C64::new(1.0, 0.0), ZERO]).unwrap();
        psi.amps[0] = C64::new(0.6, 0.0);
        psi.amps[0b0011] = C64::new(0.8, 0.0);
        assert!(verify_pair_correlation_equivalence(&psi, 2, 2).is_err());
    }

    #[test]
    fn symmetric_mixed_state_gap_is_order_one_over_n() {
        for n in [4, 6, 8] {
            let rho = FullDensityMatrix::symmetric_mixed(n).unwrap();
            let rep = verify_pair_correlation_equivalence(&rho, 0, 0).unwrap();
            assert!(rep.gap.abs() * (n as f64) < 2.0, "n={n}: {rep:?}");
        }
    }

    #[test]
    fn full_rhs_matches_dicke_rhs_on_the_sector() {
        let params = ModelParams::new(4, 1.3, 0.7).unwrap();
        let full = full_collective_ops(4).unwrap();
        let v = full.dicke_isometry();
        let rho_d = cat_state(&params).unwrap();
        let rho_f = v.dot(&rho_d.data).dot(&v.t().mapv(|z| z.conj()));
        let rho_f = FullDensityMatrix {
            n: 4,
            data: rho_f.iter().copied().collect(),
        };
        let out_f = full_lindblad_rhs(&rho_f, &params).unwrap().to_array();
        let ops = build_collective_ops(&params).unwrap();
        let out_d = crate::lindblad::lindblad_rhs(&rho_d, &ops, &params).unwrap();
        let back = v.t().mapv(|z| z.conj()).dot(&out_f).dot(&v);
        assert!(linalg::frobenius(&(back - out_d)) < 1e-13);
    }

    #[test]
    fn packed_rhs_matches_dense_master_equation() {
        // Hermitian, not permutation symmetric.
        let n = 3;
        let params = ModelParams::new(n, 1.7, 0.6).unwrap();
        let ops = full_collective_ops(n).unwrap();
        let d = ops.dim();
        let mut rho = Array2::<C64>::zeros((d, d));
        for r in 0..d {
            for c in 0..d {
                let (a, b) = ((r * 7 + c * 3) as f64, (r * 5 + c * 11) as f64);
                rho[[r, c]] = C64::new(a.sin(), b.cos());
            }
        }
        let rho = &rho + &rho.t().mapv(|z| z.conj());
        let [sx, sy] = [ops.matrix(0).unwrap(), ops.matrix(1).unwrap()];
        let sm = &sx - &sy.mapv(|z| z * C64::i());
        let sp = sm.t().mapv(|z| z.conj());
        let k = sp.dot(&sm);
        let g = params.kappa / params.spin();
        let comm = sx.dot(&rho) - rho.dot(&sx);
        let anti = k.dot(&rho) + rho.dot(&k);
        let want = comm.mapv(|z| z * C64::new(0.0, -params.omega)) + (sm.dot(&rho).dot(&sp) - anti.mapv(|z| 0.5 * z)).mapv(|z| g * z);
        let got = full_lindblad_rhs(
            &FullDensityMatrix {
                n,
                data: rho.iter().copied().collect(),
            },
            &params,
        )
        .unwrap()
        .to_array();
        assert!(linalg::frobenius(&(got - want)) < 1e-12);
    }

    #[test]
    fn full_space_agrees_with_dicke_evolution() {
        let params = ModelParams::new(4, 2.5, 1.0).unwrap();
        let spec = EvolutionSpec::new(3.0, 0.25)
            .with_tolerances(1e-10, 1e-12)
            .with_observables(vec![Observable::mz(), Observable::S2Norm]);
        let full = evolve_full(&FullStateVector::cat(4).unwrap().to_density().unwrap(), &params, &spec).unwrap();
        let exact = crate::lindblad::evolve_exact(&cat_state(&params).unwrap(), &params, &spec).unwrap();
        let a = full.get(Observable::mz()).unwrap();
        let b = exact.get(Observable::mz()).unwrap();
        assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-8));
        let s2 = full.get(Observable::S2Norm).unwrap();
        assert!(s2.iter().all(|v| (v - 1.5).abs() < 1e-8));
    }

    #[test]
    fn heisenberg_picture_matches_schrodinger_picture() {
        let params = ModelParams::new(5, 1.3, 0.8).unwrap();
        let spec = EvolutionSpec::new(2.0, 0.1).with_tolerances(1e-11, 1e-13);
        // includes a non-symmetric state
        let mut odd = FullStateVector::coherent(5, 0.4, 0.3).unwrap();
        odd.amps[3] += C64::new(0.2, -0.1);
        let norm = odd.amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        odd.amps.iter_mut().for_each(|z| *z /= norm);
        let states = vec![FullStateVector::cat(5).unwrap(), odd];
        for axis in 0..3 {
            let obs = Observable::M(axis);
            let h = evolve_full_heisenberg(&states, obs, &params, &spec).unwrap();
            for (st, hs) in states.iter().zip(&h) {
                let sp = spec.clone().with_observables(vec![obs]);
                let sch = evolve_full(&st.to_density().unwrap(), &params, &sp).unwrap();
                let (a, b) = (hs.get(obs).unwrap(), sch.get(obs).unwrap());
                assert_eq!(a.len(), b.len());
                assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9), "axis {axis}");
            }
        }
        assert!(evolve_full_heisenberg(&states, Observable::chi(2, 2), &params, &spec).is_err());
    }

    #[test]
    fn dark_state_is_constant_in_full_space() {
        let params = ModelParams::new(3, 0.0, 1.0).unwrap();
        let down = FullStateVector::product(3, [C64::new(1.0, 0.0), ZERO]).unwrap();
        let spec = EvolutionSpec::new(2.0, 0.5).with_observables(vec![Observable::mz()]);
        let ts = evolve_full(&down.to_density().unwrap(), &params, &spec).unwrap();
        assert!(ts.get(Observable::mz()).unwrap().iter().all(|v| *v == -1.0));
    }

    #[test]
    fn size_guards() {
        assert!(full_collective_ops(13).is_err());
        let params = ModelParams::new(11, 1.0, 1.0).unwrap();
        let rho = FullDensityMatrix { n: 11, data: vec![] };
        assert!(evolve_full(&rho, &params, &EvolutionSpec::new(1.0, 0.1)).is_err());
    }

    #[test]
    fn coherent_full_matches_dicke_amplitudes() {
        let (n, theta, phi) = (5, 0.9, 1.4);
        let full = FullStateVector::coherent(n, theta, phi).unwrap();
        let v = FullCollectiveOps { n }.dicke_isometry();
        let dicke = v.t().mapv(|z| z.conj()).dot(&Array1::from(full.amps.clone()));
        let params = ModelParams::new(n, 1.0, 1.0).unwrap();
        let rho = DickeDensityMatrix::from_pure(&dicke, params).unwrap();
        assert_eq!(rho, rho.clone());
        let expect = crate::spin::coherent_amplitudes(n, theta, phi);
        for k in 0..=n as usize {
            assert!((dicke[k] - expect[k]).norm() < 1e-14);
        }
    }
}
