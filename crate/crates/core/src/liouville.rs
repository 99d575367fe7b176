//! Liouvillian in Fock-Liouville space, its biorthogonal eigen-decomposition,
//! spectral reconstruction of observables and finite-size scaling.
//!
//! Vectorisation is column stacking: `vec(ρ)[r + c·d] = ρ[r, c]`, so that
//! `vec(A ρ B) = (Bᵀ ⊗ A) vec(ρ)`.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, ShapeBuilder};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, I, ONE, ZERO};
use crate::series::{Generator, Observable, SeriesMeta, TimeSeries};
use crate::spin::{build_collective_ops, DickeDensityMatrix, ModelParams};

/// Largest Liouville-space dimension built by default.
pub const DEFAULT_DIM_GUARD: usize = 1 << 14;
/// Classification threshold relative to `‖L‖_F`.
pub const CLASS_REL_TOL: f64 = 1e-9;
pub const BIORTHOGONALITY_TOL: f64 = 1e-8;
/// Allowed imaginary residue of a reconstructed Hermitian observable.
pub const IMAG_RESIDUE_TOL: f64 = 1e-8;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

pub fn vectorize(rho: &ArrayView2<C64>) -> Vec<C64> {
    let d = rho.nrows();
    let mut v = vec![ZERO; d * d];
    for c in 0..d {
        for r in 0..d {
            v[r + c * d] = rho[[r, c]];
        }
    }
    v
}

pub fn unvectorize(v: &[C64], d: usize) -> Result<Array2<C64>> {
    if v.len() != d * d {
        return Err(Error::DimensionMismatch {
            expected: d * d,
            got: v.len(),
        });
    }
    Ok(Array2::from_shape_fn((d, d), |(r, c)| v[r + c * d]))
}

fn nonzeros(m: &Array2<C64>) -> Vec<(usize, usize, C64)> {
    m.indexed_iter()
        .filter(|(_, v)| **v != ZERO)
        .map(|((r, c), v)| (r, c, *v))
        .collect()
}

pub fn build_liouvillian(params: &ModelParams) -> Result<Array2<C64>> {
    build_liouvillian_with_guard(params, DEFAULT_DIM_GUARD)
}

pub fn build_liouvillian_with_guard(params: &ModelParams, max_dim: usize) -> Result<Array2<C64>> {
    params.validate()?;
    let d = params.dim();
    let n = d * d;
    if n > max_dim {
        return Err(Error::SizeGuard(format!(
            "Liouville dimension (N+1)^2 = {n} exceeds the guard {max_dim}"
        )));
    }
    let ops = build_collective_ops(params)?;
    let g = params.kappa / params.spin();
    let h = ops.sx.mapv(|v| v * params.omega);
    let k = ops.sp.dot(&ops.sm);
    let mut l = Array2::<C64>::zeros((n, n));
    // A ρ: row (i, c) <- (j, c); ρ B: row (r, j) <- (r, i)
    let mut left_right = |a: &Array2<C64>, left: C64, right: C64| {
        for (i, j, v) in nonzeros(a) {
            for m in 0..d {
                l[[i + m * d, j + m * d]] += left * v;
                l[[m + j * d, m + i * d]] += right * v;
            }
        }
    };
    left_right(&h, -I, I);
    left_right(&k, C64::new(-0.5 * g, 0.0), C64::new(-0.5 * g, 0.0));
    let (sm, sp) = (nonzeros(&ops.sm), nonzeros(&ops.sp));
    for &(r, a, x) in &sm {
        for &(b, c, y) in &sp {
            l[[r + c * d, a + b * d]] += g * x * y;
        }
    }
    Ok(l)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeClass {
    Stationary,
    Rotating,
    Decaying,
    Spiraling,
}

impl ModeClass {
    pub fn classify(lambda: C64, threshold: f64) -> Self {
        let flat = lambda.re.abs() <= threshold;
        let still = lambda.im.abs() <= threshold;
        match (flat, still) {
            (true, true) => ModeClass::Stationary,
            (true, false) => ModeClass::Rotating,
            (false, true) => ModeClass::Decaying,
            (false, false) => ModeClass::Spiraling,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    /// Hilbert-space dimension `d`; vectors live in `d²`.
    pub hilbert_dim: usize,
    pub eigenvalues: Vec<C64>,
    /// Columns `|r_k⟩⟩` (column-major storage).
    pub right: Array2<C64>,
    /// Columns `|l_k⟩⟩`, scaled so that `⟨⟨l_j|r_k⟩⟩ = δ_jk`.
    pub left: Array2<C64>,
    pub classes: Vec<ModeClass>,
    pub norm: f64,
    pub threshold: f64,
    pub biorthogonality_residual: f64,
    /// Near-degenerate clusters whose overlap block could not be inverted.
    pub defective_clusters: usize,
    pub real_arithmetic: bool,
}

/// Orthonormal Hermitian operator basis in Liouville space: position
/// `r + c·d` carries `E_rr`, `(E_rc + E_cr)/√2` for `r < c`, and
/// `i(E_cr − E_rc)/√2` for `r > c`. Returns the (≤ 2) nonzero entries of
/// basis vector `p`.
fn hermitian_basis(d: usize, p: usize) -> [(usize, C64); 2] {
    let (r, c) = (p % d, p / d);
    let swap = c + r * d;
    let h = FRAC_1_SQRT_2;
    if r == c {
        [(p, ONE), (p, ZERO)]
    } else if r < c {
        [(p, C64::new(h, 0.0)), (swap, C64::new(h, 0.0))]
    } else {
        [(swap, C64::new(0.0, h)), (p, C64::new(0.0, -h))]
    }
}

/// `Bᴴ L B` if it is real (Hermiticity-preserving `L`), column-major.
fn real_representation(l: &Array2<C64>, d: usize) -> Option<Vec<f64>> {
    let n = d * d;
    let scale = l.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(1e-300);
    let mut out = vec![0.0; n * n];
    for q in 0..n {
        let bq = hermitian_basis(d, q);
        for p in 0..n {
            let bp = hermitian_basis(d, p);
            let mut acc = ZERO;
            for &(a, alpha) in &bp {
                if alpha == ZERO {
                    continue;
                }
                for &(b, beta) in &bq {
                    if beta != ZERO {
                        acc += alpha.conj() * l[[a, b]] * beta;
                    }
                }
            }
            if acc.im.abs() > 1e-12 * scale {
                return None;
            }
            out[p + q * n] = acc.re;
        }
    }
    Some(out)
}

fn from_hermitian_coords(x: &[C64], d: usize) -> Vec<C64> {
    let mut v = vec![ZERO; x.len()];
    for p in 0..x.len() {
        for (a, coef) in hermitian_basis(d, p) {
            if coef != ZERO {
                v[a] += coef * x[p];
            }
        }
    }
    v
}

/// Complex Gram matrix `U^H V` from the packed real layout.
fn packed_gram(eig: &linalg::RealEigen) -> Array2<C64> {
    let n = eig.n;
    let g = linalg::real_transpose_times(&eig.left, &eig.right, n, n, n);
    let gr = |x: usize, y: usize| g[x + y * n];
    // (real column, imaginary column, sign of the imaginary part)
    let parts: Vec<(usize, Option<usize>, f64)> = (0..n)
        .map(|k| {
            let im = eig.values[k].im;
            if im == 0.0 {
                (k, None, 1.0)
            } else if im > 0.0 {
                (k, Some(k + 1), 1.0)
            } else {
                (k - 1, Some(k), -1.0)
            }
        })
        .collect();
    Array2::from_shape_fn((n, n), |(j, k)| {
        let (a, b, sb) = parts[j];
        let (c, dd, sd) = parts[k];
        // (a − i b)ᵀ (c + i d)
        let mut re = gr(a, c);
        let mut im = 0.0;
        if let Some(dd) = dd {
            im += sd * gr(a, dd);
        }
        if let Some(b) = b {
            im -= sb * gr(b, c);
            if let Some(dd) = dd {
                re += sb * sd * gr(b, dd);
            }
        }
        C64::new(re, im)
    })
}

pub fn spectral_decompose(l: &Array2<C64>) -> Result<SpectralDecomposition> {
    let n = l.nrows();
    if l.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: l.ncols(),
        });
    }
    let d = (n as f64).sqrt().round() as usize;
    if d * d != n {
        return Err(Error::InvalidParameter(format!(
            "Liouvillian dimension {n} is not a perfect square"
        )));
    }
    if l.iter().any(|z| !z.is_finite()) {
        return Err(Error::InvalidParameter("Liouvillian has non-finite entries".into()));
    }
    let norm = l.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let threshold = CLASS_REL_TOL * norm;

    let (values, right, mut left, mut gram, real_arithmetic) = match real_representation(l, d) {
        Some(lr) => {
            let eig = linalg::eig_real(lr, n)?;
            let gram = packed_gram(&eig);
            let mut right = Array2::<C64>::zeros((n, n).f());
            let mut left = Array2::<C64>::zeros((n, n).f());
            for k in 0..n {
                let r = from_hermitian_coords(&eig.vector(k, false), d);
                let lv = from_hermitian_coords(&eig.vector(k, true), d);
                right.column_mut(k).assign(&ndarray::Array1::from(r));
                left.column_mut(k).assign(&ndarray::Array1::from(lv));
            }
            (eig.values, right, left, gram, true)
        }
        None => {
            log::info!("Liouvillian is not Hermiticity preserving; using complex arithmetic");
            let raw = linalg::eig_general(l.clone())?;
            let gram = linalg::adjoint_times(&raw.left, &raw.right);
            (raw.values, raw.right, raw.left, gram, false)
        }
    };

    // Near-degenerate clusters get their overlap block inverted as a whole.
    let cluster_tol = threshold.max(1e-12);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].re.total_cmp(&values[b].re));
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut y = x;
        while p[y] != r {
            let next = p[y];
            p[y] = r;
            y = next;
        }
        r
    }
    for (pos, &a) in order.iter().enumerate() {
        for &b in &order[pos + 1..] {
            if values[b].re - values[a].re > cluster_tol {
                break;
            }
            if (values[a] - values[b]).norm() <= cluster_tol {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for k in 0..n {
        let root = find(&mut parent, k);
        clusters.entry(root).or_default().push(k);
    }
    let mut defective = 0;
    for members in clusters.values() {
        if members.len() == 1 {
            let k = members[0];
            let s = gram[[k, k]];
            if s.norm() < 1e-14 {
                defective += 1;
                continue;
            }
            left.column_mut(k).mapv_inplace(|z| z / s.conj());
            gram.row_mut(k).mapv_inplace(|z| z / s);
            continue;
        }
        let m = members.len();
        let block = Array2::from_shape_fn((m, m), |(a, b)| gram[[members[a], members[b]]]);
        let rows = Array2::from_shape_fn((m, n), |(a, c)| gram[[members[a], c]]);
        // New left block L_c M^{-H}; its Gram rows are M^{-1} (old rows).
        let Ok(new_rows) = linalg::solve(&block, &rows) else {
            defective += 1;
            continue;
        };
        let lc = Array2::from_shape_fn((n, m), |(r, a)| left[[r, members[a]]]);
        let minv_h = linalg::solve(&block, &Array2::eye(m))
            .map(|x| linalg::dagger(&x))?;
        let new_left = lc.dot(&minv_h);
        for (a, &k) in members.iter().enumerate() {
            left.column_mut(k).assign(&new_left.column(a));
            gram.row_mut(k).assign(&new_rows.row(a));
        }
    }
    let mut residual: f64 = 0.0;
    for ((j, k), z) in gram.indexed_iter() {
        let target = if j == k { ONE } else { ZERO };
        residual = residual.max((z - target).norm());
    }
    if defective > 0 {
        log::warn!("{defective} eigenvalue clusters look defective; decomposition flagged");
    }
    let classes = values.iter().map(|&v| ModeClass::classify(v, threshold)).collect();
    Ok(SpectralDecomposition {
        hilbert_dim: d,
        eigenvalues: values,
        right,
        left,
        classes,
        norm,
        threshold,
        biorthogonality_residual: residual,
        defective_clusters: defective,
        real_arithmetic,
    })
}

/// Checks behind the spectral invariants, with absolute tolerances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralAxioms {
    pub conjugate_pair_error: f64,
    pub max_real_part: f64,
    pub zero_modes: usize,
    pub biorthogonality_residual: f64,
}

impl SpectralAxioms {
    pub fn holds(&self, pair_tol: f64, re_tol: f64, biorth_tol: f64) -> bool {
        self.conjugate_pair_error <= pair_tol
            && self.max_real_part <= re_tol
            && self.zero_modes >= 1
            && self.biorthogonality_residual <= biorth_tol
    }
}

impl SpectralDecomposition {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Copy with the eigenvectors dropped; enough for tracking and export.
    pub fn without_vectors(&self) -> Self {
        Self {
            hilbert_dim: self.hilbert_dim,
            eigenvalues: self.eigenvalues.clone(),
            right: Array2::zeros((0, 0)),
            left: Array2::zeros((0, 0)),
            classes: self.classes.clone(),
            norm: self.norm,
            threshold: self.threshold,
            biorthogonality_residual: self.biorthogonality_residual,
            defective_clusters: self.defective_clusters,
            real_arithmetic: self.real_arithmetic,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn axioms(&self, zero_tol: f64) -> SpectralAxioms {
        let vals = &self.eigenvalues;
        let mut sorted: Vec<C64> = vals.clone();
        sorted.sort_by(|a, b| a.re.total_cmp(&b.re));
        let mut pair: f64 = 0.0;
        for v in vals {
            let target = v.conj();
            // nearest by scanning outward from the real-part position
            let pos = sorted.partition_point(|z| z.re < target.re);
            let mut best = f64::INFINITY;
            for dir in [-1isize, 1] {
                let mut i = if dir < 0 { pos as isize - 1 } else { pos as isize };
                while i >= 0 && (i as usize) < sorted.len() {
                    let z = sorted[i as usize];
                    if (z.re - target.re).abs() > best {
                        break;
                    }
                    best = best.min((z - target).norm());
                    i += dir;
                }
            }
            pair = pair.max(best);
        }
        SpectralAxioms {
            conjugate_pair_error: pair,
            max_real_part: vals.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max),
            zero_modes: vals.iter().filter(|z| z.norm() <= zero_tol).count(),
            biorthogonality_residual: self.biorthogonality_residual,
        }
    }

    fn require_biorthogonal(&self) -> Result<()> {
        if self.biorthogonality_residual > BIORTHOGONALITY_TOL || self.defective_clusters > 0 {
            return Err(Error::NotBiorthogonal {
                residual: self.biorthogonality_residual,
            });
        }
        Ok(())
    }

    /// `⟨⟨l_k|ρ₀⟩⟩ · ⟨⟨O|r_k⟩⟩` for every mode.
    pub fn modal_coefficients(&self, rho0: &ArrayView2<C64>, obs: &ArrayView2<C64>) -> Result<Vec<C64>> {
        let d = self.hilbert_dim;
        for dim in [rho0.dim(), obs.dim()] {
            if dim != (d, d) {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: dim.0,
                });
            }
        }
        self.require_biorthogonal()?;
        let p = vectorize(rho0);
        let o = vectorize(obs);
        Ok((0..self.len())
            .map(|k| {
                let l = self.left.column(k);
                let r = self.right.column(k);
                let lp: C64 = l.iter().zip(&p).map(|(a, b)| a.conj() * b).sum();
                let or: C64 = o.iter().zip(r.iter()).map(|(a, b)| a.conj() * b).sum();
                lp * or
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub max_imag: f64,
}

fn evaluate(dec: &SpectralDecomposition, coeffs: &[C64], times: &[f64]) -> (Vec<f64>, f64) {
    let mut max_imag: f64 = 0.0;
    let values = times
        .iter()
        .map(|&t| {
            let v: C64 = coeffs
                .iter()
                .zip(&dec.eigenvalues)
                .map(|(c, l)| c * (l * t).exp())
                .sum();
            max_imag = max_imag.max(v.im.abs());
            v.re
        })
        .collect();
    (values, max_imag)
}

/// `⟨O(t)⟩ = Σ_k e^{λ_k t} ⟨⟨l_k|ρ₀⟩⟩ ⟨⟨O|r_k⟩⟩`.
pub fn reconstruct_observable(
    dec: &SpectralDecomposition,
    rho0: &ArrayView2<C64>,
    obs: &ArrayView2<C64>,
    times: &[f64],
) -> Result<Reconstruction> {
    let coeffs = dec.modal_coefficients(rho0, obs)?;
    let (values, max_imag) = evaluate(dec, &coeffs, times);
    let hermitian = obs
        .indexed_iter()
        .all(|((r, c), v)| (v - obs[[c, r]].conj()).norm() <= 1e-14 * (1.0 + v.norm()));
    if hermitian && max_imag > IMAG_RESIDUE_TOL {
        return Err(Error::ToleranceFailure {
            t: times.last().copied().unwrap_or(0.0),
            what: format!("imaginary residue {max_imag:.3e} of a Hermitian observable"),
        });
    }
    Ok(Reconstruction {
        times: times.to_vec(),
        values,
        max_imag,
    })
}

/// Spectral counterpart of `evolve_exact` for means, second cumulants and `s2_norm`.
pub fn reconstruct_series(
    dec: &SpectralDecomposition,
    rho0: &DickeDensityMatrix,
    observables: &[Observable],
    times: &[f64],
) -> Result<TimeSeries> {
    let params = rho0.params;
    let ops = build_collective_ops(&params)?;
    let s = params.spin();
    let view = rho0.data.view();
    let mut means: [Option<Vec<f64>>; 3] = [None, None, None];
    let mut max_imag: f64 = 0.0;
    fn mean(
        means: &mut [Option<Vec<f64>>; 3],
        i: usize,
        max_imag: &mut f64,
        run: &dyn Fn(&Array2<C64>) -> Result<Reconstruction>,
        ops: &crate::spin::CollectiveOps,
    ) -> Result<Vec<f64>> {
        if means[i].is_none() {
            let rec = run(ops.axis(i))?;
            *max_imag = max_imag.max(rec.max_imag);
            means[i] = Some(rec.values);
        }
        Ok(means[i].clone().expect("filled"))
    }
    let run = |op: &Array2<C64>| reconstruct_observable(dec, &view, &op.view(), times);
    let mut columns = Vec::new();
    for &o in observables {
        let col = match o {
            Observable::M(i) => mean(&mut means, i, &mut max_imag, &run, &ops)?.iter().map(|v| v / s).collect(),
            Observable::Chi(i, j) => {
                let rec = run(&ops.sym_pair_matrix(i, j))?;
                max_imag = max_imag.max(rec.max_imag);
                let mi = mean(&mut means, i, &mut max_imag, &run, &ops)?;
                let mj = mean(&mut means, j, &mut max_imag, &run, &ops)?;
                rec.values
                    .iter()
                    .zip(mi.iter().zip(&mj))
                    .map(|(q, (a, b))| (q - a * b) / (s * s))
                    .collect()
            }
            Observable::S2Norm => {
                let rec = run(&ops.s2)?;
                max_imag = max_imag.max(rec.max_imag);
                rec.values.iter().map(|v| v / (s * s)).collect()
            }
            Observable::Tau(..) => {
                return Err(Error::InvalidParameter(format!(
                    "spectral reconstruction does not evaluate '{o}'"
                )))
            }
        };
        columns.push((o, col));
    }
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("max_imag_residue".into(), max_imag);
    diagnostics.insert("biorthogonality_residual".into(), dec.biorthogonality_residual);
    let dt = if times.len() > 1 { times[1] - times[0] } else { 0.0 };
    Ok(TimeSeries {
        times: times.to_vec(),
        columns,
        meta: SeriesMeta {
            generator: Generator::Exact,
            n: Some(params.n),
            omega: params.omega,
            kappa: params.kappa,
            state: None,
            state_label: "spectral reconstruction".into(),
            t_end: times.last().copied().unwrap_or(0.0),
            sample_dt: dt,
            rel_tol: 0.0,
            abs_tol: 0.0,
            diagnostics,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeWeight {
    pub index: usize,
    pub alpha: f64,
    pub beta: f64,
    /// `|⟨⟨O|r_k⟩⟩ ⟨⟨l_k|ρ₀⟩⟩|`.
    pub raw: f64,
    /// `raw` divided by the largest reported `raw` (left as is when all vanish).
    pub weight: f64,
}

/// Weights of the modes with positive frequency (`β_k` above the
/// classification threshold), most weighted first.
pub fn spectral_weights(
    dec: &SpectralDecomposition,
    rho0: &ArrayView2<C64>,
    obs: &ArrayView2<C64>,
) -> Result<Vec<ModeWeight>> {
    let coeffs = dec.modal_coefficients(rho0, obs)?;
    let mut out: Vec<ModeWeight> = (0..dec.len())
        .filter(|&k| dec.eigenvalues[k].im > dec.threshold)
        .map(|k| ModeWeight {
            index: k,
            alpha: dec.eigenvalues[k].re,
            beta: dec.eigenvalues[k].im,
            raw: coeffs[k].norm(),
            weight: coeffs[k].norm(),
        })
        .collect();
    let max = out.iter().map(|w| w.raw).fold(0.0, f64::max);
    if max > 1e-10 {
        out.iter_mut().for_each(|w| w.weight = w.raw / max);
    }
    out.sort_by(|a, b| b.raw.total_cmp(&a.raw).then(a.index.cmp(&b.index)));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEntry {
    pub re: f64,
    pub im: f64,
    pub class: ModeClass,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

pub fn spectrum_entries(dec: &SpectralDecomposition, weights: Option<&[ModeWeight]>) -> Vec<SpectrumEntry> {
    let lookup: BTreeMap<usize, f64> = weights
        .unwrap_or(&[])
        .iter()
        .map(|w| (w.index, w.weight))
        .collect();
    let mut idx: Vec<usize> = (0..dec.len()).collect();
    idx.sort_by(|&a, &b| {
        let (x, y) = (dec.eigenvalues[a], dec.eigenvalues[b]);
        y.re.total_cmp(&x.re).then(x.im.total_cmp(&y.im))
    });
    idx.into_iter()
        .map(|k| SpectrumEntry {
            re: dec.eigenvalues[k].re,
            im: dec.eigenvalues[k].im,
            class: dec.classes[k],
            weight: weights.map(|_| lookup.get(&k).copied().unwrap_or(0.0)),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub mu: usize,
    pub coeffs: Vec<f64>,
    /// Root-mean-square misfit of the fitted polynomial on the data.
    pub residual: f64,
    pub n_grid: Vec<u32>,
}

impl ScalingFit {
    pub fn a0(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn eval(&self, n: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, a| acc / n + a)
    }
}

pub const MAX_SCALING_ORDER: usize = 6;

/// Least-squares fit of `λ(N) = Σ_{i=0}^{μ} a_i / N^i`.
pub fn scaling_fit(n_grid: &[u32], values: &[f64], mu: usize) -> Result<ScalingFit> {
    if mu == 0 || mu > MAX_SCALING_ORDER {
        return Err(Error::InvalidParameter(format!(
            "scaling order must lie in 1..={MAX_SCALING_ORDER}, got {mu}"
        )));
    }
    if n_grid.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: n_grid.len(),
            got: values.len(),
        });
    }
    if n_grid.len() < mu + 2 {
        return Err(Error::InvalidParameter(format!(
            "scaling fit of order {mu} needs at least {} points, got {}",
            mu + 2,
            n_grid.len()
        )));
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] == 0 {
        return Err(Error::InvalidParameter("N grid must be positive and strictly increasing".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite scaling data".into()));
    }
    let rows = n_grid.len();
    let cols = mu + 1;
    // Columns scaled to unit norm for conditioning.
    let mut a = vec![0.0; rows * cols];
    let mut scale = vec![0.0; cols];
    for j in 0..cols {
        for (i, &n) in n_grid.iter().enumerate() {
            a[i + j * rows] = (n as f64).powi(-(j as i32));
        }
        scale[j] = (0..rows).map(|i| a[i + j * rows].powi(2)).sum::<f64>().sqrt();
        for i in 0..rows {
            a[i + j * rows] /= scale[j];
        }
    }
    let mut b = values.to_vec();
    let mut jpvt = vec![0i32; cols];
    let mut rank = 0i32;
    let mut info = 0i32;
    let rcond = 1e-13;
    let (m, nn, one) = (rows as i32, cols as i32, 1i32);
    let lwork = (4 * (rows + cols) + 64) as i32;
    let mut work = vec![0.0; lwork as usize];
    // SAFETY: column-major A (rows × cols) and B (rows × 1), rows ≥ cols.
    unsafe {
        lapack_sys::dgelsy_(
            &m,
            &nn,
            &one,
            a.as_mut_ptr(),
            &m,
            b.as_mut_ptr(),
            &m,
            jpvt.as_mut_ptr(),
            &rcond,
            &mut rank,
            work.as_mut_ptr(),
            &lwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Analysis(format!("least-squares solver failed, info = {info}")));
    }
    if (rank as usize) < cols {
        return Err(Error::RankDeficient {
            rank: rank as usize,
            cols,
        });
    }
    let coeffs: Vec<f64> = (0..cols).map(|j| b[j] / scale[j]).collect();
    let mut fit = ScalingFit {
        mu,
        coeffs,
        residual: 0.0,
        n_grid: n_grid.to_vec(),
    };
    let ss: f64 = n_grid
        .iter()
        .zip(values)
        .map(|(&n, v)| (fit.eval(n as f64) - v).powi(2))
        .sum();
    fit.residual = (ss / rows as f64).sqrt();
    Ok(fit)
}

/// One mode followed across an ascending N grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedMode {
    pub n_grid: Vec<u32>,
    pub values: Vec<C64>,
    /// Eigenvalue index in each decomposition.
    pub indices: Vec<usize>,
}

impl TrackedMode {
    pub fn alphas(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.re).collect()
    }

    pub fn betas(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.im).collect()
    }
}

/// A nearest match counts as unambiguous when the runner-up is at least
/// this many times farther away.
pub const TRACK_SEPARATION: f64 = 2.0;

/// Follows modes across N. Starting modes are the `count` positive-frequency
/// modes with the smallest `|Re λ|` at the first N, or the modes nearest in
/// frequency to `seeds` when given. Each step matches by nearest neighbour
/// in `(N·Re λ, Im λ)`, where decay rates closing in as `1/N` stay put.
/// Near ties are broken by weight when `weights` (aligned with `decs`) are
/// supplied, and reported as ambiguous otherwise.
pub fn track_modes(
    decs: &[(u32, &SpectralDecomposition)],
    count: usize,
    seeds: Option<&[f64]>,
    weights: Option<&[Vec<ModeWeight>]>,
) -> Result<Vec<TrackedMode>> {
    if decs.is_empty() {
        return Err(Error::InvalidParameter("no decompositions to track".into()));
    }
    if decs.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::InvalidParameter("N grid must be strictly increasing".into()));
    }
    if let Some(w) = weights {
        if w.len() != decs.len() {
            return Err(Error::DimensionMismatch {
                expected: decs.len(),
                got: w.len(),
            });
        }
    }
    let wanted = seeds.map_or(count, |s| s.len());
    if wanted == 0 {
        return Err(Error::InvalidParameter("nothing to track".into()));
    }
    let pool_size = (3 * wanted).max(wanted + 8);
    let pool = |dec: &SpectralDecomposition| -> Vec<usize> {
        let mut c: Vec<usize> = (0..dec.len()).filter(|&k| dec.eigenvalues[k].im > dec.threshold).collect();
        c.sort_by(|&a, &b| {
            let (x, y) = (dec.eigenvalues[a], dec.eigenvalues[b]);
            x.re.abs().total_cmp(&y.re.abs()).then(x.im.total_cmp(&y.im))
        });
        c.truncate(pool_size);
        c
    };
    let weight_of = |step: usize, k: usize| -> Option<f64> {
        weights.and_then(|w| w[step].iter().find(|m| m.index == k).map(|m| m.weight))
    };

    let (n0, dec0) = decs[0];
    let pool0 = pool(dec0);
    let start: Vec<usize> = match seeds {
        None => {
            if pool0.len() < count {
                return Err(Error::InvalidParameter(format!(
                    "only {} rotating candidates at N = {n0}",
                    pool0.len()
                )));
            }
            pool0[..count].to_vec()
        }
        Some(seeds) => {
            let mut chosen = Vec::new();
            for &b in seeds {
                let k = *pool0
                    .iter()
                    .min_by(|&&x, &&y| {
                        (dec0.eigenvalues[x].im - b).abs().total_cmp(&(dec0.eigenvalues[y].im - b).abs())
                    })
                    .ok_or_else(|| Error::InvalidParameter(format!("no rotating candidates at N = {n0}")))?;
                if chosen.contains(&k) {
                    return Err(Error::InvalidParameter(format!("seeds select mode {k} twice")));
                }
                chosen.push(k);
            }
            chosen
        }
    };
    let mut tracks: Vec<TrackedMode> = start
        .iter()
        .map(|&k| TrackedMode {
            n_grid: vec![n0],
            values: vec![dec0.eigenvalues[k]],
            indices: vec![k],
        })
        .collect();

    for (step, &(n, dec)) in decs.iter().enumerate().skip(1) {
        let cand = pool(dec);
        let feature = |z: C64, n: u32| (z.re * n as f64, z.im);
        let mut taken: Vec<usize> = Vec::new();
        for tr in tracks.iter_mut() {
            let prev = *tr.values.last().expect("nonempty");
            let prev_n = *tr.n_grid.last().expect("nonempty");
            let (fa, fb) = feature(prev, prev_n);
            let mut ranked: Vec<(f64, usize)> = cand
                .iter()
                .map(|&k| {
                    let (ga, gb) = feature(dec.eigenvalues[k], n);
                    (((ga - fa).powi(2) + (gb - fb).powi(2)).sqrt(), k)
                })
                .collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let Some(&(d1, best)) = ranked.first() else {
                return Err(Error::AmbiguousModes { n, candidates: vec![] });
            };
            let mut pick = best;
            if let Some(&(d2, second)) = ranked.get(1) {
                if d2 <= TRACK_SEPARATION * d1 {
                    let prev_w = weight_of(step - 1, *tr.indices.last().expect("nonempty"));
                    let resolved = match (prev_w, weight_of(step, best), weight_of(step, second)) {
                        (Some(p), Some(a), Some(b)) if ((a - p).abs() - (b - p).abs()).abs() > 0.1 * p.max(1e-12) => {
                            Some(if (a - p).abs() <= (b - p).abs() { best } else { second })
                        }
                        _ => None,
                    };
                    match resolved {
                        Some(k) => pick = k,
                        None => {
                            return Err(Error::AmbiguousModes {
                                n,
                                candidates: [best, second]
                                    .iter()
                                    .map(|&k| (dec.eigenvalues[k].re, dec.eigenvalues[k].im))
                                    .collect(),
                            })
                        }
                    }
                }
            }
            if taken.contains(&pick) {
                return Err(Error::AmbiguousModes {
                    n,
                    candidates: vec![(dec.eigenvalues[pick].re, dec.eigenvalues[pick].im)],
                });
            }
            taken.push(pick);
            tr.n_grid.push(n);
            tr.values.push(dec.eigenvalues[pick]);
            tr.indices.push(pick);
        }
    }
    Ok(tracks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeScaling {
    pub track: TrackedMode,
    pub re_fit: ScalingFit,
    pub im_fit: ScalingFit,
}

pub fn scale_tracked(tracks: &[TrackedMode], mu: usize) -> Result<Vec<ModeScaling>> {
    tracks
        .iter()
        .map(|t| {
            Ok(ModeScaling {
                track: t.clone(),
                re_fit: scaling_fit(&t.n_grid, &t.alphas(), mu)?,
                im_fit: scaling_fit(&t.n_grid, &t.betas(), mu)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindblad::{evolve_exact, lindblad_rhs, EvolutionSpec};
    use crate::spin::{build_collective_ops, cat_state, dicke_state, identity};
    use rand::{Rng, SeedableRng};

    fn random_rho(d: usize, seed: u64) -> Array2<C64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = Array2::from_shape_fn((d, d), |_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let rho = g.dot(&linalg::dagger(&g));
        let tr: C64 = rho.diag().sum();
        rho.mapv(|z| z / tr)
    }

    #[test]
    fn dark_state_is_annihilated() {
        let p = ModelParams::new(1, 0.0, 1.0).unwrap();
        let l = build_liouvillian(&p).unwrap();
        assert_eq!(l.dim(), (4, 4));
        let down = dicke_state(&p, -0.5).unwrap();
        let v = ndarray::Array1::from(vectorize(&down.data.view()));
        assert!(l.dot(&v).iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn matches_master_equation_and_preserves_trace() {
        for n in [1, 4, 7] {
            let p = ModelParams::new(n, 2.5, 1.0).unwrap();
            let l = build_liouvillian(&p).unwrap();
            let ops = build_collective_ops(&p).unwrap();
            let d = p.dim();
            let rho = random_rho(d, n as u64);
            let want = lindblad_rhs(&DickeDensityMatrix::unchecked(rho.clone(), p).unwrap(), &ops, &p).unwrap();
            let got = l.dot(&ndarray::Array1::from(vectorize(&rho.view())));
            let got = unvectorize(got.as_slice().unwrap(), d).unwrap();
            assert!(linalg::frobenius(&(got - want)) < 1e-12);
            let id = vectorize(&identity(d).view());
            for c in 0..d * d {
                let s: C64 = (0..d * d).map(|r| id[r].conj() * l[[r, c]]).sum();
                assert!(s.norm() < 1e-10);
            }
        }
    }

    #[test]
    fn size_guard() {
        let p = ModelParams::new(200, 1.0, 1.0).unwrap();
        assert!(matches!(build_liouvillian(&p), Err(Error::SizeGuard(_))));
        let p = ModelParams::new(6, 1.0, 1.0).unwrap();
        assert!(build_liouvillian_with_guard(&p, 10).is_err());
    }

    #[test]
    fn hermitian_basis_is_orthonormal() {
        let d = 4;
        let n = d * d;
        let b = Array2::from_shape_fn((n, n), |(a, p)| {
            hermitian_basis(d, p)
                .iter()
                .fold(ZERO, |acc, &(pos, c)| if pos == a { acc + c } else { acc })
        });
        let g = linalg::dagger(&b).dot(&b);
        assert!(linalg::frobenius(&(g - Array2::<C64>::eye(n))) < 1e-14);
    }

    #[test]
    fn decomposition_axioms_small() {
        for (n, ratio) in [(1, 2.5), (4, 0.5), (6, 2.5), (9, 1.0)] {
            let p = ModelParams::new(n, ratio, 1.0).unwrap();
            let dec = spectral_decompose(&build_liouvillian(&p).unwrap()).unwrap();
            assert!(dec.real_arithmetic);
            let ax = dec.axioms(1e-9);
            assert!(ax.holds(1e-9, 1e-9, 1e-8), "n={n}: {ax:?}");
            assert!(dec.classes.contains(&ModeClass::Stationary));
        }
    }

    #[test]
    fn complex_fallback_agrees() {
        // A non-Hermiticity-preserving perturbation forces the complex path.
        let p = ModelParams::new(3, 1.5, 1.0).unwrap();
        let mut l = build_liouvillian(&p).unwrap();
        l[[0, 0]] += C64::new(0.0, 1e-3);
        let dec = spectral_decompose(&l).unwrap();
        assert!(!dec.real_arithmetic);
        assert!(dec.biorthogonality_residual < 1e-10);
    }

    #[test]
    fn reconstruction_matches_integration() {
        let p = ModelParams::new(10, 2.5, 1.0).unwrap();
        let dec = spectral_decompose(&build_liouvillian(&p).unwrap()).unwrap();
        let rho = cat_state(&p).unwrap();
        let spec = EvolutionSpec::new(10.0, 0.5)
            .with_tolerances(1e-11, 1e-13)
            .with_observables(vec![Observable::mz(), Observable::chi(2, 2)]);
        let exact = evolve_exact(&rho, &p, &spec).unwrap();
        let rec = reconstruct_series(&dec, &rho, &spec.observables, &exact.times).unwrap();
        for o in &spec.observables {
            let (a, b) = (exact.get(*o).unwrap(), rec.get(*o).unwrap());
            let err = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            assert!(err < 1e-6, "{o}: {err:e}");
        }
        // completeness at t = 0
        let ops = build_collective_ops(&p).unwrap();
        let c = dec.modal_coefficients(&rho.data.view(), &ops.sz.view()).unwrap();
        let total: C64 = c.iter().sum();
        assert!((total - rho.expect(&ops.sz)).norm() < 1e-8);
    }

    #[test]
    fn stationary_state_carries_no_rotating_weight() {
        let p = ModelParams::new(6, 0.5, 1.0).unwrap();
        let dec = spectral_decompose(&build_liouvillian(&p).unwrap()).unwrap();
        let k0 = (0..dec.len())
            .min_by(|&a, &b| dec.eigenvalues[a].norm().total_cmp(&dec.eigenvalues[b].norm()))
            .unwrap();
        let mut ss = unvectorize(dec.right.column(k0).as_slice_memory_order().unwrap(), p.dim()).unwrap();
        let tr: C64 = ss.diag().sum();
        ss.mapv_inplace(|z| z / tr);
        let ops = build_collective_ops(&p).unwrap();
        let rec = reconstruct_observable(&dec, &ss.view(), &ops.sz.view(), &[0.0, 5.0, 50.0]).unwrap();
        assert!((rec.values[0] - rec.values[2]).abs() < 1e-10);
        let w = spectral_weights(&dec, &ss.view(), &ops.sz.view()).unwrap();
        assert!(w.iter().all(|m| m.raw < 1e-10));
        // identity observable: only the zero mode contributes
        let rho = cat_state(&p).unwrap();
        let c = dec.modal_coefficients(&rho.data.view(), &identity(p.dim()).view()).unwrap();
        for (k, z) in c.iter().enumerate() {
            if k != k0 {
                assert!(z.norm() < 1e-10);
            }
        }
    }

    #[test]
    fn weights_are_invariant_under_pair_rescaling() {
        let p = ModelParams::new(5, 2.5, 1.0).unwrap();
        let mut dec = spectral_decompose(&build_liouvillian(&p).unwrap()).unwrap();
        let rho = cat_state(&p).unwrap();
        let ops = build_collective_ops(&p).unwrap();
        let before = spectral_weights(&dec, &rho.data.view(), &ops.sz.view()).unwrap();
        let c = C64::new(0.3, -2.0);
        for k in 0..dec.len() {
            dec.right.column_mut(k).mapv_inplace(|z| z * c);
            dec.left.column_mut(k).mapv_inplace(|z| z / c.conj());
        }
        let after = spectral_weights(&dec, &rho.data.view(), &ops.sz.view()).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert_eq!(a.index, b.index);
            assert!((a.weight - b.weight).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_fit_recovers_polynomials() {
        let grid = [10, 20, 30, 40, 50, 60];
        let data: Vec<f64> = grid.iter().map(|&n| 2.0 + 3.0 / n as f64).collect();
        let fit = scaling_fit(&grid, &data, 1).unwrap();
        assert!((fit.coeffs[0] - 2.0).abs() < 1e-12 && (fit.coeffs[1] - 3.0).abs() < 1e-10);
        assert!(fit.residual <= 1e-10);
        for mu in 1..=5 {
            let grid: Vec<u32> = (1..=mu as u32 + 3).map(|k| 8 * k).collect();
            let coeffs: Vec<f64> = (0..=mu).map(|i| 1.5 - 0.7 * i as f64).collect();
            let data: Vec<f64> = grid
                .iter()
                .map(|&n| coeffs.iter().enumerate().map(|(i, a)| a / (n as f64).powi(i as i32)).sum())
                .collect();
            let fit = scaling_fit(&grid, &data, mu).unwrap();
            assert!((fit.a0() - 1.5).abs() < 1e-9, "mu={mu}: {fit:?}");
            assert!(fit.residual < 1e-10);
        }
        assert!(scaling_fit(&grid[..4], &data[..4], 4).is_err());
        assert!(scaling_fit(&[10, 10, 20, 30], &[1.0; 4], 1).is_err());
        assert!(scaling_fit(&grid, &data, 0).is_err());
    }

    fn synthetic_dec(values: Vec<C64>) -> SpectralDecomposition {
        let n = values.len();
        SpectralDecomposition {
            hilbert_dim: 0,
            classes: values.iter().map(|&v| ModeClass::classify(v, 1e-9)).collect(),
            eigenvalues: values,
            right: Array2::zeros((n, n)),
            left: Array2::zeros((n, n)),
            norm: 1.0,
            threshold: 1e-9,
            biorthogonality_residual: 0.0,
            defective_clusters: 0,
            real_arithmetic: true,
        }
    }

    #[test]
    fn tracking_separated_ladders_is_identity() {
        let lad = |n: f64| {
            synthetic_dec(vec![
                C64::new(0.0, 0.0),
                C64::new(-1.0 / n, 1.0),
                C64::new(-3.0 / n, 2.0),
                C64::new(-1.0 / n, -1.0),
            ])
        };
        let (a, b) = (lad(10.0), lad(20.0));
        let t = track_modes(&[(10, &a), (20, &b)], 2, None, None).unwrap();
        assert_eq!(t[0].indices, vec![1, 1]);
        assert_eq!(t[1].indices, vec![2, 2]);
        assert!(track_modes(&[(20, &b), (10, &a)], 2, None, None).is_err());
    }

    #[test]
    fn tracking_collision_is_reported() {
        let a = synthetic_dec(vec![C64::new(-0.1, 1.0)]);
        let b = synthetic_dec(vec![C64::new(-0.05, 1.0), C64::new(-0.05, 1.0)]);
        match track_modes(&[(10, &a), (20, &b)], 1, None, None) {
            Err(Error::AmbiguousModes { n: 20, candidates }) => assert_eq!(candidates.len(), 2),
            other => panic!("{other:?}"),
        }
        // a weight tie-break resolves it
        let w = vec![
            vec![ModeWeight { index: 0, alpha: -0.1, beta: 1.0, raw: 1.0, weight: 1.0 }],
            vec![
                ModeWeight { index: 0, alpha: -0.05, beta: 1.0, raw: 0.1, weight: 0.1 },
                ModeWeight { index: 1, alpha: -0.05, beta: 1.0, raw: 1.0, weight: 1.0 },
            ],
        ];
        let t = track_modes(&[(10, &a), (20, &b)], 1, None, Some(&w)).unwrap();
        assert_eq!(t[0].indices, vec![0, 1]);
    }

    #[test]
    fn fundamental_mode_converges() {
        let decs: Vec<(u32, SpectralDecomposition)> = [8u32, 12, 16, 20]
            .iter()
            .map(|&n| {
                let p = ModelParams::new(n, 2.5, 1.0).unwrap();
                (n, spectral_decompose(&build_liouvillian(&p).unwrap()).unwrap())
            })
            .collect();
        let refs: Vec<(u32, &SpectralDecomposition)> = decs.iter().map(|(n, d)| (*n, d)).collect();
        let t = track_modes(&refs, 3, None, None).unwrap();
        let b = t[0].betas();
        assert!(b.windows(2).all(|w| w[1] > w[0]), "{b:?}");
        let a = t[0].alphas();
        assert!(a.windows(2).all(|w| w[1] > w[0]), "{a:?}");
        assert!((b[3] - (2.5f64 * 2.5 - 1.0).sqrt()).abs() < 0.05);
    }

    #[test]
    fn spectrum_json_shape() {
        let p = ModelParams::new(2, 2.5, 1.0).unwrap();
        let dec = spectral_decompose(&build_liouvillian(&p).unwrap()).unwrap();
        let e = spectrum_entries(&dec, None);
        let js = serde_json::to_value(&e).unwrap();
        assert_eq!(js.as_array().unwrap().len(), 9);
        assert!(js[0].get("weight").is_none());
        assert_eq!(js[0]["class"], "stationary");
    }
}
