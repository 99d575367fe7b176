//! Banded operator algebra for the Dicke ladder, a few dense helpers, and
//! thin safe wrappers over the LAPACK/BLAS routines we need.

use ndarray::{Array2, ArrayView2, ShapeBuilder};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub const I: C64 = C64::new(0.0, 1.0);
pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Square matrix stored by diagonals: `diag(off)[r] = M[r][r + off]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Banded {
    dim: usize,
    width: usize,
    // diags[off + width][r], entries with r + off outside [0, dim) are zero.
    diags: Vec<Vec<C64>>,
}

impl Banded {
    pub fn zeros(dim: usize, width: usize) -> Self {
        Self {
            dim,
            width,
            diags: vec![vec![ZERO; dim]; 2 * width + 1],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        let off = c as isize - r as isize;
        if off.unsigned_abs() > self.width {
            return ZERO;
        }
        self.diags[(off + self.width as isize) as usize][r]
    }

    pub fn set(&mut self, r: usize, c: usize, v: C64) {
        let off = c as isize - r as isize;
        assert!(off.unsigned_abs() <= self.width, "entry outside band");
        self.diags[(off + self.width as isize) as usize][r] = v;
    }

    /// Iterate over stored entries `(row, col, value)` inside the matrix.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        let w = self.width as isize;
        (0..self.diags.len()).flat_map(move |di| {
            let off = di as isize - w;
            (0..self.dim).filter_map(move |r| {
                let c = r as isize + off;
                (c >= 0 && (c as usize) < self.dim).then(|| (r, c as usize, self.diags[di][r]))
            })
        })
    }

    pub fn mul(&self, other: &Banded) -> Banded {
        assert_eq!(self.dim, other.dim);
        let mut out = Banded::zeros(self.dim, self.width + other.width);
        for (r, k, a) in self.entries() {
            if a == ZERO {
                continue;
            }
            let lo = k.saturating_sub(other.width);
            let hi = (k + other.width).min(self.dim - 1);
            for c in lo..=hi {
                let b = other.get(k, c);
                if b != ZERO {
                    let v = out.get(r, c) + a * b;
                    out.set(r, c, v);
                }
            }
        }
        out
    }

    pub fn add_scaled(&self, other: &Banded, s: C64) -> Banded {
        assert_eq!(self.dim, other.dim);
        let w = self.width.max(other.width);
        let mut out = Banded::zeros(self.dim, w);
        for (r, c, v) in self.entries() {
            out.set(r, c, out.get(r, c) + v);
        }
        for (r, c, v) in other.entries() {
            out.set(r, c, out.get(r, c) + s * v);
        }
        out
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut m = Array2::zeros((self.dim, self.dim));
        for (r, c, v) in self.entries() {
            m[[r, c]] = v;
        }
        m
    }

    /// tr(rho * self).
    pub fn trace_with(&self, rho: &ArrayView2<C64>) -> C64 {
        self.entries().map(|(r, c, v)| v * rho[[c, r]]).sum()
    }
}

pub fn dagger(m: &Array2<C64>) -> Array2<C64> {
    m.t().mapv(|z| z.conj())
}

pub fn frobenius(m: &Array2<C64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn matmul(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (n, k) = a.dim();
    let (k2, m) = b.dim();
    assert_eq!(k, k2);
    let mut out = Array2::<C64>::zeros((n, m));
    for i in 0..n {
        for p in 0..k {
            let aip = a[[i, p]];
            if aip == ZERO {
                continue;
            }
            for j in 0..m {
                out[[i, j]] += aip * b[[p, j]];
            }
        }
    }
    out
}

pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            if aij == ZERO {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

/// Result of a general complex eigen-decomposition. Column `k` of `left`
/// and `right` pairs with `values[k]`; both are unit 2-norm as returned by
/// LAPACK (no biorthogonal scaling applied).
pub struct RawEigen {
    pub values: Vec<C64>,
    pub left: Array2<C64>,
    pub right: Array2<C64>,
}

/// Dense non-Hermitian eigenproblem with left and right eigenvectors (`zgeev`).
/// `a` is consumed; its layout is normalised to column-major internally.
pub fn eig_general(a: Array2<C64>) -> Result<RawEigen> {
    blas_self_check()?;
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    let mut a = to_fortran(a);
    let nn = n as i32;
    let mut w = vec![ZERO; n];
    let mut vl = Array2::<C64>::zeros((n, n).f());
    let mut vr = Array2::<C64>::zeros((n, n).f());
    let mut rwork = vec![0.0; 2 * n.max(1)];
    let mut info = 0i32;
    let mut query = [ZERO];
    let lwork_query = -1i32;
    let jobv = b'V' as std::ffi::c_char;
    // SAFETY: all buffers are sized per the zgeev contract; column-major
    // storage is guaranteed by `to_fortran` and the `.f()` allocations.
    unsafe {
        lapack_sys::zgeev_(
            &jobv,
            &jobv,
            &nn,
            fortran_ptr(&mut a),
            &nn,
            w.as_mut_ptr().cast(),
            fortran_ptr(&mut vl),
            &nn,
            fortran_ptr(&mut vr),
            &nn,
            query.as_mut_ptr().cast(),
            &lwork_query,
            rwork.as_mut_ptr(),
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Eigensolver(format!("zgeev workspace query failed, info = {info}")));
    }
    let lwork = (query[0].re as i32).max(2 * nn);
    let mut work = vec![ZERO; lwork as usize];
    unsafe {
        lapack_sys::zgeev_(
            &jobv,
            &jobv,
            &nn,
            fortran_ptr(&mut a),
            &nn,
            w.as_mut_ptr().cast(),
            fortran_ptr(&mut vl),
            &nn,
            fortran_ptr(&mut vr),
            &nn,
            work.as_mut_ptr().cast(),
            &lwork,
            rwork.as_mut_ptr(),
            &mut info,
        );
    }
    if info > 0 {
        return Err(Error::Eigensolver(format!(
            "QR iteration failed to converge ({info} eigenvalues unresolved)"
        )));
    }
    if info < 0 {
        return Err(Error::Eigensolver(format!("zgeev argument {} invalid", -info)));
    }
    Ok(RawEigen {
        values: w,
        left: vl,
        right: vr,
    })
}

/// Eigenvalues of a Hermitian matrix in ascending order (`zheev`).
pub fn eigvals_hermitian(a: &Array2<C64>) -> Result<Vec<f64>> {
    let n = a.nrows();
    let mut a = to_fortran(a.clone());
    let nn = n as i32;
    let mut w = vec![0.0; n];
    let mut rwork = vec![0.0; (3 * n).saturating_sub(2).max(1)];
    let mut info = 0;
    let lwork = (2 * n).max(1) as i32 * 32;
    let mut work = vec![ZERO; lwork as usize];
    let jobz = b'N' as std::ffi::c_char;
    let uplo = b'U' as std::ffi::c_char;
    // SAFETY: buffers sized per the zheev contract, column-major input.
    unsafe {
        lapack_sys::zheev_(
            &jobz,
            &uplo,
            &nn,
            fortran_ptr(&mut a),
            &nn,
            w.as_mut_ptr(),
            work.as_mut_ptr().cast(),
            &lwork,
            rwork.as_mut_ptr(),
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Eigensolver(format!("zheev failed, info = {info}")));
    }
    Ok(w)
}

/// Solve `a x = b` for square `a` (`zgesv`). Returns `x`.
pub fn solve(a: &Array2<C64>, b: &Array2<C64>) -> Result<Array2<C64>> {
    let n = a.nrows();
    let nrhs = b.ncols();
    let mut af = to_fortran(a.clone());
    let mut bf = to_fortran(b.clone());
    let mut ipiv = vec![0i32; n];
    let mut info = 0;
    // SAFETY: column-major buffers of the documented sizes.
    unsafe {
        lapack_sys::zgesv_(
            &(n as i32),
            &(nrhs as i32),
            fortran_ptr(&mut af),
            &(n as i32),
            ipiv.as_mut_ptr(),
            fortran_ptr(&mut bf),
            &(n as i32),
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Eigensolver(format!("singular system in zgesv, info = {info}")));
    }
    Ok(bf)
}

/// `a^H b` via BLAS `zgemm`; both operands are taken column-major.
pub fn adjoint_times(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let a = to_fortran(a.clone());
    let b = to_fortran(b.clone());
    let (k, m) = a.dim();
    let (k2, n) = b.dim();
    assert_eq!(k, k2);
    let mut c = Array2::<C64>::zeros((m, n).f());
    let alpha = ONE;
    let beta = ZERO;
    // SAFETY: column-major operands with leading dimensions equal to row counts.
    unsafe {
        cblas_sys::cblas_zgemm(
            cblas_sys::CBLAS_LAYOUT::CblasColMajor,
            cblas_sys::CBLAS_TRANSPOSE::CblasConjTrans,
            cblas_sys::CBLAS_TRANSPOSE::CblasNoTrans,
            m as i32,
            n as i32,
            k as i32,
            (&alpha as *const C64).cast(),
            a.as_ptr().cast(),
            k as i32,
            b.as_ptr().cast(),
            k as i32,
            (&beta as *const C64).cast(),
            c.as_mut_ptr().cast(),
            m as i32,
        );
    }
    c
}

/// One-off consistency check of the linked BLAS on a product large enough
/// to reach its blocked kernels. Some dynamic-arch OpenBLAS builds pick
/// faulty kernels on certain CPUs; `OPENBLAS_CORETYPE=Haswell` avoids them.
pub fn blas_self_check() -> Result<()> {
    static OK: std::sync::OnceLock<std::result::Result<(), String>> = std::sync::OnceLock::new();
    OK.get_or_init(|| {
        let n = 288;
        let mut s = 0x9e37_79b9_7f4a_7c15u64;
        let mut next = || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let a: Vec<f64> = (0..n * n).map(|_| next()).collect();
        let b: Vec<f64> = (0..n * n).map(|_| next()).collect();
        let c = real_transpose_times(&a, &b, n, n, n);
        let mut worst: f64 = 0.0;
        for j in (0..n).step_by(7) {
            for i in (0..n).step_by(5) {
                let want: f64 = (0..n).map(|k| a[k + i * n] * b[k + j * n]).sum();
                worst = worst.max((want - c[i + j * n]).abs());
            }
        }
        let za = Array2::from_shape_fn((n, n).f(), |(r, c)| C64::new(a[r + c * n], b[c + r * n]));
        let zc = adjoint_times(&za, &za);
        for j in (0..n).step_by(11) {
            for i in (0..n).step_by(3) {
                let want: C64 = (0..n).map(|k| za[[k, i]].conj() * za[[k, j]]).sum();
                worst = worst.max((want - zc[[i, j]]).norm());
            }
        }
        if worst > 1e-10 {
            Err(format!(
                "the linked BLAS returns wrong matrix products (error {worst:.3e}); \
                 set OPENBLAS_CORETYPE=Haswell (or another safe core type) and rerun"
            ))
        } else {
            Ok(())
        }
    })
    .clone()
    .map_err(Error::Eigensolver)
}

/// Real eigen-decomposition in LAPACK's packed layout (`dgeev`). A complex
/// pair `λ, λ̄` occupies columns `k, k+1` with the vector `v[:,k] ± i v[:,k+1]`.
pub struct RealEigen {
    pub values: Vec<C64>,
    /// Column-major `n × n`.
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub n: usize,
}

impl RealEigen {
    /// Column `k` of the left (`left = true`) or right eigenvectors as a complex vector.
    pub fn vector(&self, k: usize, left: bool) -> Vec<C64> {
        let v = if left { &self.left } else { &self.right };
        let n = self.n;
        let col = |j: usize| &v[j * n..(j + 1) * n];
        let im = self.values[k].im;
        if im == 0.0 {
            col(k).iter().map(|&x| C64::new(x, 0.0)).collect()
        } else if im > 0.0 {
            col(k).iter().zip(col(k + 1)).map(|(&a, &b)| C64::new(a, b)).collect()
        } else {
            col(k - 1).iter().zip(col(k)).map(|(&a, &b)| C64::new(a, -b)).collect()
        }
    }
}

/// Dense real non-symmetric eigenproblem with left and right vectors.
/// `a` is column-major `n × n` and is overwritten.
pub fn eig_real(mut a: Vec<f64>, n: usize) -> Result<RealEigen> {
    blas_self_check()?;
    if a.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            got: a.len(),
        });
    }
    let nn = n as i32;
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    let mut vl = vec![0.0; n * n];
    let mut vr = vec![0.0; n * n];
    let jobv = b'V' as std::ffi::c_char;
    let mut info = 0i32;
    let mut query = [0.0f64];
    let mut call = |work: &mut [f64], lwork: i32, info: &mut i32| {
        // SAFETY: buffers sized per the dgeev contract, column-major.
        unsafe {
            lapack_sys::dgeev_(
                &jobv,
                &jobv,
                &nn,
                a.as_mut_ptr(),
                &nn,
                wr.as_mut_ptr(),
                wi.as_mut_ptr(),
                vl.as_mut_ptr(),
                &nn,
                vr.as_mut_ptr(),
                &nn,
                work.as_mut_ptr(),
                &lwork,
                info,
            );
        }
    };
    call(&mut query, -1, &mut info);
    if info != 0 {
        return Err(Error::Eigensolver(format!("dgeev workspace query failed, info = {info}")));
    }
    let lwork = (query[0] as i32).max(4 * nn).max(1);
    let mut work = vec![0.0; lwork as usize];
    call(&mut work, lwork, &mut info);
    if info > 0 {
        return Err(Error::Eigensolver(format!(
            "QR iteration failed to converge ({info} eigenvalues unresolved)"
        )));
    }
    if info < 0 {
        return Err(Error::Eigensolver(format!("dgeev argument {} invalid", -info)));
    }
    Ok(RealEigen {
        values: wr.iter().zip(&wi).map(|(&r, &i)| C64::new(r, i)).collect(),
        left: vl,
        right: vr,
        n,
    })
}

/// `aᵀ b` for column-major `k × m` and `k × n` operands (`dgemm`).
pub fn real_transpose_times(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    assert!(a.len() == k * m && b.len() == k * n);
    let mut c = vec![0.0; m * n];
    // SAFETY: column-major operands with leading dimensions equal to row counts.
    unsafe {
        cblas_sys::cblas_dgemm(
            cblas_sys::CBLAS_LAYOUT::CblasColMajor,
            cblas_sys::CBLAS_TRANSPOSE::CblasTrans,
            cblas_sys::CBLAS_TRANSPOSE::CblasNoTrans,
            m as i32,
            n as i32,
            k as i32,
            1.0,
            a.as_ptr(),
            k as i32,
            b.as_ptr(),
            k as i32,
            0.0,
            c.as_mut_ptr(),
            m as i32,
        );
    }
    c
}

fn to_fortran(a: Array2<C64>) -> Array2<C64> {
    if a.t().is_standard_layout() {
        a
    } else {
        let mut f = Array2::zeros(a.raw_dim().f());
        f.assign(&a);
        f
    }
}

fn fortran_ptr(a: &mut Array2<C64>) -> *mut lapack_sys::__BindgenComplex<f64> {
    debug_assert!(a.t().is_standard_layout());
    a.as_mut_ptr().cast()
}
