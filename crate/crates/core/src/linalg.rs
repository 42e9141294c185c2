//! Dense complex linear algebra on top of LAPACK.
//!
//! All Hermitian eigenproblems in the crate go through [`hermitian_eig`] and
//! [`generalized_eig`]; the generalized problem is reduced to standard form
//! with a Cholesky factor of the mass matrix and solved with divide and
//! conquer. Matrices handed to LAPACK are copied into column-major storage.

use std::os::raw::c_int;

use ndarray::{Array1, Array2, ArrayView1, ShapeBuilder};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = Array2<C64>;
pub type CVec = Array1<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn eye(n: usize) -> CMat {
    Array2::eye(n)
}

pub fn adjoint(a: &CMat) -> CMat {
    a.t().mapv(|z| z.conj())
}

/// Returns `(a + a†) / 2`.
pub fn hermitize(a: &CMat) -> CMat {
    let mut h = a.clone();
    let n = a.nrows();
    for i in 0..n {
        h[[i, i]] = C64::new(a[[i, i]].re, 0.0);
        for j in 0..i {
            let z = (a[[i, j]] + a[[j, i]].conj()) * 0.5;
            h[[i, j]] = z;
            h[[j, i]] = z.conj();
        }
    }
    h
}

pub fn fro_norm(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn vec_norm(x: ArrayView1<C64>) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Quadratic form `x† a y`.
pub fn sesq(x: ArrayView1<C64>, a: &CMat, y: ArrayView1<C64>) -> C64 {
    let ay = a.dot(&y);
    x.iter().zip(ay.iter()).map(|(xi, z)| xi.conj() * z).sum()
}

pub fn inner(x: ArrayView1<C64>, y: ArrayView1<C64>) -> C64 {
    x.iter().zip(y.iter()).map(|(a, b)| a.conj() * b).sum()
}

/// `diag(d) · a · diag(d)†` for a unit-modulus (or arbitrary) diagonal `d`.
pub fn conjugate_by_diagonal(a: &CMat, d: &[C64]) -> CMat {
    let mut out = a.clone();
    for ((i, j), z) in out.indexed_iter_mut() {
        *z = d[i] * *z * d[j].conj();
    }
    out
}

fn fortran_copy(a: &CMat) -> CMat {
    let mut f = Array2::zeros(a.raw_dim().f());
    f.assign(a);
    f
}

fn lapack_ptr(a: &mut CMat) -> *mut lapack_sys::__BindgenComplex<f64> {
    a.as_mut_ptr() as *mut lapack_sys::__BindgenComplex<f64>
}

fn check_info(routine: &'static str, info: c_int) -> Result<()> {
    if info == 0 {
        Ok(())
    } else {
        Err(Error::EigensolveFail { routine, info })
    }
}

/// Spectral decomposition of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianEig {
    /// Ascending eigenvalues.
    pub values: Array1<f64>,
    /// Eigenvectors as columns.
    pub vectors: CMat,
}

/// Solves `a w = λ w` for Hermitian `a`. Only the lower triangle is read.
pub fn hermitian_eig(a: &CMat) -> Result<HermitianEig> {
    let n = a.nrows();
    if n == 0 {
        return Ok(HermitianEig { values: Array1::zeros(0), vectors: Array2::zeros((0, 0)) });
    }
    let mut f = fortran_copy(a);
    let values = heevd_in_place(&mut f)?;
    Ok(HermitianEig { values: Array1::from(values), vectors: f })
}

fn heevd_in_place(f: &mut CMat) -> Result<Vec<f64>> {
    let n = f.nrows() as c_int;
    let mut w = vec![0.0; n as usize];
    let jobz = b'V' as _;
    let uplo = b'L' as _;
    let mut info = 0;
    let query: c_int = -1;
    let mut wq = [C64::new(0.0, 0.0)];
    let mut rq = [0.0f64];
    let mut iq = [0 as c_int];
    unsafe {
        lapack_sys::zheevd_(
            &jobz,
            &uplo,
            &n,
            lapack_ptr(f),
            &n,
            w.as_mut_ptr(),
            wq.as_mut_ptr() as *mut _,
            &query,
            rq.as_mut_ptr(),
            &query,
            iq.as_mut_ptr(),
            &query,
            &mut info,
        );
    }
    check_info("zheevd", info)?;
    let lwork = wq[0].re as c_int;
    let lrwork = rq[0] as c_int;
    let liwork = iq[0];
    let mut work = vec![C64::new(0.0, 0.0); lwork.max(1) as usize];
    let mut rwork = vec![0.0; lrwork.max(1) as usize];
    let mut iwork = vec![0 as c_int; liwork.max(1) as usize];
    unsafe {
        lapack_sys::zheevd_(
            &jobz,
            &uplo,
            &n,
            lapack_ptr(f),
            &n,
            w.as_mut_ptr(),
            work.as_mut_ptr() as *mut _,
            &lwork,
            rwork.as_mut_ptr(),
            &lrwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    check_info("zheevd", info)?;
    Ok(w)
}

/// Lower Cholesky factor `l` with `b = l l†`.
pub fn cholesky(b: &CMat) -> Result<CMat> {
    let n = b.nrows() as c_int;
    let mut f = fortran_copy(b);
    let uplo = b'L' as _;
    let mut info = 0;
    unsafe {
        lapack_sys::zpotrf_(&uplo, &n, lapack_ptr(&mut f), &n, &mut info);
    }
    if info != 0 {
        return Err(Error::NotPositive { lambda_min: f64::NAN });
    }
    for j in 0..f.ncols() {
        for i in 0..j {
            f[[i, j]] = C64::new(0.0, 0.0);
        }
    }
    Ok(f)
}

/// Solves `op(l) x = rhs` for lower-triangular `l`; `adjoint` selects `l†`.
pub fn solve_lower(l: &CMat, rhs: &CMat, adjoint: bool) -> Result<CMat> {
    let n = l.nrows() as c_int;
    let nrhs = rhs.ncols() as c_int;
    let lf = fortran_copy(l);
    let mut x = fortran_copy(rhs);
    let uplo = b'L' as _;
    let trans = if adjoint { b'C' } else { b'N' } as _;
    let diag = b'N' as _;
    let mut info = 0;
    unsafe {
        lapack_sys::ztrtrs_(
            &uplo,
            &trans,
            &diag,
            &n,
            &nrhs,
            lf.as_ptr() as *const _,
            &n,
            lapack_ptr(&mut x),
            &n,
            &mut info,
        );
    }
    check_info("ztrtrs", info)?;
    Ok(x)
}

/// Eigen-decomposition of the Hermitian-definite pencil `(h, m)`.
///
/// `vectors` are `m`-orthonormal: `W† m W = I` and `h W = m W diag(values)`.
#[derive(Debug, Clone)]
pub struct GeneralizedEig {
    pub values: Array1<f64>,
    pub vectors: CMat,
}

impl GeneralizedEig {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Matrix of the operator `f(m⁻¹h)` acting on coefficient vectors:
    /// `W f(Λ) W† m`.
    pub fn operator_function<F: Fn(f64) -> C64>(&self, mass: &CMat, f: F) -> CMat {
        let w = &self.vectors;
        let mut scaled = w.clone();
        for (j, mut col) in scaled.columns_mut().into_iter().enumerate() {
            let s = f(self.values[j]);
            col.mapv_inplace(|z| z * s);
        }
        scaled.dot(&adjoint(w)).dot(mass)
    }

    /// Kernel of the form `m W f(Λ) W† m`.
    pub fn form_function<F: Fn(f64) -> C64>(&self, mass: &CMat, f: F) -> CMat {
        mass.dot(&self.operator_function(mass, f))
    }
}

/// Reverse Cuthill-McKee ordering of the joint sparsity pattern of `a` and `b`.
fn rcm_ordering(a: &CMat, b: &CMat) -> Vec<usize> {
    let n = a.nrows();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && (a[[i, j]] != C64::new(0.0, 0.0) || b[[i, j]] != C64::new(0.0, 0.0))).collect())
        .collect();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        let start = (0..n).filter(|&i| !seen[i]).min_by_key(|&i| adj[i].len()).unwrap_or(0);
        seen[start] = true;
        let mut head = order.len();
        order.push(start);
        while head < order.len() {
            let mut next: Vec<usize> = adj[order[head]].iter().copied().filter(|&j| !seen[j]).collect();
            next.sort_by_key(|&j| adj[j].len());
            for j in next {
                seen[j] = true;
                order.push(j);
            }
            head += 1;
        }
    }
    order.reverse();
    order
}

fn bandwidth(a: &CMat, order: &[usize]) -> usize {
    let n = order.len();
    let mut kd = 0;
    for i in 0..n {
        for j in 0..i {
            if a[[order[i], order[j]]] != C64::new(0.0, 0.0) {
                kd = kd.max(i - j);
            }
        }
    }
    kd
}

fn lower_band(a: &CMat, order: &[usize], kd: usize) -> CMat {
    let n = order.len();
    let mut ab = Array2::zeros((kd + 1, n).f());
    for j in 0..n {
        for i in j..(j + kd + 1).min(n) {
            ab[[i - j, j]] = a[[order[i], order[j]]];
        }
    }
    ab
}

/// Lowest `k` eigenpairs of `h w = λ m w`. Sparse pencils are reordered to
/// a narrow band and solved with the banded LAPACK driver; dense ones fall
/// back to [`generalized_eig`].
pub fn lowest_generalized_eig(h: &CMat, m: &CMat, k: usize) -> Result<GeneralizedEig> {
    let n = h.nrows();
    let k = k.min(n);
    let order = rcm_ordering(h, m);
    let (ka, kb) = (bandwidth(h, &order), bandwidth(m, &order));
    if k == 0 || 4 * ka.max(kb) >= n {
        let full = generalized_eig(h, m)?;
        return Ok(GeneralizedEig {
            values: full.values.slice(ndarray::s![..k]).to_owned(),
            vectors: full.vectors.slice(ndarray::s![.., ..k]).to_owned(),
        });
    }
    // zhbgvx needs ka >= kb
    let ka = ka.max(kb);
    let mut ab = lower_band(h, &order, ka);
    let mut bb = lower_band(m, &order, kb);
    let (nn, ka_c, kb_c) = (n as c_int, ka as c_int, kb as c_int);
    let (ldab, ldbb) = ((ka + 1) as c_int, (kb + 1) as c_int);
    let mut q: CMat = Array2::zeros((n, n).f());
    let mut z: CMat = Array2::zeros((n, k).f());
    let mut w = vec![0.0; n];
    let mut work = vec![C64::new(0.0, 0.0); n];
    let mut rwork = vec![0.0; 7 * n];
    let mut iwork = vec![0 as c_int; 5 * n];
    let mut ifail = vec![0 as c_int; n];
    let (il, iu) = (1 as c_int, k as c_int);
    let (vl, vu, abstol) = (0.0, 0.0, 0.0);
    let mut found: c_int = 0;
    let mut info = 0;
    let (jobz, range, uplo) = (b'V' as _, b'I' as _, b'L' as _);
    unsafe {
        lapack_sys::zhbgvx_(
            &jobz,
            &range,
            &uplo,
            &nn,
            &ka_c,
            &kb_c,
            lapack_ptr(&mut ab),
            &ldab,
            lapack_ptr(&mut bb),
            &ldbb,
            lapack_ptr(&mut q),
            &nn,
            &vl,
            &vu,
            &il,
            &iu,
            &abstol,
            &mut found,
            w.as_mut_ptr(),
            lapack_ptr(&mut z),
            &nn,
            work.as_mut_ptr() as *mut _,
            rwork.as_mut_ptr(),
            iwork.as_mut_ptr(),
            ifail.as_mut_ptr(),
            &mut info,
        );
    }
    check_info("zhbgvx", info)?;
    if found as usize != k {
        return Err(Error::EigensolveFail { routine: "zhbgvx", info: found });
    }
    let mut vectors = Array2::zeros((n, k));
    for (i, &p) in order.iter().enumerate() {
        for j in 0..k {
            vectors[[p, j]] = z[[i, j]];
        }
    }
    Ok(GeneralizedEig { values: Array1::from(w[..k].to_vec()), vectors })
}

/// Solves `h w = λ m w` for Hermitian `h` and Hermitian positive definite `m`.
pub fn generalized_eig(h: &CMat, m: &CMat) -> Result<GeneralizedEig> {
    let n = h.nrows();
    if n == 0 {
        return Ok(GeneralizedEig { values: Array1::zeros(0), vectors: Array2::zeros((0, 0)) });
    }
    let nn = n as c_int;
    let mut lf = fortran_copy(m);
    let uplo = b'L' as _;
    let mut info = 0;
    unsafe {
        lapack_sys::zpotrf_(&uplo, &nn, lapack_ptr(&mut lf), &nn, &mut info);
    }
    if info != 0 {
        return Err(Error::EigensolveFail { routine: "zpotrf", info });
    }
    let mut a = fortran_copy(h);
    let itype: c_int = 1;
    unsafe {
        lapack_sys::zhegst_(&itype, &uplo, &nn, lapack_ptr(&mut a), &nn, lapack_ptr(&mut lf), &nn, &mut info);
    }
    check_info("zhegst", info)?;
    let values = heevd_in_place(&mut a)?;
    // back-transform x = L^{-H} y
    let trans = b'C' as _;
    let diag = b'N' as _;
    unsafe {
        lapack_sys::ztrtrs_(
            &uplo,
            &trans,
            &diag,
            &nn,
            &nn,
            lf.as_ptr() as *const _,
            &nn,
            lapack_ptr(&mut a),
            &nn,
            &mut info,
        );
    }
    check_info("ztrtrs", info)?;
    Ok(GeneralizedEig { values: Array1::from(values), vectors: a })
}

/// Schur decomposition of a normal matrix `u = Z T Z†`; for normal input `T` is
/// diagonal to rounding, so the returned pairs are eigenvalues with an
/// orthonormal eigenbasis.
pub fn normal_eig(u: &CMat) -> Result<(Vec<C64>, CMat)> {
    let n = u.nrows();
    if n == 0 {
        return Ok((Vec::new(), Array2::zeros((0, 0))));
    }
    let nn = n as c_int;
    let mut a = fortran_copy(u);
    let mut vs: CMat = Array2::zeros((n, n).f());
    let mut w = vec![C64::new(0.0, 0.0); n];
    let jobvs = b'V' as _;
    let sort = b'N' as _;
    let mut sdim: c_int = 0;
    let mut rwork = vec![0.0; n];
    let mut bwork = vec![0 as c_int; n];
    let mut info = 0;
    let query: c_int = -1;
    let mut wq = [C64::new(0.0, 0.0)];
    unsafe {
        lapack_sys::zgees_(
            &jobvs,
            &sort,
            None,
            &nn,
            lapack_ptr(&mut a),
            &nn,
            &mut sdim,
            w.as_mut_ptr() as *mut _,
            lapack_ptr(&mut vs),
            &nn,
            wq.as_mut_ptr() as *mut _,
            &query,
            rwork.as_mut_ptr(),
            bwork.as_mut_ptr(),
            &mut info,
        );
    }
    check_info("zgees", info)?;
    let lwork = (wq[0].re as c_int).max(1);
    let mut work = vec![C64::new(0.0, 0.0); lwork as usize];
    unsafe {
        lapack_sys::zgees_(
            &jobvs,
            &sort,
            None,
            &nn,
            lapack_ptr(&mut a),
            &nn,
            &mut sdim,
            w.as_mut_ptr() as *mut _,
            lapack_ptr(&mut vs),
            &nn,
            work.as_mut_ptr() as *mut _,
            &lwork,
            rwork.as_mut_ptr(),
            bwork.as_mut_ptr(),
            &mut info,
        );
    }
    check_info("zgees", info)?;
    Ok((w, vs))
}

/// Largest singular value.
pub fn spectral_norm(a: &CMat) -> Result<f64> {
    if a.is_empty() {
        return Ok(0.0);
    }
    let gram = adjoint(a).dot(a);
    let eig = hermitian_eig(&hermitize(&gram))?;
    Ok(eig.values.iter().cloned().fold(0.0, f64::max).max(0.0).sqrt())
}

/// Inverse of a Hermitian positive definite matrix via its Cholesky factor.
pub fn hpd_inverse(b: &CMat) -> Result<CMat> {
    let l = cholesky(b)?;
    let linv = solve_lower(&l, &eye(b.nrows()), false)?;
    Ok(adjoint(&linv).dot(&linv))
}
