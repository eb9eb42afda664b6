//! Dense linear-algebra helpers shared by the numerical modules.
//!
//! Small complex work (resolvent solves, SVDs of transfer matrices and
//! characteristic matrices) goes through nalgebra; the large nonsymmetric
//! eigenvalue problems coming out of the collocation discretizations are
//! handed to faer.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type RMat = DMatrix<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const J: C64 = C64 { re: 0.0, im: 1.0 };

pub fn to_complex(m: &RMat) -> CMat {
    m.map(|x| C64::new(x, 0.0))
}

/// Solves `m x = rhs` by LU with partial pivoting. A pivot ratio below
/// `1e-14` is reported as `None`.
pub fn lu_solve(m: &CMat, rhs: &CMat) -> Option<CMat> {
    let lu = m.clone().lu();
    let u = lu.u();
    let mut pmax: f64 = 0.0;
    let mut pmin = f64::INFINITY;
    for i in 0..u.nrows().min(u.ncols()) {
        let p = u[(i, i)].norm();
        pmax = pmax.max(p);
        pmin = pmin.min(p);
    }
    if u.nrows() > 0 && !(pmin > 1e-14 * pmax.max(f64::MIN_POSITIVE)) {
        return None;
    }
    let x = lu.solve(rhs)?;
    if x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Some(x)
    } else {
        None
    }
}

pub fn lu_solve_vec(m: &CMat, rhs: &CVec) -> Option<CVec> {
    let x = lu_solve(m, &CMat::from_column_slice(rhs.len(), 1, rhs.as_slice()))?;
    Some(x.column(0).into_owned())
}

/// Full SVD `m = U diag(s) V^*`, singular values in descending order.
pub struct Svd {
    pub u: CMat,
    pub s: Vec<f64>,
    pub v: CMat,
}

pub fn svd(m: &CMat) -> Svd {
    let (r, c) = m.shape();
    let k = r.min(c);
    if k == 0 {
        return Svd {
            u: CMat::zeros(r, 0),
            s: Vec::new(),
            v: CMat::zeros(c, 0),
        };
    }
    let dec = m.clone().svd(true, true);
    let u = dec.u.expect("requested U");
    let v_t = dec.v_t.expect("requested V^*");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| dec.singular_values[b].total_cmp(&dec.singular_values[a]));
    let mut su = CMat::zeros(r, k);
    let mut sv = CMat::zeros(c, k);
    let mut s = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        s.push(dec.singular_values[src]);
        su.set_column(dst, &u.column(src));
        let vrow = v_t.row(src).adjoint();
        sv.set_column(dst, &vrow);
    }
    Svd { u: su, s, v: sv }
}

/// Smallest singular value of a square matrix with its left and right
/// singular vectors.
pub fn smallest_singular(m: &CMat) -> (f64, CVec, CVec) {
    let d = svd(m);
    let k = d.s.len() - 1;
    (d.s[k], d.u.column(k).into_owned(), d.v.column(k).into_owned())
}

pub fn spectral_norm(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    svd(m).s[0]
}

pub fn real_spectral_norm(m: &RMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// All eigenvalues of a dense real matrix.
pub fn eigenvalues(m: &RMat) -> Result<Vec<C64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let f = faer::Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)]);
    let ev = f
        .eigenvalues()
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    Ok(ev.into_iter().map(|z| C64::new(z.re, z.im)).collect())
}

/// Least-squares solve of an overdetermined real system via SVD.
pub fn lstsq(a: &RMat, b: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    svd.solve(b, 1e-14 * smax.max(f64::MIN_POSITIVE)).ok()
}

/// `Re(z)` elementwise.
pub fn re(m: &CMat) -> RMat {
    m.map(|z| z.re)
}
