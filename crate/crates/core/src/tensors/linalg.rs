//! Matrix-level helpers on `nalgebra` complex matrices.

use nalgebra::{DMatrix, Schur, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{c, C64, ONE, ZERO};
use crate::error::{Error, Result};

pub type CMat = DMatrix<C64>;

/// Relative singular-value cutoff used for ranks and supports.
pub const RANK_TOL: f64 = 1e-9;
pub const HERMITIAN_TOL: f64 = 1e-10;

pub fn gaussian_c<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    c(re, im) / 2f64.sqrt()
}

pub fn random_matrix<R: Rng + ?Sized>(r: usize, cc: usize, rng: &mut R) -> CMat {
    CMat::from_fn(r, cc, |_, _| gaussian_c(rng))
}

/// Haar-random unitary via QR with the diagonal phases of R removed.
pub fn random_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMat {
    let g = random_matrix(n, n, rng);
    let qr = g.qr();
    let (mut q, r) = qr.unpack();
    for j in 0..n {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        for i in 0..n {
            q[(i, j)] *= ph;
        }
    }
    q
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn kron_all(ms: &[CMat]) -> CMat {
    ms.iter().fold(CMat::identity(1, 1), |acc, m| acc.kronecker(m))
}

/// `m = U·diag(s)·V†` with `s` descending and `V` square (all right vectors).
pub fn svd_full(m: &CMat) -> Result<(CMat, Vec<f64>, CMat)> {
    let (r, cc) = m.shape();
    let padded;
    let work = if r < cc {
        padded = {
            let mut p = CMat::zeros(cc, cc);
            p.view_mut((0, 0), (r, cc)).copy_from(m);
            p
        };
        &padded
    } else {
        m
    };
    let mut svd = work
        .clone()
        .try_svd(true, true, 1e-15, 10_000)
        .ok_or_else(|| Error::Factorization("svd did not converge".into()))?;
    svd.sort_by_singular_values();
    let u = svd.u.ok_or_else(|| Error::Factorization("svd lost U".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::Factorization("svd lost V".into()))?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.truncate(r.min(cc));
    let u = if r < cc { u.view((0, 0), (r, r)).into_owned() } else { u };
    Ok((u, s, vt.adjoint()))
}

pub fn rank_of(s: &[f64], rel: f64) -> usize {
    let smax = s.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > rel * smax).count()
}

pub fn rank(m: &CMat, rel: f64) -> Result<usize> {
    let (_, s, _) = svd_full(m)?;
    Ok(rank_of(&s, rel))
}

/// Orthonormal basis (as columns) of the kernel of `m`.
pub fn nullspace(m: &CMat, rel: f64) -> Result<CMat> {
    let (_, s, v) = svd_full(m)?;
    let n = m.ncols();
    let smax = s.first().copied().unwrap_or(0.0);
    let k = if smax == 0.0 { 0 } else { s.iter().filter(|&&x| x > rel * smax).count() };
    Ok(v.columns(k, n - k).into_owned())
}

/// Orthonormal basis of the column span of `m`.
pub fn column_span(m: &CMat, rel: f64) -> Result<CMat> {
    let (u, s, _) = svd_full(m)?;
    let k = rank_of(&s, rel);
    Ok(u.columns(0, k).into_owned())
}

pub fn projector(cols: &CMat) -> CMat {
    cols * cols.adjoint()
}

/// Returns (V, Q, rank) with m = V·Q, Q = (m†m)^{1/2} and V a partial
/// isometry supported on range(Q).
pub fn polar(m: &CMat, rel: f64) -> Result<(CMat, CMat, usize)> {
    let (u, s, v) = svd_full(m)?;
    let k = rank_of(&s, rel);
    let n = m.ncols();
    let mut q = CMat::zeros(n, n);
    let mut vp = CMat::zeros(m.nrows(), n);
    for j in 0..s.len().min(n) {
        let vj = v.column(j);
        q += vj * vj.adjoint() * c(s[j], 0.0);
        if j < k {
            vp += u.column(j) * vj.adjoint();
        }
    }
    Ok((vp, q, k))
}

pub fn pinv(m: &CMat, rel: f64) -> Result<CMat> {
    let (u, s, v) = svd_full(m)?;
    let k = rank_of(&s, rel);
    let mut p = CMat::zeros(m.ncols(), m.nrows());
    for j in 0..k {
        p += v.column(j) * u.column(j).adjoint() * c(1.0 / s[j], 0.0);
    }
    Ok(p)
}

pub fn hermitian_residual(m: &CMat) -> f64 {
    (m - m.adjoint()).norm()
}

/// Eigenvalues (descending) and orthonormal eigenvectors of a Hermitian matrix.
pub fn eigh(m: &CMat, tol: f64) -> Result<(Vec<f64>, CMat)> {
    let res = hermitian_residual(m);
    if res > tol * m.norm().max(1.0) {
        return Err(Error::NotHermitian(res));
    }
    let h = (m + m.adjoint()) * c(0.5, 0.0);
    let e = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..e.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| e.eigenvalues[b].partial_cmp(&e.eigenvalues[a]).unwrap());
    let vals = order.iter().map(|&i| e.eigenvalues[i]).collect();
    let n = m.nrows();
    let vecs = CMat::from_fn(n, n, |i, j| e.eigenvectors[(i, order[j])]);
    Ok((vals, vecs))
}

/// Square root of a positive semidefinite matrix; negative rounding noise is clipped.
pub fn psd_sqrt(m: &CMat) -> Result<CMat> {
    let (vals, vecs) = eigh(m, HERMITIAN_TOL)?;
    let d = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
        vals.len(),
        vals.iter().map(|&x| c(x.max(0.0).sqrt(), 0.0)),
    ));
    Ok(&vecs * d * vecs.adjoint())
}

/// Eigenvalues of a general square matrix through the complex Schur form.
pub fn eigvals(m: &CMat) -> Result<Vec<C64>> {
    let s = Schur::try_new(m.clone(), 1e-15, 100_000)
        .ok_or_else(|| Error::Factorization("schur did not converge".into()))?;
    let (_, t) = s.unpack();
    Ok((0..t.nrows()).map(|i| t[(i, i)]).collect())
}

/// Least-squares `s` minimizing ‖a − s·b‖, plus the relative residual
/// ‖a − s·b‖/‖a‖ (zero when both vanish).
pub fn fit_scale(a: &[C64], b: &[C64]) -> (C64, f64) {
    let bb: f64 = b.iter().map(|z| z.norm_sqr()).sum();
    let aa: f64 = a.iter().map(|z| z.norm_sqr()).sum();
    if bb == 0.0 {
        return (ZERO, if aa == 0.0 { 0.0 } else { 1.0 });
    }
    let s: C64 = b.iter().zip(a).map(|(x, y)| x.conj() * y).sum::<C64>() / bb;
    let r: f64 = a.iter().zip(b).map(|(x, y)| (x - s * y).norm_sqr()).sum::<f64>().sqrt();
    (s, if aa == 0.0 { r } else { r / aa.sqrt() })
}

pub fn fit_scale_mat(a: &CMat, b: &CMat) -> (C64, f64) {
    fit_scale(a.as_slice(), b.as_slice())
}

pub fn unitarity_residual(m: &CMat) -> f64 {
    if m.nrows() != m.ncols() {
        return f64::INFINITY;
    }
    (m.adjoint() * m - CMat::identity(m.nrows(), m.ncols())).norm()
}

/// |⟨a|b⟩|² / (‖a‖²‖b‖²), the overlap fidelity of two unnormalized vectors.
pub fn overlap_fidelity(a: &[C64], b: &[C64]) -> f64 {
    let ab: C64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    let aa: f64 = a.iter().map(|z| z.norm_sqr()).sum();
    let bb: f64 = b.iter().map(|z| z.norm_sqr()).sum();
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (ab.norm_sqr() / (aa * bb)).min(1.0)
}

/// Overlap ⟨P_a|P_b⟩ of the orthogonal projectors onto two column spans,
/// normalized so that 1 means the first span lies inside the second.
pub fn span_containment(inner: &CMat, outer: &CMat) -> f64 {
    if inner.ncols() == 0 {
        return 1.0;
    }
    let pi = projector(inner);
    let po = projector(outer);
    (pi.adjoint() * po).trace().re / inner.ncols() as f64
}
