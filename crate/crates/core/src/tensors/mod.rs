//! Dense complex tensors with named legs.
//!
//! Data is stored row-major over `shape`. Every contraction goes through leg
//! names; positional indexing only exists for element access.

pub mod linalg;

use std::collections::HashSet;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use linalg::CMat;

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TensorJson", into = "TensorJson")]
pub struct DenseTensor {
    legs: Vec<String>,
    shape: Vec<usize>,
    data: Vec<C64>,
}

/// Wire format: `{"legs": [...], "shape": [...], "data": [[re, im], ...]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorJson {
    pub legs: Vec<String>,
    pub shape: Vec<usize>,
    pub data: Vec<[f64; 2]>,
}

impl TryFrom<TensorJson> for DenseTensor {
    type Error = Error;
    fn try_from(j: TensorJson) -> Result<Self> {
        let data = j.data.iter().map(|p| c(p[0], p[1])).collect();
        DenseTensor::new(j.legs, j.shape, data)
    }
}

impl From<DenseTensor> for TensorJson {
    fn from(t: DenseTensor) -> Self {
        TensorJson {
            legs: t.legs,
            shape: t.shape,
            data: t.data.iter().map(|z| [z.re, z.im]).collect(),
        }
    }
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * shape[k + 1];
    }
    s
}

impl DenseTensor {
    pub fn new<S: Into<String>>(legs: Vec<S>, shape: Vec<usize>, data: Vec<C64>) -> Result<Self> {
        let legs: Vec<String> = legs.into_iter().map(Into::into).collect();
        if legs.len() != shape.len() {
            return Err(Error::InvalidTensor(format!(
                "{} legs but {} dimensions",
                legs.len(),
                shape.len()
            )));
        }
        if shape.contains(&0) {
            return Err(Error::InvalidTensor("zero leg dimension".into()));
        }
        let mut seen = HashSet::new();
        for l in &legs {
            if !seen.insert(l.as_str()) {
                return Err(Error::InvalidTensor(format!("duplicate leg `{l}`")));
            }
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape holds {n} entries, data has {}",
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidTensor("non-finite entry".into()));
        }
        Ok(DenseTensor { legs, shape, data })
    }

    pub fn zeros(legs: &[&str], shape: &[usize]) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(legs.to_vec(), shape.to_vec(), vec![ZERO; n])
    }

    pub fn from_fn(legs: &[&str], shape: &[usize], mut f: impl FnMut(&[usize]) -> C64) -> Result<Self> {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..n {
            data.push(f(&idx));
            for k in (0..shape.len()).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Self::new(legs.to_vec(), shape.to_vec(), data)
    }

    pub fn scalar(z: C64) -> Self {
        DenseTensor { legs: vec![], shape: vec![], data: vec![z] }
    }

    /// Tensor from a matrix, rows split over `rows` and columns over `cols`.
    pub fn from_matrix(m: &CMat, rows: &[(&str, usize)], cols: &[(&str, usize)]) -> Result<Self> {
        let r: usize = rows.iter().map(|x| x.1).product();
        let cdim: usize = cols.iter().map(|x| x.1).product();
        if m.nrows() != r || m.ncols() != cdim {
            return Err(Error::DimensionMismatch(format!(
                "matrix {}x{} vs legs {}x{}",
                m.nrows(),
                m.ncols(),
                r,
                cdim
            )));
        }
        let mut data = Vec::with_capacity(r * cdim);
        for i in 0..r {
            for j in 0..cdim {
                data.push(m[(i, j)]);
            }
        }
        let legs: Vec<&str> = rows.iter().chain(cols).map(|x| x.0).collect();
        let shape: Vec<usize> = rows.iter().chain(cols).map(|x| x.1).collect();
        Self::new(legs, shape, data)
    }

    pub fn from_vector(v: &[C64], legs: &[(&str, usize)]) -> Result<Self> {
        let names: Vec<&str> = legs.iter().map(|x| x.0).collect();
        let shape: Vec<usize> = legs.iter().map(|x| x.1).collect();
        Self::new(names, shape, v.to_vec())
    }

    pub fn legs(&self) -> &[String] {
        &self.legs
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn rank(&self) -> usize {
        self.legs.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn has_leg(&self, leg: &str) -> bool {
        self.legs.iter().any(|l| l == leg)
    }

    pub fn axis(&self, leg: &str) -> Result<usize> {
        self.legs
            .iter()
            .position(|l| l == leg)
            .ok_or_else(|| Error::UnknownLeg(leg.to_string()))
    }

    pub fn dim(&self, leg: &str) -> Result<usize> {
        Ok(self.shape[self.axis(leg)?])
    }

    pub fn get(&self, idx: &[usize]) -> C64 {
        let s = row_major_strides(&self.shape);
        self.data[idx.iter().zip(&s).map(|(i, s)| i * s).sum::<usize>()]
    }

    /// Element lookup by leg name, independent of the stored leg order.
    pub fn at(&self, idx: &[(&str, usize)]) -> Result<C64> {
        let s = row_major_strides(&self.shape);
        let mut off = 0;
        if idx.len() != self.rank() {
            return Err(Error::DimensionMismatch("index does not name every leg".into()));
        }
        for (leg, i) in idx {
            let a = self.axis(leg)?;
            off += i * s[a];
        }
        Ok(self.data[off])
    }

    fn permute_axes(&self, perm: &[usize]) -> Self {
        let old = row_major_strides(&self.shape);
        let shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let legs: Vec<String> = perm.iter().map(|&p| self.legs[p].clone()).collect();
        let step: Vec<usize> = perm.iter().map(|&p| old[p]).collect();
        let n = self.data.len();
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        let mut off = 0usize;
        for _ in 0..n {
            data.push(self.data[off]);
            for k in (0..shape.len()).rev() {
                idx[k] += 1;
                off += step[k];
                if idx[k] < shape[k] {
                    break;
                }
                off -= step[k] * shape[k];
                idx[k] = 0;
            }
        }
        DenseTensor { legs, shape, data }
    }

    /// Reorders the legs. `order` must name every leg exactly once.
    pub fn permuted(&self, order: &[&str]) -> Result<Self> {
        if order.len() != self.rank() {
            return Err(Error::DimensionMismatch(format!(
                "permutation names {} legs, tensor has {}",
                order.len(),
                self.rank()
            )));
        }
        let perm = order.iter().map(|l| self.axis(l)).collect::<Result<Vec<_>>>()?;
        let uniq: HashSet<_> = perm.iter().collect();
        if uniq.len() != perm.len() {
            return Err(Error::InvalidTensor("repeated leg in permutation".into()));
        }
        Ok(self.permute_axes(&perm))
    }

    pub fn relabel(&self, map: &[(&str, &str)]) -> Result<Self> {
        let mut legs = self.legs.clone();
        for (from, to) in map {
            let a = self.axis(from)?;
            legs[a] = to.to_string();
        }
        Self::new(legs, self.shape.clone(), self.data.clone())
    }

    pub fn conj(&self) -> Self {
        DenseTensor {
            legs: self.legs.clone(),
            shape: self.shape.clone(),
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        DenseTensor {
            legs: self.legs.clone(),
            shape: self.shape.clone(),
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `other` with legs reordered to match `self`; errors if the leg sets differ.
    pub fn aligned(&self, other: &Self) -> Result<Self> {
        let order: Vec<&str> = self.legs.iter().map(String::as_str).collect();
        let o = other.permuted(&order)?;
        if o.shape != self.shape {
            return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", self.shape, o.shape)));
        }
        Ok(o)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let o = self.aligned(other)?;
        let data = self.data.iter().zip(&o.data).map(|(a, b)| a + b).collect();
        Ok(DenseTensor { legs: self.legs.clone(), shape: self.shape.clone(), data })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(c(-1.0, 0.0)))
    }

    /// ⟨self|other⟩ summed over all legs, matched by name.
    pub fn inner(&self, other: &Self) -> Result<C64> {
        let o = self.aligned(other)?;
        Ok(self.data.iter().zip(&o.data).map(|(a, b)| a.conj() * b).sum())
    }

    /// Sums over paired legs; the result carries the free legs of `self`
    /// followed by the free legs of `other`.
    pub fn contract(&self, other: &Self, pairs: &[(&str, &str)]) -> Result<Self> {
        let mut p1 = Vec::with_capacity(pairs.len());
        let mut p2 = Vec::with_capacity(pairs.len());
        for (a, b) in pairs {
            let da = self.dim(a)?;
            let db = other.dim(b)?;
            if da != db {
                return Err(Error::DimensionMismatch(format!("leg `{a}` ({da}) vs `{b}` ({db})")));
            }
            if p1.contains(a) || p2.contains(b) {
                return Err(Error::InvalidTensor("leg paired twice".into()));
            }
            p1.push(*a);
            p2.push(*b);
        }
        let free1: Vec<&str> = self.legs.iter().map(String::as_str).filter(|l| !p1.contains(l)).collect();
        let free2: Vec<&str> = other.legs.iter().map(String::as_str).filter(|l| !p2.contains(l)).collect();
        let m1 = self.to_matrix(&free1, &p1)?;
        let m2 = other.to_matrix(&p2, &free2)?;
        let prod = m1 * m2;
        let rows: Vec<(&str, usize)> = free1.iter().map(|l| (*l, self.dim(l).unwrap())).collect();
        let cols: Vec<(&str, usize)> = free2.iter().map(|l| (*l, other.dim(l).unwrap())).collect();
        Self::from_matrix(&prod, &rows, &cols)
    }

    /// Matrix with rows indexed by `rows` (row-major within the group) and
    /// columns by `cols`. Together they must cover every leg.
    pub fn to_matrix(&self, rows: &[&str], cols: &[&str]) -> Result<CMat> {
        let order: Vec<&str> = rows.iter().chain(cols).copied().collect();
        let p = self.permuted(&order)?;
        let r: usize = rows.iter().map(|l| self.dim(l).unwrap()).product();
        let cdim: usize = cols.iter().map(|l| self.dim(l).unwrap()).product();
        Ok(CMat::from_row_slice(r, cdim, &p.data))
    }

    /// Applies `op` (new index × old index) to the group `legs`, keeping the
    /// leg order of `self`.
    pub fn apply(&self, op: &CMat, legs: &[&str]) -> Result<Self> {
        let rest: Vec<&str> = self
            .legs
            .iter()
            .map(String::as_str)
            .filter(|l| !legs.contains(l))
            .collect();
        let m = self.to_matrix(legs, &rest)?;
        if op.ncols() != m.nrows() || op.nrows() != m.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "operator {}x{} on legs of total dimension {}",
                op.nrows(),
                op.ncols(),
                m.nrows()
            )));
        }
        let out = op * m;
        let rows: Vec<(&str, usize)> = legs.iter().map(|l| (*l, self.dim(l).unwrap())).collect();
        let cols: Vec<(&str, usize)> = rest.iter().map(|l| (*l, self.dim(l).unwrap())).collect();
        let t = Self::from_matrix(&out, &rows, &cols)?;
        let order: Vec<&str> = self.legs.iter().map(String::as_str).collect();
        t.permuted(&order)
    }

    /// Merges `legs` (in the given order) into one leg named `name`, placed
    /// where the first of them sat.
    pub fn fuse(&self, legs: &[&str], name: &str) -> Result<Self> {
        let mut first = usize::MAX;
        for l in legs {
            first = first.min(self.axis(l)?);
        }
        let mut order: Vec<&str> = Vec::new();
        for (k, l) in self.legs.iter().enumerate() {
            if k == first {
                order.extend_from_slice(legs);
            }
            if !legs.contains(&l.as_str()) {
                order.push(l);
            }
        }
        let p = self.permuted(&order)?;
        let mut new_legs = Vec::new();
        let mut new_shape = Vec::new();
        let mut k = 0;
        while k < p.legs.len() {
            if k < p.legs.len() && p.legs[k] == legs[0] {
                let d: usize = p.shape[k..k + legs.len()].iter().product();
                new_legs.push(name.to_string());
                new_shape.push(d);
                k += legs.len();
            } else {
                new_legs.push(p.legs[k].clone());
                new_shape.push(p.shape[k]);
                k += 1;
            }
        }
        Self::new(new_legs, new_shape, p.data)
    }

    /// Inverse of [`fuse`](Self::fuse).
    pub fn split(&self, leg: &str, parts: &[(&str, usize)]) -> Result<Self> {
        let a = self.axis(leg)?;
        let d: usize = parts.iter().map(|x| x.1).product();
        if d != self.shape[a] {
            return Err(Error::DimensionMismatch(format!("cannot split {} into {:?}", self.shape[a], parts)));
        }
        let mut legs = Vec::new();
        let mut shape = Vec::new();
        for (k, l) in self.legs.iter().enumerate() {
            if k == a {
                for (n, dd) in parts {
                    legs.push(n.to_string());
                    shape.push(*dd);
                }
            } else {
                legs.push(l.clone());
                shape.push(self.shape[k]);
            }
        }
        Self::new(legs, shape, self.data.clone())
    }

    /// Partial trace over pairs of legs of equal dimension.
    pub fn trace(&self, pairs: &[(&str, &str)]) -> Result<Self> {
        let mut id = DenseTensor::scalar(ONE);
        let mut names = Vec::new();
        for (k, (a, b)) in pairs.iter().enumerate() {
            let d = self.dim(a)?;
            if self.dim(b)? != d {
                return Err(Error::DimensionMismatch(format!("trace over `{a}` and `{b}`")));
            }
            let na = format!("__tr{k}a");
            let nb = format!("__tr{k}b");
            let delta = DenseTensor::from_matrix(&CMat::identity(d, d), &[(&na, d)], &[(&nb, d)])?;
            id = id.contract(&delta, &[])?;
            names.push((a.to_string(), na, b.to_string(), nb));
        }
        let pr: Vec<(&str, &str)> = names
            .iter()
            .flat_map(|(a, na, b, nb)| [(a.as_str(), na.as_str()), (b.as_str(), nb.as_str())])
            .collect();
        self.contract(&id, &pr)
    }

    /// Best complex `s` with `self ≈ s·other`, and the relative residual
    /// ‖self − s·other‖ / ‖self‖.
    pub fn fit_scale(&self, other: &Self) -> Result<(C64, f64)> {
        let o = self.aligned(other)?;
        Ok(linalg::fit_scale(&self.data, &o.data))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("tensor serializes")
    }
}

/// A tensor read as a matrix through a row/column split of its legs.
#[derive(Clone, Debug)]
pub struct MatrixView {
    pub tensor: DenseTensor,
    pub row_legs: Vec<String>,
    pub col_legs: Vec<String>,
}

impl MatrixView {
    pub fn new(tensor: DenseTensor, rows: &[&str], cols: &[&str]) -> Result<Self> {
        let all: HashSet<&str> = rows.iter().chain(cols).copied().collect();
        if all.len() != rows.len() + cols.len() || all.len() != tensor.rank() {
            return Err(Error::InvalidTensor("row and column legs must partition the tensor legs".into()));
        }
        for l in &all {
            tensor.axis(l)?;
        }
        Ok(MatrixView {
            tensor,
            row_legs: rows.iter().map(|s| s.to_string()).collect(),
            col_legs: cols.iter().map(|s| s.to_string()).collect(),
        })
    }

    /// Wraps a plain matrix with legs `row` and `col`.
    pub fn from_matrix(m: &CMat) -> Self {
        let t = DenseTensor::from_matrix(m, &[("row", m.nrows())], &[("col", m.ncols())]).expect("finite matrix");
        MatrixView { tensor: t, row_legs: vec!["row".into()], col_legs: vec!["col".into()] }
    }

    fn rows(&self) -> Vec<&str> {
        self.row_legs.iter().map(String::as_str).collect()
    }

    fn cols(&self) -> Vec<&str> {
        self.col_legs.iter().map(String::as_str).collect()
    }

    fn dims(&self, legs: &[&str]) -> Vec<usize> {
        legs.iter().map(|l| self.tensor.dim(l).unwrap()).collect()
    }

    pub fn matrix(&self) -> CMat {
        self.tensor.to_matrix(&self.rows(), &self.cols()).expect("validated view")
    }
}

pub fn contract(t1: &DenseTensor, t2: &DenseTensor, pairs: &[(&str, &str)]) -> Result<DenseTensor> {
    t1.contract(t2, pairs)
}

fn as_ref(v: &[(String, usize)]) -> Vec<(&str, usize)> {
    v.iter().map(|(n, d)| (n.as_str(), *d)).collect()
}

fn primed(legs: &[&str]) -> Vec<String> {
    legs.iter().map(|l| format!("{l}'")).collect()
}

/// Polar decomposition m = V·Q. `Q` carries legs (cols', cols) and `V`
/// carries (rows, cols'), so contracting over the primed legs restores `m`.
/// The third value is the numerical rank.
pub fn polar_decompose(m: &MatrixView) -> Result<(DenseTensor, DenseTensor, usize)> {
    let mat = m.matrix();
    let (v, q, rank) = linalg::polar(&mat, linalg::RANK_TOL)?;
    let rows = m.rows();
    let cols = m.cols();
    let p = primed(&cols);
    let pr: Vec<&str> = p.iter().map(String::as_str).collect();
    let rd = m.dims(&rows);
    let cd = m.dims(&cols);
    let zip = |names: &[&str], dims: &[usize]| -> Vec<(String, usize)> {
        names.iter().zip(dims).map(|(n, d)| (n.to_string(), *d)).collect()
    };
    let rows_d = zip(&rows, &rd);
    let cols_d = zip(&cols, &cd);
    let pr_d = zip(&pr, &cd);
    let vt = DenseTensor::from_matrix(&v, &as_ref(&rows_d), &as_ref(&pr_d))?;
    let qt = DenseTensor::from_matrix(&q, &as_ref(&pr_d), &as_ref(&cols_d))?;
    Ok((vt, qt, rank))
}

/// Eigen-decomposition of a Hermitian view. Values descend; the vector
/// tensor has the row legs plus a leg `eig` enumerating eigenvectors.
pub fn eig_hermitian(m: &MatrixView) -> Result<(Vec<f64>, DenseTensor)> {
    let mat = m.matrix();
    if mat.nrows() != mat.ncols() {
        return Err(Error::DimensionMismatch("eig_hermitian needs a square view".into()));
    }
    let (vals, vecs) = linalg::eigh(&mat, linalg::HERMITIAN_TOL)?;
    let rows = m.rows();
    let rd = m.dims(&rows);
    let r: Vec<(&str, usize)> = rows.iter().copied().zip(rd).collect();
    let t = DenseTensor::from_matrix(&vecs, &r, &[("eig", vals.len())])?;
    Ok((vals, t))
}

/// Moore-Penrose pseudo-inverse with legs (cols, rows).
pub fn pseudo_inverse(m: &MatrixView, tol: f64) -> Result<DenseTensor> {
    if tol <= 0.0 {
        return Err(Error::Precondition("pseudo-inverse tolerance must be positive".into()));
    }
    let p = linalg::pinv(&m.matrix(), tol)?;
    let rows = m.rows();
    let cols = m.cols();
    let r: Vec<(&str, usize)> = cols.iter().copied().zip(m.dims(&cols)).collect();
    let cc: Vec<(&str, usize)> = rows.iter().copied().zip(m.dims(&rows)).collect();
    DenseTensor::from_matrix(&p, &r, &cc)
}
