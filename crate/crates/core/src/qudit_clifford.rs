//! Weyl-Heisenberg strings over Z_d^{2n} and Clifford synthesis.
//!
//! A string `(v, w, p)` denotes e^{iπp/d} · X^{v_1}Z^{w_1} ⊗ … ⊗ X^{v_n}Z^{w_n};
//! qudit 0 is the most significant factor of the Kronecker product.
//!
//! Synthesis completes the prescribed images to a full symplectic basis over
//! the prime field and then writes the unitary down column by column:
//! U|0⟩ is the joint +1 eigenvector of the images of the Z's and
//! U|j⟩ = Π_k T(X_k)^{j_k} U|0⟩.

use std::f64::consts::PI;

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::Report;
use crate::tensors::linalg::{self, CMat};
use crate::tensors::{c, C64, ZERO};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PauliVector {
    pub n: usize,
    pub d: usize,
    pub v: Vec<usize>,
    pub w: Vec<usize>,
    pub phase_exp: usize,
}

pub fn is_prime(d: usize) -> bool {
    d >= 2 && (2..d).take_while(|k| k * k <= d).all(|k| !d.is_multiple_of(k))
}

fn inv_mod(a: usize, d: usize) -> Option<usize> {
    (1..d).find(|x| (a * x) % d == 1)
}

impl PauliVector {
    pub fn new(d: usize, v: Vec<usize>, w: Vec<usize>, phase_exp: usize) -> Self {
        let n = v.len();
        assert_eq!(n, w.len(), "v and w must have equal length");
        PauliVector {
            n,
            d,
            v: v.into_iter().map(|x| x % d).collect(),
            w: w.into_iter().map(|x| x % d).collect(),
            phase_exp: phase_exp % (2 * d),
        }
    }

    pub fn identity(n: usize, d: usize) -> Self {
        Self::new(d, vec![0; n], vec![0; n], 0)
    }

    pub fn x(n: usize, d: usize, k: usize) -> Self {
        let mut p = Self::identity(n, d);
        p.v[k] = 1;
        p
    }

    pub fn z(n: usize, d: usize, k: usize) -> Self {
        let mut p = Self::identity(n, d);
        p.w[k] = 1;
        p
    }

    pub fn dim(&self) -> usize {
        self.d.pow(self.n as u32)
    }

    pub fn phase(&self) -> C64 {
        C64::from_polar(1.0, PI * self.phase_exp as f64 / self.d as f64)
    }

    pub fn is_identity(&self) -> bool {
        self.v.iter().chain(&self.w).all(|&x| x == 0) && self.phase_exp == 0
    }

    /// Same string without the phase.
    pub fn support_eq(&self, other: &Self) -> bool {
        self.v == other.v && self.w == other.w
    }

    pub fn with_phase(&self, phase_exp: usize) -> Self {
        Self::new(self.d, self.v.clone(), self.w.clone(), phase_exp)
    }

    /// λ(a, b) with XZ(a)·XZ(b) = ω^{λ(a,b)} XZ(b)·XZ(a).
    pub fn symplectic(&self, other: &Self) -> usize {
        let d = self.d as i64;
        let s: i64 = (0..self.n)
            .map(|k| self.w[k] as i64 * other.v[k] as i64 - self.v[k] as i64 * other.w[k] as i64)
            .sum();
        s.rem_euclid(d) as usize
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!((self.n, self.d), (other.n, other.d));
        let cross: usize = (0..self.n).map(|k| self.w[k] * other.v[k]).sum();
        let v = (0..self.n).map(|k| self.v[k] + other.v[k]).collect();
        let w = (0..self.n).map(|k| self.w[k] + other.w[k]).collect();
        Self::new(self.d, v, w, self.phase_exp + other.phase_exp + 2 * cross)
    }

    pub fn pow(&self, e: usize) -> Self {
        (0..e).fold(Self::identity(self.n, self.d), |acc, _| acc.mul(self))
    }

    /// Phase-exact inverse.
    pub fn inverse(&self) -> Self {
        // (e^{iθ}X^vZ^w)^{-1} = e^{-iθ} Z^{-w}X^{-v} = e^{-iθ} ω^{v·w} X^{-v}Z^{-w}
        let d = self.d;
        let vw: usize = (0..self.n).map(|k| self.v[k] * self.w[k]).sum();
        let v = self.v.iter().map(|&x| (d - x) % d).collect();
        let w = self.w.iter().map(|&x| (d - x) % d).collect();
        Self::new(d, v, w, 2 * d - self.phase_exp + 2 * vw)
    }

    pub fn tensor(&self, other: &Self) -> Self {
        assert_eq!(self.d, other.d);
        let v = self.v.iter().chain(&other.v).copied().collect();
        let w = self.w.iter().chain(&other.w).copied().collect();
        Self::new(self.d, v, w, self.phase_exp + other.phase_exp)
    }

    /// Restriction to qudits `range`, dropping the phase.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self::new(self.d, self.v[range.clone()].to_vec(), self.w[range].to_vec(), 0)
    }

    /// Applies the string to a state vector.
    pub fn apply(&self, psi: &[C64]) -> Vec<C64> {
        let dim = self.dim();
        assert_eq!(psi.len(), dim);
        let d = self.d;
        let ph = self.phase();
        let om = 2.0 * PI / d as f64;
        let mut out = vec![ZERO; dim];
        let mut digits = vec![0usize; self.n];
        for (j, amp) in psi.iter().enumerate() {
            let mut t = j;
            for k in (0..self.n).rev() {
                digits[k] = t % d;
                t /= d;
            }
            let mut wdot = 0usize;
            let mut target = 0usize;
            for k in 0..self.n {
                wdot += self.w[k] * digits[k];
                target = target * d + (digits[k] + self.v[k]) % d;
            }
            out[target] += amp * ph * C64::from_polar(1.0, om * (wdot % d) as f64);
        }
        out
    }

    pub fn to_matrix(&self) -> CMat {
        let dim = self.dim();
        let mut m = CMat::zeros(dim, dim);
        let mut e = vec![ZERO; dim];
        for j in 0..dim {
            e[j] = c(1.0, 0.0);
            let col = self.apply(&e);
            for (i, z) in col.into_iter().enumerate() {
                m[(i, j)] = z;
            }
            e[j] = ZERO;
        }
        m
    }

    /// Reads a phase-exact string off a matrix, or `None` if the matrix is
    /// not e^{iπp/d}·XZ(a) within `tol` (relative Frobenius).
    pub fn from_matrix(m: &CMat, n: usize, d: usize, tol: f64) -> Option<Self> {
        let dim = d.pow(n as u32);
        if m.shape() != (dim, dim) {
            return None;
        }
        let (s, p) = Self::from_matrix_up_to_phase(m, n, d, tol)?;
        let ang = s.arg() * d as f64 / PI;
        let k = ang.round();
        if (s.norm() - 1.0).abs() > tol || (ang - k).abs() * PI / d as f64 > tol {
            return None;
        }
        let pe = (k as i64).rem_euclid(2 * d as i64) as usize;
        Some(p.with_phase(pe))
    }

    /// Decomposes `m ≈ s·XZ(a)` with an arbitrary complex `s`.
    pub fn from_matrix_up_to_phase(m: &CMat, n: usize, d: usize, tol: f64) -> Option<(C64, Self)> {
        let dim = d.pow(n as u32);
        if m.shape() != (dim, dim) {
            return None;
        }
        let col0 = m.column(0);
        let (i0, z0) = col0.iter().enumerate().max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap())?;
        if z0.norm() == 0.0 {
            return None;
        }
        let mut v = vec![0usize; n];
        let mut t = i0;
        for k in (0..n).rev() {
            v[k] = t % d;
            t /= d;
        }
        let mut w = vec![0usize; n];
        for k in 0..n {
            let stride = d.pow((n - 1 - k) as u32);
            let mut vk = v.clone();
            vk[k] = (vk[k] + 1) % d;
            let row = vk.iter().fold(0, |acc, &x| acc * d + x);
            let ratio = m[(row, stride)] / z0;
            let e = (ratio.arg() * d as f64 / (2.0 * PI)).round() as i64;
            w[k] = e.rem_euclid(d as i64) as usize;
        }
        let p = Self::new(d, v, w, 0);
        let (s, r) = linalg::fit_scale_mat(m, &p.to_matrix());
        (r <= tol).then_some((s, p))
    }

    pub fn label(&self) -> String {
        let mut out = Vec::new();
        for k in 0..self.n {
            let part = |s: &str, e: usize| match e {
                0 => String::new(),
                1 => s.to_string(),
                _ => format!("{s}^{e}"),
            };
            let l = format!("{}{}", part("X", self.v[k]), part("Z", self.w[k]));
            out.push(if l.is_empty() { "I".to_string() } else { l });
        }
        format!("e^(iπ{}/{})·{}", self.phase_exp, self.d, out.join("⊗"))
    }
}

impl PauliVector {
    /// Parses `X⊗I⊗Z^2`, `X,I,Z^2` or `X I Z^2`, optionally prefixed by
    /// `p:` for the phase exponent e^{iπp/d}.
    pub fn parse(s: &str, d: usize) -> Option<Self> {
        let (phase, body) = match s.split_once(':') {
            Some((p, b)) => (p.trim().parse::<usize>().ok()?, b),
            None => (0, s),
        };
        let mut v = Vec::new();
        let mut w = Vec::new();
        for part in body.split(|c: char| c == '⊗' || c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            let (a, b) = crate::mf_basis::parse_wh_label(part, d)?;
            v.push(a);
            w.push(b);
        }
        if v.is_empty() {
            return None;
        }
        Some(PauliVector::new(d, v, w, phase % (2 * d)))
    }
}

pub fn pauli_to_matrix(p: &PauliVector) -> CMat {
    p.to_matrix()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialCliffordMap {
    pub n: usize,
    pub d: usize,
    pub images: Vec<(PauliVector, PauliVector)>,
}

/// Slot and kind (`true` for X) of a single-qudit generator.
fn generator_slot(p: &PauliVector) -> Option<(usize, bool)> {
    if p.phase_exp != 0 {
        return None;
    }
    let nz: Vec<usize> = (0..p.n).filter(|&k| p.v[k] != 0 || p.w[k] != 0).collect();
    if nz.len() != 1 {
        return None;
    }
    let k = nz[0];
    match (p.v[k], p.w[k]) {
        (1, 0) => Some((k, true)),
        (0, 1) => Some((k, false)),
        _ => None,
    }
}

pub fn check_admissible(m: &PartialCliffordMap) -> Report {
    let mut r = Report::new();
    let shapes = m
        .images
        .iter()
        .all(|(s, t)| s.n == m.n && t.n == m.n && s.d == m.d && t.d == m.d);
    r.flag("well_formed", shapes);
    if !shapes {
        return r;
    }
    let gens: Vec<Option<(usize, bool)>> = m.images.iter().map(|(s, _)| generator_slot(s)).collect();
    let distinct = gens.iter().all(Option::is_some) && {
        let mut g: Vec<_> = gens.iter().flatten().collect();
        g.sort();
        g.dedup();
        g.len() == m.images.len()
    };
    r.flag("sources_distinct_generators", distinct);
    let mut comm_ok = true;
    for (i, (s1, t1)) in m.images.iter().enumerate() {
        for (s2, t2) in m.images.iter().skip(i + 1) {
            if s1.symplectic(s2) != t1.symplectic(t2) {
                comm_ok = false;
            }
        }
    }
    r.flag("commutation", comm_ok);
    let order_ok = m.images.iter().all(|(_, t)| t.pow(m.d).is_identity() && !t.is_identity());
    r.flag("order", order_ok);
    r
}

/// Explicit Clifford unitary realizing the map, phases included.
pub fn synthesize_clifford(m: &PartialCliffordMap) -> Result<CMat> {
    Ok(synthesize_full(m)?.0)
}

/// Synthesis plus the complete tableau: `(T(X_k), T(Z_k))` for every slot.
pub fn synthesize_full(m: &PartialCliffordMap) -> Result<(CMat, Vec<(PauliVector, PauliVector)>)> {
    let (n, d) = (m.n, m.d);
    if !is_prime(d) {
        return Err(Error::NonPrimeDimension(d));
    }
    let rep = check_admissible(m);
    if !rep.passed() {
        let f: Vec<String> = rep.failures().iter().map(|c| c.name.clone()).collect();
        return Err(Error::Inadmissible(f.join(", ")));
    }
    let mut xs: Vec<Option<PauliVector>> = vec![None; n];
    let mut zs: Vec<Option<PauliVector>> = vec![None; n];
    for (s, t) in &m.images {
        let (k, is_x) = generator_slot(s).expect("checked");
        if is_x {
            xs[k] = Some(t.clone());
        } else {
            zs[k] = Some(t.clone());
        }
    }
    for k in 0..n {
        if xs[k].is_some() != zs[k].is_some() {
            return Err(Error::Inadmissible(format!("slot {k} needs both X and Z images")));
        }
    }
    // Existing symplectic pairs (x, z) with λ(z, x) = 1.
    let mut pairs: Vec<(PauliVector, PauliVector)> = (0..n)
        .filter_map(|k| Some((xs[k].clone()?, zs[k].clone()?)))
        .collect();
    let project = |u: &PauliVector, pairs: &[(PauliVector, PauliVector)]| -> PauliVector {
        let mut u = u.with_phase(0);
        for (x, z) in pairs {
            let a = u.symplectic(z);
            let b = u.symplectic(x);
            u = u.mul(&x.with_phase(0).pow(a)).mul(&z.with_phase(0).pow((d - b) % d)).with_phase(0);
        }
        u
    };
    let mut candidates: Vec<PauliVector> = Vec::new();
    for k in 0..n {
        candidates.push(PauliVector::x(n, d, k));
        candidates.push(PauliVector::z(n, d, k));
    }
    let hermitian_phase = |p: &PauliVector| -> PauliVector {
        if d == 2 {
            let vw: usize = (0..n).map(|k| p.v[k] * p.w[k]).sum();
            p.with_phase(vw % 4)
        } else {
            p.with_phase(0)
        }
    };
    for k in 0..n {
        if xs[k].is_some() {
            continue;
        }
        let x = candidates
            .iter()
            .map(|u| project(u, &pairs))
            .find(|u| !u.with_phase(0).is_identity())
            .ok_or_else(|| Error::Inadmissible("symplectic completion ran out of vectors".into()))?;
        let z = candidates
            .iter()
            .map(|u| project(u, &pairs))
            .find(|u| u.symplectic(&x) != 0)
            .ok_or_else(|| Error::Inadmissible("no symplectic partner found".into()))?;
        let lam = z.symplectic(&x);
        let scale = inv_mod(lam, d).expect("prime field");
        let z = z.pow(scale).with_phase(0);
        let x = hermitian_phase(&x);
        let z = hermitian_phase(&z);
        xs[k] = Some(x.clone());
        zs[k] = Some(z.clone());
        pairs.push((x, z));
    }
    let tab: Vec<(PauliVector, PauliVector)> =
        (0..n).map(|k| (xs[k].clone().unwrap(), zs[k].clone().unwrap())).collect();
    for (i, (xi, zi)) in tab.iter().enumerate() {
        for (j, (xj, zj)) in tab.iter().enumerate() {
            let ok = xi.symplectic(xj) == 0
                && zi.symplectic(zj) == 0
                && zi.symplectic(xj) == usize::from(i == j);
            if !ok {
                return Err(Error::Inadmissible("completed tableau is not symplectic".into()));
            }
        }
        if !xi.pow(d).is_identity() || !zi.pow(d).is_identity() {
            return Err(Error::Inadmissible(format!("completed image on slot {i} has wrong order")));
        }
    }
    let dim = d.pow(n as u32);
    // Joint +1 eigenvector of the Z images.
    let stab_project = |mut psi: Vec<C64>| -> Vec<C64> {
        for (_, z) in &tab {
            let mut acc = psi.clone();
            let mut cur = psi.clone();
            for _ in 1..d {
                cur = z.apply(&cur);
                for (a, b) in acc.iter_mut().zip(&cur) {
                    *a += b;
                }
            }
            psi = acc.into_iter().map(|x| x / d as f64).collect();
        }
        psi
    };
    let mut psi0 = None;
    let thresh = 0.5 / dim as f64;
    for j in 0..dim {
        let mut e = vec![ZERO; dim];
        e[j] = c(1.0, 0.0);
        let p = stab_project(e);
        let nn: f64 = p.iter().map(|z| z.norm_sqr()).sum();
        if nn > thresh {
            let s = nn.sqrt();
            psi0 = Some(p.into_iter().map(|z| z / s).collect::<Vec<_>>());
            break;
        }
    }
    let psi0 = psi0.ok_or_else(|| Error::Factorization("stabilizer state not found".into()))?;
    let mut cols: Vec<Vec<C64>> = vec![Vec::new(); dim];
    cols[0] = psi0;
    for j in 1..dim {
        // lowest significant nonzero digit
        let mut t = j;
        let mut k = n - 1;
        while t % d == 0 {
            t /= d;
            k -= 1;
        }
        let prev = j - d.pow((n - 1 - k) as u32);
        cols[j] = tab[k].0.apply(&cols[prev]);
    }
    let u = CMat::from_fn(dim, dim, |i, j| cols[j][i]);
    for (s, t) in &m.images {
        let res = conjugation_residual(&u, s, t);
        if res > 1e-9 {
            return Err(Error::Factorization(format!("synthesized unitary misses image (residual {res:.3e})")));
        }
    }
    Ok((u, tab))
}

/// ‖U·M(src) − M(tgt)·U‖, i.e. the failure of U·src·U† = tgt.
pub fn conjugation_residual(u: &CMat, src: &PauliVector, tgt: &PauliVector) -> f64 {
    let dim = u.nrows();
    let mut worst: f64 = 0.0;
    let mut e = vec![ZERO; dim];
    for j in 0..dim {
        e[j] = c(1.0, 0.0);
        let sc = src.apply(&e);
        e[j] = ZERO;
        // U·src|j⟩
        let mut lhs = vec![ZERO; dim];
        for (k, a) in sc.iter().enumerate() {
            if a.norm() > 0.0 {
                for i in 0..dim {
                    lhs[i] += u[(i, k)] * a;
                }
            }
        }
        let col: Vec<C64> = u.column(j).iter().copied().collect();
        let rhs = tgt.apply(&col);
        let r: f64 = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).norm_sqr()).sum();
        worst += r;
    }
    worst.sqrt()
}

/// True iff every U·X_k·U† and U·Z_k·U† is a unit phase times a string.
pub fn is_clifford(u: &CMat, n: usize, d: usize) -> Result<bool> {
    let dim = d.pow(n as u32);
    if u.shape() != (dim, dim) {
        return Err(Error::DimensionMismatch(format!("expected {dim}x{dim}")));
    }
    let ures = linalg::unitarity_residual(u);
    if ures > 1e-9 * (dim as f64).sqrt() {
        return Err(Error::NotUnitary(ures));
    }
    for k in 0..n {
        for g in [PauliVector::x(n, d, k), PauliVector::z(n, d, k)] {
            if clifford_image(u, &g).is_none() {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// The string (with phase, possibly outside Z_{2d}-roots) equal to U·g·U†.
pub fn clifford_image(u: &CMat, g: &PauliVector) -> Option<(C64, PauliVector)> {
    let dim = u.nrows();
    let (n, d) = (g.n, g.d);
    let ud = u.adjoint();
    let column = |j: usize| -> Vec<C64> {
        let x: Vec<C64> = ud.column(j).iter().copied().collect();
        let y = g.apply(&x);
        (0..dim).map(|i| (0..dim).map(|k| u[(i, k)] * y[k]).sum()).collect()
    };
    let col0 = column(0);
    let (i0, z0) = col0
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap())
        .map(|(i, z)| (i, *z))?;
    if (z0.norm() - 1.0).abs() > 1e-8 {
        return None;
    }
    let mut v = vec![0usize; n];
    let mut t = i0;
    for k in (0..n).rev() {
        v[k] = t % d;
        t /= d;
    }
    let mut w = vec![0usize; n];
    for k in 0..n {
        let stride = d.pow((n - 1 - k) as u32);
        let colk = column(stride);
        let mut vk = v.clone();
        vk[k] = (vk[k] + 1) % d;
        let row = vk.iter().fold(0, |acc, &x| acc * d + x);
        let ratio = colk[row] / z0;
        let e = (ratio.arg() * d as f64 / (2.0 * PI)).round() as i64;
        w[k] = e.rem_euclid(d as i64) as usize;
    }
    let p = PauliVector::new(d, v, w, 0);
    let scaled = p.clone();
    // U·g = z0·XZ(a)·U
    let mut res = 0.0;
    let mut e = vec![ZERO; dim];
    for j in 0..dim {
        e[j] = c(1.0, 0.0);
        let gc = g.apply(&e);
        e[j] = ZERO;
        let mut lhs = vec![ZERO; dim];
        for (k, a) in gc.iter().enumerate() {
            if a.norm() > 0.0 {
                for i in 0..dim {
                    lhs[i] += u[(i, k)] * a;
                }
            }
        }
        let col: Vec<C64> = u.column(j).iter().copied().collect();
        let rhs = scaled.apply(&col);
        res += lhs.iter().zip(&rhs).map(|(a, b)| (a - z0 * b).norm_sqr()).sum::<f64>();
    }
    (res.sqrt() <= 1e-8 * (dim as f64).sqrt()).then_some((z0, p))
}

/// A random map X_slot ↦ a, Z_slot ↦ b with λ(b, a) = 1 and admissible phases.
pub fn random_admissible_map<R: Rng + ?Sized>(n: usize, d: usize, slot: usize, rng: &mut R) -> PartialCliffordMap {
    let rand_vec = |rng: &mut R| -> PauliVector {
        loop {
            let v: Vec<usize> = (0..n).map(|_| rng.random_range(0..d)).collect();
            let w: Vec<usize> = (0..n).map(|_| rng.random_range(0..d)).collect();
            let p = PauliVector::new(d, v, w, 0);
            if !p.is_identity() {
                return p;
            }
        }
    };
    let a = rand_vec(rng);
    let b = loop {
        let b = rand_vec(rng);
        let lam = b.symplectic(&a);
        if lam != 0 {
            break b.pow(inv_mod(lam, d).unwrap()).with_phase(0);
        }
    };
    let fix = |p: PauliVector, rng: &mut R| -> PauliVector {
        if d == 2 {
            let vw: usize = (0..n).map(|k| p.v[k] * p.w[k]).sum();
            p.with_phase(vw + 2 * rng.random_range(0..2usize))
        } else {
            p.with_phase(2 * rng.random_range(0..d))
        }
    };
    let a = fix(a, rng);
    let b = fix(b, rng);
    PartialCliffordMap {
        n,
        d,
        images: vec![(PauliVector::x(n, d, slot), a), (PauliVector::z(n, d, slot), b)],
    }
}
