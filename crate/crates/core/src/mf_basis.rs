//! Measurement bases for the bond measurement: Weyl-Heisenberg groups,
//! composite-dimension constructions and Hadamard/Latin-square bases.
//!
//! Elements are stored as unnormalized unitaries; the 1/√D factor of the
//! maximally entangled measurement states is applied where the states are
//! built.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::Report;
use crate::tensors::linalg::{self, CMat};
use crate::tensors::{c, DenseTensor, C64, ONE, ZERO};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisKind {
    WeylHeisenberg,
    Product,
    MixedClock,
    HadamardLatin,
    Custom,
}

/// Multiplication and commutation data of a basis closing into a
/// projective group.
#[derive(Clone, Debug, PartialEq)]
pub struct CocycleTable {
    pub dim_sq: usize,
    /// `products[i][j] = (k, c)` with P_i P_j = c·P_k.
    pub products: Vec<Vec<(usize, C64)>>,
    /// `phases[j][k] = ω(j,k)` with P_k P_j = ω(j,k)·P_j P_k. Zero for pairs
    /// that do not commute up to phase.
    pub phases: Vec<Vec<C64>>,
    pub abelian: bool,
}

#[derive(Clone, Debug)]
pub struct MfBasis {
    pub dim: usize,
    pub elements: Vec<CMat>,
    pub labels: Vec<String>,
    pub kind: BasisKind,
    pub is_group: Option<bool>,
    pub cocycle: Option<CocycleTable>,
}

fn wh_label(v: usize, w: usize) -> String {
    let part = |s: &str, e: usize| match e {
        0 => String::new(),
        1 => s.to_string(),
        _ => format!("{s}^{e}"),
    };
    if v == 0 && w == 0 {
        "I".into()
    } else {
        format!("{}{}", part("X", v), part("Z", w))
    }
}

/// Parses `I`, `X`, `Z^2`, `X^2Z`, `XZ`, ... into exponents (v, w).
pub fn parse_wh_label(s: &str, d: usize) -> Option<(usize, usize)> {
    let s = s.trim();
    if s == "I" {
        return Some((0, 0));
    }
    let mut v = 0usize;
    let mut w = 0usize;
    let bytes: Vec<char> = s.chars().collect();
    let mut k = 0;
    let mut seen_x = false;
    let mut seen_z = false;
    while k < bytes.len() {
        let sym = bytes[k];
        k += 1;
        let mut e = 1usize;
        if k < bytes.len() && (bytes[k] == '^' || bytes[k].is_ascii_digit()) {
            if bytes[k] == '^' {
                k += 1;
            }
            let start = k;
            while k < bytes.len() && bytes[k].is_ascii_digit() {
                k += 1;
            }
            e = bytes[start..k].iter().collect::<String>().parse().ok()?;
        }
        match sym {
            'X' if !seen_x && !seen_z => {
                v = e % d;
                seen_x = true;
            }
            'Z' if !seen_z => {
                w = e % d;
                seen_z = true;
            }
            _ => return None,
        }
    }
    Some((v, w))
}

pub fn shift(d: usize) -> CMat {
    CMat::from_fn(d, d, |i, j| if i == (j + 1) % d { ONE } else { ZERO })
}

pub fn clock(d: usize) -> CMat {
    let w = 2.0 * std::f64::consts::PI / d as f64;
    CMat::from_fn(d, d, |i, j| if i == j { C64::from_polar(1.0, w * i as f64) } else { ZERO })
}

fn mat_pow(m: &CMat, e: usize) -> CMat {
    let mut r = CMat::identity(m.nrows(), m.ncols());
    for _ in 0..e {
        r = &r * m;
    }
    r
}

/// X^v Z^w for a single qudit of dimension d.
pub fn wh_element(d: usize, v: usize, w: usize) -> CMat {
    mat_pow(&shift(d), v % d) * mat_pow(&clock(d), w % d)
}

impl MfBasis {
    pub fn size(&self) -> usize {
        self.elements.len()
    }

    pub fn element(&self, i: usize) -> &CMat {
        &self.elements[i]
    }

    pub fn is_weyl_heisenberg(&self) -> bool {
        self.kind == BasisKind::WeylHeisenberg
    }

    /// Exponents (v, w) of element `i` of a Weyl-Heisenberg basis.
    pub fn wh_exponents(&self, i: usize) -> Option<(usize, usize)> {
        self.is_weyl_heisenberg().then(|| (i / self.dim, i % self.dim))
    }

    pub fn wh_index(&self, v: usize, w: usize) -> usize {
        (v % self.dim) * self.dim + (w % self.dim)
    }

    pub fn identity_index(&self) -> Option<usize> {
        self.identify(&CMat::identity(self.dim, self.dim), 1e-9).map(|x| x.0)
    }

    /// Resolves a label to (index, phase) with `label = phase·P_index`.
    /// Accepts stored labels, Weyl-Heisenberg exponent strings, and `Y`
    /// (= i·XZ) for qubits.
    pub fn resolve_label(&self, label: &str) -> Result<(usize, C64)> {
        if let Some(i) = self.labels.iter().position(|l| l == label.trim()) {
            return Ok((i, ONE));
        }
        if self.is_weyl_heisenberg() {
            if self.dim == 2 && label.trim() == "Y" {
                return Ok((self.wh_index(1, 1), c(0.0, 1.0)));
            }
            if let Some((v, w)) = parse_wh_label(label, self.dim) {
                return Ok((self.wh_index(v, w), ONE));
            }
        }
        Err(Error::Parse(format!("unknown basis label `{label}`")))
    }

    /// Finds `(i, c)` with `m = c·P_i`, if any element matches within `tol`
    /// (relative).
    pub fn identify(&self, m: &CMat, tol: f64) -> Option<(usize, C64)> {
        if m.shape() != (self.dim, self.dim) {
            return None;
        }
        let mut best = (0usize, ZERO, f64::INFINITY);
        for (i, p) in self.elements.iter().enumerate() {
            let (s, r) = linalg::fit_scale_mat(m, p);
            if r < best.2 {
                best = (i, s, r);
            }
        }
        (best.2 <= tol && best.1.norm() > 0.0).then_some((best.0, best.1))
    }

    /// P_i P_j = c·P_k from the cocycle table.
    pub fn product(&self, i: usize, j: usize) -> Result<(usize, C64)> {
        let t = self.cocycle.as_ref().ok_or(Error::NotAGroup)?;
        Ok(t.products[i][j])
    }

    /// (k, c) with P_i^{-1} = P_i† = c·P_k.
    pub fn inverse(&self, i: usize) -> Result<(usize, C64)> {
        self.identify(&self.elements[i].adjoint(), 1e-9).ok_or(Error::NotAGroup)
    }

    pub fn validate(&self, tol: f64) -> Report {
        let mut r = Report::new();
        let d = self.dim;
        r.flag("element_count", self.elements.len() == d * d);
        r.flag("label_count", self.labels.len() == self.elements.len());
        let shapes_ok = self.elements.iter().all(|e| e.shape() == (d, d));
        r.flag("element_shapes", shapes_ok);
        if !shapes_ok {
            return r;
        }
        let unit = self.elements.iter().map(linalg::unitarity_residual).fold(0.0, f64::max);
        r.check("unitary", unit, tol);
        let mut orth: f64 = 0.0;
        for (i, a) in self.elements.iter().enumerate() {
            for (j, b) in self.elements.iter().enumerate() {
                let t = (a.adjoint() * b).trace();
                let want = if i == j { d as f64 } else { 0.0 };
                orth = orth.max((t - c(want, 0.0)).norm());
            }
        }
        r.check("orthogonality", orth, tol);
        let mut comp = CMat::zeros(d * d, d * d);
        for e in &self.elements {
            let v = CMat::from_iterator(d * d, 1, e.transpose().iter().copied());
            comp += &v * v.adjoint();
        }
        comp /= c(d as f64, 0.0);
        r.check("completeness", (comp - CMat::identity(d * d, d * d)).norm(), tol);
        r
    }

    fn assemble(dim: usize, elements: Vec<CMat>, labels: Vec<String>, kind: BasisKind) -> Result<Self> {
        let mut b = MfBasis { dim, elements, labels, kind, is_group: None, cocycle: None };
        let rep = b.validate(1e-9);
        if !rep.passed() {
            let f: Vec<String> = rep.failures().iter().map(|c| c.name.clone()).collect();
            return Err(Error::InvalidBasis(format!("failed {}", f.join(", "))));
        }
        let table = check_group_closure(&b);
        b.is_group = Some(table.is_some());
        b.cocycle = table;
        Ok(b)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let els: Vec<DenseTensor> = self
            .elements
            .iter()
            .map(|m| DenseTensor::from_matrix(m, &[("row", self.dim)], &[("col", self.dim)]).unwrap())
            .collect();
        serde_json::json!({"dim": self.dim, "elements": els, "labels": self.labels})
    }

    /// Reads a basis spec: either `"WH:D"` or `{"dim", "elements", "labels"}`.
    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        if let Some(s) = v.as_str() {
            return parse_basis_name(s);
        }
        #[derive(Deserialize)]
        struct BasisJson {
            dim: usize,
            elements: Vec<DenseTensor>,
            labels: Option<Vec<String>>,
        }
        let j: BasisJson = serde_json::from_value(v.clone())?;
        let mut els = Vec::new();
        for t in &j.elements {
            if t.rank() != 2 {
                return Err(Error::InvalidBasis("basis elements must be matrices".into()));
            }
            let legs: Vec<&str> = t.legs().iter().map(String::as_str).collect();
            els.push(t.to_matrix(&legs[..1], &legs[1..])?);
        }
        let labels = j.labels.unwrap_or_else(|| (0..els.len()).map(|i| format!("P{i}")).collect());
        let b = MfBasis::assemble(j.dim, els, labels, BasisKind::Custom)?;
        if b.is_group == Some(true) && is_wh_ordered(&b) {
            let wh = weyl_heisenberg_basis(b.dim)?;
            return Ok(MfBasis { labels: b.labels, ..wh });
        }
        Ok(b)
    }
}

/// True if element `v·D+w` is X^v Z^w exactly, so the custom basis can be
/// promoted to the Weyl-Heisenberg kind.
fn is_wh_ordered(b: &MfBasis) -> bool {
    let d = b.dim;
    (0..d * d).all(|i| (b.elements[i].clone() - wh_element(d, i / d, i % d)).norm() < 1e-12)
}

/// `"WH:D"` (also `"wh:D"`).
pub fn parse_basis_name(s: &str) -> Result<MfBasis> {
    let s = s.trim();
    let rest = s
        .strip_prefix("WH:")
        .or_else(|| s.strip_prefix("wh:"))
        .ok_or_else(|| Error::Parse(format!("unknown basis name `{s}`")))?;
    let d: usize = rest.parse().map_err(|_| Error::Parse(format!("bad dimension in `{s}`")))?;
    weyl_heisenberg_basis(d)
}

/// The one-element basis {1} for trivial virtual legs.
pub fn trivial_basis() -> MfBasis {
    MfBasis::assemble(1, vec![CMat::identity(1, 1)], vec!["I".into()], BasisKind::Custom).expect("valid basis")
}

/// {X^v Z^w}, indexed by v·D + w.
pub fn weyl_heisenberg_basis(d: usize) -> Result<MfBasis> {
    if d < 2 {
        return Err(Error::Precondition(format!("Weyl-Heisenberg basis needs D >= 2, got {d}")));
    }
    let mut els = Vec::with_capacity(d * d);
    let mut labels = Vec::with_capacity(d * d);
    for v in 0..d {
        for w in 0..d {
            els.push(wh_element(d, v, w));
            labels.push(wh_label(v, w));
        }
    }
    let mut b = MfBasis { dim: d, elements: els, labels, kind: BasisKind::WeylHeisenberg, is_group: Some(true), cocycle: None };
    // Exact table: X^v Z^w X^v' Z^w' = ω^{w v'} X^{v+v'} Z^{w+w'}.
    let n = d * d;
    let om = |e: i64| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * (e.rem_euclid(d as i64)) as f64 / d as f64);
    let mut products = vec![vec![(0, ONE); n]; n];
    let mut phases = vec![vec![ONE; n]; n];
    for i in 0..n {
        let (v, w) = (i / d, i % d);
        for j in 0..n {
            let (v2, w2) = (j / d, j % d);
            products[i][j] = (((v + v2) % d) * d + (w + w2) % d, om((w * v2) as i64));
            phases[i][j] = om(v as i64 * w2 as i64 - w as i64 * v2 as i64);
        }
    }
    b.cocycle = Some(CocycleTable { dim_sq: n, products, phases, abelian: true });
    Ok(b)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositeMode {
    Product,
    MixedClock,
}

pub fn composite_basis(b1: &MfBasis, b2: &MfBasis, mode: CompositeMode) -> Result<MfBasis> {
    for b in [b1, b2] {
        let rep = b.validate(1e-9);
        if !rep.passed() {
            return Err(Error::InvalidBasis("composite input fails basis invariants".into()));
        }
    }
    match mode {
        CompositeMode::Product => {
            if b1.is_group != Some(true) || b2.is_group != Some(true) {
                return Err(Error::Precondition("product mode needs group bases".into()));
            }
            let mut els = Vec::new();
            let mut labels = Vec::new();
            for (a, la) in b1.elements.iter().zip(&b1.labels) {
                for (b, lb) in b2.elements.iter().zip(&b2.labels) {
                    els.push(linalg::kron(a, b));
                    labels.push(format!("{la}.{lb}"));
                }
            }
            let out = MfBasis::assemble(b1.dim * b2.dim, els, labels, BasisKind::Product)?;
            if out.is_group != Some(true) {
                return Err(Error::NotAGroup);
            }
            Ok(out)
        }
        CompositeMode::MixedClock => {
            if !b1.is_weyl_heisenberg() || !b2.is_weyl_heisenberg() {
                return Err(Error::NotWeylHeisenberg);
            }
            let (d1, d2) = (b1.dim, b2.dim);
            let dd = d1 * d2;
            let x1 = linalg::kron(&shift(d1), &CMat::identity(d2, d2));
            let x2 = linalg::kron(&CMat::identity(d1, d1), &shift(d2));
            let z = clock(dd);
            let mut els: Vec<CMat> = Vec::new();
            let mut labels = Vec::new();
            for k in 0..dd {
                for a in 0..d1 {
                    for b in 0..d2 {
                        let m = mat_pow(&z, k) * mat_pow(&x1, a) * mat_pow(&x2, b);
                        if els.iter().any(|e| linalg::fit_scale_mat(&m, e).1 < 1e-9) {
                            return Err(Error::InvalidBasis(
                                "mixed clock generators do not produce distinct elements".into(),
                            ));
                        }
                        els.push(m);
                        labels.push(format!("Z^{k}X1^{a}X2^{b}"));
                    }
                }
            }
            let out = MfBasis::assemble(dd, els, labels, BasisKind::MixedClock)?;
            if out.is_group != Some(true) {
                return Err(Error::InvalidBasis("mixed clock generators do not close".into()));
            }
            Ok(out)
        }
    }
}

/// U_{ij}|k⟩ = H^j_{ik} |λ(j,k)⟩, element index i·D + j.
pub fn hadamard_latin_basis(h: &[CMat], lam: &[Vec<usize>]) -> Result<MfBasis> {
    let d = h.len();
    if d < 2 {
        return Err(Error::Precondition("need at least two Hadamard matrices".into()));
    }
    for (j, hj) in h.iter().enumerate() {
        if hj.shape() != (d, d) {
            return Err(Error::InvalidBasis(format!("H^{j} is not {d}x{d}")));
        }
        if hj.iter().any(|z| (z.norm() - 1.0).abs() > 1e-9) {
            return Err(Error::InvalidBasis(format!("H^{j} has entries off the unit circle")));
        }
        if (hj * hj.adjoint() - CMat::identity(d, d) * c(d as f64, 0.0)).norm() > 1e-9 {
            return Err(Error::InvalidBasis(format!("H^{j} is not a Hadamard matrix")));
        }
    }
    if lam.len() != d || lam.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidBasis("Latin square has the wrong shape".into()));
    }
    for j in 0..d {
        let mut row = vec![false; d];
        let mut col = vec![false; d];
        for k in 0..d {
            let a = lam[j][k];
            let b = lam[k][j];
            if a >= d || b >= d || row[a] || col[b] {
                return Err(Error::InvalidBasis("λ is not a Latin square".into()));
            }
            row[a] = true;
            col[b] = true;
        }
    }
    let mut els = Vec::with_capacity(d * d);
    let mut labels = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            let mut m = CMat::zeros(d, d);
            for k in 0..d {
                m[(lam[j][k], k)] = h[j][(i, k)];
            }
            els.push(m);
            labels.push(format!("U{i},{j}"));
        }
    }
    MfBasis::assemble(d, els, labels, BasisKind::HadamardLatin)
}

/// Fourier matrix F_{ik} = e^{2πi·ik/D} (unnormalized Hadamard).
pub fn fourier_hadamard(d: usize) -> CMat {
    CMat::from_fn(d, d, |i, k| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * (i * k) as f64 / d as f64))
}

/// Cocycle table if every product P_iP_j is a unit multiple of some P_k.
pub fn check_group_closure(b: &MfBasis) -> Option<CocycleTable> {
    let n = b.elements.len();
    let mut products = vec![vec![(0usize, ONE); n]; n];
    for i in 0..n {
        for j in 0..n {
            let m = &b.elements[i] * &b.elements[j];
            let (k, s) = b.identify(&m, 1e-9)?;
            if (s.norm() - 1.0).abs() > 1e-9 {
                return None;
            }
            products[i][j] = (k, s);
        }
    }
    let mut phases = vec![vec![ZERO; n]; n];
    let mut abelian = true;
    for j in 0..n {
        for k in 0..n {
            let (m1, c1) = products[k][j];
            let (m2, c2) = products[j][k];
            if m1 == m2 {
                phases[j][k] = c1 / c2;
            } else {
                abelian = false;
            }
        }
    }
    Some(CocycleTable { dim_sq: n, products, phases, abelian })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wh2_elements_and_orthogonality() {
        let b = weyl_heisenberg_basis(2).unwrap();
        assert_eq!(b.labels, vec!["I", "Z", "X", "XZ"]);
        assert!(b.validate(1e-12).passed());
        let xz = &b.elements[3];
        let y = CMat::from_row_slice(2, 2, &[ZERO, c(0.0, -1.0), c(0.0, 1.0), ZERO]);
        let (s, r) = linalg::fit_scale_mat(&y, xz);
        assert!(r < 1e-14 && (s - c(0.0, 1.0)).norm() < 1e-14);
        for i in 0..4 {
            for j in 0..4 {
                let t = (b.elements[i].adjoint() * &b.elements[j]).trace();
                assert!((t - c(if i == j { 2.0 } else { 0.0 }, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn wh2_cocycle_x_z_is_minus_one() {
        let b = weyl_heisenberg_basis(2).unwrap();
        let x = b.resolve_label("X").unwrap().0;
        let z = b.resolve_label("Z").unwrap().0;
        let t = b.cocycle.as_ref().unwrap();
        assert!((t.phases[x][z] + ONE).norm() < 1e-14);
    }

    #[test]
    fn wh_exact_cocycle_matches_brute_force() {
        for d in [2, 3, 4] {
            let b = weyl_heisenberg_basis(d).unwrap();
            let brute = check_group_closure(&b).unwrap();
            let exact = b.cocycle.as_ref().unwrap();
            for j in 0..d * d {
                for k in 0..d * d {
                    assert_eq!(brute.products[j][k].0, exact.products[j][k].0);
                    assert!((brute.products[j][k].1 - exact.products[j][k].1).norm() < 1e-12);
                    assert!((brute.phases[j][k] - exact.phases[j][k]).norm() < 1e-12);
                    assert!((exact.phases[j][k] * exact.phases[k][j] - ONE).norm() < 1e-12);
                }
                assert!((exact.phases[j][j] - ONE).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn wh3_completeness_and_relations() {
        let b = weyl_heisenberg_basis(3).unwrap();
        assert_eq!(b.size(), 9);
        let rep = b.validate(1e-10);
        assert!(rep.passed(), "{rep:?}");
        let x = shift(3);
        let z = clock(3);
        assert!((mat_pow(&x, 3) - CMat::identity(3, 3)).norm() < 1e-14);
        assert!((mat_pow(&z, 3) - CMat::identity(3, 3)).norm() < 1e-13);
        let om = C64::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0);
        assert!((&z * &x - (&x * &z) * om).norm() < 1e-14);
    }

    #[test]
    fn wh_rejects_small_dimension() {
        assert!(weyl_heisenberg_basis(1).is_err());
    }

    #[test]
    fn labels_parse() {
        let b = weyl_heisenberg_basis(3).unwrap();
        assert_eq!(b.resolve_label("X^2Z").unwrap().0, b.wh_index(2, 1));
        assert_eq!(b.resolve_label("Z2").unwrap().0, b.wh_index(0, 2));
        assert_eq!(b.resolve_label("I").unwrap().0, 0);
        assert!(b.resolve_label("Q").is_err());
        assert!(b.resolve_label("Y").is_err());
        let b2 = weyl_heisenberg_basis(2).unwrap();
        assert_eq!(b2.resolve_label("Y").unwrap(), (3, c(0.0, 1.0)));
    }

    #[test]
    fn product_basis_cocycle_factorizes() {
        let w = weyl_heisenberg_basis(2).unwrap();
        let p = composite_basis(&w, &w, CompositeMode::Product).unwrap();
        assert_eq!(p.dim, 4);
        assert_eq!(p.size(), 16);
        let t = p.cocycle.as_ref().unwrap();
        let t1 = w.cocycle.as_ref().unwrap();
        for j in 0..16 {
            for k in 0..16 {
                let want = t1.phases[j / 4][k / 4] * t1.phases[j % 4][k % 4];
                assert!((t.phases[j][k] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn mixed_clock_basis_closes() {
        let w = weyl_heisenberg_basis(2).unwrap();
        let m = composite_basis(&w, &w, CompositeMode::MixedClock).unwrap();
        assert_eq!(m.dim, 4);
        assert_eq!(m.is_group, Some(true));
        assert!(m.validate(1e-10).passed());
        let custom = MfBasis { kind: BasisKind::Custom, ..w.clone() };
        assert!(matches!(
            composite_basis(&custom, &w, CompositeMode::MixedClock),
            Err(Error::NotWeylHeisenberg)
        ));
    }

    #[test]
    fn hadamard_latin_d2_is_pauli_up_to_phase() {
        let h = CMat::from_row_slice(2, 2, &[ONE, ONE, ONE, -ONE]);
        let lam = vec![vec![0, 1], vec![1, 0]];
        let b = hadamard_latin_basis(&[h.clone(), h], &lam).unwrap();
        let w = weyl_heisenberg_basis(2).unwrap();
        for e in &b.elements {
            let (_, s) = w.identify(e, 1e-12).expect("Pauli up to phase");
            assert!((s.norm() - 1.0).abs() < 1e-12);
        }
        assert_eq!(b.is_group, Some(true));
    }

    #[test]
    fn hadamard_latin_rejects_non_latin() {
        let h = CMat::from_row_slice(2, 2, &[ONE, ONE, ONE, -ONE]);
        let lam = vec![vec![0, 0], vec![1, 0]];
        assert!(hadamard_latin_basis(&[h.clone(), h], &lam).is_err());
        let not_h = CMat::from_row_slice(2, 2, &[ONE, ONE, ONE, ONE]);
        let lam = vec![vec![0, 1], vec![1, 0]];
        assert!(hadamard_latin_basis(&[not_h.clone(), not_h], &lam).is_err());
    }

    #[test]
    fn hadamard_latin_d3_fourier_is_group() {
        let f = fourier_hadamard(3);
        let lam: Vec<Vec<usize>> = (0..3).map(|j| (0..3).map(|k| (j + k) % 3).collect()).collect();
        let b = hadamard_latin_basis(&[f.clone(), f.clone(), f], &lam).unwrap();
        assert_eq!(b.is_group, Some(true));
        assert!(check_group_closure(&b).is_some());
    }

    #[test]
    fn non_group_latin_square_d5() {
        // A Latin square of order 5 that is not isotopic to Z5.
        let lam = vec![
            vec![0, 1, 2, 3, 4],
            vec![1, 0, 4, 2, 3],
            vec![2, 3, 0, 4, 1],
            vec![3, 4, 1, 0, 2],
            vec![4, 2, 3, 1, 0],
        ];
        let f = fourier_hadamard(5);
        let b = hadamard_latin_basis(&vec![f; 5], &lam).unwrap();
        assert!(b.validate(1e-10).passed());
        assert!(check_group_closure(&b).is_none());
        assert_eq!(b.is_group, Some(false));
    }

    #[test]
    fn json_round_trip_promotes_wh() {
        let b = weyl_heisenberg_basis(3).unwrap();
        let back = MfBasis::from_json(&b.to_json()).unwrap();
        assert!(back.is_weyl_heisenberg());
        let named = MfBasis::from_json(&serde_json::json!("WH:2")).unwrap();
        assert_eq!(named.dim, 2);
        assert!(MfBasis::from_json(&serde_json::json!("XY:2")).is_err());
    }
}
