//! PEPS tensors with push-through symmetries, topological solutions and
//! transfer-matrix spectra.
//!
//! Legs are `(left, up, right, down, phys)`. An operator M on a left or down
//! leg acts as (M ▷ A)[l] = Σ_b M[l,b] A[b]; on an up or right leg as
//! (A ◁ M)[u] = Σ_a A[a] M[a,u]. With A_op[s, (l,u,r,d)] these are A_op·M^T
//! and A_op·M on the corresponding factor. A bond carrying W between a right
//! (or up) leg and the next left (or down) leg reads the same from both ends.
//!
//! Q-form tensors fuse the physical sub-legs `(pl, pu, pr, pd)` into `phys`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mf_basis::MfBasis;
use crate::mf_mps::{self, CliffordMagicForm, PolarSplit};
use crate::qudit_clifford::{self, PartialCliffordMap, PauliVector};
use crate::report::Report;
use crate::tensors::linalg::{self, CMat};
use crate::tensors::{DenseTensor, C64, ONE, ZERO};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Leg {
    Left,
    Up,
    Right,
    Down,
}

pub const LEGS: [Leg; 4] = [Leg::Left, Leg::Up, Leg::Right, Leg::Down];

impl Leg {
    pub fn name(self) -> &'static str {
        match self {
            Leg::Left => "left",
            Leg::Up => "up",
            Leg::Right => "right",
            Leg::Down => "down",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Leg::Left => 0,
            Leg::Up => 1,
            Leg::Right => 2,
            Leg::Down => 3,
        }
    }

    /// Left and down legs take the operator from the left (M ▷ A).
    pub fn incoming(self) -> bool {
        matches!(self, Leg::Left | Leg::Down)
    }

    pub fn opposite(self) -> Leg {
        match self {
            Leg::Left => Leg::Right,
            Leg::Right => Leg::Left,
            Leg::Up => Leg::Down,
            Leg::Down => Leg::Up,
        }
    }
}

/// The factor by which M on `leg` multiplies the operator reading from the right.
pub fn leg_factor(leg: Leg, m: &CMat) -> CMat {
    if leg.incoming() {
        m.transpose()
    } else {
        m.clone()
    }
}

/// U·(P_in on `from`)A = A·(P_k on each `to` leg).
#[derive(Clone, Debug, PartialEq)]
pub struct PushRelation {
    pub from: Leg,
    pub p_in: usize,
    pub to: Vec<(Leg, usize)>,
    pub u_phys: CMat,
}

impl PushRelation {
    /// Per-leg factors of G = G_from·G_to^{-1}, in leg order.
    pub fn factors(&self, basis: &MfBasis) -> [CMat; 4] {
        let dd = basis.dim;
        let mut f: [CMat; 4] = std::array::from_fn(|_| CMat::identity(dd, dd));
        f[self.from.index()] = leg_factor(self.from, &basis.elements[self.p_in]);
        for (leg, p) in &self.to {
            let g = leg_factor(*leg, &basis.elements[*p]);
            f[leg.index()] = &f[leg.index()] * g.adjoint();
        }
        f
    }

    pub fn g_from(&self, basis: &MfBasis, legs: &[Leg]) -> CMat {
        kron_on(basis.dim, legs, &[(self.from, leg_factor(self.from, &basis.elements[self.p_in]))])
    }

    pub fn g_to(&self, basis: &MfBasis, legs: &[Leg]) -> CMat {
        let ops: Vec<(Leg, CMat)> = self.to.iter().map(|(l, p)| (*l, leg_factor(*l, &basis.elements[*p]))).collect();
        kron_on(basis.dim, legs, &ops)
    }
}

/// Kronecker product over `legs` with the given factors and identity elsewhere.
fn kron_on(dd: usize, legs: &[Leg], ops: &[(Leg, CMat)]) -> CMat {
    let mats: Vec<CMat> = legs
        .iter()
        .map(|l| {
            ops.iter()
                .filter(|(k, _)| k == l)
                .fold(CMat::identity(dd, dd), |acc, (_, m)| acc * m)
        })
        .collect();
    linalg::kron_all(&mats)
}

#[derive(Clone, Debug)]
pub struct PepsTensor {
    pub tensor: DenseTensor,
    pub basis: MfBasis,
    pub pushes: Vec<PushRelation>,
}

impl PepsTensor {
    pub fn new(tensor: DenseTensor, basis: MfBasis, pushes: Vec<PushRelation>) -> Result<Self> {
        let t = tensor.permuted(&["left", "up", "right", "down", "phys"])?;
        for k in 0..4 {
            if t.shape()[k] != basis.dim {
                return Err(Error::DimensionMismatch(format!(
                    "virtual leg {} has dimension {}, basis {}",
                    LEGS[k].name(),
                    t.shape()[k],
                    basis.dim
                )));
            }
        }
        let d = t.shape()[4];
        for p in &pushes {
            if p.u_phys.shape() != (d, d) {
                return Err(Error::DimensionMismatch(format!("push unitary {:?} vs physical {d}", p.u_phys.shape())));
            }
            if p.p_in >= basis.size() || p.to.iter().any(|(_, q)| *q >= basis.size()) {
                return Err(Error::Precondition("push references a missing basis element".into()));
            }
        }
        Ok(PepsTensor { tensor: t, basis, pushes })
    }

    pub fn from_op(op: &CMat, basis: MfBasis, pushes: Vec<PushRelation>) -> Result<Self> {
        let dd = basis.dim;
        let n = dd.pow(4);
        if op.ncols() != n {
            return Err(Error::DimensionMismatch(format!("operator has {} columns, want {n}", op.ncols())));
        }
        let t = DenseTensor::from_fn(&["left", "up", "right", "down", "phys"], &[dd, dd, dd, dd, op.nrows()], |i| {
            op[(i[4], ((i[0] * dd + i[1]) * dd + i[2]) * dd + i[3])]
        })?;
        Self::new(t, basis, pushes)
    }

    pub fn op(&self) -> CMat {
        self.tensor
            .to_matrix(&["phys"], &["left", "up", "right", "down"])
            .expect("legs fixed at construction")
    }

    pub fn phys_dim(&self) -> usize {
        self.tensor.shape()[4]
    }

    pub fn bond_dim(&self) -> usize {
        self.basis.dim
    }

    /// Pushes entering through the left leg.
    pub fn constraints_a(&self) -> Vec<&PushRelation> {
        self.pushes.iter().filter(|p| p.from == Leg::Left).collect()
    }

    /// Pushes entering through the down leg.
    pub fn constraints_b(&self) -> Vec<&PushRelation> {
        self.pushes.iter().filter(|p| p.from == Leg::Down).collect()
    }
}

pub fn check_peps_mf_symmetry(a: &PepsTensor, tol: f64) -> Result<Report> {
    let op = a.op();
    let nrm = op.norm().max(f64::MIN_POSITIVE);
    let mut rep = Report::new();
    for (k, p) in a.pushes.iter().enumerate() {
        let lhs = &p.u_phys * &op * p.g_from(&a.basis, &LEGS);
        let rhs = &op * p.g_to(&a.basis, &LEGS);
        let fam = if p.from == Leg::Left { "a" } else if p.from == Leg::Down { "b" } else { "other" };
        rep.check(format!("push_{fam}[{k}] {}", a.basis.labels[p.p_in]), (lhs - rhs).norm() / nrm, tol);
    }
    Ok(rep)
}

/// A contracted with A† over phys, up and right; returns the report and the
/// constant c with result = c·I on (left, down).
pub fn peps_isometry_check(a: &PepsTensor, tol: f64) -> Result<(Report, C64)> {
    let b = a.tensor.to_matrix(&["phys", "up", "right"], &["left", "down"])?;
    let m = b.adjoint() * b;
    let n = m.nrows();
    let (k, r) = linalg::fit_scale_mat(&m, &CMat::identity(n, n));
    let mut rep = Report::new();
    rep.check("isometry", r, tol);
    Ok((rep, k))
}

#[derive(Clone, Debug)]
pub struct PepsSplit {
    pub split: PolarSplit,
    pub report: Report,
    pub clifford: Option<CliffordMagicForm>,
    /// Why the Clifford part was skipped, if it was.
    pub clifford_skipped: Option<String>,
}

/// V_Q[(pl,pu,pr,pd,u,r), (l,d)] = Q[(pl,pu,pr,pd), (l,u,r,d)].
pub fn peps_sideways(q: &CMat, dd: usize) -> CMat {
    let p4 = dd.pow(4);
    CMat::from_fn(p4 * dd * dd, dd * dd, |row, col| {
        let (p, u, r) = (row / (dd * dd), (row / dd) % dd, row % dd);
        let (l, d) = (col / dd, col % dd);
        q[(p, ((l * dd + u) * dd + r) * dd + d)]
    })
}

pub fn peps_split_polar(a: &PepsTensor, tol: f64) -> Result<PepsSplit> {
    let sym = check_peps_mf_symmetry(a, tol)?;
    if !sym.passed() {
        return Err(Error::SymmetryFailed(format!("max residual {:.3e}", sym.max_residual())));
    }
    let op = a.op();
    let (v, q, rank) = linalg::polar(&op, tol)?;
    let r = v.adjoint() * &v;
    let mut rep = Report::new();
    let nrm = op.norm().max(f64::MIN_POSITIVE);
    rep.check("reconstruction", (&op - &v * &q).norm() / nrm, tol);
    let rank_q = linalg::rank(&q, tol)?;
    let rank_v = linalg::rank(&v, tol)?;
    rep.flag("null_q_equals_null_v", rank_q == rank_v && rank_q == rank);
    let qn = q.norm().max(f64::MIN_POSITIVE);
    for (k, p) in a.pushes.iter().enumerate() {
        let g = linalg::kron_all(&p.factors(&a.basis));
        rep.check(format!("q_commutes[{k}]"), (&q * &g - &g * &q).norm() / qn, tol);
    }
    let split = PolarSplit { v, q, r, rank };
    let (clifford, skipped) = match peps_clifford(a, &split.q) {
        Ok(f) => {
            rep.check("clifford_reconstruction", f.residual, tol.max(1e-9));
            (Some(f), None)
        }
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(PepsSplit { split, report: rep, clifford, clifford_skipped: skipped })
}

fn single(m: &CMat, d: usize) -> Result<PauliVector> {
    PauliVector::from_matrix(m, 1, d, 1e-10).ok_or_else(|| Error::Factorization("factor is not a Weyl-Heisenberg element".into()))
}

fn peps_clifford(a: &PepsTensor, q: &CMat) -> Result<CliffordMagicForm> {
    let basis = &a.basis;
    if !basis.is_weyl_heisenberg() {
        return Err(Error::NotWeylHeisenberg);
    }
    let dd = basis.dim;
    if !qudit_clifford::is_prime(dd) {
        return Err(Error::NonPrimeDimension(dd));
    }
    let mut images = Vec::new();
    for (wire, leg) in [(4usize, Leg::Left), (5usize, Leg::Down)] {
        for gen in [PauliVector::x(1, dd, 0), PauliVector::z(1, dd, 0)] {
            let mut found = None;
            for p in a.pushes.iter().filter(|p| p.from == leg) {
                let f = p.factors(basis);
                let k = single(&f[leg.index()].adjoint(), dd)?;
                let other = if leg == Leg::Left { Leg::Down } else { Leg::Left };
                if !single(&f[other.index()], dd)?.is_identity() {
                    continue;
                }
                let mut out = PauliVector::identity(0, dd);
                for m in &f {
                    out = out.tensor(&single(&m.adjoint(), dd)?);
                }
                out = out.tensor(&single(&f[Leg::Up.index()].transpose(), dd)?);
                out = out.tensor(&single(&f[Leg::Right.index()].transpose(), dd)?);
                if k == gen {
                    found = Some(out);
                } else if k.inverse() == gen {
                    found = Some(out.inverse());
                }
                if found.is_some() {
                    break;
                }
            }
            let img = found.ok_or_else(|| {
                Error::Precondition(format!("no push from the {} leg realizes a generator", leg.name()))
            })?;
            let mut src = PauliVector::identity(6, dd);
            src.v[wire] = gen.v[0];
            src.w[wire] = gen.w[0];
            images.push((src, img));
        }
    }
    let map = PartialCliffordMap { n: 6, d: dd, images };
    let u_c = qudit_clifford::synthesize_clifford(&map)?;
    mf_mps::clifford_magic_general(&peps_sideways(q, dd), u_c)
}

/// Q = Σ_i α_i P_i† ⊗ P_i^T ⊗ P_i^T ⊗ P_i† on (l,u,r,d), with a push
/// between every ordered pair of distinct legs for every element.
pub fn topo_solution(basis: &MfBasis, alpha: &[C64]) -> Result<PepsTensor> {
    let table = basis.cocycle.as_ref().ok_or(Error::NotAGroup)?;
    if !table.abelian {
        return Err(Error::NonAbelian);
    }
    if alpha.len() != basis.size() {
        return Err(Error::DimensionMismatch(format!("{} coefficients for {} elements", alpha.len(), basis.size())));
    }
    if alpha.iter().all(|a| a.norm() == 0.0) {
        return Err(Error::Precondition("alpha must not vanish".into()));
    }
    let dd = basis.dim;
    let n = dd.pow(4);
    let mut q = CMat::zeros(n, n);
    for (a, p) in alpha.iter().zip(&basis.elements) {
        let pd = p.adjoint();
        let pt = p.transpose();
        q += linalg::kron_all(&[pd.clone(), pt.clone(), pt, pd]) * *a;
    }
    let mut pushes = Vec::new();
    for i in 0..basis.size() {
        for from in LEGS {
            for to in LEGS {
                if from != to {
                    pushes.push(q_form_push(basis, from, i, vec![(to, i)]));
                }
            }
        }
    }
    PepsTensor::from_op(&q, basis.clone(), pushes)
}

/// A push on a Q-form tensor with its induced correction G† on the
/// physical sub-legs.
pub fn q_form_push(basis: &MfBasis, from: Leg, p_in: usize, to: Vec<(Leg, usize)>) -> PushRelation {
    let mut p = PushRelation { from, p_in, to, u_phys: CMat::zeros(0, 0) };
    p.u_phys = linalg::kron_all(&p.factors(basis)).adjoint();
    p
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TopoSymmetrySpec {
    pub subgroup: Vec<usize>,
    pub phi: f64,
}

impl TopoSymmetrySpec {
    pub fn validate(&self, basis: &MfBasis) -> Result<()> {
        if self.subgroup.is_empty() {
            return Err(Error::Precondition("empty subgroup".into()));
        }
        for &a in &self.subgroup {
            for &b in &self.subgroup {
                let k = basis.product(a, b)?.0;
                if !self.subgroup.contains(&k) {
                    return Err(Error::Precondition(format!(
                        "subgroup not closed: {}·{} = {}",
                        basis.labels[a], basis.labels[b], basis.labels[k]
                    )));
                }
            }
        }
        let m = self.order(basis)?;
        let x = m as f64 * self.phi / (2.0 * PI);
        if (x - x.round()).abs() > 1e-9 {
            return Err(Error::Precondition(format!("n·φ must vanish mod 2π (n = {m})")));
        }
        Ok(())
    }

    /// Exponent of the subgroup.
    pub fn order(&self, basis: &MfBasis) -> Result<usize> {
        let id = basis.identity_index().ok_or(Error::NotAGroup)?;
        let mut n = 1;
        for &g in &self.subgroup {
            let mut k = 1;
            let mut x = g;
            while x != id {
                x = basis.product(x, g)?.0;
                k += 1;
                if k > basis.size() {
                    return Err(Error::NotAGroup);
                }
            }
            n = lcm(n, k);
        }
        Ok(n)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

fn wrap(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

/// Verifies A = e^{iφ_M}·(M on left and down, M† on up and right)·A for
/// every M of the subgroup; φ of the first non-identity element must equal
/// the given φ. With `alpha`, also checks α_{M P_i} = e^{iφ}·α_{P_i}.
pub fn check_topo_symmetry(a: &PepsTensor, spec: &TopoSymmetrySpec, alpha: Option<&[C64]>, tol: f64) -> Result<(Report, Vec<f64>)> {
    let basis = &a.basis;
    spec.validate(basis)?;
    let op = a.op();
    let mut rep = Report::new();
    let mut phis = Vec::new();
    let id = basis.identity_index().ok_or(Error::NotAGroup)?;
    for &m in &spec.subgroup {
        let mm = &basis.elements[m];
        let md = mm.adjoint();
        let g = kron_on(
            basis.dim,
            &LEGS,
            &[
                (Leg::Left, leg_factor(Leg::Left, mm)),
                (Leg::Up, leg_factor(Leg::Up, &md)),
                (Leg::Right, leg_factor(Leg::Right, &md)),
                (Leg::Down, leg_factor(Leg::Down, mm)),
            ],
        );
        let t = &op * g;
        let (cfit, res) = linalg::fit_scale_mat(&op, &t);
        rep.check(format!("topo[{}]", basis.labels[m]), res + (cfit.norm() - 1.0).abs(), tol);
        let phi = cfit.arg();
        phis.push(phi);
        if let Some(alpha) = alpha {
            let mut worst: f64 = 0.0;
            let ph = C64::from_polar(1.0, phi);
            for i in 0..basis.size() {
                let (j, _) = basis.product(m, i)?;
                worst = worst.max((alpha[j] - ph * alpha[i]).norm());
            }
            let an = alpha.iter().map(|z| z.norm()).fold(0.0, f64::max);
            rep.check(format!("alpha_relation[{}]", basis.labels[m]), worst / an, tol);
        }
    }
    if let Some(pos) = spec.subgroup.iter().position(|&m| m != id) {
        rep.check("phi_matches", wrap(phis[pos] - spec.phi).abs(), 1e-8);
    }
    Ok((rep, phis))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransferSpectrum {
    #[serde(rename = "L")]
    pub l: usize,
    pub labels: Vec<String>,
    pub e: Vec<C64>,
    pub t: Vec<C64>,
    pub sorted_magnitudes: Vec<f64>,
    pub degeneracy_of_max: usize,
}

pub fn degeneracy_of_max(mags: &[f64]) -> usize {
    let max = mags.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return mags.len();
    }
    mags.iter().filter(|&&m| (max - m) <= 1e-8 * max).count()
}

/// e_i = Σ_j α_j·conj(α_{k(i,j)}) with P_i† P_j ∝ P_{k(i,j)}; t_i = e_i^L.
pub fn transfer_spectrum_analytic(alpha: &[C64], basis: &MfBasis, l: usize) -> Result<TransferSpectrum> {
    let table = basis.cocycle.as_ref().ok_or(Error::NotAGroup)?;
    if !table.abelian {
        return Err(Error::NonAbelian);
    }
    if l == 0 {
        return Err(Error::Precondition("L must be positive".into()));
    }
    if alpha.len() != basis.size() {
        return Err(Error::DimensionMismatch(format!("{} coefficients for {} elements", alpha.len(), basis.size())));
    }
    let n = basis.size();
    let mut e = Vec::with_capacity(n);
    for i in 0..n {
        let (inv, _) = basis.inverse(i)?;
        let mut s = ZERO;
        for (j, aj) in alpha.iter().enumerate() {
            let (k, _) = basis.product(inv, j)?;
            s += aj * alpha[k].conj();
        }
        e.push(s);
    }
    let t: Vec<C64> = e.iter().map(|x| x.powu(l as u32)).collect();
    let mut mags: Vec<f64> = t.iter().map(|x| x.norm()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let degeneracy_of_max = degeneracy_of_max(&mags);
    Ok(TransferSpectrum { l, labels: basis.labels.clone(), e, t, sorted_magnitudes: mags, degeneracy_of_max })
}

/// Eigenvalues of the ring of L copies of E = Σ_s A ⊗ A* contracted
/// sideways with periodic wrap, as a map from the down legs to the up legs.
pub fn transfer_matrix_brute(a: &PepsTensor, l: usize) -> Result<Vec<C64>> {
    let dd = a.bond_dim();
    if l == 0 {
        return Err(Error::Precondition("L must be positive".into()));
    }
    let size = (dd as f64).powi(2 * l as i32);
    if size > 4096.0 {
        return Err(Error::SizeGuard(format!("D^(2L) = {size} exceeds 4096")));
    }
    let n = dd * dd;
    let d = a.phys_dim();
    // E^{d,u}[(l,l'),(r,r')]
    let mut e: Vec<CMat> = vec![CMat::zeros(n, n); n * n];
    let t = &a.tensor;
    for li in 0..dd {
        for ui in 0..dd {
            for ri in 0..dd {
                for di in 0..dd {
                    for lj in 0..dd {
                        for uj in 0..dd {
                            for rj in 0..dd {
                                for dj in 0..dd {
                                    let mut s = ZERO;
                                    for p in 0..d {
                                        s += t.get(&[li, ui, ri, di, p]) * t.get(&[lj, uj, rj, dj, p]).conj();
                                    }
                                    if s.norm() > 0.0 {
                                        let dn = di * dd + dj;
                                        let un = ui * dd + uj;
                                        e[dn * n + un][(li * dd + lj, ri * dd + rj)] += s;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let big = n.pow(l as u32);
    let mut m = CMat::zeros(big, big);
    fill_ring(&e, n, l, 0, 0, 0, &CMat::identity(n, n), &mut m);
    linalg::eigvals(&m)
}

fn fill_ring(e: &[CMat], n: usize, l: usize, depth: usize, row: usize, col: usize, prefix: &CMat, m: &mut CMat) {
    if depth == l {
        m[(row, col)] = prefix.trace();
        return;
    }
    for dn in 0..n {
        for un in 0..n {
            let blk = &e[dn * n + un];
            if blk.iter().all(|z| z.norm() == 0.0) {
                continue;
            }
            let next = prefix * blk;
            fill_ring(e, n, l, depth + 1, row * n + dn, col * n + un, &next, m);
        }
    }
}

/// Matches the nonzero brute-force eigenvalues, rescaled by D^{2L}, against
/// t_i with multiplicity. Returns the worst relative mismatch.
pub fn compare_transfer(brute: &[C64], analytic: &TransferSpectrum, dd: usize) -> f64 {
    let scale = (dd as f64).powi(2 * analytic.l as i32);
    let tmax = analytic.t.iter().map(|x| x.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut want: Vec<C64> = analytic.t.iter().copied().filter(|x| x.norm() > 1e-9 * tmax).collect();
    let got: Vec<C64> = brute.iter().map(|x| x / scale).filter(|x| x.norm() > 1e-9 * tmax).collect();
    if want.len() != got.len() {
        return f64::INFINITY;
    }
    let mut worst: f64 = 0.0;
    for g in got {
        let (k, dist) = want
            .iter()
            .enumerate()
            .map(|(k, w)| (k, (w - g).norm()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .expect("same length");
        worst = worst.max(dist / tmax);
        want.remove(k);
    }
    worst
}

pub fn degeneracy_report(basis: &MfBasis, spec: &TopoSymmetrySpec, alpha: &[C64], l: usize, tol: f64) -> Result<(Report, TransferSpectrum)> {
    spec.validate(basis)?;
    let m = spec.subgroup.len();
    if !l.is_multiple_of(m) {
        return Err(Error::Precondition(format!("L = {l} is not a multiple of the subgroup order {m}")));
    }
    let ts = transfer_spectrum_analytic(alpha, basis, l)?;
    let mut rep = Report::new();
    rep.flag(format!("degeneracy_signature (≥ {m})"), ts.degeneracy_of_max >= m);
    let norm2: f64 = alpha.iter().map(|z| z.norm_sqr()).sum();
    let bound = norm2.powi(l as i32);
    let max = ts.sorted_magnitudes[0];
    rep.check("max_equals_norm_power", (max - bound).abs() / bound.max(f64::MIN_POSITIVE), tol);
    Ok((rep, ts))
}

/// Numerical rank of A as a map from the D⁴ virtual space to the physical
/// space. A nontrivial topological subgroup forces rank deficiency.
pub fn injectivity_check(a: &PepsTensor, spec: Option<&TopoSymmetrySpec>, tol: f64) -> Result<(Report, usize)> {
    let op = a.op();
    let rank = linalg::rank(&op, tol)?;
    let full = a.bond_dim().pow(4);
    let mut rep = Report::new();
    match spec {
        Some(s) if s.subgroup.len() > 1 => {
            rep.flag("rank_deficient", rank < full);
        }
        _ => {
            rep.flag("rank_reported", true);
        }
    }
    Ok((rep, rank))
}

/// Whether every single-bond defect on an open rows×cols patch can be
/// removed when each site may toggle the defect sets in `rules` (each rule
/// lists the legs it touches, the absorbing leg included). Decided exactly
/// over GF(2) for order-two defects.
pub fn patch_correctable(rows: usize, cols: usize, rules: &[Vec<Leg>]) -> bool {
    // internal bonds: horizontal then vertical
    let h = |r: usize, c: usize| r * (cols - 1) + c;
    let nh = rows * (cols - 1);
    let v = |r: usize, c: usize| nh + r * cols + c; // between row r (above) and r+1
    let nb = nh + (rows - 1) * cols;
    let bond_of = |r: usize, c: usize, leg: Leg| -> Option<usize> {
        match leg {
            Leg::Left => (c > 0).then(|| h(r, c - 1)),
            Leg::Right => (c + 1 < cols).then(|| h(r, c)),
            Leg::Up => (r > 0).then(|| v(r - 1, c)),
            Leg::Down => (r + 1 < rows).then(|| v(r, c)),
        }
    };
    let mut gens: Vec<Vec<u8>> = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            for rule in rules {
                let mut g = vec![0u8; nb];
                for &leg in rule {
                    if let Some(b) = bond_of(r, c, leg) {
                        g[b] ^= 1;
                    }
                }
                gens.push(g);
            }
        }
    }
    let rank_of = |mut m: Vec<Vec<u8>>| -> usize {
        let mut rank = 0;
        for col in 0..nb {
            if let Some(p) = (rank..m.len()).find(|&i| m[i][col] == 1) {
                m.swap(rank, p);
                for i in 0..m.len() {
                    if i != rank && m[i][col] == 1 {
                        let pivot = m[rank].clone();
                        for (x, y) in m[i].iter_mut().zip(&pivot) {
                            *x ^= y;
                        }
                    }
                }
                rank += 1;
            }
        }
        rank
    };
    let base = rank_of(gens.clone());
    (0..nb).all(|b| {
        let mut with = gens.clone();
        let mut e = vec![0u8; nb];
        e[b] = 1;
        with.push(e);
        rank_of(with) == base
    })
}

/// Coefficients with α_v = ω^{k v} on X-powers and zero elsewhere.
pub fn charge_alpha(basis: &MfBasis, k: usize) -> Vec<C64> {
    let dd = basis.dim;
    let mut a = vec![ZERO; basis.size()];
    for v in 0..dd {
        a[basis.wh_index(v, 0)] = C64::from_polar(1.0, 2.0 * PI * (k * v) as f64 / dd as f64);
    }
    a
}

/// Qubit family with α = 1 on {I, X} and α on {Z, XZ}.
pub fn interpolated_alpha(alpha: f64) -> Vec<C64> {
    vec![ONE, C64::new(alpha, 0.0), ONE, C64::new(alpha, 0.0)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mf_basis::weyl_heisenberg_basis;
    use crate::mf_mps::is_stabilizer_state;
    use crate::tensors::c;

    #[test]
    fn topo_tensors_pass_symmetry_and_isometry() {
        for dd in [2, 3] {
            let b = weyl_heisenberg_basis(dd).unwrap();
            for alpha in [charge_alpha(&b, 0), charge_alpha(&b, 1), vec![ONE; dd * dd]] {
                let a = topo_solution(&b, &alpha).unwrap();
                assert!(check_peps_mf_symmetry(&a, 1e-12).unwrap().passed());
                let (rep, _) = peps_isometry_check(&a, 1e-12).unwrap();
                assert!(rep.passed());
            }
        }
    }

    #[test]
    fn bell_pair_isometry_constant() {
        let b = weyl_heisenberg_basis(2).unwrap();
        let a = topo_solution(&b, &[ONE, ZERO, ZERO, ZERO]).unwrap();
        let (rep, k) = peps_isometry_check(&a, 1e-12).unwrap();
        assert!(rep.passed());
        assert!((k - c(4.0, 0.0)).norm() < 1e-12);
        let (_, rank) = injectivity_check(&a, None, 1e-10).unwrap();
        assert_eq!(rank, 16);
    }

    #[test]
    fn random_tensor_fails() {
        let b = weyl_heisenberg_basis(2).unwrap();
        let a = topo_solution(&b, &charge_alpha(&b, 0)).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let r = PepsTensor::from_op(&linalg::random_matrix(16, 16, &mut rng), b, a.pushes.clone()).unwrap();
        assert!(!check_peps_mf_symmetry(&r, 1e-9).unwrap().passed());
        assert!(!peps_isometry_check(&r, 1e-9).unwrap().0.passed());
    }

    #[test]
    fn toric_split_is_stabilizer() {
        let b = weyl_heisenberg_basis(2).unwrap();
        let a = topo_solution(&b, &charge_alpha(&b, 0)).unwrap();
        let s = peps_split_polar(&a, 1e-10).unwrap();
        assert!(s.report.passed(), "{:?}", s.report.failures());
        let f = s.clifford.unwrap();
        assert!(f.residual < 1e-9);
        assert!(is_stabilizer_state(&f.psi, 4, 2, 1e-9));
    }

    #[test]
    fn charged_and_interpolated_splits() {
        let b = weyl_heisenberg_basis(2).unwrap();
        let a = topo_solution(&b, &charge_alpha(&b, 1)).unwrap();
        let s = peps_split_polar(&a, 1e-10).unwrap();
        assert!(s.report.passed());
        let a = topo_solution(&b, &interpolated_alpha(0.3)).unwrap();
        let s = peps_split_polar(&a, 1e-10).unwrap();
        assert!(s.report.passed(), "{:?}", s.report.failures());
        let f = s.clifford.unwrap();
        assert!(f.residual < 1e-9);
        assert!(!is_stabilizer_state(&f.psi, 4, 2, 1e-9));
    }

    #[test]
    fn topo_symmetry_phases() {
        for dd in [2, 3] {
            let b = weyl_heisenberg_basis(dd).unwrap();
            let x = b.wh_index(1, 0);
            let subgroup: Vec<usize> = (0..dd).map(|v| b.wh_index(v, 0)).collect();
            for k in 0..dd {
                let alpha = charge_alpha(&b, k);
                let a = topo_solution(&b, &alpha).unwrap();
                let pos = subgroup.iter().position(|&m| m == x).unwrap();
                let want = wrap(2.0 * PI * k as f64 / dd as f64);
                let spec = TopoSymmetrySpec { subgroup: subgroup.clone(), phi: want };
                let (rep, phis) = check_topo_symmetry(&a, &spec, Some(&alpha), 1e-10).unwrap();
                assert!(rep.passed(), "D={dd} k={k}: {:?}", rep.failures());
                assert!((wrap(phis[pos] - want)).abs() < 1e-9);
                let z = TopoSymmetrySpec { subgroup: vec![b.identity_index().unwrap(), b.wh_index(0, 1)], phi: 0.0 };
                if dd == 2 {
                    assert!(!check_topo_symmetry(&a, &z, None, 1e-10).unwrap().0.passed());
                }
            }
        }
    }

    #[test]
    fn interpolated_spectrum() {
        let b = weyl_heisenberg_basis(2).unwrap();
        for al in [0.0, 0.3, 0.7, 1.0] {
            let ts = transfer_spectrum_analytic(&interpolated_alpha(al), &b, 1).unwrap();
            let want = [2.0 + 2.0 * al * al, 4.0 * al, 2.0 + 2.0 * al * al, 4.0 * al];
            for (e, w) in ts.e.iter().zip(want) {
                assert!((e - c(w, 0.0)).norm() < 1e-12);
            }
        }
        let ts = transfer_spectrum_analytic(&interpolated_alpha(1.0), &b, 2).unwrap();
        assert_eq!(ts.degeneracy_of_max, 4);
        let ts = transfer_spectrum_analytic(&[ONE, ZERO, ZERO, ZERO], &b, 2).unwrap();
        assert_eq!(ts.degeneracy_of_max, 1);
    }

    #[test]
    fn brute_matches_analytic_small() {
        let b = weyl_heisenberg_basis(2).unwrap();
        for al in [0.5, 1.0] {
            let alpha = interpolated_alpha(al);
            let a = topo_solution(&b, &alpha).unwrap();
            for l in [2, 3] {
                let brute = transfer_matrix_brute(&a, l).unwrap();
                let ts = transfer_spectrum_analytic(&alpha, &b, l).unwrap();
                assert!(compare_transfer(&brute, &ts, 2) < 1e-8);
            }
        }
    }

    #[test]
    fn degeneracy_and_injectivity() {
        let b = weyl_heisenberg_basis(2).unwrap();
        let x = b.wh_index(1, 0);
        let id = b.identity_index().unwrap();
        let spec = TopoSymmetrySpec { subgroup: vec![id, x], phi: 0.0 };
        let alpha = interpolated_alpha(0.4);
        let (rep, ts) = degeneracy_report(&b, &spec, &alpha, 2, 1e-10).unwrap();
        assert!(rep.passed());
        assert!((ts.sorted_magnitudes[0] - (2.0 + 2.0 * 0.16f64).powi(2)).abs() < 1e-10);
        assert!(degeneracy_report(&b, &spec, &alpha, 3, 1e-10).is_err());
        let a = topo_solution(&b, &alpha).unwrap();
        let (rep, rank) = injectivity_check(&a, Some(&spec), 1e-10).unwrap();
        assert!(rep.passed() && rank < 16);
    }

    #[test]
    fn bad_symmetry_cannot_drain() {
        let good = vec![vec![Leg::Left, Leg::Up, Leg::Right], vec![Leg::Down, Leg::Up, Leg::Right]];
        let bad = vec![vec![Leg::Left, Leg::Up, Leg::Right, Leg::Down]];
        assert!(patch_correctable(3, 3, &good));
        assert!(!patch_correctable(3, 3, &bad));
    }
}
