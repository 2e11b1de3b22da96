//! MPS tensors with the measurement-and-feedback symmetry.
//!
//! A tensor has legs `(left, phys, right)`. A constraint `(P, U, P′)` asserts
//! Σ_{s'} U[s,s']·P·A^{s'} = A^s·P′ where P acts on the left bond and P′ on the
//! right bond. Reading A as the operator A_op[s, (l,r)] this is
//! U·A_op·G = A_op with G = P^T ⊗ P′†.
//!
//! Q-form tensors carry the physical pair `(pl, pr)` fused into `phys`; their
//! induced correction is U = P* ⊗ P′.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mf_basis::{self, MfBasis};
use crate::qudit_clifford::{self, PartialCliffordMap, PauliVector};
use crate::report::Report;
use crate::tensors::linalg::{self, CMat};
use crate::tensors::{c, DenseTensor, C64, ONE, ZERO};

#[derive(Clone, Debug, PartialEq)]
pub struct SymmetryConstraint {
    pub p_in: usize,
    /// `None` asks the solver to find U jointly with A.
    pub u_phys: Option<CMat>,
    pub p_out: usize,
}

impl SymmetryConstraint {
    pub fn new(p_in: usize, u: CMat, p_out: usize) -> Self {
        SymmetryConstraint { p_in, u_phys: Some(u), p_out }
    }

    pub fn u(&self) -> Result<&CMat> {
        self.u_phys
            .as_ref()
            .ok_or_else(|| Error::Precondition(format!("constraint {}→{} has no physical unitary", self.p_in, self.p_out)))
    }
}

/// Builds a constraint from labels; label phases are folded into U so the
/// stored relation uses phase-free basis elements.
pub fn constraint_from_labels(basis: &MfBasis, p_in: &str, u: Option<CMat>, p_out: &str) -> Result<SymmetryConstraint> {
    let (i, c1) = basis.resolve_label(p_in)?;
    let (j, c2) = basis.resolve_label(p_out)?;
    Ok(SymmetryConstraint { p_in: i, u_phys: u.map(|u| u * (c1 * c2.conj())), p_out: j })
}

/// G = P_in^T ⊗ P_out†.
pub fn virtual_action(basis: &MfBasis, k: &SymmetryConstraint) -> CMat {
    linalg::kron(&basis.elements[k.p_in].transpose(), &basis.elements[k.p_out].adjoint())
}

#[derive(Clone, Debug)]
pub struct MpsTensor {
    pub tensor: DenseTensor,
    pub basis: MfBasis,
    pub constraints: Vec<SymmetryConstraint>,
}

impl MpsTensor {
    pub fn new(tensor: DenseTensor, basis: MfBasis, constraints: Vec<SymmetryConstraint>) -> Result<Self> {
        let t = tensor.permuted(&["left", "phys", "right"])?;
        let (dl, d, dr) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        if dl != basis.dim || dr != basis.dim {
            return Err(Error::DimensionMismatch(format!(
                "virtual legs ({dl}, {dr}) vs basis dimension {}",
                basis.dim
            )));
        }
        for k in &constraints {
            if k.p_in >= basis.size() || k.p_out >= basis.size() {
                return Err(Error::Precondition("constraint references a missing basis element".into()));
            }
            if let Some(u) = &k.u_phys {
                if u.shape() != (d, d) {
                    return Err(Error::DimensionMismatch(format!("u_phys is {:?}, physical dimension {d}", u.shape())));
                }
                let r = linalg::unitarity_residual(u);
                if r > 1e-8 {
                    return Err(Error::NotUnitary(r));
                }
            }
        }
        Ok(MpsTensor { tensor: t, basis, constraints })
    }

    /// A tensor from its operator reading A_op[s, (l,r)].
    pub fn from_op(op: &CMat, basis: MfBasis, constraints: Vec<SymmetryConstraint>) -> Result<Self> {
        let dd = basis.dim;
        if op.ncols() != dd * dd {
            return Err(Error::DimensionMismatch(format!("operator has {} columns, want {}", op.ncols(), dd * dd)));
        }
        let t = DenseTensor::from_fn(&["left", "phys", "right"], &[dd, op.nrows(), dd], |i| op[(i[1], i[0] * dd + i[2])])?;
        Self::new(t, basis, constraints)
    }

    pub fn phys_dim(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn bond_dim(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn op(&self) -> CMat {
        self.tensor.to_matrix(&["phys"], &["left", "right"]).expect("legs fixed at construction")
    }

    /// A^s as a D×D matrix.
    pub fn slice(&self, s: usize) -> CMat {
        let dd = self.bond_dim();
        CMat::from_fn(dd, dd, |l, r| self.tensor.get(&[l, s, r]))
    }
}

pub fn check_mf_symmetry(a: &MpsTensor, tol: f64) -> Result<Report> {
    let op = a.op();
    let nrm = op.norm().max(f64::MIN_POSITIVE);
    let mut rep = Report::new();
    for (k, con) in a.constraints.iter().enumerate() {
        let g = virtual_action(&a.basis, con);
        let u = con.u()?;
        let res = (u * &op * g - &op).norm() / nrm;
        rep.check(
            format!("constraint[{k}] {}→{}", a.basis.labels[con.p_in], a.basis.labels[con.p_out]),
            res,
            tol,
        );
    }
    Ok(rep)
}

fn stacked_system(basis: &MfBasis, cons: &[SymmetryConstraint], us: &[CMat], d: usize) -> CMat {
    let dd = basis.dim;
    let n = d * dd * dd;
    let mut m = CMat::zeros(n * cons.len().max(1), n);
    for (k, con) in cons.iter().enumerate() {
        let g = virtual_action(basis, con);
        // row-major vec(U·A·G) = (U ⊗ G^T)·vec(A)
        let blk = CMat::identity(n, n) - linalg::kron(&us[k], &g.transpose());
        m.view_mut((k * n, 0), (n, n)).copy_from(&blk);
    }
    m
}

fn op_from_vec(v: &[C64], d: usize, dd: usize) -> CMat {
    CMat::from_fn(d, dd * dd, |s, j| v[s * dd * dd + j])
}

/// Orthonormal basis of the solution space, as operator readings A_op.
pub fn solve_symmetry_family(basis: &MfBasis, constraints: &[SymmetryConstraint], d: usize, dd: usize) -> Result<Vec<DenseTensor>> {
    if basis.dim != dd {
        return Err(Error::DimensionMismatch(format!("basis dimension {} vs D = {dd}", basis.dim)));
    }
    let us: Vec<CMat> = if constraints.iter().any(|k| k.u_phys.is_none()) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let sol = solve_unknown_corrections(basis, constraints, d, 200, &mut rng)?;
        if sol.residual > 1e-8 {
            return Ok(Vec::new());
        }
        sol.us
    } else {
        constraints.iter().map(|k| k.u().cloned()).collect::<Result<_>>()?
    };
    for u in &us {
        if u.shape() != (d, d) {
            return Err(Error::DimensionMismatch(format!("u_phys is {:?}, physical dimension {d}", u.shape())));
        }
    }
    let n = d * dd * dd;
    let ns = if constraints.is_empty() {
        CMat::identity(n, n)
    } else {
        linalg::nullspace(&stacked_system(basis, constraints, &us, d), 1e-9)?
    };
    (0..ns.ncols())
        .map(|j| {
            let v: Vec<C64> = ns.column(j).iter().copied().collect();
            DenseTensor::from_fn(&["left", "phys", "right"], &[dd, d, dd], |i| v[i[1] * dd * dd + i[0] * dd + i[2]])
        })
        .collect()
}

/// Resolved corrections from the alternating solve.
#[derive(Clone, Debug)]
pub struct AlsSolution {
    pub us: Vec<CMat>,
    pub op: CMat,
    pub residual: f64,
    pub iterations: usize,
}

/// Alternating least squares for constraints with unknown U: the A-step takes
/// the least singular vector of the stacked system, the U-step is the
/// orthogonal Procrustes fit of U·(A·G) to A. Unknown U start from P*⊗P′
/// when d = D², else from the identity.
pub fn solve_unknown_corrections<R: Rng + ?Sized>(
    basis: &MfBasis,
    constraints: &[SymmetryConstraint],
    d: usize,
    max_iter: usize,
    rng: &mut R,
) -> Result<AlsSolution> {
    let dd = basis.dim;
    let gs: Vec<CMat> = constraints.iter().map(|k| virtual_action(basis, k)).collect();
    let mut best: Option<AlsSolution> = None;
    for attempt in 0..4 {
        let us: Vec<CMat> = constraints
            .iter()
            .map(|k| match &k.u_phys {
                Some(u) => u.clone(),
                None if attempt > 0 => linalg::random_unitary(d, rng),
                None if d == dd * dd => linalg::kron(&basis.elements[k.p_in].conjugate(), &basis.elements[k.p_out]),
                None => CMat::identity(d, d),
            })
            .collect();
        let sol = als_run(basis, constraints, &gs, us, d, max_iter)?;
        let done = sol.residual < 1e-10;
        if best.as_ref().map(|b| sol.residual < b.residual).unwrap_or(true) {
            best = Some(sol);
        }
        if done {
            break;
        }
    }
    Ok(best.expect("at least one attempt"))
}

fn als_run(
    basis: &MfBasis,
    constraints: &[SymmetryConstraint],
    gs: &[CMat],
    mut us: Vec<CMat>,
    d: usize,
    max_iter: usize,
) -> Result<AlsSolution> {
    let dd = basis.dim;
    let mut op = CMat::zeros(d, dd * dd);
    let mut residual = f64::INFINITY;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let m = stacked_system(basis, constraints, &us, d);
        let (_, _, v) = linalg::svd_full(&m)?;
        let vec: Vec<C64> = v.column(v.ncols() - 1).iter().copied().collect();
        op = op_from_vec(&vec, d, dd);
        for (k, con) in constraints.iter().enumerate() {
            if con.u_phys.is_none() {
                let b = &op * &gs[k];
                let (x, _, y) = linalg::svd_full(&(&op * b.adjoint()))?;
                us[k] = x * y.adjoint();
            }
        }
        residual = (0..constraints.len())
            .map(|k| (&us[k] * &op * &gs[k] - &op).norm())
            .fold(0.0, f64::max)
            / op.norm().max(f64::MIN_POSITIVE);
        if residual < 1e-12 {
            break;
        }
    }
    Ok(AlsSolution { us, op, residual, iterations: it })
}

/// Σ_s A^s A^{s†} ∝ I_D. Returns (pass, constant, relative residual).
pub fn canonical_form_check(a: &MpsTensor, tol: f64) -> (bool, C64, f64) {
    let dd = a.bond_dim();
    let mut m = CMat::zeros(dd, dd);
    for s in 0..a.phys_dim() {
        let x = a.slice(s);
        m += &x * x.adjoint();
    }
    let (k, r) = linalg::fit_scale_mat(&m, &CMat::identity(dd, dd));
    (r <= tol && k.norm() > 0.0, k, r)
}

#[derive(Clone, Debug)]
pub struct PolarSplit {
    /// d × D², the isometric part.
    pub v: CMat,
    /// D² × D², positive semidefinite.
    pub q: CMat,
    /// V†V, the projector onto range(Q).
    pub r: CMat,
    pub rank: usize,
}

impl PolarSplit {
    pub fn injective(&self) -> bool {
        self.rank == self.q.nrows()
    }

    /// Q as a Q-form tensor: legs (left, phys = (pl,pr), right).
    pub fn q_tensor(&self, dd: usize) -> Result<DenseTensor> {
        let q = &self.q;
        DenseTensor::from_fn(&["left", "phys", "right"], &[dd, dd * dd, dd], |i| q[(i[1], i[0] * dd + i[2])])
    }
}

pub fn split_polar(a: &MpsTensor, tol: f64) -> Result<(PolarSplit, Report)> {
    let sym = check_mf_symmetry(a, tol)?;
    if !sym.passed() {
        return Err(Error::SymmetryFailed(format!("max residual {:.3e}", sym.max_residual())));
    }
    let op = a.op();
    let (v, q, rank) = linalg::polar(&op, tol)?;
    let r = v.adjoint() * &v;
    let nrm = op.norm().max(f64::MIN_POSITIVE);
    let mut rep = Report::new();
    rep.check("reconstruction", (&op - &v * &q).norm() / nrm, tol);
    let (vals, _) = linalg::eigh(&q, 1e-8)?;
    let qmax = vals.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let min_eig = vals.last().copied().unwrap_or(0.0);
    rep.check("q_psd", (-min_eig / qmax).max(0.0), tol);
    let rank_q = linalg::rank(&q, tol)?;
    let rank_v = linalg::rank(&v, tol)?;
    rep.flag("null_q_equals_null_v", rank_q == rank_v && rank_q == rank);
    rep.check("r_projector", (&r * &r - &r).norm() + linalg::hermitian_residual(&r), tol);
    for (k, con) in a.constraints.iter().enumerate() {
        let g = virtual_action(&a.basis, con);
        let comm = (&q * &g - &g * &q).norm() / q.norm().max(f64::MIN_POSITIVE);
        rep.check(format!("q_commutes[{k}]"), comm, tol);
    }
    Ok((PolarSplit { v, q, r, rank }, rep))
}

/// V†·U·V against G†·R = (P* ⊗ P′)·R for every constraint.
pub fn correction_consistency(a: &MpsTensor, tol: f64) -> Result<Report> {
    let (split, _) = split_polar(a, tol)?;
    let mut rep = Report::new();
    for (k, (lhs, rhs)) in correction_matrices(a, &split)?.into_iter().enumerate() {
        rep.check(format!("correction_relation[{k}]"), (lhs - rhs).norm(), tol);
    }
    Ok(rep)
}

/// Pairs (V†U V, G†R) per constraint.
pub fn correction_matrices(a: &MpsTensor, split: &PolarSplit) -> Result<Vec<(CMat, CMat)>> {
    a.constraints
        .iter()
        .map(|con| {
            let g = virtual_action(&a.basis, con);
            Ok((split.v.adjoint() * con.u()? * &split.v, g.adjoint() * &split.r))
        })
        .collect()
}

/// Closes constraints over the basis group:
/// (P_a, U_a, P′_a)·(P_b, U_b, P′_b) = (P_aP_b, U_aU_b, P′_aP′_b).
pub fn close_constraints(basis: &MfBasis, constraints: &[SymmetryConstraint], d: usize) -> Result<Vec<SymmetryConstraint>> {
    if basis.cocycle.is_none() {
        return Err(Error::NotAGroup);
    }
    let id = basis.identity_index().ok_or(Error::NotAGroup)?;
    let mut known: BTreeMap<usize, (CMat, usize)> = BTreeMap::new();
    known.insert(id, (CMat::identity(d, d), id));
    for k in constraints {
        known.entry(k.p_in).or_insert((k.u()?.clone(), k.p_out));
    }
    loop {
        let snapshot: Vec<(usize, CMat, usize)> = known.iter().map(|(a, (u, b))| (*a, u.clone(), *b)).collect();
        let mut grew = false;
        for (a, ua, a2) in &snapshot {
            for (b, ub, b2) in &snapshot {
                let (k, c1) = basis.product(*a, *b)?;
                if known.contains_key(&k) {
                    continue;
                }
                let (m, c2) = basis.product(*a2, *b2)?;
                known.insert(k, (ua * ub * (c1 * c2.conj()), m));
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }
    Ok(known.into_iter().map(|(a, (u, b))| SymmetryConstraint::new(a, u, b)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapOrder {
    pub bijective: bool,
    pub order: Option<usize>,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Bijectivity and permutation order of i ↦ p_out(i). With a group basis
/// the map is first extended multiplicatively.
pub fn map_order(constraints: &[SymmetryConstraint], basis: Option<&MfBasis>) -> Result<MapOrder> {
    let pairs: Vec<(usize, usize)> = match basis {
        Some(b) if b.cocycle.is_some() => close_map(b, constraints)?,
        _ => constraints.iter().map(|k| (k.p_in, k.p_out)).collect(),
    };
    let map: BTreeMap<usize, usize> = pairs.iter().copied().collect();
    if map.len() != pairs.len() {
        return Err(Error::Precondition("an element appears twice as p_in".into()));
    }
    let image: BTreeSet<usize> = map.values().copied().collect();
    let domain: BTreeSet<usize> = map.keys().copied().collect();
    let bijective = image.len() == map.len() && image == domain;
    let total = basis.map(|b| domain.len() == b.size()).unwrap_or(true);
    if !bijective {
        return Ok(MapOrder { bijective, order: None });
    }
    let mut order = 1usize;
    for &start in &domain {
        let mut len = 1;
        let mut x = map[&start];
        while x != start {
            x = map[&x];
            len += 1;
        }
        order = order / gcd(order, len) * len;
    }
    Ok(MapOrder { bijective, order: total.then_some(order) })
}

/// Multiplicative closure of the index map only (no unitaries needed).
fn close_map(basis: &MfBasis, constraints: &[SymmetryConstraint]) -> Result<Vec<(usize, usize)>> {
    let id = basis.identity_index().ok_or(Error::NotAGroup)?;
    let mut known: BTreeMap<usize, usize> = BTreeMap::new();
    known.insert(id, id);
    for k in constraints {
        known.entry(k.p_in).or_insert(k.p_out);
    }
    loop {
        let snap: Vec<(usize, usize)> = known.iter().map(|(a, b)| (*a, *b)).collect();
        let mut grew = false;
        for (a, a2) in &snap {
            for (b, b2) in &snap {
                let k = basis.product(*a, *b)?.0;
                if let std::collections::btree_map::Entry::Vacant(e) = known.entry(k) {
                    e.insert(basis.product(*a2, *b2)?.0);
                    grew = true;
                }
            }
        }
        if !grew {
            return Ok(known.into_iter().collect());
        }
    }
}

#[derive(Clone, Debug)]
pub struct Blocked {
    pub tensor: MpsTensor,
    /// Elements that can still be pushed through the block.
    pub image: Vec<usize>,
}

/// Contracts `k` copies along the bond; the physical leg fuses site 1 as the
/// most significant digit. Constraints are chained through the block.
pub fn block(a: &MpsTensor, k: usize) -> Result<Blocked> {
    if k == 0 {
        return Err(Error::Precondition("block size must be at least 1".into()));
    }
    let d = a.phys_dim();
    let cons = if a.basis.cocycle.is_some() {
        close_constraints(&a.basis, &a.constraints, d)?
    } else {
        a.constraints.clone()
    };
    let mut t = a.tensor.relabel(&[("phys", "phys0")])?;
    for j in 1..k {
        let next = a.tensor.relabel(&[("left", "bond"), ("phys", &format!("phys{j}"))])?;
        let cur = t.relabel(&[("right", "bond")])?;
        t = cur.contract(&next, &[("bond", "bond")])?;
    }
    let phys: Vec<String> = (0..k).map(|j| format!("phys{j}")).collect();
    let pr: Vec<&str> = phys.iter().map(String::as_str).collect();
    let mut order = vec!["left"];
    order.extend(&pr);
    order.push("right");
    let t = t.permuted(&order)?.fuse(&pr, "phys")?;
    let by_in: BTreeMap<usize, &SymmetryConstraint> = cons.iter().map(|c| (c.p_in, c)).collect();
    let mut out = Vec::new();
    for c0 in &cons {
        let mut u = c0.u()?.clone();
        let mut cur = c0.p_out;
        let mut ok = true;
        for _ in 1..k {
            match by_in.get(&cur) {
                Some(n) => {
                    u = linalg::kron(&u, n.u()?);
                    cur = n.p_out;
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            out.push(SymmetryConstraint::new(c0.p_in, u, cur));
        }
    }
    let image: BTreeSet<usize> = out.iter().map(|c| c.p_out).collect();
    Ok(Blocked { tensor: MpsTensor::new(t, a.basis.clone(), out)?, image: image.into_iter().collect() })
}

/// Q = Σ_i α_i P_i* ⊗ P_i with constraints (P_i, P_i* ⊗ P_i, P_i).
pub fn spt_solution(basis: &MfBasis, alpha: &[C64]) -> Result<MpsTensor> {
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
    let mut q = CMat::zeros(dd * dd, dd * dd);
    for (a, p) in alpha.iter().zip(&basis.elements) {
        q += linalg::kron(&p.conjugate(), p) * *a;
    }
    let cons = (0..basis.size())
        .map(|i| SymmetryConstraint::new(i, induced_correction(basis, i, i), i))
        .collect();
    MpsTensor::from_op(&q, basis.clone(), cons)
}

/// The physical correction P_i* ⊗ P_j of a Q-form tensor.
pub fn induced_correction(basis: &MfBasis, p_in: usize, p_out: usize) -> CMat {
    linalg::kron(&basis.elements[p_in].conjugate(), &basis.elements[p_out])
}

/// Compares the solution space of the SPT-type symmetry with
/// span{P_i* ⊗ P_i} through their projectors.
pub fn spt_cross_check(basis: &MfBasis, tol: f64) -> Result<Report> {
    let dd = basis.dim;
    let cons: Vec<SymmetryConstraint> = (0..basis.size())
        .map(|i| SymmetryConstraint::new(i, induced_correction(basis, i, i), i))
        .collect();
    let sols = solve_symmetry_family(basis, &cons, dd * dd, dd)?;
    let n = dd.pow(4);
    let solved = CMat::from_fn(n, sols.len(), |r, j| sols[j].data()[r]);
    let mut terms = CMat::zeros(n, basis.size());
    for (i, p) in basis.elements.iter().enumerate() {
        let q = linalg::kron(&p.conjugate(), p);
        let t = DenseTensor::from_fn(&["left", "phys", "right"], &[dd, dd * dd, dd], |x| q[(x[1], x[0] * dd + x[2])])?;
        for (r, z) in t.data().iter().enumerate() {
            terms[(r, i)] = *z;
        }
    }
    let span = linalg::column_span(&terms, 1e-10)?;
    let mut rep = Report::new();
    rep.flag("dimension", solved.ncols() == span.ncols());
    let diff = (linalg::projector(&solved) - linalg::projector(&span)).norm();
    rep.check("projector_equality", diff, tol);
    Ok(rep)
}

#[derive(Clone, Debug)]
pub struct CliffordMagicForm {
    pub u_c: CMat,
    /// State on the physical pair (D² entries).
    pub psi: Vec<C64>,
    pub scale: f64,
    pub residual: f64,
}

/// Q read sideways: V_Q[(pl, pr, r), l] = Q[(pl, pr), (l, r)].
pub fn sideways_isometry(q: &CMat, dd: usize) -> CMat {
    CMat::from_fn(dd * dd * dd, dd, |row, l| q[(row / dd, l * dd + row % dd)])
}

/// Decomposes V_Q = scale · U_C (ψ ⊗ I) with U_C synthesized from the
/// constraint map on the generators X and Z.
pub fn clifford_magic_decompose(split: &PolarSplit, a: &MpsTensor) -> Result<CliffordMagicForm> {
    let u_c = clifford_for_map(&a.basis, &a.constraints, a.phys_dim())?;
    clifford_magic_with(&split.q, a.bond_dim(), u_c)
}

/// The Clifford fixed by X_2 ↦ X* ⊗ X′ ⊗ X′* and Z_2 ↦ (Z* ⊗ Z′ ⊗ Z′*)^{-1}
/// on three D-level wires.
pub fn clifford_for_map(basis: &MfBasis, constraints: &[SymmetryConstraint], d: usize) -> Result<CMat> {
    if !basis.is_weyl_heisenberg() {
        return Err(Error::NotWeylHeisenberg);
    }
    let dd = basis.dim;
    if !qudit_clifford::is_prime(dd) {
        return Err(Error::NonPrimeDimension(dd));
    }
    let closed = close_map(basis, constraints)?;
    let lookup = |i: usize| closed.iter().find(|p| p.0 == i).map(|p| p.1);
    let xi = basis.wh_index(1, 0);
    let zi = basis.wh_index(0, 1);
    let out = |i: usize| -> Result<PauliVector> {
        let j = lookup(i).ok_or_else(|| Error::Precondition(format!("no constraint for {}", basis.labels[i])))?;
        let p = &basis.elements[i];
        let p2 = &basis.elements[j];
        let m = linalg::kron_all(&[p.conjugate(), p2.clone(), p2.conjugate()]);
        PauliVector::from_matrix(&m, 3, dd, 1e-10).ok_or_else(|| Error::Factorization("image is not a Weyl-Heisenberg string".into()))
    };
    let _ = d;
    let map = PartialCliffordMap {
        n: 3,
        d: dd,
        images: vec![(PauliVector::x(3, dd, 2), out(xi)?), (PauliVector::z(3, dd, 2), out(zi)?.inverse())],
    };
    qudit_clifford::synthesize_clifford(&map)
}

/// Extracts ψ from U_C†·V_Q = ψ ⊗ I for a given Clifford.
pub fn clifford_magic_with(q: &CMat, dd: usize, u_c: CMat) -> Result<CliffordMagicForm> {
    clifford_magic_general(&sideways_isometry(q, dd), u_c)
}

/// Extracts ψ from U_C† V = ψ ⊗ I, where V is square-free with the input
/// space on the last wires.
pub fn clifford_magic_general(vq: &CMat, u_c: CMat) -> Result<CliffordMagicForm> {
    let k = vq.ncols();
    if u_c.nrows() != vq.nrows() || !vq.nrows().is_multiple_of(k) {
        return Err(Error::DimensionMismatch(format!("U_C {:?} vs V {:?}", u_c.shape(), vq.shape())));
    }
    let na = vq.nrows() / k;
    let m = u_c.adjoint() * vq;
    let mut psi: Vec<C64> = (0..na)
        .map(|a| (0..k).map(|j| m[(a * k + j, j)]).sum::<C64>() / k as f64)
        .collect();
    let scale = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if scale == 0.0 {
        return Err(Error::Factorization("U_C† V_Q has no ψ ⊗ I component".into()));
    }
    for z in &mut psi {
        *z /= scale;
    }
    let psi_col = CMat::from_iterator(na, 1, psi.iter().copied());
    let rebuilt = &u_c * linalg::kron(&psi_col, &CMat::identity(k, k)) * c(scale, 0.0);
    let residual = (vq - rebuilt).norm() / vq.norm().max(f64::MIN_POSITIVE);
    Ok(CliffordMagicForm { u_c, psi, scale, residual })
}

/// A pure state on n qudits is a stabilizer state iff exactly d^n
/// Weyl-Heisenberg strings have unit-modulus expectation.
pub fn is_stabilizer_state(psi: &[C64], n: usize, d: usize, tol: f64) -> bool {
    let dim = d.pow(n as u32);
    assert_eq!(psi.len(), dim);
    let mut count = 0usize;
    let total = dim * dim;
    for idx in 0..total {
        let mut t = idx;
        let mut v = vec![0; n];
        let mut w = vec![0; n];
        for k in 0..n {
            v[k] = t % d;
            t /= d;
            w[k] = t % d;
            t /= d;
        }
        let p = PauliVector::new(d, v, w, 0);
        let y = p.apply(psi);
        let e: C64 = psi.iter().zip(&y).map(|(a, b)| a.conj() * b).sum();
        if (e.norm() - 1.0).abs() < tol {
            count += 1;
        }
    }
    count == dim
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Open,
    Periodic,
}

impl std::str::FromStr for Boundary {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "open" => Ok(Boundary::Open),
            "periodic" => Ok(Boundary::Periodic),
            _ => Err(Error::Parse(format!("unknown boundary `{s}`"))),
        }
    }
}

fn check_chain(family: &[MpsTensor], strings: &[PauliVector]) -> Result<(usize, usize)> {
    let first = family.first().ok_or_else(|| Error::Precondition("empty chain".into()))?;
    if strings.len() != family.len() {
        return Err(Error::DimensionMismatch(format!("{} strings for {} sites", strings.len(), family.len())));
    }
    let dd = first.bond_dim();
    for (a, p) in family.iter().zip(strings) {
        if a.basis.dim != first.basis.dim || a.basis.labels != first.basis.labels {
            return Err(Error::InvalidBasis("chain tensors use different bases".into()));
        }
        if p.dim() != a.phys_dim() {
            return Err(Error::DimensionMismatch(format!("string on {} levels vs physical {}", p.dim(), a.phys_dim())));
        }
    }
    Ok((dd, first.phys_dim()))
}

/// ⟨ψ|O_1 ⊗ … ⊗ O_n|ψ⟩ by a left-to-right sweep of D²×D² site maps; with
/// an open boundary the two end bonds are free (treated as physical).
pub fn pauli_expectation(family: &[MpsTensor], strings: &[PauliVector], boundary: Boundary) -> Result<C64> {
    let (dd, _) = check_chain(family, strings)?;
    let mut acc = CMat::identity(dd * dd, dd * dd);
    for (a, p) in family.iter().zip(strings) {
        let o = p.to_matrix();
        let slices: Vec<CMat> = (0..a.phys_dim()).map(|s| a.slice(s)).collect();
        let mut e = CMat::zeros(dd * dd, dd * dd);
        for (s, as_) in slices.iter().enumerate() {
            for (s2, as2) in slices.iter().enumerate() {
                let w = o[(s2, s)];
                if w.norm() > 0.0 {
                    e += linalg::kron(as_, &as2.conjugate()) * w;
                }
            }
        }
        acc *= e;
    }
    Ok(match boundary {
        Boundary::Periodic => {
            // Tr over (l,l') ↔ (r,r') with l = r and l' = r'
            acc.trace()
        }
        Boundary::Open => {
            let mut phi = CMat::zeros(dd * dd, 1);
            for l in 0..dd {
                phi[(l * dd + l, 0)] = ONE;
            }
            (phi.transpose() * acc * phi)[(0, 0)]
        }
    })
}

/// Dense state vector of an open chain over (l_0, s_1, …, s_n, r_n).
pub fn dense_chain_state(family: &[MpsTensor]) -> Result<Vec<C64>> {
    let first = family.first().ok_or_else(|| Error::Precondition("empty chain".into()))?;
    let dd = first.bond_dim();
    // rows: (l0, s_1..s_k), cols: r_k
    let mut m = CMat::zeros(dd, dd);
    for l in 0..dd {
        m[(l, l)] = ONE;
    }
    for a in family {
        let d = a.phys_dim();
        let mut next = CMat::zeros(m.nrows() * d, dd);
        for row in 0..m.nrows() {
            for s in 0..d {
                let sl = a.slice(s);
                for r in 0..dd {
                    let z: C64 = (0..dd).map(|b| m[(row, b)] * sl[(b, r)]).sum();
                    next[(row * d + s, r)] = z;
                }
            }
        }
        m = next;
    }
    let mut out = Vec::with_capacity(m.nrows() * dd);
    for row in 0..m.nrows() {
        for r in 0..dd {
            out.push(m[(row, r)]);
        }
    }
    Ok(out)
}

/// Dense oracle for [`pauli_expectation`] on open chains.
pub fn dense_pauli_expectation(family: &[MpsTensor], strings: &[PauliVector]) -> Result<C64> {
    let (dd, _) = check_chain(family, strings)?;
    let psi = dense_chain_state(family)?;
    let mut shape = vec![dd];
    shape.extend(family.iter().map(MpsTensor::phys_dim));
    shape.push(dd);
    let legs: Vec<String> = (0..shape.len()).map(|k| format!("x{k}")).collect();
    let t = DenseTensor::new(legs.clone(), shape, psi)?;
    let mut y = t.clone();
    // boundary legs carry the identity
    for (k, p) in strings.iter().enumerate() {
        y = y.apply(&p.to_matrix(), &[legs[k + 1].as_str()])?;
    }
    t.inner(&y)
}

/// The AKLT tensor in the basis |+1⟩, |0⟩, |−1⟩:
/// A_op = |+1⟩⟨11| + |0⟩⟨T| + |−1⟩⟨00|.
pub fn aklt_op() -> CMat {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut v = CMat::zeros(3, 4);
    v[(0, 3)] = ONE;
    v[(1, 1)] = c(h, 0.0);
    v[(1, 2)] = c(h, 0.0);
    v[(2, 0)] = ONE;
    v
}

/// U_X, U_Y, U_Z of the AKLT chain.
pub fn aklt_corrections() -> [CMat; 3] {
    let m = |e: [f64; 9]| CMat::from_row_slice(3, 3, &e.map(|x| c(x, 0.0)));
    [
        m([0., 0., 1., 0., 1., 0., 1., 0., 0.]),
        m([0., 0., 1., 0., -1., 0., 1., 0., 0.]),
        m([1., 0., 0., 0., -1., 0., 0., 0., 1.]),
    ]
}

pub fn aklt_tensor() -> Result<MpsTensor> {
    let basis = mf_basis::weyl_heisenberg_basis(2)?;
    let [ux, uy, uz] = aklt_corrections();
    let cons = vec![
        constraint_from_labels(&basis, "X", Some(ux), "X")?,
        constraint_from_labels(&basis, "Y", Some(uy), "Y")?,
        constraint_from_labels(&basis, "Z", Some(uz), "Z")?,
    ];
    MpsTensor::from_op(&aklt_op(), basis, cons)
}

/// Closed forms of the two qubit families: copy + α|+⟩ deposit, and
/// copy·H + α·bend·|0⟩.
pub fn example_family_member(which: usize, alpha: C64) -> Result<MpsTensor> {
    let basis = mf_basis::weyl_heisenberg_basis(2)?;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let (cons, f): (Vec<SymmetryConstraint>, Box<dyn Fn(usize, usize, usize) -> C64>) = match which {
        1 => (
            example_constraints(&basis, 1)?,
            Box::new(move |l, s, r| {
                let copy = if l == s && s == r { ONE } else { ZERO };
                let plus = if l == r { c(h, 0.0) } else { ZERO };
                copy + alpha * plus
            }),
        ),
        2 => (
            example_constraints(&basis, 2)?,
            Box::new(move |l, s, r| {
                let hm = if s == 1 && r == 1 { -h } else { h };
                let copy_h = if l == s { c(hm, 0.0) } else { ZERO };
                let bend = if s == l && r == 0 { ONE } else { ZERO };
                copy_h + alpha * bend
            }),
        ),
        _ => return Err(Error::Precondition(format!("no example {which}"))),
    };
    let t = DenseTensor::from_fn(&["left", "phys", "right"], &[2, 2, 2], |i| f(i[0], i[1], i[2]))?;
    MpsTensor::new(t, basis, cons)
}

pub fn example_constraints(basis: &MfBasis, which: usize) -> Result<Vec<SymmetryConstraint>> {
    let wh = |l: &str| -> Result<CMat> {
        let b2 = mf_basis::weyl_heisenberg_basis(2)?;
        let (i, ph) = b2.resolve_label(l)?;
        Ok(b2.elements[i].clone() * ph)
    };
    match which {
        1 => Ok(vec![
            constraint_from_labels(basis, "X", Some(wh("X")?), "X")?,
            constraint_from_labels(basis, "Z", Some(wh("I")?), "Z")?,
        ]),
        2 => Ok(vec![
            constraint_from_labels(basis, "X", Some(wh("X")?), "Z")?,
            constraint_from_labels(basis, "Z", Some(wh("Z")?), "I")?,
        ]),
        _ => Err(Error::Precondition(format!("no example {which}"))),
    }
}

/// JSON: {"basis": basis-json | "WH:D", "constraints": [{"p_in", "u_phys", "p_out"}]}
/// where u_phys is a tensor, `"solve"`, or a Weyl-Heisenberg label on the
/// physical dimension.
#[derive(Clone, Debug)]
pub struct ConstraintSet {
    pub basis: MfBasis,
    pub constraints: Vec<SymmetryConstraint>,
}

#[derive(Deserialize)]
struct ConstraintJson {
    p_in: String,
    u_phys: serde_json::Value,
    p_out: String,
}

impl ConstraintSet {
    pub fn from_json(v: &serde_json::Value, d: usize) -> Result<Self> {
        let basis = MfBasis::from_json(v.get("basis").ok_or_else(|| Error::Parse("missing `basis`".into()))?)?;
        let raw: Vec<ConstraintJson> = serde_json::from_value(
            v.get("constraints").cloned().ok_or_else(|| Error::Parse("missing `constraints`".into()))?,
        )?;
        let mut cons = Vec::new();
        for k in raw {
            let u = match &k.u_phys {
                serde_json::Value::String(s) if s == "solve" => None,
                serde_json::Value::String(s) => {
                    let b = mf_basis::weyl_heisenberg_basis(d)?;
                    let (i, ph) = b.resolve_label(s)?;
                    Some(b.elements[i].clone() * ph)
                }
                other => {
                    let t: DenseTensor = serde_json::from_value(other.clone())?;
                    let legs: Vec<&str> = t.legs().iter().map(String::as_str).collect();
                    if legs.len() != 2 {
                        return Err(Error::Parse("u_phys must be a matrix".into()));
                    }
                    Some(t.to_matrix(&legs[..1], &legs[1..])?)
                }
            };
            cons.push(constraint_from_labels(&basis, &k.p_in, u, &k.p_out)?);
        }
        Ok(ConstraintSet { basis, constraints: cons })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensors::linalg::random_matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn examples_satisfy_their_symmetry() {
        for which in [1, 2] {
            for alpha in [0.0, 0.5, 0.7] {
                let a = example_family_member(which, c(alpha, 0.0)).unwrap();
                let r = check_mf_symmetry(&a, 1e-12).unwrap();
                assert!(r.passed(), "example {which} α={alpha}: {r:?}");
            }
        }
        assert!(check_mf_symmetry(&aklt_tensor().unwrap(), 1e-12).unwrap().passed());
    }

    #[test]
    fn random_tensor_fails_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let basis = mf_basis::weyl_heisenberg_basis(2).unwrap();
        let cons = example_constraints(&basis, 1).unwrap();
        let a = MpsTensor::from_op(&random_matrix(2, 4, &mut rng), basis, cons).unwrap();
        let r = check_mf_symmetry(&a, 1e-9).unwrap();
        assert!(!r.passed() && r.max_residual() > 0.1);
    }

    #[test]
    fn family_dimensions() {
        let basis = mf_basis::weyl_heisenberg_basis(2).unwrap();
        for which in [1, 2] {
            let cons = example_constraints(&basis, which).unwrap();
            assert_eq!(solve_symmetry_family(&basis, &cons, 2, 2).unwrap().len(), 2);
        }
        assert_eq!(solve_symmetry_family(&basis, &[], 2, 2).unwrap().len(), 8);
    }

    #[test]
    fn canonical_form_examples() {
        let (ok, k, _) = canonical_form_check(&aklt_tensor().unwrap(), 1e-12);
        assert!(ok && (k - c(1.5, 0.0)).norm() < 1e-12);
        assert!(canonical_form_check(&example_family_member(1, c(0.7, 0.0)).unwrap(), 1e-12).0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = example_family_member(1, c(0.7, 0.0)).unwrap();
        let bad = MpsTensor::from_op(&(a.op() + random_matrix(2, 4, &mut rng) * c(0.3, 0.0)), a.basis, a.constraints).unwrap();
        assert!(!canonical_form_check(&bad, 1e-9).0);
    }

    #[test]
    fn aklt_polar_and_correction_relation() {
        let a = aklt_tensor().unwrap();
        let (split, rep) = split_polar(&a, 1e-10).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert_eq!(split.rank, 3);
        let mats = correction_matrices(&a, &split).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = CMat::from_column_slice(4, 1, &[ZERO, c(h, 0.0), c(-h, 0.0), ZERO]);
        for (lhs, rhs) in &mats {
            assert!((lhs - rhs).norm() < 1e-10);
            assert!((lhs * &s).norm() < 1e-12);
        }
        assert!(correction_consistency(&a, 1e-10).unwrap().passed());
    }

    #[test]
    fn injective_spt_member_has_trivial_r() {
        let basis = mf_basis::weyl_heisenberg_basis(2).unwrap();
        let a = spt_solution(&basis, &[c(1.0, 0.0), c(0.5, 0.0), c(0.3, 0.0), c(0.2, 0.0)]).unwrap();
        let (split, _) = split_polar(&a, 1e-10).unwrap();
        assert!(split.injective());
        assert!((&split.r - CMat::identity(4, 4)).norm() < 1e-10);
        assert!(correction_consistency(&a, 1e-10).unwrap().passed());
    }

    #[test]
    fn spt_ghz_support() {
        for dd in [2, 3] {
            let basis = mf_basis::weyl_heisenberg_basis(dd).unwrap();
            let alpha: Vec<C64> = (0..dd * dd).map(|i| if i < dd { ONE } else { ZERO }).collect();
            let a = spt_solution(&basis, &alpha).unwrap();
            assert!(check_mf_symmetry(&a, 1e-12).unwrap().passed());
            let q = a.op();
            assert_eq!(linalg::rank(&q, 1e-10).unwrap(), dd);
            let want = CMat::from_fn(dd * dd, dd * dd, |row, col| {
                let (pl, pr, l, r) = (row / dd, row % dd, col / dd, col % dd);
                if pl == pr && pr == l && l == r {
                    ONE
                } else {
                    ZERO
                }
            });
            let (_, res) = linalg::fit_scale_mat(&q, &want);
            assert!(res < 1e-12);
        }
    }

    #[test]
    fn spt_cross_check_passes() {
        for dd in [2, 3] {
            let basis = mf_basis::weyl_heisenberg_basis(dd).unwrap();
            assert!(spt_cross_check(&basis, 1e-9).unwrap().passed());
        }
    }

    #[test]
    fn spt_aklt_is_triplet_like() {
        let basis = mf_basis::weyl_heisenberg_basis(2).unwrap();
        let a = spt_solution(&basis, &[c(3.0, 0.0), c(-1.0, 0.0), c(-1.0, 0.0), c(-1.0, 0.0)]).unwrap();
        let q = a.op();
        let (vals, _) = linalg::eigh(&q, 1e-12).unwrap();
        assert!((vals[0] - 4.0).abs() < 1e-12 && (vals[2] - 4.0).abs() < 1e-12 && vals[3].abs() < 1e-12);
    }

    #[test]
    fn clifford_magic_on_aklt_spt_form() {
        let basis = mf_basis::weyl_heisenberg_basis(2).unwrap();
        let a = spt_solution(&basis, &[c(3.0, 0.0), c(-1.0, 0.0), c(-1.0, 0.0), c(-1.0, 0.0)]).unwrap();
        let (split, _) = split_polar(&a, 1e-10).unwrap();
        let f = clifford_magic_decompose(&split, &a).unwrap();
        assert!(f.residual < 1e-9, "{}", f.residual);
        assert!(qudit_clifford::is_clifford(&f.u_c, 3, 2).unwrap());
        assert!(!is_stabilizer_state(&f.psi, 2, 2, 1e-9));
    }

    #[test]
    fn clifford_magic_identity_alpha_is_stabilizer() {
        for dd in [2, 3] {
            let basis = mf_basis::weyl_heisenberg_basis(dd).unwrap();
            let mut alpha = vec![ZERO; dd * dd];
            alpha[0] = ONE;
            let a = spt_solution(&basis, &alpha).unwrap();
            let (split, _) = split_polar(&a, 1e-10).unwrap();
            let f = clifford_magic_decompose(&split, &a).unwrap();
            assert!(f.residual < 1e-9);
            assert!(is_stabilizer_state(&f.psi, 2, dd, 1e-9));
        }
    }

    #[test]
    fn map_order_examples() {
        let basis = mf_basis::weyl_heisenberg_basis(2).unwrap();
        let id = CMat::identity(2, 2);
        let mk = |a: &str, b: &str| constraint_from_labels(&basis, a, Some(id.clone()), b).unwrap();
        let rot = vec![mk("X", "Y"), mk("Y", "Z"), mk("Z", "X"), mk("I", "I")];
        assert_eq!(map_order(&rot, Some(&basis)).unwrap(), MapOrder { bijective: true, order: Some(3) });
        let nb = vec![mk("X", "Z"), mk("Z", "I")];
        assert!(!map_order(&nb, Some(&basis)).unwrap().bijective);
        let idm: Vec<_> = ["I", "X", "Z", "Y"].iter().map(|l| mk(l, l)).collect();
        assert_eq!(map_order(&idm, Some(&basis)).unwrap().order, Some(1));
    }

    #[test]
    fn block_identity_and_rotation() {
        let a = aklt_tensor().unwrap();
        let b1 = block(&a, 1).unwrap();
        let (s, r) = b1.tensor.tensor.fit_scale(&a.tensor).unwrap();
        assert!(r < 1e-15 && (s - ONE).norm() < 1e-15);
        // rotation X→Y→Z→X on a Q-form tensor
        let basis = mf_basis::weyl_heisenberg_basis(2).unwrap();
        let mk = |p: &str, q: &str| {
            let (i, c1) = basis.resolve_label(p).unwrap();
            let (j, c2) = basis.resolve_label(q).unwrap();
            let u = induced_correction(&basis, i, j) * (c1.conj() * c2);
            constraint_from_labels(&basis, p, Some(u), q).unwrap()
        };
        let cons = vec![mk("X", "Y"), mk("Y", "Z"), mk("Z", "X")];
        let sols = solve_symmetry_family(&basis, &cons, 4, 2).unwrap();
        assert!(!sols.is_empty());
        let a = MpsTensor::new(sols[0].clone(), basis.clone(), cons.clone()).unwrap();
        let mo = map_order(&cons, Some(&basis)).unwrap();
        assert_eq!(mo.order, Some(3));
        let b = block(&a, 3).unwrap();
        assert!(b.tensor.constraints.iter().all(|k| k.p_in == k.p_out));
        assert!(check_mf_symmetry(&b.tensor, 1e-10).unwrap().passed());
    }

    #[test]
    fn block_non_bijective_leaves_z2() {
        let basis = mf_basis::weyl_heisenberg_basis(2).unwrap();
        let mk = |p: &str, q: &str| {
            let (i, c1) = basis.resolve_label(p).unwrap();
            let (j, c2) = basis.resolve_label(q).unwrap();
            let u = induced_correction(&basis, i, j) * (c1.conj() * c2);
            constraint_from_labels(&basis, p, Some(u), q).unwrap()
        };
        let cons = vec![mk("X", "Y"), mk("Z", "I")];
        let sols = solve_symmetry_family(&basis, &cons, 4, 2).unwrap();
        let a = MpsTensor::new(sols[0].clone(), basis.clone(), cons).unwrap();
        let b = block(&a, 2).unwrap();
        let y = basis.resolve_label("Y").unwrap().0;
        let id = basis.identity_index().unwrap();
        assert_eq!(b.image, {
            let mut v = vec![id, y];
            v.sort();
            v
        });
        assert!(check_mf_symmetry(&b.tensor, 1e-10).unwrap().passed());
    }

    #[test]
    fn pauli_expectation_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let basis = mf_basis::weyl_heisenberg_basis(2).unwrap();
        let ghz = spt_solution(&basis, &[ONE, ONE, ZERO, ZERO]).unwrap();
        let aklt = spt_solution(&basis, &[c(3.0, 0.0), c(-1.0, 0.0), c(-1.0, 0.0), c(-1.0, 0.0)]).unwrap();
        let zz = PauliVector::new(2, vec![0, 0], vec![1, 1], 0);
        let id = PauliVector::identity(2, 2);
        let chain = vec![ghz.clone(); 4];
        let strings = vec![zz.clone(), zz, id.clone(), id.clone()];
        let fast = pauli_expectation(&chain, &strings, Boundary::Open).unwrap();
        let dense = dense_pauli_expectation(&chain, &strings).unwrap();
        assert!((fast - dense).norm() < 1e-9 * dense.norm().max(1.0));
        let chain = vec![aklt; 5];
        let ids = vec![id; 5];
        let norm: f64 = dense_chain_state(&chain).unwrap().iter().map(|z| z.norm_sqr()).sum();
        assert!((pauli_expectation(&chain, &ids, Boundary::Open).unwrap() - c(norm, 0.0)).norm() < 1e-9 * norm);
        for _ in 0..5 {
            use rand::RngExt;
            let strings: Vec<PauliVector> = (0..5)
                .map(|_| {
                    let v = vec![rng.random_range(0..2), rng.random_range(0..2)];
                    let w = vec![rng.random_range(0..2), rng.random_range(0..2)];
                    PauliVector::new(2, v, w, 0)
                })
                .collect();
            let fast = pauli_expectation(&chain, &strings, Boundary::Open).unwrap();
            let dense = dense_pauli_expectation(&chain, &strings).unwrap();
            assert!((fast - dense).norm() < 1e-9 * norm);
        }
    }

    #[test]
    fn als_recovers_unknown_correction() {
        let basis = mf_basis::weyl_heisenberg_basis(2).unwrap();
        let mut cons = example_constraints(&basis, 1).unwrap();
        cons[1].u_phys = None;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sol = solve_unknown_corrections(&basis, &cons, 2, 200, &mut rng).unwrap();
        assert!(sol.residual < 1e-10, "{}", sol.residual);
        let fam = solve_symmetry_family(&basis, &cons, 2, 2).unwrap();
        assert!(!fam.is_empty());
    }

    #[test]
    fn constraint_json_parses_labels_and_solve() {
        let v = serde_json::json!({
            "basis": "WH:2",
            "constraints": [
                {"p_in": "X", "u_phys": "X", "p_out": "X"},
                {"p_in": "Z", "u_phys": "solve", "p_out": "Z"}
            ]
        });
        let cs = ConstraintSet::from_json(&v, 2).unwrap();
        assert_eq!(cs.constraints.len(), 2);
        assert!(cs.constraints[1].u_phys.is_none());
    }
}
