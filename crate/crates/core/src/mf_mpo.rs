//! MPO tensors applicable through a single measure-and-feedback round.
//!
//! `O[l, r, a, s]` has legs `(left, right, phys_in, phys_out)`. Each input
//! value a gives an MPS slice, V_a[(s,r), l] = O[l,r,a,s], and the slices
//! stack into U[(s,r), (a,l)]. Constraints carry their unitary on `phys_out`.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mf_basis::MfBasis;
use crate::mf_mps::{self, MpsTensor, SymmetryConstraint};
use crate::mf_protocol::{ProtocolRun, RNG_NAME};
use crate::report::Report;
use crate::tensors::linalg::{self, CMat};
use crate::tensors::{c, DenseTensor, C64, ONE, ZERO};

#[derive(Clone, Debug)]
pub struct MpoTensor {
    pub tensor: DenseTensor,
    pub basis: MfBasis,
    pub constraints: Vec<SymmetryConstraint>,
}

impl MpoTensor {
    pub fn new(tensor: DenseTensor, basis: MfBasis, constraints: Vec<SymmetryConstraint>) -> Result<Self> {
        let t = tensor.permuted(&["left", "right", "phys_in", "phys_out"])?;
        let s = t.shape();
        if s[0] != basis.dim || s[1] != basis.dim {
            return Err(Error::DimensionMismatch(format!("virtual legs ({}, {}) vs basis {}", s[0], s[1], basis.dim)));
        }
        if s[2] != s[3] {
            return Err(Error::DimensionMismatch(format!("phys_in {} vs phys_out {}", s[2], s[3])));
        }
        let m = MpoTensor { tensor: t, basis, constraints };
        // validates the constraints through the slice tensors
        m.slice_mps(0)?;
        Ok(m)
    }

    /// O[l,r,a,s] from a function of (l, r, a, s).
    pub fn from_fn(basis: MfBasis, d: usize, constraints: Vec<SymmetryConstraint>, f: impl Fn(usize, usize, usize, usize) -> C64) -> Result<Self> {
        let dd = basis.dim;
        let t = DenseTensor::from_fn(&["left", "right", "phys_in", "phys_out"], &[dd, dd, d, d], |i| f(i[0], i[1], i[2], i[3]))?;
        Self::new(t, basis, constraints)
    }

    pub fn phys_dim(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn bond_dim(&self) -> usize {
        self.basis.dim
    }

    pub fn get(&self, l: usize, r: usize, a: usize, s: usize) -> C64 {
        self.tensor.get(&[l, r, a, s])
    }

    /// The MPS obtained by fixing the input to |a⟩.
    pub fn slice_mps(&self, a: usize) -> Result<MpsTensor> {
        let dd = self.bond_dim();
        let d = self.phys_dim();
        let t = DenseTensor::from_fn(&["left", "phys", "right"], &[dd, d, dd], |i| self.get(i[0], i[2], a, i[1]))?;
        MpsTensor::new(t, self.basis.clone(), self.constraints.clone())
    }

    /// V_a[(s,r), l].
    pub fn slice(&self, a: usize) -> CMat {
        let dd = self.bond_dim();
        CMat::from_fn(self.phys_dim() * dd, dd, |row, l| self.get(l, row % dd, a, row / dd))
    }

    /// Applies Ũ to the input: O′ = O·(Ũ on phys_in).
    pub fn with_input_unitary(&self, u: &CMat) -> Result<Self> {
        let d = self.phys_dim();
        Self::from_fn(self.basis.clone(), d, self.constraints.clone(), |l, r, a, s| {
            (0..d).map(|b| self.get(l, r, b, s) * u[(b, a)]).sum()
        })
    }
}

/// Σ_{s,l,r} O[l,r,a,s]·conj(O[l,r,b,s]) = c·δ_ab; returns the report and c.
pub fn check_mpo_isometry(o: &MpoTensor, tol: f64) -> (Report, C64) {
    let d = o.phys_dim();
    let g = CMat::from_fn(d, d, |a, b| {
        let va = o.slice(a);
        let vb = o.slice(b);
        (vb.adjoint() * va).trace()
    });
    let (k, r) = linalg::fit_scale_mat(&g, &CMat::identity(d, d));
    let mut rep = Report::new();
    rep.check("isometry", r, tol);
    rep.check("constant_is_bond_dim", (k - c(o.bond_dim() as f64, 0.0)).norm() / o.bond_dim() as f64, tol);
    (rep, k)
}

/// The slices V_a with isometry, symmetry and V_a†V_b = δ_ab·I checks.
pub fn mpo_slices(o: &MpoTensor, tol: f64) -> Result<(Vec<CMat>, Report)> {
    let mut rep = Report::new();
    let (iso, _) = check_mpo_isometry(o, tol);
    rep.extend("", iso);
    let d = o.phys_dim();
    let dd = o.bond_dim();
    let vs: Vec<CMat> = (0..d).map(|a| o.slice(a)).collect();
    for a in 0..d {
        let sym = mf_mps::check_mf_symmetry(&o.slice_mps(a)?, tol)?;
        rep.extend(&format!("slice[{a}]."), sym);
    }
    for a in 0..d {
        for b in 0..d {
            let g = vs[a].adjoint() * &vs[b];
            let want = if a == b { CMat::identity(dd, dd) } else { CMat::zeros(dd, dd) };
            rep.check(format!("orthogonality[{a},{b}]"), (g - want).norm(), tol);
        }
    }
    Ok((vs, rep))
}

/// U[(s,r), (a,l)] = O[l,r,a,s], checked unitary and checked against
/// U·(I ⊗ P^T) = (U_P† ⊗ P′^T)·U for every constraint.
pub fn build_purifying_unitary(o: &MpoTensor, tol: f64) -> Result<(CMat, Report)> {
    let (vs, mut rep) = mpo_slices(o, tol)?;
    if !rep.passed() {
        let bad = rep.failures().first().map(|c| c.name.clone()).unwrap_or_default();
        return Err(Error::Precondition(format!("slice check failed: {bad}")));
    }
    let d = o.phys_dim();
    let dd = o.bond_dim();
    let mut u = CMat::zeros(d * dd, d * dd);
    for (a, v) in vs.iter().enumerate() {
        u.view_mut((0, a * dd), (d * dd, dd)).copy_from(v);
    }
    rep.check("unitary", linalg::unitarity_residual(&u), tol);
    for (k, con) in o.constraints.iter().enumerate() {
        let up = con.u()?;
        let p = &o.basis.elements[con.p_in];
        let q = &o.basis.elements[con.p_out];
        let lhs = &u * linalg::kron(&CMat::identity(d, d), &p.transpose());
        let rhs = linalg::kron(&up.adjoint(), &q.transpose()) * &u;
        rep.check(format!("purification_symmetry[{k}]"), (lhs - rhs).norm() / u.norm(), tol);
    }
    Ok((u, rep))
}

/// Divides by the phase of the first entry with modulus above 1e-12.
pub fn fix_phase(m: &CMat) -> CMat {
    match m.iter().find(|z| z.norm() > 1e-12) {
        Some(z) => m * C64::from_polar(1.0, -z.arg()),
        None => m.clone(),
    }
}

/// Ũ with U†U′ = Ũ ⊗ I_D, so that O2 = O·(Ũ on phys_in).
pub fn relative_local_unitary(o: &MpoTensor, o2: &MpoTensor, tol: f64) -> Result<(CMat, Report)> {
    if o.basis.labels != o2.basis.labels || o.phys_dim() != o2.phys_dim() {
        return Err(Error::Precondition("MPOs use different bases or dimensions".into()));
    }
    let same = o.constraints.len() == o2.constraints.len()
        && o.constraints.iter().zip(&o2.constraints).all(|(x, y)| {
            x.p_in == y.p_in
                && x.p_out == y.p_out
                && match (&x.u_phys, &y.u_phys) {
                    (Some(a), Some(b)) => (a - b).norm() < 1e-9,
                    (None, None) => true,
                    _ => false,
                }
        });
    if !same {
        return Err(Error::Precondition("MPOs carry different constraints".into()));
    }
    let (u, mut rep) = build_purifying_unitary(o, tol)?;
    let (u2, rep2) = build_purifying_unitary(o2, tol)?;
    rep.extend("other.", rep2);
    let d = o.phys_dim();
    let dd = o.bond_dim();
    let m = u.adjoint() * &u2;
    let ut = CMat::from_fn(d, d, |a, b| m.view((a * dd, b * dd), (dd, dd)).trace() / dd as f64);
    let resid = (&m - linalg::kron(&ut, &CMat::identity(dd, dd))).norm() / m.norm();
    if resid > tol.max(1e-8) {
        return Err(Error::Factorization(format!("U†U′ is not Ũ ⊗ I (residual {resid:.3e})")));
    }
    rep.check("factorization", resid, tol);
    let ut = fix_phase(&ut);
    rep.check("u_tilde_unitary", linalg::unitarity_residual(&ut), tol);
    let rebuilt = o.with_input_unitary(&ut)?;
    let (_, r) = linalg::fit_scale(o2.tensor.data(), rebuilt.tensor.data());
    rep.check("round_trip", r, tol);
    Ok((ut, rep))
}

/// O[l,r,a,s] = δ_{sa}·P_a[r,l] over a group basis, with constraints
/// (P, diag phases, P) making U = Σ_a |a⟩⟨a| ⊗ P_a symmetric.
pub fn pauli_slice_mpo(basis: &MfBasis) -> Result<MpoTensor> {
    let n = basis.size();
    let mut cons = Vec::new();
    for (i, p) in basis.elements.iter().enumerate() {
        let pt = p.transpose();
        let mut diag = CMat::zeros(n, n);
        for (a, pa) in basis.elements.iter().enumerate() {
            // P_a P^T = w·P^T P_a, and U_P† carries w on |a⟩
            let (w, r) = linalg::fit_scale_mat(&(pa * &pt), &(&pt * pa));
            if r > 1e-10 {
                return Err(Error::NotAGroup);
            }
            diag[(a, a)] = w.conj();
        }
        cons.push(SymmetryConstraint::new(i, diag, i));
    }
    MpoTensor::from_fn(basis.clone(), n, cons, |l, r, a, s| if s == a { basis.elements[a][(r, l)] } else { ZERO })
}

/// State over (l0, out_0 … out_{n−1}, r) from a staircase of unitaries,
/// each mapping (a_i, incoming bond) to (s_i, outgoing bond); the incoming
/// bond of site 0 is entangled with the reference leg l0.
pub fn staircase(us: &[CMat], psi: &[C64], d: usize, dd: usize) -> Result<DenseTensor> {
    let n = us.len();
    if psi.len() != d.pow(n as u32) {
        return Err(Error::DimensionMismatch(format!("input has {} amplitudes, want {}", psi.len(), d.pow(n as u32))));
    }
    let in_legs: Vec<(String, usize)> = (0..n).map(|i| (format!("in{i}"), d)).collect();
    let names: Vec<(&str, usize)> = in_legs.iter().map(|(s, k)| (s.as_str(), *k)).collect();
    let mut state = DenseTensor::from_vector(psi, &names)?;
    // |l0⟩ ⊗ |bond = l0⟩
    let mut id = Vec::with_capacity(dd * dd);
    for a in 0..dd {
        for b in 0..dd {
            id.push(if a == b { ONE } else { ZERO });
        }
    }
    let pair = DenseTensor::from_vector(&id, &[("l0", dd), ("bond", dd)])?;
    state = state.contract(&pair, &[])?;
    for (i, u) in us.iter().enumerate() {
        let g = DenseTensor::from_matrix(u, &[(&format!("out{i}"), d), ("nb", dd)], &[("a", d), ("b", dd)])?;
        state = state.contract(&g, &[(&format!("in{i}"), "a"), ("bond", "b")])?;
        state = state.relabel(&[("nb", "bond")])?;
    }
    let mut order = vec!["l0".to_string()];
    order.extend((0..n).map(|i| format!("out{i}")));
    order.push("r".into());
    let o: Vec<&str> = order.iter().map(String::as_str).collect();
    state.relabel(&[("bond", "r")])?.permuted(&o)
}

/// Direct contraction of the MPO chain on ψ, legs (l0, out…, r).
pub fn direct_action(ops: &[MpoTensor], psi: &[C64]) -> Result<DenseTensor> {
    let us: Vec<CMat> = ops.iter().map(raw_unitary).collect();
    let first = ops.first().ok_or_else(|| Error::Precondition("empty chain".into()))?;
    staircase(&us, psi, first.phys_dim(), first.bond_dim())
}

fn raw_unitary(o: &MpoTensor) -> CMat {
    let d = o.phys_dim();
    let dd = o.bond_dim();
    let mut u = CMat::zeros(d * dd, d * dd);
    for a in 0..d {
        u.view_mut((0, a * dd), (d * dd, dd)).copy_from(&o.slice(a));
    }
    u
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MpoRun {
    pub run: ProtocolRun,
    pub direct_fidelity: f64,
}

/// Applies each O_i to input qudit i, measures bond (r_i, l_{i+1}) as soon
/// as both legs exist, pushes the defects right with the constraints and
/// undoes the leftover on the right boundary leg. The result is compared
/// with the direct MPO action.
pub fn apply_mpo_via_protocol(ops: &[MpoTensor], psi: &[C64], seed: u64, tol: f64) -> Result<MpoRun> {
    let n = ops.len();
    let first = ops.first().ok_or_else(|| Error::Precondition("empty chain".into()))?;
    if n > 6 {
        return Err(Error::SizeGuard(format!("{n} sites exceed 6")));
    }
    let basis = &first.basis;
    if basis.cocycle.is_none() {
        return Err(Error::NotAGroup);
    }
    let d = first.phys_dim();
    let dd = first.bond_dim();
    for (i, o) in ops.iter().enumerate() {
        if o.basis.labels != basis.labels || o.phys_dim() != d {
            return Err(Error::InvalidBasis(format!("site {i} differs from site 0")));
        }
    }
    if psi.len() != d.pow(n as u32) {
        return Err(Error::DimensionMismatch(format!("input has {} amplitudes, want {}", psi.len(), d.pow(n as u32))));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<(String, usize)> = (0..n).map(|i| (format!("in{i}"), d)).collect();
    let nm: Vec<(&str, usize)> = names.iter().map(|(s, k)| (s.as_str(), *k)).collect();
    let mut state = DenseTensor::from_vector(psi, &nm)?;
    let sq = (dd as f64).sqrt();
    let mut outcomes = Vec::new();
    let mut born = Vec::new();
    let mut probability = 1.0;
    for (i, o) in ops.iter().enumerate() {
        let t = o.tensor.relabel(&[("phys_out", &format!("out{i}")), ("left", "lnew"), ("right", "rnew")])?;
        state = state.contract(&t, &[(&format!("in{i}"), "phys_in")])?;
        if i == 0 {
            state = state.relabel(&[("lnew", "l0"), ("rnew", "r")])?;
            continue;
        }
        let norm = state.norm().powi(2);
        let mut projected = Vec::with_capacity(basis.size());
        let mut dist = Vec::with_capacity(basis.size());
        for p in &basis.elements {
            let w = p.conjugate() / c(sq, 0.0);
            let m = DenseTensor::from_matrix(&w, &[("r", dd)], &[("lnew", dd)])?;
            let s = state.contract(&m, &[("r", "r"), ("lnew", "lnew")])?;
            dist.push(s.norm().powi(2) / norm);
            projected.push(s);
        }
        let total: f64 = dist.iter().sum();
        let mut x = rng.random::<f64>() * total;
        let mut pick = dist.len() - 1;
        for (k, p) in dist.iter().enumerate() {
            if x < *p {
                pick = k;
                break;
            }
            x -= p;
        }
        probability *= dist[pick];
        outcomes.push(pick);
        born.push(dist);
        state = projected.swap_remove(pick).relabel(&[("rnew", "r")])?;
    }
    // push the defects to the right boundary
    let mut corrections = vec![CMat::identity(d, d); n];
    let mut carry = CMat::identity(dd, dd);
    for (k, &o) in outcomes.iter().enumerate() {
        let site = k + 1;
        let w = &carry * basis.elements[o].conjugate();
        let (p, _) = basis.identify(&w, 1e-9).ok_or_else(|| Error::DefectStuck {
            site: format!("site {site}"),
            detail: "defect is not a basis element".into(),
        })?;
        let closed = mf_mps::close_constraints(basis, &ops[site].constraints, d)?;
        let con = closed.iter().find(|c| c.p_in == p).ok_or_else(|| Error::DefectStuck {
            site: format!("site {site}"),
            detail: format!("no constraint for {}", basis.labels[p]),
        })?;
        corrections[site] = con.u()?.clone();
        carry = basis.elements[con.p_out].clone();
    }
    let g = linalg::pinv(&carry, 1e-12)?.transpose();
    for (i, u) in corrections.iter().enumerate() {
        state = state.apply(u, &[&format!("out{i}")])?;
    }
    state = state.apply(&g, &["r"])?;
    let mut order = vec!["l0".to_string()];
    order.extend((0..n).map(|i| format!("out{i}")));
    order.push("r".into());
    let o: Vec<&str> = order.iter().map(String::as_str).collect();
    let state = state.permuted(&o)?;
    let direct = direct_action(ops, psi)?;
    let fidelity = linalg::overlap_fidelity(state.data(), direct.data());
    let run = ProtocolRun {
        seed,
        rng: RNG_NAME.into(),
        outcome_labels: outcomes.iter().map(|&k| basis.labels[k].clone()).collect(),
        outcomes,
        born,
        probability,
        corrections: corrections
            .iter()
            .map(|m| DenseTensor::from_matrix(m, &[("out", d)], &[("in", d)]).expect("finite"))
            .collect(),
        boundary_corrections: vec![DenseTensor::from_matrix(&g, &[("out", dd)], &[("in", dd)])?],
        merged_defect: None,
        final_state: Some(state),
        fidelity,
        success: fidelity > 1.0 - tol,
    };
    Ok(MpoRun { direct_fidelity: fidelity, run })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mf_basis::weyl_heisenberg_basis;
    use crate::tensors::linalg::{random_unitary, overlap_fidelity};

    fn random_state(n: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
        let v: Vec<C64> = (0..n).map(|_| linalg::gaussian_c(rng)).collect();
        let nrm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        v.into_iter().map(|z| z / nrm).collect()
    }

    #[test]
    fn pauli_slice_checks() {
        let b = weyl_heisenberg_basis(2).unwrap();
        let o = pauli_slice_mpo(&b).unwrap();
        let (rep, k) = check_mpo_isometry(&o, 1e-12);
        assert!(rep.passed());
        assert!((k - c(2.0, 0.0)).norm() < 1e-12);
        let (u, rep) = build_purifying_unitary(&o, 1e-12).unwrap();
        assert!(rep.passed(), "{:?}", rep.failures());
        let mut want = CMat::zeros(8, 8);
        for a in 0..4 {
            want.view_mut((a * 2, a * 2), (2, 2)).copy_from(&b.elements[a]);
        }
        assert!((u - want).norm() < 1e-12);
    }

    #[test]
    fn random_tensor_is_not_isometric() {
        let b = weyl_heisenberg_basis(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = DenseTensor::from_fn(&["left", "right", "phys_in", "phys_out"], &[2, 2, 4, 4], |_| linalg::gaussian_c(&mut rng)).unwrap();
        let o = MpoTensor::new(t, b, vec![]).unwrap();
        assert!(!check_mpo_isometry(&o, 1e-9).0.passed());
    }

    #[test]
    fn identity_mpo_trivial() {
        let b = crate::mf_basis::trivial_basis();
        let o = MpoTensor::from_fn(b, 2, vec![], |_, _, a, s| if a == s { ONE } else { ZERO }).unwrap();
        let (rep, k) = check_mpo_isometry(&o, 1e-12);
        assert!(rep.passed() && (k - ONE).norm() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let psi = random_state(8, &mut rng);
        let r = apply_mpo_via_protocol(&vec![o; 3], &psi, 4, 1e-9).unwrap();
        assert!(r.run.success);
        let out = r.run.final_state.unwrap();
        assert!(overlap_fidelity(out.data(), &psi) > 1.0 - 1e-12);
    }

    #[test]
    fn relative_unitary_round_trip() {
        let b = weyl_heisenberg_basis(2).unwrap();
        let o = pauli_slice_mpo(&b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let u0 = random_unitary(4, &mut rng);
        let o2 = o.with_input_unitary(&u0).unwrap();
        let (ut, rep) = relative_local_unitary(&o, &o2, 1e-10).unwrap();
        assert!(rep.passed(), "{:?}", rep.failures());
        let (_, r) = linalg::fit_scale_mat(&u0, &ut);
        assert!(r < 1e-10);
        let (ut, _) = relative_local_unitary(&o, &o, 1e-10).unwrap();
        assert!((ut - CMat::identity(4, 4)).norm() < 1e-10);
        let mut bad = o2.clone();
        bad.constraints.pop();
        assert!(relative_local_unitary(&o, &bad, 1e-10).is_err());
    }

    #[test]
    fn protocol_matches_direct_action() {
        let b = weyl_heisenberg_basis(2).unwrap();
        let o = pauli_slice_mpo(&b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for seed in 0..20 {
            let psi = random_state(64, &mut rng);
            let r = apply_mpo_via_protocol(&vec![o.clone(); 3], &psi, seed, 1e-9).unwrap();
            assert!(r.run.success, "{}", r.direct_fidelity);
        }
    }

    #[test]
    fn theorem_instance_matches_staircase() {
        let b = weyl_heisenberg_basis(2).unwrap();
        let o = pauli_slice_mpo(&b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (u, _) = build_purifying_unitary(&o, 1e-12).unwrap();
        let mut ops = Vec::new();
        let mut layer = Vec::new();
        for _ in 0..4 {
            let ut = random_unitary(4, &mut rng);
            ops.push(o.with_input_unitary(&ut).unwrap());
            layer.push(&u * linalg::kron(&ut, &CMat::identity(2, 2)));
        }
        let psi = random_state(256, &mut rng);
        let direct = direct_action(&ops, &psi).unwrap();
        let stair = staircase(&layer, &psi, 4, 2).unwrap();
        assert!(overlap_fidelity(direct.data(), stair.data()) > 1.0 - 1e-10);
        let r = apply_mpo_via_protocol(&ops, &psi, 3, 1e-9).unwrap();
        assert!(r.run.success);
        assert!(overlap_fidelity(r.run.final_state.unwrap().data(), stair.data()) > 1.0 - 1e-9);
    }
}
