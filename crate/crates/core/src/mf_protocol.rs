//! Monte-Carlo simulation of the single-round measure-and-feedback protocol.
//!
//! Site tensors are prepared independently. Every bond then joins a right
//! (or up) virtual qudit with the next left (or down) one and measures the
//! pair in the basis |P_i⟩ = Σ P_i[a,b]|a⟩|b⟩/√D. Outcome i leaves
//! conj(P_i)/√D on the bond. The defects are pushed through the site
//! tensors with their push relations, physical corrections accumulate, and
//! whatever reaches an open boundary leg is undone there.
//!
//! Probabilities, overlaps and norms come from one double-layer contraction
//! engine, so nothing is assumed about the outcome distribution.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mf_basis::MfBasis;
use crate::mf_mps::{self, Boundary, MpsTensor};
use crate::mf_peps::{self, Leg, PepsTensor, PushRelation};
use crate::tensors::linalg::{self, CMat};
use crate::tensors::{c, DenseTensor, C64, ONE};

pub const RNG_NAME: &str = "ChaCha8Rng";

/// Largest dense final state the runner materializes.
const DENSE_LIMIT: usize = 1 << 20;

#[derive(Clone, Debug)]
pub struct Site {
    /// Legs: a subset of left/up/right/down plus `phys`.
    pub tensor: DenseTensor,
    pub pushes: Vec<PushRelation>,
    /// Legs a defect may leave through, in order of preference.
    pub out_legs: Vec<Leg>,
}

/// `a` is a right or up leg, `b` the left or down leg it is glued to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bond {
    pub a: (usize, Leg),
    pub b: (usize, Leg),
    /// End that absorbs defects; `None` marks the bond where defects merge.
    pub absorber: Option<Leg>,
}

#[derive(Clone, Debug)]
pub struct Lattice {
    pub basis: MfBasis,
    pub sites: Vec<Site>,
    pub bonds: Vec<Bond>,
    pub boundary: Vec<(usize, Leg)>,
    pub names: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Corner {
    UpperRight,
    UpperLeft,
    LowerRight,
    LowerLeft,
}

impl Corner {
    pub fn out_legs(self) -> Vec<Leg> {
        match self {
            Corner::UpperRight => vec![Leg::Right, Leg::Up],
            Corner::UpperLeft => vec![Leg::Left, Leg::Up],
            Corner::LowerRight => vec![Leg::Right, Leg::Down],
            Corner::LowerLeft => vec![Leg::Left, Leg::Down],
        }
    }
}

impl std::str::FromStr for Corner {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upper-right" | "ur" => Ok(Corner::UpperRight),
            "upper-left" | "ul" => Ok(Corner::UpperLeft),
            "lower-right" | "lr" => Ok(Corner::LowerRight),
            "lower-left" | "ll" => Ok(Corner::LowerLeft),
            _ => Err(Error::Parse(format!("unknown orientation `{s}`"))),
        }
    }
}

pub fn uniform_orientation(rows: usize, cols: usize, corner: Corner) -> Vec<Vec<Corner>> {
    vec![vec![corner; cols]; rows]
}

/// Each quadrant drains to its own corner; the middle row and column join
/// the upper and right regions.
pub fn four_corner_orientation(rows: usize, cols: usize) -> Vec<Vec<Corner>> {
    (0..rows)
        .map(|r| {
            (0..cols)
                .map(|c| match (r < rows.div_ceil(2), c >= cols / 2) {
                    (true, true) => Corner::UpperRight,
                    (true, false) => Corner::UpperLeft,
                    (false, true) => Corner::LowerRight,
                    (false, false) => Corner::LowerLeft,
                })
                .collect()
        })
        .collect()
}

impl Lattice {
    pub fn chain(tensors: &[MpsTensor], boundary: Boundary) -> Result<Self> {
        let first = tensors.first().ok_or_else(|| Error::Precondition("empty chain".into()))?;
        let basis = first.basis.clone();
        if basis.cocycle.is_none() {
            return Err(Error::NotAGroup);
        }
        let n = tensors.len();
        let mut sites = Vec::with_capacity(n);
        for (k, a) in tensors.iter().enumerate() {
            if a.basis.dim != basis.dim || a.basis.labels != basis.labels {
                return Err(Error::InvalidBasis(format!("site {k} uses a different basis")));
            }
            let rep = mf_mps::check_mf_symmetry(a, 1e-8)?;
            if !rep.passed() {
                return Err(Error::SymmetryFailed(format!("site {k}: max residual {:.3e}", rep.max_residual())));
            }
            let closed = mf_mps::close_constraints(&basis, &a.constraints, a.phys_dim())?;
            let pushes = closed
                .into_iter()
                .map(|k| {
                    Ok(PushRelation { from: Leg::Left, p_in: k.p_in, to: vec![(Leg::Right, k.p_out)], u_phys: k.u()?.clone() })
                })
                .collect::<Result<Vec<_>>>()?;
            sites.push(Site { tensor: a.tensor.clone(), pushes, out_legs: vec![Leg::Right] });
        }
        let mut bonds: Vec<Bond> = (0..n.saturating_sub(1))
            .map(|i| Bond { a: (i, Leg::Right), b: (i + 1, Leg::Left), absorber: Some(Leg::Left) })
            .collect();
        let mut bnd = Vec::new();
        match boundary {
            Boundary::Open => {
                bnd.push((0, Leg::Left));
                bnd.push((n - 1, Leg::Right));
            }
            Boundary::Periodic => bonds.push(Bond { a: (n - 1, Leg::Right), b: (0, Leg::Left), absorber: None }),
        }
        let names = (0..n).map(|i| format!("site {i}")).collect();
        Ok(Lattice { basis, sites, bonds, boundary: bnd, names })
    }

    /// Row 0 is the top row; the up leg of (r, c) meets the down leg of (r−1, c).
    pub fn grid(grid: &[Vec<PepsTensor>], orientation: &[Vec<Corner>]) -> Result<Self> {
        let rows = grid.len();
        let cols = grid.first().map(|r| r.len()).unwrap_or(0);
        if rows == 0 || cols == 0 || grid.iter().any(|r| r.len() != cols) {
            return Err(Error::Precondition("grid must be a non-empty rectangle".into()));
        }
        if rows > 3 || cols > 3 {
            return Err(Error::SizeGuard(format!("{rows}×{cols} grid exceeds 3×3")));
        }
        if orientation.len() != rows || orientation.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("orientation must match the grid".into()));
        }
        let basis = grid[0][0].basis.clone();
        if basis.cocycle.is_none() {
            return Err(Error::NotAGroup);
        }
        let id = |r: usize, c: usize| r * cols + c;
        let mut sites = Vec::new();
        let mut names = Vec::new();
        for (r, row) in grid.iter().enumerate() {
            for (c, a) in row.iter().enumerate() {
                if a.basis.dim != basis.dim || a.basis.labels != basis.labels {
                    return Err(Error::InvalidBasis(format!("site ({r},{c}) uses a different basis")));
                }
                let rep = mf_peps::check_peps_mf_symmetry(a, 1e-8)?;
                if !rep.passed() {
                    return Err(Error::SymmetryFailed(format!("site ({r},{c}): max residual {:.3e}", rep.max_residual())));
                }
                sites.push(Site { tensor: a.tensor.clone(), pushes: a.pushes.clone(), out_legs: orientation[r][c].out_legs() });
                names.push(format!("site ({r},{c})"));
            }
        }
        let outs = |s: usize, leg: Leg, sites: &[Site]| sites[s].out_legs.contains(&leg);
        let mut bonds = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    let (s1, s2) = (id(r, c), id(r, c + 1));
                    let absorber = if outs(s2, Leg::Right, &sites) {
                        Leg::Left
                    } else if outs(s1, Leg::Left, &sites) {
                        Leg::Right
                    } else {
                        return Err(Error::Precondition(format!("orientations collide between ({r},{c}) and ({r},{})", c + 1)));
                    };
                    bonds.push(Bond { a: (s1, Leg::Right), b: (s2, Leg::Left), absorber: Some(absorber) });
                }
                if r + 1 < rows {
                    let (lower, upper) = (id(r + 1, c), id(r, c));
                    let absorber = if outs(upper, Leg::Up, &sites) {
                        Leg::Down
                    } else if outs(lower, Leg::Down, &sites) {
                        Leg::Up
                    } else {
                        return Err(Error::Precondition(format!("orientations collide between ({r},{c}) and ({},{c})", r + 1)));
                    };
                    bonds.push(Bond { a: (lower, Leg::Up), b: (upper, Leg::Down), absorber: Some(absorber) });
                }
            }
        }
        let mut boundary = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let s = id(r, c);
                if c == 0 {
                    boundary.push((s, Leg::Left));
                }
                if r == 0 {
                    boundary.push((s, Leg::Up));
                }
                if c + 1 == cols {
                    boundary.push((s, Leg::Right));
                }
                if r + 1 == rows {
                    boundary.push((s, Leg::Down));
                }
            }
        }
        Ok(Lattice { basis, sites, bonds, boundary, names })
    }

    fn dd(&self) -> usize {
        self.basis.dim
    }

    fn bond_name(j: usize, end_a: bool) -> String {
        format!("j{j}{}", if end_a { 'a' } else { 'b' })
    }

    /// Connection name of every virtual leg of site `s`.
    fn site_names(&self, s: usize) -> Vec<(Leg, String)> {
        let mut out = Vec::new();
        for (j, b) in self.bonds.iter().enumerate() {
            if b.a.0 == s {
                out.push((b.a.1, Self::bond_name(j, true)));
            }
            if b.b.0 == s {
                out.push((b.b.1, Self::bond_name(j, false)));
            }
        }
        for (m, (t, leg)) in self.boundary.iter().enumerate() {
            if *t == s {
                out.push((*leg, format!("x{m}")));
            }
        }
        out
    }

    fn phys_dims(&self) -> Vec<usize> {
        self.sites.iter().map(|s| s.tensor.dim("phys").unwrap()).collect()
    }
}

fn traced_bond(dd: usize) -> CMat {
    let mut m = CMat::zeros(dd * dd, dd * dd);
    for a in 0..dd {
        for b in 0..dd {
            m[(a * dd + a, b * dd + b)] = ONE;
        }
    }
    m
}

/// M[(a,a'),(b,b')] = W[a,b]·conj(V[a',b']).
fn glued_bond(w: &CMat, v: &CMat) -> CMat {
    linalg::kron(w, &v.conjugate())
}

/// v[(a,a')] = Σ_x K[x,a]·conj(B[x,a']).
fn boundary_vector(k: &CMat, b: &CMat) -> Vec<C64> {
    let dd = k.nrows();
    let m = k.transpose() * b.conjugate();
    (0..dd * dd).map(|i| m[(i / dd, i % dd)]).collect()
}

fn contract_shared(x: &DenseTensor, y: &DenseTensor) -> Result<DenseTensor> {
    let shared: Vec<&str> = x.legs().iter().map(String::as_str).filter(|l| y.has_leg(l)).collect();
    let pairs: Vec<(&str, &str)> = shared.iter().map(|l| (*l, *l)).collect();
    x.contract(y, &pairs)
}

/// Σ ket·conj(bra) over the whole double-layer network. `ket_sites` and
/// `bra_sites` carry the lattice leg names.
fn double_layer(lat: &Lattice, ket_sites: &[DenseTensor], bra_sites: &[DenseTensor], bonds: &[CMat], boundary: &[Vec<C64>]) -> Result<C64> {
    let dd = lat.dd();
    let mut acc = DenseTensor::scalar(ONE);
    let mut bond_added = vec![false; lat.bonds.len()];
    for s in 0..lat.sites.len() {
        let names = lat.site_names(s);
        let mut kmap: Vec<(String, String)> = Vec::new();
        let mut bmap: Vec<(String, String)> = Vec::new();
        for (leg, _) in &names {
            kmap.push((leg.name().into(), format!("k.{}", leg.name())));
            bmap.push((leg.name().into(), format!("b.{}", leg.name())));
        }
        let kr: Vec<(&str, &str)> = kmap.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let br: Vec<(&str, &str)> = bmap.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let k = ket_sites[s].relabel(&kr)?;
        let b = bra_sites[s].conj().relabel(&br)?;
        let mut e = k.contract(&b, &[("phys", "phys")])?;
        for (leg, name) in &names {
            e = e.fuse(&[&format!("k.{}", leg.name()), &format!("b.{}", leg.name())], name)?;
        }
        acc = contract_shared(&acc, &e)?;
        for (j, bd) in lat.bonds.iter().enumerate() {
            if !bond_added[j] && (bd.a.0 == s || bd.b.0 == s) {
                let t = DenseTensor::from_matrix(
                    &bonds[j],
                    &[(&Lattice::bond_name(j, true), dd * dd)],
                    &[(&Lattice::bond_name(j, false), dd * dd)],
                )?;
                acc = contract_shared(&acc, &t)?;
                bond_added[j] = true;
            }
        }
        for (m, (t, _)) in lat.boundary.iter().enumerate() {
            if *t == s {
                let v = DenseTensor::from_vector(&boundary[m], &[(&format!("x{m}"), dd * dd)])?;
                acc = contract_shared(&acc, &v)?;
            }
        }
    }
    if acc.rank() != 0 {
        return Err(Error::InvalidTensor("double layer left open legs".into()));
    }
    Ok(acc.data()[0])
}

/// Dense ket over (phys of each site, boundary legs in order).
fn ket_state(lat: &Lattice, sites: &[DenseTensor], bonds: &[CMat], boundary: &[CMat]) -> Result<DenseTensor> {
    let dd = lat.dd();
    let mut acc = DenseTensor::scalar(ONE);
    let mut added = vec![false; lat.bonds.len()];
    let mut order = Vec::new();
    for s in 0..lat.sites.len() {
        let names = lat.site_names(s);
        let phys = format!("p{s}");
        let mut map: Vec<(String, String)> = names.iter().map(|(l, n)| (l.name().to_string(), n.clone())).collect();
        map.push(("phys".into(), phys.clone()));
        order.push(phys);
        let r: Vec<(&str, &str)> = map.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let mut t = sites[s].relabel(&r)?;
        for (m, (site, _)) in lat.boundary.iter().enumerate() {
            if *site == s {
                let name = format!("x{m}");
                t = t.apply(&boundary[m], &[&name])?;
            }
        }
        acc = contract_shared(&acc, &t)?;
        for (j, bd) in lat.bonds.iter().enumerate() {
            if !added[j] && (bd.a.0 == s || bd.b.0 == s) {
                let t = DenseTensor::from_matrix(
                    &bonds[j],
                    &[(&Lattice::bond_name(j, true), dd)],
                    &[(&Lattice::bond_name(j, false), dd)],
                )?;
                acc = contract_shared(&acc, &t)?;
                added[j] = true;
            }
        }
    }
    for m in 0..lat.boundary.len() {
        order.push(format!("x{m}"));
    }
    let o: Vec<&str> = order.iter().map(String::as_str).collect();
    acc.permuted(&o)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProtocolRun {
    pub seed: u64,
    pub rng: String,
    pub outcomes: Vec<usize>,
    pub outcome_labels: Vec<String>,
    /// Conditional Born distribution of each bond given the earlier ones.
    pub born: Vec<Vec<f64>>,
    pub probability: f64,
    /// Per-site physical unitaries.
    pub corrections: Vec<DenseTensor>,
    pub boundary_corrections: Vec<DenseTensor>,
    /// Label of the leftover defect on the merge bond, if there is one.
    pub merged_defect: Option<String>,
    pub final_state: Option<DenseTensor>,
    pub fidelity: f64,
    pub success: bool,
}

fn mat_tensor(m: &CMat) -> DenseTensor {
    DenseTensor::from_matrix(m, &[("out", m.nrows())], &[("in", m.ncols())]).expect("finite matrix")
}

/// Result of pushing the defects of one outcome tuple.
struct Corrected {
    site_u: Vec<CMat>,
    boundary_g: Vec<CMat>,
    merged: Option<(usize, C64)>,
}

fn find_push(site: &Site, from: Leg, p: usize) -> Option<&PushRelation> {
    let ok = |r: &&PushRelation| r.from == from && r.p_in == p && r.to.iter().all(|(l, _)| site.out_legs.contains(l));
    let straight = site
        .pushes
        .iter()
        .filter(ok)
        .find(|r| r.to.len() == 1 && r.to[0].0 == from.opposite());
    straight.or_else(|| site.pushes.iter().find(ok))
}

fn push_defects(lat: &Lattice, outcomes: &[usize]) -> Result<Corrected> {
    let dd = lat.dd();
    let basis = &lat.basis;
    let id = basis.identity_index().ok_or(Error::NotAGroup)?;
    let mut bond_ops: Vec<CMat> = outcomes.iter().map(|&o| basis.elements[o].conjugate()).collect();
    let mut bnd_ops: Vec<CMat> = vec![CMat::identity(dd, dd); lat.boundary.len()];
    let mut site_u: Vec<CMat> = lat.phys_dims().iter().map(|&d| CMat::identity(d, d)).collect();
    let budget = 16 * (lat.bonds.len() + 1) * (lat.sites.len() + 1);
    let mut steps = 0;
    loop {
        let mut moved = false;
        for j in 0..lat.bonds.len() {
            let bd = lat.bonds[j];
            let Some(end) = bd.absorber else { continue };
            let (p, cph) = basis.identify(&bond_ops[j], 1e-9).ok_or_else(|| Error::DefectStuck {
                site: format!("bond {j}"),
                detail: "bond operator is not a basis element".into(),
            })?;
            if p == id {
                continue;
            }
            let s = if bd.a.1 == end { bd.a.0 } else { bd.b.0 };
            let site = &lat.sites[s];
            let rel = find_push(site, end, p).ok_or_else(|| Error::DefectStuck {
                site: lat.names[s].clone(),
                detail: format!("no push for {} entering {}", basis.labels[p], end.name()),
            })?;
            site_u[s] = &rel.u_phys * &site_u[s];
            bond_ops[j] = CMat::identity(dd, dd) * cph;
            for (leg, q) in &rel.to {
                let pq = &basis.elements[*q];
                let target = lat
                    .bonds
                    .iter()
                    .position(|b| b.a == (s, *leg) || b.b == (s, *leg))
                    .map(|k| (true, k))
                    .or_else(|| lat.boundary.iter().position(|b| *b == (s, *leg)).map(|k| (false, k)))
                    .ok_or_else(|| Error::DefectStuck { site: lat.names[s].clone(), detail: format!("leg {} is not connected", leg.name()) })?;
                let slot = if target.0 { &mut bond_ops[target.1] } else { &mut bnd_ops[target.1] };
                *slot = if leg.incoming() { &*slot * pq } else { pq * &*slot };
            }
            moved = true;
            steps += 1;
            if steps > budget {
                return Err(Error::DefectStuck { site: lat.names[s].clone(), detail: "pushes do not terminate".into() });
            }
        }
        if !moved {
            break;
        }
    }
    let mut merged = None;
    for (j, bd) in lat.bonds.iter().enumerate() {
        if bd.absorber.is_none() {
            merged = basis.identify(&bond_ops[j], 1e-9);
            if merged.is_none() {
                return Err(Error::DefectStuck { site: format!("bond {j}"), detail: "merged defect is not a basis element".into() });
            }
        }
    }
    let boundary_g = lat
        .boundary
        .iter()
        .zip(&bnd_ops)
        .map(|((_, leg), w)| {
            let inv = linalg::pinv(w, 1e-12)?;
            Ok(if leg.incoming() { inv } else { inv.transpose() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corrected { site_u, boundary_g, merged })
}

fn measured(basis: &MfBasis, o: usize) -> CMat {
    basis.elements[o].conjugate() / c((basis.dim as f64).sqrt(), 0.0)
}

/// Born weight of the bonds fixed so far, the rest traced out.
fn born_weight(lat: &Lattice, fixed: &[usize]) -> Result<f64> {
    let dd = lat.dd();
    let bonds: Vec<CMat> = (0..lat.bonds.len())
        .map(|j| match fixed.get(j) {
            Some(&o) => {
                let w = measured(&lat.basis, o);
                glued_bond(&w, &w)
            }
            None => traced_bond(dd),
        })
        .collect();
    let id = CMat::identity(dd, dd);
    let bnd: Vec<Vec<C64>> = lat.boundary.iter().map(|_| boundary_vector(&id, &id)).collect();
    let sites: Vec<DenseTensor> = lat.sites.iter().map(|s| s.tensor.clone()).collect();
    Ok(double_layer(lat, &sites, &sites, &bonds, &bnd)?.re)
}

/// Fidelity of the corrected post-measurement state with the target, plus
/// the corrected site tensors and bond operators. A boundary correction G
/// acts directly on the dangling leg index.
fn corrected_fidelity(lat: &Lattice, outcomes: &[usize], fix: &Corrected) -> Result<(f64, Vec<DenseTensor>, Vec<CMat>)> {
    let dd = lat.dd();
    let id = CMat::identity(dd, dd);
    let target: Vec<DenseTensor> = lat.sites.iter().map(|s| s.tensor.clone()).collect();
    let ket: Vec<DenseTensor> = lat
        .sites
        .iter()
        .zip(&fix.site_u)
        .map(|(s, u)| s.tensor.apply(u, &["phys"]))
        .collect::<Result<_>>()?;
    let w: Vec<CMat> = outcomes.iter().map(|&o| measured(&lat.basis, o)).collect();
    let kmaps = &fix.boundary_g;
    let bonds_kt: Vec<CMat> = w.iter().map(|w| glued_bond(w, &id)).collect();
    let bonds_kk: Vec<CMat> = w.iter().map(|w| glued_bond(w, w)).collect();
    let bonds_tt: Vec<CMat> = w.iter().map(|_| glued_bond(&id, &id)).collect();
    let bv_kt: Vec<Vec<C64>> = kmaps.iter().map(|k| boundary_vector(k, &id)).collect();
    let bv_kk: Vec<Vec<C64>> = kmaps.iter().map(|k| boundary_vector(k, k)).collect();
    let bv_tt: Vec<Vec<C64>> = kmaps.iter().map(|_| boundary_vector(&id, &id)).collect();
    let ov = double_layer(lat, &ket, &target, &bonds_kt, &bv_kt)?;
    let nk = double_layer(lat, &ket, &ket, &bonds_kk, &bv_kk)?.re;
    let nt = double_layer(lat, &target, &target, &bonds_tt, &bv_tt)?.re;
    let fid = if nk <= 0.0 || nt <= 0.0 { 0.0 } else { (ov.norm_sqr() / (nk * nt)).min(1.0) };
    Ok((fid, ket, w))
}

fn evaluate(lat: &Lattice, outcomes: &[usize]) -> Result<(Corrected, f64, Option<DenseTensor>)> {
    let fix = push_defects(lat, outcomes)?;
    let (fid, ket, w) = corrected_fidelity(lat, outcomes, &fix)?;
    let total: usize = lat.phys_dims().iter().product::<usize>() * lat.dd().pow(lat.boundary.len() as u32);
    let dense = if total <= DENSE_LIMIT {
        Some(ket_state(lat, &ket, &w, &fix.boundary_g)?)
    } else {
        None
    };
    Ok((fix, fid, dense))
}

/// Samples every bond outcome from its exact conditional Born distribution,
/// corrects, and scores the result.
pub fn run_lattice(lat: &Lattice, seed: u64, tol: f64) -> Result<ProtocolRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n2 = lat.basis.size();
    let mut outcomes = Vec::with_capacity(lat.bonds.len());
    let mut born = Vec::with_capacity(lat.bonds.len());
    let mut prob = 1.0;
    let mut prev = born_weight(lat, &[])?;
    for _ in 0..lat.bonds.len() {
        let mut ws = Vec::with_capacity(n2);
        for o in 0..n2 {
            outcomes.push(o);
            ws.push(born_weight(lat, &outcomes)?.max(0.0));
            outcomes.pop();
        }
        let dist: Vec<f64> = ws.iter().map(|w| w / prev).collect();
        let pick = sample(&dist, &mut rng);
        prob *= dist[pick];
        prev = ws[pick];
        outcomes.push(pick);
        born.push(dist);
    }
    finish(lat, seed, outcomes, born, prob, tol)
}

fn sample<R: Rng + ?Sized>(dist: &[f64], rng: &mut R) -> usize {
    let total: f64 = dist.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (k, p) in dist.iter().enumerate() {
        if x < *p {
            return k;
        }
        x -= p;
    }
    dist.len() - 1
}

fn finish(lat: &Lattice, seed: u64, outcomes: Vec<usize>, born: Vec<Vec<f64>>, probability: f64, tol: f64) -> Result<ProtocolRun> {
    let (fix, fidelity, final_state) = evaluate(lat, &outcomes)?;
    let id = lat.basis.identity_index();
    let merged_defect = fix.merged.map(|(k, _)| lat.basis.labels[k].clone());
    let merged_ok = fix.merged.map(|(k, _)| Some(k) == id).unwrap_or(true);
    Ok(ProtocolRun {
        seed,
        rng: RNG_NAME.into(),
        outcome_labels: outcomes.iter().map(|&o| lat.basis.labels[o].clone()).collect(),
        outcomes,
        born,
        probability,
        corrections: fix.site_u.iter().map(mat_tensor).collect(),
        boundary_corrections: fix.boundary_g.iter().map(mat_tensor).collect(),
        merged_defect,
        final_state,
        fidelity,
        success: merged_ok && fidelity > 1.0 - tol,
    })
}

pub fn run_mps_protocol(tensors: &[MpsTensor], boundary: Boundary, seed: u64, tol: f64) -> Result<ProtocolRun> {
    run_lattice(&Lattice::chain(tensors, boundary)?, seed, tol)
}

pub fn run_peps_protocol(grid: &[Vec<PepsTensor>], orientation: &[Vec<Corner>], seed: u64, tol: f64) -> Result<ProtocolRun> {
    run_lattice(&Lattice::grid(grid, orientation)?, seed, tol)
}

/// Independent seeds in parallel; each run stays single-threaded.
pub fn run_trials(lat: &Lattice, seeds: &[u64], tol: f64) -> Result<Vec<ProtocolRun>> {
    seeds.par_iter().map(|&s| run_lattice(lat, s, tol)).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub outcomes: Vec<usize>,
    pub probability: f64,
    pub success: bool,
    pub fidelity: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Enumeration {
    pub tuples: usize,
    pub total_probability: f64,
    pub success_probability: f64,
    pub successful_tuples: usize,
    pub records: Vec<OutcomeRecord>,
}

pub fn enumerate_lattice(lat: &Lattice, tol: f64) -> Result<Enumeration> {
    let n2 = lat.basis.size();
    let nb = lat.bonds.len();
    let tuples = (n2 as f64).powi(nb as i32);
    if tuples > 65536.0 {
        return Err(Error::SizeGuard(format!("(D²)^bonds = {tuples} exceeds 65536")));
    }
    let tuples = tuples as usize;
    let norm = born_weight(lat, &[])?;
    let records: Vec<OutcomeRecord> = (0..tuples)
        .into_par_iter()
        .map(|mut t| {
            let mut o = vec![0; nb];
            for k in (0..nb).rev() {
                o[k] = t % n2;
                t /= n2;
            }
            outcome_record(lat, o, norm, tol)
        })
        .collect::<Result<_>>()?;
    let total_probability = records.iter().map(|r| r.probability).sum();
    let success_probability = records.iter().filter(|r| r.success).map(|r| r.probability).sum();
    let successful_tuples = records.iter().filter(|r| r.success).count();
    Ok(Enumeration { tuples, total_probability, success_probability, successful_tuples, records })
}

fn outcome_record(lat: &Lattice, o: Vec<usize>, norm: f64, tol: f64) -> Result<OutcomeRecord> {
    let p = born_weight(lat, &o)? / norm;
    let fix = push_defects(lat, &o)?;
    let (fid, ..) = corrected_fidelity(lat, &o, &fix)?;
    let merged_ok = fix.merged.map(|(k, _)| Some(k) == lat.basis.identity_index()).unwrap_or(true);
    Ok(OutcomeRecord { outcomes: o, probability: p, success: merged_ok && fid > 1.0 - tol, fidelity: fid })
}

/// Every tuple with a single non-trivial outcome. Defects from different
/// bonds compose in the abelian basis group, so when all of these succeed
/// every tuple does; this covers lattices too large to enumerate.
pub fn single_defect_sweep(lat: &Lattice, tol: f64) -> Result<Vec<OutcomeRecord>> {
    let id = lat.basis.identity_index().ok_or(Error::NotAGroup)?;
    let nb = lat.bonds.len();
    let norm = born_weight(lat, &[])?;
    let tuples: Vec<Vec<usize>> = (0..nb)
        .flat_map(|b| {
            (0..lat.basis.size()).filter(move |&i| i != id).map(move |i| {
                let mut o = vec![id; nb];
                o[b] = i;
                o
            })
        })
        .collect();
    tuples.into_par_iter().map(|o| outcome_record(lat, o, norm, tol)).collect()
}

pub fn enumerate_outcomes(tensors: &[MpsTensor], boundary: Boundary, tol: f64) -> Result<Enumeration> {
    enumerate_lattice(&Lattice::chain(tensors, boundary)?, tol)
}

/// Dense target state of a lattice, laid out like `ProtocolRun::final_state`.
pub fn target_state(lat: &Lattice) -> Result<DenseTensor> {
    let dd = lat.dd();
    let sites: Vec<DenseTensor> = lat.sites.iter().map(|s| s.tensor.clone()).collect();
    let bonds = vec![CMat::identity(dd, dd); lat.bonds.len()];
    let bnd = vec![CMat::identity(dd, dd); lat.boundary.len()];
    ket_state(lat, &sites, &bonds, &bnd)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trials: usize,
    pub successes: usize,
    pub rate: f64,
    pub min_fidelity_on_success: Option<f64>,
    /// Largest deviation of any conditional Born probability from 1/D².
    pub max_born_deviation: f64,
}

pub fn summarize(runs: &[ProtocolRun], d2: usize) -> TrialSummary {
    let successes = runs.iter().filter(|r| r.success).count();
    let min_fid = runs.iter().filter(|r| r.success).map(|r| r.fidelity).fold(None, |m: Option<f64>, f| Some(m.map_or(f, |m| m.min(f))));
    let u = 1.0 / d2 as f64;
    let dev = runs
        .iter()
        .flat_map(|r| r.born.iter().flatten())
        .map(|p| (p - u).abs())
        .fold(0.0, f64::max);
    TrialSummary {
        trials: runs.len(),
        successes,
        rate: if runs.is_empty() { 0.0 } else { successes as f64 / runs.len() as f64 },
        min_fidelity_on_success: min_fid,
        max_born_deviation: dev,
    }
}
