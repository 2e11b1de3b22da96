//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use mftn::cli::{dispatch, xxx_zzz_map};
use mftn::mf_basis::weyl_heisenberg_basis;
use mftn::mf_mpo::{self, MpoTensor};
use mftn::mf_mps::{self, Boundary, MpsTensor, SymmetryConstraint};
use mftn::mf_peps::{self, TopoSymmetrySpec};
use mftn::mf_protocol::{self, Corner, Lattice};
use mftn::qudit_clifford::{self, conjugation_residual, PartialCliffordMap};
use mftn::tensors::linalg::{self, CMat};
use mftn::tensors::{c, DenseTensor, C64, ONE, ZERO};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn fixture(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "fixtures", name].iter().collect();
    p.to_string_lossy().into_owned()
}

fn tensor_vec(t: &DenseTensor) -> CMat {
    CMat::from_iterator(t.len(), 1, t.data().iter().copied())
}

/// ‖Π t‖² / ‖t‖² for Π the projector onto span(cols).
fn overlap(span: &CMat, t: &CMat) -> f64 {
    let p = linalg::projector(span);
    (&p * t).norm_squared() / t.norm_squared()
}

fn criterion_1() -> Outcome {
    let mut worst: f64 = 1.0;
    for (which, file) in [(1, "ex1.json"), (2, "ex2.json")] {
        let out = dispatch(["solve-family", "--constraints", fixture(file).as_str()]);
        ensure(out.code == 0, format!("{file}: exit {}", out.code))?;
        let r = out.report.ok_or("no report")?;
        let dim = r.result["dimension"].as_u64().ok_or("no dimension")?;
        ensure(dim == 2, format!("{file}: dimension {dim}"))?;
        let sols: Vec<DenseTensor> = serde_json::from_value(r.result["solutions"].clone()).map_err(|e| e.to_string())?;
        let span = CMat::from_fn(sols[0].len(), sols.len(), |i, j| sols[j].data()[i]);
        for alpha in [0.0, 0.25, 0.5, 1.0, 2.0] {
            let t = mf_mps::example_family_member(which, c(alpha, 0.0)).map_err(|e| e.to_string())?;
            let t = t.tensor.permuted(&["left", "phys", "right"]).map_err(|e| e.to_string())?;
            let ov = overlap(&span, &tensor_vec(&t));
            worst = worst.min(ov);
        }
    }
    ensure(worst >= 1.0 - 1e-9, format!("closed form outside span: overlap {worst}"))?;
    Ok(format!("both families 2-dimensional, min projector overlap {worst:.12}"))
}

fn criterion_2() -> Outcome {
    let a = mf_mps::aklt_tensor().map_err(|e| e.to_string())?;
    let (split, rep) = mf_mps::split_polar(&a, 1e-10).map_err(|e| e.to_string())?;
    ensure(rep.passed(), format!("polar split: {:?}", rep.failures()))?;
    let cons = mf_mps::correction_consistency(&a, 1e-10).map_err(|e| e.to_string())?;
    ensure(cons.passed(), format!("correction consistency: {:?}", cons.failures()))?;
    let pairs = mf_mps::correction_matrices(&a, &split).map_err(|e| e.to_string())?;
    let b = &a.basis;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let singlet = CMat::from_column_slice(4, 1, &[ZERO, c(h, 0.0), c(-h, 0.0), ZERO]);
    let mut on_sym: f64 = 0.0;
    let mut on_s: f64 = f64::INFINITY;
    for label in ["X", "Z"] {
        let (i, _) = b.resolve_label(label).map_err(|e| e.to_string())?;
        let k = a.constraints.iter().position(|k| k.p_in == i).ok_or("missing constraint")?;
        let (lhs, rhs) = &pairs[k];
        let p = &b.elements[i];
        let pp = linalg::kron(p, p);
        ensure((&pp * &split.r - rhs).norm() < 1e-12, format!("G†R is not ({label}⊗{label})R"))?;
        on_sym = on_sym.max((lhs - rhs).norm());
        on_s = on_s.min(((lhs - &pp) * &singlet).norm());
    }
    ensure(on_sym < 1e-10, format!("V†UV vs (P⊗P)R residual {on_sym:e}"))?;
    ensure(on_s > 0.5, format!("no discrepancy on |S⟩: {on_s}"))?;
    let cm = mf_mps::clifford_magic_decompose(&split, &a).map_err(|e| e.to_string())?;
    ensure(cm.residual < 1e-9, format!("reconstruction residual {:e}", cm.residual))?;
    let stab = mf_mps::is_stabilizer_state(&cm.psi, 2, 2, 1e-8);
    ensure(!stab, "psi passes the stabilizer test")?;
    Ok(format!(
        "residual on span{{|00⟩,|T⟩,|11⟩}} {on_sym:.1e}, |S⟩ discrepancy {on_s:.3}, U_C·(ψ⊗I) residual {:.1e}, ψ non-stabilizer",
        cm.residual
    ))
}

/// Constraint sets with known unitaries on WH(2) and WH(3).
fn family_fixtures() -> Vec<(mftn::mf_basis::MfBasis, Vec<SymmetryConstraint>, usize)> {
    let mut out = Vec::new();
    let b2 = weyl_heisenberg_basis(2).unwrap();
    for which in [1, 2] {
        out.push((b2.clone(), mf_mps::example_constraints(&b2, which).unwrap(), 2));
    }
    for b in [b2.clone(), weyl_heisenberg_basis(3).unwrap()] {
        let spt: Vec<SymmetryConstraint> = (0..b.size())
            .map(|i| SymmetryConstraint::new(i, mf_mps::induced_correction(&b, i, i), i))
            .collect();
        let d = b.dim * b.dim;
        out.push((b, spt, d));
    }
    let b3 = weyl_heisenberg_basis(3).unwrap();
    let (x, _) = b3.resolve_label("X").unwrap();
    let (z, _) = b3.resolve_label("Z").unwrap();
    let copy = vec![
        SymmetryConstraint::new(x, b3.elements[x].clone(), x),
        SymmetryConstraint::new(z, CMat::identity(3, 3), z),
    ];
    out.push((b3, copy, 3));
    out
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let fixtures = family_fixtures();
    let mut families = Vec::new();
    for (b, cons, d) in &fixtures {
        let sols = mf_mps::solve_symmetry_family(b, cons, *d, b.dim).map_err(|e| e.to_string())?;
        ensure(!sols.is_empty(), format!("empty family on D={} d={d}", b.dim))?;
        families.push(sols);
    }
    let mut worst: f64 = 0.0;
    let trials = 120;
    for k in 0..trials {
        let f = k % fixtures.len();
        let (b, cons, _) = &fixtures[f];
        let sols = &families[f];
        let coeffs: Vec<C64> = sols.iter().map(|_| linalg::gaussian_c(&mut rng)).collect();
        let data: Vec<C64> = (0..sols[0].len()).map(|i| sols.iter().zip(&coeffs).map(|(s, a)| s.data()[i] * a).sum()).collect();
        let t = DenseTensor::new(sols[0].legs().to_vec(), sols[0].shape().to_vec(), data).map_err(|e| e.to_string())?;
        let a = MpsTensor::new(t, b.clone(), cons.clone()).map_err(|e| e.to_string())?;
        let (pass, _, r) = mf_mps::canonical_form_check(&a, 1e-8);
        ensure(pass, format!("trial {k}: residual {r:e}"))?;
        worst = worst.max(r);
    }
    Ok(format!("{trials} random members over {} constraint sets, max residual {worst:.1e}", fixtures.len()))
}

fn criterion_4() -> Outcome {
    let mut notes = Vec::new();
    for dd in [2, 3] {
        let b = weyl_heisenberg_basis(dd).map_err(|e| e.to_string())?;
        let alpha: Vec<C64> = (0..b.size()).map(|i| if b.wh_exponents(i).map(|(v, _)| v) == Some(0) { ONE } else { ZERO }).collect();
        let a = mf_mps::spt_solution(&b, &alpha).map_err(|e| e.to_string())?;
        let q = a.op();
        let rank = linalg::rank(&q, 1e-10).map_err(|e| e.to_string())?;
        ensure(rank == dd, format!("D={dd}: rank {rank}"))?;
        // Q[(a,b),(c,d)] against δ_ab δ_bc δ_cd
        let ghz = CMat::from_fn(dd * dd, dd * dd, |row, col| {
            let (pa, pb, l, r) = (row / dd, row % dd, col / dd, col % dd);
            if pa == pb && pb == l && l == r {
                ONE
            } else {
                ZERO
            }
        });
        let (k, res) = linalg::fit_scale_mat(&q, &ghz);
        ensure(res < 1e-12, format!("D={dd}: δ pattern residual {res:e}"))?;
        notes.push(format!("D={dd}: rank {rank}, scale {:.3}", k.re));
    }
    Ok(notes.join("; "))
}

fn criterion_5() -> Outcome {
    let b = weyl_heisenberg_basis(2).map_err(|e| e.to_string())?;
    let mut worst_e: f64 = 0.0;
    let mut worst_t: f64 = 0.0;
    for alpha in [0.0, 0.3, 0.7, 1.0] {
        let al = mf_peps::interpolated_alpha(alpha);
        let ts = mf_peps::transfer_spectrum_analytic(&al, &b, 1).map_err(|e| e.to_string())?;
        let big = 2.0 + 2.0 * alpha * alpha;
        let small = 4.0 * alpha;
        // index v·2+w: I, Z, X, XZ
        let want = [big, small, big, small];
        for (e, w) in ts.e.iter().zip(want) {
            worst_e = worst_e.max((e - c(w, 0.0)).norm());
        }
        let a = mf_peps::topo_solution(&b, &al).map_err(|e| e.to_string())?;
        for l in [2, 3] {
            let ts = mf_peps::transfer_spectrum_analytic(&al, &b, l).map_err(|e| e.to_string())?;
            let ev = mf_peps::transfer_matrix_brute(&a, l).map_err(|e| e.to_string())?;
            worst_t = worst_t.max(mf_peps::compare_transfer(&ev, &ts, 2));
            let want = if alpha < 1.0 { 2 } else { 4 };
            ensure(ts.degeneracy_of_max == want, format!("α={alpha} L={l}: degeneracy {}", ts.degeneracy_of_max))?;
        }
    }
    ensure(worst_e < 1e-12, format!("analytic e-values off by {worst_e:e}"))?;
    ensure(worst_t < 1e-8, format!("brute force off by {worst_t:e}"))?;
    Ok(format!("e-value error {worst_e:.1e}, brute-force relative error {worst_t:.1e}, degeneracy 2 (α<1) and 4 (α=1)"))
}

fn criterion_6() -> Outcome {
    let mut cases = Vec::new();
    for dd in [2usize, 3] {
        let b = weyl_heisenberg_basis(dd).map_err(|e| e.to_string())?;
        let xs: Vec<usize> = (0..dd).map(|v| b.wh_index(v, 0)).collect();
        for k in 0..dd {
            let spec = TopoSymmetrySpec { subgroup: xs.clone(), phi: 2.0 * PI * k as f64 / dd as f64 };
            cases.push((b.clone(), mf_peps::charge_alpha(&b, k), Some(spec)));
        }
    }
    let b2 = weyl_heisenberg_basis(2).map_err(|e| e.to_string())?;
    for alpha in [0.3, 0.7] {
        let spec = TopoSymmetrySpec { subgroup: vec![b2.wh_index(0, 0), b2.wh_index(1, 0)], phi: 0.0 };
        cases.push((b2.clone(), mf_peps::interpolated_alpha(alpha), Some(spec)));
    }
    let mut deficient = 0;
    for (b, alpha, spec) in &cases {
        let a = mf_peps::topo_solution(b, alpha).map_err(|e| e.to_string())?;
        let spec = spec.as_ref().unwrap();
        let (sym, _) = mf_peps::check_topo_symmetry(&a, spec, Some(alpha), 1e-9).map_err(|e| e.to_string())?;
        ensure(sym.passed(), format!("D={}: subgroup symmetry fails {:?}", b.dim, sym.failures()))?;
        let (rep, rank) = mf_peps::injectivity_check(&a, Some(spec), 1e-9).map_err(|e| e.to_string())?;
        ensure(rep.passed(), format!("D={}: rank {rank} not deficient", b.dim))?;
        deficient += 1;
    }
    let mut full = Vec::new();
    for dd in [2usize, 3] {
        let b = weyl_heisenberg_basis(dd).map_err(|e| e.to_string())?;
        let mut alpha = vec![ZERO; b.size()];
        alpha[b.identity_index().unwrap()] = ONE;
        let a = mf_peps::topo_solution(&b, &alpha).map_err(|e| e.to_string())?;
        let (_, rank) = mf_peps::injectivity_check(&a, None, 1e-9).map_err(|e| e.to_string())?;
        ensure(rank == dd.pow(4), format!("identity α at D={dd}: rank {rank}"))?;
        full.push(rank);
    }
    Ok(format!("{deficient} subgroup tensors rank-deficient; identity α full rank {full:?}"))
}

fn criterion_7() -> Outcome {
    let a = mf_mps::aklt_tensor().map_err(|e| e.to_string())?;
    let open = Lattice::chain(&vec![a.clone(); 6], Boundary::Open).map_err(|e| e.to_string())?;
    let seeds: Vec<u64> = (0..500).collect();
    let runs = mf_protocol::run_trials(&open, &seeds, 1e-9).map_err(|e| e.to_string())?;
    let s = mf_protocol::summarize(&runs, 4);
    ensure(s.successes == 500, format!("{}/500 successes", s.successes))?;
    let min_fid = s.min_fidelity_on_success.unwrap_or(0.0);
    ensure(min_fid >= 1.0 - 1e-9, format!("min fidelity {min_fid}"))?;

    let e = mf_protocol::enumerate_outcomes(&vec![a.clone(); 4], Boundary::Open, 1e-9).map_err(|e| e.to_string())?;
    ensure(e.tuples == 64, format!("{} open tuples", e.tuples))?;
    ensure((e.success_probability - 1.0).abs() < 1e-12, format!("open success probability {}", e.success_probability))?;

    let ring = vec![a.clone(); 3];
    let p = mf_protocol::enumerate_outcomes(&ring, Boundary::Periodic, 1e-9).map_err(|e| e.to_string())?;
    ensure(p.tuples == 64 && p.successful_tuples * 16 == p.tuples * 4, format!("periodic: {}/{} tuples", p.successful_tuples, p.tuples))?;
    ensure((p.total_probability - 1.0).abs() < 1e-12, "periodic Born weights do not sum to 1")?;
    let born = p.success_probability;
    ensure((born - 7.0 / 27.0).abs() < 1e-12, format!("periodic Born success probability {born}"))?;
    let lat = Lattice::chain(&ring, Boundary::Periodic).map_err(|e| e.to_string())?;
    let n = 3000u64;
    let seeds: Vec<u64> = (10_000..10_000 + n).collect();
    let mc = mf_protocol::run_trials(&lat, &seeds, 1e-9).map_err(|e| e.to_string())?;
    let hits = mc.iter().filter(|r| r.success).count() as f64;
    let rate = hits / n as f64;
    let sigma = (born * (1.0 - born) / n as f64).sqrt();
    ensure((rate - born).abs() <= 3.0 * sigma, format!("Monte-Carlo {rate} vs exact {born} (σ {sigma})"))?;
    Ok(format!(
        "500/500 open runs, min fidelity {min_fid:.12}; 3-bond open enumeration probability 1; periodic 3-bond: {}/{} tuples = 4/16 correctable, Born-weighted success 7/27 = {born:.4}, Monte-Carlo {rate:.4} ± {sigma:.4}",
        p.successful_tuples, p.tuples
    ))
}

fn criterion_8() -> Outcome {
    let b = weyl_heisenberg_basis(2).map_err(|e| e.to_string())?;
    let t = mf_peps::topo_solution(&b, &mf_peps::charge_alpha(&b, 0)).map_err(|e| e.to_string())?;
    let corners = [Corner::UpperRight, Corner::UpperLeft, Corner::LowerRight, Corner::LowerLeft];
    let mut min_fid: f64 = 1.0;
    let grid2 = vec![vec![t.clone(); 2]; 2];
    for corner in corners {
        let lat = Lattice::grid(&grid2, &mf_protocol::uniform_orientation(2, 2, corner)).map_err(|e| e.to_string())?;
        let e = mf_protocol::enumerate_lattice(&lat, 1e-9).map_err(|e| e.to_string())?;
        ensure(e.successful_tuples == e.tuples, format!("2×2 {corner:?}: {}/{}", e.successful_tuples, e.tuples))?;
        min_fid = e.records.iter().map(|r| r.fidelity).fold(min_fid, f64::min);
    }
    let grid3 = vec![vec![t.clone(); 3]; 3];
    let mut orients: Vec<(String, Vec<Vec<Corner>>)> =
        corners.iter().map(|&k| (format!("{k:?}"), mf_protocol::uniform_orientation(3, 3, k))).collect();
    orients.push(("four-corner".into(), mf_protocol::four_corner_orientation(3, 3)));
    let mut swept = 0;
    for (name, o) in &orients {
        let lat = Lattice::grid(&grid3, o).map_err(|e| e.to_string())?;
        let sweep = mf_protocol::single_defect_sweep(&lat, 1e-9).map_err(|e| e.to_string())?;
        ensure(sweep.iter().all(|r| r.success), format!("3×3 {name}: a single defect is not correctable"))?;
        swept += sweep.len();
        min_fid = sweep.iter().map(|r| r.fidelity).fold(min_fid, f64::min);
        let seeds: Vec<u64> = (0..8).collect();
        let runs = mf_protocol::run_trials(&lat, &seeds, 1e-9).map_err(|e| e.to_string())?;
        ensure(runs.iter().all(|r| r.success), format!("3×3 {name}: sampled run failed"))?;
        min_fid = runs.iter().map(|r| r.fidelity).fold(min_fid, f64::min);
    }
    ensure(min_fid >= 1.0 - 1e-9, format!("min fidelity {min_fid}"))?;
    Ok(format!(
        "2×2: all 256 tuples correctable for 4 corners; 3×3: {swept} single-bond defects correctable over 5 orientations plus sampled runs; min fidelity {min_fid:.12}"
    ))
}

fn check_map(m: &PartialCliffordMap) -> Result<f64, String> {
    let u = qudit_clifford::synthesize_clifford(m).map_err(|e| e.to_string())?;
    ensure(qudit_clifford::is_clifford(&u, m.n, m.d).map_err(|e| e.to_string())?, "not Clifford")?;
    Ok(m.images.iter().map(|(s, t)| conjugation_residual(&u, s, t)).fold(0.0, f64::max))
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (d, n) in [(2, 3), (3, 2)] {
        for k in 0..25 {
            let slot = rng.random_range(0..n);
            let m = qudit_clifford::random_admissible_map(n, d, slot, &mut rng);
            ensure(qudit_clifford::check_admissible(&m).passed(), format!("(d={d},n={n}) #{k} not admissible"))?;
            worst = worst.max(check_map(&m).map_err(|e| format!("(d={d},n={n}) #{k}: {e}"))?);
            count += 1;
        }
    }
    let paper = check_map(&xxx_zzz_map())?;
    ensure(worst < 1e-9 && paper < 1e-9, format!("residuals {worst:e}, {paper:e}"))?;
    Ok(format!("{count} random maps, max residual {worst:.1e}; X↦XXX, Z↦ZZZ residual {paper:.1e}"))
}

fn criterion_10() -> Outcome {
    let b = weyl_heisenberg_basis(2).map_err(|e| e.to_string())?;
    let base = mf_mpo::pauli_slice_mpo(&b).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_u: f64 = 0.0;
    let mut worst_f: f64 = 0.0;
    for k in 0..20 {
        let ut = linalg::random_unitary(base.phys_dim(), &mut rng);
        let o2: MpoTensor = base.with_input_unitary(&ut).map_err(|e| e.to_string())?;
        let (_, srep) = mf_mpo::mpo_slices(&o2, 1e-9).map_err(|e| e.to_string())?;
        ensure(srep.passed(), format!("#{k}: slices {:?}", srep.failures()))?;
        let (_, urep) = mf_mpo::build_purifying_unitary(&o2, 1e-9).map_err(|e| e.to_string())?;
        ensure(urep.passed(), format!("#{k}: purification {:?}", urep.failures()))?;
        let (rec, _) = mf_mpo::relative_local_unitary(&base, &o2, 1e-9).map_err(|e| e.to_string())?;
        let (scale, res) = linalg::fit_scale_mat(&rec, &ut);
        worst_u = worst_u.max(res).max((scale.norm() - 1.0).abs());
        let psi: Vec<C64> = {
            let v: Vec<C64> = (0..base.phys_dim().pow(3)).map(|_| linalg::gaussian_c(&mut rng)).collect();
            let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            v.into_iter().map(|z| z / n).collect()
        };
        let run = mf_mpo::apply_mpo_via_protocol(&vec![o2.clone(); 3], &psi, 100 + k, 1e-9).map_err(|e| e.to_string())?;
        worst_f = worst_f.max(1.0 - run.direct_fidelity);
    }
    ensure(worst_u < 1e-8, format!("Ũ round trip residual {worst_u:e}"))?;
    ensure(worst_f <= 1e-8, format!("protocol infidelity {worst_f:e}"))?;
    Ok(format!("20 round trips, max residual {worst_u:.1e}; protocol vs direct max infidelity {worst_f:.1e}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Option<Duration>); 10] = [
        ("solver families", criterion_1, Some(Duration::from_secs(1))),
        ("AKLT structure", criterion_2, Some(Duration::from_secs(5))),
        ("canonical form property", criterion_3, None),
        ("GHZ", criterion_4, None),
        ("transfer spectra", criterion_5, Some(Duration::from_secs(30))),
        ("non-injectivity", criterion_6, None),
        ("protocol determinism", criterion_7, Some(Duration::from_secs(60))),
        ("PEPS protocol", criterion_8, None),
        ("Clifford synthesis", criterion_9, None),
        ("MPO theorem", criterion_10, None),
    ];
    let mut failed = 0;
    for (k, (name, f, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let out = match (out, limit) {
            (Ok(_), Some(l)) if took > *l => Err(format!("took {:.2} s, limit {} s", took.as_secs_f64(), l.as_secs())),
            (o, _) => o,
        };
        match out {
            Ok(msg) => println!("criterion {} [{name}]: PASS ({:.2} s) {msg}", k + 1, took.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("criterion {} [{name}]: FAIL ({:.2} s) {msg}", k + 1, took.as_secs_f64());
            }
        }
    }
    println!("acceptance: {}/10 criteria pass", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
