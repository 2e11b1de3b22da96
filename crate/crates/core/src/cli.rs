//! Command-line frontend. Every subcommand prints one JSON [`RunReport`].
//!
//! Exit codes: 0 when every check passes (or for help), 1 on a failed check
//! or a library error, 2 on usage errors, 3 on malformed JSON input.
//!
//! Arguments that take JSON accept inline JSON, a file path, or a builtin
//! name such as `aklt`, `ex1:0.5`, `toric` or `pauli-slice:WH:2`.

use std::path::Path;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mf_basis::{self, CompositeMode, MfBasis};
use crate::mf_mpo::{self, MpoTensor};
use crate::mf_mps::{self, Boundary, ConstraintSet, MpsTensor};
use crate::mf_peps::{self, PepsTensor, TopoSymmetrySpec};
use crate::mf_protocol::{self, Corner, ProtocolRun};
use crate::qudit_clifford::{self, PartialCliffordMap, PauliVector};
use crate::report::{Check, Report};
use crate::tensors::linalg::{self, CMat};
use crate::tensors::{c, DenseTensor, C64};

/// Subcommand → module operations it exposes. Each operation appears once.
pub const DISPATCH: &[(&str, &[&str])] = &[
    ("basis", &["weyl_heisenberg_basis", "composite_basis", "hadamard_latin_basis", "check_group_closure"]),
    ("solve-family", &["solve_symmetry_family", "map_order"]),
    ("check-mps", &["check_mf_symmetry", "canonical_form_check"]),
    ("decompose-mps", &["split_polar", "correction_consistency", "clifford_magic_decompose"]),
    ("spt", &["spt_solution"]),
    ("block", &["block"]),
    ("expect", &["pauli_expectation"]),
    ("check-peps", &["check_peps_mf_symmetry", "peps_isometry_check", "peps_split_polar", "injectivity_check"]),
    ("topo-solve", &["topo_solution", "check_topo_symmetry"]),
    ("transfer", &["transfer_spectrum_analytic", "transfer_matrix_brute"]),
    ("degeneracy", &["degeneracy_report"]),
    ("simulate", &["run_mps_protocol", "run_peps_protocol", "enumerate_outcomes"]),
    (
        "mpo",
        &["check_mpo_isometry", "mpo_slices", "build_purifying_unitary", "relative_local_unitary", "apply_mpo_via_protocol"],
    ),
    ("clifford-synth", &["pauli_to_matrix", "check_admissible", "synthesize_clifford", "is_clifford"]),
];

#[derive(Debug, Parser)]
#[command(name = "mftn", version, about = "Measure-and-feedback tensor network toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Numeric tolerance; defaults to MFTN_TOL or 1e-9.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build and validate an MF basis.
    Basis {
        #[arg(long, default_value = "WH:2")]
        basis: String,
        /// Second factor for a composite basis.
        #[arg(long)]
        with: Option<String>,
        #[arg(long, value_enum, default_value_t = Mode::Product)]
        mode: Mode,
        /// {"h": [matrices], "lam": [[..]]} for a Hadamard/Latin-square basis.
        #[arg(long)]
        hadamard: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Solution space of a set of MF-symmetry constraints.
    SolveFamily {
        #[arg(long)]
        basis: Option<String>,
        #[arg(long)]
        constraints: String,
        /// Physical dimension; defaults to the basis dimension.
        #[arg(long)]
        d: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// MF symmetry and canonical form of an MPS tensor.
    CheckMps {
        #[arg(long)]
        tensor: String,
        #[command(flatten)]
        common: Common,
    },
    /// Polar split, correction consistency and Clifford+magic form.
    DecomposeMps {
        #[arg(long)]
        tensor: String,
        #[command(flatten)]
        common: Common,
    },
    /// Abelian SPT-type solution Q = Σ α_i P_i* ⊗ P_i.
    Spt {
        #[arg(long, default_value = "WH:2")]
        basis: String,
        #[arg(long)]
        alpha: String,
        #[command(flatten)]
        common: Common,
    },
    /// Block k copies of an MPS tensor.
    Block {
        #[arg(long)]
        tensor: String,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Expectation of a Weyl-Heisenberg string on a uniform chain.
    Expect {
        #[arg(long)]
        tensor: String,
        #[arg(long)]
        sites: usize,
        /// One string per site, separated by `;`, e.g. "X⊗X;Z⊗Z".
        #[arg(long)]
        strings: String,
        #[arg(long, value_enum, default_value_t = BoundaryArg::Open)]
        boundary: BoundaryArg,
        #[command(flatten)]
        common: Common,
    },
    /// Symmetry, isometry, polar split and injectivity of a PEPS tensor.
    CheckPeps {
        #[arg(long)]
        tensor: String,
        /// Comma-separated labels of a topological subgroup.
        #[arg(long)]
        subgroup: Option<String>,
        #[arg(long, default_value_t = 0.0)]
        phi: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Topological-type PEPS solution and its symmetry checks.
    TopoSolve {
        #[arg(long, default_value = "WH:2")]
        basis: String,
        #[arg(long)]
        alpha: String,
        #[arg(long)]
        subgroup: Option<String>,
        #[arg(long, default_value_t = 0.0)]
        phi: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Transfer-matrix spectrum, analytic and optionally brute force.
    Transfer {
        #[arg(long, default_value = "WH:2")]
        basis: String,
        #[arg(long)]
        alpha: String,
        #[arg(long = "L")]
        l: usize,
        #[arg(long)]
        brute: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Degeneracy of the leading transfer eigenvalue.
    Degeneracy {
        #[arg(long, default_value = "WH:2")]
        basis: String,
        #[arg(long)]
        alpha: String,
        #[arg(long = "L")]
        l: usize,
        #[arg(long)]
        subgroup: String,
        #[arg(long, default_value_t = 0.0)]
        phi: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Monte-Carlo run of the measure-and-feedback protocol.
    Simulate {
        /// MPS tensor repeated along a chain.
        #[arg(long, conflicts_with = "grid")]
        chain: Option<String>,
        /// PEPS tensor repeated over a rows×cols patch.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long, default_value_t = 4)]
        sites: usize,
        #[arg(long, default_value_t = 2)]
        rows: usize,
        #[arg(long, default_value_t = 2)]
        cols: usize,
        /// A corner (ur, ul, lr, ll) or `four-corner`.
        #[arg(long, default_value = "ur")]
        orientation: String,
        #[arg(long, value_enum, default_value_t = BoundaryArg::Open)]
        boundary: BoundaryArg,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also enumerate every outcome tuple.
        #[arg(long)]
        enumerate: bool,
        #[command(flatten)]
        common: Common,
    },
    /// MPO checks, purification, relative unitary and protocol application.
    Mpo {
        #[arg(value_enum)]
        action: MpoAction,
        #[arg(long)]
        tensor: String,
        /// Second MPO for `relative`, or `input-unitary:SEED`.
        #[arg(long)]
        other: Option<String>,
        #[arg(long, default_value_t = 3)]
        sites: usize,
        /// Input state for `apply`: a vector tensor, `zero`, or `random`.
        #[arg(long, default_value = "random")]
        input: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Synthesize a Clifford from a partial map of Weyl-Heisenberg strings.
    CliffordSynth {
        /// {"n", "d", "images": [["X⊗I⊗I", "X⊗X⊗X"], ...]} or `xxx-zzz`.
        #[arg(long)]
        map: String,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Product,
    MixedClock,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BoundaryArg {
    Open,
    Periodic,
}

impl From<BoundaryArg> for Boundary {
    fn from(b: BoundaryArg) -> Self {
        match b {
            BoundaryArg::Open => Boundary::Open,
            BoundaryArg::Periodic => Boundary::Periodic,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MpoAction {
    Check,
    Purify,
    Relative,
    Apply,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    /// SHA-256 over the arguments and every input file read.
    pub inputs_digest: String,
    pub tolerance: f64,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub artifacts: Vec<String>,
    pub elapsed_ms: u64,
    pub result: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct Outcome {
    pub code: i32,
    pub report: Option<RunReport>,
    /// What to print on stdout: the report, or help/usage text.
    pub text: String,
}

/// Reads inputs and feeds their bytes to the digest.
struct Ctx {
    hasher: Sha256,
}

impl Ctx {
    /// Inline JSON, a file path, or a bare word returned as a JSON string.
    fn json(&mut self, arg: &str) -> Result<Value> {
        let t = arg.trim();
        if t.starts_with('{') || t.starts_with('[') || t.starts_with('"') {
            return Ok(serde_json::from_str(t)?);
        }
        let p = Path::new(t);
        if p.is_file() {
            let s = std::fs::read_to_string(p)?;
            self.hasher.update(s.as_bytes());
            return Ok(serde_json::from_str(&s)?);
        }
        if let Ok(x) = t.parse::<f64>() {
            return Ok(json!(x));
        }
        Ok(Value::String(t.to_string()))
    }
}

/// Runs one command line (without the program name).
pub fn dispatch<I, S>(argv: I) -> Outcome
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(std::iter::once("mftn".to_string()).chain(args.iter().cloned())) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                        2
                    } else {
                        0
                    }
                }
                _ => 2,
            };
            return Outcome { code, report: None, text: e.render().to_string() };
        }
    };
    let start = Instant::now();
    let common = cli.command.common().clone();
    let tol = common.tol.filter(|t| *t > 0.0 && t.is_finite()).unwrap_or_else(crate::env_tolerance);
    let mut ctx = Ctx { hasher: Sha256::new() };
    for a in &args {
        ctx.hasher.update(a.as_bytes());
        ctx.hasher.update([0u8]);
    }
    let name = cli.command.name().to_string();
    let run = run_command(&cli.command, tol, &mut ctx);
    let digest: String = ctx.hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    let mut report = RunReport {
        command: name,
        inputs_digest: digest,
        tolerance: tol,
        passed: false,
        checks: Vec::new(),
        artifacts: Vec::new(),
        elapsed_ms: 0,
        result: Value::Null,
        error: None,
    };
    let code = match run {
        Ok((rep, result)) => {
            report.passed = rep.passed();
            report.checks = rep.checks;
            report.result = result;
            if report.passed {
                0
            } else {
                1
            }
        }
        Err(e) => {
            report.error = Some(e.to_string());
            if matches!(e, Error::Json(_)) {
                3
            } else {
                1
            }
        }
    };
    if let Some(out) = &common.out {
        report.artifacts.push(out.clone());
    }
    report.elapsed_ms = start.elapsed().as_millis() as u64;
    let body = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    let text = match &common.out {
        Some(out) => match std::fs::write(out, &body) {
            Ok(()) => String::new(),
            Err(e) => {
                report.error = Some(format!("cannot write {out}: {e}"));
                return Outcome { code: 1, text: body, report: Some(report) };
            }
        },
        None => body,
    };
    Outcome { code, report: Some(report), text }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Basis { .. } => "basis",
            Command::SolveFamily { .. } => "solve-family",
            Command::CheckMps { .. } => "check-mps",
            Command::DecomposeMps { .. } => "decompose-mps",
            Command::Spt { .. } => "spt",
            Command::Block { .. } => "block",
            Command::Expect { .. } => "expect",
            Command::CheckPeps { .. } => "check-peps",
            Command::TopoSolve { .. } => "topo-solve",
            Command::Transfer { .. } => "transfer",
            Command::Degeneracy { .. } => "degeneracy",
            Command::Simulate { .. } => "simulate",
            Command::Mpo { .. } => "mpo",
            Command::CliffordSynth { .. } => "clifford-synth",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Basis { common, .. }
            | Command::SolveFamily { common, .. }
            | Command::CheckMps { common, .. }
            | Command::DecomposeMps { common, .. }
            | Command::Spt { common, .. }
            | Command::Block { common, .. }
            | Command::Expect { common, .. }
            | Command::CheckPeps { common, .. }
            | Command::TopoSolve { common, .. }
            | Command::Transfer { common, .. }
            | Command::Degeneracy { common, .. }
            | Command::Simulate { common, .. }
            | Command::Mpo { common, .. }
            | Command::CliffordSynth { common, .. } => common,
        }
    }
}

fn run_command(cmd: &Command, tol: f64, ctx: &mut Ctx) -> Result<(Report, Value)> {
    match cmd {
        Command::Basis { basis, with, mode, hadamard, .. } => cmd_basis(ctx, basis, with.as_deref(), *mode, hadamard.as_deref(), tol),
        Command::SolveFamily { basis, constraints, d, .. } => cmd_solve_family(ctx, basis.as_deref(), constraints, *d, tol),
        Command::CheckMps { tensor, .. } => cmd_check_mps(ctx, tensor, tol),
        Command::DecomposeMps { tensor, .. } => cmd_decompose_mps(ctx, tensor, tol),
        Command::Spt { basis, alpha, .. } => cmd_spt(ctx, basis, alpha, tol),
        Command::Block { tensor, k, .. } => cmd_block(ctx, tensor, *k, tol),
        Command::Expect { tensor, sites, strings, boundary, .. } => cmd_expect(ctx, tensor, *sites, strings, (*boundary).into(), tol),
        Command::CheckPeps { tensor, subgroup, phi, .. } => cmd_check_peps(ctx, tensor, subgroup.as_deref(), *phi, tol),
        Command::TopoSolve { basis, alpha, subgroup, phi, .. } => cmd_topo_solve(ctx, basis, alpha, subgroup.as_deref(), *phi, tol),
        Command::Transfer { basis, alpha, l, brute, .. } => cmd_transfer(ctx, basis, alpha, *l, *brute, tol),
        Command::Degeneracy { basis, alpha, l, subgroup, phi, .. } => cmd_degeneracy(ctx, basis, alpha, *l, subgroup, *phi, tol),
        Command::Simulate { chain, grid, sites, rows, cols, orientation, boundary, trials, seed, enumerate, .. } => {
            let sim = Sim {
                sites: *sites,
                rows: *rows,
                cols: *cols,
                orientation,
                boundary: (*boundary).into(),
                trials: *trials,
                seed: *seed,
                enumerate: *enumerate,
            };
            match (chain, grid) {
                (Some(c), None) => cmd_simulate_chain(ctx, c, &sim, tol),
                (None, Some(g)) => cmd_simulate_grid(ctx, g, &sim, tol),
                _ => Err(Error::Precondition("give exactly one of --chain or --grid".into())),
            }
        }
        Command::Mpo { action, tensor, other, sites, input, seed, .. } => {
            cmd_mpo(ctx, *action, tensor, other.as_deref(), *sites, input, *seed, tol)
        }
        Command::CliffordSynth { map, .. } => cmd_clifford(ctx, map, tol),
    }
}

fn mat_json(m: &CMat) -> Value {
    json!(DenseTensor::from_matrix(m, &[("row", m.nrows())], &[("col", m.ncols())]).expect("finite matrix"))
}

fn complex_json(z: C64) -> Value {
    json!([z.re, z.im])
}

fn parse_complex(v: &Value) -> Result<C64> {
    match v {
        Value::Number(n) => Ok(c(n.as_f64().unwrap_or(f64::NAN), 0.0)),
        Value::Array(a) if a.len() == 2 => {
            let re = a[0].as_f64().ok_or_else(|| Error::Parse("complex entries must be numbers".into()))?;
            let im = a[1].as_f64().ok_or_else(|| Error::Parse("complex entries must be numbers".into()))?;
            Ok(c(re, im))
        }
        _ => Err(Error::Parse(format!("not a complex number: {v}"))),
    }
}

fn basis_arg(ctx: &mut Ctx, arg: &str) -> Result<MfBasis> {
    MfBasis::from_json(&ctx.json(arg)?)
}

/// Coefficients from `[..]`, `{"alpha": [..]}`, `{"interpolated": a}` or
/// `{"charge": k}`. A bare number is read as `interpolated`.
fn alpha_arg(ctx: &mut Ctx, arg: &str, basis: &MfBasis) -> Result<Vec<C64>> {
    let v = ctx.json(arg)?;
    let interp = |a: f64| -> Result<Vec<C64>> {
        if basis.size() != 4 || !basis.is_weyl_heisenberg() {
            return Err(Error::Precondition("the interpolated family lives on WH:2".into()));
        }
        Ok(mf_peps::interpolated_alpha(a))
    };
    let list = |a: &Value| -> Result<Vec<C64>> {
        let arr = a.as_array().ok_or_else(|| Error::Parse("alpha must be an array".into()))?;
        arr.iter().map(parse_complex).collect()
    };
    match &v {
        Value::Array(_) => list(&v),
        Value::Number(n) => interp(n.as_f64().unwrap_or(f64::NAN)),
        Value::Object(o) => {
            if let Some(a) = o.get("alpha") {
                list(a)
            } else if let Some(a) = o.get("interpolated") {
                interp(a.as_f64().ok_or_else(|| Error::Parse("`interpolated` must be a number".into()))?)
            } else if let Some(k) = o.get("charge") {
                if !basis.is_weyl_heisenberg() {
                    return Err(Error::NotWeylHeisenberg);
                }
                Ok(mf_peps::charge_alpha(basis, k.as_u64().ok_or_else(|| Error::Parse("`charge` must be an integer".into()))? as usize))
            } else {
                Err(Error::Parse("alpha object needs `alpha`, `interpolated` or `charge`".into()))
            }
        }
        _ => Err(Error::Parse(format!("cannot read alpha from {v}"))),
    }
}

/// `aklt`, `ex1:α`, `ex2:α`, or {"basis", "constraints", "tensor"}.
fn mps_arg(ctx: &mut Ctx, arg: &str) -> Result<MpsTensor> {
    let v = ctx.json(arg)?;
    if let Some(s) = v.as_str() {
        if s == "aklt" {
            return mf_mps::aklt_tensor();
        }
        for (pre, which) in [("ex1:", 1), ("ex2:", 2)] {
            if let Some(a) = s.strip_prefix(pre) {
                let a: f64 = a.parse().map_err(|_| Error::Parse(format!("bad α in `{s}`")))?;
                return mf_mps::example_family_member(which, c(a, 0.0));
            }
        }
        return Err(Error::Parse(format!("unknown MPS tensor `{s}`")));
    }
    let t: DenseTensor = serde_json::from_value(v.get("tensor").cloned().ok_or_else(|| Error::Parse("missing `tensor`".into()))?)?;
    let set = ConstraintSet::from_json(&v, t.dim("phys")?)?;
    MpsTensor::new(t, set.basis, set.constraints)
}

/// `toric`, `interp:a`, `charge:D:k`, or {"basis", "alpha"}.
fn peps_arg(ctx: &mut Ctx, arg: &str) -> Result<(PepsTensor, Vec<C64>)> {
    let v = ctx.json(arg)?;
    let (basis, alpha) = if let Some(s) = v.as_str() {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["toric"] => {
                let b = mf_basis::weyl_heisenberg_basis(2)?;
                let a = mf_peps::charge_alpha(&b, 0);
                (b, a)
            }
            ["interp", a] => {
                let a: f64 = a.parse().map_err(|_| Error::Parse(format!("bad α in `{s}`")))?;
                (mf_basis::weyl_heisenberg_basis(2)?, mf_peps::interpolated_alpha(a))
            }
            ["charge", d, k] => {
                let d: usize = d.parse().map_err(|_| Error::Parse(format!("bad D in `{s}`")))?;
                let k: usize = k.parse().map_err(|_| Error::Parse(format!("bad k in `{s}`")))?;
                let b = mf_basis::weyl_heisenberg_basis(d)?;
                let a = mf_peps::charge_alpha(&b, k);
                (b, a)
            }
            _ => return Err(Error::Parse(format!("unknown PEPS tensor `{s}`"))),
        }
    } else {
        let b = MfBasis::from_json(v.get("basis").ok_or_else(|| Error::Parse("missing `basis`".into()))?)?;
        let a = v.get("alpha").ok_or_else(|| Error::Parse("missing `alpha`".into()))?;
        let a = alpha_from_value(a, &b)?;
        (b, a)
    };
    Ok((mf_peps::topo_solution(&basis, &alpha)?, alpha))
}

fn alpha_from_value(v: &Value, basis: &MfBasis) -> Result<Vec<C64>> {
    let mut ctx = Ctx { hasher: Sha256::new() };
    alpha_arg(&mut ctx, &v.to_string(), basis)
}

/// `pauli-slice:WH:D` or {"basis", "constraints", "tensor"} with legs
/// (left, right, phys_in, phys_out).
fn mpo_arg(ctx: &mut Ctx, arg: &str) -> Result<MpoTensor> {
    let v = ctx.json(arg)?;
    if let Some(s) = v.as_str() {
        if let Some(b) = s.strip_prefix("pauli-slice:") {
            return mf_mpo::pauli_slice_mpo(&mf_basis::parse_basis_name(b)?);
        }
        return Err(Error::Parse(format!("unknown MPO tensor `{s}`")));
    }
    let t: DenseTensor = serde_json::from_value(v.get("tensor").cloned().ok_or_else(|| Error::Parse("missing `tensor`".into()))?)?;
    let set = ConstraintSet::from_json(&v, t.dim("phys_out")?)?;
    MpoTensor::new(t, set.basis, set.constraints)
}

fn subgroup_arg(basis: &MfBasis, s: &str, phi: f64) -> Result<TopoSymmetrySpec> {
    let mut subgroup = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        subgroup.push(basis.resolve_label(part)?.0);
    }
    Ok(TopoSymmetrySpec { subgroup, phi })
}

fn cmd_basis(ctx: &mut Ctx, basis: &str, with: Option<&str>, mode: Mode, hadamard: Option<&str>, tol: f64) -> Result<(Report, Value)> {
    let b = if let Some(h) = hadamard {
        let v = ctx.json(h)?;
        let hs: Vec<DenseTensor> = serde_json::from_value(v.get("h").cloned().ok_or_else(|| Error::Parse("missing `h`".into()))?)?;
        let lam: Vec<Vec<usize>> = serde_json::from_value(v.get("lam").cloned().ok_or_else(|| Error::Parse("missing `lam`".into()))?)?;
        let mats = hs
            .iter()
            .map(|t| {
                let legs: Vec<&str> = t.legs().iter().map(String::as_str).collect();
                if legs.len() != 2 {
                    return Err(Error::Parse("Hadamard matrices must have two legs".into()));
                }
                t.to_matrix(&legs[..1], &legs[1..])
            })
            .collect::<Result<Vec<_>>>()?;
        mf_basis::hadamard_latin_basis(&mats, &lam)?
    } else {
        let b1 = match ctx.json(basis)? {
            Value::String(s) => {
                let d = s
                    .trim_start_matches("WH:")
                    .trim_start_matches("wh:")
                    .parse::<usize>()
                    .map_err(|_| Error::Parse(format!("unknown basis name `{s}`")))?;
                mf_basis::weyl_heisenberg_basis(d)?
            }
            v => MfBasis::from_json(&v)?,
        };
        match with {
            Some(w) => {
                let b2 = basis_arg(ctx, w)?;
                let m = match mode {
                    Mode::Product => CompositeMode::Product,
                    Mode::MixedClock => CompositeMode::MixedClock,
                };
                mf_basis::composite_basis(&b1, &b2, m)?
            }
            None => b1,
        }
    };
    let rep = b.validate(tol);
    let closure = mf_basis::check_group_closure(&b);
    let result = json!({
        "dim": b.dim,
        "kind": b.kind,
        "labels": b.labels,
        "is_group": closure.is_some(),
        "abelian": closure.as_ref().map(|t| t.abelian),
        "basis": b.to_json(),
    });
    Ok((rep, result))
}

fn cmd_solve_family(ctx: &mut Ctx, basis: Option<&str>, constraints: &str, d: Option<usize>, tol: f64) -> Result<(Report, Value)> {
    let mut v = ctx.json(constraints)?;
    if let Some(b) = basis {
        let bv = ctx.json(b)?;
        v.as_object_mut().ok_or_else(|| Error::Parse("constraints must be an object".into()))?.insert("basis".into(), bv);
    }
    let dd = MfBasis::from_json(v.get("basis").ok_or_else(|| Error::Parse("missing `basis`".into()))?)?.dim;
    let d = d.or_else(|| v.get("d").and_then(Value::as_u64).map(|x| x as usize)).unwrap_or(dd);
    let set = ConstraintSet::from_json(&v, d)?;
    let sols = mf_mps::solve_symmetry_family(&set.basis, &set.constraints, d, dd)?;
    let mut rep = Report::new();
    let known = set.constraints.iter().all(|k| k.u_phys.is_some());
    if known {
        for (i, t) in sols.iter().enumerate() {
            let a = MpsTensor::new(t.clone(), set.basis.clone(), set.constraints.clone())?;
            rep.extend(&format!("solution[{i}]"), mf_mps::check_mf_symmetry(&a, tol)?);
        }
    }
    let order = mf_mps::map_order(&set.constraints, Some(&set.basis))?;
    Ok((rep, json!({"d": d, "D": dd, "dimension": sols.len(), "map_order": order, "solutions": sols})))
}

fn cmd_check_mps(ctx: &mut Ctx, tensor: &str, tol: f64) -> Result<(Report, Value)> {
    let a = mps_arg(ctx, tensor)?;
    let mut rep = Report::new();
    rep.extend("symmetry", mf_mps::check_mf_symmetry(&a, tol)?);
    let (pass, k, r) = mf_mps::canonical_form_check(&a, tol);
    rep.checks.push(Check { name: "canonical_form".into(), pass, residual: r });
    Ok((rep, json!({"d": a.phys_dim(), "D": a.bond_dim(), "canonical_constant": complex_json(k)})))
}

fn cmd_decompose_mps(ctx: &mut Ctx, tensor: &str, tol: f64) -> Result<(Report, Value)> {
    let a = mps_arg(ctx, tensor)?;
    let (split, split_rep) = mf_mps::split_polar(&a, tol)?;
    let mut rep = Report::new();
    rep.extend("polar", split_rep);
    rep.extend("consistency", mf_mps::correction_consistency(&a, tol)?);
    let mut result = json!({
        "rank": split.rank,
        "injective": split.injective(),
        "V": mat_json(&split.v),
        "Q": mat_json(&split.q),
        "R": mat_json(&split.r),
    });
    let dd = a.bond_dim();
    match mf_mps::clifford_magic_decompose(&split, &a) {
        Ok(cm) => {
            rep.check("clifford_magic.reconstruction", cm.residual, tol);
            rep.flag("clifford_magic.is_clifford", qudit_clifford::is_clifford(&cm.u_c, 3, dd)?);
            let stab = mf_mps::is_stabilizer_state(&cm.psi, 2, dd, 1e-8);
            result["clifford_magic"] = json!({
                "U_C": mat_json(&cm.u_c),
                "psi": cm.psi.iter().map(|z| complex_json(*z)).collect::<Vec<_>>(),
                "scale": cm.scale,
                "residual": cm.residual,
                "psi_is_stabilizer": stab,
            });
        }
        Err(e @ (Error::NotWeylHeisenberg | Error::NonPrimeDimension(_))) => {
            result["clifford_magic"] = json!({"skipped": e.to_string()});
        }
        Err(e) => return Err(e),
    }
    Ok((rep, result))
}

fn constraints_json(a_basis: &MfBasis, cons: &[mf_mps::SymmetryConstraint]) -> Value {
    json!(cons
        .iter()
        .map(|k| json!({
            "p_in": a_basis.labels[k.p_in],
            "p_out": a_basis.labels[k.p_out],
            "u_phys": k.u_phys.as_ref().map(mat_json).unwrap_or(json!("solve")),
        }))
        .collect::<Vec<_>>())
}

fn cmd_spt(ctx: &mut Ctx, basis: &str, alpha: &str, tol: f64) -> Result<(Report, Value)> {
    let b = basis_arg(ctx, basis)?;
    let alpha = alpha_arg(ctx, alpha, &b)?;
    let a = mf_mps::spt_solution(&b, &alpha)?;
    let mut rep = Report::new();
    rep.extend("symmetry", mf_mps::check_mf_symmetry(&a, tol)?);
    Ok((rep, json!({"basis": b.to_json(), "constraints": constraints_json(&b, &a.constraints), "tensor": a.tensor})))
}

fn cmd_block(ctx: &mut Ctx, tensor: &str, k: usize, tol: f64) -> Result<(Report, Value)> {
    let a = mps_arg(ctx, tensor)?;
    let blocked = mf_mps::block(&a, k)?;
    let t = &blocked.tensor;
    let mut rep = Report::new();
    rep.extend("symmetry", mf_mps::check_mf_symmetry(t, tol)?);
    let image: Vec<&str> = blocked.image.iter().map(|&i| t.basis.labels[i].as_str()).collect();
    Ok((
        rep,
        json!({"k": k, "d": t.phys_dim(), "image": image, "basis": t.basis.to_json(), "constraints": constraints_json(&t.basis, &t.constraints), "tensor": t.tensor}),
    ))
}

/// Splits a physical dimension into n equal qudits.
fn qudit_dim(phys: usize, n: usize) -> Option<usize> {
    (1..=phys).find(|q| q.checked_pow(n as u32) == Some(phys))
}

fn cmd_expect(ctx: &mut Ctx, tensor: &str, sites: usize, strings: &str, boundary: Boundary, tol: f64) -> Result<(Report, Value)> {
    let a = mps_arg(ctx, tensor)?;
    let family = vec![a.clone(); sites];
    let phys = a.phys_dim();
    let parts: Vec<&str> = strings.split(';').map(str::trim).collect();
    let mut ps = Vec::new();
    for s in &parts {
        let n = s.split(['⊗', ',', ' ']).filter(|t| !t.is_empty()).count();
        let q = qudit_dim(phys, n).ok_or_else(|| Error::Parse(format!("`{s}` does not fit physical dimension {phys}")))?;
        ps.push(PauliVector::parse(s, q).ok_or_else(|| Error::Parse(format!("bad Weyl-Heisenberg string `{s}`")))?);
    }
    let value = mf_mps::pauli_expectation(&family, &ps, boundary)?;
    let norm_strings: Vec<PauliVector> = ps.iter().map(|p| PauliVector::identity(p.n, p.d)).collect();
    let norm = mf_mps::pauli_expectation(&family, &norm_strings, boundary)?;
    let mut rep = Report::new();
    let mut result = json!({
        "sites": sites,
        "boundary": boundary,
        "strings": ps.iter().map(PauliVector::label).collect::<Vec<_>>(),
        "value": complex_json(value),
        "norm": complex_json(norm),
        "normalized": complex_json(value / norm),
    });
    if boundary == Boundary::Open && sites <= 6 {
        let dense = mf_mps::dense_pauli_expectation(&family, &ps)?;
        rep.check("matches_dense", (dense - value).norm() / dense.norm().max(1.0), tol);
        result["dense"] = complex_json(dense);
    }
    Ok((rep, result))
}

fn cmd_check_peps(ctx: &mut Ctx, tensor: &str, subgroup: Option<&str>, phi: f64, tol: f64) -> Result<(Report, Value)> {
    let (a, _) = peps_arg(ctx, tensor)?;
    let mut rep = Report::new();
    rep.extend("symmetry", mf_peps::check_peps_mf_symmetry(&a, tol)?);
    let (iso, k) = mf_peps::peps_isometry_check(&a, tol)?;
    rep.extend("isometry", iso);
    let split = mf_peps::peps_split_polar(&a, tol)?;
    rep.extend("polar", split.report.clone());
    let spec = subgroup.map(|s| subgroup_arg(&a.basis, s, phi)).transpose()?;
    let (inj, rank) = mf_peps::injectivity_check(&a, spec.as_ref(), tol)?;
    rep.extend("injectivity", inj);
    let clifford = match &split.clifford {
        Some(cm) => json!({"residual": cm.residual, "scale": cm.scale, "psi_is_stabilizer": mf_mps::is_stabilizer_state(&cm.psi, 4, a.bond_dim(), 1e-8)}),
        None => json!({"skipped": split.clifford_skipped}),
    };
    Ok((
        rep,
        json!({
            "D": a.bond_dim(),
            "d": a.phys_dim(),
            "isometry_constant": complex_json(k),
            "rank": split.split.rank,
            "virtual_rank": rank,
            "clifford_magic": clifford,
        }),
    ))
}

fn cmd_topo_solve(ctx: &mut Ctx, basis: &str, alpha: &str, subgroup: Option<&str>, phi: f64, tol: f64) -> Result<(Report, Value)> {
    let b = basis_arg(ctx, basis)?;
    let alpha = alpha_arg(ctx, alpha, &b)?;
    let a = mf_peps::topo_solution(&b, &alpha)?;
    let mut rep = Report::new();
    rep.extend("symmetry", mf_peps::check_peps_mf_symmetry(&a, tol)?);
    let mut result = json!({
        "D": b.dim,
        "alpha": alpha.iter().map(|z| complex_json(*z)).collect::<Vec<_>>(),
        "pushes": a.pushes.len(),
        "tensor": a.tensor,
    });
    if let Some(s) = subgroup {
        let spec = subgroup_arg(&b, s, phi)?;
        let (r, phis) = mf_peps::check_topo_symmetry(&a, &spec, Some(&alpha), tol)?;
        rep.extend("topological", r);
        result["phases"] = json!(phis);
    }
    Ok((rep, result))
}

/// Distinct values of `t` with their multiplicities, largest modulus first.
fn multiplicities(t: &[C64]) -> Vec<Value> {
    let mut groups: Vec<(C64, usize)> = Vec::new();
    for z in t {
        let scale = z.norm().max(1.0);
        match groups.iter_mut().find(|(g, _)| (g - z).norm() <= 1e-9 * scale) {
            Some(g) => g.1 += 1,
            None => groups.push((*z, 1)),
        }
    }
    groups.sort_by(|a, b| b.0.norm().partial_cmp(&a.0.norm()).unwrap_or(std::cmp::Ordering::Equal));
    groups.into_iter().map(|(z, m)| json!({"value": complex_json(z), "multiplicity": m})).collect()
}

fn cmd_transfer(ctx: &mut Ctx, basis: &str, alpha: &str, l: usize, brute: bool, tol: f64) -> Result<(Report, Value)> {
    let b = basis_arg(ctx, basis)?;
    let alpha = alpha_arg(ctx, alpha, &b)?;
    let ts = mf_peps::transfer_spectrum_analytic(&alpha, &b, l)?;
    let mut rep = Report::new();
    let mut result = json!({"spectrum": ts, "eigenvalues": multiplicities(&ts.t)});
    if brute {
        let a = mf_peps::topo_solution(&b, &alpha)?;
        let ev = mf_peps::transfer_matrix_brute(&a, l)?;
        rep.check("brute_matches_analytic", mf_peps::compare_transfer(&ev, &ts, b.dim), tol.max(1e-8));
        result["brute"] = json!(ev.iter().map(|z| complex_json(*z)).collect::<Vec<_>>());
    }
    Ok((rep, result))
}

fn cmd_degeneracy(ctx: &mut Ctx, basis: &str, alpha: &str, l: usize, subgroup: &str, phi: f64, tol: f64) -> Result<(Report, Value)> {
    let b = basis_arg(ctx, basis)?;
    let alpha = alpha_arg(ctx, alpha, &b)?;
    let spec = subgroup_arg(&b, subgroup, phi)?;
    let (rep, ts) = mf_peps::degeneracy_report(&b, &spec, &alpha, l, tol)?;
    Ok((rep, json!({"subgroup_order": spec.subgroup.len(), "spectrum": ts})))
}

struct Sim<'a> {
    sites: usize,
    rows: usize,
    cols: usize,
    orientation: &'a str,
    boundary: Boundary,
    trials: usize,
    seed: u64,
    enumerate: bool,
}

fn trial_json(r: &ProtocolRun) -> Value {
    json!({
        "seed": r.seed,
        "outcomes": r.outcome_labels,
        "probability": r.probability,
        "fidelity": r.fidelity,
        "success": r.success,
        "merged_defect": r.merged_defect,
    })
}

/// Checks shared by chain and grid runs. Open boundaries must always
/// succeed with uniform Born statistics; a periodic failure must come from
/// a leftover defect on the merge bond.
fn protocol_checks(runs: &[ProtocolRun], d2: usize, open: bool, tol: f64) -> (Report, Value) {
    let summary = mf_protocol::summarize(runs, d2);
    let mut rep = Report::new();
    if open {
        rep.flag("all_trials_succeed", summary.successes == summary.trials);
        rep.check("born_uniform", summary.max_born_deviation, tol.max(1e-9));
    } else {
        rep.flag("failures_explained", runs.iter().all(|r| r.success || r.merged_defect.as_deref().is_some_and(|m| m != "I")));
    }
    if let Some(f) = summary.min_fidelity_on_success {
        rep.check("fidelity_on_success", 1.0 - f, tol.max(1e-9));
    }
    let trials: Vec<Value> = runs.iter().map(trial_json).collect();
    (rep, json!({"rng": mf_protocol::RNG_NAME, "summary": summary, "trials": trials}))
}

fn enumeration_json(e: &mf_protocol::Enumeration) -> Value {
    json!({
        "tuples": e.tuples,
        "successful_tuples": e.successful_tuples,
        "total_probability": e.total_probability,
        "success_probability": e.success_probability,
    })
}

fn cmd_simulate_chain(ctx: &mut Ctx, chain: &str, sim: &Sim, tol: f64) -> Result<(Report, Value)> {
    let a = mps_arg(ctx, chain)?;
    let tensors = vec![a.clone(); sim.sites];
    let seeds: Vec<u64> = (0..sim.trials as u64).map(|k| sim.seed.wrapping_add(k)).collect();
    let runs: Vec<ProtocolRun> = seeds
        .par_iter()
        .map(|&s| mf_protocol::run_mps_protocol(&tensors, sim.boundary, s, tol))
        .collect::<Result<_>>()?;
    let open = sim.boundary == Boundary::Open;
    let (mut rep, mut result) = protocol_checks(&runs, a.basis.size(), open, tol);
    result["sites"] = json!(sim.sites);
    result["boundary"] = json!(sim.boundary);
    if sim.enumerate {
        let e = mf_protocol::enumerate_outcomes(&tensors, sim.boundary, tol)?;
        rep.check("enumeration.total_probability", (e.total_probability - 1.0).abs(), 1e-8);
        if open {
            rep.check("enumeration.success_probability", (e.success_probability - 1.0).abs(), 1e-8);
        }
        result["enumeration"] = enumeration_json(&e);
    }
    Ok((rep, result))
}

fn cmd_simulate_grid(ctx: &mut Ctx, grid: &str, sim: &Sim, tol: f64) -> Result<(Report, Value)> {
    if sim.boundary != Boundary::Open {
        return Err(Error::Precondition("PEPS patches are simulated with open boundaries only".into()));
    }
    let (a, _) = peps_arg(ctx, grid)?;
    let tensors = vec![vec![a.clone(); sim.cols]; sim.rows];
    let orientation = if sim.orientation == "four-corner" {
        mf_protocol::four_corner_orientation(sim.rows, sim.cols)
    } else {
        mf_protocol::uniform_orientation(sim.rows, sim.cols, sim.orientation.parse::<Corner>()?)
    };
    let seeds: Vec<u64> = (0..sim.trials as u64).map(|k| sim.seed.wrapping_add(k)).collect();
    let runs: Vec<ProtocolRun> = seeds
        .par_iter()
        .map(|&s| mf_protocol::run_peps_protocol(&tensors, &orientation, s, tol))
        .collect::<Result<_>>()?;
    let (mut rep, mut result) = protocol_checks(&runs, a.basis.size(), true, tol);
    result["rows"] = json!(sim.rows);
    result["cols"] = json!(sim.cols);
    if sim.enumerate {
        let lat = mf_protocol::Lattice::grid(&tensors, &orientation)?;
        let e = mf_protocol::enumerate_lattice(&lat, tol)?;
        rep.check("enumeration.total_probability", (e.total_probability - 1.0).abs(), 1e-8);
        rep.check("enumeration.success_probability", (e.success_probability - 1.0).abs(), 1e-8);
        result["enumeration"] = enumeration_json(&e);
    }
    Ok((rep, result))
}

#[allow(clippy::too_many_arguments)]
fn cmd_mpo(ctx: &mut Ctx, action: MpoAction, tensor: &str, other: Option<&str>, sites: usize, input: &str, seed: u64, tol: f64) -> Result<(Report, Value)> {
    let o = mpo_arg(ctx, tensor)?;
    let mut rep = Report::new();
    match action {
        MpoAction::Check => {
            let (iso, k) = mf_mpo::check_mpo_isometry(&o, tol);
            rep.extend("isometry", iso);
            let (slices, srep) = mf_mpo::mpo_slices(&o, tol)?;
            rep.extend("slices", srep);
            Ok((rep, json!({"constant": complex_json(k), "slices": slices.iter().map(mat_json).collect::<Vec<_>>()})))
        }
        MpoAction::Purify => {
            let (u, urep) = mf_mpo::build_purifying_unitary(&o, tol)?;
            rep.extend("purification", urep);
            Ok((rep, json!({"U": mat_json(&u)})))
        }
        MpoAction::Relative => {
            let other = other.ok_or_else(|| Error::Precondition("`relative` needs --other".into()))?;
            let (o2, applied) = match other.strip_prefix("input-unitary:") {
                Some(s) => {
                    let s: u64 = s.parse().map_err(|_| Error::Parse(format!("bad seed in `{other}`")))?;
                    let u = linalg::random_unitary(o.phys_dim(), &mut ChaCha8Rng::seed_from_u64(s));
                    (o.with_input_unitary(&u)?, Some(u))
                }
                None => (mpo_arg(ctx, other)?, None),
            };
            let (ut, rrep) = mf_mpo::relative_local_unitary(&o, &o2, tol)?;
            rep.extend("relative", rrep);
            let mut result = json!({"U_tilde": mat_json(&ut)});
            if let Some(u) = applied {
                let (_, r) = linalg::fit_scale_mat(&ut, &u);
                rep.check("recovers_applied_unitary", r, tol.max(1e-8));
                result["applied"] = mat_json(&u);
            }
            Ok((rep, result))
        }
        MpoAction::Apply => {
            let d = o.phys_dim();
            let n = d.pow(sites as u32);
            let psi: Vec<C64> = match input {
                "zero" => (0..n).map(|i| if i == 0 { c(1.0, 0.0) } else { c(0.0, 0.0) }).collect(),
                "random" => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
                    let v: Vec<C64> = (0..n).map(|_| linalg::gaussian_c(&mut rng)).collect();
                    let nrm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                    v.into_iter().map(|z| z / nrm).collect()
                }
                other => {
                    let t: DenseTensor = serde_json::from_value(ctx.json(other)?)?;
                    t.into_data()
                }
            };
            let ops = vec![o.clone(); sites];
            let run = mf_mpo::apply_mpo_via_protocol(&ops, &psi, seed, tol)?;
            rep.check("matches_direct_action", 1.0 - run.direct_fidelity, tol.max(1e-9));
            Ok((
                rep,
                json!({
                    "sites": sites,
                    "seed": seed,
                    "outcomes": run.run.outcome_labels,
                    "probability": run.run.probability,
                    "direct_fidelity": run.direct_fidelity,
                }),
            ))
        }
    }
}

/// The three-qubit map X ↦ X⊗X⊗X, Z ↦ Z⊗Z⊗Z on the first wire.
pub fn xxx_zzz_map() -> PartialCliffordMap {
    let p = |s: &str| PauliVector::parse(s, 2).expect("valid string");
    PartialCliffordMap { n: 3, d: 2, images: vec![(p("X⊗I⊗I"), p("X⊗X⊗X")), (p("Z⊗I⊗I"), p("Z⊗Z⊗Z"))] }
}

fn cmd_clifford(ctx: &mut Ctx, map: &str, tol: f64) -> Result<(Report, Value)> {
    let v = ctx.json(map)?;
    let m = if v.as_str() == Some("xxx-zzz") {
        xxx_zzz_map()
    } else {
        let n = v.get("n").and_then(Value::as_u64).ok_or_else(|| Error::Parse("missing `n`".into()))? as usize;
        let d = v.get("d").and_then(Value::as_u64).ok_or_else(|| Error::Parse("missing `d`".into()))? as usize;
        let pairs: Vec<(String, String)> = serde_json::from_value(v.get("images").cloned().ok_or_else(|| Error::Parse("missing `images`".into()))?)?;
        let mut images = Vec::new();
        for (s, t) in &pairs {
            let ps = PauliVector::parse(s, d).ok_or_else(|| Error::Parse(format!("bad string `{s}`")))?;
            let pt = PauliVector::parse(t, d).ok_or_else(|| Error::Parse(format!("bad string `{t}`")))?;
            images.push((ps, pt));
        }
        PartialCliffordMap { n, d, images }
    };
    let mut rep = Report::new();
    rep.extend("admissible", qudit_clifford::check_admissible(&m));
    if !rep.passed() {
        return Ok((rep, json!({"map": m.images.iter().map(|(s, t)| [s.label(), t.label()]).collect::<Vec<_>>()})));
    }
    let u = qudit_clifford::synthesize_clifford(&m)?;
    rep.flag("is_clifford", qudit_clifford::is_clifford(&u, m.n, m.d)?);
    for (k, (s, t)) in m.images.iter().enumerate() {
        let ps = qudit_clifford::pauli_to_matrix(s);
        let pt = qudit_clifford::pauli_to_matrix(t);
        let r = (&u * ps * u.adjoint() - &pt).norm() / pt.norm();
        rep.check(format!("image[{k}]"), r, tol);
    }
    Ok((
        rep,
        json!({
            "n": m.n,
            "d": m.d,
            "map": m.images.iter().map(|(s, t)| [s.label(), t.label()]).collect::<Vec<_>>(),
            "U_C": mat_json(&u),
        }),
    ))
}
