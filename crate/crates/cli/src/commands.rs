//! The four subcommands.  Each returns a JSON report (also written to the output directory)
//! and writes its CSV side files there.

use std::fs;
use std::path::Path;

use obg_core::complex::{build_complex, expect_ranks, homology_ranks, morse_smale_complex, ChainComplex, TORUS_RANKS};
use obg_core::deformation::{DeformationOptions, Diagnostics, ObstructionSolver};
use obg_core::flowline::{find_connections, FlowlineOptions, FrontBack, LeftRight, TorusCatalog};
use obg_core::linear_analysis::{fredholm_index, LinearizedPath};
use obg_core::obg_t::{
    continuation_oracle, four_panels, torus_perturbations, t_verdict, ContinuationResult, PairKind, Panel,
    PerturbedSystem, TGluingVerdict, TSide, T_ENVELOPE,
};
use obg_core::obg_zero::{gluing_verdict, label, shooting_oracle, GluingProfile, GluingVerdict, Pregluing};
use obg_core::{MorseSystem, ObgError, Result};
use serde::Serialize;
use serde_json::Value;

use crate::config::{parse_range, RunConfig};

/// Slice margin for the slice zero of the full section.
const FULL_SLICE_MARGIN: f64 = 6.0;
/// Flowline window beyond the longest slice in a 0-gluing run.
const WINDOW_SLACK: f64 = 2.0;
/// Trials of the random adjoint-pairing probe per non-transverse flowline.
const ADJOINT_TRIALS: usize = 50;

fn io_err(path: &Path, e: impl std::fmt::Display) -> ObgError {
    ObgError::Config(format!("{}: {e}", path.display()))
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<Value> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let v = serde_json::to_value(value).map_err(|e| ObgError::Config(e.to_string()))?;
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(&v).map_err(|e| ObgError::Config(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
    Ok(v)
}

fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T], header: &[&str]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(name);
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&path).map_err(|e| io_err(&path, e))?;
    w.write_record(header).map_err(|e| io_err(&path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))
}

fn setup(cfg: &RunConfig) -> Result<(MorseSystem, FlowlineOptions)> {
    Ok((MorseSystem::from_config(&cfg.system)?, cfg.flowline.options()))
}

// ---------------------------------------------------------------------------------------
// analyze

#[derive(Serialize)]
struct CriticalPointRow {
    id: usize,
    location: [f64; 2],
    value: f64,
    index: usize,
    eigenvalues: [f64; 2],
}

#[derive(Serialize)]
struct Tail {
    rate: f64,
    coefficient: [f64; 2],
}

#[derive(Serialize)]
struct ConnectionRow {
    label: String,
    source: usize,
    target: usize,
    fredholm_index: i64,
    ker: usize,
    coker: usize,
    reduced_ker: usize,
    tails: [Tail; 2],
    /// Cokernel tails `b_-`, `b_+` when the cokernel is one-dimensional.
    #[serde(skip_serializing_if = "Option::is_none")]
    cokernel_tails: Option<[Tail; 2]>,
    /// Largest `|<sigma, D psi>| / |psi|` over random bumps.
    #[serde(skip_serializing_if = "Option::is_none")]
    adjoint_pairing: Option<f64>,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct AnalyzeReport {
    system: obg_core::SystemConfig,
    seed: u64,
    critical_points: Vec<CriticalPointRow>,
    connections: Vec<ConnectionRow>,
}

fn tail(t: &obg_core::flowline::TailData) -> Tail {
    Tail { rate: t.rate, coefficient: [t.coefficient.x, t.coefficient.y] }
}

pub fn analyze(cfg: &RunConfig) -> Result<Value> {
    let (sys, opts) = setup(cfg)?;
    let cps = &sys.critical_points;
    let critical_points = cps
        .iter()
        .enumerate()
        .map(|(id, c)| CriticalPointRow {
            id,
            location: [c.location.x, c.location.y],
            value: c.value,
            index: c.index,
            eigenvalues: c.eigenvalues,
        })
        .collect();
    let mut connections = Vec::new();
    for s in 0..cps.len() {
        for t in 0..cps.len() {
            let (a, b) = (&cps[s], &cps[t]);
            let wanted = a.index >= 1 && a.value > b.value && (a.index == b.index + 1 || a.index == b.index);
            if !wanted {
                continue;
            }
            for u in find_connections(&sys, s, t, &opts)? {
                let lin = LinearizedPath::new(&sys, &u);
                let kc = lin.kernel_cokernel_dims();
                let (mut cokernel_tails, mut adjoint_pairing) = (None, None);
                if kc.coker == 1 {
                    let sigma = lin.cokernel_element()?;
                    cokernel_tails = Some([tail(&sigma.tails[0]), tail(&sigma.tails[1])]);
                    adjoint_pairing = Some(lin.adjoint_pairing_check(&sigma, ADJOINT_TRIALS, cfg.seed));
                }
                connections.push(ConnectionRow {
                    label: label(&u),
                    source: s,
                    target: t,
                    fredholm_index: fredholm_index(&u),
                    ker: kc.ker,
                    coker: kc.coker,
                    reduced_ker: kc.reduced_ker,
                    tails: [tail(&u.tails[0]), tail(&u.tails[1])],
                    cokernel_tails,
                    adjoint_pairing,
                    warnings: kc.warnings,
                });
            }
        }
    }
    let report = AnalyzeReport { system: cfg.system.clone(), seed: cfg.seed, critical_points, connections };
    write_json(&cfg.output_dir, "analyze.json", &report)
}

// ---------------------------------------------------------------------------------------
// glue0

#[derive(Serialize)]
struct SweepRow {
    r0_minus: f64,
    r0_plus: f64,
    s00: f64,
    s0: f64,
    defect_left: f64,
    defect_right: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    s: Option<f64>,
}

#[derive(Serialize)]
struct Glue0Report {
    verdict: GluingVerdict,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    sweep: Vec<SweepSummary>,
}

#[derive(Serialize)]
struct SweepSummary {
    #[serde(rename = "R0")]
    r0: f64,
    #[serde(rename = "zero_R0_minus")]
    zero_r0_minus: Option<f64>,
}

fn parse_triple(s: &str) -> Result<(FrontBack, LeftRight, FrontBack)> {
    let p: Vec<&str> = s.split(',').map(str::trim).collect();
    if p.len() != 3 {
        return Err(ObgError::Config(format!("triple must be minus,zero,plus; got {s:?}")));
    }
    Ok((FrontBack::parse(p[0])?, LeftRight::parse(p[1])?, FrontBack::parse(p[2])?))
}

pub fn glue0(cfg: &RunConfig) -> Result<Value> {
    let p = &cfg.glue0;
    let (m, z, pl) = parse_triple(&p.triple)?;
    let (sys, mut opts) = setup(cfg)?;
    let mut longest = p.r0;
    if let Some(spec) = &p.sweep {
        longest = longest.max(parse_range(spec, 3)?[1]);
    }
    // The pregluing samples each piece up to roughly the slice length from its centre.
    opts.window = opts.window.max(longest + WINDOW_SLACK);
    let cat = TorusCatalog::build(&sys, &opts)?;
    let (um, u0, up) = (cat.minus(m), cat.zero(z), cat.plus(pl));
    let template = GluingProfile::new(0.5 * p.r0, 0.5 * p.r0);
    let mut verdict = gluing_verdict(&sys, um, u0, up, &template, p.r0)?;
    if let Some(tol) = p.oracle_tol {
        verdict.oracle = Some(shooting_oracle(&sys, um, u0, up, tol, &opts)?);
    }
    let solver = if p.full { Some(ObstructionSolver::new(&sys, um, u0, up, DeformationOptions::default())?) } else { None };
    if let Some(sol) = &solver {
        verdict.zero_r0_minus_s = sol.slice_zero(&template, p.r0, FULL_SLICE_MARGIN)?.map(|z| z.r0_minus);
    }
    let mut sweep = Vec::new();
    if let Some(spec) = &p.sweep {
        let v = parse_range(spec, 3)?;
        let (lo, hi, step) = (v[0], v[1], v[2]);
        if !(step > 0.0) || hi < lo {
            return Err(ObgError::Config(format!("sweep {spec:?} needs lo <= hi and step > 0")));
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        let mut rows = Vec::new();
        let mut diagnostics: Vec<Diagnostics> = Vec::new();
        for k in 0..n {
            let r0 = lo + step * k as f64;
            let v = gluing_verdict(&sys, um, u0, up, &template, r0)?;
            let r0m = v.zero_r0_minus.unwrap_or(0.5 * r0);
            let prof = template.with_r0(r0m, r0 - r0m);
            let pre = Pregluing::new(um, u0, up, prof)?;
            let sigma = LinearizedPath::new(&sys, u0).cokernel_element()?;
            let s0 = obg_core::obg_zero::s0(&pre, &sigma)?;
            let s00 = obg_core::obg_zero::Asymptotics::new(um, u0, up, &sigma).s00(&prof);
            let [l, r] = pre.overlaps();
            let mut s = None;
            if let Some(sol) = &solver {
                let o = sol.obstruction_section(&prof)?;
                s = Some(o.s);
                diagnostics.push(o.diagnostics);
            }
            rows.push(SweepRow {
                r0_minus: r0m,
                r0_plus: r0 - r0m,
                s00,
                s0,
                defect_left: pre.defect_sup(&sys, l, 0.01),
                defect_right: pre.defect_sup(&sys, r, 0.01),
                s,
            });
            sweep.push(SweepSummary { r0, zero_r0_minus: v.zero_r0_minus });
        }
        let mut header = vec!["R0_minus", "R0_plus", "s00", "s0", "defect_left", "defect_right"];
        if p.full {
            header.push("s");
            write_json(&cfg.output_dir, "diagnostics.json", &diagnostics)?;
        }
        write_csv(&cfg.output_dir, "sweep.csv", &rows, &header)?;
    }
    write_json(&cfg.output_dir, "verdict.json", &Glue0Report { verdict, sweep })
}

// ---------------------------------------------------------------------------------------
// gluet

#[derive(Serialize)]
struct BifurcationRow {
    t: f64,
    found: bool,
    r0_measured: Option<f64>,
    r0_predicted: Option<f64>,
}

#[derive(Serialize)]
struct SlopeSummary {
    slope: Option<f64>,
    expected_slope: f64,
    relative_error: Option<f64>,
    found: usize,
    samples: usize,
    t_envelope: f64,
}

#[derive(Serialize)]
struct GluetReport {
    verdict: TGluingVerdict,
    summary: SlopeSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    panels: Option<Vec<Panel>>,
}

/// Samples `-+|t|` geometrically spaced from the largest to the smallest magnitude.
fn t_samples(range: Option<&str>, side: Option<TSide>, verdict_side: TSide, count: usize) -> Result<Vec<f64>> {
    let (lo, hi, sign) = match range {
        Some(spec) => {
            let v = parse_range(spec, 2)?;
            let (a, b) = (v[0].min(v[1]), v[0].max(v[1]));
            if a <= 0.0 && b >= 0.0 {
                return Err(ObgError::Config(format!(
                    "t range {spec:?} contains t = 0, where the flowline is broken; choose one side"
                )));
            }
            let sign = a.signum();
            if let Some(s) = side {
                if s.sign() != sign {
                    return Err(ObgError::Config(format!("t range {spec:?} is not on the side {s:?}")));
                }
            }
            (a.abs().min(b.abs()), a.abs().max(b.abs()), sign)
        }
        None => (0.002, 0.05, side.unwrap_or(verdict_side).sign()),
    };
    if count < 2 {
        return Err(ObgError::Config("at least 2 t samples are needed for a slope".into()));
    }
    let ratio = (lo / hi).ln() / (count - 1) as f64;
    Ok((0..count).map(|k| sign * hi * (ratio * k as f64).exp()).collect())
}

pub fn gluet(cfg: &RunConfig) -> Result<Value> {
    let p = &cfg.gluet;
    let parts: Vec<&str> = p.pair.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(ObgError::Config(format!("pair must be minus|plus,<left|right>,<front|back>; got {:?}", p.pair)));
    }
    let kind = match parts[0] {
        "minus" => PairKind::MinusZero,
        "plus" => PairKind::ZeroPlus,
        other => return Err(ObgError::Config(format!("pair kind must be minus or plus, got {other:?}"))),
    };
    let z = LeftRight::parse(parts[1])?;
    let other = FrontBack::parse(parts[2])?;
    let side = p.side.as_deref().map(TSide::parse).transpose()?;
    if p.a < 2 {
        return Err(ObgError::Config(format!("A = {} must be at least 2", p.a)));
    }
    let (sys, opts) = setup(cfg)?;
    let cat = TorusCatalog::build(&sys, &opts)?;
    let perts = torus_perturbations(&sys, &cat, p.radius, (p.amplitude, p.amplitude))?;
    let zi = z as usize;
    let transverse = match kind {
        PairKind::MinusZero => cat.minus(other),
        PairKind::ZeroPlus => cat.plus(other),
    };
    let u0 = &cat.u_zero[zi];
    let mut verdict = t_verdict(&sys, kind, transverse, u0, &perts[zi], p.a)?;
    let ts = t_samples(p.t.as_deref(), side, verdict.side, p.samples)?;
    if ts.iter().any(|t| t.abs() > T_ENVELOPE) {
        return Err(ObgError::Config(format!("|t| must not exceed {T_ENVELOPE}")));
    }
    let cont: ContinuationResult = continuation_oracle(&sys, &perts, &verdict, transverse, u0, &ts, &opts)?;
    let rows: Vec<BifurcationRow> = cont
        .samples
        .iter()
        .map(|s| BifurcationRow { t: s.t, found: s.found, r0_measured: s.r0_measured, r0_predicted: s.r0_predicted })
        .collect();
    write_csv(&cfg.output_dir, "bifurcation.csv", &rows, &["t", "found", "R0_measured", "R0_predicted"])?;
    let summary = SlopeSummary {
        slope: cont.slope,
        expected_slope: cont.expected_slope,
        relative_error: cont.slope_error(),
        found: cont.found_count(),
        samples: cont.samples.len(),
        t_envelope: T_ENVELOPE,
    };
    verdict.continuation = Some(cont);
    let panels = match p.panels_t {
        Some(t) if t < 0.0 && t.abs() <= T_ENVELOPE => {
            Some(four_panels(&sys, &cat, p.radius, p.amplitude, p.a, Some(t), &opts)?)
        }
        Some(t) => return Err(ObgError::Config(format!("panel probe t = {t} must lie in [-{T_ENVELOPE}, 0)"))),
        None => None,
    };
    write_json(&cfg.output_dir, "t_verdict.json", &GluetReport { verdict, summary, panels })
}

// ---------------------------------------------------------------------------------------
// homology

#[derive(Serialize)]
struct ComplexReport {
    generators: Vec<Vec<obg_core::complex::Generator>>,
    differentials: Vec<Vec<Vec<u8>>>,
    homology: Vec<usize>,
    provenance: std::collections::BTreeMap<String, Vec<obg_core::complex::ProvenanceItem>>,
    side: TSide,
    direct: DirectReport,
}

#[derive(Serialize)]
struct DirectReport {
    t: f64,
    differentials: Vec<Vec<Vec<u8>>>,
    homology: Vec<usize>,
}

fn matrices(c: &ChainComplex) -> Vec<Vec<Vec<u8>>> {
    c.differentials.iter().map(|d| d.entries.clone()).collect()
}

/// Builds the complex, writes `complex.json` (when `d^2 = 0`) and checks the torus ranks.
pub fn homology(cfg: &RunConfig, tamper: Option<usize>) -> Result<Value> {
    let p = &cfg.homology;
    let side = TSide::parse(&p.side)?;
    if p.amplitudes.iter().any(|a| *a == 0.0) {
        return Err(ObgError::Config("amplitudes must be nonzero".into()));
    }
    let (sys, opts) = setup(cfg)?;
    let cat = TorusCatalog::build(&sys, &opts)?;
    let perts = torus_perturbations(&sys, &cat, p.radius, (p.amplitudes[0], p.amplitudes[1]))?;
    let c = build_complex(&sys, &cat, &perts, side, p.a, &opts, tamper)?;
    let homology = homology_ranks(&c)?;
    let t = side.sign() * p.direct_t.abs();
    let direct = morse_smale_complex(&PerturbedSystem::new(&sys, perts.to_vec(), t), &opts)?;
    let direct_ranks = homology_ranks(&direct)?;
    let report = ComplexReport {
        generators: c.generators.clone(),
        differentials: matrices(&c),
        homology: homology.clone(),
        provenance: c.provenance.clone(),
        side,
        direct: DirectReport { t, differentials: matrices(&direct), homology: direct_ranks },
    };
    let v = write_json(&cfg.output_dir, "complex.json", &report)?;
    expect_ranks(&c, &TORUS_RANKS)?;
    expect_ranks(&direct, &TORUS_RANKS)?;
    Ok(v)
}
