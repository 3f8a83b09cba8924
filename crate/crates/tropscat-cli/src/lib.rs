//! Batch commands behind the `tropscat` binary. Each `cmd_*` function takes
//! parsed input and returns a serializable report; file handling and exit
//! codes live here too so the binary stays a thin clap wrapper.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use tropscat::algebra::{CoeffRing, OrderContext, TermJson, TruncatedPoly};
use tropscat::geometry::{discrete_legendre, GeometryError, ManifoldJson};
use tropscat::lattice::{fmt_q, parse_q};
use tropscat::logauto::DerivationJson;
use tropscat::normalize::{normalize_series, NormalizeError, NormalizeInput, TlogContext};
use tropscat::samples::{self, Sample, Section};
use tropscat::scatter::{ks_complete_codim0, naive_complete, CompletionOptions, DiagramJson, RayJson, ScatterError, ScatteringDiagram};
use tropscat::structure::{checkpoint_path, GluingInput, RunOptions, StructureError, StructureJson, Surface};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("{0}")]
    Math(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Parse { .. } => 1,
            CliError::Math(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

impl From<ScatterError> for CliError {
    fn from(e: ScatterError) -> Self {
        match &e {
            ScatterError::Denominator(_) | ScatterError::InconsistentInput(_) | ScatterError::NotInClass(_) => CliError::Math(e.to_string()),
            ScatterError::Malformed(_) | ScatterError::UnsortableDiagram(_) | ScatterError::OrderMismatch(_) => CliError::Usage(e.to_string()),
            ScatterError::Algebra(_) | ScatterError::LogAuto(_) => CliError::Internal(e.to_string()),
        }
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        match &e {
            GeometryError::InvalidComplex(_) | GeometryError::Unpolarized(_) | GeometryError::Unsupported(_) => CliError::Usage(e.to_string()),
            _ => CliError::Math(e.to_string()),
        }
    }
}

impl From<NormalizeError> for CliError {
    fn from(e: NormalizeError) -> Self {
        match &e {
            NormalizeError::Algebra(_) | NormalizeError::LogAuto(_) => CliError::Internal(e.to_string()),
            _ => CliError::Math(e.to_string()),
        }
    }
}

impl From<StructureError> for CliError {
    fn from(e: StructureError) -> Self {
        let code = structure_code(&e);
        match code {
            1 => CliError::Usage(e.to_string()),
            2 => CliError::Math(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

fn structure_code(e: &StructureError) -> i32 {
    match e {
        StructureError::AtOrder { source, .. } => structure_code(source),
        StructureError::Geometry(g) => CliError::from(g.clone()).exit_code(),
        StructureError::Normalize(n) => CliError::from(n.clone()).exit_code(),
        StructureError::Scatter { source, .. } => CliError::from(source.clone()).exit_code(),
        StructureError::Malformed(_) | StructureError::Io(_) | StructureError::Json(_) | StructureError::Unsupported(_) => 1,
        StructureError::MultiplicativeConditionFailed { .. }
        | StructureError::BadSection { .. }
        | StructureError::CycleConditionFailed { .. }
        | StructureError::Inconsistent { .. }
        | StructureError::Incompatible { .. }
        | StructureError::NotIntegral(_) => 2,
        StructureError::Algebra(_) | StructureError::LogAuto(_) => 3,
    }
}

// ---------------------------------------------------------------------------
// I/O

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    parse_json(&text, &path.display().to_string())
}

pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| CliError::Parse { path: origin.to_string(), line: e.line(), column: e.column(), message: e.to_string() })
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Inputs

/// Section on an edge seen from its first endpoint: `sum c z^m`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionJson {
    pub edge: [usize; 2],
    pub terms: Vec<SectionTermJson>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionTermJson {
    pub m: Vec<i64>,
    pub c: String,
}

/// Polarized complex plus gluing sections, the input of `run-structure`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceJson {
    pub complex: ManifoldJson,
    pub sections: Vec<SectionJson>,
}

impl SurfaceJson {
    pub fn from_sample(s: &Sample) -> Self {
        let sections = s
            .sections
            .iter()
            .map(|(edge, terms)| SectionJson {
                edge: *edge,
                terms: terms.iter().map(|(m, c)| SectionTermJson { m: m.clone(), c: fmt_q(c) }).collect(),
            })
            .collect();
        SurfaceJson { complex: ManifoldJson::from_parts(&s.manifold, Some(&s.polarization)), sections }
    }

    pub fn to_surface(&self, ring: CoeffRing) -> Result<(Surface, GluingInput)> {
        let (m, phi) = self.complex.to_parts()?;
        let phi = phi.ok_or_else(|| CliError::Usage("complex has no polarization".into()))?;
        let surface = Surface::new(m, phi)?;
        let mut sections: BTreeMap<[usize; 2], Section> = BTreeMap::new();
        for s in &self.sections {
            let mut terms = vec![];
            for t in &s.terms {
                let c = parse_q(&t.c).ok_or_else(|| CliError::Usage(format!("bad coefficient {:?} on edge {:?}", t.c, s.edge)))?;
                terms.push((t.m.clone(), c));
            }
            if sections.insert(s.edge, terms).is_some() {
                return Err(CliError::Usage(format!("edge {:?} has two sections", s.edge)));
            }
        }
        Ok((surface, GluingInput::new(sections, ring)))
    }
}

// ---------------------------------------------------------------------------
// Commands

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterReport {
    pub consistent: bool,
    pub added_rays: Vec<RayJson>,
    pub cut_changes: Vec<CutChangeJson>,
    pub residual: DerivationJson,
    pub diagram: DiagramJson,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutChangeJson {
    pub order: i64,
    pub cut: usize,
    pub added: Vec<TermJson>,
}

/// Completes a diagram order by order up to its truncation order: outgoing
/// rays only in codimension zero, the naive algorithm with cuts otherwise.
/// Returns the diagram too, for rendering.
pub fn cmd_scatter(input: &DiagramJson, order: Option<i64>) -> Result<(ScatterReport, ScatteringDiagram)> {
    let d = ScatteringDiagram::from_json(input)?;
    let k = order.unwrap_or(d.ctx().order());
    if k < 0 {
        return Err(CliError::Usage("order must be non-negative".into()));
    }
    let base = d.at_order(k)?;
    // terms added to each cut so far, kept at the full order
    let mut changes: Vec<TruncatedPoly> = base.cuts.iter().map(|_| TruncatedPoly::zero(base.ctx())).collect();
    let mut rays = base.rays.clone();
    let mut added_rays = vec![];
    let mut cut_changes = vec![];
    let mut residual = None;
    let mut cur = base.clone();
    for i in 0..=k {
        let mut step = base.at_order(i)?;
        step.rays = rays.clone();
        for (cut, extra) in step.cuts.iter_mut().zip(&changes) {
            cut.function = &cut.function + &extra.recontext(&step.joint.ctx().clone()).map_err(internal)?;
        }
        let c = if step.joint.codim == 0 { ks_complete_codim0(&step)? } else { naive_complete(&step, &CompletionOptions::default())? };
        added_rays.extend(c.added_rays.iter().map(|r| RayJson {
            dir: r.direction,
            m: r.exponent.mbar.clone(),
            h: r.exponent.h,
            c: fmt_q(&r.coeff),
            kind: Some(r.kind),
        }));
        for (j, p) in &c.cut_changes {
            changes[*j] = &changes[*j] + &p.recontext(base.ctx()).map_err(internal)?;
            cut_changes.push(CutChangeJson { order: i, cut: *j, added: p.to_json() });
        }
        rays = c.diagram.rays.clone();
        cur = c.diagram;
        residual = Some(c.residual);
    }
    let residual = residual.expect("at least order zero");
    let report = ScatterReport {
        consistent: residual.is_zero(),
        added_rays,
        cut_changes,
        residual: residual.to_json().map_err(|e| CliError::Internal(e.to_string()))?,
        diagram: cur.to_json(),
    };
    Ok((report, cur))
}

pub fn cmd_legendre(input: &ManifoldJson) -> Result<ManifoldJson> {
    let (m, phi) = input.to_parts()?;
    let phi = phi.ok_or_else(|| CliError::Usage("complex has no polarization".into()))?;
    let (dm, dphi) = discrete_legendre(&m, &phi)?;
    Ok(ManifoldJson::from_parts(&dm, Some(&dphi)))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderSummary {
    pub order: i64,
    pub walls: usize,
    pub slab_pieces: usize,
    pub consistent: bool,
    pub integral: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub ring: CoeffRing,
    pub orders: Vec<OrderSummary>,
    /// Checkpoint files written or reused, one per order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checkpoints: Vec<PathBuf>,
    pub last: StructureJson,
}

pub fn cmd_run_structure(input: &SurfaceJson, k: i64, ring: CoeffRing, jobs: usize, checkpoint_dir: Option<&Path>) -> Result<RunReport> {
    let (surface, gluing) = input.to_surface(ring)?;
    let opts = RunOptions { jobs: jobs.max(1), checkpoint_dir: checkpoint_dir.map(Path::to_path_buf) };
    let out = surface.run(&gluing, k, &opts)?;
    let mut orders = vec![];
    for s in &out {
        let report = surface.check_consistency(s)?;
        orders.push(OrderSummary {
            order: s.order,
            walls: s.walls.len(),
            slab_pieces: s.slabs.iter().map(|sl| sl.pieces.len()).sum(),
            consistent: report.passes(),
            integral: s.is_integral(),
        });
    }
    let checkpoints = checkpoint_dir.map(|d| (0..=k).map(|i| checkpoint_path(d, i)).collect()).unwrap_or_default();
    let last = StructureJson::from_structure(&surface, out.last().expect("run returns order zero"), true)?;
    Ok(RunReport { ring, orders, checkpoints, last })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizeReport {
    pub order: i64,
    pub nu: Vec<i64>,
    /// `a_1, ..., a_k` added as `a_i t^i`.
    pub coefficients: Vec<String>,
    pub function: Vec<TermJson>,
}

pub fn cmd_normalize(input: &NormalizeInput, k: i64, ring: CoeffRing) -> Result<NormalizeReport> {
    if input.slopes.is_empty() || input.slopes.iter().any(|s| s.len() != input.rank) {
        return Err(CliError::Usage(format!("need at least one slope of length {}", input.rank)));
    }
    let ctx = OrderContext::full(input.rank, input.slopes.clone(), k).with_ring(ring);
    let f = TruncatedPoly::from_json(&ctx, &input.function).map_err(|e| CliError::Usage(e.to_string()))?;
    let tc = match &input.nu {
        Some(nu) if nu.len() == input.rank => TlogContext::new(&ctx, nu.clone()),
        Some(nu) => return Err(CliError::Usage(format!("nu has length {}, expected {}", nu.len(), input.rank))),
        None => TlogContext::auto(&ctx, &f)?,
    };
    let (g, added) = normalize_series(&f, k, &tc)?;
    if ring == CoeffRing::Integer && !g.is_integral() {
        return Err(CliError::Math(format!("normalized function has non-integral coefficients: {g}")));
    }
    Ok(NormalizeReport { order: k, nu: tc.nu.clone(), coefficients: added.iter().map(fmt_q).collect(), function: g.to_json() })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifiedFile {
    pub path: PathBuf,
    pub order: i64,
    pub consistent: bool,
    pub failures: Vec<String>,
    pub integral: bool,
    /// Compatibility with the previous file, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compatible: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incompatibility: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub files: Vec<VerifiedFile>,
}

/// Expands directories into their checkpoint files, sorted by order.
pub fn checkpoint_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = vec![];
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<(i64, PathBuf)> = vec![];
            let entries = std::fs::read_dir(p).map_err(|e| CliError::Usage(format!("cannot list {}: {e}", p.display())))?;
            for entry in entries.flatten() {
                let name = entry.file_name().to_string_lossy().to_string();
                if let Some(k) = name.strip_prefix("structure_order_").and_then(|r| r.strip_suffix(".json")).and_then(|k| k.parse().ok()) {
                    found.push((k, entry.path()));
                }
            }
            found.sort();
            out.extend(found.into_iter().map(|(_, p)| p));
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("no checkpoint files given".into()));
    }
    Ok(out)
}

pub fn cmd_verify(paths: &[PathBuf]) -> Result<VerifyReport> {
    let files = checkpoint_files(paths)?;
    let mut surface: Option<Surface> = None;
    let mut prev = None;
    let mut report = VerifyReport { passed: true, files: vec![] };
    for path in files {
        let j: StructureJson = read_json(&path)?;
        let (surf, s) = j.to_structure(surface.as_ref())?;
        let c = surf.check_consistency(&s)?;
        let (compatible, incompatibility) = match &prev {
            Some(p) => match surf.compatible(p, &s)? {
                Ok(()) => (Some(true), None),
                Err(reason) => (Some(false), Some(reason)),
            },
            None => (None, None),
        };
        let failures: Vec<String> = c.failures().iter().map(|f| format!("{}: {}", f.site, f.defect.join("; "))).collect();
        let integral = s.ring == CoeffRing::Rational || s.is_integral();
        let ok = c.passes() && integral && compatible != Some(false);
        report.passed &= ok;
        report.files.push(VerifiedFile { path, order: s.order, consistent: c.passes(), failures, integral, compatible, incompatibility });
        surface = Some(surf);
        prev = Some(s);
    }
    Ok(report)
}

/// Names accepted by [`cmd_sample`].
pub const SAMPLES: [&str; 8] = ["two-lines", "denominator", "focus-focus", "focus-focus-pair", "cubic-cone", "standard-grid", "interval", "local-p2"];

/// Bundled inputs, as the JSON the other commands read.
pub fn cmd_sample(name: &str, k: i64) -> Result<String> {
    match name {
        "two-lines" => to_json(&samples::two_lines(k).to_json()),
        "denominator" => to_json(&samples::denominator_counterexample(k)?.to_json()),
        "focus-focus" => to_json(&SurfaceJson::from_sample(&samples::focus_focus())),
        "focus-focus-pair" => to_json(&SurfaceJson::from_sample(&samples::focus_focus_pair())),
        "cubic-cone" => to_json(&SurfaceJson::from_sample(&samples::cubic_cone())),
        "standard-grid" => to_json(&SurfaceJson::from_sample(&samples::standard_grid(3, 3))),
        "interval" => {
            let (m, phi) = samples::interval(2);
            to_json(&ManifoldJson::from_parts(&m, Some(&phi)))
        }
        "local-p2" => to_json(&local_p2_input()),
        _ => Err(CliError::Usage(format!("unknown sample {name:?}; expected one of {}", SAMPLES.join(", ")))),
    }
}

/// `1 + x + y + w` with `x y w = t`, the slab of the local projective plane.
pub fn local_p2_input() -> NormalizeInput {
    let term = |m: [i64; 3], h: i64| TermJson { mbar: m.to_vec(), h, coeff: "1".into() };
    NormalizeInput {
        rank: 3,
        slopes: vec![vec![0, 0, 0]],
        nu: None,
        function: vec![term([0, 0, 0], 0), term([1, 0, 0], 0), term([0, 1, 0], 0), term([-1, -1, 0], 1)],
    }
}
