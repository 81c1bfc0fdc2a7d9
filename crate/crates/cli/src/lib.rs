//! Configuration, validation and dispatch for the `ustlab` binary.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Arg, ArgMatches, Command};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use ustlab::experiments::{
    derived_exponents_in, estimate_spectral_dimension, estimate_walk_dimension, fit_growth, hittability_study,
    quasi_loop_study, volume_tail_study, ExperimentRecord, HittabilityConfig, QuasiLoopConfig, SpectralConfig,
    StudyCell, VolumeTailConfig, WalkDimConfig,
};
use ustlab::lerw::growth_samples;
use ustlab::metric::{
    delta_c_bounds, delta_truncated, path_ensemble_hausdorff, DeltaOptions, FiniteMeasuredSpatialTree,
    PathEnsembleConfig,
};
use ustlab::rng::{namespace, RngStream, ALGORITHM_ID};
use ustlab::wilson::{spanned_subtree, wilson_box, BoxRoot, TreeRoot, NO_PARENT};
use ustlab::{LatticePoint, Region, SpanningTree};

pub const OUTPUT_DIR_ENV: &str = "USTLAB_OUTPUT_DIR";
const DEFAULT_OUTPUT_DIR: &str = "ustlab-out";

pub const SUBCOMMANDS: [&str; 11] = [
    "generate-ust",
    "spanned-subtree",
    "lerw-growth",
    "exponents",
    "walk-dim",
    "spectral-dim",
    "volume-tails",
    "quasi-loops",
    "hittability",
    "gh-distance",
    "path-ensemble",
];

/// One validation finding, naming the offending key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub key: String,
    pub message: String,
}

impl Diagnostic {
    fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            key: key.into(),
            message: message.into(),
        }
    }

    fn from_core(e: ustlab::Error) -> Self {
        match e {
            ustlab::Error::InvalidParameter { name, reason } => Diagnostic::new(name, reason),
            other => Diagnostic::new("params", other.to_string()),
        }
    }
}

/// A full run description, as read from a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub subcommand: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm_id: Option<String>,
    #[serde(default)]
    pub params: toml::Table,
}

impl RunConfig {
    pub fn new(subcommand: &str) -> Self {
        RunConfig {
            subcommand: subcommand.into(),
            seed: 0,
            output_dir: None,
            algorithm_id: None,
            params: toml::Table::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, Diagnostic> {
        toml::from_str(text).map_err(|e| serde_diagnostic("config", e.message()))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }
}

/// Pulls the offending key out of serde's unknown-field and missing-field
/// messages.
fn serde_diagnostic(fallback: &str, msg: &str) -> Diagnostic {
    let key = ["unknown field `", "missing field `", "unknown variant `"]
        .iter()
        .find_map(|p| msg.find(p).map(|i| &msg[i + p.len()..]))
        .and_then(|rest| rest.split('`').next())
        .unwrap_or(fallback);
    Diagnostic::new(key, msg.trim())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateUst {
    pub half_extent: i64,
    /// `wired` or `free` (rooted at the origin).
    pub boundary: String,
}

impl Default for GenerateUst {
    fn default() -> Self {
        GenerateUst {
            half_extent: 8,
            boundary: "wired".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpannedSubtree {
    pub points: Vec<[i64; 3]>,
    pub truncation_radius: f64,
    pub safety_factor: f64,
}

impl Default for SpannedSubtree {
    fn default() -> Self {
        SpannedSubtree {
            points: vec![[0, 0, 0], [6, 0, 0], [0, 6, 0]],
            truncation_radius: 24.0,
            safety_factor: 8.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LerwGrowth {
    pub radii: Vec<u32>,
    pub samples: u32,
    pub safety_factor: f64,
    pub bootstrap: u32,
}

impl Default for LerwGrowth {
    fn default() -> Self {
        LerwGrowth {
            radii: vec![8, 16, 32, 64, 128],
            samples: 2000,
            safety_factor: 8.0,
            bootstrap: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exponents {
    pub beta: f64,
    pub dimension: u32,
}

impl Default for Exponents {
    fn default() -> Self {
        Exponents {
            beta: 1.624,
            dimension: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GhDistance {
    /// JSON instance files.
    pub a: PathBuf,
    pub b: PathBuf,
    /// Radii for the truncated distance; empty skips it, `[-1]` uses every
    /// breakpoint of the two trees.
    pub radii: Vec<f64>,
    pub exhaustive_pairs: usize,
    pub search_limit: usize,
    pub restarts: u32,
}

impl Default for GhDistance {
    fn default() -> Self {
        let o = DeltaOptions::default();
        GhDistance {
            a: PathBuf::new(),
            b: PathBuf::new(),
            radii: Vec::new(),
            exhaustive_pairs: o.exhaustive_pairs,
            search_limit: o.search_limit,
            restarts: o.restarts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathEnsemble {
    /// Tree CSV files (`vertex_index,x,y,z,parent_index`, one root).
    pub a: PathBuf,
    pub b: PathBuf,
    pub scale: f64,
    pub sample_pairs: usize,
}

impl Default for PathEnsemble {
    fn default() -> Self {
        PathEnsemble {
            a: PathBuf::new(),
            b: PathBuf::new(),
            scale: 16.0,
            sample_pairs: 1000,
        }
    }
}

/// Typed parameters of one subcommand.
#[derive(Clone, Debug, PartialEq)]
pub enum Pipeline {
    GenerateUst(GenerateUst),
    SpannedSubtree(SpannedSubtree),
    LerwGrowth(LerwGrowth),
    Exponents(Exponents),
    WalkDim(WalkDimConfig),
    SpectralDim(SpectralConfig),
    VolumeTails(VolumeTailConfig),
    QuasiLoops(QuasiLoopConfig),
    Hittability(HittabilityConfig),
    GhDistance(GhDistance),
    PathEnsemble(PathEnsemble),
}

fn typed<T: DeserializeOwned>(params: &toml::Table) -> Result<T, Diagnostic> {
    toml::Value::Table(params.clone())
        .try_into()
        .map_err(|e: toml::de::Error| serde_diagnostic("params", e.message()))
}

fn to_table<T: Serialize>(v: &T) -> toml::Table {
    match toml::Value::try_from(v).expect("parameters serialize") {
        toml::Value::Table(t) => t,
        _ => unreachable!("parameter structs are tables"),
    }
}

impl Pipeline {
    pub fn parse(subcommand: &str, params: &toml::Table) -> Result<Self, Diagnostic> {
        Ok(match subcommand {
            "generate-ust" => Pipeline::GenerateUst(typed(params)?),
            "spanned-subtree" => Pipeline::SpannedSubtree(typed(params)?),
            "lerw-growth" => Pipeline::LerwGrowth(typed(params)?),
            "exponents" => Pipeline::Exponents(typed(params)?),
            "walk-dim" => Pipeline::WalkDim(typed(params)?),
            "spectral-dim" => Pipeline::SpectralDim(typed(params)?),
            "volume-tails" => Pipeline::VolumeTails(typed(params)?),
            "quasi-loops" => Pipeline::QuasiLoops(typed(params)?),
            "hittability" => Pipeline::Hittability(typed(params)?),
            "gh-distance" => Pipeline::GhDistance(typed(params)?),
            "path-ensemble" => Pipeline::PathEnsemble(typed(params)?),
            other => {
                return Err(Diagnostic::new(
                    "subcommand",
                    format!("unknown subcommand `{other}`; expected one of {}", SUBCOMMANDS.join(", ")),
                ))
            }
        })
    }

    /// Parameters with defaults filled in.
    pub fn defaults(subcommand: &str) -> Option<toml::Table> {
        Some(match subcommand {
            "generate-ust" => to_table(&GenerateUst::default()),
            "spanned-subtree" => to_table(&SpannedSubtree::default()),
            "lerw-growth" => to_table(&LerwGrowth::default()),
            "exponents" => to_table(&Exponents::default()),
            "walk-dim" => to_table(&WalkDimConfig::default()),
            "spectral-dim" => to_table(&SpectralConfig::default()),
            "volume-tails" => to_table(&VolumeTailConfig::default()),
            "quasi-loops" => to_table(&QuasiLoopConfig::default()),
            "hittability" => to_table(&HittabilityConfig::default()),
            "gh-distance" => to_table(&GhDistance::default()),
            "path-ensemble" => to_table(&PathEnsemble::default()),
            _ => return None,
        })
    }

    fn resolved(&self) -> toml::Table {
        match self {
            Pipeline::GenerateUst(p) => to_table(p),
            Pipeline::SpannedSubtree(p) => to_table(p),
            Pipeline::LerwGrowth(p) => to_table(p),
            Pipeline::Exponents(p) => to_table(p),
            Pipeline::WalkDim(p) => to_table(p),
            Pipeline::SpectralDim(p) => to_table(p),
            Pipeline::VolumeTails(p) => to_table(p),
            Pipeline::QuasiLoops(p) => to_table(p),
            Pipeline::Hittability(p) => to_table(p),
            Pipeline::GhDistance(p) => to_table(p),
            Pipeline::PathEnsemble(p) => to_table(p),
        }
    }

    /// Every precondition `run` would reject, without running anything.
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        let core = |v: Vec<ustlab::Error>| v.into_iter().map(Diagnostic::from_core).collect::<Vec<_>>();
        let mut d = Vec::new();
        match self {
            Pipeline::GenerateUst(p) => {
                if !(1..=256).contains(&p.half_extent) {
                    d.push(Diagnostic::new("half_extent", "must lie in [1, 256]"));
                }
                if p.boundary != "wired" && p.boundary != "free" {
                    d.push(Diagnostic::new("boundary", "must be `wired` or `free`"));
                }
            }
            Pipeline::SpannedSubtree(p) => {
                if p.points.is_empty() {
                    d.push(Diagnostic::new("points", "need at least one spanning point"));
                }
                let pts: Vec<LatticePoint> = p.points.iter().map(|q| LatticePoint::new(q[0], q[1], q[2])).collect();
                if pts.iter().enumerate().any(|(i, q)| pts[..i].contains(q)) {
                    d.push(Diagnostic::new("points", "spanning points must be distinct"));
                }
                let max_norm = pts.iter().map(|q| q.norm()).fold(0.0, f64::max);
                if !(p.truncation_radius > max_norm && p.truncation_radius.is_finite()) {
                    d.push(Diagnostic::new("truncation_radius", format!("must exceed the largest spanning-point norm {max_norm}")));
                }
                if !(p.safety_factor >= 4.0 && p.safety_factor * p.truncation_radius <= 1e5) {
                    d.push(Diagnostic::new("safety_factor", "must be >= 4 with safety_factor * truncation_radius <= 1e5"));
                }
            }
            Pipeline::LerwGrowth(p) => {
                if p.radii.is_empty() {
                    d.push(Diagnostic::new("radii", "empty"));
                } else if p.radii[0] < 1 || p.radii.windows(2).any(|w| w[0] >= w[1]) {
                    d.push(Diagnostic::new("radii", "must be positive and strictly increasing"));
                }
                if p.samples == 0 {
                    d.push(Diagnostic::new("samples", "must be >= 1"));
                }
                if !(p.safety_factor >= 4.0 && p.safety_factor.is_finite()) {
                    d.push(Diagnostic::new("safety_factor", "must be >= 4"));
                }
            }
            Pipeline::Exponents(p) => {
                if let Err(e) = derived_exponents_in(p.dimension, p.beta) {
                    d.push(Diagnostic::from_core(e));
                }
            }
            Pipeline::WalkDim(p) => d = core(p.diagnostics()),
            Pipeline::SpectralDim(p) => d = core(p.diagnostics()),
            Pipeline::VolumeTails(p) => d = core(p.diagnostics()),
            Pipeline::QuasiLoops(p) => d = core(p.diagnostics()),
            Pipeline::Hittability(p) => d = core(p.diagnostics()),
            Pipeline::GhDistance(p) => {
                for (key, path) in [("a", &p.a), ("b", &p.b)] {
                    if let Err(e) = read_instance(path) {
                        d.push(Diagnostic::new(key, e));
                    }
                }
                let r = &p.radii;
                let auto = r.len() == 1 && r[0] == -1.0;
                if !r.is_empty() && !auto && (r[0] < 0.0 || r.windows(2).any(|w| !(w[0] < w[1])) || r.iter().any(|x| !x.is_finite())) {
                    d.push(Diagnostic::new("radii", "must be finite, nonnegative and strictly increasing, or [-1]"));
                }
            }
            Pipeline::PathEnsemble(p) => {
                for (key, path) in [("a", &p.a), ("b", &p.b)] {
                    if let Err(e) = read_rooted_tree(path) {
                        d.push(Diagnostic::new(key, e));
                    }
                }
                if !(p.scale > 0.0 && p.scale.is_finite()) {
                    d.push(Diagnostic::new("scale", "must be positive"));
                }
                if p.sample_pairs == 0 {
                    d.push(Diagnostic::new("sample_pairs", "must be >= 1"));
                }
            }
        }
        d
    }
}

fn read_instance(path: &Path) -> Result<FiniteMeasuredSpatialTree, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Reads a tree CSV whose single parentless vertex is the root.
fn read_rooted_tree(path: &Path) -> Result<SpanningTree, String> {
    let open = || File::open(path).map(BufReader::new).map_err(|e| format!("cannot read {}: {e}", path.display()));
    let wired = SpanningTree::read_csv(open()?, TreeRoot::Wired).map_err(|e| format!("{}: {e}", path.display()))?;
    let roots: Vec<usize> = (0..wired.len()).filter(|&v| wired.parent()[v] == NO_PARENT).collect();
    if roots.len() != 1 {
        return Err(format!("{}: expected exactly one root, found {}", path.display(), roots.len()));
    }
    SpanningTree::new(wired.vertices().to_vec(), wired.parent().to_vec(), TreeRoot::Vertex(roots[0] as u32))
        .map_err(|e| format!("{}: {e}", path.display()))
}

/// All violations of `cfg`; empty exactly when `run` accepts it.
pub fn validate(cfg: &RunConfig) -> Vec<Diagnostic> {
    let mut d = Vec::new();
    if let Some(a) = &cfg.algorithm_id {
        if a != ALGORITHM_ID {
            d.push(Diagnostic::new("algorithm_id", format!("this build provides `{ALGORITHM_ID}`, not `{a}`")));
        }
    }
    match Pipeline::parse(&cfg.subcommand, &cfg.params) {
        Ok(p) => d.extend(p.diagnostics()),
        Err(e) => d.push(e),
    }
    d
}

/// Why a run failed.
#[derive(Debug)]
pub enum RunError {
    Config(Vec<Diagnostic>),
    Pipeline(String),
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Pipeline(_) | RunError::Io(_) => 1,
        }
    }

    /// Machine-readable report.
    pub fn report(&self) -> Value {
        match self {
            RunError::Config(d) => json!({"status": "error", "kind": "config", "diagnostics": d}),
            RunError::Pipeline(m) => json!({"status": "error", "kind": "pipeline", "message": m}),
            RunError::Io(m) => json!({"status": "error", "kind": "io", "message": m}),
        }
    }
}

impl From<ustlab::Error> for RunError {
    fn from(e: ustlab::Error) -> Self {
        RunError::Pipeline(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

impl From<csv::Error> for RunError {
    fn from(e: csv::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

/// Provenance stamped on every artifact.
#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub algorithm: &'static str,
    pub subcommand: String,
}

impl Provenance {
    fn header(&self) -> String {
        format!("config_hash={}, seed={}, algorithm={}", self.config_hash, self.seed, self.algorithm)
    }
}

/// Hash of the resolved configuration (defaults filled, output location
/// excluded).
pub fn config_hash(cfg: &RunConfig, pipeline: &Pipeline) -> String {
    let canonical = json!({
        "subcommand": cfg.subcommand,
        "seed": cfg.seed,
        "algorithm_id": ALGORITHM_ID,
        "params": pipeline.resolved(),
    });
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

struct Out {
    dir: PathBuf,
    prov: Provenance,
    written: Vec<PathBuf>,
}

impl Out {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>, RunError> {
        let path = self.dir.join(name);
        self.written.push(path.clone());
        Ok(BufWriter::new(File::create(path)?))
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), RunError> {
        let mut w = self.create(name)?;
        writeln!(w, "# {}", self.prov.header())?;
        let mut c = csv::Writer::from_writer(w);
        for r in rows {
            c.serialize(r)?;
        }
        c.flush()?;
        Ok(())
    }

    fn dat(&mut self, name: &str, columns: &str, rows: &[(f64, f64)]) -> Result<(), RunError> {
        let mut w = self.create(name)?;
        writeln!(w, "# {}", self.prov.header())?;
        writeln!(w, "# {columns}")?;
        for (x, y) in rows {
            writeln!(w, "{x} {y}")?;
        }
        w.flush()?;
        Ok(())
    }

    fn json(&mut self, name: &str, body: &Value) -> Result<(), RunError> {
        let mut w = self.create(name)?;
        let doc = json!({"provenance": self.prov, "result": body});
        serde_json::to_writer_pretty(&mut w, &doc).map_err(|e| RunError::Io(e.to_string()))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

/// Outcome of a successful run.
#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub provenance: Provenance,
    pub artifacts: Vec<PathBuf>,
    pub result: Value,
}

fn records(out: &mut Out, rs: &[ExperimentRecord]) -> Result<(), RunError> {
    out.csv("records.csv", rs)
}

fn cells(out: &mut Out, name: &str, cs: &[StudyCell]) -> Result<(), RunError> {
    out.csv(name, cs)
}

fn mean_by<F: Fn(&ExperimentRecord) -> Option<f64>>(rs: &[ExperimentRecord], observable: &str, key: F) -> Vec<(f64, f64)> {
    let mut acc: Vec<(f64, f64, u64)> = Vec::new();
    for r in rs.iter().filter(|r| r.observable == observable) {
        let Some(k) = key(r) else { continue };
        match acc.iter_mut().find(|a| a.0 == k) {
            Some(a) => {
                a.1 += r.value;
                a.2 += 1;
            }
            None => acc.push((k, r.value, 1)),
        }
    }
    acc.sort_by(|a, b| a.0.total_cmp(&b.0));
    acc.into_iter().map(|(k, s, n)| (k, s / n as f64)).collect()
}

#[derive(Serialize)]
struct VolumeCsvRow {
    radius: u64,
    lambda: f64,
    trees: u64,
    lower_p: f64,
    lower_ci_low: f64,
    lower_ci_high: f64,
    upper_p: f64,
    upper_ci_low: f64,
    upper_ci_high: f64,
    well_behaved_p: f64,
}

#[derive(Serialize)]
struct EdgeRow {
    from: usize,
    to: usize,
}

/// Validates and executes one configuration, writing its artifacts.
pub fn run(cfg: &RunConfig) -> Result<RunSummary, RunError> {
    let diags = validate(cfg);
    if !diags.is_empty() {
        return Err(RunError::Config(diags));
    }
    let pipeline = Pipeline::parse(&cfg.subcommand, &cfg.params).map_err(|d| RunError::Config(vec![d]))?;
    let prov = Provenance {
        config_hash: config_hash(cfg, &pipeline),
        seed: cfg.seed,
        algorithm: ALGORITHM_ID,
        subcommand: cfg.subcommand.clone(),
    };
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir)?;
    let mut out = Out {
        dir,
        prov: prov.clone(),
        written: Vec::new(),
    };
    let seed = cfg.seed;
    let result = match &pipeline {
        Pipeline::GenerateUst(p) => {
            let root = if p.boundary == "wired" { BoxRoot::Wired } else { BoxRoot::At(LatticePoint::ORIGIN) };
            let region = Region::cube(LatticePoint::ORIGIN, p.half_extent as f64 + 1.0);
            let tree = wilson_box(&region, root, &mut RngStream::new(seed, namespace::UST))?;
            let mut w = out.create("tree.csv")?;
            tree.write_csv(&mut w, Some(&prov.header()))?;
            w.flush()?;
            let edges: Vec<EdgeRow> = tree.edges().map(|(from, to)| EdgeRow { from, to }).collect();
            out.csv("edges.csv", &edges)?;
            let mut obj = out.create("tree.obj")?;
            writeln!(obj, "# {}", prov.header())?;
            for p in tree.vertices() {
                writeln!(obj, "v {} {} {}", p.x, p.y, p.z)?;
            }
            for e in &edges {
                writeln!(obj, "l {} {}", e.from + 1, e.to + 1)?;
            }
            obj.flush()?;
            json!({"vertices": tree.len(), "edges": edges.len(), "boundary": p.boundary})
        }
        Pipeline::SpannedSubtree(p) => {
            let pts: Vec<LatticePoint> = p.points.iter().map(|q| LatticePoint::new(q[0], q[1], q[2])).collect();
            let t = spanned_subtree(&pts, p.truncation_radius, p.safety_factor, &mut RngStream::new(seed, namespace::SUBTREE))?;
            let sub = out.dir.join("subtree");
            t.write_dir(&sub)?;
            out.written.push(sub);
            let durations: Vec<f64> = t.curves.iter().map(|c| c.curve().duration()).collect();
            let body = json!({"k": t.k(), "durations": durations, "merging": t.merging});
            out.json("subtree.json", &body)?;
            body
        }
        Pipeline::LerwGrowth(p) => {
            let rows = growth_samples(&p.radii, p.samples, p.safety_factor, seed)?;
            out.csv("growth.csv", &rows)?;
            let means: Vec<(f64, f64)> = p
                .radii
                .iter()
                .map(|&r| {
                    let l: Vec<f64> = rows.iter().filter(|g| g.radius == r).map(|g| g.length as f64).collect();
                    (r as f64, l.iter().sum::<f64>() / l.len() as f64)
                })
                .collect();
            out.dat("growth.dat", "radius mean_length", &means)?;
            let fittable = p.radii.len() >= 4 && p.radii[p.radii.len() - 1] >= 8 * p.radii[0] && p.samples >= 2;
            let fit = if fittable { Some(fit_growth(&p.radii, &rows, seed, p.bootstrap)?) } else { None };
            let body = json!({
                "rows": rows.len(),
                "beta": fit,
                "note": if fittable { "" } else { "fit needs at least 4 radii spanning a factor 8 and 2 samples" },
            });
            out.json("fit.json", &body)?;
            body
        }
        Pipeline::Exponents(p) => {
            let e = derived_exponents_in(p.dimension, p.beta)?;
            let body = serde_json::to_value(e).expect("plain numbers");
            out.json("exponents.json", &body)?;
            body
        }
        Pipeline::WalkDim(p) => {
            let s = estimate_walk_dimension(p, seed)?;
            records(&mut out, &s.records)?;
            out.csv("sentinel.csv", &s.sentinel)?;
            out.dat("walk_intrinsic.dat", "radius mean_exit_time", &mean_by(&s.records, "exit_time_intrinsic", |r| r.radius))?;
            out.dat("walk_extrinsic.dat", "radius mean_exit_time", &mean_by(&s.records, "exit_time_extrinsic", |r| r.radius))?;
            let body = json!({"intrinsic": s.intrinsic, "extrinsic": s.extrinsic, "max_reach": s.max_reach});
            out.json("fit.json", &body)?;
            body
        }
        Pipeline::SpectralDim(p) => {
            let s = estimate_spectral_dimension(p, seed)?;
            records(&mut out, &s.records)?;
            out.dat("return.dat", "time return_probability", &mean_by(&s.records, "return_probability", |r| r.n.map(|n| n as f64)))?;
            let body = json!({"d_s": s.d_s, "d_s_ci": s.d_s_ci, "fit": s.fit, "max_reach": s.max_reach});
            out.json("fit.json", &body)?;
            body
        }
        Pipeline::VolumeTails(p) => {
            let s = volume_tail_study(p, seed)?;
            records(&mut out, &s.records)?;
            let rows: Vec<VolumeCsvRow> = s
                .rows
                .iter()
                .map(|r| VolumeCsvRow {
                    radius: r.radius,
                    lambda: r.lambda,
                    trees: r.trees,
                    lower_p: r.lower.p,
                    lower_ci_low: r.lower.ci_low,
                    lower_ci_high: r.lower.ci_high,
                    upper_p: r.upper.p,
                    upper_ci_low: r.upper.ci_low,
                    upper_ci_high: r.upper.ci_high,
                    well_behaved_p: r.well_behaved.p,
                })
                .collect();
            out.csv("volume_tails.csv", &rows)?;
            let body = json!({"checks": s.checks, "log_concave": s.shape, "max_reach": s.max_reach});
            out.json("checks.json", &body)?;
            body
        }
        Pipeline::QuasiLoops(p) => {
            let s = quasi_loop_study(p, seed)?;
            records(&mut out, &s.records)?;
            cells(&mut out, "cells.csv", &s.cells)?;
            let pts: Vec<(f64, f64)> = s.cells.iter().filter(|c| c.skipped.is_none()).map(|c| (c.parameter, c.p)).collect();
            out.dat("quasi_loops.dat", "epsilon probability", &pts)?;
            let body = json!({"exponent": s.exponent, "positive": s.positive});
            out.json("fit.json", &body)?;
            body
        }
        Pipeline::Hittability(p) => {
            let s = hittability_study(p, seed)?;
            records(&mut out, &s.records)?;
            cells(&mut out, "cells.csv", &s.cells)?;
            let pts: Vec<(f64, f64)> = s.cells.iter().map(|c| (c.parameter, c.p)).collect();
            out.dat("hittability.dat", "r non_hit_probability", &pts)?;
            let body = json!({"eta": s.eta, "positive": s.positive});
            out.json("fit.json", &body)?;
            body
        }
        Pipeline::GhDistance(p) => {
            let a = read_instance(&p.a).map_err(RunError::Pipeline)?;
            let b = read_instance(&p.b).map_err(RunError::Pipeline)?;
            let opts = DeltaOptions {
                exhaustive_pairs: p.exhaustive_pairs,
                search_limit: p.search_limit,
                restarts: p.restarts,
                seed,
            };
            let bounds = delta_c_bounds(&a, &b, &opts);
            let truncated = match p.radii.as_slice() {
                [] => None,
                [x] if *x == -1.0 => {
                    let mut r = ustlab::metric::breakpoints(&a, &b);
                    r.push(r[r.len() - 1] + 1.0);
                    Some(delta_truncated(&a, &b, &r, &opts)?)
                }
                r => Some(delta_truncated(&a, &b, r, &opts)?),
            };
            let body = json!({"delta_c": bounds, "delta": truncated});
            out.json("delta.json", &body)?;
            body
        }
        Pipeline::PathEnsemble(p) => {
            let a = read_rooted_tree(&p.a).map_err(RunError::Pipeline)?;
            let b = read_rooted_tree(&p.b).map_err(RunError::Pipeline)?;
            let d = path_ensemble_hausdorff(
                &a,
                &b,
                &PathEnsembleConfig {
                    scale: p.scale,
                    sample_pairs: p.sample_pairs,
                    seed,
                },
            )?;
            let body = serde_json::to_value(&d).expect("plain numbers");
            out.json("path_ensemble.json", &body)?;
            body
        }
    };
    Ok(RunSummary {
        provenance: prov,
        artifacts: out.written,
        result,
    })
}

/// Parses a flag value as TOML, reading `a,b,c` as a list and anything else
/// unparsable as a string.
pub fn parse_value(text: &str) -> toml::Value {
    let parse = |t: &str| toml::from_str::<toml::Table>(&format!("v = {t}")).ok().and_then(|mut m| m.remove("v"));
    parse(text)
        .or_else(|| text.contains(',').then(|| parse(&format!("[{text}]"))).flatten())
        .unwrap_or_else(|| toml::Value::String(text.into()))
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn pipeline_command(name: &'static str) -> Command {
    let mut cmd = Command::new(name)
        .about(format!("Run the {name} pipeline"))
        .arg(Arg::new("config").long("config").value_name("FILE").help("TOML run configuration"))
        .arg(Arg::new("seed").long("seed").value_name("N").value_parser(clap::value_parser!(u64)))
        .arg(
            Arg::new("output-dir")
                .long("output-dir")
                .value_name("DIR")
                .help(format!("Artifact directory (default: ${OUTPUT_DIR_ENV} or {DEFAULT_OUTPUT_DIR})")),
        );
    for (key, default) in Pipeline::defaults(name).expect("known subcommand") {
        let help = format!("default: {default}");
        cmd = cmd.arg(Arg::new(key.clone()).long(flag_name(&key)).value_name("VALUE").help(help));
    }
    cmd
}

pub fn command() -> Command {
    let file = || Arg::new("config").long("config").value_name("FILE").required(true);
    let mut cmd = Command::new("ustlab")
        .about("Uniform spanning tree and loop-erased random walk experiments on Z^3")
        .subcommand_required(true)
        .subcommand(Command::new("run").about("Run the pipeline named in a config file").arg(file()))
        .subcommand(Command::new("validate").about("List every problem with a config file").arg(file()));
    for name in SUBCOMMANDS {
        cmd = cmd.subcommand(pipeline_command(name));
    }
    cmd
}

fn load(path: &str) -> Result<RunConfig, RunError> {
    let text = fs::read_to_string(path).map_err(|e| RunError::Config(vec![Diagnostic::new("config", format!("{path}: {e}"))]))?;
    RunConfig::from_toml(&text).map_err(|d| RunError::Config(vec![d]))
}

/// Builds the configuration for a pipeline subcommand: file first, then
/// flag overrides.
fn config_from_matches(name: &str, m: &ArgMatches) -> Result<RunConfig, RunError> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(path) => {
            let cfg = load(path)?;
            if cfg.subcommand != name {
                return Err(RunError::Config(vec![Diagnostic::new(
                    "subcommand",
                    format!("config is for `{}`, invoked as `{name}`", cfg.subcommand),
                )]));
            }
            cfg
        }
        None => RunConfig::new(name),
    };
    if let Some(&s) = m.get_one::<u64>("seed") {
        cfg.seed = s;
    }
    if let Some(d) = m.get_one::<String>("output-dir") {
        cfg.output_dir = Some(PathBuf::from(d));
    }
    for key in Pipeline::defaults(name).expect("known subcommand").keys() {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.params.insert(key.clone(), parse_value(v));
        }
    }
    Ok(cfg)
}

fn print_json(v: &Value) {
    // a closed pipe is not an error worth reporting
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(v).expect("serializable"));
}

/// Entry point; returns the process exit code.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let outcome = match name {
        "validate" => match load(sub.get_one::<String>("config").expect("required")) {
            Ok(cfg) => {
                let d = validate(&cfg);
                print_json(&json!({"diagnostics": d}));
                return if d.is_empty() { 0 } else { 2 };
            }
            Err(e) => Err(e),
        },
        "run" => load(sub.get_one::<String>("config").expect("required")).and_then(|c| run(&c)),
        _ => config_from_matches(name, sub).and_then(|c| run(&c)),
    };
    match outcome {
        Ok(summary) => {
            print_json(&json!({"status": "ok", "provenance": summary.provenance, "artifacts": summary.artifacts, "result": summary.result}));
            0
        }
        Err(e) => {
            eprintln!("{}", e.report());
            e.exit_code()
        }
    }
}
