//! Configuration, input loaders, artifact writers and the command-line front end.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 computation or
//! output error.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Read as _, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{analyze_map, Analysis, Timings};
use crate::compare::{nu_report, CompareError, NuReport};
use crate::conley::nontriviality_report;
use crate::field::{is_prime, Fp};
use crate::graph_dynamics::{index_pair, MorseGraph};
use crate::grid::{CubicalGrid, GridError, PhaseSpace};
use crate::homology::{build_pair_complex, chain_map, VertexRule};
use crate::oracles::{
    Activation, DenseLayer, LeslieEnclosure, LeslieOracle, LipschitzDataOracle, MapOracle, MlpOracle, OracleError,
    PiecewiseExample1D,
};
use crate::outer_approx::{build_boxmap, ApproxError, BoxMap};

pub const MLP_FORMAT: &str = "mlp-text/1";
pub const DATA_FORMAT: &str = "trajectory-text/1";

/// Input-file problems.
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("data file contains no samples")]
    EmptyDataset,
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
    #[error(transparent)]
    Compare(#[from] CompareError),
    #[error("{0}")]
    Computation(String),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Load(_) | CliError::Grid(_) => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Map to analyze.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OracleSpec {
    Leslie {
        theta: [f64; 2],
        #[serde(default)]
        enclosure: LeslieEnclosure,
    },
    Piecewise1d {
        theta: f64,
    },
    Mlp {
        path: PathBuf,
    },
    Data {
        path: PathBuf,
        lipschitz: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub domain: Domain,
    pub depths: Vec<u32>,
    #[serde(default)]
    pub rho: f64,
    #[serde(default = "default_prime")]
    pub prime: u32,
    pub oracle: OracleSpec,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_prime() -> u32 {
    5
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl AnalysisConfig {
    /// Parses TOML; relative oracle paths are resolved against `base`.
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<Self, CliError> {
        let mut cfg: AnalysisConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(base) = base {
            match &mut cfg.oracle {
                OracleSpec::Mlp { path } | OracleSpec::Data { path, .. } if path.is_relative() => {
                    *path = base.join(&*path);
                }
                _ => {}
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent())
    }

    pub fn grid(&self) -> Result<CubicalGrid, CliError> {
        let space = PhaseSpace::new(self.domain.lower.clone(), self.domain.upper.clone())?;
        Ok(CubicalGrid::new(space, self.depths.clone())?)
    }

    pub fn field(&self) -> Result<Fp, CliError> {
        Fp::new(self.prime).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Checks everything that does not need the oracle's input files.
    pub fn validate(&self) -> Result<CubicalGrid, CliError> {
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(CliError::Config(format!(
                "rho must be finite and >= 0, got {}",
                self.rho
            )));
        }
        if !is_prime(self.prime) || self.prime >= 1 << 16 {
            return Err(CliError::Config(format!(
                "prime must be a prime below 65536, got {}",
                self.prime
            )));
        }
        self.grid()
    }
}

/// A built oracle with what the manifest records about it.
pub struct LoadedOracle {
    pub oracle: Box<dyn MapOracle>,
    /// SHA-256 of the input file, for file-backed oracles.
    pub input_digest: Option<String>,
}

pub fn build_oracle(spec: &OracleSpec) -> Result<LoadedOracle, CliError> {
    Ok(match spec {
        OracleSpec::Leslie { theta, enclosure } => LoadedOracle {
            oracle: Box::new(
                LeslieOracle::new(theta[0], theta[1])
                    .map_err(LoadError::from)?
                    .with_enclosure(*enclosure),
            ),
            input_digest: None,
        },
        OracleSpec::Piecewise1d { theta } => LoadedOracle {
            oracle: Box::new(PiecewiseExample1D::new(*theta).map_err(LoadError::from)?),
            input_digest: None,
        },
        OracleSpec::Mlp { path } => {
            let text = read_text(path)?;
            LoadedOracle {
                oracle: Box::new(parse_mlp_weights(&text)?),
                input_digest: Some(sha256_hex(text.as_bytes())),
            }
        }
        OracleSpec::Data { path, lipschitz } => {
            let text = read_text(path)?;
            LoadedOracle {
                oracle: Box::new(parse_trajectory_data(&text, *lipschitz)?),
                input_digest: Some(sha256_hex(text.as_bytes())),
            }
        }
    })
}

fn read_text(path: &Path) -> Result<String, LoadError> {
    fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn load_mlp_weights(path: &Path) -> Result<MlpOracle, LoadError> {
    parse_mlp_weights(&read_text(path)?)
}

fn parse_numbers(line: usize, fields: &[&str]) -> Result<Vec<f64>, LoadError> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| LoadError::Parse {
                    line,
                    message: format!("not a finite number: {f:?}"),
                })
        })
        .collect()
}

/// Parses the `mlp-text/1` weights format:
///
/// ```text
/// format mlp-text/1
/// activation relu
/// layer <outputs> <inputs>
/// w <inputs numbers>        (one line per output row)
/// b <outputs numbers>
/// end
/// ```
///
/// Layers are listed from input to output; `#` starts a comment.
pub fn parse_mlp_weights(text: &str) -> Result<MlpOracle, LoadError> {
    struct Pending {
        start: usize,
        rows: usize,
        cols: usize,
        weights: Vec<f64>,
        bias: Option<Vec<f64>>,
    }
    let mut format_seen = false;
    let mut activation = None;
    let mut layers = Vec::new();
    let mut pending: Option<Pending> = None;
    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        last_line = line;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let err = |message: String| LoadError::Parse { line, message };
        if !format_seen {
            if fields != ["format", MLP_FORMAT] {
                return Err(err(format!("expected \"format {MLP_FORMAT}\"")));
            }
            format_seen = true;
            continue;
        }
        match fields[0] {
            "activation" => match fields.get(1..) {
                Some(["relu"]) => activation = Some(Activation::Relu),
                _ => return Err(err(format!("unsupported activation {:?}", &fields[1..]))),
            },
            "layer" => {
                if pending.is_some() {
                    return Err(err("previous layer lacks \"end\"".into()));
                }
                let dims: Vec<usize> = fields[1..].iter().filter_map(|f| f.parse().ok()).collect();
                if fields.len() != 3 || dims.len() != 2 || dims.contains(&0) {
                    return Err(err("expected \"layer <outputs> <inputs>\" with positive sizes".into()));
                }
                pending = Some(Pending {
                    start: line,
                    rows: dims[0],
                    cols: dims[1],
                    weights: Vec::new(),
                    bias: None,
                });
            }
            "w" => {
                let p = pending.as_mut().ok_or_else(|| err("\"w\" outside a layer".into()))?;
                let row = parse_numbers(line, &fields[1..])?;
                if row.len() != p.cols {
                    return Err(LoadError::DimensionMismatch(format!(
                        "line {line}: weight row has {} entries, layer has {} inputs",
                        row.len(),
                        p.cols
                    )));
                }
                p.weights.extend(row);
            }
            "b" => {
                let p = pending.as_mut().ok_or_else(|| err("\"b\" outside a layer".into()))?;
                p.bias = Some(parse_numbers(line, &fields[1..])?);
            }
            "end" => {
                let p = pending.take().ok_or_else(|| err("\"end\" outside a layer".into()))?;
                if p.weights.len() != p.rows * p.cols {
                    return Err(LoadError::DimensionMismatch(format!(
                        "layer at line {}: {} weight rows, expected {}",
                        p.start,
                        p.weights.len() / p.cols,
                        p.rows
                    )));
                }
                let bias = p
                    .bias
                    .ok_or_else(|| err(format!("layer at line {} has no bias", p.start)))?;
                if bias.len() != p.rows {
                    return Err(LoadError::DimensionMismatch(format!(
                        "layer at line {}: bias has {} entries, expected {}",
                        p.start,
                        bias.len(),
                        p.rows
                    )));
                }
                layers.push(DenseLayer::new(p.rows, p.cols, p.weights, bias)?);
            }
            other => return Err(err(format!("unknown keyword {other:?}"))),
        }
    }
    if pending.is_some() {
        return Err(LoadError::Parse {
            line: last_line,
            message: "unterminated layer".into(),
        });
    }
    if !format_seen {
        return Err(LoadError::Parse {
            line: last_line.max(1),
            message: format!("missing \"format {MLP_FORMAT}\""),
        });
    }
    let activation = activation.ok_or_else(|| LoadError::Parse {
        line: last_line,
        message: "missing activation".into(),
    })?;
    MlpOracle::new(layers, activation).map_err(|e| match e {
        OracleError::DimensionMismatch { expected, got } => {
            LoadError::DimensionMismatch(format!("layer chaining: expected {expected}, got {got}"))
        }
        other => LoadError::Oracle(other),
    })
}

pub fn load_trajectory_data(path: &Path, lipschitz: f64) -> Result<LipschitzDataOracle, LoadError> {
    parse_trajectory_data(&read_text(path)?, lipschitz)
}

/// Parses sample pairs: an optional `format trajectory-text/1` line, then
/// one row `x_1 .. x_d y_1 .. y_d` per sample, separated by commas or
/// whitespace. `#` starts a comment.
pub fn parse_trajectory_data(text: &str, lipschitz: f64) -> Result<LipschitzDataOracle, LoadError> {
    let mut samples: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut width = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(tag) = content.strip_prefix("format") {
            if samples.is_empty() && tag.trim() == DATA_FORMAT {
                continue;
            }
            return Err(LoadError::Parse {
                line,
                message: format!("unexpected format line {content:?}"),
            });
        }
        let fields: Vec<&str> = content
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        let row = parse_numbers(line, &fields)?;
        if row.is_empty() || row.len() % 2 != 0 {
            return Err(LoadError::Parse {
                line,
                message: format!("expected 2d columns, found {}", row.len()),
            });
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(LoadError::Parse {
                    line,
                    message: format!("expected {w} columns, found {}", row.len()),
                })
            }
            _ => {}
        }
        let d = row.len() / 2;
        samples.push((row[..d].to_vec(), row[d..].to_vec()));
    }
    if samples.is_empty() {
        return Err(LoadError::EmptyDataset);
    }
    Ok(LipschitzDataOracle::new(samples, lipschitz)?)
}

/// `D(T, I)`: `I` initial points uniform in the domain, each followed for
/// `T` steps; returns the consecutive pairs `(f^{k-1}(x_i), f^k(x_i))`.
pub fn generate_trajectory_pairs(
    oracle: &dyn MapOracle,
    space: &PhaseSpace,
    steps: usize,
    trajectories: usize,
    seed: u64,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>, OracleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(steps * trajectories);
    for _ in 0..trajectories {
        let mut x: Vec<f64> = (0..space.dim())
            .map(|i| rng.gen_range(space.lower()[i]..=space.upper()[i]))
            .collect();
        for _ in 0..steps {
            let y = oracle.eval(&x)?;
            pairs.push((x, y.clone()));
            x = y;
        }
    }
    Ok(pairs)
}

pub fn format_trajectory_data(pairs: &[(Vec<f64>, Vec<f64>)]) -> String {
    let mut s = format!("format {DATA_FORMAT}\n");
    for (x, y) in pairs {
        let row: Vec<String> = x.iter().chain(y).map(|v| format!("{v:?}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Morse graph document written to `morse_graph.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorseGraphDoc {
    pub grid: CubicalGrid,
    pub prime: u32,
    pub labels: Vec<String>,
    pub hasse: Vec<(usize, usize)>,
    pub graph: MorseGraph,
}

pub fn read_morse_graph(path: &Path) -> Result<MorseGraphDoc, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub id: usize,
    /// Conley index label, when computed.
    pub conley_index: Option<String>,
    pub boxes: usize,
    pub downset_boxes: Option<usize>,
    pub conley_error: Option<String>,
    pub report: Option<String>,
}

/// Run manifest written to `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: AnalysisConfig,
    pub conley: bool,
    pub oracle: String,
    pub lipschitz_bound: f64,
    pub input_digest: Option<String>,
    pub box_counts: Vec<u32>,
    pub num_boxes: usize,
    pub num_edges: usize,
    pub exterior_boxes: usize,
    pub box_map_cached: bool,
    pub components: usize,
    pub nodes: Vec<NodeSummary>,
    pub order: Vec<(usize, usize)>,
    pub timings: Timings,
    pub total_seconds: f64,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct AnalyzeOptions {
    pub conley: bool,
    pub cache_dir: Option<PathBuf>,
    pub edge_list: bool,
    /// Nodes whose boundary and chain-map triplets are dumped.
    pub dump_nodes: Vec<usize>,
}

/// Result of [`run_analysis`], before anything is written.
pub struct AnalysisRun {
    pub analysis: Analysis,
    pub oracle: LoadedOracle,
    pub cached: bool,
}

pub fn run_analysis(cfg: &AnalysisConfig, conley: bool, cache_dir: Option<&Path>) -> Result<AnalysisRun, CliError> {
    let grid = cfg.validate()?;
    let fp = cfg.field()?;
    let oracle = build_oracle(&cfg.oracle)?;
    if oracle.oracle.dim() != grid.dim() {
        return Err(CliError::Config(format!(
            "oracle dimension {} does not match domain dimension {}",
            oracle.oracle.dim(),
            grid.dim()
        )));
    }
    let key = cache_key(cfg, &oracle);
    let cache_file = cache_dir.map(|d| d.join(format!("boxmap-{key}.bin")));
    let t = Instant::now();
    let cached_map = cache_file.as_deref().and_then(|p| read_boxmap(p, &grid, cfg.rho));
    let cached = cached_map.is_some();
    let map = match cached_map {
        Some(m) => m,
        None => {
            let m = build_boxmap(&grid, oracle.oracle.as_ref(), cfg.rho)?;
            if let Some(p) = &cache_file {
                write_boxmap(p, &m)?;
            }
            m
        }
    };
    let secs = t.elapsed().as_secs_f64();
    let analysis = analyze_map(map, conley.then_some(fp), secs);
    Ok(AnalysisRun {
        analysis,
        oracle,
        cached,
    })
}

fn cache_key(cfg: &AnalysisConfig, oracle: &LoadedOracle) -> String {
    let oracle_key = match &cfg.oracle {
        OracleSpec::Mlp { .. } | OracleSpec::Data { .. } => serde_json::json!({
            "kind": oracle.oracle.describe(),
            "digest": oracle.input_digest,
            "lipschitz": oracle.oracle.lipschitz_upper_bound(),
        }),
        other => serde_json::to_value(other).expect("serializable"),
    };
    let doc = serde_json::json!({
        "domain": cfg.domain,
        "depths": cfg.depths,
        "rho": cfg.rho,
        "oracle": oracle_key,
    });
    sha256_hex(doc.to_string().as_bytes())
}

const CACHE_MAGIC: &[u8; 8] = b"MCBOXMP1";

fn write_boxmap(path: &Path, map: &BoxMap) -> Result<(), CliError> {
    let out_err = |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(out_err)?;
    }
    let mut w = BufWriter::new(fs::File::create(path).map_err(out_err)?);
    let mut write = || -> std::io::Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&(map.num_boxes() as u64).to_le_bytes())?;
        w.write_all(&(map.num_edges() as u64).to_le_bytes())?;
        for &o in map.raw_offsets() {
            w.write_all(&(o as u64).to_le_bytes())?;
        }
        for &t in map.raw_targets() {
            w.write_all(&t.to_le_bytes())?;
        }
        for &e in map.raw_exterior() {
            w.write_all(&[u8::from(e)])?;
        }
        w.flush()
    };
    write().map_err(out_err)
}

/// Any malformed or mismatched cache file is ignored.
fn read_boxmap(path: &Path, grid: &CubicalGrid, rho: f64) -> Option<BoxMap> {
    let mut bytes = Vec::new();
    fs::File::open(path).ok()?.read_to_end(&mut bytes).ok()?;
    let (magic, rest) = bytes.split_at_checked(8)?;
    if magic != CACHE_MAGIC {
        return None;
    }
    let mut pos = 0;
    let mut u64_at = |rest: &[u8]| -> Option<u64> {
        let v = u64::from_le_bytes(rest.get(pos..pos + 8)?.try_into().ok()?);
        pos += 8;
        Some(v)
    };
    let n = u64_at(rest)? as usize;
    let e = u64_at(rest)? as usize;
    if n != grid.num_boxes() || rest.len() != 16 + 8 * (n + 1) + 4 * e + n {
        return None;
    }
    let offsets: Vec<usize> = rest[16..16 + 8 * (n + 1)]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
        .collect();
    let tstart = 16 + 8 * (n + 1);
    let targets: Vec<u32> = rest[tstart..tstart + 4 * e]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let exterior: Vec<bool> = rest[tstart + 4 * e..].iter().map(|&b| b != 0).collect();
    if offsets.first() != Some(&0) || offsets.last() != Some(&e) || offsets.windows(2).any(|w| w[0] > w[1]) {
        return None;
    }
    if targets.iter().any(|&t| t as usize >= n) {
        return None;
    }
    Some(BoxMap::from_parts(grid.clone(), rho, offsets, targets, exterior))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn regions_csv(a: &Analysis) -> String {
    let g = a.grid();
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# lower={:?} upper={:?} depths={:?}",
        g.space().lower(),
        g.space().upper(),
        g.depths()
    );
    let _ = writeln!(
        s,
        "# box indices are row-major with axis 0 most significant; counts={:?}",
        g.counts()
    );
    s.push_str("box,node\n");
    let mut rows: Vec<(u32, usize)> = a
        .morse
        .nodes
        .iter()
        .flat_map(|n| n.region.iter().map(move |&b| (b, n.id)))
        .collect();
    rows.sort_unstable();
    for (b, q) in rows {
        let _ = writeln!(s, "{b},{q}");
    }
    s
}

/// Writes all artifacts of an analysis into `cfg.out` and returns the manifest.
pub fn write_artifacts(
    cfg: &AnalysisConfig,
    run: &AnalysisRun,
    opts: &AnalyzeOptions,
    started: Instant,
) -> Result<Manifest, CliError> {
    let out = &cfg.out;
    fs::create_dir_all(out).map_err(|source| CliError::Output {
        path: out.clone(),
        source,
    })?;
    let a = &run.analysis;
    let mut outputs = Vec::new();
    let mut emit = |name: &str, contents: &[u8]| -> Result<(), CliError> {
        write_file(&out.join(name), contents)?;
        outputs.push(name.to_string());
        Ok(())
    };

    emit("morse_graph.dot", a.morse.to_dot().as_bytes())?;
    let doc = MorseGraphDoc {
        grid: a.grid().clone(),
        prime: cfg.prime,
        labels: (0..a.morse.len()).map(|q| a.morse.label(q)).collect(),
        hasse: a.morse.hasse_edges(),
        graph: a.morse.clone(),
    };
    emit(
        "morse_graph.json",
        serde_json::to_string_pretty(&doc).expect("serializable").as_bytes(),
    )?;
    emit("regions.csv", regions_csv(a).as_bytes())?;
    if opts.edge_list {
        let mut buf = Vec::new();
        a.map.write_edge_list(&mut buf).expect("writing to memory");
        emit("box_map.txt", &buf)?;
    }
    for &q in &opts.dump_nodes {
        let node = a
            .morse
            .nodes
            .get(q)
            .ok_or_else(|| CliError::Config(format!("--dump-node {q}: no such node")))?;
        let fp = cfg.field()?;
        let pair =
            index_pair(&a.map, &a.condensation, node.component).map_err(|e| CliError::Computation(e.to_string()))?;
        let complex =
            build_pair_complex(a.grid(), &pair.p1, &pair.p0, fp).map_err(|e| CliError::Computation(e.to_string()))?;
        let mut buf = Vec::new();
        complex.relative().write_triplets(&mut buf).expect("writing to memory");
        emit(&format!("node{q}_boundary.txt"), &buf)?;
        if let Ok(phi) = chain_map(&a.map, &complex, VertexRule::Smallest) {
            let mut buf = Vec::new();
            phi.write_triplets(complex.coder(), &mut buf)
                .expect("writing to memory");
            emit(&format!("node{q}_phi.txt"), &buf)?;
        }
    }

    let nodes = a
        .morse
        .nodes
        .iter()
        .map(|n| NodeSummary {
            id: n.id,
            conley_index: n.conley.as_ref().map(|c| c.label()),
            boxes: n.region.len(),
            downset_boxes: n.downset_size,
            conley_error: n.conley_error.clone(),
            report: n.conley.as_ref().map(nontriviality_report),
        })
        .collect();
    outputs.push("manifest.json".into());
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        conley: opts.conley,
        oracle: run.oracle.oracle.describe(),
        lipschitz_bound: run.oracle.oracle.lipschitz_upper_bound(),
        input_digest: run.oracle.input_digest.clone(),
        box_counts: a.grid().counts().to_vec(),
        num_boxes: a.grid().num_boxes(),
        num_edges: a.map.num_edges(),
        exterior_boxes: a.map.exterior_count(),
        box_map_cached: run.cached,
        components: a.condensation.num_components(),
        nodes,
        order: a.morse.order.clone(),
        timings: a.timings.clone(),
        total_seconds: started.elapsed().as_secs_f64(),
        outputs,
    };
    write_file(
        &out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)
            .expect("serializable")
            .as_bytes(),
    )?;
    Ok(manifest)
}

/// `analyze`: run the pipeline and write every artifact.
pub fn cmd_analyze(cfg: &AnalysisConfig, opts: &AnalyzeOptions) -> Result<Manifest, CliError> {
    let started = Instant::now();
    let run = run_analysis(cfg, opts.conley, opts.cache_dir.as_deref())?;
    write_artifacts(cfg, &run, opts, started)
}

/// `compare`: run both analyses (without Conley indices) and write `nu_report.json`.
pub fn cmd_compare(
    fine: &AnalysisConfig,
    coarse: &AnalysisConfig,
    out: &Path,
    cache_dir: Option<&Path>,
) -> Result<NuReport, CliError> {
    if fine.domain != coarse.domain {
        return Err(CliError::Config(
            "fine and coarse configurations use different domains".into(),
        ));
    }
    if std::mem::discriminant(&fine.oracle) != std::mem::discriminant(&coarse.oracle) {
        return Err(CliError::Config(
            "fine and coarse configurations use different oracle families".into(),
        ));
    }
    let f = run_analysis(fine, false, cache_dir)?;
    let c = run_analysis(coarse, false, cache_dir)?;
    let report = nu_report(&f.analysis, &c.analysis)?;
    fs::create_dir_all(out).map_err(|source| CliError::Output {
        path: out.to_path_buf(),
        source,
    })?;
    write_file(
        &out.join("nu_report.json"),
        serde_json::to_string_pretty(&report).expect("serializable").as_bytes(),
    )?;
    Ok(report)
}

#[derive(Debug, Parser)]
#[command(
    name = "morse-conley",
    version,
    about = "Morse graphs and Conley indices of maps from box enclosures"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the Morse graph and Conley indices for one configuration.
    Analyze(AnalyzeArgs),
    /// Project a fine analysis onto a coarse one and check the projection.
    Compare(CompareArgs),
    /// Sample trajectory pairs of the Leslie model.
    GenerateData(GenerateArgs),
}

/// Configuration file plus overrides.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Domain bounds as `lo:hi` per axis, comma separated (e.g. `0:90,0:70`).
    #[arg(long, allow_hyphen_values = true)]
    pub domain: Option<String>,
    /// Depth per axis, comma separated; a single value applies to every axis.
    #[arg(long)]
    pub depth: Option<String>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub prime: Option<u32>,
    /// `leslie:t1,t2`, `piecewise1d:theta`, `mlp:PATH` or `data:PATH:L`.
    #[arg(long)]
    pub oracle: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Skip the Conley index computation.
    #[arg(long)]
    pub no_conley: bool,
    /// Fail (exit 3) when some Conley index cannot be computed.
    #[arg(long)]
    pub strict: bool,
    /// Directory for cached box maps.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Also write the box map as an edge list.
    #[arg(long)]
    pub edge_list: bool,
    /// Dump boundary and chain-map triplets for this node (repeatable).
    #[arg(long = "dump-node")]
    pub dump_nodes: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub fine: PathBuf,
    #[arg(long)]
    pub coarse: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Leslie fertilities `t1,t2`.
    #[arg(long, default_value = "23.5,23.5")]
    pub theta: String,
    /// Steps per trajectory (`T`).
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    /// Number of initial points (`I`).
    #[arg(long, default_value_t = 16)]
    pub trajectories: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "0:90,0:70")]
    pub domain: String,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_list<T: std::str::FromStr>(what: &str, s: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|_| CliError::Config(format!("bad {what} {s:?}")))
        })
        .collect()
}

pub fn parse_domain(s: &str) -> Result<Domain, CliError> {
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for axis in s.split(',') {
        let (lo, hi) = axis
            .split_once(':')
            .ok_or_else(|| CliError::Config(format!("bad domain {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("bad domain {s:?}")))
        };
        lower.push(parse(lo)?);
        upper.push(parse(hi)?);
    }
    Ok(Domain { lower, upper })
}

pub fn parse_oracle(s: &str) -> Result<OracleSpec, CliError> {
    let bad = || CliError::Config(format!("bad oracle {s:?}"));
    let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
    match kind {
        "leslie" => {
            let t: Vec<f64> = parse_list("theta", rest)?;
            let theta: [f64; 2] = t.try_into().map_err(|_| bad())?;
            Ok(OracleSpec::Leslie {
                theta,
                enclosure: LeslieEnclosure::Exact,
            })
        }
        "piecewise1d" => Ok(OracleSpec::Piecewise1d {
            theta: rest.parse().map_err(|_| bad())?,
        }),
        "mlp" => Ok(OracleSpec::Mlp { path: rest.into() }),
        "data" => {
            let (path, l) = rest.rsplit_once(':').ok_or_else(bad)?;
            Ok(OracleSpec::Data {
                path: path.into(),
                lipschitz: l.parse().map_err(|_| bad())?,
            })
        }
        _ => Err(bad()),
    }
}

/// Loads the config file (if any) and applies command-line overrides.
pub fn resolve_config(args: &ConfigArgs) -> Result<AnalysisConfig, CliError> {
    let base = match &args.config {
        Some(p) => Some(AnalysisConfig::load(p)?),
        None => None,
    };
    let domain = match &args.domain {
        Some(d) => parse_domain(d)?,
        None => base
            .as_ref()
            .map(|b| b.domain.clone())
            .ok_or_else(|| CliError::Config("no domain given".into()))?,
    };
    let dim = domain.lower.len();
    let depths = match &args.depth {
        Some(d) => {
            let v: Vec<u32> = parse_list("depth", d)?;
            if v.len() == 1 {
                vec![v[0]; dim]
            } else {
                v
            }
        }
        None => base
            .as_ref()
            .map(|b| b.depths.clone())
            .ok_or_else(|| CliError::Config("no depth given".into()))?,
    };
    let oracle = match &args.oracle {
        Some(o) => parse_oracle(o)?,
        None => base
            .as_ref()
            .map(|b| b.oracle.clone())
            .ok_or_else(|| CliError::Config("no oracle given".into()))?,
    };
    Ok(AnalysisConfig {
        domain,
        depths,
        rho: args.rho.or(base.as_ref().map(|b| b.rho)).unwrap_or(0.0),
        prime: args
            .prime
            .or(base.as_ref().map(|b| b.prime))
            .unwrap_or_else(default_prime),
        oracle,
        out: args
            .out
            .clone()
            .or(base.as_ref().map(|b| b.out.clone()))
            .unwrap_or_else(default_out),
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Analyze(args) => {
            let cfg = resolve_config(&args.cfg)?;
            let opts = AnalyzeOptions {
                conley: !args.no_conley,
                cache_dir: args.cache_dir,
                edge_list: args.edge_list,
                dump_nodes: args.dump_nodes,
            };
            let manifest = cmd_analyze(&cfg, &opts)?;
            let mut failures = 0;
            for n in &manifest.nodes {
                let index = n.conley_index.as_deref().unwrap_or("-");
                println!("{} : {index}  ({} boxes)", n.id, n.boxes);
                if let Some(e) = &n.conley_error {
                    failures += 1;
                    eprintln!("warning: node {}: {e}", n.id);
                }
            }
            println!("{} nodes, artifacts in {}", manifest.nodes.len(), cfg.out.display());
            if failures > 0 && args.strict {
                return Err(CliError::Computation(format!(
                    "{failures} Conley index computation(s) failed"
                )));
            }
            Ok(())
        }
        Command::Compare(args) => {
            let fine = AnalysisConfig::load(&args.fine)?;
            let coarse = AnalysisConfig::load(&args.coarse)?;
            let r = cmd_compare(&fine, &coarse, &args.out, args.cache_dir.as_deref())?;
            println!(
                "nu: well_defined={} surjective={} order_preserving={} ({} fine -> {} coarse nodes)",
                r.nu.well_defined, r.nu.surjective, r.nu.order_preserving, r.fine_nodes, r.coarse_nodes
            );
            Ok(())
        }
        Command::GenerateData(args) => {
            let t: Vec<f64> = parse_list("theta", &args.theta)?;
            let [t1, t2]: [f64; 2] = t
                .try_into()
                .map_err(|_| CliError::Config("theta needs two values".into()))?;
            let oracle = LeslieOracle::new(t1, t2).map_err(LoadError::from)?;
            let d = parse_domain(&args.domain)?;
            let space = PhaseSpace::new(d.lower, d.upper)?;
            let pairs = generate_trajectory_pairs(&oracle, &space, args.steps, args.trajectories, args.seed)
                .map_err(|e| CliError::Computation(e.to_string()))?;
            write_file(&args.out, format_trajectory_data(&pairs).as_bytes())?;
            println!("{} pairs written to {}", pairs.len(), args.out.display());
            Ok(())
        }
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Computation(msg) = &e {
                if msg.contains("not acyclic") {
                    eprintln!("hint: refine the grid or change rho");
                }
            }
            e.exit_code()
        }
    }
}
