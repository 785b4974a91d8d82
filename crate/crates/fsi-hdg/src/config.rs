//! INI-style experiment configuration.
//!
//! Plain-text `key = value` lines grouped under `[section]` headers. Parsing
//! is strict: unknown sections or keys, malformed values, and inconsistent
//! combinations are all hard errors, so a config file documents exactly the
//! experiment that ran.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::fluid::Scheme;
use crate::mesh::{Mesh, MeshError};
use crate::solver::{NewtonCfg, PhysicalParams};

pub type Vec2 = [f64; 2];

#[derive(Debug)]
pub enum ConfigError {
    Io(std::io::Error),
    /// Line could not be read as `[section]` or `key = value`.
    Parse { line: usize, msg: String },
    /// Key parsed but the value (or a combination of values) is invalid.
    Validation { key: String, msg: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(e) => write!(f, "config io error: {e}"),
            ConfigError::Parse { line, msg } => write!(f, "config parse error at line {line}: {msg}"),
            ConfigError::Validation { key, msg } => write!(f, "config validation error for `{key}`: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

impl From<std::io::Error> for ConfigError {
    fn from(e: std::io::Error) -> Self {
        ConfigError::Io(e)
    }
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Validation { key: key.to_string(), msg: msg.into() }
}

/// Which mesh the run is built on. Exactly one source per config.
#[derive(Debug, Clone, PartialEq)]
pub enum MeshSpec {
    /// Structured unit square, `n` subdivisions per side, fluid left of `split_x`.
    Square { n: usize, split_x: f64 },
    /// Channel-with-flag benchmark geometry.
    Channel { refinement: usize, circle_segments: usize },
    /// Plain-text mesh file.
    File { path: PathBuf },
}

impl MeshSpec {
    pub fn build(&self) -> Result<Mesh, MeshError> {
        match self {
            MeshSpec::Square { n, split_x } => Mesh::build_structured_square(*n, *split_x),
            MeshSpec::Channel { refinement, circle_segments } => {
                crate::channel::build_channel_flag(*refinement, *circle_segments)
            }
            MeshSpec::File { path } => Mesh::load_mesh_file(path),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    /// Decaying free oscillation; checks discrete energy monotonicity.
    Energy,
    /// Manufactured-solution mesh sequence; prints error norms and rates.
    Convergence,
    /// Channel flow past a cylinder with an elastic bar; probes point A.
    Benchmark,
    /// Whatever the remaining sections describe, with no built-in verdict.
    Custom,
}

/// Fully validated run description.
#[derive(Debug, Clone)]
pub struct Config {
    pub mesh: MeshSpec,
    pub k: usize,
    /// Override for the quadrature exactness degree; `None` picks a default
    /// from `k`.
    pub quadrature_exactness: Option<usize>,
    pub t_end: f64,
    pub n_steps: usize,
    pub params: PhysicalParams,
    pub scheme: Scheme,
    pub frozen_geometry: bool,
    pub newton: NewtonCfg,
    pub experiment: ExperimentKind,
    /// Manufactured-solution parameter set (1-4) for convergence runs.
    pub case_id: usize,
    /// Drive the run with manufactured body forces and boundary data.
    pub manufactured: bool,
    /// Mean inflow speed for benchmark runs.
    pub u_bar: f64,
    pub out_dir: PathBuf,
    /// Write field snapshots every `cadence` steps.
    pub cadence: usize,
    /// Extra probe points (physical coordinates).
    pub probes: Vec<Vec2>,
}

/// Physical parameters for the four manufactured-solution test cases.
pub fn case_params(case_id: usize) -> Option<PhysicalParams> {
    let mut p = PhysicalParams::unit();
    match case_id {
        1 => {}
        2 => {
            p.rho_f = 1e3;
            p.rho_s = 1e3;
            p.mu_f = 1e-3;
        }
        3 => {
            p.rho_s = 1e3;
            p.mu_s = 1e2;
            p.lambda_s = 1e6;
        }
        4 => p.mu_f = 1e-6,
        _ => return None,
    }
    Some(p)
}

/// Named parameter presets for the channel-flag benchmark. Returns the
/// physical parameters and the mean inflow speed.
pub fn benchmark_preset(name: &str) -> Option<(PhysicalParams, f64)> {
    match name {
        "FSI2" => Some((
            PhysicalParams {
                rho_f: 1e3,
                mu_f: 1e-3,
                rho_s: 10e3,
                mu_s: 0.5e6,
                lambda_s: 2.0e6,
                kappa: 1.0,
            },
            1.0,
        )),
        "FSI3" => Some((
            PhysicalParams {
                rho_f: 1e3,
                mu_f: 1e-3,
                rho_s: 1e3,
                mu_s: 2e6,
                lambda_s: 8e6,
                kappa: 1.0,
            },
            2.0,
        )),
        _ => None,
    }
}

/// Raw `key = value` pairs grouped by section, before validation.
struct RawConfig {
    entries: Vec<(String, String, String, usize)>,
}

fn parse_raw(text: &str) -> Result<RawConfig, ConfigError> {
    let mut entries = Vec::new();
    let mut section = String::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(p) => &raw_line[..p],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(inner) = line.strip_prefix('[') {
            let name = inner.strip_suffix(']').ok_or(ConfigError::Parse {
                line: line_no,
                msg: format!("unterminated section header `{line}`"),
            })?;
            section = name.trim().to_string();
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Parse {
            line: line_no,
            msg: format!("expected `key = value`, got `{line}`"),
        })?;
        if section.is_empty() {
            return Err(ConfigError::Parse {
                line: line_no,
                msg: "key appears before any [section] header".to_string(),
            });
        }
        entries.push((
            section.clone(),
            key.trim().to_string(),
            value.trim().to_string(),
            line_no,
        ));
    }
    Ok(RawConfig { entries })
}

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    v.parse::<f64>().map_err(|_| invalid(key, format!("`{v}` is not a number")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize, ConfigError> {
    v.parse::<usize>().map_err(|_| invalid(key, format!("`{v}` is not a nonnegative integer")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(invalid(key, format!("`{v}` is not `true` or `false`"))),
    }
}

/// Probe list: `x,y` pairs separated by `;`.
fn parse_probes(key: &str, v: &str) -> Result<Vec<Vec2>, ConfigError> {
    let mut out = Vec::new();
    for part in v.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (x, y) = part
            .split_once(',')
            .ok_or_else(|| invalid(key, format!("probe `{part}` is not `x,y`")))?;
        out.push([parse_f64(key, x.trim())?, parse_f64(key, y.trim())?]);
    }
    Ok(out)
}

pub fn parse_config_str(text: &str) -> Result<Config, ConfigError> {
    let raw = parse_raw(text)?;

    // Mesh section accumulators; kind selects which ones apply.
    let mut mesh_kind: Option<String> = None;
    let mut mesh_n: Option<usize> = None;
    let mut mesh_path: Option<PathBuf> = None;
    let mut mesh_split_x: Option<f64> = None;
    let mut mesh_segments: Option<usize> = None;

    let mut k = 1usize;
    let mut quadrature_exactness = None;

    let mut t_end = 1.0f64;
    let mut n_time: Option<usize> = None;
    let mut tau: Option<f64> = None;

    let mut params = PhysicalParams::unit();
    let mut physics_set = [false; 6];

    let mut scheme = Scheme::C;
    let mut frozen_geometry = false;

    let mut newton = NewtonCfg::default();

    let mut experiment = ExperimentKind::Custom;
    let mut case_id = 1usize;
    let mut preset: Option<String> = None;
    let mut u_bar: Option<f64> = None;
    let mut manufactured: Option<bool> = None;

    let mut out_dir = PathBuf::from("out");
    let mut cadence = 1usize;
    let mut probes = Vec::new();

    for (section, key, value, line) in &raw.entries {
        let path = format!("{section}.{key}");
        let pk = path.as_str();
        match (section.as_str(), key.as_str()) {
            ("mesh", "kind") => mesh_kind = Some(value.clone()),
            ("mesh", "n") => mesh_n = Some(parse_usize(pk, value)?),
            ("mesh", "path") => mesh_path = Some(PathBuf::from(value)),
            ("mesh", "split_x") => mesh_split_x = Some(parse_f64(pk, value)?),
            ("mesh", "circle_segments") => mesh_segments = Some(parse_usize(pk, value)?),
            ("discretization", "k") => k = parse_usize(pk, value)?,
            ("discretization", "quadrature_exactness") => {
                quadrature_exactness = Some(parse_usize(pk, value)?)
            }
            ("time", "T") => t_end = parse_f64(pk, value)?,
            ("time", "N") => n_time = Some(parse_usize(pk, value)?),
            ("time", "tau") => tau = Some(parse_f64(pk, value)?),
            ("physics", "rho_f") => {
                params.rho_f = parse_f64(pk, value)?;
                physics_set[0] = true;
            }
            ("physics", "mu_f") => {
                params.mu_f = parse_f64(pk, value)?;
                physics_set[1] = true;
            }
            ("physics", "rho_s") => {
                params.rho_s = parse_f64(pk, value)?;
                physics_set[2] = true;
            }
            ("physics", "mu_s") => {
                params.mu_s = parse_f64(pk, value)?;
                physics_set[3] = true;
            }
            ("physics", "lambda_s") => {
                params.lambda_s = parse_f64(pk, value)?;
                physics_set[4] = true;
            }
            ("physics", "kappa") => {
                params.kappa = parse_f64(pk, value)?;
                physics_set[5] = true;
            }
            ("scheme", "scheme") => {
                scheme = match value.as_str() {
                    "C" => Scheme::C,
                    "D" => Scheme::D,
                    _ => return Err(invalid(pk, format!("`{value}` is not `C` or `D`"))),
                }
            }
            ("scheme", "frozen_geometry") => frozen_geometry = parse_bool(pk, value)?,
            ("newton", "eps") => newton.tol = parse_f64(pk, value)?,
            ("newton", "max_iters") => newton.max_iters = parse_usize(pk, value)?,
            ("newton", "damping") => newton.max_halvings = parse_usize(pk, value)?,
            ("experiment", "kind") => {
                experiment = match value.as_str() {
                    "energy" => ExperimentKind::Energy,
                    "convergence" => ExperimentKind::Convergence,
                    "benchmark" => ExperimentKind::Benchmark,
                    "custom" => ExperimentKind::Custom,
                    _ => {
                        return Err(invalid(
                            pk,
                            format!("`{value}` is not one of energy|convergence|benchmark|custom"),
                        ))
                    }
                }
            }
            ("experiment", "case") => case_id = parse_usize(pk, value)?,
            ("experiment", "preset") => preset = Some(value.clone()),
            ("experiment", "u_bar") => u_bar = Some(parse_f64(pk, value)?),
            ("experiment", "manufactured") => manufactured = Some(parse_bool(pk, value)?),
            ("output", "dir") => out_dir = PathBuf::from(value),
            ("output", "cadence") => cadence = parse_usize(pk, value)?,
            ("output", "probes") => probes = parse_probes(pk, value)?,
            _ => {
                return Err(ConfigError::Parse {
                    line: *line,
                    msg: format!("unknown key `{path}`"),
                })
            }
        }
    }

    // Preset expands physics and inflow speed; explicit keys win.
    if let Some(name) = &preset {
        let (pp, pu) = benchmark_preset(name)
            .ok_or_else(|| invalid("experiment.preset", format!("unknown preset `{name}`")))?;
        let fields = [pp.rho_f, pp.mu_f, pp.rho_s, pp.mu_s, pp.lambda_s, pp.kappa];
        let slots: [&mut f64; 6] = [
            &mut params.rho_f,
            &mut params.mu_f,
            &mut params.rho_s,
            &mut params.mu_s,
            &mut params.lambda_s,
            &mut params.kappa,
        ];
        for ((slot, set), v) in slots.into_iter().zip(physics_set).zip(fields) {
            if !set {
                *slot = v;
            }
        }
        if u_bar.is_none() {
            u_bar = Some(pu);
        }
    }

    if !(1..=3).contains(&k) {
        return Err(invalid("discretization.k", format!("k = {k} is outside 1..=3")));
    }
    if !(t_end > 0.0) {
        return Err(invalid("time.T", "final time must be positive"));
    }
    let n_steps = match (n_time, tau) {
        (Some(_), Some(_)) => {
            return Err(invalid("time", "give either `N` or `tau`, not both"))
        }
        (Some(n), None) => {
            if n == 0 {
                return Err(invalid("time.N", "step count must be positive"));
            }
            n
        }
        (None, Some(tau)) => {
            if !(tau > 0.0) {
                return Err(invalid("time.tau", "step size must be positive"));
            }
            ((t_end / tau) - 1e-9).ceil().max(1.0) as usize
        }
        (None, None) => 100,
    };

    for (name, v) in [
        ("physics.rho_f", params.rho_f),
        ("physics.mu_f", params.mu_f),
        ("physics.rho_s", params.rho_s),
        ("physics.mu_s", params.mu_s),
        ("physics.lambda_s", params.lambda_s),
        ("physics.kappa", params.kappa),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(invalid(name, format!("must be positive and finite, got {v}")));
        }
    }
    if !(newton.tol > 0.0) {
        return Err(invalid("newton.eps", "tolerance must be positive"));
    }
    if newton.max_iters == 0 {
        return Err(invalid("newton.max_iters", "need at least one iteration"));
    }
    if cadence == 0 {
        return Err(invalid("output.cadence", "cadence must be at least 1"));
    }
    if case_params(case_id).is_none() {
        return Err(invalid("experiment.case", format!("case {case_id} is outside 1..=4")));
    }

    // Mesh: kind defaults to square; only its own keys may be set.
    let kind = mesh_kind.as_deref().unwrap_or("square");
    let mesh = match kind {
        "square" => {
            if mesh_path.is_some() || mesh_segments.is_some() {
                return Err(invalid("mesh", "square mesh takes only `n` and `split_x`"));
            }
            let split_x = mesh_split_x.unwrap_or(0.5);
            if !(0.0..=1.0).contains(&split_x) {
                return Err(invalid("mesh.split_x", "split must lie in [0, 1]"));
            }
            let n = mesh_n.unwrap_or(8);
            if n == 0 {
                return Err(invalid("mesh.n", "need at least one subdivision"));
            }
            MeshSpec::Square { n, split_x }
        }
        "channel" => {
            if mesh_path.is_some() || mesh_split_x.is_some() {
                return Err(invalid("mesh", "channel mesh takes only `n` and `circle_segments`"));
            }
            MeshSpec::Channel {
                refinement: mesh_n.unwrap_or(1).max(1),
                circle_segments: mesh_segments.unwrap_or(24),
            }
        }
        "file" => {
            if mesh_n.is_some() || mesh_split_x.is_some() || mesh_segments.is_some() {
                return Err(invalid("mesh", "file mesh takes only `path`"));
            }
            let path = mesh_path
                .ok_or_else(|| invalid("mesh.path", "file mesh needs a `path`"))?;
            MeshSpec::File { path }
        }
        _ => {
            return Err(invalid(
                "mesh.kind",
                format!("`{kind}` is not one of square|channel|file"),
            ))
        }
    };

    // Convergence runs are manufactured-solution runs unless told otherwise.
    let manufactured =
        manufactured.unwrap_or(experiment == ExperimentKind::Convergence);

    Ok(Config {
        mesh,
        k,
        quadrature_exactness,
        t_end,
        n_steps,
        params,
        scheme,
        frozen_geometry,
        newton,
        experiment,
        case_id,
        manufactured,
        u_bar: u_bar.unwrap_or(1.0),
        out_dir,
        cadence,
        probes,
    })
}

pub fn parse_config(path: &Path) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}
