//! Experiment configuration: a single JSON document, validated in full before
//! anything runs.

use std::fmt;
use std::path::{Path, PathBuf};

use fm_kinetics::transport::{IntegratorConfig, Method};
use fm_kinetics::{
    AffineSchedule, CustomSchedule, Dataset, GaussianParams, SourceKernel, DEFAULT_T_MAX,
};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SEED_OVERRIDE_VAR: &str = "FMK_SEED_OVERRIDE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Sample,
    Energy,
    Tails,
    Gradcheck,
    OtCompare,
    Bounds,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Sample,
        Experiment::Energy,
        Experiment::Tails,
        Experiment::Gradcheck,
        Experiment::OtCompare,
        Experiment::Bounds,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Sample => "sample",
            Experiment::Energy => "energy",
            Experiment::Tails => "tails",
            Experiment::Gradcheck => "gradcheck",
            Experiment::OtCompare => "ot-compare",
            Experiment::Bounds => "bounds",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub experiment: Option<Experiment>,
    pub dataset: Option<DatasetSpec>,
    #[serde(default)]
    pub source: SourceSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub mc: McSpec,
    pub target: Option<TargetSpec>,
    #[serde(default)]
    pub tails: TailsSpec,
    #[serde(default)]
    pub gradcheck: GradcheckSpec,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub path: Option<PathBuf>,
    pub generator: Option<GeneratorSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: KernelName,
    pub dof: Option<f64>,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelName {
    Gaussian,
    StudentT,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub kind: KernelName,
    pub dof: Option<f64>,
}

impl Default for SourceSpec {
    fn default() -> Self {
        Self {
            kind: KernelName::Gaussian,
            dof: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Rf {},
    RfRegularized {
        sigma_min: f64,
    },
    Custom {
        m_power: f64,
        sigma_power: f64,
        #[serde(default)]
        sigma_min: f64,
    },
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec::Rf {}
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
}

fn default_method() -> Method {
    IntegratorConfig::default().method
}

fn default_steps() -> usize {
    IntegratorConfig::default().steps
}

fn default_t_end() -> f64 {
    IntegratorConfig::default().t_end
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        Self {
            method: default_method(),
            steps: default_steps(),
            t_end: default_t_end(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub probe_times: Vec<f64>,
}

fn default_count() -> usize {
    1000
}

impl Default for McSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            count: default_count(),
            probe_times: Vec::new(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub path: Option<PathBuf>,
    pub mean: Option<Vec<f64>>,
    pub cov: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailsSpec {
    #[serde(default = "default_quantile")]
    pub quantile: f64,
    #[serde(default = "default_column")]
    pub column: String,
    pub input: Option<PathBuf>,
}

fn default_quantile() -> f64 {
    0.95
}

fn default_column() -> String {
    "E_T".into()
}

impl Default for TailsSpec {
    fn default() -> Self {
        Self {
            quantile: default_quantile(),
            column: default_column(),
            input: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckSpec {
    #[serde(default = "default_grad_times")]
    pub times: Vec<f64>,
    #[serde(default = "default_probes")]
    pub probes: usize,
    pub fd_step: Option<f64>,
}

fn default_grad_times() -> Vec<f64> {
    vec![0.1, 0.3, 0.5, 0.7, 0.9]
}

fn default_probes() -> usize {
    10
}

impl Default for GradcheckSpec {
    fn default() -> Self {
        Self {
            times: default_grad_times(),
            probes: default_probes(),
            fd_step: None,
        }
    }
}

/// A validated configuration with every object built.
#[derive(Debug)]
pub struct Config {
    pub experiment: Experiment,
    pub dataset: Option<Dataset>,
    pub kernel: Option<SourceKernel>,
    pub schedule: AffineSchedule,
    pub integrator: IntegratorConfig,
    pub seed: u64,
    pub count: usize,
    pub probe_times: Vec<f64>,
    pub target: Option<GaussianParams>,
    pub tails: TailsSpec,
    pub gradcheck: GradcheckSpec,
    pub output_dir: PathBuf,
    pub hash: String,
    pub seed_override: Option<u64>,
}

struct Source<'a> {
    text: &'a str,
    dir: &'a Path,
}

impl Source<'_> {
    /// Line of the first occurrence of `"key"`, or 1.
    fn line_of(&self, key: &str) -> usize {
        let needle = format!("\"{key}\"");
        self.text
            .lines()
            .position(|l| l.contains(&needle))
            .map_or(1, |i| i + 1)
    }

    fn err(&self, key: &str, msg: impl fmt::Display) -> CliError {
        CliError::Config(format!("line {}: {msg}", self.line_of(key)))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }

    fn existing(&self, key: &str, p: &Path) -> Result<PathBuf, CliError> {
        let full = self.resolve(p);
        if !full.is_file() {
            return Err(self.err(key, format!("file not found: {}", full.display())));
        }
        Ok(full)
    }
}

pub fn config_hash(raw: &[u8], seed_override: Option<u64>) -> String {
    let mut h = Sha256::new();
    h.update(raw);
    if let Some(s) = seed_override {
        h.update(format!("\n{SEED_OVERRIDE_VAR}={s}").as_bytes());
    }
    hex::encode(h.finalize())
}

pub fn seed_override_from_env() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_OVERRIDE_VAR) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| {
            CliError::Config(format!("{SEED_OVERRIDE_VAR} must be a non-negative integer, got {v:?}"))
        }),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Config(format!("{SEED_OVERRIDE_VAR}: {e}"))),
    }
}

pub fn load(
    path: &Path,
    requested: Option<Experiment>,
    output_override: Option<PathBuf>,
    seed_override: Option<u64>,
) -> Result<Config, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| CliError::Config(format!("{} is not UTF-8", path.display())))?;
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| {
        CliError::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
    })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let src = Source { text, dir };
    let hash = config_hash(&bytes, seed_override);
    build(raw, &src, requested, output_override, seed_override, hash)
}

fn build(
    raw: RawConfig,
    src: &Source,
    requested: Option<Experiment>,
    output_override: Option<PathBuf>,
    seed_override: Option<u64>,
    hash: String,
) -> Result<Config, CliError> {
    let experiment = match (requested, raw.experiment) {
        (Some(a), Some(b)) if a != b => {
            return Err(src.err(
                "experiment",
                format!("command line asks for {a} but the config is for {b}"),
            ))
        }
        (Some(a), _) => a,
        (None, Some(b)) => b,
        (None, None) => {
            return Err(CliError::Config(
                "line 1: no experiment given on the command line or in the config".into(),
            ))
        }
    };

    let dataset = match &raw.dataset {
        None => None,
        Some(spec) => Some(load_dataset(spec, src, seed_override)?),
    };

    let dim = dataset
        .as_ref()
        .map(Dataset::dim)
        .or_else(|| raw.target.as_ref().and_then(|t| t.mean.as_ref().map(Vec::len)));
    let kernel = match dim {
        Some(d) => Some(build_kernel(raw.source.kind, raw.source.dof, d, src, "source")?),
        None => None,
    };

    let schedule = match raw.schedule {
        ScheduleSpec::Rf {} => AffineSchedule::rectified_flow(),
        ScheduleSpec::RfRegularized { sigma_min } => {
            if !(0.0..1.0).contains(&sigma_min) {
                return Err(src.err("sigma_min", format!("sigma_min must lie in [0, 1), got {sigma_min}")));
            }
            AffineSchedule::regularized(sigma_min).map_err(|e| src.err("schedule", e))?
        }
        ScheduleSpec::Custom {
            m_power,
            sigma_power,
            sigma_min,
        } => {
            if !(0.0..1.0).contains(&sigma_min) {
                return Err(src.err("sigma_min", format!("sigma_min must lie in [0, 1), got {sigma_min}")));
            }
            AffineSchedule::custom(
                CustomSchedule::polynomial(m_power, sigma_power, sigma_min)
                    .map_err(|e| src.err("schedule", e))?,
            )
        }
    };

    let integrator = IntegratorConfig::new(raw.integrator.method, raw.integrator.steps, raw.integrator.t_end)
        .map_err(|e| src.err("integrator", e))?;
    integrator
        .validate(DEFAULT_T_MAX)
        .map_err(|e| src.err("t_end", e))?;

    if raw.mc.count == 0 {
        return Err(src.err("count", "count must be at least 1"));
    }
    for &t in &raw.mc.probe_times {
        if integrator.node_index(t).is_none() {
            return Err(src.err("probe_times", format!("probe time {t} is not a node of the integration grid")));
        }
    }

    let target = match &raw.target {
        None => None,
        Some(spec) => Some(load_target(spec, src)?),
    };

    if !(raw.tails.quantile > 0.0 && raw.tails.quantile < 1.0) {
        return Err(src.err("quantile", format!("quantile must lie in (0, 1), got {}", raw.tails.quantile)));
    }
    let mut tails = raw.tails;
    if let Some(input) = &tails.input {
        tails.input = Some(src.existing("input", input)?);
    }
    if tails.column != "E_T" {
        let t = tails
            .column
            .strip_prefix("K_t@")
            .and_then(|s| s.parse::<f64>().ok());
        if t.is_none() {
            return Err(src.err("column", format!("column must be E_T or K_t@<time>, got {:?}", tails.column)));
        }
    }

    let gradcheck = raw.gradcheck;
    if gradcheck.probes == 0 || gradcheck.times.is_empty() {
        return Err(src.err("gradcheck", "gradcheck needs at least one time and one probe"));
    }
    if let Some(h) = gradcheck.fd_step {
        if !(h > 0.0) {
            return Err(src.err("fd_step", format!("fd_step must be positive, got {h}")));
        }
    }

    let output_dir = match (output_override, &raw.output_dir) {
        (Some(p), _) => p,
        (None, Some(p)) => src.resolve(p),
        (None, None) => PathBuf::from("out"),
    };

    let cfg = Config {
        experiment,
        dataset,
        kernel,
        schedule,
        integrator,
        seed: seed_override.unwrap_or(raw.mc.seed),
        count: raw.mc.count,
        probe_times: raw.mc.probe_times,
        target,
        tails,
        gradcheck,
        output_dir,
        hash,
        seed_override,
    };
    check_requirements(&cfg, src)?;
    Ok(cfg)
}

fn build_kernel(
    kind: KernelName,
    dof: Option<f64>,
    dim: usize,
    src: &Source,
    key: &str,
) -> Result<SourceKernel, CliError> {
    match (kind, dof) {
        (KernelName::Gaussian, None) => {
            SourceKernel::standard_gaussian(dim).map_err(|e| src.err(key, e))
        }
        (KernelName::Gaussian, Some(_)) => Err(src.err("dof", "the Gaussian kernel takes no dof")),
        (KernelName::StudentT, Some(nu)) => SourceKernel::student_t(dim, nu).map_err(|e| src.err("dof", e)),
        (KernelName::StudentT, None) => Err(src.err(key, "student_t needs dof")),
    }
}

fn load_dataset(spec: &DatasetSpec, src: &Source, seed_override: Option<u64>) -> Result<Dataset, CliError> {
    match (&spec.path, &spec.generator) {
        (Some(p), None) => {
            let full = src.existing("path", p)?;
            Dataset::from_path(&full).map_err(|e| src.err("path", format!("{}: {e}", full.display())))
        }
        (None, Some(g)) => {
            if g.n == 0 {
                return Err(src.err("n", "generator needs n >= 1"));
            }
            let kernel = build_kernel(g.kind, g.dof, g.d, src, "generator")?;
            let points = fm_kinetics::sample_source(&kernel, seed_override.unwrap_or(g.seed), g.n)
                .map_err(|e| src.err("generator", e))?;
            Dataset::new(points).map_err(|e| src.err("generator", e))
        }
        _ => Err(src.err("dataset", "dataset needs exactly one of path or generator")),
    }
}

fn load_target(spec: &TargetSpec, src: &Source) -> Result<GaussianParams, CliError> {
    match (&spec.path, &spec.mean, &spec.cov) {
        (Some(p), None, None) => {
            let full = src.existing("path", p)?;
            GaussianParams::from_json_path(&full).map_err(|e| src.err("target", format!("{}: {e}", full.display())))
        }
        (None, Some(m), Some(c)) => GaussianParams::new(m.clone(), c.clone()).map_err(|e| src.err("target", e)),
        _ => Err(src.err("target", "target needs either path or both mean and cov")),
    }
}

fn check_requirements(cfg: &Config, src: &Source) -> Result<(), CliError> {
    let need_dataset = match cfg.experiment {
        Experiment::Sample | Experiment::Energy | Experiment::Gradcheck => true,
        Experiment::Tails => cfg.tails.input.is_none(),
        Experiment::OtCompare | Experiment::Bounds => false,
    };
    if need_dataset && cfg.dataset.is_none() {
        return Err(src.err("experiment", format!("experiment {} needs a dataset", cfg.experiment)));
    }
    if cfg.experiment == Experiment::OtCompare {
        if cfg.target.is_none() {
            return Err(src.err("experiment", "ot-compare needs a target"));
        }
        if matches!(cfg.kernel.map(|k| k.kind()), Some(fm_kinetics::KernelKind::StudentT { .. })) {
            return Err(src.err("source", "ot-compare uses the standard Gaussian source"));
        }
    }
    if cfg.experiment == Experiment::Bounds && cfg.dataset.is_none() && cfg.target.is_none() {
        return Err(src.err("experiment", "bounds needs a dataset, a target, or both"));
    }
    if let (Some(d), Some(t)) = (&cfg.dataset, &cfg.target) {
        if d.dim() != t.dim() {
            return Err(src.err("target", format!("target dimension {} differs from dataset dimension {}", t.dim(), d.dim())));
        }
    }
    Ok(())
}
