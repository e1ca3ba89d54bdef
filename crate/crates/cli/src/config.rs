//! Run configuration. The grammar is documented in `docs/config.md`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use varflow::instances::{preset, FieldSource, PhiConfig, PRESETS};
use varflow::InstanceConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug)]
pub struct ConfigError {
    pub file: Option<PathBuf>,
    pub field: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(file) = &self.file {
            write!(f, "{}:", file.display())?;
        }
        if let Some(line) = self.line {
            write!(f, "{line}:")?;
        }
        if self.file.is_some() || self.line.is_some() {
            f.write_str(" ")?;
        }
        if !self.field.is_empty() {
            write!(f, "`{}`: ", self.field)?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    instance: Option<toml::Table>,
    #[serde(skip, default = "heat")]
    pub instance_config: InstanceConfig<f64>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub checks: ChecksSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub norm: Option<NormSection>,
    #[serde(default)]
    pub prox: ProxSection,
}

fn heat() -> InstanceConfig<f64> {
    preset("heat").expect("builtin preset")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    ImplicitEuler,
    YosidaFlow,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub scheme: SchemeName,
    pub tau: f64,
    pub t_final: f64,
    pub lambda: Option<f64>,
    pub lambdas: Vec<f64>,
    pub taus: Vec<f64>,
    pub refinement_levels: usize,
    pub inner_tol: Option<f64>,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            scheme: SchemeName::ImplicitEuler,
            tau: 0.01,
            t_final: 0.5,
            lambda: None,
            lambdas: vec![0.1, 0.01, 0.001],
            taus: Vec::new(),
            refinement_levels: 0,
            inner_tol: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    SineBump,
    Zero,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum DataSource {
    Builtin(Builtin),
    Field(FieldSource<f64>),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum ForcingSource {
    Builtin(Builtin),
    Slices { slices: PathBuf },
    Field(FieldSource<f64>),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub u0: DataSource,
    pub u0_scale: f64,
    pub f: ForcingSource,
    pub f_scale: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            u0: DataSource::Builtin(Builtin::SineBump),
            u0_scale: 1.0,
            f: ForcingSource::Builtin(Builtin::Zero),
            f_scale: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    Phi,
    Modular,
    Resolvent,
    Coercivity,
    Energy,
    Young,
    ChainRule,
    Dependence,
    LambdaStudy,
    Refinement,
    Jensen,
}

impl CheckName {
    pub const ALL: [CheckName; 11] = [
        CheckName::Phi,
        CheckName::Modular,
        CheckName::Resolvent,
        CheckName::Coercivity,
        CheckName::Energy,
        CheckName::Young,
        CheckName::ChainRule,
        CheckName::Dependence,
        CheckName::LambdaStudy,
        CheckName::Refinement,
        CheckName::Jensen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckName::Phi => "phi",
            CheckName::Modular => "modular",
            CheckName::Resolvent => "resolvent",
            CheckName::Coercivity => "coercivity",
            CheckName::Energy => "energy",
            CheckName::Young => "young",
            CheckName::ChainRule => "chain_rule",
            CheckName::Dependence => "dependence",
            CheckName::LambdaStudy => "lambda_study",
            CheckName::Refinement => "refinement",
            CheckName::Jensen => "jensen",
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksSection {
    pub enabled: Vec<CheckName>,
    pub tol: f64,
    pub tolerances: BTreeMap<CheckName, f64>,
    pub samples: usize,
    pub dependence_pairs: usize,
    pub lambda_growth: f64,
    pub lambda_slack: f64,
    pub mollifier_n: usize,
    pub alphas: Vec<f64>,
}

impl Default for ChecksSection {
    fn default() -> Self {
        ChecksSection {
            enabled: CheckName::ALL.to_vec(),
            tol: 1e-8,
            tolerances: BTreeMap::new(),
            samples: 20,
            dependence_pairs: 5,
            lambda_growth: 1.1,
            lambda_slack: 0.05,
            mollifier_n: 8,
            alphas: vec![0.25, 0.5, 1.0],
        }
    }
}

impl ChecksSection {
    pub fn enabled(&self, c: CheckName) -> bool {
        self.enabled.contains(&c)
    }

    pub fn tol(&self, c: CheckName) -> f64 {
        self.tolerances.get(&c).copied().unwrap_or(self.tol)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub csv: bool,
    pub plots: bool,
    pub states: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("varflow-out"),
            csv: true,
            plots: true,
            states: false,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub phi: Option<PhiConfig<f64>>,
    pub z_min: f64,
    pub z_max: f64,
    pub samples: usize,
    pub site: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection {
            phi: None,
            z_min: 1e-3,
            z_max: 1e6,
            samples: 200,
            site: 0,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormSection {
    pub field: FieldSource<f64>,
    #[serde(default)]
    pub phi: Option<PhiConfig<f64>>,
    #[serde(default = "norm_tol")]
    pub tol: f64,
}

fn norm_tol() -> f64 {
    1e-12
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProxSection {
    pub lambda: f64,
}

impl Default for ProxSection {
    fn default() -> Self {
        ProxSection { lambda: 0.1 }
    }
}

/// Line of `key` inside `[section]` (or at top level when `section` is
/// empty), for error messages.
fn locate(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in source.lines().enumerate() {
        let t = line.trim();
        if let Some(h) = t.strip_prefix('[').and_then(|r| r.split(']').next()) {
            current = h.trim().to_string();
            if key.is_empty() && current == section {
                return Some(i + 1);
            }
            continue;
        }
        let in_section = current == section || current.starts_with(&format!("{section}."));
        if in_section && !key.is_empty() {
            if let Some((k, _)) = t.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl RunConfig {
    pub fn parse(source: &str, dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(source).map_err(|e| {
            let line = e.span().map(|s| source[..s.start].matches('\n').count() + 1);
            ConfigError {
                file: None,
                field: String::new(),
                line,
                message: e.message().to_string(),
            }
        })?;
        let err = |section: &str, key: &str, message: String| ConfigError {
            file: None,
            field: if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            },
            line: locate(source, section, key),
            message,
        };
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(err(
                "",
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", cfg.schema_version),
            ));
        }
        cfg.instance_config = match cfg.instance.take() {
            None => heat(),
            Some(mut table) => {
                let mut base = match table.remove("preset") {
                    None => toml::Table::new(),
                    Some(toml::Value::String(name)) => {
                        let p = preset::<f64>(&name).ok_or_else(|| {
                            err("instance", "preset", format!("unknown preset `{name}`, expected one of {}", PRESETS.join(", ")))
                        })?;
                        toml::Table::try_from(p).expect("presets serialize")
                    }
                    Some(_) => return Err(err("instance", "preset", "must be a string".into())),
                };
                merge(&mut base, table);
                let mut c: InstanceConfig<f64> = base
                    .try_into()
                    .map_err(|e: toml::de::Error| err("instance", "", e.message().to_string()))?;
                c.rebase(dir);
                c
            }
        };
        cfg.validate(source, dir)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let source = std::fs::read_to_string(path).map_err(|e| ConfigError {
            file: Some(path.to_path_buf()),
            field: String::new(),
            line: None,
            message: e.to_string(),
        })?;
        let dir = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&source, dir).map_err(|mut e| {
            e.file = Some(path.to_path_buf());
            e
        })
    }

    fn validate(&mut self, source: &str, dir: &Path) -> Result<(), ConfigError> {
        let err = |section: &str, key: &str, message: &str| ConfigError {
            file: None,
            field: format!("{section}.{key}"),
            line: locate(source, section, key),
            message: message.to_string(),
        };
        let positive = |v: f64| v > 0.0 && v.is_finite();
        let s = &self.solver;
        if !positive(s.tau) {
            return Err(err("solver", "tau", "must be finite and > 0"));
        }
        if !positive(s.t_final) {
            return Err(err("solver", "t_final", "must be finite and > 0"));
        }
        if !s.taus.iter().all(|&t| positive(t)) {
            return Err(err("solver", "taus", "entries must be > 0"));
        }
        let divides = |tau: f64| {
            let k = s.t_final / tau;
            (k - k.round()).abs() <= 1e-9 * k.max(1.0)
        };
        if !divides(s.tau) {
            return Err(err("solver", "tau", "must divide t_final into a whole number of steps"));
        }
        if !s.taus.iter().all(|&t| divides(t)) {
            return Err(err("solver", "taus", "every entry must divide t_final"));
        }
        if s.scheme == SchemeName::YosidaFlow && !s.lambda.is_some_and(positive) {
            return Err(err("solver", "lambda", "yosida_flow needs lambda > 0"));
        }
        if s.lambdas.is_empty() || !s.lambdas.iter().all(|&l| positive(l)) {
            return Err(err("solver", "lambdas", "schedule must be nonempty with entries > 0"));
        }
        if s.inner_tol.is_some_and(|t| !positive(t)) {
            return Err(err("solver", "inner_tol", "must be > 0"));
        }
        let c = &self.checks;
        // zero is accepted: every check then fails by construction
        let nonnegative = |v: f64| v >= 0.0 && v.is_finite();
        if !nonnegative(c.tol) {
            return Err(err("checks", "tol", "must be >= 0"));
        }
        if let Some((k, _)) = c.tolerances.iter().find(|(_, v)| !nonnegative(**v)) {
            return Err(err("checks", k.name(), "tolerance must be >= 0"));
        }
        if c.samples == 0 {
            return Err(err("checks", "samples", "must be > 0"));
        }
        if c.alphas.is_empty() || !c.alphas.iter().all(|&a| positive(a)) {
            return Err(err("checks", "alphas", "must be nonempty with entries > 0"));
        }
        if c.mollifier_n == 0 {
            return Err(err("checks", "mollifier_n", "must be > 0"));
        }
        if !positive(self.prox.lambda) {
            return Err(err("prox", "lambda", "must be > 0"));
        }
        let p = &self.probe;
        if !(positive(p.z_min) && p.z_max > p.z_min && p.z_max.is_finite()) {
            return Err(err("probe", "z_max", "need 0 < z_min < z_max < inf"));
        }
        if p.samples < 2 {
            return Err(err("probe", "samples", "need at least 2"));
        }

        let d = &mut self.data;
        if !d.u0_scale.is_finite() {
            return Err(err("data", "u0_scale", "must be finite"));
        }
        if !d.f_scale.is_finite() {
            return Err(err("data", "f_scale", "must be finite"));
        }
        let exists = |p: &Path, key: &str| -> Result<(), ConfigError> {
            if p.exists() {
                Ok(())
            } else {
                Err(err("data", key, &format!("file not found: {}", p.display())))
            }
        };
        if let DataSource::Field(f) = &mut d.u0 {
            f.rebase(dir);
            if let FieldSource::Csv { csv } = f {
                exists(csv, "u0")?;
            }
        }
        match &mut d.f {
            ForcingSource::Slices { slices } => {
                if slices.is_relative() {
                    *slices = dir.join(&*slices);
                }
                exists(slices, "f")?;
            }
            ForcingSource::Field(f) => {
                f.rebase(dir);
                if let FieldSource::Csv { csv } = f {
                    exists(csv, "f")?;
                }
            }
            ForcingSource::Builtin(_) => {}
        }
        if let Some(n) = &mut self.norm {
            n.field.rebase(dir);
            if let FieldSource::Csv { csv } = &n.field {
                if !csv.exists() {
                    return Err(err("norm", "field", &format!("file not found: {}", csv.display())));
                }
            }
        }
        Ok(())
    }
}
