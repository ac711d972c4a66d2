//! Experiment configuration: per-experiment defaults, layered user overrides,
//! and validation that reports every problem with its field path.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use esd_core::amortized::{Activation, TrainConfig};
use esd_core::eval::Bandwidth;
use esd_core::reverse_ode::ReverseOdeConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentId {
    Bimodal,
    Gmm20d,
    Elliptic,
    Custom,
}

impl ExperimentId {
    pub const ALL: [Self; 4] = [Self::Bimodal, Self::Gmm20d, Self::Elliptic, Self::Custom];

    pub fn name(self) -> &'static str {
        match self {
            Self::Bimodal => "bimodal",
            Self::Gmm20d => "gmm20d",
            Self::Elliptic => "elliptic",
            Self::Custom => "custom",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|id| id.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    GenData,
    Prior,
    Sample,
    Label,
    Train,
    Infer,
    Eval,
}

impl Stage {
    pub const ALL: [Self; 7] = [
        Self::GenData,
        Self::Prior,
        Self::Sample,
        Self::Label,
        Self::Train,
        Self::Infer,
        Self::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::GenData => "gen-data",
            Self::Prior => "prior",
            Self::Sample => "sample",
            Self::Label => "label",
            Self::Train => "train",
            Self::Infer => "infer",
            Self::Eval => "eval",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Generate,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Joint dataset to load when `source = "file"`.
    pub path: String,
    /// `auto` (by extension), `csv` or `binary`.
    pub format: String,
    /// Number of joint samples to generate.
    pub k: usize,
    /// Z-score every column before building the prior.
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub sigma_u2: f64,
    pub sigma_v2: f64,
    pub sigma_y2: f64,
    /// Replace `sigma_u2 = sigma_v2` by the nearest-neighbour heuristic.
    pub auto_bandwidth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeConfig {
    pub n_steps: usize,
    pub batch: usize,
    pub truncate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    /// Diffusion samples per conditioning value (per test case for `elliptic`).
    pub n_samples: usize,
    /// Conditioning values in data units.
    pub y: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelConfig {
    pub j: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    /// Minibatch size; 0 trains full batch.
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KdeRule {
    Silverman,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub kde: KdeRule,
    /// Used when `kde = "fixed"`.
    pub bandwidth: f64,
    /// Fixed bandwidth for KDEs of samples projected onto the mode line (`gmm20d`).
    pub projection_bandwidth: f64,
    /// Samples drawn from the trained network per conditioning value.
    pub n_nn_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BimodalConfig {
    /// Variance of the noise in `V = U² + ε`.
    pub noise_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gmm20dConfig {
    pub d_u: usize,
    /// First mode mean; the second is its negation.
    pub mu1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipticConfig {
    pub m: usize,
    pub l: usize,
    pub grid_n: usize,
    pub n_locations: usize,
    pub rel_noise_var: f64,
    pub test_cases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationCase {
    pub name: String,
    pub k: usize,
    /// Also used for `sigma_v2`.
    pub sigma_u2: f64,
    pub sigma_y2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub n_samples: usize,
    pub cases: Vec<AblationCase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub n_samples: usize,
    pub steps: Vec<usize>,
}

/// Fully resolved experiment description. Every field is present after
/// resolution; experiment-specific sections exist only for their experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Stages executed by `run`, in order.
    pub stages: Vec<Stage>,
    pub data: DataConfig,
    pub prior: PriorConfig,
    pub ode: OdeConfig,
    pub sample: SampleConfig,
    pub label: LabelConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bimodal: Option<BimodalConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gmm20d: Option<Gmm20dConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elliptic: Option<EllipticConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceConfig>,
}

/// The nine bimodal ablation settings `(K, σ_U², σ_Y²)`.
pub fn table_cases() -> Vec<AblationCase> {
    [
        (500, 0.005, 1e-4),
        (500, 0.01, 1e-4),
        (500, 0.05, 1e-4),
        (5000, 0.001, 1e-4),
        (5000, 0.005, 1e-4),
        (5000, 0.01, 1e-4),
        (5000, 0.005, 1e-3),
        (5000, 0.005, 1e-2),
        (5000, 0.005, 1e-1),
    ]
    .into_iter()
    .enumerate()
    .map(|(i, (k, sigma_u2, sigma_y2))| AblationCase {
        name: format!("C{}", i + 1),
        k,
        sigma_u2,
        sigma_y2,
    })
    .collect()
}

impl ExperimentConfig {
    /// Defaults for `id`: the reference settings of each experiment. The
    /// bimodal network settings were chosen by measurement.
    pub fn defaults(id: ExperimentId) -> Self {
        let base = Self {
            experiment: id,
            seed: 0,
            out_dir: PathBuf::from(format!("runs/{}", id.name())),
            stages: Stage::ALL.to_vec(),
            data: DataConfig {
                source: DataSource::Generate,
                path: String::new(),
                format: "auto".into(),
                k: 5000,
                normalize: true,
            },
            prior: PriorConfig {
                sigma_u2: 0.005,
                sigma_v2: 0.005,
                sigma_y2: 1e-4,
                auto_bandwidth: false,
            },
            ode: OdeConfig {
                n_steps: 1000,
                batch: 64,
                truncate: false,
            },
            sample: SampleConfig {
                n_samples: 10_000,
                y: vec![vec![1.0]],
            },
            label: LabelConfig { j: 5000 },
            train: TrainSection {
                epochs: 5000,
                batch_size: 0,
                lr: 1e-3,
                hidden: vec![50, 50],
                activation: Activation::Tanh,
            },
            eval: EvalConfig {
                kde: KdeRule::Fixed,
                bandwidth: 0.04,
                projection_bandwidth: 0.2,
                n_nn_samples: 10_000,
            },
            bimodal: None,
            gmm20d: None,
            elliptic: None,
            ablation: None,
            convergence: None,
        };
        match id {
            // A smooth tanh map blurs the narrow region of noise space that
            // separates the two branches; ReLU layers resolve it.
            ExperimentId::Bimodal => Self {
                label: LabelConfig { j: 15_000 },
                train: TrainSection {
                    epochs: 1000,
                    batch_size: 128,
                    hidden: vec![128, 128, 128],
                    activation: Activation::Relu,
                    ..base.train.clone()
                },
                bimodal: Some(BimodalConfig { noise_var: 0.1 }),
                ablation: Some(AblationConfig {
                    n_samples: 10_000,
                    cases: table_cases(),
                }),
                convergence: Some(ConvergenceConfig {
                    n_samples: 10_000,
                    steps: vec![8, 16, 32, 64, 128, 256, 512, 1024],
                }),
                ..base
            },
            ExperimentId::Gmm20d => {
                let (mu1, _) = esd_core::synthetic::two_mode_means();
                Self {
                    data: DataConfig {
                        k: 150_000,
                        normalize: false,
                        ..base.data
                    },
                    prior: PriorConfig {
                        sigma_u2: 0.1,
                        sigma_v2: 0.1,
                        sigma_y2: 1e-5,
                        auto_bandwidth: false,
                    },
                    sample: SampleConfig {
                        n_samples: 5000,
                        y: vec![vec![0.0; 5], vec![-0.5; 5], vec![0.5; 5]],
                    },
                    label: LabelConfig { j: 30_000 },
                    train: TrainSection {
                        epochs: 50_000,
                        ..base.train
                    },
                    eval: EvalConfig {
                        kde: KdeRule::Silverman,
                        n_nn_samples: 5000,
                        ..base.eval
                    },
                    gmm20d: Some(Gmm20dConfig { d_u: 15, mu1 }),
                    ..base
                }
            }
            ExperimentId::Elliptic => Self {
                prior: PriorConfig {
                    sigma_u2: 0.1,
                    sigma_v2: 0.1,
                    sigma_y2: 1e-5,
                    auto_bandwidth: false,
                },
                sample: SampleConfig {
                    n_samples: 2000,
                    y: Vec::new(),
                },
                train: TrainSection {
                    epochs: 20_000,
                    hidden: vec![100],
                    ..base.train
                },
                eval: EvalConfig {
                    kde: KdeRule::Silverman,
                    n_nn_samples: 2000,
                    ..base.eval
                },
                elliptic: Some(EllipticConfig {
                    m: 2,
                    l: 2,
                    grid_n: 32,
                    n_locations: 10,
                    rel_noise_var: 0.01,
                    test_cases: 2,
                }),
                ..base
            },
            ExperimentId::Custom => Self {
                data: DataConfig {
                    source: DataSource::File,
                    normalize: false,
                    ..base.data
                },
                sample: SampleConfig {
                    n_samples: 1000,
                    y: Vec::new(),
                },
                eval: EvalConfig {
                    kde: KdeRule::Silverman,
                    n_nn_samples: 1000,
                    ..base.eval
                },
                ..base
            },
        }
    }

    pub fn ode_config(&self, seed: u64) -> esd_core::Result<ReverseOdeConfig> {
        let cfg = ReverseOdeConfig {
            n_steps: self.ode.n_steps,
            seed,
            batch: self.ode.batch,
            truncate: self.ode.truncate,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: (self.train.batch_size > 0).then_some(self.train.batch_size),
            seed,
            lr: self.train.lr,
            hidden: self.train.hidden.clone(),
            activation: self.train.activation,
        }
    }

    pub fn kde_bandwidth(&self) -> Bandwidth {
        match self.eval.kde {
            KdeRule::Silverman => Bandwidth::Silverman,
            KdeRule::Fixed => Bandwidth::Fixed(self.eval.bandwidth),
        }
    }

    /// Dimension of the conditioning variable when it is known before loading data.
    pub fn known_d_v(&self) -> Option<usize> {
        match self.experiment {
            ExperimentId::Bimodal => Some(1),
            ExperimentId::Gmm20d => self.gmm20d.as_ref().map(|g| g.mu1.len().saturating_sub(g.d_u)),
            ExperimentId::Elliptic => self.elliptic.as_ref().map(|e| e.n_locations),
            ExperimentId::Custom => None,
        }
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::single("", format!("cannot encode as TOML: {e}")))
    }

    /// Semantic checks on a resolved config.
    pub fn check(&self) -> Result<(), ConfigError> {
        let mut p = Problems::default();
        if self.stages.is_empty() {
            p.push("stages", "at least one stage is required");
        }
        let mut seen = BTreeSet::new();
        for s in &self.stages {
            if !seen.insert(*s) {
                p.push("stages", format!("stage `{s}` listed twice"));
            }
        }
        if self.stages.windows(2).any(|w| w[0] > w[1]) {
            p.push("stages", "stages must appear in pipeline order");
        }
        if self.out_dir.as_os_str().is_empty() {
            p.push("out_dir", "must not be empty");
        }

        match self.data.source {
            DataSource::File => {
                if self.data.path.is_empty() {
                    p.push("data.path", "required when data.source = \"file\"");
                } else if !Path::new(&self.data.path).is_file() {
                    p.push("data.path", format!("file `{}` does not exist", self.data.path));
                }
                if self.experiment == ExperimentId::Elliptic {
                    p.push("data.source", "the elliptic experiment generates its own data");
                }
            }
            DataSource::Generate => {
                if self.experiment == ExperimentId::Custom {
                    p.push("data.source", "custom experiments read their data from a file");
                }
                if self.data.k < 2 {
                    p.push("data.k", "need at least 2 joint samples");
                }
            }
        }
        if !["auto", "csv", "binary", "bin"].contains(&self.data.format.as_str()) {
            p.push("data.format", format!("`{}` is not one of auto, csv, binary", self.data.format));
        }

        for (name, v) in [
            ("prior.sigma_u2", self.prior.sigma_u2),
            ("prior.sigma_v2", self.prior.sigma_v2),
            ("prior.sigma_y2", self.prior.sigma_y2),
        ] {
            p.positive(name, v);
        }
        if self.ode.n_steps < 2 {
            p.push("ode.n_steps", "need at least 2 time points");
        }
        if self.ode.batch == 0 {
            p.push("ode.batch", "must be positive");
        }
        if self.sample.n_samples == 0 {
            p.push("sample.n_samples", "must be positive");
        }
        let d_v = self.known_d_v();
        for (i, y) in self.sample.y.iter().enumerate() {
            if y.iter().any(|v| !v.is_finite()) {
                p.push(format!("sample.y[{i}]"), "entries must be finite");
            }
            if let Some(d) = d_v {
                if y.len() != d {
                    p.push(format!("sample.y[{i}]"), format!("has length {}, expected {d}", y.len()));
                }
            }
        }
        if self.sample.y.is_empty() && self.experiment != ExperimentId::Elliptic {
            p.push("sample.y", "need at least one conditioning value");
        }
        if self.label.j == 0 {
            p.push("label.j", "must be positive");
        }
        if self.train.epochs == 0 {
            p.push("train.epochs", "must be positive");
        }
        p.positive("train.lr", self.train.lr);
        if self.train.hidden.contains(&0) {
            p.push("train.hidden", "layer widths must be positive");
        }
        if self.eval.kde == KdeRule::Fixed {
            p.positive("eval.bandwidth", self.eval.bandwidth);
        }
        p.positive("eval.projection_bandwidth", self.eval.projection_bandwidth);
        if self.eval.n_nn_samples < 2 {
            p.push("eval.n_nn_samples", "need at least 2 samples for a KDE");
        }

        if let Some(b) = &self.bimodal {
            p.positive("bimodal.noise_var", b.noise_var);
        }
        if let Some(g) = &self.gmm20d {
            if g.d_u == 0 || g.d_u >= g.mu1.len() {
                p.push("gmm20d.d_u", format!("must split the {}-dimensional means into two blocks", g.mu1.len()));
            }
            if g.mu1.iter().any(|v| !v.is_finite()) {
                p.push("gmm20d.mu1", "entries must be finite");
            }
            if g.mu1.iter().all(|v| *v == 0.0) {
                p.push("gmm20d.mu1", "modes coincide; mu1 must be nonzero");
            }
        }
        if let Some(e) = &self.elliptic {
            for (name, v) in [("elliptic.m", e.m), ("elliptic.l", e.l), ("elliptic.n_locations", e.n_locations), ("elliptic.test_cases", e.test_cases)] {
                if v == 0 {
                    p.push(name, "must be positive");
                }
            }
            if e.grid_n < 2 {
                p.push("elliptic.grid_n", "need at least 2 cells per side");
            }
            if !(e.rel_noise_var >= 0.0 && e.rel_noise_var.is_finite()) {
                p.push("elliptic.rel_noise_var", "must be a nonnegative real");
            }
        }
        if let Some(a) = &self.ablation {
            if a.n_samples < 2 {
                p.push("ablation.n_samples", "need at least 2 samples for a KDE");
            }
            for (i, c) in a.cases.iter().enumerate() {
                if c.k < 2 {
                    p.push(format!("ablation.cases[{i}].k"), "need at least 2 joint samples");
                }
                p.positive(&format!("ablation.cases[{i}].sigma_u2"), c.sigma_u2);
                p.positive(&format!("ablation.cases[{i}].sigma_y2"), c.sigma_y2);
            }
        }
        if let Some(c) = &self.convergence {
            if c.n_samples < 2 {
                p.push("convergence.n_samples", "need at least 2 samples for a KDE");
            }
            if c.steps.len() < 2 {
                p.push("convergence.steps", "need at least two step counts for a slope");
            }
            if c.steps.iter().any(|s| *s < 2) {
                p.push("convergence.steps", "every step count must be at least 2");
            }
        }
        p.finish()
    }
}

/// One validation finding, addressed by a dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Problem {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

/// Every problem found in a configuration.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ConfigError {
    pub problems: Vec<Problem>,
}

impl ConfigError {
    fn single(path: &str, message: impl Into<String>) -> Self {
        Self {
            problems: vec![Problem {
                path: path.into(),
                message: message.into(),
            }],
        }
    }

    /// Whether some problem is reported at exactly `path`.
    pub fn mentions(&self, path: &str) -> bool {
        self.problems.iter().any(|p| p.path == path)
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration ({} problem(s))", self.problems.len())?;
        for p in &self.problems {
            write!(f, "\n  {p}")?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct Problems(Vec<Problem>);

impl Problems {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(Problem {
            path: path.into(),
            message: message.into(),
        });
    }

    fn positive(&mut self, path: &str, v: f64) {
        if !(v > 0.0 && v.is_finite()) {
            self.push(path, format!("must be a positive real, got {v}"));
        }
    }

    fn finish(self) -> Result<(), ConfigError> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { problems: self.0 })
        }
    }
}

/// Reads, resolves, and checks a TOML or JSON config file. A run manifest is
/// accepted too; its recorded config is used.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ConfigError::single("", format!("cannot read `{}`: {e}", path.display())))?;
    let value = parse_text(&text, path)?;
    let value = match value.get("manifest_format") {
        Some(_) => value
            .get("config")
            .cloned()
            .ok_or_else(|| ConfigError::single("config", "manifest has no config section"))?,
        None => value,
    };
    resolve_value(value)
}

fn parse_text(text: &str, path: &Path) -> Result<Value, ConfigError> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
        || text.trim_start().starts_with('{');
    if is_json {
        serde_json::from_str(text).map_err(|e| ConfigError::single("", format!("JSON syntax error: {e}")))
    } else {
        let table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::single("", format!("TOML syntax error: {e}")))?;
        serde_json::to_value(table).map_err(|e| ConfigError::single("", e.to_string()))
    }
}

/// Layers a user document over the defaults of its experiment, then checks it.
pub fn resolve_value(user: Value) -> Result<ExperimentConfig, ConfigError> {
    let Value::Object(user) = user else {
        return Err(ConfigError::single("", "configuration must be a table"));
    };
    let id = match user.get("experiment") {
        None => return Err(ConfigError::single("experiment", "missing; expected one of bimodal, gmm20d, elliptic, custom")),
        Some(Value::String(s)) => ExperimentId::parse(s).ok_or_else(|| {
            ConfigError::single("experiment", format!("unknown experiment `{s}`; expected one of bimodal, gmm20d, elliptic, custom"))
        })?,
        Some(other) => return Err(ConfigError::single("experiment", format!("expected a string, found {}", kind(other)))),
    };
    let defaults = serde_json::to_value(ExperimentConfig::defaults(id)).expect("defaults serialize");
    let mut problems = Problems::default();
    compare_shapes(&Value::Object(user.clone()), &defaults, "", id, &mut problems);
    problems.finish()?;
    let mut merged = defaults;
    merge(&mut merged, Value::Object(user));
    let cfg: ExperimentConfig = serde_json::from_value(merged).map_err(|e| ConfigError::single("", e.to_string()))?;
    cfg.check()?;
    Ok(cfg)
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(n) if n.is_f64() => "a float",
        Value::Number(_) => "an integer",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "a table",
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

/// Reports unknown keys and type mismatches of `user` against the default tree.
fn compare_shapes(user: &Value, default: &Value, path: &str, id: ExperimentId, p: &mut Problems) {
    match (user, default) {
        (Value::Object(u), Value::Object(d)) => {
            for (key, uv) in u {
                let sub = join(path, key);
                match d.get(key) {
                    Some(dv) => compare_shapes(uv, dv, &sub, id, p),
                    None if path.is_empty() && ["bimodal", "gmm20d", "elliptic", "ablation", "convergence"].contains(&key.as_str()) => {
                        p.push(sub, format!("section is not used by experiment `{}`", id.name()))
                    }
                    None => p.push(sub, "unknown key"),
                }
            }
        }
        (Value::Array(u), Value::Array(d)) => {
            if let Some(template) = d.first() {
                for (i, uv) in u.iter().enumerate() {
                    compare_shapes(uv, template, &format!("{path}[{i}]"), id, p);
                }
            } else if path == "sample.y" {
                let template = Value::Array(vec![Value::from(0.0)]);
                for (i, uv) in u.iter().enumerate() {
                    compare_shapes(uv, &template, &format!("{path}[{i}]"), id, p);
                }
            }
        }
        (Value::Number(un), Value::Number(dn)) => {
            let int_expected = !dn.is_f64();
            if int_expected && !(un.is_u64()) {
                p.push(path, format!("expected a nonnegative integer, found {un}"));
            }
        }
        (Value::String(_), Value::String(_)) | (Value::Bool(_), Value::Bool(_)) => {}
        (u, d) => p.push(path, format!("expected {}, found {}", kind(d), kind(u))),
    }
}

/// Recursively overlays `over` onto `base`; arrays and scalars replace wholesale.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// A TOML document holding the resolved config; useful as a template.
pub fn default_config_toml(id: ExperimentId) -> String {
    ExperimentConfig::defaults(id).to_toml_string().expect("defaults encode")
}

/// Builds a config from an in-memory JSON object of overrides.
pub fn config_with(id: ExperimentId, overrides: Value) -> Result<ExperimentConfig, ConfigError> {
    let mut user = Map::new();
    user.insert("experiment".into(), Value::from(id.name()));
    let mut doc = Value::Object(user);
    merge(&mut doc, overrides);
    resolve_value(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn minimal_bimodal_resolves_to_reference_settings() {
        let cfg = config_with(ExperimentId::Bimodal, json!({})).unwrap();
        assert_eq!(cfg.data.k, 5000);
        assert_eq!(cfg.prior.sigma_u2, 0.005);
        assert_eq!(cfg.prior.sigma_v2, 0.005);
        assert_eq!(cfg.prior.sigma_y2, 1e-4);
        assert_eq!(cfg.ode_config(0).unwrap().dtau(), 1e-3);
        assert_eq!(cfg.ablation.as_ref().unwrap().cases.len(), 9);
    }

    #[test]
    fn negative_variance_is_reported_on_its_field() {
        let err = config_with(ExperimentId::Bimodal, json!({"prior": {"sigma_u2": -1.0}})).unwrap_err();
        assert!(err.mentions("prior.sigma_u2"), "{err}");
    }

    #[test]
    fn all_shape_problems_are_listed() {
        let err = config_with(
            ExperimentId::Gmm20d,
            json!({"prior": {"sigma_u2": "big", "colour": 1}, "ode": {"n_steps": 1.5}, "elliptic": {}}),
        )
        .unwrap_err();
        for path in ["prior.sigma_u2", "prior.colour", "ode.n_steps", "elliptic"] {
            assert!(err.mentions(path), "missing {path} in {err}");
        }
    }

    #[test]
    fn integers_are_accepted_for_reals() {
        let cfg = config_with(ExperimentId::Bimodal, json!({"prior": {"sigma_y2": 1}})).unwrap();
        assert_eq!(cfg.prior.sigma_y2, 1.0);
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        for id in [ExperimentId::Bimodal, ExperimentId::Gmm20d, ExperimentId::Elliptic] {
            let cfg = config_with(id, json!({"seed": 9})).unwrap();
            let text = cfg.to_toml_string().unwrap();
            let table: toml::Table = toml::from_str(&text).unwrap();
            let again = resolve_value(serde_json::to_value(table).unwrap()).unwrap();
            assert_eq!(again, cfg);
        }
    }

    #[test]
    fn missing_data_file_is_reported() {
        let err = config_with(ExperimentId::Custom, json!({"data": {"path": "/no/such/file.csv"}, "sample": {"y": [[0.0]]}})).unwrap_err();
        assert!(err.mentions("data.path"));
    }

    #[test]
    fn conditioning_length_is_checked() {
        let err = config_with(ExperimentId::Bimodal, json!({"sample": {"y": [[1.0, 2.0]]}})).unwrap_err();
        assert!(err.mentions("sample.y[0]"));
    }
}
