//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::arms::DEFAULT_PULL_CAP;
use crate::embedding::Spectrum;
use crate::neural::NeuralConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn new(field: &str, line: Option<usize>, message: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            line,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}, field `{}`: {}", self.field, self.message),
            None => write!(f, "field `{}`: {}", self.field, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Adaptive,
    Fixed,
    Unknown,
    Neural,
    Rage,
    Action,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Adaptive => "adaptive",
            Algorithm::Fixed => "fixed",
            Algorithm::Unknown => "unknown",
            Algorithm::Neural => "neural",
            Algorithm::Rage => "rage",
            Algorithm::Action => "action",
        }
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "adaptive" => Algorithm::Adaptive,
            "fixed" => Algorithm::Fixed,
            "unknown" => Algorithm::Unknown,
            "neural" => Algorithm::Neural,
            "rage" => Algorithm::Rage,
            "action" => Algorithm::Action,
            _ => return Err(format!("unknown algorithm `{s}` (adaptive, fixed, unknown, neural, rage, action)")),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    SyntheticLinear,
    SyntheticNonlinear,
    HardInstance,
    Csv(PathBuf),
}

impl Dataset {
    fn parse(s: &str) -> Result<Self, String> {
        Ok(match s {
            "synthetic-linear" => Dataset::SyntheticLinear,
            "synthetic-nonlinear" => Dataset::SyntheticNonlinear,
            "hard-instance" => Dataset::HardInstance,
            _ => match s.strip_prefix("csv(").and_then(|r| r.strip_suffix(')')) {
                Some(path) if !path.trim().is_empty() => Dataset::Csv(PathBuf::from(path.trim())),
                _ => {
                    return Err(format!(
                        "unknown dataset `{s}` (synthetic-linear, synthetic-nonlinear, hard-instance, csv(<path>))"
                    ))
                }
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingChoice {
    /// SVD features with norm bound `c`.
    Svd { c: f64 },
    /// Empirical gram of a Gaussian kernel, scaled by `c`.
    KernelGaussian { gamma_k: f64, c: f64 },
    /// Known Mercer spectrum with sine eigenfunctions.
    KernelMercer { spectrum: Spectrum, c_phi: f64 },
    /// Empirical gram of the linear kernel, scaled by `c`.
    Empirical { c: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub dataset: Dataset,
    pub k: usize,
    pub d: usize,
    pub eps: f64,
    pub delta: f64,
    pub zeta: f64,
    pub trials: usize,
    pub seed0: u64,
    pub max_pulls: u64,
    pub embedding: EmbeddingChoice,
    /// Plan dimension for `fixed` and `unknown`; `None` picks `d_eff(eps)`.
    pub plan_dim: Option<usize>,
    /// Round budget of the `unknown` stream.
    pub round_budget: usize,
    pub neural: NeuralConfig,
    pub neural_width: usize,
    pub neural_depth: usize,
    /// Record wall time; `false` writes zeros so outputs are byte-stable.
    pub timing: bool,
    /// Worker threads; `None` uses every available core.
    pub workers: Option<usize>,
    /// Mean column of a CSV dataset.
    pub csv_mean_column: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Adaptive,
            dataset: Dataset::SyntheticLinear,
            k: 20,
            d: 20,
            eps: 0.1,
            delta: 0.05,
            zeta: 0.1,
            trials: 50,
            seed0: 0,
            max_pulls: DEFAULT_PULL_CAP,
            embedding: EmbeddingChoice::Svd { c: 1.0 },
            plan_dim: None,
            round_budget: 10,
            neural: NeuralConfig::default(),
            neural_width: 128,
            neural_depth: 3,
            timing: true,
            workers: None,
            csv_mean_column: "mean".to_string(),
        }
    }
}

const KEYS: &[&str] = &[
    "algorithm",
    "dataset",
    "K",
    "D",
    "eps",
    "delta",
    "zeta",
    "trials",
    "seed0",
    "max_pulls",
    "embedding",
    "embedding.c",
    "embedding.gamma_k",
    "embedding.spectrum",
    "embedding.c_k",
    "embedding.beta",
    "embedding.c_phi",
    "plan.d",
    "unknown.rounds",
    "neural.m",
    "neural.depth",
    "neural.alpha",
    "neural.eps_bar",
    "neural.allocation_scale",
    "neural.learning_rate",
    "neural.gd_steps",
    "timing",
    "workers",
    "csv.mean_column",
];

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.map.get(key) {
            None => Ok(None),
            Some((line, raw)) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| ConfigError::new(key, Some(*line), format!("cannot parse `{raw}`: {e}"))),
        }
    }

    fn line(&self, key: &str) -> Option<usize> {
        self.map.get(key).map(|(l, _)| *l)
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|(_, v)| v.as_str())
    }
}

impl ExperimentConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::new(content, Some(line), "expected `key = value`"));
            };
            let key = key.trim();
            let value = value.trim();
            if !KEYS.contains(&key) {
                return Err(ConfigError::new(key, Some(line), "unknown key"));
            }
            if map.insert(key.to_string(), (line, value.to_string())).is_some() {
                return Err(ConfigError::new(key, Some(line), "duplicate key"));
            }
        }
        Self::from_entries(&Entries { map })
    }

    fn from_entries(e: &Entries) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        if let Some(v) = e.raw("algorithm") {
            cfg.algorithm = v
                .parse()
                .map_err(|m: String| ConfigError::new("algorithm", e.line("algorithm"), m))?;
        }
        if let Some(v) = e.raw("dataset") {
            cfg.dataset = Dataset::parse(v).map_err(|m| ConfigError::new("dataset", e.line("dataset"), m))?;
        }
        macro_rules! set {
            ($key:literal, $field:expr) => {
                if let Some(v) = e.get($key)? {
                    $field = v;
                }
            };
        }
        set!("K", cfg.k);
        set!("D", cfg.d);
        set!("eps", cfg.eps);
        set!("delta", cfg.delta);
        set!("zeta", cfg.zeta);
        set!("trials", cfg.trials);
        set!("seed0", cfg.seed0);
        set!("max_pulls", cfg.max_pulls);
        set!("unknown.rounds", cfg.round_budget);
        set!("neural.m", cfg.neural_width);
        set!("neural.depth", cfg.neural_depth);
        set!("neural.alpha", cfg.neural.alpha);
        set!("neural.eps_bar", cfg.neural.eps_bar);
        set!("neural.learning_rate", cfg.neural.learning_rate);
        set!("neural.gd_steps", cfg.neural.gd_steps);
        set!("timing", cfg.timing);
        set!("csv.mean_column", cfg.csv_mean_column);
        cfg.plan_dim = e.get("plan.d")?;
        cfg.workers = e.get("workers")?;
        cfg.neural.allocation_scale = e.get("neural.allocation_scale")?;
        cfg.embedding = Self::embedding(e)?;
        cfg.neural.eps = cfg.eps;
        cfg.neural.delta = cfg.delta;
        cfg.neural.zeta = cfg.zeta;
        cfg.validate_with(|k| e.line(k))?;
        Ok(cfg)
    }

    fn embedding(e: &Entries) -> Result<EmbeddingChoice, ConfigError> {
        let c: f64 = e.get("embedding.c")?.unwrap_or(1.0);
        let kind = e.raw("embedding").unwrap_or("svd");
        let line = e.line("embedding");
        Ok(match kind {
            "svd" => EmbeddingChoice::Svd { c },
            "empirical" => EmbeddingChoice::Empirical { c },
            "kernel-gaussian" => EmbeddingChoice::KernelGaussian {
                gamma_k: e.get("embedding.gamma_k")?.unwrap_or(1.0),
                c,
            },
            "kernel-mercer" => {
                let c_k: f64 = e.get("embedding.c_k")?.unwrap_or(1.0);
                let beta: f64 = e.get("embedding.beta")?.unwrap_or(1.0);
                let spectrum = match e.raw("embedding.spectrum").unwrap_or("exp") {
                    "exp" => Spectrum::Exp { c_k, beta },
                    "poly" => Spectrum::Poly { c_k, beta },
                    other => {
                        return Err(ConfigError::new(
                            "embedding.spectrum",
                            e.line("embedding.spectrum"),
                            format!("unknown spectrum `{other}` (exp, poly)"),
                        ))
                    }
                };
                EmbeddingChoice::KernelMercer {
                    spectrum,
                    c_phi: e.get("embedding.c_phi")?.unwrap_or(1.0),
                }
            }
            other => {
                return Err(ConfigError::new(
                    "embedding",
                    line,
                    format!("unknown embedding `{other}` (svd, kernel-gaussian, kernel-mercer, empirical)"),
                ))
            }
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_with(|_| None)
    }

    fn validate_with(&self, line: impl Fn(&str) -> Option<usize>) -> Result<(), ConfigError> {
        let fail = |key: &str, msg: String| Err(ConfigError::new(key, line(key), msg));
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return fail("eps", format!("{} not in (0, 1)", self.eps));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail("delta", format!("{} not in (0, 1)", self.delta));
        }
        if !(0.05..=0.5).contains(&self.zeta) {
            return fail("zeta", format!("{} not in [0.05, 0.5]", self.zeta));
        }
        if !(0.1..=0.25).contains(&self.zeta) {
            log::warn!("zeta = {} outside the usual range [0.1, 0.25]", self.zeta);
        }
        if self.trials == 0 {
            return fail("trials", "must be at least 1".into());
        }
        if self.max_pulls == 0 {
            return fail("max_pulls", "must be at least 1".into());
        }
        if self.round_budget == 0 {
            return fail("unknown.rounds", "must be at least 1".into());
        }
        if self.plan_dim == Some(0) {
            return fail("plan.d", "must be at least 1".into());
        }
        if self.workers == Some(0) {
            return fail("workers", "must be at least 1".into());
        }
        match self.dataset {
            Dataset::SyntheticLinear | Dataset::SyntheticNonlinear => {
                if self.k < 2 {
                    return fail("K", format!("{} arms; need at least 2", self.k));
                }
                if self.d < 2 {
                    return fail("D", format!("dimension {} below 2", self.d));
                }
            }
            Dataset::HardInstance => {
                if self.d < 2 {
                    return fail("D", format!("dimension {} below 2", self.d));
                }
                if self.eps >= 0.25 {
                    return fail("eps", "hard instance needs eps < 0.25".into());
                }
            }
            Dataset::Csv(_) => {}
        }
        let c = match &self.embedding {
            EmbeddingChoice::Svd { c } | EmbeddingChoice::Empirical { c } => *c,
            EmbeddingChoice::KernelGaussian { gamma_k, c } => {
                if !(*gamma_k > 0.0) {
                    return fail("embedding.gamma_k", format!("{gamma_k} must be positive"));
                }
                *c
            }
            EmbeddingChoice::KernelMercer { spectrum, c_phi } => {
                if spectrum.validate().is_err() {
                    return fail("embedding.beta", "invalid spectrum parameters".into());
                }
                *c_phi
            }
        };
        if !(c > 0.0 && c.is_finite()) {
            return fail("embedding.c", format!("{c} must be positive"));
        }
        if self.algorithm == Algorithm::Neural {
            if self.neural_width == 0 || self.neural_width % 2 == 1 {
                return fail("neural.m", format!("width {} must be even", self.neural_width));
            }
            if self.neural_depth < 2 {
                return fail("neural.depth", format!("depth {} below 2", self.neural_depth));
            }
            if let Err(err) = self.neural.validate() {
                return fail("neural", err.to_string());
            }
        }
        Ok(())
    }
}
