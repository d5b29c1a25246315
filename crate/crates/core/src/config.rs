//! Run configuration: a TOML file whose keys mirror [`RunConfig`], with
//! `key=value` overrides applied on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::pipeline::{sha256_hex, PipelineConfig};
use crate::synth::{paper_like_config, GeneratorConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_data: Option<PathBuf>,
    pub test_fraction: f64,
    pub paper_like: bool,
    pub generator: GeneratorConfig,
    pub pipeline: PipelineConfig,
    pub thresholds: Vec<f64>,
    pub latency_calls: usize,
    pub sigma: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let exp = ExperimentConfig::default();
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            train_data: None,
            test_data: None,
            test_fraction: 0.3,
            paper_like: false,
            generator: GeneratorConfig::default(),
            pipeline: exp.pipeline,
            thresholds: exp.thresholds,
            latency_calls: exp.latency_calls,
            sigma: exp.sigma,
        }
    }
}

/// Every configuration key with a one-line description. Defaults are taken
/// from [`RunConfig::default`] when rendering help.
pub const KEY_DOCS: &[(&str, &str)] = &[
    ("seed", "master seed for generation, splitting and training"),
    ("output_dir", "directory receiving every output file"),
    ("train_data", "training CSV (default: <output_dir>/train.csv)"),
    ("test_data", "test CSV (default: <output_dir>/test.csv)"),
    ("test_fraction", "fraction of subjects held out by `generate`"),
    ("paper_like", "generate at reference-study scale, ignoring [generator]"),
    ("generator.n_subjects", "subjects"),
    ("generator.windows_per_subject", "windows per subject"),
    ("generator.n_features", "feature columns"),
    ("generator.n_informative", "features shifted by the label"),
    ("generator.latent_dim", "latent factors shared by features"),
    ("generator.class_shift", "label-1 shift of informative features, in SDs"),
    ("generator.noise_sd", "independent noise SD in latent units"),
    ("generator.missing_rates", "per-feature missing rate; empty = spread over [0, 0.6]"),
    ("generator.burst_prob", "chance of a dropout burst per subject and feature"),
    ("generator.burst_len_mean", "mean burst length in windows"),
    ("generator.outlier_rate", "fraction of cells (or rows) corrupted"),
    ("generator.outlier_scale", "outlier distance from the mean, in SDs"),
    ("generator.outlier_unit", "\"cell\" or \"row\""),
    ("generator.stress_missing_multiplier", "missing-rate ratio of label 1 to label 0"),
    ("generator.n_sensors", "contiguous feature groups sharing dropouts"),
    ("generator.missing_coupling", "chance a sensor follows the window-wide draw"),
    ("generator.within_subject_sd", "SD of the within-session latent drift"),
    ("generator.label_blocks", "alternating label blocks per subject"),
    ("generator.seed", "ignored; `seed` is used"),
    ("pipeline.threshold", "pruning threshold on the per-feature missing fraction"),
    ("pipeline.handler.isolation.n_trees", "isolation trees"),
    ("pipeline.handler.isolation.subsample", "rows per isolation tree"),
    ("pipeline.handler.isolation.contamination", "fraction of rows flagged as outliers"),
    ("pipeline.handler.rfecv.step", "features removed per elimination round"),
    ("pipeline.handler.rfecv.forest.n_trees", "trees in the ranking forest"),
    ("pipeline.handler.rfecv.forest.max_depth", "ranking-forest depth limit"),
    ("pipeline.handler.rfecv.forest.min_samples_split", "smallest splittable node"),
    ("pipeline.handler.rfecv.forest.oob_score", "compute out-of-bag accuracy"),
    ("pipeline.handler.imputer.max_iter", "imputation sweeps"),
    ("pipeline.handler.imputer.tol", "stop when the change falls below tol * max SD"),
    ("pipeline.handler.imputer.skip_complete", "skip regressors for complete columns"),
    ("pipeline.handler.imputer.regressor.max_iter", "evidence iterations of each regressor"),
    ("pipeline.handler.imputer.regressor.tol", "relative change of the precisions that stops a regressor"),
    ("pipeline.cv.k", "cross-validation folds"),
    ("pipeline.cv.seed", "fold assignment seed"),
    ("pipeline.grid.max_depth", "boosting depth candidates"),
    ("pipeline.grid.n_rounds", "boosting round candidates"),
    ("pipeline.grid.learning_rate", "learning rate candidates"),
    ("pipeline.grid.subsample", "row subsample candidates"),
    ("thresholds", "pruning thresholds visited by the sweep"),
    ("latency_calls", "timed single-row predictions per configuration"),
    ("sigma", "outlier band, in SDs, of the row-dropping baseline"),
];

impl RunConfig {
    /// Reads `path` (if any), applies `key=value` overrides, and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut root = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let config: RunConfig = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test_fraction must be in (0, 1), got {}", self.test_fraction)));
        }
        let valid = |t: f64| t > 0.0 && t <= 1.0;
        if !valid(self.pipeline.threshold) {
            return Err(Error::Config(format!("pipeline.threshold must be in (0, 1], got {}", self.pipeline.threshold)));
        }
        if let Some(t) = self.thresholds.iter().find(|&&t| !valid(t)) {
            return Err(Error::Config(format!("thresholds must lie in (0, 1], got {t}")));
        }
        if self.pipeline.cv.k < 2 {
            return Err(Error::Config("pipeline.cv.k must be at least 2".into()));
        }
        if self.pipeline.grid.is_empty() {
            return Err(Error::Config("pipeline.grid has an empty candidate list".into()));
        }
        if self.latency_calls == 0 {
            return Err(Error::Config("latency_calls must be at least 1".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config("sigma must be positive".into()));
        }
        let c = &self.pipeline.handler.isolation.contamination;
        if !(*c > 0.0 && *c < 0.5) {
            return Err(Error::Config(format!("contamination must be in (0, 0.5), got {c}")));
        }
        self.generator_config().validate()
    }

    /// Generator settings with the run seed applied.
    pub fn generator_config(&self) -> GeneratorConfig {
        let base = if self.paper_like {
            paper_like_config()
        } else {
            self.generator.clone()
        };
        GeneratorConfig { seed: self.seed, ..base }
    }

    pub fn experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            pipeline: self.pipeline.clone(),
            thresholds: self.thresholds.clone(),
            latency_calls: self.latency_calls,
            sigma: self.sigma,
        }
    }

    pub fn train_path(&self) -> PathBuf {
        self.train_data.clone().unwrap_or_else(|| self.output_dir.join("train.csv"))
    }

    pub fn test_path(&self) -> PathBuf {
        self.test_data.clone().unwrap_or_else(|| self.output_dir.join("test.csv"))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// Sets a dotted key. The value is parsed as a TOML value, falling back to
/// a bare string.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad key `{key}`")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Dotted leaf keys of a TOML table.
pub fn leaf_keys(table: &toml::Table) -> Vec<String> {
    fn walk(prefix: &str, t: &toml::Table, out: &mut Vec<String>) {
        for (k, v) in t {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v {
                toml::Value::Table(inner) => walk(&key, inner, out),
                _ => out.push(key),
            }
        }
    }
    let mut out = Vec::new();
    walk("", table, &mut out);
    out
}

/// Help text listing every key with its default.
pub fn render_key_help() -> String {
    let defaults: toml::Table = RunConfig::default()
        .to_toml_string()
        .parse()
        .expect("default config parses");
    let lookup = |key: &str| -> String {
        let mut v: Option<&toml::Value> = None;
        let mut t = &defaults;
        for part in key.split('.') {
            v = t.get(part);
            match v {
                Some(toml::Value::Table(inner)) => t = inner,
                Some(_) => {}
                None => return "unset".into(),
            }
        }
        v.map_or_else(|| "unset".into(), |v| v.to_string())
    };
    let width = KEY_DOCS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Configuration keys (TOML file or --set key=value), with defaults:\n");
    for (key, doc) in KEY_DOCS {
        out.push_str(&format!("  {key:<width$}  {doc} [default: {}]\n", lookup(key)));
    }
    out
}
