//! Line-oriented `key=value` run configuration with dotted namespaces.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must be
//! known, may appear once, and is validated on load. The canonical form lists
//! every effective setting (defaults included) sorted by key; its SHA-256 is
//! the config digest recorded in all outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use flint_core::data::{load_idx, load_manifest, synth_shapes_split, Dataset, Preprocess, Split};
use flint_core::losses::LossWeights;
use flint_core::models::BundleSpec;
use flint_core::training::{Mode, StageSchedule, TrainConfig};
use flint_core::visualization::AmpiParams;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Keys accepted in a config file.
pub const KEYS: &[&str] = &[
    "seed",
    "model.preset",
    "model.attributes",
    "train.mode",
    "train.epochs",
    "train.batch_size",
    "train.learning_rate",
    "train.beta",
    "train.gamma",
    "train.delta",
    "train.eta",
    "train.zeta",
    "train.mu",
    "train.of_epoch",
    "train.cd_epoch",
    "train.of_into_predictor",
    "train.max_steps",
    "train.predictor_checkpoint",
    "data.source",
    "data.train_per_class",
    "data.test_per_class",
    "data.train_images",
    "data.train_labels",
    "data.test_images",
    "data.test_labels",
    "data.train_manifest",
    "data.test_manifest",
    "data.normalize_mean",
    "data.normalize_std",
    "data.pad_crop",
    "data.flip",
    "ampi.lambda_phi",
    "ampi.lambda_tv",
    "ampi.lambda_bo",
    "ampi.init_scale",
    "ampi.iterations",
    "ampi.step_size",
    "ampi.step_halving_period",
    "metrics.threshold",
    "metrics.mas_size",
    "metrics.top_k_max",
    "metrics.disagreement_k",
    "metrics.depth_directions",
    "metrics.reference_per_class",
    "metrics.conciseness_thresholds",
    "output.dir",
];

/// Environment variable overriding `output.dir`.
pub const OUTPUT_DIR_ENV: &str = "FLINT_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synth {
        train_per_class: usize,
        test_per_class: usize,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Manifest {
        train: PathBuf,
        test: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsConfig {
    /// Relevance threshold 1/τ.
    pub threshold: f64,
    pub mas_size: usize,
    pub top_k_max: usize,
    pub disagreement_k: usize,
    pub depth_directions: usize,
    pub reference_per_class: usize,
    pub conciseness_thresholds: Vec<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            threshold: 0.2,
            mas_size: 5,
            top_k_max: 5,
            disagreement_k: 3,
            depth_directions: 1000,
            reference_per_class: 100,
            conciseness_thresholds: (1..10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub preset: String,
    pub attributes: usize,
    pub train: TrainConfig,
    pub predictor_checkpoint: Option<PathBuf>,
    pub data: DataSource,
    pub ampi: AmpiParams,
    pub metrics: MetricsConfig,
    /// Not part of the digest: where results go does not change them.
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            preset: "lenet-desk".into(),
            attributes: 12,
            train: TrainConfig::desk(),
            predictor_checkpoint: None,
            data: DataSource::Synth {
                train_per_class: 500,
                test_per_class: 100,
            },
            ampi: AmpiParams::default(),
            metrics: MetricsConfig::default(),
            output_dir: PathBuf::from("flint-out"),
        }
    }
}

fn parse_lines(text: &str) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(CliError::Config(format!("line {}: unknown key {key:?}", n + 1)));
        }
        if out.insert(key.to_string(), value.to_string()).is_some() {
            return Err(CliError::Config(format!("line {}: duplicate key {key:?}", n + 1)));
        }
    }
    Ok(out)
}

struct Reader {
    values: BTreeMap<String, String>,
    base: PathBuf,
}

impl Reader {
    fn get<T: std::str::FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    fn opt<T: std::str::FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Config(format!("{key}: cannot parse {v:?}"))),
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.values.get(key).map(|v| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                self.base.join(p)
            }
        })
    }

    fn require_path(&self, key: &str, source: &str) -> CliResult<PathBuf> {
        self.path(key)
            .ok_or_else(|| CliError::Config(format!("data.source={source} requires {key}")))
    }
}

impl RunConfig {
    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> CliResult<RunConfig> {
        Self::parse_with_overrides(text, base, &[])
    }

    /// Like [`RunConfig::parse`], with `key=value` overrides applied on top.
    pub fn parse_with_overrides(text: &str, base: &Path, overrides: &[String]) -> CliResult<RunConfig> {
        let mut values = parse_lines(text)?;
        for o in overrides {
            let parsed = parse_lines(o)?;
            if parsed.is_empty() {
                return Err(CliError::Config(format!("empty override {o:?}")));
            }
            values.extend(parsed);
        }
        let r = Reader {
            values,
            base: base.to_path_buf(),
        };
        let d = RunConfig::default();
        let seed = r.get("seed", d.seed)?;
        let preset = r.get("model.preset", d.preset)?;
        if !BundleSpec::PRESETS.contains(&preset.as_str()) {
            return Err(CliError::Config(format!(
                "model.preset: unknown preset {preset:?} (available: {})",
                BundleSpec::PRESETS.join(", ")
            )));
        }
        let attributes = r.get("model.attributes", d.attributes)?;
        if attributes == 0 {
            return Err(CliError::Config("model.attributes must be at least 1".into()));
        }

        let t = &d.train;
        let w = t.weights;
        let mode: Mode = match r.values.get("train.mode") {
            None => t.mode,
            Some(v) => v.parse().map_err(|e: String| CliError::Config(format!("train.mode: {e}")))?,
        };
        let train = TrainConfig {
            weights: LossWeights {
                beta: r.get("train.beta", w.beta)?,
                gamma: r.get("train.gamma", w.gamma)?,
                delta: r.get("train.delta", w.delta)?,
                eta: r.get("train.eta", w.eta)?,
                zeta: r.get("train.zeta", w.zeta)?,
                mu: r.get("train.mu", w.mu)?,
            },
            epochs: r.get("train.epochs", t.epochs)?,
            batch_size: r.get("train.batch_size", t.batch_size)?,
            learning_rate: r.get("train.learning_rate", t.learning_rate)?,
            seed,
            mode,
            schedule: StageSchedule {
                of_epoch: r.get("train.of_epoch", t.schedule.of_epoch)?,
                cd_epoch: r.get("train.cd_epoch", t.schedule.cd_epoch)?,
            },
            of_into_predictor: r.get("train.of_into_predictor", t.of_into_predictor)?,
            max_steps: r.opt("train.max_steps")?,
            preprocess: Preprocess {
                normalize: match (r.opt::<f64>("data.normalize_mean")?, r.opt::<f64>("data.normalize_std")?) {
                    (None, None) => None,
                    (Some(m), Some(s)) => Some((m, s)),
                    _ => {
                        return Err(CliError::Config(
                            "data.normalize_mean and data.normalize_std must be set together".into(),
                        ))
                    }
                },
                pad_crop: r.opt("data.pad_crop")?,
                flip: r.get("data.flip", false)?,
            },
        };
        train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let predictor_checkpoint = r.path("train.predictor_checkpoint");
        if mode == Mode::Posthoc && predictor_checkpoint.is_none() {
            return Err(CliError::Config(
                "train.mode=posthoc requires train.predictor_checkpoint".into(),
            ));
        }

        let source: String = r.get("data.source", "synth".to_string())?;
        let data = match source.as_str() {
            "synth" => DataSource::Synth {
                train_per_class: r.get("data.train_per_class", 500)?,
                test_per_class: r.get("data.test_per_class", 100)?,
            },
            "idx" => DataSource::Idx {
                train_images: r.require_path("data.train_images", "idx")?,
                train_labels: r.require_path("data.train_labels", "idx")?,
                test_images: r.require_path("data.test_images", "idx")?,
                test_labels: r.require_path("data.test_labels", "idx")?,
            },
            "manifest" => DataSource::Manifest {
                train: r.require_path("data.train_manifest", "manifest")?,
                test: r.require_path("data.test_manifest", "manifest")?,
            },
            other => {
                return Err(CliError::Config(format!(
                    "data.source: unknown source {other:?} (expected synth, idx or manifest)"
                )))
            }
        };
        if let DataSource::Synth {
            train_per_class,
            test_per_class,
        } = data
        {
            if train_per_class == 0 || test_per_class == 0 {
                return Err(CliError::Config("synthetic class sizes must be at least 1".into()));
            }
        }

        let a = d.ampi;
        let ampi = AmpiParams {
            lambda_phi: r.get("ampi.lambda_phi", a.lambda_phi)?,
            lambda_tv: r.get("ampi.lambda_tv", a.lambda_tv)?,
            lambda_bo: r.get("ampi.lambda_bo", a.lambda_bo)?,
            init_scale: r.get("ampi.init_scale", a.init_scale)?,
            iterations: r.get("ampi.iterations", a.iterations)?,
            step_size: r.get("ampi.step_size", a.step_size)?,
            step_halving_period: r.get("ampi.step_halving_period", a.step_halving_period)?,
            range: a.range,
        };
        ampi.validate().map_err(|e| CliError::Config(format!("ampi: {e}")))?;

        let m = d.metrics;
        let metrics = MetricsConfig {
            threshold: r.get("metrics.threshold", m.threshold)?,
            mas_size: r.get("metrics.mas_size", m.mas_size)?,
            top_k_max: r.get("metrics.top_k_max", m.top_k_max)?,
            disagreement_k: r.get("metrics.disagreement_k", m.disagreement_k)?,
            depth_directions: r.get("metrics.depth_directions", m.depth_directions)?,
            reference_per_class: r.get("metrics.reference_per_class", m.reference_per_class)?,
            conciseness_thresholds: match r.values.get("metrics.conciseness_thresholds") {
                None => m.conciseness_thresholds,
                Some(v) => v
                    .split(',')
                    .map(|t| t.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| CliError::Config(format!("metrics.conciseness_thresholds: cannot parse {v:?}")))?,
            },
        };
        metrics.validate()?;

        Ok(RunConfig {
            seed,
            preset,
            attributes,
            train,
            predictor_checkpoint,
            data,
            ampi,
            metrics,
            output_dir: r.path("output.dir").unwrap_or(d.output_dir),
        })
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> CliResult<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse_with_overrides(&text, base, overrides)
    }

    /// Every effective setting except `output.dir`, one `key=value` per line, sorted.
    pub fn canonical(&self) -> String {
        let mut kv: BTreeMap<&str, String> = BTreeMap::new();
        let t = &self.train;
        kv.insert("seed", self.seed.to_string());
        kv.insert("model.preset", self.preset.clone());
        kv.insert("model.attributes", self.attributes.to_string());
        kv.insert(
            "train.mode",
            match t.mode {
                Mode::Joint => "joint".into(),
                Mode::Posthoc => "posthoc".into(),
            },
        );
        kv.insert("train.epochs", t.epochs.to_string());
        kv.insert("train.batch_size", t.batch_size.to_string());
        kv.insert("train.learning_rate", t.learning_rate.to_string());
        kv.insert("train.beta", t.weights.beta.to_string());
        kv.insert("train.gamma", t.weights.gamma.to_string());
        kv.insert("train.delta", t.weights.delta.to_string());
        kv.insert("train.eta", t.weights.eta.to_string());
        kv.insert("train.zeta", t.weights.zeta.to_string());
        kv.insert("train.mu", t.weights.mu.to_string());
        kv.insert("train.of_epoch", t.schedule.of_epoch.to_string());
        kv.insert("train.cd_epoch", t.schedule.cd_epoch.to_string());
        kv.insert("train.of_into_predictor", t.of_into_predictor.to_string());
        if let Some(s) = t.max_steps {
            kv.insert("train.max_steps", s.to_string());
        }
        if let Some(p) = &self.predictor_checkpoint {
            kv.insert("train.predictor_checkpoint", p.display().to_string());
        }
        match &self.data {
            DataSource::Synth {
                train_per_class,
                test_per_class,
            } => {
                kv.insert("data.source", "synth".into());
                kv.insert("data.train_per_class", train_per_class.to_string());
                kv.insert("data.test_per_class", test_per_class.to_string());
            }
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                kv.insert("data.source", "idx".into());
                kv.insert("data.train_images", train_images.display().to_string());
                kv.insert("data.train_labels", train_labels.display().to_string());
                kv.insert("data.test_images", test_images.display().to_string());
                kv.insert("data.test_labels", test_labels.display().to_string());
            }
            DataSource::Manifest { train, test } => {
                kv.insert("data.source", "manifest".into());
                kv.insert("data.train_manifest", train.display().to_string());
                kv.insert("data.test_manifest", test.display().to_string());
            }
        }
        let p = &t.preprocess;
        if let Some((m, s)) = p.normalize {
            kv.insert("data.normalize_mean", m.to_string());
            kv.insert("data.normalize_std", s.to_string());
        }
        if let Some(c) = p.pad_crop {
            kv.insert("data.pad_crop", c.to_string());
        }
        kv.insert("data.flip", p.flip.to_string());
        let a = &self.ampi;
        kv.insert("ampi.lambda_phi", a.lambda_phi.to_string());
        kv.insert("ampi.lambda_tv", a.lambda_tv.to_string());
        kv.insert("ampi.lambda_bo", a.lambda_bo.to_string());
        kv.insert("ampi.init_scale", a.init_scale.to_string());
        kv.insert("ampi.iterations", a.iterations.to_string());
        kv.insert("ampi.step_size", a.step_size.to_string());
        kv.insert("ampi.step_halving_period", a.step_halving_period.to_string());
        let m = &self.metrics;
        kv.insert("metrics.threshold", m.threshold.to_string());
        kv.insert("metrics.mas_size", m.mas_size.to_string());
        kv.insert("metrics.top_k_max", m.top_k_max.to_string());
        kv.insert("metrics.disagreement_k", m.disagreement_k.to_string());
        kv.insert("metrics.depth_directions", m.depth_directions.to_string());
        kv.insert("metrics.reference_per_class", m.reference_per_class.to_string());
        kv.insert(
            "metrics.conciseness_thresholds",
            m.conciseness_thresholds.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
        );
        kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Hex SHA-256 of [`RunConfig::canonical`].
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    /// `output.dir`, unless the environment overrides it.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }

    pub fn bundle_spec(&self, classes: usize) -> CliResult<BundleSpec> {
        BundleSpec::preset(&self.preset, classes, self.attributes)
            .ok_or_else(|| CliError::Config(format!("unknown preset {:?}", self.preset)))
    }

    /// Training and test splits.
    pub fn load_data(&self) -> CliResult<(Dataset, Dataset)> {
        let (train, test) = match &self.data {
            DataSource::Synth {
                train_per_class,
                test_per_class,
            } => synth_shapes_split(*train_per_class, *test_per_class, self.seed)?,
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => (
                load_idx(train_images, train_labels, Split::Train)?,
                load_idx(test_images, test_labels, Split::Test)?,
            ),
            DataSource::Manifest { train, test } => {
                (load_manifest(train, Split::Train)?, load_manifest(test, Split::Test)?)
            }
        };
        if train.class_names != test.class_names || train.image_shape() != test.image_shape() {
            return Err(CliError::Data(
                "training and test splits disagree on classes or image shape".into(),
            ));
        }
        self.train
            .preprocess
            .validate(train.image_shape())
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok((train, test))
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("metrics.threshold must lie in (0, 1), got {}", self.threshold));
        }
        if self.mas_size == 0 {
            return bad("metrics.mas_size must be at least 1".into());
        }
        if self.top_k_max == 0 {
            return bad("metrics.top_k_max must be at least 1".into());
        }
        if self.disagreement_k == 0 {
            return bad("metrics.disagreement_k must be at least 1".into());
        }
        if self.depth_directions == 0 || self.reference_per_class < 3 {
            return bad("metrics.depth_directions must be >= 1 and metrics.reference_per_class >= 3".into());
        }
        if self.conciseness_thresholds.is_empty()
            || self.conciseness_thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0))
        {
            return bad("metrics.conciseness_thresholds must be values in (0, 1)".into());
        }
        Ok(())
    }
}
