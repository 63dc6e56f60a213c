//! Command-line and config-file settings, and their resolution into run
//! configurations. Precedence: flags, then the JSON config file, then
//! built-in defaults.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use ovseg_core::oracles::{AssignmentCostParams, NoObjectPolicy};
use ovseg_core::pipeline::{InferenceParams, SelectionParams};
use ovseg_core::proposals::{EnsembleParams, FusionParams};
use ovseg_core::report::ReportFormat;
use ovseg_core::testkit::SceneSpec;
use ovseg_core::zeroshot::DEFAULT_TAU;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Json,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PolicyArg {
    Keep,
    Strip,
}

impl From<PolicyArg> for NoObjectPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Keep => NoObjectPolicy::Keep,
            PolicyArg::Strip => NoObjectPolicy::Strip,
        }
    }
}

/// Settings for `evaluate` and `oracle-select`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvalSettings {
    /// Prediction dump directory (contains manifest.json).
    #[arg(long)]
    pub dump: Option<PathBuf>,
    /// Directory of ground-truth panoptic maps named `<image id>.ovpm`.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Evaluation taxonomy (JSON).
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Training taxonomy; classes it names are marked seen.
    #[arg(long)]
    pub train_taxonomy: Option<PathBuf>,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report format; defaults to the extension of --out.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Per-image selection audit (JSON), with --oracle-select.
    #[arg(long)]
    pub audit: Option<PathBuf>,

    #[arg(long)]
    pub object_score_threshold: Option<f32>,
    #[arg(long)]
    pub overlap_keep_ratio: Option<f32>,
    #[arg(long)]
    pub sigma_threshold: Option<f32>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub merge_stuff: Option<bool>,

    #[arg(long)]
    pub bce_weight: Option<f64>,
    #[arg(long)]
    pub dice_weight: Option<f64>,

    /// Relabel predicted segments with the class of the ground-truth
    /// segment they overlap (IoU > 0.5) before scoring.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub oracle_cls: Option<bool>,
    /// Hungarian mask selection against ground truth.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub oracle_select: Option<bool>,
    #[arg(long, value_enum)]
    pub no_object_policy: Option<PolicyArg>,
    /// Replace selected sigmas with the matched ground-truth masks.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub oracle_seg_on_selection: Option<bool>,
    /// Replace selected posteriors with the matched ground-truth classes.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub oracle_cls_on_selection: Option<bool>,

    /// Geometric ensembling with zero-shot posteriors from the dump.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub ensemble: Option<bool>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Unmatched predictions with more than this share on void are ignored.
    #[arg(long)]
    pub void_overlap: Option<f64>,
}

/// Settings for `zeroshot`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ZeroshotSettings {
    /// Dump directory whose manifest lists a feature grid per image.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long)]
    pub train_taxonomy: Option<PathBuf>,
    /// Class text embeddings (OVTE), one row per taxonomy class.
    #[arg(long)]
    pub texts: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long)]
    pub void_overlap: Option<f64>,
}

/// Settings for `diff`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct DiffSettings {
    /// Report of the open-vocabulary run.
    #[arg(long)]
    pub open: Option<PathBuf>,
    /// Report of the in-domain reference run.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub recall_threshold: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

/// Settings for `synth`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SynthSettings {
    /// Output directory; receives dump/, gt/ and taxonomy.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    #[arg(long)]
    pub min_segments: Option<usize>,
    #[arg(long)]
    pub max_segments: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub erosion: Option<u32>,
    #[arg(long)]
    pub dilation: Option<u32>,
    #[arg(long)]
    pub class_flip: Option<f64>,
    #[arg(long)]
    pub no_object_flip: Option<f64>,
    #[arg(long)]
    pub spurious: Option<usize>,
    #[arg(long)]
    pub sigma_jitter: Option<f32>,
    #[arg(long)]
    pub void_probability: Option<f64>,
    /// Add zero-shot posteriors to every candidate.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub clip: Option<bool>,
    /// Also write aligned feature grids and text embeddings.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub features: Option<bool>,
    #[arg(long)]
    pub feature_dim: Option<u32>,
}

/// Overlays `flags` on the config file section. Only keys set on the
/// command line replace file values.
pub fn merge<T: Serialize + DeserializeOwned>(flags: &T, file: Option<&Value>) -> Result<T, CliError> {
    let Some(file) = file else {
        return Ok(serde_json::from_value(serde_json::to_value(flags).expect("settings serialize"))
            .expect("settings round-trip"));
    };
    let mut merged = match file {
        Value::Object(m) => m.clone(),
        _ => return Err(CliError::Config("config file must contain a JSON object".into())),
    };
    if let Value::Object(f) = serde_json::to_value(flags).expect("settings serialize") {
        for (k, v) in f {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Config(format!("config file: {e}")))
}

pub fn load_config_file(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Core(ovseg_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: malformed JSON: {e}", path.display())))
}

fn required(value: &Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    value
        .clone()
        .ok_or_else(|| CliError::Config(format!("missing --{flag} (or \"{flag}\" in the config file)")))
}

fn output_format(format: Option<FormatArg>, out: &Option<PathBuf>) -> ReportFormat {
    match (format, out) {
        (Some(f), _) => f.into(),
        (None, Some(p)) => ReportFormat::from_path(p),
        (None, None) => ReportFormat::Json,
    }
}

fn format_name(f: ReportFormat) -> &'static str {
    match f {
        ReportFormat::Json => "json",
        ReportFormat::Csv => "csv",
    }
}

/// Resolved configuration for `evaluate` / `oracle-select`.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub dump: PathBuf,
    pub gt: PathBuf,
    pub taxonomy: PathBuf,
    pub train_taxonomy: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: ReportFormat,
    pub audit: Option<PathBuf>,
    pub inference: InferenceParams,
    pub oracle_cls: bool,
    /// Present when the selection oracle runs.
    pub selection: Option<SelectionParams>,
    pub void_overlap: f64,
}

fn unit_interval(name: &str, v: f64) -> Result<f64, CliError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(CliError::Config(format!("--{name} must lie in [0, 1], got {v}")))
    }
}

impl EvalSettings {
    pub fn resolve(&self, command: &str) -> Result<EvalConfig, CliError> {
        let oracle_select = command == "oracle-select" || self.oracle_select.unwrap_or(false);
        if !oracle_select {
            for (flag, set) in [
                ("oracle-seg-on-selection", self.oracle_seg_on_selection),
                ("oracle-cls-on-selection", self.oracle_cls_on_selection),
            ] {
                if set == Some(true) {
                    return Err(CliError::Config(format!(
                        "--{flag} requires --oracle-select; add it or use the oracle-select subcommand"
                    )));
                }
            }
            if self.no_object_policy.is_some() {
                return Err(CliError::Config(
                    "--no-object-policy only applies with --oracle-select; add it or use the oracle-select subcommand"
                        .into(),
                ));
            }
            if self.audit.is_some() {
                return Err(CliError::Config("--audit requires --oracle-select".into()));
            }
        }
        let fusion = FusionParams {
            object_score_threshold: self.object_score_threshold.unwrap_or(FusionParams::default().object_score_threshold),
            overlap_keep_ratio: self.overlap_keep_ratio.unwrap_or(FusionParams::default().overlap_keep_ratio),
            sigma_threshold: self.sigma_threshold.unwrap_or(FusionParams::default().sigma_threshold),
            merge_stuff: self.merge_stuff.unwrap_or(true),
        };
        fusion.validate()?;
        let ensemble = if self.ensemble.unwrap_or(false) {
            let d = EnsembleParams::default();
            Some(EnsembleParams {
                alpha: unit_interval("alpha", self.alpha.unwrap_or(d.alpha))?,
                beta: unit_interval("beta", self.beta.unwrap_or(d.beta))?,
            })
        } else {
            if self.alpha.is_some() || self.beta.is_some() {
                return Err(CliError::Config("--alpha/--beta require --ensemble".into()));
            }
            None
        };
        let selection = if oracle_select {
            let d = AssignmentCostParams::default();
            let cost = AssignmentCostParams {
                bce_weight: self.bce_weight.unwrap_or(d.bce_weight),
                dice_weight: self.dice_weight.unwrap_or(d.dice_weight),
                prob_clamp: d.prob_clamp,
            };
            cost.validate()?;
            Some(SelectionParams {
                cost,
                policy: self.no_object_policy.map(Into::into).unwrap_or_default(),
                segmentation_oracle: self.oracle_seg_on_selection.unwrap_or(false),
                classification_oracle: self.oracle_cls_on_selection.unwrap_or(false),
            })
        } else {
            if self.bce_weight.is_some() || self.dice_weight.is_some() {
                return Err(CliError::Config("--bce-weight/--dice-weight require --oracle-select".into()));
            }
            None
        };
        Ok(EvalConfig {
            dump: required(&self.dump, "dump")?,
            gt: required(&self.gt, "gt")?,
            taxonomy: required(&self.taxonomy, "taxonomy")?,
            train_taxonomy: self.train_taxonomy.clone(),
            format: output_format(self.format, &self.out),
            out: self.out.clone(),
            audit: self.audit.clone(),
            inference: InferenceParams { fusion, ensemble },
            oracle_cls: self.oracle_cls.unwrap_or(false),
            selection,
            void_overlap: unit_interval("void-overlap", self.void_overlap.unwrap_or(0.5))?,
        })
    }
}

impl EvalConfig {
    /// Configuration recorded in the report. Output paths and the worker
    /// count are left out: they do not affect results.
    pub fn snapshot(&self, command: &str) -> Value {
        let f = &self.inference.fusion;
        json!({
            "command": command,
            "dump": self.dump.display().to_string(),
            "gt": self.gt.display().to_string(),
            "taxonomy": self.taxonomy.display().to_string(),
            "train_taxonomy": self.train_taxonomy.as_ref().map(|p| p.display().to_string()),
            "format": format_name(self.format),
            "fusion": {
                "object_score_threshold": f.object_score_threshold,
                "overlap_keep_ratio": f.overlap_keep_ratio,
                "sigma_threshold": f.sigma_threshold,
                "merge_stuff": f.merge_stuff,
            },
            "ensemble": self.inference.ensemble.map(|e| json!({"alpha": e.alpha, "beta": e.beta})),
            "oracle_cls": self.oracle_cls,
            "oracle_select": self.selection.map(|s| json!({
                "bce_weight": s.cost.bce_weight,
                "dice_weight": s.cost.dice_weight,
                "prob_clamp": s.cost.prob_clamp,
                "no_object_policy": NoObjectPolicy::to_string(&s.policy),
                "oracle_seg_on_selection": s.segmentation_oracle,
                "oracle_cls_on_selection": s.classification_oracle,
            })),
            "void_overlap": self.void_overlap,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ZeroshotConfig {
    pub dump: PathBuf,
    pub gt: PathBuf,
    pub taxonomy: PathBuf,
    pub train_taxonomy: Option<PathBuf>,
    pub texts: PathBuf,
    pub tau: f64,
    pub out: Option<PathBuf>,
    pub format: ReportFormat,
    pub void_overlap: f64,
}

impl ZeroshotSettings {
    pub fn resolve(&self) -> Result<ZeroshotConfig, CliError> {
        let tau = self.tau.unwrap_or(DEFAULT_TAU);
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(CliError::Config(format!("--tau must be positive, got {tau}")));
        }
        Ok(ZeroshotConfig {
            dump: required(&self.dump, "dump")?,
            gt: required(&self.gt, "gt")?,
            taxonomy: required(&self.taxonomy, "taxonomy")?,
            train_taxonomy: self.train_taxonomy.clone(),
            texts: required(&self.texts, "texts")?,
            tau,
            format: output_format(self.format, &self.out),
            out: self.out.clone(),
            void_overlap: unit_interval("void-overlap", self.void_overlap.unwrap_or(0.5))?,
        })
    }
}

impl ZeroshotConfig {
    pub fn snapshot(&self) -> Value {
        json!({
            "command": "zeroshot",
            "dump": self.dump.display().to_string(),
            "gt": self.gt.display().to_string(),
            "taxonomy": self.taxonomy.display().to_string(),
            "train_taxonomy": self.train_taxonomy.as_ref().map(|p| p.display().to_string()),
            "texts": self.texts.display().to_string(),
            "tau": self.tau,
            "format": format_name(self.format),
            "void_overlap": self.void_overlap,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DiffConfig {
    pub open: PathBuf,
    pub reference: PathBuf,
    pub recall_threshold: f64,
    pub out: Option<PathBuf>,
    pub format: ReportFormat,
}

impl DiffSettings {
    pub fn resolve(&self) -> Result<DiffConfig, CliError> {
        Ok(DiffConfig {
            open: required(&self.open, "open")?,
            reference: required(&self.reference, "reference")?,
            recall_threshold: unit_interval("recall-threshold", self.recall_threshold.unwrap_or(0.1))?,
            format: match (self.format, &self.out) {
                (Some(f), _) => f.into(),
                (None, Some(p)) => ReportFormat::from_path(p),
                (None, None) => ReportFormat::Csv,
            },
            out: self.out.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub out: PathBuf,
    pub images: usize,
    pub scene: SceneSpec,
    pub features: bool,
    pub feature_dim: u32,
}

impl SynthSettings {
    pub fn resolve(&self) -> Result<SynthConfig, CliError> {
        let d = SceneSpec::default();
        let scene = SceneSpec {
            width: self.width.unwrap_or(d.width),
            height: self.height.unwrap_or(d.height),
            min_segments: self.min_segments.unwrap_or(d.min_segments),
            max_segments: self.max_segments.unwrap_or(d.max_segments),
            num_classes: self.classes.unwrap_or(d.num_classes),
            erosion_radius: self.erosion.unwrap_or(d.erosion_radius),
            dilation_radius: self.dilation.unwrap_or(d.dilation_radius),
            class_flip: self.class_flip.unwrap_or(d.class_flip),
            no_object_flip: self.no_object_flip.unwrap_or(d.no_object_flip),
            spurious: self.spurious.unwrap_or(d.spurious),
            sigma_jitter: self.sigma_jitter.unwrap_or(d.sigma_jitter),
            void_probability: self.void_probability.unwrap_or(d.void_probability),
            with_clip: self.clip.unwrap_or(false),
            seed: self.seed.unwrap_or(0),
        };
        scene.validate()?;
        let num_classes = scene.num_classes as u32;
        let feature_dim = self.feature_dim.unwrap_or(num_classes.max(8));
        if feature_dim < num_classes {
            return Err(CliError::Config(format!(
                "--feature-dim {feature_dim} is smaller than the class count {num_classes}"
            )));
        }
        Ok(SynthConfig {
            out: required(&self.out, "out")?,
            images: self.images.unwrap_or(8),
            scene,
            features: self.features.unwrap_or(false),
            feature_dim,
        })
    }
}
