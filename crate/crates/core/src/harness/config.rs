use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::genmodel::{ContextKind, GenerativeConfig, ProjectionKind, Representation};
use crate::inference::InferenceConfig;
use crate::nn::AdamConfig;

use super::baseline::BaselineConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Toy,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Self::Toy),
            "paper" => Ok(Self::Paper),
            _ => Err(Error::Config(format!(
                "unknown profile `{s}` (expected toy or paper)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Primitives,
    Necker,
    /// Extruded digits from IDX files, or procedural glyphs when no paths
    /// are given.
    Digits {
        #[serde(default)]
        images: Option<PathBuf>,
        #[serde(default)]
        labels: Option<PathBuf>,
        /// Extrusion depth in voxels; `ceil(0.3·extent)` when absent.
        #[serde(default)]
        thickness: Option<usize>,
    },
    /// A directory of VOX1 files with a manifest.
    Vox {
        dir: PathBuf,
    },
}

impl DataSource {
    pub fn classes(&self) -> usize {
        match self {
            Self::Primitives => 6,
            Self::Digits { .. } => 10,
            Self::Necker | Self::Vox { .. } => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Full translation range per axis in voxels.
    pub translation: f64,
    /// Rotation range per axis in radians.
    pub rotation: f64,
    pub binarize: bool,
}

/// What the model is trained to reproduce.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Target {
    Volume,
    /// Axis-aligned projections of the volume seen by the given cameras.
    Views {
        cameras: Vec<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub source: DataSource,
    pub extent: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub augment: AugmentConfig,
    /// Number of axis-aligned context views (0 to 3).
    #[serde(default)]
    pub context_views: usize,
    #[serde(default)]
    pub class_context: bool,
    #[serde(default = "default_target")]
    pub target: Target,
}

fn default_target() -> Target {
    Target::Volume
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    pub dataset: DatasetConfig,
    pub model: GenerativeConfig,
    pub inference: InferenceConfig,
    pub optimizer: AdamConfig,
    pub grad_clip: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub log_every: usize,
    pub eval_every: usize,
    pub eval_importance: usize,
    pub eval_examples: usize,
    pub checkpoint_every: usize,
    #[serde(default)]
    pub baseline: BaselineConfig,
}

pub const VIEW_GLIMPSE: usize = 4;
pub const VIEW_CHANNELS: usize = 4;

impl RunConfig {
    pub fn toy() -> Self {
        let e = 8;
        let mut model = GenerativeConfig::volume([e; 3], [4, 4, 4], 4, 8, 64);
        model.context_dim = 16;
        Self {
            profile: Profile::Toy,
            dataset: DatasetConfig {
                source: DataSource::Primitives,
                extent: e,
                train_size: 1024,
                test_size: 64,
                augment: AugmentConfig {
                    translation: 2.0,
                    rotation: std::f64::consts::PI,
                    binarize: true,
                },
                context_views: 0,
                class_context: false,
                target: Target::Volume,
            },
            model,
            inference: InferenceConfig::for_volume([e; 3], [e; 3], 64),
            optimizer: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            grad_clip: 10.0,
            batch_size: 16,
            steps: 1500,
            seed: 0,
            log_every: 50,
            eval_every: 500,
            eval_importance: 20,
            eval_examples: 64,
            checkpoint_every: 500,
            baseline: BaselineConfig::default(),
        }
    }

    pub fn paper() -> Self {
        let e = 30;
        let mut model = GenerativeConfig::volume([e; 3], [10, 10, 10], 12, 10, 300);
        model.context_dim = 64;
        Self {
            profile: Profile::Paper,
            dataset: DatasetConfig {
                source: DataSource::Primitives,
                extent: e,
                train_size: 60_000,
                test_size: 1_000,
                augment: AugmentConfig {
                    translation: 20.0,
                    rotation: std::f64::consts::PI,
                    binarize: true,
                },
                context_views: 0,
                class_context: false,
                target: Target::Volume,
            },
            model,
            inference: InferenceConfig::for_volume([e; 3], [12, 12, 12], 256),
            optimizer: AdamConfig::default(),
            grad_clip: 10.0,
            batch_size: 32,
            steps: 200_000,
            seed: 0,
            log_every: 100,
            eval_every: 5_000,
            eval_importance: 100,
            eval_examples: 1_000,
            checkpoint_every: 5_000,
            baseline: BaselineConfig {
                steps: 50_000,
                batch_size: 32,
                optimizer: AdamConfig::default(),
                ..Default::default()
            },
        }
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Toy => Self::toy(),
            Profile::Paper => Self::paper(),
        }
    }

    /// Profile defaults overridden by a (possibly partial) JSON document.
    /// Model fields tied to the dataset are re-derived unless given.
    pub fn from_json(profile: Profile, text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        if !user.is_object() {
            return Err(Error::Config("config must be a JSON object".into()));
        }
        let profile = match user.get("profile") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| Error::Config(format!("profile: {e}")))?,
            None => profile,
        };
        let mut base = serde_json::to_value(Self::for_profile(profile))?;
        merge(&mut base, &user);
        let mut cfg: Self =
            serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        cfg.derive_except(&user);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(profile: Profile, path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::Config(format!(
                "cannot read config {}: {e}",
                path.as_ref().display()
            ))
        })?;
        Self::from_json(profile, &text)
    }

    /// Makes the model extents, context, projection and inference input
    /// agree with the dataset section.
    pub fn derive(&mut self) {
        self.derive_except(&Value::Null);
    }

    /// Like [`RunConfig::derive`], leaving fields present in `given` alone.
    pub fn derive_except(&mut self, given: &Value) {
        let free = |ptr: &str| given.pointer(ptr).is_none();
        let e = self.dataset.extent;
        if free("/model/representation") {
            if let Representation::Volume { extents, patch, .. } = &mut self.model.representation {
                *extents = [e; 3];
                for p in patch.iter_mut() {
                    *p = (*p).min(e);
                }
            }
        }
        if free("/model/context") {
            self.model.context = if self.dataset.context_views > 0 {
                ContextKind::Views {
                    cameras: 3,
                    count: self.dataset.context_views,
                    extent: [e, e],
                    glimpse: VIEW_GLIMPSE.min(e),
                    channels: VIEW_CHANNELS,
                }
            } else if self.dataset.class_context {
                ContextKind::ClassOnehot {
                    classes: self.dataset.source.classes(),
                }
            } else {
                ContextKind::None
            };
        }
        if free("/model/projection") {
            if let Target::Views { .. } = self.dataset.target {
                if !matches!(self.model.projection, ProjectionKind::Camera(_)) {
                    self.model.projection = ProjectionKind::Camera(Default::default());
                }
            }
        }
        if free("/inference/input_extent") && free("/inference/input_channels") {
            let (channels, extent) = match &self.dataset.target {
                Target::Volume => (1, vec![e; 3]),
                Target::Views { cameras } => (cameras.len(), vec![e; 2]),
            };
            let read = self
                .inference
                .read_extent
                .first()
                .copied()
                .unwrap_or(e)
                .min(e);
            self.inference.input_channels = channels;
            self.inference.read_extent = vec![read; extent.len()];
            self.inference.input_extent = extent;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.model.validate()?;
        self.inference.validate()?;
        let d = &self.dataset;
        if d.extent == 0 || d.train_size == 0 {
            return bad("dataset extent and train size must be positive".into());
        }
        if d.context_views > 3 {
            return bad(format!("at most 3 context views, got {}", d.context_views));
        }
        if d.class_context && d.context_views > 0 {
            return bad("class and view context are exclusive".into());
        }
        if d.class_context && d.source.classes() == 0 {
            return bad("class context needs a labelled dataset".into());
        }
        if let DataSource::Necker = d.source {
            if d.class_context {
                return bad("necker cubes carry no labels".into());
            }
        }
        let expected_context = match &self.model.context {
            ContextKind::None => d.context_views == 0 && !d.class_context,
            ContextKind::ClassOnehot { classes } => {
                d.class_context && *classes == d.source.classes()
            }
            ContextKind::Views {
                count,
                extent,
                cameras,
                ..
            } => *count == d.context_views && *extent == [d.extent, d.extent] && *cameras >= 3,
        };
        if !expected_context {
            return bad("model context does not match the dataset context".into());
        }
        match (
            &d.target,
            &self.model.projection,
            &self.model.representation,
        ) {
            (Target::Volume, ProjectionKind::Identity, Representation::Volume { extents, .. })
                if *extents == [d.extent; 3] => {}
            (
                Target::Views { cameras },
                ProjectionKind::Camera(cam),
                Representation::Volume { .. },
            ) => {
                if cameras.is_empty() || cameras.iter().any(|&c| c >= cam.cameras) {
                    return bad(format!(
                        "target cameras {cameras:?} out of range for {} cameras",
                        cam.cameras
                    ));
                }
            }
            _ => return bad("model representation and projection do not match the target".into()),
        }
        let (channels, extent) = match &d.target {
            Target::Volume => (1, vec![d.extent; 3]),
            Target::Views { cameras } => (cameras.len(), vec![d.extent; 2]),
        };
        if self.inference.input_channels != channels || self.inference.input_extent != extent {
            return bad("inference input does not match the target".into());
        }
        self.baseline.validate()?;
        if self.batch_size == 0 || self.steps == 0 {
            return bad("batch size and step budget must be at least 1".into());
        }
        if self.eval_importance == 0 || self.log_every == 0 {
            return bad("eval_importance and log_every must be at least 1".into());
        }
        if !(self.optimizer.lr >= 0.0) || !(self.grad_clip > 0.0) {
            return bad("learning rate must be nonnegative and grad_clip positive".into());
        }
        Ok(())
    }
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() && !is_tagged(slot, v) => {
                        merge(slot, v)
                    }
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

// a changed enum tag replaces the whole object instead of mixing fields
fn is_tagged(base: &Value, over: &Value) -> bool {
    matches!((base.get("kind"), over.get("kind")), (Some(a), Some(b)) if a != b)
}
