//! Run configuration: one TOML file fully determines a run.
//!
//! ```toml
//! seed = 0
//! iterations = 2000
//!
//! [model]
//! task = "segmentation"
//! widths = [8, 16, 32, 64, 128]
//! k = 16
//!
//! [attention]
//! operator = "vector"
//! pos_mode = "relative"
//!
//! [optimizer]
//! learning_rate = 0.1
//!
//! [data]
//! num_classes = 3
//! points_per_class = [171, 171, 170]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionVariant, Normalize, Operator, PosMode};
use crate::error::{Error, Result};
use crate::harness::scene::{gen_scene, Layout, PrimitiveKind, SceneSpec, SyntheticScene};
use crate::network::{BackboneConfig, StageConfig, Task, DESK_WIDTHS};
use crate::nn::SgdConfig;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_task")]
    pub task: Task,
    #[serde(default = "default_widths")]
    pub widths: Vec<usize>,
    /// Blocks per stage; defaults to one everywhere.
    #[serde(default)]
    pub blocks: Option<Vec<usize>>,
    /// Downsampling rate per stage; defaults to `[1, 4, 4, ...]`.
    #[serde(default)]
    pub rates: Option<Vec<usize>>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "one")]
    pub bottleneck: usize,
    #[serde(default)]
    pub zero_init_blocks: bool,
    #[serde(default)]
    pub fps_start: usize,
}

fn default_task() -> Task {
    Task::Segmentation
}
fn default_widths() -> Vec<usize> {
    DESK_WIDTHS.to_vec()
}
fn default_k() -> usize {
    crate::geometry::DEFAULT_K
}
fn one() -> usize {
    1
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            task: default_task(),
            widths: default_widths(),
            blocks: None,
            rates: None,
            k: default_k(),
            bottleneck: 1,
            zero_init_blocks: false,
            fps_start: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Fractions of `iterations` at which the rate is multiplied by `drop_factor`.
    #[serde(default = "default_drops")]
    pub drops: Vec<f64>,
    #[serde(default = "default_drop_factor")]
    pub drop_factor: f64,
}

fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    1e-4
}
fn default_drops() -> Vec<f64> {
    vec![0.6, 0.8]
}
fn default_drop_factor() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub num_classes: usize,
    pub points_per_class: Vec<usize>,
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "default_layout")]
    pub layout: Layout,
    #[serde(default = "default_primitives")]
    pub primitives: Vec<PrimitiveKind>,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default = "one")]
    pub instances: usize,
    /// Training scenes, visited round-robin.
    #[serde(default = "one")]
    pub scenes: usize,
    /// Held-out scenes for `evaluate`; zero means score the training scenes.
    #[serde(default)]
    pub eval_scenes: usize,
    /// Defaults to the run seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_layout() -> Layout {
    Layout::Stacked
}
fn default_primitives() -> Vec<PrimitiveKind> {
    vec![PrimitiveKind::Plane, PrimitiveKind::Sphere, PrimitiveKind::Box]
}
fn default_spacing() -> f64 {
    2.0
}

/// Sweeps run by `ablate`; each non-empty list varies one factor of the
/// base configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    #[serde(default)]
    pub operators: Vec<Operator>,
    #[serde(default)]
    pub pos_modes: Vec<PosMode>,
    #[serde(default)]
    pub normalize: Vec<Normalize>,
    #[serde(default)]
    pub ks: Vec<usize>,
    /// Every row is averaged over these seeds; empty means the run seed.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub iterations: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub attention: AttentionVariant,
    pub optimizer: OptimizerSection,
    pub data: DataSection,
    #[serde(default)]
    pub ablate: AblateSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// The desk preset: 512 points, 3 stacked classes, widths
    /// `[8, 16, 32, 64, 128]`, 2000 iterations.
    pub fn desk() -> Self {
        RunConfig {
            seed: 0,
            iterations: 2000,
            output_dir: None,
            model: ModelSection::default(),
            attention: AttentionVariant::default(),
            optimizer: OptimizerSection {
                learning_rate: 0.1,
                momentum: default_momentum(),
                weight_decay: default_weight_decay(),
                drops: default_drops(),
                drop_factor: default_drop_factor(),
            },
            data: DataSection {
                num_classes: 3,
                points_per_class: vec![171, 171, 170],
                noise: 0.02,
                layout: Layout::Stacked,
                primitives: default_primitives(),
                spacing: default_spacing(),
                instances: 1,
                scenes: 1,
                eval_scenes: 0,
                seed: None,
            },
            ablate: AblateSection::default(),
        }
    }

    /// Shape-recognition task for attention ablations: three primitive
    /// kinds, three randomly placed and scaled instances each, scored on
    /// held-out scenes. Location carries no label information.
    pub fn shape_ablation() -> Self {
        let mut cfg = Self::desk();
        cfg.iterations = 300;
        cfg.data.layout = Layout::Scattered;
        cfg.data.instances = 3;
        cfg.data.scenes = 4;
        cfg.data.eval_scenes = 4;
        cfg.ablate = AblateSection {
            operators: vec![Operator::Mlp, Operator::Vector],
            seeds: vec![0, 1, 2, 3, 4],
            ..AblateSection::default()
        };
        cfg
    }

    /// Field-level validation of everything a run touches.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |msg: String| Err(Error::Config(msg));
        if self.iterations == 0 {
            return cfg_err("iterations must be ≥ 1".into());
        }
        let m = &self.model;
        if m.widths.is_empty() {
            return cfg_err("model.widths must not be empty".into());
        }
        for (name, list) in [("model.blocks", &m.blocks), ("model.rates", &m.rates)] {
            if let Some(l) = list {
                if l.len() != m.widths.len() {
                    return cfg_err(format!("{name} has {} entries but model.widths has {}", l.len(), m.widths.len()));
                }
            }
        }
        let backbone = self.backbone();
        backbone.validate().map_err(|e| Error::Config(strip_kind(e)))?;
        self.sgd().validate().map_err(|e| Error::Config(format!("optimizer: {}", strip_kind(e))))?;
        if self.optimizer.drops.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return cfg_err("optimizer.drops entries must lie in [0, 1]".into());
        }
        if self.data.scenes == 0 {
            return cfg_err("data.scenes must be ≥ 1".into());
        }
        self.scene_spec(0).validate().map_err(|e| Error::Config(strip_kind(e)))?;
        if m.task == Task::Segmentation {
            if let Some((c, &n)) = self.data.points_per_class.iter().enumerate().find(|(_, &n)| n > 0 && n < m.k) {
                return cfg_err(format!("data.points_per_class[{c}] = {n} is below model.k = {}", m.k));
            }
        }
        let n = self.scene_points();
        let need = backbone.min_points(crate::nn::Mode::Train);
        if n < need {
            return cfg_err(format!("data: scenes have {n} points but the model needs at least {need}"));
        }
        if m.fps_start >= n {
            return cfg_err(format!("model.fps_start = {} must be below the scene size {n}", m.fps_start));
        }
        if self.ablate.ks.contains(&0) {
            return cfg_err("ablate.ks entries must be ≥ 1".into());
        }
        Ok(())
    }

    /// Points in every generated scene.
    pub fn scene_points(&self) -> usize {
        match self.model.task {
            Task::Segmentation => self.data.points_per_class.iter().sum(),
            // one object per scene, sized like the largest class
            Task::Classification => self.data.points_per_class.iter().copied().max().unwrap_or(0),
        }
    }

    pub fn backbone(&self) -> BackboneConfig {
        let m = &self.model;
        let stages = m
            .widths
            .iter()
            .enumerate()
            .map(|(s, &width)| StageConfig {
                width,
                blocks: m.blocks.as_ref().map_or(1, |b| b[s]),
                downsample: m.rates.as_ref().map_or(if s == 0 { 1 } else { 4 }, |r| r[s]),
            })
            .collect();
        BackboneConfig {
            in_channels: 3,
            stages,
            k: m.k,
            attention: self.attention,
            task: m.task,
            num_classes: self.data.num_classes,
            bottleneck: m.bottleneck,
            zero_init_blocks: m.zero_init_blocks,
            init_seed: self.seed,
        }
    }

    pub fn sgd(&self) -> SgdConfig {
        let o = &self.optimizer;
        SgdConfig {
            learning_rate: o.learning_rate,
            momentum: o.momentum,
            weight_decay: o.weight_decay,
            schedule: o
                .drops
                .iter()
                .map(|f| (((self.iterations as f64) * f).round() as usize, o.drop_factor))
                .collect(),
        }
    }

    fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.seed)
    }

    /// Spec of scene `index`; evaluation scenes use indices past the
    /// training ones.
    pub fn scene_spec(&self, index: usize) -> SceneSpec {
        let d = &self.data;
        let mut counts = d.points_per_class.clone();
        if self.model.task == Task::Classification {
            // one labelled object per scene, cycling through the classes
            let n = counts.iter().copied().max().unwrap_or(0);
            counts = vec![0; d.num_classes];
            counts[index % d.num_classes] = n;
        }
        SceneSpec {
            num_classes: d.num_classes,
            points_per_class: counts,
            noise: d.noise,
            seed: rng::mix(self.data_seed(), index as u64),
            layout: d.layout,
            primitives: d.primitives.clone(),
            spacing: d.spacing,
            instances: d.instances,
        }
    }

    pub fn train_scenes(&self) -> Result<Vec<SyntheticScene>> {
        (0..self.data.scenes).map(|i| gen_scene(&self.scene_spec(i))).collect()
    }

    /// Held-out scenes, or the training scenes when none are configured.
    pub fn eval_scenes(&self) -> Result<Vec<SyntheticScene>> {
        if self.data.eval_scenes == 0 {
            return self.train_scenes();
        }
        let start = self.data.scenes;
        (start..start + self.data.eval_scenes).map(|i| gen_scene(&self.scene_spec(i))).collect()
    }
}

fn strip_kind(e: Error) -> String {
    match e {
        Error::InvalidArgument(m) | Error::InvalidInput(m) | Error::InvalidState(m) | Error::Config(m) => m,
        other => other.to_string(),
    }
}
