use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::geometry::{PointSet, Point3};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    /// Horizontal square of side 2.
    Plane,
    /// Sphere surface of radius 0.6.
    Sphere,
    /// Surface of an axis-aligned cube of side 1.2.
    Box,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Class `c` is one primitive centred at height `c · spacing`.
    Stacked,
    /// Every class is a primitive kind with `instances` copies placed at
    /// random, randomly scaled, on a jittered ground grid. Location says
    /// nothing about the class; local shape does.
    Scattered,
}

/// Recipe for a labelled synthetic cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub num_classes: usize,
    /// Exact number of points carrying each label.
    pub points_per_class: Vec<usize>,
    /// Standard deviation of the Gaussian jitter added to every coordinate.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_layout")]
    pub layout: Layout,
    /// Primitive for class `c` is `primitives[c % len]`.
    #[serde(default = "default_primitives")]
    pub primitives: Vec<PrimitiveKind>,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default = "default_instances")]
    pub instances: usize,
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

fn default_instances() -> usize {
    1
}

impl SceneSpec {
    /// Stacked scene with the points split as evenly as possible.
    pub fn stacked(num_classes: usize, total_points: usize, noise: f64, seed: u64) -> Self {
        let base = total_points / num_classes.max(1);
        let extra = total_points % num_classes.max(1);
        SceneSpec {
            num_classes,
            points_per_class: (0..num_classes).map(|c| base + usize::from(c < extra)).collect(),
            noise,
            seed,
            layout: Layout::Stacked,
            primitives: default_primitives(),
            spacing: default_spacing(),
            instances: 1,
        }
    }

    pub fn total_points(&self) -> usize {
        self.points_per_class.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            bail!(InvalidArgument, "data.num_classes must be ≥ 2, got {}", self.num_classes);
        }
        if self.points_per_class.len() != self.num_classes {
            bail!(
                InvalidArgument,
                "data.points_per_class has {} entries for {} classes",
                self.points_per_class.len(),
                self.num_classes
            );
        }
        if self.total_points() < 2 {
            bail!(InvalidArgument, "data.points_per_class: a scene needs at least 2 points");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            bail!(InvalidArgument, "data.noise must be finite and ≥ 0, got {}", self.noise);
        }
        if self.primitives.is_empty() {
            bail!(InvalidArgument, "data.primitives must not be empty");
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            bail!(InvalidArgument, "data.spacing must be positive, got {}", self.spacing);
        }
        if self.instances == 0 {
            bail!(InvalidArgument, "data.instances must be ≥ 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub cloud: PointSet,
    pub spec: SceneSpec,
}

impl SyntheticScene {
    pub fn labels(&self) -> &[usize] {
        self.cloud.labels().expect("synthetic scenes are labelled")
    }
}

fn sample_surface(kind: PrimitiveKind, rng: &mut rng::Rng) -> Point3 {
    match kind {
        PrimitiveKind::Plane => [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0],
        PrimitiveKind::Sphere => {
            let [x, y, z]: [f64; 3] = UnitSphere.sample(rng);
            [0.6 * x, 0.6 * y, 0.6 * z]
        }
        PrimitiveKind::Box => {
            let face = rng.random_range(0..6usize);
            let axis = face / 2;
            let sign = if face % 2 == 0 { -0.6 } else { 0.6 };
            let mut p = [0.0; 3];
            for (a, c) in p.iter_mut().enumerate() {
                *c = if a == axis { sign } else { rng.random_range(-0.6..0.6) };
            }
            p
        }
    }
}

/// Generate a labelled cloud. Deterministic in `spec`.
pub fn gen_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = rng::derive(spec.seed, 0x5CE7E);
    let jitter = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut points: Vec<(Point3, usize)> = Vec::with_capacity(spec.total_points());

    // ground slots for scattered instances
    let total_instances = spec.num_classes * spec.instances;
    let side = (total_instances as f64).sqrt().ceil() as usize;
    let mut slots: Vec<usize> = (0..side * side).collect();
    slots.shuffle(&mut rng);

    for (c, &count) in spec.points_per_class.iter().enumerate() {
        let kind = spec.primitives[c % spec.primitives.len()];
        let mut placements: Vec<(Point3, f64)> = Vec::new();
        match spec.layout {
            Layout::Stacked => placements.push(([0.0, 0.0, c as f64 * spec.spacing], 1.0)),
            Layout::Scattered => {
                for inst in 0..spec.instances {
                    let slot = slots[c * spec.instances + inst];
                    let (gx, gy) = ((slot % side) as f64, (slot / side) as f64);
                    let centre = [
                        (gx + rng.random_range(-0.15..0.15)) * spec.spacing,
                        (gy + rng.random_range(-0.15..0.15)) * spec.spacing,
                        rng.random_range(-0.3..0.3),
                    ];
                    placements.push((centre, rng.random_range(0.7..1.3)));
                }
            }
        }
        for i in 0..count {
            let (centre, scale) = placements[i % placements.len()];
            let s = sample_surface(kind, &mut rng);
            let mut p = [0.0; 3];
            for a in 0..3 {
                p[a] = centre[a] + scale * s[a];
                if spec.noise > 0.0 {
                    p[a] += jitter.sample(&mut rng);
                }
            }
            points.push((p, c));
        }
    }
    points.shuffle(&mut rng);
    let (positions, labels): (Vec<Point3>, Vec<usize>) = points.into_iter().unzip();
    let cloud = PointSet::new(positions)?.with_labels(labels)?;
    Ok(SyntheticScene { cloud, spec: spec.clone() })
}
