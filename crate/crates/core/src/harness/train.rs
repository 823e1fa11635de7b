use std::io::Write;

use serde::Serialize;

use super::loss::cross_entropy;
use super::metrics::{confusion_matrix, MetricsReport};
use super::scene::SyntheticScene;
use crate::attention::AttentionVariant;
use crate::config::RunConfig;
use crate::error::{bail, Error, Result};
use crate::network::{PointTransformerNet, Task};
use crate::nn::{Mode, Sgd, ValueGrid};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub lr: f64,
    pub loss: f64,
}

pub struct TrainOutcome {
    pub net: PointTransformerNet,
    pub curve: Vec<LossRecord>,
}

/// Per-scene targets: every point for segmentation, the majority label for
/// classification.
pub fn targets(task: Task, scene: &SyntheticScene) -> Vec<usize> {
    let labels = scene.labels();
    match task {
        Task::Segmentation => labels.to_vec(),
        Task::Classification => vec![majority(labels, scene.spec.num_classes)],
    }
}

fn majority(labels: &[usize], num_classes: usize) -> usize {
    let mut hist = vec![0usize; num_classes];
    for &l in labels {
        hist[l] += 1;
    }
    // first maximum wins
    hist.iter().enumerate().fold(0, |best, (c, &n)| if n > hist[best] { c } else { best })
}

fn argmax_rows(logits: &ValueGrid) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best })
        })
        .collect()
}

/// Train a freshly initialised network, one scene per step, visiting the
/// scenes round-robin. `on_step` sees every record as it is produced.
pub fn train_with(
    config: &RunConfig,
    scenes: &[SyntheticScene],
    mut on_step: impl FnMut(&LossRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if scenes.is_empty() {
        bail!(InvalidArgument, "no training scenes");
    }
    let mut net = PointTransformerNet::new(config.backbone())?;
    let mut opt = Sgd::new(config.sgd())?;
    let task = config.model.task;
    let mut curve = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let scene = &scenes[iteration % scenes.len()];
        let lr = opt.current_lr();
        let logits = net.forward(&scene.cloud, config.model.fps_start, Mode::Train)?;
        let (loss, dlogits) = cross_entropy(&logits, &targets(task, scene))?;
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration, loss });
        }
        net.backward(&dlogits)?;
        opt.step(&mut net)?;
        let rec = LossRecord { iteration, lr, loss };
        on_step(&rec);
        curve.push(rec);
    }
    Ok(TrainOutcome { net, curve })
}

pub fn train(config: &RunConfig, scenes: &[SyntheticScene]) -> Result<TrainOutcome> {
    train_with(config, scenes, |_| {})
}

/// Score `net` on `scenes` in evaluation mode.
pub fn evaluate(net: &mut PointTransformerNet, scenes: &[SyntheticScene], fps_start: usize) -> Result<MetricsReport> {
    if scenes.is_empty() {
        bail!(InvalidArgument, "no evaluation scenes");
    }
    let c = net.config().num_classes;
    let task = net.config().task;
    let mut confusion = vec![vec![0u64; c]; c];
    for scene in scenes {
        if scene.spec.num_classes != c {
            bail!(InvalidInput, "scene has {} classes, model predicts {c}", scene.spec.num_classes);
        }
        let logits = net.forward(&scene.cloud, fps_start.min(scene.cloud.len() - 1), Mode::Eval)?;
        let part = confusion_matrix(&targets(task, scene), &argmax_rows(&logits), c)?;
        for (row, prow) in confusion.iter_mut().zip(part) {
            for (a, b) in row.iter_mut().zip(prow) {
                *a += b;
            }
        }
    }
    MetricsReport::from_confusion(confusion)
}

pub fn write_loss_csv<W: Write>(mut w: W, curve: &[LossRecord]) -> Result<()> {
    writeln!(w, "iteration,lr,loss")?;
    for r in curve {
        writeln!(w, "{},{:e},{:.9}", r.iteration, r.lr, r.loss)?;
    }
    Ok(())
}

/// One row of an ablation table, averaged over seeds. Metrics are NaN when
/// any seed diverged.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    /// Which factor this row varies: `operator`, `pos_mode`, `normalize` or `k`.
    pub study: String,
    pub value: String,
    pub variant: AttentionVariant,
    pub k: usize,
    pub seeds: usize,
    pub final_loss: f64,
    pub oa: f64,
    pub macc: f64,
    pub miou: f64,
    pub note: String,
}

pub const ABLATION_HEADER: &str = "study,value,operator,pos_mode,normalize,k,seeds,final_loss,oa,macc,miou,note";

impl AblationRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{}",
            self.study,
            self.value,
            self.variant.operator.name(),
            self.variant.pos_mode.name(),
            self.variant.normalize.name(),
            self.k,
            self.seeds,
            self.final_loss,
            self.oa,
            self.macc,
            self.miou,
            self.note
        )
    }
}

/// Variations requested by the `[ablate]` section, as (study, value, config).
pub fn ablation_plan(base: &RunConfig) -> Vec<(String, String, RunConfig)> {
    let a = &base.ablate;
    let mut plan = Vec::new();
    let with = |f: &dyn Fn(&mut RunConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    for &op in &a.operators {
        plan.push(("operator".into(), op.name().into(), with(&|c| c.attention.operator = op)));
    }
    for &pm in &a.pos_modes {
        plan.push(("pos_mode".into(), pm.name().into(), with(&|c| c.attention.pos_mode = pm)));
    }
    for &nm in &a.normalize {
        plan.push(("normalize".into(), nm.name().into(), with(&|c| c.attention.normalize = nm)));
    }
    for &k in &a.ks {
        plan.push(("k".into(), k.to_string(), with(&|c| c.model.k = k)));
    }
    plan
}

/// Train and evaluate every planned variant. Divergence becomes a NaN row;
/// other errors abort.
pub fn ablate(base: &RunConfig, mut progress: impl FnMut(&AblationRow)) -> Result<Vec<AblationRow>> {
    base.validate()?;
    let seeds = if base.ablate.seeds.is_empty() { vec![base.seed] } else { base.ablate.seeds.clone() };
    let mut rows = Vec::new();
    for (study, value, cfg) in ablation_plan(base) {
        let mut sums = [0.0; 4];
        let mut note = String::new();
        for &seed in &seeds {
            let cfg = RunConfig { seed, ..cfg.clone() };
            cfg.validate()?;
            let train_scenes = cfg.train_scenes()?;
            match train(&cfg, &train_scenes) {
                Ok(mut out) => {
                    let m = evaluate(&mut out.net, &cfg.eval_scenes()?, cfg.model.fps_start)?;
                    let last = out.curve.last().map_or(f64::NAN, |r| r.loss);
                    for (s, v) in sums.iter_mut().zip([last, m.oa, m.macc, m.miou]) {
                        *s += v;
                    }
                }
                Err(Error::Diverged { iteration, .. }) => {
                    sums = [f64::NAN; 4];
                    note = format!("diverged at iteration {iteration} (seed {seed})");
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let n = seeds.len() as f64;
        let row = AblationRow {
            study,
            value,
            variant: cfg.attention,
            k: cfg.model.k,
            seeds: seeds.len(),
            final_loss: sums[0] / n,
            oa: sums[1] / n,
            macc: sums[2] / n,
            miou: sums[3] / n,
            note,
        };
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_ablation_csv<W: Write>(mut w: W, rows: &[AblationRow]) -> Result<()> {
    writeln!(w, "{ABLATION_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}
