//! Residual point transformer blocks, transitions and the two end-to-end
//! backbones: a U-shaped segmentation network and an encoder with global
//! pooling for classification.

mod block;
mod transition;

pub use block::TransformerBlock;
pub use transition::{Downsampled, TransitionDown, TransitionUp, INTERP_NEIGHBORS};

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::AttentionVariant;
use crate::error::{bail, Error, Result};
use crate::geometry::{knn_self, PointSet, Point3, DEFAULT_K};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::ops::{global_avg_pool, global_avg_pool_backward};
use crate::nn::{visit_child, Mlp, Mode, Param, Parameterized, ValueGrid};
use crate::rng;

/// Default stage widths.
pub const DEFAULT_WIDTHS: [usize; 5] = [32, 64, 128, 256, 512];
/// Small widths for desk-scale experiments and tests.
pub const DESK_WIDTHS: [usize; 5] = [8, 16, 32, 64, 128];
pub const DEFAULT_RATES: [usize; 5] = [1, 4, 4, 4, 4];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Segmentation,
    Classification,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub width: usize,
    pub blocks: usize,
    pub downsample: usize,
}

/// Complete architecture description; also stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// 3 coordinate channels plus the per-point feature width.
    pub in_channels: usize,
    pub stages: Vec<StageConfig>,
    pub k: usize,
    pub attention: AttentionVariant,
    pub task: Task,
    pub num_classes: usize,
    /// Inner width divisor of the transformer blocks.
    pub bottleneck: usize,
    /// Start every block as the identity by zeroing its output projection.
    pub zero_init_blocks: bool,
    pub init_seed: u64,
}

impl BackboneConfig {
    /// Stages with the given widths, one block each, rates `[1, 4, 4, ...]`.
    pub fn with_widths(widths: &[usize], task: Task, num_classes: usize) -> Self {
        let stages = widths
            .iter()
            .enumerate()
            .map(|(s, &width)| StageConfig { width, blocks: 1, downsample: if s == 0 { 1 } else { 4 } })
            .collect();
        BackboneConfig {
            in_channels: 3,
            stages,
            k: DEFAULT_K,
            attention: AttentionVariant::default(),
            task,
            num_classes,
            bottleneck: 1,
            zero_init_blocks: false,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            bail!(InvalidArgument, "model.stages: at least one stage is required");
        }
        for (s, st) in self.stages.iter().enumerate() {
            if st.width == 0 {
                bail!(InvalidArgument, "model.stages[{s}].width must be ≥ 1");
            }
            if st.downsample != 1 && st.downsample != 4 {
                bail!(InvalidArgument, "model.stages[{s}].downsample must be 1 or 4, got {}", st.downsample);
            }
        }
        if self.stages[0].downsample != 1 {
            bail!(InvalidArgument, "model.stages[0].downsample must be 1");
        }
        if self.k == 0 {
            bail!(InvalidArgument, "model.k must be ≥ 1");
        }
        if self.num_classes < 2 {
            bail!(InvalidArgument, "model.num_classes must be ≥ 2, got {}", self.num_classes);
        }
        if self.in_channels < 3 {
            bail!(InvalidArgument, "model.in_channels must be ≥ 3 (coordinates are always inputs)");
        }
        if self.bottleneck == 0 {
            bail!(InvalidArgument, "model.bottleneck must be ≥ 1");
        }
        Ok(())
    }

    /// Points kept by each stage for an input of `n` points.
    pub fn cardinalities(&self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.stages.len());
        let mut cur = n;
        for st in &self.stages {
            cur = cur.div_ceil(st.downsample);
            out.push(cur);
        }
        out
    }

    /// Smallest accepted input size. Segmentation training additionally
    /// needs two points in the coarsest stage, whose features are
    /// normalised before upsampling.
    pub fn min_points(&self, mode: Mode) -> usize {
        let product: usize = self.stages.iter().map(|s| s.downsample).product();
        if self.task == Task::Segmentation && mode == Mode::Train && self.stages.len() > 1 {
            product + 1
        } else {
            product.max(2)
        }
    }
}

#[derive(Debug)]
struct EncoderStage {
    down: TransitionDown,
    blocks: Vec<TransformerBlock>,
}

#[derive(Debug)]
struct DecoderStage {
    up: TransitionUp,
    blocks: Vec<TransformerBlock>,
}

#[derive(Debug)]
struct Decoder {
    /// Blocks at the coarsest resolution.
    top: Vec<TransformerBlock>,
    /// `stages[s]` lifts stage `s + 1` onto stage `s`.
    stages: Vec<DecoderStage>,
}

#[derive(Debug)]
struct NetCache {
    stage_sizes: Vec<usize>,
}

/// Segmentation or classification network built from a [`BackboneConfig`].
#[derive(Debug)]
pub struct PointTransformerNet {
    config: BackboneConfig,
    encoder: Vec<EncoderStage>,
    decoder: Option<Decoder>,
    head: Mlp,
    cache: Option<NetCache>,
}

fn make_blocks(
    count: usize,
    width: usize,
    cfg: &BackboneConfig,
    rng: &mut rng::Rng,
) -> Result<Vec<TransformerBlock>> {
    (0..count)
        .map(|_| {
            let mut b = TransformerBlock::new(width, cfg.k, cfg.bottleneck, cfg.attention, rng)?;
            if cfg.zero_init_blocks {
                b.zero_output();
            }
            Ok(b)
        })
        .collect()
}

fn run_blocks(blocks: &mut [TransformerBlock], mut x: ValueGrid, p: &[Point3], k: usize) -> Result<ValueGrid> {
    if blocks.is_empty() {
        return Ok(x);
    }
    let nbrs = knn_self(p, k.min(p.len()))?;
    for b in blocks {
        x = b.forward(&x, p, &nbrs)?;
    }
    Ok(x)
}

fn back_blocks(blocks: &mut [TransformerBlock], mut d: ValueGrid) -> Result<ValueGrid> {
    for b in blocks.iter_mut().rev() {
        d = b.backward(&d)?;
    }
    Ok(d)
}

impl PointTransformerNet {
    pub fn new(config: BackboneConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::seeded(config.init_seed);
        let mut encoder = Vec::with_capacity(config.stages.len());
        let mut prev = config.in_channels;
        for st in &config.stages {
            let down = TransitionDown::new(prev, st.width, st.downsample, config.k, &mut rng);
            let blocks = make_blocks(st.blocks, st.width, &config, &mut rng)?;
            encoder.push(EncoderStage { down, blocks });
            prev = st.width;
        }
        let last = config.stages.last().expect("validated").width;
        let decoder = match config.task {
            Task::Classification => None,
            Task::Segmentation => {
                let top = make_blocks(config.stages.last().expect("validated").blocks, last, &config, &mut rng)?;
                let mut stages = Vec::new();
                for s in 0..config.stages.len() - 1 {
                    let fine = config.stages[s];
                    let up = TransitionUp::new(config.stages[s + 1].width, fine.width, &mut rng);
                    let blocks = make_blocks(fine.blocks, fine.width, &config, &mut rng)?;
                    stages.push(DecoderStage { up, blocks });
                }
                Some(Decoder { top, stages })
            }
        };
        let head_width = match config.task {
            Task::Segmentation => config.stages[0].width,
            Task::Classification => last,
        };
        let head = Mlp::new(head_width, head_width, config.num_classes, &mut rng);
        Ok(PointTransformerNet { config, encoder, decoder, head, cache: None })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    /// Points per stage in the last forward pass.
    pub fn last_stage_sizes(&self) -> Option<&[usize]> {
        self.cache.as_ref().map(|c| c.stage_sizes.as_slice())
    }

    fn input_features(&self, cloud: &PointSet) -> Result<ValueGrid> {
        let want = self.config.in_channels;
        let have = 3 + cloud.feature_dim();
        if want != have {
            bail!(InvalidArgument, "network expects {want} input channels, cloud provides {have}");
        }
        let coords: Vec<f64> = cloud.positions().iter().flatten().copied().collect();
        let coords = ValueGrid::from_vec(&[cloud.len(), 3], coords)?;
        match cloud.features() {
            Some(f) => coords.concat_cols(f),
            None => Ok(coords),
        }
    }

    /// Logits: `n × classes` for segmentation (input order), `1 × classes`
    /// for classification. `fps_start` seeds farthest point sampling in the
    /// input cloud; deeper stages start from their first sampled point.
    pub fn forward(&mut self, cloud: &PointSet, fps_start: usize, mode: Mode) -> Result<ValueGrid> {
        let n = cloud.len();
        let min = self.config.min_points(mode);
        if n < min {
            bail!(
                InvalidArgument,
                "{n} points is too few for {} stages; at least {min} are required",
                self.config.stages.len()
            );
        }
        if fps_start >= n {
            bail!(InvalidArgument, "fps start index {fps_start} out of range for {n} points");
        }
        let mut x = self.input_features(cloud)?;
        let mut pos: Vec<Point3> = cloud.positions().to_vec();
        let mut start = fps_start;
        let k = self.config.k;

        let mut skips: Vec<(ValueGrid, Vec<Point3>)> = Vec::with_capacity(self.encoder.len());
        let mut stage_sizes = Vec::with_capacity(self.encoder.len());
        for stage in &mut self.encoder {
            let down = stage.down.forward(&x, &pos, start, mode)?;
            if stage.down.rate > 1 {
                // sampled sets list the start point first
                start = 0;
            }
            pos = down.positions;
            x = run_blocks(&mut stage.blocks, down.features, &pos, k)?;
            stage_sizes.push(pos.len());
            skips.push((x.clone(), pos.clone()));
        }

        let logits = match self.decoder.as_mut() {
            None => self.head.forward(&global_avg_pool(&x))?,
            Some(dec) => {
                let (mut x, mut coarse_pos) = skips.pop().expect("at least one stage");
                x = run_blocks(&mut dec.top, x, &coarse_pos, k)?;
                for s in (0..dec.stages.len()).rev() {
                    let (skip, fine_pos) = &skips[s];
                    let st = &mut dec.stages[s];
                    let up = st.up.forward(&x, &coarse_pos, skip, fine_pos, mode)?;
                    x = run_blocks(&mut st.blocks, up, fine_pos, k)?;
                    coarse_pos = fine_pos.clone();
                }
                self.head.forward(&x)?
            }
        };
        self.cache = Some(NetCache { stage_sizes });
        Ok(logits)
    }

    /// Backpropagate logit gradients; returns the gradient with respect to
    /// the input channels (coordinates first, then features).
    pub fn backward(&mut self, dlogits: &ValueGrid) -> Result<ValueGrid> {
        let NetCache { stage_sizes } = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidState("network backward without forward".into()))?;
        let stages = self.encoder.len();
        let mut dskip: Vec<Option<ValueGrid>> = vec![None; stages];

        let dhead = self.head.backward(dlogits)?;
        match self.decoder.as_mut() {
            None => {
                dskip[stages - 1] = Some(global_avg_pool_backward(&dhead, stage_sizes[stages - 1]));
            }
            Some(dec) => {
                let mut d = dhead;
                for s in 0..dec.stages.len() {
                    let st = &mut dec.stages[s];
                    d = back_blocks(&mut st.blocks, d)?;
                    let (dcoarse, dfine) = st.up.backward(&d)?;
                    dskip[s] = Some(dfine);
                    d = dcoarse;
                }
                dskip[stages - 1] = Some(back_blocks(&mut dec.top, d)?);
            }
        }

        let mut carry: Option<ValueGrid> = None;
        for s in (0..stages).rev() {
            // classification reads only the last stage; earlier stages
            // receive gradient through the encoder chain alone
            let mut d = match (dskip[s].take(), carry.take()) {
                (Some(mut d), Some(c)) => {
                    d.add_assign(&c);
                    d
                }
                (Some(d), None) | (None, Some(d)) => d,
                (None, None) => bail!(InvalidState, "stage {s} received no gradient"),
            };
            let stage = &mut self.encoder[s];
            d = back_blocks(&mut stage.blocks, d)?;
            carry = Some(stage.down.backward(&d)?);
        }
        Ok(carry.expect("at least one stage"))
    }

    pub fn architecture(&self) -> String {
        serde_json::to_string(&self.config).expect("config serialises")
    }

    pub fn save_checkpoint(&mut self, path: &Path) -> Result<()> {
        let arch = self.architecture();
        let ck = Checkpoint::capture(&arch, self)?;
        ck.write(BufWriter::new(File::create(path)?))
    }

    /// Rebuild a network from the architecture stored in a checkpoint and
    /// load its parameters.
    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let ck = Checkpoint::read(BufReader::new(File::open(path)?))?;
        let config: BackboneConfig = serde_json::from_str(&ck.arch)
            .map_err(|e| Error::Checkpoint(format!("bad architecture header: {e}")))?;
        let mut net = PointTransformerNet::new(config)?;
        ck.restore_into(&mut net)?;
        Ok(net)
    }

    /// Load parameters into this network, requiring an identical
    /// architecture.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        let config: BackboneConfig = serde_json::from_str(&ck.arch)
            .map_err(|e| Error::Checkpoint(format!("bad architecture header: {e}")))?;
        if config != self.config {
            bail!(Checkpoint, "checkpoint architecture does not match this network");
        }
        ck.restore_into(self)
    }
}

impl Parameterized for PointTransformerNet {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        for (s, stage) in self.encoder.iter_mut().enumerate() {
            visit_child(&mut stage.down, &format!("enc.{s}.down"), f);
            for (b, block) in stage.blocks.iter_mut().enumerate() {
                visit_child(block, &format!("enc.{s}.block.{b}"), f);
            }
        }
        if let Some(dec) = self.decoder.as_mut() {
            for (b, block) in dec.top.iter_mut().enumerate() {
                visit_child(block, &format!("dec.top.block.{b}"), f);
            }
            for (s, st) in dec.stages.iter_mut().enumerate() {
                visit_child(&mut st.up, &format!("dec.{s}.up"), f);
                for (b, block) in st.blocks.iter_mut().enumerate() {
                    visit_child(block, &format!("dec.{s}.block.{b}"), f);
                }
            }
        }
        visit_child(&mut self.head, "head", f);
    }
}
