//! Finite-difference checks over every layer type, every attention variant
//! and both end-to-end networks.
//!
//! Each layer is wrapped so that its scalar objective is `Σ y ⊙ R` for a
//! fixed random `R`; the analytic pass feeds `R` in as the output gradient.

use std::io::Write;

use rand::Rng as _;

use super::loss::cross_entropy;
use crate::attention::{AttentionConfig, AttentionVariant, PointTransformerLayer};
use crate::error::Result;
use crate::geometry::{fps_sample, knn_self, NeighborTable, Point3, PointSet};
use crate::network::{BackboneConfig, PointTransformerNet, Task, TransformerBlock, TransitionDown, TransitionUp};
use crate::nn::gradcheck::{grad_check, GradCheckConfig, GradCheckReport, Probe};
use crate::nn::ops;
use crate::nn::{visit_child, Linear, Mlp, Mode, Param, Parameterized, PointNorm, ValueGrid};
use crate::rng::{self, Rng};

pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const EXACT_TOLERANCE: f64 = 1e-6;
pub const NETWORK_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradRow {
    pub component: String,
    pub variant: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub probes: usize,
    pub retried: usize,
}

impl GradRow {
    fn from_report(component: &str, variant: &str, r: &GradCheckReport) -> Self {
        GradRow {
            component: component.into(),
            variant: variant.into(),
            max_rel_error: r.max_rel_error(),
            tolerance: r.tolerance,
            passed: r.passed(),
            probes: r.tensors.iter().map(|t| t.probes).sum(),
            retried: r.retried,
        }
    }
}

/// Differentiable map from one grid to another.
trait Op: Parameterized {
    fn fwd(&mut self, x: &ValueGrid) -> Result<ValueGrid>;
    fn bwd(&mut self, dy: &ValueGrid) -> Result<ValueGrid>;
}

struct Projected<O> {
    op: O,
    seed: u64,
    proj: Option<ValueGrid>,
}

impl<O: Op> Projected<O> {
    fn new(op: O, seed: u64) -> Self {
        Projected { op, seed, proj: None }
    }

    fn projection(&mut self, shape: &[usize]) -> &ValueGrid {
        if self.proj.as_ref().is_none_or(|p| p.shape() != shape) {
            self.proj = Some(random_grid(shape, &mut rng::derive(self.seed, 0x9207)));
        }
        self.proj.as_ref().expect("set above")
    }
}

impl<O: Op> Parameterized for Projected<O> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.op.visit_params(f)
    }
}

impl<O: Op> Probe for Projected<O> {
    fn loss(&mut self, x: &ValueGrid) -> Result<f64> {
        let y = self.op.fwd(x)?;
        Ok(y.dot(self.projection(y.shape())))
    }

    fn loss_and_grad(&mut self, x: &ValueGrid) -> Result<(f64, Option<ValueGrid>)> {
        let y = self.op.fwd(x)?;
        let r = self.projection(y.shape()).clone();
        let dx = self.op.bwd(&r)?;
        Ok((y.dot(&r), Some(dx)))
    }
}

fn random_grid(shape: &[usize], rng: &mut Rng) -> ValueGrid {
    let n: usize = shape.iter().product();
    ValueGrid::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("positive extents")
}

fn random_points(n: usize, rng: &mut Rng) -> Vec<Point3> {
    (0..n).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect()
}

/// Entries within `margin` of zero are pushed away so that no ReLU kink
/// lies inside the finite-difference step.
fn away_from_zero(mut g: ValueGrid, margin: f64) -> ValueGrid {
    for v in g.data_mut() {
        if v.abs() < margin {
            *v = if *v < 0.0 { -margin - 0.1 } else { margin + 0.1 };
        }
    }
    g
}

macro_rules! no_params {
    ($($t:ty),*) => {$(
        impl Parameterized for $t {
            fn visit_params(&mut self, _: &mut dyn FnMut(&str, &mut Param)) {}
        }
    )*};
}

struct LinearOp(Linear);
impl Parameterized for LinearOp {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.0.visit_params(f)
    }
}
impl Op for LinearOp {
    fn fwd(&mut self, x: &ValueGrid) -> Result<ValueGrid> {
        self.0.forward(x)
    }
    fn bwd(&mut self, dy: &ValueGrid) -> Result<ValueGrid> {
        self.0.backward(dy)
    }
}

struct ReluOp(Option<ValueGrid>);
struct SoftmaxOp(Option<ValueGrid>);
struct MaxPoolOp(Option<(Vec<usize>, usize)>);
struct AvgPoolOp(usize);
no_params!(ReluOp, SoftmaxOp, MaxPoolOp, AvgPoolOp);

impl Op for ReluOp {
    fn fwd(&mut self, x: &ValueGrid) -> Result<ValueGrid> {
        self.0 = Some(x.clone());
        Ok(ops::relu(x))
    }
    fn bwd(&mut self, dy: &ValueGrid) -> Result<ValueGrid> {
        Ok(ops::relu_backward(self.0.as_ref().expect("forward first"), dy))
    }
}

impl Op for SoftmaxOp {
    fn fwd(&mut self, x: &ValueGrid) -> Result<ValueGrid> {
        let w = ops::softmax_over_neighbors(x)?;
        self.0 = Some(w.clone());
        Ok(w)
    }
    fn bwd(&mut self, dy: &ValueGrid) -> Result<ValueGrid> {
        ops::softmax_over_neighbors_backward(self.0.as_ref().expect("forward first"), dy)
    }
}

impl Op for MaxPoolOp {
    fn fwd(&mut self, x: &ValueGrid) -> Result<ValueGrid> {
        let (y, arg) = ops::max_pool_neighbors(x)?;
        self.0 = Some((arg, x.shape()[1]));
        Ok(y)
    }
    fn bwd(&mut self, dy: &ValueGrid) -> Result<ValueGrid> {
        let (arg, k) = self.0.as_ref().expect("forward first");
        Ok(ops::max_pool_neighbors_backward(arg, dy, *k))
    }
}

impl Op for AvgPoolOp {
    fn fwd(&mut self, x: &ValueGrid) -> Result<ValueGrid> {
        self.0 = x.rows();
        Ok(ops::global_avg_pool(x))
    }
    fn bwd(&mut self, dy: &ValueGrid) -> Result<ValueGrid> {
        Ok(ops::global_avg_pool_backward(dy, self.0))
    }
}

struct NormOp(PointNorm);
impl Parameterized for NormOp {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.0.visit_params(f)
    }
}
impl Op for NormOp {
    fn fwd(&mut self, x: &ValueGrid) -> Result<ValueGrid> {
        self.0.forward(x, Mode::Train)
    }
    fn bwd(&mut self, dy: &ValueGrid) -> Result<ValueGrid> {
        self.0.backward(dy)
    }
}

struct MlpOp(Mlp);
impl Parameterized for MlpOp {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.0.visit_params(f)
    }
}
impl Op for MlpOp {
    fn fwd(&mut self, x: &ValueGrid) -> Result<ValueGrid> {
        self.0.forward(x)
    }
    fn bwd(&mut self, dy: &ValueGrid) -> Result<ValueGrid> {
        self.0.backward(dy)
    }
}

/// Encoding of each input row (a point) relative to a fixed partner point.
struct PosEncOp {
    theta: Mlp,
    partners: Vec<Point3>,
}
impl Parameterized for PosEncOp {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.theta.visit_params(f)
    }
}
impl Op for PosEncOp {
    fn fwd(&mut self, x: &ValueGrid) -> Result<ValueGrid> {
        let rel: Vec<f64> = (0..self.partners.len())
            .flat_map(|i| (0..3).map(move |c| (i, c)))
            .map(|(i, c)| x.row(i)[c] - self.partners[i][c])
            .collect();
        let y = self.theta.forward(&ValueGrid::from_vec(&[self.partners.len(), 3], rel)?)?;
        Ok(y)
    }
    fn bwd(&mut self, dy: &ValueGrid) -> Result<ValueGrid> {
        self.theta.backward(dy)
    }
}

struct AttnOp {
    layer: PointTransformerLayer,
    p: Vec<Point3>,
    nbrs: NeighborTable,
}
impl Parameterized for AttnOp {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.layer.visit_params(f)
    }
}
impl Op for AttnOp {
    fn fwd(&mut self, x: &ValueGrid) -> Result<ValueGrid> {
        self.layer.forward(x, &self.p, &self.nbrs)
    }
    fn bwd(&mut self, dy: &ValueGrid) -> Result<ValueGrid> {
        self.layer.backward(dy)
    }
}

struct BlockOp {
    block: TransformerBlock,
    p: Vec<Point3>,
    nbrs: NeighborTable,
}
impl Parameterized for BlockOp {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.block.visit_params(f)
    }
}
impl Op for BlockOp {
    fn fwd(&mut self, x: &ValueGrid) -> Result<ValueGrid> {
        self.block.forward(x, &self.p, &self.nbrs)
    }
    fn bwd(&mut self, dy: &ValueGrid) -> Result<ValueGrid> {
        self.block.backward(dy)
    }
}

struct DownOp {
    down: TransitionDown,
    p: Vec<Point3>,
}
impl Parameterized for DownOp {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.down.visit_params(f)
    }
}
impl Op for DownOp {
    fn fwd(&mut self, x: &ValueGrid) -> Result<ValueGrid> {
        Ok(self.down.forward(x, &self.p, 0, Mode::Train)?.features)
    }
    fn bwd(&mut self, dy: &ValueGrid) -> Result<ValueGrid> {
        self.down.backward(dy)
    }
}

/// Input is the coarse features followed by the skip features, flattened.
struct UpOp {
    up: TransitionUp,
    coarse_pos: Vec<Point3>,
    fine_pos: Vec<Point3>,
    widths: (usize, usize),
}
impl Parameterized for UpOp {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.up.visit_params(f)
    }
}
impl Op for UpOp {
    fn fwd(&mut self, x: &ValueGrid) -> Result<ValueGrid> {
        let split = self.coarse_pos.len() * self.widths.0;
        let coarse = ValueGrid::from_vec(&[self.coarse_pos.len(), self.widths.0], x.data()[..split].to_vec())?;
        let skip = ValueGrid::from_vec(&[self.fine_pos.len(), self.widths.1], x.data()[split..].to_vec())?;
        self.up.forward(&coarse, &self.coarse_pos, &skip, &self.fine_pos, Mode::Train)
    }
    fn bwd(&mut self, dy: &ValueGrid) -> Result<ValueGrid> {
        let (dc, ds) = self.up.backward(dy)?;
        let mut data = dc.into_data();
        data.extend(ds.into_data());
        ValueGrid::from_vec(&[1, data.len()], data)
    }
}

/// Whole network under its training objective (mean cross-entropy against
/// fixed labels). The input is the per-point feature block; coordinates stay
/// fixed.
struct NetProbe {
    net: PointTransformerNet,
    positions: Vec<Point3>,
    labels: Vec<usize>,
}

impl NetProbe {
    fn logits(&mut self, x: &ValueGrid) -> Result<ValueGrid> {
        let cloud = PointSet::new(self.positions.clone())?.with_features(x.clone())?;
        self.net.forward(&cloud, 0, Mode::Train)
    }
}

impl Parameterized for NetProbe {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_child(&mut self.net, "net", f)
    }
}

impl Probe for NetProbe {
    fn loss(&mut self, x: &ValueGrid) -> Result<f64> {
        let logits = self.logits(x)?;
        Ok(cross_entropy(&logits, &self.labels)?.0)
    }

    fn loss_and_grad(&mut self, x: &ValueGrid) -> Result<(f64, Option<ValueGrid>)> {
        let logits = self.logits(x)?;
        let (loss, dlogits) = cross_entropy(&logits, &self.labels)?;
        let full = self.net.backward(&dlogits)?;
        let (n, w) = (full.rows(), full.cols());
        let data = (0..n).flat_map(|i| full.row(i)[3..w].to_vec()).collect();
        Ok((loss, Some(ValueGrid::from_vec(&[n, w - 3], data)?)))
    }
}

struct CrossEntropyProbe(Vec<usize>);
no_params!(CrossEntropyProbe);
impl Probe for CrossEntropyProbe {
    fn loss(&mut self, x: &ValueGrid) -> Result<f64> {
        Ok(cross_entropy(x, &self.0)?.0)
    }
    fn loss_and_grad(&mut self, x: &ValueGrid) -> Result<(f64, Option<ValueGrid>)> {
        let (l, g) = cross_entropy(x, &self.0)?;
        Ok((l, Some(g)))
    }
}

fn check<P: Probe>(probe: &mut P, input: &ValueGrid, tolerance: f64, max_probes: Option<usize>, seed: u64) -> Result<GradCheckReport> {
    let cfg = GradCheckConfig { tolerance, max_probes_per_tensor: max_probes, seed, ..GradCheckConfig::default() };
    grad_check(probe, input, &cfg)
}

/// Suite sizes. The defaults keep the full run to seconds.
#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Points and neighbours for layer-level checks.
    pub n: usize,
    pub k: usize,
    pub d: usize,
    /// Points for the end-to-end networks (five stages need more than 256
    /// in segmentation training mode).
    pub network_points: usize,
    pub network_probes: usize,
    pub tolerance: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig { seed: 0, n: 8, k: 4, d: 6, network_points: 320, network_probes: 3, tolerance: LAYER_TOLERANCE }
    }
}

/// One check per attention variant on a random instance.
pub fn attention_row(variant: AttentionVariant, cfg: &SuiteConfig) -> Result<GradRow> {
    let mut r = rng::derive(cfg.seed, 0xA77E);
    let p = random_points(cfg.n, &mut r);
    let nbrs = knn_self(&p, cfg.k.min(cfg.n))?;
    let layer = PointTransformerLayer::new(AttentionConfig::new(cfg.d, cfg.k, variant)?, &mut r);
    let x = random_grid(&[cfg.n, cfg.d], &mut r);
    let mut probe = Projected::new(AttnOp { layer, p, nbrs }, cfg.seed);
    let rep = check(&mut probe, &x, cfg.tolerance, None, cfg.seed)?;
    Ok(GradRow::from_report("attention", &variant.label(), &rep))
}

fn network_row(task: Task, cfg: &SuiteConfig) -> Result<GradRow> {
    let mut r = rng::derive(cfg.seed, 0x4E7);
    let n = cfg.network_points;
    let feature_dim = 2;
    let mut bc = BackboneConfig::with_widths(&[8, 8, 8, 8, 8], task, 3);
    bc.in_channels = 3 + feature_dim;
    bc.k = 8;
    bc.init_seed = cfg.seed;
    let net = PointTransformerNet::new(bc)?;
    let positions = random_points(n, &mut r);
    let x = random_grid(&[n, feature_dim], &mut r);
    let rows = if task == Task::Segmentation { n } else { 1 };
    let labels = (0..rows).map(|_| r.random_range(0..3)).collect();
    let mut probe = NetProbe { net, positions, labels };
    let rep = check(&mut probe, &x, NETWORK_TOLERANCE, Some(cfg.network_probes), cfg.seed)?;
    let name = match task {
        Task::Segmentation => "segmentation_network",
        Task::Classification => "classification_network",
    };
    Ok(GradRow::from_report(name, "vector/relative/softmax", &rep))
}

/// Every layer type, all 40 attention variants and both networks.
pub fn run_suite(cfg: &SuiteConfig, mut progress: impl FnMut(&GradRow)) -> Result<Vec<GradRow>> {
    let mut rows = Vec::new();
    let mut push = |row: GradRow, rows: &mut Vec<GradRow>| {
        progress(&row);
        rows.push(row);
    };
    let mut r = rng::derive(cfg.seed, 0x6AD);
    let (n, k, d, tol, seed) = (cfg.n, cfg.k, cfg.d, cfg.tolerance, cfg.seed);
    let h = GradCheckConfig::default().step;

    let x = random_grid(&[n, d], &mut r);
    let mut p = Projected::new(LinearOp(Linear::new(d, d + 1, &mut r)), seed);
    push(GradRow::from_report("linear", "-", &check(&mut p, &x, EXACT_TOLERANCE, None, seed)?), &mut rows);

    let x = away_from_zero(random_grid(&[n, d], &mut r), 10.0 * h);
    let mut p = Projected::new(ReluOp(None), seed);
    push(GradRow::from_report("relu", "kink-excluded", &check(&mut p, &x, tol, None, seed)?), &mut rows);

    let x = random_grid(&[n, k, d], &mut r);
    let mut p = Projected::new(SoftmaxOp(None), seed);
    push(GradRow::from_report("softmax_over_neighbors", "-", &check(&mut p, &x, tol, None, seed)?), &mut rows);

    let x = random_grid(&[n, k, d], &mut r);
    let mut p = Projected::new(MaxPoolOp(None), seed);
    push(GradRow::from_report("max_pool_neighbors", "-", &check(&mut p, &x, tol, None, seed)?), &mut rows);

    let x = random_grid(&[n, d], &mut r);
    let mut p = Projected::new(AvgPoolOp(0), seed);
    push(GradRow::from_report("global_avg_pool", "-", &check(&mut p, &x, tol, None, seed)?), &mut rows);

    let x = random_grid(&[n, d], &mut r);
    let mut norm = PointNorm::new(d);
    for v in norm.gain.value.data_mut().iter_mut().chain(norm.bias.value.data_mut()) {
        *v = r.random_range(0.5..1.5);
    }
    let mut p = Projected::new(NormOp(norm), seed);
    push(GradRow::from_report("point_norm", "train", &check(&mut p, &x, tol, None, seed)?), &mut rows);

    let x = random_grid(&[n, d], &mut r);
    let mut p = Projected::new(MlpOp(Mlp::new(d, d, 3, &mut r)), seed);
    push(GradRow::from_report("mlp", "-", &check(&mut p, &x, tol, None, seed)?), &mut rows);

    let partners = random_points(n, &mut r);
    let x = random_grid(&[n, 3], &mut r);
    let mut p = Projected::new(PosEncOp { theta: Mlp::new(3, d, d, &mut r), partners }, seed);
    push(GradRow::from_report("position_encoding", "relative", &check(&mut p, &x, tol, None, seed)?), &mut rows);

    let logits = random_grid(&[n, 4], &mut r);
    let labels = (0..n).map(|i| i % 4).collect();
    let rep = check(&mut CrossEntropyProbe(labels), &logits, EXACT_TOLERANCE, None, seed)?;
    push(GradRow::from_report("cross_entropy", "-", &rep), &mut rows);

    for variant in AttentionVariant::all() {
        push(attention_row(variant, cfg)?, &mut rows);
    }

    let pts = random_points(n, &mut r);
    let nbrs = knn_self(&pts, k.min(n))?;
    let block = TransformerBlock::new(d, k, 1, AttentionVariant::default(), &mut r)?;
    let x = random_grid(&[n, d], &mut r);
    let mut p = Projected::new(BlockOp { block, p: pts, nbrs }, seed);
    push(GradRow::from_report("transformer_block", "vector/relative/softmax", &check(&mut p, &x, tol, None, seed)?), &mut rows);

    let fine = random_points(4 * n, &mut r);
    let x = random_grid(&[4 * n, d], &mut r);
    let down = TransitionDown::new(d, d + 2, 4, k, &mut r);
    let mut p = Projected::new(DownOp { down, p: fine.clone() }, seed);
    push(GradRow::from_report("transition_down", "rate 4", &check(&mut p, &x, tol, None, seed)?), &mut rows);

    let coarse_pos: Vec<Point3> = fps_sample(&fine, n, 0)?.selected.iter().map(|&i| fine[i]).collect();
    let (dc, df) = (d + 2, d);
    let x = random_grid(&[1, n * dc + 4 * n * df], &mut r);
    let up = TransitionUp::new(dc, df, &mut r);
    let mut p = Projected::new(UpOp { up, coarse_pos, fine_pos: fine, widths: (dc, df) }, seed);
    push(GradRow::from_report("transition_up", "3-nn interpolation", &check(&mut p, &x, tol, None, seed)?), &mut rows);

    push(network_row(Task::Segmentation, cfg)?, &mut rows);
    push(network_row(Task::Classification, cfg)?, &mut rows);
    Ok(rows)
}

pub const GRADCHECK_HEADER: &str = "component,variant,max_rel_error,tolerance,pass";

pub fn write_csv<W: Write>(mut w: W, rows: &[GradRow]) -> Result<()> {
    writeln!(w, "{GRADCHECK_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.3e},{:e},{}",
            r.component,
            r.variant,
            r.max_rel_error,
            r.tolerance,
            if r.passed { "pass" } else { "fail" }
        )?;
    }
    Ok(())
}
