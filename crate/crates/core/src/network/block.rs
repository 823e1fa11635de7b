use crate::attention::{AttentionConfig, PointTransformerLayer};
use crate::error::Result;
use crate::geometry::{NeighborTable, Point3};
use crate::nn::{visit_child, Linear, Param, Parameterized, ValueGrid};
use crate::rng::Rng;

/// Residual block: `y = x + out(attention(in(x)))`.
#[derive(Debug)]
pub struct TransformerBlock {
    pub linear_in: Linear,
    pub layer: PointTransformerLayer,
    pub linear_out: Linear,
}

impl TransformerBlock {
    /// `bottleneck` divides the inner width (1 keeps it equal to `d`).
    pub fn new(d: usize, k: usize, bottleneck: usize, variant: crate::attention::AttentionVariant, rng: &mut Rng) -> Result<Self> {
        let inner = (d / bottleneck.max(1)).max(1);
        let linear_in = Linear::new(d, inner, rng);
        let layer = PointTransformerLayer::new(AttentionConfig::new(inner, k, variant)?, rng);
        let linear_out = Linear::new(inner, d, rng);
        Ok(TransformerBlock { linear_in, layer, linear_out })
    }

    /// Zero the output projection so the block starts as the identity.
    pub fn zero_output(&mut self) {
        self.linear_out.weight.value.fill(0.0);
        self.linear_out.bias.value.fill(0.0);
    }

    pub fn forward(&mut self, x: &ValueGrid, p: &[Point3], nbrs: &NeighborTable) -> Result<ValueGrid> {
        let h = self.linear_in.forward(x)?;
        let a = self.layer.forward(&h, p, nbrs)?;
        let mut y = self.linear_out.forward(&a)?;
        y.add_assign(x);
        Ok(y)
    }

    pub fn backward(&mut self, dy: &ValueGrid) -> Result<ValueGrid> {
        let da = self.linear_out.backward(dy)?;
        let dh = self.layer.backward(&da)?;
        let mut dx = self.linear_in.backward(&dh)?;
        dx.add_assign(dy);
        Ok(dx)
    }
}

impl Parameterized for TransformerBlock {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_child(&mut self.linear_in, "linear_in", f);
        visit_child(&mut self.layer, "attn", f);
        visit_child(&mut self.linear_out, "linear_out", f);
    }
}
