use super::ops::{relu, relu_backward};
use super::{take_cache, visit_child, Linear, Param, Parameterized, ValueGrid};
use crate::error::Result;
use crate::rng::Rng;

/// Two linear layers with one ReLU in between.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
    hidden: Option<ValueGrid>,
}

impl Mlp {
    pub fn new(d_in: usize, d_hidden: usize, d_out: usize, rng: &mut Rng) -> Self {
        Mlp {
            first: Linear::new(d_in, d_hidden, rng),
            second: Linear::new(d_hidden, d_out, rng),
            hidden: None,
        }
    }

    pub fn d_out(&self) -> usize {
        self.second.d_out()
    }

    pub fn forward(&mut self, x: &ValueGrid) -> Result<ValueGrid> {
        let h = self.first.forward(x)?;
        let y = self.second.forward(&relu(&h))?;
        self.hidden = Some(h);
        Ok(y)
    }

    pub fn backward(&mut self, dy: &ValueGrid) -> Result<ValueGrid> {
        let h = take_cache(&mut self.hidden, "mlp")?;
        let da = self.second.backward(dy)?;
        self.first.backward(&relu_backward(&h, &da))
    }
}

impl Parameterized for Mlp {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_child(&mut self.first, "0", f);
        visit_child(&mut self.second, "1", f);
    }
}
