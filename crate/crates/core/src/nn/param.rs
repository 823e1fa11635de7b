use rand::Rng as _;

use super::ValueGrid;
use crate::rng::Rng;

/// One named tensor of a layer together with its gradient and momentum
/// buffers.
///
/// `grad` is `None` until a backward pass touches the parameter. Buffers
/// such as running statistics are stored as non-trainable params so that
/// checkpoints capture them; the optimizer skips them.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: ValueGrid,
    pub grad: Option<ValueGrid>,
    pub momentum: ValueGrid,
    pub trainable: bool,
}

impl Param {
    pub fn new(value: ValueGrid) -> Self {
        let momentum = ValueGrid::zeros(value.shape());
        Param { value, grad: None, momentum, trainable: true }
    }

    pub fn buffer(value: ValueGrid) -> Self {
        Param { trainable: false, ..Param::new(value) }
    }

    /// Gradient storage, allocated as zeros on first use.
    pub fn grad_mut(&mut self) -> &mut ValueGrid {
        let shape = self.value.shape().to_vec();
        self.grad.get_or_insert_with(|| ValueGrid::zeros(&shape))
    }

    pub fn accumulate(&mut self, g: &[f64]) {
        let grad = self.grad_mut();
        for (a, b) in grad.data_mut().iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

/// Anything owning parameters. Names are dotted paths, stable across runs.
pub trait Parameterized {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grads(&mut self) {
        self.visit_params(&mut |_, p| p.zero_grad());
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| {
            if p.trainable {
                n += p.value.len()
            }
        });
        n
    }
}

pub fn visit_child<P: Parameterized + ?Sized>(
    child: &mut P,
    prefix: &str,
    f: &mut dyn FnMut(&str, &mut Param),
) {
    child.visit_params(&mut |name, p| f(&format!("{prefix}.{name}"), p));
}

/// Uniform values in `[-s, s]` with `s = sqrt(1 / fan_in)`.
pub fn uniform_init(shape: &[usize], fan_in: usize, rng: &mut Rng) -> ValueGrid {
    let s = (1.0 / fan_in.max(1) as f64).sqrt();
    let mut g = ValueGrid::zeros(shape);
    for v in g.data_mut() {
        *v = rng.random_range(-s..=s);
    }
    g
}
