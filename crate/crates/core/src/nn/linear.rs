use super::{matmul_acc, matmul_at_acc, matmul_bt_acc, take_cache, uniform_init, Param, Parameterized, ValueGrid};
use crate::error::{bail, Result};
use crate::rng::Rng;

/// Affine map `y = x·W + b` applied to every row.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    input: Option<ValueGrid>,
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        Linear {
            weight: Param::new(uniform_init(&[d_in, d_out], d_in, rng)),
            bias: Param::new(uniform_init(&[d_out], d_in, rng)),
            input: None,
        }
    }

    /// All-zero weights and bias.
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Linear {
            weight: Param::new(ValueGrid::zeros(&[d_in, d_out])),
            bias: Param::new(ValueGrid::zeros(&[d_out])),
            input: None,
        }
    }

    pub fn from_values(weight: ValueGrid, bias: ValueGrid) -> Result<Self> {
        if weight.shape().len() != 2 || bias.len() != weight.shape()[1] {
            bail!(
                InvalidArgument,
                "weight {:?} and bias {:?} disagree",
                weight.shape(),
                bias.shape()
            );
        }
        Ok(Linear { weight: Param::new(weight), bias: Param::new(bias), input: None })
    }

    pub fn d_in(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&mut self, x: &ValueGrid) -> Result<ValueGrid> {
        let y = linear(x, &self.weight.value, &self.bias.value)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &ValueGrid) -> Result<ValueGrid> {
        let x = take_cache(&mut self.input, "linear")?;
        let (n, di, dout) = (x.rows(), self.d_in(), self.d_out());
        if dy.rows() != n || dy.cols() != dout {
            bail!(InvalidArgument, "linear backward: gradient shape {:?}", dy.shape());
        }
        matmul_at_acc(x.data(), dy.data(), self.weight.grad_mut().data_mut(), n, di, dout);
        let gb = self.bias.grad_mut().data_mut();
        for i in 0..n {
            for (g, d) in gb.iter_mut().zip(dy.row(i)) {
                *g += d;
            }
        }
        let mut dx = ValueGrid::zeros(&[n, di]);
        matmul_bt_acc(dy.data(), self.weight.value.data(), dx.data_mut(), n, di, dout);
        Ok(dx)
    }
}

impl Parameterized for Linear {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}

/// Stateless `input·W + b` for an `n × d_in` input.
pub fn linear(x: &ValueGrid, w: &ValueGrid, b: &ValueGrid) -> Result<ValueGrid> {
    let (di, dout) = match w.shape() {
        [di, dout] => (*di, *dout),
        s => bail!(InvalidArgument, "linear weight must be 2-D, got {s:?}"),
    };
    if x.cols() != di || b.len() != dout {
        bail!(
            InvalidArgument,
            "linear: input {:?}, weight {:?}, bias {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        );
    }
    let n = x.rows();
    let mut y = ValueGrid::zeros(&[n, dout]);
    for i in 0..n {
        y.row_mut(i).copy_from_slice(b.data());
    }
    matmul_acc(x.data(), w.data(), y.data_mut(), n, di, dout);
    Ok(y)
}
