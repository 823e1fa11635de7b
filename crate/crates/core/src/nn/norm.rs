use super::{take_cache, Mode, Param, Parameterized, ValueGrid};
use crate::error::{bail, Result};

pub const NORM_EPS: f64 = 1e-5;
const RUNNING_MOMENTUM: f64 = 0.1;

/// Per-channel standardisation over the point axis followed by a learned
/// gain and bias. Running mean and variance are tracked in training mode
/// and used in evaluation mode.
#[derive(Clone, Debug)]
pub struct PointNorm {
    pub gain: Param,
    pub bias: Param,
    pub running_mean: Param,
    pub running_var: Param,
    cache: Option<NormCache>,
}

#[derive(Clone, Debug)]
struct NormCache {
    normalized: ValueGrid,
    inv_std: Vec<f64>,
    mode: Mode,
}

impl PointNorm {
    pub fn new(channels: usize) -> Self {
        PointNorm {
            gain: Param::new(ValueGrid::filled(&[channels], 1.0)),
            bias: Param::new(ValueGrid::zeros(&[channels])),
            running_mean: Param::buffer(ValueGrid::zeros(&[channels])),
            running_var: Param::buffer(ValueGrid::filled(&[channels], 1.0)),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gain.value.len()
    }

    pub fn forward(&mut self, x: &ValueGrid, mode: Mode) -> Result<ValueGrid> {
        let (n, c) = (x.rows(), x.cols());
        if c != self.channels() {
            bail!(InvalidArgument, "norm expects {} channels, got {c}", self.channels());
        }
        let (mean, var) = match mode {
            Mode::Train => {
                if n < 2 {
                    bail!(InvalidState, "point norm needs at least 2 points in training mode, got {n}");
                }
                let mut mean = vec![0.0; c];
                for i in 0..n {
                    for (m, v) in mean.iter_mut().zip(x.row(i)) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; c];
                for i in 0..n {
                    for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= n as f64);
                let rm = self.running_mean.value.data_mut();
                for (r, m) in rm.iter_mut().zip(&mean) {
                    *r = (1.0 - RUNNING_MOMENTUM) * *r + RUNNING_MOMENTUM * m;
                }
                let rv = self.running_var.value.data_mut();
                for (r, v) in rv.iter_mut().zip(&var) {
                    *r = (1.0 - RUNNING_MOMENTUM) * *r + RUNNING_MOMENTUM * v;
                }
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.value.data().to_vec(),
                self.running_var.value.data().to_vec(),
            ),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let mut normalized = x.clone();
        let mut y = ValueGrid::zeros(x.shape());
        let (g, b) = (self.gain.value.data(), self.bias.value.data());
        for i in 0..n {
            let nrow = normalized.row_mut(i);
            for ch in 0..c {
                nrow[ch] = (nrow[ch] - mean[ch]) * inv_std[ch];
            }
            let yrow = y.row_mut(i);
            for ch in 0..c {
                yrow[ch] = g[ch] * nrow[ch] + b[ch];
            }
        }
        self.cache = Some(NormCache { normalized, inv_std, mode });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &ValueGrid) -> Result<ValueGrid> {
        let NormCache { normalized, inv_std, mode } = take_cache(&mut self.cache, "norm")?;
        let (n, c) = (normalized.rows(), normalized.cols());
        let mut dgain = vec![0.0; c];
        let mut dbias = vec![0.0; c];
        for i in 0..n {
            for ch in 0..c {
                let d = dy.row(i)[ch];
                dgain[ch] += d * normalized.row(i)[ch];
                dbias[ch] += d;
            }
        }
        self.gain.accumulate(&dgain);
        self.bias.accumulate(&dbias);

        let g = self.gain.value.data();
        let mut dx = ValueGrid::zeros(dy.shape());
        match mode {
            Mode::Eval => {
                for i in 0..n {
                    for ch in 0..c {
                        dx.row_mut(i)[ch] = dy.row(i)[ch] * g[ch] * inv_std[ch];
                    }
                }
            }
            Mode::Train => {
                // dx = inv_std/n · (n·dn − Σdn − n̂·Σ(dn·n̂)), dn = dy·g
                let nf = n as f64;
                for ch in 0..c {
                    let mut sum_dn = 0.0;
                    let mut sum_dn_xhat = 0.0;
                    for i in 0..n {
                        let dn = dy.row(i)[ch] * g[ch];
                        sum_dn += dn;
                        sum_dn_xhat += dn * normalized.row(i)[ch];
                    }
                    for i in 0..n {
                        let dn = dy.row(i)[ch] * g[ch];
                        let xh = normalized.row(i)[ch];
                        dx.row_mut(i)[ch] = inv_std[ch] / nf * (nf * dn - sum_dn - xh * sum_dn_xhat);
                    }
                }
            }
        }
        Ok(dx)
    }
}

impl Parameterized for PointNorm {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("gain", &mut self.gain);
        f("bias", &mut self.bias);
        f("running_mean", &mut self.running_mean);
        f("running_var", &mut self.running_var);
    }
}
