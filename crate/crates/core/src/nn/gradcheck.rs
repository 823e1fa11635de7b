//! Central finite-difference verification of hand-written backward passes.

use rand::seq::index::sample;

use super::{Parameterized, ValueGrid};
use crate::error::{bail, Result};
use crate::rng;

/// Something whose scalar objective can be evaluated with and without
/// analytic gradients.
pub trait Probe: Parameterized {
    /// Objective at the current parameters.
    fn loss(&mut self, input: &ValueGrid) -> Result<f64>;

    /// Objective plus analytic gradients: parameter gradients are added into
    /// the params, the input gradient (if the input is differentiable) is
    /// returned.
    fn loss_and_grad(&mut self, input: &ValueGrid) -> Result<(f64, Option<ValueGrid>)>;
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many randomly chosen elements per tensor.
    pub max_probes_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-5, tolerance: 1e-4, max_probes_per_tensor: None, seed: 0 }
    }
}

/// Gradients smaller than this are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-6;

/// `|a − b| / max(|a|, |b|, ABS_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub probes: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
    /// Elements that only agreed after retrying with a ten times smaller
    /// step (a kink lay within the original step).
    pub retried: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_error <= self.tolerance)
    }
}

fn central_difference<P: Probe + ?Sized>(
    probe: &mut P,
    input: &mut ValueGrid,
    target: &Target,
    h: f64,
) -> Result<f64> {
    let orig = target.get(probe, input);
    target.set(probe, input, orig + h);
    let plus = probe.loss(input)?;
    target.set(probe, input, orig - h);
    let minus = probe.loss(input)?;
    target.set(probe, input, orig);
    Ok((plus - minus) / (2.0 * h))
}

enum Target {
    Input(usize),
    Param(String, usize),
}

impl Target {
    fn get<P: Probe + ?Sized>(&self, probe: &mut P, input: &ValueGrid) -> f64 {
        match self {
            Target::Input(i) => input.data()[*i],
            Target::Param(name, i) => {
                let mut v = f64::NAN;
                probe.visit_params(&mut |n, p| {
                    if n == name {
                        v = p.value.data()[*i];
                    }
                });
                v
            }
        }
    }

    fn set<P: Probe + ?Sized>(&self, probe: &mut P, input: &mut ValueGrid, value: f64) {
        match self {
            Target::Input(i) => input.data_mut()[*i] = value,
            Target::Param(name, i) => probe.visit_params(&mut |n, p| {
                if n == name {
                    p.value.data_mut()[*i] = value;
                }
            }),
        }
    }
}

/// Compare analytic gradients of `probe` with central differences for the
/// input and every trainable parameter.
pub fn grad_check<P: Probe + ?Sized>(
    probe: &mut P,
    input: &ValueGrid,
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut input = input.clone();
    let first = probe.loss(&input)?;
    let second = probe.loss(&input)?;
    if first.to_bits() != second.to_bits() {
        bail!(InvalidInput, "objective is not deterministic ({first} vs {second})");
    }

    probe.zero_grads();
    let (_, input_grad) = probe.loss_and_grad(&input)?;
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    probe.visit_params(&mut |name, p| {
        if p.trainable {
            let g = p
                .grad
                .as_ref()
                .map_or_else(|| vec![0.0; p.value.len()], |g| g.data().to_vec());
            analytic.push((name.to_string(), g));
        }
    });
    probe.zero_grads();
    if let Some(g) = input_grad {
        analytic.insert(0, ("input".to_string(), g.into_data()));
    }

    let mut rng = rng::seeded(config.seed);
    let mut tensors = Vec::with_capacity(analytic.len());
    let mut retried = 0;
    for (idx, (name, grads)) in analytic.iter().enumerate() {
        let is_input = idx == 0 && name == "input";
        let elements: Vec<usize> = match config.max_probes_per_tensor {
            Some(m) if grads.len() > m => {
                let mut v = sample(&mut rng, grads.len(), m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..grads.len()).collect(),
        };
        let mut worst: f64 = 0.0;
        for &e in &elements {
            let target = if is_input {
                Target::Input(e)
            } else {
                Target::Param(name.clone(), e)
            };
            let numeric = central_difference(probe, &mut input, &target, config.step)?;
            let mut err = relative_error(grads[e], numeric);
            if err > config.tolerance {
                let fine = central_difference(probe, &mut input, &target, config.step / 10.0)?;
                let fine_err = relative_error(grads[e], fine);
                if fine_err <= config.tolerance {
                    retried += 1;
                }
                err = err.min(fine_err);
            }
            worst = worst.max(err);
        }
        tensors.push(TensorCheck { name: name.clone(), probes: elements.len(), max_rel_error: worst });
    }
    Ok(GradCheckReport { tolerance: config.tolerance, tensors, retried })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Linear, Param};

    struct Quadratic {
        w: Param,
        noisy: bool,
        calls: u64,
    }

    impl Parameterized for Quadratic {
        fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
            f("w", &mut self.w);
        }
    }

    impl Probe for Quadratic {
        fn loss(&mut self, x: &ValueGrid) -> Result<f64> {
            self.calls += 1;
            let jitter = if self.noisy { self.calls as f64 * 1e-9 } else { 0.0 };
            let w = self.w.value.data()[0];
            Ok(w * w * x.data()[0] + jitter)
        }

        fn loss_and_grad(&mut self, x: &ValueGrid) -> Result<(f64, Option<ValueGrid>)> {
            let w = self.w.value.data()[0];
            self.w.accumulate(&[2.0 * w * x.data()[0]]);
            let gx = ValueGrid::filled(&[1], w * w);
            Ok((w * w * x.data()[0], Some(gx)))
        }
    }

    #[test]
    fn exact_gradient_passes() {
        let mut q = Quadratic { w: Param::new(ValueGrid::filled(&[1], 1.5)), noisy: false, calls: 0 };
        let r = grad_check(&mut q, &ValueGrid::filled(&[1], 0.7), &GradCheckConfig::default()).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.tensors.len(), 2);
    }

    #[test]
    fn nondeterminism_is_rejected() {
        let mut q = Quadratic { w: Param::new(ValueGrid::filled(&[1], 1.5)), noisy: true, calls: 0 };
        let r = grad_check(&mut q, &ValueGrid::filled(&[1], 0.7), &GradCheckConfig::default());
        assert!(matches!(r, Err(crate::Error::InvalidInput(_))));
    }

    struct WrongLinear(Linear);

    impl Parameterized for WrongLinear {
        fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
            self.0.visit_params(f)
        }
    }

    impl Probe for WrongLinear {
        fn loss(&mut self, x: &ValueGrid) -> Result<f64> {
            Ok(self.0.forward(x)?.data().iter().sum())
        }

        fn loss_and_grad(&mut self, x: &ValueGrid) -> Result<(f64, Option<ValueGrid>)> {
            let y = self.0.forward(x)?;
            // deliberately doubled upstream gradient
            let dx = self.0.backward(&ValueGrid::filled(y.shape(), 2.0))?;
            Ok((y.data().iter().sum(), Some(dx)))
        }
    }

    #[test]
    fn wrong_gradient_fails() {
        let mut rng = crate::rng::seeded(0);
        let mut p = WrongLinear(Linear::new(3, 2, &mut rng));
        let x = crate::nn::uniform_init(&[4, 3], 1, &mut rng);
        let r = grad_check(&mut p, &x, &GradCheckConfig::default()).unwrap();
        assert!(!r.passed());
        assert!((r.max_rel_error() - 0.5).abs() < 1e-6);
    }
}
