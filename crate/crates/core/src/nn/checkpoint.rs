//! Text checkpoint format.
//!
//! ```text
//! point-transformer checkpoint v1
//! arch <architecture description, one line>
//! tensors <count>
//! tensor <name> <extent>x<extent>...
//! <values separated by single spaces>
//! ...
//! ```
//!
//! Values are written in Rust's shortest round-trip float notation, so a
//! save/load cycle reproduces every bit. Tensors appear in the order the
//! model visits them; loading matches them by name and shape.

use std::io::{BufRead, Write};

use super::{Parameterized, ValueGrid};
use crate::error::{bail, Error, Result};

pub const MAGIC: &str = "point-transformer checkpoint v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: String,
    pub tensors: Vec<(String, ValueGrid)>,
}

impl Checkpoint {
    /// Snapshot every parameter and buffer of `model`.
    pub fn capture<M: Parameterized + ?Sized>(arch: &str, model: &mut M) -> Result<Self> {
        if arch.contains('\n') {
            bail!(Checkpoint, "architecture description must fit on one line");
        }
        let mut tensors = Vec::new();
        model.visit_params(&mut |name, p| tensors.push((name.to_string(), p.value.clone())));
        Ok(Checkpoint { arch: arch.to_string(), tensors })
    }

    /// Copy stored values into `model`. Every model tensor must be present
    /// with the same shape, and no stored tensor may be left over.
    pub fn restore_into<M: Parameterized + ?Sized>(&self, model: &mut M) -> Result<()> {
        let mut seen = vec![false; self.tensors.len()];
        let mut err = None;
        model.visit_params(&mut |name, p| {
            if err.is_some() {
                return;
            }
            match self.tensors.iter().position(|(n, _)| n == name) {
                None => err = Some(format!("checkpoint lacks tensor {name}")),
                Some(i) => {
                    let stored = &self.tensors[i].1;
                    if stored.shape() != p.value.shape() {
                        err = Some(format!(
                            "tensor {name}: stored shape {:?}, model shape {:?}",
                            stored.shape(),
                            p.value.shape()
                        ));
                    } else {
                        p.value.data_mut().copy_from_slice(stored.data());
                        seen[i] = true;
                    }
                }
            }
        });
        if let Some(e) = err {
            return Err(Error::Checkpoint(e));
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            bail!(Checkpoint, "unexpected tensor {} in checkpoint", self.tensors[i].0);
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "arch {}", self.arch)?;
        writeln!(w, "tensors {}", self.tensors.len())?;
        for (name, g) in &self.tensors {
            let dims: Vec<String> = g.shape().iter().map(|d| d.to_string()).collect();
            writeln!(w, "tensor {name} {}", dims.join("x"))?;
            let mut first = true;
            for v in g.data() {
                if !first {
                    w.write_all(b" ")?;
                }
                write!(w, "{v:?}")?;
                first = false;
            }
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::Checkpoint(format!("unexpected end of file, expected {what}")))
        };
        let magic = next("header")?;
        if magic.trim_end() != MAGIC {
            bail!(Checkpoint, "not a checkpoint (header {magic:?})");
        }
        let arch = next("arch line")?
            .strip_prefix("arch ")
            .ok_or_else(|| Error::Checkpoint("missing arch line".into()))?
            .to_string();
        let count: usize = next("tensor count")?
            .strip_prefix("tensors ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Checkpoint("bad tensor count line".into()))?;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let head = next("tensor header")?;
            let mut parts = head.split(' ');
            let (Some("tensor"), Some(name), Some(dims), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                bail!(Checkpoint, "bad tensor header {head:?}");
            };
            let shape: Vec<usize> = dims
                .split('x')
                .map(|d| d.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Checkpoint(format!("bad shape {dims:?} for {name}")))?;
            let values: Vec<f64> = next("tensor values")?
                .split_ascii_whitespace()
                .map(|v| v.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Checkpoint(format!("bad value in tensor {name}")))?;
            let grid = ValueGrid::from_vec(&shape, values)
                .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
            tensors.push((name.to_string(), grid));
        }
        Ok(Checkpoint { arch, tensors })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Linear, PointNorm};
    use proptest::prelude::*;

    #[test]
    fn restore_checks_names_and_shapes() {
        let mut rng = crate::rng::seeded(0);
        let mut a = Linear::new(3, 2, &mut rng);
        let ck = Checkpoint::capture("lin", &mut a).unwrap();
        let mut wrong = Linear::new(2, 2, &mut rng);
        assert!(ck.restore_into(&mut wrong).is_err());
        let mut norm = PointNorm::new(2);
        assert!(ck.restore_into(&mut norm).is_err());
        let mut b = Linear::new(3, 2, &mut rng);
        ck.restore_into(&mut b).unwrap();
        assert_eq!(a.weight.value, b.weight.value);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::read("hello\n".as_bytes()).is_err());
        let truncated = format!("{MAGIC}\narch x\ntensors 1\ntensor w 2\n1.0\n");
        assert!(Checkpoint::read(truncated.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn text_round_trip_is_bit_exact(values in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
            let n = values.len();
            let ck = Checkpoint {
                arch: "{\"a\":1}".into(),
                tensors: vec![("t.w".into(), ValueGrid::from_vec(&[n], values).unwrap())],
            };
            let mut buf = Vec::new();
            ck.write(&mut buf).unwrap();
            let back = Checkpoint::read(buf.as_slice()).unwrap();
            prop_assert_eq!(back, ck);
        }
    }
}
