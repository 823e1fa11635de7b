use std::io::Write;

use serde::Serialize;

use crate::error::{bail, Result};

/// Segmentation scores. `confusion[truth][pred]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub oa: f64,
    pub macc: f64,
    pub miou: f64,
    /// `None` for classes absent from both truth and prediction.
    pub per_class_iou: Vec<Option<f64>>,
    /// `None` for classes absent from the truth.
    pub per_class_acc: Vec<Option<f64>>,
    pub confusion: Vec<Vec<u64>>,
}

pub fn confusion_matrix(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<Vec<Vec<u64>>> {
    if truth.len() != pred.len() {
        bail!(InvalidInput, "{} labels but {} predictions", truth.len(), pred.len());
    }
    let mut m = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= num_classes || p >= num_classes {
            bail!(InvalidInput, "class index {} out of range for {num_classes} classes", t.max(p));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

impl MetricsReport {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self> {
        let c = confusion.len();
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            bail!(InvalidInput, "no samples to score");
        }
        let correct: u64 = (0..c).map(|i| confusion[i][i]).sum();
        let mut per_class_iou = Vec::with_capacity(c);
        let mut per_class_acc = Vec::with_capacity(c);
        for i in 0..c {
            let tp = confusion[i][i];
            let row: u64 = confusion[i].iter().sum();
            let col: u64 = confusion.iter().map(|r| r[i]).sum();
            let union = row + col - tp;
            per_class_iou.push((union > 0).then(|| tp as f64 / union as f64));
            per_class_acc.push((row > 0).then(|| tp as f64 / row as f64));
        }
        Ok(MetricsReport {
            oa: correct as f64 / total as f64,
            macc: mean_present(&per_class_acc),
            miou: mean_present(&per_class_iou),
            per_class_iou,
            per_class_acc,
            confusion,
        })
    }

    pub fn from_predictions(truth: &[usize], pred: &[usize], num_classes: usize) -> Result<Self> {
        Self::from_confusion(confusion_matrix(truth, pred, num_classes)?)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(std::io::Error::other)?;
        Ok(())
    }

    /// One row per class plus an `all` row holding OA, mAcc and mIoU.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "class,accuracy,iou")?;
        let fmt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
        for (c, (acc, iou)) in self.per_class_acc.iter().zip(&self.per_class_iou).enumerate() {
            writeln!(w, "{c},{},{}", fmt(*acc), fmt(*iou))?;
        }
        writeln!(w, "all,{:.6},{:.6}", self.macc, self.miou)?;
        writeln!(w, "overall_accuracy,{:.6},", self.oa)?;
        Ok(())
    }
}

fn mean_present(v: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = v.iter().flatten().copied().collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

/// One object for part segmentation scoring.
#[derive(Clone, Debug)]
pub struct PartObject {
    pub category: usize,
    /// Part labels that belong to this category.
    pub parts: Vec<usize>,
    pub truth: Vec<usize>,
    pub pred: Vec<usize>,
}

/// Part IoU of one object: mean over the category's parts; a part absent
/// from both truth and prediction scores 1.
pub fn object_part_iou(obj: &PartObject) -> Result<f64> {
    if obj.truth.len() != obj.pred.len() || obj.truth.is_empty() {
        bail!(InvalidInput, "object needs matching, non-empty truth and prediction");
    }
    if obj.parts.is_empty() {
        bail!(InvalidInput, "category {} has no parts", obj.category);
    }
    let mut sum = 0.0;
    for &part in &obj.parts {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&t, &p) in obj.truth.iter().zip(&obj.pred) {
            let (a, b) = (t == part, p == part);
            inter += usize::from(a && b);
            union += usize::from(a || b);
        }
        sum += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    }
    Ok(sum / obj.parts.len() as f64)
}

/// `(category mIoU, instance mIoU)`: mean over categories of the per-category
/// mean object IoU, and mean over all objects.
pub fn part_miou(objects: &[PartObject]) -> Result<(f64, f64)> {
    if objects.is_empty() {
        bail!(InvalidInput, "no objects to score");
    }
    let mut by_cat: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
    let mut all = Vec::with_capacity(objects.len());
    for o in objects {
        let iou = object_part_iou(o)?;
        by_cat.entry(o.category).or_default().push(iou);
        all.push(iou);
    }
    let cat = by_cat.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).sum::<f64>() / by_cat.len() as f64;
    let ins = all.iter().sum::<f64>() / all.len() as f64;
    Ok((cat, ins))
}
