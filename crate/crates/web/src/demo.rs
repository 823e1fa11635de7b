use std::fmt;

use point_transformer::attention::{
    AttentionConfig, AttentionVariant, Operator, PointTransformerLayer,
};
use point_transformer::geometry::{fps_sample, knn_self, Point3};
use point_transformer::harness::{gen_scene, SceneSpec};
use point_transformer::nn::ValueGrid;
use point_transformer::rng;

/// Classes in the demo scene; labels are one-hot encoded as features.
pub const DEMO_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct DemoError(String);

impl fmt::Display for DemoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for DemoError {}

impl From<point_transformer::Error> for DemoError {
    fn from(e: point_transformer::Error) -> Self {
        DemoError(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, DemoError>;

pub fn unflatten(xyz: &[f64]) -> Result<Vec<Point3>> {
    if xyz.is_empty() || xyz.len() % 3 != 0 {
        return Err(DemoError(format!("expected a non-empty multiple of 3 coordinates, got {}", xyz.len())));
    }
    Ok(xyz.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

fn check_query(query: usize, n: usize) -> Result<()> {
    if query >= n {
        return Err(DemoError(format!("query {query} out of range for {n} points")));
    }
    Ok(())
}

pub fn scene(n: usize, seed: u64) -> Result<Vec<f64>> {
    let spec = SceneSpec::stacked(DEMO_CLASSES, n, 0.02, seed);
    let s = gen_scene(&spec)?;
    let mut out = Vec::with_capacity(4 * n);
    for (p, &l) in s.cloud.positions().iter().zip(s.labels()) {
        out.extend_from_slice(p);
        out.push(l as f64);
    }
    Ok(out)
}

pub fn fps(xyz: &[f64], m: usize, start: usize) -> Result<Vec<u32>> {
    let pts = unflatten(xyz)?;
    Ok(fps_sample(&pts, m, start)?.selected.into_iter().map(|i| i as u32).collect())
}

pub fn knn(xyz: &[f64], query: usize, k: usize) -> Result<Vec<u32>> {
    let pts = unflatten(xyz)?;
    check_query(query, pts.len())?;
    // A single query only needs its own row, so search against the whole set.
    let table = point_transformer::geometry::knn_search(&pts, &pts[query..=query], k)?;
    let mut row: Vec<u32> = table.row(0).iter().map(|&i| i as u32).collect();
    // Duplicate points may outrank the query on index; put it first as knn_self does.
    if let Some(pos) = row.iter().position(|&i| i as usize == query) {
        row[..=pos].rotate_right(1);
    }
    Ok(row)
}

fn parse_operator(name: &str) -> Result<Operator> {
    Operator::ALL
        .into_iter()
        .find(|o| o.name() == name)
        .ok_or_else(|| DemoError(format!("unknown operator {name:?}")))
}

pub fn attention_weights(
    xyz: &[f64],
    labels: &[u32],
    query: usize,
    k: usize,
    operator: &str,
    seed: u64,
) -> Result<Vec<f64>> {
    let pts = unflatten(xyz)?;
    let n = pts.len();
    check_query(query, n)?;
    if labels.len() != n {
        return Err(DemoError(format!("{} labels for {n} points", labels.len())));
    }
    let d = 3 + DEMO_CLASSES;
    let mut x = ValueGrid::zeros(&[n, d]);
    for (i, (p, &l)) in pts.iter().zip(labels).enumerate() {
        let l = l as usize;
        if l >= DEMO_CLASSES {
            return Err(DemoError(format!("label {l} at point {i} exceeds {}", DEMO_CLASSES - 1)));
        }
        let row = &mut x.data_mut()[i * d..(i + 1) * d];
        row[..3].copy_from_slice(p);
        row[3 + l] = 1.0;
    }
    let variant = AttentionVariant { operator: parse_operator(operator)?, ..AttentionVariant::default() };
    let mut layer = PointTransformerLayer::new(AttentionConfig::new(d, k, variant)?, &mut rng::seeded(seed));
    let nbrs = knn_self(&pts, layer.effective_k(n))?;
    layer.forward(&x, &pts, &nbrs)?;
    let w = layer.last_weights().ok_or_else(|| DemoError(format!("operator {operator} has no weights")))?;
    let (kk, c) = (w.shape()[1], w.shape()[2]);
    let block = &w.data()[query * kk * c..(query + 1) * kk * c];
    Ok(block.chunks_exact(c).map(|ch| ch.iter().sum::<f64>() / c as f64).collect())
}
