//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Point data crosses the boundary as flat `[x0, y0, z0, x1, ...]` arrays.
//! The plain functions in [`demo`] do the work and are what the native tests
//! exercise; the `#[wasm_bindgen]` wrappers only convert errors.

use wasm_bindgen::prelude::*;

pub mod demo;

fn js_err(e: demo::DemoError) -> JsError {
    JsError::new(&e.to_string())
}

/// Synthetic three-class scene as `[x, y, z, label]` per point.
#[wasm_bindgen]
pub fn demo_scene(n: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    demo::scene(n, seed).map_err(js_err)
}

/// Indices of `m` farthest-point samples, in selection order.
#[wasm_bindgen]
pub fn fps(xyz: &[f64], m: usize, start: usize) -> Result<Vec<u32>, JsError> {
    demo::fps(xyz, m, start).map_err(js_err)
}

/// The `k` nearest neighbours of point `query` (itself first).
#[wasm_bindgen]
pub fn knn(xyz: &[f64], query: usize, k: usize) -> Result<Vec<u32>, JsError> {
    demo::knn(xyz, query, k).map_err(js_err)
}

/// Attention weights of a randomly initialised layer for point `query`,
/// averaged over channels and aligned with `knn(xyz, query, k)`.
#[wasm_bindgen]
pub fn attention_weights(
    xyz: &[f64],
    labels: &[u32],
    query: usize,
    k: usize,
    operator: &str,
    seed: u64,
) -> Result<Vec<f64>, JsError> {
    demo::attention_weights(xyz, labels, query, k, operator, seed).map_err(js_err)
}
