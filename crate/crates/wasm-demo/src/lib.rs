//! Browser bindings: an fBm path, an expansion curve and a single moment.
//!
//! Each export is a thin wrapper over a plain function so the logic can be
//! tested without a JavaScript host.

use fracdev_core::expansion_engine::{DefaultMoments, ExpansionPlan};
use fracdev_core::fbm_sim::sample_fbm;
use fracdev_core::gaussian_moments::{expected_iterated_integral, MomentOptions};
use fracdev_core::symexpr::SdeSpec;
use wasm_bindgen::prelude::*;

/// Values of a scalar fBm on `steps + 1` equally spaced points of [0, 1].
pub fn fbm_values(hurst: f64, steps: usize, seed: u64) -> Result<Vec<f64>, String> {
    let p = sample_fbm(hurst, steps, 1, 1.0, seed).map_err(|e| e.to_string())?;
    Ok(p.values)
}

/// The order-`order` expansion of `P_t f(a)` evaluated at each `t`.
pub fn expansion_values(spec_json: &str, order: usize, ts: &[f64]) -> Result<Vec<f64>, String> {
    let spec = SdeSpec::from_json(spec_json).map_err(|e| e.to_string())?;
    let provider = DefaultMoments::from_spec(&spec);
    let e = ExpansionPlan::with_provider(&spec, order, &provider)
        .and_then(|mut plan| plan.expansion_at(&spec.a))
        .map_err(|e| e.to_string())?;
    Ok(ts.iter().map(|&t| e.evaluate(t)).collect())
}

/// Expected iterated integral of `word` over [0, 1]; letter 0 is time.
pub fn moment_value(word: &[usize], hurst: f64) -> Result<f64, String> {
    expected_iterated_integral(word, hurst, &MomentOptions::default())
        .map(|r| r.value)
        .map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn fbm_path(hurst: f64, steps: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    fbm_values(hurst, steps, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn expansion_curve(spec_json: &str, order: usize, ts: &[f64]) -> Result<Vec<f64>, JsError> {
    expansion_values(spec_json, order, ts).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn moment(word: &[u32], hurst: f64) -> Result<f64, JsError> {
    let w: Vec<usize> = word.iter().map(|&c| c as usize).collect();
    moment_value(&w, hurst).map_err(|e| JsError::new(&e))
}
