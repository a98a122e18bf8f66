//! wasm-bindgen exports for the static demo page in `www/`.

pub mod demo;

use wasm_bindgen::prelude::*;

fn js<T>(r: Result<T, String>) -> Result<T, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = tauCurves)]
pub fn tau_curves(ps: &[f64], points: usize) -> Result<Vec<f64>, JsValue> {
    js(demo::tau_curves(ps, points))
}

#[wasm_bindgen(js_name = ratioSurface)]
pub fn ratio_surface(n: usize, steps: usize, upper: bool) -> Result<Vec<f64>, JsValue> {
    js(demo::surface(n, steps, upper))
}

/// Newline-separated captions of the toy grammar.
#[wasm_bindgen]
pub fn captions() -> String {
    demo::captions().join("\n")
}

/// Marked and retained text joined by a newline.
#[wasm_bindgen(js_name = corruptCaption)]
pub fn corrupt_caption(index: usize, tau: f64, seed: u32) -> Result<String, JsValue> {
    js(demo::corrupt_caption(index, tau, seed.into()).map(|(m, r)| format!("{m}\n{r}")))
}

#[wasm_bindgen(js_name = retainedLengths)]
pub fn retained_lengths(len: usize, tau: f64, draws: usize, seed: u32) -> Result<Vec<f64>, JsValue> {
    js(demo::retained_lengths(len, tau, draws, seed.into()))
}

#[wasm_bindgen(js_name = mseCheck)]
pub fn mse_check(n: usize, sigma: f64, samples: usize, seed: u32) -> Result<Vec<f64>, JsValue> {
    js(demo::mse_check(n, sigma, samples, seed.into()))
}

#[wasm_bindgen(js_name = ceCheck)]
pub fn ce_check(n: usize, mu: f64, samples: usize, seed: u32) -> Result<Vec<f64>, JsValue> {
    js(demo::ce_check(n, mu, samples, seed.into()))
}
