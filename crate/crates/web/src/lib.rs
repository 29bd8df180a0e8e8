//! WebAssembly bindings for the single-page demo in `www/`.
//!
//! Every method returns a JSON string; errors surface as thrown JS errors.

pub mod demo;

use hr_sentinel::kv;
use serde::Serialize;
use wasm_bindgen::prelude::*;

pub use demo::Demo;

fn to_json<T: Serialize>(value: hr_sentinel::Result<T>) -> Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub struct WebDemo {
    inner: Demo,
}

#[wasm_bindgen]
impl WebDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> WebDemo {
        WebDemo {
            inner: Demo::new(seed as u64),
        }
    }

    #[wasm_bindgen(js_name = hasModel)]
    pub fn has_model(&self) -> bool {
        self.inner.has_model()
    }

    pub fn generate(&mut self, duration_s: u32, artifact_rate_per_hour: f64) -> Result<String, JsError> {
        to_json(self.inner.generate(duration_s as usize, artifact_rate_per_hour))
    }

    pub fn train(&mut self, max_epochs: u32) -> Result<String, JsError> {
        to_json(self.inner.train(max_epochs as usize))
    }

    pub fn label(&self, tau_a: f64, tau_b: f64) -> Result<String, JsError> {
        to_json(self.inner.label(tau_a, tau_b))
    }

    /// `taus` is a comma-separated list such as `"10,20,30"`.
    pub fn sweep(&self, taus: &str) -> Result<String, JsError> {
        let taus: Vec<f64> = kv::parse_list("taus", taus).map_err(|e| JsError::new(&e.to_string()))?;
        to_json(self.inner.sweep(&taus))
    }
}
