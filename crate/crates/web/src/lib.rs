//! WebAssembly bindings for the browser demo in `www/`.

pub mod session;

use wasm_bindgen::prelude::*;

use session::{HeldOut, Params, Session};

fn js_err(e: streetsafe_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn held_out_json(h: &HeldOut) -> serde_json::Value {
    serde_json::json!({ "r2": h.r2, "mae": h.mae })
}

/// A generated city with its tournament already run.
#[wasm_bindgen]
pub struct CityDemo(Session);

#[wasm_bindgen]
impl CityDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, points: usize, anchors: usize, opponents: usize, noise: f64) -> Result<CityDemo, JsError> {
        let params = Params { seed: seed.into(), points, anchors, opponents, noise };
        Session::build(params).map(CityDemo).map_err(js_err)
    }

    pub fn pairs(&self) -> usize {
        self.0.pairs()
    }

    pub fn spearman(&self) -> f64 {
        self.0.spearman()
    }

    /// Flat `[x, y, latent, ...]`.
    pub fn points(&self) -> Vec<f64> {
        self.0.points()
    }

    /// Flat `[x, y, score, ...]` for the anchor images.
    pub fn anchors(&self) -> Vec<f64> {
        self.0.anchors()
    }

    /// One K-NN score per point, aligned with `points()`.
    pub fn score(&self, k: usize) -> Result<Vec<f64>, JsError> {
        self.0.score(k).map_err(js_err)
    }

    /// `{"r2", "mae"}` on the held-out anchors.
    pub fn held_out(&self, k: usize) -> Result<String, JsError> {
        self.0.held_out(k).map(|h| held_out_json(&h).to_string()).map_err(js_err)
    }

    /// `[{"k", "r2", "mae"}, ...]` for K = 1..k_max.
    pub fn ablation(&self, k_max: usize) -> Result<String, JsError> {
        let rows = self.0.ablation(k_max).map_err(js_err)?;
        let out: Vec<_> = rows
            .iter()
            .map(|(k, h)| {
                let mut v = held_out_json(h);
                v["k"] = (*k).into();
                v
            })
            .collect();
        Ok(serde_json::Value::from(out).to_string())
    }
}
