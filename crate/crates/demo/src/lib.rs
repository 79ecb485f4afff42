//! Browser bindings. Every call returns a JSON string for the page to parse.

pub mod session;

use wasm_bindgen::prelude::*;

use crate::session::{stick_report, Session};

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, JsError> {
    serde_json::to_string(value).map_err(|e| JsError::new(&e.to_string()))
}

/// Synthetic corpus plus a training run that advances on request.
#[wasm_bindgen]
pub struct Demo {
    inner: Session,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, images: u32) -> Result<Demo, JsError> {
        Session::new(seed.into(), images as usize)
            .map(|inner| Demo { inner })
            .map_err(|e| JsError::new(&e.to_string()))
    }

    /// Runs `sweeps` coordinate sweeps; returns the objective trace and factor cosines.
    pub fn step(&mut self, sweeps: u32) -> Result<String, JsError> {
        to_json(&self.inner.step(sweeps as usize))
    }

    /// `pairs` is a flat list `[object, attribute, object, attribute, ...]`.
    #[wasm_bindgen(js_name = annotatePlanted)]
    pub fn annotate_planted(&self, pairs: &[u32], seed: u32) -> Result<String, JsError> {
        if pairs.len() % 2 != 0 {
            return Err(JsError::new("pairs must have even length"));
        }
        let pairs: Vec<(usize, usize)> = pairs
            .chunks(2)
            .map(|c| (c[0] as usize, c[1] as usize))
            .collect();
        let report = self
            .inner
            .annotate_planted(&pairs, seed.into())
            .map_err(|e| JsError::new(&e.to_string()))?;
        to_json(&report)
    }
}

/// `tau` is a flat list `[a_1, b_1, a_2, b_2, ...]`; `m` is the 1-based level.
#[wasm_bindgen(js_name = stickBound)]
pub fn stick_bound(tau: &[f64], m: u32) -> Result<String, JsError> {
    if tau.len() % 2 != 0 {
        return Err(JsError::new("tau must have even length"));
    }
    let pairs: Vec<(f64, f64)> = tau.chunks(2).map(|c| (c[0], c[1])).collect();
    let report = stick_report(&pairs, m as usize).map_err(|e| JsError::new(&e.to_string()))?;
    to_json(&report)
}
