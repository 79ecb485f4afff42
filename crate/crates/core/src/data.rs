//! Domain types and on-disk formats.
//!
//! Factor indices are zero-based throughout: `0..k_o` are objects,
//! `k_o..k_o + k_a` are attributes and `k_o + k_a..k_max` are background.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorLayout {
    pub k_o: usize,
    pub k_a: usize,
    pub k_max: usize,
    pub d: usize,
}

impl FactorLayout {
    pub fn new(k_o: usize, k_a: usize, k_max: usize, d: usize) -> Result<Self> {
        let layout = Self { k_o, k_a, k_max, d };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_o == 0 {
            return Err(Error::Layout("k_o must be at least 1".into()));
        }
        if self.d == 0 {
            return Err(Error::Layout("d must be at least 1".into()));
        }
        if self.k_max <= self.k_o + self.k_a {
            return Err(Error::Layout(format!(
                "k_max ({}) must exceed k_o + k_a ({}) so background factors exist",
                self.k_max,
                self.k_o + self.k_a
            )));
        }
        Ok(())
    }

    /// Number of annotated (object + attribute) factors.
    #[inline]
    pub fn k_oa(&self) -> usize {
        self.k_o + self.k_a
    }

    pub fn objects(&self) -> Range<usize> {
        0..self.k_o
    }

    pub fn attributes(&self) -> Range<usize> {
        self.k_o..self.k_oa()
    }

    pub fn background(&self) -> Range<usize> {
        self.k_oa()..self.k_max
    }

    pub fn is_object(&self, k: usize) -> bool {
        k < self.k_o
    }

    pub fn is_attribute(&self, k: usize) -> bool {
        (self.k_o..self.k_oa()).contains(&k)
    }

    /// Expands image-level annotations to a `k_max` mask. Background factors
    /// are always allowed; `None` (test time) allows everything.
    pub fn effective_labels(&self, labels: Option<&[bool]>) -> Vec<bool> {
        let mut mask = vec![true; self.k_max];
        if let Some(labels) = labels {
            mask[..self.k_oa()].copy_from_slice(&labels[..self.k_oa()]);
        }
        mask
    }
}

/// One image: a bag of patch feature vectors with optional weak labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBag {
    pub id: String,
    pub patches: Mat,
    pub labels: Option<Vec<bool>>,
}

impl ImageBag {
    pub fn new(id: impl Into<String>, patches: Mat, labels: Option<Vec<bool>>) -> Self {
        Self {
            id: id.into(),
            patches,
            labels,
        }
    }

    #[inline]
    pub fn n_patches(&self) -> usize {
        self.patches.rows()
    }

    pub fn validate(&self, layout: &FactorLayout) -> Result<()> {
        let bad = |msg: String| Error::Bag {
            id: self.id.clone(),
            msg,
        };
        if self.patches.rows() == 0 {
            return Err(bad("bag has no patches".into()));
        }
        if self.patches.cols() != layout.d {
            return Err(bad(format!(
                "patch dimension {} does not match layout d = {}",
                self.patches.cols(),
                layout.d
            )));
        }
        if let Some((j, _)) = self
            .patches
            .iter_rows()
            .enumerate()
            .find(|(_, r)| r.iter().any(|x| !x.is_finite()))
        {
            return Err(bad(format!("patch {j} has a non-finite feature value")));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != layout.k_oa() {
                return Err(bad(format!(
                    "label vector has length {} but k_o + k_a = {}",
                    labels.len(),
                    layout.k_oa()
                )));
            }
        }
        Ok(())
    }

    pub fn effective_labels(&self, layout: &FactorLayout) -> Vec<bool> {
        layout.effective_labels(self.labels.as_deref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub alpha: f64,
    pub sigma: f64,
    pub sigma_a: f64,
}

impl Default for Prior {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            sigma: 0.5,
            sigma_a: 1.0,
        }
    }
}

impl Prior {
    pub fn new(alpha: f64, sigma: f64, sigma_a: f64) -> Result<Self> {
        let p = Self {
            alpha,
            sigma,
            sigma_a,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("sigma", self.sigma),
            ("sigma_a", self.sigma_a),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Hyper(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Fixed model parameters plus the training schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub prior: Prior,
    pub max_sweeps: usize,
    /// Relative objective change below which training stops.
    pub tol: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            prior: Prior::default(),
            max_sweeps: 200,
            tol: 1e-5,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        if self.max_sweeps == 0 {
            return Err(Error::Hyper("max_sweeps must be positive".into()));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::Hyper(format!("tol must be >= 0, got {}", self.tol)));
        }
        Ok(())
    }
}

/// A trained model: appearance posteriors `N(phi_k, phi_var_k * I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub layout: FactorLayout,
    pub prior: Prior,
    pub phi: Mat,
    pub phi_var: Vec<f64>,
}

impl Model {
    pub fn validate(&self) -> Result<()> {
        self.layout.validate().map_err(|e| Error::Model(e.to_string()))?;
        self.prior.validate().map_err(|e| Error::Model(e.to_string()))?;
        let l = &self.layout;
        if self.phi.rows() != l.k_max || self.phi.cols() != l.d {
            return Err(Error::Model(format!(
                "phi is {}x{}, expected {}x{}",
                self.phi.rows(),
                self.phi.cols(),
                l.k_max,
                l.d
            )));
        }
        if self.phi_var.len() != l.k_max {
            return Err(Error::Model(format!(
                "phi_var has {} entries, expected {}",
                self.phi_var.len(),
                l.k_max
            )));
        }
        if self.phi.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(Error::Model("phi has non-finite entries".into()));
        }
        let cap = self.prior.sigma_a * self.prior.sigma_a;
        if let Some((k, c)) = self
            .phi_var
            .iter()
            .enumerate()
            .find(|(_, &c)| !(c > 0.0 && c <= cap))
        {
            return Err(Error::Model(format!(
                "phi_var[{k}] = {c} outside (0, sigma_a^2 = {cap}]"
            )));
        }
        Ok(())
    }
}

/// Per-image posterior: sticks, assignment probabilities and `E[pi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub tau: Vec<(f64, f64)>,
    pub nu: Mat,
    pub pi_mean: Vec<f64>,
}

impl PosteriorSummary {
    pub fn from_parts(tau: Vec<(f64, f64)>, nu: Mat) -> Self {
        let pi_mean = pi_mean(&tau);
        Self { tau, nu, pi_mean }
    }

    pub fn n_patches(&self) -> usize {
        self.nu.rows()
    }

    /// Probability that factor `k` is active on at least one patch: `1 - prod_j (1 - nu_jk)`.
    pub fn presence(&self, k: usize) -> f64 {
        1.0 - self.nu.iter_rows().map(|r| 1.0 - r[k]).product::<f64>()
    }
}

/// `E[pi_k] = prod_{t<=k} tau_t1 / (tau_t1 + tau_t2)`.
pub fn pi_mean(tau: &[(f64, f64)]) -> Vec<f64> {
    tau.iter()
        .scan(1.0, |acc, &(a, b)| {
            *acc *= a / (a + b);
            Some(*acc)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Dataset: JSON lines.

#[derive(Serialize, Deserialize)]
struct BagLine {
    id: String,
    patches: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<u8>>,
}

fn parse_bag_line(text: &str, layout: &FactorLayout) -> std::result::Result<ImageBag, String> {
    let raw: BagLine = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let patches =
        Mat::from_rows(&raw.patches).ok_or_else(|| "patch vectors have differing lengths".to_string())?;
    let labels = match raw.labels {
        None => None,
        Some(v) => Some(
            v.into_iter()
                .map(|x| match x {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(format!("label entry {other} is not 0 or 1")),
                })
                .collect::<std::result::Result<Vec<_>, _>>()?,
        ),
    };
    let bag = ImageBag::new(raw.id, patches, labels);
    bag.validate(layout).map_err(|e| match e {
        Error::Bag { msg, .. } => msg,
        other => other.to_string(),
    })?;
    Ok(bag)
}

/// Reads a JSON-lines dataset; blank lines are skipped.
pub fn load_dataset(path: impl AsRef<Path>, layout: &FactorLayout) -> Result<Vec<ImageBag>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut bags = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bag = parse_bag_line(&line, layout).map_err(|msg| Error::Line {
            path: path.to_path_buf(),
            line: idx + 1,
            msg,
        })?;
        bags.push(bag);
    }
    Ok(bags)
}

pub fn write_dataset(path: impl AsRef<Path>, bags: &[ImageBag]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for bag in bags {
        let line = BagLine {
            id: bag.id.clone(),
            patches: bag.patches.to_rows(),
            labels: bag
                .labels
                .as_ref()
                .map(|l| l.iter().map(|&b| u8::from(b)).collect()),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Model file: JSON.

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u64,
    layout: FactorLayout,
    hyper: Prior,
    phi: Mat,
    phi_var: Vec<f64>,
}

pub fn model_to_json(model: &Model) -> Result<String> {
    model.validate()?;
    let file = ModelFile {
        version: MODEL_VERSION.into(),
        layout: model.layout,
        hyper: model.prior,
        phi: model.phi.clone(),
        phi_var: model.phi_var.clone(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn model_from_json(text: &str) -> Result<Model> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Payload(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Payload("missing or non-integer version tag".into()))?;
    if version != u64::from(MODEL_VERSION) {
        return Err(Error::Version {
            expected: MODEL_VERSION,
            found: version,
        });
    }
    let file: ModelFile =
        serde_json::from_value(value).map_err(|e| Error::Payload(e.to_string()))?;
    let model = Model {
        layout: file.layout,
        prior: file.hyper,
        phi: file.phi,
        phi_var: file.phi_var,
    };
    model.validate().map_err(|e| Error::Payload(e.to_string()))?;
    Ok(model)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let text = model_to_json(model)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    model_from_json(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Posterior batches: JSON lines.

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorRecord {
    pub id: String,
    pub post: PosteriorSummary,
}

#[derive(Serialize, Deserialize)]
struct PosteriorLine {
    id: String,
    pi_mean: Vec<f64>,
    nu: Mat,
    tau: Vec<(f64, f64)>,
}

pub fn write_posteriors(path: impl AsRef<Path>, records: &[PosteriorRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        let line = PosteriorLine {
            id: r.id.clone(),
            pi_mean: r.post.pi_mean.clone(),
            nu: r.post.nu.clone(),
            tau: r.post.tau.clone(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_posteriors(path: impl AsRef<Path>) -> Result<Vec<PosteriorRecord>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Line {
            path: path.to_path_buf(),
            line: idx + 1,
            msg,
        };
        let raw: PosteriorLine = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if raw.pi_mean.len() != raw.nu.cols() || raw.tau.len() != raw.nu.cols() {
            return Err(err("pi_mean, tau and nu columns disagree in length".into()));
        }
        out.push(PosteriorRecord {
            id: raw.id,
            post: PosteriorSummary {
                tau: raw.tau,
                nu: raw.nu,
                pi_mean: raw.pi_mean,
            },
        });
    }
    Ok(out)
}
