//! Posterior inference for unlabeled bags with frozen appearances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{ImageBag, Model, PosteriorRecord, PosteriorSummary};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::train::{image_objective, image_pass, Appearance, EtaForm, FactorTerms, ImageState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    pub eta: EtaForm,
    /// Jitters the initial assignments (`0.1 +/- 0.05`) when set.
    pub seed: Option<u64>,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_sweeps: 100,
            eta: EtaForm::Expectation,
            seed: None,
        }
    }
}

/// Inference result with the per-bag objective after each sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub post: PosteriorSummary,
    pub trace: Vec<f64>,
}

fn frozen(model: &Model) -> Appearance {
    Appearance {
        phi: model.phi.clone(),
        phi_var: model.phi_var.clone(),
    }
}

/// Runs stick and assignment updates with every factor allowed.
pub fn infer_traced(model: &Model, bag: &ImageBag, opts: &InferOptions) -> Result<Inference> {
    infer_with(model, &frozen(model), bag, opts)
}

fn infer_with(model: &Model, app: &Appearance, bag: &ImageBag, opts: &InferOptions) -> Result<Inference> {
    let layout = &model.layout;
    if bag.patches.cols() != layout.d {
        return Err(Error::Dimension {
            expected: layout.d,
            found: bag.patches.cols(),
        });
    }
    if bag.n_patches() == 0 {
        return Err(Error::Bag {
            id: bag.id.clone(),
            msg: "bag has no patches".into(),
        });
    }
    let k_max = layout.k_max;
    let n = bag.n_patches();
    let nu = match opts.seed {
        None => Mat::filled(n, k_max, 0.1),
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Mat::from_flat(n, k_max, (0..n * k_max).map(|_| rng.random_range(0.05..0.15)).collect())
        }
    };
    let mut img = ImageState::new(
        vec![(model.prior.alpha, 1.0); k_max],
        nu,
        vec![true; k_max],
        &bag.patches,
        &app.phi,
    );
    let terms = FactorTerms::new(app, model.prior.sigma);
    let mut prev = image_objective(&img, &bag.patches, &app.phi, &terms, &model.prior);
    let mut trace = Vec::new();
    for _ in 0..opts.max_sweeps.max(1) {
        image_pass(&mut img, &app.phi, &terms, model.prior.alpha, opts.eta);
        let obj = image_objective(&img, &bag.patches, &app.phi, &terms, &model.prior);
        trace.push(obj);
        let rel = (obj - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
        prev = obj;
        if rel < opts.tol {
            break;
        }
    }
    Ok(Inference {
        post: PosteriorSummary::from_parts(img.tau, img.nu),
        trace,
    })
}

pub fn infer(model: &Model, bag: &ImageBag, opts: &InferOptions) -> Result<PosteriorSummary> {
    infer_traced(model, bag, opts).map(|r| r.post)
}

/// Infers every bag; with `threads > 1` bags run in parallel (results are identical).
pub fn infer_batch(
    model: &Model,
    bags: &[ImageBag],
    opts: &InferOptions,
    threads: usize,
) -> Result<Vec<PosteriorRecord>> {
    let app = frozen(model);
    let one = |bag: &ImageBag| {
        infer_with(model, &app, bag, opts).map(|r| PosteriorRecord {
            id: bag.id.clone(),
            post: r.post,
        })
    };
    #[cfg(feature = "parallel")]
    if threads > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool");
        return pool.install(|| bags.par_iter().map(one).collect());
    }
    let _ = threads;
    bags.iter().map(one).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FactorLayout, Prior};

    fn model() -> Model {
        let layout = FactorLayout::new(1, 1, 3, 2).unwrap();
        Model {
            layout,
            prior: Prior::default(),
            phi: Mat::from_flat(3, 2, vec![2.0, 0.0, 0.0, 2.0, -2.0, -2.0]),
            phi_var: vec![0.01, 0.01, 0.01],
        }
    }

    #[test]
    fn frozen_appearance_and_determinism() {
        let m = model();
        let before = m.clone();
        let bag = ImageBag::new("b", Mat::from_flat(2, 2, vec![2.1, 1.9, -2.0, -1.8]), None);
        let a = infer(&m, &bag, &InferOptions::default()).unwrap();
        let b = infer(&m, &bag, &InferOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(m, before);
        assert!(a.nu.get(0, 0) > 0.5 && a.nu.get(0, 1) > 0.5 && a.nu.get(1, 2) > 0.5);
        assert!(a.pi_mean.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn duplicate_patches_share_rows() {
        let bag = ImageBag::new("b", Mat::from_flat(3, 2, vec![0.3, 1.7, -2.0, 0.4, 0.3, 1.7]), None);
        let p = infer(&model(), &bag, &InferOptions::default()).unwrap();
        assert_eq!(p.nu.row(0), p.nu.row(2));
    }

    #[test]
    fn dimension_mismatch() {
        let bag = ImageBag::new("b", Mat::from_flat(1, 3, vec![0.0; 3]), None);
        assert!(matches!(
            infer(&model(), &bag, &InferOptions::default()),
            Err(Error::Dimension { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn objective_non_decreasing() {
        let bag = ImageBag::new("b", Mat::from_flat(3, 2, vec![1.0, 1.0, -2.0, 0.4, 0.3, 1.7]), None);
        let r = infer_traced(&model(), &bag, &InferOptions { tol: 0.0, max_sweeps: 30, ..Default::default() }).unwrap();
        for w in r.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-10 * w[0].abs());
        }
    }
}
