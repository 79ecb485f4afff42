//! Demo operations as plain Rust; the wasm layer only forwards JSON.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use sibp::data::{FactorLayout, Hyperparams, ImageBag};
use sibp::infer::{infer, InferOptions};
use sibp::sampler::{plant_bag, sample_dataset, GenParams, GroundTruth};
use sibp::special::{stick_bound, stick_log_active};
use sibp::tasks::{annotate_given_names, free_annotate, ObjectSelection};
use sibp::train::{init_state, surrogate_objective, sweep, VariationalState};
use sibp::{Error, Result};

pub const K_O: usize = 3;
pub const K_A: usize = 4;
pub const K_BG: usize = 3;
pub const K_MAX: usize = 12;
pub const D: usize = 16;
pub const PATCHES: usize = 8;

/// A synthetic corpus with planted appearances and a training state over it.
pub struct Session {
    layout: FactorLayout,
    bags: Vec<ImageBag>,
    truth: GroundTruth,
    sigma: f64,
    state: VariationalState,
    trace: Vec<f64>,
    seed: u64,
}

#[derive(Debug, Serialize)]
pub struct Progress {
    pub sweeps: usize,
    pub trace: Vec<f64>,
    /// Cosine between each annotated factor's learned and planted appearance.
    pub cosines: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct NamedResult {
    pub object: usize,
    pub planted_attribute: usize,
    pub patch: usize,
    pub planted_patch: usize,
    pub attributes: Vec<(usize, f64)>,
    pub correct: bool,
}

#[derive(Debug, Serialize)]
pub struct PlantedReport {
    /// `nu` rows, one per patch.
    pub nu: Vec<Vec<f64>>,
    pub k_o: usize,
    pub k_a: usize,
    pub named: Vec<NamedResult>,
    /// Object chosen without names, with its located patch.
    pub free_object: usize,
    pub free_patch: usize,
}

#[derive(Debug, Serialize)]
pub struct StickReport {
    pub q: Vec<f64>,
    pub value: f64,
    pub log_active: f64,
    pub pi_mean: Vec<f64>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

impl Session {
    pub fn new(seed: u64, images: usize) -> Result<Self> {
        let layout = FactorLayout::new(K_O, K_A, K_MAX, D)?;
        let params = GenParams::well_separated(&layout, K_BG, images, PATCHES, seed)?;
        let (bags, truth) = sample_dataset(&layout, &params, seed)?;
        let hyper = Hyperparams { seed, ..Default::default() };
        let state = init_state(&bags, &layout, &hyper)?;
        let initial = surrogate_objective(&state, &bags, &hyper.prior);
        Ok(Self {
            layout,
            bags,
            truth,
            sigma: params.sigma,
            state,
            trace: vec![initial],
            seed,
        })
    }

    pub fn step(&mut self, sweeps: usize) -> Progress {
        for _ in 0..sweeps {
            let obj = sweep(&mut self.state, &self.bags);
            self.trace.push(obj);
        }
        self.progress()
    }

    pub fn progress(&self) -> Progress {
        let phi = self.state.phi();
        Progress {
            sweeps: self.trace.len() - 1,
            trace: self.trace.clone(),
            cosines: (0..self.layout.k_oa())
                .map(|k| cosine(phi.row(k), self.truth.a_true.row(k)))
                .collect(),
        }
    }

    /// Plants one patch per `(object, attribute)` pair among background patches,
    /// infers the bag with the current appearances, and annotates it.
    pub fn annotate_planted(&self, pairs: &[(usize, usize)], seed: u64) -> Result<PlantedReport> {
        let l = &self.layout;
        if pairs.is_empty() || pairs.len() > PATCHES {
            return Err(Error::Index(format!("need 1..={PATCHES} pairs")));
        }
        for &(o, a) in pairs {
            if !l.is_object(o) || !l.is_attribute(a) {
                return Err(Error::Index(format!("({o}, {a}) is not an (object, attribute) pair")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ self.seed.rotate_left(32));
        let background: Vec<usize> = (l.k_oa()..l.k_oa() + K_BG).collect();
        let mut plan: Vec<Vec<usize>> = (0..PATCHES)
            .map(|_| vec![*background.choose(&mut rng).expect("background factors")])
            .collect();
        // Planted pairs occupy spread-out patches.
        let slots: Vec<usize> = (0..pairs.len()).map(|i| (2 * i + 1) % PATCHES).collect();
        for (&(o, a), &slot) in pairs.iter().zip(&slots) {
            plan[slot] = vec![o, a];
        }
        let (bag, _) = plant_bag("planted", l, &self.truth.a_true, &plan, self.sigma, &mut rng);
        let post = infer(&self.state.to_model(), &bag, &InferOptions::default())?;
        let mut named = Vec::with_capacity(pairs.len());
        for (&(o, a), &slot) in pairs.iter().zip(&slots) {
            let ann = annotate_given_names(&post, l, o)?;
            named.push(NamedResult {
                object: o,
                planted_attribute: a,
                patch: ann.patch,
                planted_patch: slot,
                correct: ann.attributes.first().map(|x| x.0) == Some(a),
                attributes: ann.attributes,
            });
        }
        let free = free_annotate(&post, l, ObjectSelection::Top(1), 1)?;
        Ok(PlantedReport {
            nu: post.nu.to_rows(),
            k_o: l.k_o,
            k_a: l.k_a,
            named,
            free_object: free[0].object,
            free_patch: free[0].patch,
        })
    }
}

/// Optimal auxiliary distribution and bound for sticks `tau` at level `m`.
pub fn stick_report(tau: &[(f64, f64)], m: usize) -> Result<StickReport> {
    let bound = stick_bound(tau, m)?;
    Ok(StickReport {
        q: bound.q,
        value: bound.value,
        log_active: stick_log_active(tau, m)?,
        pi_mean: sibp::data::pi_mean(&tau[..m]),
    })
}
