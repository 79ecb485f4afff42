//! Truncated mean-field coordinate ascent.
//!
//! Every image keeps a residual cache `R_j = X_j - sum_l nu_jl phi_l` so each
//! single-coordinate update of `nu` or `phi` costs `O(D)` per touched patch,
//! giving `O(M N D K)` per sweep.

use std::borrow::Cow;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{FactorLayout, Hyperparams, ImageBag, Model, Prior};
use crate::error::{Error, Result};
use crate::mat::{axpy, dot, Mat};
use crate::special::StickTable;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Assignment probabilities below this are stored as exactly zero. Smaller
/// values change the objective by far less than one ulp, and products of them
/// fall into the subnormal range, which is very slow on common hardware.
pub const NU_FLOOR: f64 = 1e-150;

/// Which form of the active-stick term enters the assignment logit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EtaForm {
    /// `sum_t psi(tau_t1) - psi(tau_t1 + tau_t2)`, the Beta log-expectation.
    #[default]
    Expectation,
    /// `sum_t psi(tau_t1) - psi(tau_t2)`. Kept for comparison; coordinate
    /// ascent is not guaranteed.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainOptions {
    pub eta: EtaForm,
    /// Worker threads for the per-image passes; 1 runs inline.
    pub threads: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            eta: EtaForm::Expectation,
            threads: 1,
        }
    }
}

/// Variational parameters of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageState {
    pub tau: Vec<(f64, f64)>,
    /// `N_i x K_max` assignment probabilities.
    pub nu: Mat,
    /// Effective labels: annotated factors from the weak labels, background always on.
    pub mask: Vec<bool>,
    resid: Mat,
    /// Stick expectations, rebuilt whenever the pass changes `tau`.
    sticks: StickTable,
}

impl ImageState {
    pub(crate) fn new(tau: Vec<(f64, f64)>, nu: Mat, mask: Vec<bool>, x: &Mat, phi: &Mat) -> Self {
        let mut s = Self {
            sticks: StickTable::new(&tau),
            tau,
            nu,
            mask,
            resid: Mat::zeros(x.rows(), x.cols()),
        };
        s.recompute_residuals(x, phi);
        s
    }

    /// The stick table for the current `tau`, cached unless `tau` was edited directly.
    pub(crate) fn sticks(&self) -> Cow<'_, StickTable> {
        if self.sticks.tau == self.tau {
            Cow::Borrowed(&self.sticks)
        } else {
            Cow::Owned(StickTable::new(&self.tau))
        }
    }

    fn refresh_sticks(&mut self) {
        if self.sticks.tau != self.tau {
            self.sticks = StickTable::new(&self.tau);
        }
    }

    pub fn residuals(&self) -> &Mat {
        &self.resid
    }

    pub(crate) fn recompute_residuals(&mut self, x: &Mat, phi: &Mat) {
        self.resid = fresh_residuals(x, &self.nu, phi);
    }
}

fn fresh_residuals(x: &Mat, nu: &Mat, phi: &Mat) -> Mat {
    let mut r = x.clone();
    for j in 0..x.rows() {
        let row = r.row_mut(j);
        for (k, &v) in nu.row(j).iter().enumerate() {
            if v != 0.0 {
                axpy(-v, phi.row(k), row);
            }
        }
    }
    r
}

/// Global appearance posteriors with derived per-factor quantities.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Appearance {
    pub phi: Mat,
    pub phi_var: Vec<f64>,
}

impl Appearance {
    /// `E||A_k||^2 = D c_k + ||phi_k||^2`.
    fn second_moment(&self, k: usize) -> f64 {
        let row = self.phi.row(k);
        self.phi.cols() as f64 * self.phi_var[k] + dot(row, row)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub layout: FactorLayout,
    pub prior: Prior,
    pub eta: EtaForm,
    pub images: Vec<ImageState>,
    pub(crate) app: Appearance,
    pub objective_trace: Vec<f64>,
}

impl VariationalState {
    pub fn phi(&self) -> &Mat {
        &self.app.phi
    }

    pub fn phi_var(&self) -> &[f64] {
        &self.app.phi_var
    }

    pub fn to_model(&self) -> Model {
        Model {
            layout: self.layout,
            prior: self.prior,
            phi: self.app.phi.clone(),
            phi_var: self.app.phi_var.clone(),
        }
    }

    /// Overwrites one assignment probability, keeping the residual cache consistent.
    pub fn set_nu(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let img = &mut self.images[i];
        let old = img.nu.get(j, k);
        img.nu.set(j, k, value);
        axpy(old - value, self.app.phi.row(k), img.resid.row_mut(j));
    }

    /// Overwrites one appearance mean coordinate, keeping every residual cache consistent.
    pub fn set_phi(&mut self, k: usize, dim: usize, value: f64) {
        let old = self.app.phi.get(k, dim);
        self.app.phi.set(k, dim, value);
        for img in &mut self.images {
            for j in 0..img.nu.rows() {
                let v = img.nu.get(j, k);
                if v != 0.0 {
                    let r = img.resid.get(j, dim) - v * (value - old);
                    img.resid.set(j, dim, r);
                }
            }
        }
    }

    pub fn set_tau(&mut self, i: usize, tau: Vec<(f64, f64)>) {
        assert_eq!(tau.len(), self.layout.k_max);
        self.images[i].tau = tau;
    }

    /// Largest absolute gap between the residual caches and a from-scratch recomputation.
    pub fn residual_drift(&self, data: &[ImageBag]) -> f64 {
        self.images
            .iter()
            .zip(data)
            .map(|(img, bag)| {
                let fresh = fresh_residuals(&bag.patches, &img.nu, &self.app.phi);
                fresh
                    .as_slice()
                    .iter()
                    .zip(img.resid.as_slice())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

fn check_training_set(data: &[ImageBag], layout: &FactorLayout) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Domain("training set is empty".into()));
    }
    for bag in data {
        bag.validate(layout)?;
        if bag.labels.is_none() {
            return Err(Error::Bag {
                id: bag.id.clone(),
                msg: "training bags must carry labels".into(),
            });
        }
    }
    Ok(())
}

/// Prior sticks, `nu_jk = L_k * U(0.05, 0.15)` and `phi ~ N(0, 0.01 sigma_A^2)`.
pub fn init_state(
    data: &[ImageBag],
    layout: &FactorLayout,
    hyper: &Hyperparams,
) -> Result<VariationalState> {
    layout.validate()?;
    hyper.validate()?;
    check_training_set(data, layout)?;
    let prior = hyper.prior;
    let k_max = layout.k_max;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);

    let normal = Normal::new(0.0, 0.1 * prior.sigma_a).expect("positive std");
    let phi = Mat::from_flat(
        k_max,
        layout.d,
        (0..k_max * layout.d).map(|_| normal.sample(&mut rng)).collect(),
    );
    let app = Appearance {
        phi,
        phi_var: vec![prior.sigma_a * prior.sigma_a; k_max],
    };

    let images = data
        .iter()
        .map(|bag| {
            let mask = bag.effective_labels(layout);
            let n = bag.n_patches();
            let mut nu = Mat::zeros(n, k_max);
            for j in 0..n {
                for (k, &on) in mask.iter().enumerate() {
                    let u: f64 = rng.random_range(0.05..0.15);
                    if on {
                        nu.set(j, k, u);
                    }
                }
            }
            ImageState::new(vec![(prior.alpha, 1.0); k_max], nu, mask, &bag.patches, &app.phi)
        })
        .collect();

    Ok(VariationalState {
        layout: *layout,
        prior,
        eta: EtaForm::Expectation,
        images,
        app,
        objective_trace: Vec::new(),
    })
}

/// Closed-form update of `q(A_k)` followed by the residual correction.
pub fn update_appearance(state: &mut VariationalState, k: usize) {
    let d = state.layout.d;
    let inv_s2 = 1.0 / (state.prior.sigma * state.prior.sigma);
    let inv_sa2 = 1.0 / (state.prior.sigma_a * state.prior.sigma_a);
    let old = state.app.phi.row(k).to_vec();

    let mut acc = vec![0.0; d];
    let mut mass = 0.0;
    for img in &state.images {
        debug_assert_eq!(img.nu.cols(), state.layout.k_max);
        for j in 0..img.nu.rows() {
            let v = img.nu.get(j, k);
            if v == 0.0 {
                continue;
            }
            mass += v;
            // nu_jk (X_j - sum_{l != k} nu_jl phi_l) = nu_jk (R_j + nu_jk phi_k)
            let r = img.resid.row(j);
            for ((a, &rj), &o) in acc.iter_mut().zip(r).zip(&old) {
                *a += v * (rj + v * o);
            }
        }
    }
    let precision = inv_sa2 + inv_s2 * mass;
    let var = 1.0 / precision;
    let new: Vec<f64> = acc.iter().map(|a| inv_s2 * a * var).collect();
    let delta: Vec<f64> = new.iter().zip(&old).map(|(n, o)| n - o).collect();

    for img in &mut state.images {
        for j in 0..img.nu.rows() {
            let v = img.nu.get(j, k);
            if v != 0.0 {
                axpy(-v, &delta, img.resid.row_mut(j));
            }
        }
    }
    state.app.phi.row_mut(k).copy_from_slice(&new);
    state.app.phi_var[k] = var;
}

/// Per-factor activation mass `sum_j nu_jk`.
fn factor_mass(nu: &Mat) -> Vec<f64> {
    let mut mass = vec![0.0; nu.cols()];
    for row in nu.iter_rows() {
        for (m, &v) in mass.iter_mut().zip(row) {
            *m += v;
        }
    }
    mass
}

/// Stick update for one image given `q` from the current (pre-update) sticks.
///
/// With `S_k = sum_{m>=k} nbar_m exp(lse_k - lse_m)` both sums collapse to
/// suffix recurrences, so all `K` sticks cost `O(K)`.
pub(crate) fn stick_pass(tau: &mut [(f64, f64)], table: &StickTable, nu: &Mat, alpha: f64) {
    debug_assert_eq!(table.tau, tau);
    let k_max = tau.len();
    let n = nu.rows() as f64;
    let mass = factor_mass(nu);

    // s[k] = S_k; suffix sums of nu mass and of nbar.
    let mut s = vec![0.0; k_max + 1];
    let mut mass_tail = vec![0.0; k_max + 1];
    let mut nbar_tail = vec![0.0; k_max + 1];
    for k in (0..k_max).rev() {
        let nbar = (n - mass[k]).max(0.0);
        let carry = if k + 1 < k_max {
            (table.lse[k] - table.lse[k + 1]).exp() * s[k + 1]
        } else {
            0.0
        };
        s[k] = nbar + carry;
        mass_tail[k] = mass_tail[k + 1] + mass[k];
        nbar_tail[k] = nbar_tail[k + 1] + nbar;
    }
    for k in 0..k_max {
        let q_kk_scale = (table.raw[k] - table.lse[k]).exp();
        let t2 = 1.0 + q_kk_scale * s[k];
        let beyond = if k + 1 < k_max {
            let covered = (table.lse[k] - table.lse[k + 1]).exp() * s[k + 1];
            (nbar_tail[k + 1] - covered).max(0.0)
        } else {
            0.0
        };
        let t1 = alpha + mass_tail[k] + beyond;
        tau[k] = (t1, t2);
    }
}

/// Stick update as a pure function of one image's sticks and assignments.
pub fn stick_update(tau: &[(f64, f64)], nu: &Mat, alpha: f64) -> Vec<(f64, f64)> {
    let mut out = tau.to_vec();
    stick_pass(&mut out, &StickTable::new(tau), nu, alpha);
    out
}

/// Updates `tau` for image `i` (all sticks, `q` from the pre-update sticks).
pub fn update_sticks(state: &mut VariationalState, i: usize) {
    let alpha = state.prior.alpha;
    let img = &mut state.images[i];
    let table = img.sticks().into_owned();
    stick_pass(&mut img.tau, &table, &img.nu, alpha);
    img.refresh_sticks();
}

/// Per-factor constants shared by every assignment update in a pass.
pub(crate) struct FactorTerms {
    /// `D c_k + ||phi_k||^2`
    second: Vec<f64>,
    /// `||phi_k||^2`
    sq: Vec<f64>,
    half_inv_s2: f64,
}

impl FactorTerms {
    pub(crate) fn new(app: &Appearance, sigma: f64) -> Self {
        let k_max = app.phi.rows();
        Self {
            second: (0..k_max).map(|k| app.second_moment(k)).collect(),
            sq: (0..k_max)
                .map(|k| dot(app.phi.row(k), app.phi.row(k)))
                .collect(),
            half_inv_s2: 0.5 / (sigma * sigma),
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn assign_one(
    nu: &mut Mat,
    resid: &mut Mat,
    phi: &Mat,
    terms: &FactorTerms,
    prior_logit: f64,
    allowed: bool,
    j: usize,
    k: usize,
) {
    let old = nu.get(j, k);
    let new = if allowed {
        let phi_k = phi.row(k);
        // phi_k . (X_j - sum_{l != k} nu_jl phi_l) = phi_k . R_j + nu_jk ||phi_k||^2
        let cross = dot(phi_k, resid.row(j)) + old * terms.sq[k];
        let eta = prior_logit - terms.half_inv_s2 * (terms.second[k] - 2.0 * cross);
        let p = sigmoid(eta);
        if p < NU_FLOOR {
            0.0
        } else {
            p
        }
    } else {
        0.0
    };
    if new != old {
        nu.set(j, k, new);
        axpy(old - new, phi.row(k), resid.row_mut(j));
    }
}

/// Stick-dependent part of the assignment logit for every factor.
pub(crate) fn prior_logits(tau: &[(f64, f64)], eta: EtaForm) -> Vec<f64> {
    table_logits(&StickTable::new(tau), eta)
}

fn table_logits(table: &StickTable, eta: EtaForm) -> Vec<f64> {
    let active = match eta {
        EtaForm::Expectation => &table.elog_pi,
        EtaForm::Literal => &table.elog_pi_literal,
    };
    active.iter().zip(&table.lse).map(|(a, b)| a - b).collect()
}

/// The assignment logit for factor `k` (zero-based) of a patch whose
/// leave-one-out residual `X_j - sum_{l != k} nu_jl phi_l` is `target`.
pub fn assignment_logit(
    tau: &[(f64, f64)],
    k: usize,
    phi_k: &[f64],
    phi_var_k: f64,
    target: &[f64],
    sigma: f64,
    eta: EtaForm,
) -> f64 {
    let logits = prior_logits(tau, eta);
    let second = phi_k.len() as f64 * phi_var_k + dot(phi_k, phi_k);
    logits[k] - (second - 2.0 * dot(phi_k, target)) / (2.0 * sigma * sigma)
}

/// Assignment update for a single `(i, j, k)`.
pub fn update_assignments(state: &mut VariationalState, i: usize, j: usize, k: usize) {
    let terms = FactorTerms::new(&state.app, state.prior.sigma);
    let logits = table_logits(&state.images[i].sticks(), state.eta);
    let img = &mut state.images[i];
    let allowed = img.mask[k];
    assign_one(
        &mut img.nu,
        &mut img.resid,
        &state.app.phi,
        &terms,
        logits[k],
        allowed,
        j,
        k,
    );
}

/// Sticks, then every patch and factor, for one image.
pub(crate) fn image_pass(
    img: &mut ImageState,
    phi: &Mat,
    terms: &FactorTerms,
    alpha: f64,
    eta: EtaForm,
) {
    img.refresh_sticks();
    stick_pass(&mut img.tau, &img.sticks, &img.nu, alpha);
    img.sticks = StickTable::new(&img.tau);
    let logits = table_logits(&img.sticks, eta);
    let k_max = img.mask.len();
    for j in 0..img.nu.rows() {
        for k in 0..k_max {
            if !img.mask[k] && img.nu.get(j, k) == 0.0 {
                continue;
            }
            assign_one(
                &mut img.nu,
                &mut img.resid,
                phi,
                terms,
                logits[k],
                img.mask[k],
                j,
                k,
            );
        }
    }
}

#[inline]
fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Image-local part of the surrogate objective: stick prior and entropy,
/// assignment prior and entropy, and the expected Gaussian likelihood.
pub(crate) fn image_objective(
    img: &ImageState,
    x: &Mat,
    phi: &Mat,
    terms: &FactorTerms,
    prior: &Prior,
) -> f64 {
    let d = x.cols() as f64;
    let table = img.sticks();
    let alpha = prior.alpha;
    let sigma2 = prior.sigma * prior.sigma;

    let mut total = 0.0;
    for k in 0..img.tau.len() {
        total += alpha.ln() + (alpha - 1.0) * table.elog_v[k] + table.entropy[k];
    }

    let mut r = vec![0.0; x.cols()];
    for j in 0..x.rows() {
        r.copy_from_slice(x.row(j));
        let mut extra = 0.0;
        for (k, &v) in img.nu.row(j).iter().enumerate() {
            if img.mask[k] {
                total += v * table.elog_pi[k] + (1.0 - v) * table.lse[k];
                total -= xlogx(v) + xlogx(1.0 - v);
            }
            if v != 0.0 {
                axpy(-v, phi.row(k), &mut r);
                // Var of the Bernoulli-weighted Gaussian row beyond the mean term.
                extra += v * terms.second[k] - v * v * terms.sq[k];
            }
        }
        let expected_sq = dot(&r, &r) + extra;
        total += -0.5 * d * (LN_2PI + sigma2.ln()) - expected_sq / (2.0 * sigma2);
    }
    total
}

fn appearance_objective(app: &Appearance, prior: &Prior) -> f64 {
    let d = app.phi.cols() as f64;
    let sa2 = prior.sigma_a * prior.sigma_a;
    (0..app.phi.rows())
        .map(|k| {
            let log_prior = -0.5 * d * (LN_2PI + sa2.ln()) - app.second_moment(k) / (2.0 * sa2);
            let entropy = 0.5 * d * (LN_2PI + 1.0 + app.phi_var[k].ln());
            log_prior + entropy
        })
        .sum()
}

/// Evidence lower bound with the multinomial stick bound, truncated at `K_max`.
pub fn surrogate_objective(state: &VariationalState, data: &[ImageBag], prior: &Prior) -> f64 {
    let terms = FactorTerms::new(&state.app, prior.sigma);
    let per_image: Vec<f64> = state
        .images
        .iter()
        .zip(data)
        .map(|(img, bag)| image_objective(img, &bag.patches, &state.app.phi, &terms, prior))
        .collect();
    per_image.iter().sum::<f64>() + appearance_objective(&state.app, prior)
}

fn per_image_pass(state: &mut VariationalState, threads: usize) {
    let terms = FactorTerms::new(&state.app, state.prior.sigma);
    let (alpha, eta) = (state.prior.alpha, state.eta);
    let phi = &state.app.phi;
    #[cfg(feature = "parallel")]
    if threads > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool");
        pool.install(|| {
            state
                .images
                .par_iter_mut()
                .for_each(|img| image_pass(img, phi, &terms, alpha, eta));
        });
        return;
    }
    let _ = threads;
    for img in &mut state.images {
        image_pass(img, phi, &terms, alpha, eta);
    }
}

/// One Gauss-Seidel sweep: appearances, then sticks and assignments per image.
pub fn sweep(state: &mut VariationalState, data: &[ImageBag]) -> f64 {
    sweep_with(state, data, 1)
}

pub fn sweep_with(state: &mut VariationalState, data: &[ImageBag], threads: usize) -> f64 {
    for k in 0..state.layout.k_max {
        update_appearance(state, k);
    }
    per_image_pass(state, threads);
    let prior = state.prior;
    let obj = surrogate_objective(state, data, &prior);
    state.objective_trace.push(obj);
    obj
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Objective right after initialization.
    pub initial_objective: f64,
    /// Objective after each sweep.
    pub trace: Vec<f64>,
    pub converged: bool,
}

impl TrainReport {
    pub fn sweeps(&self) -> usize {
        self.trace.len()
    }
}

pub fn train(
    data: &[ImageBag],
    layout: &FactorLayout,
    hyper: &Hyperparams,
) -> Result<(Model, TrainReport)> {
    let (state, report) = train_state(data, layout, hyper, &TrainOptions::default())?;
    Ok((state.to_model(), report))
}

/// Runs sweeps until the relative objective change drops below `tol` or
/// `max_sweeps` is reached, returning the final state.
pub fn train_state(
    data: &[ImageBag],
    layout: &FactorLayout,
    hyper: &Hyperparams,
    opts: &TrainOptions,
) -> Result<(VariationalState, TrainReport)> {
    let mut state = init_state(data, layout, hyper)?;
    state.eta = opts.eta;
    let initial = surrogate_objective(&state, data, &hyper.prior);
    let mut prev = initial;
    let mut converged = false;
    for s in 0..hyper.max_sweeps {
        let obj = sweep_with(&mut state, data, opts.threads.max(1));
        let rel = (obj - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
        info!("sweep {:>4}  objective {obj:.6}  rel change {rel:.3e}", s + 1);
        prev = obj;
        if rel < hyper.tol || hyper.tol.is_infinite() {
            converged = true;
            break;
        }
    }
    let report = TrainReport {
        initial_objective: initial,
        trace: state.objective_trace.clone(),
        converged,
    };
    Ok((state, report))
}
