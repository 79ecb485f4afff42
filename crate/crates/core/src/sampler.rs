//! Forward sampler of the generative process, with planted ground truth.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{FactorLayout, ImageBag};
use crate::error::{Error, Result};
use crate::mat::{axpy, dot, Mat};
use crate::metrics::AnnotationTruth;

/// Parameters of a synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    pub alpha: f64,
    pub sigma: f64,
    pub sigma_a: f64,
    /// Planted background factors beyond the annotated ones.
    pub k_bg: usize,
    /// Images.
    pub m: usize,
    /// Patches per image.
    pub n: usize,
    /// Planted appearances; drawn from `N(0, sigma_a^2 I)` when absent.
    pub a_true: Option<Mat>,
    /// Rescales every planted row to norm `separation * sigma`.
    pub separation: Option<f64>,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            sigma: 0.5,
            sigma_a: 1.0,
            k_bg: 3,
            m: 200,
            n: 10,
            a_true: None,
            separation: None,
        }
    }
}

impl GenParams {
    /// Mutually orthogonal planted rows of norm `5 sigma`.
    pub fn well_separated(layout: &FactorLayout, k_bg: usize, m: usize, n: usize, seed: u64) -> Result<Self> {
        let sigma = 0.5;
        let k = layout.k_oa() + k_bg;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        let a = orthogonal_rows(k, layout.d, 5.0 * sigma, &mut rng)?;
        Ok(Self {
            alpha: 1.5,
            sigma,
            sigma_a: 1.0,
            k_bg,
            m,
            n,
            a_true: Some(a),
            separation: None,
        })
    }
}

/// `k` orthogonal rows in `R^d` with the given norm (Gram-Schmidt on Gaussian draws).
pub fn orthogonal_rows<R: Rng>(k: usize, d: usize, norm: f64, rng: &mut R) -> Result<Mat> {
    if k > d {
        return Err(Error::Domain(format!(
            "cannot plant {k} orthogonal rows in dimension {d}"
        )));
    }
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    while rows.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for u in &rows {
            let p = dot(&v, u);
            axpy(-p, u, &mut v);
        }
        let len = dot(&v, &v).sqrt();
        if len < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= len);
        rows.push(v);
    }
    for r in &mut rows {
        r.iter_mut().for_each(|x| *x *= norm);
    }
    Ok(Mat::from_rows(&rows).unwrap_or_else(|| Mat::zeros(0, d)))
}

/// What was planted for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTruth {
    pub id: String,
    /// `N_i x K` binary activations.
    pub z: Vec<Vec<u8>>,
    pub pi: Vec<f64>,
    /// Image-level OR of `z` over the annotated factors.
    pub labels: Vec<u8>,
}

impl ImageTruth {
    pub fn active(&self, j: usize, k: usize) -> bool {
        self.z[j].get(k).is_some_and(|&v| v == 1)
    }

    /// Attributes co-located with object `k_o` on at least one patch.
    pub fn attributes_of(&self, layout: &FactorLayout, k_o: usize) -> Vec<usize> {
        layout
            .attributes()
            .filter(|&a| (0..self.z.len()).any(|j| self.active(j, k_o) && self.active(j, a)))
            .collect()
    }

    /// Whether some patch activates the object and every listed attribute.
    pub fn has_conjunction(&self, k_o: usize, attrs: &[usize]) -> bool {
        (0..self.z.len()).any(|j| self.active(j, k_o) && attrs.iter().all(|&a| self.active(j, a)))
    }

    pub fn objects(&self, layout: &FactorLayout) -> Vec<usize> {
        layout.objects().filter(|&k| self.labels[k] == 1).collect()
    }

    /// Present objects mapped to their co-located attributes, as scored by AP@t.
    pub fn annotation_truth(&self, layout: &FactorLayout) -> AnnotationTruth {
        AnnotationTruth {
            objects: self
                .objects(layout)
                .into_iter()
                .map(|k| (k, self.attributes_of(layout, k).into_iter().collect()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub layout: FactorLayout,
    pub a_true: Mat,
    pub images: Vec<ImageTruth>,
}

impl GroundTruth {
    pub fn get(&self, id: &str) -> Option<&ImageTruth> {
        self.images.iter().find(|t| t.id == id)
    }
}

fn check_params(layout: &FactorLayout, p: &GenParams) -> Result<()> {
    layout.validate()?;
    if p.m == 0 || p.n == 0 {
        return Err(Error::Domain("m and n must be positive".into()));
    }
    for (name, v) in [("alpha", p.alpha), ("sigma", p.sigma), ("sigma_a", p.sigma_a)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Domain(format!("{name} must be positive, got {v}")));
        }
    }
    if let Some(a) = &p.a_true {
        if a.rows() != layout.k_oa() + p.k_bg || a.cols() != layout.d {
            return Err(Error::Domain(format!(
                "explicit appearances are {}x{}, expected {}x{}",
                a.rows(),
                a.cols(),
                layout.k_oa() + p.k_bg,
                layout.d
            )));
        }
    }
    if let Some(s) = p.separation {
        if !(s.is_finite() && s >= 0.0) {
            return Err(Error::Domain(format!("separation must be >= 0, got {s}")));
        }
    }
    Ok(())
}

/// Noisy patch from a set of active planted rows.
pub fn compose_patch<R: Rng>(a_true: &Mat, active: &[usize], sigma: f64, rng: &mut R) -> Vec<f64> {
    let mut x = vec![0.0; a_true.cols()];
    for &k in active {
        axpy(1.0, a_true.row(k), &mut x);
    }
    for v in &mut x {
        let e: f64 = rng.sample(StandardNormal);
        *v += sigma * e;
    }
    x
}

/// Builds a bag whose patch `j` activates exactly `plan[j]`; labels follow from the plan.
pub fn plant_bag<R: Rng>(
    id: impl Into<String>,
    layout: &FactorLayout,
    a_true: &Mat,
    plan: &[Vec<usize>],
    sigma: f64,
    rng: &mut R,
) -> (ImageBag, ImageTruth) {
    let id = id.into();
    let k = a_true.rows();
    let rows: Vec<Vec<f64>> = plan.iter().map(|act| compose_patch(a_true, act, sigma, rng)).collect();
    let z: Vec<Vec<u8>> = plan
        .iter()
        .map(|act| (0..k).map(|f| u8::from(act.contains(&f))).collect())
        .collect();
    let labels: Vec<u8> = (0..layout.k_oa())
        .map(|f| u8::from(z.iter().any(|row| row[f] == 1)))
        .collect();
    let bag = ImageBag::new(
        id.clone(),
        Mat::from_rows(&rows).expect("uniform patch width"),
        Some(labels.iter().map(|&b| b == 1).collect()),
    );
    let truth = ImageTruth {
        id,
        z,
        pi: Vec::new(),
        labels,
    };
    (bag, truth)
}

/// Samples `m` labeled bags and the planted truth.
pub fn sample_dataset(
    layout: &FactorLayout,
    params: &GenParams,
    seed: u64,
) -> Result<(Vec<ImageBag>, GroundTruth)> {
    check_params(layout, params)?;
    let k = layout.k_oa() + params.k_bg;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut a_true = match &params.a_true {
        Some(a) => a.clone(),
        None => Mat::from_flat(
            k,
            layout.d,
            (0..k * layout.d)
                .map(|_| params.sigma_a * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        ),
    };
    if let Some(sep) = params.separation {
        for r in 0..k {
            let row = a_true.row_mut(r);
            let len = dot(row, row).sqrt();
            if len > 0.0 {
                row.iter_mut().for_each(|x| *x *= sep * params.sigma / len);
            }
        }
    }

    let stick = Beta::new(params.alpha, 1.0).map_err(|e| Error::Domain(e.to_string()))?;
    let mut bags = Vec::with_capacity(params.m);
    let mut truths = Vec::with_capacity(params.m);
    for i in 0..params.m {
        // Independent stream per image so images can be drawn in any order.
        let mut img_rng = ChaCha8Rng::seed_from_u64(seed);
        img_rng.set_stream(i as u64 + 1);
        let pi: Vec<f64> = (0..k)
            .scan(1.0, |acc, _| {
                *acc *= stick.sample(&mut img_rng);
                Some(*acc)
            })
            .collect();
        let plan: Vec<Vec<usize>> = (0..params.n)
            .map(|_| (0..k).filter(|&f| img_rng.random::<f64>() < pi[f]).collect())
            .collect();
        let (bag, mut truth) = plant_bag(
            format!("img{i:05}"),
            layout,
            &a_true,
            &plan,
            params.sigma,
            &mut img_rng,
        );
        truth.pi = pi;
        bags.push(bag);
        truths.push(truth);
    }
    Ok((
        bags,
        GroundTruth {
            layout: *layout,
            a_true,
            images: truths,
        },
    ))
}

pub fn write_ground_truth(path: impl AsRef<Path>, gt: &GroundTruth) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(w, gt)?;
    Ok(())
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let r = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}
