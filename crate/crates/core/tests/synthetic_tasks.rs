//! Downstream tasks scored against planted ground truth.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sibp::data::{FactorLayout, Hyperparams, Model};
use sibp::infer::{infer, InferOptions};
use sibp::mat::Mat;
use sibp::sampler::{plant_bag, sample_dataset, GenParams};
use sibp::tasks::{attributes_given_location, free_annotate, ObjectSelection};
use sibp::train::train;

const K_BG: usize = 3;

fn layout() -> FactorLayout {
    FactorLayout::new(4, 6, 20, 16).unwrap()
}

fn trained() -> (Model, Mat, f64) {
    let params = GenParams::well_separated(&layout(), K_BG, 200, 10, 41).unwrap();
    let (bags, gt) = sample_dataset(&layout(), &params, 41).unwrap();
    let hyper = Hyperparams { seed: 41, ..Default::default() };
    let (model, _) = train(&bags, &layout(), &hyper).unwrap();
    (model, gt.a_true, params.sigma)
}

/// One (object, attribute) patch among background-only patches.
fn single_object_plan(rng: &mut ChaCha8Rng, n_bg: usize) -> (usize, usize, Vec<Vec<usize>>) {
    let l = layout();
    let o = rng.random_range(l.objects());
    let a = rng.random_range(l.attributes());
    let bg: Vec<usize> = (l.k_oa()..l.k_oa() + K_BG).collect();
    let mut plan: Vec<Vec<usize>> = (0..n_bg).map(|_| vec![*bg.choose(rng).unwrap()]).collect();
    plan.insert(rng.random_range(0..=n_bg), vec![o, a]);
    (o, a, plan)
}

#[test]
fn free_annotation_and_location_recover_single_plant() {
    let (model, a_true, sigma) = trained();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut annotated, mut located, mut active) = (0, 0, 0);
    for t in 0..100 {
        let (o, a, plan) = single_object_plan(&mut rng, 4);
        let (bag, truth) = plant_bag(format!("s{t}"), &layout(), &a_true, &plan, sigma, &mut rng);
        let post = infer(&model, &bag, &InferOptions::default()).unwrap();

        let ann = &free_annotate(&post, &layout(), ObjectSelection::Top(1), 1).unwrap()[0];
        if ann.object == o && ann.attributes[0].0 == a {
            annotated += 1;
        }
        let everywhere: Vec<usize> = (0..bag.n_patches()).collect();
        if attributes_given_location(&post, &layout(), &everywhere).unwrap()[0].0 == a {
            located += 1;
        }
        let generating: Vec<usize> = (0..bag.n_patches()).filter(|&j| truth.z[j][o] == 1).collect();
        if generating.iter().all(|&j| post.nu.get(j, o) > 0.5) {
            active += 1;
        }
    }
    assert!(annotated >= 90, "free annotation {annotated}/100");
    assert!(located >= 90, "location {located}/100");
    assert!(active >= 90, "generating patches active {active}/100");
}

#[test]
fn empirical_patch_mean_equals_planted_sum() {
    let l = layout();
    let params = GenParams::well_separated(&l, K_BG, 1, 1, 3).unwrap();
    let a = params.a_true.clone().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let plan = vec![vec![0, 5, 11]];
    let reps = 4000;
    let mut mean = vec![0.0; l.d];
    for r in 0..reps {
        let (bag, _) = plant_bag(format!("m{r}"), &l, &a, &plan, params.sigma, &mut rng);
        for (m, x) in mean.iter_mut().zip(bag.patches.row(0)) {
            *m += x / reps as f64;
        }
    }
    let se = params.sigma / (reps as f64).sqrt();
    for d in 0..l.d {
        let expected = a.get(0, d) + a.get(5, d) + a.get(11, d);
        assert!((mean[d] - expected).abs() < 4.5 * se, "dim {d}: {} vs {expected}", mean[d]);
    }
}
