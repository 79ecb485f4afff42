use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use sibp::data::{
    load_dataset, load_model, load_posteriors, save_model, write_dataset, write_posteriors,
    FactorLayout, Hyperparams, Prior,
};
use sibp::infer::{infer_batch, InferOptions};
use sibp::metrics::{self, AnnotationPrediction, PrCurve};
use sibp::sampler::{load_ground_truth, sample_dataset, write_ground_truth, GenParams, GroundTruth};
use sibp::tasks::{
    annotate_given_names, attributes_given_location, free_annotate, query, AnnotationRecord,
    ObjectSelection, QueryResult, QuerySpec, RankedId, ScoredIndex,
};
use sibp::train::{train_state, EtaForm, TrainOptions};

use crate::args::{
    AnnotateArgs, Command, EvalArgs, InferArgs, LayoutArgs, Metric, Mode, Preset, QueryArgs,
    SynthArgs, TrainArgs,
};

pub type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Annotate(a) => annotate(a),
        Command::Query(a) => run_query(a),
        Command::Eval(a) => eval(a),
    }
}

fn eta_form(literal: bool) -> EtaForm {
    if literal {
        EtaForm::Literal
    } else {
        EtaForm::Expectation
    }
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path).map_err(|e| format!("{}: {e}", path.display()))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn truth_for(truth: &GroundTruth, id: &str) -> Result<usize> {
    truth
        .images
        .iter()
        .position(|t| t.id == id)
        .ok_or_else(|| format!("no ground truth for image `{id}`").into())
}

// ---------------------------------------------------------------------------

fn synth(a: SynthArgs) -> Result<()> {
    let layout = FactorLayout::new(a.layout.ko, a.layout.ka, a.layout.kmax, a.d)?;
    let mut params = match a.preset {
        Preset::Standard => GenParams { k_bg: a.kbg, m: a.m, n: a.n, ..Default::default() },
        Preset::Separated => GenParams::well_separated(&layout, a.kbg, a.m, a.n, a.seed)?,
    };
    if let Some(alpha) = a.alpha {
        params.alpha = alpha;
    }
    if let Some(sigma) = a.sigma {
        params.sigma = sigma;
        if a.preset == Preset::Separated {
            params.separation = Some(5.0);
        }
    }
    if let Some(sigma_a) = a.sigma_a {
        params.sigma_a = sigma_a;
    }
    if a.separation.is_some() {
        params.separation = a.separation;
    }
    if let Some(path) = &a.appearances {
        params.a_true = Some(load_ground_truth(path)?.a_true);
    }
    info!("seed {}", a.seed);
    let (mut bags, truth) = sample_dataset(&layout, &params, a.seed)?;
    if a.unlabeled {
        bags.iter_mut().for_each(|b| b.labels = None);
    }
    write_dataset(&a.out, &bags)?;
    if let Some(path) = &a.truth {
        write_ground_truth(path, &truth)?;
    }
    info!("wrote {} bags to {}", bags.len(), a.out.display());
    Ok(())
}

fn detect_dim(path: &Path) -> Result<usize> {
    #[derive(Deserialize)]
    struct Probe {
        patches: Vec<Vec<f64>>,
    }
    let reader = BufReader::new(File::open(path).map_err(|e| format!("{}: {e}", path.display()))?);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let probe: Probe = serde_json::from_str(&line).map_err(|e| format!("{}:1: {e}", path.display()))?;
        return probe
            .patches
            .first()
            .map(Vec::len)
            .ok_or_else(|| format!("{}: first bag has no patches", path.display()).into());
    }
    Err(format!("{}: dataset is empty", path.display()).into())
}

fn layout_from(args: &LayoutArgs, d: usize) -> Result<FactorLayout> {
    Ok(FactorLayout::new(args.ko, args.ka, args.kmax, d)?)
}

fn train(a: TrainArgs) -> Result<()> {
    let layout = layout_from(&a.layout, detect_dim(&a.data)?)?;
    let bags = load_dataset(&a.data, &layout)?;
    let hyper = Hyperparams {
        prior: Prior::new(a.alpha, a.sigma, a.sigma_a)?,
        max_sweeps: a.max_sweeps,
        tol: a.tol,
        seed: a.seed,
    };
    let opts = TrainOptions { eta: eta_form(a.eta_literal), threads: a.threads.max(1) };
    info!(
        "seed {}  bags {}  layout k_o={} k_a={} k_max={} d={}",
        a.seed,
        bags.len(),
        layout.k_o,
        layout.k_a,
        layout.k_max,
        layout.d
    );
    let (state, report) = train_state(&bags, &layout, &hyper, &opts)?;
    if !report.converged {
        warn!("stopped after {} sweeps without reaching tol {}", report.sweeps(), a.tol);
    }
    info!(
        "objective {:.6} -> {:.6} in {} sweeps",
        report.initial_objective,
        report.trace.last().copied().unwrap_or(report.initial_objective),
        report.sweeps()
    );
    save_model(&state.to_model(), &a.out)?;
    if let Some(path) = &a.trace {
        write_json(
            path,
            &json!({
                "seed": a.seed,
                "initial_objective": report.initial_objective,
                "trace": report.trace,
                "converged": report.converged,
            }),
        )?;
    }
    Ok(())
}

fn infer(a: InferArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let bags = load_dataset(&a.data, &model.layout)?;
    let opts = InferOptions {
        tol: a.tol,
        max_sweeps: a.max_sweeps,
        eta: eta_form(a.eta_literal),
        seed: a.seed,
    };
    if let Some(seed) = a.seed {
        info!("seed {seed}");
    }
    let records = infer_batch(&model, &bags, &opts, a.threads.max(1))?;
    write_posteriors(&a.out, &records)?;
    info!("wrote {} posteriors to {}", records.len(), a.out.display());
    Ok(())
}

/// Attribute ranking for an explicit patch set.
#[derive(Serialize, Deserialize)]
struct LocationRecord {
    id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    object: Option<usize>,
    patches: Vec<usize>,
    attributes: Vec<ScoredIndex>,
}

fn scored(list: &[(usize, f64)], t: usize) -> Vec<ScoredIndex> {
    list.iter()
        .take(t)
        .map(|&(index, score)| ScoredIndex { index, score })
        .collect()
}

fn annotate(a: AnnotateArgs) -> Result<()> {
    let layout = load_model(&a.model)?.layout;
    let posts = load_posteriors(&a.posteriors)?;
    if a.t == 0 || a.t > layout.k_a {
        return Err(format!("--t must be within 1..={}", layout.k_a).into());
    }
    let truth = match &a.truth {
        Some(p) => Some(load_ground_truth(p)?),
        None => None,
    };
    match a.mode {
        Mode::Free => {
            let select = match a.threshold {
                Some(theta) => ObjectSelection::Threshold(theta),
                None => ObjectSelection::Top(a.objects),
            };
            let mut out = Vec::new();
            for r in &posts {
                for ann in free_annotate(&r.post, &layout, select, a.t)? {
                    out.push(AnnotationRecord::new(&r.id, &ann));
                }
            }
            write_lines(&a.out, &out)
        }
        Mode::Names => {
            let truth = truth.ok_or("names mode needs --truth for the object names")?;
            let mut out = Vec::new();
            for r in &posts {
                let img = &truth.images[truth_for(&truth, &r.id)?];
                for object in img.objects(&layout) {
                    let mut ann = annotate_given_names(&r.post, &layout, object)?;
                    ann.attributes.truncate(a.t);
                    out.push(AnnotationRecord::new(&r.id, &ann));
                }
            }
            write_lines(&a.out, &out)
        }
        Mode::Location => {
            let mut out = Vec::new();
            for r in &posts {
                let sets: Vec<(Option<usize>, Vec<usize>)> = match (&a.patches, &truth) {
                    (Some(p), _) => vec![(None, p.clone())],
                    (None, Some(truth)) => {
                        let img = &truth.images[truth_for(truth, &r.id)?];
                        img.objects(&layout)
                            .into_iter()
                            .map(|o| (Some(o), (0..img.z.len()).filter(|&j| img.active(j, o)).collect()))
                            .collect()
                    }
                    (None, None) => return Err("location mode needs --patches or --truth".into()),
                };
                for (object, patches) in sets {
                    let ranked = attributes_given_location(&r.post, &layout, &patches)?;
                    out.push(LocationRecord {
                        id: r.id.clone(),
                        object,
                        patches,
                        attributes: scored(&ranked, a.t),
                    });
                }
            }
            write_lines(&a.out, &out)
        }
    }
}

fn run_query(a: QueryArgs) -> Result<()> {
    let layout = load_model(&a.model)?.layout;
    let corpus = load_posteriors(&a.posteriors)?;
    let specs: Vec<QuerySpec> = match (a.object, a.random) {
        (Some(object), _) => vec![QuerySpec { object, attrs: a.attrs.clone() }],
        (None, Some(count)) => {
            info!("seed {}", a.seed);
            let truth = match &a.truth {
                Some(p) => Some(load_ground_truth(p)?),
                None => None,
            };
            random_queries(&layout, count, a.seed, truth.as_ref())?
        }
        (None, None) => unreachable!("clap requires --object or --random"),
    };
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let ranking = query(&corpus, &layout, spec.object, &spec.attrs)?
            .into_iter()
            .map(|(id, score)| RankedId { id, score })
            .collect();
        out.push(QueryResult { query: spec, ranking });
    }
    write_lines(&a.out, &out)
}

fn random_queries(
    layout: &FactorLayout,
    count: usize,
    seed: u64,
    truth: Option<&GroundTruth>,
) -> Result<Vec<QuerySpec>> {
    if layout.k_a == 0 {
        return Err("random queries need at least one attribute factor".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut specs = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while specs.len() < count {
        attempts += 1;
        if attempts > 1000 * count.max(1) {
            return Err("could not draw queries with a relevant image".into());
        }
        let object = rng.random_range(layout.objects());
        let attr = rng.random_range(layout.attributes());
        if let Some(t) = truth {
            if !t.images.iter().any(|img| img.has_conjunction(object, &[attr])) {
                continue;
            }
        }
        specs.push(QuerySpec { object, attrs: vec![attr] });
    }
    Ok(specs)
}

fn eval(a: EvalArgs) -> Result<()> {
    let truth = load_ground_truth(&a.truth)?;
    let layout = truth.layout;
    let report = match a.metric {
        Metric::ApAt(t) => {
            let t = t.unwrap_or(a.t);
            let path = a.annotations.as_ref().ok_or("ap@t needs --annotations")?;
            let records: Vec<AnnotationRecord> = read_lines(path)?;
            // Only the most confident object per image is scored.
            let mut best: BTreeMap<String, &AnnotationRecord> = BTreeMap::new();
            for r in &records {
                match best.get(&r.id) {
                    Some(b) if b.object_score >= r.object_score => {}
                    _ => {
                        best.insert(r.id.clone(), r);
                    }
                }
            }
            let preds: Vec<(String, AnnotationPrediction)> = best
                .into_iter()
                .map(|(id, r)| {
                    let attributes = r.attributes.iter().map(|s| s.index).collect();
                    (id, AnnotationPrediction { object: r.object, attributes })
                })
                .collect();
            let mut truths = BTreeMap::new();
            for (id, _) in &preds {
                let img = &truth.images[truth_for(&truth, id)?];
                truths.insert(id.clone(), img.annotation_truth(&layout));
            }
            let value = metrics::ap_at_t(&preds, &truths, t)?;
            json!({"metric": format!("ap@{t}"), "value": value, "images": preds.len()})
        }
        Metric::Map => {
            let path = a.posteriors.as_ref().ok_or("map needs --posteriors")?;
            let posts = load_posteriors(path)?;
            let rows: Vec<usize> = posts
                .iter()
                .map(|r| truth_for(&truth, &r.id))
                .collect::<Result<_>>()?;
            let mut per_attribute = BTreeMap::new();
            let mut csv = String::from("attribute,rank,precision,recall\n");
            for k in layout.attributes() {
                let scores: Vec<f64> = posts.iter().map(|r| r.post.presence(k)).collect();
                let flags: Vec<bool> = rows.iter().map(|&i| truth.images[i].labels[k] == 1).collect();
                if !flags.iter().any(|&f| f) {
                    continue;
                }
                let curve = PrCurve::from_scores(&scores, &flags)?;
                for (r, (p, rec)) in curve.precision.iter().zip(&curve.recall).enumerate() {
                    csv.push_str(&format!("{k},{},{p},{rec}\n", r + 1));
                }
                per_attribute.insert(k.to_string(), curve.average_precision());
            }
            if per_attribute.is_empty() {
                return Err("no attribute has a positive image".into());
            }
            if let Some(p) = &a.pr_csv {
                fs::write(p, csv)?;
            }
            let value = per_attribute.values().sum::<f64>() / per_attribute.len() as f64;
            json!({"metric": "map", "value": value, "per_attribute": per_attribute})
        }
        Metric::Mar => {
            let path = a.queries.as_ref().ok_or("mar needs --queries")?;
            let results: Vec<QueryResult> = read_lines(path)?;
            if results.is_empty() {
                return Err(format!("{}: no queries", path.display()).into());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let mut ranked = Vec::with_capacity(results.len());
            let mut shuffled = Vec::with_capacity(results.len());
            for q in &results {
                let flags: Vec<bool> = q
                    .ranking
                    .iter()
                    .map(|r| {
                        let img = &truth.images[truth_for(&truth, &r.id)?];
                        Ok(img.has_conjunction(q.query.object, &q.query.attrs))
                    })
                    .collect::<Result<_>>()?;
                let mut random = flags.clone();
                random.shuffle(&mut rng);
                ranked.push(flags);
                shuffled.push(random);
            }
            let grid = metrics::default_grid();
            let value = metrics::mar(&ranked, &grid)?;
            let baseline = metrics::mar(&shuffled, &grid)?;
            json!({
                "metric": "mar",
                "value": value,
                "random_baseline": baseline,
                "queries": results.len(),
                "seed": a.seed,
            })
        }
    };
    match &a.out {
        Some(p) => write_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    info!("{}", report);
    Ok(())
}
