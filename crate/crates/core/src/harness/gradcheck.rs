//! Finite-difference checks of every differentiable block, on reduced
//! dimensions so the full suite runs in seconds.

use crate::classifier::{attention, wce_loss_graph, Attention, ClassWeights, Classifier, ClassifierConfig};
use crate::error::Result;
use crate::features::{CnnConfig, TinyCnn};
use crate::features::{ImageTensor, CANONICAL_SIDE, DEEP_SIDE};
use crate::labels::{Label, LabelVector, NUM_CLASSES};
use crate::layers::LstmCell;
use crate::numerics::gradcheck::DEFAULT_EPS;
use crate::numerics::{
    finite_diff_check, finite_diff_check_sampled, reverse_grad, GradCheckReport, Graph, ParamStore, Rng, Var,
};
use crate::predictor::{nll_loss_graph, Predictor, PredictorConfig};
use crate::scanpath::Key;

pub const TOLERANCE: f64 = 1e-4;
const CHANNELS: usize = 8;
const HIDDEN: usize = 16;
const SAMPLED_COORDS: usize = 12;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

type LossFn<'a> = Box<dyn Fn(&mut Graph, &ParamStore) -> Result<Var> + 'a>;

fn check(store: &mut ParamStore, loss: LossFn<'_>, sample: Option<&mut Rng>) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let l = loss(&mut g, store)?;
    g.check()?;
    reverse_grad(&g, l, store)?;
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let l = loss(&mut g, s)?;
        g.check()?;
        Ok(g.scalar(l))
    };
    match sample {
        Some(rng) => finite_diff_check_sampled(eval, store, DEFAULT_EPS, TOLERANCE, SAMPLED_COORDS, rng),
        None => finite_diff_check(eval, store, DEFAULT_EPS, TOLERANCE),
    }
}

fn random_keys(rng: &mut Rng, n: usize) -> Vec<Key> {
    let mut keys: Vec<Key> = (0..n).map(|_| Key::new(rng.below(Key::END.index())).unwrap()).collect();
    keys.push(Key::END);
    keys
}

fn random_labels(rng: &mut Rng) -> LabelVector {
    let mut l = LabelVector::all(Label::Absent);
    for d in 0..NUM_CLASSES {
        let label = match rng.below(5) {
            0 | 1 => Label::Present,
            2 => Label::Uncertain,
            _ => Label::Absent,
        };
        l.set(d, label);
    }
    l
}

/// Weighted sum of the output so every coordinate gets a distinct gradient.
fn project(g: &mut Graph, store: &ParamStore, x: Var, name: &str) -> Result<Var> {
    let w = store
        .id(name)
        .ok_or_else(|| crate::error::Error::contract(format!("missing {name}")))?;
    let w = g.param(store, w);
    let flat_len = g.value(x).len();
    let flat = g.reshape(x, &[flat_len]);
    let y = g.mul(flat, w);
    Ok(g.sum(y))
}

pub fn lstm_cell(seed: u64) -> Result<CheckResult> {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, "cell", CHANNELS, HIDDEN, &mut rng)?;
    store.add_normal("x", &[3, CHANNELS], 1.0, &mut rng)?;
    store.add_normal("proj", &[HIDDEN], 1.0, &mut rng)?;
    let loss: LossFn = Box::new(move |g, s| {
        let xs = g.param(s, s.id("x").unwrap());
        let (mut h, mut c) = cell.zero_state(g);
        for t in 0..3 {
            let x = g.select_row(xs, t);
            (h, c) = cell.step(g, s, x, h, c)?;
        }
        let hc = g.add(h, c);
        project(g, s, hc, "proj")
    });
    let report = check(&mut store, loss, None)?;
    Ok(CheckResult {
        name: "lstm_cell",
        report,
    })
}

pub fn upscale2x(seed: u64) -> Result<CheckResult> {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    store.add_normal("map", &[2, DEEP_SIDE, DEEP_SIDE], 1.0, &mut rng)?;
    store.add_normal("proj", &[2 * 4 * DEEP_SIDE * DEEP_SIDE], 1.0, &mut rng)?;
    let loss: LossFn = Box::new(|g, s| {
        let m = g.param(s, s.id("map").unwrap());
        let up = g.upscale2x(m);
        project(g, s, up, "proj")
    });
    let report = check(&mut store, loss, None)?;
    Ok(CheckResult {
        name: "upscale2x",
        report,
    })
}

pub fn attention_block(seed: u64) -> Result<CheckResult> {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    store.add_normal("query", &[HIDDEN], 1.0, &mut rng)?;
    store.add_normal("memory", &[4, HIDDEN], 1.0, &mut rng)?;
    store.add_normal("proj", &[HIDDEN], 1.0, &mut rng)?;
    let loss: LossFn = Box::new(|g, s| {
        let q = g.param(s, s.id("query").unwrap());
        let m = g.param(s, s.id("memory").unwrap());
        let rows: Vec<Var> = (0..4).map(|t| g.select_row(m, t)).collect();
        let fa = attention(g, q, &rows);
        project(g, s, fa, "proj")
    });
    let report = check(&mut store, loss, None)?;
    Ok(CheckResult {
        name: "attention",
        report,
    })
}

fn small_predictor() -> PredictorConfig {
    PredictorConfig {
        feature_dim: CHANNELS,
        proj_dim: HIDDEN,
        embed_dim: HIDDEN,
        hidden: HIDDEN,
        out_init: 0.5,
    }
}

pub fn predictor_nll(seed: u64) -> Result<CheckResult> {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let model = Predictor::new(&mut store, small_predictor(), &mut rng)?;
    let feature: Vec<f64> = (0..CHANNELS).map(|_| rng.normal()).collect();
    let keys = random_keys(&mut rng, 4);
    let loss: LossFn = Box::new(move |g, s| model.loss(g, s, &feature, &keys));
    let report = check(&mut store, loss, Some(&mut rng))?;
    Ok(CheckResult {
        name: "predictor_nll",
        report,
    })
}

pub fn classifier_wce(seed: u64) -> Result<CheckResult> {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let cfg = ClassifierConfig {
        feature_dim: CHANNELS,
        ism_hidden: HIDDEN,
        attention: Attention::On,
        ..Default::default()
    };
    let model = Classifier::new(&mut store, cfg, &mut rng)?;
    store.add_normal("map", &[CHANNELS, DEEP_SIDE, DEEP_SIDE], 1.0, &mut rng)?;
    let keys = random_keys(&mut rng, 3);
    let keys = keys[..keys.len() - 1].to_vec();
    let labels = random_labels(&mut rng);
    let w = ClassWeights {
        w_pos: (0..NUM_CLASSES).map(|_| rng.uniform_range(0.5, 3.0)).collect(),
    };
    let loss: LossFn = Box::new(move |g, s| {
        let map = g.param(s, s.id("map").unwrap());
        let logits = model.logits_from_map(g, s, map, &keys)?;
        let p = g.sigmoid(logits);
        wce_loss_graph(g, p, &labels, &w)
    });
    let report = check(&mut store, loss, Some(&mut rng))?;
    Ok(CheckResult {
        name: "classifier_wce",
        report,
    })
}

/// Image -> CNN -> pooled feature -> predictor NLL, all parameters live.
pub fn cnn_predictor(seed: u64) -> Result<CheckResult> {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let cnn = TinyCnn::new(
        &mut store,
        "cnn",
        &CnnConfig {
            channels: vec![2, 2, 4, 4, CHANNELS],
        },
        &mut rng,
    )?;
    let model = Predictor::new(&mut store, small_predictor(), &mut rng)?;
    let n = CANONICAL_SIDE * CANONICAL_SIDE;
    let image = ImageTensor::from_vec((0..n).map(|_| rng.uniform()).collect())?;
    let keys = random_keys(&mut rng, 3);
    let loss: LossFn = Box::new(move |g, s| {
        let x = g.input(image.tensor().clone());
        let (_, pooled) = cnn.forward(g, s, x);
        let dists = model.teacher_forced(g, s, pooled, &keys)?;
        nll_loss_graph(g, &dists, &keys)
    });
    let report = check(&mut store, loss, Some(&mut rng))?;
    Ok(CheckResult {
        name: "cnn_predictor",
        report,
    })
}

pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    let checks: [fn(u64) -> Result<CheckResult>; 6] = [
        lstm_cell,
        upscale2x,
        attention_block,
        predictor_nll,
        classifier_wce,
        cnn_predictor,
    ];
    checks
        .iter()
        .enumerate()
        .map(|(i, f)| f(seed.wrapping_add(i as u64)))
        .collect()
}
