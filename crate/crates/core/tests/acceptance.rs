//! End-to-end acceptance criteria. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use scanpath_guided::classifier::{
    attention, class_weights, classifier_step, evaluate_auroc, prepare_input, w_pos, wce_loss, wce_loss_graph,
    Attention, ClassWeights, Classifier, ClassifierConfig, ClassifierExample,
};
use scanpath_guided::features::{CnnConfig, ImageTensor, TinyCnn, CANONICAL_SIDE, DEEP_SIDE};
use scanpath_guided::harness::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use scanpath_guided::harness::pipeline::{run_pipeline, train_predictor_cmd};
use scanpath_guided::harness::synth::generate;
use scanpath_guided::harness::{gen_synthetic, Run, RunConfig};
use scanpath_guided::labels::{Label, LabelVector, NUM_CLASSES};
use scanpath_guided::layers::LstmCell;
use scanpath_guided::metrics::{auroc, multimatch, needleman_wunsch, scanmatch, ScanMatchConfig, Subset};
use scanpath_guided::numerics::{reverse_grad, AdamConfig, AdamState, Graph, ParamStore, Rng, Var};
use scanpath_guided::predictor::{
    nll_loss_graph, train_predictor, DecodeConfig, Predictor, PredictorConfig, PredictorSample, PredictorTrainConfig,
};
use scanpath_guided::scanpath::{Fixation, Key, PatchDictionary, Scanpath};
use scanpath_guided::Error;

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

const FD_EPS: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const FD_SEEDS: u64 = 20;
const FD_COORDS: usize = 10;

type Loss = Box<dyn Fn(&mut Graph, &ParamStore) -> scanpath_guided::Result<Var>>;

/// Central differences against the library gradient; returns the worst relative error.
fn fd_max_rel_err(store: &mut ParamStore, loss: &Loss, rng: &mut Rng, grad_scale: f64) -> Result<f64, String> {
    let mut g = Graph::new();
    let l = loss(&mut g, store).map_err(e2s)?;
    reverse_grad(&g, l, store).map_err(e2s)?;
    store.scale_grad(grad_scale);
    let eval = |s: &ParamStore| -> Result<f64, String> {
        let mut g = Graph::new();
        let l = loss(&mut g, s).map_err(e2s)?;
        Ok(g.scalar(l))
    };
    let ids: Vec<_> = store.ids().collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        let analytic = store.grad(id).ok_or("missing gradient")?.data().to_vec();
        let n = analytic.len();
        let coords: Vec<usize> = if n <= FD_COORDS {
            (0..n).collect()
        } else {
            (0..FD_COORDS).map(|_| rng.below(n)).collect()
        };
        for i in coords {
            let x = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = x + FD_EPS;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[i] = x - FD_EPS;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[i] = x;
            let numeric = (plus - minus) / (2.0 * FD_EPS);
            // rounding in the difference itself is not a gradient error
            let resolution = f64::EPSILON * plus.abs().max(minus.abs()) / FD_EPS;
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
            let err = ((analytic[i] - numeric).abs() - resolution).max(0.0) / denom;
            worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
        }
    }
    Ok(worst)
}

fn weighted_sum(g: &mut Graph, s: &ParamStore, x: Var) -> Var {
    let w = g.param(s, s.id("probe").unwrap());
    let n = g.value(x).len();
    let flat = g.reshape(x, &[n]);
    let y = g.mul(flat, w);
    g.sum(y)
}

fn fd_case(name: &str, seed: u64) -> Result<(ParamStore, Loss), String> {
    let mut rng = Rng::new(seed);
    let mut s = ParamStore::new();
    let (c, h) = (8, 16);
    let small_pred = PredictorConfig {
        feature_dim: c,
        proj_dim: h,
        embed_dim: h,
        hidden: h,
        out_init: 0.3,
    };
    let keys = |rng: &mut Rng, n: usize| -> Vec<Key> {
        let mut k: Vec<Key> = (0..n).map(|_| Key::new(rng.below(256)).unwrap()).collect();
        k.push(Key::END);
        k
    };
    let loss: Loss = match name {
        "lstm_cell" => {
            let cell = LstmCell::new(&mut s, "cell", c, h, &mut rng).map_err(e2s)?;
            s.add_normal("x", &[c], 1.0, &mut rng).map_err(e2s)?;
            s.add_normal("h0", &[h], 1.0, &mut rng).map_err(e2s)?;
            s.add_normal("c0", &[h], 1.0, &mut rng).map_err(e2s)?;
            s.add_normal("probe", &[2 * h], 1.0, &mut rng).map_err(e2s)?;
            Box::new(move |g, s| {
                let x = g.param(s, s.id("x").unwrap());
                let h0 = g.param(s, s.id("h0").unwrap());
                let c0 = g.param(s, s.id("c0").unwrap());
                let (h1, c1) = cell.step(g, s, x, h0, c0)?;
                let hc = g.concat(&[h1, c1]);
                Ok(weighted_sum(g, s, hc))
            })
        }
        "upscale2x" => {
            s.add_normal("map", &[3, DEEP_SIDE, DEEP_SIDE], 1.0, &mut rng)
                .map_err(e2s)?;
            s.add_normal("probe", &[3 * 4 * DEEP_SIDE * DEEP_SIDE], 1.0, &mut rng)
                .map_err(e2s)?;
            Box::new(|g, s| {
                let m = g.param(s, s.id("map").unwrap());
                let u = g.upscale2x(m);
                Ok(weighted_sum(g, s, u))
            })
        }
        "attention" => {
            let t = 1 + rng.below(6);
            s.add_normal("q", &[h], 1.0, &mut rng).map_err(e2s)?;
            s.add_normal("mem", &[t, h], 1.0, &mut rng).map_err(e2s)?;
            s.add_normal("probe", &[h], 1.0, &mut rng).map_err(e2s)?;
            Box::new(move |g, s| {
                let q = g.param(s, s.id("q").unwrap());
                let m = g.param(s, s.id("mem").unwrap());
                let rows: Vec<Var> = (0..t).map(|i| g.select_row(m, i)).collect();
                let fa = attention(g, q, &rows);
                Ok(weighted_sum(g, s, fa))
            })
        }
        "nll" => {
            let model = Predictor::new(&mut s, small_pred, &mut rng).map_err(e2s)?;
            let feature: Vec<f64> = (0..c).map(|_| rng.normal()).collect();
            let n = 1 + rng.below(5);
            let k = keys(&mut rng, n);
            Box::new(move |g, s| model.loss(g, s, &feature, &k))
        }
        "wce" => {
            let cfg = ClassifierConfig {
                feature_dim: c,
                ism_hidden: h,
                attention: if seed.is_multiple_of(2) { Attention::On } else { Attention::Off },
                ..Default::default()
            };
            let model = Classifier::new(&mut s, cfg, &mut rng).map_err(e2s)?;
            s.add_normal("map", &[c, DEEP_SIDE, DEEP_SIDE], 1.0, &mut rng)
                .map_err(e2s)?;
            let n = 1 + rng.below(4);
            let mut k = keys(&mut rng, n);
            k.pop();
            let mut labels = LabelVector::all(Label::Absent);
            for d in 0..NUM_CLASSES {
                labels.set(d, [Label::Present, Label::Absent, Label::Uncertain][rng.below(3)]);
            }
            let w = ClassWeights {
                w_pos: (0..NUM_CLASSES).map(|_| rng.uniform_range(0.05, 0.95)).collect(),
            };
            Box::new(move |g, s| {
                let map = g.param(s, s.id("map").unwrap());
                let z = model.logits_from_map(g, s, map, &k)?;
                let p = g.sigmoid(z);
                wce_loss_graph(g, p, &labels, &w)
            })
        }
        "cnn_pipeline" => {
            let cnn = TinyCnn::new(
                &mut s,
                "cnn",
                &CnnConfig {
                    channels: vec![2, 2, 4, 4, c],
                },
                &mut rng,
            )
            .map_err(e2s)?;
            let model = Predictor::new(&mut s, small_pred, &mut rng).map_err(e2s)?;
            let n = CANONICAL_SIDE * CANONICAL_SIDE;
            let img = ImageTensor::from_vec((0..n).map(|_| rng.uniform()).collect()).map_err(e2s)?;
            let k = keys(&mut rng, 3);
            Box::new(move |g, s| {
                let x = g.input(img.tensor().clone());
                let (_, pooled) = cnn.forward(g, s, x);
                let d = model.teacher_forced(g, s, pooled, &k)?;
                nll_loss_graph(g, &d, &k)
            })
        }
        other => return Err(format!("unknown case {other}")),
    };
    Ok((s, loss))
}

fn criterion_1() -> Check {
    let mut summary = Vec::new();
    for name in ["lstm_cell", "upscale2x", "attention", "nll", "wce", "cnn_pipeline"] {
        let mut worst: f64 = 0.0;
        for seed in 0..FD_SEEDS {
            let (mut store, loss) = fd_case(name, 1000 + seed)?;
            let mut rng = Rng::new(seed);
            let e = fd_max_rel_err(&mut store, &loss, &mut rng, 1.0)?;
            ensure(e < FD_TOL, || format!("{name} seed {seed}: rel-err {e:.2e}"))?;
            worst = worst.max(e);
        }
        let (mut store, loss) = fd_case(name, 1000)?;
        let e = fd_max_rel_err(&mut store, &loss, &mut Rng::new(0), 1.01)?;
        ensure(e > FD_TOL, || {
            format!("{name}: gradient scaled by 1.01 not detected ({e:.2e})")
        })?;
        summary.push(format!("{name} {worst:.1e}"));
    }
    Ok(format!("{FD_SEEDS} seeds each, worst rel-err: {}", summary.join(", ")))
}

// ---------------------------------------------------------------- 2

fn predictor_cfg() -> PredictorConfig {
    PredictorConfig {
        feature_dim: 16,
        proj_dim: 32,
        embed_dim: 32,
        hidden: 64,
        out_init: 1e-2,
    }
}

fn memorization_set(seed: u64) -> Vec<PredictorSample> {
    let mut rng = Rng::new(seed);
    (0..8)
        .map(|i| {
            let len = 4 + (i * 6) / 7;
            let mut keys: Vec<Key> = (0..len).map(|_| Key::new(rng.below(256)).unwrap()).collect();
            keys.push(Key::END);
            PredictorSample {
                image_id: format!("m{i}"),
                feature: (0..16).map(|_| rng.normal()).collect(),
                keys,
            }
        })
        .collect()
}

fn criterion_2() -> Check {
    let data = memorization_set(7);
    let lens: Vec<usize> = data.iter().map(|s| s.keys.len() - 1).collect();
    ensure(
        lens.iter().all(|l| (4..=10).contains(l)) && lens.contains(&4) && lens.contains(&10),
        || format!("lengths {lens:?}"),
    )?;
    let mut rng = Rng::new(1);
    let mut store = ParamStore::new();
    let model = Predictor::new(&mut store, predictor_cfg(), &mut rng).map_err(e2s)?;
    let cfg = PredictorTrainConfig {
        lr: 1e-3,
        epochs: 100,
        batch_size: 8,
        ..Default::default()
    };
    let mut adam = AdamState::new(cfg.adam(), &store);
    let (mut acc, mut exact) = (0.0, 0);
    while adam.step_count() < 2000 {
        train_predictor(&model, &mut store, &mut adam, &data, &cfg, &mut rng).map_err(e2s)?;
        acc = model.next_key_accuracy(&store, &data).map_err(e2s)?;
        exact = 0;
        for s in &data {
            if model
                .greedy_decode(&store, &s.feature, DecodeConfig::default())
                .map_err(e2s)?
                == s.keys
            {
                exact += 1;
            }
        }
        if acc >= 0.95 && exact >= 6 {
            break;
        }
    }
    let steps = adam.step_count();
    ensure(acc >= 0.95 && exact >= 6 && steps <= 2000, || {
        format!("accuracy {acc:.3}, exact {exact}/8 after {steps} steps")
    })?;
    Ok(format!("accuracy {acc:.3}, exact {exact}/8 after {steps} steps"))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Check {
    let spec = scanpath_guided::harness::SyntheticSpec {
        n_train: 32,
        n_valid: 0,
        n_test: 0,
        channels: 16,
        uncertain_fraction: 0.0,
        ..Default::default()
    };
    let images = generate(&spec, 5).map_err(e2s)?;
    let dict = PatchDictionary::new();
    let train: Vec<ClassifierExample> = images
        .iter()
        .map(|im| {
            let keys = dict.patch_keys(&im.scanpaths[0])?;
            Ok(ClassifierExample {
                image_id: im.image_id.clone(),
                input: prepare_input(&im.map, &keys, 16)?,
                labels: im.labels,
            })
        })
        .collect::<scanpath_guided::Result<_>>()
        .map_err(e2s)?;
    let cfg = ClassifierConfig {
        feature_dim: 16,
        ism_hidden: 32,
        ..Default::default()
    };
    let mut rng = Rng::new(3);
    let mut store = ParamStore::new();
    let model = Classifier::new(&mut store, cfg.clone(), &mut rng).map_err(e2s)?;
    let w = class_weights(&train.iter().map(|e| e.labels).collect::<Vec<_>>());
    let mut adam = AdamState::new(AdamConfig::with_lr(3e-3), &store);
    let batch: Vec<&ClassifierExample> = train.iter().collect();
    let mut auc = 0.0;
    while adam.step_count() < 1000 {
        classifier_step(&model, &mut store, &mut adam, &batch, &w).map_err(e2s)?;
        if adam.step_count().is_multiple_of(10) {
            auc = evaluate_auroc(&model, &store, &train)
                .map_err(e2s)?
                .ok_or("no scorable class")?;
            if auc >= 0.99 {
                break;
            }
        }
    }
    let steps = adam.step_count();
    ensure(auc >= 0.99, || format!("train AUROC {auc:.4} after {steps} steps"))?;

    // masked classes: exact zero head gradient
    let masked = [1usize, 3];
    let masked_train: Vec<ClassifierExample> = train
        .iter()
        .map(|e| {
            let mut e = e.clone();
            for &d in &masked {
                e.labels.set(d, Label::Uncertain);
            }
            e
        })
        .collect();
    let batch: Vec<&ClassifierExample> = masked_train.iter().collect();
    let mut adam2 = AdamState::new(AdamConfig::with_lr(0.0), &store);
    classifier_step(&model, &mut store, &mut adam2, &batch, &w).map_err(e2s)?;
    let head = model.head();
    let wg = store.grad(head.weight).ok_or("no head gradient")?;
    let bg = store.grad(head.bias).ok_or("no head gradient")?;
    let cols = head.input;
    for &d in &masked {
        let row = &wg.data()[d * cols..(d + 1) * cols];
        ensure(row.iter().all(|g| *g == 0.0) && bg.data()[d] == 0.0, || {
            format!("masked class {d} has nonzero head gradient")
        })?;
    }
    let live = wg.data()[0..cols].iter().any(|g| *g != 0.0);
    ensure(live, || "unmasked class 0 has zero gradient".into())?;
    Ok(format!(
        "train AUROC {auc:.4} after {steps} steps; masked head rows exactly zero"
    ))
}

// ---------------------------------------------------------------- 4 and 7

struct SeedRun {
    seed: u64,
    auroc_without: f64,
    auroc_with: f64,
    imprnt: f64,
    model_set2: f64,
    random_set2: f64,
}

fn pipeline_runs() -> Result<Vec<SeedRun>, String> {
    let mut out = Vec::new();
    for seed in 1..=5u64 {
        let dir = tempfile::tempdir().map_err(e2s)?;
        let mut cfg = RunConfig::desk();
        cfg.seed = seed;
        cfg.data_dir = dir.path().join("data");
        gen_synthetic(&cfg.synth, seed, &cfg.data_dir).map_err(e2s)?;
        let run = Run::new(cfg, dir.path().join("run")).map_err(e2s)?;
        let s = run_pipeline(&run).map_err(e2s)?;
        let sm = scanpath_guided::metrics::ScanpathMetric::ScanMatch;
        out.push(SeedRun {
            seed,
            auroc_without: s.classifier.auroc.without_scanpath,
            auroc_with: s.classifier.auroc.with_scanpath,
            imprnt: s.classifier.auroc.imprnt_pct,
            model_set2: s
                .scanpaths
                .mean(Subset::Set2, "Model", sm)
                .ok_or("no Model Set-2 ScanMatch")?,
            random_set2: s
                .scanpaths
                .mean(Subset::Set2, "Random", sm)
                .ok_or("no Random Set-2 ScanMatch")?,
        });
        let csv = std::fs::read_to_string(dir.path().join("run/reports/classifier.csv")).map_err(e2s)?;
        ensure(csv.contains("AUROC:imprnt_pct"), || {
            "report lacks the improvement column".into()
        })?;
    }
    Ok(out)
}

fn criterion_4(runs: &[SeedRun]) -> Check {
    let wins = runs.iter().filter(|r| r.auroc_with > r.auroc_without).count();
    let detail: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "s{} {:.3}/{:.3} ({:.1}%)",
                r.seed, r.auroc_without, r.auroc_with, r.imprnt
            )
        })
        .collect();
    let msg = format!("with > without in {wins}/5 seeds [without/with: {}]", detail.join(", "));
    ensure(wins >= 4, || msg.clone())?;
    Ok(msg)
}

fn criterion_7(runs: &[SeedRun]) -> Check {
    let wins = runs.iter().filter(|r| r.model_set2 > r.random_set2).count();
    let detail: Vec<String> = runs
        .iter()
        .map(|r| format!("s{} {:.3}/{:.3}", r.seed, r.model_set2, r.random_set2))
        .collect();
    let msg = format!(
        "Model > Random Set-2 ScanMatch in {wins}/5 seeds [model/random: {}]",
        detail.join(", ")
    );
    ensure(wins >= 4, || msg.clone())?;
    Ok(msg)
}

// ---------------------------------------------------------------- 5

fn brute_force(a: &[u8], b: &[u8], sub: &dyn Fn(u8, u8) -> f64, gap: f64) -> f64 {
    // every alignment is a path of (match | skip a | skip b) moves
    match (a.split_first(), b.split_first()) {
        (None, None) => 0.0,
        (Some((_, ar)), None) => gap + brute_force(ar, b, sub, gap),
        (None, Some((_, br))) => gap + brute_force(a, br, sub, gap),
        (Some((&x, ar)), Some((&y, br))) => {
            let m = sub(x, y) + brute_force(ar, br, sub, gap);
            let da = gap + brute_force(ar, b, sub, gap);
            let db = gap + brute_force(a, br, sub, gap);
            m.max(da).max(db)
        }
    }
}

fn all_sequences(max_len: usize, alphabet: u8) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for c in 0..alphabet {
                let mut t: Vec<u8> = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn criterion_5() -> Check {
    let seqs = all_sequences(5, 3);
    // dyadic values keep every sum exact in any order
    let table = [[1.0, -0.5, -1.25], [-0.5, 1.0, 0.25], [-1.25, 0.25, 0.75]];
    let sub = |x: u8, y: u8| table[x as usize][y as usize];
    let mut pairs = 0u64;
    for gap in [-0.75, 0.0] {
        for a in &seqs {
            for b in &seqs {
                let dp = needleman_wunsch(a, b, sub, gap);
                let bf = brute_force(a, b, &sub, gap);
                ensure(dp == bf, || format!("{a:?} vs {b:?} gap {gap}: {dp} != {bf}"))?;
                pairs += 1;
            }
        }
    }
    Ok(format!("{pairs} pairs, exact"))
}

// ---------------------------------------------------------------- 6

fn random_scanpath(rng: &mut Rng, min: usize) -> Scanpath {
    let n = min + rng.below(10);
    let fix = (0..n)
        .map(|_| Fixation::new(rng.uniform() * 256.0, rng.uniform() * 256.0))
        .collect();
    Scanpath::new("img", "r", fix).unwrap()
}

fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut twice = 0u64;
    let (mut p, mut n) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li {
            p += 1;
        } else {
            n += 1;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                twice += if scores[i] > scores[j] {
                    2
                } else if scores[i] == scores[j] {
                    1
                } else {
                    0
                };
            }
        }
    }
    twice as f64 / (2 * p * n) as f64
}

fn criterion_6() -> Check {
    let cfg = ScanMatchConfig::default();
    let mut rng = Rng::new(66);
    for _ in 0..1000 {
        let a = random_scanpath(&mut rng, 1);
        let b = random_scanpath(&mut rng, 1);
        ensure(scanmatch(&a, &a, &cfg).map_err(e2s)? == 1.0, || {
            "scanmatch(s,s) != 1".into()
        })?;
        let (ab, ba) = (
            scanmatch(&a, &b, &cfg).map_err(e2s)?,
            scanmatch(&b, &a, &cfg).map_err(e2s)?,
        );
        ensure(ab == ba, || format!("scanmatch asymmetric: {ab} vs {ba}"))?;
        let a = random_scanpath(&mut rng, 2);
        let b = random_scanpath(&mut rng, 2);
        let same = multimatch(&a, &a).map_err(e2s)?;
        ensure(same.values() == [1.0; 4], || format!("multimatch(s,s) = {same:?}"))?;
        let m = multimatch(&a, &b).map_err(e2s)?;
        ensure(m.values().iter().all(|v| (0.0..=1.0).contains(v)), || {
            format!("out of range {m:?}")
        })?;
    }
    for _ in 0..100 {
        let n = 2 + rng.below(60);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n).map(|_| rng.below(24) as f64 / 16.0).collect();
        let a = auroc(&scores, &labels).map_err(e2s)?;
        let oracle = pairwise_auroc(&scores, &labels);
        ensure(a == oracle, || format!("auroc {a} vs pairwise {oracle}"))?;
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        ensure(auroc(&warped, &labels).map_err(e2s)? == a, || {
            "auroc changed under a monotone map".into()
        })?;
    }
    Ok("1000 fuzzed scanpath pairs, 100 AUROC instances".into())
}

// ---------------------------------------------------------------- 8

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn small_config(data: &Path) -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.seed = 42;
    cfg.data_dir = data.to_path_buf();
    cfg.synth.n_train = 48;
    cfg.synth.n_valid = 16;
    cfg.synth.n_test = 24;
    cfg.predictor_train.epochs = 3;
    cfg.classifier_train.epochs = 3;
    cfg
}

fn criterion_8() -> Check {
    let dir = tempfile::tempdir().map_err(e2s)?;
    let data = dir.path().join("data");
    let cfg = small_config(&data);
    gen_synthetic(&cfg.synth, cfg.seed, &data).map_err(e2s)?;
    let mut trees = Vec::new();
    for name in ["a", "b"] {
        let run = Run::new(cfg.clone(), dir.path().join(name)).map_err(e2s)?;
        run_pipeline(&run).map_err(e2s)?;
        trees.push(tree(&run.out));
    }
    ensure(trees[0] == trees[1], || {
        let diff: Vec<_> = trees[0]
            .iter()
            .filter(|(k, v)| trees[1].get(*k) != Some(*v))
            .map(|(k, _)| k.clone())
            .collect();
        format!("runs differ in {diff:?}")
    })?;
    let files = trees[0].len();

    // bit-exact round trip, including optimizer moments
    let ck_dir = dir.path().join("a/predictor");
    let ck = load_checkpoint(&ck_dir, None).map_err(e2s)?;
    let again = dir.path().join("copy");
    let meta = CheckpointMeta {
        kind: ck.manifest.kind.clone(),
        config_hash: ck.manifest.config_hash.clone(),
        seed: ck.manifest.seed,
        step: ck.manifest.step,
        epoch: ck.manifest.epoch,
        validation_metric: ck.manifest.validation_metric,
    };
    save_checkpoint(&again, &ck.store, ck.adam.as_ref(), &meta).map_err(e2s)?;
    let back = load_checkpoint(&again, None).map_err(e2s)?;
    ensure(back.store.bit_eq(&ck.store), || {
        "parameters changed in round trip".into()
    })?;
    let (a, b) = (ck.adam.as_ref().ok_or("no adam")?, back.adam.as_ref().ok_or("no adam")?);
    ensure(a.bit_eq(b), || "optimizer state changed in round trip".into())?;

    // resume with a different config
    let mut other = cfg.clone();
    other.predictor_train.lr *= 2.0;
    let run = Run::new(other, dir.path().join("a")).map_err(e2s)?;
    match train_predictor_cmd(&run, true) {
        Err(e) if matches!(e.root(), Error::HashMismatch { .. }) => {}
        other => return Err(format!("resume with changed config gave {:?}", other.map(|_| ())))?,
    }
    Ok(format!(
        "{files} artifacts byte-identical across runs; round trip bit-exact; hash mismatch rejected"
    ))
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Check {
    let w = w_pos(10, 90);
    ensure(w == 0.9, || format!("w_pos(10,90) = {w}"))?;
    let mut rng = Rng::new(9);
    let balanced = ClassWeights::uniform(0.5);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let p: Vec<f64> = (0..NUM_CLASSES).map(|_| rng.uniform_range(0.01, 0.99)).collect();
        let mut labels = LabelVector::all(Label::Absent);
        for d in 0..NUM_CLASSES {
            labels.set(d, [Label::Present, Label::Absent, Label::Uncertain][rng.below(3)]);
        }
        let ce: f64 = (0..NUM_CLASSES)
            .filter_map(|d| match labels.get(d) {
                Label::Present => Some(-p[d].ln()),
                Label::Absent => Some(-(1.0 - p[d]).ln()),
                Label::Uncertain => None,
            })
            .sum();
        let l = wce_loss(&p, &labels, &balanced).map_err(e2s)?;
        worst = worst.max((l - 0.5 * ce).abs());
    }
    ensure(worst <= 1e-12, || format!("balanced deviation {worst:.2e}"))?;
    let mut labels = LabelVector::all(Label::Uncertain);
    labels.set(0, Label::Present);
    let mut p = vec![0.5; NUM_CLASSES];
    p[0] = 0.9;
    let mut w9 = ClassWeights::uniform(0.5);
    w9.w_pos[0] = w;
    let hand = wce_loss(&p, &labels, &w9).map_err(e2s)?;
    ensure((hand - 0.094824).abs() < 1e-6, || format!("hand value {hand}"))?;
    Ok(format!(
        "w_pos exact; balanced deviation {worst:.1e}; hand value {hand:.6}"
    ))
}

// ---------------------------------------------------------------- runner

fn main() {
    let mut failed = 0;
    let mut report = |n: u8, limit: Option<Duration>, f: &mut dyn FnMut() -> Check| {
        let t = Instant::now();
        let r = f();
        let dt = t.elapsed();
        let r = match (r, limit) {
            (Ok(m), Some(l)) if dt > l => Err(format!("{m}; took {dt:.1?}, limit {l:?}")),
            (r, _) => r,
        };
        match r {
            Ok(m) => println!("criterion {n}: PASS  {m} ({:.1}s)", dt.as_secs_f64()),
            Err(m) => {
                failed += 1;
                println!("criterion {n}: FAIL  {m} ({:.1}s)", dt.as_secs_f64());
            }
        }
    };
    let min = |m: u64| Some(Duration::from_secs(60 * m));
    report(1, min(2), &mut criterion_1);
    report(2, min(5), &mut criterion_2);
    report(3, None, &mut criterion_3);
    let mut runs = None;
    report(4, min(15), &mut || {
        let r = pipeline_runs()?;
        let m = criterion_4(&r);
        runs = Some(r);
        m
    });
    report(5, None, &mut criterion_5);
    report(6, None, &mut criterion_6);
    report(7, None, &mut || criterion_7(runs.as_ref().ok_or("no pipeline runs")?));
    report(8, None, &mut criterion_8);
    report(9, None, &mut criterion_9);
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
