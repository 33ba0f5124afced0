//! Scanpath-guided multi-label classifier.
//!
//! The visual branch is the global average of the deep feature map (`F_v`).
//! The scanpath branch pools the map at each fixated patch, runs those
//! vectors through an LSTM (the ISM) and summarizes the hidden states with
//! scaled dot-product attention, query = last state (`F_A`). A linear head
//! over `[F_v, F_A]` gives one logit per class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{global_avg_pool, pool_at, pool_at_var, upscale2x, FeatureMap};
use crate::labels::{LabelVector, NUM_CLASSES};
use crate::layers::{Linear, LstmCell};
use crate::metrics::{macro_average, ClassMetric};
use crate::numerics::{adam_step, AdamConfig, AdamState, Graph, ParamStore, Rng, Tensor, Var};
use crate::scanpath::{Key, GRID};

/// Probabilities are clamped into `[P_EPS, 1 - P_EPS]` before logs.
pub const P_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attention {
    On,
    /// `F_A` is the last ISM state.
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub feature_dim: usize,
    pub ism_hidden: usize,
    /// Side of the map fixations are pooled on: 16 (upscaled) or 8 (raw).
    pub pool_grid: usize,
    pub attention: Attention,
    /// `false` gives the visual-only baseline.
    pub use_scanpath: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            feature_dim: 128,
            ism_hidden: 256,
            pool_grid: GRID,
            attention: Attention::On,
            use_scanpath: true,
        }
    }
}

/// Per-class positive weight `n_neg / (n_pos + n_neg)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w_pos: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform(w: f64) -> Self {
        Self {
            w_pos: vec![w; NUM_CLASSES],
        }
    }
}

pub const WEIGHT_CLAMP: (f64, f64) = (1e-3, 1.0 - 1e-3);

pub fn w_pos(n_pos: usize, n_neg: usize) -> f64 {
    if n_pos + n_neg == 0 {
        return 0.5;
    }
    (n_neg as f64 / (n_pos + n_neg) as f64).clamp(WEIGHT_CLAMP.0, WEIGHT_CLAMP.1)
}

/// Reverse-frequency weights; uncertain labels are not counted.
pub fn class_weights(labels: &[LabelVector]) -> ClassWeights {
    let w_pos = (0..NUM_CLASSES)
        .map(|d| {
            let n_pos = labels.iter().filter(|l| l.get(d).target() == Some(1.0)).count();
            let n_neg = labels.iter().filter(|l| l.get(d).target() == Some(0.0)).count();
            if n_pos + n_neg == 0 {
                log::warn!("class {d} has no certain labels; using weight 0.5");
            }
            w_pos(n_pos, n_neg)
        })
        .collect();
    ClassWeights { w_pos }
}

/// Precomputed classifier inputs for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierInput {
    pub fv: Vec<f64>,
    /// Pooled feature at each fixation, in scanpath order.
    pub thetas: Vec<Vec<f64>>,
}

/// `F_v` and the fixation-pooled sequence for `keys` (END, if present, ends it).
pub fn prepare_input(map: &FeatureMap, keys: &[Key], pool_grid: usize) -> Result<ClassifierInput> {
    let fv = global_avg_pool(map);
    let keys: Vec<Key> = keys.iter().copied().take_while(|k| !k.is_end()).collect();
    if keys.is_empty() {
        return Ok(ClassifierInput { fv, thetas: Vec::new() });
    }
    let side = map.height();
    let pooled = if side == pool_grid {
        map.clone()
    } else if 2 * side == pool_grid {
        upscale2x(map)?
    } else {
        return Err(Error::contract(format!(
            "cannot pool a {side}x{side} map on a {pool_grid}x{pool_grid} grid"
        )));
    };
    let thetas = keys.iter().map(|&k| pool_at(&pooled, k)).collect::<Result<_>>()?;
    Ok(ClassifierInput { fv, thetas })
}

/// Attention pooling of `memory` with `query`; empty memory returns `query`.
pub fn attention(g: &mut Graph, query: Var, memory: &[Var]) -> Var {
    if memory.is_empty() {
        return query;
    }
    let h = g.dims(query)[0] as f64;
    let m = g.stack(memory);
    let s = g.matmul(m, query);
    let s = g.scale(s, 1.0 / h.sqrt());
    let alpha = g.softmax(s);
    g.matmul(alpha, m)
}

/// Value-level attention: returns `(alpha, F_A)`.
pub fn attention_weights(query: &[f64], memory: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    if memory.iter().any(|m| m.len() != query.len()) {
        return Err(Error::contract("attention memory and query widths differ"));
    }
    if memory.is_empty() {
        return Ok((Vec::new(), query.to_vec()));
    }
    let mut g = Graph::new();
    let q = g.input(Tensor::vector(query.to_vec()));
    let mem: Vec<Var> = memory.iter().map(|m| g.input(Tensor::vector(m.clone()))).collect();
    let stacked = g.stack(&mem);
    let s = g.matmul(stacked, q);
    let s = g.scale(s, 1.0 / (query.len() as f64).sqrt());
    let alpha = g.softmax(s);
    let fa = g.matmul(alpha, stacked);
    g.check()?;
    Ok((g.value(alpha).data().to_vec(), g.value(fa).data().to_vec()))
}

#[derive(Clone, Debug)]
pub struct Classifier {
    pub config: ClassifierConfig,
    ism: Option<LstmCell>,
    head: Linear,
}

impl Classifier {
    pub fn new(store: &mut ParamStore, config: ClassifierConfig, rng: &mut Rng) -> Result<Self> {
        if config.feature_dim == 0 || config.ism_hidden == 0 {
            return Err(Error::contract("classifier dimensions must be positive"));
        }
        if config.pool_grid != GRID && config.pool_grid != GRID / 2 {
            return Err(Error::contract(format!(
                "pool_grid must be {GRID} or {}, got {}",
                GRID / 2,
                config.pool_grid
            )));
        }
        let (ism, head_in) = if config.use_scanpath {
            let ism = LstmCell::new(store, "classifier.ism", config.feature_dim, config.ism_hidden, rng)?;
            (Some(ism), config.feature_dim + config.ism_hidden)
        } else {
            (None, config.feature_dim)
        };
        let head = Linear::new(store, "classifier.head", head_in, NUM_CLASSES, rng)?;
        Ok(Self { config, ism, head })
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    /// ISM hidden states `h_1..h_T`.
    pub fn ism_forward(&self, g: &mut Graph, store: &ParamStore, thetas: &[Var]) -> Result<Vec<Var>> {
        let ism = self
            .ism
            .as_ref()
            .ok_or_else(|| Error::contract("visual-only classifier has no ISM"))?;
        if thetas.is_empty() {
            return Err(Error::contract("ISM needs at least one fixation"));
        }
        let (mut h, mut c) = ism.zero_state(g);
        let mut hs = Vec::with_capacity(thetas.len());
        for &x in thetas {
            (h, c) = ism.step(g, store, x, h, c)?;
            hs.push(h);
        }
        Ok(hs)
    }

    /// Logits `S` over the classes from precomputed inputs.
    pub fn logits(&self, g: &mut Graph, store: &ParamStore, input: &ClassifierInput) -> Result<Var> {
        let c = self.config.feature_dim;
        if input.fv.len() != c {
            return Err(Error::contract(format!(
                "F_v has width {}, classifier expects {c}",
                input.fv.len()
            )));
        }
        if let Some(t) = input.thetas.iter().find(|t| t.len() != c) {
            return Err(Error::contract(format!(
                "pooled fixation feature has width {}",
                t.len()
            )));
        }
        let fv = g.input(Tensor::vector(input.fv.clone()));
        let thetas: Vec<Var> = if self.config.use_scanpath {
            input
                .thetas
                .iter()
                .map(|t| g.input(Tensor::vector(t.clone())))
                .collect()
        } else {
            Vec::new()
        };
        self.logits_vars(g, store, fv, &thetas)
    }

    /// Logits straight from a `[C, 8, 8]` map node, pooling inside the graph.
    pub fn logits_from_map(&self, g: &mut Graph, store: &ParamStore, map: Var, keys: &[Key]) -> Result<Var> {
        let dims = g.dims(map).to_vec();
        if dims.len() != 3 || dims[0] != self.config.feature_dim {
            return Err(Error::contract(format!(
                "classifier cannot take a map of dims {dims:?}"
            )));
        }
        let fv = g.spatial_mean(map);
        let mut thetas = Vec::new();
        if self.config.use_scanpath {
            let pooled = if dims[1] == self.config.pool_grid {
                map
            } else if 2 * dims[1] == self.config.pool_grid {
                g.upscale2x(map)
            } else {
                return Err(Error::contract(format!(
                    "cannot pool a {0}x{0} map on a {1}x{1} grid",
                    dims[1], self.config.pool_grid
                )));
            };
            for &k in keys.iter().take_while(|k| !k.is_end()) {
                thetas.push(pool_at_var(g, pooled, k)?);
            }
        }
        self.logits_vars(g, store, fv, &thetas)
    }

    fn logits_vars(&self, g: &mut Graph, store: &ParamStore, fv: Var, thetas: &[Var]) -> Result<Var> {
        let head_in = if self.config.use_scanpath {
            let hs = self.ism_forward(g, store, thetas)?;
            let (last, memory) = hs.split_last().expect("non-empty");
            let fa = match self.config.attention {
                Attention::On => attention(g, *last, memory),
                Attention::Off => *last,
            };
            g.concat(&[fv, fa])
        } else {
            fv
        };
        Ok(self.head.forward(g, store, head_in))
    }

    pub fn probs(&self, g: &mut Graph, store: &ParamStore, input: &ClassifierInput) -> Result<Var> {
        let s = self.logits(g, store, input)?;
        Ok(g.sigmoid(s))
    }

    pub fn predict(&self, store: &ParamStore, input: &ClassifierInput) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.probs(&mut g, store, input)?;
        g.check()?;
        Ok(g.value(p).data().to_vec())
    }

    pub fn loss(&self, g: &mut Graph, store: &ParamStore, ex: &ClassifierExample, w: &ClassWeights) -> Result<Var> {
        let p = self.probs(g, store, &ex.input)?;
        wce_loss_graph(g, p, &ex.labels, w)
    }
}

/// Weighted cross-entropy over certain labels; uncertain classes are never
/// touched, so they contribute nothing to value or gradient.
pub fn wce_loss_graph(g: &mut Graph, probs: Var, labels: &LabelVector, w: &ClassWeights) -> Result<Var> {
    if g.dims(probs) != [NUM_CLASSES] || w.w_pos.len() != NUM_CLASSES {
        return Err(Error::contract(format!(
            "wce_loss needs {NUM_CLASSES} probabilities and weights, got {:?} and {}",
            g.dims(probs),
            w.w_pos.len()
        )));
    }
    let mut terms = Vec::new();
    for d in 0..NUM_CLASSES {
        let Some(y) = labels.get(d).target() else { continue };
        let p = g.pick(probs, d);
        let p = g.clamp(p, P_EPS, 1.0 - P_EPS);
        let term = if y == 1.0 {
            let lp = g.log(p);
            g.scale(lp, -w.w_pos[d])
        } else {
            let q = g.scale_shift(p, -1.0, 1.0);
            let lq = g.log(q);
            g.scale(lq, -(1.0 - w.w_pos[d]))
        };
        terms.push(term);
    }
    Ok(if terms.is_empty() {
        g.input(Tensor::scalar(0.0))
    } else {
        g.add_n(&terms)
    })
}

/// Value-level weighted cross-entropy; `p_hat` must lie in the open unit interval.
pub fn wce_loss(p_hat: &[f64], labels: &LabelVector, w: &ClassWeights) -> Result<f64> {
    if let Some(p) = p_hat.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::contract(format!("probability {p} is outside (0, 1)")));
    }
    let mut g = Graph::new();
    let p = g.input(Tensor::vector(p_hat.to_vec()));
    let l = wce_loss_graph(&mut g, p, labels, w)?;
    g.check()?;
    Ok(g.scalar(l))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierExample {
    pub image_id: String,
    pub input: ClassifierInput,
    pub labels: LabelVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierTrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Multiplier applied every `lr_period` epochs; period 0 keeps lr fixed.
    pub lr_factor: f64,
    pub lr_period: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 25,
            batch_size: 16,
            lr_factor: 0.2,
            lr_period: 6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ClassifierTrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Learning rate in effect during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.lr_period == 0 {
            return self.lr;
        }
        self.lr * self.lr_factor.powi(((epoch.max(1) - 1) / self.lr_period) as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub valid_auroc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTrainLog {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub steps: u64,
}

/// 1-based index of the first maximum; the last epoch if nothing was scored.
pub fn select_best(valid_aurocs: &[Option<f64>]) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in valid_aurocs.iter().enumerate() {
        if let Some(v) = *v {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map_or(valid_aurocs.len(), |(i, _)| i + 1)
}

/// Macro AUROC of `model` on `data`; `None` when every class is degenerate.
pub fn evaluate_auroc(model: &Classifier, store: &ParamStore, data: &[ClassifierExample]) -> Result<Option<f64>> {
    let probs = data
        .iter()
        .map(|ex| model.predict(store, &ex.input))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<LabelVector> = data.iter().map(|ex| ex.labels).collect();
    Ok(macro_average(&probs, &labels, ClassMetric::Auroc)?.mean)
}

/// One Adam step on the mean loss of `batch`.
pub fn classifier_step(
    model: &Classifier,
    store: &mut ParamStore,
    adam: &mut AdamState,
    batch: &[&ClassifierExample],
    w: &ClassWeights,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    store.zero_grad();
    let mut total = 0.0;
    for ex in batch {
        let mut g = Graph::new();
        let l = model.loss(&mut g, store, ex, w)?;
        total += g.scalar(l);
        g.backward(l, store)?;
    }
    store.scale_grad(1.0 / batch.len() as f64);
    adam_step(store, adam)?;
    Ok(total / batch.len() as f64)
}

/// Minibatch training with step decay; keeps the parameters and optimizer
/// state of the epoch with the best validation AUROC.
#[allow(clippy::too_many_arguments)]
pub fn train_classifier(
    model: &Classifier,
    store: &mut ParamStore,
    adam: &mut AdamState,
    train: &[ClassifierExample],
    valid: &[ClassifierExample],
    w: &ClassWeights,
    cfg: &ClassifierTrainConfig,
    rng: &mut Rng,
) -> Result<ClassifierTrainLog> {
    if train.is_empty() {
        return Err(Error::contract("classifier training set is empty"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::contract("batch size and epoch count must be positive"));
    }
    let mut log = ClassifierTrainLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, ParamStore, AdamState)> = None;
    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        adam.set_lr(lr);
        rng.shuffle(&mut order);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&ClassifierExample> = chunk.iter().map(|&i| &train[i]).collect();
            sum += classifier_step(model, store, adam, &batch, w)? * batch.len() as f64;
            log.steps += 1;
        }
        let valid_auroc = if valid.is_empty() {
            None
        } else {
            evaluate_auroc(model, store, valid)?
        };
        log.epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss: sum / train.len() as f64,
            valid_auroc,
        });
        if let Some(v) = valid_auroc {
            if best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                best = Some((v, store.clone(), adam.clone()));
            }
        }
    }
    let scores: Vec<Option<f64>> = log.epochs.iter().map(|e| e.valid_auroc).collect();
    log.best_epoch = select_best(&scores);
    if let Some((_, s, a)) = best {
        *store = s;
        *adam = a;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::Label;

    fn single(class: usize, label: Label) -> LabelVector {
        let mut v = LabelVector::all(Label::Uncertain);
        v.set(class, label);
        v
    }

    #[test]
    fn weights() {
        assert_eq!(w_pos(10, 90), 0.9);
        assert_eq!(w_pos(50, 50), 0.5);
        assert_eq!(w_pos(0, 50), 0.999);
        assert_eq!(w_pos(50, 0), 0.001);
        assert_eq!(w_pos(0, 0), 0.5);
        let all_u = vec![LabelVector::all(Label::Uncertain); 3];
        assert_eq!(class_weights(&all_u), ClassWeights::uniform(0.5));
    }

    #[test]
    fn hand_value() {
        let mut p = vec![0.5; NUM_CLASSES];
        p[0] = 0.9;
        let mut w = ClassWeights::uniform(0.5);
        w.w_pos[0] = 0.9;
        let l = wce_loss(&p, &single(0, Label::Present), &w).unwrap();
        assert!((l - 0.094824).abs() < 1e-6);
        assert!((l + 0.9 * 0.9f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn fully_masked_is_zero() {
        let l = wce_loss(
            &[0.3; NUM_CLASSES],
            &LabelVector::all(Label::Uncertain),
            &ClassWeights::uniform(0.7),
        );
        assert_eq!(l.unwrap(), 0.0);
    }

    #[test]
    fn out_of_range_probability_rejected() {
        let y = LabelVector::all(Label::Absent);
        let w = ClassWeights::uniform(0.5);
        for bad in [0.0, 1.0, -0.1, f64::NAN] {
            let mut p = vec![0.5; NUM_CLASSES];
            p[3] = bad;
            assert!(matches!(wce_loss(&p, &y, &w), Err(Error::Contract(_))));
        }
    }

    #[test]
    fn attention_single_slot_and_identical_memory() {
        let (alpha, fa) = attention_weights(&[0.3, -0.2], &[vec![1.0, 2.0]]).unwrap();
        assert_eq!(alpha, vec![1.0]);
        assert_eq!(fa, vec![1.0, 2.0]);
        let v = vec![0.25, -0.5, 0.75];
        let (_, fa) = attention_weights(&[1.0, 1.0, 1.0], &[v.clone(), v.clone(), v.clone()]).unwrap();
        for (a, b) in fa.iter().zip(&v) {
            assert!((a - b).abs() < 1e-15);
        }
        let (alpha, fa) = attention_weights(&[1.0, 2.0], &[]).unwrap();
        assert!(alpha.is_empty());
        assert_eq!(fa, vec![1.0, 2.0]);
    }

    #[test]
    fn schedule() {
        let c = ClassifierTrainConfig::default();
        assert_eq!(c.lr_at(1), 1e-4);
        assert_eq!(c.lr_at(6), 1e-4);
        assert!((c.lr_at(7) - 0.2e-4).abs() < 1e-20);
        assert!((c.lr_at(13) - 0.04e-4).abs() < 1e-20);
    }

    #[test]
    fn best_epoch() {
        assert_eq!(select_best(&[Some(0.6), Some(0.9), Some(0.7)]), 2);
        assert_eq!(select_best(&[Some(0.9), Some(0.9)]), 1);
        assert_eq!(select_best(&[None, None, None]), 3);
    }

    #[test]
    fn zero_head_gives_half() {
        let mut store = ParamStore::new();
        let cfg = ClassifierConfig {
            feature_dim: 3,
            ism_hidden: 4,
            ..Default::default()
        };
        let m = Classifier::new(&mut store, cfg, &mut Rng::new(5)).unwrap();
        let w = m.head().weight;
        store.value_mut(w).data_mut().fill(0.0);
        let input = ClassifierInput {
            fv: vec![1.0, 2.0, 3.0],
            thetas: vec![vec![0.5, 0.1, -0.3]; 2],
        };
        assert_eq!(m.predict(&store, &input).unwrap(), vec![0.5; NUM_CLASSES]);
    }

    #[test]
    fn visual_only_ignores_scanpath() {
        let mut store = ParamStore::new();
        let cfg = ClassifierConfig {
            feature_dim: 3,
            use_scanpath: false,
            ..Default::default()
        };
        let m = Classifier::new(&mut store, cfg, &mut Rng::new(5)).unwrap();
        let a = ClassifierInput {
            fv: vec![1.0, 2.0, 3.0],
            thetas: vec![],
        };
        let b = ClassifierInput {
            thetas: vec![vec![9.0; 3]; 4],
            ..a.clone()
        };
        assert_eq!(m.predict(&store, &a).unwrap(), m.predict(&store, &b).unwrap());
    }

    #[test]
    fn empty_scanpath_is_rejected() {
        let mut store = ParamStore::new();
        let cfg = ClassifierConfig {
            feature_dim: 3,
            ism_hidden: 2,
            ..Default::default()
        };
        let m = Classifier::new(&mut store, cfg, &mut Rng::new(5)).unwrap();
        let input = ClassifierInput {
            fv: vec![1.0, 2.0, 3.0],
            thetas: vec![],
        };
        assert!(matches!(m.predict(&store, &input), Err(Error::Contract(_))));
    }
}
