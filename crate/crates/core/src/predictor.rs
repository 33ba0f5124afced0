//! Iterative predictor network: an LSTM that emits, at every step, a
//! distribution over the 257 dictionary keys.
//!
//! Step 1 sees only the image feature (through `first_step`). Every later
//! step sees `[feature_proj(F), embed(previous key)]`, where the previous
//! key is ground truth during training and the model's own argmax during
//! decoding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Embedding, Linear, LstmCell};
use crate::numerics::{adam_step, AdamConfig, AdamState, Graph, ParamStore, Rng, Tensor, Var};
use crate::scanpath::{Key, NUM_KEYS};

/// Floor applied to target probabilities before the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    /// Width `C` of the pooled image feature.
    pub feature_dim: usize,
    /// Width of `F'`.
    pub proj_dim: usize,
    /// Width of the key embedding.
    pub embed_dim: usize,
    pub hidden: usize,
    /// Uniform init bound of the output layer; small keeps the initial
    /// distribution near uniform.
    pub out_init: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            feature_dim: 128,
            proj_dim: 256,
            embed_dim: 256,
            hidden: 512,
            out_init: 1e-2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { max_len: 64 }
    }
}

#[derive(Clone, Debug)]
pub struct Predictor {
    pub config: PredictorConfig,
    feature_proj: Linear,
    embed: Embedding,
    first_step: Linear,
    lstm: LstmCell,
    out: Linear,
}

impl Predictor {
    pub fn new(store: &mut ParamStore, config: PredictorConfig, rng: &mut Rng) -> Result<Self> {
        let c = &config;
        if c.feature_dim == 0 || c.proj_dim == 0 || c.embed_dim == 0 || c.hidden == 0 {
            return Err(Error::contract("predictor dimensions must be positive"));
        }
        let x_dim = c.proj_dim + c.embed_dim;
        let feature_proj = Linear::new(store, "predictor.feature_proj", c.feature_dim, c.proj_dim, rng)?;
        let embed = Embedding::new(store, "predictor.embed", NUM_KEYS, c.embed_dim, rng)?;
        let first_step = Linear::new(store, "predictor.first_step", c.feature_dim, x_dim, rng)?;
        let lstm = LstmCell::new(store, "predictor.lstm", x_dim, c.hidden, rng)?;
        let out = Linear::with_scale(store, "predictor.out", c.hidden, NUM_KEYS, c.out_init, rng)?;
        Ok(Self {
            config,
            feature_proj,
            embed,
            first_step,
            lstm,
            out,
        })
    }

    /// Handle of the output bias, e.g. to bias the model towards a key.
    pub fn out_bias(&self) -> crate::numerics::ParamId {
        self.out.bias
    }

    fn check_feature(&self, feature: &[f64]) -> Result<()> {
        if feature.len() != self.config.feature_dim {
            return Err(Error::contract(format!(
                "predictor expects a feature of width {}, got {}",
                self.config.feature_dim,
                feature.len()
            )));
        }
        Ok(())
    }

    /// Distributions `p_1 ..= p_{T+1}` under teacher forcing.
    pub fn teacher_forced(&self, g: &mut Graph, store: &ParamStore, feature: Var, keys: &[Key]) -> Result<Vec<Var>> {
        validate_keys(keys)?;
        let (mut h, mut c) = self.lstm.zero_state(g);
        let fproj = self.feature_proj.forward(g, store, feature);
        let mut dists = Vec::with_capacity(keys.len());
        for t in 0..keys.len() {
            let x = if t == 0 {
                self.first_step.forward(g, store, feature)
            } else {
                let y = self.embed.forward(g, store, keys[t - 1].index());
                g.concat(&[fproj, y])
            };
            (h, c) = self.lstm.step(g, store, x, h, c)?;
            let logits = self.out.forward(g, store, h);
            dists.push(g.softmax(logits));
        }
        Ok(dists)
    }

    /// Value-level [`Predictor::teacher_forced`].
    pub fn teacher_forced_forward(&self, store: &ParamStore, feature: &[f64], keys: &[Key]) -> Result<Vec<Vec<f64>>> {
        self.check_feature(feature)?;
        let mut g = Graph::new();
        let f = g.input(Tensor::vector(feature.to_vec()));
        let dists = self.teacher_forced(&mut g, store, f, keys)?;
        g.check()?;
        Ok(dists.iter().map(|&d| g.value(d).data().to_vec()).collect())
    }

    /// Teacher-forced sequence loss for one sample.
    pub fn loss(&self, g: &mut Graph, store: &ParamStore, feature: &[f64], keys: &[Key]) -> Result<Var> {
        self.check_feature(feature)?;
        let f = g.input(Tensor::vector(feature.to_vec()));
        let dists = self.teacher_forced(g, store, f, keys)?;
        nll_loss_graph(g, &dists, keys)
    }

    /// Greedy autoregressive decoding; ties go to the lowest key.
    ///
    /// Returns at most `max_len` patch keys, followed by END if the model
    /// emitted it within the budget.
    pub fn greedy_decode(&self, store: &ParamStore, feature: &[f64], cfg: DecodeConfig) -> Result<Vec<Key>> {
        self.check_feature(feature)?;
        if cfg.max_len == 0 {
            return Err(Error::contract("max_len must be at least 1"));
        }
        let mut g = Graph::new();
        let f = g.input(Tensor::vector(feature.to_vec()));
        let fproj = self.feature_proj.forward(&mut g, store, f);
        let (mut h, mut c) = self.lstm.zero_state(&mut g);
        let mut keys = Vec::new();
        let mut prev: Option<Key> = None;
        loop {
            let x = match prev {
                None => self.first_step.forward(&mut g, store, f),
                Some(k) => {
                    let y = self.embed.forward(&mut g, store, k.index());
                    g.concat(&[fproj, y])
                }
            };
            (h, c) = self.lstm.step(&mut g, store, x, h, c)?;
            let logits = self.out.forward(&mut g, store, h);
            let p = g.softmax(logits);
            g.check()?;
            let k = Key::new(argmax(g.value(p).data()))?;
            keys.push(k);
            if k.is_end() || keys.len() == cfg.max_len {
                break;
            }
            prev = Some(k);
        }
        Ok(keys)
    }

    /// Fraction of teacher-forced steps whose argmax equals the target key.
    pub fn next_key_accuracy(&self, store: &ParamStore, samples: &[PredictorSample]) -> Result<f64> {
        let (mut hit, mut total) = (0usize, 0usize);
        for s in samples {
            let dists = self.teacher_forced_forward(store, &s.feature, &s.keys)?;
            for (p, k) in dists.iter().zip(&s.keys) {
                hit += (argmax(p) == k.index()) as usize;
                total += 1;
            }
        }
        Ok(hit as f64 / total.max(1) as f64)
    }
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn validate_keys(keys: &[Key]) -> Result<()> {
    if keys.len() < 2 {
        return Err(Error::contract("key sequence needs at least one fixation and END"));
    }
    if !keys[keys.len() - 1].is_end() {
        return Err(Error::contract("key sequence must end with END"));
    }
    if let Some(i) = keys[..keys.len() - 1].iter().position(|k| k.is_end()) {
        return Err(Error::contract(format!(
            "END appears at position {i} before the final position"
        )));
    }
    Ok(())
}

/// `-Σ_t log p_t(keys[t])` over all steps, END included.
pub fn nll_loss_graph(g: &mut Graph, dists: &[Var], keys: &[Key]) -> Result<Var> {
    if dists.len() != keys.len() {
        return Err(Error::contract(format!(
            "{} distributions for {} target keys",
            dists.len(),
            keys.len()
        )));
    }
    validate_keys(keys)?;
    let mut terms = Vec::with_capacity(keys.len());
    for (t, (&p, k)) in dists.iter().zip(keys).enumerate() {
        let pk = g.pick(p, k.index());
        if g.scalar(pk) == 0.0 {
            return Err(Error::Numeric {
                node: format!("nll step {}", t + 1),
                detail: format!("zero probability assigned to target key {k}"),
            });
        }
        let clamped = g.clamp(pk, PROB_FLOOR, 1.0);
        terms.push(g.log(clamped));
    }
    let total = g.add_n(&terms);
    Ok(g.scale(total, -1.0))
}

/// Value-level sequence NLL.
pub fn nll_loss(dists: &[Vec<f64>], keys: &[Key]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = dists.iter().map(|d| g.input(Tensor::vector(d.clone()))).collect();
    let l = nll_loss_graph(&mut g, &vars, keys)?;
    g.check()?;
    Ok(g.scalar(l))
}

/// One training example: pooled image feature and its END-terminated keys.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorSample {
    pub image_id: String,
    pub feature: Vec<f64>,
    pub keys: Vec<Key>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorTrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for PredictorTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            epochs: 200,
            batch_size: 16,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl PredictorTrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Mean per-sample loss of each epoch, measured during the epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

/// One Adam step on the mean loss of `batch`. Returns that mean loss.
pub fn predictor_step(
    model: &Predictor,
    store: &mut ParamStore,
    adam: &mut AdamState,
    batch: &[&PredictorSample],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    store.zero_grad();
    let mut total = 0.0;
    for s in batch {
        let mut g = Graph::new();
        let l = model.loss(&mut g, store, &s.feature, &s.keys)?;
        total += g.scalar(l);
        g.backward(l, store)?;
    }
    store.scale_grad(1.0 / batch.len() as f64);
    adam_step(store, adam)?;
    Ok(total / batch.len() as f64)
}

/// Teacher-forced training with shuffled minibatches.
pub fn train_predictor(
    model: &Predictor,
    store: &mut ParamStore,
    adam: &mut AdamState,
    data: &[PredictorSample],
    cfg: &PredictorTrainConfig,
    rng: &mut Rng,
) -> Result<TrainLog> {
    if data.is_empty() {
        return Err(Error::contract("predictor training set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::contract("batch size must be positive"));
    }
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PredictorSample> = chunk.iter().map(|&i| &data[i]).collect();
            sum += predictor_step(model, store, adam, &batch)? * batch.len() as f64;
            log.steps += 1;
        }
        log.epoch_losses.push(sum / data.len() as f64);
    }
    Ok(log)
}
