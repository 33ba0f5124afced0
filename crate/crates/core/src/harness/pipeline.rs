//! The end-to-end flow: predictor training, scanpath generation, classifier
//! training with and without scanpaths, and evaluation reports.
//!
//! Artifacts live under one output directory:
//!
//! ```text
//! config.json                 copy of the run config (+ hash in run.json)
//! predictor/                  checkpoint + log.json
//! scanpaths/generated.jsonl   one model scanpath per image
//! classifier-with/            best-epoch checkpoint + log.json
//! classifier-without/
//! predictions/{with,without}.csv
//! reports/{scanpaths,classifier}.{csv,json}
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, restore_params, save_checkpoint, CheckpointMeta};
use super::config::{FeatureSource, RunConfig, ScanpathSource};
use super::dataset::{ingest, DatasetIndex, DatasetPaths, Split};
use super::report::{self, ClassifierReport, ScanpathReport};
use crate::classifier::{
    class_weights, prepare_input, train_classifier, Classifier, ClassifierConfig, ClassifierExample,
};
use crate::error::{Error, Result, ResultExt};
use crate::features::{extract_features, TinyCnn};
use crate::features::{global_avg_pool, load_feature_file, pgm, preprocess_image, FeatureMap};
use crate::labels::{LabelVector, NUM_CLASSES};
use crate::metrics::{macro_average, ClassMetric};
use crate::numerics::{AdamState, ParamStore, Rng};
use crate::predictor::{train_predictor, Predictor, PredictorSample, PredictorTrainConfig, TrainLog};
use crate::scanpath::{read_scanpaths, write_scanpaths, PatchDictionary, Scanpath};

pub const GENERATED_READER: &str = "model";

/// Independent random stream for one purpose of a run.
pub fn stream(seed: u64, tag: &str) -> Rng {
    // FNV-1a over the tag, mixed into the seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    Rng::new(seed ^ h)
}

/// Output directory of one run.
#[derive(Clone, Debug)]
pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct RunInfo {
    config_hash: String,
    seed: u64,
    rng: String,
}

impl Run {
    pub fn new(config: RunConfig, out: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            out: out.into(),
        })
    }

    pub fn hash(&self) -> String {
        self.config.hash()
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    /// Write `config.json` and `run.json` into the output directory.
    pub fn describe(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let cfg = self.path("config.json");
        std::fs::write(&cfg, self.config.to_json() + "\n").map_err(|e| Error::io(&cfg, e))?;
        let info = RunInfo {
            config_hash: self.hash(),
            seed: self.config.seed,
            rng: Rng::ALGORITHM.into(),
        };
        write_json(&self.path("run.json"), &info)
    }

    fn index(&self) -> Result<DatasetIndex> {
        ingest(&DatasetPaths::in_dir(&self.config.data_dir)).within("harness", || {
            format!("ingesting dataset {}", self.config.data_dir.display())
        })
    }
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        what: path.display().to_string(),
        source,
    })
}

/// Deep feature map and its global average for each image.
#[derive(Clone, Debug, Default)]
pub struct FeatureBank {
    pub maps: BTreeMap<String, FeatureMap>,
}

impl FeatureBank {
    pub fn load(index: &DatasetIndex, cfg: &RunConfig) -> Result<Self> {
        let mut maps = BTreeMap::new();
        let cnn = match cfg.features {
            FeatureSource::Cnn => {
                let mut store = ParamStore::new();
                let cnn = TinyCnn::new(&mut store, "cnn", &cfg.cnn, &mut stream(cfg.seed, "cnn"))?;
                Some((cnn, store))
            }
            FeatureSource::Files => None,
        };
        for e in index.entries.values() {
            let map = match (&cnn, &e.feature_path, &e.image_path) {
                (None, Some(p), _) => load_feature_file(p, Some(cfg.channels))?,
                (Some((cnn, store)), _, Some(p)) => {
                    let (img, _) = preprocess_image(&pgm::read(p)?)?;
                    extract_features(&img, cnn, store)?.0
                }
                _ => {
                    return Err(Error::Dataset(format!(
                        "image {} has no input for feature source {:?}",
                        e.image_id, cfg.features
                    )))
                }
            };
            maps.insert(e.image_id.clone(), map);
        }
        Ok(Self { maps })
    }

    pub fn map(&self, id: &str) -> Result<&FeatureMap> {
        self.maps
            .get(id)
            .ok_or_else(|| Error::Dataset(format!("no features loaded for image {id}")))
    }

    pub fn pooled(&self, id: &str) -> Result<Vec<f64>> {
        Ok(global_avg_pool(self.map(id)?))
    }
}

/// Predictor training pairs from images of `split`, first scanpath of each.
pub fn predictor_samples(index: &DatasetIndex, bank: &FeatureBank, split: Split) -> Result<Vec<PredictorSample>> {
    let dict = PatchDictionary::new();
    let mut out = Vec::new();
    for e in index.split(split) {
        let Some(sp) = e.scanpaths.first() else { continue };
        out.push(PredictorSample {
            image_id: e.image_id.clone(),
            feature: bank.pooled(&e.image_id)?,
            keys: dict.encode_scanpath(sp)?,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictorLog {
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
    pub train_next_key_accuracy: f64,
}

fn build_predictor(cfg: &RunConfig) -> Result<(Predictor, ParamStore)> {
    let mut store = ParamStore::new();
    let model = Predictor::new(
        &mut store,
        cfg.predictor.clone(),
        &mut stream(cfg.seed, "predictor-init"),
    )?;
    Ok((model, store))
}

/// Train the predictor; with `resume`, continue from `predictor/`.
pub fn train_predictor_cmd(run: &Run, resume: bool) -> Result<PredictorLog> {
    let cfg = &run.config;
    run.describe()?;
    let index = run.index()?.select_one_reader(&mut stream(cfg.seed, "readers"));
    let bank = FeatureBank::load(&index, cfg)?;
    let data = predictor_samples(&index, &bank, Split::Train)?;
    let (model, mut store) = build_predictor(cfg)?;
    let dir = run.path("predictor");
    let mut adam = AdamState::new(cfg.predictor_train.adam(), &store);
    let mut log = PredictorLog::default();
    let mut start = 1;
    if resume {
        let ck = load_checkpoint(&dir, Some(&run.hash())).within("harness", || "resuming predictor".into())?;
        restore_params(&mut store, &ck.store)?;
        adam = ck
            .adam
            .ok_or_else(|| Error::contract("predictor checkpoint has no optimizer state"))?;
        log = read_json(&dir.join("log.json"))?;
        log.epoch_losses.truncate(ck.manifest.epoch);
        start = ck.manifest.epoch + 1;
    }
    let one_epoch = PredictorTrainConfig {
        epochs: 1,
        ..cfg.predictor_train.clone()
    };
    for epoch in start..=cfg.predictor_train.epochs {
        let mut rng = stream(cfg.seed, &format!("predictor-epoch-{epoch}"));
        let TrainLog { epoch_losses, steps } =
            train_predictor(&model, &mut store, &mut adam, &data, &one_epoch, &mut rng)
                .within("predictor", || format!("training epoch {epoch}"))?;
        log::info!("predictor epoch {epoch}: loss {:.4}", epoch_losses[0]);
        log.epoch_losses.extend(epoch_losses);
        log.steps += steps;
        if epoch == cfg.predictor_train.epochs {
            log.train_next_key_accuracy = model.next_key_accuracy(&store, &data)?;
        }
        let meta = CheckpointMeta {
            kind: "predictor".into(),
            config_hash: run.hash(),
            seed: cfg.seed,
            step: adam.step_count(),
            epoch,
            validation_metric: None,
        };
        save_checkpoint(&dir, &store, Some(&adam), &meta)?;
        write_json(&dir.join("log.json"), &log)?;
    }
    if start > cfg.predictor_train.epochs {
        log.train_next_key_accuracy = model.next_key_accuracy(&store, &data)?;
    }
    write_json(&dir.join("log.json"), &log)?;
    Ok(log)
}

/// Greedy-decode one scanpath per image with the saved predictor.
pub fn predict_scanpaths_cmd(run: &Run) -> Result<BTreeMap<String, Scanpath>> {
    let cfg = &run.config;
    let index = run.index()?;
    let bank = FeatureBank::load(&index, cfg)?;
    let (model, mut store) = build_predictor(cfg)?;
    let ck =
        load_checkpoint(&run.path("predictor"), Some(&run.hash())).within("harness", || "loading predictor".into())?;
    restore_params(&mut store, &ck.store)?;
    let dict = PatchDictionary::new();
    let mut out = BTreeMap::new();
    for id in index.entries.keys() {
        let keys = model.greedy_decode(&store, &bank.pooled(id)?, cfg.decode)?;
        let sp = if keys[0].is_end() {
            // an immediate END still needs one fixation downstream
            Scanpath::new(
                id.as_str(),
                GENERATED_READER,
                vec![crate::scanpath::Fixation::new(128.0, 128.0)],
            )?
        } else {
            dict.decode_keys(id, GENERATED_READER, &keys)?
        };
        out.insert(id.clone(), sp);
    }
    let path = run.path("scanpaths/generated.jsonl");
    ensure_parent(&path)?;
    write_scanpaths(&path, out.values())?;
    Ok(out)
}

/// Mean fixation count of the training scanpaths, at least 1.
pub fn mean_train_length(index: &DatasetIndex) -> usize {
    let lens: Vec<usize> = index
        .split(Split::Train)
        .flat_map(|e| e.scanpaths.iter().map(Scanpath::len))
        .collect();
    if lens.is_empty() {
        return 1;
    }
    ((lens.iter().sum::<usize>() as f64 / lens.len() as f64).round() as usize).max(1)
}

/// Scanpath attached to each image for classifier training and inference.
fn classifier_scanpaths(run: &Run, index: &DatasetIndex) -> Result<BTreeMap<String, Scanpath>> {
    let cfg = &run.config;
    match cfg.classifier_scanpaths {
        ScanpathSource::Generated => {
            let path = run.path("scanpaths/generated.jsonl");
            let mut out = BTreeMap::new();
            for sp in read_scanpaths(&path).within("harness", || "reading generated scanpaths".into())? {
                out.insert(sp.image_id.clone(), sp);
            }
            if let Some(id) = index.entries.keys().find(|id| !out.contains_key(*id)) {
                return Err(Error::Dataset(format!("no generated scanpath for image {id}")));
            }
            Ok(out)
        }
        ScanpathSource::Recorded => {
            let one = index.select_one_reader(&mut stream(cfg.seed, "classifier-readers"));
            one.entries
                .values()
                .map(|e| {
                    e.scanpaths
                        .first()
                        .cloned()
                        .map(|s| (e.image_id.clone(), s))
                        .ok_or_else(|| Error::Dataset(format!("image {} has no recorded scanpath", e.image_id)))
                })
                .collect()
        }
        ScanpathSource::Random => {
            let n = mean_train_length(index);
            let mut rng = stream(cfg.seed, "classifier-random-scanpaths");
            let dict = PatchDictionary::new();
            index
                .entries
                .keys()
                .map(|id| Ok((id.clone(), dict.random_scanpath(id, n, &mut rng)?)))
                .collect()
        }
    }
}

fn classifier_config(cfg: &RunConfig, with_scanpath: bool) -> ClassifierConfig {
    ClassifierConfig {
        use_scanpath: with_scanpath,
        ..cfg.classifier.clone()
    }
}

fn variant(with_scanpath: bool) -> &'static str {
    if with_scanpath {
        "with"
    } else {
        "without"
    }
}

/// Classifier examples per split.
pub fn classifier_examples(
    index: &DatasetIndex,
    bank: &FeatureBank,
    scanpaths: Option<&BTreeMap<String, Scanpath>>,
    pool_grid: usize,
) -> Result<BTreeMap<Split, Vec<ClassifierExample>>> {
    let dict = PatchDictionary::new();
    let mut out: BTreeMap<Split, Vec<ClassifierExample>> = BTreeMap::new();
    for e in index.entries.values() {
        let keys = match scanpaths {
            Some(s) => dict.patch_keys(
                s.get(&e.image_id)
                    .ok_or_else(|| Error::Dataset(format!("no scanpath for image {}", e.image_id)))?,
            )?,
            None => Vec::new(),
        };
        out.entry(e.split).or_default().push(ClassifierExample {
            image_id: e.image_id.clone(),
            input: prepare_input(bank.map(&e.image_id)?, &keys, pool_grid)?,
            labels: e.labels,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierRunLog {
    pub variant: String,
    pub log: crate::classifier::ClassifierTrainLog,
}

fn build_classifier(cfg: &RunConfig, with_scanpath: bool) -> Result<(Classifier, ParamStore)> {
    let mut store = ParamStore::new();
    let tag = format!("classifier-{}-init", variant(with_scanpath));
    let model = Classifier::new(
        &mut store,
        classifier_config(cfg, with_scanpath),
        &mut stream(cfg.seed, &tag),
    )?;
    Ok((model, store))
}

/// Train one classifier variant and keep its best-validation checkpoint.
pub fn train_classifier_cmd(run: &Run, with_scanpath: bool) -> Result<ClassifierRunLog> {
    let cfg = &run.config;
    run.describe()?;
    let index = run.index()?;
    let bank = FeatureBank::load(&index, cfg)?;
    let scanpaths = if with_scanpath {
        Some(classifier_scanpaths(run, &index)?)
    } else {
        None
    };
    let mut ex = classifier_examples(&index, &bank, scanpaths.as_ref(), cfg.classifier.pool_grid)?;
    let train = ex.remove(&Split::Train).unwrap_or_default();
    let valid = ex.remove(&Split::Valid).unwrap_or_default();
    let labels: Vec<LabelVector> = train.iter().map(|e| e.labels).collect();
    let weights = class_weights(&labels);
    let (model, mut store) = build_classifier(cfg, with_scanpath)?;
    let mut adam = AdamState::new(cfg.classifier_train.adam(), &store);
    let mut rng = stream(cfg.seed, &format!("classifier-{}-train", variant(with_scanpath)));
    let log = train_classifier(
        &model,
        &mut store,
        &mut adam,
        &train,
        &valid,
        &weights,
        &cfg.classifier_train,
        &mut rng,
    )
    .within("classifier", || {
        format!("training the {} variant", variant(with_scanpath))
    })?;
    let best = log
        .epochs
        .get(log.best_epoch.saturating_sub(1))
        .and_then(|e| e.valid_auroc);
    let dir = run.path(&format!("classifier-{}", variant(with_scanpath)));
    let meta = CheckpointMeta {
        kind: format!("classifier-{}", variant(with_scanpath)),
        config_hash: run.hash(),
        seed: cfg.seed,
        step: adam.step_count(),
        epoch: log.best_epoch,
        validation_metric: best,
    };
    save_checkpoint(&dir, &store, Some(&adam), &meta)?;
    let out = ClassifierRunLog {
        variant: variant(with_scanpath).into(),
        log,
    };
    write_json(&dir.join("log.json"), &out)?;
    Ok(out)
}

/// Test-split probabilities of one variant, by image.
pub type Predictions = BTreeMap<String, Vec<f64>>;

/// Run a saved classifier on the test split and write `predictions/<variant>.csv`.
pub fn classify_cmd(run: &Run, with_scanpath: bool) -> Result<Predictions> {
    let cfg = &run.config;
    let index = run.index()?;
    let bank = FeatureBank::load(&index, cfg)?;
    let scanpaths = if with_scanpath {
        Some(classifier_scanpaths(run, &index)?)
    } else {
        None
    };
    let ex = classifier_examples(&index, &bank, scanpaths.as_ref(), cfg.classifier.pool_grid)?;
    let (model, mut store) = build_classifier(cfg, with_scanpath)?;
    let dir = run.path(&format!("classifier-{}", variant(with_scanpath)));
    let ck = load_checkpoint(&dir, Some(&run.hash())).within("harness", || format!("loading {}", dir.display()))?;
    restore_params(&mut store, &ck.store)?;
    let mut out = Predictions::new();
    for e in ex.get(&Split::Test).map(Vec::as_slice).unwrap_or(&[]) {
        out.insert(e.image_id.clone(), model.predict(&store, &e.input)?);
    }
    report::write_predictions(&run.path(&format!("predictions/{}.csv", variant(with_scanpath))), &out)?;
    Ok(out)
}

/// Macro AUROC/AUPRC of both variants on the test split.
pub fn eval_classifier_cmd(run: &Run) -> Result<ClassifierReport> {
    let index = run.index()?;
    let test: BTreeMap<&str, LabelVector> = index
        .split(Split::Test)
        .map(|e| (e.image_id.as_str(), e.labels))
        .collect();
    let mut results = BTreeMap::new();
    for with in [false, true] {
        let preds = report::read_predictions(&run.path(&format!("predictions/{}.csv", variant(with))))?;
        let (mut probs, mut labels) = (Vec::new(), Vec::new());
        for (id, l) in &test {
            let p = preds
                .get(*id)
                .ok_or_else(|| Error::Dataset(format!("no {} prediction for test image {id}", variant(with))))?;
            probs.push(p.clone());
            labels.push(*l);
        }
        for m in [ClassMetric::Auroc, ClassMetric::Auprc] {
            results.insert((m, with), macro_average(&probs, &labels, m)?);
        }
    }
    let rep = ClassifierReport::from_results(&results)?;
    report::write_classifier_report(&run.path("reports"), &rep)?;
    Ok(rep)
}

/// Table-I-style scanpath evaluation on the test split.
pub fn eval_scanpaths_cmd(run: &Run) -> Result<ScanpathReport> {
    let cfg = &run.config;
    let index = run.index()?;
    let generated: BTreeMap<String, Scanpath> = read_scanpaths(&run.path("scanpaths/generated.jsonl"))?
        .into_iter()
        .map(|s| (s.image_id.clone(), s))
        .collect();
    let n = mean_train_length(&index);
    let rep = report::scanpath_report(&index, &generated, n, cfg)?;
    report::write_scanpath_report(&run.path("reports"), &rep)?;
    Ok(rep)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub config_hash: String,
    pub predictor: PredictorLog,
    pub scanpaths: ScanpathReport,
    pub classifier: ClassifierReport,
}

/// Every stage in order.
pub fn run_pipeline(run: &Run) -> Result<PipelineSummary> {
    let predictor = train_predictor_cmd(run, false)?;
    predict_scanpaths_cmd(run)?;
    for with in [false, true] {
        train_classifier_cmd(run, with)?;
        classify_cmd(run, with)?;
    }
    let scanpaths = eval_scanpaths_cmd(run)?;
    let classifier = eval_classifier_cmd(run)?;
    let summary = PipelineSummary {
        config_hash: run.hash(),
        predictor,
        scanpaths,
        classifier,
    };
    write_json(&run.path("reports/summary.json"), &summary)?;
    Ok(summary)
}

/// Probabilities as `image_id,p01..p14` rows.
pub fn prediction_header() -> Vec<String> {
    let mut h = vec!["image_id".to_string()];
    h.extend((1..=NUM_CLASSES).map(|d| format!("p{d:02}")));
    h
}
