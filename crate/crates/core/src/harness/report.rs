//! Report files. CSVs share the columns `metric,subset,image_id,value`;
//! rows with an empty `image_id` hold dataset-level means. The method or
//! model variant is the prefix of `metric` (`Model:ScanMatch`,
//! `AUROC:with`).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::dataset::{DatasetIndex, Split};
use super::pipeline::{ensure_parent, prediction_header, stream, write_json, Predictions};
use crate::error::{Error, Result};
use crate::labels::NUM_CLASSES;
use crate::metrics::{
    evaluate_subset, improvement_pct, radiologist_benchmark, ClassMetric, MacroResult, ProtocolResult, References,
    ScanpathMetric, Subset,
};
use crate::scanpath::{PatchDictionary, Scanpath};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub metric: String,
    pub subset: String,
    pub image_id: String,
    pub value: f64,
}

pub fn write_rows(path: &Path, rows: &[CsvRow]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Dataset(format!("writing {}: {e}", path.display()));
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Dataset(e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_predictions(path: &Path, preds: &Predictions) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Dataset(format!("writing {}: {e}", path.display()));
    w.write_record(prediction_header()).map_err(err)?;
    for (id, p) in preds {
        let mut rec = vec![id.clone()];
        rec.extend(p.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Dataset(e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Predictions> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = Predictions::new();
    let parse_err = |line: usize, detail: String| Error::Parse {
        file: path.display().to_string(),
        line,
        column: None,
        detail,
    };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != NUM_CLASSES + 1 {
            return Err(parse_err(line, format!("expected {} columns", NUM_CLASSES + 1)));
        }
        let probs = rec
            .iter()
            .skip(1)
            .map(|c| c.parse::<f64>().map_err(|e| parse_err(line, format!("{c:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        out.insert(rec[0].to_string(), probs);
    }
    Ok(out)
}

/// One metric in the with/without layout: A, B and `|A-B|/A*100`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub without_scanpath: f64,
    pub with_scanpath: f64,
    pub imprnt_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub auroc: Comparison,
    pub auprc: Comparison,
    /// Per-class values `[without, with]`; `None` for skipped classes.
    pub per_class_auroc: Vec<Option<[f64; 2]>>,
    pub skipped_classes: Vec<usize>,
}

impl ClassifierReport {
    pub fn from_results(results: &BTreeMap<(ClassMetric, bool), MacroResult>) -> Result<Self> {
        let get = |m: ClassMetric, with: bool| -> Result<&MacroResult> {
            results
                .get(&(m, with))
                .ok_or_else(|| Error::contract(format!("missing {} result", m.name())))
        };
        let cmp = |m: ClassMetric| -> Result<Comparison> {
            let undefined = || Error::undefined(m.name(), "every class is degenerate on the test split");
            let a = get(m, false)?.mean.ok_or_else(undefined)?;
            let b = get(m, true)?.mean.ok_or_else(undefined)?;
            Ok(Comparison {
                without_scanpath: a,
                with_scanpath: b,
                imprnt_pct: improvement_pct(a, b),
            })
        };
        let (a, b) = (get(ClassMetric::Auroc, false)?, get(ClassMetric::Auroc, true)?);
        let per_class_auroc = (0..NUM_CLASSES)
            .map(|d| Some([a.per_class[d]?, b.per_class[d]?]))
            .collect();
        Ok(Self {
            auroc: cmp(ClassMetric::Auroc)?,
            auprc: cmp(ClassMetric::Auprc)?,
            per_class_auroc,
            skipped_classes: a.skipped(),
        })
    }

    pub fn rows(&self) -> Vec<CsvRow> {
        let mut rows = Vec::new();
        for (name, c) in [("AUROC", &self.auroc), ("AUPRC", &self.auprc)] {
            for (col, v) in [
                ("without", c.without_scanpath),
                ("with", c.with_scanpath),
                ("imprnt_pct", c.imprnt_pct),
            ] {
                rows.push(CsvRow {
                    metric: format!("{name}:{col}"),
                    subset: "test".into(),
                    image_id: String::new(),
                    value: v,
                });
            }
        }
        rows
    }
}

pub fn write_classifier_report(dir: &Path, rep: &ClassifierReport) -> Result<()> {
    write_rows(&dir.join("classifier.csv"), &rep.rows())?;
    write_json(&dir.join("classifier.json"), rep)
}

/// Subset -> method -> metric -> mean, plus per-image rows for the CSV.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanpathReport {
    pub means: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>,
    pub images: BTreeMap<String, usize>,
    pub skipped: usize,
    #[serde(skip)]
    pub rows: Vec<CsvRow>,
}

impl ScanpathReport {
    pub fn mean(&self, subset: Subset, method: &str, metric: ScanpathMetric) -> Option<f64> {
        self.means.get(subset.name())?.get(method)?.get(metric.name()).copied()
    }

    fn add(&mut self, subset: &str, method: &str, metric: ScanpathMetric, r: ProtocolResult) {
        for (id, v) in &r.per_image {
            self.rows.push(CsvRow {
                metric: format!("{method}:{}", metric.name()),
                subset: subset.into(),
                image_id: id.clone(),
                value: *v,
            });
        }
        self.skipped += r.skipped.len();
        if let Some(m) = r.mean {
            self.rows.push(CsvRow {
                metric: format!("{method}:{}", metric.name()),
                subset: subset.into(),
                image_id: String::new(),
                value: m,
            });
            self.means
                .entry(subset.into())
                .or_default()
                .entry(method.into())
                .or_default()
                .insert(metric.name().into(), m);
        }
    }
}

/// Radiologist, Random and Model rows for Set-1 (test images with several
/// readers) and Set-2 (all test images, one seeded reader each).
pub fn scanpath_report(
    index: &DatasetIndex,
    generated: &BTreeMap<String, Scanpath>,
    random_len: usize,
    cfg: &RunConfig,
) -> Result<ScanpathReport> {
    let test: Vec<_> = index.split(Split::Test).filter(|e| !e.scanpaths.is_empty()).collect();
    let set2_refs: References = test.iter().map(|e| (e.image_id.clone(), e.scanpaths.clone())).collect();
    let set1_refs: References = test
        .iter()
        .filter(|e| e.scanpaths.len() > 1)
        .map(|e| (e.image_id.clone(), e.scanpaths.clone()))
        .collect();
    let dict = PatchDictionary::new();
    let mut rng = stream(cfg.seed, "eval-random-scanpaths");
    let mut random = BTreeMap::new();
    let mut model = BTreeMap::new();
    for e in &test {
        random.insert(
            e.image_id.clone(),
            dict.random_scanpath(&e.image_id, random_len, &mut rng)?,
        );
        let g = generated
            .get(&e.image_id)
            .ok_or_else(|| Error::Dataset(format!("no generated scanpath for test image {}", e.image_id)))?;
        model.insert(e.image_id.clone(), g.clone());
    }
    let mut rep = ScanpathReport::default();
    rep.images.insert(Subset::Set1.name().into(), set1_refs.len());
    rep.images.insert(Subset::Set2.name().into(), set2_refs.len());
    for metric in ScanpathMetric::ALL {
        if !set1_refs.is_empty() {
            let r = radiologist_benchmark(&set1_refs, metric, &cfg.scanmatch)?;
            rep.add(Subset::Set1.name(), "Radiologist", metric, r);
        }
        for (method, paths) in [("Random", &random), ("Model", &model)] {
            for (subset, refs) in [(Subset::Set1, &set1_refs), (Subset::Set2, &set2_refs)] {
                let gens: BTreeMap<String, Scanpath> = paths
                    .iter()
                    .filter(|(id, _)| refs.contains_key(*id))
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect();
                if gens.is_empty() {
                    continue;
                }
                // same reader draw for every method
                let mut pick = stream(cfg.seed, "set2-readers");
                let r = evaluate_subset(&gens, refs, subset, metric, &cfg.scanmatch, &mut pick)?;
                rep.add(subset.name(), method, metric, r);
            }
        }
    }
    Ok(rep)
}

pub fn write_scanpath_report(dir: &Path, rep: &ScanpathReport) -> Result<()> {
    write_rows(&dir.join("scanpaths.csv"), &rep.rows)?;
    write_json(&dir.join("scanpaths.json"), rep)
}
