use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::similarity::{multimatch, scanmatch, ScanMatchConfig};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::scanpath::Scanpath;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScanpathMetric {
    ScanMatch,
    MmVector,
    MmDirection,
    MmLength,
    MmPosition,
}

impl ScanpathMetric {
    pub const ALL: [ScanpathMetric; 5] = [
        ScanpathMetric::ScanMatch,
        ScanpathMetric::MmVector,
        ScanpathMetric::MmDirection,
        ScanpathMetric::MmLength,
        ScanpathMetric::MmPosition,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScanpathMetric::ScanMatch => "ScanMatch",
            ScanpathMetric::MmVector => "MultiMatch-vector",
            ScanpathMetric::MmDirection => "MultiMatch-direction",
            ScanpathMetric::MmLength => "MultiMatch-length",
            ScanpathMetric::MmPosition => "MultiMatch-position",
        }
    }

    pub fn score(self, a: &Scanpath, b: &Scanpath, cfg: &ScanMatchConfig) -> Result<f64> {
        if self == ScanpathMetric::ScanMatch {
            return scanmatch(a, b, cfg);
        }
        let r = multimatch(a, b)?;
        Ok(match self {
            ScanpathMetric::MmVector => r.vector,
            ScanpathMetric::MmDirection => r.direction,
            ScanpathMetric::MmLength => r.length,
            _ => r.position,
        })
    }
}

/// Mean score of `generated` against every reference.
pub fn mean_against(
    generated: &Scanpath,
    refs: &[&Scanpath],
    metric: ScanpathMetric,
    cfg: &ScanMatchConfig,
) -> Result<f64> {
    if refs.is_empty() {
        return Err(Error::contract(format!(
            "no reference scanpaths for image {}",
            generated.image_id
        )));
    }
    let mut sum = 0.0;
    for r in refs {
        sum += metric.score(generated, r, cfg)?;
    }
    Ok(sum / refs.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Subset {
    /// Average against all readers of each image.
    Set1,
    /// One seeded-random reader per image.
    Set2,
}

impl Subset {
    pub fn name(self) -> &'static str {
        match self {
            Subset::Set1 => "Set-1",
            Subset::Set2 => "Set-2",
        }
    }
}

/// Per-image scores and their mean.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub per_image: Vec<(String, f64)>,
    /// Images where the metric is undefined, with the reason.
    pub skipped: Vec<(String, String)>,
    pub mean: Option<f64>,
}

impl ProtocolResult {
    fn push(&mut self, image: &str, r: Result<f64>) -> Result<()> {
        match r {
            Ok(v) => self.per_image.push((image.to_string(), v)),
            Err(Error::UndefinedMetric { detail, .. }) => self.skipped.push((image.to_string(), detail)),
            Err(e) => return Err(e),
        }
        Ok(())
    }

    fn finish(mut self) -> Self {
        if !self.per_image.is_empty() {
            self.mean = Some(self.per_image.iter().map(|p| p.1).sum::<f64>() / self.per_image.len() as f64);
        }
        self
    }
}

/// References grouped by image, readers in input order.
pub type References = BTreeMap<String, Vec<Scanpath>>;

pub fn group_by_image(paths: &[Scanpath]) -> References {
    let mut out = References::new();
    for p in paths {
        out.entry(p.image_id.clone()).or_default().push(p.clone());
    }
    out
}

/// Score one scanpath per image against the references of that image.
///
/// Images are visited in `image_id` order, so the Set-2 reader choice only
/// depends on the seed of `rng`.
pub fn evaluate_subset(
    generated: &BTreeMap<String, Scanpath>,
    refs: &References,
    subset: Subset,
    metric: ScanpathMetric,
    cfg: &ScanMatchConfig,
    rng: &mut Rng,
) -> Result<ProtocolResult> {
    let mut out = ProtocolResult::default();
    for (image, gen) in generated {
        let readers = refs.get(image).map(Vec::as_slice).unwrap_or(&[]);
        if readers.is_empty() {
            return Err(Error::contract(format!("no reference scanpaths for image {image}")));
        }
        let chosen: Vec<&Scanpath> = match subset {
            Subset::Set1 => readers.iter().collect(),
            Subset::Set2 => vec![&readers[rng.below(readers.len())]],
        };
        out.push(image, mean_against(gen, &chosen, metric, cfg))?;
    }
    Ok(out.finish())
}

/// Inter-reader benchmark: each reader against all others, averaged per
/// image. Images with a single reader are skipped.
pub fn radiologist_benchmark(
    refs: &References,
    metric: ScanpathMetric,
    cfg: &ScanMatchConfig,
) -> Result<ProtocolResult> {
    let mut out = ProtocolResult::default();
    for (image, readers) in refs {
        if readers.len() < 2 {
            out.skipped.push((image.clone(), "fewer than two readers".into()));
            continue;
        }
        let per_reader: Result<f64> = (|| {
            let mut sum = 0.0;
            for (i, r) in readers.iter().enumerate() {
                let others: Vec<&Scanpath> = readers
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|p| p.1)
                    .collect();
                sum += mean_against(r, &others, metric, cfg)?;
            }
            Ok(sum / readers.len() as f64)
        })();
        out.push(image, per_reader)?;
    }
    Ok(out.finish())
}
