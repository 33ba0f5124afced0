//! Synthetic datasets where labels, feature blobs and fixation clusters are
//! coupled through a small set of latent conditions.
//!
//! Condition `k` owns a disjoint square region of the 8x8 feature grid.
//! When active it places a Gaussian blob on channel `k` inside its region,
//! sets label `k`, and draws readers' fixations into that region. Distractor
//! blobs with the same channel signatures land outside every region, so a
//! global average cannot tell a real finding from a distractor while a
//! feature pooled at a fixated region can.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{write_labels, write_splits, Split};
use crate::error::{Error, Result};
use crate::features::{save_feature_file, FeatureMap, DEEP_SIDE};
use crate::labels::{Label, LabelVector, NUM_CLASSES};
use crate::numerics::{Rng, Tensor};
use crate::scanpath::{write_scanpaths, Fixation, Scanpath, IMAGE_SIZE, PATCH_SIZE};

/// Square block of feature cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub row: usize,
    pub col: usize,
    pub size: usize,
}

impl Region {
    pub fn contains_cell(&self, r: usize, c: usize) -> bool {
        (self.row..self.row + self.size).contains(&r) && (self.col..self.col + self.size).contains(&c)
    }

    fn cell_px() -> f64 {
        IMAGE_SIZE / DEEP_SIDE as f64
    }

    /// Pixel rectangle `(x0, y0, x1, y1)`, half-open.
    pub fn pixel_bounds(&self) -> (f64, f64, f64, f64) {
        let s = Self::cell_px();
        (
            self.col as f64 * s,
            self.row as f64 * s,
            (self.col + self.size) as f64 * s,
            (self.row + self.size) as f64 * s,
        )
    }

    pub fn pixel_center(&self) -> Fixation {
        let (x0, y0, x1, y1) = self.pixel_bounds();
        Fixation::new((x0 + x1) / 2.0, (y0 + y1) / 2.0)
    }

    /// Centre of the patch just up and left of the region centre, where
    /// reader fixations cluster.
    pub fn fixation_target(&self) -> Fixation {
        let c = self.pixel_center();
        let half = PATCH_SIZE / 2.0;
        Fixation::new(c.x - half, c.y - half)
    }

    /// Centre in cell coordinates (cell `i` spans `[i, i+1)`).
    fn cell_center(&self) -> (f64, f64) {
        let h = self.size as f64 / 2.0;
        (self.row as f64 + h, self.col as f64 + h)
    }

    fn overlaps(&self, o: &Region) -> bool {
        self.row < o.row + o.size
            && o.row < self.row + self.size
            && self.col < o.col + o.size
            && o.col < self.col + self.size
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub channels: usize,
    /// One region per condition; `K = regions.len()`.
    pub regions: Vec<Region>,
    pub active_prob: f64,
    pub blob_amplitude: f64,
    /// Blob standard deviation in feature cells.
    pub blob_sigma: f64,
    pub feature_noise: f64,
    /// Constant marker on channel `K + k` over region `k`, identical in
    /// every image; 0 disables it.
    pub landmark_amplitude: f64,
    pub max_distractors: usize,
    /// Standard deviation of fixations around a region's fixation target, in pixels;
    /// fixations are clamped to the region.
    pub fixation_spread: f64,
    /// Probability that a fixation is replaced by a uniform random one.
    pub scanpath_noise: f64,
    pub fixations_per_region: (usize, usize),
    pub readers: usize,
    pub uncertain_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_train: 512,
            n_valid: 64,
            n_test: 128,
            channels: 16,
            regions: vec![
                Region {
                    row: 1,
                    col: 1,
                    size: 2,
                },
                Region {
                    row: 1,
                    col: 5,
                    size: 2,
                },
                Region {
                    row: 5,
                    col: 1,
                    size: 2,
                },
                Region {
                    row: 5,
                    col: 5,
                    size: 2,
                },
            ],
            active_prob: 0.4,
            blob_amplitude: 1.0,
            blob_sigma: 0.6,
            feature_noise: 0.1,
            landmark_amplitude: 0.5,
            max_distractors: 2,
            fixation_spread: 4.0,
            scanpath_noise: 0.05,
            fixations_per_region: (2, 3),
            readers: 3,
            uncertain_fraction: 0.05,
        }
    }
}

impl SyntheticSpec {
    pub fn num_images(&self) -> usize {
        self.n_train + self.n_valid + self.n_test
    }

    pub fn conditions(&self) -> usize {
        self.regions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.conditions();
        if k == 0 || k > NUM_CLASSES || k > self.channels {
            return Err(Error::contract(format!(
                "need 1..={} conditions within {} channels, got {k}",
                NUM_CLASSES, self.channels
            )));
        }
        for (i, r) in self.regions.iter().enumerate() {
            if r.size == 0 || r.row + r.size > DEEP_SIDE || r.col + r.size > DEEP_SIDE {
                return Err(Error::contract(format!(
                    "region {i} does not fit the {DEEP_SIDE}x{DEEP_SIDE} grid"
                )));
            }
            for (j, o) in self.regions.iter().enumerate().skip(i + 1) {
                if r.overlaps(o) {
                    return Err(Error::contract(format!("regions {i} and {j} overlap")));
                }
            }
        }
        if self.landmark_amplitude != 0.0 && 2 * k > self.channels {
            return Err(Error::contract(format!(
                "landmarks need {} channels, got {}",
                2 * k,
                self.channels
            )));
        }
        let (lo, hi) = self.fixations_per_region;
        if lo == 0 || hi < lo {
            return Err(Error::contract("fixations_per_region must satisfy 1 <= lo <= hi"));
        }
        if self.readers == 0 || self.num_images() == 0 {
            return Err(Error::contract("need at least one image and one reader"));
        }
        for (name, p) in [
            ("active_prob", self.active_prob),
            ("scanpath_noise", self.scanpath_noise),
            ("uncertain_fraction", self.uncertain_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::contract(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }

    fn free_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..DEEP_SIDE {
            for c in 0..DEEP_SIDE {
                if !self.regions.iter().any(|g| g.contains_cell(r, c)) {
                    out.push((r, c));
                }
            }
        }
        out
    }
}

/// One generated image before it is written out.
#[derive(Clone, Debug)]
pub struct SynthImage {
    pub image_id: String,
    pub split: Split,
    pub active: Vec<bool>,
    pub map: FeatureMap,
    pub scanpaths: Vec<Scanpath>,
    pub labels: LabelVector,
}

pub fn image_id(i: usize) -> String {
    format!("img{i:05}")
}

fn add_blob(data: &mut [f64], channel: usize, center: (f64, f64), amplitude: f64, sigma: f64) {
    let n = DEEP_SIDE;
    for r in 0..n {
        for c in 0..n {
            let (dy, dx) = (r as f64 + 0.5 - center.0, c as f64 + 0.5 - center.1);
            data[(channel * n + r) * n + c] += amplitude * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
        }
    }
}

fn reader_scanpath(spec: &SyntheticSpec, id: &str, reader: usize, active: &[bool], rng: &mut Rng) -> Result<Scanpath> {
    let mut fixations = Vec::new();
    for (k, region) in spec.regions.iter().enumerate() {
        if !active[k] {
            continue;
        }
        let (lo, hi) = spec.fixations_per_region;
        let count = lo + rng.below(hi - lo + 1);
        let (x0, y0, x1, y1) = region.pixel_bounds();
        let centre = region.fixation_target();
        for _ in 0..count {
            let f = if spec.scanpath_noise > 0.0 && rng.bernoulli(spec.scanpath_noise) {
                Fixation::new(rng.uniform() * IMAGE_SIZE, rng.uniform() * IMAGE_SIZE)
            } else {
                let x = centre.x + spec.fixation_spread * rng.normal();
                let y = centre.y + spec.fixation_spread * rng.normal();
                Fixation::new(x.clamp(x0, x1 - 1e-6), y.clamp(y0, y1 - 1e-6))
            };
            fixations.push(f);
        }
    }
    if fixations.is_empty() {
        // nothing to look at: a single central fixation
        fixations.push(Fixation::new(IMAGE_SIZE / 2.0, IMAGE_SIZE / 2.0));
    }
    Scanpath::new(id, format!("r{}", reader + 1), fixations)
}

/// Generate all images in memory; same spec and seed give the same data.
pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<Vec<SynthImage>> {
    spec.validate()?;
    let mut rng = Rng::new(seed);
    let free = spec.free_cells();
    let k = spec.conditions();
    let n = DEEP_SIDE;
    let mut out = Vec::with_capacity(spec.num_images());
    for i in 0..spec.num_images() {
        let id = image_id(i);
        let split = if i < spec.n_train {
            Split::Train
        } else if i < spec.n_train + spec.n_valid {
            Split::Valid
        } else {
            Split::Test
        };
        let active: Vec<bool> = (0..k).map(|_| rng.bernoulli(spec.active_prob)).collect();
        let mut data: Vec<f64> = (0..spec.channels * n * n)
            .map(|_| spec.feature_noise * rng.normal())
            .collect();
        for (c, region) in spec.regions.iter().enumerate() {
            if active[c] {
                add_blob(&mut data, c, region.cell_center(), spec.blob_amplitude, spec.blob_sigma);
            }
        }
        if spec.landmark_amplitude != 0.0 {
            for (c, region) in spec.regions.iter().enumerate() {
                for r in region.row..region.row + region.size {
                    for col in region.col..region.col + region.size {
                        data[((k + c) * n + r) * n + col] += spec.landmark_amplitude;
                    }
                }
            }
        }
        if !free.is_empty() {
            for _ in 0..rng.below(spec.max_distractors + 1) {
                let c = rng.below(k);
                let (r, col) = free[rng.below(free.len())];
                add_blob(
                    &mut data,
                    c,
                    (r as f64 + 0.5, col as f64 + 0.5),
                    spec.blob_amplitude,
                    spec.blob_sigma,
                );
            }
        }
        let map = FeatureMap::new(Tensor::new(vec![spec.channels, n, n], data)?)?;
        let scanpaths = (0..spec.readers)
            .map(|r| reader_scanpath(spec, &id, r, &active, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let mut labels = LabelVector::all(Label::Absent);
        for (c, &a) in active.iter().enumerate() {
            let l = if spec.uncertain_fraction > 0.0 && rng.bernoulli(spec.uncertain_fraction) {
                Label::Uncertain
            } else if a {
                Label::Present
            } else {
                Label::Absent
            };
            labels.set(c, l);
        }
        out.push(SynthImage {
            image_id: id,
            split,
            active,
            map,
            scanpaths,
            labels,
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct SynthManifest<'a> {
    seed: u64,
    spec: &'a SyntheticSpec,
    images: usize,
}

/// Write `features/*.tnsr`, `scanpaths.jsonl`, `labels.csv`, `splits.csv`
/// and `synth.json` under `out_dir`.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64, out_dir: &Path) -> Result<Vec<SynthImage>> {
    let images = generate(spec, seed)?;
    let fdir = out_dir.join("features");
    std::fs::create_dir_all(&fdir).map_err(|e| Error::io(&fdir, e))?;
    for img in &images {
        save_feature_file(&fdir.join(format!("{}.tnsr", img.image_id)), &img.map)?;
    }
    write_scanpaths(
        &out_dir.join("scanpaths.jsonl"),
        images.iter().flat_map(|i| &i.scanpaths),
    )?;
    write_labels(
        &out_dir.join("labels.csv"),
        images.iter().map(|i| (i.image_id.as_str(), &i.labels)),
    )?;
    write_splits(
        &out_dir.join("splits.csv"),
        images.iter().map(|i| (i.image_id.as_str(), i.split)),
    )?;
    let manifest = SynthManifest {
        seed,
        spec,
        images: images.len(),
    };
    let path = out_dir.join("synth.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(images)
}
