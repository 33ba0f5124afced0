use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{class_names, Label, LabelVector, NUM_CLASSES};
use crate::numerics::Rng;
use crate::scanpath::{read_scanpaths, write_scanpaths, Scanpath};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "valid" => Some(Split::Valid),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn csv_line(pos: Option<&csv::Position>) -> usize {
    pos.map_or(0, |p| p.line() as usize)
}

fn csv_error(file: &Path, e: csv::Error) -> Error {
    let line = csv_line(e.position());
    Error::Parse {
        file: file.display().to_string(),
        line,
        column: None,
        detail: e.to_string(),
    }
}

/// Labels file: header `image_id,c01..c14`, cells in `{1, 0, -1}`.
pub fn parse_labels(text: &str, file: &Path) -> Result<BTreeMap<String, LabelVector>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| csv_error(file, e))?.clone();
    let mut expected = vec!["image_id".to_string()];
    expected.extend(class_names());
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Parse {
            file: file.display().to_string(),
            line: 1,
            column: None,
            detail: format!("header must be {}", expected.join(",")),
        });
    }
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(file, e))?;
        let line = csv_line(rec.position());
        let err = |column: Option<&str>, detail: String| Error::Parse {
            file: file.display().to_string(),
            line,
            column: column.map(str::to_string),
            detail,
        };
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(err(Some("image_id"), "empty image_id".into()));
        }
        let mut codes = [0i8; NUM_CLASSES];
        for d in 0..NUM_CLASSES {
            let cell = rec[d + 1].trim();
            codes[d] = cell
                .parse::<i8>()
                .ok()
                .filter(|c| Label::from_code(*c).is_some())
                .ok_or_else(|| {
                    err(
                        Some(&expected[d + 1]),
                        format!("label cell {cell:?} is not one of 1, 0, -1"),
                    )
                })?;
        }
        if out.insert(id.clone(), LabelVector::from_codes(&codes)?).is_some() {
            return Err(err(Some("image_id"), format!("duplicate image_id {id}")));
        }
    }
    Ok(out)
}

pub fn read_labels(path: &Path) -> Result<BTreeMap<String, LabelVector>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, path)
}

pub fn write_labels<'a>(path: &Path, rows: impl IntoIterator<Item = (&'a str, &'a LabelVector)>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["image_id".to_string()];
    header.extend(class_names());
    let io = |e: csv::Error| Error::Dataset(format!("writing {}: {e}", path.display()));
    w.write_record(&header).map_err(io)?;
    for (id, l) in rows {
        let mut rec = vec![id.to_string()];
        rec.extend(l.codes().iter().map(|c| c.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Dataset(e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn parse_splits(text: &str, file: &Path) -> Result<BTreeMap<String, Split>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| csv_error(file, e))?.clone();
    if header.iter().ne(["image_id", "split"]) {
        return Err(Error::Parse {
            file: file.display().to_string(),
            line: 1,
            column: None,
            detail: "header must be image_id,split".into(),
        });
    }
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(file, e))?;
        let split = Split::parse(rec[1].trim()).ok_or_else(|| Error::Parse {
            file: file.display().to_string(),
            line: csv_line(rec.position()),
            column: Some("split".into()),
            detail: format!("unknown split {:?}", &rec[1]),
        })?;
        out.insert(rec[0].trim().to_string(), split);
    }
    Ok(out)
}

pub fn write_splits<'a>(path: &Path, rows: impl IntoIterator<Item = (&'a str, Split)>) -> Result<()> {
    let mut text = String::from("image_id,split\n");
    for (id, s) in rows {
        text.push_str(&format!("{id},{s}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageEntry {
    pub image_id: String,
    pub feature_path: Option<PathBuf>,
    pub image_path: Option<PathBuf>,
    pub scanpaths: Vec<Scanpath>,
    pub labels: LabelVector,
    pub split: Split,
}

/// Cross-validated view of one dataset directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetIndex {
    pub entries: BTreeMap<String, ImageEntry>,
}

/// Where [`ingest`] looks for each input.
#[derive(Clone, Debug)]
pub struct DatasetPaths {
    pub scanpaths: PathBuf,
    pub labels: PathBuf,
    pub features: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub splits: Option<PathBuf>,
}

impl DatasetPaths {
    /// Standard layout: `scanpaths.jsonl`, `labels.csv`, `splits.csv`,
    /// `features/` and (optionally) `images/`.
    pub fn in_dir(dir: &Path) -> Self {
        let opt = |p: PathBuf| p.exists().then_some(p);
        Self {
            scanpaths: dir.join("scanpaths.jsonl"),
            labels: dir.join("labels.csv"),
            features: Some(dir.join("features")),
            images: opt(dir.join("images")),
            splits: opt(dir.join("splits.csv")),
        }
    }
}

/// Load and cross-check scanpaths, labels, splits and feature files.
///
/// Images without a split entry are treated as training images.
pub fn ingest(paths: &DatasetPaths) -> Result<DatasetIndex> {
    let labels = read_labels(&paths.labels)?;
    let scanpaths = read_scanpaths(&paths.scanpaths)?;
    let splits = match &paths.splits {
        Some(p) => parse_splits(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?, p)?,
        None => BTreeMap::new(),
    };
    if let Some(id) = splits.keys().find(|id| !labels.contains_key(*id)) {
        return Err(Error::Dataset(format!("splits file names unknown image_id {id}")));
    }
    let mut entries: BTreeMap<String, ImageEntry> = BTreeMap::new();
    let mut missing = Vec::new();
    for (id, l) in &labels {
        let feature_path = paths.features.as_ref().map(|d| d.join(format!("{id}.tnsr")));
        let image_path = paths.images.as_ref().map(|d| d.join(format!("{id}.pgm")));
        let has_feature = feature_path.as_ref().is_some_and(|p| p.is_file());
        let has_image = image_path.as_ref().is_some_and(|p| p.is_file());
        if !has_feature && !has_image {
            missing.push(id.clone());
        }
        entries.insert(
            id.clone(),
            ImageEntry {
                image_id: id.clone(),
                feature_path: feature_path.filter(|_| has_feature),
                image_path: image_path.filter(|_| has_image),
                scanpaths: Vec::new(),
                labels: *l,
                split: splits.get(id).copied().unwrap_or(Split::Train),
            },
        );
    }
    if !missing.is_empty() {
        return Err(Error::Dataset(format!(
            "{} image(s) have neither a feature file nor an image: {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    for sp in scanpaths {
        let entry = entries.get_mut(&sp.image_id).ok_or_else(|| {
            Error::Dataset(format!(
                "scanpath of reader {} refers to unknown image_id {}",
                sp.reader_id, sp.image_id
            ))
        })?;
        entry.scanpaths.push(sp);
    }
    Ok(DatasetIndex { entries })
}

impl DatasetIndex {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ImageEntry> {
        self.entries.values().filter(move |e| e.split == split)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keep one seeded-random reader per image (images in `image_id` order).
    pub fn select_one_reader(&self, rng: &mut Rng) -> DatasetIndex {
        let mut out = self.clone();
        for e in out.entries.values_mut() {
            if e.scanpaths.len() > 1 {
                let keep = rng.below(e.scanpaths.len());
                e.scanpaths = vec![e.scanpaths.swap_remove(keep)];
            }
        }
        out
    }

    pub fn readers(&self) -> BTreeSet<String> {
        self.entries
            .values()
            .flat_map(|e| e.scanpaths.iter().map(|s| s.reader_id.clone()))
            .collect()
    }

    /// Write scanpaths, labels and splits into `dir` (features are referenced, not copied).
    pub fn dump(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_scanpaths(
            &dir.join("scanpaths.jsonl"),
            self.entries.values().flat_map(|e| &e.scanpaths),
        )?;
        write_labels(
            &dir.join("labels.csv"),
            self.entries.values().map(|e| (e.image_id.as_str(), &e.labels)),
        )?;
        write_splits(
            &dir.join("splits.csv"),
            self.entries.values().map(|e| (e.image_id.as_str(), e.split)),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> String {
        let mut h = vec!["image_id".to_string()];
        h.extend(class_names());
        h.join(",")
    }

    #[test]
    fn bad_cell_names_row_and_column() {
        let text = format!(
            "{}\na,1,0,0,0,0,0,0,0,0,0,0,0,0,0\nb,0,0,2,0,0,0,0,0,0,0,0,0,0,0\n",
            header()
        );
        match parse_labels(&text, Path::new("labels.csv")) {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(column.as_deref(), Some("c03"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn short_row_and_bad_header() {
        let text = format!("{}\na,1,0\n", header());
        assert!(matches!(
            parse_labels(&text, Path::new("l")),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(parse_labels("id,x\n", Path::new("l")).is_err());
    }

    #[test]
    fn uncertain_is_kept() {
        let text = format!("{}\na,-1,0,0,0,0,0,0,0,0,0,0,0,0,1\n", header());
        let l = parse_labels(&text, Path::new("l")).unwrap();
        assert_eq!(l["a"].get(0), Label::Uncertain);
        assert_eq!(l["a"].get(13), Label::Present);
    }

    #[test]
    fn splits() {
        let s = parse_splits("image_id,split\na,train\nb,test\n", Path::new("s")).unwrap();
        assert_eq!(s["b"], Split::Test);
        assert!(parse_splits("image_id,split\na,dev\n", Path::new("s")).is_err());
    }
}
