//! Fixations, scanpaths and the patch dictionary.
//!
//! All coordinates live in the canonical 256x256 frame produced by
//! [`crate::features::preprocess_image`]. The frame is cut into a 16x16
//! grid of 16-pixel patches; patch keys run row-major from 0 to 255 and
//! key 256 is the end-of-sequence token.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

pub const IMAGE_SIZE: f64 = 256.0;
pub const GRID: usize = 16;
pub const PATCH_SIZE: f64 = 16.0;
pub const NUM_PATCHES: usize = GRID * GRID;
/// Patches plus the end token.
pub const NUM_KEYS: usize = NUM_PATCHES + 1;

/// A dictionary key: a patch index in `0..256` or [`Key::END`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Key(u16);

impl Key {
    pub const END: Key = Key(NUM_PATCHES as u16);

    pub fn new(index: usize) -> Result<Key> {
        if index < NUM_KEYS {
            Ok(Key(index as u16))
        } else {
            Err(Error::contract(format!("key {index} outside 0..{NUM_KEYS}")))
        }
    }

    /// Patch key at grid `(row, col)`.
    pub fn patch(row: usize, col: usize) -> Result<Key> {
        if row < GRID && col < GRID {
            Ok(Key((row * GRID + col) as u16))
        } else {
            Err(Error::contract(format!(
                "grid cell ({row}, {col}) outside {GRID}x{GRID}"
            )))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_end(self) -> bool {
        self == Key::END
    }

    /// `(row, col)` of a patch key; `None` for END.
    pub fn cell(self) -> Option<(usize, usize)> {
        (!self.is_end()).then(|| (self.index() / GRID, self.index() % GRID))
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_end() {
            f.write_str("END")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// A gaze point in canonical pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    pub x: f64,
    pub y: f64,
}

impl Fixation {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn in_bounds(&self) -> bool {
        (0.0..IMAGE_SIZE).contains(&self.x) && (0.0..IMAGE_SIZE).contains(&self.y)
    }

    pub fn distance(&self, other: &Fixation) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Ordered fixations of one reader on one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Scanpath {
    pub image_id: String,
    pub reader_id: String,
    fixations: Vec<Fixation>,
}

impl Scanpath {
    /// Requires at least one fixation, all inside the canonical frame.
    pub fn new(image_id: impl Into<String>, reader_id: impl Into<String>, fixations: Vec<Fixation>) -> Result<Self> {
        let image_id = image_id.into();
        if fixations.is_empty() {
            return Err(Error::contract(format!("scanpath for `{image_id}` has no fixations")));
        }
        if let Some(i) = fixations.iter().position(|f| !f.in_bounds()) {
            let f = fixations[i];
            return Err(Error::contract(format!(
                "fixation {i} of `{image_id}` at ({}, {}) is outside [0, 256)",
                f.x, f.y
            )));
        }
        Ok(Self {
            image_id,
            reader_id: reader_id.into(),
            fixations,
        })
    }

    pub fn fixations(&self) -> &[Fixation] {
        &self.fixations
    }

    pub fn len(&self) -> usize {
        self.fixations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixations.is_empty()
    }

    pub fn with_reader(mut self, reader_id: impl Into<String>) -> Self {
        self.reader_id = reader_id.into();
        self
    }
}

/// The 16x16 patch grid over the 256-pixel canonical frame, plus END.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PatchDictionary;

impl PatchDictionary {
    pub fn new() -> Self {
        Self
    }

    pub fn num_keys(&self) -> usize {
        NUM_KEYS
    }

    /// Patch containing `f`; patch intervals are half-open.
    pub fn bin_fixation(&self, f: Fixation) -> Result<Key> {
        if !f.in_bounds() {
            return Err(Error::contract(format!("fixation ({}, {}) outside [0, 256)", f.x, f.y)));
        }
        let col = (f.x / PATCH_SIZE).floor() as usize;
        let row = (f.y / PATCH_SIZE).floor() as usize;
        Key::patch(row, col)
    }

    pub fn patch_center(&self, key: Key) -> Result<Fixation> {
        let (row, col) = key.cell().ok_or_else(|| Error::contract("END has no spatial extent"))?;
        Ok(Fixation::new(
            col as f64 * PATCH_SIZE + PATCH_SIZE / 2.0,
            row as f64 * PATCH_SIZE + PATCH_SIZE / 2.0,
        ))
    }

    /// Keys of every fixation followed by END.
    pub fn encode_scanpath(&self, s: &Scanpath) -> Result<Vec<Key>> {
        if s.is_empty() {
            return Err(Error::contract("cannot encode an empty scanpath"));
        }
        let mut keys = s
            .fixations()
            .iter()
            .map(|&f| self.bin_fixation(f))
            .collect::<Result<Vec<_>>>()?;
        keys.push(Key::END);
        Ok(keys)
    }

    /// Patch keys of a scanpath without the END token.
    pub fn patch_keys(&self, s: &Scanpath) -> Result<Vec<Key>> {
        s.fixations().iter().map(|&f| self.bin_fixation(f)).collect()
    }

    /// Scanpath through the centres of `keys`, stopping at the first END.
    pub fn decode_keys(&self, image_id: &str, reader_id: &str, keys: &[Key]) -> Result<Scanpath> {
        let fixations = keys
            .iter()
            .take_while(|k| !k.is_end())
            .map(|&k| self.patch_center(k))
            .collect::<Result<Vec<_>>>()?;
        Scanpath::new(image_id, reader_id, fixations)
    }

    /// `n` fixations drawn uniformly over the canonical frame.
    pub fn random_scanpath(&self, image_id: &str, n: usize, rng: &mut Rng) -> Result<Scanpath> {
        if n == 0 {
            return Err(Error::contract("random scanpath length must be at least 1"));
        }
        let fixations = (0..n)
            .map(|_| Fixation::new(rng.uniform() * IMAGE_SIZE, rng.uniform() * IMAGE_SIZE))
            .collect();
        Scanpath::new(image_id, "random", fixations)
    }
}

/// One line of a scanpath JSON Lines file.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScanpathLine {
    image_id: String,
    reader_id: String,
    fixations: Vec<[f64; 2]>,
}

/// Parse scanpath JSON Lines; blank lines are skipped.
pub fn parse_scanpaths(text: &str, file: &str) -> Result<Vec<Scanpath>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |detail: String| Error::Parse {
            file: file.to_string(),
            line: i + 1,
            column: None,
            detail,
        };
        let rec: ScanpathLine = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let fixations = rec.fixations.iter().map(|&[x, y]| Fixation::new(x, y)).collect();
        let s = Scanpath::new(rec.image_id, rec.reader_id, fixations).map_err(|e| parse_err(e.to_string()))?;
        out.push(s);
    }
    Ok(out)
}

pub fn read_scanpaths(path: &Path) -> Result<Vec<Scanpath>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scanpaths(&text, &path.display().to_string())
}

pub fn format_scanpaths<'a>(paths: impl IntoIterator<Item = &'a Scanpath>) -> String {
    let mut out = Vec::new();
    for s in paths {
        let line = ScanpathLine {
            image_id: s.image_id.clone(),
            reader_id: s.reader_id.clone(),
            fixations: s.fixations().iter().map(|f| [f.x, f.y]).collect(),
        };
        serde_json::to_writer(&mut out, &line).expect("serializing plain data");
        out.write_all(b"\n").expect("writing to a Vec");
    }
    String::from_utf8(out).expect("json is utf-8")
}

pub fn write_scanpaths<'a>(path: &Path, paths: impl IntoIterator<Item = &'a Scanpath>) -> Result<()> {
    std::fs::write(path, format_scanpaths(paths)).map_err(|e| Error::io(path, e))
}
