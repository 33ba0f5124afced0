use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scanpath::{Fixation, Key, PatchDictionary, Scanpath, GRID, IMAGE_SIZE};

/// Global alignment score with linear gaps.
///
/// `S[i][j] = max(S[i-1][j-1] + sub(a_i, b_j), S[i-1][j] + gap, S[i][j-1] + gap)`.
pub fn needleman_wunsch<T: Copy>(a: &[T], b: &[T], sub: impl Fn(T, T) -> f64, gap: f64) -> f64 {
    let m = b.len();
    let mut prev: Vec<f64> = (0..=m).map(|j| gap * j as f64).collect();
    let mut cur = vec![0.0; m + 1];
    for (i, &x) in a.iter().enumerate() {
        cur[0] = gap * (i + 1) as f64;
        for (j, &y) in b.iter().enumerate() {
            let diag = prev[j] + sub(x, y);
            let up = prev[j + 1] + gap;
            let left = cur[j] + gap;
            cur[j + 1] = diag.max(up).max(left);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanMatchConfig {
    /// Distance, in patch units, at which substitution turns negative.
    pub threshold: f64,
    pub gap: f64,
}

impl Default for ScanMatchConfig {
    fn default() -> Self {
        let side = (GRID - 1) as f64;
        Self {
            threshold: (side * side * 2.0).sqrt() / 2.0,
            gap: 0.0,
        }
    }
}

impl ScanMatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::contract(format!(
                "ScanMatch threshold must be positive, got {}",
                self.threshold
            )));
        }
        if !self.gap.is_finite() {
            return Err(Error::contract("ScanMatch gap must be finite"));
        }
        Ok(())
    }

    /// `(τ - d) / τ` with `d` the distance between patch cells.
    pub fn substitution(&self, a: Key, b: Key) -> f64 {
        if a == b {
            return 1.0;
        }
        let ((ra, ca), (rb, cb)) = (a.cell().unwrap_or((0, 0)), b.cell().unwrap_or((0, 0)));
        let (dr, dc) = (ra as f64 - rb as f64, ca as f64 - cb as f64);
        (self.threshold - (dr * dr + dc * dc).sqrt()) / self.threshold
    }
}

/// Normalized ScanMatch score on patch-key strings (END excluded).
pub fn scanmatch_keys(a: &[Key], b: &[Key], cfg: &ScanMatchConfig) -> Result<f64> {
    cfg.validate()?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::contract("ScanMatch needs non-empty scanpaths"));
    }
    if a.iter().chain(b).any(|k| k.is_end()) {
        return Err(Error::contract("ScanMatch key strings must not contain END"));
    }
    let score = needleman_wunsch(a, b, |x, y| cfg.substitution(x, y), cfg.gap);
    Ok(score / a.len().max(b.len()) as f64)
}

pub fn scanmatch(a: &Scanpath, b: &Scanpath, cfg: &ScanMatchConfig) -> Result<f64> {
    let dict = PatchDictionary::new();
    scanmatch_keys(&dict.patch_keys(a)?, &dict.patch_keys(b)?, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiMatchResult {
    pub vector: f64,
    pub direction: f64,
    pub length: f64,
    pub position: f64,
}

impl MultiMatchResult {
    pub const NAMES: [&'static str; 4] = ["vector", "direction", "length", "position"];

    pub fn values(&self) -> [f64; 4] {
        [self.vector, self.direction, self.length, self.position]
    }
}

fn diagonal() -> f64 {
    IMAGE_SIZE * std::f64::consts::SQRT_2
}

type Vec2 = (f64, f64);

fn saccades(f: &[Fixation]) -> Vec<Vec2> {
    f.windows(2).map(|w| (w[1].x - w[0].x, w[1].y - w[0].y)).collect()
}

fn norm(v: Vec2) -> f64 {
    v.0.hypot(v.1)
}

/// Angle between two vectors in `[0, pi]`; zero vectors give 0.
fn angle(u: Vec2, v: Vec2) -> f64 {
    let cross = u.0 * v.1 - u.1 * v.0;
    let dot = u.0 * v.0 + u.1 * v.1;
    cross.abs().atan2(dot)
}

/// Minimum-cost alignment of saccade sequences; returns aligned index pairs.
fn align_saccades(u: &[Vec2], v: &[Vec2], gap: f64) -> Vec<(usize, usize)> {
    let (n, m) = (u.len(), v.len());
    let cost = |i: usize, j: usize| norm((u[i].0 - v[j].0, u[i].1 - v[j].1));
    let mut c = vec![vec![0.0; m + 1]; n + 1];
    for (i, row) in c.iter_mut().enumerate() {
        row[0] = gap * i as f64;
    }
    for (j, v) in c[0].iter_mut().enumerate() {
        *v = gap * j as f64;
    }
    for i in 1..=n {
        for j in 1..=m {
            c[i][j] = (c[i - 1][j - 1] + cost(i - 1, j - 1))
                .min(c[i - 1][j] + gap)
                .min(c[i][j - 1] + gap);
        }
    }
    let mut pairs = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 && j > 0 {
        if c[i][j] == c[i - 1][j - 1] + cost(i - 1, j - 1) {
            pairs.push((i - 1, j - 1));
            i -= 1;
            j -= 1;
        } else if c[i][j] == c[i - 1][j] + gap {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    pairs.reverse();
    if pairs.is_empty() {
        // every pair costs more than two gaps; fall back to the closest pair
        let mut best = (0, 0);
        for i in 0..n {
            for j in 0..m {
                if cost(i, j) < cost(best.0, best.1) {
                    best = (i, j);
                }
            }
        }
        pairs.push(best);
    }
    pairs
}

/// Vector, direction, length and position similarities after alignment.
pub fn multimatch(a: &Scanpath, b: &Scanpath) -> Result<MultiMatchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::undefined(
            "multimatch vector/direction/length/position",
            format!("scanpaths need at least 2 fixations, got {} and {}", a.len(), b.len()),
        ));
    }
    let diag = diagonal();
    let (u, v) = (saccades(a.fixations()), saccades(b.fixations()));
    let pairs = align_saccades(&u, &v, diag / 2.0);
    let k = pairs.len() as f64;
    let (mut dv, mut dl, mut da, mut dp) = (0.0, 0.0, 0.0, 0.0);
    for &(i, j) in &pairs {
        dv += norm((u[i].0 - v[j].0, u[i].1 - v[j].1));
        dl += (norm(u[i]) - norm(v[j])).abs();
        da += angle(u[i], v[j]);
        dp += a.fixations()[i].distance(&b.fixations()[j]);
    }
    let unit = |x: f64| x.clamp(0.0, 1.0);
    Ok(MultiMatchResult {
        vector: unit(1.0 - dv / k / (2.0 * diag)),
        direction: unit(1.0 - da / k / std::f64::consts::PI),
        length: unit(1.0 - dl / k / diag),
        position: unit(1.0 - dp / k / diag),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(ix: &[usize]) -> Vec<Key> {
        ix.iter().map(|&i| Key::new(i).unwrap()).collect()
    }

    #[test]
    fn nw_identical_and_empty() {
        let a = [1, 2, 3, 4];
        let s = needleman_wunsch(&a, &a, |x, y| if x == y { 1.0 } else { -1.0 }, 0.0);
        assert_eq!(s, 4.0);
        let e: [i32; 0] = [];
        assert_eq!(needleman_wunsch(&e, &a, |_, _| 1.0, 0.0), 0.0);
        assert_eq!(needleman_wunsch(&e, &a, |_, _| 1.0, -0.5), -2.0);
    }

    #[test]
    fn default_threshold() {
        assert!((ScanMatchConfig::default().threshold - 10.606601717798213).abs() < 1e-12);
    }

    #[test]
    fn opposite_corners() {
        let (a, b) = (keys(&[0, 0]), keys(&[15, 15]));
        // gap 0: leaving both strings unaligned beats any negative substitution
        assert_eq!(scanmatch_keys(&a, &b, &ScanMatchConfig::default()).unwrap(), 0.0);
        let strict = ScanMatchConfig {
            gap: -1.0,
            ..Default::default()
        };
        assert!((scanmatch_keys(&a, &b, &strict).unwrap() + 0.41421).abs() < 1e-5);
    }

    #[test]
    fn scanmatch_rejects_empty_and_end() {
        let c = ScanMatchConfig::default();
        assert!(scanmatch_keys(&[], &keys(&[1]), &c).is_err());
        assert!(scanmatch_keys(&[Key::END], &keys(&[1]), &c).is_err());
        let bad = ScanMatchConfig {
            threshold: 0.0,
            gap: 0.0,
        };
        assert!(scanmatch_keys(&keys(&[1]), &keys(&[1]), &bad).is_err());
    }

    #[test]
    fn multimatch_translation() {
        let pts = |off: f64| {
            Scanpath::new(
                "i",
                "r",
                vec![
                    Fixation::new(20.0 + off, 30.0 + off),
                    Fixation::new(120.0 + off, 40.0 + off),
                    Fixation::new(60.0 + off, 200.0 + off),
                ],
            )
            .unwrap()
        };
        let r = multimatch(&pts(0.0), &pts(10.0)).unwrap();
        assert_eq!((r.vector, r.direction, r.length), (1.0, 1.0, 1.0));
        assert!(r.position < 1.0);
        let same = multimatch(&pts(0.0), &pts(0.0)).unwrap();
        assert_eq!(same.values(), [1.0; 4]);
    }

    #[test]
    fn multimatch_needs_a_saccade() {
        let one = Scanpath::new("i", "r", vec![Fixation::new(1.0, 1.0)]).unwrap();
        let two = Scanpath::new("i", "r", vec![Fixation::new(1.0, 1.0), Fixation::new(5.0, 5.0)]).unwrap();
        match multimatch(&one, &two) {
            Err(Error::UndefinedMetric { metric, .. }) => assert!(metric.contains("direction")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn angle_cases() {
        assert_eq!(angle((1.0, 0.0), (2.0, 0.0)), 0.0);
        assert_eq!(angle((0.0, 0.0), (2.0, 1.0)), 0.0);
        assert!((angle((1.0, 0.0), (-1.0, 0.0)) - std::f64::consts::PI).abs() < 1e-15);
    }
}
