//! Fourteen-way multi-label targets with an explicit uncertain state.

use std::fmt;

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 14;

/// On disk: `1`, `0`, `-1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Present,
    Absent,
    Uncertain,
}

impl Label {
    pub fn from_code(code: i8) -> Option<Label> {
        match code {
            1 => Some(Label::Present),
            0 => Some(Label::Absent),
            -1 => Some(Label::Uncertain),
            _ => None,
        }
    }

    pub fn code(self) -> i8 {
        match self {
            Label::Present => 1,
            Label::Absent => 0,
            Label::Uncertain => -1,
        }
    }

    /// `Some(1.0)` / `Some(0.0)` for certain labels.
    pub fn target(self) -> Option<f64> {
        match self {
            Label::Present => Some(1.0),
            Label::Absent => Some(0.0),
            Label::Uncertain => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LabelVector([Label; NUM_CLASSES]);

impl LabelVector {
    pub fn new(labels: [Label; NUM_CLASSES]) -> Self {
        Self(labels)
    }

    pub fn all(label: Label) -> Self {
        Self([label; NUM_CLASSES])
    }

    pub fn from_codes(codes: &[i8]) -> Result<Self> {
        if codes.len() != NUM_CLASSES {
            return Err(Error::contract(format!(
                "label vector needs {NUM_CLASSES} entries, got {}",
                codes.len()
            )));
        }
        let mut out = [Label::Absent; NUM_CLASSES];
        for (d, &c) in codes.iter().enumerate() {
            out[d] = Label::from_code(c)
                .ok_or_else(|| Error::contract(format!("class {d}: label code {c} is not one of 1, 0, -1")))?;
        }
        Ok(Self(out))
    }

    pub fn codes(&self) -> [i8; NUM_CLASSES] {
        self.0.map(Label::code)
    }

    pub fn get(&self, class: usize) -> Label {
        self.0[class]
    }

    pub fn set(&mut self, class: usize, label: Label) {
        self.0[class] = label;
    }

    pub fn iter(&self) -> impl Iterator<Item = Label> + '_ {
        self.0.iter().copied()
    }
}

impl fmt::Display for LabelVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", l.code())?;
        }
        Ok(())
    }
}

/// Column names `c01..c14` used in label files.
pub fn class_names() -> Vec<String> {
    (1..=NUM_CLASSES).map(|d| format!("c{d:02}")).collect()
}
