use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const PITCH_CLASS_NAMES: [&str; 12] =
    ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

/// Triad qualities, in tie-break order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quality {
    Major,
    Minor,
    Augmented,
    Diminished,
}

impl Quality {
    pub const ALL: [Quality; 4] = [
        Quality::Major,
        Quality::Minor,
        Quality::Augmented,
        Quality::Diminished,
    ];

    pub fn index(self) -> u8 {
        self as u8
    }

    /// Intervals above the root.
    pub fn template(self) -> [u8; 3] {
        match self {
            Quality::Major => [0, 4, 7],
            Quality::Minor => [0, 3, 7],
            Quality::Augmented => [0, 4, 8],
            Quality::Diminished => [0, 3, 6],
        }
    }

    fn suffix(self) -> &'static str {
        match self {
            Quality::Major => "maj",
            Quality::Minor => "min",
            Quality::Augmented => "aug",
            Quality::Diminished => "dim",
        }
    }
}

/// One of the 49 chord classes: a rooted triad of four qualities, or `Other`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChordLabel {
    Triad { root: u8, quality: Quality },
    Other,
}

impl ChordLabel {
    /// Panics if `root > 11`.
    pub fn triad(root: u8, quality: Quality) -> Self {
        assert!(root < 12, "chord root {root} is not a pitch class");
        ChordLabel::Triad { root, quality }
    }

    /// All 49 labels: the 48 triads ordered by root then quality, then `Other`.
    pub fn all() -> impl Iterator<Item = ChordLabel> {
        (0..12u8)
            .flat_map(|r| Quality::ALL.into_iter().map(move |q| ChordLabel::triad(r, q)))
            .chain(std::iter::once(ChordLabel::Other))
    }

    /// Pitch classes of the triad; empty for `Other`.
    pub fn tones(self) -> Vec<u8> {
        match self {
            ChordLabel::Triad { root, quality } => {
                quality.template().iter().map(|i| (root + i) % 12).collect()
            }
            ChordLabel::Other => Vec::new(),
        }
    }

    pub fn transposed(self, semitones: i32) -> Self {
        match self {
            ChordLabel::Triad { root, quality } => ChordLabel::Triad {
                root: (i32::from(root) + semitones).rem_euclid(12) as u8,
                quality,
            },
            ChordLabel::Other => ChordLabel::Other,
        }
    }
}

impl fmt::Display for ChordLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChordLabel::Triad { root, quality } => {
                write!(f, "{}:{}", PITCH_CLASS_NAMES[*root as usize], quality.suffix())
            }
            ChordLabel::Other => f.write_str("X:other"),
        }
    }
}

impl FromStr for ChordLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Schema {
            step: None,
            message: format!("unknown chord {s:?}"),
        };
        let (root, qual) = s.split_once(':').ok_or_else(bad)?;
        let root_pc = PITCH_CLASS_NAMES.iter().position(|n| *n == root);
        if qual == "other" {
            return if root_pc.is_some() || root == "X" {
                Ok(ChordLabel::Other)
            } else {
                Err(bad())
            };
        }
        let quality = match qual {
            "maj" => Quality::Major,
            "min" => Quality::Minor,
            "aug" => Quality::Augmented,
            "dim" => Quality::Diminished,
            _ => return Err(bad()),
        };
        Ok(ChordLabel::triad(root_pc.ok_or_else(bad)? as u8, quality))
    }
}

/// Template-matching chord recognition over a set of pitch classes.
///
/// Every triad is scored `|template ∩ pcs| - |pcs \ template|`; the best score
/// wins, ties going to the lower root and then to the quality order
/// maj < min < aug < dim. Best scores below 2 (and the empty set) give `Other`.
pub fn infer_chord(pitch_classes: &[u8]) -> ChordLabel {
    let mut present = [false; 12];
    for &pc in pitch_classes {
        present[usize::from(pc % 12)] = true;
    }
    let count = present.iter().filter(|&&p| p).count() as i32;
    if count == 0 {
        return ChordLabel::Other;
    }
    let mut best: Option<(i32, ChordLabel)> = None;
    for label in ChordLabel::all().filter(|c| *c != ChordLabel::Other) {
        let hits = label.tones().iter().filter(|&&pc| present[pc as usize]).count() as i32;
        let score = hits - (count - hits);
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, label));
        }
    }
    match best {
        Some((score, label)) if score >= 2 => label,
        _ => ChordLabel::Other,
    }
}
