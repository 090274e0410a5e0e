//! Dataset expansion by transposition into the other eleven keys and by
//! retrograde (time reversal).

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::{GridScore, GridStep, Pitch, Voice};

/// Shifts every pitch and chord root by `semitones` (`-11..=11`).
pub fn transpose(score: &GridScore, semitones: i32) -> Result<GridScore> {
    if !(-11..=11).contains(&semitones) {
        return Err(Error::Data(format!(
            "transposition {semitones} is outside -11..=11"
        )));
    }
    let mut steps = Vec::with_capacity(score.len());
    for (i, step) in score.steps().iter().enumerate() {
        let mut voices = [Pitch::REST; 4];
        for v in Voice::ALL {
            voices[v.index()] = match step.voice(v).midi() {
                None => Pitch::REST,
                Some(m) => {
                    let shifted = i32::from(m) + semitones;
                    if !(0..=127).contains(&shifted) {
                        return Err(Error::Range {
                            step: i,
                            voice: v,
                            shift: semitones,
                        });
                    }
                    Pitch::new(shifted as u8)?
                }
            };
        }
        steps.push(GridStep::new(step.chord.transposed(semitones), voices));
    }
    GridScore::new(score.title(), steps)
}

/// Retrograde: the steps in reverse order, each step unchanged.
pub fn reverse(score: &GridScore) -> GridScore {
    let steps = score.steps().iter().rev().copied().collect();
    GridScore::new(score.title(), steps).expect("non-empty")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Transform {
    Original,
    Transposed(i32),
    Reversed,
    TransposedReversed(i32),
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Original => f.write_str("original"),
            Transform::Transposed(k) => write!(f, "transposed({k:+})"),
            Transform::Reversed => f.write_str("reversed"),
            Transform::TransposedReversed(k) => write!(f, "transposed({k:+})+reversed"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub source: usize,
    pub transform: Transform,
}

/// Manifest line as written next to an expanded token corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source: usize,
    pub transform: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Skipped {
    pub source: usize,
    /// Pitch-class shift (1..=11) that could not be placed inside 0..=127.
    pub key_shift: i32,
}

#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub pieces: Vec<GridScore>,
    pub provenance: Vec<Provenance>,
    pub skipped: Vec<Skipped>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.provenance
            .iter()
            .map(|p| ManifestEntry {
                source: p.source,
                transform: p.transform.to_string(),
            })
            .collect()
    }
}

/// Transposes by `key_shift`, or by `key_shift - 12` when the upward shift
/// leaves the MIDI range.
fn transpose_into_range(score: &GridScore, key_shift: i32) -> Option<(i32, GridScore)> {
    [key_shift, key_shift - 12]
        .into_iter()
        .find_map(|k| transpose(score, k).ok().map(|g| (k, g)))
}

fn expand_piece(
    source: usize,
    score: &GridScore,
    with_transpose: bool,
    with_reverse: bool,
) -> (Vec<(Provenance, GridScore)>, Vec<Skipped>) {
    let mut keyed = vec![(None, score.clone())];
    let mut skipped = Vec::new();
    if with_transpose {
        for key_shift in 1..=11 {
            match transpose_into_range(score, key_shift) {
                Some((k, g)) => keyed.push((Some(k), g)),
                None => {
                    log::warn!("piece {source}: no in-range transposition for key shift {key_shift}, skipped");
                    skipped.push(Skipped { source, key_shift });
                }
            }
        }
    }
    let mut out = Vec::with_capacity(keyed.len() * 2);
    for (shift, g) in keyed {
        let forward = match shift {
            None => Transform::Original,
            Some(k) => Transform::Transposed(k),
        };
        let reversed = with_reverse.then(|| reverse(&g));
        out.push((Provenance { source, transform: forward }, g));
        if let Some(r) = reversed {
            let transform = match shift {
                None => Transform::Reversed,
                Some(k) => Transform::TransposedReversed(k),
            };
            out.push((Provenance { source, transform }, r));
        }
    }
    (out, skipped)
}

/// Expands `pieces` with the enabled methods. Output is ordered by source
/// index, then key shift, then reversed-after-forward; with both methods on and
/// no range skips the corpus grows 24-fold.
pub fn expand_dataset(
    pieces: &[GridScore],
    with_transpose: bool,
    with_reverse: bool,
) -> Result<Corpus> {
    if pieces.is_empty() {
        return Err(Error::Data("cannot expand an empty corpus".into()));
    }
    let per_piece: Vec<_> = pieces
        .par_iter()
        .enumerate()
        .map(|(i, g)| expand_piece(i, g, with_transpose, with_reverse))
        .collect();
    let mut corpus = Corpus::default();
    for (items, skipped) in per_piece {
        for (p, g) in items {
            corpus.provenance.push(p);
            corpus.pieces.push(g);
        }
        corpus.skipped.extend(skipped);
    }
    if !corpus.skipped.is_empty() {
        log::warn!("{} transpositions skipped for range", corpus.skipped.len());
    }
    Ok(corpus)
}
