//! Brute-force reference computations, written independently of the library.

use std::f64::consts::PI;

use choir_core::score::{ChordLabel, Pitch, Quality};
use ndarray::{Array1, Array2, Array3};
use serde::Deserialize;

#[derive(Deserialize)]
pub struct Expected {
    pub n_c: usize,
    pub n_n: usize,
    pub n_p: usize,
    pub ctnctr: Option<[i64; 2]>,
    pub pcs: Option<[i64; 2]>,
    pub mctd: Option<f64>,
}

#[derive(Deserialize)]
pub struct Fixture {
    pub name: String,
    pub melody: Vec<Option<u8>>,
    pub chords: Vec<String>,
    pub expected: Expected,
}

impl Fixture {
    pub fn pitches(&self) -> Vec<Pitch> {
        self.melody.iter().map(|&m| Pitch::from_option(m).unwrap()).collect()
    }

    pub fn labels(&self) -> Vec<ChordLabel> {
        self.chords.iter().map(|c| c.parse().unwrap()).collect()
    }
}

pub fn load_fixtures() -> Vec<Fixture> {
    #[derive(Deserialize)]
    struct File {
        cases: Vec<Fixture>,
    }
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/harmonic_fixtures.json");
    serde_json::from_str::<File>(&std::fs::read_to_string(path).unwrap()).unwrap().cases
}

/// Chord membership as a 12-entry mask, from the root and the quality's
/// semitone stack.
fn mask(chord: ChordLabel) -> [bool; 12] {
    let mut m = [false; 12];
    if let ChordLabel::Triad { root, quality } = chord {
        let stack: [u8; 3] = match quality {
            Quality::Major => [0, 4, 7],
            Quality::Minor => [0, 3, 7],
            Quality::Augmented => [0, 4, 8],
            Quality::Diminished => [0, 3, 6],
        };
        for s in stack {
            m[usize::from((root + s) % 12)] = true;
        }
    }
    m
}

/// `(n_c, n_n, n_p)` by walking the melody once and remembering the pending
/// non-chord tone.
pub fn tone_counts(melody: &[Pitch], chords: &[ChordLabel]) -> (usize, usize, usize) {
    let (mut nc, mut nn, mut np) = (0, 0, 0);
    let mut prev: Option<u8> = None;
    let mut pending: Option<u8> = None;
    for (p, &c) in melody.iter().zip(chords) {
        let Some(m) = p.midi() else {
            prev = None;
            continue;
        };
        if prev == Some(m) {
            continue;
        }
        prev = Some(m);
        if let Some(q) = pending.take() {
            if (i32::from(q) - i32::from(m)).abs() <= 2 {
                np += 1;
            }
        }
        let mk = mask(c);
        if !mk.iter().any(|&b| b) {
            continue;
        }
        if mk[usize::from(m % 12)] {
            nc += 1;
        } else {
            nn += 1;
            pending = Some(m);
        }
    }
    (nc, nn, np)
}

pub fn pcs(melody: &[Pitch], chords: &[ChordLabel]) -> Option<f64> {
    let consonant = [0, 3, 4, 7, 8, 9];
    let (mut sum, mut n) = (0i32, 0i32);
    for (p, &c) in melody.iter().zip(chords) {
        let Some(m) = p.midi() else { continue };
        for (pc, &member) in mask(c).iter().enumerate() {
            if !member {
                continue;
            }
            // walk up from the chord tone to the melody pitch class
            let mut d = 0;
            while (pc + d) % 12 != usize::from(m % 12) {
                d += 1;
            }
            sum += if consonant.contains(&d) {
                1
            } else if d == 5 {
                0
            } else {
                -1
            };
            n += 1;
        }
    }
    (n > 0).then(|| f64::from(sum) / f64::from(n))
}

pub fn transform() -> Array2<f64> {
    let rows = [(7.0 * PI / 6.0, 1.0), (3.0 * PI / 2.0, 1.0), (2.0 * PI / 3.0, 0.5)];
    let mut t = Array2::zeros((6, 12));
    for (k, &(angle, r)) in rows.iter().enumerate() {
        for l in 0..12 {
            t[[2 * k, l]] = r * (l as f64 * angle).sin();
            t[[2 * k + 1, l]] = r * (l as f64 * angle).cos();
        }
    }
    t
}

pub fn mctd(melody: &[Pitch], chords: &[ChordLabel]) -> Option<f64> {
    let t = transform();
    let (mut sum, mut n) = (0.0, 0);
    for (p, &c) in melody.iter().zip(chords) {
        let mk = mask(c);
        let Some(m) = p.midi() else { continue };
        if !mk.iter().any(|&b| b) {
            continue;
        }
        let mut one = Array1::zeros(12);
        one[usize::from(m % 12)] = 1.0;
        let k = mk.iter().filter(|&&b| b).count() as f64;
        let chord = Array1::from_iter(mk.iter().map(|&b| if b { 1.0 / k } else { 0.0 }));
        let diff = t.dot(&one) - t.dot(&chord);
        sum += diff.dot(&diff).sqrt();
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Per layer, the mean over heads and queries of the weighted look-back.
pub fn attention_distance(layers: &[Array3<f64>]) -> Vec<f64> {
    layers
        .iter()
        .map(|w| {
            let (h, l, _) = w.dim();
            let mut total = 0.0;
            for head in 0..h {
                for t in 0..l {
                    for j in 0..=t {
                        total += w[[head, t, j]] * (t - j) as f64;
                    }
                }
            }
            total / (h * l) as f64
        })
        .collect()
}
