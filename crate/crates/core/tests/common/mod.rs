#![allow(dead_code)]

pub mod oracles;

use choir_core::score::{ChordLabel, GridScore, GridStep, Pitch, Quality};
use rand::Rng;

/// A chord-led four-voice piece: every voice holds a chord tone in its range
/// for a random number of steps, with occasional passing tones and rests.
pub fn synthetic_chorale(rng: &mut impl Rng, steps: usize) -> GridScore {
    let ranges = [(60u8, 79u8), (55, 72), (48, 67), (40, 60)];
    let mut chord = ChordLabel::triad(0, Quality::Major);
    let mut voices = [Pitch::REST; 4];
    let mut out = Vec::with_capacity(steps);
    for s in 0..steps {
        if s % 4 == 0 {
            chord = if rng.gen_bool(0.05) {
                ChordLabel::Other
            } else {
                ChordLabel::triad(rng.gen_range(0..12), Quality::ALL[rng.gen_range(0..4)])
            };
        }
        let tones = match chord.tones() {
            t if t.is_empty() => vec![0, 2, 4, 5, 7, 9, 11],
            t => t,
        };
        for (v, &(lo, hi)) in ranges.iter().enumerate() {
            if s % 4 != 0 && rng.gen_bool(0.6) {
                continue;
            }
            voices[v] = if rng.gen_bool(0.03) {
                Pitch::REST
            } else if rng.gen_bool(0.1) {
                Pitch::new(rng.gen_range(lo..=hi)).unwrap()
            } else {
                let candidates: Vec<u8> = (lo..=hi).filter(|p| tones.contains(&(p % 12))).collect();
                Pitch::new(candidates[rng.gen_range(0..candidates.len())]).unwrap()
            };
        }
        out.push(GridStep::new(chord, voices));
    }
    GridScore::new(format!("synthetic {steps}"), out).unwrap()
}
