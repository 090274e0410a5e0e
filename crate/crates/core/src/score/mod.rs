//! Chorale domain model: pitches, chord labels, the 16th-note grid and the
//! unquantized note-list form read from MIDI.

mod chord;
mod json;
mod midi;
mod pianoroll;
mod quantize;

use std::fmt;

pub use chord::{infer_chord, ChordLabel, Quality, PITCH_CLASS_NAMES};
pub use json::{load_chorale_json, to_chorale_json};
pub use midi::{parse_midi, write_midi, WRITE_PPQ};
pub use pianoroll::export_pianoroll;
pub use quantize::{assign_voices, quantize, VoiceAssignment, VoicePolicy};

use crate::error::{Error, Result};

/// Grid steps per quarter note (16th-note resolution).
pub const RESOLUTION: u32 = 4;

/// A MIDI pitch in `0..=127`, or a rest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pitch(u8);

impl Pitch {
    pub const REST: Pitch = Pitch(128);

    pub fn new(midi: u8) -> Result<Self> {
        if midi > 127 {
            return Err(Error::Data(format!("pitch {midi} is outside 0..=127")));
        }
        Ok(Pitch(midi))
    }

    pub fn from_option(midi: Option<u8>) -> Result<Self> {
        midi.map_or(Ok(Pitch::REST), Pitch::new)
    }

    pub fn midi(self) -> Option<u8> {
        (self.0 <= 127).then_some(self.0)
    }

    pub fn is_rest(self) -> bool {
        self.0 == 128
    }

    pub fn pitch_class(self) -> Option<u8> {
        self.midi().map(|m| m % 12)
    }

    /// Raw code: the MIDI number, or 128 for a rest.
    pub fn code(self) -> u8 {
        self.0
    }
}

impl fmt::Debug for Pitch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.midi() {
            Some(m) => write!(f, "{m}"),
            None => f.write_str("REST"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Voice {
    Soprano,
    Alto,
    Tenor,
    Bass,
}

impl Voice {
    pub const ALL: [Voice; 4] = [Voice::Soprano, Voice::Alto, Voice::Tenor, Voice::Bass];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn key(self) -> &'static str {
        match self {
            Voice::Soprano => "S",
            Voice::Alto => "A",
            Voice::Tenor => "T",
            Voice::Bass => "B",
        }
    }
}

/// One 16th-note time step: chord plus the four voice pitches (S, A, T, B).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridStep {
    pub chord: ChordLabel,
    pub voices: [Pitch; 4],
}

impl GridStep {
    pub fn new(chord: ChordLabel, voices: [Pitch; 4]) -> Self {
        GridStep { chord, voices }
    }

    pub fn voice(&self, v: Voice) -> Pitch {
        self.voices[v.index()]
    }
}

/// A chorale quantized to the 16th-note grid. Always at least one step long.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridScore {
    title: String,
    steps: Vec<GridStep>,
}

impl GridScore {
    pub fn new(title: impl Into<String>, steps: Vec<GridStep>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::Data("a score needs at least one step".into()));
        }
        Ok(GridScore {
            title: title.into(),
            steps,
        })
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn set_title(&mut self, title: impl Into<String>) {
        self.title = title.into();
    }

    pub fn resolution(&self) -> u32 {
        RESOLUTION
    }

    pub fn steps(&self) -> &[GridStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn chords(&self) -> Vec<ChordLabel> {
        self.steps.iter().map(|s| s.chord).collect()
    }

    pub fn voice_line(&self, v: Voice) -> Vec<Pitch> {
        self.steps.iter().map(|s| s.voice(v)).collect()
    }

    /// Chord changes as `(tick, label)` at the given ticks-per-quarter, suitable
    /// for re-quantizing a MIDI rendering of this score.
    pub fn chord_annotations(&self, ppq: u32) -> Vec<(u64, ChordLabel)> {
        let step_ticks = u64::from(ppq / RESOLUTION);
        let mut out: Vec<(u64, ChordLabel)> = Vec::new();
        for (i, step) in self.steps.iter().enumerate() {
            if out.last().map(|(_, c)| *c) != Some(step.chord) {
                out.push((i as u64 * step_ticks, step.chord));
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RawNote {
    pub onset: u64,
    pub duration: u64,
    pub pitch: u8,
}

/// Unquantized note lists as read from a MIDI file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RawScore {
    pub tracks: Vec<Vec<RawNote>>,
    pub ppq: u32,
    /// Chord annotations as `(onset tick, label)`, sorted by tick.
    pub chords: Vec<(u64, ChordLabel)>,
}

impl RawScore {
    pub fn max_end(&self) -> u64 {
        self.tracks
            .iter()
            .flatten()
            .map(|n| n.onset + n.duration)
            .max()
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rest_is_distinct_from_every_pitch() {
        for m in 0..=127u8 {
            let p = Pitch::new(m).unwrap();
            assert_ne!(p, Pitch::REST);
            assert_eq!(p.midi(), Some(m));
        }
        assert!(Pitch::new(128).is_err());
        assert_eq!(Pitch::REST.midi(), None);
    }

    #[test]
    fn empty_score_rejected() {
        assert!(GridScore::new("x", vec![]).is_err());
    }

    #[test]
    fn chord_annotations_mark_changes_only() {
        let c = ChordLabel::triad(0, Quality::Major);
        let g = ChordLabel::triad(7, Quality::Major);
        let v = [Pitch::REST; 4];
        let score = GridScore::new(
            "x",
            vec![GridStep::new(c, v), GridStep::new(c, v), GridStep::new(g, v)],
        )
        .unwrap();
        assert_eq!(score.chord_annotations(480), vec![(0, c), (240, g)]);
    }
}
