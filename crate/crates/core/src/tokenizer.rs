//! Chord-first token representation.
//!
//! Every grid step becomes `[chord, S, A, T, B]` in one flat sequence over a
//! shared 178-id vocabulary:
//!
//! | ids       | meaning                                      |
//! |-----------|----------------------------------------------|
//! | 0..=127   | MIDI pitch                                   |
//! | 128       | rest                                         |
//! | 129..=176 | triad, `129 + 4 * root + quality` (maj, min, aug, dim) |
//! | 177       | other chord                                  |
//!
//! The chordless layout used for ablations drops the chord slot and keeps
//! only the 129 note ids.

use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::score::{ChordLabel, GridScore, GridStep, Pitch, Quality, Voice};

pub const VOCAB_SIZE: usize = 178;
pub const NOTE_VOCAB_SIZE: usize = 129;
pub const REST_ID: u32 = 128;
pub const CHORD_BASE: u32 = 129;
pub const OTHER_CHORD_ID: u32 = 177;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Role {
    Chord,
    Soprano,
    Alto,
    Tenor,
    Bass,
}

impl Role {
    pub fn is_note(self) -> bool {
        self != Role::Chord
    }

    pub fn voice(self) -> Option<Voice> {
        match self {
            Role::Chord => None,
            Role::Soprano => Some(Voice::Soprano),
            Role::Alto => Some(Voice::Alto),
            Role::Tenor => Some(Voice::Tenor),
            Role::Bass => Some(Voice::Bass),
        }
    }

    pub fn of_voice(v: Voice) -> Role {
        [Role::Soprano, Role::Alto, Role::Tenor, Role::Bass][v.index()]
    }

    /// Ids that may appear at a position of this role.
    pub fn id_range(self) -> std::ops::RangeInclusive<u32> {
        if self.is_note() {
            0..=REST_ID
        } else {
            CHORD_BASE..=OTHER_CHORD_ID
        }
    }

    pub fn accepts(self, id: u32) -> bool {
        self.id_range().contains(&id)
    }
}

/// Token slots per grid step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Layout {
    /// `[chord, S, A, T, B]` over 178 ids.
    #[default]
    ChordFirst,
    /// `[S, A, T, B]` over 129 ids.
    NotesOnly,
}

impl Layout {
    pub fn with_chords(chords: bool) -> Layout {
        if chords {
            Layout::ChordFirst
        } else {
            Layout::NotesOnly
        }
    }

    pub fn width(self) -> usize {
        match self {
            Layout::ChordFirst => 5,
            Layout::NotesOnly => 4,
        }
    }

    pub fn vocab_size(self) -> usize {
        match self {
            Layout::ChordFirst => VOCAB_SIZE,
            Layout::NotesOnly => NOTE_VOCAB_SIZE,
        }
    }

    pub fn for_vocab(vocab_size: usize) -> Option<Layout> {
        match vocab_size {
            VOCAB_SIZE => Some(Layout::ChordFirst),
            NOTE_VOCAB_SIZE => Some(Layout::NotesOnly),
            _ => None,
        }
    }

    pub fn role_at(self, position: usize) -> Role {
        match self {
            Layout::ChordFirst => match position % 5 {
                0 => Role::Chord,
                k => Role::of_voice(Voice::ALL[k - 1]),
            },
            Layout::NotesOnly => Role::of_voice(Voice::ALL[position % 4]),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct TokenSeq(pub Vec<u32>);

impl TokenSeq {
    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, id) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{id}")?;
        }
        Ok(())
    }
}

pub fn note_id(p: Pitch) -> u32 {
    u32::from(p.code())
}

pub fn chord_id(c: ChordLabel) -> u32 {
    match c {
        ChordLabel::Triad { root, quality } => {
            CHORD_BASE + 4 * u32::from(root) + u32::from(quality.index())
        }
        ChordLabel::Other => OTHER_CHORD_ID,
    }
}

pub fn pitch_of(id: u32) -> Option<Pitch> {
    match id {
        0..=127 => Some(Pitch::new(id as u8).expect("in range")),
        REST_ID => Some(Pitch::REST),
        _ => None,
    }
}

pub fn chord_of(id: u32) -> Option<ChordLabel> {
    match id {
        CHORD_BASE..=176 => {
            let k = id - CHORD_BASE;
            Some(ChordLabel::triad((k / 4) as u8, Quality::ALL[(k % 4) as usize]))
        }
        OTHER_CHORD_ID => Some(ChordLabel::Other),
        _ => None,
    }
}

pub fn encode(score: &GridScore) -> TokenSeq {
    encode_with(score, Layout::ChordFirst)
}

pub fn encode_with(score: &GridScore, layout: Layout) -> TokenSeq {
    let mut ids = Vec::with_capacity(score.len() * layout.width());
    for step in score.steps() {
        if layout == Layout::ChordFirst {
            ids.push(chord_id(step.chord));
        }
        ids.extend(step.voices.iter().map(|&p| note_id(p)));
    }
    TokenSeq(ids)
}

pub fn decode(seq: &TokenSeq) -> Result<GridScore> {
    decode_with(seq, Layout::ChordFirst)
}

/// Inverse of [`encode_with`]. With [`Layout::NotesOnly`] every chord decodes
/// as `Other`.
pub fn decode_with(seq: &TokenSeq, layout: Layout) -> Result<GridScore> {
    let ids = seq.ids();
    if ids.is_empty() {
        return Err(Error::EmptySequence);
    }
    let width = layout.width();
    if !ids.len().is_multiple_of(width) {
        return Err(Error::Structure {
            position: ids.len() - ids.len() % width,
            message: format!("length {} is not a multiple of {width}", ids.len()),
        });
    }
    if let Some(v) = validate_roles_with(seq, layout).into_iter().next() {
        return Err(match v.kind {
            ViolationKind::OutOfVocabulary => Error::OutOfVocabulary {
                position: v.position,
                id: v.id,
            },
            ViolationKind::WrongRole { expected } => Error::Role {
                position: v.position,
                id: v.id,
                expected,
            },
        });
    }
    let steps = ids
        .chunks(width)
        .map(|chunk| {
            let (chord, notes) = match layout {
                Layout::ChordFirst => (chord_of(chunk[0]).expect("validated"), &chunk[1..]),
                Layout::NotesOnly => (ChordLabel::Other, chunk),
            };
            let mut voices = [Pitch::REST; 4];
            for (slot, &id) in voices.iter_mut().zip(notes) {
                *slot = pitch_of(id).expect("validated");
            }
            GridStep::new(chord, voices)
        })
        .collect();
    GridScore::new("decoded", steps)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    WrongRole { expected: Role },
    OutOfVocabulary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Violation {
    pub position: usize,
    pub id: u32,
    pub kind: ViolationKind,
}

pub fn validate_roles(seq: &TokenSeq) -> Vec<Violation> {
    validate_roles_with(seq, Layout::ChordFirst)
}

/// Every position whose id is out of vocabulary or disagrees with the slot's role.
pub fn validate_roles_with(seq: &TokenSeq, layout: Layout) -> Vec<Violation> {
    seq.ids()
        .iter()
        .enumerate()
        .filter_map(|(position, &id)| {
            let expected = layout.role_at(position);
            let kind = if id as usize >= layout.vocab_size() {
                ViolationKind::OutOfVocabulary
            } else if !expected.accepts(id) {
                ViolationKind::WrongRole { expected }
            } else {
                return None;
            };
            Some(Violation { position, id, kind })
        })
        .collect()
}

/// One sequence per line, ids separated by single spaces.
pub fn write_token_lines<W: Write>(mut out: W, seqs: &[TokenSeq]) -> Result<()> {
    for s in seqs {
        writeln!(out, "{s}")?;
    }
    Ok(())
}

pub fn read_token_lines<R: BufRead>(input: R) -> Result<Vec<TokenSeq>> {
    let mut seqs = Vec::new();
    for (line_no, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ids = line
            .split_whitespace()
            .map(|t| {
                t.parse::<u32>().map_err(|_| {
                    Error::Data(format!("line {}: {t:?} is not a token id", line_no + 1))
                })
            })
            .collect::<Result<Vec<u32>>>()?;
        seqs.push(TokenSeq(ids));
    }
    Ok(seqs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn step(chord: ChordLabel, v: [Option<u8>; 4]) -> GridStep {
        GridStep::new(chord, v.map(|m| Pitch::from_option(m).unwrap()))
    }

    #[test]
    fn chord_first_step() {
        let c = ChordLabel::triad(0, Quality::Major);
        let g = GridScore::new("x", vec![step(c, [Some(67), Some(64), Some(60), Some(48)])]).unwrap();
        assert_eq!(encode(&g).0, vec![129, 67, 64, 60, 48]);
        let mut back = decode(&encode(&g)).unwrap();
        back.set_title("x");
        assert_eq!(back, g);

        let rest = GridScore::new("x", vec![step(ChordLabel::Other, [None; 4])]).unwrap();
        assert_eq!(encode(&rest).0, vec![177, 128, 128, 128, 128]);
        assert_eq!(chord_id(ChordLabel::triad(2, Quality::Minor)), 138);
    }

    #[test]
    fn vocabulary_partitions() {
        let mut seen = std::collections::HashSet::new();
        for m in 0..=127 {
            assert!(seen.insert(note_id(Pitch::new(m).unwrap())));
        }
        assert!(seen.insert(note_id(Pitch::REST)));
        for c in ChordLabel::all() {
            let id = chord_id(c);
            assert!(seen.insert(id));
            assert_eq!(chord_of(id), Some(c));
            assert!(pitch_of(id).is_none());
        }
        assert_eq!(seen.len(), VOCAB_SIZE);
        assert_eq!(*seen.iter().max().unwrap() as usize, VOCAB_SIZE - 1);
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(decode(&TokenSeq(vec![])), Err(Error::EmptySequence)));
        assert!(matches!(
            decode(&TokenSeq(vec![129, 60, 60, 60, 60, 129])),
            Err(Error::Structure { position: 5, .. })
        ));
        assert!(matches!(
            decode(&TokenSeq(vec![67, 64, 60, 48, 40])),
            Err(Error::Role { position: 0, .. })
        ));
        assert!(matches!(
            decode(&TokenSeq(vec![129, 60, 60, 200, 60])),
            Err(Error::OutOfVocabulary { position: 3, id: 200 })
        ));
    }

    #[test]
    fn violations() {
        assert!(validate_roles(&TokenSeq(vec![129, 67, 64, 60, 48])).is_empty());
        let v = validate_roles(&TokenSeq(vec![129, 129, 64, 60, 48]));
        assert_eq!(
            v,
            vec![Violation {
                position: 1,
                id: 129,
                kind: ViolationKind::WrongRole { expected: Role::Soprano }
            }]
        );
        let v = validate_roles(&TokenSeq(vec![178, 60, 999, 60, 60]));
        assert_eq!(v.len(), 2);
        assert!(v.iter().all(|x| x.kind == ViolationKind::OutOfVocabulary));
        // In the chordless layout chord ids are out of vocabulary.
        let v = validate_roles_with(&TokenSeq(vec![60, 129, 60, 60]), Layout::NotesOnly);
        assert_eq!(v[0].kind, ViolationKind::OutOfVocabulary);
    }

    #[test]
    fn token_lines() {
        let seqs = vec![TokenSeq(vec![129, 1, 2, 3, 4]), TokenSeq(vec![177, 128, 128, 128, 128])];
        let mut buf = Vec::new();
        write_token_lines(&mut buf, &seqs).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "129 1 2 3 4\n177 128 128 128 128\n");
        assert_eq!(read_token_lines(&buf[..]).unwrap(), seqs);
        assert!(read_token_lines(&b"1 x 2\n"[..]).is_err());
    }

    fn arb_step() -> impl Strategy<Value = GridStep> {
        let chord = (0u32..49).prop_map(|k| chord_of(CHORD_BASE + k).unwrap());
        let pitch = (0u8..=128).prop_map(|m| Pitch::from_option((m < 128).then_some(m)).unwrap());
        (chord, [pitch.clone(), pitch.clone(), pitch.clone(), pitch])
            .prop_map(|(c, v)| GridStep::new(c, v))
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(steps in prop::collection::vec(arb_step(), 1..40)) {
            let g = GridScore::new("decoded", steps).unwrap();
            let seq = encode(&g);
            prop_assert_eq!(seq.len(), 5 * g.len());
            prop_assert_eq!(decode(&seq).unwrap(), g.clone());
            let notes = encode_with(&g, Layout::NotesOnly);
            prop_assert_eq!(notes.len(), 4 * g.len());
            prop_assert_eq!(encode_with(&decode_with(&notes, Layout::NotesOnly).unwrap(), Layout::NotesOnly), notes);
        }

        #[test]
        fn encode_inverts_decode(ids in prop::collection::vec((0u32..49, [0u32..129, 0u32..129, 0u32..129, 0u32..129]), 1..40)) {
            let flat: Vec<u32> = ids.iter().flat_map(|(c, n)| std::iter::once(CHORD_BASE + c).chain(n.iter().copied())).collect();
            let seq = TokenSeq(flat);
            prop_assert_eq!(encode(&decode(&seq).unwrap()), seq);
        }
    }
}
