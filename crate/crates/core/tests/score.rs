mod common;

use choir_core::augment::{expand_dataset, reverse, transpose};
use choir_core::score::{
    load_chorale_json, parse_midi, quantize, to_chorale_json, write_midi, GridScore, RawNote, Voice,
    VoicePolicy,
};
use choir_core::tokenizer::{decode, encode, read_token_lines, write_token_lines, TokenSeq};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn varlen(out: &mut Vec<u8>, mut v: u32) {
    let mut bytes = vec![(v & 0x7f) as u8];
    v >>= 7;
    while v > 0 {
        bytes.push((v & 0x7f) as u8 | 0x80);
        v >>= 7;
    }
    out.extend(bytes.iter().rev());
}

// random track body mixing running status, note-on velocity 0, explicit
// note-offs, controller changes and meta events
fn random_track(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut events: Vec<(u64, bool, u8)> = Vec::new();
    let mut tick = 0u64;
    for _ in 0..rng.gen_range(1..30) {
        tick += rng.gen_range(0..200);
        let len = rng.gen_range(1..300);
        let pitch = rng.gen_range(30..90);
        // keep one sounding note per pitch
        if events.iter().any(|&(t, on, p)| p == pitch && !on && t > tick) {
            continue;
        }
        events.push((tick, true, pitch));
        events.push((tick + len, false, pitch));
    }
    events.sort_by_key(|&(t, on, p)| (t, on, p));
    let mut body = Vec::new();
    let (mut last, mut running) = (0u64, None::<u8>);
    for (t, on, pitch) in events {
        if rng.gen_bool(0.1) {
            varlen(&mut body, 0);
            body.extend_from_slice(&[0xff, 0x01, 0x02, b'h', b'i']);
            running = None;
        }
        if rng.gen_bool(0.1) {
            varlen(&mut body, 0);
            body.extend_from_slice(&[0xb0, 7, 100]);
            running = Some(0xb0);
        }
        varlen(&mut body, (t - last) as u32);
        last = t;
        let (status, vel) = match (on, rng.gen_bool(0.5)) {
            (true, _) => (0x90, rng.gen_range(1..128)),
            (false, true) => (0x90, 0),
            (false, false) => (0x80, 64),
        };
        if running != Some(status) || rng.gen_bool(0.2) {
            body.push(status);
        }
        running = Some(status);
        body.extend_from_slice(&[pitch, vel]);
    }
    body.extend_from_slice(&[0, 0xff, 0x2f, 0]);
    body
}

fn smf(tracks: &[Vec<u8>], ppq: u16) -> Vec<u8> {
    let mut out = b"MThd".to_vec();
    out.extend(6u32.to_be_bytes());
    out.extend(1u16.to_be_bytes());
    out.extend((tracks.len() as u16).to_be_bytes());
    out.extend(ppq.to_be_bytes());
    for t in tracks {
        out.extend(b"MTrk");
        out.extend((t.len() as u32).to_be_bytes());
        out.extend(t);
    }
    out
}

// note list of one track as seen by midly
fn midly_notes(track: &[midly::TrackEvent]) -> Vec<RawNote> {
    let mut tick = 0u64;
    let mut sounding = std::collections::HashMap::new();
    let mut notes = Vec::new();
    for ev in track {
        tick += u64::from(u32::from(ev.delta));
        if let midly::TrackEventKind::Midi { message, .. } = ev.kind {
            let (key, on) = match message {
                midly::MidiMessage::NoteOn { key, vel } => (u8::from(key), u8::from(vel) > 0),
                midly::MidiMessage::NoteOff { key, .. } => (u8::from(key), false),
                _ => continue,
            };
            if on {
                sounding.insert(key, tick);
            } else if let Some(onset) = sounding.remove(&key) {
                if tick > onset {
                    notes.push(RawNote { onset, duration: tick - onset, pitch: key });
                }
            }
        }
    }
    notes.sort();
    notes
}

#[test]
fn parser_agrees_with_midly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let tracks: Vec<Vec<u8>> = (0..rng.gen_range(1..5)).map(|_| random_track(&mut rng)).collect();
        let ppq = rng.gen_range(24..1000);
        let bytes = smf(&tracks, ppq);
        let ours = parse_midi(&bytes).unwrap();
        let theirs = midly::Smf::parse(&bytes).unwrap();
        assert_eq!(ours.ppq, u32::from(ppq));
        assert_eq!(ours.tracks.len(), theirs.tracks.len());
        for (a, b) in ours.tracks.iter().zip(&theirs.tracks) {
            assert_eq!(a, &midly_notes(b));
        }
    }
}

#[test]
fn midi_written_for_a_score_reads_back_as_the_same_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    for _ in 0..60 {
        let steps = rng.gen_range(4..40);
        let g = common::synthetic_chorale(&mut rng, steps);
        let silent_voice = Voice::ALL.iter().any(|&v| g.voice_line(v).iter().all(|p| p.is_rest()));
        let last = g.steps().last().unwrap();
        if silent_voice || Voice::ALL.iter().any(|&v| last.voice(v).is_rest()) {
            continue;
        }
        let back = quantize(&parse_midi(&write_midi(&g)).unwrap(), VoicePolicy::TrackOrder).unwrap();
        assert_eq!(back.len(), g.len());
        for v in Voice::ALL {
            assert_eq!(back.voice_line(v), g.voice_line(v));
        }
        checked += 1;
    }
    assert!(checked >= 30, "only {checked} pieces checked");
}

#[test]
fn json_tokens_and_lines_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pieces: Vec<GridScore> = (0..20).map(|_| common::synthetic_chorale(&mut rng, 24)).collect();
    for g in &pieces {
        let back = load_chorale_json(&to_chorale_json(g)).unwrap();
        assert_eq!(back, *g);
        assert_eq!(decode(&encode(g)).unwrap().steps(), g.steps());
    }
    let seqs: Vec<TokenSeq> = pieces.iter().map(encode).collect();
    let mut buf = Vec::new();
    write_token_lines(&mut buf, &seqs).unwrap();
    assert_eq!(read_token_lines(&buf[..]).unwrap(), seqs);
}

#[test]
fn augmented_corpus_is_built_from_the_two_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pieces: Vec<GridScore> = (0..6).map(|_| common::synthetic_chorale(&mut rng, 12)).collect();
    let corpus = expand_dataset(&pieces, true, true).unwrap();
    assert_eq!(corpus.len(), 6 * 24);
    assert!(corpus.skipped.is_empty());
    for (g, p) in corpus.pieces.iter().zip(&corpus.provenance) {
        let src = &pieces[p.source];
        let name = p.transform.to_string();
        let shift: i32 = name
            .strip_prefix("transposed(")
            .map(|rest| rest[..rest.find(')').unwrap()].parse().unwrap())
            .unwrap_or(0);
        let mut want = if shift == 0 { src.clone() } else { transpose(src, shift).unwrap() };
        if name.ends_with("reversed") {
            want = reverse(&want);
        }
        assert_eq!(g.steps(), want.steps(), "{name}");
    }
    // retrograde twice is the identity, transposition composes
    let g = &pieces[0];
    assert_eq!(reverse(&reverse(g)).steps(), g.steps());
    let there = transpose(&transpose(g, 5).unwrap(), -3).unwrap();
    assert_eq!(there.steps(), transpose(g, 2).unwrap().steps());
}
