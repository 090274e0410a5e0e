//! Standard MIDI File reading (formats 0 and 1) and writing (format 1).

use std::collections::HashMap;

use super::{GridScore, RawNote, RawScore, Voice, RESOLUTION};
use crate::error::{Error, Result};

/// Ticks per quarter note in written files.
pub const WRITE_PPQ: u32 = 480;
const TEMPO_120_BPM: u32 = 500_000;
const WRITE_VELOCITY: u8 = 80;

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Midi {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.err(format!("need {n} bytes, {} left", self.remaining())));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn varlen(&mut self) -> Result<u32> {
        let mut value = 0u32;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | u32::from(b & 0x7f);
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(self.err("variable-length quantity longer than 4 bytes"))
    }
}

/// Decodes a Standard MIDI File into per-track note lists.
///
/// Note-on with velocity 0 counts as note-off. Zero-length notes are dropped.
/// A note-on for a key that is already sounding on the same channel, or a note
/// still sounding at end of track, is an error.
pub fn parse_midi(bytes: &[u8]) -> Result<RawScore> {
    let mut r = Reader { data: bytes, pos: 0 };
    if r.take(4)? != b"MThd" {
        return Err(Error::Midi {
            offset: 0,
            message: "missing MThd header".into(),
        });
    }
    let header_len = r.u32()? as usize;
    if header_len < 6 {
        return Err(r.err(format!("header length {header_len} < 6")));
    }
    let format_at = r.pos;
    let format = r.u16()?;
    let ntracks = r.u16()?;
    let division_at = r.pos;
    let division = r.u16()?;
    r.take(header_len - 6)?;
    if format > 1 {
        return Err(Error::Midi {
            offset: format_at,
            message: format!("unsupported SMF format {format}"),
        });
    }
    if division & 0x8000 != 0 || division == 0 {
        return Err(Error::Midi {
            offset: division_at,
            message: format!("unsupported time division {division:#06x}"),
        });
    }

    let mut tracks = Vec::new();
    while r.remaining() > 0 {
        let chunk_at = r.pos;
        let id = r.take(4)?;
        let len = r.u32()? as usize;
        if r.remaining() < len {
            return Err(Error::Midi {
                offset: chunk_at,
                message: format!("chunk declares {len} bytes but only {} remain", r.remaining()),
            });
        }
        let body_at = r.pos;
        let body = r.take(len)?;
        if id == b"MTrk" {
            tracks.push(parse_track(body, body_at, tracks.len())?);
        }
    }
    if tracks.len() != usize::from(ntracks) {
        return Err(r.err(format!(
            "header announces {ntracks} tracks, found {}",
            tracks.len()
        )));
    }

    Ok(RawScore {
        tracks,
        ppq: u32::from(division),
        chords: Vec::new(),
    })
}

fn parse_track(body: &[u8], base: usize, track: usize) -> Result<Vec<RawNote>> {
    let mut r = Reader { data: body, pos: 0 };
    let at = |r: &Reader, message: String| Error::Midi {
        offset: base + r.pos,
        message,
    };
    let mut tick = 0u64;
    let mut running: Option<u8> = None;
    let mut sounding: HashMap<(u8, u8), u64> = HashMap::new();
    let mut notes = Vec::new();

    while r.remaining() > 0 {
        tick += u64::from(r.varlen().map_err(|_| at(&r, "bad delta time".into()))?);
        let first = r.u8().map_err(|_| at(&r, "truncated event".into()))?;
        let (status, first_data) = if first & 0x80 != 0 {
            (first, None)
        } else {
            match running {
                Some(s) => (s, Some(first)),
                None => return Err(at(&r, "data byte without running status".into())),
            }
        };
        match status {
            0xff => {
                running = None;
                let kind = r.u8().map_err(|_| at(&r, "truncated meta event".into()))?;
                let len = r.varlen().map_err(|_| at(&r, "bad meta length".into()))? as usize;
                r.take(len).map_err(|_| at(&r, "truncated meta event".into()))?;
                if kind == 0x2f {
                    break;
                }
            }
            0xf0 | 0xf7 => {
                running = None;
                let len = r.varlen().map_err(|_| at(&r, "bad sysex length".into()))? as usize;
                r.take(len).map_err(|_| at(&r, "truncated sysex".into()))?;
            }
            0x80..=0xef => {
                running = Some(status);
                let data_len = if matches!(status & 0xf0, 0xc0 | 0xd0) { 1 } else { 2 };
                let mut data = [0u8; 2];
                let mut filled = 0;
                if let Some(d) = first_data {
                    data[0] = d;
                    filled = 1;
                }
                while filled < data_len {
                    let b = r.u8().map_err(|_| at(&r, "truncated channel event".into()))?;
                    if b & 0x80 != 0 {
                        return Err(at(&r, format!("status byte {b:#04x} where data expected")));
                    }
                    data[filled] = b;
                    filled += 1;
                }
                let channel = status & 0x0f;
                let (key, velocity) = (data[0], data[1]);
                match status & 0xf0 {
                    0x90 if velocity > 0 => {
                        if sounding.insert((channel, key), tick).is_some() {
                            return Err(Error::UnterminatedNote { track, tick, pitch: key });
                        }
                    }
                    0x80 | 0x90 => {
                        if let Some(onset) = sounding.remove(&(channel, key)) {
                            if tick > onset {
                                notes.push(RawNote {
                                    onset,
                                    duration: tick - onset,
                                    pitch: key,
                                });
                            }
                        }
                    }
                    _ => {}
                }
            }
            other => return Err(at(&r, format!("invalid status byte {other:#04x}"))),
        }
    }

    if let Some((&(_, pitch), &tick)) = sounding.iter().min_by_key(|(_, &t)| t) {
        return Err(Error::UnterminatedNote { track, tick, pitch });
    }
    notes.sort();
    Ok(notes)
}

fn push_varlen(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 4];
    let mut n = 0;
    loop {
        buf[n] = (value & 0x7f) as u8;
        n += 1;
        value >>= 7;
        if value == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(if i > 0 { buf[i] | 0x80 } else { buf[i] });
    }
}

/// Renders a score as a format-1 SMF (ppq 480, 120 BPM), one track per voice.
/// Runs of equal pitch become one held note; rests are silence.
pub fn write_midi(score: &GridScore) -> Vec<u8> {
    let step_ticks = WRITE_PPQ / RESOLUTION;
    let mut out = Vec::new();
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&4u16.to_be_bytes());
    out.extend_from_slice(&(WRITE_PPQ as u16).to_be_bytes());

    for voice in Voice::ALL {
        let channel = voice.index() as u8;
        let mut events: Vec<u8> = Vec::new();
        if voice == Voice::Soprano {
            events.extend_from_slice(&[0x00, 0xff, 0x51, 0x03]);
            events.extend_from_slice(&TEMPO_120_BPM.to_be_bytes()[1..]);
        }
        let mut last_tick = 0u32;
        let mut emit = |events: &mut Vec<u8>, tick: u32, bytes: [u8; 3]| {
            push_varlen(events, tick - last_tick);
            last_tick = tick;
            events.extend_from_slice(&bytes);
        };
        let line = score.voice_line(voice);
        let mut i = 0;
        while i < line.len() {
            let Some(pitch) = line[i].midi() else {
                i += 1;
                continue;
            };
            let mut j = i + 1;
            while j < line.len() && line[j] == line[i] {
                j += 1;
            }
            emit(&mut events, i as u32 * step_ticks, [0x90 | channel, pitch, WRITE_VELOCITY]);
            emit(&mut events, j as u32 * step_ticks, [0x80 | channel, pitch, 0]);
            i = j;
        }
        events.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
        out.extend_from_slice(b"MTrk");
        out.extend_from_slice(&(events.len() as u32).to_be_bytes());
        out.extend_from_slice(&events);
    }
    out
}
