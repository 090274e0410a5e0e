use super::{infer_chord, ChordLabel, GridScore, GridStep, Pitch, RawNote, RawScore, RESOLUTION};
use crate::error::{Error, Result};

/// How non-empty tracks are mapped onto S, A, T, B.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum VoicePolicy {
    /// Highest mean pitch becomes soprano, lowest becomes bass. Equal means
    /// keep track order.
    #[default]
    ByMeanPitch,
    /// The n-th non-empty track is the n-th voice.
    TrackOrder,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoiceAssignment {
    /// `tracks[v]` is the track index sung by voice `v` (S first). Shorter than
    /// four when fewer tracks carry notes.
    pub tracks: Vec<usize>,
    pub mean_pitch: Vec<f64>,
    /// Two tracks had identical mean pitch.
    pub tie: bool,
}

pub fn assign_voices(raw: &RawScore, policy: VoicePolicy) -> Result<VoiceAssignment> {
    let mut candidates: Vec<(usize, f64)> = raw
        .tracks
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.is_empty())
        .map(|(i, t)| {
            let mean = t.iter().map(|n| f64::from(n.pitch)).sum::<f64>() / t.len() as f64;
            (i, mean)
        })
        .collect();
    if candidates.is_empty() {
        return Err(Error::Quantize("no track contains notes".into()));
    }
    if candidates.len() > 4 {
        return Err(Error::Quantize(format!(
            "{} tracks contain notes, at most four voices are supported",
            candidates.len()
        )));
    }
    let mut tie = false;
    for (i, a) in candidates.iter().enumerate() {
        for b in &candidates[i + 1..] {
            if a.1 == b.1 {
                tie = true;
                log::warn!(
                    "tracks {} and {} have the same mean pitch {:.2}; keeping track order",
                    a.0,
                    b.0,
                    a.1
                );
            }
        }
    }
    if policy == VoicePolicy::ByMeanPitch {
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1));
    }
    Ok(VoiceAssignment {
        tracks: candidates.iter().map(|c| c.0).collect(),
        mean_pitch: candidates.iter().map(|c| c.1).collect(),
        tie,
    })
}

/// Samples the note lists on the 16th-note grid.
///
/// A note sounds at every step whose start tick lies in `[onset, onset + duration)`;
/// when several notes of one track overlap a step start, the latest onset
/// (then the highest pitch) wins. Each step takes the latest chord annotation at
/// or before its start, falling back to [`infer_chord`] on the sounding pitches.
pub fn quantize(raw: &RawScore, policy: VoicePolicy) -> Result<GridScore> {
    if raw.ppq == 0 {
        return Err(Error::Quantize("ticks per quarter note must be positive".into()));
    }
    let assignment = assign_voices(raw, policy)?;
    let ppq = u64::from(raw.ppq);
    let res = u64::from(RESOLUTION);
    // Step t starts at tick t * ppq / 4; compare everything scaled by 4.
    let first_step_at_or_after = |tick: u64| (res * tick).div_ceil(ppq) as usize;
    let length = first_step_at_or_after(raw.max_end());

    let mut voices = vec![[Pitch::REST; 4]; length];
    for (v, &track) in assignment.tracks.iter().enumerate() {
        let mut notes: Vec<RawNote> = raw.tracks[track].clone();
        notes.sort_by_key(|n| (n.onset, n.pitch));
        for n in notes {
            let pitch = Pitch::new(n.pitch)?;
            let from = first_step_at_or_after(n.onset);
            let to = first_step_at_or_after(n.onset + n.duration);
            for step in voices.iter_mut().take(to).skip(from) {
                step[v] = pitch;
            }
        }
    }

    let mut annotations = raw.chords.clone();
    annotations.sort_by_key(|a| a.0);
    let mut steps = Vec::with_capacity(length);
    let mut next = 0;
    let mut current: Option<ChordLabel> = None;
    for (t, pitches) in voices.into_iter().enumerate() {
        while next < annotations.len() && res * annotations[next].0 <= t as u64 * ppq {
            current = Some(annotations[next].1);
            next += 1;
        }
        let chord = current.unwrap_or_else(|| {
            let pcs: Vec<u8> = pitches.iter().filter_map(|p| p.pitch_class()).collect();
            infer_chord(&pcs)
        });
        steps.push(GridStep::new(chord, pitches));
    }
    GridScore::new("untitled", steps)
}
