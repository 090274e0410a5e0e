//! Evaluation: token error rate, melody/chord harmonic metrics and attention
//! distance.

use std::f64::consts::PI;

use ndarray::{ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::model::{ForwardTrace, ModelConfig, ModelParams, Real};
use crate::score::{ChordLabel, GridScore, Pitch, Voice};
use crate::tokenizer::{encode_with, Layout, Role, TokenSeq};
use crate::trainer::accuracy_counts;

/// Percentage of wrong teacher-forced predictions over alto, tenor and bass
/// positions; chord and soprano positions are not counted.
pub fn token_error_rate(params: &ModelParams<f32>, config: &ModelConfig, seqs: &[TokenSeq]) -> Result<f64> {
    let layout = layout_of(config)?;
    let (correct, counted) = accuracy_counts(params, config, layout, seqs, &[Role::Chord, Role::Soprano])?;
    if counted == 0 {
        return Err(Error::AllMasked);
    }
    Ok(100.0 - 100.0 * correct as f64 / counted as f64)
}

fn layout_of(config: &ModelConfig) -> Result<Layout> {
    Layout::for_vocab(config.vocab_size)
        .ok_or_else(|| Error::Config(format!("vocabulary of {} matches no token layout", config.vocab_size)))
}

/// Pitch classes of the chord's triad, ascending; empty for `Other`.
pub fn chord_tone_set(chord: ChordLabel) -> Vec<u8> {
    let mut tones = chord.tones();
    tones.sort_unstable();
    tones
}

fn check_lengths(melody: &[Pitch], chords: &[ChordLabel]) -> Result<()> {
    if melody.len() != chords.len() {
        return Err(Error::Data(format!(
            "melody has {} steps but the chord row has {}",
            melody.len(),
            chords.len()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ToneCounts {
    /// Onsets on a chord tone.
    pub chord: usize,
    /// Onsets off the chord.
    pub non_chord: usize,
    /// Non-chord onsets followed by a note at most two semitones away.
    pub proper: usize,
}

impl ToneCounts {
    pub fn ratio(&self) -> Option<f64> {
        let n = self.chord + self.non_chord;
        (n > 0).then(|| (self.chord + self.proper) as f64 / n as f64)
    }
}

/// Onset steps of `melody`: the first step of every run of one sounding pitch.
fn onsets(melody: &[Pitch]) -> Vec<usize> {
    (0..melody.len())
        .filter(|&s| !melody[s].is_rest() && (s == 0 || melody[s - 1] != melody[s]))
        .collect()
}

/// Chord-tone counts over melody onsets, judged against the chord at each onset.
pub fn tone_counts(melody: &[Pitch], chords: &[ChordLabel]) -> Result<ToneCounts> {
    check_lengths(melody, chords)?;
    let starts = onsets(melody);
    let mut counts = ToneCounts::default();
    for (i, &s) in starts.iter().enumerate() {
        let tones = chord_tone_set(chords[s]);
        if tones.is_empty() {
            continue;
        }
        let pitch = melody[s].midi().expect("onsets sound");
        if tones.contains(&(pitch % 12)) {
            counts.chord += 1;
            continue;
        }
        counts.non_chord += 1;
        if let Some(&n) = starts.get(i + 1) {
            let next = melody[n].midi().expect("onsets sound");
            if pitch.abs_diff(next) <= 2 {
                counts.proper += 1;
            }
        }
    }
    Ok(counts)
}

/// `(n_c + n_p) / (n_c + n_n)`; `None` when no onset falls on a triad.
pub fn ctnctr(melody: &[Pitch], chords: &[ChordLabel]) -> Result<Option<f64>> {
    Ok(tone_counts(melody, chords)?.ratio())
}

/// Weight of the interval from a chord tone up to the melody, in semitones mod 12.
pub fn interval_score(interval: u8) -> i32 {
    match interval % 12 {
        0 | 3 | 4 | 7 | 8 | 9 => 1,
        5 => 0,
        _ => -1,
    }
}

/// Sounding melody steps over a triad, each with its chord tones.
fn eligible_steps<'a>(
    melody: &'a [Pitch],
    chords: &'a [ChordLabel],
) -> impl Iterator<Item = (u8, Vec<u8>)> + 'a {
    melody.iter().zip(chords).filter_map(|(p, &c)| {
        let tones = chord_tone_set(c);
        match p.pitch_class() {
            Some(pc) if !tones.is_empty() => Some((pc, tones)),
            _ => None,
        }
    })
}

/// Mean interval score over every (sounding step, chord tone) pair; held
/// notes count once per step.
pub fn pcs(melody: &[Pitch], chords: &[ChordLabel]) -> Result<Option<f64>> {
    check_lengths(melody, chords)?;
    let (mut sum, mut n) = (0i64, 0usize);
    for (pc, tones) in eligible_steps(melody, chords) {
        for c in tones {
            sum += i64::from(interval_score((pc + 12 - c) % 12));
            n += 1;
        }
    }
    Ok((n > 0).then(|| sum as f64 / n as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PitchClassProfile(pub [f64; 12]);

impl PitchClassProfile {
    pub fn single(pc: u8) -> Self {
        let mut w = [0.0; 12];
        w[usize::from(pc % 12)] = 1.0;
        PitchClassProfile(w)
    }

    /// Equal weight on each listed pitch class.
    pub fn uniform(pcs: &[u8]) -> Self {
        let mut w = [0.0; 12];
        for &pc in pcs {
            w[usize::from(pc % 12)] = 1.0;
        }
        PitchClassProfile(w)
    }
}

/// Coordinates on the circles of fifths, minor thirds and major thirds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TonalCentroid(pub [f64; 6]);

impl TonalCentroid {
    pub fn distance(&self, other: &TonalCentroid) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// The six transform rows for pitch class `l`.
fn centroid_basis(l: usize) -> [f64; 6] {
    let l = l as f64;
    let (fifths, minor, major) = (l * 7.0 * PI / 6.0, l * 3.0 * PI / 2.0, l * 2.0 * PI / 3.0);
    [
        fifths.sin(),
        fifths.cos(),
        minor.sin(),
        minor.cos(),
        0.5 * major.sin(),
        0.5 * major.cos(),
    ]
}

pub fn tonal_centroid(pcp: &PitchClassProfile) -> Result<TonalCentroid> {
    if pcp.0.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::Data("pitch-class weights must be finite and non-negative".into()));
    }
    let mass: f64 = pcp.0.iter().sum();
    if mass <= 0.0 {
        return Err(Error::Data("pitch-class profile has no mass".into()));
    }
    let mut out = [0.0; 6];
    for (l, &w) in pcp.0.iter().enumerate() {
        for (o, b) in out.iter_mut().zip(centroid_basis(l)) {
            *o += w / mass * b;
        }
    }
    Ok(TonalCentroid(out))
}

/// Distance between the centroid of one melody pitch class and the centroid
/// of a set of chord pitch classes.
pub fn melody_chord_distance(melody_pc: u8, chord_pcs: &[u8]) -> Result<f64> {
    let m = tonal_centroid(&PitchClassProfile::single(melody_pc))?;
    let c = tonal_centroid(&PitchClassProfile::uniform(chord_pcs))?;
    Ok(m.distance(&c))
}

/// Mean melody/chord centroid distance over sounding steps on a triad.
pub fn mctd(melody: &[Pitch], chords: &[ChordLabel]) -> Result<Option<f64>> {
    check_lengths(melody, chords)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (pc, tones) in eligible_steps(melody, chords) {
        sum += melody_chord_distance(pc, &tones)?;
        n += 1;
    }
    Ok((n > 0).then(|| sum / n as f64))
}

/// Attention-weighted mean look-back `Σ_j w[t, j] (t - j)` for each query of
/// one `L × L` weight matrix. Only keys `j ≤ t` contribute.
pub fn query_distances<T: Real>(weights: ArrayView2<T>) -> Vec<f64> {
    weights
        .rows()
        .into_iter()
        .enumerate()
        .map(|(t, row)| {
            compensated_dot(
                row.iter()
                    .take(t + 1)
                    .enumerate()
                    .map(|(j, w)| (w.to_f64().expect("finite"), (t - j) as f64)),
            )
        })
        .collect()
}

/// Dot product with error-free products and Neumaier summation, so that
/// e.g. five weights of 0.2 against 4..0 give exactly 2.
fn compensated_dot(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    let mut add = |x: f64| {
        let t = sum + x;
        comp += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    };
    for (a, b) in pairs {
        let p = a * b;
        add(p);
        add(a.mul_add(b, -p));
    }
    sum + comp
}

/// Per layer: the mean of [`query_distances`] over every head and query.
pub fn attention_distance<T: Real>(trace: &ForwardTrace<T>) -> Vec<f64> {
    trace
        .attention
        .iter()
        .map(|layer| {
            let (mut sum, mut n) = (0.0, 0usize);
            for head in layer.axis_iter(Axis(0)) {
                for d in query_distances(head) {
                    sum += d;
                    n += 1;
                }
            }
            if n == 0 {
                0.0
            } else {
                sum / n as f64
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PieceMetrics {
    pub piece_id: String,
    pub tones: ToneCounts,
    pub ctnctr: Option<f64>,
    pub pcs: Option<f64>,
    pub mctd: Option<f64>,
    pub ter: Option<f64>,
}

/// Means over the pieces where each metric is defined.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricMeans {
    pub ctnctr: Option<f64>,
    pub pcs: Option<f64>,
    pub mctd: Option<f64>,
    pub ter: Option<f64>,
}

impl MetricMeans {
    fn values(&self) -> [(&'static str, Option<f64>); 4] {
        [
            ("ctnctr", self.ctnctr),
            ("pcs", self.pcs),
            ("mctd", self.mctd),
            ("ter", self.ter),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub pieces: Vec<PieceMetrics>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

impl MetricReport {
    pub fn means(&self) -> MetricMeans {
        MetricMeans {
            ctnctr: mean(self.pieces.iter().map(|p| p.ctnctr)),
            pcs: mean(self.pieces.iter().map(|p| p.pcs)),
            mctd: mean(self.pieces.iter().map(|p| p.mctd)),
            ter: mean(self.pieces.iter().map(|p| p.ter)),
        }
    }

    /// Fills in each piece's token error rate under the given model.
    pub fn add_ter(&mut self, scores: &[GridScore], params: &ModelParams<f32>, config: &ModelConfig) -> Result<()> {
        let layout = layout_of(config)?;
        if scores.len() != self.pieces.len() {
            return Err(Error::Data("score count differs from the report".into()));
        }
        for (p, g) in self.pieces.iter_mut().zip(scores) {
            p.ter = Some(token_error_rate(params, config, &[encode_with(g, layout)])?);
        }
        Ok(())
    }

    /// `piece_id,ctnctr,pcs,mctd,ter`, one row per piece and a final `MEAN`
    /// row; undefined values are empty cells.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv_writer();
        w.write_record(["piece_id", "ctnctr", "pcs", "mctd", "ter"])?;
        for p in &self.pieces {
            w.write_record([p.piece_id.clone(), cell(p.ctnctr), cell(p.pcs), cell(p.mctd), cell(p.ter)])?;
        }
        let m = self.means();
        w.write_record(["MEAN".to_string(), cell(m.ctnctr), cell(m.pcs), cell(m.mctd), cell(m.ter)])?;
        finish(w)
    }

    /// As [`to_csv`](Self::to_csv) with the chord-tone counts appended.
    pub fn to_verbose_csv(&self) -> Result<String> {
        let mut w = csv_writer();
        w.write_record(["piece_id", "ctnctr", "pcs", "mctd", "ter", "n_c", "n_n", "n_p"])?;
        for p in &self.pieces {
            w.write_record([
                p.piece_id.clone(),
                cell(p.ctnctr),
                cell(p.pcs),
                cell(p.mctd),
                cell(p.ter),
                p.tones.chord.to_string(),
                p.tones.non_chord.to_string(),
                p.tones.proper.to_string(),
            ])?;
        }
        finish(w)
    }

    /// `metric,value,reference,delta` with `delta = value - reference`.
    pub fn comparison_csv(&self, reference: &MetricReport) -> Result<String> {
        let mut w = csv_writer();
        w.write_record(["metric", "value", "reference", "delta"])?;
        for ((name, v), (_, r)) in self.means().values().into_iter().zip(reference.means().values()) {
            let delta = v.zip(r).map(|(v, r)| v - r);
            w.write_record([name.to_string(), cell(v), cell(r), cell(delta)])?;
        }
        finish(w)
    }
}

/// Harmonic metrics of every piece, with `voice` as the melody against the
/// annotated chord row. Pieces are identified by their titles.
pub fn harmonic_report(pieces: &[GridScore], voice: Voice) -> Result<MetricReport> {
    if pieces.is_empty() {
        return Err(Error::Data("no pieces to evaluate".into()));
    }
    let rows = pieces
        .iter()
        .map(|g| {
            let melody = g.voice_line(voice);
            let chords = g.chords();
            let tones = tone_counts(&melody, &chords)?;
            Ok(PieceMetrics {
                piece_id: g.title().to_string(),
                tones,
                ctnctr: tones.ratio(),
                pcs: pcs(&melody, &chords)?,
                mctd: mctd(&melody, &chords)?,
                ter: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport { pieces: rows })
}
