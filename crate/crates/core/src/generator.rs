//! Conditional generation: chords and soprano are given, alto, tenor and bass
//! are sampled one token at a time.

use ndarray::ArrayView1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{IncrementalDecoder, ModelConfig, ModelParams};
use crate::score::{ChordLabel, GridScore, GridStep, Pitch, Voice};
use crate::tokenizer::{chord_id, decode_with, note_id, Layout, Role, TokenSeq, VOCAB_SIZE};

#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning {
    chords: Vec<ChordLabel>,
    soprano: Vec<Pitch>,
}

impl Conditioning {
    pub fn new(chords: Vec<ChordLabel>, soprano: Vec<Pitch>) -> Result<Self> {
        if chords.len() != soprano.len() {
            return Err(Error::Data(format!(
                "{} chords but {} soprano steps",
                chords.len(),
                soprano.len()
            )));
        }
        if chords.is_empty() {
            return Err(Error::EmptySequence);
        }
        Ok(Conditioning { chords, soprano })
    }

    /// Chord row and soprano line of `score`; the other voices are ignored.
    pub fn from_score(score: &GridScore) -> Self {
        Conditioning {
            chords: score.chords(),
            soprano: score.voice_line(Voice::Soprano),
        }
    }

    pub fn chords(&self) -> &[ChordLabel] {
        &self.chords
    }

    pub fn soprano(&self) -> &[Pitch] {
        &self.soprano
    }

    pub fn len(&self) -> usize {
        self.chords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chords.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SamplingMode {
    Greedy,
    Temperature { tau: f64 },
    TopK { k: usize, tau: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub mode: SamplingMode,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            mode: SamplingMode::TopK { k: 16, tau: 1.0 },
            seed: 0,
        }
    }
}

impl SamplingMode {
    pub fn validate(&self) -> Result<()> {
        let tau_ok = |t: f64| t > 0.0 && t.is_finite();
        match *self {
            SamplingMode::Greedy => Ok(()),
            SamplingMode::Temperature { tau } if tau_ok(tau) => Ok(()),
            SamplingMode::TopK { k, tau } if tau_ok(tau) && (1..=VOCAB_SIZE).contains(&k) => Ok(()),
            SamplingMode::Temperature { .. } => Err(Error::Config("temperature must be positive".into())),
            SamplingMode::TopK { .. } => Err(Error::Config(format!(
                "top-k needs 1 <= k <= {VOCAB_SIZE} and a positive temperature"
            ))),
        }
    }
}

/// Draws the next token for a position of `role` from one row of logits.
/// Ids outside the role get probability zero.
pub fn sample_step(
    logits: ArrayView1<f32>,
    role: Role,
    mode: &SamplingMode,
    rng: &mut impl Rng,
) -> Result<u32> {
    mode.validate()?;
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let mut allowed: Vec<(u32, f64)> = role
        .id_range()
        .filter(|&id| (id as usize) < logits.len())
        .map(|id| (id, f64::from(logits[id as usize])))
        .collect();
    if allowed.is_empty() {
        return Err(Error::Sampling(format!("no {role:?} ids in a vocabulary of {}", logits.len())));
    }
    let tau = match *mode {
        SamplingMode::Greedy => {
            let best = allowed
                .iter()
                .fold(allowed[0], |b, &c| if c.1 > b.1 { c } else { b });
            return Ok(best.0);
        }
        SamplingMode::Temperature { tau } => tau,
        SamplingMode::TopK { k, tau } => {
            // stable sort keeps the lower id first among equal logits
            allowed.sort_by(|a, b| b.1.total_cmp(&a.1));
            allowed.truncate(k);
            allowed.sort_by_key(|a| a.0);
            tau
        }
    };
    let max = allowed.iter().map(|a| a.1).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = allowed.iter().map(|a| ((a.1 - max) / tau).exp()).collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Sampling("every allowed id has zero probability".into()));
    }
    let mut u = rng.gen::<f64>() * total;
    for (&(id, _), w) in allowed.iter().zip(&weights) {
        if u < *w {
            return Ok(id);
        }
        u -= w;
    }
    let last = weights.iter().rposition(|&w| w > 0.0).expect("positive total");
    Ok(allowed[last].0)
}

/// Generates the token sequence for `cond`: chord and soprano positions are
/// copied from the conditioning, the rest are sampled.
pub fn generate_tokens(
    params: &ModelParams<f32>,
    config: &ModelConfig,
    cond: &Conditioning,
    sampling: &SamplingConfig,
) -> Result<TokenSeq> {
    sampling.mode.validate()?;
    let layout = Layout::for_vocab(config.vocab_size).ok_or_else(|| {
        Error::Config(format!("vocabulary of {} matches no token layout", config.vocab_size))
    })?;
    let width = layout.width();
    let total = cond.len() * width;
    if total > config.max_len {
        return Err(Error::Length {
            len: total,
            max: config.max_len,
        });
    }
    let mut decoder = IncrementalDecoder::new(params, config, total)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let mut ids = Vec::with_capacity(total);
    let mut logits = None;
    for p in 0..total {
        let step = p / width;
        let id = match layout.role_at(p) {
            Role::Chord => chord_id(cond.chords[step]),
            Role::Soprano => note_id(cond.soprano[step]),
            role => {
                let row = logits.as_ref().expect("a voice slot is never first");
                sample_step(ArrayView1::from(row), role, &sampling.mode, &mut rng)?
            }
        };
        ids.push(id);
        if p + 1 < total {
            logits = Some(decoder.push(id)?.to_vec());
        }
    }
    Ok(TokenSeq(ids))
}

/// Generates a complete four-voice score whose chord row and soprano equal
/// the conditioning.
pub fn generate(
    params: &ModelParams<f32>,
    config: &ModelConfig,
    cond: &Conditioning,
    sampling: &SamplingConfig,
) -> Result<GridScore> {
    let seq = generate_tokens(params, config, cond, sampling)?;
    let layout = Layout::for_vocab(config.vocab_size).expect("checked by generate_tokens");
    let decoded = decode_with(&seq, layout)?;
    let steps = decoded
        .steps()
        .iter()
        .zip(&cond.chords)
        .map(|(s, &chord)| GridStep::new(chord, s.voices))
        .collect();
    GridScore::new("generated", steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn single_allowed_id_always_wins() {
        // the chord role only admits 129..=177; make 150 dominant there
        let mut logits = Array1::<f32>::from_elem(178, 0.0);
        logits.slice_mut(ndarray::s![129..]).fill(-1e30);
        logits[150] = 0.0;
        for mode in [
            SamplingMode::Greedy,
            SamplingMode::Temperature { tau: 1.0 },
            SamplingMode::TopK { k: 5, tau: 1.0 },
        ] {
            let mut r = rng();
            for _ in 0..20 {
                assert_eq!(sample_step(logits.view(), Role::Chord, &mode, &mut r).unwrap(), 150);
            }
        }
    }

    #[test]
    fn masked_roles_are_never_drawn() {
        let mut logits = Array1::<f32>::zeros(178);
        logits[170] = 50.0;
        let mut r = rng();
        for _ in 0..200 {
            let id = sample_step(logits.view(), Role::Tenor, &SamplingMode::Temperature { tau: 2.0 }, &mut r).unwrap();
            assert!(id <= 128);
        }
        assert_eq!(sample_step(logits.view(), Role::Bass, &SamplingMode::Greedy, &mut r).unwrap(), 0);
    }

    #[test]
    fn greedy_ties_go_to_the_lowest_id() {
        let mut logits = Array1::<f32>::zeros(178);
        logits[40] = 3.0;
        logits[12] = 3.0;
        logits[90] = 3.0;
        assert_eq!(sample_step(logits.view(), Role::Alto, &SamplingMode::Greedy, &mut rng()).unwrap(), 12);
    }

    #[test]
    fn small_temperature_is_greedy() {
        let logits = Array1::from_shape_fn(178, |i| ((i * 37) % 101) as f32 / 10.0);
        let mut r = rng();
        let greedy = sample_step(logits.view(), Role::Alto, &SamplingMode::Greedy, &mut r).unwrap();
        for _ in 0..100 {
            let id = sample_step(logits.view(), Role::Alto, &SamplingMode::Temperature { tau: 1e-4 }, &mut r).unwrap();
            assert_eq!(id, greedy);
        }
    }

    #[test]
    fn top_k_stays_within_the_k_best() {
        let logits = Array1::from_shape_fn(178, |i| i as f32 / 50.0);
        let mut r = rng();
        for _ in 0..500 {
            let id = sample_step(logits.view(), Role::Soprano, &SamplingMode::TopK { k: 3, tau: 1.0 }, &mut r).unwrap();
            assert!((126..=128).contains(&id));
        }
    }

    #[test]
    fn bad_modes_and_logits_are_rejected() {
        let logits = Array1::<f32>::zeros(178);
        for mode in [
            SamplingMode::Temperature { tau: 0.0 },
            SamplingMode::TopK { k: 0, tau: 1.0 },
            SamplingMode::TopK { k: 179, tau: 1.0 },
            SamplingMode::TopK { k: 4, tau: -1.0 },
        ] {
            assert!(matches!(sample_step(logits.view(), Role::Alto, &mode, &mut rng()), Err(Error::Config(_))));
        }
        let mut bad = logits.clone();
        bad[3] = f32::NAN;
        assert!(sample_step(bad.view(), Role::Alto, &SamplingMode::Greedy, &mut rng()).is_err());
    }

    #[test]
    fn sampling_config_serializes_with_a_mode_tag() {
        let json = serde_json::to_string(&SamplingConfig::default()).unwrap();
        assert_eq!(json, r#"{"mode":{"mode":"top_k","k":16,"tau":1.0},"seed":0}"#);
    }

    #[test]
    fn conditioning_lengths_must_agree() {
        let c = ChordLabel::Other;
        assert!(Conditioning::new(vec![c, c], vec![Pitch::REST]).is_err());
        assert!(matches!(Conditioning::new(vec![], vec![]), Err(Error::EmptySequence)));
        assert_eq!(Conditioning::new(vec![c], vec![Pitch::REST]).unwrap().len(), 1);
    }
}
