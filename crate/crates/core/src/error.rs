use crate::score::Voice;
use crate::tokenizer::Role;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed MIDI at byte {offset}: {message}")]
    Midi { offset: usize, message: String },

    #[error("track {track}: note {pitch} at tick {tick} is not terminated before it sounds again or the track ends")]
    UnterminatedNote { track: usize, tick: u64, pitch: u8 },

    #[error("chorale schema error{}: {message}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    Schema { step: Option<usize>, message: String },

    #[error("cannot quantize: {0}")]
    Quantize(String),

    #[error("empty sequence")]
    EmptySequence,

    #[error("token structure error at position {position}: {message}")]
    Structure { position: usize, message: String },

    #[error("token role error at position {position}: id {id} is not a {expected:?} token")]
    Role { position: usize, id: u32, expected: Role },

    #[error("token id {id} at position {position} is outside the vocabulary")]
    OutOfVocabulary { position: usize, id: u32 },

    #[error("shifting by {shift} semitones leaves the MIDI range at step {step}, voice {voice:?}")]
    Range { step: usize, voice: Voice, shift: i32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sequence of length {len} exceeds the maximum length {max}")]
    Length { len: usize, max: usize },

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error("every position is masked out of the loss")]
    AllMasked,

    #[error("training diverged at step {step} (loss = {loss})")]
    Diverged { step: u64, loss: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("sampling: {0}")]
    Sampling(String),

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True when the error comes from the numerical machinery rather than from input data.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::Diverged { .. } | Error::Sampling(_) | Error::AllMasked
        )
    }
}
