//! Reading and writing pieces and token corpora on disk.

use std::fs;
use std::path::{Path, PathBuf};

use choir_core::augment::ManifestEntry;
use choir_core::score::{load_chorale_json, parse_midi, quantize, GridScore, VoicePolicy};
use choir_core::tokenizer::{decode, encode, read_token_lines, write_token_lines, TokenSeq};
use choir_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const TOKENS_FILE: &str = "corpus.tokens";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance of every line of `corpus.tokens`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Names of the source pieces, indexed by `ManifestEntry::source`.
    pub sources: Vec<String>,
    pub pieces: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn piece_id(&self, i: usize) -> String {
        let e = &self.pieces[i];
        let name = self.sources.get(e.source).cloned().unwrap_or_else(|| e.source.to_string());
        if e.transform == "original" {
            name
        } else {
            format!("{name}:{}", e.transform)
        }
    }
}

fn is_piece_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("json" | "mid" | "midi")
    )
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// One chorale from a JSON or MIDI file, titled after the file name.
pub fn read_piece(path: &Path, policy: VoicePolicy) -> Result<GridScore> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let mut score = match ext.as_str() {
        "json" => load_chorale_json(&fs::read_to_string(path)?),
        "mid" | "midi" => quantize(&parse_midi(&fs::read(path)?)?, policy),
        _ => Err(Error::Data(format!("{}: expected a .json, .mid or .midi file", path.display()))),
    }
    .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    score.set_title(stem(path));
    Ok(score)
}

/// Piece files of `dir` in name order.
pub fn piece_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.is_file() && is_piece_file(p));
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no .json or .mid files in {}", dir.display())));
    }
    Ok(files)
}

/// Loads a token corpus directory, a directory of piece files, or one piece
/// file. Every piece is titled with its identifier.
pub fn load_pieces(path: &Path) -> Result<Vec<GridScore>> {
    if path.is_file() {
        return Ok(vec![read_piece(path, VoicePolicy::default())?]);
    }
    if !path.is_dir() {
        return Err(Error::Data(format!("{} does not exist", path.display())));
    }
    let tokens = path.join(TOKENS_FILE);
    if !tokens.exists() {
        return piece_files(path)?
            .iter()
            .map(|p| read_piece(p, VoicePolicy::default()))
            .collect();
    }
    let seqs = read_token_lines(std::io::BufReader::new(fs::File::open(&tokens)?))?;
    let manifest: Manifest = match fs::read_to_string(path.join(MANIFEST_FILE)) {
        Ok(text) => serde_json::from_str(&text)?,
        Err(_) => Manifest::default(),
    };
    if !manifest.pieces.is_empty() && manifest.pieces.len() != seqs.len() {
        return Err(Error::Data(format!(
            "{} lists {} pieces but {} has {} lines",
            MANIFEST_FILE,
            manifest.pieces.len(),
            TOKENS_FILE,
            seqs.len()
        )));
    }
    if seqs.is_empty() {
        return Err(Error::Data(format!("{} is empty", tokens.display())));
    }
    seqs.iter()
        .enumerate()
        .map(|(i, s)| {
            let mut g = decode(s).map_err(|e| Error::Data(format!("{} line {}: {e}", TOKENS_FILE, i + 1)))?;
            g.set_title(if manifest.pieces.is_empty() {
                format!("piece{i}")
            } else {
                manifest.piece_id(i)
            });
            Ok(g)
        })
        .collect()
}

pub fn write_corpus(dir: &Path, pieces: &[GridScore], manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    let seqs: Vec<TokenSeq> = pieces.iter().map(encode).collect();
    let mut out = std::io::BufWriter::new(fs::File::create(dir.join(TOKENS_FILE))?);
    write_token_lines(&mut out, &seqs)?;
    std::io::Write::flush(&mut out)?;
    let mut json = serde_json::to_string_pretty(manifest)?;
    json.push('\n');
    fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(())
}
