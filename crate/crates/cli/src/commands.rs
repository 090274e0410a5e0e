use std::fs;
use std::path::Path;

use choir_core::augment::{expand_dataset, ManifestEntry};
use choir_core::generator::{generate as harmonize, Conditioning, SamplingConfig, SamplingMode};
use choir_core::metrics::{attention_distance, harmonic_report, MetricReport};
use choir_core::model::{forward, read_checkpoint, ModelConfig, ModelParams};
use choir_core::score::{export_pianoroll, to_chorale_json, write_midi, GridScore, Voice, VoicePolicy};
use choir_core::tokenizer::{encode_with, Layout};
use choir_core::trainer::{self, TrainConfig};
use choir_core::Error;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, Manifest};
use crate::{
    AttentionArgs, AugmentArgs, CliError, EvaluateArgs, GenerateArgs, IngestArgs, ModeArg, PolicyArg, TrainArgs,
    VoiceArg,
};

type CmdResult = Result<(), CliError>;

pub const CONFIG_FILE: &str = "config.toml";

fn echo_config<T: Serialize>(dir: &Path, value: &T) -> CmdResult {
    fs::create_dir_all(dir)?;
    let text = toml::to_string(value).map_err(|e| Error::Data(format!("cannot render config: {e}")))?;
    fs::write(dir.join(CONFIG_FILE), text)?;
    Ok(())
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[derive(Serialize)]
struct IngestConfig {
    input: String,
    voice_policy: String,
}

pub fn ingest(a: IngestArgs) -> CmdResult {
    let policy = match a.voice_policy {
        PolicyArg::MeanPitch => VoicePolicy::ByMeanPitch,
        PolicyArg::TrackOrder => VoicePolicy::TrackOrder,
    };
    let files = corpus::piece_files(&a.input)?;
    let pieces = files
        .iter()
        .map(|p| corpus::read_piece(p, policy))
        .collect::<Result<Vec<_>, _>>()?;
    let manifest = Manifest {
        sources: pieces.iter().map(|g| g.title().to_string()).collect(),
        pieces: (0..pieces.len())
            .map(|source| ManifestEntry {
                source,
                transform: "original".into(),
            })
            .collect(),
    };
    corpus::write_corpus(&a.out, &pieces, &manifest)?;
    echo_config(
        &a.out,
        &IngestConfig {
            input: path_string(&a.input),
            voice_policy: format!("{:?}", a.voice_policy),
        },
    )?;
    println!("ingested {} pieces into {}", pieces.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct AugmentConfig {
    input: String,
    transpose: bool,
    reverse: bool,
}

pub fn augment(a: AugmentArgs) -> CmdResult {
    let pieces = corpus::load_pieces(&a.input)?;
    let expanded = expand_dataset(&pieces, a.transpose, a.reverse)?;
    let manifest = Manifest {
        sources: pieces.iter().map(|g| g.title().to_string()).collect(),
        pieces: expanded.manifest(),
    };
    corpus::write_corpus(&a.out, &expanded.pieces, &manifest)?;
    echo_config(
        &a.out,
        &AugmentConfig {
            input: path_string(&a.input),
            transpose: a.transpose,
            reverse: a.reverse,
        },
    )?;
    for s in &expanded.skipped {
        log::warn!("{}: key shift {} skipped (out of range)", manifest.sources[s.source], s.key_shift);
    }
    println!("{} pieces expanded to {}", pieces.len(), expanded.len());
    Ok(())
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    model: ModelConfig,
    train: TrainConfig,
}

fn effective_config(a: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            toml::from_str::<RunConfig>(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    let (m, t) = (&mut cfg.model, &mut cfg.train);
    macro_rules! set {
        ($flag:expr => $($target:expr),+) => {
            if let Some(v) = $flag {
                $($target = v;)+
            }
        };
    }
    set!(a.steps => t.max_steps);
    set!(a.batch_size => t.batch_size);
    set!(a.crop_len => t.crop_len);
    set!(a.lr => t.learning_rate);
    set!(a.warmup => t.warmup_steps);
    set!(a.log_every => t.log_every);
    set!(a.validation_fraction => t.validation_fraction);
    set!(a.seed => t.seed, m.seed);
    set!(a.d_model => m.d_model);
    set!(a.heads => m.num_heads);
    set!(a.layers => m.num_layers);
    set!(a.d_ff => m.d_ff);
    set!(a.max_len => m.max_len);
    set!(a.max_rel_dist => m.max_rel_dist);
    set!(a.dropout => m.dropout);
    set!(a.absolute_pe => m.use_absolute_pe);
    set!(a.chord_tokens => t.switches.chord_tokens);
    set!(a.relative_attention => t.switches.relative_attention);
    set!(a.transpose_aug => t.switches.transpose_aug);
    set!(a.reverse_aug => t.switches.reverse_aug);
    cfg.train.validate()?;
    cfg.train.model_config(&cfg.model).validate()?;
    Ok(cfg)
}

pub fn train(a: TrainArgs) -> CmdResult {
    let cfg = effective_config(&a)?;
    let pieces = corpus::load_pieces(&a.corpus)?;
    echo_config(&a.out, &cfg)?;
    if a.ablation {
        let table = trainer::run_ablation(&pieces, &cfg.model, &cfg.train, Some(&a.out))?;
        let csv = table.to_csv()?;
        fs::write(a.out.join("ablation.csv"), &csv)?;
        print!("{csv}");
        return Ok(());
    }
    let report = if a.resume {
        trainer::resume(&pieces, &cfg.train, &a.out)?
    } else {
        trainer::train(&pieces, &cfg.model, &cfg.train, Some(&a.out))?
    };
    match report.best_val_accuracy {
        Some(acc) => println!("step {}: best validation accuracy {acc:.2}%", report.state.step),
        None => println!("step {}: nothing to train", report.state.step),
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<(ModelParams<f32>, ModelConfig), CliError> {
    let file = read_checkpoint(path)?;
    Ok((file.params("")?, file.config))
}

#[derive(Serialize)]
struct GenerateConfig {
    checkpoint: String,
    conditioning: String,
    sampling: SamplingConfig,
}

pub fn generate(a: GenerateArgs) -> CmdResult {
    let mode = match a.mode {
        ModeArg::Greedy => SamplingMode::Greedy,
        ModeArg::Temperature => SamplingMode::Temperature { tau: a.temperature },
        ModeArg::TopK => SamplingMode::TopK {
            k: a.top_k,
            tau: a.temperature,
        },
    };
    let sampling = SamplingConfig { mode, seed: a.seed };
    sampling.mode.validate()?;
    let (params, config) = load_model(&a.checkpoint)?;
    let source = corpus::read_piece(&a.conditioning, VoicePolicy::default())?;
    let mut out = harmonize(&params, &config, &Conditioning::from_score(&source), &sampling)?;
    out.set_title(source.title());
    fs::create_dir_all(&a.out)?;
    let base = a.out.join(source.title());
    fs::write(base.with_extension("json"), to_chorale_json(&out))?;
    fs::write(base.with_extension("mid"), write_midi(&out))?;
    fs::write(base.with_extension("csv"), export_pianoroll(&out)?)?;
    echo_config(
        &a.out,
        &GenerateConfig {
            checkpoint: path_string(&a.checkpoint),
            conditioning: path_string(&a.conditioning),
            sampling,
        },
    )?;
    println!("generated {} steps into {}", out.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct EvaluateConfig {
    against: String,
    reference: Option<String>,
    checkpoint: Option<String>,
    voice: String,
}

fn report_for(
    pieces: &[GridScore],
    voice: Voice,
    model: Option<&(ModelParams<f32>, ModelConfig)>,
) -> Result<MetricReport, CliError> {
    let mut report = harmonic_report(pieces, voice)?;
    if let Some((params, config)) = model {
        report.add_ter(pieces, params, config)?;
    }
    Ok(report)
}

pub fn evaluate(a: EvaluateArgs) -> CmdResult {
    let voice = match a.voice {
        VoiceArg::S => Voice::Soprano,
        VoiceArg::A => Voice::Alto,
        VoiceArg::T => Voice::Tenor,
        VoiceArg::B => Voice::Bass,
    };
    let model = a.checkpoint.as_deref().map(load_model).transpose()?;
    let pieces = corpus::load_pieces(&a.against)?;
    let report = report_for(&pieces, voice, model.as_ref())?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("report.csv"), report.to_csv()?)?;
    fs::write(a.out.join("report_counts.csv"), report.to_verbose_csv()?)?;
    let summary = match &a.reference {
        Some(r) => {
            let reference = report_for(&corpus::load_pieces(r)?, voice, model.as_ref())?;
            fs::write(a.out.join("reference_report.csv"), reference.to_csv()?)?;
            let cmp = report.comparison_csv(&reference)?;
            fs::write(a.out.join("comparison.csv"), &cmp)?;
            cmp
        }
        None => report.to_csv()?.lines().last().map(|l| format!("{l}\n")).unwrap_or_default(),
    };
    echo_config(
        &a.out,
        &EvaluateConfig {
            against: path_string(&a.against),
            reference: a.reference.as_deref().map(path_string),
            checkpoint: a.checkpoint.as_deref().map(path_string),
            voice: voice.key().to_string(),
        },
    )?;
    print!("{summary}");
    Ok(())
}

pub fn analyze_attention(a: AttentionArgs) -> CmdResult {
    let (params, config) = load_model(&a.checkpoint)?;
    let layout = Layout::for_vocab(config.vocab_size)
        .ok_or_else(|| Error::Checkpoint(format!("vocabulary of {} matches no token layout", config.vocab_size)))?;
    let piece = corpus::read_piece(&a.piece, VoicePolicy::default())?;
    let seq = encode_with(&piece, layout);
    let trace = forward(seq.ids(), &params, &config)?;
    let mut csv = String::from("layer,mean_distance\n");
    for (i, d) in attention_distance(&trace).iter().enumerate() {
        csv.push_str(&format!("{},{d:.6}\n", i + 1));
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(&a.out, &csv)?;
    print!("{csv}");
    Ok(())
}
