//! Teacher-forced training: batching, Adam with warmup, validation accuracy,
//! checkpoints and the ablation ladder.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use ndarray::Zip;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::expand_dataset;
use crate::error::{Error, Result};
use crate::model::forward::cross_entropy_sum;
use crate::model::{
    init_params, read_checkpoint, write_checkpoint, CheckpointFile, ModelConfig, ModelParams,
    TrainingPass,
};
use crate::score::GridScore;
use crate::tokenizer::{encode_with, Layout, Role, TokenSeq};

/// The four switches of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Switches {
    pub chord_tokens: bool,
    pub relative_attention: bool,
    pub transpose_aug: bool,
    pub reverse_aug: bool,
}

impl Default for Switches {
    fn default() -> Self {
        Switches {
            chord_tokens: true,
            relative_attention: true,
            transpose_aug: true,
            reverse_aug: true,
        }
    }
}

impl Switches {
    /// Rows of the ablation table, each enabling one more switch.
    pub fn ladder() -> [Switches; 5] {
        let row = |n: usize| Switches {
            chord_tokens: n >= 1,
            relative_attention: n >= 2,
            transpose_aug: n >= 3,
            reverse_aug: n >= 4,
        };
        [row(0), row(1), row(2), row(3), row(4)]
    }

    pub fn layout(self) -> Layout {
        Layout::with_chords(self.chord_tokens)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Tokens per training window; inputs are the first `crop_len - 1`.
    pub crop_len: usize,
    /// Peak learning rate, reached at the end of warmup.
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub warmup_steps: u64,
    pub max_steps: u64,
    pub grad_clip: f64,
    pub validation_fraction: f64,
    /// Steps between log rows (and validation passes).
    pub log_every: u64,
    pub seed: u64,
    pub switches: Switches,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            crop_len: 640,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-9,
            warmup_steps: 1000,
            max_steps: 20_000,
            grad_clip: 1.0,
            validation_fraction: 0.1,
            log_every: 100,
            seed: 0,
            switches: Switches::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.crop_len < 2 {
            return bad("crop_len must be at least 2");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie strictly between 0 and 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0 && self.grad_clip > 0.0) {
            return bad("epsilon and grad_clip must be positive");
        }
        if self.log_every == 0 {
            return bad("log_every must be positive");
        }
        Ok(())
    }

    /// The model configuration the switches imply.
    pub fn model_config(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            vocab_size: self.switches.layout().vocab_size(),
            relative_attention: self.switches.relative_attention,
            ..base.clone()
        }
    }
}

/// Linear warmup to the peak rate, then decay with the inverse square root of
/// the step. `step` counts from 1; without warmup the rate is constant.
pub fn learning_rate(config: &TrainConfig, step: u64) -> f64 {
    let step = step.max(1) as f64;
    if config.warmup_steps == 0 {
        return config.learning_rate;
    }
    let w = config.warmup_steps as f64;
    config.learning_rate * (step / w).min((w / step).sqrt())
}

pub(crate) fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h = h.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchRow {
    /// `crop_len` tokens.
    pub tokens: Vec<u32>,
    /// One flag per target (`tokens[1..]`); false on padding.
    pub mask: Vec<bool>,
}

impl BatchRow {
    pub fn inputs(&self) -> &[u32] {
        &self.tokens[..self.tokens.len() - 1]
    }

    pub fn targets(&self) -> &[u32] {
        &self.tokens[1..]
    }
}

/// Deterministic batch stream: batch `n` depends only on the seed and `n`.
/// Sequences are visited in a fresh permutation each epoch and cropped at a
/// random step boundary.
pub struct BatchSampler {
    seqs: Vec<TokenSeq>,
    crop_len: usize,
    batch_size: usize,
    width: usize,
    seed: u64,
    perm: Option<(u64, Vec<usize>)>,
}

pub fn make_batches(
    seqs: &[TokenSeq],
    crop_len: usize,
    batch_size: usize,
    layout: Layout,
    seed: u64,
) -> Result<BatchSampler> {
    if seqs.is_empty() {
        return Err(Error::Data("no training sequences".into()));
    }
    if !seqs.iter().any(|s| s.len() >= 10) {
        return Err(Error::Data("every training sequence is shorter than 10 tokens".into()));
    }
    if crop_len < 2 || batch_size == 0 {
        return Err(Error::Config("crop_len must be at least 2 and batch_size positive".into()));
    }
    Ok(BatchSampler {
        seqs: seqs.iter().filter(|s| s.len() >= 2).cloned().collect(),
        crop_len,
        batch_size,
        width: layout.width(),
        seed,
        perm: None,
    })
}

impl BatchSampler {
    fn permutation(&mut self, epoch: u64) -> &[usize] {
        if self.perm.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut idx: Vec<usize> = (0..self.seqs.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[1, epoch])));
            self.perm = Some((epoch, idx));
        }
        &self.perm.as_ref().expect("just set").1
    }

    pub fn crop(&self, seq: &TokenSeq, rng: &mut impl Rng) -> BatchRow {
        let ids = seq.ids();
        let c = self.crop_len;
        if ids.len() >= c {
            let starts = (ids.len() - c) / self.width;
            let start = rng.gen_range(0..=starts) * self.width;
            return BatchRow {
                tokens: ids[start..start + c].to_vec(),
                mask: vec![true; c - 1],
            };
        }
        let n = ids.len();
        let last = &ids[n - self.width.min(n)..];
        let mut tokens = ids.to_vec();
        while tokens.len() < c {
            tokens.extend_from_slice(last);
        }
        tokens.truncate(c);
        BatchRow {
            tokens,
            mask: (1..c).map(|i| i < n).collect(),
        }
    }

    pub fn batch(&mut self, step: u64) -> Vec<BatchRow> {
        let n = self.seqs.len() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[2, step]));
        (0..self.batch_size as u64)
            .map(|r| {
                let g = step * self.batch_size as u64 + r;
                let i = self.permutation(g / n)[(g % n) as usize];
                self.crop(&self.seqs[i], &mut rng)
            })
            .collect()
    }
}

/// Counts `(correct, counted)` argmax predictions over every target position
/// whose role is not excluded. Sequences longer than the model window are
/// scored in overlapping step-aligned windows.
pub fn accuracy_counts(
    params: &ModelParams<f32>,
    config: &ModelConfig,
    layout: Layout,
    seqs: &[TokenSeq],
    exclude: &[Role],
) -> Result<(usize, usize)> {
    let w = layout.width();
    let window = (config.max_len / w * w).max(config.max_len.min(w)).max(2);
    let stride = if window > w { window - w } else { window };
    let per_seq: Vec<Result<(usize, usize)>> = seqs
        .par_iter()
        .map(|seq| {
            let ids = seq.ids();
            let (mut correct, mut counted) = (0, 0);
            let mut next = 1;
            let mut start = 0;
            while next < ids.len() {
                let end = (start + window).min(ids.len());
                let logits = crate::model::forward(&ids[start..end - 1], params, config)?.logits;
                let first = next.max(start + 1);
                for (p, &target) in ids.iter().enumerate().take(end).skip(first) {
                    if exclude.contains(&layout.role_at(p)) {
                        continue;
                    }
                    counted += 1;
                    if argmax(logits.row(p - start - 1).iter().copied()) == target as usize {
                        correct += 1;
                    }
                }
                next = end;
                start += stride;
            }
            Ok((correct, counted))
        })
        .collect();
    let mut total = (0, 0);
    for r in per_seq {
        let (c, n) = r?;
        total.0 += c;
        total.1 += n;
    }
    Ok(total)
}

/// Lowest index among the maxima.
pub(crate) fn argmax(values: impl Iterator<Item = f32>) -> usize {
    let mut best = (0, f32::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Teacher-forced accuracy in percent over the non-excluded target positions.
pub fn validation_accuracy(
    params: &ModelParams<f32>,
    config: &ModelConfig,
    layout: Layout,
    seqs: &[TokenSeq],
    exclude: &[Role],
) -> Result<f64> {
    let (correct, counted) = accuracy_counts(params, config, layout, seqs, exclude)?;
    if counted == 0 {
        return Err(Error::AllMasked);
    }
    Ok(100.0 * correct as f64 / counted as f64)
}

/// Encoded training and validation sequences.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub layout: Layout,
    pub train: Vec<TokenSeq>,
    pub validation: Vec<TokenSeq>,
}

/// Holds out the validation fraction of `pieces`, augments the rest per the
/// switches, and encodes both sides.
pub fn prepare_dataset(pieces: &[GridScore], config: &TrainConfig) -> Result<Dataset> {
    config.validate()?;
    if pieces.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 pieces to split off validation, got {}",
            pieces.len()
        )));
    }
    let mut order: Vec<usize> = (0..pieces.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0])));
    let n_val = ((pieces.len() as f64 * config.validation_fraction).round() as usize).clamp(1, pieces.len() - 1);
    let mut val_idx = order[..n_val].to_vec();
    let mut train_idx = order[n_val..].to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    let train_pieces: Vec<GridScore> = train_idx.iter().map(|&i| pieces[i].clone()).collect();
    let sw = config.switches;
    let expanded = expand_dataset(&train_pieces, sw.transpose_aug, sw.reverse_aug)?;
    let layout = sw.layout();
    Ok(Dataset {
        layout,
        train: expanded.pieces.iter().map(|g| encode_with(g, layout)).collect(),
        validation: val_idx.iter().map(|&i| encode_with(&pieces[i], layout)).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub best_val_accuracy: Option<f64>,
    /// Every random draw is derived from this and the step counter.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
}

/// Loss and gradient of one batch row; `None` when the row is fully masked.
type RowGradient = Result<Option<(f32, ModelParams<f32>)>>;

pub const METRICS_FILE: &str = "metrics.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub log: Vec<LogRow>,
    pub state: TrainState,
    pub best_val_accuracy: Option<f64>,
}

pub struct Trainer {
    pub model: ModelConfig,
    pub config: TrainConfig,
    pub params: ModelParams<f32>,
    first_moment: ModelParams<f32>,
    second_moment: ModelParams<f32>,
    pub state: TrainState,
}

impl Trainer {
    /// Fresh parameters for `model` (already adjusted by the switches).
    pub fn new(model: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut params = init_params::<f32>(&model)?;
        if !model.relative_attention {
            params.clear_relative();
        }
        Ok(Trainer {
            first_moment: ModelParams::zeros(&model),
            second_moment: ModelParams::zeros(&model),
            state: TrainState {
                step: 0,
                best_val_accuracy: None,
                seed: config.seed,
            },
            params,
            model,
            config,
        })
    }

    /// Continues from a state checkpoint written by [`checkpoint`](Self::checkpoint).
    pub fn resume(file: &CheckpointFile, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let state: TrainState = serde_json::from_value(file.meta["state"].clone())
            .map_err(|e| Error::Checkpoint(format!("no training state in checkpoint: {e}")))?;
        Ok(Trainer {
            model: file.config.clone(),
            params: file.params("")?,
            first_moment: file.params("adam.m.")?,
            second_moment: file.params("adam.v.")?,
            state,
            config,
        })
    }

    /// Weights plus optimizer moments and the training state.
    pub fn checkpoint(&self) -> CheckpointFile {
        let mut file = CheckpointFile::new(&self.model, &self.params, self.meta());
        file.push_params("adam.m.", &self.first_moment);
        file.push_params("adam.v.", &self.second_moment);
        file
    }

    fn meta(&self) -> serde_json::Value {
        serde_json::json!({
            "state": self.state,
            "layout": Layout::for_vocab(self.model.vocab_size),
        })
    }

    /// One optimizer step on batch number `state.step`; returns the batch loss.
    pub fn step(&mut self, sampler: &mut BatchSampler) -> Result<f64> {
        let step = self.state.step;
        let rows = sampler.batch(step);
        let count: usize = rows.iter().map(|r| r.mask.iter().filter(|&&m| m).count()).sum();
        if count == 0 {
            return Err(Error::AllMasked);
        }
        let denom = count as f32;
        let (params, model, seed) = (&self.params, &self.model, self.state.seed);
        let parts: Vec<RowGradient> = rows
            .par_iter()
            .enumerate()
            .map(|(r, row)| {
                if !row.mask.iter().any(|&m| m) {
                    return Ok(None);
                }
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[3, step, r as u64]));
                let drop = (model.dropout > 0.0).then_some(&mut rng);
                let pass = TrainingPass::run(params, model, row.inputs(), drop)?;
                let (sum, dlogits, _) = cross_entropy_sum(&pass.logits, row.targets(), &row.mask, denom)?;
                Ok(Some((sum, pass.backward(params, model, &dlogits))))
            })
            .collect();
        let mut total = 0f32;
        let mut grads: Option<ModelParams<f32>> = None;
        for part in parts {
            if let Some((sum, g)) = part? {
                total += sum;
                match &mut grads {
                    Some(acc) => acc.add_scaled(&g, 1.0),
                    None => grads = Some(g),
                }
            }
        }
        let mut grads = grads.expect("at least one unmasked row");
        let loss = f64::from(total / denom);
        let norm = f64::from(grads.sum_squares()).sqrt();
        if !loss.is_finite() || !norm.is_finite() {
            return Err(Error::Diverged { step: step + 1, loss });
        }
        if norm > self.config.grad_clip {
            grads.scale((self.config.grad_clip / norm) as f32);
        }
        self.adam_update(&grads);
        self.state.step += 1;
        Ok(loss)
    }

    fn adam_update(&mut self, grads: &ModelParams<f32>) {
        let cfg = &self.config;
        let t = (self.state.step + 1) as i32;
        let lr = learning_rate(cfg, self.state.step + 1);
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = (1.0 - b1.powi(t)) as f32;
        let c2 = (1.0 - b2.powi(t)) as f32;
        let (b1, b2, lr, eps) = (b1 as f32, b2 as f32, lr as f32, cfg.epsilon as f32);
        let g = grads.named_tensors();
        for (((mut p, mut m), mut v), (_, g)) in self
            .params
            .tensors_mut()
            .into_iter()
            .zip(self.first_moment.tensors_mut())
            .zip(self.second_moment.tensors_mut())
            .zip(g)
        {
            Zip::from(&mut p)
                .and(&mut m)
                .and(&mut v)
                .and(&g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
        if !self.model.relative_attention {
            self.params.clear_relative();
        }
    }

    /// Trains up to `max_steps`, validating every `log_every` steps. With an
    /// output directory, writes the metrics log, the best weights and a
    /// resumable state checkpoint there.
    pub fn fit(&mut self, data: &Dataset, out_dir: Option<&Path>) -> Result<TrainReport> {
        if data.validation.is_empty() {
            return Err(Error::Data("validation split is empty".into()));
        }
        let mut sampler = make_batches(
            &data.train,
            self.config.crop_len,
            self.config.batch_size,
            data.layout,
            self.state.seed,
        )?;
        let mut log_file = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(METRICS_FILE);
                let fresh = self.state.step == 0 || !path.exists();
                let mut f = OpenOptions::new()
                    .create(true)
                    .write(true)
                    .append(!fresh)
                    .truncate(fresh)
                    .open(path)?;
                if fresh {
                    writeln!(f, "step,train_loss,val_accuracy")?;
                }
                Some(f)
            }
            None => None,
        };
        let mut log = Vec::new();
        let (mut loss_sum, mut loss_n) = (0.0, 0u64);
        while self.state.step < self.config.max_steps {
            loss_sum += self.step(&mut sampler)?;
            loss_n += 1;
            let step = self.state.step;
            if !step.is_multiple_of(self.config.log_every) && step != self.config.max_steps {
                continue;
            }
            let acc = validation_accuracy(&self.params, &self.model, data.layout, &data.validation, &[])?;
            let row = LogRow {
                step,
                train_loss: loss_sum / loss_n as f64,
                val_accuracy: Some(acc),
            };
            log::info!("step {step}: train loss {:.4}, validation accuracy {acc:.2}%", row.train_loss);
            (loss_sum, loss_n) = (0.0, 0);
            if self.state.best_val_accuracy.is_none_or(|b| acc > b) {
                self.state.best_val_accuracy = Some(acc);
                if let Some(dir) = out_dir {
                    let best = CheckpointFile::new(&self.model, &self.params, self.meta());
                    write_checkpoint(&dir.join(BEST_CHECKPOINT), &best)?;
                }
            }
            if let Some(f) = &mut log_file {
                writeln!(f, "{},{},{}", row.step, row.train_loss, acc)?;
            }
            log.push(row);
        }
        if let Some(dir) = out_dir {
            write_checkpoint(&dir.join(LAST_CHECKPOINT), &self.checkpoint())?;
        }
        Ok(TrainReport {
            log,
            best_val_accuracy: self.state.best_val_accuracy,
            state: self.state.clone(),
        })
    }
}

/// Splits, augments and encodes `pieces`, then trains a fresh model.
pub fn train(
    pieces: &[GridScore],
    model: &ModelConfig,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    let data = prepare_dataset(pieces, config)?;
    Trainer::new(config.model_config(model), config.clone())?.fit(&data, out_dir)
}

/// Resumes training from the state checkpoint in `out_dir`.
pub fn resume(pieces: &[GridScore], config: &TrainConfig, out_dir: &Path) -> Result<TrainReport> {
    let data = prepare_dataset(pieces, config)?;
    let file = read_checkpoint(&out_dir.join(LAST_CHECKPOINT))?;
    Trainer::resume(&file, config.clone())?.fit(&data, Some(out_dir))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub switches: Switches,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// `chord,rpr,amp,rev,accuracy` with switches as 1/0.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(["chord", "rpr", "amp", "rev", "accuracy"])?;
        for row in &self.rows {
            let s = row.switches;
            let flag = |b: bool| if b { "1" } else { "0" }.to_string();
            w.write_record([
                flag(s.chord_tokens),
                flag(s.relative_attention),
                flag(s.transpose_aug),
                flag(s.reverse_aug),
                format!("{:.2}", row.accuracy),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("ascii"))
    }
}

/// Trains one model per ladder row and records its best validation accuracy.
/// Row `i` writes its outputs to `out_dir/row{i}` when a directory is given.
pub fn run_ablation(
    pieces: &[GridScore],
    model: &ModelConfig,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for (i, switches) in Switches::ladder().into_iter().enumerate() {
        let cfg = TrainConfig {
            switches,
            ..config.clone()
        };
        let dir = out_dir.map(|d| d.join(format!("row{i}")));
        let report = train(pieces, model, &cfg, dir.as_deref())?;
        let accuracy = report.best_val_accuracy.expect("fit validates at least once");
        log::info!("ablation row {i} {switches:?}: {accuracy:.2}%");
        rows.push(AblationRow { switches, accuracy });
    }
    Ok(AblationTable { rows })
}
