use ndarray::{Array2, Array3, Axis};
use rand::Rng;

use super::attention::{attention_backward, attention_cached, AttentionCache};
use super::layers::{
    feed_forward_backward, feed_forward_cached, layer_norm_backward, layer_norm_cached,
    sinusoidal_encoding, FeedForwardCache, LayerNormCache,
};
use super::{ModelConfig, ModelParams, Real};
use crate::error::{Error, Result};

/// Attention weights of every layer plus the output logits.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    /// One `heads × L × L` tensor per layer; row `t` sums to 1 over `j ≤ t`.
    pub attention: Vec<Array3<T>>,
    /// `L × vocab_size`.
    pub logits: Array2<T>,
}

fn check_tokens(tokens: &[u32], config: &ModelConfig) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    if tokens.len() > config.max_len {
        return Err(Error::Length {
            len: tokens.len(),
            max: config.max_len,
        });
    }
    if let Some((position, &id)) = tokens
        .iter()
        .enumerate()
        .find(|(_, &id)| id as usize >= config.vocab_size)
    {
        return Err(Error::OutOfVocabulary { position, id });
    }
    Ok(())
}

/// Token embedding rows, plus the sinusoidal table when `use_absolute_pe`.
pub fn embed<T: Real>(
    tokens: &[u32],
    params: &ModelParams<T>,
    config: &ModelConfig,
) -> Result<Array2<T>> {
    check_tokens(tokens, config)?;
    let mut x = Array2::zeros((tokens.len(), config.d_model));
    for (mut row, &id) in x.rows_mut().into_iter().zip(tokens) {
        row.assign(&params.embedding.row(id as usize));
    }
    if config.use_absolute_pe {
        x += &sinusoidal_encoding::<T>(tokens.len(), config.d_model);
    }
    Ok(x)
}

struct LayerTape<T> {
    attn_norm: LayerNormCache<T>,
    attn: AttentionCache<T>,
    attn_drop: Option<Array2<T>>,
    ff_norm: LayerNormCache<T>,
    ff: FeedForwardCache<T>,
    ff_drop: Option<Array2<T>>,
}

/// A forward pass that keeps every intermediate needed by [`backward`](Self::backward).
pub struct TrainingPass<T> {
    tokens: Vec<u32>,
    layers: Vec<LayerTape<T>>,
    final_norm: LayerNormCache<T>,
    final_hidden: Array2<T>,
    pub logits: Array2<T>,
}

fn dropout_mask<T: Real, R: Rng>(shape: (usize, usize), rate: f64, rng: &mut R) -> Array2<T> {
    let keep = T::of(1.0 / (1.0 - rate));
    Array2::from_shape_simple_fn(shape, || {
        if rng.gen::<f64>() < rate {
            T::zero()
        } else {
            keep
        }
    })
}

impl<T: Real> TrainingPass<T> {
    /// Runs the model. Residual dropout is applied only when `dropout_rng` is
    /// given and `config.dropout > 0`.
    pub fn run<R: Rng>(
        params: &ModelParams<T>,
        config: &ModelConfig,
        tokens: &[u32],
        mut dropout_rng: Option<&mut R>,
    ) -> Result<Self> {
        let mut x = embed(tokens, params, config)?;
        let shape = x.dim();
        let mut layers = Vec::with_capacity(config.num_layers);
        for layer in &params.layers {
            let (h, attn_norm) = layer_norm_cached(x.view(), &layer.attn_norm);
            let (mut a, attn) = attention_cached(h.view(), &layer.attn, config);
            let attn_drop = match dropout_rng.as_deref_mut() {
                Some(rng) if config.dropout > 0.0 => Some(dropout_mask(shape, config.dropout, rng)),
                _ => None,
            };
            if let Some(m) = &attn_drop {
                a *= m;
            }
            x += &a;
            let (g, ff_norm) = layer_norm_cached(x.view(), &layer.ff_norm);
            let (mut f, ff) = feed_forward_cached(g.view(), &layer.ff);
            let ff_drop = match dropout_rng.as_deref_mut() {
                Some(rng) if config.dropout > 0.0 => Some(dropout_mask(shape, config.dropout, rng)),
                _ => None,
            };
            if let Some(m) = &ff_drop {
                f *= m;
            }
            x += &f;
            layers.push(LayerTape {
                attn_norm,
                attn,
                attn_drop,
                ff_norm,
                ff,
                ff_drop,
            });
        }
        let (final_hidden, final_norm) = layer_norm_cached(x.view(), &params.final_norm);
        let logits = final_hidden.dot(&params.head_w) + &params.head_b;
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        Ok(TrainingPass {
            tokens: tokens.to_vec(),
            layers,
            final_norm,
            final_hidden,
            logits,
        })
    }

    /// Gradients of `sum(dlogits ∘ logits)` with respect to every parameter.
    pub fn backward(
        &self,
        params: &ModelParams<T>,
        config: &ModelConfig,
        dlogits: &Array2<T>,
    ) -> ModelParams<T> {
        let mut grad = ModelParams::zeros(config);
        grad.head_w += &self.final_hidden.t().dot(dlogits);
        grad.head_b += &dlogits.sum_axis(Axis(0));
        let dy = dlogits.dot(&params.head_w.t());
        let mut dx = layer_norm_backward(
            dy.view(),
            &self.final_norm,
            &params.final_norm,
            &mut grad.final_norm,
        );
        for ((tape, layer), g) in self
            .layers
            .iter()
            .zip(&params.layers)
            .zip(grad.layers.iter_mut())
            .rev()
        {
            let mut df = dx.clone();
            if let Some(m) = &tape.ff_drop {
                df *= m;
            }
            let dg = feed_forward_backward(df.view(), &tape.ff, &layer.ff, &mut g.ff);
            dx += &layer_norm_backward(dg.view(), &tape.ff_norm, &layer.ff_norm, &mut g.ff_norm);

            let mut da = dx.clone();
            if let Some(m) = &tape.attn_drop {
                da *= m;
            }
            let dh = attention_backward(da.view(), &tape.attn, &layer.attn, config, &mut g.attn);
            dx += &layer_norm_backward(dh.view(), &tape.attn_norm, &layer.attn_norm, &mut g.attn_norm);
        }
        for (row, &id) in dx.rows().into_iter().zip(&self.tokens) {
            let mut target = grad.embedding.row_mut(id as usize);
            target += &row;
        }
        if !config.relative_attention {
            grad.clear_relative();
        }
        grad
    }

    pub fn into_trace(self) -> ForwardTrace<T> {
        ForwardTrace {
            attention: self.layers.into_iter().map(|l| l.attn.into_probs()).collect(),
            logits: self.logits,
        }
    }
}

/// Inference forward pass (no dropout).
pub fn forward<T: Real>(
    tokens: &[u32],
    params: &ModelParams<T>,
    config: &ModelConfig,
) -> Result<ForwardTrace<T>> {
    Ok(TrainingPass::run::<rand_chacha::ChaCha8Rng>(params, config, tokens, None)?.into_trace())
}

/// Summed cross-entropy over unmasked rows and `dsum/dlogits / denom`.
pub(crate) fn cross_entropy_sum<T: Real>(
    logits: &Array2<T>,
    targets: &[u32],
    mask: &[bool],
    denom: T,
) -> Result<(T, Array2<T>, usize)> {
    if targets.len() != logits.nrows() || mask.len() != logits.nrows() {
        return Err(Error::Data(format!(
            "{} logit rows but {} targets and {} mask flags",
            logits.nrows(),
            targets.len(),
            mask.len()
        )));
    }
    let mut total = T::zero();
    let mut count = 0;
    let mut grad = Array2::zeros(logits.raw_dim());
    for (t, row) in logits.rows().into_iter().enumerate() {
        if !mask[t] {
            continue;
        }
        let target = targets[t] as usize;
        if target >= row.len() {
            return Err(Error::OutOfVocabulary {
                position: t,
                id: targets[t],
            });
        }
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let sum_exp: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        total += log_z - row[target];
        count += 1;
        let mut g = grad.row_mut(t);
        for (gi, &v) in g.iter_mut().zip(row.iter()) {
            *gi = (v - log_z).exp() / denom;
        }
        g[target] -= T::one() / denom;
    }
    if count == 0 {
        return Err(Error::AllMasked);
    }
    Ok((total, grad, count))
}

/// Mean next-token cross-entropy over the unmasked rows and its gradient with
/// respect to the logits.
pub fn cross_entropy<T: Real>(
    logits: &Array2<T>,
    targets: &[u32],
    mask: &[bool],
) -> Result<(T, Array2<T>)> {
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::AllMasked);
    }
    let denom = T::of(n as f64);
    let (total, grad, _) = cross_entropy_sum(logits, targets, mask, denom)?;
    Ok((total / denom, grad))
}

/// Teacher-forced loss for `inputs → targets` and gradients for every parameter.
pub fn loss_and_gradients<T: Real>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    inputs: &[u32],
    targets: &[u32],
    mask: &[bool],
) -> Result<(T, ModelParams<T>)> {
    let pass = TrainingPass::run::<rand_chacha::ChaCha8Rng>(params, config, inputs, None)?;
    let (loss, dlogits) = cross_entropy(&pass.logits, targets, mask)?;
    Ok((loss, pass.backward(params, config, &dlogits)))
}
