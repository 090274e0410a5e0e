use ndarray::{s, Array1, Array2, ArrayView1};

use super::attention::relative_index;
use super::layers::{feed_forward, layer_norm, sinusoidal_encoding};
use super::{ModelConfig, ModelParams, Real};
use crate::error::{Error, Result};

/// Position-by-position evaluation with cached keys and values. Each call to
/// [`push`](Self::push) returns the logits row that a full [`forward`](super::forward)
/// over the tokens pushed so far would produce at the last position.
pub struct IncrementalDecoder<'a, T> {
    params: &'a ModelParams<T>,
    config: &'a ModelConfig,
    keys: Vec<Array2<T>>,
    values: Vec<Array2<T>>,
    positions: Array2<T>,
    len: usize,
}

impl<'a, T: Real> IncrementalDecoder<'a, T> {
    pub fn new(params: &'a ModelParams<T>, config: &'a ModelConfig, capacity: usize) -> Result<Self> {
        if capacity > config.max_len {
            return Err(Error::Length {
                len: capacity,
                max: config.max_len,
            });
        }
        let cache = || vec![Array2::zeros((capacity, config.d_model)); config.num_layers];
        Ok(IncrementalDecoder {
            params,
            config,
            keys: cache(),
            values: cache(),
            positions: sinusoidal_encoding(capacity, config.d_model),
            len: 0,
        })
    }

    /// Number of tokens consumed so far.
    pub fn position(&self) -> usize {
        self.len
    }

    pub fn push(&mut self, token: u32) -> Result<Array1<T>> {
        let cfg = self.config;
        let t = self.len;
        if t >= self.keys.first().map_or(0, |k| k.nrows()) {
            return Err(Error::Length {
                len: t + 1,
                max: self.positions.nrows(),
            });
        }
        if token as usize >= cfg.vocab_size {
            return Err(Error::OutOfVocabulary { position: t, id: token });
        }
        let mut x = self.params.embedding.slice(s![token as usize..token as usize + 1, ..]).to_owned();
        if cfg.use_absolute_pe {
            x += &self.positions.slice(s![t..t + 1, ..]);
        }
        let dh = cfg.head_dim();
        let scale = T::one() / T::of(dh as f64).sqrt();
        for (l, layer) in self.params.layers.iter().enumerate() {
            let h = layer_norm(x.view(), &layer.attn_norm);
            let q = h.dot(&layer.attn.w_q);
            self.keys[l].row_mut(t).assign(&h.dot(&layer.attn.w_k).row(0));
            self.values[l].row_mut(t).assign(&h.dot(&layer.attn.w_v).row(0));
            let mut concat = Array2::zeros((1, cfg.d_model));
            for head in 0..cfg.num_heads {
                let cols = head * dh..(head + 1) * dh;
                let qh = q.slice(s![0, cols.clone()]);
                let mut scores: Vec<T> = (0..=t)
                    .map(|j| {
                        let mut s = dot(qh, self.keys[l].slice(s![j, cols.clone()]));
                        if cfg.relative_attention {
                            s += dot(qh, layer.attn.rel.row(relative_index(t, j, cfg.max_rel_dist)));
                        }
                        s * scale
                    })
                    .collect();
                let max = scores.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                scores.iter_mut().for_each(|v| *v = (*v - max).exp());
                let sum: T = scores.iter().copied().sum();
                let mut out = concat.slice_mut(s![0, cols.clone()]);
                for (j, w) in scores.into_iter().enumerate() {
                    out.scaled_add(w / sum, &self.values[l].slice(s![j, cols.clone()]));
                }
            }
            x += &concat.dot(&layer.attn.w_o);
            let g = layer_norm(x.view(), &layer.ff_norm);
            x += &feed_forward(g.view(), &layer.ff);
        }
        let y = layer_norm(x.view(), &self.params.final_norm);
        let logits = y.dot(&self.params.head_w) + &self.params.head_b;
        self.len += 1;
        Ok(logits.row(0).to_owned())
    }
}

fn dot<T: Real>(a: ArrayView1<T>, b: ArrayView1<T>) -> T {
    a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum()
}
