use ndarray::{concatenate, s, Array2, Array3, ArrayView2, Axis, Zip};

use super::{AttentionParams, ModelConfig, Real};
use crate::error::{Error, Result};

/// Additive logit for keys after the query.
pub const MASK_VALUE: f64 = -1e9;

/// Row of the relative table used for key `j` seen from query `t`.
pub fn relative_index(t: usize, j: usize, max_rel_dist: usize) -> usize {
    let m = max_rel_dist as i64;
    ((j as i64 - t as i64).clamp(-m, m) + m) as usize
}

/// Reference path: `out[t, j] = q[t] · rel[clip(j - t)]` for every pair.
pub fn relative_logits_naive<T: Real>(
    q: ArrayView2<T>,
    rel: ArrayView2<T>,
    max_rel_dist: usize,
) -> Array2<T> {
    let l = q.nrows();
    Array2::from_shape_fn((l, l), |(t, j)| {
        let r = rel.row(relative_index(t, j, max_rel_dist));
        q.row(t).dot(&r)
    })
}

/// Table rows for distances `-(L-1) ..= 0`, in that order.
fn rel_window<T: Real>(rel: ArrayView2<T>, len: usize, max_rel_dist: usize) -> Array2<T> {
    let mut w = Array2::zeros((len, rel.ncols()));
    for (m, mut row) in w.rows_mut().into_iter().enumerate() {
        row.assign(&rel.row(relative_index(len - 1, m, max_rel_dist)));
    }
    w
}

/// Skew trick: `A = q·windowᵀ` holds `q[t]·rel[m - (L-1)]` at `[t, m]`.
/// Left-padding one zero column, reading the buffer back as `(L+1)×L` and
/// dropping the first row lines entry `[t, j]` up with distance `j - t` for
/// every `j ≤ t`. Entries above the diagonal are set to zero.
fn skew<T: Real>(a: Array2<T>) -> Array2<T> {
    let l = a.nrows();
    let padded = concatenate![Axis(1), Array2::zeros((l, 1)), a];
    let folded = padded
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((l + 1, l))
        .expect("(L)(L+1) = (L+1)(L)");
    let mut out = folded.slice(s![1.., ..]).to_owned();
    for t in 0..l {
        out.slice_mut(s![t, t + 1..]).fill(T::zero());
    }
    out
}

/// Inverse bookkeeping of [`skew`] for gradients: `[t, j] → [t, L-1+j-t]`, `j ≤ t`.
fn unskew<T: Real>(g: ArrayView2<T>) -> Array2<T> {
    let l = g.nrows();
    let mut out = Array2::zeros((l, l));
    for t in 0..l {
        for j in 0..=t {
            out[[t, l - 1 + j - t]] = g[[t, j]];
        }
    }
    out
}

/// Relative logits for the causal half via the skew trick. Must agree with
/// [`relative_logits_naive`] on every `j ≤ t`.
pub fn relative_logits_skewed<T: Real>(
    q: ArrayView2<T>,
    rel: ArrayView2<T>,
    max_rel_dist: usize,
) -> Array2<T> {
    let window = rel_window(rel, q.nrows(), max_rel_dist);
    skew(q.dot(&window.t()))
}

fn softmax_rows<T: Real>(scores: &mut Array2<T>) {
    for mut row in scores.rows_mut() {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

pub(crate) struct AttentionCache<T> {
    input: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    window: Option<Array2<T>>,
    probs: Array3<T>,
    concat: Array2<T>,
}

impl<T> AttentionCache<T> {
    pub(crate) fn into_probs(self) -> Array3<T> {
        self.probs
    }
}

/// Multi-head causal attention with the relative term. Returns the sublayer
/// output `Z` (`L × d_model`) and the attention weights (`heads × L × L`).
pub fn relative_attention<T: Real>(
    x: ArrayView2<T>,
    p: &AttentionParams<T>,
    config: &ModelConfig,
) -> Result<(Array2<T>, Array3<T>)> {
    if x.nrows() > config.max_len {
        return Err(Error::Length {
            len: x.nrows(),
            max: config.max_len,
        });
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("attention input"));
    }
    let (z, cache) = attention_cached(x, p, config);
    Ok((z, cache.into_probs()))
}

pub(crate) fn attention_cached<T: Real>(
    x: ArrayView2<T>,
    p: &AttentionParams<T>,
    config: &ModelConfig,
) -> (Array2<T>, AttentionCache<T>) {
    let l = x.nrows();
    let dh = config.head_dim();
    let scale = T::one() / T::of(dh as f64).sqrt();
    let q = x.dot(&p.w_q);
    let k = x.dot(&p.w_k);
    let v = x.dot(&p.w_v);
    let window = config
        .relative_attention
        .then(|| rel_window(p.rel.view(), l, config.max_rel_dist));
    let mask = T::of(MASK_VALUE);

    let mut probs = Array3::zeros((config.num_heads, l, l));
    let mut concat = Array2::zeros((l, config.d_model));
    for h in 0..config.num_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let qh = q.slice(cols);
        let mut scores = qh.dot(&k.slice(cols).t());
        if let Some(w) = &window {
            scores += &skew(qh.dot(&w.t()));
        }
        scores.mapv_inplace(|v| v * scale);
        for t in 0..l {
            scores.slice_mut(s![t, t + 1..]).mapv_inplace(|v| v + mask);
        }
        softmax_rows(&mut scores);
        concat.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        probs.index_axis_mut(Axis(0), h).assign(&scores);
    }
    let z = concat.dot(&p.w_o);
    (
        z,
        AttentionCache {
            input: x.to_owned(),
            q,
            k,
            v,
            window,
            probs,
            concat,
        },
    )
}

pub(crate) fn attention_backward<T: Real>(
    dz: ArrayView2<T>,
    cache: &AttentionCache<T>,
    p: &AttentionParams<T>,
    config: &ModelConfig,
    grad: &mut AttentionParams<T>,
) -> Array2<T> {
    let l = dz.nrows();
    let dh = config.head_dim();
    let scale = T::one() / T::of(dh as f64).sqrt();
    grad.w_o += &cache.concat.t().dot(&dz);
    let dconcat = dz.dot(&p.w_o.t());

    let mut dq = Array2::zeros((l, config.d_model));
    let mut dk = Array2::zeros((l, config.d_model));
    let mut dv = Array2::zeros((l, config.d_model));
    let mut dwindow: Array2<T> = Array2::zeros((l, dh));
    for h in 0..config.num_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let probs = cache.probs.index_axis(Axis(0), h);
        let dout = dconcat.slice(cols);
        let qh = cache.q.slice(cols);
        dv.slice_mut(cols).assign(&probs.t().dot(&dout));
        let dprobs = dout.dot(&cache.v.slice(cols).t());
        let mut ds = &probs * &dprobs;
        for (mut row, prow) in ds.rows_mut().into_iter().zip(probs.rows()) {
            let dot = row.sum();
            Zip::from(&mut row).and(&prow).for_each(|g, &pv| *g -= pv * dot);
        }
        ds.mapv_inplace(|v| v * scale);
        let mut dqh = ds.dot(&cache.k.slice(cols));
        dk.slice_mut(cols).assign(&ds.t().dot(&qh));
        if let Some(w) = &cache.window {
            let drel = unskew(ds.view());
            dqh += &drel.dot(w);
            dwindow += &drel.t().dot(&qh);
        }
        dq.slice_mut(cols).assign(&dqh);
    }
    if cache.window.is_some() {
        for (m, row) in dwindow.rows().into_iter().enumerate() {
            let idx = relative_index(l - 1, m, config.max_rel_dist);
            let mut target = grad.rel.row_mut(idx);
            target += &row;
        }
    }
    grad.w_q += &cache.input.t().dot(&dq);
    grad.w_k += &cache.input.t().dot(&dk);
    grad.w_v += &cache.input.t().dot(&dv);
    dq.dot(&p.w_q.t()) + dk.dot(&p.w_k.t()) + dv.dot(&p.w_v.t())
}
