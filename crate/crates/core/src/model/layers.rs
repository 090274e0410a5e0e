use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use super::{FeedForwardParams, LayerNormParams, Real};

pub const LN_EPS: f64 = 1e-5;

/// Sinusoidal position table: `sin(pos / 10000^(2i/d))` on even columns and
/// the matching cosine on odd columns.
pub fn sinusoidal_encoding<T: Real>(len: usize, d_model: usize) -> Array2<T> {
    Array2::from_shape_fn((len, d_model), |(pos, c)| {
        let i = (c / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * i / d_model as f64);
        T::of(if c % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

pub(crate) struct LayerNormCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

pub fn layer_norm<T: Real>(x: ArrayView2<T>, p: &LayerNormParams<T>) -> Array2<T> {
    layer_norm_cached(x, p).0
}

pub(crate) fn layer_norm_cached<T: Real>(
    x: ArrayView2<T>,
    p: &LayerNormParams<T>,
) -> (Array2<T>, LayerNormCache<T>) {
    let d = T::of(x.ncols() as f64);
    let eps = T::of(LN_EPS);
    let mut xhat = x.to_owned();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<T>() / d;
        *s = T::one() / (var + eps).sqrt();
        let inv = *s;
        row.mapv_inplace(|v| v * inv);
    }
    let out = &xhat * &p.gamma + &p.beta;
    (out, LayerNormCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward<T: Real>(
    dy: ArrayView2<T>,
    cache: &LayerNormCache<T>,
    p: &LayerNormParams<T>,
    grad: &mut LayerNormParams<T>,
) -> Array2<T> {
    grad.gamma += &(&dy * &cache.xhat).sum_axis(Axis(0));
    grad.beta += &dy.sum_axis(Axis(0));
    let d = T::of(dy.ncols() as f64);
    let dxhat = &dy * &p.gamma;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (((mut out, g), xh), &inv) in dx
        .rows_mut()
        .into_iter()
        .zip(dxhat.rows())
        .zip(cache.xhat.rows())
        .zip(cache.inv_std.iter())
    {
        let mean_g = g.sum() / d;
        let mean_gx = g.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>() / d;
        Zip::from(&mut out)
            .and(&g)
            .and(&xh)
            .for_each(|o, &gi, &xi| *o = inv * (gi - mean_g - xi * mean_gx));
    }
    dx
}

/// `ReLU(Z·W1 + b1)·W2 + b2`, row by row.
pub fn feed_forward<T: Real>(z: ArrayView2<T>, p: &FeedForwardParams<T>) -> Array2<T> {
    feed_forward_cached(z, p).0
}

pub(crate) struct FeedForwardCache<T> {
    input: Array2<T>,
    hidden: Array2<T>,
}

pub(crate) fn feed_forward_cached<T: Real>(
    z: ArrayView2<T>,
    p: &FeedForwardParams<T>,
) -> (Array2<T>, FeedForwardCache<T>) {
    let mut hidden = z.dot(&p.w1) + &p.b1;
    hidden.mapv_inplace(|v| v.max(T::zero()));
    let out = hidden.dot(&p.w2) + &p.b2;
    (
        out,
        FeedForwardCache {
            input: z.to_owned(),
            hidden,
        },
    )
}

pub(crate) fn feed_forward_backward<T: Real>(
    dout: ArrayView2<T>,
    cache: &FeedForwardCache<T>,
    p: &FeedForwardParams<T>,
    grad: &mut FeedForwardParams<T>,
) -> Array2<T> {
    grad.w2 += &cache.hidden.t().dot(&dout);
    grad.b2 += &dout.sum_axis(Axis(0));
    let mut dh = dout.dot(&p.w2.t());
    Zip::from(&mut dh)
        .and(&cache.hidden)
        .for_each(|g, &h| {
            if h <= T::zero() {
                *g = T::zero();
            }
        });
    grad.w1 += &cache.input.t().dot(&dh);
    grad.b1 += &dh.sum_axis(Axis(0));
    dh.dot(&p.w1.t())
}
