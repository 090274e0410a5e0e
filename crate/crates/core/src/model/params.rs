use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, Real};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
}

/// Projections are `d_model × d_model`, applied as `X·W`; head `i` owns
/// columns `i·D .. (i+1)·D`. `rel` has `2·max_rel_dist + 1` rows of width `D`
/// (row `max_rel_dist + r` is distance `r`), shared by all heads.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    pub w_q: Array2<T>,
    pub w_k: Array2<T>,
    pub w_v: Array2<T>,
    pub w_o: Array2<T>,
    pub rel: Array2<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForwardParams<T> {
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Array2<T>,
    pub b2: Array1<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    pub attn_norm: LayerNormParams<T>,
    pub attn: AttentionParams<T>,
    pub ff_norm: LayerNormParams<T>,
    pub ff: FeedForwardParams<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub embedding: Array2<T>,
    pub layers: Vec<LayerParams<T>>,
    pub final_norm: LayerNormParams<T>,
    pub head_w: Array2<T>,
    pub head_b: Array1<T>,
}

impl<T: Real> LayerNormParams<T> {
    fn identity(d: usize) -> Self {
        LayerNormParams {
            gamma: Array1::ones(d),
            beta: Array1::zeros(d),
        }
    }
}

impl<T: Real> ModelParams<T> {
    /// All-zero tensors with the shapes of `config`, used for gradients and
    /// optimizer moments.
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let layer = LayerParams {
            attn_norm: LayerNormParams {
                gamma: Array1::zeros(d),
                beta: Array1::zeros(d),
            },
            attn: AttentionParams {
                w_q: Array2::zeros((d, d)),
                w_k: Array2::zeros((d, d)),
                w_v: Array2::zeros((d, d)),
                w_o: Array2::zeros((d, d)),
                rel: Array2::zeros((config.rel_rows(), config.head_dim())),
            },
            ff_norm: LayerNormParams {
                gamma: Array1::zeros(d),
                beta: Array1::zeros(d),
            },
            ff: FeedForwardParams {
                w1: Array2::zeros((d, config.d_ff)),
                b1: Array1::zeros(config.d_ff),
                w2: Array2::zeros((config.d_ff, d)),
                b2: Array1::zeros(d),
            },
        };
        ModelParams {
            embedding: Array2::zeros((config.vocab_size, d)),
            layers: vec![layer; config.num_layers],
            final_norm: LayerNormParams {
                gamma: Array1::zeros(d),
                beta: Array1::zeros(d),
            },
            head_w: Array2::zeros((d, config.vocab_size)),
            head_b: Array1::zeros(config.vocab_size),
        }
    }

    /// Every tensor with a stable dotted name, in checkpoint order.
    pub fn named_tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = vec![("embedding".to_string(), self.embedding.view().into_dyn())];
        for (i, l) in self.layers.iter().enumerate() {
            let p = |n: &str| format!("layers.{i}.{n}");
            out.push((p("attn_norm.gamma"), l.attn_norm.gamma.view().into_dyn()));
            out.push((p("attn_norm.beta"), l.attn_norm.beta.view().into_dyn()));
            out.push((p("attn.w_q"), l.attn.w_q.view().into_dyn()));
            out.push((p("attn.w_k"), l.attn.w_k.view().into_dyn()));
            out.push((p("attn.w_v"), l.attn.w_v.view().into_dyn()));
            out.push((p("attn.w_o"), l.attn.w_o.view().into_dyn()));
            out.push((p("attn.rel"), l.attn.rel.view().into_dyn()));
            out.push((p("ff_norm.gamma"), l.ff_norm.gamma.view().into_dyn()));
            out.push((p("ff_norm.beta"), l.ff_norm.beta.view().into_dyn()));
            out.push((p("ff.w1"), l.ff.w1.view().into_dyn()));
            out.push((p("ff.b1"), l.ff.b1.view().into_dyn()));
            out.push((p("ff.w2"), l.ff.w2.view().into_dyn()));
            out.push((p("ff.b2"), l.ff.b2.view().into_dyn()));
        }
        out.push(("final_norm.gamma".into(), self.final_norm.gamma.view().into_dyn()));
        out.push(("final_norm.beta".into(), self.final_norm.beta.view().into_dyn()));
        out.push(("head.w".into(), self.head_w.view().into_dyn()));
        out.push(("head.b".into(), self.head_b.view().into_dyn()));
        out
    }

    /// Mutable counterpart of [`named_tensors`](Self::named_tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, T>> {
        let mut out = vec![self.embedding.view_mut().into_dyn()];
        for l in self.layers.iter_mut() {
            out.push(l.attn_norm.gamma.view_mut().into_dyn());
            out.push(l.attn_norm.beta.view_mut().into_dyn());
            out.push(l.attn.w_q.view_mut().into_dyn());
            out.push(l.attn.w_k.view_mut().into_dyn());
            out.push(l.attn.w_v.view_mut().into_dyn());
            out.push(l.attn.w_o.view_mut().into_dyn());
            out.push(l.attn.rel.view_mut().into_dyn());
            out.push(l.ff_norm.gamma.view_mut().into_dyn());
            out.push(l.ff_norm.beta.view_mut().into_dyn());
            out.push(l.ff.w1.view_mut().into_dyn());
            out.push(l.ff.b1.view_mut().into_dyn());
            out.push(l.ff.w2.view_mut().into_dyn());
            out.push(l.ff.b2.view_mut().into_dyn());
        }
        out.push(self.final_norm.gamma.view_mut().into_dyn());
        out.push(self.final_norm.beta.view_mut().into_dyn());
        out.push(self.head_w.view_mut().into_dyn());
        out.push(self.head_b.view_mut().into_dyn());
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// `self += other * scale`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams<T>, scale: T) {
        let src = other.named_tensors();
        for (mut dst, (_, s)) in self.tensors_mut().into_iter().zip(src) {
            Zip::from(&mut dst).and(&s).for_each(|d, &v| *d += v * scale);
        }
    }

    pub fn scale(&mut self, factor: T) {
        for mut t in self.tensors_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }

    pub fn sum_squares(&self) -> T {
        self.named_tensors()
            .iter()
            .map(|(_, t)| t.iter().map(|&v| v * v).sum::<T>())
            .sum()
    }

    /// Zeroes every relative-position table.
    pub fn clear_relative(&mut self) {
        for l in &mut self.layers {
            l.attn.rel.fill(T::zero());
        }
    }

    /// Element-type conversion (e.g. `f32` weights to `f64` for checking).
    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let c = |a: &Array2<T>| a.mapv(|v| U::of(v.to_f64().expect("finite")));
        let c1 = |a: &Array1<T>| a.mapv(|v| U::of(v.to_f64().expect("finite")));
        let ln = |p: &LayerNormParams<T>| LayerNormParams {
            gamma: c1(&p.gamma),
            beta: c1(&p.beta),
        };
        ModelParams {
            embedding: c(&self.embedding),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    attn_norm: ln(&l.attn_norm),
                    attn: AttentionParams {
                        w_q: c(&l.attn.w_q),
                        w_k: c(&l.attn.w_k),
                        w_v: c(&l.attn.w_v),
                        w_o: c(&l.attn.w_o),
                        rel: c(&l.attn.rel),
                    },
                    ff_norm: ln(&l.ff_norm),
                    ff: FeedForwardParams {
                        w1: c(&l.ff.w1),
                        b1: c1(&l.ff.b1),
                        w2: c(&l.ff.w2),
                        b2: c1(&l.ff.b2),
                    },
                })
                .collect(),
            final_norm: ln(&self.final_norm),
            head_w: c(&self.head_w),
            head_b: c1(&self.head_b),
        }
    }

    /// Rebuilds parameters from `(name, shape, values)` triples; every tensor
    /// of `config` must be present with a matching shape.
    pub fn from_named(
        config: &ModelConfig,
        tensors: &std::collections::HashMap<String, (Vec<usize>, Vec<T>)>,
    ) -> Result<Self> {
        let mut params = ModelParams::zeros(config);
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        for (name, mut dst) in names.into_iter().zip(params.tensors_mut()) {
            let (shape, values) = tensors
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if shape.as_slice() != dst.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {shape:?}, expected {:?}",
                    dst.shape()
                )));
            }
            for (d, &v) in dst.iter_mut().zip(values) {
                *d = v;
            }
        }
        Ok(params)
    }
}

fn glorot<T: Real>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<T> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || T::of(rng.gen_range(-bound..bound)))
}

/// Glorot-uniform weight matrices, zero biases and relative tables, unit
/// layer-norm gains. Deterministic in `config.seed`.
pub fn init_params<T: Real>(config: &ModelConfig) -> Result<ModelParams<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.d_model;
    let embedding = glorot(config.vocab_size, d, &mut rng);
    let layers = (0..config.num_layers)
        .map(|_| LayerParams {
            attn_norm: LayerNormParams::identity(d),
            attn: AttentionParams {
                w_q: glorot(d, d, &mut rng),
                w_k: glorot(d, d, &mut rng),
                w_v: glorot(d, d, &mut rng),
                w_o: glorot(d, d, &mut rng),
                rel: Array2::zeros((config.rel_rows(), config.head_dim())),
            },
            ff_norm: LayerNormParams::identity(d),
            ff: FeedForwardParams {
                w1: glorot(d, config.d_ff, &mut rng),
                b1: Array1::zeros(config.d_ff),
                w2: glorot(config.d_ff, d, &mut rng),
                b2: Array1::zeros(d),
            },
        })
        .collect();
    let head_w = glorot(d, config.vocab_size, &mut rng);
    Ok(ModelParams {
        embedding,
        layers,
        final_norm: LayerNormParams::identity(d),
        head_w,
        head_b: Array1::zeros(config.vocab_size),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            d_model: 64,
            num_heads: 4,
            num_layers: 2,
            d_ff: 256,
            max_len: 320,
            max_rel_dist: 32,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a: ModelParams<f32> = init_params(&small()).unwrap();
        let b: ModelParams<f32> = init_params(&small()).unwrap();
        assert_eq!(a, b);
        let c: ModelParams<f32> = init_params(&ModelConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn parameter_count_matches_shape_arithmetic() {
        // Closed form, written out independently of the tensor listing.
        let (v, d, h, layers, ff, m) = (178usize, 64usize, 4usize, 2usize, 256usize, 32usize);
        let per_layer = 4 * d * d + (2 * m + 1) * (d / h) + (d * ff + ff + ff * d + d) + 4 * d;
        let expected = v * d + layers * per_layer + 2 * d + d * v + v;
        assert_eq!(expected, 124_626);
        let p: ModelParams<f64> = init_params(&small()).unwrap();
        assert_eq!(p.num_params(), expected);
    }

    #[test]
    fn init_ranges() {
        let cfg = small();
        let p: ModelParams<f64> = init_params(&cfg).unwrap();
        let bound = (6.0 / (64.0 + 64.0f64)).sqrt();
        assert!(p.layers[0].attn.w_q.iter().all(|v| v.abs() <= bound));
        assert!(p.layers.iter().all(|l| l.attn.rel.iter().all(|&v| v == 0.0)));
        assert!(p.layers.iter().all(|l| l.ff.b1.iter().all(|&v| v == 0.0)));
        assert!(p.head_b.iter().all(|&v| v == 0.0));
        assert!(p.is_finite());
    }

    #[test]
    fn named_and_mut_views_align() {
        let mut p: ModelParams<f32> = init_params(&small()).unwrap();
        let shapes: Vec<Vec<usize>> = p.named_tensors().iter().map(|(_, t)| t.shape().to_vec()).collect();
        let mut_shapes: Vec<Vec<usize>> = p.tensors_mut().iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, mut_shapes);
        let names: std::collections::HashSet<String> =
            p.named_tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), shapes.len());
    }
}
