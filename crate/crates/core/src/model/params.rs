use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::PyFormerConfig;
use crate::error::{shape_err, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Projections and feed-forward weights of one encoder layer.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayerParams<T> {
    pub wq: T,
    pub bq: T,
    pub wk: T,
    pub wv: T,
    pub bv: T,
    pub wo: T,
    pub bo: T,
    pub ff1_w: T,
    pub ff1_b: T,
    pub ff2_w: T,
    pub ff2_b: T,
}

/// Conv block, positional embedding and encoder stack of one pyramid level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelParams<T> {
    pub conv1_w: T,
    pub conv1_b: T,
    pub conv2_w: T,
    pub conv2_b: T,
    pub res_w: T,
    pub res_b: T,
    pub pos: T,
    pub layers: Vec<EncoderLayerParams<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<T> {
    /// `[feature_len, num_classes]`
    pub w: T,
    pub b: T,
}

/// Every learnable tensor of the network. `T` is [`Tensor`] for stored
/// weights and [`Var`] once they are bound onto a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub levels: Vec<LevelParams<T>>,
    pub head: HeadParams<T>,
}

pub type PyFormerParams = ModelParams<Tensor>;
pub type BoundParams = ModelParams<Var>;

impl<T> EncoderLayerParams<T> {
    fn fields(&self) -> [(&'static str, &T); 11] {
        [
            ("attn.wq", &self.wq),
            ("attn.bq", &self.bq),
            ("attn.wk", &self.wk),
            ("attn.wv", &self.wv),
            ("attn.bv", &self.bv),
            ("attn.wo", &self.wo),
            ("attn.bo", &self.bo),
            ("ff1.weight", &self.ff1_w),
            ("ff1.bias", &self.ff1_b),
            ("ff2.weight", &self.ff2_w),
            ("ff2.bias", &self.ff2_b),
        ]
    }

    fn fields_mut(&mut self) -> [&mut T; 11] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ff1_w,
            &mut self.ff1_b,
            &mut self.ff2_w,
            &mut self.ff2_b,
        ]
    }
}

impl<T> ModelParams<T> {
    /// Named tensors in canonical order; checkpoints, the optimizer and the
    /// gradient checker all rely on this order.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        for (l, lv) in self.levels.iter().enumerate() {
            let p = format!("level{l}");
            out.push((format!("{p}.conv1.weight"), &lv.conv1_w));
            out.push((format!("{p}.conv1.bias"), &lv.conv1_b));
            out.push((format!("{p}.conv2.weight"), &lv.conv2_w));
            out.push((format!("{p}.conv2.bias"), &lv.conv2_b));
            out.push((format!("{p}.residual.weight"), &lv.res_w));
            out.push((format!("{p}.residual.bias"), &lv.res_b));
            out.push((format!("{p}.positional"), &lv.pos));
            for (i, layer) in lv.layers.iter().enumerate() {
                for (name, t) in layer.fields() {
                    out.push((format!("{p}.layer{i}.{name}"), t));
                }
            }
        }
        out.push(("head.weight".to_string(), &self.head.w));
        out.push(("head.bias".to_string(), &self.head.b));
        out
    }

    pub fn values_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        for lv in &mut self.levels {
            out.push(&mut lv.conv1_w);
            out.push(&mut lv.conv1_b);
            out.push(&mut lv.conv2_w);
            out.push(&mut lv.conv2_b);
            out.push(&mut lv.res_w);
            out.push(&mut lv.res_b);
            out.push(&mut lv.pos);
            for layer in &mut lv.layers {
                out.extend(layer.fields_mut());
            }
        }
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        out
    }

    pub fn len(&self) -> usize {
        self.named().len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Applies `f` to every tensor in canonical order.
    pub fn try_map<U, E>(&self, mut f: impl FnMut(&T) -> std::result::Result<U, E>) -> std::result::Result<ModelParams<U>, E> {
        let mut levels = Vec::with_capacity(self.levels.len());
        for lv in &self.levels {
            let conv1_w = f(&lv.conv1_w)?;
            let conv1_b = f(&lv.conv1_b)?;
            let conv2_w = f(&lv.conv2_w)?;
            let conv2_b = f(&lv.conv2_b)?;
            let res_w = f(&lv.res_w)?;
            let res_b = f(&lv.res_b)?;
            let pos = f(&lv.pos)?;
            let mut layers = Vec::with_capacity(lv.layers.len());
            for l in &lv.layers {
                layers.push(EncoderLayerParams {
                    wq: f(&l.wq)?,
                    bq: f(&l.bq)?,
                    wk: f(&l.wk)?,
                    wv: f(&l.wv)?,
                    bv: f(&l.bv)?,
                    wo: f(&l.wo)?,
                    bo: f(&l.bo)?,
                    ff1_w: f(&l.ff1_w)?,
                    ff1_b: f(&l.ff1_b)?,
                    ff2_w: f(&l.ff2_w)?,
                    ff2_b: f(&l.ff2_b)?,
                });
            }
            levels.push(LevelParams { conv1_w, conv1_b, conv2_w, conv2_b, res_w, res_b, pos, layers });
        }
        let head = HeadParams { w: f(&self.head.w)?, b: f(&self.head.b)? };
        Ok(ModelParams { levels, head })
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> ModelParams<U> {
        self.try_map(|t| Ok::<U, std::convert::Infallible>(f(t))).unwrap_or_else(|e| match e {})
    }
}

impl PyFormerParams {
    /// Seeded initialization: fan-in scaled uniform weights, zero biases,
    /// N(0, 0.02) positional embeddings.
    pub fn init(cfg: &PyFormerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos_dist = Normal::new(0.0, 0.02).expect("valid std");
        let uniform = |dims: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng| -> Result<Tensor> {
            let bound = (6.0 / fan_in as f64).sqrt();
            Tensor::from_fn(dims, |_| rng.gen_range(-bound..bound))
        };
        let xavier = |dims: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| -> Result<Tensor> {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            Tensor::from_fn(dims, |_| rng.gen_range(-bound..bound))
        };
        let (d, c1, ff) = (cfg.d_model, cfg.conv1_channels, cfg.ff_hidden);
        let mut levels = Vec::with_capacity(cfg.num_levels);
        for level in 0..cfg.num_levels {
            let s = cfg.level_side(level);
            let n = cfg.level_tokens(level);
            let conv1_w = uniform(vec![c1, 1, 1, s, s], s * s, &mut rng)?;
            let conv2_w = uniform(vec![d, c1, 1, 1, 1], c1, &mut rng)?;
            let res_w = uniform(vec![d, c1, 1, 1, 1], c1, &mut rng)?;
            let pos = Tensor::from_fn(vec![n, d], |_| pos_dist.sample(&mut rng))?;
            let mut layers = Vec::with_capacity(cfg.num_layers);
            for _ in 0..cfg.num_layers {
                layers.push(EncoderLayerParams {
                    wq: xavier(vec![d, d], d, d, &mut rng)?,
                    bq: Tensor::zeros(vec![d])?,
                    wk: xavier(vec![d, d], d, d, &mut rng)?,
                    wv: xavier(vec![d, d], d, d, &mut rng)?,
                    bv: Tensor::zeros(vec![d])?,
                    wo: xavier(vec![d, d], d, d, &mut rng)?,
                    bo: Tensor::zeros(vec![d])?,
                    ff1_w: uniform(vec![d, ff], d, &mut rng)?,
                    ff1_b: Tensor::zeros(vec![ff])?,
                    ff2_w: uniform(vec![ff, d], ff, &mut rng)?,
                    ff2_b: Tensor::zeros(vec![d])?,
                });
            }
            levels.push(LevelParams {
                conv1_w,
                conv1_b: Tensor::zeros(vec![c1])?,
                conv2_w,
                conv2_b: Tensor::zeros(vec![d])?,
                res_w,
                res_b: Tensor::zeros(vec![d])?,
                pos,
                layers,
            });
        }
        let f = cfg.feature_len();
        let head = HeadParams {
            w: Tensor::zeros(vec![f, cfg.num_classes])?,
            b: Tensor::zeros(vec![cfg.num_classes])?,
        };
        Ok(ModelParams { levels, head })
    }

    /// Total number of learnable scalars.
    pub fn count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Checks every tensor against the shapes `cfg` implies.
    pub fn check_shapes(&self, cfg: &PyFormerConfig) -> Result<()> {
        let reference = PyFormerParams::init(cfg, 0)?;
        let ours = self.named();
        let want = reference.named();
        if ours.len() != want.len() {
            return Err(shape_err!("{} parameter tensors, config implies {}", ours.len(), want.len()));
        }
        for ((name, t), (_, w)) in ours.iter().zip(&want) {
            if t.shape() != w.shape() {
                return Err(shape_err!("{name} has shape {}, config implies {}", t.shape(), w.shape()));
            }
        }
        Ok(())
    }

    /// Registers every tensor on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        self.map(|t| tape.param(t.clone()))
    }

    /// Registers every tensor as a constant (no gradients recorded).
    pub fn bind_constant(&self, tape: &mut Tape) -> BoundParams {
        self.map(|t| tape.constant(t.clone()))
    }
}
