//! The PyFormer forward pass, one building block per function so each can be
//! checked on its own.

use super::params::{BoundParams, EncoderLayerParams, HeadParams, LevelParams, PyFormerParams};
use super::PyFormerConfig;
use crate::error::{invalid, shape_err, Result};
use crate::tensor::{kernels, Tape, Tensor, Var};

/// Token matrix produced by one pyramid level.
#[derive(Clone, Copy, Debug)]
pub struct TokenSequence {
    /// `[tokens, d_model]`
    pub tokens: Var,
    pub level: usize,
}

/// Down-scales an `[S, S, B*]` patch by 2^level on all three axes.
pub fn pyramid_level_input(patch: &Tensor, level: usize) -> Result<Tensor> {
    let [s0, s1, b] = match *patch.dims() {
        [a, c, b] => [a, c, b],
        _ => return Err(shape_err!("patch must be [S, S, B*], got {}", patch.shape())),
    };
    if level == 0 {
        return Ok(patch.clone());
    }
    let f = 1usize.checked_shl(level as u32).ok_or_else(|| invalid!("level {level} too deep"))?;
    if s0 % f != 0 || s1 % f != 0 || b % f != 0 {
        return Err(invalid!("patch {} is not divisible by scale {f} at level {level}", patch.shape()));
    }
    let pooled = kernels::avg_pool3d(&patch.reshape(vec![1, s0, s1, b])?, f)?;
    pooled.reshape(vec![s0 / f, s1 / f, b / f])
}

/// `[S, S, B*]` patch to the `[1, B*, S, S]` channel-first layout the
/// convolutions read (spectral axis as depth).
pub fn to_model_layout(patch: &Tensor) -> Result<Tensor> {
    let [s0, s1, b] = match *patch.dims() {
        [a, c, b] => [a, c, b],
        _ => return Err(shape_err!("patch must be [S, S, B*], got {}", patch.shape())),
    };
    patch.permute(&[2, 0, 1])?.reshape(vec![1, b, s0, s1])
}

/// Level input on the tape: average pooling of a `[1, B*, S, S]` patch.
pub fn level_input(tape: &mut Tape, patch: Var, level: usize) -> Result<Var> {
    if level == 0 {
        return Ok(patch);
    }
    tape.avg_pool3d(patch, 1 << level)
}

/// Spectral-position tokens from a `[1, B*_l, S_l, S_l]` level input.
///
/// conv1 spans the full spatial window with spectral extent 1, collapsing
/// space; conv2 and the residual projection are pointwise.
pub fn conv_block(tape: &mut Tape, input: Var, lp: &LevelParams<Var>) -> Result<Var> {
    let w1 = tape.value(lp.conv1_w).dims().to_vec();
    let x = tape.value(input).dims().to_vec();
    let [_, _, _, kh, kw] = w1[..] else {
        return Err(shape_err!("conv1 weights must be rank 5, got {:?}", w1));
    };
    if x.len() != 4 || x[0] != 1 || x[2] != kh || x[3] != kw {
        return Err(shape_err!("level input {:?} does not match conv1 kernel {:?}", x, w1));
    }
    let tokens = x[1];
    let c1 = tape.conv3d(input, lp.conv1_w, lp.conv1_b, [0; 3])?;
    let a1 = tape.relu(c1);
    let c2 = tape.conv3d(a1, lp.conv2_w, lp.conv2_b, [0; 3])?;
    let res = tape.conv3d(a1, lp.res_w, lp.res_b, [0; 3])?;
    let merged = tape.add(c2, res)?;
    let act = tape.relu(merged);
    let channels = tape.value(act).dims()[0];
    let flat = tape.reshape(act, vec![channels, tokens])?;
    tape.transpose(flat)
}

pub fn add_positional(tape: &mut Tape, tokens: Var, pos: Var) -> Result<Var> {
    if tape.value(tokens).shape() != tape.value(pos).shape() {
        return Err(shape_err!(
            "positional embedding {} does not match tokens {}",
            tape.value(pos).shape(),
            tape.value(tokens).shape()
        ));
    }
    tape.add(tokens, pos)
}

fn dense(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row_bias(y, b)
}

/// Multi-head scaled dot-product self-attention. Also returns the per-head
/// `[N, N]` attention weights.
pub fn attention_with_weights(
    tape: &mut Tape,
    h: Var,
    layer: &EncoderLayerParams<Var>,
    num_heads: usize,
) -> Result<(Var, Vec<Var>)> {
    let d = match *tape.value(h).dims() {
        [_, d] => d,
        _ => return Err(shape_err!("attention input must be [N, d_model], got {}", tape.value(h).shape())),
    };
    if num_heads == 0 || d % num_heads != 0 {
        return Err(invalid!("d_model {d} is not divisible by {num_heads} heads"));
    }
    let dh = d / num_heads;
    let q = dense(tape, h, layer.wq, layer.bq)?;
    // no key bias: it would shift every score of a query equally
    let k = tape.matmul(h, layer.wk)?;
    let v = dense(tape, h, layer.wv, layer.bv)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(num_heads);
    let mut weights = Vec::with_capacity(num_heads);
    for i in 0..num_heads {
        let qh = tape.slice(q, 1, i * dh, dh)?;
        let kh = tape.slice(k, 1, i * dh, dh)?;
        let vh = tape.slice(v, 1, i * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let a = tape.softmax(scores, 1)?;
        heads.push(tape.matmul(a, vh)?);
        weights.push(a);
    }
    let joined = tape.concat(&heads, 1)?;
    Ok((dense(tape, joined, layer.wo, layer.bo)?, weights))
}

pub fn attention(tape: &mut Tape, h: Var, layer: &EncoderLayerParams<Var>, num_heads: usize) -> Result<Var> {
    Ok(attention_with_weights(tape, h, layer, num_heads)?.0)
}

/// Pointwise two-layer feed-forward over the token axis.
pub fn feed_forward(tape: &mut Tape, x: Var, layer: &EncoderLayerParams<Var>) -> Result<Var> {
    let hidden = dense(tape, x, layer.ff1_w, layer.ff1_b)?;
    let hidden = tape.relu(hidden);
    dense(tape, hidden, layer.ff2_w, layer.ff2_b)
}

/// `H_prev + FF(Attention(H_prev))`, with optional pre-normalization of
/// each sublayer input.
pub fn encoder_layer(tape: &mut Tape, h_prev: Var, layer: &EncoderLayerParams<Var>, cfg: &PyFormerConfig) -> Result<Var> {
    let att_in = if cfg.use_layernorm { tape.layer_norm_rows(h_prev)? } else { h_prev };
    let att = attention(tape, att_in, layer, cfg.num_heads)?;
    let ff_in = if cfg.use_layernorm { tape.layer_norm_rows(att)? } else { att };
    let ff = feed_forward(tape, ff_in, layer)?;
    tape.add(h_prev, ff)
}

/// Row-major flatten of each level's tokens, concatenated in the given order.
pub fn integrate_levels(tape: &mut Tape, seqs: &[TokenSequence], cfg: &PyFormerConfig) -> Result<Var> {
    if seqs.len() != cfg.num_levels {
        return Err(invalid!("{} token sequences for {} pyramid levels", seqs.len(), cfg.num_levels));
    }
    let mut seen = vec![false; cfg.num_levels];
    let mut flat = Vec::with_capacity(seqs.len());
    for s in seqs {
        if s.level >= cfg.num_levels || std::mem::replace(&mut seen[s.level], true) {
            return Err(invalid!("level {} missing or repeated", s.level));
        }
        let want = [cfg.level_tokens(s.level), cfg.d_model];
        if tape.value(s.tokens).dims() != want {
            return Err(shape_err!(
                "level {} tokens {} should be {:?}",
                s.level,
                tape.value(s.tokens).shape(),
                want
            ));
        }
        flat.push(tape.flatten(s.tokens)?);
    }
    tape.concat(&flat, 0)
}

/// `softmax(relu(features) W + b)` as a `[1, K]` row, and the penalty
/// `lambda * sum(W^2)`.
pub fn classify_head(tape: &mut Tape, features: Var, head: &HeadParams<Var>, lambda: f64) -> Result<(Var, Var)> {
    let f = tape.value(features).numel();
    let rows = tape.value(head.w).dims()[0];
    if f != rows {
        return Err(shape_err!("{f} features for a head expecting {rows}"));
    }
    let act = tape.relu(features);
    let row = tape.reshape(act, vec![1, f])?;
    let logits = dense(tape, row, head.w, head.b)?;
    let probs = tape.softmax(logits, 1)?;
    let sq = tape.sum_squares(head.w);
    let penalty = tape.scale(sq, lambda);
    Ok((probs, penalty))
}

/// Level sequences after positional encoding and the encoder stack.
pub fn encode_levels(tape: &mut Tape, cfg: &PyFormerConfig, params: &BoundParams, patch: &Tensor) -> Result<Vec<TokenSequence>> {
    let want = [cfg.patch_size, cfg.patch_size, cfg.b_star];
    if patch.dims() != want {
        return Err(shape_err!("patch {} does not match config {:?}", patch.shape(), want));
    }
    if params.levels.len() != cfg.num_levels {
        return Err(invalid!("{} level parameter sets for {} levels", params.levels.len(), cfg.num_levels));
    }
    let x = tape.constant(to_model_layout(patch)?);
    let mut seqs = Vec::with_capacity(cfg.num_levels);
    for (level, lp) in params.levels.iter().enumerate() {
        let input = level_input(tape, x, level)?;
        let tokens = conv_block(tape, input, lp)?;
        let mut h = add_positional(tape, tokens, lp.pos)?;
        for layer in &lp.layers {
            h = encoder_layer(tape, h, layer, cfg)?;
        }
        seqs.push(TokenSequence { tokens: h, level });
    }
    Ok(seqs)
}

/// Class probabilities `[1, K]` for one patch plus the head penalty.
pub fn forward_patch(tape: &mut Tape, cfg: &PyFormerConfig, params: &BoundParams, patch: &Tensor) -> Result<(Var, Var)> {
    let seqs = encode_levels(tape, cfg, params, patch)?;
    let features = integrate_levels(tape, &seqs, cfg)?;
    classify_head(tape, features, &params.head, cfg.lambda)
}

/// Stacks per-patch probabilities into `[batch, K]`.
pub fn forward(tape: &mut Tape, cfg: &PyFormerConfig, params: &BoundParams, patches: &[&Tensor]) -> Result<(Var, Var)> {
    if patches.is_empty() {
        return Err(invalid!("forward on an empty batch"));
    }
    let mut rows = Vec::with_capacity(patches.len());
    let mut penalty = None;
    for p in patches {
        let (probs, pen) = forward_patch(tape, cfg, params, p)?;
        rows.push(probs);
        penalty.get_or_insert(pen);
    }
    Ok((tape.concat(&rows, 0)?, penalty.expect("nonempty batch")))
}

/// Inference-only probabilities for each patch.
pub fn predict_proba(cfg: &PyFormerConfig, params: &PyFormerParams, patch: &Tensor) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = params.bind_constant(&mut tape);
    let (probs, _) = forward_patch(&mut tape, cfg, &bound, patch)?;
    Ok(tape.value(probs).data().to_vec())
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}
