//! Finite-difference check of the full training loss, one parameter tensor
//! at a time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::trainer::loss_on_tape;
use crate::error::{invalid, Result};
use crate::model::{forward, PyFormerConfig, PyFormerParams};
use crate::tensor::{grad_check_coords, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub name: String,
    pub numel: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Small network used for exhaustive gradient checks.
pub fn gradcheck_config() -> PyFormerConfig {
    PyFormerConfig {
        patch_size: 4,
        b_star: 4,
        num_levels: 1,
        num_layers: 1,
        num_heads: 2,
        d_model: 8,
        ff_hidden: 16,
        conv1_channels: 32,
        lambda: 0.01,
        num_classes: 3,
        use_layernorm: false,
    }
}

/// Initial weights with a random (instead of zero) head, so every group
/// receives a nonzero gradient, and small random biases, so no ReLU input
/// sits exactly on the kink.
pub fn gradcheck_params(cfg: &PyFormerConfig, seed: u64) -> Result<PyFormerParams> {
    let mut params = PyFormerParams::init(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let (f, k) = (cfg.feature_len(), cfg.num_classes);
    let bound = (6.0 / (f + k) as f64).sqrt();
    params.head.w = Tensor::from_fn(vec![f, k], |_| rng.gen_range(-bound..bound))?;
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    for (name, t) in names.iter().zip(params.values_mut()) {
        if name.ends_with("bias") || name.contains(".attn.b") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
        }
    }
    Ok(params)
}

/// Random patches and 1-based targets for `cfg`.
pub fn gradcheck_batch(cfg: &PyFormerConfig, batch: usize, seed: u64) -> Result<(Vec<Tensor>, Vec<u16>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = cfg.patch_size;
    let patches = (0..batch)
        .map(|_| Tensor::from_fn(vec![s, s, cfg.b_star], |_| rng.gen_range(-1.0..1.0)))
        .collect::<Result<Vec<_>>>()?;
    let targets = (0..batch).map(|i| (i % cfg.num_classes) as u16 + 1).collect();
    Ok((patches, targets))
}

/// Evenly strided coordinates, all of them when `limit` covers the tensor.
fn pick_coords(numel: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(m) if m < numel => (0..m).map(|i| i * numel / m).collect(),
        _ => (0..numel).collect(),
    }
}

/// Checks the batch loss gradient with respect to every parameter tensor,
/// in canonical order. `limit` caps the coordinates probed per tensor.
pub fn check_model_gradients(
    cfg: &PyFormerConfig,
    params: &PyFormerParams,
    patches: &[Tensor],
    targets: &[u16],
    eps: f64,
    limit: Option<usize>,
) -> Result<Vec<GroupCheck>> {
    if !(eps > 0.0) {
        return Err(invalid!("finite-difference step must be positive, got {eps}"));
    }
    params.check_shapes(cfg)?;
    let refs: Vec<&Tensor> = patches.iter().collect();
    let named = params.named();
    let mut out = Vec::with_capacity(named.len());
    for (idx, (name, value)) in named.iter().enumerate() {
        let f = |tape: &mut Tape, x| {
            let mut i = 0;
            let bound = params.map(|t| {
                let v = if i == idx { x } else { tape.constant(t.clone()) };
                i += 1;
                v
            });
            let (probs, penalty) = forward(tape, cfg, &bound, &refs)?;
            loss_on_tape(tape, probs, targets, penalty)
        };
        let coords = pick_coords(value.numel(), limit);
        let r = grad_check_coords(f, value, eps, &coords)?;
        out.push(GroupCheck {
            name: name.clone(),
            numel: value.numel(),
            checked: r.checked,
            max_rel_error: r.max_rel_error,
            worst_index: r.worst_index,
            analytic: r.analytic,
            numeric: r.numeric,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinate_picks_are_distinct_and_bounded() {
        let c = pick_coords(10, Some(4));
        assert_eq!(c, vec![0, 2, 5, 7]);
        assert_eq!(pick_coords(3, Some(8)), vec![0, 1, 2]);
    }

    #[test]
    fn each_group_reported_once() {
        let cfg = gradcheck_config();
        let params = gradcheck_params(&cfg, 1).unwrap();
        let (x, y) = gradcheck_batch(&cfg, 2, 1).unwrap();
        let groups = check_model_gradients(&cfg, &params, &x, &y, 1e-4, Some(3)).unwrap();
        let names: Vec<_> = groups.iter().map(|g| g.name.clone()).collect();
        let want: Vec<_> = params.named().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, want);
    }
}
