use proptest::prelude::*;
use pyformer::model::*;
use pyformer::train::{gradcheck_config, gradcheck_params};
use pyformer::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_t(rng: &mut ChaCha8Rng, dims: Vec<usize>) -> Tensor {
    Tensor::from_fn(dims, |_| rng.gen_range(-1.0..1.0)).unwrap()
}

fn small_cfg() -> PyFormerConfig {
    PyFormerConfig {
        patch_size: 4,
        b_star: 8,
        num_levels: 2,
        num_layers: 2,
        num_heads: 2,
        d_model: 8,
        ff_hidden: 12,
        conv1_channels: 6,
        lambda: 0.01,
        num_classes: 3,
        use_layernorm: false,
    }
}

type Mat = Vec<Vec<f64>>;

fn mat(t: &Tensor) -> Mat {
    let [r, c] = t.dims().try_into().unwrap();
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

fn dense(x: &Mat, w: &Tensor, b: &Tensor) -> Mat {
    let w = mat(w);
    x.iter()
        .map(|row| (0..w[0].len()).map(|j| b.data()[j] + (0..row.len()).map(|k| row[k] * w[k][j]).sum::<f64>()).collect())
        .collect()
}

fn softmax_row(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn layer_norm(x: &Mat) -> Mat {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            row.iter().map(|v| (v - mean) / (var + 1e-5).sqrt()).collect()
        })
        .collect()
}

fn naive_attention(h: &Mat, l: &EncoderLayerParams<Tensor>, heads: usize) -> Mat {
    let no_bias = Tensor::zeros(vec![l.wk.dims()[1]]).unwrap();
    let (q, k, v) = (dense(h, &l.wq, &l.bq), dense(h, &l.wk, &no_bias), dense(h, &l.wv, &l.bv));
    let n = h.len();
    let d = h[0].len();
    let dh = d / heads;
    let mut joined = vec![vec![0.0; d]; n];
    for hd in 0..heads {
        let cols = hd * dh..(hd + 1) * dh;
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let a = softmax_row(&scores);
            for c in cols.clone() {
                joined[i][c] = (0..n).map(|j| a[j] * v[j][c]).sum();
            }
        }
    }
    dense(&joined, &l.wo, &l.bo)
}

fn naive_layer(h: &Mat, l: &EncoderLayerParams<Tensor>, cfg: &PyFormerConfig) -> Mat {
    let att_in = if cfg.use_layernorm { layer_norm(h) } else { h.clone() };
    let att = naive_attention(&att_in, l, cfg.num_heads);
    let ff_in = if cfg.use_layernorm { layer_norm(&att) } else { att };
    let hidden: Mat = dense(&ff_in, &l.ff1_w, &l.ff1_b).into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect();
    let ff = dense(&hidden, &l.ff2_w, &l.ff2_b);
    h.iter().zip(&ff).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect()
}

/// Per-level tokens `[B*_l][d]` from a `[S, S, B*]` patch, straight from the
/// block definitions.
fn naive_tokens(patch: &Tensor, lp: &LevelParams<Tensor>, level: usize) -> Mat {
    let [s, _, b] = patch.dims().try_into().unwrap();
    let f = 1 << level;
    let (sl, bl) = (s / f, b / f);
    let px = |i: usize, j: usize, k: usize| {
        let mut acc = 0.0;
        for di in 0..f {
            for dj in 0..f {
                for dk in 0..f {
                    acc += patch.get(&[i * f + di, j * f + dj, k * f + dk]).unwrap();
                }
            }
        }
        acc / (f * f * f) as f64
    };
    let c1 = lp.conv1_w.dims()[0];
    let d = lp.conv2_w.dims()[0];
    (0..bl)
        .map(|band| {
            let a1: Vec<f64> = (0..c1)
                .map(|c| {
                    let mut acc = lp.conv1_b.data()[c];
                    for i in 0..sl {
                        for j in 0..sl {
                            acc += lp.conv1_w.get(&[c, 0, 0, i, j]).unwrap() * px(i, j, band);
                        }
                    }
                    acc.max(0.0)
                })
                .collect();
            (0..d)
                .map(|o| {
                    let mut acc = lp.conv2_b.data()[o] + lp.res_b.data()[o];
                    for c in 0..c1 {
                        acc += (lp.conv2_w.get(&[o, c, 0, 0, 0]).unwrap() + lp.res_w.get(&[o, c, 0, 0, 0]).unwrap()) * a1[c];
                    }
                    acc.max(0.0)
                })
                .collect()
        })
        .collect()
}

fn naive_forward(cfg: &PyFormerConfig, p: &PyFormerParams, patch: &Tensor) -> Vec<f64> {
    let mut features = Vec::new();
    for (level, lp) in p.levels.iter().enumerate() {
        let pos = mat(&lp.pos);
        let mut h: Mat = naive_tokens(patch, lp, level)
            .into_iter()
            .zip(&pos)
            .map(|(t, q)| t.iter().zip(q).map(|(a, b)| a + b).collect())
            .collect();
        for l in &lp.layers {
            h = naive_layer(&h, l, cfg);
        }
        features.extend(h.into_iter().flatten());
    }
    let relu: Vec<f64> = features.iter().map(|v| v.max(0.0)).collect();
    softmax_row(&dense(&vec![relu], &p.head.w, &p.head.b)[0])
}

fn random_head(cfg: &PyFormerConfig, p: &mut PyFormerParams, rng: &mut ChaCha8Rng) {
    p.head.w = rand_t(rng, vec![cfg.feature_len(), cfg.num_classes]).scale(0.3);
    p.head.b = rand_t(rng, vec![cfg.num_classes]);
}

#[test]
fn forward_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for cfg in [
        small_cfg(),
        PyFormerConfig { use_layernorm: true, ..small_cfg() },
        PyFormerConfig { num_levels: 1, num_layers: 1, ..small_cfg() },
        PyFormerConfig { patch_size: 8, b_star: 8, num_levels: 3, num_heads: 4, ..small_cfg() },
    ] {
        let mut p = PyFormerParams::init(&cfg, 3).unwrap();
        random_head(&cfg, &mut p, &mut rng);
        for _ in 0..3 {
            let patch = rand_t(&mut rng, vec![cfg.patch_size, cfg.patch_size, cfg.b_star]);
            let got = predict_proba(&cfg, &p, &patch).unwrap();
            let want = naive_forward(&cfg, &p, &patch);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{cfg:?}: {got:?} vs {want:?}");
            }
        }
    }
}

#[test]
fn single_level_equals_plain_model_on_raw_patch() {
    // one level: no pooling, the conv block reads the patch itself
    let cfg = PyFormerConfig { num_levels: 1, ..small_cfg() };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut p = PyFormerParams::init(&cfg, 5).unwrap();
    random_head(&cfg, &mut p, &mut rng);
    let patch = rand_t(&mut rng, vec![4, 4, 8]);
    assert_eq!(pyramid_level_input(&patch, 0).unwrap(), patch);
    let mut tape = Tape::new();
    let b = p.bind_constant(&mut tape);
    let x = tape.constant(to_model_layout(&patch).unwrap());
    let tokens = conv_block(&mut tape, x, &b.levels[0]).unwrap();
    let mut h = add_positional(&mut tape, tokens, b.levels[0].pos).unwrap();
    for layer in &b.levels[0].layers {
        h = encoder_layer(&mut tape, h, layer, &cfg).unwrap();
    }
    let f = tape.flatten(h).unwrap();
    let (probs, _) = classify_head(&mut tape, f, &b.head, cfg.lambda).unwrap();
    assert_eq!(tape.value(probs).data(), predict_proba(&cfg, &p, &patch).unwrap().as_slice());
}

#[test]
fn zero_ff_output_makes_layers_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for use_layernorm in [false, true] {
        let cfg = PyFormerConfig { use_layernorm, ..small_cfg() };
        let mut p = PyFormerParams::init(&cfg, 1).unwrap();
        for lv in &mut p.levels {
            for l in &mut lv.layers {
                l.ff2_w = Tensor::zeros_like(&l.ff2_w);
                l.ff2_b = Tensor::zeros_like(&l.ff2_b);
            }
        }
        let mut tape = Tape::new();
        let b = p.bind_constant(&mut tape);
        let h = tape.constant(rand_t(&mut rng, vec![8, 8]).scale(5.0));
        for layer in &b.levels[0].layers {
            let out = encoder_layer(&mut tape, h, layer, &cfg).unwrap();
            assert_eq!(tape.value(out).max_abs_diff(tape.value(h)).unwrap(), 0.0);
        }
    }
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let c = t.dims()[1];
    let data = perm.iter().flat_map(|&r| t.data()[r * c..(r + 1) * c].to_vec()).collect();
    Tensor::new(t.dims().to_vec(), data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn attention_is_permutation_equivariant(seed in any::<u64>(), n in 2usize..9, heads in prop::sample::select(vec![1usize, 2, 4, 8])) {
        let cfg = PyFormerConfig { num_heads: heads, b_star: 8, ..small_cfg() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = PyFormerParams::init(&cfg, seed).unwrap();
        let h0 = rand_t(&mut rng, vec![n, 8]).scale(2.0);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let mut tape = Tape::new();
        let b = p.bind_constant(&mut tape);
        let layer = &b.levels[0].layers[0];
        let h = tape.constant(h0.clone());
        let hp = tape.constant(permute_rows(&h0, &perm));
        let a = attention(&mut tape, h, layer, heads).unwrap();
        let ap = attention(&mut tape, hp, layer, heads).unwrap();
        prop_assert!(permute_rows(tape.value(a), &perm).max_abs_diff(tape.value(ap)).unwrap() <= 1e-9);
        let e = encoder_layer(&mut tape, h, layer, &cfg).unwrap();
        let ep = encoder_layer(&mut tape, hp, layer, &cfg).unwrap();
        prop_assert!(permute_rows(tape.value(e), &perm).max_abs_diff(tape.value(ep)).unwrap() <= 1e-9);
    }

    #[test]
    fn attention_weights_are_row_stochastic(seed in any::<u64>(), n in 1usize..7) {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = PyFormerParams::init(&cfg, seed).unwrap();
        let mut tape = Tape::new();
        let b = p.bind_constant(&mut tape);
        let h = tape.constant(rand_t(&mut rng, vec![n, 8]).scale(4.0));
        let (_, weights) = attention_with_weights(&mut tape, h, &b.levels[0].layers[0], cfg.num_heads).unwrap();
        prop_assert_eq!(weights.len(), cfg.num_heads);
        for w in weights {
            for row in tape.value(w).data().chunks(n) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }
}

#[test]
fn positional_embedding_breaks_equivariance() {
    let cfg = small_cfg();
    let mut p = PyFormerParams::init(&cfg, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    p.levels[0].pos = rand_t(&mut rng, vec![8, 8]);
    let mut tape = Tape::new();
    let b = p.bind_constant(&mut tape);
    let h0 = rand_t(&mut rng, vec![8, 8]);
    let perm = [1, 0, 2, 3, 4, 5, 6, 7];
    let h = tape.constant(h0.clone());
    let hp = tape.constant(permute_rows(&h0, &perm));
    let h = add_positional(&mut tape, h, b.levels[0].pos).unwrap();
    let hp = add_positional(&mut tape, hp, b.levels[0].pos).unwrap();
    let e = encoder_layer(&mut tape, h, &b.levels[0].layers[0], &cfg).unwrap();
    let ep = encoder_layer(&mut tape, hp, &b.levels[0].layers[0], &cfg).unwrap();
    assert!(permute_rows(tape.value(e), &perm).max_abs_diff(tape.value(ep)).unwrap() > 1e-6);
}

#[test]
fn feature_length_and_integration_order() {
    let cfg = small_cfg();
    assert_eq!(cfg.feature_len(), 8 * 8 + 4 * 8);
    let d = PyFormerConfig::default();
    assert_eq!(d.feature_len(), (16 + 8) * 64);
    let p = PyFormerParams::init(&cfg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let patch = rand_t(&mut rng, vec![4, 4, 8]);
    let mut tape = Tape::new();
    let b = p.bind_constant(&mut tape);
    let seqs = encode_levels(&mut tape, &cfg, &b, &patch).unwrap();
    let f = integrate_levels(&mut tape, &seqs, &cfg).unwrap();
    let mut want = tape.value(seqs[0].tokens).data().to_vec();
    want.extend_from_slice(tape.value(seqs[1].tokens).data());
    assert_eq!(tape.value(f).data(), want.as_slice());
    assert!(integrate_levels(&mut tape, &seqs[..1], &cfg).is_err());
    let dup = [seqs[0], seqs[0]];
    assert!(integrate_levels(&mut tape, &dup, &cfg).is_err());
}

#[test]
fn batch_rows_are_independent() {
    let cfg = small_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut p = PyFormerParams::init(&cfg, 9).unwrap();
    random_head(&cfg, &mut p, &mut rng);
    let patches: Vec<Tensor> = (0..4).map(|_| rand_t(&mut rng, vec![4, 4, 8])).collect();
    let refs: Vec<&Tensor> = patches.iter().collect();
    let mut tape = Tape::new();
    let b = p.bind_constant(&mut tape);
    let (probs, pen) = forward(&mut tape, &cfg, &b, &refs).unwrap();
    assert_eq!(tape.value(probs).dims(), &[4, 3]);
    for (i, patch) in patches.iter().enumerate() {
        let single = predict_proba(&cfg, &p, patch).unwrap();
        assert_eq!(&tape.value(probs).data()[i * 3..i * 3 + 3], single.as_slice());
    }
    let w2 = p.head.w.sum_squares();
    assert!((tape.value(pen).item().unwrap() - cfg.lambda * w2).abs() < 1e-15);
}

#[test]
fn zero_head_gives_uniform_probabilities() {
    let cfg = small_cfg();
    let p = PyFormerParams::init(&cfg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let probs = predict_proba(&cfg, &p, &rand_t(&mut rng, vec![4, 4, 8])).unwrap();
    assert!(probs.iter().all(|&v| v == probs[0]));
    assert_eq!(argmax(&probs), 0);
    assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
}

#[test]
fn init_is_seeded_and_shapes_follow_config() {
    let cfg = PyFormerConfig::default();
    let a = PyFormerParams::init(&cfg, 4).unwrap();
    assert_eq!(a, PyFormerParams::init(&cfg, 4).unwrap());
    assert_ne!(a, PyFormerParams::init(&cfg, 5).unwrap());
    assert_eq!(a.count(), cfg.param_count());
    let names: std::collections::BTreeSet<_> = a.named().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names.len(), a.len());
    let other = PyFormerParams::init(&PyFormerConfig { b_star: 8, ..cfg.clone() }, 4).unwrap();
    assert!(other.check_shapes(&cfg).is_err());
}

#[test]
fn invalid_configs_rejected() {
    for bad in [
        PyFormerConfig { num_heads: 6, ..Default::default() },
        PyFormerConfig { num_heads: 10, ..Default::default() },
        PyFormerConfig { num_levels: 5, ..Default::default() },
        PyFormerConfig { patch_size: 5, ..Default::default() },
        PyFormerConfig { num_layers: 0, ..Default::default() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
    assert!(gradcheck_config().validate().is_ok());
    let cfg = gradcheck_config();
    assert!(gradcheck_params(&cfg, 0).unwrap().check_shapes(&cfg).is_ok());
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_cfg();
    let mut p = PyFormerParams::init(&cfg, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    random_head(&cfg, &mut p, &mut rng);
    save_checkpoint(dir.path(), &cfg, &p).unwrap();
    let (c2, p2) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(c2, cfg);
    for ((n1, a), (n2, b)) in p.named().iter().zip(p2.named()) {
        assert_eq!(n1, &n2);
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
    let blob = std::fs::read(dir.path().join(BLOB_FILE)).unwrap();
    assert_eq!(blob.len(), 8 * cfg.param_count());
}
