use super::*;
use crate::autodiff::grad_check;
use crate::data::SeriesImage;
use crate::mask::apply_mask_node;
use crate::rng::stream_rng;

fn image(rows: &[Vec<f64>]) -> SeriesImage {
    SeriesImage {
        values: Tensor::from_rows(rows).unwrap(),
        start_index: 0,
        horizon: 1,
    }
}

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = stream_rng(seed, 99);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn config(neural: NeuralKind, ar: bool) -> ModelConfig {
    ModelConfig {
        neural,
        ar,
        ar_order: 2,
        mlp_hidden: vec![5],
        cnn_channels: 3,
        cnn_layers: 2,
        cnn_kernel: 2,
        gru_hidden: 4,
        attn_dim: 4,
        attn_ff: 6,
        ..ModelConfig::default()
    }
}

#[test]
fn identity_ar_returns_last_row() {
    let m = ArModel::from_parts(Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap(), vec![0.0, 0.0]).unwrap();
    let img = image(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
    assert_eq!(ar_forecast(&m, &img).unwrap(), vec![3.0, 4.0]);
}

#[test]
fn ar_hand_example() {
    let m = ArModel::from_parts(Tensor::from_rows(&[vec![0.5, 0.5]]).unwrap(), vec![1.0]).unwrap();
    let img = image(&[vec![7.0], vec![2.0], vec![3.0]]);
    assert_eq!(ar_forecast(&m, &img).unwrap(), vec![3.5]);
}

#[test]
fn ar_window_shorter_than_order_is_rejected() {
    let m = ArModel::from_parts(Tensor::zeros(&[1, 4]), vec![0.0]).unwrap();
    let img = image(&[vec![1.0], vec![2.0]]);
    assert!(ar_forecast(&m, &img).is_err());
}

#[test]
fn ar_graph_matches_direct_evaluation() {
    let mut rng = stream_rng(3, 0);
    let m = ArModel::new(3, 2, &mut rng);
    let img = random_tensor(&[5, 3], 1);
    let direct = ar_forecast(&m, &SeriesImage {
        values: img.clone(),
        start_index: 0,
        horizon: 1,
    })
    .unwrap();
    let mut g = Graph::new();
    let x = g.constant(img.reshape(&[1, 5, 3]).unwrap());
    let y = m.forward(&mut g, x, &mut Binder::frozen()).unwrap();
    for (a, b) in g.value(y).data().iter().zip(&direct) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn ar_is_linear_without_bias() {
    let mut rng = stream_rng(5, 0);
    let mut m = ArModel::new(2, 3, &mut rng);
    m.bias = Tensor::zeros(&[2]);
    let (x1, x2) = (random_tensor(&[6, 2], 1), random_tensor(&[6, 2], 2));
    let (a, b) = (0.7, -1.3);
    let mix = x1.zip_map(&x2, |p, q| a * p + b * q).unwrap();
    let f = |x: &Tensor| {
        ar_forecast(&m, &SeriesImage {
            values: x.clone(),
            start_index: 0,
            horizon: 1,
        })
        .unwrap()
    };
    let (y1, y2, y) = (f(&x1), f(&x2), f(&mix));
    for i in 0..2 {
        assert!((y[i] - (a * y1[i] + b * y2[i])).abs() < 1e-12);
    }
}

#[test]
fn combine_examples() {
    assert_eq!(combine(&[1.0, 2.0], &[0.5, -2.0]).unwrap(), vec![1.5, 0.0]);
    assert_eq!(combine(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), vec![1.0, 2.0]);
    assert_eq!(combine(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
    assert!(combine(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn hybrid_output_is_sum_of_components() {
    let cfg = config(NeuralKind::Mlp, true);
    let f = Forecaster::new(&cfg, 4, 2, 11).unwrap();
    let x = random_tensor(&[3, 4, 2], 4);
    let both = f.predict(&x).unwrap();
    let mut ar_only = f.clone();
    ar_only.neural = None;
    let mut nn_only = f.clone();
    nn_only.ar = None;
    let (r, o) = (ar_only.predict(&x).unwrap(), nn_only.predict(&x).unwrap());
    let sum = combine(r.data(), o.data()).unwrap();
    assert_eq!(both.data(), sum.as_slice());
}

#[test]
fn mlp_with_zero_weights_returns_bias() {
    let mut rng = stream_rng(0, 0);
    let mut m = Mlp::new(3, 2, &[4], Activation::Relu, &mut rng);
    for (w, _) in &mut m.layers {
        *w = Tensor::zeros(w.shape());
    }
    let mut g = Graph::new();
    let x = g.constant(random_tensor(&[2, 3, 2], 8));
    let y = m.forward(&mut g, x, &mut Binder::frozen()).unwrap();
    let bias = m.layers.last().unwrap().1.data().to_vec();
    assert_eq!(g.value(y).row(0), bias.as_slice());
    assert_eq!(g.value(y).row(1), bias.as_slice());
}

#[test]
fn cnn_feature_maps_are_causal() {
    let mut rng = stream_rng(2, 0);
    let cnn = TemporalCnn::new(8, 2, 3, 2, 3, &mut rng);
    let base = random_tensor(&[1, 8, 2], 5);
    let maps = |x: &Tensor| {
        let mut g = Graph::new();
        let node = g.constant(x.clone());
        let ids = cnn.feature_maps(&mut g, node, &mut Binder::frozen()).unwrap();
        ids.iter().map(|&i| g.value(i).clone()).collect::<Vec<_>>()
    };
    let before = maps(&base);
    for row in 0..8 {
        let mut x = base.clone();
        x.data_mut()[row * 2] += 1.0;
        let after = maps(&x);
        for (m0, m1) in before.iter().zip(&after) {
            let c = m0.shape()[2];
            for t in 0..row {
                assert_eq!(m0.data()[t * c..(t + 1) * c], m1.data()[t * c..(t + 1) * c]);
            }
        }
    }
}

#[test]
fn gru_on_constant_input_settles() {
    let mut rng = stream_rng(17, 0);
    let gru = Gru::new(3, 8, &mut rng);
    let row = [0.3, -0.8, 0.5];
    let x: Vec<f64> = (0..30).flat_map(|_| row).collect();
    let mut g = Graph::new();
    let node = g.constant(Tensor::new(&[1, 30, 3], x).unwrap());
    let states = gru.hidden_states(&mut g, node, &mut Binder::frozen()).unwrap();
    let diffs: Vec<f64> = states
        .windows(2)
        .map(|p| {
            g.value(p[0])
                .data()
                .iter()
                .zip(g.value(p[1]).data())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    for i in 3..diffs.len() - 1 {
        assert!(diffs[i + 1] < diffs[i], "step {i}: {:?}", &diffs[i..i + 2]);
    }
}

fn layer_norm_rows(x: &[f64], n: usize) -> Vec<f64> {
    x.chunks(n)
        .flat_map(|r| {
            let mean = r.iter().sum::<f64>() / n as f64;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + 1e-5).sqrt();
            r.iter().map(move |v| (v - mean) * inv).collect::<Vec<_>>()
        })
        .collect()
}

fn affine(x: &[f64], w: &Tensor, b: Option<&Tensor>) -> Vec<f64> {
    let (i, o) = w.dims2();
    x.chunks(i)
        .flat_map(|r| {
            (0..o)
                .map(|c| (0..i).map(|k| r[k] * w.get2(k, c)).sum::<f64>() + b.map_or(0.0, |b| b.data()[c]))
                .collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn attention_with_uniform_scores_is_mean_pooling() {
    let (w, d, dm) = (5, 2, 4);
    let mut rng = stream_rng(9, 0);
    let mut att = SelfAttention::new(w, d, dm, 6, &mut rng);
    att.wq = Tensor::zeros(&[dm, dm]);
    att.wk = Tensor::zeros(&[dm, dm]);
    let x = random_tensor(&[1, w, d], 3);

    // Every row attends uniformly, so the context is the mean value vector.
    let h: Vec<f64> = affine(x.data(), &att.embed_w, Some(&att.embed_b))
        .iter()
        .zip(att.positions.data())
        .map(|(a, p)| a + p)
        .collect();
    let v = affine(&layer_norm_rows(&h, dm), &att.wv, None);
    let ctx: Vec<f64> = (0..dm)
        .map(|j| (0..w).map(|t| v[t * dm + j]).sum::<f64>() / w as f64)
        .collect();
    let ctx_out = affine(&ctx, &att.wo, None);
    let h: Vec<f64> = h.iter().enumerate().map(|(i, a)| a + ctx_out[i % dm]).collect();
    let f = affine(&layer_norm_rows(&h, dm), &att.ff1_w, Some(&att.ff1_b));
    let f: Vec<f64> = f.into_iter().map(|v| v.max(0.0)).collect();
    let f = affine(&f, &att.ff2_w, Some(&att.ff2_b));
    let h: Vec<f64> = h.iter().zip(&f).map(|(a, b)| a + b).collect();
    let pooled: Vec<f64> = (0..dm)
        .map(|j| (0..w).map(|t| h[t * dm + j]).sum::<f64>() / w as f64)
        .collect();
    let expected = affine(&pooled, &att.head_w, Some(&att.head_b));

    let mut g = Graph::new();
    let node = g.constant(x);
    let y = att.forward(&mut g, node, &mut Binder::frozen()).unwrap();
    for (a, b) in g.value(y).data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn positional_encoding_alternates_sin_cos() {
    let pe = positional_encoding(3, 4);
    assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
    assert!((pe.get2(2, 0) - 2f64.sin()).abs() < 1e-15);
    assert!((pe.get2(2, 3) - (2.0 / 100.0f64).cos()).abs() < 1e-15);
}

/// Gradient of an L1-style loss with respect to every model parameter and
/// the mask logits at once.
fn joint_grad_check(kind: NeuralKind, seed: u64) -> f64 {
    let (w, d, b) = (6, 3, 2);
    let f = Forecaster::new(&config(kind, true), w, d, seed).unwrap();
    let names: Vec<(String, bool)> = f.params().iter().map(|p| (p.name.clone(), p.decay)).collect();
    let mut params: Vec<Tensor> = f.params().iter().map(|p| p.tensor.clone()).collect();
    params.push(random_tensor(&[w, d], seed + 100));
    let x = random_tensor(&[b, w, d], seed + 200);
    let r = random_tensor(&[b, w, d], seed + 300);
    let y = random_tensor(&[b, d], seed + 400);
    let report = grad_check(&params, 1e-6, |g, ids| {
        let mut binder = Binder::frozen();
        for ((name, decay), &id) in names.iter().zip(ids) {
            binder.insert(name, id, *decay);
        }
        let xn = g.constant(x.clone());
        let rn = g.constant(r.clone());
        let yn = g.constant(y.clone());
        let m = g.sigmoid(*ids.last().unwrap())?;
        let mt = g.tile(m, b)?;
        let xt = apply_mask_node(g, xn, rn, mt)?;
        let pred = f.forward(g, xt, &mut binder)?;
        let fit = g.mse(yn, pred)?;
        let pen = crate::mask::size_penalty(g, m, 2, false)?;
        let pen = g.scale(pen, 0.1)?;
        g.add(fit, pen)
    })
    .unwrap();
    assert!(report.checked > 0);
    report.max_rel_err
}

#[test]
fn joint_gradients_match_finite_differences() {
    for kind in [
        NeuralKind::None,
        NeuralKind::Mlp,
        NeuralKind::TemporalCnn,
        NeuralKind::Gru,
        NeuralKind::SelfAttention,
    ] {
        for seed in 0..2 {
            let err = joint_grad_check(kind, seed);
            assert!(err < 1e-4, "{kind}: seed {seed}: {err}");
        }
    }
}

#[test]
fn parameter_names_are_unique_and_stable() {
    for kind in [NeuralKind::Mlp, NeuralKind::TemporalCnn, NeuralKind::Gru, NeuralKind::SelfAttention] {
        let f = Forecaster::new(&config(kind, true), 6, 3, 0).unwrap();
        let names: Vec<String> = f.params().iter().map(|p| p.name.clone()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len(), "{kind}");
        let mut g = f.clone();
        let mut_names: Vec<String> = g.params_mut().into_iter().map(|p| p.name).collect();
        assert_eq!(names, mut_names);
        assert_eq!(f, Forecaster::new(&config(kind, true), 6, 3, 0).unwrap());
        assert!(names.iter().all(|n| n.starts_with("ar.") || n.starts_with(&format!("neural.{kind}"))
            || (kind == NeuralKind::TemporalCnn && n.starts_with("neural.cnn"))));
    }
}

#[test]
fn wrong_input_shape_is_rejected() {
    let f = Forecaster::new(&config(NeuralKind::Mlp, true), 6, 3, 0).unwrap();
    assert!(f.predict(&Tensor::zeros(&[1, 5, 3])).is_err());
    assert!(f.predict(&Tensor::zeros(&[1, 6, 2])).is_err());
}

#[test]
fn invalid_model_configs_are_rejected() {
    let mut cfg = config(NeuralKind::None, false);
    assert!(Forecaster::new(&cfg, 6, 3, 0).is_err());
    cfg.ar = true;
    cfg.ar_order = 6;
    assert!(Forecaster::new(&cfg, 6, 3, 0).unwrap_err().is_validation());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut config = crate::config::Config::default();
    config.data.window = 6;
    config.model = config_for_checkpoint();
    let forecaster = Forecaster::new(&config.model, 6, 3, 4).unwrap();
    let mask = crate::mask::Mask::from_logits(random_tensor(&[6, 3], 1)).unwrap();
    let ck = Checkpoint {
        config,
        forecaster,
        mask: Some(mask),
    };
    let text = ck.to_text();
    assert!(text.starts_with(CHECKPOINT_MAGIC));
    let back = Checkpoint::from_text(&text).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_text(), text);
}

fn config_for_checkpoint() -> ModelConfig {
    ModelConfig {
        ar_order: 2,
        ..config(NeuralKind::Gru, true)
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let mut config = crate::config::Config::default();
    config.data.window = 6;
    config.model = config_for_checkpoint();
    let ck = Checkpoint {
        config,
        forecaster: Forecaster::new(&config_for_checkpoint(), 6, 3, 4).unwrap(),
        mask: None,
    };
    let text = ck.to_text();
    assert!(Checkpoint::from_text(&text.replacen("SSAL1", "SSAL0", 1)).is_err());
    let truncated: String = text.lines().take(text.lines().count() - 1).collect::<Vec<_>>().join("\n");
    assert!(Checkpoint::from_text(&truncated).is_err());
    let renamed = text.replace("neural.gru.head.b", "neural.gru.head.c");
    assert!(Checkpoint::from_text(&renamed).is_err());
}
