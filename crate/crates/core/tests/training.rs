use ssal_core::autodiff::Graph;
use ssal_core::data::{stack_batch, Prepared, Window};
use ssal_core::error::Error;
use ssal_core::forecasters::{Forecaster, ModelConfig, NeuralKind};
use ssal_core::mask::Mask;
use ssal_core::reference::{ReferenceMode, ReferenceSpec};
use ssal_core::synthetic;
use ssal_core::training::{
    evaluate, loss_l1, predict_windows, train, LossHistory, TrainConfig, TrainData,
};
use ssal_core::{SeriesFrame, Tensor};

fn prepared(seed: u64) -> Prepared {
    let x = synthetic::ar_process(&[0.7], 240, 3, 0.5, seed);
    Prepared::new(&SeriesFrame::from_values(x).unwrap(), (0.6, 0.2, 0.2), 8, 1).unwrap()
}

fn model(kind: NeuralKind) -> ModelConfig {
    ModelConfig {
        neural: kind,
        ar_order: 3,
        mlp_hidden: vec![8],
        cnn_channels: 4,
        gru_hidden: 6,
        attn_dim: 8,
        attn_ff: 8,
        ..ModelConfig::default()
    }
}

fn quick(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 1e-2,
        epochs: 4,
        seed,
        ..TrainConfig::default()
    }
}

fn fit(
    prep: &Prepared,
    kind: NeuralKind,
    mask: Mask,
    reference: ReferenceSpec,
    cfg: &TrainConfig,
) -> (Forecaster, Mask, LossHistory) {
    let tr = prep.train_windows().unwrap();
    let va = prep.val_windows().unwrap();
    let mut f = Forecaster::new(&model(kind), prep.window, prep.frame.features(), cfg.seed).unwrap();
    let mut m = mask;
    let data = TrainData {
        train: &tr,
        val: &va,
        reference,
        baseline: prep.baseline(),
        target_col: None,
    };
    let h = train(&mut f, &mut m, &data, cfg).unwrap();
    (f, m, h)
}

fn noise() -> ReferenceSpec {
    ReferenceSpec {
        mode: ReferenceMode::Noise,
        ..ReferenceSpec::default()
    }
}

#[test]
fn same_seed_gives_identical_runs() {
    let prep = prepared(1);
    for kind in [NeuralKind::Mlp, NeuralKind::Gru] {
        let a = fit(&prep, kind, Mask::new(8, 3, 0.0), noise(), &quick(5));
        let b = fit(&prep, kind, Mask::new(8, 3, 0.0), noise(), &quick(5));
        assert_eq!(a, b, "{kind}");
        let c = fit(&prep, kind, Mask::new(8, 3, 0.0), noise(), &quick(6));
        assert_ne!(a.0, c.0, "{kind}");
    }
}

#[test]
fn negligible_frozen_mask_matches_disabled_mask() {
    let prep = prepared(2);
    let base = TrainConfig {
        lambda1: 0.0,
        lambda2: 0.0,
        ..quick(3)
    };
    let frozen = TrainConfig {
        mask_frozen: true,
        ..base.clone()
    };
    let off = TrainConfig {
        mask_enabled: false,
        ..base
    };
    let (fa, ma, _) = fit(&prep, NeuralKind::Mlp, Mask::new(8, 3, -40.0), noise(), &frozen);
    let (fb, _, _) = fit(&prep, NeuralKind::Mlp, Mask::new(8, 3, -40.0), noise(), &off);
    assert!(ma.logits.data().iter().all(|&v| v == -40.0));
    let te = prep.test_windows().unwrap();
    let pa = predict_windows(&fa, &te).unwrap();
    let pb = predict_windows(&fb, &te).unwrap();
    for (a, b) in pa.data().iter().zip(pb.data()) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn identity_reference_without_penalties_leaves_mask_in_place() {
    let prep = prepared(3);
    let cfg = TrainConfig {
        lambda1: 0.0,
        lambda2: 0.0,
        ..quick(0)
    };
    let identity = ReferenceSpec {
        mode: ReferenceMode::Identity,
        ..ReferenceSpec::default()
    };
    let (_, m, _) = fit(&prep, NeuralKind::Mlp, Mask::new(8, 3, 0.0), identity, &cfg);
    assert!(m.logits.data().iter().all(|&v| v == 0.0));
}

#[test]
fn training_mask_moves_towards_injection() {
    let prep = prepared(4);
    let (_, m, _) = fit(&prep, NeuralKind::Mlp, Mask::new(8, 3, 0.0), noise(), &quick(0));
    assert_ne!(m.logits, Mask::new(8, 3, 0.0).logits);
}

fn l1_value(target: f64, pred: f64, m: f64, cfg: &TrainConfig) -> f64 {
    let mut g = Graph::new();
    let t = g.constant(Tensor::new(&[1, 1], vec![target]).unwrap());
    let p = g.constant(Tensor::new(&[1, 1], vec![pred]).unwrap());
    let mask = g.constant(Tensor::new(&[1, 1], vec![m]).unwrap());
    let loss = loss_l1(&mut g, t, p, mask, cfg).unwrap();
    g.value(loss).item()
}

#[test]
fn loss_l1_hand_examples() {
    let cfg = TrainConfig {
        size_penalty_complement: false,
        ..TrainConfig::default()
    };
    assert!((l1_value(1.0, 0.0, 0.5, &cfg) - 1.0005).abs() < 1e-12);
    let complement = TrainConfig::default();
    assert_eq!(l1_value(2.0, 2.0, 1.0, &complement), 0.0);
    let plain = TrainConfig {
        lambda1: 0.0,
        lambda2: 0.0,
        ..TrainConfig::default()
    };
    assert_eq!(l1_value(3.0, 1.0, 0.7, &plain), 4.0);
}

#[test]
fn memorizes_a_tiny_dataset() {
    let x = synthetic::ar_process(&[0.8], 30, 2, 1.0, 9);
    let prep = Prepared::new(&SeriesFrame::from_values(x).unwrap(), (0.6, 0.2, 0.2), 4, 1).unwrap();
    let tr = prep.train_windows().unwrap();
    let cfg = ModelConfig {
        neural: NeuralKind::Mlp,
        ar: false,
        mlp_hidden: vec![64],
        ..ModelConfig::default()
    };
    let mut f = Forecaster::new(&cfg, 4, 2, 0).unwrap();
    let mut m = Mask::new(4, 2, 0.0);
    let data = TrainData {
        train: &tr,
        val: &[],
        reference: ReferenceSpec::default(),
        baseline: prep.baseline(),
        target_col: None,
    };
    let tc = TrainConfig {
        lr: 1e-2,
        weight_decay: 0.0,
        epochs: 1500,
        mask_enabled: false,
        ..TrainConfig::default()
    };
    train(&mut f, &mut m, &data, &tc).unwrap();
    let e = evaluate(&f, &tr, &prep.scaler, None).unwrap();
    assert!(e.scaled.rse < 0.05, "rse {}", e.scaled.rse);
}

#[test]
fn best_validation_epoch_is_restored() {
    let prep = prepared(5);
    let cfg = TrainConfig {
        lr: 3e-2,
        epochs: 12,
        patience: 0,
        ..TrainConfig::default()
    };
    let (f, _, h) = fit(&prep, NeuralKind::Mlp, Mask::new(8, 3, 0.0), noise(), &cfg);
    assert_eq!(h.epochs.len(), 12);
    let best = h
        .epochs
        .iter()
        .map(|r| r.val_rse)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(h.epochs[h.best_epoch - 1].val_rse, best);
    let va = prep.val_windows().unwrap();
    let e = evaluate(&f, &va, &prep.scaler, None).unwrap();
    assert_eq!(e.scaled.rse, best);
}

#[test]
fn patience_stops_early() {
    let prep = prepared(6);
    let cfg = TrainConfig {
        lr: 0.5,
        epochs: 200,
        patience: 2,
        ..TrainConfig::default()
    };
    let (_, _, h) = fit(&prep, NeuralKind::Mlp, Mask::new(8, 3, 0.0), noise(), &cfg);
    assert!(h.epochs.len() < 200);
    assert_eq!(h.epochs.len(), h.best_epoch + 2);
}

#[test]
fn history_csv_has_one_row_per_epoch() {
    let prep = prepared(7);
    let (_, _, h) = fit(&prep, NeuralKind::Mlp, Mask::new(8, 3, 0.0), noise(), &quick(0));
    let csv = h.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("epoch,train_loss,val_rse,val_corr"));
    assert_eq!(lines.count(), 4);
}

#[test]
fn non_finite_loss_aborts_with_iteration() {
    let prep = prepared(8);
    let tr = prep.train_windows().unwrap();
    let mut f = Forecaster::new(&model(NeuralKind::Mlp), 8, 3, 0).unwrap();
    let mut m = Mask::new(8, 3, 0.0);
    let data = TrainData {
        train: &tr,
        val: &[],
        reference: noise(),
        baseline: prep.baseline(),
        target_col: None,
    };
    let cfg = TrainConfig {
        lr: 1e200,
        ..quick(0)
    };
    match train(&mut f, &mut m, &data, &cfg) {
        Err(Error::NonFiniteTrainingLoss { iteration, lr }) => {
            assert!(iteration >= 2);
            assert_eq!(lr, 1e200);
        }
        other => panic!("expected a non-finite loss error, got {other:?}"),
    }
}

#[test]
fn mismatched_inputs_are_rejected() {
    let prep = prepared(9);
    let tr = prep.train_windows().unwrap();
    let mut f = Forecaster::new(&model(NeuralKind::Mlp), 8, 3, 0).unwrap();
    let mut data = TrainData {
        train: &tr,
        val: &[],
        reference: noise(),
        baseline: prep.baseline(),
        target_col: None,
    };
    let mut wrong = Mask::new(7, 3, 0.0);
    assert!(train(&mut f, &mut wrong, &data, &quick(0)).is_err());
    data.target_col = Some(3);
    let mut m = Mask::new(8, 3, 0.0);
    assert!(matches!(
        train(&mut f, &mut m, &data, &quick(0)),
        Err(Error::IndexOutOfRange { index: 3, len: 3 })
    ));
    let empty: Vec<Window> = Vec::new();
    data.train = &empty;
    data.target_col = None;
    assert!(train(&mut f, &mut m, &data, &quick(0)).is_err());
}

#[test]
fn target_column_restricts_the_loss() {
    let p = synthetic::planted_lag(300, 3, 0, 2, 1, 0.01, 0);
    let prep = Prepared::new(&p.frame, (0.6, 0.2, 0.2), 6, 1).unwrap();
    let tr = prep.train_windows().unwrap();
    let va = prep.val_windows().unwrap();
    let cfg = ModelConfig {
        neural: NeuralKind::Mlp,
        ar: false,
        mlp_hidden: vec![16],
        ..ModelConfig::default()
    };
    let mut f = Forecaster::new(&cfg, 6, 3, 0).unwrap();
    let mut m = Mask::new(6, 3, 0.0);
    let data = TrainData {
        train: &tr,
        val: &va,
        reference: noise(),
        baseline: prep.baseline(),
        target_col: Some(p.target_col),
    };
    let tc = TrainConfig {
        lr: 1e-2,
        epochs: 30,
        mask_enabled: false,
        ..TrainConfig::default()
    };
    train(&mut f, &mut m, &data, &tc).unwrap();
    let te = prep.test_windows().unwrap();
    let only = evaluate(&f, &te, &prep.scaler, Some(p.target_col)).unwrap();
    assert!(only.scaled.rse < 0.3, "target rse {}", only.scaled.rse);
    let (_, truth) = stack_batch(&te).unwrap();
    assert_eq!(only.predictions.shape(), truth.shape());
}
