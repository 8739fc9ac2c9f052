use ssal_core::data::{Prepared, SeriesImage, Window};
use ssal_core::error::Error;
use ssal_core::forecasters::{ArModel, Forecaster, ModelConfig, NeuralKind};
use ssal_core::interpretation::{interpret, interpret_batch, InterpretConfig, InterpretContext, Target};
use ssal_core::mask::Mask;
use ssal_core::reference::{ReferenceMode, ReferenceSpec};
use ssal_core::synthetic;
use ssal_core::training::{train, TrainConfig, TrainData};
use ssal_core::{Checkpoint, Config, SeriesFrame, Tensor};

fn trained() -> (Prepared, Forecaster) {
    let x = synthetic::ar_process(&[0.8], 300, 3, 0.3, 0);
    let prep = Prepared::new(&SeriesFrame::from_values(x).unwrap(), (0.6, 0.2, 0.2), 10, 1).unwrap();
    let cfg = ModelConfig {
        neural: NeuralKind::Mlp,
        ar_order: 3,
        mlp_hidden: vec![8],
        ..ModelConfig::default()
    };
    let mut f = Forecaster::new(&cfg, 10, 3, 0).unwrap();
    let tr = prep.train_windows().unwrap();
    let mut m = Mask::new(10, 3, 0.0);
    let data = TrainData {
        train: &tr,
        val: &[],
        reference: ReferenceSpec::default(),
        baseline: prep.baseline(),
        target_col: None,
    };
    let tc = TrainConfig {
        lr: 1e-2,
        epochs: 5,
        ..TrainConfig::default()
    };
    train(&mut f, &mut m, &data, &tc).unwrap();
    (prep, f)
}

fn short() -> InterpretConfig {
    InterpretConfig {
        steps: 60,
        ..InterpretConfig::default()
    }
}

fn ctx(prep: &Prepared) -> InterpretContext {
    InterpretContext {
        baseline: prep.baseline(),
        target_col: None,
    }
}

fn window(values: Vec<f64>, w: usize, d: usize, target: Vec<f64>) -> Window {
    Window {
        image: SeriesImage {
            values: Tensor::new(&[w, d], values).unwrap(),
            start_index: 0,
            horizon: 1,
        },
        target,
    }
}

#[test]
fn constant_head_gives_no_data_gradient() {
    let cfg = ModelConfig {
        neural: NeuralKind::None,
        ar_order: 2,
        ..ModelConfig::default()
    };
    let mut f = Forecaster::new(&cfg, 5, 2, 0).unwrap();
    f.ar = Some(ArModel::from_parts(Tensor::zeros(&[2, 3]), vec![0.3, -0.2]).unwrap());
    let win = window((0..10).map(|v| v as f64).collect(), 5, 2, vec![1.0, 1.0]);
    let ctx = InterpretContext {
        baseline: vec![0.0, 0.0],
        target_col: None,
    };
    let free = InterpretConfig {
        lambda1: 0.0,
        lambda2: 0.0,
        ..short()
    };
    let s = interpret(&f, &win, 0, &free, &ctx).unwrap();
    assert!(s.mask_values.data().iter().all(|&m| m == 0.5));
    let lp = -((0.7f64).powi(2) + (1.2f64).powi(2)) / 2.0;
    assert!(s.trace.iter().all(|&v| v == lp));

    let shrink = interpret(&f, &win, 0, &short(), &ctx).unwrap();
    assert!(shrink.mask_values.data().iter().all(|&m| m < 0.5));
}

#[test]
fn one_cell_toy_saturates_towards_the_reference() {
    let cfg = ModelConfig {
        neural: NeuralKind::None,
        ar_order: 0,
        ..ModelConfig::default()
    };
    let mut f = Forecaster::new(&cfg, 1, 1, 0).unwrap();
    f.ar = Some(ArModel::from_parts(Tensor::new(&[1, 1], vec![1.0]).unwrap(), vec![0.0]).unwrap());
    let win = window(vec![1.0], 1, 1, vec![1.0]);
    let ctx = InterpretContext {
        baseline: vec![0.0],
        target_col: None,
    };
    let ic = InterpretConfig {
        lambda1: 0.1,
        lambda2: 0.0,
        reference: ReferenceSpec {
            mode: ReferenceMode::Constant,
            ..ReferenceSpec::default()
        },
        ..InterpretConfig::default()
    };
    let s = interpret(&f, &win, 0, &ic, &ctx).unwrap();
    let m = s.mask_values.item();
    assert!(m > 0.95, "m = {m}");
    assert!((s.trace[0] - (-0.25 + 0.1 * 0.5)).abs() < 1e-12);
    assert!((s.final_lp - m * m).abs() < 1e-12);
}

#[test]
fn huge_size_penalty_shrinks_the_mask() {
    let (prep, f) = trained();
    let te = prep.test_windows().unwrap();
    let small = interpret(&f, &te[0], 0, &InterpretConfig { lambda1: 1e-3, ..short() }, &ctx(&prep)).unwrap();
    let big = interpret(&f, &te[0], 0, &InterpretConfig { lambda1: 1e3, ..short() }, &ctx(&prep)).unwrap();
    assert!(big.mean() < small.mean(), "{} vs {}", big.mean(), small.mean());
}

#[test]
fn model_is_untouched() {
    let (prep, f) = trained();
    let before = Checkpoint {
        config: Config::default(),
        forecaster: f.clone(),
        mask: None,
    }
    .to_text();
    let te = prep.test_windows().unwrap();
    interpret(&f, &te[3], 3, &short(), &ctx(&prep)).unwrap();
    let after = Checkpoint {
        config: Config::default(),
        forecaster: f,
        mask: None,
    }
    .to_text();
    assert_eq!(before, after);
}

#[test]
fn map_invariants() {
    let (prep, f) = trained();
    let te = prep.test_windows().unwrap();
    for against in [Target::Truth, Target::OwnPrediction] {
        let ic = InterpretConfig { against, ..short() };
        let s = interpret(&f, &te[2], 7, &ic, &ctx(&prep)).unwrap();
        assert_eq!(s.trace.len(), 60);
        assert_eq!(s.mask_values.shape(), &[10, 3]);
        assert!(s.mask_values.data().iter().all(|&m| m > 0.0 && m < 1.0));
        assert_eq!((s.sample_id, s.horizon), (7, 1));
        assert!(s.final_lp.is_finite());
        assert_eq!(s.to_csv().lines().count(), 10);
        assert!(s.to_csv().lines().all(|l| l.split(',').all(|v| v.len() == 8)));
        assert_eq!(s.trace_csv().lines().count(), 61);
    }
}

#[test]
fn noise_reference_is_fixed_per_sample() {
    let (prep, f) = trained();
    let te = prep.test_windows().unwrap();
    let ic = InterpretConfig {
        reference: ReferenceSpec {
            mode: ReferenceMode::Noise,
            ..ReferenceSpec::default()
        },
        ..short()
    };
    let a = interpret(&f, &te[0], 4, &ic, &ctx(&prep)).unwrap();
    let b = interpret(&f, &te[0], 4, &ic, &ctx(&prep)).unwrap();
    let c = interpret(&f, &te[0], 5, &ic, &ctx(&prep)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.mask_values, c.mask_values);
}

#[test]
fn batch_matches_single_runs_for_any_thread_count() {
    let (prep, f) = trained();
    let te = prep.test_windows().unwrap();
    let samples: Vec<(usize, &Window)> = [9, 0, 4, 2, 7].iter().map(|&i| (i, &te[i])).collect();
    let one = interpret_batch(&f, &samples, &short(), &ctx(&prep), 1).unwrap();
    let four = interpret_batch(&f, &samples, &short(), &ctx(&prep), 4).unwrap();
    let one: Vec<_> = one.into_iter().map(Result::unwrap).collect();
    let four: Vec<_> = four.into_iter().map(Result::unwrap).collect();
    assert_eq!(one, four);
    for (s, (id, win)) in one.iter().zip(&samples) {
        assert_eq!(s.sample_id, *id);
        assert_eq!(*s, interpret(&f, win, *id, &short(), &ctx(&prep)).unwrap());
    }
}

#[test]
fn batch_edge_cases() {
    let (prep, f) = trained();
    assert!(interpret_batch(&f, &[], &short(), &ctx(&prep), 2).unwrap().is_empty());
    let te = prep.test_windows().unwrap();
    let bad = window(vec![0.0; 6], 2, 3, vec![0.0; 3]);
    let out = interpret_batch(&f, &[(0, &te[0]), (1, &bad), (2, &te[2])], &short(), &ctx(&prep), 2).unwrap();
    assert!(out[0].is_ok() && out[2].is_ok());
    assert!(matches!(out[1], Err(Error::Sample { id: 1, .. })));
}

#[test]
fn invalid_settings_are_rejected() {
    let (prep, f) = trained();
    let te = prep.test_windows().unwrap();
    let zero = InterpretConfig { steps: 0, ..short() };
    assert!(interpret(&f, &te[0], 0, &zero, &ctx(&prep)).is_err());
    let col = InterpretContext {
        target_col: Some(3),
        ..ctx(&prep)
    };
    assert!(matches!(
        interpret(&f, &te[0], 0, &short(), &col),
        Err(Error::IndexOutOfRange { index: 3, len: 3 })
    ));
}
