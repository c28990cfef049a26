use rand::Rng;

use super::*;
use crate::autodiff::gradient_check;
use crate::data::{make_windows, synth_corridor, PreprocessOptions, SynthConfig};
use crate::mdn::nll_lower_bound;

fn tiny(variant: Variant, input_dim: usize, seed: u64) -> CmdrnnConfig {
    CmdrnnConfig {
        filters: 4,
        feature_width: 6,
        hidden: 8,
        memory: 2,
        mixtures: 2,
        mdn_hidden: 6,
        autoencoder: AutoencoderConfig {
            hidden: 8,
            inner: 6,
            code: 4,
            epochs: 2,
        },
        batch_size: 16,
        epochs: 5,
        seed,
        ..CmdrnnConfig::new(variant, input_dim)
    }
}

fn random_windows(n: usize, len: usize, dim: usize, seed: u64) -> Vec<PathWindow> {
    let mut rng = crate::rng::stream(seed, Stream::Synthetic);
    (0..n)
        .map(|i| PathWindow {
            inputs: (0..len * dim).map(|_| rng.random_range(0.0..1.0)).collect(),
            len,
            target: [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
            last: [0.5, 0.5],
            path: 0,
            start: i,
        })
        .collect()
}

#[test]
fn output_widths() {
    let m = Cmdrnn::build(CmdrnnConfig::new(Variant::Cmdrnn, 20)).unwrap();
    assert_eq!(m.output_width(), 150);
    let mut c = CmdrnnConfig::new(Variant::Cmdrnn, 20);
    c.mixtures = 1;
    assert_eq!(Cmdrnn::build(c).unwrap().output_width(), 5);
    assert_eq!(
        Cmdrnn::build(CmdrnnConfig::new(Variant::RnnOnly, 20))
            .unwrap()
            .output_width(),
        2
    );
    assert_eq!(
        Cmdrnn::build(CmdrnnConfig::new(Variant::CnnRnn, 20))
            .unwrap()
            .output_width(),
        2
    );
}

#[test]
fn full_size_architecture_shapes_and_count() {
    let m = Cmdrnn::build(CmdrnnConfig::new(Variant::Cmdrnn, 489)).unwrap();
    assert_eq!(
        m.cnn_stage_shapes().unwrap(),
        vec![vec![243, 100], vec![121, 100], vec![12100], vec![100]]
    );
    let cnn = 100 * 5 + 100 + 12100 * 100 + 100;
    let rnn = 200 * 100 + 200 * 200 + 200;
    let head = 200 * 200 + 200 + 150 * 200 + 150;
    assert_eq!(m.param_count(), cnn + rnn + head);
    assert_eq!(m.params.scalar_count(), m.param_count());
}

#[test]
fn variants_pick_their_parts() {
    let gru = Cmdrnn::build(CmdrnnConfig::new(Variant::Cmdgru, 30)).unwrap();
    assert_eq!(gru.cell_kind(), CellKind::Gru);
    assert!(gru.cnn_stage_shapes().is_some());
    let lstm = Cmdrnn::build(CmdrnnConfig::new(Variant::Cmdlstm, 30)).unwrap();
    assert_eq!(lstm.cell_kind(), CellKind::Lstm);
    let ae = Cmdrnn::build(CmdrnnConfig::new(Variant::AeRnnMdn, 30)).unwrap();
    assert_eq!(ae.autoencoder_code_width(), Some(64));
    assert!(ae.cnn_stage_shapes().is_none());
    for v in Variant::ALL {
        let m = Cmdrnn::build(CmdrnnConfig::new(v, 30)).unwrap();
        assert_eq!(m.params.scalar_count(), m.param_count(), "{v}");
        assert_eq!(v.name().parse::<Variant>().unwrap(), v);
    }
    assert!("cmdxyz".parse::<Variant>().is_err());
}

#[test]
fn invalid_configs_rejected() {
    for f in [
        |c: &mut CmdrnnConfig| c.memory = 0,
        |c: &mut CmdrnnConfig| c.mixtures = 0,
        |c: &mut CmdrnnConfig| c.hidden = 0,
        |c: &mut CmdrnnConfig| c.kernel = 50,
    ] {
        let mut c = CmdrnnConfig::new(Variant::Cmdrnn, 20);
        f(&mut c);
        assert!(Cmdrnn::build(c).is_err());
    }
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for variant in [
        Variant::Cmdrnn,
        Variant::Cmdlstm,
        Variant::Cmdgru,
        Variant::CnnRnn,
        Variant::RnnMdn,
        Variant::AeRnnMdn,
    ] {
        let mut passed = false;
        for seed in 0..5 {
            let model = Cmdrnn::build(tiny(variant, 12, seed)).unwrap();
            let windows = random_windows(3, 2, 12, seed);
            let refs: Vec<&PathWindow> = windows.iter().collect();
            let (mut g, loss) = model.loss_graph(&refs).unwrap();
            let report = gradient_check(&mut g, loss, 1e-6, 1e-4).unwrap();
            if report.kink_hits > 0 {
                continue;
            }
            assert!(report.passed(), "{variant}: {report}");
            passed = true;
            break;
        }
        assert!(passed, "{variant}: every sample point hit a kink");
    }
}

#[test]
fn frozen_autoencoder_gets_no_gradient() {
    let model = Cmdrnn::build(tiny(Variant::AeRnnMdn, 12, 0)).unwrap();
    let windows = random_windows(3, 2, 12, 0);
    let refs: Vec<&PathWindow> = windows.iter().collect();
    let (g, loss) = model.loss_graph(&refs).unwrap();
    let grads = g.backward(loss).unwrap();
    assert!(grads.iter().all(|(name, _)| !name.starts_with("ae.")));
    assert!(grads.get("rnn.w").is_some());
}

#[test]
fn zero_epochs_leave_model_unchanged() {
    let mut m = Cmdrnn::build(tiny(Variant::Cmdrnn, 12, 0)).unwrap();
    let before = m.params.digest();
    let report = m.fit_epochs(&random_windows(4, 2, 12, 0), 0).unwrap();
    assert!(report.trace.epochs.is_empty());
    assert_eq!(m.params.digest(), before);
}

#[test]
fn untrained_prediction_is_a_valid_deterministic_mixture() {
    let m = Cmdrnn::build(tiny(Variant::Cmdgru, 12, 3)).unwrap();
    let w = &random_windows(1, 2, 12, 1)[0];
    let p = m.predict_next(w).unwrap();
    p.validate().unwrap();
    assert_eq!(p.components(), 2);
    assert_eq!(p, m.predict_next(w).unwrap());
    let mut short = w.clone();
    short.len = 1;
    short.inputs.truncate(12);
    assert!(m.predict_next(&short).is_err());
    let direct = Cmdrnn::build(tiny(Variant::RnnOnly, 12, 3)).unwrap();
    assert!(direct.predict_next(w).is_err());
    assert_eq!(direct.predict_points(std::slice::from_ref(w)).unwrap().len(), 1);
}

#[test]
fn windows_do_not_share_hidden_state() {
    let m = Cmdrnn::build(tiny(Variant::Cmdlstm, 12, 4)).unwrap();
    let ws = random_windows(6, 2, 12, 9);
    let alone = m.predict_next(&ws[3]).unwrap();
    let batched = m.predict_mixtures(&ws).unwrap();
    for (a, b) in alone.weights.iter().zip(&batched[3].weights) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in alone.means.iter().zip(&batched[3].means) {
        assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
    }
    let _ = m.predict_next(&ws[0]).unwrap();
    assert_eq!(m.predict_next(&ws[3]).unwrap(), alone);
}

#[test]
fn repeated_window_nll_approaches_floor_from_above() {
    let mut c = tiny(Variant::Cmdrnn, 12, 0);
    c.mixtures = 1;
    c.optimizer = OptimizerConfig::adam(1e-2);
    let mut m = Cmdrnn::build(c).unwrap();
    let w = random_windows(1, 2, 12, 5);
    let trace = m.fit_epochs(&w, 200).unwrap().trace;
    let bound = nll_lower_bound();
    assert!(trace.losses().iter().all(|&l| l >= bound));
    let (first, last) = (trace.first_loss().unwrap(), trace.last_loss().unwrap());
    assert!(last < first - 3.0, "{first} -> {last}");
    assert!(m.evaluate_loss(&w).unwrap() >= bound);
}

fn synthetic_windows(memory: usize) -> Vec<PathWindow> {
    let ds = synth_corridor(&SynthConfig {
        steps: 160,
        ..SynthConfig::default()
    })
    .unwrap()
    .preprocess(&PreprocessOptions {
        normalize_rssi: true,
        ..PreprocessOptions::default()
    });
    make_windows(&ds, memory).unwrap()
}

#[test]
fn training_reduces_nll_on_synthetic_path() {
    let windows = synthetic_windows(2);
    let mut c = tiny(Variant::Cmdrnn, 20, 1);
    c.optimizer = OptimizerConfig::rmsprop(3e-3);
    let mut m = Cmdrnn::build(c).unwrap();
    let trace = m.fit_epochs(&windows, 50).unwrap().trace;
    assert_eq!(trace.epochs.len(), 50);
    assert!(trace.last_loss().unwrap() < trace.first_loss().unwrap());
}

#[test]
fn training_is_deterministic() {
    let windows = synthetic_windows(2);
    let run = || {
        let mut m = Cmdrnn::build(tiny(Variant::AeRnnMdn, 20, 7)).unwrap();
        let r = m.fit_epochs(&windows, 3).unwrap();
        (r.trace.losses(), r.pretrain.unwrap().losses(), m.params.digest())
    };
    let (a, b) = (run(), run());
    assert_eq!(
        a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
}

#[test]
fn non_finite_input_aborts_with_location() {
    let mut ws = random_windows(20, 2, 12, 0);
    for w in &mut ws {
        w.inputs[0] = f64::INFINITY;
    }
    let mut m = Cmdrnn::build(tiny(Variant::RnnMdn, 12, 0)).unwrap();
    match m.fit_epochs(&ws, 2).unwrap_err() {
        Error::Diverged { epoch, batch, .. } => assert_eq!((epoch, batch), (0, 0)),
        other => panic!("{other}"),
    }
}
