use rand::Rng;

use super::*;
use crate::autodiff::gradient_check;
use crate::data::{synth_corridor, PreprocessOptions, SynthConfig};
use crate::rng::{stream, substream};

fn small(input_dim: usize, seed: u64) -> VaeConfig {
    VaeConfig {
        encoder_hidden: vec![7, 6],
        latent: 3,
        decoder_hidden: vec![6],
        predictor_hidden: vec![8, 8],
        batch_size: 32,
        seed,
        ..VaeConfig::new(input_dim)
    }
}

fn random_rows(n: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = stream(seed, Stream::Synthetic);
    Tensor::from_vec(&[n, d], (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn synthetic(steps: usize) -> (Tensor, Vec<[f64; 2]>) {
    let ds = synth_corridor(&SynthConfig {
        steps,
        ..SynthConfig::default()
    })
    .unwrap()
    .preprocess(&PreprocessOptions {
        normalize_rssi: true,
        ..PreprocessOptions::default()
    });
    let all: Vec<usize> = (0..ds.len()).collect();
    (ds.inputs(&all), ds.targets(&all).unwrap())
}

#[test]
fn paper_shapes() {
    let vae = Vae::build(VaeConfig::new(520)).unwrap();
    let x = random_rows(2, 520, 0);
    let lg = vae.encode(&x).unwrap();
    assert_eq!((lg[0].mu.len(), lg[0].sigma.len()), (5, 5));
    let z = Tensor::from_vec(&[1, 5], lg[0].mu.clone());
    assert_eq!(vae.decode(&z).unwrap().shape(), &[1, 520]);
    let m1 = Predictor::new(PredictorKind::M1, &vae.config).unwrap();
    assert_eq!(m1.input_width(), 5);
    let m2 = Predictor::new(PredictorKind::M2, &vae.config).unwrap();
    assert_eq!(m2.input_width(), 10);
    let only = VaeConfig {
        m2_input: M2Input::LatentOnly,
        ..VaeConfig::new(520)
    };
    assert_eq!(Predictor::new(PredictorKind::M2, &only).unwrap().input_width(), 5);
}

#[test]
fn config_validation() {
    let base = VaeConfig::new(10);
    assert!(Vae::build(VaeConfig {
        latent: 0,
        ..base.clone()
    })
    .is_err());
    assert!(Vae::build(VaeConfig {
        dropout: 1.0,
        ..base.clone()
    })
    .is_err());
    assert!(Vae::build(VaeConfig {
        sigma_y: 0.0,
        ..base.clone()
    })
    .is_err());
    assert!(Vae::build(VaeConfig { samples: 0, ..base }).is_err());
}

#[test]
fn encoding_is_deterministic_and_checked() {
    let vae = Vae::build(small(6, 1)).unwrap();
    let x = random_rows(4, 6, 1);
    let a = vae.encode(&x).unwrap();
    assert_eq!(a, vae.encode(&x).unwrap());
    a.iter().for_each(|g| g.validate().unwrap());
    assert!(vae.encode(&random_rows(4, 5, 1)).is_err());
    let z = Tensor::from_vec(&[1, 3], vec![0.1, -0.2, 0.3]);
    assert_eq!(vae.decode(&z).unwrap(), vae.decode(&z).unwrap());
    assert!(vae.decode(&Tensor::from_vec(&[1, 2], vec![0.0, 0.0])).is_err());
}

#[test]
fn kl_reference_values() {
    for dim in [1, 3, 8] {
        let g = LatentGaussian {
            mu: vec![0.0; dim],
            sigma: vec![1.0; dim],
        };
        assert_eq!(kl_term(&g), 0.0);
    }
    let one = LatentGaussian {
        mu: vec![1.0],
        sigma: vec![1.0],
    };
    assert!((kl_term(&one) - 0.5).abs() <= 1e-12);
}

#[test]
fn kl_is_nonnegative() {
    let mut rng = stream(3, Stream::Synthetic);
    for _ in 0..1000 {
        let g = LatentGaussian {
            mu: (0..4).map(|_| rng.random_range(-3.0..3.0)).collect(),
            sigma: (0..4).map(|_| rng.random_range(0.05..4.0)).collect(),
        };
        assert!(kl_term(&g) > 0.0);
    }
}

#[test]
fn kl_matches_monte_carlo() {
    let g = LatentGaussian {
        mu: vec![0.8, -0.5, 1.2],
        sigma: vec![0.6, 1.5, 0.9],
    };
    let mut rng = stream(0, Stream::Reparameterize);
    let n = 100_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let z = reparameterize(&g, &mut rng);
        // log q(z) − log p(z); the 2π terms cancel
        let log_q: f64 = z
            .iter()
            .zip(&g.mu)
            .zip(&g.sigma)
            .map(|((z, m), s)| -s.ln() - 0.5 * ((z - m) / s).powi(2))
            .sum();
        let log_p: f64 = z.iter().map(|z| -0.5 * z * z).sum();
        acc += log_q - log_p;
    }
    let mc = acc / n as f64;
    let exact = kl_term(&g);
    assert!(((mc - exact) / exact).abs() < 0.01, "{mc} vs {exact}");
}

#[test]
fn reparameterization_moments() {
    let g = LatentGaussian {
        mu: vec![1.5, -2.0],
        sigma: vec![0.5, 2.0],
    };
    assert_eq!(reparameterize_with(&g, &[0.0, 0.0]), g.mu);
    let mut rng = stream(1, Stream::Reparameterize);
    let n = 100_000;
    let draws: Vec<Vec<f64>> = (0..n).map(|_| reparameterize(&g, &mut rng)).collect();
    for i in 0..2 {
        let mean = draws.iter().map(|z| z[i]).sum::<f64>() / n as f64;
        let var = draws.iter().map(|z| (z[i] - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - g.mu[i]).abs() < 0.02 * g.sigma[i]);
        assert!((var.sqrt() / g.sigma[i] - 1.0).abs() < 0.02);
    }
}

#[test]
fn encoder_decoder_and_elbo_gradients() {
    for seed in 0..4 {
        let vae = Vae::build(small(6, seed)).unwrap();
        let x = random_rows(5, 6, seed);
        let eps = normal_tensor(5, 3, &mut stream(seed, Stream::Reparameterize));

        let mut g = Graph::new();
        let xn = g.input(x.clone());
        let enc = vae.encode_graph(&mut g, Bind::trainable(&vae.params), xn).unwrap();
        let both = g.concat_cols(&[enc.mu, enc.half_log_var]).unwrap();
        let sq = g.square(both).unwrap();
        let loss = g.sum(sq).unwrap();
        let enc_report = gradient_check(&mut g, loss, 1e-6, 1e-4).unwrap();

        let mut g = Graph::new();
        let z = g.input(eps.clone());
        let out = vae.decode_graph(&mut g, Bind::trainable(&vae.params), z).unwrap();
        let sq = g.square(out).unwrap();
        let loss = g.sum(sq).unwrap();
        let dec_report = gradient_check(&mut g, loss, 1e-6, 1e-4).unwrap();

        let mut g = Graph::new();
        let e = vae.elbo_graph(&mut g, Bind::trainable(&vae.params), x, eps).unwrap();
        let elbo_report = gradient_check(&mut g, e.loss, 1e-6, 1e-4).unwrap();

        if enc_report.kink_hits + dec_report.kink_hits + elbo_report.kink_hits > 0 {
            continue;
        }
        assert!(enc_report.passed(), "{enc_report}");
        assert!(dec_report.passed(), "{dec_report}");
        assert!(elbo_report.passed(), "{elbo_report}");
        return;
    }
    panic!("every sample point hit a kink");
}

#[test]
fn reparameterized_gradient_wrt_mean_matches_finite_differences() {
    // common random numbers: ε is fixed while μ and log σ are perturbed
    let mut g = Graph::new();
    let mu = g.param("mu", &Tensor::from_vec(&[2, 3], vec![0.3, -0.2, 0.5, 1.0, 0.0, -0.7]));
    let hlv = g.param("hlv", &Tensor::from_vec(&[2, 3], vec![-0.1, 0.2, 0.0, 0.3, -0.4, 0.1]));
    let vae = Vae::build(small(4, 0)).unwrap();
    let eps = normal_tensor(2, 3, &mut stream(0, Stream::Reparameterize));
    let z = vae
        .sample_graph(&mut g, Encoded { mu, half_log_var: hlv }, eps)
        .unwrap();
    let out = vae.decode_graph(&mut g, Bind::trainable(&vae.params), z).unwrap();
    let sq = g.square(out).unwrap();
    let loss = g.mean(sq).unwrap();
    let report = gradient_check(&mut g, loss, 1e-6, 1e-4).unwrap();
    assert!(report.passed() || report.kink_hits > 0, "{report}");
    assert!(report.blocks.iter().any(|b| b.name == "mu"));
}

#[test]
fn standard_posterior_logs_zero_kl() {
    let mut vae = Vae::build(small(6, 2)).unwrap();
    let last = "encoder.2";
    let wshape = vae.params.tensor(&format!("{last}.w")).shape().to_vec();
    vae.params.insert(format!("{last}.w"), Tensor::zeros(&wshape));
    vae.params.insert(format!("{last}.b"), Tensor::zeros(&[6]));
    let mut g = Graph::new();
    let eps = normal_tensor(4, 3, &mut stream(0, Stream::Reparameterize));
    let e = vae
        .elbo_graph(&mut g, Bind::trainable(&vae.params), random_rows(4, 6, 0), eps)
        .unwrap();
    assert_eq!(g.scalar(e.kl), 0.0);
}

#[test]
fn unsupervised_training_reduces_loss_and_decomposes() {
    let (x, _) = synthetic(300);
    let mut vae = Vae::build(small(20, 0)).unwrap();
    vae.config.optimizer = OptimizerConfig::adam(3e-3);
    let trace = vae.train_unsupervised_epochs(&x, 100).unwrap();
    assert_eq!(trace.components, vec!["reconstruction", "kl"]);
    for e in &trace.epochs {
        let (r, k) = (e.components[0], e.components[1]);
        assert!(k >= 0.0);
        assert!((e.loss - (r + k)).abs() <= 1e-9 * e.loss.abs().max(1.0));
    }
    assert!(trace.last_loss().unwrap() < trace.first_loss().unwrap());
}

#[test]
fn predictors_leave_the_vae_untouched_and_learn() {
    let (x, y) = synthetic(300);
    let mut vae = Vae::build(small(20, 0)).unwrap();
    vae.config.optimizer = OptimizerConfig::adam(3e-3);
    vae.train_unsupervised_epochs(&x, 20).unwrap();
    let before = (vae.encoder_digest(), vae.params.digest());
    for kind in [PredictorKind::M1, PredictorKind::M2] {
        let mut p = Predictor::new(kind, &vae.config).unwrap();
        let trace = p.fit(&vae, &x, &y, 100, 32, 0, OptimizerConfig::adam(1e-3)).unwrap();
        assert!(trace.last_loss().unwrap() < trace.first_loss().unwrap(), "{kind}");
        assert_eq!((vae.encoder_digest(), vae.params.digest()), before);
    }
    let mut p = Predictor::new(PredictorKind::M1, &vae.config).unwrap();
    assert!(p.fit(&vae, &x, &[], 1, 32, 0, OptimizerConfig::adam(1e-3)).is_err());
}

#[test]
fn sigma_y_scales_gradients_by_inverse_square() {
    let vae = Vae::build(small(6, 0)).unwrap();
    let config = VaeConfig {
        dropout: 0.0,
        ..vae.config.clone()
    };
    let mut p = Predictor::new(PredictorKind::M2, &config).unwrap();
    let x = random_rows(5, 6, 2);
    let y = random_rows(5, 2, 3);
    let grads = |p: &Predictor| {
        let mut rng = substream(0, Stream::Dropout, 0);
        let (g, loss) = p.loss_graph(&vae, &p.params, x.clone(), y.clone(), &mut rng).unwrap();
        (g.scalar(loss), g.backward(loss).unwrap())
    };
    let (l1, g1) = grads(&p);
    p.set_sigma_y(2.0 * p.sigma_y());
    let (l2, g2) = grads(&p);
    assert!((l1 / l2 - 4.0).abs() < 1e-12);
    for (name, a) in g1.iter() {
        let b = g2.get(name).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - 4.0 * v).abs() <= 1e-12 * u.abs().max(1e-300), "{name}");
        }
    }
}

#[test]
fn m2_losses_differ_across_noise_streams() {
    let vae = Vae::build(small(6, 0)).unwrap();
    let p = Predictor::new(PredictorKind::M2, &vae.config).unwrap();
    let (x, y) = (random_rows(5, 6, 2), random_rows(5, 2, 3));
    let loss = |i| {
        let mut rng = substream(0, Stream::Dropout, i);
        let (g, l) = p.loss_graph(&vae, &p.params, x.clone(), y.clone(), &mut rng).unwrap();
        g.scalar(l)
    };
    assert_ne!(loss(0), loss(1));
    assert_eq!(loss(0), loss(0));
}

#[test]
fn predictions_m1_deterministic_m2_collapses_without_spread() {
    let vae = Vae::build(small(6, 0)).unwrap();
    let x = random_rows(4, 6, 5);
    let m1 = Predictor::new(PredictorKind::M1, &vae.config).unwrap();
    let mut rng = stream(0, Stream::Evaluation);
    assert_eq!(
        m1.predict(&vae, &x, 1, &mut rng).unwrap(),
        m1.predict(&vae, &x, 1, &mut rng).unwrap()
    );

    let m2 = Predictor::new(PredictorKind::M2, &vae.config).unwrap();
    let latents: Vec<LatentGaussian> = vae
        .encode(&x)
        .unwrap()
        .into_iter()
        .map(|l| LatentGaussian {
            sigma: vec![0.0; l.mu.len()],
            ..l
        })
        .collect();
    let stochastic = m2.predict_from_latents(&latents, 7, &mut rng).unwrap();
    let input: Vec<f64> = latents.iter().flat_map(|l| l.mu.iter().chain(&l.mu).copied()).collect();
    let direct = m2.forward_eval(Tensor::from_vec(&[4, 6], input)).unwrap();
    for (a, b) in stochastic.iter().zip(&direct) {
        assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
    }
    assert!(m2.predict_from_latents(&latents, 0, &mut rng).is_err());
}

#[test]
fn m2_prediction_variance_shrinks_with_samples() {
    let vae = Vae::build(small(6, 0)).unwrap();
    let m2 = Predictor::new(PredictorKind::M2, &vae.config).unwrap();
    let latents = vec![LatentGaussian {
        mu: vec![0.2, -0.1, 0.4],
        sigma: vec![1.0, 1.0, 1.0],
    }];
    let mut rng = stream(0, Stream::Evaluation);
    let variance = |s: usize, rng: &mut StreamRng| {
        let xs: Vec<f64> = (0..100)
            .map(|_| m2.predict_from_latents(&latents, s, rng).unwrap()[0][0])
            .collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
    };
    let ratio = variance(10, &mut rng) / variance(1000, &mut rng);
    assert!(ratio > 100.0 / 3.0 && ratio < 300.0, "ratio {ratio}");
}

#[test]
fn latent_export_rows() {
    let mut ds = synth_corridor(&SynthConfig {
        steps: 40,
        ..SynthConfig::default()
    })
    .unwrap()
    .preprocess(&PreprocessOptions::default());
    ds.records[0].meta.building = Some(1);
    ds.records[0].meta.floor = Some(3);
    let vae = Vae::build(small(20, 0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("latent.csv");
    assert_eq!(vae.write_latent_csv(&ds, &path).unwrap(), 40);
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 41);
    assert!(lines.iter().all(|l| l.split(',').count() == 3 + 2));
    assert!(lines[1].ends_with(",1,3"));
    assert!(lines[2].ends_with(",,"));
    let path2 = dir.path().join("latent2.csv");
    vae.write_latent_csv(&ds, &path2).unwrap();
    assert_eq!(text, std::fs::read_to_string(&path2).unwrap());
}
