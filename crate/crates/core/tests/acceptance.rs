//! Acceptance checks. Each criterion prints one `PASS`, `FAIL` or `SKIP`
//! line; the process exits nonzero if any criterion fails.
//!
//! Criterion 6 needs the public datasets and runs only when
//! `PROBLOC_TAMPERE_CSV` and/or `PROBLOC_UJI_CSV` point to them.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use probloc::autodiff::{gradient_check, GradCheckReport, Graph, NodeId};
use probloc::cmdrnn::{AutoencoderConfig, Cmdrnn, CmdrnnConfig, Variant};
use probloc::data::{
    load_csv, make_windows, synth_corridor, Dataset, PathWindow, PreprocessOptions, Schema, SynthConfig,
};
use probloc::eval::{
    argmin, compare_traces, labeled_fraction_table, next_location_baselines, next_location_network,
    next_location_split, optimizer_configs, semi_supervised_scores, sweep, write_sweep_csv, write_traces_csv,
    ModelKind, SemiSupervisedSetup, SweepParam,
};
use probloc::layers::{conv1d, dense, dropout, maxpool1d, mse_loss, Activation, CellKind, Mode, RecurrentCell};
use probloc::mdn::{nll, nll_loss, params_from_logits, sample_component, MixtureParams};
use probloc::params::{Bind, ParamStore};
use probloc::rng::{stream, Stream};
use probloc::vae::{kl_term, reparameterize, LatentGaussian, Vae, VaeConfig};
use probloc::Tensor;

type Criterion = (&'static str, fn() -> Outcome);

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 8] = [
        ("1 gradient integrity", gradient_integrity),
        ("2 analytic oracles", analytic_oracles),
        ("3 sampling laws", sampling_laws),
        ("4 desk-scale next-location", desk_next_location),
        ("5 desk-scale semi-supervised trend", desk_semi_supervised),
        ("6 public-data reproduction", public_data),
        ("7 determinism", determinism),
        ("8 sweep harness", sweep_harness),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{tag} criterion {name} ({secs:.1}s): {detail}");
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn normal(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect())
}

/// Weighted sum plus mean square of `y`, so every element gets a distinct
/// upstream gradient.
fn probe_loss(g: &mut Graph, y: NodeId, rng: &mut impl Rng) -> NodeId {
    let shape = g.shape(y).to_vec();
    let r = g.input(random(&shape, rng));
    let p = g.mul(y, r).unwrap();
    let p = g.sum(p).unwrap();
    let sq = g.square(y).unwrap();
    let sq = g.mean(sq).unwrap();
    g.add(p, sq).unwrap()
}

const TOL: f64 = 1e-4;

/// Builds a graph per seed until one avoids every ReLU kink and max-pool
/// tie, then checks it.
fn check_case(build: impl Fn(u64) -> (Graph, NodeId)) -> GradCheckReport {
    let mut last = None;
    for seed in 0..8 {
        let (mut g, loss) = build(seed);
        let report = gradient_check(&mut g, loss, 1e-6, TOL).unwrap();
        if report.kink_hits == 0 {
            return report;
        }
        last = Some(report);
    }
    last.unwrap()
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let mut cases: Vec<(String, GradCheckReport)> = Vec::new();

    for act in [
        Activation::Sigmoid,
        Activation::Relu,
        Activation::LeakyRelu,
        Activation::Tanh,
        Activation::Linear,
    ] {
        let r = check_case(|seed| {
            let mut rng = stream(seed, Stream::WeightInit);
            let mut g = Graph::new();
            let x = g.param("x", &random(&[3, 4], &mut rng));
            let w = g.param("w", &random(&[5, 4], &mut rng));
            let b = g.param("b", &random(&[5], &mut rng));
            let y = dense(&mut g, x, w, b, act).unwrap();
            let l = probe_loss(&mut g, y, &mut rng);
            (g, l)
        });
        cases.push((format!("dense {act:?}"), r));
    }
    let r = check_case(|seed| {
        let mut rng = stream(seed, Stream::WeightInit);
        let mut g = Graph::new();
        let x = g.param("x", &random(&[2, 11, 3], &mut rng));
        let w = g.param("w", &random(&[4, 5, 3], &mut rng));
        let b = g.param("b", &random(&[4], &mut rng));
        let y = conv1d(&mut g, x, w, Some(b), 2).unwrap();
        let y = g.sigmoid(y).unwrap();
        let y = maxpool1d(&mut g, y, 2, 2).unwrap();
        let y = g.relu(y).unwrap();
        let l = probe_loss(&mut g, y, &mut rng);
        (g, l)
    });
    cases.push(("conv1d + maxpool".into(), r));
    let r = check_case(|seed| {
        let mut rng = stream(seed, Stream::WeightInit);
        let mut g = Graph::new();
        let x = g.param("x", &random(&[4, 6], &mut rng));
        let mut drng = stream(seed, Stream::Dropout);
        let y = dropout(&mut g, x, 0.3, &mut Mode::Train(&mut drng)).unwrap();
        let l = probe_loss(&mut g, y, &mut rng);
        (g, l)
    });
    cases.push(("dropout".into(), r));
    for kind in [CellKind::Vanilla, CellKind::Lstm, CellKind::Gru] {
        let r = check_case(|seed| {
            let mut rng = stream(seed, Stream::WeightInit);
            let cell = RecurrentCell::new("cell", kind, 3, 4);
            let mut store = ParamStore::new();
            cell.init(&mut store, &mut rng);
            let mut g = Graph::new();
            let mut state = cell.zero_state(&mut g, 2);
            state.h = g.param("h0", &random(&[2, 4], &mut rng));
            if kind == CellKind::Lstm {
                state.c = Some(g.param("c0", &random(&[2, 4], &mut rng)));
            }
            for _ in 0..3 {
                let x = g.input(random(&[2, 3], &mut rng));
                state = cell.step(&mut g, Bind::trainable(&store), x, state).unwrap();
            }
            let l = probe_loss(&mut g, state.h, &mut rng);
            (g, l)
        });
        cases.push((format!("{kind:?} cell"), r));
    }
    let r = check_case(|seed| {
        let mut rng = stream(seed, Stream::WeightInit);
        let mut g = Graph::new();
        let p = g.param("p", &random(&[4, 2], &mut rng));
        let y = g.input(random(&[4, 2], &mut rng));
        let l = mse_loss(&mut g, p, y).unwrap();
        (g, l)
    });
    cases.push(("mse loss".into(), r));
    let r = check_case(|seed| {
        let mut rng = stream(seed, Stream::WeightInit);
        let mut g = Graph::new();
        let raw = g.param("raw", &random(&[4, 15], &mut rng));
        let t = g.input(random(&[4, 2], &mut rng));
        let l = nll_loss(&mut g, raw, t).unwrap();
        (g, l)
    });
    cases.push(("mdn nll loss".into(), r));
    let r = check_case(|seed| {
        let vae = Vae::build(VaeConfig {
            encoder_hidden: vec![7, 6],
            latent: 3,
            decoder_hidden: vec![6],
            seed,
            ..VaeConfig::new(6)
        })
        .unwrap();
        let mut rng = stream(seed, Stream::Synthetic);
        let x = random(&[5, 6], &mut rng);
        let eps = normal(&[5, 3], &mut stream(seed, Stream::Reparameterize));
        let mut g = Graph::new();
        let e = vae.elbo_graph(&mut g, Bind::trainable(&vae.params), x, eps).unwrap();
        (g, e.loss)
    });
    cases.push(("vae elbo".into(), r));
    for variant in [Variant::Cmdrnn, Variant::Cmdlstm, Variant::Cmdgru] {
        let r = check_case(|seed| {
            let model = Cmdrnn::build(CmdrnnConfig {
                filters: 4,
                feature_width: 6,
                hidden: 8,
                memory: 2,
                mixtures: 2,
                mdn_hidden: 6,
                seed,
                ..CmdrnnConfig::new(variant, 12)
            })
            .unwrap();
            let mut rng = stream(seed, Stream::Synthetic);
            let windows: Vec<PathWindow> = (0..3)
                .map(|i| PathWindow {
                    inputs: (0..2 * 12).map(|_| rng.random_range(0.0..1.0)).collect(),
                    len: 2,
                    target: [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
                    last: [0.5, 0.5],
                    path: 0,
                    start: i,
                })
                .collect();
            let refs: Vec<&PathWindow> = windows.iter().collect();
            model.loss_graph(&refs).unwrap()
        });
        cases.push((format!("end-to-end {variant}"), r));
    }

    let secs = start.elapsed().as_secs_f64();
    let worst = cases
        .iter()
        .max_by(|a, b| a.1.max_rel_error().total_cmp(&b.1.max_rel_error()))
        .unwrap();
    let bad: Vec<&str> = cases
        .iter()
        .filter(|(_, r)| !r.passed() || r.kink_hits > 0)
        .map(|(n, _)| n.as_str())
        .collect();
    verdict(
        bad.is_empty() && secs < 60.0,
        format!(
            "{} cases, worst {} at {:.2e} (tolerance {TOL:.0e}), {secs:.1}s of 60s{}",
            cases.len(),
            worst.0,
            worst.1.max_rel_error(),
            if bad.is_empty() {
                String::new()
            } else {
                format!(", failing: {}", bad.join(", "))
            }
        ),
    )
}

fn analytic_oracles() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    let single = MixtureParams {
        weights: vec![1.0],
        means: vec![[0.7, -1.3]],
        sigmas: vec![[1.0, 1.0]],
    };
    let direct = nll(&single, [0.7, -1.3]);
    let mut g = Graph::new();
    let raw = g.input(Tensor::from_vec(&[1, 5], vec![0.0, 0.7, -1.3, 0.0, 0.0]));
    let t = g.input(Tensor::from_vec(&[1, 2], vec![0.7, -1.3]));
    let l = nll_loss(&mut g, raw, t).unwrap();
    let graph = g.scalar(l);
    let target = (2.0 * PI).ln();
    let e = (direct - target).abs().max((graph - target).abs());
    ok &= e <= 1e-9;
    notes.push(format!("nll at mean off by {e:.1e}"));

    let std = LatentGaussian {
        mu: vec![0.0],
        sigma: vec![1.0],
    };
    let zero = kl_term(&std);
    ok &= zero == 0.0;
    let one = kl_term(&LatentGaussian {
        mu: vec![1.0],
        sigma: vec![1.0],
    });
    ok &= (one - 0.5).abs() <= 1e-12;
    notes.push(format!("kl standard {zero}, kl(mu=1) {one}"));

    let q = LatentGaussian {
        mu: vec![0.8, -0.5, 1.2],
        sigma: vec![0.6, 1.5, 0.9],
    };
    let mut rng = stream(0, Stream::Reparameterize);
    let n = 100_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let z = reparameterize(&q, &mut rng);
        for ((zi, m), s) in z.iter().zip(&q.mu).zip(&q.sigma) {
            let log_q = -s.ln() - 0.5 * ((zi - m) / s).powi(2);
            let log_p = -0.5 * zi * zi;
            acc += log_q - log_p;
        }
    }
    let mc = acc / n as f64;
    let exact = kl_term(&q);
    let rel = ((mc - exact) / exact).abs();
    ok &= rel < 0.01;
    notes.push(format!("kl {exact:.4} vs Monte-Carlo {mc:.4} ({:.2}%)", 100.0 * rel));
    verdict(ok, notes.join("; "))
}

fn sampling_laws() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let n = 100_000;

    let raw = [
        0.3, -1.0, 1.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
    ];
    let p = params_from_logits(&raw).unwrap();
    let mut rng = stream(0, Stream::MixtureSampling);
    let mut counts = [0usize; 3];
    for _ in 0..n {
        counts[sample_component(&p, &mut rng)] += 1;
    }
    let chi2: f64 = counts
        .iter()
        .zip(&p.weights)
        .map(|(&c, w)| {
            let e = w * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let p_value = 1.0 - ChiSquared::new(2.0).unwrap().cdf(chi2);
    ok &= p_value > 0.01;
    notes.push(format!("component chi-square {chi2:.2}, p = {p_value:.3}"));

    let q = LatentGaussian {
        mu: vec![1.5, -2.0],
        sigma: vec![0.5, 2.0],
    };
    let mut rng = stream(1, Stream::Reparameterize);
    let draws: Vec<Vec<f64>> = (0..n).map(|_| reparameterize(&q, &mut rng)).collect();
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        let mean = draws.iter().map(|z| z[i]).sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|z| (z[i] - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        worst = worst
            .max(((mean - q.mu[i]) / q.mu[i]).abs())
            .max((sd / q.sigma[i] - 1.0).abs());
    }
    ok &= worst < 0.02;
    notes.push(format!("reparameterized moments within {:.2}%", 100.0 * worst));

    let mut g = Graph::new();
    let x = g.input(Tensor::full(&[1, n], 1.0));
    let mut rng = stream(0, Stream::Dropout);
    let y = dropout(&mut g, x, 0.3, &mut Mode::Train(&mut rng)).unwrap();
    let keep = g.value(y).data().iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
    ok &= (keep - 0.7).abs() <= 0.01;
    notes.push(format!("dropout keep rate {keep:.4}"));
    verdict(ok, notes.join("; "))
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Corridor walk with longer, straighter steps than the generator default;
/// see the README for why.
fn next_location_data() -> Dataset {
    synth_corridor(&SynthConfig {
        aps: 20,
        steps: 2000,
        step_length: 4.0,
        turn_std: 0.15,
        ..SynthConfig::default()
    })
    .unwrap()
    .preprocess(&PreprocessOptions {
        standardize_rssi: true,
        ..PreprocessOptions::default()
    })
}

fn desk_next_location() -> Outcome {
    let start = Instant::now();
    let ds = next_location_data();
    let config = CmdrnnConfig {
        filters: 16,
        kernel: 5,
        stride: 2,
        pool: 2,
        feature_width: 32,
        hidden: 64,
        memory: 5,
        mixtures: 5,
        mdn_hidden: 64,
        epochs: 150,
        batch_size: 64,
        ..CmdrnnConfig::new(Variant::Cmdgru, ds.input_dim)
    };
    let (train, test) = next_location_split(&ds, config.memory, 0.8).unwrap();
    let (prev, knn) = next_location_baselines(&train, &test, 3, ds.scaler.as_ref()).unwrap();
    let mut rmses = Vec::new();
    for seed in SEEDS {
        let c = CmdrnnConfig { seed, ..config.clone() };
        match next_location_network(&c, &train, &test, ds.scaler.as_ref()) {
            Ok((s, _)) => rmses.push(s.rmse_original.unwrap()),
            Err(e) => return Outcome::Fail(format!("seed {seed}: {e}")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let m = mean(&rmses);
    let (p, k) = (prev.rmse_original.unwrap(), knn.rmse_original.unwrap());
    verdict(
        m < p && m < k && secs < 600.0,
        format!(
            "CMDGRU {m:.3} m (seeds {}) vs previous position {p:.3} m, k-NN {k:.3} m; {secs:.0}s of 600s",
            rmses.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(" ")
        ),
    )
}

fn desk_semi_supervised() -> Outcome {
    let ds = synth_corridor(&SynthConfig::default())
        .unwrap()
        .preprocess(&PreprocessOptions {
            standardize_rssi: true,
            ..PreprocessOptions::default()
        });
    let setup = SemiSupervisedSetup {
        vae: VaeConfig {
            encoder_hidden: vec![64, 64],
            latent: 5,
            decoder_hidden: vec![64],
            predictor_hidden: vec![64, 64, 64],
            dropout: 0.0,
            vae_epochs: 100,
            predictor_epochs: 200,
            ..VaeConfig::new(ds.input_dim)
        },
        labeled_fraction: 1.0,
        test_fraction: 0.2,
    };
    let fractions = [0.02, 0.1, 0.8];
    let reports = match labeled_fraction_table(&setup, &ds, &fractions, &SEEDS, 0, 3) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let mean_of = |model: &str, f: f64| {
        reports
            .iter()
            .find(|r| r.model == model && r.variable.as_ref().map(|v| v.1) == Some(f))
            .map(|r| r.summary.mean)
            .unwrap()
    };
    let series = |model: &str| fractions.map(|f| mean_of(model, f));
    let (m1, m2, knn) = (series("m1"), series("m2"), series("knn"));
    let decreasing = |s: [f64; 3]| s[0] > s[1] && s[1] > s[2];
    let ok = decreasing(m1) && decreasing(m2) && m1[0] < knn[0] && m2[0] < knn[0];
    let fmt = |s: [f64; 3]| s.map(|v| format!("{v:.3}")).join(" / ");
    verdict(
        ok,
        format!(
            "mean RMSE at 2% / 10% / 80%: M1 {}, M2 {}, k-NN {}",
            fmt(m1),
            fmt(m2),
            fmt(knn)
        ),
    )
}

fn env_path(key: &str) -> Option<PathBuf> {
    std::env::var_os(key).map(PathBuf::from).filter(|p| p.exists())
}

fn within(value: f64, reference: f64) -> bool {
    (value - reference).abs() <= 0.3 * reference
}

/// Full-size CMDGRU per Tampere path, and M1 on UJIIndoorLoc at 80%
/// labeled. Outside the tolerance this is reported but does not fail the
/// suite, since the original path selection and split are unknown.
fn public_data() -> Outcome {
    let tampere = env_path("PROBLOC_TAMPERE_CSV");
    let uji = env_path("PROBLOC_UJI_CSV");
    if tampere.is_none() && uji.is_none() {
        return Outcome::Skip("set PROBLOC_TAMPERE_CSV and/or PROBLOC_UJI_CSV to run".into());
    }
    let mut notes = Vec::new();
    if let Some(path) = tampere {
        let paths: Vec<u32> = std::env::var("PROBLOC_TAMPERE_PATHS")
            .unwrap_or_else(|_| "1,2".into())
            .split(',')
            .filter_map(|s| s.trim().parse().ok())
            .collect();
        let reference = [6.25, 8.67];
        match load_csv(&path, &Schema::Tampere) {
            Ok(raw) => {
                for (i, id) in paths.iter().take(2).enumerate() {
                    let keep: Vec<usize> = (0..raw.len())
                        .filter(|&r| raw.records[r].meta.path == Some(*id))
                        .collect();
                    if keep.is_empty() {
                        notes.push(format!("Tampere path {id}: no records"));
                        continue;
                    }
                    let ds = raw.subset(&keep).preprocess(&PreprocessOptions::default());
                    let config = CmdrnnConfig::new(Variant::Cmdgru, ds.input_dim);
                    let rmses: Vec<f64> = match next_location_split(&ds, config.memory, 0.8) {
                        Ok((train, test)) => SEEDS
                            .iter()
                            .filter_map(|&seed| {
                                let c = CmdrnnConfig { seed, ..config.clone() };
                                next_location_network(&c, &train, &test, ds.scaler.as_ref())
                                    .ok()
                                    .and_then(|(s, _)| s.rmse_original)
                            })
                            .collect(),
                        Err(_) => Vec::new(),
                    };
                    if rmses.is_empty() {
                        notes.push(format!("Tampere path {id}: every seed failed"));
                        continue;
                    }
                    let m = mean(&rmses);
                    let tag = if within(m, reference[i]) { "within" } else { "OUTSIDE" };
                    notes.push(format!(
                        "Tampere path {id} CMDGRU {m:.2} m vs {} m ({tag} 30%)",
                        reference[i]
                    ));
                }
            }
            Err(e) => notes.push(format!("Tampere load failed: {e}")),
        }
    }
    if let Some(path) = uji {
        match load_csv(&path, &Schema::Ujiindoorloc) {
            Ok(raw) => {
                let ds = raw.preprocess(&PreprocessOptions::default());
                let setup = SemiSupervisedSetup {
                    vae: VaeConfig::new(ds.input_dim),
                    labeled_fraction: 0.8,
                    test_fraction: 0.2,
                };
                let scores: Vec<f64> = SEEDS
                    .iter()
                    .filter_map(|&seed| {
                        semi_supervised_scores(&setup, &ds, 0, seed, 3, &[ModelKind::M1])
                            .ok()
                            .map(|s| s[0].rmse)
                    })
                    .collect();
                if scores.is_empty() {
                    notes.push("UJIIndoorLoc: every seed failed".into());
                } else {
                    let m = mean(&scores);
                    let tag = if within(m, 0.077) { "within" } else { "OUTSIDE" };
                    notes.push(format!("UJIIndoorLoc M1 at 80% {m:.3} vs 0.077 ({tag} 30%)"));
                }
            }
            Err(e) => notes.push(format!("UJIIndoorLoc load failed: {e}")),
        }
    }
    Outcome::Pass(format!("reported only: {}", notes.join("; ")))
}

fn determinism() -> Outcome {
    let ds = synth_corridor(&SynthConfig {
        steps: 300,
        aps: 10,
        ..SynthConfig::default()
    })
    .unwrap()
    .preprocess(&PreprocessOptions {
        standardize_rssi: true,
        ..PreprocessOptions::default()
    });
    let windows = make_windows(&ds, 3).unwrap();
    let cmdrnn_trace = || {
        let mut m = Cmdrnn::build(CmdrnnConfig {
            filters: 4,
            feature_width: 8,
            hidden: 8,
            memory: 3,
            mixtures: 3,
            mdn_hidden: 8,
            epochs: 10,
            seed: 11,
            ..CmdrnnConfig::new(Variant::Cmdlstm, ds.input_dim)
        })
        .unwrap();
        m.fit(&windows).unwrap().trace.losses()
    };
    let ae_trace = || {
        let mut m = Cmdrnn::build(CmdrnnConfig {
            feature_width: 8,
            hidden: 8,
            memory: 3,
            mixtures: 3,
            mdn_hidden: 8,
            autoencoder: AutoencoderConfig {
                hidden: 8,
                inner: 6,
                code: 4,
                epochs: 3,
            },
            epochs: 10,
            seed: 11,
            ..CmdrnnConfig::new(Variant::AeRnnMdn, ds.input_dim)
        })
        .unwrap();
        m.fit(&windows).unwrap().trace.losses()
    };
    let x = ds.inputs(&(0..ds.len()).collect::<Vec<_>>());
    let vae_trace = || {
        let mut v = Vae::build(VaeConfig {
            encoder_hidden: vec![16],
            latent: 3,
            decoder_hidden: vec![16],
            dropout: 0.3,
            vae_epochs: 10,
            seed: 11,
            ..VaeConfig::new(ds.input_dim)
        })
        .unwrap();
        v.train_unsupervised(&x).unwrap().losses()
    };
    let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
    let mut notes = Vec::new();
    let mut ok = true;
    for (name, f) in [
        ("cmdlstm", &cmdrnn_trace as &dyn Fn() -> Vec<f64>),
        ("ae+rnn+mdn", &ae_trace),
        ("vae", &vae_trace),
    ] {
        let a = f();
        let b = f();
        let same = a.len() == 10 && bits(a) == bits(b);
        ok &= same;
        notes.push(format!("{name} {}", if same { "identical" } else { "differs" }));
    }
    verdict(ok, format!("10-epoch loss traces on repeat: {}", notes.join(", ")))
}

fn sweep_harness() -> Outcome {
    let ds = synth_corridor(&SynthConfig {
        steps: 400,
        aps: 10,
        ..SynthConfig::default()
    })
    .unwrap()
    .preprocess(&PreprocessOptions {
        standardize_rssi: true,
        ..PreprocessOptions::default()
    });
    let base = CmdrnnConfig {
        filters: 4,
        kernel: 3,
        stride: 1,
        feature_width: 8,
        hidden: 8,
        memory: 3,
        mixtures: 3,
        mdn_hidden: 8,
        epochs: 4,
        ..CmdrnnConfig::new(Variant::Cmdrnn, ds.input_dim)
    };
    let seeds = [0, 1, 2];
    let dir = tempfile::tempdir().unwrap();
    let mut notes = Vec::new();
    let mut ok = true;
    for (param, values) in [
        (SweepParam::MixtureCount, vec![1, 5, 10, 30]),
        (SweepParam::MemoryLength, vec![1, 3, 5, 8]),
    ] {
        let run = || sweep(&base, &ds, 0.8, param, &values, &seeds, 1);
        let (a, b) = match (run(), run()) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return Outcome::Fail(format!("{}: {e}", param.name())),
        };
        let path = dir.path().join(format!("{}.csv", param.name()));
        write_sweep_csv(&a, &path).unwrap();
        let csv = std::fs::read_to_string(&path).unwrap();
        let rows = csv.lines().count() - 1;
        let header = csv.lines().next().unwrap_or_default() == "variable,value,mean_rmse,std_rmse,seeds_ok,best";
        let stable = argmin(&a) == argmin(&b) && a == b;
        ok &= rows == values.len() && header && stable;
        let best = argmin(&a).map(|i| values[i]).unwrap();
        notes.push(format!(
            "{} {rows} rows, best {best}, {}",
            param.name(),
            if stable { "stable" } else { "UNSTABLE" }
        ));
    }
    let traces = match compare_traces(&optimizer_configs(&base), &ds, 0.8) {
        Ok(t) => t,
        Err(e) => return Outcome::Fail(format!("optimizer comparison: {e}")),
    };
    let path = dir.path().join("traces.csv");
    write_traces_csv(&traces, &path).unwrap();
    let csv = std::fs::read_to_string(&path).unwrap();
    let emitted = csv.starts_with("epoch,rmsprop,adam") && csv.lines().count() == base.epochs + 1;
    ok &= emitted;
    let last = |i: usize| traces[i].1.last_loss().unwrap_or(f64::NAN);
    notes.push(format!(
        "optimizer traces {}, final loss rmsprop {:.3} vs adam {:.3}",
        if emitted { "emitted" } else { "MISSING" },
        last(0),
        last(1)
    ));
    verdict(ok, notes.join("; "))
}
