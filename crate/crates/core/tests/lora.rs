mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subspace_icl::attention::{lora_analytic_adapters, optimal_weights_task, AttentionWeights, LoraAdapters, PromptBatch};
use subspace_icl::geometry::{build_covariance, haar_orthogonal, CovarianceModel, OrthonormalBasis};
use subspace_icl::lora::*;
use subspace_icl::Error;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.random_range(-1.0..1.0))
}

fn random_batches(rng: &mut ChaCha8Rng, d: usize, m: usize, count: usize) -> Vec<PromptBatch> {
    (0..count)
        .map(|_| {
            PromptBatch::new(
                random_matrix(rng, m, d, 1.0),
                DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0)),
                DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)),
                rng.random_range(-1.0..1.0),
            )
            .unwrap()
        })
        .collect()
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (d, k) = (4, 2);
    for _ in 0..10 {
        let weights = AttentionWeights {
            wq: random_matrix(&mut rng, d + 1, d + 1, 0.5),
            wk: random_matrix(&mut rng, d + 1, d + 1, 0.5),
            wv: random_matrix(&mut rng, d + 1, d + 1, 0.5),
            p: DVector::from_fn(d + 1, |_, _| rng.random_range(-1.0..1.0)),
        };
        let ad = LoraAdapters::new(random_matrix(&mut rng, d + 1, k, 0.5), random_matrix(&mut rng, d + 1, k, 0.5)).unwrap();
        let batches = random_batches(&mut rng, d, 7, 3);
        let (g1, g2) = batch_gradient(&weights, &ad, &batches).unwrap();
        let scale = ad.b1.amax().max(ad.b2.amax());
        let h = 1e-6 * scale;
        for which in 0..2 {
            let analytic = if which == 0 { &g1 } else { &g2 };
            let mut fd = DMatrix::zeros(d + 1, k);
            for i in 0..d + 1 {
                for j in 0..k {
                    let mut plus = ad.clone();
                    let mut minus = ad.clone();
                    let (p, mi) = if which == 0 { (&mut plus.b1, &mut minus.b1) } else { (&mut plus.b2, &mut minus.b2) };
                    p[(i, j)] += h;
                    mi[(i, j)] -= h;
                    fd[(i, j)] = (batch_loss(&weights, &plus, &batches).unwrap() - batch_loss(&weights, &minus, &batches).unwrap()) / (2.0 * h);
                }
            }
            let rel = (analytic - &fd).norm() / analytic.norm().max(1e-12);
            assert!(rel < 1e-5, "factor {which}: relative error {rel}");
        }
    }
}

#[test]
fn init_is_balanced_scaled_frame() {
    let ad = init_adapters(20, 5, 0.01, 3).unwrap();
    assert_eq!(ad.b1, ad.b2);
    assert!(ad.b1.row(20).iter().all(|v| *v == 0.0));
    let top = ad.b1.rows(0, 20) / 0.01;
    assert!((top.transpose() * &top - DMatrix::<f64>::identity(5, 5)).norm() < 1e-10);
    assert!((ad.b1.norm() - 0.01 * 5f64.sqrt()).abs() < 1e-14);
    assert!(matches!(init_adapters(4, 5, 0.01, 0), Err(Error::RankTooLarge { .. })));
}

#[test]
fn spectrum_of_analytic_and_zero_adapters() {
    let f = frames(2);
    let ow = optimal_weights_task(&build_covariance(&f.single(1e-6)).unwrap(), 0.0, 250).unwrap();
    let ad = lora_analytic_adapters(&f.up, 250, 1e-6, ow.m_s).unwrap();
    let lambda = subspace_icl::attention::lora_lambda(250, 1e-6, ow.m_s, Default::default());
    let (s1, s2) = adapter_spectrum(&ad);
    assert_eq!(s1.len(), R);
    for s in s1.iter().chain(&s2) {
        assert!((s - lambda.sqrt()).abs() < 1e-12);
    }
    assert!(verify_learned_vs_analytic(&ad, &f.up, R).unwrap() < 1e-10);
    let (z1, _) = adapter_spectrum(&LoraAdapters::zeros(D, 3));
    assert!(z1.iter().all(|v| *v == 0.0));
    assert!(matches!(verify_learned_vs_analytic(&LoraAdapters::zeros(D, 5), &f.up, R), Err(Error::RankDeficient { .. })));
}

#[test]
fn random_adapters_have_typical_error() {
    // E‖P − P̂‖²/r for independent uniform r-planes in R^d is 2(1 − r/d).
    let f = frames(3);
    let trials = 400;
    let mut total = 0.0;
    for s in 0..trials {
        let q = haar_orthogonal(D, 10_000 + s).unwrap();
        let mut b = DMatrix::zeros(D + 1, R);
        b.view_mut((0, 0), (D, R)).copy_from(&q.columns(0, R));
        let ad = LoraAdapters::new(b.clone(), b).unwrap();
        total += verify_learned_vs_analytic(&ad, &f.up, R).unwrap();
    }
    let mean = total / trials as f64;
    assert!((mean - 1.5).abs() < 0.3, "{mean}");
}

fn setup(seed: u64) -> (AttentionWeights, TrainConfig, OrthonormalBasis) {
    let f = frames(seed);
    let eps = 1e-6;
    let n = 200;
    let ow = optimal_weights_task(&build_covariance(&f.single(eps)).unwrap(), 0.0, n).unwrap();
    let cfg = TrainConfig::new(CovarianceModel::SingleSubspace { basis: f.u2r(), eps }, f.up.clone(), n, seed);
    (ow.weights, cfg, f.u2r())
}

#[test]
fn zero_learning_rate_keeps_state() {
    let (w, mut cfg, _) = setup(4);
    cfg.learning_rate = 0.0;
    cfg.iterations = 50;
    cfg.snapshot_stride = 10;
    let before = w.clone();
    let tr = train_lora(&w, &cfg).unwrap();
    assert_eq!(w, before);
    assert_eq!(tr.iterations_run, 50);
    assert!(tr.target_errors.windows(2).all(|p| p[0] == p[1]));
    let init = init_adapters(D, R, 0.01, cfg.base_seed).unwrap();
    assert_eq!(tr.snapshots[0], (0, init.clone()));
    assert_eq!(tr.snapshots.len(), 5);
    assert_eq!(tr.final_adapters, init);
}

#[test]
fn training_recovers_orthogonal_subspace() {
    let (w, cfg, _) = setup(5);
    let frozen = w.clone();
    let tr = train_lora(&w, &cfg).unwrap();
    assert_eq!(w, frozen);
    assert!(tr.losses.iter().all(|l| l.is_finite()));
    assert!(tr.final_target_error() < 0.1, "{}", tr.final_target_error());
    assert!(tr.target_errors[0] > 1.0);
}

#[test]
fn rank_2r_adapters_concentrate_on_orthogonal_subspace() {
    let (w, mut cfg, u2r) = setup(6);
    cfg.adapter_rank = 2 * R;
    cfg.secondary_target = Some(u2r);
    cfg.early_stop = None;
    cfg.iterations = 3_000;
    let tr = train_lora(&w, &cfg).unwrap();
    assert!(tr.final_target_error() < tr.final_secondary_error().unwrap());
    let (s1, s2) = adapter_spectrum(&tr.final_adapters);
    assert!(s1[R] / s1[R - 1] < 0.2 && s2[R] / s2[R - 1] < 0.2, "{s1:?} {s2:?}");
}

#[test]
fn divergence_reports_iteration() {
    let (w, mut cfg, _) = setup(7);
    cfg.learning_rate = 50.0;
    cfg.init_scale = 1.0;
    cfg.early_stop = None;
    match train_lora(&w, &cfg) {
        Err(Error::Divergence { iteration }) => assert!(iteration < cfg.iterations),
        other => panic!("expected divergence, got {:?}", other.map(|t| t.final_target_error())),
    }
}

#[test]
fn config_validation() {
    let (w, mut cfg, _) = setup(8);
    cfg.batch_size = 0;
    assert!(matches!(train_lora(&w, &cfg), Err(Error::Configuration(_))));
}
