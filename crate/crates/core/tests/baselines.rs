mod common;

use fdrsvm::baselines::{train_central_dr_svm, train_fed_l2_svm, CentralDrConfig, FedBaselineConfig, FedVariant};
use fdrsvm::client::{build_dr_program, worst_case_risk_dual, ClientConfig};
use fdrsvm::metrics::evaluate;
use fdrsvm::solver::{solve, SolverConfig};
use fdrsvm::svm::{dot, DatasetView, GlobalModel, Label, LabeledSample, NormKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn central(eps: f64, kappa: f64, norm: NormKind) -> CentralDrConfig {
    CentralDrConfig {
        epsilon: eps,
        kappa,
        norm,
    }
}

fn two_clusters() -> DatasetView {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples = (0..40)
        .map(|i| {
            let y = if i % 2 == 0 { Label::Positive } else { Label::Negative };
            let c = if y == Label::Positive { 0.8 } else { 0.2 };
            let x = vec![c + rng.gen_range(-0.1..0.1), c + rng.gen_range(-0.1..0.1), 1.0];
            LabeledSample::new(x, y)
        })
        .collect();
    DatasetView::from_samples(samples).unwrap()
}

#[test]
fn huge_radius_gives_the_zero_model() {
    let data = &common::federated_synthetic(60, 3, 1, 1)[0];
    for norm in [NormKind::L1, NormKind::LInf] {
        let w = train_central_dr_svm(data, &central(1e3, 1.0, norm), &SolverConfig::default()).unwrap();
        assert!(w.w.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-4, "{norm:?}: {:?}", w.w);
    }
}

#[test]
fn lp_optimum_equals_the_dual_risk_of_its_solution() {
    let data = &common::federated_synthetic(60, 3, 1, 2)[0];
    for norm in [NormKind::L1, NormKind::LInf] {
        for (eps, kappa) in [(1e-3, 1.0), (0.05, 0.25), (0.2, 0.0)] {
            let sol = solve(&build_dr_program(data, eps, kappa, norm, None).unwrap(), &SolverConfig::default());
            assert!(sol.is_optimal());
            let w = GlobalModel::new(sol.x_star[..data.dim()].to_vec());
            let dual = worst_case_risk_dual(&w, data, &ClientConfig::new(eps, kappa, norm)).unwrap();
            assert!((sol.objective - dual).abs() <= 1e-6, "{norm:?} {eps} {kappa}: {} vs {dual}", sol.objective);
        }
    }
}

#[test]
fn optimum_is_not_beaten_by_perturbations() {
    let data = &common::federated_synthetic(50, 2, 1, 3)[0];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for norm in [NormKind::L1, NormKind::LInf] {
        let cfg = ClientConfig::new(0.02, 0.5, norm);
        let w = train_central_dr_svm(data, &central(0.02, 0.5, norm), &SolverConfig::default()).unwrap();
        let opt = worst_case_risk_dual(&w, data, &cfg).unwrap();
        for _ in 0..200 {
            let scale = 10f64.powf(rng.gen_range(-4.0..0.0));
            let moved = GlobalModel::new(w.w.iter().map(|v| v + scale * rng.gen_range(-1.0..1.0)).collect());
            assert!(worst_case_risk_dual(&moved, data, &cfg).unwrap() >= opt - 1e-7);
        }
    }
}

#[test]
fn separable_clusters_are_classified_perfectly() {
    let data = two_clusters();
    let w = train_central_dr_svm(&data, &central(1e-4, 1.0, NormKind::L1), &SolverConfig::default()).unwrap();
    assert_eq!(evaluate(&w, &data).unwrap().f1, 1.0);
}

/// Plain full-batch subgradient descent on `1/N sum hinge + c ||w||^2`.
fn direct_descent(data: &DatasetView, gamma0: f64, rounds: usize) -> Vec<Vec<f64>> {
    let c = 1.0 / (10.0 * data.len() as f64);
    let inv = 1.0 / data.len() as f64;
    let mut w = vec![0.0; data.dim()];
    let mut out = Vec::new();
    for t in 1..=rounds {
        let mut g: Vec<f64> = w.iter().map(|wi| 2.0 * c * wi).collect();
        for s in data.samples() {
            let y = s.y.sign();
            if 1.0 - y * dot(&w, &s.x) > 0.0 {
                for (gi, xi) in g.iter_mut().zip(&s.x) {
                    *gi -= inv * y * xi;
                }
            }
        }
        let step = gamma0 / t as f64;
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= step * gi;
        }
        out.push(w.clone());
    }
    out
}

#[test]
fn single_client_fedsgd_is_subgradient_descent() {
    let data = common::federated_synthetic(50, 3, 1, 4);
    let run = train_fed_l2_svm(&data, &FedBaselineConfig::new(FedVariant::FedSGD, 0.5, 30), 1).unwrap();
    assert_eq!(run.snapshots, direct_descent(&data[0], 0.5, 30));
}

#[test]
fn fedprox_without_proximal_weight_is_fedavg() {
    let data = common::federated_synthetic(80, 3, 4, 5);
    let avg = FedBaselineConfig::new(FedVariant::FedAvg, 0.1, 20);
    let mut prox = FedBaselineConfig::new(FedVariant::FedProx, 0.1, 20);
    prox.prox_mu = 0.0;
    assert_eq!(train_fed_l2_svm(&data, &avg, 9).unwrap(), train_fed_l2_svm(&data, &prox, 9).unwrap());
    prox.prox_mu = 1.0;
    assert_ne!(train_fed_l2_svm(&data, &avg, 9).unwrap(), train_fed_l2_svm(&data, &prox, 9).unwrap());
}

#[test]
fn one_epoch_full_batch_fedavg_is_fedsgd() {
    let data = common::federated_synthetic(80, 3, 4, 6);
    let mut avg = FedBaselineConfig::new(FedVariant::FedAvg, 0.3, 15);
    avg.local_epochs = 1;
    avg.batch_fraction = 1.0;
    let sgd = FedBaselineConfig::new(FedVariant::FedSGD, 0.3, 15);
    assert_eq!(train_fed_l2_svm(&data, &avg, 1).unwrap(), train_fed_l2_svm(&data, &sgd, 2).unwrap());
}

#[test]
fn fedavg_learns_separable_clusters() {
    let data = two_clusters();
    let halves = [data.subset(&(0..20).collect::<Vec<_>>()), data.subset(&(20..40).collect::<Vec<_>>())];
    let best = [20, 60, 100]
        .iter()
        .map(|&t| {
            let run = train_fed_l2_svm(&halves, &FedBaselineConfig::new(FedVariant::FedAvg, 1.0, t), 0).unwrap();
            evaluate(&run.model, &data).unwrap().f1
        })
        .fold(0.0, f64::max);
    assert!(best >= 0.95, "{best}");
}

#[test]
fn runs_are_seed_deterministic() {
    let data = common::federated_synthetic(80, 3, 2, 7);
    let cfg = FedBaselineConfig::new(FedVariant::FedProx, 0.1, 10);
    assert_eq!(train_fed_l2_svm(&data, &cfg, 4).unwrap(), train_fed_l2_svm(&data, &cfg, 4).unwrap());
    assert_ne!(train_fed_l2_svm(&data, &cfg, 4).unwrap(), train_fed_l2_svm(&data, &cfg, 5).unwrap());
}
