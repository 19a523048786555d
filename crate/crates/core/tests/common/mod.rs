#![allow(dead_code)]

use fdrsvm::solver::{ConvexProgram, ProgramBuilder};
use rand::Rng;

/// Random LP: box `[-u, u]^n` plus random cuts that keep the origin feasible.
pub fn random_box_lp(rng: &mut impl Rng) -> ConvexProgram {
    let n = rng.gen_range(1..=6);
    let cuts = rng.gen_range(0..=6);
    let mut b = ProgramBuilder::new(n);
    for j in 0..n {
        b.cost(j, rng.gen_range(-1.0..1.0));
        let u = rng.gen_range(0.5..3.0);
        b.le(&[(j, 1.0)], u);
        b.le(&[(j, -1.0)], u);
    }
    for _ in 0..cuts {
        let terms: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.gen_range(-1.0..1.0))).collect();
        b.le(&terms, rng.gen_range(0.1..2.0));
    }
    if n > 1 && rng.gen_bool(0.3) {
        // an equality through the origin
        b.eq(&[(0, 1.0), (1, rng.gen_range(-1.0..1.0))], 0.0);
    }
    b.build()
}

pub struct BoxQp {
    pub program: ConvexProgram,
    pub q: Vec<f64>,
    pub c: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Random diagonal QP with box constraints only.
pub fn random_box_qp(rng: &mut impl Rng) -> BoxQp {
    let n = rng.gen_range(1..=10);
    let mut b = ProgramBuilder::new(n);
    let mut q = Vec::new();
    let mut c = Vec::new();
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for j in 0..n {
        let qj = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.1..3.0) };
        let cj = rng.gen_range(-3.0..3.0);
        let l = rng.gen_range(-2.0..0.0);
        let h = l + rng.gen_range(0.2..3.0);
        if qj > 0.0 {
            b.quad_diag(j, qj);
        }
        b.cost(j, cj);
        b.le(&[(j, 1.0)], h);
        b.le(&[(j, -1.0)], -l);
        q.push(qj);
        c.push(cj);
        lo.push(l);
        hi.push(h);
    }
    BoxQp {
        program: b.build(),
        q,
        c,
        lo,
        hi,
    }
}

/// `||x - P(x - grad f(x))||_inf` for the box projection `P`.
pub fn projected_gradient_residual(qp: &BoxQp, x: &[f64]) -> f64 {
    (0..x.len())
        .map(|j| {
            let g = qp.q[j] * x[j] + qp.c[j];
            let p = (x[j] - g).clamp(qp.lo[j], qp.hi[j]);
            (x[j] - p).abs()
        })
        .fold(0.0, f64::max)
}

/// Synthetic two-class data scaled into the unit box, with an intercept
/// feature, split evenly over `g` clients.
pub fn federated_synthetic(n: usize, p: usize, g: usize, seed: u64) -> Vec<fdrsvm::svm::DatasetView> {
    use fdrsvm::data::{generate_synthetic, partition, with_intercept, MinMax, PartitionPlan, PartitionScheme, SyntheticSpec};
    let raw = generate_synthetic(&SyntheticSpec::new(n, p, g, seed)).unwrap();
    let scaled = with_intercept(&MinMax::fit(&raw).apply(&raw).unwrap()).unwrap();
    let plan = PartitionPlan {
        scheme: PartitionScheme::Even,
        clients: g,
        seed,
    };
    partition(&scaled, &plan).unwrap().clients
}

/// Client configs with weights proportional to the client sizes.
pub fn client_configs(data: &[fdrsvm::svm::DatasetView], epsilon: f64, kappa: f64, norm: fdrsvm::svm::NormKind) -> Vec<fdrsvm::client::ClientConfig> {
    let total: usize = data.iter().map(|d| d.len()).sum();
    data.iter()
        .map(|d| {
            let mut c = fdrsvm::client::ClientConfig::new(epsilon, kappa, norm);
            c.alpha = d.len() as f64 / total as f64;
            c
        })
        .collect()
}
