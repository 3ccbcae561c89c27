use nbbart_core::data::SpatialWeights;
use nbbart_core::gibbs::joint::{batch_mean_se, marginal_conditional, successive_conditional, JointSample};
use nbbart_core::gibbs::Hyperparameters;
use nbbart_core::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup(n: usize) -> (DMatrix<f64>, SpatialWeights) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() * 2.0 - 1.0 });
    let c = DMatrix::from_fn(n, n, |i, j| {
        let d = (i as i64 - j as i64).abs();
        if d == 0 || d > 3 { 0.0 } else { 1.0 / d as f64 }
    });
    (f, SpatialWeights::from_proximity(c).unwrap())
}

fn informative() -> Hyperparameters {
    let mut h = Hyperparameters::default_for(2);
    h.zeta_gamma = DVector::from_column_slice(&[1.0, 0.0]);
    h.delta_gamma = DMatrix::identity(2, 2) * 0.25;
    h.zeta_tau = -0.5;
    h.sigma2_tau = 0.25;
    h.b_sigma2 = 5.0;
    h.c_sigma2 = 1.0;
    h.r0 = 4.0;
    h.b0 = 4.0;
    h.c0 = 2.0;
    h
}

fn stat(s: &JointSample, k: usize) -> f64 {
    match k {
        0 => s.gamma[0],
        1 => s.gamma[1],
        2 => s.r,
        3 => s.tau,
        _ => s.sigma2,
    }
}

#[test]
fn simulators_agree_under_informative_priors() {
    let (f, w) = setup(20);
    let hyper = informative();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 20_000;
    let mc = marginal_conditional(&f, &w, &hyper, n, &mut rng).unwrap();
    let sc = successive_conditional(&f, &w, &hyper, n, 0.5, &mut rng).unwrap();
    for (k, name) in ["gamma_0", "gamma_1", "r", "tau", "sigma2"].iter().enumerate() {
        let a: Vec<f64> = mc.iter().map(|s| stat(s, k)).collect();
        let b: Vec<f64> = sc.iter().map(|s| stat(s, k)).collect();
        let (ma, sa) = batch_mean_se(&a, 1);
        let (mb, sb) = batch_mean_se(&b, 50);
        let z = (ma - mb) / (sa * sa + sb * sb).sqrt();
        println!("{name}: marginal {ma:.4} ({sa:.4}) successive {mb:.4} ({sb:.4}) z {z:.2}");
        assert!(z.abs() < 2.576, "{name}: z = {z}");
    }
}
