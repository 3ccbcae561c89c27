use nbbart_core::bart::{backfit_sweep, BartHyper, TreeEnsemble};
use nbbart_core::data::{build_weight_matrix, CrashDataset, SpatialWeights};
use nbbart_core::diagnostics::{nb_log_pmf, rmse};
use nbbart_core::gibbs::{ChainConfig, ChainDraws, Draw, PosteriorDraws};
use nbbart_core::mess::matrix_exponential;
use nbbart_core::pg::{PgParameters, PgSampler};
use nbbart_core::ranking::{cutoff, eb_estimate, hotspot_probability, method_consistency, HotspotSet};
use nbbart_core::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn chain_dataset(lengths: &[usize]) -> CrashDataset {
    let n: usize = lengths.iter().sum();
    let mut facility = Vec::new();
    let mut position = Vec::new();
    for (f, &len) in lengths.iter().enumerate() {
        for p in 0..len {
            facility.push(f as i64);
            position.push(p as i64);
        }
    }
    CrashDataset::new(2010, (0..n as i64).collect(), vec![0; n], facility, position, vec![]).unwrap()
}

fn square(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(0.0..3.0f64, n * n).prop_map(move |v| {
        let mut c = DMatrix::from_vec(n, n, v);
        c.fill_diagonal(0.0);
        c
    })
}

fn draws_of(chains: Vec<Vec<(f64, Vec<f64>)>>) -> PosteriorDraws {
    let chains = chains
        .into_iter()
        .enumerate()
        .map(|(c, ds)| ChainDraws {
            chain: c,
            seed: 0,
            draws: ds
                .into_iter()
                .enumerate()
                .map(|(k, (r, psi))| Draw {
                    iteration: k,
                    gamma: vec![0.0],
                    r,
                    h: 1.0,
                    tau: 0.0,
                    sigma2: 1.0,
                    phi: vec![0.0; psi.len()],
                    psi,
                    split_counts: vec![],
                    trees: vec![],
                })
                .collect(),
            tau_acceptance: None,
            tau_step: 0.5,
            tree_acceptance: None,
            sigma_mu: None,
            warnings: vec![],
        })
        .collect();
    PosteriorDraws { config: ChainConfig::default(), chains }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w_ignores_scale_of_c(c in square(6), scale in 0.01..100.0f64) {
        let a = SpatialWeights::from_proximity(c.clone()).unwrap();
        let b = SpatialWeights::from_proximity(c * scale).unwrap();
        for (x, y) in a.normalized().iter().zip(b.normalized().iter()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn first_order_weights_are_binary(lengths in prop::collection::vec(1usize..7, 1..4)) {
        let ds = chain_dataset(&lengths);
        let w = build_weight_matrix(&ds, 1, None).unwrap();
        let again = build_weight_matrix(&ds, 1, None).unwrap();
        prop_assert_eq!(&w, &again);
        for i in 0..ds.len() {
            for j in 0..ds.len() {
                let adjacent = ds.facility_ids()[i] == ds.facility_ids()[j] && (ds.positions()[i] - ds.positions()[j]).abs() == 1;
                prop_assert_eq!(w.proximity()[(i, j)], if adjacent { 1.0 } else { 0.0 });
            }
        }
        prop_assert!(w.normalized().trace().abs() < 1e-15);
    }

    #[test]
    fn exponential_has_unit_determinant_and_inverse(c in square(5), tau in -3.0..3.0f64) {
        let w = SpatialWeights::from_proximity(c).unwrap();
        let s = matrix_exponential(tau, w.normalized()).unwrap();
        let s_inv = matrix_exponential(-tau, w.normalized()).unwrap();
        prop_assert!((s.determinant() - 1.0).abs() < 1e-8);
        let prod = &s * &s_inv;
        for i in 0..5 {
            for j in 0..5 {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((prod[(i, j)] - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn pg_draws_are_positive(b in 0.01..50.0f64, c in -20.0..20.0f64, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pg = PgSampler::default();
        let p = PgParameters::new(b, c).unwrap();
        for _ in 0..20 {
            let v = pg.sample(p, &mut rng).unwrap();
            prop_assert!(v > 0.0 && v.is_finite());
        }
    }

    #[test]
    fn nb_pmf_is_normalized(r in 0.2..5.0f64, psi in -2.0..1.0f64) {
        let total: f64 = (0..3000u64).map(|y| nb_log_pmf(y, r, psi).exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-8, "{}", total);
    }

    #[test]
    fn tree_fits_ignore_increasing_transforms(seed in any::<u64>(), shift in -5.0..5.0f64, scale in 0.1..10.0f64) {
        let mut data_rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 40;
        let x = DMatrix::from_fn(n, 2, |_, _| rand::Rng::random::<f64>(&mut data_rng));
        let warped = x.map(|v| (v * scale + shift).exp());
        let partial: Vec<f64> = (0..n).map(|i| if x[(i, 0)] > 0.5 { 1.0 } else { -1.0 } + 0.3 * x[(i, 1)]).collect();
        let weights = vec![2.0; n];
        let hyper = BartHyper::with_range(5, 0.95, 2.0, 2.0, &partial).unwrap();
        let mut a = TreeEnsemble::new(hyper.clone(), &x).unwrap();
        let mut b = TreeEnsemble::new(hyper, &warped).unwrap();
        let mut ra = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut rb = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for _ in 0..10 {
            backfit_sweep(&mut a, &x, &partial, &weights, &mut ra).unwrap();
            backfit_sweep(&mut b, &warped, &partial, &weights, &mut rb).unwrap();
        }
        prop_assert_eq!(a.fit(), b.fit());
        prop_assert_eq!(a.predict(&x), b.predict(&warped));
    }

    #[test]
    fn hotspot_probability_is_rank_based(
        draws in prop::collection::vec(prop::collection::vec(0i32..6, 8), 1..6),
        alpha in 0.05..0.95f64,
    ) {
        let lambda: Vec<Vec<f64>> = draws.iter().map(|d| d.iter().map(|&v| f64::from(v)).collect()).collect();
        let affine: Vec<Vec<f64>> = lambda.iter().map(|d| d.iter().map(|v| 2.0 * v + 1.0).collect()).collect();
        let expo: Vec<Vec<f64>> = lambda.iter().map(|d| d.iter().map(|v| (v / 4.0).exp()).collect()).collect();
        let p = hotspot_probability(&lambda, alpha).unwrap();
        prop_assert_eq!(&p, &hotspot_probability(&affine, alpha).unwrap());
        prop_assert_eq!(&p, &hotspot_probability(&expo, alpha).unwrap());
        let m = cutoff(alpha, 8).unwrap() as f64;
        prop_assert!((p.iter().sum::<f64>() - m).abs() < 1e-9);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn eb_is_a_convex_combination(mu in 0.0..100.0f64, r in 0.01..100.0f64, y in 0u32..200) {
        let y = f64::from(y);
        let eb = eb_estimate(mu, r, y);
        prop_assert!(eb >= mu.min(y) - 1e-9 && eb <= mu.max(y) + 1e-9);
    }

    #[test]
    fn method_consistency_bounded_by_cutoff(a in prop::collection::vec(0.0..1.0f64, 12), b in prop::collection::vec(0.0..1.0f64, 12), alpha in 0.05..0.95f64) {
        let ha = HotspotSet::from_scores(1, alpha, a, None).unwrap();
        let hb = HotspotSet::from_scores(2, alpha, b, None).unwrap();
        let t = method_consistency(&ha, &hb);
        prop_assert!(t <= ha.cutoff);
        let mut ma = ha.members.clone();
        let mut mb = hb.members.clone();
        ma.sort_unstable();
        mb.sort_unstable();
        prop_assert_eq!(t == ha.cutoff, ma == mb);
        prop_assert_eq!(method_consistency(&ha, &ha), ha.cutoff);
    }

    #[test]
    fn rmse_ignores_draw_order_and_chain_labels(
        raw in prop::collection::vec((0.5..3.0f64, prop::collection::vec(-1.0..2.0f64, 4)), 2..8),
        counts in prop::collection::vec(0u64..20, 4),
    ) {
        let split = raw.len() / 2;
        let forward = draws_of(vec![raw[..split].to_vec(), raw[split..].to_vec()]);
        let mut reversed = raw.clone();
        reversed.reverse();
        let shuffled = draws_of(vec![reversed[..raw.len() - split].to_vec(), reversed[raw.len() - split..].to_vec()]);
        let a = rmse(&forward, &counts).unwrap();
        let b = rmse(&shuffled, &counts).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        prop_assert!(a >= 0.0);
    }
}
