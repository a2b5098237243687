use std::sync::Arc;

use canonsup::gamma::{build_greedy_tree, gamma_exact_small, gamma_from_tree, PartitionTree};
use canonsup::laws::{corollary_moment_bound, exact_lp_norm, hmso_moment_bound, product_tail};
use canonsup::mc_sup::{esup_mc, esup_mc_exec, order_stat_tail, rearrange_nonincreasing};
use canonsup::par::Execution;
use canonsup::transforms::{apply_permuted_weights, epi_gamma2, ts_transform, GammaMethod};
use canonsup::{distance, Driver, MetricKind, Permutation, PointSet, RandomStream};
use proptest::prelude::*;
use rand::Rng;

fn vec3() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, 3)
}

fn small_set(max: usize) -> impl Strategy<Value = PointSet> {
    prop::collection::vec(vec3(), 1..=max).prop_map(|pts| {
        let mut s = PointSet::from_points(pts).unwrap();
        s.dedup();
        s
    })
}

fn metric() -> impl Strategy<Value = MetricKind> {
    prop_oneof![Just(MetricKind::L2), Just(MetricKind::Linf), (1.0..6.0f64).prop_map(|p| MetricKind::lp(p).unwrap())]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn triangle_inequality(a in vec3(), b in vec3(), c in vec3(), m in metric()) {
        let ab = distance(&a, &b, m).unwrap();
        let bc = distance(&b, &c, m).unwrap();
        let ac = distance(&a, &c, m).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9 * (1.0 + ab + bc));
        prop_assert_eq!(ab, distance(&b, &a, m).unwrap());
    }

    #[test]
    fn diameter_is_monotone(set in small_set(10), m in metric(), cut in 1usize..10) {
        let all: Vec<usize> = (0..set.len()).collect();
        let part = &all[..cut.min(set.len())];
        prop_assert!(set.diameter(part, m).unwrap() <= set.diameter(&all, m).unwrap());
    }

    #[test]
    fn moment_bounds_dominate_each_other(t in prop::collection::vec(-5.0..5.0f64, 1..8), p in 2.0..30.0f64, r in 0.2..2.0f64) {
        let cor = corollary_moment_bound(&t, p, r).unwrap().value;
        let hm = hmso_moment_bound(&t, p, r).unwrap().value;
        // Γ(1+p/r)^{1/p} ≥ p^{1/r}/e, ‖t‖_p ≥ ‖t‖_∞ and Γ(1+2/r) ≥ 1
        prop_assert!(cor <= std::f64::consts::E * hm * (1.0 + 1e-12), "{cor} vs {hm}");
    }

    #[test]
    fn gamma_moment_lower_bound(p in 1.0..60.0f64, r in 0.2..2.0f64) {
        let norm = exact_lp_norm(r, p).unwrap();
        prop_assert!(norm >= p.powf(1.0 / r) / std::f64::consts::E * (1.0 - 1e-12));
    }

    #[test]
    fn sandwich(r in 0.3..1.99f64, t in 0.5..6.0f64) {
        let p = product_tail(r, t, 1e-8).unwrap();
        prop_assert!(p >= (-2.0 * t.powf(r)).exp() - 1e-8);
        prop_assert!(p <= 2.0 * (-t.powf(r) / 2.0).exp() + 1e-8);
    }

    #[test]
    fn greedy_dominates_exact(set in small_set(8), alpha in prop_oneof![Just(1.0), Just(2.0)]) {
        let greedy = gamma_from_tree(&build_greedy_tree(&set, MetricKind::L2), alpha, MetricKind::L2).unwrap().value;
        let exact = gamma_exact_small(&set, MetricKind::L2, alpha).unwrap().value;
        prop_assert!(greedy >= exact * (1.0 - 1e-12));
    }

    #[test]
    fn greedy_trees_are_admissible(set in small_set(40), m in metric()) {
        let tree = build_greedy_tree(&set, m);
        prop_assert!(tree.check_admissible().is_ok());
        let json = tree.to_json().unwrap();
        let back = PartitionTree::from_json(Arc::new(set.clone()), &json).unwrap();
        prop_assert_eq!(back.levels(), tree.levels());
    }

    #[test]
    fn gamma_scales_exactly_by_two(set in small_set(12), alpha in prop_oneof![Just(1.0), Just(2.0)]) {
        let g = gamma_from_tree(&build_greedy_tree(&set, MetricKind::L2), alpha, MetricKind::L2).unwrap().value;
        let scaled = set.scaled(2.0);
        let g2 = gamma_from_tree(&build_greedy_tree(&scaled, MetricKind::L2), alpha, MetricKind::L2).unwrap().value;
        prop_assert_eq!(g2, 2.0 * g);
    }

    #[test]
    fn rearrangement_is_sorted_permutation(v in prop::collection::vec(-100.0..100.0f64, 0..30)) {
        let out = rearrange_nonincreasing(&v);
        prop_assert!(out.windows(2).all(|w| w[0].abs() >= w[1].abs()));
        let mut a: Vec<u64> = v.iter().map(|x| x.abs().to_bits()).collect();
        let mut b: Vec<u64> = out.iter().map(|x| x.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn order_stat_tail_is_monotone(n in 2u64..300, s in 0.5..4.0f64, u in 0.01..3.0f64, k in 1u64..300) {
        let k = k.min(n - 1);
        let here = order_stat_tail(n, s, k, u).unwrap();
        prop_assert!(order_stat_tail(n, s, k + 1, u).unwrap() <= here + 1e-12);
        prop_assert!(order_stat_tail(n, s, k, u * 1.1).unwrap() <= here + 1e-12);
        prop_assert!((0.0..=1.0).contains(&here));
    }

    #[test]
    fn ts_equals_identity_permutation(set in small_set(6), s in 0.5..8.0f64) {
        let a = ts_transform(&set, s).unwrap();
        let b = apply_permuted_weights(&set, &Permutation::identity(set.dim()), s).unwrap();
        prop_assert_eq!(a.to_vecs(), b.to_vecs());
    }
}

#[test]
fn permutation_invariant_set_has_deterministic_transform() {
    // all sign patterns of (2, 1, 0.5) and their coordinate permutations
    let base = [2.0, 1.0, 0.5];
    let orders = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut pts = Vec::new();
    for o in orders {
        for signs in 0..8 {
            pts.push((0..3).map(|k| if signs >> k & 1 == 1 { -base[o[k]] } else { base[o[k]] }).collect());
        }
    }
    let set = PointSet::from_points(pts).unwrap();
    let epi = epi_gamma2(&set, 2.0, 12, GammaMethod::Greedy, RandomStream::from_seed(3)).unwrap();
    assert_eq!(epi.spread, 1.0);
    let ts = ts_transform(&set, 2.0).unwrap();
    let g = GammaMethod::Greedy.estimate(&ts, RandomStream::from_seed(0)).unwrap();
    approx::assert_relative_eq!(epi.mean, g, max_relative = 1e-14);
    assert_eq!(epi.min, g);
}

#[test]
fn random_permutations_are_uniform() {
    let mut rng = RandomStream::from_seed(17).rng();
    let draws = 60_000;
    let mut counts = [0u32; 6];
    for _ in 0..draws {
        let p = Permutation::random(3, &mut rng);
        let s = p.as_slice();
        let idx = s[0] * 2 + usize::from(s[1] > s[2]);
        counts[idx] += 1;
    }
    let expect = draws as f64 / 6.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    // 0.999 quantile of chi-square with 5 degrees of freedom
    assert!(chi2 < 20.515, "chi2 = {chi2}, counts {counts:?}");
}

#[test]
fn contraction_reduces_expected_supremum() {
    let mut rng = RandomStream::new(21, 0).rng();
    let pts: Vec<Vec<f64>> = (0..20).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let set = PointSet::from_points(pts).unwrap();
    let shrunk = set.map_points(|p, out| out.iter_mut().zip(p).enumerate().for_each(|(k, (o, x))| *o = x * (k as f64 / 6.0)));
    for r in [0.5, 1.0, 2.0] {
        let big = esup_mc(&set, &Driver::Weibull(r), 8000, RandomStream::new(22, 0)).unwrap();
        let small = esup_mc(&shrunk, &Driver::Weibull(r), 8000, RandomStream::new(22, 1)).unwrap();
        let z = (small.mean - big.mean) / (big.stderr.powi(2) + small.stderr.powi(2)).sqrt();
        assert!(z <= 3.0, "r = {r}: z = {z}");
    }
}

#[test]
fn order_stat_matches_simulation() {
    let (n, s, k) = (32u64, 1.5, 5u64);
    let u = (n as f64 / k as f64).ln().powf(1.0 / s);
    let exact = order_stat_tail(n, s, k, u).unwrap();
    let mut rng = RandomStream::from_seed(5).rng();
    let trials = 20_000;
    let mut hits = 0;
    for _ in 0..trials {
        let mut ys: Vec<f64> = (0..n).map(|_| (-(1.0 - rng.random::<f64>()).ln()).powf(1.0 / s)).collect();
        ys.sort_by(|a, b| b.total_cmp(a));
        hits += usize::from(ys[k as usize - 1] >= u);
    }
    let freq = hits as f64 / trials as f64;
    let se = (exact * (1.0 - exact) / trials as f64).sqrt();
    assert!((freq - exact).abs() <= 3.0 * se, "{freq} vs {exact}");
}

#[test]
fn identical_across_thread_pools_and_modes() {
    let mut rng = RandomStream::new(30, 0).rng();
    let pts: Vec<Vec<f64>> = (0..15).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let set = PointSet::from_points(pts).unwrap();
    for driver in [Driver::Gaussian, Driver::Weibull(0.7), Driver::CondGaussian(1.2)] {
        let stream = RandomStream::new(31, 2);
        let seq = esup_mc_exec(&set, &driver, 5000, stream, Execution::Sequential).unwrap();
        for threads in [1, 3, 8] {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let par = pool.install(|| esup_mc_exec(&set, &driver, 5000, stream, Execution::Parallel).unwrap());
            assert_eq!(par.mean.to_bits(), seq.mean.to_bits());
            assert_eq!(par.stderr.to_bits(), seq.stderr.to_bits());
        }
    }
}
