mod common;

use bilaf_core::baselines::{kmeans_fit, select_baseline, BaselineConfig, BaselineMethod};
use bilaf_core::boundary::{allocate_budgets, boundary_score, select_boundary, BoundaryConfig, Stage};
use bilaf_core::denoise::{denoise, DenoiseConfig, DenoiseStrategy};
use bilaf_core::geometry::{assign_clusters, density_distance, PseudoCluster};
use bilaf_core::pool::PoolFormat;
use bilaf_core::{evaluate_selection, load_pool, save_pool, CoreSet, FeaturePool, SelectionConfig};
use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn strategy() -> impl Strategy<Value = DenoiseStrategy> {
    prop_oneof![
        Just(DenoiseStrategy::Idc),
        Just(DenoiseStrategy::DensityBased),
        Just(DenoiseStrategy::DistanceGuide),
        Just(DenoiseStrategy::None),
    ]
}

fn labelled(seed: u64, n: usize, d: usize, classes: u32) -> FeaturePool {
    random_labelled_pool(&mut rng(seed), n, d, classes)
}

fn scaled(pool: &FeaturePool, s: f32) -> FeaturePool {
    FeaturePool::new(pool.features().iter().map(|v| v * s).collect(), pool.dim(), None, false).unwrap()
}

fn setup(seed: u64, n: usize, d: usize, k: usize, normalize: bool) -> (FeaturePool, CoreSet, Vec<PseudoCluster>) {
    let mut r = rng(seed);
    let pool = random_pool(&mut r, n, d, normalize);
    let cores = CoreSet::from_indices(distinct(&mut r, n, k));
    let clusters = assign_clusters(&pool, &cores);
    (pool, cores, clusters)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn binary_round_trip_is_identity(seed in any::<u64>(), n in 1usize..60, d in 1usize..20, labels in any::<bool>(), norm in any::<bool>()) {
        let base = random_pool(&mut rng(seed), n, d, norm);
        let pool = if labels { labelled(seed, n, d, 5) } else { base };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        save_pool(&pool, &path).unwrap();
        let back = load_pool(&path, PoolFormat::Binary).unwrap();
        prop_assert_eq!(back.features(), pool.features());
        prop_assert_eq!(back.labels(), pool.labels());
        prop_assert_eq!(back.is_normalized(), pool.is_normalized());
        if back.is_normalized() {
            prop_assert!(back.max_norm_deviation() < 1e-4);
        }
    }

    #[test]
    fn clusters_partition_the_pool(seed in any::<u64>(), n in 5usize..150, d in 1usize..10, k in 1usize..6) {
        let (_, cores, clusters) = setup(seed, n, d, k.min(n), true);
        let mut seen = vec![0u32; n];
        for (c, &center) in clusters.iter().zip(&cores.center_indices) {
            prop_assert!(c.member_indices.contains(&center));
            c.member_indices.iter().for_each(|&m| seen[m] += 1);
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
    }

    #[test]
    fn assignment_ignores_sample_order(seed in any::<u64>(), n in 5usize..120, d in 2usize..8, k in 1usize..5) {
        let (pool, cores, clusters) = setup(seed, n, d, k.min(n), false);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng(seed ^ 1));
        // new row i holds old row perm[i]
        let feats = perm.iter().flat_map(|&o| pool.row(o).to_vec()).collect();
        let shuffled = FeaturePool::new(feats, d, None, false).unwrap();
        let mut inverse = vec![0; n];
        perm.iter().enumerate().for_each(|(new, &old)| inverse[old] = new);
        let moved = CoreSet::from_indices(cores.center_indices.iter().map(|&c| inverse[c]).collect());
        let again = assign_clusters(&shuffled, &moved);
        for (a, b) in clusters.iter().zip(&again) {
            let mut back: Vec<usize> = b.member_indices.iter().map(|&m| perm[m]).collect();
            back.sort();
            prop_assert_eq!(&a.member_indices, &back);
        }
    }

    #[test]
    fn density_follows_points_and_scales(seed in any::<u64>(), n in 3usize..80, d in 1usize..10, k in 1usize..8, s in 0.1f32..10.0) {
        let pool = random_pool(&mut rng(seed), n, d, false);
        let subset: Vec<usize> = (0..n).collect();
        let base = density_distance(&pool, &subset, k).unwrap().rho;
        let mut rev = subset.clone();
        rev.reverse();
        let flipped = density_distance(&pool, &rev, k).unwrap().rho;
        for (i, &r) in flipped.iter().enumerate() {
            prop_assert!((r - base[n - 1 - i]).abs() < 1e-12);
        }
        let big = density_distance(&scaled(&pool, s), &subset, k).unwrap().rho;
        for (a, b) in big.iter().zip(&base) {
            prop_assert!((a - *b * s as f64).abs() < 1e-5 * (1.0 + a.abs()));
            prop_assert!(*a >= 0.0);
        }
    }

    #[test]
    fn removal_count_is_exact(seed in any::<u64>(), n in 2usize..100, ratio in 0.0f64..0.9, inc in 0.01f64..1.0, k in 1usize..12, strat in strategy()) {
        let pool = random_pool(&mut rng(seed), n, 4, true);
        let cluster = PseudoCluster { center_index: (seed as usize) % n, member_indices: (0..n).collect() };
        let cfg = DenoiseConfig { strategy: strat, removal_ratio: ratio, include_fraction: inc, k_neighbors: k };
        let rep = denoise(&pool, &cluster, &cfg).unwrap();
        let want = if strat == DenoiseStrategy::None { 0 } else { (ratio * n as f64 + 1e-9).floor() as usize };
        prop_assert_eq!(rep.removed.len(), want);
        prop_assert!(rep.kept.contains(&cluster.center_index));
        let mut all: Vec<usize> = rep.kept.iter().chain(&rep.removed).copied().collect();
        all.sort();
        prop_assert_eq!(all, cluster.member_indices.clone());
        if strat == DenoiseStrategy::Idc {
            prop_assert_eq!(rep.inclusion_order[0], cluster.center_index);
            let mut order = rep.inclusion_order.clone();
            order.sort();
            prop_assert_eq!(order, cluster.member_indices.clone());
        }
    }

    #[test]
    fn single_round_idc_ranks_by_center_distance(seed in any::<u64>(), n in 2usize..60, ratio in 0.0f64..0.9) {
        let pool = random_pool(&mut rng(seed), n, 3, true);
        let cluster = PseudoCluster { center_index: 0, member_indices: (0..n).collect() };
        let cfg = DenoiseConfig { strategy: DenoiseStrategy::Idc, removal_ratio: ratio, include_fraction: 1.0, k_neighbors: n.max(2) - 1 };
        let rep = denoise(&pool, &cluster, &cfg).unwrap();
        let mut others: Vec<(f64, usize)> = (1..n).map(|i| (dist(&pool, i, 0), i)).collect();
        others.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let order: Vec<usize> = std::iter::once(0).chain(others.into_iter().map(|(_, i)| i)).collect();
        prop_assert_eq!(&rep.inclusion_order, &order);
    }

    #[test]
    fn budgets_sum_and_bounds(sizes in prop::collection::vec(0usize..60, 1..10), extra in 0usize..200) {
        let nonempty = sizes.iter().filter(|&&s| s > 0).count();
        let sum: usize = sizes.iter().sum();
        prop_assume!(sum >= sizes.len());
        let total = (sizes.len() + extra).min(sum);
        match allocate_budgets(&sizes, total) {
            Ok(b) => {
                prop_assert_eq!(b.iter().sum::<usize>(), total);
                for (&bi, &si) in b.iter().zip(&sizes) {
                    prop_assert!(bi <= si);
                    if si > 0 { prop_assert!(bi >= 1); }
                }
            }
            Err(_) => prop_assert!(nonempty < sizes.len() || total < sizes.len()),
        }
    }

    #[test]
    fn unpenalized_score_in_open_unit_interval(seed in any::<u64>(), n in 20usize..120, k in 2usize..6) {
        let (pool, cores, clusters) = setup(seed, n, 6, k, true);
        let cfg = BoundaryConfig { use_opponent_penalty: false, ..BoundaryConfig::default() };
        let zeros = vec![0; k];
        for (own, c) in clusters.iter().enumerate().filter(|(_, c)| c.size() > 1) {
            for &x in c.member_indices.iter().take(10) {
                let (s, _) = boundary_score(&pool, &c.member_indices, x, &cores, own, &zeros, &cfg).unwrap();
                prop_assert!(s > -1.0 - 1e-12 && s < 1.0, "{}", s);
            }
        }
    }

    #[test]
    fn penalty_never_lowers_score(seed in any::<u64>(), n in 20usize..120, k in 2usize..6, bump in 0usize..6, delta in 1.0f64..2.0) {
        let (pool, cores, clusters) = setup(seed, n, 6, k, true);
        let cfg = BoundaryConfig { opponent_delta: delta, ..BoundaryConfig::default() };
        let base = vec![0u32; k];
        let mut more = base.clone();
        more[bump % k] += 1;
        for (own, c) in clusters.iter().enumerate() {
            for &x in c.member_indices.iter().take(10) {
                let (a, _) = boundary_score(&pool, &c.member_indices, x, &cores, own, &base, &cfg).unwrap();
                let (b, _) = boundary_score(&pool, &c.member_indices, x, &cores, own, &more, &cfg).unwrap();
                prop_assert!(b >= a - 1e-12);
            }
        }
    }

    #[test]
    fn boundary_selection_accounting(seed in any::<u64>(), n in 40usize..200, k in 2usize..6, extra in 0usize..30, os in any::<bool>()) {
        let (pool, cores, clusters) = setup(seed, n, 5, k, true);
        let sizes: Vec<usize> = clusters.iter().map(PseudoCluster::size).collect();
        let total = (k + extra).min(n);
        let budgets = allocate_budgets(&sizes, total).unwrap();
        let cfg = BoundaryConfig {
            process: if os { bilaf_core::Process::OneShot } else { bilaf_core::Process::IterativeRemoval },
            record_trace: true,
            ..BoundaryConfig::default()
        };
        let res = select_boundary(&pool, &clusters, &cores, &budgets, &cfg).unwrap();
        let mut idx = res.indices();
        prop_assert_eq!(idx.len(), total);
        idx.sort();
        idx.dedup();
        prop_assert_eq!(idx.len(), total);
        prop_assert_eq!(res.selected.iter().filter(|r| r.stage == Stage::Core).count(), k);
        if !os {
            // live count drops by min(M/B, live) between consecutive picks of one cluster
            for pair in res.trace.windows(2) {
                let (a, b) = (&pair[0], &pair[1]);
                if a.pseudo_class != b.pseudo_class || res.per_cluster_picks[a.pseudo_class] != budgets[a.pseudo_class] {
                    continue;
                }
                let c = a.pseudo_class;
                let removal = (sizes[c] / budgets[c]).max(1);
                prop_assert_eq!(b.live.len(), a.live.len() - removal.min(a.live.len()));
            }
        }
    }

    #[test]
    fn picks_survive_power_of_two_scaling(seed in any::<u64>(), n in 40usize..150, k in 2usize..5, extra in 0usize..20, e in -3i32..4) {
        let (pool, cores, clusters) = setup(seed, n, 4, k, false);
        let sizes: Vec<usize> = clusters.iter().map(PseudoCluster::size).collect();
        let budgets = allocate_budgets(&sizes, (k + extra).min(n)).unwrap();
        let cfg = BoundaryConfig::default();
        let a = select_boundary(&pool, &clusters, &cores, &budgets, &cfg).unwrap();
        let b = select_boundary(&scaled(&pool, 2f32.powi(e)), &clusters, &cores, &budgets, &cfg).unwrap();
        prop_assert_eq!(a.indices(), b.indices());
    }

    #[test]
    fn baselines_return_budget_distinct(seed in any::<u64>(), n in 2usize..120, frac in 0.0f64..1.0) {
        let pool = random_pool(&mut rng(seed), n, 3, true);
        let budget = ((n as f64 * frac) as usize).max(1);
        for m in [BaselineMethod::Random, BaselineMethod::Fds, BaselineMethod::Kmeans] {
            let mut s = select_baseline(&pool, &BaselineConfig::new(m, budget, seed)).unwrap();
            prop_assert_eq!(s.len(), budget);
            s.sort();
            s.dedup();
            prop_assert_eq!(s.len(), budget);
            prop_assert!(s.iter().all(|&i| i < n));
        }
    }

    #[test]
    fn kmeans_objective_non_increasing(seed in any::<u64>(), n in 5usize..150, k in 1usize..8) {
        let pool = random_pool(&mut rng(seed), n, 3, false);
        let fit = kmeans_fit(&pool, k.min(n), seed, 60, 0.0).unwrap();
        for w in fit.objective_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
        }
    }

    #[test]
    fn evaluator_is_deterministic_and_bounded(seed in any::<u64>(), n in 10usize..100, m in 1usize..9) {
        let pool = labelled(seed, n, 4, 4);
        let sel: Vec<usize> = (0..m.min(n - 1)).collect();
        let a = evaluate_selection(&pool, &sel).unwrap();
        prop_assert_eq!(&a, &evaluate_selection(&pool, &sel).unwrap());
        prop_assert!((0.0..=1.0).contains(&a.top1_accuracy));
        prop_assert!((0.0..=1.0).contains(&a.class_coverage));
        if a.class_coverage == 1.0 {
            prop_assert_eq!(a.fitted_classes, pool.num_classes().unwrap());
        }
    }

    #[test]
    fn config_text_round_trips(budget in 1usize..1000, cores in 1usize..50, k in 1usize..30, rm in 0.0f64..0.9, inc in 0.01f64..1.0, delta in 1.0f64..3.0, seed in any::<u64>(), pen in any::<bool>()) {
        let cfg = SelectionConfig {
            budget, core_count: cores, knn_k: k, removal_ratio: rm, include_fraction: inc,
            opponent_delta: delta, opponent_penalty: pen, seed, ..SelectionConfig::default()
        };
        let mut back = SelectionConfig::default();
        back.apply_text(&cfg.to_text()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
