use std::collections::BTreeSet;

use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use djlab_core::baselines::{absorbing_probabilities, propagate_closed, propagation_operator, Normalization, SeedMatrix};
use djlab_core::jump::{filter_bank, projectors, JumpMode};
use djlab_core::pump::{DistanceMatrix, RatioOperators};
use djlab_core::spectral::{commute_time_resistance_matrix, diffusion_distance_sq, SpectralData};
use djlab_core::Graph;

/// Spanning tree plus random chords, so every sample is connected.
fn connected_graph(max_n: usize) -> impl Strategy<Value = Graph> {
    (3..=max_n, any::<u64>(), 0.0..0.5f64).prop_map(|(n, seed, p)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = BTreeSet::new();
        for i in 1..n {
            edges.insert((rng.random_range(0..i), i));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < p {
                    edges.insert((i, j));
                }
            }
        }
        Graph::new(n, edges).unwrap()
    })
}

fn distance_matrix(max_n: usize) -> impl Strategy<Value = Array2<f64>> {
    (2..=max_n, any::<u64>(), any::<bool>()).prop_map(|(n, seed, ties)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                if ties {
                    (rng.random_range(0..3) as f64, rng.random_range(0..3) as f64)
                } else {
                    (rng.random(), rng.random())
                }
            })
            .collect();
        Array2::from_shape_fn((n, n), |(i, j)| (pts[i].0 - pts[j].0).hypot(pts[i].1 - pts[j].1))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn commute_time_is_a_metric(g in connected_graph(20)) {
        let ct = SpectralData::<f64>::new(&g).unwrap().commute_time_matrix();
        let n = g.n();
        for i in 0..n {
            prop_assert!(ct[[i, i]].abs() < 1e-9);
            for j in 0..n {
                prop_assert!((ct[[i, j]] - ct[[j, i]]).abs() <= 1e-9 * ct[[i, j]].max(1.0));
                for k in 0..n {
                    prop_assert!(ct[[i, k]] <= ct[[i, j]] + ct[[j, k]] + 1e-9 * ct[[i, k]].max(1.0));
                }
            }
        }
    }

    #[test]
    fn commute_time_routes_agree(g in connected_graph(25)) {
        let a = SpectralData::<f64>::new(&g).unwrap().commute_time_matrix();
        let b = commute_time_resistance_matrix::<f64>(&g).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0));
        }
    }

    #[test]
    fn diffusion_distance_routes_agree(g in connected_graph(25), t in 1u32..6, a in any::<usize>(), b in any::<usize>()) {
        let n = g.n();
        let (i, j) = (a % n, b % n);
        let walk = diffusion_distance_sq::<f64>(&g, t, i, j).unwrap();
        let spec = SpectralData::<f64>::new(&g).unwrap().diffusion_distance_sq(t, i, j);
        prop_assert!((walk - spec).abs() <= 1e-8 * walk.abs().max(1.0));
    }

    #[test]
    fn projectors_partition_all_pairs(d in distance_matrix(30)) {
        let n = d.nrows();
        let p = projectors(d.view(), n - 1, JumpMode::Rank).unwrap();
        prop_assert_eq!(p.masks[0].to_dense(), Array2::<u8>::eye(n));
        let mut cover = Array2::<u32>::zeros((n, n));
        for m in &p.masks {
            for (i, j) in m.pairs() {
                cover[[i, j]] += 1;
            }
        }
        prop_assert!(cover.iter().all(|&c| c == 1));
        let bank = filter_bank(&DistanceMatrix::from_matrix(d).unwrap(), n - 1, JumpMode::Rank).unwrap();
        prop_assert_eq!(bank.filters[0].to_dense(n), Array2::<f64>::eye(n));
        prop_assert!(bank.filters.iter().flat_map(|f| &f.coeffs).all(|&c| c > 0.0 && c <= 1.0));
    }

    #[test]
    fn cumulative_masks_nest(d in distance_matrix(20)) {
        let n = d.nrows();
        let p = projectors(d.view(), n - 1, JumpMode::Cumulative).unwrap();
        for k in 1..n {
            prop_assert_eq!(p.masks[k].count(), n * k);
            for (i, j) in p.masks[k - 1].pairs().filter(|&(i, j)| i != j) {
                prop_assert!(p.masks[k].contains(i, j));
            }
        }
    }

    #[test]
    fn ratio_ignores_column_signs_and_rotations(g in connected_graph(20), seed in any::<u64>(), theta in 0.0..6.28f64) {
        let n = g.n();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
        let ops = RatioOperators::<f64>::new(&g);
        let r = ops.ratio(u.view()).unwrap();
        let flip = &u * &array![[-1.0, 1.0]];
        let rot = u.dot(&array![[theta.cos(), -theta.sin()], [theta.sin(), theta.cos()]]);
        prop_assert!((ops.ratio(flip.view()).unwrap() - r).abs() < 1e-10);
        prop_assert!((ops.ratio(rot.view()).unwrap() - r).abs() < 1e-10);
    }

    #[test]
    fn propagation_commutes_with_relabelling(g in connected_graph(15), seed in any::<u64>()) {
        let n = g.n();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let seeds = vec![(0, 0), (n - 1, 1)];
        let p = propagation_operator(&g, Normalization::RandomWalk).unwrap();
        let f = propagate_closed(&p, &SeedMatrix::from_seeds(n, 2, &seeds).unwrap(), 0.8).unwrap();
        let gp = g.permuted(&perm).unwrap();
        let pp = propagation_operator(&gp, Normalization::RandomWalk).unwrap();
        let moved: Vec<(usize, usize)> = seeds.iter().map(|&(i, c)| (perm[i], c)).collect();
        let fp = propagate_closed(&pp, &SeedMatrix::from_seeds(n, 2, &moved).unwrap(), 0.8).unwrap();
        for i in 0..n {
            for c in 0..2 {
                prop_assert!((f[[i, c]] - fp[[perm[i], c]]).abs() < 1e-10);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn absorbing_matches_simulated_walks(g in connected_graph(10), seed in any::<u64>()) {
        let n = g.n();
        let absorbing = [0, n - 1];
        let b = absorbing_probabilities(&g, &absorbing).unwrap();
        let start = 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let walks = 100_000;
        let mut hits_first = 0usize;
        for _ in 0..walks {
            let mut v = start;
            while v != 0 && v != n - 1 {
                let nb = g.neighbors(v);
                v = nb[rng.random_range(0..nb.len())].0;
            }
            hits_first += usize::from(v == 0);
        }
        let mc = hits_first as f64 / walks as f64;
        // transient rows are in ascending order, so node 1 is row 0
        prop_assert!((b[[0, 0]] - mc).abs() < 0.01, "exact {} simulated {}", b[[0, 0]], mc);
    }
}

#[test]
fn cycle_propagation_is_rotation_equivariant() {
    let n = 9;
    let g = Graph::new(n, (0..n).map(|i| (i, (i + 1) % n))).unwrap();
    let p = propagation_operator(&g, Normalization::Symmetric).unwrap();
    let f = propagate_closed(&p, &SeedMatrix::from_seeds(n, 1, &[(0, 0)]).unwrap(), 0.9).unwrap();
    let h = propagate_closed(&p, &SeedMatrix::from_seeds(n, 1, &[(3, 0)]).unwrap(), 0.9).unwrap();
    for i in 0..n {
        assert!((f[[i, 0]] - h[[(i + 3) % n, 0]]).abs() < 1e-12);
        assert!((f[[i, 0]] - f[[(n - i) % n, 0]]).abs() < 1e-12);
    }
}

#[test]
fn path_propagation_decays_from_the_seed() {
    let g = Graph::new(6, (0..5).map(|i| (i, i + 1))).unwrap();
    let p = propagation_operator(&g, Normalization::RandomWalk).unwrap();
    let f = propagate_closed(&p, &SeedMatrix::from_seeds(6, 1, &[(0, 0)]).unwrap(), 0.5).unwrap();
    for i in 1..6 {
        assert!(f[[i, 0]] < f[[i - 1, 0]]);
    }
}
