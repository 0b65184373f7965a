mod common;

use common::{fig1, fig2};
use mirrorflow::repcost::*;
use mirrorflow::variational::*;
use mirrorflow::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform() -> BiasDensity<f64> {
    BiasDensity::Uniform { b: 1.0 }
}

fn alpha_strategy() -> impl Strategy<Value = OutputWeightFunction<f64>> {
    (2usize..60).prop_flat_map(|m| {
        (
            prop::collection::vec(-5.0f64..5.0, m + 1),
            prop::collection::vec(-5.0f64..5.0, m + 1),
        )
            .prop_map(move |(pos, neg)| {
                let mut a = OutputWeightFunction::zeros(1.0, m);
                a.alpha_pos = pos;
                a.alpha_neg = neg;
                a
            })
    })
}

proptest! {
    #[test]
    fn decomposition_recombines_and_has_the_right_parity(alpha in alpha_strategy()) {
        let (even, odd) = decompose_even_odd(&alpha);
        prop_assert!(even.add(&odd).max_abs_diff(&alpha) <= 4.0 * f64::EPSILON * 5.0);
        prop_assert!(even.even_defect() <= 1e-12);
        prop_assert!(odd.odd_defect() <= 1e-12);
    }

    #[test]
    fn pythagorean_identity(alpha in alpha_strategy()) {
        let density = uniform();
        let (even, odd) = decompose_even_odd(&alpha);
        let total = cost_quadratic(&alpha, &density);
        let split = cost_quadratic(&even, &density) + cost_quadratic(&odd, &density);
        prop_assert!((total - split).abs() <= 1e-10 * total.max(1.0));
    }

    #[test]
    fn quadratic_bregman_cost_equals_quadratic_cost(alpha in alpha_strategy()) {
        let d = uniform();
        prop_assert!((cost_bregman(&alpha, &d, &Potential::quadratic()) - cost_quadratic(&alpha, &d)).abs() <= 1e-12 * (1.0 + cost_quadratic(&alpha, &d)));
    }
}

fn relu_round_trip(n: usize, intervals: usize) -> f64 {
    let grid = Grid::new(-1.5, 1.5, n).unwrap();
    let spec =
        VariationalSpec::new(fig1(), uniform(), VariationalMode::UnscaledRelu).with_grid(grid);
    let h = solve_unscaled(&spec).unwrap().function;
    let (i1, im) = hull_nodes(&spec).unwrap();
    let alpha = repcost_quadratic(&h, &grid, &uniform(), intervals).unwrap();
    (i1..=im)
        .map(|i| {
            (eval_infinite_network(&alpha, &uniform(), Activation::Relu, grid.t(i)) - h.h[i]).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn round_trip_error_shrinks_under_refinement() {
    let coarse = relu_round_trip(500, 2000);
    let fine = relu_round_trip(1000, 4000);
    assert!(coarse <= 1e-3);
    assert!(fine < coarse, "{coarse:e} -> {fine:e}");
}

#[test]
fn abs_round_trip_for_every_reference_potential() {
    let grid = Grid::default();
    for pot in Potential::reference_set() {
        let spec =
            VariationalSpec::new(fig2(), uniform(), VariationalMode::ScaledAbs(pot.scaled()));
        let h = solve_scaled(&spec).unwrap().function;
        let alpha = repcost_abs(&h, &grid, &uniform(), DEFAULT_ALPHA_INTERVALS).unwrap();
        assert!(alpha.is_even());
        let (i1, im) = hull_nodes(&spec).unwrap();
        for i in i1..=im {
            let g = eval_infinite_network(&alpha, &uniform(), Activation::Abs, grid.t(i));
            assert!((g - h.h[i]).abs() <= 1e-3);
        }
    }
}

#[test]
fn constant_even_weights_give_a_linear_tail() {
    let alpha = OutputWeightFunction::from_fn(1.0, 2000, |_| 1.5, |_| 1.5);
    for x in [1.0, 1.3, 2.0] {
        let g = eval_infinite_network(&alpha, &uniform(), Activation::Abs, x);
        assert!((g - 1.5 * x).abs() <= 1e-9);
    }
}

/// Feasible output weights realize the same function. With ReLU the network's
/// values are linear in `alpha`, so the feasible set is an affine subspace.
#[test]
fn quadratic_representation_has_minimal_cost() {
    let m = 40;
    let density = uniform();
    let grid = Grid::new(-1.5, 1.5, 60).unwrap();
    let data = Dataset::univariate(&[(-0.5, 0.1), (0.0, -0.1), (0.5, 0.2)]).unwrap();
    let spec = VariationalSpec::new(data, density, VariationalMode::UnscaledRelu).with_grid(grid);
    let h = solve_unscaled(&spec).unwrap().function;
    let best = repcost_quadratic(&h, &grid, &density, m).unwrap();
    let best_cost = cost_quadratic(&best, &density);

    // The discretized network is piecewise linear with kinks on the bias grid, so its values
    // there and two points on each tail determine it everywhere.
    let mut probes: Vec<f64> = (0..=m).map(|j| -1.0 + 2.0 * j as f64 / m as f64).collect();
    probes.extend([-1.5, -1.25, 1.25, 1.5]);
    let unit = |j: usize, pos: bool| {
        let mut a = OutputWeightFunction::zeros(1.0, m);
        if pos {
            a.alpha_pos[j] = 1.0
        } else {
            a.alpha_neg[j] = 1.0
        }
        a
    };
    let mut rows = vec![vec![0.0; 2 * (m + 1)]; probes.len()];
    for j in 0..=m {
        for (s, pos) in [(0, true), (m + 1, false)] {
            let a = unit(j, pos);
            for (r, &x) in probes.iter().enumerate() {
                rows[r][s + j] = eval_infinite_network(&a, &density, Activation::Relu, x);
            }
        }
    }
    let cols = 2 * (m + 1);
    let mut full = rows.clone();
    full.resize(cols, vec![0.0; cols]);
    let svd = DMatrix::from_fn(cols, cols, |i, j| full[i][j]).svd(false, true);
    let v_t = svd.v_t.unwrap();
    let cutoff = 1e-10 * svd.singular_values.max();
    let null: Vec<usize> = (0..cols)
        .filter(|&i| svd.singular_values[i] <= cutoff)
        .collect();
    assert!(null.len() >= cols - probes.len());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let mut dir = vec![0.0; cols];
        for &i in &null {
            let c: f64 = rng.gen_range(-1.0..1.0);
            dir.iter_mut()
                .enumerate()
                .for_each(|(j, d)| *d += c * v_t[(i, j)]);
        }
        let mut a = best.clone();
        for j in 0..=m {
            a.alpha_pos[j] += 0.1 * dir[j];
            a.alpha_neg[j] += 0.1 * dir[m + 1 + j];
        }
        for &x in &probes {
            let same = eval_infinite_network(&a, &density, Activation::Relu, x)
                - eval_infinite_network(&best, &density, Activation::Relu, x);
            assert!(same.abs() <= 1e-10);
        }
        assert!(cost_quadratic(&a, &density) >= best_cost - 1e-10);
    }
}
