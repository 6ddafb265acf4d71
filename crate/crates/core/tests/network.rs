use hbl::dynamics::{coordinate_step, max_step_size};
use hbl::matrix::sym_eig;
use hbl::network::{
    balanced_init, end_to_end, gd_step, population_excess_loss, population_gradient,
    population_gradients, spectral_state, DataModel, FrameSource, Frames, InputSupport,
    NetworkDims, WeightStack,
};
use hbl::{Error, Matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.gen_range(-1.0..1.0))
}

/// A stack with unstructured weights and a generic PSD input covariance.
fn generic_problem(seed: u64, widths: Vec<usize>) -> (WeightStack, DataModel) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = NetworkDims::new(widths.clone(), 1).unwrap();
    let weights = (0..dims.depth())
        .map(|k| gaussian(&mut rng, widths[k + 1], widths[k], 0.6))
        .collect();
    let frames = Frames::sample(&dims, InputSupport::Full, seed).unwrap();
    let w = WeightStack::new(dims, weights, frames).unwrap();
    let g = gaussian(&mut rng, widths[0], widths[0], 1.0);
    let sxx = (&(&g * &g.transpose()) + &Matrix::identity(widths[0]).scale(0.1)).symmetrized();
    let syx = gaussian(&mut rng, *widths.last().unwrap(), widths[0], 1.0);
    let rank = hbl::matrix::svd(&syx).unwrap().sigma.iter().filter(|s| **s > 1e-12).count();
    (w, DataModel::new(sxx, syx, rank).unwrap())
}

fn loss_at(w: &WeightStack, data: &DataModel, theta: &[f64]) -> f64 {
    data.excess_loss_of(&end_to_end(&w.from_flat(theta).unwrap()))
}

#[test]
fn gradients_match_central_differences() {
    for (seed, widths) in [(1, vec![3, 4, 2]), (2, vec![2, 3, 3, 4]), (3, vec![4, 5, 4, 5, 3])] {
        let (w, data) = generic_problem(seed, widths);
        let analytic: Vec<f64> = population_gradients(&w, &data)
            .iter()
            .flat_map(|g| g.as_slice().to_vec())
            .collect();
        let theta = w.flatten();
        let h = 1e-6;
        for i in 0..theta.len() {
            let (mut up, mut down) = (theta.clone(), theta.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (loss_at(&w, &data, &up) - loss_at(&w, &data, &down)) / (2.0 * h);
            assert!((fd - analytic[i]).abs() < 1e-6 * (1.0 + fd.abs()), "seed {seed} param {i}");
        }
    }
}

#[test]
fn single_layer_gradient_matches_stack() {
    let (w, data) = generic_problem(4, vec![3, 4, 4, 2]);
    let all = population_gradients(&w, &data);
    for layer in 1..=3 {
        assert_eq!(population_gradient(&w, &data, layer).unwrap(), all[layer - 1]);
    }
    assert!(matches!(population_gradient(&w, &data, 0), Err(Error::Domain(_)) | Err(Error::Dimension(_))));
    assert!(population_gradient(&w, &data, 4).is_err());
}

#[test]
fn flatten_round_trip() {
    let (w, _) = generic_problem(5, vec![2, 3, 4]);
    let back = w.from_flat(&w.flatten()).unwrap();
    assert_eq!(back.weights, w.weights);
    assert!(w.from_flat(&[0.0; 3]).is_err());
}

#[test]
fn sampled_moments_approach_population() {
    let dims = NetworkDims::uniform(2, 4, 5, 3, 2).unwrap();
    let frames = Frames::sample(&dims, InputSupport::Full, 9).unwrap();
    let pop = DataModel::whitened(&dims, &frames, InputSupport::Full).unwrap();
    let sampled = DataModel::sampled(&dims, &frames, InputSupport::Full, 200_000, 3).unwrap();
    assert!(sampled.sigma_xx.max_abs_diff(&pop.sigma_xx) < 0.02);
    assert!(sampled.sigma_yx.max_abs_diff(&pop.sigma_yx) < 0.02);
}

fn initial(rank: usize, d_star: usize, head: &[f64], tail: f64) -> Vec<f64> {
    (0..d_star).map(|i| if i < rank { head[i] } else { tail }).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // The aligned values and the loss curve depend only on the initial
    // values, not on which orthonormal frames carry them.
    #[test]
    fn trajectories_do_not_depend_on_frames(
        depth in 2..5usize,
        mu in 0.2..1.2f64,
        seeds in (0..1000u64, 0..1000u64),
    ) {
        let dims = NetworkDims::uniform(depth, 4, 6, 5, 2).unwrap();
        let sv: Vec<f64> = initial(2, 4, &[mu, 0.8 * mu], 0.0).iter().map(|l| l.powi(depth as i32)).collect();
        let run = |seed: u64| {
            let mut w = balanced_init(&dims, &sv, FrameSource::Seed { seed, support: InputSupport::Full }).unwrap();
            let data = DataModel::whitened(&dims, &w.frames, InputSupport::Full).unwrap();
            let m = mu.max(1.0);
            let eta = 0.5 * max_step_size(depth, m);
            let mut out = Vec::new();
            for _ in 0..30 {
                out.push((spectral_state(&w).lambdas, population_excess_loss(&w, &data).unwrap()));
                w = gd_step(&w, &data, eta);
            }
            out
        };
        let (a, b) = (run(seeds.0), run(seeds.1));
        for ((la, fa), (lb, fb)) in a.iter().zip(&b) {
            prop_assert!((fa - fb).abs() < 1e-12);
            for (x, y) in la.iter().zip(lb) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_never_increases_below_step_bound(
        depth in 2..5usize,
        head in prop::collection::vec(0.1..1.4f64, 3),
        fraction in 0.1..0.95f64,
        seed in 0..1000u64,
    ) {
        let mut head = head;
        head.sort_by(|a, b| b.total_cmp(a));
        let dims = NetworkDims::uniform(depth, 5, 6, 4, 3).unwrap();
        let lambda0 = initial(3, 4, &head, 0.0);
        let sv: Vec<f64> = lambda0.iter().map(|l| l.powi(depth as i32)).collect();
        let mut w = balanced_init(&dims, &sv, FrameSource::Seed { seed, support: InputSupport::Full }).unwrap();
        let data = DataModel::whitened(&dims, &w.frames, InputSupport::Full).unwrap();
        let m = head[0].max(1.0);
        let eta = fraction * max_step_size(depth, m);
        let mut prev = population_excess_loss(&w, &data).unwrap();
        for _ in 0..200 {
            w = gd_step(&w, &data, eta);
            let loss = population_excess_loss(&w, &data).unwrap();
            prop_assert!(loss <= prev * (1.0 + 1e-12) + 1e-24);
            prev = loss;
        }
    }

    // The matrix run and the per-coordinate recursion agree, including
    // nonzero coordinates outside the target and rank-limited inputs.
    #[test]
    fn matrix_run_follows_scalar_recursion(
        depth in 2..5usize,
        head in prop::collection::vec(0.3..1.1f64, 2),
        tail in 0.0..0.25f64,
        rank_support in any::<bool>(),
        seed in 0..1000u64,
    ) {
        let mut head = head;
        head.sort_by(|a, b| b.total_cmp(a));
        let support = if rank_support { InputSupport::Rank } else { InputSupport::Full };
        let dims = NetworkDims::uniform(depth, 5, 6, 4, 2).unwrap();
        let mut lambdas = initial(2, 4, &head, tail);
        let sv: Vec<f64> = lambdas.iter().map(|l| l.powi(depth as i32)).collect();
        let mut w = balanced_init(&dims, &sv, FrameSource::Seed { seed, support }).unwrap();
        let data = DataModel::whitened(&dims, &w.frames, support).unwrap();
        let (s, t) = data.coordinate_coefficients(&w.frames);
        let eta = 0.5 * max_step_size(depth, head[0].max(1.0));
        lambdas = spectral_state(&w).lambdas;
        for _ in 0..300 {
            w = gd_step(&w, &data, eta);
            for (i, l) in lambdas.iter_mut().enumerate() {
                *l = coordinate_step(*l, eta, depth, s[i], t[i]);
            }
            let state = spectral_state(&w);
            prop_assert!(state.residual < 1e-9);
            for (x, y) in state.lambdas.iter().zip(&lambdas) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn rank_support_covariance_has_rank_r() {
    let dims = NetworkDims::uniform(3, 6, 7, 5, 2).unwrap();
    let frames = Frames::sample(&dims, InputSupport::Rank, 4).unwrap();
    let data = DataModel::whitened(&dims, &frames, InputSupport::Rank).unwrap();
    let values = sym_eig(&data.sigma_xx).unwrap().values;
    assert_eq!(values.iter().filter(|v| **v > 0.5).count(), 2);
}

#[test]
fn balanced_init_rejects_bad_values() {
    let dims = NetworkDims::uniform(3, 4, 5, 4, 2).unwrap();
    let seeded = || FrameSource::Seed { seed: 0, support: InputSupport::Full };
    assert!(matches!(balanced_init(&dims, &[1.0, 0.5], seeded()), Err(Error::Dimension(_))));
    assert!(matches!(balanced_init(&dims, &[1.0, -0.5, 0.0, 0.0], seeded()), Err(Error::Domain(_))));
    assert!(matches!(balanced_init(&dims, &[0.5, 1.0, 0.0, 0.0], seeded()), Err(Error::Domain(_))));
}
