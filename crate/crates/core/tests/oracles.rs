mod common;

use common::*;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng;
use simca::datagen::{generate_dataset, GenConfig};
use simca::experiment::{sweep, ExperimentConfig, SweepParam};
use simca::lap::{round_coupling, solve_lap};
use simca::sinkhorn::{entropy, extend_with_slack, ot_value, solve_ot, StopRule};
use simca::trainer::{
    evaluate_loss, loss_gradient_items, loss_gradient_users, train,
    TrainConfig,
};
use simca::{CapacityVector, Coupling, EmbeddingMatrix};

fn loss_at(inst: &Instance, users: &EmbeddingMatrix, items: &EmbeddingMatrix, eps: f64) -> (f64, f64) {
    let eval = evaluate_loss(
        users,
        items,
        &inst.distances,
        &inst.caps,
        &inst.sigma,
        inst.alpha,
        eps,
        TIGHT,
    )
    .unwrap();
    (eval.loss, eval.extended_loss)
}

fn fd_items(inst: &Instance, eps: f64, extended: bool) -> Array2<f64> {
    let h = 1e-5;
    let base = inst.items.values().to_owned();
    Array2::from_shape_fn(base.dim(), |(j, k)| {
        let eval = |delta: f64| {
            let mut v = base.clone();
            v[[j, k]] += delta;
            let (real, ext) = loss_at(inst, &inst.users, &EmbeddingMatrix::new(v).unwrap(), eps);
            if extended { ext } else { real }
        };
        (eval(h) - eval(-h)) / (2.0 * h)
    })
}

#[test]
fn item_gradient_matches_finite_differences_without_slack() {
    for seed in 0..5 {
        let inst = random_instance(seed, 7, 3, 3, 0);
        let solved = evaluate_loss(
            &inst.users, &inst.items, &inst.distances, &inst.caps, &inst.sigma, inst.alpha, 0.5, TIGHT,
        )
        .unwrap()
        .solved;
        let g = loss_gradient_items(&inst.users, &inst.sigma, &solved.user_coupling(), inst.alpha, 0.5)
            .unwrap();
        let err = relative_error(&g, &fd_items(&inst, 0.5, false));
        assert!(err <= 1e-5, "seed {seed}: relative error {err}");
    }
}

#[test]
fn item_gradient_with_slack_is_the_extended_loss_gradient() {
    for seed in 0..5 {
        let inst = random_instance(100 + seed, 6, 3, 2, 4);
        let solved = evaluate_loss(
            &inst.users, &inst.items, &inst.distances, &inst.caps, &inst.sigma, inst.alpha, 0.5, TIGHT,
        )
        .unwrap()
        .solved;
        let g = loss_gradient_items(&inst.users, &inst.sigma, &solved.user_coupling(), inst.alpha, 0.5)
            .unwrap();
        let err = relative_error(&g, &fd_items(&inst, 0.5, true));
        assert!(err <= 1e-5, "seed {seed}: relative error {err}");
    }
}

#[test]
fn user_gradient_matches_finite_differences() {
    let h = 1e-5;
    for seed in 0..3 {
        let inst = random_instance(200 + seed, 5, 2, 2, 0);
        let solved = evaluate_loss(
            &inst.users, &inst.items, &inst.distances, &inst.caps, &inst.sigma, inst.alpha, 0.7, TIGHT,
        )
        .unwrap()
        .solved;
        let g = loss_gradient_users(&inst.items, &inst.sigma, &solved.user_coupling(), inst.alpha, 0.7)
            .unwrap();
        let base = inst.users.values().to_owned();
        let fd = Array2::from_shape_fn(base.dim(), |(i, k)| {
            let eval = |delta: f64| {
                let mut u = base.clone();
                u[[i, k]] += delta;
                loss_at(&inst, &EmbeddingMatrix::new(u).unwrap(), &inst.items, 0.7).0
            };
            (eval(h) - eval(-h)) / (2.0 * h)
        });
        let err = relative_error(&g, &fd);
        assert!(err <= 1e-5, "seed {seed}: relative error {err}");
    }
}

#[test]
fn small_coupling_matches_projected_gradient_oracle() {
    let mut r = rng(7);
    let caps = CapacityVector::new(vec![2, 1]).unwrap();
    for _ in 0..5 {
        let scores = uniform_matrix(&mut r, 3, 2, -1.0, 1.0);
        let inst = extend_with_slack(scores.view(), &caps, 0.5).unwrap();
        let solved = solve_ot(&inst, TIGHT).unwrap();
        let oracle = two_item_ot_oracle(&scores, 2.0, 0.5);
        let gap = (&solved.coupling.values() - &oracle).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(gap <= 1e-6, "max deviation {gap}");
    }
}

#[test]
fn optimal_value_dominates_feasible_couplings() {
    let mut r = rng(8);
    for _ in 0..5 {
        let n = r.random_range(3..7);
        let c0 = r.random_range(1..n);
        let caps = CapacityVector::new(vec![c0, n - c0]).unwrap();
        let scores = uniform_matrix(&mut r, n, 2, -1.0, 1.0);
        let eps = r.random_range(0.1..1.0);
        let inst = extend_with_slack(scores.view(), &caps, eps).unwrap();
        let solved = solve_ot(&inst, TIGHT).unwrap();
        let best = ot_value(scores.view(), &solved.coupling, eps).unwrap();
        let oracle = two_item_ot_oracle(&scores, c0 as f64, eps);
        let oracle_value = trace_value(&scores, &oracle) + eps * entropy_of(&oracle);
        assert!((best - oracle_value).abs() <= 1e-8, "{best} vs {oracle_value}");
        for _ in 0..20 {
            let guess: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
            let x = project_capped_simplex(&guess, c0 as f64);
            let pi = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { x[i] } else { 1.0 - x[i] });
            let value = trace_value(&scores, &pi) + eps * entropy_of(&pi);
            assert!(best >= value - 1e-10, "{best} < {value}");
        }
    }
}

#[test]
fn small_epsilon_rounding_recovers_exact_assignment() {
    let mut r = rng(9);
    let mut checked = 0;
    while checked < 10 {
        let caps = random_caps(&mut r, 10, 3, 0);
        let scores = uniform_matrix(&mut r, 10, 3, -1.0, 1.0);
        let ranked = all_objectives(&scores, caps.as_slice());
        if ranked.len() < 2 || ranked[0] - ranked[1] < 0.1 {
            continue;
        }
        let exact = solve_lap(scores.view(), &caps).unwrap();
        let inst = extend_with_slack(scores.view(), &caps, 0.01).unwrap();
        // convergence slows down like 1/eps; rounding only needs coarse marginals
        let stop = StopRule::Tolerance { tolerance: 1e-8, max_iters: 1_000_000 };
        let solved = solve_ot(&inst, stop).unwrap();
        let rounded = round_coupling(&solved.user_coupling(), &caps).unwrap();
        assert_eq!(rounded, exact.matching);
        checked += 1;
    }
}

#[test]
fn loss_is_invariant_to_translating_all_items() {
    for seed in 0..4 {
        let inst = random_instance(300 + seed, 8, 3, 2, seed as usize);
        let shift = Array1::from(vec![0.8, -1.1]);
        let moved = EmbeddingMatrix::new(inst.items.values().to_owned() + &shift).unwrap();
        let (a, ae) = loss_at(&inst, &inst.users, &inst.items, 0.3);
        let (b, be) = loss_at(&inst, &inst.users, &moved, 0.3);
        assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{a} vs {b}");
        assert!((ae - be).abs() <= 1e-9 * ae.abs().max(1.0), "{ae} vs {be}");
    }
}

#[test]
fn zero_epochs_returns_initial_items_and_empty_history() {
    let ds = generate_dataset(&GenConfig { n: 20, ..GenConfig::default() }).unwrap();
    let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
    let out = train(&ds, &cfg).unwrap();
    assert!(out.history.is_empty());
    assert!(out.items.is_normalized(1e-12));
    let once = train(&ds, &TrainConfig { epochs: 1, ..cfg }).unwrap();
    let truth = ds.items_truth.as_ref().unwrap();
    let start = simca::metrics::mean_embedding_distance(&out.items, truth).unwrap();
    assert_eq!(once.history.first().unwrap().mean_embed_dist, Some(start));
    assert_ne!(once.items, out.items);
}

#[test]
fn training_is_deterministic() {
    let ds = generate_dataset(&GenConfig { n: 40, seed: 3, ..GenConfig::default() }).unwrap();
    let cfg = TrainConfig { epochs: 30, seed: 5, joint_users: true, ..TrainConfig::default() };
    assert_eq!(train(&ds, &cfg).unwrap(), train(&ds, &cfg).unwrap());
    let other = train(&ds, &TrainConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(other.items, train(&ds, &cfg).unwrap().items);
}

#[test]
fn sweep_rows_do_not_depend_on_worker_count() {
    let cfg = ExperimentConfig {
        n: 40,
        epochs: 15,
        repeats: 3,
        sweep_param: SweepParam::SwapRho,
        rho_values: vec![0.0, 0.3],
        ..ExperimentConfig::default()
    };
    let ds = generate_dataset(&cfg.gen_config()).unwrap();
    assert_eq!(sweep(&ds, &cfg, 1).unwrap(), sweep(&ds, &cfg, 4).unwrap());
}

#[test]
fn early_epochs_reduce_loss_on_a_generated_dataset() {
    let ds = generate_dataset(&GenConfig { n: 60, seed: 1, ..GenConfig::default() }).unwrap();
    let out = train(&ds, &TrainConfig { epochs: 100, ..TrainConfig::default() }).unwrap();
    let first = out.history.first().unwrap().loss;
    let last = out.history.last().unwrap().loss;
    assert!(last < first, "{first} -> {last}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn entropy_matches_direct_sum(seed in 0u64..1000, n in 2usize..6, m in 1usize..4, slack in 0usize..3) {
        prop_assume!(n >= m);
        let mut r = rng(seed);
        let caps = random_caps(&mut r, n, m, slack);
        let scores = uniform_matrix(&mut r, n, m, -2.0, 2.0);
        let inst = extend_with_slack(scores.view(), &caps, 0.4).unwrap();
        let solved = solve_ot(&inst, StopRule::converged()).unwrap();
        let ours = entropy(&solved.coupling).unwrap();
        let direct = entropy_of(&solved.coupling.values().to_owned());
        prop_assert!((ours - direct).abs() <= 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn extended_loss_adds_only_the_virtual_row(seed in 0u64..1000, slack in 0usize..4) {
        let inst = random_instance(seed, 6, 2, 2, slack);
        let eval = evaluate_loss(&inst.users, &inst.items, &inst.distances, &inst.caps, &inst.sigma, inst.alpha, 0.5, TIGHT).unwrap();
        let pi: &Coupling = &eval.solved.coupling;
        let counts = inst.sigma.counts(2);
        let virtual_part: f64 = match eval.solved.slack_row() {
            Some(row) => (0..2).map(|j| -((inst.caps.as_slice()[j] - counts[j]) as f64) * row[j].ln()).sum(),
            None => 0.0,
        };
        prop_assert_eq!(pi.shape().0, if slack > 0 { 7 } else { 6 });
        prop_assert!((eval.extended_loss - eval.loss - virtual_part).abs() <= 1e-10 * eval.loss.abs().max(1.0));
    }
}
