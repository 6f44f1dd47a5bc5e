//! Independent-factorization oracles for the downstream planners.

mod common;

use refuel_core::envgen::{random_mdp, random_reward};
use refuel_core::linalg::SymMatrix;
use refuel_core::mdp::Policy;
use refuel_core::offline::{self, one_hot_features, PessimismConfig};
use refuel_core::online::{self, OnlineConfig};
use refuel_core::rng::SplitRng;

#[test]
fn ridge_weights_match_lu_oracle() {
    let mdp = random_mdp(6, 3, 4, 3, 111);
    let phi = mdp.features();
    let mut rng = SplitRng::new(17);
    let pairs: Vec<(usize, usize)> = (0..300)
        .map(|_| (rng.uniform_index(6), rng.uniform_index(3)))
        .collect();
    let targets: Vec<f64> = (0..300).map(|_| rng.next_f64()).collect();
    let lambda = 1.0;
    let w = offline::ridge_weights(phi, 2, &pairs, &targets, lambda).unwrap();

    let d = 3;
    let mut gram = vec![vec![0.0; d]; d];
    let mut moment = vec![0.0; d];
    for i in 0..d {
        gram[i][i] = lambda;
    }
    for (&(s, a), &y) in pairs.iter().zip(&targets) {
        let row = phi.row(2, s, a);
        for i in 0..d {
            moment[i] += row[i] * y;
            for j in 0..d {
                gram[i][j] += row[i] * row[j];
            }
        }
    }
    let oracle = common::lu_solve(&gram, &moment);
    for (a, b) in w.iter().zip(&oracle) {
        assert!((a - b).abs() <= 1e-10, "ridge weight {a} vs oracle {b}");
    }
}

#[test]
fn optimistic_backup_weights_match_lu_oracle() {
    let mdp = random_mdp(5, 3, 4, 2, 222);
    let reward = random_reward(5, 3, 4, 2, 223);
    let phi = mdp.features();
    let mut rng = SplitRng::new(18);
    let pairs: Vec<(usize, usize)> = (0..120)
        .map(|_| (rng.uniform_index(5), rng.uniform_index(3)))
        .collect();
    let targets: Vec<f64> = (0..120).map(|_| rng.next_f64()).collect();
    let (_, w) = online::optimistic_q_backup(phi, 1, &pairs, &targets, &reward, 0.3, 1.0).unwrap();

    let d = 2;
    let mut gram = vec![vec![0.0; d]; d];
    let mut moment = vec![0.0; d];
    for i in 0..d {
        gram[i][i] = 1.0;
    }
    for (&(s, a), &y) in pairs.iter().zip(&targets) {
        let row = phi.row(1, s, a);
        for i in 0..d {
            moment[i] += row[i] * y;
            for j in 0..d {
                gram[i][j] += row[i] * row[j];
            }
        }
    }
    let oracle = common::lu_solve(&gram, &moment);
    for (a, b) in w.iter().zip(&oracle) {
        assert!((a - b).abs() <= 1e-10);
    }
}

#[test]
fn pevi_one_hot_gap_shrinks_with_data() {
    // Oracle features make the downstream task exactly linear; the gap
    // against exact dynamic programming must land small once the dataset
    // is comfortable, and grow no worse with more data.
    let mdp = random_mdp(6, 3, 4, 2, 331);
    let reward = random_reward(6, 3, 4, 3, 332);
    let behavior = Policy::uniform(4, 6, 3);
    let phi = one_hot_features(4, 6, 3);
    let config = PessimismConfig {
        c_beta: 0.02,
        xi_down: 0.0,
        reward_dim: 3,
        ..PessimismConfig::default()
    };
    let mut gaps = Vec::new();
    for &n_off in &[512usize, 4096] {
        let ds = offline::gen_offline_dataset(&mdp, &reward, &behavior, n_off, 333).unwrap();
        let (policy, _) = offline::pevi(&ds, &phi, &reward, &config).unwrap();
        gaps.push(refuel_core::eval::suboptimality_gap(&mdp, &reward, &policy).unwrap());
    }
    assert!(gaps[1] <= gaps[0] + 1e-9, "gap grew with data: {gaps:?}");
    assert!(gaps[1] <= 0.1, "gap at 4096 too large: {}", gaps[1]);
}

#[test]
fn pevi_gamma_shrinks_as_records_accumulate() {
    // Loewner monotonicity at a fixed query: appending records can only
    // shrink the elliptical width.
    let mdp = random_mdp(5, 3, 4, 2, 441);
    let phi = mdp.features();
    let mut rng = SplitRng::new(442);
    let pairs: Vec<(usize, usize)> = (0..200)
        .map(|_| (rng.uniform_index(5), rng.uniform_index(3)))
        .collect();
    let query = phi.row(1, 2, 1);
    let mut prev = f64::INFINITY;
    for take in [10usize, 50, 200] {
        let mut gram = SymMatrix::scaled_identity(2, 1.0);
        for &(s, a) in &pairs[..take] {
            gram.add_outer(phi.row(1, s, a));
        }
        let width = gram.cholesky().unwrap().quad_form_inv(query).sqrt();
        assert!(width <= prev + 1e-12);
        prev = width;
    }
}

#[test]
fn online_average_regret_declines() {
    let mdp = random_mdp(5, 3, 4, 2, 551);
    let reward = random_reward(5, 3, 4, 3, 552);
    let phi = mdp.features();
    let (v_star, _) = refuel_core::mdp::optimal_dp(&mdp, &reward).unwrap();
    let config = OnlineConfig {
        num_episodes: 400,
        c_beta: 0.05,
        reward_dim: 3,
        ..OnlineConfig::default()
    };
    let record = online::run_lsvi_ucb(&mdp, &reward, phi, &config, 553).unwrap();
    let avg_regret_at = |n: usize| {
        let mut acc = 0.0;
        for p in &record.policies[..n] {
            acc += v_star - refuel_core::mdp::value_dp(&mdp, &reward, p).unwrap();
        }
        acc / n as f64
    };
    let early = avg_regret_at(100);
    let late = avg_regret_at(400);
    assert!(
        late <= early + 1e-12,
        "average regret rose: {early} -> {late}"
    );
}
