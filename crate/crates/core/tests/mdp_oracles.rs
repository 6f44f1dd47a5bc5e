//! Monte-Carlo and direct-summation oracles for the MDP primitives.

mod common;

use refuel_core::envgen::{random_mdp, random_reward};
use refuel_core::mdp::{
    occupancy, optimal_dp, sample_trajectory, simulation_residual, value_dp, FeatureTable,
    MeasureTable, Policy, TabularLowRankMdp,
};

#[test]
fn transition_matches_elementwise_inner_product_oracle() {
    let mdp = random_mdp(4, 3, 3, 2, 404);
    for h in 0..3 {
        for s in 0..4 {
            for a in 0..3 {
                let dist = mdp.transition_dist(h, s, a).unwrap();
                let phi = mdp.features().row(h, s, a);
                for s2 in 0..4 {
                    let mu = mdp.measures().row(h, s2);
                    let direct: f64 = phi.iter().zip(mu).map(|(x, y)| x * y).sum();
                    assert!(
                        (dist[s2] - direct.max(0.0)).abs() <= 1e-12,
                        "entry ({h},{s},{a},{s2}) deviates"
                    );
                }
            }
        }
    }
}

#[test]
fn value_dp_within_three_sigma_of_monte_carlo() {
    let mdp = random_mdp(6, 3, 4, 2, 41);
    let reward = random_reward(6, 3, 4, 3, 42);
    let policy = Policy::random(4, 6, 3, 43);
    let exact = value_dp(&mdp, &reward, &policy).unwrap();

    let n = 100_000;
    let returns: Vec<f64> = (0..n)
        .map(|i| {
            let t = sample_trajectory(&mdp, &reward, &policy, 10_000 + i).unwrap();
            t.steps.iter().map(|s| s.reward).sum()
        })
        .collect();
    let (mean, se) = common::mean_and_se(&returns);
    assert!(
        (exact - mean).abs() <= 3.0 * se,
        "exact {exact} vs MC {mean} +- {se}"
    );
}

#[test]
fn optimal_dp_dominates_random_policies() {
    let mdp = random_mdp(5, 3, 4, 2, 51);
    let reward = random_reward(5, 3, 4, 3, 52);
    let (v_star, _) = optimal_dp(&mdp, &reward).unwrap();
    for seed in 0..100 {
        let pi = Policy::random(4, 5, 3, 7_000 + seed);
        let v = value_dp(&mdp, &reward, &pi).unwrap();
        assert!(v <= v_star + 1e-12);
    }
}

#[test]
fn occupancy_matches_empirical_frequencies() {
    let mdp = random_mdp(5, 2, 3, 2, 61);
    let reward = random_reward(5, 2, 3, 2, 62);
    let policy = Policy::random(3, 5, 2, 63);
    let occ = occupancy(&mdp, &policy).unwrap();

    let n = 100_000usize;
    let mut counts = vec![0usize; 3 * 5 * 2];
    for i in 0..n {
        let t = sample_trajectory(&mdp, &reward, &policy, 90_000 + i as u64).unwrap();
        for (h, step) in t.steps.iter().enumerate() {
            counts[(h * 5 + step.state) * 2 + step.action] += 1;
        }
    }
    for h in 0..3 {
        for s in 0..5 {
            for a in 0..2 {
                let p = occ.get(h, s, a);
                let freq = counts[(h * 5 + s) * 2 + a] as f64 / n as f64;
                if p == 0.0 {
                    assert_eq!(freq, 0.0, "impossible cell ({h},{s},{a}) was sampled");
                } else {
                    let sigma = (p * (1.0 - p) / n as f64).sqrt();
                    assert!(
                        (freq - p).abs() <= 3.0 * sigma,
                        "cell ({h},{s},{a}): occ {p} vs freq {freq}"
                    );
                }
            }
        }
    }
}

#[test]
fn sampled_next_state_frequencies_match_transition_dist() {
    let mdp = random_mdp(6, 3, 2, 2, 71);
    let reward = random_reward(6, 3, 2, 2, 72);
    // Deterministic first action pins the transition row under test.
    let policy = Policy::deterministic(2, 6, 3, &[1; 12]);
    let target = mdp.transition_dist(0, 0, 1).unwrap().to_vec();

    let n = 100_000usize;
    let mut counts = vec![0usize; 6];
    for i in 0..n {
        let t = sample_trajectory(&mdp, &reward, &policy, 50_000 + i as u64).unwrap();
        counts[t.steps[0].next_state] += 1;
    }
    for s2 in 0..6 {
        let p = target[s2];
        let freq = counts[s2] as f64 / n as f64;
        if p == 0.0 {
            assert_eq!(freq, 0.0);
        } else {
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (freq - p).abs() <= 3.0 * sigma,
                "state {s2}: p {p} vs freq {freq}"
            );
        }
    }
}

#[test]
fn value_invariant_to_joint_latent_permutation() {
    let mdp = random_mdp(5, 3, 4, 3, 81);
    let reward = random_reward(5, 3, 4, 2, 82);
    let policy = Policy::random(4, 5, 3, 83);
    let v = value_dp(&mdp, &reward, &policy).unwrap();

    // Permute the latent dimension of phi and mu jointly: (0,1,2) -> (2,0,1).
    let perm = [2usize, 0, 1];
    let phi = mdp.features();
    let mut phi_data = Vec::with_capacity(phi.data().len());
    for row in phi.data().chunks(3) {
        for &j in &perm {
            phi_data.push(row[j]);
        }
    }
    let mu = mdp.measures();
    let mut mu_data = Vec::with_capacity(mu.data().len());
    for row in mu.data().chunks(3) {
        for &j in &perm {
            mu_data.push(row[j]);
        }
    }
    let permuted = TabularLowRankMdp::new(
        FeatureTable::from_raw(4, 5, 3, 3, phi_data).unwrap(),
        MeasureTable::from_raw(4, 5, 3, mu_data).unwrap(),
        0,
    )
    .unwrap();
    let v_perm = value_dp(&permuted, &reward, &policy).unwrap();
    assert!((v - v_perm).abs() <= 1e-10);
}

#[test]
fn occupancy_contracts_reward_to_value() {
    for seed in 0..10 {
        let mdp = random_mdp(6, 3, 4, 2, 900 + seed);
        let reward = random_reward(6, 3, 4, 3, 950 + seed);
        let policy = Policy::random(4, 6, 3, 990 + seed);
        let v = value_dp(&mdp, &reward, &policy).unwrap();
        let occ = occupancy(&mdp, &policy).unwrap();
        let mut contracted = 0.0;
        for h in 0..4 {
            for s in 0..6 {
                for a in 0..3 {
                    contracted += occ.get(h, s, a) * reward.get(h, s, a);
                }
            }
        }
        assert!((contracted - v).abs() <= 1e-10);
    }
}

#[test]
fn simulation_residual_one_hundred_random_pairs() {
    for seed in 0..100 {
        let m1 = random_mdp(5, 3, 4, 2, 2_000 + seed);
        let m2 = random_mdp(5, 3, 4, 2, 3_000 + seed);
        let r1 = random_reward(5, 3, 4, 2, 4_000 + seed);
        let r2 = random_reward(5, 3, 4, 2, 5_000 + seed);
        let policy = Policy::random(4, 5, 3, 6_000 + seed);
        let res = simulation_residual(&m1, &m2, &r1, &r2, &policy).unwrap();
        assert!(res <= 1e-8, "pair {seed}: residual {res}");
    }
}
