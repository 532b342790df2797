//! Generators and an independent brute-force optimum shared by the
//! integration tests and the acceptance runner.
#![allow(dead_code)]

use hiring::block::{BlockNode, BlockTree, CorrectionCoin};
use hiring::scalar::rational_from_decimal;
use hiring::tree::policy_tree_from_function;
use hiring::{BigRational, DecisionTree, Instance, State};
use num_traits::{One, Zero};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Values on a 0.5 grid in [0, 10] and probabilities on a 0.05 grid in
/// [0, 1], so ties and the extreme probabilities both occur.
pub fn random_decimal_instance(rng: &mut ChaCha8Rng, n: usize, k: usize, horizon: usize) -> (Instance<f64>, Instance<BigRational>) {
    let values: Vec<f64> = (0..n).map(|_| rng.random_range(0..=20) as f64 * 0.5).collect();
    let probs: Vec<f64> = (0..n).map(|_| rng.random_range(0..=20) as f64 * 0.05).collect();
    let probs: Vec<f64> = probs.iter().map(|p| (p * 100.0).round() / 100.0).collect();
    let f = Instance::new(values.clone(), probs.clone(), k, horizon).unwrap();
    let q = Instance::new(
        values.iter().map(|&v| rational_from_decimal(v)).collect(),
        probs.iter().map(|&p| rational_from_decimal(p)).collect(),
        k,
        horizon,
    )
    .unwrap();
    (f, q)
}

/// Instance with `n` in `1..=n_max`, `k` in `1..=min(k_max, n)` and `T` in
/// `1..=t_max`.
pub fn random_sized(rng: &mut ChaCha8Rng, n_max: usize, k_max: usize, t_max: usize) -> (Instance<f64>, Instance<BigRational>) {
    let n = rng.random_range(1..=n_max);
    let k = rng.random_range(1..=k_max.min(n));
    let t = rng.random_range(1..=t_max);
    random_decimal_instance(rng, n, k, t)
}

/// A valid tree that offers a uniformly random available applicant at every
/// state (the same one wherever the state repeats).
pub fn random_tree(rng: &mut ChaCha8Rng, inst: &Instance<f64>) -> DecisionTree {
    let mut choice = std::collections::HashMap::new();
    policy_tree_from_function(inst, |s: &State| {
        *choice.entry(s.clone()).or_insert_with(|| {
            let avail: Vec<usize> = s.avail.iter().collect();
            avail[rng.random_range(0..avail.len())]
        })
    })
    .unwrap()
}

/// A valid block tree with random blocks. Leaves sit at terminal states
/// unless `early_leaves` allows stopping anywhere; coins appear on about a
/// third of the internal nodes when `coins` is set.
pub fn random_block_tree(rng: &mut ChaCha8Rng, inst: &Instance<f64>, coins: bool, early_leaves: bool) -> BlockTree<f64> {
    let mut t = BlockTree { nodes: Vec::new(), root: 0 };
    t.root = grow(rng, inst, State::initial(inst), coins, early_leaves, &mut t);
    t
}

fn grow(rng: &mut ChaCha8Rng, inst: &Instance<f64>, state: State, coins: bool, early: bool, t: &mut BlockTree<f64>) -> usize {
    if state.is_terminal(inst.horizon) || (early && rng.random_bool(0.15)) {
        return t.push(BlockNode::leaf(state));
    }
    let mut avail: Vec<usize> = state.avail.iter().collect();
    avail.shuffle(rng);
    let room = (inst.horizon + 1 - state.t).min(avail.len());
    let size = rng.random_range(1..=room.min(3));
    let block = avail[..size].to_vec();
    let coin = (coins && rng.random_bool(0.35)).then(|| CorrectionCoin { target_prob: rng.random_range(0..=10) as f64 / 10.0 });
    let l = grow(rng, inst, state.after(&block, false), coins, early, t);
    let r = grow(rng, inst, state.after(&block, true), coins, early, t);
    t.push(BlockNode { state, block, left: Some(l), right: Some(r), coin })
}

/// Rewards of every valid policy tree from `state`, listed one per tree.
/// Written directly from the dynamics, sharing nothing with the solvers.
pub fn all_tree_rewards(inst: &Instance<BigRational>, t: usize, k: usize, avail: &[usize]) -> Vec<BigRational> {
    if t > inst.horizon || k == 0 || avail.is_empty() {
        return vec![BigRational::zero()];
    }
    let mut out = Vec::new();
    for (pos, &a) in avail.iter().enumerate() {
        let mut rest = avail.to_vec();
        rest.remove(pos);
        let lefts = all_tree_rewards(inst, t + 1, k, &rest);
        let rights = all_tree_rewards(inst, t + 1, k - 1, &rest);
        let p = inst.probs[a].clone();
        let q = BigRational::one() - p.clone();
        for l in &lefts {
            for r in &rights {
                out.push(p.clone() * (inst.values[a].clone() + r.clone()) + q.clone() * l.clone());
            }
        }
    }
    out
}

pub fn brute_force_optimum(inst: &Instance<BigRational>) -> BigRational {
    let avail: Vec<usize> = (0..inst.values.len()).collect();
    all_tree_rewards(inst, 1, inst.k, &avail).into_iter().max().unwrap()
}

pub fn rel_le(a: f64, b: f64, rel: f64) -> bool {
    a <= b + rel * (1.0 + a.abs().max(b.abs()))
}
