//! Monte Carlo simulation of policies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block::BlockTree;
use crate::instance::Instance;
use crate::scalar::Scalar;
use crate::tree::DecisionTree;

#[derive(Clone, Copy, Debug)]
pub enum Policy<'a, S> {
    Tree(&'a DecisionTree),
    Block(&'a BlockTree<S>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub trials: u64,
    pub mean_reward: f64,
    pub std_error: f64,
    pub seed: u64,
}

/// Trial `i` draws from its own stream of a generator seeded with `seed`,
/// so results do not depend on scheduling.
pub fn simulate<S: Scalar>(policy: Policy<'_, S>, inst: &Instance<S>, trials: u64, seed: u64) -> SimReport {
    let values: Vec<f64> = inst.values.iter().map(|v| v.to_f64()).collect();
    let probs: Vec<f64> = inst.probs.iter().map(|p| p.to_f64()).collect();
    let coins: Vec<Option<f64>> = match policy {
        Policy::Block(b) => b.nodes.iter().map(|n| n.coin.as_ref().map(|c| c.target_prob.to_f64())).collect(),
        Policy::Tree(_) => Vec::new(),
    };
    let rewards: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i);
            let mut trial = Trial { values: &values, probs: &probs, k: inst.k, horizon: inst.horizon, offered: vec![false; values.len()], accepted: 0, stages: 0, reward: 0.0 };
            match policy {
                Policy::Tree(t) => trial.run_tree(t, &mut rng),
                Policy::Block(b) => trial.run_block(b, &coins, &mut rng),
            }
            trial.reward
        })
        .collect();
    let n = trials as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std_error = if trials > 1 {
        let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    SimReport { trials, mean_reward: mean, std_error, seed }
}

struct Trial<'a> {
    values: &'a [f64],
    probs: &'a [f64],
    k: usize,
    horizon: usize,
    offered: Vec<bool>,
    accepted: usize,
    stages: usize,
    reward: f64,
}

impl Trial<'_> {
    fn offer(&mut self, app: usize, rng: &mut ChaCha8Rng) -> bool {
        assert!(!std::mem::replace(&mut self.offered[app], true), "applicant {app} offered twice");
        if rng.random::<f64>() < self.probs[app] {
            self.accepted += 1;
            assert!(self.accepted <= self.k, "more than k acceptances");
            self.reward += self.values[app];
            true
        } else {
            false
        }
    }

    fn run_tree(&mut self, tree: &DecisionTree, rng: &mut ChaCha8Rng) {
        let mut id = tree.root;
        while let Some((l, r)) = tree.children(id) {
            self.stages += 1;
            assert!(self.stages <= self.horizon, "more than T offers");
            id = if self.offer(tree.nodes[id].app, rng) { r } else { l };
        }
    }

    fn run_block<S: Scalar>(&mut self, tree: &BlockTree<S>, coins: &[Option<f64>], rng: &mut ChaCha8Rng) {
        let mut id = tree.root;
        while let Some((l, r)) = tree.children(id) {
            let block = &tree.nodes[id].block;
            self.stages += block.len();
            assert!(self.stages <= self.horizon, "more than T stages");
            let hired = block.iter().any(|&a| self.offer(a, rng));
            id = if hired {
                r
            } else {
                match coins[id] {
                    Some(c) if rng.random::<f64>() >= c => r,
                    _ => l,
                }
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::{block_root_reward, BlockNode, CorrectionCoin};
    use crate::instance::worked_example;
    use crate::tree::{policy_tree_from_function, root_reward, State};

    fn worked_tree(inst: &Instance<f64>) -> DecisionTree {
        policy_tree_from_function(inst, |s: &State| match (s.t, s.k) {
            (1, _) => 0,
            (_, 2) => 1,
            _ => 2,
        })
        .unwrap()
    }

    #[test]
    fn worked_tree_calibrates() {
        let inst = worked_example();
        let tree = worked_tree(&inst);
        let rep = simulate::<f64>(Policy::Tree(&tree), &inst, 100_000, 11);
        assert!((rep.mean_reward - 3.0).abs() <= 4.0 * rep.std_error);
    }

    #[test]
    fn deterministic_instance_has_no_variance() {
        let inst = Instance::new(vec![2.0, 5.0], vec![1.0, 0.0], 1, 2).unwrap();
        let tree = policy_tree_from_function(&inst, |s: &State| s.avail.iter().last().unwrap()).unwrap();
        let rep = simulate::<f64>(Policy::Tree(&tree), &inst, 1000, 3);
        assert_eq!((rep.mean_reward, rep.std_error), (root_reward(&tree, &inst), 0.0));
    }

    #[test]
    fn same_seed_same_report() {
        let inst = worked_example();
        let tree = worked_tree(&inst);
        let a = simulate::<f64>(Policy::Tree(&tree), &inst, 5000, 99);
        let b = simulate::<f64>(Policy::Tree(&tree), &inst, 5000, 99);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = simulate::<f64>(Policy::Tree(&tree), &inst, 5000, 100);
        assert_ne!(a.mean_reward, c.mean_reward);
    }

    #[test]
    fn coin_flips_match_analytic_reward() {
        let inst = worked_example();
        let root = State::initial(&inst);
        let mut t = BlockTree { nodes: vec![], root: 0 };
        let l = t.push(BlockNode::leaf(root.after(&[0], false)));
        let rl = t.push(BlockNode::leaf(root.after(&[0, 2], false)));
        let rr = t.push(BlockNode::leaf(root.after(&[0, 2], true)));
        let r = t.push(BlockNode { state: root.after(&[0], true), block: vec![2], left: Some(rl), right: Some(rr), coin: None });
        t.root = t.push(BlockNode { state: root, block: vec![0], left: Some(l), right: Some(r), coin: Some(CorrectionCoin { target_prob: 0.3 }) });
        let rep = simulate(Policy::Block(&t), &inst, 100_000, 5);
        assert!((rep.mean_reward - block_root_reward(&t, &inst)).abs() <= 4.0 * rep.std_error);
    }
}
