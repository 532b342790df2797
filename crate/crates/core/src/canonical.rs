//! Canonical trees: at every internal node the rejection subtree is worth at
//! least the acceptance subtree (L >= R), and the offered value plus the
//! acceptance subtree is worth at least the rejection subtree (V + R >= L).
//! Block trees use the rank-indexed analogue.

use std::collections::HashMap;
use std::fmt;

use crate::block::{block_subtree_rewards, rank_reward_with, BlockNode, BlockTree};
use crate::instance::Instance;
use crate::scalar::{approx_le, Scalar};
use crate::tree::{offer_reward, subtree_rewards, DecisionTree, NodeId, TreeNode};

const CHECK_REL: f64 = 1e-9;
const TRIGGER_ABS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CanonicalProperty {
    /// `R(u_R) <= R(u_L)`.
    LeftDominates,
    /// `R(u_L) <= v + R(u_R)`.
    ValueCovers,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalViolation {
    pub node: NodeId,
    /// Rank within the block; always 1 for standard trees.
    pub rank: usize,
    pub property: CanonicalProperty,
    pub lhs: f64,
    pub rhs: f64,
}

impl fmt::Display for CanonicalViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} fails at node {} rank {}: {} > {}", self.property, self.node, self.rank, self.lhs, self.rhs)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalReport<S> {
    pub modified: bool,
    pub case1_count: usize,
    pub case2_count: usize,
    pub reward_before: S,
    pub reward_after: S,
}

fn check_pair<S: Scalar>(node: NodeId, rank: usize, rr: &S, cont: &S, v: &S) -> Result<(), CanonicalViolation> {
    if !approx_le(rr, cont, CHECK_REL) {
        return Err(CanonicalViolation {
            node,
            rank,
            property: CanonicalProperty::LeftDominates,
            lhs: rr.to_f64(),
            rhs: cont.to_f64(),
        });
    }
    let cover = v.clone() + rr.clone();
    if !approx_le(cont, &cover, CHECK_REL) {
        return Err(CanonicalViolation {
            node,
            rank,
            property: CanonicalProperty::ValueCovers,
            lhs: cont.to_f64(),
            rhs: cover.to_f64(),
        });
    }
    Ok(())
}

/// Checks both properties at every reachable internal node.
pub fn check_canonical<S: Scalar>(tree: &DecisionTree, inst: &Instance<S>) -> Result<(), CanonicalViolation> {
    let rewards = subtree_rewards(tree, inst);
    for id in tree.reachable() {
        if let Some((l, r)) = tree.children(id) {
            check_pair(id, 1, &rewards[r], &rewards[l], inst.v(tree.nodes[id].app))?;
        }
    }
    Ok(())
}

/// Rewrites the tree bottom-up. Where L >= R fails the rejection subtree is
/// replaced by the acceptance subtree; where V + R >= L fails the node is
/// replaced by its rejection subtree. Shared subtrees are handled once.
pub fn canonicalize<S: Scalar>(tree: &DecisionTree, inst: &Instance<S>) -> (DecisionTree, CanonicalReport<S>) {
    let mut out = tree.clone();
    let mut memo: HashMap<NodeId, (NodeId, S)> = HashMap::new();
    let mut counts = (0, 0);
    let slack = S::slack(TRIGGER_ABS);
    fn go<S: Scalar>(
        out: &mut DecisionTree,
        inst: &Instance<S>,
        id: NodeId,
        slack: &S,
        memo: &mut HashMap<NodeId, (NodeId, S)>,
        counts: &mut (usize, usize),
    ) -> (NodeId, S) {
        if let Some(hit) = memo.get(&id) {
            return hit.clone();
        }
        let res = match out.children(id) {
            None => (id, S::zero()),
            Some((l, r)) => {
                let (l2, rl) = go(out, inst, l, slack, memo, counts);
                let (r2, rr) = go(out, inst, r, slack, memo, counts);
                let app = out.nodes[id].app;
                let v = inst.v(app);
                if rl.clone() < rr.clone() - slack.clone() {
                    counts.0 += 1;
                    let node = TreeNode { left: Some(r2), right: Some(r2), ..out.nodes[id].clone() };
                    let reward = offer_reward(inst.p(app), v, &rr, &rr);
                    (out.push(node), reward)
                } else if rl > v.clone() + rr.clone() + slack.clone() {
                    counts.1 += 1;
                    (l2, rl)
                } else if (l2, r2) == (l, r) {
                    (id, offer_reward(inst.p(app), v, &rr, &rl))
                } else {
                    let node = TreeNode { left: Some(l2), right: Some(r2), ..out.nodes[id].clone() };
                    (out.push(node), offer_reward(inst.p(app), v, &rr, &rl))
                }
            }
        };
        memo.insert(id, res.clone());
        res
    }
    let before = subtree_rewards(tree, inst)[tree.root].clone();
    let (root, after) = go(&mut out, inst, tree.root, &slack, &mut memo, &mut counts);
    out.root = root;
    let report = CanonicalReport {
        modified: counts.0 + counts.1 > 0,
        case1_count: counts.0,
        case2_count: counts.1,
        reward_before: before,
        reward_after: after,
    };
    (out.compact(), report)
}

/// Rank-indexed check: for every rank `r` of a block,
/// `R(u_R) <= R(u, r+1) <= v_r + R(u_R)`, where rank `|block| + 1` is the
/// rejection subtree.
pub fn check_block_canonical<S: Scalar>(btree: &BlockTree<S>, inst: &Instance<S>) -> Result<(), CanonicalViolation> {
    let rewards = block_subtree_rewards(btree, inst);
    for id in btree.reachable() {
        let Some((_, r)) = btree.children(id) else { continue };
        let block = &btree.nodes[id].block;
        for rank in 1..=block.len() {
            let cont = rank_reward_with(btree, inst, &rewards, id, rank + 1);
            check_pair(id, rank, &rewards[r], &cont, inst.v(block[rank - 1]))?;
        }
    }
    Ok(())
}

/// Block analogue of [`canonicalize`], applied to the coin-free projection.
/// Within a node ranks are visited last to first: a rank whose value plus
/// the acceptance subtree falls short of the continuation is removed, and a
/// rejection subtree worth less than the acceptance subtree is replaced by
/// it. A block left empty is spliced out in favour of its rejection subtree.
pub fn canonicalize_block<S: Scalar>(btree: &BlockTree<S>, inst: &Instance<S>) -> (BlockTree<S>, CanonicalReport<S>) {
    let mut out = btree.without_coins();
    let mut memo: HashMap<NodeId, (NodeId, S)> = HashMap::new();
    let mut counts = (0, 0);
    let slack = S::slack(TRIGGER_ABS);
    fn go<S: Scalar>(
        out: &mut BlockTree<S>,
        inst: &Instance<S>,
        id: NodeId,
        slack: &S,
        memo: &mut HashMap<NodeId, (NodeId, S)>,
        counts: &mut (usize, usize),
    ) -> (NodeId, S) {
        if let Some(hit) = memo.get(&id) {
            return hit.clone();
        }
        let res = match out.children(id) {
            None => (id, S::zero()),
            Some((l, r)) => {
                let (mut l2, rl) = go(out, inst, l, slack, memo, counts);
                let (r2, rr) = go(out, inst, r, slack, memo, counts);
                let mut cont = rl;
                let mut block = out.nodes[id].block.clone();
                if !block.is_empty() && cont < rr.clone() - slack.clone() {
                    counts.0 += 1;
                    l2 = r2;
                    cont = rr.clone();
                }
                for q in (0..block.len()).rev() {
                    let a = block[q];
                    if cont > inst.v(a).clone() + rr.clone() + slack.clone() {
                        counts.1 += 1;
                        block.remove(q);
                    } else {
                        cont = offer_reward(inst.p(a), inst.v(a), &rr, &cont);
                    }
                }
                if block.is_empty() {
                    (l2, cont)
                } else if (l2, r2) == (l, r) && block == out.nodes[id].block {
                    (id, cont)
                } else {
                    let state = out.nodes[id].state.clone();
                    (out.push(BlockNode { state, block, left: Some(l2), right: Some(r2), coin: None }), cont)
                }
            }
        };
        memo.insert(id, res.clone());
        res
    }
    let before = block_subtree_rewards(&out, inst)[out.root].clone();
    let root = out.root;
    let (root, after) = go(&mut out, inst, root, &slack, &mut memo, &mut counts);
    out.root = root;
    let report = CanonicalReport {
        modified: counts.0 + counts.1 > 0,
        case1_count: counts.0,
        case2_count: counts.1,
        reward_before: before,
        reward_after: after,
    };
    (out.compact(), report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::block_root_reward;
    use crate::exact::optimal_exact;
    use crate::instance::worked_example;
    use crate::tree::{root_reward, validate_tree, State};

    /// Offers `first`, then `second` on both branches.
    fn two_level(inst: &Instance<f64>, first: usize, reject: usize, accept: usize) -> DecisionTree {
        crate::tree::policy_tree_from_function(inst, |s: &State| {
            if s.t == 1 {
                first
            } else if s.k == inst.k {
                reject
            } else {
                accept
            }
        })
        .unwrap()
    }

    #[test]
    fn worked_tree_gains_from_case_one() {
        // R(left) = 2 < R(right) = 3 at the root.
        let inst = worked_example();
        let tree = two_level(&inst, 0, 1, 2);
        let err = check_canonical(&tree, &inst).unwrap_err();
        assert_eq!((err.node, err.property), (tree.root, CanonicalProperty::LeftDominates));
        let (out, report) = canonicalize(&tree, &inst);
        assert_eq!((report.case1_count, report.case2_count), (1, 0));
        assert_eq!((report.reward_before, report.reward_after), (3.0, 3.5));
        assert_eq!(check_canonical(&out, &inst), Ok(()));
    }

    #[test]
    fn single_offer_over_leaves_is_canonical() {
        let inst = Instance::new(vec![2.0], vec![0.5], 1, 1).unwrap();
        let tree = crate::tree::policy_tree_from_function(&inst, |_| 0).unwrap();
        assert_eq!(check_canonical(&tree, &inst), Ok(()));
    }

    #[test]
    fn case_one_copies_the_acceptance_subtree() {
        // Rejection leads to a worthless offer, acceptance to a sure one.
        let inst = Instance::new(vec![1.0, 0.0, 4.0], vec![0.5, 1.0, 1.0], 2, 2).unwrap();
        let tree = two_level(&inst, 0, 1, 2);
        let err = check_canonical(&tree, &inst).unwrap_err();
        assert_eq!(err.property, CanonicalProperty::LeftDominates);
        let (out, report) = canonicalize(&tree, &inst);
        assert_eq!(report.case1_count, 1);
        let (l, r) = out.children(out.root).unwrap();
        assert_eq!(l, r);
        assert_eq!(report.reward_after, 0.5 * (1.0 + 4.0) + 0.5 * 4.0);
        assert_eq!(root_reward(&out, &inst), report.reward_after);
        assert_eq!(check_canonical(&out, &inst), Ok(()));
        assert_eq!(validate_tree(&out, &inst), Ok(()));
    }

    #[test]
    fn case_two_skips_the_node() {
        // Offering the low-value applicant first wastes the only stage it
        // could have been used for.
        let inst = Instance::new(vec![0.1, 10.0], vec![0.5, 1.0], 1, 2).unwrap();
        let tree = two_level(&inst, 0, 1, 1);
        let err = check_canonical(&tree, &inst).unwrap_err();
        assert_eq!(err.property, CanonicalProperty::ValueCovers);
        let (out, report) = canonicalize(&tree, &inst);
        assert_eq!(report.case2_count, 1);
        assert_eq!(report.reward_after, 10.0);
        assert_eq!(validate_tree(&out, &inst), Ok(()));
        let (again, second) = canonicalize(&out, &inst);
        assert!(!second.modified);
        assert_eq!(again, out);
    }

    #[test]
    fn oracle_tree_keeps_its_value() {
        let inst = Instance::new(vec![3.0, 1.0, 2.0, 5.0], vec![0.2, 0.9, 0.5, 0.1], 2, 3).unwrap();
        let (opt, tree) = optimal_exact(&inst).unwrap();
        let (out, report) = canonicalize(&tree, &inst);
        assert_eq!(report.reward_after, opt);
        assert_eq!(check_canonical(&out, &inst), Ok(()));
    }

    #[test]
    fn block_case_two_drops_a_member() {
        let inst = Instance::new(vec![0.1, 5.0, 5.0], vec![0.9, 1.0, 1.0], 1, 3).unwrap();
        let root = State::initial(&inst);
        let mut t = BlockTree { nodes: vec![], root: 0 };
        let s1 = root.after(&[0], false);
        let ll = t.push(BlockNode::leaf(s1.after(&[1], false)));
        let lr = t.push(BlockNode::leaf(s1.after(&[1], true)));
        let l = t.push(BlockNode { state: s1, block: vec![1], left: Some(ll), right: Some(lr), coin: None });
        let r = t.push(BlockNode::leaf(root.after(&[0], true)));
        t.root = t.push(BlockNode { state: root, block: vec![0], left: Some(l), right: Some(r), coin: None });
        assert!(check_block_canonical(&t, &inst).is_err());
        let (out, report) = canonicalize_block(&t, &inst);
        assert_eq!(report.case2_count, 1);
        assert_eq!(block_root_reward(&out, &inst), 5.0);
        assert_eq!(check_block_canonical(&out, &inst), Ok(()));
        // The emptied root is spliced out.
        assert_eq!(out.nodes[out.root].block, vec![1]);
        let (again, second) = canonicalize_block(&out, &inst);
        assert!(!second.modified);
        assert_eq!(again, out);
    }

    #[test]
    fn empty_block_leaf_is_vacuous() {
        let inst = worked_example();
        let t = BlockTree::<f64>::single_leaf(State::initial(&inst));
        assert_eq!(check_block_canonical(&t, &inst), Ok(()));
    }
}
