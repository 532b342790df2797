//! Block-responsive policies. Each node offers an ordered block of
//! applicants one per stage and stops at the first acceptance; the whole
//! block consumes `|block|` stages either way.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::canonical::check_canonical;
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::qptas::check_order_by_value;
use crate::rounding::ClassPartition;
use crate::scalar::{approx_le, Scalar};
use crate::set::AppSet;
use crate::tree::{offer_reward, subtree_rewards, DecisionTree, NodeId, State, TreeNode, TreeProperty, TreeViolation};

/// Bernoulli coin consulted after every block member rejects: heads (with
/// probability `target_prob`) continues left, tails goes right.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrectionCoin<S> {
    pub target_prob: S,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockNode<S> {
    pub state: State,
    pub block: Vec<usize>,
    pub left: Option<NodeId>,
    pub right: Option<NodeId>,
    pub coin: Option<CorrectionCoin<S>>,
}

impl<S> BlockNode<S> {
    pub fn leaf(state: State) -> Self {
        BlockNode { state, block: Vec::new(), left: None, right: None, coin: None }
    }

    pub fn is_leaf(&self) -> bool {
        self.left.is_none() && self.right.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockTree<S> {
    pub nodes: Vec<BlockNode<S>>,
    pub root: NodeId,
}

impl<S: Scalar> BlockTree<S> {
    pub fn single_leaf(state: State) -> Self {
        BlockTree { nodes: vec![BlockNode::leaf(state)], root: 0 }
    }

    pub fn push(&mut self, node: BlockNode<S>) -> NodeId {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    pub fn children(&self, id: NodeId) -> Option<(NodeId, NodeId)> {
        let n = &self.nodes[id];
        Some((n.left?, n.right?))
    }

    pub fn check_structure(&self) -> Result<()> {
        if self.root >= self.nodes.len() {
            return Err(Error::UnknownNode(self.root));
        }
        for (id, n) in self.nodes.iter().enumerate() {
            match (n.left, n.right) {
                (None, None) => {
                    if !n.block.is_empty() || n.coin.is_some() {
                        return Err(Error::MalformedTree(format!("leaf {id} carries a block or coin")));
                    }
                }
                (Some(l), Some(r)) if l < self.nodes.len() && r < self.nodes.len() => {}
                _ => return Err(Error::MalformedTree(format!("node {id} has a bad child list"))),
            }
        }
        Ok(())
    }

    /// Reachable ids in left-first pre-order.
    pub fn reachable(&self) -> Vec<NodeId> {
        let mut seen = vec![false; self.nodes.len()];
        let mut order = Vec::new();
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut seen[id], true) {
                continue;
            }
            order.push(id);
            if let Some((l, r)) = self.children(id) {
                stack.push(r);
                stack.push(l);
            }
        }
        order
    }

    pub fn compact(&self) -> BlockTree<S> {
        let order = self.reachable();
        let mut index = vec![usize::MAX; self.nodes.len()];
        for (new, &old) in order.iter().enumerate() {
            index[old] = new;
        }
        let nodes = order
            .iter()
            .map(|&old| {
                let n = &self.nodes[old];
                BlockNode {
                    state: n.state.clone(),
                    block: n.block.clone(),
                    left: n.left.map(|c| index[c]),
                    right: n.right.map(|c| index[c]),
                    coin: n.coin.clone(),
                }
            })
            .collect();
        BlockTree { nodes, root: 0 }
    }

    /// Longest root-to-leaf arc count.
    pub fn depth(&self) -> usize {
        fn go<S: Scalar>(t: &BlockTree<S>, id: NodeId, memo: &mut HashMap<NodeId, usize>) -> usize {
            if let Some(&d) = memo.get(&id) {
                return d;
            }
            let d = match t.children(id) {
                Some((l, r)) => 1 + go(t, l, memo).max(go(t, r, memo)),
                None => 0,
            };
            memo.insert(id, d);
            d
        }
        go(self, self.root, &mut HashMap::new())
    }

    pub fn leftmost_path(&self, from: NodeId) -> Vec<NodeId> {
        let mut path = vec![from];
        let mut cur = from;
        while let Some(l) = self.nodes[cur].left {
            path.push(l);
            cur = l;
        }
        path
    }

    /// Longest leftmost path, in nodes, over the root and every right child.
    pub fn max_leftmost_len(&self) -> usize {
        let mut best = self.leftmost_path(self.root).len();
        for id in self.reachable() {
            if let Some((_, r)) = self.children(id) {
                best = best.max(self.leftmost_path(r).len());
            }
        }
        best
    }

    pub fn has_coins(&self) -> bool {
        self.reachable().into_iter().any(|id| self.nodes[id].coin.is_some())
    }

    /// Same tree with every coin removed.
    pub fn without_coins(&self) -> BlockTree<S> {
        let mut t = self.clone();
        for n in &mut t.nodes {
            n.coin = None;
        }
        t
    }

    pub fn internal_count(&self) -> usize {
        self.reachable().into_iter().filter(|&id| !self.nodes[id].is_leaf()).count()
    }

    pub fn to_json(&self) -> String {
        let compact = self.compact();
        let nodes: Vec<BlockNodeJson> = compact
            .nodes
            .iter()
            .map(|n| BlockNodeJson {
                state: (n.state.t, n.state.k, n.state.avail.to_hex()),
                block: n.block.clone(),
                coin: n.coin.as_ref().map(|c| c.target_prob.to_f64()),
                left: n.left,
                right: n.right,
            })
            .collect();
        serde_json::to_string(&nodes).expect("block tree serializes")
    }

    pub fn from_json(n: usize, s: &str) -> Result<Self> {
        let raw: Vec<BlockNodeJson> = serde_json::from_str(s)?;
        let mut nodes = Vec::with_capacity(raw.len());
        for r in raw {
            let avail = AppSet::from_hex(n, &r.state.2)
                .ok_or_else(|| Error::MalformedTree(format!("bad mask {:?}", r.state.2)))?;
            nodes.push(BlockNode {
                state: State { t: r.state.0, k: r.state.1, avail },
                block: r.block,
                left: r.left,
                right: r.right,
                coin: r.coin.map(|p| CorrectionCoin { target_prob: S::from_f64(p) }),
            });
        }
        let t = BlockTree { nodes, root: 0 };
        t.check_structure()?;
        Ok(t)
    }
}

#[derive(Serialize, Deserialize)]
struct BlockNodeJson {
    state: (usize, usize, String),
    block: Vec<usize>,
    coin: Option<f64>,
    left: Option<usize>,
    right: Option<usize>,
}

/// Probability that every block member rejects; 1 for the empty block.
pub fn rejection_probability<S: Scalar>(block: &[usize], inst: &Instance<S>) -> S {
    block.iter().fold(S::one(), |acc, &i| acc * (S::one() - inst.p(i).clone()))
}

/// Reward from rank `r` (1-based) of `node` onward, given child rewards.
/// Rank `|block| + 1` is the continuation after every member rejects.
fn rank_reward<S: Scalar>(node: &BlockNode<S>, inst: &Instance<S>, r: usize, left: &S, right: &S) -> S {
    let mut acc = match &node.coin {
        None => left.clone(),
        Some(c) => c.target_prob.clone() * left.clone() + (S::one() - c.target_prob.clone()) * right.clone(),
    };
    for &a in node.block[r - 1..].iter().rev() {
        acc = offer_reward(inst.p(a), inst.v(a), right, &acc);
    }
    acc
}

/// Reward of every node's subtree.
pub fn block_subtree_rewards<S: Scalar>(btree: &BlockTree<S>, inst: &Instance<S>) -> Vec<S> {
    let mut memo: Vec<Option<S>> = vec![None; btree.nodes.len()];
    fn go<S: Scalar>(t: &BlockTree<S>, inst: &Instance<S>, id: NodeId, memo: &mut Vec<Option<S>>) -> S {
        if let Some(r) = &memo[id] {
            return r.clone();
        }
        let r = match t.children(id) {
            Some((l, r)) => {
                let rl = go(t, inst, l, memo);
                let rr = go(t, inst, r, memo);
                rank_reward(&t.nodes[id], inst, 1, &rl, &rr)
            }
            None => S::zero(),
        };
        memo[id] = Some(r.clone());
        r
    }
    (0..btree.nodes.len()).map(|id| go(btree, inst, id, &mut memo)).collect()
}

/// Expected reward collected from rank `r` of `node` onward: the chance that
/// ranks `r..` all reject times the left subtree, plus for each rank the
/// chance of reaching it and being accepted times value plus right subtree.
/// Coins replace the all-reject continuation by a mix of both subtrees.
pub fn block_tree_reward<S: Scalar>(btree: &BlockTree<S>, inst: &Instance<S>, node: NodeId, r: usize) -> Result<S> {
    let n = btree.nodes.get(node).ok_or(Error::UnknownNode(node))?;
    if r < 1 || r > n.block.len() + 1 {
        return Err(Error::RankOutOfRange { rank: r, len: n.block.len() });
    }
    let rewards = block_subtree_rewards(btree, inst);
    Ok(match btree.children(node) {
        Some((l, rr)) => rank_reward(n, inst, r, &rewards[l], &rewards[rr]),
        None => S::zero(),
    })
}

pub fn block_root_reward<S: Scalar>(btree: &BlockTree<S>, inst: &Instance<S>) -> S {
    block_tree_reward(btree, inst, btree.root, 1).expect("root exists")
}

pub(crate) fn rank_reward_with<S: Scalar>(btree: &BlockTree<S>, inst: &Instance<S>, rewards: &[S], node: NodeId, r: usize) -> S {
    match btree.children(node) {
        Some((l, rr)) => rank_reward(&btree.nodes[node], inst, r, &rewards[l], &rewards[rr]),
        None => S::zero(),
    }
}

/// Validity: at most `k` acceptances and `T` offers per path, distinct
/// applicants, blocks drawn from the available set, dominated child states.
pub fn validate_block_tree<S: Scalar>(btree: &BlockTree<S>, inst: &Instance<S>) -> std::result::Result<(), TreeViolation> {
    if let Err(e) = btree.check_structure() {
        return Err(TreeViolation { property: TreeProperty::Leaf, message: e.to_string(), path: vec![] });
    }
    for id in btree.reachable() {
        let node = &btree.nodes[id];
        let Some((l, r)) = btree.children(id) else { continue };
        let distinct: HashSet<_> = node.block.iter().collect();
        if distinct.len() != node.block.len() || node.block.iter().any(|&a| a >= inst.n() || !node.state.avail.contains(a)) {
            return Err(TreeViolation {
                property: TreeProperty::ChildState,
                message: format!("block {:?} of node {id} is not drawn from {}", node.block, node.state),
                path: vec![id],
            });
        }
        if node.state.k == 0 {
            return Err(TreeViolation {
                property: TreeProperty::ChildState,
                message: format!("internal node {id} has no open position"),
                path: vec![id],
            });
        }
        if let Some(c) = &node.coin {
            if c.target_prob < S::zero() || c.target_prob > S::one() {
                return Err(TreeViolation {
                    property: TreeProperty::ChildState,
                    message: format!("coin at node {id} is not a probability"),
                    path: vec![id],
                });
            }
        }
        for (child, accepted) in [(l, false), (r, true)] {
            let c = &btree.nodes[child].state;
            let want = node.state.after(&node.block, accepted);
            if !(c.t >= want.t && c.k <= want.k && c.avail.is_subset(&want.avail)) {
                return Err(TreeViolation {
                    property: TreeProperty::ChildState,
                    message: format!("child {child} of node {id} has state {c}, expected at most {want}"),
                    path: vec![id, child],
                });
            }
        }
    }
    let mut path = vec![btree.root];
    let mut seen = HashSet::new();
    check_block_paths(btree, inst, &mut path, 0, 0, &mut seen)
}

fn check_block_paths<S: Scalar>(
    btree: &BlockTree<S>,
    inst: &Instance<S>,
    path: &mut Vec<NodeId>,
    rights: usize,
    offers: usize,
    seen: &mut HashSet<usize>,
) -> std::result::Result<(), TreeViolation> {
    let id = *path.last().unwrap();
    let Some((l, r)) = btree.children(id) else { return Ok(()) };
    let block = &btree.nodes[id].block;
    if offers + block.len() > inst.horizon {
        return Err(TreeViolation {
            property: TreeProperty::Depth,
            message: format!("path offers more than T = {} times", inst.horizon),
            path: path.clone(),
        });
    }
    for &a in block {
        if !seen.insert(a) {
            return Err(TreeViolation {
                property: TreeProperty::DistinctApplicants,
                message: format!("applicant {a} offered twice"),
                path: path.clone(),
            });
        }
    }
    let mut res = Ok(());
    for (child, turn) in [(l, 0), (r, 1)] {
        path.push(child);
        if rights + turn > inst.k {
            res = Err(TreeViolation {
                property: TreeProperty::RightTurns,
                message: format!("more than k = {} acceptances", inst.k),
                path: path.clone(),
            });
        } else {
            res = check_block_paths(btree, inst, path, rights + turn, offers + block.len(), seen);
        }
        path.pop();
        if res.is_err() {
            break;
        }
    }
    for a in block {
        seen.remove(a);
    }
    res
}

/// Unrolls every block into a chain of single offers. An acceptance at any
/// rank jumps straight to the block's right subtree. Block leaves become
/// standard leaves with the same state label.
pub fn block_tree_to_std<S: Scalar>(btree: &BlockTree<S>, inst: &Instance<S>) -> Result<DecisionTree> {
    let _ = inst;
    btree.check_structure()?;
    if let Some(id) = btree.reachable().into_iter().find(|&id| btree.nodes[id].coin.is_some()) {
        return Err(Error::CoinPresent(id));
    }
    let mut out = DecisionTree { nodes: Vec::new(), root: 0 };
    let mut memo = HashMap::new();
    fn go<S: Scalar>(bt: &BlockTree<S>, id: NodeId, out: &mut DecisionTree, memo: &mut HashMap<NodeId, NodeId>) -> NodeId {
        if let Some(&s) = memo.get(&id) {
            return s;
        }
        let node = &bt.nodes[id];
        let res = match bt.children(id) {
            None => out.push(TreeNode::leaf(node.state.clone())),
            Some((l, r)) => {
                let sl = go(bt, l, out, memo);
                let sr = go(bt, r, out, memo);
                let mut next = sl;
                for q in (0..node.block.len()).rev() {
                    let state = node.state.after(&node.block[..q], false);
                    next = out.push(TreeNode { state, app: node.block[q], left: Some(next), right: Some(sr) });
                }
                next
            }
        };
        memo.insert(id, res);
        res
    }
    out.root = go(btree, btree.root, &mut out, &mut memo);
    Ok(out.compact())
}

/// Leftmost-path breakpoints of a standard subtree.
#[derive(Clone, Debug)]
pub struct TerminalSet<S> {
    /// Leftmost path `u_1..u_S` of the subtree.
    pub path: Vec<NodeId>,
    /// Terminal positions (0-based indices into `path`), strictly increasing.
    pub terminals: Vec<usize>,
    /// Number of terminals up to and including the last type-B terminal.
    pub f_b: usize,
    pub type_a: Vec<bool>,
    pub type_b: Vec<bool>,
    /// Probability of reaching each path node from the subtree root.
    pub arrival: Vec<S>,
}

impl<S> TerminalSet<S> {
    pub fn f(&self) -> usize {
        self.terminals.len()
    }
}

/// Powers `c^0, c^1, ...` generated on demand.
struct Powers<S> {
    c: S,
    list: Vec<S>,
}

impl<S: Scalar> Powers<S> {
    fn new(c: S) -> Self {
        Powers { c, list: vec![S::one()] }
    }

    /// Whether some `c^j`, `j >= 0`, satisfies `lo <= c^j < hi`. An arc that
    /// lands exactly on a power crosses it; a constant stretch never does.
    fn crosses(&mut self, lo: &S, hi: &S) -> bool {
        if *hi <= S::zero() || *lo >= *hi {
            return false;
        }
        let mut j = 0;
        loop {
            if j == self.list.len() {
                let next = self.list[j - 1].clone() * self.c.clone();
                if next >= self.list[j - 1] {
                    return false;
                }
                self.list.push(next);
            }
            if self.list[j] < *hi {
                return self.list[j] >= *lo;
            }
            j += 1;
        }
    }
}

/// Type-A and type-B terminals on the leftmost path of the subtree at `root`.
pub fn find_terminals<S: Scalar>(std: &DecisionTree, inst: &Instance<S>, eps: &S, root: NodeId) -> Result<TerminalSet<S>> {
    let rewards = subtree_rewards(std, inst);
    terminals_with(std, inst, eps, root, &rewards)
}

fn terminals_with<S: Scalar>(std: &DecisionTree, inst: &Instance<S>, eps: &S, root: NodeId, rewards: &[S]) -> Result<TerminalSet<S>> {
    let path = std.leftmost_path(root);
    let last = path.len() - 1;
    let eps3 = eps.clone() * eps.clone() * eps.clone();
    let mut powers = Powers::new(S::one() - eps3.clone());
    let mut arrival = vec![S::one()];
    for &u in &path[..last] {
        let a = arrival.last().unwrap().clone() * (S::one() - inst.p(std.nodes[u].app).clone());
        arrival.push(a);
    }
    let right_reward = |s: usize| rewards[std.nodes[path[s]].right.expect("internal path node")].clone();
    for s in 0..last.saturating_sub(1) {
        if !approx_le(&right_reward(s + 1), &right_reward(s), 1e-9) {
            return Err(Error::Premise(format!(
                "right-subtree rewards increase along the leftmost path at position {}",
                s + 1
            )));
        }
    }

    let mut a_set = BTreeSet::from([0]);
    let mut s = 0;
    let last_a = loop {
        if arrival[s] < eps3 || s == last {
            break s;
        }
        if powers.crosses(&arrival[s + 1], &arrival[s]) {
            a_set.insert(s);
            a_set.insert(s + 1);
        }
        s += 1;
    };
    a_set.insert(last_a);

    let total = rewards[root].clone();
    let mut b_set = BTreeSet::new();
    let last_b = if total <= S::zero() {
        0
    } else {
        let ratio = |s: usize| right_reward(s) / total.clone();
        let mut s = 0;
        loop {
            if s == last_a || ratio(s) < eps3 {
                break s;
            }
            if s + 1 < last && powers.crosses(&ratio(s + 1), &ratio(s)) {
                b_set.insert(s);
                b_set.insert(s + 1);
            }
            s += 1;
        }
    };
    b_set.insert(last_b);
    b_set.retain(|&s| s <= last_a);

    let terminals: Vec<usize> = a_set.union(&b_set).copied().collect();
    let f_b = terminals.iter().position(|&s| s == last_b).expect("last type-B terminal is a terminal") + 1;
    Ok(TerminalSet {
        type_a: terminals.iter().map(|s| a_set.contains(s)).collect(),
        type_b: terminals.iter().map(|s| b_set.contains(s)).collect(),
        terminals,
        f_b,
        path,
        arrival,
    })
}

/// Upper bound `13 / eps^3 * ln(1 / eps)` on the number of terminals.
pub fn terminal_bound(eps: f64) -> f64 {
    13.0 / eps.powi(3) * (1.0 / eps).ln()
}

/// Compresses a canonical, order-by-value tree for the mixed instance into a
/// block tree: leftmost-path nodes between successive terminals form one
/// block, sorted by non-increasing value, and right subtrees are converted
/// recursively up to the last type-B terminal.
pub fn build_block_tree<S: Scalar>(
    std: &DecisionTree,
    inst: &Instance<S>,
    part: &ClassPartition<S>,
    eps: &S,
) -> Result<BlockTree<S>> {
    if let Err(v) = check_canonical(std, inst) {
        return Err(Error::Premise(format!("input tree is not canonical: {v}")));
    }
    if let Err(w) = check_order_by_value(std, part) {
        return Err(Error::Premise(format!("input tree is not order-by-value: {w}")));
    }
    let rewards = subtree_rewards(std, inst);
    let mut out = BlockTree { nodes: Vec::new(), root: 0 };
    out.root = convert(std, inst, eps, std.root, &rewards, &mut out)?;
    Ok(out.compact())
}

fn convert<S: Scalar>(
    std: &DecisionTree,
    inst: &Instance<S>,
    eps: &S,
    root: NodeId,
    rewards: &[S],
    out: &mut BlockTree<S>,
) -> Result<NodeId> {
    if std.nodes[root].is_leaf() || rewards[root] <= S::zero() {
        return Ok(out.push(BlockNode::leaf(std.nodes[root].state.clone())));
    }
    let ts = terminals_with(std, inst, eps, root, rewards)?;
    let f = ts.f();
    let tau = &ts.terminals;
    let mut next = out.push(BlockNode::leaf(std.nodes[ts.path[tau[f - 1]]].state.clone()));
    for fi in (0..f - 1).rev() {
        let members = &ts.path[tau[fi]..tau[fi + 1]];
        let mut block: Vec<usize> = members.iter().map(|&u| std.nodes[u].app).collect();
        block.sort_by(|&a, &b| inst.v(b).partial_cmp(inst.v(a)).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
        let tail_right = std.nodes[*members.last().unwrap()].right.expect("internal path node");
        // `fi` is 0-based, so `fi + 1 <= f_b - 1` selects the recursive case.
        let right = if fi + 1 < ts.f_b {
            convert(std, inst, eps, tail_right, rewards, out)?
        } else {
            out.push(BlockNode::leaf(std.nodes[tail_right].state.clone()))
        };
        let state = std.nodes[members[0]].state.clone();
        next = out.push(BlockNode { state, block, left: Some(next), right: Some(right), coin: None });
    }
    Ok(next)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OrderWitness {
    pub node: NodeId,
    pub class: usize,
    pub message: String,
}

impl std::fmt::Display for OrderWitness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "node {} class {}: {}", self.node, self.class, self.message)
    }
}

/// Every block's members of each class must be the next highest-value
/// members of that class still available along the path.
pub fn check_block_order_by_value<S: Scalar>(btree: &BlockTree<S>, part: &ClassPartition<S>) -> std::result::Result<(), OrderWitness> {
    let n = part.class_of.len();
    fn go<S: Scalar>(
        bt: &BlockTree<S>,
        part: &ClassPartition<S>,
        id: NodeId,
        avail: &AppSet,
    ) -> std::result::Result<(), OrderWitness> {
        let Some((l, r)) = bt.children(id) else { return Ok(()) };
        let block = &bt.nodes[id].block;
        for (m, members) in part.classes.iter().enumerate() {
            let mine: Vec<usize> = members.iter().copied().filter(|a| block.contains(a)).collect();
            let next: Vec<usize> = members.iter().copied().filter(|&a| avail.contains(a)).take(mine.len()).collect();
            if mine != next {
                return Err(OrderWitness {
                    node: id,
                    class: m,
                    message: format!("block takes {mine:?} but the next available are {next:?}"),
                });
            }
        }
        let rest = avail.without_all(block);
        go(bt, part, l, &rest)?;
        go(bt, part, r, &rest)
    }
    go(btree, part, btree.root, &AppSet::full(n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::worked_example;
    use crate::tree::{root_reward, validate_tree};

    fn two_block(p: f64, v: f64) -> (BlockTree<f64>, Instance<f64>) {
        let inst = Instance::new(vec![v, v], vec![p, p], 1, 2).unwrap();
        let root = State::initial(&inst);
        let mut t = BlockTree { nodes: vec![], root: 0 };
        let l = t.push(BlockNode::leaf(root.after(&[0, 1], false)));
        let r = t.push(BlockNode::leaf(root.after(&[0, 1], true)));
        t.root = t.push(BlockNode { state: root, block: vec![0, 1], left: Some(l), right: Some(r), coin: None });
        (t, inst)
    }

    #[test]
    fn two_member_block_reward() {
        let (t, inst) = two_block(0.5, 2.0);
        assert_eq!(block_root_reward(&t, &inst), 1.5);
        assert_eq!(block_tree_reward(&t, &inst, t.root, 2).unwrap(), 1.0);
        assert_eq!(block_tree_reward(&t, &inst, t.root, 3).unwrap(), 0.0);
        assert!(matches!(block_tree_reward(&t, &inst, t.root, 4), Err(Error::RankOutOfRange { .. })));
        assert_eq!(validate_block_tree(&t, &inst), Ok(()));
    }

    #[test]
    fn rejection_probabilities() {
        let inst = Instance::new(vec![1.0, 1.0], vec![0.5, 0.5], 1, 2).unwrap();
        assert_eq!(rejection_probability(&[0, 1], &inst), 0.25);
        assert_eq!(rejection_probability(&[], &inst), 1.0);
    }

    #[test]
    fn unrolled_block_matches() {
        let (t, inst) = two_block(0.3, 5.0);
        let std = block_tree_to_std(&t, &inst).unwrap();
        // Two chain nodes plus the two shared leaves.
        assert_eq!(std.nodes.len(), 4);
        assert_eq!(root_reward(&std, &inst), block_root_reward(&t, &inst));
        assert_eq!(validate_tree(&std, &inst), Ok(()));
    }

    #[test]
    fn coins_refuse_unrolling_and_mix_subtrees() {
        let inst = worked_example();
        let root = State::initial(&inst);
        let mut t = BlockTree { nodes: vec![], root: 0 };
        let ll = t.push(BlockNode::leaf(root.after(&[0, 1], false)));
        let lr = t.push(BlockNode::leaf(root.after(&[0, 1], true)));
        let l = t.push(BlockNode { state: root.after(&[0], false), block: vec![1], left: Some(ll), right: Some(lr), coin: None });
        let rl = t.push(BlockNode::leaf(root.after(&[0, 2], false)));
        let rr = t.push(BlockNode::leaf(root.after(&[0, 2], true)));
        let r = t.push(BlockNode { state: root.after(&[0], true), block: vec![2], left: Some(rl), right: Some(rr), coin: None });
        t.root = t.push(BlockNode { state: root, block: vec![0], left: Some(l), right: Some(r), coin: Some(CorrectionCoin { target_prob: 0.5 }) });
        assert!(matches!(block_tree_to_std(&t, &inst), Err(Error::CoinPresent(_))));
        // Reject w.p. 1/2; then the coin splits between R(left) = 2 and R(right) = 3.
        assert_eq!(block_root_reward(&t, &inst), 0.5 * (1.0 + 3.0) + 0.5 * (0.5 * 2.0 + 0.5 * 3.0));
    }

    #[test]
    fn powers_count_the_lower_endpoint() {
        let mut p = Powers::new(0.5f64);
        assert!(p.crosses(&0.5, &0.6));
        assert!(!p.crosses(&0.3, &0.5));
        assert!(p.crosses(&0.3, &0.6));
        assert!(!p.crosses(&0.3, &0.45));
        assert!(p.crosses(&0.0, &0.01));
        assert!(!p.crosses(&1.0, &1.0));
    }

    #[test]
    fn leaf_has_single_terminal() {
        let inst = worked_example();
        let tree = DecisionTree::single_leaf(State::initial(&inst));
        let ts = find_terminals(&tree, &inst, &0.6, 0).unwrap();
        assert_eq!((ts.f(), ts.f_b), (1, 1));
    }

    #[test]
    fn zero_probability_path_has_no_crossings() {
        let inst = Instance::new(vec![1.0; 3], vec![0.0; 3], 1, 3).unwrap();
        let tree = crate::tree::policy_tree_from_function(&inst, |s| s.avail.iter().next().unwrap()).unwrap();
        let ts = find_terminals(&tree, &inst, &0.6, tree.root).unwrap();
        assert!(ts.arrival.iter().all(|&a| a == 1.0));
        assert_eq!(ts.terminals, vec![0, 3]);
    }
}
