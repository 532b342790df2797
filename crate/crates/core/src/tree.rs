//! Standard decision trees: one applicant per node, left arc on rejection,
//! right arc on acceptance.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::scalar::Scalar;
use crate::set::AppSet;

pub type NodeId = usize;

/// Sentinel applicant id carried by leaves (value 0, probability 0).
pub const VIRTUAL: usize = usize::MAX;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct State {
    pub t: usize,
    pub k: usize,
    pub avail: AppSet,
}

impl State {
    pub fn initial<S>(inst: &Instance<S>) -> State {
        State { t: 1, k: inst.k, avail: AppSet::full(inst.values.len()) }
    }

    pub fn is_terminal(&self, horizon: usize) -> bool {
        self.t > horizon || self.k == 0 || self.avail.is_empty()
    }

    /// State after offering `apps` in sequence; `accepted` costs one position.
    pub fn after(&self, apps: &[usize], accepted: bool) -> State {
        State {
            t: self.t + apps.len(),
            k: self.k - usize::from(accepted),
            avail: self.avail.without_all(apps),
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(t={}, k={}, avail={:?})", self.t, self.k, self.avail)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeNode {
    pub state: State,
    pub app: usize,
    pub left: Option<NodeId>,
    pub right: Option<NodeId>,
}

impl TreeNode {
    pub fn leaf(state: State) -> Self {
        TreeNode { state, app: VIRTUAL, left: None, right: None }
    }

    pub fn is_leaf(&self) -> bool {
        self.left.is_none() && self.right.is_none()
    }
}

/// Arena-backed tree. Subtrees may be shared, but every routine treats the
/// structure as a tree (a shared subtree counts once per path through it).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
    pub root: NodeId,
}

impl DecisionTree {
    pub fn single_leaf(state: State) -> Self {
        DecisionTree { nodes: vec![TreeNode::leaf(state)], root: 0 }
    }

    pub fn push(&mut self, node: TreeNode) -> NodeId {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    pub fn node(&self, id: NodeId) -> Result<&TreeNode> {
        self.nodes.get(id).ok_or(Error::UnknownNode(id))
    }

    pub fn children(&self, id: NodeId) -> Option<(NodeId, NodeId)> {
        let n = &self.nodes[id];
        Some((n.left?, n.right?))
    }

    /// Checks that internal nodes have two in-range children and leaves none.
    pub fn check_structure(&self) -> Result<()> {
        if self.root >= self.nodes.len() {
            return Err(Error::UnknownNode(self.root));
        }
        for (id, n) in self.nodes.iter().enumerate() {
            match (n.left, n.right) {
                (None, None) => {
                    if n.app != VIRTUAL {
                        return Err(Error::MalformedTree(format!("leaf {id} carries applicant {}", n.app)));
                    }
                }
                (Some(l), Some(r)) => {
                    if l >= self.nodes.len() || r >= self.nodes.len() {
                        return Err(Error::MalformedTree(format!("node {id} has a dangling child")));
                    }
                    if n.app == VIRTUAL {
                        return Err(Error::MalformedTree(format!("internal node {id} has no applicant")));
                    }
                }
                _ => return Err(Error::MalformedTree(format!("node {id} has exactly one child"))),
            }
        }
        if self.reachable().len() != self.reachable_with_cycle_guard() {
            return Err(Error::MalformedTree("cycle detected".into()));
        }
        Ok(())
    }

    fn reachable_with_cycle_guard(&self) -> usize {
        // A cycle makes a DFS from the root revisit an ancestor.
        fn dfs(t: &DecisionTree, id: NodeId, on_stack: &mut Vec<bool>, done: &mut Vec<bool>) -> bool {
            if on_stack[id] {
                return false;
            }
            if done[id] {
                return true;
            }
            on_stack[id] = true;
            let ok = match t.children(id) {
                Some((l, r)) => dfs(t, l, on_stack, done) && dfs(t, r, on_stack, done),
                None => true,
            };
            on_stack[id] = false;
            done[id] = true;
            ok
        }
        let mut on_stack = vec![false; self.nodes.len()];
        let mut done = vec![false; self.nodes.len()];
        if dfs(self, self.root, &mut on_stack, &mut done) {
            done.iter().filter(|&&d| d).count()
        } else {
            usize::MAX
        }
    }

    /// Distinct node ids reachable from the root, in left-first pre-order.
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

    /// Copy containing only reachable nodes, renumbered in pre-order with
    /// the root at id 0. Sharing is preserved.
    pub fn compact(&self) -> DecisionTree {
        let order = self.reachable();
        let mut index = vec![usize::MAX; self.nodes.len()];
        for (new, &old) in order.iter().enumerate() {
            index[old] = new;
        }
        let nodes = order
            .iter()
            .map(|&old| {
                let n = &self.nodes[old];
                TreeNode { state: n.state.clone(), app: n.app, left: n.left.map(|c| index[c]), right: n.right.map(|c| index[c]) }
            })
            .collect();
        DecisionTree { nodes, root: 0 }
    }

    /// Longest root-to-leaf arc count.
    pub fn depth(&self) -> usize {
        let mut memo = vec![None; self.nodes.len()];
        fn go(t: &DecisionTree, id: NodeId, memo: &mut Vec<Option<usize>>) -> usize {
            if let Some(d) = memo[id] {
                return d;
            }
            let d = match t.children(id) {
                Some((l, r)) => 1 + go(t, l, memo).max(go(t, r, memo)),
                None => 0,
            };
            memo[id] = Some(d);
            d
        }
        go(self, self.root, &mut memo)
    }

    /// Nodes on the path that always follows the rejection arc.
    pub fn leftmost_path(&self, from: NodeId) -> Vec<NodeId> {
        let mut path = vec![from];
        let mut cur = from;
        while let Some(l) = self.nodes[cur].left {
            path.push(l);
            cur = l;
        }
        path
    }

    /// Number of root-to-leaf paths (shared subtrees counted per path).
    pub fn path_count(&self) -> u128 {
        let mut memo = vec![None; self.nodes.len()];
        fn go(t: &DecisionTree, id: NodeId, memo: &mut Vec<Option<u128>>) -> u128 {
            if let Some(c) = memo[id] {
                return c;
            }
            let c = match t.children(id) {
                Some((l, r)) => go(t, l, memo).saturating_add(go(t, r, memo)),
                None => 1,
            };
            memo[id] = Some(c);
            c
        }
        go(self, self.root, &mut memo)
    }

    pub fn to_json(&self) -> String {
        let compact = self.compact();
        let nodes: Vec<NodeJson> = compact
            .nodes
            .iter()
            .map(|n| NodeJson {
                state: (n.state.t, n.state.k, n.state.avail.to_hex()),
                app: if n.app == VIRTUAL { -1 } else { n.app as i64 },
                left: n.left,
                right: n.right,
            })
            .collect();
        serde_json::to_string(&nodes).expect("tree serializes")
    }

    pub fn from_json(n: usize, s: &str) -> Result<Self> {
        let raw: Vec<NodeJson> = serde_json::from_str(s)?;
        let mut nodes = Vec::with_capacity(raw.len());
        for r in raw {
            let avail = AppSet::from_hex(n, &r.state.2)
                .ok_or_else(|| Error::MalformedTree(format!("bad mask {:?}", r.state.2)))?;
            let app = if r.app < 0 { VIRTUAL } else { r.app as usize };
            nodes.push(TreeNode { state: State { t: r.state.0, k: r.state.1, avail }, app, left: r.left, right: r.right });
        }
        let tree = DecisionTree { nodes, root: 0 };
        tree.check_structure()?;
        Ok(tree)
    }
}

#[derive(Serialize, Deserialize)]
struct NodeJson {
    state: (usize, usize, String),
    app: i64,
    left: Option<usize>,
    right: Option<usize>,
}

/// `p * (v + accept) + (1 - p) * reject`, the one-offer recursion shared by
/// every evaluator and solver so that equal trees give bit-equal rewards.
pub fn offer_reward<S: Scalar>(p: &S, v: &S, accept: &S, reject: &S) -> S {
    p.clone() * (v.clone() + accept.clone()) + (S::one() - p.clone()) * reject.clone()
}

/// Reward of the subtree rooted at every node (unreachable nodes included).
pub fn subtree_rewards<S: Scalar>(tree: &DecisionTree, inst: &Instance<S>) -> Vec<S> {
    let mut memo: Vec<Option<S>> = vec![None; tree.nodes.len()];
    fn go<S: Scalar>(t: &DecisionTree, inst: &Instance<S>, id: NodeId, memo: &mut Vec<Option<S>>) -> S {
        if let Some(r) = &memo[id] {
            return r.clone();
        }
        let n = &t.nodes[id];
        let r = match (n.left, n.right) {
            (Some(l), Some(r)) => {
                let rl = go(t, inst, l, memo);
                let rr = go(t, inst, r, memo);
                offer_reward(inst.p(n.app), inst.v(n.app), &rr, &rl)
            }
            _ => S::zero(),
        };
        memo[id] = Some(r.clone());
        r
    }
    (0..tree.nodes.len()).map(|id| go(tree, inst, id, &mut memo)).collect()
}

/// Expected reward of the subtree rooted at `node`; leaves are worth 0.
pub fn tree_reward<S: Scalar>(tree: &DecisionTree, inst: &Instance<S>, node: NodeId) -> Result<S> {
    tree.node(node)?;
    let mut memo: Vec<Option<S>> = vec![None; tree.nodes.len()];
    fn go<S: Scalar>(t: &DecisionTree, inst: &Instance<S>, id: NodeId, memo: &mut Vec<Option<S>>) -> S {
        if let Some(r) = &memo[id] {
            return r.clone();
        }
        let n = &t.nodes[id];
        let r = match (n.left, n.right) {
            (Some(l), Some(r)) => {
                let rl = go(t, inst, l, memo);
                let rr = go(t, inst, r, memo);
                offer_reward(inst.p(n.app), inst.v(n.app), &rr, &rl)
            }
            _ => S::zero(),
        };
        memo[id] = Some(r.clone());
        r
    }
    Ok(go(tree, inst, node, &mut memo))
}

pub fn root_reward<S: Scalar>(tree: &DecisionTree, inst: &Instance<S>) -> S {
    tree_reward(tree, inst, tree.root).expect("root exists")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RootToLeafPath {
    pub nodes: Vec<NodeId>,
    /// `active[i]` is true when the arc leaving `nodes[i]` is a right turn.
    pub active: Vec<bool>,
}

impl RootToLeafPath {
    pub fn value<S: Scalar>(&self, tree: &DecisionTree, inst: &Instance<S>) -> S {
        let mut total = S::zero();
        for (i, &on) in self.active.iter().enumerate() {
            if on {
                total = total + inst.v(tree.nodes[self.nodes[i]].app).clone();
            }
        }
        total
    }

    pub fn probability<S: Scalar>(&self, tree: &DecisionTree, inst: &Instance<S>) -> S {
        let mut pr = S::one();
        for (i, &on) in self.active.iter().enumerate() {
            let p = inst.p(tree.nodes[self.nodes[i]].app).clone();
            pr = pr * if on { p } else { S::one() - p };
        }
        pr
    }
}

/// Every root-to-leaf path with its probability, rejection branches first.
pub fn path_distribution<S: Scalar>(tree: &DecisionTree, inst: &Instance<S>) -> Vec<(RootToLeafPath, S)> {
    let mut out = Vec::new();
    let mut nodes = vec![tree.root];
    let mut active = Vec::new();
    fn walk<S: Scalar>(
        t: &DecisionTree,
        inst: &Instance<S>,
        nodes: &mut Vec<NodeId>,
        active: &mut Vec<bool>,
        out: &mut Vec<(RootToLeafPath, S)>,
    ) {
        let id = *nodes.last().unwrap();
        match t.children(id) {
            None => {
                let path = RootToLeafPath { nodes: nodes.clone(), active: active.clone() };
                let pr = path.probability(t, inst);
                out.push((path, pr));
            }
            Some((l, r)) => {
                for (child, turn) in [(l, false), (r, true)] {
                    nodes.push(child);
                    active.push(turn);
                    walk(t, inst, nodes, active, out);
                    nodes.pop();
                    active.pop();
                }
            }
        }
    }
    walk(tree, inst, &mut nodes, &mut active, &mut out);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreeProperty {
    Depth = 1,
    RightTurns = 2,
    DistinctApplicants = 3,
    Consistency = 4,
    ChildState = 5,
    Leaf = 6,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeViolation {
    pub property: TreeProperty,
    pub message: String,
    /// Root-to-witness node ids.
    pub path: Vec<NodeId>,
}

impl fmt::Display for TreeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "property {} violated: {} (path {:?})", self.property as u8, self.message, self.path)
    }
}

/// How strictly child state labels must follow from their parent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChildStates {
    /// Children carry exactly `(t+1, k, A \ {app})` and `(t+1, k-1, A \ {app})`.
    Exact,
    /// Children carry states no richer than the exact ones. Subtrees moved by
    /// canonicalization keep their original labels and satisfy this form.
    Dominated,
}

pub fn validate_tree<S: Scalar>(tree: &DecisionTree, inst: &Instance<S>) -> std::result::Result<(), TreeViolation> {
    validate_tree_with(tree, inst, ChildStates::Dominated)
}

pub fn validate_tree_with<S: Scalar>(
    tree: &DecisionTree,
    inst: &Instance<S>,
    mode: ChildStates,
) -> std::result::Result<(), TreeViolation> {
    if let Err(e) = tree.check_structure() {
        return Err(TreeViolation { property: TreeProperty::Leaf, message: e.to_string(), path: vec![] });
    }
    let mut path = vec![tree.root];
    let mut seen = HashSet::new();
    check_paths(tree, inst, &mut path, 0, &mut seen)?;
    let n = inst.n();
    let mut chosen: HashMap<&State, usize> = HashMap::new();
    for id in tree.reachable() {
        let node = &tree.nodes[id];
        let terminal = node.state.is_terminal(inst.horizon);
        let Some((l, r)) = tree.children(id) else {
            if !terminal {
                return Err(TreeViolation {
                    property: TreeProperty::Leaf,
                    message: format!("leaf {id} has non-terminal state {}", node.state),
                    path: vec![id],
                });
            }
            continue;
        };
        if terminal || node.app >= n || !node.state.avail.contains(node.app) {
            return Err(TreeViolation {
                property: TreeProperty::ChildState,
                message: format!("node {id} offers {} at state {}", node.app, node.state),
                path: vec![id],
            });
        }
        if let Some(&prev) = chosen.get(&node.state) {
            if prev != node.app {
                return Err(TreeViolation {
                    property: TreeProperty::Consistency,
                    message: format!("state {} chooses both {prev} and {}", node.state, node.app),
                    path: vec![id],
                });
            }
        } else {
            chosen.insert(&node.state, node.app);
        }
        let s = &node.state;
        for (child, accepted) in [(l, false), (r, true)] {
            let c = &tree.nodes[child].state;
            let want = s.after(&[node.app], accepted);
            let ok = match mode {
                ChildStates::Exact => *c == want,
                ChildStates::Dominated => c.t >= want.t && c.k <= want.k && c.avail.is_subset(&want.avail),
            };
            if !ok {
                return Err(TreeViolation {
                    property: TreeProperty::ChildState,
                    message: format!("child {child} of node {id} has state {c}, expected {want}"),
                    path: vec![id, child],
                });
            }
        }
    }
    Ok(())
}

fn check_paths<S: Scalar>(
    tree: &DecisionTree,
    inst: &Instance<S>,
    path: &mut Vec<NodeId>,
    rights: usize,
    seen: &mut HashSet<usize>,
) -> std::result::Result<(), TreeViolation> {
    let id = *path.last().unwrap();
    let node = &tree.nodes[id];
    let Some((l, r)) = tree.children(id) else {
        return Ok(());
    };
    if path.len() > inst.horizon {
        return Err(TreeViolation {
            property: TreeProperty::Depth,
            message: format!("path offers more than T = {} times", inst.horizon),
            path: path.clone(),
        });
    }
    if !seen.insert(node.app) {
        return Err(TreeViolation {
            property: TreeProperty::DistinctApplicants,
            message: format!("applicant {} offered twice", node.app),
            path: path.clone(),
        });
    }
    for (child, turn) in [(l, 0), (r, 1)] {
        if rights + turn > inst.k {
            path.push(child);
            let v = TreeViolation {
                property: TreeProperty::RightTurns,
                message: format!("more than k = {} acceptances", inst.k),
                path: path.clone(),
            };
            return Err(v);
        }
        path.push(child);
        let res = check_paths(tree, inst, path, rights + turn, seen);
        path.pop();
        res?;
    }
    seen.remove(&node.app);
    Ok(())
}

/// Unrolls a state-to-applicant policy into an explicit tree. Equal states
/// map to one shared node, so consistency holds by construction.
pub fn policy_tree_from_function<S: Scalar>(
    inst: &Instance<S>,
    mut policy: impl FnMut(&State) -> usize,
) -> Result<DecisionTree> {
    let mut tree = DecisionTree { nodes: Vec::new(), root: 0 };
    let mut memo: HashMap<State, NodeId> = HashMap::new();
    fn build<S: Scalar>(
        inst: &Instance<S>,
        state: State,
        policy: &mut dyn FnMut(&State) -> usize,
        tree: &mut DecisionTree,
        memo: &mut HashMap<State, NodeId>,
    ) -> Result<NodeId> {
        if let Some(&id) = memo.get(&state) {
            return Ok(id);
        }
        let id = if state.is_terminal(inst.horizon) {
            tree.push(TreeNode::leaf(state.clone()))
        } else {
            let app = policy(&state);
            if app >= inst.n() || !state.avail.contains(app) {
                return Err(Error::UnavailableApplicant { app, state: state.to_string() });
            }
            let l = build(inst, state.after(&[app], false), policy, tree, memo)?;
            let r = build(inst, state.after(&[app], true), policy, tree, memo)?;
            tree.push(TreeNode { state: state.clone(), app, left: Some(l), right: Some(r) })
        };
        memo.insert(state, id);
        Ok(id)
    }
    let root = build(inst, State::initial(inst), &mut policy, &mut tree, &mut memo)?;
    tree.root = root;
    Ok(tree.compact())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::worked_example;

    /// Offer 0; after a rejection offer 1, after an acceptance offer 2.
    pub(crate) fn example_tree() -> DecisionTree {
        let inst = worked_example();
        policy_tree_from_function(&inst, |s| {
            if s.t == 1 {
                0
            } else if s.k == 2 {
                1
            } else {
                2
            }
        })
        .unwrap()
    }

    #[test]
    fn worked_example_reward_is_three() {
        let inst = worked_example();
        let tree = example_tree();
        assert_eq!(validate_tree_with(&tree, &inst, ChildStates::Exact), Ok(()));
        assert!((root_reward(&tree, &inst) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn worked_example_paths() {
        let inst = worked_example();
        let tree = example_tree();
        let dist = path_distribution(&tree, &inst);
        let probs: Vec<f64> = dist.iter().map(|(_, p)| *p).collect();
        let values: Vec<f64> = dist.iter().map(|(path, _)| path.value(&tree, &inst)).collect();
        assert_eq!(probs, vec![0.0, 0.5, 0.0, 0.5]);
        assert_eq!(values, vec![0.0, 2.0, 1.0, 4.0]);
    }

    #[test]
    fn leaves_are_worth_zero() {
        let inst = worked_example();
        let tree = example_tree();
        for (id, n) in tree.nodes.iter().enumerate() {
            if n.is_leaf() {
                assert_eq!(tree_reward(&tree, &inst, id).unwrap(), 0.0);
            }
        }
        assert!(matches!(tree_reward(&tree, &inst, 999), Err(Error::UnknownNode(999))));
    }

    #[test]
    fn single_offer_is_p_times_v() {
        let inst = Instance::new(vec![4.0], vec![0.5], 1, 1).unwrap();
        let tree = policy_tree_from_function(&inst, |_| 0).unwrap();
        assert_eq!(tree.nodes.len(), 3);
        assert_eq!(root_reward(&tree, &inst), 2.0);
    }

    #[test]
    fn certain_acceptance_gives_single_path() {
        let inst = Instance::new(vec![1.0, 2.0], vec![1.0, 1.0], 2, 2).unwrap();
        let tree = policy_tree_from_function(&inst, |s| s.avail.iter().next().unwrap()).unwrap();
        let positive: Vec<_> = path_distribution(&tree, &inst).into_iter().filter(|(_, p)| *p > 0.0).collect();
        assert_eq!(positive.len(), 1);
        assert_eq!(positive[0].1, 1.0);
    }

    #[test]
    fn duplicate_applicant_is_property_three() {
        let inst = worked_example();
        let mut tree = example_tree();
        // Make the rejection child of the root offer applicant 0 again.
        let l = tree.nodes[tree.root].left.unwrap();
        tree.nodes[l].app = 0;
        tree.nodes[l].state.avail.insert(0);
        let err = validate_tree(&tree, &inst).unwrap_err();
        assert_eq!(err.property, TreeProperty::DistinctApplicants);
    }

    #[test]
    fn too_deep_is_property_one() {
        let inst = Instance::new(vec![1.0, 1.0, 1.0], vec![0.5; 3], 1, 2).unwrap();
        // Chain of three offers along the left arcs with fake stage labels.
        let mut tree = DecisionTree { nodes: vec![], root: 0 };
        let full = AppSet::full(3);
        let dead = State { t: 3, k: 0, avail: full.clone() };
        let mut next = tree.push(TreeNode::leaf(State { t: 3, k: 1, avail: AppSet::empty(3) }));
        for app in [2usize, 1, 0] {
            let r = tree.push(TreeNode::leaf(dead.clone()));
            let state = State { t: 1, k: 1, avail: AppSet::from_ids(3, 0..=app) };
            next = tree.push(TreeNode { state, app, left: Some(next), right: Some(r) });
        }
        tree.root = next;
        let err = validate_tree(&tree, &inst).unwrap_err();
        assert_eq!(err.property, TreeProperty::Depth);
    }

    #[test]
    fn unavailable_choice_is_an_error() {
        let inst = worked_example();
        let err = policy_tree_from_function(&inst, |_| 0).unwrap_err();
        assert!(matches!(err, Error::UnavailableApplicant { app: 0, .. }));
    }

    #[test]
    fn json_round_trip() {
        let tree = example_tree();
        let s = tree.to_json();
        assert!(s.starts_with("[{\"state\":[1,2,\"7\"],\"app\":0"));
        let back = DecisionTree::from_json(3, &s).unwrap();
        assert_eq!(back, tree.compact());
    }

    #[test]
    fn raising_a_value_never_lowers_reward() {
        let inst = worked_example();
        let tree = example_tree();
        let base = root_reward(&tree, &inst);
        for i in 0..3 {
            let mut up = inst.clone();
            up.values[i] += 0.7;
            assert!(root_reward(&tree, &up) >= base);
        }
    }
}
