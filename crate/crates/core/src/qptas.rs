//! Optimal order-by-value policy for the mixed-rounded instance. Within a
//! class every member shares one acceptance probability, so a state only
//! needs how many members of each class have been offered.

use std::collections::HashMap;

use serde::Serialize;

use crate::block::OrderWitness;
use crate::error::{Error, Result};
use crate::instance::{Flavor, Instance};
use crate::rounding::{round_instance, ClassPartition, RoundedInstance};
use crate::scalar::Scalar;
use crate::set::AppSet;
use crate::tree::{offer_reward, policy_tree_from_function, root_reward, DecisionTree, NodeId, State, VIRTUAL};

/// `(t, k, L)` where `L[m]` counts offered members of class `m`.
pub type ClassState = (usize, usize, Vec<usize>);

#[derive(Clone, Debug)]
pub struct QptasMemo<S> {
    pub table: HashMap<ClassState, (S, Option<usize>)>,
}

impl<S: Scalar> QptasMemo<S> {
    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Entries sorted by state.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Entry<'a> {
            t: usize,
            k: usize,
            offered: &'a [usize],
            value: f64,
            class: Option<usize>,
        }
        let mut keys: Vec<&ClassState> = self.table.keys().collect();
        keys.sort();
        let entries: Vec<Entry> = keys
            .into_iter()
            .map(|key| {
                let (v, c) = &self.table[key];
                Entry { t: key.0, k: key.1, offered: &key.2, value: v.to_f64(), class: *c }
            })
            .collect();
        serde_json::to_string(&entries).expect("memo serializes")
    }
}

struct Solver<'a, S> {
    inst: &'a Instance<S>,
    part: &'a ClassPartition<S>,
    memo: QptasMemo<S>,
}

impl<S: Scalar> Solver<'_, S> {
    fn value(&mut self, t: usize, k: usize, l: &mut Vec<usize>) -> S {
        let offered: usize = l.iter().sum();
        if t > self.inst.horizon || k == 0 || offered == self.inst.n() {
            return S::zero();
        }
        if let Some((v, _)) = self.memo.table.get(&(t, k, l.clone())) {
            return v.clone();
        }
        let mut best: Option<(S, usize)> = None;
        for m in 0..self.part.classes.len() {
            let Some(&app) = self.part.classes[m].get(l[m]) else { continue };
            l[m] += 1;
            let acc = self.value(t + 1, k - 1, l);
            let rej = self.value(t + 1, k, l);
            l[m] -= 1;
            let val = offer_reward(self.inst.p(app), self.inst.v(app), &acc, &rej);
            if best.as_ref().is_none_or(|(b, _)| val > *b) {
                best = Some((val, m));
            }
        }
        let (v, m) = best.expect("some class has members left");
        self.memo.table.insert((t, k, l.clone()), (v.clone(), Some(m)));
        v
    }
}

/// Solves the class-count recursion from `(1, k, 0)`. Ties between classes
/// go to the lowest class index.
pub fn qptas_solve<S: Scalar>(mixed: &Instance<S>, part: &ClassPartition<S>) -> Result<(S, QptasMemo<S>)> {
    if mixed.flavor != Flavor::MixedRounded {
        return Err(Error::Premise("class recursion needs the mixed-rounded instance".into()));
    }
    let mut solver = Solver { inst: mixed, part, memo: QptasMemo { table: HashMap::new() } };
    let v = solver.value(1, mixed.k, &mut vec![0; part.classes.len()]);
    let bound = mixed.k as f64
        * (mixed.horizon as f64 + 1.0)
        * part.classes.iter().map(|c| c.len() as f64 + 1.0).product::<f64>();
    assert!(solver.memo.len() as f64 <= bound, "class-state memo exceeds its size bound");
    Ok((v, solver.memo))
}

/// Offered-member counts per class, read off the available set.
fn class_counts<S>(part: &ClassPartition<S>, avail: &AppSet) -> Vec<usize> {
    part.classes.iter().map(|c| c.iter().filter(|&&a| !avail.contains(a)).count()).collect()
}

/// Expands the memo into a tree over applicant ids: the chosen class offers
/// its highest-value remaining member.
pub fn qptas_policy_tree<S: Scalar>(memo: &QptasMemo<S>, mixed: &Instance<S>, part: &ClassPartition<S>) -> Result<DecisionTree> {
    policy_tree_from_function(mixed, |s: &State| {
        let l = class_counts(part, &s.avail);
        match memo.table.get(&(s.t, s.k, l.clone())) {
            Some((_, Some(m))) => part.classes[*m][l[*m]],
            _ => VIRTUAL,
        }
    })
}

/// Every offer goes to the highest-value member of its class among the
/// applicants actually still available along the path.
pub fn check_order_by_value<S: Scalar>(tree: &DecisionTree, part: &ClassPartition<S>) -> std::result::Result<(), OrderWitness> {
    let n = part.class_of.len();
    let mut seen = std::collections::HashSet::new();
    let mut stack: Vec<(NodeId, AppSet)> = vec![(tree.root, AppSet::full(n))];
    while let Some((id, avail)) = stack.pop() {
        let Some((l, r)) = tree.children(id) else { continue };
        if !seen.insert((id, avail.clone())) {
            continue;
        }
        let app = tree.nodes[id].app;
        let m = part.class_of[app];
        let best = part.classes[m].iter().copied().find(|&a| avail.contains(a));
        if best != Some(app) {
            return Err(OrderWitness {
                node: id,
                class: m,
                message: format!("offers {app} while {best:?} is the best available"),
            });
        }
        let rest = avail.without(app);
        stack.push((r, rest.clone()));
        stack.push((l, rest));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct QptasResult<S> {
    pub rounded: RoundedInstance<S>,
    pub tree: DecisionTree,
    /// Optimal value on the mixed-rounded instance.
    pub value_mixed: S,
    /// Reward of the same tree on the original instance.
    pub value_original: S,
    pub memo_size: usize,
}

/// Rounds, solves the class recursion, and evaluates the tree on the
/// original instance.
pub fn qptas<S: Scalar>(inst: &Instance<S>, eps: &S) -> Result<QptasResult<S>> {
    let rounded = round_instance(inst, eps)?;
    let (value_mixed, memo) = qptas_solve(&rounded.mixed, &rounded.partition)?;
    let tree = qptas_policy_tree(&memo, &rounded.mixed, &rounded.partition)?;
    let value_original = root_reward(&tree, inst);
    Ok(QptasResult { memo_size: memo.len(), rounded, tree, value_mixed, value_original })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::check_canonical;
    use crate::exact::optimal_exact;
    use crate::instance::worked_example;
    use crate::tree::validate_tree;

    #[test]
    fn worked_example_matches_oracle_on_mixed() {
        let r = qptas(&worked_example(), &0.5).unwrap();
        let (opt, _) = optimal_exact(&r.rounded.mixed).unwrap();
        assert_eq!(r.value_mixed, opt);
        assert_eq!(root_reward(&r.tree, &r.rounded.mixed), r.value_mixed);
        assert_eq!(validate_tree(&r.tree, &r.rounded.mixed), Ok(()));
        assert_eq!(check_canonical(&r.tree, &r.rounded.mixed), Ok(()));
        assert_eq!(check_order_by_value(&r.tree, &r.rounded.partition), Ok(()));
    }

    #[test]
    fn singleton_class_gives_its_reward() {
        let inst = Instance::new(vec![4.0], vec![0.9], 1, 3).unwrap();
        let r = qptas(&inst, &0.5).unwrap();
        let app = 0;
        assert_eq!(r.value_mixed, r.rounded.mixed.reward(app));
    }

    #[test]
    fn no_positions_is_terminal() {
        let inst = worked_example();
        let rounded = round_instance(&inst, &0.5).unwrap();
        let (v, memo) = qptas_solve(&rounded.mixed.with_k(0), &rounded.partition).unwrap();
        assert_eq!(v, 0.0);
        assert!(memo.is_empty());
    }

    #[test]
    fn single_class_offers_in_value_order() {
        let inst = Instance::new(vec![1.0, 3.0, 2.0], vec![0.5; 3], 1, 3).unwrap();
        let r = qptas(&inst, &0.5).unwrap();
        let path: Vec<usize> = r.tree.leftmost_path(r.tree.root).iter().map(|&u| r.tree.nodes[u].app).collect();
        assert_eq!(path, vec![1, 2, 0, VIRTUAL]);
    }

    #[test]
    fn order_violation_is_witnessed() {
        let inst = Instance::new(vec![1.0, 3.0], vec![0.5; 2], 1, 2).unwrap();
        let r = round_instance(&inst, &0.5).unwrap();
        let tree = policy_tree_from_function(&r.mixed, |s: &State| s.avail.iter().next().unwrap()).unwrap();
        let w = check_order_by_value(&tree, &r.partition).unwrap_err();
        assert_eq!(w.node, tree.root);
    }

    #[test]
    fn wrong_flavor_is_refused() {
        let inst = worked_example();
        let r = round_instance(&inst, &0.5).unwrap();
        assert!(qptas_solve(&inst, &r.partition).is_err());
    }
}
