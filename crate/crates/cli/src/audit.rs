//! Audit rows: one inequality `lhs <= rhs + slack` per row.

use std::path::PathBuf;

use hiring::block::{
    block_root_reward, block_subtree_rewards, block_tree_reward, build_block_tree, check_block_order_by_value,
    rejection_probability, validate_block_tree, BlockTree,
};
use hiring::canonical::{canonicalize, canonicalize_block};
use hiring::eval::{simulate, Policy};
use hiring::exact::{greedy_dp, optimal_exact};
use hiring::ptas::{ptas_solve, PtasOptions, Regime};
use hiring::qptas::{check_order_by_value, qptas};
use hiring::tree::{root_reward, subtree_rewards, validate_tree};
use hiring::{DecisionTree, Instance64};

use crate::{emit, refused, Failure};

const REL: f64 = 1e-9;

/// 17 significant digits, enough to round-trip an f64.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

struct Row {
    name: String,
    lhs: f64,
    rhs: f64,
    slack: f64,
}

impl Row {
    fn rel(name: &str, lhs: f64, rhs: f64) -> Row {
        Row { name: name.into(), lhs, rhs, slack: REL * lhs.abs().max(rhs.abs()) }
    }

    /// Pass/fail rows carry the violation count against zero.
    fn count(name: &str, violations: usize) -> Row {
        Row { name: name.into(), lhs: violations as f64, rhs: 0.0, slack: 0.0 }
    }

    fn pass(&self) -> bool {
        self.lhs <= self.rhs + self.slack
    }
}

/// Worst `(lhs, rhs)` pair over both canonical inequalities, by `lhs - rhs`.
fn worst_pair(pairs: impl Iterator<Item = (f64, f64)>) -> (f64, f64) {
    pairs.fold((0.0, 0.0), |best, p| if p.0 - p.1 > best.0 - best.1 { p } else { best })
}

fn tree_margin(tree: &DecisionTree, inst: &Instance64) -> (f64, f64) {
    let rw = subtree_rewards(tree, inst);
    worst_pair(tree.reachable().into_iter().filter_map(|id| tree.children(id).map(|c| (id, c))).flat_map(|(id, (l, r))| {
        let v = *inst.v(tree.nodes[id].app);
        [(rw[r], rw[l]), (rw[l], v + rw[r])]
    }))
}

fn block_margin(bt: &BlockTree<f64>, inst: &Instance64) -> (f64, f64) {
    let rw = block_subtree_rewards(bt, inst);
    let mut pairs = Vec::new();
    for id in bt.reachable() {
        let Some((_, r)) = bt.children(id) else { continue };
        let block = &bt.nodes[id].block;
        for rank in 1..=block.len() {
            let cont = block_tree_reward(bt, inst, id, rank + 1).expect("rank in range");
            pairs.push((rw[r], cont));
            pairs.push((cont, inst.v(block[rank - 1]) + rw[r]));
        }
    }
    worst_pair(pairs.into_iter())
}

fn rows(inst: &Instance64, eps: f64, trials: u64, seed: u64, budget: u64, extra: Option<&DecisionTree>) -> Result<Vec<Row>, Failure> {
    let mut rows = Vec::new();
    let oracle = optimal_exact(inst).ok();

    if let Some(t) = extra {
        rows.push(Row::count("input tree valid", usize::from(validate_tree(t, inst).is_err())));
        let (l, r) = tree_margin(t, inst);
        rows.push(Row::rel("input tree canonical", l, r));
    }

    // Canonicalization on a tree that need not be canonical.
    let (_, greedy) = greedy_dp(inst).map_err(refused)?;
    let (canon, rep) = canonicalize(&greedy, inst);
    rows.push(Row::rel("canonicalize keeps reward", rep.reward_before, rep.reward_after));
    let (l, r) = tree_margin(&canon, inst);
    rows.push(Row::rel("canonicalized tree is canonical", l, r));

    let res = qptas(inst, &eps).map_err(refused)?;
    let (mixed, part) = (&res.rounded.mixed, &res.rounded.partition);

    let base = match &oracle {
        Some((_, t)) => canonicalize(t, inst).0,
        None => canon,
    };
    rows.push(Row::rel("mixed keeps (1-2eps) of original", (1.0 - 2.0 * eps) * root_reward(&base, inst), root_reward(&base, mixed)));
    rows.push(Row::rel("original keeps mixed", root_reward(&res.tree, mixed), root_reward(&res.tree, inst)));
    if let Ok((opt_mixed, _)) = optimal_exact(mixed) {
        rows.push(Row::rel("order-by-value is lossless", opt_mixed, res.value_mixed));
    }
    let (l, r) = tree_margin(&res.tree, mixed);
    rows.push(Row::rel("class solver tree is canonical", l, r));
    rows.push(Row::count("class solver tree order-by-value", usize::from(check_order_by_value(&res.tree, part).is_err())));

    match build_block_tree(&res.tree, mixed, part, &eps) {
        Ok(bt) => {
            let min_psi = bt
                .reachable()
                .into_iter()
                .map(|id| &bt.nodes[id].block)
                .filter(|b| b.len() >= 2)
                .map(|b| rejection_probability(b, mixed))
                .fold(1.0, f64::min);
            rows.push(Row::rel("multi-member block rejection", 1.0 - eps.powi(3), min_psi));
            rows.push(Row::rel(
                "block tree reward",
                (1.0 - 4.0 * eps.powi(3) * inst.k as f64) * root_reward(&res.tree, mixed),
                block_root_reward(&bt, mixed),
            ));
            rows.push(Row { slack: 0.0, ..Row::rel("block tree depth", bt.depth() as f64, (inst.k * bt.max_leftmost_len()) as f64) });
            rows.push(Row::count("block tree valid", usize::from(validate_block_tree(&bt, mixed).is_err())));
            rows.push(Row::count("block tree order-by-value", usize::from(check_block_order_by_value(&bt, part).is_err())));
            let (cb, crep) = canonicalize_block(&bt, mixed);
            rows.push(Row::rel("block canonicalize keeps reward", crep.reward_before, crep.reward_after));
            let (l, r) = block_margin(&cb, mixed);
            rows.push(Row::rel("canonicalized block tree is canonical", l, r));
            rows.push(Row::rel("original keeps mixed for block trees", block_root_reward(&cb, mixed), block_root_reward(&cb, inst)));
        }
        Err(e) => {
            rows.push(Row { name: format!("block construction ({e})"), lhs: 1.0, rhs: 0.0, slack: 0.0 });
        }
    }

    let out = ptas_solve(inst, &eps, &PtasOptions { budget, f_max: None }).map_err(refused)?;
    if let (Regime::FewPositions, Some(best), Ok((opt_mixed, _))) = (out.report.regime, out.value_mixed, optimal_exact(mixed)) {
        rows.push(Row::rel("candidate family keeps (1-7eps) of optimum", (1.0 - 7.0 * eps) * opt_mixed, best));
    }

    if let Some((value, tree)) = &oracle {
        let rep = simulate::<f64>(Policy::Tree(tree), inst, trials, seed);
        rows.push(Row {
            name: "monte carlo within 4 standard errors".into(),
            lhs: (rep.mean_reward - value).abs(),
            rhs: 4.0 * rep.std_error,
            slack: REL * value.abs(),
        });
    }
    Ok(rows)
}

pub fn cmd_audit(
    inst: &Instance64,
    eps: f64,
    trials: u64,
    seed: u64,
    budget: u64,
    tree: Option<&PathBuf>,
    out: &Option<PathBuf>,
) -> Result<(), Failure> {
    if trials == 0 {
        return Err(Failure::Usage("trials must be positive".into()));
    }
    let extra = match tree {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            Some(DecisionTree::from_json(inst.n(), &text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let rows = rows(inst, eps, trials, seed, budget, extra.as_ref())?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["name", "lhs", "rhs", "slack", "pass"]).expect("csv");
    for r in &rows {
        w.write_record([r.name.clone(), fmt17(r.lhs), fmt17(r.rhs), fmt17(r.slack), r.pass().to_string()]).expect("csv");
    }
    let text = String::from_utf8(w.into_inner().expect("csv flush")).expect("utf8");
    emit(out, &text)?;
    if rows.iter().all(Row::pass) {
        Ok(())
    } else {
        Err(Failure::AuditFailed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, 5e-324, 1.7976931348623157e308, -2.5] {
            assert_eq!(fmt17(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn slack_is_relative() {
        assert!(Row::rel("r", 1.0 + 5e-10, 1.0).pass());
        assert!(!Row::rel("r", 1.0 + 5e-9, 1.0).pass());
        assert!(!Row::count("c", 1).pass());
    }

    #[test]
    fn worst_pair_prefers_largest_excess() {
        assert_eq!(worst_pair([(1.0, 2.0), (3.0, 2.5), (0.0, 0.0)].into_iter()), (3.0, 2.5));
        assert_eq!(worst_pair(std::iter::empty()), (0.0, 0.0));
    }
}
