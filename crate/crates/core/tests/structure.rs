mod common;

use common::*;
use hiring::block::{block_root_reward, build_block_tree, validate_block_tree};
use hiring::canonical::{canonicalize, canonicalize_block, check_block_canonical, check_canonical};
use hiring::eval::{simulate, Policy};
use hiring::ptas::{ptas_solve, PtasOptions, PtasPolicy};
use hiring::qptas::{check_order_by_value, qptas};
use hiring::rounding::round_instance;
use hiring::scalar::rational_from_decimal;
use hiring::tree::{path_distribution, root_reward, validate_tree};
use hiring::{BigRational, Instance};
use num_traits::{One, Zero};

#[test]
fn canonicalization_is_monotone_and_idempotent() {
    let mut r = rng(31);
    for _ in 0..200 {
        let (f, _) = random_sized(&mut r, 7, 3, 6);
        let tree = random_tree(&mut r, &f);
        let (c, rep) = canonicalize(&tree, &f);
        assert!(rel_le(rep.reward_before, rep.reward_after, 1e-12));
        assert_eq!(rep.reward_after, root_reward(&c, &f));
        assert_eq!(check_canonical(&c, &f), Ok(()));
        assert_eq!(validate_tree(&c, &f), Ok(()));
        let (again, rep2) = canonicalize(&c, &f);
        assert!(!rep2.modified);
        assert_eq!(again, c);
    }
}

#[test]
fn block_canonicalization_is_monotone() {
    let mut r = rng(32);
    for _ in 0..200 {
        let (f, _) = random_sized(&mut r, 7, 3, 6);
        let bt = random_block_tree(&mut r, &f, false, false);
        let (c, rep) = canonicalize_block(&bt, &f);
        assert!(rel_le(rep.reward_before, rep.reward_after, 1e-12));
        assert_eq!(check_block_canonical(&c, &f), Ok(()));
        assert_eq!(validate_block_tree(&c, &f), Ok(()));
    }
}

/// Relabelling two members of one class in a tree is the same as swapping
/// their values in the instance, since their probabilities agree.
#[test]
fn promoting_the_better_class_member_never_hurts() {
    let mut r = rng(33);
    let eps = rational_from_decimal(0.5);
    let mut checked = 0;
    for _ in 0..300 {
        let (f, q) = random_sized(&mut r, 6, 3, 5);
        let Ok(rounded) = round_instance(&q, &eps) else { continue };
        let (mixed, part) = (&rounded.mixed, &rounded.partition);
        let tree = random_tree(&mut r, &f);
        if tree.children(tree.root).is_none() {
            continue;
        }
        let lo = tree.nodes[tree.root].app;
        let class = &part.classes[part.class_of[lo]];
        let Some(&hi) = class.iter().find(|&&a| a != lo && mixed.values[a] >= mixed.values[lo]) else { continue };
        let mut values = mixed.values.clone();
        values.swap(lo, hi);
        let swapped = Instance { values, ..mixed.clone() };
        let gain = root_reward(&tree, &swapped) - root_reward(&tree, mixed);
        let offered_hi: BigRational = path_distribution(&tree, mixed)
            .into_iter()
            .filter(|(p, _)| p.nodes.iter().any(|&u| tree.nodes[u].app == hi))
            .map(|(_, pr)| pr)
            .sum();
        let p = mixed.probs[lo].clone();
        let expected = (mixed.values[hi].clone() - mixed.values[lo].clone()) * p * (BigRational::one() - offered_hi);
        assert_eq!(gain, expected);
        assert!(gain >= BigRational::zero());
        checked += 1;
    }
    assert!(checked >= 50, "only {checked} swaps exercised");
}

#[test]
fn class_solver_tree_is_canonical_and_ordered() {
    let mut r = rng(34);
    for _ in 0..100 {
        let (f, _) = random_sized(&mut r, 8, 3, 6);
        let res = qptas(&f, &0.5).unwrap();
        let mixed = &res.rounded.mixed;
        assert_eq!(check_canonical(&res.tree, mixed), Ok(()));
        assert_eq!(check_order_by_value(&res.tree, &res.rounded.partition), Ok(()));
        assert!(rel_le(res.value_mixed, root_reward(&res.tree, mixed), 1e-12));
    }
}

/// A block tree canonical for the mixed instance earns at least as much on
/// the original instance.
#[test]
fn canonical_block_trees_bridge_to_the_original() {
    let mut r = rng(35);
    for _ in 0..60 {
        let (f, _) = random_sized(&mut r, 8, 2, 6);
        let eps = 0.6;
        let res = qptas(&f, &eps).unwrap();
        let (mixed, part) = (&res.rounded.mixed, &res.rounded.partition);
        let bt = build_block_tree(&res.tree, mixed, part, &eps).unwrap();
        let (c, _) = canonicalize_block(&bt, mixed);
        assert!(rel_le(block_root_reward(&c, mixed), block_root_reward(&c, &f), 1e-9));

        let out = ptas_solve(&f, &eps, &PtasOptions::default()).unwrap();
        if let (PtasPolicy::Block(b), Some(vm)) = (&out.policy, out.value_mixed) {
            assert_eq!(check_block_canonical(b, mixed), Ok(()));
            assert!(rel_le(block_root_reward(b, mixed), out.value_original, 1e-9));
            assert!(rel_le(block_root_reward(b, mixed), vm, 1e-9));
        }
    }
}

#[test]
fn ptas_report_is_reproducible() {
    let inst = hiring::instance::worked_example();
    let a = ptas_solve(&inst, &0.6, &PtasOptions::default()).unwrap();
    let b = ptas_solve(&inst, &0.6, &PtasOptions::default()).unwrap();
    let strip = |mut v: serde_json::Value| {
        v.as_object_mut().unwrap().remove("wall_time_ms");
        v
    };
    assert_eq!(strip(serde_json::to_value(&a.report).unwrap()), strip(serde_json::to_value(&b.report).unwrap()));
    assert_eq!(a.value_original, b.value_original);
}

#[test]
fn tight_budget_marks_the_search_partial() {
    let inst = Instance::new(vec![3.0, 2.0, 5.0, 1.0, 4.0], vec![0.5, 0.3, 0.2, 0.9, 0.4], 1, 4).unwrap();
    let out = ptas_solve(&inst, &0.6, &PtasOptions { budget: 3, f_max: None }).unwrap();
    assert!(out.report.partial);
    let full = ptas_solve(&inst, &0.6, &PtasOptions::default()).unwrap();
    assert!(!full.report.partial);
    assert!(full.report.best_mixed >= out.report.best_mixed);
}

#[test]
fn simulation_tracks_block_rewards() {
    let mut r = rng(36);
    for seed in 0..5 {
        let (f, _) = random_sized(&mut r, 6, 3, 5);
        let bt = random_block_tree(&mut r, &f, true, true);
        let rep = simulate(Policy::Block(&bt), &f, 40_000, seed);
        let exact = block_root_reward(&bt, &f);
        assert!((rep.mean_reward - exact).abs() <= 5.0 * rep.std_error + 1e-12, "{rep:?} vs {exact}");
    }
}
