//! Approximation scheme for few positions. Candidate block trees are
//! described by guesses: a leftmost-path length `F`, a grid estimate of each
//! class's contribution to each block, and an estimate of each block's
//! rejection probability. Applicants are assigned to blocks class by class
//! until the estimates are met, and a correction coin brings each block's
//! left-descent probability down to the estimate.
//!
//! [`ptas_solve`] searches the candidate family with a memoized recursion
//! over `(F, position, class counts, positions left)` instead of listing
//! every guess; [`enumerate_guesses`] and [`assign_and_build`] realize the
//! literal procedure for small grids.

use std::collections::HashMap;
use std::time::Instant;

use num_bigint::BigUint;
use serde::Serialize;

use crate::block::{block_root_reward, terminal_bound, BlockNode, BlockTree, CorrectionCoin};
use crate::canonical::canonicalize_block;
use crate::error::{Error, Result};
use crate::exact::{greedy_dp, optimal_exact, ORACLE_LIMIT};
use crate::instance::Instance;
use crate::rounding::{round_instance, ClassPartition};
use crate::scalar::Scalar;
use crate::tree::{offer_reward, root_reward, DecisionTree, NodeId, State};

pub const DEFAULT_BUDGET: u64 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Regime {
    ManyPositions,
    FewPositions,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RegimeDecision {
    pub regime: Regime,
    /// `1 / eps^2`.
    pub threshold: f64,
}

pub fn classify_regime<S: Scalar>(inst: &Instance<S>, eps: &S) -> Result<RegimeDecision> {
    if *eps <= S::zero() {
        return Err(Error::BadEpsilon(eps.to_f64()));
    }
    let e = eps.to_f64();
    let threshold = 1.0 / (e * e);
    let regime = if inst.k as f64 >= threshold { Regime::ManyPositions } else { Regime::FewPositions };
    Ok(RegimeDecision { regime, threshold })
}

/// Lower estimate of the optimum on the mixed-rounded instance: the best
/// value-ordered policy, which is within a factor 2 of optimal.
pub fn underestimate_opt<S: Scalar>(mixed: &Instance<S>) -> Result<S> {
    Ok(greedy_dp(mixed)?.0)
}

/// `ceil(13 / eps^3 * ln(1 / eps))`, at least 1.
pub fn max_path_len(eps: f64) -> usize {
    (terminal_bound(eps).ceil() as usize).max(1)
}

/// Per-`F` grid parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<S> {
    pub f: usize,
    /// Contribution step `eps / (2 k M F) * opt_est`.
    pub delta: S,
    /// Geometric ratio step `eps^3 / (k F)`.
    pub mu: S,
    /// Rejection estimates, ascending: `1 - p` of every non-empty class and
    /// the powers `(1 + mu)^-j` down to `1 - eps^3`.
    pub menu: Vec<S>,
}

pub fn grid_for<S: Scalar>(f: usize, k: usize, part: &ClassPartition<S>, eps: &S, opt_est: &S) -> Grid<S> {
    let delta = eps.clone() * opt_est.clone() / S::from_usize(2 * k * part.m.max(1) * f);
    let eps3 = eps.clone() * eps.clone() * eps.clone();
    let mu = eps3.clone() / S::from_usize(k * f);
    let floor = S::one() - eps3;
    let mut menu: Vec<S> = (0..=part.m)
        .filter(|&m| !part.classes[m].is_empty())
        .map(|m| S::one() - part.class_prob[m].clone())
        .collect();
    let ratio = S::one() + mu.clone();
    let mut x = S::one();
    while x >= floor {
        menu.push(x.clone());
        x = x / ratio.clone();
    }
    menu.sort_by(|a, b| a.partial_cmp(b).expect("menu entries are ordered"));
    menu.dedup();
    Grid { f, delta, mu, menu }
}

/// Size of the literal guess grid for one `F`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GuessGrid {
    pub f: usize,
    /// Contribution cells: non-empty classes times `F` positions.
    pub cells: usize,
    /// Contribution budget in units of the grid step, `floor(4 k M F / eps^4)`.
    pub budget: u64,
    pub menu_len: usize,
}

impl GuessGrid {
    pub fn new<S: Scalar>(f: usize, k: usize, part: &ClassPartition<S>, eps: &S, menu_len: usize) -> Self {
        let e = eps.to_f64();
        let nonempty = part.classes.iter().filter(|c| !c.is_empty()).count();
        let budget = (4.0 * (k * part.m.max(1) * f) as f64 / e.powi(4)).floor() as u64;
        GuessGrid { f, cells: nonempty * f, budget, menu_len }
    }

    /// Non-negative integer vectors over the cells with sum at most the
    /// budget: `C(budget + cells, cells)`.
    pub fn contribution_count(&self) -> BigUint {
        binomial(self.budget + self.cells as u64, self.cells as u64)
    }

    pub fn rejection_count(&self) -> BigUint {
        BigUint::from(self.menu_len).pow(self.f as u32)
    }

    pub fn total_count(&self) -> BigUint {
        self.contribution_count() * self.rejection_count()
    }
}

fn binomial(n: u64, r: u64) -> BigUint {
    let mut acc = BigUint::from(1u32);
    for i in 1..=r {
        acc = acc * BigUint::from(n - r + i) / BigUint::from(i);
    }
    acc
}

fn big_to_f64(x: &BigUint) -> f64 {
    use num_traits::ToPrimitive;
    x.to_f64().unwrap_or(f64::INFINITY)
}

/// One point of the guess grid, with guesses for right subtrees.
#[derive(Clone, Debug, PartialEq)]
pub struct GuessVector<S> {
    pub f: usize,
    /// `contribs[m][f]`, multiples of `delta`.
    pub contribs: Vec<Vec<S>>,
    pub rejects: Vec<S>,
    pub delta: S,
    pub mu: S,
    /// Guess for the right subtree below each of the first `F - 1` blocks;
    /// `None` makes it a leaf.
    pub right: Vec<Option<Box<GuessVector<S>>>>,
}

/// Lists every top-level guess for `F = 1..=f_max` in lexicographic order,
/// refusing when the grid holds more than `cap` points. Right-subtree
/// guesses are left empty.
pub fn enumerate_guesses<S: Scalar>(
    mixed: &Instance<S>,
    part: &ClassPartition<S>,
    eps: &S,
    opt_est: &S,
    k: usize,
    f_max: usize,
    cap: u64,
) -> Result<Vec<GuessVector<S>>> {
    let mut grids = Vec::new();
    let mut total = BigUint::from(0u32);
    for f in 1..=f_max {
        let grid = grid_for(f, k, part, eps, opt_est);
        let gg = GuessGrid::new(f, k, part, eps, grid.menu.len());
        let (contrib, reject) = (gg.contribution_count(), gg.rejection_count());
        total += &contrib * &reject;
        if total > BigUint::from(cap) {
            let dimension = if contrib > BigUint::from(cap) {
                format!("contribution estimates at F = {f}")
            } else if reject > BigUint::from(cap) {
                format!("rejection estimates at F = {f}")
            } else {
                format!("combined guesses up to F = {f}")
            };
            return Err(Error::Budget { dimension, count: big_to_f64(&total), cap });
        }
        grids.push((grid, gg));
    }
    let _ = mixed;
    let mut out = Vec::new();
    for (grid, gg) in grids {
        let f = grid.f;
        let cells: Vec<(usize, usize)> = (0..=part.m)
            .filter(|&m| !part.classes[m].is_empty())
            .flat_map(|m| (0..f).map(move |pos| (m, pos)))
            .collect();
        let mut units = vec![0u64; cells.len()];
        let mut contrib_points = Vec::new();
        fill_units(&mut units, 0, gg.budget, &mut contrib_points);
        for u in contrib_points {
            let mut contribs = vec![vec![S::zero(); f]; part.m + 1];
            for (&(m, pos), &x) in cells.iter().zip(&u) {
                contribs[m][pos] = S::from_usize(x as usize) * grid.delta.clone();
            }
            let mut idx = vec![0usize; f];
            loop {
                out.push(GuessVector {
                    f,
                    contribs: contribs.clone(),
                    rejects: idx.iter().map(|&i| grid.menu[i].clone()).collect(),
                    delta: grid.delta.clone(),
                    mu: grid.mu.clone(),
                    right: vec![None; f - 1],
                });
                // Odometer over menu indices, last position fastest.
                let mut p = f;
                while p > 0 && idx[p - 1] + 1 == grid.menu.len() {
                    idx[p - 1] = 0;
                    p -= 1;
                }
                if p == 0 {
                    break;
                }
                idx[p - 1] += 1;
            }
        }
    }
    Ok(out)
}

fn fill_units(units: &mut Vec<u64>, at: usize, left: u64, out: &mut Vec<Vec<u64>>) {
    if at == units.len() {
        out.push(units.clone());
        return;
    }
    for x in 0..=left {
        units[at] = x;
        fill_units(units, at + 1, left - x, out);
    }
    units[at] = 0;
}

/// Cumulative class contributions `S_j = p_m * (v_1 + ... + v_j)` of the
/// next `j` members of class `m` after the first `start`.
fn class_sums<S: Scalar>(mixed: &Instance<S>, part: &ClassPartition<S>, m: usize, start: usize, max_j: usize) -> Vec<S> {
    let members = &part.classes[m][start.min(part.classes[m].len())..];
    let mut sums = vec![S::zero()];
    let mut v = S::zero();
    for &a in members.iter().take(max_j) {
        v = v + mixed.v(a).clone();
        sums.push(part.class_prob[m].clone() * v.clone());
    }
    sums
}

/// Counts `j >= 1` that some positive multiple `u * delta` selects, that is
/// `S_{j-1} < u * delta <= S_j`.
fn reachable_counts<S: Scalar>(sums: &[S], delta: &S) -> Vec<usize> {
    let mut out = Vec::new();
    for j in 1..sums.len() {
        let mut u = (sums[j].clone() / delta.clone()).floor();
        while u.clone() * delta.clone() > sums[j] {
            u = u - S::one();
        }
        if u >= S::one() && u * delta.clone() > sums[j - 1] {
            out.push(j);
        }
    }
    out
}

fn make_block<S: Scalar>(mixed: &Instance<S>, part: &ClassPartition<S>, phi: &[usize], counts: &[usize]) -> Vec<usize> {
    let mut block: Vec<usize> = (0..counts.len()).flat_map(|m| part.classes[m][phi[m]..phi[m] + counts[m]].iter().copied()).collect();
    block.sort_by(|&a, &b| mixed.v(b).partial_cmp(mixed.v(a)).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    block
}

fn rejection<S: Scalar>(mixed: &Instance<S>, block: &[usize]) -> S {
    block.iter().fold(S::one(), |acc, &a| acc * (S::one() - mixed.p(a).clone()))
}

fn coin_target<S: Scalar>(psi_tilde: &S, psi_block: &S) -> S {
    if psi_block.is_zero() {
        S::zero()
    } else {
        psi_tilde.clone() / psi_block.clone()
    }
}

/// Node reward with the same operation order as the block evaluator.
fn node_value<S: Scalar>(mixed: &Instance<S>, block: &[usize], coin: &S, left: &S, right: &S) -> S {
    let mut acc = coin.clone() * left.clone() + (S::one() - coin.clone()) * right.clone();
    for &a in block.iter().rev() {
        acc = offer_reward(mixed.p(a), mixed.v(a), right, &acc);
    }
    acc
}

fn state_for(n: usize, part_classes: &[Vec<usize>], phi: &[usize], k: usize) -> State {
    let mut avail = crate::set::AppSet::full(n);
    for (m, &c) in phi.iter().enumerate() {
        for &a in &part_classes[m][..c] {
            avail.remove(a);
        }
    }
    State { t: 1 + phi.iter().sum::<usize>(), k, avail }
}

/// One block placed by the assignment, keyed by its position: the list of
/// leftmost-path indices at which right turns were taken, then the index
/// on the current path.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry<S> {
    pub address: Vec<usize>,
    /// Class counts offered before the block.
    pub phi: Vec<usize>,
    /// Members taken from each class.
    pub counts: Vec<usize>,
    pub block: Vec<usize>,
    pub psi_tilde: S,
    pub psi_block: S,
    /// Smallest rejection product over the block's prefixes.
    pub min_prefix_rejection: S,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Assignment<S> {
    Feasible(BlockTree<S>, Vec<TraceEntry<S>>),
    Infeasible(String),
}

/// Builds the candidate tree for a guess, starting from class counts `phi`
/// with `k` positions open.
pub fn assign_and_build<S: Scalar>(
    guess: &GuessVector<S>,
    mixed: &Instance<S>,
    part: &ClassPartition<S>,
    k: usize,
    phi: &[usize],
) -> Result<Assignment<S>> {
    let mut tree = BlockTree { nodes: Vec::new(), root: 0 };
    let mut trace = Vec::new();
    match assign_rec(guess, mixed, part, k, phi, &mut Vec::new(), &mut tree, &mut trace)? {
        Ok(root) => {
            tree.root = root;
            Ok(Assignment::Feasible(tree.compact(), trace))
        }
        Err(why) => Ok(Assignment::Infeasible(why)),
    }
}

#[allow(clippy::too_many_arguments)]
fn assign_rec<S: Scalar>(
    guess: &GuessVector<S>,
    mixed: &Instance<S>,
    part: &ClassPartition<S>,
    k: usize,
    phi0: &[usize],
    address: &mut Vec<usize>,
    tree: &mut BlockTree<S>,
    trace: &mut Vec<TraceEntry<S>>,
) -> Result<std::result::Result<NodeId, String>> {
    let classes = part.classes.len();
    if guess.f == 0 || guess.contribs.len() != classes || guess.rejects.len() != guess.f || guess.right.len() + 1 != guess.f {
        return Err(Error::Premise("guess dimensions do not match the class partition".into()));
    }
    if guess.contribs.iter().any(|row| row.len() != guess.f) || phi0.len() != classes {
        return Err(Error::Premise("guess dimensions do not match the class partition".into()));
    }
    let n = mixed.n();
    let mut phi = phi0.to_vec();
    let mut path = Vec::new();
    for f in 0..guess.f - 1 {
        let mut counts = vec![0; classes];
        for m in 0..classes {
            let target = &guess.contribs[m][f];
            let sums = class_sums(mixed, part, m, phi[m], usize::MAX);
            match sums.iter().position(|s| s >= target) {
                Some(j) => counts[m] = j,
                None => return Ok(Err(format!("class {m} cannot cover its estimate at position {}", f + 1))),
            }
        }
        let block = make_block(mixed, part, &phi, &counts);
        let state = state_for(n, &part.classes, &phi, k);
        if state.t - 1 + block.len() > mixed.horizon {
            return Ok(Err(format!("block at position {} runs past the horizon", f + 1)));
        }
        let psi_block = rejection(mixed, &block);
        let psi_tilde = guess.rejects[f].clone();
        if psi_tilde > psi_block {
            return Ok(Err(format!("rejection estimate exceeds the block's rejection probability at position {}", f + 1)));
        }
        let mut prefix = S::one();
        let mut min_prefix = S::one();
        for &a in &block {
            prefix = prefix * (S::one() - mixed.p(a).clone());
            if prefix < min_prefix {
                min_prefix = prefix.clone();
            }
        }
        address.push(f);
        trace.push(TraceEntry {
            address: address.clone(),
            phi: phi.clone(),
            counts: counts.clone(),
            block: block.clone(),
            psi_tilde: psi_tilde.clone(),
            psi_block: psi_block.clone(),
            min_prefix_rejection: min_prefix,
        });
        let next_phi: Vec<usize> = phi.iter().zip(&counts).map(|(a, b)| a + b).collect();
        let right = match (&guess.right[f], k >= 2) {
            (Some(g), true) => match assign_rec(g, mixed, part, k - 1, &next_phi, address, tree, trace)? {
                Ok(id) => id,
                Err(why) => return Ok(Err(why)),
            },
            _ => tree.push(BlockNode::leaf(state_for(n, &part.classes, &next_phi, k - 1))),
        };
        address.pop();
        let coin = coin_target(&psi_tilde, &psi_block);
        path.push((state, block, right, coin));
        phi = next_phi;
    }
    let mut next = tree.push(BlockNode::leaf(state_for(n, &part.classes, &phi, k)));
    for (state, block, right, coin) in path.into_iter().rev() {
        next = attach(tree, state, block, next, right, coin);
    }
    Ok(Ok(next))
}

/// Pushes a path node, dropping coins that always continue left and
/// splicing out empty blocks without a coin.
fn attach<S: Scalar>(tree: &mut BlockTree<S>, state: State, block: Vec<usize>, left: NodeId, right: NodeId, coin: S) -> NodeId {
    let coin = if coin == S::one() { None } else { Some(CorrectionCoin { target_prob: coin }) };
    if block.is_empty() && coin.is_none() {
        return left;
    }
    tree.push(BlockNode { state, block, left: Some(left), right: Some(right), coin })
}

#[derive(Clone, Debug)]
struct Choice<S> {
    counts: Vec<usize>,
    coin: S,
}

type PathKey = (usize, usize, usize, u128);

struct Search<'a, S> {
    mixed: &'a Instance<S>,
    part: &'a ClassPartition<S>,
    f_max: usize,
    grids: Vec<Grid<S>>,
    place: Vec<u128>,
    paths: HashMap<PathKey, (S, Option<Choice<S>>)>,
    rights: HashMap<(usize, u128), (S, usize)>,
    evaluations: u64,
    cap: u64,
    partial: bool,
}

impl<S: Scalar> Search<'_, S> {
    fn code(&self, phi: &[usize]) -> u128 {
        phi.iter().zip(&self.place).map(|(&c, &p)| c as u128 * p).sum()
    }

    /// Best value of the remaining `rem` positions of a length-`f` path.
    fn best_path(&mut self, f: usize, rem: usize, phi: &[usize], k: usize) -> S {
        if rem == 0 {
            return S::zero();
        }
        let key = (f, rem, k, self.code(phi));
        if let Some((v, _)) = self.paths.get(&key) {
            return v.clone();
        }
        let room = self.mixed.horizon.saturating_sub(phi.iter().sum());
        let delta = self.grids[f - 1].delta.clone();
        let options: Vec<Vec<usize>> = (0..phi.len())
            .map(|m| {
                let sums = class_sums(self.mixed, self.part, m, phi[m], room);
                let mut o = vec![0];
                o.extend(reachable_counts(&sums, &delta));
                o
            })
            .collect();
        let mut best: Option<(S, Choice<S>)> = None;
        let mut idx = vec![0usize; options.len()];
        let mut first = true;
        loop {
            let counts: Vec<usize> = idx.iter().zip(&options).map(|(&i, o)| o[i]).collect();
            if counts.iter().sum::<usize>() <= room {
                self.evaluations += 1;
                if self.evaluations > self.cap {
                    self.partial = true;
                }
                if self.partial && !first {
                    break;
                }
                first = false;
                if let Some((val, choice)) = self.evaluate(f, rem, phi, k, counts) {
                    if best.as_ref().is_none_or(|(b, _)| val > *b) {
                        best = Some((val, choice));
                    }
                }
            }
            // Odometer, last class fastest.
            let mut p = idx.len();
            while p > 0 && idx[p - 1] + 1 == options[p - 1].len() {
                idx[p - 1] = 0;
                p -= 1;
            }
            if p == 0 {
                break;
            }
            idx[p - 1] += 1;
        }
        let entry = match best {
            Some((v, c)) => (v, Some(c)),
            None => (S::zero(), None),
        };
        self.paths.insert(key, entry.clone());
        entry.0
    }

    fn evaluate(&mut self, f: usize, rem: usize, phi: &[usize], k: usize, counts: Vec<usize>) -> Option<(S, Choice<S>)> {
        let block = make_block(self.mixed, self.part, phi, &counts);
        let psi_block = rejection(self.mixed, &block);
        let menu = &self.grids[f - 1].menu;
        let feasible = menu.partition_point(|x| *x <= psi_block);
        if feasible == 0 {
            return None;
        }
        let (lo, hi) = (menu[0].clone(), menu[feasible - 1].clone());
        let next: Vec<usize> = phi.iter().zip(&counts).map(|(a, b)| a + b).collect();
        let left = self.best_path(f, rem - 1, &next, k);
        let right = if k >= 2 { self.best_right(&next, k - 1) } else { S::zero() };
        let psi_tilde = if left >= right { hi } else { lo };
        let coin = coin_target(&psi_tilde, &psi_block);
        let val = node_value(self.mixed, &block, &coin, &left, &right);
        Some((val, Choice { counts, coin }))
    }

    fn best_right(&mut self, phi: &[usize], k: usize) -> S {
        let key = (k, self.code(phi));
        if let Some((v, _)) = self.rights.get(&key) {
            return v.clone();
        }
        let mut best = (S::zero(), 1);
        for f in 2..=self.f_max {
            let v = self.best_path(f, f - 1, phi, k);
            if v > best.0 {
                best = (v, f);
            }
        }
        self.rights.insert(key, best.clone());
        best.0
    }

    fn build_path(&self, f: usize, rem: usize, phi: &[usize], k: usize, tree: &mut BlockTree<S>, built: &mut HashMap<PathKey, NodeId>) -> NodeId {
        let state = state_for(self.mixed.n(), &self.part.classes, phi, k);
        if rem == 0 {
            return tree.push(BlockNode::leaf(state));
        }
        let key = (f, rem, k, self.code(phi));
        if let Some(&id) = built.get(&key) {
            return id;
        }
        let id = match &self.paths[&key].1 {
            None => tree.push(BlockNode::leaf(state)),
            Some(choice) => {
                let block = make_block(self.mixed, self.part, phi, &choice.counts);
                let next: Vec<usize> = phi.iter().zip(&choice.counts).map(|(a, b)| a + b).collect();
                let left = self.build_path(f, rem - 1, &next, k, tree, built);
                let right = if k >= 2 {
                    self.build_right(&next, k - 1, tree, built)
                } else {
                    tree.push(BlockNode::leaf(state_for(self.mixed.n(), &self.part.classes, &next, k - 1)))
                };
                attach(tree, state, block, left, right, choice.coin.clone())
            }
        };
        built.insert(key, id);
        id
    }

    fn build_right(&self, phi: &[usize], k: usize, tree: &mut BlockTree<S>, built: &mut HashMap<PathKey, NodeId>) -> NodeId {
        let f = self.rights[&(k, self.code(phi))].1;
        self.build_path(f, f - 1, phi, k, tree, built)
    }
}

#[derive(Clone, Debug)]
pub struct PtasOptions {
    /// Cap on candidate block evaluations; exceeding it returns the best
    /// candidate found so far with the partial flag set.
    pub budget: u64,
    /// Overrides the leftmost-path length bound.
    pub f_max: Option<usize>,
}

impl Default for PtasOptions {
    fn default() -> Self {
        PtasOptions { budget: DEFAULT_BUDGET, f_max: None }
    }
}

#[derive(Clone, Debug)]
pub struct CandidateSearch<S> {
    /// Best candidate, coins included.
    pub tree: BlockTree<S>,
    /// Its reward on the mixed-rounded instance.
    pub value: S,
    pub grids: Vec<Grid<S>>,
    pub evaluations: u64,
    pub partial: bool,
}

/// Best candidate block tree on the mixed-rounded instance.
pub fn search_candidates<S: Scalar>(
    mixed: &Instance<S>,
    part: &ClassPartition<S>,
    eps: &S,
    opt_est: &S,
    opts: &PtasOptions,
) -> Result<CandidateSearch<S>> {
    let f_max = opts.f_max.unwrap_or_else(|| max_path_len(eps.to_f64()));
    let grids: Vec<Grid<S>> = (1..=f_max).map(|f| grid_for(f, mixed.k, part, eps, opt_est)).collect();
    let mut place = Vec::with_capacity(part.classes.len());
    let mut acc: u128 = 1;
    for c in &part.classes {
        place.push(acc);
        acc = acc.checked_mul(c.len() as u128 + 1).ok_or_else(|| Error::Budget {
            dimension: "class-count states".into(),
            count: f64::INFINITY,
            cap: opts.budget,
        })?;
    }
    let mut search = Search {
        mixed,
        part,
        f_max,
        grids,
        place,
        paths: HashMap::new(),
        rights: HashMap::new(),
        evaluations: 0,
        cap: opts.budget,
        partial: false,
    };
    let phi = vec![0; part.classes.len()];
    let value = search.best_right(&phi, mixed.k);
    let mut tree = BlockTree { nodes: Vec::new(), root: 0 };
    let mut built = HashMap::new();
    tree.root = search.build_right(&phi, mixed.k, &mut tree, &mut built);
    Ok(CandidateSearch { tree: tree.compact(), value, grids: search.grids, evaluations: search.evaluations, partial: search.partial })
}

#[derive(Clone, Debug)]
pub enum PtasPolicy<S> {
    Tree(DecisionTree),
    Block(BlockTree<S>),
}

#[derive(Clone, Debug, Serialize)]
pub struct GridReport {
    pub f: usize,
    pub delta: f64,
    pub mu: f64,
    pub menu_len: usize,
    pub contribution_budget: u64,
    pub literal_guesses: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PtasReport {
    pub regime: Regime,
    pub eps: f64,
    pub threshold: f64,
    pub fallback: Option<String>,
    pub note: Option<String>,
    pub opt_estimate: Option<f64>,
    pub opt_estimate_source: Option<String>,
    pub f_max: Option<usize>,
    pub classes: Option<usize>,
    pub grids: Vec<GridReport>,
    pub candidates_evaluated: u64,
    pub partial: bool,
    pub best_mixed: Option<f64>,
    pub best_original: f64,
    /// `(1 - 7 eps) (1 - 2 eps)`: candidate-family factor times rounding factor.
    pub composed_factor: f64,
    pub wall_time_ms: f64,
}

#[derive(Clone, Debug)]
pub struct PtasOutcome<S> {
    /// Deployed policy: coin-free and canonical on the mixed instance, or
    /// the fallback tree.
    pub policy: PtasPolicy<S>,
    /// Best candidate with its coins, when candidates were searched.
    pub candidate: Option<BlockTree<S>>,
    pub value_mixed: Option<S>,
    pub value_original: S,
    pub report: PtasReport,
}

pub fn ptas_solve<S: Scalar>(inst: &Instance<S>, eps: &S, opts: &PtasOptions) -> Result<PtasOutcome<S>> {
    let start = Instant::now();
    let decision = classify_regime(inst, eps)?;
    let e = eps.to_f64();
    let mut report = PtasReport {
        regime: decision.regime,
        eps: e,
        threshold: decision.threshold,
        fallback: None,
        note: None,
        opt_estimate: None,
        opt_estimate_source: None,
        f_max: None,
        classes: None,
        grids: Vec::new(),
        candidates_evaluated: 0,
        partial: false,
        best_mixed: None,
        best_original: 0.0,
        composed_factor: (1.0 - 7.0 * e) * (1.0 - 2.0 * e),
        wall_time_ms: 0.0,
    };
    if decision.regime == Regime::ManyPositions {
        let (name, tree) = if inst.n() <= ORACLE_LIMIT {
            ("exact", optimal_exact(inst)?.1)
        } else {
            ("greedy", greedy_dp(inst)?.1)
        };
        let value = root_reward(&tree, inst);
        report.fallback = Some(name.into());
        report.note = Some("many positions: the linear-programming route is not implemented".into());
        report.best_original = value.to_f64();
        report.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
        return Ok(PtasOutcome { policy: PtasPolicy::Tree(tree), candidate: None, value_mixed: None, value_original: value, report });
    }
    let rounded = round_instance(inst, eps)?;
    let (mixed, part) = (&rounded.mixed, &rounded.partition);
    let opt_est = underestimate_opt(mixed)?;
    report.opt_estimate = Some(opt_est.to_f64());
    report.opt_estimate_source = Some("greedy_dp".into());
    report.classes = Some(part.m + 1);
    if opt_est.is_zero() {
        let leaf = BlockTree::single_leaf(State::initial(inst));
        report.best_mixed = Some(0.0);
        report.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
        return Ok(PtasOutcome {
            policy: PtasPolicy::Block(leaf.clone()),
            candidate: Some(leaf),
            value_mixed: Some(S::zero()),
            value_original: S::zero(),
            report,
        });
    }
    let found = search_candidates(mixed, part, eps, &opt_est, opts)?;
    let (deployed, _) = canonicalize_block(&found.tree, mixed);
    let value_original = block_root_reward(&deployed, inst);
    report.f_max = Some(found.grids.len());
    report.grids = found
        .grids
        .iter()
        .map(|g| {
            let gg = GuessGrid::new(g.f, inst.k, part, eps, g.menu.len());
            GridReport {
                f: g.f,
                delta: g.delta.to_f64(),
                mu: g.mu.to_f64(),
                menu_len: g.menu.len(),
                contribution_budget: gg.budget,
                literal_guesses: big_to_f64(&gg.total_count()),
            }
        })
        .collect();
    report.candidates_evaluated = found.evaluations;
    report.partial = found.partial;
    report.best_mixed = Some(found.value.to_f64());
    report.best_original = value_original.to_f64();
    report.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(PtasOutcome {
        policy: PtasPolicy::Block(deployed),
        candidate: Some(found.tree),
        value_mixed: Some(found.value),
        value_original,
        report,
    })
}

/// Guess that a reference block tree's own quantities round down to: each
/// class contribution floored to the grid and each rejection probability
/// lowered to the nearest menu entry.
pub fn guess_from_reference<S: Scalar>(
    reference: &BlockTree<S>,
    node: NodeId,
    part: &ClassPartition<S>,
    mixed: &Instance<S>,
    eps: &S,
    opt_est: &S,
    k: usize,
) -> GuessVector<S> {
    let path = reference.leftmost_path(node);
    let f = path.len();
    let grid = grid_for(f, mixed.k, part, eps, opt_est);
    let mut contribs = vec![vec![S::zero(); f]; part.m + 1];
    let mut rejects = vec![grid.menu.last().cloned().unwrap_or_else(S::one); f];
    let mut right = Vec::new();
    for (pos, &u) in path[..f - 1].iter().enumerate() {
        let block = &reference.nodes[u].block;
        for (m, slots) in contribs.iter_mut().enumerate() {
            let mut v = S::zero();
            for &a in part.classes[m].iter().filter(|a| block.contains(a)) {
                v = v + mixed.v(a).clone();
            }
            let r = part.class_prob[m].clone() * v;
            let mut units = (r.clone() / grid.delta.clone()).floor();
            while units.clone() * grid.delta.clone() > r {
                units = units - S::one();
            }
            slots[pos] = units * grid.delta.clone();
        }
        let psi = rejection(mixed, block);
        let fit = grid.menu.partition_point(|x| *x <= psi);
        rejects[pos] = grid.menu[fit.saturating_sub(1)].clone();
        let r = reference.nodes[u].right.expect("path node has children");
        right.push((k >= 2 && !reference.nodes[r].is_leaf()).then(|| Box::new(guess_from_reference(reference, r, part, mixed, eps, opt_est, k - 1))));
    }
    GuessVector { f, contribs, rejects, delta: grid.delta, mu: grid.mu, right }
}

/// Class counts offered before each block of a reference tree, keyed by the
/// same addresses as [`TraceEntry`].
pub fn reference_trace<S: Scalar>(reference: &BlockTree<S>, mixed: &Instance<S>, part: &ClassPartition<S>) -> Vec<TraceEntry<S>> {
    let mut out = Vec::new();
    fn go<S: Scalar>(
        t: &BlockTree<S>,
        node: NodeId,
        mixed: &Instance<S>,
        part: &ClassPartition<S>,
        phi: Vec<usize>,
        address: &mut Vec<usize>,
        out: &mut Vec<TraceEntry<S>>,
    ) {
        let path = t.leftmost_path(node);
        let mut phi = phi;
        for (pos, &u) in path[..path.len() - 1].iter().enumerate() {
            let block = &t.nodes[u].block;
            let counts: Vec<usize> = part.classes.iter().map(|c| c.iter().filter(|a| block.contains(a)).count()).collect();
            let psi = rejection(mixed, block);
            address.push(pos);
            out.push(TraceEntry {
                address: address.clone(),
                phi: phi.clone(),
                counts: counts.clone(),
                block: block.clone(),
                psi_tilde: psi.clone(),
                psi_block: psi,
                min_prefix_rejection: S::one(),
            });
            let next: Vec<usize> = phi.iter().zip(&counts).map(|(a, b)| a + b).collect();
            go(t, t.nodes[u].right.expect("path node has children"), mixed, part, next.clone(), address, out);
            address.pop();
            phi = next;
        }
    }
    go(reference, reference.root, mixed, part, vec![0; part.classes.len()], &mut Vec::new(), &mut out);
    out
}
