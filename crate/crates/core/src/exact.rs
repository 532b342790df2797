//! Exact optimal policies by dynamic programming over full states, and the
//! best policy among those that offer in non-increasing value order.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::scalar::Scalar;
use crate::tree::{offer_reward, policy_tree_from_function, DecisionTree, State, VIRTUAL};

/// Largest pool the full-state oracle accepts.
pub const ORACLE_LIMIT: usize = 20;

/// Optimal value and choice for every state visited by the oracle.
#[derive(Clone, Debug)]
pub struct ExactMemo<S> {
    horizon: usize,
    table: HashMap<(usize, usize, u32), (S, usize)>,
}

impl<S: Scalar> ExactMemo<S> {
    pub fn build(inst: &Instance<S>) -> Result<Self> {
        if inst.n() > ORACLE_LIMIT {
            return Err(Error::OracleTooLarge { n: inst.n(), limit: ORACLE_LIMIT });
        }
        let mut memo = ExactMemo { horizon: inst.horizon, table: HashMap::new() };
        let full = (1u32 << inst.n()) - 1;
        memo.solve(inst, 1, inst.k, full);
        Ok(memo)
    }

    fn solve(&mut self, inst: &Instance<S>, t: usize, k: usize, mask: u32) -> S {
        if t > self.horizon || k == 0 || mask == 0 {
            return S::zero();
        }
        if let Some((v, _)) = self.table.get(&(t, k, mask)) {
            return v.clone();
        }
        let mut best: Option<(S, usize)> = None;
        for i in 0..inst.n() {
            if mask >> i & 1 == 0 {
                continue;
            }
            let rest = mask & !(1 << i);
            let acc = self.solve(inst, t + 1, k - 1, rest);
            let rej = self.solve(inst, t + 1, k, rest);
            let val = offer_reward(inst.p(i), inst.v(i), &acc, &rej);
            if best.as_ref().is_none_or(|(b, _)| val > *b) {
                best = Some((val, i));
            }
        }
        let best = best.expect("non-empty mask");
        self.table.insert((t, k, mask), best.clone());
        best.0
    }

    /// Optimal value and applicant at a state; terminal states give `(0, VIRTUAL)`.
    pub fn get(&self, state: &State) -> (S, usize) {
        if state.is_terminal(self.horizon) {
            return (S::zero(), VIRTUAL);
        }
        let mask = state.avail.iter().fold(0u32, |m, i| m | 1 << i);
        self.table.get(&(state.t, state.k, mask)).cloned().unwrap_or((S::zero(), VIRTUAL))
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

/// Optimal expected reward over all adaptive policies, with an optimal tree.
/// Ties between applicants go to the lowest id.
pub fn optimal_exact<S: Scalar>(inst: &Instance<S>) -> Result<(S, DecisionTree)> {
    let memo = ExactMemo::build(inst)?;
    let tree = policy_tree_from_function(inst, |s| memo.get(s).1)?;
    let value = memo.get(&State::initial(inst)).0;
    Ok((value, tree))
}

/// Table `G(i, k, r)`: best reward from position `i` of the value order with
/// `k` positions and `r` stages left. `offer[i][k][r]` records the choice.
struct GreedyTable<S> {
    order: Vec<usize>,
    g: Vec<Vec<Vec<S>>>,
    offer: Vec<Vec<Vec<bool>>>,
}

impl<S: Scalar> GreedyTable<S> {
    fn build(inst: &Instance<S>) -> Self {
        let order = inst.by_value();
        let (n, k, t) = (inst.n(), inst.k, inst.horizon);
        let mut g = vec![vec![vec![S::zero(); t + 1]; k + 1]; n + 1];
        let mut offer = vec![vec![vec![false; t + 1]; k + 1]; n + 1];
        for i in (0..n).rev() {
            let a = order[i];
            for kk in 1..=k {
                for r in 1..=t {
                    let skip = g[i + 1][kk][r].clone();
                    let take = offer_reward(inst.p(a), inst.v(a), &g[i + 1][kk - 1][r - 1], &g[i + 1][kk][r - 1]);
                    // Offering wins ties so the policy never idles while
                    // applicants and stages remain.
                    if take >= skip {
                        g[i][kk][r] = take;
                        offer[i][kk][r] = true;
                    } else {
                        g[i][kk][r] = skip;
                    }
                }
            }
        }
        GreedyTable { order, g, offer }
    }
}

/// Best policy that offers in non-increasing value order, possibly skipping.
///
/// The returned value is that of the restricted family. The tree follows the
/// same choices; when the value order is exhausted while stages remain, it
/// keeps offering skipped applicants best-first, so its reward is at least
/// the returned value.
pub fn greedy_dp<S: Scalar>(inst: &Instance<S>) -> Result<(S, DecisionTree)> {
    let table = GreedyTable::build(inst);
    let n = inst.n();
    let mut pos = vec![0; n];
    for (i, &a) in table.order.iter().enumerate() {
        pos[a] = i;
    }
    let tree = policy_tree_from_function(inst, |s: &State| {
        // Next index in the value order: one past the furthest applicant offered so far.
        let start = (0..n).filter(|&a| !s.avail.contains(a)).map(|a| pos[a] + 1).max().unwrap_or(0);
        let r = inst.horizon + 1 - s.t;
        for i in start..n {
            if table.offer[i][s.k][r] {
                return table.order[i];
            }
        }
        table.order.iter().copied().find(|&a| s.avail.contains(a)).unwrap_or(VIRTUAL)
    })?;
    Ok((table.g[0][inst.k][inst.horizon].clone(), tree))
}

/// `1 - e^{-k} k^k / k!`, the many-positions guarantee curve.
pub fn many_positions_ratio(k: u32) -> f64 {
    // log-space keeps k^k / k! finite for large k.
    let kf = k as f64;
    let log_fact: f64 = (1..=k).map(|i| (i as f64).ln()).sum();
    1.0 - (-kf + kf * kf.ln() - log_fact).exp()
}
