//! Geometric acceptance-probability classes and the two rounded instances.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::{Flavor, Instance};
use crate::scalar::Scalar;

/// Classes `C_0..C_M`. `C_0` holds `p <= gamma`; `C_m` holds
/// `p in ((1+eps)^{m-1} gamma, (1+eps)^m gamma]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPartition<S> {
    pub eps: S,
    pub gamma: S,
    /// Largest class index.
    pub m: usize,
    /// Member ids of each class, non-increasing rounded value, ties by lowest id.
    pub classes: Vec<Vec<usize>>,
    /// Uniform class probability: `gamma` for `C_0`, `(1+eps)^{m-1} gamma` otherwise.
    pub class_prob: Vec<S>,
    pub class_of: Vec<usize>,
}

impl<S: Scalar> ClassPartition<S> {
    /// Position of `app` within its class list.
    pub fn rank_in_class(&self, app: usize) -> usize {
        let c = &self.classes[self.class_of[app]];
        c.iter().position(|&a| a == app).expect("member of own class")
    }

    pub fn class_count(&self) -> usize {
        self.m + 1
    }
}

/// Builds the partition; `(1+eps)` powers come from repeated multiplication.
pub fn partition_classes<S: Scalar>(inst: &Instance<S>, eps: &S) -> Result<ClassPartition<S>> {
    if *eps <= S::zero() {
        return Err(Error::BadEpsilon(eps.to_f64()));
    }
    let gamma = eps.clone() / S::from_usize(inst.horizon);
    if gamma >= S::one() {
        return Err(Error::EpsilonTooLarge { gamma: gamma.to_f64() });
    }
    let base = S::one() + eps.clone();
    // bounds[m] = (1+eps)^m * gamma, up to the first one reaching 1.
    let mut bounds = vec![gamma.clone()];
    while *bounds.last().unwrap() < S::one() {
        let next = bounds.last().unwrap().clone() * base.clone();
        bounds.push(next);
    }
    let m = bounds.len() - 1;
    let mut class_of = vec![0; inst.n()];
    for (i, p) in inst.probs.iter().enumerate() {
        if *p > gamma {
            class_of[i] = (1..=m).find(|&c| *p <= bounds[c]).expect("p <= 1 <= top bound");
        }
    }
    let order = inst.by_value();
    let mut classes = vec![Vec::new(); m + 1];
    for a in order {
        classes[class_of[a]].push(a);
    }
    // Rounded C_0 values are proportional to p v.
    classes[0].sort_by(|&a, &b| inst.reward(b).partial_cmp(&inst.reward(a)).expect("finite rewards").then(a.cmp(&b)));
    let mut class_prob = vec![gamma.clone()];
    class_prob.extend(bounds[..m].iter().cloned());
    Ok(ClassPartition { eps: eps.clone(), gamma, m, classes, class_prob, class_of })
}

/// `C_0` applicants get `p = gamma` and `v = p v / gamma`; others are unchanged.
pub fn round_up<S: Scalar>(inst: &Instance<S>, part: &ClassPartition<S>) -> Instance<S> {
    let mut up = inst.clone();
    up.flavor = Flavor::RoundedUp;
    for i in 0..inst.n() {
        if part.class_of[i] == 0 {
            up.values[i] = inst.reward(i) / part.gamma.clone();
            up.probs[i] = part.gamma.clone();
        }
    }
    up
}

/// Every probability drops to its class representative; values stay.
pub fn mixed_round<S: Scalar>(up: &Instance<S>, part: &ClassPartition<S>) -> Instance<S> {
    let mut mixed = up.clone();
    mixed.flavor = Flavor::MixedRounded;
    for i in 0..up.n() {
        mixed.probs[i] = part.class_prob[part.class_of[i]].clone();
    }
    mixed
}

#[derive(Clone, Debug)]
pub struct RoundedInstance<S> {
    pub base: Instance<S>,
    pub up: Instance<S>,
    pub mixed: Instance<S>,
    pub partition: ClassPartition<S>,
    pub rewards: Vec<S>,
}

pub fn round_instance<S: Scalar>(inst: &Instance<S>, eps: &S) -> Result<RoundedInstance<S>> {
    let partition = partition_classes(inst, eps)?;
    let up = round_up(inst, &partition);
    let mixed = mixed_round(&up, &partition);
    let rewards = (0..inst.n()).map(|i| inst.reward(i)).collect();
    Ok(RoundedInstance { base: inst.clone(), up, mixed, partition, rewards })
}

#[derive(Serialize)]
struct RoundedJson {
    original: serde_json::Value,
    rounded_up: serde_json::Value,
    mixed_rounded: serde_json::Value,
    class_of: Vec<usize>,
    class_prob: Vec<f64>,
    gamma: f64,
    m: usize,
}

impl<S: Scalar> RoundedInstance<S> {
    pub fn to_json(&self) -> String {
        let parse = |i: &Instance<S>| serde_json::from_str(&i.to_f64().to_json()).expect("instance json");
        let j = RoundedJson {
            original: parse(&self.base),
            rounded_up: parse(&self.up),
            mixed_rounded: parse(&self.mixed),
            class_of: self.partition.class_of.clone(),
            class_prob: self.partition.class_prob.iter().map(|p| p.to_f64()).collect(),
            gamma: self.partition.gamma.to_f64(),
            m: self.partition.m,
        };
        serde_json::to_string_pretty(&j).expect("rounded json")
    }
}
