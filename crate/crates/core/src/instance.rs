use std::fmt;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    Original,
    RoundedUp,
    MixedRounded,
}

/// Applicant pool with `k` open positions and a horizon of `horizon` stages.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance<S> {
    pub values: Vec<S>,
    pub probs: Vec<S>,
    pub k: usize,
    pub horizon: usize,
    pub flavor: Flavor,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InstanceViolation {
    LengthMismatch { values: usize, probs: usize },
    Empty,
    NegativeValue(usize),
    ProbOutOfRange(usize),
    NoPositions,
    TooManyPositions { k: usize, n: usize },
    NoStages,
}

impl fmt::Display for InstanceViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstanceViolation::LengthMismatch { values, probs } => {
                write!(f, "values has {values} entries but probs has {probs}")
            }
            InstanceViolation::Empty => write!(f, "empty applicant pool"),
            InstanceViolation::NegativeValue(i) => write!(f, "negative value at applicant {i}"),
            InstanceViolation::ProbOutOfRange(i) => write!(f, "prob out of range at applicant {i}"),
            InstanceViolation::NoPositions => write!(f, "k must be at least 1"),
            InstanceViolation::TooManyPositions { k, n } => write!(f, "k = {k} exceeds n = {n}"),
            InstanceViolation::NoStages => write!(f, "T must be at least 1"),
        }
    }
}

impl<S: Scalar> Instance<S> {
    pub fn new(values: Vec<S>, probs: Vec<S>, k: usize, horizon: usize) -> Result<Self> {
        let inst = Instance { values, probs, k, horizon, flavor: Flavor::Original };
        validate_instance(&inst).map_err(|v| Error::InvalidInstance(v.to_string()))?;
        Ok(inst)
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn v(&self, i: usize) -> &S {
        &self.values[i]
    }

    pub fn p(&self, i: usize) -> &S {
        &self.probs[i]
    }

    /// Expected single-offer reward `p_i * v_i`.
    pub fn reward(&self, i: usize) -> S {
        self.probs[i].clone() * self.values[i].clone()
    }

    pub fn with_k(&self, k: usize) -> Self {
        Instance { k, ..self.clone() }
    }

    pub fn with_horizon(&self, horizon: usize) -> Self {
        Instance { horizon, ..self.clone() }
    }

    /// Applicant ids sorted by non-increasing value, ties by lowest id.
    pub fn by_value(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.n()).collect();
        ids.sort_by(|&a, &b| {
            self.values[b].partial_cmp(&self.values[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        ids
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(&S) -> U) -> Instance<U> {
        Instance {
            values: self.values.iter().map(&f).collect(),
            probs: self.probs.iter().map(&f).collect(),
            k: self.k,
            horizon: self.horizon,
            flavor: self.flavor,
        }
    }

    pub fn to_f64(&self) -> Instance<f64> {
        self.map(|x| x.to_f64())
    }
}

impl Instance<f64> {
    /// Exact rational copy; every f64 is converted without rounding.
    pub fn to_exact(&self) -> Instance<BigRational> {
        self.map(|&x| BigRational::from_f64(x))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&InstanceJson::from(self)).expect("instance serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: InstanceJson = serde_json::from_str(s)?;
        if raw.n != raw.values.len() {
            return Err(Error::InvalidInstance(format!("n = {} but {} values given", raw.n, raw.values.len())));
        }
        let inst = Instance { values: raw.values, probs: raw.probs, k: raw.k, horizon: raw.t, flavor: raw.flavor };
        validate_instance(&inst).map_err(|v| Error::InvalidInstance(v.to_string()))?;
        Ok(inst)
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceJson {
    n: usize,
    values: Vec<f64>,
    probs: Vec<f64>,
    k: usize,
    #[serde(rename = "T")]
    t: usize,
    flavor: Flavor,
}

impl From<&Instance<f64>> for InstanceJson {
    fn from(inst: &Instance<f64>) -> Self {
        InstanceJson {
            n: inst.n(),
            values: inst.values.clone(),
            probs: inst.probs.clone(),
            k: inst.k,
            t: inst.horizon,
            flavor: inst.flavor,
        }
    }
}

/// Returns the first violated invariant.
pub fn validate_instance<S: Scalar>(inst: &Instance<S>) -> std::result::Result<(), InstanceViolation> {
    if inst.values.len() != inst.probs.len() {
        return Err(InstanceViolation::LengthMismatch { values: inst.values.len(), probs: inst.probs.len() });
    }
    if inst.values.is_empty() {
        return Err(InstanceViolation::Empty);
    }
    for i in 0..inst.n() {
        if inst.values[i] < S::zero() {
            return Err(InstanceViolation::NegativeValue(i));
        }
        let p = &inst.probs[i];
        if !(*p >= S::zero() && *p <= S::one()) {
            return Err(InstanceViolation::ProbOutOfRange(i));
        }
    }
    if inst.k < 1 {
        return Err(InstanceViolation::NoPositions);
    }
    if inst.k > inst.n() {
        return Err(InstanceViolation::TooManyPositions { k: inst.k, n: inst.n() });
    }
    if inst.horizon < 1 {
        return Err(InstanceViolation::NoStages);
    }
    Ok(())
}

/// The three-applicant pool used throughout the docs and tests
/// (0-based ids: applicant 0 has v = 1, p = 0.5).
pub fn worked_example() -> Instance<f64> {
    Instance::new(vec![1.0, 2.0, 3.0], vec![0.5, 1.0, 1.0], 2, 2).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example_is_valid() {
        assert_eq!(validate_instance(&worked_example()), Ok(()));
    }

    #[test]
    fn range_violations() {
        let bad_p = Instance { values: vec![1.0], probs: vec![1.5], k: 1, horizon: 1, flavor: Flavor::Original };
        assert_eq!(validate_instance(&bad_p), Err(InstanceViolation::ProbOutOfRange(0)));
        assert!(validate_instance(&bad_p).unwrap_err().to_string().contains("prob out of range"));
        let bad_v = Instance { values: vec![-1.0], probs: vec![0.5], k: 1, horizon: 1, flavor: Flavor::Original };
        assert!(validate_instance(&bad_v).unwrap_err().to_string().contains("negative value"));
        let nan = Instance { values: vec![1.0], probs: vec![f64::NAN], k: 1, horizon: 1, flavor: Flavor::Original };
        assert!(validate_instance(&nan).is_err());
    }

    #[test]
    fn json_round_trip() {
        let inst = worked_example();
        let s = inst.to_json();
        assert!(s.contains("\"T\": 2"));
        assert!(s.contains("\"original\""));
        assert_eq!(Instance::from_json(&s).unwrap(), inst);
    }

    #[test]
    fn value_order_breaks_ties_by_id() {
        let inst = Instance::new(vec![2.0, 3.0, 2.0], vec![1.0; 3], 1, 1).unwrap();
        assert_eq!(inst.by_value(), vec![1, 0, 2]);
    }
}
