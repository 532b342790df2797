use std::fmt;

/// Set of applicant ids stored as a bitmask; one 64-bit word covers n <= 64,
/// larger pools spill into further words.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct AppSet {
    words: Vec<u64>,
}

impl AppSet {
    pub fn empty(n: usize) -> Self {
        AppSet { words: vec![0; n.div_ceil(64).max(1)] }
    }

    pub fn full(n: usize) -> Self {
        let mut s = Self::empty(n);
        for i in 0..n {
            s.insert(i);
        }
        s
    }

    pub fn from_ids(n: usize, ids: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::empty(n);
        for i in ids {
            s.insert(i);
        }
        s
    }

    pub fn contains(&self, i: usize) -> bool {
        self.words.get(i / 64).is_some_and(|w| w >> (i % 64) & 1 == 1)
    }

    pub fn insert(&mut self, i: usize) {
        if i / 64 >= self.words.len() {
            self.words.resize(i / 64 + 1, 0);
        }
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn remove(&mut self, i: usize) {
        if let Some(w) = self.words.get_mut(i / 64) {
            *w &= !(1 << (i % 64));
        }
    }

    pub fn without(&self, i: usize) -> Self {
        let mut s = self.clone();
        s.remove(i);
        s
    }

    pub fn without_all(&self, ids: &[usize]) -> Self {
        let mut s = self.clone();
        for &i in ids {
            s.remove(i);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn is_subset(&self, other: &AppSet) -> bool {
        self.words.iter().enumerate().all(|(k, &w)| w & !other.words.get(k).copied().unwrap_or(0) == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(k, &w)| {
            (0..64).filter(move |b| w >> b & 1 == 1).map(move |b| k * 64 + b)
        })
    }

    /// Lowercase hex of the mask, most significant word first.
    pub fn to_hex(&self) -> String {
        let mut top = self.words.len();
        while top > 1 && self.words[top - 1] == 0 {
            top -= 1;
        }
        let mut s = format!("{:x}", self.words[top - 1]);
        for w in self.words[..top - 1].iter().rev() {
            s.push_str(&format!("{w:016x}"));
        }
        s
    }

    /// `None` on a non-hex digit or a bit at position `n` or above.
    pub fn from_hex(n: usize, hex: &str) -> Option<Self> {
        let hex = hex.trim_start_matches("0x");
        let mut s = Self::empty(n);
        for (pos, c) in hex.chars().rev().enumerate() {
            let d = c.to_digit(16)? as u64;
            for b in 0..4 {
                if d >> b & 1 == 1 {
                    if pos * 4 + b >= n {
                        return None;
                    }
                    s.insert(pos * 4 + b);
                }
            }
        }
        Some(s)
    }
}

impl fmt::Debug for AppSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_ops() {
        let mut s = AppSet::full(3);
        assert_eq!(s.len(), 3);
        s.remove(1);
        assert!(!s.contains(1));
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![0, 2]);
        assert!(s.is_subset(&AppSet::full(3)));
        assert!(!AppSet::full(3).is_subset(&s));
    }

    #[test]
    fn wide_sets_round_trip_through_hex() {
        let s = AppSet::from_ids(130, [0, 63, 64, 129]);
        let back = AppSet::from_hex(130, &s.to_hex()).unwrap();
        assert_eq!(s, back);
        assert_eq!(AppSet::full(3).to_hex(), "7");
        assert_eq!(AppSet::empty(3).to_hex(), "0");
    }
}
