//! Boolean predicates and total-valuation states.
//!
//! A state is a total assignment over the domain's predicate set, stored as a
//! packed bit vector so search frontiers and visited sets stay cheap.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Index of a predicate within its [`PredicateTable`].
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PredicateId(pub u16);

impl fmt::Debug for PredicateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}", self.0)
    }
}

/// Interned predicate names, unique within a domain.
#[derive(Clone, Debug, Default)]
pub struct PredicateTable {
    names: Vec<String>,
    index: HashMap<String, PredicateId>,
}

impl PredicateTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Interns `name`, returning its id. Re-interning an existing name returns
    /// the original id.
    pub fn intern(&mut self, name: &str) -> PredicateId {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = PredicateId(self.names.len() as u16);
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn lookup(&self, name: &str) -> Option<PredicateId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: PredicateId) -> &str {
        &self.names[id.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PredicateId, &str)> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (PredicateId(i as u16), n.as_str()))
    }
}

/// Total boolean valuation over a predicate table, packed 64 predicates per
/// word. Equality and hashing are structural.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct State {
    width: u16,
    bits: Box<[u64]>,
}

impl State {
    /// All-false valuation over `width` predicates (closed world default).
    pub fn all_false(width: usize) -> Self {
        let words = width.div_ceil(64).max(1);
        State {
            width: width as u16,
            bits: vec![0u64; words].into_boxed_slice(),
        }
    }

    pub fn width(&self) -> usize {
        self.width as usize
    }

    pub fn get(&self, id: PredicateId) -> bool {
        let i = id.0 as usize;
        debug_assert!(i < self.width as usize);
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, id: PredicateId, value: bool) {
        let i = id.0 as usize;
        debug_assert!(i < self.width as usize);
        if value {
            self.bits[i / 64] |= 1u64 << (i % 64);
        } else {
            self.bits[i / 64] &= !(1u64 << (i % 64));
        }
    }

    /// Predicates currently true, in id order.
    pub fn true_predicates(&self) -> impl Iterator<Item = PredicateId> + '_ {
        (0..self.width).map(PredicateId).filter(|&id| self.get(id))
    }

    /// Stable 64-bit digest (FNV-1a over the packed words). Stable across
    /// processes, unlike the std hasher.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for &w in self.bits.iter() {
            for b in w.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}

impl fmt::Debug for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let trues: Vec<String> = self.true_predicates().map(|id| format!("q{}", id.0)).collect();
        write!(f, "State{{{}}}", trues.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intern_is_idempotent() {
        let mut t = PredicateTable::new();
        let a = t.intern("p");
        let b = t.intern("q");
        assert_ne!(a, b);
        assert_eq!(t.intern("p"), a);
        assert_eq!(t.len(), 2);
        assert_eq!(t.name(b), "q");
    }

    #[test]
    fn set_get_roundtrip_across_word_boundary() {
        let mut s = State::all_false(130);
        for i in [0u16, 63, 64, 127, 128, 129] {
            assert!(!s.get(PredicateId(i)));
            s.set(PredicateId(i), true);
            assert!(s.get(PredicateId(i)));
        }
        s.set(PredicateId(64), false);
        assert!(!s.get(PredicateId(64)));
        assert_eq!(s.true_predicates().count(), 5);
    }

    #[test]
    fn digest_is_structural() {
        let mut a = State::all_false(70);
        let mut b = State::all_false(70);
        a.set(PredicateId(65), true);
        b.set(PredicateId(65), true);
        assert_eq!(a.digest(), b.digest());
        b.set(PredicateId(0), true);
        assert_ne!(a.digest(), b.digest());
    }
}
