//! Finitely supported distributions over actions.

use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::ids::ActionId;
use crate::num::{sum, Prob};

/// A probability distribution over actions, stored sparsely.
///
/// Entries are sorted by action and carry strictly positive mass.
#[derive(Clone, Debug, PartialEq)]
pub struct Dist<T> {
    entries: Vec<(ActionId, T)>,
}

/// Identity of a distribution: exact in rational mode, bucketed to 1e-9 for floats.
pub type DistKey<T> = Vec<(ActionId, <T as Prob>::Key)>;

impl<T: Prob> Dist<T> {
    /// Validating constructor. Duplicate actions are merged, zero entries dropped.
    pub fn new(entries: impl IntoIterator<Item = (ActionId, T)>) -> Result<Self> {
        let mut raw: Vec<(ActionId, T)> = entries.into_iter().collect();
        raw.sort_by_key(|(a, _)| *a);
        let mut merged: Vec<(ActionId, T)> = Vec::with_capacity(raw.len());
        for (a, p) in raw {
            if p < T::zero() || p > T::one() + T::eps() {
                return Err(Error::invalid(alloc::format!("probability {p} out of range")));
            }
            match merged.last_mut() {
                Some((last, q)) if *last == a => *q = q.clone() + p,
                _ => merged.push((a, p)),
            }
        }
        let total = sum(merged.iter().map(|(_, p)| p.clone()));
        if !total.close_to(&T::one(), &T::eps()) {
            return Err(Error::invalid(alloc::format!("distribution sums to {total}")));
        }
        merged.retain(|(_, p)| *p > T::zero());
        if merged.is_empty() {
            return Err(Error::invalid("distribution has empty support"));
        }
        Ok(Dist { entries: merged })
    }

    pub fn dirac(a: ActionId) -> Self {
        Dist { entries: alloc::vec![(a, T::one())] }
    }

    /// Uniform over a non-empty action set.
    pub fn uniform(actions: &[ActionId]) -> Result<Self> {
        let mut set = actions.to_vec();
        set.sort();
        set.dedup();
        if set.is_empty() {
            return Err(Error::invalid("uniform distribution over an empty set"));
        }
        let n = set.len() as i64;
        Ok(Dist { entries: set.into_iter().map(|a| (a, T::from_ratio(1, n))).collect() })
    }

    /// `[(a, p)]` given as integer ratios; panics on invalid input. Handy in tests and fixtures.
    pub fn from_ratios(entries: &[(ActionId, i64, i64)]) -> Self {
        Dist::new(entries.iter().map(|&(a, n, d)| (a, T::from_ratio(n, d))))
            .expect("valid distribution")
    }

    pub fn prob(&self, a: ActionId) -> T {
        match self.entries.binary_search_by_key(&a, |(b, _)| *b) {
            Ok(i) => self.entries[i].1.clone(),
            Err(_) => T::zero(),
        }
    }

    pub fn entries(&self) -> &[(ActionId, T)] {
        &self.entries
    }

    pub fn support(&self) -> impl Iterator<Item = ActionId> + '_ {
        self.entries.iter().map(|(a, _)| *a)
    }

    pub fn contains(&self, a: ActionId) -> bool {
        self.entries.binary_search_by_key(&a, |(b, _)| *b).is_ok()
    }

    /// `Supp(self) ⊆ set`; `set` must be sorted.
    pub fn supported_within(&self, set: &[ActionId]) -> bool {
        self.support().all(|a| set.binary_search(&a).is_ok())
    }

    pub fn is_dirac(&self) -> bool {
        self.entries.len() == 1
    }

    /// `d|_X`: renormalize on `X`, or uniform over `X` when `X` misses the support.
    pub fn restrict(&self, set: &[ActionId]) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::invalid("restriction to an empty action set"));
        }
        let kept: Vec<(ActionId, T)> = self
            .entries
            .iter()
            .filter(|(a, _)| set.contains(a))
            .cloned()
            .collect();
        if kept.is_empty() {
            return Dist::uniform(set);
        }
        if kept.len() == self.entries.len() {
            return Ok(self.clone());
        }
        let mass = sum(kept.iter().map(|(_, p)| p.clone()));
        Ok(Dist { entries: kept.into_iter().map(|(a, p)| (a, p / mass.clone())).collect() })
    }

    pub fn key(&self) -> DistKey<T> {
        self.entries.iter().map(|(a, p)| (*a, p.key())).collect()
    }

    /// Equality under the mode's distribution identity.
    pub fn same_as(&self, other: &Self) -> bool {
        if T::EXACT {
            self == other
        } else {
            self.key() == other.key()
        }
    }

    /// Convert between numeric types through `f64` (exact → float) or exact expansion.
    pub fn convert<U: Prob>(&self) -> Dist<U> {
        let probs: Vec<f64> = self.entries.iter().map(|(_, p)| p.to_f64()).collect();
        let converted = U::probs_from_weights(&probs);
        Dist {
            entries: self
                .entries
                .iter()
                .zip(converted)
                .map(|((a, _), p)| (*a, p))
                .filter(|(_, p)| *p > U::zero())
                .collect(),
        }
    }
}

impl<T: Prob> fmt::Display for Dist<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (a, p)) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{}:{}", a, p.render())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::Rational;

    const A: ActionId = ActionId(0);
    const B: ActionId = ActionId(1);
    const C: ActionId = ActionId(2);

    fn d(entries: &[(ActionId, i64, i64)]) -> Dist<Rational> {
        Dist::from_ratios(entries)
    }

    #[test]
    fn restrict_renormalizes() {
        let x = d(&[(A, 2, 10), (B, 3, 10), (C, 5, 10)]);
        assert_eq!(x.restrict(&[A, B]).unwrap(), d(&[(A, 2, 5), (B, 3, 5)]));
        let y = d(&[(A, 1, 2), (B, 1, 2)]);
        assert_eq!(y.restrict(&[A]).unwrap(), Dist::dirac(A));
    }

    #[test]
    fn restrict_outside_support_is_uniform() {
        let x: Dist<Rational> = Dist::dirac(A);
        assert_eq!(x.restrict(&[B, C]).unwrap(), d(&[(B, 1, 2), (C, 1, 2)]));
    }

    #[test]
    fn restrict_to_empty_set_fails() {
        let x: Dist<Rational> = Dist::dirac(A);
        assert!(matches!(x.restrict(&[]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn rejects_bad_sums_and_empty_support() {
        assert!(Dist::new([(A, Rational::from_ratio(9, 10))]).is_err());
        assert!(Dist::<Rational>::new([]).is_err());
        assert!(Dist::new([(A, Rational::from_ratio(3, 2)), (B, Rational::from_ratio(-1, 2))]).is_err());
    }

    #[test]
    fn merges_and_drops_zeros() {
        let x = Dist::new([(B, 0.5f64), (A, 0.25), (B, 0.25), (C, 0.0)]).unwrap();
        assert_eq!(x.entries(), &[(A, 0.25), (B, 0.75)]);
    }

    #[test]
    fn float_identity_is_bucketed() {
        let x = Dist::new([(A, 0.3f64), (B, 0.7)]).unwrap();
        let y = Dist::new([(A, 0.3 + 1e-12), (B, 0.7 - 1e-12)]).unwrap();
        assert!(x.same_as(&y));
        assert_ne!(x, y);
    }
}
