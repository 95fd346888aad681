//! Histories: paths annotated with the executed choice at every step.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use crate::dist::Dist;
use crate::error::{Error, Result};
use crate::ids::{ActionId, StateId};
use crate::mdp::Mdp;
use crate::num::Prob;

/// One step `d·α·s'` of a history.
#[derive(Clone, Debug, PartialEq)]
pub struct Step<T> {
    pub choice: Dist<T>,
    pub action: ActionId,
    pub next: StateId,
}

/// `s0 d1 α1 s1 … dt αt st`.
#[derive(Clone, Debug, PartialEq)]
pub struct History<T> {
    start: StateId,
    steps: Vec<Step<T>>,
}

/// Borrowed prefix of a history.
#[derive(Clone, Copy, Debug)]
pub struct HistoryRef<'h, T> {
    pub start: StateId,
    pub steps: &'h [Step<T>],
}

/// The underlying path `s0 α1 s1 … αt st` of a history.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Path {
    pub start: StateId,
    pub steps: Vec<(ActionId, StateId)>,
}

impl<T: Prob> History<T> {
    pub fn new(start: StateId) -> Self {
        History { start, steps: Vec::new() }
    }

    pub fn from_steps(start: StateId, steps: Vec<Step<T>>) -> Self {
        History { start, steps }
    }

    /// Appends without validation; see [`History::validate`].
    pub fn push(&mut self, choice: Dist<T>, action: ActionId, next: StateId) {
        self.steps.push(Step { choice, action, next });
    }

    pub fn extended(&self, choice: Dist<T>, action: ActionId, next: StateId) -> Self {
        let mut h = self.clone();
        h.push(choice, action, next);
        h
    }

    pub fn start(&self) -> StateId {
        self.start
    }

    pub fn steps(&self) -> &[Step<T>] {
        &self.steps
    }

    /// Number of steps `t`.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last(&self) -> StateId {
        self.steps.last().map_or(self.start, |s| s.next)
    }

    /// `s_k` for `0 ≤ k ≤ t`.
    pub fn state_at(&self, k: usize) -> StateId {
        if k == 0 {
            self.start
        } else {
            self.steps[k - 1].next
        }
    }

    pub fn path(&self) -> Path {
        Path { start: self.start, steps: self.steps.iter().map(|s| (s.action, s.next)).collect() }
    }

    /// The `k`-th choice `d_k`, `1 ≤ k ≤ t`.
    pub fn choice_at(&self, k: usize) -> Result<&Dist<T>> {
        if k == 0 || k > self.steps.len() {
            return Err(Error::invalid(format!(
                "choice index {k} outside 1..={}",
                self.steps.len()
            )));
        }
        Ok(&self.steps[k - 1].choice)
    }

    /// `h|_k`, `0 ≤ k ≤ t`.
    pub fn prefix(&self, k: usize) -> Result<History<T>> {
        if k > self.steps.len() {
            return Err(Error::invalid(format!("prefix length {k} exceeds {}", self.steps.len())));
        }
        Ok(History { start: self.start, steps: self.steps[..k].to_vec() })
    }

    pub fn as_ref(&self) -> HistoryRef<'_, T> {
        HistoryRef { start: self.start, steps: &self.steps }
    }

    pub fn prefix_ref(&self, k: usize) -> HistoryRef<'_, T> {
        HistoryRef { start: self.start, steps: &self.steps[..k] }
    }

    /// `Pr(h|_k) = Π_{j≤k} d_j(α_j)·P(s_{j-1}, α_j, s_j)`.
    pub fn path_probability(&self, m: &Mdp<T>, k: usize) -> Result<T> {
        if k > self.steps.len() {
            return Err(Error::invalid(format!("prefix length {k} exceeds {}", self.steps.len())));
        }
        let mut p = T::one();
        let mut s = self.start;
        for step in &self.steps[..k] {
            p = p * step.choice.prob(step.action) * m.prob(s, step.action, step.next);
            s = step.next;
        }
        Ok(p)
    }

    /// Path validity and `Supp(d_k) ⊆ Act(s_{k-1})`.
    pub fn validate(&self, m: &Mdp<T>) -> Result<()> {
        self.as_ref().validate(m)
    }

    /// Every sampled action lies in the support of its choice.
    pub fn has_positive_probability(&self, m: &Mdp<T>) -> bool {
        self.path_probability(m, self.len()).map(|p| p > T::zero()).unwrap_or(false)
    }

    /// `self` is `prev` extended by exactly one step.
    pub fn extends_by_one(&self, prev: &History<T>) -> bool {
        self.start == prev.start
            && self.steps.len() == prev.steps.len() + 1
            && self.steps[..prev.steps.len()]
                .iter()
                .zip(&prev.steps)
                .all(|(a, b)| a.action == b.action && a.next == b.next && a.choice.same_as(&b.choice))
    }
}

impl<'h, T: Prob> HistoryRef<'h, T> {
    pub fn last(&self) -> StateId {
        self.steps.last().map_or(self.start, |s| s.next)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn to_owned(&self) -> History<T> {
        History { start: self.start, steps: self.steps.to_vec() }
    }

    pub fn validate(&self, m: &Mdp<T>) -> Result<()> {
        if self.start.idx() >= m.num_states() {
            return Err(Error::invalid("history starts outside the state space"));
        }
        let mut s = self.start;
        for (k, step) in self.steps.iter().enumerate() {
            m.check_choice(s, &step.choice)?;
            if step.next.idx() >= m.num_states() || m.prob(s, step.action, step.next) <= T::zero() {
                return Err(Error::invalid(format!(
                    "step {} ({} -{}-> {}) has zero probability",
                    k + 1,
                    m.state_name(s),
                    m.action_name(step.action),
                    step.next.0
                )));
            }
            s = step.next;
        }
        Ok(())
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.start)?;
        for (a, s) in &self.steps {
            write!(f, ",{a},{s}")?;
        }
        Ok(())
    }
}

impl Path {
    pub fn new(start: StateId) -> Self {
        Path { start, steps: Vec::new() }
    }

    pub fn last(&self) -> StateId {
        self.steps.last().map_or(self.start, |(_, s)| *s)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn extended(&self, a: ActionId, s: StateId) -> Path {
        let mut p = self.clone();
        p.steps.push((a, s));
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::num::Rational;

    #[test]
    fn accessors_follow_definitions() {
        let fork = fixtures::fork::<Rational>();
        let (eps, s0, s1) = (fixtures::FORK_EPS, fork.initial(), StateId(1));
        let mut h = History::new(s0);
        h.push(Dist::dirac(eps), eps, s1);
        assert_eq!(h.last(), s1);
        assert_eq!(h.path().steps, alloc::vec![(eps, s1)]);
        assert_eq!(h.choice_at(1).unwrap(), &Dist::dirac(eps));
        assert!(h.choice_at(0).is_err());
        assert!(h.choice_at(2).is_err());
        assert_eq!(h.prefix(0).unwrap(), History::new(s0));
        assert!(h.prefix(2).is_err());
        assert_eq!(h.path_probability(&fork, 0).unwrap(), Rational::from_ratio(1, 1));
        assert_eq!(h.path_probability(&fork, 1).unwrap(), Rational::from_ratio(1, 2));
        h.validate(&fork).unwrap();
    }

    #[test]
    fn invalid_steps_are_reported() {
        let fork = fixtures::fork::<Rational>();
        let mut h = History::new(fork.initial());
        h.push(Dist::dirac(fixtures::FORK_EPS), fixtures::FORK_EPS, StateId(3));
        assert!(h.validate(&fork).is_err());
        let mut g = History::new(fork.initial());
        g.push(Dist::dirac(fixtures::FORK_ALPHA), fixtures::FORK_EPS, StateId(1));
        assert!(g.validate(&fork).is_err());
    }
}
