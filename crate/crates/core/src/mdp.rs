//! Markov decision processes with a global action set and per-state availability.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::dist::Dist;
use crate::error::{Error, Result};
use crate::ids::{ActionId, StateId};
use crate::num::{sum, Prob};

/// One available action at a state: its successor distribution and expected reward.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition<T> {
    pub action: ActionId,
    /// Sorted by state, strictly positive probabilities.
    pub succ: Vec<(StateId, T)>,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mdp<T> {
    num_actions: usize,
    initial: StateId,
    bad: Vec<bool>,
    rows: Vec<Vec<Transition<T>>>,
    has_rewards: bool,
    state_names: Vec<Option<String>>,
    action_names: Vec<Option<String>>,
}

impl<T: Prob> Mdp<T> {
    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.rows.len() as u32).map(StateId)
    }

    pub fn is_bad(&self, s: StateId) -> bool {
        self.bad[s.idx()]
    }

    pub fn bad_states(&self) -> Vec<StateId> {
        self.states().filter(|&s| self.is_bad(s)).collect()
    }

    pub fn transitions(&self, s: StateId) -> &[Transition<T>] {
        &self.rows[s.idx()]
    }

    /// Available actions at `s`, sorted.
    pub fn actions(&self, s: StateId) -> Vec<ActionId> {
        self.rows[s.idx()].iter().map(|t| t.action).collect()
    }

    pub fn transition(&self, s: StateId, a: ActionId) -> Option<&Transition<T>> {
        let row = &self.rows[s.idx()];
        row.binary_search_by_key(&a, |t| t.action).ok().map(|i| &row[i])
    }

    pub fn has_action(&self, s: StateId, a: ActionId) -> bool {
        self.transition(s, a).is_some()
    }

    pub fn successors(&self, s: StateId, a: ActionId) -> Option<&[(StateId, T)]> {
        self.transition(s, a).map(|t| t.succ.as_slice())
    }

    /// `P(s, a, s')`, zero for unavailable actions.
    pub fn prob(&self, s: StateId, a: ActionId, next: StateId) -> T {
        self.successors(s, a)
            .and_then(|succ| {
                succ.binary_search_by_key(&next, |(t, _)| *t).ok().map(|i| succ[i].1.clone())
            })
            .unwrap_or_else(T::zero)
    }

    /// Every action loops back to `s` with probability one.
    pub fn is_absorbing(&self, s: StateId) -> bool {
        self.rows[s.idx()]
            .iter()
            .all(|t| t.succ.len() == 1 && t.succ[0].0 == s)
    }

    pub fn has_rewards(&self) -> bool {
        self.has_rewards
    }

    /// Marks the reward table as present; unset rewards read as zero.
    pub fn with_rewards(mut self) -> Self {
        self.has_rewards = true;
        self
    }

    pub fn reward(&self, s: StateId, a: ActionId) -> Option<f64> {
        if !self.has_rewards {
            return None;
        }
        self.transition(s, a).map(|t| t.reward)
    }

    pub fn state_label(&self, s: StateId) -> Option<&str> {
        self.state_names.get(s.idx()).and_then(|n| n.as_deref())
    }

    pub fn action_label(&self, a: ActionId) -> Option<&str> {
        self.action_names.get(a.idx()).and_then(|n| n.as_deref())
    }

    pub fn state_name(&self, s: StateId) -> String {
        self.state_label(s).map(String::from).unwrap_or_else(|| format!("s{}", s.0))
    }

    pub fn action_name(&self, a: ActionId) -> String {
        self.action_label(a).map(String::from).unwrap_or_else(|| format!("a{}", a.0))
    }

    pub fn find_state(&self, name: &str) -> Option<StateId> {
        self.states().find(|&s| self.state_label(s) == Some(name))
    }

    pub fn find_action(&self, name: &str) -> Option<ActionId> {
        (0..self.num_actions as u32)
            .map(ActionId)
            .find(|&a| self.action_label(a) == Some(name))
    }

    /// Checks `Supp(d) ⊆ Act(s)`.
    pub fn check_choice(&self, s: StateId, d: &Dist<T>) -> Result<()> {
        match d.support().find(|&a| !self.has_action(s, a)) {
            Some(a) => Err(Error::invalid(format!(
                "action {} is not available at state {}",
                self.action_name(a),
                self.state_name(s)
            ))),
            None => Ok(()),
        }
    }

    /// Same model with another number type (rows are renormalized after conversion).
    pub fn convert<U: Prob>(&self) -> Mdp<U> {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|t| {
                        let w: Vec<f64> = t.succ.iter().map(|(_, p)| p.to_f64()).collect();
                        let probs = U::probs_from_weights(&w);
                        Transition {
                            action: t.action,
                            succ: t.succ.iter().zip(probs).map(|((s, _), p)| (*s, p)).collect(),
                            reward: t.reward,
                        }
                    })
                    .collect()
            })
            .collect();
        Mdp {
            num_actions: self.num_actions,
            initial: self.initial,
            bad: self.bad.clone(),
            rows,
            has_rewards: self.has_rewards,
            state_names: self.state_names.clone(),
            action_names: self.action_names.clone(),
        }
    }
}

/// Incremental construction with validation in [`MdpBuilder::build`].
#[derive(Clone, Debug)]
pub struct MdpBuilder<T> {
    num_actions: usize,
    initial: Option<StateId>,
    bad: Vec<bool>,
    rows: Vec<Vec<Transition<T>>>,
    has_rewards: bool,
    state_names: Vec<Option<String>>,
    action_names: Vec<Option<String>>,
}

impl<T: Prob> MdpBuilder<T> {
    pub fn new(num_states: usize, num_actions: usize) -> Self {
        MdpBuilder {
            num_actions,
            initial: None,
            bad: alloc::vec![false; num_states],
            rows: alloc::vec![Vec::new(); num_states],
            has_rewards: false,
            state_names: alloc::vec![None; num_states],
            action_names: alloc::vec![None; num_actions],
        }
    }

    fn check_state(&self, s: StateId) -> Result<()> {
        if s.idx() < self.rows.len() {
            Ok(())
        } else {
            Err(Error::invalid(format!("state {} out of range", s.0)))
        }
    }

    fn check_action(&self, a: ActionId) -> Result<()> {
        if a.idx() < self.num_actions {
            Ok(())
        } else {
            Err(Error::invalid(format!("action {} out of range", a.0)))
        }
    }

    pub fn initial(&mut self, s: StateId) -> Result<&mut Self> {
        self.check_state(s)?;
        self.initial = Some(s);
        Ok(self)
    }

    pub fn bad(&mut self, s: StateId) -> Result<&mut Self> {
        self.check_state(s)?;
        self.bad[s.idx()] = true;
        Ok(self)
    }

    pub fn state_name(&mut self, s: StateId, name: impl Into<String>) -> Result<&mut Self> {
        self.check_state(s)?;
        self.state_names[s.idx()] = Some(name.into());
        Ok(self)
    }

    pub fn action_name(&mut self, a: ActionId, name: impl Into<String>) -> Result<&mut Self> {
        self.check_action(a)?;
        self.action_names[a.idx()] = Some(name.into());
        Ok(self)
    }

    /// Adds `t s a succ...`; rejects duplicates, dangling ids and non-normalized rows.
    pub fn transition(
        &mut self,
        s: StateId,
        a: ActionId,
        succ: impl IntoIterator<Item = (StateId, T)>,
    ) -> Result<&mut Self> {
        self.check_state(s)?;
        self.check_action(a)?;
        let mut entries: Vec<(StateId, T)> = succ.into_iter().collect();
        entries.sort_by_key(|(t, _)| *t);
        let mut merged: Vec<(StateId, T)> = Vec::with_capacity(entries.len());
        for (t, p) in entries {
            self.check_state(t)?;
            if p < T::zero() || p > T::one() + T::eps() {
                return Err(Error::invalid(format!("probability {p} out of range")));
            }
            match merged.last_mut() {
                Some((last, q)) if *last == t => *q = q.clone() + p,
                _ => merged.push((t, p)),
            }
        }
        let total = sum(merged.iter().map(|(_, p)| p.clone()));
        if !total.close_to(&T::one(), &T::eps()) {
            return Err(Error::invalid(format!(
                "transition ({}, {}) sums to {total}, not 1",
                s.0, a.0
            )));
        }
        merged.retain(|(_, p)| *p > T::zero());
        let row = &mut self.rows[s.idx()];
        match row.binary_search_by_key(&a, |t| t.action) {
            Ok(_) => Err(Error::invalid(format!("duplicate transition ({}, {})", s.0, a.0))),
            Err(pos) => {
                row.insert(pos, Transition { action: a, succ: merged, reward: 0.0 });
                Ok(self)
            }
        }
    }

    /// Sets the reward of an existing transition.
    pub fn reward(&mut self, s: StateId, a: ActionId, reward: f64) -> Result<&mut Self> {
        self.check_state(s)?;
        self.check_action(a)?;
        let row = &mut self.rows[s.idx()];
        let i = row
            .binary_search_by_key(&a, |t| t.action)
            .map_err(|_| Error::invalid(format!("reward for missing transition ({}, {})", s.0, a.0)))?;
        row[i].reward = reward;
        self.has_rewards = true;
        Ok(self)
    }

    /// Marks the model as carrying rewards even if they are all zero.
    pub fn enable_rewards(&mut self) -> &mut Self {
        self.has_rewards = true;
        self
    }

    pub fn build(self) -> Result<Mdp<T>> {
        let initial = self.initial.ok_or_else(|| Error::invalid("missing initial state"))?;
        if let Some(s) = self.rows.iter().position(|r| r.is_empty()) {
            return Err(Error::invalid(format!("state {s} has no available action")));
        }
        Ok(Mdp {
            num_actions: self.num_actions,
            initial,
            bad: self.bad,
            rows: self.rows,
            has_rewards: self.has_rewards,
            state_names: self.state_names,
            action_names: self.action_names,
        })
    }
}
