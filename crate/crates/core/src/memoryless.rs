//! Memoryless constructed shields: allowed choices per state, certified by a
//! max-reachability query on the choice-induced MDP.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::dist::Dist;
use crate::error::Result;
use crate::history::History;
use crate::ids::{ActionId, StateId};
use crate::lp::convex_member;
use crate::mdp::{Mdp, MdpBuilder};
use crate::num::Prob;
use crate::shields::{MarkovShield, Shield, ShieldDecision};
use crate::valuation::{reach_values, Analysis, Objective};

#[derive(Clone, Debug)]
pub struct MemorylessShield<T: Prob> {
    analysis: Arc<Analysis<T>>,
    nu: T,
    convex: bool,
    allowed: Vec<Vec<Dist<T>>>,
    // values only grow, so a rejected pair stays rejected
    rejected: Vec<Vec<(Dist<T>, T)>>,
    value: T,
}

impl<T: Prob> MemorylessShield<T> {
    pub fn new(analysis: Arc<Analysis<T>>, nu: T, convex: bool) -> Result<Self> {
        analysis.check_threshold(&nu)?;
        let n = analysis.model().num_states();
        let value = analysis.vmin(analysis.model().initial()).clone();
        Ok(MemorylessShield { analysis, nu, convex, allowed: alloc::vec![Vec::new(); n], rejected: alloc::vec![Vec::new(); n], value })
    }

    /// Loads an allowed table and recomputes the value.
    pub fn from_allowed(analysis: Arc<Analysis<T>>, nu: T, convex: bool, allowed: Vec<Vec<Dist<T>>>) -> Result<Self> {
        let mut ml = Self::new(analysis, nu, convex)?;
        for (s, ds) in allowed.iter().enumerate() {
            for d in ds {
                ml.analysis.model().check_choice(StateId(s as u32), d)?;
            }
        }
        ml.allowed = allowed;
        ml.value = ml.compute_value(&ml.allowed)?;
        Ok(ml)
    }

    pub fn allowed(&self, s: StateId) -> &[Dist<T>] {
        &self.allowed[s.idx()]
    }

    pub fn nu(&self) -> &T {
        &self.nu
    }

    pub fn convex(&self) -> bool {
        self.convex
    }

    /// Worst-case reach-Bad probability over policies picking allowed or safe choices.
    pub fn value(&self) -> T {
        self.value.clone()
    }

    pub fn is_safe(&self) -> bool {
        self.safe_value(&self.value)
    }

    fn safe_value(&self, value: &T) -> bool {
        let floor = self.analysis.vmin(self.analysis.model().initial());
        *value <= *floor || *value <= self.nu
    }

    /// The derived MDP: Dirac safe actions keep their ids, allowed choice `k`
    /// becomes action `num_actions + k`.
    pub fn induced_model(&self, allowed: &[Vec<Dist<T>>]) -> Result<Mdp<T>> {
        let m = self.analysis.model();
        let extra: usize = allowed.iter().map(Vec::len).sum();
        let mut b = MdpBuilder::new(m.num_states(), m.num_actions() + extra);
        b.initial(m.initial())?;
        for s in m.bad_states() {
            b.bad(s)?;
        }
        let mut next_id = m.num_actions() as u32;
        for s in m.states() {
            for &a in self.analysis.safe(s) {
                b.transition(s, a, m.successors(s, a).expect("safe action").iter().cloned())?;
            }
            for d in &allowed[s.idx()] {
                let mut succ: Vec<(StateId, T)> = Vec::new();
                for (a, w) in d.entries() {
                    for (t, p) in m.successors(s, *a).expect("validated") {
                        succ.push((*t, w.clone() * p.clone()));
                    }
                }
                b.transition(s, ActionId(next_id), succ)?;
                next_id += 1;
            }
        }
        b.build()
    }

    fn compute_value(&self, allowed: &[Vec<Dist<T>>]) -> Result<T> {
        let derived = self.induced_model(allowed)?;
        let v = reach_values(&derived, Objective::Max)?;
        Ok(v.decision(derived.initial()).clone())
    }

    /// Value the shield would have with `d` added at `s`.
    pub fn tentative_value(&self, s: StateId, d: &Dist<T>) -> Result<T> {
        self.analysis.model().check_choice(s, d)?;
        if self.contains(s, d) {
            return Ok(self.value.clone());
        }
        let mut allowed = self.allowed.clone();
        allowed[s.idx()].push(d.clone());
        self.compute_value(&allowed)
    }

    fn contains(&self, s: StateId, d: &Dist<T>) -> bool {
        self.allowed[s.idx()].iter().any(|x| x.same_as(d))
    }

    /// Adds `d` at `s` iff the result stays safe; returns whether it was accepted and the tentative value.
    pub fn extend(&mut self, s: StateId, d: &Dist<T>) -> Result<(bool, T)> {
        if let Some((_, v)) = self.rejected[s.idx()].iter().find(|(x, _)| x.same_as(d)) {
            return Ok((false, v.clone()));
        }
        let value = self.tentative_value(s, d)?;
        if self.contains(s, d) {
            return Ok((true, value));
        }
        if self.safe_value(&value) {
            self.allowed[s.idx()].push(d.clone());
            self.value = value.clone();
            return Ok((true, value));
        }
        self.rejected[s.idx()].push((d.clone(), value.clone()));
        Ok((false, value))
    }

    fn decide_state(&self, s: StateId, d: &Dist<T>) -> Result<ShieldDecision<T>> {
        self.analysis.model().check_choice(s, d)?;
        let listed = &self.allowed[s.idx()];
        let allowed = listed.iter().any(|x| x.same_as(d))
            || (self.convex && !listed.is_empty() && {
                let members: Vec<&Dist<T>> = listed.iter().collect();
                convex_member(d, &members, self.analysis.safe(s))
            });
        ShieldDecision::canonical(&self.analysis, s, d, allowed)
    }

    pub fn approx_bytes(&self) -> usize {
        self.allowed
            .iter()
            .flatten()
            .map(|d| core::mem::size_of_val(d.entries()) + 48)
            .sum()
    }
}

impl<T: Prob> Shield<T> for MemorylessShield<T> {
    fn name(&self) -> String {
        "ml".into()
    }
    fn decide(&mut self, h: &History<T>, d: &Dist<T>) -> Result<ShieldDecision<T>> {
        self.decide_state(h.last(), d)
    }
    fn as_markov(&self) -> Option<&dyn MarkovShield<T>> {
        Some(self)
    }
}

impl<T: Prob> MarkovShield<T> for MemorylessShield<T> {
    fn decide_at(&self, _cursor: u32, s: StateId, d: &Dist<T>) -> Result<ShieldDecision<T>> {
        self.decide_state(s, d)
    }
}
