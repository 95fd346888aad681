//! Constructed shields: joins of point shields stored in a history trie,
//! with cached shield values, safe extension and online updating.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::dist::{Dist, DistKey};
use crate::error::{Error, Result};
use crate::history::History;
use crate::ids::{ActionId, StateId};
use crate::lp::convex_member;
use crate::num::Prob;
use crate::shields::{MarkovShield, Shield, ShieldDecision};
use crate::valuation::Analysis;

pub type NodeId = u32;
pub type ChoiceId = u32;

pub const ROOT: NodeId = 0;
/// Cursor value for histories that left the trie.
pub const OFF_TRIE: u32 = u32::MAX;

/// Interned distributions, identified by [`Dist::key`].
#[derive(Clone, Debug)]
pub struct ChoiceTable<T: Prob> {
    dists: Vec<Dist<T>>,
    index: BTreeMap<DistKey<T>, ChoiceId>,
}

impl<T: Prob> ChoiceTable<T> {
    pub fn lookup(&self, d: &Dist<T>) -> Option<ChoiceId> {
        self.index.get(&d.key()).copied()
    }

    pub fn get(&self, id: ChoiceId) -> &Dist<T> {
        &self.dists[id as usize]
    }

    pub fn len(&self) -> usize {
        self.dists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dists.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ChoiceId, &Dist<T>)> {
        self.dists.iter().enumerate().map(|(i, d)| (i as ChoiceId, d))
    }

    fn intern(&mut self, d: &Dist<T>) -> (ChoiceId, bool) {
        if let Some(id) = self.lookup(d) {
            return (id, false);
        }
        let id = self.dists.len() as ChoiceId;
        self.index.insert(d.key(), id);
        self.dists.push(d.clone());
        (id, true)
    }

    fn pop(&mut self) {
        if let Some(d) = self.dists.pop() {
            self.index.remove(&d.key());
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrieNode {
    pub state: StateId,
    /// `(parent, choice, action)` leading here; `None` at the root.
    pub parent: Option<(NodeId, ChoiceId, ActionId)>,
    /// Sorted allowed choices.
    pub allowed: Vec<ChoiceId>,
}

/// Change record used to roll back a tentative insertion.
#[derive(Clone, Debug)]
pub enum Undo {
    Allowed(NodeId, ChoiceId),
    Node(NodeId),
    Choice(ChoiceId),
}

/// Prefix tree of recorded history-choice pairs (the join of their point shields).
#[derive(Clone, Debug)]
pub struct HistoryTrie<T: Prob> {
    nodes: Vec<TrieNode>,
    children: BTreeMap<(NodeId, ChoiceId, ActionId, StateId), NodeId>,
    choices: ChoiceTable<T>,
}

impl<T: Prob> HistoryTrie<T> {
    pub fn new(root_state: StateId) -> Self {
        HistoryTrie {
            nodes: alloc::vec![TrieNode { state: root_state, parent: None, allowed: Vec::new() }],
            children: BTreeMap::new(),
            choices: ChoiceTable { dists: Vec::new(), index: BTreeMap::new() },
        }
    }

    pub fn root_state(&self) -> StateId {
        self.nodes[0].state
    }

    pub fn node(&self, id: NodeId) -> &TrieNode {
        &self.nodes[id as usize]
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &TrieNode)> {
        self.nodes.iter().enumerate().map(|(i, n)| (i as NodeId, n))
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn choices(&self) -> &ChoiceTable<T> {
        &self.choices
    }

    pub fn child(&self, node: NodeId, choice: ChoiceId, action: ActionId, next: StateId) -> Option<NodeId> {
        self.children.get(&(node, choice, action, next)).copied()
    }

    pub fn is_allowed(&self, node: NodeId, choice: ChoiceId) -> bool {
        self.nodes[node as usize].allowed.binary_search(&choice).is_ok()
    }

    /// Number of `(node, allowed choice)` entries, i.e. `|J'|`.
    pub fn num_pairs(&self) -> usize {
        self.nodes.iter().map(|n| n.allowed.len()).sum()
    }

    /// Node reached by following the recorded choices of `h`.
    pub fn locate(&self, h: &History<T>) -> Option<NodeId> {
        if h.start() != self.root_state() {
            return None;
        }
        let mut node = ROOT;
        for step in h.steps() {
            let c = self.choices.lookup(&step.choice)?;
            node = self.child(node, c, step.action, step.next)?;
        }
        Some(node)
    }

    /// Adds all prefix pairs of `h·d`; returns what changed.
    pub fn insert(&mut self, h: &History<T>, d: &Dist<T>) -> Result<Vec<Undo>> {
        if h.start() != self.root_state() {
            return Err(Error::invalid("history does not start at the initial state"));
        }
        let mut log = Vec::new();
        let mut node = ROOT;
        for step in h.steps() {
            let c = self.allow(node, &step.choice, &mut log);
            let key = (node, c, step.action, step.next);
            node = match self.children.get(&key) {
                Some(&n) => n,
                None => {
                    let n = self.nodes.len() as NodeId;
                    self.nodes.push(TrieNode {
                        state: step.next,
                        parent: Some((node, c, step.action)),
                        allowed: Vec::new(),
                    });
                    self.children.insert(key, n);
                    log.push(Undo::Node(n));
                    n
                }
            };
        }
        self.allow(node, d, &mut log);
        Ok(log)
    }

    fn allow(&mut self, node: NodeId, d: &Dist<T>, log: &mut Vec<Undo>) -> ChoiceId {
        let (c, fresh) = self.choices.intern(d);
        if fresh {
            log.push(Undo::Choice(c));
        }
        let allowed = &mut self.nodes[node as usize].allowed;
        if let Err(pos) = allowed.binary_search(&c) {
            allowed.insert(pos, c);
            log.push(Undo::Allowed(node, c));
        }
        c
    }

    pub fn rollback(&mut self, log: Vec<Undo>) {
        for entry in log.into_iter().rev() {
            match entry {
                Undo::Allowed(n, c) => self.nodes[n as usize].allowed.retain(|&x| x != c),
                Undo::Node(n) => {
                    let node = self.nodes.pop().expect("rollback in creation order");
                    debug_assert_eq!(self.nodes.len() as NodeId, n);
                    let (p, c, a) = node.parent.expect("non-root");
                    self.children.remove(&(p, c, a, node.state));
                }
                Undo::Choice(_) => self.choices.pop(),
            }
        }
    }

    /// Recorded path from the root to `node` as `(choice, action, state)` steps.
    pub fn branch(&self, node: NodeId) -> Vec<(ChoiceId, ActionId, StateId)> {
        let mut steps = Vec::new();
        let mut cur = node;
        while let Some((p, c, a)) = self.nodes[cur as usize].parent {
            steps.push((c, a, self.nodes[cur as usize].state));
            cur = p;
        }
        steps.reverse();
        steps
    }

    /// History leading to `node`.
    pub fn history_of(&self, node: NodeId) -> History<T> {
        let mut h = History::new(self.root_state());
        for (c, a, s) in self.branch(node) {
            h.push(self.choices.get(c).clone(), a, s);
        }
        h
    }

    /// Order-independent content: every `(branch, allowed choice)` by distribution key.
    pub fn pairs(&self) -> BTreeSet<(Vec<(DistKey<T>, ActionId, StateId)>, DistKey<T>)> {
        let mut out = BTreeSet::new();
        for (id, node) in self.nodes() {
            let branch: Vec<_> =
                self.branch(id).into_iter().map(|(c, a, s)| (self.choices.get(c).key(), a, s)).collect();
            for &c in &node.allowed {
                out.insert((branch.clone(), self.choices.get(c).key()));
            }
        }
        out
    }

    /// Rebuilds a trie from dumped parts; nodes must come in creation order.
    pub fn from_parts(root_state: StateId, choices: Vec<Dist<T>>, nodes: Vec<TrieNode>) -> Result<Self> {
        let mut trie = HistoryTrie::new(root_state);
        for d in &choices {
            let (_, fresh) = trie.choices.intern(d);
            if !fresh {
                return Err(Error::invalid("duplicate choice in dump"));
            }
        }
        for (i, node) in nodes.into_iter().enumerate() {
            for &c in &node.allowed {
                if c as usize >= trie.choices.len() {
                    return Err(Error::invalid(format!("node {i} allows unknown choice {c}")));
                }
            }
            let mut allowed = node.allowed.clone();
            allowed.sort();
            allowed.dedup();
            if i == 0 {
                if node.parent.is_some() || node.state != root_state {
                    return Err(Error::invalid("node 0 must be the root"));
                }
                trie.nodes[0].allowed = allowed;
                continue;
            }
            let (p, c, a) = node.parent.ok_or_else(|| Error::invalid(format!("node {i} has no parent")))?;
            if p as usize >= i {
                return Err(Error::invalid(format!("node {i} precedes its parent")));
            }
            if trie.children.insert((p, c, a, node.state), i as NodeId).is_some() {
                return Err(Error::invalid(format!("node {i} duplicates a sibling")));
            }
            trie.nodes.push(TrieNode { state: node.state, parent: Some((p, c, a)), allowed });
        }
        Ok(trie)
    }
}

/// A shield built from history-choice pairs by safe extension.
#[derive(Clone, Debug)]
pub struct ConstructedShield<T: Prob> {
    analysis: Arc<Analysis<T>>,
    nu: T,
    convex: bool,
    trie: HistoryTrie<T>,
    values: Vec<T>,
    /// History of the current run and its cursor, for [`Shield`] queries.
    run: Option<(History<T>, u32)>,
}

/// Result of a tentative or committed extension.
#[derive(Clone, Debug, PartialEq)]
pub struct Extension<T> {
    pub accepted: bool,
    /// Shield value of the joined shield (committed or not).
    pub value: T,
}

impl<T: Prob> ConstructedShield<T> {
    /// The classical shield `σ_S` (empty trie).
    pub fn new(analysis: Arc<Analysis<T>>, nu: T, convex: bool) -> Result<Self> {
        analysis.check_threshold(&nu)?;
        let s0 = analysis.model().initial();
        let values = alloc::vec![analysis.vmin(s0).clone()];
        Ok(ConstructedShield { analysis, nu, convex, trie: HistoryTrie::new(s0), values, run: None })
    }

    /// Wraps a loaded trie and recomputes every node value.
    pub fn from_trie(analysis: Arc<Analysis<T>>, nu: T, convex: bool, trie: HistoryTrie<T>) -> Result<Self> {
        analysis.check_threshold(&nu)?;
        if trie.root_state() != analysis.model().initial() {
            return Err(Error::invalid("trie root is not the initial state"));
        }
        for (_, node) in trie.nodes() {
            if node.state.idx() >= analysis.model().num_states() {
                return Err(Error::invalid("trie mentions an unknown state"));
            }
            for &c in &node.allowed {
                analysis.model().check_choice(node.state, trie.choices().get(c))?;
            }
        }
        let mut shield = ConstructedShield {
            values: alloc::vec![T::zero(); trie.num_nodes()],
            analysis,
            nu,
            convex,
            trie,
            run: None,
        };
        for id in (0..shield.trie.num_nodes() as NodeId).rev() {
            shield.values[id as usize] = shield.node_value(id);
        }
        Ok(shield)
    }

    pub fn analysis(&self) -> &Arc<Analysis<T>> {
        &self.analysis
    }

    pub fn nu(&self) -> &T {
        &self.nu
    }

    pub fn convex(&self) -> bool {
        self.convex
    }

    pub fn set_convex(&mut self, convex: bool) {
        self.convex = convex;
    }

    pub fn trie(&self) -> &HistoryTrie<T> {
        &self.trie
    }

    /// `V_σ(s0)` (certified upper bound in float mode).
    pub fn value(&self) -> T {
        self.values[0].clone()
    }

    /// Cached `V_σ` at a node.
    pub fn node_value_cached(&self, node: NodeId) -> &T {
        &self.values[node as usize]
    }

    fn safe_value(&self, value: &T) -> bool {
        let floor = self.analysis.vmin(self.analysis.model().initial());
        *value <= *floor || *value <= self.nu
    }

    /// `V_σ(s0) ≤ ν`.
    pub fn is_safe(&self) -> bool {
        self.safe_value(&self.values[0])
    }

    /// `V_σ(n) = max({Q_σ(n, d) | d allowed at n} ∪ {V_min(state)})`.
    fn node_value(&self, node: NodeId) -> T {
        let n = self.trie.node(node);
        let m = self.analysis.model();
        let mut best = self.analysis.vmin(n.state).clone();
        for &c in &n.allowed {
            let d = self.trie.choices.get(c);
            let mut q = T::zero();
            for (a, w) in d.entries() {
                let succ = m.successors(n.state, *a).expect("validated choice");
                let mut inner = T::zero();
                for (next, p) in succ {
                    let v = match self.trie.child(node, c, *a, *next) {
                        Some(child) => self.values[child as usize].clone(),
                        None => self.analysis.vmin(*next).clone(),
                    };
                    inner = inner + p.clone() * v;
                }
                q = q + w.clone() * inner;
            }
            if q > best {
                best = q;
            }
        }
        best
    }

    /// Recomputes values along the branch of `h`, bottom-up; returns the old
    /// values of nodes that existed before.
    fn refresh_branch(&mut self, h: &History<T>, old_len: usize) -> Vec<(NodeId, T)> {
        self.values.resize(self.trie.num_nodes(), T::zero());
        let mut path = alloc::vec![ROOT];
        let mut node = ROOT;
        for step in h.steps() {
            let c = self.trie.choices.lookup(&step.choice).expect("inserted");
            node = self.trie.child(node, c, step.action, step.next).expect("inserted");
            path.push(node);
        }
        let mut saved = Vec::new();
        for &n in path.iter().rev() {
            let fresh = self.node_value(n);
            let old = core::mem::replace(&mut self.values[n as usize], fresh);
            if (n as usize) < old_len {
                saved.push((n, old));
            }
        }
        saved
    }

    fn check_pair(&self, h: &History<T>, d: &Dist<T>) -> Result<()> {
        let m = self.analysis.model();
        h.validate(m)?;
        if h.start() != m.initial() {
            return Err(Error::invalid("history does not start at the initial state"));
        }
        m.check_choice(h.last(), d)
    }

    /// Joins the point shield of `(h, d)` and returns the undo log plus the old values.
    fn join(&mut self, h: &History<T>, d: &Dist<T>) -> Result<(Vec<Undo>, Vec<(NodeId, T)>)> {
        self.check_pair(h, d)?;
        let old_len = self.trie.num_nodes();
        let log = self.trie.insert(h, d)?;
        if !log.is_empty() {
            self.run = None;
        }
        let saved = if log.is_empty() { Vec::new() } else { self.refresh_branch(h, old_len) };
        Ok((log, saved))
    }

    fn revert(&mut self, log: Vec<Undo>, saved: Vec<(NodeId, T)>) {
        self.run = None;
        self.trie.rollback(log);
        self.values.truncate(self.trie.num_nodes());
        for (n, v) in saved {
            self.values[n as usize] = v;
        }
    }

    /// `σ ⊕_safe σ_(h,d)`: commit the join only if it stays safe.
    pub fn safe_extend(&mut self, h: &History<T>, d: &Dist<T>) -> Result<Extension<T>> {
        let (log, saved) = self.join(h, d)?;
        let value = self.value();
        if log.is_empty() || self.safe_value(&value) {
            return Ok(Extension { accepted: true, value });
        }
        self.revert(log, saved);
        Ok(Extension { accepted: false, value })
    }

    /// Value the join with `(h, d)` would have, leaving the shield unchanged.
    pub fn tentative_value(&mut self, h: &History<T>, d: &Dist<T>) -> Result<T> {
        let (log, saved) = self.join(h, d)?;
        let value = self.value();
        self.revert(log, saved);
        Ok(value)
    }

    /// `σ ⊔ σ_(h,d)` without the safety check.
    pub fn join_unchecked(&mut self, h: &History<T>, d: &Dist<T>) -> Result<T> {
        self.join(h, d)?;
        Ok(self.value())
    }

    /// Folds one episode of successive pairs into the shield between episodes.
    pub fn online_update(&mut self, episode: &[(History<T>, Dist<T>)]) -> Result<usize> {
        for w in episode.windows(2) {
            if !w[1].0.extends_by_one(&w[0].0) {
                return Err(Error::invalid("episode histories must extend each other by one step"));
            }
        }
        let mut accepted = 0;
        for (h, d) in episode {
            if self.safe_extend(h, d)?.accepted {
                accepted += 1;
            }
        }
        Ok(accepted)
    }

    /// Decision at a trie node (or off the trie) for proposal `d` at state `s`.
    pub fn decide_node(&self, node: u32, s: StateId, d: &Dist<T>) -> Result<ShieldDecision<T>> {
        self.analysis.model().check_choice(s, d)?;
        if node == OFF_TRIE {
            return ShieldDecision::project(&self.analysis, s, d);
        }
        let n = self.trie.node(node);
        let exact = self.trie.choices.lookup(d).is_some_and(|c| self.trie.is_allowed(node, c));
        let allowed = exact || (self.convex && !n.allowed.is_empty() && {
            let members: Vec<&Dist<T>> = n.allowed.iter().map(|&c| self.trie.choices.get(c)).collect();
            convex_member(d, &members, self.analysis.safe(s))
        });
        ShieldDecision::canonical(&self.analysis, s, d, allowed)
    }

    /// Cursor after executing `(executed, α, s')` from `node`.
    pub fn step_node(&self, node: u32, executed: &Dist<T>, action: ActionId, next: StateId) -> u32 {
        if node == OFF_TRIE {
            return OFF_TRIE;
        }
        self.trie
            .choices
            .lookup(executed)
            .and_then(|c| self.trie.child(node, c, action, next))
            .unwrap_or(OFF_TRIE)
    }

    /// Cursor of `h`, reusing the tracked run when `h` is its current history.
    fn run_cursor(&mut self, h: &History<T>) -> u32 {
        if let Some((tracked, c)) = &self.run {
            if tracked == h {
                return *c;
            }
        }
        let c = self.cursor_of(h);
        self.run = Some((h.clone(), c));
        c
    }

    /// Node matching the executed history `h`, or [`OFF_TRIE`].
    pub fn cursor_of(&self, h: &History<T>) -> u32 {
        self.trie.locate(h).unwrap_or(OFF_TRIE)
    }

    /// Rough heap footprint in bytes (nodes, child index, interned choices, values).
    pub fn approx_bytes(&self) -> usize {
        let node = core::mem::size_of::<TrieNode>() + core::mem::size_of::<T>();
        let allowed: usize = self.trie.nodes.iter().map(|n| n.allowed.capacity() * 4).sum();
        let child = core::mem::size_of::<((NodeId, ChoiceId, ActionId, StateId), NodeId)>() + 16;
        let choices: usize = self
            .trie
            .choices
            .dists
            .iter()
            .map(|d| d.entries().len() * (core::mem::size_of::<(ActionId, T)>() + 16) + 48)
            .sum();
        self.trie.num_nodes() * node + allowed + self.trie.children.len() * child + choices
    }
}

impl<T: Prob> Shield<T> for ConstructedShield<T> {
    fn name(&self) -> String {
        "offline".into()
    }

    fn decide(&mut self, h: &History<T>, d: &Dist<T>) -> Result<ShieldDecision<T>> {
        let cursor = self.run_cursor(h);
        self.decide_node(cursor, h.last(), d)
    }

    fn observe(&mut self, h: &History<T>, executed: &Dist<T>, action: ActionId, next: StateId) -> Result<()> {
        let here = self.run_cursor(h);
        let cursor = self.step_node(here, executed, action, next);
        if let Some((tracked, c)) = self.run.as_mut() {
            tracked.push(executed.clone(), action, next);
            *c = cursor;
        }
        Ok(())
    }

    fn reset(&mut self) {
        self.run = Some((History::new(self.trie.root_state()), ROOT));
    }

    fn as_markov(&self) -> Option<&dyn MarkovShield<T>> {
        Some(self)
    }
}

impl<T: Prob> MarkovShield<T> for ConstructedShield<T> {
    fn initial_cursor(&self) -> u32 {
        ROOT
    }

    fn decide_at(&self, cursor: u32, s: StateId, d: &Dist<T>) -> Result<ShieldDecision<T>> {
        self.decide_node(cursor, s, d)
    }

    fn advance(&self, cursor: u32, executed: &Dist<T>, action: ActionId, next: StateId) -> u32 {
        self.step_node(cursor, executed, action, next)
    }
}

/// Acceptance record of one offline construction step.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstructionStep<T> {
    pub index: usize,
    pub accepted: bool,
    pub value: T,
}

/// `σ_0 = σ_S`, `σ_{i+1} = σ_i ⊕_safe σ_(h_i, d_i)`.
pub fn construct_offline<T: Prob>(
    analysis: Arc<Analysis<T>>,
    nu: T,
    convex: bool,
    pairs: &[(History<T>, Dist<T>)],
) -> Result<(ConstructedShield<T>, Vec<ConstructionStep<T>>)> {
    let mut shield = ConstructedShield::new(analysis, nu, convex)?;
    let mut log = Vec::with_capacity(pairs.len());
    for (index, (h, d)) in pairs.iter().enumerate() {
        let ext = shield.safe_extend(h, d)?;
        log.push(ConstructionStep { index, accepted: ext.accepted, value: ext.value });
    }
    Ok((shield, log))
}

/// Constructed shield updated between episodes from the pairs it saw.
///
/// During an episode it behaves like the fixed shield of the previous
/// boundary; [`Shield::reset`] folds the recorded `(executed history,
/// proposal)` pairs in by safe extension.
#[derive(Clone, Debug)]
pub struct OnlineShield<T: Prob> {
    shield: ConstructedShield<T>,
    episode: Vec<(History<T>, Dist<T>)>,
    pending: Option<Dist<T>>,
    pub accepted_total: usize,
}

impl<T: Prob> OnlineShield<T> {
    pub fn new(analysis: Arc<Analysis<T>>, nu: T, convex: bool) -> Result<Self> {
        Ok(Self::from_shield(ConstructedShield::new(analysis, nu, convex)?))
    }

    pub fn from_shield(shield: ConstructedShield<T>) -> Self {
        OnlineShield { shield, episode: Vec::new(), pending: None, accepted_total: 0 }
    }

    pub fn shield(&self) -> &ConstructedShield<T> {
        &self.shield
    }

    /// Applies the recorded episode now.
    pub fn end_episode(&mut self) -> Result<usize> {
        let episode = core::mem::take(&mut self.episode);
        self.pending = None;
        let accepted = self.shield.online_update(&episode)?;
        self.accepted_total += accepted;
        self.shield.reset();
        Ok(accepted)
    }
}

impl<T: Prob> Shield<T> for OnlineShield<T> {
    fn name(&self) -> String {
        "online".into()
    }

    fn decide(&mut self, h: &History<T>, d: &Dist<T>) -> Result<ShieldDecision<T>> {
        self.pending = Some(d.clone());
        self.shield.decide(h, d)
    }

    fn observe(&mut self, h: &History<T>, executed: &Dist<T>, action: ActionId, next: StateId) -> Result<()> {
        if let Some(d) = self.pending.take() {
            if self.episode.last().is_none_or(|(prev, _)| h.extends_by_one(prev)) {
                self.episode.push((h.clone(), d));
            }
        }
        self.shield.observe(h, executed, action, next)
    }

    fn reset(&mut self) {
        // the episode was produced by this shield, so its histories chain
        let _ = self.end_episode();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{self, BAD, FORK_ALPHA, FORK_BETA, FORK_DELTA, FORK_EPS, FORK_GAMMA, S0, S1, S2};
    use crate::num::Rational;

    fn q(n: i64, d: i64) -> Rational {
        Rational::from_ratio(n, d)
    }

    fn fork() -> Arc<Analysis<Rational>> {
        Arc::new(Analysis::new(fixtures::fork()).unwrap())
    }

    fn branch(s: StateId) -> History<Rational> {
        History::new(S0).extended(Dist::dirac(FORK_EPS), FORK_EPS, s)
    }

    #[test]
    fn queries_follow_the_given_history() {
        let mut shield = ConstructedShield::new(fork(), q(1, 2), false).unwrap();
        let delta = Dist::dirac(FORK_DELTA);
        assert!(shield.decide(&branch(S2), &delta).unwrap().intervened);
        assert!(shield.safe_extend(&branch(S2), &delta).unwrap().accepted);
        assert!(!shield.decide(&branch(S2), &delta).unwrap().intervened);
        assert!(shield.decide(&branch(S1), &Dist::dirac(FORK_BETA)).unwrap().intervened);
        assert!(!shield.decide(&branch(S2), &delta).unwrap().intervened);
    }

    #[test]
    fn walkthrough_on_fork() {
        let mut shield = ConstructedShield::new(fork(), q(1, 2), false).unwrap();
        assert_eq!(shield.value(), q(0, 1));
        let first = shield.safe_extend(&branch(S1), &Dist::dirac(FORK_BETA)).unwrap();
        assert_eq!(first, Extension { accepted: true, value: q(1, 2) });
        let second = shield.safe_extend(&branch(S2), &Dist::dirac(FORK_DELTA)).unwrap();
        assert_eq!(second, Extension { accepted: false, value: q(1, 1) });
        assert_eq!(shield.value(), q(1, 2));
        assert_eq!(shield.trie().num_nodes(), 2);

        let d = shield.decide(&branch(S1), &Dist::dirac(FORK_BETA)).unwrap();
        assert!(!d.intervened);
        let d = shield.decide(&branch(S2), &Dist::dirac(FORK_DELTA)).unwrap();
        assert_eq!(d.executed, Dist::dirac(FORK_GAMMA));
        assert!(d.intervened);
    }

    #[test]
    fn insertion_creates_prefix_nodes() {
        let mut trie = HistoryTrie::<Rational>::new(S0);
        let log = trie.insert(&branch(S1), &Dist::dirac(FORK_BETA)).unwrap();
        assert_eq!(trie.num_nodes(), 2);
        assert_eq!(trie.node(ROOT).allowed.len(), 1);
        assert_eq!(trie.choices().get(trie.node(ROOT).allowed[0]), &Dist::dirac(FORK_EPS));
        assert_eq!(trie.node(1).state, S1);
        let before = trie.pairs();
        assert!(trie.insert(&branch(S1), &Dist::dirac(FORK_BETA)).unwrap().is_empty());
        trie.rollback(log);
        assert_eq!(trie.num_nodes(), 1);
        assert!(trie.pairs().is_empty());
        assert_eq!(before.len(), 2);
    }

    #[test]
    fn convex_mode_accepts_hull_members_at_the_query() {
        let mut shield = ConstructedShield::new(fork(), q(1, 2), true).unwrap();
        shield.safe_extend(&branch(S1), &Dist::dirac(FORK_BETA)).unwrap();
        let mix = Dist::from_ratios(&[(FORK_ALPHA, 1, 2), (FORK_BETA, 1, 2)]);
        assert!(!shield.decide(&branch(S1), &mix).unwrap().intervened);
        shield.set_convex(false);
        assert!(shield.decide(&branch(S1), &mix).unwrap().intervened);
    }

    #[test]
    fn online_shield_learns_between_episodes() {
        let a = fork();
        let mut online = OnlineShield::new(a.clone(), q(1, 2), false).unwrap();
        let mut h = History::new(S0);
        let beta = Dist::dirac(FORK_BETA);
        crate::shields::transform_step(&mut online, &mut h, &Dist::dirac(FORK_EPS), (FORK_EPS, S1), a.model())
            .unwrap();
        let d = online.decide(&h, &beta).unwrap();
        assert!(d.intervened);
        online.observe(&h, &d.executed, FORK_ALPHA, fixtures::GOOD).unwrap();
        online.reset();
        assert_eq!(online.shield().value(), q(1, 2));
        assert!(!online.decide(&branch(S1), &beta).unwrap().intervened);
        let _ = BAD;
    }

    #[test]
    fn non_chained_episode_is_rejected() {
        let mut shield = ConstructedShield::new(fork(), q(1, 2), false).unwrap();
        let ep = alloc::vec![(branch(S1), Dist::dirac(FORK_BETA)), (branch(S2), Dist::dirac(FORK_DELTA))];
        assert!(matches!(shield.online_update(&ep), Err(Error::InvalidArgument(_))));
        assert_eq!(shield.online_update(&[]).unwrap(), 0);
    }
}
