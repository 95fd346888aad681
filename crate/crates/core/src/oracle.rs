//! Brute-force ground truth on small acyclic models: policy enumeration,
//! guarantee checks, shield-value verification and the impossibility case
//! analysis. Everything here recomputes values from scratch instead of
//! reusing the valuation module.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::RngCore;

use crate::constructed::{ConstructedShield, NodeId, ROOT};
use crate::dist::Dist;
use crate::error::{Error, Result};
use crate::history::{History, Path};
use crate::ids::{ActionId, StateId};
use crate::mdp::{Mdp, MdpBuilder};
use crate::num::Prob;
use crate::shields::{shield_delta, shield_safe, DeltaVariant, ShieldDecision, TallyKind, TallyState};
use crate::valuation::{Analysis, Objective};

pub const POLICY_CAP: usize = 1_000_000;
pub const SELECTION_CAP: usize = 100_000;
/// Longest path the enumerators follow.
pub const MAX_DEPTH: usize = 32;

/// Optimal reach-Bad values by recursion over an acyclic model.
///
/// States whose only moves are self-loops count as absorbing; any other
/// cycle is rejected.
pub fn dag_values<T: Prob>(m: &Mdp<T>, objective: Objective) -> Result<Vec<T>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Fresh,
        Open,
        Done,
    }
    let n = m.num_states();
    let mut marks = vec![Mark::Fresh; n];
    let mut values = vec![T::zero(); n];
    for root in m.states() {
        if marks[root.idx()] != Mark::Fresh {
            continue;
        }
        let mut stack = vec![(root, false)];
        while let Some((s, expanded)) = stack.pop() {
            if expanded {
                values[s.idx()] = if m.is_bad(s) {
                    T::one()
                } else if m.is_absorbing(s) {
                    T::zero()
                } else {
                    let mut best: Option<T> = None;
                    for t in m.transitions(s) {
                        let q = crate::num::sum(t.succ.iter().map(|(x, p)| p.clone() * values[x.idx()].clone()));
                        best = Some(match best {
                            None => q,
                            Some(b) => match objective {
                                Objective::Min => b.min_of(q),
                                Objective::Max => b.max_of(q),
                            },
                        });
                    }
                    best.unwrap_or_else(T::zero)
                };
                marks[s.idx()] = Mark::Done;
                continue;
            }
            match marks[s.idx()] {
                Mark::Done => continue,
                Mark::Open => return Err(Error::unsupported("model has a cycle")),
                Mark::Fresh => {}
            }
            marks[s.idx()] = Mark::Open;
            stack.push((s, true));
            if m.is_bad(s) || m.is_absorbing(s) {
                continue;
            }
            for t in m.transitions(s) {
                for (x, _) in &t.succ {
                    match marks[x.idx()] {
                        Mark::Open => return Err(Error::unsupported("model has a cycle")),
                        Mark::Fresh => stack.push((*x, false)),
                        Mark::Done => {}
                    }
                }
            }
        }
    }
    Ok(values)
}

fn terminal<T: Prob>(m: &Mdp<T>, s: StateId) -> bool {
    m.is_bad(s) || m.is_absorbing(s)
}

/// A policy over finite paths; paths missing from the table fall back to a
/// per-state choice (or the first available action).
#[derive(Clone, Debug, PartialEq)]
pub struct Policy<T> {
    pub table: BTreeMap<Path, Dist<T>>,
    pub fallback: Vec<Option<Dist<T>>>,
}

impl<T: Prob> Policy<T> {
    pub fn memoryless(choices: Vec<Dist<T>>) -> Self {
        Policy { table: BTreeMap::new(), fallback: choices.into_iter().map(Some).collect() }
    }

    pub fn choice(&self, m: &Mdp<T>, path: &Path) -> Dist<T> {
        if let Some(d) = self.table.get(path) {
            return d.clone();
        }
        let s = path.last();
        match self.fallback.get(s.idx()) {
            Some(Some(d)) => d.clone(),
            _ => Dist::dirac(m.actions(s)[0]),
        }
    }
}

/// All memoryless deterministic policies.
pub fn enumerate_memoryless<T: Prob>(m: &Mdp<T>, cap: usize) -> Result<Vec<Policy<T>>> {
    let mut count: usize = 1;
    for s in m.states() {
        count = count.saturating_mul(m.actions(s).len().max(1));
    }
    if count > cap {
        return Err(Error::exhausted(format!("{count} memoryless policies exceed the cap {cap}")));
    }
    let mut out = vec![Vec::<Dist<T>>::new()];
    for s in m.states() {
        let mut next = Vec::with_capacity(out.len() * m.actions(s).len());
        for prefix in &out {
            for a in m.actions(s) {
                let mut p = prefix.clone();
                p.push(Dist::dirac(a));
                next.push(p);
            }
        }
        out = next;
    }
    Ok(out.into_iter().map(Policy::memoryless).collect())
}

fn count_history_policies<T: Prob>(m: &Mdp<T>, s: StateId, depth: usize) -> usize {
    if terminal(m, s) || depth >= MAX_DEPTH {
        return 1;
    }
    let mut total: usize = 0;
    for t in m.transitions(s) {
        let mut product: usize = 1;
        for (x, _) in &t.succ {
            product = product.saturating_mul(count_history_policies(m, *x, depth + 1));
        }
        total = total.saturating_add(product);
    }
    total
}

fn history_tables<T: Prob>(m: &Mdp<T>, path: &Path, depth: usize) -> Vec<BTreeMap<Path, ActionId>> {
    let s = path.last();
    if terminal(m, s) || depth >= MAX_DEPTH {
        return vec![BTreeMap::new()];
    }
    let mut out = Vec::new();
    for t in m.transitions(s) {
        let mut partial = vec![BTreeMap::from([(path.clone(), t.action)])];
        for (x, _) in &t.succ {
            let subs = history_tables(m, &path.extended(t.action, *x), depth + 1);
            let mut next = Vec::with_capacity(partial.len() * subs.len());
            for p in &partial {
                for sub in &subs {
                    let mut joined = p.clone();
                    joined.extend(sub.iter().map(|(k, v)| (k.clone(), *v)));
                    next.push(joined);
                }
            }
            partial = next;
        }
        out.extend(partial);
    }
    out
}

/// Deterministic history-dependent policies, distinguished on the paths they reach themselves.
pub fn enumerate_history_det<T: Prob>(m: &Mdp<T>, cap: usize) -> Result<Vec<Policy<T>>> {
    let count = count_history_policies(m, m.initial(), 0);
    if count > cap {
        return Err(Error::exhausted(format!("{count} history-dependent policies exceed the cap {cap}")));
    }
    Ok(history_tables(m, &Path::new(m.initial()), 0)
        .into_iter()
        .map(|t| Policy {
            table: t.into_iter().map(|(k, a)| (k, Dist::dirac(a))).collect(),
            fallback: Vec::new(),
        })
        .collect())
}

/// Reach-Bad probability of a policy, by path expansion.
pub fn policy_value<T: Prob>(m: &Mdp<T>, policy: &Policy<T>) -> T {
    policy_value_from(m, policy, m.initial())
}

pub fn policy_value_from<T: Prob>(m: &Mdp<T>, policy: &Policy<T>, start: StateId) -> T {
    let mut total = T::zero();
    let mut stack = vec![(Path::new(start), T::one())];
    while let Some((path, prob)) = stack.pop() {
        let s = path.last();
        if m.is_bad(s) {
            total = total + prob;
            continue;
        }
        if m.is_absorbing(s) || path.len() >= MAX_DEPTH {
            continue;
        }
        let d = policy.choice(m, &path);
        for (a, w) in d.entries() {
            for (x, p) in m.successors(s, *a).unwrap_or(&[]) {
                stack.push((path.extended(*a, *x), prob.clone() * w.clone() * p.clone()));
            }
        }
    }
    total
}

/// Shield as a pure function of the executed history and the proposal.
pub type Decider<'a, T> = dyn FnMut(&History<T>, &Dist<T>) -> Result<ShieldDecision<T>> + 'a;

/// One non-terminal node of the shielded execution tree.
#[derive(Clone, Debug)]
pub struct Visit<T> {
    pub history: History<T>,
    pub proposed: Dist<T>,
    pub decision: ShieldDecision<T>,
    /// `π` agreed with `T(π)` on every strict prefix.
    pub clean_prefix: bool,
    /// `π`'s own choices along the path.
    pub proposals: Vec<Dist<T>>,
}

/// Value of `T(π)` and every positive-probability visit.
pub fn shielded_run<T: Prob>(m: &Mdp<T>, policy: &Policy<T>, decide: &mut Decider<'_, T>) -> Result<(T, Vec<Visit<T>>)> {
    let mut total = T::zero();
    let mut visits = Vec::new();
    let mut stack = vec![(History::new(m.initial()), T::one(), true, Vec::<Dist<T>>::new())];
    while let Some((h, prob, clean, proposals)) = stack.pop() {
        let s = h.last();
        if m.is_bad(s) {
            total = total + prob;
            continue;
        }
        if m.is_absorbing(s) || h.len() >= MAX_DEPTH {
            continue;
        }
        let d = policy.choice(m, &h.path());
        let decision = decide(&h, &d)?;
        let mut own = proposals.clone();
        own.push(d.clone());
        for (a, w) in decision.executed.entries() {
            for (x, p) in m.successors(s, *a).unwrap_or(&[]) {
                stack.push((
                    h.extended(decision.executed.clone(), *a, *x),
                    prob.clone() * w.clone() * p.clone(),
                    clean && !decision.intervened,
                    own.clone(),
                ));
            }
        }
        visits.push(Visit { history: h, proposed: d, decision, clean_prefix: clean, proposals });
    }
    Ok((total, visits))
}

/// Best or worst completion of the path of `h` when its prefix choices are
/// fixed to `choices` (one per step plus the final one) and all other
/// histories are free.
pub fn completion_value<T: Prob>(m: &Mdp<T>, values: &[T], h: &History<T>, choices: &[Dist<T>]) -> T {
    let mut total = T::zero();
    let mut prob = T::one();
    let mut s = h.start();
    for (k, step) in h.steps().iter().enumerate() {
        if m.is_bad(s) {
            return total + prob;
        }
        let d = &choices[k];
        for (a, w) in d.entries() {
            for (x, p) in m.successors(s, *a).unwrap_or(&[]) {
                if *a == step.action && *x == step.next {
                    continue;
                }
                total = total + prob.clone() * w.clone() * p.clone() * values[x.idx()].clone();
            }
        }
        prob = prob * d.prob(step.action) * m.prob(s, step.action, step.next);
        s = step.next;
    }
    if m.is_bad(s) {
        return total + prob;
    }
    let last = &choices[h.len()];
    let mut q = T::zero();
    for (a, w) in last.entries() {
        for (x, p) in m.successors(s, *a).unwrap_or(&[]) {
            q = q + w.clone() * p.clone() * values[x.idx()].clone();
        }
    }
    total + prob * q
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Check {
    pub checked: usize,
    pub violations: usize,
    pub witness: Option<String>,
}

impl Check {
    fn record(&mut self, ok: bool, witness: impl FnOnce() -> String) {
        self.checked += 1;
        if !ok {
            self.violations += 1;
            if self.witness.is_none() {
                self.witness = Some(witness());
            }
        }
    }

    pub fn holds(&self) -> bool {
        self.violations == 0
    }

    fn merge(&mut self, other: &Check) {
        self.checked += other.checked;
        self.violations += other.violations;
        if self.witness.is_none() {
            self.witness.clone_from(&other.witness);
        }
    }
}

/// Outcome of the four guarantee checks over a set of policies.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GuaranteeReport {
    pub policies: usize,
    pub strong_safety: Check,
    pub strong_permissiveness: Check,
    pub weak_safety: Check,
    pub weak_permissiveness: Check,
}

impl GuaranteeReport {
    pub fn merge(&mut self, other: &GuaranteeReport) {
        self.policies += other.policies;
        self.strong_safety.merge(&other.strong_safety);
        self.strong_permissiveness.merge(&other.strong_permissiveness);
        self.weak_safety.merge(&other.weak_safety);
        self.weak_permissiveness.merge(&other.weak_permissiveness);
    }
}

/// Checks the four guarantees of a shield on every policy.
///
/// Strong safety: `T(π)` has value ≤ ν. Strong permissiveness: a safe `π` is
/// never intervened on. Weak safety: at every visited history the best
/// completion of the executed prefix plus `T(π)`'s choice is ≤ ν. Weak
/// permissiveness: at every first intervention the worst completion of `π`'s
/// own prefix choices exceeds ν.
pub fn check_guarantees<T: Prob>(
    m: &Mdp<T>,
    nu: &T,
    decide: &mut Decider<'_, T>,
    policies: &[Policy<T>],
) -> Result<GuaranteeReport> {
    let v_min = dag_values(m, Objective::Min)?;
    let v_max = dag_values(m, Objective::Max)?;
    let mut report = GuaranteeReport { policies: policies.len(), ..Default::default() };
    for (i, policy) in policies.iter().enumerate() {
        let value = policy_value(m, policy);
        let safe = value <= *nu;
        let (shielded, visits) = shielded_run(m, policy, decide)?;
        report
            .strong_safety
            .record(shielded <= *nu, || format!("policy #{i}: shielded value {shielded} > {nu}"));
        if safe {
            let intervened = visits.iter().find(|v| v.decision.intervened);
            report.strong_permissiveness.record(intervened.is_none(), || {
                format!("policy #{i} (value {value}) intervened at {}", intervened.unwrap().history.path())
            });
        }
        for v in &visits {
            let mut executed: Vec<Dist<T>> = v.history.steps().iter().map(|st| st.choice.clone()).collect();
            executed.push(v.decision.executed.clone());
            let best = completion_value(m, &v_min, &v.history, &executed);
            report.weak_safety.record(best <= *nu, || {
                format!("policy #{i} at {}: best completion {best} > {nu}", v.history.path())
            });
            if v.decision.intervened && v.clean_prefix {
                let mut own = v.proposals.clone();
                own.push(v.proposed.clone());
                let worst = completion_value(m, &v_max, &v.history, &own);
                report.weak_permissiveness.record(worst > *nu, || {
                    format!("policy #{i} at {}: intervened but worst completion {worst} ≤ {nu}", v.history.path())
                });
            }
        }
    }
    Ok(report)
}

/// σ_S as a decider.
pub fn safe_decider<T: Prob>(analysis: &Analysis<T>) -> impl FnMut(&History<T>, &Dist<T>) -> Result<ShieldDecision<T>> + '_ {
    move |h, d| shield_safe(analysis, h.last(), d)
}

/// Optimistic or pessimistic shield as a decider; the tally is replayed for every query.
pub fn tally_decider<T: Prob>(
    analysis: &Analysis<T>,
    kind: TallyKind,
    nu: T,
) -> impl FnMut(&History<T>, &Dist<T>) -> Result<ShieldDecision<T>> + '_ {
    move |h, d| {
        let tally = TallyState::replay(analysis, kind, &nu, h)?;
        let s = h.last();
        analysis.model().check_choice(s, d)?;
        ShieldDecision::canonical(analysis, s, d, tally.allows(analysis, s, d)?)
    }
}

pub fn delta_decider<T: Prob>(
    analysis: &Analysis<T>,
    delta: T,
    variant: DeltaVariant,
) -> impl FnMut(&History<T>, &Dist<T>) -> Result<ShieldDecision<T>> + '_ {
    move |h, d| shield_delta(analysis, h.last(), d, &delta, variant)
}

pub fn constructed_decider<T: Prob>(
    shield: &ConstructedShield<T>,
) -> impl FnMut(&History<T>, &Dist<T>) -> Result<ShieldDecision<T>> + '_ {
    move |h, d| shield.decide_node(shield.cursor_of(h), h.last(), d)
}

/// Uniform integer below `n`.
pub fn below(rng: &mut impl RngCore, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

/// Random rational distribution over a non-empty random subset of `actions`
/// with weights on a grid of `1/grid`.
pub fn random_choice<T: Prob>(rng: &mut impl RngCore, actions: &[ActionId], grid: i64) -> Dist<T> {
    loop {
        let weights: Vec<i64> = actions.iter().map(|_| (rng.next_u64() % (grid as u64 + 1)) as i64).collect();
        let total: i64 = weights.iter().sum();
        if total == 0 {
            continue;
        }
        let entries = actions.iter().zip(&weights).map(|(a, w)| (*a, T::from_ratio(*w, total)));
        return Dist::new(entries).expect("normalized weights");
    }
}

/// Random stochastic policy, memoryless or with a separate choice per path.
pub fn random_stochastic_policy<T: Prob>(m: &Mdp<T>, rng: &mut impl RngCore, history_dependent: bool) -> Policy<T> {
    let fallback = m.states().map(|s| Some(random_choice(rng, &m.actions(s), 100))).collect();
    let mut policy = Policy { table: BTreeMap::new(), fallback };
    if history_dependent {
        let mut stack = vec![Path::new(m.initial())];
        while let Some(path) = stack.pop() {
            let s = path.last();
            if terminal(m, s) || path.len() >= MAX_DEPTH || policy.table.len() >= 10_000 {
                continue;
            }
            let d: Dist<T> = random_choice(rng, &m.actions(s), 100);
            for (a, _) in d.entries() {
                for (x, _) in m.successors(s, *a).unwrap_or(&[]) {
                    stack.push(path.extended(*a, *x));
                }
            }
            policy.table.insert(path, d);
        }
    }
    policy
}

/// Random acyclic model: inner states only move to higher ids, the last
/// two states are `good` and `bad`.
pub fn random_acyclic_mdp<T: Prob>(rng: &mut impl RngCore, max_states: usize, max_actions: usize) -> Mdp<T> {
    let n = 4 + below(rng, max_states.max(4) - 3);
    let (good, bad) = (StateId(n as u32 - 2), StateId(n as u32 - 1));
    let loop_action = ActionId(max_actions as u32);
    let mut b = MdpBuilder::new(n, max_actions + 1);
    b.initial(StateId(0)).unwrap().bad(bad).unwrap();
    for s in 0..n - 2 {
        let actions = 1 + below(rng, max_actions);
        for a in 0..actions {
            let targets: Vec<usize> = (s + 1..n).collect();
            let k = 1 + below(rng, 2.min(targets.len()));
            let mut picked: Vec<usize> = Vec::new();
            while picked.len() < k {
                let t = targets[below(rng, targets.len())];
                if !picked.contains(&t) {
                    picked.push(t);
                }
            }
            let weights: Vec<i64> = picked.iter().map(|_| 1 + below(rng, 9) as i64).collect();
            let total: i64 = weights.iter().sum();
            let succ = picked.iter().zip(&weights).map(|(t, w)| (StateId(*t as u32), T::from_ratio(*w, total)));
            b.transition(StateId(s as u32), ActionId(a as u32), succ).unwrap();
        }
    }
    for s in [good, bad] {
        b.transition(s, loop_action, [(s, T::one())]).unwrap();
    }
    b.build().expect("generated model is well formed")
}

/// Random positive-probability history of at most `max_len` steps.
pub fn random_history<T: Prob>(m: &Mdp<T>, rng: &mut impl RngCore, max_len: usize) -> History<T> {
    let mut h = History::new(m.initial());
    let len = below(rng, max_len + 1);
    while h.len() < len && !terminal(m, h.last()) {
        let s = h.last();
        let d: Dist<T> = random_choice(rng, &m.actions(s), 10);
        let (a, _) = d.entries()[below(rng, d.entries().len())].clone();
        let succ = m.successors(s, a).expect("available");
        let (x, _) = succ[below(rng, succ.len())].clone();
        h.push(d, a, x);
    }
    h
}

/// Allow flags of σ_S, σ_pess and σ_opt for one query, plus their executed choices.
pub fn ordering_query<T: Prob>(
    analysis: &Analysis<T>,
    nu: &T,
    h: &History<T>,
    d: &Dist<T>,
) -> Result<([bool; 3], [Dist<T>; 3])> {
    let safe = shield_safe(analysis, h.last(), d)?;
    let pess = tally_decider(analysis, TallyKind::Pessimistic, nu.clone())(h, d)?;
    let opt = tally_decider(analysis, TallyKind::Optimistic, nu.clone())(h, d)?;
    Ok(([!safe.intervened, !pess.intervened, !opt.intervened], [safe.executed, pess.executed, opt.executed]))
}

/// Brute-force shield value: the best induced value over every selection
/// of one allowed choice (or the safe floor) per trie node.
pub fn verify_shield_value<T: Prob>(shield: &ConstructedShield<T>, cap: usize) -> Result<T> {
    let trie = shield.trie();
    let analysis = shield.analysis();
    let m = analysis.model();
    let floor = match dag_values(m, Objective::Min) {
        Ok(v) => v,
        Err(_) => m.states().map(|s| analysis.vmin(s).clone()).collect(),
    };
    let nodes: Vec<NodeId> = (0..trie.num_nodes() as NodeId).collect();
    let mut combos: usize = 1;
    for &n in &nodes {
        combos = combos.saturating_mul(trie.node(n).allowed.len() + 1);
    }
    if combos > cap {
        return Err(Error::exhausted(format!("{combos} selections exceed the cap {cap}")));
    }
    let mut selection = vec![0usize; nodes.len()];
    let mut best: Option<T> = None;
    loop {
        let value = selection_value(shield, &floor, &selection);
        best = Some(match best {
            None => value,
            Some(b) => b.max_of(value),
        });
        // odometer over (allowed + floor) options per node
        let mut i = 0;
        loop {
            if i == nodes.len() {
                return Ok(best.expect("at least one selection"));
            }
            selection[i] += 1;
            if selection[i] <= trie.node(nodes[i]).allowed.len() {
                break;
            }
            selection[i] = 0;
            i += 1;
        }
    }
}

/// Option 0 is the floor; option `k ≥ 1` is the `k`-th allowed choice.
fn selection_value<T: Prob>(shield: &ConstructedShield<T>, floor: &[T], selection: &[usize]) -> T {
    let trie = shield.trie();
    let m = shield.analysis().model();
    let mut total = T::zero();
    let mut stack = vec![(ROOT, T::one())];
    while let Some((node, mass)) = stack.pop() {
        let n = trie.node(node);
        let pick = selection[node as usize];
        if pick == 0 {
            total = total + mass * floor[n.state.idx()].clone();
            continue;
        }
        let c = n.allowed[pick - 1];
        let d = trie.choices().get(c);
        for (a, w) in d.entries() {
            for (x, p) in m.successors(n.state, *a).expect("validated") {
                let share = mass.clone() * w.clone() * p.clone();
                match trie.child(node, c, *a, *x) {
                    Some(child) => stack.push((child, share)),
                    None => total = total + share * floor[x.idx()].clone(),
                }
            }
        }
    }
    total
}

/// Values of the three policies in the impossibility argument.
#[derive(Clone, Debug, PartialEq)]
pub struct ImpossibilityReport<T> {
    pub nu: T,
    /// Bad action in both gadget states.
    pub unsafe_value: T,
    /// Bad action only in the first, resp. only in the second gadget state.
    pub safe_values: (T, T),
    /// Reach-Bad probability from the gadget entry under either safe policy.
    pub gadget_value: T,
    /// Every history-choice pair of the unsafe policy is one of a safe policy.
    pub mix_closed: bool,
    /// σ_opt allows both safe policies and hence the unsafe one.
    pub optimistic_allows_unsafe: bool,
    /// σ_pess intervenes on one of the safe policies.
    pub pessimistic_blocks_safe: bool,
}

impl<T: Prob> ImpossibilityReport<T> {
    /// The case analysis goes through: one unsafe mix of two safe policies.
    pub fn confirmed(&self) -> bool {
        self.unsafe_value > self.nu && self.safe_values.0 <= self.nu && self.safe_values.1 <= self.nu && self.mix_closed
    }
}

/// A FORK-shaped gadget: two states, each with a good and a bad action.
#[derive(Clone, Copy, Debug)]
pub struct Gadget {
    pub entry: StateId,
    pub left: (StateId, ActionId, ActionId),
    pub right: (StateId, ActionId, ActionId),
}

pub const FORK_GADGET: Gadget = Gadget {
    entry: StateId(0),
    left: (StateId(1), ActionId(1), ActionId(2)),
    right: (StateId(2), ActionId(3), ActionId(4)),
};

pub const FULLPROOF_GADGET: Gadget = Gadget {
    entry: StateId(1),
    left: (StateId(2), ActionId(2), ActionId(3)),
    right: (StateId(3), ActionId(4), ActionId(5)),
};

pub fn impossibility_on<T: Prob>(m: &Mdp<T>, gadget: Gadget, nu: T) -> Result<ImpossibilityReport<T>> {
    let policy = |left_bad: bool, right_bad: bool| {
        let mut choices: Vec<Dist<T>> = m.states().map(|s| Dist::dirac(m.actions(s)[0])).collect();
        choices[gadget.left.0.idx()] = Dist::dirac(if left_bad { gadget.left.2 } else { gadget.left.1 });
        choices[gadget.right.0.idx()] = Dist::dirac(if right_bad { gadget.right.2 } else { gadget.right.1 });
        Policy::memoryless(choices)
    };
    let unsafe_policy = policy(true, true);
    let left = policy(true, false);
    let right = policy(false, true);
    let analysis = Analysis::new(m.clone())?;
    let pairs_of = |p: &Policy<T>| -> Result<Vec<(Path, Dist<T>)>> {
        let mut identity = |_: &History<T>, d: &Dist<T>| Ok(ShieldDecision::allow(d));
        let (_, visits) = shielded_run(m, p, &mut identity)?;
        Ok(visits.into_iter().map(|v| (v.history.path(), v.proposed)).collect())
    };
    let known: Vec<(Path, Dist<T>)> = pairs_of(&left)?.into_iter().chain(pairs_of(&right)?).collect();
    let mix_closed = pairs_of(&unsafe_policy)?
        .iter()
        .all(|(path, d)| known.iter().any(|(q, e)| q == path && e.same_as(d)));

    let never_intervenes = |p: &Policy<T>, decide: &mut Decider<'_, T>| -> Result<bool> {
        let (_, visits) = shielded_run(m, p, decide)?;
        Ok(visits.iter().all(|v| !v.decision.intervened))
    };
    let mut opt = tally_decider(&analysis, TallyKind::Optimistic, nu.clone());
    let optimistic_allows_unsafe = never_intervenes(&left, &mut opt)?
        && never_intervenes(&right, &mut opt)?
        && never_intervenes(&unsafe_policy, &mut opt)?;
    let mut pess = tally_decider(&analysis, TallyKind::Pessimistic, nu.clone());
    let pessimistic_blocks_safe = !(never_intervenes(&left, &mut pess)? && never_intervenes(&right, &mut pess)?);

    Ok(ImpossibilityReport {
        unsafe_value: policy_value(m, &unsafe_policy),
        safe_values: (policy_value(m, &left), policy_value(m, &right)),
        gadget_value: policy_value_from(m, &left, gadget.entry),
        mix_closed,
        optimistic_allows_unsafe,
        pessimistic_blocks_safe,
        nu,
    })
}

/// The general-threshold impossibility case analysis; inapplicable at ν = 0.
pub fn impossibility_demo<T: Prob>(nu: T) -> Result<ImpossibilityReport<T>> {
    if nu <= T::zero() || nu >= T::one() {
        return Err(Error::invalid("the impossibility argument needs 0 < nu < 1; at nu = 0 the safe-action shield is both safe and permissive"));
    }
    let m = crate::fixtures::fullproof(nu.clone())?;
    impossibility_on(&m, FULLPROOF_GADGET, nu)
}

/// A constructed shield's allowed policies stay allowed under history mixing.
///
/// Draws random stochastic policies, keeps those the shield never intervenes
/// on, and checks every mix that follows the first policy on histories whose
/// first successor lies in a random state set and the second elsewhere.
pub fn mix_closure_check<T: Prob>(
    shield: &ConstructedShield<T>,
    rng: &mut ChaCha8Rng,
    candidates: usize,
) -> Result<Check> {
    let m = shield.analysis().model();
    let mut decide = constructed_decider(shield);
    let mut allowed: Vec<Policy<T>> = Vec::new();
    for _ in 0..candidates {
        let p = allowed_policy_candidate(shield, rng);
        let (_, visits) = shielded_run(m, &p, &mut decide)?;
        if visits.iter().all(|v| !v.decision.intervened) {
            allowed.push(p);
        }
    }
    let mut check = Check::default();
    for i in 0..allowed.len() {
        for j in 0..allowed.len() {
            if i == j {
                continue;
            }
            let split: Vec<bool> = m.states().map(|_| rng.next_u64() & 1 == 1).collect();
            let mixed = mix(m, &allowed[i], &allowed[j], &split);
            let (_, visits) = shielded_run(m, &mixed, &mut decide)?;
            let ok = visits.iter().all(|v| !v.decision.intervened);
            check.record(ok, || format!("mix of allowed policies #{i} and #{j} was intervened"));
        }
    }
    Ok(check)
}

/// Picks recorded allowed choices on trie histories and safe choices elsewhere.
fn allowed_policy_candidate<T: Prob>(shield: &ConstructedShield<T>, rng: &mut impl RngCore) -> Policy<T> {
    let trie = shield.trie();
    let analysis = shield.analysis();
    let m = analysis.model();
    let mut policy = Policy {
        table: BTreeMap::new(),
        fallback: m.states().map(|s| Some(random_choice(rng, analysis.safe(s), 4))).collect(),
    };
    for (id, node) in trie.nodes() {
        let options = &node.allowed;
        if options.is_empty() || rng.next_u64() % 4 == 0 {
            continue;
        }
        let c = options[below(rng, options.len())];
        policy.table.insert(trie.history_of(id).path(), trie.choices().get(c).clone());
    }
    policy
}

fn mix<T: Prob>(m: &Mdp<T>, first: &Policy<T>, second: &Policy<T>, split: &[bool]) -> Policy<T> {
    let mut table = BTreeMap::new();
    let mut stack = vec![Path::new(m.initial())];
    while let Some(path) = stack.pop() {
        let s = path.last();
        if terminal(m, s) || path.len() >= MAX_DEPTH {
            continue;
        }
        let source = if path.is_empty() || split[path_state(&path, 1).idx()] { first } else { second };
        let d = source.choice(m, &path);
        for (a, _) in d.entries() {
            for (x, _) in m.successors(s, *a).unwrap_or(&[]) {
                stack.push(path.extended(*a, *x));
            }
        }
        table.insert(path, d);
    }
    Policy { table, fallback: first.fallback.clone() }
}

fn path_state(path: &Path, k: usize) -> StateId {
    if k == 0 {
        path.start
    } else {
        path.steps[k - 1].1
    }
}

/// The threshold-parameterized saturated shields on FORK: at `s1` any
/// choice with `d(β) ≤ p`, at `s2` any with `d(δ) ≤ 1 − p`.
pub fn fork_saturated<T: Prob>(p: T) -> Result<crate::memoryless::MemorylessShield<T>> {
    use crate::fixtures::{FORK_ALPHA, FORK_BETA, FORK_DELTA, FORK_GAMMA, S1, S2};
    let analysis = Arc::new(Analysis::new(crate::fixtures::fork::<T>())?);
    let one = T::one();
    let mut allowed = vec![Vec::new(); analysis.model().num_states()];
    allowed[S1.idx()].push(Dist::new([(FORK_BETA, p.clone()), (FORK_ALPHA, one.clone() - p.clone())])?);
    allowed[S2.idx()].push(Dist::new([(FORK_DELTA, one.clone() - p.clone()), (FORK_GAMMA, p)])?);
    crate::memoryless::MemorylessShield::from_allowed(analysis, T::from_ratio(1, 2), true, allowed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::num::Rational;

    fn q(n: i64, d: i64) -> Rational {
        Rational::from_ratio(n, d)
    }

    #[test]
    fn fork_history_policies() {
        let m = fixtures::fork::<Rational>();
        let policies = enumerate_history_det(&m, POLICY_CAP).unwrap();
        let mut values: Vec<Rational> = policies.iter().map(|p| policy_value(&m, p)).collect();
        values.sort();
        assert_eq!(values, vec![q(0, 1), q(1, 2), q(1, 2), q(1, 1)]);
        assert_eq!(values.iter().filter(|v| **v <= q(1, 2)).count(), 3);
    }

    #[test]
    fn dag_values_match_fork() {
        let m = fixtures::fork::<Rational>();
        assert_eq!(dag_values(&m, Objective::Max).unwrap()[0], q(1, 1));
        assert_eq!(dag_values(&m, Objective::Min).unwrap()[0], q(0, 1));
    }

    #[test]
    fn impossibility_on_fork() {
        let m = fixtures::fork::<Rational>();
        let r = impossibility_on(&m, FORK_GADGET, q(1, 2)).unwrap();
        assert_eq!((r.unsafe_value.clone(), r.safe_values.clone()), (q(1, 1), (q(1, 2), q(1, 2))));
        assert!(r.confirmed() && r.optimistic_allows_unsafe && r.pessimistic_blocks_safe);
    }

    #[test]
    fn impossibility_general_threshold() {
        let r = impossibility_demo(q(3, 10)).unwrap();
        assert!(r.confirmed());
        assert_eq!(r.gadget_value, q(1, 2));
        assert!(impossibility_demo(q(0, 1)).is_err());
    }

    #[test]
    fn saturated_family_on_fork() {
        for k in 0..=4 {
            let p = q(k, 4);
            let ml = fork_saturated(p.clone()).unwrap();
            assert_eq!(ml.value(), q(1, 2));
            let mut wider = ml.clone();
            let risky = if k < 4 { (fixtures::S1, fixtures::FORK_BETA) } else { (fixtures::S2, fixtures::FORK_DELTA) };
            let (accepted, value) = wider.extend(risky.0, &Dist::dirac(risky.1)).unwrap();
            assert!(!accepted && value > q(1, 2));
        }
    }
}
