//! Reach-Bad values, Q-values, safe actions and reward Q-tables.
//!
//! Exact mode runs policy iteration with exact Gaussian elimination. Float
//! mode runs interval iteration (from below and from above) after collapsing
//! maximal end components, so every float result carries a certified upper
//! bound next to the approximation from below.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::dist::Dist;
use crate::error::{Error, Result};
use crate::ids::{ActionId, StateId};
use crate::mdp::Mdp;
use crate::num::Prob;

const FLOAT_GAP: f64 = 1e-12;
const MAX_SWEEPS: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Min,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundKind {
    Exact,
    /// `values` approximate from below; `upper` is a certified upper bound.
    FromBelow,
    /// Float policy iteration by linear solves, used when the sweep budget
    /// runs out; no certified bracket.
    Solved,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueVector<T> {
    pub objective: Objective,
    pub values: Vec<T>,
    /// Certified upper bound; equals `values` in exact mode.
    pub upper: Vec<T>,
    pub converged: bool,
    pub bound: BoundKind,
}

impl<T: Prob> ValueVector<T> {
    fn exact(objective: Objective, values: Vec<T>) -> Self {
        ValueVector { objective, upper: values.clone(), values, converged: true, bound: BoundKind::Exact }
    }

    pub fn at(&self, s: StateId) -> &T {
        &self.values[s.idx()]
    }

    /// The value safety decisions are based on.
    pub fn decision(&self, s: StateId) -> &T {
        &self.upper[s.idx()]
    }
}

/// States from which `targets` is reachable with positive probability under some policy.
pub fn can_reach(m: &Mdp<impl Prob>, targets: &[bool]) -> Vec<bool> {
    let n = m.num_states();
    let mut preds: Vec<Vec<u32>> = vec![Vec::new(); n];
    for s in m.states() {
        for t in m.transitions(s) {
            for (next, _) in &t.succ {
                preds[next.idx()].push(s.0);
            }
        }
    }
    let mut seen = targets.to_vec();
    let mut stack: Vec<u32> = (0..n as u32).filter(|&s| targets[s as usize]).collect();
    while let Some(s) = stack.pop() {
        for &p in &preds[s as usize] {
            if !seen[p as usize] {
                seen[p as usize] = true;
                stack.push(p);
            }
        }
    }
    seen
}

/// States where some policy avoids Bad surely (`V_min = 0`): the greatest set of
/// non-bad states each having an action whose support stays inside the set.
pub fn avoid_surely(m: &Mdp<impl Prob>) -> Vec<bool> {
    let mut inside: Vec<bool> = m.states().map(|s| !m.is_bad(s)).collect();
    loop {
        let mut changed = false;
        for s in m.states() {
            if inside[s.idx()]
                && !m.transitions(s).iter().any(|t| t.succ.iter().all(|(n, _)| inside[n.idx()]))
            {
                inside[s.idx()] = false;
                changed = true;
            }
        }
        if !changed {
            return inside;
        }
    }
}

/// Strongly connected components (iterative Tarjan) of the graph given by
/// `edges`, restricted to `active` nodes. Inactive nodes get `u32::MAX`.
fn scc(n: usize, active: &[bool], edges: &dyn Fn(usize, &mut Vec<usize>)) -> Vec<u32> {
    const UNSEEN: u32 = u32::MAX;
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0u32; n];
    let mut on_stack = vec![false; n];
    let mut comp = vec![UNSEEN; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut next_index = 0u32;
    let mut next_comp = 0u32;
    // DFS frames: (node, successors, next position)
    let mut frames: Vec<(usize, Vec<usize>, usize)> = Vec::new();
    for root in 0..n {
        if !active[root] || index[root] != UNSEEN {
            continue;
        }
        let mut pending = Some(root);
        loop {
            if let Some(v) = pending.take() {
                index[v] = next_index;
                low[v] = next_index;
                next_index += 1;
                stack.push(v);
                on_stack[v] = true;
                let mut succ = Vec::new();
                edges(v, &mut succ);
                succ.retain(|&w| active[w]);
                frames.push((v, succ, 0));
            }
            let Some(top) = frames.last_mut() else { break };
            let v = top.0;
            if top.2 < top.1.len() {
                let w = top.1[top.2];
                top.2 += 1;
                if index[w] == UNSEEN {
                    pending = Some(w);
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            frames.pop();
            if let Some(parent) = frames.last() {
                low[parent.0] = low[parent.0].min(low[v]);
            }
            if low[v] == index[v] {
                while let Some(w) = stack.pop() {
                    on_stack[w] = false;
                    comp[w] = next_comp;
                    if w == v {
                        break;
                    }
                }
                next_comp += 1;
            }
        }
    }
    comp
}

/// Maximal end components among non-bad states.
///
/// Returns, per state, the component id (`None` outside every MEC) and per
/// state the sorted list of actions that stay inside its component.
pub fn maximal_end_components<T: Prob>(m: &Mdp<T>) -> (Vec<Option<u32>>, Vec<Vec<ActionId>>) {
    let n = m.num_states();
    let mut active: Vec<bool> = m.states().map(|s| !m.is_bad(s)).collect();
    let mut kept: Vec<Vec<ActionId>> = m
        .states()
        .map(|s| if active[s.idx()] { m.actions(s) } else { Vec::new() })
        .collect();
    loop {
        let comp = {
            let kept = &kept;
            let edges = move |v: usize, out: &mut Vec<usize>| {
                for &a in &kept[v] {
                    if let Some(succ) = m.successors(StateId(v as u32), a) {
                        out.extend(succ.iter().map(|(t, _)| t.idx()));
                    }
                }
            };
            scc(n, &active, &edges)
        };
        let mut changed = false;
        for v in 0..n {
            if !active[v] {
                continue;
            }
            let before = kept[v].len();
            kept[v].retain(|&a| {
                m.successors(StateId(v as u32), a)
                    .is_some_and(|succ| succ.iter().all(|(t, _)| active[t.idx()] && comp[t.idx()] == comp[v]))
            });
            if kept[v].len() != before {
                changed = true;
            }
            if kept[v].is_empty() {
                active[v] = false;
                changed = true;
            }
        }
        if !changed {
            let mut ids: Vec<Option<u32>> = vec![None; n];
            let mut renumber: Vec<Option<u32>> = Vec::new();
            for v in 0..n {
                if active[v] {
                    let c = comp[v] as usize;
                    if renumber.len() <= c {
                        renumber.resize(c + 1, None);
                    }
                    let next = renumber.iter().flatten().count() as u32;
                    ids[v] = Some(*renumber[c].get_or_insert(next));
                }
            }
            return (ids, kept);
        }
    }
}

/// `Σ_{s'} P(s, a, s')·V(s')`.
pub fn q_action<T: Prob>(m: &Mdp<T>, v: &[T], s: StateId, a: ActionId) -> Option<T> {
    m.successors(s, a)
        .map(|succ| succ.iter().fold(T::zero(), |acc, (t, p)| acc + p.clone() * v[t.idx()].clone()))
}

/// `Q(s, d) = Σ_α d(α) Σ_{s'} P(s, α, s')·V(s')`.
pub fn q_value<T: Prob>(m: &Mdp<T>, v: &[T], s: StateId, d: &Dist<T>) -> Result<T> {
    let mut total = T::zero();
    for (a, w) in d.entries() {
        let q = q_action(m, v, s, *a).ok_or_else(|| {
            Error::invalid(format!("action {} is not available at {}", m.action_name(*a), m.state_name(s)))
        })?;
        total = total + w.clone() * q;
    }
    Ok(total)
}

/// `V_min` or `V_max` of reaching Bad.
pub fn reach_values<T: Prob>(m: &Mdp<T>, objective: Objective) -> Result<ValueVector<T>> {
    let bad: Vec<bool> = m.states().map(|s| m.is_bad(s)).collect();
    let reach = can_reach(m, &bad);
    // fixed[s] = Some(value) for states settled by graph analysis
    let mut fixed: Vec<Option<T>> = m
        .states()
        .map(|s| {
            if bad[s.idx()] {
                Some(T::one())
            } else if !reach[s.idx()] {
                Some(T::zero())
            } else {
                None
            }
        })
        .collect();
    if objective == Objective::Min {
        for (s, zero) in avoid_surely(m).into_iter().enumerate() {
            if zero {
                fixed[s] = Some(T::zero());
            }
        }
    }
    if fixed.iter().all(Option::is_some) {
        return Ok(ValueVector::exact(objective, fixed.into_iter().map(Option::unwrap).collect()));
    }
    if T::EXACT {
        return policy_iteration(m, objective, &fixed).map(|v| ValueVector::exact(objective, v));
    }
    match interval_iteration(m, objective, &fixed) {
        // near-one self loops stall the sweeps; solve the linear systems instead
        Err(Error::ResourceExhausted(_)) => {
            let values = policy_iteration(m, objective, &fixed)?;
            Ok(ValueVector { objective, upper: values.clone(), values, converged: true, bound: BoundKind::Solved })
        }
        other => other,
    }
}

/// Strict improvement; float mode asks for a margin so rounding cannot cycle.
fn better<T: Prob>(objective: Objective, candidate: &T, current: &T) -> bool {
    let margin = if T::EXACT { T::zero() } else { T::from_f64(1e-12) };
    match objective {
        Objective::Min => candidate.clone() + margin < *current,
        Objective::Max => candidate.clone() > current.clone() + margin,
    }
}

/// Solves `A x = b` by Gaussian elimination; `None` if singular.
pub(crate) fn solve_linear<T: Prob>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Option<Vec<T>> {
    let n = b.len();
    for col in 0..n {
        let pivot = if T::EXACT {
            (col..n).find(|&r| !a[r][col].is_zero())?
        } else {
            let best = (col..n).max_by(|&x, &y| {
                a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap_or(core::cmp::Ordering::Equal)
            })?;
            if a[best][col].is_zero() {
                return None;
            }
            best
        };
        a.swap(col, pivot);
        b.swap(col, pivot);
        let inv = T::one() / a[col][col].clone();
        for r in col + 1..n {
            if a[r][col].is_zero() {
                continue;
            }
            let factor = a[r][col].clone() * inv.clone();
            for c in col..n {
                let delta = factor.clone() * a[col][c].clone();
                a[r][c] = a[r][c].clone() - delta;
            }
            b[r] = b[r].clone() - factor * b[col].clone();
        }
    }
    let mut x = vec![T::zero(); n];
    for r in (0..n).rev() {
        let mut acc = b[r].clone();
        for c in r + 1..n {
            acc = acc - a[r][c].clone() * x[c].clone();
        }
        x[r] = acc / a[r][r].clone();
    }
    Some(x)
}

/// Value of a memoryless deterministic policy given settled states.
/// States that cannot reach an unsettled-positive target under the policy get 0.
fn evaluate_policy<T: Prob>(m: &Mdp<T>, policy: &[Option<ActionId>], fixed: &[Option<T>]) -> Vec<T> {
    let n = m.num_states();
    // states with positive probability of reaching a fixed state with positive value
    let mut positive: Vec<bool> = fixed.iter().map(|f| f.as_ref().is_some_and(|v| *v > T::zero())).collect();
    loop {
        let mut changed = false;
        for s in 0..n {
            if positive[s] || fixed[s].is_some() {
                continue;
            }
            let a = policy[s].expect("policy defined on unsettled states");
            let succ = m.successors(StateId(s as u32), a).expect("available action");
            if succ.iter().any(|(t, _)| positive[t.idx()]) {
                positive[s] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let unknown: Vec<usize> = (0..n).filter(|&s| fixed[s].is_none() && positive[s]).collect();
    let mut slot = vec![usize::MAX; n];
    for (i, &s) in unknown.iter().enumerate() {
        slot[s] = i;
    }
    let k = unknown.len();
    let mut a = vec![vec![T::zero(); k]; k];
    let mut b = vec![T::zero(); k];
    for (i, &s) in unknown.iter().enumerate() {
        a[i][i] = T::one();
        let act = policy[s].expect("policy defined");
        for (t, p) in m.successors(StateId(s as u32), act).expect("available") {
            if let Some(v) = &fixed[t.idx()] {
                b[i] = b[i].clone() + p.clone() * v.clone();
            } else if slot[t.idx()] != usize::MAX {
                a[i][slot[t.idx()]] = a[i][slot[t.idx()]].clone() - p.clone();
            }
        }
    }
    let x = solve_linear(a, b).expect("proper policy yields a non-singular system");
    (0..n)
        .map(|s| match &fixed[s] {
            Some(v) => v.clone(),
            None if slot[s] != usize::MAX => x[slot[s]].clone(),
            None => T::zero(),
        })
        .collect()
}

fn policy_iteration<T: Prob>(m: &Mdp<T>, objective: Objective, fixed: &[Option<T>]) -> Result<Vec<T>> {
    let mut policy: Vec<Option<ActionId>> = m
        .states()
        .map(|s| fixed[s.idx()].is_none().then(|| m.transitions(s)[0].action))
        .collect();
    loop {
        let v = evaluate_policy(m, &policy, fixed);
        let mut switched = false;
        for s in m.states() {
            let Some(current) = policy[s.idx()] else { continue };
            let mut best_q = q_action(m, &v, s, current).expect("available");
            let mut best = current;
            for t in m.transitions(s) {
                let q = q_action(m, &v, s, t.action).expect("available");
                if better(objective, &q, &best_q) {
                    best_q = q;
                    best = t.action;
                }
            }
            if best != current {
                policy[s.idx()] = Some(best);
                switched = true;
            }
        }
        if !switched {
            return Ok(v);
        }
    }
}

fn interval_iteration<T: Prob>(m: &Mdp<T>, objective: Objective, fixed: &[Option<T>]) -> Result<ValueVector<T>> {
    let n = m.num_states();
    // class per state; every MEC (max objective only) collapses to one class
    let mut class: Vec<usize> = (0..n).collect();
    let mut exits: Vec<Vec<(StateId, ActionId)>> = m
        .states()
        .map(|s| m.actions(s).into_iter().map(|a| (s, a)).collect())
        .collect();
    if objective == Objective::Max {
        let (mec, inner) = maximal_end_components(m);
        let mut rep: Vec<Option<usize>> = Vec::new();
        for s in 0..n {
            if let Some(c) = mec[s] {
                let c = c as usize;
                if rep.len() <= c {
                    rep.resize(c + 1, None);
                }
                let r = *rep[c].get_or_insert(s);
                class[s] = r;
            }
        }
        for s in 0..n {
            if mec[s].is_some() {
                let outgoing: Vec<(StateId, ActionId)> = m
                    .actions(StateId(s as u32))
                    .into_iter()
                    .filter(|a| inner[s].binary_search(a).is_err())
                    .map(|a| (StateId(s as u32), a))
                    .collect();
                exits[s].clear();
                let r = class[s];
                exits[r].extend(outgoing);
            }
        }
    }
    let reps: Vec<usize> = (0..n).filter(|&s| class[s] == s && fixed[s].is_none()).collect();
    let fixed_class: Vec<Option<f64>> = (0..n)
        .map(|s| fixed[class[s]].as_ref().or(fixed[s].as_ref()).map(|v| v.to_f64()))
        .collect();
    let mut lower: Vec<f64> = (0..n).map(|s| fixed_class[s].unwrap_or(0.0)).collect();
    let mut upper: Vec<f64> = (0..n).map(|s| fixed_class[s].unwrap_or(1.0)).collect();
    for &r in &reps {
        if exits[r].is_empty() {
            // closed MEC without Bad
            lower[r] = 0.0;
            upper[r] = 0.0;
        }
    }
    let eval = |vals: &[f64], s: StateId, a: ActionId| -> f64 {
        m.successors(s, a)
            .expect("available")
            .iter()
            .map(|(t, p)| p.to_f64() * vals[class[t.idx()]])
            .sum()
    };
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut gap: f64 = 0.0;
        for &r in &reps {
            if exits[r].is_empty() {
                continue;
            }
            let pick = |vals: &[f64]| {
                let it = exits[r].iter().map(|&(s, a)| eval(vals, s, a));
                match objective {
                    Objective::Min => it.fold(f64::INFINITY, f64::min),
                    Objective::Max => it.fold(f64::NEG_INFINITY, f64::max),
                }
            };
            let lo = pick(&lower).clamp(0.0, 1.0);
            let hi = pick(&upper).clamp(0.0, 1.0);
            lower[r] = lo.max(lower[r]);
            upper[r] = hi.min(upper[r]).max(lower[r]);
            gap = gap.max(upper[r] - lower[r]);
        }
        if gap <= FLOAT_GAP {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::exhausted(format!("interval iteration did not converge in {MAX_SWEEPS} sweeps")));
    }
    let spread = |vals: &[f64]| -> Vec<T> {
        (0..n)
            .map(|s| match &fixed[s] {
                Some(v) => v.clone(),
                None => T::from_f64(vals[class[s]]),
            })
            .collect()
    };
    Ok(ValueVector {
        objective,
        values: spread(&lower),
        upper: spread(&upper),
        converged,
        bound: BoundKind::FromBelow,
    })
}

/// `{α ∈ Act(s) | Q_min(s, 1_α) = V_min(s)}` up to [`Prob::safe_tol`].
pub fn safe_actions<T: Prob>(m: &Mdp<T>, v_min: &ValueVector<T>, s: StateId) -> Vec<ActionId> {
    let v = v_min.decision(s);
    let qs: Vec<(ActionId, T)> = m
        .transitions(s)
        .iter()
        .map(|t| (t.action, q_action(m, &v_min.upper, s, t.action).expect("available")))
        .collect();
    let tol = T::safe_tol();
    let safe: Vec<ActionId> = qs
        .iter()
        .filter(|(_, q)| (q.clone() - v.clone()).abs() <= tol)
        .map(|(a, _)| *a)
        .collect();
    if !safe.is_empty() {
        return safe;
    }
    // numerical corner: keep the minimizers
    let best = qs.iter().map(|(_, q)| q.clone()).fold(None, |acc: Option<T>, q| match acc {
        Some(b) if b <= q => Some(b),
        _ => Some(q),
    });
    let best = best.expect("every state has an action");
    qs.into_iter().filter(|(_, q)| *q == best).map(|(a, _)| a).collect()
}

/// Everything shields need about a model: both value vectors and the safe-action table.
#[derive(Clone, Debug)]
pub struct Analysis<T> {
    pub model: Arc<Mdp<T>>,
    pub v_min: ValueVector<T>,
    pub v_max: ValueVector<T>,
    safe: Vec<Vec<ActionId>>,
}

impl<T: Prob> Analysis<T> {
    pub fn new(model: Mdp<T>) -> Result<Self> {
        Self::from_arc(Arc::new(model))
    }

    pub fn from_arc(model: Arc<Mdp<T>>) -> Result<Self> {
        let v_min = reach_values(&model, Objective::Min)?;
        let v_max = reach_values(&model, Objective::Max)?;
        let safe = model.states().map(|s| safe_actions(&model, &v_min, s)).collect();
        Ok(Analysis { model, v_min, v_max, safe })
    }

    pub fn model(&self) -> &Mdp<T> {
        &self.model
    }

    pub fn safe(&self, s: StateId) -> &[ActionId] {
        &self.safe[s.idx()]
    }

    pub fn is_safe_action(&self, s: StateId, a: ActionId) -> bool {
        self.safe[s.idx()].binary_search(&a).is_ok()
    }

    /// `Supp(d) ⊆ SafeAct(s)`.
    pub fn is_safe_choice(&self, s: StateId, d: &Dist<T>) -> bool {
        d.supported_within(self.safe(s))
    }

    pub fn vmin(&self, s: StateId) -> &T {
        self.v_min.decision(s)
    }

    pub fn vmax(&self, s: StateId) -> &T {
        self.v_max.decision(s)
    }

    pub fn q_min(&self, s: StateId, d: &Dist<T>) -> Result<T> {
        q_value(&self.model, &self.v_min.upper, s, d)
    }

    pub fn q_max(&self, s: StateId, d: &Dist<T>) -> Result<T> {
        q_value(&self.model, &self.v_max.upper, s, d)
    }

    /// `ν ≥ V_min(s0)`, the standing assumption for every shield.
    pub fn check_threshold(&self, nu: &T) -> Result<()> {
        let floor = self.vmin(self.model.initial());
        if nu.clone() + T::eps() < *floor || *nu > T::one() {
            return Err(Error::precondition(format!(
                "threshold {nu} is below V_min(s0) = {floor} or above 1"
            )));
        }
        Ok(())
    }
}

/// Horizon or discount for reward Q-tables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RewardObjective {
    Horizon(usize),
    Discounted(f64),
}

impl Default for RewardObjective {
    fn default() -> Self {
        RewardObjective::Horizon(50)
    }
}

/// Expected total reward per available `(state, action)`, aligned with `Mdp::transitions`.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardTable {
    q: Vec<Vec<(ActionId, f64)>>,
}

impl RewardTable {
    pub fn get(&self, s: StateId, a: ActionId) -> Option<f64> {
        let row = &self.q[s.idx()];
        row.binary_search_by_key(&a, |(b, _)| *b).ok().map(|i| row[i].1)
    }

    pub fn row(&self, s: StateId) -> &[(ActionId, f64)] {
        &self.q[s.idx()]
    }
}

pub fn reward_values<T: Prob>(m: &Mdp<T>, objective: RewardObjective) -> Result<RewardTable> {
    if !m.has_rewards() {
        return Err(Error::invalid("model has no rewards"));
    }
    let backup = |v: &[f64]| -> Vec<Vec<(ActionId, f64)>> {
        m.states()
            .map(|s| {
                m.transitions(s)
                    .iter()
                    .map(|t| {
                        let future: f64 = t.succ.iter().map(|(n, p)| p.to_f64() * v[n.idx()]).sum();
                        (t.action, t.reward + future)
                    })
                    .collect()
            })
            .collect()
    };
    let best = |q: &[Vec<(ActionId, f64)>], scale: f64| -> Vec<f64> {
        q.iter().map(|row| scale * row.iter().map(|(_, x)| *x).fold(f64::NEG_INFINITY, f64::max)).collect()
    };
    let n = m.num_states();
    match objective {
        RewardObjective::Horizon(h) => {
            let mut v = vec![0.0; n];
            let mut q = backup(&v);
            for _ in 0..h {
                q = backup(&v);
                v = best(&q, 1.0);
            }
            if h == 0 {
                for row in &mut q {
                    for e in row.iter_mut() {
                        e.1 = 0.0;
                    }
                }
            }
            Ok(RewardTable { q })
        }
        RewardObjective::Discounted(gamma) => {
            if !(0.0..1.0).contains(&gamma) {
                return Err(Error::invalid("discount must lie in [0,1)"));
            }
            let mut v = vec![0.0; n];
            for _ in 0..MAX_SWEEPS {
                let q = backup(&v);
                let next = best(&q, gamma);
                let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                v = next;
                if delta <= 1e-12 {
                    return Ok(RewardTable { q: backup(&v) });
                }
            }
            Err(Error::exhausted("discounted reward iteration did not converge"))
        }
    }
}
