//! Shield interface and the tally-free and tally-based shields.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;

use crate::dist::Dist;
use crate::error::{Error, Result};
use crate::history::History;
use crate::ids::{ActionId, StateId};
use crate::num::Prob;
use crate::valuation::Analysis;

/// Outcome of one shield query.
#[derive(Clone, Debug, PartialEq)]
pub struct ShieldDecision<T> {
    pub executed: Dist<T>,
    pub intervened: bool,
}

impl<T: Prob> ShieldDecision<T> {
    pub fn allow(d: &Dist<T>) -> Self {
        ShieldDecision { executed: d.clone(), intervened: false }
    }

    /// Canonical projection `d|_{SafeAct(s)}`; not an intervention when `d` is already safe.
    pub fn project(analysis: &Analysis<T>, s: StateId, d: &Dist<T>) -> Result<Self> {
        let executed = d.restrict(analysis.safe(s))?;
        let intervened = !executed.same_as(d);
        Ok(ShieldDecision { executed, intervened })
    }

    /// Passes `d` through when `allowed`, projects otherwise.
    pub fn canonical(analysis: &Analysis<T>, s: StateId, d: &Dist<T>, allowed: bool) -> Result<Self> {
        if allowed {
            Ok(Self::allow(d))
        } else {
            Self::project(analysis, s, d)
        }
    }
}

/// A post-shield: maps (history, proposed choice) to the executed choice.
///
/// Engines may carry per-episode state. Callers report every executed step
/// through [`Shield::observe`] and call [`Shield::reset`] between episodes.
pub trait Shield<T: Prob> {
    fn name(&self) -> String;

    fn decide(&mut self, h: &History<T>, d: &Dist<T>) -> Result<ShieldDecision<T>>;

    /// `h` is the history before the step; `executed` the choice actually played.
    fn observe(&mut self, _h: &History<T>, _executed: &Dist<T>, _action: ActionId, _next: StateId) -> Result<()> {
        Ok(())
    }

    fn reset(&mut self) {}

    /// Finite-memory view used by exact evaluation; `None` for shields without one.
    fn as_markov(&self) -> Option<&dyn MarkovShield<T>> {
        None
    }

    fn is_allowed(&mut self, h: &History<T>, d: &Dist<T>) -> Result<bool> {
        Ok(!self.decide(h, d)?.intervened)
    }
}

/// Shields whose decisions depend on the history only through a finite cursor.
pub trait MarkovShield<T: Prob> {
    fn initial_cursor(&self) -> u32 {
        0
    }

    fn decide_at(&self, cursor: u32, s: StateId, d: &Dist<T>) -> Result<ShieldDecision<T>>;

    fn advance(&self, _cursor: u32, _executed: &Dist<T>, _action: ActionId, _next: StateId) -> u32 {
        0
    }
}

/// Queries the shield, checks the sample against the executed choice and
/// appends `(executed, α, s')` to the history.
pub fn transform_step<T: Prob, S: Shield<T> + ?Sized>(
    shield: &mut S,
    h: &mut History<T>,
    d: &Dist<T>,
    sampled: (ActionId, StateId),
    model: &crate::mdp::Mdp<T>,
) -> Result<ShieldDecision<T>> {
    let decision = shield.decide(h, d)?;
    let (action, next) = sampled;
    if !decision.executed.contains(action) {
        return Err(Error::invalid(format!(
            "sampled action {} is outside the executed choice {}",
            model.action_name(action),
            decision.executed
        )));
    }
    if model.prob(h.last(), action, next) <= T::zero() {
        return Err(Error::invalid(format!(
            "successor {} has probability zero",
            model.state_name(next)
        )));
    }
    shield.observe(h, &decision.executed, action, next)?;
    h.push(decision.executed.clone(), action, next);
    Ok(decision)
}

/// Never intervenes.
#[derive(Clone, Debug, Default)]
pub struct IdentityShield;

impl<T: Prob> Shield<T> for IdentityShield {
    fn name(&self) -> String {
        "identity".into()
    }
    fn decide(&mut self, _h: &History<T>, d: &Dist<T>) -> Result<ShieldDecision<T>> {
        Ok(ShieldDecision::allow(d))
    }
    fn as_markov(&self) -> Option<&dyn MarkovShield<T>> {
        Some(self)
    }
}

impl<T: Prob> MarkovShield<T> for IdentityShield {
    fn decide_at(&self, _cursor: u32, _s: StateId, d: &Dist<T>) -> Result<ShieldDecision<T>> {
        Ok(ShieldDecision::allow(d))
    }
}

/// Projects every choice onto the safe actions of the current state.
#[derive(Clone, Debug)]
pub struct SafeShield<T> {
    analysis: Arc<Analysis<T>>,
}

impl<T: Prob> SafeShield<T> {
    pub fn new(analysis: Arc<Analysis<T>>) -> Self {
        SafeShield { analysis }
    }
}

pub fn shield_safe<T: Prob>(analysis: &Analysis<T>, s: StateId, d: &Dist<T>) -> Result<ShieldDecision<T>> {
    analysis.model().check_choice(s, d)?;
    ShieldDecision::project(analysis, s, d)
}

impl<T: Prob> Shield<T> for SafeShield<T> {
    fn name(&self) -> String {
        "safe".into()
    }
    fn decide(&mut self, h: &History<T>, d: &Dist<T>) -> Result<ShieldDecision<T>> {
        shield_safe(&self.analysis, h.last(), d)
    }
    fn as_markov(&self) -> Option<&dyn MarkovShield<T>> {
        Some(self)
    }
}

impl<T: Prob> MarkovShield<T> for SafeShield<T> {
    fn decide_at(&self, _cursor: u32, s: StateId, d: &Dist<T>) -> Result<ShieldDecision<T>> {
        shield_safe(&self.analysis, s, d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeltaVariant {
    /// Allow iff `Q_min(s, d)·δ ≤ V_min(s)`.
    Multiplicative,
    /// Allow iff `Q_min(s, d) − δ ≤ V_min(s)`.
    Additive,
}

pub fn shield_delta<T: Prob>(
    analysis: &Analysis<T>,
    s: StateId,
    d: &Dist<T>,
    delta: &T,
    variant: DeltaVariant,
) -> Result<ShieldDecision<T>> {
    let q = analysis.q_min(s, d)?;
    let lhs = match variant {
        DeltaVariant::Multiplicative => q * delta.clone(),
        DeltaVariant::Additive => q - delta.clone(),
    };
    ShieldDecision::canonical(analysis, s, d, lhs.le_eps(analysis.vmin(s)))
}

#[derive(Clone, Debug)]
pub struct DeltaShield<T> {
    analysis: Arc<Analysis<T>>,
    delta: T,
    variant: DeltaVariant,
}

impl<T: Prob> DeltaShield<T> {
    pub fn new(analysis: Arc<Analysis<T>>, delta: T, variant: DeltaVariant) -> Result<Self> {
        if delta < T::zero() || delta > T::one() {
            return Err(Error::invalid(format!("delta must lie in [0,1], got {delta}")));
        }
        Ok(DeltaShield { analysis, delta, variant })
    }
}

impl<T: Prob> Shield<T> for DeltaShield<T> {
    fn name(&self) -> String {
        match self.variant {
            DeltaVariant::Multiplicative => "delta".into(),
            DeltaVariant::Additive => "delta-add".into(),
        }
    }
    fn decide(&mut self, h: &History<T>, d: &Dist<T>) -> Result<ShieldDecision<T>> {
        shield_delta(&self.analysis, h.last(), d, &self.delta, self.variant)
    }
    fn as_markov(&self) -> Option<&dyn MarkovShield<T>> {
        Some(self)
    }
}

impl<T: Prob> MarkovShield<T> for DeltaShield<T> {
    fn decide_at(&self, _cursor: u32, s: StateId, d: &Dist<T>) -> Result<ShieldDecision<T>> {
        shield_delta(&self.analysis, s, d, &self.delta, self.variant)
    }
}

/// Shield defined by a closure over the history; handy for ad-hoc history-dependent shields.
pub struct FnShield<F> {
    pub name: String,
    pub rule: F,
}

impl<T: Prob, F: FnMut(&History<T>, &Dist<T>) -> Result<Dist<T>>> Shield<T> for FnShield<F> {
    fn name(&self) -> String {
        self.name.clone()
    }
    fn decide(&mut self, h: &History<T>, d: &Dist<T>) -> Result<ShieldDecision<T>> {
        let executed = (self.rule)(h, d)?;
        let intervened = !executed.same_as(d);
        Ok(ShieldDecision { executed, intervened })
    }
}

/// `irisk(h, d) = Σ_k Pr(h|_k)·(Q_min(s_k, d_{k+1}) − V_min(s_k))`, one pass over `h`.
pub fn incurred_risk<T: Prob>(analysis: &Analysis<T>, h: &History<T>, d: &Dist<T>) -> Result<T> {
    TallyState::replay(analysis, TallyKind::Optimistic, &T::zero(), h)?.candidate(analysis, h.last(), d)
}

/// `isafety(h, d) = Σ_k Pr(h|_k)·(V_max(s_k) − Q_max(s_k, d_{k+1}))`.
pub fn incurred_safety<T: Prob>(analysis: &Analysis<T>, h: &History<T>, d: &Dist<T>) -> Result<T> {
    TallyState::replay(analysis, TallyKind::Pessimistic, &T::zero(), h)?.candidate(analysis, h.last(), d)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TallyKind {
    Optimistic,
    Pessimistic,
}

/// Below this the float path probability is carried in log space.
const LOG_SWITCH: f64 = 1e-300;

/// Running incurred risk (optimistic) or incurred safety (pessimistic).
#[derive(Clone, Debug, PartialEq)]
pub struct TallyState<T> {
    pub kind: TallyKind,
    pub cumulative: T,
    pub budget: T,
    path_prob: T,
    log_path_prob: Option<f64>,
    steps: usize,
}

impl<T: Prob> TallyState<T> {
    /// Fresh tally at `s0` with `b_min = ν − V_min(s0)` or `b_max = V_max(s0) − ν`.
    pub fn fresh(analysis: &Analysis<T>, kind: TallyKind, nu: &T) -> Self {
        let s0 = analysis.model().initial();
        let budget = match kind {
            TallyKind::Optimistic => nu.clone() - analysis.vmin(s0).clone(),
            TallyKind::Pessimistic => analysis.vmax(s0).clone() - nu.clone(),
        };
        TallyState { kind, cumulative: T::zero(), budget, path_prob: T::one(), log_path_prob: None, steps: 0 }
    }

    /// Tally after the recorded choices of `h` (Alg. 1 without the final term).
    pub fn replay(analysis: &Analysis<T>, kind: TallyKind, nu: &T, h: &History<T>) -> Result<Self> {
        let mut tally = Self::fresh(analysis, kind, nu);
        let mut s = h.start();
        for step in h.steps() {
            tally.commit(analysis, s, &step.choice)?;
            tally.advance(step.choice.prob(step.action) * analysis.model().prob(s, step.action, step.next));
            s = step.next;
        }
        Ok(tally)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn path_prob(&self) -> f64 {
        match self.log_path_prob {
            Some(l) => libm::exp(l),
            None => self.path_prob.to_f64(),
        }
    }

    fn weighted(&self, x: T) -> T {
        match self.log_path_prob {
            Some(l) if x > T::zero() => T::from_f64(libm::exp(l + libm::log(x.to_f64()))),
            Some(_) => T::zero(),
            None => self.path_prob.clone() * x,
        }
    }

    /// Per-step increment `Pr(h)·(Q_min − V_min)` or `Pr(h)·(V_max − Q_max)`.
    pub fn increment(&self, analysis: &Analysis<T>, s: StateId, d: &Dist<T>) -> Result<T> {
        let gap = match self.kind {
            TallyKind::Optimistic => analysis.q_min(s, d)? - analysis.vmin(s).clone(),
            TallyKind::Pessimistic => analysis.vmax(s).clone() - analysis.q_max(s, d)?,
        };
        // float noise must not make the tally decrease
        let gap = if gap < T::zero() && !T::EXACT { T::zero() } else { gap };
        Ok(self.weighted(gap))
    }

    /// Tally value if `d` were played now.
    pub fn candidate(&self, analysis: &Analysis<T>, s: StateId, d: &Dist<T>) -> Result<T> {
        Ok(self.cumulative.clone() + self.increment(analysis, s, d)?)
    }

    pub fn allows(&self, analysis: &Analysis<T>, s: StateId, d: &Dist<T>) -> Result<bool> {
        let value = self.candidate(analysis, s, d)?;
        Ok(match self.kind {
            TallyKind::Optimistic => value.le_eps(&self.budget),
            TallyKind::Pessimistic => value >= self.budget,
        })
    }

    /// Adds the executed choice's increment.
    pub fn commit(&mut self, analysis: &Analysis<T>, s: StateId, executed: &Dist<T>) -> Result<()> {
        self.cumulative = self.candidate(analysis, s, executed)?;
        Ok(())
    }

    /// Multiplies the path probability by `executed(α)·P(s, α, s')`.
    pub fn advance(&mut self, factor: T) {
        self.steps += 1;
        match self.log_path_prob.as_mut() {
            Some(l) => *l += libm::log(factor.to_f64()),
            None => {
                self.path_prob = self.path_prob.clone() * factor;
                if !T::EXACT {
                    let p = self.path_prob.to_f64();
                    if p < LOG_SWITCH && p > 0.0 {
                        self.log_path_prob = Some(libm::log(p));
                    }
                }
            }
        }
    }
}

/// One optimistic step: decision plus the tally after committing the executed choice.
pub fn shield_opt_step<T: Prob>(
    tally: &TallyState<T>,
    analysis: &Analysis<T>,
    s: StateId,
    d: &Dist<T>,
) -> Result<(ShieldDecision<T>, TallyState<T>)> {
    tally_step(tally, analysis, s, d, TallyKind::Optimistic)
}

pub fn shield_pess_step<T: Prob>(
    tally: &TallyState<T>,
    analysis: &Analysis<T>,
    s: StateId,
    d: &Dist<T>,
) -> Result<(ShieldDecision<T>, TallyState<T>)> {
    tally_step(tally, analysis, s, d, TallyKind::Pessimistic)
}

fn tally_step<T: Prob>(
    tally: &TallyState<T>,
    analysis: &Analysis<T>,
    s: StateId,
    d: &Dist<T>,
    kind: TallyKind,
) -> Result<(ShieldDecision<T>, TallyState<T>)> {
    if tally.kind != kind {
        return Err(Error::invalid("tally kind does not match the shield"));
    }
    analysis.model().check_choice(s, d)?;
    let decision = ShieldDecision::canonical(analysis, s, d, tally.allows(analysis, s, d)?)?;
    let mut next = tally.clone();
    next.commit(analysis, s, &decision.executed)?;
    Ok((decision, next))
}

/// Optimistic or pessimistic shield with a running tally over the executed history.
///
/// Queries on a history other than the one the tally follows trigger a replay.
#[derive(Clone, Debug)]
pub struct TallyShield<T> {
    analysis: Arc<Analysis<T>>,
    nu: T,
    kind: TallyKind,
    tally: TallyState<T>,
    /// History the tally was accumulated along.
    run: History<T>,
}

impl<T: Prob> TallyShield<T> {
    pub fn new(analysis: Arc<Analysis<T>>, kind: TallyKind, nu: T) -> Result<Self> {
        analysis.check_threshold(&nu)?;
        let tally = TallyState::fresh(&analysis, kind, &nu);
        let run = History::new(analysis.model().initial());
        Ok(TallyShield { analysis, nu, kind, tally, run })
    }

    pub fn optimistic(analysis: Arc<Analysis<T>>, nu: T) -> Result<Self> {
        Self::new(analysis, TallyKind::Optimistic, nu)
    }

    pub fn pessimistic(analysis: Arc<Analysis<T>>, nu: T) -> Result<Self> {
        Self::new(analysis, TallyKind::Pessimistic, nu)
    }

    pub fn tally(&self) -> &TallyState<T> {
        &self.tally
    }

    fn sync(&mut self, h: &History<T>) -> Result<()> {
        if self.run != *h {
            self.tally = TallyState::replay(&self.analysis, self.kind, &self.nu, h)?;
            self.run = h.clone();
        }
        Ok(())
    }
}

impl<T: Prob> Shield<T> for TallyShield<T> {
    fn name(&self) -> String {
        match self.kind {
            TallyKind::Optimistic => "opt".into(),
            TallyKind::Pessimistic => "pess".into(),
        }
    }

    fn decide(&mut self, h: &History<T>, d: &Dist<T>) -> Result<ShieldDecision<T>> {
        self.sync(h)?;
        let s = h.last();
        self.analysis.model().check_choice(s, d)?;
        ShieldDecision::canonical(&self.analysis, s, d, self.tally.allows(&self.analysis, s, d)?)
    }

    fn observe(&mut self, h: &History<T>, executed: &Dist<T>, action: ActionId, next: StateId) -> Result<()> {
        self.sync(h)?;
        let s = h.last();
        self.tally.commit(&self.analysis, s, executed)?;
        self.tally.advance(executed.prob(action) * self.analysis.model().prob(s, action, next));
        self.run.push(executed.clone(), action, next);
        Ok(())
    }

    fn reset(&mut self) {
        self.tally = TallyState::fresh(&self.analysis, self.kind, &self.nu);
        self.run = History::new(self.analysis.model().initial());
    }
}
