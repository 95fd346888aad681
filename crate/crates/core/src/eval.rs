//! Exact finite-horizon evaluation of shielded agents, seeded simulation, and
//! the per-step versus episode-boundary update comparison.

use alloc::collections::BTreeMap;
use alloc::collections::VecDeque;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::agents::Agent;
use crate::constructed::{ConstructedShield, ROOT};
use crate::dist::Dist;
use crate::error::{Error, Result};
use crate::history::History;
use crate::ids::StateId;
use crate::mdp::Mdp;
use crate::num::Prob;
use crate::shields::{MarkovShield, Shield};
use crate::valuation::Analysis;

pub const DEFAULT_HORIZON: usize = 50;
pub const DEFAULT_EPISODE_LEN: usize = 50;
pub const DEFAULT_REPLICATES: u32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Exact,
    Simulation,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Simulation => "simulation",
        }
    }
}

/// One evaluation outcome, as reported in CSV rows.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub safety: f64,
    pub allowed_ratio: f64,
    pub method: Method,
    /// 95% half-width; `None` for exact results.
    pub ci: Option<f64>,
    pub episodes: u64,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactEval<T> {
    /// Probability of reaching Bad within the horizon.
    pub safety: T,
    pub expected_allowed: T,
    pub expected_steps: T,
    pub product_states: usize,
}

impl<T: Prob> ExactEval<T> {
    /// Expected allowed choices over expected executed steps.
    pub fn allowed_ratio(&self) -> f64 {
        let steps = self.expected_steps.to_f64();
        if steps <= 0.0 {
            1.0
        } else {
            self.expected_allowed.to_f64() / steps
        }
    }

    pub fn report(&self) -> EvalReport {
        EvalReport {
            safety: self.safety.to_f64(),
            allowed_ratio: self.allowed_ratio(),
            method: Method::Exact,
            ci: None,
            episodes: 0,
            steps: 0,
        }
    }
}

fn is_terminal<T: Prob>(m: &Mdp<T>, s: StateId) -> bool {
    m.is_bad(s) || m.is_absorbing(s)
}

struct Kernel<T> {
    allowed: bool,
    out: Vec<(usize, T)>,
}

/// Exact evaluation on the product of the model with the shield's cursor.
///
/// Product states are discovered breadth-first up to `horizon`, then values
/// are computed by backward induction over the remaining step count.
pub fn exact_eval<T: Prob>(
    m: &Mdp<T>,
    shield: &dyn MarkovShield<T>,
    agent: &Agent<T>,
    horizon: usize,
) -> Result<ExactEval<T>> {
    agent.validate(m)?;
    let mut index: BTreeMap<(u32, StateId), usize> = BTreeMap::new();
    let mut states: Vec<StateId> = Vec::new();
    let mut kernels: Vec<Option<Kernel<T>>> = Vec::new();
    let mut queue: VecDeque<(usize, usize)> = VecDeque::new();
    let root = (shield.initial_cursor(), m.initial());
    index.insert(root, 0);
    states.push(root.1);
    kernels.push(None);
    queue.push_back((0, 0));
    let mut cursors: Vec<u32> = alloc::vec![root.0];
    while let Some((x, depth)) = queue.pop_front() {
        let s = states[x];
        if depth >= horizon || is_terminal(m, s) {
            continue;
        }
        let cursor = cursors[x];
        let decision = shield.decide_at(cursor, s, agent.choice(s))?;
        let mut out = Vec::new();
        for (a, w) in decision.executed.entries() {
            for (next, p) in m.successors(s, *a).ok_or_else(|| Error::precondition("executed action unavailable"))? {
                let key = (shield.advance(cursor, &decision.executed, *a, *next), *next);
                let y = match index.get(&key) {
                    Some(&y) => y,
                    None => {
                        let y = states.len();
                        index.insert(key, y);
                        states.push(*next);
                        cursors.push(key.0);
                        kernels.push(None);
                        queue.push_back((y, depth + 1));
                        y
                    }
                };
                out.push((y, w.clone() * p.clone()));
            }
        }
        kernels[x] = Some(Kernel { allowed: !decision.intervened, out });
    }

    let n = states.len();
    let mut risk: Vec<T> = states.iter().map(|&s| if m.is_bad(s) { T::one() } else { T::zero() }).collect();
    let mut allowed = alloc::vec![T::zero(); n];
    let mut steps = alloc::vec![T::zero(); n];
    for _ in 0..horizon {
        let mut next_risk = risk.clone();
        let mut next_allowed = allowed.clone();
        let mut next_steps = steps.clone();
        for x in 0..n {
            let Some(k) = &kernels[x] else { continue };
            let mut r = T::zero();
            let mut al = if k.allowed { T::one() } else { T::zero() };
            let mut st = T::one();
            for (y, p) in &k.out {
                r = r + p.clone() * risk[*y].clone();
                al = al + p.clone() * allowed[*y].clone();
                st = st + p.clone() * steps[*y].clone();
            }
            next_risk[x] = r;
            next_allowed[x] = al;
            next_steps[x] = st;
        }
        risk = next_risk;
        allowed = next_allowed;
        steps = next_steps;
    }
    Ok(ExactEval {
        safety: risk[0].clone(),
        expected_allowed: allowed[0].clone(),
        expected_steps: steps[0].clone(),
        product_states: n,
    })
}

/// Exact evaluation for any shield that has a Markov (cursor) form.
pub fn exact_eval_shield<T: Prob>(
    m: &Mdp<T>,
    shield: &dyn Shield<T>,
    agent: &Agent<T>,
    horizon: usize,
) -> Result<ExactEval<T>> {
    let markov = shield.as_markov().ok_or_else(|| {
        Error::unsupported(alloc::format!("shield {} has no finite product form; use simulation", shield.name()))
    })?;
    exact_eval(m, markov, agent, horizon)
}

/// Counters of one simulation replicate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReplicateStats {
    pub episodes: u64,
    pub bad_episodes: u64,
    pub steps: u64,
    pub allowed: u64,
}

impl ReplicateStats {
    pub fn safety(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            self.bad_episodes as f64 / self.episodes as f64
        }
    }

    pub fn allowed_ratio(&self) -> f64 {
        if self.steps == 0 {
            1.0
        } else {
            self.allowed as f64 / self.steps as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimConfig {
    /// Step budget per replicate; the episode in progress when it runs out is finished.
    pub steps: u64,
    pub episode_len: usize,
    pub seed: u64,
    pub replicates: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { steps: 100_000, episode_len: DEFAULT_EPISODE_LEN, seed: 0, replicates: DEFAULT_REPLICATES }
    }
}

pub fn replicate_rng(seed: u64, replicate: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

/// Uniform draw from `[0, 1)` with 53 random bits.
pub fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn sample<K: Copy, T: Prob>(entries: &[(K, T)], rng: &mut impl RngCore) -> K {
    let u = unit_f64(rng);
    let mut acc = 0.0;
    for (k, p) in entries {
        acc += p.to_f64();
        if u < acc {
            return *k;
        }
    }
    entries.last().expect("non-empty support").0
}

pub type PairLog<'a, T> = &'a mut dyn FnMut(&History<T>, &Dist<T>);

/// Runs one episode; returns whether Bad was visited.
pub fn run_episode<T: Prob>(
    m: &Mdp<T>,
    shield: &mut dyn Shield<T>,
    agent: &Agent<T>,
    episode_len: usize,
    rng: &mut impl RngCore,
    stats: &mut ReplicateStats,
    mut log: Option<PairLog<'_, T>>,
) -> Result<bool> {
    shield.reset();
    let mut h = History::new(m.initial());
    let mut bad = m.is_bad(h.last());
    for _ in 0..episode_len {
        let s = h.last();
        if is_terminal(m, s) {
            break;
        }
        let d = agent.choice(s);
        if let Some(log) = log.as_mut() {
            log(&h, d);
        }
        let decision = shield.decide(&h, d)?;
        stats.steps += 1;
        if !decision.intervened {
            stats.allowed += 1;
        }
        let a = sample(decision.executed.entries(), rng);
        let succ = m.successors(s, a).ok_or_else(|| Error::precondition("executed action unavailable"))?;
        let next = sample(succ, rng);
        shield.observe(&h, &decision.executed, a, next)?;
        h.push(decision.executed, a, next);
        bad |= m.is_bad(next);
    }
    stats.episodes += 1;
    if bad {
        stats.bad_episodes += 1;
    }
    Ok(bad)
}

pub fn simulate_replicate<T: Prob>(
    m: &Mdp<T>,
    shield: &mut dyn Shield<T>,
    agent: &Agent<T>,
    cfg: &SimConfig,
    replicate: u32,
    mut log: Option<PairLog<'_, T>>,
) -> Result<ReplicateStats> {
    agent.validate(m)?;
    if cfg.episode_len == 0 {
        return Err(Error::invalid("episode length must be positive"));
    }
    let mut rng = replicate_rng(cfg.seed, replicate);
    let mut stats = ReplicateStats::default();
    while stats.steps < cfg.steps {
        let before = stats.steps;
        let log: Option<PairLog<'_, T>> = match log {
            Some(ref mut f) => Some(&mut **f),
            None => None,
        };
        run_episode(m, shield, agent, cfg.episode_len, &mut rng, &mut stats, log)?;
        if stats.steps == before {
            break;
        }
    }
    shield.reset();
    Ok(stats)
}

/// Replicate means, with a 95% half-width of `1.96·max(pooled binomial SE, replicate SE)`.
pub fn summarize(stats: &[ReplicateStats]) -> EvalReport {
    let r = stats.len().max(1) as f64;
    let safety = stats.iter().map(ReplicateStats::safety).sum::<f64>() / r;
    let allowed_ratio = stats.iter().map(ReplicateStats::allowed_ratio).sum::<f64>() / r;
    let episodes: u64 = stats.iter().map(|s| s.episodes).sum();
    let bad: u64 = stats.iter().map(|s| s.bad_episodes).sum();
    let pooled = if episodes == 0 { 0.0 } else { bad as f64 / episodes as f64 };
    let binomial = if episodes == 0 { 0.0 } else { libm::sqrt(pooled * (1.0 - pooled) / episodes as f64) };
    let between = if stats.len() < 2 {
        0.0
    } else {
        let var = stats.iter().map(|s| (s.safety() - safety) * (s.safety() - safety)).sum::<f64>() / (r - 1.0);
        libm::sqrt(var / r)
    };
    EvalReport {
        safety,
        allowed_ratio,
        method: Method::Simulation,
        ci: Some(1.96 * binomial.max(between)),
        episodes,
        steps: stats.iter().map(|s| s.steps).sum(),
    }
}

/// Sequential simulation with a fresh shield per replicate.
pub fn simulate<T: Prob>(
    m: &Mdp<T>,
    mut make_shield: impl FnMut() -> Result<alloc::boxed::Box<dyn Shield<T>>>,
    agent: &Agent<T>,
    cfg: &SimConfig,
) -> Result<EvalReport> {
    let mut stats = Vec::with_capacity(cfg.replicates as usize);
    for r in 0..cfg.replicates.max(1) {
        let mut shield = make_shield()?;
        stats.push(simulate_replicate(m, shield.as_mut(), agent, cfg, r, None)?);
    }
    Ok(summarize(&stats))
}

/// One proposal seen by the per-step-updating transformer.
#[derive(Clone, Debug, PartialEq)]
pub struct PerStepEntry<T> {
    pub history: History<T>,
    pub proposed: Dist<T>,
    pub accepted: bool,
    pub reach: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerStepReport<T> {
    /// Reach-Bad probability of the induced policy within the horizon.
    pub induced_value: T,
    pub trace: Vec<PerStepEntry<T>>,
}

/// The transformer that extends the shield with every proposal before
/// deciding it, along each branch of the execution tree.
pub fn per_step_update_demo<T: Prob>(
    analysis: &alloc::sync::Arc<Analysis<T>>,
    nu: T,
    agent: &Agent<T>,
    horizon: usize,
) -> Result<PerStepReport<T>> {
    let m = analysis.model();
    agent.validate(m)?;
    let start = ConstructedShield::new(analysis.clone(), nu, false)?;
    let mut report = PerStepReport { induced_value: T::zero(), trace: Vec::new() };
    let mut stack = alloc::vec![(start, History::new(m.initial()), T::one())];
    while let Some((mut shield, h, reach)) = stack.pop() {
        let s = h.last();
        if m.is_bad(s) {
            report.induced_value = report.induced_value.clone() + reach;
            continue;
        }
        if h.len() >= horizon || m.is_absorbing(s) {
            continue;
        }
        let d = agent.choice(s);
        let ext = shield.safe_extend(&h, d)?;
        report.trace.push(PerStepEntry { history: h.clone(), proposed: d.clone(), accepted: ext.accepted, reach: reach.clone() });
        let node = shield.cursor_of(&h);
        let decision = shield.decide_node(node, s, d)?;
        for (a, w) in decision.executed.entries() {
            for (next, p) in m.successors(s, *a).expect("executed actions are available") {
                let branch = h.extended(decision.executed.clone(), *a, *next);
                stack.push((shield.clone(), branch, reach.clone() * w.clone() * p.clone()));
            }
        }
    }
    Ok(report)
}

struct EpisodePath<T> {
    pairs: Vec<(History<T>, Dist<T>)>,
    prob: T,
    bad: bool,
}

fn episode_paths<T: Prob>(
    shield: &ConstructedShield<T>,
    agent: &Agent<T>,
    episode_len: usize,
    cap: usize,
) -> Result<Vec<EpisodePath<T>>> {
    let m = shield.analysis().model();
    let mut out = Vec::new();
    let start = History::new(m.initial());
    let mut stack = alloc::vec![(start, ROOT, T::one(), Vec::<(History<T>, Dist<T>)>::new())];
    while let Some((h, cursor, prob, pairs)) = stack.pop() {
        let s = h.last();
        if h.len() >= episode_len || is_terminal(m, s) {
            out.push(EpisodePath { pairs, prob, bad: (0..=h.len()).any(|k| m.is_bad(h.state_at(k))) });
            if out.len() > cap {
                return Err(Error::exhausted("too many episode paths"));
            }
            continue;
        }
        let d = agent.choice(s);
        let decision = shield.decide_node(cursor, s, d)?;
        for (a, w) in decision.executed.entries() {
            for (next, p) in m.successors(s, *a).expect("executed actions are available") {
                let mut pairs = pairs.clone();
                pairs.push((h.clone(), d.clone()));
                let next_cursor = shield.step_node(cursor, &decision.executed, *a, *next);
                let branch = h.extended(decision.executed.clone(), *a, *next);
                stack.push((branch, next_cursor, prob.clone() * w.clone() * p.clone(), pairs));
            }
        }
    }
    Ok(out)
}

/// Exact per-episode reach-Bad probabilities of episode-boundary online
/// shielding, averaging over every shield the earlier episodes can produce.
pub fn online_episode_values<T: Prob>(
    analysis: &alloc::sync::Arc<Analysis<T>>,
    nu: T,
    convex: bool,
    agent: &Agent<T>,
    episode_len: usize,
    episodes: usize,
) -> Result<Vec<T>> {
    const PATH_CAP: usize = 100_000;
    agent.validate(analysis.model())?;
    let mut population = alloc::vec![(ConstructedShield::new(analysis.clone(), nu, convex)?, T::one())];
    let mut values = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut value = T::zero();
        let mut next: Vec<(ConstructedShield<T>, T)> = Vec::new();
        for (shield, weight) in &population {
            for path in episode_paths(shield, agent, episode_len, PATH_CAP)? {
                let w = weight.clone() * path.prob.clone();
                if path.bad {
                    value = value + w.clone();
                }
                let mut updated = shield.clone();
                updated.online_update(&path.pairs)?;
                let pairs = updated.trie().pairs();
                match next.iter_mut().find(|(s, _)| s.trie().pairs() == pairs) {
                    Some((_, acc)) => *acc = acc.clone() + w,
                    None => next.push((updated, w)),
                }
                if next.len() > PATH_CAP {
                    return Err(Error::exhausted("too many distinct shields"));
                }
            }
        }
        values.push(value);
        population = next;
    }
    Ok(values)
}

/// Simulated per-episode Bad indicator of an online shield, for episodes `0..episodes`.
pub fn online_episode_trace<T: Prob>(
    m: &Mdp<T>,
    shield: &mut dyn Shield<T>,
    agent: &Agent<T>,
    episode_len: usize,
    episodes: usize,
    seed: u64,
) -> Result<Vec<bool>> {
    let mut rng = replicate_rng(seed, 0);
    let mut stats = ReplicateStats::default();
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        out.push(run_episode(m, shield, agent, episode_len, &mut rng, &mut stats, None)?);
    }
    shield.reset();
    Ok(out)
}
