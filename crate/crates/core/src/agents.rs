//! Memoryless tabular agents: greedy and timid softmax policies and the uniform agent.

use alloc::vec::Vec;

use crate::dist::Dist;
use crate::error::{Error, Result};
use crate::ids::{ActionId, StateId};
use crate::mdp::Mdp;
use crate::num::Prob;
use crate::valuation::{q_action, reward_values, Analysis, RewardObjective};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AgentKind {
    Greedy,
    Timid,
    Random,
}

impl core::str::FromStr for AgentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(AgentKind::Greedy),
            "timid" => Ok(AgentKind::Timid),
            "random" => Ok(AgentKind::Random),
            other => Err(Error::invalid(alloc::format!("unknown agent {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentParams {
    /// Softmax temperature; 0 picks the argmax (lowest action index on ties).
    pub temperature: f64,
    /// Weight of the `Q_min(s, 1_a) − V_min(s)` penalty for the timid agent.
    pub timid_weight: f64,
    pub reward: RewardObjective,
}

impl Default for AgentParams {
    fn default() -> Self {
        AgentParams { temperature: 0.05, timid_weight: 10.0, reward: RewardObjective::default() }
    }
}

/// A memoryless stochastic policy: one choice per state.
#[derive(Clone, Debug, PartialEq)]
pub struct Agent<T> {
    pub kind: AgentKind,
    table: Vec<Dist<T>>,
}

impl<T: Prob> Agent<T> {
    pub fn from_table(kind: AgentKind, table: Vec<Dist<T>>) -> Self {
        Agent { kind, table }
    }

    pub fn choice(&self, s: StateId) -> &Dist<T> {
        &self.table[s.idx()]
    }

    pub fn table(&self) -> &[Dist<T>] {
        &self.table
    }

    pub fn validate(&self, m: &Mdp<T>) -> Result<()> {
        if self.table.len() != m.num_states() {
            return Err(Error::invalid("agent table size differs from the state count"));
        }
        for s in m.states() {
            m.check_choice(s, self.choice(s))?;
        }
        Ok(())
    }
}

/// `exp((x − max)/τ)` weights, or the argmax indicator for `τ = 0`.
pub fn softmax_weights(scores: &[f64], temperature: f64) -> Vec<f64> {
    let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if temperature <= 0.0 {
        let first = scores.iter().position(|&x| x == best).unwrap_or(0);
        return (0..scores.len()).map(|i| if i == first { 1.0 } else { 0.0 }).collect();
    }
    scores
        .iter()
        .map(|&x| if temperature.is_infinite() { 1.0 } else { libm::exp((x - best) / temperature) })
        .collect()
}

/// Softmax mass below this is dropped before normalizing.
pub const MIN_AGENT_PROB: f64 = 1e-9;

fn softmax_choice<T: Prob>(actions: &[ActionId], scores: &[f64], temperature: f64) -> Dist<T> {
    let mut weights = softmax_weights(scores, temperature);
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        if *w < MIN_AGENT_PROB * total {
            *w = 0.0;
        }
    }
    let probs = T::probs_from_weights(&weights);
    Dist::new(actions.iter().copied().zip(probs)).expect("softmax yields a distribution")
}

pub fn make_agent<T: Prob>(kind: AgentKind, analysis: &Analysis<T>, params: &AgentParams) -> Result<Agent<T>> {
    let m = analysis.model();
    if kind == AgentKind::Random {
        let table = m.states().map(|s| Dist::uniform(&m.actions(s))).collect::<Result<_>>()?;
        return Ok(Agent { kind, table });
    }
    if !(params.temperature >= 0.0) {
        return Err(Error::invalid("temperature must be non-negative"));
    }
    let rewards = reward_values(m, params.reward)?;
    let mut table = Vec::with_capacity(m.num_states());
    for s in m.states() {
        let actions = m.actions(s);
        let scores: Vec<f64> = actions
            .iter()
            .map(|&a| {
                let reward = rewards.get(s, a).unwrap_or(0.0);
                match kind {
                    AgentKind::Timid => {
                        let q = q_action(m, &analysis.v_min.upper, s, a).expect("available").to_f64();
                        let risk = (q - analysis.vmin(s).to_f64()).max(0.0);
                        reward - params.timid_weight * risk
                    }
                    _ => reward,
                }
            })
            .collect();
        table.push(softmax_choice(&actions, &scores, params.temperature));
    }
    Ok(Agent { kind, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{self, CHAIN_BETA, CHAIN_DELTA, FORK_ALPHA, FORK_BETA, S0, S1};
    use crate::num::Rational;

    #[test]
    fn random_is_uniform() {
        let a = Analysis::new(fixtures::fork::<Rational>()).unwrap();
        let agent = make_agent(AgentKind::Random, &a, &AgentParams::default()).unwrap();
        assert_eq!(agent.choice(S1), &Dist::from_ratios(&[(FORK_ALPHA, 1, 2), (FORK_BETA, 1, 2)]));
    }

    #[test]
    fn reward_agents_need_rewards() {
        let a = Analysis::new(fixtures::fork::<Rational>()).unwrap();
        assert!(make_agent(AgentKind::Greedy, &a, &AgentParams::default()).is_err());
    }

    #[test]
    fn timid_with_huge_weight_is_safe() {
        let a = Analysis::new(fixtures::chain::<Rational>().with_rewards()).unwrap();
        let params = AgentParams { timid_weight: 1e9, ..AgentParams::default() };
        let agent = make_agent(AgentKind::Timid, &a, &params).unwrap();
        assert_eq!(agent.choice(S0), &Dist::dirac(CHAIN_BETA));
        assert_eq!(agent.choice(S1), &Dist::dirac(CHAIN_DELTA));
    }

    #[test]
    fn zero_temperature_breaks_ties_low() {
        assert_eq!(softmax_weights(&[1.0, 3.0, 3.0], 0.0), alloc::vec![0.0, 1.0, 0.0]);
        let w = softmax_weights(&[0.0, 0.0], f64::INFINITY);
        assert_eq!(w, alloc::vec![1.0, 1.0]);
    }

    #[test]
    fn negligible_mass_is_dropped() {
        let d: Dist<f64> = softmax_choice(&[ActionId(0), ActionId(1)], &[0.0, 5.0], 0.05);
        assert_eq!(d, Dist::dirac(ActionId(1)));
    }
}
