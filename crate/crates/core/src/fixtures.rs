//! Small named MDPs from the shielding literature plus two parametric benchmarks.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ids::{ActionId, StateId};
use crate::mdp::{Mdp, MdpBuilder};
use crate::num::Prob;

pub const FORK_EPS: ActionId = ActionId(0);
pub const FORK_ALPHA: ActionId = ActionId(1);
pub const FORK_BETA: ActionId = ActionId(2);
pub const FORK_GAMMA: ActionId = ActionId(3);
pub const FORK_DELTA: ActionId = ActionId(4);
pub const FORK_LOOP: ActionId = ActionId(5);

pub const CHAIN_ALPHA: ActionId = ActionId(0);
pub const CHAIN_BETA: ActionId = ActionId(1);
pub const CHAIN_GAMMA: ActionId = ActionId(2);
pub const CHAIN_DELTA: ActionId = ActionId(3);
pub const CHAIN_GO: ActionId = ActionId(4);
pub const CHAIN_LOOP: ActionId = ActionId(5);

/// States shared by FORK and CHAIN: `s0 s1 s2 good bad`.
pub const S0: StateId = StateId(0);
pub const S1: StateId = StateId(1);
pub const S2: StateId = StateId(2);
pub const GOOD: StateId = StateId(3);
pub const BAD: StateId = StateId(4);

fn q<T: Prob>(n: i64, d: i64) -> T {
    T::from_ratio(n, d)
}

fn one<T: Prob>() -> T {
    T::one()
}

fn name_all<T: Prob>(b: &mut MdpBuilder<T>, states: &[&str], actions: &[&str]) {
    for (i, n) in states.iter().enumerate() {
        b.state_name(StateId(i as u32), *n).expect("state in range");
    }
    for (i, n) in actions.iter().enumerate() {
        b.action_name(ActionId(i as u32), *n).expect("action in range");
    }
}

fn absorbing<T: Prob>(b: &mut MdpBuilder<T>, s: StateId, looping: ActionId) {
    b.transition(s, looping, [(s, one())]).expect("self loop");
}

fn unit_interval<T: Prob>(name: &str, x: &T) -> Result<()> {
    if *x > T::zero() && *x < T::one() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must lie in (0,1), got {x}")))
    }
}

/// `s0 -ε-> {s1:½, s2:½}`; `s1`: α→good, β→bad; `s2`: γ→good, δ→bad.
pub fn fork<T: Prob>() -> Mdp<T> {
    let mut b = MdpBuilder::new(5, 6);
    name_all(&mut b, &["s0", "s1", "s2", "good", "bad"], &["eps", "alpha", "beta", "gamma", "delta", "loop"]);
    b.initial(S0).unwrap().bad(BAD).unwrap();
    b.transition(S0, FORK_EPS, [(S1, q(1, 2)), (S2, q(1, 2))]).unwrap();
    b.transition(S1, FORK_ALPHA, [(GOOD, one())]).unwrap();
    b.transition(S1, FORK_BETA, [(BAD, one())]).unwrap();
    b.transition(S2, FORK_GAMMA, [(GOOD, one())]).unwrap();
    b.transition(S2, FORK_DELTA, [(BAD, one())]).unwrap();
    absorbing(&mut b, GOOD, FORK_LOOP);
    absorbing(&mut b, BAD, FORK_LOOP);
    b.build().expect("FORK is well formed")
}

/// Three-step chain where the risky actions skip a 10% bad exit but the
/// final state always carries one.
pub fn chain<T: Prob>() -> Mdp<T> {
    let mut b = MdpBuilder::new(5, 6);
    name_all(&mut b, &["s0", "s1", "s2", "good", "bad"], &["alpha", "beta", "gamma", "delta", "go", "loop"]);
    b.initial(S0).unwrap().bad(BAD).unwrap();
    b.transition(S0, CHAIN_ALPHA, [(BAD, q(1, 10)), (S1, q(9, 10))]).unwrap();
    b.transition(S0, CHAIN_BETA, [(S1, one())]).unwrap();
    b.transition(S1, CHAIN_GAMMA, [(BAD, q(1, 10)), (S2, q(9, 10))]).unwrap();
    b.transition(S1, CHAIN_DELTA, [(S2, one())]).unwrap();
    b.transition(S2, CHAIN_GO, [(BAD, q(1, 10)), (GOOD, q(9, 10))]).unwrap();
    absorbing(&mut b, GOOD, CHAIN_LOOP);
    absorbing(&mut b, BAD, CHAIN_LOOP);
    b.build().expect("CHAIN is well formed")
}

/// General-threshold impossibility MDP: an initial split sends mass `x` into a
/// FORK-like gadget whose internal value decides safety at `s0`.
///
/// States `s0 s1 s2 s3 good bad`; actions `eps go alpha beta gamma delta loop`.
pub fn fullproof<T: Prob>(nu: T) -> Result<Mdp<T>> {
    unit_interval("nu", &nu)?;
    let half: T = q(1, 2);
    let x = (nu.clone() * half.clone()).min_of((T::one() - nu.clone()) * half.clone());
    let (s0, s1, s2, s3, good, bad) = (StateId(0), StateId(1), StateId(2), StateId(3), StateId(4), StateId(5));
    let mut b = MdpBuilder::new(6, 7);
    name_all(
        &mut b,
        &["s0", "s1", "s2", "s3", "good", "bad"],
        &["eps", "go", "alpha", "beta", "gamma", "delta", "loop"],
    );
    b.initial(s0)?.bad(bad)?;
    let to_good = T::one() - nu.clone() - x.clone() * half.clone();
    let to_bad = nu - x.clone() * half.clone();
    b.transition(s0, ActionId(0), [(s1, x), (good, to_good), (bad, to_bad)])?;
    b.transition(s1, ActionId(1), [(s2, half.clone()), (s3, half)])?;
    b.transition(s2, ActionId(2), [(good, one())])?;
    b.transition(s2, ActionId(3), [(bad, one())])?;
    b.transition(s3, ActionId(4), [(good, one())])?;
    b.transition(s3, ActionId(5), [(bad, one())])?;
    absorbing(&mut b, good, ActionId(6));
    absorbing(&mut b, bad, ActionId(6));
    b.build()
}

/// `s0`: α→{bad:ν, good:1−ν}, β→good. No policy exceeds ν.
///
/// States `s0 good bad`; actions `alpha beta loop`.
pub fn gap<T: Prob>(nu: T) -> Result<Mdp<T>> {
    unit_interval("nu", &nu)?;
    let (s0, good, bad) = (StateId(0), StateId(1), StateId(2));
    let mut b = MdpBuilder::new(3, 3);
    name_all(&mut b, &["s0", "good", "bad"], &["alpha", "beta", "loop"]);
    b.initial(s0)?.bad(bad)?;
    b.transition(s0, ActionId(0), [(bad, nu.clone()), (good, T::one() - nu)])?;
    b.transition(s0, ActionId(1), [(good, one())])?;
    absorbing(&mut b, good, ActionId(2));
    absorbing(&mut b, bad, ActionId(2));
    b.build()
}

/// Bad-exit probability of TRAP's β branch: a lower bound on
/// `min{ν/√δ, √ν}` checked to keep `ν < x < 1` and `δ·x ≤ ν`.
pub fn trap_exit<T: Prob>(nu: &T, delta: &T) -> Result<T> {
    unit_interval("nu", nu)?;
    unit_interval("delta", delta)?;
    let (_, sqrt_delta_hi) = delta.sqrt_bounds();
    let (sqrt_nu_lo, _) = nu.sqrt_bounds();
    let x = (nu.clone() / sqrt_delta_hi).min_of(sqrt_nu_lo);
    if !(x > *nu && x < T::one() && delta.clone() * x.clone() <= *nu) {
        return Err(Error::invalid(format!("no admissible TRAP exit for nu={nu}, delta={delta}")));
    }
    Ok(x)
}

/// `s0`: α→s1, β→s2; `s1`→{good:1−ν, bad:ν}; `s2`→{good:1−x, bad:x}.
///
/// States `s0 s1 s2 good bad`; actions `alpha beta go loop`.
pub fn trap<T: Prob>(nu: T, delta: T) -> Result<Mdp<T>> {
    let x = trap_exit(&nu, &delta)?;
    let mut b = MdpBuilder::new(5, 4);
    name_all(&mut b, &["s0", "s1", "s2", "good", "bad"], &["alpha", "beta", "go", "loop"]);
    b.initial(S0)?.bad(BAD)?;
    b.transition(S0, ActionId(0), [(S1, one())])?;
    b.transition(S0, ActionId(1), [(S2, one())])?;
    b.transition(S1, ActionId(2), [(GOOD, T::one() - nu.clone()), (BAD, nu)])?;
    b.transition(S2, ActionId(2), [(GOOD, T::one() - x.clone()), (BAD, x)])?;
    absorbing(&mut b, GOOD, ActionId(3));
    absorbing(&mut b, BAD, ActionId(3));
    b.build()
}

/// Slippery gridworld with pits (bad) and a goal.
#[derive(Clone, Debug)]
pub struct CorridorParams<T> {
    pub width: u32,
    pub height: u32,
    /// Probability of slipping sideways (split evenly between the two perpendicular moves).
    pub slip: T,
    pub pits: Vec<(u32, u32)>,
    pub start: (u32, u32),
    pub goal: (u32, u32),
    pub step_cost: f64,
    pub goal_reward: f64,
}

impl<T: Prob> Default for CorridorParams<T> {
    fn default() -> Self {
        CorridorParams {
            width: 5,
            height: 3,
            slip: q(1, 5),
            pits: vec![(2, 0)],
            start: (0, 1),
            goal: (4, 1),
            step_cost: 0.05,
            goal_reward: 1.0,
        }
    }
}

pub const CORRIDOR_UP: ActionId = ActionId(0);
pub const CORRIDOR_DOWN: ActionId = ActionId(1);
pub const CORRIDOR_LEFT: ActionId = ActionId(2);
pub const CORRIDOR_RIGHT: ActionId = ActionId(3);
pub const CORRIDOR_LOOP: ActionId = ActionId(4);

/// Cell `(x, y)` is state `y·width + x`; `y` grows upwards.
pub fn corridor<T: Prob>(p: &CorridorParams<T>) -> Result<Mdp<T>> {
    if p.width == 0 || p.height == 0 {
        return Err(Error::invalid("corridor needs a non-empty grid"));
    }
    if p.slip < T::zero() || p.slip >= T::one() {
        return Err(Error::invalid("slip must lie in [0,1)"));
    }
    let inside = |(x, y): (u32, u32)| x < p.width && y < p.height;
    if !inside(p.start) || !inside(p.goal) || !p.pits.iter().all(|&c| inside(c)) {
        return Err(Error::invalid("corridor cell outside the grid"));
    }
    if p.pits.contains(&p.goal) || p.pits.contains(&p.start) {
        return Err(Error::invalid("start and goal must not be pits"));
    }
    let id = |(x, y): (u32, u32)| StateId(y * p.width + x);
    let n = (p.width * p.height) as usize;
    let mut b = MdpBuilder::new(n, 5);
    for (i, name) in ["up", "down", "left", "right", "loop"].iter().enumerate() {
        b.action_name(ActionId(i as u32), *name)?;
    }
    b.initial(id(p.start))?;
    let goal = id(p.goal);
    let step = |(x, y): (u32, u32), dir: usize| -> (u32, u32) {
        match dir {
            0 if y + 1 < p.height => (x, y + 1),
            1 if y > 0 => (x, y - 1),
            2 if x > 0 => (x - 1, y),
            3 if x + 1 < p.width => (x + 1, y),
            _ => (x, y),
        }
    };
    let perpendicular = |dir: usize| if dir < 2 { [2, 3] } else { [0, 1] };
    let half_slip = p.slip.clone() / q(2, 1);
    for y in 0..p.height {
        for x in 0..p.width {
            let s = id((x, y));
            let name = if s == goal {
                alloc::string::String::from("goal")
            } else if p.pits.contains(&(x, y)) {
                format!("pit{x}_{y}")
            } else {
                format!("c{x}_{y}")
            };
            b.state_name(s, name)?;
            if s == goal || p.pits.contains(&(x, y)) {
                if s != goal {
                    b.bad(s)?;
                }
                absorbing(&mut b, s, CORRIDOR_LOOP);
                continue;
            }
            for dir in 0..4 {
                let mut succ = vec![(id(step((x, y), dir)), T::one() - p.slip.clone())];
                for side in perpendicular(dir) {
                    succ.push((id(step((x, y), side)), half_slip.clone()));
                }
                let to_goal: f64 = succ.iter().filter(|(t, _)| *t == goal).map(|(_, w)| w.to_f64()).sum();
                let a = ActionId(dir as u32);
                b.transition(s, a, succ)?;
                b.reward(s, a, p.goal_reward * to_goal - p.step_cost)?;
            }
        }
    }
    b.enable_rewards();
    b.build()
}

/// Dynamic power management: a battery-powered server with a request queue.
#[derive(Clone, Debug)]
pub struct DpmParams<T> {
    pub levels: u32,
    pub queue_cap: u32,
    pub arrival: T,
    pub serve_success: T,
    pub serve_drain: T,
    pub idle_drain: T,
    pub charge: T,
}

impl<T: Prob> Default for DpmParams<T> {
    fn default() -> Self {
        DpmParams {
            levels: 6,
            queue_cap: 4,
            arrival: q(3, 10),
            serve_success: q(9, 10),
            serve_drain: q(1, 2),
            idle_drain: q(1, 10),
            charge: q(3, 5),
        }
    }
}

pub const DPM_SERVE: ActionId = ActionId(0);
pub const DPM_SLEEP: ActionId = ActionId(1);
pub const DPM_IDLE: ActionId = ActionId(2);
pub const DPM_LOOP: ActionId = ActionId(3);

/// Battery level `b ∈ 0..levels`, queue `q ∈ 0..=cap`. An empty battery with
/// pending requests is the bad state; `(0, 0)` can only sleep.
pub fn dpm<T: Prob>(p: &DpmParams<T>) -> Result<Mdp<T>> {
    if p.levels < 2 || p.queue_cap < 1 {
        return Err(Error::invalid("dpm needs at least two battery levels and a queue"));
    }
    for (name, x) in [
        ("arrival", &p.arrival),
        ("serve_success", &p.serve_success),
        ("serve_drain", &p.serve_drain),
        ("idle_drain", &p.idle_drain),
        ("charge", &p.charge),
    ] {
        unit_interval(name, x)?;
    }
    let cap = p.queue_cap;
    let charged_states = ((p.levels - 1) * (cap + 1)) as usize;
    let empty = StateId(charged_states as u32);
    let bad = StateId(charged_states as u32 + 1);
    let id = |b: u32, q: u32| -> StateId {
        match (b, q) {
            (0, 0) => empty,
            (0, _) => bad,
            _ => StateId((b - 1) * (cap + 1) + q),
        }
    };
    let mut builder = MdpBuilder::new(charged_states + 2, 4);
    for (i, name) in ["serve", "sleep", "idle", "loop"].iter().enumerate() {
        builder.action_name(ActionId(i as u32), *name)?;
    }
    builder.initial(id(p.levels - 1, 0))?.bad(bad)?;
    builder.state_name(empty, "b0_q0")?.state_name(bad, "empty_with_queue")?;
    absorbing(&mut builder, bad, DPM_LOOP);

    let bern = |x: &T| [(0u32, T::one() - x.clone()), (1u32, x.clone())];
    let top = p.levels - 1;
    let outcomes = |b: u32, queue: u32, battery: [(u32, T); 2], battery_up: bool, served: [(u32, T); 2]| {
        let mut succ = Vec::new();
        for (db, pb) in battery.iter() {
            for (ds, ps) in served.iter() {
                for (da, pa) in bern(&p.arrival).iter() {
                    let nb = if battery_up { (b + db).min(top) } else { b - db };
                    let nq = (queue - ds.min(&queue) + da).min(cap);
                    let w = pb.clone() * ps.clone() * pa.clone();
                    if w > T::zero() {
                        succ.push((id(nb, nq), w));
                    }
                }
            }
        }
        succ
    };
    let certain = || [(0u32, T::one()), (1u32, T::zero())];
    for b in 1..p.levels {
        for queue in 0..=cap {
            let s = id(b, queue);
            builder.state_name(s, format!("b{b}_q{queue}"))?;
            let served = if queue > 0 { bern(&p.serve_success) } else { certain() };
            builder.transition(s, DPM_SERVE, outcomes(b, queue, bern(&p.serve_drain), false, served))?;
            builder.transition(s, DPM_SLEEP, outcomes(b, queue, bern(&p.charge), true, certain()))?;
            builder.transition(s, DPM_IDLE, outcomes(b, queue, bern(&p.idle_drain), false, certain()))?;
            let gain = if queue > 0 { p.serve_success.to_f64() } else { 0.0 };
            builder.reward(s, DPM_SERVE, gain)?;
        }
    }
    builder.transition(empty, DPM_SLEEP, outcomes(0, 0, bern(&p.charge), true, certain()))?;
    builder.enable_rewards();
    builder.build()
}

/// Fixture lookup by name for the CLI: `fork`, `chain`, `corridor`, `dpm`,
/// `fullproof:<nu>`, `gap:<nu>`, `trap:<nu>:<delta>`.
pub fn by_name<T: Prob>(spec: &str) -> Result<Mdp<T>> {
    let mut parts = spec.split(':');
    let name = parts.next().unwrap_or_default().to_ascii_lowercase();
    let mut arg = |what: &str| -> Result<T> {
        let text = parts.next().ok_or_else(|| Error::invalid(format!("{name} needs parameter {what}")))?;
        T::parse(text).ok_or_else(|| Error::invalid(format!("bad {what}: {text}")))
    };
    match name.as_str() {
        "fork" => Ok(fork()),
        "chain" => Ok(chain()),
        "corridor" => corridor(&CorridorParams::default()),
        "dpm" => dpm(&DpmParams::default()),
        "fullproof" => fullproof(arg("nu")?),
        "gap" => gap(arg("nu")?),
        "trap" => {
            let nu = arg("nu")?;
            trap(nu, arg("delta")?)
        }
        other => Err(Error::invalid(format!("unknown fixture {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::Rational;

    fn r(n: i64, d: i64) -> Rational {
        Rational::from_ratio(n, d)
    }

    #[test]
    fn fixtures_build() {
        let _ = fork::<Rational>();
        let _ = chain::<Rational>();
        fullproof(r(3, 10)).unwrap();
        gap(r(3, 10)).unwrap();
        trap(r(1, 4), r(1, 2)).unwrap();
        corridor(&CorridorParams::<Rational>::default()).unwrap();
        dpm(&DpmParams::<Rational>::default()).unwrap();
        corridor(&CorridorParams::<f64>::default()).unwrap();
        dpm(&DpmParams::<f64>::default()).unwrap();
    }

    #[test]
    fn parameters_out_of_range_are_rejected() {
        assert!(gap(r(0, 1)).is_err());
        assert!(gap(r(1, 1)).is_err());
        assert!(fullproof(r(3, 2)).is_err());
        assert!(trap(r(1, 4), r(0, 1)).is_err());
    }

    #[test]
    fn trap_exit_properties_hold_exactly() {
        for nu in [r(1, 10), r(1, 4), r(1, 2)] {
            for delta in [r(1, 10), r(1, 4), r(1, 2)] {
                let x = trap_exit(&nu, &delta).unwrap();
                assert!(x > nu && x < r(1, 1));
                assert!(delta.clone() * x.clone() <= nu);
            }
        }
        assert_eq!(trap_exit(&r(1, 4), &r(1, 4)).unwrap(), r(1, 2));
    }

    #[test]
    fn fullproof_split_matches_construction() {
        let m = fullproof(r(3, 10)).unwrap();
        // x = min{0.15, 0.35}
        assert_eq!(m.prob(StateId(0), ActionId(0), StateId(1)), r(15, 100));
        assert_eq!(m.prob(StateId(0), ActionId(0), StateId(5)), r(3, 10) - r(15, 200));
    }

    #[test]
    fn corridor_layout() {
        let m = corridor(&CorridorParams::<Rational>::default()).unwrap();
        assert_eq!(m.num_states(), 15);
        assert!(m.is_bad(StateId(2)));
        assert!(m.is_absorbing(StateId(9)));
        assert_eq!(m.initial(), StateId(5));
        // moving right from (1,0) enters the pit with probability 0.8
        assert_eq!(m.prob(StateId(1), CORRIDOR_RIGHT, StateId(2)), r(4, 5));
    }

    #[test]
    fn dpm_layout() {
        let m = dpm(&DpmParams::<Rational>::default()).unwrap();
        assert_eq!(m.num_states(), 5 * 5 + 2);
        let bad = m.bad_states();
        assert_eq!(bad.len(), 1);
        assert!(m.is_absorbing(bad[0]));
        assert_eq!(m.actions(StateId(25)), alloc::vec![DPM_SLEEP]);
    }
}
