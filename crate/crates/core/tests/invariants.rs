use std::sync::Arc;

use proptest::prelude::*;
use probshield_core::eval::{simulate, ReplicateStats};
use probshield_core::oracle::{dag_values, ordering_query, random_acyclic_mdp, random_choice, random_history};
use probshield_core::shields::{IdentityShield, SafeShield, Shield};
use probshield_core::valuation::reach_values;
use probshield_core::{
    exact_eval, fixtures, make_agent, ActionId, AgentKind, AgentParams, Analysis, ConstructedShield, Dist, History,
    Mdp, Objective, Prob, Rational, SimConfig,
};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn q(n: i64, d: i64) -> Rational {
    <Rational as Prob>::from_ratio(n, d)
}

fn model(seed: u64) -> (Mdp<Rational>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = random_acyclic_mdp(&mut rng, 6, 3);
    (m, rng)
}

fn threshold(a: &Analysis<Rational>, k: i64) -> Rational {
    let s0 = a.model().initial();
    let (lo, hi) = (a.vmin(s0).clone(), a.vmax(s0).clone());
    lo.clone() + (hi - lo) * q(k, 4)
}

fn random_pair(m: &Mdp<Rational>, rng: &mut ChaCha8Rng) -> (History<Rational>, Dist<Rational>) {
    let h = random_history(m, rng, 4);
    let d = random_choice(rng, &m.actions(h.last()), 4);
    (h, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn restriction_is_idempotent(weights in proptest::collection::vec(0u8..5, 4), mask in 1u8..16) {
        prop_assume!(weights.iter().any(|&w| w > 0));
        let total: i64 = weights.iter().map(|&w| w as i64).sum();
        let d = Dist::new(weights.iter().enumerate().map(|(i, &w)| (ActionId(i as u32), q(w as i64, total)))).unwrap();
        let set: Vec<ActionId> = (0..4).filter(|i| mask & (1 << i) != 0).map(ActionId).collect();
        let once = d.restrict(&set).unwrap();
        prop_assert!(once.supported_within(&set));
        prop_assert_eq!(once.restrict(&set).unwrap(), once.clone());
        if d.supported_within(&set) {
            prop_assert_eq!(once, d);
        }
    }

    #[test]
    fn valuation_matches_dag_recursion(seed in any::<u64>()) {
        let (m, _) = model(seed);
        for objective in [Objective::Min, Objective::Max] {
            let v = reach_values(&m, objective).unwrap();
            let dag = dag_values(&m, objective).unwrap();
            prop_assert_eq!(&v.values, &dag);
        }
        let a = Analysis::new(m.clone()).unwrap();
        let float = Analysis::new(m.convert::<f64>()).unwrap();
        for s in m.states() {
            prop_assert!(a.vmin(s) <= a.vmax(s));
            prop_assert!((float.vmax(s) - a.vmax(s).to_f64()).abs() < 1e-9);
            prop_assert!((float.vmin(s) - a.vmin(s).to_f64()).abs() < 1e-9);
        }
    }

    #[test]
    fn safe_extension_stays_safe_and_monotone(seed in any::<u64>(), k in 0i64..=4) {
        let (m, mut rng) = model(seed);
        let a = Arc::new(Analysis::new(m.clone()).unwrap());
        let nu = threshold(&a, k);
        let mut shield = ConstructedShield::new(a.clone(), nu.clone(), false).unwrap();
        let mut last = shield.value();
        for _ in 0..12 {
            let (h, d) = random_pair(&m, &mut rng);
            let ext = shield.safe_extend(&h, &d).unwrap();
            prop_assert!(shield.is_safe());
            prop_assert!(shield.value() >= last);
            if ext.accepted {
                prop_assert!(!shield.clone().decide(&h, &d).unwrap().intervened);
            } else {
                prop_assert!(ext.value > nu);
            }
            last = shield.value();
        }
    }

    #[test]
    fn join_is_commutative_and_idempotent(seed in any::<u64>()) {
        let (m, mut rng) = model(seed);
        let a = Arc::new(Analysis::new(m.clone()).unwrap());
        let nu = a.vmax(m.initial()).clone();
        let p1 = random_pair(&m, &mut rng);
        let p2 = random_pair(&m, &mut rng);
        let mut left = ConstructedShield::new(a.clone(), nu.clone(), false).unwrap();
        left.join_unchecked(&p1.0, &p1.1).unwrap();
        left.join_unchecked(&p2.0, &p2.1).unwrap();
        let mut right = ConstructedShield::new(a.clone(), nu, false).unwrap();
        right.join_unchecked(&p2.0, &p2.1).unwrap();
        right.join_unchecked(&p1.0, &p1.1).unwrap();
        prop_assert_eq!(left.value(), right.value());
        prop_assert_eq!(left.trie().pairs(), right.trie().pairs());
        let before = left.trie().pairs();
        let value = left.value();
        left.join_unchecked(&p1.0, &p1.1).unwrap();
        prop_assert_eq!(left.trie().pairs(), before);
        prop_assert_eq!(left.value(), value);
    }

    #[test]
    fn convex_mode_keeps_value_and_widens_allow_sets(seed in any::<u64>(), k in 0i64..=4) {
        let (m, mut rng) = model(seed);
        let a = Arc::new(Analysis::new(m.clone()).unwrap());
        let mut shield = ConstructedShield::new(a.clone(), threshold(&a, k), false).unwrap();
        for _ in 0..8 {
            let (h, d) = random_pair(&m, &mut rng);
            shield.safe_extend(&h, &d).unwrap();
        }
        let mut convex = shield.clone();
        convex.set_convex(true);
        prop_assert_eq!(convex.value(), shield.value());
        prop_assert_eq!(convex.is_safe(), shield.is_safe());
        for _ in 0..8 {
            let (h, d) = random_pair(&m, &mut rng);
            let plain = shield.decide_node(shield.cursor_of(&h), h.last(), &d).unwrap();
            let wide = convex.decide_node(convex.cursor_of(&h), h.last(), &d).unwrap();
            prop_assert!(plain.intervened || !wide.intervened);
        }
    }

    #[test]
    fn allow_sets_are_ordered(seed in any::<u64>(), k in 0i64..=4) {
        let (m, mut rng) = model(seed);
        let a = Analysis::new(m.clone()).unwrap();
        let nu = threshold(&a, k);
        for _ in 0..10 {
            let (h, d) = random_pair(&m, &mut rng);
            let ([safe, pess, opt], _) = ordering_query(&a, &nu, &h, &d).unwrap();
            prop_assert!(!safe || pess);
            prop_assert!(!pess || opt);
        }
    }
}

#[test]
fn simulation_is_reproducible() {
    let a = Arc::new(Analysis::new(fixtures::fork::<f64>()).unwrap());
    let agent = make_agent(AgentKind::Random, &a, &AgentParams::default()).unwrap();
    let cfg = SimConfig { steps: 5_000, seed: 7, ..SimConfig::default() };
    let run = || simulate(a.model(), || Ok(Box::new(IdentityShield) as Box<dyn Shield<f64>>), &agent, &cfg).unwrap();
    assert_eq!(run(), run());
    let other = simulate(
        a.model(),
        || Ok(Box::new(IdentityShield) as Box<dyn Shield<f64>>),
        &agent,
        &SimConfig { seed: 8, ..cfg },
    )
    .unwrap();
    assert_ne!(run(), other);
}

#[test]
fn exact_and_simulated_evaluation_agree() {
    let cases: Vec<(Mdp<f64>, &str)> = vec![(fixtures::fork(), "fork"), (fixtures::chain::<f64>().with_rewards(), "chain")];
    for (m, name) in cases {
        let a = Arc::new(Analysis::new(m).unwrap());
        let agent = make_agent(AgentKind::Random, &a, &AgentParams::default()).unwrap();
        let cfg = SimConfig { steps: 60_000, seed: 3, ..SimConfig::default() };
        for safe in [false, true] {
            let exact = if safe {
                exact_eval(a.model(), &SafeShield::new(a.clone()), &agent, 50).unwrap()
            } else {
                exact_eval(a.model(), &IdentityShield, &agent, 50).unwrap()
            };
            let sim = simulate(
                a.model(),
                || {
                    Ok(if safe {
                        Box::new(SafeShield::new(a.clone())) as Box<dyn Shield<f64>>
                    } else {
                        Box::new(IdentityShield)
                    })
                },
                &agent,
                &cfg,
            )
            .unwrap();
            let ci = sim.ci.unwrap();
            assert!(
                (sim.safety - exact.safety).abs() <= 3.0 * ci + 1e-12,
                "{name} safe={safe}: simulated {} vs exact {} (ci {ci})",
                sim.safety,
                exact.safety
            );
        }
    }
}

#[test]
fn replicate_counters_are_consistent() {
    let stats = ReplicateStats { episodes: 4, bad_episodes: 1, steps: 10, allowed: 5 };
    assert_eq!(stats.safety(), 0.25);
    assert_eq!(stats.allowed_ratio(), 0.5);
}
