use std::sync::Arc;

use probshield::experiment::{build_memoryless, collect_log};
use probshield::formats::{
    dump_agent, dump_memoryless, dump_trie, log_line, model_hash, parse_agent, parse_log, parse_model,
    parse_shield_dump, serialize_model, ShieldDump,
};
use probshield_core::oracle::random_acyclic_mdp;
use probshield_core::{
    construct_offline, fixtures, make_agent, AgentKind, AgentParams, Analysis, Mdp, Prob, Rational,
};
use proptest::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn q(n: i64, d: i64) -> Rational {
    <Rational as Prob>::from_ratio(n, d)
}

#[test]
fn fixture_models_round_trip() {
    let models: Vec<Mdp<Rational>> = vec![
        fixtures::fork(),
        fixtures::chain::<Rational>().with_rewards(),
        fixtures::gap(q(1, 4)).unwrap(),
        fixtures::by_name("corridor").unwrap(),
        fixtures::by_name("dpm").unwrap(),
    ];
    for m in models {
        let text = serialize_model(&m);
        let back: Mdp<Rational> = parse_model(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(model_hash(&back), model_hash(&m));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_models_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m: Mdp<Rational> = random_acyclic_mdp(&mut rng, 6, 3);
        let back: Mdp<Rational> = parse_model(&serialize_model(&m)).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn logs_round_trip(seed in any::<u64>()) {
        let a = Analysis::new(fixtures::chain::<Rational>()).unwrap();
        let agent = make_agent(AgentKind::Random, &a, &AgentParams::default()).unwrap();
        let pairs = collect_log(a.model(), &agent, 40, 5, seed).unwrap();
        let text: String = pairs.iter().map(|(h, d)| log_line(h, d) + "\n").collect();
        prop_assert_eq!(parse_log(&text, a.model()).unwrap(), pairs);
    }
}

#[test]
fn log_without_executed_choices_is_chained() {
    let m = fixtures::chain::<Rational>();
    let a = Analysis::new(m.clone()).unwrap();
    let agent = make_agent(AgentKind::Random, &a, &AgentParams::default()).unwrap();
    let pairs = collect_log(&m, &agent, 30, 3, 5).unwrap();
    let text: String = pairs
        .iter()
        .map(|(h, d)| {
            let full = log_line(h, d);
            let cut = full.rsplit_once(" | ").unwrap().0.to_string();
            cut + "\n"
        })
        .collect();
    assert_eq!(parse_log(&text, &m).unwrap(), pairs);
}

#[test]
fn log_errors_carry_line_numbers() {
    let m = fixtures::fork::<Rational>();
    let text = "<0> | <0:1>\n# comment\n<0,0,7> | <1:1>\n";
    let e = parse_log(&text, &m).unwrap_err();
    assert_eq!(e.line, 3);
    let e = parse_log("<0> | 0:1\n", &m).unwrap_err();
    assert_eq!(e.line, 1);
}

#[test]
fn model_errors_carry_line_numbers() {
    let e = parse_model::<Rational>("mdp 2 1\ninitial 0\n\nt 0 0 1:1/2 0:1/3\n").unwrap_err();
    assert_eq!(e.line, 4);
    let e = parse_model::<Rational>("initial 0\n").unwrap_err();
    assert_eq!(e.line, 1);
    let e = parse_model::<Rational>("mdp 2 1\nbogus 1\n").unwrap_err();
    assert_eq!(e.line, 2);
    assert!(e.to_string().contains("line 2"));
}

#[test]
fn trie_dump_round_trips() {
    let a = Arc::new(Analysis::new(fixtures::by_name::<Rational>("chain").unwrap()).unwrap());
    let agent = make_agent(AgentKind::Random, &a, &AgentParams::default()).unwrap();
    let pairs = collect_log(a.model(), &agent, 60, 4, 11).unwrap();
    for convex in [false, true] {
        let (shield, _) = construct_offline(a.clone(), q(3, 20), convex, &pairs).unwrap();
        let text = dump_trie(&shield);
        let ShieldDump::Trie(back) = parse_shield_dump(&text, a.clone()).unwrap() else {
            panic!("expected a trie dump");
        };
        assert_eq!(back.value(), shield.value());
        assert_eq!(back.nu(), shield.nu());
        assert_eq!(back.convex(), convex);
        assert_eq!(back.trie().pairs(), shield.trie().pairs());
        assert_eq!(dump_trie(&back), text);
    }
}

#[test]
fn memoryless_dump_round_trips() {
    let a = Arc::new(Analysis::new(fixtures::chain::<Rational>()).unwrap());
    let agent = make_agent(AgentKind::Random, &a, &AgentParams::default()).unwrap();
    let pairs = collect_log(a.model(), &agent, 60, 4, 2).unwrap();
    let shield = build_memoryless(a.clone(), q(1, 5), false, &pairs).unwrap();
    let text = dump_memoryless(&shield, a.model());
    let ShieldDump::Memoryless(back) = parse_shield_dump(&text, a.clone()).unwrap() else {
        panic!("expected a memoryless dump");
    };
    assert_eq!(back.value(), shield.value());
    for s in a.model().states() {
        assert_eq!(back.allowed(s), shield.allowed(s));
    }
}

#[test]
fn dump_for_another_model_is_rejected() {
    let chain = Arc::new(Analysis::new(fixtures::chain::<Rational>()).unwrap());
    let fork = Arc::new(Analysis::new(fixtures::fork::<Rational>()).unwrap());
    let shield = probshield_core::ConstructedShield::new(chain, q(1, 5), false).unwrap();
    let e = parse_shield_dump(&dump_trie(&shield), fork).err().unwrap();
    assert!(e.message.contains("different model"));
}

#[test]
fn agents_round_trip() {
    let a = Analysis::new(fixtures::chain::<Rational>().with_rewards()).unwrap();
    for kind in [AgentKind::Greedy, AgentKind::Timid, AgentKind::Random] {
        let agent = make_agent(kind, &a, &AgentParams::default()).unwrap();
        let back = parse_agent(&dump_agent(&agent), a.model()).unwrap();
        assert_eq!(back, agent);
    }
    let e = parse_agent("agent random\na 0 0:1\n", a.model()).unwrap_err();
    assert!(e.message.contains("no choice"));
}
