//! Acceptance run: one PASS/FAIL line per criterion, executed sequentially so
//! the timing checks are not skewed by other tests.

use std::collections::BTreeMap;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use probshield::bench::{memory_profile, throughput};
use probshield::experiment::{
    build_shield, collect_log, convergence, fork_unsafe_agent, run_grid, GridConfig, ShieldConfig, ShieldKind,
};
use probshield::verify::{fixture_instances, guarantee_suite};
use probshield_core::constructed::{NodeId, ROOT};
use probshield_core::fixtures::{
    self, CHAIN_ALPHA, CHAIN_BETA, FORK_BETA, FORK_DELTA, FORK_EPS, S0, S1, S2,
};
use probshield_core::lp::convex_member;
use probshield_core::oracle::{
    below, check_guarantees, dag_values, delta_decider, enumerate_history_det, ordering_query, policy_value,
    random_acyclic_mdp, random_choice, random_history, verify_shield_value, Policy, POLICY_CAP,
};
use probshield_core::shields::{
    incurred_risk, incurred_safety, shield_delta, DeltaVariant, TallyKind, TallyShield, TallyState,
};
use probshield_core::{
    construct_offline, make_agent, ActionId, AgentKind, AgentParams, Analysis,
    ConstructedShield, Dist, History, Mdp, Method, Objective, OnlineShield, Prob, Rational, Shield, StateId,
};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

trait Context<V> {
    fn ctx(self, what: &str) -> Result<V, String>;
}

impl<V, E: std::fmt::Display> Context<V> for Result<V, E> {
    fn ctx(self, what: &str) -> Result<V, String> {
        self.map_err(|e| format!("{what}: {e}"))
    }
}

fn q(n: i64, d: i64) -> Rational {
    <Rational as Prob>::from_ratio(n, d)
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let took = start.elapsed();
    ensure!(took < limit, "{what} took {took:?}, limit {limit:?}");
    Ok(())
}

/// Threshold on the quarter grid between `V_min(s0)` and `V_max(s0)`.
fn quarter_nu(a: &Analysis<Rational>, rng: &mut ChaCha8Rng) -> Rational {
    let s0 = a.model().initial();
    let (lo, hi) = (a.vmin(s0).clone(), a.vmax(s0).clone());
    lo.clone() + (hi - lo) * q(below(rng, 5) as i64, 4)
}

fn random_pair(m: &Mdp<Rational>, rng: &mut ChaCha8Rng) -> (History<Rational>, Dist<Rational>) {
    let h = random_history(m, rng, 4);
    let d = random_choice(rng, &m.actions(h.last()), 4);
    (h, d)
}

fn chain_values() -> Verdict {
    let start = Instant::now();
    let a = Analysis::new(fixtures::chain::<Rational>()).ctx("analysis")?;
    let vmin: Vec<Rational> = [S0, S1, S2].iter().map(|&s| a.vmin(s).clone()).collect();
    let vmax: Vec<Rational> = [S0, S1, S2].iter().map(|&s| a.vmax(s).clone()).collect();
    ensure!(vmin == vec![q(1, 10); 3], "V_min = {vmin:?}");
    ensure!(vmax == vec![q(271, 1000), q(19, 100), q(1, 10)], "V_max = {vmax:?}");
    within(start, Duration::from_secs(1), "valuation")?;
    Ok(format!("V_min = (1/10, 1/10, 1/10), V_max = (271/1000, 19/100, 1/10) in {:?}", start.elapsed()))
}

fn chain_tallies() -> Verdict {
    let start = Instant::now();
    let a = Arc::new(Analysis::new(fixtures::chain::<Rational>()).ctx("analysis")?);
    let nu = q(1, 5);
    let h = History::new(S0);
    let d = Dist::from_ratios(&[(CHAIN_ALPHA, 1, 2), (CHAIN_BETA, 1, 2)]);
    let irisk = incurred_risk(&a, &h, &d).ctx("irisk")?;
    let isafety = incurred_safety(&a, &h, &d).ctx("isafety")?;
    let b_min = TallyState::fresh(&a, TallyKind::Optimistic, &nu).budget;
    let b_max = TallyState::fresh(&a, TallyKind::Pessimistic, &nu).budget;
    ensure!(irisk == q(45, 1000), "irisk = {irisk}");
    ensure!(isafety == q(405, 10_000), "isafety = {isafety}");
    ensure!(b_min == q(1, 10) && b_max == q(71, 1000), "budgets {b_min}, {b_max}");
    let opt = TallyShield::optimistic(a.clone(), nu.clone()).ctx("opt")?.decide(&h, &d).ctx("opt")?;
    let pess = TallyShield::pessimistic(a.clone(), nu).ctx("pess")?.decide(&h, &d).ctx("pess")?;
    ensure!(!opt.intervened, "optimistic shield intervened");
    ensure!(pess.intervened, "pessimistic shield allowed");
    within(start, Duration::from_secs(1), "tallies")?;
    Ok(format!("irisk {irisk} <= b_min {b_min} (opt allows), isafety {isafety} < b_max {b_max} (pess intervenes)"))
}

fn fork_walkthrough() -> Verdict {
    let a = Arc::new(Analysis::new(fixtures::fork::<Rational>()).ctx("analysis")?);
    let branch = |s: StateId| History::new(S0).extended(Dist::dirac(FORK_EPS), FORK_EPS, s);
    let mut shield = ConstructedShield::new(a, q(1, 2), false).ctx("shield")?;
    let first = shield.safe_extend(&branch(S1), &Dist::dirac(FORK_BETA)).ctx("first")?;
    ensure!(first.accepted && first.value == q(1, 2), "first extension: {first:?}");
    ensure!(shield.value() == q(1, 2), "value after first: {}", shield.value());
    let second = shield.safe_extend(&branch(S2), &Dist::dirac(FORK_DELTA)).ctx("second")?;
    ensure!(!second.accepted && second.value == q(1, 1), "second extension: {second:?}");
    ensure!(shield.value() == q(1, 2), "rejection changed the shield");
    Ok("first accepted at 1/2, second rejected at tentative value 1".into())
}

/// Bellman recursion over the trie, floor `V_min` off the trie.
fn trie_bellman(shield: &ConstructedShield<Rational>, floor: &[Rational], node: NodeId) -> Rational {
    let trie = shield.trie();
    let m = shield.analysis().model();
    let n = trie.node(node);
    let mut best = floor[n.state.idx()].clone();
    for &c in &n.allowed {
        let mut value = q(0, 1);
        for (a, w) in trie.choices().get(c).entries() {
            for (x, p) in m.successors(n.state, *a).unwrap_or(&[]) {
                let below = match trie.child(node, c, *a, *x) {
                    Some(child) => trie_bellman(shield, floor, child),
                    None => floor[x.idx()].clone(),
                };
                value = value + w.clone() * p.clone() * below;
            }
        }
        if value > best {
            best = value;
        }
    }
    best
}

fn shield_value_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut nontrivial = 0;
    for i in 0..200 {
        let m: Mdp<Rational> = random_acyclic_mdp(&mut rng, 6, 3);
        let a = Arc::new(Analysis::new(m.clone()).ctx("analysis")?);
        let mut shield = ConstructedShield::new(a.clone(), a.vmax(m.initial()).clone(), false).ctx("shield")?;
        for _ in 0..1 + below(&mut rng, 5) {
            let (h, d) = random_pair(&m, &mut rng);
            shield.join_unchecked(&h, &d).ctx("join")?;
        }
        let value = shield.value();
        let brute = verify_shield_value(&shield, 1 << 22).ctx("brute force")?;
        let floor = dag_values(&m, Objective::Min).ctx("dag")?;
        let bellman = trie_bellman(&shield, &floor, ROOT);
        ensure!(value == brute && value == bellman, "trie #{i}: value {value}, selections {brute}, recursion {bellman}");
        if shield.trie().num_nodes() > 1 {
            nontrivial += 1;
        }
    }
    within(start, Duration::from_secs(60), "200 tries")?;
    Ok(format!("200 tries ({nontrivial} beyond the root) agree exactly in {:?}", start.elapsed()))
}

fn guarantees() -> Verdict {
    let fixtures = fixture_instances::<Rational>().ctx("fixtures")?.len();
    let report = guarantee_suite::<Rational>(100, 1000, 1).ctx("suite")?;
    ensure!(report.instances == fixtures + 100, "{} instances", report.instances);
    ensure!(report.stochastic_policies == 1000, "{} stochastic policies", report.stochastic_policies);
    let summary: Vec<String> =
        report.lines().iter().map(|(s, g, checked, bad, _)| format!("{s} {g} {bad}/{checked}")).collect();
    ensure!(report.holds(), "violations: {summary:?} {:?}", report.lines().iter().find(|l| l.3 > 0));
    Ok(format!("{} instances, zero violations ({})", report.instances, summary.join(", ")))
}

fn ordering() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut queries = 0;
    while queries < 10_000 {
        let m: Mdp<Rational> = random_acyclic_mdp(&mut rng, 6, 3);
        let a = Analysis::new(m.clone()).ctx("analysis")?;
        let nu = quarter_nu(&a, &mut rng);
        for _ in 0..20 {
            let (h, d) = random_pair(&m, &mut rng);
            let ([safe, pess, opt], _) = ordering_query(&a, &nu, &h, &d).ctx("query")?;
            ensure!((!safe || pess) && (!pess || opt), "order broken at {} with {d} (nu {nu})", h.path());
            queries += 1;
        }
    }
    let mut zero = 0;
    let mut draws = 0;
    while zero < 2_000 && draws < 20_000 {
        draws += 1;
        let m: Mdp<Rational> = random_acyclic_mdp(&mut rng, 6, 3);
        let a = Analysis::new(m.clone()).ctx("analysis")?;
        if *a.vmin(m.initial()) != q(0, 1) {
            continue;
        }
        for _ in 0..20 {
            let (h, d) = random_pair(&m, &mut rng);
            let (flags, executed) = ordering_query(&a, &q(0, 1), &h, &d).ctx("query")?;
            ensure!(flags[0] == flags[1] && flags[1] == flags[2], "nu = 0 flags {flags:?} at {}", h.path());
            ensure!(executed[0].same_as(&executed[1]) && executed[1].same_as(&executed[2]), "nu = 0 executions differ");
            zero += 1;
        }
    }
    ensure!(zero >= 2_000, "only {zero} queries with V_min(s0) = 0");
    Ok(format!("{queries} ordering queries and {zero} queries at nu = 0, zero violations"))
}

fn dirac_policy(choices: &[ActionId]) -> Policy<Rational> {
    Policy::memoryless(choices.iter().map(|&a| Dist::dirac(a)).collect())
}

fn delta_counterexamples() -> Verdict {
    let grid = [q(1, 10), q(1, 4), q(1, 2)];
    let mut cases = 0;
    for nu in &grid {
        for delta in &grid {
            let gap = Analysis::new(fixtures::gap(nu.clone()).ctx("gap")?).ctx("analysis")?;
            let m = gap.model();
            let alpha = dirac_policy(&[ActionId(0), ActionId(2), ActionId(2)]);
            ensure!(policy_value(m, &alpha) == *nu, "GAP alpha policy value");
            let d = shield_delta(&gap, S0, &Dist::dirac(ActionId(0)), delta, DeltaVariant::Multiplicative).ctx("delta")?;
            ensure!(d.intervened, "GAP({nu}), delta {delta}: safe alpha was allowed");
            let policies = enumerate_history_det(m, POLICY_CAP).ctx("policies")?;
            let mut decide = delta_decider(&gap, delta.clone(), DeltaVariant::Multiplicative);
            let report = check_guarantees(m, nu, &mut decide, &policies).ctx("guarantees")?;
            ensure!(!report.weak_permissiveness.holds(), "GAP({nu}), delta {delta}: no (P-) witness");

            let trap = Analysis::new(fixtures::trap(nu.clone(), delta.clone()).ctx("trap")?).ctx("analysis")?;
            let m = trap.model();
            let x = fixtures::trap_exit(nu, delta).ctx("exit")?;
            let beta = dirac_policy(&[ActionId(1), ActionId(2), ActionId(2), ActionId(3), ActionId(3)]);
            ensure!(policy_value(m, &beta) == x && x > *nu, "TRAP beta policy value");
            let d = shield_delta(&trap, S0, &Dist::dirac(ActionId(1)), delta, DeltaVariant::Multiplicative).ctx("delta")?;
            ensure!(!d.intervened, "TRAP({nu}, {delta}): unsafe beta was blocked");
            let policies = enumerate_history_det(m, POLICY_CAP).ctx("policies")?;
            let mut decide = delta_decider(&trap, delta.clone(), DeltaVariant::Multiplicative);
            let report = check_guarantees(m, nu, &mut decide, &policies).ctx("guarantees")?;
            ensure!(!report.weak_safety.holds(), "TRAP({nu}, {delta}): no (S-) witness");
            cases += 1;
        }
    }
    Ok(format!("{cases} (nu, delta) pairs: GAP breaks (P-), TRAP breaks (S-)"))
}

fn per_step_vs_episodes() -> Verdict {
    let a = Arc::new(Analysis::new(fixtures::fork::<Rational>()).ctx("analysis")?);
    let agent = fork_unsafe_agent(a.model());
    let nu = q(1, 2);
    let per_step = probshield_core::eval::per_step_update_demo(&a, nu.clone(), &agent, 50).ctx("per-step")?;
    ensure!(per_step.induced_value == q(1, 1), "per-step value {}", per_step.induced_value);
    let exact = probshield_core::eval::online_episode_values(&a, nu.clone(), false, &agent, 50, 6).ctx("episodes")?;
    ensure!(exact[0] == q(0, 1) && exact[1] == q(1, 2), "episode values {exact:?}");
    ensure!(exact.iter().all(|v| *v <= nu), "episode above nu: {exact:?}");
    ensure!(exact[2..].iter().all(|v| *v == exact[2]), "later episodes not stationary: {exact:?}");

    let af = Arc::new(Analysis::new(fixtures::fork::<f64>()).ctx("analysis")?);
    let agent_f = fork_unsafe_agent(af.model());
    let mut online = OnlineShield::new(af.clone(), 0.5, false).ctx("online")?;
    let trace = probshield_core::eval::online_episode_trace(af.model(), &mut online, &agent_f, 50, 20_000, 8)
        .ctx("simulation")?;
    ensure!(!trace[0], "episode 0 reached Bad");
    let later = &trace[2..];
    let p = exact[2].to_f64();
    let freq = later.iter().filter(|&&b| b).count() as f64 / later.len() as f64;
    let sigma = (p * (1.0 - p) / later.len() as f64).sqrt();
    ensure!((freq - p).abs() <= 3.0 * sigma, "frequency {freq} vs {p} (sigma {sigma})");
    Ok(format!("per-step value 1; episodes 0, 1 exact at 0, 1/2; episodes 2.. observed {freq:.4} vs {p} (3 sigma {:.4})", 3.0 * sigma))
}

fn offline_consequence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut accepted, mut rejected) = (0, 0);
    for log in 0..50 {
        let m: Mdp<Rational> = random_acyclic_mdp(&mut rng, 6, 3);
        let a = Arc::new(Analysis::new(m.clone()).ctx("analysis")?);
        let nu = quarter_nu(&a, &mut rng);
        let pairs: Vec<_> = (0..25).map(|_| random_pair(&m, &mut rng)).collect();
        let (mut fin, steps) = construct_offline(a.clone(), nu.clone(), false, &pairs).ctx("construct")?;
        let mut replay = ConstructedShield::new(a.clone(), nu.clone(), false).ctx("shield")?;
        for ((h, d), step) in pairs.iter().zip(&steps) {
            let before = replay.clone();
            let ext = replay.safe_extend(h, d).ctx("extend")?;
            ensure!(ext.accepted == step.accepted, "log #{log}: replay disagrees at step {}", step.index);
            if step.accepted {
                continue;
            }
            let mut forced = before;
            let value = forced.join_unchecked(h, d).ctx("join")?;
            ensure!(value > nu && forced.value() > nu, "log #{log}: rejected pair joins to {value} <= {nu}");
            if let Ok(brute) = verify_shield_value(&forced, 1 << 16) {
                ensure!(brute > nu, "log #{log}: brute-force value {brute} <= {nu}");
            }
            let mut late = fin.clone();
            ensure!(late.join_unchecked(h, d).ctx("join")? > nu, "log #{log}: rejected pair fits the final shield");
        }
        ensure!(fin.is_safe(), "log #{log}: final shield unsafe");
        for ((h, d), step) in pairs.iter().zip(&steps) {
            if step.accepted {
                ensure!(!fin.decide(h, d).ctx("decide")?.intervened, "log #{log}: accepted pair blocked");
                accepted += 1;
            } else {
                rejected += 1;
            }
        }
    }
    ensure!(rejected > 0 && accepted > 0, "degenerate logs: {accepted} accepted, {rejected} rejected");
    Ok(format!("50 logs: {accepted} accepted pairs allowed, {rejected} rejected pairs exceed nu when forced"))
}

fn grid_comparison() -> Verdict {
    let start = Instant::now();
    let rows = run_grid::<f64>(&GridConfig::default()).ctx("grid")?;
    let mut cells: BTreeMap<(String, String, String), BTreeMap<String, probshield_core::EvalReport>> = BTreeMap::new();
    for row in rows {
        cells.entry((row.model.clone(), row.agent.clone(), row.nu.clone())).or_default().insert(row.shield, row.report);
    }
    for ((model, agent, nu_text), shields) in &cells {
        let nu: f64 = nu_text.parse().ctx("nu")?;
        let cell = format!("{model}/{agent}/{nu_text}");
        for name in ["safe", "offline", "ml"] {
            let r = shields.get(name).ok_or(format!("{cell}: no {name} row"))?;
            ensure!(r.method == Method::Exact, "{cell}: {name} not evaluated exactly");
            ensure!(r.safety <= nu + 1e-9, "{cell}: {name} safety {} > {nu}", r.safety);
        }
        let (safe, off) = (&shields["safe"], &shields["offline"]);
        ensure!(off.allowed_ratio >= safe.allowed_ratio - 1e-9, "{cell}: offline ratio below safe");
        let onl = shields.get("online").ok_or(format!("{cell}: no online row"))?;
        let ci = onl.ci.unwrap_or(0.0);
        ensure!(onl.safety <= nu + 3.0 * ci, "{cell}: online safety {} > {nu} + 3*{ci}", onl.safety);
    }
    ensure!(cells.len() == 18, "{} cells", cells.len());
    within(start, Duration::from_secs(600), "grid")?;
    Ok(format!("{} cells hold (a), (b), (c) in {:.0?}", cells.len(), start.elapsed()))
}

fn convergence_curve() -> Verdict {
    let a = Arc::new(Analysis::new(fixtures::corridor::<f64>(&Default::default()).ctx("corridor")?).ctx("analysis")?);
    let agent = make_agent(AgentKind::Random, &a, &AgentParams::default()).ctx("agent")?;
    let mut pairs = collect_log(a.model(), &agent, 100_000, 50, 0).ctx("log")?;
    ensure!(pairs.len() >= 100_000, "{} pairs", pairs.len());
    pairs.truncate(100_000);
    let points = convergence(&a, 0.1, &agent, &pairs, 4000, 50).ctx("convergence")?;
    for w in points.windows(2) {
        ensure!(
            w[1].allowed_ratio >= w[0].allowed_ratio - 1e-9,
            "ratio fell from {} to {} at step {}",
            w[0].allowed_ratio,
            w[1].allowed_ratio,
            w[1].construction_step
        );
    }
    let last = points.last().ok_or("no points")?.allowed_ratio;
    let at_40k = points.iter().find(|p| p.construction_step == 40_000).ok_or("no 40k point")?.allowed_ratio;
    ensure!(at_40k >= 0.95 * last, "40k ratio {at_40k} below 95% of {last}");
    Ok(format!("{} samples monotone; ratio {at_40k:.4} at 40k vs {last:.4} at 100k", points.len()))
}

fn performance() -> Verdict {
    let a = Arc::new(Analysis::new(fixtures::corridor::<f64>(&Default::default()).ctx("corridor")?).ctx("analysis")?);
    let m = a.model();
    let agent = make_agent(AgentKind::Random, &a, &AgentParams::default()).ctx("agent")?;
    let mut rates = Vec::new();
    for (kind, steps, floor) in [
        (ShieldKind::Safe, 200_000, 1e4),
        (ShieldKind::Opt, 200_000, 1e4),
        (ShieldKind::Pess, 200_000, 1e4),
        (ShieldKind::Online, 20_000, 1e3),
    ] {
        let cfg = ShieldConfig { kind, nu: 0.1, delta: 1.0, convex: false };
        let proto = build_shield(&a, &cfg, &[]).ctx("shield")?;
        let t = throughput(m, kind.as_str(), &proto, &agent, steps, 50, 1).ctx("throughput")?;
        ensure!(t.queries_per_second >= floor, "{} at {:.0}/s", t.shield, t.queries_per_second);
        rates.push(format!("{} {:.0}/s", t.shield, t.queries_per_second));
    }
    let pairs = collect_log(m, &agent, 100_000, 50, 2).ctx("log")?;
    let profile = memory_profile(&a, 0.1, &pairs, 10_000).ctx("memory")?;
    let base = profile[0].bytes as f64;
    let first = profile.iter().find(|p| p.accepted > 0).ok_or("nothing accepted")?;
    let slope = (first.bytes as f64 - base) / first.accepted as f64;
    for p in &profile {
        let grown = p.bytes as f64 - base;
        ensure!(grown <= 1.5 * slope * p.accepted as f64 + 1.0, "{} bytes at {} accepted pairs", p.bytes, p.accepted);
    }

    let dir = tempfile::tempdir().ctx("tempdir")?;
    let csv = dir.path().join("bench.csv");
    let status = Command::new(env!("CARGO_BIN_EXE_probshield"))
        .args(["bench", "--fixture", "corridor", "--steps", "5000", "--csv", csv.to_str().unwrap()])
        .status()
        .ctx("bench")?;
    let report = std::fs::read_to_string(&csv).ctx("bench report")?;
    ensure!(status.success() && report.contains("throughput,pess") && report.contains("memory,offline"), "bench report: {report}");
    let last = profile.last().unwrap();
    Ok(format!("{}; {} bytes for {} accepted pairs (initial slope {slope:.0} B/pair); bench report written", rates.join(", "), last.bytes, last.accepted))
}

/// Carathéodory check in the 2-simplex: `target` is in the hull iff some
/// subset of at most three points carries nonnegative barycentric weights.
fn hull_oracle(target: &[Rational; 3], points: &[[Rational; 3]]) -> bool {
    let zero = q(0, 1);
    if points.iter().any(|p| p == target) {
        return true;
    }
    for (i, p) in points.iter().enumerate() {
        for r in &points[i + 1..] {
            // target = λ·p + (1 − λ)·r
            let Some(k) = (0..3).find(|&k| p[k] != r[k]) else { continue };
            let lambda = (target[k].clone() - r[k].clone()) / (p[k].clone() - r[k].clone());
            if lambda < zero || lambda > q(1, 1) {
                continue;
            }
            if (0..3).all(|j| lambda.clone() * p[j].clone() + (q(1, 1) - lambda.clone()) * r[j].clone() == target[j]) {
                return true;
            }
        }
    }
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            for k in j + 1..points.len() {
                let (p, r, s) = (&points[i], &points[j], &points[k]);
                // target − s = λ1·(p − s) + λ2·(r − s) on the first two coordinates
                let (a11, a12) = (p[0].clone() - s[0].clone(), r[0].clone() - s[0].clone());
                let (a21, a22) = (p[1].clone() - s[1].clone(), r[1].clone() - s[1].clone());
                let (b1, b2) = (target[0].clone() - s[0].clone(), target[1].clone() - s[1].clone());
                let det = a11.clone() * a22.clone() - a12.clone() * a21.clone();
                if det == zero {
                    continue;
                }
                let l1 = (b1.clone() * a22 - a12 * b2.clone()) / det.clone();
                let l2 = (a11 * b2 - a21 * b1) / det;
                if l1 >= zero && l2 >= zero && l1 + l2 <= q(1, 1) {
                    return true;
                }
            }
        }
    }
    false
}

fn coords(d: &Dist<Rational>) -> [Rational; 3] {
    [d.prob(ActionId(0)), d.prob(ActionId(1)), d.prob(ActionId(2))]
}

fn convex_soundness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for i in 0..100 {
        let m: Mdp<Rational> = random_acyclic_mdp(&mut rng, 6, 3);
        let a = Arc::new(Analysis::new(m.clone()).ctx("analysis")?);
        let nu = quarter_nu(&a, &mut rng);
        let mut shield = ConstructedShield::new(a.clone(), nu, false).ctx("shield")?;
        for _ in 0..8 {
            let (h, d) = random_pair(&m, &mut rng);
            shield.safe_extend(&h, &d).ctx("extend")?;
        }
        let mut toggled = shield.clone();
        toggled.set_convex(true);
        ensure!(toggled.value() == shield.value(), "shield #{i}: value changed under convex mode");
        ensure!(toggled.is_safe() == shield.is_safe(), "shield #{i}: safety changed under convex mode");
    }

    let actions = [ActionId(0), ActionId(1), ActionId(2)];
    let (mut inside, mut outside) = (0, 0);
    for n in 0..3000 {
        let members: Vec<Dist<Rational>> = (0..1 + below(&mut rng, 3))
            .map(|_| {
                let subset: Vec<ActionId> = actions.iter().copied().filter(|_| rng.next_u64() & 1 == 1).collect();
                let subset = if subset.is_empty() { vec![actions[below(&mut rng, 3)]] } else { subset };
                random_choice(&mut rng, &subset, 4)
            })
            .collect();
        let safe: Vec<ActionId> = actions.iter().copied().filter(|_| rng.next_u64() % 3 == 0).collect();
        let mut points: Vec<[Rational; 3]> = members.iter().map(coords).collect();
        points.extend(safe.iter().map(|&a| coords(&Dist::dirac(a))));
        let target = if n % 2 == 0 {
            random_choice(&mut rng, &actions, 6)
        } else {
            // a random mixture of the points, which the oracle must place inside
            let weights: Vec<i64> = points.iter().map(|_| 1 + below(&mut rng, 4) as i64).collect();
            let total: i64 = weights.iter().sum();
            let mix: Vec<(ActionId, Rational)> = actions
                .iter()
                .enumerate()
                .map(|(k, &a)| {
                    let p = points.iter().zip(&weights).fold(q(0, 1), |acc, (pt, &w)| acc + pt[k].clone() * q(w, total));
                    (a, p)
                })
                .filter(|(_, p)| *p != q(0, 1))
                .collect();
            Dist::new(mix).ctx("mixture")?
        };
        let expected = hull_oracle(&coords(&target), &points);
        let refs: Vec<&Dist<Rational>> = members.iter().collect();
        let got = convex_member(&target, &refs, &safe);
        ensure!(got == expected, "query #{n}: {target} against {members:?} + safe {safe:?}: lp {got}, oracle {expected}");
        if expected {
            inside += 1;
        } else {
            outside += 1;
        }
    }
    ensure!(inside > 100 && outside > 100, "unbalanced spot checks: {inside} inside, {outside} outside");
    Ok(format!("100 shields unchanged by convex mode; 3000 hull queries agree ({inside} inside, {outside} outside)"))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 13] = [
        ("CHAIN value reproduction", chain_values),
        ("CHAIN incurred risk and safety", chain_tallies),
        ("FORK constructed-shield walkthrough", fork_walkthrough),
        ("shield value equals selection maximum", shield_value_oracle),
        ("guarantee suite", guarantees),
        ("allow-set ordering", ordering),
        ("delta-shield counterexamples", delta_counterexamples),
        ("per-step updating versus episode boundaries", per_step_vs_episodes),
        ("offline construction consequences", offline_consequence),
        ("qualitative comparison grid", grid_comparison),
        ("offline convergence", convergence_curve),
        ("throughput and memory", performance),
        ("convex closure soundness", convex_soundness),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
