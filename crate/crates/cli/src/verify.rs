//! Oracle suite behind `verify`: guarantee checks of σ_S, σ_opt and σ_pess
//! on the fixtures and on random acyclic models.

use probshield_core::oracle::{
    below, check_guarantees, enumerate_history_det, random_acyclic_mdp, random_stochastic_policy, safe_decider,
    tally_decider, GuaranteeReport, Policy, POLICY_CAP,
};
use probshield_core::shields::TallyKind;
use probshield_core::{fixtures, Analysis, Mdp, Prob};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SuiteReport {
    pub instances: usize,
    pub stochastic_policies: usize,
    pub safe: GuaranteeReport,
    pub optimistic: GuaranteeReport,
    pub pessimistic: GuaranteeReport,
}

impl SuiteReport {
    /// σ_pess: (S+), (P−); σ_opt: (S−), (P+); σ_S: (S+).
    pub fn holds(&self) -> bool {
        self.pessimistic.strong_safety.holds()
            && self.pessimistic.weak_permissiveness.holds()
            && self.optimistic.weak_safety.holds()
            && self.optimistic.strong_permissiveness.holds()
            && self.safe.strong_safety.holds()
    }

    /// `(shield, guarantee, checked, violations, witness)` per expected guarantee.
    pub fn lines(&self) -> Vec<(&'static str, &'static str, usize, usize, String)> {
        let row = |shield, name, c: &probshield_core::oracle::Check| {
            (shield, name, c.checked, c.violations, c.witness.clone().unwrap_or_default())
        };
        vec![
            row("pess", "S+", &self.pessimistic.strong_safety),
            row("pess", "P-", &self.pessimistic.weak_permissiveness),
            row("opt", "S-", &self.optimistic.weak_safety),
            row("opt", "P+", &self.optimistic.strong_permissiveness),
            row("safe", "S+", &self.safe.strong_safety),
        ]
    }
}

/// Fixture instances with thresholds inside `[V_min(s0), 1]`.
pub fn fixture_instances<T: Prob>() -> probshield_core::Result<Vec<(Mdp<T>, T)>> {
    let q = T::from_ratio;
    Ok(vec![
        (fixtures::fork(), q(1, 2)),
        (fixtures::chain(), q(1, 5)),
        (fixtures::gap(q(1, 4))?, q(1, 4)),
        (fixtures::trap(q(1, 4), q(1, 2))?, q(1, 4)),
    ])
}

/// Threshold on a quarter grid between `V_min(s0)` and `V_max(s0)`.
fn random_nu<T: Prob>(analysis: &Analysis<T>, rng: &mut ChaCha8Rng) -> T {
    let s0 = analysis.model().initial();
    let (lo, hi) = (analysis.vmin(s0).clone(), analysis.vmax(s0).clone());
    lo.clone() + (hi - lo) * T::from_ratio(below(rng, 5) as i64, 4)
}

fn check_instance<T: Prob>(
    m: &Mdp<T>,
    nu: &T,
    stochastic: usize,
    rng: &mut ChaCha8Rng,
    report: &mut SuiteReport,
) -> probshield_core::Result<()> {
    let analysis = Analysis::new(m.clone())?;
    let mut policies: Vec<Policy<T>> = enumerate_history_det(m, POLICY_CAP)?;
    for _ in 0..stochastic {
        policies.push(random_stochastic_policy(m, rng, true));
    }
    let mut safe = safe_decider(&analysis);
    report.safe.merge(&check_guarantees(m, nu, &mut safe, &policies)?);
    let mut opt = tally_decider(&analysis, TallyKind::Optimistic, nu.clone());
    report.optimistic.merge(&check_guarantees(m, nu, &mut opt, &policies)?);
    let mut pess = tally_decider(&analysis, TallyKind::Pessimistic, nu.clone());
    report.pessimistic.merge(&check_guarantees(m, nu, &mut pess, &policies)?);
    report.instances += 1;
    report.stochastic_policies += stochastic;
    Ok(())
}

/// Fixtures plus `random_models` random acyclic 5-state models, with
/// `stochastic_total` sampled stochastic policies spread over all instances.
pub fn guarantee_suite<T: Prob>(
    random_models: usize,
    stochastic_total: usize,
    seed: u64,
) -> probshield_core::Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = fixture_instances::<T>()?;
    for _ in 0..random_models {
        let m: Mdp<T> = random_acyclic_mdp(&mut rng, 5, 3);
        let analysis = Analysis::new(m.clone())?;
        let nu = random_nu(&analysis, &mut rng);
        instances.push((m, nu));
    }
    let n = instances.len();
    let mut report = SuiteReport::default();
    for (i, (m, nu)) in instances.iter().enumerate() {
        let share = stochastic_total / n + usize::from(i < stochastic_total % n);
        check_instance(m, nu, share, &mut rng, &mut report)?;
    }
    Ok(report)
}
