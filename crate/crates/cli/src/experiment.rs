//! Experiment pipeline: model loading, shield construction, evaluation runs.

use std::path::Path as FsPath;
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use probshield_core::eval::{self, simulate_replicate, summarize, ReplicateStats, DEFAULT_HORIZON};
use probshield_core::shields::{DeltaShield, DeltaVariant, IdentityShield, SafeShield, TallyKind, TallyShield};
use probshield_core::fixtures::{FORK_BETA, FORK_DELTA, FORK_EPS, FORK_LOOP};
use probshield_core::{
    exact_eval, fixtures, make_agent, Agent, AgentKind, AgentParams, Analysis, ConstructedShield, Dist, EvalReport,
    History, MemorylessShield, Mdp, OnlineShield, Prob, Shield, SimConfig,
};
use rayon::prelude::*;

use crate::formats;

pub const THREADS_ENV: &str = "PROBSHIELD_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShieldKind {
    /// No shield; used to record logs and as a baseline.
    None,
    Safe,
    Delta,
    DeltaAdd,
    Opt,
    Pess,
    Offline,
    Online,
    Ml,
}

impl ShieldKind {
    pub const ALL: [ShieldKind; 9] = [
        ShieldKind::None,
        ShieldKind::Safe,
        ShieldKind::Delta,
        ShieldKind::DeltaAdd,
        ShieldKind::Opt,
        ShieldKind::Pess,
        ShieldKind::Offline,
        ShieldKind::Online,
        ShieldKind::Ml,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ShieldKind::None => "none",
            ShieldKind::Safe => "safe",
            ShieldKind::Delta => "delta",
            ShieldKind::DeltaAdd => "delta-add",
            ShieldKind::Opt => "opt",
            ShieldKind::Pess => "pess",
            ShieldKind::Offline => "offline",
            ShieldKind::Online => "online",
            ShieldKind::Ml => "ml",
        }
    }

    /// Shields built from a history-choice log.
    pub fn needs_log(self) -> bool {
        matches!(self, ShieldKind::Offline | ShieldKind::Ml)
    }

    /// Shields with a finite product form under a memoryless agent.
    pub fn exact_evaluable(self) -> bool {
        !matches!(self, ShieldKind::Opt | ShieldKind::Pess | ShieldKind::Online)
    }
}

impl FromStr for ShieldKind {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> anyhow::Result<Self> {
        ShieldKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| anyhow!("unknown shield kind `{s}` (expected safe, delta, delta-add, opt, pess, offline, online, ml or none)"))
    }
}

/// Where the model comes from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelSource {
    Fixture(String),
    File(std::path::PathBuf),
}

impl ModelSource {
    pub fn label(&self) -> String {
        match self {
            ModelSource::Fixture(name) => name.clone(),
            ModelSource::File(path) => path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into()),
        }
    }

    pub fn load<T: Prob>(&self) -> anyhow::Result<Mdp<T>> {
        match self {
            ModelSource::Fixture(name) => Ok(fixtures::by_name(name)?),
            ModelSource::File(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                formats::parse_model(&text).with_context(|| format!("loading {}", path.display()))
            }
        }
    }
}

/// Parameters of one shield.
#[derive(Clone, Debug, PartialEq)]
pub struct ShieldConfig<T> {
    pub kind: ShieldKind,
    pub nu: T,
    pub delta: T,
    pub convex: bool,
}

/// One evaluation job.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig<T> {
    pub model: ModelSource,
    pub agent: AgentKind,
    pub agent_params: AgentParams,
    pub shield: ShieldConfig<T>,
    pub sim: SimConfig,
    pub horizon: usize,
}

/// Checks `ν ∈ [0,1]` and `V_min(s0) ≤ ν` with a readable message.
pub fn check_nu<T: Prob>(analysis: &Analysis<T>, nu: &T) -> anyhow::Result<()> {
    analysis.check_threshold(nu).map_err(|e| anyhow!("{e}"))
}

/// A shield that can hand out fresh engines.
#[derive(Clone, Debug)]
pub enum Prototype<T: Prob> {
    None,
    Safe(SafeShield<T>),
    Delta(DeltaShield<T>),
    Tally(Arc<Analysis<T>>, TallyKind, T),
    Constructed(ConstructedShield<T>),
    Online(ConstructedShield<T>),
    Ml(MemorylessShield<T>),
}

impl<T: Prob> Prototype<T> {
    pub fn fresh(&self) -> anyhow::Result<Box<dyn Shield<T>>> {
        Ok(match self {
            Prototype::None => Box::new(IdentityShield),
            Prototype::Safe(s) => Box::new(s.clone()),
            Prototype::Delta(s) => Box::new(s.clone()),
            Prototype::Tally(a, kind, nu) => Box::new(TallyShield::new(a.clone(), *kind, nu.clone())?),
            Prototype::Constructed(s) => Box::new(s.clone()),
            Prototype::Online(s) => Box::new(OnlineShield::from_shield(s.clone())),
            Prototype::Ml(s) => Box::new(s.clone()),
        })
    }
}

/// Builds the memoryless shield by safe extension over the logged pairs.
pub fn build_memoryless<T: Prob>(
    analysis: Arc<Analysis<T>>,
    nu: T,
    convex: bool,
    pairs: &[(History<T>, Dist<T>)],
) -> anyhow::Result<MemorylessShield<T>> {
    let mut ml = MemorylessShield::new(analysis, nu, convex)?;
    for (h, d) in pairs {
        ml.extend(h.last(), d)?;
    }
    Ok(ml)
}

pub fn build_shield<T: Prob>(
    analysis: &Arc<Analysis<T>>,
    cfg: &ShieldConfig<T>,
    pairs: &[(History<T>, Dist<T>)],
) -> anyhow::Result<Prototype<T>> {
    let needs_nu = !matches!(cfg.kind, ShieldKind::None | ShieldKind::Safe | ShieldKind::Delta | ShieldKind::DeltaAdd);
    if needs_nu {
        check_nu(analysis, &cfg.nu)?;
    }
    Ok(match cfg.kind {
        ShieldKind::None => Prototype::None,
        ShieldKind::Safe => Prototype::Safe(SafeShield::new(analysis.clone())),
        ShieldKind::Delta => {
            Prototype::Delta(DeltaShield::new(analysis.clone(), cfg.delta.clone(), DeltaVariant::Multiplicative)?)
        }
        ShieldKind::DeltaAdd => {
            Prototype::Delta(DeltaShield::new(analysis.clone(), cfg.delta.clone(), DeltaVariant::Additive)?)
        }
        ShieldKind::Opt => Prototype::Tally(analysis.clone(), TallyKind::Optimistic, cfg.nu.clone()),
        ShieldKind::Pess => Prototype::Tally(analysis.clone(), TallyKind::Pessimistic, cfg.nu.clone()),
        ShieldKind::Offline => {
            let (shield, _) =
                probshield_core::construct_offline(analysis.clone(), cfg.nu.clone(), cfg.convex, pairs)?;
            Prototype::Constructed(shield)
        }
        ShieldKind::Online => Prototype::Online(ConstructedShield::new(analysis.clone(), cfg.nu.clone(), cfg.convex)?),
        ShieldKind::Ml => Prototype::Ml(build_memoryless(analysis.clone(), cfg.nu.clone(), cfg.convex, pairs)?),
    })
}

/// History-choice pairs proposed by `agent` in an unshielded run.
pub fn collect_log<T: Prob>(
    m: &Mdp<T>,
    agent: &Agent<T>,
    steps: u64,
    episode_len: usize,
    seed: u64,
) -> anyhow::Result<Vec<(History<T>, Dist<T>)>> {
    let mut pairs = Vec::new();
    let cfg = SimConfig { steps, episode_len, seed, replicates: 1 };
    let mut record = |h: &History<T>, d: &Dist<T>| pairs.push((h.clone(), d.clone()));
    simulate_replicate(m, &mut IdentityShield, agent, &cfg, 0, Some(&mut record))?;
    Ok(pairs)
}

/// Worker count from `PROBSHIELD_THREADS`, or rayon's default.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()).filter(|&n: &usize| n > 0)
}

pub fn with_pool<R: Send>(f: impl FnOnce() -> R + Send) -> anyhow::Result<R> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        builder = builder.num_threads(n);
    }
    Ok(builder.build()?.install(f))
}

/// Replicates in parallel, each with its own engine and RNG stream.
pub fn simulate_parallel<T: Prob>(
    m: &Mdp<T>,
    proto: &Prototype<T>,
    agent: &Agent<T>,
    cfg: &SimConfig,
) -> anyhow::Result<EvalReport> {
    if cfg.steps == 0 {
        bail!("simulation needs a positive step budget");
    }
    let stats = with_pool(|| {
        (0..cfg.replicates.max(1))
            .into_par_iter()
            .map(|r| -> anyhow::Result<ReplicateStats> {
                let mut shield = proto.fresh()?;
                Ok(simulate_replicate(m, shield.as_mut(), agent, cfg, r, None)?)
            })
            .collect::<anyhow::Result<Vec<_>>>()
    })??;
    Ok(summarize(&stats))
}

pub fn exact_report<T: Prob>(m: &Mdp<T>, proto: &Prototype<T>, agent: &Agent<T>, horizon: usize) -> anyhow::Result<EvalReport> {
    let shield = proto.fresh()?;
    Ok(eval::exact_eval_shield(m, shield.as_ref(), agent, horizon)?.report())
}

/// One CSV row of results.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub model: String,
    pub agent: String,
    pub nu: String,
    pub shield: String,
    pub report: EvalReport,
}

/// Pairs for log-built shields: from `log` when given, else from an unshielded run.
pub fn pairs_for<T: Prob>(
    m: &Mdp<T>,
    agent: &Agent<T>,
    log: Option<&FsPath>,
    sim: &SimConfig,
) -> anyhow::Result<Vec<(History<T>, Dist<T>)>> {
    match log {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            formats::parse_log(&text, m).with_context(|| format!("loading {}", path.display()))
        }
        None => collect_log(m, agent, sim.steps, sim.episode_len, sim.seed),
    }
}

/// Grid cell settings for the qualitative comparison.
#[derive(Clone, Debug)]
pub struct GridConfig {
    pub models: Vec<String>,
    pub agents: Vec<AgentKind>,
    pub nus: Vec<String>,
    /// Unshielded steps logged for offline and memoryless construction.
    pub log_steps: u64,
    pub sim: SimConfig,
    pub horizon: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            models: vec!["corridor".into(), "dpm".into()],
            agents: vec![AgentKind::Greedy, AgentKind::Timid, AgentKind::Random],
            nus: vec!["0.05".into(), "0.1".into(), "0.2".into()],
            log_steps: 20_000,
            sim: SimConfig { steps: 100_000, ..SimConfig::default() },
            horizon: DEFAULT_HORIZON,
        }
    }
}

/// Rows for σ_S, σ_off, σ_ML (exact) and σ_onl (simulated) on every cell.
pub fn run_grid<T: Prob>(grid: &GridConfig) -> anyhow::Result<Vec<ResultRow>> {
    let mut cells = Vec::new();
    for model in &grid.models {
        for &agent in &grid.agents {
            for nu in &grid.nus {
                cells.push((model.clone(), agent, nu.clone()));
            }
        }
    }
    let rows = with_pool(|| {
        cells
            .par_iter()
            .map(|(model, agent, nu)| grid_cell::<T>(grid, model, *agent, nu))
            .collect::<anyhow::Result<Vec<_>>>()
    })??;
    Ok(rows.into_iter().flatten().collect())
}

fn grid_cell<T: Prob>(grid: &GridConfig, model: &str, agent_kind: AgentKind, nu_text: &str) -> anyhow::Result<Vec<ResultRow>> {
    let m: Mdp<T> = fixtures::by_name(model)?;
    let analysis = Arc::new(Analysis::new(m)?);
    let m = analysis.model();
    let nu = T::parse(nu_text).ok_or_else(|| anyhow!("bad threshold {nu_text}"))?;
    let agent = make_agent(agent_kind, &analysis, &AgentParams::default())?;
    let pairs = collect_log(m, &agent, grid.log_steps, grid.sim.episode_len, grid.sim.seed)?;
    let row = |shield: ShieldKind, report: EvalReport| ResultRow {
        model: model.to_string(),
        agent: formats::agent_kind_name(agent_kind).to_string(),
        nu: nu_text.to_string(),
        shield: shield.as_str().to_string(),
        report,
    };
    let mut rows = Vec::new();
    for kind in [ShieldKind::Safe, ShieldKind::Offline, ShieldKind::Ml, ShieldKind::Online] {
        let cfg = ShieldConfig { kind, nu: nu.clone(), delta: T::one(), convex: false };
        let proto = build_shield(&analysis, &cfg, &pairs)?;
        let report = if kind.exact_evaluable() {
            exact_report(m, &proto, &agent, grid.horizon)?
        } else {
            let mut stats = Vec::new();
            for r in 0..grid.sim.replicates.max(1) {
                let mut shield = proto.fresh()?;
                stats.push(simulate_replicate(m, shield.as_mut(), &agent, &grid.sim, r, None)?);
            }
            summarize(&stats)
        };
        rows.push(row(kind, report));
    }
    Ok(rows)
}

/// One point of the offline convergence curve.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergencePoint {
    pub construction_step: usize,
    pub accepted: usize,
    pub allowed_ratio: f64,
    pub safety: f64,
}

/// Offline construction over `pairs`, with an exact evaluation every `every` pairs.
pub fn convergence<T: Prob>(
    analysis: &Arc<Analysis<T>>,
    nu: T,
    agent: &Agent<T>,
    pairs: &[(History<T>, Dist<T>)],
    every: usize,
    horizon: usize,
) -> anyhow::Result<Vec<ConvergencePoint>> {
    let m = analysis.model();
    let mut shield = ConstructedShield::new(analysis.clone(), nu, false)?;
    let mut accepted = 0;
    let mut points = Vec::new();
    let mut sample = |step: usize, shield: &ConstructedShield<T>, accepted: usize| -> anyhow::Result<()> {
        let e = exact_eval(m, shield, agent, horizon)?;
        points.push(ConvergencePoint {
            construction_step: step,
            accepted,
            allowed_ratio: e.allowed_ratio(),
            safety: e.safety.to_f64(),
        });
        Ok(())
    };
    sample(0, &shield, 0)?;
    for (i, (h, d)) in pairs.iter().enumerate() {
        if shield.safe_extend(h, d)?.accepted {
            accepted += 1;
        }
        let step = i + 1;
        if step % every.max(1) == 0 || step == pairs.len() {
            sample(step, &shield, accepted)?;
        }
    }
    Ok(points)
}

/// FORK agent playing ε, β and δ: unsafe at every threshold below 1.
pub fn fork_unsafe_agent<T: Prob>(m: &Mdp<T>) -> Agent<T> {
    let table = m
        .states()
        .map(|s| match s.0 {
            0 => Dist::dirac(FORK_EPS),
            1 => Dist::dirac(FORK_BETA),
            2 => Dist::dirac(FORK_DELTA),
            _ => Dist::dirac(FORK_LOOP),
        })
        .collect();
    Agent::from_table(AgentKind::Random, table)
}
