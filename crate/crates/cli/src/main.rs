use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use probshield::bench::{memory_profile, throughput};
use probshield::experiment::{
    build_shield, check_nu, fork_unsafe_agent, collect_log, convergence, exact_report, pairs_for, run_grid, simulate_parallel,
    GridConfig, ModelSource, Prototype, ResultRow, ShieldConfig, ShieldKind,
};
use probshield::formats::{self, write_results, write_table};
use probshield::verify::guarantee_suite;
use probshield_core::eval::{online_episode_values, per_step_update_demo, simulate_replicate, summarize};
use probshield_core::oracle::impossibility_demo;
use probshield_core::{
    fixtures, make_agent, Agent, AgentKind, AgentParams, Analysis, ConstructedShield, Dist, History, Mdp,
    OnlineShield, Prob, Rational, SimConfig,
};

#[derive(Parser, Debug)]
#[command(name = "probshield", version, about = "Probabilistic shields for Markov decision processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print V_min, V_max and the safe actions of every state.
    Check(Common),
    /// Monte-Carlo evaluation of a shielded agent.
    Simulate(Common),
    /// Exact evaluation on the induced chain.
    Evaluate(Common),
    /// Build an offline shield from a history-choice log.
    ConstructOffline(ConstructArgs),
    /// Simulate episode-boundary online shielding.
    RunOnline(Common),
    /// Shield throughput and constructed-shield memory.
    Bench(Common),
    /// Run the guarantee oracle suite.
    Verify(VerifyArgs),
    /// The no-shield-is-safe-and-permissive case analysis.
    DemoImpossibility(Common),
    /// Per-step updating versus episode-boundary online shielding on FORK.
    DemoPerStepUnsafe(Common),
    /// The qualitative comparison grid over CORRIDOR and DPM.
    Grid(GridArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Model file in the explicit text format.
    #[arg(long, conflicts_with = "fixture")]
    model: Option<PathBuf>,
    /// Built-in model: fork, chain, corridor, dpm, fullproof:<nu>, gap:<nu>, trap:<nu>:<delta>.
    #[arg(long)]
    fixture: Option<String>,
    /// Threshold; 0.1 by default, 0.5 for demo-per-step-unsafe.
    #[arg(long)]
    nu: Option<String>,
    #[arg(long, default_value = "1")]
    delta: String,
    #[arg(long, default_value = "safe")]
    shield: String,
    #[arg(long, default_value = "random")]
    agent: String,
    #[arg(long, default_value_t = 100_000)]
    steps: u64,
    #[arg(long, default_value_t = 50)]
    episode_len: usize,
    #[arg(long, default_value_t = 50)]
    horizon: usize,
    #[arg(long, default_value_t = 3)]
    replicates: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Exact rational arithmetic instead of f64.
    #[arg(long)]
    exact: bool,
    /// Accept convex combinations of allowed choices.
    #[arg(long)]
    convex: bool,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// History-choice log: written by `simulate`, read by log-built shields elsewhere.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    dump_shield: Option<PathBuf>,
    /// Agent table file overriding `--agent`.
    #[arg(long)]
    agent_file: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct ConstructArgs {
    #[command(flatten)]
    common: Common,
    /// Also write (construction_step, allowed_ratio) every N pairs to this CSV.
    #[arg(long)]
    convergence: Option<PathBuf>,
    #[arg(long, default_value_t = 4000)]
    every: usize,
}

#[derive(Args, Debug, Clone)]
struct VerifyArgs {
    #[arg(long, default_value_t = 100)]
    random_models: usize,
    #[arg(long, default_value_t = 1000)]
    stochastic: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Clone)]
struct GridArgs {
    #[arg(long, default_value_t = 20_000)]
    log_steps: u64,
    #[arg(long, default_value_t = 100_000)]
    steps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    csv: Option<PathBuf>,
}

impl Common {
    fn nu(&self) -> &str {
        self.nu.as_deref().unwrap_or("0.1")
    }

    fn source(&self) -> anyhow::Result<ModelSource> {
        match (&self.model, &self.fixture) {
            (Some(path), None) => Ok(ModelSource::File(path.clone())),
            (None, Some(name)) => Ok(ModelSource::Fixture(name.clone())),
            (None, None) => bail!("pass --model <path> or --fixture <name>"),
            (Some(_), Some(_)) => bail!("--model and --fixture are exclusive"),
        }
    }

    fn sim(&self) -> SimConfig {
        SimConfig { steps: self.steps, episode_len: self.episode_len, seed: self.seed, replicates: self.replicates }
    }

    fn shield_config<T: Prob>(&self) -> anyhow::Result<ShieldConfig<T>> {
        Ok(ShieldConfig {
            kind: self.shield.parse()?,
            nu: parse_prob(self.nu(), "--nu")?,
            delta: parse_prob(&self.delta, "--delta")?,
            convex: self.convex,
        })
    }

    fn agent<T: Prob>(&self, analysis: &Analysis<T>) -> anyhow::Result<Agent<T>> {
        if let Some(path) = &self.agent_file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            return Ok(formats::parse_agent(&text, analysis.model())?);
        }
        let kind: AgentKind = self.agent.parse().map_err(|e| anyhow!("{e}"))?;
        Ok(make_agent(kind, analysis, &AgentParams::default())?)
    }

    fn row(&self, report: probshield_core::EvalReport) -> anyhow::Result<ResultRow> {
        Ok(ResultRow {
            model: self.source()?.label(),
            agent: self.agent_file.as_ref().map_or_else(|| self.agent.clone(), |_| "file".into()),
            nu: self.nu().to_string(),
            shield: self.shield.clone(),
            report,
        })
    }
}

fn parse_prob<T: Prob>(text: &str, flag: &str) -> anyhow::Result<T> {
    T::parse(text).ok_or_else(|| anyhow!("{flag}: `{text}` is not a probability"))
}

fn output(path: Option<&PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_text(path: &PathBuf, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load<T: Prob>(common: &Common) -> anyhow::Result<Arc<Analysis<T>>> {
    let m: Mdp<T> = common.source()?.load()?;
    Ok(Arc::new(Analysis::new(m)?))
}

fn dump_prototype<T: Prob>(proto: &Prototype<T>, m: &Mdp<T>, path: &PathBuf) -> anyhow::Result<()> {
    let text = match proto {
        Prototype::Constructed(s) | Prototype::Online(s) => formats::dump_trie(s),
        Prototype::Ml(s) => formats::dump_memoryless(s, m),
        _ => bail!("--dump-shield needs a constructed, online or memoryless shield"),
    };
    write_text(path, &text)
}

fn check<T: Prob>(c: &Common) -> anyhow::Result<()> {
    let analysis = load::<T>(c)?;
    let m = analysis.model();
    let rows: Vec<Vec<String>> = m
        .states()
        .map(|s| {
            let safe: Vec<String> = analysis.safe(s).iter().map(|&a| m.action_name(a)).collect();
            vec![s.to_string(), m.state_name(s), analysis.vmin(s).render(), analysis.vmax(s).render(), safe.join(" ")]
        })
        .collect();
    write_table(&["state", "name", "vmin", "vmax", "safe_actions"], &rows, output(c.csv.as_ref())?)?;
    Ok(())
}

fn shield_and_agent<T: Prob>(
    c: &Common,
    read_log: bool,
) -> anyhow::Result<(Arc<Analysis<T>>, Agent<T>, ShieldConfig<T>, Prototype<T>)> {
    let analysis = load::<T>(c)?;
    let agent = c.agent(&analysis)?;
    let cfg = c.shield_config::<T>()?;
    let pairs = if cfg.kind.needs_log() {
        let log = if read_log { c.log.as_deref() } else { None };
        pairs_for(analysis.model(), &agent, log, &c.sim())?
    } else {
        Vec::new()
    };
    let proto = build_shield(&analysis, &cfg, &pairs)?;
    Ok((analysis, agent, cfg, proto))
}

fn simulate<T: Prob>(c: &Common) -> anyhow::Result<()> {
    let (analysis, agent, _, proto) = shield_and_agent::<T>(c, false)?;
    let m = analysis.model();
    let sim = c.sim();
    let report = match &c.log {
        Some(path) => {
            // sequential so that the log follows replicate order
            let mut lines = String::new();
            let mut stats = Vec::new();
            for r in 0..sim.replicates.max(1) {
                let mut shield = proto.fresh()?;
                let mut record = |h: &History<T>, d: &Dist<T>| {
                    lines.push_str(&formats::log_line(h, d));
                    lines.push('\n');
                };
                stats.push(simulate_replicate(m, shield.as_mut(), &agent, &sim, r, Some(&mut record))?);
            }
            write_text(path, &lines)?;
            summarize(&stats)
        }
        None => simulate_parallel(m, &proto, &agent, &sim)?,
    };
    if let Some(path) = &c.dump_shield {
        dump_prototype(&proto, m, path)?;
    }
    write_results(&[c.row(report)?], output(c.csv.as_ref())?)?;
    Ok(())
}

fn evaluate<T: Prob>(c: &Common) -> anyhow::Result<()> {
    let (analysis, agent, cfg, proto) = shield_and_agent::<T>(c, true)?;
    if !cfg.kind.exact_evaluable() {
        bail!("shield `{}` has no finite induced chain; use `simulate`", cfg.kind.as_str());
    }
    let report = exact_report(analysis.model(), &proto, &agent, c.horizon)?;
    if let Some(path) = &c.dump_shield {
        dump_prototype(&proto, analysis.model(), path)?;
    }
    write_results(&[c.row(report)?], output(c.csv.as_ref())?)?;
    Ok(())
}

fn construct_offline<T: Prob>(args: &ConstructArgs) -> anyhow::Result<()> {
    let c = &args.common;
    let analysis = load::<T>(c)?;
    let nu: T = parse_prob(c.nu(), "--nu")?;
    check_nu(&analysis, &nu)?;
    let path = c.log.as_ref().ok_or_else(|| anyhow!("construct-offline needs --log <path>"))?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let pairs = formats::parse_log(&text, analysis.model()).with_context(|| format!("loading {}", path.display()))?;
    let (shield, steps) = probshield_core::construct_offline(analysis.clone(), nu.clone(), c.convex, &pairs)?;
    let accepted = steps.iter().filter(|s| s.accepted).count();
    let row = vec![
        pairs.len().to_string(),
        accepted.to_string(),
        shield.trie().num_nodes().to_string(),
        shield.value().render(),
        c.nu().to_string(),
        shield.is_safe().to_string(),
    ];
    write_table(&["pairs", "accepted", "trie_nodes", "shield_value", "nu", "safe"], &[row], output(c.csv.as_ref())?)?;
    if let Some(dump) = &c.dump_shield {
        write_text(dump, &formats::dump_trie(&shield))?;
    }
    if let Some(conv) = &args.convergence {
        let agent = c.agent(&analysis)?;
        let points = convergence(&analysis, nu, &agent, &pairs, args.every, c.horizon)?;
        let rows: Vec<Vec<String>> = points
            .iter()
            .map(|p| vec![p.construction_step.to_string(), p.allowed_ratio.to_string(), p.accepted.to_string(), p.safety.to_string()])
            .collect();
        write_table(&["construction_step", "allowed_ratio", "accepted", "safety"], &rows, output(Some(conv))?)?;
    }
    Ok(())
}

fn run_online<T: Prob>(c: &Common) -> anyhow::Result<()> {
    let analysis = load::<T>(c)?;
    let agent = c.agent(&analysis)?;
    let nu: T = parse_prob(c.nu(), "--nu")?;
    let sim = c.sim();
    let mut stats = Vec::new();
    let mut first: Option<ConstructedShield<T>> = None;
    for r in 0..sim.replicates.max(1) {
        let mut shield = OnlineShield::new(analysis.clone(), nu.clone(), c.convex)?;
        stats.push(simulate_replicate(analysis.model(), &mut shield, &agent, &sim, r, None)?);
        first.get_or_insert_with(|| shield.shield().clone());
    }
    if let (Some(path), Some(shield)) = (&c.dump_shield, &first) {
        write_text(path, &formats::dump_trie(shield))?;
    }
    let mut row = c.row(summarize(&stats))?;
    row.shield = "online".into();
    write_results(&[row], output(c.csv.as_ref())?)?;
    Ok(())
}

fn bench<T: Prob>(c: &Common) -> anyhow::Result<()> {
    let analysis = load::<T>(c)?;
    let m = analysis.model();
    let agent = c.agent(&analysis)?;
    let nu: T = parse_prob(c.nu(), "--nu")?;
    let mut rows = Vec::new();
    for kind in [ShieldKind::None, ShieldKind::Safe, ShieldKind::Opt, ShieldKind::Pess, ShieldKind::Online] {
        let cfg = ShieldConfig { kind, nu: nu.clone(), delta: T::one(), convex: c.convex };
        let proto = build_shield(&analysis, &cfg, &[])?;
        let t = throughput(m, kind.as_str(), &proto, &agent, c.steps, c.episode_len, c.seed)?;
        rows.push(vec![
            "throughput".into(),
            t.shield,
            t.steps.to_string(),
            format!("{:.4}", t.seconds),
            format!("{:.0}", t.queries_per_second),
            String::new(),
            String::new(),
        ]);
    }
    let pairs = collect_log(m, &agent, c.steps, c.episode_len, c.seed)?;
    let every = (pairs.len() / 10).max(1);
    for p in memory_profile(&analysis, nu, &pairs, every)? {
        rows.push(vec![
            "memory".into(),
            "offline".into(),
            p.pairs.to_string(),
            String::new(),
            String::new(),
            p.accepted.to_string(),
            p.bytes.to_string(),
        ]);
    }
    write_table(&["kind", "shield", "steps", "seconds", "qps", "accepted", "bytes"], &rows, output(c.csv.as_ref())?)?;
    Ok(())
}

fn verify(args: &VerifyArgs) -> anyhow::Result<bool> {
    let report = guarantee_suite::<Rational>(args.random_models, args.stochastic, args.seed)?;
    let rows: Vec<Vec<String>> = report
        .lines()
        .into_iter()
        .map(|(shield, g, checked, violations, witness)| {
            vec![shield.into(), g.into(), checked.to_string(), violations.to_string(), witness]
        })
        .collect();
    write_table(&["shield", "guarantee", "checked", "violations", "witness"], &rows, io::stdout().lock())?;
    Ok(report.holds())
}

fn demo_impossibility<T: Prob>(c: &Common) -> anyhow::Result<bool> {
    let nu: T = parse_prob(c.nu(), "--nu")?;
    let r = impossibility_demo(nu)?;
    let rows = vec![vec![
        r.nu.render(),
        r.unsafe_value.render(),
        r.safe_values.0.render(),
        r.safe_values.1.render(),
        r.gadget_value.render(),
        r.mix_closed.to_string(),
        r.optimistic_allows_unsafe.to_string(),
        r.pessimistic_blocks_safe.to_string(),
        r.confirmed().to_string(),
    ]];
    write_table(
        &["nu", "unsafe_value", "safe_value_left", "safe_value_right", "gadget_value", "mix_closed", "opt_allows_unsafe", "pess_blocks_safe", "confirmed"],
        &rows,
        output(c.csv.as_ref())?,
    )?;
    Ok(r.confirmed())
}

fn demo_per_step<T: Prob>(c: &Common) -> anyhow::Result<bool> {
    let nu: T = parse_prob(c.nu.as_deref().unwrap_or("0.5"), "--nu")?;
    let analysis = Arc::new(Analysis::new(fixtures::fork::<T>())?);
    let agent = fork_unsafe_agent(analysis.model());
    let per_step = per_step_update_demo(&analysis, nu.clone(), &agent, c.horizon)?;
    let episodes = online_episode_values(&analysis, nu.clone(), c.convex, &agent, c.episode_len, 3)?;
    let mut rows = vec![vec!["per-step".to_string(), "-".into(), per_step.induced_value.render()]];
    for (i, v) in episodes.iter().enumerate() {
        rows.push(vec!["episode-boundary".into(), i.to_string(), v.render()]);
    }
    write_table(&["transformer", "episode", "value"], &rows, output(c.csv.as_ref())?)?;
    Ok(per_step.induced_value > nu && episodes.iter().all(|v| *v <= nu))
}

fn grid(args: &GridArgs) -> anyhow::Result<()> {
    let mut grid = GridConfig { log_steps: args.log_steps, ..GridConfig::default() };
    grid.sim.steps = args.steps;
    grid.sim.seed = args.seed;
    let rows = run_grid::<f64>(&grid)?;
    write_results(&rows, output(args.csv.as_ref())?)?;
    Ok(())
}

fn dispatch<T: Prob>(command: &Command) -> anyhow::Result<bool> {
    match command {
        Command::Check(c) => check::<T>(c)?,
        Command::Simulate(c) => simulate::<T>(c)?,
        Command::Evaluate(c) => evaluate::<T>(c)?,
        Command::ConstructOffline(a) => construct_offline::<T>(a)?,
        Command::RunOnline(c) => run_online::<T>(c)?,
        Command::Bench(c) => bench::<T>(c)?,
        Command::Verify(a) => return verify(a),
        Command::DemoImpossibility(c) => return demo_impossibility::<T>(c),
        Command::DemoPerStepUnsafe(c) => return demo_per_step::<T>(c),
        Command::Grid(a) => grid(a)?,
    }
    Ok(true)
}

fn exact_flag(command: &Command) -> bool {
    match command {
        Command::Check(c)
        | Command::Simulate(c)
        | Command::Evaluate(c)
        | Command::RunOnline(c)
        | Command::Bench(c)
        | Command::DemoImpossibility(c)
        | Command::DemoPerStepUnsafe(c) => c.exact,
        Command::ConstructOffline(a) => a.common.exact,
        Command::Verify(_) | Command::Grid(_) => false,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = if exact_flag(&cli.command) {
        dispatch::<Rational>(&cli.command)
    } else {
        dispatch::<f64>(&cli.command)
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
