//! Line-oriented text formats: models, shield dumps, agent tables and pair logs.

use std::fmt::{self, Write as _};
use std::sync::Arc;

use probshield_core::constructed::{ChoiceId, NodeId, TrieNode};
use probshield_core::{
    ActionId, Agent, AgentKind, Analysis, ConstructedShield, Dist, History, HistoryTrie, MemorylessShield, Mdp,
    MdpBuilder, Prob, StateId,
};
use sha2::{Digest, Sha256};

/// Parse failure with a 1-based line number (0 when not tied to a line).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "parse error: {}", self.message)
        } else {
            write!(f, "parse error at line {}: {}", self.line, self.message)
        }
    }
}

impl std::error::Error for ParseError {}

fn err(line: usize, message: impl fmt::Display) -> ParseError {
    ParseError { line, message: message.to_string() }
}

type Parsed<T> = Result<T, ParseError>;

/// Non-empty lines with comments stripped, numbered from 1.
fn lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let body = raw.split('#').next().unwrap_or("");
        let words: Vec<&str> = body.split_whitespace().collect();
        (!words.is_empty()).then_some((i + 1, words))
    })
}

fn number<N: std::str::FromStr>(line: usize, word: &str, what: &str) -> Parsed<N> {
    word.parse().map_err(|_| err(line, format!("bad {what} `{word}`")))
}

fn prob<T: Prob>(line: usize, word: &str) -> Parsed<T> {
    T::parse(word).ok_or_else(|| err(line, format!("bad probability `{word}`")))
}

/// `key:prob` pairs.
fn pairs<T: Prob>(line: usize, words: &[&str]) -> Parsed<Vec<(u32, T)>> {
    words
        .iter()
        .map(|w| {
            let (k, p) = w.split_once(':').ok_or_else(|| err(line, format!("expected `id:prob`, got `{w}`")))?;
            Ok((number(line, k, "id")?, prob(line, p)?))
        })
        .collect()
}

fn dist<T: Prob>(line: usize, words: &[&str]) -> Parsed<Dist<T>> {
    let entries = pairs::<T>(line, words)?;
    Dist::new(entries.into_iter().map(|(a, p)| (ActionId(a), p))).map_err(|e| err(line, e))
}

fn render_dist<T: Prob>(d: &Dist<T>) -> String {
    d.to_string()
}

/// Parses the explicit model format.
///
/// ```text
/// mdp <states> <actions>
/// initial <state>
/// bad <state>...
/// sname <state> <name>        # optional
/// aname <action> <name>       # optional
/// t <state> <action> <succ>:<prob>...
/// r <state> <action> <reward>
/// ```
pub fn parse_model<T: Prob>(text: &str) -> Parsed<Mdp<T>> {
    let mut builder: Option<MdpBuilder<T>> = None;
    let mut rewards = false;
    for (line, words) in lines(text) {
        let head = words[0];
        if head == "mdp" {
            if builder.is_some() || words.len() != 3 {
                return Err(err(line, "expected a single `mdp <states> <actions>` header"));
            }
            let n: usize = number(line, words[1], "state count")?;
            let a: usize = number(line, words[2], "action count")?;
            if n == 0 || a == 0 {
                return Err(err(line, "model needs at least one state and one action"));
            }
            builder = Some(MdpBuilder::new(n, a));
            continue;
        }
        let b = builder.as_mut().ok_or_else(|| err(line, "missing `mdp` header"))?;
        let state = |i: usize| -> Parsed<StateId> {
            let w = words.get(i).ok_or_else(|| err(line, "missing state"))?;
            Ok(StateId(number(line, w, "state")?))
        };
        let action = |i: usize| -> Parsed<ActionId> {
            let w = words.get(i).ok_or_else(|| err(line, "missing action"))?;
            Ok(ActionId(number(line, w, "action")?))
        };
        let res = match head {
            "initial" => b.initial(state(1)?).map(|_| ()),
            "bad" => {
                for i in 1..words.len() {
                    b.bad(state(i)?).map_err(|e| err(line, e))?;
                }
                Ok(())
            }
            "sname" | "aname" if words.len() == 3 => {
                if head == "sname" {
                    b.state_name(state(1)?, words[2]).map(|_| ())
                } else {
                    b.action_name(action(1)?, words[2]).map(|_| ())
                }
            }
            "t" if words.len() >= 4 => {
                let succ = pairs::<T>(line, &words[3..])?;
                b.transition(state(1)?, action(2)?, succ.into_iter().map(|(s, p)| (StateId(s), p))).map(|_| ())
            }
            "r" if words.len() == 4 => {
                rewards = true;
                let r: f64 = number(line, words[3], "reward")?;
                b.reward(state(1)?, action(2)?, r).map(|_| ())
            }
            _ => return Err(err(line, format!("unrecognized line `{}`", words.join(" ")))),
        };
        res.map_err(|e| err(line, e))?;
    }
    let mut b = builder.ok_or_else(|| err(0, "missing `mdp` header"))?;
    if rewards {
        b.enable_rewards();
    }
    b.build().map_err(|e| err(0, e))
}

pub fn serialize_model<T: Prob>(m: &Mdp<T>) -> String {
    let mut out = String::new();
    writeln!(out, "mdp {} {}", m.num_states(), m.num_actions()).unwrap();
    writeln!(out, "initial {}", m.initial()).unwrap();
    let bad = m.bad_states();
    if !bad.is_empty() {
        let ids: Vec<String> = bad.iter().map(|s| s.to_string()).collect();
        writeln!(out, "bad {}", ids.join(" ")).unwrap();
    }
    for s in m.states() {
        if let Some(name) = m.state_label(s) {
            writeln!(out, "sname {s} {name}").unwrap();
        }
    }
    for a in (0..m.num_actions() as u32).map(ActionId) {
        if let Some(name) = m.action_label(a) {
            writeln!(out, "aname {a} {name}").unwrap();
        }
    }
    for s in m.states() {
        for t in m.transitions(s) {
            let succ: Vec<String> = t.succ.iter().map(|(x, p)| format!("{x}:{}", p.render())).collect();
            writeln!(out, "t {s} {} {}", t.action, succ.join(" ")).unwrap();
        }
    }
    if m.has_rewards() {
        for s in m.states() {
            for t in m.transitions(s) {
                writeln!(out, "r {s} {} {:?}", t.action, t.reward).unwrap();
            }
        }
    }
    out
}

/// SHA-256 of the serialized model, hex encoded.
pub fn model_hash<T: Prob>(m: &Mdp<T>) -> String {
    let digest = Sha256::digest(serialize_model(m).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn dump_header<T: Prob>(out: &mut String, kind: &str, m: &Mdp<T>, nu: &T, convex: bool) {
    writeln!(out, "shield {kind}").unwrap();
    writeln!(out, "nu {}", nu.render()).unwrap();
    writeln!(out, "convex {}", u8::from(convex)).unwrap();
    writeln!(out, "model {}", model_hash(m)).unwrap();
}

/// Trie dump: header, interned choices, nodes in creation order, allow entries.
pub fn dump_trie<T: Prob>(shield: &ConstructedShield<T>) -> String {
    let mut out = String::new();
    let m = shield.analysis().model();
    dump_header(&mut out, "trie", m, shield.nu(), shield.convex());
    let trie = shield.trie();
    for (c, d) in trie.choices().iter() {
        writeln!(out, "c {c} {}", render_dist(d)).unwrap();
    }
    for (id, node) in trie.nodes() {
        match node.parent {
            None => writeln!(out, "n {id} {} parent=- via=-", node.state).unwrap(),
            Some((p, c, a)) => writeln!(out, "n {id} {} parent={p} via={c},{a},{}", node.state, node.state).unwrap(),
        }
    }
    for (id, node) in trie.nodes() {
        for c in &node.allowed {
            writeln!(out, "allow {id} {c}").unwrap();
        }
    }
    out
}

/// Memoryless dump: header, choices, `mlallow <state> <choice>`.
pub fn dump_memoryless<T: Prob>(shield: &MemorylessShield<T>, m: &Mdp<T>) -> String {
    let mut out = String::new();
    dump_header(&mut out, "ml", m, shield.nu(), shield.convex());
    let mut choices: Vec<Dist<T>> = Vec::new();
    let mut allows = Vec::new();
    for s in m.states() {
        for d in shield.allowed(s) {
            let id = match choices.iter().position(|x| x.same_as(d)) {
                Some(i) => i,
                None => {
                    choices.push(d.clone());
                    choices.len() - 1
                }
            };
            allows.push((s, id));
        }
    }
    for (i, d) in choices.iter().enumerate() {
        writeln!(out, "c {i} {}", render_dist(d)).unwrap();
    }
    for (s, id) in allows {
        writeln!(out, "mlallow {s} {id}").unwrap();
    }
    out
}

/// A parsed shield dump.
pub enum ShieldDump<T: Prob> {
    Trie(ConstructedShield<T>),
    Memoryless(MemorylessShield<T>),
}

/// Loads a dump against `analysis`; the recorded model hash must match.
pub fn parse_shield_dump<T: Prob>(text: &str, analysis: Arc<Analysis<T>>) -> Parsed<ShieldDump<T>> {
    let mut kind: Option<String> = None;
    let mut nu: Option<T> = None;
    let mut convex = false;
    let mut hash: Option<String> = None;
    let mut choices: Vec<Dist<T>> = Vec::new();
    let mut nodes: Vec<TrieNode> = Vec::new();
    let mut ml: Vec<(usize, StateId, ChoiceId)> = Vec::new();
    for (line, words) in lines(text) {
        match (words[0], words.len()) {
            ("shield", 2) => kind = Some(words[1].to_string()),
            ("nu", 2) => nu = Some(prob(line, words[1])?),
            ("convex", 2) => convex = words[1] == "1",
            ("model", 2) => hash = Some(words[1].to_string()),
            ("c", n) if n >= 3 => {
                let id: usize = number(line, words[1], "choice id")?;
                if id != choices.len() {
                    return Err(err(line, "choice ids must be consecutive from 0"));
                }
                choices.push(dist(line, &words[2..])?);
            }
            ("n", 5) => {
                let id: usize = number(line, words[1], "node id")?;
                if id != nodes.len() {
                    return Err(err(line, "node ids must be consecutive from 0"));
                }
                let state = StateId(number(line, words[2], "state")?);
                let parent = words[3].strip_prefix("parent=").ok_or_else(|| err(line, "expected parent="))?;
                let via = words[4].strip_prefix("via=").ok_or_else(|| err(line, "expected via="))?;
                let parent = if parent == "-" {
                    None
                } else {
                    let parts: Vec<&str> = via.split(',').collect();
                    if parts.len() != 3 {
                        return Err(err(line, "via needs <choice>,<action>,<state>"));
                    }
                    let via_state: u32 = number(line, parts[2], "state")?;
                    if via_state != state.0 {
                        return Err(err(line, "via state differs from the node state"));
                    }
                    Some((
                        number::<NodeId>(line, parent, "parent")?,
                        number::<ChoiceId>(line, parts[0], "choice")?,
                        ActionId(number(line, parts[1], "action")?),
                    ))
                };
                nodes.push(TrieNode { state, parent, allowed: Vec::new() });
            }
            ("allow", 3) => {
                let node: usize = number(line, words[1], "node")?;
                let c: ChoiceId = number(line, words[2], "choice")?;
                nodes.get_mut(node).ok_or_else(|| err(line, "allow for unknown node"))?.allowed.push(c);
            }
            ("mlallow", 3) => {
                let s = StateId(number(line, words[1], "state")?);
                ml.push((line, s, number(line, words[2], "choice")?));
            }
            _ => return Err(err(line, format!("unrecognized line `{}`", words.join(" ")))),
        }
    }
    let m = analysis.model();
    let expected = model_hash(m);
    if hash.as_deref() != Some(expected.as_str()) {
        return Err(err(0, "shield dump was written for a different model"));
    }
    let nu = nu.ok_or_else(|| err(0, "missing nu"))?;
    match kind.as_deref() {
        Some("trie") => {
            if nodes.is_empty() {
                return Err(err(0, "trie dump has no root node"));
            }
            let trie = HistoryTrie::from_parts(m.initial(), choices, nodes).map_err(|e| err(0, e))?;
            ConstructedShield::from_trie(analysis, nu, convex, trie).map(ShieldDump::Trie).map_err(|e| err(0, e))
        }
        Some("ml") => {
            let mut allowed = vec![Vec::new(); m.num_states()];
            for (line, s, c) in ml {
                let d = choices.get(c as usize).ok_or_else(|| err(line, "unknown choice"))?;
                allowed.get_mut(s.idx()).ok_or_else(|| err(line, "unknown state"))?.push(d.clone());
            }
            MemorylessShield::from_allowed(analysis, nu, convex, allowed)
                .map(ShieldDump::Memoryless)
                .map_err(|e| err(0, e))
        }
        _ => Err(err(0, "missing or unknown `shield` kind")),
    }
}

pub fn agent_kind_name(kind: AgentKind) -> &'static str {
    match kind {
        AgentKind::Greedy => "greedy",
        AgentKind::Timid => "timid",
        AgentKind::Random => "random",
    }
}

/// `agent <kind>` then `a <state> <action>:<prob>...` per state.
pub fn dump_agent<T: Prob>(agent: &Agent<T>) -> String {
    let mut out = format!("agent {}\n", agent_kind_name(agent.kind));
    for (s, d) in agent.table().iter().enumerate() {
        writeln!(out, "a {s} {}", render_dist(d)).unwrap();
    }
    out
}

pub fn parse_agent<T: Prob>(text: &str, m: &Mdp<T>) -> Parsed<Agent<T>> {
    let mut kind = AgentKind::Random;
    let mut table: Vec<Option<Dist<T>>> = vec![None; m.num_states()];
    for (line, words) in lines(text) {
        match words[0] {
            "agent" if words.len() == 2 => kind = words[1].parse().map_err(|e| err(line, e))?,
            "a" if words.len() >= 3 => {
                let s: usize = number(line, words[1], "state")?;
                let slot = table.get_mut(s).ok_or_else(|| err(line, "unknown state"))?;
                *slot = Some(dist(line, &words[2..])?);
            }
            _ => return Err(err(line, format!("unrecognized line `{}`", words.join(" ")))),
        }
    }
    let table = table
        .into_iter()
        .enumerate()
        .map(|(s, d)| d.ok_or_else(|| err(0, format!("no choice for state {s}"))))
        .collect::<Parsed<Vec<_>>>()?;
    let agent = Agent::from_table(kind, table);
    agent.validate(m).map_err(|e| err(0, e))?;
    Ok(agent)
}

fn render_pair_choice<T: Prob>(d: &Dist<T>) -> String {
    d.entries().iter().map(|(a, p)| format!("{a}:{}", p.render())).collect::<Vec<_>>().join(",")
}

/// One log line: `<s0,a1,s1,...> | <a:p,...> | <executed choice>;...`.
///
/// The third field carries the executed choices of the history; readers
/// without it reconstruct them from the episode's earlier lines.
pub fn log_line<T: Prob>(h: &History<T>, d: &Dist<T>) -> String {
    let executed: Vec<String> = h.steps().iter().map(|s| render_pair_choice(&s.choice)).collect();
    format!("<{}> | <{}> | {}", h.path(), render_pair_choice(d), executed.join(";"))
}

fn comma_dist<T: Prob>(line: usize, text: &str) -> Parsed<Dist<T>> {
    let words: Vec<&str> = text.split(',').map(str::trim).filter(|w| !w.is_empty()).collect();
    dist(line, &words)
}

fn bracketed(line: usize, text: &str) -> Parsed<&str> {
    text.trim()
        .strip_prefix('<')
        .and_then(|t| t.strip_suffix('>'))
        .ok_or_else(|| err(line, format!("expected <...>, got `{}`", text.trim())))
}

/// Parses a pair log, validating every history against `m`.
pub fn parse_log<T: Prob>(text: &str, m: &Mdp<T>) -> Parsed<Vec<(History<T>, Dist<T>)>> {
    let mut out: Vec<(History<T>, Dist<T>)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split('|').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(err(line, "expected `<path> | <choice>` with an optional executed-choice field"));
        }
        let ids: Vec<u32> = bracketed(line, fields[0])?
            .split(',')
            .map(|w| number(line, w.trim(), "id"))
            .collect::<Parsed<_>>()?;
        if ids.len() % 2 != 1 {
            return Err(err(line, "path must alternate states and actions"));
        }
        let d = comma_dist::<T>(line, bracketed(line, fields[1])?)?;
        let steps = ids.len() / 2;
        let executed: Vec<Dist<T>> = match fields.get(2).map(|f| f.trim()) {
            Some(f) if !f.is_empty() => f.split(';').map(|c| comma_dist::<T>(line, c)).collect::<Parsed<_>>()?,
            Some(_) => Vec::new(),
            None => {
                // reconstruct from the previous line of the same episode
                match out.last() {
                    Some((h, prev)) if h.len() + 1 == steps => {
                        let mut v: Vec<Dist<T>> = h.steps().iter().map(|s| s.choice.clone()).collect();
                        v.push(prev.clone());
                        v
                    }
                    _ => (0..steps).map(|k| Dist::dirac(ActionId(ids[2 * k + 1]))).collect(),
                }
            }
        };
        if executed.len() != steps {
            return Err(err(line, "executed-choice count differs from the path length"));
        }
        let mut h = History::new(StateId(ids[0]));
        for (k, choice) in executed.into_iter().enumerate() {
            h.push(choice, ActionId(ids[2 * k + 1]), StateId(ids[2 * k + 2]));
        }
        h.validate(m).map_err(|e| err(line, e))?;
        if h.start() != m.initial() {
            return Err(err(line, "history does not start at the initial state"));
        }
        m.check_choice(h.last(), &d).map_err(|e| err(line, e))?;
        out.push((h, d));
    }
    Ok(out)
}

/// Columns of the result CSV.
pub const RESULT_HEADER: [&str; 10] =
    ["model", "agent", "nu", "shield", "safety", "allowed_ratio", "method", "ci", "episodes", "steps"];

pub fn write_results<W: std::io::Write>(rows: &[crate::experiment::ResultRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_HEADER)?;
    for row in rows {
        let r = &row.report;
        w.write_record([
            row.model.as_str(),
            row.agent.as_str(),
            row.nu.as_str(),
            row.shield.as_str(),
            &r.safety.to_string(),
            &r.allowed_ratio.to_string(),
            r.method.as_str(),
            &r.ci.map(|c| c.to_string()).unwrap_or_default(),
            &r.episodes.to_string(),
            &r.steps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes any header plus string rows.
pub fn write_table<W: std::io::Write>(header: &[&str], rows: &[Vec<String>], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}
