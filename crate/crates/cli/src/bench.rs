//! Shield throughput and constructed-shield memory.

use std::sync::Arc;
use std::time::Instant;

use probshield_core::eval::simulate_replicate;
use probshield_core::{Agent, Analysis, ConstructedShield, Dist, History, Mdp, Prob, SimConfig};

use crate::experiment::Prototype;

#[derive(Clone, Debug, PartialEq)]
pub struct Throughput {
    pub shield: String,
    pub steps: u64,
    pub seconds: f64,
    pub queries_per_second: f64,
}

/// Wall-clock rate of shielded simulation steps, sampling included.
pub fn throughput<T: Prob>(
    m: &Mdp<T>,
    name: &str,
    proto: &Prototype<T>,
    agent: &Agent<T>,
    steps: u64,
    episode_len: usize,
    seed: u64,
) -> anyhow::Result<Throughput> {
    let cfg = SimConfig { steps, episode_len, seed, replicates: 1 };
    let mut shield = proto.fresh()?;
    let start = Instant::now();
    let stats = simulate_replicate(m, shield.as_mut(), agent, &cfg, 0, None)?;
    let seconds = start.elapsed().as_secs_f64().max(1e-9);
    Ok(Throughput {
        shield: name.to_string(),
        steps: stats.steps,
        seconds,
        queries_per_second: stats.steps as f64 / seconds,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemoryPoint {
    pub pairs: usize,
    pub accepted: usize,
    pub trie_nodes: usize,
    pub bytes: usize,
}

/// Footprint of an offline shield as pairs are folded in, every `every` pairs.
pub fn memory_profile<T: Prob>(
    analysis: &Arc<Analysis<T>>,
    nu: T,
    pairs: &[(History<T>, Dist<T>)],
    every: usize,
) -> anyhow::Result<Vec<MemoryPoint>> {
    let mut shield = ConstructedShield::new(analysis.clone(), nu, false)?;
    let mut accepted = 0;
    let mut points = vec![MemoryPoint { pairs: 0, accepted: 0, trie_nodes: 1, bytes: shield.approx_bytes() }];
    for (i, (h, d)) in pairs.iter().enumerate() {
        if shield.safe_extend(h, d)?.accepted {
            accepted += 1;
        }
        if (i + 1) % every.max(1) == 0 || i + 1 == pairs.len() {
            points.push(MemoryPoint {
                pairs: i + 1,
                accepted,
                trie_nodes: shield.trie().num_nodes(),
                bytes: shield.approx_bytes(),
            });
        }
    }
    Ok(points)
}
