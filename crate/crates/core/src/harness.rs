//! Scenario runner, run comparison and metrics output.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;

use crate::metrics::MetricsRecord;
use crate::netsim::{self, RunOptions, SimError};
use crate::scenario::{Mode, PartySpec, ScenarioConfig};
use crate::strawman;

/// Scenario files shipped with the crate, by name.
pub const SUITE: [(&str, &str); 7] = [
    ("baseline", include_str!("../scenarios/baseline.toml")),
    ("strawman", include_str!("../scenarios/strawman.toml")),
    ("stale_submit", include_str!("../scenarios/stale_submit.toml")),
    ("silent", include_str!("../scenarios/silent.toml")),
    ("revoke", include_str!("../scenarios/revoke.toml")),
    ("invalid_reveal", include_str!("../scenarios/invalid_reveal.toml")),
    ("wrong_state", include_str!("../scenarios/wrong_state.toml")),
];

/// Channel sizes of the create/close block-count series.
pub const SCALING_SIZES: [usize; 5] = [1000, 2000, 3000, 4000, 5000];

pub fn suite_scenario(name: &str) -> Option<ScenarioConfig> {
    SUITE
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| ScenarioConfig::from_toml(text).expect("bundled scenarios are valid"))
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<MetricsRecord, SimError> {
    match cfg.mode {
        Mode::Channel => Ok(netsim::run(cfg, RunOptions::default())?.metrics),
        Mode::Strawman => Ok(strawman::run_strawman(cfg)?.metrics),
    }
}

/// A channel of `n` parties that opens and closes without iterating.
pub fn lifecycle_config(n: usize) -> ScenarioConfig {
    let parties = (0..n)
        .map(|i| {
            if i % 2 == 0 {
                PartySpec::buyer(10.0, 1.0, 20.0)
            } else {
                PartySpec::seller(1.0, 20.0)
            }
        })
        .collect();
    let mut cfg = ScenarioConfig::with_parties(parties);
    cfg.name = Some(format!("lifecycle_{n}"));
    cfg.fixed_iterations = Some(0);
    cfg
}

/// Off-chain messages of one honest iteration among `n` parties.
pub fn messages_per_iteration(n: u64) -> u64 {
    3 * n * n.saturating_sub(1)
}

/// Blocks needed to confirm `n` simultaneous transactions.
pub fn blocks_for(n: u64, capacity: u64) -> u64 {
    n.div_ceil(capacity)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Delta {
    pub metric: &'static str,
    pub a: f64,
    pub b: f64,
    pub diff: f64,
    /// `(b - a) / a`, in percent; `None` when `a` is zero.
    pub percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub deltas: Vec<Delta>,
    pub max_allocation_gap: f64,
    /// Set when the allocations differ by more than [`ALLOCATION_TOLERANCE`]
    /// or cover different parties.
    pub allocation_mismatch: bool,
}

pub const ALLOCATION_TOLERANCE: f64 = 1e-3;

impl Comparison {
    pub fn delta(&self, metric: &str) -> Option<&Delta> {
        self.deltas.iter().find(|d| d.metric == metric)
    }

    /// Reduction from `b` to `a` in percent.
    pub fn reduction(&self, metric: &str) -> Option<f64> {
        let d = self.delta(metric)?;
        (d.b != 0.0).then(|| 100.0 * (d.b - d.a) / d.b)
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<20} {:>16} {:>16} {:>16} {:>10}", "metric", "a", "b", "b - a", "change")?;
        for d in &self.deltas {
            let pct = d.percent.map_or("n/a".to_string(), |p| format!("{p:+.2}%"));
            writeln!(f, "{:<20} {:>16.4} {:>16.4} {:>16.4} {:>10}", d.metric, d.a, d.b, d.diff, pct)?;
        }
        write!(
            f,
            "allocations: max gap {:.6}{}",
            self.max_allocation_gap,
            if self.allocation_mismatch { " (MISMATCH)" } else { "" }
        )
    }
}

/// Differences from run `a` to run `b`.
pub fn compare_runs(a: &MetricsRecord, b: &MetricsRecord) -> Comparison {
    let pairs: [(&'static str, f64, f64); 7] = [
        ("on_chain_tx", a.on_chain_tx as f64, b.on_chain_tx as f64),
        ("gas_total", a.gas_total as f64, b.gas_total as f64),
        ("eth_total", a.eth_total, b.eth_total),
        ("off_chain_messages", a.off_chain_messages as f64, b.off_chain_messages as f64),
        ("blocks_used", a.blocks_used as f64, b.blocks_used as f64),
        ("rounds_elapsed", a.rounds_elapsed as f64, b.rounds_elapsed as f64),
        ("estimated_seconds", a.estimated_seconds, b.estimated_seconds),
    ];
    let deltas = pairs
        .into_iter()
        .map(|(metric, x, y)| Delta {
            metric,
            a: x,
            b: y,
            diff: y - x,
            percent: (x != 0.0).then(|| 100.0 * (y - x) / x),
        })
        .collect();
    let same_parties = a.final_allocations.len() == b.final_allocations.len()
        && a.final_allocations.iter().zip(&b.final_allocations).all(|(x, y)| x.0 == y.0);
    let max_allocation_gap = a
        .final_allocations
        .iter()
        .zip(&b.final_allocations)
        .map(|(x, y)| (x.1 - y.1).abs())
        .fold(0.0, f64::max);
    Comparison {
        deltas,
        max_allocation_gap,
        allocation_mismatch: !same_parties || max_allocation_gap > ALLOCATION_TOLERANCE,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    JsonLines,
}

pub fn render_metrics(records: &[MetricsRecord], format: Format) -> String {
    let mut out = String::new();
    match format {
        Format::Csv => {
            out.push_str(&MetricsRecord::csv_header());
            out.push('\n');
            for r in records {
                out.push_str(&r.csv_row());
                out.push('\n');
            }
        }
        Format::JsonLines => {
            for r in records {
                out.push_str(&r.json_line());
                out.push('\n');
            }
        }
    }
    out
}

pub fn emit_metrics(records: &[MetricsRecord], format: Format, path: &Path) -> io::Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(render_metrics(records, format).as_bytes())?;
    f.flush()
}

/// Reads records written with [`Format::JsonLines`].
pub fn load_metrics(path: &Path) -> io::Result<Vec<MetricsRecord>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| MetricsRecord::from_json_line(l).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_load() {
        for (name, _) in SUITE {
            let cfg = suite_scenario(name).unwrap();
            assert_eq!(cfg.name.as_deref(), Some(name));
            assert_eq!(cfg.n(), 10);
        }
        assert_eq!(suite_scenario("strawman").unwrap().mode, Mode::Strawman);
    }

    #[test]
    fn message_law_and_block_counts() {
        assert_eq!(messages_per_iteration(10), 270);
        let blocks: Vec<u64> = SCALING_SIZES.iter().map(|n| 2 * blocks_for(*n as u64, 380)).collect();
        assert_eq!(blocks, vec![6, 12, 16, 22, 28]);
    }
}
