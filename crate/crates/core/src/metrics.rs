//! Counters reported for every run, and their CSV / JSON-lines forms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::scenario::Mode;
use crate::units::PartyId;

pub const CSV_COLUMNS: [&str; 12] = [
    "mode",
    "n_parties",
    "iterations_run",
    "on_chain_tx",
    "gas_total",
    "eth_total",
    "off_chain_messages",
    "off_chain_bytes",
    "rounds_elapsed",
    "blocks_used",
    "estimated_seconds",
    "converged",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub mode: Mode,
    pub n_parties: usize,
    pub iterations_run: u32,
    pub on_chain_tx: u64,
    pub gas_total: u64,
    /// `gas_total × gas_price_eth`.
    pub eth_total: f64,
    pub off_chain_messages: u64,
    /// Message body bytes, summed over deliveries.
    pub off_chain_bytes: u64,
    /// Full encoded message bytes (header, body, signature), summed over
    /// deliveries.
    pub off_chain_wire_bytes: u64,
    pub rounds_elapsed: u64,
    /// Rounds in which at least one off-chain message was delivered.
    pub off_chain_rounds: u64,
    pub blocks_used: u64,
    pub estimated_seconds: f64,
    pub tx_by_kind: BTreeMap<String, u64>,
    pub gas_by_kind: BTreeMap<String, u64>,
    pub best_version: i64,
    pub eliminated: Vec<PartyId>,
    pub revoked: Vec<PartyId>,
    pub final_price: f64,
    pub final_allocations: Vec<(PartyId, f64)>,
    pub converged: bool,
}

impl MetricsRecord {
    pub fn tx_of(&self, kind: &str) -> u64 {
        self.tx_by_kind.get(kind).copied().unwrap_or(0)
    }

    pub fn gas_of(&self, kind: &str) -> u64 {
        self.gas_by_kind.get(kind).copied().unwrap_or(0)
    }

    pub fn csv_header() -> String {
        CSV_COLUMNS.join(",")
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.4},{},{},{},{},{:.1},{}",
            self.mode.as_str(),
            self.n_parties,
            self.iterations_run,
            self.on_chain_tx,
            self.gas_total,
            self.eth_total,
            self.off_chain_messages,
            self.off_chain_bytes,
            self.rounds_elapsed,
            self.blocks_used,
            self.estimated_seconds,
            self.converged
        )
    }

    pub fn json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }

    pub fn from_json_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}
