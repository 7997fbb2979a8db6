//! Per-round trace records, written as JSON lines.

use std::io::{self, Write};

use serde::Serialize;

use crate::judge::{CallKind, JudgeEvent};
use crate::party::message::MessageKind;
use crate::party::{EnvInput, EnvOutput};
use crate::units::{PartyId, Round};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Delivery {
    pub from: PartyId,
    pub to: PartyId,
    pub kind: MessageKind,
    pub iteration: u32,
    pub sent_round: Round,
    pub body_bytes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TxRecord {
    pub id: u64,
    pub sender: PartyId,
    pub call: CallKind,
    pub gas: u64,
    pub submit_round: Round,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundTrace {
    pub round: Round,
    pub delivered: Vec<Delivery>,
    pub submitted: Vec<TxRecord>,
    pub confirmed: Vec<TxRecord>,
    pub events: Vec<JudgeEvent>,
    pub inputs: Vec<(PartyId, EnvInput)>,
    pub outputs: Vec<(PartyId, EnvOutput)>,
    /// One phase code per party, in index order.
    pub phases: String,
    pub best_version: i64,
    pub in_dispute: bool,
    /// Balances plus escrow, in micro-units.
    pub total_value: u64,
}

pub fn write_jsonl(trace: &[RoundTrace], mut out: impl Write) -> io::Result<()> {
    for r in trace {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl(trace: &[RoundTrace]) -> Vec<u8> {
    let mut out = Vec::new();
    write_jsonl(trace, &mut out).expect("writing to memory");
    out
}
