//! The all-on-chain baseline: the contract itself collects every bid and
//! computes each best response. Same ledger, same economy, same update rule
//! as a channel run.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::Serialize;

use crate::auction::{self, BidProfile, ChannelState, Economy, BID_LEN};
use crate::ledger::{Balances, ConfirmedTx, Contract, GasTable, Ledger};
use crate::metrics::MetricsRecord;
use crate::netsim::SimError;
use crate::scenario::{Mode, ScenarioConfig};
use crate::units::{Amount, PartyId, Round};

pub const OP_DEPOSIT: u8 = 0x10;
pub const OP_BID: u8 = 0x11;
pub const OP_WITHDRAW: u8 = 0x12;

pub fn encode_deposit() -> Vec<u8> {
    vec![OP_DEPOSIT]
}

pub fn encode_bid(iteration: u32, bid: &BidProfile) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + BID_LEN);
    out.push(OP_BID);
    out.extend_from_slice(&iteration.to_le_bytes());
    out.extend_from_slice(&bid.to_bytes());
    out
}

pub fn encode_withdraw() -> Vec<u8> {
    vec![OP_WITHDRAW]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum StrawmanEvent {
    Started { round: Round },
    Computed { round: Round, iteration: u32, ne: bool },
    Aborted { round: Round, party: PartyId },
    Finished { round: Round },
    Withdrawn { round: Round, party: PartyId, amount: Amount },
    Rejected { round: Round, party: PartyId, reason: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StrawmanStatus {
    Depositing,
    Bidding,
    Finished,
}

#[derive(Debug, Clone)]
pub struct StrawmanContract {
    economy: Arc<Economy>,
    gamma: f64,
    eps: f64,
    deposit: Amount,
    /// Rounds allowed to collect one iteration's bids.
    timeout: Round,
    fixed: Option<u32>,
    cap: u32,
    parties: Vec<PartyId>,
    deposits: BTreeMap<PartyId, Amount>,
    active: BTreeSet<PartyId>,
    status: StrawmanStatus,
    iteration: u32,
    deadline: Round,
    bids: BTreeMap<PartyId, BidProfile>,
    state: Arc<ChannelState>,
    forfeited: u64,
    paid_from_pool: u64,
    converged: bool,
    withdrawn: BTreeSet<PartyId>,
}

impl StrawmanContract {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        let parties = cfg.party_ids();
        StrawmanContract {
            economy: Arc::new(cfg.economy()),
            gamma: cfg.gamma,
            eps: cfg.eps,
            deposit: cfg.deposit_amount(),
            timeout: 2 * cfg.delta + 2,
            fixed: cfg.fixed_iterations,
            cap: cfg.iteration_cap,
            state: Arc::new(auction::initial_state(&parties)),
            parties,
            deposits: BTreeMap::new(),
            active: BTreeSet::new(),
            status: StrawmanStatus::Depositing,
            iteration: 0,
            deadline: 0,
            bids: BTreeMap::new(),
            forfeited: 0,
            paid_from_pool: 0,
            converged: false,
            withdrawn: BTreeSet::new(),
        }
    }

    pub fn status(&self) -> StrawmanStatus {
        self.status
    }

    pub fn iteration(&self) -> u32 {
        self.iteration
    }

    pub fn state(&self) -> &Arc<ChannelState> {
        &self.state
    }

    pub fn active(&self) -> &BTreeSet<PartyId> {
        &self.active
    }

    pub fn has_bid(&self, party: PartyId) -> bool {
        self.bids.contains_key(&party)
    }

    pub fn has_withdrawn(&self, party: PartyId) -> bool {
        self.withdrawn.contains(&party)
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    fn open_iteration(&mut self, now: Round) {
        self.iteration += 1;
        self.deadline = now + self.timeout;
        self.bids.clear();
    }

    fn compute(&mut self, now: Round) -> Vec<StrawmanEvent> {
        let bids: Vec<(PartyId, BidProfile)> = self.bids.iter().map(|(p, b)| (*p, *b)).collect();
        let k = self.iteration;
        let next = match auction::best_response(&self.state, &bids, &self.economy, self.gamma) {
            Ok(s) => s,
            Err(_) => {
                self.status = StrawmanStatus::Finished;
                return vec![StrawmanEvent::Finished { round: now }];
            }
        };
        let ne = auction::is_ne(&next, &bids, &self.economy, self.eps);
        self.state = Arc::new(next);
        let mut events = vec![StrawmanEvent::Computed {
            round: now,
            iteration: k,
            ne,
        }];
        let done = match self.fixed {
            Some(f) => k >= f,
            None => ne || k >= self.cap,
        };
        if done {
            self.converged = ne;
            self.status = StrawmanStatus::Finished;
            events.push(StrawmanEvent::Finished { round: now });
        } else {
            self.open_iteration(now);
        }
        events
    }

    fn reject(now: Round, party: PartyId, reason: &'static str) -> Vec<StrawmanEvent> {
        vec![StrawmanEvent::Rejected {
            round: now,
            party,
            reason,
        }]
    }
}

impl Contract for StrawmanContract {
    type Event = StrawmanEvent;

    fn gas_for(&self, payload: &[u8], gas: &GasTable) -> u64 {
        match payload.first() {
            Some(&OP_DEPOSIT) => gas.create_tx,
            Some(&OP_BID) => gas.strawman_bid_tx,
            Some(&OP_WITHDRAW) => gas.close_tx,
            _ => 0,
        }
    }

    fn call(&mut self, bank: &mut Balances, sender: PartyId, payload: &[u8], now: Round) -> Vec<StrawmanEvent> {
        if !self.parties.contains(&sender) {
            return Self::reject(now, sender, "unknown party");
        }
        match payload.first() {
            Some(&OP_DEPOSIT) if payload.len() == 1 => {
                if self.status != StrawmanStatus::Depositing || self.deposits.contains_key(&sender) {
                    return Self::reject(now, sender, "deposit not expected");
                }
                if bank.update_balance(sender, -(self.deposit.0 as i64)).is_err() {
                    return Self::reject(now, sender, "insufficient balance");
                }
                self.deposits.insert(sender, self.deposit);
                self.active.insert(sender);
                if self.deposits.len() == self.parties.len() {
                    self.status = StrawmanStatus::Bidding;
                    self.state = Arc::new(auction::initial_state(&self.parties));
                    self.open_iteration(now);
                    return vec![StrawmanEvent::Started { round: now }];
                }
                Vec::new()
            }
            Some(&OP_BID) if payload.len() == 5 + BID_LEN => {
                let k = u32::from_le_bytes(payload[1..5].try_into().unwrap());
                let Some(bid) = BidProfile::from_bytes(&payload[5..]) else {
                    return Self::reject(now, sender, "malformed bid");
                };
                if self.status != StrawmanStatus::Bidding || k != self.iteration || now >= self.deadline {
                    return Self::reject(now, sender, "bid outside its iteration");
                }
                if !self.active.contains(&sender) || self.bids.contains_key(&sender) {
                    return Self::reject(now, sender, "bid not accepted from this party");
                }
                self.bids.insert(sender, bid);
                if self.bids.len() == self.active.len() {
                    return self.compute(now);
                }
                Vec::new()
            }
            Some(&OP_WITHDRAW) if payload.len() == 1 => {
                if self.status != StrawmanStatus::Finished || !self.active.contains(&sender) || self.withdrawn.contains(&sender) {
                    return Self::reject(now, sender, "withdrawal not allowed");
                }
                let stayers: Vec<PartyId> = self.active.iter().copied().collect();
                let n = stayers.len() as u64;
                let rank = stayers.iter().position(|p| *p == sender).unwrap() as u64;
                let share = self.forfeited / n + u64::from(rank < self.forfeited % n);
                self.paid_from_pool += share;
                let amount = Amount(self.deposits.remove(&sender).map_or(0, |d| d.0) + share);
                bank.update_balance(sender, amount.0 as i64).expect("payout fits");
                self.withdrawn.insert(sender);
                vec![StrawmanEvent::Withdrawn {
                    round: now,
                    party: sender,
                    amount,
                }]
            }
            _ => Self::reject(now, sender, "malformed call"),
        }
    }

    fn tick(&mut self, _bank: &mut Balances, now: Round) -> Vec<StrawmanEvent> {
        if self.status != StrawmanStatus::Bidding || now < self.deadline {
            return Vec::new();
        }
        let missing: Vec<PartyId> = self.active.iter().copied().filter(|p| !self.bids.contains_key(p)).collect();
        let mut events = Vec::new();
        for p in missing {
            self.active.remove(&p);
            self.forfeited += self.deposits.remove(&p).map_or(0, |d| d.0);
            events.push(StrawmanEvent::Aborted { round: now, party: p });
        }
        if self.bids.is_empty() {
            self.status = StrawmanStatus::Finished;
            events.push(StrawmanEvent::Finished { round: now });
        } else {
            events.extend(self.compute(now));
        }
        events
    }

    fn escrow_total(&self) -> u128 {
        self.deposits.values().map(|d| d.0 as u128).sum::<u128>() + (self.forfeited - self.paid_from_pool) as u128
    }
}

#[derive(Debug)]
pub struct StrawmanOutput {
    pub metrics: MetricsRecord,
    pub balances: Vec<Amount>,
    pub contract: StrawmanContract,
    pub confirmed: Vec<ConfirmedTx>,
    pub events: Vec<StrawmanEvent>,
}

/// Runs the baseline on the scenario's economy. Parties read the contract
/// one round late; a party with an iteration-triggered deviation stops
/// bidding from that iteration on.
pub fn run_strawman(cfg: &ScenarioConfig) -> Result<StrawmanOutput, SimError> {
    let parties = cfg.party_ids();
    let quits: Vec<Option<u32>> = parties.iter().map(|p| cfg.behavior(*p).iteration()).collect();
    let mut ledger = Ledger::new(
        vec![cfg.initial_balance_amount(); parties.len()],
        StrawmanContract::new(cfg),
        cfg.delta,
        cfg.gas.clone(),
    );
    let mut events = Vec::new();
    let mut view = ledger.contract().clone();
    let mut pending_bid: BTreeSet<(PartyId, u32)> = BTreeSet::new();
    let mut withdrawing: BTreeSet<PartyId> = BTreeSet::new();
    let mut round: Round = 0;
    loop {
        if round >= cfg.round_cap {
            return Err(SimError::Stalled {
                rounds: round,
                trace: Vec::new(),
            });
        }
        if round > 0 {
            let fx = ledger.advance_round();
            events.extend(fx.events);
        }
        let done = ledger.contract().status() == StrawmanStatus::Finished
            && ledger.contract().active().iter().all(|p| ledger.contract().has_withdrawn(*p));
        if done {
            break;
        }
        for &p in &parties {
            if round == 0 {
                ledger.submit_tx(p, encode_deposit());
                continue;
            }
            match view.status() {
                StrawmanStatus::Bidding => {
                    let k = view.iteration();
                    let quit = quits[p.index()].is_some_and(|q| k >= q);
                    if view.active().contains(&p) && !view.has_bid(p) && !quit && pending_bid.insert((p, k)) {
                        let bid = view.state().response(p).unwrap_or_default();
                        ledger.submit_tx(p, encode_bid(k, &bid));
                    }
                }
                StrawmanStatus::Finished => {
                    if view.active().contains(&p) && withdrawing.insert(p) {
                        ledger.submit_tx(p, encode_withdraw());
                    }
                }
                StrawmanStatus::Depositing => {}
            }
        }
        view = ledger.contract().clone();
        round += 1;
    }

    let contract = ledger.contract().clone();
    let confirmed = ledger.confirmed_log().to_vec();
    let mut tx_by_kind = BTreeMap::new();
    let mut gas_by_kind = BTreeMap::new();
    for c in &confirmed {
        let name = match c.tx.call.first() {
            Some(&OP_DEPOSIT) => "deposit",
            Some(&OP_BID) => "bid",
            Some(&OP_WITHDRAW) => "withdraw",
            _ => "malformed",
        };
        *tx_by_kind.entry(name.to_string()).or_insert(0) += 1;
        *gas_by_kind.entry(name.to_string()).or_insert(0) += c.tx.gas;
    }
    let aborted = events
        .iter()
        .filter_map(|e| match e {
            StrawmanEvent::Aborted { party, .. } => Some(*party),
            _ => None,
        })
        .collect();
    let iterations_run = events
        .iter()
        .filter(|e| matches!(e, StrawmanEvent::Computed { .. }))
        .count() as u32;
    let state = contract.state();
    let blocks = ledger.blocks_used();
    let gas_total = ledger.gas_total();
    let metrics = MetricsRecord {
        mode: Mode::Strawman,
        n_parties: cfg.n(),
        iterations_run,
        on_chain_tx: ledger.tx_count(),
        gas_total,
        eth_total: cfg.gas.eth(gas_total),
        off_chain_messages: 0,
        off_chain_bytes: 0,
        off_chain_wire_bytes: 0,
        rounds_elapsed: round,
        off_chain_rounds: 0,
        blocks_used: blocks,
        estimated_seconds: blocks as f64 * cfg.block_time_ms / 1000.0,
        tx_by_kind,
        gas_by_kind,
        best_version: state.version as i64,
        eliminated: aborted,
        revoked: Vec::new(),
        final_price: state.clearing_price.to_f64(),
        final_allocations: state.entries.iter().map(|e| (e.party, e.bid.quantity.to_f64())).collect(),
        converged: contract.converged(),
    };
    Ok(StrawmanOutput {
        metrics,
        balances: ledger.balances().all().to_vec(),
        contract,
        confirmed,
        events,
    })
}
