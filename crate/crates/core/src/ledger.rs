//! Simulated ledger: balances, Δ-delayed delivery of contract calls, block
//! packing and gas metering. Gas is recorded, never charged to balances.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{Amount, PartyId, Round};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("{party} has {balance} but needs {needed}")]
    InsufficientBalance {
        party: PartyId,
        balance: Amount,
        needed: Amount,
    },
    #[error("unknown party {0}")]
    UnknownParty(PartyId),
    #[error("balance overflow for {0}")]
    Overflow(PartyId),
}

/// Gas charged per call type, plus chain-wide constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GasTable {
    pub create_tx: u64,
    pub close_tx: u64,
    pub state_submit_tx: u64,
    pub state_submit_eliminate_tx: u64,
    pub revoke_tx: u64,
    pub strawman_bid_tx: u64,
    pub deploy: u64,
    pub gas_price_eth: f64,
    pub block_capacity: u64,
}

impl Default for GasTable {
    fn default() -> Self {
        GasTable {
            create_tx: 58_618,
            close_tx: 54_724,
            state_submit_tx: 52_845,
            state_submit_eliminate_tx: 67_778,
            revoke_tx: 55_000,
            strawman_bid_tx: 40_260,
            deploy: 3_387_400,
            gas_price_eth: 2e-8,
            block_capacity: 380,
        }
    }
}

impl GasTable {
    pub fn eth(&self, gas: u64) -> f64 {
        gas as f64 * self.gas_price_eth
    }
}

/// Account balances; the `update` operation of the ledger functionality.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Balances(Vec<Amount>);

impl Balances {
    pub fn new(initial: Vec<Amount>) -> Self {
        Balances(initial)
    }

    pub fn get(&self, party: PartyId) -> Option<Amount> {
        self.0.get(party.index()).copied()
    }

    pub fn all(&self) -> &[Amount] {
        &self.0
    }

    pub fn total(&self) -> u128 {
        self.0.iter().map(|a| a.0 as u128).sum()
    }

    pub fn update_balance(&mut self, party: PartyId, s: i64) -> Result<Amount, LedgerError> {
        let slot = self.0.get_mut(party.index()).ok_or(LedgerError::UnknownParty(party))?;
        let next = if s >= 0 {
            slot.0.checked_add(s as u64).ok_or(LedgerError::Overflow(party))?
        } else {
            slot.0
                .checked_sub(s.unsigned_abs())
                .ok_or(LedgerError::InsufficientBalance {
                    party,
                    balance: *slot,
                    needed: Amount(s.unsigned_abs()),
                })?
        };
        slot.0 = next;
        Ok(*slot)
    }
}

/// A contract registered on the ledger. Calls arrive in confirmation order.
pub trait Contract {
    type Event: Clone;

    fn gas_for(&self, payload: &[u8], gas: &GasTable) -> u64;

    fn call(&mut self, bank: &mut Balances, sender: PartyId, payload: &[u8], now: Round) -> Vec<Self::Event>;

    /// Expires timers at round `now`.
    fn tick(&mut self, bank: &mut Balances, now: Round) -> Vec<Self::Event>;

    /// Currency currently held by the contract.
    fn escrow_total(&self) -> u128;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PendingTx {
    pub id: u64,
    pub sender: PartyId,
    #[serde(skip)]
    pub call: Vec<u8>,
    pub submit_round: Round,
    pub gas: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfirmedTx {
    #[serde(flatten)]
    pub tx: PendingTx,
    pub confirm_round: Round,
    pub block: u64,
}

/// What one call to [`Ledger::advance_round`] did.
#[derive(Debug, Clone)]
pub struct RoundEffects<E> {
    pub round: Round,
    pub confirmed: Vec<ConfirmedTx>,
    pub events: Vec<E>,
}

#[derive(Debug, Clone)]
pub struct LedgerSnapshot<C> {
    pub round: Round,
    pub balances: Vec<Amount>,
    pub pending: Vec<PendingTx>,
    pub confirmed_count: usize,
    pub blocks_used: u64,
    pub gas_total: u64,
    pub contract: C,
}

#[derive(Debug)]
pub struct Ledger<C: Contract> {
    balances: Balances,
    contract: C,
    delta: Round,
    gas: GasTable,
    round: Round,
    pending: VecDeque<PendingTx>,
    confirmed_log: Vec<ConfirmedTx>,
    blocks_used: u64,
    gas_total: u64,
    next_id: u64,
}

impl<C: Contract> Ledger<C> {
    /// `delta` must be at least 1 and `gas.block_capacity` at least 1.
    pub fn new(balances: Vec<Amount>, contract: C, delta: Round, gas: GasTable) -> Self {
        assert!(delta >= 1, "confirmation latency must be at least one round");
        assert!(gas.block_capacity >= 1, "block capacity must be at least 1");
        Ledger {
            balances: Balances::new(balances),
            contract,
            delta,
            gas,
            round: 0,
            pending: VecDeque::new(),
            confirmed_log: Vec::new(),
            blocks_used: 0,
            gas_total: 0,
            next_id: 0,
        }
    }

    pub fn round(&self) -> Round {
        self.round
    }

    pub fn delta(&self) -> Round {
        self.delta
    }

    pub fn gas_table(&self) -> &GasTable {
        &self.gas
    }

    pub fn contract(&self) -> &C {
        &self.contract
    }

    pub fn balances(&self) -> &Balances {
        &self.balances
    }

    pub fn update_balance(&mut self, party: PartyId, s: i64) -> Result<Amount, LedgerError> {
        self.balances.update_balance(party, s)
    }

    pub fn submit_tx(&mut self, sender: PartyId, call: Vec<u8>) -> &PendingTx {
        let gas = self.contract.gas_for(&call, &self.gas);
        self.gas_total += gas;
        self.pending.push_back(PendingTx {
            id: self.next_id,
            sender,
            call,
            submit_round: self.round,
            gas,
        });
        self.next_id += 1;
        self.pending.back().unwrap()
    }

    pub fn read_pending(&self) -> impl Iterator<Item = &PendingTx> {
        self.pending.iter()
    }

    /// Moves to the next round: confirms every transaction that has waited
    /// Δ rounds, in submission order, then lets the contract expire timers.
    pub fn advance_round(&mut self) -> RoundEffects<C::Event> {
        self.round += 1;
        let mut due = Vec::new();
        while let Some(tx) = self.pending.front() {
            if tx.submit_round + self.delta > self.round {
                break;
            }
            due.push(self.pending.pop_front().unwrap());
        }
        let mut events = Vec::new();
        let mut confirmed = Vec::with_capacity(due.len());
        for (i, tx) in due.into_iter().enumerate() {
            if i as u64 % self.gas.block_capacity == 0 {
                self.blocks_used += 1;
            }
            events.extend(self.contract.call(&mut self.balances, tx.sender, &tx.call, self.round));
            let c = ConfirmedTx {
                tx,
                confirm_round: self.round,
                block: self.blocks_used,
            };
            self.confirmed_log.push(c.clone());
            confirmed.push(c);
        }
        events.extend(self.contract.tick(&mut self.balances, self.round));
        RoundEffects {
            round: self.round,
            confirmed,
            events,
        }
    }

    pub fn confirmed_log(&self) -> &[ConfirmedTx] {
        &self.confirmed_log
    }

    pub fn blocks_used(&self) -> u64 {
        self.blocks_used
    }

    pub fn gas_total(&self) -> u64 {
        self.gas_total
    }

    pub fn tx_count(&self) -> u64 {
        self.next_id
    }

    /// Balances plus contract escrow; constant over any run.
    pub fn total_value(&self) -> u128 {
        self.balances.total() + self.contract.escrow_total()
    }

    pub fn read_state(&self) -> LedgerSnapshot<C>
    where
        C: Clone,
    {
        LedgerSnapshot {
            round: self.round,
            balances: self.balances.all().to_vec(),
            pending: self.pending.iter().cloned().collect(),
            confirmed_count: self.confirmed_log.len(),
            blocks_used: self.blocks_used,
            gas_total: self.gas_total,
            contract: self.contract.clone(),
        }
    }
}
