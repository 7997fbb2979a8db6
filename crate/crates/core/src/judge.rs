//! The on-chain Judge: channel lifecycle, versioned state submission with a
//! dispute window, elimination by unanimous vote, revocation and deposit
//! settlement.
//!
//! Call payloads start with a one-byte opcode:
//!
//! | opcode | call         | rest of payload                                           |
//! |--------|--------------|-----------------------------------------------------------|
//! | 0      | create       | signature on the genesis state (64 bytes)                 |
//! | 1      | state_submit | `p_r u16 (0xFFFF = none) ‖ v u32 ‖ state ‖ proof ‖ sigs`  |
//! | 2      | revoke       | empty                                                     |
//! | 3      | close        | empty                                                     |

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::Serialize;

use crate::auction::{self, decode_signature_list, ChannelState, Economy, Proof, Reader, VerifyContext};
use crate::crypto::{self, PublicKey, Signature, SIGNATURE_LEN};
use crate::ledger::{Balances, Contract, GasTable};
use crate::units::{Amount, PartyId, Round};

pub const OP_CREATE: u8 = 0;
pub const OP_STATE_SUBMIT: u8 = 1;
pub const OP_REVOKE: u8 = 2;
pub const OP_CLOSE: u8 = 3;
pub const NO_PARTY: u16 = 0xFFFF;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    Create,
    StateSubmit,
    StateSubmitEliminate,
    Revoke,
    Close,
    Malformed,
}

/// Classifies a payload from its header without decoding the body.
pub fn call_kind(payload: &[u8]) -> CallKind {
    match payload.first() {
        Some(&OP_CREATE) => CallKind::Create,
        Some(&OP_STATE_SUBMIT) => match payload.get(1..3) {
            Some(b) if u16::from_le_bytes([b[0], b[1]]) == NO_PARTY => CallKind::StateSubmit,
            Some(_) => CallKind::StateSubmitEliminate,
            None => CallKind::Malformed,
        },
        Some(&OP_REVOKE) => CallKind::Revoke,
        Some(&OP_CLOSE) => CallKind::Close,
        _ => CallKind::Malformed,
    }
}

/// `(p_r, v)` of a state_submit payload, read from its header.
pub fn submit_header(payload: &[u8]) -> Option<(Option<PartyId>, u32)> {
    if payload.first() != Some(&OP_STATE_SUBMIT) || payload.len() < 7 {
        return None;
    }
    let target = u16::from_le_bytes([payload[1], payload[2]]);
    let v = u32::from_le_bytes(payload[3..7].try_into().unwrap());
    Some(((target != NO_PARTY).then_some(PartyId(target)), v))
}

pub fn encode_create(genesis_sig: &Signature) -> Vec<u8> {
    let mut out = vec![OP_CREATE];
    out.extend_from_slice(genesis_sig.as_bytes());
    out
}

/// `state` must carry the signatures to submit.
pub fn encode_state_submit(target: Option<PartyId>, version: u32, state: &ChannelState, proof: &Proof) -> Vec<u8> {
    let mut out = vec![OP_STATE_SUBMIT];
    out.extend_from_slice(&target.map_or(NO_PARTY, |p| p.0).to_le_bytes());
    out.extend_from_slice(&version.to_le_bytes());
    state.encode_into(&mut out);
    out.extend_from_slice(&proof.encode());
    state.encode_signatures(&mut out);
    out
}

pub fn encode_revoke() -> Vec<u8> {
    vec![OP_REVOKE]
}

pub fn encode_close() -> Vec<u8> {
    vec![OP_CLOSE]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JudgeCall {
    Create {
        genesis_sig: Signature,
    },
    StateSubmit {
        target: Option<PartyId>,
        version: u32,
        state: ChannelState,
        proof: Proof,
    },
    Revoke,
    Close,
}

pub fn decode_call(payload: &[u8]) -> Option<JudgeCall> {
    let mut r = Reader::new(payload);
    let call = match r.u8().ok()? {
        OP_CREATE => JudgeCall::Create {
            genesis_sig: Signature(r.take(SIGNATURE_LEN).ok()?.try_into().ok()?),
        },
        OP_STATE_SUBMIT => {
            let target = r.u16().ok()?;
            let version = r.u32().ok()?;
            let (mut state, used) = ChannelState::decode(r.rest()).ok()?;
            r.pos += used;
            let (proof, used) = Proof::decode(r.rest()).ok()?;
            r.pos += used;
            let (sigs, used) = decode_signature_list(r.rest()).ok()?;
            r.pos += used;
            state.signatures = sigs;
            JudgeCall::StateSubmit {
                target: (target != NO_PARTY).then_some(PartyId(target)),
                version,
                state,
                proof,
            }
        }
        OP_REVOKE => JudgeCall::Revoke,
        OP_CLOSE => JudgeCall::Close,
        _ => return None,
    };
    r.is_empty().then_some(call)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    Eliminated,
    Revoked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    ChannelCreated,
    CreateExpired,
    DisputeOpened { by: PartyId, version: u32, deadline: Round },
    DisputeClosed { version: u32 },
    PartyRemoved { party: PartyId, reason: RemovalReason },
    EliminationExpired { target: PartyId, version: u32 },
    ChannelClosed { payouts: Vec<(PartyId, Amount)> },
    CloseExpired,
    CallRejected { sender: PartyId, call: CallKind, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JudgeEvent {
    pub round: Round,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone)]
pub struct JudgeConfig {
    pub parties: Vec<PartyId>,
    pub pubkeys: Arc<Vec<PublicKey>>,
    pub economy: Arc<Economy>,
    pub gamma: f64,
    pub deposit: Amount,
    pub delta: Round,
    /// T, in rounds; at least 1.
    pub dispute_window: Round,
    /// Share of an eliminated party's deposit returned to it, in `[0, 1]`.
    pub refund_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelStatus {
    Idle,
    Created,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Window {
    members: BTreeSet<PartyId>,
    deadline: Round,
}

#[derive(Debug, Clone)]
pub struct Judge {
    cfg: Arc<JudgeConfig>,
    genesis_unsigned: Arc<ChannelState>,
    genesis_bytes: Arc<Vec<u8>>,
    status: ChannelStatus,
    parties: BTreeSet<PartyId>,
    deposits: BTreeMap<PartyId, Amount>,
    forfeit_pool: u64,
    best_version: i64,
    state: Option<Arc<ChannelState>>,
    dispute_deadline: Option<Round>,
    create_waiting: Option<Window>,
    create_sigs: BTreeMap<PartyId, Signature>,
    close_waiting: Option<Window>,
    votes: BTreeMap<(PartyId, u32), Window>,
    genesis: Option<Arc<ChannelState>>,
    accepted: Vec<u32>,
}

impl Judge {
    pub fn new(cfg: JudgeConfig) -> Self {
        let genesis_unsigned = Arc::new(auction::initial_state(&cfg.parties));
        Judge {
            cfg: Arc::new(cfg),
            genesis_bytes: Arc::new(genesis_unsigned.encode()),
            genesis_unsigned,
            status: ChannelStatus::Idle,
            parties: BTreeSet::new(),
            deposits: BTreeMap::new(),
            forfeit_pool: 0,
            best_version: -1,
            state: None,
            dispute_deadline: None,
            create_waiting: None,
            create_sigs: BTreeMap::new(),
            close_waiting: None,
            votes: BTreeMap::new(),
            genesis: None,
            accepted: Vec::new(),
        }
    }

    pub fn config(&self) -> &JudgeConfig {
        &self.cfg
    }

    pub fn status(&self) -> ChannelStatus {
        self.status
    }

    pub fn parties(&self) -> &BTreeSet<PartyId> {
        &self.parties
    }

    pub fn best_version(&self) -> i64 {
        self.best_version
    }

    pub fn in_dispute(&self) -> bool {
        self.dispute_deadline.is_some()
    }

    pub fn dispute_deadline(&self) -> Option<Round> {
        self.dispute_deadline
    }

    pub fn stored_state(&self) -> Option<&Arc<ChannelState>> {
        self.state.as_ref()
    }

    /// The genesis state with every party's signature, once created.
    pub fn genesis(&self) -> Option<&Arc<ChannelState>> {
        self.genesis.as_ref()
    }

    pub fn deposits(&self) -> &BTreeMap<PartyId, Amount> {
        &self.deposits
    }

    pub fn forfeit_pool(&self) -> Amount {
        Amount(self.forfeit_pool)
    }

    /// Every version accepted so far, in order.
    pub fn accepted_versions(&self) -> &[u32] {
        &self.accepted
    }

    pub fn open_vote(&self, target: PartyId) -> bool {
        self.votes.keys().any(|(t, _)| *t == target)
    }

    pub fn close_waiting(&self) -> usize {
        self.close_waiting.as_ref().map_or(0, |w| w.members.len())
    }

    fn quorum_window(&self, n: usize) -> Round {
        1 + (n.saturating_sub(1) as Round) * self.cfg.delta
    }

    fn event(now: Round, kind: EventKind) -> JudgeEvent {
        JudgeEvent { round: now, kind }
    }

    fn reject(now: Round, sender: PartyId, call: CallKind, reason: impl Into<String>) -> Vec<JudgeEvent> {
        vec![Judge::event(
            now,
            EventKind::CallRejected {
                sender,
                call,
                reason: reason.into(),
            },
        )]
    }

    pub fn on_create(&mut self, bank: &mut Balances, sender: PartyId, genesis_sig: &Signature, now: Round) -> Vec<JudgeEvent> {
        if !self.cfg.parties.contains(&sender) {
            return Judge::reject(now, sender, CallKind::Create, "unknown party");
        }
        if self.status != ChannelStatus::Idle {
            return Judge::reject(now, sender, CallKind::Create, "channel already created");
        }
        let Some(pk) = self.cfg.pubkeys.get(sender.index()) else {
            return Judge::reject(now, sender, CallKind::Create, "no public key");
        };
        if !crypto::verify_sig(pk, &self.genesis_bytes, genesis_sig) {
            return Judge::reject(now, sender, CallKind::Create, "bad genesis signature");
        }
        let window = self.quorum_window(self.cfg.parties.len());
        let w = self.create_waiting.get_or_insert_with(|| Window {
            members: BTreeSet::new(),
            deadline: now + window,
        });
        if !w.members.insert(sender) {
            return Vec::new();
        }
        self.create_sigs.insert(sender, *genesis_sig);
        if w.members.len() < self.cfg.parties.len() {
            return Vec::new();
        }

        let d = self.cfg.deposit;
        if let Some(poor) = self.cfg.parties.iter().find(|p| bank.get(**p).is_none_or(|b| b < d)) {
            let poor = *poor;
            self.create_waiting = None;
            self.create_sigs.clear();
            return Judge::reject(now, poor, CallKind::Create, "insufficient balance for deposit");
        }
        for p in &self.cfg.parties {
            bank.update_balance(*p, -(d.0 as i64)).expect("balance checked");
            self.deposits.insert(*p, d);
        }
        self.parties = self.cfg.parties.iter().copied().collect();
        self.status = ChannelStatus::Created;
        self.create_waiting = None;
        let mut genesis = (*self.genesis_unsigned).clone();
        genesis.signatures = std::mem::take(&mut self.create_sigs);
        self.genesis = Some(Arc::new(genesis));
        vec![Judge::event(now, EventKind::ChannelCreated)]
    }

    pub fn on_state_submit(
        &mut self,
        bank: &mut Balances,
        sender: PartyId,
        target: Option<PartyId>,
        version: u32,
        state: ChannelState,
        proof: &Proof,
        now: Round,
    ) -> Vec<JudgeEvent> {
        let kind = if target.is_some() {
            CallKind::StateSubmitEliminate
        } else {
            CallKind::StateSubmit
        };
        if self.status != ChannelStatus::Created {
            return Judge::reject(now, sender, kind, "channel not open");
        }
        if !self.parties.contains(&sender) {
            return Judge::reject(now, sender, kind, "sender not in channel");
        }
        let mut events = Vec::new();

        if let Some(t) = target {
            if t != sender && self.parties.contains(&t) {
                let window = (self.parties.len().saturating_sub(2) as Round) * self.cfg.delta;
                self.votes
                    .entry((t, version))
                    .or_insert_with(|| Window {
                        members: BTreeSet::new(),
                        deadline: now + window,
                    })
                    .members
                    .insert(sender);
                events.extend(self.settle_votes(bank, now));
            }
        }

        if version as i64 <= self.best_version {
            return events;
        }
        if state.version != version {
            events.extend(Judge::reject(now, sender, kind, "version does not match state"));
            return events;
        }
        if !state.signed_by_all(&self.parties, &self.cfg.pubkeys) {
            events.extend(Judge::reject(now, sender, kind, "missing or invalid signatures"));
            return events;
        }
        let ctx = VerifyContext {
            economy: &self.cfg.economy,
            pubkeys: &self.cfg.pubkeys,
            gamma: self.cfg.gamma,
            genesis_parties: &self.cfg.parties,
        };
        if !auction::verify_state(&state, proof, &ctx) {
            events.extend(Judge::reject(now, sender, kind, "state does not verify"));
            return events;
        }
        let deadline = now + self.cfg.dispute_window;
        self.best_version = version as i64;
        self.state = Some(Arc::new(state));
        self.dispute_deadline = Some(deadline);
        self.accepted.push(version);
        events.push(Judge::event(
            now,
            EventKind::DisputeOpened {
                by: sender,
                version,
                deadline,
            },
        ));
        events
    }

    /// Removes every target whose votes now cover all other parties.
    fn settle_votes(&mut self, bank: &mut Balances, now: Round) -> Vec<JudgeEvent> {
        let mut events = Vec::new();
        loop {
            let done = self.votes.iter().find_map(|(&(t, v), w)| {
                let complete = self.parties.iter().all(|p| *p == t || w.members.contains(p));
                complete.then_some((t, v))
            });
            let Some((target, version)) = done else { break };
            self.votes.remove(&(target, version));
            if !self.parties.contains(&target) {
                continue;
            }
            self.parties.remove(&target);
            let d = self.deposits.remove(&target).unwrap_or_default();
            let refund = ((d.0 as f64) * self.cfg.refund_fraction.clamp(0.0, 1.0)).floor() as u64;
            if refund > 0 {
                bank.update_balance(target, refund as i64).expect("refund to known party");
            }
            self.forfeit_pool += d.0 - refund;
            self.votes.retain(|(t, _), _| *t != target);
            events.push(Judge::event(
                now,
                EventKind::PartyRemoved {
                    party: target,
                    reason: RemovalReason::Eliminated,
                },
            ));
        }
        events.extend(self.try_close(bank, now));
        events
    }

    pub fn on_revoke(&mut self, bank: &mut Balances, sender: PartyId, now: Round) -> Vec<JudgeEvent> {
        if self.status != ChannelStatus::Created {
            return Judge::reject(now, sender, CallKind::Revoke, "channel not open");
        }
        if !self.parties.remove(&sender) {
            return Judge::reject(now, sender, CallKind::Revoke, "sender not in channel");
        }
        let d = self.deposits.remove(&sender).unwrap_or_default();
        bank.update_balance(sender, d.0 as i64).expect("refund to known party");
        self.votes.retain(|(t, _), _| *t != sender);
        let mut events = vec![Judge::event(
            now,
            EventKind::PartyRemoved {
                party: sender,
                reason: RemovalReason::Revoked,
            },
        )];
        events.extend(self.settle_votes(bank, now));
        events
    }

    pub fn on_close(&mut self, bank: &mut Balances, sender: PartyId, now: Round) -> Vec<JudgeEvent> {
        if self.status != ChannelStatus::Created {
            return Judge::reject(now, sender, CallKind::Close, "channel not open");
        }
        if !self.parties.contains(&sender) {
            return Judge::reject(now, sender, CallKind::Close, "sender not in channel");
        }
        if self.in_dispute() {
            return Judge::reject(now, sender, CallKind::Close, "dispute in progress");
        }
        let window = self.quorum_window(self.parties.len());
        self.close_waiting
            .get_or_insert_with(|| Window {
                members: BTreeSet::new(),
                deadline: now + window,
            })
            .members
            .insert(sender);
        self.try_close(bank, now)
    }

    fn try_close(&mut self, bank: &mut Balances, now: Round) -> Vec<JudgeEvent> {
        let Some(w) = &self.close_waiting else {
            return Vec::new();
        };
        if self.in_dispute() || !self.parties.iter().all(|p| w.members.contains(p)) || self.parties.is_empty() {
            return Vec::new();
        }
        let n = self.parties.len() as u64;
        let share = self.forfeit_pool / n;
        let mut remainder = self.forfeit_pool % n;
        let mut payouts = Vec::with_capacity(self.parties.len());
        for p in &self.parties {
            let mut pay = self.deposits.get(p).copied().unwrap_or_default().0 + share;
            if remainder > 0 {
                pay += 1;
                remainder -= 1;
            }
            bank.update_balance(*p, pay as i64).expect("payout to known party");
            payouts.push((*p, Amount(pay)));
        }
        self.deposits.clear();
        self.forfeit_pool = 0;
        self.close_waiting = None;
        self.status = ChannelStatus::Closed;
        vec![Judge::event(now, EventKind::ChannelClosed { payouts })]
    }
}

impl Contract for Judge {
    type Event = JudgeEvent;

    fn gas_for(&self, payload: &[u8], gas: &GasTable) -> u64 {
        match call_kind(payload) {
            CallKind::Create => gas.create_tx,
            CallKind::StateSubmit => gas.state_submit_tx,
            CallKind::StateSubmitEliminate => gas.state_submit_eliminate_tx,
            CallKind::Revoke => gas.revoke_tx,
            CallKind::Close => gas.close_tx,
            CallKind::Malformed => 0,
        }
    }

    fn call(&mut self, bank: &mut Balances, sender: PartyId, payload: &[u8], now: Round) -> Vec<JudgeEvent> {
        match decode_call(payload) {
            Some(JudgeCall::Create { genesis_sig }) => self.on_create(bank, sender, &genesis_sig, now),
            Some(JudgeCall::StateSubmit {
                target,
                version,
                state,
                proof,
            }) => self.on_state_submit(bank, sender, target, version, state, &proof, now),
            Some(JudgeCall::Revoke) => self.on_revoke(bank, sender, now),
            Some(JudgeCall::Close) => self.on_close(bank, sender, now),
            None => Judge::reject(now, sender, CallKind::Malformed, "malformed payload"),
        }
    }

    fn tick(&mut self, bank: &mut Balances, now: Round) -> Vec<JudgeEvent> {
        let mut events = Vec::new();
        if self.dispute_deadline.is_some_and(|d| now >= d) {
            self.dispute_deadline = None;
            events.push(Judge::event(
                now,
                EventKind::DisputeClosed {
                    version: self.best_version.max(0) as u32,
                },
            ));
            events.extend(self.try_close(bank, now));
        }
        if self.create_waiting.as_ref().is_some_and(|w| now >= w.deadline) {
            self.create_waiting = None;
            self.create_sigs.clear();
            events.push(Judge::event(now, EventKind::CreateExpired));
        }
        if self.close_waiting.as_ref().is_some_and(|w| now >= w.deadline) {
            self.close_waiting = None;
            events.push(Judge::event(now, EventKind::CloseExpired));
        }
        let expired: Vec<(PartyId, u32)> = self
            .votes
            .iter()
            .filter(|(_, w)| now >= w.deadline)
            .map(|(k, _)| *k)
            .collect();
        for (target, version) in expired {
            self.votes.remove(&(target, version));
            events.push(Judge::event(now, EventKind::EliminationExpired { target, version }));
        }
        events
    }

    fn escrow_total(&self) -> u128 {
        self.deposits.values().map(|a| a.0 as u128).sum::<u128>() + self.forfeit_pool as u128
    }
}
