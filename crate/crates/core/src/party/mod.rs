//! One party's off-chain protocol: channel creation, the per-iteration
//! commit / reveal / compute / verify exchange, disputes, elimination votes,
//! revocation and close.
//!
//! Iteration `k` started at round `s` runs on a fixed schedule:
//!
//! | round | initiator (= designated computer)  | everyone else                      |
//! |-------|------------------------------------|------------------------------------|
//! | s     | commit                             |                                    |
//! | s+1   |                                    | commit on the initiator's commit   |
//! | s+2   | all commits in? reveal             | all commits in?                    |
//! | s+3   |                                    | reveal on the initiator's reveal   |
//! | s+4   | all reveals valid? broadcast G_k   | all reveals valid? compute G_k     |
//! | s+5   |                                    | G_k matches? broadcast Verified    |
//! | s+6   | all signatures in: G_k is final    | all signatures in: G_k is final    |
//!
//! Any check that fails blames one party and submits the latest signed state
//! to the Judge with an elimination vote against it.

pub mod message;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction::{self, BidProfile, ChannelState, Economy, Mechanism, Proof, SignedReveal};
use crate::crypto::{self, Commitment, KeyPair, Opening, PublicKey, Signature, NONCE_LEN};
use crate::judge::{self, CallKind, EventKind, Judge, JudgeEvent, RemovalReason};
use crate::units::{PartyId, Round};
use message::{Body, OffChainMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComputerPolicy {
    #[default]
    RoundRobin,
    SeededRandom,
}

/// The party that initiates iteration `k` and computes its state.
pub fn designated_computer(policy: ComputerPolicy, seed: u64, k: u32, active: &[PartyId]) -> PartyId {
    let n = active.len() as u64;
    let idx = match policy {
        ComputerPolicy::RoundRobin => (k as u64).saturating_sub(1) % n,
        ComputerPolicy::SeededRandom => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            rng.random_range(0..n)
        }
    };
    active[idx as usize]
}

/// Settings every node in a channel shares.
#[derive(Debug, Clone)]
pub struct NodeContext {
    pub parties: Vec<PartyId>,
    pub pubkeys: Arc<Vec<PublicKey>>,
    pub economy: Arc<Economy>,
    pub mechanism: Mechanism,
    pub delta: Round,
    pub computer_policy: ComputerPolicy,
    pub seed: u64,
}

/// A pending ledger call as observers see it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingCall {
    pub sender: PartyId,
    pub kind: CallKind,
    pub submit: Option<(Option<PartyId>, u32)>,
    pub submit_round: Round,
}

/// What a node learns from one read of the chain: the Judge as of the end of
/// `round`, the calls still pending, and every event so far.
#[derive(Debug, Clone)]
pub struct ChainView {
    pub round: Round,
    pub judge: Judge,
    pub pending: Vec<PendingCall>,
    pub events: Arc<Vec<JudgeEvent>>,
}

impl ChainView {
    fn pending_submit_at_least(&self, version: u32) -> bool {
        self.pending
            .iter()
            .any(|c| matches!(c.submit, Some((_, v)) if v >= version))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "input", rename_all = "snake_case")]
pub enum EnvInput {
    Create,
    BestResponse { iteration: u32 },
    Revoke,
    Close,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "output", rename_all = "snake_case")]
pub enum EnvOutput {
    Created,
    IterationComplete { iteration: u32, ne: bool },
    DisputeRaised { iteration: u32, against: Option<PartyId> },
    /// Ready to (re)run `iteration` after the party set changed.
    Resumed { iteration: u32 },
    CloseRefused,
    Revoked,
    Eliminated,
    Closed,
}

#[derive(Debug, Clone)]
pub enum Action {
    Broadcast { to: Vec<PartyId>, msg: Arc<OffChainMessage> },
    Tx(Vec<u8>),
    Output(EnvOutput),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NodeError {
    #[error("{input:?} is not legal in phase {phase}")]
    IllegalInput { input: EnvInput, phase: Phase },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    AwaitingInitiator,
    Committed,
    Revealed,
    AwaitingG,
    Verifying,
    Disputing,
    Halted,
    Closed,
}

impl Phase {
    pub fn code(self) -> char {
        match self {
            Phase::Idle => 'I',
            Phase::AwaitingInitiator => 'A',
            Phase::Committed => 'C',
            Phase::Revealed => 'R',
            Phase::AwaitingG => 'G',
            Phase::Verifying => 'V',
            Phase::Disputing => 'D',
            Phase::Halted => 'H',
            Phase::Closed => 'X',
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Everything collected for the iteration in progress.
#[derive(Debug)]
struct IterationRun {
    k: u32,
    start: Round,
    initiator: PartyId,
    parties: Vec<PartyId>,
    committed: bool,
    commits_closed: bool,
    revealed: bool,
    my_opening: Option<Opening>,
    commits: BTreeMap<PartyId, Commitment>,
    reveals: BTreeMap<PartyId, SignedReveal>,
    invalid: BTreeSet<PartyId>,
    proposal: Option<Arc<ChannelState>>,
    best_response: Option<Arc<OffChainMessage>>,
    verified: BTreeMap<PartyId, Arc<OffChainMessage>>,
    signatures: BTreeMap<PartyId, Signature>,
}

#[derive(Debug, Clone, Copy)]
struct DisputeWait {
    target: Option<PartyId>,
    iteration: u32,
    submitted: Round,
}

#[derive(Debug)]
pub struct PartyNode {
    id: PartyId,
    keys: KeyPair,
    ctx: Arc<NodeContext>,
    rng: ChaCha20Rng,
    local_parties: Vec<PartyId>,
    latest: Option<Arc<ChannelState>>,
    latest_proof: Proof,
    archive: BTreeMap<u32, (Arc<ChannelState>, Proof)>,
    phase: Phase,
    run: Option<IterationRun>,
    dispute: Option<DisputeWait>,
    watchers: Vec<(Round, u32)>,
    view: Option<Arc<ChainView>>,
    event_cursor: usize,
    sent_create: bool,
    created: bool,
    sent_close: bool,
}

impl PartyNode {
    pub fn new(id: PartyId, keys: KeyPair, ctx: Arc<NodeContext>) -> Self {
        let rng = ChaCha20Rng::seed_from_u64(ctx.seed ^ (id.0 as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03));
        PartyNode {
            id,
            keys,
            local_parties: ctx.parties.clone(),
            ctx,
            rng,
            latest: None,
            latest_proof: Proof::default(),
            archive: BTreeMap::new(),
            phase: Phase::Idle,
            run: None,
            dispute: None,
            watchers: Vec::new(),
            view: None,
            event_cursor: 0,
            sent_create: false,
            created: false,
            sent_close: false,
        }
    }

    pub fn id(&self) -> PartyId {
        self.id
    }

    pub fn keys(&self) -> &KeyPair {
        &self.keys
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn local_parties(&self) -> &[PartyId] {
        &self.local_parties
    }

    pub fn latest_state(&self) -> Option<&Arc<ChannelState>> {
        self.latest.as_ref()
    }

    pub fn latest_proof(&self) -> &Proof {
        &self.latest_proof
    }

    /// A finalized state and its proof, by version.
    pub fn archived(&self, version: u32) -> Option<&(Arc<ChannelState>, Proof)> {
        self.archive.get(&version)
    }

    fn peers(&self, parties: &[PartyId]) -> Vec<PartyId> {
        parties.iter().copied().filter(|p| *p != self.id).collect()
    }

    fn broadcast(&self, parties: &[PartyId], iteration: u32, body: Body) -> Action {
        Action::Broadcast {
            to: self.peers(parties),
            msg: Arc::new(OffChainMessage::new(&self.keys, iteration, self.id, body)),
        }
    }

    fn in_channel(&self) -> bool {
        self.created && !matches!(self.phase, Phase::Halted | Phase::Closed)
    }

    pub fn handle_env(&mut self, input: EnvInput, now: Round) -> Result<Vec<Action>, NodeError> {
        let illegal = NodeError::IllegalInput {
            input,
            phase: self.phase,
        };
        match input {
            EnvInput::Create => {
                if self.sent_create || self.created {
                    return Err(illegal);
                }
                self.sent_create = true;
                Ok(vec![self.create_tx()])
            }
            EnvInput::BestResponse { iteration } => {
                let view_dispute = self.view.as_ref().is_some_and(|v| v.judge.in_dispute());
                let expected = self.latest.as_ref().map(|s| s.version + 1);
                if !self.in_channel() || self.phase != Phase::Idle || view_dispute || expected != Some(iteration) {
                    return Err(illegal);
                }
                Ok(self.start_iteration(iteration, now))
            }
            EnvInput::Revoke => {
                if !self.in_channel() {
                    return Err(illegal);
                }
                self.run = None;
                self.phase = Phase::Halted;
                Ok(vec![Action::Tx(judge::encode_revoke())])
            }
            EnvInput::Close => {
                if !self.in_channel() || self.run.is_some() {
                    return Err(illegal);
                }
                if self.view.as_ref().is_some_and(|v| v.judge.in_dispute()) {
                    return Ok(vec![Action::Output(EnvOutput::CloseRefused)]);
                }
                self.sent_close = true;
                Ok(vec![Action::Tx(judge::encode_close())])
            }
        }
    }

    fn create_tx(&self) -> Action {
        let genesis = auction::initial_state(&self.ctx.parties);
        Action::Tx(judge::encode_create(&crypto::sign(&self.keys, &genesis.encode())))
    }

    fn start_iteration(&mut self, k: u32, now: Round) -> Vec<Action> {
        let parties = self.local_parties.clone();
        let initiator = designated_computer(self.ctx.computer_policy, self.ctx.seed, k, &parties);
        self.run = Some(IterationRun {
            k,
            start: now,
            initiator,
            parties,
            committed: false,
            commits_closed: false,
            revealed: false,
            my_opening: None,
            commits: BTreeMap::new(),
            reveals: BTreeMap::new(),
            invalid: BTreeSet::new(),
            proposal: None,
            best_response: None,
            verified: BTreeMap::new(),
            signatures: BTreeMap::new(),
        });
        if initiator == self.id {
            self.commit()
        } else {
            self.phase = Phase::AwaitingInitiator;
            Vec::new()
        }
    }

    fn commit(&mut self) -> Vec<Action> {
        let bid = self
            .latest
            .as_ref()
            .and_then(|s| s.response(self.id))
            .unwrap_or_default();
        let mut nonce = [0u8; NONCE_LEN];
        self.rng.fill_bytes(&mut nonce);
        let opening = Opening::new(bid.to_bytes().to_vec(), nonce);
        let c = crypto::commit(&opening.message, &opening.nonce).expect("nonce has the right length");
        let run = self.run.as_mut().expect("commit within an iteration");
        run.my_opening = Some(opening);
        run.commits.insert(self.id, c);
        run.committed = true;
        let (parties, k) = (run.parties.clone(), run.k);
        self.phase = Phase::Committed;
        vec![self.broadcast(&parties, k, Body::Commit(c))]
    }

    fn reveal(&mut self) -> Vec<Action> {
        let run = self.run.as_mut().expect("reveal within an iteration");
        let opening = run.my_opening.clone().expect("revealing after committing");
        run.revealed = true;
        let (parties, k) = (run.parties.clone(), run.k);
        let action = self.broadcast(&parties, k, Body::Reveal(opening.clone()));
        if let Action::Broadcast { msg, .. } = &action {
            let run = self.run.as_mut().unwrap();
            run.reveals.insert(
                self.id,
                SignedReveal {
                    party: self.id,
                    opening,
                    signature: msg.sender_sig,
                },
            );
        }
        self.phase = Phase::Revealed;
        vec![action]
    }

    /// Processes one off-chain message delivered this round.
    pub fn handle_message(&mut self, msg: &Arc<OffChainMessage>, _now: Round) -> Vec<Action> {
        let id = self.id;
        let Some(run) = self.run.as_mut() else {
            return Vec::new();
        };
        if msg.iteration != run.k
            || msg.sender == id
            || !run.parties.contains(&msg.sender)
            || !msg.sender_sig_valid(&self.ctx.pubkeys)
        {
            return Vec::new();
        }
        let sender = msg.sender;
        match &msg.body {
            Body::Commit(c) => {
                if run.commits_closed {
                    return Vec::new();
                }
                if run.commits.insert(sender, *c).is_some() {
                    run.invalid.insert(sender);
                }
                if sender == run.initiator && !run.committed {
                    return self.commit();
                }
            }
            Body::Reveal(opening) => {
                // No opening is accepted without its commitment.
                let Some(c) = run.commits.get(&sender) else {
                    return Vec::new();
                };
                if run.reveals.contains_key(&sender)
                    || !crypto::verify_commitment(c, opening)
                    || BidProfile::from_bytes(&opening.message).is_none()
                {
                    run.invalid.insert(sender);
                    return Vec::new();
                }
                run.reveals.insert(
                    sender,
                    SignedReveal {
                        party: sender,
                        opening: opening.clone(),
                        signature: msg.sender_sig,
                    },
                );
                if sender == run.initiator && run.commits_closed && !run.revealed && run.committed {
                    return self.reveal();
                }
            }
            Body::BestResponse(..) => {
                if sender != run.initiator || run.best_response.replace(msg.clone()).is_some() {
                    run.invalid.insert(sender);
                }
            }
            Body::Verified(..) => {
                if run.verified.insert(sender, msg.clone()).is_some() {
                    run.invalid.insert(sender);
                }
            }
        }
        Vec::new()
    }

    /// Runs the checks scheduled for round `now`.
    pub fn on_deadlines(&mut self, now: Round) -> Vec<Action> {
        let mut actions = self.run_watchers(now);
        let Some(run) = self.run.as_ref() else {
            return actions;
        };
        let offset = now.saturating_sub(run.start);
        actions.extend(match offset {
            2 => self.commit_deadline(now),
            4 => self.reveal_deadline(now),
            5 => self.response_deadline(now),
            6 => self.verified_deadline(now),
            _ => Vec::new(),
        });
        actions
    }

    /// Picks who to blame: a missing initiator first, then the lowest index
    /// among the missing and the invalid.
    fn blame(&self, missing: &BTreeSet<PartyId>) -> Option<PartyId> {
        let run = self.run.as_ref()?;
        if run.initiator != self.id && missing.contains(&run.initiator) {
            return Some(run.initiator);
        }
        missing
            .iter()
            .chain(run.invalid.iter())
            .filter(|p| **p != self.id)
            .min()
            .copied()
    }

    fn missing(&self, have: impl Fn(&PartyId) -> bool) -> BTreeSet<PartyId> {
        self.run
            .as_ref()
            .map(|r| r.parties.iter().copied().filter(|p| !have(p)).collect())
            .unwrap_or_default()
    }

    fn commit_deadline(&mut self, now: Round) -> Vec<Action> {
        let run = self.run.as_mut().unwrap();
        run.commits_closed = true;
        let commits = run.commits.keys().copied().collect::<BTreeSet<_>>();
        let missing = self.missing(|p| commits.contains(p));
        if let Some(target) = self.blame(&missing) {
            return self.dispute(Some(target), now);
        }
        if self.run.as_ref().unwrap().initiator == self.id {
            return self.reveal();
        }
        Vec::new()
    }

    fn reveal_deadline(&mut self, now: Round) -> Vec<Action> {
        let run = self.run.as_ref().unwrap();
        let revealed = run.reveals.keys().copied().collect::<BTreeSet<_>>();
        let missing = self.missing(|p| revealed.contains(p));
        if let Some(target) = self.blame(&missing) {
            return self.dispute(Some(target), now);
        }
        let bids: Vec<(PartyId, BidProfile)> = run
            .reveals
            .values()
            .map(|r| (r.party, r.bid().expect("checked on receipt")))
            .collect();
        let prev = self.latest.as_ref().expect("iterating on a signed state");
        let proposal = match auction::best_response(prev, &bids, &self.ctx.economy, self.ctx.mechanism.gamma) {
            Ok(s) => Arc::new(s),
            Err(_) => {
                let target = run.initiator;
                return self.dispute(Some(target), now);
            }
        };
        let run = self.run.as_mut().unwrap();
        run.proposal = Some(proposal.clone());
        if run.initiator == self.id {
            let sig = crypto::sign(&self.keys, &proposal.encode());
            run.signatures.insert(self.id, sig);
            let (parties, k) = (run.parties.clone(), run.k);
            self.phase = Phase::Verifying;
            vec![self.broadcast(&parties, k, Body::BestResponse(proposal, sig))]
        } else {
            self.phase = Phase::AwaitingG;
            Vec::new()
        }
    }

    fn response_deadline(&mut self, now: Round) -> Vec<Action> {
        let run = self.run.as_ref().unwrap();
        if run.initiator == self.id {
            return Vec::new();
        }
        let proposal = run.proposal.as_ref().expect("computed at the reveal deadline");
        let ok = match &run.best_response {
            Some(msg) => match &msg.body {
                Body::BestResponse(state, _) => state.same_content(proposal) && msg.state_sig_valid(&self.ctx.pubkeys),
                _ => false,
            },
            None => false,
        };
        if !ok || run.invalid.contains(&run.initiator) {
            let target = run.initiator;
            return self.dispute(Some(target), now);
        }
        let computer_sig = match &run.best_response.as_ref().unwrap().body {
            Body::BestResponse(_, sig) => *sig,
            _ => unreachable!(),
        };
        let proposal = proposal.clone();
        let sig = crypto::sign(&self.keys, &proposal.encode());
        let run = self.run.as_mut().unwrap();
        run.signatures.insert(run.initiator, computer_sig);
        run.signatures.insert(self.id, sig);
        let (parties, k) = (run.parties.clone(), run.k);
        self.phase = Phase::Verifying;
        vec![self.broadcast(&parties, k, Body::Verified(proposal, sig))]
    }

    fn verified_deadline(&mut self, now: Round) -> Vec<Action> {
        let run = self.run.as_mut().unwrap();
        let proposal = run.proposal.clone().expect("computed at the reveal deadline");
        for (p, msg) in &run.verified {
            let ok = match &msg.body {
                Body::Verified(state, sig) if state.same_content(&proposal) => {
                    msg.state_sig_valid(&self.ctx.pubkeys).then_some(*sig)
                }
                _ => None,
            };
            match ok {
                Some(sig) if *p != run.initiator => {
                    run.signatures.insert(*p, sig);
                }
                _ => {
                    run.invalid.insert(*p);
                }
            }
        }
        let signed = run.signatures.keys().copied().collect::<BTreeSet<_>>();
        let missing = self.missing(|p| signed.contains(p));
        if let Some(target) = self.blame(&missing) {
            return self.dispute(Some(target), now);
        }

        let run = self.run.take().unwrap();
        let mut state = (*proposal).clone();
        state.signatures = run.signatures;
        let bids: Vec<(PartyId, BidProfile)> = run
            .reveals
            .values()
            .map(|r| (r.party, r.bid().expect("checked on receipt")))
            .collect();
        let ne = auction::is_ne(&state, &bids, &self.ctx.economy, self.ctx.mechanism.eps);
        let proof = Proof {
            reveals: run.reveals.into_values().collect(),
            prev_state: self.latest.clone(),
        };
        let state = Arc::new(state);
        self.archive.insert(state.version, (state.clone(), proof.clone()));
        self.latest = Some(state);
        self.latest_proof = proof;
        self.phase = Phase::Idle;
        vec![Action::Output(EnvOutput::IterationComplete { iteration: run.k, ne })]
    }

    /// Submits the latest signed state, voting against `target` if given.
    fn dispute(&mut self, target: Option<PartyId>, now: Round) -> Vec<Action> {
        let iteration = self.run.as_ref().map_or(0, |r| r.k);
        self.run = None;
        let Some(latest) = self.latest.clone() else {
            return Vec::new();
        };
        self.dispute = Some(DisputeWait {
            target,
            iteration,
            submitted: now,
        });
        self.phase = Phase::Disputing;
        vec![
            Action::Tx(judge::encode_state_submit(target, latest.version, &latest, &self.latest_proof)),
            Action::Output(EnvOutput::DisputeRaised {
                iteration,
                against: target,
            }),
        ]
    }

    /// Payload submitting an archived state without a vote, if the version
    /// is known.
    pub fn submit_payload(&self, version: u32) -> Option<Vec<u8>> {
        let (state, proof) = self.archive.get(&version)?;
        Some(judge::encode_state_submit(None, version, state, proof))
    }

    fn run_watchers(&mut self, now: Round) -> Vec<Action> {
        let Some(view) = self.view.clone() else {
            return Vec::new();
        };
        let Some(latest) = self.latest.clone() else {
            return Vec::new();
        };
        let (due, rest): (Vec<_>, Vec<_>) = self.watchers.iter().partition(|(at, _)| *at <= now);
        self.watchers = rest;
        if due.is_empty() || !self.in_channel() {
            return Vec::new();
        }
        if view.judge.best_version() < latest.version as i64 && !view.pending_submit_at_least(latest.version) {
            return vec![Action::Tx(judge::encode_state_submit(
                None,
                latest.version,
                &latest,
                &self.latest_proof,
            ))];
        }
        Vec::new()
    }

    /// Absorbs a chain read: new Judge events, pending calls of peers, and
    /// progress of an outstanding dispute.
    pub fn on_chain_view(&mut self, view: Arc<ChainView>, now: Round) -> Vec<Action> {
        let mut actions = Vec::new();
        let events = view.events.clone();
        self.view = Some(view.clone());
        for e in &events[self.event_cursor.min(events.len())..] {
            actions.extend(self.on_event(e, &view, now));
        }
        self.event_cursor = events.len();

        if !self.created && !self.sent_create && view.pending.iter().any(|c| c.kind == CallKind::Create && c.sender != self.id) {
            self.sent_create = true;
            actions.push(self.create_tx());
        }
        if self.in_channel()
            && !self.sent_close
            && self.run.is_none()
            && !view.judge.in_dispute()
            && view.judge.parties().contains(&self.id)
            && view.pending.iter().any(|c| c.kind == CallKind::Close && c.sender != self.id)
        {
            self.sent_close = true;
            actions.push(Action::Tx(judge::encode_close()));
        }

        if let Some(d) = self.dispute {
            let settled = view.round >= d.submitted + self.ctx.delta
                && !view.judge.in_dispute()
                && d.target.is_none_or(|t| !view.judge.open_vote(t));
            if settled && self.phase == Phase::Disputing {
                self.dispute = None;
                self.local_parties = view.judge.parties().iter().copied().collect();
                self.phase = Phase::Idle;
                actions.push(Action::Output(EnvOutput::Resumed { iteration: d.iteration }));
            }
        }
        actions
    }

    fn on_event(&mut self, e: &JudgeEvent, view: &ChainView, now: Round) -> Vec<Action> {
        match &e.kind {
            EventKind::ChannelCreated => {
                if let Some(g) = view.judge.genesis() {
                    self.created = true;
                    self.latest = Some(g.clone());
                    self.latest_proof = Proof::default();
                    self.archive.insert(0, (g.clone(), Proof::default()));
                    self.local_parties = self.ctx.parties.clone();
                    return vec![Action::Output(EnvOutput::Created)];
                }
            }
            EventKind::CreateExpired => {
                if !self.created {
                    self.sent_create = false;
                }
            }
            EventKind::DisputeOpened { by, version, .. } => {
                let ahead = self.latest.as_ref().is_some_and(|s| s.version > *version);
                if *by != self.id && ahead && self.in_channel() {
                    let rank = self
                        .local_parties
                        .iter()
                        .filter(|p| **p != *by)
                        .position(|p| *p == self.id)
                        .unwrap_or(0) as Round;
                    let version = self.latest.as_ref().unwrap().version;
                    self.watchers.push((now + rank * (self.ctx.delta + 1), version));
                }
            }
            EventKind::PartyRemoved { party, reason } => {
                self.local_parties.retain(|p| p != party);
                if *party == self.id {
                    self.run = None;
                    self.dispute = None;
                    self.phase = Phase::Halted;
                    return vec![Action::Output(match reason {
                        RemovalReason::Revoked => EnvOutput::Revoked,
                        RemovalReason::Eliminated => EnvOutput::Eliminated,
                    })];
                }
                if self.in_channel() && self.phase == Phase::Idle && self.dispute.is_none() {
                    let next = self.latest.as_ref().map_or(1, |s| s.version + 1);
                    return vec![Action::Output(EnvOutput::Resumed { iteration: next })];
                }
            }
            EventKind::ChannelClosed { .. } => {
                if self.created && self.phase != Phase::Closed {
                    let was_member = self.phase != Phase::Halted;
                    self.phase = Phase::Closed;
                    self.run = None;
                    if was_member {
                        return vec![Action::Output(EnvOutput::Closed)];
                    }
                }
            }
            EventKind::CloseExpired => self.sent_close = false,
            EventKind::CallRejected { sender, call, .. } => {
                if *sender == self.id && *call == CallKind::Close {
                    self.sent_close = false;
                }
            }
            EventKind::DisputeClosed { .. } | EventKind::EliminationExpired { .. } => {}
        }
        Vec::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::PartyEcon;
    use crate::crypto::keygen;

    fn ctx(n: u16) -> Arc<NodeContext> {
        let econ = (0..n)
            .map(|i| {
                if i % 2 == 0 {
                    PartyEcon::buyer(10.0, 1.0, 20.0).unwrap()
                } else {
                    PartyEcon::seller(1.0, 20.0).unwrap()
                }
            })
            .collect();
        Arc::new(NodeContext {
            parties: (0..n).map(PartyId).collect(),
            pubkeys: Arc::new((0..n as u64).map(|i| keygen(i).public()).collect()),
            economy: Arc::new(Economy::new(econ)),
            mechanism: Mechanism::default(),
            delta: 3,
            computer_policy: ComputerPolicy::RoundRobin,
            seed: 1,
        })
    }

    fn node(i: u16, c: &Arc<NodeContext>) -> PartyNode {
        PartyNode::new(PartyId(i), keygen(i as u64), c.clone())
    }

    #[test]
    fn round_robin_and_seeded_computer() {
        let active: Vec<PartyId> = (0..4).map(PartyId).collect();
        let picks: Vec<u16> = (1..=6)
            .map(|k| designated_computer(ComputerPolicy::RoundRobin, 0, k, &active).0)
            .collect();
        assert_eq!(picks, vec![0, 1, 2, 3, 0, 1]);
        for k in 1..50 {
            let a = designated_computer(ComputerPolicy::SeededRandom, 9, k, &active);
            assert_eq!(a, designated_computer(ComputerPolicy::SeededRandom, 9, k, &active));
            assert!(active.contains(&a));
        }
    }

    #[test]
    fn create_once() {
        let c = ctx(3);
        let mut n = node(0, &c);
        let actions = n.handle_env(EnvInput::Create, 0).unwrap();
        assert!(matches!(&actions[..], [Action::Tx(p)] if judge::call_kind(p) == CallKind::Create));
        assert!(n.handle_env(EnvInput::Create, 1).is_err());
    }

    #[test]
    fn iteration_input_needs_an_open_channel() {
        let c = ctx(3);
        let mut n = node(1, &c);
        assert!(matches!(
            n.handle_env(EnvInput::BestResponse { iteration: 1 }, 0),
            Err(NodeError::IllegalInput { .. })
        ));
        assert!(n.handle_env(EnvInput::Close, 0).is_err());
    }

    #[test]
    fn reveal_without_commit_is_not_accepted() {
        let c = ctx(3);
        let mut n = node(1, &c);
        n.created = true;
        n.latest = Some(Arc::new(auction::initial_state(&c.parties)));
        assert!(n.handle_env(EnvInput::BestResponse { iteration: 1 }, 10).unwrap().is_empty());
        assert_eq!(n.phase(), Phase::AwaitingInitiator);
        let opening = Opening::new(vec![0; 8], [1; NONCE_LEN]);
        let reveal = Arc::new(OffChainMessage::new(&keygen(0), 1, PartyId(0), Body::Reveal(opening.clone())));
        n.handle_message(&reveal, 11);
        assert!(n.run.as_ref().unwrap().reveals.is_empty());

        let commit = crypto::commit(&opening.message, &opening.nonce).unwrap();
        let commit = Arc::new(OffChainMessage::new(&keygen(0), 1, PartyId(0), Body::Commit(commit)));
        let actions = n.handle_message(&commit, 11);
        assert!(matches!(&actions[..], [Action::Broadcast { msg, to }] if msg.kind() == message::MessageKind::Commit && to.len() == 2));
        assert_eq!(n.phase(), Phase::Committed);
    }

    #[test]
    fn forged_and_foreign_messages_are_dropped() {
        let c = ctx(3);
        let mut n = node(1, &c);
        n.created = true;
        n.latest = Some(Arc::new(auction::initial_state(&c.parties)));
        n.handle_env(EnvInput::BestResponse { iteration: 1 }, 0).unwrap();
        let body = Body::Commit(Commitment([3; 32]));
        let forged = Arc::new(OffChainMessage::new(&keygen(2), 1, PartyId(0), body.clone()));
        assert!(n.handle_message(&forged, 1).is_empty());
        let stale = Arc::new(OffChainMessage::new(&keygen(0), 0, PartyId(0), body));
        assert!(n.handle_message(&stale, 1).is_empty());
        assert!(n.run.as_ref().unwrap().commits.is_empty());
    }

    #[test]
    fn missing_initiator_commit_is_blamed() {
        let c = ctx(3);
        let mut n = node(2, &c);
        n.created = true;
        n.latest = Some(Arc::new(auction::initial_state(&c.parties)));
        n.handle_env(EnvInput::BestResponse { iteration: 1 }, 20).unwrap();
        assert!(n.on_deadlines(21).is_empty());
        let actions = n.on_deadlines(22);
        let tx = actions.iter().find_map(|a| match a {
            Action::Tx(p) => Some(p.clone()),
            _ => None,
        });
        assert_eq!(judge::submit_header(&tx.unwrap()), Some((Some(PartyId(0)), 0)));
        assert_eq!(n.phase(), Phase::Disputing);
    }
}
