//! Synchronous round scheduler. Binds the party nodes, the ledger and the
//! Judge, delivers off-chain messages one round after they are sent, and
//! applies adversary behaviors at corrupted endpoints.
//!
//! Round `r` runs as follows:
//! 1. the ledger advances (confirmations, Judge timers);
//! 2. every node reads the chain as it stood at the end of round `r - 1`,
//!    receives the messages sent in `r - 1`, and runs its scheduled checks;
//! 3. the environment reacts to node outputs with new inputs;
//! 4. outgoing messages are queued for `r + 1` and transactions submitted.

pub mod adversary;
pub mod trace;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::auction::ChannelState;
use crate::crypto::{self, PublicKey};
use crate::judge::{self, CallKind, EventKind, Judge, JudgeConfig, JudgeEvent, RemovalReason};
use crate::ledger::{ConfirmedTx, Ledger};
use crate::metrics::MetricsRecord;
use crate::party::message::OffChainMessage;
use crate::party::{Action, ChainView, EnvInput, EnvOutput, NodeContext, NodeError, PartyNode, PendingCall};
use crate::scenario::{Behavior, Mode, ScenarioConfig};
use crate::units::{Amount, PartyId, Round};
use adversary::Corruption;
use trace::{Delivery, RoundTrace, TxRecord};

#[derive(Error)]
pub enum SimError {
    #[error("no progress after {rounds} rounds")]
    Stalled { rounds: Round, trace: Vec<RoundTrace> },
    #[error("environment issued an illegal input to {party}: {source}")]
    Node {
        party: PartyId,
        #[source]
        source: NodeError,
    },
    #[error("scenario mode is {0:?}, not channel")]
    WrongMode(Mode),
}

impl fmt::Debug for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::Stalled { rounds, trace } => write!(f, "Stalled {{ rounds: {rounds}, trace: <{} rounds> }}", trace.len()),
            SimError::Node { party, source } => write!(f, "Node {{ party: {party}, source: {source:?} }}"),
            SimError::WrongMode(m) => write!(f, "WrongMode({m:?})"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub record_trace: bool,
    pub record_messages: bool,
}

/// A message as it left its sender.
#[derive(Debug, Clone)]
pub struct SentMessage {
    pub round: Round,
    pub to: Vec<PartyId>,
    pub msg: Arc<OffChainMessage>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub metrics: MetricsRecord,
    pub trace: Vec<RoundTrace>,
    pub balances: Vec<Amount>,
    pub judge: Judge,
    pub confirmed: Vec<ConfirmedTx>,
    pub events: Vec<JudgeEvent>,
    pub final_state: Option<Arc<ChannelState>>,
    /// Each node's latest signed state, by party index.
    pub node_states: Vec<Option<Arc<ChannelState>>>,
    pub pubkeys: Arc<Vec<PublicKey>>,
    pub messages: Vec<SentMessage>,
    /// Rounds at which each iteration was started by the environment, in
    /// order; restarts appear twice.
    pub iteration_starts: Vec<(u32, Round)>,
}

/// Key seed of party `i` in a run seeded with `seed`.
pub fn key_seed(seed: u64, i: PartyId) -> u64 {
    seed.wrapping_mul(0x1_0000).wrapping_add(i.0 as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Creating,
    Iterating(u32),
    AwaitingResume(u32),
    Closing { since: Round, issued: bool },
    Done,
}

struct Env {
    stage: Stage,
    fixed: Option<u32>,
    cap: u32,
    revokes: BTreeMap<u32, Vec<PartyId>>,
    reported: BTreeSet<PartyId>,
    ne: bool,
    converged: bool,
    completed: u32,
    close_issued: BTreeSet<PartyId>,
}

impl Env {
    fn is_final(&self, iteration: u32, ne: bool) -> bool {
        match self.fixed {
            Some(f) => iteration >= f,
            None => ne || iteration >= self.cap,
        }
    }
}

pub struct Simulation {
    cfg: ScenarioConfig,
    opts: RunOptions,
    ledger: Ledger<Judge>,
    nodes: Vec<PartyNode>,
    corrupt: Vec<Option<Corruption>>,
    pubkeys: Arc<Vec<PublicKey>>,
    inbox: Vec<Vec<Arc<OffChainMessage>>>,
    events: Arc<Vec<JudgeEvent>>,
    view: Arc<ChainView>,
    env: Env,
    round: Round,
    trace: Vec<RoundTrace>,
    messages: Vec<SentMessage>,
    iteration_starts: Vec<(u32, Round)>,
    msg_count: u64,
    msg_bytes: u64,
    msg_wire_bytes: u64,
    msg_rounds: u64,
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig, opts: RunOptions) -> Result<Self, SimError> {
        if cfg.mode != Mode::Channel {
            return Err(SimError::WrongMode(cfg.mode));
        }
        let parties = cfg.party_ids();
        let keys: Vec<_> = parties.iter().map(|p| crypto::keygen(key_seed(cfg.seed, *p))).collect();
        let pubkeys = Arc::new(keys.iter().map(|k| k.public()).collect::<Vec<_>>());
        let economy = Arc::new(cfg.economy());
        let judge = Judge::new(JudgeConfig {
            parties: parties.clone(),
            pubkeys: pubkeys.clone(),
            economy: economy.clone(),
            gamma: cfg.gamma,
            deposit: cfg.deposit_amount(),
            delta: cfg.delta,
            dispute_window: cfg.dispute_window,
            refund_fraction: cfg.forfeit_refund_fraction,
        });
        let ctx = Arc::new(NodeContext {
            parties: parties.clone(),
            pubkeys: pubkeys.clone(),
            economy,
            mechanism: cfg.mechanism(),
            delta: cfg.delta,
            computer_policy: cfg.computer_policy,
            seed: cfg.seed,
        });
        let nodes = parties
            .iter()
            .zip(keys)
            .map(|(p, k)| PartyNode::new(*p, k, ctx.clone()))
            .collect();
        let mut revokes: BTreeMap<u32, Vec<PartyId>> = BTreeMap::new();
        let corrupt = parties
            .iter()
            .map(|p| match cfg.behavior(*p) {
                Behavior::Honest => None,
                Behavior::RevokeAt { iteration } => {
                    revokes.entry(iteration).or_default().push(*p);
                    None
                }
                b => Some(Corruption::new(b)),
            })
            .collect();
        let ledger = Ledger::new(
            vec![cfg.initial_balance_amount(); parties.len()],
            judge,
            cfg.delta,
            cfg.gas.clone(),
        );
        let events = Arc::new(Vec::new());
        let view = Arc::new(ChainView {
            round: 0,
            judge: ledger.contract().clone(),
            pending: Vec::new(),
            events: events.clone(),
        });
        Ok(Simulation {
            cfg: cfg.clone(),
            opts,
            ledger,
            nodes,
            corrupt,
            pubkeys,
            inbox: vec![Vec::new(); parties.len()],
            events,
            view,
            env: Env {
                stage: Stage::Creating,
                fixed: cfg.fixed_iterations,
                cap: cfg.iteration_cap,
                revokes,
                reported: BTreeSet::new(),
                ne: false,
                converged: false,
                completed: 0,
                close_issued: BTreeSet::new(),
            },
            round: 0,
            trace: Vec::new(),
            messages: Vec::new(),
            iteration_starts: Vec::new(),
            msg_count: 0,
            msg_bytes: 0,
            msg_wire_bytes: 0,
            msg_rounds: 0,
        })
    }

    pub fn round(&self) -> Round {
        self.round
    }

    pub fn nodes(&self) -> &[PartyNode] {
        &self.nodes
    }

    pub fn ledger(&self) -> &Ledger<Judge> {
        &self.ledger
    }

    pub fn is_done(&self) -> bool {
        self.env.stage == Stage::Done
    }

    fn muted(&self, p: PartyId) -> bool {
        self.corrupt[p.index()].as_ref().is_some_and(|c| c.muted)
    }

    /// Parties whose reports the environment waits for.
    fn expected(&self) -> BTreeSet<PartyId> {
        let judge = self.ledger.contract();
        let base: Vec<PartyId> = if judge.parties().is_empty() {
            self.cfg.party_ids()
        } else {
            judge.parties().iter().copied().collect()
        };
        base.into_iter().filter(|p| !self.muted(*p)).collect()
    }

    fn intercept(&mut self, i: usize, actions: Vec<Action>) -> Vec<Action> {
        let Some(c) = self.corrupt[i].as_mut() else {
            return actions;
        };
        let env = &self.env;
        c.intercept(&self.nodes[i], actions, |k, ne| env.is_final(k, ne))
    }

    fn issue(&mut self, p: PartyId, input: EnvInput, rt: &mut Option<RoundTrace>, out: &mut Vec<(PartyId, Action)>) -> Result<(), SimError> {
        let i = p.index();
        if let Some(c) = self.corrupt[i].as_mut() {
            if !c.admit(&input) {
                return Ok(());
            }
        }
        if let Some(rt) = rt.as_mut() {
            rt.inputs.push((p, input));
        }
        let actions = self.nodes[i]
            .handle_env(input, self.round)
            .map_err(|source| SimError::Node { party: p, source })?;
        let actions = self.intercept(i, actions);
        out.extend(actions.into_iter().map(|a| (p, a)));
        Ok(())
    }

    fn start_iteration(&mut self, k: u32, rt: &mut Option<RoundTrace>, out: &mut Vec<(PartyId, Action)>) -> Result<(), SimError> {
        self.env.reported.clear();
        if let Some(revokers) = self.env.revokes.remove(&k) {
            for p in revokers {
                self.issue(p, EnvInput::Revoke, rt, out)?;
            }
            self.env.stage = Stage::AwaitingResume(k);
            return Ok(());
        }
        self.env.stage = Stage::Iterating(k);
        self.iteration_starts.push((k, self.round));
        for p in self.expected() {
            self.issue(p, EnvInput::BestResponse { iteration: k }, rt, out)?;
        }
        Ok(())
    }

    fn enter_closing(&mut self) {
        self.env.reported.clear();
        self.env.stage = Stage::Closing {
            since: self.round,
            issued: false,
        };
    }

    fn step_env(
        &mut self,
        outputs: &[(PartyId, EnvOutput)],
        rt: &mut Option<RoundTrace>,
        out: &mut Vec<(PartyId, Action)>,
    ) -> Result<(), SimError> {
        let expected = self.expected();
        if self.env.stage == Stage::Creating && self.round == 0 {
            for p in expected.iter().copied() {
                self.issue(p, EnvInput::Create, rt, out)?;
            }
        }
        for (p, o) in outputs {
            match (self.env.stage, *o) {
                (_, EnvOutput::DisputeRaised { iteration, .. }) if !matches!(self.env.stage, Stage::Closing { .. } | Stage::Done) => {
                    if self.env.stage != Stage::AwaitingResume(iteration) {
                        self.env.reported.clear();
                    }
                    self.env.stage = Stage::AwaitingResume(iteration);
                }
                (Stage::Creating, EnvOutput::Created)
                | (Stage::Closing { .. }, EnvOutput::Closed) => {
                    self.env.reported.insert(*p);
                }
                (Stage::Iterating(k), EnvOutput::IterationComplete { iteration, ne }) if iteration == k => {
                    self.env.reported.insert(*p);
                    self.env.ne = ne;
                }
                (Stage::AwaitingResume(k), EnvOutput::Resumed { iteration }) if iteration == k => {
                    self.env.reported.insert(*p);
                }
                (Stage::Closing { since, .. }, EnvOutput::CloseRefused) => {
                    self.env.stage = Stage::Closing { since, issued: false };
                }
                _ => {}
            }
        }
        let all = !expected.is_empty() && expected.is_subset(&self.env.reported);
        match self.env.stage {
            Stage::Creating if all => {
                if self.env.fixed == Some(0) {
                    self.enter_closing();
                } else {
                    self.start_iteration(1, rt, out)?;
                }
            }
            Stage::Iterating(k) if all => {
                self.env.completed = k;
                if self.env.is_final(k, self.env.ne) {
                    self.env.converged = self.env.ne;
                    self.enter_closing();
                } else {
                    self.start_iteration(k + 1, rt, out)?;
                }
            }
            Stage::AwaitingResume(k) if all => {
                self.env.reported.clear();
                self.env.stage = Stage::Iterating(k);
                self.iteration_starts.push((k, self.round));
                for p in expected {
                    self.issue(p, EnvInput::BestResponse { iteration: k }, rt, out)?;
                }
            }
            Stage::Closing { since, issued: false } if self.round > since => {
                let view = &self.view;
                let busy = view.judge.in_dispute() || view.pending.iter().any(|c| c.submit.is_some());
                if !busy {
                    self.env.stage = Stage::Closing { since, issued: true };
                    self.env.close_issued = expected.clone();
                    for p in expected {
                        self.issue(p, EnvInput::Close, rt, out)?;
                    }
                }
            }
            Stage::Closing { issued: true, .. } => {
                let waiting: BTreeSet<PartyId> = self.env.close_issued.iter().copied().filter(|p| !self.muted(*p)).collect();
                if waiting.is_subset(&self.env.reported) {
                    self.env.stage = Stage::Done;
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn observe_close_failures(&mut self, events: &[JudgeEvent]) {
        let Stage::Closing { since, issued: true } = self.env.stage else {
            return;
        };
        let failed = events.iter().any(|e| match &e.kind {
            EventKind::CloseExpired => true,
            EventKind::CallRejected { call, .. } => *call == CallKind::Close,
            _ => false,
        });
        if failed {
            self.env.stage = Stage::Closing { since, issued: false };
        }
    }

    /// Runs one round.
    pub fn step(&mut self) -> Result<(), SimError> {
        let r = self.round;
        let mut rt = self.opts.record_trace.then(|| RoundTrace {
            round: r,
            delivered: Vec::new(),
            submitted: Vec::new(),
            confirmed: Vec::new(),
            events: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            phases: String::new(),
            best_version: -1,
            in_dispute: false,
            total_value: 0,
        });

        if r > 0 {
            let fx = self.ledger.advance_round();
            if let Some(rt) = rt.as_mut() {
                rt.confirmed = fx.confirmed.iter().map(tx_record).collect();
                rt.events = fx.events.clone();
            }
            self.observe_close_failures(&fx.events);
            if !fx.events.is_empty() {
                Arc::make_mut(&mut self.events).extend(fx.events);
            }
        }

        let inbox = std::mem::replace(&mut self.inbox, vec![Vec::new(); self.nodes.len()]);
        let mut outbox: Vec<(PartyId, Action)> = Vec::new();
        let mut delivered_any = false;
        for (i, mut msgs) in inbox.into_iter().enumerate() {
            let p = PartyId(i as u16);
            let actions = self.nodes[i].on_chain_view(self.view.clone(), r);
            let mut actions = self.intercept(i, actions);
            msgs.sort_by_key(|m| m.sender);
            for m in &msgs {
                delivered_any = true;
                self.msg_count += 1;
                self.msg_bytes += m.body_len() as u64;
                self.msg_wire_bytes += m.wire_len() as u64;
                if let Some(rt) = rt.as_mut() {
                    rt.delivered.push(Delivery {
                        from: m.sender,
                        to: p,
                        kind: m.kind(),
                        iteration: m.iteration,
                        sent_round: r - 1,
                        body_bytes: m.body_len() as u32,
                    });
                }
                let a = self.nodes[i].handle_message(m, r);
                actions.extend(self.intercept(i, a));
            }
            let a = self.nodes[i].on_deadlines(r);
            actions.extend(self.intercept(i, a));
            outbox.extend(actions.into_iter().map(|a| (p, a)));
        }
        if delivered_any {
            self.msg_rounds += 1;
        }

        let outputs: Vec<(PartyId, EnvOutput)> = outbox
            .iter()
            .filter_map(|(p, a)| match a {
                Action::Output(o) => Some((*p, *o)),
                _ => None,
            })
            .collect();
        if let Some(rt) = rt.as_mut() {
            rt.outputs = outputs.clone();
        }
        self.step_env(&outputs, &mut rt, &mut outbox)?;

        let n = self.nodes.len();
        for (p, a) in outbox {
            match a {
                Action::Broadcast { to, msg } => {
                    for t in &to {
                        // Unknown recipients are dropped.
                        if t.index() < n {
                            self.inbox[t.index()].push(msg.clone());
                        }
                    }
                    if self.opts.record_messages {
                        self.messages.push(SentMessage { round: r, to, msg });
                    }
                }
                Action::Tx(payload) => {
                    let tx = self.ledger.submit_tx(p, payload);
                    if let Some(rt) = rt.as_mut() {
                        rt.submitted.push(TxRecord {
                            id: tx.id,
                            sender: tx.sender,
                            call: judge::call_kind(&tx.call),
                            gas: tx.gas,
                            submit_round: tx.submit_round,
                            block: None,
                        });
                    }
                }
                Action::Output(_) => {}
            }
        }

        let judge = self.ledger.contract();
        if let Some(mut rt) = rt {
            rt.phases = self.nodes.iter().map(|n| n.phase().code()).collect();
            rt.best_version = judge.best_version();
            rt.in_dispute = judge.in_dispute();
            rt.total_value = self.ledger.total_value() as u64;
            self.trace.push(rt);
        }
        self.view = Arc::new(ChainView {
            round: r,
            judge: judge.clone(),
            pending: self
                .ledger
                .read_pending()
                .map(|t| PendingCall {
                    sender: t.sender,
                    kind: judge::call_kind(&t.call),
                    submit: judge::submit_header(&t.call),
                    submit_round: t.submit_round,
                })
                .collect(),
            events: self.events.clone(),
        });
        self.round += 1;
        Ok(())
    }

    /// Steps until the channel closes or the round cap is hit.
    pub fn run(mut self) -> Result<RunOutput, SimError> {
        while !self.is_done() {
            if self.round >= self.cfg.round_cap {
                return Err(SimError::Stalled {
                    rounds: self.round,
                    trace: self.trace,
                });
            }
            self.step()?;
        }
        Ok(self.finish())
    }

    fn finish(self) -> RunOutput {
        let cfg = &self.cfg;
        let judge = self.ledger.contract().clone();
        let confirmed = self.ledger.confirmed_log().to_vec();
        let mut tx_by_kind = BTreeMap::new();
        let mut gas_by_kind = BTreeMap::new();
        for c in &confirmed {
            let name = kind_name(judge::call_kind(&c.tx.call)).to_string();
            *tx_by_kind.entry(name.clone()).or_insert(0) += 1;
            *gas_by_kind.entry(name).or_insert(0) += c.tx.gas;
        }
        let mut eliminated = Vec::new();
        let mut revoked = Vec::new();
        for e in self.events.iter() {
            if let EventKind::PartyRemoved { party, reason } = &e.kind {
                match reason {
                    RemovalReason::Eliminated => eliminated.push(*party),
                    RemovalReason::Revoked => revoked.push(*party),
                }
            }
        }
        let node_states: Vec<_> = self.nodes.iter().map(|n| n.latest_state().cloned()).collect();
        let final_state = self
            .expected()
            .iter()
            .next()
            .and_then(|p| node_states[p.index()].clone());
        let (final_price, final_allocations) = final_state.as_ref().map_or((0.0, Vec::new()), |s| {
            (
                s.clearing_price.to_f64(),
                s.entries.iter().map(|e| (e.party, e.bid.quantity.to_f64())).collect(),
            )
        });
        let blocks = self.ledger.blocks_used();
        let gas_total = self.ledger.gas_total();
        let metrics = MetricsRecord {
            mode: Mode::Channel,
            n_parties: cfg.n(),
            iterations_run: self.env.completed,
            on_chain_tx: self.ledger.tx_count(),
            gas_total,
            eth_total: cfg.gas.eth(gas_total),
            off_chain_messages: self.msg_count,
            off_chain_bytes: self.msg_bytes,
            off_chain_wire_bytes: self.msg_wire_bytes,
            rounds_elapsed: self.round,
            off_chain_rounds: self.msg_rounds,
            blocks_used: blocks,
            estimated_seconds: blocks as f64 * cfg.block_time_ms / 1000.0
                + self.msg_rounds as f64 * cfg.round_duration_ms / 1000.0,
            tx_by_kind,
            gas_by_kind,
            best_version: judge.best_version(),
            eliminated,
            revoked,
            final_price,
            final_allocations,
            converged: self.env.converged,
        };
        RunOutput {
            metrics,
            trace: self.trace,
            balances: self.ledger.balances().all().to_vec(),
            judge,
            confirmed,
            events: self.events.to_vec(),
            final_state,
            node_states,
            pubkeys: self.pubkeys,
            messages: self.messages,
            iteration_starts: self.iteration_starts,
        }
    }
}

/// Metric key of a call kind.
pub fn kind_name(kind: CallKind) -> &'static str {
    match kind {
        CallKind::Create => "create",
        CallKind::StateSubmit => "state_submit",
        CallKind::StateSubmitEliminate => "state_submit_eliminate",
        CallKind::Revoke => "revoke",
        CallKind::Close => "close",
        CallKind::Malformed => "malformed",
    }
}

fn tx_record(c: &ConfirmedTx) -> TxRecord {
    TxRecord {
        id: c.tx.id,
        sender: c.tx.sender,
        call: judge::call_kind(&c.tx.call),
        gas: c.tx.gas,
        submit_round: c.tx.submit_round,
        block: Some(c.block),
    }
}

/// Runs a channel-mode scenario to completion.
pub fn run(cfg: &ScenarioConfig, opts: RunOptions) -> Result<RunOutput, SimError> {
    Simulation::new(cfg, opts)?.run()
}
