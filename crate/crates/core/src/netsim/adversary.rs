//! Deviations applied at a corrupted party's endpoint. Honest nodes' actions
//! pass through untouched.

use std::sync::Arc;

use crate::crypto;
use crate::party::message::{Body, MessageKind, OffChainMessage};
use crate::party::{Action, EnvInput, EnvOutput, PartyNode};
use crate::scenario::{Behavior, SilentPhase};
use crate::units::Fixed;

#[derive(Debug, Clone)]
pub struct Corruption {
    pub behavior: Behavior,
    /// Once set, every action of the party is dropped.
    pub muted: bool,
    stale_sent: bool,
}

impl Corruption {
    pub fn new(behavior: Behavior) -> Self {
        Corruption {
            behavior,
            muted: false,
            stale_sent: false,
        }
    }

    /// Filters an environment input before the node sees it.
    pub fn admit(&mut self, input: &EnvInput) -> bool {
        if let (Behavior::AbortAt { iteration }, EnvInput::BestResponse { iteration: k }) = (self.behavior, input) {
            if *k >= iteration {
                self.muted = true;
            }
        }
        !self.muted
    }

    /// Rewrites the node's outgoing actions. `is_final` tells whether an
    /// iteration outcome ends the auction.
    pub fn intercept(&mut self, node: &PartyNode, actions: Vec<Action>, is_final: impl Fn(u32, bool) -> bool) -> Vec<Action> {
        let mut out = Vec::with_capacity(actions.len());
        for action in actions {
            if self.muted {
                break;
            }
            match (self.behavior, action) {
                (Behavior::Silent { iteration, phase }, Action::Broadcast { to, msg })
                    if msg.iteration >= iteration && msg.kind() == silent_kind(phase) =>
                {
                    let _ = to;
                    self.muted = true;
                }
                (Behavior::InvalidReveal { iteration }, Action::Broadcast { to, msg })
                    if msg.iteration >= iteration && msg.kind() == MessageKind::Reveal =>
                {
                    let Body::Reveal(opening) = &msg.body else { unreachable!() };
                    let mut bad = opening.clone();
                    bad.nonce[0] ^= 0x01;
                    let forged = OffChainMessage::new(node.keys(), msg.iteration, msg.sender, Body::Reveal(bad));
                    out.push(Action::Broadcast {
                        to,
                        msg: Arc::new(forged),
                    });
                    self.muted = true;
                }
                (Behavior::WrongState { iteration }, Action::Broadcast { to, msg })
                    if msg.iteration >= iteration
                        && matches!(msg.kind(), MessageKind::BestResponse | MessageKind::Verified) =>
                {
                    let (Body::BestResponse(state, _) | Body::Verified(state, _)) = &msg.body else {
                        unreachable!()
                    };
                    let mut wrong = state.unsigned();
                    if let Some(e) = wrong.entries.first_mut() {
                        e.bid.quantity = Fixed::from_raw(e.bid.quantity.raw().wrapping_add(Fixed::SCALE as u32));
                    }
                    let sig = crypto::sign(node.keys(), &wrong.encode());
                    let wrong = Arc::new(wrong);
                    let body = if msg.kind() == MessageKind::BestResponse {
                        Body::BestResponse(wrong, sig)
                    } else {
                        Body::Verified(wrong, sig)
                    };
                    out.push(Action::Broadcast {
                        to,
                        msg: Arc::new(OffChainMessage::new(node.keys(), msg.iteration, msg.sender, body)),
                    });
                    self.muted = true;
                }
                (Behavior::StaleSubmit { version }, Action::Output(EnvOutput::IterationComplete { iteration, ne })) => {
                    out.push(Action::Output(EnvOutput::IterationComplete { iteration, ne }));
                    if !self.stale_sent && is_final(iteration, ne) {
                        if let Some(payload) = node.submit_payload(version) {
                            self.stale_sent = true;
                            out.push(Action::Tx(payload));
                        }
                    }
                }
                (_, action) => out.push(action),
            }
        }
        out
    }
}

fn silent_kind(phase: SilentPhase) -> MessageKind {
    match phase {
        SilentPhase::Commit => MessageKind::Commit,
        SilentPhase::Reveal => MessageKind::Reveal,
        SilentPhase::BestResponse => MessageKind::BestResponse,
        SilentPhase::Verified => MessageKind::Verified,
    }
}
