//! Off-chain protocol messages and their wire format:
//! `kind u8 ‖ iteration u32 ‖ sender u16 ‖ body_len u16 ‖ body ‖ sender_sig`.
//! The sender signature covers every byte before it.

use std::sync::{Arc, OnceLock};

use thiserror::Error;

use crate::auction::{ChannelState, Reader};
use crate::crypto::{self, Commitment, KeyPair, Opening, PublicKey, Signature, DIGEST_LEN, SIGNATURE_LEN};
use crate::units::PartyId;

pub const HEADER_LEN: usize = 9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MessageError {
    #[error("message truncated")]
    Truncated,
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("malformed {0} body")]
    Body(&'static str),
    #[error("trailing bytes after message")]
    Trailing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Commit = 0,
    Reveal = 1,
    BestResponse = 2,
    Verified = 3,
}

impl MessageKind {
    pub fn from_u8(b: u8) -> Option<Self> {
        match b {
            0 => Some(MessageKind::Commit),
            1 => Some(MessageKind::Reveal),
            2 => Some(MessageKind::BestResponse),
            3 => Some(MessageKind::Verified),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    Commit(Commitment),
    Reveal(Opening),
    /// The computed state and the computer's signature on it.
    BestResponse(Arc<ChannelState>, Signature),
    /// The state as the sender recomputed it and the sender's signature on it.
    Verified(Arc<ChannelState>, Signature),
}

impl Body {
    pub fn kind(&self) -> MessageKind {
        match self {
            Body::Commit(_) => MessageKind::Commit,
            Body::Reveal(_) => MessageKind::Reveal,
            Body::BestResponse(..) => MessageKind::BestResponse,
            Body::Verified(..) => MessageKind::Verified,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            Body::Commit(c) => c.as_bytes().to_vec(),
            Body::Reveal(o) => o.to_bytes(),
            Body::BestResponse(state, sig) | Body::Verified(state, sig) => {
                let mut out = state.encode();
                out.extend_from_slice(sig.as_bytes());
                out
            }
        }
    }

    fn decode(kind: MessageKind, bytes: &[u8]) -> Result<Body, MessageError> {
        match kind {
            MessageKind::Commit => {
                let digest: [u8; DIGEST_LEN] = bytes.try_into().map_err(|_| MessageError::Body("commit"))?;
                Ok(Body::Commit(Commitment(digest)))
            }
            MessageKind::Reveal => Opening::from_bytes(bytes)
                .map(Body::Reveal)
                .ok_or(MessageError::Body("reveal")),
            MessageKind::BestResponse | MessageKind::Verified => {
                let (state, used) = ChannelState::decode(bytes).map_err(|_| MessageError::Body("state"))?;
                let sig: [u8; SIGNATURE_LEN] = bytes[used..]
                    .try_into()
                    .map_err(|_| MessageError::Body("state signature"))?;
                let state = Arc::new(state);
                Ok(if kind == MessageKind::BestResponse {
                    Body::BestResponse(state, Signature(sig))
                } else {
                    Body::Verified(state, Signature(sig))
                })
            }
        }
    }
}

/// `kind ‖ iteration ‖ sender ‖ body_len ‖ body`: the bytes a sender signs.
pub fn signing_bytes(kind: MessageKind, iteration: u32, sender: PartyId, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.push(kind as u8);
    out.extend_from_slice(&iteration.to_le_bytes());
    out.extend_from_slice(&sender.0.to_le_bytes());
    out.extend_from_slice(&(body.len() as u16).to_le_bytes());
    out.extend_from_slice(body);
    out
}

pub fn reveal_signing_bytes(iteration: u32, sender: PartyId, opening: &Opening) -> Vec<u8> {
    signing_bytes(MessageKind::Reveal, iteration, sender, &opening.to_bytes())
}

#[derive(Debug)]
pub struct OffChainMessage {
    pub iteration: u32,
    pub sender: PartyId,
    pub body: Body,
    pub sender_sig: Signature,
    signed: Vec<u8>,
    sender_ok: OnceLock<bool>,
    state_ok: OnceLock<bool>,
}

impl PartialEq for OffChainMessage {
    fn eq(&self, other: &Self) -> bool {
        self.signed == other.signed && self.sender_sig == other.sender_sig
    }
}

impl Eq for OffChainMessage {}

impl Clone for OffChainMessage {
    fn clone(&self) -> Self {
        OffChainMessage::assemble(self.iteration, self.sender, self.body.clone(), self.sender_sig)
    }
}

impl OffChainMessage {
    /// Builds and signs a message from `sender`.
    pub fn new(key: &KeyPair, iteration: u32, sender: PartyId, body: Body) -> Self {
        let signed = signing_bytes(body.kind(), iteration, sender, &body.encode());
        let sender_sig = crypto::sign(key, &signed);
        OffChainMessage {
            iteration,
            sender,
            body,
            sender_sig,
            signed,
            sender_ok: OnceLock::new(),
            state_ok: OnceLock::new(),
        }
    }

    /// Builds a message around an existing signature, valid or not.
    pub fn assemble(iteration: u32, sender: PartyId, body: Body, sender_sig: Signature) -> Self {
        let signed = signing_bytes(body.kind(), iteration, sender, &body.encode());
        OffChainMessage {
            iteration,
            sender,
            body,
            sender_sig,
            signed,
            sender_ok: OnceLock::new(),
            state_ok: OnceLock::new(),
        }
    }

    pub fn kind(&self) -> MessageKind {
        self.body.kind()
    }

    pub fn body_len(&self) -> usize {
        self.signed.len() - HEADER_LEN
    }

    pub fn wire_len(&self) -> usize {
        self.signed.len() + SIGNATURE_LEN
    }

    pub fn signed_bytes(&self) -> &[u8] {
        &self.signed
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&self.signed);
        out.extend_from_slice(self.sender_sig.as_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, MessageError> {
        let mut r = Reader::new(bytes);
        let kind_byte = r.u8().map_err(|_| MessageError::Truncated)?;
        let kind = MessageKind::from_u8(kind_byte).ok_or(MessageError::UnknownKind(kind_byte))?;
        let iteration = r.u32().map_err(|_| MessageError::Truncated)?;
        let sender = PartyId(r.u16().map_err(|_| MessageError::Truncated)?);
        let len = r.u16().map_err(|_| MessageError::Truncated)? as usize;
        let body = Body::decode(kind, r.take(len).map_err(|_| MessageError::Truncated)?)?;
        let sig: [u8; SIGNATURE_LEN] = r
            .take(SIGNATURE_LEN)
            .map_err(|_| MessageError::Truncated)?
            .try_into()
            .unwrap();
        if !r.is_empty() {
            return Err(MessageError::Trailing);
        }
        let msg = OffChainMessage::assemble(iteration, sender, body, Signature(sig));
        if msg.signed[..] != bytes[..bytes.len() - SIGNATURE_LEN] {
            return Err(MessageError::Body("non-canonical"));
        }
        Ok(msg)
    }

    /// Checks the sender signature. The result is memoized: message contents
    /// are immutable, so every recipient of a broadcast gets the same answer.
    pub fn sender_sig_valid(&self, pubkeys: &[PublicKey]) -> bool {
        *self.sender_ok.get_or_init(|| match pubkeys.get(self.sender.index()) {
            Some(pk) => crypto::verify_sig(pk, &self.signed, &self.sender_sig),
            None => false,
        })
    }

    /// For `BestResponse`/`Verified`, checks the sender's signature on the
    /// carried state. Memoized like [`Self::sender_sig_valid`].
    pub fn state_sig_valid(&self, pubkeys: &[PublicKey]) -> bool {
        *self.state_ok.get_or_init(|| match (&self.body, pubkeys.get(self.sender.index())) {
            (Body::BestResponse(state, sig) | Body::Verified(state, sig), Some(pk)) => {
                crypto::verify_sig(pk, &state.encode(), sig)
            }
            _ => false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::initial_state;
    use crate::crypto::{commit, keygen, NONCE_LEN};

    fn keys() -> Vec<KeyPair> {
        (0..3).map(keygen).collect()
    }

    fn pubkeys(k: &[KeyPair]) -> Vec<PublicKey> {
        k.iter().map(KeyPair::public).collect()
    }

    #[test]
    fn header_layout() {
        let k = keys();
        let c = commit(&[1; 8], &[2; NONCE_LEN]).unwrap();
        let m = OffChainMessage::new(&k[1], 7, PartyId(1), Body::Commit(c));
        let bytes = m.encode();
        assert_eq!(bytes[0], 0);
        assert_eq!(&bytes[1..5], &7u32.to_le_bytes());
        assert_eq!(&bytes[5..7], &1u16.to_le_bytes());
        assert_eq!(&bytes[7..9], &32u16.to_le_bytes());
        assert_eq!(bytes.len(), HEADER_LEN + 32 + SIGNATURE_LEN);
        assert_eq!(m.body_len(), 32);
    }

    #[test]
    fn round_trip_every_kind() {
        let k = keys();
        let pk = pubkeys(&k);
        let state = Arc::new(initial_state(&[PartyId(0), PartyId(1), PartyId(2)]));
        let ssig = crypto::sign(&k[2], &state.encode());
        let bodies = vec![
            Body::Commit(commit(&[1; 8], &[2; NONCE_LEN]).unwrap()),
            Body::Reveal(Opening::new(vec![1; 8], [2; NONCE_LEN])),
            Body::BestResponse(state.clone(), ssig),
            Body::Verified(state, ssig),
        ];
        for body in bodies {
            let m = OffChainMessage::new(&k[2], 3, PartyId(2), body);
            let back = OffChainMessage::decode(&m.encode()).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.body, m.body);
            assert!(back.sender_sig_valid(&pk));
        }
    }

    #[test]
    fn tampered_or_misattributed_messages_fail() {
        let k = keys();
        let pk = pubkeys(&k);
        let m = OffChainMessage::new(&k[0], 1, PartyId(0), Body::Reveal(Opening::new(vec![9; 8], [4; NONCE_LEN])));
        let mut bytes = m.encode();
        bytes[HEADER_LEN] ^= 1;
        assert!(!OffChainMessage::decode(&bytes).unwrap().sender_sig_valid(&pk));

        let forged = OffChainMessage::assemble(1, PartyId(1), m.body.clone(), m.sender_sig);
        assert!(!forged.sender_sig_valid(&pk));

        let unknown = OffChainMessage::assemble(1, PartyId(9), m.body.clone(), m.sender_sig);
        assert!(!unknown.sender_sig_valid(&pk));
    }

    #[test]
    fn state_signature_is_checked_separately() {
        let k = keys();
        let pk = pubkeys(&k);
        let state = Arc::new(initial_state(&[PartyId(0), PartyId(1)]));
        let wrong = crypto::sign(&k[0], &state.encode());
        let m = OffChainMessage::new(&k[1], 1, PartyId(1), Body::Verified(state, wrong));
        assert!(m.sender_sig_valid(&pk));
        assert!(!m.state_sig_valid(&pk));
    }

    #[test]
    fn malformed_input_is_rejected() {
        assert_eq!(OffChainMessage::decode(&[0, 1]), Err(MessageError::Truncated));
        let mut bad = vec![9u8];
        bad.extend_from_slice(&[0; 8]);
        assert_eq!(OffChainMessage::decode(&bad), Err(MessageError::UnknownKind(9)));
        let k = keys();
        let m = OffChainMessage::new(&k[0], 1, PartyId(0), Body::Commit(Commitment([0; 32])));
        let mut long = m.encode();
        long.push(0);
        assert_eq!(OffChainMessage::decode(&long), Err(MessageError::Trailing));
    }
}
