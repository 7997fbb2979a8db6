//! Reference iterative double auction.
//!
//! Buyers have quadratic utility `a·x − c·x²/2`, sellers quadratic cost
//! `w·y²/2`. Given a clearing price `p`, a buyer's best response is
//! `x = clamp((a − p)/c, 0, d)` and a seller's is `y = clamp(p/w, 0, s)`.
//! The price moves by tâtonnement: `p' = max(0, p + γ·(D − S))`, where `D`
//! and `S` are the total demand and supply in the revealed bids.
//!
//! All quantities are [`Fixed`]; identical inputs give bit-identical states.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{self, Opening, PublicKey, Signature, SIGNATURE_LEN};
use crate::party::message;
use crate::units::{Fixed, PartyId, UnitError};

/// Encoded size of a [`BidProfile`].
pub const BID_LEN: usize = 8;
/// Encoded size of the fixed part of a [`ChannelState`]: version, price and
/// party count.
pub const STATE_HEADER_LEN: usize = 10;
/// Encoded size of one per-party entry of a [`ChannelState`].
pub const STATE_ENTRY_LEN: usize = 2 + BID_LEN;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuctionError {
    #[error("bids do not match the active parties: {0}")]
    BidMismatch(String),
    #[error("non-finite arithmetic while computing {0}")]
    NonFinite(&'static str),
    #[error("economy needs at least one buyer and one seller")]
    OneSided,
    #[error("party {0} is not part of the economy")]
    UnknownParty(PartyId),
    #[error("version counter overflow")]
    VersionOverflow,
    #[error("malformed encoding: {0}")]
    Encoding(&'static str),
    #[error(transparent)]
    Unit(#[from] UnitError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Buyer,
    Seller,
}

/// One party's offer: price per unit and quantity. For buyers this is
/// `(β, x)`, for sellers `(α, y)`. The role is not encoded; it is fixed per
/// party by the scenario.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct BidProfile {
    pub price: Fixed,
    pub quantity: Fixed,
}

impl BidProfile {
    pub fn to_bytes(&self) -> [u8; BID_LEN] {
        let mut out = [0u8; BID_LEN];
        out[..4].copy_from_slice(&self.price.to_le_bytes());
        out[4..].copy_from_slice(&self.quantity.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != BID_LEN {
            return None;
        }
        Some(BidProfile {
            price: Fixed::from_le_bytes(bytes[..4].try_into().ok()?),
            quantity: Fixed::from_le_bytes(bytes[4..].try_into().ok()?),
        })
    }
}

/// Private economics of one party.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartyEcon {
    Buyer {
        valuation_slope: Fixed,
        valuation_curvature: Fixed,
        capacity: Fixed,
    },
    Seller {
        cost_curvature: Fixed,
        capacity: Fixed,
    },
}

impl PartyEcon {
    pub fn buyer(slope: f64, curvature: f64, capacity: f64) -> Result<Self, AuctionError> {
        Ok(PartyEcon::Buyer {
            valuation_slope: Fixed::from_f64(slope)?,
            valuation_curvature: Fixed::from_f64(curvature)?,
            capacity: Fixed::from_f64(capacity)?,
        })
    }

    pub fn seller(cost_curvature: f64, capacity: f64) -> Result<Self, AuctionError> {
        Ok(PartyEcon::Seller {
            cost_curvature: Fixed::from_f64(cost_curvature)?,
            capacity: Fixed::from_f64(capacity)?,
        })
    }

    pub fn role(&self) -> Role {
        match self {
            PartyEcon::Buyer { .. } => Role::Buyer,
            PartyEcon::Seller { .. } => Role::Seller,
        }
    }

    pub fn capacity(&self) -> Fixed {
        match *self {
            PartyEcon::Buyer { capacity, .. } | PartyEcon::Seller { capacity, .. } => capacity,
        }
    }

    /// Unrounded best-response quantity at `price`.
    pub fn response_quantity(&self, price: f64) -> f64 {
        match *self {
            PartyEcon::Buyer {
                valuation_slope,
                valuation_curvature,
                capacity,
            } => ((valuation_slope.to_f64() - price) / valuation_curvature.to_f64())
                .clamp(0.0, capacity.to_f64()),
            PartyEcon::Seller {
                cost_curvature,
                capacity,
            } => (price / cost_curvature.to_f64()).clamp(0.0, capacity.to_f64()),
        }
    }

    pub fn best_response(&self, price: Fixed) -> Result<BidProfile, AuctionError> {
        let q = self.response_quantity(price.to_f64());
        if !q.is_finite() {
            return Err(AuctionError::NonFinite("best response quantity"));
        }
        Ok(BidProfile {
            price,
            quantity: Fixed::saturating_from_f64(q)?,
        })
    }
}

/// Economics of every party in the scenario, indexed by [`PartyId`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Economy {
    parties: Vec<PartyEcon>,
}

impl Economy {
    pub fn new(parties: Vec<PartyEcon>) -> Self {
        Economy { parties }
    }

    pub fn len(&self) -> usize {
        self.parties.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parties.is_empty()
    }

    pub fn get(&self, party: PartyId) -> Result<&PartyEcon, AuctionError> {
        self.parties.get(party.index()).ok_or(AuctionError::UnknownParty(party))
    }

    pub fn party_ids(&self) -> Vec<PartyId> {
        (0..self.parties.len()).map(|i| PartyId(i as u16)).collect()
    }
}

/// Tuning of the price-update rule and the equilibrium test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mechanism {
    pub gamma: f64,
    pub eps: f64,
}

impl Default for Mechanism {
    fn default() -> Self {
        Mechanism {
            gamma: 0.02,
            eps: 1e-3,
        }
    }
}

/// One party's slot in a [`ChannelState`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StateEntry {
    pub party: PartyId,
    pub bid: BidProfile,
}

/// The versioned auction state `G_k`: clearing price and each active party's
/// next bid, plus whatever signatures have been collected over it.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChannelState {
    pub version: u32,
    pub clearing_price: Fixed,
    /// Sorted by party, one entry per active party.
    pub entries: Vec<StateEntry>,
    pub signatures: BTreeMap<PartyId, Signature>,
}

impl ChannelState {
    pub fn active_parties(&self) -> impl Iterator<Item = PartyId> + '_ {
        self.entries.iter().map(|e| e.party)
    }

    pub fn response(&self, party: PartyId) -> Option<BidProfile> {
        self.entries
            .binary_search_by_key(&party, |e| e.party)
            .ok()
            .map(|i| self.entries[i].bid)
    }

    pub fn encoded_len(&self) -> usize {
        STATE_HEADER_LEN + STATE_ENTRY_LEN * self.entries.len()
    }

    /// Canonical encoding; the exact bytes that parties sign.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.clearing_price.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u16).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&e.party.0.to_le_bytes());
            out.extend_from_slice(&e.bid.to_bytes());
        }
    }

    /// Decodes a canonical state from the front of `bytes`, returning it
    /// (without signatures) and the number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(ChannelState, usize), AuctionError> {
        let mut r = Reader::new(bytes);
        let version = r.u32()?;
        let clearing_price = Fixed::from_raw(r.u32()?);
        let count = r.u16()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let party = PartyId(r.u16()?);
            let bid = BidProfile::from_bytes(r.take(BID_LEN)?).ok_or(AuctionError::Encoding("bid"))?;
            entries.push(StateEntry { party, bid });
        }
        if entries.windows(2).any(|w| w[0].party >= w[1].party) {
            return Err(AuctionError::Encoding("entries not sorted by party"));
        }
        Ok((
            ChannelState {
                version,
                clearing_price,
                entries,
                signatures: BTreeMap::new(),
            },
            r.pos,
        ))
    }

    /// Same auction content, ignoring signatures.
    pub fn same_content(&self, other: &ChannelState) -> bool {
        self.version == other.version
            && self.clearing_price == other.clearing_price
            && self.entries == other.entries
    }

    pub fn unsigned(&self) -> ChannelState {
        ChannelState {
            signatures: BTreeMap::new(),
            ..self.clone()
        }
    }

    /// Checks that every party in `parties` has a valid signature on this
    /// state.
    pub fn signed_by_all<'a>(
        &self,
        parties: impl IntoIterator<Item = &'a PartyId>,
        pubkeys: &[PublicKey],
    ) -> bool {
        let bytes = self.encode();
        parties.into_iter().all(|p| {
            match (self.signatures.get(p), pubkeys.get(p.index())) {
                (Some(sig), Some(pk)) => crypto::verify_sig(pk, &bytes, sig),
                _ => false,
            }
        })
    }

    pub fn encode_signatures(&self, out: &mut Vec<u8>) {
        encode_signature_list(&self.signatures, out);
    }
}

pub fn encode_signature_list(sigs: &BTreeMap<PartyId, Signature>, out: &mut Vec<u8>) {
    out.extend_from_slice(&(sigs.len() as u16).to_le_bytes());
    for (p, s) in sigs {
        out.extend_from_slice(&p.0.to_le_bytes());
        out.extend_from_slice(s.as_bytes());
    }
}

pub fn decode_signature_list(
    bytes: &[u8],
) -> Result<(BTreeMap<PartyId, Signature>, usize), AuctionError> {
    let mut r = Reader::new(bytes);
    let count = r.u16()? as usize;
    let mut sigs = BTreeMap::new();
    for _ in 0..count {
        let p = PartyId(r.u16()?);
        let s: [u8; SIGNATURE_LEN] = r.take(SIGNATURE_LEN)?.try_into().unwrap();
        sigs.insert(p, Signature(s));
    }
    Ok((sigs, r.pos))
}

/// A revealed bid together with its sender's signature over the reveal
/// message, so a third party can check who revealed what.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedReveal {
    pub party: PartyId,
    pub opening: Opening,
    pub signature: Signature,
}

impl SignedReveal {
    pub fn verify(&self, iteration: u32, pubkeys: &[PublicKey]) -> bool {
        let Some(pk) = pubkeys.get(self.party.index()) else {
            return false;
        };
        let bytes = message::reveal_signing_bytes(iteration, self.party, &self.opening);
        crypto::verify_sig(pk, &bytes, &self.signature)
    }

    pub fn bid(&self) -> Option<BidProfile> {
        BidProfile::from_bytes(&self.opening.message)
    }
}

/// Evidence that a state was computed correctly: every bid revealed in its
/// iteration and the fully signed predecessor. The genesis state has an empty
/// proof.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Proof {
    pub reveals: Vec<SignedReveal>,
    pub prev_state: Option<Arc<ChannelState>>,
}

impl Proof {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.reveals.len() as u16).to_le_bytes());
        for r in &self.reveals {
            out.extend_from_slice(&r.party.0.to_le_bytes());
            let body = r.opening.to_bytes();
            out.extend_from_slice(&(body.len() as u16).to_le_bytes());
            out.extend_from_slice(&body);
            out.extend_from_slice(r.signature.as_bytes());
        }
        match &self.prev_state {
            None => out.push(0),
            Some(prev) => {
                out.push(1);
                prev.encode_into(&mut out);
                prev.encode_signatures(&mut out);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<(Proof, usize), AuctionError> {
        let mut r = Reader::new(bytes);
        let count = r.u16()? as usize;
        let mut reveals = Vec::with_capacity(count);
        for _ in 0..count {
            let party = PartyId(r.u16()?);
            let len = r.u16()? as usize;
            let opening = Opening::from_bytes(r.take(len)?).ok_or(AuctionError::Encoding("opening"))?;
            let signature = Signature(r.take(SIGNATURE_LEN)?.try_into().unwrap());
            reveals.push(SignedReveal {
                party,
                opening,
                signature,
            });
        }
        let prev_state = match r.u8()? {
            0 => None,
            1 => {
                let (mut state, used) = ChannelState::decode(r.rest())?;
                r.pos += used;
                let (sigs, used) = decode_signature_list(r.rest())?;
                r.pos += used;
                state.signatures = sigs;
                Some(Arc::new(state))
            }
            _ => return Err(AuctionError::Encoding("proof predecessor tag")),
        };
        Ok((
            Proof {
                reveals,
                prev_state,
            },
            r.pos,
        ))
    }
}

/// The agreed starting state: version 0, price 0, zero bids.
pub fn initial_state(parties: &[PartyId]) -> ChannelState {
    let mut entries: Vec<StateEntry> = parties
        .iter()
        .map(|&party| StateEntry {
            party,
            bid: BidProfile::default(),
        })
        .collect();
    entries.sort_by_key(|e| e.party);
    entries.dedup_by_key(|e| e.party);
    ChannelState {
        version: 0,
        clearing_price: Fixed::ZERO,
        entries,
        signatures: BTreeMap::new(),
    }
}

fn excess_raw(bids: &[(PartyId, BidProfile)], econ: &Economy) -> Result<i64, AuctionError> {
    let mut excess = 0i64;
    for (party, bid) in bids {
        let q = bid.quantity.raw() as i64;
        match econ.get(*party)?.role() {
            Role::Buyer => excess += q,
            Role::Seller => excess -= q,
        }
    }
    Ok(excess)
}

/// Computes the next state from the bids revealed against `prev`.
///
/// `bids` must be sorted by party with no duplicates, and every bidder must
/// be active in `prev`. The bidders become the active set of the new state.
pub fn best_response(
    prev: &ChannelState,
    bids: &[(PartyId, BidProfile)],
    econ: &Economy,
    gamma: f64,
) -> Result<ChannelState, AuctionError> {
    if bids.is_empty() {
        return Err(AuctionError::BidMismatch("no bids".into()));
    }
    if bids.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(AuctionError::BidMismatch("bids not sorted by party".into()));
    }
    for (party, _) in bids {
        if prev.response(*party).is_none() {
            return Err(AuctionError::BidMismatch(format!("{party} is not active in the previous state")));
        }
    }
    if !gamma.is_finite() {
        return Err(AuctionError::NonFinite("price step"));
    }
    let excess = excess_raw(bids, econ)?;
    let step = gamma * excess as f64;
    if !step.is_finite() {
        return Err(AuctionError::NonFinite("price step"));
    }
    let price_raw = (prev.clearing_price.raw() as f64 + step.round()).clamp(0.0, u32::MAX as f64);
    let price = Fixed::from_raw(price_raw as u32);
    let mut entries = Vec::with_capacity(bids.len());
    for (party, _) in bids {
        entries.push(StateEntry {
            party: *party,
            bid: econ.get(*party)?.best_response(price)?,
        });
    }
    Ok(ChannelState {
        version: prev.version.checked_add(1).ok_or(AuctionError::VersionOverflow)?,
        clearing_price: price,
        entries,
        signatures: BTreeMap::new(),
    })
}

/// Whether `bids` form an equilibrium under `state`'s clearing price: the
/// market clears within `eps` and each bid is within `eps` of the bidder's
/// best response.
pub fn is_ne(state: &ChannelState, bids: &[(PartyId, BidProfile)], econ: &Economy, eps: f64) -> bool {
    let Ok(excess) = excess_raw(bids, econ) else {
        return false;
    };
    if (excess as f64 / Fixed::SCALE as f64).abs() > eps {
        return false;
    }
    let price = state.clearing_price;
    bids.iter().all(|(party, bid)| {
        let Ok(best) = econ.get(*party).and_then(|e| e.best_response(price)) else {
            return false;
        };
        (bid.quantity.to_f64() - best.quantity.to_f64()).abs() <= eps
            && (bid.price.to_f64() - best.price.to_f64()).abs() <= eps
    })
}

/// The bids every honest party submits against `state`: its own entry.
pub fn bids_from(state: &ChannelState) -> Vec<(PartyId, BidProfile)> {
    state.entries.iter().map(|e| (e.party, e.bid)).collect()
}

/// Exact equilibrium of the reference mechanism.
#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub price: f64,
    pub allocations: Vec<(PartyId, f64)>,
    /// False when the market clears with nothing traded.
    pub trade: bool,
}

fn excess_at(econ: &Economy, parties: &[PartyId], price: f64) -> Result<f64, AuctionError> {
    let mut excess = 0.0;
    for p in parties {
        let e = econ.get(*p)?;
        match e.role() {
            Role::Buyer => excess += e.response_quantity(price),
            Role::Seller => excess -= e.response_quantity(price),
        }
    }
    Ok(excess)
}

/// Solves for the market-clearing price among `parties` without iterating.
///
/// Aggregate excess demand is piecewise linear in the price with kinks where
/// a party's quantity hits zero or its capacity. Between consecutive kinks
/// the set of binding constraints is fixed, so each segment is one linear
/// equation; the segment whose endpoints bracket zero holds the equilibrium.
pub fn equilibrium_oracle(econ: &Economy, parties: &[PartyId]) -> Result<Equilibrium, AuctionError> {
    let mut has_buyer = false;
    let mut has_seller = false;
    let mut kinks = vec![0.0f64];
    for p in parties {
        match *econ.get(*p)? {
            PartyEcon::Buyer {
                valuation_slope,
                valuation_curvature,
                capacity,
            } => {
                has_buyer = true;
                let a = valuation_slope.to_f64();
                kinks.push(a);
                kinks.push(a - valuation_curvature.to_f64() * capacity.to_f64());
            }
            PartyEcon::Seller {
                cost_curvature,
                capacity,
            } => {
                has_seller = true;
                kinks.push(cost_curvature.to_f64() * capacity.to_f64());
            }
        }
    }
    if !has_buyer || !has_seller {
        return Err(AuctionError::OneSided);
    }
    kinks.retain(|k| k.is_finite() && *k >= 0.0);
    kinks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    kinks.dedup();

    let price = if excess_at(econ, parties, 0.0)? <= 0.0 {
        0.0
    } else {
        let mut found = None;
        for w in kinks.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let (ex_lo, ex_hi) = (excess_at(econ, parties, lo)?, excess_at(econ, parties, hi)?);
            if ex_lo >= 0.0 && ex_hi <= 0.0 {
                found = Some(solve_segment(econ, parties, lo, hi, ex_lo, ex_hi)?);
                break;
            }
        }
        // Past the last kink every buyer demands zero, so excess is already
        // non-positive there; a bracket always exists.
        found.unwrap_or(*kinks.last().unwrap())
    };

    let allocations = parties
        .iter()
        .map(|p| Ok((*p, econ.get(*p)?.response_quantity(price))))
        .collect::<Result<Vec<_>, AuctionError>>()?;
    let demand: f64 = parties
        .iter()
        .zip(&allocations)
        .filter(|(p, _)| econ.get(**p).map(|e| e.role() == Role::Buyer).unwrap_or(false))
        .map(|(_, (_, q))| q)
        .sum();
    Ok(Equilibrium {
        price,
        allocations,
        trade: demand > 1e-12,
    })
}

fn solve_segment(
    econ: &Economy,
    parties: &[PartyId],
    lo: f64,
    hi: f64,
    ex_lo: f64,
    ex_hi: f64,
) -> Result<f64, AuctionError> {
    if ex_lo == 0.0 {
        return Ok(lo);
    }
    if ex_hi == 0.0 {
        return Ok(hi);
    }
    // Parties interior on this segment respond linearly; the rest are pinned
    // at zero or capacity.
    let mid = 0.5 * (lo + hi);
    let mut constant = 0.0;
    let mut slope = 0.0;
    for p in parties {
        let e = econ.get(*p)?;
        let q = e.response_quantity(mid);
        match *e {
            PartyEcon::Buyer {
                valuation_slope,
                valuation_curvature,
                capacity,
            } => {
                if q > 0.0 && q < capacity.to_f64() {
                    constant += valuation_slope.to_f64() / valuation_curvature.to_f64();
                    slope -= 1.0 / valuation_curvature.to_f64();
                } else {
                    constant += q;
                }
            }
            PartyEcon::Seller {
                cost_curvature,
                capacity,
            } => {
                if q > 0.0 && q < capacity.to_f64() {
                    slope -= 1.0 / cost_curvature.to_f64();
                } else {
                    constant -= q;
                }
            }
        }
    }
    if slope == 0.0 {
        return Ok(lo);
    }
    let p = -constant / slope;
    if !p.is_finite() {
        return Err(AuctionError::NonFinite("equilibrium price"));
    }
    Ok(p.clamp(lo, hi))
}

/// Everything a verifier needs besides the state and its proof.
#[derive(Debug, Clone, Copy)]
pub struct VerifyContext<'a> {
    pub economy: &'a Economy,
    pub pubkeys: &'a [PublicKey],
    pub gamma: f64,
    pub genesis_parties: &'a [PartyId],
}

/// Checks that `g` is the correct successor of the proof's predecessor under
/// the revealed bids. Signatures on `g` itself are the caller's concern.
pub fn verify_state(g: &ChannelState, proof: &Proof, ctx: &VerifyContext<'_>) -> bool {
    let Some(prev) = &proof.prev_state else {
        return g.version == 0
            && proof.reveals.is_empty()
            && g.same_content(&initial_state(ctx.genesis_parties));
    };
    if prev.version.checked_add(1) != Some(g.version) {
        return false;
    }
    let prev_parties: Vec<PartyId> = prev.active_parties().collect();
    if !prev.signed_by_all(&prev_parties, ctx.pubkeys) {
        return false;
    }
    if proof.reveals.len() != g.entries.len()
        || proof.reveals.iter().zip(&g.entries).any(|(r, e)| r.party != e.party)
    {
        return false;
    }
    let mut bids = Vec::with_capacity(proof.reveals.len());
    for r in &proof.reveals {
        if !r.verify(g.version, ctx.pubkeys) {
            return false;
        }
        match r.bid() {
            Some(bid) => bids.push((r.party, bid)),
            None => return false,
        }
    }
    match best_response(prev, &bids, ctx.economy, ctx.gamma) {
        Ok(expected) => expected.same_content(g),
        Err(_) => false,
    }
}

/// Runs the auction centrally (no channel): iterate best responses from the
/// genesis state until equilibrium. Returns the final state and its bids, or
/// `None` if `cap` iterations pass without reaching equilibrium.
pub fn iterate_to_ne(
    econ: &Economy,
    parties: &[PartyId],
    mechanism: Mechanism,
    cap: u32,
) -> Result<Option<(ChannelState, Vec<(PartyId, BidProfile)>)>, AuctionError> {
    let mut state = initial_state(parties);
    for _ in 0..cap {
        let bids = bids_from(&state);
        let next = best_response(&state, &bids, econ, mechanism.gamma)?;
        if is_ne(&next, &bids, econ, mechanism.eps) {
            return Ok(Some((next, bids)));
        }
        state = next;
    }
    Ok(None)
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], AuctionError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or(AuctionError::Encoding("truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, AuctionError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16, AuctionError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, AuctionError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
