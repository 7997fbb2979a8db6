//! Property suites over random economies and random small channels.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use proptest::prelude::*;

use auction_channel::auction::{self, equilibrium_oracle, ChannelState, Mechanism, Proof, VerifyContext};
use auction_channel::judge::{self, ChannelStatus, JudgeCall};
use auction_channel::netsim::{self, trace, RunOptions, RunOutput, Simulation};
use auction_channel::party::message::{MessageKind, OffChainMessage};
use auction_channel::scenario::{AdversaryEntry, Behavior, Mode, PartySpec, ScenarioConfig, SilentPhase};
use auction_channel::strawman;
use auction_channel::units::PartyId;

fn r3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Buyers `(slope, curvature, capacity)` and sellers `(curvature, capacity)`.
fn economy() -> impl Strategy<Value = ScenarioConfig> {
    (
        prop::collection::vec((2.0..15.0f64, 0.5..5.0f64, 2.0..30.0f64), 1..6),
        prop::collection::vec((0.5..5.0f64, 2.0..30.0f64), 1..6),
        0.1..0.9f64,
    )
        .prop_map(|(buyers, sellers, contraction)| {
            let mut parties = Vec::new();
            let mut slopes = 0.0;
            for (a, c, cap) in buyers {
                slopes += 1.0 / r3(c);
                parties.push(PartySpec::buyer(r3(a), r3(c), r3(cap)));
            }
            for (w, cap) in sellers {
                slopes += 1.0 / r3(w);
                parties.push(PartySpec::seller(r3(w), r3(cap)));
            }
            let mut cfg = ScenarioConfig::with_parties(parties);
            cfg.gamma = contraction / slopes;
            cfg.eps = 1e-4;
            cfg
        })
}

fn behavior(n: u16, k: u32) -> impl Strategy<Value = Option<AdversaryEntry>> {
    let phase = prop_oneof![
        Just(SilentPhase::Commit),
        Just(SilentPhase::Reveal),
        Just(SilentPhase::BestResponse),
        Just(SilentPhase::Verified),
    ];
    let kind = prop_oneof![
        Just(Behavior::Honest),
        (1..=k, phase).prop_map(|(iteration, phase)| Behavior::Silent { iteration, phase }),
        (1..=k).prop_map(|iteration| Behavior::InvalidReveal { iteration }),
        (1..=k).prop_map(|iteration| Behavior::WrongState { iteration }),
        (0..k).prop_map(|version| Behavior::StaleSubmit { version }),
        (1..=k).prop_map(|iteration| Behavior::RevokeAt { iteration }),
        (1..=k).prop_map(|iteration| Behavior::AbortAt { iteration }),
    ];
    (0..n, kind).prop_map(|(party, behavior)| (behavior != Behavior::Honest).then_some(AdversaryEntry { party, behavior }))
}

/// A channel of 3 to 5 parties running a fixed number of iterations, with at
/// most one corrupted party.
fn channel() -> impl Strategy<Value = ScenarioConfig> {
    (3u16..=5, 1u32..=5, 1u64..=3, 1u64..=4, any::<u64>(), any::<bool>())
        .prop_flat_map(|(n, k, delta, window, seed, random_computer)| {
            (Just((n, k, delta, window, seed, random_computer)), behavior(n, k))
        })
        .prop_map(|((n, k, delta, window, seed, random_computer), adversary)| {
            let parties = (0..n)
                .map(|i| {
                    if i % 2 == 0 {
                        PartySpec::buyer(8.0 + i as f64, 1.0 + 0.25 * i as f64, 20.0)
                    } else {
                        PartySpec::seller(1.0 + 0.5 * i as f64, 20.0)
                    }
                })
                .collect();
            let mut cfg = ScenarioConfig::with_parties(parties);
            cfg.seed = seed;
            cfg.delta = delta;
            cfg.dispute_window = window;
            cfg.fixed_iterations = Some(k);
            cfg.round_cap = 10_000;
            if random_computer {
                cfg.computer_policy = auction_channel::party::ComputerPolicy::SeededRandom;
            }
            cfg.adversaries = adversary.into_iter().collect();
            cfg
        })
}

fn full() -> RunOptions {
    RunOptions {
        record_trace: true,
        record_messages: true,
    }
}

fn corrupted(cfg: &ScenarioConfig) -> Vec<PartyId> {
    cfg.adversaries.iter().map(|a| PartyId(a.party)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn best_responses_reach_the_oracle_equilibrium(cfg in economy()) {
        let econ = cfg.economy();
        let ids = cfg.party_ids();
        let eq = equilibrium_oracle(&econ, &ids).unwrap();
        let mech = Mechanism { gamma: cfg.gamma, eps: cfg.eps };
        let (state, bids) = auction::iterate_to_ne(&econ, &ids, mech, 100_000).unwrap().expect("converges");
        prop_assert!(auction::is_ne(&state, &bids, &econ, cfg.eps));
        prop_assert!((state.clearing_price.to_f64() - eq.price).abs() <= 1e-3);
        for (e, (p, x)) in state.entries.iter().zip(&eq.allocations) {
            prop_assert_eq!(e.party, *p);
            prop_assert!((e.bid.quantity.to_f64() - x).abs() <= 1e-3);
        }
    }

    #[test]
    fn strawman_and_channel_agree(mut cfg in economy(), seed in any::<u64>()) {
        cfg.seed = seed;
        cfg.delta = 1;
        let channel = netsim::run(&cfg, RunOptions::default()).unwrap().metrics;
        cfg.mode = Mode::Strawman;
        let straw = strawman::run_strawman(&cfg).unwrap().metrics;
        prop_assert_eq!(channel.iterations_run, straw.iterations_run);
        prop_assert_eq!(channel.final_price, straw.final_price);
        prop_assert_eq!(&channel.final_allocations, &straw.final_allocations);
        if channel.iterations_run >= 2 {
            prop_assert!(straw.on_chain_tx > channel.on_chain_tx);
        }
    }
}

/// A fully signed state of a small honest channel, with its proof.
fn signed_sample() -> &'static (ScenarioConfig, Arc<ChannelState>, Proof, Arc<Vec<auction_channel::crypto::PublicKey>>) {
    static SAMPLE: OnceLock<(ScenarioConfig, Arc<ChannelState>, Proof, Arc<Vec<auction_channel::crypto::PublicKey>>)> =
        OnceLock::new();
    SAMPLE.get_or_init(|| {
        let mut cfg = ScenarioConfig::with_parties(vec![
            PartySpec::buyer(10.0, 1.0, 20.0),
            PartySpec::seller(2.0, 20.0),
            PartySpec::buyer(9.0, 2.0, 20.0),
        ]);
        cfg.delta = 2;
        cfg.fixed_iterations = Some(3);
        let mut sim = Simulation::new(&cfg, RunOptions::default()).unwrap();
        while !sim.is_done() {
            sim.step().unwrap();
        }
        let node = &sim.nodes()[0];
        let (state, proof) = node.archived(3).unwrap().clone();
        let pubkeys = Arc::new(sim.ledger().contract().config().pubkeys.to_vec());
        (cfg, state, proof, pubkeys)
    })
}

/// Whether the Judge would accept this submission as a valid state.
fn judge_accepts(payload: &[u8], cfg: &ScenarioConfig, pubkeys: &[auction_channel::crypto::PublicKey]) -> bool {
    let Some(JudgeCall::StateSubmit { version, state, proof, .. }) = judge::decode_call(payload) else {
        return false;
    };
    let econ = cfg.economy();
    let parties = cfg.party_ids();
    let ctx = VerifyContext { economy: &econ, pubkeys, gamma: cfg.gamma, genesis_parties: &parties };
    state.version == version && state.signed_by_all(&parties, pubkeys) && auction::verify_state(&state, &proof, &ctx)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn any_mutation_of_a_submitted_state_is_rejected(at in any::<prop::sample::Index>(), flip in 1u8..=255) {
        let (cfg, state, proof, pubkeys) = signed_sample();
        let payload = judge::encode_state_submit(None, state.version, state, proof);
        prop_assert!(judge_accepts(&payload, cfg, pubkeys));
        // The 7-byte header names the call, not the state.
        let i = 7 + at.index(payload.len() - 7);
        let mut bad = payload.clone();
        bad[i] ^= flip;
        prop_assert!(!judge_accepts(&bad, cfg, pubkeys), "byte {} of {}", i, payload.len());
    }
}

fn check_run(cfg: &ScenarioConfig, out: &RunOutput) -> Result<(), TestCaseError> {
    let initial = cfg.initial_balance_amount().0 * cfg.n() as u64;
    let mut last_version = -1;
    for r in &out.trace {
        prop_assert_eq!(r.total_value, initial, "value changed at round {}", r.round);
        prop_assert!(r.best_version >= last_version, "bestVersion fell at round {}", r.round);
        last_version = r.best_version;
        for d in &r.delivered {
            prop_assert_eq!(d.sent_round + 1, r.round);
        }
    }
    prop_assert_eq!(out.balances.iter().map(|a| a.0).sum::<u64>(), initial);
    prop_assert_eq!(out.judge.status(), ChannelStatus::Closed);

    // No party reveals in a run before every party of that run committed.
    let starts = &out.iteration_starts;
    let run_of = |r: u64| starts.partition_point(|(_, s)| *s <= r).saturating_sub(1);
    let mut commits: BTreeMap<(usize, PartyId), u64> = BTreeMap::new();
    for m in &out.messages {
        if m.msg.kind() == MessageKind::Commit {
            commits.insert((run_of(m.round), m.msg.sender), m.round);
        }
    }
    for m in &out.messages {
        if m.msg.kind() == MessageKind::Reveal {
            let run = run_of(m.round);
            for p in &m.to {
                if let Some(c) = commits.get(&(run, *p)) {
                    prop_assert!(*c < m.round);
                }
            }
            prop_assert!(commits.get(&(run, m.msg.sender)).is_some_and(|c| *c < m.round));
        }
    }

    // Honest parties finish on one and the same fully signed state.
    let bad = corrupted(cfg);
    let honest: Vec<&Arc<ChannelState>> = out
        .node_states
        .iter()
        .enumerate()
        .filter(|(i, _)| !bad.contains(&PartyId(*i as u16)))
        .filter_map(|(_, s)| s.as_ref())
        .collect();
    for s in &honest {
        prop_assert!(s.same_content(honest[0]) && s.version == honest[0].version);
        let active: Vec<PartyId> = s.active_parties().collect();
        if s.version > 0 {
            prop_assert!(s.signed_by_all(&active, &out.pubkeys));
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn channels_conserve_value_and_stay_consistent(cfg in channel()) {
        let out = netsim::run(&cfg, full()).unwrap();
        check_run(&cfg, &out)?;
        if cfg.adversaries.is_empty() {
            prop_assert_eq!(out.metrics.on_chain_tx, 2 * cfg.n() as u64);
            prop_assert_eq!(out.metrics.off_chain_messages, cfg.fixed_iterations.unwrap() as u64 * 3 * cfg.n() as u64 * (cfg.n() as u64 - 1));
        }
    }

    #[test]
    fn runs_are_deterministic(cfg in channel()) {
        let a = netsim::run(&cfg, full()).unwrap();
        let b = netsim::run(&cfg, full()).unwrap();
        prop_assert_eq!(trace::to_jsonl(&a.trace), trace::to_jsonl(&b.trace));
        prop_assert_eq!(a.metrics.json_line(), b.metrics.json_line());
    }

    #[test]
    fn sent_messages_are_attributable(cfg in channel(), at in any::<prop::sample::Index>(), flip in 1u8..=255) {
        let out = netsim::run(&cfg, full()).unwrap();
        for m in &out.messages {
            let bytes = m.msg.encode();
            let back = OffChainMessage::decode(&bytes).unwrap();
            prop_assert!(back.sender_sig_valid(&out.pubkeys));
        }
        if let Some(m) = out.messages.get(at.index(out.messages.len().max(1))) {
            let mut bytes = m.msg.encode();
            let i = at.index(bytes.len());
            bytes[i] ^= flip;
            if let Ok(forged) = OffChainMessage::decode(&bytes) {
                prop_assert!(!forged.sender_sig_valid(&out.pubkeys));
            }
        }
    }
}
