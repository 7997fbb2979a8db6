//! End-to-end protocol paths, one per deviation the channel must survive.

use std::collections::BTreeSet;

use auction_channel::harness::{self, compare_runs, emit_metrics, load_metrics, Format};
use auction_channel::judge::{ChannelStatus, EventKind, RemovalReason};
use auction_channel::metrics::MetricsRecord;
use auction_channel::netsim::{self, kind_name, RunOptions, RunOutput};
use auction_channel::party::ComputerPolicy;
use auction_channel::scenario::{AdversaryEntry, Behavior, PartySpec, ScenarioConfig, SilentPhase};
use auction_channel::units::PartyId;

fn five() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::with_parties(vec![
        PartySpec::buyer(10.0, 1.0, 20.0),
        PartySpec::seller(1.0, 20.0),
        PartySpec::buyer(9.0, 1.5, 20.0),
        PartySpec::seller(1.5, 20.0),
        PartySpec::buyer(11.0, 2.0, 20.0),
    ]);
    cfg.delta = 3;
    cfg.dispute_window = 4;
    cfg.seed = 3;
    cfg.gamma = 0.1;
    cfg
}

fn with(behavior: Behavior, party: u16) -> ScenarioConfig {
    let mut cfg = five();
    cfg.adversaries = vec![AdversaryEntry { party, behavior }];
    cfg
}

fn run(cfg: &ScenarioConfig) -> RunOutput {
    netsim::run(
        cfg,
        RunOptions {
            record_trace: true,
            record_messages: true,
        },
    )
    .unwrap()
}

fn assert_eliminated(out: &RunOutput, party: u16, n: u64) {
    let m = &out.metrics;
    assert_eq!(m.eliminated, vec![PartyId(party)], "{:?}", m.tx_by_kind);
    assert_eq!(m.tx_of("state_submit_eliminate"), n - 1);
    assert!(m.converged);
    assert_eq!(out.judge.status(), ChannelStatus::Closed);
    assert!(!out.judge.parties().contains(&PartyId(party)));
}

#[test]
fn silence_at_each_step_eliminates_the_silent_party() {
    for phase in [SilentPhase::Commit, SilentPhase::Reveal, SilentPhase::BestResponse, SilentPhase::Verified] {
        // Party 2 computes iteration 3 under round robin.
        let out = run(&with(Behavior::Silent { iteration: 3, phase }, 2));
        assert_eliminated(&out, 2, 5);
    }
}

#[test]
fn silent_initiator_is_blamed_even_when_others_are_missing() {
    let out = run(&with(
        Behavior::Silent {
            iteration: 1,
            phase: SilentPhase::Commit,
        },
        0,
    ));
    assert_eliminated(&out, 0, 5);
}

#[test]
fn invalid_opening_eliminates_its_sender() {
    let out = run(&with(Behavior::InvalidReveal { iteration: 2 }, 3));
    assert_eliminated(&out, 3, 5);
}

#[test]
fn tampered_state_eliminates_the_computer_or_verifier() {
    // Party 1 computes iteration 2; from iteration 3 it only verifies.
    for iteration in [2, 3] {
        let out = run(&with(Behavior::WrongState { iteration }, 1));
        assert_eliminated(&out, 1, 5);
    }
}

#[test]
fn abort_eliminates_the_aborting_party() {
    let out = run(&with(Behavior::AbortAt { iteration: 4 }, 4));
    assert_eliminated(&out, 4, 5);
}

#[test]
fn interrupted_iteration_restarts_with_the_same_version() {
    let out = run(&with(
        Behavior::Silent {
            iteration: 3,
            phase: SilentPhase::Reveal,
        },
        2,
    ));
    let threes: Vec<_> = out.iteration_starts.iter().filter(|(k, _)| *k == 3).collect();
    assert_eq!(threes.len(), 2);
    let final_version = out.final_state.as_ref().unwrap().version;
    assert_eq!(out.metrics.iterations_run, final_version);
}

#[test]
fn eliminated_deposit_is_shared_by_the_rest() {
    let out = run(&with(Behavior::InvalidReveal { iteration: 2 }, 3));
    let cfg = five();
    let b = cfg.initial_balance_amount().0;
    let d = cfg.deposit_amount().0;
    assert_eq!(out.balances[3].0, b - d);
    for i in [0, 1, 2, 4] {
        assert_eq!(out.balances[i].0, b + d / 4);
    }
}

#[test]
fn refund_fraction_returns_part_of_the_deposit() {
    let mut cfg = with(Behavior::InvalidReveal { iteration: 2 }, 3);
    cfg.forfeit_refund_fraction = 0.5;
    let out = run(&cfg);
    let b = cfg.initial_balance_amount().0;
    let d = cfg.deposit_amount().0;
    assert_eq!(out.balances[3].0, b - d / 2);
    assert_eq!(out.balances.iter().map(|a| a.0).sum::<u64>(), 5 * b);
}

#[test]
fn stale_state_is_overwritten_by_one_honest_party() {
    let out = run(&with(Behavior::StaleSubmit { version: 2 }, 1));
    let m = &out.metrics;
    assert_eq!(m.tx_of("state_submit"), 2);
    let submitters: BTreeSet<PartyId> = out
        .confirmed
        .iter()
        .filter(|c| kind_name(auction_channel::judge::call_kind(&c.tx.call)) == "state_submit")
        .map(|c| c.tx.sender)
        .collect();
    assert_eq!(submitters.len(), 2);
    assert!(submitters.contains(&PartyId(1)));
    assert_eq!(out.judge.best_version(), out.final_state.unwrap().version as i64);
    assert!(m.eliminated.is_empty());
}

#[test]
fn stale_submit_of_the_final_version_does_not_open_a_second_challenge() {
    let honest = run(&five());
    let last = honest.metrics.iterations_run;
    let out = run(&with(Behavior::StaleSubmit { version: last }, 1));
    assert_eq!(out.metrics.tx_of("state_submit"), 1);
    assert_eq!(out.judge.best_version(), last as i64);
}

#[test]
fn revocation_before_the_first_iteration() {
    let out = run(&with(Behavior::RevokeAt { iteration: 1 }, 4));
    let m = &out.metrics;
    assert_eq!(m.revoked, vec![PartyId(4)]);
    assert_eq!(m.tx_of("revoke"), 1);
    assert_eq!(out.balances[4], five().initial_balance_amount());
    assert!(m.converged);
    let removed: Vec<_> = out
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::PartyRemoved { party, reason } => Some((*party, *reason)),
            _ => None,
        })
        .collect();
    assert_eq!(removed, vec![(PartyId(4), RemovalReason::Revoked)]);
}

#[test]
fn who_computes_does_not_change_the_outcome() {
    let a = run(&five()).metrics;
    let mut cfg = five();
    cfg.computer_policy = ComputerPolicy::SeededRandom;
    let b = run(&cfg).metrics;
    assert_eq!(a.final_allocations, b.final_allocations);
    assert_eq!(a.final_price, b.final_price);
    assert_eq!(a.off_chain_messages, b.off_chain_messages);
}

#[test]
fn metrics_match_a_recount_of_the_trace() {
    for cfg in [five(), with(Behavior::InvalidReveal { iteration: 2 }, 3), with(Behavior::StaleSubmit { version: 1 }, 0)] {
        let out = run(&cfg);
        let m = &out.metrics;
        let delivered: u64 = out.trace.iter().map(|r| r.delivered.len() as u64).sum();
        let bytes: u64 = out.trace.iter().flat_map(|r| &r.delivered).map(|d| d.body_bytes as u64).sum();
        let submitted: u64 = out.trace.iter().map(|r| r.submitted.len() as u64).sum();
        let gas: u64 = out.trace.iter().flat_map(|r| &r.submitted).map(|t| t.gas).sum();
        let blocks: BTreeSet<u64> = out.trace.iter().flat_map(|r| &r.confirmed).filter_map(|t| t.block).collect();
        let busy = out.trace.iter().filter(|r| !r.delivered.is_empty()).count() as u64;
        assert_eq!(m.off_chain_messages, delivered);
        assert_eq!(m.off_chain_bytes, bytes);
        assert_eq!(m.on_chain_tx, submitted);
        assert_eq!(m.gas_total, gas);
        assert_eq!(m.blocks_used, blocks.len() as u64);
        assert_eq!(m.rounds_elapsed, out.trace.len() as u64);
        assert_eq!(m.off_chain_rounds, busy);
    }
}

#[test]
fn comparison_reports_deltas_and_mismatches() {
    let a = run(&five()).metrics;
    let same = compare_runs(&a, &a);
    assert!(same.deltas.iter().all(|d| d.diff == 0.0 && d.percent.is_none_or(|p| p == 0.0)));
    assert!(!same.allocation_mismatch);

    let mut b = a.clone();
    b.final_allocations[0].1 += 2e-3;
    let cmp = compare_runs(&a, &b);
    assert!(cmp.allocation_mismatch);
    assert!((cmp.max_allocation_gap - 2e-3).abs() < 1e-12);
    assert!(cmp.to_string().contains("MISMATCH"));
}

#[test]
fn metrics_files_are_stable_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let records: Vec<MetricsRecord> = vec![run(&five()).metrics, run(&five()).metrics];
    let csv = dir.path().join("m.csv");
    let csv2 = dir.path().join("m2.csv");
    emit_metrics(&records, Format::Csv, &csv).unwrap();
    emit_metrics(&records, Format::Csv, &csv2).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text, std::fs::read_to_string(&csv2).unwrap());
    assert_eq!(text.lines().next().unwrap(), MetricsRecord::csv_header());
    assert_eq!(text.lines().count(), 3);

    let jsonl = dir.path().join("m.jsonl");
    emit_metrics(&records, Format::JsonLines, &jsonl).unwrap();
    assert_eq!(load_metrics(&jsonl).unwrap(), records);

    assert!(emit_metrics(&records, Format::Csv, &dir.path().join("missing/m.csv")).is_err());
}

#[test]
fn lifecycle_only_channel_opens_and_closes() {
    let out = netsim::run(&harness::lifecycle_config(40), RunOptions::default()).unwrap();
    assert_eq!(out.metrics.on_chain_tx, 80);
    assert_eq!(out.metrics.blocks_used, 2);
    assert_eq!(out.metrics.off_chain_messages, 0);
    assert_eq!(out.judge.status(), ChannelStatus::Closed);
}
