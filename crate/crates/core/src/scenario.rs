//! Declarative scenario input, loaded from TOML.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction::{Economy, Mechanism, PartyEcon, Role};
use crate::ledger::GasTable;
use crate::party::ComputerPolicy;
use crate::units::{Amount, Fixed, PartyId, Round};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("{path}: {message}")]
    Field { path: String, message: String },
}

impl ConfigError {
    fn field(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Field {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn path(&self) -> Option<&str> {
        match self {
            ConfigError::Field { path, .. } => Some(path),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Channel,
    Strawman,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Channel => "channel",
            Mode::Strawman => "strawman",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartySpec {
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valuation_slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valuation_curvature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_curvature: Option<f64>,
    pub capacity: f64,
}

impl PartySpec {
    pub fn buyer(slope: f64, curvature: f64, capacity: f64) -> Self {
        PartySpec {
            role: Role::Buyer,
            valuation_slope: Some(slope),
            valuation_curvature: Some(curvature),
            cost_curvature: None,
            capacity,
        }
    }

    pub fn seller(cost_curvature: f64, capacity: f64) -> Self {
        PartySpec {
            role: Role::Seller,
            valuation_slope: None,
            valuation_curvature: None,
            cost_curvature: Some(cost_curvature),
            capacity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SilentPhase {
    Commit,
    Reveal,
    BestResponse,
    Verified,
}

/// How a corrupted party deviates. Iteration-bearing behaviors take effect at
/// the first matching step of that iteration or later.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Behavior {
    Honest,
    Silent { iteration: u32, phase: SilentPhase },
    InvalidReveal { iteration: u32 },
    WrongState { iteration: u32 },
    StaleSubmit { version: u32 },
    RevokeAt { iteration: u32 },
    AbortAt { iteration: u32 },
}

impl Behavior {
    /// The iteration from which the party stops behaving honestly, if any.
    pub fn iteration(&self) -> Option<u32> {
        match *self {
            Behavior::Silent { iteration, .. }
            | Behavior::InvalidReveal { iteration }
            | Behavior::WrongState { iteration }
            | Behavior::RevokeAt { iteration }
            | Behavior::AbortAt { iteration } => Some(iteration),
            Behavior::Honest | Behavior::StaleSubmit { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryEntry {
    pub party: u16,
    pub behavior: Behavior,
}

fn d_deposit() -> f64 {
    1.0
}
fn d_balance() -> f64 {
    10.0
}
fn d_delta() -> Round {
    15
}
fn d_dispute_window() -> Round {
    20
}
fn d_gamma() -> f64 {
    Mechanism::default().gamma
}
fn d_eps() -> f64 {
    Mechanism::default().eps
}
fn d_iteration_cap() -> u32 {
    10_000
}
fn d_round_cap() -> Round {
    1_000_000
}
fn d_round_ms() -> f64 {
    101.2
}
fn d_block_ms() -> f64 {
    15_000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_deposit")]
    pub deposit: f64,
    #[serde(default = "d_balance")]
    pub initial_balance: f64,
    #[serde(default = "d_delta")]
    pub delta: Round,
    /// T, in rounds.
    #[serde(default = "d_dispute_window")]
    pub dispute_window: Round,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
    #[serde(default = "d_iteration_cap")]
    pub iteration_cap: u32,
    /// Run exactly this many iterations instead of stopping at equilibrium.
    /// Zero opens and closes the channel without iterating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_iterations: Option<u32>,
    #[serde(default)]
    pub computer_policy: ComputerPolicy,
    #[serde(default)]
    pub forfeit_refund_fraction: f64,
    #[serde(default = "d_round_cap")]
    pub round_cap: Round,
    #[serde(default = "d_round_ms")]
    pub round_duration_ms: f64,
    #[serde(default = "d_block_ms")]
    pub block_time_ms: f64,
    pub parties: Vec<PartySpec>,
    #[serde(default, rename = "adversary", skip_serializing_if = "Vec::is_empty")]
    pub adversaries: Vec<AdversaryEntry>,
    #[serde(default)]
    pub gas: GasTable,
}

impl ScenarioConfig {
    /// A scenario with every setting at its default.
    pub fn with_parties(parties: Vec<PartySpec>) -> Self {
        ScenarioConfig {
            name: None,
            mode: Mode::Channel,
            seed: 0,
            deposit: d_deposit(),
            initial_balance: d_balance(),
            delta: d_delta(),
            dispute_window: d_dispute_window(),
            gamma: d_gamma(),
            eps: d_eps(),
            iteration_cap: d_iteration_cap(),
            fixed_iterations: None,
            computer_policy: ComputerPolicy::default(),
            forfeit_refund_fraction: 0.0,
            round_cap: d_round_cap(),
            round_duration_ms: d_round_ms(),
            block_time_ms: d_block_ms(),
            parties,
            adversaries: Vec::new(),
            gas: GasTable::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::field(path, e.into_inner().message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn n(&self) -> usize {
        self.parties.len()
    }

    pub fn party_ids(&self) -> Vec<PartyId> {
        (0..self.parties.len() as u16).map(PartyId).collect()
    }

    pub fn mechanism(&self) -> Mechanism {
        Mechanism {
            gamma: self.gamma,
            eps: self.eps,
        }
    }

    pub fn behavior(&self, party: PartyId) -> Behavior {
        self.adversaries
            .iter()
            .find(|a| a.party == party.0)
            .map_or(Behavior::Honest, |a| a.behavior)
    }

    pub fn deposit_amount(&self) -> Amount {
        Amount::from_units(self.deposit).expect("validated")
    }

    pub fn initial_balance_amount(&self) -> Amount {
        Amount::from_units(self.initial_balance).expect("validated")
    }

    pub fn economy(&self) -> Economy {
        Economy::new(
            self.parties
                .iter()
                .map(|p| match p.role {
                    Role::Buyer => PartyEcon::Buyer {
                        valuation_slope: Fixed::from_f64(p.valuation_slope.unwrap_or(0.0)).expect("validated"),
                        valuation_curvature: Fixed::from_f64(p.valuation_curvature.unwrap_or(0.0)).expect("validated"),
                        capacity: Fixed::from_f64(p.capacity).expect("validated"),
                    },
                    Role::Seller => PartyEcon::Seller {
                        cost_curvature: Fixed::from_f64(p.cost_curvature.unwrap_or(0.0)).expect("validated"),
                        capacity: Fixed::from_f64(p.capacity).expect("validated"),
                    },
                })
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.parties.len() < 2 {
            return Err(ConfigError::field("parties", "at least two parties are required"));
        }
        if self.parties.len() > u16::MAX as usize - 1 {
            return Err(ConfigError::field("parties", "too many parties"));
        }
        if !self.parties.iter().any(|p| p.role == Role::Buyer) {
            return Err(ConfigError::field("parties", "at least one buyer is required"));
        }
        if !self.parties.iter().any(|p| p.role == Role::Seller) {
            return Err(ConfigError::field("parties", "at least one seller is required"));
        }
        for (i, p) in self.parties.iter().enumerate() {
            let (required, forbidden): (&[(&str, Option<f64>)], &[(&str, Option<f64>)]) = match p.role {
                Role::Buyer => (
                    &[
                        ("valuation_slope", p.valuation_slope),
                        ("valuation_curvature", p.valuation_curvature),
                    ],
                    &[("cost_curvature", p.cost_curvature)],
                ),
                Role::Seller => (
                    &[("cost_curvature", p.cost_curvature)],
                    &[
                        ("valuation_slope", p.valuation_slope),
                        ("valuation_curvature", p.valuation_curvature),
                    ],
                ),
            };
            for (name, value) in required.iter().chain([("capacity", Some(p.capacity))].iter()) {
                let path = format!("parties[{i}].{name}");
                match value {
                    None => return Err(ConfigError::field(path, "missing")),
                    Some(v) if !(v.is_finite() && *v > 0.0) => return Err(ConfigError::field(path, "must be positive")),
                    Some(v) if Fixed::from_f64(*v).map_or(true, |f| f == Fixed::ZERO) => {
                        return Err(ConfigError::field(path, "not representable with six decimals"))
                    }
                    _ => {}
                }
            }
            for (name, value) in forbidden {
                if value.is_some() {
                    return Err(ConfigError::field(
                        format!("parties[{i}].{name}"),
                        format!("not allowed for a {:?}", p.role).to_lowercase(),
                    ));
                }
            }
        }
        if !(self.deposit.is_finite() && self.deposit >= 0.0) || Amount::from_units(self.deposit).is_err() {
            return Err(ConfigError::field("deposit", "must be a non-negative amount"));
        }
        if !(self.initial_balance.is_finite() && self.initial_balance >= self.deposit)
            || Amount::from_units(self.initial_balance).is_err()
        {
            return Err(ConfigError::field("initial_balance", "must cover the deposit"));
        }
        if self.delta == 0 {
            return Err(ConfigError::field("delta", "must be at least 1"));
        }
        if self.dispute_window == 0 {
            return Err(ConfigError::field("dispute_window", "must be at least 1"));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(ConfigError::field("gamma", "must be positive"));
        }
        if !(self.eps >= 0.0) {
            return Err(ConfigError::field("eps", "must be non-negative"));
        }
        if self.iteration_cap == 0 {
            return Err(ConfigError::field("iteration_cap", "must be at least 1"));
        }
        if self.fixed_iterations.is_some_and(|k| k > self.iteration_cap) {
            return Err(ConfigError::field("fixed_iterations", "exceeds iteration_cap"));
        }
        if !(0.0..=1.0).contains(&self.forfeit_refund_fraction) {
            return Err(ConfigError::field("forfeit_refund_fraction", "must be within [0, 1]"));
        }
        if self.round_cap == 0 {
            return Err(ConfigError::field("round_cap", "must be at least 1"));
        }
        if !(self.round_duration_ms.is_finite() && self.round_duration_ms >= 0.0) {
            return Err(ConfigError::field("round_duration_ms", "must be non-negative"));
        }
        if !(self.block_time_ms.is_finite() && self.block_time_ms >= 0.0) {
            return Err(ConfigError::field("block_time_ms", "must be non-negative"));
        }
        if self.gas.block_capacity == 0 {
            return Err(ConfigError::field("gas.block_capacity", "must be at least 1"));
        }
        if !(self.gas.gas_price_eth.is_finite() && self.gas.gas_price_eth >= 0.0) {
            return Err(ConfigError::field("gas.gas_price_eth", "must be non-negative"));
        }
        let mut seen = BTreeSet::new();
        for (i, a) in self.adversaries.iter().enumerate() {
            if a.party as usize >= self.parties.len() {
                return Err(ConfigError::field(format!("adversary[{i}].party"), "no such party"));
            }
            if !seen.insert(a.party) {
                return Err(ConfigError::field(
                    format!("adversary[{i}].party"),
                    "at most one behavior per party",
                ));
            }
            let bad_iteration = a.behavior.iteration().is_some_and(|k| k == 0 || k > self.iteration_cap);
            if bad_iteration {
                return Err(ConfigError::field(
                    format!("adversary[{i}].behavior.iteration"),
                    "must be within 1..=iteration_cap",
                ));
            }
        }
        Ok(())
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ScenarioConfig::from_toml(&text)
}
