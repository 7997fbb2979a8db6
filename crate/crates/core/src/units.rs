//! Identifiers and fixed-point quantities shared by every module.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation time, in synchronous rounds.
pub type Round = u64;

/// Index of a party in the scenario's party list. Encoded on the wire as a
/// little-endian `u16`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartyId(pub u16);

impl PartyId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UnitError {
    #[error("value {0} is not finite")]
    NotFinite(f64),
    #[error("value {0} is outside the representable range")]
    OutOfRange(f64),
}

/// Non-negative fixed-point number with six decimal places, stored in four
/// bytes. Holds prices, quantities and mechanism parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fixed(u32);

impl Fixed {
    pub const SCALE: i64 = 1_000_000;
    pub const ZERO: Fixed = Fixed(0);

    pub const fn from_raw(raw: u32) -> Self {
        Fixed(raw)
    }

    pub const fn raw(self) -> u32 {
        self.0
    }

    /// Rounds to the nearest representable value (half away from zero).
    pub fn from_f64(value: f64) -> Result<Self, UnitError> {
        if !value.is_finite() {
            return Err(UnitError::NotFinite(value));
        }
        let scaled = (value * Self::SCALE as f64).round();
        if scaled < 0.0 || scaled > u32::MAX as f64 {
            return Err(UnitError::OutOfRange(value));
        }
        Ok(Fixed(scaled as u32))
    }

    /// Like [`Fixed::from_f64`] but saturates into `[0, max]` instead of
    /// failing on range. Non-finite input is still an error.
    pub fn saturating_from_f64(value: f64) -> Result<Self, UnitError> {
        if !value.is_finite() {
            return Err(UnitError::NotFinite(value));
        }
        let scaled = (value * Self::SCALE as f64).round();
        Ok(Fixed(scaled.clamp(0.0, u32::MAX as f64) as u32))
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / Self::SCALE as f64
    }

    pub fn to_le_bytes(self) -> [u8; 4] {
        self.0.to_le_bytes()
    }

    pub fn from_le_bytes(bytes: [u8; 4]) -> Self {
        Fixed(u32::from_le_bytes(bytes))
    }
}

impl fmt::Display for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}

/// Currency held on the ledger, in micro-units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Amount(pub u64);

impl Amount {
    pub const SCALE: u64 = 1_000_000;

    pub fn from_units(value: f64) -> Result<Self, UnitError> {
        if !value.is_finite() {
            return Err(UnitError::NotFinite(value));
        }
        let scaled = (value * Self::SCALE as f64).round();
        if scaled < 0.0 || scaled > u64::MAX as f64 {
            return Err(UnitError::OutOfRange(value));
        }
        Ok(Amount(scaled as u64))
    }

    pub fn to_units(self) -> f64 {
        self.0 as f64 / Self::SCALE as f64
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / Self::SCALE, self.0 % Self::SCALE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_rounds_half_away_from_zero() {
        assert_eq!(Fixed::from_f64(1.0000005).unwrap().raw(), 1_000_001);
        assert_eq!(Fixed::from_f64(0.0000004).unwrap().raw(), 0);
        assert_eq!(Fixed::from_f64(6.0).unwrap().to_string(), "6.000000");
    }

    #[test]
    fn fixed_rejects_negative_and_non_finite() {
        assert!(matches!(Fixed::from_f64(-0.1), Err(UnitError::OutOfRange(_))));
        assert!(matches!(Fixed::from_f64(f64::NAN), Err(UnitError::NotFinite(_))));
        assert!(Fixed::from_f64(5000.0).is_err());
        assert_eq!(Fixed::saturating_from_f64(-3.0).unwrap(), Fixed::ZERO);
    }

    #[test]
    fn amount_units() {
        assert_eq!(Amount::from_units(1.0).unwrap(), Amount(1_000_000));
        assert_eq!(Amount(2_500_000).to_string(), "2.500000");
    }
}
