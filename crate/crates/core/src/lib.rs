pub mod auction;
pub mod crypto;
pub mod judge;
pub mod ledger;
pub mod party;
pub mod units;
pub mod metrics;
pub mod netsim;
pub mod scenario;
pub mod strawman;
pub mod harness;
