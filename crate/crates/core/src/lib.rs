pub mod b64;
pub mod calibration;
pub mod content_store;
pub mod corpus;
pub mod crypto;
pub mod detector;
pub mod escrow_contract;
pub mod fingerprint;
pub mod ledger;
pub mod simulation;
