pub mod auth;
pub mod exec;
pub mod federation;
pub mod harness;
pub mod ingestion;
pub mod monitoring;
pub mod node;
pub mod osdspec;
pub mod registry;
pub mod scheduler;
pub mod sdum;
pub mod sparql;
pub mod store;
pub mod vocab;
