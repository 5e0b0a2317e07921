pub mod audit;
pub mod classify;
pub mod config;
pub mod cstruct;
pub mod diff;
pub mod extract;
pub mod fsutil;
pub mod generate;
pub mod ingest;
pub mod lang;
pub mod metrics;
pub mod pipeline;
pub mod scenario;
