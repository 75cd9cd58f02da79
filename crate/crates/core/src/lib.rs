pub mod config;
pub mod decompose;
pub mod gateway;
pub mod human_eval;
pub mod input;
pub mod model;
pub mod parser;
pub mod prompt;
pub mod report;
pub mod store;
pub mod metrics;
pub mod pipeline;
pub mod probe;
