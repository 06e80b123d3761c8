pub mod autograd;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod learning;
pub mod lsa;
pub mod params;
pub mod rationale;
pub mod toy;
pub mod translation;
pub mod util;
