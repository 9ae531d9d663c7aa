//! Fault injection orchestration and online fault classification for HPC
//! nodes.

pub mod cli;
pub mod clock;
pub mod config;
pub mod controller;
pub mod demo;
pub mod engine;
pub mod execlog;
pub mod faults;
pub mod features;
pub mod ml;
pub mod protocol;
pub mod task;
pub mod telemetry;
pub mod workloadgen;
