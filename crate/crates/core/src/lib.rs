//! Tiered DRAM + persistent-memory page placement simulator.

pub mod calibration;
pub mod page;
pub mod tier;
pub mod workload;
pub mod selection;
pub mod events;
pub mod policy;
pub mod engine;
pub mod harness;
