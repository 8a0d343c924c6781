//! Desk-scale testbed for the explicit flow measurement loss bits (L, Q, R,
//! T) and the spin bit: endpoint marking logic, a passive observer, a
//! deterministic client–observer–server simulator, and an experiment
//! harness.

pub mod endpoint;
pub mod harness;
pub mod netsim;
pub mod observer;
pub mod trace;
pub mod traffic;
