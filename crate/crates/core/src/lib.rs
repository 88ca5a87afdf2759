//! Multi-agent on-ramp merging with bounded observation faults.
//!
//! Vehicles share one actor and keep per-vehicle critics. A fault injector
//! perturbs one neighbor reading of one vehicle, and the fault-tolerant agent
//! runs a GRU that flags the faulted slot and reconstructs its value before
//! the actor sees it.
//!
//! Examples (`crates/core/examples/`):
//!
//! - `env_rollout`: the simulator under a fixed driving rule
//! - `fault_injection`: one sampled fault and the recipient's view
//! - `train_fault_free`: vanilla training without faults
//! - `joint_training`: agent and injector trained together
//! - `adversarial_injector`: an injector trained against a frozen policy
//! - `detection_report`: detection and recovery on held-out episodes
//! - `generalization`: policy variants against each fault condition
//! - `checkpoint_resume`: bit-exact continuation from a checkpoint
//! - `gradient_check`: finite differences on the temporal loss

pub mod agents;
pub mod checkpoint;
pub mod env;
pub mod error;
pub mod eval;
pub mod nn;
pub mod observation;
pub mod training;
pub mod cli;
pub mod config;

pub use error::{Error, Result};
