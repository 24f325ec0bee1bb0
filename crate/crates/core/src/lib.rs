//! Train a neural taxi controller (the *wizard*), distill it into decision
//! trees (the *magic book*), and use the book for game-based controller
//! synthesis and SMT-based bounded model checking.
//!
//! Module map:
//!
//! - [`plant`]: the taxi gridworld, sampled stepping and the support relation.
//! - [`wizard`]: Q-network, shaped rewards, Q-learning trainer.
//! - [`magicbook`]: CART trees and random forests over relative features.
//! - [`arena`]: two-player abstraction games built from a book.
//! - [`synth`]: advice-following and multi-agent game solvers, controllers.
//! - [`bmc`]: SMT-LIB encoding, solver driver, witness enumeration.
//! - [`xai`]: explanation datasets gathered by BMC and small explanation trees.
//! - [`dot`]: Graphviz export.

pub mod arena;
pub mod bmc;
pub mod dot;
pub mod magicbook;
pub mod par;
pub mod plant;
pub mod policy;
pub mod rng;
pub mod synth;
pub mod wizard;
pub mod xai;

pub use plant::{Action, Cell, GridConfig, GridState};
