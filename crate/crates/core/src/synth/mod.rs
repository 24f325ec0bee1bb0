//! Game solving: the finite-horizon advice game and the bus/taxi
//! recurrence game, plus the controllers they yield.

mod advice;
mod controller;
mod multi;

pub use advice::{oracle_value, solve_advice, strategy_guarantee, AdviceSolution, Value};
pub use controller::{agree_count, run_controller, Controller, RunReport, Shield};
pub use multi::{run_multi, solve_multiagent, winning_strategy, MultiReport, MultiStrategy, Unrealizable};
