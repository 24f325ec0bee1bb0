use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use wizbook::arena::{ArenaOptions, SpecMonitor};
use wizbook::bmc::{BmcSpec, SolverConfig};
use wizbook::wizard::TrainConfig;
use wizbook::xai::GatherOptions;
use wizbook::{Cell, GridConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    pub grid: GridConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub book: BookSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub multi: Option<MultiSection>,
    #[serde(default)]
    pub bmc: BmcSection,
    #[serde(default)]
    pub xai: XaiSection,
    #[serde(default)]
    pub paths: Paths,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BookKind {
    Tree,
    #[default]
    Forest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BookSection {
    pub kind: BookKind,
    pub trees: usize,
    /// Unbounded when absent.
    pub depth: Option<usize>,
    /// Dataset size is `episodes * steps` wizard-visited states.
    pub episodes: usize,
    pub steps: usize,
}

impl Default for BookSection {
    fn default() -> Self {
        BookSection { kind: BookKind::Forest, trees: 5, depth: Some(10), episodes: 50, steps: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub episodes: usize,
    pub steps: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { episodes: 10, steps: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub monitor: SpecMonitor,
    pub horizon: usize,
    pub arena: ArenaOptions,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection { monitor: SpecMonitor::Trivial, horizon: 1000, arena: ArenaOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiSection {
    pub station_a: Cell,
    pub station_b: Cell,
    pub bus: Cell,
    pub taxi: Cell,
    /// Let the taxi play any action instead of the book's.
    #[serde(default)]
    pub adversarial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BmcSection {
    pub solver: SolverConfig,
    pub bounds: Vec<usize>,
    pub specs: Vec<BmcSpec>,
    /// Witnesses to enumerate per (spec, bound).
    pub count: usize,
}

impl Default for BmcSection {
    fn default() -> Self {
        BmcSection {
            solver: SolverConfig::default(),
            bounds: vec![6, 7, 8, 9],
            specs: vec![BmcSpec::WallHit, BmcSpec::NoPickupLasso],
            count: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct XaiSection {
    pub gather: GatherOptions,
    pub max_depth: usize,
}

impl Default for XaiSection {
    fn default() -> Self {
        XaiSection { gather: GatherOptions::default(), max_depth: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub artifacts: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { artifacts: PathBuf::from("artifacts") }
    }
}
