//! Dataset collection and the two yardsticks for a distilled book:
//! agreement with the wizard and task performance.

use serde::{Deserialize, Serialize};

use super::{Dataset, Label, LabeledDataset};
use crate::par::{self, Exec};
use crate::plant::{self, GridConfig, GridState};
use crate::policy::{self, Policy};
use crate::rng;

/// Roll out `teacher` greedily for `episodes × steps` and record every
/// visited state with the teacher's action. Episode `i` uses sub-stream
/// `("dataset", i)` of `seed`; duplicates are kept.
pub fn collect_dataset<P: Policy>(
    exec: Exec,
    cfg: &GridConfig,
    teacher: &P,
    episodes: usize,
    steps: usize,
    seed: u64,
) -> LabeledDataset {
    let chunks = par::map_range(exec, episodes, |i| {
        let mut r = rng::stream(seed, "dataset", i as u64);
        let start = plant::random_state(cfg, &mut r);
        let ep = policy::rollout(cfg, teacher, start, steps, &mut r);
        let mut d = Dataset::new(cfg.num_features());
        for (s, &a) in ep.states.iter().zip(&ep.actions) {
            d.features.extend(s.features());
            d.labels.push(a);
        }
        d
    });
    let mut out = Dataset::new(cfg.num_features());
    for c in chunks {
        out.extend(c);
    }
    out
}

/// Label each of `states` with `teacher`'s action.
pub fn dataset_from_states<P: Policy>(teacher: &P, states: &[GridState]) -> LabeledDataset {
    let width = states.first().map_or(0, |s| s.passengers.len() * 2);
    let mut d = Dataset::new(width);
    let mut r = rng::from_seed(0);
    for s in states {
        d.features.extend(s.features());
        d.labels.push(teacher.act(s, &mut r));
    }
    d
}

/// All states visited by `policy` over `episodes` rollouts of `steps`
/// steps, episode `i` on sub-stream `("visit", i)` of `seed`.
pub fn visited_states<P: Policy>(
    exec: Exec,
    cfg: &GridConfig,
    policy: &P,
    episodes: usize,
    steps: usize,
    seed: u64,
) -> Vec<GridState> {
    par::map_range(exec, episodes, |i| {
        let mut r = rng::stream(seed, "visit", i as u64);
        let start = plant::random_state(cfg, &mut r);
        let mut ep = policy::rollout(cfg, policy, start, steps, &mut r);
        ep.states.pop();
        ep.states
    })
    .into_iter()
    .flatten()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fidelity {
    pub agreement: f64,
    pub macro_f1: f64,
    pub samples: usize,
}

/// Agreement and macro-F1 of `predicted` against `truth`. Classes that
/// occur in neither sequence do not enter the average.
pub fn fidelity_on<L: Label>(truth: &[L], predicted: &[L]) -> Fidelity {
    assert_eq!(truth.len(), predicted.len());
    let n = truth.len();
    let mut classes: Vec<L> = truth.iter().chain(predicted).copied().collect();
    classes.sort();
    classes.dedup();
    let agree = truth.iter().zip(predicted).filter(|(a, b)| a == b).count();
    let f1s: Vec<f64> = classes
        .iter()
        .map(|&c| {
            let tp = truth.iter().zip(predicted).filter(|&(&t, &p)| t == c && p == c).count() as f64;
            let fp = predicted.iter().filter(|&&p| p == c).count() as f64 - tp;
            let fneg = truth.iter().filter(|&&t| t == c).count() as f64 - tp;
            if tp == 0.0 {
                0.0
            } else {
                2.0 * tp / (2.0 * tp + fp + fneg)
            }
        })
        .collect();
    Fidelity {
        agreement: if n == 0 { 0.0 } else { agree as f64 / n as f64 },
        macro_f1: if f1s.is_empty() { 0.0 } else { f1s.iter().sum::<f64>() / f1s.len() as f64 },
        samples: n,
    }
}

/// How closely `candidate` follows `reference` on `states`.
pub fn fidelity<A: Policy, B: Policy>(candidate: &A, reference: &B, states: &[GridState]) -> Fidelity {
    let mut r = rng::from_seed(0);
    let truth: Vec<_> = states.iter().map(|s| reference.act(s, &mut r)).collect();
    let pred: Vec<_> = states.iter().map(|s| candidate.act(s, &mut r)).collect();
    fidelity_on(&truth, &pred)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Performance {
    pub avg: f64,
    pub max: usize,
    pub per_episode: Vec<usize>,
}

/// Passengers collected per episode, from uniformly random starts.
pub fn performance<P: Policy>(
    exec: Exec,
    cfg: &GridConfig,
    policy: &P,
    episodes: usize,
    steps: usize,
    seed: u64,
) -> Performance {
    let per_episode = policy::pickups_per_episode(exec, cfg, policy, episodes, steps, seed);
    let avg = per_episode.iter().sum::<usize>() as f64 / per_episode.len().max(1) as f64;
    let max = per_episode.iter().copied().max().unwrap_or(0);
    Performance { avg, max, per_episode }
}
