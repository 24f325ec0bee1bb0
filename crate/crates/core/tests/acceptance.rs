use std::sync::OnceLock;
use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use wizbook::arena::{
    build_arena, build_multi_arena, leaf_regions, Arena, ArenaOptions, Legality, MultiConfig, SpecMonitor, TaxiArena,
};
use wizbook::bmc::{self, BmcSpec, SolverConfig, SolverMode};
use wizbook::magicbook::{
    book_action, collect_dataset, dataset_from_states, fidelity, fit_forest, fit_tree, performance, visited_states,
    FitOptions, Forest, TreePolicy,
};
use wizbook::par::Exec;
use wizbook::policy::Chaser;
use wizbook::synth::{
    oracle_value, run_controller, run_multi, solve_advice, solve_multiagent, Controller, Shield, Value,
};
use wizbook::wizard::{self, QNet, TrainConfig, Transition, Wizard};
use wizbook::{plant, rng, Action, Cell, GridConfig, GridState};

const EXEC: Exec = Exec::Parallel;

fn desk_train(seed: u64) -> TrainConfig {
    TrainConfig { episodes: 2000, steps_per_episode: 200, hidden: vec![64, 64], seed, ..Default::default() }
}

struct Line {
    id: u32,
    pass: bool,
    kind: Kind,
    detail: String,
}

enum Kind {
    Exact,
    /// Exact part with its own outcome, plus soft anchors.
    Mixed(bool),
    Statistical,
}

impl Line {
    /// Whether an exact part exists and failed.
    fn exact_failed(&self) -> bool {
        match self.kind {
            Kind::Exact => !self.pass,
            Kind::Mixed(ok) => !ok,
            Kind::Statistical => false,
        }
    }

    fn skip(id: u32, why: &str) -> Line {
        Line { id, pass: false, kind: Kind::Statistical, detail: format!("SKIP {why}") }
    }
}

/// Shared desk-scale artefacts, built on first use.
struct Desk {
    cfg: GridConfig,
    wizards: [OnceLock<Wizard>; 3],
    dt: OnceLock<TreePolicy>,
    rf: OnceLock<TreePolicy>,
    gas: OnceLock<(TaxiArena, Controller)>,
}

const GAS: Cell = Cell { x: 4, y: 4 };

impl Desk {
    fn new() -> Desk {
        Desk {
            cfg: GridConfig::new(10, 3),
            wizards: Default::default(),
            dt: OnceLock::new(),
            rf: OnceLock::new(),
            gas: OnceLock::new(),
        }
    }

    fn wizard(&self, seed: u64) -> &Wizard {
        self.wizards[seed as usize].get_or_init(|| {
            let t = Instant::now();
            let (w, _) = wizard::train(&self.cfg, &desk_train(seed)).unwrap();
            let _ = writeln!(std::io::stderr(), "trained wizard {seed} in {:.0?}", t.elapsed());
            w
        })
    }

    fn dt_of(&self, seed: u64) -> TreePolicy {
        let d = collect_dataset(EXEC, &self.cfg, self.wizard(seed), 100, 1000, 10 + seed);
        Forest::single(fit_tree(&d, Some(10)).unwrap())
    }

    fn dt(&self) -> &TreePolicy {
        self.dt.get_or_init(|| self.dt_of(0))
    }

    fn rf(&self) -> &TreePolicy {
        self.rf.get_or_init(|| {
            let d = collect_dataset(EXEC, &self.cfg, self.wizard(0), 100, 1000, 10);
            fit_forest(&d, &FitOptions::forest(5, Some(10), 0), EXEC).unwrap()
        })
    }

    fn gas(&self) -> &(TaxiArena, Controller) {
        self.gas.get_or_init(|| {
            let cfg = self.cfg.clone().with_gas_station(GAS);
            let mon = SpecMonitor::Timer { t: 30, gas: GAS };
            let arena = build_arena(&cfg, &mon, self.dt(), &ArenaOptions::default(), EXEC).unwrap();
            let ctrl = Controller::synthesize(&arena, self.dt(), 1000);
            (arena, ctrl)
        })
    }
}

fn z3(timeout_ms: u64) -> Option<SolverConfig> {
    let s = SolverConfig { timeout_ms, mode: SolverMode::Incremental, ..Default::default() };
    s.available().then_some(s)
}

fn chaser_book(cfg: &GridConfig, trees: usize, depth: usize) -> TreePolicy {
    let d = dataset_from_states(&Chaser, &plant::all_states(cfg));
    if trees == 1 {
        Forest::single(fit_tree(&d, Some(depth)).unwrap())
    } else {
        fit_forest(&d, &FitOptions::forest(trees, Some(depth), 3), EXEC).unwrap()
    }
}

fn lemma1() -> Line {
    let cfg = GridConfig::new(4, 1);
    let states = plant::all_states(&cfg);
    let mut checked = 0usize;
    let mut bad = 0usize;
    for book in [chaser_book(&cfg, 1, 4), chaser_book(&cfg, 5, 3)] {
        let regions = leaf_regions(&book, &cfg);
        for s in &states {
            let f = s.features();
            let a = book_action(&book, s);
            for r in regions.iter().filter(|r| r.contains(&book, &f)) {
                checked += 1;
                bad += usize::from(r.action != a);
            }
        }
    }
    Line {
        id: 1,
        pass: bad == 0 && checked >= 2 * states.len(),
        kind: Kind::Exact,
        detail: format!("4x4 k=1, DT and RF(5,3): {checked} (state, region) pairs, {bad} mismatches"),
    }
}

fn lemma2(desk: &Desk) -> Line {
    let (arena, ctrl) = desk.gas();
    let cfg = &arena.grid;
    let results = wizbook::par::map_range(EXEC, 1000, |i| {
        let mut r = rng::stream(2, "lemma2", i as u64);
        let rep = run_controller(ctrl, plant::random_state(cfg, &mut r), 100, &mut r);
        arena.check_play(desk.dt(), &rep.episode.states, &rep.episode.actions).is_ok()
    });
    let ok = results.iter().filter(|&&b| b).count();
    Line { id: 2, pass: ok == 1000, kind: Kind::Exact, detail: format!("{ok}/1000 controller rollouts (100 steps) are plays") }
}

fn gas_station(desk: &Desk) -> Line {
    let (_, ctrl) = desk.gas();
    let cfg = &ctrl.grid;
    let (mut violations, mut below, mut pickups) = (0, 0, 0);
    for i in 0..10u64 {
        let mut r = rng::stream(3, "gas", i);
        // starts from which the deadline can be met
        let start = loop {
            let s = plant::random_state(cfg, &mut r);
            if !ctrl.x_star(&s, 1000).is_violation() {
                break s;
            }
        };
        let rep = run_controller(ctrl, start, 1000, &mut r);
        violations += rep.violations;
        below += usize::from(Value::Agree(rep.agree as u32) < rep.x_star);
        pickups += rep.episode.pickups;
    }
    let ctrl_avg = pickups as f64 / 10.0;
    let wiz = performance(EXEC, &desk.cfg, desk.wizard(0), 10, 1000, 33).avg;
    let ratio = ctrl_avg / wiz;
    let hard = violations == 0 && below == 0;
    Line {
        id: 3,
        pass: hard && ratio >= 0.6,
        kind: Kind::Mixed(hard),
        detail: format!(
            "10x10 k=3 t=30 DT(10): {violations} violations, {below} runs below x*, pickups {ctrl_avg:.1} vs wizard {wiz:.1} (ratio {ratio:.2}, soft >= 0.60)"
        ),
    }
}

fn advice_oracle() -> Line {
    let mut r = rng::stream(4, "arenas", 0);
    let mut mismatches = 0;
    let mut compared = 0;
    for _ in 0..200 {
        let nv = r.gen_range(1..=30);
        let h = r.gen_range(0..=5);
        let p = r.gen_range(0.0..0.3);
        let a = Arena::random(nv, 3, p, &mut r);
        let sol = solve_advice(&a, h);
        for v in 0..nv {
            for hh in 0..=h {
                compared += 1;
                mismatches += usize::from(sol.value(v, hh) != oracle_value(&a, v, hh));
            }
        }
    }
    Line {
        id: 4,
        pass: mismatches == 0,
        kind: Kind::Exact,
        detail: format!("200 random arenas (<=30 vertices, <=3 moves, H<=5): {compared} values, {mismatches} mismatches"),
    }
}

fn multi_agent() -> Line {
    let grid = GridConfig::new(6, 1);
    let tc = TrainConfig { episodes: 300, steps_per_episode: 200, hidden: vec![32, 32], warmup: 500, seed: 5, ..Default::default() };
    let (w, _) = wizard::train(&grid, &tc).unwrap();
    let d = collect_dataset(EXEC, &grid, &w, 50, 500, 5);
    let book = Forest::single(fit_tree(&d, Some(8)).unwrap());
    let cfg = MultiConfig::new(grid.clone(), Cell::new(0, 0), Cell::new(5, 5));
    let (bus, taxi) = (Cell::new(2, 1), Cell::new(1, 3));

    let adv = build_multi_arena(&cfg, Legality::Adversarial, EXEC).unwrap();
    let adv_unreal = solve_multiagent(&adv, adv.initial(bus, taxi)).is_err();
    let m = build_multi_arena(&cfg, Legality::Book(&book), EXEC).unwrap();
    let Ok(strat) = solve_multiagent(&m, m.initial(bus, taxi)) else {
        return Line { id: 5, pass: false, kind: Kind::Exact, detail: format!("adversarial unrealizable: {adv_unreal}; book-restricted game unrealizable") };
    };
    let reps = wizbook::par::map_range(EXEC, 100, |i| {
        let mut r = rng::stream(5, "multi", i as u64);
        let free: Vec<Cell> = grid.free_cells().into_iter().filter(|&c| c != taxi).collect();
        let start = GridState::new(taxi, vec![*free.choose(&mut r).unwrap()]);
        run_multi(&m, &strat, &book, bus, start, 500, &mut r)
    });
    let crashes: usize = reps.iter().map(|r| r.crashes).sum();
    let min_alt = reps.iter().map(|r| r.alternations).min().unwrap();
    Line {
        id: 5,
        pass: adv_unreal && crashes == 0 && min_alt >= 5,
        kind: Kind::Exact,
        detail: format!(
            "6x6: adversarial unrealizable {adv_unreal}, book-restricted realizable; 100x500 rollouts: {crashes} crashes, min alternations {min_alt}"
        ),
    }
}

fn bmc_brute() -> Line {
    let Some(solver) = z3(60_000) else { return Line::skip(6, "z3 not found") };
    let cfg = GridConfig::new(4, 1);
    let book = chaser_book(&cfg, 1, 4);
    let spec = BmcSpec::PassengerFirst { j: 1 };
    let by_book = |s: &GridState| book_action(&book, s);
    let mut parts = Vec::new();
    let mut ok = true;
    for l in 1..=4 {
        let oracle = bmc::brute_force(&cfg, &book, &spec, l);
        let e = bmc::enumerate(&cfg, &book, &spec, l, usize::MAX, &solver, &by_book).unwrap();
        let got: BTreeSet<_> = e.reports.iter().map(|r| r.trace.clone()).collect();
        ok &= e.exhausted && got.len() == e.reports.len() && got == oracle;
        parts.push(format!("l={l}: {}/{}", got.len(), oracle.len()));
    }
    Line { id: 6, pass: ok, kind: Kind::Exact, detail: format!("4x4 k=1 passenger_first(1), enumerated/oracle: {}", parts.join(", ")) }
}

fn bmc_desk(desk: &Desk) -> Line {
    let Some(solver) = z3(120_000) else { return Line::skip(7, "z3 not found") };
    let book = desk.rf();
    let w = desk.wizard(0);
    let wiz = |s: &GridState| w.policy(s);
    let (mut total, mut valid, mut wiz_valid) = (0, 0, 0);
    let mut time = std::time::Duration::ZERO;
    let mut parts = Vec::new();
    for l in 6..=9 {
        for j in 1..=3 {
            let spec = BmcSpec::PassengerFirstNotClosest { j };
            let e = bmc::enumerate(&desk.cfg, book, &spec, l, 250, &solver, &wiz).unwrap();
            total += e.reports.len();
            valid += e.reports.iter().filter(|r| r.book_valid && r.spec_holds == Some(true)).count();
            wiz_valid += e.reports.iter().filter(|r| r.wizard_valid).count();
            time += e.solve_time;
            parts.push(format!("l{l}p{j} {} {:.0}%", e.reports.len(), 100.0 * e.wizard_valid_ratio()));
        }
    }
    let ratio = wiz_valid as f64 / total.max(1) as f64;
    let per = time.as_secs_f64() / total.max(1) as f64;
    let hard = total > 0 && valid == total;
    Line {
        id: 7,
        pass: hard && total == 3000 && ratio >= 0.6 && per <= 5.0,
        kind: Kind::Mixed(hard),
        detail: format!(
            "RF(5,10) 10x10 k=3: {total} traces, {valid} book-valid, wizard-valid {:.1}% (soft >= 60%), {per:.3} s/trace (soft <= 5) [{}]",
            100.0 * ratio,
            parts.join(", ")
        ),
    }
}

/// Sat/Unsat of `spec` at bound `l`; `None` on timeout.
fn has_witness(cfg: &GridConfig, book: &TreePolicy, spec: &BmcSpec, l: usize, solver: &SolverConfig) -> Option<(bool, bool)> {
    let by_book = |s: &GridState| book_action(book, s);
    let e = bmc::enumerate(cfg, book, spec, l, 1, solver, &by_book).unwrap();
    if e.unknown.is_some() {
        return None;
    }
    let replay = e.reports.iter().all(|r| r.book_valid && r.spec_holds == Some(true) && r.trace.is_consistent(cfg));
    Some((!e.reports.is_empty(), replay))
}

fn verification(desk: &Desk) -> Line {
    let Some(solver) = z3(300_000) else { return Line::skip(8, "z3 not found") };
    let book = desk.rf();
    let mut ok = true;
    let mut lasso_found = false;
    let mut walls = Vec::new();
    let mut unsat_bounds = Vec::new();
    for l in 1..=9 {
        match has_witness(&desk.cfg, book, &BmcSpec::WallHit, l, &solver) {
            Some((sat, replay)) => {
                ok &= replay;
                walls.push(if sat { "W" } else { "U" });
                if !sat {
                    unsat_bounds.push(l);
                }
            }
            None => {
                ok = false;
                walls.push("?");
            }
        }
        if !lasso_found {
            if let Some((sat, replay)) = has_witness(&desk.cfg, book, &BmcSpec::NoPickupLasso, l, &solver) {
                ok &= replay;
                lasso_found = sat;
            }
        }
    }
    // reduced instance: solver verdicts against exhaustive search
    let small = GridConfig::new(5, 1);
    let small_book = {
        let tc = TrainConfig { episodes: 200, steps_per_episode: 200, hidden: vec![32, 32], warmup: 500, seed: 8, ..Default::default() };
        let (w, _) = wizard::train(&small, &tc).unwrap();
        Forest::single(fit_tree(&collect_dataset(EXEC, &small, &w, 50, 500, 8), Some(6)).unwrap())
    };
    let mut cross = 0;
    for l in 1..=6 {
        for spec in [BmcSpec::WallHit, BmcSpec::NoPickupLasso] {
            let exhaustive = !bmc::brute_force(&small, &small_book, &spec, l).is_empty();
            let by_book = |s: &GridState| book_action(&small_book, s);
            let e = bmc::enumerate(&small, &small_book, &spec, l, 1, &solver, &by_book).unwrap();
            let agree = e.unknown.is_none() && (e.reports.is_empty() == !exhaustive) && (e.exhausted == !exhaustive);
            ok &= agree;
            cross += 1;
        }
    }
    let hard = ok && lasso_found;
    Line {
        id: 8,
        pass: hard,
        kind: Kind::Mixed(hard),
        detail: format!(
            "desk RF(5,10): lasso witness {lasso_found}; wall_hit l=1..9 [{}] (W witness, U unsat); 5x5 solver vs exhaustive {cross} checks agree {ok}",
            walls.join("")
        ),
    }
}

fn distillation(desk: &Desk) -> Line {
    let mut passed = 0;
    let mut parts = Vec::new();
    for seed in 0..3u64 {
        let w = desk.wizard(seed);
        let dt = if seed == 0 { desk.dt().clone() } else { desk.dt_of(seed) };
        let states = visited_states(EXEC, &desk.cfg, w, 100, 1000, 90 + seed);
        let f = fidelity(&dt, w, &states);
        let pw = performance(EXEC, &desk.cfg, w, 100, 1000, 95 + seed).avg;
        let pb = performance(EXEC, &desk.cfg, &dt, 100, 1000, 95 + seed).avg;
        let ratio = pb / pw;
        let ok = f.agreement >= 0.8 && ratio >= 0.8;
        passed += usize::from(ok);
        parts.push(format!("seed {seed}: agree {:.3}, book {pb:.1} / wizard {pw:.1} = {ratio:.2}", f.agreement));
    }
    Line { id: 9, pass: passed >= 2, kind: Kind::Statistical, detail: format!("{passed}/3 seeds pass [{}]", parts.join("; ")) }
}

fn gradient() -> Line {
    let mut r = rng::stream(10, "fd", 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mut dims = vec![r.gen_range(1..=6)];
        for _ in 0..r.gen_range(1..=3) {
            dims.push(r.gen_range(1..=8));
        }
        dims.push(4);
        let net = QNet::random_uniform(&dims, 1.0, &mut r);
        let target = QNet::random_uniform(&dims, 1.0, &mut r);
        let batch: Vec<Transition> = (0..r.gen_range(1..=4))
            .map(|_| Transition {
                input: (0..dims[0]).map(|_| r.gen_range(-1.0..1.0)).collect(),
                action: Action::ALL[r.gen_range(0..4)],
                reward: r.gen_range(-1.0..1.0),
                next_input: (0..dims[0]).map(|_| r.gen_range(-1.0..1.0)).collect(),
            })
            .collect();
        let gamma = r.gen_range(0.0..0.99);
        let (_, grad) = net.td_loss_and_grad(&target, &batch, gamma);
        let eps = 1e-6;
        let mut num = vec![0.0; grad.len()];
        for (i, n) in num.iter_mut().enumerate() {
            let mut plus = net.clone();
            plus.params_mut()[i] += eps;
            let mut minus = net.clone();
            minus.params_mut()[i] -= eps;
            *n = (plus.td_loss_and_grad(&target, &batch, gamma).0 - minus.td_loss_and_grad(&target, &batch, gamma).0) / (2.0 * eps);
        }
        let diff: f64 = grad.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = grad.iter().map(|a| a * a).sum::<f64>().sqrt().max(num.iter().map(|a| a * a).sum::<f64>().sqrt());
        if scale > 0.0 {
            worst = worst.max(diff / scale);
        }
    }
    Line { id: 10, pass: worst <= 1e-4, kind: Kind::Exact, detail: format!("100 draws, worst relative error {worst:.2e} (<= 1e-4)") }
}

/// Vertical wall at x = 5 with a single gap at (5, 0), which is also the
/// gas station.
fn walled(cfg: &GridConfig) -> GridConfig {
    cfg.clone().with_walls((1..cfg.n).map(|y| Cell::new(5, y))).with_gas_station(Cell::new(5, 0))
}

fn wall_crossing(desk: &Desk) -> Line {
    let w = desk.wizard(0);
    let grid = walled(&desk.cfg);
    let gas = Cell::new(5, 0);
    let mon = SpecMonitor::Timer { t: 5, gas };
    let book = desk.dt();
    let arena = build_arena(&grid, &mon, book, &ArenaOptions::default(), EXEC).unwrap();
    let ctrl = Controller::synthesize(&arena, book, 1000);
    let far: Vec<Cell> = grid.free_cells().into_iter().filter(|c| c.x > 5 && c.y >= 2).collect();
    let crossed = |states: &[GridState]| states.iter().any(|s| s.taxi.x > 5);
    let (mut ctrl_cross, mut shield_cross) = (0, 0);
    for seed in 0..10u64 {
        let mut r = rng::stream(seed, "wall", 0);
        let start = GridState::new(Cell::new(4, 1), far.choose_multiple(&mut r, 3).copied().collect());
        let mut r1 = rng::stream(seed, "wall_run", 0);
        let rep = run_controller(&ctrl, start.clone(), 1000, &mut r1);
        ctrl_cross += usize::from(crossed(&rep.episode.states));
        let mut r2 = rng::stream(seed, "wall_run", 0);
        let ep = wizbook::policy::rollout(&grid, &Shield::new(w, &grid), start, 1000, &mut r2);
        shield_cross += usize::from(crossed(&ep.states));
    }
    Line {
        id: 11,
        pass: ctrl_cross >= 6 && shield_cross == 0,
        kind: Kind::Statistical,
        detail: format!("walled 10x10, t=5: controller crossed {ctrl_cross}/10 (>= 6), shield {shield_cross}/10 (== 0)"),
    }
}

#[test]
fn acceptance() {
    let desk = Desk::new();
    let mut lines = Vec::new();
    let mut run = |f: &dyn Fn() -> Line| {
        let t = Instant::now();
        let l = f();
        let status = if l.detail.starts_with("SKIP") {
            "SKIP"
        } else if l.pass {
            "PASS"
        } else {
            "FAIL"
        };
        // straight to the handle so the line shows without --nocapture
        let _ = writeln!(std::io::stderr(), "criterion {:>2} {status} ({:.0?}) {}", l.id, t.elapsed(), l.detail);
        lines.push(l);
    };
    run(&lemma1);
    run(&|| lemma2(&desk));
    run(&|| gas_station(&desk));
    run(&advice_oracle);
    run(&multi_agent);
    run(&bmc_brute);
    run(&|| bmc_desk(&desk));
    run(&|| verification(&desk));
    run(&|| distillation(&desk));
    run(&gradient);
    run(&|| wall_crossing(&desk));
    let broken: Vec<u32> = lines.iter().filter(|l| l.exact_failed()).map(|l| l.id).collect();
    assert!(broken.is_empty(), "exact criteria failed: {broken:?}");
}
