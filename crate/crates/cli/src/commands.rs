use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use wizbook::arena::{build_arena, build_multi_arena, Legality, MultiConfig, TaxiArena};
use wizbook::bmc::{self, check_witness, enumerate, SolverMode, WitnessReport};
use wizbook::magicbook::{
    collect_dataset, feature_names, fidelity, fit_forest, fit_tree, performance, visited_states, FitOptions, Forest,
    TreePolicy,
};
use wizbook::par::{self, Exec};
use wizbook::plant::{self, GridState};
use wizbook::policy::{self, Chaser, Policy, RandomPolicy};
use wizbook::rng;
use wizbook::synth::{run_controller, run_multi, solve_multiagent, Controller, Shield};
use wizbook::wizard::{self, Wizard};
use wizbook::{dot, xai};

use crate::artifact::{self, write_atomic};
use crate::config::{BookKind, Config};
use crate::error::CliError;

pub struct Ctx {
    pub cfg: Config,
    pub exec: Exec,
}

/// A summary plus, for informational failures, the reason.
pub struct Outcome {
    pub summary: Value,
    pub negative: Option<String>,
}

impl From<Value> for Outcome {
    fn from(summary: Value) -> Self {
        Outcome { summary, negative: None }
    }
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.cfg.paths.artifacts.join(name)
    }

    fn wizard(&self) -> Result<Wizard, CliError> {
        let w: Wizard = artifact::load(&self.path("wizard.json"), "wizard", "train")?;
        if w.grid != self.cfg.grid {
            return Err(CliError::Validation("wizard.json was trained on a different grid: rerun `wizbook train`".into()));
        }
        Ok(w)
    }

    fn book(&self) -> Result<TreePolicy, CliError> {
        let b: TreePolicy = artifact::load(&self.path("book.json"), "book", "extract")?;
        b.validate(self.cfg.grid.num_features())
            .map_err(|e| CliError::Validation(format!("book.json: {e}: rerun `wizbook extract`")))?;
        Ok(b)
    }

    fn arena(&self, book: &TreePolicy) -> Result<TaxiArena, CliError> {
        let s = &self.cfg.synth;
        build_arena(&self.cfg.grid, &s.monitor, book, &s.arena, self.exec).map_err(|e| CliError::Validation(e.to_string()))
    }
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

pub fn train(ctx: &Ctx) -> Result<Outcome, CliError> {
    let t = Instant::now();
    let mut tc = ctx.cfg.train.clone();
    tc.seed = ctx.cfg.seed;
    let (w, logs) = wizard::train(&ctx.cfg.grid, &tc).map_err(|e| CliError::Validation(e.to_string()))?;
    let hash = artifact::save(&ctx.path("wizard.json"), "wizard", &w)?;
    let tail = &logs[logs.len().saturating_sub(10)..];
    let recent = tail.iter().map(|l| l.pickups as f64).sum::<f64>() / tail.len().max(1) as f64;
    Ok(json!({
        "artifact": ctx.path("wizard.json"), "sha256": hash, "episodes": logs.len(),
        "recent_pickups_per_episode": recent, "seconds": secs(t),
    })
    .into())
}

pub fn extract(ctx: &Ctx) -> Result<Outcome, CliError> {
    let t = Instant::now();
    let w = ctx.wizard()?;
    let b = &ctx.cfg.book;
    let d = collect_dataset(ctx.exec, &ctx.cfg.grid, &w, b.episodes, b.steps, ctx.cfg.seed);
    let bad = |e: wizbook::magicbook::BookError| CliError::Validation(e.to_string());
    let book: TreePolicy = match b.kind {
        BookKind::Tree => Forest::single(fit_tree(&d, b.depth).map_err(bad)?),
        BookKind::Forest => fit_forest(&d, &FitOptions::forest(b.trees, b.depth, ctx.cfg.seed), ctx.exec).map_err(bad)?,
    };
    let hash = artifact::save(&ctx.path("book.json"), "book", &book)?;
    write_atomic(&ctx.path("book.dot"), &dot::forest_to_dot(&book, &feature_names(ctx.cfg.grid.k)))?;
    Ok(json!({
        "artifact": ctx.path("book.json"), "sha256": hash, "samples": d.len(), "trees": book.trees.len(),
        "leaves": book.trees.iter().map(|t| t.num_leaves()).collect::<Vec<_>>(), "depth": book.max_depth(),
        "seconds": secs(t),
    })
    .into())
}

pub fn fidelity_cmd(ctx: &Ctx) -> Result<Outcome, CliError> {
    let (w, book) = (ctx.wizard()?, ctx.book()?);
    let e = &ctx.cfg.eval;
    let states = visited_states(ctx.exec, &ctx.cfg.grid, &w, e.episodes, e.steps, ctx.cfg.seed ^ 1);
    let f = fidelity(&book, &w, &states);
    Ok(json!({ "agreement": f.agreement, "macro_f1": f.macro_f1, "samples": f.samples }).into())
}

pub fn perf(ctx: &Ctx) -> Result<Outcome, CliError> {
    let (w, book) = (ctx.wizard()?, ctx.book()?);
    let (g, e, seed) = (&ctx.cfg.grid, &ctx.cfg.eval, ctx.cfg.seed ^ 2);
    let run = |p: &dyn Fn() -> wizbook::magicbook::Performance| {
        let r = p();
        json!({ "avg": r.avg, "max": r.max })
    };
    let pw = performance(ctx.exec, g, &w, e.episodes, e.steps, seed);
    let pb = performance(ctx.exec, g, &book, e.episodes, e.steps, seed);
    let ratio = if pw.avg > 0.0 { pb.avg / pw.avg } else { 0.0 };
    Ok(json!({
        "wizard": { "avg": pw.avg, "max": pw.max },
        "book": { "avg": pb.avg, "max": pb.max },
        "random": run(&|| performance(ctx.exec, g, &RandomPolicy, e.episodes, e.steps, seed)),
        "chaser": run(&|| performance(ctx.exec, g, &Chaser, e.episodes, e.steps, seed)),
        "book_over_wizard": ratio,
        "episodes": e.episodes, "steps": e.steps,
    })
    .into())
}

pub fn arena(ctx: &Ctx) -> Result<Outcome, CliError> {
    let t = Instant::now();
    let book = ctx.book()?;
    let a = ctx.arena(&book)?;
    let hash = artifact::save(&ctx.path("arena.json"), "arena", &a.to_json())?;
    Ok(json!({
        "artifact": ctx.path("arena.json"), "sha256": hash, "vertices": a.arena.num_vertices(),
        "moves": a.arena.num_moves(), "regions": a.regions.len(), "seconds": secs(t),
    })
    .into())
}

pub fn synth(ctx: &Ctx) -> Result<Outcome, CliError> {
    let t = Instant::now();
    let book = ctx.book()?;
    let a = ctx.arena(&book)?;
    let ctrl = Controller::synthesize(&a, &book, ctx.cfg.synth.horizon);
    let hash = artifact::save(&ctx.path("controller.json"), "controller", &ctrl)?;
    let e = &ctx.cfg.eval;
    let reports = par::map_range(ctx.exec, e.episodes, |i| {
        let mut r = rng::stream(ctx.cfg.seed, "synth-eval", i as u64);
        let start = plant::random_state(&ctx.cfg.grid, &mut r);
        run_controller(&ctrl, start, e.steps, &mut r)
    });
    let doomed = reports.iter().filter(|r| r.x_star.is_violation()).count();
    let summary = json!({
        "artifact": ctx.path("controller.json"), "sha256": hash, "vertices": a.arena.num_vertices(),
        "episodes": reports.iter().map(|r| json!({
            "pickups": r.episode.pickups, "violations": r.violations, "agree": r.agree,
            "x_star": r.x_star.count(), "gas_visits": r.gas_visits,
        })).collect::<Vec<_>>(),
        "violations": reports.iter().map(|r| r.violations).sum::<usize>(),
        "seconds": secs(t),
    });
    let negative = (doomed > 0).then(|| format!("{doomed} sampled starts cannot meet the specification"));
    Ok(Outcome { summary, negative })
}

pub fn multiagent(ctx: &Ctx) -> Result<Outcome, CliError> {
    let m = ctx.cfg.multi.as_ref().ok_or_else(|| CliError::Validation("config has no [multi] section".into()))?;
    let mc = MultiConfig::new(ctx.cfg.grid.clone(), m.station_a, m.station_b);
    let book = if m.adversarial { None } else { Some(ctx.book()?) };
    let legality = book.as_ref().map_or(Legality::Adversarial, Legality::Book);
    let arena = build_multi_arena(&mc, legality, ctx.exec).map_err(|e| CliError::Validation(e.to_string()))?;
    let init = arena.initial(m.bus, m.taxi);
    let strat = match solve_multiagent(&arena, init) {
        Ok(s) => s,
        Err(e) => {
            return Ok(Outcome { summary: json!({ "realizable": false, "initial": format!("{:?}", e.0) }), negative: Some(e.to_string()) })
        }
    };
    let hash = artifact::save(&ctx.path("multi.json"), "multi_strategy", &strat)?;
    let mut runs = Vec::new();
    if let Some(book) = &book {
        let e = &ctx.cfg.eval;
        runs = par::map_range(ctx.exec, e.episodes, |i| {
            let mut r = rng::stream(ctx.cfg.seed, "multi-eval", i as u64);
            let mut taxi = plant::random_state(&ctx.cfg.grid, &mut r);
            while taxi.passengers.contains(&m.taxi) {
                taxi = plant::random_state(&ctx.cfg.grid, &mut r);
            }
            taxi.taxi = m.taxi;
            run_multi(&arena, &strat, book, m.bus, taxi, e.steps, &mut r)
        });
    }
    Ok(json!({
        "realizable": true, "artifact": ctx.path("multi.json"), "sha256": hash,
        "winning_vertices": strat.winning.iter().filter(|&&w| w).count(),
        "crashes": runs.iter().map(|r| r.crashes).sum::<usize>(),
        "min_alternations": runs.iter().map(|r| r.alternations).min(),
    })
    .into())
}

pub fn bmc_cmd(ctx: &Ctx) -> Result<Outcome, CliError> {
    let (w, book) = (ctx.wizard()?, ctx.book()?);
    let b = &ctx.cfg.bmc;
    let mut solver = b.solver.clone();
    if solver.mode == SolverMode::File && solver.out_dir.is_none() {
        solver.out_dir = Some(ctx.path("bmc/smt"));
    }
    if !solver.available() {
        return Err(CliError::Solver(format!("`{}` not found: install z3 or set [bmc.solver] program", solver.program)));
    }
    let jobs: Vec<_> = b.specs.iter().flat_map(|s| b.bounds.iter().map(move |&l| (s.clone(), l))).collect();
    let wiz = |s: &GridState| w.policy(s);
    let results = par::map_slice(ctx.exec, &jobs, |(spec, l)| enumerate(&ctx.cfg.grid, &book, spec, *l, b.count, &solver, &wiz));
    let mut lines = String::new();
    let mut rows = Vec::new();
    let mut found = 0;
    for r in results {
        let e = r?;
        for rep in &e.reports {
            lines.push_str(&serde_json::to_string(rep).expect("serializable"));
            lines.push('\n');
        }
        found += e.reports.len();
        rows.push(json!({
            "spec": e.spec, "bound": e.bound, "witnesses": e.reports.len(), "exhausted": e.exhausted,
            "timed_out": e.unknown.is_some(), "book_valid": e.reports.iter().all(|r| r.book_valid),
            "wizard_valid_ratio": e.wizard_valid_ratio(), "seconds_per_trace": e.per_trace().as_secs_f64(),
            "assertions": e.assertions, "caveat": e.caveat,
        }));
    }
    write_atomic(&ctx.path("bmc/traces.jsonl"), &lines)?;
    let summary = json!({ "traces": ctx.path("bmc/traces.jsonl"), "queries": rows, "witnesses": found });
    let negative = (found == 0).then(|| format!("no witnesses; {}", bmc::UNSAT_CAVEAT));
    Ok(Outcome { summary, negative })
}

pub fn xai_cmd(ctx: &Ctx) -> Result<Outcome, CliError> {
    let t = Instant::now();
    let (w, book) = (ctx.wizard()?, ctx.book()?);
    let x = &ctx.cfg.xai;
    let solver = wizbook::bmc::SolverConfig { mode: SolverMode::Incremental, ..ctx.cfg.bmc.solver.clone() };
    if !solver.available() {
        return Err(CliError::Solver(format!("`{}` not found", solver.program)));
    }
    let wiz = |s: &GridState| w.policy(s);
    let g = xai::gather(&ctx.cfg.grid, &book, &wiz, &x.gather, &solver, ctx.exec)?;
    write_atomic(&ctx.path("xai/dataset.jsonl"), &g.dataset.to_jsonl())?;
    let mut summary = json!({
        "dataset": ctx.path("xai/dataset.jsonl"), "rows": g.dataset.len(), "rejected": g.rejected,
        "shortfall": g.shortfall, "seconds": secs(t),
    });
    if let Ok(tree) = xai::explain_tree(&g.dataset, x.max_depth) {
        let hash = artifact::save(&ctx.path("xai/tree.json"), "explanation_tree", &tree)?;
        write_atomic(&ctx.path("xai/tree.dot"), &xai::explain_dot(&tree, ctx.cfg.grid.k))?;
        let d = g.dataset.labeled();
        let acc = d.rows().filter(|(f, l)| tree.predict(f) == *l).count() as f64 / d.len() as f64;
        summary["tree"] = json!({ "sha256": hash, "depth": tree.depth(), "leaves": tree.num_leaves(), "train_accuracy": acc });
    }
    Ok(summary.into())
}

pub fn simulate(ctx: &Ctx, policy_name: &str, steps: usize, out: Option<&Path>) -> Result<Outcome, CliError> {
    let g = &ctx.cfg.grid;
    let mut r = rng::stream(ctx.cfg.seed, "simulate", 0);
    let start = plant::random_state(g, &mut r);
    let ep = match policy_name {
        "controller" => {
            let c: Controller = artifact::load(&ctx.path("controller.json"), "controller", "synth")?;
            run_controller(&c, start, steps, &mut r).episode
        }
        name => {
            let p: Box<dyn Policy> = match name {
                "wizard" => Box::new(ctx.wizard()?),
                "book" => Box::new(ctx.book()?),
                "shield" => {
                    let w = ctx.wizard()?;
                    return shielded(g, w, start, steps, &mut r, out);
                }
                "random" => Box::new(RandomPolicy),
                "chaser" => Box::new(Chaser),
                other => return Err(CliError::Usage(format!("unknown policy `{other}`"))),
            };
            policy::rollout(g, p.as_ref(), start, steps, &mut r)
        }
    };
    if let Some(p) = out {
        write_atomic(p, &serde_json::to_string(&ep).expect("serializable"))?;
    }
    Ok(json!({ "policy": policy_name, "steps": steps, "pickups": ep.pickups, "wall_hits": ep.wall_hits }).into())
}

fn shielded(
    g: &wizbook::GridConfig,
    w: Wizard,
    start: GridState,
    steps: usize,
    r: &mut rng::SimRng,
    out: Option<&Path>,
) -> Result<Outcome, CliError> {
    let sh = Shield::new(&w, g);
    let ep = policy::rollout(g, &sh, start, steps, r);
    if let Some(p) = out {
        write_atomic(p, &serde_json::to_string(&ep).expect("serializable"))?;
    }
    Ok(json!({ "policy": "shield", "steps": steps, "pickups": ep.pickups, "wall_hits": ep.wall_hits }).into())
}

pub fn replay(ctx: &Ctx, traces: &Path) -> Result<Outcome, CliError> {
    let (w, book) = (ctx.wizard()?, ctx.book()?);
    let text = std::fs::read_to_string(traces).map_err(|e| CliError::io(traces, e))?;
    let mut checked = 0;
    let (mut book_valid, mut wizard_valid, mut spec_ok) = (0, 0, 0);
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rep: WitnessReport = serde_json::from_str(line)
            .map_err(|e| CliError::Validation(format!("{}:{}: {e}", traces.display(), i + 1)))?;
        let spec = ctx.cfg.bmc.specs.iter().find(|s| s.name() == rep.spec).cloned();
        let again = check_witness(
            &ctx.cfg.grid,
            &book,
            spec.as_ref().unwrap_or(&bmc::BmcSpec::Raw { smt: String::new() }),
            rep.trace,
            &|s| w.policy(s),
        );
        checked += 1;
        book_valid += usize::from(again.book_valid);
        wizard_valid += usize::from(again.wizard_valid);
        spec_ok += usize::from(again.spec_holds != Some(false));
    }
    let summary = json!({ "traces": checked, "book_valid": book_valid, "wizard_valid": wizard_valid, "spec_holds": spec_ok });
    if book_valid < checked || spec_ok < checked {
        return Err(CliError::Validation(format!("replay failed: {summary}")));
    }
    Ok(summary.into())
}
