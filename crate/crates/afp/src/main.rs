//! `afp` command-line interface.
//!
//! Exit codes: 0 success, 1 validation failure, 2 pathological outcome,
//! 3 usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use afp::classifier::classify_system;
use afp::domain::{parse_literal, partition_actions, Condition};
use afp::gridbot::{build, GridSpec};
use afp::planner::{
    find_plan, find_resilient_plan, find_robust_plan, plan_with_recommendation, Mode, Plan,
    PlanRequest, Rung, Search, SearchLimits,
};
use afp::render::render_grid;
use afp::scenario::{concretize_start, load_scenario_str, LoadError, Scenario};
use afp::sim::{report_metrics, run_game, scenario_of_trace, DEFAULT_MAX_MISSIONS};
use afp::state::State;
use afp::trace::{EventKind, Trace};

const EXIT_OK: u8 = 0;
const EXIT_VALIDATION: u8 = 1;
const EXIT_PATHOLOGICAL: u8 = 2;
const EXIT_USAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "afp", version, about = "Antifragile planning agent toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PlanMode {
    Auto,
    Robust,
    Resilient,
    Plain,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ActionScope {
    /// Empowering plus currently visible actions.
    Visible,
    /// Every declared action, hidden ones included.
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file; prints violations, if any.
    Validate { scenario: PathBuf },
    /// Synthesize one plan.
    Plan {
        scenario: PathBuf,
        /// Start literals overriding the initial state, e.g. "at_1_0,!inSpill".
        #[arg(long)]
        from: Option<String>,
        /// Goal literals, e.g. "at_5_2".
        #[arg(long)]
        goal: String,
        #[arg(long, value_enum, default_value_t = PlanMode::Auto)]
        mode: PlanMode,
        #[arg(long, value_enum, default_value_t = ActionScope::Visible)]
        actions: ActionScope,
    },
    /// Classify the scenario's missions as a system.
    Classify {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = ActionScope::Visible)]
        actions: ActionScope,
    },
    /// Play the environment game and record a trace.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_MAX_MISSIONS)]
        max_missions: usize,
        /// Write the NDJSON trace here (defaults to stdout).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Render the final grid state after the run.
        #[arg(long)]
        render: bool,
    },
    /// Run the built-in grid-robot case study.
    Casestudy {
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        render: bool,
    },
    /// Recompute the metrics report from a recorded trace.
    Metrics { trace: PathBuf },
}

fn fail(code: u8, msg: impl std::fmt::Display) -> u8 {
    eprintln!("error: {msg}");
    code
}

fn read_file(path: &PathBuf) -> Result<String, u8> {
    std::fs::read_to_string(path).map_err(|e| fail(EXIT_USAGE, format!("{}: {e}", path.display())))
}

fn load(path: &PathBuf) -> Result<Scenario, u8> {
    let text = read_file(path)?;
    load_scenario_str(&text).map_err(|e| match e {
        LoadError::Invalid(vs) => {
            for v in &vs {
                eprintln!("{v}");
            }
            fail(EXIT_VALIDATION, format!("{} violation(s)", vs.len()))
        }
        parse => fail(EXIT_VALIDATION, parse),
    })
}

fn parse_condition(sc: &Scenario, text: &str, what: &str) -> Result<Condition, u8> {
    let mut lits = Vec::new();
    for tok in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        lits.push(
            parse_literal(&sc.domain, tok)
                .map_err(|e| fail(EXIT_USAGE, format!("{what}: {e}")))?,
        );
    }
    Condition::new(lits).map_err(|e| fail(EXIT_USAGE, format!("{what}: {e}")))
}

fn scoped_actions(sc: &Scenario, state: &State, scope: ActionScope) -> Vec<usize> {
    match scope {
        ActionScope::Visible => partition_actions(state, &sc.domain).planning_set(),
        ActionScope::All => sc.domain.all_actions(),
    }
}

fn cmd_validate(path: &PathBuf) -> u8 {
    match load(path) {
        Ok(sc) => {
            println!(
                "ok: {} predicates, {} actions, {} missions, {} hazard rules",
                sc.domain.predicates.len(),
                sc.domain.actions.len(),
                sc.missions.len(),
                sc.hazards.len()
            );
            EXIT_OK
        }
        Err(code) => code,
    }
}

fn cmd_plan(
    path: &PathBuf,
    from: Option<&str>,
    goal: &str,
    mode: PlanMode,
    scope: ActionScope,
) -> u8 {
    let sc = match load(path) {
        Ok(sc) => sc,
        Err(code) => return code,
    };
    let start = match from {
        None => sc.initial.clone(),
        Some(text) => match parse_condition(&sc, text, "--from") {
            Ok(c) => concretize_start(&sc.initial, Some(&c)),
            Err(code) => return code,
        },
    };
    let goal = match parse_condition(&sc, goal, "--goal") {
        Ok(g) => g,
        Err(code) => return code,
    };
    let actions = scoped_actions(&sc, &start, scope);
    let rules = sc.rules();
    let limits = SearchLimits::default();
    let (search, rung): (Search<Plan>, Rung) = match mode {
        PlanMode::Auto => {
            let req = PlanRequest {
                start: &start,
                goal: &goal,
                actions: &actions,
                hazards: &rules,
                mode: Mode::Robust,
            };
            plan_with_recommendation(&sc.domain, &req, limits)
        }
        PlanMode::Robust => (
            find_robust_plan(&sc.domain, &start, &goal, &actions, &rules, limits),
            Rung::Robust,
        ),
        PlanMode::Resilient => (
            find_resilient_plan(&sc.domain, &start, &goal, &actions, &rules, limits),
            Rung::Resilient,
        ),
        PlanMode::Plain => (find_plan(&sc.domain, &start, &goal, &actions, limits), Rung::Plain),
    };
    match search {
        Search::Found(plan) => {
            let doc = serde_json::json!({
                "rung": rung,
                "length": plan.steps.len(),
                "plan": plan.action_names(&sc.domain),
            });
            println!("{}", serde_json::to_string_pretty(&doc).expect("serializes"));
            EXIT_OK
        }
        Search::NoPlan => fail(EXIT_PATHOLOGICAL, "no plan exists for the requested goal"),
        Search::Exhausted => fail(EXIT_PATHOLOGICAL, "search budget exhausted before a plan was found"),
    }
}

fn cmd_classify(path: &PathBuf, scope: ActionScope) -> u8 {
    let sc = match load(path) {
        Ok(sc) => sc,
        Err(code) => return code,
    };
    let missions: Vec<(State, Condition)> = sc
        .missions
        .iter()
        .map(|m| (concretize_start(&sc.initial, m.start.as_ref()), m.goal.clone()))
        .collect();
    let actions = scoped_actions(&sc, &sc.initial, scope);
    match classify_system(&sc.domain, &missions, &actions, &sc.rules(), SearchLimits::default()) {
        Search::Found(verdict) => {
            println!("{}", serde_json::to_string_pretty(&verdict).expect("serializes"));
            EXIT_OK
        }
        _ => fail(EXIT_PATHOLOGICAL, "classification budget exhausted"),
    }
}

fn finish_run(sc: &Scenario, trace: Trace, out: Option<&PathBuf>, render: bool) -> u8 {
    let text = trace.to_ndjson();
    match out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, &text) {
                return fail(EXIT_USAGE, format!("{}: {e}", path.display()));
            }
        }
        None => print!("{text}"),
    }
    if render {
        let last = trace.events.last().map(|e| e.step).unwrap_or(0);
        match render_grid(sc, &trace, last) {
            Ok(diagram) => println!("{diagram}"),
            Err(e) => eprintln!("render skipped: {e}"),
        }
    }
    let completed = trace
        .iter()
        .filter(|e| matches!(e.kind, EventKind::MissionCompleted { .. }))
        .count();
    let aborted = trace
        .iter()
        .filter(|e| matches!(e.kind, EventKind::MissionAborted { .. }))
        .count();
    eprintln!("missions: {completed} completed, {aborted} aborted");
    if trace.iter().any(|e| matches!(e.kind, EventKind::Pathological { .. })) {
        fail(EXIT_PATHOLOGICAL, "run recorded a pathological outcome")
    } else {
        EXIT_OK
    }
}

fn cmd_run(
    path: &PathBuf,
    seed: Option<u64>,
    max_missions: usize,
    out: Option<&PathBuf>,
    render: bool,
) -> u8 {
    let sc = match load(path) {
        Ok(sc) => sc,
        Err(code) => return code,
    };
    let seed = seed.unwrap_or(sc.seed);
    let trace = run_game(&sc, max_missions, seed);
    finish_run(&sc, trace, out, render)
}

fn cmd_casestudy(out: Option<&PathBuf>, render: bool) -> u8 {
    let sc = match build(&GridSpec::default()) {
        Ok(sc) => sc,
        Err(e) => return fail(EXIT_VALIDATION, e),
    };
    let trace = run_game(&sc, sc.missions.len(), sc.seed);
    finish_run(&sc, trace, out, render)
}

fn cmd_metrics(path: &PathBuf) -> u8 {
    let text = match read_file(path) {
        Ok(t) => t,
        Err(code) => return code,
    };
    let trace = match Trace::from_ndjson(&text) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_VALIDATION, e),
    };
    let sc = match scenario_of_trace(&trace) {
        Ok(sc) => sc,
        Err(e) => return fail(EXIT_VALIDATION, e),
    };
    match report_metrics(&trace, &sc) {
        Ok(doc) => {
            println!("{}", serde_json::to_string_pretty(&doc).expect("serializes"));
            EXIT_OK
        }
        Err(e) => fail(EXIT_PATHOLOGICAL, e),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful exits; everything else is usage.
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let code = match &cli.command {
        Command::Validate { scenario } => cmd_validate(scenario),
        Command::Plan { scenario, from, goal, mode, actions } => {
            cmd_plan(scenario, from.as_deref(), goal, *mode, *actions)
        }
        Command::Classify { scenario, actions } => cmd_classify(scenario, *actions),
        Command::Run { scenario, seed, max_missions, trace, render } => {
            cmd_run(scenario, *seed, *max_missions, trace.as_ref(), *render)
        }
        Command::Casestudy { trace, render } => cmd_casestudy(trace.as_ref(), *render),
        Command::Metrics { trace } => cmd_metrics(trace),
    };
    ExitCode::from(code)
}
