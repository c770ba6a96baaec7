//! The environment side of the game: issues goals from the mission list,
//! injects hazards per schedule, records the trace, and computes run metrics.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::classifier::{
    check_antifragile, classify_system, strength_metric, AntifragileVerdict, SystemSnapshot,
};
use crate::domain::{partition_actions, Condition, Domain, HazardRule};
use crate::mape::{EnvStepper, Injection, Manager};
use crate::planner::{Search, SearchLimits};
use crate::scenario::{concretize_start, HazardSchedule, Scenario, ScheduledHazard};
use crate::state::State;
use crate::trace::{Event, EventKind, Trace};

/// Default mission budget; the game "continues" but a tool has to stop.
pub const DEFAULT_MAX_MISSIONS: usize = 16;

/// Strength-report sequence bound used in metrics.
pub const STRENGTH_BOUND: usize = 10;

/// Fires scenario hazard rules per schedule with seeded deterministic draws.
pub struct Scheduler {
    hazards: Vec<ScheduledHazard>,
    match_counts: Vec<u64>,
    rng: ChaCha8Rng,
}

impl Scheduler {
    pub fn new(hazards: &[ScheduledHazard], seed: u64) -> Self {
        Scheduler {
            hazards: hazards.to_vec(),
            match_counts: vec![0; hazards.len()],
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl EnvStepper for Scheduler {
    fn inject(&mut self, state: &State) -> Vec<Injection> {
        let mut out = Vec::new();
        for (i, h) in self.hazards.iter().enumerate() {
            if !h.rule.source.satisfied_by(state) {
                continue;
            }
            self.match_counts[i] += 1;
            let fire = match h.schedule {
                HazardSchedule::Always => true,
                HazardSchedule::NthMatch { n } => self.match_counts[i] == n,
                HazardSchedule::Probability { p } => self.rng.gen::<f64>() < p,
            };
            if fire {
                out.push(Injection { rule: h.rule.name.clone(), effect: h.rule.consequence.clone() });
            }
        }
        out
    }
}

fn push_snapshot(trace: &mut Trace, mgr: &Manager<'_>) {
    let p = mgr.partition();
    let name = |idxs: &[usize]| -> Vec<String> {
        idxs.iter().map(|&i| mgr.domain.actions[i].name.clone()).collect()
    };
    trace.push(EventKind::Snapshot {
        state: crate::domain::state_true_names(mgr.domain, &mgr.state),
        empowering: name(&p.empowering),
        visible: name(&p.visible),
        hidden: name(&p.hidden),
    });
}

/// Plays the game: snapshots bracket every mission, deferred empowerment is
/// drained at mission boundaries, and the full scenario is embedded in the
/// leading RunStart event so the trace file is self-sufficient.
pub fn run_game(scenario: &Scenario, max_missions: usize, seed: u64) -> Trace {
    let mut trace = Trace::new();
    trace.push(EventKind::RunStart {
        scenario: scenario.doc_value(),
        seed,
        max_missions,
    });
    let rules: Vec<HazardRule> = scenario.rules();
    let mut mgr = Manager::new(
        &scenario.domain,
        &rules,
        scenario.policy.clone(),
        scenario.initial.clone(),
        SearchLimits::default(),
    );
    let mut env = Scheduler::new(&scenario.hazards, seed);

    for k in 0..max_missions {
        mgr.drain_deferred(&mut env, &mut trace);
        push_snapshot(&mut trace, &mgr);
        let mission = &scenario.missions[k % scenario.missions.len()];
        if let Some(start) = &mission.start {
            mgr.state = concretize_start(&mgr.state, Some(start));
        }
        mgr.run_mission(k, &mission.goal, &mut env, &mut trace);
    }
    mgr.drain_deferred(&mut env, &mut trace);
    push_snapshot(&mut trace, &mgr);
    trace
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("event {step}: unknown action '{name}'")]
    UnknownAction { step: u64, name: String },
    #[error("event {step}: bad literal or predicate '{name}'")]
    UnknownPredicate { step: u64, name: String },
    #[error("trace does not start with a usable scenario")]
    NoScenario,
}

fn state_from_names(domain: &Domain, names: &[String], step: u64) -> Result<State, ReplayError> {
    let mut s = State::all_false(domain.predicates.len());
    for n in names {
        let p = domain
            .predicates
            .lookup(n)
            .ok_or_else(|| ReplayError::UnknownPredicate { step, name: n.clone() })?;
        s.set(p, true);
    }
    Ok(s)
}

/// Reconstructs the agent state after all events with `event.step <= upto`.
/// Snapshot and ResetIssued listings are resync points; action and hazard
/// events replay their effects.
pub fn replay_state(scenario: &Scenario, trace: &Trace, upto: u64) -> Result<State, ReplayError> {
    let domain = &scenario.domain;
    let mut state = scenario.initial.clone();
    for e in trace.iter().take_while(|e| e.step <= upto) {
        match &e.kind {
            EventKind::Snapshot { state: names, .. } | EventKind::ResetIssued { target: names } => {
                state = state_from_names(domain, names, e.step)?;
            }
            EventKind::ActionExecuted { action, .. } => {
                let i = domain
                    .action_index(action)
                    .ok_or_else(|| ReplayError::UnknownAction { step: e.step, name: action.clone() })?;
                state = domain.actions[i].effect.apply_to(&state);
            }
            EventKind::HazardInjected { effect, .. } => {
                for label in effect {
                    let l = crate::domain::parse_literal(domain, label).map_err(|_| {
                        ReplayError::UnknownPredicate { step: e.step, name: label.clone() }
                    })?;
                    state.set(l.predicate, l.polarity);
                }
            }
            EventKind::VisibilityChanged { predicate, value, cause } => {
                // Action/hazard causes are already carried by their events.
                if matches!(cause, crate::trace::VisibilityCause::ManagerToggle) {
                    let p = domain.predicates.lookup(predicate).ok_or_else(|| {
                        ReplayError::UnknownPredicate { step: e.step, name: predicate.clone() }
                    })?;
                    state.set(p, *value);
                }
            }
            _ => {}
        }
    }
    Ok(state)
}

/// Snapshot events lifted back into classifier inputs.
pub fn snapshots_of(scenario: &Scenario, trace: &Trace) -> Result<Vec<SystemSnapshot>, ReplayError> {
    let domain = &scenario.domain;
    let mut out = Vec::new();
    for e in trace.iter() {
        if let EventKind::Snapshot { state, .. } = &e.kind {
            let s = state_from_names(domain, state, e.step)?;
            let allowed = partition_actions(&s, domain).planning_set();
            out.push(SystemSnapshot { index: out.len(), state: s, allowed });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MissionMetrics {
    pub mission: usize,
    /// "completed" or "aborted".
    pub outcome: String,
    pub abort_reason: Option<String>,
    pub plan_lengths: Vec<usize>,
    pub hazards_detected: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SnapshotMetrics {
    pub index: usize,
    pub fragile: bool,
    pub robust: bool,
    pub resilient: bool,
    pub strength_bound: usize,
    pub achievable_missions: usize,
    pub plan_counts: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsDoc {
    pub seed: u64,
    pub missions: Vec<MissionMetrics>,
    pub completed: usize,
    pub aborted: usize,
    pub pathological_events: usize,
    pub hazard_counts: BTreeMap<String, u64>,
    pub snapshots: Vec<SnapshotMetrics>,
    pub antifragile: AntifragileVerdict,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("classification budget exhausted while computing metrics")]
    Exhausted,
}

fn unwrap_search<T>(s: Search<T>) -> Result<T, MetricsError> {
    match s {
        Search::Found(v) => Ok(v),
        _ => Err(MetricsError::Exhausted),
    }
}

/// Computes the run report: per-mission outcomes, hazard counts, per-snapshot
/// classification plus strength, and the antifragility verdict.
pub fn report_metrics(trace: &Trace, scenario: &Scenario) -> Result<MetricsDoc, MetricsError> {
    let domain = &scenario.domain;
    let rules = scenario.rules();
    let goals: Vec<Condition> = scenario.missions.iter().map(|m| m.goal.clone()).collect();
    let limits = SearchLimits::default();

    let mut missions: Vec<MissionMetrics> = Vec::new();
    let mut hazard_counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut pathological = 0usize;
    let mut seed = 0u64;
    let mut current: Option<MissionMetrics> = None;
    for e in trace.iter() {
        match &e.kind {
            EventKind::RunStart { seed: s, .. } => seed = *s,
            EventKind::GoalIssued { mission, .. } => {
                current = Some(MissionMetrics {
                    mission: *mission,
                    outcome: "incomplete".into(),
                    abort_reason: None,
                    plan_lengths: Vec::new(),
                    hazards_detected: 0,
                });
            }
            EventKind::PlanSynthesized { plan, .. } => {
                if let Some(m) = current.as_mut() {
                    m.plan_lengths.push(plan.len());
                }
            }
            EventKind::HazardDetected { .. } => {
                if let Some(m) = current.as_mut() {
                    m.hazards_detected += 1;
                }
            }
            EventKind::HazardInjected { rule, .. } => {
                *hazard_counts.entry(rule.clone()).or_insert(0) += 1;
            }
            EventKind::MissionCompleted { .. } => {
                if let Some(mut m) = current.take() {
                    m.outcome = "completed".into();
                    missions.push(m);
                }
            }
            EventKind::MissionAborted { reason, .. } => {
                if let Some(mut m) = current.take() {
                    m.outcome = "aborted".into();
                    m.abort_reason = Some(reason.clone());
                    missions.push(m);
                }
            }
            EventKind::Pathological { .. } => pathological += 1,
            _ => {}
        }
    }

    let snapshots = snapshots_of(scenario, trace)?;
    let mut snapshot_metrics = Vec::with_capacity(snapshots.len());
    for snap in &snapshots {
        let mission_inputs: Vec<(State, Condition)> =
            goals.iter().map(|g| (snap.state.clone(), g.clone())).collect();
        let verdict = unwrap_search(classify_system(
            domain,
            &mission_inputs,
            &snap.allowed,
            &rules,
            limits,
        ))?;
        let strength = unwrap_search(strength_metric(
            domain,
            &snap.allowed,
            &mission_inputs,
            STRENGTH_BOUND,
            limits,
        ))?;
        snapshot_metrics.push(SnapshotMetrics {
            index: snap.index,
            fragile: verdict.fragile,
            robust: verdict.robust,
            resilient: verdict.resilient,
            strength_bound: strength.bound,
            achievable_missions: strength.achievable_missions,
            plan_counts: strength.plan_counts,
        });
    }
    let antifragile =
        unwrap_search(check_antifragile(domain, &snapshots, &goals, &rules, limits))?;

    let completed = missions.iter().filter(|m| m.outcome == "completed").count();
    let aborted = missions.iter().filter(|m| m.outcome == "aborted").count();
    Ok(MetricsDoc {
        seed,
        missions,
        completed,
        aborted,
        pathological_events: pathological,
        hazard_counts,
        snapshots: snapshot_metrics,
        antifragile,
    })
}

/// Recovers the scenario embedded in a trace's RunStart event.
pub fn scenario_of_trace(trace: &Trace) -> Result<Scenario, crate::scenario::LoadError> {
    let doc = trace
        .iter()
        .find_map(|e| match &e.kind {
            EventKind::RunStart { scenario, .. } => Some(scenario.clone()),
            _ => None,
        })
        .ok_or_else(|| {
            crate::scenario::LoadError::Invalid(vec![crate::domain::Violation {
                entity: "trace".into(),
                rule: crate::domain::RULE_WELL_FORMED,
                detail: "trace has no RunStart event with an embedded scenario".into(),
            }])
        })?;
    let doc: crate::scenario::ScenarioDoc = serde_json::from_value(doc)?;
    crate::scenario::load_scenario(doc)
}

/// Convenience: events of a trace whose mission bracketing the well-formedness
/// tests rely on.
pub fn mission_end_events(trace: &Trace) -> Vec<&Event> {
    trace
        .iter()
        .filter(|e| {
            matches!(
                e.kind,
                EventKind::MissionCompleted { .. } | EventKind::MissionAborted { .. }
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridbot::{build, build_mini, GridSpec};

    fn no_hazard_scenario() -> Scenario {
        let spec = GridSpec {
            spill_cells: vec![],
            ice_cells: vec![],
            sand_cells: vec![],
            ..GridSpec::mini()
        };
        build(&spec).unwrap()
    }

    #[test]
    fn no_hazards_means_all_missions_complete() {
        let sc = no_hazard_scenario();
        let trace = run_game(&sc, sc.missions.len(), sc.seed);
        assert!(!trace
            .iter()
            .any(|e| matches!(e.kind, EventKind::HazardInjected { .. })));
        let ends = mission_end_events(&trace);
        assert_eq!(ends.len(), 2);
        assert!(ends
            .iter()
            .all(|e| matches!(e.kind, EventKind::MissionCompleted { .. })));
        // Snapshots bracket every mission: missions + 1.
        let snaps = trace
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Snapshot { .. }))
            .count();
        assert_eq!(snaps, 3);
    }

    #[test]
    fn probability_zero_schedule_equals_no_hazard_run() {
        let sc_none = no_hazard_scenario();
        let mut spec = GridSpec::mini();
        for h in [&mut spec.spill_cells] {
            h.clear();
        }
        spec.ice_cells = vec![(1, 0), (1, 1), (1, 2)];
        let sc_zero = build(&spec).unwrap();
        let a = run_game(&sc_none, 2, 5);
        let b = run_game(&sc_zero, 2, 5);
        // Identical apart from the embedded scenario document.
        let strip = |t: &Trace| {
            t.events
                .iter()
                .filter(|e| !matches!(e.kind, EventKind::RunStart { .. }))
                .cloned()
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a), strip(&b));
        assert!(!b.iter().any(|e| matches!(e.kind, EventKind::HazardInjected { .. })));
    }

    #[test]
    fn mini_run_reproduces_the_recovery_narrative() {
        let sc = build_mini().unwrap();
        let trace = run_game(&sc, sc.missions.len(), sc.seed);
        let kinds: Vec<&EventKind> = trace.iter().map(|e| &e.kind).collect();
        let pos = |pred: &dyn Fn(&EventKind) -> bool| kinds.iter().position(|k| pred(k));
        let injected = pos(&|k| matches!(k, EventKind::HazardInjected { .. })).expect("spill fires");
        let detected = pos(&|k| matches!(k, EventKind::HazardDetected { .. })).expect("monitor sees it");
        let empowered = pos(&|k| {
            matches!(k, EventKind::VisibilityChanged { value: true, cause, .. }
                if *cause == crate::trace::VisibilityCause::EmpoweringAction)
        })
        .expect("empowering chain raises visibility");
        let completed = pos(&|k| matches!(k, EventKind::MissionCompleted { mission: 0 }))
            .expect("first mission completes");
        assert!(injected < detected && detected < empowered && empowered < completed);
        assert!(mission_end_events(&trace)
            .iter()
            .all(|e| matches!(e.kind, EventKind::MissionCompleted { .. })));
    }

    #[test]
    fn determinism_byte_identical_traces() {
        let sc = build_mini().unwrap();
        let a = run_game(&sc, 2, 11).to_ndjson();
        let b = run_game(&sc, 2, 11).to_ndjson();
        assert_eq!(a, b);
        let c = run_game(&sc, 2, 12).to_ndjson();
        // Different seed is recorded in RunStart even when no draw is used.
        assert_ne!(a, c);
    }

    #[test]
    fn replay_reaches_final_state_and_metrics_report() {
        let sc = build_mini().unwrap();
        let trace = run_game(&sc, 2, sc.seed);
        let last = trace.events.last().unwrap().step;
        let final_state = replay_state(&sc, &trace, last).unwrap();
        // The final snapshot listing agrees with replay.
        let snaps = snapshots_of(&sc, &trace).unwrap();
        assert_eq!(final_state, snaps.last().unwrap().state);

        let metrics = report_metrics(&trace, &sc).unwrap();
        assert_eq!(metrics.completed, 2);
        assert_eq!(metrics.aborted, 0);
        assert!(metrics.hazard_counts.keys().any(|k| k.starts_with("oilSpill")));
        assert!(metrics.antifragile.holds);
        let pre = &metrics.snapshots[0];
        let post = metrics.snapshots.last().unwrap();
        assert!(pre.fragile && !pre.resilient);
        assert!(post.resilient && !post.fragile);
        // Round-trip through NDJSON and the embedded scenario document.
        let back = Trace::from_ndjson(&trace.to_ndjson()).unwrap();
        let sc2 = scenario_of_trace(&back).unwrap();
        let metrics2 = report_metrics(&back, &sc2).unwrap();
        assert_eq!(serde_json::to_string(&metrics).unwrap(), serde_json::to_string(&metrics2).unwrap());
    }
}
