//! Fragility / robustness / resiliency verdicts for plans and whole systems,
//! the trace-level antifragility check, and the plan-count strength metric.

use std::collections::{HashMap, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::domain::{applicable, hazard_consequence, Condition, Domain, HazardRule};
use crate::planner::{
    find_plan, find_resilient_plan, find_robust_plan, path_of, PathError, Plan, Search,
    SearchLimits,
};
use crate::state::State;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error(transparent)]
    Path(#[from] PathError),
}

/// Witness that a plan is fragile: an on-path hazard source whose consequence
/// admits no plan back to the goal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FragilityWitness {
    pub path_index: usize,
    pub rule: String,
    pub consequence: State,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanVerdict {
    pub robust: bool,
    pub resilient: bool,
    pub fragile: bool,
    /// For non-robust plans: first on-path hazard source (path index, rule).
    pub robust_breach: Option<(usize, String)>,
    pub fragile_witness: Option<FragilityWitness>,
}

/// Plan-level verdict for one executed plan: robust (never visits a hazard
/// source) and resilient (every hazard consequence along the path can still
/// reach the goal). `fragile == !resilient` and `robust` implies `resilient`
/// by construction.
pub fn classify_plan(
    domain: &Domain,
    plan: &Plan,
    c: &State,
    goal: &Condition,
    hazards: &[HazardRule],
    actions: &[usize],
    limits: SearchLimits,
) -> Result<Search<PlanVerdict>, ClassifyError> {
    let path = path_of(domain, plan, c)?;
    let mut robust_breach = None;
    let mut fragile_witness = None;
    let mut recovery_memo: HashMap<State, Option<bool>> = HashMap::new();

    'outer: for (i, s) in path.iter().enumerate() {
        for rule in hazards {
            let Some(t) = hazard_consequence(rule, s) else { continue };
            if robust_breach.is_none() {
                robust_breach = Some((i, rule.name.clone()));
            }
            let recovered = match recovery_memo.get(&t) {
                Some(&r) => r,
                None => {
                    let r = match find_plan(domain, &t, goal, actions, limits) {
                        Search::Found(_) => Some(true),
                        Search::NoPlan => Some(false),
                        Search::Exhausted => None,
                    };
                    recovery_memo.insert(t.clone(), r);
                    r
                }
            };
            match recovered {
                Some(true) => {}
                Some(false) => {
                    fragile_witness =
                        Some(FragilityWitness { path_index: i, rule: rule.name.clone(), consequence: t });
                    break 'outer;
                }
                None => return Ok(Search::Exhausted),
            }
        }
    }

    let fragile = fragile_witness.is_some();
    Ok(Search::Found(PlanVerdict {
        robust: robust_breach.is_none(),
        resilient: !fragile,
        fragile,
        robust_breach,
        fragile_witness,
    }))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MissionVerdict {
    pub mission_index: usize,
    /// A plan exists at all, ignoring hazards.
    pub achievable: bool,
    /// A robust plan exists.
    pub robust: bool,
    /// A resilient plan exists; its absence makes the mission fragile.
    pub resilient_plan: bool,
    pub fragile: bool,
    /// Fragile because no plan exists even without hazards.
    pub unachievable: bool,
    /// Every state on any plan path has only recoverable hazard consequences.
    pub resilient: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SystemVerdict {
    pub fragile: bool,
    pub robust: bool,
    pub resilient: bool,
    pub missions: Vec<MissionVerdict>,
}

impl SystemVerdict {
    fn from_missions(missions: Vec<MissionVerdict>) -> Self {
        SystemVerdict {
            fragile: missions.iter().any(|m| m.fragile),
            robust: missions.iter().all(|m| m.robust),
            resilient: missions.iter().all(|m| m.resilient),
            missions,
        }
    }
}

/// Materialized closure of one mission start under action and hazard
/// transitions, used for the system-resilience reachability argument.
pub(crate) struct Closure {
    pub(crate) states: Vec<State>,
    /// Action-edge successors (state ids), per state.
    pub(crate) succ: Vec<Vec<usize>>,
}

pub(crate) fn explore_closure(
    domain: &Domain,
    c: &State,
    actions: &[usize],
    hazards: &[HazardRule],
    max_states: usize,
) -> Option<Closure> {
    let mut states = vec![c.clone()];
    let mut ids: HashMap<State, usize> = HashMap::new();
    ids.insert(c.clone(), 0);
    let mut succ: Vec<Vec<usize>> = vec![];
    let mut queue: VecDeque<usize> = VecDeque::new();
    queue.push_back(0);

    while let Some(cur) = queue.pop_front() {
        let mut out = Vec::new();
        let s = states[cur].clone();
        for &ai in actions {
            let a = &domain.actions[ai];
            if !applicable(&s, a) {
                continue;
            }
            let next = a.effect.apply_to(&s);
            let id = match ids.get(&next) {
                Some(&i) => i,
                None => {
                    let i = states.len();
                    if i >= max_states {
                        return None;
                    }
                    states.push(next.clone());
                    ids.insert(next, i);
                    queue.push_back(i);
                    i
                }
            };
            out.push(id);
        }
        for rule in hazards {
            let Some(t) = hazard_consequence(rule, &s) else { continue };
            if !ids.contains_key(&t) {
                let i = states.len();
                if i >= max_states {
                    return None;
                }
                states.push(t.clone());
                ids.insert(t, i);
                queue.push_back(i);
            }
            // Hazard edges are not plan edges; only membership matters.
        }
        debug_assert_eq!(succ.len(), cur);
        succ.push(out);
    }
    Some(Closure { states, succ })
}

/// Per-mission system-resilience: no state that lies on some plan path (is
/// reachable from the start and can still reach the goal) has an
/// unrecoverable hazard consequence.
fn mission_resilient(
    domain: &Domain,
    c: &State,
    goal: &Condition,
    actions: &[usize],
    hazards: &[HazardRule],
    limits: SearchLimits,
) -> Search<bool> {
    let Some(cl) = explore_closure(domain, c, actions, hazards, limits.max_expansions) else {
        return Search::Exhausted;
    };
    let n = cl.states.len();

    // Backward reachability to goal states over action edges.
    let mut rev: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, outs) in cl.succ.iter().enumerate() {
        for &j in outs {
            rev[j].push(i);
        }
    }
    let mut can_reach_goal = vec![false; n];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for (i, s) in cl.states.iter().enumerate() {
        if goal.satisfied_by(s) {
            can_reach_goal[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(cur) = queue.pop_front() {
        for &p in &rev[cur] {
            if !can_reach_goal[p] {
                can_reach_goal[p] = true;
                queue.push_back(p);
            }
        }
    }

    // Forward reachability from the start over action edges.
    let mut ids: HashMap<&State, usize> = HashMap::new();
    for (i, s) in cl.states.iter().enumerate() {
        ids.insert(s, i);
    }
    let mut reach = vec![false; n];
    reach[0] = true;
    let mut queue: VecDeque<usize> = VecDeque::new();
    queue.push_back(0);
    while let Some(cur) = queue.pop_front() {
        if cur < cl.succ.len() {
            for &j in &cl.succ[cur] {
                if !reach[j] {
                    reach[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }

    for (i, s) in cl.states.iter().enumerate() {
        if !(reach[i] && can_reach_goal[i]) {
            continue;
        }
        for rule in hazards {
            let Some(t) = hazard_consequence(rule, s) else { continue };
            let tid = ids[&t];
            if !can_reach_goal[tid] {
                return Search::Found(false);
            }
        }
    }
    Search::Found(true)
}

fn classify_mission(
    domain: &Domain,
    index: usize,
    c: &State,
    goal: &Condition,
    actions: &[usize],
    hazards: &[HazardRule],
    limits: SearchLimits,
) -> Search<MissionVerdict> {
    let achievable = match find_plan(domain, c, goal, actions, limits) {
        Search::Found(_) => true,
        Search::NoPlan => false,
        Search::Exhausted => return Search::Exhausted,
    };
    let robust = match find_robust_plan(domain, c, goal, actions, hazards, limits) {
        Search::Found(_) => true,
        Search::NoPlan => false,
        Search::Exhausted => return Search::Exhausted,
    };
    let resilient_plan = match find_resilient_plan(domain, c, goal, actions, hazards, limits) {
        Search::Found(_) => true,
        Search::NoPlan => false,
        Search::Exhausted => return Search::Exhausted,
    };
    // An unachievable mission is never resilient: the vacuous reading (no
    // plan, hence no fragile plan) would put it above ¬fragile in the lattice
    // while the missing plan makes it fragile by definition.
    let resilient = achievable
        && match mission_resilient(domain, c, goal, actions, hazards, limits) {
            Search::Found(r) => r,
            Search::NoPlan => unreachable!(),
            Search::Exhausted => return Search::Exhausted,
        };
    Search::Found(MissionVerdict {
        mission_index: index,
        achievable,
        robust,
        resilient_plan,
        fragile: !resilient_plan,
        unachievable: !achievable,
        resilient,
    })
}

/// System-level verdict over concrete (start state, goal condition) missions.
/// "All plans fragile" is decided as "no resilient plan exists"; a mission
/// with no plan at all is reported fragile with the `unachievable` flag.
pub fn classify_system(
    domain: &Domain,
    missions: &[(State, Condition)],
    actions: &[usize],
    hazards: &[HazardRule],
    limits: SearchLimits,
) -> Search<SystemVerdict> {
    #[cfg(feature = "parallel")]
    let iter = missions.par_iter().enumerate();
    #[cfg(not(feature = "parallel"))]
    let iter = missions.iter().enumerate();

    let results: Vec<Search<MissionVerdict>> = iter
        .map(|(i, (c, g))| classify_mission(domain, i, c, g, actions, hazards, limits))
        .collect();
    collect_mission_results(results)
}

/// Sequential lane, always available; the parallel entry point must agree
/// with it bit for bit.
pub fn classify_system_serial(
    domain: &Domain,
    missions: &[(State, Condition)],
    actions: &[usize],
    hazards: &[HazardRule],
    limits: SearchLimits,
) -> Search<SystemVerdict> {
    let results: Vec<Search<MissionVerdict>> = missions
        .iter()
        .enumerate()
        .map(|(i, (c, g))| classify_mission(domain, i, c, g, actions, hazards, limits))
        .collect();
    collect_mission_results(results)
}

fn collect_mission_results(results: Vec<Search<MissionVerdict>>) -> Search<SystemVerdict> {
    let mut missions = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Search::Found(m) => missions.push(m),
            Search::NoPlan => unreachable!("mission classification never yields NoPlan"),
            Search::Exhausted => return Search::Exhausted,
        }
    }
    Search::Found(SystemVerdict::from_missions(missions))
}

/// System snapshot at a mission boundary: current state plus the action set
/// the planner may use there.
#[derive(Clone, Debug)]
pub struct SystemSnapshot {
    pub index: usize,
    pub state: State,
    pub allowed: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AntifragileVerdict {
    pub holds: bool,
    /// No snapshot was ever fragile; the defining implication is vacuous.
    pub never_fragile: bool,
    pub fragile_at: Option<usize>,
    pub recovered_at: Option<usize>,
}

/// Antifragility over a snapshot sequence: if some snapshot is fragile
/// w.r.t. `hazards`, a later one must be robust or resilient.
pub fn check_antifragile(
    domain: &Domain,
    snapshots: &[SystemSnapshot],
    goals: &[Condition],
    hazards: &[HazardRule],
    limits: SearchLimits,
) -> Search<AntifragileVerdict> {
    let mut verdicts = Vec::with_capacity(snapshots.len());
    for snap in snapshots {
        let missions: Vec<(State, Condition)> =
            goals.iter().map(|g| (snap.state.clone(), g.clone())).collect();
        match classify_system(domain, &missions, &snap.allowed, hazards, limits) {
            Search::Found(v) => verdicts.push(v),
            Search::NoPlan => unreachable!(),
            Search::Exhausted => return Search::Exhausted,
        }
    }
    let fragile_at = verdicts.iter().position(|v| v.fragile);
    let recovered_at = fragile_at.and_then(|f| {
        verdicts
            .iter()
            .enumerate()
            .skip(f + 1)
            .find(|(_, v)| v.robust || v.resilient)
            .map(|(i, _)| i)
    });
    let never_fragile = fragile_at.is_none();
    Search::Found(AntifragileVerdict {
        holds: never_fragile || recovered_at.is_some(),
        never_fragile,
        fragile_at: fragile_at.map(|i| snapshots[i].index),
        recovered_at: recovered_at.map(|i| snapshots[i].index),
    })
}

/// Achievable-mission count plus per-mission bounded plan counts; the bound
/// `L` is reported alongside because the notion is only meaningful with it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StrengthReport {
    pub bound: usize,
    pub achievable_missions: usize,
    /// Number of distinct executable plans of length <= bound, per mission.
    pub plan_counts: Vec<u64>,
}

/// Counts distinct action sequences of length <= `bound` whose final state
/// satisfies the mission goal, by forward dynamic programming over states.
pub fn strength_metric(
    domain: &Domain,
    actions: &[usize],
    missions: &[(State, Condition)],
    bound: usize,
    limits: SearchLimits,
) -> Search<StrengthReport> {
    let mut plan_counts = Vec::with_capacity(missions.len());
    let mut achievable = 0usize;
    for (c, goal) in missions {
        let mut frontier: HashMap<State, u64> = HashMap::new();
        frontier.insert(c.clone(), 1);
        let mut total: u64 = if goal.satisfied_by(c) { 1 } else { 0 };
        let mut distinct_states: usize = 1;
        for _ in 0..bound {
            let mut next: HashMap<State, u64> = HashMap::new();
            for (s, count) in &frontier {
                for &ai in actions {
                    let a = &domain.actions[ai];
                    if !applicable(s, a) {
                        continue;
                    }
                    let t = a.effect.apply_to(s);
                    *next.entry(t).or_insert(0) += count;
                }
            }
            distinct_states += next.len();
            if distinct_states > limits.max_expansions {
                return Search::Exhausted;
            }
            total = total
                .saturating_add(next.iter().filter(|(s, _)| goal.satisfied_by(s)).map(|(_, c)| c).sum());
            frontier = next;
        }
        if total > 0 {
            achievable += 1;
        } else if find_plan(domain, c, goal, actions, limits).is_found() {
            // Achievable, just not within the bound.
            achievable += 1;
        }
        plan_counts.push(total);
    }
    Search::Found(StrengthReport { bound, achievable_missions: achievable, plan_counts })
}
