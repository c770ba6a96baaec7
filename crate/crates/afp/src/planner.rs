//! Plan synthesis over a supplied action subset: shortest plans, robust and
//! resilient plans, minimum-hidden-action plans, and the recommendation
//! fallback ladder.
//!
//! All searches are uniform-cost breadth-first with deterministic tie-breaking
//! (actions are expanded in name order; frontiers are FIFO), so identical
//! requests yield identical plans.

use std::cell::RefCell;
use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap, VecDeque};

use thiserror::Error;

use crate::domain::{applicable, Condition, Domain, HazardRule, PreconditionViolation};
use crate::state::State;

/// Node-expansion cap. Exhaustion is reported as a distinct outcome, never
/// conflated with "no plan".
#[derive(Clone, Copy, Debug)]
pub struct SearchLimits {
    pub max_expansions: usize,
}

impl Default for SearchLimits {
    fn default() -> Self {
        SearchLimits { max_expansions: 1_000_000 }
    }
}

/// Search outcome: a witness, a proof of absence, or a blown budget.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Search<T> {
    Found(T),
    NoPlan,
    Exhausted,
}

impl<T> Search<T> {
    pub fn found(self) -> Option<T> {
        match self {
            Search::Found(t) => Some(t),
            _ => None,
        }
    }

    pub fn is_found(&self) -> bool {
        matches!(self, Search::Found(_))
    }

    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> Search<U> {
        match self {
            Search::Found(t) => Search::Found(f(t)),
            Search::NoPlan => Search::NoPlan,
            Search::Exhausted => Search::Exhausted,
        }
    }
}

/// An ordered list of action indices into the domain's action table.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Plan {
    pub steps: Vec<usize>,
}

impl Plan {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn action_names(&self, domain: &Domain) -> Vec<String> {
        self.steps.iter().map(|&i| domain.actions[i].name.clone()).collect()
    }
}

#[derive(Debug, Error)]
#[error("plan step {index} is not executable: {violation}")]
pub struct PathError {
    pub index: usize,
    pub violation: PreconditionViolation,
}

/// Replays `plan` from `c`, returning the visited states (length = steps + 1).
pub fn path_of(domain: &Domain, plan: &Plan, c: &State) -> Result<Vec<State>, PathError> {
    let mut states = Vec::with_capacity(plan.len() + 1);
    states.push(c.clone());
    for (index, &step) in plan.steps.iter().enumerate() {
        let cur = states.last().unwrap();
        match crate::domain::apply(cur, &domain.actions[step]) {
            Ok(next) => states.push(next),
            Err(violation) => return Err(PathError { index, violation }),
        }
    }
    Ok(states)
}

enum Allow {
    Yes,
    No,
    Exhausted,
}

/// BFS over the induced graph restricted to states the filter admits. Every
/// path state, including the start and the goal state, must be admitted.
fn bfs(
    domain: &Domain,
    c: &State,
    goal: &Condition,
    actions: &[usize],
    limits: SearchLimits,
    mut allow: impl FnMut(&State) -> Allow,
) -> Search<Plan> {
    match allow(c) {
        Allow::Yes => {}
        Allow::No => return Search::NoPlan,
        Allow::Exhausted => return Search::Exhausted,
    }
    if goal.satisfied_by(c) {
        return Search::Found(Plan::default());
    }

    let mut states: Vec<State> = vec![c.clone()];
    // state -> (parent index, action taken to reach it)
    let mut seen: HashMap<State, usize> = HashMap::new();
    seen.insert(c.clone(), 0);
    let mut parents: Vec<(usize, usize)> = vec![(usize::MAX, usize::MAX)];
    let mut queue: VecDeque<usize> = VecDeque::new();
    queue.push_back(0);
    let mut expansions = 0usize;

    while let Some(cur) = queue.pop_front() {
        expansions += 1;
        if expansions > limits.max_expansions {
            return Search::Exhausted;
        }
        for &ai in actions {
            let a = &domain.actions[ai];
            let s = &states[cur];
            if !applicable(s, a) {
                continue;
            }
            let next = a.effect.apply_to(s);
            if seen.contains_key(&next) {
                continue;
            }
            match allow(&next) {
                Allow::Yes => {}
                Allow::No => {
                    // Remember denial so the filter runs once per state.
                    seen.insert(next, usize::MAX);
                    continue;
                }
                Allow::Exhausted => return Search::Exhausted,
            }
            let idx = states.len();
            states.push(next.clone());
            parents.push((cur, ai));
            seen.insert(next.clone(), idx);
            if goal.satisfied_by(&next) {
                return Search::Found(reconstruct(&parents, idx));
            }
            queue.push_back(idx);
        }
    }
    Search::NoPlan
}

fn reconstruct(parents: &[(usize, usize)], mut idx: usize) -> Plan {
    let mut steps = Vec::new();
    while parents[idx].0 != usize::MAX {
        steps.push(parents[idx].1);
        idx = parents[idx].0;
    }
    steps.reverse();
    Plan { steps }
}

/// Shortest plan from `c` to a state satisfying `goal` over `actions`.
pub fn find_plan(
    domain: &Domain,
    c: &State,
    goal: &Condition,
    actions: &[usize],
    limits: SearchLimits,
) -> Search<Plan> {
    bfs(domain, c, goal, actions, limits, |_| Allow::Yes)
}

fn matches_any_source(s: &State, hazards: &[HazardRule]) -> bool {
    hazards.iter().any(|h| h.source.satisfied_by(s))
}

/// Shortest plan whose path contains no hazard-source state. If `c` itself
/// matches a source, no robust plan exists.
pub fn find_robust_plan(
    domain: &Domain,
    c: &State,
    goal: &Condition,
    actions: &[usize],
    hazards: &[HazardRule],
    limits: SearchLimits,
) -> Search<Plan> {
    bfs(domain, c, goal, actions, limits, |s| {
        if matches_any_source(s, hazards) {
            Allow::No
        } else {
            Allow::Yes
        }
    })
}

/// Memoized "every hazard consequence of this state still admits a plan to
/// the goal" check, scoped to one action set and goal.
pub struct RecoveryCache<'a> {
    domain: &'a Domain,
    goal: &'a Condition,
    actions: &'a [usize],
    hazards: &'a [HazardRule],
    limits: SearchLimits,
    memo: RefCell<HashMap<State, Option<bool>>>,
}

impl<'a> RecoveryCache<'a> {
    pub fn new(
        domain: &'a Domain,
        goal: &'a Condition,
        actions: &'a [usize],
        hazards: &'a [HazardRule],
        limits: SearchLimits,
    ) -> Self {
        RecoveryCache { domain, goal, actions, hazards, limits, memo: RefCell::new(HashMap::new()) }
    }

    /// None means the recovery search blew its budget.
    pub fn recoverable(&self, s: &State) -> Option<bool> {
        for h in self.hazards {
            let Some(t) = crate::domain::hazard_consequence(h, s) else { continue };
            if let Some(&cached) = self.memo.borrow().get(&t) {
                match cached {
                    Some(true) => continue,
                    other => return other,
                }
            }
            let res = match find_plan(self.domain, &t, self.goal, self.actions, self.limits) {
                Search::Found(_) => Some(true),
                Search::NoPlan => Some(false),
                Search::Exhausted => None,
            };
            self.memo.borrow_mut().insert(t, res);
            match res {
                Some(true) => continue,
                other => return other,
            }
        }
        Some(true)
    }
}

/// Shortest plan such that every path state matching a hazard source has all
/// its consequences recoverable (a plan to `goal` exists over the same action
/// set).
pub fn find_resilient_plan(
    domain: &Domain,
    c: &State,
    goal: &Condition,
    actions: &[usize],
    hazards: &[HazardRule],
    limits: SearchLimits,
) -> Search<Plan> {
    let cache = RecoveryCache::new(domain, goal, actions, hazards, limits);
    bfs(domain, c, goal, actions, limits, |s| match cache.recoverable(s) {
        Some(true) => Allow::Yes,
        Some(false) => Allow::No,
        None => Allow::Exhausted,
    })
}

/// Plan-synthesis mode carried by analyzer recommendations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Robust,
    Resilient,
}

/// Which rung of the fallback ladder produced a plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rung {
    Robust,
    Resilient,
    Plain,
}

/// Dijkstra over the lexicographic cost (hidden-action occurrences, plan
/// length). Returns the plan together with the distinct hidden actions it
/// uses; their visibility predicates are what the manager must achieve.
pub fn find_plan_min_hidden(
    domain: &Domain,
    c: &State,
    goal: &Condition,
    visible: &[usize],
    hidden: &[usize],
    hazards: &[HazardRule],
    mode: Option<Mode>,
    limits: SearchLimits,
) -> Search<(Plan, BTreeSet<usize>)> {
    debug_assert!(visible.iter().all(|v| !hidden.contains(v)));
    let mut all: Vec<usize> = visible.iter().chain(hidden.iter()).copied().collect();
    all.sort_unstable();
    let hidden_set: BTreeSet<usize> = hidden.iter().copied().collect();

    let cache = RecoveryCache::new(domain, goal, &all, hazards, limits);
    let allow = |s: &State| -> Allow {
        match mode {
            None => Allow::Yes,
            Some(Mode::Robust) => {
                if matches_any_source(s, hazards) {
                    Allow::No
                } else {
                    Allow::Yes
                }
            }
            Some(Mode::Resilient) => match cache.recoverable(s) {
                Some(true) => Allow::Yes,
                Some(false) => Allow::No,
                None => Allow::Exhausted,
            },
        }
    };

    match allow(c) {
        Allow::Yes => {}
        Allow::No => return Search::NoPlan,
        Allow::Exhausted => return Search::Exhausted,
    }
    if goal.satisfied_by(c) {
        return Search::Found((Plan::default(), BTreeSet::new()));
    }

    let mut states: Vec<State> = vec![c.clone()];
    let mut ids: HashMap<State, usize> = HashMap::new();
    ids.insert(c.clone(), 0);
    let mut best: Vec<(u32, u32)> = vec![(0, 0)];
    let mut parents: Vec<(usize, usize)> = vec![(usize::MAX, usize::MAX)];
    let mut settled: Vec<bool> = vec![false];
    let mut denied: Vec<bool> = vec![false];

    let mut heap: BinaryHeap<Reverse<(u32, u32, u64, usize)>> = BinaryHeap::new();
    let mut seq = 0u64;
    heap.push(Reverse((0, 0, seq, 0)));
    let mut expansions = 0usize;

    while let Some(Reverse((h, l, _, cur))) = heap.pop() {
        if settled[cur] {
            continue;
        }
        settled[cur] = true;
        if goal.satisfied_by(&states[cur]) {
            let plan = reconstruct(&parents, cur);
            let used: BTreeSet<usize> =
                plan.steps.iter().copied().filter(|s| hidden_set.contains(s)).collect();
            return Search::Found((plan, used));
        }
        expansions += 1;
        if expansions > limits.max_expansions {
            return Search::Exhausted;
        }
        for &ai in &all {
            let a = &domain.actions[ai];
            let s = &states[cur];
            if !applicable(s, a) {
                continue;
            }
            let next = a.effect.apply_to(s);
            let cost = (h + u32::from(hidden_set.contains(&ai)), l + 1);
            let idx = match ids.get(&next) {
                Some(&i) => i,
                None => {
                    let i = states.len();
                    states.push(next.clone());
                    best.push((u32::MAX, u32::MAX));
                    parents.push((usize::MAX, usize::MAX));
                    settled.push(false);
                    denied.push(false);
                    ids.insert(next, i);
                    match allow(&states[i]) {
                        Allow::Yes => {}
                        Allow::No => denied[i] = true,
                        Allow::Exhausted => return Search::Exhausted,
                    }
                    i
                }
            };
            if denied[idx] || settled[idx] || cost >= best[idx] {
                continue;
            }
            best[idx] = cost;
            parents[idx] = (cur, ai);
            seq += 1;
            heap.push(Reverse((cost.0, cost.1, seq, idx)));
        }
    }
    Search::NoPlan
}

/// Internal-goal planning: a shortest plan whose final state has every target
/// predicate true.
pub fn achieve_predicates(
    domain: &Domain,
    c: &State,
    targets: &BTreeSet<crate::state::PredicateId>,
    actions: &[usize],
    limits: SearchLimits,
) -> Search<Plan> {
    let goal = Condition::new(
        targets.iter().map(|&p| crate::domain::Literal::pos(p)).collect(),
    )
    .expect("positive literal set is always consistent");
    find_plan(domain, c, &goal, actions, limits)
}

/// Everything the planner needs for one synthesis request.
pub struct PlanRequest<'a> {
    pub start: &'a State,
    pub goal: &'a Condition,
    pub actions: &'a [usize],
    pub hazards: &'a [HazardRule],
    pub mode: Mode,
}

/// The fallback ladder: robust, then resilient, then plain; resilient skips
/// the first rung. Reports which rung produced the plan.
pub fn plan_with_recommendation(
    domain: &Domain,
    req: &PlanRequest<'_>,
    limits: SearchLimits,
) -> (Search<Plan>, Rung) {
    if req.mode == Mode::Robust {
        match find_robust_plan(domain, req.start, req.goal, req.actions, req.hazards, limits) {
            Search::NoPlan => {}
            other => return (other, Rung::Robust),
        }
    }
    match find_resilient_plan(domain, req.start, req.goal, req.actions, req.hazards, limits) {
        Search::NoPlan => {}
        other => return (other, Rung::Resilient),
    }
    (
        find_plan(domain, req.start, req.goal, req.actions, limits),
        Rung::Plain,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Action, ActionKind, Condition, Effect, Literal};
    use crate::state::{PredicateId, PredicateTable, State};
    use std::collections::BTreeSet;

    fn lit(i: u16, pol: bool) -> Literal {
        Literal { predicate: PredicateId(i), polarity: pol }
    }

    /// Line domain: predicates x0..x4 one-hot position, action step_i moves
    /// i -> i+1; "jump" teleports 0 -> 4 but is hidden in some tests.
    fn line_domain() -> Domain {
        let mut preds = PredicateTable::new();
        for i in 0..5 {
            preds.intern(&format!("x{i}"));
        }
        let vis = preds.intern("vis");
        let mut actions = Vec::new();
        for i in 0..4u16 {
            actions.push(Action {
                name: format!("step_{i}"),
                kind: ActionKind::Operational,
                visibility: Some(vis),
                precondition: Condition::new(vec![lit(i, true)]).unwrap(),
                effect: Effect::new(vec![lit(i, false), lit(i + 1, true)]).unwrap(),
            });
        }
        actions.push(Action {
            name: "jump".into(),
            kind: ActionKind::Operational,
            visibility: Some(vis),
            precondition: Condition::new(vec![lit(0, true)]).unwrap(),
            effect: Effect::new(vec![lit(0, false), lit(4, true)]).unwrap(),
        });
        actions.sort_by(|a, b| a.name.cmp(&b.name));
        Domain { predicates: preds, actions, waypoints: vec![Condition::empty()] }
    }

    fn at(i: u16) -> State {
        let mut s = State::all_false(6);
        s.set(PredicateId(i), true);
        s
    }

    fn goal_at(i: u16) -> Condition {
        Condition::new(vec![lit(i, true)]).unwrap()
    }

    fn steps_only(d: &Domain) -> Vec<usize> {
        (0..d.actions.len()).filter(|&i| d.actions[i].name.starts_with("step")).collect()
    }

    #[test]
    fn satisfied_goal_yields_empty_plan() {
        let d = line_domain();
        let s = at(2);
        assert_eq!(
            find_plan(&d, &s, &goal_at(2), &d.all_actions(), SearchLimits::default()),
            Search::Found(Plan::default())
        );
    }

    #[test]
    fn no_actions_means_no_plan() {
        let d = line_domain();
        assert_eq!(
            find_plan(&d, &at(0), &goal_at(3), &[], SearchLimits::default()),
            Search::NoPlan
        );
    }

    #[test]
    fn shortest_plan_prefers_jump() {
        let d = line_domain();
        let plan = find_plan(&d, &at(0), &goal_at(4), &d.all_actions(), SearchLimits::default())
            .found()
            .unwrap();
        assert_eq!(plan.action_names(&d), vec!["jump"]);
    }

    #[test]
    fn path_of_replays_and_reports_bad_step() {
        let d = line_domain();
        let plan = Plan { steps: vec![d.action_index("step_0").unwrap()] };
        let path = path_of(&d, &plan, &at(0)).unwrap();
        assert_eq!(path.len(), 2);
        assert!(path[1].get(PredicateId(1)));
        // Empty plan path is just the start.
        assert_eq!(path_of(&d, &Plan::default(), &at(0)).unwrap(), vec![at(0)]);
        // Broken middle step is named.
        let bad = Plan {
            steps: vec![d.action_index("step_0").unwrap(), d.action_index("step_0").unwrap()],
        };
        let err = path_of(&d, &bad, &at(0)).unwrap_err();
        assert_eq!(err.index, 1);
    }

    fn hazard_on(i: u16, eff: Vec<Literal>) -> HazardRule {
        HazardRule {
            name: format!("h{i}"),
            source: Condition::new(vec![lit(i, true)]).unwrap(),
            consequence: Effect::new(eff).unwrap(),
            class_tags: BTreeSet::new(),
        }
    }

    #[test]
    fn robust_plan_detours_around_sources() {
        let d = line_domain();
        // Hazard source at x1: step route blocked, jump route is clean.
        let hz = vec![hazard_on(1, vec![lit(5, true)])];
        let steps = steps_only(&d);
        assert_eq!(
            find_robust_plan(&d, &at(0), &goal_at(4), &steps, &hz, SearchLimits::default()),
            Search::NoPlan
        );
        let plan =
            find_robust_plan(&d, &at(0), &goal_at(4), &d.all_actions(), &hz, SearchLimits::default())
                .found()
                .unwrap();
        assert_eq!(plan.action_names(&d), vec!["jump"]);
        // No hazards: identical to find_plan.
        assert_eq!(
            find_robust_plan(&d, &at(0), &goal_at(3), &steps, &[], SearchLimits::default()),
            find_plan(&d, &at(0), &goal_at(3), &steps, SearchLimits::default())
        );
    }

    #[test]
    fn robust_plan_absent_when_start_is_a_source() {
        let d = line_domain();
        let hz = vec![hazard_on(0, vec![lit(5, true)])];
        assert_eq!(
            find_robust_plan(&d, &at(0), &goal_at(4), &d.all_actions(), &hz, SearchLimits::default()),
            Search::NoPlan
        );
    }

    #[test]
    fn resilient_plan_accepts_recoverable_sources() {
        let d = line_domain();
        let steps = steps_only(&d);
        // Hazard at x1 throws back to x0: recoverable, so the step route works.
        let hz = vec![hazard_on(1, vec![lit(1, false), lit(0, true)])];
        let plan =
            find_resilient_plan(&d, &at(0), &goal_at(4), &steps, &hz, SearchLimits::default())
                .found()
                .unwrap();
        assert_eq!(plan.len(), 4);
        // Hazard at x1 dumps into dead x5: unrecoverable, step route denied.
        let hz_dead = vec![hazard_on(1, vec![lit(1, false), lit(5, true)])];
        assert_eq!(
            find_resilient_plan(&d, &at(0), &goal_at(4), &steps, &hz_dead, SearchLimits::default()),
            Search::NoPlan
        );
        // With jump available a resilient (indeed robust) route exists.
        assert!(find_resilient_plan(
            &d,
            &at(0),
            &goal_at(4),
            &d.all_actions(),
            &hz_dead,
            SearchLimits::default()
        )
        .is_found());
    }

    #[test]
    fn robust_success_implies_resilient_success() {
        let d = line_domain();
        let hz = vec![hazard_on(1, vec![lit(5, true)])];
        let all = d.all_actions();
        if find_robust_plan(&d, &at(0), &goal_at(4), &all, &hz, SearchLimits::default()).is_found() {
            assert!(find_resilient_plan(&d, &at(0), &goal_at(4), &all, &hz, SearchLimits::default())
                .is_found());
        }
    }

    #[test]
    fn min_hidden_prefers_visible_routes() {
        let d = line_domain();
        let steps = steps_only(&d);
        let jump = vec![d.action_index("jump").unwrap()];
        // Goal reachable via visible steps: hidden jump unused even though shorter.
        let (plan, used) = find_plan_min_hidden(
            &d,
            &at(0),
            &goal_at(4),
            &steps,
            &jump,
            &[],
            None,
            SearchLimits::default(),
        )
        .found()
        .unwrap();
        assert!(used.is_empty());
        assert_eq!(plan.len(), 4);
        // Goal reachable only via the hidden action.
        let (plan, used) = find_plan_min_hidden(
            &d,
            &at(0),
            &goal_at(4),
            &[],
            &jump,
            &[],
            None,
            SearchLimits::default(),
        )
        .found()
        .unwrap();
        assert_eq!(plan.action_names(&d), vec!["jump"]);
        assert_eq!(used.len(), 1);
        // Unreachable even with hidden actions.
        assert_eq!(
            find_plan_min_hidden(
                &d,
                &at(4),
                &goal_at(0),
                &steps,
                &jump,
                &[],
                None,
                SearchLimits::default()
            ),
            Search::NoPlan
        );
    }

    #[test]
    fn min_hidden_honors_robust_mode() {
        let d = line_domain();
        let steps = steps_only(&d);
        let jump = vec![d.action_index("jump").unwrap()];
        let hz = vec![hazard_on(1, vec![lit(5, true)])];
        // Robust mode: the step route crosses the source at x1, so the hidden
        // jump must be used despite its cost.
        let (_, used) = find_plan_min_hidden(
            &d,
            &at(0),
            &goal_at(4),
            &steps,
            &jump,
            &hz,
            Some(Mode::Robust),
            SearchLimits::default(),
        )
        .found()
        .unwrap();
        assert_eq!(used.len(), 1);
    }

    #[test]
    fn achieve_predicates_trivial_and_planned() {
        let d = line_domain();
        let targets: BTreeSet<_> = [PredicateId(2)].into_iter().collect();
        let plan =
            achieve_predicates(&d, &at(0), &targets, &d.all_actions(), SearchLimits::default())
                .found()
                .unwrap();
        assert_eq!(plan.len(), 2);
        let done =
            achieve_predicates(&d, &at(2), &targets, &d.all_actions(), SearchLimits::default())
                .found()
                .unwrap();
        assert!(done.is_empty());
    }

    #[test]
    fn ladder_reports_rung() {
        let d = line_domain();
        let all = d.all_actions();
        // No hazards, robust mode: vacuously robust.
        let req = PlanRequest {
            start: &at(0),
            goal: &goal_at(4),
            actions: &all,
            hazards: &[],
            mode: Mode::Robust,
        };
        let (res, rung) = plan_with_recommendation(&d, &req, SearchLimits::default());
        assert!(res.is_found());
        assert_eq!(rung, Rung::Robust);
        // Robust impossible (start is a source), recoverable: resilient rung.
        let hz = vec![hazard_on(0, vec![lit(0, false), lit(1, true)])];
        let req = PlanRequest {
            start: &at(0),
            goal: &goal_at(4),
            actions: &all,
            hazards: &hz,
            mode: Mode::Robust,
        };
        let (res, rung) = plan_with_recommendation(&d, &req, SearchLimits::default());
        assert!(res.is_found());
        assert_eq!(rung, Rung::Resilient);
        // Nothing reachable at all: plain rung, no plan.
        let req = PlanRequest {
            start: &at(4),
            goal: &goal_at(0),
            actions: &all,
            hazards: &[],
            mode: Mode::Robust,
        };
        let (res, rung) = plan_with_recommendation(&d, &req, SearchLimits::default());
        assert_eq!(res, Search::NoPlan);
        assert_eq!(rung, Rung::Plain);
    }

    #[test]
    fn budget_exhaustion_is_distinct() {
        let d = line_domain();
        assert_eq!(
            find_plan(&d, &at(0), &goal_at(4), &steps_only(&d), SearchLimits { max_expansions: 1 }),
            Search::Exhausted
        );
    }
}
