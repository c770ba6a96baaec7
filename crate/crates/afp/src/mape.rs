//! The refined MAPE-K loop: monitor (hazard detection via precondition
//! mismatch), analyzer (hazard generalization and <when, duration, mode>
//! recommendations), executor (stepped plan execution with halt-on-hazard),
//! knowledge base, and the autonomic manager protocol.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    partition_actions, reset_target, Action, ActionKind, Condition, Domain, Effect,
    HazardRule, Literal, Partition,
};
use crate::planner::{
    achieve_predicates, find_plan_min_hidden, find_resilient_plan, Mode, Plan, PlanRequest,
    Rung, Search, SearchLimits,
};
use crate::state::{PredicateId, State};
use crate::trace::{digest_hex, EventKind, Trace, VisibilityCause};

/// Urgency of improvement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum When {
    Now,
    Later,
}

/// How long uncovered actions stay visible.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImproveDuration {
    Current,
    All,
}

/// Analyzer recommendation; advisory, the manager improves regardless of the
/// mode value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recommendation {
    pub when: When,
    pub duration: ImproveDuration,
    pub mode: Mode,
}

impl Default for Recommendation {
    fn default() -> Self {
        // The case study needs immediate recovery with retained capability.
        Recommendation { when: When::Now, duration: ImproveDuration::All, mode: Mode::Resilient }
    }
}

/// Recommendation per hazard class tag, with a declared default.
#[derive(Clone, Debug, Default)]
pub struct PolicyTable {
    pub by_tag: BTreeMap<String, Recommendation>,
    pub default: Recommendation,
}

impl PolicyTable {
    pub fn recommend(&self, tags: &BTreeSet<String>) -> Recommendation {
        for t in tags {
            if let Some(&r) = self.by_tag.get(t) {
                return r;
            }
        }
        self.default
    }
}

/// One observed hazard: the state reached after the previous action (`pre`)
/// and the inconsistent state the monitor saw (`observed`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HazardRecord {
    pub pre: State,
    pub observed: State,
    pub step_index: usize,
    /// Declared rules explaining the pair; empty for unknown hazards.
    pub matched_rules: Vec<String>,
    pub mismatch: Vec<Literal>,
}

#[derive(Clone, Debug, Default)]
pub struct KnowledgeBase {
    /// Hazard rules the agent has experienced or generalized to; planning
    /// only guards against these.
    pub known_rules: BTreeSet<String>,
    /// Log, not a set: duplicates are kept.
    pub history: Vec<HazardRecord>,
    /// Visibility predicates deliberately targeted via empowering plans.
    pub internal_goals: BTreeSet<PredicateId>,
    /// Predicates to lower as soon as the current goal is achieved (D = Current).
    pub pending_toggles: BTreeSet<PredicateId>,
    pub policy: PolicyTable,
}

/// Compares the observed state against the next action's precondition; a
/// nonempty mismatch means the monitor has detected a hazard.
pub fn monitor_detect(observed: &State, next_action: &Action) -> Option<Vec<Literal>> {
    let failing = next_action.precondition.violated_in(observed);
    if failing.is_empty() {
        None
    } else {
        Some(failing)
    }
}

/// Appends the hazard (e, c) to the history, matching it against the declared
/// rules: a rule matches when `e` satisfies its source and `c` equals `e`
/// overridden by its consequence.
pub fn record_hazard(
    kb: &mut KnowledgeBase,
    declared: &[HazardRule],
    pre: State,
    observed: State,
    step_index: usize,
    mismatch: Vec<Literal>,
) -> HazardRecord {
    let matched_rules: Vec<String> = declared
        .iter()
        .filter(|r| {
            r.source.satisfied_by(&pre) && r.consequence.apply_to(&pre) == observed
        })
        .map(|r| r.name.clone())
        .collect();
    let record = HazardRecord { pre, observed, step_index, matched_rules, mismatch };
    kb.history.push(record.clone());
    record
}

/// One analyzer output: the hazard set to handle together and its
/// recommendation.
#[derive(Clone, Debug)]
pub struct AnalysisItem {
    pub rules: Vec<HazardRule>,
    pub recommendation: Recommendation,
}

/// Determines the hazard sets to handle (matched rules widened by class-tag
/// generalization) and a recommendation each. Unknown hazards get a synthetic
/// one-off rule rebuilt from the observed pair.
pub fn analyze(kb: &KnowledgeBase, declared: &[HazardRule], record: &HazardRecord) -> Vec<AnalysisItem> {
    if record.matched_rules.is_empty() {
        // Source: the pre-state values of the predicates the hazard changed;
        // consequence: their observed values.
        let mut source = Vec::new();
        let mut consequence = Vec::new();
        for p in 0..record.pre.width() {
            let id = PredicateId(p as u16);
            if record.pre.get(id) != record.observed.get(id) {
                source.push(Literal { predicate: id, polarity: record.pre.get(id) });
                consequence.push(Literal { predicate: id, polarity: record.observed.get(id) });
            }
        }
        let rule = HazardRule {
            name: format!("unknown@{}", digest_hex(record.observed.digest())),
            source: Condition::new(source).expect("distinct predicates"),
            consequence: Effect::new(consequence).expect("distinct predicates"),
            class_tags: BTreeSet::new(),
        };
        return vec![AnalysisItem { rules: vec![rule], recommendation: kb.policy.default }];
    }

    let mut items = Vec::new();
    for name in &record.matched_rules {
        let Some(matched) = declared.iter().find(|r| &r.name == name) else { continue };
        let mut rules: Vec<HazardRule> = vec![matched.clone()];
        for other in declared {
            if other.name != matched.name && other.shares_tag(matched) {
                rules.push(other.clone());
            }
        }
        items.push(AnalysisItem {
            rules,
            recommendation: kb.policy.recommend(&matched.class_tags),
        });
    }
    items
}

#[derive(Debug, Error)]
#[error("manager may not raise visibility predicates directly: {0:?}")]
pub struct DisciplineError(pub Vec<PredicateId>);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToggleActor {
    Manager,
}

/// Manager visibility toggling: lowering is always allowed, raising is
/// forbidden (only empowering actions and hazards raise visibility).
/// Returns the predicates actually changed.
pub fn toggle_visibility(
    state: &mut State,
    predicates: &BTreeSet<PredicateId>,
    value: bool,
    _actor: ToggleActor,
) -> Result<Vec<PredicateId>, DisciplineError> {
    if value {
        return Err(DisciplineError(predicates.iter().copied().collect()));
    }
    let mut changed = Vec::new();
    for &p in predicates {
        if state.get(p) {
            state.set(p, false);
            changed.push(p);
        }
    }
    Ok(changed)
}

/// A hazard injection applied by the environment after an action.
#[derive(Clone, Debug)]
pub struct Injection {
    pub rule: String,
    pub effect: Effect,
}

/// The environment side of the game: may inject hazards after each executed
/// action. Injections are computed against the passed state and applied in
/// the returned order.
pub trait EnvStepper {
    fn inject(&mut self, state: &State) -> Vec<Injection>;
}

/// An environment that never injects anything.
pub struct NullStepper;

impl EnvStepper for NullStepper {
    fn inject(&mut self, _state: &State) -> Vec<Injection> {
        Vec::new()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExecutionOutcome {
    Completed,
    HazardHalt {
        pre: State,
        observed: State,
        step_index: usize,
        mismatch: Vec<Literal>,
    },
    /// An inapplicable step with no hazard injected: a planner or domain bug.
    StepFailure {
        index: usize,
        failing: Vec<Literal>,
    },
}

fn emit_visibility_changes(
    domain: &Domain,
    vis: &BTreeSet<PredicateId>,
    before: &State,
    after: &State,
    cause: VisibilityCause,
    trace: &mut Trace,
) {
    for &p in vis {
        if before.get(p) != after.get(p) {
            trace.push(EventKind::VisibilityChanged {
                predicate: domain.predicates.name(p).to_string(),
                value: after.get(p),
                cause,
            });
        }
    }
}

/// Steps through the plan with the monitor checking each action's
/// precondition; after each applied action the environment may inject
/// hazards. Emits ActionExecuted / HazardInjected / VisibilityChanged events.
pub fn execute(
    domain: &Domain,
    plan: &Plan,
    start: &State,
    env: &mut dyn EnvStepper,
    trace: &mut Trace,
) -> (ExecutionOutcome, State) {
    let vis = domain.visibility_predicates();
    let mut state = start.clone();
    let mut expected = start.clone();
    let mut injected_since = false;

    for (i, &ai) in plan.steps.iter().enumerate() {
        let action = &domain.actions[ai];
        if let Some(mismatch) = monitor_detect(&state, action) {
            if injected_since {
                return (
                    ExecutionOutcome::HazardHalt {
                        pre: expected,
                        observed: state.clone(),
                        step_index: i,
                        mismatch,
                    },
                    state,
                );
            }
            return (ExecutionOutcome::StepFailure { index: i, failing: mismatch }, state);
        }
        let next = action.effect.apply_to(&state);
        let cause = match action.kind {
            ActionKind::Empowering => VisibilityCause::EmpoweringAction,
            ActionKind::Operational => VisibilityCause::OperationalAction,
        };
        emit_visibility_changes(domain, &vis, &state, &next, cause, trace);
        trace.push(EventKind::ActionExecuted {
            action: action.name.clone(),
            pre: digest_hex(state.digest()),
            post: digest_hex(next.digest()),
        });
        expected = next.clone();
        state = next;
        injected_since = false;
        for inj in env.inject(&state) {
            let after = inj.effect.apply_to(&state);
            emit_visibility_changes(domain, &vis, &state, &after, VisibilityCause::Hazard, trace);
            trace.push(EventKind::HazardInjected {
                rule: inj.rule.clone(),
                source: digest_hex(state.digest()),
                effect: crate::domain::effect_labels(domain, &inj.effect),
                result: digest_hex(after.digest()),
            });
            state = after;
            injected_since = true;
        }
    }
    (ExecutionOutcome::Completed, state)
}

/// Queued empowerment work for W = Later, drained between missions.
#[derive(Clone, Debug)]
pub struct DeferredTask {
    pub targets: BTreeSet<PredicateId>,
    pub duration: ImproveDuration,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MissionOutcome {
    Completed,
    Aborted,
    Pathological,
}

enum HazardResponse {
    Resume(Plan),
    Reset,
    Pathological(String),
}

/// Orchestrates the loop: planning on new goals, the hazard-handling protocol
/// with minimum-hidden-action uncovering, resets, and deferred empowerment.
pub struct Manager<'d> {
    pub domain: &'d Domain,
    pub declared_rules: &'d [HazardRule],
    pub kb: KnowledgeBase,
    pub state: State,
    pub deferred: VecDeque<DeferredTask>,
    pub limits: SearchLimits,
    /// Halt-handling rounds allowed per mission before giving up.
    pub max_halts: usize,
}

impl<'d> Manager<'d> {
    pub fn new(
        domain: &'d Domain,
        declared_rules: &'d [HazardRule],
        policy: PolicyTable,
        initial: State,
        limits: SearchLimits,
    ) -> Self {
        Manager {
            domain,
            declared_rules,
            kb: KnowledgeBase { policy, ..KnowledgeBase::default() },
            state: initial,
            deferred: VecDeque::new(),
            limits,
            max_halts: 64,
        }
    }

    /// Rules the agent currently knows about, in declaration order.
    pub fn known_hazards(&self) -> Vec<HazardRule> {
        self.declared_rules
            .iter()
            .filter(|r| self.kb.known_rules.contains(&r.name))
            .cloned()
            .collect()
    }

    pub fn partition(&self) -> Partition {
        partition_actions(&self.state, self.domain)
    }

    fn visibility_targets(&self, used_hidden: &BTreeSet<usize>) -> BTreeSet<PredicateId> {
        used_hidden
            .iter()
            .filter_map(|&i| self.domain.actions[i].visibility)
            .collect()
    }

    /// Runs one mission to completion, abortion, or a pathological outcome.
    pub fn run_mission(
        &mut self,
        mission: usize,
        goal: &Condition,
        env: &mut dyn EnvStepper,
        trace: &mut Trace,
    ) -> MissionOutcome {
        trace.push(EventKind::GoalIssued {
            mission,
            goal: crate::domain::condition_labels(self.domain, goal),
        });
        let mut halts = 0usize;
        let mut pending_plan: Option<Plan> = None;

        loop {
            if pending_plan.is_none() && goal.satisfied_by(&self.state) {
                return self.complete(mission, trace);
            }
            let plan = match pending_plan.take() {
                Some(p) => p,
                None => {
                    let partition = self.partition();
                    let allowed = partition.planning_set();
                    let known = self.known_hazards();
                    let req = PlanRequest {
                        start: &self.state,
                        goal,
                        actions: &allowed,
                        hazards: &known,
                        mode: Mode::Robust,
                    };
                    let (res, rung) =
                        crate::planner::plan_with_recommendation(self.domain, &req, self.limits);
                    match res {
                        Search::Found(p) => {
                            trace.push(EventKind::PlanSynthesized {
                                plan: p.action_names(self.domain),
                                rung,
                            });
                            p
                        }
                        Search::NoPlan => {
                            trace.push(EventKind::Pathological {
                                detail: format!("mission {mission}: no plan over current actions"),
                            });
                            return self.abort(mission, "no-plan", trace);
                        }
                        Search::Exhausted => {
                            trace.push(EventKind::Pathological {
                                detail: format!("mission {mission}: search budget exhausted"),
                            });
                            return self.abort(mission, "budget-exhausted", trace);
                        }
                    }
                }
            };

            let (outcome, new_state) = execute(self.domain, &plan, &self.state, env, trace);
            self.state = new_state;
            match outcome {
                ExecutionOutcome::Completed => {
                    if goal.satisfied_by(&self.state) {
                        return self.complete(mission, trace);
                    }
                    // A silent hazard derailed the tail of the plan; replan.
                }
                ExecutionOutcome::StepFailure { index, failing } => {
                    trace.push(EventKind::Pathological {
                        detail: format!(
                            "step {index} inapplicable with no hazard injected: {failing:?}"
                        ),
                    });
                    return self.abort(mission, "executor-step-failure", trace);
                }
                ExecutionOutcome::HazardHalt { pre, observed, step_index, mismatch } => {
                    halts += 1;
                    if halts > self.max_halts {
                        trace.push(EventKind::Pathological {
                            detail: format!("mission {mission}: halt limit reached"),
                        });
                        return self.abort(mission, "halt-limit", trace);
                    }
                    let record = record_hazard(
                        &mut self.kb,
                        self.declared_rules,
                        pre,
                        observed,
                        step_index,
                        mismatch,
                    );
                    trace.push(EventKind::HazardDetected {
                        step_index: record.step_index,
                        matched_rules: record.matched_rules.clone(),
                        mismatch: record
                            .mismatch
                            .iter()
                            .map(|l| crate::domain::literal_label(self.domain, l))
                            .collect(),
                        pre: digest_hex(record.pre.digest()),
                        observed: digest_hex(record.observed.digest()),
                    });
                    match self.handle_hazard(goal, &record, env, trace) {
                        HazardResponse::Resume(p) => pending_plan = Some(p),
                        HazardResponse::Reset => return self.abort(mission, "reset-to-waypoint", trace),
                        HazardResponse::Pathological(detail) => {
                            trace.push(EventKind::Pathological { detail });
                            return self.abort(mission, "pathological", trace);
                        }
                    }
                }
            }
        }
    }

    /// The hazard-handling protocol: resilient replanning over the current
    /// visible set first, then analyzer-driven uncovering of hidden actions.
    fn handle_hazard(
        &mut self,
        goal: &Condition,
        record: &HazardRecord,
        env: &mut dyn EnvStepper,
        trace: &mut Trace,
    ) -> HazardResponse {
        for name in &record.matched_rules {
            self.kb.known_rules.insert(name.clone());
        }

        // (i) A resilient plan over the current visible actions short-circuits
        // everything: no hidden actions are enabled.
        let partition = self.partition();
        let allowed = partition.planning_set();
        let known = self.known_hazards();
        match find_resilient_plan(self.domain, &self.state, goal, &allowed, &known, self.limits) {
            Search::Found(p) => {
                trace.push(EventKind::PlanSynthesized {
                    plan: p.action_names(self.domain),
                    rung: Rung::Resilient,
                });
                return HazardResponse::Resume(p);
            }
            Search::NoPlan | Search::Exhausted => {}
        }

        // (ii) Analyzer: hazard sets plus recommendations, processed in order.
        let items = analyze(&self.kb, self.declared_rules, record);
        let mut resume: Option<Plan> = None;
        let mut want_reset = false;
        for item in &items {
            for r in &item.rules {
                if self.declared_rules.iter().any(|d| d.name == r.name) {
                    self.kb.known_rules.insert(r.name.clone());
                }
            }
            let rec = item.recommendation;
            trace.push(EventKind::RecommendationChosen {
                hazards: item.rules.iter().map(|r| r.name.clone()).collect(),
                when: rec.when,
                duration: rec.duration,
                mode: rec.mode,
            });

            let partition = self.partition();
            let visible = partition.planning_set();
            let hidden = partition.hidden.clone();
            let ladder: &[Option<Mode>] = match rec.mode {
                Mode::Robust => &[Some(Mode::Robust), Some(Mode::Resilient), None],
                Mode::Resilient => &[Some(Mode::Resilient), None],
            };
            let mut found: Option<(Plan, BTreeSet<usize>)> = None;
            for &mode in ladder {
                match find_plan_min_hidden(
                    self.domain,
                    &self.state,
                    goal,
                    &visible,
                    &hidden,
                    &item.rules,
                    mode,
                    self.limits,
                ) {
                    Search::Found(r) => {
                        found = Some(r);
                        break;
                    }
                    Search::NoPlan | Search::Exhausted => {}
                }
            }
            let Some((plan, used_hidden)) = found else {
                return HazardResponse::Pathological(
                    "no plan even over hidden actions; external support is mandatory".into(),
                );
            };
            let targets = self.visibility_targets(&used_hidden);
            self.kb.internal_goals.extend(targets.iter().copied());

            if targets.is_empty() {
                // The min-hidden plan needs no uncovering at all.
                if resume.is_none() {
                    trace.push(EventKind::PlanSynthesized {
                        plan: plan.action_names(self.domain),
                        rung: match rec.mode {
                            Mode::Robust => Rung::Robust,
                            Mode::Resilient => Rung::Resilient,
                        },
                    });
                    resume = Some(plan);
                }
                continue;
            }

            match rec.when {
                When::Later => {
                    self.deferred.push_back(DeferredTask {
                        targets,
                        duration: rec.duration,
                    });
                    want_reset = true;
                }
                When::Now => {
                    match self.run_empowerment(&targets, env, trace) {
                        Ok(raised) => {
                            if rec.duration == ImproveDuration::Current {
                                self.kb.pending_toggles.extend(raised);
                            }
                            if resume.is_none() {
                                trace.push(EventKind::PlanSynthesized {
                                    plan: plan.action_names(self.domain),
                                    rung: match rec.mode {
                                        Mode::Robust => Rung::Robust,
                                        Mode::Resilient => Rung::Resilient,
                                    },
                                });
                                resume = Some(plan);
                            }
                        }
                        Err(()) => {
                            // Mid-empowerment failure: fall back to reset-and-defer.
                            self.deferred.push_back(DeferredTask {
                                targets,
                                duration: rec.duration,
                            });
                            want_reset = true;
                        }
                    }
                }
            }
        }

        match (resume, want_reset) {
            (Some(p), _) => HazardResponse::Resume(p),
            (None, true) => HazardResponse::Reset,
            (None, false) => {
                HazardResponse::Pathological("hazard handling produced no course of action".into())
            }
        }
    }

    /// Plans and executes an empowering chain raising `targets`. On success
    /// returns every visibility predicate the chain raised — empowering
    /// actions may uncover more than the requested targets, and a temporary
    /// toggle must later lower all of them to restore the partition.
    fn run_empowerment(
        &mut self,
        targets: &BTreeSet<PredicateId>,
        env: &mut dyn EnvStepper,
        trace: &mut Trace,
    ) -> Result<BTreeSet<PredicateId>, ()> {
        let partition = self.partition();
        let allowed = partition.planning_set();
        match achieve_predicates(self.domain, &self.state, targets, &allowed, self.limits) {
            Search::Found(plan) => {
                let before = self.state.clone();
                let (outcome, new_state) = execute(self.domain, &plan, &self.state, env, trace);
                self.state = new_state;
                match outcome {
                    ExecutionOutcome::Completed => {
                        let raised = self
                            .domain
                            .visibility_predicates()
                            .into_iter()
                            .filter(|&p| !before.get(p) && self.state.get(p))
                            .collect();
                        Ok(raised)
                    }
                    _ => Err(()),
                }
            }
            Search::NoPlan | Search::Exhausted => Err(()),
        }
    }

    /// Drains W = Later empowerment tasks; called between missions.
    pub fn drain_deferred(&mut self, env: &mut dyn EnvStepper, trace: &mut Trace) {
        let mut attempts = 0usize;
        while let Some(task) = self.deferred.pop_front() {
            attempts += 1;
            if attempts > 16 {
                trace.push(EventKind::Pathological {
                    detail: "deferred empowerment retry limit reached".into(),
                });
                return;
            }
            if let Ok(raised) = self.run_empowerment(&task.targets, env, trace) {
                if task.duration == ImproveDuration::Current {
                    self.kb.pending_toggles.extend(raised);
                }
            } else {
                trace.push(EventKind::Pathological {
                    detail: "deferred empowerment could not be completed".into(),
                });
            }
        }
    }

    fn complete(&mut self, mission: usize, trace: &mut Trace) -> MissionOutcome {
        trace.push(EventKind::MissionCompleted { mission });
        self.apply_pending_toggles(trace);
        MissionOutcome::Completed
    }

    fn abort(&mut self, mission: usize, reason: &str, trace: &mut Trace) -> MissionOutcome {
        match reset_target(&self.state, self.domain) {
            Ok(target) => {
                let vis = self.domain.visibility_predicates();
                emit_visibility_changes(
                    self.domain,
                    &vis,
                    &self.state,
                    &target,
                    VisibilityCause::Reset,
                    trace,
                );
                trace.push(EventKind::ResetIssued {
                    target: crate::domain::state_true_names(self.domain, &target),
                });
                self.state = target;
            }
            Err(e) => {
                trace.push(EventKind::Pathological { detail: format!("reset failed: {e}") });
            }
        }
        trace.push(EventKind::MissionAborted { mission, reason: reason.to_string() });
        self.apply_pending_toggles(trace);
        MissionOutcome::Aborted
    }

    fn apply_pending_toggles(&mut self, trace: &mut Trace) {
        if self.kb.pending_toggles.is_empty() {
            return;
        }
        let toggles = std::mem::take(&mut self.kb.pending_toggles);
        let changed = toggle_visibility(&mut self.state, &toggles, false, ToggleActor::Manager)
            .expect("lowering is always allowed");
        for p in changed {
            trace.push(EventKind::VisibilityChanged {
                predicate: self.domain.predicates.name(p).to_string(),
                value: false,
                cause: VisibilityCause::ManagerToggle,
            });
        }
    }
}
