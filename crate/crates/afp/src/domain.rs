//! Ground planning domain: literals, conditions, actions, hazards, and the
//! transition semantics (precondition consistency, override application,
//! action partitioning, reset, and structural validation).

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::state::{PredicateId, PredicateTable, State};

/// A signed predicate occurrence.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Literal {
    pub predicate: PredicateId,
    pub polarity: bool,
}

impl Literal {
    pub fn pos(predicate: PredicateId) -> Self {
        Literal { predicate, polarity: true }
    }

    pub fn neg(predicate: PredicateId) -> Self {
        Literal { predicate, polarity: false }
    }

    pub fn holds_in(&self, s: &State) -> bool {
        s.get(self.predicate) == self.polarity
    }
}

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("condition mentions {0:?} with both polarities")]
    ContradictoryCondition(PredicateId),
    #[error("effect mentions {0:?} more than once")]
    DuplicateEffect(PredicateId),
    #[error("predicate {0:?} is out of range for this domain (unvalidated domain?)")]
    UnknownPredicate(PredicateId),
    #[error("domain declares no waypoint; reset is not total")]
    NoWaypoint,
    #[error("unknown predicate name '{0}'")]
    UnknownPredicateName(String),
}

/// Conjunction of literals; internally consistent (no predicate appears with
/// both polarities) and sorted by predicate id.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Debug)]
pub struct Condition {
    literals: Vec<Literal>,
}

impl Condition {
    pub fn new(mut literals: Vec<Literal>) -> Result<Self, DomainError> {
        literals.sort();
        literals.dedup();
        for w in literals.windows(2) {
            if w[0].predicate == w[1].predicate {
                return Err(DomainError::ContradictoryCondition(w[0].predicate));
            }
        }
        Ok(Condition { literals })
    }

    pub fn empty() -> Self {
        Condition::default()
    }

    pub fn literals(&self) -> &[Literal] {
        &self.literals
    }

    pub fn is_empty(&self) -> bool {
        self.literals.is_empty()
    }

    pub fn satisfied_by(&self, s: &State) -> bool {
        self.literals.iter().all(|l| l.holds_in(s))
    }

    /// Literals of `self` that do not hold in `s`.
    pub fn violated_in(&self, s: &State) -> Vec<Literal> {
        self.literals.iter().filter(|l| !l.holds_in(s)).copied().collect()
    }
}

/// Override set: at most one literal per predicate, sorted by predicate id.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Debug)]
pub struct Effect {
    literals: Vec<Literal>,
}

impl Effect {
    pub fn new(mut literals: Vec<Literal>) -> Result<Self, DomainError> {
        literals.sort();
        literals.dedup();
        for w in literals.windows(2) {
            if w[0].predicate == w[1].predicate {
                return Err(DomainError::DuplicateEffect(w[0].predicate));
            }
        }
        Ok(Effect { literals })
    }

    pub fn literals(&self) -> &[Literal] {
        &self.literals
    }

    pub fn is_empty(&self) -> bool {
        self.literals.is_empty()
    }

    /// `s` with the predicates mentioned here overridden; everything else is
    /// untouched (frame property).
    pub fn apply_to(&self, s: &State) -> State {
        let mut t = s.clone();
        for l in &self.literals {
            t.set(l.predicate, l.polarity);
        }
        t
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Empowering,
    Operational,
}

/// Ground action. Operational actions carry exactly one visibility predicate;
/// empowering actions carry none and are always available to the planner.
#[derive(Clone, Debug)]
pub struct Action {
    pub name: String,
    pub kind: ActionKind,
    pub visibility: Option<PredicateId>,
    pub precondition: Condition,
    pub effect: Effect,
}

/// Intensional hazard set: every state matching `source` has a hazard
/// transition to that state overridden by `consequence`.
#[derive(Clone, Debug)]
pub struct HazardRule {
    pub name: String,
    pub source: Condition,
    pub consequence: Effect,
    pub class_tags: BTreeSet<String>,
}

impl HazardRule {
    pub fn shares_tag(&self, other: &HazardRule) -> bool {
        self.class_tags.iter().any(|t| other.class_tags.contains(t))
    }
}

/// A (start, goal) pair issued by the environment. A missing start condition
/// means "wherever the agent currently is".
#[derive(Clone, Debug)]
pub struct Mission {
    pub start: Option<Condition>,
    pub goal: Condition,
}

#[derive(Clone, Debug)]
pub struct Domain {
    pub predicates: PredicateTable,
    /// Sorted by name; all planner tie-breaking leans on this order.
    pub actions: Vec<Action>,
    pub waypoints: Vec<Condition>,
}

impl Domain {
    /// Predicates used as visibility gates by any operational action.
    pub fn visibility_predicates(&self) -> BTreeSet<PredicateId> {
        self.actions.iter().filter_map(|a| a.visibility).collect()
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a.name == name)
    }

    /// All action indices, in name order.
    pub fn all_actions(&self) -> Vec<usize> {
        (0..self.actions.len()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Environment {
    /// G: mission goal patterns plus waypoint patterns.
    pub goal_patterns: Vec<Condition>,
    pub missions: Vec<Mission>,
    pub hazard_rules: Vec<HazardRule>,
}

/// A validation finding; data, not an error.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub entity: String,
    pub rule: &'static str,
    pub detail: String,
}

pub const RULE_VISIBILITY_WRITE: &str = "visibility-write";
pub const RULE_UNKNOWN_PREDICATE: &str = "unknown-predicate";
pub const RULE_RESET_TOTALITY: &str = "reset-totality";
pub const RULE_WAYPOINT_GOAL: &str = "waypoint-goal-subset";
pub const RULE_WELL_FORMED: &str = "well-formedness";

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.rule, self.entity, self.detail)
    }
}

/// True iff every precondition literal of `a` holds in `s`.
pub fn applicable(s: &State, a: &Action) -> bool {
    a.precondition.satisfied_by(s)
}

/// Raised when a step's precondition does not hold; the monitor consumes the
/// failing literals.
#[derive(Debug, Error)]
#[error("precondition of '{action}' violated: {failing:?}")]
pub struct PreconditionViolation {
    pub action: String,
    pub failing: Vec<Literal>,
}

/// Override application: `s ← effect(a)`.
pub fn apply(s: &State, a: &Action) -> Result<State, PreconditionViolation> {
    if !applicable(s, a) {
        return Err(PreconditionViolation {
            action: a.name.clone(),
            failing: a.precondition.violated_in(s),
        });
    }
    Ok(a.effect.apply_to(s))
}

/// The three-way action partition at `s`: empowering actions, operational
/// actions whose visibility predicate is true, and the rest (hidden).
/// Index lists are in action (name) order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub empowering: Vec<usize>,
    pub visible: Vec<usize>,
    pub hidden: Vec<usize>,
}

impl Partition {
    /// The action set handed to the planner in normal operation: visible
    /// operational actions plus the always-available empowering actions.
    pub fn planning_set(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.empowering.iter().chain(self.visible.iter()).copied().collect();
        v.sort_unstable();
        v
    }
}

pub fn partition_actions(s: &State, domain: &Domain) -> Partition {
    let mut p = Partition { empowering: vec![], visible: vec![], hidden: vec![] };
    for (i, a) in domain.actions.iter().enumerate() {
        match (a.kind, a.visibility) {
            (ActionKind::Empowering, _) => p.empowering.push(i),
            (ActionKind::Operational, Some(v)) => {
                if s.get(v) {
                    p.visible.push(i)
                } else {
                    p.hidden.push(i)
                }
            }
            // Unreachable in a validated domain; treat as hidden.
            (ActionKind::Operational, None) => p.hidden.push(i),
        }
    }
    p
}

/// If `s` matches the rule's source pattern, the overridden consequence state.
pub fn hazard_consequence(rule: &HazardRule, s: &State) -> Option<State> {
    if rule.source.satisfied_by(s) {
        Some(rule.consequence.apply_to(s))
    } else {
        None
    }
}

/// Deterministic reset policy: override `s` with the nearest waypoint pattern,
/// nearness measured by the number of pattern literals violated in `s`, ties
/// by waypoint declaration order. Total whenever at least one waypoint exists.
pub fn reset_target(s: &State, domain: &Domain) -> Result<State, DomainError> {
    let mut best: Option<(usize, &Condition)> = None;
    for w in &domain.waypoints {
        let dist = w.violated_in(s).len();
        match best {
            Some((d, _)) if d <= dist => {}
            _ => best = Some((dist, w)),
        }
    }
    let (_, pattern) = best.ok_or(DomainError::NoWaypoint)?;
    let mut t = s.clone();
    for l in pattern.literals() {
        t.set(l.predicate, l.polarity);
    }
    Ok(t)
}

/// `"p"` for positive and `"!p"` for negative literals.
pub fn literal_label(domain: &Domain, l: &Literal) -> String {
    let name = domain.predicates.name(l.predicate);
    if l.polarity {
        name.to_string()
    } else {
        format!("!{name}")
    }
}

pub fn condition_labels(domain: &Domain, c: &Condition) -> Vec<String> {
    c.literals().iter().map(|l| literal_label(domain, l)).collect()
}

pub fn effect_labels(domain: &Domain, e: &Effect) -> Vec<String> {
    e.literals().iter().map(|l| literal_label(domain, l)).collect()
}

/// Names of the predicates true in `s`, in predicate order.
pub fn state_true_names(domain: &Domain, s: &State) -> Vec<String> {
    s.true_predicates()
        .map(|p| domain.predicates.name(p).to_string())
        .collect()
}

/// Parses a `"p"` / `"!p"` literal label against the predicate table.
pub fn parse_literal(domain: &Domain, label: &str) -> Result<Literal, DomainError> {
    let (polarity, name) = match label.strip_prefix('!') {
        Some(rest) => (false, rest),
        None => (true, label),
    };
    let predicate = domain
        .predicates
        .lookup(name)
        .ok_or_else(|| DomainError::UnknownPredicateName(name.to_string()))?;
    Ok(Literal { predicate, polarity })
}

fn check_literals(
    out: &mut Vec<Violation>,
    entity: &str,
    literals: &[Literal],
    width: usize,
) {
    for l in literals {
        if l.predicate.0 as usize >= width {
            out.push(Violation {
                entity: entity.to_string(),
                rule: RULE_UNKNOWN_PREDICATE,
                detail: format!("literal references undeclared predicate {:?}", l.predicate),
            });
        }
    }
}

/// Structural validation of the visibility-write discipline and domain
/// integrity. An empty result clears the domain for use.
pub fn validate_domain(domain: &Domain, env: &Environment) -> Vec<Violation> {
    let mut out = Vec::new();
    let width = domain.predicates.len();
    let vis = domain.visibility_predicates();

    let mut seen_names: HashSet<&str> = HashSet::new();
    for a in &domain.actions {
        if !seen_names.insert(a.name.as_str()) {
            out.push(Violation {
                entity: a.name.clone(),
                rule: RULE_WELL_FORMED,
                detail: "duplicate action name".to_string(),
            });
        }
        check_literals(&mut out, &a.name, a.precondition.literals(), width);
        check_literals(&mut out, &a.name, a.effect.literals(), width);
        match a.kind {
            ActionKind::Operational => {
                if a.visibility.is_none() {
                    out.push(Violation {
                        entity: a.name.clone(),
                        rule: RULE_WELL_FORMED,
                        detail: "operational action lacks a visibility predicate".to_string(),
                    });
                }
                // Rule (a): only empowering actions and hazards may raise a
                // visibility predicate.
                for l in a.effect.literals() {
                    if l.polarity && vis.contains(&l.predicate) {
                        out.push(Violation {
                            entity: a.name.clone(),
                            rule: RULE_VISIBILITY_WRITE,
                            detail: format!(
                                "operational action raises visibility predicate '{}'",
                                domain.predicates.name(l.predicate)
                            ),
                        });
                    }
                }
            }
            ActionKind::Empowering => {
                if a.visibility.is_some() {
                    out.push(Violation {
                        entity: a.name.clone(),
                        rule: RULE_WELL_FORMED,
                        detail: "empowering action carries a visibility predicate".to_string(),
                    });
                }
            }
        }
    }

    for h in &env.hazard_rules {
        check_literals(&mut out, &h.name, h.source.literals(), width);
        check_literals(&mut out, &h.name, h.consequence.literals(), width);
        if h.consequence.is_empty() {
            out.push(Violation {
                entity: h.name.clone(),
                rule: RULE_WELL_FORMED,
                detail: "hazard rule has an empty consequence".to_string(),
            });
        }
    }

    if domain.waypoints.is_empty() {
        out.push(Violation {
            entity: "domain".to_string(),
            rule: RULE_RESET_TOTALITY,
            detail: "no waypoint declared; reset cannot be total".to_string(),
        });
    }
    for (i, w) in domain.waypoints.iter().enumerate() {
        check_literals(&mut out, &format!("waypoint#{i}"), w.literals(), width);
        if !env.goal_patterns.contains(w) {
            out.push(Violation {
                entity: format!("waypoint#{i}"),
                rule: RULE_WAYPOINT_GOAL,
                detail: "waypoint pattern is not among the goal patterns".to_string(),
            });
        }
    }

    for (i, m) in env.missions.iter().enumerate() {
        check_literals(&mut out, &format!("mission#{i}"), m.goal.literals(), width);
        if let Some(st) = &m.start {
            check_literals(&mut out, &format!("mission#{i}"), st.literals(), width);
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lit(i: u16, pol: bool) -> Literal {
        Literal { predicate: PredicateId(i), polarity: pol }
    }

    fn tiny_domain() -> (Domain, State) {
        let mut preds = PredicateTable::new();
        for n in ["p", "q", "vis_x"] {
            preds.intern(n);
        }
        let actions = vec![
            Action {
                name: "flip".into(),
                kind: ActionKind::Operational,
                visibility: Some(PredicateId(2)),
                precondition: Condition::new(vec![lit(0, true)]).unwrap(),
                effect: Effect::new(vec![lit(1, true)]).unwrap(),
            },
            Action {
                name: "noop".into(),
                kind: ActionKind::Empowering,
                visibility: None,
                precondition: Condition::empty(),
                effect: Effect::default(),
            },
        ];
        let waypoints = vec![Condition::new(vec![lit(0, false), lit(1, false)]).unwrap()];
        let d = Domain { predicates: preds, actions, waypoints };
        let s = State::all_false(3);
        (d, s)
    }

    #[test]
    fn condition_rejects_contradiction() {
        assert!(Condition::new(vec![lit(0, true), lit(0, false)]).is_err());
        assert!(Condition::new(vec![lit(0, true), lit(0, true)]).is_ok());
    }

    #[test]
    fn empty_precondition_is_vacuously_applicable() {
        let (d, s) = tiny_domain();
        assert!(applicable(&s, &d.actions[1]));
    }

    #[test]
    fn unsatisfied_precondition_blocks() {
        let (d, s) = tiny_domain();
        // flip requires p=true; s has p=false.
        assert!(!applicable(&s, &d.actions[0]));
        let err = apply(&s, &d.actions[0]).unwrap_err();
        assert_eq!(err.failing, vec![lit(0, true)]);
    }

    #[test]
    fn apply_overrides_and_frames() {
        let (d, mut s) = tiny_domain();
        s.set(PredicateId(0), true);
        let t = apply(&s, &d.actions[0]).unwrap();
        assert!(t.get(PredicateId(0)), "frame: p untouched");
        assert!(t.get(PredicateId(1)), "override: q raised");
        // Empty effect is identity.
        let u = apply(&t, &d.actions[1]).unwrap();
        assert_eq!(u, t);
        // Idempotent override.
        let t2 = apply(&t, &d.actions[0]).unwrap();
        assert_eq!(t2, t);
    }

    #[test]
    fn partition_tracks_visibility_predicate() {
        let (d, mut s) = tiny_domain();
        let p = partition_actions(&s, &d);
        assert_eq!(p.empowering, vec![1]);
        assert_eq!(p.visible, Vec::<usize>::new());
        assert_eq!(p.hidden, vec![0]);
        s.set(PredicateId(2), true);
        let p = partition_actions(&s, &d);
        assert_eq!(p.visible, vec![0]);
        assert!(p.hidden.is_empty());
    }

    #[test]
    fn hazard_consequence_matches_pattern() {
        let rule = HazardRule {
            name: "h".into(),
            source: Condition::new(vec![lit(0, true)]).unwrap(),
            consequence: Effect::new(vec![lit(1, true)]).unwrap(),
            class_tags: BTreeSet::new(),
        };
        let s = State::all_false(3);
        assert!(hazard_consequence(&rule, &s).is_none());
        let mut s2 = s.clone();
        s2.set(PredicateId(0), true);
        let t = hazard_consequence(&rule, &s2).unwrap();
        assert!(t.get(PredicateId(1)));
        // Null net effect returns an equal state.
        let rule2 = HazardRule {
            name: "h2".into(),
            source: Condition::new(vec![lit(0, true)]).unwrap(),
            consequence: Effect::new(vec![lit(0, true)]).unwrap(),
            class_tags: BTreeSet::new(),
        };
        assert_eq!(hazard_consequence(&rule2, &s2).unwrap(), s2);
    }

    #[test]
    fn reset_lands_on_waypoint_and_fixes_points() {
        let (d, mut s) = tiny_domain();
        s.set(PredicateId(0), true);
        let w = reset_target(&s, &d).unwrap();
        assert!(d.waypoints[0].satisfied_by(&w));
        // Already at a waypoint: reset is a fixed point.
        assert_eq!(reset_target(&w, &d).unwrap(), w);
    }

    #[test]
    fn validator_flags_visibility_raise() {
        let (mut d, _) = tiny_domain();
        d.actions[0].effect = Effect::new(vec![lit(2, true)]).unwrap();
        let env = Environment {
            goal_patterns: d.waypoints.clone(),
            missions: vec![],
            hazard_rules: vec![],
        };
        let vs = validate_domain(&d, &env);
        assert!(vs.iter().any(|v| v.rule == RULE_VISIBILITY_WRITE && v.entity == "flip"));
    }

    #[test]
    fn empty_domain_validates() {
        let d = Domain {
            predicates: PredicateTable::new(),
            actions: vec![],
            waypoints: vec![Condition::empty()],
        };
        let env = Environment {
            goal_patterns: vec![Condition::empty()],
            missions: vec![],
            hazard_rules: vec![],
        };
        assert!(validate_domain(&d, &env).is_empty());
    }
}
