//! Scenario files: a single JSON document declaring the domain, environment,
//! analyzer policy, and seed. Literals are signed strings (`"p"` / `"!p"`).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    validate_domain, Action, ActionKind, Condition, Domain, DomainError, Effect, Environment,
    HazardRule, Literal, Mission, Violation, RULE_WELL_FORMED,
};
use crate::mape::{ImproveDuration, PolicyTable, Recommendation, When};
use crate::planner::Mode;
use crate::state::{PredicateTable, State};

/// Reserved policy-table key naming the default recommendation.
pub const POLICY_DEFAULT_KEY: &str = "default";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKindDoc {
    Empowering,
    Operational,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionDoc {
    pub name: String,
    pub kind: ActionKindDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visible_if: Option<String>,
    #[serde(default)]
    pub pre: Vec<String>,
    #[serde(default)]
    pub eff: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<String>>,
    pub goal: Vec<String>,
}

/// When a matching hazard rule actually fires during a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "trigger", rename_all = "snake_case")]
pub enum HazardSchedule {
    /// Fires on every state matching the source.
    Always,
    /// Fires exactly on the n-th matching state (1-based), never before or after.
    NthMatch { n: u64 },
    /// Fires on a seeded draw with probability p.
    Probability { p: f64 },
}

impl Default for HazardSchedule {
    fn default() -> Self {
        HazardSchedule::Always
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HazardDoc {
    pub name: String,
    pub source: Vec<String>,
    pub effect: Vec<String>,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub schedule: HazardSchedule,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecommendationDoc {
    pub when: When,
    pub duration: ImproveDuration,
    pub mode: Mode,
}

/// Grid-rendering metadata; optional, only needed by `render_grid`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub cols: usize,
    pub rows: usize,
    pub fine_factor: usize,
    /// Coarse cells belonging to some hazard region, as [x, y] pairs.
    #[serde(default)]
    pub hazard_cells: Vec<[usize; 2]>,
}

fn default_reset() -> String {
    "nearest_waypoint".to_string()
}

/// The on-disk schema. `predicates` fixes the predicate numbering; every other
/// section refers to predicates by signed literal strings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDoc {
    pub predicates: Vec<String>,
    pub actions: Vec<ActionDoc>,
    pub waypoints: Vec<Vec<String>>,
    /// Reset policy selector; only "nearest_waypoint" is defined.
    #[serde(default = "default_reset")]
    pub reset: String,
    #[serde(default)]
    pub initial_state: Vec<String>,
    pub missions: Vec<MissionDoc>,
    #[serde(default)]
    pub hazards: Vec<HazardDoc>,
    /// Class tag -> recommendation; the key "default" overrides the fallback.
    #[serde(default)]
    pub policy: BTreeMap<String, RecommendationDoc>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridMeta>,
}

/// A hazard rule paired with its firing schedule.
#[derive(Clone, Debug)]
pub struct ScheduledHazard {
    pub rule: HazardRule,
    pub schedule: HazardSchedule,
}

/// A loaded, validated scenario. Keeps the source document for re-serialization
/// and trace embedding.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub domain: Domain,
    pub initial: State,
    pub missions: Vec<Mission>,
    pub hazards: Vec<ScheduledHazard>,
    pub policy: PolicyTable,
    pub seed: u64,
    pub grid: Option<GridMeta>,
    pub doc: ScenarioDoc,
}

impl Scenario {
    pub fn rules(&self) -> Vec<HazardRule> {
        self.hazards.iter().map(|h| h.rule.clone()).collect()
    }

    pub fn doc_value(&self) -> serde_json::Value {
        serde_json::to_value(&self.doc).expect("scenario document serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.doc).expect("scenario document serializes")
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("scenario failed validation with {} violation(s)", .0.len())]
    Invalid(Vec<Violation>),
}

struct LiteralParser<'a> {
    predicates: &'a PredicateTable,
    violations: Vec<Violation>,
}

impl<'a> LiteralParser<'a> {
    fn parse(&mut self, entity: &str, label: &str) -> Option<Literal> {
        let (polarity, name) = match label.strip_prefix('!') {
            Some(rest) => (false, rest),
            None => (true, label),
        };
        match self.predicates.lookup(name) {
            Some(predicate) => Some(Literal { predicate, polarity }),
            None => {
                self.violations.push(Violation {
                    entity: entity.to_string(),
                    rule: crate::domain::RULE_UNKNOWN_PREDICATE,
                    detail: format!("unknown predicate '{name}'"),
                });
                None
            }
        }
    }

    fn condition(&mut self, entity: &str, labels: &[String]) -> Condition {
        let lits: Vec<Literal> = labels.iter().filter_map(|l| self.parse(entity, l)).collect();
        match Condition::new(lits) {
            Ok(c) => c,
            Err(e) => {
                self.violations.push(Violation {
                    entity: entity.to_string(),
                    rule: RULE_WELL_FORMED,
                    detail: e.to_string(),
                });
                Condition::empty()
            }
        }
    }

    fn effect(&mut self, entity: &str, labels: &[String]) -> Effect {
        let lits: Vec<Literal> = labels.iter().filter_map(|l| self.parse(entity, l)).collect();
        match Effect::new(lits) {
            Ok(e) => e,
            Err(e) => {
                self.violations.push(Violation {
                    entity: entity.to_string(),
                    rule: RULE_WELL_FORMED,
                    detail: e.to_string(),
                });
                Effect::new(Vec::new()).expect("empty effect")
            }
        }
    }
}

fn rec_from_doc(doc: &RecommendationDoc) -> Recommendation {
    Recommendation { when: doc.when, duration: doc.duration, mode: doc.mode }
}

/// Grounds and validates a parsed document. All violations are collected and
/// reported together; a scenario with any violation does not load.
pub fn load_scenario(doc: ScenarioDoc) -> Result<Scenario, LoadError> {
    let mut predicates = PredicateTable::new();
    let mut violations = Vec::new();
    for name in &doc.predicates {
        if predicates.lookup(name).is_some() {
            violations.push(Violation {
                entity: name.clone(),
                rule: RULE_WELL_FORMED,
                detail: "duplicate predicate declaration".to_string(),
            });
            continue;
        }
        predicates.intern(name);
    }

    let mut parser = LiteralParser { predicates: &predicates, violations: Vec::new() };

    let mut actions = Vec::with_capacity(doc.actions.len());
    for a in &doc.actions {
        let kind = match a.kind {
            ActionKindDoc::Empowering => ActionKind::Empowering,
            ActionKindDoc::Operational => ActionKind::Operational,
        };
        let visibility = a.visible_if.as_ref().and_then(|v| {
            let lit = parser.parse(&a.name, v)?;
            if !lit.polarity {
                parser.violations.push(Violation {
                    entity: a.name.clone(),
                    rule: RULE_WELL_FORMED,
                    detail: "visible_if must name a predicate, not a negated literal".to_string(),
                });
                return None;
            }
            Some(lit.predicate)
        });
        actions.push(Action {
            name: a.name.clone(),
            kind,
            visibility,
            precondition: parser.condition(&a.name, &a.pre),
            effect: parser.effect(&a.name, &a.eff),
        });
    }
    actions.sort_by(|a, b| a.name.cmp(&b.name));

    let waypoints: Vec<Condition> = doc
        .waypoints
        .iter()
        .enumerate()
        .map(|(i, w)| parser.condition(&format!("waypoint#{i}"), w))
        .collect();

    if doc.reset != "nearest_waypoint" {
        parser.violations.push(Violation {
            entity: "reset".to_string(),
            rule: RULE_WELL_FORMED,
            detail: format!("unknown reset policy '{}'", doc.reset),
        });
    }

    let missions: Vec<Mission> = doc
        .missions
        .iter()
        .enumerate()
        .map(|(i, m)| Mission {
            start: m
                .start
                .as_ref()
                .map(|s| parser.condition(&format!("mission#{i}"), s)),
            goal: parser.condition(&format!("mission#{i}"), &m.goal),
        })
        .collect();
    if missions.is_empty() {
        parser.violations.push(Violation {
            entity: "missions".to_string(),
            rule: RULE_WELL_FORMED,
            detail: "scenario declares no missions".to_string(),
        });
    }

    let hazards: Vec<ScheduledHazard> = doc
        .hazards
        .iter()
        .map(|h| {
            if let HazardSchedule::Probability { p } = h.schedule {
                if !(0.0..=1.0).contains(&p) {
                    parser.violations.push(Violation {
                        entity: h.name.clone(),
                        rule: RULE_WELL_FORMED,
                        detail: format!("probability {p} outside [0, 1]"),
                    });
                }
            }
            ScheduledHazard {
                rule: HazardRule {
                    name: h.name.clone(),
                    source: parser.condition(&h.name, &h.source),
                    consequence: parser.effect(&h.name, &h.effect),
                    class_tags: h.tags.iter().cloned().collect(),
                },
                schedule: h.schedule,
            }
        })
        .collect();

    // Closed world: unmentioned predicates are false.
    let mut initial = State::all_false(predicates.len());
    for label in &doc.initial_state {
        if let Some(l) = parser.parse("initial_state", label) {
            initial.set(l.predicate, l.polarity);
        }
    }

    let mut policy = PolicyTable::default();
    for (tag, rec) in &doc.policy {
        if tag == POLICY_DEFAULT_KEY {
            policy.default = rec_from_doc(rec);
        } else {
            policy.by_tag.insert(tag.clone(), rec_from_doc(rec));
        }
    }

    violations.extend(parser.violations);

    let domain = Domain { predicates, actions, waypoints: waypoints.clone() };
    let mut goal_patterns: Vec<Condition> = missions.iter().map(|m| m.goal.clone()).collect();
    goal_patterns.extend(waypoints);
    let env = Environment {
        goal_patterns,
        missions: missions.clone(),
        hazard_rules: hazards.iter().map(|h| h.rule.clone()).collect(),
    };
    violations.extend(validate_domain(&domain, &env));
    if !violations.is_empty() {
        return Err(LoadError::Invalid(violations));
    }

    Ok(Scenario {
        domain,
        initial,
        missions,
        hazards,
        policy,
        seed: doc.seed,
        grid: doc.grid.clone(),
        doc,
    })
}

/// Parses and loads a scenario from JSON text.
pub fn load_scenario_str(text: &str) -> Result<Scenario, LoadError> {
    let doc: ScenarioDoc = serde_json::from_str(text)?;
    load_scenario(doc)
}

/// Concretizes a mission start: the reference state overridden by the
/// condition's literals (missions without a start run from the current state).
pub fn concretize_start(reference: &State, start: Option<&Condition>) -> State {
    match start {
        None => reference.clone(),
        Some(c) => {
            let mut s = reference.clone();
            for l in c.literals() {
                s.set(l.predicate, l.polarity);
            }
            s
        }
    }
}

impl DomainError {
    /// Convenience for builders reporting structural errors as violations.
    pub fn into_violation(self, entity: &str) -> Violation {
        Violation {
            entity: entity.to_string(),
            rule: RULE_WELL_FORMED,
            detail: self.to_string(),
        }
    }
}
