//! Ground-truth classifier: materializes the induced transition graph and all
//! hazard pairs explicitly, then applies the fragility definitions literally
//! via set operations. Used to cross-check the search-based classifier.
//!
//! Small predicate sets are enumerated exhaustively (every valuation); larger
//! domains fall back to the closure of the mission starts under action and
//! hazard transitions, which contains every state any plan or hazard can
//! touch and is therefore equivalent for classification.

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::classifier::{MissionVerdict, SystemVerdict};
use crate::domain::{applicable, hazard_consequence, Condition, Domain, HazardRule};
use crate::state::State;

/// Exhaustive enumeration is used up to this many predicates.
pub const FULL_ENUM_MAX_PREDICATES: usize = 14;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("state budget of {0} states exceeded")]
    Budget(usize),
}

/// Explicit transition graph: states, action successor lists, and per-state
/// hazard consequence lists.
pub struct OracleGraph {
    pub states: Vec<State>,
    ids: HashMap<State, usize>,
    /// Action-edge successors, per state, in action order.
    succ: Vec<Vec<usize>>,
    /// Hazard consequence state ids, per state (one entry per matching rule).
    cons: Vec<Vec<usize>>,
    /// Whether any hazard source pattern matches the state.
    source: Vec<bool>,
}

impl OracleGraph {
    /// Materializes the graph. If the domain is small every valuation is a
    /// node; otherwise nodes are the closure of `seeds` under actions and
    /// hazards, capped at `max_states`.
    pub fn materialize(
        domain: &Domain,
        seeds: &[State],
        actions: &[usize],
        hazards: &[HazardRule],
        max_states: usize,
    ) -> Result<Self, OracleError> {
        let width = domain.predicates.len();
        let mut states: Vec<State>;
        let mut ids: HashMap<State, usize> = HashMap::new();

        if width <= FULL_ENUM_MAX_PREDICATES {
            let n = 1usize << width;
            if n > max_states {
                return Err(OracleError::Budget(max_states));
            }
            states = Vec::with_capacity(n);
            for code in 0..n {
                let mut s = State::all_false(width);
                for b in 0..width {
                    if code >> b & 1 == 1 {
                        s.set(crate::state::PredicateId(b as u16), true);
                    }
                }
                ids.insert(s.clone(), code);
                states.push(s);
            }
        } else {
            states = Vec::new();
            let mut queue: VecDeque<usize> = VecDeque::new();
            for seed in seeds {
                if !ids.contains_key(seed) {
                    ids.insert(seed.clone(), states.len());
                    queue.push_back(states.len());
                    states.push(seed.clone());
                }
            }
            while let Some(cur) = queue.pop_front() {
                let s = states[cur].clone();
                let mut nexts: Vec<State> = Vec::new();
                for &ai in actions {
                    let a = &domain.actions[ai];
                    if applicable(&s, a) {
                        nexts.push(a.effect.apply_to(&s));
                    }
                }
                for rule in hazards {
                    if let Some(t) = hazard_consequence(rule, &s) {
                        nexts.push(t);
                    }
                }
                for t in nexts {
                    if !ids.contains_key(&t) {
                        if states.len() >= max_states {
                            return Err(OracleError::Budget(max_states));
                        }
                        ids.insert(t.clone(), states.len());
                        queue.push_back(states.len());
                        states.push(t);
                    }
                }
            }
        }

        let n = states.len();
        let mut succ = Vec::with_capacity(n);
        let mut cons = Vec::with_capacity(n);
        let mut source = Vec::with_capacity(n);
        for s in &states {
            let mut out = Vec::new();
            for &ai in actions {
                let a = &domain.actions[ai];
                if applicable(s, a) {
                    out.push(ids[&a.effect.apply_to(s)]);
                }
            }
            succ.push(out);
            let mut c = Vec::new();
            let mut is_source = false;
            for rule in hazards {
                if let Some(t) = hazard_consequence(rule, s) {
                    is_source = true;
                    c.push(ids[&t]);
                }
            }
            cons.push(c);
            source.push(is_source);
        }
        Ok(OracleGraph { states, ids, succ, cons, source })
    }

    pub fn id_of(&self, s: &State) -> Option<usize> {
        self.ids.get(s).copied()
    }

    /// Exhaustive BFS distance (in actions) from `start` to the nearest state
    /// satisfying `goal`, over action edges only.
    pub fn bfs_distance(&self, start: &State, goal: &Condition) -> Option<usize> {
        let s0 = self.id_of(start)?;
        let mut dist = vec![usize::MAX; self.states.len()];
        dist[s0] = 0;
        let mut queue = VecDeque::new();
        queue.push_back(s0);
        while let Some(cur) = queue.pop_front() {
            if goal.satisfied_by(&self.states[cur]) {
                return Some(dist[cur]);
            }
            for &j in &self.succ[cur] {
                if dist[j] == usize::MAX {
                    dist[j] = dist[cur] + 1;
                    queue.push_back(j);
                }
            }
        }
        None
    }

    fn forward_reach(&self, start: usize, admit: impl Fn(usize) -> bool) -> Vec<bool> {
        let mut reach = vec![false; self.states.len()];
        if !admit(start) {
            return reach;
        }
        reach[start] = true;
        let mut queue = VecDeque::new();
        queue.push_back(start);
        while let Some(cur) = queue.pop_front() {
            for &j in &self.succ[cur] {
                if !reach[j] && admit(j) {
                    reach[j] = true;
                    queue.push_back(j);
                }
            }
        }
        reach
    }

    /// States from which some goal state is reachable over action edges.
    pub fn co_reach(&self, goal: &Condition) -> Vec<bool> {
        let n = self.states.len();
        let mut rev: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, outs) in self.succ.iter().enumerate() {
            for &j in outs {
                rev[j].push(i);
            }
        }
        let mut can = vec![false; n];
        let mut queue = VecDeque::new();
        for (i, s) in self.states.iter().enumerate() {
            if goal.satisfied_by(s) {
                can[i] = true;
                queue.push_back(i);
            }
        }
        while let Some(cur) = queue.pop_front() {
            for &p in &rev[cur] {
                if !can[p] {
                    can[p] = true;
                    queue.push_back(p);
                }
            }
        }
        can
    }

    /// `ok[s]`: every hazard consequence of `s` can still reach the goal.
    pub fn ok_states(&self, co_reach: &[bool]) -> Vec<bool> {
        self.cons
            .iter()
            .map(|ts| ts.iter().all(|&t| co_reach[t]))
            .collect()
    }

    fn mission_verdict(&self, index: usize, c: &State, goal: &Condition) -> MissionVerdict {
        let cid = self.ids[c];
        let can = self.co_reach(goal);
        let ok = self.ok_states(&can);
        let goal_sat: Vec<bool> = self.states.iter().map(|s| goal.satisfied_by(s)).collect();

        let reach = self.forward_reach(cid, |_| true);
        let achievable = reach.iter().zip(&goal_sat).any(|(&r, &g)| r && g);

        let safe_reach = self.forward_reach(cid, |i| !self.source[i]);
        let robust = safe_reach.iter().zip(&goal_sat).any(|(&r, &g)| r && g);

        let ok_reach = self.forward_reach(cid, |i| ok[i]);
        let resilient_plan = ok_reach.iter().zip(&goal_sat).any(|(&r, &g)| r && g);

        // Unachievable missions are never resilient (mirrors the classifier).
        let resilient =
            achievable && (0..self.states.len()).all(|i| !(reach[i] && can[i]) || ok[i]);

        MissionVerdict {
            mission_index: index,
            achievable,
            robust,
            resilient_plan,
            fragile: !resilient_plan,
            unachievable: !achievable,
            resilient,
        }
    }

    /// Plan verdict by direct path scan against the materialized hazard
    /// pairs: (robust, fragile).
    pub fn plan_verdict(&self, path: &[State], goal: &Condition) -> (bool, bool) {
        let can = self.co_reach(goal);
        let mut robust = true;
        let mut fragile = false;
        for s in path {
            let i = self.ids[s];
            if self.source[i] {
                robust = false;
            }
            if self.cons[i].iter().any(|&t| !can[t]) {
                fragile = true;
            }
        }
        (robust, fragile)
    }
}

/// Ground-truth system classification via explicit graph materialization.
pub fn oracle_classify(
    domain: &Domain,
    missions: &[(State, Condition)],
    actions: &[usize],
    hazards: &[HazardRule],
    max_states: usize,
) -> Result<SystemVerdict, OracleError> {
    let seeds: Vec<State> = missions.iter().map(|(c, _)| c.clone()).collect();
    let graph = OracleGraph::materialize(domain, &seeds, actions, hazards, max_states)?;
    let verdicts: Vec<MissionVerdict> = missions
        .iter()
        .enumerate()
        .map(|(i, (c, g))| graph.mission_verdict(i, c, g))
        .collect();
    Ok(SystemVerdict {
        fragile: verdicts.iter().any(|m| m.fragile),
        robust: verdicts.iter().all(|m| m.robust),
        resilient: verdicts.iter().all(|m| m.resilient),
        missions: verdicts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::classify_system;
    use crate::domain::{Action, ActionKind, Effect, Literal};
    use crate::planner::SearchLimits;
    use crate::state::{PredicateId, PredicateTable};
    use std::collections::BTreeSet;

    fn lit(i: u16, pol: bool) -> Literal {
        Literal { predicate: PredicateId(i), polarity: pol }
    }

    #[test]
    fn single_state_domain_is_robust_and_resilient() {
        let mut preds = PredicateTable::new();
        preds.intern("p");
        let d = Domain { predicates: preds, actions: vec![], waypoints: vec![Condition::empty()] };
        let c = State::all_false(1);
        let missions = vec![(c.clone(), Condition::empty())];
        let v = oracle_classify(&d, &missions, &[], &[], 100_000).unwrap();
        assert!(v.robust && v.resilient && !v.fragile);
    }

    #[test]
    fn oracle_agrees_with_classifier_on_a_small_domain() {
        let mut preds = PredicateTable::new();
        for i in 0..3 {
            preds.intern(&format!("p{i}"));
        }
        let vis = preds.intern("vis");
        let mut actions = vec![
            Action {
                name: "a01".into(),
                kind: ActionKind::Operational,
                visibility: Some(vis),
                precondition: Condition::new(vec![lit(0, true)]).unwrap(),
                effect: Effect::new(vec![lit(0, false), lit(1, true)]).unwrap(),
            },
            Action {
                name: "a12".into(),
                kind: ActionKind::Operational,
                visibility: Some(vis),
                precondition: Condition::new(vec![lit(1, true)]).unwrap(),
                effect: Effect::new(vec![lit(1, false), lit(2, true)]).unwrap(),
            },
        ];
        actions.sort_by(|a, b| a.name.cmp(&b.name));
        let d = Domain { predicates: preds, actions, waypoints: vec![Condition::empty()] };
        let mut c = State::all_false(4);
        c.set(PredicateId(0), true);
        let goal = Condition::new(vec![lit(2, true)]).unwrap();
        let hz = vec![HazardRule {
            name: "h".into(),
            source: Condition::new(vec![lit(1, true)]).unwrap(),
            consequence: Effect::new(vec![lit(1, false)]).unwrap(),
            class_tags: BTreeSet::new(),
        }];
        let missions = vec![(c, goal)];
        let all = d.all_actions();
        let a = oracle_classify(&d, &missions, &all, &hz, 100_000).unwrap();
        let b = classify_system(&d, &missions, &all, &hz, SearchLimits::default())
            .found()
            .unwrap();
        assert_eq!(a, b);
        // Losing p1 strands the agent: fragile.
        assert!(a.fragile);
    }
}
