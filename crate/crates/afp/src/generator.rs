//! Seeded random domain generator used for oracle cross-checks and benches.
//! Domains stay small enough for exhaustive state enumeration.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{Action, ActionKind, Condition, Domain, Effect, HazardRule, Literal};
use crate::state::{PredicateId, PredicateTable, State};

#[derive(Clone, Copy, Debug)]
pub struct GeneratorConfig {
    pub max_predicates: usize,
    pub max_actions: usize,
    pub max_hazards: usize,
    pub max_missions: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { max_predicates: 12, max_actions: 10, max_hazards: 4, max_missions: 3 }
    }
}

/// One generated instance: a domain, concrete missions, and hazard rules.
#[derive(Clone, Debug)]
pub struct RandomInstance {
    pub domain: Domain,
    pub missions: Vec<(State, Condition)>,
    pub hazards: Vec<HazardRule>,
}

fn random_literals(
    rng: &mut ChaCha8Rng,
    width: usize,
    count: usize,
    skip: PredicateId,
) -> Vec<Literal> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    while out.len() < count {
        let p = PredicateId(rng.gen_range(0..width as u16));
        if p == skip || !seen.insert(p) {
            continue;
        }
        out.push(Literal { predicate: p, polarity: rng.gen_bool(0.5) });
    }
    out
}

/// Deterministic in `seed`: equal seeds yield identical instances.
pub fn random_instance(seed: u64, cfg: &GeneratorConfig) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = rng.gen_range(3..=cfg.max_predicates.max(3));

    let mut predicates = PredicateTable::new();
    // Predicate 0 gates every action and stays true in all starts.
    let vis = predicates.intern("vis");
    for i in 1..width {
        predicates.intern(&format!("p{i}"));
    }

    let n_actions = rng.gen_range(1..=cfg.max_actions.max(1));
    let mut actions = Vec::with_capacity(n_actions);
    for i in 0..n_actions {
        let n_pre = rng.gen_range(0..=2.min(width - 1));
        let pre = random_literals(&mut rng, width, n_pre, vis);
        let n_eff = rng.gen_range(1..=3.min(width - 1));
        let eff = random_literals(&mut rng, width, n_eff, vis);
        actions.push(Action {
            name: format!("a{i:02}"),
            kind: ActionKind::Operational,
            visibility: Some(vis),
            precondition: Condition::new(pre).expect("distinct predicates"),
            effect: Effect::new(eff).expect("distinct predicates"),
        });
    }
    actions.sort_by(|a, b| a.name.cmp(&b.name));

    let n_hazards = rng.gen_range(0..=cfg.max_hazards);
    let mut hazards = Vec::with_capacity(n_hazards);
    for i in 0..n_hazards {
        let n_src = rng.gen_range(1..=2.min(width - 1));
        let source = random_literals(&mut rng, width, n_src, vis);
        let n_con = rng.gen_range(1..=2.min(width - 1));
        let consequence = random_literals(&mut rng, width, n_con, vis);
        let mut class_tags = BTreeSet::new();
        if rng.gen_bool(0.3) {
            class_tags.insert("t".to_string());
        }
        hazards.push(HazardRule {
            name: format!("h{i}"),
            source: Condition::new(source).expect("distinct predicates"),
            consequence: Effect::new(consequence).expect("distinct predicates"),
            class_tags,
        });
    }

    let n_missions = rng.gen_range(1..=cfg.max_missions.max(1));
    let mut missions = Vec::with_capacity(n_missions);
    for _ in 0..n_missions {
        let mut start = State::all_false(width);
        start.set(vis, true);
        for p in 1..width {
            start.set(PredicateId(p as u16), rng.gen_bool(0.5));
        }
        let n_goal = rng.gen_range(1..=2.min(width - 1));
        let goal = Condition::new(random_literals(&mut rng, width, n_goal, vis))
            .expect("distinct predicates");
        missions.push((start, goal));
    }

    let domain = Domain { predicates, actions, waypoints: vec![Condition::empty()] };
    RandomInstance { domain, missions, hazards }
}
