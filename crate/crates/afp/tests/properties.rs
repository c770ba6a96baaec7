//! Property-based checks over randomly generated states, effects, and
//! domains: effect algebra laws, the action partition, the manager's
//! visibility discipline, the verdict lattice, and trace determinism.

use std::collections::BTreeSet;

use proptest::prelude::*;

use afp::classifier::classify_system;
use afp::domain::{partition_actions, Effect, Literal};
use afp::generator::{random_instance, GeneratorConfig};
use afp::gridbot::build_mini;
use afp::mape::{toggle_visibility, ToggleActor};
use afp::planner::SearchLimits;
use afp::sim::run_game;
use afp::state::{PredicateId, State};

const WIDTH: usize = 10;

fn arb_state() -> impl Strategy<Value = State> {
    proptest::collection::vec(any::<bool>(), WIDTH).prop_map(|bits| {
        let mut s = State::all_false(WIDTH);
        for (i, b) in bits.into_iter().enumerate() {
            s.set(PredicateId(i as u16), b);
        }
        s
    })
}

fn arb_effect() -> impl Strategy<Value = Effect> {
    proptest::collection::btree_map(0..WIDTH as u16, any::<bool>(), 0..WIDTH).prop_map(|m| {
        let lits: Vec<Literal> = m
            .into_iter()
            .map(|(p, polarity)| Literal { predicate: PredicateId(p), polarity })
            .collect();
        Effect::new(lits).expect("one literal per predicate")
    })
}

proptest! {
    /// Applying an effect twice is the same as applying it once.
    #[test]
    fn effect_application_is_idempotent(s in arb_state(), e in arb_effect()) {
        let once = e.apply_to(&s);
        prop_assert_eq!(e.apply_to(&once), once);
    }

    /// Predicates the effect does not mention keep their value (the frame).
    #[test]
    fn effect_respects_the_frame(s in arb_state(), e in arb_effect()) {
        let touched: BTreeSet<u16> = e.literals().iter().map(|l| l.predicate.0).collect();
        let t = e.apply_to(&s);
        for p in 0..WIDTH as u16 {
            if !touched.contains(&p) {
                prop_assert_eq!(t.get(PredicateId(p)), s.get(PredicateId(p)));
            }
        }
    }

    /// Every mentioned predicate ends up with exactly its literal's polarity.
    #[test]
    fn effect_sets_every_mentioned_literal(s in arb_state(), e in arb_effect()) {
        let t = e.apply_to(&s);
        for l in e.literals() {
            prop_assert_eq!(t.get(l.predicate), l.polarity);
        }
    }

    /// The action partition is a true partition of the action set, and the
    /// planning set is exactly empowering plus visible.
    #[test]
    fn partition_covers_actions_exactly_once(seed in 0u64..500) {
        let inst = random_instance(seed, &GeneratorConfig::default());
        for (c, _) in &inst.missions {
            let p = partition_actions(c, &inst.domain);
            let mut all: Vec<usize> =
                p.empowering.iter().chain(&p.visible).chain(&p.hidden).copied().collect();
            all.sort_unstable();
            let expect: Vec<usize> = (0..inst.domain.actions.len()).collect();
            prop_assert_eq!(all, expect);
            let mut plan_set = p.planning_set();
            plan_set.sort_unstable();
            let mut ev: Vec<usize> = p.empowering.iter().chain(&p.visible).copied().collect();
            ev.sort_unstable();
            prop_assert_eq!(plan_set, ev);
        }
    }

    /// The manager may lower visibility but never raise it, and lowering is
    /// reported exactly for the predicates that actually change.
    #[test]
    fn manager_visibility_discipline(s in arb_state(), picks in proptest::collection::btree_set(0..WIDTH as u16, 1..WIDTH)) {
        let preds: BTreeSet<PredicateId> = picks.into_iter().map(PredicateId).collect();
        let mut lowered = s.clone();
        let changed = toggle_visibility(&mut lowered, &preds, false, ToggleActor::Manager)
            .expect("lowering is always allowed");
        let expected: BTreeSet<PredicateId> =
            preds.iter().copied().filter(|&p| s.get(p)).collect();
        prop_assert_eq!(changed.into_iter().collect::<BTreeSet<_>>(), expected);
        for &p in &preds {
            prop_assert!(!lowered.get(p));
        }
        // Raising is always rejected, even as a no-op, and never mutates.
        let mut raised = s.clone();
        let res = toggle_visibility(&mut raised, &preds, true, ToggleActor::Manager);
        prop_assert!(res.is_err());
        prop_assert_eq!(&raised, &s, "a rejected raise must not mutate the state");
    }

    /// The verdict lattice holds on random domains: a robust mission has a
    /// resilient plan, and a resilient plan rules out fragility.
    #[test]
    fn verdict_lattice_on_random_domains(seed in 0u64..300) {
        let inst = random_instance(seed, &GeneratorConfig::default());
        let all = inst.domain.all_actions();
        let v = classify_system(&inst.domain, &inst.missions, &all, &inst.hazards, SearchLimits::default())
            .found()
            .expect("within limits");
        for m in &v.missions {
            prop_assert!(!m.robust || m.resilient_plan);
            prop_assert!(m.fragile == !m.resilient_plan);
            prop_assert!(!m.resilient || !m.fragile);
        }
        prop_assert!(!v.resilient || !v.fragile);
    }

    /// Simulation is a pure function of (scenario, seed, mission budget).
    #[test]
    fn run_game_is_deterministic(seed in 0u64..64) {
        let sc = build_mini().unwrap();
        let a = run_game(&sc, 2, seed).to_ndjson();
        let b = run_game(&sc, 2, seed).to_ndjson();
        prop_assert_eq!(a, b);
    }
}
