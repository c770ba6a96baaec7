//! Grid-robot case study builder: coarse/fine grid navigation with visible
//! MOVE/TURN, hidden smallMOVE/smallTURN, an empowering sensor chain, and
//! slippery-surface hazards (oil always fires; ice and sand are declared for
//! generalization but never scheduled to fire).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Violation, RULE_WELL_FORMED};
use crate::scenario::{
    load_scenario, ActionDoc, ActionKindDoc, GridMeta, HazardDoc, HazardSchedule, LoadError,
    MissionDoc, RecommendationDoc, Scenario, ScenarioDoc,
};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Heading {
    N,
    E,
    S,
    W,
}

pub const HEADINGS: [Heading; 4] = [Heading::N, Heading::E, Heading::S, Heading::W];

impl Heading {
    pub fn name(self) -> &'static str {
        match self {
            Heading::N => "N",
            Heading::E => "E",
            Heading::S => "S",
            Heading::W => "W",
        }
    }

    /// Unit step, with north = +y and east = +x.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Heading::N => (0, 1),
            Heading::E => (1, 0),
            Heading::S => (0, -1),
            Heading::W => (-1, 0),
        }
    }

    pub fn left(self) -> Heading {
        match self {
            Heading::N => Heading::W,
            Heading::W => Heading::S,
            Heading::S => Heading::E,
            Heading::E => Heading::N,
        }
    }

    pub fn right(self) -> Heading {
        self.left().left().left()
    }
}

pub type Cell = (usize, usize);

#[derive(Clone, Debug)]
pub struct GridSpec {
    pub cols: usize,
    pub rows: usize,
    /// Fine subcells per coarse cell per axis.
    pub fine_factor: usize,
    /// Oil cells: hazard fires on every entry.
    pub spill_cells: Vec<Cell>,
    /// Ice cells: declared with the slippery tag, never scheduled to fire.
    pub ice_cells: Vec<Cell>,
    /// Sand cells: as ice.
    pub sand_cells: Vec<Cell>,
    pub start: (Cell, Heading),
    pub waypoint: (Cell, Heading),
    /// Goal cells, one mission each, issued in order.
    pub missions: Vec<Cell>,
    pub seed: u64,
    /// Extra analyzer policy entries (tag -> recommendation).
    pub policy: BTreeMap<String, RecommendationDoc>,
    /// Alternative reading of spill exit: the spill also hides MOVE/TURN and
    /// an exit hazard re-raises vis_move once the robot is out.
    pub exit_as_hazard: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            cols: 6,
            rows: 5,
            fine_factor: 2,
            spill_cells: vec![(2, 1), (3, 1), (2, 2)],
            ice_cells: vec![(2, 0), (2, 3)],
            sand_cells: vec![(2, 4)],
            // Facing north, every shortest first-mission path crosses the oil
            // at (2,2) rather than slipping between spill rows.
            start: ((0, 0), Heading::N),
            waypoint: ((0, 0), Heading::N),
            missions: vec![(5, 2), (0, 4)],
            seed: 42,
            policy: BTreeMap::new(),
            exit_as_hazard: false,
        }
    }
}

impl GridSpec {
    /// Oracle-scale variant: 3×3 grid with the middle column fully spilled,
    /// blocking the only coarse corridor.
    pub fn mini() -> Self {
        GridSpec {
            cols: 3,
            rows: 3,
            spill_cells: vec![(1, 0), (1, 1), (1, 2)],
            ice_cells: vec![],
            sand_cells: vec![],
            missions: vec![(2, 1), (0, 2)],
            seed: 7,
            ..GridSpec::default()
        }
    }

    /// All cells belonging to some slippery region, in declaration order.
    pub fn hazard_cells(&self) -> Vec<Cell> {
        let mut cells = self.spill_cells.clone();
        cells.extend(&self.ice_cells);
        cells.extend(&self.sand_cells);
        cells
    }
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid spec is inconsistent: {0:?}")]
    Spec(Vec<Violation>),
    #[error(transparent)]
    Load(#[from] LoadError),
}

fn at(c: Cell) -> String {
    format!("at_{}_{}", c.0, c.1)
}

fn fat(c: Cell) -> String {
    format!("fat_{}_{}", c.0, c.1)
}

fn heading(h: Heading) -> String {
    format!("heading_{}", h.name())
}

fn neg(s: String) -> String {
    format!("!{s}")
}

fn check_spec(spec: &GridSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut bad = |entity: &str, detail: String| {
        out.push(Violation { entity: entity.to_string(), rule: RULE_WELL_FORMED, detail });
    };
    if spec.cols == 0 || spec.rows == 0 || spec.fine_factor < 2 {
        bad("grid", format!(
            "need cols ≥ 1, rows ≥ 1, fine_factor ≥ 2; got {}x{} f={}",
            spec.cols, spec.rows, spec.fine_factor
        ));
    }
    let in_bounds = |c: Cell| c.0 < spec.cols && c.1 < spec.rows;
    for c in spec.hazard_cells() {
        if !in_bounds(c) {
            bad("hazard_cells", format!("cell {c:?} out of bounds"));
        }
    }
    for c in &spec.missions {
        if !in_bounds(*c) {
            bad("missions", format!("goal cell {c:?} out of bounds"));
        }
    }
    for (name, (cell, _)) in [("start", &spec.start), ("waypoint", &spec.waypoint)] {
        if !in_bounds(*cell) {
            bad(name, format!("cell {cell:?} out of bounds"));
        }
        if spec.hazard_cells().contains(cell) {
            bad(name, format!("cell {cell:?} lies in a hazard region"));
        }
    }
    if spec.missions.is_empty() {
        bad("missions", "at least one goal cell required".into());
    }
    out
}

/// Emits the scenario document. Predicate order: coarse cells, fine cells,
/// headings, then the flags.
pub fn build_doc(spec: &GridSpec) -> Result<ScenarioDoc, GridError> {
    let violations = check_spec(spec);
    if !violations.is_empty() {
        return Err(GridError::Spec(violations));
    }
    let f = spec.fine_factor;
    let (fcols, frows) = (spec.cols * f, spec.rows * f);
    let hazard_cells = spec.hazard_cells();
    let in_region = |fc: Cell| hazard_cells.contains(&(fc.0 / f, fc.1 / f));
    let anchor = |c: Cell| (c.0 * f, c.1 * f);

    let mut predicates = Vec::new();
    for y in 0..spec.rows {
        for x in 0..spec.cols {
            predicates.push(at((x, y)));
        }
    }
    for fy in 0..frows {
        for fx in 0..fcols {
            predicates.push(fat((fx, fy)));
        }
    }
    for h in HEADINGS {
        predicates.push(heading(h));
    }
    predicates.extend(
        ["inSpill", "sensorsCalibrated", "vis_move", "vis_smallMOVE", "vis_smallTURN"]
            .map(String::from),
    );

    let mut actions = Vec::new();
    let step = |c: Cell, h: Heading, cols: usize, rows: usize| -> Option<Cell> {
        let (dx, dy) = h.delta();
        let nx = c.0 as isize + dx;
        let ny = c.1 as isize + dy;
        if nx < 0 || ny < 0 || nx as usize >= cols || ny as usize >= rows {
            None
        } else {
            Some((nx as usize, ny as usize))
        }
    };

    // Coarse motion: one cell forward, anchored to the cell's first subcell.
    for y in 0..spec.rows {
        for x in 0..spec.cols {
            for h in HEADINGS {
                let Some(dest) = step((x, y), h, spec.cols, spec.rows) else { continue };
                actions.push(ActionDoc {
                    name: format!("MOVE_{}_from_{}_{}", h.name(), x, y),
                    kind: ActionKindDoc::Operational,
                    visible_if: Some("vis_move".into()),
                    pre: vec![at((x, y)), heading(h), "!inSpill".into(), fat(anchor((x, y)))],
                    eff: vec![
                        neg(at((x, y))),
                        at(dest),
                        neg(fat(anchor((x, y)))),
                        fat(anchor(dest)),
                    ],
                });
            }
        }
    }
    for h in HEADINGS {
        for h2 in [h.left(), h.right()] {
            actions.push(ActionDoc {
                name: format!("TURN_{}_{}", h.name(), h2.name()),
                kind: ActionKindDoc::Operational,
                visible_if: Some("vis_move".into()),
                pre: vec![heading(h), "!inSpill".into()],
                eff: vec![neg(heading(h)), heading(h2)],
            });
        }
    }

    // Fine motion: one subcell forward; crossing a cell boundary re-establishes
    // the coarse position, and inSpill tracks region membership of the
    // destination (the grounding encodes what conditional effects would say).
    for fy in 0..frows {
        for fx in 0..fcols {
            for h in HEADINGS {
                let Some(dest) = step((fx, fy), h, fcols, frows) else { continue };
                let mut eff = vec![neg(fat((fx, fy))), fat(dest)];
                let old_cell = (fx / f, fy / f);
                let new_cell = (dest.0 / f, dest.1 / f);
                if old_cell != new_cell {
                    eff.push(neg(at(old_cell)));
                    eff.push(at(new_cell));
                }
                eff.push(if in_region(dest) { "inSpill".into() } else { "!inSpill".into() });
                actions.push(ActionDoc {
                    name: format!("smallMOVE_{}_from_{}_{}", h.name(), fx, fy),
                    kind: ActionKindDoc::Operational,
                    visible_if: Some("vis_smallMOVE".into()),
                    pre: vec![fat((fx, fy)), heading(h)],
                    eff,
                });
            }
        }
    }
    for h in HEADINGS {
        for h2 in [h.left(), h.right()] {
            actions.push(ActionDoc {
                name: format!("smallTURN_{}_{}", h.name(), h2.name()),
                kind: ActionKindDoc::Operational,
                visible_if: Some("vis_smallTURN".into()),
                pre: vec![heading(h)],
                eff: vec![neg(heading(h)), heading(h2)],
            });
        }
    }

    // Empowering chain: calibration is a required precondition of the enabler.
    actions.push(ActionDoc {
        name: "CALIBRATE_SENSORS".into(),
        kind: ActionKindDoc::Empowering,
        visible_if: None,
        pre: vec![],
        eff: vec!["sensorsCalibrated".into()],
    });
    actions.push(ActionDoc {
        name: "ENABLE_FINE_SENSORS".into(),
        kind: ActionKindDoc::Empowering,
        visible_if: None,
        pre: vec!["sensorsCalibrated".into()],
        eff: vec!["vis_smallMOVE".into(), "vis_smallTURN".into()],
    });

    // Hazards: the source is the state reached by the MOVE that entered the
    // cell (coarse sensors do not notice the surface, so inSpill is still
    // false there); the consequence flags the spill and displaces the robot to
    // the first in-spill subcell distinct from the entry anchor (row-major).
    let mut hazards = Vec::new();
    let mut rule = |kind: &str, cell: Cell, schedule: HazardSchedule| {
        let a = anchor(cell);
        let displaced = (a.0 + 1, a.1);
        let mut effect = vec!["inSpill".into(), neg(fat(a)), fat(displaced)];
        if spec.exit_as_hazard {
            effect.push("!vis_move".into());
        }
        hazards.push(HazardDoc {
            name: format!("{kind}_{}_{}", cell.0, cell.1),
            source: vec![at(cell), "!inSpill".into()],
            effect,
            tags: vec!["slippery".into()],
            schedule,
        });
    };
    for &c in &spec.spill_cells {
        rule("oilSpill", c, HazardSchedule::Always);
    }
    for &c in &spec.ice_cells {
        rule("iceSheet", c, HazardSchedule::Probability { p: 0.0 });
    }
    for &c in &spec.sand_cells {
        rule("slipperySand", c, HazardSchedule::Probability { p: 0.0 });
    }
    if spec.exit_as_hazard {
        hazards.push(HazardDoc {
            name: "spillExit".into(),
            source: vec!["!inSpill".into(), "!vis_move".into()],
            effect: vec!["vis_move".into()],
            tags: vec!["recovery".into()],
            schedule: HazardSchedule::Always,
        });
    }

    // The waypoint pattern restores the full pose (one-hot included) without
    // touching visibility or calibration, so reset can never raise visibility.
    let (wcell, wheading) = spec.waypoint;
    let mut waypoint = Vec::new();
    for y in 0..spec.rows {
        for x in 0..spec.cols {
            let p = at((x, y));
            waypoint.push(if (x, y) == wcell { p } else { neg(p) });
        }
    }
    let wanchor = anchor(wcell);
    for fy in 0..frows {
        for fx in 0..fcols {
            let p = fat((fx, fy));
            waypoint.push(if (fx, fy) == wanchor { p } else { neg(p) });
        }
    }
    for h in HEADINGS {
        let p = heading(h);
        waypoint.push(if h == wheading { p } else { neg(p) });
    }
    waypoint.push("!inSpill".into());

    let (scell, sheading) = spec.start;
    let initial_state = vec![at(scell), fat(anchor(scell)), heading(sheading), "vis_move".into()];

    let missions = spec
        .missions
        .iter()
        .map(|&c| MissionDoc { start: None, goal: vec![at(c)] })
        .collect();

    Ok(ScenarioDoc {
        predicates,
        actions,
        waypoints: vec![waypoint],
        reset: "nearest_waypoint".into(),
        initial_state,
        missions,
        hazards,
        policy: spec.policy.clone(),
        seed: spec.seed,
        grid: Some(GridMeta {
            cols: spec.cols,
            rows: spec.rows,
            fine_factor: f,
            hazard_cells: hazard_cells.iter().map(|&(x, y)| [x, y]).collect(),
        }),
    })
}

/// Builds and loads the scenario in one step.
pub fn build(spec: &GridSpec) -> Result<Scenario, GridError> {
    Ok(load_scenario(build_doc(spec)?)?)
}

/// The 3×3 oracle-scale variant.
pub fn build_mini() -> Result<Scenario, GridError> {
    build(&GridSpec::mini())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{applicable, hazard_consequence, partition_actions};
    use crate::state::State;

    fn lookup(sc: &Scenario, name: &str) -> crate::state::PredicateId {
        sc.domain.predicates.lookup(name).unwrap_or_else(|| panic!("missing predicate {name}"))
    }

    #[test]
    fn default_build_validates_and_counts_actions() {
        let sc = build(&GridSpec::default()).unwrap();
        // 6×5 grid: 98 MOVE, 8 TURN, 436 smallMOVE (12×10 fine), 8 smallTURN,
        // 2 empowering.
        let count = |prefix: &str| sc.domain.actions.iter().filter(|a| a.name.starts_with(prefix)).count();
        assert_eq!(count("MOVE_"), 98);
        assert_eq!(count("TURN_"), 8);
        assert_eq!(count("smallMOVE_"), 436);
        assert_eq!(count("smallTURN_"), 8);
        assert_eq!(sc.domain.actions.len(), 552);
        assert_eq!(sc.hazards.len(), 6);
        assert_eq!(sc.missions.len(), 2);
    }

    #[test]
    fn initial_partition_hides_small_actions() {
        let sc = build(&GridSpec::default()).unwrap();
        let p = partition_actions(&sc.initial, &sc.domain);
        assert_eq!(p.empowering.len(), 2);
        assert!(p
            .visible
            .iter()
            .all(|&i| !sc.domain.actions[i].name.starts_with("small")));
        assert!(p.hidden.iter().all(|&i| sc.domain.actions[i].name.starts_with("small")));
        assert_eq!(p.hidden.len(), 444);
    }

    #[test]
    fn move_example_and_spill_consequence() {
        let sc = build(&GridSpec::default()).unwrap();
        let a = &sc.domain.actions[sc.domain.action_index("MOVE_E_from_1_1").unwrap()];
        assert!(!applicable(&sc.initial, a), "robot starts at (0,0), not (1,1)");
        // Walk the robot to (1,1) facing east by hand.
        let mut s = sc.initial.clone();
        for (p, v) in [
            ("at_0_0", false),
            ("at_1_1", true),
            ("fat_0_0", false),
            ("fat_2_2", true),
            ("heading_N", false),
            ("heading_E", true),
        ] {
            s.set(lookup(&sc, p), v);
        }
        assert!(applicable(&s, a));
        let s2 = a.effect.apply_to(&s);
        assert!(s2.get(lookup(&sc, "at_2_1")));
        assert!(s2.get(lookup(&sc, "fat_4_2")));
        assert!(!s2.get(lookup(&sc, "inSpill")), "coarse sensors miss the surface");
        // (2,1) is a spill cell: the entry state is a hazard source.
        let rule = &sc.hazards.iter().find(|h| h.rule.name == "oilSpill_2_1").unwrap().rule;
        let c = hazard_consequence(rule, &s2).expect("entry state matches the source");
        assert!(c.get(lookup(&sc, "inSpill")));
        assert!(!c.get(lookup(&sc, "fat_4_2")));
        assert!(c.get(lookup(&sc, "fat_5_2")), "displaced one subcell east");
        // The displaced pose breaks the next MOVE's anchor precondition.
        let next = &sc.domain.actions[sc.domain.action_index("MOVE_E_from_2_1").unwrap()];
        assert!(!applicable(&c, next));
    }

    #[test]
    fn empowering_chain_raises_small_visibility() {
        let sc = build(&GridSpec::default()).unwrap();
        let cal = &sc.domain.actions[sc.domain.action_index("CALIBRATE_SENSORS").unwrap()];
        let ena = &sc.domain.actions[sc.domain.action_index("ENABLE_FINE_SENSORS").unwrap()];
        assert!(!applicable(&sc.initial, ena), "enabling requires calibration first");
        let s = cal.effect.apply_to(&sc.initial);
        assert!(applicable(&s, ena));
        let s = ena.effect.apply_to(&s);
        assert!(s.get(lookup(&sc, "vis_smallMOVE")));
        assert!(s.get(lookup(&sc, "vis_smallTURN")));
    }

    #[test]
    fn reset_restores_pose_without_touching_visibility() {
        let sc = build(&GridSpec::default()).unwrap();
        let mut s = sc.initial.clone();
        for (p, v) in [
            ("at_0_0", false),
            ("at_3_1", true),
            ("fat_0_0", false),
            ("fat_7_2", true),
            ("inSpill", true),
            ("vis_smallMOVE", true),
        ] {
            s.set(lookup(&sc, p), v);
        }
        let t = crate::domain::reset_target(&s, &sc.domain).unwrap();
        assert!(t.get(lookup(&sc, "at_0_0")));
        assert!(t.get(lookup(&sc, "fat_0_0")));
        assert!(!t.get(lookup(&sc, "at_3_1")));
        assert!(!t.get(lookup(&sc, "inSpill")));
        assert!(t.get(lookup(&sc, "vis_smallMOVE")), "reset leaves visibility alone");
    }

    #[test]
    fn one_hot_invariants_hold_over_mini_closure() {
        let sc = build_mini().unwrap();
        let d = &sc.domain;
        let all = d.all_actions();
        let rules = sc.rules();
        let closure = crate::classifier::explore_closure(d, &sc.initial, &all, &rules, 200_000)
            .expect("mini closure fits the budget");
        let states = closure.states;
        assert!(states.len() > 100);
        let count_true = |s: &State, prefix: &str| {
            d.predicates
                .iter()
                .filter(|(id, name)| name.starts_with(prefix) && s.get(*id))
                .count()
        };
        let in_spill = lookup(&sc, "inSpill");
        for s in &states {
            assert_eq!(count_true(s, "at_"), 1, "coarse one-hot");
            assert_eq!(count_true(s, "fat_"), 1, "fine one-hot");
            assert_eq!(count_true(s, "heading_"), 1, "heading one-hot");
            // inSpill implies the fine position lies in a hazard region.
            if s.get(in_spill) {
                let (id, _) = d
                    .predicates
                    .iter()
                    .find(|(id, name)| name.starts_with("fat_") && s.get(*id))
                    .unwrap();
                let name = d.predicates.name(id);
                let parts: Vec<usize> =
                    name[4..].split('_').map(|t| t.parse().unwrap()).collect();
                let cell = (parts[0] / 2, parts[1] / 2);
                assert!(
                    sc.grid.as_ref().unwrap().hazard_cells.contains(&[cell.0, cell.1]),
                    "inSpill set outside hazard regions at {name}"
                );
            }
        }
    }

    #[test]
    fn spec_errors_are_reported() {
        let mut spec = GridSpec::default();
        spec.spill_cells.push((9, 9));
        assert!(matches!(build(&spec), Err(GridError::Spec(_))));
        let mut spec = GridSpec::default();
        spec.start = ((2, 1), Heading::E);
        assert!(matches!(build(&spec), Err(GridError::Spec(_))));
        let mut spec = GridSpec::default();
        spec.missions.clear();
        assert!(matches!(build(&spec), Err(GridError::Spec(_))));
    }

    #[test]
    fn exit_as_hazard_flag_adds_recovery_rule() {
        let spec = GridSpec { exit_as_hazard: true, ..GridSpec::mini() };
        let sc = build(&spec).unwrap();
        let exit = sc.hazards.iter().find(|h| h.rule.name == "spillExit").unwrap();
        assert!(exit
            .rule
            .consequence
            .literals()
            .iter()
            .any(|l| l.polarity && l.predicate == lookup(&sc, "vis_move")));
        let oil = &sc.hazards.iter().find(|h| h.rule.name == "oilSpill_1_0").unwrap().rule;
        assert!(oil
            .consequence
            .literals()
            .iter()
            .any(|l| !l.polarity && l.predicate == lookup(&sc, "vis_move")));
    }
}
