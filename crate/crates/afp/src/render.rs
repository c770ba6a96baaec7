//! Fixed-width text rendering of grid scenarios: fine grid with coarse cell
//! borders, hazard regions, the robot glyph, and the latest plan overlay.

use thiserror::Error;

use crate::scenario::{GridMeta, Scenario};
use crate::sim::{replay_state, ReplayError};
use crate::state::State;
use crate::trace::{EventKind, Trace};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("scenario declares no grid metadata; rendering unsupported")]
    NoGrid,
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

fn fine_position(scenario: &Scenario, s: &State) -> Option<(usize, usize)> {
    for (id, name) in scenario.domain.predicates.iter() {
        if let Some(rest) = name.strip_prefix("fat_") {
            if s.get(id) {
                let mut it = rest.split('_');
                let x = it.next()?.parse().ok()?;
                let y = it.next()?.parse().ok()?;
                return Some((x, y));
            }
        }
    }
    None
}

fn heading_glyph(scenario: &Scenario, s: &State) -> char {
    for (h, glyph) in [("N", '^'), ("E", '>'), ("S", 'v'), ("W", '<')] {
        if let Some(id) = scenario.domain.predicates.lookup(&format!("heading_{h}")) {
            if s.get(id) {
                return glyph;
            }
        }
    }
    '?'
}

/// Fine positions visited by the most recent plan synthesized at or before
/// `step`, simulated from the state the plan was issued in.
fn plan_overlay(scenario: &Scenario, trace: &Trace, step: u64) -> Vec<(usize, usize)> {
    let mut latest: Option<u64> = None;
    let mut plan: Vec<String> = Vec::new();
    for e in trace.iter().take_while(|e| e.step <= step) {
        if let EventKind::PlanSynthesized { plan: p, .. } = &e.kind {
            latest = Some(e.step);
            plan = p.clone();
        }
    }
    let Some(at) = latest else { return Vec::new() };
    // State just before the plan: replay up to the preceding event.
    let Ok(mut s) = replay_state(scenario, trace, at.saturating_sub(1)) else {
        return Vec::new();
    };
    let mut cells = Vec::new();
    for name in &plan {
        let Some(i) = scenario.domain.action_index(name) else { break };
        s = scenario.domain.actions[i].effect.apply_to(&s);
        if let Some(p) = fine_position(scenario, &s) {
            cells.push(p);
        }
    }
    cells
}

fn draw(
    meta: &GridMeta,
    robot: Option<((usize, usize), char)>,
    overlay: &[(usize, usize)],
) -> String {
    let f = meta.fine_factor.max(1);
    let hazard = |fx: usize, fy: usize| meta.hazard_cells.contains(&[fx / f, fy / f]);
    let border: String = {
        let mut b = String::from("+");
        for _ in 0..meta.cols {
            b.push_str(&"-".repeat(f));
            b.push('+');
        }
        b
    };
    let mut out = String::new();
    // North is up: highest y first.
    for cy in (0..meta.rows).rev() {
        out.push_str(&border);
        out.push('\n');
        for sub in (0..f).rev() {
            let fy = cy * f + sub;
            out.push('|');
            for cx in 0..meta.cols {
                for sub_x in 0..f {
                    let fx = cx * f + sub_x;
                    let ch = if robot.map_or(false, |(p, _)| p == (fx, fy)) {
                        robot.unwrap().1
                    } else if overlay.contains(&(fx, fy)) {
                        '*'
                    } else if hazard(fx, fy) {
                        '~'
                    } else {
                        '.'
                    };
                    out.push(ch);
                }
                out.push('|');
            }
            out.push('\n');
        }
    }
    out.push_str(&border);
    out.push('\n');
    out
}

/// Renders the state after all events with `event.step <= step`.
pub fn render_grid(scenario: &Scenario, trace: &Trace, step: u64) -> Result<String, RenderError> {
    let meta = scenario.grid.as_ref().ok_or(RenderError::NoGrid)?;
    let state = replay_state(scenario, trace, step)?;
    let robot = fine_position(scenario, &state)
        .map(|p| (p, heading_glyph(scenario, &state)));
    let overlay = plan_overlay(scenario, trace, step);
    Ok(draw(meta, robot, &overlay))
}

/// Renders a bare state (no trace context, no overlay).
pub fn render_state(scenario: &Scenario, state: &State) -> Result<String, RenderError> {
    let meta = scenario.grid.as_ref().ok_or(RenderError::NoGrid)?;
    let robot = fine_position(scenario, state).map(|p| (p, heading_glyph(scenario, state)));
    Ok(draw(meta, robot, &[]))
}
