//! Ordered event log of an environment game, serialized as newline-delimited
//! JSON (one event per line, each with a monotone `step` counter).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mape::{ImproveDuration, When};
use crate::planner::{Mode, Rung};

/// Why a visibility predicate changed. Raising is only legal for empowering
/// actions and hazards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisibilityCause {
    EmpoweringAction,
    OperationalAction,
    Hazard,
    ManagerToggle,
    Reset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    /// First event of every trace; embeds the scenario so a trace file is
    /// self-describing.
    RunStart {
        scenario: serde_json::Value,
        seed: u64,
        max_missions: usize,
    },
    /// Mission-boundary snapshot: full state listing plus action partition.
    Snapshot {
        state: Vec<String>,
        empowering: Vec<String>,
        visible: Vec<String>,
        hidden: Vec<String>,
    },
    GoalIssued {
        mission: usize,
        goal: Vec<String>,
    },
    PlanSynthesized {
        plan: Vec<String>,
        rung: Rung,
    },
    ActionExecuted {
        action: String,
        pre: String,
        post: String,
    },
    HazardInjected {
        rule: String,
        source: String,
        /// Consequence override literals, for replay.
        effect: Vec<String>,
        result: String,
    },
    HazardDetected {
        step_index: usize,
        matched_rules: Vec<String>,
        mismatch: Vec<String>,
        pre: String,
        observed: String,
    },
    RecommendationChosen {
        hazards: Vec<String>,
        when: When,
        duration: ImproveDuration,
        mode: Mode,
    },
    VisibilityChanged {
        predicate: String,
        value: bool,
        cause: VisibilityCause,
    },
    ResetIssued {
        target: Vec<String>,
    },
    MissionCompleted {
        mission: usize,
    },
    MissionAborted {
        mission: usize,
        reason: String,
    },
    /// No plan exists even over all actions; external support is mandatory.
    Pathological {
        detail: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub step: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {0}: {1}")]
    Parse(usize, serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub events: Vec<Event>,
}

impl Trace {
    pub fn new() -> Self {
        Trace::default()
    }

    pub fn push(&mut self, kind: EventKind) {
        let step = self.events.len() as u64;
        self.events.push(Event { step, kind });
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Self, TraceError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: Event = serde_json::from_str(line).map_err(|e| TraceError::Parse(i + 1, e))?;
            events.push(e);
        }
        Ok(Trace { events })
    }

    pub fn iter(&self) -> impl Iterator<Item = &Event> {
        self.events.iter()
    }
}

pub fn digest_hex(d: u64) -> String {
    format!("{d:016x}")
}
