//! Line-delimited JSON run traces and byte-exact replay.
//!
//! A trace opens with a `run` record holding every input of the run, then
//! one `tick` record per control tick and a closing `outcome` record.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{simulate_grasp, GraspOutcome, GraspRun, SimError, SimObject, SimSetup};
use crate::grasp_controller::{GraspMode, TraceRecord};

pub const TRACE_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub format: u32,
    pub mode: GraspMode,
    pub object: SimObject,
    pub setup: SimSetup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TraceLine {
    Run(Box<RunHeader>),
    Tick(TraceRecord),
    Outcome(GraspOutcome),
}

impl TraceLine {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace records serialize")
    }
}

/// Serialized trace of a finished run, one JSON document per line.
pub fn trace_lines(header: &RunHeader, run: &GraspRun) -> Vec<String> {
    let mut lines = Vec::with_capacity(run.trace.len() + 2);
    lines.push(TraceLine::Run(Box::new(header.clone())).to_json());
    lines.extend(run.trace.iter().map(|r| TraceLine::Tick(r.clone()).to_json()));
    lines.push(TraceLine::Outcome(run.outcome.clone()).to_json());
    lines
}

pub fn trace_text(lines: &[String]) -> String {
    let mut text = lines.join("\n");
    text.push('\n');
    text
}

/// Parse every record of a trace.
pub fn parse_trace(text: &str) -> Result<Vec<TraceLine>, SimError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| SimError::Trace(format!("line {}: {e}", i + 1))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    /// 1-based line number.
    pub line: usize,
    /// Tick of the recorded line, when it is a tick record.
    pub tick: Option<u64>,
    pub expected: Option<String>,
    pub actual: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub lines_compared: usize,
    pub divergence: Option<Divergence>,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.divergence.is_none()
    }
}

fn tick_of(line: &str) -> Option<u64> {
    match serde_json::from_str::<TraceLine>(line).ok()? {
        TraceLine::Tick(r) => Some(r.tick),
        _ => None,
    }
}

/// Re-simulate the run described by a trace's header and compare the result
/// line by line.
pub fn replay_text(text: &str) -> Result<ReplayReport, SimError> {
    let recorded: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let first = recorded.first().ok_or_else(|| SimError::Trace("empty trace".into()))?;
    let header = match serde_json::from_str::<TraceLine>(first) {
        Ok(TraceLine::Run(h)) => h,
        Ok(_) => return Err(SimError::Trace("trace does not start with a run record".into())),
        Err(e) => return Err(SimError::Trace(format!("line 1: {e}"))),
    };
    if header.format != TRACE_FORMAT {
        return Err(SimError::Trace(format!("unsupported trace format {}", header.format)));
    }
    let run = simulate_grasp(header.mode, &header.object, &header.setup)?;
    let regenerated = trace_lines(&header, &run);

    let n = recorded.len().max(regenerated.len());
    for i in 0..n {
        let expected = recorded.get(i).copied();
        let actual = regenerated.get(i).map(String::as_str);
        if expected != actual {
            return Ok(ReplayReport {
                lines_compared: i,
                divergence: Some(Divergence {
                    line: i + 1,
                    tick: expected.and_then(tick_of).or_else(|| actual.and_then(tick_of)),
                    expected: expected.map(str::to_string),
                    actual: actual.map(str::to_string),
                }),
            });
        }
    }
    Ok(ReplayReport {
        lines_compared: n,
        divergence: None,
    })
}

pub fn replay(path: impl AsRef<Path>) -> Result<ReplayReport, SimError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })?;
    replay_text(&text)
}
