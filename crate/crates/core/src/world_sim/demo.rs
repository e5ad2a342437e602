//! Scripted holds of the three demo objects.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::trace::{trace_lines, trace_text, RunHeader, TRACE_FORMAT};
use super::{simulate_grasp, GraspOutcome, SimError, SimObject, SimSetup};
use crate::grasp_controller::GraspMode;
use crate::tactile_sim::TactileFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DemoTask {
    LegoPinch,
    ScrewdriverLateral,
    FlashlightOpposition,
}

impl DemoTask {
    pub const ALL: [DemoTask; 3] = [
        DemoTask::LegoPinch,
        DemoTask::ScrewdriverLateral,
        DemoTask::FlashlightOpposition,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DemoTask::LegoPinch => "lego-pinch",
            DemoTask::ScrewdriverLateral => "screwdriver-lateral",
            DemoTask::FlashlightOpposition => "flashlight-opposition",
        }
    }

    pub fn mode(self) -> GraspMode {
        match self {
            DemoTask::LegoPinch => GraspMode::Pinch,
            DemoTask::ScrewdriverLateral => GraspMode::Lateral,
            DemoTask::FlashlightOpposition => GraspMode::Opposition,
        }
    }

    pub fn object(self) -> SimObject {
        match self {
            DemoTask::LegoPinch => SimObject::lego_brick(),
            DemoTask::ScrewdriverLateral => SimObject::screwdriver(),
            DemoTask::FlashlightOpposition => SimObject::flashlight(),
        }
    }
}

impl fmt::Display for DemoTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DemoTask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown demo '{s}' (lego-pinch | screwdriver-lateral | flashlight-opposition)"))
    }
}

#[derive(Debug, Clone)]
pub struct DemoReport {
    pub task: DemoTask,
    pub outcome: GraspOutcome,
    pub frames: Vec<TactileFrame>,
    pub trace: Vec<String>,
    /// Files written, if an output directory was given.
    pub files: Vec<PathBuf>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), SimError> {
    std::fs::write(path, bytes).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Run a demo with `object` (defaults to the task's shipped object) and,
/// given `out_dir`, write `trace.jsonl`, `outcome.json` and one
/// `frame_<finger>_<tick>.pgm` per contact.
pub fn run_demo(
    task: DemoTask,
    object: Option<SimObject>,
    setup: &SimSetup,
    out_dir: Option<&Path>,
) -> Result<DemoReport, SimError> {
    let header = RunHeader {
        format: TRACE_FORMAT,
        mode: task.mode(),
        object: object.unwrap_or_else(|| task.object()),
        setup: setup.clone(),
    };
    let run = simulate_grasp(header.mode, &header.object, &header.setup)?;
    let trace = trace_lines(&header, &run);
    let mut files = Vec::new();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|source| SimError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let path = dir.join("trace.jsonl");
        write_file(&path, trace_text(&trace).as_bytes())?;
        files.push(path);
        let path = dir.join("outcome.json");
        let json = serde_json::to_string_pretty(&run.outcome).expect("outcome serializes") + "\n";
        write_file(&path, json.as_bytes())?;
        files.push(path);
        for frame in &run.frames {
            let path = dir.join(format!("frame_{}_{}.pgm", frame.finger, frame.tick));
            write_file(&path, &frame.to_pgm())?;
            files.push(path);
        }
    }
    Ok(DemoReport {
        task,
        outcome: run.outcome,
        frames: run.frames,
        trace,
        files,
    })
}
