//! Task state machines composed from the skill library.

use std::str::FromStr;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensing::{PipelineConfig, TraceRecord};
use crate::world::{ContactScene, EffectorState, Geometry, SceneKind};
use crate::wrist::{StiffnessMatrix, WristSimulator};

use super::skills::{
    approach, compliant_insert, screw_tighten, surface_search, usb_reorient, InsertKind, ScrewJob,
};
use super::{
    audit_maze_events, maze_explore, pid_wipe, MazeAudit, MazeEvent, PolicyConfig, Rig,
    SearchParams, Sensing, SkillOutcome, SkillStatus, TriggerEvent, WipeResult,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Peg,
    Usb,
    Screw,
    /// Peg insertion followed by screw driving on the same rig.
    Desk,
    Wipe,
    Maze,
}

impl Task {
    pub const ALL: [Task; 6] = [Task::Peg, Task::Usb, Task::Screw, Task::Desk, Task::Wipe, Task::Maze];

    /// Scene kinds the task expects, in order.
    pub fn scene_kinds(self) -> &'static [SceneKind] {
        match self {
            Task::Peg => &[SceneKind::Peg],
            Task::Usb => &[SceneKind::Usb],
            Task::Screw => &[SceneKind::Screw],
            Task::Desk => &[SceneKind::Peg, SceneKind::Screw],
            Task::Wipe => &[SceneKind::Whiteboard],
            Task::Maze => &[SceneKind::Maze],
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Task::Peg => "peg",
            Task::Usb => "usb",
            Task::Screw => "screw",
            Task::Desk => "desk",
            Task::Wipe => "wipe",
            Task::Maze => "maze",
        };
        f.write_str(s)
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.to_string() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown task '{s}'")))
    }
}

fn default_true() -> bool {
    true
}
fn default_wipe_force() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub sensing: Sensing,
    #[serde(default)]
    pub simulator: WristSimulator,
    /// Defaults to the simulator's own mounting frames.
    #[serde(default)]
    pub pipeline: Option<PipelineConfig>,
    /// Stiffness the force/torque baseline maps wrenches through.
    #[serde(default)]
    pub nominal: StiffnessMatrix,
    /// Randomize start offsets and tilt.
    #[serde(default = "default_true")]
    pub randomize: bool,
    #[serde(default)]
    pub record_trace: bool,
    /// Force the wiping reference stands for (steady-state metric only).
    #[serde(default = "default_wipe_force")]
    pub wipe_reference_n: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            policy: PolicyConfig::default(),
            sensing: Sensing::Wrist,
            simulator: WristSimulator::default(),
            pipeline: None,
            nominal: StiffnessMatrix::default_wrist(),
            randomize: true,
            record_trace: false,
            wipe_reference_n: default_wipe_force(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillRecord {
    pub skill: String,
    pub outcome: SkillOutcome,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub start_offset_mm: [f64; 2],
    pub start_tilt_deg: f64,
    pub lateral_correction_mm: f64,
    pub peak_lateral_signal: f64,
    pub insertion_depth_mm: f64,
    pub final_position_mm: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub screw_turns: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wipe: Option<WipeResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub maze_audit: Option<MazeAudit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub maze_path_len: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: Task,
    pub seed: u64,
    pub sensing: Sensing,
    pub status: SkillStatus,
    pub steps: usize,
    pub retries: usize,
    pub skills: Vec<SkillRecord>,
    pub triggers: Vec<TriggerEvent>,
    pub metrics: TaskMetrics,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub maze_events: Vec<MazeEvent>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceRecord>,
}

impl TaskReport {
    pub fn succeeded(&self) -> bool {
        self.status == SkillStatus::Succeeded
    }
}

struct Run {
    skills: Vec<SkillRecord>,
    retries: usize,
    metrics: TaskMetrics,
    maze_events: Vec<MazeEvent>,
}

impl Run {
    fn record(&mut self, skill: &str, outcome: &SkillOutcome) {
        self.skills.push(SkillRecord {
            skill: skill.to_string(),
            outcome: outcome.clone(),
        });
    }
}

fn check_scenes(task: Task, scenes: &[ContactScene]) -> Result<()> {
    let kinds: Vec<SceneKind> = scenes.iter().map(|s| s.kind()).collect();
    if kinds != task.scene_kinds() {
        return Err(Error::SceneMismatch {
            task: task.to_string(),
            scenes: kinds.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","),
        });
    }
    scenes.iter().try_for_each(|s| s.validate())
}

fn surface_and_center(scene: &ContactScene) -> (f64, [f64; 2]) {
    match &scene.geometry {
        Geometry::Peg { hole, surface_z_mm } => (*surface_z_mm, hole.center_mm),
        Geometry::Usb { slot, surface_z_mm } => (*surface_z_mm, slot.center_mm),
        Geometry::Screw { screw } => (screw.head_z_mm, [0.0, 0.0]),
        Geometry::Whiteboard { plane, strip } => {
            (plane.height_at(strip.x_start_mm, strip.y_mm), [strip.x_start_mm, strip.y_mm])
        }
        Geometry::Maze { .. } => (0.0, [0.0, 0.0]),
    }
}

/// Start pose above the target: random offset in a disc and, for pegs, a
/// small random tilt.
fn start_state(
    scene: &ContactScene,
    cfg: &TaskConfig,
    search: Option<&SearchParams>,
    rng: &mut ChaCha8Rng,
    metrics: &mut TaskMetrics,
) -> Result<EffectorState> {
    let (surface, c) = surface_and_center(scene);
    let z = surface + cfg.policy.approach.start_height_mm;
    let mut off = [0.0, 0.0];
    let mut tilt = 0.0;
    if cfg.randomize {
        if let Some(search) = search {
            let r_max = cfg.policy.start.max_offset_mm.min(0.75 * search.envelope_mm);
            let r = r_max * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            off = [r * a.cos(), r * a.sin()];
        }
        if scene.kind() == SceneKind::Peg {
            tilt = rng.random_range(0.0..=cfg.policy.start.max_tilt_deg);
        }
    }
    let mut s = scene.initial_state();
    let base = EffectorState::at_mm(c[0] + off[0], c[1] + off[1], z);
    s.pose = base.pose;
    if tilt > 0.0 {
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        let axis = nalgebra::Unit::new_normalize(Vector3::new(a.cos(), a.sin(), 0.0));
        s = s.with_rotation(Rotation3::from_axis_angle(&axis, tilt.to_radians()).into_inner())?;
    }
    metrics.start_offset_mm = off;
    metrics.start_tilt_deg = tilt;
    Ok(s)
}

fn insert_phase(rig: &mut Rig, cfg: &TaskConfig, run: &mut Run, usb: bool) -> Result<bool> {
    let p = &cfg.policy;
    let (surface, _) = surface_and_center(rig.scene());
    let (kind, search) = match &rig.scene().geometry {
        Geometry::Peg { hole, .. } => (InsertKind::Peg { depth_mm: hole.depth_mm }, p.peg_search),
        Geometry::Usb { slot, .. } => (InsertKind::Usb { depth_mm: slot.seat_depth_mm }, p.usb_search),
        _ => unreachable!("insert phase on a non-insertion scene"),
    };
    loop {
        let a = approach(rig, p, &p.approach, surface, p.approach.preload_mm)?;
        run.record("approach", &a);
        let surface_est = if a.status == SkillStatus::Triggered {
            let s = surface_search(rig, p, &search)?;
            run.record("search", &s);
            if s.status != SkillStatus::Triggered {
                return Ok(false);
            }
            rig.position_mm().z + p.approach.preload_mm
        } else {
            surface
        };
        let ins = compliant_insert(rig, p, &p.insert, kind, surface_est)?;
        run.record("insert", &ins);
        run.metrics.insertion_depth_mm = rig.state().insertion_depth;
        if ins.status == SkillStatus::Succeeded {
            return Ok(rig.is_success());
        }
        if !(usb && ins.retry && run.retries == 0) {
            return Ok(false);
        }
        run.retries += 1;
        let r = usb_reorient(rig, surface_est, 1.0)?;
        run.record("usb_reorient", &r);
    }
}

fn screw_phase(rig: &mut Rig, cfg: &TaskConfig, run: &mut Run) -> Result<bool> {
    let p = &cfg.policy;
    let Geometry::Screw { screw } = rig.scene().geometry else {
        unreachable!("screw phase on a non-screw scene")
    };
    let a = approach(rig, p, &p.approach, screw.head_z_mm, p.approach.preload_mm)?;
    run.record("approach", &a);
    if a.status != SkillStatus::Triggered {
        return Ok(false);
    }
    let job = ScrewJob {
        pitch_mm: screw.pitch_mm,
        engagement_depth_mm: screw.engagement_depth_mm,
        initial_depth_mm: screw.pitch_mm * screw.initial_turns,
    };
    let out = screw_tighten(rig, p, &p.screw, &job)?;
    run.record("screw", &out);
    run.metrics.screw_turns = Some(screw.turns(rig.state().gripper_yaw));
    Ok(out.status == SkillStatus::Succeeded && rig.is_success())
}

/// Runs `task` on `scenes` (one per entry of [`Task::scene_kinds`]).
pub fn run_task(task: Task, scenes: &[ContactScene], cfg: &TaskConfig, seed: u64) -> Result<TaskReport> {
    check_scenes(task, scenes)?;
    cfg.policy.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut run = Run {
        skills: Vec::new(),
        retries: 0,
        metrics: TaskMetrics::default(),
        maze_events: Vec::new(),
    };
    let first = &scenes[0];
    let search = match task {
        Task::Peg | Task::Desk => Some(&cfg.policy.peg_search),
        Task::Usb => Some(&cfg.policy.usb_search),
        _ => None,
    };
    let state = match task {
        Task::Maze => first.initial_state(),
        _ => start_state(first, cfg, search, &mut rng, &mut run.metrics)?,
    };
    let pipeline = cfg
        .pipeline
        .unwrap_or_else(|| PipelineConfig::for_simulator(&cfg.simulator));
    let mut rig = Rig::new(
        first.clone(),
        state,
        cfg.simulator,
        pipeline,
        cfg.sensing,
        &cfg.nominal,
        cfg.policy.dt,
        rng,
    )?;
    let ok = match task {
        Task::Peg => insert_phase(&mut rig, cfg, &mut run, false)?,
        Task::Usb => insert_phase(&mut rig, cfg, &mut run, true)?,
        Task::Screw => screw_phase(&mut rig, cfg, &mut run)?,
        Task::Desk => {
            insert_phase(&mut rig, cfg, &mut run, false)? && {
                let screw = &scenes[1];
                let (head, _) = surface_and_center(screw);
                let mut s = screw.initial_state();
                s.pose = EffectorState::at_mm(0.0, 0.0, head + cfg.policy.approach.start_height_mm).pose;
                rig.switch_scene(screw.clone(), s)?;
                screw_phase(&mut rig, cfg, &mut run)?
            }
        }
        Task::Wipe => {
            let Geometry::Whiteboard { strip, .. } = &first.geometry else {
                unreachable!()
            };
            let x_end = strip.x_end_mm;
            let (surface, _) = surface_and_center(first);
            let p = &cfg.policy;
            let a = approach(&mut rig, p, &p.approach, surface, 0.0)?;
            run.record("approach", &a);
            if a.status == SkillStatus::Triggered {
                let w = pid_wipe(&mut rig, p, &p.wipe, x_end, cfg.wipe_reference_n)?;
                run.record("wipe", &w.outcome);
                let ok = w.outcome.status == SkillStatus::Succeeded;
                run.metrics.wipe = Some(w);
                ok
            } else {
                false
            }
        }
        Task::Maze => {
            let (out, memory, events) = maze_explore(&mut rig, &cfg.policy)?;
            run.record("maze", &out);
            run.metrics.maze_audit = Some(audit_maze_events(&events));
            run.metrics.maze_path_len = Some(memory.path.len());
            run.maze_events = events;
            out.status == SkillStatus::Succeeded
        }
    };
    run.metrics.lateral_correction_mm = rig.lateral_correction_mm;
    run.metrics.peak_lateral_signal = rig.peak_lateral_signal;
    let p = rig.position_mm();
    run.metrics.final_position_mm = [p.x, p.y, p.z];
    let trace = if cfg.record_trace { rig.take_trace() } else { Vec::new() };
    Ok(TaskReport {
        task,
        seed,
        sensing: cfg.sensing,
        status: if ok { SkillStatus::Succeeded } else { SkillStatus::Failed },
        steps: rig.steps(),
        retries: run.retries,
        skills: run.skills,
        triggers: rig.into_log(),
        metrics: run.metrics,
        maze_events: run.maze_events,
        trace,
    })
}
