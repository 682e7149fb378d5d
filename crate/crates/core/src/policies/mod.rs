//! Threshold-triggered search and control skills and the task state
//! machines built from them. Every threshold is in signal units.

mod maze_explore;
mod rig;
mod skills;
mod task;
mod trigger;
mod wipe;

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maze::Direction;
use crate::wrist::StiffnessMatrix;

pub use maze_explore::{
    audit_maze_events, direction_order, maze_explore, maze_step_bound, MazeAudit, MazeEvent,
    MazeMemory,
};
pub use rig::{Rig, Sensing, TriggerEvent};
pub use skills::{
    approach, compliant_insert, screw_tighten, search_waypoints, surface_search, usb_reorient,
    InsertKind, ScrewJob, SearchPattern,
};
pub use task::{run_task, SkillRecord, Task, TaskConfig, TaskMetrics, TaskReport};
pub use trigger::{
    fire_indices, run_trigger, run_trigger_values, Crossing, ThresholdTrigger, TriggerState,
    DEFAULT_DEBOUNCE, DEFAULT_HYSTERESIS_FRACTION,
};
pub use wipe::{pid_wipe, WipeResult};

/// Signal component indices.
pub const X: usize = 0;
pub const Y: usize = 1;
pub const Z: usize = 2;
pub const THETA_Z: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkillStatus {
    Running,
    Triggered,
    Succeeded,
    Failed,
}

impl SkillStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, SkillStatus::Succeeded | SkillStatus::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillOutcome {
    pub status: SkillStatus,
    pub fired_trigger: Option<String>,
    pub steps_used: usize,
    /// Set when a failed insertion should be retried after reorienting.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub retry: bool,
}

impl SkillOutcome {
    pub fn new(status: SkillStatus, steps_used: usize) -> Self {
        Self {
            status,
            fired_trigger: None,
            steps_used,
            retry: false,
        }
    }

    pub fn fired(status: SkillStatus, trigger: &str, steps_used: usize) -> Self {
        Self {
            status,
            fired_trigger: Some(trigger.to_string()),
            steps_used,
            retry: false,
        }
    }
}

/// Force levels (N, N·m) the default signal thresholds are derived from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceLevels {
    pub contact_n: f64,
    pub hole_n: f64,
    pub seated_n: f64,
    pub jam_n: f64,
    pub lateral_deadband_n: f64,
    pub screw_torque_nm: f64,
    pub maze_collision_n: f64,
    pub maze_safe_n: f64,
    pub wipe_reference_n: f64,
}

impl Default for ForceLevels {
    fn default() -> Self {
        Self {
            contact_n: 1.5,
            hole_n: 1.0,
            seated_n: 3.0,
            jam_n: 15.0,
            lateral_deadband_n: 0.6,
            screw_torque_nm: 0.15,
            maze_collision_n: 1.5,
            maze_safe_n: 0.4,
            wipe_reference_n: 5.0,
        }
    }
}

/// Policy thresholds in signal units (mm or rad).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// τ₁: rising z on first contact.
    pub contact: f64,
    /// τ₂ for search: falling z when the tool drops into a hole.
    pub hole: f64,
    /// τ₃: rising z when the insert bottoms out.
    pub seated: f64,
    /// Axial safety level.
    pub jam: f64,
    /// Lateral signal below which insertion makes no correction.
    pub lateral_deadband: f64,
    /// Rising θz that ends tightening.
    pub screw_torque: f64,
    /// Lateral collision level in the maze (magnitude).
    pub maze_collision: f64,
    /// Lateral level under which a maze retreat is safe (magnitude).
    pub maze_safe: f64,
    /// Normal-force reference for wiping.
    pub wipe_reference: f64,
}

/// Signal produced on `component` by a pure load of `value` on the same
/// component, through the diagonal of the compliance.
pub fn signal_level(k: &StiffnessMatrix, component: usize, value: f64) -> f64 {
    k.compliance()[(component, component)] * value
}

impl Thresholds {
    pub fn from_forces(k: &StiffnessMatrix, f: &ForceLevels) -> Self {
        Self {
            contact: signal_level(k, Z, f.contact_n),
            hole: signal_level(k, Z, f.hole_n),
            seated: signal_level(k, Z, f.seated_n),
            jam: signal_level(k, Z, f.jam_n),
            lateral_deadband: signal_level(k, X, f.lateral_deadband_n),
            screw_torque: signal_level(k, THETA_Z, f.screw_torque_nm),
            maze_collision: signal_level(k, X, f.maze_collision_n),
            maze_safe: signal_level(k, X, f.maze_safe_n),
            wipe_reference: signal_level(k, Z, f.wipe_reference_n),
        }
    }

    /// Moves thresholds set against stiffness `from` onto stiffness `to`, so
    /// each one keeps the force it stood for.
    pub fn rescaled(&self, from: &StiffnessMatrix, to: &StiffnessMatrix) -> Self {
        let r = |c: usize| to.compliance()[(c, c)] / from.compliance()[(c, c)];
        Self {
            contact: self.contact * r(Z),
            hole: self.hole * r(Z),
            seated: self.seated * r(Z),
            jam: self.jam * r(Z),
            lateral_deadband: self.lateral_deadband * r(X),
            screw_torque: self.screw_torque * r(THETA_Z),
            maze_collision: self.maze_collision * r(X),
            maze_safe: self.maze_safe * r(X),
            wipe_reference: self.wipe_reference * r(Z),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.contact,
            self.hole,
            self.seated,
            self.jam,
            self.lateral_deadband,
            self.screw_torque,
            self.maze_collision,
            self.maze_safe,
            self.wipe_reference,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidConfig("thresholds must be positive and finite".into()));
        }
        if self.maze_safe >= self.maze_collision {
            return Err(Error::InvalidConfig(
                "maze safe level must be below the collision level".into(),
            ));
        }
        if self.seated >= self.jam {
            return Err(Error::InvalidConfig("seat level must be below the jam level".into()));
        }
        Ok(())
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self::from_forces(&StiffnessMatrix::default_wrist(), &ForceLevels::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproachParams {
    /// Start height above the nominal surface.
    pub start_height_mm: f64,
    pub step_mm: f64,
    /// Travel past the nominal surface after which the tool is taken to be
    /// over an opening.
    pub overtravel_mm: f64,
    /// Extra descent after contact to load the surface for searching.
    pub preload_mm: f64,
}

impl Default for ApproachParams {
    fn default() -> Self {
        Self {
            start_height_mm: 2.0,
            step_mm: 0.05,
            overtravel_mm: 0.5,
            preload_mm: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub pattern: SearchPattern,
    /// Arm spacing of the spiral or line spacing of the raster.
    pub pitch_mm: f64,
    /// Path length between waypoints.
    pub step_mm: f64,
    /// Radius (spiral) or half-width (raster) of the searched region.
    pub envelope_mm: f64,
}

impl SearchParams {
    pub fn peg() -> Self {
        Self {
            pattern: SearchPattern::Spiral,
            pitch_mm: 0.5,
            step_mm: 0.1,
            envelope_mm: 4.0,
        }
    }

    pub fn usb() -> Self {
        Self {
            pattern: SearchPattern::Spiral,
            pitch_mm: 0.25,
            step_mm: 0.1,
            envelope_mm: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InsertParams {
    pub step_mm: f64,
    /// Lateral motion per unit of lateral signal beyond the deadband.
    pub lateral_gain: f64,
    pub max_correction_mm: f64,
    /// Accepted shortfall between reached and target depth.
    pub depth_tolerance_mm: f64,
}

impl Default for InsertParams {
    fn default() -> Self {
        Self {
            step_mm: 0.2,
            lateral_gain: 0.2,
            max_correction_mm: 0.1,
            depth_tolerance_mm: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScrewParams {
    pub yaw_step_rad: f64,
    pub max_turns: f64,
}

impl Default for ScrewParams {
    fn default() -> Self {
        Self {
            yaw_step_rad: 2f64.to_radians(),
            max_turns: 6.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WipeParams {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub stroke_step_mm: f64,
    /// Samples after contact excluded from the steady-state metric.
    pub settle_steps: usize,
    /// Samples per block when averaging the steady-state force error.
    pub block: usize,
    /// Allowed steady-state error as a fraction of the reference.
    pub band_fraction: f64,
    /// Below this fraction of the reference the contact counts as lost.
    pub loss_fraction: f64,
    /// Consecutive lost-contact samples tolerated.
    pub dwell_limit: usize,
}

impl Default for WipeParams {
    fn default() -> Self {
        Self {
            kp: 0.3,
            ki: 0.02,
            kd: 0.0,
            stroke_step_mm: 0.125,
            settle_steps: 40,
            block: 100,
            band_fraction: 0.05,
            loss_fraction: 0.3,
            dwell_limit: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MazeParams {
    pub step_mm: f64,
    /// Base clockwise order; the toward-goal direction is rotated to the front.
    pub priority: Vec<Direction>,
}

impl Default for MazeParams {
    fn default() -> Self {
        Self {
            step_mm: 1.0,
            priority: Direction::CLOCKWISE.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartParams {
    /// Largest lateral offset of the randomized start from the target.
    pub max_offset_mm: f64,
    pub max_tilt_deg: f64,
}

impl Default for StartParams {
    fn default() -> Self {
        Self {
            max_offset_mm: 3.0,
            max_tilt_deg: 0.5,
        }
    }
}

/// Every tunable of the policy library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub thresholds: Thresholds,
    #[serde(default = "default_debounce")]
    pub debounce: usize,
    #[serde(default = "default_hysteresis")]
    pub hysteresis_fraction: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub approach: ApproachParams,
    #[serde(default = "SearchParams::peg")]
    pub peg_search: SearchParams,
    #[serde(default = "SearchParams::usb")]
    pub usb_search: SearchParams,
    #[serde(default)]
    pub insert: InsertParams,
    #[serde(default)]
    pub screw: ScrewParams,
    #[serde(default)]
    pub wipe: WipeParams,
    #[serde(default)]
    pub maze: MazeParams,
    #[serde(default)]
    pub start: StartParams,
}

fn default_debounce() -> usize {
    DEFAULT_DEBOUNCE
}
fn default_hysteresis() -> f64 {
    DEFAULT_HYSTERESIS_FRACTION
}
fn default_dt() -> f64 {
    0.02
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            debounce: default_debounce(),
            hysteresis_fraction: default_hysteresis(),
            dt: default_dt(),
            approach: ApproachParams::default(),
            peg_search: SearchParams::peg(),
            usb_search: SearchParams::usb(),
            insert: InsertParams::default(),
            screw: ScrewParams::default(),
            wipe: WipeParams::default(),
            maze: MazeParams::default(),
            start: StartParams::default(),
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        if self.debounce == 0 || !(self.hysteresis_fraction >= 0.0) || !(self.dt > 0.0) {
            return Err(Error::InvalidConfig(
                "debounce must be >= 1, hysteresis >= 0 and dt > 0".into(),
            ));
        }
        for s in [&self.peg_search, &self.usb_search] {
            if !(s.pitch_mm > 0.0 && s.step_mm > 0.0 && s.envelope_mm > 0.0) {
                return Err(Error::InvalidConfig("search parameters must be positive".into()));
            }
        }
        if !(self.maze.step_mm > 0.0) || self.maze.priority.len() != 4 {
            return Err(Error::InvalidConfig(
                "maze step must be positive and the priority must list four directions".into(),
            ));
        }
        let mut p = self.maze.priority.clone();
        p.sort();
        p.dedup();
        if p.len() != 4 {
            return Err(Error::InvalidConfig("maze priority repeats a direction".into()));
        }
        Ok(())
    }

    pub fn trigger(&self, id: &str, component: usize, level: f64, direction: Crossing) -> ThresholdTrigger {
        ThresholdTrigger::new(id, component, level, direction)
            .with_debounce(self.debounce)
            .with_hysteresis(self.hysteresis_fraction * level.abs())
    }

    /// Copy with thresholds moved from stiffness `from` to `to`.
    pub fn rescaled(&self, from: &StiffnessMatrix, to: &StiffnessMatrix) -> Self {
        Self {
            thresholds: self.thresholds.rescaled(from, to),
            ..self.clone()
        }
    }
}

/// Unit vector along a signal component.
pub fn axis(component: usize) -> Vector6<f64> {
    let mut v = Vector6::zeros();
    v[component] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_thresholds_valid_and_ordered() {
        let t = Thresholds::default();
        t.validate().unwrap();
        assert!(t.hole < t.contact && t.contact < t.seated && t.seated < t.jam);
        let k = StiffnessMatrix::default_wrist();
        assert!((t.contact - 1.5 * k.compliance()[(2, 2)]).abs() < 1e-15);
    }

    #[test]
    fn rescale_keeps_force_meaning() {
        let k = StiffnessMatrix::default_wrist();
        let soft = k.scaled(0.85).unwrap();
        let t = Thresholds::default();
        let r = t.rescaled(&k, &soft);
        assert!((r.contact - t.contact / 0.85).abs() < 1e-12);
        let back = r.rescaled(&soft, &k);
        assert!((back.screw_torque - t.screw_torque).abs() < 1e-15);
        let direct = Thresholds::from_forces(&soft, &ForceLevels::default()).contact;
        assert!((direct - r.contact).abs() <= 1e-15 * r.contact);
    }

    #[test]
    fn config_json_round_trip() {
        let c = PolicyConfig::default();
        let json = serde_json::to_string_pretty(&c).unwrap();
        let back: PolicyConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        let minimal = format!(
            "{{\"thresholds\": {}}}",
            serde_json::to_string(&c.thresholds).unwrap()
        );
        let parsed: PolicyConfig = serde_json::from_str(&minimal).unwrap();
        assert_eq!(parsed, c);
    }

    #[test]
    fn bad_configs_rejected() {
        let mut c = PolicyConfig::default();
        c.maze.priority = vec![Direction::Up; 4];
        assert!(c.validate().is_err());
        let mut c = PolicyConfig::default();
        c.thresholds.maze_safe = c.thresholds.maze_collision * 2.0;
        assert!(c.validate().is_err());
    }
}
