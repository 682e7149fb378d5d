//! Search and control skills. Each one drives the rig until a trigger fires
//! or its budget runs out.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::world::Command;

use super::{
    ApproachParams, Crossing, InsertParams, PolicyConfig, Rig, ScrewParams, SearchParams,
    SkillOutcome, SkillStatus, THETA_Z, X, Y, Z,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchPattern {
    /// Archimedean spiral out from the contact point.
    Spiral,
    /// Back-and-forth lines over a square centred on the contact point.
    Raster,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InsertKind {
    Peg { depth_mm: f64 },
    Usb { depth_mm: f64 },
}

impl InsertKind {
    fn depth(self) -> f64 {
        match self {
            InsertKind::Peg { depth_mm } | InsertKind::Usb { depth_mm } => depth_mm,
        }
    }
}

/// What the operator knows about the screw being driven.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScrewJob {
    pub pitch_mm: f64,
    /// Depth the thread must reach before a torque rise means seating.
    pub engagement_depth_mm: f64,
    /// Depth already driven before this job.
    #[serde(default)]
    pub initial_depth_mm: f64,
}

/// Descends until the contact trigger fires, then adds the preload. Fails
/// when the tool passes `overtravel_mm` below `surface_z` without contact,
/// meaning it is already over an opening.
pub fn approach(
    rig: &mut Rig,
    cfg: &PolicyConfig,
    params: &ApproachParams,
    surface_z: f64,
    preload_mm: f64,
) -> Result<SkillOutcome> {
    let trigger = cfg.trigger("tau1_contact", Z, cfg.thresholds.contact, Crossing::Rising);
    let mut state = trigger.arm();
    let floor = surface_z - params.overtravel_mm;
    let mut used = 0;
    loop {
        let z = rig.position_mm().z;
        if !state.pending() && z <= floor + 1e-9 {
            return Ok(SkillOutcome::new(SkillStatus::Failed, used));
        }
        let cmd = if state.pending() {
            Command::default()
        } else {
            Command::translate(0.0, 0.0, -params.step_mm.min(z - floor))
        };
        rig.act(&cmd)?;
        used += 1;
        if rig.watch("approach", &trigger, &mut state) {
            break;
        }
    }
    let mut left = preload_mm;
    while left > 1e-12 {
        let dz = left.min(params.step_mm);
        rig.act(&Command::translate(0.0, 0.0, -dz))?;
        left -= dz;
        used += 1;
    }
    Ok(SkillOutcome::fired(SkillStatus::Triggered, &trigger.id, used))
}

/// Waypoints of the search pattern relative to its start, excluding the start.
pub fn search_waypoints(params: &SearchParams) -> Vec<(f64, f64)> {
    let mut pts = Vec::new();
    match params.pattern {
        SearchPattern::Spiral => {
            let b = params.pitch_mm / (2.0 * PI);
            let mut theta: f64 = 0.0;
            loop {
                // arc-length step, evaluated at the mid radius
                let mut d = params.step_mm / ((b * theta).powi(2) + b * b).sqrt();
                for _ in 0..3 {
                    let mid = b * (theta + 0.5 * d);
                    d = params.step_mm / (mid * mid + b * b).sqrt();
                }
                theta += d;
                let r = b * theta;
                if r > params.envelope_mm {
                    break;
                }
                pts.push((r * theta.cos(), r * theta.sin()));
            }
        }
        SearchPattern::Raster => {
            let e = params.envelope_mm;
            let push_line = |pts: &mut Vec<(f64, f64)>, to: (f64, f64)| {
                let from = pts.last().copied().unwrap_or((0.0, 0.0));
                let d = ((to.0 - from.0).powi(2) + (to.1 - from.1).powi(2)).sqrt();
                let n = (d / params.step_mm).ceil().max(1.0) as usize;
                for i in 1..=n {
                    let a = i as f64 / n as f64;
                    pts.push((from.0 + a * (to.0 - from.0), from.1 + a * (to.1 - from.1)));
                }
            };
            push_line(&mut pts, (-e, -e));
            let lines = (2.0 * e / params.pitch_mm).floor() as usize;
            for i in 0..=lines {
                let y = -e + i as f64 * params.pitch_mm;
                let x = if i % 2 == 0 { e } else { -e };
                if i > 0 {
                    push_line(&mut pts, (-x, y));
                }
                push_line(&mut pts, (x, y));
            }
        }
    }
    pts
}

/// Sweeps the pattern while pressed on the surface until the axial signal
/// drops (the tool fell into an opening).
pub fn surface_search(rig: &mut Rig, cfg: &PolicyConfig, params: &SearchParams) -> Result<SkillOutcome> {
    let trigger = cfg.trigger("tau2_hole", Z, cfg.thresholds.hole, Crossing::Falling);
    let mut state = trigger.arm();
    let origin = rig.position_mm();
    let mut used = 0;
    for (wx, wy) in search_waypoints(params) {
        // hold position while a drop is being confirmed
        while state.pending() {
            rig.dwell()?;
            used += 1;
            if rig.watch("search", &trigger, &mut state) {
                return Ok(SkillOutcome::fired(SkillStatus::Triggered, &trigger.id, used));
            }
        }
        let p = rig.position_mm();
        let cmd = Command::translate(origin.x + wx - p.x, origin.y + wy - p.y, 0.0);
        rig.act(&cmd)?;
        used += 1;
        if rig.watch("search", &trigger, &mut state) {
            return Ok(SkillOutcome::fired(SkillStatus::Triggered, &trigger.id, used));
        }
    }
    while state.pending() {
        rig.dwell()?;
        used += 1;
        if rig.watch("search", &trigger, &mut state) {
            return Ok(SkillOutcome::fired(SkillStatus::Triggered, &trigger.id, used));
        }
    }
    Ok(SkillOutcome::new(SkillStatus::Failed, used))
}

fn lateral_correction(rig: &Rig, cfg: &PolicyConfig, params: &InsertParams, component: usize) -> f64 {
    let s = rig.value(component);
    let band = cfg.thresholds.lateral_deadband;
    if s.abs() <= band {
        return 0.0;
    }
    (params.lateral_gain * (s - band * s.signum()))
        .clamp(-params.max_correction_mm, params.max_correction_mm)
}

/// Descends with lateral corrections that follow the lateral signal until
/// the seat trigger fires. `surface_z` is the estimated entry height.
pub fn compliant_insert(
    rig: &mut Rig,
    cfg: &PolicyConfig,
    params: &InsertParams,
    kind: InsertKind,
    surface_z: f64,
) -> Result<SkillOutcome> {
    let seated = cfg.trigger("tau3_seated", Z, cfg.thresholds.seated, Crossing::Rising);
    let mut state = seated.arm();
    let target = kind.depth();
    let budget = ((target + 2.0) / params.step_mm).ceil() as usize + 60;
    let mut used = 0;
    while used < budget {
        let cmd = if state.pending() {
            Command::default()
        } else {
            let cx = lateral_correction(rig, cfg, params, X);
            let cy = lateral_correction(rig, cfg, params, Y);
            rig.lateral_correction_mm += cx.abs() + cy.abs();
            Command::translate(cx, cy, -params.step_mm)
        };
        rig.act(&cmd)?;
        used += 1;
        let lateral = rig.value(X).hypot(rig.value(Y));
        rig.peak_lateral_signal = rig.peak_lateral_signal.max(lateral);
        if rig.value(Z) > cfg.thresholds.jam {
            rig.note("insert", "jam", rig.value(Z));
            return Ok(SkillOutcome::fired(SkillStatus::Failed, "jam", used));
        }
        if rig.watch("insert", &seated, &mut state) {
            let depth = surface_z - rig.position_mm().z;
            if depth >= target - params.depth_tolerance_mm {
                return Ok(SkillOutcome::fired(SkillStatus::Succeeded, &seated.id, used));
            }
            rig.note("insert", "shallow_stop", depth);
            let mut out = SkillOutcome::fired(SkillStatus::Failed, &seated.id, used);
            out.retry = matches!(kind, InsertKind::Usb { .. });
            return Ok(out);
        }
    }
    Ok(SkillOutcome::new(SkillStatus::Failed, used))
}

/// Backs out to `clearance_mm` above the surface and turns the plug half a
/// revolution.
pub fn usb_reorient(rig: &mut Rig, surface_z: f64, clearance_mm: f64) -> Result<SkillOutcome> {
    let mut used = 0;
    let up = rig.scene().limits.translation_mm.min(0.5);
    while rig.position_mm().z < surface_z + clearance_mm - 1e-9 {
        let dz = (surface_z + clearance_mm - rig.position_mm().z).min(up);
        rig.act(&Command::translate(0.0, 0.0, dz))?;
        used += 1;
    }
    let chunk = rig.scene().limits.rotation_rad.min(0.15);
    let mut left = PI;
    while left > 1e-12 {
        let a = left.min(chunk);
        rig.act(&Command::yaw(a))?;
        left -= a;
        used += 1;
    }
    rig.note("usb_reorient", "rotated", PI);
    Ok(SkillOutcome::new(SkillStatus::Succeeded, used))
}

/// Turns the gripper in the tightening sense, following the thread down,
/// until the torsional signal rises past the tightening level.
pub fn screw_tighten(
    rig: &mut Rig,
    cfg: &PolicyConfig,
    params: &ScrewParams,
    job: &ScrewJob,
) -> Result<SkillOutcome> {
    let trigger = cfg.trigger("tau2_torque", THETA_Z, cfg.thresholds.screw_torque, Crossing::Rising);
    let mut state = trigger.arm();
    let dyaw = params.yaw_step_rad.abs();
    let budget = (params.max_turns * 2.0 * PI / dyaw).ceil() as usize;
    let mut rotated = 0.0;
    let mut turning = 0;
    let mut used = 0;
    while turning < budget || state.pending() {
        let cmd = if state.pending() {
            Command::default()
        } else {
            turning += 1;
            rotated += dyaw;
            Command {
                translation_mm: nalgebra::Vector3::new(0.0, 0.0, -job.pitch_mm * dyaw / (2.0 * PI)),
                yaw: -dyaw,
                ..Command::default()
            }
        };
        rig.act(&cmd)?;
        used += 1;
        if rig.watch("screw", &trigger, &mut state) {
            let depth = job.initial_depth_mm + job.pitch_mm * rotated / (2.0 * PI);
            if depth < job.engagement_depth_mm {
                rig.note("screw", "cross_thread", depth);
                return Ok(SkillOutcome::fired(SkillStatus::Failed, &trigger.id, used));
            }
            return Ok(SkillOutcome::fired(SkillStatus::Succeeded, &trigger.id, used));
        }
    }
    Ok(SkillOutcome::new(SkillStatus::Failed, used))
}
