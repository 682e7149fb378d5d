//! Penalty-contact task scenes driven by commanded tool motion.
//!
//! World axes: z up, millimeters for scene geometry. The tool tip sits at the
//! effector pose origin and the wrist sits `tool_length_mm` above it along the
//! tool z axis. Wrenches are reported in the tool frame about the wrist.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maze::{Cell, MazeGrid};
use crate::se3::{Pose, Wrench};

/// Orientation window (rad) within which a plug counts as aligned with a slot.
pub const YAW_ALIGN_TOL: f64 = 0.1;

/// Wall penetration (mm) the penalty contact is allowed when judging whether a
/// peg sits inside its clearance.
pub const CONTACT_TOLERANCE_MM: f64 = 0.05;

/// Per-step command bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLimits {
    pub translation_mm: f64,
    pub rotation_rad: f64,
}

impl Default for StepLimits {
    fn default() -> Self {
        Self {
            translation_mm: 2.0,
            rotation_rad: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Peg,
    Usb,
    Screw,
    Whiteboard,
    Maze,
}

impl std::fmt::Display for SceneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SceneKind::Peg => "peg",
            SceneKind::Usb => "usb",
            SceneKind::Screw => "screw",
            SceneKind::Whiteboard => "whiteboard",
            SceneKind::Maze => "maze",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hole {
    pub center_mm: [f64; 2],
    pub radius_mm: f64,
    /// Radial gap between peg and hole wall.
    pub clearance_mm: f64,
    pub depth_mm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub center_mm: [f64; 2],
    /// Per-axis gap between plug and receptacle.
    pub clearance_mm: f64,
    /// Depth at which a reversed plug stops.
    pub shallow_stop_mm: f64,
    /// Depth of a fully seated plug.
    pub seat_depth_mm: f64,
    /// When set, the plug only seats after a half turn from yaw 0.
    pub flipped: bool,
}

impl Slot {
    pub fn correct_yaw(&self) -> f64 {
        if self.flipped {
            PI
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScrewJoint {
    pub pitch_mm: f64,
    /// Height of the screw head before any rotation.
    pub head_z_mm: f64,
    /// Turns already made at the start (positive = tighter).
    pub initial_turns: f64,
    /// Turns at which the head seats.
    pub seat_turns: f64,
    /// Thread engagement (as a depth) that must precede any torque rise.
    pub engagement_depth_mm: f64,
    /// Running friction torque at zero turns.
    pub friction_nm: f64,
    pub friction_slope_nm_per_turn: f64,
    /// Torsional stiffness of the seated joint.
    pub seat_stiffness_nm_per_rad: f64,
    pub cross_threaded: bool,
    pub cross_binding_nm_per_rad: f64,
}

impl ScrewJoint {
    /// Tightening is a negative gripper yaw (right-hand thread, z up).
    pub fn turns(&self, gripper_yaw: f64) -> f64 {
        self.initial_turns - gripper_yaw / (2.0 * PI)
    }

    pub fn head_z(&self, gripper_yaw: f64) -> f64 {
        let advanced = (-gripper_yaw / (2.0 * PI)).max(0.0);
        self.head_z_mm - self.pitch_mm * advanced
    }

    /// Reaction torque about the tool z axis.
    pub fn reaction_torque(&self, gripper_yaw: f64) -> f64 {
        let rotated = -gripper_yaw;
        if rotated <= 0.0 {
            return 0.0;
        }
        if self.cross_threaded {
            return self.cross_binding_nm_per_rad * rotated;
        }
        let turns = self.turns(gripper_yaw);
        let running = self.friction_nm + self.friction_slope_nm_per_turn * turns.max(0.0);
        let seated = self.seat_stiffness_nm_per_rad * (turns - self.seat_turns).max(0.0) * 2.0 * PI;
        running + seated
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub point_mm: [f64; 3],
    /// Outward unit normal.
    pub normal: [f64; 3],
}

impl Plane {
    /// Plane through `point_mm` tilted by `tilt_deg` about the world y axis.
    pub fn tilted(point_mm: [f64; 3], tilt_deg: f64) -> Self {
        let t = tilt_deg.to_radians();
        Self {
            point_mm,
            normal: [t.sin(), 0.0, t.cos()],
        }
    }

    pub fn normal(&self) -> Vector3<f64> {
        Vector3::from(self.normal).normalize()
    }

    pub fn tilt_rad(&self) -> f64 {
        self.normal().z.clamp(-1.0, 1.0).acos()
    }

    /// Surface height at (x, y).
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        let n = self.normal();
        let p = Vector3::from(self.point_mm);
        p.z - (n.x * (x - p.x) + n.y * (y - p.y)) / n.z
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        (p - Vector3::from(self.point_mm)).dot(&self.normal())
    }
}

/// Strip along x that a wiping run must cover.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Strip {
    pub x_start_mm: f64,
    pub x_end_mm: f64,
    pub y_mm: f64,
    pub bin_mm: f64,
    /// Normal force below which a pass does not count as wiping.
    pub min_contact_force_n: f64,
}

impl Strip {
    pub fn bins(&self) -> usize {
        ((self.x_end_mm - self.x_start_mm) / self.bin_mm).ceil().max(1.0) as usize
    }

    fn bin_of(&self, x: f64) -> Option<usize> {
        if x < self.x_start_mm || x > self.x_end_mm {
            return None;
        }
        Some((((x - self.x_start_mm) / self.bin_mm) as usize).min(self.bins() - 1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Geometry {
    Peg { hole: Hole, surface_z_mm: f64 },
    Usb { slot: Slot, surface_z_mm: f64 },
    Screw { screw: ScrewJoint },
    Whiteboard { plane: Plane, strip: Strip },
    Maze { maze: MazeGrid },
}

fn default_stiffness() -> f64 {
    10.0
}
fn default_damping() -> f64 {
    0.5
}
fn default_tool_length() -> f64 {
    50.0
}
fn default_max_penetration() -> f64 {
    2.0
}
fn default_wall_friction() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactScene {
    #[serde(flatten)]
    pub geometry: Geometry,
    /// N/mm
    #[serde(default = "default_stiffness")]
    pub contact_stiffness: f64,
    /// N·s/mm
    #[serde(default = "default_damping")]
    pub contact_damping: f64,
    /// Penetration beyond which the geometry is treated as rigid.
    #[serde(default = "default_max_penetration")]
    pub max_penetration_mm: f64,
    #[serde(default = "default_tool_length")]
    pub tool_length_mm: f64,
    /// Coefficient turning hole-wall reaction into axial resistance.
    #[serde(default = "default_wall_friction")]
    pub wall_friction: f64,
    #[serde(default)]
    pub limits: StepLimits,
}

/// Relative motion command for one control step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Command {
    pub translation_mm: Vector3<f64>,
    /// Rotation vector (rad) applied about the tip in the world frame.
    pub rotation: Vector3<f64>,
    pub yaw: f64,
}

impl Command {
    pub fn translate(x: f64, y: f64, z: f64) -> Self {
        Self {
            translation_mm: Vector3::new(x, y, z),
            ..Self::default()
        }
    }

    pub fn yaw(yaw: f64) -> Self {
        Self {
            yaw,
            ..Self::default()
        }
    }

    pub fn is_zero(&self) -> bool {
        self.translation_mm == Vector3::zeros() && self.rotation == Vector3::zeros() && self.yaw == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectorState {
    /// Tool tip in the world frame (meters, as every pose).
    pub pose: Pose,
    pub gripper_yaw: f64,
    /// How far the tool has entered a hole or slot (mm).
    pub insertion_depth: f64,
    /// Tip velocity from the last step (mm/s), feeds contact damping.
    #[serde(default)]
    pub velocity_mm_s: Vector3<f64>,
    /// Wiped bins of a whiteboard strip.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub wiped: Vec<bool>,
}

impl EffectorState {
    pub fn at_mm(x: f64, y: f64, z: f64) -> Self {
        Self {
            pose: Pose::from_translation(Vector3::new(x, y, z) / 1000.0),
            gripper_yaw: 0.0,
            insertion_depth: 0.0,
            velocity_mm_s: Vector3::zeros(),
            wiped: Vec::new(),
        }
    }

    pub fn with_rotation(mut self, r: Matrix3<f64>) -> Result<Self> {
        self.pose = Pose::new(r, *self.pose.translation())?;
        Ok(self)
    }

    pub fn position_mm(&self) -> Vector3<f64> {
        self.pose.translation() * 1000.0
    }

    fn set_position_mm(&mut self, p: Vector3<f64>) {
        self.pose = Pose::new(*self.pose.rotation(), p / 1000.0).expect("rotation unchanged");
    }

    pub fn tool_axis(&self) -> Vector3<f64> {
        self.pose.rotation().column(2).into_owned()
    }

    pub fn tilt_rad(&self) -> f64 {
        self.tool_axis().z.clamp(-1.0, 1.0).acos()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.insertion_depth >= 0.0) {
            return Err(Error::InvalidScene(format!(
                "insertion depth {} is negative",
                self.insertion_depth
            )));
        }
        Pose::new(*self.pose.rotation(), *self.pose.translation()).map(|_| ())
    }
}

// Force on the tool at the tip (world frame) plus any extra torque about the
// tool z axis.
struct Contact {
    force: Vector3<f64>,
    axial_torque: f64,
}

fn penalty(k: f64, c: f64, pen: f64, rate: f64) -> f64 {
    if pen <= 0.0 {
        0.0
    } else {
        (k * pen + c * rate).max(0.0)
    }
}

fn wrap(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

impl ContactScene {
    fn with_geometry(geometry: Geometry) -> Self {
        Self {
            geometry,
            contact_stiffness: default_stiffness(),
            contact_damping: default_damping(),
            max_penetration_mm: default_max_penetration(),
            tool_length_mm: default_tool_length(),
            wall_friction: default_wall_friction(),
            limits: StepLimits::default(),
        }
    }

    pub fn peg() -> Self {
        Self::with_geometry(Geometry::Peg {
            hole: Hole {
                center_mm: [0.0, 0.0],
                radius_mm: 5.0,
                clearance_mm: 0.4,
                depth_mm: 10.0,
            },
            surface_z_mm: 0.0,
        })
    }

    pub fn usb(flipped: bool) -> Self {
        Self::with_geometry(Geometry::Usb {
            slot: Slot {
                center_mm: [0.0, 0.0],
                clearance_mm: 0.2,
                shallow_stop_mm: 1.0,
                seat_depth_mm: 8.0,
                flipped,
            },
            surface_z_mm: 0.0,
        })
    }

    pub fn screw() -> Self {
        Self::with_geometry(Geometry::Screw {
            screw: ScrewJoint {
                pitch_mm: 0.7,
                head_z_mm: 0.0,
                initial_turns: 0.0,
                seat_turns: 3.0,
                engagement_depth_mm: 0.7,
                friction_nm: 0.01,
                friction_slope_nm_per_turn: 0.005,
                seat_stiffness_nm_per_rad: 0.2,
                cross_threaded: false,
                cross_binding_nm_per_rad: 1.0,
            },
        })
    }

    pub fn whiteboard(tilt_deg: f64) -> Self {
        Self::with_geometry(Geometry::Whiteboard {
            plane: Plane::tilted([0.0, 0.0, 0.0], tilt_deg),
            strip: Strip {
                x_start_mm: -30.0,
                x_end_mm: 30.0,
                y_mm: 0.0,
                bin_mm: 1.0,
                min_contact_force_n: 1.0,
            },
        })
    }

    pub fn maze(maze: MazeGrid) -> Self {
        Self::with_geometry(Geometry::Maze { maze })
    }

    pub fn kind(&self) -> SceneKind {
        match self.geometry {
            Geometry::Peg { .. } => SceneKind::Peg,
            Geometry::Usb { .. } => SceneKind::Usb,
            Geometry::Screw { .. } => SceneKind::Screw,
            Geometry::Whiteboard { .. } => SceneKind::Whiteboard,
            Geometry::Maze { .. } => SceneKind::Maze,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScene(m));
        if !(self.contact_stiffness > 0.0) || !(self.contact_damping >= 0.0) {
            return bad("contact stiffness must be positive and damping non-negative".into());
        }
        if !(self.max_penetration_mm > 0.0) || !(self.tool_length_mm >= 0.0) {
            return bad("max penetration must be positive and tool length non-negative".into());
        }
        if !(self.limits.translation_mm > 0.0) || !(self.limits.rotation_rad > 0.0) {
            return bad("step limits must be positive".into());
        }
        match &self.geometry {
            Geometry::Peg { hole, .. } => {
                if !(hole.clearance_mm > 0.0) || !(hole.clearance_mm < hole.radius_mm) {
                    return bad(format!("hole clearance {} must be in (0, radius)", hole.clearance_mm));
                }
                if !(hole.depth_mm > 0.0) {
                    return bad("hole depth must be positive".into());
                }
            }
            Geometry::Usb { slot, .. } => {
                if !(slot.clearance_mm > 0.0) {
                    return bad(format!("slot clearance {} must be positive", slot.clearance_mm));
                }
                if !(slot.shallow_stop_mm > 0.0 && slot.shallow_stop_mm < slot.seat_depth_mm) {
                    return bad("shallow stop must lie between 0 and the seat depth".into());
                }
            }
            Geometry::Screw { screw } => {
                if !(screw.pitch_mm > 0.0) || !(screw.seat_turns > 0.0) {
                    return bad("screw pitch and seat turns must be positive".into());
                }
                if screw.friction_nm < 0.0
                    || screw.friction_slope_nm_per_turn < 0.0
                    || screw.seat_stiffness_nm_per_rad < 0.0
                {
                    return bad("screw friction parameters must be non-negative".into());
                }
            }
            Geometry::Whiteboard { plane, strip } => {
                let n = Vector3::from(plane.normal);
                if !(n.norm() > 0.0) || n.z <= 0.0 {
                    return bad("whiteboard normal must point up".into());
                }
                if plane.tilt_rad() > 15f64.to_radians() + 1e-12 {
                    return bad(format!(
                        "whiteboard tilt {:.3} deg exceeds 15 deg",
                        plane.tilt_rad().to_degrees()
                    ));
                }
                if !(strip.x_end_mm > strip.x_start_mm) || !(strip.bin_mm > 0.0) {
                    return bad("wiping strip must have positive length and bin size".into());
                }
            }
            Geometry::Maze { maze } => maze.validate()?,
        }
        Ok(())
    }

    /// A state with the tool placed as the scene expects at rest.
    pub fn initial_state(&self) -> EffectorState {
        let mut s = match &self.geometry {
            Geometry::Peg { hole, surface_z_mm } => {
                EffectorState::at_mm(hole.center_mm[0], hole.center_mm[1], surface_z_mm + 5.0)
            }
            Geometry::Usb { slot, surface_z_mm } => {
                EffectorState::at_mm(slot.center_mm[0], slot.center_mm[1], surface_z_mm + 5.0)
            }
            Geometry::Screw { screw } => EffectorState::at_mm(0.0, 0.0, screw.head_z_mm + 1.0),
            Geometry::Whiteboard { plane, strip } => {
                let x = strip.x_start_mm;
                EffectorState::at_mm(x, strip.y_mm, plane.height_at(x, strip.y_mm) + 5.0)
            }
            Geometry::Maze { maze } => {
                let c = maze.cell_center_mm(maze.start);
                EffectorState::at_mm(c.x, c.y, 0.0)
            }
        };
        if let Geometry::Whiteboard { strip, .. } = &self.geometry {
            s.wiped = vec![false; strip.bins()];
        }
        s
    }

    fn contact(&self, state: &EffectorState) -> Contact {
        let k = self.contact_stiffness;
        let c = self.contact_damping;
        let p = state.position_mm();
        let v = state.velocity_mm_s;
        match &self.geometry {
            Geometry::Whiteboard { plane, .. } => {
                let n = plane.normal();
                let pen = -plane.signed_distance(&p);
                Contact {
                    force: n * penalty(k, c, pen, -v.dot(&n)),
                    axial_torque: 0.0,
                }
            }
            Geometry::Peg { hole, surface_z_mm } => {
                let center = Vector2::from(hole.center_mm);
                if state.insertion_depth <= 0.0 {
                    let pen = surface_z_mm - p.z;
                    return Contact {
                        force: Vector3::z() * penalty(k, c, pen, -v.z),
                        axial_torque: 0.0,
                    };
                }
                let mut f = Vector3::zeros();
                for (pt, pen) in peg_wall_points(state, hole, *surface_z_mm) {
                    let d = pt - center;
                    let n = if d.norm() > 0.0 {
                        -d.normalize()
                    } else {
                        let lean = state.tool_axis().xy();
                        if lean.norm() > 0.0 {
                            -lean.normalize()
                        } else {
                            Vector2::zeros()
                        }
                    };
                    let rate = v.xy().dot(&(-n));
                    let mag = penalty(k, c, pen, rate);
                    f += Vector3::new(n.x, n.y, 0.0) * mag;
                }
                let lateral = f.norm();
                let floor = surface_z_mm - hole.depth_mm;
                f.z += penalty(k, c, floor - p.z, -v.z) + self.wall_friction * lateral;
                Contact {
                    force: f,
                    axial_torque: 0.0,
                }
            }
            Geometry::Usb { slot, surface_z_mm } => {
                if state.insertion_depth <= 0.0 {
                    let pen = surface_z_mm - p.z;
                    return Contact {
                        force: Vector3::z() * penalty(k, c, pen, -v.z),
                        axial_torque: 0.0,
                    };
                }
                let mut f = Vector3::zeros();
                for axis in 0..2 {
                    let d = p[axis] - slot.center_mm[axis];
                    let pen = d.abs() - slot.clearance_mm;
                    let mag = penalty(k, c, pen, v[axis] * d.signum());
                    f[axis] = -d.signum() * mag;
                }
                let lateral = f.norm();
                let stop = slot_stop(slot, state.gripper_yaw).unwrap_or(slot.shallow_stop_mm);
                f.z += penalty(k, c, (surface_z_mm - stop) - p.z, -v.z) + self.wall_friction * lateral;
                Contact {
                    force: f,
                    axial_torque: 0.0,
                }
            }
            Geometry::Screw { screw } => {
                let pen = screw.head_z(state.gripper_yaw) - p.z;
                Contact {
                    force: Vector3::z() * penalty(k, c, pen, -v.z),
                    axial_torque: screw.reaction_torque(state.gripper_yaw),
                }
            }
            Geometry::Maze { maze } => {
                let mut f = Vector3::zeros();
                for (n, pen) in maze.wall_contacts(&p.xy()) {
                    let rate = -v.xy().dot(&n);
                    f += Vector3::new(n.x, n.y, 0.0) * penalty(k, c, pen, rate);
                }
                Contact {
                    force: f,
                    axial_torque: 0.0,
                }
            }
        }
    }

    /// External wrench on the wrist for the current state.
    pub fn contact_wrench(&self, state: &EffectorState) -> Wrench {
        let contact = self.contact(state);
        let r = state.pose.rotation();
        let f_tool = r.transpose() * contact.force;
        let lever_m = Vector3::new(0.0, 0.0, -self.tool_length_mm / 1000.0);
        let torque = lever_m.cross(&f_tool) + Vector3::new(0.0, 0.0, contact.axial_torque);
        Wrench::new(f_tool, torque).expect("finite contact wrench")
    }

    /// Applies `command` for `dt` seconds, clipping against rigid geometry.
    pub fn step(
        &self,
        state: &EffectorState,
        command: &Command,
        dt: f64,
    ) -> Result<(EffectorState, Wrench)> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidConfig(format!("time step {dt} must be positive")));
        }
        let lim = &self.limits;
        let t = command.translation_mm.norm();
        if !(t <= lim.translation_mm) {
            return Err(Error::CommandTooLarge(format!(
                "translation {t:.4} mm exceeds {} mm",
                lim.translation_mm
            )));
        }
        let rot = command.rotation.norm();
        if !(rot <= lim.rotation_rad) || !(command.yaw.abs() <= lim.rotation_rad) {
            return Err(Error::CommandTooLarge(format!(
                "rotation {rot:.4} rad / yaw {:.4} rad exceeds {} rad",
                command.yaw, lim.rotation_rad
            )));
        }

        let before = state.position_mm();
        let mut next = state.clone();
        let r = Rotation3::new(command.rotation).into_inner() * state.pose.rotation();
        next.pose = Pose::new(r, *state.pose.translation())?;
        next.gripper_yaw += command.yaw;
        let mut p = before + command.translation_mm;
        self.clip(&mut next, &mut p);
        next.set_position_mm(p);
        next.velocity_mm_s = (p - before) / dt;
        if let Geometry::Whiteboard { strip, .. } = &self.geometry {
            if next.wiped.len() != strip.bins() {
                next.wiped = vec![false; strip.bins()];
            }
        }
        let wrench = self.contact_wrench(&next);
        if let Geometry::Whiteboard { strip, .. } = &self.geometry {
            let normal_force = self.contact(&next).force.norm();
            if normal_force >= strip.min_contact_force_n
                && (p.y - strip.y_mm).abs() <= strip.bin_mm
            {
                if let Some(b) = strip.bin_of(p.x) {
                    next.wiped[b] = true;
                }
            }
        }
        Ok((next, wrench))
    }

    fn clip(&self, state: &mut EffectorState, p: &mut Vector3<f64>) {
        let max_pen = self.max_penetration_mm;
        match &self.geometry {
            Geometry::Whiteboard { plane, .. } => {
                let n = plane.normal();
                let pen = -plane.signed_distance(p);
                if pen > max_pen {
                    *p += n * (pen - max_pen);
                }
            }
            Geometry::Peg { hole, surface_z_mm } => {
                let center = Vector2::from(hole.center_mm);
                let inside = p.z < *surface_z_mm
                    && (state.insertion_depth > 0.0 || (p.xy() - center).norm() <= hole.clearance_mm);
                if !inside {
                    state.insertion_depth = 0.0;
                    p.z = p.z.max(surface_z_mm - max_pen);
                    return;
                }
                p.z = p.z.max(surface_z_mm - hole.depth_mm - max_pen);
                state.insertion_depth = (surface_z_mm - p.z).clamp(0.0, hole.depth_mm);
                let probe = EffectorState {
                    pose: Pose::new(*state.pose.rotation(), *p / 1000.0).expect("valid rotation"),
                    ..state.clone()
                };
                let worst = peg_wall_points(&probe, hole, *surface_z_mm)
                    .into_iter()
                    .fold(None, |acc: Option<(Vector2<f64>, f64)>, (pt, pen)| match acc {
                        Some((_, best)) if best >= pen => acc,
                        _ => Some((pt, pen)),
                    });
                if let Some((pt, pen)) = worst {
                    if pen > max_pen {
                        let d = pt - center;
                        if d.norm() > 0.0 {
                            let back = d.normalize() * (pen - max_pen);
                            p.x -= back.x;
                            p.y -= back.y;
                        }
                    }
                }
            }
            Geometry::Usb { slot, surface_z_mm } => {
                let dx = p.x - slot.center_mm[0];
                let dy = p.y - slot.center_mm[1];
                let in_footprint = dx.abs() <= slot.clearance_mm && dy.abs() <= slot.clearance_mm;
                let enterable = slot_stop(slot, state.gripper_yaw).is_some();
                let inside = p.z < *surface_z_mm
                    && (state.insertion_depth > 0.0 || (in_footprint && enterable));
                if !inside {
                    state.insertion_depth = 0.0;
                    p.z = p.z.max(surface_z_mm - max_pen);
                    return;
                }
                let stop = slot_stop(slot, state.gripper_yaw).unwrap_or(slot.shallow_stop_mm);
                p.z = p.z.max(surface_z_mm - stop - max_pen);
                state.insertion_depth = (surface_z_mm - p.z).clamp(0.0, stop);
                let limit = slot.clearance_mm + max_pen;
                p.x = p.x.clamp(slot.center_mm[0] - limit, slot.center_mm[0] + limit);
                p.y = p.y.clamp(slot.center_mm[1] - limit, slot.center_mm[1] + limit);
            }
            Geometry::Screw { screw } => {
                p.z = p.z.max(screw.head_z(state.gripper_yaw) - max_pen);
            }
            Geometry::Maze { maze } => {
                for _ in 0..3 {
                    for (n, pen) in maze.wall_contacts(&p.xy()) {
                        if pen > max_pen {
                            p.x += n.x * (pen - max_pen);
                            p.y += n.y * (pen - max_pen);
                        }
                    }
                }
            }
        }
    }

    /// Geometric completion predicate for the scene.
    pub fn is_success(&self, state: &EffectorState) -> bool {
        let p = state.position_mm();
        match &self.geometry {
            Geometry::Peg { hole, .. } => {
                let e = (p.xy() - Vector2::from(hole.center_mm)).norm();
                state.insertion_depth >= hole.depth_mm - 0.5 && e <= hole.clearance_mm + CONTACT_TOLERANCE_MM
            }
            Geometry::Usb { slot, .. } => {
                let aligned = wrap(state.gripper_yaw - slot.correct_yaw()).abs() <= YAW_ALIGN_TOL;
                aligned && state.insertion_depth >= slot.seat_depth_mm - 0.5
            }
            Geometry::Screw { screw } => {
                let turns = screw.turns(state.gripper_yaw);
                !screw.cross_threaded
                    && screw.seat_stiffness_nm_per_rad > 0.0
                    && turns >= screw.seat_turns
                    && turns <= screw.seat_turns + 0.25
            }
            Geometry::Whiteboard { .. } => {
                !state.wiped.is_empty()
                    && state.wiped.iter().filter(|w| **w).count() as f64
                        >= 0.95 * state.wiped.len() as f64
            }
            Geometry::Maze { maze } => maze.cell_at(&p.xy()) == Some(maze.goal),
        }
    }

    pub fn maze_grid(&self) -> Option<&MazeGrid> {
        match &self.geometry {
            Geometry::Maze { maze } => Some(maze),
            _ => None,
        }
    }

    /// Cell of the effector for maze scenes.
    pub fn maze_cell(&self, state: &EffectorState) -> Option<Cell> {
        self.maze_grid()?.cell_at(&state.position_mm().xy())
    }
}

/// Depth limit for the plug at `yaw`: seat depth when aligned, the shallow
/// stop when reversed, `None` when it does not fit at all.
fn slot_stop(slot: &Slot, yaw: f64) -> Option<f64> {
    let err = wrap(yaw - slot.correct_yaw());
    if err.abs() <= YAW_ALIGN_TOL {
        Some(slot.seat_depth_mm)
    } else if (PI - err.abs()) <= YAW_ALIGN_TOL {
        Some(slot.shallow_stop_mm)
    } else {
        None
    }
}

// Wall checks at the tip and where the (possibly tilted) peg crosses the rim.
fn peg_wall_points(state: &EffectorState, hole: &Hole, surface_z: f64) -> Vec<(Vector2<f64>, f64)> {
    let p = state.position_mm();
    let center = Vector2::from(hole.center_mm);
    let depth = (surface_z - p.z).max(0.0);
    let axis = state.tool_axis();
    let rim = if axis.z > 0.0 {
        p.xy() + axis.xy() * (depth / axis.z)
    } else {
        p.xy()
    };
    [p.xy(), rim]
        .into_iter()
        .map(|pt| (pt, (pt - center).norm() - hole.clearance_mm))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settle(scene: &ContactScene, mut s: EffectorState, cmd: Command, n: usize) -> (EffectorState, Wrench) {
        let mut w = scene.contact_wrench(&s);
        for _ in 0..n {
            let (ns, nw) = scene.step(&s, &cmd, 0.02).unwrap();
            s = ns;
            w = nw;
        }
        (s, w)
    }

    #[test]
    fn above_plane_is_free() {
        let scene = ContactScene::whiteboard(0.0);
        let s = EffectorState::at_mm(0.0, 0.0, 5.0);
        assert_eq!(scene.contact_wrench(&s).as_vector6(), Wrench::zero().as_vector6());
    }

    #[test]
    fn static_penetration_force() {
        let scene = ContactScene::whiteboard(0.0);
        let s = EffectorState::at_mm(0.0, 0.0, -0.5);
        let w = scene.contact_wrench(&s);
        assert!((w.force().z - 5.0).abs() < 1e-12);
        assert!(w.force().x.abs() < 1e-12 && w.force().y.abs() < 1e-12);

        let tilted = ContactScene::whiteboard(10.0);
        let Geometry::Whiteboard { plane, .. } = tilted.geometry else { unreachable!() };
        let n = plane.normal();
        let s = EffectorState::at_mm(0.0, 0.0, -0.5 / n.z);
        let w = tilted.contact_wrench(&s);
        assert!((w.force().norm() - 5.0).abs() < 1e-9);
        assert!((w.force().normalize() - n).norm() < 1e-12);
    }

    #[test]
    fn zero_command_keeps_state() {
        let scene = ContactScene::whiteboard(0.0);
        let s = EffectorState::at_mm(1.0, 2.0, -0.3);
        let (s1, w1) = scene.step(&s, &Command::default(), 0.02).unwrap();
        let (s2, w2) = scene.step(&s1, &Command::default(), 0.02).unwrap();
        assert_eq!(s1.pose, s.pose);
        assert_eq!(s2, s1);
        assert_eq!(w1.as_vector6(), w2.as_vector6());
    }

    #[test]
    fn repeated_descent_converges() {
        let scene = ContactScene::whiteboard(0.0);
        let s = EffectorState::at_mm(0.0, 0.0, 1.0);
        let (s, w) = settle(&scene, s, Command::translate(0.0, 0.0, -0.5), 50);
        assert!((s.position_mm().z + scene.max_penetration_mm).abs() < 1e-9);
        assert!((w.force().z - scene.contact_stiffness * scene.max_penetration_mm).abs() < 1e-9);
        let (_, w2) = scene.step(&s, &Command::translate(0.0, 0.0, -0.5), 0.02).unwrap();
        assert_eq!(w.as_vector6(), w2.as_vector6());
    }

    #[test]
    fn oversized_command_rejected() {
        let scene = ContactScene::peg();
        let s = scene.initial_state();
        assert!(matches!(
            scene.step(&s, &Command::translate(0.0, 0.0, -2.5), 0.02),
            Err(Error::CommandTooLarge(_))
        ));
        assert!(scene.step(&s, &Command::yaw(0.3), 0.02).is_err());
        assert!(scene.step(&s, &Command::default(), 0.0).is_err());
    }

    #[test]
    fn centered_peg_descends_freely() {
        let scene = ContactScene::peg();
        let mut s = EffectorState::at_mm(0.1, -0.1, 0.5);
        for _ in 0..60 {
            let (ns, w) = scene.step(&s, &Command::translate(0.0, 0.0, -0.2), 0.02).unwrap();
            s = ns;
            assert!(w.force().x.abs() < 0.5 && w.force().y.abs() < 0.5);
            if s.insertion_depth < 9.9 {
                assert!(w.force().z.abs() < 1e-9);
            }
        }
        assert!(scene.is_success(&s));
    }

    #[test]
    fn peg_off_hole_rests_on_surface() {
        let scene = ContactScene::peg();
        let (s, w) = settle(&scene, EffectorState::at_mm(2.0, 0.0, 0.5), Command::translate(0.0, 0.0, -0.2), 30);
        assert_eq!(s.insertion_depth, 0.0);
        assert!((w.force().z - 20.0).abs() < 1e-9);
        assert!(!scene.is_success(&s));
    }

    #[test]
    fn usb_two_level_stop() {
        let scene = ContactScene::usb(true);
        let (s, w) = settle(&scene, EffectorState::at_mm(0.0, 0.0, 0.5), Command::translate(0.0, 0.0, -0.2), 60);
        assert!(s.insertion_depth <= 1.0 && s.insertion_depth > 0.9);
        assert!(w.force().z > 15.0);
        assert!(!scene.is_success(&s));

        let mut s2 = s.clone();
        s2.gripper_yaw = PI;
        let up = settle(&scene, s2, Command::translate(0.0, 0.0, 0.5), 10).0;
        let (down, _) = settle(&scene, up, Command::translate(0.0, 0.0, -0.2), 60);
        assert!((down.insertion_depth - 8.0).abs() < 1e-9);
        assert!(scene.is_success(&down));
    }

    #[test]
    fn screw_torque_model() {
        let Geometry::Screw { screw } = ContactScene::screw().geometry else { unreachable!() };
        assert_eq!(screw.reaction_torque(0.0), 0.0);
        assert!(screw.reaction_torque(-0.1) > 0.0);
        let at_seat = -2.0 * PI * screw.seat_turns;
        let before = screw.reaction_torque(at_seat);
        let after = screw.reaction_torque(at_seat - 0.1);
        assert!((after - before - 0.1 * screw.seat_stiffness_nm_per_rad).abs() < 1e-3);
        let free = ScrewJoint {
            friction_nm: 0.0,
            friction_slope_nm_per_turn: 0.0,
            seat_stiffness_nm_per_rad: 0.0,
            ..screw
        };
        assert_eq!(free.reaction_torque(-50.0), 0.0);
    }

    #[test]
    fn fresh_scenes_not_successful() {
        for scene in [
            ContactScene::peg(),
            ContactScene::usb(false),
            ContactScene::screw(),
            ContactScene::whiteboard(5.0),
            ContactScene::maze(MazeGrid::corridor(5)),
        ] {
            scene.validate().unwrap();
            assert!(!scene.is_success(&scene.initial_state()), "{}", scene.kind());
        }
    }

    #[test]
    fn teleported_to_seat_is_success() {
        let scene = ContactScene::peg();
        let mut s = EffectorState::at_mm(0.0, 0.0, -10.0);
        s.insertion_depth = 10.0;
        assert!(scene.is_success(&s));
    }

    #[test]
    fn invalid_scenes_rejected() {
        let mut wb = ContactScene::whiteboard(16.0);
        assert!(wb.validate().is_err());
        wb = ContactScene::whiteboard(15.0);
        assert!(wb.validate().is_ok());
        let mut peg = ContactScene::peg();
        if let Geometry::Peg { hole, .. } = &mut peg.geometry {
            hole.clearance_mm = 0.0;
        }
        assert!(peg.validate().is_err());
    }

    #[test]
    fn scene_json_round_trip() {
        for scene in [ContactScene::peg(), ContactScene::usb(true), ContactScene::maze(MazeGrid::corridor(4))] {
            let json = serde_json::to_string(&scene).unwrap();
            assert!(json.contains(&format!("\"kind\":\"{}\"", scene.kind())));
            let back: ContactScene = serde_json::from_str(&json).unwrap();
            assert_eq!(back, scene);
        }
        let minimal = r#"{"kind":"peg","hole":{"center_mm":[1,2],"radius_mm":5,"clearance_mm":0.4,"depth_mm":10},"surface_z_mm":0}"#;
        let scene: ContactScene = serde_json::from_str(minimal).unwrap();
        assert_eq!(scene.contact_stiffness, 10.0);
    }

    #[test]
    fn maze_wrench_only_across_walls() {
        let maze = MazeGrid::corridor(5);
        let scene = ContactScene::maze(maze.clone());
        let mut s = scene.initial_state();
        for _ in 0..20 {
            let (ns, w) = scene.step(&s, &Command::translate(1.0, 0.0, 0.0), 0.02).unwrap();
            s = ns;
            assert_eq!(w.as_vector6().amax(), 0.0);
        }
        let mut hit = false;
        for _ in 0..10 {
            let (ns, w) = scene.step(&s, &Command::translate(0.0, -1.0, 0.0), 0.02).unwrap();
            s = ns;
            hit |= w.force().norm() > 0.0;
        }
        assert!(hit);
    }
}
