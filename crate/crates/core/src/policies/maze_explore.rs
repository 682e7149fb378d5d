//! Force-guided maze exploration: greedy probing toward the goal, retreat on
//! wall contact and direction-level dead-end pruning with backtracking.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maze::{Cell, Direction, MazeGrid};
use crate::world::Command;

use super::{Crossing, PolicyConfig, Rig, SkillOutcome, SkillStatus, X, Y};

/// What the explorer has learned so far.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MazeMemory {
    pub visited: BTreeSet<Cell>,
    #[serde(with = "dead_map")]
    pub dead_directions: BTreeMap<Cell, BTreeSet<Direction>>,
    /// Cells to fall back to, innermost last.
    pub escape_nodes: Vec<Cell>,
    /// Current pruned path from the start.
    pub path: Vec<Cell>,
}

mod dead_map {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        m: &BTreeMap<Cell, BTreeSet<Direction>>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let v: Vec<(&Cell, &BTreeSet<Direction>)> = m.iter().collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<BTreeMap<Cell, BTreeSet<Direction>>, D::Error> {
        let v: Vec<(Cell, BTreeSet<Direction>)> = Vec::deserialize(d)?;
        Ok(v.into_iter().collect())
    }
}

impl MazeMemory {
    pub fn is_dead(&self, cell: Cell, dir: Direction) -> bool {
        self.dead_directions.get(&cell).is_some_and(|d| d.contains(&dir))
    }

    fn mark_dead(&mut self, cell: Cell, dir: Direction) {
        self.dead_directions.entry(cell).or_default().insert(dir);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum MazeEvent {
    Probe { step: usize, cell: Cell, dir: Direction },
    Collision { step: usize, cell: Cell, dir: Direction },
    Retreat { step: usize, cell: Cell, dir: Direction },
    Safe { step: usize, cell: Cell, dir: Direction },
    Advance { step: usize, from: Cell, to: Cell },
    /// Return from `from` to its parent `to`; `dir` (parent → from) is pruned at `to`.
    Backtrack { step: usize, from: Cell, to: Cell, dir: Direction },
    Goal { step: usize, cell: Cell },
}

/// Direction order at `cell`: the axis toward the goal first (horizontal on a
/// tie), then the rest of `priority` in its cyclic order.
pub fn direction_order(cell: Cell, goal: Cell, priority: &[Direction]) -> Vec<Direction> {
    let dr = goal.row as isize - cell.row as isize;
    let dc = goal.col as isize - cell.col as isize;
    let first = if dc.abs() >= dr.abs() && dc != 0 {
        if dc > 0 {
            Direction::Right
        } else {
            Direction::Left
        }
    } else if dr > 0 {
        Direction::Down
    } else if dr < 0 {
        Direction::Up
    } else {
        priority[0]
    };
    let i = priority.iter().position(|d| *d == first).unwrap_or(0);
    (0..priority.len()).map(|k| priority[(i + k) % priority.len()]).collect()
}

/// Upper bound on control steps for a maze with `cells` free cells.
pub fn maze_step_bound(cells: usize, cell_mm: f64, step_mm: f64, debounce: usize) -> usize {
    let per = (2.0 * cell_mm / step_mm).ceil() as usize + 2 * debounce + 10;
    4 * cells * per
}

fn axis(dir: Direction) -> (usize, f64) {
    let u = dir.unit();
    if u.x != 0.0 {
        (X, u.x)
    } else {
        (Y, u.y)
    }
}

struct Explorer<'a> {
    rig: &'a mut Rig,
    cfg: &'a PolicyConfig,
    maze: MazeGrid,
    events: Vec<MazeEvent>,
    used: usize,
    budget: usize,
    exhausted: bool,
}

impl Explorer<'_> {
    fn act(&mut self, d: Vector2<f64>) -> Result<()> {
        if self.used >= self.budget {
            self.exhausted = true;
            return Err(Error::InvalidConfig("maze step budget exhausted".into()));
        }
        self.rig.act(&Command::translate(d.x, d.y, 0.0))?;
        self.used += 1;
        Ok(())
    }

    fn go_to(&mut self, target: Vector2<f64>) -> Result<()> {
        let step = self.cfg.maze.step_mm;
        loop {
            let d = target - self.rig.position_mm().xy();
            if d.norm() < 1e-9 {
                return Ok(());
            }
            let d = if d.norm() > step { d.normalize() * step } else { d };
            self.act(d)?;
        }
    }

    /// Moves toward the neighbour in `dir`. Returns false on a collision,
    /// after retreating and recentring.
    fn probe(&mut self, cell: Cell, dir: Direction) -> Result<bool> {
        let t = &self.cfg.thresholds;
        let (comp, sign) = axis(dir);
        let hit_dir = if sign > 0.0 { Crossing::Falling } else { Crossing::Rising };
        let safe_dir = if sign > 0.0 { Crossing::Rising } else { Crossing::Falling };
        let hit = self.cfg.trigger("tau1_collision", comp, -sign * t.maze_collision, hit_dir);
        let safe = self.cfg.trigger("tau2_safe", comp, -sign * t.maze_safe, safe_dir);
        let center = self.maze.cell_center_mm(cell);
        let target = center + dir.unit() * self.maze.cell_mm;
        let step = self.cfg.maze.step_mm;
        self.events.push(MazeEvent::Probe { step: self.used, cell, dir });
        let mut state = hit.arm();
        loop {
            let d = target - self.rig.position_mm().xy();
            if !state.pending() && d.norm() < 1e-9 {
                return Ok(true);
            }
            let cmd = if state.pending() {
                Vector2::zeros()
            } else if d.norm() > step {
                d.normalize() * step
            } else {
                d
            };
            self.act(cmd)?;
            if self.rig.watch("maze", &hit, &mut state) {
                break;
            }
        }
        self.events.push(MazeEvent::Collision { step: self.used, cell, dir });
        self.events.push(MazeEvent::Retreat { step: self.used, cell, dir });
        let mut state = safe.arm();
        let back = -dir.unit() * step;
        loop {
            let cmd = if state.pending() { Vector2::zeros() } else { back };
            self.act(cmd)?;
            if self.rig.watch("maze", &safe, &mut state) {
                break;
            }
        }
        self.events.push(MazeEvent::Safe { step: self.used, cell, dir });
        self.go_to(center)?;
        Ok(false)
    }

    fn run(&mut self, memory: &mut MazeMemory) -> Result<bool> {
        let goal = self.maze.goal;
        let mut cur = self.maze.start;
        memory.visited.insert(cur);
        memory.path.push(cur);
        loop {
            if cur == goal {
                self.events.push(MazeEvent::Goal { step: self.used, cell: cur });
                return Ok(true);
            }
            let mut advanced = false;
            for dir in direction_order(cur, goal, &self.cfg.maze.priority) {
                if memory.is_dead(cur, dir) {
                    continue;
                }
                let Some(next) = cur.step(dir) else {
                    memory.mark_dead(cur, dir);
                    continue;
                };
                if memory.visited.contains(&next) {
                    continue;
                }
                if self.probe(cur, dir)? {
                    self.events.push(MazeEvent::Advance { step: self.used, from: cur, to: next });
                    memory.escape_nodes.push(cur);
                    memory.visited.insert(next);
                    memory.path.push(next);
                    cur = next;
                    advanced = true;
                    break;
                }
                memory.mark_dead(cur, dir);
            }
            if advanced {
                continue;
            }
            let Some(parent) = memory.escape_nodes.pop() else {
                return Ok(false);
            };
            let dir = Direction::CLOCKWISE
                .into_iter()
                .find(|d| parent.step(*d) == Some(cur))
                .ok_or_else(|| Error::InvalidScene("escape node is not adjacent".into()))?;
            memory.mark_dead(parent, dir);
            memory.path.pop();
            self.events.push(MazeEvent::Backtrack { step: self.used, from: cur, to: parent, dir });
            let c = self.maze.cell_center_mm(parent);
            self.go_to(c)?;
            cur = parent;
        }
    }
}

/// Explores from the start cell to the goal. Fails when every branch is
/// pruned or the step bound runs out.
pub fn maze_explore(
    rig: &mut Rig,
    cfg: &PolicyConfig,
) -> Result<(SkillOutcome, MazeMemory, Vec<MazeEvent>)> {
    let maze = rig
        .scene()
        .maze_grid()
        .cloned()
        .ok_or_else(|| Error::SceneMismatch {
            task: "maze".into(),
            scenes: rig.scene().kind().to_string(),
        })?;
    let budget = maze_step_bound(maze.free_cells(), maze.cell_mm, cfg.maze.step_mm, cfg.debounce);
    let mut memory = MazeMemory::default();
    let mut ex = Explorer {
        rig,
        cfg,
        maze,
        events: Vec::new(),
        used: 0,
        budget,
        exhausted: false,
    };
    let reached = match ex.run(&mut memory) {
        Ok(r) => r,
        Err(_) if ex.exhausted => false,
        Err(e) => return Err(e),
    };
    let status = if reached && ex.rig.is_success() {
        SkillStatus::Succeeded
    } else {
        SkillStatus::Failed
    };
    let used = ex.used;
    let events = ex.events;
    Ok((SkillOutcome::new(status, used), memory, events))
}

/// Trace audit of an exploration.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MazeAudit {
    pub probes: usize,
    pub collisions: usize,
    pub retreats: usize,
    pub backtracks: usize,
    /// Collisions not followed by a retreat and a safe reading before the
    /// next probe.
    pub unretreated_collisions: usize,
    /// Probes of a direction already pruned at that cell.
    pub pruned_reattempts: usize,
}

impl MazeAudit {
    pub fn is_clean(&self) -> bool {
        self.unretreated_collisions == 0 && self.pruned_reattempts == 0 && self.collisions == self.retreats
    }
}

pub fn audit_maze_events(events: &[MazeEvent]) -> MazeAudit {
    let mut a = MazeAudit::default();
    let mut dead: BTreeSet<(Cell, Direction)> = BTreeSet::new();
    // 0 = clear, 1 = collided, 2 = retreating
    let mut phase = 0;
    for e in events {
        match *e {
            MazeEvent::Probe { cell, dir, .. } => {
                a.probes += 1;
                if phase != 0 {
                    a.unretreated_collisions += 1;
                    phase = 0;
                }
                if dead.contains(&(cell, dir)) {
                    a.pruned_reattempts += 1;
                }
            }
            MazeEvent::Collision { cell, dir, .. } => {
                a.collisions += 1;
                if phase != 0 {
                    a.unretreated_collisions += 1;
                }
                phase = 1;
                dead.insert((cell, dir));
            }
            MazeEvent::Retreat { .. } => {
                a.retreats += 1;
                if phase == 1 {
                    phase = 2;
                }
            }
            MazeEvent::Safe { .. } => {
                if phase == 2 {
                    phase = 0;
                }
            }
            MazeEvent::Backtrack { to, dir, .. } => {
                a.backtracks += 1;
                dead.insert((to, dir));
            }
            MazeEvent::Advance { .. } | MazeEvent::Goal { .. } => {
                if phase != 0 {
                    a.unretreated_collisions += 1;
                    phase = 0;
                }
            }
        }
    }
    if phase != 0 {
        a.unretreated_collisions += 1;
    }
    a
}
