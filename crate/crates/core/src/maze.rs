//! Occupancy-grid mazes: geometry queries, a random generator and a
//! breadth-first solvability check.

use std::collections::VecDeque;

use nalgebra::Vector2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid cell as (row, column). Rows grow along +y, columns along +x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn step(self, dir: Direction) -> Option<Cell> {
        let (dr, dc) = dir.offset();
        let row = self.row.checked_add_signed(dr)?;
        let col = self.col.checked_add_signed(dc)?;
        Some(Cell { row, col })
    }
}

impl From<[usize; 2]> for Cell {
    fn from(v: [usize; 2]) -> Self {
        Cell::new(v[0], v[1])
    }
}

impl From<Cell> for [usize; 2] {
    fn from(c: Cell) -> Self {
        [c.row, c.col]
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Grid directions listed clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Right,
    Down,
    Left,
}

impl Direction {
    pub const CLOCKWISE: [Direction; 4] = [Direction::Up, Direction::Right, Direction::Down, Direction::Left];

    pub fn offset(self) -> (isize, isize) {
        match self {
            Direction::Up => (-1, 0),
            Direction::Right => (0, 1),
            Direction::Down => (1, 0),
            Direction::Left => (0, -1),
        }
    }

    /// Unit motion in the world plane.
    pub fn unit(self) -> Vector2<f64> {
        let (dr, dc) = self.offset();
        Vector2::new(dc as f64, dr as f64)
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::Up => Direction::Down,
            Direction::Right => Direction::Left,
            Direction::Down => Direction::Up,
            Direction::Left => Direction::Right,
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    /// The clockwise sequence starting at `self`.
    pub fn clockwise_from(self) -> [Direction; 4] {
        let i = self.index();
        std::array::from_fn(|k| Direction::CLOCKWISE[(i + k) % 4])
    }
}

fn default_cell_mm() -> f64 {
    20.0
}
fn default_radius_mm() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MazeGrid {
    /// Row-major flags, 1 = wall.
    pub walls: Vec<Vec<u8>>,
    #[serde(default = "default_cell_mm")]
    pub cell_mm: f64,
    pub start: Cell,
    pub goal: Cell,
    #[serde(default = "default_radius_mm")]
    pub effector_radius_mm: f64,
}

impl MazeGrid {
    pub fn new(walls: Vec<Vec<u8>>, start: Cell, goal: Cell) -> Result<Self> {
        let m = Self {
            walls,
            cell_mm: default_cell_mm(),
            start,
            goal,
            effector_radius_mm: default_radius_mm(),
        };
        m.validate()?;
        Ok(m)
    }

    /// A single open row of `length` cells between solid rows.
    pub fn corridor(length: usize) -> Self {
        let width = length + 2;
        let mut walls = vec![vec![1u8; width]; 3];
        for c in 1..=length {
            walls[1][c] = 0;
        }
        Self {
            walls,
            cell_mm: default_cell_mm(),
            start: Cell::new(1, 1),
            goal: Cell::new(1, length),
            effector_radius_mm: default_radius_mm(),
        }
    }

    pub fn rows(&self) -> usize {
        self.walls.len()
    }

    pub fn cols(&self) -> usize {
        self.walls.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScene(m));
        if self.rows() == 0 || self.cols() == 0 {
            return bad("maze grid is empty".into());
        }
        if self.walls.iter().any(|r| r.len() != self.cols()) {
            return bad("maze grid is not rectangular".into());
        }
        if self.walls.iter().flatten().any(|v| *v > 1) {
            return bad("maze flags must be 0 or 1".into());
        }
        for (name, c) in [("start", self.start), ("goal", self.goal)] {
            if c.row >= self.rows() || c.col >= self.cols() {
                return bad(format!("{name} cell {c} lies outside the grid"));
            }
            if self.is_wall(c) {
                return bad(format!("{name} cell {c} is a wall"));
            }
        }
        if self.start == self.goal {
            return bad("start and goal must differ".into());
        }
        if !(self.cell_mm > 0.0) || !(self.effector_radius_mm > 0.0) {
            return bad("cell size and effector radius must be positive".into());
        }
        if self.effector_radius_mm * 2.0 >= self.cell_mm {
            return bad("effector does not fit inside a cell".into());
        }
        Ok(())
    }

    /// Out-of-grid cells count as walls.
    pub fn is_wall(&self, c: Cell) -> bool {
        self.walls
            .get(c.row)
            .and_then(|r| r.get(c.col))
            .is_none_or(|v| *v != 0)
    }

    fn is_wall_signed(&self, row: isize, col: isize) -> bool {
        if row < 0 || col < 0 {
            return true;
        }
        self.is_wall(Cell::new(row as usize, col as usize))
    }

    pub fn free_cells(&self) -> usize {
        self.walls.iter().flatten().filter(|v| **v == 0).count()
    }

    pub fn cell_center_mm(&self, c: Cell) -> Vector2<f64> {
        Vector2::new(
            (c.col as f64 + 0.5) * self.cell_mm,
            (c.row as f64 + 0.5) * self.cell_mm,
        )
    }

    pub fn cell_at(&self, p: &Vector2<f64>) -> Option<Cell> {
        if p.x < 0.0 || p.y < 0.0 {
            return None;
        }
        let c = Cell::new((p.y / self.cell_mm) as usize, (p.x / self.cell_mm) as usize);
        (c.row < self.rows() && c.col < self.cols()).then_some(c)
    }

    /// Outward normals and penetration depths of every wall square the
    /// effector disc at `p` overlaps.
    pub fn wall_contacts(&self, p: &Vector2<f64>) -> Vec<(Vector2<f64>, f64)> {
        let r = self.effector_radius_mm;
        let s = self.cell_mm;
        let row = (p.y / s).floor() as isize;
        let col = (p.x / s).floor() as isize;
        let mut out = Vec::new();
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (wr, wc) = (row + dr, col + dc);
                if !self.is_wall_signed(wr, wc) {
                    continue;
                }
                let lo = Vector2::new(wc as f64 * s, wr as f64 * s);
                let hi = lo + Vector2::new(s, s);
                let q = Vector2::new(p.x.clamp(lo.x, hi.x), p.y.clamp(lo.y, hi.y));
                let d = (p - q).norm();
                if d >= r {
                    continue;
                }
                let n = if d > 0.0 {
                    (p - q) / d
                } else {
                    let mid = (lo + hi) / 2.0;
                    let away = p - mid;
                    if away.norm() > 0.0 {
                        away.normalize()
                    } else {
                        Vector2::new(0.0, 1.0)
                    }
                };
                out.push((n, r - d));
            }
        }
        out
    }

    /// Open neighbors of a free cell.
    pub fn open_neighbors(&self, c: Cell) -> Vec<(Direction, Cell)> {
        Direction::CLOCKWISE
            .iter()
            .filter_map(|d| c.step(*d).map(|n| (*d, n)))
            .filter(|(_, n)| !self.is_wall(*n))
            .collect()
    }

    /// Shortest start-to-goal path by breadth-first flood fill, if any.
    pub fn shortest_path(&self) -> Option<Vec<Cell>> {
        let (rows, cols) = (self.rows(), self.cols());
        let mut prev: Vec<Option<Cell>> = vec![None; rows * cols];
        let mut seen = vec![false; rows * cols];
        let idx = |c: Cell| c.row * cols + c.col;
        let mut queue = VecDeque::from([self.start]);
        seen[idx(self.start)] = true;
        while let Some(c) = queue.pop_front() {
            if c == self.goal {
                let mut path = vec![c];
                let mut cur = c;
                while let Some(p) = prev[idx(cur)] {
                    path.push(p);
                    cur = p;
                }
                path.reverse();
                return Some(path);
            }
            for (_, n) in self.open_neighbors(c) {
                if !seen[idx(n)] {
                    seen[idx(n)] = true;
                    prev[idx(n)] = Some(c);
                    queue.push_back(n);
                }
            }
        }
        None
    }

    pub fn is_solvable(&self) -> bool {
        self.shortest_path().is_some()
    }

    /// Perfect maze on an `n × n` lattice of rooms carved by randomized
    /// depth-first search, with `extra_openings` additional interior walls
    /// knocked out. The grid is `(2n+1)²`; start and goal are opposite corners.
    pub fn generate<R: Rng + ?Sized>(n: usize, extra_openings: usize, rng: &mut R) -> Self {
        let n = n.max(1);
        let size = 2 * n + 1;
        let mut walls = vec![vec![1u8; size]; size];
        let mut visited = vec![vec![false; n]; n];
        let mut stack = vec![(0usize, 0usize)];
        visited[0][0] = true;
        walls[1][1] = 0;
        while let Some(&(r, c)) = stack.last() {
            let mut options: Vec<(usize, usize)> = Vec::with_capacity(4);
            if r > 0 && !visited[r - 1][c] {
                options.push((r - 1, c));
            }
            if c + 1 < n && !visited[r][c + 1] {
                options.push((r, c + 1));
            }
            if r + 1 < n && !visited[r + 1][c] {
                options.push((r + 1, c));
            }
            if c > 0 && !visited[r][c - 1] {
                options.push((r, c - 1));
            }
            match options.choose(rng) {
                Some(&(nr, nc)) => {
                    visited[nr][nc] = true;
                    walls[2 * nr + 1][2 * nc + 1] = 0;
                    walls[r + nr + 1][c + nc + 1] = 0;
                    stack.push((nr, nc));
                }
                None => {
                    stack.pop();
                }
            }
        }
        // interior walls between two rooms
        let mut candidates: Vec<(usize, usize)> = (1..size - 1)
            .flat_map(|r| (1..size - 1).map(move |c| (r, c)))
            .filter(|&(r, c)| walls[r][c] == 1 && ((r % 2 == 1) != (c % 2 == 1)))
            .collect();
        candidates.shuffle(rng);
        for &(r, c) in candidates.iter().take(extra_openings) {
            walls[r][c] = 0;
        }
        Self {
            walls,
            cell_mm: default_cell_mm(),
            start: Cell::new(1, 1),
            goal: Cell::new(size - 2, size - 2),
            effector_radius_mm: default_radius_mm(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_mazes_are_solvable() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..200 {
            let m = MazeGrid::generate(2 + i % 5, i % 4, &mut rng);
            m.validate().unwrap();
            assert!(m.is_solvable());
        }
    }

    #[test]
    fn walled_goal_unsolvable() {
        let mut walls = vec![vec![1u8; 7]; 7];
        for c in 1..=3 {
            walls[1][c] = 0;
        }
        walls[5][5] = 0;
        let m = MazeGrid::new(walls, Cell::new(1, 1), Cell::new(5, 5)).unwrap();
        assert!(!m.is_solvable());
    }

    #[test]
    fn corridor_path() {
        let m = MazeGrid::corridor(5);
        let path = m.shortest_path().unwrap();
        assert_eq!(path.len(), 5);
        assert!(path.iter().all(|c| c.row == 1));
    }

    #[test]
    fn disc_contacts() {
        let m = MazeGrid::corridor(3);
        let c = m.cell_center_mm(Cell::new(1, 1));
        assert!(m.wall_contacts(&c).is_empty());
        // 7 mm toward the top wall: 1 mm into it
        let p = c + Vector2::new(0.0, -7.0);
        let hits = m.wall_contacts(&p);
        assert_eq!(hits.len(), 1);
        assert!((hits[0].1 - 1.0).abs() < 1e-12);
        assert!((hits[0].0 - Vector2::new(0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn invalid_grids() {
        let walls = vec![vec![0u8, 0], vec![0u8]];
        assert!(MazeGrid::new(walls, Cell::new(0, 0), Cell::new(0, 1)).is_err());
        let walls = vec![vec![0u8, 1]];
        assert!(MazeGrid::new(walls.clone(), Cell::new(0, 0), Cell::new(0, 1)).is_err());
        assert!(MazeGrid::new(walls, Cell::new(0, 0), Cell::new(0, 0)).is_err());
    }

    #[test]
    fn clockwise_order() {
        assert_eq!(
            Direction::Down.clockwise_from(),
            [Direction::Down, Direction::Left, Direction::Up, Direction::Right]
        );
    }
}
