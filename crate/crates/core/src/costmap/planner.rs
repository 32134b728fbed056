//! 8-connected A* over a [`Costmap`].
//!
//! Entering a cell costs that cell's cost, times √2 for diagonal moves. The
//! heuristic is the Chebyshev distance times the map's minimum cell cost,
//! which is consistent for this step model.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use super::{Costmap, CostmapError};

/// `(row, col)`.
pub type Cell = (usize, usize);

const NEIGHBOURS: [(i64, i64); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPlan {
    pub waypoints: Vec<Cell>,
    pub total_cost: f64,
    /// Distinct blocked cells within one cell (Chebyshev) of the path.
    pub blocked_cells_adjacent: usize,
}

#[derive(Debug, PartialEq)]
struct Open {
    f: f64,
    cell: Cell,
}

impl Eq for Open {}

impl Ord for Open {
    // Min-heap on (f, row, col).
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn check_endpoints(map: &Costmap, start: Cell, goal: Cell) -> Result<(), CostmapError> {
    for cell in [start, goal] {
        if !map.contains(cell.0, cell.1) {
            return Err(CostmapError::OutOfBounds(cell.0, cell.1));
        }
    }
    if map.is_blocked(start.0, start.1) {
        return Err(CostmapError::StartBlocked);
    }
    if map.is_blocked(goal.0, goal.1) {
        return Err(CostmapError::GoalBlocked);
    }
    Ok(())
}

pub fn plan_path(map: &Costmap, start: Cell, goal: Cell) -> Result<PathPlan, CostmapError> {
    check_endpoints(map, start, goal)?;
    let waypoints = astar(map, &|r, c| map.is_blocked(r, c), start, goal)?;
    Ok(finish(map, waypoints))
}

/// Replans treating every cell within `clearance` (Chebyshev) of a blocked
/// cell as impassable. Fails with [`CostmapError::NoPath`] when the margin
/// swallows an endpoint or disconnects them.
pub fn suggest_waypoints(plan: &PathPlan, map: &Costmap, clearance: usize) -> Result<PathPlan, CostmapError> {
    let (&start, &goal) = match (plan.waypoints.first(), plan.waypoints.last()) {
        (Some(s), Some(g)) => (s, g),
        _ => return Err(CostmapError::InvalidParameter("plan has no waypoints".into())),
    };
    if clearance == 0 {
        return plan_path(map, start, goal);
    }
    check_endpoints(map, start, goal)?;
    let inflated = inflate(map, clearance);
    let (w, _) = (map.width(), map.height());
    if inflated[start.0 * w + start.1] || inflated[goal.0 * w + goal.1] {
        return Err(CostmapError::NoPath);
    }
    let waypoints = astar(map, &|r, c| inflated[r * w + c], start, goal)?;
    Ok(finish(map, waypoints))
}

/// Cells within `radius` of a blocked cell (blocked cells included).
fn inflate(map: &Costmap, radius: usize) -> Vec<bool> {
    let (w, h) = (map.width(), map.height());
    // Separable dilation: rows then columns.
    let mut rows = vec![false; w * h];
    for r in 0..h {
        for c in 0..w {
            if map.is_blocked(r, c) {
                let lo = c.saturating_sub(radius);
                let hi = (c + radius).min(w - 1);
                rows[r * w + lo..=r * w + hi].iter_mut().for_each(|v| *v = true);
            }
        }
    }
    let mut out = vec![false; w * h];
    for c in 0..w {
        for r in 0..h {
            if rows[r * w + c] {
                for rr in r.saturating_sub(radius)..=(r + radius).min(h - 1) {
                    out[rr * w + c] = true;
                }
            }
        }
    }
    out
}

fn astar(map: &Costmap, blocked: &dyn Fn(usize, usize) -> bool, start: Cell, goal: Cell) -> Result<Vec<Cell>, CostmapError> {
    let (w, h) = (map.width(), map.height());
    let min_cost = map.min_cost().unwrap_or(0.0);
    let heuristic = |(r, c): Cell| {
        let d = r.abs_diff(goal.0).max(c.abs_diff(goal.1));
        d as f64 * min_cost
    };
    let mut g = vec![f64::INFINITY; w * h];
    let mut parent = vec![usize::MAX; w * h];
    let mut closed = vec![false; w * h];
    let mut open = BinaryHeap::new();
    g[start.0 * w + start.1] = 0.0;
    open.push(Open {
        f: heuristic(start),
        cell: start,
    });
    while let Some(Open { cell, .. }) = open.pop() {
        let idx = cell.0 * w + cell.1;
        if closed[idx] {
            continue;
        }
        closed[idx] = true;
        if cell == goal {
            let mut path = vec![goal];
            let mut at = idx;
            while parent[at] != usize::MAX {
                at = parent[at];
                path.push((at / w, at % w));
            }
            path.reverse();
            return Ok(path);
        }
        for (dr, dc) in NEIGHBOURS {
            let (nr, nc) = (cell.0 as i64 + dr, cell.1 as i64 + dc);
            if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                continue;
            }
            let (nr, nc) = (nr as usize, nc as usize);
            let nidx = nr * w + nc;
            if closed[nidx] || blocked(nr, nc) {
                continue;
            }
            let Some(cost) = map.cost(nr, nc) else { continue };
            let step = if dr != 0 && dc != 0 { cost * SQRT_2 } else { cost };
            let candidate = g[idx] + step;
            if candidate < g[nidx] {
                g[nidx] = candidate;
                parent[nidx] = idx;
                open.push(Open {
                    f: candidate + heuristic((nr, nc)),
                    cell: (nr, nc),
                });
            }
        }
    }
    Err(CostmapError::NoPath)
}

/// Path cost as `Σ straight-step costs + √2 · Σ diagonal-step costs`, so
/// equal-cost paths report bit-identical totals.
pub(crate) fn path_cost(map: &Costmap, waypoints: &[Cell]) -> f64 {
    let (mut straight, mut diagonal) = (0.0, 0.0);
    for pair in waypoints.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let cost = map.cost(b.0, b.1).unwrap_or(f64::INFINITY);
        if a.0 != b.0 && a.1 != b.1 {
            diagonal += cost;
        } else {
            straight += cost;
        }
    }
    straight + SQRT_2 * diagonal
}

fn finish(map: &Costmap, waypoints: Vec<Cell>) -> PathPlan {
    let mut adjacent = BTreeSet::new();
    for &(r, c) in &waypoints {
        for rr in r.saturating_sub(1)..=(r + 1).min(map.height() - 1) {
            for cc in c.saturating_sub(1)..=(c + 1).min(map.width() - 1) {
                if map.is_blocked(rr, cc) {
                    adjacent.insert((rr, cc));
                }
            }
        }
    }
    PathPlan {
        total_cost: path_cost(map, &waypoints),
        waypoints,
        blocked_cells_adjacent: adjacent.len(),
    }
}
