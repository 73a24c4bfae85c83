//! Breadth-first search helpers. Neighbors are always expanded in
//! `Dir::HORIZONTAL` (then up/down) order so results are deterministic.

use std::collections::VecDeque;

use super::*;

/// Open columns reachable from `start` on its layer, in BFS order.
pub fn reachable_columns(world: &WorldState, start: Pos) -> Vec<Column> {
    let d = world.dims;
    if !world.is_open(start) {
        return Vec::new();
    }
    let mut seen = vec![false; d.columns()];
    let mut order = Vec::new();
    let mut queue = VecDeque::from([start.column()]);
    seen[d.column_index(start.column())] = true;
    while let Some(c) = queue.pop_front() {
        order.push(c);
        for dir in Dir::HORIZONTAL {
            let n = c.step(dir);
            if d.contains_column(n) && !seen[d.column_index(n)] && world.is_open(n.at(start.y)) {
                seen[d.column_index(n)] = true;
                queue.push_back(n);
            }
        }
    }
    order
}

/// BFS distance from every open column of layer `y` to the nearest of `goals`
/// (4-connected, -1 where unreachable). Goal columns need not be open.
pub fn layer_distance(world: &WorldState, y: i32, goals: &[Column]) -> Vec<i32> {
    let d = world.dims;
    let mut dist = vec![-1; d.columns()];
    let mut queue = VecDeque::new();
    for &g in goals {
        if d.contains_column(g) && dist[d.column_index(g)] < 0 {
            dist[d.column_index(g)] = 0;
            queue.push_back(g);
        }
    }
    while let Some(c) = queue.pop_front() {
        let dc = dist[d.column_index(c)];
        for dir in Dir::HORIZONTAL {
            let n = c.step(dir);
            if d.contains_column(n) && dist[d.column_index(n)] < 0 && world.is_open(n.at(y)) {
                dist[d.column_index(n)] = dc + 1;
                queue.push_back(n);
            }
        }
    }
    dist
}

/// First step of a shortest layer path from `from` towards `goals`, using the
/// distance field. `None` when unreachable or already at a goal.
pub fn layer_next_step(world: &WorldState, from: Pos, dist: &[i32]) -> Option<Dir> {
    let d = world.dims;
    let here = dist[d.column_index(from.column())];
    if here <= 0 {
        return None;
    }
    Dir::HORIZONTAL.into_iter().find(|&dir| {
        let n = from.column().step(dir);
        d.contains_column(n) && dist[d.column_index(n)] == here - 1
    })
}

/// Route taken by `MoveTo`: shortest 4-connected path on the agent's layer to
/// `target`, or to the reachable column closest to it (Manhattan, earliest in
/// BFS order on ties). Truncated to `MOVE_TO_CAP` steps; excludes the start.
pub fn move_to_route(world: &WorldState, from: Pos, target: Column) -> Vec<Pos> {
    let d = world.dims;
    let mut parent: Vec<Option<usize>> = vec![None; d.columns()];
    let mut seen = vec![false; d.columns()];
    let start = d.column_index(from.column());
    seen[start] = true;
    let mut queue = VecDeque::from([from.column()]);
    let mut best = (from.column().manhattan(target), from.column());
    while let Some(c) = queue.pop_front() {
        let m = c.manhattan(target);
        if m < best.0 {
            best = (m, c);
        }
        if m == 0 {
            break;
        }
        for dir in Dir::HORIZONTAL {
            let n = c.step(dir);
            if d.contains_column(n) && !seen[d.column_index(n)] && world.is_open(n.at(from.y)) {
                seen[d.column_index(n)] = true;
                parent[d.column_index(n)] = Some(d.column_index(c));
                queue.push_back(n);
            }
        }
    }
    let mut cols = Vec::new();
    let mut cur = d.column_index(best.1);
    while cur != start {
        cols.push(d.column_at(cur));
        cur = parent[cur].expect("bfs parent chain");
    }
    cols.reverse();
    cols.truncate(MOVE_TO_CAP);
    cols.into_iter().map(|c| c.at(from.y)).collect()
}

/// Distance field over open voxels (6-connected) towards `goals`; -1 where
/// unreachable. Indexed like the world grid.
pub fn voxel_distance(world: &WorldState, goals: &[Pos]) -> Vec<i32> {
    let d = world.dims;
    let idx = |p: Pos| (p.x + d.w * (p.z + d.l * p.y)) as usize;
    let mut dist = vec![-1; d.volume()];
    let mut queue = VecDeque::new();
    for &g in goals {
        if world.is_open(g) && dist[idx(g)] < 0 {
            dist[idx(g)] = 0;
            queue.push_back(g);
        }
    }
    while let Some(p) = queue.pop_front() {
        let dp = dist[idx(p)];
        for dir in Dir::ALL {
            let n = p.step(dir);
            if world.is_open(n) && dist[idx(n)] < 0 {
                dist[idx(n)] = dp + 1;
                queue.push_back(n);
            }
        }
    }
    dist
}

pub fn voxel_index(dims: Dims, p: Pos) -> usize {
    (p.x + dims.w * (p.z + dims.l * p.y)) as usize
}

/// First step down a voxel distance field, tie-break in `Dir::ALL` order.
pub fn voxel_next_step(world: &WorldState, from: Pos, dist: &[i32]) -> Option<Dir> {
    let d = world.dims;
    let here = dist[voxel_index(d, from)];
    if here <= 0 {
        return None;
    }
    Dir::ALL.into_iter().find(|&dir| {
        let n = from.step(dir);
        d.contains(n) && dist[voxel_index(d, n)] == here - 1
    })
}

/// Voxels holding `b` that have a horizontally adjacent voxel with a
/// non-negative entry in `dist` (i.e. they can be mined from a reachable spot).
pub fn exposed_blocks(world: &WorldState, dist: &[i32], b: BlockId) -> Vec<Pos> {
    let d = world.dims;
    world
        .voxels()
        .filter(|&(p, v)| {
            v == b
                && Dir::HORIZONTAL.iter().any(|&dir| {
                    let n = p.step(dir);
                    d.contains(n) && dist[voxel_index(d, n)] >= 0
                })
        })
        .map(|(p, _)| p)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn walled() -> WorldState {
        // 7x7 layer with a wall at x=3 except a gap at z=6.
        let mut w = WorldState::empty(Dims::new(7, 7, 3), 0);
        for z in 0..6 {
            w.set(Pos::new(3, 1, z), STONE);
        }
        w
    }

    #[test]
    fn layer_distance_goes_around_walls() {
        let w = walled();
        let dist = layer_distance(&w, 1, &[Column::new(6, 0)]);
        // From (0,0): down to z=6 (6), across to x=6 (6), up to z=0 (6).
        assert_eq!(dist[w.dims.column_index(Column::new(0, 0))], 18);
        assert_eq!(dist[w.dims.column_index(Column::new(3, 0))], -1);
    }

    #[test]
    fn move_to_unreachable_goes_to_closest() {
        let mut w = walled();
        w.set(Pos::new(3, 1, 6), STONE);
        let route = move_to_route(&w, Pos::new(0, 1, 0), Column::new(6, 0));
        assert_eq!(route.last().copied(), Some(Pos::new(2, 1, 0)));
        assert_eq!(route.len(), 2);
    }

    #[test]
    fn next_step_follows_tie_break() {
        let w = WorldState::empty(Dims::new(5, 5, 3), 0);
        let dist = layer_distance(&w, 1, &[Column::new(4, 0)]);
        // Both north and east reduce distance; north wins.
        assert_eq!(layer_next_step(&w, Pos::new(2, 1, 2), &dist), Some(Dir::North));
    }
}
