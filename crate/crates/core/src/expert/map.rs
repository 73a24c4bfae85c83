use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::ExpertError;
use crate::world::{block, name, Column, Dims, Dir, Observation, AIR, VIEW_RADIUS};

/// One agent report: a column it has seen plus any tags for it.
pub type MapReport = (Column, BTreeSet<String>);

/// Union of every column any agent has reported, with merged tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamicMap {
    width: i32,
    length: i32,
    explored: Vec<bool>,
    explored_count: usize,
    tags: BTreeMap<Column, BTreeSet<String>>,
    epoch: u64,
}

impl DynamicMap {
    pub fn new(dims: Dims) -> Self {
        DynamicMap {
            width: dims.w,
            length: dims.l,
            explored: vec![false; dims.columns()],
            explored_count: 0,
            tags: BTreeMap::new(),
            epoch: 0,
        }
    }

    fn dims(&self) -> Dims {
        Dims::new(self.width, self.length, 1)
    }

    pub fn contains(&self, c: Column) -> bool {
        self.dims().contains_column(c)
    }

    pub fn is_explored(&self, c: Column) -> bool {
        self.contains(c) && self.explored[self.dims().column_index(c)]
    }

    pub fn explored_count(&self) -> usize {
        self.explored_count
    }

    pub fn is_complete(&self) -> bool {
        self.explored_count == self.explored.len()
    }

    pub fn explored_columns(&self) -> impl Iterator<Item = Column> + '_ {
        let d = self.dims();
        self.explored.iter().enumerate().filter(|(_, &e)| e).map(move |(i, _)| d.column_at(i))
    }

    pub fn tags(&self, c: Column) -> Option<&BTreeSet<String>> {
        self.tags.get(&c)
    }

    pub fn all_tags(&self) -> &BTreeMap<Column, BTreeSet<String>> {
        &self.tags
    }

    /// Columns carrying `tag`, in column order.
    pub fn columns_tagged(&self, tag: &str) -> Vec<Column> {
        self.tags.iter().filter(|(_, t)| t.contains(tag)).map(|(c, _)| *c).collect()
    }

    /// Bumped once per update that changed the content.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Same explored set and tags, ignoring the epoch counter.
    pub fn same_content(&self, other: &DynamicMap) -> bool {
        self.width == other.width
            && self.length == other.length
            && self.explored == other.explored
            && self.tags == other.tags
    }

    /// Merge a batch of reports. All columns are validated before anything is
    /// written, so a rejected batch leaves the map untouched.
    pub fn update(&mut self, reports: &[MapReport]) -> Result<(), ExpertError> {
        if let Some((c, _)) = reports.iter().find(|(c, _)| !self.contains(*c)) {
            return Err(ExpertError::Bounds(*c));
        }
        let d = self.dims();
        let mut changed = false;
        for (c, tags) in reports {
            let i = d.column_index(*c);
            if !self.explored[i] {
                self.explored[i] = true;
                self.explored_count += 1;
                changed = true;
            }
            if !tags.is_empty() {
                let entry = self.tags.entry(*c).or_default();
                for t in tags {
                    changed |= entry.insert(t.clone());
                }
            }
        }
        if changed {
            self.epoch += 1;
        }
        Ok(())
    }

    /// Nearest unexplored column by 4-connected BFS from `from` (ties in
    /// N, E, S, W expansion order); `None` when fully explored.
    pub fn frontier_query(&self, from: Column) -> Option<Column> {
        self.frontier_where(from, |_| true)
    }

    /// Like [`frontier_query`](Self::frontier_query) but only accepts
    /// unexplored columns satisfying `accept`.
    pub fn frontier_where(&self, from: Column, accept: impl Fn(Column) -> bool) -> Option<Column> {
        let d = self.dims();
        if !self.contains(from) {
            return None;
        }
        let mut seen = vec![false; self.explored.len()];
        seen[d.column_index(from)] = true;
        let mut queue = VecDeque::from([from]);
        while let Some(c) = queue.pop_front() {
            if !self.explored[d.column_index(c)] && accept(c) {
                return Some(c);
            }
            for dir in Dir::HORIZONTAL {
                let n = c.step(dir);
                if d.contains_column(n) && !seen[d.column_index(n)] {
                    seen[d.column_index(n)] = true;
                    queue.push_back(n);
                }
            }
        }
        None
    }
}

/// Reports for every in-bounds column of an observation's patch, tagged
/// `block:<name>` for each block seen in that column and `audio:<event>` for
/// visible emitters.
pub fn observation_reports(obs: &Observation, dims: Dims) -> Vec<MapReport> {
    let r = VIEW_RADIUS;
    let mut out = Vec::new();
    for dz in -r..=r {
        for dx in -r..=r {
            let c = Column::new(obs.position.x + dx, obs.position.z + dz);
            if !dims.contains_column(c) {
                continue;
            }
            let mut tags = BTreeSet::new();
            for dy in -r..=r {
                let y = obs.position.y + dy;
                let b = obs.at(dx, dy, dz).unwrap_or(AIR);
                if b == AIR || y < 0 || y >= dims.h {
                    continue;
                }
                tags.insert(format!("block:{}", name(b)));
                if let Some(e) = block(b).audio {
                    tags.insert(format!("audio:{}", e.event));
                }
            }
            out.push((c, tags));
        }
    }
    out
}

/// Functional form of [`DynamicMap::update`].
pub fn map_update(map: &DynamicMap, reports: &[MapReport]) -> Result<DynamicMap, ExpertError> {
    let mut next = map.clone();
    next.update(reports)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(ts: &[&str]) -> BTreeSet<String> {
        ts.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_report() {
        let m = DynamicMap::new(Dims::new(8, 8, 1));
        let m = map_update(&m, &[(Column::new(3, 4), tags(&["forest"]))]).unwrap();
        assert_eq!(m.explored_columns().collect::<Vec<_>>(), vec![Column::new(3, 4)]);
        assert_eq!(m.tags(Column::new(3, 4)), Some(&tags(&["forest"])));
        let again = map_update(&m, &[(Column::new(3, 4), tags(&["forest"]))]).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn out_of_bounds_rejected_atomically() {
        let m = DynamicMap::new(Dims::new(4, 4, 1));
        let err = map_update(&m, &[(Column::new(0, 0), tags(&[])), (Column::new(4, 0), tags(&[]))]).unwrap_err();
        assert_eq!(err.kind(), "BoundsError");
    }

    #[test]
    fn frontier_tie_break_and_complete() {
        let mut m = DynamicMap::new(Dims::new(5, 5, 1));
        m.update(&[(Column::new(2, 2), tags(&[]))]).unwrap();
        assert_eq!(m.frontier_query(Column::new(2, 2)), Some(Column::new(2, 1)));
        let all: Vec<_> = (0..25).map(|i| (Column::new(i % 5, i / 5), tags(&[]))).collect();
        m.update(&all).unwrap();
        assert!(m.is_complete());
        assert_eq!(m.frontier_query(Column::new(0, 0)), None);
    }
}
