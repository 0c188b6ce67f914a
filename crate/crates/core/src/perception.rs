//! The ego's view of the road: local occupancy, beliefs over the extended
//! view, scenario-defined query actions and canonical state keys.
//!
//! Extended-view cells are numbered column-major starting at 1: cell
//! `c * lanes + lane + 1` is lane `lane` of the `c`-th extended column. With
//! the two-lane evaluation grid, cells `(1, 2)` form the nearest extended
//! column and `(7, 8)` the farthest.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Cell, GridGeometry, GridWindow};
use crate::motion::{EgoPose, MotionAction, MotionSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BeliefCell {
    Unknown,
    Free,
    Occupied,
}

impl BeliefCell {
    pub fn symbol(self) -> char {
        match self {
            BeliefCell::Unknown => 'U',
            BeliefCell::Free => 'F',
            BeliefCell::Occupied => 'O',
        }
    }
}

/// Bidirectional map between extended cell indices and `(lane, offset)`.
#[derive(Debug, Clone, Copy)]
pub struct CellIndexMap {
    geometry: GridGeometry,
}

impl CellIndexMap {
    pub fn new(geometry: GridGeometry) -> Result<Self> {
        geometry.validate()?;
        if geometry.ext_cols == 0 {
            return Err(Error::InvalidConfig("geometry has no extended view to number".into()));
        }
        Ok(Self { geometry })
    }

    pub fn len(&self) -> usize {
        self.geometry.ext_cells()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(lane, offset)` of 1-based cell `index`.
    pub fn cell(&self, index: usize) -> Option<(usize, i32)> {
        if index == 0 || index > self.len() {
            return None;
        }
        let i = index - 1;
        let lanes = self.geometry.lanes;
        Some((i % lanes, self.geometry.first_ext_offset() + (i / lanes) as i32))
    }

    pub fn index(&self, lane: usize, offset: i32) -> Option<usize> {
        let col = offset - self.geometry.first_ext_offset();
        if lane >= self.geometry.lanes || col < 0 || col as usize >= self.geometry.ext_cols {
            return None;
        }
        Some(col as usize * self.geometry.lanes + lane + 1)
    }
}

/// Encoded state: pose, local occupancy and extended-view beliefs.
///
/// Extended beliefs are kept per absolute lane, so a lane change moves the
/// pose and leaves the beliefs where they are.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BeliefState {
    geometry: GridGeometry,
    pub pose: EgoPose,
    /// Per lane, bit `i` is local column `i` (offset `i - rear_cols`).
    local: Vec<u64>,
    /// Per lane, bit `i` is extended column `i`.
    ext_known: Vec<u64>,
    ext_occupied: Vec<u64>,
}

impl BeliefState {
    /// Everything free locally, everything unknown ahead.
    pub fn new(geometry: GridGeometry, pose: EgoPose) -> Self {
        Self {
            geometry,
            pose,
            local: vec![0; geometry.lanes],
            ext_known: vec![0; geometry.lanes],
            ext_occupied: vec![0; geometry.lanes],
        }
    }

    pub fn geometry(&self) -> GridGeometry {
        self.geometry
    }

    pub fn local_cell(&self, lane: usize, offset: i32) -> Cell {
        let c = offset + self.geometry.rear_cols as i32;
        assert!(c >= 0 && (c as usize) < self.geometry.local_cols, "offset {offset} outside the local view");
        Cell::from_bit(self.local[lane] >> c & 1 == 1)
    }

    pub fn set_local_cell(&mut self, lane: usize, offset: i32, cell: Cell) {
        let c = (offset + self.geometry.rear_cols as i32) as usize;
        if cell.is_occupied() {
            self.local[lane] |= 1 << c;
        } else {
            self.local[lane] &= !(1 << c);
        }
    }

    pub fn ext_cell(&self, lane: usize, offset: i32) -> BeliefCell {
        let c = offset - self.geometry.first_ext_offset();
        assert!(c >= 0 && (c as usize) < self.geometry.ext_cols, "offset {offset} outside the extended view");
        if self.ext_known[lane] >> c & 1 == 0 {
            BeliefCell::Unknown
        } else if self.ext_occupied[lane] >> c & 1 == 1 {
            BeliefCell::Occupied
        } else {
            BeliefCell::Free
        }
    }

    pub fn set_ext_cell(&mut self, lane: usize, offset: i32, cell: BeliefCell) {
        let bit = 1u64 << (offset - self.geometry.first_ext_offset());
        match cell {
            BeliefCell::Unknown => {
                self.ext_known[lane] &= !bit;
                self.ext_occupied[lane] &= !bit;
            }
            BeliefCell::Free => {
                self.ext_known[lane] |= bit;
                self.ext_occupied[lane] &= !bit;
            }
            BeliefCell::Occupied => {
                self.ext_known[lane] |= bit;
                self.ext_occupied[lane] |= bit;
            }
        }
    }

    /// Belief of 1-based extended cell `index`.
    pub fn ext_by_index(&self, index: usize) -> BeliefCell {
        let lanes = self.geometry.lanes;
        let i = index - 1;
        self.ext_cell(i % lanes, self.geometry.first_ext_offset() + (i / lanes) as i32)
    }

    pub fn unknown_count(&self) -> usize {
        let mask = low_bits(self.geometry.ext_cols);
        self.ext_known.iter().map(|k| (!k & mask).count_ones() as usize).sum()
    }

    /// Known-cell mask and occupancy bits of extended column `col`, as
    /// column patterns (bit `l` = lane `l`).
    pub fn ext_column(&self, col: usize) -> (u64, u64) {
        let mut known = 0;
        let mut occ = 0;
        for lane in 0..self.geometry.lanes {
            known |= (self.ext_known[lane] >> col & 1) << lane;
            occ |= (self.ext_occupied[lane] >> col & 1) << lane;
        }
        (known, occ)
    }

    /// Moves the extended beliefs back by `d` columns. Columns that enter the
    /// local view are dropped, the `d` frontier columns become unknown.
    pub fn shift(&mut self, d: usize) {
        let mask = low_bits(self.geometry.ext_cols);
        for row in self.ext_known.iter_mut().chain(self.ext_occupied.iter_mut()) {
            *row = if d >= 64 { 0 } else { (*row >> d) & mask };
        }
    }

    /// Sets the listed extended cells to their ground-truth occupancy.
    pub fn reveal(&mut self, cells: &[usize], window: &GridWindow) {
        let lanes = self.geometry.lanes;
        let first = self.geometry.first_ext_offset();
        for &index in cells {
            let i = index - 1;
            let (lane, offset) = (i % lanes, first + (i / lanes) as i32);
            let cell = match window.get(lane, offset) {
                Cell::Free => BeliefCell::Free,
                Cell::Occupied => BeliefCell::Occupied,
            };
            self.set_ext_cell(lane, offset, cell);
        }
    }

    pub fn reveal_all(&mut self, window: &GridWindow) {
        let g = self.geometry;
        for (lane, row) in window.rows().iter().enumerate() {
            self.ext_known[lane] = low_bits(g.ext_cols);
            self.ext_occupied[lane] = (row >> g.local_cols) & low_bits(g.ext_cols);
        }
    }

    /// Re-reads the local view from ground truth.
    pub fn read_local(&mut self, window: &GridWindow) {
        let mask = low_bits(self.geometry.local_cols);
        for (dst, row) in self.local.iter_mut().zip(window.rows()) {
            *dst = row & mask;
        }
        self.local[self.pose.lane] &= !(1 << self.geometry.ego_col());
    }
}

/// Belief shifted by `d` columns, see [`BeliefState::shift`].
pub fn shift_belief(belief: &BeliefState, d: usize) -> BeliefState {
    let mut next = belief.clone();
    next.shift(d);
    next
}

/// Belief with `cells` revealed from `window`, see [`BeliefState::reveal`].
pub fn apply_reveal(belief: &BeliefState, cells: &[usize], window: &GridWindow) -> BeliefState {
    let mut next = belief.clone();
    next.reveal(cells, window);
    next
}

fn low_bits(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioId {
    /// Local view only.
    LV,
    /// One random half of the extended view pushed every step.
    RC,
    /// Query one extended column per step.
    C1,
    /// Query two extended columns per step.
    C2,
    /// Full extended view every step.
    FV,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 5] = [ScenarioId::LV, ScenarioId::RC, ScenarioId::C1, ScenarioId::C2, ScenarioId::FV];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioId::LV => "LV",
            ScenarioId::RC => "RC",
            ScenarioId::C1 => "C1",
            ScenarioId::C2 => "C2",
            ScenarioId::FV => "FV",
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioId::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scenario {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AutoReveal {
    None,
    /// Each step, cells `1..=n/2` or `n/2+1..=n` with equal probability.
    RandomHalf,
    Full,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    /// 1-based extended cell indices per query group.
    pub query_groups: Vec<Vec<usize>>,
    pub auto_reveal: AutoReveal,
}

impl ScenarioSpec {
    /// Default groups and reveal rule for `id` on `geometry`.
    ///
    /// C1 queries one extended column per group. C2 queries two columns per
    /// group, alternating columns (`+2,+4` and `+3,+5` on the evaluation grid,
    /// i.e. cells `1,5,2,6` and `3,7,4,8`).
    pub fn standard(id: ScenarioId, geometry: GridGeometry) -> Self {
        let lanes = geometry.lanes;
        let cell = |col: usize, lane: usize| col * lanes + lane + 1;
        let (query_groups, auto_reveal) = match id {
            ScenarioId::LV => (Vec::new(), AutoReveal::None),
            ScenarioId::RC => (Vec::new(), AutoReveal::RandomHalf),
            ScenarioId::FV => (Vec::new(), AutoReveal::Full),
            ScenarioId::C1 => ((0..geometry.ext_cols).map(|c| (0..lanes).map(|l| cell(c, l)).collect()).collect(), AutoReveal::None),
            ScenarioId::C2 => {
                let groups = (0..2.min(geometry.ext_cols))
                    .map(|parity| {
                        (0..lanes)
                            .flat_map(|l| (parity..geometry.ext_cols).step_by(2).map(move |c| cell(c, l)))
                            .collect()
                    })
                    .collect();
                (groups, AutoReveal::None)
            }
        };
        Self { id, query_groups, auto_reveal }
    }

    pub fn validate(&self, geometry: GridGeometry) -> Result<()> {
        let n = geometry.ext_cells();
        if self.id == ScenarioId::LV && (!self.query_groups.is_empty() || self.auto_reveal != AutoReveal::None) {
            return Err(Error::InvalidConfig("LV has no extended view: no query groups, no reveals".into()));
        }
        if self.id == ScenarioId::FV && self.auto_reveal != AutoReveal::Full {
            return Err(Error::InvalidConfig("FV requires the full auto-reveal".into()));
        }
        if self.id != ScenarioId::LV && n == 0 {
            return Err(Error::InvalidConfig(format!("{} needs an extended view", self.id)));
        }
        for group in &self.query_groups {
            if group.is_empty() || group.iter().any(|&i| i == 0 || i > n) {
                return Err(Error::InvalidConfig(format!("query group {group:?} outside cells 1..={n}")));
            }
        }
        // Joint actions are stored in a 64-slot row.
        if 4 * (self.query_groups.len() + 1) > 64 {
            return Err(Error::InvalidConfig("too many query groups".into()));
        }
        Ok(())
    }

    pub fn has_extended(&self) -> bool {
        self.id != ScenarioId::LV
    }

    /// Whether the ego makes a real communications choice each step.
    pub fn has_query_choice(&self) -> bool {
        !self.query_groups.is_empty()
    }

    pub fn query_count(&self) -> usize {
        self.query_groups.len() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QueryAction {
    /// 0-based query group.
    Group(usize),
    NoQuery,
}

impl QueryAction {
    pub fn name(self) -> String {
        match self {
            QueryAction::Group(g) => format!("g{}", g + 1),
            QueryAction::NoQuery => "noquery".into(),
        }
    }
}

/// Groups in ascending order, then `NoQuery`.
pub fn feasible_query_actions(scenario: &ScenarioSpec) -> Vec<QueryAction> {
    (0..scenario.query_groups.len())
        .map(QueryAction::Group)
        .chain(std::iter::once(QueryAction::NoQuery))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JointAction {
    pub motion: MotionAction,
    pub query: QueryAction,
}

impl JointAction {
    pub fn new(motion: MotionAction, query: QueryAction) -> Self {
        Self { motion, query }
    }
}

impl fmt::Display for JointAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.motion.name(), self.query.name())
    }
}

/// Dense numbering of joint actions: `motion * query_count + query`, with
/// `NoQuery` as the last query index. Slot order is the canonical action
/// order used for tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActionSpace {
    query_count: usize,
}

impl ActionSpace {
    pub fn new(scenario: &ScenarioSpec) -> Self {
        Self { query_count: scenario.query_count() }
    }

    pub fn with_query_count(query_count: usize) -> Self {
        Self { query_count }
    }

    pub fn query_count(&self) -> usize {
        self.query_count
    }

    pub fn slots(&self) -> usize {
        4 * self.query_count
    }

    pub fn slot(&self, a: JointAction) -> usize {
        let q = match a.query {
            QueryAction::Group(g) => g,
            QueryAction::NoQuery => self.query_count - 1,
        };
        a.motion.index() * self.query_count + q
    }

    pub fn action(&self, slot: usize) -> JointAction {
        let motion = MotionAction::from_index(slot / self.query_count).expect("slot out of range");
        let q = slot % self.query_count;
        let query = if q + 1 == self.query_count { QueryAction::NoQuery } else { QueryAction::Group(q) };
        JointAction { motion, query }
    }

    /// Slots of all feasible joint actions in canonical order.
    pub fn feasible_slots(&self, motions: MotionSet) -> impl Iterator<Item = usize> + '_ {
        motions.iter().flat_map(move |m| {
            let base = m.index() * self.query_count;
            base..base + self.query_count
        })
    }

    pub fn parse(&self, s: &str) -> Result<JointAction> {
        let bad = || Error::Inconsistent(format!("bad action key {s:?}"));
        let (m, q) = s.split_once('.').ok_or_else(bad)?;
        let motion = MotionAction::from_name(m).ok_or_else(bad)?;
        let query = if q == "noquery" {
            QueryAction::NoQuery
        } else {
            let g: usize = q.strip_prefix('g').and_then(|n| n.parse().ok()).ok_or_else(bad)?;
            if g == 0 || g >= self.query_count {
                return Err(bad());
            }
            QueryAction::Group(g - 1)
        };
        Ok(JointAction { motion, query })
    }
}

/// Canonical state key, packed into an integer. Rendered with
/// [`StateCodec::render`] as `v|lane|local|extended`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ExtAlphabet {
    Omitted,
    /// F/O, for scenarios where the extended view is always fully known.
    Binary,
    /// U/F/O.
    Ternary,
}

impl ExtAlphabet {
    fn radix(self) -> u64 {
        match self {
            ExtAlphabet::Omitted => 1,
            ExtAlphabet::Binary => 2,
            ExtAlphabet::Ternary => 3,
        }
    }
}

/// Encodes beliefs to [`StateKey`]s and back.
///
/// Mixed-radix layout, most significant first: velocity, lane, local cells
/// (columns rear to front, lanes ascending, ego cell skipped), extended cells
/// by index 1..=n.
#[derive(Debug, Clone, Copy)]
pub struct StateCodec {
    geometry: GridGeometry,
    v_max: u32,
    ext: ExtAlphabet,
}

impl StateCodec {
    pub fn new(geometry: GridGeometry, v_max: u32, scenario: &ScenarioSpec) -> Result<Self> {
        geometry.validate()?;
        let ext = if !scenario.has_extended() || geometry.ext_cols == 0 {
            ExtAlphabet::Omitted
        } else if scenario.auto_reveal == AutoReveal::Full {
            ExtAlphabet::Binary
        } else {
            ExtAlphabet::Ternary
        };
        let codec = Self { geometry, v_max, ext };
        if codec.cardinality() > u64::MAX as u128 {
            return Err(Error::InvalidConfig("state space does not fit a 64-bit key".into()));
        }
        Ok(codec)
    }

    pub fn geometry(&self) -> GridGeometry {
        self.geometry
    }

    fn ext_cells(&self) -> usize {
        if self.ext == ExtAlphabet::Omitted {
            0
        } else {
            self.geometry.ext_cells()
        }
    }

    /// Upper bound on the number of distinct keys.
    pub fn cardinality(&self) -> u128 {
        let local_bits = self.geometry.local_cells() as u32 - 1;
        (self.v_max as u128 + 1)
            * self.geometry.lanes as u128
            * (1u128 << local_bits)
            * (self.ext.radix() as u128).pow(self.ext_cells() as u32)
    }

    fn local_scan(&self, lane_of_ego: usize) -> impl Iterator<Item = (usize, usize)> {
        let g = self.geometry;
        (0..g.local_cols)
            .flat_map(move |c| (0..g.lanes).map(move |l| (l, c)))
            .filter(move |&(l, c)| !(l == lane_of_ego && c == g.ego_col()))
    }

    pub fn encode(&self, b: &BeliefState) -> Result<StateKey> {
        let g = self.geometry;
        if b.pose.velocity > self.v_max || b.pose.lane >= g.lanes {
            return Err(Error::Inconsistent(format!("pose {:?} out of range", b.pose)));
        }
        let mut code = b.pose.velocity as u64 * g.lanes as u64 + b.pose.lane as u64;
        for (l, c) in self.local_scan(b.pose.lane) {
            code = code * 2 + (b.local[l] >> c & 1);
        }
        match self.ext {
            ExtAlphabet::Omitted => {}
            ExtAlphabet::Binary => {
                for c in 0..g.ext_cols {
                    for l in 0..g.lanes {
                        if b.ext_known[l] >> c & 1 == 0 {
                            return Err(Error::Inconsistent("unknown cell in a fully revealed view".into()));
                        }
                        code = code * 2 + (b.ext_occupied[l] >> c & 1);
                    }
                }
            }
            ExtAlphabet::Ternary => {
                for c in 0..g.ext_cols {
                    for l in 0..g.lanes {
                        let digit = (b.ext_known[l] >> c & 1) * (1 + (b.ext_occupied[l] >> c & 1));
                        code = code * 3 + digit;
                    }
                }
            }
        }
        Ok(StateKey(code))
    }

    pub fn decode(&self, key: StateKey) -> Result<BeliefState> {
        if key.0 as u128 >= self.cardinality() {
            return Err(Error::Inconsistent(format!("state key {} out of range", key.0)));
        }
        let g = self.geometry;
        let mut code = key.0;
        let radix = self.ext.radix();
        let mut ext_digits = vec![0u64; self.ext_cells()];
        for digit in ext_digits.iter_mut().rev() {
            *digit = code % radix;
            code /= radix;
        }
        let local_bits = g.local_cells() - 1;
        let local_code = code & ((1u64 << local_bits) - 1);
        code >>= local_bits;
        let lane = (code % g.lanes as u64) as usize;
        let velocity = (code / g.lanes as u64) as u32;
        let mut b = BeliefState::new(g, EgoPose { velocity, lane });
        for (i, (l, c)) in self.local_scan(lane).enumerate() {
            let bit = local_code >> (local_bits - 1 - i) & 1;
            b.local[l] |= bit << c;
        }
        for (i, &digit) in ext_digits.iter().enumerate() {
            let (l, c) = (i % g.lanes, i / g.lanes);
            let cell = match (self.ext, digit) {
                (ExtAlphabet::Binary, 0) | (ExtAlphabet::Ternary, 1) => BeliefCell::Free,
                (ExtAlphabet::Binary, _) | (ExtAlphabet::Ternary, 2) => BeliefCell::Occupied,
                _ => BeliefCell::Unknown,
            };
            b.set_ext_cell(l, g.first_ext_offset() + c as i32, cell);
        }
        Ok(b)
    }

    pub fn render(&self, key: StateKey) -> Result<String> {
        let b = self.decode(key)?;
        let g = self.geometry;
        let mut s = format!("{}|{}|", b.pose.velocity, b.pose.lane);
        for (l, c) in self.local_scan(b.pose.lane) {
            s.push(if b.local[l] >> c & 1 == 1 { 'O' } else { 'F' });
        }
        if self.ext != ExtAlphabet::Omitted {
            s.push('|');
            for i in 1..=g.ext_cells() {
                s.push(b.ext_by_index(i).symbol());
            }
        }
        Ok(s)
    }

    pub fn parse(&self, s: &str) -> Result<StateKey> {
        let bad = || Error::Inconsistent(format!("bad state key {s:?}"));
        let g = self.geometry;
        let parts: Vec<&str> = s.split('|').collect();
        let expected = if self.ext == ExtAlphabet::Omitted { 3 } else { 4 };
        if parts.len() != expected {
            return Err(bad());
        }
        let velocity: u32 = parts[0].parse().map_err(|_| bad())?;
        let lane: usize = parts[1].parse().map_err(|_| bad())?;
        if velocity > self.v_max || lane >= g.lanes || parts[2].len() != g.local_cells() - 1 {
            return Err(bad());
        }
        let mut b = BeliefState::new(g, EgoPose { velocity, lane });
        for ((l, c), ch) in self.local_scan(lane).zip(parts[2].chars()) {
            match ch {
                'F' => {}
                'O' => b.local[l] |= 1 << c,
                _ => return Err(bad()),
            }
        }
        if expected == 4 {
            if parts[3].chars().count() != g.ext_cells() {
                return Err(bad());
            }
            for (i, ch) in parts[3].chars().enumerate() {
                let (l, c) = (i % g.lanes, i / g.lanes);
                let cell = match ch {
                    'F' => BeliefCell::Free,
                    'O' => BeliefCell::Occupied,
                    'U' if self.ext == ExtAlphabet::Ternary => BeliefCell::Unknown,
                    _ => return Err(bad()),
                };
                b.set_ext_cell(l, g.first_ext_offset() + c as i32, cell);
            }
        }
        self.encode(&b)
    }
}

/// Convenience wrapper around [`StateCodec::encode`].
pub fn encode_state(belief: &BeliefState, scenario: &ScenarioSpec, v_max: u32) -> Result<StateKey> {
    StateCodec::new(belief.geometry(), v_max, scenario)?.encode(belief)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn standard() -> GridGeometry {
        GridGeometry::standard()
    }

    #[test]
    fn cell_numbering_is_column_major() {
        let map = CellIndexMap::new(standard()).unwrap();
        assert_eq!(map.cell(1), Some((0, 2)));
        assert_eq!(map.cell(8), Some((1, 5)));
        for c in 1..=4usize {
            let (a, b) = (map.cell(2 * c - 1).unwrap(), map.cell(2 * c).unwrap());
            assert_eq!(a.1, b.1, "C1 group ({}, {}) must be one column", 2 * c - 1, 2 * c);
            assert_ne!(a.0, b.0);
        }
        let cols: std::collections::BTreeSet<i32> = [1, 5, 2, 6].iter().map(|&i| map.cell(i).unwrap().1).collect();
        assert_eq!(cols.into_iter().collect::<Vec<_>>(), vec![2, 4]);
        for i in 1..=8 {
            let (l, o) = map.cell(i).unwrap();
            assert_eq!(map.index(l, o), Some(i));
        }
        assert_eq!(map.cell(0), None);
        assert_eq!(map.cell(9), None);
        assert!(CellIndexMap::new(GridGeometry { ext_cols: 0, ..standard() }).is_err());
    }

    #[test]
    fn standard_scenarios_on_the_evaluation_grid() {
        let g = standard();
        let c1 = ScenarioSpec::standard(ScenarioId::C1, g);
        assert_eq!(c1.query_groups, vec![vec![1, 2], vec![3, 4], vec![5, 6], vec![7, 8]]);
        let c2 = ScenarioSpec::standard(ScenarioId::C2, g);
        assert_eq!(c2.query_groups, vec![vec![1, 5, 2, 6], vec![3, 7, 4, 8]]);
        assert_eq!(feasible_query_actions(&c1).len(), 5);
        assert_eq!(feasible_query_actions(&c2).len(), 3);
        for id in [ScenarioId::LV, ScenarioId::RC, ScenarioId::FV] {
            let s = ScenarioSpec::standard(id, g);
            s.validate(g).unwrap();
            assert_eq!(feasible_query_actions(&s), vec![QueryAction::NoQuery]);
        }
    }

    #[test]
    fn invalid_scenarios() {
        let g = standard();
        let mut s = ScenarioSpec::standard(ScenarioId::C1, g);
        s.query_groups.push(vec![9]);
        assert!(s.validate(g).is_err());
        let mut lv = ScenarioSpec::standard(ScenarioId::LV, g);
        lv.query_groups.push(vec![1]);
        assert!(lv.validate(g).is_err());
        assert!("xx".parse::<ScenarioId>().is_err());
        assert_eq!("c2".parse::<ScenarioId>().unwrap(), ScenarioId::C2);
    }

    #[test]
    fn shift_and_reveal() {
        let g = standard();
        let mut w = GridWindow::empty(g);
        w.set(1, 3, Cell::Occupied);
        let mut b = BeliefState::new(g, EgoPose::default());
        b.reveal_all(&w);
        assert_eq!(shift_belief(&b, 0), b);

        // d = 1: columns [A, B, C, D] become [B, C, D, unknown].
        let s1 = shift_belief(&b, 1);
        assert_eq!(s1.ext_cell(1, 2), BeliefCell::Occupied);
        assert_eq!(s1.ext_cell(0, 4), BeliefCell::Free);
        assert_eq!(s1.ext_cell(0, 5), BeliefCell::Unknown);
        assert_eq!(s1.ext_cell(1, 5), BeliefCell::Unknown);

        let s2 = shift_belief(&b, 2);
        assert_eq!(s2.unknown_count(), 4);

        let none = apply_reveal(&s2, &[], &w);
        assert_eq!(none, s2);
        let mut w2 = GridWindow::empty(g);
        w2.set(1, 2, Cell::Occupied);
        let r = apply_reveal(&BeliefState::new(g, EgoPose::default()), &[1, 2], &w2);
        assert_eq!((r.ext_by_index(1), r.ext_by_index(2)), (BeliefCell::Free, BeliefCell::Occupied));
        assert_eq!(r.unknown_count(), 6);
    }

    #[test]
    fn shift_matches_index_oracle() {
        use rand::{Rng, SeedableRng};
        let g = standard();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let cells = [BeliefCell::Unknown, BeliefCell::Free, BeliefCell::Occupied];
        for _ in 0..1000 {
            let mut b = BeliefState::new(g, EgoPose::default());
            for l in 0..2 {
                for o in 2..=5 {
                    b.set_ext_cell(l, o, cells[rng.random_range(0..3)]);
                }
            }
            let d = rng.random_range(0..=2usize);
            let s = shift_belief(&b, d);
            for l in 0..2 {
                for o in 2..=5 {
                    let expect = if o + (d as i32) <= 5 { b.ext_cell(l, o + d as i32) } else { BeliefCell::Unknown };
                    assert_eq!(s.ext_cell(l, o), expect);
                }
            }
        }
    }

    #[test]
    fn key_rendering() {
        let g = standard();
        let c2 = ScenarioSpec::standard(ScenarioId::C2, g);
        let codec = StateCodec::new(g, 2, &c2).unwrap();
        // Velocity 2 in lane 0 with one occupied cell in the local view.
        let mut b = BeliefState::new(g, EgoPose { velocity: 2, lane: 0 });
        b.set_local_cell(0, 1, Cell::Occupied);
        let key = codec.render(codec.encode(&b).unwrap()).unwrap();
        assert_eq!(key, "2|0|FFFOF|UUUUUUUU");
        assert_eq!(codec.render(codec.parse(&key).unwrap()).unwrap(), key);

        let b0 = BeliefState::new(g, EgoPose { velocity: 0, lane: 1 });
        assert!(codec.render(codec.encode(&b0).unwrap()).unwrap().ends_with("|UUUUUUUU"));

        let lv = StateCodec::new(g, 2, &ScenarioSpec::standard(ScenarioId::LV, g)).unwrap();
        assert_eq!(lv.render(lv.encode(&b).unwrap()).unwrap(), "2|0|FFFOF");

        let fv = StateCodec::new(g, 2, &ScenarioSpec::standard(ScenarioId::FV, g)).unwrap();
        assert!(fv.encode(&b).is_err());
        let mut known = b.clone();
        known.reveal_all(&GridWindow::empty(g));
        assert_eq!(fv.render(fv.encode(&known).unwrap()).unwrap(), "2|0|FFFOF|FFFFFFFF");
        assert!(fv.parse("2|0|FFFOF|FFFFFFFU").is_err());
        assert!(codec.parse("3|0|FFFOF|UUUUUUUU").is_err());
        assert!(codec.parse("2|0|FFFO|UUUUUUUU").is_err());
    }

    #[test]
    fn codec_cardinalities() {
        let g = standard();
        let card = |id| StateCodec::new(g, 2, &ScenarioSpec::standard(id, g)).unwrap().cardinality();
        assert_eq!(card(ScenarioId::LV), 3 * 2 * 32);
        assert_eq!(card(ScenarioId::FV), 3 * 2 * 32 * 256);
        assert_eq!(card(ScenarioId::C1), 3 * 2 * 32 * 6561);
    }

    #[test]
    fn action_slots_follow_canonical_order() {
        let g = standard();
        let space = ActionSpace::new(&ScenarioSpec::standard(ScenarioId::C1, g));
        assert_eq!(space.slots(), 20);
        let mut all: Vec<JointAction> = (0..space.slots()).map(|s| space.action(s)).collect();
        let sorted = {
            let mut v = all.clone();
            v.sort();
            v
        };
        assert_eq!(all, sorted);
        for (i, a) in all.drain(..).enumerate() {
            assert_eq!(space.slot(a), i);
            assert_eq!(space.parse(&a.to_string()).unwrap(), a);
        }
        assert_eq!(space.action(4).to_string(), "acc.noquery");
        assert!(space.parse("acc.g5").is_err());
        assert!(space.parse("fly.noquery").is_err());
    }

    fn arb_belief() -> impl Strategy<Value = BeliefState> {
        (0u32..=2, 0usize..2, prop::collection::vec(0u8..2, 6), prop::collection::vec(0u8..3, 8)).prop_map(
            |(v, lane, local, ext)| {
                let g = GridGeometry::standard();
                let mut b = BeliefState::new(g, EgoPose { velocity: v, lane });
                for (i, bit) in local.into_iter().enumerate() {
                    let (l, c) = (i % 2, i / 2);
                    if bit == 1 && !(l == lane && c == 1) {
                        b.set_local_cell(l, c as i32 - 1, Cell::Occupied);
                    }
                }
                for (i, d) in ext.into_iter().enumerate() {
                    let cell = [BeliefCell::Unknown, BeliefCell::Free, BeliefCell::Occupied][d as usize];
                    b.set_ext_cell(i % 2, 2 + (i / 2) as i32, cell);
                }
                b
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn decode_inverts_encode(b in arb_belief()) {
            let g = GridGeometry::standard();
            let codec = StateCodec::new(g, 2, &ScenarioSpec::standard(ScenarioId::C1, g)).unwrap();
            let key = codec.encode(&b).unwrap();
            prop_assert_eq!(codec.decode(key).unwrap(), b.clone());
            prop_assert_eq!(codec.parse(&codec.render(key).unwrap()).unwrap(), key);
        }
    }
}
