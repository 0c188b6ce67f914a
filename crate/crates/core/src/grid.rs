//! Rolling ground-truth occupancy of the road segment around the ego vehicle.
//!
//! The window is `lanes` rows by `local_cols + ext_cols` columns. Columns are
//! addressed by their offset relative to the ego column: the local view spans
//! `-rear_cols ..= local_cols - rear_cols - 1` and the extended view follows
//! directly ahead of it. Cells never change once sampled; advancing the ego
//! shifts the window and samples fresh frontier columns.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Occupancy bit pattern of one column, bit `l` set when lane `l` is occupied.
pub type ColumnPattern = u64;

pub const MAX_LANES: usize = 8;
pub const MAX_WIDTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridGeometry {
    pub lanes: usize,
    /// Columns in the local view, including the ego column.
    pub local_cols: usize,
    /// How many of the local columns lie behind the ego column.
    pub rear_cols: usize,
    /// Columns in the extended view, directly ahead of the local view.
    pub ext_cols: usize,
}

impl Default for GridGeometry {
    fn default() -> Self {
        Self::standard()
    }
}

impl GridGeometry {
    /// Two lanes, local view at offsets -1..=+1, extended view at +2..=+5.
    pub const fn standard() -> Self {
        Self { lanes: 2, local_cols: 3, rear_cols: 1, ext_cols: 4 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lanes == 0 || self.lanes > MAX_LANES {
            return Err(Error::InvalidConfig(format!("lanes must be in 1..={MAX_LANES}, got {}", self.lanes)));
        }
        if self.local_cols == 0 {
            return Err(Error::InvalidConfig("local_cols must be at least 1".into()));
        }
        if self.rear_cols >= self.local_cols {
            return Err(Error::InvalidConfig("the ego column must lie inside the local view".into()));
        }
        if self.width() > MAX_WIDTH {
            return Err(Error::InvalidConfig(format!("window wider than {MAX_WIDTH} columns")));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.local_cols + self.ext_cols
    }

    /// Column index of the ego vehicle.
    pub fn ego_col(&self) -> usize {
        self.rear_cols
    }

    pub fn min_offset(&self) -> i32 {
        -(self.rear_cols as i32)
    }

    pub fn max_offset(&self) -> i32 {
        self.width() as i32 - self.rear_cols as i32 - 1
    }

    /// Offset of the first extended-view column.
    pub fn first_ext_offset(&self) -> i32 {
        (self.local_cols - self.rear_cols) as i32
    }

    pub fn col_index(&self, offset: i32) -> Option<usize> {
        let c = offset + self.rear_cols as i32;
        (c >= 0 && (c as usize) < self.width()).then_some(c as usize)
    }

    pub fn local_cells(&self) -> usize {
        self.lanes * self.local_cols
    }

    pub fn ext_cells(&self) -> usize {
        self.lanes * self.ext_cols
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Free,
    Occupied,
}

impl Cell {
    pub fn from_bit(occupied: bool) -> Self {
        if occupied {
            Cell::Occupied
        } else {
            Cell::Free
        }
    }

    pub fn is_occupied(self) -> bool {
        self == Cell::Occupied
    }
}

/// The law a fresh column is drawn from: independent Bernoulli cells,
/// optionally conditioned on the column not being fully occupied.
///
/// Exclusion only has an effect with two or more lanes; a one-lane road would
/// otherwise be forced empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnLaw {
    pub p_occupied: f64,
    pub column_exclusion: bool,
    pub lanes: usize,
}

impl ColumnLaw {
    pub fn new(p_occupied: f64, column_exclusion: bool, lanes: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&p_occupied) {
            return Err(Error::InvalidConfig(format!("p_occupied must be in [0, 1), got {p_occupied}")));
        }
        Ok(Self { p_occupied, column_exclusion, lanes })
    }

    fn full(&self) -> ColumnPattern {
        (1u64 << self.lanes) - 1
    }

    fn excludes(&self, pattern: ColumnPattern) -> bool {
        self.column_exclusion && self.lanes >= 2 && pattern == self.full()
    }

    /// Probability of a whole column pattern.
    pub fn probability(&self, pattern: ColumnPattern) -> f64 {
        if pattern > self.full() || self.excludes(pattern) {
            return 0.0;
        }
        let k = pattern.count_ones() as i32;
        let p = self.p_occupied;
        let raw = p.powi(k) * (1.0 - p).powi(self.lanes as i32 - k);
        if self.column_exclusion && self.lanes >= 2 {
            raw / (1.0 - p.powi(self.lanes as i32))
        } else {
            raw
        }
    }

    /// All patterns with nonzero probability, in ascending pattern order.
    pub fn support(&self) -> Vec<(ColumnPattern, f64)> {
        self.conditional(0, 0)
    }

    /// Distribution of the full column given that the lanes in `known_mask`
    /// have the occupancy given by `known_bits`.
    pub fn conditional(&self, known_mask: ColumnPattern, known_bits: ColumnPattern) -> Vec<(ColumnPattern, f64)> {
        let mut out: Vec<(ColumnPattern, f64)> = (0..=self.full())
            .filter(|pat| pat & known_mask == known_bits & known_mask)
            .map(|pat| (pat, self.probability(pat)))
            .filter(|&(_, pr)| pr > 0.0)
            .collect();
        let total: f64 = out.iter().map(|&(_, pr)| pr).sum();
        for entry in &mut out {
            entry.1 /= total;
        }
        out
    }
}

/// Seeded source of fresh columns.
#[derive(Debug, Clone)]
pub struct OccupancySampler {
    law: ColumnLaw,
    rng: ChaCha8Rng,
}

impl OccupancySampler {
    pub fn new(law: ColumnLaw, seed: u64) -> Self {
        Self { law, rng: rng::stream(seed, rng::WORLD_STREAM) }
    }

    pub fn law(&self) -> ColumnLaw {
        self.law
    }

    /// Draws one column. Under exclusion, fully occupied draws are redrawn.
    pub fn sample_column(&mut self) -> ColumnPattern {
        loop {
            let mut pattern = 0;
            for lane in 0..self.law.lanes {
                if self.rng.random::<f64>() < self.law.p_occupied {
                    pattern |= 1 << lane;
                }
            }
            if !self.law.excludes(pattern) {
                return pattern;
            }
        }
    }
}

/// Ground-truth occupancy around the ego vehicle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridWindow {
    geometry: GridGeometry,
    /// One bit row per lane; bit `c` is column index `c`.
    rows: Vec<u64>,
}

impl GridWindow {
    pub fn empty(geometry: GridGeometry) -> Self {
        Self { geometry, rows: vec![0; geometry.lanes] }
    }

    /// Samples every column, rear to front, and frees the ego cell.
    pub fn sample(geometry: GridGeometry, ego_lane: usize, sampler: &mut OccupancySampler) -> Self {
        let mut window = Self::empty(geometry);
        for c in 0..geometry.width() {
            window.set_column(c, sampler.sample_column());
        }
        window.set(ego_lane, 0, Cell::Free);
        window
    }

    pub fn geometry(&self) -> GridGeometry {
        self.geometry
    }

    pub fn rows(&self) -> &[u64] {
        &self.rows
    }

    pub fn get(&self, lane: usize, offset: i32) -> Cell {
        let c = self.geometry.col_index(offset).expect("offset outside the window");
        Cell::from_bit(self.rows[lane] >> c & 1 == 1)
    }

    pub fn set(&mut self, lane: usize, offset: i32, cell: Cell) {
        let c = self.geometry.col_index(offset).expect("offset outside the window");
        if cell.is_occupied() {
            self.rows[lane] |= 1 << c;
        } else {
            self.rows[lane] &= !(1 << c);
        }
    }

    pub fn column(&self, col: usize) -> ColumnPattern {
        self.rows
            .iter()
            .enumerate()
            .fold(0, |acc, (lane, row)| acc | ((row >> col & 1) << lane))
    }

    pub fn set_column(&mut self, col: usize, pattern: ColumnPattern) {
        for (lane, row) in self.rows.iter_mut().enumerate() {
            *row = (*row & !(1 << col)) | ((pattern >> lane & 1) << col);
        }
    }

    /// Shifts the window back by `d` columns and fills the `d` frontier
    /// columns from `fresh`, nearest first. Rear columns falling off are lost.
    pub fn advance_with(&mut self, d: usize, mut fresh: impl FnMut() -> ColumnPattern) {
        let width = self.geometry.width();
        let d = d.min(width);
        for row in &mut self.rows {
            *row = if d >= 64 { 0 } else { *row >> d };
        }
        for col in width - d..width {
            self.set_column(col, fresh());
        }
    }

    pub fn advance(&mut self, d: usize, sampler: &mut OccupancySampler) {
        self.advance_with(d, || sampler.sample_column());
    }
}
