use crate::{Error, Result};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Cartesian undersampling pattern over phase-encode columns. Rows are
/// always fully sampled.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMask {
    rows: usize,
    cols: usize,
    pattern: Vec<bool>,
    acceleration: f64,
    acs_lines: usize,
}

impl SamplingMask {
    /// Builds a mask from an explicit row-major pattern.
    pub fn from_pattern(
        rows: usize,
        cols: usize,
        pattern: Vec<bool>,
        acceleration: f64,
        acs_lines: usize,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::dim("mask dimensions must be positive"));
        }
        if pattern.len() != rows * cols {
            return Err(Error::dim(format!(
                "mask {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                pattern.len()
            )));
        }
        if !pattern.iter().any(|&b| b) {
            return Err(Error::invalid("mask samples no k-space location"));
        }
        if !(acceleration >= 1.0) {
            return Err(Error::invalid(format!("acceleration {acceleration} < 1")));
        }
        Ok(Self {
            rows,
            cols,
            pattern,
            acceleration,
            acs_lines,
        })
    }

    /// Every location sampled.
    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            pattern: vec![true; rows * cols],
            acceleration: 1.0,
            acs_lines: cols,
        }
    }

    fn from_columns(rows: usize, cols: usize, sampled: &[bool], r: f64, acs: usize) -> Self {
        let mut pattern = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            pattern.extend_from_slice(sampled);
        }
        Self {
            rows,
            cols,
            pattern,
            acceleration: r,
            acs_lines: acs,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn acceleration(&self) -> f64 {
        self.acceleration
    }

    pub fn acs_lines(&self) -> usize {
        self.acs_lines
    }

    pub fn pattern(&self) -> &[bool] {
        &self.pattern
    }

    pub fn is_sampled(&self, row: usize, col: usize) -> bool {
        self.pattern[row * self.cols + col]
    }

    /// Column indices sampled in row 0.
    pub fn sampled_columns(&self) -> Vec<usize> {
        (0..self.cols).filter(|&c| self.pattern[c]).collect()
    }

    pub fn sampled_count(&self) -> usize {
        self.pattern.iter().filter(|&&b| b).count()
    }

    /// `{0.0, 1.0}` view used by the KTN1 writer.
    pub fn to_f32(&self) -> Vec<f32> {
        self.pattern.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

/// First ACS column. Any odd leftover goes to the right-hand gap.
fn acs_start(cols: usize, acs: usize) -> usize {
    (cols - acs) / 2
}

/// Columns `0, R, 2R, ...` plus `acs` centered columns.
pub fn make_equispaced_mask(rows: usize, cols: usize, r: usize, acs: usize) -> Result<SamplingMask> {
    if r < 1 {
        return Err(Error::invalid("acceleration R must be >= 1"));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::dim("mask dimensions must be positive"));
    }
    if acs > cols {
        return Err(Error::invalid(format!("acs={acs} exceeds cols={cols}")));
    }
    let mut sampled = vec![false; cols];
    for c in (0..cols).step_by(r) {
        sampled[c] = true;
    }
    let start = acs_start(cols, acs);
    for s in &mut sampled[start..start + acs] {
        *s = true;
    }
    Ok(SamplingMask::from_columns(rows, cols, &sampled, r as f64, acs))
}

/// ACS block plus uniformly random columns (without replacement) so the total
/// equals `round(cols / R)`.
pub fn make_random_mask(rows: usize, cols: usize, r: f64, acs: usize, seed: u64) -> Result<SamplingMask> {
    if !(r >= 1.0) {
        return Err(Error::invalid("acceleration R must be >= 1"));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::dim("mask dimensions must be positive"));
    }
    if acs > cols {
        return Err(Error::invalid(format!("acs={acs} exceeds cols={cols}")));
    }
    let budget = ((cols as f64 / r).round() as usize).clamp(1, cols);
    if budget < acs {
        return Err(Error::invalid(format!(
            "infeasible budget: cols/R = {budget} columns cannot hold {acs} ACS lines"
        )));
    }
    let mut sampled = vec![false; cols];
    let start = acs_start(cols, acs);
    for s in &mut sampled[start..start + acs] {
        *s = true;
    }
    let outside: Vec<usize> = (0..cols).filter(|&c| !sampled[c]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in sample(&mut rng, outside.len(), budget - acs) {
        sampled[outside[i]] = true;
    }
    Ok(SamplingMask::from_columns(rows, cols, &sampled, r, acs))
}
