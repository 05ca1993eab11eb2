//! Uniform periodic 1D grids, stencil gathering and trajectory storage.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Uniform periodic grid on `[origin, origin + length)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    length: f64,
    n_points: usize,
    dx: f64,
    origin: f64,
}

impl Grid {
    /// `dx = length / n_points`.
    pub fn new(length: f64, n_points: usize) -> Result<Self> {
        Self::with_origin(length, n_points, 0.0)
    }

    pub fn with_origin(length: f64, n_points: usize, origin: f64) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return invalid(format!("grid length must be positive, got {length}"));
        }
        if n_points == 0 {
            return invalid("grid needs at least one point");
        }
        if !origin.is_finite() {
            return invalid("grid origin must be finite");
        }
        Ok(Self {
            length,
            n_points,
            dx: length / n_points as f64,
            origin,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    /// Always true; kept so callers can state the assumption explicitly.
    pub fn periodic(&self) -> bool {
        true
    }

    pub fn x(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.dx
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.x(i)).collect()
    }

    /// Grid with every `factor`-th point, anchored at index 0.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.n_points % factor != 0 {
            return invalid(format!(
                "coarsening factor {factor} does not divide N_x = {}",
                self.n_points
            ));
        }
        Self::with_origin(self.length, self.n_points / factor, self.origin)
    }

    pub fn check_radius(&self, m: usize) -> Result<()> {
        if 2 * m + 1 > self.n_points {
            return invalid(format!(
                "stencil of radius {m} is wider than the grid ({} points)",
                self.n_points
            ));
        }
        Ok(())
    }
}

/// Values on the `2m+1` points `x_{i-m} .. x_{i+m}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilPatch(Vec<f64>);

impl StencilPatch {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() % 2 == 0 {
            return invalid(format!("stencil patch length must be odd, got {}", values.len()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn radius(&self) -> usize {
        self.0.len() / 2
    }

    pub fn center(&self) -> f64 {
        self.0[self.radius()]
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Periodic index `i + offset (mod n)`.
#[inline]
pub fn wrap(i: usize, offset: isize, n: usize) -> usize {
    (i as isize + offset).rem_euclid(n as isize) as usize
}

pub fn gather_stencil(field: &[f64], i: usize, m: usize) -> Result<StencilPatch> {
    let n = field.len();
    if 2 * m + 1 > n {
        return invalid(format!("stencil of radius {m} is wider than the field ({n} points)"));
    }
    if i >= n {
        return invalid(format!("index {i} out of range for field of {n} points"));
    }
    let values = (-(m as isize)..=m as isize)
        .map(|o| field[wrap(i, o, n)])
        .collect();
    Ok(StencilPatch(values))
}

/// Dense `N_t x N_x` solution samples, row `n` at `t = n * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: Grid,
    dt: f64,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn new(grid: Grid, dt: f64, data: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return invalid(format!("time step must be positive, got {dt}"));
        }
        let nx = grid.n_points();
        if data.is_empty() || data.len() % nx != 0 {
            return invalid(format!(
                "data length {} is not a positive multiple of N_x = {nx}",
                data.len()
            ));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite value in trajectory at row {}, column {}",
                k / nx,
                k % nx
            )));
        }
        Ok(Self { grid, dt, data })
    }

    pub fn from_rows(grid: Grid, dt: f64, rows: &[Vec<f64>]) -> Result<Self> {
        let nx = grid.n_points();
        if let Some(r) = rows.iter().position(|r| r.len() != nx) {
            return invalid(format!("row {r} has length {} instead of {nx}", rows[r].len()));
        }
        Self::new(grid, dt, rows.concat())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.data.len() / self.grid.n_points()
    }

    pub fn n_points(&self) -> usize {
        self.grid.n_points()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, n: usize) -> &[f64] {
        let nx = self.grid.n_points();
        &self.data[n * nx..(n + 1) * nx]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.grid.n_points())
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn t_final(&self) -> f64 {
        self.time(self.n_steps() - 1)
    }

    /// Rows `start..end` (time origin moves to `start * dt`).
    pub fn crop_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_steps() {
            return invalid(format!(
                "row window {start}..{end} outside trajectory of {} rows",
                self.n_steps()
            ));
        }
        let nx = self.grid.n_points();
        Self::new(self.grid, self.dt, self.data[start * nx..end * nx].to_vec())
    }

    /// Keeps rows with `t <= t_end` (plus round-off slack).
    pub fn crop_time(&self, t_end: f64) -> Result<Self> {
        let last = ((t_end / self.dt) + 1e-9).floor() as usize;
        self.crop_rows(0, (last + 1).min(self.n_steps()))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }
}

/// Point sub-sampling: keep every `c_space`-th column and every `c_time`-th
/// row, both anchored at index 0. Trailing rows that do not fall on the
/// coarse time lattice are dropped; see [`dropped_time_rows`].
pub fn subsample(traj: &Trajectory, c_space: usize, c_time: usize) -> Result<Trajectory> {
    if c_time == 0 {
        return invalid("time sub-sampling factor must be positive");
    }
    let coarse = traj.grid().coarsen(c_space)?;
    let n_rows = (traj.n_steps() - 1) / c_time + 1;
    let mut data = Vec::with_capacity(n_rows * coarse.n_points());
    for n in (0..traj.n_steps()).step_by(c_time) {
        data.extend(traj.row(n).iter().step_by(c_space).copied());
    }
    Trajectory::new(coarse, traj.dt() * c_time as f64, data)
}

pub fn dropped_time_rows(n_steps: usize, c_time: usize) -> usize {
    (n_steps - 1) % c_time
}

/// Periodic shift: `out[i] = field[i - s]`.
pub fn shift(field: &[f64], s: isize) -> Vec<f64> {
    let n = field.len();
    (0..n).map(|i| field[wrap(i, -s, n)]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn make_grid_spacing() {
        let g = Grid::new(2.0 * PI, 256).unwrap();
        assert_eq!(g.dx(), 2.0 * PI / 256.0);
        assert!((g.dx() - 0.02454).abs() < 1e-5);
        assert_eq!(Grid::new(64.0, 256).unwrap().dx(), 0.25);
        assert_eq!(Grid::new(1.0, 3).unwrap().dx(), 1.0 / 3.0);
    }

    #[test]
    fn make_grid_rejects_bad_input() {
        assert!(matches!(Grid::new(0.0, 10), Err(Error::InvalidArgument(_))));
        assert!(matches!(Grid::new(-1.0, 10), Err(Error::InvalidArgument(_))));
        assert!(matches!(Grid::new(1.0, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn gather_wraps_periodically() {
        let f = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(gather_stencil(&f, 0, 1).unwrap().values(), &[3.0, 0.0, 1.0]);
        assert_eq!(gather_stencil(&f, 2, 1).unwrap().values(), &[1.0, 2.0, 3.0]);
        assert_eq!(gather_stencil(&f, 3, 1).unwrap().values(), &[2.0, 3.0, 0.0]);
        let c = [2.5; 9];
        for i in 0..9 {
            assert!(gather_stencil(&c, i, 4).unwrap().values().iter().all(|&v| v == 2.5));
        }
    }

    #[test]
    fn gather_rejects_wide_stencil() {
        assert!(gather_stencil(&[1.0, 2.0, 3.0, 4.0], 0, 2).is_err());
        assert!(gather_stencil(&[1.0, 2.0, 3.0], 3, 1).is_err());
    }

    fn traj(nt: usize, nx: usize) -> Trajectory {
        let g = Grid::new(1.0, nx).unwrap();
        let data = (0..nt * nx).map(|k| k as f64).collect();
        Trajectory::new(g, 0.1, data).unwrap()
    }

    #[test]
    fn subsample_examples() {
        let t = traj(5, 256);
        let s = subsample(&t, 4, 1).unwrap();
        assert_eq!(s.n_points(), 64);
        assert_eq!(s.grid().dx(), 4.0 * t.grid().dx());

        let id = subsample(&t, 1, 1).unwrap();
        assert_eq!(id, t);

        let g = Grid::new(1.0, 4).unwrap();
        let t = Trajectory::new(g, 0.5, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = subsample(&t, 2, 1).unwrap();
        assert_eq!(s.data(), &[1.0, 3.0]);
    }

    #[test]
    fn subsample_time_and_truncation() {
        let t = traj(10, 4);
        let s = subsample(&t, 1, 3).unwrap();
        assert_eq!(s.n_steps(), 4);
        assert_eq!(s.row(1), t.row(3));
        assert!((s.dt() - 0.3).abs() < 1e-15);
        assert_eq!(dropped_time_rows(10, 3), 0);
        assert_eq!(dropped_time_rows(11, 3), 1);
        assert!(subsample(&t, 3, 1).is_err());
    }

    #[test]
    fn trajectory_rejects_nan_and_shape() {
        let g = Grid::new(1.0, 3).unwrap();
        assert!(Trajectory::new(g, 0.1, vec![0.0; 4]).is_err());
        assert!(Trajectory::new(g, 0.1, vec![0.0, f64::NAN, 0.0]).is_err());
        assert!(Trajectory::new(g, 0.0, vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn gather_mirror_symmetry(field in prop::collection::vec(-10.0f64..10.0, 5..40), i in 0usize..40, m in 0usize..3) {
            let n = field.len();
            let i = i % n;
            let mut rev = field.clone();
            rev.reverse();
            let a: Vec<f64> = gather_stencil(&field, i, m).unwrap().into_inner().into_iter().rev().collect();
            let b = gather_stencil(&rev, n - 1 - i, m).unwrap().into_inner();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn gather_center_is_value(field in prop::collection::vec(-10.0f64..10.0, 7..40), i in 0usize..40, m in 0usize..4) {
            let i = i % field.len();
            prop_assert_eq!(gather_stencil(&field, i, m).unwrap().center(), field[i]);
        }

        #[test]
        fn subsample_composes(a in 1usize..4, b in 1usize..4, ta in 1usize..3, tb in 1usize..3) {
            let nx = 72;
            let t = traj(25, nx);
            let two = subsample(&subsample(&t, a, ta).unwrap(), b, tb).unwrap();
            let one = subsample(&t, a * b, ta * tb).unwrap();
            prop_assert_eq!(two.data(), one.data());
            prop_assert!((two.dt() - one.dt()).abs() < 1e-12);
        }
    }
}
