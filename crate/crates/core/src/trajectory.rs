//! Fixed-length trajectories sampled at 1 Hz and their text batch format.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::ReconstructError;

/// `T × 3` matrix of east/north/up positions, one row per second.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    positions: DMatrix<f64>,
}

impl Trajectory {
    pub fn new(positions: DMatrix<f64>) -> Self {
        assert_eq!(positions.ncols(), 3, "trajectory must have 3 columns");
        Self { positions }
    }

    pub fn from_rows(rows: &[[f64; 3]]) -> Self {
        Self::new(DMatrix::from_fn(rows.len(), 3, |i, j| rows[i][j]))
    }

    pub fn len(&self) -> usize {
        self.positions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.nrows() == 0
    }

    pub fn positions(&self) -> &DMatrix<f64> {
        &self.positions
    }

    pub fn into_positions(self) -> DMatrix<f64> {
        self.positions
    }

    pub fn row(&self, t: usize) -> Vector3<f64> {
        Vector3::new(
            self.positions[(t, 0)],
            self.positions[(t, 1)],
            self.positions[(t, 2)],
        )
    }

    /// Stacks columns: all east samples, then north, then up.
    pub fn vectorize(&self) -> DVector<f64> {
        vectorize(self)
    }

    /// Scales the up column.
    pub fn scale_up(&self, factor: f64) -> Self {
        let mut p = self.positions.clone();
        p.column_mut(2).iter_mut().for_each(|u| *u *= factor);
        Self::new(p)
    }

    pub fn unscale_up(&self, factor: f64) -> Self {
        let mut p = self.positions.clone();
        p.column_mut(2).iter_mut().for_each(|u| *u /= factor);
        Self::new(p)
    }

    /// Reverses row order.
    pub fn reversed(&self) -> Self {
        let t = self.len();
        Self::new(DMatrix::from_fn(t, 3, |i, j| self.positions[(t - 1 - i, j)]))
    }
}

/// Column-stacked vector of a trajectory (east block, north block, up block).
pub fn vectorize(traj: &Trajectory) -> DVector<f64> {
    // nalgebra storage is column-major
    DVector::from_column_slice(traj.positions.as_slice())
}

/// Inverse of [`vectorize`].
pub fn devectorize(v: &DVector<f64>) -> Trajectory {
    assert_eq!(v.len() % 3, 0, "vector length must be a multiple of 3");
    Trajectory::new(DMatrix::from_column_slice(v.len() / 3, 3, v.as_slice()))
}

/// Batch format: a `T_com,count` header, then `T_com` lines of
/// `east,north,up` per trajectory. Numbers use the shortest representation
/// that round-trips exactly.
pub fn write_trajectories(t_com: usize, trajectories: &[Trajectory]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{t_com},{}", trajectories.len());
    for traj in trajectories {
        assert_eq!(traj.len(), t_com, "trajectory length differs from header");
        for t in 0..traj.len() {
            let r = traj.row(t);
            let _ = writeln!(s, "{},{},{}", r.x, r.y, r.z);
        }
    }
    s
}

pub fn read_trajectories(text: &str) -> Result<(usize, Vec<Trajectory>), ReconstructError> {
    let err = |msg: String| ReconstructError::TrajectoryFile(msg);
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| err("missing header".into()))?;
    let (t_com, count) = header
        .split_once(',')
        .and_then(|(a, b)| Some((a.trim().parse::<usize>().ok()?, b.trim().parse::<usize>().ok()?)))
        .ok_or_else(|| err(format!("bad header {header:?}")))?;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let mut rows = Vec::with_capacity(t_com);
        for _ in 0..t_com {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| err(format!("trajectory {k} truncated")))?;
            let v: Vec<f64> = line
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| err(format!("line {}: bad number", ln + 1)))?;
            if v.len() != 3 {
                return Err(err(format!("line {}: expected east,north,up", ln + 1)));
            }
            rows.push([v[0], v[1], v[2]]);
        }
        out.push(Trajectory::from_rows(&rows));
    }
    if let Some((ln, _)) = lines.next() {
        return Err(err(format!("line {}: trailing data", ln + 1)));
    }
    Ok((t_com, out))
}
