//! Uniform space and time grids shared by the solvers.

use crate::error::{Error, Result};

/// Uniform grid of `n_intervals + 1` nodes on `[0, length]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformGrid {
    pub length: f64,
    pub n_intervals: usize,
}

impl UniformGrid {
    pub fn new(length: f64, n_intervals: usize) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::invalid(format!("grid length must be positive, got {length}")));
        }
        if n_intervals < 2 {
            return Err(Error::invalid("grid needs at least 2 intervals"));
        }
        Ok(Self { length, n_intervals })
    }

    pub fn h(&self) -> f64 {
        self.length / self.n_intervals as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        self.length * j as f64 / self.n_intervals as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.n_intervals + 1
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_intervals).map(|j| self.x(j)).collect()
    }
}

/// `n_steps` uniform steps of size `dt` starting at `t = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, n_steps: usize) -> Result<Self> {
        if !(t_final > 0.0) || n_steps == 0 {
            return Err(Error::invalid("time grid needs T > 0 and at least one step"));
        }
        Ok(Self {
            dt: t_final / n_steps as f64,
            n_steps,
        })
    }

    pub fn t(&self, n: usize) -> f64 {
        self.dt * n as f64
    }

    pub fn t_final(&self) -> f64 {
        self.t(self.n_steps)
    }

    /// Index of the step closest to `t`.
    pub fn nearest_step(&self, t: f64) -> usize {
        ((t / self.dt).round().max(0.0) as usize).min(self.n_steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_nodes_and_spacing() {
        let g = UniformGrid::new(2.0, 4).unwrap();
        assert_eq!(g.nodes(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(g.h(), 0.5);
        assert!(UniformGrid::new(0.0, 4).is_err());
        assert!(UniformGrid::new(1.0, 1).is_err());
    }

    #[test]
    fn time_grid_lookup() {
        let t = TimeGrid::new(1.0, 1000).unwrap();
        assert_eq!(t.nearest_step(0.466), 466);
        assert_eq!(t.nearest_step(5.0), 1000);
        assert!((t.t_final() - 1.0).abs() < 1e-15);
    }
}
