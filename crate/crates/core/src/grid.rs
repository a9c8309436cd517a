//! Uniform periodic grids on `[-L, L)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid needs an even number of points >= 16, got {0}")]
    Points(usize),
    #[error("grid half-width must be positive and finite, got {0}")]
    HalfWidth(f64),
    #[error("grid spacing {h} is not below 1 (L = {half_width}, n = {points})")]
    Spacing { h: f64, half_width: f64, points: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    half_width: f64,
    points: usize,
}

impl GridSpec {
    pub fn new(half_width: f64, points: usize) -> Result<Self, GridError> {
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(GridError::HalfWidth(half_width));
        }
        if points < 16 || points % 2 != 0 {
            return Err(GridError::Points(points));
        }
        let h = 2.0 * half_width / points as f64;
        if h >= 1.0 {
            return Err(GridError::Spacing {
                h,
                half_width,
                points,
            });
        }
        Ok(Self { half_width, points })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.points as f64
    }

    /// `x_j = -L + j h`.
    pub fn x(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.points).map(|j| self.x(j)).collect()
    }

    /// Same domain, twice the points.
    pub fn refined(&self) -> Self {
        Self {
            half_width: self.half_width,
            points: 2 * self.points,
        }
    }

    /// Twice the domain at the same spacing.
    pub fn enlarged(&self) -> Self {
        Self {
            half_width: 2.0 * self.half_width,
            points: 2 * self.points,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_guards() {
        assert!(GridSpec::new(40.0, 1024).is_ok());
        assert_eq!(GridSpec::new(1.0, 15), Err(GridError::Points(15)));
        assert_eq!(GridSpec::new(1.0, 18), Ok(GridSpec { half_width: 1.0, points: 18 }));
        assert!(matches!(GridSpec::new(40.0, 64), Err(GridError::Spacing { .. })));
        assert!(matches!(GridSpec::new(-1.0, 64), Err(GridError::HalfWidth(_))));
    }

    #[test]
    fn nodes_are_uniform() {
        let g = GridSpec::new(4.0, 16).unwrap();
        assert_eq!(g.x(0), -4.0);
        assert_eq!(g.x(8), 0.0);
        assert_eq!(g.nodes().len(), 16);
        assert_eq!(g.refined().spacing(), 0.25);
        assert_eq!(g.enlarged().spacing(), g.spacing());
    }
}
