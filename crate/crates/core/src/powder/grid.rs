//! Weighted orientation grids over the full unit sphere.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use gauss_quad::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::spin::Orientation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridScheme {
    /// Golden-angle spiral, `n²` points of equal weight.
    Spiral,
    /// Gauss–Legendre in `cos θ` times `n` uniform `φ` values.
    Product,
}

impl FromStr for GridScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spiral" => Ok(GridScheme::Spiral),
            "product" => Ok(GridScheme::Product),
            other => Err(invalid(format!("unknown grid scheme '{other}'"))),
        }
    }
}

impl fmt::Display for GridScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridScheme::Spiral => "spiral",
            GridScheme::Product => "product",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrientationGrid {
    points: Vec<(Orientation, f64)>,
}

impl OrientationGrid {
    pub fn new(n: usize, scheme: GridScheme) -> Result<Self> {
        if n < 2 {
            return Err(invalid(format!("grid resolution must be >= 2, got {n}")));
        }
        let points = match scheme {
            GridScheme::Spiral => spiral(n * n),
            GridScheme::Product => product(n)?,
        };
        Ok(Self::normalized(points))
    }

    /// One orientation carrying all the weight.
    pub fn single(o: Orientation) -> Self {
        OrientationGrid {
            points: vec![(o, 1.0)],
        }
    }

    pub fn from_points(points: Vec<(Orientation, f64)>) -> Result<Self> {
        if points.is_empty() || points.iter().any(|&(_, w)| !(w > 0.0 && w.is_finite())) {
            return Err(invalid("grid weights must be positive and finite"));
        }
        Ok(Self::normalized(points))
    }

    fn normalized(mut points: Vec<(Orientation, f64)>) -> Self {
        let total: f64 = points.iter().map(|p| p.1).sum();
        for p in &mut points {
            p.1 /= total;
        }
        OrientationGrid { points }
    }

    pub fn points(&self) -> &[(Orientation, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `∫ f dΩ / 4π` approximated on the grid.
    pub fn integrate(&self, f: impl Fn(&Orientation) -> f64) -> f64 {
        self.points.iter().map(|(o, w)| w * f(o)).sum()
    }
}

pub fn make_grid(n: usize, scheme: GridScheme) -> Result<OrientationGrid> {
    OrientationGrid::new(n, scheme)
}

fn spiral(count: usize) -> Vec<(Orientation, f64)> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|k| {
            let z = 1.0 - (2 * k + 1) as f64 / count as f64;
            let phi = (k as f64 * golden).rem_euclid(TAU);
            let phi = if phi >= TAU { 0.0 } else { phi };
            (
                Orientation {
                    theta: z.clamp(-1.0, 1.0).acos(),
                    phi,
                },
                1.0,
            )
        })
        .collect()
}

fn product(n: usize) -> Result<Vec<(Orientation, f64)>> {
    let rule = GaussLegendre::new(n).map_err(|e| invalid(e.to_string()))?;
    let mut nodes = rule.into_node_weight_pairs();
    nodes.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = Vec::with_capacity(n * n);
    for (x, w) in nodes {
        let theta = x.clamp(-1.0, 1.0).acos();
        for j in 0..n {
            out.push((
                Orientation {
                    theta,
                    phi: TAU * j as f64 / n as f64,
                },
                w,
            ));
        }
    }
    Ok(out)
}
