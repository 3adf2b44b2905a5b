//! Uniform tensor grids on boxes `(0, L_1) x ... x (0, L_d)` and uniform time
//! partitions of `(0, T]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Node coordinates. The second entry is zero on 1D grids.
pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridShape", into = "GridShape")]
pub struct Grid {
    extent: Vec<f64>,
    nodes: Vec<usize>,
    spacing: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridShape {
    pub extent: Vec<f64>,
    pub nodes: Vec<usize>,
}

impl TryFrom<GridShape> for Grid {
    type Error = Error;

    fn try_from(shape: GridShape) -> Result<Self> {
        Grid::new(&shape.extent, &shape.nodes)
    }
}

impl From<Grid> for GridShape {
    fn from(grid: Grid) -> Self {
        GridShape {
            extent: grid.extent,
            nodes: grid.nodes,
        }
    }
}

impl Grid {
    pub fn new(extent: &[f64], nodes: &[usize]) -> Result<Self> {
        if extent.is_empty() || extent.len() > 2 {
            return Err(Error::param("grid.extent", "only 1D and 2D grids are supported"));
        }
        if extent.len() != nodes.len() {
            return Err(Error::Dimension {
                context: "grid axes",
                expected: extent.len(),
                got: nodes.len(),
            });
        }
        for &e in extent {
            if !(e.is_finite() && e > 0.0) {
                return Err(Error::param("grid.extent", format!("extent must be positive, got {e}")));
            }
        }
        for &n in nodes {
            if n < 3 {
                return Err(Error::param("grid.nodes", format!("need at least 3 nodes per axis, got {n}")));
            }
        }
        let spacing = extent
            .iter()
            .zip(nodes)
            .map(|(&e, &n)| e / (n - 1) as f64)
            .collect();
        Ok(Grid {
            extent: extent.to_vec(),
            nodes: nodes.to_vec(),
            spacing,
        })
    }

    pub fn new_1d(extent: f64, nodes: usize) -> Result<Self> {
        Grid::new(&[extent], &[nodes])
    }

    pub fn new_2d(extent: [f64; 2], nodes: [usize; 2]) -> Result<Self> {
        Grid::new(&extent, &nodes)
    }

    pub fn dim(&self) -> usize {
        self.extent.len()
    }

    pub fn extent(&self) -> &[f64] {
        &self.extent
    }

    pub fn nodes_per_axis(&self) -> &[usize] {
        &self.nodes
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Total node count.
    pub fn len(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `h^d` attached to every node and every evaluation point.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Lebesgue measure of the domain.
    pub fn measure(&self) -> f64 {
        self.extent.iter().product()
    }

    /// Flat index of the node `(ix, iy)`; `iy` is ignored in 1D.
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        if self.dim() == 1 {
            ix
        } else {
            ix + self.nodes[0] * iy
        }
    }

    /// Inverse of [`Grid::index`].
    pub fn multi_index(&self, i: usize) -> (usize, usize) {
        if self.dim() == 1 {
            (i, 0)
        } else {
            (i % self.nodes[0], i / self.nodes[0])
        }
    }

    pub fn coords(&self, i: usize) -> Point {
        let (ix, iy) = self.multi_index(i);
        if self.dim() == 1 {
            [ix as f64 * self.spacing[0], 0.0]
        } else {
            [ix as f64 * self.spacing[0], iy as f64 * self.spacing[1]]
        }
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        let (ix, iy) = self.multi_index(i);
        let nx = self.nodes[0];
        if ix == 0 || ix == nx - 1 {
            return true;
        }
        if self.dim() == 2 {
            let ny = self.nodes[1];
            return iy == 0 || iy == ny - 1;
        }
        false
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_boundary(i)).collect()
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_boundary(i)).collect()
    }

    /// Map from node index to its position among interior nodes.
    pub(crate) fn interior_numbering(&self) -> Vec<Option<usize>> {
        let mut next = 0;
        (0..self.len())
            .map(|i| {
                if self.is_boundary(i) {
                    None
                } else {
                    next += 1;
                    Some(next - 1)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TimeShape", into = "TimeShape")]
pub struct TimeGrid {
    final_time: f64,
    steps: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeShape {
    pub final_time: f64,
    pub steps: usize,
}

impl TryFrom<TimeShape> for TimeGrid {
    type Error = Error;

    fn try_from(shape: TimeShape) -> Result<Self> {
        TimeGrid::new(shape.final_time, shape.steps)
    }
}

impl From<TimeGrid> for TimeShape {
    fn from(tg: TimeGrid) -> Self {
        TimeShape {
            final_time: tg.final_time,
            steps: tg.steps,
        }
    }
}

impl TimeGrid {
    pub fn new(final_time: f64, steps: usize) -> Result<Self> {
        if !(final_time.is_finite() && final_time > 0.0) {
            return Err(Error::param("time.final_time", format!("must be positive, got {final_time}")));
        }
        Ok(TimeGrid { final_time, steps })
    }

    pub fn final_time(&self) -> f64 {
        self.final_time
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Step size. For `steps == 0` the grid only holds `t_0 = 0` and this
    /// returns `T`.
    pub fn dt(&self) -> f64 {
        self.final_time / self.steps.max(1) as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps && k > 0 {
            self.final_time
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// Same horizon with a different number of steps.
    pub fn with_steps(&self, steps: usize) -> TimeGrid {
        TimeGrid {
            final_time: self.final_time,
            steps,
        }
    }
}
