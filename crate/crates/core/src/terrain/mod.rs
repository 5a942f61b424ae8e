//! Terrain rasters, radio propagation and coverage aggregation.
//!
//! Grid coordinates are continuous `(x, y)` in cell units; the centre of cell
//! `(i, j)` sits at `(i as f64, j as f64)`. Heights are stored row-major with
//! `x` varying fastest.

mod coverage;
pub mod io;
mod propagation;

pub use coverage::{
    aggregate_coverage, coverage_mask, coverage_share, CoverageShares, RegionSet,
};
pub use propagation::{
    field_strength, knife_edge_loss, ItmLite, PropagationMode, PropagationModel,
    PropagationParams, RadioClass, Transmitter,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

/// Height scale of one unit of ruggedness, in metres.
pub const RUGGEDNESS_SCALE_M: f64 = 100.0;

/// A point on the grid in (fractional) cell units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub x: f64,
    pub y: f64,
}

impl GridPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance_cells(&self, other: &GridPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElevationGrid {
    nx: usize,
    ny: usize,
    cell_size: f64,
    heights: Vec<f64>,
}

impl ElevationGrid {
    pub fn new(nx: usize, ny: usize, cell_size: f64, heights: Vec<f64>) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return param(format!("grid must be at least 2x2, got {nx}x{ny}"));
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return param(format!("cell size must be positive, got {cell_size}"));
        }
        if heights.len() != nx * ny {
            return param(format!(
                "expected {} heights for a {nx}x{ny} grid, got {}",
                nx * ny,
                heights.len()
            ));
        }
        if heights.iter().any(|h| !h.is_finite()) {
            return param("grid heights must be finite");
        }
        Ok(Self {
            nx,
            ny,
            cell_size,
            heights,
        })
    }

    pub fn flat(nx: usize, ny: usize, cell_size: f64, height: f64) -> Result<Self> {
        Self::new(nx, ny, cell_size, vec![height; nx * ny])
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.heights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heights.is_empty()
    }

    /// Metres per cell side.
    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn cell_of(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    pub fn center(&self, idx: usize) -> GridPoint {
        let (i, j) = self.cell_of(idx);
        GridPoint::new(i as f64, j as f64)
    }

    pub fn height(&self, i: usize, j: usize) -> f64 {
        self.heights[self.index(i, j)]
    }

    pub fn contains(&self, p: &GridPoint) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= (self.nx - 1) as f64 && p.y <= (self.ny - 1) as f64
    }

    /// Bilinear interpolation between cell centres; clamps to the grid edge.
    pub fn height_at(&self, p: &GridPoint) -> f64 {
        let x = p.x.clamp(0.0, (self.nx - 1) as f64);
        let y = p.y.clamp(0.0, (self.ny - 1) as f64);
        let i0 = (x.floor() as usize).min(self.nx - 2);
        let j0 = (y.floor() as usize).min(self.ny - 2);
        let fx = x - i0 as f64;
        let fy = y - j0 as f64;
        let h00 = self.height(i0, j0);
        let h10 = self.height(i0 + 1, j0);
        let h01 = self.height(i0, j0 + 1);
        let h11 = self.height(i0 + 1, j0 + 1);
        let top = h00 + (h10 - h00) * fx;
        let bottom = h01 + (h11 - h01) * fx;
        top + (bottom - top) * fy
    }

    pub fn height_variance(&self) -> f64 {
        let n = self.heights.len() as f64;
        let mean = self.heights.iter().sum::<f64>() / n;
        self.heights.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / n
    }
}

/// Fractal value-noise terrain.
///
/// Octave `o` places i.i.d. uniform(-1, 1) values on a lattice with spacing
/// `max(nx, ny) / 2^(o+1)` cells and interpolates them with a smoothstep
/// kernel; octave amplitudes halve each level. The sum is scaled by
/// `ruggedness × 100 m`, so `ruggedness = 0` yields a flat grid at 0 m and
/// the height variance grows with the square of `ruggedness` for a fixed
/// seed.
pub fn synth_terrain(
    seed: u64,
    nx: usize,
    ny: usize,
    cell_size: f64,
    ruggedness: f64,
) -> Result<ElevationGrid> {
    if nx < 2 || ny < 2 {
        return param(format!("grid must be at least 2x2, got {nx}x{ny}"));
    }
    if !(ruggedness.is_finite() && ruggedness >= 0.0) {
        return param(format!("ruggedness must be >= 0, got {ruggedness}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = vec![0.0; nx * ny];
    let mut spacing = nx.max(ny) as f64 / 2.0;
    let mut amplitude = 1.0;
    while spacing >= 1.0 {
        let lx = (nx as f64 / spacing).ceil() as usize + 2;
        let ly = (ny as f64 / spacing).ceil() as usize + 2;
        let lattice: Vec<f64> = (0..lx * ly).map(|_| rng.random_range(-1.0..1.0)).collect();
        for j in 0..ny {
            let gy = j as f64 / spacing;
            let y0 = gy.floor() as usize;
            let ty = smoothstep(gy - y0 as f64);
            for i in 0..nx {
                let gx = i as f64 / spacing;
                let x0 = gx.floor() as usize;
                let tx = smoothstep(gx - x0 as f64);
                let v00 = lattice[y0 * lx + x0];
                let v10 = lattice[y0 * lx + x0 + 1];
                let v01 = lattice[(y0 + 1) * lx + x0];
                let v11 = lattice[(y0 + 1) * lx + x0 + 1];
                let top = v00 + (v10 - v00) * tx;
                let bottom = v01 + (v11 - v01) * tx;
                noise[j * nx + i] += amplitude * (top + (bottom - top) * ty);
            }
        }
        spacing /= 2.0;
        amplitude *= 0.5;
    }
    let scale = ruggedness * RUGGEDNESS_SCALE_M;
    let heights = noise.into_iter().map(|v| v * scale).collect();
    ElevationGrid::new(nx, ny, cell_size, heights)
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}
