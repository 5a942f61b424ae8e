//! "ITM-lite" propagation: free-space field strength plus an optional
//! single knife-edge diffraction loss taken at the worst obstruction of the
//! straight tx→rx profile. Earth curvature and atmospheric refraction are
//! ignored.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ElevationGrid, GridPoint};
use crate::error::{param, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RadioClass {
    Community,
    National,
    Private,
    International,
}

impl RadioClass {
    pub const ALL: [RadioClass; 4] = [
        RadioClass::Community,
        RadioClass::National,
        RadioClass::Private,
        RadioClass::International,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RadioClass::Community => "community",
            RadioClass::National => "national",
            RadioClass::Private => "private",
            RadioClass::International => "international",
        }
    }
}

impl fmt::Display for RadioClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RadioClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "community" => Ok(RadioClass::Community),
            "national" => Ok(RadioClass::National),
            "private" => Ok(RadioClass::Private),
            "international" => Ok(RadioClass::International),
            other => param(format!("unknown radio class '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transmitter {
    pub id: usize,
    pub position: GridPoint,
    pub mast_height: f64,
    /// Effective radiated power, kW.
    pub power_kw: f64,
    pub radio_class: RadioClass,
    pub home_prefecture: usize,
    /// Main broadcast language.
    pub language: usize,
}

impl Transmitter {
    pub fn validate(&self, grid: &ElevationGrid) -> Result<()> {
        if !(self.mast_height.is_finite() && self.mast_height >= 0.0) {
            return param(format!(
                "transmitter {}: mast height must be >= 0, got {}",
                self.id, self.mast_height
            ));
        }
        if !(self.power_kw.is_finite() && self.power_kw > 0.0) {
            return param(format!(
                "transmitter {}: power must be positive, got {}",
                self.id, self.power_kw
            ));
        }
        if !grid.contains(&self.position) {
            return param(format!(
                "transmitter {}: position ({}, {}) outside the grid",
                self.id, self.position.x, self.position.y
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationMode {
    FreeSpace,
    FreeSpacePlusKnifeEdge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationParams {
    pub mode: PropagationMode,
    /// Field at 1 km from a 1 kW radiator, dBµV/m.
    pub reference_field: f64,
    /// Wavelength used in the Fresnel parameter, metres.
    pub wavelength: f64,
    /// Reception threshold, dBµV/m.
    pub threshold: f64,
    /// Receiving antenna height above ground, metres.
    pub rx_height: f64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        Self {
            mode: PropagationMode::FreeSpacePlusKnifeEdge,
            reference_field: 106.9,
            wavelength: 3.0,
            threshold: 43.0,
            rx_height: 10.0,
        }
    }
}

impl PropagationParams {
    pub fn validate(&self) -> Result<()> {
        if self.threshold.is_nan() || self.threshold == f64::INFINITY {
            return param("threshold must be finite or -inf");
        }
        if !(self.wavelength.is_finite() && self.wavelength > 0.0) {
            return param(format!("wavelength must be positive, got {}", self.wavelength));
        }
        if !self.reference_field.is_finite() {
            return param("reference field must be finite");
        }
        if !(self.rx_height.is_finite() && self.rx_height >= 0.0) {
            return param("receiver height must be >= 0");
        }
        Ok(())
    }

    /// Largest distance (km) at which the free-space field still reaches the
    /// threshold. Diffraction only removes signal, so nothing beyond it is
    /// covered.
    pub fn free_space_range_km(&self, power_kw: f64) -> f64 {
        if self.threshold == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        10f64.powf((self.reference_field + 10.0 * power_kw.log10() - self.threshold) / 20.0)
    }
}

/// Anything that maps a transmitter and a receiving cell to a field strength.
pub trait PropagationModel: Sync {
    fn field_strength(&self, grid: &ElevationGrid, tx: &Transmitter, cell: &GridPoint) -> f64;

    fn threshold(&self) -> f64;

    /// Distance (km) beyond which the field is certainly below threshold.
    fn max_range_km(&self, tx: &Transmitter) -> f64;
}

/// Free space with optional single knife-edge diffraction.
#[derive(Debug, Clone, PartialEq)]
pub struct ItmLite {
    pub params: PropagationParams,
}

impl ItmLite {
    pub fn new(params: PropagationParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }
}

impl PropagationModel for ItmLite {
    fn field_strength(&self, grid: &ElevationGrid, tx: &Transmitter, cell: &GridPoint) -> f64 {
        let p = &self.params;
        let mut d_m = tx.position.distance_cells(cell) * grid.cell_size();
        if d_m <= 1e-9 * grid.cell_size() {
            d_m = grid.cell_size();
        }
        let free = p.reference_field + 10.0 * tx.power_kw.log10() - 20.0 * (d_m / 1000.0).log10();
        match p.mode {
            PropagationMode::FreeSpace => free,
            PropagationMode::FreeSpacePlusKnifeEdge => free - knife_edge_loss(grid, tx, cell, p),
        }
    }

    fn threshold(&self) -> f64 {
        self.params.threshold
    }

    fn max_range_km(&self, tx: &Transmitter) -> f64 {
        self.params.free_space_range_km(tx.power_kw)
    }
}

/// Field strength (dBµV/m) at `cell` from `tx`.
///
/// A receiving cell that coincides with the transmitter is evaluated at a
/// distance of one cell size.
pub fn field_strength(
    grid: &ElevationGrid,
    tx: &Transmitter,
    cell: &GridPoint,
    params: &PropagationParams,
) -> Result<f64> {
    params.validate()?;
    tx.validate(grid)?;
    if !grid.contains(cell) {
        return param(format!("cell ({}, {}) outside the grid", cell.x, cell.y));
    }
    Ok(ItmLite {
        params: params.clone(),
    }
    .field_strength(grid, tx, cell))
}

/// Diffraction loss (dB, never negative) of the single worst obstruction.
///
/// The profile is sampled every half cell. For each interior point the
/// terrain excess `h` over the straight line between the antennas gives the
/// Fresnel parameter `v = h·sqrt(2d / (λ d1 d2))`. When no point rises above
/// the line the loss is zero; otherwise the loss at the largest `v` follows
/// the usual approximation `6.9 + 20 log10(sqrt((v-0.1)^2 + 1) + v - 0.1)`.
pub fn knife_edge_loss(
    grid: &ElevationGrid,
    tx: &Transmitter,
    cell: &GridPoint,
    params: &PropagationParams,
) -> f64 {
    let dist_cells = tx.position.distance_cells(cell);
    let steps = (dist_cells * 2.0).ceil() as usize;
    if steps < 2 {
        return 0.0;
    }
    let d = dist_cells * grid.cell_size();
    let h_tx = grid.height_at(&tx.position) + tx.mast_height;
    let h_rx = grid.height_at(cell) + params.rx_height;
    let mut worst_v = f64::NEG_INFINITY;
    let mut obstructed = false;
    for s in 1..steps {
        let f = s as f64 / steps as f64;
        let p = GridPoint::new(
            tx.position.x + (cell.x - tx.position.x) * f,
            tx.position.y + (cell.y - tx.position.y) * f,
        );
        let excess = grid.height_at(&p) - (h_tx + (h_rx - h_tx) * f);
        if excess > 0.0 {
            obstructed = true;
        }
        let d1 = f * d;
        let d2 = (1.0 - f) * d;
        let v = excess * (2.0 * d / (params.wavelength * d1 * d2)).sqrt();
        if v > worst_v {
            worst_v = v;
        }
    }
    if !obstructed {
        return 0.0;
    }
    let v = worst_v - 0.1;
    (6.9 + 20.0 * ((v * v + 1.0).sqrt() + v).log10()).max(0.0)
}
