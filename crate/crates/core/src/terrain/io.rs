//! File formats for transmitter rosters, coverage tables and grids.
//!
//! * transmitters: CSV `id,x,y,mast_height_m,power_kw,class,home_prefecture,language`
//! * coverage: CSV keyed by `subpref_id`
//! * grid: CSV with a `nx,ny,cell_size` header line followed by `ny` rows of
//!   `nx` heights, or a little-endian binary file (`CRGRID01`, u32 nx, u32 ny,
//!   f64 cell size, then `nx*ny` f64 heights).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{CoverageShares, ElevationGrid, GridPoint, Transmitter};
use crate::error::{param, Error, Result};

const GRID_MAGIC: &[u8; 8] = b"CRGRID01";

#[derive(Debug, Serialize, Deserialize)]
struct TransmitterRow {
    id: usize,
    x: f64,
    y: f64,
    mast_height_m: f64,
    power_kw: f64,
    class: String,
    home_prefecture: usize,
    language: usize,
}

pub fn read_transmitters<R: Read>(reader: R) -> Result<Vec<Transmitter>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: TransmitterRow = row?;
        out.push(Transmitter {
            id: row.id,
            position: GridPoint::new(row.x, row.y),
            mast_height: row.mast_height_m,
            power_kw: row.power_kw,
            radio_class: row.class.parse()?,
            home_prefecture: row.home_prefecture,
            language: row.language,
        });
    }
    Ok(out)
}

pub fn write_transmitters<W: Write>(writer: W, txs: &[Transmitter]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for t in txs {
        w.serialize(TransmitterRow {
            id: t.id,
            x: t.position.x,
            y: t.position.y,
            mast_height_m: t.mast_height,
            power_kw: t.power_kw,
            class: t.radio_class.to_string(),
            home_prefecture: t.home_prefecture,
            language: t.language,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub const COVERAGE_HEADER: [&str; 10] = [
    "subpref_id",
    "share_local_community",
    "share_any_community",
    "share_national",
    "share_private",
    "share_ethnic_match",
    "dist_community_km",
    "dist_national_km",
    "dist_private_km",
    "dist_international_km",
];

pub fn write_coverage<W: Write>(writer: W, rows: &[CoverageShares]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(COVERAGE_HEADER)?;
    let opt = |v: Option<f64>| v.map(|d| d.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.subpref_id.to_string(),
            r.share_local_community.to_string(),
            r.share_any_community.to_string(),
            r.share_national.to_string(),
            r.share_private.to_string(),
            r.share_ethnic_match.to_string(),
            opt(r.dist_community_km),
            opt(r.dist_national_km),
            opt(r.dist_private_km),
            opt(r.dist_international_km),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_coverage<R: Read>(reader: R) -> Result<Vec<CoverageShares>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != COVERAGE_HEADER {
        return param(format!("unexpected coverage header {header:?}"));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| Error::Parameter(format!("bad number '{s}': {e}")))
    };
    let opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            num(s).map(Some)
        }
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push(CoverageShares {
            subpref_id: rec[0]
                .parse()
                .map_err(|e| Error::Parameter(format!("bad id '{}': {e}", &rec[0])))?,
            share_local_community: num(&rec[1])?,
            share_any_community: num(&rec[2])?,
            share_national: num(&rec[3])?,
            share_private: num(&rec[4])?,
            share_ethnic_match: num(&rec[5])?,
            dist_community_km: opt(&rec[6])?,
            dist_national_km: opt(&rec[7])?,
            dist_private_km: opt(&rec[8])?,
            dist_international_km: opt(&rec[9])?,
        });
    }
    Ok(out)
}

pub fn write_grid_csv<W: Write>(mut writer: W, grid: &ElevationGrid) -> Result<()> {
    writeln!(writer, "{},{},{}", grid.nx(), grid.ny(), grid.cell_size())?;
    for row in grid.heights().chunks(grid.nx()) {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(writer, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_grid_csv<R: Read>(mut reader: R) -> Result<ElevationGrid> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Parameter("empty grid file".into()))?;
    let parts: Vec<&str> = header.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return param(format!("grid header must be 'nx,ny,cell_size', got '{header}'"));
    }
    let bad = |what: &str, s: &str| Error::Parameter(format!("bad {what} '{s}'"));
    let nx: usize = parts[0].parse().map_err(|_| bad("nx", parts[0]))?;
    let ny: usize = parts[1].parse().map_err(|_| bad("ny", parts[1]))?;
    let cell: f64 = parts[2].parse().map_err(|_| bad("cell_size", parts[2]))?;
    let mut heights = Vec::with_capacity(nx * ny);
    for line in lines {
        for v in line.split(',') {
            heights.push(v.trim().parse::<f64>().map_err(|_| bad("height", v))?);
        }
    }
    ElevationGrid::new(nx, ny, cell, heights)
}

pub fn write_grid_binary<W: Write>(mut writer: W, grid: &ElevationGrid) -> Result<()> {
    writer.write_all(GRID_MAGIC)?;
    writer.write_all(&(grid.nx() as u32).to_le_bytes())?;
    writer.write_all(&(grid.ny() as u32).to_le_bytes())?;
    writer.write_all(&grid.cell_size().to_le_bytes())?;
    for h in grid.heights() {
        writer.write_all(&h.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_grid_binary<R: Read>(mut reader: R) -> Result<ElevationGrid> {
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic)?;
    if &magic != GRID_MAGIC {
        return param("not a binary grid file");
    }
    let mut u = [0u8; 4];
    reader.read_exact(&mut u)?;
    let nx = u32::from_le_bytes(u) as usize;
    reader.read_exact(&mut u)?;
    let ny = u32::from_le_bytes(u) as usize;
    let mut f = [0u8; 8];
    reader.read_exact(&mut f)?;
    let cell = f64::from_le_bytes(f);
    let mut heights = Vec::with_capacity(nx * ny);
    for _ in 0..nx * ny {
        reader.read_exact(&mut f)?;
        heights.push(f64::from_le_bytes(f));
    }
    ElevationGrid::new(nx, ny, cell, heights)
}
