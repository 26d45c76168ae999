//! Field and map import/export: per-voxel CSV and ASCII PGM heatmaps.

use std::io::{Read, Write};

use crate::error::{invalid, Error, Result};
use crate::pdn::PdnGrid;
use crate::scalar::Scalar;
use crate::stack::VoxelGrid;
use crate::thermal::{FieldTime, TemperatureField};

pub const FIELD_HEADER: [&str; 5] = ["layer", "z", "y", "x", "temperature_c"];
pub const DROP_HEADER: [&str; 5] = ["layer", "z", "y", "x", "drop_mv"];

/// One row per voxel in linear index order, shortest round-trip decimals.
pub fn write_field_csv<T: Scalar, W: Write>(
    field: &TemperatureField<T>,
    grid: &VoxelGrid,
    out: W,
) -> Result<()> {
    if !field.is_on(grid) {
        return Err(invalid("temperature field belongs to a different grid"));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FIELD_HEADER).map_err(io_err)?;
    for (i, v) in field.values.iter().enumerate() {
        let (x, y, z) = grid.coords(i);
        w.write_record([
            grid.layer_of(i).to_string(),
            z.to_string(),
            y.to_string(),
            x.to_string(),
            v.as_f64().to_string(),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

/// Reads a field written by [`write_field_csv`]; rows may come in any order
/// but must cover every voxel exactly once.
pub fn read_field_csv<R: Read>(input: R, grid: &VoxelGrid, time: FieldTime) -> Result<TemperatureField<f64>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(parse_err)?;
    if headers != FIELD_HEADER.to_vec() {
        return Err(Error::Parse(format!(
            "field header must be '{}'",
            FIELD_HEADER.join(",")
        )));
    }
    let mut values = vec![f64::NAN; grid.n()];
    let mut seen = vec![false; grid.n()];
    for (row, rec) in r.deserialize::<(usize, usize, usize, usize, f64)>().enumerate() {
        let (layer, z, y, x, t) = rec.map_err(parse_err)?;
        if x >= grid.nx || y >= grid.ny || z >= grid.nz() {
            return Err(Error::Parse(format!("row {}: voxel ({x},{y},{z}) outside the grid", row + 1)));
        }
        let i = grid.index(x, y, z);
        if grid.layer_of(i) != layer {
            return Err(Error::Parse(format!("row {}: slab {z} is not in layer {layer}", row + 1)));
        }
        if seen[i] {
            return Err(Error::Parse(format!("row {}: duplicate voxel", row + 1)));
        }
        seen[i] = true;
        values[i] = t;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Parse(format!("voxel {missing} missing from field CSV")));
    }
    TemperatureField::new(values, grid, time)
}

/// Per-layer max over sub-slabs, `[y][x]`.
pub fn layer_plane<T: Scalar>(field: &TemperatureField<T>, grid: &VoxelGrid, layer: usize) -> Vec<Vec<f64>> {
    let mut plane = vec![vec![f64::NEG_INFINITY; grid.nx]; grid.ny];
    for z in grid.layer_slabs(layer) {
        for (y, row) in plane.iter_mut().enumerate() {
            for (x, v) in row.iter_mut().enumerate() {
                *v = v.max(field.values[grid.index(x, y, z)].as_f64());
            }
        }
    }
    plane
}

/// ASCII PGM of `plane` (`[y][x]`), `lo..=hi` mapped to `0..=255`. The top
/// image row is the largest y. The comment line records `hi` and the unit.
pub fn write_pgm<W: Write>(plane: &[Vec<f64>], lo: f64, hi: f64, label: &str, mut out: W) -> Result<()> {
    let ny = plane.len();
    let nx = plane.first().map_or(0, Vec::len);
    if nx == 0 || plane.iter().any(|r| r.len() != nx) {
        return Err(invalid("pgm plane must be a non-empty rectangle"));
    }
    let mut s = String::with_capacity(16 + 4 * nx * ny);
    s.push_str(&format!("P2\n# max {hi} {label}\n{nx} {ny}\n255\n"));
    for row in plane.iter().rev() {
        let line: Vec<String> = row.iter().map(|&v| gray(v, lo, hi).to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    out.write_all(s.as_bytes()).map_err(io_err)
}

fn gray(v: f64, lo: f64, hi: f64) -> u8 {
    if !(hi > lo) {
        return 0;
    }
    ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Heatmap of one layer, `[ambient, layer max]` to `[0, 255]`.
pub fn write_layer_pgm<T: Scalar, W: Write>(
    field: &TemperatureField<T>,
    grid: &VoxelGrid,
    layer: usize,
    ambient_c: f64,
    out: W,
) -> Result<()> {
    if !field.is_on(grid) {
        return Err(invalid("temperature field belongs to a different grid"));
    }
    if layer >= grid.n_layers() {
        return Err(invalid(format!("layer {layer} does not exist")));
    }
    let plane = layer_plane(field, grid, layer);
    let hi = plane.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    write_pgm(&plane, ambient_c, hi, "C", out)
}

/// Drop map, one row per node; `z` is the plane's position bottom to top.
pub fn write_drop_csv<W: Write>(pdn: &PdnGrid, drop: &[f64], out: W) -> Result<()> {
    if drop.len() != pdn.n() {
        return Err(invalid("drop vector does not match the pdn"));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DROP_HEADER).map_err(io_err)?;
    for (z, p) in pdn.planes.iter().enumerate() {
        for y in 0..p.ny {
            for x in 0..p.nx {
                w.write_record([
                    p.layer.to_string(),
                    z.to_string(),
                    y.to_string(),
                    x.to_string(),
                    (drop[p.node(x, y)] * 1e3).to_string(),
                ])
                .map_err(io_err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

/// Drop heatmap of one plane in mV, `[0, plane max]` to `[0, 255]`.
pub fn write_drop_pgm<W: Write>(pdn: &PdnGrid, drop: &[f64], layer: usize, out: W) -> Result<()> {
    let p = pdn
        .plane(layer)
        .ok_or_else(|| invalid(format!("layer {layer} has no pdn plane")))?;
    if drop.len() != pdn.n() {
        return Err(invalid("drop vector does not match the pdn"));
    }
    let plane: Vec<Vec<f64>> = (0..p.ny)
        .map(|y| (0..p.nx).map(|x| drop[p.node(x, y)] * 1e3).collect())
        .collect();
    let hi = plane.iter().flatten().copied().fold(0.0, f64::max);
    write_pgm(&plane, 0.0, hi, "mV", out)
}

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::Io(e.to_string())
}

fn parse_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}
