//! Single-rail resistive power-delivery network: one node plane per device
//! layer, vertical ties through bumps and TSV columns, C4 supply connections
//! under the bottom device layer.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{solve, CsrMatrix, SolveOptions, SolveStats, SpdOperator};
use crate::power::PowerMap;
use crate::stack::{Rect, StackConfig};

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdnParams {
    /// V.
    pub vdd: f64,
    /// Ω/sq.
    pub sheet_resistance: f64,
    /// Ω per C4 bump.
    pub c4_resistance: f64,
    /// Ω per micro-bump.
    pub ubump_resistance: f64,
    /// Ω per TSV.
    pub tsv_resistance: f64,
    /// F per node.
    pub decap: f64,
    /// H.
    pub loop_inductance: f64,
    pub nx: usize,
    pub ny: usize,
    /// Every `c4_stride`-th node in x and y carries a C4 bump.
    pub c4_stride: usize,
    /// Same for vertical columns through dies without explicit farms.
    pub tsv_stride: usize,
}

impl Default for PdnParams {
    fn default() -> Self {
        PdnParams {
            vdd: 1.0,
            sheet_resistance: 0.02,
            c4_resistance: 5e-3,
            ubump_resistance: 15e-3,
            tsv_resistance: 20e-3,
            decap: 1e-9,
            loop_inductance: 1e-12,
            nx: 24,
            ny: 12,
            c4_stride: 2,
            tsv_stride: 2,
        }
    }
}

impl PdnParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vdd", self.vdd),
            ("sheet_resistance", self.sheet_resistance),
            ("c4_resistance", self.c4_resistance),
            ("ubump_resistance", self.ubump_resistance),
            ("tsv_resistance", self.tsv_resistance),
            ("decap", self.decap),
            ("loop_inductance", self.loop_inductance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("pdn {name} must be > 0, got {v}")));
            }
        }
        if self.nx == 0 || self.ny == 0 || self.c4_stride == 0 || self.tsv_stride == 0 {
            return Err(invalid("pdn grid sizes and strides must be >= 1"));
        }
        Ok(())
    }
}

/// Node plane of one stack layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdnPlane {
    pub layer: usize,
    pub nx: usize,
    pub ny: usize,
    /// Die extent the plane covers, mm.
    pub extent: Rect,
    /// Index of the plane's first node.
    pub offset: usize,
}

impl PdnPlane {
    pub fn n(&self) -> usize {
        self.nx * self.ny
    }

    pub fn node(&self, x: usize, y: usize) -> usize {
        self.offset + y * self.nx + x
    }

    /// Footprint of local node `(x, y)`, mm.
    pub fn cell(&self, x: usize, y: usize) -> Rect {
        let dx = self.extent.width() / self.nx as f64;
        let dy = self.extent.height() / self.ny as f64;
        Rect::new(
            self.extent.x_min + x as f64 * dx,
            self.extent.y_min + y as f64 * dy,
            self.extent.x_min + (x + 1) as f64 * dx,
            self.extent.y_min + (y + 1) as f64 * dy,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resistor {
    pub a: usize,
    pub b: usize,
    pub ohms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdnGrid {
    pub vdd: f64,
    pub planes: Vec<PdnPlane>,
    pub resistors: Vec<Resistor>,
    /// `(node, Ω)` connections to the ideal supply.
    pub supplies: Vec<(usize, f64)>,
    pub decap: Vec<f64>,
    pub loop_inductance: f64,
}

impl PdnGrid {
    /// Checked constructor. Every node must reach a supply.
    pub fn new(
        vdd: f64,
        planes: Vec<PdnPlane>,
        resistors: Vec<Resistor>,
        supplies: Vec<(usize, f64)>,
        decap: Vec<f64>,
        loop_inductance: f64,
    ) -> Result<Self> {
        let grid = PdnGrid {
            vdd,
            planes,
            resistors,
            supplies,
            decap,
            loop_inductance,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn n(&self) -> usize {
        self.decap.len()
    }

    pub fn plane(&self, layer: usize) -> Option<&PdnPlane> {
        self.planes.iter().find(|p| p.layer == layer)
    }

    pub fn layers(&self) -> Vec<usize> {
        self.planes.iter().map(|p| p.layer).collect()
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        if !(self.vdd > 0.0) || !(self.loop_inductance > 0.0) {
            return Err(invalid("pdn vdd and loop inductance must be > 0"));
        }
        let mut next = 0;
        for p in &self.planes {
            if p.offset != next || p.n() == 0 {
                return Err(invalid("pdn planes must tile the node range in order"));
            }
            next += p.n();
        }
        if next != n {
            return Err(invalid(format!("planes cover {next} nodes, decap lists {n}")));
        }
        if self.decap.iter().any(|c| !(*c > 0.0)) {
            return Err(invalid("decap must be > 0 at every node"));
        }
        if self.supplies.is_empty() {
            return Err(invalid("pdn needs at least one supply connection"));
        }
        for r in &self.resistors {
            if r.a >= n || r.b >= n || r.a == r.b || !(r.ohms > 0.0 && r.ohms.is_finite()) {
                return Err(invalid(format!("bad resistor {r:?}")));
            }
        }
        for &(node, ohms) in &self.supplies {
            if node >= n || !(ohms > 0.0 && ohms.is_finite()) {
                return Err(invalid(format!("bad supply connection ({node}, {ohms})")));
            }
        }
        let orphans = self.disconnected_nodes();
        if !orphans.is_empty() {
            return Err(Error::InvalidConfiguration {
                message: format!("{} pdn nodes have no path to a supply", orphans.len()),
                nodes: orphans,
            });
        }
        Ok(())
    }

    fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.n()];
        for r in &self.resistors {
            adj[r.a].push((r.b, r.ohms));
            adj[r.b].push((r.a, r.ohms));
        }
        adj
    }

    /// Nodes without a resistive path to any supply, ascending.
    pub fn disconnected_nodes(&self) -> Vec<usize> {
        let adj = self.adjacency();
        let mut seen = vec![false; self.n()];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for &(s, _) in &self.supplies {
            if s < seen.len() && !seen[s] {
                seen[s] = true;
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        (0..self.n()).filter(|&i| !seen[i]).collect()
    }

    /// Nodal conductance matrix for drops: `G d = i`.
    pub fn conductance_matrix(&self) -> CsrMatrix<f64> {
        let mut t = Vec::with_capacity(4 * self.resistors.len() + self.supplies.len());
        for r in &self.resistors {
            let g = 1.0 / r.ohms;
            t.push((r.a, r.a, g));
            t.push((r.b, r.b, g));
            t.push((r.a, r.b, -g));
            t.push((r.b, r.a, -g));
        }
        for &(node, ohms) in &self.supplies {
            t.push((node, node, 1.0 / ohms));
        }
        CsrMatrix::from_triplets(self.n(), t)
    }

    /// Current delivered through each supply connection for given drops, A.
    pub fn supply_currents(&self, drop: &[f64]) -> Vec<f64> {
        self.supplies.iter().map(|&(n, r)| drop[n] / r).collect()
    }

    /// Resistance of the cheapest path from `node` to the supply, Ω.
    pub fn best_path_resistance(&self, node: usize) -> f64 {
        let adj = self.adjacency();
        let n = self.n();
        let mut dist = vec![f64::INFINITY; n + 1];
        let mut done = vec![false; n + 1];
        // node n is the supply
        dist[n] = 0.0;
        let supply_adj = self.supplies.clone();
        loop {
            let u = (0..=n)
                .filter(|&i| !done[i] && dist[i].is_finite())
                .min_by(|&a, &b| dist[a].total_cmp(&dist[b]));
            let Some(u) = u else { break };
            if u == node {
                return dist[u];
            }
            done[u] = true;
            let edges = if u == n { &supply_adj } else { &adj[u] };
            for &(v, r) in edges {
                if dist[u] + r < dist[v] {
                    dist[v] = dist[u] + r;
                }
            }
        }
        dist[node]
    }
}

/// Resistor grid for the device layers of `config`.
pub fn build_pdn(config: &StackConfig, params: &PdnParams) -> Result<PdnGrid> {
    params.validate()?;
    let device = config.device_layers();
    if device.is_empty() {
        return Err(invalid("stack has no device layers"));
    }
    let (nx, ny) = (params.nx, params.ny);
    let die = config.die_rect();
    let planes: Vec<PdnPlane> = device
        .iter()
        .enumerate()
        .map(|(k, &layer)| PdnPlane {
            layer,
            nx,
            ny,
            extent: die,
            offset: k * nx * ny,
        })
        .collect();

    let dx = die.width() / nx as f64;
    let dy = die.height() / ny as f64;
    let rx = params.sheet_resistance * dx / dy;
    let ry = params.sheet_resistance * dy / dx;
    let mut resistors = Vec::new();
    for p in &planes {
        for y in 0..ny {
            for x in 0..nx {
                if x + 1 < nx {
                    resistors.push(Resistor { a: p.node(x, y), b: p.node(x + 1, y), ohms: rx });
                }
                if y + 1 < ny {
                    resistors.push(Resistor { a: p.node(x, y), b: p.node(x, y + 1), ohms: ry });
                }
            }
        }
    }

    let column = params.tsv_resistance + params.ubump_resistance;
    for pair in planes.windows(2) {
        let (lower, upper) = (&pair[0], &pair[1]);
        let spec = &config.layers[lower.layer];
        if !spec.has_tsvs {
            continue;
        }
        for (x, y) in column_sites(lower, &spec.tsv_farms, params.tsv_stride) {
            resistors.push(Resistor { a: lower.node(x, y), b: upper.node(x, y), ohms: column });
        }
    }

    let bottom = &planes[0];
    let mut supplies = Vec::new();
    for y in (0..ny).step_by(params.c4_stride) {
        for x in (0..nx).step_by(params.c4_stride) {
            supplies.push((bottom.node(x, y), params.c4_resistance));
        }
    }

    let n = planes.len() * nx * ny;
    PdnGrid::new(
        params.vdd,
        planes,
        resistors,
        supplies,
        vec![params.decap; n],
        params.loop_inductance,
    )
}

/// Local node coordinates carrying vertical columns out of `plane`.
fn column_sites(
    plane: &PdnPlane,
    farms: &[crate::stack::TsvFarmSpec],
    stride: usize,
) -> Vec<(usize, usize)> {
    let mut sites = Vec::new();
    if farms.is_empty() {
        for y in (0..plane.ny).step_by(stride) {
            for x in (0..plane.nx).step_by(stride) {
                sites.push((x, y));
            }
        }
        return sites;
    }
    for farm in farms {
        let before = sites.len();
        for y in 0..plane.ny {
            for x in 0..plane.nx {
                let c = plane.cell(x, y);
                let (cx, cy) = (0.5 * (c.x_min + c.x_max), 0.5 * (c.y_min + c.y_max));
                if farm.footprint.contains(cx, cy) && !sites.contains(&(x, y)) {
                    sites.push((x, y));
                }
            }
        }
        if sites.len() == before {
            // farm smaller than a node cell: use the cell holding its center
            let f = &farm.footprint;
            let fx = 0.5 * (f.x_min + f.x_max) - plane.extent.x_min;
            let fy = 0.5 * (f.y_min + f.y_max) - plane.extent.y_min;
            let x = ((fx / plane.extent.width() * plane.nx as f64) as usize).min(plane.nx - 1);
            let y = ((fy / plane.extent.height() * plane.ny as f64) as usize).min(plane.ny - 1);
            if !sites.contains(&(x, y)) {
                sites.push((x, y));
            }
        }
    }
    sites.sort_by_key(|&(x, y)| (y, x));
    sites
}

/// Per-node current draw, A.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentMap {
    pub currents: Vec<f64>,
}

impl CurrentMap {
    pub fn zeros(pdn: &PdnGrid) -> Self {
        CurrentMap { currents: vec![0.0; pdn.n()] }
    }

    pub fn new(pdn: &PdnGrid, currents: Vec<f64>) -> Result<Self> {
        if currents.len() != pdn.n() {
            return Err(invalid(format!(
                "{} currents for {} pdn nodes",
                currents.len(),
                pdn.n()
            )));
        }
        if currents.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return Err(invalid("node currents must be finite and >= 0"));
        }
        Ok(CurrentMap { currents })
    }

    /// Uniform draw `amps` on every node of `layer`.
    pub fn layer_step(pdn: &PdnGrid, layer: usize, amps: f64) -> Result<Self> {
        let plane = pdn
            .plane(layer)
            .ok_or_else(|| invalid(format!("layer {layer} has no pdn plane")))?;
        let mut c = vec![0.0; pdn.n()];
        c[plane.offset..plane.offset + plane.n()].fill(amps);
        Self::new(pdn, c)
    }

    pub fn total(&self) -> f64 {
        self.currents.iter().sum()
    }
}

/// Tile power at `t` drawn from the rail, `P / Vdd`, spread over nodes by
/// footprint overlap.
pub fn currents_from_power(
    pdn: &PdnGrid,
    map: &PowerMap,
    config: &StackConfig,
    t: f64,
) -> Result<CurrentMap> {
    if !(t >= 0.0) {
        return Err(invalid(format!("time must be >= 0, got {t}")));
    }
    let mut c = vec![0.0; pdn.n()];
    for plane in &pdn.planes {
        let Some((rows, cols)) = map.tile_grid(plane.layer) else {
            continue;
        };
        for tile in 0..rows * cols {
            let rect = config.tile_rect(plane.layer, tile);
            // W/cm² × cm²
            let amps = map.density(plane.layer, tile, t)? * rect.area() * 1e-2 / pdn.vdd;
            if amps == 0.0 {
                continue;
            }
            for y in 0..plane.ny {
                for x in 0..plane.nx {
                    let ov = plane.cell(x, y).overlap_area(&rect);
                    if ov > 0.0 {
                        c[plane.node(x, y)] += amps * ov / rect.area();
                    }
                }
            }
        }
    }
    CurrentMap::new(pdn, c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrDrop {
    /// `Vdd − v` per node, V.
    pub drop: Vec<f64>,
    pub stats: SolveStats,
}

impl IrDrop {
    pub fn max(&self) -> f64 {
        self.drop.iter().copied().fold(0.0, f64::max)
    }

    /// `(layer, max drop)` per plane.
    pub fn layer_max(&self, pdn: &PdnGrid) -> Vec<(usize, f64)> {
        layer_max(pdn, &self.drop)
    }
}

fn layer_max(pdn: &PdnGrid, values: &[f64]) -> Vec<(usize, f64)> {
    pdn.planes
        .iter()
        .map(|p| {
            let m = values[p.offset..p.offset + p.n()]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            (p.layer, m)
        })
        .collect()
}

/// Static nodal analysis.
pub fn solve_ir_drop(pdn: &PdnGrid, currents: &CurrentMap, options: &SolveOptions) -> Result<IrDrop> {
    if currents.currents.len() != pdn.n() {
        return Err(invalid("current map does not match the pdn"));
    }
    let g = pdn.conductance_matrix();
    let mut drop = vec![0.0; pdn.n()];
    let opts = SolveOptions { dt: None, ..options.clone() };
    let stats = solve(&SpdOperator::new(&g), &currents.currents, &mut drop, &opts)?;
    Ok(IrDrop { drop, stats })
}

/// Peak transient droop per layer for a load step, V.
///
/// `droop = drop_after + max(0, ΔI)·sqrt(L/C)` per node.
pub fn worst_case_droop(
    pdn: &PdnGrid,
    before: &CurrentMap,
    after: &CurrentMap,
    options: &SolveOptions,
) -> Result<Vec<(usize, f64)>> {
    if before.currents.len() != pdn.n() {
        return Err(invalid("current map does not match the pdn"));
    }
    let drop = solve_ir_drop(pdn, after, options)?.drop;
    let droop: Vec<f64> = (0..pdn.n())
        .map(|i| {
            let step = (after.currents[i] - before.currents[i]).max(0.0);
            drop[i] + step * (pdn.loop_inductance / pdn.decap[i]).sqrt()
        })
        .collect();
    Ok(layer_max(pdn, &droop))
}

/// Extra drop on every non-aggressor layer when each aggressor node steps by
/// `step` amps, V.
pub fn coupling_report(
    pdn: &PdnGrid,
    aggressor_layer: usize,
    step: f64,
    options: &SolveOptions,
) -> Result<Vec<(usize, f64)>> {
    let plane = pdn
        .plane(aggressor_layer)
        .ok_or_else(|| invalid(format!("layer {aggressor_layer} has no pdn plane")))?;
    if !(step >= 0.0 && step.is_finite()) {
        return Err(invalid(format!("step must be finite and >= 0, got {step}")));
    }
    let mut delta = vec![0.0; pdn.n()];
    delta[plane.offset..plane.offset + plane.n()].fill(step);
    let g = pdn.conductance_matrix();
    let mut d = vec![0.0; pdn.n()];
    let opts = SolveOptions { dt: None, ..options.clone() };
    solve(&SpdOperator::new(&g), &delta, &mut d, &opts)?;
    Ok(layer_max(pdn, &d)
        .into_iter()
        .filter(|(l, _)| *l != aggressor_layer)
        .collect())
}
