//! Virtual thermal sensors: noisy quantized reads, greedy placement for
//! hotspot tracking, and max-based field reconstruction.

use std::collections::HashSet;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use crate::stack::{StackConfig, VoxelGrid};
use crate::thermal::TemperatureField;

pub const DEFAULT_NOISE_SIGMA: f64 = 0.5;
pub const DEFAULT_QUANTIZATION: f64 = 0.25;
pub const DEFAULT_SAMPLE_PERIOD: f64 = 1e-3;

/// A point inside a device layer, die coordinates in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Site {
    pub layer: usize,
    pub x_mm: f64,
    pub y_mm: f64,
}

impl Site {
    pub fn new(layer: usize, x_mm: f64, y_mm: f64) -> Self {
        Site { layer, x_mm, y_mm }
    }

    fn key(&self) -> (usize, u64, u64) {
        (self.layer, self.x_mm.to_bits(), self.y_mm.to_bits())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub location: Site,
    /// Gaussian noise, K.
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    /// Quantization step, K; 0 disables quantization.
    #[serde(default = "default_step")]
    pub quantization_step: f64,
    /// s.
    #[serde(default = "default_period")]
    pub sample_period: f64,
}

fn default_sigma() -> f64 {
    DEFAULT_NOISE_SIGMA
}

fn default_step() -> f64 {
    DEFAULT_QUANTIZATION
}

fn default_period() -> f64 {
    DEFAULT_SAMPLE_PERIOD
}

impl SensorSpec {
    pub fn at(location: Site) -> Self {
        SensorSpec {
            location,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            quantization_step: DEFAULT_QUANTIZATION,
            sample_period: DEFAULT_SAMPLE_PERIOD,
        }
    }

    /// Exact sensor: no noise, no quantization.
    pub fn ideal(location: Site) -> Self {
        SensorSpec {
            noise_sigma: 0.0,
            quantization_step: 0.0,
            ..Self::at(location)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorNetwork {
    pub sensors: Vec<SensorSpec>,
    pub candidate_sites: Vec<Site>,
    pub rng_seed: u64,
    /// Device layers the network can observe, bottom to top.
    pub layers: Vec<usize>,
}

impl SensorNetwork {
    pub fn new(config: &StackConfig, sensors: Vec<SensorSpec>, rng_seed: u64) -> Result<Self> {
        let net = SensorNetwork {
            sensors,
            candidate_sites: tile_center_sites(config),
            rng_seed,
            layers: config.device_layers(),
        };
        net.validate(config)?;
        Ok(net)
    }

    pub fn validate(&self, config: &StackConfig) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, s) in self.sensors.iter().enumerate() {
            check_site(&s.location, config)
                .map_err(|e| invalid(format!("sensor {i}: {e}")))?;
            if !(s.noise_sigma >= 0.0 && s.quantization_step >= 0.0 && s.sample_period > 0.0) {
                return Err(invalid(format!(
                    "sensor {i}: needs sigma >= 0, step >= 0, period > 0"
                )));
            }
            if !seen.insert(s.location.key()) {
                return Err(invalid(format!("sensor {i} duplicates another site")));
            }
        }
        Ok(())
    }
}

fn check_site(site: &Site, config: &StackConfig) -> Result<()> {
    let layer = config
        .layers
        .get(site.layer)
        .ok_or_else(|| invalid(format!("layer {} does not exist", site.layer)))?;
    if !layer.role.is_device() {
        return Err(invalid(format!("layer {} is not a device layer", site.layer)));
    }
    if !config.die_rect().contains(site.x_mm, site.y_mm) {
        return Err(invalid(format!(
            "({}, {}) mm lies outside the die",
            site.x_mm, site.y_mm
        )));
    }
    Ok(())
}

/// Tile centers of every device layer, bottom layer first, row-major tiles.
pub fn tile_center_sites(config: &StackConfig) -> Vec<Site> {
    let mut out = Vec::new();
    for layer in config.device_layers() {
        for tile in 0..config.layers[layer].n_tiles() {
            let r = config.tile_rect(layer, tile);
            out.push(Site::new(
                layer,
                0.5 * (r.x_min + r.x_max),
                0.5 * (r.y_min + r.y_max),
            ));
        }
    }
    out
}

/// Voxel a sensor at `site` reads: the cell containing the point, in the
/// middle sub-slab of its layer.
pub fn site_voxel(grid: &VoxelGrid, site: &Site) -> Result<usize> {
    if site.layer >= grid.n_layers() || !grid.roles[site.layer].is_device() {
        return Err(invalid(format!(
            "site layer {} is not a device layer of the grid",
            site.layer
        )));
    }
    let (w, l) = (grid.die_width_mm(), grid.die_length_mm());
    if !(site.x_mm >= 0.0 && site.x_mm <= w && site.y_mm >= 0.0 && site.y_mm <= l) {
        return Err(invalid(format!(
            "site ({}, {}) mm lies outside the {w} x {l} mm grid",
            site.x_mm, site.y_mm
        )));
    }
    let (x, y) = grid.cell_at_mm(site.x_mm, site.y_mm);
    let slabs = grid.layer_slabs(site.layer);
    let z = slabs.start + (slabs.len() - 1) / 2;
    Ok(grid.index(x, y, z))
}

/// Round to the nearest multiple of `step`, ties away from zero.
pub fn quantize(value: f64, step: f64) -> f64 {
    if step > 0.0 {
        (value / step).round() * step
    } else {
        value
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal draw keyed by `(seed, sensor, sample)`.
pub fn noise_draw(seed: u64, sensor: usize, sample: u64) -> f64 {
    let key = splitmix64(splitmix64(seed) ^ splitmix64(sensor as u64).rotate_left(17) ^ sample);
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(key ^ sample.rotate_left(41)));
    StandardNormal.sample(&mut rng)
}

/// Readings (°C) of every sensor at time `t`.
pub fn read_sensors<T: Scalar>(
    network: &SensorNetwork,
    field: &TemperatureField<T>,
    grid: &VoxelGrid,
    t: f64,
) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(invalid(format!("time must be >= 0, got {t}")));
    }
    if !field.is_on(grid) {
        return Err(invalid("temperature field belongs to a different grid"));
    }
    network
        .sensors
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let v = field.values[site_voxel(grid, &s.location)?].as_f64();
            let sample = (t / s.sample_period).floor() as u64;
            let noisy = if s.noise_sigma > 0.0 {
                v + s.noise_sigma * noise_draw(network.rng_seed, i, sample)
            } else {
                v
            };
            Ok(quantize(noisy, s.quantization_step))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LayerEstimate {
    Observed(f64),
    Unobserved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    /// `(layer, estimated max)` for every layer of the network.
    pub layers: Vec<(usize, LayerEstimate)>,
    /// Global max reading; `None` without sensors.
    pub hotspot: Option<f64>,
}

/// Per-layer and global max of the readings.
pub fn reconstruct_field(network: &SensorNetwork, readings: &[f64]) -> Result<Reconstruction> {
    if readings.len() != network.sensors.len() {
        return Err(invalid(format!(
            "{} readings for {} sensors",
            readings.len(),
            network.sensors.len()
        )));
    }
    let layers = network
        .layers
        .iter()
        .map(|&layer| {
            let est = network
                .sensors
                .iter()
                .zip(readings)
                .filter(|(s, _)| s.location.layer == layer)
                .map(|(_, &r)| r)
                .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))));
            (layer, est.map_or(LayerEstimate::Unobserved, LayerEstimate::Observed))
        })
        .collect();
    let hotspot = readings.iter().copied().fold(None, |acc: Option<f64>, r| {
        Some(acc.map_or(r, |a| a.max(r)))
    });
    Ok(Reconstruction { layers, hotspot })
}

/// Hottest device-layer voxel temperature of a field.
pub fn true_hotspot<T: Scalar>(field: &TemperatureField<T>, grid: &VoxelGrid) -> f64 {
    grid.device_layers()
        .into_iter()
        .flat_map(|l| grid.layer_voxels(l))
        .map(|i| field.values[i].as_f64())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Noiseless candidate values and true hotspots, `values[candidate][field]`.
pub struct PlacementProblem {
    pub values: Vec<Vec<f64>>,
    pub truths: Vec<f64>,
}

impl PlacementProblem {
    pub fn new<T: Scalar>(
        candidates: &[Site],
        fields: &[TemperatureField<T>],
        grid: &VoxelGrid,
    ) -> Result<Self> {
        if fields.iter().any(|f| !f.is_on(grid)) {
            return Err(invalid("training field belongs to a different grid"));
        }
        let voxels = candidates
            .iter()
            .map(|s| site_voxel(grid, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(PlacementProblem {
            values: voxels
                .iter()
                .map(|&v| fields.iter().map(|f| f.values[v].as_f64()).collect())
                .collect(),
            truths: fields.iter().map(|f| true_hotspot(f, grid)).collect(),
        })
    }

    /// Mean hotspot error of a non-empty candidate subset.
    pub fn objective(&self, chosen: &[usize]) -> f64 {
        let n = self.truths.len() as f64;
        self.truths
            .iter()
            .enumerate()
            .map(|(f, truth)| {
                let est = chosen
                    .iter()
                    .map(|&c| self.values[c][f])
                    .fold(f64::NEG_INFINITY, f64::max);
                (truth - est).abs()
            })
            .sum::<f64>()
            / n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    /// Indices into the candidate list, in selection order.
    pub chosen: Vec<usize>,
    pub sites: Vec<Site>,
    /// Mean hotspot error on the training fields after each round.
    pub objective_trace: Vec<f64>,
}

impl Placement {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap_or(&f64::INFINITY)
    }
}

/// Greedy sensor selection minimizing mean hotspot error over the training
/// fields. Each round adds the candidate with the lowest resulting objective;
/// ties go to the lowest candidate index.
pub fn place_sensors_greedy<T: Scalar>(
    candidates: &[Site],
    k: usize,
    training_fields: &[TemperatureField<T>],
    grid: &VoxelGrid,
) -> Result<Placement> {
    if k == 0 || training_fields.is_empty() {
        return Err(invalid("placement needs K >= 1 and at least one training field"));
    }
    if k > candidates.len() {
        return Err(invalid(format!(
            "K = {k} exceeds {} candidate sites",
            candidates.len()
        )));
    }
    let problem = PlacementProblem::new(candidates, training_fields, grid)?;
    let n_fields = problem.truths.len();
    let mut best = vec![f64::NEG_INFINITY; n_fields];
    let mut taken = vec![false; candidates.len()];
    let mut chosen = Vec::with_capacity(k);
    let mut trace = Vec::with_capacity(k);

    for _ in 0..k {
        let mut pick: Option<(usize, f64)> = None;
        for (c, vals) in problem.values.iter().enumerate() {
            if taken[c] {
                continue;
            }
            let obj = (0..n_fields)
                .map(|f| (problem.truths[f] - best[f].max(vals[f])).abs())
                .sum::<f64>()
                / n_fields as f64;
            if pick.map_or(true, |(_, o)| obj < o) {
                pick = Some((c, obj));
            }
        }
        let (c, obj) = pick.ok_or_else(|| Error::NumericalFailure("no candidate left".into()))?;
        taken[c] = true;
        for (b, v) in best.iter_mut().zip(&problem.values[c]) {
            *b = b.max(*v);
        }
        chosen.push(c);
        trace.push(obj);
    }
    Ok(Placement {
        sites: chosen.iter().map(|&c| candidates[c]).collect(),
        chosen,
        objective_trace: trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HotspotError {
    /// No sensors: the hotspot is not observed at all.
    Unobserved,
    Measured { mean: f64, max: f64 },
}

/// Noiseless hotspot tracking error of `placement` on `fields`, K.
pub fn hotspot_error<T: Scalar>(
    placement: &[Site],
    fields: &[TemperatureField<T>],
    grid: &VoxelGrid,
) -> Result<HotspotError> {
    if fields.is_empty() {
        return Err(invalid("hotspot error needs at least one evaluation field"));
    }
    if placement.is_empty() {
        return Ok(HotspotError::Unobserved);
    }
    let problem = PlacementProblem::new(placement, fields, grid)?;
    let all: Vec<usize> = (0..placement.len()).collect();
    let errs: Vec<f64> = (0..fields.len())
        .map(|f| {
            let est = all
                .iter()
                .map(|&c| problem.values[c][f])
                .fold(f64::NEG_INFINITY, f64::max);
            (problem.truths[f] - est).abs()
        })
        .collect();
    Ok(HotspotError::Measured {
        mean: errs.iter().sum::<f64>() / errs.len() as f64,
        max: errs.iter().copied().fold(0.0, f64::max),
    })
}

/// CSV with header `layer,x_mm,y_mm`.
pub fn write_placement_csv<W: Write>(sites: &[Site], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["layer", "x_mm", "y_mm"])?;
    for s in sites {
        w.write_record([s.layer.to_string(), s.x_mm.to_string(), s.y_mm.to_string()])?;
    }
    w.flush()
}

pub fn read_placement_csv<R: std::io::Read>(input: R) -> Result<Vec<Site>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(|e| Error::Parse(e.to_string()))?;
    if headers != vec!["layer", "x_mm", "y_mm"] {
        return Err(Error::Parse("placement header must be 'layer,x_mm,y_mm'".into()));
    }
    r.deserialize::<(usize, f64, f64)>()
        .map(|rec| {
            rec.map(|(layer, x, y)| Site::new(layer, x, y))
                .map_err(|e| Error::Parse(e.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stack::{discretize, preset_stack, LayerRole};
    use crate::thermal::FieldTime;

    fn setup() -> (StackConfig, VoxelGrid, usize) {
        let c = preset_stack(2).unwrap();
        let g = discretize(&c, 8, 4, 1).unwrap();
        let sp = c.layer_index(LayerRole::Sp).unwrap();
        (c, g, sp)
    }

    fn field_with(g: &VoxelGrid, f: impl Fn(usize) -> f64) -> TemperatureField<f64> {
        TemperatureField::new((0..g.n()).map(f).collect(), g, FieldTime::Steady).unwrap()
    }

    #[test]
    fn quantize_rounding() {
        assert!((quantize(30.12, 0.25) - 30.0).abs() < 1e-12);
        assert_eq!(quantize(30.125, 0.25), 30.25);
        assert_eq!(quantize(-0.125, 0.25), -0.25);
        assert_eq!(quantize(1.2345, 0.0), 1.2345);
    }

    #[test]
    fn noiseless_identity_and_determinism() {
        let (c, g, sp) = setup();
        let f = field_with(&g, |i| 25.0 + i as f64 * 0.013);
        let site = Site::new(sp, 3.3, 2.2);
        let net = SensorNetwork::new(&c, vec![SensorSpec::ideal(site)], 1).unwrap();
        let r = read_sensors(&net, &f, &g, 0.0).unwrap();
        assert_eq!(r[0], f.values[site_voxel(&g, &site).unwrap()]);

        let noisy = SensorNetwork::new(&c, vec![SensorSpec::at(site)], 99).unwrap();
        let a = read_sensors(&noisy, &f, &g, 0.0125).unwrap();
        let b = read_sensors(&noisy, &f, &g, 0.0125).unwrap();
        assert_eq!(a, b);
        let q = a[0] / 0.25;
        assert!((q - q.round()).abs() < 1e-9);
    }

    #[test]
    fn noise_statistics() {
        let draws: Vec<f64> = (0..4000).map(|k| noise_draw(7, 3, k)).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!(mean.abs() < 0.06, "mean {mean}");
        assert!((var - 1.0).abs() < 0.08, "var {var}");
        assert_ne!(noise_draw(7, 3, 0), noise_draw(7, 4, 0));
        assert_ne!(noise_draw(7, 3, 0), noise_draw(8, 3, 0));
    }

    #[test]
    fn invalid_sites_rejected() {
        let (c, g, sp) = setup();
        assert!(SensorNetwork::new(&c, vec![SensorSpec::at(Site::new(sp, 13.0, 1.0))], 0).is_err());
        assert!(SensorNetwork::new(&c, vec![SensorSpec::at(Site::new(0, 1.0, 1.0))], 0).is_err());
        let dup = vec![SensorSpec::at(Site::new(sp, 1.0, 1.0)); 2];
        assert!(SensorNetwork::new(&c, dup, 0).is_err());
        assert!(site_voxel(&g, &Site::new(sp, -1.0, 0.0)).is_err());
    }

    #[test]
    fn reconstruction_flags_unobserved_layers() {
        let (c, _, sp) = setup();
        let net = SensorNetwork::new(
            &c,
            vec![
                SensorSpec::ideal(Site::new(sp, 1.0, 1.0)),
                SensorSpec::ideal(Site::new(sp, 5.0, 1.0)),
            ],
            0,
        )
        .unwrap();
        let rec = reconstruct_field(&net, &[30.0, 31.5]).unwrap();
        let s0 = c.layer_index(LayerRole::S0).unwrap();
        assert_eq!(rec.layers, vec![(sp, LayerEstimate::Observed(31.5)), (s0, LayerEstimate::Unobserved)]);
        assert_eq!(rec.hotspot, Some(31.5));
        assert!(reconstruct_field(&net, &[1.0]).is_err());
    }

    #[test]
    fn every_voxel_sensed_recovers_max() {
        let c = preset_stack(2).unwrap();
        let g = discretize(&c, 6, 3, 1).unwrap();
        let f = field_with(&g, |i| 25.0 + ((i * 37) % 11) as f64);
        let mut sensors = Vec::new();
        for l in g.device_layers() {
            for y in 0..g.ny {
                for x in 0..g.nx {
                    let (cx, cy) = g.cell_center_mm(x, y);
                    sensors.push(SensorSpec::ideal(Site::new(l, cx, cy)));
                }
            }
        }
        let net = SensorNetwork::new(&c, sensors, 0).unwrap();
        let r = read_sensors(&net, &f, &g, 0.0).unwrap();
        let rec = reconstruct_field(&net, &r).unwrap();
        assert_eq!(rec.hotspot.unwrap(), true_hotspot(&f, &g));
    }

    #[test]
    fn greedy_single_hotspot_picks_nearest() {
        let (c, g, sp) = setup();
        // radially decaying field around (7.1, 1.4) mm on SP
        let (hx, hy) = (7.1, 1.4);
        let f = field_with(&g, |i| {
            let (x, y, _) = g.coords(i);
            let (cx, cy) = g.cell_center_mm(x, y);
            let on_sp = g.layer_of(i) == sp;
            25.0 + if on_sp { 10.0 / (1.0 + (cx - hx).powi(2) + (cy - hy).powi(2)) } else { 0.0 }
        });
        let cands = tile_center_sites(&c);
        let p = place_sensors_greedy(&cands, 1, &[f], &g).unwrap();
        let nearest = cands
            .iter()
            .enumerate()
            .filter(|(_, s)| s.layer == sp)
            .min_by(|a, b| {
                let d = |s: &Site| (s.x_mm - hx).powi(2) + (s.y_mm - hy).powi(2);
                d(a.1).partial_cmp(&d(b.1)).unwrap()
            })
            .unwrap()
            .0;
        assert_eq!(p.chosen, vec![nearest]);
    }

    #[test]
    fn greedy_errors_and_monotone_trace() {
        let (c, g, _) = setup();
        let fields: Vec<_> = (0..3)
            .map(|k| field_with(&g, |i| 25.0 + ((i * (k + 3) * 31) % 17) as f64))
            .collect();
        let cands = tile_center_sites(&c);
        assert!(place_sensors_greedy(&cands, 0, &fields, &g).is_err());
        assert!(place_sensors_greedy::<f64>(&cands, 1, &[], &g).is_err());
        assert!(place_sensors_greedy(&cands, cands.len() + 1, &fields, &g).is_err());
        let p = place_sensors_greedy(&cands, 6, &fields, &g).unwrap();
        assert_eq!(p.chosen.len(), 6);
        assert!(p.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn hotspot_error_cases() {
        let (c, g, sp) = setup();
        let flat = field_with(&g, |_| 40.0);
        assert_eq!(
            hotspot_error(&[], &[flat.clone()], &g).unwrap(),
            HotspotError::Unobserved
        );
        let one = [Site::new(sp, 1.0, 1.0)];
        assert_eq!(
            hotspot_error(&one, &[flat.clone()], &g).unwrap(),
            HotspotError::Measured { mean: 0.0, max: 0.0 }
        );
        let hot = field_with(&g, |i| if i == g.index(2, 1, g.layer_slabs(sp).start) { 50.0 } else { 30.0 });
        let (cx, cy) = g.cell_center_mm(2, 1);
        let e = hotspot_error(&[Site::new(sp, cx, cy)], &[hot], &g).unwrap();
        assert_eq!(e, HotspotError::Measured { mean: 0.0, max: 0.0 });
        assert!(hotspot_error::<f64>(&one, &[], &g).is_err());
        let _ = c;
    }

    #[test]
    fn placement_csv_round_trip() {
        let sites = vec![Site::new(1, 0.75, 0.75), Site::new(3, 11.25, 5.25)];
        let mut buf = Vec::new();
        write_placement_csv(&sites, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("layer,x_mm,y_mm\n"));
        assert_eq!(read_placement_csv(buf.as_slice()).unwrap(), sites);
    }
}
