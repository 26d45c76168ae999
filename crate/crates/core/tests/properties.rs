use proptest::prelude::*;
use stackemu_core::pdn::{build_pdn, solve_ir_drop};
use stackemu_core::power::{power_density_field, total_power};
use stackemu_core::reliability::{em_acceleration, stress_proxy, trace_damage};
use stackemu_core::sensors::{place_sensors_greedy, reconstruct_field, read_sensors, tile_center_sites, true_hotspot};
use stackemu_core::thermal::{assemble, layer_summary, solve_steady, DiscreteSystem, TemperatureField};
use stackemu_core::tsv::{homogenize, ViaFractions};
use stackemu_core::*;

fn opts() -> SolveOptions {
    SolveOptions {
        tolerance: 1e-11,
        ..Default::default()
    }
}

fn farm_stack(n: usize, fx: f64, fy: f64, w: f64) -> StackConfig {
    let mut c = preset_stack(n).unwrap();
    let sp = c.layer_index(LayerRole::Sp).unwrap();
    c.layers[sp].tsv_farms.push(TsvFarmSpec {
        footprint: Rect::new(fx, fy, fx + w, fy + w * 0.5),
        via_diameter_um: 5.0,
        via_pitch_um: 10.0,
        fill_material: Material::tungsten(),
        liner_thickness_um: 0.5,
        liner_material: Material::oxide(),
    });
    c
}

fn map_from(c: &StackConfig, densities: &[f64]) -> PowerMap {
    let mut m = PowerMap::new(c);
    let mut k = 0;
    for l in c.device_layers() {
        for t in 0..c.layers[l].n_tiles() {
            let d = densities[k % densities.len()];
            k += 1;
            m = m.set_tile_power(l, t, TemporalProfile::constant(d)).unwrap();
        }
    }
    m
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn discretization_preserves_volume_and_capacity(
        n in 2usize..=4, nx in 2usize..40, ny in 2usize..24, sub in 1usize..4,
        fx in 0.0f64..9.0, fy in 0.0f64..4.0, w in 0.3f64..3.0,
    ) {
        let c = farm_stack(n, fx, fy, w);
        let g = discretize(&c, nx, ny, sub).unwrap();
        prop_assert!(rel_close(g.total_volume_m3(), c.total_volume_m3(), 1e-9));
        prop_assert!(rel_close(g.total_heat_capacity(), c.total_heat_capacity().unwrap(), 1e-9));
    }

    #[test]
    fn power_integral_matches_total(
        n in 2usize..=4, nx in 2usize..50, ny in 2usize..30, sub in 1usize..3,
        dens in prop::collection::vec(0.0f64..5.0, 1..16), t in 0.0f64..1.0,
    ) {
        let c = preset_stack(n).unwrap();
        let g = discretize(&c, nx, ny, sub).unwrap();
        let sp = c.layer_index(LayerRole::Sp).unwrap();
        let m = map_from(&c, &dens)
            .set_tile_power(sp, 0, TemporalProfile::Periodic { p_low: 0.1, p_high: 2.0, period: 0.1, duty: 0.3 })
            .unwrap();
        let q = power_density_field(&m, &g, t).unwrap();
        let integral: f64 = q.iter().enumerate().map(|(i, v)| v * g.voxel_volume(i)).sum();
        let total = total_power(&m, &c, t);
        prop_assert!(rel_close(integral, total, 1e-9) || total == 0.0 && integral == 0.0);
    }

    #[test]
    fn profiles_nonnegative_and_trace_holds_last(
        samples in prop::collection::vec((0.001f64..1.0, 0.0f64..10.0), 1..8),
        t in 0.0f64..20.0,
    ) {
        let mut acc = 0.0;
        let samples: Vec<(f64, f64)> = samples.into_iter().map(|(dt, p)| { acc += dt; (acc, p) }).collect();
        let last = *samples.last().unwrap();
        let trace = TemporalProfile::Trace { samples };
        trace.validate().unwrap();
        prop_assert!(trace.eval(t) >= 0.0);
        prop_assert_eq!(trace.eval(last.0 + t + 1e-9), last.1);
        let step = TemporalProfile::Step { p0: 1.0, p1: 0.0, t_switch: 0.5 };
        prop_assert!(step.eval(t) >= 0.0);
    }

    #[test]
    fn liner_thickening_never_raises_kxy(
        d in 1.0f64..8.0, gap in 0.5f64..10.0, t1 in 0.0f64..0.4, dt in 0.0f64..0.4,
        k_fill in 1.0f64..500.0, k_liner_frac in 0.001f64..1.0, k_base in 1.0f64..200.0,
    ) {
        let p = d + 2.0 * (t1 + dt) + gap;
        let k_liner = k_liner_frac * k_fill.min(k_base);
        let a = homogenize(ViaFractions::new(d, t1, p).unwrap(), k_fill, k_liner, k_base, k_base);
        let b = homogenize(ViaFractions::new(d, t1 + dt, p).unwrap(), k_fill, k_liner, k_base, k_base);
        prop_assert!(b.kxy <= a.kxy * (1.0 + 1e-12));
    }

    #[test]
    fn homogenized_within_wiener_bounds(
        d in 1.0f64..8.0, t in 0.0f64..1.0, gap in 0.2f64..10.0,
        k_fill in 1.0f64..500.0, k_liner in 0.1f64..50.0, k_base in 1.0f64..200.0, extra in 0.0f64..100.0,
    ) {
        let f = ViaFractions::new(d, t, d + 2.0 * t + gap).unwrap();
        let e = homogenize(f, k_fill, k_liner, k_base, k_base);
        let base = 1.0 - f.fill - f.liner;
        let arith = f.fill * k_fill + f.liner * k_liner + base * k_base;
        let harm = 1.0 / (f.fill / k_fill + f.liner / k_liner + base / k_base);
        for k in [e.kxy, e.kz] {
            prop_assert!(k >= harm * (1.0 - 1e-12) && k <= arith * (1.0 + 1e-12));
        }
        let hotter = homogenize(f, k_fill + extra, k_liner, k_base, k_base);
        prop_assert!(hotter.kz >= e.kz);
    }

    #[test]
    fn copper_fill_conducts_at_least_tungsten(
        d in 1.0f64..8.0, t in 0.0f64..1.0, gap in 0.2f64..10.0,
    ) {
        let f = ViaFractions::new(d, t, d + 2.0 * t + gap).unwrap();
        let (si, ox) = (Material::silicon(), Material::oxide());
        let cu = homogenize(f, Material::copper().k, ox.k, si.k, si.k);
        let w = homogenize(f, Material::tungsten().k, ox.k, si.k, si.k);
        prop_assert!(cu.kxy >= w.kxy && cu.kz >= w.kz);
    }

    #[test]
    fn af_positive_increasing(t in -100.0f64..300.0, dt in 1e-3f64..50.0) {
        let p = ReliabilityParams::default();
        let a = em_acceleration(t, &p).unwrap();
        let b = em_acceleration(t + dt, &p).unwrap();
        prop_assert!(a > 0.0 && b > a);
    }

    #[test]
    fn damage_additive_at_cycle_boundary(
        a in prop::collection::vec(30.0f64..90.0, 1..12),
        b in prop::collection::vec(30.0f64..90.0, 1..12),
        base in 20.0f64..30.0,
    ) {
        // both pieces start and end at the global minimum
        let wrap = |v: &[f64]| {
            let mut out = vec![base];
            out.extend_from_slice(v);
            out.push(base);
            out
        };
        let (x, y) = (wrap(&a), wrap(&b));
        let mut joined = x.clone();
        joined.extend_from_slice(&y[1..]);
        let p = ReliabilityParams::default();
        let whole = trace_damage(&joined, &p).unwrap();
        let parts = trace_damage(&x, &p).unwrap() + trace_damage(&y, &p).unwrap();
        prop_assert!(rel_close(whole, parts, 1e-9) || whole == parts);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn steady_energy_balance_and_maximum_principle(
        n in 2usize..=4, nx in 4usize..24, ny in 2usize..12, sub in 1usize..3,
        dens in prop::collection::vec(0.0f64..4.0, 1..10),
        h in 1000.0f64..20000.0, fx in 0.0f64..9.0,
    ) {
        let mut c = farm_stack(n, fx, 1.0, 2.0);
        c.heat_sink_h = h;
        let g = discretize(&c, nx, ny, sub).unwrap();
        let s: DiscreteSystem<f64> = assemble(&g, &c).unwrap();
        let m = map_from(&c, &dens);
        let f = solve_steady(&s, &power_density_field(&m, &g, 0.0).unwrap(), &opts()).unwrap();
        let (top, bottom) = s.boundary_flux(&f);
        let p = total_power(&m, &c, 0.0);
        prop_assert!(((top + bottom) - p).abs() <= 1e-3 * p.max(1e-12));
        prop_assert!(f.min() >= c.ambient_temperature_c - 1e-9);
    }

    #[test]
    fn temperature_rise_is_linear(
        n in 2usize..=4, a in prop::collection::vec(0.0f64..3.0, 1..8),
        b in prop::collection::vec(0.0f64..3.0, 1..8), scale in 0.1f64..5.0,
    ) {
        let c = preset_stack(n).unwrap();
        let g = discretize(&c, 12, 6, 1).unwrap();
        let s: DiscreteSystem<f64> = assemble(&g, &c).unwrap();
        let qa = power_density_field(&map_from(&c, &a), &g, 0.0).unwrap();
        let qb = power_density_field(&map_from(&c, &b), &g, 0.0).unwrap();
        let sum: Vec<f64> = qa.iter().zip(&qb).map(|(x, y)| scale * x + y).collect();
        let amb = c.ambient_temperature_c;
        let ra = solve_steady(&s, &qa, &opts()).unwrap();
        let rb = solve_steady(&s, &qb, &opts()).unwrap();
        let rs = solve_steady(&s, &sum, &opts()).unwrap();
        let peak = rs.max() - amb;
        for i in 0..g.n() {
            let expect = scale * (ra.values[i] - amb) + (rb.values[i] - amb);
            prop_assert!((rs.values[i] - amb - expect).abs() <= 1e-7 * peak.max(1e-9));
        }
    }

    #[test]
    fn uniform_power_orders_layers(n in 2usize..=4, d in 0.1f64..5.0) {
        let c = preset_stack(n).unwrap();
        let g = discretize(&c, 16, 8, 1).unwrap();
        let s: DiscreteSystem<f64> = assemble(&g, &c).unwrap();
        let m = PowerMap::uniform(&c, d);
        let f = solve_steady(&s, &power_density_field(&m, &g, 0.0).unwrap(), &opts()).unwrap();
        let stats = layer_summary(&f, &g).unwrap();
        prop_assert!(stats.windows(2).all(|w| w[0].max_c >= w[1].max_c));
    }

    #[test]
    fn greedy_monotone_and_underestimating(seed in any::<u64>(), k in 1usize..6) {
        let c = preset_stack(2).unwrap();
        let g = discretize(&c, 8, 4, 1).unwrap();
        let fields: Vec<TemperatureField<f64>> = (0..3u64)
            .map(|j| {
                let vals = (0..g.n())
                    .map(|i| 25.0 + ((seed.wrapping_mul(31).wrapping_add(j * 977 + i as u64 * 7919)) % 1000) as f64 / 100.0)
                    .collect();
                TemperatureField::new(vals, &g, FieldTime::Steady).unwrap()
            })
            .collect();
        let cands = tile_center_sites(&c);
        let small = place_sensors_greedy(&cands, k, &fields, &g).unwrap();
        let large = place_sensors_greedy(&cands, k + 1, &fields, &g).unwrap();
        prop_assert!(large.objective() <= small.objective());
        prop_assert_eq!(&large.chosen[..k], &small.chosen[..]);
        let again = place_sensors_greedy(&cands, k, &fields, &g).unwrap();
        prop_assert_eq!(&again, &small);

        let net = SensorNetwork::new(&c, small.sites.iter().map(|s| SensorSpec::ideal(*s)).collect(), 0).unwrap();
        for f in &fields {
            let r = read_sensors(&net, f, &g, 0.0).unwrap();
            let est = reconstruct_field(&net, &r).unwrap().hotspot.unwrap();
            prop_assert!(est <= true_hotspot(f, &g));
        }
    }

    #[test]
    fn pdn_superposition_and_conservation(
        n in 2usize..=4,
        a in prop::collection::vec(0.0f64..0.05, 1..9),
        b in prop::collection::vec(0.0f64..0.05, 1..9),
    ) {
        let c = preset_stack(n).unwrap();
        let pdn = build_pdn(&c, &PdnParams { nx: 8, ny: 4, ..Default::default() }).unwrap();
        let fill = |v: &[f64]| (0..pdn.n()).map(|i| v[i % v.len()]).collect::<Vec<f64>>();
        let (ia, ib) = (fill(&a), fill(&b));
        let isum: Vec<f64> = ia.iter().zip(&ib).map(|(x, y)| x + y).collect();
        let solve = |i: &Vec<f64>| solve_ir_drop(&pdn, &CurrentMap::new(&pdn, i.clone()).unwrap(), &opts()).unwrap().drop;
        let (da, db, ds) = (solve(&ia), solve(&ib), solve(&isum));
        let peak = ds.iter().copied().fold(0.0, f64::max);
        for i in 0..pdn.n() {
            prop_assert!((ds[i] - da[i] - db[i]).abs() <= 1e-8 * peak.max(1e-15));
        }
        let drawn: f64 = isum.iter().sum();
        let supplied: f64 = pdn.supply_currents(&ds).iter().sum();
        prop_assert!((supplied - drawn).abs() <= 1e-3 * drawn.max(1e-15));
    }

    #[test]
    fn stress_ignores_constant_offset(offset in -20.0f64..50.0, fx in 0.0f64..9.0) {
        let c = farm_stack(2, fx, 1.0, 2.0);
        let g = discretize(&c, 24, 12, 1).unwrap();
        let s: DiscreteSystem<f64> = assemble(&g, &c).unwrap();
        let sp = c.layer_index(LayerRole::Sp).unwrap();
        let m = PowerMap::uniform(&c, 0.3).set_tile_power(sp, 11, TemporalProfile::constant(5.0)).unwrap();
        let f = solve_steady(&s, &power_density_field(&m, &g, 0.0).unwrap(), &opts()).unwrap();
        let shifted = TemperatureField::new(f.values.iter().map(|v| v + offset).collect(), &g, FieldTime::Steady).unwrap();
        let p = ReliabilityParams::default();
        let a = stress_proxy(&f, &g, &c, &p).unwrap();
        let b = stress_proxy(&shifted, &g, &c, &p).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.index, y.index);
            prop_assert!((x.score - y.score).abs() <= 1e-9 * x.score);
        }
    }
}
