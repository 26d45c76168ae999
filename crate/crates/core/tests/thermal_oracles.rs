use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stackemu_core::power::{power_density_field, total_power};
use stackemu_core::stack::{LayerSpec, Material, PACKAGE_UM};
use stackemu_core::thermal::{assemble, solve_steady, solve_transient, DiscreteSystem, TemperatureField};
use stackemu_core::*;

fn tight() -> SolveOptions {
    SolveOptions {
        tolerance: 1e-11,
        ..Default::default()
    }
}

/// Gaussian elimination with partial pivoting.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            if f == 0.0 {
                continue;
            }
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

fn random_case(rng: &mut ChaCha8Rng) -> (StackConfig, VoxelGrid, PowerMap) {
    let layers = rng.gen_range(2..=4);
    let mut c = preset_stack(layers).unwrap();
    c.heat_sink_h = rng.gen_range(500.0..20000.0);
    c.package_resistance = rng.gen_range(1e-5..1e-2);
    let (nx, ny, sub) = (rng.gen_range(2..=8), rng.gen_range(2..=6), rng.gen_range(1..=2));
    let g = discretize(&c, nx, ny, sub).unwrap();
    let mut m = PowerMap::new(&c);
    for l in c.device_layers() {
        for t in 0..c.layers[l].n_tiles() {
            let d = rng.gen_range(0.0..3.0);
            m = m.set_tile_power(l, t, TemporalProfile::constant(d)).unwrap();
        }
    }
    (c, g, m)
}

#[test]
fn iterative_matches_dense_direct() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut done = 0;
    while done < 20 {
        let (c, g, m) = random_case(&mut rng);
        if g.n() > 1000 {
            continue;
        }
        let s: DiscreteSystem<f64> = assemble(&g, &c).unwrap();
        let q = power_density_field(&m, &g, 0.0).unwrap();
        let direct = dense_solve(s.full_matrix().to_dense(), s.rhs(&q).unwrap());
        for method in [Method::Cg, Method::Sor] {
            let opts = SolveOptions { method, ..tight() };
            let f = solve_steady(&s, &q, &opts).unwrap();
            let err = f
                .values
                .iter()
                .zip(&direct)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-6, "{method:?} case {done}: max error {err}");
        }
        done += 1;
    }
}

/// Temperature rise of each node of a series chain with boundary resistances
/// at both ends, sources lumped at nodes.
fn chain_rise(r_bot: f64, links: &[f64], r_top: f64, power: &[f64]) -> Vec<f64> {
    let m = power.len();
    let below = |j: usize| r_bot + links[..j].iter().sum::<f64>();
    let above = |j: usize| r_top + links[j..].iter().sum::<f64>();
    let mut rise = vec![0.0; m];
    for (k, &p) in power.iter().enumerate() {
        let (rd, ru) = (below(k), above(k));
        let p_down = p * ru / (rd + ru);
        let p_up = p - p_down;
        for (j, r) in rise.iter_mut().enumerate() {
            *r += if j <= k { p_down * below(j) } else { p_up * above(j) };
        }
    }
    rise
}

#[test]
fn column_matches_resistor_chain() {
    let mut c = preset_stack(4).unwrap();
    c.die_width_mm = 2.0;
    c.die_length_mm = 1.0;
    for l in &mut c.layers {
        l.tile_rows = 1;
        l.tile_cols = 1;
    }
    let g = discretize(&c, 2, 2, 1).unwrap();
    let s: DiscreteSystem<f64> = assemble(&g, &c).unwrap();
    let densities = [1.0, 0.5, 2.0, 0.25];
    let mut map = PowerMap::new(&c);
    for (l, d) in c.device_layers().into_iter().zip(densities) {
        map = map.set_tile_power(l, 0, TemporalProfile::constant(d)).unwrap();
    }
    let q = power_density_field(&map, &g, 0.0).unwrap();
    let f = solve_steady(&s, &q, &tight()).unwrap();

    // one column of the laterally uniform stack
    let a = g.cell_area_m2();
    let half = |l: &LayerSpec| l.thickness_um * 1e-6 / (2.0 * l.material.k_vertical() * a);
    let links: Vec<f64> = c.layers.windows(2).map(|w| half(&w[0]) + half(&w[1])).collect();
    let r_bot = half(&c.layers[0]) + c.package_resistance / a;
    let r_top = half(c.layers.last().unwrap()) + 1.0 / (c.heat_sink_h * a);
    let power: Vec<f64> = (0..g.nz()).map(|z| q[g.index(0, 0, z)] * g.voxel_volume(g.index(0, 0, z))).collect();
    let expect = chain_rise(r_bot, &links, r_top, &power);
    for z in 0..g.nz() {
        for (x, y) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let got = f.values[g.index(x, y, z)] - c.ambient_temperature_c;
            let rel = (got - expect[z]).abs() / expect[z];
            assert!(rel < 1e-9, "layer {z}: {got} vs {}", expect[z]);
        }
    }
}

#[test]
fn boundary_flux_balances_power() {
    let c = preset_stack(4).unwrap();
    let g = discretize(&c, 64, 32, 2).unwrap();
    let s: DiscreteSystem<f64> = assemble(&g, &c).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut m = PowerMap::new(&c);
    for l in c.device_layers() {
        for t in 0..c.layers[l].n_tiles() {
            m = m
                .set_tile_power(l, t, TemporalProfile::constant(rng.gen_range(0.0..2.0)))
                .unwrap();
        }
    }
    let f = solve_steady(&s, &power_density_field(&m, &g, 0.0).unwrap(), &SolveOptions::default())
        .unwrap();
    let (top, bottom) = s.boundary_flux(&f);
    let p = total_power(&m, &c, 0.0);
    assert!(((top + bottom) - p).abs() <= 1e-3 * p, "{} vs {p}", top + bottom);
}

#[test]
fn layers_hotter_away_from_sink() {
    let c = preset_stack(4).unwrap();
    let g = discretize(&c, 32, 16, 2).unwrap();
    let s: DiscreteSystem<f64> = assemble(&g, &c).unwrap();
    let m = PowerMap::uniform(&c, 1.0);
    let f = solve_steady(&s, &power_density_field(&m, &g, 0.0).unwrap(), &tight()).unwrap();
    let stats = thermal::layer_summary(&f, &g).unwrap();
    let order: Vec<LayerRole> = stats.iter().map(|s| s.role).collect();
    assert_eq!(order, [LayerRole::Sp, LayerRole::Sn2, LayerRole::Sn1, LayerRole::S0]);
    for w in stats.windows(2) {
        assert!(w[0].max_c - w[1].max_c >= 1e-6, "{:?} vs {:?}", w[0].role, w[1].role);
    }
}

fn small_system() -> (StackConfig, VoxelGrid, DiscreteSystem<f64>, PowerMap) {
    let c = preset_stack(2).unwrap();
    let g = discretize(&c, 6, 3, 1).unwrap();
    let s = assemble(&g, &c).unwrap();
    let sp = c.layer_index(LayerRole::Sp).unwrap();
    let m = PowerMap::uniform(&c, 0.5)
        .set_tile_power(sp, 9, TemporalProfile::constant(4.0))
        .unwrap();
    (c, g, s, m)
}

#[test]
fn backward_euler_first_order() {
    let (_, g, s, m) = small_system();
    let init = TemperatureField::uniform(&g, 25.0);
    let t_end = 2e-3;
    let run = |dt: f64| {
        solve_transient(&s, &g, &init, &m, t_end, dt, &tight(), usize::MAX)
            .unwrap()
            .pop()
            .unwrap()
    };
    let fields: Vec<_> = (0..5).map(|k| run(t_end / (8 << k) as f64)).collect();
    let diff = |a: &TemperatureField<f64>, b: &TemperatureField<f64>| {
        a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    };
    for k in 0..3 {
        let ratio = diff(&fields[k], &fields[k + 1]) / diff(&fields[k + 1], &fields[k + 2]);
        assert!((1.8..=2.2).contains(&ratio), "halving {k}: ratio {ratio}");
    }
}

#[test]
fn long_transient_reaches_steady() {
    let (_, g, s, m) = small_system();
    let opts = SolveOptions { tolerance: 1e-10, ..Default::default() };
    let steady = solve_steady(&s, &power_density_field(&m, &g, 0.0).unwrap(), &opts).unwrap();
    let tau = s.max_time_constant();
    let init = TemperatureField::uniform(&g, 25.0);
    let end = solve_transient(&s, &g, &init, &m, 4000.0 * tau, 20.0 * tau, &opts, usize::MAX)
        .unwrap()
        .pop()
        .unwrap();
    let rise = steady.max() - 25.0;
    let err = end
        .values
        .iter()
        .zip(&steady.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err <= 10.0 * opts.tolerance * rise, "error {err} for rise {rise}");
}

#[test]
fn f32_solve_tracks_f64() {
    let (c, g, _, m) = small_system();
    let q = power_density_field(&m, &g, 0.0).unwrap();
    let s64: DiscreteSystem<f64> = assemble(&g, &c).unwrap();
    let s32: DiscreteSystem<f32> = assemble(&g, &c).unwrap();
    let a = solve_steady(&s64, &q, &SolveOptions::default()).unwrap();
    let opts = SolveOptions { tolerance: 1e-5, ..Default::default() };
    let b = solve_steady(&s32, &q, &opts).unwrap().to_f64();
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!((x - y).abs() < 1e-3);
    }
}

#[test]
fn package_path_uses_interface_layer() {
    let c = preset_stack(2).unwrap();
    assert_eq!(c.layers[0].thickness_um, PACKAGE_UM);
    assert_eq!(c.layers[0].material, Material::underfill());
}
