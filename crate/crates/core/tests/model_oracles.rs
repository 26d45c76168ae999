use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stackemu_core::pdn::{build_pdn, coupling_report, solve_ir_drop, worst_case_droop, Resistor};
use stackemu_core::pdn::PdnPlane;
use stackemu_core::power::power_density_field;
use stackemu_core::reliability::{
    cycling_damage, em_acceleration, rainflow, reliability_report, reversals, Cycle,
};
use stackemu_core::sensors::{place_sensors_greedy, read_sensors, tile_center_sites, true_hotspot};
use stackemu_core::thermal::{assemble, solve_steady, DiscreteSystem, TemperatureField};
use stackemu_core::*;

fn opts() -> SolveOptions {
    SolveOptions {
        tolerance: 1e-12,
        ..Default::default()
    }
}

fn random_fields(
    c: &StackConfig,
    g: &VoxelGrid,
    rng: &mut ChaCha8Rng,
    count: usize,
) -> Vec<TemperatureField<f64>> {
    let s: DiscreteSystem<f64> = assemble(g, c).unwrap();
    (0..count)
        .map(|_| {
            let mut m = PowerMap::uniform(c, 0.2);
            for l in c.device_layers() {
                for _ in 0..3 {
                    let t = rng.gen_range(0..c.layers[l].n_tiles());
                    let d = rng.gen_range(0.5..6.0);
                    m = m.set_tile_power(l, t, TemporalProfile::constant(d)).unwrap();
                }
            }
            solve_steady(&s, &power_density_field(&m, g, 0.0).unwrap(), &opts()).unwrap()
        })
        .collect()
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if n < k {
        return vec![];
    }
    let mut out = subsets(n - 1, k);
    for mut s in subsets(n - 1, k - 1) {
        s.push(n - 1);
        out.push(s);
    }
    out
}

#[test]
fn greedy_close_to_exhaustive() {
    let c = preset_stack(2).unwrap();
    let g = discretize(&c, 16, 8, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let all = tile_center_sites(&c);
    for _ in 0..10 {
        let fields = random_fields(&c, &g, &mut rng, 6);
        let mut pool = all.clone();
        let mut cands = Vec::new();
        for _ in 0..12 {
            cands.push(pool.swap_remove(rng.gen_range(0..pool.len())));
        }
        let net_all = SensorNetwork {
            sensors: cands.iter().map(|s| SensorSpec::ideal(*s)).collect(),
            candidate_sites: cands.clone(),
            rng_seed: 0,
            layers: c.device_layers(),
        };
        let readings: Vec<Vec<f64>> = fields
            .iter()
            .map(|f| read_sensors(&net_all, f, &g, 0.0).unwrap())
            .collect();
        let truth: Vec<f64> = fields.iter().map(|f| true_hotspot(f, &g)).collect();
        let objective = |set: &[usize]| {
            readings
                .iter()
                .zip(&truth)
                .map(|(r, t)| t - set.iter().map(|&i| r[i]).fold(f64::MIN, f64::max))
                .sum::<f64>()
                / fields.len() as f64
        };
        for k in 1..=3 {
            let best = subsets(12, k)
                .iter()
                .map(|s| objective(s))
                .fold(f64::INFINITY, f64::min);
            let greedy = place_sensors_greedy(&cands, k, &fields, &g).unwrap();
            let got = objective(&greedy.chosen);
            assert!((got - greedy.objective()).abs() < 1e-9);
            assert!(got <= 1.2 * best + 1e-12, "K={k}: greedy {got} vs optimum {best}");
        }
    }
}

#[test]
fn arrhenius_matches_reference_values() {
    let p = ReliabilityParams::default();
    let cases = [
        (125.0, 0.7, 105.0, 2.9419035558725977),
        (25.0, 0.7, 105.0, 0.00313885527023475),
        (80.0, 0.9, 85.0, 0.6617469635905495),
    ];
    for (t, ea, tref, expect) in cases {
        let q = ReliabilityParams {
            activation_energy: ea,
            reference_temperature_c: tref,
            ..p.clone()
        };
        let af = em_acceleration(t, &q).unwrap();
        assert!((af - expect).abs() <= 1e-9 * expect, "{t} °C: {af} vs {expect}");
    }
}

/// Repeatedly removes the smallest interior range that is bounded by larger
/// neighbours on both sides; leftovers count as half cycles.
fn brute_rainflow(trace: &[f64]) -> Vec<Cycle> {
    let mut s = reversals(trace);
    let mut out = Vec::new();
    'outer: loop {
        for i in 1..s.len().saturating_sub(2) {
            let r = (s[i + 1] - s[i]).abs();
            if r <= (s[i] - s[i - 1]).abs() && r <= (s[i + 2] - s[i + 1]).abs() {
                out.push(Cycle { range: r, weight: 1.0 });
                s.drain(i..i + 2);
                s = reversals(&s);
                continue 'outer;
            }
        }
        break;
    }
    for w in s.windows(2) {
        out.push(Cycle { range: (w[1] - w[0]).abs(), weight: 0.5 });
    }
    out
}

fn sorted(mut c: Vec<Cycle>) -> Vec<(f64, f64)> {
    c.sort_by(|a, b| a.range.total_cmp(&b.range).then(a.weight.total_cmp(&b.weight)));
    c.into_iter().map(|c| (c.range, c.weight)).collect()
}

#[test]
fn rainflow_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in 0..50 {
        let n = rng.gen_range(2..40);
        let trace: Vec<f64> = (0..n).map(|_| rng.gen_range(20.0..90.0)).collect();
        assert_eq!(sorted(rainflow(&trace)), sorted(brute_rainflow(&trace)), "case {case}");
    }
}

#[test]
fn damage_matches_direct_sum() {
    let p = ReliabilityParams::default();
    let trace = [30.0, 55.0, 40.0, 48.0, 25.0, 60.0];
    let direct: f64 = brute_rainflow(&trace)
        .iter()
        .map(|c| c.weight * (c.range / 20.0).powf(2.0))
        .sum();
    let got = cycling_damage(&[trace.to_vec()], &p).unwrap()[0];
    assert!((got - direct).abs() <= 1e-9 * direct);
}

#[test]
fn hottest_layer_has_shortest_life() {
    let c = preset_stack(4).unwrap();
    let g = discretize(&c, 24, 12, 1).unwrap();
    let s: DiscreteSystem<f64> = assemble(&g, &c).unwrap();
    let m = PowerMap::uniform(&c, 1.0);
    let f = solve_steady(&s, &power_density_field(&m, &g, 0.0).unwrap(), &opts()).unwrap();
    let rep = reliability_report(&f, &g, &c, None, &ReliabilityParams::default()).unwrap();
    assert_eq!(Some(rep.min_mttf_layer), c.layer_index(LayerRole::Sp));
}

#[test]
fn two_by_two_coupling_matches_hand_analysis() {
    let c = preset_stack(2).unwrap();
    let p = PdnParams { nx: 2, ny: 1, c4_stride: 1, tsv_stride: 1, ..Default::default() };
    let pdn = build_pdn(&c, &p).unwrap();
    let sp = c.layer_index(LayerRole::Sp).unwrap();
    let s0 = c.layer_index(LayerRole::S0).unwrap();
    let a0 = pdn.plane(sp).unwrap().node(0, 0);
    let b0 = pdn.plane(s0).unwrap().node(0, 0);
    let amps = 0.3;
    let mut cur = vec![0.0; pdn.n()];
    cur[a0] = amps;
    let after = CurrentMap::new(&pdn, cur).unwrap();

    let r = p.sheet_resistance * 6.0 / 6.0;
    let v = p.tsv_resistance + p.ubump_resistance;
    let c4 = p.c4_resistance;
    let r_lat = 1.0 / (1.0 / r + 1.0 / (r + 2.0 * v));
    let r_a0 = 1.0 / (1.0 / c4 + 1.0 / (r_lat + c4));
    let d_a0 = amps * r_a0;
    let d_a1 = d_a0 / (r_lat + c4) * c4;
    let i_path = (d_a0 - d_a1) / (r + 2.0 * v);
    let d_b0 = d_a0 - i_path * v;

    let drop = solve_ir_drop(&pdn, &after, &opts()).unwrap().drop;
    assert!((drop[a0] - d_a0).abs() <= 1e-9 * d_a0);
    assert!((drop[b0] - d_b0).abs() <= 1e-9 * d_b0);
    let droop = worst_case_droop(&pdn, &CurrentMap::zeros(&pdn), &after, &opts()).unwrap();
    let victim = droop.iter().find(|(l, _)| *l == s0).unwrap().1;
    assert!(victim > 0.0);
    assert!((victim - d_b0).abs() <= 1e-9 * d_b0);
}

#[test]
fn ladder_victims_farther_see_less() {
    let c = preset_stack(4).unwrap();
    let p = PdnParams { nx: 1, ny: 1, ..Default::default() };
    let pdn = build_pdn(&c, &p).unwrap();
    let top = *pdn.layers().last().unwrap();
    let amps = 0.2;
    let rep = coupling_report(&pdn, top, amps, &opts()).unwrap();
    let v = p.tsv_resistance + p.ubump_resistance;
    for (k, (_, drop)) in rep.iter().enumerate() {
        let hand = amps * (p.c4_resistance + k as f64 * v);
        assert!((drop - hand).abs() <= 1e-9 * hand, "rung {k}: {drop} vs {hand}");
    }
    assert!(rep.windows(2).all(|w| w[0].1 < w[1].1));
}

fn simple_path_min(adj: &[Vec<(usize, f64)>], supply: &[f64], node: usize) -> f64 {
    fn walk(u: usize, acc: f64, adj: &[Vec<(usize, f64)>], sup: &[f64], seen: &mut Vec<bool>, best: &mut f64) {
        if sup[u].is_finite() {
            *best = best.min(acc + sup[u]);
        }
        for &(v, r) in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                walk(v, acc + r, adj, sup, seen, best);
                seen[v] = false;
            }
        }
    }
    let mut seen = vec![false; adj.len()];
    seen[node] = true;
    let mut best = f64::INFINITY;
    walk(node, 0.0, adj, supply, &mut seen, &mut best);
    best
}

#[test]
fn drop_bounded_by_best_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..20 {
        let n = 6;
        let plane = PdnPlane {
            layer: 0,
            nx: n,
            ny: 1,
            extent: Rect::new(0.0, 0.0, n as f64, 1.0),
            offset: 0,
        };
        let mut rs = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if b == a + 1 || rng.gen_bool(0.3) {
                    rs.push(Resistor { a, b, ohms: rng.gen_range(0.01..1.0) });
                }
            }
        }
        let supplies = vec![(0, rng.gen_range(0.01..0.1)), (rng.gen_range(1..n), rng.gen_range(0.01..0.1))];
        let pdn = PdnGrid::new(1.0, vec![plane], rs.clone(), supplies.clone(), vec![1e-9; n], 1e-12).unwrap();
        let mut adj = vec![Vec::new(); n];
        for r in &rs {
            adj[r.a].push((r.b, r.ohms));
            adj[r.b].push((r.a, r.ohms));
        }
        let mut sup = vec![f64::INFINITY; n];
        for &(s, r) in &supplies {
            sup[s] = sup[s].min(r);
        }
        let cur: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let total: f64 = cur.iter().sum();
        let drop = solve_ir_drop(&pdn, &CurrentMap::new(&pdn, cur).unwrap(), &opts()).unwrap().drop;
        for i in 0..n {
            let best = simple_path_min(&adj, &sup, i);
            assert!((pdn.best_path_resistance(i) - best).abs() < 1e-12);
            assert!(drop[i] <= total * best * (1.0 + 1e-9));
        }
    }
}
