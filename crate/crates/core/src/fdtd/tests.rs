use super::*;
use crate::geometry::GridSpec;

fn vacuum_box(res: usize, nx: usize, ny: usize) -> SimulationConfig {
    SimulationConfig::pec_box(DielectricGrid::uniform(GridSpec::new_2d(res, nx, ny), 1.0))
}

fn blob_grid() -> DielectricGrid {
    let mut g = DielectricGrid::uniform(GridSpec::new_2d(10, 30, 24), 1.0);
    for i in 0..30 {
        for j in 0..24 {
            let (x, y) = (g.spec.center(0, i), g.spec.center(1, j));
            if (x - 0.3).hypot(y + 0.2) < 0.5 {
                g.permittivity[g.spec.index(i, j, 0)] = 6.0;
            }
        }
    }
    g
}

#[test]
fn zero_amplitude_source_leaves_zero_fields() {
    let mut cfg = vacuum_box(10, 20, 21);
    cfg.pml.layers = 4;
    cfg.boundaries = [[Boundary::Pml; 2]; 3];
    let n = cfg.center_node(Component::Ey);
    let mut s = SourceSpec::new(Component::Ey, n, Waveform::gaussian(0.4, 0.5));
    s.amplitude = 0.0;
    cfg.sources.push(s);
    cfg.monitors.push(MonitorSpec::probe("p", Component::Hz, [3, 3, 0]));
    cfg.monitors.push(MonitorSpec::Energy { every: 7 });
    cfg.total_steps = 300;
    let out = run(&cfg).unwrap();
    assert!(out.probes[0].values.iter().all(|v| *v == 0.0));
    assert!(out.energy.unwrap().energy.iter().all(|v| *v == 0.0));
    assert_eq!(out.stats.max_field, 0.0);
}

#[test]
fn closed_box_conserves_energy() {
    let mut cfg = SimulationConfig::pec_box(blob_grid());
    let src = SourceSpec::new(Component::Ey, [11, 9, 0], Waveform::gaussian(0.5, 0.8));
    let off = src.last_step(cfg.dt()).unwrap();
    cfg.sources.push(src);
    cfg.monitors.push(MonitorSpec::Energy { every: 50 });
    cfg.total_steps = off + 10_000;
    let out = run(&cfg).unwrap();
    let trace = out.energy.unwrap().after(off as f64 * cfg.dt() + 1e-9);
    let u0 = trace.energy[0];
    let drift = trace.energy.iter().map(|u| (u - u0).abs() / u0).fold(0.0, f64::max);
    assert!(u0 > 0.0);
    assert!(drift < 1e-10, "drift {drift:e}");
}

#[test]
fn pml_drains_energy() {
    let mut cfg = SimulationConfig::new(blob_grid());
    cfg.pml.layers = 6;
    let src = SourceSpec::new(Component::Ex, [12, 12, 0], Waveform::gaussian(0.5, 0.8));
    cfg.sources.push(src);
    cfg.monitors.push(MonitorSpec::Energy { every: 20 });
    cfg.total_steps = 3000;
    let e = run(&cfg).unwrap().energy.unwrap().energy;
    let peak = e.iter().cloned().fold(0.0, f64::max);
    assert!(*e.last().unwrap() < 1e-4 * peak);
}

#[test]
fn reciprocity() {
    let series = |from: [usize; 3], to: [usize; 3]| {
        let mut cfg = SimulationConfig::pec_box(blob_grid());
        cfg.sources
            .push(SourceSpec::new(Component::Ey, from, Waveform::gaussian(0.45, 0.6)));
        cfg.monitors.push(MonitorSpec::probe("p", Component::Ey, to));
        cfg.total_steps = 2000;
        run(&cfg).unwrap().probes.remove(0).values
    };
    let (a, b) = ([8, 6, 0], [21, 17, 0]);
    let ab = series(a, b);
    let ba = series(b, a);
    let scale = ab.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = ab.iter().zip(&ba).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    assert!(scale > 0.0);
    assert!(diff <= 1e-10 * scale, "{diff:e} vs {scale:e}");
}

#[test]
fn bit_identical_across_thread_counts() {
    let go = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut cfg = SimulationConfig::new(blob_grid());
            cfg.pml.layers = 5;
            cfg.sources
                .push(SourceSpec::new(Component::Ey, [14, 11, 0], Waveform::gaussian(0.4, 0.5)));
            cfg.monitors.push(MonitorSpec::probe("p", Component::Hz, [9, 14, 0]));
            cfg.monitors.push(MonitorSpec::Energy { every: 13 });
            cfg.total_steps = 700;
            let out = run(&cfg).unwrap();
            (out.probes[0].values.clone(), out.energy.unwrap().energy)
        })
    };
    let one = go(1);
    let three = go(3);
    assert_eq!(
        one.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        three.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(one.1, three.1);
}

#[test]
fn overdriven_courant_is_caught() {
    let mut cfg = vacuum_box(10, 20, 21);
    cfg.courant_factor = 0.9;
    assert!(cfg.validate().is_err());
    cfg.sources
        .push(SourceSpec::new(Component::Ey, [10, 10, 0], Waveform::gaussian(0.4, 0.5)));
    cfg.total_steps = 5000;
    cfg.check_interval = 10;
    match execute(&cfg) {
        Err(Error::Unstable { magnitude, limit, .. }) => assert!(!(magnitude <= limit)),
        other => panic!("expected instability, got {:?}", other.map(|r| r.stats)),
    }
}

#[test]
fn rejects_source_inside_pml() {
    let mut cfg = vacuum_box(10, 30, 31);
    cfg.boundaries = [[Boundary::Pml; 2]; 3];
    cfg.pml.layers = 8;
    cfg.sources
        .push(SourceSpec::new(Component::Ey, [3, 15, 0], Waveform::gaussian(0.4, 0.5)));
    assert!(run(&cfg).is_err());
    cfg.sources[0].position = [8, 15, 0];
    assert!(cfg.validate().is_ok());
}

#[test]
fn rejects_te_incompatible_monitors() {
    let mut cfg = vacuum_box(10, 10, 11);
    cfg.monitors.push(MonitorSpec::probe("p", Component::Ez, [1, 1, 0]));
    assert!(cfg.validate().is_err());
}

#[test]
fn center_node_is_origin() {
    let cfg = vacuum_box(16, 40, 31);
    let n = cfg.center_node(Component::Ey);
    assert_eq!(n, [20, 15, 0]);
    assert_eq!(cfg.node_position(Component::Ey, n), [0.0, 0.0, 0.0]);
}

#[test]
fn snapshot_and_dft_monitors() {
    let mut cfg = vacuum_box(10, 20, 21);
    let n = cfg.center_node(Component::Ey);
    cfg.sources.push(SourceSpec::new(
        Component::Ey,
        n,
        Waveform::ContinuousWave {
            frequency: 0.4,
            ramp_periods: 2.0,
        },
    ));
    let region = Region {
        lo: [5, 5, 0],
        hi: [15, 16, 1],
    };
    cfg.monitors.push(MonitorSpec::Snapshot {
        name: "s".into(),
        components: vec![Component::Ey, Component::Hz],
        region: Some(region),
        every: 100,
        start_step: 0,
    });
    cfg.monitors.push(MonitorSpec::Dft {
        name: "d".into(),
        components: vec![Component::Ey],
        region: None,
        frequency: 0.4,
        start_step: 0,
    });
    cfg.total_steps = 300;
    let out = run(&cfg).unwrap();
    assert_eq!(out.snapshots.len(), 6);
    assert_eq!(out.snapshots[0].values.len(), 10 * 11);
    assert_eq!(out.snapshots[1].component, Component::Hz);
    let d = out.dft_field("d", Component::Ey).unwrap();
    assert_eq!(d.re.len(), 20 * 21);
    assert!(d.intensity().iter().any(|v| *v > 0.0));
}

#[test]
fn pec_mirror_reflects_everything() {
    let r = pml_reflection_test(0, 3, 1e-6).unwrap();
    assert!((r - 1.0).abs() < 0.05, "{r}");
}

#[test]
fn pml_reflection_small_and_decreasing() {
    let r5 = pml_reflection_test(5, 3, 1e-6).unwrap();
    let r10 = pml_reflection_test(10, 3, 1e-6).unwrap();
    assert!(r10 < r5, "{r10:e} !< {r5:e}");
    assert!(r10 < 1e-4, "{r10:e}");
}

#[test]
fn small_3d_box_conserves_energy() {
    let grid = DielectricGrid::uniform(GridSpec::new_3d(8, 10, 9, 8), 2.0);
    let mut cfg = SimulationConfig::pec_box(grid);
    cfg.courant_factor = 0.5;
    let src = SourceSpec::new(Component::Ez, [4, 5, 3], Waveform::gaussian(0.6, 0.8));
    let off = src.last_step(cfg.dt()).unwrap();
    cfg.sources.push(src);
    cfg.monitors.push(MonitorSpec::Energy { every: 25 });
    cfg.total_steps = off + 2000;
    let trace = run(&cfg).unwrap().energy.unwrap().after(off as f64 * cfg.dt() + 1e-9);
    let u0 = trace.energy[0];
    assert!(u0 > 0.0);
    assert!(trace.energy.iter().all(|u| ((u - u0) / u0).abs() < 1e-10));
}

#[test]
fn pml_3d_absorbs() {
    let grid = DielectricGrid::uniform(GridSpec::new_3d(8, 24, 24, 24), 1.0);
    let mut cfg = SimulationConfig::new(grid);
    cfg.pml.layers = 6;
    let n = cfg.center_node(Component::Ez);
    cfg.sources.push(SourceSpec::new(Component::Ez, n, Waveform::gaussian(0.5, 0.8)));
    cfg.monitors.push(MonitorSpec::Energy { every: 20 });
    cfg.total_steps = 800;
    let e = run(&cfg).unwrap().energy.unwrap().energy;
    let peak = e.iter().cloned().fold(0.0, f64::max);
    assert!(*e.last().unwrap() < 1e-3 * peak, "{:e}", e.last().unwrap() / peak);
}
