use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn phc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phc"))
        .args(args)
        .env_remove("PHC_WORKERS")
        .output()
        .expect("binary runs")
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn read_toml(path: &Path) -> toml::Table {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    text.parse().unwrap()
}

fn num(v: &toml::Value) -> f64 {
    v.as_float().or_else(|| v.as_integer().map(|i| i as f64)).unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// A cheap variant of a bundled design: smaller crystal, for resolution-8 runs.
fn small_design(dir: &Path, name: &str) -> PathBuf {
    let text = std::fs::read_to_string(data(name)).unwrap().replace("[20, 13]", "[10, 7]");
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn quick_job(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("job.toml");
    std::fs::write(
        &path,
        format!("[simulation]\nresolution = 8\nringdown_time = 100.0\nplane_waves = 121\nband_points_per_segment = 6\n{extra}"),
    )
    .unwrap();
    path
}

#[test]
fn cqed_reproduces_headline_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");
    let out = phc(&[
        "--out",
        out_dir.to_str().unwrap(),
        "cqed",
        "--Q",
        "7134",
        "--V",
        "1.22",
        "--emitter",
        "divacancy-3c",
        "--emitter",
        "divacancy-4h",
    ]);
    ok(&out);
    let report = read_toml(&out_dir.join("cqed.toml"));
    let em = report["emitter"].as_array().unwrap();
    let c3 = em[0].as_table().unwrap();
    let h4 = em[1].as_table().unwrap();
    assert!((num(&c3["purcell"]) - 443.0).abs() / 443.0 < 0.01);
    assert!((num(&c3["indistinguishability"]) - 0.48).abs() < 0.01);
    assert!((num(&c3["beta"]) - 0.97).abs() < 0.005);
    assert!((num(&h4["indistinguishability"]) - 0.95).abs() < 0.01);
    assert!((num(&c3["threshold_q"]) - 11000.0).abs() / 11000.0 < 0.1);
    assert!((num(&c3["purcell_at_threshold"]) - 707.0).abs() / 707.0 < 0.05);
    assert_eq!(c3["regime"].as_str(), Some("weak"));
    assert!(out_dir.join("threshold.csv").exists());
    assert!(out_dir.join("manifest.toml").exists());
}

#[test]
fn cqed_flags_onset_of_strong_coupling() {
    let dir = tempfile::tempdir().unwrap();
    let out = phc(&[
        "--out",
        dir.path().to_str().unwrap(),
        "cqed",
        "--Q",
        "11000",
        "--V",
        "1.22",
        "--emitter",
        "divacancy-3c",
    ]);
    ok(&out);
    let report = read_toml(&dir.path().join("cqed.toml"));
    let e = report["emitter"].as_array().unwrap()[0].as_table().unwrap();
    assert_eq!(e["regime"].as_str(), Some("onset"));
}

#[test]
fn fit_fano_on_bundled_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let out = phc(&[
        "--out",
        dir.path().to_str().unwrap(),
        "fit-fano",
        "--in",
        &data("fano_synthetic.csv"),
    ]);
    ok(&out);
    let report = read_toml(&dir.path().join("fano.toml"));
    let q = num(&report["fit"]["q_factor"]);
    assert!((q - 7134.0).abs() / 7134.0 < 0.02, "{q}");
    assert!(dir.path().join("fano_curve.csv").exists());
}

#[test]
fn fit_fano_noise_is_reproducible_from_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str, seed: &str| {
        let o = dir.path().join(sub);
        ok(&phc(&[
            "--out",
            o.to_str().unwrap(),
            "--seed",
            seed,
            "fit-fano",
            "--in",
            &data("fano_synthetic.csv"),
            "--noise",
            "0.01",
        ]));
        std::fs::read(o.join("spectrum_noisy.csv")).unwrap()
    };
    let a = run("a", "5");
    assert_eq!(a, run("b", "5"));
    assert_ne!(a, run("c", "6"));
}

#[test]
fn missing_design_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = phc(&["--out", dir.path().to_str().unwrap(), "simulate", "--design", "does-not-exist.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[config]"));
    let err = read_toml(&dir.path().join("error.toml"));
    assert_eq!(err["class"].as_str(), Some("config"));

    let job = dir.path().join("job.toml");
    std::fs::write(&job, "design = \"gone.cfg\"").unwrap();
    let out = phc(&["--config", job.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "bands"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn no_band_gap_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let design = dir.path().join("thin.cfg");
    let text = std::fs::read_to_string(data("l3.cfg"))
        .unwrap()
        .replace("hole_radius_ratio = 0.29", "hole_radius_ratio = 0.1");
    std::fs::write(&design, text).unwrap();
    let out = phc(&[
        "--out",
        dir.path().to_str().unwrap(),
        "resonances",
        "--design",
        design.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn physical_units_need_a_lattice_constant() {
    let dir = tempfile::tempdir().unwrap();
    let design = dir.path().join("bare.cfg");
    let text = std::fs::read_to_string(data("l3.cfg"))
        .unwrap()
        .replace("lattice_constant_nm = 400.0\n", "");
    std::fs::write(&design, text).unwrap();
    let out = phc(&[
        "--out",
        dir.path().to_str().unwrap(),
        "--units",
        "physical",
        "bands",
        "--design",
        design.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = phc(&[
        "--out",
        dir.path().to_str().unwrap(),
        "--units",
        "physical",
        "bands",
        "--design",
        &data("l3sr3.cfg"),
    ]);
    ok(&out);
    let report = read_toml(&dir.path().join("bands.toml"));
    let span = report["gap_wavelength_nm"].as_array().unwrap();
    // a = 400 nm over the 0.3138 .. 0.3442 gap
    assert!((num(&span[0]) - 400.0 / 0.3442).abs() < 2.0);
    assert!((num(&span[1]) - 400.0 / 0.3138).abs() < 2.0);
}

#[test]
fn simulate_writes_artifacts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let design = small_design(dir.path(), "l3.cfg");
    let job = quick_job(dir.path(), "[analysis]\nmode_volume = true\n");
    let run = |sub: &str| {
        let o = dir.path().join(sub);
        ok(&phc(&[
            "--config",
            job.to_str().unwrap(),
            "--out",
            o.to_str().unwrap(),
            "simulate",
            "--design",
            design.to_str().unwrap(),
        ]));
        o
    };
    let a = run("a");
    let b = run("b");
    for f in [
        "probe_centre-ey.csv",
        "energy.csv",
        "permittivity.phcgrid",
        "resonances.csv",
        "mode_intensity.phcgrid",
    ] {
        assert!(a.join(f).exists(), "{f} missing");
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let manifest = read_toml(&a.join("manifest.toml"));
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(outputs
        .iter()
        .any(|o| o["path"].as_str() == Some("probe_centre-ey.csv") && o["sha256"].as_str().is_some_and(|h| h.len() == 64)));
    assert_eq!(manifest["seed"].as_integer(), Some(0));
    assert!(std::fs::read_dir(a.join("snapshots")).unwrap().count() >= 2);

    // the saved job and design reproduce the run
    let c = dir.path().join("c");
    ok(&phc(&[
        "--config",
        a.join("job.toml").to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
        "simulate",
    ]));
    assert_eq!(
        std::fs::read(a.join("probe_centre-ey.csv")).unwrap(),
        std::fs::read(c.join("probe_centre-ey.csv")).unwrap()
    );

    // adapters over the saved artifacts agree with the run
    let report = read_toml(&a.join("simulate.toml"));
    let f_sim = num(&report["resonances"].as_array().unwrap()[0]["frequency"]);
    let v_sim = num(&report["mode_volume"]["volume_normalized"]);
    let window = num(&report["window_start_time"]);
    let dt = num(&report["dt"]);
    let gap = &report["gap"];
    let band = format!("{},{}", num(&gap["lower"]), num(&gap["upper"]));
    let r = dir.path().join("r");
    let skip = ((window / dt).ceil() as usize).to_string();
    ok(&phc(&[
        "--out",
        r.to_str().unwrap(),
        "resonances",
        "--in",
        a.join("probe_centre-ey.csv").to_str().unwrap(),
        "--band",
        &band,
        "--skip",
        &skip,
    ]));
    let rr = read_toml(&r.join("resonances.toml"));
    let f_in = num(&rr["resonances"].as_array().unwrap()[0]["frequency"]);
    assert!((f_in - f_sim).abs() < 1e-6 * f_sim, "{f_in} vs {f_sim}");

    let m = dir.path().join("m");
    ok(&phc(&[
        "--out",
        m.to_str().unwrap(),
        "modevolume",
        "--intensity",
        a.join("mode_intensity.phcgrid").to_str().unwrap(),
        "--permittivity",
        a.join("permittivity.phcgrid").to_str().unwrap(),
        "--wavelength",
        &(1.0 / f_sim).to_string(),
    ]));
    let mv = read_toml(&m.join("modevolume.toml"));
    let v_in = num(&mv["mode_volume"]["volume_normalized"]);
    assert!((v_in - v_sim).abs() < 1e-9 * v_sim, "{v_in} vs {v_sim}");
}

#[test]
fn empty_sweep_is_an_empty_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = phc(&["--out", dir.path().to_str().unwrap(), "sweep"]);
    ok(&out);
    let table = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 1, "{table}");
}

#[test]
fn parallel_sweep_matches_serial() {
    let dir = tempfile::tempdir().unwrap();
    let designs: Vec<String> = ["l3.cfg", "l3s1.cfg", "l3sr1.cfg", "l3sr3.cfg"]
        .iter()
        .map(|n| small_design(dir.path(), n).to_string_lossy().into_owned())
        .collect();
    let job = quick_job(dir.path(), "mode_profile = false\n");
    let run = |sub: &str, workers: &str| {
        let o = dir.path().join(sub);
        ok(&phc(&[
            "--config",
            job.to_str().unwrap(),
            "--out",
            o.to_str().unwrap(),
            "--workers",
            workers,
            "sweep",
            "--designs",
            &designs.join(","),
        ]));
        std::fs::read_to_string(o.join("sweep.csv")).unwrap()
    };
    let serial = run("serial", "1");
    let parallel = run("parallel", "4");
    assert_eq!(serial, parallel);
    assert_eq!(serial.lines().count(), 5);
    let log = std::fs::read_to_string(dir.path().join("parallel/sweep.log")).unwrap();
    assert_eq!(log.lines().count(), 4);
}

#[test]
fn sweep_lx_range_and_env_workers() {
    let dir = tempfile::tempdir().unwrap();
    let job = quick_job(dir.path(), "mode_profile = false\n");
    let out = Command::new(env!("CARGO_BIN_EXE_phc"))
        .args([
            "--config",
            job.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
            "sweep",
            "--lx",
            "3..4",
            "--radius",
            "0.27,0.29",
        ])
        .env("PHC_WORKERS", "3")
        .output()
        .unwrap();
    ok(&out);
    let table = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert!(table.contains("l4@r0.27"));
    let manifest = read_toml(&dir.path().join("manifest.toml"));
    assert_eq!(manifest["workers"].as_integer(), Some(3));
}

#[test]
fn optimize_improves_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let design = small_design(dir.path(), "l3sr3.cfg");
    let job = quick_job(dir.path(), "mode_profile = false\n");
    let out_dir = dir.path().join("opt");
    let run = |budget: &str| {
        phc(&[
            "--config",
            job.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "optimize",
            "--design",
            design.to_str().unwrap(),
            "--budget",
            budget,
        ])
    };
    let first = run("10");
    assert!(
        matches!(first.status.code(), Some(0) | Some(4)),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    let report = read_toml(&out_dir.join("optimize.toml"));
    assert!(num(&report["best_value"]) >= num(&report["initial_value"]));
    let x0: Vec<f64> = report["initial_x"].as_array().unwrap().iter().map(num).collect();
    assert_eq!(x0, vec![0.3482, 0.2476, 0.0573, 0.098, 0.0882, 0.0927, 0.2553]);
    assert!(out_dir.join("best.cfg").exists());
    let trace = std::fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    let n1 = trace.lines().count() - 1;
    assert!(n1 > 0 && n1 <= 10, "{n1}");

    let second = run("14");
    assert!(matches!(second.status.code(), Some(0) | Some(4)));
    let report = read_toml(&out_dir.join("optimize.toml"));
    assert_eq!(report["resumed_from"].as_integer(), Some(n1 as i64));
    let trace2 = std::fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert!(trace2.starts_with(&trace));
}

#[test]
fn optimize_rejects_tiny_budget() {
    let dir = tempfile::tempdir().unwrap();
    let out = phc(&["--out", dir.path().to_str().unwrap(), "optimize", "--budget", "5"]);
    assert_eq!(out.status.code(), Some(2));
}
