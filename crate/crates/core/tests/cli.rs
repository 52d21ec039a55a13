//! Command-line runs against files in a scratch directory.

use std::path::Path;
use std::process::{Command, Output};

use sgdf::pipeline::bundle::map_path;
use sgdf::pipeline::io::{read_float_map, KeyValues};
use sgdf::pipeline::Bundle;

fn sgdf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgdf"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = sgdf(args);
    assert!(
        out.status.success(),
        "sgdf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn meta(dir: &Path) -> KeyValues {
    KeyValues::read(&dir.join("metadata.txt")).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Uniform reference fixture at 128x128.
fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec![
        "synth",
        "-o",
        s(dir),
        "--width",
        "128",
        "--height",
        "128",
        "--period",
        "8",
        "--alpha",
        "0.2",
        "--transmission",
        "0.8",
        "--theta",
        "0.5235987755982988",
        "--sigma-x",
        "1",
        "--sigma-y",
        "3",
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn synth_retrieve_report_and_rerender() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fixture");
    let out = tmp.path().join("result");
    synth(&fx, &[]);
    assert_eq!(meta(&fx).get("status"), Some("complete"));
    let truth = read_float_map(&map_path(&fx, "truth_sigma_y")).unwrap();
    assert_eq!(truth.get(5, 5), 3.0);

    let stdout = ok(&[
        "retrieve",
        "--grid",
        s(&fx.join("grid.f32")),
        "--sample-grid",
        s(&fx.join("sample_grid.f32")),
        "--odd",
        "1.5",
        "--pixel-size",
        "12.3e-6",
        "-o",
        s(&out),
    ]);
    assert!(stdout.contains("(auto)"), "{stdout}");
    let m = meta(&out);
    assert_eq!(m.get("status"), Some("complete"));
    assert_eq!(m.get("period_source"), Some("auto"));
    assert_eq!(m.get("angle_units"), Some("rad^2"));
    let p: f64 = m.get("period").unwrap().parse().unwrap();
    assert!((p - 8.0).abs() < 0.02, "{p}");
    for name in [
        "transmission",
        "theta",
        "theta_major_sq",
        "theta_minor_sq",
        "rms_sq",
        "asy",
        "shift_x",
        "shift_y",
    ] {
        assert!(map_path(&out, name).exists(), "{name}");
    }
    assert!(out.join("valid.png").exists() && out.join("hsv.png").exists());

    // 3 px at 8.2 µrad per pixel
    let table = ok(&["roi-stats", "-o", s(&out), "--roi", "core:40,40,48,48"]);
    let mut lines = table.lines();
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    let row: Vec<&str> = lines.next().unwrap().split('\t').collect();
    let col = |name: &str| -> f64 {
        row[header.iter().position(|h| *h == name).unwrap()]
            .parse()
            .unwrap()
    };
    assert_eq!(row[0], "core");
    assert!((col("theta_major_urad_mean") - 24.6).abs() < 0.25);
    assert!((col("transmission_mean") - 0.8).abs() < 1e-3);
    assert!(out.join("roi_stats.tsv").exists());

    let stdout = ok(&["hsv", "-o", s(&out), "--max-rms", "1e-5"]);
    assert!(stdout.contains("max_rms=1e-5"), "{stdout}");
    assert_eq!(meta(&out).get("max_rms_source"), Some("user"));
}

#[test]
fn missing_geometry_falls_back_to_pixels() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fixture");
    let out = tmp.path().join("result");
    synth(&fx, &[]);
    ok(&[
        "retrieve",
        "--grid",
        s(&fx.join("grid.f32")),
        "--sample-grid",
        s(&fx.join("sample_grid.f32")),
        "--period",
        "8",
        "--kernel-size",
        "8",
        "-o",
        s(&out),
    ]);
    let m = meta(&out);
    assert_eq!(m.get("angle_units"), Some("px^2"));
    assert!(m.get("warnings").unwrap().contains("angle maps skipped"));
    assert!(!map_path(&out, "theta_major_sq").exists());
    let b = Bundle::read(&out).unwrap();
    assert!(b.geometry.is_none());
    let table = ok(&["roi-stats", "-o", s(&out), "--roi", "c:40,40,48,48"]);
    assert!(table
        .lines()
        .next()
        .unwrap()
        .contains("sigma_major_px_mean"));
}

#[test]
fn command_line_overrides_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fixture");
    let out = tmp.path().join("result");
    synth(&fx, &[]);
    let cfg = tmp.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "grid = {:?}\nsample_grid = [{:?}]\noutput = {:?}\nperiod = 8.0\nkernel_size = 9\nworkers = 2\n",
            s(&fx.join("grid.f32")),
            s(&fx.join("sample_grid.f32")),
            s(&out)
        ),
    )
    .unwrap();
    ok(&["retrieve", "--config", s(&cfg), "--kernel-size", "10"]);
    let m = meta(&out);
    assert_eq!(m.get("kernel_size"), Some("10"));
    assert_eq!(m.get("kernel_size_source"), Some("user"));
    assert_eq!(m.get("period"), Some("8"));
    assert_eq!(m.get("workers"), Some("2"));

    std::fs::write(&cfg, "bogus_key = 1\n").unwrap();
    let bad = sgdf(&["retrieve", "--config", s(&cfg)]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("bogus_key"));
}

#[test]
fn failed_run_leaves_incomplete_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fixture");
    let out = tmp.path().join("result");
    synth(&fx, &[]);
    let run = sgdf(&[
        "retrieve",
        "--grid",
        s(&fx.join("grid.f32")),
        "--sample-grid",
        s(&tmp.path().join("missing.f32")),
        "--period",
        "8",
        "--kernel-size",
        "8",
        "-o",
        s(&out),
    ]);
    assert!(!run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr)
        .lines()
        .any(|l| l.starts_with("error:")));
    assert_eq!(meta(&out).get("status"), Some("incomplete"));
    assert!(!sgdf(&["hsv", "-o", s(&out)]).status.success());
}

#[test]
fn frame_sequence_writes_one_bundle_per_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fixture");
    let out = tmp.path().join("result");
    synth(&fx, &[]);
    let frame = fx.join("sample_grid.f32");
    ok(&[
        "retrieve",
        "--grid",
        s(&fx.join("grid.f32")),
        "--sample-grid",
        s(&frame),
        s(&frame),
        "--period",
        "8",
        "--kernel-size",
        "8",
        "-o",
        s(&out),
    ]);
    assert_eq!(meta(&out).get("frames"), Some("2"));
    assert_eq!(meta(&out).get("status"), Some("complete"));
    let a = Bundle::read(&out.join("frame_0000")).unwrap();
    let b = Bundle::read(&out.join("frame_0001")).unwrap();
    let bits = |img: &sgdf::Image| img.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.sigma_major_sq), bits(&b.sigma_major_sq));
}

#[test]
fn beamline_period_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fixture");
    let out = tmp.path().join("result");
    ok(&[
        "synth",
        "-o",
        s(&fx),
        "--width",
        "256",
        "--height",
        "256",
        "--period",
        "12.48",
        "--transmission",
        "0.9",
        "--sigma-x",
        "1",
        "--sigma-y",
        "1",
    ]);
    let stdout = ok(&["period", "--grid", s(&fx.join("grid.f32"))]);
    assert!(stdout.starts_with("period="), "{stdout}");
    ok(&[
        "retrieve",
        "--grid",
        s(&fx.join("grid.f32")),
        "--sample-grid",
        s(&fx.join("sample_grid.f32")),
        "--kernel-size",
        "13",
        "-o",
        s(&out),
    ]);
    let m = meta(&out);
    let p: f64 = m.get("period").unwrap().parse().unwrap();
    assert!((p - 12.48).abs() < 0.05, "{p}");
    assert!(m.get("warnings").unwrap().contains("non-integer period"));
}

#[test]
fn noisy_synthesis_is_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, &["--counts", "1000", "--seed", "7"]);
    synth(&b, &["--counts", "1000", "--seed", "7"]);
    let read = |d: &Path| read_float_map(&d.join("sample_grid.f32")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(meta(&a).get("noise"), Some("poisson:1000"));
}
