//! Forward model: kernel invariants, grid bounds, and the numeric oracle.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_6, PI};

use proptest::prelude::*;
use sgdf::forward::{
    eval_df_kernel, eval_grid_image, eval_sample_grid_image, model_coordinates,
    numeric_convolution_oracle, rasterize_grid, synthesize_pair, DarkFieldKernelParams, GridParams,
    NoiseModel, SampleField,
};

/// Riemann sum of the kernel over a ±6σ square at `step` px spacing.
fn kernel_mass(k: &DarkFieldKernelParams, step: f64) -> f64 {
    let half = 6.0 * k.sigma_x.max(k.sigma_y);
    let n = (half / step).ceil() as i64;
    let mut sum = 0.0;
    for i in -n..=n {
        for j in -n..=n {
            sum += eval_df_kernel(k, i as f64 * step, j as f64 * step).unwrap();
        }
    }
    sum * step * step
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernel_is_normalized(theta in 0.0..PI, sx in 0.5..10.0f64, sy in 0.5..10.0f64) {
        let k = DarkFieldKernelParams::new(theta, sx, sy).unwrap();
        // sub-pixel steps keep the narrowest kernels resolved
        let step = 0.25f64.min(sx.min(sy) / 2.0);
        let mass = kernel_mass(&k, step);
        prop_assert!((0.999..=1.001).contains(&mass), "mass {mass}");
    }
}

proptest! {
    #[test]
    fn kernel_is_centrosymmetric(
        theta in -PI..PI, sx in 0.1..10.0f64, sy in 0.1..10.0f64,
        x in -20.0..20.0f64, y in -20.0..20.0f64,
    ) {
        let k = DarkFieldKernelParams::new(theta, sx, sy).unwrap();
        let a = eval_df_kernel(&k, x, y).unwrap();
        let b = eval_df_kernel(&k, -x, -y).unwrap();
        prop_assert!((a - b).abs() <= 1e-15 * a.abs().max(1e-300));
    }

    #[test]
    fn kernel_rotation_equivalences(
        theta in -PI..PI, sx in 0.1..10.0f64, sy in 0.1..10.0f64,
        x in -20.0..20.0f64, y in -20.0..20.0f64,
    ) {
        let k = DarkFieldKernelParams::new(theta, sx, sy).unwrap();
        let half_turn = DarkFieldKernelParams::new(theta + PI, sx, sy).unwrap();
        let swapped = DarkFieldKernelParams::new(theta + FRAC_PI_2, sy, sx).unwrap();
        let v = eval_df_kernel(&k, x, y).unwrap();
        // rounding in the exponent grows with the size of the terms that cancel in it
        let (a, b, c) = k.quadratic_coefficients();
        let scale = a.abs() * x * x + 2.0 * (b * x * y).abs() + c.abs() * y * y;
        let tol = 1e-13 + 64.0 * f64::EPSILON * scale;
        for other in [half_turn, swapped] {
            let w = eval_df_kernel(&other, x, y).unwrap();
            // subnormal results carry no relative precision
            let underflow = v.max(w) < f64::MIN_POSITIVE;
            prop_assert!(underflow || (v.ln() - w.ln()).abs() <= tol, "{v} vs {w}");
        }
    }

    #[test]
    fn grid_stays_within_bounds(
        p in 3.0..30.0f64, alpha in 0.0..=1.0f64, x in -100.0..100.0f64, y in -100.0..100.0f64,
    ) {
        let g = GridParams::new(p, alpha).unwrap();
        let v = eval_grid_image(&g, x, y);
        prop_assert!(v >= 1.0 - alpha - 1e-12 && v <= 1.0 + 1e-12, "{v}");
    }

    #[test]
    fn blurred_grid_stays_within_bounds(
        p in 3.0..30.0f64, alpha in 0.0..=1.0f64, theta in 0.0..PI,
        sx in 0.0..5.0f64, sy in 0.0..5.0f64, x in -50.0..50.0f64, y in -50.0..50.0f64,
    ) {
        // blurring a pattern bounded in [1 - α, 1] stays in that range
        let g = GridParams::new(p, alpha).unwrap();
        let k = DarkFieldKernelParams::new(theta, sx, sy).unwrap();
        let v = eval_sample_grid_image(&g, &k, 1.0, x, y);
        prop_assert!(v >= 1.0 - alpha - 1e-12 && v <= 1.0 + 1e-12, "{v}");
    }
}

#[test]
fn grid_extrema_at_hole_centers_and_crossings() {
    let g = GridParams::new(8.0, 0.2).unwrap();
    // holes are centered where both sines peak, lines cross where both dip
    assert!((eval_grid_image(&g, 2.0, 2.0) - 1.0).abs() < 1e-12);
    assert!((eval_grid_image(&g, -2.0, -2.0) - 0.8).abs() < 1e-12);
}

#[test]
fn hole_center_sits_at_image_center() {
    let (w, h, p) = (64, 48, 8.0);
    let g = GridParams::new(p, 0.2).unwrap();
    // the image center lies on the corner shared by the four middle pixels
    let (x, y) = model_coordinates(w as f64 / 2.0 - 0.5, h as f64 / 2.0 - 0.5, w, h, p);
    assert!((eval_grid_image(&g, x, y) - 1.0).abs() < 1e-12);
}

#[test]
fn uniform_field_preserves_mean_ratio() {
    let (w, h) = (96, 64);
    let g = GridParams::new(8.0, 0.2).unwrap();
    let k = DarkFieldKernelParams::new(FRAC_PI_6, 1.0, 3.0).unwrap();
    let field = SampleField::uniform(w, h, 0.8, k);
    let (ig, isg) = synthesize_pair(w, h, &g, &field, &NoiseModel::None, 0).unwrap();
    assert!((isg.mean() / ig.mean() - 0.8).abs() < 1e-6);
}

#[test]
fn identity_field_gives_identical_images() {
    let (w, h) = (40, 40);
    let g = GridParams::new(8.0, 0.2).unwrap();
    let field = SampleField::uniform(w, h, 1.0, DarkFieldKernelParams::delta());
    let (ig, isg) = synthesize_pair(w, h, &g, &field, &NoiseModel::None, 0).unwrap();
    assert_eq!(ig, isg);
}

#[test]
fn oracle_agrees_across_blur_regime() {
    // widths from 0.5 px up to a third of the period
    let (w, h, s, p) = (96, 96, 4, 8.0);
    let g = GridParams::new(p, 0.2).unwrap();
    let fine = rasterize_grid(w, h, &g, s).unwrap();
    for (theta, sx, sy) in [
        (0.3, 0.5, 0.5),
        (FRAC_PI_6, 1.0, 3.0),
        (2.0, 2.5, 0.7),
        (1.2, p / 3.0, 1.5),
    ] {
        let k = DarkFieldKernelParams::new(theta, sx, sy).unwrap();
        let oracle = numeric_convolution_oracle(&fine, &k, s).unwrap();
        let mut worst: f64 = 0.0;
        let mut compared = 0;
        for r in 0..h {
            for c in 0..w {
                let o = oracle.get(c, r);
                if o.is_nan() {
                    continue;
                }
                let (x, y) = model_coordinates(c as f64, r as f64, w, h, p);
                worst = worst.max((o - eval_sample_grid_image(&g, &k, 1.0, x, y)).abs());
                compared += 1;
            }
        }
        assert!(compared > 0);
        assert!(worst < 1e-3, "θ={theta} σ=({sx}, {sy}): {worst:.2e}");
    }
}

#[test]
fn sample_grid_has_lower_visibility() {
    let (w, h) = (64, 64);
    let g = GridParams::new(8.0, 0.2).unwrap();
    let k = DarkFieldKernelParams::new(FRAC_PI_6, 1.0, 3.0).unwrap();
    let field = SampleField::uniform(w, h, 0.8, k);
    let (ig, isg) = synthesize_pair(w, h, &g, &field, &NoiseModel::None, 0).unwrap();
    let visibility = |img: &sgdf::Image| {
        let (lo, hi) = img
            .data()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &v| {
                (l.min(v), u.max(v))
            });
        (hi - lo) / (hi + lo)
    };
    assert!(visibility(&isg) < 0.5 * visibility(&ig));
}
