//! Scattering-angle maps, strength/asymmetry metrics, HSV composition and
//! differential phase-shift maps.
//!
//! Angles are kept as signed squares throughout. A negative square stands
//! for an imaginary angle (visibility increase); only the display path turns
//! those into zeros.

use std::f64::consts::{FRAC_PI_2, PI};

use image::{Rgb, RgbImage};

use crate::correlation::{wrap_phase, CoefficientMaps};
use crate::error::{Error, Result};
use crate::forward::{sigma_sq_to_angle_sq, Geometry};
use crate::image::{Image, Mask};
use crate::retrieval::SolutionMaps;

/// Semi-major / semi-minor cone half-angles as signed squares (rad²).
#[derive(Debug, Clone, PartialEq)]
pub struct AngleMaps {
    pub theta_major_sq: Image,
    pub theta_minor_sq: Image,
    /// Dominant direction, radians in `[0, π]`.
    pub theta: Image,
    pub valid: Mask,
}

/// Strength (`rms_sq`, signed square) and asymmetry (`asy`, `[0, 1]`).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricMaps {
    pub rms_sq: Image,
    pub asy: Image,
}

pub fn angles_from_solution(solution: &SolutionMaps, geometry: &Geometry) -> AngleMaps {
    let conv = |s: f64| sigma_sq_to_angle_sq(s, geometry);
    AngleMaps {
        theta_major_sq: solution.sigma_major_sq.map(conv),
        theta_minor_sq: solution.sigma_minor_sq.map(conv),
        theta: solution.theta.clone(),
        valid: solution.valid.clone(),
    }
}

/// Pixel-unit stand-in used when no geometry is known: the "angles" are the
/// blur widths themselves (px²).
pub fn pixel_units_from_solution(solution: &SolutionMaps) -> AngleMaps {
    AngleMaps {
        theta_major_sq: solution.sigma_major_sq.clone(),
        theta_minor_sq: solution.sigma_minor_sq.clone(),
        theta: solution.theta.clone(),
        valid: solution.valid.clone(),
    }
}

/// Mean-square scattering angle, as a signed square.
#[inline]
pub fn theta_rms_sq(theta_major_sq: f64, theta_minor_sq: f64) -> f64 {
    0.5 * (theta_major_sq + theta_minor_sq)
}

/// Displayed magnitude of a signed square: its root when real, zero otherwise.
#[inline]
pub fn displayed_angle(signed_sq: f64) -> f64 {
    if signed_sq > 0.0 {
        signed_sq.sqrt()
    } else {
        0.0
    }
}

/// Signed display convention for tables and plots: `+sqrt(x)` for real
/// angles, `-sqrt(-x)` for imaginary ones.
#[inline]
pub fn signed_root(signed_sq: f64) -> f64 {
    signed_sq.signum() * signed_sq.abs().sqrt()
}

/// Asymmetry branch for `1/9 <= (Θm/ΘM)² <= 1`.
#[inline]
pub fn asy_ratio_branch(ratio_sq: f64) -> f64 {
    1.0 - ratio_sq.sqrt()
}

/// Asymmetry branch for `-1 <= (Θm/ΘM)² < 1/9`.
#[inline]
pub fn asy_difference_branch(theta_major_sq: f64, theta_minor_sq: f64) -> f64 {
    ((theta_major_sq - theta_minor_sq) / (2.0 * theta_major_sq)).sqrt()
}

/// Asymmetry of the scattering ellipse in `[0, 1]`. Zero whenever the major
/// angle is not real. Below `(Θm/ΘM)² = -1` the value drops to zero.
pub fn theta_asy(theta_major_sq: f64, theta_minor_sq: f64) -> f64 {
    if !(theta_major_sq > 0.0) || !theta_minor_sq.is_finite() {
        return 0.0;
    }
    let r2 = theta_minor_sq / theta_major_sq;
    if (1.0 / 9.0..=1.0).contains(&r2) {
        asy_ratio_branch(r2)
    } else if (-1.0..1.0 / 9.0).contains(&r2) {
        asy_difference_branch(theta_major_sq, theta_minor_sq)
    } else {
        0.0
    }
}

pub fn compute_metrics(angles: &AngleMaps) -> MetricMaps {
    let rms_sq = angles
        .theta_major_sq
        .zip_map(&angles.theta_minor_sq, theta_rms_sq)
        .expect("angle maps share a shape");
    let mut asy = angles
        .theta_major_sq
        .zip_map(&angles.theta_minor_sq, theta_asy)
        .expect("angle maps share a shape");
    angles.valid.apply_nan(&mut asy);
    MetricMaps { rms_sq, asy }
}

/// Hue in degrees for a direction: red at 0 and π, blue at π/2, with the
/// two half-turns spread linearly over red→blue and blue→red.
pub fn direction_hue(theta: f64) -> f64 {
    let t = theta.rem_euclid(PI);
    if t <= FRAC_PI_2 {
        240.0 * t / FRAC_PI_2
    } else {
        240.0 + 120.0 * (t - FRAC_PI_2) / FRAC_PI_2
    }
}

/// Standard HSV to 8-bit RGB; `h` in degrees, `s` and `v` in `[0, 1]`.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |u: f64| ((u + m).clamp(0.0, 1.0) * 255.0).round() as u8;
    [q(r), q(g), q(b)]
}

/// Compose direction (hue), asymmetry (saturation) and strength (value).
/// Returns the image and the `max_rms` used to scale the value channel.
pub fn compose_hsv(
    theta: &Image,
    asy: &Image,
    rms_sq: &Image,
    valid: &Mask,
    max_rms: Option<f64>,
) -> Result<(RgbImage, f64)> {
    theta.ensure_same_shape(asy)?;
    theta.ensure_same_shape(rms_sq)?;
    if valid.shape() != theta.shape() {
        return Err(Error::DimensionMismatch {
            expected: theta.shape(),
            actual: valid.shape(),
        });
    }
    let max_rms = match max_rms {
        Some(m) if !(m > 0.0 && m.is_finite()) => {
            return Err(Error::InvalidParameter(format!(
                "max_rms must be positive, got {m}"
            )))
        }
        Some(m) => m,
        None => {
            let m = rms_sq
                .data()
                .iter()
                .zip(valid.data())
                .filter(|(_, &ok)| ok)
                .map(|(&v, _)| displayed_angle(v))
                .fold(0.0, f64::max);
            if m > 0.0 {
                m
            } else {
                1.0
            }
        }
    };
    let (w, h) = theta.shape();
    let mut out = RgbImage::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            if !valid.get(c, r) {
                continue;
            }
            let value = (displayed_angle(rms_sq.get(c, r)) / max_rms).clamp(0.0, 1.0);
            let sat = asy.get(c, r);
            let sat = if sat.is_finite() {
                sat.clamp(0.0, 1.0)
            } else {
                0.0
            };
            let rgb = hsv_to_rgb(direction_hue(theta.get(c, r)), sat, value);
            out.put_pixel(c as u32, r as u32, Rgb(rgb));
        }
    }
    Ok((out, max_rms))
}

/// Grid-pattern displacement (pixels) from the cross- minus auto-correlation
/// phases. Shifts are only known modulo one period.
pub fn phase_shift_maps(maps: &CoefficientMaps, period: f64) -> (Image, Image) {
    let to_px = period / (2.0 * PI);
    let diff = |cross: &Image, auto: &Image| {
        let mut d = cross
            .zip_map(auto, |c, a| wrap_phase(c - a) * to_px)
            .expect("coefficient maps share a shape");
        maps.valid.apply_nan(&mut d);
        d
    };
    (
        diff(&maps.cross_phi_i, &maps.auto_phi_i),
        diff(&maps.cross_phi_j, &maps.auto_phi_j),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn solution(major: f64, minor: f64) -> SolutionMaps {
        SolutionMaps {
            transmission: Image::filled(1, 1, 1.0),
            theta: Image::filled(1, 1, 0.3),
            sigma_major_sq: Image::filled(1, 1, major),
            sigma_minor_sq: Image::filled(1, 1, minor),
            isotropic: Mask::new(1, 1, false),
            valid: Mask::new(1, 1, true),
        }
    }

    #[test]
    fn angles_for_lab_geometry() {
        let g = Geometry::new(1.5, 12.3e-6).unwrap();
        let a = angles_from_solution(&solution(9.0, -4.0), &g);
        let major = a.theta_major_sq.get(0, 0);
        assert_relative_eq!(major.sqrt(), 24.6e-6, max_relative = 1e-12);
        assert_relative_eq!(major, 605.16e-12, max_relative = 1e-12);
        let minor = a.theta_minor_sq.get(0, 0);
        assert!(minor < 0.0);
        assert_relative_eq!((-minor).sqrt(), 2.0 * 12.3e-6 / 1.5, max_relative = 1e-12);
        let zero = angles_from_solution(&solution(0.0, 0.0), &g);
        assert_eq!(zero.theta_major_sq.get(0, 0), 0.0);
    }

    #[test]
    fn rms_examples() {
        assert_relative_eq!(displayed_angle(theta_rms_sq(4.0, 4.0)), 2.0);
        assert_relative_eq!(
            displayed_angle(theta_rms_sq(605.16, 67.24)),
            18.335_757_415_498_2,
            max_relative = 1e-12
        );
        let rms = theta_rms_sq(4.0, -16.0);
        assert_eq!(rms, -6.0);
        assert_eq!(displayed_angle(rms), 0.0);
        assert_eq!(signed_root(-4.0), -2.0);
    }

    #[test]
    fn asymmetry_examples() {
        assert_eq!(theta_asy(5.0, 5.0), 0.0);
        assert_relative_eq!(theta_asy(9.0, 1.0), 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(asy_ratio_branch(1.0 / 9.0), 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(asy_difference_branch(9.0, 1.0), 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(theta_asy(4.0, -4.0), 1.0, epsilon = 1e-15);
        // below -1 the asymmetry is not considered
        assert_eq!(theta_asy(4.0, -4.5), 0.0);
        assert_eq!(theta_asy(-1.0, -2.0), 0.0);
        assert_eq!(theta_asy(0.0, 0.0), 0.0);
    }

    #[test]
    fn hue_anchors() {
        assert_eq!(hsv_to_rgb(direction_hue(FRAC_PI_2), 1.0, 1.0), [0, 0, 255]);
        assert_eq!(hsv_to_rgb(direction_hue(0.0), 1.0, 1.0), [255, 0, 0]);
        assert_eq!(
            hsv_to_rgb(direction_hue(0.0), 1.0, 1.0),
            hsv_to_rgb(direction_hue(PI), 1.0, 1.0)
        );
        assert_eq!(hsv_to_rgb(direction_hue(1.2), 0.0, 1.0), [255, 255, 255]);
    }

    #[test]
    fn hsv_black_when_no_real_strength() {
        let theta = Image::filled(4, 4, 1.0);
        let asy = Image::filled(4, 4, 0.5);
        let rms = Image::filled(4, 4, -3.0);
        let valid = Mask::new(4, 4, true);
        let (img, _) = compose_hsv(&theta, &asy, &rms, &valid, None).unwrap();
        assert!(img.pixels().all(|p| p.0 == [0, 0, 0]));
        assert!(compose_hsv(&theta, &asy, &rms, &valid, Some(0.0)).is_err());
    }

    #[test]
    fn hsv_scales_to_max() {
        let theta = Image::from_vec(2, 1, vec![FRAC_PI_2, 0.4]).unwrap();
        let asy = Image::from_vec(2, 1, vec![1.0, 0.0]).unwrap();
        let rms = Image::from_vec(2, 1, vec![16.0, 4.0]).unwrap();
        let valid = Mask::new(2, 1, true);
        let (img, max) = compose_hsv(&theta, &asy, &rms, &valid, None).unwrap();
        assert_eq!(max, 4.0);
        assert_eq!(img.get_pixel(0, 0).0, [0, 0, 255]);
        assert_eq!(img.get_pixel(1, 0).0, [128, 128, 128]);
        let (img, _) = compose_hsv(&theta, &asy, &rms, &valid, Some(2.0)).unwrap();
        assert_eq!(img.get_pixel(1, 0).0, [255, 255, 255]);
    }

    proptest! {
        #[test]
        fn asymmetry_in_unit_interval(major in -1e3..1e3f64, minor in -1e3..1e3f64) {
            let v = theta_asy(major, minor);
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn rms_monotone(a in -10.0..10.0f64, b in -10.0..10.0f64, d in 0.0..10.0f64) {
            prop_assert!(theta_rms_sq(a + d, b) >= theta_rms_sq(a, b));
            prop_assert!(theta_rms_sq(a, b + d) >= theta_rms_sq(a, b));
        }

        #[test]
        fn hue_is_pi_periodic(t in 0.0..PI) {
            let a = hsv_to_rgb(direction_hue(t), 0.8, 0.9);
            let b = hsv_to_rgb(direction_hue(t + PI), 0.8, 0.9);
            prop_assert_eq!(a, b);
        }
    }
}
