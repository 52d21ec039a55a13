//! Closed-form recovery of transmission, blur widths and direction from the
//! ratios of cross- to auto-correlation coefficients.
//!
//! Each harmonic of the cross-correlation is damped relative to the
//! auto-correlation by `T exp(-a -+ b cos 2θ)` (x / y terms) or
//! `T exp(-2a -+ 2b sin 2θ)` (diagonal terms). Taking logarithms gives four
//! equations linear in `(σx², σy²)`:
//!
//! ```text
//! A1 = (p²/π²)  ln(r1/T) = -(σx²+σy²) - (σx²-σy²) cos 2θ
//! A2 = (p²/π²)  ln(r2/T) = -(σx²+σy²) + (σx²-σy²) cos 2θ
//! A3 = (p²/2π²) ln(r3/T) = -(σx²+σy²) - (σx²-σy²) sin 2θ
//! A4 = (p²/2π²) ln(r4/T) = -(σx²+σy²) + (σx²-σy²) sin 2θ
//! ```
//!
//! The diagonal terms decay twice as fast, hence the extra factor ½ on A3
//! and A4. Widths are carried as signed squares: a negative square means the
//! grid visibility increased along that axis (an imaginary width).

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;

use crate::correlation::CoefficientMaps;
use crate::error::{Error, Result};
use crate::image::{Image, Mask};

/// Relative threshold below which both direction differences count as zero.
pub const ISOTROPY_THRESHOLD: f64 = 1e-3;

/// Absolute floor (px²) added to the isotropy scale.
const ISOTROPY_FLOOR: f64 = 1e-9;

/// The four log-ratio quantities, px² (signed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ARow(pub [f64; 4]);

/// Direction estimate; `isotropic` marks the 0/0 case where θ is meaningless.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaEstimate {
    pub theta: f64,
    pub isotropic: bool,
}

/// Canonical per-pixel dark-field parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DarkFieldSolution {
    pub transmission: f64,
    /// Dominant scattering direction in `[0, π]`.
    pub theta: f64,
    /// Semi-major signed square, px².
    pub sigma_major_sq: f64,
    /// Semi-minor signed square, px².
    pub sigma_minor_sq: f64,
    pub isotropic: bool,
}

/// Canonical ordering result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Canonical {
    pub sigma_major_sq: f64,
    pub sigma_minor_sq: f64,
    pub theta: f64,
}

pub fn solve_transmission(c_gg0: f64, c_gsg0: f64) -> Result<f64> {
    if !(c_gg0 > 0.0) || !c_gsg0.is_finite() {
        return Err(Error::InvalidPixel("non-positive auto-correlation mean"));
    }
    Ok(c_gsg0 / c_gg0)
}

/// Build the A row from the four harmonic ratios `c_{g*sg,n} / c_{g*g,n}`.
pub fn compute_a(ratios: [f64; 4], transmission: f64, period: f64) -> Result<ARow> {
    if !(transmission > 0.0) {
        return Err(Error::InvalidPixel("non-positive transmission"));
    }
    let scale = period * period / (PI * PI);
    let mut a = [0.0; 4];
    for (n, (&r, out)) in ratios.iter().zip(a.iter_mut()).enumerate() {
        let arg = r / transmission;
        if !(arg > 0.0) || !arg.is_finite() {
            return Err(Error::InvalidPixel("non-positive visibility ratio"));
        }
        let factor = if n < 2 { scale } else { 0.5 * scale };
        *out = factor * arg.ln();
    }
    Ok(ARow(a))
}

/// θ from `tan 2θ = (A4 - A3) / (A2 - A1)`, with `2θ` taken in `(-π/2, π/2]`.
pub fn solve_theta(a: &ARow) -> ThetaEstimate {
    let [a1, a2, a3, a4] = a.0;
    let num = a4 - a3;
    let den = a2 - a1;
    let scale = a.0.iter().map(|v| v.abs()).sum::<f64>() + ISOTROPY_FLOOR;
    if num.abs() < ISOTROPY_THRESHOLD * scale && den.abs() < ISOTROPY_THRESHOLD * scale {
        return ThetaEstimate {
            theta: 0.0,
            isotropic: true,
        };
    }
    // atan2 folded onto the principal branch of the plain arctangent.
    let mut two_theta = num.atan2(den);
    if two_theta > FRAC_PI_2 {
        two_theta -= PI;
    } else if two_theta <= -FRAC_PI_2 {
        two_theta += PI;
    }
    ThetaEstimate {
        theta: 0.5 * two_theta,
        isotropic: false,
    }
}

/// Least-squares `(σx², σy²)` of the overdetermined 4x2 system for a given θ.
pub fn solve_sigmas(a: &ARow, theta: f64) -> (f64, f64) {
    let [a1, a2, a3, a4] = a.0;
    let c = (2.0 * theta).cos();
    let s = (2.0 * theta).sin();
    let sx2 = (-a1 * (2.0 * c + 1.0) + a2 * (2.0 * c - 1.0) - a3 * (2.0 * s + 1.0)
        + a4 * (2.0 * s - 1.0))
        / 8.0;
    let sy2 = (a1 * (2.0 * c - 1.0) - a2 * (2.0 * c + 1.0) + a3 * (2.0 * s - 1.0)
        - a4 * (2.0 * s + 1.0))
        / 8.0;
    (sx2, sy2)
}

/// Order the signed squares so the major axis comes first and map θ into
/// `[0, π]`.
pub fn canonicalize(sigma_x_sq: f64, sigma_y_sq: f64, theta: f64) -> Canonical {
    let (major, minor, mut theta) = if sigma_y_sq < sigma_x_sq {
        (sigma_x_sq, sigma_y_sq, theta + FRAC_PI_2)
    } else {
        (sigma_y_sq, sigma_x_sq, theta)
    };
    while theta < 0.0 {
        theta += PI;
    }
    while theta > PI {
        theta -= PI;
    }
    Canonical {
        sigma_major_sq: major,
        sigma_minor_sq: minor,
        theta,
    }
}

/// Full per-pixel chain from auto and cross coefficients.
pub fn retrieve_pixel(auto: &[f64; 5], cross: &[f64; 5], period: f64) -> Result<DarkFieldSolution> {
    let t = solve_transmission(auto[0], cross[0])?;
    let mut ratios = [0.0; 4];
    for n in 0..4 {
        if !(auto[n + 1] > 0.0) {
            return Err(Error::InvalidPixel("vanishing auto-correlation harmonic"));
        }
        ratios[n] = cross[n + 1] / auto[n + 1];
    }
    let a = compute_a(ratios, t, period)?;
    let est = solve_theta(&a);
    let (sx2, sy2) = solve_sigmas(&a, est.theta);
    let canon = canonicalize(sx2, sy2, est.theta);
    Ok(DarkFieldSolution {
        transmission: t,
        theta: canon.theta,
        sigma_major_sq: canon.sigma_major_sq,
        sigma_minor_sq: canon.sigma_minor_sq,
        isotropic: est.isotropic,
    })
}

/// Per-pixel solutions as images; invalid pixels are NaN and `false` in
/// `valid`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionMaps {
    pub transmission: Image,
    pub theta: Image,
    pub sigma_major_sq: Image,
    pub sigma_minor_sq: Image,
    pub isotropic: Mask,
    pub valid: Mask,
}

impl SolutionMaps {
    pub fn shape(&self) -> (usize, usize) {
        self.valid.shape()
    }

    pub fn at(&self, col: usize, row: usize) -> Option<DarkFieldSolution> {
        self.valid.get(col, row).then(|| DarkFieldSolution {
            transmission: self.transmission.get(col, row),
            theta: self.theta.get(col, row),
            sigma_major_sq: self.sigma_major_sq.get(col, row),
            sigma_minor_sq: self.sigma_minor_sq.get(col, row),
            isotropic: self.isotropic.get(col, row),
        })
    }
}

/// Apply [`retrieve_pixel`] at every valid pixel of the coefficient maps.
pub fn retrieve_field(maps: &CoefficientMaps, period: f64) -> SolutionMaps {
    let (w, h) = maps.shape();
    let solved: Vec<Option<DarkFieldSolution>> = (0..w * h)
        .into_par_iter()
        .map(|idx| {
            let (c, r) = (idx % w, idx / w);
            let (auto, cross) = maps.at(c, r)?;
            retrieve_pixel(&auto, &cross, period).ok()
        })
        .collect();

    let nan = || Image::filled(w, h, f64::NAN);
    let mut out = SolutionMaps {
        transmission: nan(),
        theta: nan(),
        sigma_major_sq: nan(),
        sigma_minor_sq: nan(),
        isotropic: Mask::new(w, h, false),
        valid: Mask::new(w, h, false),
    };
    for (idx, sol) in solved.into_iter().enumerate() {
        let Some(s) = sol else { continue };
        let (c, r) = (idx % w, idx / w);
        out.transmission.set(c, r, s.transmission);
        out.theta.set(c, r, s.theta);
        out.sigma_major_sq.set(c, r, s.sigma_major_sq);
        out.sigma_minor_sq.set(c, r, s.sigma_minor_sq);
        out.isotropic.set(c, r, s.isotropic);
        out.valid.set(c, r, true);
    }
    out
}
