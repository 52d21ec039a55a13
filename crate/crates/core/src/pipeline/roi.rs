//! Region-of-interest statistics over a result bundle.
//!
//! Angles are reported with the signed display convention (`-sqrt(-x)` for
//! imaginary angles) in microradians, or in pixels when the bundle has no
//! geometry. Directions use the axial circular mean.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::{Image, Rect};
use crate::metrics::signed_root;
use crate::pipeline::bundle::Bundle;

pub const MICRORADIANS_PER_RADIAN: f64 = 1e6;

/// A named rectangle, written `name:x,y,width,height`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roi {
    pub name: String,
    pub rect: Rect,
}

impl FromStr for Roi {
    type Err = Error;

    fn from_str(s: &str) -> Result<Roi> {
        let bad = || Error::InvalidParameter(format!("ROI '{s}' is not name:x,y,width,height"));
        let (name, spec) = s.split_once(':').ok_or_else(bad)?;
        let nums: Vec<usize> = spec
            .split(',')
            .map(|t| t.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        let [x, y, w, h] = nums[..] else {
            return Err(bad());
        };
        if name.is_empty() || name.contains(char::is_whitespace) || w == 0 || h == 0 {
            return Err(bad());
        }
        Ok(Roi {
            name: name.to_string(),
            rect: Rect::new(x, y, w, h),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiStats {
    pub name: String,
    pub rect: Rect,
    pub valid_pixels: usize,
    /// `(column name, statistics)` in table order.
    pub columns: Vec<(String, MeanStd)>,
}

impl RoiStats {
    pub fn column(&self, name: &str) -> Option<MeanStd> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| *s)
    }
}

fn linear_stats(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    MeanStd {
        mean,
        std: var.sqrt(),
    }
}

/// Mean and spread of undirected angles (period π). The mean lies in
/// `[0, π)`; the spread is the circular standard deviation of the doubled
/// angles, halved.
pub fn axial_stats(angles: &[f64]) -> MeanStd {
    let n = angles.len() as f64;
    let (s, c) = angles.iter().fold((0.0, 0.0), |(s, c), &t| {
        (s + (2.0 * t).sin(), c + (2.0 * t).cos())
    });
    let (s, c) = (s / n, c / n);
    let mean = (0.5 * s.atan2(c)).rem_euclid(std::f64::consts::PI);
    let r = s.hypot(c).min(1.0);
    let std = if r > 0.0 {
        0.5 * (-2.0 * r.ln()).max(0.0).sqrt()
    } else {
        f64::INFINITY
    };
    MeanStd { mean, std }
}

fn collect(bundle: &Bundle, rect: &Rect, img: &Image, f: impl Fn(f64) -> f64) -> Vec<f64> {
    rect.pixels()
        .filter(|&(c, r)| bundle.valid.get(c, r))
        .map(|(c, r)| img.get(c, r))
        .filter(|v| v.is_finite())
        .map(f)
        .collect()
}

/// Statistics for each ROI. Fails on ROIs outside the image or without
/// valid pixels.
pub fn roi_stats(bundle: &Bundle, rois: &[Roi]) -> Result<Vec<RoiStats>> {
    let (w, h) = bundle.shape();
    rois.iter()
        .map(|roi| {
            if !roi.rect.fits_in(w, h) {
                return Err(Error::InvalidParameter(format!(
                    "ROI '{}' {:?} exceeds the {w}x{h} image",
                    roi.name, roi.rect
                )));
            }
            let valid_pixels = roi
                .rect
                .pixels()
                .filter(|&(c, r)| bundle.valid.get(c, r))
                .count();
            if valid_pixels == 0 {
                return Err(Error::EmptyRoi(roi.name.clone()));
            }
            let mut columns = Vec::new();
            let mut linear = |name: &str, img: &Image, f: &dyn Fn(f64) -> f64| {
                let v = collect(bundle, &roi.rect, img, f);
                if !v.is_empty() {
                    columns.push((name.to_string(), linear_stats(&v)));
                }
            };
            match (&bundle.theta_major_sq, &bundle.theta_minor_sq) {
                (Some(major), Some(minor)) => {
                    let urad = |v: f64| signed_root(v) * MICRORADIANS_PER_RADIAN;
                    linear("theta_major_urad", major, &urad);
                    linear("theta_minor_urad", minor, &urad);
                    linear("theta_rms_urad", &bundle.rms_sq, &urad);
                }
                _ => {
                    linear("sigma_major_px", &bundle.sigma_major_sq, &signed_root);
                    linear("sigma_minor_px", &bundle.sigma_minor_sq, &signed_root);
                    linear("sigma_rms_px", &bundle.rms_sq, &signed_root);
                }
            }
            linear("asy", &bundle.asy, &|v| v);
            linear("transmission", &bundle.transmission, &|v| v);
            let dirs = collect(bundle, &roi.rect, &bundle.theta, |v| v);
            if !dirs.is_empty() {
                columns.push(("direction_rad".to_string(), axial_stats(&dirs)));
            }
            Ok(RoiStats {
                name: roi.name.clone(),
                rect: roi.rect,
                valid_pixels,
                columns,
            })
        })
        .collect()
}

/// Tab-separated table: one header line, one row per ROI with
/// `<column>_mean` and `<column>_std` fields.
pub fn format_roi_table(stats: &[RoiStats]) -> String {
    let mut out = String::new();
    let Some(first) = stats.first() else {
        return out;
    };
    out.push_str("roi\tx\ty\twidth\theight\tvalid_pixels");
    for (name, _) in &first.columns {
        let _ = write!(out, "\t{name}_mean\t{name}_std");
    }
    out.push('\n');
    for s in stats {
        let r = s.rect;
        let _ = write!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            s.name, r.x, r.y, r.width, r.height, s.valid_pixels
        );
        for (name, _) in &first.columns {
            match s.column(name) {
                Some(m) => {
                    let _ = write!(out, "\t{:.6e}\t{:.6e}", m.mean, m.std);
                }
                None => out.push_str("\tnan\tnan"),
            }
        }
        out.push('\n');
    }
    out
}
