//! Detector corrections applied before retrieval.

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

/// Default minimum fraction of pixels that must have `flat - dark > 0`.
pub const DEFAULT_MIN_VALID_FRACTION: f64 = 0.5;

/// Default near-zero threshold for sample-only division, relative to the
/// sample-only image mean.
pub const DEFAULT_DIVISION_THRESHOLD: f64 = 1e-3;

/// `(raw - dark) / (flat - dark)`; non-positive denominators give NaN and
/// an invalid mask entry.
pub fn flat_dark_correct(raw: &Image, flat: &Image, dark: &Image) -> Result<(Image, Mask)> {
    flat_dark_correct_with(raw, flat, dark, DEFAULT_MIN_VALID_FRACTION)
}

pub fn flat_dark_correct_with(
    raw: &Image,
    flat: &Image,
    dark: &Image,
    min_valid_fraction: f64,
) -> Result<(Image, Mask)> {
    raw.ensure_same_shape(flat)?;
    raw.ensure_same_shape(dark)?;
    let (w, h) = raw.shape();
    let mut out = Image::from_fn(w, h, |c, r| {
        let den = flat.get(c, r) - dark.get(c, r);
        if den > 0.0 {
            (raw.get(c, r) - dark.get(c, r)) / den
        } else {
            f64::NAN
        }
    });
    out.pixel_size = raw.pixel_size;
    let mask = Mask::finite(&out);
    let fraction = mask.count_valid() as f64 / (w * h).max(1) as f64;
    if fraction < min_valid_fraction {
        return Err(Error::InvalidParameter(format!(
            "flat - dark is positive on only {:.1}% of pixels",
            100.0 * fraction
        )));
    }
    Ok((out, mask))
}

/// Divide out the sample's own attenuation/phase texture. Pixels where the
/// sample-only value is below `threshold * mean(sample_only)` in magnitude are
/// invalid.
pub fn divide_sample_only(
    sample_grid: &Image,
    sample_only: &Image,
    threshold: f64,
) -> Result<(Image, Mask)> {
    sample_grid.ensure_same_shape(sample_only)?;
    let floor = threshold * sample_only.finite_mean().unwrap_or(0.0).abs();
    let mut out = sample_grid.zip_map(sample_only, |a, b| {
        if b.abs() > floor && b.is_finite() {
            a / b
        } else {
            f64::NAN
        }
    })?;
    out.pixel_size = sample_grid.pixel_size;
    let mask = Mask::finite(&out);
    Ok((out, mask))
}
