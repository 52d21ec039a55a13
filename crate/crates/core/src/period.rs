//! Grid period estimation from the Fourier magnitude of the grid-only image.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::image::Image;

/// Minimum ratio of the fundamental peak to the median spectral magnitude.
const MIN_PEAK_PROMINENCE: f64 = 10.0;

/// Lowest frequency bin considered, to stay clear of illumination trends.
const MIN_BIN: usize = 2;

/// Estimate the grid period (pixels) as the mean of the periods found along
/// the x and y axes of the spectrum.
pub fn estimate_grid_period(grid_only: &Image) -> Result<f64> {
    let (px, py) = estimate_axis_periods(grid_only)?;
    if (px - py).abs() > 0.1 * px.max(py) {
        return Err(Error::PeriodEstimation(format!(
            "axis periods disagree: x={px:.3}, y={py:.3}"
        )));
    }
    Ok(0.5 * (px + py))
}

/// Periods along the x and y axes separately.
pub fn estimate_axis_periods(grid_only: &Image) -> Result<(f64, f64)> {
    let (w, h) = grid_only.shape();
    if w < 8 || h < 8 {
        return Err(Error::PeriodEstimation(format!("image {w}x{h} too small")));
    }
    if grid_only.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::PeriodEstimation(
            "image contains non-finite pixels".into(),
        ));
    }
    // The ky = 0 (kx = 0) line of the 2-D spectrum is the spectrum of the
    // column (row) mean profile.
    let mut col_profile = vec![0.0; w];
    let mut row_profile = vec![0.0; h];
    for (r, row_mean) in row_profile.iter_mut().enumerate() {
        for (c, &v) in grid_only.row(r).iter().enumerate() {
            col_profile[c] += v / h as f64;
            *row_mean += v / w as f64;
        }
    }
    let px = profile_period(&col_profile).map_err(|e| axis_error("x", e))?;
    let py = profile_period(&row_profile).map_err(|e| axis_error("y", e))?;
    Ok((px, py))
}

fn axis_error(axis: &str, e: Error) -> Error {
    match e {
        Error::PeriodEstimation(m) => Error::PeriodEstimation(format!("{axis} axis: {m}")),
        other => other,
    }
}

fn profile_period(profile: &[f64]) -> Result<f64> {
    let n = profile.len();
    let mean = profile.iter().sum::<f64>() / n as f64;
    // Hann taper keeps leakage from biasing the sub-bin interpolation.
    let mut buf: Vec<Complex<f64>> = profile
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
            Complex::new((v - mean) * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    // Periods above 2 px only.
    let max_bin = (n - 1) / 2;
    if max_bin <= MIN_BIN + 1 {
        return Err(Error::PeriodEstimation("profile too short".into()));
    }
    let mag: Vec<f64> = buf[..=max_bin].iter().map(|c| c.norm()).collect();
    let (peak, &peak_mag) = mag
        .iter()
        .enumerate()
        .skip(MIN_BIN)
        .take(max_bin - MIN_BIN)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty band");

    let mut sorted: Vec<f64> = mag[MIN_BIN..].to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    if !(peak_mag > MIN_PEAK_PROMINENCE * median) {
        return Err(Error::PeriodEstimation(format!(
            "no significant spectral peak (peak/median = {:.2})",
            peak_mag / median
        )));
    }

    // Parabolic interpolation on log magnitude (exact for a Gaussian peak).
    let (l, c, r) = (
        mag[peak - 1].max(f64::MIN_POSITIVE).ln(),
        peak_mag.ln(),
        mag[peak + 1].max(f64::MIN_POSITIVE).ln(),
    );
    let denom = l - 2.0 * c + r;
    let delta = if denom.abs() > 0.0 {
        (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    Ok(n as f64 / (peak as f64 + delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{rasterize_grid, GridParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn integer_period() {
        let g = GridParams::new(8.0, 0.2).unwrap();
        let img = rasterize_grid(256, 256, &g, 1).unwrap();
        let p = estimate_grid_period(&img).unwrap();
        assert!((p - 8.0).abs() < 0.02, "p = {p}");
    }

    #[test]
    fn fractional_period() {
        let g = GridParams::new(12.48, 0.2).unwrap();
        let img = rasterize_grid(512, 512, &g, 1).unwrap();
        let p = estimate_grid_period(&img).unwrap();
        assert!((p - 12.48).abs() < 0.05, "p = {p}");
    }

    #[test]
    fn white_noise_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = (0..256 * 256).map(|_| rng.random::<f64>()).collect();
        let img = Image::from_vec(256, 256, data).unwrap();
        assert!(matches!(
            estimate_grid_period(&img),
            Err(Error::PeriodEstimation(_))
        ));
    }
}
